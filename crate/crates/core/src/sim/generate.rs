//! Dialogue generation: greedy agenda over symptoms and attributes, template
//! pairing under the boosted type distribution, and exhaustive annotation.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;

use crate::bank::{
    AnswerForm, FragmentKind, Instantiated, Polarity, Purpose, Slot, SlotKey, Template,
    TemplateBank, TemplateRole,
};
use crate::corpus::{
    flatten, Answer, AttributeKind, Dialogue, Gender, Query, Sample, SpeakerRole, SymptomId, Turn,
    UtteranceType,
};
use crate::rng::{stream, stream_rng, ChaCha8Rng};
use crate::text::tokenize;
use crate::{Error, Result};

use super::stats::GenStats;
use super::{GenConfig, TypeDistribution};

/// One asserted or traced fact. Value facts carry the turn-local token range
/// of the asserting expression; annotation converts these to flattened
/// coordinates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fact {
    pub symptom: SymptomId,
    pub kind: FactKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FactKind {
    Presence(bool),
    Value {
        attribute: AttributeKind,
        turn: usize,
        start: usize,
        end: usize,
        expression: String,
    },
}

/// Generation trace: every asserted fact in utterance order, plus the
/// template ids composing each turn.
#[derive(Debug, Clone, Default)]
pub struct Trace {
    pub facts: Vec<Fact>,
    pub turn_templates: Vec<Vec<String>>,
}

#[derive(Debug, Clone)]
pub struct DialogueOutput {
    pub dialogue: Dialogue,
    pub trace: Trace,
}

/// Symptom bookkeeping during generation. `unresolved` symptoms have not had
/// presence established; `open` ones are present with attributes pending;
/// `completed` are denied or exhausted.
#[derive(Debug, Clone, Default)]
pub struct DialogueState {
    pub unresolved: Vec<SymptomId>,
    pub open: VecDeque<SymptomId>,
    pub completed: Vec<SymptomId>,
    pub active: Option<SymptomId>,
    todo_attrs: BTreeMap<SymptomId, Vec<AttributeKind>>,
    presence: BTreeMap<SymptomId, bool>,
    values: BTreeMap<(SymptomId, AttributeKind), String>,
    last_value_echo: Option<String>,
    recent_mention: Option<String>,
}

impl DialogueState {
    fn new(inventory: &[SymptomId]) -> Self {
        DialogueState {
            unresolved: inventory.to_vec(),
            ..Default::default()
        }
    }

    fn is_done(&self) -> bool {
        self.unresolved.is_empty() && self.open.is_empty() && self.active.is_none()
    }

    fn known(&self, s: &SymptomId) -> Option<bool> {
        self.presence.get(s).copied()
    }

    /// Establishes presence. Present symptoms enter the open queue with the
    /// given attribute agenda; `front` queues them for immediate discussion.
    fn resolve(&mut self, s: &SymptomId, present: bool, attrs: Vec<AttributeKind>, front: bool) {
        self.unresolved.retain(|x| x != s);
        self.presence.insert(s.clone(), present);
        if present && !attrs.is_empty() {
            self.todo_attrs.insert(s.clone(), attrs);
            if front {
                self.open.push_front(s.clone());
            } else {
                self.open.push_back(s.clone());
            }
        } else if !self.completed.contains(s) {
            self.completed.push(s.clone());
        }
    }

    fn mark_attr_done(&mut self, s: &SymptomId, a: AttributeKind) {
        if let Some(todo) = self.todo_attrs.get_mut(s) {
            todo.retain(|x| *x != a);
        }
    }
}

/// Uniform draw over the symptoms whose presence is still unestablished.
pub fn select_topic(state: &DialogueState, rng: &mut impl Rng) -> Result<SymptomId> {
    state
        .unresolved
        .choose(rng)
        .cloned()
        .ok_or_else(|| Error::Invariant("no symptoms left to select".into()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Move {
    Presence(SymptomId),
    Attribute(SymptomId, AttributeKind),
}

struct Gen<'a> {
    bank: &'a TemplateBank,
    cfg: &'a GenConfig,
    dist: &'a TypeDistribution,
    attr_filter: Option<Vec<AttributeKind>>,
    force_presence: bool,
    pronouns: BTreeMap<String, String>,
    respondent_role: SpeakerRole,
    turns: Vec<Turn>,
    trace: Trace,
    state: DialogueState,
}

/// Runs the five-step generation loop for one dialogue.
pub fn generate_dialogue(
    bank: &TemplateBank,
    cfg: &GenConfig,
    dist: &TypeDistribution,
    rng: &mut ChaCha8Rng,
) -> Result<DialogueOutput> {
    let inventory = cfg.symptom_ids();
    generate_over(bank, cfg, dist, &inventory, cfg.attribute_filter(), false, rng)
}

fn generate_over(
    bank: &TemplateBank,
    cfg: &GenConfig,
    dist: &TypeDistribution,
    inventory: &[SymptomId],
    attr_filter: Option<Vec<AttributeKind>>,
    force_presence: bool,
    rng: &mut ChaCha8Rng,
) -> Result<DialogueOutput> {
    let (p, c) = cfg.respondent_ratio;
    let respondent_role = if rng.gen_ratio(p, p + c) {
        SpeakerRole::Patient
    } else {
        SpeakerRole::Caregiver
    };
    let gender = if rng.gen_bool(cfg.gender_prob_female) {
        Gender::Female
    } else {
        Gender::Male
    };

    let mut gen = Gen {
        bank,
        cfg,
        dist,
        attr_filter,
        force_presence,
        pronouns: pronoun_bindings(respondent_role, gender),
        respondent_role,
        turns: Vec::new(),
        trace: Trace::default(),
        state: DialogueState::new(inventory),
    };
    gen.run(rng)?;

    Ok(DialogueOutput {
        dialogue: Dialogue {
            turns: gen.turns,
            respondent_role,
            respondent_gender: gender,
        },
        trace: gen.trace,
    })
}

fn pronoun_bindings(role: SpeakerRole, gender: Gender) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    let mut put = |k: &str, v: &str| m.insert(k.to_string(), v.to_string());
    match role {
        SpeakerRole::Caregiver => {
            let (subj, poss, obj) = match gender {
                Gender::Female => ("she", "her", "her"),
                Gender::Male => ("he", "his", "him"),
            };
            for prefix in ["pt", "p"] {
                put(&format!("{prefix}_subj"), subj);
                put(&format!("{prefix}_poss"), poss);
                put(&format!("{prefix}_obj"), obj);
                put(&format!("{prefix}_do"), "does");
                put(&format!("{prefix}_have"), "has");
                put(&format!("{prefix}_be"), "is");
            }
        }
        _ => {
            put("pt_subj", "you");
            put("pt_poss", "your");
            put("pt_obj", "you");
            put("pt_do", "do");
            put("pt_have", "have");
            put("pt_be", "are");
            put("p_subj", "i");
            put("p_poss", "my");
            put("p_obj", "me");
            put("p_do", "do");
            put("p_have", "have");
            put("p_be", "am");
        }
    }
    m
}

/// Turn under construction: parts are concatenated and their slot offsets
/// shifted into turn coordinates.
struct TurnBuilder {
    tokens: Vec<String>,
    offsets: Vec<(Slot, usize, usize)>,
    template_ids: Vec<String>,
    labels: BTreeSet<UtteranceType>,
}

impl TurnBuilder {
    fn new() -> Self {
        TurnBuilder {
            tokens: Vec::new(),
            offsets: Vec::new(),
            template_ids: Vec::new(),
            labels: BTreeSet::new(),
        }
    }

    /// Appends an instantiated part and returns its offsets in turn
    /// coordinates.
    fn push(&mut self, id: &str, inst: Instantiated) -> Vec<(Slot, usize, usize)> {
        let shift = self.tokens.len();
        self.tokens.extend(inst.tokens);
        let shifted: Vec<(Slot, usize, usize)> = inst
            .offsets
            .into_iter()
            .map(|(s, a, b)| (s, a + shift, b + shift))
            .collect();
        self.offsets.extend(shifted.iter().cloned());
        self.template_ids.push(id.to_string());
        shifted
    }
}

impl<'a> Gen<'a> {
    fn run(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        let mut consecutive_reconfirm = 0u32;
        let mut nonprogress_streak = 0u32;
        for iteration in 0.. {
            if iteration > 20_000 {
                return Err(Error::Invariant("dialogue generation did not terminate".into()));
            }
            let Some(mv) = self.next_move(rng)? else { break };

            let base = loop {
                let b = self.dist.draw_inquiry_base(rng);
                match b {
                    UtteranceType::Reconfirmation
                        if self.state.last_value_echo.is_none() || consecutive_reconfirm >= 2 =>
                    {
                        continue
                    }
                    UtteranceType::MultiIntent => {
                        if self.multi_mentionable().len() < 2 {
                            continue;
                        }
                        // A multi ask that cannot resolve anything new is a
                        // recheck; cap streaks of those.
                        if self.state.unresolved.is_empty() && nonprogress_streak >= 2 {
                            continue;
                        }
                        break b;
                    }
                    _ => break b,
                }
            };

            if base == UtteranceType::Reconfirmation {
                self.reconfirm_exchange(rng)?;
                consecutive_reconfirm += 1;
                nonprogress_streak += 1;
                continue;
            }
            consecutive_reconfirm = 0;

            match base {
                UtteranceType::MultiIntent => {
                    let progressed = self.multi_exchange(&mv, rng)?;
                    nonprogress_streak = if progressed { 0 } else { nonprogress_streak + 1 };
                }
                _ => {
                    nonprogress_streak = 0;
                    match mv {
                        Move::Presence(s) => self.presence_exchange(&s, base, rng)?,
                        Move::Attribute(s, a) => self.attribute_exchange(&s, a, base, rng)?,
                    }
                }
            }
        }
        if self.turns.is_empty() {
            return Err(Error::Invariant("empty dialogue generated".into()));
        }
        Ok(())
    }

    fn next_move(&mut self, rng: &mut ChaCha8Rng) -> Result<Option<Move>> {
        loop {
            if let Some(s) = self.state.active.clone() {
                if let Some(&a) = self.state.todo_attrs.get(&s).and_then(|v| v.first()) {
                    return Ok(Some(Move::Attribute(s, a)));
                }
                self.state.todo_attrs.remove(&s);
                self.state.completed.push(s);
                self.state.active = None;
                continue;
            }
            if let Some(s) = self.state.open.pop_front() {
                self.state.active = Some(s);
                continue;
            }
            if self.state.unresolved.is_empty() {
                return Ok(None);
            }
            let s = select_topic(&self.state, rng)?;
            return Ok(Some(Move::Presence(s)));
        }
    }

    fn compat_attrs(&self, s: &SymptomId) -> Vec<AttributeKind> {
        self.bank
            .matrix
            .attributes(s)
            .iter()
            .copied()
            .filter(|a| {
                self.attr_filter
                    .as_ref()
                    .map_or(true, |f| f.contains(a))
            })
            .collect()
    }

    fn shuffled_agenda(
        &self,
        s: &SymptomId,
        already: &BTreeSet<AttributeKind>,
        rng: &mut ChaCha8Rng,
    ) -> Vec<AttributeKind> {
        let mut attrs: Vec<AttributeKind> = self
            .compat_attrs(s)
            .into_iter()
            .filter(|a| !already.contains(a))
            .collect();
        attrs.shuffle(rng);
        attrs
    }

    // --- binding helpers ---------------------------------------------------

    fn sample_surface(&self, s: &SymptomId, rng: &mut ChaCha8Rng) -> Result<String> {
        Ok(self.bank.pools.sample("symptom", s, rng)?.to_string())
    }

    fn sample_value(
        &self,
        attr: AttributeKind,
        s: &SymptomId,
        exclude: &[&str],
        rng: &mut ChaCha8Rng,
    ) -> Result<String> {
        let tier = self
            .bank
            .pools
            .eligible(attr.as_str(), s)
            .ok_or_else(|| Error::Invariant(format!("no {attr} pool for {s}")))?;
        let eligible: Vec<&String> = tier.iter().filter(|e| !exclude.contains(&e.as_str())).collect();
        let pick = if eligible.is_empty() {
            tier.choose(rng).expect("tier nonempty")
        } else {
            eligible.choose(rng).expect("nonempty")
        };
        Ok(pick.to_string())
    }

    /// Builds bindings for a template. `symptoms` maps symptom slot index
    /// (1-based) to the symptom discussed; attribute slots get fresh draws,
    /// distinct within the template and from `exclude_values`.
    fn bind(
        &mut self,
        slots: &[Slot],
        symptoms: &[&SymptomId],
        polarity: Option<Polarity>,
        echo: Option<&str>,
        exclude_values: &[&str],
        rng: &mut ChaCha8Rng,
    ) -> Result<BTreeMap<String, String>> {
        let mut bindings = BTreeMap::new();
        let mut used: Vec<String> = exclude_values.iter().map(|s| s.to_string()).collect();
        for slot in slots {
            if bindings.contains_key(&slot.raw) {
                continue;
            }
            let value = match slot.key {
                SlotKey::Symptom => {
                    let idx = slot.index as usize - 1;
                    let s = symptoms.get(idx).ok_or_else(|| {
                        Error::Invariant(format!("no symptom for slot #{}#", slot.raw))
                    })?;
                    let surface = self.sample_surface(s, rng)?;
                    self.state.recent_mention = Some(surface.clone());
                    surface
                }
                SlotKey::Attr(a) => {
                    let s = symptoms.first().ok_or_else(|| {
                        Error::Invariant(format!("attribute slot #{}# without symptom", slot.raw))
                    })?;
                    let excl: Vec<&str> = used.iter().map(|s| s.as_str()).collect();
                    let v = self.sample_value(a, s, &excl, rng)?;
                    used.push(v.clone());
                    v
                }
                SlotKey::Polarity => {
                    let p = polarity.ok_or_else(|| {
                        Error::Invariant("#polarity# slot with no polarity".into())
                    })?;
                    self.bank
                        .pools
                        .sample(p.pool_name(), symptoms.first().unwrap_or(&&SymptomId::new("_")), rng)?
                        .to_string()
                }
                SlotKey::Echo => echo
                    .ok_or_else(|| Error::Invariant("#echo# slot with no echo content".into()))?
                    .to_string(),
                SlotKey::Pronoun(_) => self
                    .pronouns
                    .get(&slot.raw)
                    .cloned()
                    .ok_or_else(|| Error::Invariant(format!("no pronoun form for #{}#", slot.raw)))?,
            };
            bindings.insert(slot.raw.clone(), value);
        }
        Ok(bindings)
    }

    fn pick<'t>(&self, candidates: &[&'t Template], rng: &mut ChaCha8Rng) -> Result<&'t Template> {
        candidates
            .choose(rng)
            .copied()
            .ok_or_else(|| Error::Invariant("no template candidates".into()))
    }

    /// Templates whose attribute slots are all compatible with `s` and still
    /// pending on its agenda (presence templates may assert values).
    fn presence_filter<'t>(
        &self,
        templates: Vec<&'t Template>,
        s: &SymptomId,
    ) -> Vec<&'t Template> {
        let compat = self.compat_attrs(s);
        templates
            .into_iter()
            .filter(|t| {
                t.slots.iter().all(|slot| match slot.key {
                    SlotKey::Attr(a) => compat.contains(&a),
                    _ => true,
                })
            })
            .collect()
    }

    // --- modifiers ----------------------------------------------------------

    fn maybe_transitional(
        &mut self,
        builder: &mut TurnBuilder,
        role: TemplateRole,
        p: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        if !(rng.gen::<f64>() < p) {
            return Ok(());
        }
        let Some(echo) = self.state.recent_mention.clone() else {
            return Ok(());
        };
        let frags = self
            .bank
            .fragments_matching(role, FragmentKind::Transitional, None);
        let Some(frag) = frags.choose(rng) else { return Ok(()) };
        let bindings = self.bind(&frag.slots, &[], None, Some(&echo), &[], rng)?;
        let inst = crate::bank::instantiate(&frag.body, &frag.slots, &bindings)?;
        builder.push(&frag.id, inst);
        builder.labels.insert(UtteranceType::TransitionalClause);
        Ok(())
    }

    /// Appends a topic-drift tail to a response turn. Prefers drifting to an
    /// undiscussed symptom (asserting its presence); falls back to re-echoing
    /// settled content.
    fn maybe_drift(
        &mut self,
        builder: &mut TurnBuilder,
        exclude: &[&SymptomId],
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        if !(rng.gen::<f64>() < self.dist.p_topic_drift) {
            return Ok(());
        }
        let fresh: Vec<SymptomId> = self
            .state
            .unresolved
            .iter()
            .filter(|s| !exclude.contains(s))
            .cloned()
            .collect();
        if let Some(s) = fresh.choose(rng).cloned() {
            let present = self.draw_presence(rng);
            let polarity = if present { Polarity::Affirm } else { Polarity::Deny };
            let frags =
                self.bank
                    .fragments_matching(TemplateRole::Respondent, FragmentKind::DriftNew, Some(polarity));
            let Some(frag) = frags.choose(rng) else { return Ok(()) };
            let bindings = self.bind(&frag.slots, &[&s], Some(polarity), None, &[], rng)?;
            let inst = crate::bank::instantiate(&frag.body, &frag.slots, &bindings)?;
            builder.push(&frag.id, inst);
            builder.labels.insert(UtteranceType::TopicDrift);
            self.trace.facts.push(Fact {
                symptom: s.clone(),
                kind: FactKind::Presence(present),
            });
            let agenda = self.shuffled_agenda(&s, &BTreeSet::new(), rng);
            self.state.resolve(&s, present, agenda, true);
        } else if let Some(((s, _), expr)) = {
            let entries: Vec<_> = self.state.values.iter().collect();
            entries.choose(rng).map(|(k, v)| ((*k).clone(), (*v).clone()))
        } {
            let frags = self
                .bank
                .fragments_matching(TemplateRole::Respondent, FragmentKind::DriftKnown, None);
            let Some(frag) = frags.choose(rng) else { return Ok(()) };
            let _ = s;
            let bindings = self.bind(&frag.slots, &[], None, Some(&expr), &[], rng)?;
            let inst = crate::bank::instantiate(&frag.body, &frag.slots, &bindings)?;
            builder.push(&frag.id, inst);
            builder.labels.insert(UtteranceType::TopicDrift);
        }
        Ok(())
    }

    fn draw_presence(&self, rng: &mut ChaCha8Rng) -> bool {
        self.force_presence || rng.gen::<f64>() < self.cfg.presence_prob
    }

    // --- exchanges ----------------------------------------------------------

    fn finish_turn(&mut self, builder: TurnBuilder, role: SpeakerRole) {
        self.turns.push(Turn {
            role,
            tokens: builder.tokens,
            utterance_types: builder.labels,
        });
        self.trace.turn_templates.push(builder.template_ids);
    }

    /// Records value assertions for attribute-slot offsets of an utterance.
    fn assert_values(
        &mut self,
        symptom: &SymptomId,
        turn: usize,
        offsets: &[(Slot, usize, usize)],
        bindings: &BTreeMap<String, String>,
    ) {
        for (slot, start, end) in offsets {
            if let SlotKey::Attr(a) = slot.key {
                let expression = bindings[&slot.raw].clone();
                self.trace.facts.push(Fact {
                    symptom: symptom.clone(),
                    kind: FactKind::Value {
                        attribute: a,
                        turn,
                        start: *start,
                        end: *end,
                        expression: expression.clone(),
                    },
                });
                self.state
                    .values
                    .insert((symptom.clone(), a), expression.clone());
                self.state.last_value_echo = Some(expression.clone());
                self.state.recent_mention = Some(expression);
                self.state.mark_attr_done(symptom, a);
            }
        }
    }

    fn presence_exchange(
        &mut self,
        s: &SymptomId,
        base: UtteranceType,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let present = self.draw_presence(rng);
        let response_base = self.dist.draw_response_base(rng);
        let revision = rng.gen::<f64>() < self.dist.p_revision;
        let polarity = if present { Polarity::Affirm } else { Polarity::Deny };

        // Inquiry.
        let candidates = self.presence_filter(
            self.bank
                .templates_matching(TemplateRole::Nurse, base, Purpose::Presence, None, None, false),
            s,
        );
        let inq = self.pick(&candidates, rng)?;
        let inq_bindings = self.bind(&inq.slots, &[s], None, None, &[], rng)?;
        let inst = crate::bank::instantiate(&inq.body, &inq.slots, &inq_bindings)?;
        let mut builder = TurnBuilder::new();
        builder.labels.insert(base);
        self.maybe_transitional(&mut builder, TemplateRole::Nurse, self.dist.p_inquiry_transitional, rng)?;
        let inq_offsets = builder.push(&inq.id, inst);
        let inq_turn = self.turns.len();
        self.finish_turn(builder, SpeakerRole::Nurse);

        // Response.
        let resp_candidates = self.presence_filter(
            self.bank.templates_matching(
                TemplateRole::Respondent,
                response_base,
                Purpose::Presence,
                Some(polarity),
                None,
                revision,
            ),
            s,
        );
        // Revision variants exist for both bases; fall back to plain if the
        // drawn combination has no revision form.
        let resp_candidates = if resp_candidates.is_empty() && revision {
            self.presence_filter(
                self.bank.templates_matching(
                    TemplateRole::Respondent,
                    response_base,
                    Purpose::Presence,
                    Some(polarity),
                    None,
                    false,
                ),
                s,
            )
        } else {
            resp_candidates
        };
        let resp = self.pick(&resp_candidates, rng)?;
        let resp_bindings = self.bind(&resp.slots, &[s], Some(polarity), None, &[], rng)?;
        let resp_inst = crate::bank::instantiate(&resp.body, &resp.slots, &resp_bindings)?;
        let mut builder = TurnBuilder::new();
        builder.labels.insert(response_base);
        builder.labels.extend(resp.modifiers.iter().copied());
        self.maybe_transitional(&mut builder, TemplateRole::Respondent, self.dist.p_response_transitional, rng)?;
        let resp_offsets = builder.push(&resp.id, resp_inst);
        self.maybe_drift(&mut builder, &[s], rng)?;
        let resp_turn = self.turns.len();

        // Facts and state.
        self.trace.facts.push(Fact {
            symptom: s.clone(),
            kind: FactKind::Presence(present),
        });
        let mut done = BTreeSet::new();
        if present {
            for (slot, a, b) in &inq_offsets {
                if let SlotKey::Attr(attr) = slot.key {
                    done.insert(attr);
                    let _ = (a, b);
                }
            }
            self.assert_values(s, inq_turn, &inq_offsets, &inq_bindings);
            for (slot, ..) in &resp_offsets {
                if let SlotKey::Attr(attr) = slot.key {
                    done.insert(attr);
                }
            }
            self.assert_values(s, resp_turn, &resp_offsets, &resp_bindings);
        }
        let agenda = self.shuffled_agenda(s, &done, rng);
        let was_presence_move = true;
        self.state.resolve(s, present, agenda, was_presence_move);
        self.finish_turn(builder, self.respondent_role);
        Ok(())
    }

    fn attribute_exchange(
        &mut self,
        s: &SymptomId,
        attr: AttributeKind,
        base: UtteranceType,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let response_base = self.dist.draw_response_base(rng);
        let revision = rng.gen::<f64>() < self.dist.p_revision;
        let answer_form = if response_base == UtteranceType::YesNo {
            AnswerForm::Polar
        } else {
            AnswerForm::Wh
        };

        // Inquiry.
        let candidates = self.bank.templates_matching(
            TemplateRole::Nurse,
            base,
            Purpose::Attribute(attr),
            None,
            Some(answer_form),
            false,
        );
        let inq = self.pick(&candidates, rng)?;
        let inq_bindings = self.bind(&inq.slots, &[s], None, None, &[], rng)?;
        let inst = crate::bank::instantiate(&inq.body, &inq.slots, &inq_bindings)?;
        let mut builder = TurnBuilder::new();
        builder.labels.insert(base);
        self.maybe_transitional(&mut builder, TemplateRole::Nurse, self.dist.p_inquiry_transitional, rng)?;
        let inq_offsets = builder.push(&inq.id, inst);
        let inq_turn = self.turns.len();
        self.finish_turn(builder, SpeakerRole::Nurse);

        // Proposal made by a polar inquiry, if any.
        let proposal: Option<(Slot, usize, usize)> = inq_offsets
            .iter()
            .find(|(slot, ..)| slot.key == SlotKey::Attr(attr))
            .cloned();
        let proposal_expr = proposal
            .as_ref()
            .map(|(slot, ..)| inq_bindings[&slot.raw].clone());

        // Response.
        let (polarity, resp) = match answer_form {
            AnswerForm::Polar => {
                let confirmed = !revision && rng.gen::<f64>() < self.cfg.confirm_prob;
                let polarity = if confirmed { Polarity::Affirm } else { Polarity::Deny };
                let cands = self.bank.templates_matching(
                    TemplateRole::Respondent,
                    UtteranceType::YesNo,
                    Purpose::Attribute(attr),
                    Some(polarity),
                    None,
                    revision,
                );
                let cands = if cands.is_empty() && revision {
                    self.bank.templates_matching(
                        TemplateRole::Respondent,
                        UtteranceType::YesNo,
                        Purpose::Attribute(attr),
                        Some(polarity),
                        None,
                        false,
                    )
                } else {
                    cands
                };
                (polarity, self.pick(&cands, rng)?)
            }
            AnswerForm::Wh => {
                let cands = self.bank.templates_matching(
                    TemplateRole::Respondent,
                    UtteranceType::DetailedResponse,
                    Purpose::Attribute(attr),
                    Some(Polarity::Affirm),
                    None,
                    revision,
                );
                let cands = if cands.is_empty() && revision {
                    self.bank.templates_matching(
                        TemplateRole::Respondent,
                        UtteranceType::DetailedResponse,
                        Purpose::Attribute(attr),
                        Some(Polarity::Affirm),
                        None,
                        false,
                    )
                } else {
                    cands
                };
                (Polarity::Affirm, self.pick(&cands, rng)?)
            }
        };

        // A denial must correct with a different value than the proposal.
        let exclude: Vec<&str> = proposal_expr
            .as_deref()
            .filter(|_| polarity == Polarity::Deny || resp.modifiers.contains(&UtteranceType::Revision))
            .into_iter()
            .collect();
        let resp_bindings = self.bind(
            &resp.slots,
            &[s],
            Some(polarity),
            proposal_expr.as_deref(),
            &exclude,
            rng,
        )?;
        let resp_inst = crate::bank::instantiate(&resp.body, &resp.slots, &resp_bindings)?;
        let mut builder = TurnBuilder::new();
        builder.labels.insert(response_base);
        builder.labels.extend(resp.modifiers.iter().copied());
        self.maybe_transitional(&mut builder, TemplateRole::Respondent, self.dist.p_response_transitional, rng)?;
        let resp_offsets = builder.push(&resp.id, resp_inst);
        self.maybe_drift(&mut builder, &[s], rng)?;
        let resp_turn = self.turns.len();

        // Facts: an affirmed proposal asserts at the inquiry turn; response
        // value slots assert afterwards, so the latest statement wins.
        if polarity == Polarity::Affirm && !resp.modifiers.contains(&UtteranceType::Revision) {
            if let Some((slot, a, b)) = &proposal {
                self.trace.facts.push(Fact {
                    symptom: s.clone(),
                    kind: FactKind::Value {
                        attribute: attr,
                        turn: inq_turn,
                        start: *a,
                        end: *b,
                        expression: inq_bindings[&slot.raw].clone(),
                    },
                });
                self.state
                    .values
                    .insert((s.clone(), attr), inq_bindings[&slot.raw].clone());
                self.state.last_value_echo = Some(inq_bindings[&slot.raw].clone());
            }
        }
        self.assert_values(s, resp_turn, &resp_offsets, &resp_bindings);
        self.state.mark_attr_done(s, attr);
        self.finish_turn(builder, self.respondent_role);
        Ok(())
    }

    fn reconfirm_exchange(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        let echo = self
            .state
            .last_value_echo
            .clone()
            .ok_or_else(|| Error::Invariant("reconfirmation without a prior fact".into()))?;
        let response_base = self.dist.draw_response_base(rng);

        let cands = self.bank.templates_matching(
            TemplateRole::Nurse,
            UtteranceType::Reconfirmation,
            Purpose::Reconfirm,
            None,
            None,
            false,
        );
        let inq = self.pick(&cands, rng)?;
        let bindings = self.bind(&inq.slots, &[], None, Some(&echo), &[], rng)?;
        let inst = crate::bank::instantiate(&inq.body, &inq.slots, &bindings)?;
        let mut builder = TurnBuilder::new();
        builder.labels.insert(UtteranceType::Reconfirmation);
        self.maybe_transitional(&mut builder, TemplateRole::Nurse, self.dist.p_inquiry_transitional, rng)?;
        builder.push(&inq.id, inst);
        self.finish_turn(builder, SpeakerRole::Nurse);

        let cands = self.bank.templates_matching(
            TemplateRole::Respondent,
            response_base,
            Purpose::Reconfirm,
            Some(Polarity::Affirm),
            None,
            false,
        );
        let resp = self.pick(&cands, rng)?;
        let bindings = self.bind(&resp.slots, &[], Some(Polarity::Affirm), Some(&echo), &[], rng)?;
        let inst = crate::bank::instantiate(&resp.body, &resp.slots, &bindings)?;
        let mut builder = TurnBuilder::new();
        builder.labels.insert(response_base);
        self.maybe_transitional(&mut builder, TemplateRole::Respondent, self.dist.p_response_transitional, rng)?;
        builder.push(&resp.id, inst);
        self.maybe_drift(&mut builder, &[], rng)?;
        self.finish_turn(builder, self.respondent_role);
        Ok(())
    }

    /// Symptoms a multi-intent inquiry can mention: unresolved ones first,
    /// then settled ones as rechecks.
    fn multi_mentionable(&self) -> Vec<SymptomId> {
        let mut out: Vec<SymptomId> = self.state.unresolved.clone();
        out.extend(self.state.presence.keys().cloned());
        out
    }

    /// Runs a multi-intent presence exchange. Returns whether any symptom's
    /// presence was newly resolved.
    fn multi_exchange(&mut self, mv: &Move, rng: &mut ChaCha8Rng) -> Result<bool> {
        let mut pool: Vec<SymptomId> = Vec::new();
        if let Move::Presence(s) = mv {
            pool.push(s.clone());
        }
        let mut fresh: Vec<SymptomId> = self
            .state
            .unresolved
            .iter()
            .filter(|s| !pool.contains(s))
            .cloned()
            .collect();
        fresh.shuffle(rng);
        pool.extend(fresh);
        let mut known: Vec<SymptomId> = self
            .state
            .presence
            .keys()
            .filter(|s| !pool.contains(s))
            .cloned()
            .collect();
        known.shuffle(rng);
        pool.extend(known);

        let cands: Vec<&Template> = self
            .bank
            .templates_matching(
                TemplateRole::Nurse,
                UtteranceType::MultiIntent,
                Purpose::Presence,
                None,
                None,
                false,
            )
            .into_iter()
            .filter(|t| t.symptom_arity() >= 2 && t.symptom_arity() <= pool.len())
            .collect();
        let inq = self.pick(&cands, rng)?;
        let arity = inq.symptom_arity();
        let chosen: Vec<SymptomId> = pool.into_iter().take(arity).collect();
        let chosen_refs: Vec<&SymptomId> = chosen.iter().collect();

        let bindings = self.bind(&inq.slots, &chosen_refs, None, None, &[], rng)?;
        let inst = crate::bank::instantiate(&inq.body, &inq.slots, &bindings)?;
        let mut builder = TurnBuilder::new();
        builder.labels.insert(UtteranceType::MultiIntent);
        self.maybe_transitional(&mut builder, TemplateRole::Nurse, self.dist.p_inquiry_transitional, rng)?;
        builder.push(&inq.id, inst);
        self.finish_turn(builder, SpeakerRole::Nurse);

        // One respondent turn with a per-symptom part, all of the drawn base.
        let response_base = self.dist.draw_response_base(rng);
        let mut revision = rng.gen::<f64>() < self.dist.p_revision;
        let mut builder = TurnBuilder::new();
        builder.labels.insert(response_base);
        self.maybe_transitional(&mut builder, TemplateRole::Respondent, self.dist.p_response_transitional, rng)?;
        let resp_turn = self.turns.len();
        let mut progressed = false;

        for s in &chosen {
            let (present, newly) = match self.state.known(s) {
                Some(p) => (p, false),
                None => (self.draw_presence(rng), true),
            };
            let polarity = if present { Polarity::Affirm } else { Polarity::Deny };
            let use_revision = revision && newly;
            let mut cands: Vec<&Template> = self
                .presence_filter(
                    self.bank.templates_matching(
                        TemplateRole::Respondent,
                        response_base,
                        Purpose::Presence,
                        Some(polarity),
                        None,
                        use_revision,
                    ),
                    s,
                )
                .into_iter()
                .filter(|t| t.mentions_symptom())
                .collect();
            if cands.is_empty() {
                cands = self
                    .presence_filter(
                        self.bank.templates_matching(
                            TemplateRole::Respondent,
                            response_base,
                            Purpose::Presence,
                            Some(polarity),
                            None,
                            false,
                        ),
                        s,
                    )
                    .into_iter()
                    .filter(|t| t.mentions_symptom())
                    .collect();
            } else if use_revision {
                revision = false;
                builder.labels.insert(UtteranceType::Revision);
            }
            let resp = self.pick(&cands, rng)?;
            let part_bindings = self.bind(&resp.slots, &[s], Some(polarity), None, &[], rng)?;
            let part = crate::bank::instantiate(&resp.body, &resp.slots, &part_bindings)?;
            let part_offsets = builder.push(&resp.id, part);

            self.trace.facts.push(Fact {
                symptom: s.clone(),
                kind: FactKind::Presence(present),
            });
            if newly {
                progressed = true;
                let mut done = BTreeSet::new();
                if present {
                    for (slot, ..) in &part_offsets {
                        if let SlotKey::Attr(a) = slot.key {
                            done.insert(a);
                        }
                    }
                    self.assert_values(s, resp_turn, &part_offsets, &part_bindings);
                }
                let agenda = self.shuffled_agenda(s, &done, rng);
                let front = matches!(mv, Move::Presence(m) if m == s);
                self.state.resolve(s, present, agenda, front);
            } else if present {
                self.assert_values(s, resp_turn, &part_offsets, &part_bindings);
            }
        }
        let exclude: Vec<&SymptomId> = chosen.iter().collect();
        self.maybe_drift(&mut builder, &exclude, rng)?;
        self.finish_turn(builder, self.respondent_role);
        Ok(progressed)
    }
}

// ---------------------------------------------------------------------------
// Annotation

/// Replays the trace against the flattened dialogue and emits one sample per
/// (symptom, attribute) permutation. A span that does not reproduce its
/// traced expression is a hard error.
pub fn annotate_dialogue(
    dialogue: &Dialogue,
    trace: &Trace,
    inventory: &[SymptomId],
    id_prefix: &str,
) -> Result<Vec<Sample>> {
    let flat = flatten(dialogue);
    let mut presence: BTreeMap<&SymptomId, bool> = BTreeMap::new();
    let mut spans: BTreeMap<(&SymptomId, AttributeKind), (usize, usize)> = BTreeMap::new();

    for fact in &trace.facts {
        match &fact.kind {
            FactKind::Presence(p) => {
                presence.insert(&fact.symptom, *p);
            }
            FactKind::Value {
                attribute,
                turn,
                start,
                end,
                expression,
            } => {
                if *turn >= dialogue.turns.len() {
                    return Err(Error::Invariant(format!(
                        "trace references turn {turn} beyond dialogue"
                    )));
                }
                let gs = flat.global_index(*turn, *start);
                let ge = flat.global_index(*turn, *end);
                if ge >= flat.len() || gs == 0 {
                    return Err(Error::Invariant(format!(
                        "trace span ({gs},{ge}) outside flattened dialogue"
                    )));
                }
                let expected = tokenize(expression);
                if flat.tokens[gs..=ge] != expected[..] {
                    return Err(Error::Invariant(format!(
                        "trace mismatch: span ({gs},{ge}) holds {:?}, expected {:?}",
                        &flat.tokens[gs..=ge],
                        expected
                    )));
                }
                spans.insert((&fact.symptom, *attribute), (gs, ge));
            }
        }
    }

    let mut samples = Vec::with_capacity(inventory.len() * AttributeKind::ALL.len());
    for symptom in inventory {
        for attribute in AttributeKind::ALL {
            let answer = match (presence.get(symptom), spans.get(&(symptom, attribute))) {
                (Some(true), Some(&(start, end))) => Answer::Span { start, end },
                _ => Answer::NoAnswer,
            };
            samples.push(Sample {
                id: format!(
                    "{id_prefix}-{}-{}",
                    symptom.as_str().replace(' ', "_"),
                    attribute.as_str()
                ),
                dialogue: dialogue.clone(),
                query: Query {
                    symptom: symptom.clone(),
                    attribute,
                },
                answer,
            });
        }
    }
    Ok(samples)
}

// ---------------------------------------------------------------------------
// Corpus and evaluation sets

/// Generates dialogues (optionally across worker threads) until `n_samples`
/// annotated samples exist, then truncates to exactly that count. Output is
/// ordered by dialogue index, so worker count never changes the result.
pub fn generate_corpus(
    bank: &TemplateBank,
    cfg: &GenConfig,
    n_samples: usize,
    workers: usize,
) -> Result<(Vec<Sample>, GenStats)> {
    if n_samples == 0 {
        return Err(Error::config("gen", "n_samples must be positive"));
    }
    validate_for_generation(bank, cfg)?;
    let dist = super::boost_distribution(&cfg.distribution)?;
    let inventory = cfg.symptom_ids();
    let per_dialogue = inventory.len() * AttributeKind::ALL.len();
    let need = n_samples.div_ceil(per_dialogue);

    let outputs = run_dialogues(bank, cfg, &dist, &inventory, stream::DIALOGUE, need, workers)?;

    let mut stats = GenStats::default();
    let mut samples = Vec::with_capacity(need * per_dialogue);
    for (i, out) in outputs.iter().enumerate() {
        let id = format!("d{}-{}", cfg.seed, i);
        let ss = annotate_dialogue(&out.dialogue, &out.trace, &inventory, &id)?;
        stats.record(&out.dialogue, &ss);
        samples.extend(ss);
    }
    samples.truncate(n_samples);
    stats.finish(&dist);
    Ok((samples, stats))
}

fn run_dialogues(
    bank: &TemplateBank,
    cfg: &GenConfig,
    dist: &TypeDistribution,
    inventory: &[SymptomId],
    stream_id: u64,
    count: usize,
    workers: usize,
) -> Result<Vec<DialogueOutput>> {
    let workers = workers.max(1);
    let attr_filter = cfg.attribute_filter();
    if workers == 1 {
        let mut outputs = Vec::with_capacity(count);
        for i in 0..count {
            let mut rng = stream_rng(cfg.seed, stream_id, i as u64);
            outputs.push(generate_over(
                bank,
                cfg,
                dist,
                inventory,
                attr_filter.clone(),
                false,
                &mut rng,
            )?);
        }
        return Ok(outputs);
    }

    let results: Vec<Result<Vec<(usize, DialogueOutput)>>> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for w in 0..workers {
            let attr_filter = attr_filter.clone();
            let handle = scope.spawn(move || {
                let mut chunk = Vec::new();
                let mut i = w;
                while i < count {
                    let mut rng = stream_rng(cfg.seed, stream_id, i as u64);
                    let out = generate_over(
                        bank,
                        cfg,
                        dist,
                        inventory,
                        attr_filter.clone(),
                        false,
                        &mut rng,
                    )?;
                    chunk.push((i, out));
                    i += workers;
                }
                Ok(chunk)
            });
            handles.push(handle);
        }
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });

    let mut indexed: Vec<(usize, DialogueOutput)> = Vec::with_capacity(count);
    for r in results {
        indexed.extend(r?);
    }
    indexed.sort_by_key(|(i, _)| *i);
    Ok(indexed.into_iter().map(|(_, out)| out).collect())
}

#[derive(Debug, Clone)]
pub struct EvalSets {
    pub base: Vec<Sample>,
    pub augmented: Vec<Sample>,
}

/// Builds the held-out base set from a seed stream disjoint from training,
/// and the augmented set by inserting out-of-distribution exchanges into a
/// few base dialogues and querying them.
pub fn build_eval_sets(bank: &TemplateBank, cfg: &GenConfig) -> Result<EvalSets> {
    validate_for_generation(bank, cfg)?;
    let ood = cfg.ood_ids();
    for s in &ood {
        if cfg.inventory.iter().any(|x| SymptomId::new(x.clone()) == *s) {
            return Err(Error::config(
                "eval sets",
                format!("ood symptom {s} is in the training inventory"),
            ));
        }
        if !bank.matrix.knows(s) {
            return Err(Error::config(
                "eval sets",
                format!("ood symptom {s} missing from the matrix"),
            ));
        }
        if bank.pools.eligible("symptom", s).is_none() {
            return Err(Error::config(
                "eval sets",
                format!("ood symptom {s} has no surface pool"),
            ));
        }
    }

    let dist = super::boost_distribution(&cfg.distribution)?;
    let inventory = cfg.symptom_ids();
    let per_dialogue = inventory.len() * AttributeKind::ALL.len();
    let need = cfg.base_set_size.div_ceil(per_dialogue);
    let outputs = run_dialogues(bank, cfg, &dist, &inventory, stream::EVAL_BASE, need, 1)?;

    let mut base = Vec::new();
    for (i, out) in outputs.iter().enumerate() {
        let id = format!("b{}-{}", cfg.seed, i);
        base.extend(annotate_dialogue(&out.dialogue, &out.trace, &inventory, &id)?);
    }
    base.truncate(cfg.base_set_size);

    let mut augmented = base.clone();
    if cfg.augmented_dialogues > outputs.len() {
        return Err(Error::config(
            "eval sets",
            "not enough base dialogues to augment",
        ));
    }
    for k in 0..cfg.augmented_dialogues {
        let ood_symptom = &ood[k % ood.len()];
        let mut rng = stream_rng(cfg.seed, stream::EVAL_AUGMENT, k as u64);
        let out = &outputs[k];
        augmented.extend(augment_with_ood(
            bank,
            cfg,
            &dist,
            out,
            ood_symptom,
            &format!("b{}-{k}", cfg.seed),
            &mut rng,
        )?);
    }
    Ok(EvalSets { base, augmented })
}

/// Appends one OOD symptom discussion (presence plus two attributes) to a
/// dialogue copy and returns the two answerable attribute queries against it.
fn augment_with_ood(
    bank: &TemplateBank,
    cfg: &GenConfig,
    dist: &TypeDistribution,
    out: &DialogueOutput,
    ood: &SymptomId,
    id_prefix: &str,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Sample>> {
    let mut attrs: Vec<AttributeKind> = bank.matrix.attributes(ood).iter().copied().collect();
    attrs.shuffle(rng);
    attrs.truncate(2);
    if attrs.len() < 2 {
        return Err(Error::config(
            "eval sets",
            format!("ood symptom {ood} needs at least two compatible attributes"),
        ));
    }

    let attr_names: Vec<String> = attrs.iter().map(|a| a.as_str().to_string()).collect();
    let sub_cfg = GenConfig {
        inventory: vec![ood.as_str().to_string()],
        attributes: Some(attr_names),
        ..cfg.clone()
    };
    let segment = generate_over(
        bank,
        &sub_cfg,
        dist,
        &[ood.clone()],
        sub_cfg.attribute_filter(),
        true, // the inserted symptom must be present to be queryable
        rng,
    )?;

    // Keep pronoun agreement consistent with the host dialogue.
    let mut dialogue = out.dialogue.clone();
    let turn_offset = dialogue.turns.len();
    let mut segment = segment;
    rewrite_pronouns(
        &mut segment.dialogue,
        dialogue.respondent_role,
        dialogue.respondent_gender,
    );
    dialogue.turns.extend(segment.dialogue.turns);

    let mut trace = out.trace.clone();
    for fact in &segment.trace.facts {
        let mut fact = fact.clone();
        if let FactKind::Value { turn, .. } = &mut fact.kind {
            *turn += turn_offset;
        }
        trace.facts.push(fact);
    }
    trace.turn_templates.extend(segment.trace.turn_templates);

    let all = annotate_dialogue(&dialogue, &trace, &[ood.clone()], &format!("{id_prefix}-aug"))?;
    let picked: Vec<Sample> = all
        .into_iter()
        .filter(|s| attrs.contains(&s.query.attribute))
        .collect();
    debug_assert_eq!(picked.len(), 2);
    for s in &picked {
        if !s.answer.is_span() {
            return Err(Error::Invariant(format!(
                "ood query {} is unanswerable; insertion failed",
                s.id
            )));
        }
    }
    Ok(picked)
}

/// The appended segment is generated with its own respondent draw; rewrite
/// its agreement words to the host dialogue's role and gender.
fn rewrite_pronouns(segment: &mut Dialogue, role: SpeakerRole, gender: Gender) {
    if segment.respondent_role == role && segment.respondent_gender == gender {
        return;
    }
    let from = pronoun_bindings(segment.respondent_role, segment.respondent_gender);
    let to = pronoun_bindings(role, gender);
    for turn in &mut segment.turns {
        let table = &from;
        for tok in &mut turn.tokens {
            for (key, src) in table {
                if tok == src {
                    *tok = to[key].clone();
                    break;
                }
            }
        }
        if turn.role != SpeakerRole::Nurse {
            turn.role = role;
        }
    }
    segment.respondent_role = role;
    segment.respondent_gender = gender;
}

/// Checks that the bank can serve every template request this configuration
/// can produce, so insufficiency is a config error up front rather than a
/// mid-generation failure.
pub fn validate_for_generation(bank: &TemplateBank, cfg: &GenConfig) -> Result<()> {
    let mut missing = Vec::new();
    let inventory = cfg.symptom_ids();
    let filter = cfg.attribute_filter();
    let mut used_attrs: BTreeSet<AttributeKind> = BTreeSet::new();
    for s in &inventory {
        if !bank.matrix.knows(s) {
            missing.push(format!("symptom {s} missing from matrix"));
            continue;
        }
        if bank.pools.eligible("symptom", s).is_none() {
            missing.push(format!("symptom {s} has no surface expressions"));
        }
        for a in bank.matrix.attributes(s) {
            if filter.as_ref().map_or(true, |f| f.contains(a)) {
                used_attrs.insert(*a);
                match bank.pools.eligible(a.as_str(), s) {
                    None => missing.push(format!("no {a} expressions reachable for {s}")),
                    Some(tier) if tier.len() < 2 => missing.push(format!(
                        "need at least two {a} expressions for {s} to correct a denial"
                    )),
                    _ => {}
                }
            }
        }
    }

    let mut need_template = |desc: &str, found: bool| {
        if !found {
            missing.push(format!("no template for {desc}"));
        }
    };
    use TemplateRole::{Nurse, Respondent};
    use UtteranceType as U;
    for base in [U::OpenEnded, U::Detailed] {
        need_template(
            &format!("{base:?} presence inquiry"),
            inventory.iter().any(|s| {
                !bank
                    .templates_matching(Nurse, base, Purpose::Presence, None, None, false)
                    .is_empty()
                    && !Gen::presence_filter_static(bank, cfg, base, s).is_empty()
            }),
        );
        for a in &used_attrs {
            for form in [AnswerForm::Polar, AnswerForm::Wh] {
                need_template(
                    &format!("{base:?} {a} inquiry ({form:?})"),
                    !bank
                        .templates_matching(Nurse, base, Purpose::Attribute(*a), None, Some(form), false)
                        .is_empty(),
                );
            }
        }
    }
    if inventory.len() >= 2 {
        need_template(
            "multi-intent inquiry of arity 2",
            bank.templates_matching(Nurse, U::MultiIntent, Purpose::Presence, None, None, false)
                .iter()
                .any(|t| t.symptom_arity() == 2),
        );
    }
    need_template(
        "reconfirmation inquiry",
        !bank
            .templates_matching(Nurse, U::Reconfirmation, Purpose::Reconfirm, None, None, false)
            .is_empty(),
    );
    for base in [U::YesNo, U::DetailedResponse] {
        for polarity in [Polarity::Affirm, Polarity::Deny] {
            need_template(
                &format!("{base:?} presence response ({polarity:?})"),
                !bank
                    .templates_matching(Respondent, base, Purpose::Presence, Some(polarity), None, false)
                    .is_empty(),
            );
        }
        need_template(
            &format!("{base:?} reconfirmation response"),
            !bank
                .templates_matching(Respondent, base, Purpose::Reconfirm, Some(Polarity::Affirm), None, false)
                .is_empty(),
        );
    }
    for a in &used_attrs {
        need_template(
            &format!("yes/no confirmation for {a}"),
            !bank
                .templates_matching(Respondent, U::YesNo, Purpose::Attribute(*a), Some(Polarity::Affirm), None, false)
                .is_empty(),
        );
        need_template(
            &format!("yes/no correction for {a}"),
            !bank
                .templates_matching(Respondent, U::YesNo, Purpose::Attribute(*a), Some(Polarity::Deny), None, false)
                .is_empty(),
        );
        need_template(
            &format!("detailed response for {a}"),
            !bank
                .templates_matching(Respondent, U::DetailedResponse, Purpose::Attribute(*a), Some(Polarity::Affirm), None, false)
                .is_empty(),
        );
    }
    for (kind, role) in [
        (FragmentKind::Transitional, Nurse),
        (FragmentKind::Transitional, Respondent),
        (FragmentKind::DriftKnown, Respondent),
    ] {
        need_template(
            &format!("{kind:?} fragment for {role:?}"),
            !bank.fragments_matching(role, kind, None).is_empty(),
        );
    }
    for polarity in [Polarity::Affirm, Polarity::Deny] {
        need_template(
            &format!("drift fragment ({polarity:?})"),
            !bank
                .fragments_matching(Respondent, FragmentKind::DriftNew, Some(polarity))
                .is_empty(),
        );
    }

    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::config("bank coverage", missing.join("\n")))
    }
}

impl<'a> Gen<'a> {
    /// Static twin of [`presence_filter`] for pre-flight validation.
    fn presence_filter_static<'t>(
        bank: &'t TemplateBank,
        cfg: &GenConfig,
        base: UtteranceType,
        s: &SymptomId,
    ) -> Vec<&'t Template> {
        let filter = cfg.attribute_filter();
        let compat: Vec<AttributeKind> = bank
            .matrix
            .attributes(s)
            .iter()
            .copied()
            .filter(|a| filter.as_ref().map_or(true, |f| f.contains(a)))
            .collect();
        bank.templates_matching(TemplateRole::Nurse, base, Purpose::Presence, None, None, false)
            .into_iter()
            .filter(|t| {
                t.slots.iter().all(|slot| match slot.key {
                    SlotKey::Attr(a) => compat.contains(&a),
                    _ => true,
                })
            })
            .collect()
    }
}

