//! Template bank: parsing, validation, and instantiation of utterance
//! templates and expression pools.
//!
//! The bank ships as three human-editable TOML files. `templates.toml` holds
//! inquiry/response templates and modifier fragments, `pools.toml` the
//! surface expressions per slot (scoped to a symptom or GENERAL), and
//! `matrix.toml` the symptom/attribute compatibility matrix. Placeholders in
//! template bodies use the `#slot#` form, e.g. `#symptom#`, `#time#`,
//! `#polarity#`; a digit suffix (`#symptom2#`, `#time2#`) marks an
//! independently bound occurrence of the same slot kind.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::Deserialize;

use crate::corpus::{AttributeKind, SymptomId, UtteranceType};
use crate::text::tokenize;
use crate::{Error, Result};

pub const GENERAL_SCOPE: &str = "GENERAL";

/// Who utters a template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateRole {
    Nurse,
    Respondent,
}

/// What a template accomplishes in the exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    /// Establishes whether a symptom is present.
    Presence,
    /// Elicits or asserts a value for one attribute.
    Attribute(AttributeKind),
    /// Confirms whatever attribute value was proposed; carries no value of
    /// its own (`attribute = "any"` in the file).
    AttributeAny,
    /// Re-asks an already asserted fact; adds no new facts.
    Reconfirm,
}

impl Purpose {
    /// Whether a template tagged `this` can serve a request for `wanted`.
    pub fn serves(self, wanted: Purpose) -> bool {
        self == wanted || (self == Purpose::AttributeAny && matches!(wanted, Purpose::Attribute(_)))
    }
}

/// Assertion direction of a response template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarity {
    Affirm,
    Deny,
}

impl Polarity {
    /// Pool holding the surface forms for the `#polarity#` slot.
    pub fn pool_name(self) -> &'static str {
        match self {
            Polarity::Affirm => "affirmative",
            Polarity::Deny => "negative",
        }
    }
}

/// Syntactic shape of an attribute inquiry: a polar question proposes a
/// concrete value ("do you get it at night?"), a wh question leaves the
/// value to the respondent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerForm {
    Polar,
    Wh,
}

/// Closed-class agreement slots resolved from respondent role and gender
/// rather than from pools. `Pt*` forms are the nurse speaking about the
/// patient, `P*` forms the respondent speaking about the patient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PronounKind {
    PtSubj,
    PtPoss,
    PtObj,
    PtDo,
    PtHave,
    PtBe,
    PSubj,
    PPoss,
    PObj,
    PDo,
    PHave,
    PBe,
}

impl PronounKind {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "pt_subj" => PronounKind::PtSubj,
            "pt_poss" => PronounKind::PtPoss,
            "pt_obj" => PronounKind::PtObj,
            "pt_do" => PronounKind::PtDo,
            "pt_have" => PronounKind::PtHave,
            "pt_be" => PronounKind::PtBe,
            "p_subj" => PronounKind::PSubj,
            "p_poss" => PronounKind::PPoss,
            "p_obj" => PronounKind::PObj,
            "p_do" => PronounKind::PDo,
            "p_have" => PronounKind::PHave,
            "p_be" => PronounKind::PBe,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SlotKey {
    Symptom,
    Attr(AttributeKind),
    Polarity,
    /// Bound by the generator to previously uttered content; never asserts.
    Echo,
    Pronoun(PronounKind),
}

impl SlotKey {
    /// Expression pool backing this slot, if any.
    pub fn pool_name(self) -> Option<&'static str> {
        match self {
            SlotKey::Symptom => Some("symptom"),
            SlotKey::Attr(a) => Some(a.as_str()),
            SlotKey::Polarity | SlotKey::Echo | SlotKey::Pronoun(_) => None,
        }
    }
}

/// One placeholder occurrence in a template body, in text order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Slot {
    /// Raw name between the `#` markers, e.g. `symptom2`.
    pub raw: String,
    pub key: SlotKey,
    /// 1 for the unsuffixed slot, 2+ for suffixed variants.
    pub index: u8,
}

fn parse_slot(raw: &str) -> Option<Slot> {
    let trimmed = raw.trim_end_matches(|c: char| c.is_ascii_digit());
    let index: u8 = if trimmed.len() == raw.len() {
        1
    } else {
        raw[trimmed.len()..].parse().ok()?
    };
    let key = match trimmed {
        "symptom" => SlotKey::Symptom,
        "polarity" => SlotKey::Polarity,
        "echo" => SlotKey::Echo,
        other => {
            if let Some(attr) = AttributeKind::parse(other) {
                SlotKey::Attr(attr)
            } else {
                SlotKey::Pronoun(PronounKind::parse(other)?)
            }
        }
    };
    Some(Slot {
        raw: raw.to_string(),
        key,
        index,
    })
}

#[derive(Debug, Clone)]
pub struct Template {
    pub id: String,
    pub role: TemplateRole,
    pub base: UtteranceType,
    pub modifiers: BTreeSet<UtteranceType>,
    pub purpose: Purpose,
    pub polarity: Option<Polarity>,
    pub answer_form: Option<AnswerForm>,
    pub body: String,
    /// Placeholder occurrences in text order.
    pub slots: Vec<Slot>,
}

impl Template {
    /// Number of distinct symptom slots (1 for `#symptom#` only, 3 for a
    /// three-way multi-intent inquiry).
    pub fn symptom_arity(&self) -> usize {
        self.slots
            .iter()
            .filter(|s| s.key == SlotKey::Symptom)
            .map(|s| s.index as usize)
            .max()
            .unwrap_or(0)
    }

    pub fn mentions_symptom(&self) -> bool {
        self.slots.iter().any(|s| s.key == SlotKey::Symptom)
    }

    pub fn has_attr_slot(&self, attr: AttributeKind) -> bool {
        self.slots.iter().any(|s| s.key == SlotKey::Attr(attr))
    }
}

/// Kinds of decorator fragments composed around main templates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FragmentKind {
    /// Self-talk repetition preceding the main clause; never asserts.
    Transitional,
    /// Drifts to a symptom not yet discussed; asserts its presence.
    DriftNew,
    /// Drifts back to settled content; re-echoes without asserting.
    DriftKnown,
}

#[derive(Debug, Clone)]
pub struct Fragment {
    pub id: String,
    pub role: TemplateRole,
    pub kind: FragmentKind,
    pub polarity: Option<Polarity>,
    pub body: String,
    pub slots: Vec<Slot>,
}

/// Surface expressions per (slot pool, scope). Symptom-scoped entries take
/// priority over GENERAL ones when sampling.
#[derive(Debug, Clone, Default)]
pub struct ExpressionPools {
    map: BTreeMap<(String, String), Vec<String>>,
}

impl ExpressionPools {
    pub fn insert(&mut self, pool: &str, scope: &str, expressions: Vec<String>) {
        self.map
            .insert((pool.to_string(), scope.to_string()), expressions);
    }

    pub fn get(&self, pool: &str, scope: &str) -> Option<&[String]> {
        self.map
            .get(&(pool.to_string(), scope.to_string()))
            .map(|v| v.as_slice())
    }

    /// Expressions eligible for (pool, symptom): the symptom tier if it is
    /// nonempty, otherwise the GENERAL tier.
    pub fn eligible(&self, pool: &str, symptom: &SymptomId) -> Option<&[String]> {
        if let Some(tier) = self.get(pool, symptom.as_str()) {
            if !tier.is_empty() {
                return Some(tier);
            }
        }
        self.get(pool, GENERAL_SCOPE).filter(|t| !t.is_empty())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str, &[String])> {
        self.map
            .iter()
            .map(|((p, s), v)| (p.as_str(), s.as_str(), v.as_slice()))
    }

    /// Uniform draw from the eligible tier.
    pub fn sample(&self, pool: &str, symptom: &SymptomId, rng: &mut impl Rng) -> Result<&str> {
        let tier = self.eligible(pool, symptom).ok_or_else(|| {
            Error::Invariant(format!("no expressions for pool {pool:?} and symptom {symptom}"))
        })?;
        Ok(tier.choose(rng).expect("tier nonempty").as_str())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CompatibilityMatrix {
    map: BTreeMap<SymptomId, BTreeSet<AttributeKind>>,
}

impl CompatibilityMatrix {
    pub fn insert(&mut self, symptom: SymptomId, attrs: BTreeSet<AttributeKind>) {
        self.map.insert(symptom, attrs);
    }

    pub fn knows(&self, symptom: &SymptomId) -> bool {
        self.map.contains_key(symptom)
    }

    pub fn allows(&self, symptom: &SymptomId, attr: AttributeKind) -> bool {
        self.map.get(symptom).is_some_and(|set| set.contains(&attr))
    }

    pub fn attributes(&self, symptom: &SymptomId) -> &BTreeSet<AttributeKind> {
        static EMPTY: BTreeSet<AttributeKind> = BTreeSet::new();
        self.map.get(symptom).unwrap_or(&EMPTY)
    }

    pub fn symptoms(&self) -> impl Iterator<Item = &SymptomId> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

/// Parsed and validated bank.
#[derive(Debug, Clone)]
pub struct TemplateBank {
    pub templates: Vec<Template>,
    pub fragments: Vec<Fragment>,
    pub pools: ExpressionPools,
    pub matrix: CompatibilityMatrix,
    /// Non-fatal findings from validation (unreferenced pools, floor
    /// shortfalls).
    pub warnings: Vec<String>,
}

// ---------------------------------------------------------------------------
// Raw TOML layer

#[derive(Deserialize)]
struct RawTemplates {
    #[serde(default)]
    template: Vec<RawTemplate>,
    #[serde(default)]
    fragment: Vec<RawFragment>,
}

#[derive(Deserialize)]
struct RawTemplate {
    id: String,
    role: String,
    base: String,
    #[serde(default)]
    modifiers: Vec<String>,
    purpose: String,
    #[serde(default)]
    attribute: Option<String>,
    #[serde(default)]
    polarity: Option<String>,
    #[serde(default)]
    answer_form: Option<String>,
    body: String,
}

#[derive(Deserialize)]
struct RawFragment {
    id: String,
    role: String,
    kind: String,
    #[serde(default)]
    polarity: Option<String>,
    body: String,
}

#[derive(Deserialize)]
struct RawMatrix {
    allowed: BTreeMap<String, Vec<String>>,
}

fn parse_base(s: &str) -> Option<UtteranceType> {
    Some(match s {
        "open_ended" => UtteranceType::OpenEnded,
        "detailed" => UtteranceType::Detailed,
        "multi_intent" => UtteranceType::MultiIntent,
        "reconfirmation" => UtteranceType::Reconfirmation,
        "yes_no" => UtteranceType::YesNo,
        "detailed_response" => UtteranceType::DetailedResponse,
        _ => return None,
    })
}

fn parse_modifier(s: &str) -> Option<UtteranceType> {
    Some(match s {
        "transitional_clause" => UtteranceType::TransitionalClause,
        "revision" => UtteranceType::Revision,
        "topic_drift" => UtteranceType::TopicDrift,
        _ => return None,
    })
}

fn extract_slots(body: &str, errors: &mut Vec<String>, origin: &str) -> Vec<Slot> {
    let mut slots = Vec::new();
    let mut rest = body;
    loop {
        let Some(open) = rest.find('#') else { break };
        let after = &rest[open + 1..];
        let Some(close) = after.find('#') else {
            errors.push(format!("{origin}: unterminated placeholder in body"));
            break;
        };
        let raw = &after[..close];
        match parse_slot(raw) {
            Some(slot) => slots.push(slot),
            None => errors.push(format!("{origin}: unknown slot #{raw}#")),
        }
        rest = &after[close + 1..];
    }
    slots
}

// ---------------------------------------------------------------------------
// Parsing and validation

/// Parses the three bank files. Structural problems are aggregated into one
/// config error; the returned bank carries non-fatal warnings.
pub fn parse_bank(templates_text: &str, pools_text: &str, matrix_text: &str) -> Result<TemplateBank> {
    let mut errors: Vec<String> = Vec::new();

    let raw: RawTemplates = toml::from_str(templates_text)
        .map_err(|e| Error::config("templates", e.to_string()))?;
    let raw_pools: toml::Table =
        toml::from_str(pools_text).map_err(|e| Error::config("pools", e.to_string()))?;
    let raw_matrix: RawMatrix =
        toml::from_str(matrix_text).map_err(|e| Error::config("matrix", e.to_string()))?;

    // Matrix.
    let mut matrix = CompatibilityMatrix::default();
    for (symptom, attrs) in &raw_matrix.allowed {
        let mut set = BTreeSet::new();
        for a in attrs {
            match AttributeKind::parse(a) {
                Some(kind) => {
                    set.insert(kind);
                }
                None => errors.push(format!("matrix: unknown attribute {a:?} for {symptom:?}")),
            }
        }
        if set.is_empty() {
            errors.push(format!("matrix: symptom {symptom:?} allows no attributes"));
        }
        matrix.insert(SymptomId::new(symptom.clone()), set);
    }

    // Pools. Layout: [pool_name.scope] expressions = [...]
    let mut pools = ExpressionPools::default();
    for (pool_name, scopes) in &raw_pools {
        let Some(table) = scopes.as_table() else {
            errors.push(format!("pools: entry {pool_name:?} is not a table"));
            continue;
        };
        for (scope, entry) in table {
            let exprs: Vec<String> = match entry.get("expressions").and_then(|v| v.as_array()) {
                Some(arr) => arr
                    .iter()
                    .filter_map(|v| v.as_str().map(|s| s.to_lowercase()))
                    .collect(),
                None => {
                    errors.push(format!(
                        "pools: [{pool_name}.{scope}] missing expressions array"
                    ));
                    continue;
                }
            };
            if exprs.is_empty() {
                errors.push(format!("pools: [{pool_name}.{scope}] pool is empty"));
            }
            if scope != GENERAL_SCOPE && pool_name != "affirmative" && pool_name != "negative" {
                let sid = SymptomId::new(scope.clone());
                if !matrix.knows(&sid) {
                    errors.push(format!(
                        "pools: [{pool_name}.{scope}] scope is not a symptom in the matrix"
                    ));
                }
            }
            pools.insert(pool_name, scope, exprs);
        }
    }

    // Templates.
    let mut templates = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for rt in &raw.template {
        let origin = format!("template {}", rt.id);
        if !seen_ids.insert(rt.id.clone()) {
            errors.push(format!("{origin}: duplicate id"));
        }
        let role = match rt.role.as_str() {
            "nurse" => TemplateRole::Nurse,
            "respondent" => TemplateRole::Respondent,
            other => {
                errors.push(format!("{origin}: unknown role {other:?}"));
                continue;
            }
        };
        let Some(base) = parse_base(&rt.base) else {
            errors.push(format!("{origin}: unknown base type {:?}", rt.base));
            continue;
        };
        let base_is_inquiry = UtteranceType::INQUIRY_BASES.contains(&base);
        if base_is_inquiry != (role == TemplateRole::Nurse) {
            errors.push(format!("{origin}: base {:?} does not match role", rt.base));
        }
        let mut modifiers = BTreeSet::new();
        for m in &rt.modifiers {
            match parse_modifier(m) {
                Some(flag) => {
                    modifiers.insert(flag);
                }
                None => errors.push(format!("{origin}: unknown modifier {m:?}")),
            }
        }
        let purpose = match rt.purpose.as_str() {
            "presence" => Purpose::Presence,
            "reconfirm" => Purpose::Reconfirm,
            "attribute" => match rt.attribute.as_deref() {
                Some("any") => Purpose::AttributeAny,
                Some(a) => match AttributeKind::parse(a) {
                    Some(kind) => Purpose::Attribute(kind),
                    None => {
                        errors.push(format!("{origin}: unknown attribute {a:?}"));
                        continue;
                    }
                },
                None => {
                    errors.push(format!("{origin}: attribute purpose needs an attribute"));
                    continue;
                }
            },
            other => {
                errors.push(format!("{origin}: unknown purpose {other:?}"));
                continue;
            }
        };
        let polarity = match rt.polarity.as_deref() {
            None => None,
            Some("affirm") => Some(Polarity::Affirm),
            Some("deny") => Some(Polarity::Deny),
            Some(other) => {
                errors.push(format!("{origin}: unknown polarity {other:?}"));
                None
            }
        };
        let answer_form = match rt.answer_form.as_deref() {
            None => None,
            Some("polar") => Some(AnswerForm::Polar),
            Some("wh") => Some(AnswerForm::Wh),
            Some(other) => {
                errors.push(format!("{origin}: unknown answer_form {other:?}"));
                None
            }
        };
        if rt.body.trim().is_empty() {
            errors.push(format!("{origin}: empty body"));
        }
        let slots = extract_slots(&rt.body, &mut errors, &origin);

        let t = Template {
            id: rt.id.clone(),
            role,
            base,
            modifiers,
            purpose,
            polarity,
            answer_form,
            body: rt.body.to_lowercase(),
            slots,
        };
        validate_template(&t, &mut errors);
        templates.push(t);
    }

    // Fragments.
    let mut fragments = Vec::new();
    for rf in &raw.fragment {
        let origin = format!("fragment {}", rf.id);
        if !seen_ids.insert(rf.id.clone()) {
            errors.push(format!("{origin}: duplicate id"));
        }
        let role = match rf.role.as_str() {
            "nurse" => TemplateRole::Nurse,
            "respondent" => TemplateRole::Respondent,
            other => {
                errors.push(format!("{origin}: unknown role {other:?}"));
                continue;
            }
        };
        let kind = match rf.kind.as_str() {
            "transitional" => FragmentKind::Transitional,
            "drift_new" => FragmentKind::DriftNew,
            "drift_known" => FragmentKind::DriftKnown,
            other => {
                errors.push(format!("{origin}: unknown fragment kind {other:?}"));
                continue;
            }
        };
        let polarity = match rf.polarity.as_deref() {
            None => None,
            Some("affirm") => Some(Polarity::Affirm),
            Some("deny") => Some(Polarity::Deny),
            Some(other) => {
                errors.push(format!("{origin}: unknown polarity {other:?}"));
                None
            }
        };
        if kind == FragmentKind::DriftNew && polarity.is_none() {
            errors.push(format!("{origin}: drift_new fragments need a polarity"));
        }
        let slots = extract_slots(&rf.body, &mut errors, &origin);
        if kind == FragmentKind::DriftNew && !slots.iter().any(|s| s.key == SlotKey::Symptom) {
            errors.push(format!("{origin}: drift_new fragments must mention #symptom#"));
        }
        fragments.push(Fragment {
            id: rf.id.clone(),
            role,
            kind,
            polarity,
            body: rf.body.to_lowercase(),
            slots,
        });
    }

    // Placeholder resolution: every pool-backed slot reachable from a
    // template must resolve for every symptom it can be used with.
    let all_symptoms: Vec<SymptomId> = matrix.symptoms().cloned().collect();
    let mut referenced_pools: BTreeSet<(String, String)> = BTreeSet::new();
    for t in &templates {
        let usable_symptoms: Vec<&SymptomId> = match t.purpose {
            Purpose::Attribute(attr) => all_symptoms
                .iter()
                .filter(|s| matrix.allows(s, attr))
                .collect(),
            _ => all_symptoms.iter().collect(),
        };
        for slot in &t.slots {
            let pool = match slot.key {
                SlotKey::Polarity => {
                    let Some(p) = t.polarity else {
                        errors.push(format!(
                            "template {}: #polarity# slot requires a polarity tag",
                            t.id
                        ));
                        continue;
                    };
                    referenced_pools.insert((p.pool_name().to_string(), GENERAL_SCOPE.into()));
                    if pools.eligible(p.pool_name(), &SymptomId::new("_")).is_none() {
                        errors.push(format!(
                            "template {}: empty {} pool",
                            t.id,
                            p.pool_name()
                        ));
                    }
                    continue;
                }
                SlotKey::Echo | SlotKey::Pronoun(_) => continue,
                other => other.pool_name().unwrap(),
            };
            for s in &usable_symptoms {
                if pools.eligible(pool, s).is_none() {
                    errors.push(format!(
                        "template {}: slot #{}# unresolvable for symptom {s} (no {pool} pool)",
                        t.id, slot.raw
                    ));
                } else {
                    let scope = if pools.get(pool, s.as_str()).is_some_and(|t| !t.is_empty()) {
                        s.as_str().to_string()
                    } else {
                        GENERAL_SCOPE.to_string()
                    };
                    referenced_pools.insert((pool.to_string(), scope));
                }
            }
        }
    }
    for f in &fragments {
        for slot in &f.slots {
            if slot.key == SlotKey::Symptom {
                for s in &all_symptoms {
                    if pools.eligible("symptom", s).is_none() {
                        errors.push(format!(
                            "fragment {}: #symptom# unresolvable for {s}",
                            f.id
                        ));
                    } else {
                        referenced_pools.insert(("symptom".into(), s.as_str().into()));
                    }
                }
            }
            if slot.key == SlotKey::Polarity {
                if let Some(p) = f.polarity {
                    referenced_pools.insert((p.pool_name().to_string(), GENERAL_SCOPE.into()));
                }
            }
        }
    }

    let mut warnings = Vec::new();
    for (pool, scope, exprs) in pools.iter() {
        if !exprs.is_empty() && !referenced_pools.contains(&(pool.to_string(), scope.to_string()))
        {
            warnings.push(format!("pool [{pool}.{scope}] is never referenced"));
        }
    }

    if !errors.is_empty() {
        return Err(Error::config("bank", errors.join("\n")));
    }

    Ok(TemplateBank {
        templates,
        fragments,
        pools,
        matrix,
        warnings,
    })
}

fn validate_template(t: &Template, errors: &mut Vec<String>) {
    let origin = format!("template {}", t.id);
    let is_response = t.role == TemplateRole::Respondent;
    match t.purpose {
        Purpose::Presence | Purpose::Attribute(_) if is_response && t.polarity.is_none() => {
            errors.push(format!("{origin}: response templates need a polarity"));
        }
        Purpose::AttributeAny => {
            let agnostic = !t.slots.iter().any(|s| matches!(s.key, SlotKey::Attr(_)));
            if !is_response || t.polarity != Some(Polarity::Affirm) || !agnostic {
                errors.push(format!(
                    "{origin}: attribute=any is only for affirming responses without value slots"
                ));
            }
        }
        _ => {}
    }
    if let Purpose::Attribute(attr) = t.purpose {
        match (t.role, t.answer_form) {
            (TemplateRole::Nurse, Some(AnswerForm::Polar)) => {
                if !t.has_attr_slot(attr) {
                    errors.push(format!(
                        "{origin}: polar attribute inquiry must propose a #{}# value",
                        attr.as_str()
                    ));
                }
            }
            (TemplateRole::Nurse, Some(AnswerForm::Wh)) => {
                if t.has_attr_slot(attr) {
                    errors.push(format!(
                        "{origin}: wh inquiry must not contain #{}#",
                        attr.as_str()
                    ));
                }
            }
            (TemplateRole::Nurse, None) => {
                errors.push(format!("{origin}: attribute inquiry needs answer_form"));
            }
            (TemplateRole::Respondent, _) => {
                if t.polarity == Some(Polarity::Deny) && !t.has_attr_slot(attr) {
                    errors.push(format!(
                        "{origin}: denying attribute response must carry the corrected #{}#",
                        attr.as_str()
                    ));
                }
                if t.base == UtteranceType::DetailedResponse && !t.has_attr_slot(attr) {
                    errors.push(format!(
                        "{origin}: detailed attribute response must carry #{}#",
                        attr.as_str()
                    ));
                }
            }
        }
    }
    if t.purpose == Purpose::Presence
        && is_response
        && t.polarity == Some(Polarity::Deny)
        && t.slots.iter().any(|s| matches!(s.key, SlotKey::Attr(_)))
    {
        errors.push(format!(
            "{origin}: denying presence response must not assert attribute values"
        ));
    }
}

// ---------------------------------------------------------------------------
// Instantiation

/// A fully instantiated utterance: tokens plus the token range each bound
/// slot occupies, keyed by occurrence order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instantiated {
    pub tokens: Vec<String>,
    /// (slot, inclusive token start, inclusive token end) per occurrence, in
    /// text order.
    pub offsets: Vec<(Slot, usize, usize)>,
}

/// Replaces every placeholder in `body` with its binding and records where
/// each bound expression landed. Binding keys are the raw slot names.
pub fn instantiate(
    body: &str,
    slots: &[Slot],
    bindings: &BTreeMap<String, String>,
) -> Result<Instantiated> {
    let missing: Vec<&str> = slots
        .iter()
        .map(|s| s.raw.as_str())
        .filter(|raw| !bindings.contains_key(*raw))
        .collect();
    if !missing.is_empty() {
        return Err(Error::Invariant(format!(
            "missing bindings for slots: {}",
            missing.join(", ")
        )));
    }

    let mut tokens: Vec<String> = Vec::new();
    let mut offsets = Vec::new();
    let mut rest = body;
    let mut slot_iter = slots.iter();
    loop {
        let Some(open) = rest.find('#') else {
            tokens.extend(tokenize(rest));
            break;
        };
        tokens.extend(tokenize(&rest[..open]));
        let after = &rest[open + 1..];
        let close = after.find('#').ok_or_else(|| {
            Error::Invariant("unterminated placeholder reached instantiation".into())
        })?;
        let raw = &after[..close];
        let slot = slot_iter
            .next()
            .ok_or_else(|| Error::Invariant(format!("slot list out of sync at #{raw}#")))?;
        debug_assert_eq!(slot.raw, raw);
        let expr_tokens = tokenize(&bindings[raw]);
        if expr_tokens.is_empty() {
            return Err(Error::Invariant(format!("binding for #{raw}# is empty")));
        }
        let start = tokens.len();
        tokens.extend(expr_tokens);
        offsets.push((slot.clone(), start, tokens.len() - 1));
        rest = &after[close + 1..];
    }
    Ok(Instantiated { tokens, offsets })
}

// ---------------------------------------------------------------------------
// Bank-level helpers

impl TemplateBank {
    /// The bank shipped with the crate.
    pub fn builtin() -> Result<TemplateBank> {
        parse_bank(
            include_str!("../../../bank/templates.toml"),
            include_str!("../../../bank/pools.toml"),
            include_str!("../../../bank/matrix.toml"),
        )
    }

    /// Loads `templates.toml`, `pools.toml`, `matrix.toml` from a directory.
    pub fn load_dir(dir: &Path) -> Result<TemplateBank> {
        let read = |name: &str| -> Result<String> {
            let p = dir.join(name);
            std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))
        };
        parse_bank(
            &read("templates.toml")?,
            &read("pools.toml")?,
            &read("matrix.toml")?,
        )
    }

    pub fn templates_matching(
        &self,
        role: TemplateRole,
        base: UtteranceType,
        purpose: Purpose,
        polarity: Option<Polarity>,
        answer_form: Option<AnswerForm>,
        revision: bool,
    ) -> Vec<&Template> {
        self.templates
            .iter()
            .filter(|t| {
                t.role == role
                    && t.base == base
                    && t.purpose.serves(purpose)
                    && (polarity.is_none() || t.polarity == polarity)
                    && (answer_form.is_none() || t.answer_form == answer_form)
                    && t.modifiers.contains(&UtteranceType::Revision) == revision
            })
            .collect()
    }

    pub fn fragments_matching(
        &self,
        role: TemplateRole,
        kind: FragmentKind,
        polarity: Option<Polarity>,
    ) -> Vec<&Fragment> {
        self.fragments
            .iter()
            .filter(|f| {
                f.role == role && f.kind == kind && (polarity.is_none() || f.polarity == polarity)
            })
            .collect()
    }

    /// Every token the bank can emit, for vocabulary construction: template
    /// literals, pool expressions, and agreement forms.
    pub fn vocab_tokens(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        for t in &self.templates {
            out.extend(literal_tokens(&t.body));
        }
        for f in &self.fragments {
            out.extend(literal_tokens(&f.body));
        }
        for (_, _, exprs) in self.pools.iter() {
            for e in exprs {
                out.extend(tokenize(e));
            }
        }
        for s in self.matrix.symptoms() {
            out.extend(tokenize(s.as_str()));
        }
        for a in AttributeKind::ALL {
            out.insert(a.as_str().to_string());
        }
        for p in PRONOUN_FORMS {
            out.insert(p.to_string());
        }
        out
    }

    /// Token classes for the synthetic vector generator: one cluster per
    /// symptom's surface forms, one per attribute's expressions, one
    /// superclass over all symptom words.
    pub fn token_classes(&self) -> crate::text::TokenClasses {
        let mut classes = crate::text::TokenClasses::new();
        let mut symptom_super: BTreeSet<String> = BTreeSet::new();
        for (pool, scope, exprs) in self.pools.iter() {
            let mut members: BTreeSet<String> = BTreeSet::new();
            for e in exprs {
                members.extend(tokenize(e));
            }
            if pool == "symptom" {
                symptom_super.extend(members.iter().cloned());
                classes.insert(format!("sym:{scope}"), members.into_iter().collect());
            } else if pool == "affirmative" || pool == "negative" {
                classes
                    .entry("polarity".to_string())
                    .or_default()
                    .extend(members);
            } else {
                classes
                    .entry(format!("attr:{pool}"))
                    .or_default()
                    .extend(members);
            }
        }
        for s in self.matrix.symptoms() {
            symptom_super.extend(tokenize(s.as_str()));
        }
        classes.insert(
            "symptom-super".to_string(),
            symptom_super.into_iter().collect(),
        );
        classes.insert(
            "attr-names".to_string(),
            AttributeKind::ALL
                .iter()
                .map(|a| a.as_str().to_string())
                .collect(),
        );
        classes
    }

    pub fn stats(&self) -> BankStats {
        let mut templates_per_base: BTreeMap<String, usize> = BTreeMap::new();
        for t in &self.templates {
            *templates_per_base
                .entry(format!("{:?}", t.base))
                .or_default() += 1;
        }
        let mut fragments_per_kind: BTreeMap<String, usize> = BTreeMap::new();
        for f in &self.fragments {
            *fragments_per_kind
                .entry(format!("{:?}", f.kind))
                .or_default() += 1;
        }
        let pool_sizes: BTreeMap<String, usize> = self
            .pools
            .iter()
            .map(|(p, s, e)| (format!("{p}.{s}"), e.len()))
            .collect();
        BankStats {
            templates_per_base,
            fragments_per_kind,
            pool_sizes,
            symptoms: self.matrix.len(),
            warnings: self.warnings.clone(),
        }
    }
}

const PRONOUN_FORMS: [&str; 17] = [
    "you", "your", "he", "she", "his", "her", "him", "i", "my", "me", "do", "does", "have", "has",
    "am", "is", "are",
];

fn literal_tokens(body: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut rest = body;
    loop {
        let Some(open) = rest.find('#') else {
            out.extend(tokenize(rest));
            break;
        };
        out.extend(tokenize(&rest[..open]));
        let after = &rest[open + 1..];
        match after.find('#') {
            Some(close) => rest = &after[close + 1..],
            None => break,
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct BankStats {
    pub templates_per_base: BTreeMap<String, usize>,
    pub fragments_per_kind: BTreeMap<String, usize>,
    pub pool_sizes: BTreeMap<String, usize>,
    pub symptoms: usize,
    pub warnings: Vec<String>,
}

impl fmt::Display for BankStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "templates per base type:")?;
        for (base, n) in &self.templates_per_base {
            writeln!(f, "  {base:<20} {n}")?;
        }
        writeln!(f, "fragments per kind:")?;
        for (kind, n) in &self.fragments_per_kind {
            writeln!(f, "  {kind:<20} {n}")?;
        }
        writeln!(f, "symptoms in matrix: {}", self.symptoms)?;
        writeln!(f, "pools:")?;
        for (name, n) in &self.pool_sizes {
            writeln!(f, "  {name:<28} {n}")?;
        }
        if !self.warnings.is_empty() {
            writeln!(f, "warnings:")?;
            for w in &self.warnings {
                writeln!(f, "  {w}")?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const MATRIX: &str = r##"
[allowed]
cough = ["time", "activity", "extent", "frequency"]
headache = ["time", "extent", "location"]
"##;

    const POOLS: &str = r##"
[symptom.cough]
expressions = ["cough", "coughing", "a cough", "that cough"]
[symptom.headache]
expressions = ["headache", "headaches", "head pain", "a headache"]
[time.GENERAL]
expressions = ["at night", "in the morning", "after lunch", "late in the evening"]
[activity.GENERAL]
expressions = ["when walking", "after climbing stairs"]
[extent.GENERAL]
expressions = ["mild", "quite bad", "slight"]
[frequency.GENERAL]
expressions = ["every day", "once in a while"]
[location.headache]
expressions = ["behind the eyes", "at the temples"]
[affirmative.GENERAL]
expressions = ["yes", "yes yes", "that is right"]
[negative.GENERAL]
expressions = ["no", "no no", "not really"]
"##;

    const TEMPLATES: &str = r##"
[[template]]
id = "inq-det-1"
role = "nurse"
base = "detailed"
purpose = "attribute"
attribute = "time"
answer_form = "polar"
body = "do you #symptom# #time# ?"

[[template]]
id = "inq-multi-1"
role = "nurse"
base = "multi_intent"
purpose = "presence"
body = "any #symptom# , #symptom2# , or #symptom3# ?"

[[template]]
id = "resp-yn-aff-1"
role = "respondent"
base = "yes_no"
purpose = "presence"
polarity = "affirm"
body = "#polarity# , some #symptom# ."

[[fragment]]
id = "trans-1"
role = "respondent"
kind = "transitional"
body = "#echo# ... #echo# ..."
"##;

    fn bank() -> TemplateBank {
        parse_bank(TEMPLATES, POOLS, MATRIX).unwrap()
    }

    #[test]
    fn parses_detailed_inquiry() {
        let b = bank();
        let t = b.templates.iter().find(|t| t.id == "inq-det-1").unwrap();
        assert_eq!(t.base, UtteranceType::Detailed);
        assert_eq!(t.purpose, Purpose::Attribute(AttributeKind::Time));
        assert_eq!(t.slots.len(), 2);
    }

    #[test]
    fn unknown_slot_is_an_error() {
        let templates = r##"
[[template]]
id = "bad"
role = "nurse"
base = "open_ended"
purpose = "presence"
body = "how #severity# is it ?"
"##;
        let err = parse_bank(templates, POOLS, MATRIX).unwrap_err();
        assert!(err.to_string().contains("unknown slot #severity#"), "{err}");
    }

    #[test]
    fn unresolvable_pool_is_an_error() {
        // Location is allowed for headache but the location pool is removed.
        let pools = POOLS.replace("[location.headache]", "[location.unused_scope_gone]");
        let templates = r##"
[[template]]
id = "inq-loc"
role = "nurse"
base = "detailed"
purpose = "attribute"
attribute = "location"
answer_form = "wh"
body = "where does the #symptom# sit ?"
"##;
        let err = parse_bank(templates, &pools, MATRIX).unwrap_err();
        assert!(err.to_string().contains("unresolvable"), "{err}");
    }

    #[test]
    fn empty_pool_is_an_error() {
        let pools = POOLS.replace(
            "expressions = [\"behind the eyes\", \"at the temples\"]",
            "expressions = []",
        );
        let err = parse_bank(TEMPLATES, &pools, MATRIX).unwrap_err();
        assert!(err.to_string().contains("pool is empty"), "{err}");
    }

    #[test]
    fn unreferenced_pool_is_a_warning() {
        let mut pools = POOLS.to_string();
        pools.push_str("\n[location.GENERAL]\nexpressions = [\"on the left side\"]\n");
        // location.GENERAL is shadowed for headache and unreachable otherwise.
        let b = parse_bank(TEMPLATES, &pools, MATRIX).unwrap();
        assert!(b
            .warnings
            .iter()
            .any(|w| w.contains("location.GENERAL")), "{:?}", b.warnings);
    }

    #[test]
    fn instantiate_multi_intent_has_three_offsets() {
        let b = bank();
        let t = b.templates.iter().find(|t| t.id == "inq-multi-1").unwrap();
        let bindings: BTreeMap<String, String> = [
            ("symptom", "cough"),
            ("symptom2", "chest pain"),
            ("symptom3", "headache"),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect();
        let inst = instantiate(&t.body, &t.slots, &bindings).unwrap();
        assert_eq!(
            inst.tokens,
            ["any", "cough", ",", "chest", "pain", ",", "or", "headache", "?"]
                .map(String::from)
                .to_vec()
        );
        assert_eq!(inst.offsets.len(), 3);
        // "chest pain" is two tokens wide: positions 3 and 4.
        let (slot, s, e) = &inst.offsets[1];
        assert_eq!(slot.raw, "symptom2");
        assert_eq!((*s, *e), (3, 4));
    }

    #[test]
    fn instantiate_offsets_match_retokenization() {
        let b = bank();
        let t = b.templates.iter().find(|t| t.id == "inq-det-1").unwrap();
        let bindings: BTreeMap<String, String> =
            [("symptom", "cough"), ("time", "late in the evening")]
                .into_iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect();
        let inst = instantiate(&t.body, &t.slots, &bindings).unwrap();
        assert!(inst.tokens.iter().all(|t| !t.contains('#')));
        for (slot, s, e) in &inst.offsets {
            let expect = tokenize(&bindings[&slot.raw]);
            assert_eq!(&inst.tokens[*s..=*e], expect.as_slice());
        }
    }

    #[test]
    fn instantiate_missing_binding_lists_slots() {
        let b = bank();
        let t = b.templates.iter().find(|t| t.id == "inq-det-1").unwrap();
        let bindings: BTreeMap<String, String> =
            [("symptom".to_string(), "cough".to_string())].into();
        let err = instantiate(&t.body, &t.slots, &bindings).unwrap_err();
        assert!(err.to_string().contains("time"), "{err}");
    }

    #[test]
    fn sample_expression_prefers_symptom_tier() {
        let b = bank();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // headache has its own location pool, so GENERAL must never be used.
        for _ in 0..50 {
            let e = b
                .pools
                .sample("location", &SymptomId::new("headache"), &mut rng)
                .unwrap();
            assert!(e == "behind the eyes" || e == "at the temples");
        }
        // extent falls back to GENERAL for every symptom.
        let e = b
            .pools
            .sample("extent", &SymptomId::new("cough"), &mut rng)
            .unwrap();
        assert!(["mild", "quite bad", "slight"].contains(&e));
    }
}
