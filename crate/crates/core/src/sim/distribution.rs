//! Utterance-type sampling distribution with the sub-15% boost applied.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::UtteranceType;
use crate::{Error, Result};

/// Raw occurrence percentages of each inquiry-response type, as measured on
/// seed data. Inquiry and response base types are categorical; the last four
/// entries are modifier flags that co-occur with a base type.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct RawTypePercentages {
    pub open_ended: f64,
    pub detailed: f64,
    pub multi_intent: f64,
    pub reconfirmation: f64,
    pub yes_no: f64,
    pub detailed_response: f64,
    pub inquiry_transitional: f64,
    pub response_transitional: f64,
    pub revision: f64,
    pub topic_drift: f64,
    /// Sampling floor each category is boosted to.
    pub floor: f64,
}

impl Default for RawTypePercentages {
    fn default() -> Self {
        RawTypePercentages {
            open_ended: 31.8,
            detailed: 33.0,
            multi_intent: 15.5,
            reconfirmation: 21.3,
            yes_no: 52.1,
            detailed_response: 29.4,
            inquiry_transitional: 8.5,
            response_transitional: 9.5,
            revision: 5.1,
            topic_drift: 11.1,
            floor: 0.15,
        }
    }
}

/// Boosted sampling distribution. Base-type weights sum to 1 within each
/// group; modifier flags are independent Bernoulli probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeDistribution {
    /// OpenEnded, Detailed, MultiIntent, Reconfirmation.
    pub inquiry: [f64; 4],
    /// YesNo, DetailedResponse.
    pub response: [f64; 2],
    pub p_inquiry_transitional: f64,
    pub p_response_transitional: f64,
    pub p_revision: f64,
    pub p_topic_drift: f64,
    pub floor: f64,
}

/// Normalizes each base-type group, raises every category below the floor to
/// the floor (rescaling the rest proportionally), and floors the modifier
/// probabilities. Fails if the boost would reorder the categories.
pub fn boost_distribution(raw: &RawTypePercentages) -> Result<TypeDistribution> {
    let floor = raw.floor;
    if !(0.0..0.5).contains(&floor) {
        return Err(Error::config("distribution", format!("floor {floor} out of range")));
    }
    let inquiry = boost_group(
        &[
            raw.open_ended,
            raw.detailed,
            raw.multi_intent,
            raw.reconfirmation,
        ],
        floor,
    )?;
    let response = boost_group(&[raw.yes_no, raw.detailed_response], floor)?;
    Ok(TypeDistribution {
        inquiry: inquiry.try_into().unwrap(),
        response: response.try_into().unwrap(),
        p_inquiry_transitional: (raw.inquiry_transitional / 100.0).max(floor),
        p_response_transitional: (raw.response_transitional / 100.0).max(floor),
        p_revision: (raw.revision / 100.0).max(floor),
        p_topic_drift: (raw.topic_drift / 100.0).max(floor),
        floor,
    })
}

fn boost_group(raw: &[f64], floor: f64) -> Result<Vec<f64>> {
    if raw.iter().any(|&x| x <= 0.0) {
        return Err(Error::config("distribution", "raw percentages must be positive"));
    }
    if floor * raw.len() as f64 >= 1.0 {
        return Err(Error::config("distribution", "floor too high for group size"));
    }
    let sum: f64 = raw.iter().sum();
    let mut w: Vec<f64> = raw.iter().map(|x| x / sum).collect();
    // Proportional rescaling can push a previously above-floor category
    // below the floor, so repeat until stable.
    loop {
        let below: Vec<usize> = (0..w.len()).filter(|&i| w[i] < floor).collect();
        if below.is_empty() {
            break;
        }
        let fixed: f64 = w
            .iter()
            .enumerate()
            .filter(|(i, _)| below.contains(i) || w[*i] == floor)
            .map(|(i, &x)| if below.contains(&i) { floor } else { x })
            .sum();
        let free: f64 = w
            .iter()
            .enumerate()
            .filter(|(i, &x)| !below.contains(i) && x != floor)
            .map(|(_, &x)| x)
            .sum();
        let scale = (1.0 - fixed) / free;
        for i in 0..w.len() {
            if below.contains(&i) {
                w[i] = floor;
            } else if w[i] != floor {
                w[i] *= scale;
            }
        }
    }
    // Boosting must not change the relative ranking.
    let rank = |v: &[f64]| {
        let mut idx: Vec<usize> = (0..v.len()).collect();
        idx.sort_by(|&a, &b| v[b].partial_cmp(&v[a]).unwrap().then(a.cmp(&b)));
        idx
    };
    if rank(raw) != rank(&w) {
        return Err(Error::config(
            "distribution",
            "boost would reorder the type ranking",
        ));
    }
    Ok(w)
}

/// Weighted draw from a normalized weight slice.
pub fn draw_categorical(weights: &[f64], rng: &mut impl Rng) -> usize {
    let x: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if x < acc {
            return i;
        }
    }
    weights.len() - 1
}

impl TypeDistribution {
    pub fn draw_inquiry_base(&self, rng: &mut impl Rng) -> UtteranceType {
        UtteranceType::INQUIRY_BASES[draw_categorical(&self.inquiry, rng)]
    }

    pub fn draw_response_base(&self, rng: &mut impl Rng) -> UtteranceType {
        UtteranceType::RESPONSE_BASES[draw_categorical(&self.response, rng)]
    }

    /// Target fraction for a label, for distribution-fidelity reporting.
    pub fn target(&self, label: UtteranceType) -> f64 {
        match label {
            UtteranceType::OpenEnded => self.inquiry[0],
            UtteranceType::Detailed => self.inquiry[1],
            UtteranceType::MultiIntent => self.inquiry[2],
            UtteranceType::Reconfirmation => self.inquiry[3],
            UtteranceType::YesNo => self.response[0],
            UtteranceType::DetailedResponse => self.response[1],
            UtteranceType::Revision => self.p_revision,
            UtteranceType::TopicDrift => self.p_topic_drift,
            // Transitional targets differ by role; exposed separately.
            UtteranceType::TransitionalClause => self.p_inquiry_transitional,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_floor_modifiers_are_boosted_to_floor() {
        let d = boost_distribution(&RawTypePercentages::default()).unwrap();
        // Revision 5.1 and both transitional categories sit below 15.
        assert_eq!(d.p_revision, 0.15);
        assert_eq!(d.p_inquiry_transitional, 0.15);
        assert_eq!(d.p_response_transitional, 0.15);
        assert_eq!(d.p_topic_drift, 0.15);
    }

    #[test]
    fn inquiry_group_is_pure_renormalization() {
        let d = boost_distribution(&RawTypePercentages::default()).unwrap();
        // Hand renormalization of (31.8, 33.0, 15.5, 21.3), sum 101.6.
        let sum = 31.8 + 33.0 + 15.5 + 21.3;
        let expect = [31.8 / sum, 33.0 / sum, 15.5 / sum, 21.3 / sum];
        for (got, want) in d.inquiry.iter().zip(expect) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
        // Ranking Detailed > OpenEnded > Reconfirmation > MultiIntent.
        assert!(d.inquiry[1] > d.inquiry[0]);
        assert!(d.inquiry[0] > d.inquiry[3]);
        assert!(d.inquiry[3] > d.inquiry[2]);
        assert!((d.inquiry.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn below_floor_base_type_is_raised_and_rest_rescaled() {
        let raw = RawTypePercentages {
            open_ended: 60.0,
            detailed: 25.0,
            multi_intent: 10.0,
            reconfirmation: 5.0,
            ..Default::default()
        };
        let d = boost_distribution(&raw).unwrap();
        assert!(d.inquiry[2] >= 0.15 - 1e-12);
        assert!(d.inquiry[3] >= 0.15 - 1e-12);
        assert!((d.inquiry.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Above-floor mass keeps its internal proportions.
        assert!((d.inquiry[0] / d.inquiry[1] - 60.0 / 25.0).abs() < 1e-9);
        // Ranking preserved.
        assert!(d.inquiry[0] > d.inquiry[1]);
        assert!(d.inquiry[1] > d.inquiry[2]);
        assert!(d.inquiry[2] >= d.inquiry[3]);
    }

    #[test]
    fn response_group_normalizes() {
        let d = boost_distribution(&RawTypePercentages::default()).unwrap();
        let sum = 52.1 + 29.4;
        assert!((d.response[0] - 52.1 / sum).abs() < 1e-12);
        assert!((d.response[1] - 29.4 / sum).abs() < 1e-12);
    }
}
