//! Uncertainty gate: answer from the local window when the answer
//! distribution is confident, recall history otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{entropy, Distribution};

/// Entropy threshold, in nats.
pub const DEFAULT_DELTA_NATS: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    LocalAnswer,
    Recall,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateDecision {
    pub entropy_nats: f64,
    /// `+∞` means "never recall"; written as the string `"inf"` in JSON.
    #[serde(with = "threshold_serde")]
    pub threshold_nats: f64,
    pub branch: Branch,
}

mod threshold_serde {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) => Err(de::Error::custom(format!("invalid threshold {t:?}"))),
        }
    }
}

/// Recall fires when `H ≥ δ`; only a strictly smaller entropy answers locally.
pub fn decide(local_dist: &Distribution, delta: f64) -> Result<GateDecision> {
    if delta.is_nan() || delta < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "gate threshold must be non-negative, got {delta}"
        )));
    }
    let h = entropy(local_dist);
    let branch = if h < delta {
        Branch::LocalAnswer
    } else {
        Branch::Recall
    };
    Ok(GateDecision {
        entropy_nats: h,
        threshold_nats: delta,
        branch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dist(p: &[f64]) -> Distribution {
        Distribution::new(p.to_vec()).unwrap()
    }

    #[test]
    fn default_threshold() {
        assert_eq!(DEFAULT_DELTA_NATS, 0.6);
    }

    #[test]
    fn one_hot_answers_locally() {
        let g = decide(&dist(&[0.0, 1.0, 0.0, 0.0]), 0.6).unwrap();
        assert_eq!(g.entropy_nats, 0.0);
        assert_eq!(g.branch, Branch::LocalAnswer);
    }

    #[test]
    fn uniform_recalls() {
        let g = decide(&Distribution::uniform(4).unwrap(), 0.6).unwrap();
        assert!((g.entropy_nats - 1.386_294_361_119_890_6).abs() < 1e-12);
        assert_eq!(g.branch, Branch::Recall);
    }

    #[test]
    fn boundary_recalls() {
        let d = dist(&[0.5, 0.5]);
        let h = entropy(&d);
        assert_eq!(decide(&d, h).unwrap().branch, Branch::Recall);
        assert_eq!(decide(&d, h.next_up()).unwrap().branch, Branch::LocalAnswer);
    }

    #[test]
    fn extreme_thresholds() {
        let one_hot = dist(&[1.0]);
        assert_eq!(decide(&one_hot, 0.0).unwrap().branch, Branch::Recall);
        let d = dist(&[0.7, 0.2, 0.1]);
        assert_eq!(
            decide(&d, f64::INFINITY).unwrap().branch,
            Branch::LocalAnswer
        );
        assert_eq!(
            decide(&d, 3f64.ln() + 1e-12).unwrap().branch,
            Branch::LocalAnswer
        );
        assert!(decide(&d, -0.1).is_err());
        assert!(decide(&d, f64::NAN).is_err());
    }

    #[test]
    fn infinite_threshold_roundtrips_through_json() {
        let g = decide(&dist(&[0.5, 0.5]), f64::INFINITY).unwrap();
        let json = serde_json::to_string(&g).unwrap();
        assert!(json.contains("\"threshold_nats\":\"inf\""), "{json}");
        let back: GateDecision = serde_json::from_str(&json).unwrap();
        assert_eq!(back, g);
    }

    proptest! {
        #[test]
        fn recall_set_shrinks_as_threshold_grows(
            raw in prop::collection::vec(0.0f64..1.0, 1..12),
            d1 in 0.0f64..3.0,
            d2 in 0.0f64..3.0,
        ) {
            let total: f64 = raw.iter().sum();
            prop_assume!(total > 0.0);
            let d = Distribution::new(raw.iter().map(|x| x / total).collect()).unwrap();
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            if decide(&d, hi).unwrap().branch == Branch::Recall {
                prop_assert_eq!(decide(&d, lo).unwrap().branch, Branch::Recall);
            }
        }
    }
}
