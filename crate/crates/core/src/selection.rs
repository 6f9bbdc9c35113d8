//! Per-instance multi-label BCE and the loss-threshold split into
//! `D_error` / `D_correct`.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{LabelSpace, Prediction, RelationInstance};
use crate::error::{Error, Result};

pub const DEFAULT_EPSILON: f64 = 1e-12;

/// Multi-label binary cross-entropy summed over labels.
///
/// Probabilities are clamped into `[epsilon, 1 - epsilon]` before taking logs.
pub fn instance_loss(y: &[bool], yhat: &[f64], epsilon: f64) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::LengthMismatch {
            expected: y.len(),
            actual: yhat.len(),
        });
    }
    if !(epsilon > 0.0 && epsilon < 0.5) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside (0, 0.5)")));
    }
    let mut loss = 0.0;
    for (&target, &p) in y.iter().zip(yhat) {
        if p.is_nan() {
            return Err(Error::invalid("NaN probability"));
        }
        let p = p.clamp(epsilon, 1.0 - epsilon);
        loss -= if target { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub instance_id: String,
    pub loss: f64,
    /// Thresholded prediction set equals the reference set exactly.
    pub correct: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    /// `None` selects the data-driven default: mean + one (population)
    /// standard deviation of the observed losses.
    pub tau: Option<f64>,
    pub epsilon: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            tau: None,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl SelectionConfig {
    pub fn with_tau(tau: f64) -> Self {
        Self {
            tau: Some(tau),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(tau) = self.tau {
            if tau.is_nan() || tau < 0.0 {
                return Err(Error::invalid(format!("tau must be >= 0, got {tau}")));
            }
        }
        if !(self.epsilon > 0.0 && self.epsilon < 0.5) {
            return Err(Error::invalid(format!("epsilon {} outside (0, 0.5)", self.epsilon)));
        }
        Ok(())
    }
}

/// Mean plus one population standard deviation; `+inf` for no losses.
pub fn data_driven_tau(losses: &[f64]) -> f64 {
    if losses.is_empty() {
        return f64::INFINITY;
    }
    let n = losses.len() as f64;
    let mean = losses.iter().sum::<f64>() / n;
    let var = losses.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / n;
    mean + var.sqrt()
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub error: Vec<RelationInstance>,
    pub correct: Vec<RelationInstance>,
    /// One record per input instance, in input order.
    pub records: Vec<LossRecord>,
    pub tau: f64,
}

/// Scores every instance and splits the input by `loss > tau`.
pub fn loss_records(
    instances: &[RelationInstance],
    predictions: &[Prediction],
    labels: &LabelSpace,
    epsilon: f64,
) -> Result<Vec<LossRecord>> {
    let mut by_id: HashMap<&str, &Prediction> = HashMap::with_capacity(predictions.len());
    for p in predictions {
        if by_id.insert(p.instance_id.as_str(), p).is_some() {
            return Err(Error::Validation {
                id: p.instance_id.clone(),
                message: "more than one prediction".into(),
            });
        }
    }
    instances
        .iter()
        .map(|instance| {
            let prediction = by_id.get(instance.id.as_str()).ok_or_else(|| Error::Validation {
                id: instance.id.clone(),
                message: "no prediction for instance".into(),
            })?;
            prediction.validate(labels)?;
            let y = labels.indicator(&instance.reference_relations);
            let loss = instance_loss(&y, &prediction.scores, epsilon)?;
            Ok(LossRecord {
                instance_id: instance.id.clone(),
                loss,
                correct: prediction.predicted_relations(labels) == instance.reference_relations,
            })
        })
        .collect()
}

pub fn partition(
    instances: &[RelationInstance],
    predictions: &[Prediction],
    labels: &LabelSpace,
    config: &SelectionConfig,
) -> Result<Partition> {
    config.validate()?;
    let records = loss_records(instances, predictions, labels, config.epsilon)?;
    let tau = config.tau.unwrap_or_else(|| {
        data_driven_tau(&records.iter().map(|r| r.loss).collect::<Vec<_>>())
    });
    let (error, correct) = split_by_threshold(instances, &records, tau);
    Ok(Partition {
        error,
        correct,
        records,
        tau,
    })
}

pub(crate) fn split_by_threshold(
    instances: &[RelationInstance],
    records: &[LossRecord],
    tau: f64,
) -> (Vec<RelationInstance>, Vec<RelationInstance>) {
    let mut error = Vec::new();
    let mut correct = Vec::new();
    for (instance, record) in instances.iter().zip(records) {
        if record.loss > tau {
            error.push(instance.clone());
        } else {
            correct.push(instance.clone());
        }
    }
    (error, correct)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntitySpan, Split};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn near_perfect_prediction_is_near_zero() {
        let eps = DEFAULT_EPSILON;
        let loss = instance_loss(&[true, false], &[1.0 - eps, eps], eps).unwrap();
        assert!(loss >= 0.0 && loss <= 2.0 * (1.0 - eps).ln().abs());
        // exact 0/1 scores clamp to the same value
        let clamped = instance_loss(&[true, false], &[1.0, 0.0], eps).unwrap();
        assert_eq!(loss, clamped);
    }

    #[test]
    fn uniform_half_scores_cost_two_ln_two() {
        let loss = instance_loss(&[true, false], &[0.5, 0.5], DEFAULT_EPSILON).unwrap();
        assert_abs_diff_eq!(loss, 2.0 * std::f64::consts::LN_2, epsilon = 1e-12);
    }

    #[test]
    fn three_label_reference_value() {
        // -(ln 0.9 + ln 0.8 + ln 0.9), evaluated independently in Python
        let loss = instance_loss(&[true, true, false], &[0.9, 0.8, 0.1], DEFAULT_EPSILON).unwrap();
        assert_abs_diff_eq!(loss, 0.433_864_582_629_862_27, epsilon = 1e-12);
    }

    #[test]
    fn length_mismatch_errors() {
        assert!(matches!(
            instance_loss(&[true], &[0.1, 0.2], DEFAULT_EPSILON),
            Err(Error::LengthMismatch { expected: 1, actual: 2 })
        ));
    }

    fn fixture(n: usize) -> (Vec<RelationInstance>, LabelSpace) {
        let labels = LabelSpace::new(["a", "b"]).unwrap();
        let instances = (0..n)
            .map(|i| RelationInstance {
                id: format!("i{i}"),
                sentence: "X binds Y".into(),
                entity1: EntitySpan::new("X", 0, 1),
                entity2: EntitySpan::new("Y", 8, 9),
                reference_relations: ["a".to_string()].into(),
                split: Split::Train,
            })
            .collect();
        (instances, labels)
    }

    fn split_ids(p: &Partition) -> (Vec<&str>, Vec<&str>) {
        (
            p.error.iter().map(|i| i.id.as_str()).collect(),
            p.correct.iter().map(|i| i.id.as_str()).collect(),
        )
    }

    #[test]
    fn threshold_split_matches_direct_comparison() {
        let (instances, _) = fixture(4);
        let losses = [0.2, 1.5, 0.9, 2.1];
        let records: Vec<LossRecord> = instances
            .iter()
            .zip(losses)
            .map(|(i, loss)| LossRecord {
                instance_id: i.id.clone(),
                loss,
                correct: false,
            })
            .collect();
        let (error, correct) = split_by_threshold(&instances, &records, 1.0);
        let ids = |v: &[RelationInstance]| v.iter().map(|i| i.id.clone()).collect::<Vec<_>>();
        assert_eq!(ids(&error), ["i1", "i3"]);
        assert_eq!(ids(&correct), ["i0", "i2"]);
    }

    #[test]
    fn degenerate_thresholds() {
        let (instances, labels) = fixture(3);
        let predictions: Vec<Prediction> = instances
            .iter()
            .map(|i| Prediction {
                instance_id: i.id.clone(),
                scores: vec![0.7, 0.2],
            })
            .collect();
        let all_correct =
            partition(&instances, &predictions, &labels, &SelectionConfig::with_tau(f64::INFINITY)).unwrap();
        assert!(all_correct.error.is_empty());
        assert_eq!(all_correct.correct.len(), 3);
        assert!(all_correct.records.iter().all(|r| r.correct));

        let all_error = partition(&instances, &predictions, &labels, &SelectionConfig::with_tau(0.0)).unwrap();
        assert!(all_error.correct.is_empty());
        assert_eq!(split_ids(&all_error).0, ["i0", "i1", "i2"]);
    }

    #[test]
    fn missing_prediction_is_an_error() {
        let (instances, labels) = fixture(2);
        let predictions = vec![Prediction {
            instance_id: "i0".into(),
            scores: vec![0.5, 0.5],
        }];
        let err = partition(&instances, &predictions, &labels, &SelectionConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Validation { ref id, .. } if id == "i1"));
    }

    #[test]
    fn data_driven_tau_is_mean_plus_population_std() {
        assert_abs_diff_eq!(data_driven_tau(&[1.0, 3.0]), 3.0, epsilon = 1e-15);
        assert_eq!(data_driven_tau(&[]), f64::INFINITY);
    }

    #[test]
    fn negative_tau_is_rejected() {
        assert!(SelectionConfig::with_tau(-1.0).validate().is_err());
    }

    proptest! {
        #[test]
        fn loss_is_nonnegative(pairs in prop::collection::vec((any::<bool>(), 0.0f64..=1.0), 1..20)) {
            let (y, p): (Vec<bool>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assert!(instance_loss(&y, &p, DEFAULT_EPSILON).unwrap() >= 0.0);
        }

        #[test]
        fn partition_is_stable_disjoint_cover_and_monotone(
            scores in prop::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 0..30),
            tau_lo in 0.0f64..5.0,
            bump in 0.0f64..5.0,
        ) {
            let (instances, labels) = fixture(scores.len());
            let predictions: Vec<Prediction> = instances.iter().zip(&scores)
                .map(|(i, (a, b))| Prediction { instance_id: i.id.clone(), scores: vec![*a, *b] })
                .collect();
            let lo = partition(&instances, &predictions, &labels, &SelectionConfig::with_tau(tau_lo)).unwrap();
            let hi = partition(&instances, &predictions, &labels, &SelectionConfig::with_tau(tau_lo + bump)).unwrap();
            prop_assert_eq!(lo.error.len() + lo.correct.len(), instances.len());
            // merging the two halves by input position restores the input
            let (err, cor) = split_ids(&lo);
            let mut merged: Vec<&str> = err.iter().chain(cor.iter()).copied().collect();
            merged.sort_by_key(|id| id[1..].parse::<usize>().unwrap());
            let input: Vec<&str> = instances.iter().map(|i| i.id.as_str()).collect();
            prop_assert_eq!(merged, input);
            for half in [&err, &cor] {
                let pos: Vec<usize> = half.iter().map(|id| id[1..].parse().unwrap()).collect();
                prop_assert!(pos.windows(2).all(|w| w[0] < w[1]));
            }
            prop_assert!(hi.error.len() <= lo.error.len());
        }
    }
}
