//! Layer-importance planning: top-k layer selection and the diagonally
//! regularised objective `f(w) + ½ Σ d_l w_l²`.
//!
//! Importance statistics are supplied from outside, for example per-layer
//! gradient norms exported by a training harness.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_LAMBDA: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImportanceSource {
    GradientNorm,
    FisherDiag,
    Supplied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerImportance {
    pub scores: Vec<f64>,
    pub source: ImportanceSource,
}

impl LayerImportance {
    pub fn new(scores: Vec<f64>, source: ImportanceSource) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::invalid("layer importance needs at least one layer"));
        }
        if let Some((i, s)) = scores.iter().enumerate().find(|(_, s)| !s.is_finite() || **s < 0.0) {
            return Err(Error::invalid(format!("layer {i}: importance {s} must be finite and nonnegative")));
        }
        Ok(Self { scores, source })
    }

    pub fn num_layers(&self) -> usize {
        self.scores.len()
    }
}

pub fn importance_from_gradients(norms: &[f64]) -> Result<LayerImportance> {
    LayerImportance::new(norms.to_vec(), ImportanceSource::GradientNorm)
}

/// Indices of the `k` most important layers, ties going to the lower index.
pub fn select_layers(importance: &LayerImportance, k: usize) -> BTreeSet<usize> {
    let mut order: Vec<usize> = (0..importance.num_layers()).collect();
    order.sort_by(|&a, &b| importance.scores[b].total_cmp(&importance.scores[a]).then(a.cmp(&b)));
    order.into_iter().take(k).collect()
}

/// `f_value + ½ Σ reg_diag[l] · w[l]²`.
pub fn regularized_objective(f_value: f64, w: &[f64], reg_diag: &[f64]) -> Result<f64> {
    if w.len() != reg_diag.len() {
        return Err(Error::LengthMismatch {
            expected: reg_diag.len(),
            actual: w.len(),
        });
    }
    let penalty: f64 = w.iter().zip(reg_diag).map(|(w, d)| d * w * w).sum();
    Ok(f_value + 0.5 * penalty)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LisaPlan {
    pub selected: Vec<usize>,
    pub k: usize,
    /// Diagonal of the regulariser, one entry per layer.
    pub reg_diag: Vec<f64>,
}

/// Selects layers and assigns `lambda` to the selected layers' diagonal
/// entries, 0 elsewhere.
pub fn plan(importance: &LayerImportance, k: usize, lambda: f64) -> Result<LisaPlan> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if !lambda.is_finite() || lambda < 0.0 {
        return Err(Error::invalid(format!("lambda {lambda} must be finite and nonnegative")));
    }
    let selected = select_layers(importance, k);
    let reg_diag = (0..importance.num_layers())
        .map(|l| if selected.contains(&l) { lambda } else { 0.0 })
        .collect();
    Ok(LisaPlan {
        selected: selected.into_iter().collect(),
        k,
        reg_diag,
    })
}

/// Reads `layer_index<TAB>score` rows. Indices must cover 0..L exactly once.
pub fn load_importance(path: &Path) -> Result<LayerImportance> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<(usize, f64)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let (idx, score) = line
            .split_once('\t')
            .ok_or_else(|| Error::parse(path, n + 1, "expected `layer_index<TAB>score`"))?;
        let idx: usize = idx
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, n + 1, format!("bad layer index `{idx}`")))?;
        let score: f64 = score
            .trim()
            .parse()
            .map_err(|_| Error::parse(path, n + 1, format!("bad score `{score}`")))?;
        rows.push((idx, score));
    }
    rows.sort_by_key(|r| r.0);
    for (expected, (idx, _)) in rows.iter().enumerate() {
        if *idx != expected {
            return Err(Error::invalid(format!(
                "{}: layer indices must be 0..{} without gaps or repeats",
                path.display(),
                rows.len()
            )));
        }
    }
    LayerImportance::new(rows.into_iter().map(|r| r.1).collect(), ImportanceSource::Supplied)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gradient_norms_pass_through() {
        let imp = importance_from_gradients(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(imp.scores, [3.0, 1.0, 2.0]);
        assert_eq!(imp.source, ImportanceSource::GradientNorm);
        assert!(importance_from_gradients(&[0.0, 0.0]).is_ok());
        assert!(importance_from_gradients(&[1.0, f64::NAN]).is_err());
        assert!(importance_from_gradients(&[-1.0]).is_err());
    }

    #[test]
    fn selection_examples() {
        let imp = importance_from_gradients(&[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(select_layers(&imp, 2), [0, 2].into());
        assert_eq!(select_layers(&imp, 3), [0, 1, 2].into());
        assert_eq!(select_layers(&imp, 9), [0, 1, 2].into());
        let tied = importance_from_gradients(&[1.0; 4]).unwrap();
        assert_eq!(select_layers(&tied, 2), [0, 1].into());
    }

    #[test]
    fn objective_examples() {
        assert_eq!(regularized_objective(1.0, &[2.0], &[3.0]).unwrap(), 7.0);
        assert_eq!(regularized_objective(4.5, &[0.0, 0.0], &[1.0, 2.0]).unwrap(), 4.5);
        assert_eq!(regularized_objective(4.5, &[9.0, -3.0], &[0.0, 0.0]).unwrap(), 4.5);
        assert!(regularized_objective(0.0, &[1.0], &[]).is_err());
    }

    #[test]
    fn plan_assigns_lambda_to_selected_layers() {
        let imp = importance_from_gradients(&[0.5, 2.0, 1.0, 3.0]).unwrap();
        let p = plan(&imp, 2, DEFAULT_LAMBDA).unwrap();
        assert_eq!(p.selected, [1, 3]);
        assert_eq!(p.reg_diag, [0.0, 0.01, 0.0, 0.01]);
        assert!(plan(&imp, 0, 0.01).is_err());
    }

    #[test]
    fn importance_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("imp.tsv");
        std::fs::write(&path, "1\t0.5\n0\t2.0\n2\t1.0\n").unwrap();
        assert_eq!(load_importance(&path).unwrap().scores, [2.0, 0.5, 1.0]);
        std::fs::write(&path, "0\t1\n2\t1\n").unwrap();
        assert!(load_importance(&path).is_err());
        std::fs::write(&path, "0 1\n").unwrap();
        assert!(load_importance(&path).unwrap_err().to_string().contains(":1:"));
    }

    fn best_subset_total(scores: &[f64], k: usize) -> f64 {
        let n = scores.len();
        (0u32..1 << n)
            .filter(|m| m.count_ones() as usize == k)
            .map(|m| (0..n).filter(|i| m & (1 << i) != 0).map(|i| scores[i]).sum::<f64>())
            .fold(f64::NEG_INFINITY, f64::max)
    }

    proptest! {
        #[test]
        fn selection_maximises_total_importance(
            scores in prop::collection::vec(0.0f64..10.0, 1..=10),
            k in 1usize..=4,
        ) {
            let imp = importance_from_gradients(&scores).unwrap();
            let sel = select_layers(&imp, k);
            let k = k.min(scores.len());
            prop_assert_eq!(sel.len(), k);
            let total: f64 = sel.iter().map(|&i| scores[i]).sum();
            prop_assert!((total - best_subset_total(&scores, k)).abs() < 1e-9);
        }

        #[test]
        fn penalty_is_nonnegative(
            f in -100.0f64..100.0,
            pairs in prop::collection::vec((-50.0f64..50.0, 0.0f64..5.0), 0..16),
        ) {
            let (w, d): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            prop_assert!(regularized_objective(f, &w, &d).unwrap() >= f);
        }

        #[test]
        fn positive_scaling_keeps_selection(
            scores in prop::collection::vec(0.0f64..10.0, 1..=12),
            k in 1usize..=6,
            c in 0.01f64..100.0,
        ) {
            let a = importance_from_gradients(&scores).unwrap();
            let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
            let b = importance_from_gradients(&scaled).unwrap();
            prop_assert_eq!(select_layers(&a, k), select_layers(&b, k));
        }
    }
}
