//! Difficulty buckets, the Baby Steps cumulative schedule and stage losses.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::jsonl;

pub const MAX_DIFFICULTY: u8 = 5;

/// Maps each difficulty score 0..=5 to a 1-based bucket.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawBucketSpec", into = "RawBucketSpec")]
pub struct BucketSpec {
    mapping: [usize; 6],
}

#[derive(Serialize, Deserialize)]
struct RawBucketSpec {
    mapping: [usize; 6],
}

impl TryFrom<RawBucketSpec> for BucketSpec {
    type Error = Error;

    fn try_from(raw: RawBucketSpec) -> Result<Self> {
        BucketSpec::new(raw.mapping)
    }
}

impl From<BucketSpec> for RawBucketSpec {
    fn from(spec: BucketSpec) -> Self {
        RawBucketSpec { mapping: spec.mapping }
    }
}

impl Default for BucketSpec {
    fn default() -> Self {
        Self {
            mapping: [1, 2, 2, 3, 4, 5],
        }
    }
}

impl BucketSpec {
    /// `mapping[h]` is the bucket of score `h`. Buckets must start at 1,
    /// never decrease, and never skip an index.
    pub fn new(mapping: [usize; 6]) -> Result<Self> {
        if mapping[0] != 1 {
            return Err(Error::invalid("score 0 must map to bucket 1"));
        }
        for w in mapping.windows(2) {
            if w[1] < w[0] || w[1] > w[0] + 1 {
                return Err(Error::invalid(format!(
                    "bucket mapping {mapping:?} must be monotone and contiguous"
                )));
            }
        }
        Ok(Self { mapping })
    }

    /// Every score in one bucket.
    pub fn single() -> Self {
        Self { mapping: [1; 6] }
    }

    pub fn num_buckets(&self) -> usize {
        self.mapping[5]
    }

    pub fn mapping(&self) -> [usize; 6] {
        self.mapping
    }

    pub fn bucket_of(&self, difficulty: u8) -> Result<usize> {
        self.mapping
            .get(usize::from(difficulty))
            .copied()
            .ok_or_else(|| Error::invalid(format!("difficulty {difficulty} is outside 0..={MAX_DIFFICULTY}")))
    }
}

/// Splits `(id, difficulty)` entries into buckets, keeping input order
/// within each bucket.
pub fn partition(entries: &[(String, u8)], spec: &BucketSpec) -> Result<Vec<Vec<String>>> {
    let mut buckets = vec![Vec::new(); spec.num_buckets()];
    for (id, h) in entries {
        let b = spec.bucket_of(*h).map_err(|e| Error::Validation {
            id: id.clone(),
            message: e.to_string(),
        })?;
        buckets[b - 1].push(id.clone());
    }
    Ok(buckets)
}

/// Cumulative stage pools. `reverse` walks the buckets hardest first.
pub fn baby_steps(buckets: &[Vec<String>], reverse: bool) -> Vec<Vec<String>> {
    let ordered: Vec<&Vec<String>> = if reverse {
        buckets.iter().rev().collect()
    } else {
        buckets.iter().collect()
    };
    let mut pool: Vec<String> = Vec::new();
    ordered
        .into_iter()
        .map(|b| {
            pool.extend(b.iter().cloned());
            pool.clone()
        })
        .collect()
}

/// Mean loss over a stage pool; `None` for an empty pool.
pub fn stage_loss(pool: &[String], losses: &HashMap<String, f64>) -> Result<Option<f64>> {
    if pool.is_empty() {
        return Ok(None);
    }
    let mut sum = 0.0;
    for id in pool {
        sum += losses
            .get(id)
            .ok_or_else(|| Error::invalid(format!("no loss recorded for instance {id}")))?;
    }
    Ok(Some(sum / pool.len() as f64))
}

/// Sum of stage losses; fails if any stage has no loss.
pub fn total_loss(stage_losses: &[Option<f64>]) -> Result<f64> {
    stage_losses.iter().enumerate().try_fold(0.0, |acc, (k, l)| {
        l.map(|l| acc + l)
            .ok_or_else(|| Error::invalid(format!("stage {} has no loss (empty pool)", k + 1)))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageOrder {
    EasyToHard,
    HardToEasy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSchedule {
    pub spec: BucketSpec,
    pub order: StageOrder,
    pub buckets: Vec<Vec<String>>,
    pub stages: Vec<Vec<String>>,
    pub stage_losses: Option<Vec<Option<f64>>>,
    pub total_loss: Option<f64>,
}

impl CurriculumSchedule {
    pub fn build(entries: &[(String, u8)], spec: &BucketSpec, order: StageOrder) -> Result<Self> {
        let buckets = partition(entries, spec)?;
        let stages = baby_steps(&buckets, order == StageOrder::HardToEasy);
        Ok(Self {
            spec: spec.clone(),
            order,
            buckets,
            stages,
            stage_losses: None,
            total_loss: None,
        })
    }

    /// Fills in stage losses, and the total when every stage has one.
    pub fn with_losses(mut self, losses: &HashMap<String, f64>) -> Result<Self> {
        let stage_losses = self
            .stages
            .iter()
            .map(|pool| stage_loss(pool, losses))
            .collect::<Result<Vec<_>>>()?;
        self.total_loss = total_loss(&stage_losses).ok();
        self.stage_losses = Some(stage_losses);
        Ok(self)
    }

    pub fn bucket_sizes(&self) -> Vec<usize> {
        self.buckets.iter().map(Vec::len).collect()
    }

    pub fn stage_sizes(&self) -> Vec<usize> {
        self.stages.iter().map(Vec::len).collect()
    }

    pub fn loss_report(&self) -> Option<LossReport> {
        self.stage_losses.as_ref().map(|s| LossReport {
            stage_losses: s.clone(),
            total_loss: self.total_loss,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanStage {
    pub k: usize,
    pub epoch_budget: u32,
    pub instance_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub order: StageOrder,
    pub stages: Vec<PlanStage>,
}

impl TrainingPlan {
    pub fn from_schedule(schedule: &CurriculumSchedule, epoch_budget: u32) -> Self {
        Self {
            order: schedule.order,
            stages: schedule
                .stages
                .iter()
                .enumerate()
                .map(|(i, pool)| PlanStage {
                    k: i + 1,
                    epoch_budget,
                    instance_ids: pool.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub stage_losses: Vec<Option<f64>>,
    pub total_loss: Option<f64>,
}

pub fn emit_training_plan(schedule: &CurriculumSchedule, epoch_budget: u32, path: &Path) -> Result<()> {
    jsonl::write_json(path, &TrainingPlan::from_schedule(schedule, epoch_budget))
}

pub fn load_training_plan(path: &Path) -> Result<TrainingPlan> {
    jsonl::read_json(path)
}
