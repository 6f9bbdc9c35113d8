//! Stage-1 student artifacts: `D_mimic`, few-shot exemplar blocks, the
//! instruction-tuning file, and the annotated corpus `D_aug`.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{LabelSpace, RelationInstance};
use crate::error::{Error, Result};
use crate::kg::Kg;
use crate::remediation::{analyze, remediate_one, RemediatedInstance, RemediationConfig, RemediationRecord};
use crate::taxonomy::{ErrorTag, ErrorType};
use crate::teacher::prompt::{remediation_rules, PromptRole, PromptTemplate};
use crate::teacher::TeacherGateway;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Remediated,
    CorrectPassthrough,
}

/// What the student is trained to produce for one instance.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MimicTargets {
    pub error_types: BTreeSet<ErrorType>,
    pub difficulty: u8,
    pub tags: Vec<ErrorTag>,
    /// Heuristics of the applied remediation rules.
    pub remediation: Vec<String>,
    pub rewritten_sentence: Option<String>,
    pub kg_needed: bool,
    pub solution_guidance: Vec<String>,
}

impl MimicTargets {
    pub fn from_remediated(x: &RemediatedInstance) -> Self {
        Self {
            error_types: x.error_types.clone(),
            difficulty: x.difficulty,
            tags: x.tags.clone(),
            remediation: x.tags.iter().map(|t| t.heuristic().to_string()).collect(),
            rewritten_sentence: x.rewritten_sentence.clone(),
            kg_needed: x.kg_needed,
            solution_guidance: x.solution_guidance.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MimicExample {
    #[serde(flatten)]
    pub instance: RelationInstance,
    pub targets: MimicTargets,
    pub provenance: Provenance,
}

impl AsRef<RelationInstance> for MimicExample {
    fn as_ref(&self) -> &RelationInstance {
        &self.instance
    }
}

fn strata_key(x: &RelationInstance) -> String {
    x.reference_relations.iter().cloned().collect::<Vec<_>>().join("|")
}

/// Seeded label-stratified sample of `n` instances, returned in input order.
///
/// Labels are covered first, one instance each in label order, then the
/// remaining slots are filled round-robin over label-set strata.
pub fn stratified_sample(pool: &[RelationInstance], n: usize, seed: u64) -> Result<Vec<RelationInstance>> {
    if n > pool.len() {
        return Err(Error::invalid(format!(
            "sample size {n} exceeds the {} available correct instances",
            pool.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.shuffle(&mut rng);

    let mut chosen: BTreeSet<usize> = BTreeSet::new();
    let labels: BTreeSet<&String> = pool.iter().flat_map(|x| &x.reference_relations).collect();
    for label in labels {
        if chosen.len() == n {
            break;
        }
        if chosen.iter().any(|&i| pool[i].reference_relations.contains(label)) {
            continue;
        }
        if let Some(&i) = order.iter().find(|&&i| pool[i].reference_relations.contains(label)) {
            chosen.insert(i);
        }
    }

    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for &i in &order {
        if !chosen.contains(&i) {
            strata.entry(strata_key(&pool[i])).or_default().push(i);
        }
    }
    let mut queues: Vec<std::collections::VecDeque<usize>> = strata.into_values().map(Into::into).collect();
    while chosen.len() < n {
        for q in queues.iter_mut() {
            if chosen.len() == n {
                break;
            }
            if let Some(i) = q.pop_front() {
                chosen.insert(i);
            }
        }
    }
    Ok(chosen.into_iter().map(|i| pool[i].clone()).collect())
}

/// `D_mimic`: every remediated instance followed by a stratified sample of
/// correct instances with empty targets.
pub fn build_d_mimic(
    d_rem: &[RemediatedInstance],
    d_correct: &[RelationInstance],
    sample_size: usize,
    seed: u64,
) -> Result<Vec<MimicExample>> {
    let rem_ids: HashSet<&str> = d_rem.iter().map(|x| x.instance.id.as_str()).collect();
    if let Some(x) = d_correct.iter().find(|x| rem_ids.contains(x.id.as_str())) {
        return Err(Error::invalid(format!("instance {} is both remediated and correct", x.id)));
    }
    let mut out: Vec<MimicExample> = d_rem
        .iter()
        .map(|x| MimicExample {
            instance: x.instance.clone(),
            targets: MimicTargets::from_remediated(x),
            provenance: Provenance::Remediated,
        })
        .collect();
    out.extend(
        stratified_sample(d_correct, sample_size, seed)?
            .into_iter()
            .map(|instance| MimicExample {
                instance,
                targets: MimicTargets::default(),
                provenance: Provenance::CorrectPassthrough,
            }),
    );
    Ok(out)
}

/// The default number of sampled correct instances.
pub fn default_sample_size(d_rem: usize, d_correct: usize) -> usize {
    d_rem.min(d_correct)
}

/// Student-facing rendering of an instance.
pub fn render_input(x: &RelationInstance) -> String {
    format!(
        "Sentence: {} | Entity 1: {} | Entity 2: {}",
        x.sentence, x.entity1.surface, x.entity2.surface
    )
}

pub fn render_output(targets: &MimicTargets) -> String {
    serde_json::to_string(targets).unwrap_or_default()
}

/// Chooses `k` exemplars covering as many difficulty tiers as possible.
///
/// Tiers are visited easiest, hardest, second easiest, second hardest and so
/// on, taking one exemplar per visit; the chosen exemplars are returned
/// ordered by difficulty, then pool order.
pub fn select_exemplars(pool: &[MimicExample], k: usize) -> Result<Vec<&MimicExample>> {
    if k > pool.len() {
        return Err(Error::invalid(format!("cannot pick {k} exemplars from a pool of {}", pool.len())));
    }
    let mut tiers: BTreeMap<u8, std::collections::VecDeque<usize>> = BTreeMap::new();
    for (i, x) in pool.iter().enumerate() {
        tiers.entry(x.targets.difficulty).or_default().push_back(i);
    }
    let keys: Vec<u8> = tiers.keys().copied().collect();
    let mut visit = Vec::with_capacity(keys.len());
    let (mut lo, mut hi) = (0usize, keys.len());
    while lo < hi {
        visit.push(keys[lo]);
        lo += 1;
        if lo < hi {
            hi -= 1;
            visit.push(keys[hi]);
        }
    }
    let mut picked = Vec::with_capacity(k);
    while picked.len() < k {
        for tier in &visit {
            if picked.len() == k {
                break;
            }
            if let Some(i) = tiers.get_mut(tier).and_then(|q| q.pop_front()) {
                picked.push(i);
            }
        }
    }
    picked.sort_by_key(|&i| (pool[i].targets.difficulty, i));
    Ok(picked.into_iter().map(|i| &pool[i]).collect())
}

/// Fixed-template block of `k` exemplars; empty when `k` is 0.
pub fn render_fewshot_block(exemplars: &[MimicExample], k: usize) -> Result<String> {
    let template = PromptTemplate::builtin(PromptRole::MimicExemplar);
    let chosen = select_exemplars(exemplars, k)?;
    let mut blocks = Vec::with_capacity(chosen.len());
    for (n, x) in chosen.into_iter().enumerate() {
        let index = (n + 1).to_string();
        let input = render_input(&x.instance);
        let output = render_output(&x.targets);
        blocks.push(template.render(&[("index", &index), ("input", &input), ("output", &output)])?.trim_end().to_string());
    }
    Ok(blocks.join("\n\n"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

/// Instruction-tuning records for every example of `D_mimic`.
pub fn instruction_dataset(
    examples: &[MimicExample],
    labels: &LabelSpace,
    fewshot_block: &str,
    delta: usize,
) -> Result<Vec<InstructionRecord>> {
    let rules = remediation_rules(delta);
    let label_text = labels.labels().join(", ");
    let instruction = PromptTemplate::builtin(PromptRole::MimicInstruction)
        .render(&[("rules", &rules), ("label_space", &label_text), ("exemplars", fewshot_block)])?
        .trim_end()
        .to_string();
    Ok(examples
        .iter()
        .map(|x| InstructionRecord {
            instruction: instruction.clone(),
            input: render_input(&x.instance),
            output: render_output(&x.targets),
        })
        .collect())
}

/// An element of `D_aug`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedInstance {
    #[serde(flatten)]
    pub instance: RelationInstance,
    pub enriched_sentence: String,
    pub difficulty: u8,
    pub provenance: Provenance,
    /// Id of the remediation record applied to this instance.
    pub remediation_id: Option<String>,
    pub error_types: BTreeSet<ErrorType>,
    pub tags: Vec<ErrorTag>,
    pub note: Option<String>,
}

impl AsRef<RelationInstance> for AugmentedInstance {
    fn as_ref(&self) -> &RelationInstance {
        &self.instance
    }
}

impl AugmentedInstance {
    fn from_record(instance: &RelationInstance, record: &RemediationRecord) -> Self {
        let remediated = record.is_kept() && !record.error_types.is_empty();
        let mut out = Self {
            instance: instance.clone(),
            enriched_sentence: instance.sentence.clone(),
            difficulty: record.difficulty,
            provenance: Provenance::CorrectPassthrough,
            remediation_id: None,
            error_types: record.error_types.clone(),
            tags: record.tags.clone(),
            note: record.reason.clone(),
        };
        if remediated {
            out.enriched_sentence = record.enriched_sentence.clone().unwrap_or_default();
            out.provenance = Provenance::Remediated;
            out.remediation_id = Some(record.instance_id.clone());
        }
        out
    }
}

/// Runs the student through the analysis and assembly path for every
/// instance. Failed instances pass through at difficulty 0.
pub fn annotate_corpus(
    instances: &[RelationInstance],
    student: &TeacherGateway,
    kg: Option<&Kg>,
    labels: &LabelSpace,
    config: &RemediationConfig,
) -> Vec<AugmentedInstance> {
    let analyses = analyze(instances, student, labels);
    let pairs: Vec<_> = instances.iter().zip(&analyses).collect();
    student.map_bounded(&pairs, |(x, a)| {
        let record = remediate_one(x, a, student, kg, labels, config);
        AugmentedInstance::from_record(x, &record)
    })
}

/// Number of instances per difficulty score 0..=5.
pub fn difficulty_histogram(d_aug: &[AugmentedInstance]) -> [usize; 6] {
    let mut h = [0; 6];
    for x in d_aug {
        h[usize::from(x.difficulty.min(5))] += 1;
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EntitySpan, Split};
    use crate::teacher::{GatewayConfig, MockBackend, MockRules, ResponseCache};
    use std::sync::Arc;

    fn inst(id: &str, labels: &[&str]) -> RelationInstance {
        let sentence = format!("A{id} acts on B{id}.");
        RelationInstance {
            id: id.into(),
            entity1: EntitySpan::find(&sentence, &format!("A{id}")).unwrap(),
            entity2: EntitySpan::find(&sentence, &format!("B{id}")).unwrap(),
            sentence,
            reference_relations: labels.iter().map(|s| s.to_string()).collect(),
            split: Split::Train,
        }
    }

    fn remediated(id: &str, difficulty: u8) -> RemediatedInstance {
        RemediatedInstance {
            instance: inst(id, &["effect"]),
            enriched_sentence: "x".into(),
            error_types: [ErrorType::Negation].into(),
            difficulty,
            tags: vec![ErrorTag::NewNeg],
            rewritten_sentence: Some("A NOT B".into()),
            solution_guidance: vec!["step".into()],
            kg_needed: false,
        }
    }

    fn correct_pool() -> Vec<RelationInstance> {
        let mut v = Vec::new();
        for i in 0..12 {
            v.push(inst(&format!("e{i}"), &["effect"]));
        }
        v.push(inst("a0", &["advise"]));
        v.push(inst("m0", &["mechanism"]));
        v.push(inst("n0", &[]));
        v.push(inst("n1", &[]));
        v
    }

    #[test]
    fn sizes_add_up() {
        let rem: Vec<_> = (0..7).map(|i| remediated(&format!("r{i}"), 1)).collect();
        let out = build_d_mimic(&rem, &correct_pool(), 7, 3).unwrap();
        assert_eq!(out.len(), 14);
        assert!(out[7..].iter().all(|x| x.targets == MimicTargets::default()));
        assert_eq!(build_d_mimic(&rem, &correct_pool(), 0, 3).unwrap().len(), 7);
        assert!(build_d_mimic(&rem, &correct_pool(), 17, 3).is_err());
    }

    #[test]
    fn sample_is_seeded() {
        let a = stratified_sample(&correct_pool(), 5, 42).unwrap();
        let b = stratified_sample(&correct_pool(), 5, 42).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sample_covers_every_label() {
        for seed in 0..50 {
            let s = stratified_sample(&correct_pool(), 3, seed).unwrap();
            let labels: BTreeSet<_> = s.iter().flat_map(|x| x.reference_relations.clone()).collect();
            assert_eq!(labels.len(), 3, "seed {seed}");
        }
    }

    #[test]
    fn fewshot_spans_tiers() {
        let mut pool: Vec<MimicExample> =
            build_d_mimic(&[remediated("r1", 3), remediated("r2", 3)], &correct_pool()[..3], 3, 0).unwrap();
        let chosen = select_exemplars(&pool, 2).unwrap();
        let provenances: Vec<_> = chosen.iter().map(|x| x.provenance).collect();
        assert_eq!(provenances, [Provenance::CorrectPassthrough, Provenance::Remediated]);
        assert_eq!(render_fewshot_block(&pool, 0).unwrap(), "");
        assert!(render_fewshot_block(&pool, 6).is_err());
        pool.truncate(1);
        let block = render_fewshot_block(&pool, 1).unwrap();
        assert!(block.starts_with("### Example 1\nInput: Sentence: Ar1 acts on Br1."), "{block}");
    }

    #[test]
    fn annotate_is_total() {
        let labels = LabelSpace::new(["effect"]).unwrap();
        let mut xs = vec![inst("1", &["effect"]), inst("2", &["effect"])];
        xs.push(RelationInstance {
            sentence: "A3 does not act on B3.".into(),
            entity1: EntitySpan::new("A3", 0, 2),
            entity2: EntitySpan::new("B3", 19, 21),
            ..inst("3", &["effect"])
        });
        let student = TeacherGateway::new(
            Arc::new(MockBackend::new(MockRules {
                prose_ids: ["2".to_string()].into(),
                ..Default::default()
            })),
            ResponseCache::in_memory(),
            GatewayConfig::default(),
        )
        .unwrap();
        let out = annotate_corpus(&xs, &student, None, &labels, &RemediationConfig::default());
        assert_eq!(out.len(), 3);
        assert_eq!(difficulty_histogram(&out), [2, 1, 0, 0, 0, 0]);
        assert_eq!(out[2].provenance, Provenance::Remediated);
        assert!(out[2].enriched_sentence.starts_with("A3 does NOT act on B3. [###NEW_NEG]"));
        assert_eq!(out[1].enriched_sentence, xs[1].sentence);
        assert!(out[1].note.is_some());
    }
}
