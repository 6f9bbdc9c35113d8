//! Assembly of enriched instances from teacher remediations, rewrite guards,
//! and the `D_rem` builder.
//!
//! An enriched sentence is laid out as
//!
//! ```text
//! <sentence> [tags]
//!
//! Guidance:
//! 1. <step>
//! 2. <step>
//!
//! Facts:
//! <head> — <relation> — <tail>
//! ```
//!
//! with empty sections omitted.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::{find_mentions, EntitySpan, LabelSpace, RelationInstance};
use crate::kg::{render_facts, Kg, KgTriple, DEFAULT_K};
use crate::taxonomy::{render_tags, token_distance, ErrorAnnotation, ErrorTag, ErrorType};
use crate::teacher::{TeacherGateway, TeacherResponse, Verdict, Verifiable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RecordStatus {
    Kept,
    DiscardedAmbiguous,
    DroppedUnverified,
    DroppedBackendFailure,
}

/// Switches for the ablation configurations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    pub enable_guidance: bool,
    pub enable_remediation: bool,
    pub enable_kg: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        Self {
            enable_guidance: true,
            enable_remediation: true,
            enable_kg: true,
        }
    }
}

const HARD_FAILURE_PREFIXES: [&str; 3] = ["classification failed", "remediation failed", "verification failed"];

/// Whether a drop reason stems from a backend failure.
pub fn is_hard_failure_reason(reason: &str) -> bool {
    HARD_FAILURE_PREFIXES.iter().any(|p| reason.starts_with(p))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemediationRecord {
    pub instance_id: String,
    pub original_sentence: String,
    pub rewritten_sentence: Option<String>,
    pub solution_guidance: Vec<String>,
    pub tags: Vec<ErrorTag>,
    /// Whether the tags are written onto the sentence line.
    pub tags_rendered: bool,
    pub kg_facts: Vec<KgTriple>,
    pub enriched_sentence: Option<String>,
    pub status: RecordStatus,
    pub reason: Option<String>,
    pub error_types: BTreeSet<ErrorType>,
    pub difficulty: u8,
}

impl RemediationRecord {
    fn failed(instance: &RelationInstance, reason: impl Into<String>) -> Self {
        Self {
            instance_id: instance.id.clone(),
            original_sentence: instance.sentence.clone(),
            rewritten_sentence: None,
            solution_guidance: Vec::new(),
            tags: Vec::new(),
            tags_rendered: false,
            kg_facts: Vec::new(),
            enriched_sentence: None,
            status: RecordStatus::DroppedBackendFailure,
            reason: Some(reason.into()),
            error_types: BTreeSet::new(),
            difficulty: 0,
        }
    }

    fn downgrade(&mut self, status: RecordStatus, reason: impl Into<String>) {
        self.status = status;
        self.reason = Some(reason.into());
        self.enriched_sentence = None;
    }

    /// Dropped because the backend failed or replied unusably, as opposed
    /// to a rejected rewrite.
    pub fn is_hard_failure(&self) -> bool {
        self.status == RecordStatus::DroppedBackendFailure
            && self.reason.as_deref().is_some_and(is_hard_failure_reason)
    }

    pub fn is_kept(&self) -> bool {
        self.status == RecordStatus::Kept
    }

    /// Rebuilds the enriched sentence from the stored parts.
    pub fn compose(&self) -> String {
        let base = self.rewritten_sentence.as_deref().unwrap_or(&self.original_sentence);
        let line = if self.tags_rendered {
            render_tags(base, &self.tags)
        } else {
            base.to_string()
        };
        compose_enriched(&line, &self.solution_guidance, &self.kg_facts)
    }
}

/// Lays out the sentence line, guidance block and fact block.
pub fn compose_enriched(sentence_line: &str, guidance: &[String], facts: &[KgTriple]) -> String {
    let mut out = sentence_line.to_string();
    if !guidance.is_empty() {
        out.push_str("\n\nGuidance:");
        for (i, step) in guidance.iter().enumerate() {
            out.push_str(&format!("\n{}. {step}", i + 1));
        }
    }
    if !facts.is_empty() {
        out.push_str("\n\nFacts:\n");
        out.push_str(&render_facts(facts));
    }
    out
}

/// Applies the assembly branches to a validated teacher response.
///
/// A discard reply yields a discarded record. A rewrite is combined with the
/// guidance only; otherwise the original sentence is combined with guidance
/// and, when a KG tag is present, the retrieved facts.
pub fn assemble(
    instance: &RelationInstance,
    response: &TeacherResponse,
    kg_facts: &[KgTriple],
    flags: AblationFlags,
) -> RemediationRecord {
    let mut record = RemediationRecord {
        instance_id: instance.id.clone(),
        original_sentence: instance.sentence.clone(),
        rewritten_sentence: None,
        solution_guidance: Vec::new(),
        tags: response.tags.clone(),
        tags_rendered: flags.enable_remediation,
        kg_facts: Vec::new(),
        enriched_sentence: None,
        status: RecordStatus::Kept,
        reason: None,
        error_types: response.error_types.clone(),
        difficulty: response.difficulty,
    };
    if response.discard {
        record.status = RecordStatus::DiscardedAmbiguous;
        record.reason = Some("teacher marked the instance as ambiguous".into());
        return record;
    }
    if flags.enable_guidance {
        record.solution_guidance = response.solution_guidance.clone();
    }
    if flags.enable_remediation {
        record.rewritten_sentence = response.rewritten_sentence.clone();
    }
    let kg_tagged = response.tags.iter().any(|t| t.requires_kg());
    if !kg_facts.is_empty() && !kg_tagged {
        log::warn!("{}: dropping {} KG facts without a KG lookup tag", instance.id, kg_facts.len());
    } else if flags.enable_kg && record.rewritten_sentence.is_none() {
        record.kg_facts = kg_facts.to_vec();
    }
    record.enriched_sentence = Some(record.compose());
    record
}

/// Guards rewrites produced by the decomposition and distance rules.
///
/// The rewrite must keep both entity surfaces, must not mention any other
/// lexicon entity found in the original sentence when multiple entities were
/// decomposed, and must bring the pair closer than `delta` tokens when the
/// distance rule applied. Failing records are dropped.
pub fn decompose_check(
    mut record: RemediationRecord,
    instance: &RelationInstance,
    delta: usize,
    lexicon: &[String],
) -> RemediationRecord {
    let multi = record.tags.contains(&ErrorTag::NewMulti);
    let dist = record.tags.contains(&ErrorTag::NewDist);
    if !record.is_kept() || !(multi || dist) {
        return record;
    }
    let Some(rewrite) = record.rewritten_sentence.clone() else {
        return record;
    };
    let (e1, e2) = (&instance.entity1, &instance.entity2);
    for span in [e1, e2] {
        if !rewrite.contains(&span.surface) {
            let reason = format!("rewrite lost entity `{}`", span.surface);
            record.downgrade(RecordStatus::DroppedBackendFailure, reason);
            return record;
        }
    }
    if multi {
        let pair_names = [e1.surface.to_lowercase(), e2.surface.to_lowercase()];
        let leftover = lexicon.iter().find(|name| {
            !pair_names.contains(&name.to_lowercase())
                && find_mentions(&instance.sentence, name)
                    .iter()
                    .any(|m| !m.overlaps(e1) && !m.overlaps(e2))
                && !find_mentions(&rewrite, name).is_empty()
        });
        if let Some(name) = leftover {
            let reason = format!("decomposed rewrite still mentions `{name}`");
            record.downgrade(RecordStatus::DroppedBackendFailure, reason);
            return record;
        }
    }
    if dist {
        let distance = match (EntitySpan::find(&rewrite, &e1.surface), EntitySpan::find(&rewrite, &e2.surface)) {
            (Some(a), Some(b)) => token_distance(&rewrite, &a, &b),
            _ => usize::MAX,
        };
        if distance >= delta {
            let reason = format!("rewrite leaves {distance} tokens between the entities (limit {delta})");
            record.downgrade(RecordStatus::DroppedBackendFailure, reason);
        }
    }
    record
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RemediationConfig {
    pub kg_k: usize,
    pub flags: AblationFlags,
    /// Entity names checked by the decomposition guard.
    pub lexicon: Vec<String>,
}

impl Default for RemediationConfig {
    fn default() -> Self {
        Self {
            kg_k: DEFAULT_K,
            flags: AblationFlags::default(),
            lexicon: Vec::new(),
        }
    }
}

/// A teacher-verified remediated instance, the element type of `D_rem`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemediatedInstance {
    #[serde(flatten)]
    pub instance: RelationInstance,
    pub enriched_sentence: String,
    pub error_types: BTreeSet<ErrorType>,
    pub difficulty: u8,
    pub tags: Vec<ErrorTag>,
    pub rewritten_sentence: Option<String>,
    pub solution_guidance: Vec<String>,
    pub kg_needed: bool,
}

impl RemediatedInstance {
    pub fn from_record(instance: &RelationInstance, record: &RemediationRecord) -> Option<Self> {
        Some(Self {
            instance: instance.clone(),
            enriched_sentence: record.enriched_sentence.clone()?,
            error_types: record.error_types.clone(),
            difficulty: record.difficulty,
            tags: record.tags.clone(),
            rewritten_sentence: record.rewritten_sentence.clone(),
            solution_guidance: record.solution_guidance.clone(),
            kg_needed: record.tags.iter().any(|t| t.requires_kg()),
        })
    }
}

impl AsRef<RelationInstance> for RemediatedInstance {
    fn as_ref(&self) -> &RelationInstance {
        &self.instance
    }
}

impl Verifiable for RemediatedInstance {
    fn instance(&self) -> &RelationInstance {
        &self.instance
    }

    fn verification_text(&self) -> &str {
        &self.enriched_sentence
    }
}

/// Classification result for one instance; `Err` holds the failure reason.
pub type Analysis = std::result::Result<ErrorAnnotation, String>;

/// Error analysis of every instance, in input order.
pub fn analyze(instances: &[RelationInstance], gateway: &TeacherGateway, labels: &LabelSpace) -> Vec<Analysis> {
    gateway.map_bounded(instances, |x| {
        gateway.annotate(x, labels).map_err(|e| {
            log::warn!("{}: classification failed: {e}", x.id);
            e.to_string()
        })
    })
}

/// Retrieval, remediation, assembly and rewrite guards for one instance.
pub fn remediate_one(
    instance: &RelationInstance,
    analysis: &Analysis,
    gateway: &TeacherGateway,
    kg: Option<&Kg>,
    labels: &LabelSpace,
    config: &RemediationConfig,
) -> RemediationRecord {
    let annotation = match analysis {
        Ok(a) => a,
        Err(reason) => return RemediationRecord::failed(instance, format!("classification failed: {reason}")),
    };
    if annotation.ambiguous_discard {
        let response = TeacherResponse {
            error_types: annotation.error_types.clone(),
            difficulty: annotation.difficulty,
            tags: annotation.tags.clone(),
            discard: true,
            ..Default::default()
        };
        return assemble(instance, &response, &[], config.flags);
    }
    if annotation.error_types.is_empty() {
        let response = TeacherResponse::default();
        return assemble(instance, &response, &[], config.flags);
    }
    let facts = match kg {
        Some(kg) if annotation.requires_kg && config.flags.enable_kg => {
            kg.facts_for((&instance.entity1.surface, &instance.entity2.surface), config.kg_k)
        }
        _ => Vec::new(),
    };
    match gateway.remediate(instance, annotation, &facts, labels) {
        Ok(response) => {
            let record = assemble(instance, &response, &facts, config.flags);
            decompose_check(record, instance, gateway.delta(), &config.lexicon)
        }
        Err(e) => {
            log::warn!("{}: remediation failed: {e}", instance.id);
            let mut record = RemediationRecord::failed(instance, format!("remediation failed: {e}"));
            record.error_types = annotation.error_types.clone();
            record.difficulty = annotation.difficulty;
            record.tags = annotation.tags.clone();
            record
        }
    }
}

pub fn remediate_all(
    instances: &[RelationInstance],
    analyses: &[Analysis],
    gateway: &TeacherGateway,
    kg: Option<&Kg>,
    labels: &LabelSpace,
    config: &RemediationConfig,
) -> Vec<RemediationRecord> {
    let pairs: Vec<(&RelationInstance, &Analysis)> = instances.iter().zip(analyses).collect();
    gateway.map_bounded(&pairs, |(x, a)| remediate_one(x, a, gateway, kg, labels, config))
}

/// Teacher verification of kept records. Records whose prediction differs
/// from the reference set are downgraded; the verified instances are
/// returned in input order.
pub fn verify_records(
    instances: &[RelationInstance],
    records: &mut [RemediationRecord],
    gateway: &TeacherGateway,
    labels: &LabelSpace,
) -> Vec<RemediatedInstance> {
    let by_id: HashMap<&str, &RelationInstance> = instances.iter().map(|x| (x.id.as_str(), x)).collect();
    let candidates: Vec<(usize, RemediatedInstance)> = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.is_kept())
        .filter_map(|(i, r)| {
            let instance = by_id.get(r.instance_id.as_str())?;
            RemediatedInstance::from_record(instance, r).map(|c| (i, c))
        })
        .collect();
    let items: Vec<&RemediatedInstance> = candidates.iter().map(|(_, c)| c).collect();
    let verdicts = gateway.map_bounded(&items, |c| gateway.verify(*c, labels));
    let mut d_rem = Vec::new();
    for ((i, candidate), verdict) in candidates.into_iter().zip(verdicts) {
        match verdict {
            Verdict::Verified => d_rem.push(candidate),
            Verdict::Mismatch(predicted) => {
                let predicted: Vec<&str> = predicted.iter().map(String::as_str).collect();
                records[i].downgrade(
                    RecordStatus::DroppedUnverified,
                    format!("teacher predicted [{}]", predicted.join(", ")),
                );
            }
            Verdict::Failed(reason) => {
                records[i].downgrade(RecordStatus::DroppedBackendFailure, format!("verification failed: {reason}"))
            }
        }
    }
    d_rem
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StatusCounts {
    pub kept: usize,
    pub discarded_ambiguous: usize,
    pub dropped_unverified: usize,
    pub dropped_backend_failure: usize,
}

impl StatusCounts {
    pub fn of(records: &[RemediationRecord]) -> Self {
        let mut c = Self::default();
        for r in records {
            match r.status {
                RecordStatus::Kept => c.kept += 1,
                RecordStatus::DiscardedAmbiguous => c.discarded_ambiguous += 1,
                RecordStatus::DroppedUnverified => c.dropped_unverified += 1,
                RecordStatus::DroppedBackendFailure => c.dropped_backend_failure += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.kept + self.discarded_ambiguous + self.dropped_unverified + self.dropped_backend_failure
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemediationOutcome {
    pub analyses: Vec<Analysis>,
    pub records: Vec<RemediationRecord>,
    pub d_rem: Vec<RemediatedInstance>,
}

/// Classify, retrieve, remediate, assemble and verify every instance of
/// `D_error`. Per-instance failures become dropped records.
pub fn build_d_rem(
    d_error: &[RelationInstance],
    gateway: &TeacherGateway,
    kg: Option<&Kg>,
    labels: &LabelSpace,
    config: &RemediationConfig,
) -> RemediationOutcome {
    let analyses = analyze(d_error, gateway, labels);
    let mut records = remediate_all(d_error, &analyses, gateway, kg, labels, config);
    let d_rem = verify_records(d_error, &mut records, gateway, labels);
    RemediationOutcome {
        analyses,
        records,
        d_rem,
    }
}
