//! Teacher gateway: prompt construction, strict reply parsing, response
//! caching, bounded concurrency and the verification filter used for data
//! cleaning.

pub mod backend;
pub mod cache;
pub mod mock;
pub mod prompt;
pub mod response;

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{EntitySpan, LabelSpace, RelationInstance};
use crate::error::{Error, Result};
use crate::kg::{render_facts, KgTriple};
use crate::taxonomy::{ErrorAnnotation, ErrorType, DEFAULT_DELTA};

pub use backend::{DecodingParams, ModelBackend, RemoteBackend, RemoteConfig};
pub use cache::{cache_key, CacheEntry, ResponseCache};
pub use mock::{MockBackend, MockRules};
pub use prompt::{PromptRole, PromptTemplate};
pub use response::{check_remediation, parse_response, TeacherResponse};

/// Machine-readable request carried on the `INPUT:` line of every
/// backend-facing prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RequestPayload {
    pub id: String,
    pub sentence: String,
    pub entity1: EntitySpan,
    pub entity2: EntitySpan,
    pub labels: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub error_types: Vec<ErrorType>,
}

impl RequestPayload {
    fn new(instance: &RelationInstance, sentence: &str, labels: &LabelSpace) -> Self {
        Self {
            id: instance.id.clone(),
            sentence: sentence.to_string(),
            entity1: instance.entity1.clone(),
            entity2: instance.entity2.clone(),
            labels: labels.labels().to_vec(),
            error_types: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GatewayConfig {
    pub max_concurrent: usize,
    pub params: DecodingParams,
    pub delta: usize,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        Self {
            max_concurrent: 4,
            params: DecodingParams::default(),
            delta: DEFAULT_DELTA,
        }
    }
}

/// Outcome of verifying one enriched instance against its reference set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Verified,
    Mismatch(BTreeSet<String>),
    Failed(String),
}

/// Something the teacher can re-classify during data cleaning.
pub trait Verifiable {
    fn instance(&self) -> &RelationInstance;
    /// The text the teacher sees, normally the enriched sentence.
    fn verification_text(&self) -> &str;
}

impl Verifiable for RelationInstance {
    fn instance(&self) -> &RelationInstance {
        self
    }

    fn verification_text(&self) -> &str {
        &self.sentence
    }
}

pub struct TeacherGateway {
    backend: Arc<dyn ModelBackend>,
    cache: ResponseCache,
    config: GatewayConfig,
    pool: rayon::ThreadPool,
    calls: AtomicUsize,
}

impl TeacherGateway {
    pub fn new(backend: Arc<dyn ModelBackend>, cache: ResponseCache, config: GatewayConfig) -> Result<Self> {
        if config.max_concurrent == 0 {
            return Err(Error::invalid("max_concurrent must be at least 1"));
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.max_concurrent)
            .thread_name(|i| format!("teacher-{i}"))
            .build()
            .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
        Ok(Self {
            backend,
            cache,
            config,
            pool,
            calls: AtomicUsize::new(0),
        })
    }

    pub fn backend_name(&self) -> &str {
        self.backend.name()
    }

    pub fn delta(&self) -> usize {
        self.config.delta
    }

    /// Backend invocations made by this gateway; cache hits are not counted.
    pub fn backend_calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Maps `f` over `items` with at most `max_concurrent` in flight,
    /// returning results in input order.
    pub fn map_bounded<T, R, F>(&self, items: &[T], f: F) -> Vec<R>
    where
        T: Sync,
        R: Send,
        F: Fn(&T) -> R + Sync + Send,
    {
        self.pool.install(|| items.par_iter().map(f).collect())
    }

    /// Completes `prompt`, serving repeated requests from the cache.
    pub fn complete(&self, prompt: &str) -> Result<String> {
        let name = self.backend.name();
        let key = cache_key(prompt, name, &self.config.params);
        if let Some(hit) = self.cache.get(&key) {
            return Ok(hit);
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let response = self.backend.complete(prompt, &self.config.params)?;
        self.cache.put(CacheEntry {
            key,
            backend: name.to_string(),
            params: self.config.params.clone(),
            prompt: prompt.to_string(),
            response: response.clone(),
        })?;
        Ok(response)
    }

    /// Sends `prompt`, parses the reply for `role` and applies `check`.
    /// A rejected reply is retried once with a repair prompt.
    fn request<C>(&self, role: PromptRole, prompt: &str, check: C) -> Result<TeacherResponse>
    where
        C: Fn(&TeacherResponse) -> std::result::Result<(), String>,
    {
        let accept = |text: &str| parse_response(text, role).and_then(|r| check(&r).map(|()| r));
        let problem = match accept(&self.complete(prompt)?) {
            Ok(r) => return Ok(r),
            Err(problem) => problem,
        };
        log::warn!("{} reply rejected ({problem}); sending repair prompt", role.task_name());
        let repair = PromptTemplate::builtin(PromptRole::Repair).render(&[("error", &problem), ("prompt", prompt)])?;
        accept(&self.complete(&repair)?)
            .map_err(|p| Error::Backend(format!("{} reply unusable after repair: {p}", role.task_name())))
    }

    fn base_slots(instance: &RelationInstance, labels: &LabelSpace) -> [(&'static str, String); 3] {
        [
            ("label_space", labels.labels().join(", ")),
            ("entity1", instance.entity1.surface.clone()),
            ("entity2", instance.entity2.surface.clone()),
        ]
    }

    pub fn classify_prompt(&self, instance: &RelationInstance, labels: &LabelSpace) -> Result<String> {
        let payload = serde_json::to_string(&RequestPayload::new(instance, &instance.sentence, labels))?;
        let rules = prompt::remediation_rules(self.config.delta);
        let [a, b, c] = Self::base_slots(instance, labels);
        PromptTemplate::builtin(PromptRole::ErrorClassify).render(&[
            (a.0, &a.1),
            (b.0, &b.1),
            (c.0, &c.1),
            ("rules", &rules),
            ("sentence", &instance.sentence),
            ("input", &payload),
        ])
    }

    /// Zero-shot error analysis of one instance.
    pub fn classify_errors(&self, instance: &RelationInstance, labels: &LabelSpace) -> Result<TeacherResponse> {
        let prompt = self
            .classify_prompt(instance, labels)
            .map_err(|e| Error::Validation {
                id: instance.id.clone(),
                message: e.to_string(),
            })?;
        self.request(PromptRole::ErrorClassify, &prompt, |_| Ok(()))
    }

    /// Turns a classification reply into an annotation.
    pub fn annotate(&self, instance: &RelationInstance, labels: &LabelSpace) -> Result<ErrorAnnotation> {
        let r = self.classify_errors(instance, labels)?;
        Ok(ErrorAnnotation::new(&instance.id, r.error_types, &r.tags, r.discard))
    }

    pub fn remediate_prompt(
        &self,
        instance: &RelationInstance,
        annotation: &ErrorAnnotation,
        kg_facts: &[KgTriple],
        labels: &LabelSpace,
    ) -> Result<String> {
        let mut payload = RequestPayload::new(instance, &instance.sentence, labels);
        payload.error_types = annotation.error_types.iter().copied().collect();
        let payload = serde_json::to_string(&payload)?;
        let types = payload_types(annotation);
        let rules = prompt::remediation_rules(self.config.delta);
        let facts = render_facts(kg_facts);
        let [a, b, c] = Self::base_slots(instance, labels);
        PromptTemplate::builtin(PromptRole::Remediate).render(&[
            (a.0, &a.1),
            (b.0, &b.1),
            (c.0, &c.1),
            ("error_types", &types),
            ("rules", &rules),
            ("kg_facts", &facts),
            ("sentence", &instance.sentence),
            ("input", &payload),
        ])
    }

    /// Requests the remediation tuple for an annotated instance. Replies
    /// whose tags disagree with the diagnosed error types are rejected.
    pub fn remediate(
        &self,
        instance: &RelationInstance,
        annotation: &ErrorAnnotation,
        kg_facts: &[KgTriple],
        labels: &LabelSpace,
    ) -> Result<TeacherResponse> {
        if annotation.error_types.is_empty() {
            return Err(Error::invalid(format!("{}: nothing to remediate without error types", instance.id)));
        }
        let prompt = self.remediate_prompt(instance, annotation, kg_facts, labels)?;
        let mut response = self.request(PromptRole::Remediate, &prompt, |r| {
            check_remediation(r, &annotation.error_types)
        })?;
        response.error_types = annotation.error_types.clone();
        response.difficulty = annotation.difficulty;
        Ok(response)
    }

    pub fn verify_prompt(&self, text: &str, instance: &RelationInstance, labels: &LabelSpace) -> Result<String> {
        let payload = serde_json::to_string(&RequestPayload::new(instance, text, labels))?;
        let [a, b, c] = Self::base_slots(instance, labels);
        PromptTemplate::builtin(PromptRole::VerifyRelation).render(&[
            (a.0, &a.1),
            (b.0, &b.1),
            (c.0, &c.1),
            ("sentence", text),
            ("input", &payload),
        ])
    }

    /// The teacher's relation prediction for `text` about the instance's pair.
    pub fn verify_relation(
        &self,
        text: &str,
        instance: &RelationInstance,
        labels: &LabelSpace,
    ) -> Result<BTreeSet<String>> {
        if labels.is_empty() {
            return Err(Error::invalid("verification needs a nonempty label space"));
        }
        let prompt = self.verify_prompt(text, instance, labels)?;
        let r = self.request(PromptRole::VerifyRelation, &prompt, |_| Ok(()))?;
        Ok(r.predicted_relation.unwrap_or_default())
    }

    pub fn verify<T: Verifiable>(&self, item: &T, labels: &LabelSpace) -> Verdict {
        let instance = item.instance();
        match self.verify_relation(item.verification_text(), instance, labels) {
            Ok(predicted) if predicted == instance.reference_relations => Verdict::Verified,
            Ok(predicted) => Verdict::Mismatch(predicted),
            Err(e) => {
                log::warn!("{}: verification failed: {e}", instance.id);
                Verdict::Failed(e.to_string())
            }
        }
    }

    pub fn verify_all<T: Verifiable + Sync>(&self, items: &[T], labels: &LabelSpace) -> Vec<Verdict> {
        self.map_bounded(items, |item| self.verify(item, labels))
    }

    /// Keeps exactly the items whose teacher prediction equals the
    /// reference set, in input order.
    pub fn clean<T: Verifiable + Sync>(&self, items: Vec<T>, labels: &LabelSpace) -> Vec<T> {
        let verdicts = self.verify_all(&items, labels);
        items
            .into_iter()
            .zip(verdicts)
            .filter_map(|(item, v)| match v {
                Verdict::Verified => Some(item),
                Verdict::Mismatch(predicted) => {
                    log::info!("{}: dropped, teacher predicted {predicted:?}", item.instance().id);
                    None
                }
                Verdict::Failed(_) => None,
            })
            .collect()
    }
}

fn payload_types(annotation: &ErrorAnnotation) -> String {
    annotation
        .error_types
        .iter()
        .map(|t| t.as_str())
        .collect::<Vec<_>>()
        .join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Split;
    use crate::taxonomy::ErrorTag;
    use std::sync::Mutex;

    fn labels() -> LabelSpace {
        LabelSpace::new(["advise", "effect", "int", "mechanism"]).unwrap()
    }

    fn instance(id: &str, sentence: &str, e1: &str, e2: &str, gold: &[&str]) -> RelationInstance {
        RelationInstance {
            id: id.into(),
            sentence: sentence.into(),
            entity1: EntitySpan::find(sentence, e1).unwrap(),
            entity2: EntitySpan::find(sentence, e2).unwrap(),
            reference_relations: gold.iter().map(|s| s.to_string()).collect(),
            split: Split::Train,
        }
    }

    fn mock_gateway(rules: MockRules) -> (Arc<MockBackend>, TeacherGateway) {
        let mock = Arc::new(MockBackend::new(rules));
        let gw = TeacherGateway::new(mock.clone(), ResponseCache::in_memory(), GatewayConfig::default()).unwrap();
        (mock, gw)
    }

    /// Replies with a fixed script, one entry per call.
    struct Scripted {
        replies: Mutex<Vec<String>>,
    }

    impl ModelBackend for Scripted {
        fn name(&self) -> &str {
            "scripted"
        }

        fn complete(&self, _: &str, _: &DecodingParams) -> Result<String> {
            let mut r = self.replies.lock().unwrap();
            if r.is_empty() {
                return Err(Error::Backend("script exhausted".into()));
            }
            Ok(r.remove(0))
        }
    }

    fn scripted(replies: &[&str]) -> TeacherGateway {
        let backend = Scripted {
            replies: Mutex::new(replies.iter().map(|s| s.to_string()).collect()),
        };
        TeacherGateway::new(Arc::new(backend), ResponseCache::in_memory(), GatewayConfig::default()).unwrap()
    }

    #[test]
    fn negation_between_entities_is_classified() {
        let (_, gw) = mock_gateway(MockRules::default());
        let x = instance("n1", "Aspirin did not alter warfarin levels.", "Aspirin", "warfarin", &["mechanism"]);
        let r = gw.classify_errors(&x, &labels()).unwrap();
        assert_eq!(r.error_types, [ErrorType::Negation].into());
        assert_eq!(r.difficulty, 1);
    }

    #[test]
    fn clean_sentence_has_no_errors() {
        let (_, gw) = mock_gateway(MockRules::default());
        let x = instance("c1", "Aspirin increases warfarin levels.", "Aspirin", "warfarin", &["mechanism"]);
        let r = gw.classify_errors(&x, &labels()).unwrap();
        assert!(r.error_types.is_empty());
        assert_eq!(r.difficulty, 0);
    }

    #[test]
    fn prose_is_repaired_once_then_fails() {
        let x = instance("p1", "A binds B.", "A", "B", &[]);
        let gw = scripted(&["It is a negation.", "Still prose."]);
        let err = gw.classify_errors(&x, &labels()).unwrap_err();
        assert!(matches!(err, Error::Backend(_)), "{err}");
        assert_eq!(gw.backend_calls(), 2);

        let gw = scripted(&["It is a negation.", r#"{"error_types":["negation"]}"#]);
        let r = gw.classify_errors(&x, &labels()).unwrap();
        assert_eq!(r.error_types, [ErrorType::Negation].into());
    }

    #[test]
    fn inconsistent_remediation_is_rejected() {
        let x = instance("r1", "A binds B.", "A", "B", &[]);
        let ann = ErrorAnnotation::new("r1", [ErrorType::LackOfDomainKnowledge].into(), &[], false);
        let bad = r#"{"tags":["[###NEW_NEG]"],"solution_guidance":["s"]}"#;
        let gw = scripted(&[bad, bad]);
        assert!(gw.remediate(&x, &ann, &[], &labels()).is_err());
    }

    #[test]
    fn remediation_follows_rule_table() {
        let (_, gw) = mock_gateway(MockRules {
            knowledge_entities: vec!["warfarin".into()],
            ..Default::default()
        });
        let neg = instance("n1", "Aspirin did not alter warfarin levels.", "Aspirin", "warfarin", &[]);
        let ann = ErrorAnnotation::new("n1", [ErrorType::Negation].into(), &[], false);
        let r = gw.remediate(&neg, &ann, &[], &labels()).unwrap();
        assert!(r.tags.contains(&ErrorTag::NewNeg));
        assert!(r.rewritten_sentence.as_deref().is_some_and(|s| !s.is_empty()));
        assert!(!r.solution_guidance.is_empty());

        let ann = ErrorAnnotation::new("n1", [ErrorType::LackOfDomainKnowledge].into(), &[], false);
        let r = gw.remediate(&neg, &ann, &[], &labels()).unwrap();
        assert_eq!(r.tags, [ErrorTag::KgLookup]);
        assert_eq!(r.rewritten_sentence, None);

        let ann = ErrorAnnotation::new("n1", [ErrorType::Contrast].into(), &[], false);
        let r = gw.remediate(&neg, &ann, &[], &labels()).unwrap();
        assert_eq!(r.tags, [ErrorTag::ConKgLookup]);
        assert_eq!(r.rewritten_sentence, None);

        let none = ErrorAnnotation::new("n1", BTreeSet::new(), &[], false);
        assert!(gw.remediate(&neg, &none, &[], &labels()).is_err());
    }

    #[test]
    fn verification_echoes_planted_labels() {
        let good = instance("g", "A binds B.", "A", "B", &["int"]);
        let bad = instance("w", "C binds D.", "C", "D", &["effect"]);
        let (_, gw) = mock_gateway(MockRules {
            gold: [("g".into(), good.reference_relations.clone()), ("w".into(), bad.reference_relations.clone())]
                .into(),
            planted_wrong: ["w".to_string()].into(),
            ..Default::default()
        });
        assert_eq!(gw.verify(&good, &labels()), Verdict::Verified);
        assert!(matches!(gw.verify(&bad, &labels()), Verdict::Mismatch(_)));
        let kept = gw.clean(vec![good.clone(), bad], &labels());
        assert_eq!(kept, [good.clone()]);
        assert!(gw.clean(Vec::<RelationInstance>::new(), &labels()).is_empty());

        let empty = LabelSpace::new(Vec::<String>::new()).unwrap();
        assert!(gw.verify_relation("A binds B.", &good, &empty).is_err());
    }

    #[test]
    fn repeated_request_hits_cache() {
        let (mock, gw) = mock_gateway(MockRules::default());
        let x = instance("c1", "Aspirin increases warfarin levels.", "Aspirin", "warfarin", &[]);
        gw.classify_errors(&x, &labels()).unwrap();
        gw.classify_errors(&x, &labels()).unwrap();
        assert_eq!(mock.calls(), 1);
        assert_eq!(gw.backend_calls(), 1);
    }

    #[test]
    fn map_bounded_keeps_order() {
        let (_, gw) = mock_gateway(MockRules::default());
        let items: Vec<usize> = (0..100).collect();
        assert_eq!(gw.map_bounded(&items, |x| x * 2), (0..100).map(|x| x * 2).collect::<Vec<_>>());
    }
}
