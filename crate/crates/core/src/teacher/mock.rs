//! Deterministic rule-table backend used as the test oracle.
//!
//! Error types come from surface cues: negation and contrast lexicons,
//! hedging words, a list of entities that need background knowledge, other
//! lexicon entities mentioned in the sentence, and the token distance between
//! the pair. Verification echoes planted gold labels.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::corpus::{char_slice, find_mentions, EntitySpan};
use crate::error::{Error, Result};
use crate::taxonomy::{token_distance, ErrorTag, ErrorType, DEFAULT_DELTA};

use super::backend::{DecodingParams, ModelBackend};
use super::prompt::{input_payload, marker_line};
use super::RequestPayload;

pub const NEGATION_CUES: &[&str] = &[
    "not", "no", "never", "neither", "nor", "without", "cannot", "lacks", "absence", "fails", "failed",
];
pub const CONTRAST_CUES: &[&str] = &["but", "however", "although", "whereas", "though", "despite", "unlike", "yet"];
pub const MODALITY_CUES: &[&str] = &[
    "may", "might", "could", "possibly", "potentially", "strongly", "markedly", "significantly", "likely",
    "putative", "presumably",
];
pub const DISCARD_CUES: &[&str] = &["unclear", "ambiguous", "conflicting", "controversial"];

const PLACEHOLDER: &str = "another compound";
const KEPT_TOKENS: usize = 5;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MockRules {
    /// 0 means the default of 20.
    pub delta: usize,
    /// Entities whose mention signals missing domain knowledge.
    pub knowledge_entities: Vec<String>,
    /// Known entity names used to detect additional entity mentions.
    pub entity_lexicon: Vec<String>,
    /// Labels echoed on verification requests.
    pub gold: BTreeMap<String, BTreeSet<String>>,
    /// Ids whose verification answer is deliberately wrong.
    pub planted_wrong: BTreeSet<String>,
    /// Ids that always receive prose instead of JSON.
    pub prose_ids: BTreeSet<String>,
}

impl MockRules {
    fn delta(&self) -> usize {
        if self.delta == 0 {
            DEFAULT_DELTA
        } else {
            self.delta
        }
    }
}

pub struct MockBackend {
    name: String,
    rules: MockRules,
    calls: AtomicUsize,
}

fn words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace().map(|w| {
        w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'')
            .to_lowercase()
    })
}

fn has_cue(text: &str, cues: &[&str]) -> bool {
    words(text).any(|w| cues.contains(&w.as_str()) || (cues == NEGATION_CUES && w.ends_with("n't")))
}

fn same_name(a: &str, b: &str) -> bool {
    a.to_lowercase() == b.to_lowercase()
}

impl MockBackend {
    pub fn new(rules: MockRules) -> Self {
        Self::with_name("mock", rules)
    }

    /// The name takes part in cache keys, so distinct roles can be kept apart.
    pub fn with_name(name: impl Into<String>, rules: MockRules) -> Self {
        Self {
            name: name.into(),
            rules,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn rules(&self) -> &MockRules {
        &self.rules
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn knowledge_needy(&self, p: &RequestPayload) -> bool {
        self.rules
            .knowledge_entities
            .iter()
            .any(|k| same_name(k, &p.entity1.surface) || same_name(k, &p.entity2.surface))
    }

    /// Mentions of lexicon entities other than the target pair.
    pub fn other_mentions(&self, sentence: &str, pair: (&EntitySpan, &EntitySpan)) -> Vec<EntitySpan> {
        let mut found: Vec<EntitySpan> = Vec::new();
        for name in self.rules.entity_lexicon.iter().chain(&self.rules.knowledge_entities) {
            if same_name(name, &pair.0.surface) || same_name(name, &pair.1.surface) {
                continue;
            }
            for m in find_mentions(sentence, name) {
                if !m.overlaps(pair.0) && !m.overlaps(pair.1) && !found.iter().any(|f| f.overlaps(&m)) {
                    found.push(m);
                }
            }
        }
        found.sort_by_key(|m| m.char_start);
        found
    }

    fn error_types(&self, p: &RequestPayload) -> BTreeSet<ErrorType> {
        let mut out = BTreeSet::new();
        let s = &p.sentence;
        if has_cue(s, NEGATION_CUES) {
            out.insert(ErrorType::Negation);
        }
        if has_cue(s, CONTRAST_CUES) {
            out.insert(ErrorType::Contrast);
        }
        if has_cue(s, MODALITY_CUES) {
            out.insert(ErrorType::AmplificationModality);
        }
        if self.knowledge_needy(p) {
            out.insert(ErrorType::LackOfDomainKnowledge);
        }
        if !self.other_mentions(s, (&p.entity1, &p.entity2)).is_empty() {
            out.insert(ErrorType::MultipleEntities);
        }
        if token_distance(s, &p.entity1, &p.entity2) > self.rules.delta() {
            out.insert(ErrorType::DistantEntities);
        }
        out
    }

    fn tags(&self, p: &RequestPayload, types: &BTreeSet<ErrorType>) -> Vec<ErrorTag> {
        types
            .iter()
            .map(|t| match t {
                ErrorType::Contrast if self.knowledge_needy(p) => ErrorTag::ConKgLookup,
                other => other.default_tag(),
            })
            .collect()
    }

    fn classify(&self, p: &RequestPayload) -> serde_json::Value {
        let types = self.error_types(p);
        let tags = self.tags(p, &types);
        json!({
            "error_types": types.iter().map(|t| t.as_str()).collect::<Vec<_>>(),
            "difficulty": types.len(),
            "tags": tags.iter().map(|t| t.token()).collect::<Vec<_>>(),
            "kg_needed": tags.iter().any(|t| t.requires_kg()),
            "discard": has_cue(&p.sentence, DISCARD_CUES),
        })
    }

    /// Applies the rewrite rules in order: replace other entities, shorten
    /// the gap between the pair, then capitalise negation cues.
    pub fn rewrite(&self, p: &RequestPayload, types: &BTreeSet<ErrorType>) -> Option<String> {
        let multi = types.contains(&ErrorType::MultipleEntities);
        let dist = types.contains(&ErrorType::DistantEntities);
        let neg = types.contains(&ErrorType::Negation);
        if !(multi || dist || neg) {
            return None;
        }
        let mut sentence = p.sentence.clone();
        let (mut e1, mut e2) = (p.entity1.clone(), p.entity2.clone());
        if multi {
            for m in self.other_mentions(&p.sentence, (&p.entity1, &p.entity2)).iter().rev() {
                sentence = replace_span(&sentence, m, PLACEHOLDER);
                let shift = |e: &mut EntitySpan| {
                    if e.char_start >= m.char_end {
                        let len = PLACEHOLDER.chars().count();
                        e.char_start = e.char_start + len - (m.char_end - m.char_start);
                        e.char_end = e.char_start + e.surface.chars().count();
                    }
                };
                shift(&mut e1);
                shift(&mut e2);
            }
        }
        if dist {
            let (first, second) = if e1.char_start <= e2.char_start { (&e1, &e2) } else { (&e2, &e1) };
            let between = char_slice(&sentence, first.char_end, second.char_start).unwrap_or("");
            let tokens: Vec<&str> = between.split_whitespace().collect();
            let kept = &tokens[tokens.len().saturating_sub(KEPT_TOKENS)..];
            let mut parts = vec![first.surface.as_str()];
            parts.extend(kept.iter().copied());
            parts.push(second.surface.as_str());
            sentence = format!("{}.", parts.join(" "));
        }
        if neg {
            sentence = sentence
                .split(' ')
                .map(|w| {
                    let bare = w.trim_matches(|c: char| !c.is_alphanumeric() && c != '\'').to_lowercase();
                    if NEGATION_CUES.contains(&bare.as_str()) || bare.ends_with("n't") {
                        w.to_uppercase()
                    } else {
                        w.to_string()
                    }
                })
                .collect::<Vec<_>>()
                .join(" ");
        }
        Some(sentence)
    }

    fn guidance(&self, p: &RequestPayload, types: &BTreeSet<ErrorType>) -> Vec<String> {
        let (a, b) = (&p.entity1.surface, &p.entity2.surface);
        let mut steps: Vec<String> = types
            .iter()
            .map(|t| match t {
                ErrorType::Negation => {
                    format!("Find the negation cue and check whether it scopes over the link between {a} and {b}.")
                }
                ErrorType::Contrast => {
                    format!("Split the sentence at the contrast marker and keep the clause that mentions {a} and {b}.")
                }
                ErrorType::AmplificationModality => {
                    "Set aside hedging or intensifying words and judge what is actually asserted.".to_string()
                }
                ErrorType::LackOfDomainKnowledge => {
                    format!("Use the listed facts to recall what {a} and {b} are and how they usually act.")
                }
                ErrorType::MultipleEntities => format!("Ignore the other compounds and consider only {a} and {b}."),
                ErrorType::DistantEntities => format!("Read the shortened clause that joins {a} and {b} directly."),
            })
            .collect();
        steps.push("Decide which relation, if any, the focused statement supports.".to_string());
        steps
    }

    fn remediate(&self, p: &RequestPayload) -> serde_json::Value {
        let types: BTreeSet<ErrorType> = p.error_types.iter().copied().collect();
        let tags = self.tags(p, &types);
        json!({
            "rewritten_sentence": self.rewrite(p, &types),
            "solution_guidance": self.guidance(p, &types),
            "tags": tags.iter().map(|t| t.token()).collect::<Vec<_>>(),
            "kg_needed": tags.iter().any(|t| t.requires_kg()),
            "discard": has_cue(&p.sentence, DISCARD_CUES),
        })
    }

    fn verify(&self, p: &RequestPayload) -> serde_json::Value {
        let gold = self.rules.gold.get(&p.id).cloned().unwrap_or_default();
        let predicted = if self.rules.planted_wrong.contains(&p.id) {
            let wrong = p.labels.iter().find(|l| !gold.contains(*l)).cloned();
            wrong.into_iter().collect()
        } else {
            gold
        };
        json!({ "predicted_relation": predicted })
    }
}

fn replace_span(sentence: &str, span: &EntitySpan, with: &str) -> String {
    let before = char_slice(sentence, 0, span.char_start).unwrap_or("");
    let after: String = sentence.chars().skip(span.char_end).collect();
    format!("{before}{with}{after}")
}

impl ModelBackend for MockBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn complete(&self, prompt: &str, _: &DecodingParams) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let task = marker_line(prompt, "TASK").ok_or_else(|| Error::Backend("mock: prompt has no TASK marker".into()))?;
        let payload: RequestPayload = input_payload(prompt)
            .ok_or_else(|| Error::Backend("mock: prompt has no INPUT payload".into()))
            .and_then(|text| serde_json::from_str(text).map_err(|e| Error::Backend(format!("mock: bad payload: {e}"))))?;
        if self.rules.prose_ids.contains(&payload.id) {
            return Ok(format!("The example {} looks tricky to me.", payload.id));
        }
        let reply = match task {
            "error_classify" => self.classify(&payload),
            "remediate" => self.remediate(&payload),
            "verify_relation" => self.verify(&payload),
            other => return Err(Error::Backend(format!("mock: unsupported task `{other}`"))),
        };
        Ok(reply.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn payload(sentence: &str, e1: &str, e2: &str) -> RequestPayload {
        RequestPayload {
            id: "x".into(),
            sentence: sentence.into(),
            entity1: EntitySpan::find(sentence, e1).unwrap(),
            entity2: EntitySpan::find(sentence, e2).unwrap(),
            labels: vec!["effect".into(), "int".into()],
            error_types: vec![],
        }
    }

    #[test]
    fn cue_table() {
        let m = MockBackend::new(MockRules {
            knowledge_entities: vec!["ketoconazole".into()],
            entity_lexicon: vec!["digoxin".into()],
            ..Default::default()
        });
        let types = |s: &str, a: &str, b: &str| m.error_types(&payload(s, a, b));
        use ErrorType::*;
        assert_eq!(types("A didn't change B.", "A", "B"), [Negation].into());
        assert_eq!(types("A raised B, but C fell.", "A", "B"), [Contrast].into());
        assert_eq!(types("A may raise B.", "A", "B"), [AmplificationModality].into());
        assert_eq!(types("Ketoconazole raises B.", "Ketoconazole", "B"), [LackOfDomainKnowledge].into());
        assert_eq!(types("A and digoxin raise B.", "A", "B"), [MultipleEntities].into());
        assert_eq!(types("Digoxin raises B.", "Digoxin", "B"), BTreeSet::new());
        let far = format!("A {} B.", vec!["w"; 21].join(" "));
        assert_eq!(types(&far, "A", "B"), [DistantEntities].into());
    }

    #[test]
    fn rewrites_shorten_and_focus() {
        let m = MockBackend::new(MockRules {
            entity_lexicon: vec!["digoxin".into()],
            ..Default::default()
        });
        let far = format!("A {} then raises B.", vec!["w"; 21].join(" "));
        let p = payload(&far, "A", "B");
        let r = m.rewrite(&p, &[ErrorType::DistantEntities].into()).unwrap();
        assert_eq!(r, "A w w w then raises B.");

        let p = payload("A with digoxin does not raise B.", "A", "B");
        let types = [ErrorType::MultipleEntities, ErrorType::Negation].into();
        assert_eq!(m.rewrite(&p, &types).unwrap(), "A with another compound does NOT raise B.");
        assert_eq!(m.rewrite(&p, &[ErrorType::Contrast].into()), None);
    }
}
