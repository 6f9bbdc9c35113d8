//! Error taxonomy, remediation tag grammar and difficulty scoring.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::corpus::{char_slice, EntitySpan, RelationInstance};
use crate::error::{Error, Result};

/// Default token-distance threshold for the distant-entities rule.
pub const DEFAULT_DELTA: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorType {
    Negation,
    Contrast,
    AmplificationModality,
    LackOfDomainKnowledge,
    MultipleEntities,
    DistantEntities,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    LinguisticSemantic,
    KnowledgeBased,
    Structural,
}

impl ErrorType {
    pub const ALL: [ErrorType; 6] = [
        ErrorType::Negation,
        ErrorType::Contrast,
        ErrorType::AmplificationModality,
        ErrorType::LackOfDomainKnowledge,
        ErrorType::MultipleEntities,
        ErrorType::DistantEntities,
    ];

    pub fn category(self) -> ErrorCategory {
        match self {
            ErrorType::Negation | ErrorType::Contrast | ErrorType::AmplificationModality => {
                ErrorCategory::LinguisticSemantic
            }
            ErrorType::LackOfDomainKnowledge => ErrorCategory::KnowledgeBased,
            ErrorType::MultipleEntities | ErrorType::DistantEntities => ErrorCategory::Structural,
        }
    }

    /// The tag a teacher is expected to emit when it has no reason to pick a
    /// variant (contrast may alternatively use [`ErrorTag::ConKgLookup`]).
    pub fn default_tag(self) -> ErrorTag {
        match self {
            ErrorType::Negation => ErrorTag::NewNeg,
            ErrorType::Contrast => ErrorTag::Con,
            ErrorType::AmplificationModality => ErrorTag::Amp,
            ErrorType::LackOfDomainKnowledge => ErrorTag::KgLookup,
            ErrorType::MultipleEntities => ErrorTag::NewMulti,
            ErrorType::DistantEntities => ErrorTag::NewDist,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorType::Negation => "negation",
            ErrorType::Contrast => "contrast",
            ErrorType::AmplificationModality => "amplification_modality",
            ErrorType::LackOfDomainKnowledge => "lack_of_domain_knowledge",
            ErrorType::MultipleEntities => "multiple_entities",
            ErrorType::DistantEntities => "distant_entities",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ErrorType::Negation => "words that reverse meaning",
            ErrorType::Contrast => "oppositional structures that mislead the model",
            ErrorType::AmplificationModality => "modifiers of intensity or certainty",
            ErrorType::LackOfDomainKnowledge => "requires biomedical background knowledge",
            ErrorType::MultipleEntities => "several entities blur the scope of the relation",
            ErrorType::DistantEntities => "widely separated entity mentions",
        }
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Remediation tags. Serialized as their literal token.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ErrorTag {
    #[serde(rename = "[###NEW_NEG]")]
    NewNeg,
    #[serde(rename = "[###CON]")]
    Con,
    #[serde(rename = "[###CON_KGLOOKUP]")]
    ConKgLookup,
    #[serde(rename = "[###AMP]")]
    Amp,
    #[serde(rename = "[###KGLOOKUP]")]
    KgLookup,
    #[serde(rename = "[###NEW_MULTI]")]
    NewMulti,
    #[serde(rename = "[###NEW_DIST]")]
    NewDist,
}

impl ErrorTag {
    pub const ALL: [ErrorTag; 7] = [
        ErrorTag::NewNeg,
        ErrorTag::Con,
        ErrorTag::ConKgLookup,
        ErrorTag::Amp,
        ErrorTag::KgLookup,
        ErrorTag::NewMulti,
        ErrorTag::NewDist,
    ];

    pub fn token(self) -> &'static str {
        match self {
            ErrorTag::NewNeg => "[###NEW_NEG]",
            ErrorTag::Con => "[###CON]",
            ErrorTag::ConKgLookup => "[###CON_KGLOOKUP]",
            ErrorTag::Amp => "[###AMP]",
            ErrorTag::KgLookup => "[###KGLOOKUP]",
            ErrorTag::NewMulti => "[###NEW_MULTI]",
            ErrorTag::NewDist => "[###NEW_DIST]",
        }
    }

    pub fn from_token(token: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|t| t.token() == token)
    }

    /// The error type whose remediation rule emits this tag. Contrast is
    /// handled by the ambiguity rule.
    pub fn rule_class(self) -> ErrorType {
        match self {
            ErrorTag::NewNeg => ErrorType::Negation,
            ErrorTag::Con | ErrorTag::ConKgLookup => ErrorType::Contrast,
            ErrorTag::Amp => ErrorType::AmplificationModality,
            ErrorTag::KgLookup => ErrorType::LackOfDomainKnowledge,
            ErrorTag::NewMulti => ErrorType::MultipleEntities,
            ErrorTag::NewDist => ErrorType::DistantEntities,
        }
    }

    pub fn requires_kg(self) -> bool {
        matches!(self, ErrorTag::KgLookup | ErrorTag::ConKgLookup)
    }

    /// Tags whose rule produces a rewritten sentence.
    pub fn produces_rewrite(self) -> bool {
        matches!(self, ErrorTag::NewNeg | ErrorTag::NewMulti | ErrorTag::NewDist)
    }

    /// One-line remediation heuristic for the rule behind this tag.
    pub fn heuristic(self) -> &'static str {
        match self {
            ErrorTag::NewNeg => "simplify the sentence and make the negation explicit",
            ErrorTag::Con => "signal the semantic ambiguity without synthesising new examples",
            ErrorTag::ConKgLookup => "signal the ambiguity and consult external knowledge",
            ErrorTag::Amp => "highlight amplifiers and modal verbs acting on the entity pair",
            ErrorTag::KgLookup => "consult external knowledge; keep the original sentence",
            ErrorTag::NewMulti => "decompose into a sentence focused on the target entity pair",
            ErrorTag::NewDist => "restructure the sentence to bring the entities closer",
        }
    }
}

impl fmt::Display for ErrorTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Difficulty `h` from the number of distinct error types.
///
/// A single error scores 1, or 2 when it is a knowledge deficiency; two
/// errors score 3; three score 4; four or more score 5.
pub fn score_difficulty(error_types: &BTreeSet<ErrorType>) -> u8 {
    match error_types.len() {
        0 => 0,
        1 if error_types.contains(&ErrorType::LackOfDomainKnowledge) => 2,
        1 => 1,
        2 => 3,
        3 => 4,
        _ => 5,
    }
}

/// Teacher-assigned analysis of one instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorAnnotation {
    pub instance_id: String,
    pub error_types: BTreeSet<ErrorType>,
    pub difficulty: u8,
    pub tags: Vec<ErrorTag>,
    pub requires_kg: bool,
    pub ambiguous_discard: bool,
}

impl ErrorAnnotation {
    /// Builds an annotation, deriving difficulty and the KG flag.
    ///
    /// Tags whose rule class is not among `error_types` are dropped, and any
    /// annotated type without a tag receives its default tag.
    pub fn new(
        instance_id: impl Into<String>,
        error_types: BTreeSet<ErrorType>,
        tags: &[ErrorTag],
        ambiguous_discard: bool,
    ) -> Self {
        let instance_id = instance_id.into();
        let mut kept: Vec<ErrorTag> = Vec::new();
        for &tag in tags {
            if !error_types.contains(&tag.rule_class()) {
                log::warn!("{instance_id}: dropping tag {tag} without matching error type");
            } else if !kept.contains(&tag) {
                kept.push(tag);
            }
        }
        for &ty in &error_types {
            if !kept.iter().any(|t| t.rule_class() == ty) {
                kept.push(ty.default_tag());
            }
        }
        Self {
            difficulty: score_difficulty(&error_types),
            requires_kg: kept.iter().any(|t| t.requires_kg()),
            instance_id,
            error_types,
            tags: kept,
            ambiguous_discard,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |message: &str| Error::Validation {
            id: self.instance_id.clone(),
            message: message.into(),
        };
        if self.difficulty != score_difficulty(&self.error_types) {
            return Err(fail("difficulty inconsistent with error types"));
        }
        if self.requires_kg != self.tags.iter().any(|t| t.requires_kg()) {
            return Err(fail("requires_kg inconsistent with tags"));
        }
        if self.tags.iter().any(|t| !self.error_types.contains(&t.rule_class())) {
            return Err(fail("tag without matching error type"));
        }
        Ok(())
    }
}

// Longest first so that `[###CON_KGLOOKUP]` is never read as `[###CON]`.
fn tags_longest_first() -> [ErrorTag; 7] {
    let mut tags = ErrorTag::ALL;
    tags.sort_by_key(|t| std::cmp::Reverse(t.token().len()));
    tags
}

fn is_horizontal_space(c: char) -> bool {
    c.is_whitespace() && c != '\n' && c != '\r'
}

/// Extracts every exact tag token from `text`.
///
/// Returns the text with the tags removed and the surrounding whitespace
/// collapsed to a single space, together with the tags in order of
/// appearance. Unknown `[###...]` sequences stay in the text.
pub fn parse_tags(text: &str) -> (String, Vec<ErrorTag>) {
    let candidates = tags_longest_first();
    let mut clean = String::with_capacity(text.len());
    let mut tags = Vec::new();
    let mut rest = text;
    let mut pending_space = false;
    while let Some(c) = rest.chars().next() {
        if let Some(tag) = candidates.iter().find(|t| rest.starts_with(t.token())) {
            tags.push(*tag);
            rest = &rest[tag.token().len()..];
            let trimmed = clean.trim_end_matches(is_horizontal_space).len();
            clean.truncate(trimmed);
            rest = rest.trim_start_matches(is_horizontal_space);
            pending_space = !clean.is_empty() && !clean.ends_with('\n');
            continue;
        }
        if pending_space && c != '\n' && c != '\r' {
            clean.push(' ');
        }
        pending_space = false;
        clean.push(c);
        rest = &rest[c.len_utf8()..];
    }
    (clean, tags)
}

/// Appends `tags` to `text`, space separated.
pub fn render_tags(text: &str, tags: &[ErrorTag]) -> String {
    let mut out = text.to_string();
    for tag in tags {
        if !out.is_empty() {
            out.push(' ');
        }
        out.push_str(tag.token());
    }
    out
}

/// Whitespace-delimited tokens strictly between two spans; 0 when they overlap.
pub fn token_distance(sentence: &str, a: &EntitySpan, b: &EntitySpan) -> usize {
    if a.overlaps(b) {
        return 0;
    }
    let (first, second) = if a.char_start <= b.char_start { (a, b) } else { (b, a) };
    char_slice(sentence, first.char_end, second.char_start)
        .map(|between| between.split_whitespace().count())
        .unwrap_or(0)
}

pub fn entity_token_distance(instance: &RelationInstance) -> usize {
    token_distance(&instance.sentence, &instance.entity1, &instance.entity2)
}

/// Whether the instance qualifies for the distant-entities rule.
pub fn is_distant(instance: &RelationInstance, delta: usize) -> bool {
    entity_token_distance(instance) > delta
}
