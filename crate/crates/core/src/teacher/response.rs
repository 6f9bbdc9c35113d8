//! Strict parsing of structured teacher replies.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::taxonomy::{parse_tags, score_difficulty, ErrorTag, ErrorType};

use super::prompt::PromptRole;

/// Published reply schema. Unknown fields are rejected.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawResponse {
    error_types: Option<Vec<String>>,
    difficulty: Option<i64>,
    rewritten_sentence: Option<String>,
    solution_guidance: Option<Vec<String>>,
    tags: Option<Vec<String>>,
    kg_needed: Option<bool>,
    discard: Option<bool>,
    predicted_relation: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TeacherResponse {
    pub error_types: BTreeSet<ErrorType>,
    /// Always recomputed from `error_types`.
    pub difficulty: u8,
    pub rewritten_sentence: Option<String>,
    pub solution_guidance: Vec<String>,
    pub tags: Vec<ErrorTag>,
    pub kg_needed: bool,
    pub discard: bool,
    pub predicted_relation: Option<BTreeSet<String>>,
}

fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    let Some(body) = t.strip_prefix("```") else {
        return t;
    };
    let body = body.split_once('\n').map(|(_, rest)| rest).unwrap_or("");
    body.trim_end().strip_suffix("```").unwrap_or(body).trim()
}

fn parse_error_type(name: &str) -> Result<ErrorType, String> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| format!("unknown error type `{name}`"))
}

fn push_unique(tags: &mut Vec<ErrorTag>, tag: ErrorTag) {
    if !tags.contains(&tag) {
        tags.push(tag);
    }
}

/// Parses a reply for the given role, returning a description of the
/// problem when the reply does not follow the schema.
pub fn parse_response(text: &str, role: PromptRole) -> Result<TeacherResponse, String> {
    let raw: RawResponse =
        serde_json::from_str(strip_fences(text)).map_err(|e| format!("reply is not valid JSON for the schema: {e}"))?;

    let require = |present: bool, field: &str| {
        if present {
            Ok(())
        } else {
            Err(format!("missing field `{field}`"))
        }
    };
    match role {
        PromptRole::ErrorClassify => require(raw.error_types.is_some(), "error_types")?,
        PromptRole::Remediate => {
            require(raw.tags.is_some(), "tags")?;
            require(
                raw.solution_guidance.as_ref().is_some_and(|s| s.iter().any(|step| !step.trim().is_empty())),
                "solution_guidance",
            )?;
        }
        PromptRole::VerifyRelation => require(raw.predicted_relation.is_some(), "predicted_relation")?,
        _ => {}
    }

    let error_types = raw
        .error_types
        .unwrap_or_default()
        .iter()
        .map(|n| parse_error_type(n))
        .collect::<Result<BTreeSet<_>, _>>()?;

    let mut tags = Vec::new();
    for token in raw.tags.unwrap_or_default() {
        match ErrorTag::from_token(token.trim()) {
            Some(tag) => push_unique(&mut tags, tag),
            None => log::warn!("ignoring unknown tag `{token}` in teacher reply"),
        }
    }

    // Tags written inline in the rewrite are lifted into the tag list.
    let rewritten_sentence = raw.rewritten_sentence.and_then(|s| {
        let (clean, inline) = parse_tags(&s);
        for tag in inline {
            push_unique(&mut tags, tag);
        }
        let clean = clean.trim().to_string();
        (!clean.is_empty()).then_some(clean)
    });

    let difficulty = score_difficulty(&error_types);
    if let Some(claimed) = raw.difficulty {
        if claimed != i64::from(difficulty) {
            log::debug!("teacher claimed difficulty {claimed}, recomputed {difficulty}");
        }
    }

    Ok(TeacherResponse {
        error_types,
        difficulty,
        rewritten_sentence,
        solution_guidance: raw
            .solution_guidance
            .unwrap_or_default()
            .into_iter()
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect(),
        tags,
        kg_needed: raw.kg_needed.unwrap_or(false),
        discard: raw.discard.unwrap_or(false),
        predicted_relation: raw
            .predicted_relation
            .map(|labels| labels.into_iter().map(|l| l.trim().to_string()).collect()),
    })
}

/// Checks a remediation reply against the diagnosed error types.
///
/// Every tag must belong to a diagnosed type, every diagnosed type needs a
/// tag, and a rewrite is present exactly when a rewrite-producing tag is.
pub fn check_remediation(response: &TeacherResponse, diagnosed: &BTreeSet<ErrorType>) -> Result<(), String> {
    if response.discard {
        return Ok(());
    }
    if let Some(tag) = response.tags.iter().find(|t| !diagnosed.contains(&t.rule_class())) {
        return Err(format!("tag {tag} has no matching diagnosed error type"));
    }
    if let Some(ty) = diagnosed.iter().find(|ty| !response.tags.iter().any(|t| t.rule_class() == **ty)) {
        return Err(format!("diagnosed error type `{ty}` has no tag"));
    }
    let wants_rewrite = response.tags.iter().any(|t| t.produces_rewrite());
    match (wants_rewrite, response.rewritten_sentence.is_some()) {
        (true, false) => Err("rewrite-producing tag without a rewritten sentence".into()),
        (false, true) => Err("rewritten sentence without a rewrite-producing tag".into()),
        _ => Ok(()),
    }
}
