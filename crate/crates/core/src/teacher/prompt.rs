//! Prompt templates with `{{slot}}` placeholders.
//!
//! Template texts are versioned assets under `assets/prompts/`. Rendering is
//! pure and fails if any placeholder is left without a value.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::taxonomy::{ErrorTag, ErrorType};

pub const PROMPT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptRole {
    ErrorClassify,
    Remediate,
    VerifyRelation,
    MimicExemplar,
    MimicInstruction,
    Repair,
}

impl PromptRole {
    /// The `TASK:` marker carried on the first line of backend-facing prompts.
    pub fn task_name(self) -> &'static str {
        match self {
            PromptRole::ErrorClassify => "error_classify",
            PromptRole::Remediate => "remediate",
            PromptRole::VerifyRelation => "verify_relation",
            PromptRole::MimicExemplar => "mimic_exemplar",
            PromptRole::MimicInstruction => "mimic_instruction",
            PromptRole::Repair => "repair",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub role: PromptRole,
    pub text: String,
}

impl PromptTemplate {
    pub fn new(role: PromptRole, text: impl Into<String>) -> Self {
        Self {
            role,
            text: text.into(),
        }
    }

    /// Built-in template for `role`.
    pub fn builtin(role: PromptRole) -> Self {
        let text = match role {
            PromptRole::ErrorClassify => include_str!("../../assets/prompts/v1/error_classify.txt"),
            PromptRole::Remediate => include_str!("../../assets/prompts/v1/remediate.txt"),
            PromptRole::VerifyRelation => include_str!("../../assets/prompts/v1/verify_relation.txt"),
            PromptRole::MimicExemplar => include_str!("../../assets/prompts/v1/mimic_exemplar.txt"),
            PromptRole::MimicInstruction => {
                include_str!("../../assets/prompts/v1/mimic_instruction.txt")
            }
            PromptRole::Repair => include_str!("../../assets/prompts/v1/repair.txt"),
        };
        Self::new(role, text)
    }

    /// Placeholder names in order of appearance.
    pub fn slots(&self) -> Vec<&str> {
        let mut out = Vec::new();
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find("{{") {
            let after = &rest[open + 2..];
            let Some(close) = after.find("}}") else { break };
            out.push(&after[..close]);
            rest = &after[close + 2..];
        }
        out
    }

    /// Substitutes every placeholder. Values are inserted verbatim and are
    /// not scanned for further placeholders.
    pub fn render(&self, values: &[(&str, &str)]) -> Result<String> {
        let mut out = String::with_capacity(self.text.len() + 256);
        let mut rest = self.text.as_str();
        while let Some(open) = rest.find("{{") {
            out.push_str(&rest[..open]);
            let after = &rest[open + 2..];
            let close = after.find("}}").ok_or_else(|| {
                Error::invalid(format!("{:?} template: unterminated placeholder", self.role))
            })?;
            let name = &after[..close];
            let value = values
                .iter()
                .find(|(slot, _)| *slot == name)
                .map(|(_, v)| *v)
                .ok_or_else(|| {
                    Error::invalid(format!("{:?} template: no value for slot `{name}`", self.role))
                })?;
            out.push_str(value);
            rest = &after[close + 2..];
        }
        out.push_str(rest);
        Ok(out)
    }
}

/// The per-type remediation rules given to the teacher.
pub fn remediation_rules(delta: usize) -> String {
    ErrorType::ALL
        .iter()
        .map(|ty| {
            let tags: Vec<&str> = ErrorTag::ALL
                .iter()
                .filter(|t| t.rule_class() == *ty)
                .map(|t| t.token())
                .collect();
            let heuristics: Vec<&str> = ErrorTag::ALL
                .iter()
                .filter(|t| t.rule_class() == *ty)
                .map(|t| t.heuristic())
                .collect();
            let mut line = format!(
                "- {} ({}): {}; tag {}",
                ty.as_str(),
                ty.description(),
                heuristics.join(", or "),
                tags.join(" or ")
            );
            if *ty == ErrorType::DistantEntities {
                line.push_str(&format!(" (applies when more than {delta} tokens separate the entities)"));
            }
            line
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Extracts the value of the first `KEY: value` line.
pub fn marker_line<'a>(prompt: &'a str, key: &str) -> Option<&'a str> {
    prompt
        .lines()
        .find_map(|line| line.strip_prefix(key).and_then(|l| l.strip_prefix(": ")))
}

/// The machine-readable `INPUT:` payload; the last one wins so that a repair
/// prompt wrapping an original prompt still resolves to the original input.
pub fn input_payload(prompt: &str) -> Option<&str> {
    prompt.lines().rev().find_map(|line| line.strip_prefix("INPUT: "))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_fills_every_slot() {
        let t = PromptTemplate::new(PromptRole::ErrorClassify, "S={{sentence}} E={{entity1}}/{{entity2}}");
        let out = t
            .render(&[("sentence", "A {{x}} B"), ("entity1", "A"), ("entity2", "B")])
            .unwrap();
        assert_eq!(out, "S=A {{x}} B E=A/B");
    }

    #[test]
    fn missing_slot_is_an_error() {
        let t = PromptTemplate::new(PromptRole::Remediate, "{{sentence}} {{kg_facts}}");
        let err = t.render(&[("sentence", "s")]).unwrap_err().to_string();
        assert!(err.contains("kg_facts"), "{err}");
    }

    #[test]
    fn builtin_templates_carry_task_markers() {
        for role in [PromptRole::ErrorClassify, PromptRole::Remediate, PromptRole::VerifyRelation] {
            let t = PromptTemplate::builtin(role);
            assert_eq!(marker_line(&t.text, "TASK"), Some(role.task_name()));
            assert!(t.slots().contains(&"input"));
        }
        let slots = PromptTemplate::builtin(PromptRole::Remediate).slots().join(",");
        for slot in ["sentence", "entity1", "entity2", "label_space", "kg_facts", "rules"] {
            assert!(slots.contains(slot), "{slot}");
        }
    }

    #[test]
    fn rules_mention_every_tag_once() {
        let rules = remediation_rules(20);
        for tag in ErrorTag::ALL {
            assert_eq!(rules.matches(tag.token()).count(), 1, "{tag}");
        }
        assert!(rules.contains("more than 20 tokens"));
    }
}
