//! Completion-style prompts and answer parsing.
//!
//! A training prompt is a declarative sentence whose completion is the answer:
//!
//! ```text
//!  ### Question: {receipt}の{CAT}
//!  ### は: {NE}です。
//! ```
//!
//! The inference prompt stops right after `### は:`, and the model's output is
//! cut at the first `です。`.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{Answer, NECategory, NONE_LITERAL};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("receipt `{receipt_id}` has empty text")]
    EmptyReceipt { receipt_id: String },
    #[error("receipt `{receipt_id}` contains the template marker {marker:?}; the response template could not be located")]
    AmbiguousMarker { receipt_id: String, marker: String },
    #[error(
        "answer for receipt `{receipt_id}` ({category}) contains the terminator {terminator:?}"
    )]
    AnswerContainsTerminator {
        receipt_id: String,
        category: NECategory,
        terminator: String,
    },
    #[error("invalid template: {0}")]
    InvalidTemplate(String),
}

/// The strings that make up a prompt. `Default` gives the reference template;
/// other values are allowed but flagged via [`PromptTemplate::is_reference`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptTemplate {
    pub leading_space: bool,
    pub instruction_marker: String,
    /// Joins the receipt text and the category label.
    pub category_connector: String,
    pub response_marker: String,
    pub terminator: String,
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self {
            leading_space: true,
            instruction_marker: "### Question:".into(),
            category_connector: "の".into(),
            response_marker: "\n ### は:".into(),
            terminator: "です。".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Training,
    Inference,
}

impl fmt::Display for PromptKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromptKind::Training => "training",
            PromptKind::Inference => "inference",
        })
    }
}

/// A built prompt and where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSample {
    pub receipt_id: String,
    pub category: NECategory,
    pub kind: PromptKind,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<Answer>,
}

/// A parsed model output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub raw: String,
    pub answer: Answer,
    /// Whether `raw` contained the terminator.
    pub terminated: bool,
}

/// Occurrence counts of the two markers in a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TemplateIntegrity {
    pub instruction_count: usize,
    pub response_count: usize,
}

impl TemplateIntegrity {
    pub fn is_ok(&self) -> bool {
        self.instruction_count == 1 && self.response_count == 1
    }
}

impl PromptTemplate {
    pub fn validate(&self) -> Result<(), PromptError> {
        if self.instruction_marker.is_empty() || self.response_marker.is_empty() {
            return Err(PromptError::InvalidTemplate(
                "markers must be non-empty".into(),
            ));
        }
        if self.terminator.is_empty() {
            return Err(PromptError::InvalidTemplate(
                "terminator must be non-empty".into(),
            ));
        }
        if self.instruction_marker == self.response_marker {
            return Err(PromptError::InvalidTemplate(
                "instruction and response markers must differ".into(),
            ));
        }
        Ok(())
    }

    /// True for the unmodified reference template.
    pub fn is_reference(&self) -> bool {
        *self == PromptTemplate::default()
    }

    /// Hex SHA-256 over the template strings, for run manifests.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for part in [
            if self.leading_space { " " } else { "" },
            &self.instruction_marker,
            &self.category_connector,
            &self.response_marker,
            &self.terminator,
        ] {
            h.update((part.len() as u64).to_le_bytes());
            h.update(part.as_bytes());
        }
        hex(&h.finalize())
    }

    fn question(
        &self,
        receipt_id: &str,
        receipt_text: &str,
        cat: NECategory,
    ) -> Result<String, PromptError> {
        if receipt_text.is_empty() {
            return Err(PromptError::EmptyReceipt {
                receipt_id: receipt_id.to_string(),
            });
        }
        for marker in [&self.instruction_marker, &self.response_marker] {
            if receipt_text.contains(marker.as_str()) {
                return Err(PromptError::AmbiguousMarker {
                    receipt_id: receipt_id.to_string(),
                    marker: marker.clone(),
                });
            }
        }
        let mut text = String::with_capacity(receipt_text.len() + 64);
        if self.leading_space {
            text.push(' ');
        }
        text.push_str(&self.instruction_marker);
        text.push(' ');
        text.push_str(receipt_text);
        text.push_str(&self.category_connector);
        text.push_str(cat.japanese_label());
        text.push_str(&self.response_marker);
        Ok(text)
    }

    /// Prompt for generation: ends with the response marker.
    pub fn inference_prompt(
        &self,
        receipt_id: &str,
        receipt_text: &str,
        cat: NECategory,
    ) -> Result<PromptSample, PromptError> {
        Ok(PromptSample {
            receipt_id: receipt_id.to_string(),
            category: cat,
            kind: PromptKind::Inference,
            text: self.question(receipt_id, receipt_text, cat)?,
            answer: None,
        })
    }

    /// Prompt for fine-tuning: the inference prompt, a space, the answer
    /// (`None` for absent answers) and the terminator.
    pub fn training_prompt(
        &self,
        receipt_id: &str,
        receipt_text: &str,
        cat: NECategory,
        answer: &Answer,
    ) -> Result<PromptSample, PromptError> {
        let mut text = self.question(receipt_id, receipt_text, cat)?;
        let answer_str = answer.as_wire_str();
        if answer_str.contains(self.terminator.as_str()) {
            return Err(PromptError::AnswerContainsTerminator {
                receipt_id: receipt_id.to_string(),
                category: cat,
                terminator: self.terminator.clone(),
            });
        }
        text.push(' ');
        text.push_str(answer_str);
        text.push_str(&self.terminator);
        Ok(PromptSample {
            receipt_id: receipt_id.to_string(),
            category: cat,
            kind: PromptKind::Training,
            text,
            answer: Some(answer.clone()),
        })
    }

    /// Cuts `raw` at the first terminator and trims whitespace. Output
    /// without a terminator is still returned as an answer, marked
    /// unterminated.
    pub fn parse_completion(&self, raw: &str) -> Completion {
        let (body, terminated) = match raw.find(self.terminator.as_str()) {
            Some(pos) => (&raw[..pos], true),
            None => (raw, false),
        };
        let body = body.trim();
        let answer = if body == NONE_LITERAL {
            Answer::None
        } else {
            Answer::Value(body.to_string())
        };
        Completion {
            raw: raw.to_string(),
            answer,
            terminated,
        }
    }

    pub fn check_integrity(&self, sample: &PromptSample) -> TemplateIntegrity {
        TemplateIntegrity {
            instruction_count: sample
                .text
                .matches(self.instruction_marker.as_str())
                .count(),
            response_count: sample.text.matches(self.response_marker.as_str()).count(),
        }
    }
}

/// [`PromptTemplate::training_prompt`] with the reference template.
pub fn build_training_prompt(
    receipt_id: &str,
    receipt_text: &str,
    cat: NECategory,
    answer: &Answer,
) -> Result<PromptSample, PromptError> {
    PromptTemplate::default().training_prompt(receipt_id, receipt_text, cat, answer)
}

/// [`PromptTemplate::inference_prompt`] with the reference template.
pub fn build_inference_prompt(
    receipt_id: &str,
    receipt_text: &str,
    cat: NECategory,
) -> Result<PromptSample, PromptError> {
    PromptTemplate::default().inference_prompt(receipt_id, receipt_text, cat)
}

/// [`PromptTemplate::parse_completion`] with the reference terminator.
pub fn parse_completion(raw: &str) -> Completion {
    PromptTemplate::default().parse_completion(raw)
}

/// [`PromptTemplate::check_integrity`] with the reference markers.
pub fn check_template_integrity(sample: &PromptSample) -> TemplateIntegrity {
    PromptTemplate::default().check_integrity(sample)
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
