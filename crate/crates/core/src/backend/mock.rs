use std::collections::HashMap;

use super::{Backend, BackendError, CompletionRequest};
use crate::corpus::{first_truth, Corpus, NECategory};
use crate::prompting::PromptTemplate;

/// Deterministic backend answering from a lookup table keyed by
/// `(receipt id, category)`, with a fixed fallback for unknown keys.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    answers: HashMap<(String, NECategory), String>,
    fallback: String,
    concurrency: usize,
}

impl MockBackend {
    pub fn new(fallback: impl Into<String>) -> Self {
        Self {
            answers: HashMap::new(),
            fallback: fallback.into(),
            concurrency: 1,
        }
    }

    /// Returns `raw` for every request.
    pub fn always(raw: impl Into<String>) -> Self {
        Self::new(raw)
    }

    /// Answers every pair of `corpus` with its first ground-truth form and
    /// the reference terminator.
    pub fn oracle(corpus: &Corpus) -> Self {
        let terminator = PromptTemplate::default().terminator;
        let mut mock = Self::new(format!("None{terminator}"));
        for record in &corpus.records {
            for cat in NECategory::ALL {
                let answer = first_truth(record, cat);
                mock.insert(
                    &record.id,
                    cat,
                    format!("{}{terminator}", answer.as_wire_str()),
                );
            }
        }
        mock
    }

    pub fn insert(&mut self, receipt_id: &str, category: NECategory, raw: impl Into<String>) {
        self.answers
            .insert((receipt_id.to_string(), category), raw.into());
    }

    pub fn with_answer(
        mut self,
        receipt_id: &str,
        category: NECategory,
        raw: impl Into<String>,
    ) -> Self {
        self.insert(receipt_id, category, raw);
        self
    }

    pub fn with_concurrency(mut self, n: usize) -> Self {
        self.concurrency = n.max(1);
        self
    }
}

impl Backend for MockBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        if request.prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        Ok(self
            .answers
            .get(&(request.receipt_id.to_string(), request.category))
            .unwrap_or(&self.fallback)
            .clone())
    }

    fn max_concurrency(&self) -> usize {
        self.concurrency.max(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::GenerationParams;

    fn ask(mock: &MockBackend, id: &str, cat: NECategory) -> String {
        let params = GenerationParams::default();
        mock.complete(&CompletionRequest {
            receipt_id: id,
            category: cat,
            prompt: " ### Question: xの店名\n ### は:",
            params: &params,
        })
        .unwrap()
    }

    #[test]
    fn lookup_and_fallback() {
        let mock = MockBackend::new("Noneです。").with_answer(
            "r1",
            NECategory::ShopName,
            "Boulangerie BARUC PLUSです。",
        );
        assert_eq!(
            ask(&mock, "r1", NECategory::ShopName),
            "Boulangerie BARUC PLUSです。"
        );
        assert_eq!(ask(&mock, "r1", NECategory::Address), "Noneです。");
        assert_eq!(ask(&mock, "r2", NECategory::ShopName), "Noneです。");
    }

    #[test]
    fn empty_prompt_rejected() {
        let params = GenerationParams::default();
        let err = MockBackend::always("x")
            .complete(&CompletionRequest {
                receipt_id: "r",
                category: NECategory::Date,
                prompt: "",
                params: &params,
            })
            .unwrap_err();
        assert!(matches!(err, BackendError::EmptyPrompt));
    }
}
