//! Synthetic OCR noise.
//!
//! A [`ConfusionMatrix`] is estimated from parallel clean/OCR text and then
//! used as a substitution-only channel to corrupt clean training receipts.
//! Every corrupted sample is seeded from `(base seed, receipt id, repeat)`, so
//! output never depends on processing order.
//!
//! The generator is ChaCha8 (`rand_chacha`), which produces the same stream
//! on every platform.

mod align;
mod matrix;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{first_truth, Answer, Corpus, NECategory, Split};

pub use align::{align, edit_distance, EditOp};
pub use matrix::{estimate_confusion_matrix, ConfusionCounts, ConfusionMatrix};

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("no text pairs to estimate a confusion matrix from")]
    NothingToEstimate,
    #[error("text pair {0} has an empty clean text")]
    EmptyTruthText(usize),
    #[error("invalid confusion matrix: {0}")]
    InvalidMatrix(String),
    #[error("confusion matrix line {line}: {message}")]
    MatrixParse { line: usize, message: String },
    #[error("training variants are generated from the train split, got {0}")]
    NotTrainSplit(Split),
}

/// Which copy of the training data to produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Clean text, unchanged.
    Truth,
    /// One corrupted copy of every receipt.
    Ocr1,
    /// Ten independently seeded corrupted copies.
    Ocr10,
}

impl Variant {
    pub fn repeats(self) -> u32 {
        match self {
            Variant::Truth | Variant::Ocr1 => 1,
            Variant::Ocr10 => 10,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Truth => "truth",
            Variant::Ocr1 => "ocr1",
            Variant::Ocr10 => "ocr10",
        })
    }
}

impl FromStr for Variant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "truth" => Ok(Variant::Truth),
            "ocr1" => Ok(Variant::Ocr1),
            "ocr10" => Ok(Variant::Ocr10),
            other => Err(format!(
                "unknown variant `{other}` (expected truth, ocr1 or ocr10)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorruptionSpec {
    pub variant: Variant,
    pub base_seed: u64,
}

impl CorruptionSpec {
    pub fn new(variant: Variant, base_seed: u64) -> Self {
        Self { variant, base_seed }
    }

    pub fn repeats(&self) -> u32 {
        self.variant.repeats()
    }
}

/// Extra noise beyond character substitution. Off by default; enabling it
/// breaks the length-preserving property of the channel.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NoiseOptions {
    /// Probability of inserting a newline after each character.
    pub newline_insertion_rate: f64,
}

/// Seed for one `(receipt, repeat)` sample: the first eight bytes of
/// SHA-256 over the little-endian base seed, the length-prefixed id and the
/// repeat index.
pub fn derive_seed(base_seed: u64, record_id: &str, repeat: u32) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base_seed.to_le_bytes());
    hasher.update((record_id.len() as u64).to_le_bytes());
    hasher.update(record_id.as_bytes());
    hasher.update(u64::from(repeat).to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest is 32 bytes"))
}

/// Passes `text` through the substitution channel.
///
/// Each character found in the matrix draws one uniform number; it is
/// replaced when the draw falls below `p_sub(c)`, and the replacement is the
/// one whose cumulative probability interval contains the draw. Characters
/// outside the matrix are copied without consuming randomness.
pub fn corrupt_text(text: &str, matrix: &ConfusionMatrix, seed: u64) -> String {
    corrupt_text_with(text, matrix, seed, NoiseOptions::default())
}

pub fn corrupt_text_with(
    text: &str,
    matrix: &ConfusionMatrix,
    seed: u64,
    options: NoiseOptions,
) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Separate stream so that enabling newlines leaves substitutions intact.
    let mut newline_rng = ChaCha8Rng::seed_from_u64(seed);
    newline_rng.set_stream(1);

    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        out.push(substitute(c, matrix, &mut rng));
        if options.newline_insertion_rate > 0.0
            && newline_rng.random::<f64>() < options.newline_insertion_rate
        {
            out.push('\n');
        }
    }
    out
}

fn substitute(c: char, matrix: &ConfusionMatrix, rng: &mut ChaCha8Rng) -> char {
    let Some(replacements) = matrix.replacements(c) else {
        return c;
    };
    let draw: f64 = rng.random();
    let mut cumulative = 0.0;
    for &(replacement, p) in replacements {
        cumulative += p;
        if draw < cumulative {
            return replacement;
        }
    }
    c
}

/// One generated training sample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSample {
    pub id: String,
    pub repeat: u32,
    pub text: String,
    /// Targets from the clean record; never corrupted.
    pub answers: BTreeMap<NECategory, Answer>,
}

/// Produces the training samples for one data variant.
///
/// `truth` copies the clean text; `ocr1` and `ocr10` corrupt it with the
/// per-sample seed from [`derive_seed`]. Output is sorted by receipt id, then
/// repeat index.
pub fn generate_training_variant(
    corpus: &Corpus,
    matrix: &ConfusionMatrix,
    spec: CorruptionSpec,
) -> Result<Vec<VariantSample>, NoiseError> {
    generate_training_variant_with(corpus, matrix, spec, NoiseOptions::default())
}

pub fn generate_training_variant_with(
    corpus: &Corpus,
    matrix: &ConfusionMatrix,
    spec: CorruptionSpec,
    options: NoiseOptions,
) -> Result<Vec<VariantSample>, NoiseError> {
    if corpus.split != Split::Train {
        return Err(NoiseError::NotTrainSplit(corpus.split));
    }
    if spec.variant != Variant::Truth && matrix.is_empty() {
        log::warn!(
            "{} requested with an empty confusion matrix; samples will equal the clean text",
            spec.variant
        );
    }

    let mut samples = Vec::with_capacity(corpus.len() * spec.repeats() as usize);
    for record in &corpus.records {
        let answers: BTreeMap<_, _> = NECategory::ALL
            .into_iter()
            .map(|cat| (cat, first_truth(record, cat)))
            .collect();
        for repeat in 0..spec.repeats() {
            let text = match spec.variant {
                Variant::Truth => record.text.clone(),
                Variant::Ocr1 | Variant::Ocr10 => corrupt_text_with(
                    &record.text,
                    matrix,
                    derive_seed(spec.base_seed, &record.id, repeat),
                    options,
                ),
            };
            samples.push(VariantSample {
                id: record.id.clone(),
                repeat,
                text,
                answers: answers.clone(),
            });
        }
    }
    samples.sort_by(|a, b| a.id.cmp(&b.id).then(a.repeat.cmp(&b.repeat)));
    Ok(samples)
}

/// Serializes samples as JSONL.
pub fn samples_to_jsonl(samples: &[VariantSample]) -> String {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).expect("samples always serialize"));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{ReceiptRecord, Truth};
    use proptest::prelude::*;

    fn o_to_zero(p: f64) -> ConfusionMatrix {
        ConfusionMatrix::from_pairs([('O', '0', p)]).unwrap()
    }

    fn sample_corpus() -> Corpus {
        let shop = "Boulangerie BARUC PLUS";
        Corpus::new(
            Split::Train,
            vec![
                ReceiptRecord::new(
                    "b",
                    format!("{shop}\nTEL:078-920-8257\n合計 ¥270"),
                    Truth::new()
                        .with(NECategory::ShopName, &[shop, "BARUC"])
                        .with(NECategory::Total, &["¥270"]),
                ),
                ReceiptRecord::new("a", "OOOO", Truth::new()),
                ReceiptRecord::new("c", "LOGO", Truth::new()),
            ],
        )
    }

    #[test]
    fn empty_matrix_is_identity() {
        let text = "合計 ¥270\nOCR";
        for seed in [0, 1, u64::MAX] {
            assert_eq!(corrupt_text(text, &ConfusionMatrix::empty(), seed), text);
        }
    }

    #[test]
    fn certain_substitution() {
        assert_eq!(corrupt_text("OCR", &o_to_zero(1.0), 42), "0CR");
    }

    #[test]
    fn substitution_rate_near_probability() {
        // Binomial sd for n=10_000, p=0.3 is ~0.0046; 0.02 is over 4 sd.
        let text = "O".repeat(10_000);
        let out = corrupt_text(&text, &o_to_zero(0.3), 7);
        let rate = out.chars().filter(|&c| c == '0').count() as f64 / 10_000.0;
        assert!((rate - 0.3).abs() < 0.02, "rate {rate}");
    }

    #[test]
    fn replacement_follows_conditional_distribution() {
        let m = ConfusionMatrix::from_pairs([('O', '0', 0.2), ('O', 'Q', 0.6)]).unwrap();
        let out = corrupt_text(&"O".repeat(20_000), &m, 3);
        let zeros = out.chars().filter(|&c| c == '0').count() as f64 / 20_000.0;
        let qs = out.chars().filter(|&c| c == 'Q').count() as f64 / 20_000.0;
        assert!((zeros - 0.2).abs() < 0.015, "{zeros}");
        assert!((qs - 0.6).abs() < 0.015, "{qs}");
    }

    #[test]
    fn newline_hook_is_off_by_default_and_keeps_substitutions() {
        let m = o_to_zero(0.5);
        let text = "O".repeat(500);
        let plain = corrupt_text(&text, &m, 11);
        let noisy = corrupt_text_with(
            &text,
            &m,
            11,
            NoiseOptions {
                newline_insertion_rate: 0.1,
            },
        );
        assert!(noisy.contains('\n'));
        assert_eq!(noisy.replace('\n', ""), plain);
    }

    #[test]
    fn derived_seeds_distinct_per_repeat_and_id() {
        let mut seeds: Vec<u64> = (0..10).map(|r| derive_seed(5, "r1", r)).collect();
        seeds.push(derive_seed(5, "r2", 0));
        seeds.push(derive_seed(6, "r1", 0));
        let mut unique = seeds.clone();
        unique.sort_unstable();
        unique.dedup();
        assert_eq!(unique.len(), seeds.len());
        assert_eq!(derive_seed(5, "r1", 3), derive_seed(5, "r1", 3));
    }

    #[test]
    fn truth_variant_copies_text() {
        let corpus = sample_corpus();
        let samples = generate_training_variant(
            &corpus,
            &o_to_zero(1.0),
            CorruptionSpec::new(Variant::Truth, 1),
        )
        .unwrap();
        assert_eq!(samples.len(), 3);
        for s in &samples {
            assert_eq!(s.text, corpus.get(&s.id).unwrap().text);
        }
        // Sorted by id.
        let ids: Vec<_> = samples.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
    }

    #[test]
    fn answers_are_never_corrupted() {
        let corpus = sample_corpus();
        let m = ConfusionMatrix::from_pairs([('B', '8', 1.0), ('7', '1', 1.0)]).unwrap();
        let samples =
            generate_training_variant(&corpus, &m, CorruptionSpec::new(Variant::Ocr1, 9)).unwrap();
        let b = samples.iter().find(|s| s.id == "b").unwrap();
        assert!(b.text.starts_with("8oulangerie 8ARUC PLUS"));
        assert_eq!(
            b.answers[&NECategory::ShopName],
            Answer::Value("Boulangerie BARUC PLUS".into())
        );
        assert_eq!(b.answers[&NECategory::Address], Answer::None);
        assert_eq!(b.answers[&NECategory::Total], Answer::Value("¥270".into()));
    }

    #[test]
    fn ocr10_has_ten_repeats_and_is_reproducible() {
        let corpus = sample_corpus();
        let spec = CorruptionSpec::new(Variant::Ocr10, 1234);
        let m = o_to_zero(0.5);
        let first = generate_training_variant(&corpus, &m, spec).unwrap();
        assert_eq!(first.len(), 30);
        for id in ["a", "b", "c"] {
            let repeats: Vec<u32> = first
                .iter()
                .filter(|s| s.id == id)
                .map(|s| s.repeat)
                .collect();
            assert_eq!(repeats, (0..10).collect::<Vec<_>>());
        }
        let second = generate_training_variant(&corpus, &m, spec).unwrap();
        assert_eq!(samples_to_jsonl(&first), samples_to_jsonl(&second));

        // Record order in the corpus does not matter.
        let mut reversed = corpus.clone();
        reversed.records.reverse();
        let third = generate_training_variant(&reversed, &m, spec).unwrap();
        assert_eq!(first, third);
    }

    #[test]
    fn rejects_non_train_split() {
        let mut corpus = sample_corpus();
        corpus.split = Split::Test;
        assert!(matches!(
            generate_training_variant(
                &corpus,
                &ConfusionMatrix::empty(),
                CorruptionSpec::new(Variant::Ocr1, 0)
            ),
            Err(NoiseError::NotTrainSplit(Split::Test))
        ));
    }

    #[test]
    fn sample_json_shape() {
        let corpus = sample_corpus();
        let samples = generate_training_variant(
            &corpus,
            &ConfusionMatrix::empty(),
            CorruptionSpec::new(Variant::Truth, 0),
        )
        .unwrap();
        let v: serde_json::Value = serde_json::to_value(&samples[1]).unwrap();
        assert_eq!(v["id"], "b");
        assert_eq!(v["repeat"], 0);
        assert_eq!(v["answers"]["住所"], "None");
        assert_eq!(v["answers"]["店名"], "Boulangerie BARUC PLUS");
    }

    proptest! {
        #[test]
        fn corruption_preserves_length_and_fixed_points(
            text in "[OB¥a-c 合計\n]{0,60}",
            p in 0.01f64..1.0,
            seed in any::<u64>(),
        ) {
            let m = ConfusionMatrix::from_pairs([('O', '0', p), ('¥', 'Y', p)]).unwrap();
            let out = corrupt_text(&text, &m, seed);
            prop_assert_eq!(&out, &corrupt_text(&text, &m, seed));
            prop_assert_eq!(out.chars().count(), text.chars().count());
            for (a, b) in text.chars().zip(out.chars()) {
                if m.replacements(a).is_none() {
                    prop_assert_eq!(a, b);
                }
            }
        }

        #[test]
        fn self_pairs_estimate_nothing(text in "\\PC{1,40}") {
            let (m, _) = estimate_confusion_matrix(&[(text.as_str(), text.as_str())]).unwrap();
            prop_assert_eq!(m.pair_count(), 0);
        }
    }
}
