use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::align::{align, EditOp};
use super::NoiseError;

const TSV_HEADER: &str = "source_char\treplacement_char\tprobability";
const PROB_SLACK: f64 = 1e-9;

/// Unigram character substitution model.
///
/// Each source character maps to replacement characters with the probability
/// that an OCR reading of the source yields that replacement. The remaining
/// mass `1 - p_sub(c)` is the probability of reading `c` correctly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConfusionMatrix {
    // Replacement lists are sorted by character.
    entries: BTreeMap<char, Vec<(char, f64)>>,
}

impl ConfusionMatrix {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Builds a matrix from `(source, replacement, probability)` triples.
    pub fn from_pairs(
        pairs: impl IntoIterator<Item = (char, char, f64)>,
    ) -> Result<Self, NoiseError> {
        let mut entries: BTreeMap<char, Vec<(char, f64)>> = BTreeMap::new();
        for (src, dst, p) in pairs {
            if src == dst {
                return Err(NoiseError::InvalidMatrix(format!(
                    "pair {src:?} -> {dst:?} replaces a character with itself"
                )));
            }
            if !(p.is_finite() && p > 0.0 && p <= 1.0) {
                return Err(NoiseError::InvalidMatrix(format!(
                    "pair {src:?} -> {dst:?} has probability {p} outside (0, 1]"
                )));
            }
            let list = entries.entry(src).or_default();
            if list.iter().any(|&(d, _)| d == dst) {
                return Err(NoiseError::InvalidMatrix(format!(
                    "pair {src:?} -> {dst:?} is listed twice"
                )));
            }
            list.push((dst, p));
        }
        for (src, list) in entries.iter_mut() {
            list.sort_by_key(|&(d, _)| d);
            let total: f64 = list.iter().map(|&(_, p)| p).sum();
            if total > 1.0 + PROB_SLACK {
                return Err(NoiseError::InvalidMatrix(format!(
                    "substitution probabilities for {src:?} sum to {total} > 1"
                )));
            }
        }
        Ok(Self { entries })
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Number of `(source, replacement)` pairs.
    pub fn pair_count(&self) -> usize {
        self.entries.values().map(Vec::len).sum()
    }

    pub fn replacements(&self, source: char) -> Option<&[(char, f64)]> {
        self.entries.get(&source).map(Vec::as_slice)
    }

    /// Probability of substituting `source` with anything; 0 for characters
    /// not in the matrix.
    pub fn p_sub(&self, source: char) -> f64 {
        self.replacements(source)
            .map(|list| list.iter().map(|&(_, p)| p).sum())
            .unwrap_or(0.0)
    }

    pub fn probability(&self, source: char, replacement: char) -> f64 {
        self.replacements(source)
            .and_then(|list| list.iter().find(|&&(d, _)| d == replacement))
            .map(|&(_, p)| p)
            .unwrap_or(0.0)
    }

    pub fn sources(&self) -> impl Iterator<Item = char> + '_ {
        self.entries.keys().copied()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (char, char, f64)> + '_ {
        self.entries
            .iter()
            .flat_map(|(&s, list)| list.iter().map(move |&(d, p)| (s, d, p)))
    }

    /// TSV with a header row; tab, newline, carriage return and backslash
    /// are written as `\t`, `\n`, `\r` and `\\`.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from(TSV_HEADER);
        out.push('\n');
        for (s, d, p) in self.pairs() {
            let _ = writeln!(out, "{}\t{}\t{}", escape(s), escape(d), p);
        }
        out
    }

    /// Parses the format written by [`ConfusionMatrix::to_tsv`]. The header
    /// row is optional.
    pub fn from_tsv(input: &str) -> Result<Self, NoiseError> {
        let mut pairs = Vec::new();
        for (idx, line) in input.lines().enumerate() {
            let line_no = idx + 1;
            if line.is_empty() || (idx == 0 && line == TSV_HEADER) {
                continue;
            }
            let bad = |msg: &str| NoiseError::MatrixParse {
                line: line_no,
                message: msg.to_string(),
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 3 {
                return Err(bad("expected three tab-separated columns"));
            }
            let src = unescape(cols[0]).ok_or_else(|| bad("source must be one character"))?;
            let dst = unescape(cols[1]).ok_or_else(|| bad("replacement must be one character"))?;
            let p: f64 = cols[2]
                .trim()
                .parse()
                .map_err(|_| bad("probability is not a number"))?;
            pairs.push((src, dst, p));
        }
        Self::from_pairs(pairs)
    }
}

fn escape(c: char) -> String {
    match c {
        '\t' => "\\t".into(),
        '\n' => "\\n".into(),
        '\r' => "\\r".into(),
        '\\' => "\\\\".into(),
        c => c.to_string(),
    }
}

fn unescape(field: &str) -> Option<char> {
    match field {
        "\\t" => Some('\t'),
        "\\n" => Some('\n'),
        "\\r" => Some('\r'),
        "\\\\" => Some('\\'),
        _ => {
            let mut it = field.chars();
            let c = it.next()?;
            it.next().is_none().then_some(c)
        }
    }
}

/// Raw alignment statistics behind a [`ConfusionMatrix`].
///
/// Kept so that matrices can be re-estimated after more parallel text is
/// collected; serialized as the counts sidecar.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    /// Occurrences of each character across all clean texts.
    pub source_occurrences: BTreeMap<char, u64>,
    /// Aligned substitutions, `source -> replacement -> count`.
    pub substitutions: BTreeMap<char, BTreeMap<char, u64>>,
    pub insertions: u64,
    pub deletions: u64,
    pub text_pairs: u64,
}

impl ConfusionCounts {
    /// Adds one aligned `(clean, ocr)` pair.
    pub fn add_pair(&mut self, truth: &str, ocr: &str) {
        let truth: Vec<char> = truth.chars().collect();
        let ocr: Vec<char> = ocr.chars().collect();
        for &c in &truth {
            *self.source_occurrences.entry(c).or_default() += 1;
        }
        for op in align(&truth, &ocr) {
            match op {
                EditOp::Match(_) => {}
                EditOp::Substitute { from, to } => {
                    *self
                        .substitutions
                        .entry(from)
                        .or_default()
                        .entry(to)
                        .or_default() += 1;
                }
                EditOp::Insert(_) => self.insertions += 1,
                EditOp::Delete(_) => self.deletions += 1,
            }
        }
        self.text_pairs += 1;
    }

    /// `P(a -> b) = count(a -> b) / occurrences(a)`.
    pub fn to_matrix(&self) -> ConfusionMatrix {
        let pairs = self.substitutions.iter().flat_map(|(&src, dsts)| {
            let occ = self.source_occurrences.get(&src).copied().unwrap_or(0);
            dsts.iter()
                .map(move |(&dst, &n)| (src, dst, n as f64 / occ as f64))
        });
        ConfusionMatrix::from_pairs(pairs).expect("counts always yield a valid matrix")
    }
}

/// Estimates a substitution matrix from parallel `(clean, ocr)` texts.
///
/// Each pair is aligned by minimum edit distance; insertions and deletions are
/// counted in [`ConfusionCounts`] but do not enter the matrix.
pub fn estimate_confusion_matrix<S: AsRef<str>>(
    pairs: &[(S, S)],
) -> Result<(ConfusionMatrix, ConfusionCounts), NoiseError> {
    if pairs.is_empty() {
        return Err(NoiseError::NothingToEstimate);
    }
    let mut counts = ConfusionCounts::default();
    for (idx, (truth, ocr)) in pairs.iter().enumerate() {
        if truth.as_ref().is_empty() {
            return Err(NoiseError::EmptyTruthText(idx));
        }
        counts.add_pair(truth.as_ref(), ocr.as_ref());
    }
    Ok((counts.to_matrix(), counts))
}
