//! Pattern-based reference tagger.
//!
//! Covers only the categories with a fixed surface shape: telephone numbers,
//! dates and the amount on the `合計` line. Shop names, addresses and items
//! are never tagged.

use std::sync::LazyLock;

use regex::Regex;

use super::{chunk, decode_tags, ChunkingConfig, TagSequence};
use crate::corpus::{Answer, Corpus, NECategory};
use crate::scoring::Prediction;

/// Anything that tags a text character by character.
pub trait Tagger {
    fn tag(&self, text: &str) -> TagSequence;
}

impl<F: Fn(&str) -> TagSequence> Tagger for F {
    fn tag(&self, text: &str) -> TagSequence {
        self(text)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RuleTagger;

impl Tagger for RuleTagger {
    fn tag(&self, text: &str) -> TagSequence {
        rule_tag(text)
    }
}

/// Tags `text` in pieces of at most `cfg.max_len` characters, the way a
/// fixed-context classifier sees it, and joins the results.
pub fn tag_chunked<T: Tagger + ?Sized>(tagger: &T, text: &str, cfg: ChunkingConfig) -> TagSequence {
    let pieces: Vec<TagSequence> = chunk(&TagSequence::untagged(text), cfg)
        .iter()
        .map(|piece| tagger.tag(piece.chars()))
        .collect();
    TagSequence::concat(&pieces)
}

/// Tags every receipt of `corpus` and answers each category with the first
/// decoded span, or `None` when nothing was tagged.
pub fn predict_with_tagger<T: Tagger + ?Sized>(
    corpus: &Corpus,
    tagger: &T,
    cfg: ChunkingConfig,
) -> Vec<Prediction> {
    let mut out = Vec::with_capacity(corpus.len() * NECategory::ALL.len());
    for record in &corpus.records {
        let truth = decode_tags(&tag_chunked(tagger, &record.text, cfg));
        for cat in NECategory::ALL {
            let answer = truth
                .get(cat)
                .first()
                .map(|s| Answer::Value(s.clone()))
                .unwrap_or(Answer::None);
            out.push(Prediction {
                receipt_id: record.id.clone(),
                category: cat,
                answer,
                terminated: true,
                raw: String::new(),
                error: None,
            });
        }
    }
    out
}

static DATE_KANJI: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\d{4}\s*年\s*\d{1,2}\s*月\s*\d{1,2}\s*日").unwrap());
static DATE_NUMERIC: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\d{4}[/.\-]\d{1,2}[/.\-]\d{1,2}").unwrap());
static PHONE_PREFIXED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?:TEL|Tel|tel|ＴＥＬ|電話番号|電話)\s*[:：.]?\s*(\(?\d[\d\-‐－−()（）]{7,15}\d)")
        .unwrap()
});
static PHONE_BARE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\(?0\d{1,4}\)?[\-‐－−]\d{1,4}[\-‐－−]\d{3,4}").unwrap());
static AMOUNT: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"[¥￥\\]?\s*\d{1,3}(?:[,，]\d{3})+|[¥￥\\]?\s*\d+").unwrap());

/// Reference tagger: dates (`Y/M/D` and `Y年M月D日`), telephone numbers
/// (hyphenated numbers starting with 0, or anything number-like after
/// `TEL`/`電話`), and the first amount on a line starting with `合計`.
pub fn rule_tag(text: &str) -> TagSequence {
    let mut seq = TagSequence::untagged(text);
    let index = CharIndex::new(text);
    let place = |seq: &mut TagSequence, start: usize, end: usize, cat: NECategory| {
        let (s, e) = (index.char_pos(start), index.char_pos(end));
        if seq.tags()[s..e].iter().all(|t| t.category().is_none()) {
            seq.mark(s, e, cat);
        }
    };

    for re in [&*DATE_KANJI, &*DATE_NUMERIC] {
        for m in re.find_iter(text) {
            place(&mut seq, m.start(), m.end(), NECategory::Date);
        }
    }

    for caps in PHONE_PREFIXED.captures_iter(text) {
        let m = caps.get(1).expect("group 1 always participates");
        let num = m.as_str().trim_end_matches([')', '）']);
        place(
            &mut seq,
            m.start(),
            m.start() + num.len(),
            NECategory::Telephone,
        );
    }
    for m in PHONE_BARE.find_iter(text) {
        let before = text[..m.start()].chars().next_back();
        let after = text[m.end()..].chars().next();
        let joined = |c: Option<char>| c.is_some_and(|c| c.is_ascii_digit() || c == '-');
        if !joined(before) && !joined(after) {
            place(&mut seq, m.start(), m.end(), NECategory::Telephone);
        }
    }

    let mut line_start = 0;
    for line in text.split_inclusive('\n') {
        let trimmed = line.trim_start();
        if let Some(rest) = trimmed.strip_prefix("合計") {
            let rest_start = line_start + (line.len() - rest.len());
            if let Some(m) = AMOUNT.find(rest) {
                let amount = m.as_str();
                // The leading `\s*` of the pattern may have captured a space
                // after the currency sign; the tag starts at the sign or digit.
                let lead = amount.len() - amount.trim_start().len();
                place(
                    &mut seq,
                    rest_start + m.start() + lead,
                    rest_start + m.end(),
                    NECategory::Total,
                );
            }
        }
        line_start += line.len();
    }
    seq
}

/// Byte offset to character position.
struct CharIndex {
    starts: Vec<usize>,
}

impl CharIndex {
    fn new(text: &str) -> Self {
        let mut starts: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
        starts.push(text.len());
        Self { starts }
    }

    fn char_pos(&self, byte: usize) -> usize {
        self.starts
            .binary_search(&byte)
            .expect("regex matches fall on char boundaries")
    }
}
