//! Character-level IO tagging for the classifier baseline.
//!
//! Every character carries one of eight tags: `O`, the whitespace tag `_`, or
//! `I-{category}`. There are no `B-` tags, so two adjacent entities of the
//! same category decode as one.

mod rule;

use std::fmt;

use serde::de::Deserializer;
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{NECategory, ReceiptRecord, Truth};

pub use rule::{predict_with_tagger, rule_tag, tag_chunked, RuleTagger, Tagger};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BioError {
    #[error("{chars} characters but {tags} tags")]
    LengthMismatch { chars: usize, tags: usize },
    #[error("position {position}: whitespace tag on non-whitespace character {ch:?}")]
    WhitespaceTagOnText { position: usize, ch: char },
    #[error("position {position}: whitespace character tagged O")]
    UntaggedWhitespace { position: usize },
    #[error("unknown tag `{0}`")]
    UnknownTag(String),
    #[error("receipt `{receipt_id}`: {second} entity {form:?} overlaps a {first} entity")]
    Overlap {
        receipt_id: String,
        first: NECategory,
        second: NECategory,
        form: String,
    },
    #[error("chunk length must be at least 1")]
    ZeroChunkLength,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CharTag {
    O,
    Whitespace,
    Inside(NECategory),
}

impl CharTag {
    pub const ALL: [CharTag; 8] = [
        CharTag::O,
        CharTag::Whitespace,
        CharTag::Inside(NECategory::ShopName),
        CharTag::Inside(NECategory::Address),
        CharTag::Inside(NECategory::Item1),
        CharTag::Inside(NECategory::Telephone),
        CharTag::Inside(NECategory::Date),
        CharTag::Inside(NECategory::Total),
    ];

    pub fn name(&self) -> String {
        match self {
            CharTag::O => "O".into(),
            CharTag::Whitespace => "_".into(),
            CharTag::Inside(cat) => format!("I-{}", cat.japanese_label()),
        }
    }

    pub fn parse(name: &str) -> Result<CharTag, BioError> {
        match name {
            "O" => Ok(CharTag::O),
            "_" => Ok(CharTag::Whitespace),
            _ => name
                .strip_prefix("I-")
                .and_then(NECategory::from_label)
                .map(CharTag::Inside)
                .ok_or_else(|| BioError::UnknownTag(name.to_string())),
        }
    }

    pub fn category(&self) -> Option<NECategory> {
        match self {
            CharTag::Inside(cat) => Some(*cat),
            _ => None,
        }
    }
}

impl fmt::Display for CharTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl Serialize for CharTag {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.name())
    }
}

impl<'de> Deserialize<'de> for CharTag {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        CharTag::parse(&s).map_err(serde::de::Error::custom)
    }
}

/// Whitespace for tagging purposes: space, ideographic space, tab, newline
/// and carriage return.
pub fn is_tag_whitespace(c: char) -> bool {
    matches!(c, ' ' | '\u{3000}' | '\t' | '\n' | '\r')
}

/// A text with one tag per character.
///
/// Whitespace characters are tagged `_` unless they sit inside an entity, in
/// which case they keep the entity's tag so that decoding reproduces the
/// surface form exactly. No other character is ever tagged `_`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TagSequence {
    chars: String,
    tags: Vec<CharTag>,
}

impl TagSequence {
    pub fn new(chars: impl Into<String>, tags: Vec<CharTag>) -> Result<Self, BioError> {
        let chars = chars.into();
        let n = chars.chars().count();
        if n != tags.len() {
            return Err(BioError::LengthMismatch {
                chars: n,
                tags: tags.len(),
            });
        }
        for (position, (ch, tag)) in chars.chars().zip(&tags).enumerate() {
            match (is_tag_whitespace(ch), tag) {
                (false, CharTag::Whitespace) => {
                    return Err(BioError::WhitespaceTagOnText { position, ch })
                }
                (true, CharTag::O) => return Err(BioError::UntaggedWhitespace { position }),
                _ => {}
            }
        }
        Ok(Self { chars, tags })
    }

    /// All characters `O`, except whitespace which gets `_`.
    pub fn untagged(chars: impl Into<String>) -> Self {
        let chars = chars.into();
        let tags = chars.chars().map(base_tag).collect();
        Self { chars, tags }
    }

    pub fn chars(&self) -> &str {
        &self.chars
    }

    pub fn tags(&self) -> &[CharTag] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Tags `[start, end)` (character positions) with `cat`.
    pub(crate) fn mark(&mut self, start: usize, end: usize, cat: NECategory) {
        for tag in &mut self.tags[start..end] {
            *tag = CharTag::Inside(cat);
        }
    }

    /// Joins sequences end to end.
    pub fn concat<'a>(parts: impl IntoIterator<Item = &'a TagSequence>) -> TagSequence {
        let mut chars = String::new();
        let mut tags = Vec::new();
        for p in parts {
            chars.push_str(&p.chars);
            tags.extend_from_slice(&p.tags);
        }
        TagSequence { chars, tags }
    }
}

impl<'de> Deserialize<'de> for TagSequence {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            chars: String,
            tags: Vec<CharTag>,
        }
        let raw = Raw::deserialize(deserializer)?;
        TagSequence::new(raw.chars, raw.tags).map_err(serde::de::Error::custom)
    }
}

fn base_tag(c: char) -> CharTag {
    if is_tag_whitespace(c) {
        CharTag::Whitespace
    } else {
        CharTag::O
    }
}

/// Non-fatal problems found while encoding a record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EncodeWarning {
    /// The surface form does not occur in the text, so it stays untagged.
    NotFound {
        category: NECategory,
        form: String,
    },
    EmptyForm {
        category: NECategory,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Encoded {
    pub sequence: TagSequence,
    pub warnings: Vec<EncodeWarning>,
}

/// Tags every annotated surface form of `record` in its text.
///
/// Forms are located by exact substring search, longest first; each form
/// takes its first occurrence that does not overlap an entity of another
/// category. A form whose every occurrence collides with another category is
/// an error.
pub fn encode_tags(record: &ReceiptRecord) -> Result<Encoded, BioError> {
    let text: Vec<char> = record.text.chars().collect();
    let mut seq = TagSequence::untagged(record.text.clone());
    let mut warnings = Vec::new();

    let mut forms: Vec<(NECategory, Vec<char>)> = record
        .truth
        .iter()
        .flat_map(|(cat, forms)| forms.iter().map(move |f| (cat, f.chars().collect())))
        .collect();
    // Stable: ties keep category order, then annotation order.
    forms.sort_by_key(|(_, f): &(NECategory, Vec<char>)| std::cmp::Reverse(f.len()));

    for (cat, form) in forms {
        if form.is_empty() {
            warnings.push(EncodeWarning::EmptyForm { category: cat });
            continue;
        }
        let mut blocker = None;
        let mut placed = false;
        for start in occurrences(&text, &form) {
            let end = start + form.len();
            match seq.tags[start..end]
                .iter()
                .filter_map(CharTag::category)
                .find(|&c| c != cat)
            {
                Some(other) => {
                    blocker.get_or_insert(other);
                }
                None => {
                    seq.mark(start, end, cat);
                    placed = true;
                    break;
                }
            }
        }
        if placed {
            continue;
        }
        let form: String = form.into_iter().collect();
        match blocker {
            Some(first) => {
                return Err(BioError::Overlap {
                    receipt_id: record.id.clone(),
                    first,
                    second: cat,
                    form,
                })
            }
            None => {
                log::warn!(
                    "receipt `{}`: {cat} entity {form:?} not found in text",
                    record.id
                );
                warnings.push(EncodeWarning::NotFound {
                    category: cat,
                    form,
                });
            }
        }
    }
    Ok(Encoded {
        sequence: seq,
        warnings,
    })
}

fn occurrences<'a>(text: &'a [char], needle: &'a [char]) -> impl Iterator<Item = usize> + 'a {
    text.windows(needle.len())
        .enumerate()
        .filter(move |(_, w)| *w == needle)
        .map(|(i, _)| i)
}

/// Extracts entities: each maximal run of one `I-` tag is one surface form.
pub fn decode_tags(seq: &TagSequence) -> Truth {
    let mut out: [Vec<String>; 6] = Default::default();
    let mut current: Option<(NECategory, String)> = None;
    for (ch, tag) in seq.chars.chars().zip(&seq.tags) {
        match (tag.category(), current.as_mut()) {
            (Some(cat), Some((run_cat, buf))) if *run_cat == cat => buf.push(ch),
            (cat, _) => {
                if let Some((run_cat, buf)) = current.take() {
                    out[run_cat.index()].push(buf);
                }
                current = cat.map(|c| (c, ch.to_string()));
            }
        }
    }
    if let Some((run_cat, buf)) = current {
        out[run_cat.index()].push(buf);
    }
    let mut truth = Truth::new();
    for cat in NECategory::ALL {
        truth.set(cat, std::mem::take(&mut out[cat.index()]));
    }
    truth
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawChunking")]
pub struct ChunkingConfig {
    max_len: usize,
}

#[derive(Deserialize)]
struct RawChunking {
    #[serde(default = "default_max_len")]
    max_len: usize,
}

fn default_max_len() -> usize {
    512
}

impl TryFrom<RawChunking> for ChunkingConfig {
    type Error = BioError;

    fn try_from(raw: RawChunking) -> Result<Self, BioError> {
        ChunkingConfig::new(raw.max_len)
    }
}

impl Default for ChunkingConfig {
    fn default() -> Self {
        Self {
            max_len: default_max_len(),
        }
    }
}

impl ChunkingConfig {
    pub fn new(max_len: usize) -> Result<Self, BioError> {
        if max_len == 0 {
            return Err(BioError::ZeroChunkLength);
        }
        Ok(Self { max_len })
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }
}

/// Splits into consecutive, non-overlapping pieces of at most `max_len`
/// characters. An empty sequence yields no chunks.
pub fn chunk(seq: &TagSequence, cfg: ChunkingConfig) -> Vec<TagSequence> {
    let chars: Vec<char> = seq.chars.chars().collect();
    chars
        .chunks(cfg.max_len)
        .zip(seq.tags.chunks(cfg.max_len))
        .map(|(c, t)| TagSequence {
            chars: c.iter().collect(),
            tags: t.to_vec(),
        })
        .collect()
}

/// An entity that chunking would cut in two.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Straddle {
    pub category: NECategory,
    /// Character range of the entity run.
    pub start: usize,
    pub end: usize,
}

/// Entity runs that cross a chunk boundary.
pub fn straddling_entities(seq: &TagSequence, cfg: ChunkingConfig) -> Vec<Straddle> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < seq.tags.len() {
        let Some(cat) = seq.tags[i].category() else {
            i += 1;
            continue;
        };
        let start = i;
        while i < seq.tags.len() && seq.tags[i] == CharTag::Inside(cat) {
            i += 1;
        }
        if start / cfg.max_len != (i - 1) / cfg.max_len {
            out.push(Straddle {
                category: cat,
                start,
                end: i,
            });
        }
    }
    out
}
