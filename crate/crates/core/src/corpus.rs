//! Annotated receipt corpora.
//!
//! A corpus file is JSONL, one receipt per line:
//!
//! ```text
//! {"id": "r1", "text": "...", "truth": {"店名": ["..."], "住所": [], ...}}
//! ```
//!
//! Only the six extraction categories are recognised. Categories missing from
//! a line load as empty lists, which means the receipt's answer for that
//! category is `None`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeMap, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The literal used for [`Answer::None`] at the prompt and file boundary.
pub const NONE_LITERAL: &str = "None";

/// The six entity categories, in their canonical table order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum NECategory {
    #[serde(rename = "店名", alias = "shopname")]
    ShopName,
    #[serde(rename = "住所", alias = "address")]
    Address,
    #[serde(rename = "品目_1", alias = "item1")]
    Item1,
    #[serde(rename = "電話番号", alias = "telephone")]
    Telephone,
    #[serde(rename = "日付", alias = "date")]
    Date,
    #[serde(rename = "合計", alias = "total")]
    Total,
}

impl NECategory {
    pub const ALL: [NECategory; 6] = [
        NECategory::ShopName,
        NECategory::Address,
        NECategory::Item1,
        NECategory::Telephone,
        NECategory::Date,
        NECategory::Total,
    ];

    /// Label used in prompts, corpus files and reports.
    pub fn japanese_label(self) -> &'static str {
        match self {
            NECategory::ShopName => "店名",
            NECategory::Address => "住所",
            NECategory::Item1 => "品目_1",
            NECategory::Telephone => "電話番号",
            NECategory::Date => "日付",
            NECategory::Total => "合計",
        }
    }

    pub fn english_id(self) -> &'static str {
        match self {
            NECategory::ShopName => "shopname",
            NECategory::Address => "address",
            NECategory::Item1 => "item1",
            NECategory::Telephone => "telephone",
            NECategory::Date => "date",
            NECategory::Total => "total",
        }
    }

    /// Numeric categories are compared on their digits only.
    pub fn is_numeric(self) -> bool {
        matches!(
            self,
            NECategory::Telephone | NECategory::Date | NECategory::Total
        )
    }

    /// Position in table order, `0..6`.
    pub fn index(self) -> usize {
        self as usize
    }

    /// Accepts either the Japanese label or the English id.
    pub fn from_label(label: &str) -> Option<NECategory> {
        NECategory::ALL
            .into_iter()
            .find(|c| c.japanese_label() == label || c.english_id() == label)
    }
}

impl fmt::Display for NECategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.japanese_label())
    }
}

impl FromStr for NECategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        NECategory::from_label(s).ok_or_else(|| format!("unknown category `{s}`"))
    }
}

/// An extracted or expected answer: a surface form, or the explicit absence
/// of one.
///
/// On the wire (prompts, completion files) `None` is the literal string
/// `"None"`; inside the data model it is a separate variant so that it can
/// never be confused with a surface form.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Answer {
    Value(String),
    None,
}

impl Answer {
    pub fn is_none(&self) -> bool {
        matches!(self, Answer::None)
    }

    /// The string that appears in a prompt or answer file.
    pub fn as_wire_str(&self) -> &str {
        match self {
            Answer::Value(s) => s,
            Answer::None => NONE_LITERAL,
        }
    }

    /// Inverse of [`Answer::as_wire_str`].
    pub fn from_wire(s: &str) -> Answer {
        if s == NONE_LITERAL {
            Answer::None
        } else {
            Answer::Value(s.to_string())
        }
    }

    pub fn value(&self) -> Option<&str> {
        match self {
            Answer::Value(s) => Some(s),
            Answer::None => None,
        }
    }
}

impl fmt::Display for Answer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_wire_str())
    }
}

impl Serialize for Answer {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_wire_str())
    }
}

impl<'de> Deserialize<'de> for Answer {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(Answer::from_wire(&s))
    }
}

/// Ground-truth surface forms for every category of one receipt.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Truth([Vec<String>; 6]);

impl Truth {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, cat: NECategory) -> &[String] {
        &self.0[cat.index()]
    }

    pub fn set(&mut self, cat: NECategory, forms: Vec<String>) {
        self.0[cat.index()] = forms;
    }

    pub fn with(mut self, cat: NECategory, forms: &[&str]) -> Self {
        self.set(cat, forms.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn iter(&self) -> impl Iterator<Item = (NECategory, &[String])> {
        NECategory::ALL.into_iter().map(|c| (c, self.get(c)))
    }
}

impl Serialize for Truth {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(6))?;
        for (cat, forms) in self.iter() {
            map.serialize_entry(cat.japanese_label(), forms)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for Truth {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = BTreeMap::<String, Vec<String>>::deserialize(deserializer)?;
        Truth::from_raw(raw)
            .map_err(|key| de::Error::custom(format!("unknown category key `{key}`")))
    }
}

impl Truth {
    fn from_raw(raw: BTreeMap<String, Vec<String>>) -> Result<Self, String> {
        let mut truth = Truth::new();
        for (key, forms) in raw {
            let cat = NECategory::ALL
                .into_iter()
                .find(|c| c.japanese_label() == key)
                .ok_or(key)?;
            truth.set(cat, forms);
        }
        Ok(truth)
    }
}

/// One annotated receipt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceiptRecord {
    pub id: String,
    pub text: String,
    pub truth: Truth,
}

impl ReceiptRecord {
    pub fn new(id: impl Into<String>, text: impl Into<String>, truth: Truth) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            truth,
        }
    }

    /// Categories whose ground truth contains the literal string `"None"`,
    /// which cannot be told apart from an absent answer once serialized.
    pub fn literal_none_categories(&self) -> Vec<NECategory> {
        self.truth
            .iter()
            .filter(|(_, forms)| forms.iter().any(|f| f == NONE_LITERAL))
            .map(|(c, _)| c)
            .collect()
    }
}

/// First annotated surface form for `cat`, or [`Answer::None`] when the
/// receipt has none. Training targets use only this first form.
pub fn first_truth(record: &ReceiptRecord, cat: NECategory) -> Answer {
    match record.truth.get(cat).first() {
        Some(form) => Answer::Value(form.clone()),
        None => Answer::None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },
    #[error("line {line}: unknown category key `{key}`")]
    UnknownCategory { line: usize, key: String },
    #[error("line {line}: duplicate receipt id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: receipt `{id}` has empty text")]
    EmptyText { line: usize, id: String },
    #[error("receipt `{id}` appears in both the {first} and {second} splits")]
    SplitOverlap {
        id: String,
        first: Split,
        second: Split,
    },
}

/// One split of a receipt dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub split: Split,
    pub records: Vec<ReceiptRecord>,
}

// Intermediate shape so that each kind of defect gets its own error.
#[derive(Deserialize)]
struct RawRecord {
    id: Option<String>,
    text: Option<String>,
    truth: Option<BTreeMap<String, Vec<String>>>,
}

impl Corpus {
    pub fn new(split: Split, records: Vec<ReceiptRecord>) -> Self {
        Self { split, records }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&ReceiptRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Parses JSONL corpus content. Blank lines are ignored.
    pub fn from_reader<R: Read>(reader: R, split: Split) -> Result<Corpus, CorpusError> {
        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for (idx, line) in BufReader::new(reader).lines().enumerate() {
            let line_no = idx + 1;
            let line = line.map_err(|e| CorpusError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: RawRecord =
                serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
                    line: line_no,
                    message: e.to_string(),
                })?;
            let id = raw.id.ok_or(CorpusError::MissingField {
                line: line_no,
                field: "id",
            })?;
            let text = raw.text.ok_or(CorpusError::MissingField {
                line: line_no,
                field: "text",
            })?;
            let truth = raw.truth.ok_or(CorpusError::MissingField {
                line: line_no,
                field: "truth",
            })?;
            let truth = Truth::from_raw(truth)
                .map_err(|key| CorpusError::UnknownCategory { line: line_no, key })?;
            if text.is_empty() {
                return Err(CorpusError::EmptyText { line: line_no, id });
            }
            if !seen.insert(id.clone()) {
                return Err(CorpusError::DuplicateId { line: line_no, id });
            }
            let record = ReceiptRecord { id, text, truth };
            for cat in record.literal_none_categories() {
                log::warn!(
                    "line {line_no}: receipt `{}` has a {cat} answer spelled \"None\"; it will read as an absent answer in prompts",
                    record.id
                );
            }
            records.push(record);
        }
        Ok(Corpus { split, records })
    }

    pub fn to_writer<W: Write>(&self, mut writer: W) -> std::io::Result<()> {
        for record in &self.records {
            serde_json::to_writer(&mut writer, record)?;
            writer.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.to_writer(&mut buf)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }
}

/// Loads a JSONL corpus file.
pub fn load_corpus(path: impl AsRef<Path>, split: Split) -> Result<Corpus, CorpusError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| CorpusError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Corpus::from_reader(file, split)
}

/// Checks that no receipt id is shared between splits.
pub fn ensure_disjoint(corpora: &[&Corpus]) -> Result<(), CorpusError> {
    let mut owner: HashMap<&str, Split> = HashMap::new();
    for corpus in corpora {
        for record in &corpus.records {
            if let Some(&first) = owner.get(record.id.as_str()) {
                if first != corpus.split {
                    return Err(CorpusError::SplitOverlap {
                        id: record.id.clone(),
                        first,
                        second: corpus.split,
                    });
                }
            }
            owner.insert(&record.id, corpus.split);
        }
    }
    Ok(())
}
