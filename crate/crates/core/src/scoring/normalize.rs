use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::NECategory;

static PUNCTUATION: LazyLock<Regex> = LazyLock::new(|| {
    // General category P*, plus the symbol-like members of the CJK symbols
    // and punctuation block that are not letters or iteration marks.
    Regex::new(r"[\p{P}\x{3012}\x{3013}\x{3020}\x{3036}\x{303E}\x{303F}]").unwrap()
});

/// Knobs for [`normalize`]. The default matches the reference evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizeOptions {
    /// Also drop `¥`/`￥` from non-numeric categories. Numeric categories lose
    /// them anyway.
    pub strip_currency: bool,
}

/// Canonical form used for matching answers against ground truth.
///
/// Steps, in order: drop whitespace, drop punctuation, fold full-width
/// characters to their half-width counterparts, and for numeric categories
/// keep only ASCII digits.
pub fn normalize(s: &str, cat: NECategory, opts: NormalizeOptions) -> String {
    let no_space: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let mut out = String::with_capacity(no_space.len());
    for c in PUNCTUATION.replace_all(&no_space, "").chars() {
        if opts.strip_currency && matches!(c, '¥' | '￥') {
            continue;
        }
        out.push(fold_width(c));
    }
    if cat.is_numeric() {
        out.retain(|c| c.is_ascii_digit());
    }
    out
}

/// Maps a full-width form to its half-width counterpart. Half-width katakana
/// and characters without a counterpart are returned unchanged.
pub fn fold_width(c: char) -> char {
    match c {
        '\u{FF01}'..='\u{FF5E}' => char::from_u32(c as u32 - 0xFEE0).expect("ASCII range"),
        '\u{3000}' => ' ',
        '\u{FFE0}' => '\u{A2}',
        '\u{FFE1}' => '\u{A3}',
        '\u{FFE2}' => '\u{AC}',
        '\u{FFE3}' => '\u{AF}',
        '\u{FFE4}' => '\u{A6}',
        '\u{FFE5}' => '\u{A5}',
        '\u{FFE6}' => '\u{20A9}',
        _ => c,
    }
}
