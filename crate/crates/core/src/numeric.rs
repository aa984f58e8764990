//! Numeric token scanning and small text-matching helpers shared by the
//! OCR data path and the reward scorers.
//!
//! Locale rules: `,` is only accepted as a thousands separator between
//! groups of exactly three digits, `.` is always the decimal point (`1.234`
//! reads as 1.234, never as 1234), a leading `$` and a trailing `%` are
//! stripped. A leading `-` is a sign only at the start of a
//! token, so ranges like `2019-2020` yield two positive numbers.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

static NUMBER_RE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?:\d{1,3}(?:,\d{3})+|\d+)(?:\.\d+)?").expect("NUMBER_RE")
});

/// A number found in free text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericToken {
    pub raw: String,
    pub value: f64,
    /// Byte offset of `raw` in the scanned text.
    pub start: usize,
}

impl NumericToken {
    pub fn end(&self) -> usize {
        self.start + self.raw.len()
    }
}

fn is_word_byte(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

/// Scans `text` left to right and returns every numeric token.
pub fn scan_numbers(text: &str) -> Vec<NumericToken> {
    let bytes = text.as_bytes();
    let mut out = Vec::new();
    for m in NUMBER_RE.find_iter(text) {
        let (mut start, end) = (m.start(), m.end());
        // digits glued to letters ("Q1", "H2O") are identifiers, not values
        if start > 0 && (is_word_byte(bytes[start - 1]) || bytes[start - 1] == b'.') {
            continue;
        }
        if end < bytes.len() && (bytes[end].is_ascii_alphabetic() || bytes[end] == b'_') {
            continue;
        }
        let digits = m.as_str().replace(',', "");
        let Ok(mut value) = digits.parse::<f64>() else {
            continue;
        };
        if start > 0 && bytes[start - 1] == b'$' {
            start -= 1;
        }
        if start > 0 && bytes[start - 1] == b'-' {
            let sign_ok = start == 1 || !is_word_byte(bytes[start - 2]);
            if sign_ok {
                start -= 1;
                value = -value;
            }
        }
        let mut raw_end = end;
        if raw_end < bytes.len() && bytes[raw_end] == b'%' {
            raw_end += 1;
        }
        out.push(NumericToken {
            raw: text[start..raw_end].to_string(),
            value,
            start,
        });
    }
    out
}

/// Parses a whole cell as one number, e.g. `"$1,234.5"` or `"12%"`.
/// Returns `None` for empty cells or cells with any other content.
pub fn parse_number(cell: &str) -> Option<f64> {
    let s = cell.trim();
    if s.is_empty() {
        return None;
    }
    let tokens = scan_numbers(s);
    match tokens.as_slice() {
        [t] if t.start == 0 && t.raw.len() == s.len() => Some(t.value),
        _ => None,
    }
}

/// Case-insensitive phrase search with word boundaries at both ends.
/// Returns the byte offset of the first match in `haystack`.
pub fn find_phrase(haystack: &str, phrase: &str) -> Option<usize> {
    let phrase = phrase.trim();
    if phrase.is_empty() {
        return None;
    }
    let hay = haystack.to_lowercase();
    let needle = phrase.to_lowercase();
    // offsets index the lowercased text; callers only use them for ordering
    let hb = hay.as_bytes();
    let first = needle.as_bytes()[0];
    let last = *needle.as_bytes().last().expect("non-empty");
    let mut from = 0;
    while let Some(pos) = hay[from..].find(&needle) {
        let at = from + pos;
        let end = at + needle.len();
        let left_ok = !is_word_byte(first) || at == 0 || !is_word_byte(hb[at - 1]);
        let right_ok = !is_word_byte(last) || end == hb.len() || !is_word_byte(hb[end]);
        if left_ok && right_ok {
            return Some(at);
        }
        from = at + hay[at..].chars().next().map_or(1, char::len_utf8);
    }
    None
}

pub fn contains_phrase(haystack: &str, phrase: &str) -> bool {
    find_phrase(haystack, phrase).is_some()
}

/// Lowercases and collapses all whitespace runs into single spaces.
pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

/// Lowercased alphanumeric word tokens.
pub fn words(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

const STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "all", "also", "am", "an", "and", "any",
    "are", "as", "at", "be", "because", "been", "before", "being", "below", "between", "both",
    "but", "by", "can", "could", "did", "do", "does", "doing", "down", "during", "each", "few",
    "for", "from", "further", "had", "has", "have", "having", "he", "her", "here", "hers", "him",
    "his", "how", "i", "if", "in", "into", "is", "it", "its", "itself", "just", "may", "me",
    "might", "more", "most", "must", "my", "no", "nor", "not", "now", "of", "off", "on", "once",
    "only", "or", "other", "our", "ours", "out", "over", "own", "same", "she", "should", "so",
    "some", "such", "than", "that", "the", "their", "theirs", "them", "then", "there", "these",
    "they", "this", "those", "through", "to", "too", "under", "until", "up", "very", "was", "we",
    "were", "what", "when", "where", "which", "while", "who", "whom", "why", "will", "with",
    "would", "you", "your", "yours",
];

pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}

/// Distinct non-stopword tokens, sorted.
pub fn content_tokens(text: &str) -> std::collections::BTreeSet<String> {
    words(text).into_iter().filter(|w| !is_stopword(w)).collect()
}
