//! Rule-based sentence segmentation with an abbreviation list and a hard
//! maximum-length guard.
//!
//! Boundaries go after `.` `!` `?` followed by whitespace (unless the
//! terminating token is a known abbreviation) and at newlines or blank
//! lines. Any span still longer than the configured limit is force-split at
//! the last whitespace before the limit, or at the limit itself when the
//! span has no whitespace at all. All offsets are character offsets.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::model::{sentence_id, Note, Sentence};

#[derive(Debug, Clone)]
pub struct SegmenterConfig {
    /// Lowercased abbreviation tokens, each with its trailing period
    /// (`"dr."`). A period ending one of these never closes a sentence.
    abbreviations: BTreeSet<String>,
    /// Hard upper bound on emitted sentence length, in characters.
    pub max_sentence_chars: usize,
    /// Break at every newline, not only at blank lines.
    pub newline_breaks: bool,
}

pub const DEFAULT_MAX_SENTENCE_CHARS: usize = 2000;

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            abbreviations: BTreeSet::new(),
            max_sentence_chars: DEFAULT_MAX_SENTENCE_CHARS,
            newline_breaks: true,
        }
    }
}

impl SegmenterConfig {
    /// Abbreviations are matched case-insensitively; a missing trailing
    /// period is added during normalization.
    pub fn new(
        abbreviations: impl IntoIterator<Item = String>,
        max_sentence_chars: usize,
        newline_breaks: bool,
    ) -> Result<SegmenterConfig> {
        if max_sentence_chars == 0 {
            return Err(Error::Config("max_sentence_chars must be >= 1".into()));
        }
        let mut set = BTreeSet::new();
        for abbr in abbreviations {
            let mut a = abbr.trim().to_lowercase();
            if a.is_empty() {
                return Err(Error::Config("empty abbreviation entry".into()));
            }
            if a.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!(
                    "abbreviation {abbr:?} contains whitespace"
                )));
            }
            if !a.ends_with('.') {
                a.push('.');
            }
            set.insert(a);
        }
        Ok(SegmenterConfig {
            abbreviations: set,
            max_sentence_chars,
            newline_breaks,
        })
    }

    pub fn with_abbreviations(abbreviations: impl IntoIterator<Item = String>) -> Result<Self> {
        SegmenterConfig::new(abbreviations, DEFAULT_MAX_SENTENCE_CHARS, true)
    }

    fn is_abbreviation(&self, token_lower: &str) -> bool {
        self.abbreviations.contains(token_lower)
    }
}

/// The token terminating at the period `chars[dot]`: the maximal run of
/// alphanumerics and periods ending there, inclusive.
fn terminating_token(chars: &[char], dot: usize) -> String {
    let mut start = dot;
    while start > 0 {
        let c = chars[start - 1];
        if c.is_alphanumeric() || c == '.' {
            start -= 1;
        } else {
            break;
        }
    }
    chars[start..=dot].iter().flat_map(|c| c.to_lowercase()).collect()
}

/// Split `text` into trimmed sentence spans as `(start, end)` char ranges.
pub fn segment_spans(text: &str, cfg: &SegmenterConfig) -> Vec<(usize, usize)> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();

    // Raw cuts: a cut after index i means the next span starts at i + 1.
    let mut raw: Vec<(usize, usize)> = Vec::new();
    let mut seg_start = 0;
    for i in 0..n {
        let c = chars[i];
        let cut = match c {
            '!' | '?' => i + 1 < n && chars[i + 1].is_whitespace(),
            '.' => {
                i + 1 < n
                    && chars[i + 1].is_whitespace()
                    && !cfg.is_abbreviation(&terminating_token(&chars, i))
            }
            '\n' => {
                if cfg.newline_breaks {
                    true
                } else {
                    // Blank line: only horizontal whitespace until another newline.
                    let mut j = i + 1;
                    while j < n && chars[j].is_whitespace() && chars[j] != '\n' {
                        j += 1;
                    }
                    j < n && chars[j] == '\n'
                }
            }
            _ => false,
        };
        if cut {
            raw.push((seg_start, i + 1));
            seg_start = i + 1;
        }
    }
    if seg_start < n {
        raw.push((seg_start, n));
    }

    let mut spans = Vec::new();
    for (mut start, mut end) in raw {
        while start < end && chars[start].is_whitespace() {
            start += 1;
        }
        while end > start && chars[end - 1].is_whitespace() {
            end -= 1;
        }
        if start == end {
            continue;
        }
        // Length guard: force-split anything over the limit.
        while end - start > cfg.max_sentence_chars {
            let limit = start + cfg.max_sentence_chars;
            // Last whitespace position p with start < p <= limit.
            let split = (start + 1..=limit).rev().find(|&p| chars[p].is_whitespace());
            match split {
                Some(p) => {
                    let mut left_end = p;
                    while left_end > start && chars[left_end - 1].is_whitespace() {
                        left_end -= 1;
                    }
                    spans.push((start, left_end));
                    start = p + 1;
                    while start < end && chars[start].is_whitespace() {
                        start += 1;
                    }
                }
                None => {
                    spans.push((start, limit));
                    start = limit;
                }
            }
        }
        if start < end {
            spans.push((start, end));
        }
    }
    spans
}

/// Segment a note into sentences with exact character offsets.
pub fn segment(note: &Note, cfg: &SegmenterConfig) -> Vec<Sentence> {
    let chars: Vec<char> = note.text.chars().collect();
    segment_spans(&note.text, cfg)
        .into_iter()
        .enumerate()
        .map(|(index, (start, end))| Sentence {
            sentence_id: sentence_id(&note.note_id, index),
            note_id: note.note_id.clone(),
            patient_id: note.patient_id.clone(),
            index,
            start,
            end,
            text: chars[start..end].iter().collect(),
        })
        .collect()
}
