//! First cascade layer: title-subword exclusion and case-insensitive
//! multi-keyword inclusion over note text.
//!
//! Keyword matching is token-anchored, not raw substring: text is split on
//! non-alphanumeric boundaries, a plain pattern must equal a token, and a
//! trailing-`*` pattern must be a prefix of one. Matching runs on a token
//! trie so a note is scanned once regardless of pattern count; the naive
//! one-pattern-at-a-time scan is the correctness oracle in tests.

use std::collections::BTreeSet;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::model::{Note, StageStats};

/// Split text into lowercase tokens: maximal runs of Unicode alphanumerics,
/// everything else a boundary. All stages share this rule.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            current.extend(ch.to_lowercase());
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

/// Note-title exclusion list; any subword occurring case-insensitively in a
/// title drops the note.
#[derive(Debug, Clone, Default)]
pub struct TitleExclusionList {
    subwords: Vec<String>,
}

impl TitleExclusionList {
    /// An empty list excludes nothing.
    pub fn new(subwords: Vec<String>) -> Result<TitleExclusionList> {
        let mut lowered = Vec::with_capacity(subwords.len());
        for s in subwords {
            if s.trim().is_empty() {
                return Err(Error::Config("empty title subword".into()));
            }
            lowered.push(s.to_lowercase());
        }
        Ok(TitleExclusionList { subwords: lowered })
    }

    pub fn subwords(&self) -> &[String] {
        &self.subwords
    }

    pub fn matches_title(&self, title: &str) -> bool {
        let title = title.to_lowercase();
        self.subwords.iter().any(|s| title.contains(s))
    }
}

/// True when the note's title contains any exclusion subword (drop it).
pub fn exclude_by_title(note: &Note, excl: &TitleExclusionList) -> bool {
    excl.matches_title(&note.title)
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct KeywordPattern {
    raw: String,
    stem: String,
    prefix_wildcard: bool,
}

#[derive(Debug, Clone, Default)]
struct TrieNode {
    children: Vec<(char, usize)>,
    /// Pattern indices that terminate here as exact-token matches.
    exact: Vec<usize>,
    /// Pattern indices whose `*` stem ends here (match any token below).
    prefix: Vec<usize>,
}

/// Inclusion keyword list compiled into a token trie.
///
/// A pattern is a lowercase token, optionally ending in `*` to match any
/// token having it as a prefix. Construction rejects an empty list so "no
/// filter configured" cannot be mistaken for "filter passes nothing".
#[derive(Debug, Clone)]
pub struct KeywordList {
    patterns: Vec<KeywordPattern>,
    nodes: Vec<TrieNode>,
}

impl KeywordList {
    pub fn new(patterns: Vec<String>) -> Result<KeywordList> {
        if patterns.is_empty() {
            return Err(Error::Config(
                "keyword list is empty; at least one pattern is required".into(),
            ));
        }
        let mut compiled = Vec::with_capacity(patterns.len());
        let mut seen = BTreeSet::new();
        for raw in patterns {
            let raw = raw.trim().to_lowercase();
            if raw.is_empty() {
                return Err(Error::Config("empty keyword pattern".into()));
            }
            if raw.chars().any(char::is_whitespace) {
                return Err(Error::Config(format!(
                    "keyword pattern {raw:?} contains whitespace"
                )));
            }
            let (stem, prefix_wildcard) = match raw.strip_suffix('*') {
                Some(stem) => (stem.to_string(), true),
                None => (raw.clone(), false),
            };
            if stem.is_empty() || stem.contains('*') {
                return Err(Error::Config(format!("malformed keyword pattern {raw:?}")));
            }
            if !seen.insert(raw.clone()) {
                return Err(Error::Config(format!("duplicate keyword pattern {raw:?}")));
            }
            compiled.push(KeywordPattern {
                raw,
                stem,
                prefix_wildcard,
            });
        }

        let mut nodes = vec![TrieNode::default()];
        for (idx, pat) in compiled.iter().enumerate() {
            let mut node = 0;
            for ch in pat.stem.chars() {
                node = match nodes[node].children.iter().find(|(c, _)| *c == ch) {
                    Some((_, next)) => *next,
                    None => {
                        let next = nodes.len();
                        nodes.push(TrieNode::default());
                        nodes[node].children.push((ch, next));
                        next
                    }
                };
            }
            if pat.prefix_wildcard {
                nodes[node].prefix.push(idx);
            } else {
                nodes[node].exact.push(idx);
            }
        }
        Ok(KeywordList {
            patterns: compiled,
            nodes,
        })
    }

    /// Pattern strings in list order, wildcards included.
    pub fn patterns(&self) -> Vec<&str> {
        self.patterns.iter().map(|p| p.raw.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        false // construction rejects empty lists
    }

    fn walk_token(&self, token: &str, mut on_hit: impl FnMut(usize) -> bool) -> bool {
        let mut node = 0;
        for ch in token.chars() {
            match self.nodes[node].children.iter().find(|(c, _)| *c == ch) {
                Some((_, next)) => node = *next,
                None => return false,
            }
            for &idx in &self.nodes[node].prefix {
                if on_hit(idx) {
                    return true;
                }
            }
        }
        for &idx in &self.nodes[node].exact {
            if on_hit(idx) {
                return true;
            }
        }
        false
    }

    /// True when any pattern matches any token; stops at the first hit.
    pub fn matches_any(&self, text: &str) -> bool {
        let mut current = String::new();
        let mut check = |tok: &str| !tok.is_empty() && self.walk_token(tok, |_| true);
        for ch in text.chars() {
            if ch.is_alphanumeric() {
                current.extend(ch.to_lowercase());
            } else {
                if check(&current) {
                    return true;
                }
                current.clear();
            }
        }
        check(&current)
    }

    /// The set of patterns with at least one matching token in `text`.
    pub fn matched_patterns(&self, text: &str) -> BTreeSet<String> {
        let mut hits = vec![false; self.patterns.len()];
        for token in tokenize(text) {
            self.walk_token(&token, |idx| {
                hits[idx] = true;
                false
            });
        }
        hits.iter()
            .enumerate()
            .filter(|(_, hit)| **hit)
            .map(|(idx, _)| self.patterns[idx].raw.clone())
            .collect()
    }
}

/// The set of keyword patterns matching `text`.
pub fn keyword_match(text: &str, kw: &KeywordList) -> BTreeSet<String> {
    kw.matched_patterns(text)
}

/// Run the title-exclusion and keyword-inclusion filters over a note batch.
///
/// Passes exactly the notes whose title is not excluded and whose text
/// matches at least one keyword; output order equals input order.
pub fn filter_notes(
    notes: impl IntoIterator<Item = Note>,
    excl: &TitleExclusionList,
    kw: &KeywordList,
) -> (Vec<Note>, StageStats) {
    let start = Instant::now();
    let mut stats = StageStats::new("triage-filter");
    let mut passed = Vec::new();
    for note in notes {
        stats.items_in += 1;
        if !exclude_by_title(&note, excl) && kw.matches_any(&note.text) {
            passed.push(note);
        }
    }
    stats.items_out = passed.len() as u64;
    stats.wall_time = start.elapsed().as_secs_f64();
    (passed, stats)
}
