//! Third cascade layer: assign a label set to each sentence.
//!
//! The expensive classifier is a boundary, not an implementation. This
//! module ships the deterministic reference engine (cue-phrase lexicon with
//! pre-cue negation scoping) and the engine abstraction; the file-based
//! handoff to an external model host lives in [`crate::exchange`].

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Label, LabelSet, Sentence};
use crate::triage::tokenize;

/// Labels produced for one sentence by some engine.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentenceLabels {
    pub sentence_id: String,
    pub labels: LabelSet,
    /// Identifier of the producing engine ("lexicon", "batch-exchange").
    pub engine: String,
}

impl SentenceLabels {
    /// Projection used when comparing outputs across transports.
    pub fn key(&self) -> (&str, LabelSet) {
        (&self.sentence_id, self.labels)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LexiconFile {
    entries: Vec<LexiconFileEntry>,
    #[serde(default)]
    negation_cues: Vec<String>,
    #[serde(default = "default_scope_window")]
    scope_window: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LexiconFileEntry {
    cue: String,
    label: Label,
}

fn default_scope_window() -> usize {
    6
}

#[derive(Debug, Clone)]
struct CompiledCue {
    tokens: Vec<String>,
    label: Label,
}

/// Cue-phrase lexicon: each entry maps a lowercase token phrase to a label,
/// suppressed when a negation cue ends fewer than `scope_window` tokens
/// before the phrase begins.
#[derive(Debug, Clone)]
pub struct Lexicon {
    cues: Vec<CompiledCue>,
    negations: Vec<Vec<String>>,
    scope_window: usize,
}

pub const LEXICON_ENGINE_ID: &str = "lexicon";

impl Lexicon {
    pub fn new(
        entries: Vec<(String, Label)>,
        negation_cues: Vec<String>,
        scope_window: usize,
    ) -> Result<Lexicon> {
        let mut cues = Vec::with_capacity(entries.len());
        for (cue, label) in entries {
            let tokens = tokenize(&cue);
            if tokens.is_empty() {
                return Err(Error::Config(format!("lexicon cue {cue:?} has no tokens")));
            }
            cues.push(CompiledCue { tokens, label });
        }
        if cues.is_empty() {
            return Err(Error::Config("lexicon has no entries".into()));
        }
        let mut negations = Vec::with_capacity(negation_cues.len());
        for cue in negation_cues {
            let tokens = tokenize(&cue);
            if tokens.is_empty() {
                return Err(Error::Config(format!("negation cue {cue:?} has no tokens")));
            }
            negations.push(tokens);
        }
        Ok(Lexicon {
            cues,
            negations,
            scope_window,
        })
    }

    pub fn from_json_str(json: &str) -> Result<Lexicon> {
        let file: LexiconFile = serde_json::from_str(json)
            .map_err(|e| Error::Config(format!("bad lexicon file: {e}")))?;
        Lexicon::new(
            file.entries.into_iter().map(|e| (e.cue, e.label)).collect(),
            file.negation_cues,
            file.scope_window,
        )
    }

    pub fn from_path(path: &Path) -> Result<Lexicon> {
        let contents = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Lexicon::from_json_str(&contents)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn scope_window(&self) -> usize {
        self.scope_window
    }

    /// Every cue phrase with its label, reconstructed from tokens.
    pub fn cue_phrases(&self) -> Vec<(String, Label)> {
        self.cues
            .iter()
            .map(|c| (c.tokens.join(" "), c.label))
            .collect()
    }

    /// Positions where `phrase` occurs as a consecutive token run.
    fn occurrences(tokens: &[String], phrase: &[String]) -> Vec<usize> {
        if phrase.len() > tokens.len() {
            return Vec::new();
        }
        (0..=tokens.len() - phrase.len())
            .filter(|&start| tokens[start..start + phrase.len()] == *phrase)
            .collect()
    }

    /// True when some negation cue ends fewer than `scope_window` tokens
    /// before position `cue_start`.
    fn negated_at(&self, tokens: &[String], cue_start: usize) -> bool {
        self.negations.iter().any(|neg| {
            Lexicon::occurrences(tokens, neg).into_iter().any(|q| {
                let neg_end = q + neg.len();
                neg_end <= cue_start && cue_start - neg_end < self.scope_window
            })
        })
    }

    /// Label raw text: a cue contributes its label when at least one of its
    /// occurrences is not negated. Pure and deterministic.
    pub fn label_text(&self, text: &str) -> LabelSet {
        let tokens = tokenize(text);
        let mut labels = LabelSet::new();
        for cue in &self.cues {
            if labels.contains(cue.label) {
                continue;
            }
            let hit = Lexicon::occurrences(&tokens, &cue.tokens)
                .into_iter()
                .any(|pos| !self.negated_at(&tokens, pos));
            if hit {
                labels.insert(cue.label);
            }
        }
        labels
    }
}

/// Label one sentence with the reference lexicon engine.
pub fn label_lexicon(sentence: &Sentence, lex: &Lexicon) -> SentenceLabels {
    SentenceLabels {
        sentence_id: sentence.sentence_id.clone(),
        labels: lex.label_text(&sentence.text),
        engine: LEXICON_ENGINE_ID.to_string(),
    }
}

/// A sentence-labeling engine; the seam where the heavyweight classifier
/// plugs in.
pub trait LabelEngine {
    fn engine_id(&self) -> &'static str;
    fn label_batch(&mut self, sentences: &[Sentence]) -> Result<Vec<SentenceLabels>>;
}

/// In-process reference engine.
pub struct LexiconEngine {
    lexicon: Lexicon,
}

impl LexiconEngine {
    pub fn new(lexicon: Lexicon) -> LexiconEngine {
        LexiconEngine { lexicon }
    }
}

impl LabelEngine for LexiconEngine {
    fn engine_id(&self) -> &'static str {
        LEXICON_ENGINE_ID
    }

    fn label_batch(&mut self, sentences: &[Sentence]) -> Result<Vec<SentenceLabels>> {
        Ok(sentences
            .iter()
            .map(|s| label_lexicon(s, &self.lexicon))
            .collect())
    }
}

/// One line of a labels file: `{"sid": ..., "labels": [...]}` — the same
/// shape as a batch-exchange response line.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelLine {
    pub sid: String,
    pub labels: Vec<String>,
}

impl LabelLine {
    pub fn from_labels(l: &SentenceLabels) -> LabelLine {
        LabelLine {
            sid: l.sentence_id.clone(),
            labels: l.labels.names().iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn into_labels(self, engine: &str) -> Result<SentenceLabels> {
        let mut set = LabelSet::new();
        for name in &self.labels {
            let label = Label::from_name(name).ok_or_else(|| Error::UnknownLabel(name.clone()))?;
            set.insert(label);
        }
        Ok(SentenceLabels {
            sentence_id: self.sid,
            labels: set,
            engine: engine.to_string(),
        })
    }
}

/// Write sentence labels as JSONL in the wire format.
pub fn write_labels<'a>(
    labels: impl IntoIterator<Item = &'a SentenceLabels>,
    path: &Path,
) -> Result<u64> {
    let mut writer = crate::model::AtomicFile::create(path)?;
    let mut count = 0;
    for l in labels {
        let line = serde_json::to_string(&LabelLine::from_labels(l))
            .map_err(|e| Error::Data(format!("serialize labels: {e}")))?;
        writer.write_line(&line)?;
        count += 1;
    }
    writer.commit()?;
    Ok(count)
}

/// Read a labels file written by [`write_labels`] (or an external host).
pub fn read_labels(path: &Path, engine: &str) -> Result<Vec<SentenceLabels>> {
    let contents = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in contents.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LabelLine = serde_json::from_str(line).map_err(|e| {
            Error::Data(format!("{}: line {}: {e}", path.display(), i + 1))
        })?;
        out.push(parsed.into_labels(engine)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lexicon() -> Lexicon {
        Lexicon::new(
            vec![
                ("dementia".to_string(), Label::Dementia),
                ("donepezil".to_string(), Label::DementiaMeds),
                ("delirium".to_string(), Label::Delirium),
                ("memory impairment".to_string(), Label::Cfi),
            ],
            vec![
                "no evidence of".to_string(),
                "denies".to_string(),
                "negative for".to_string(),
            ],
            6,
        )
        .unwrap()
    }

    #[test]
    fn plain_cue_labels() {
        assert_eq!(
            lexicon().label_text("dx: dementia, stable"),
            LabelSet::new().with(Label::Dementia)
        );
    }

    #[test]
    fn negation_suppresses_within_scope() {
        let lex = lexicon();
        assert!(lex.label_text("no evidence of dementia").is_empty());
        assert!(lex.label_text("denies memory impairment today").is_empty());
        // Gap of exactly scope_window tokens is out of scope again.
        assert_eq!(
            lex.label_text("denies pain a b c d e f dementia"),
            LabelSet::new().with(Label::Dementia)
        );
        // Negation after the cue does not apply.
        assert_eq!(
            lex.label_text("dementia workup, denies pain"),
            LabelSet::new().with(Label::Dementia)
        );
    }

    #[test]
    fn multiple_cues_multi_label() {
        let got = lexicon().label_text("delirium resolving; started donepezil");
        assert_eq!(
            got,
            LabelSet::new().with(Label::Delirium).with(Label::DementiaMeds)
        );
    }

    #[test]
    fn one_clean_occurrence_beats_one_negated() {
        let lex = lexicon();
        let got = lex.label_text("no evidence of dementia previously; now dementia confirmed");
        assert_eq!(got, LabelSet::new().with(Label::Dementia));
    }

    #[test]
    fn purity_same_input_same_output() {
        let lex = lexicon();
        let a = lex.label_text("dementia with delirium");
        let b = lex.label_text("dementia with delirium");
        assert_eq!(a, b);
    }

    #[test]
    fn lexicon_json_round_trip() {
        let json = r#"{
            "entries": [
                {"cue": "dementia", "label": "Dementia"},
                {"cue": "memory impairment", "label": "CFI"}
            ],
            "negation_cues": ["denies"],
            "scope_window": 4
        }"#;
        let lex = Lexicon::from_json_str(json).unwrap();
        assert_eq!(lex.scope_window(), 4);
        assert_eq!(lex.cue_phrases().len(), 2);
        assert!(Lexicon::from_json_str(r#"{"entries":[{"cue":"x","label":"Bogus"}]}"#).is_err());
    }

    #[test]
    fn label_lines_reject_unknown_labels() {
        let line = LabelLine {
            sid: "n:s0".into(),
            labels: vec!["Dementia".into(), "NotALabel".into()],
        };
        match line.into_labels("test") {
            Err(Error::UnknownLabel(name)) => assert_eq!(name, "NotALabel"),
            other => panic!("expected UnknownLabel, got {other:?}"),
        }
    }

    #[test]
    fn labels_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("labels.jsonl");
        let labels = vec![
            SentenceLabels {
                sentence_id: "n1:s0".into(),
                labels: LabelSet::new().with(Label::Dementia),
                engine: "lexicon".into(),
            },
            SentenceLabels {
                sentence_id: "n1:s1".into(),
                labels: LabelSet::EMPTY,
                engine: "lexicon".into(),
            },
        ];
        assert_eq!(write_labels(&labels, &path).unwrap(), 2);
        let back = read_labels(&path, "lexicon").unwrap();
        assert_eq!(back, labels);
    }
}
