//! Shared domain types and the corpus record format used by every stage.
//!
//! Notes and sentences travel as one JSON object per line; patient verdicts
//! are a fixed-column tab-separated table. Both formats are stable external
//! interfaces, so field names and column order here are load-bearing.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Lines, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::de::{SeqAccess, Visitor};
use serde::ser::SerializeSeq;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// One clinical document flowing through the cascade.
///
/// `note_type` and `specialty` are optional source-system metadata; they are
/// ignored everywhere except the sampling strategies that stratify on them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Note {
    pub note_id: String,
    pub patient_id: String,
    pub title: String,
    pub date: NaiveDate,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub specialty: Option<String>,
}

/// A segmented span of a note; the unit of classification.
///
/// `start`/`end` are character offsets into the owning note's text and
/// `text` must equal that exact slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub sentence_id: String,
    pub note_id: String,
    pub patient_id: String,
    pub index: usize,
    pub start: usize,
    pub end: usize,
    pub text: String,
}

/// Canonical sentence id scheme shared by the segmenter and the synthetic
/// generator so planted ground truth lines up with segmenter output.
pub fn sentence_id(note_id: &str, index: usize) -> String {
    format!("{note_id}:s{index}")
}

impl Sentence {
    /// Check the offset invariants against the owning note.
    pub fn validate_against(&self, note: &Note) -> Result<()> {
        let chars: Vec<char> = note.text.chars().collect();
        if self.start >= self.end || self.end > chars.len() {
            return Err(Error::Data(format!(
                "sentence {} offsets {}..{} out of range for note of {} chars",
                self.sentence_id,
                self.start,
                self.end,
                chars.len()
            )));
        }
        let slice: String = chars[self.start..self.end].iter().collect();
        if slice != self.text {
            return Err(Error::Data(format!(
                "sentence {} text does not match note slice",
                self.sentence_id
            )));
        }
        Ok(())
    }
}

/// The closed set of ten annotation labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    #[serde(rename = "CFI")]
    Cfi,
    #[serde(rename = "CFI_Worsen")]
    CfiWorsen,
    Delirium,
    Dementia,
    #[serde(rename = "Dementia_Meds")]
    DementiaMeds,
    Interference,
    Intoxication,
    OtherCause,
    PsychDisorder,
    Hospitalization,
}

impl Label {
    pub const ALL: [Label; 10] = [
        Label::Cfi,
        Label::CfiWorsen,
        Label::Delirium,
        Label::Dementia,
        Label::DementiaMeds,
        Label::Interference,
        Label::Intoxication,
        Label::OtherCause,
        Label::PsychDisorder,
        Label::Hospitalization,
    ];

    /// Wire name, exactly as serialized.
    pub fn name(self) -> &'static str {
        match self {
            Label::Cfi => "CFI",
            Label::CfiWorsen => "CFI_Worsen",
            Label::Delirium => "Delirium",
            Label::Dementia => "Dementia",
            Label::DementiaMeds => "Dementia_Meds",
            Label::Interference => "Interference",
            Label::Intoxication => "Intoxication",
            Label::OtherCause => "OtherCause",
            Label::PsychDisorder => "PsychDisorder",
            Label::Hospitalization => "Hospitalization",
        }
    }

    pub fn from_name(name: &str) -> Option<Label> {
        Label::ALL.iter().copied().find(|l| l.name() == name)
    }

    fn bit(self) -> u16 {
        1 << (Label::ALL.iter().position(|l| *l == self).unwrap() as u16)
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// A subset of the ten labels attached to a sentence; empty means "null",
/// i.e. the sentence carries no concept.
///
/// Stored as a bitmask so the aggregator can enumerate all 1024 subsets
/// cheaply; serialized as a list of label names.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LabelSet(u16);

impl LabelSet {
    pub const EMPTY: LabelSet = LabelSet(0);
    /// Number of distinct subsets, for exhaustive enumeration.
    pub const SUBSET_COUNT: u16 = 1 << 10;

    pub fn new() -> LabelSet {
        LabelSet(0)
    }

    /// Build from a raw bitmask in declaration order; bits above the ten
    /// label bits are rejected.
    pub fn from_bits(bits: u16) -> Option<LabelSet> {
        if bits < Self::SUBSET_COUNT {
            Some(LabelSet(bits))
        } else {
            None
        }
    }

    pub fn insert(&mut self, label: Label) {
        self.0 |= label.bit();
    }

    pub fn with(mut self, label: Label) -> LabelSet {
        self.insert(label);
        self
    }

    pub fn contains(self, label: Label) -> bool {
        self.0 & label.bit() != 0
    }

    /// True when the two sets share at least one label.
    pub fn intersects(self, other: LabelSet) -> bool {
        self.0 & other.0 != 0
    }

    pub fn union(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 | other.0)
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    /// Labels in declaration order.
    pub fn iter(self) -> impl Iterator<Item = Label> {
        Label::ALL.into_iter().filter(move |l| self.contains(*l))
    }

    pub fn names(self) -> Vec<&'static str> {
        self.iter().map(Label::name).collect()
    }
}

impl FromIterator<Label> for LabelSet {
    fn from_iter<I: IntoIterator<Item = Label>>(iter: I) -> Self {
        let mut set = LabelSet::new();
        for l in iter {
            set.insert(l);
        }
        set
    }
}

impl Serialize for LabelSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.len()))?;
        for label in self.iter() {
            seq.serialize_element(label.name())?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for LabelSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct SetVisitor;
        impl<'de> Visitor<'de> for SetVisitor {
            type Value = LabelSet;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a list of label names")
            }
            fn visit_seq<A: SeqAccess<'de>>(
                self,
                mut seq: A,
            ) -> std::result::Result<LabelSet, A::Error> {
                let mut set = LabelSet::new();
                while let Some(name) = seq.next_element::<String>()? {
                    let label = Label::from_name(&name).ok_or_else(|| {
                        serde::de::Error::custom(format!("unknown label {name:?}"))
                    })?;
                    set.insert(label);
                }
                Ok(set)
            }
        }
        deserializer.deserialize_seq(SetVisitor)
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{{}}}", self.names().join(","))
    }
}

/// Aggregated patient-level decision with its evidence trail.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatientVerdict {
    pub patient_id: String,
    pub positive: bool,
    pub qualifying_count: usize,
    pub excluded_count: usize,
    /// Sentence ids of the qualifying mentions supporting the verdict.
    pub evidence: Vec<String>,
}

/// Per-stage item counts and timing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageStats {
    pub stage_name: String,
    pub items_in: u64,
    pub items_out: u64,
    /// Seconds of wall time attributed to the stage.
    pub wall_time: f64,
}

impl StageStats {
    pub fn new(stage_name: &str) -> StageStats {
        StageStats {
            stage_name: stage_name.to_string(),
            items_in: 0,
            items_out: 0,
            wall_time: 0.0,
        }
    }

    /// Associative, commutative merge of partial stats for the same stage.
    pub fn merge(&mut self, other: &StageStats) {
        debug_assert_eq!(self.stage_name, other.stage_name);
        self.items_in += other.items_in;
        self.items_out += other.items_out;
        self.wall_time += other.wall_time;
    }

    /// Fraction of items passing the stage; 1.0 for an empty stage.
    pub fn pass_fraction(&self) -> f64 {
        if self.items_in == 0 {
            1.0
        } else {
            self.items_out as f64 / self.items_in as f64
        }
    }
}

/// A malformed corpus line, reported with its 1-based line number.
#[derive(Debug, Clone)]
pub struct LineError {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for LineError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

impl From<LineError> for Error {
    fn from(e: LineError) -> Error {
        Error::Data(e.to_string())
    }
}

/// Streaming reader over a line-delimited note file.
///
/// Yields notes in file order; malformed lines surface as [`LineError`]s so
/// the caller chooses between lenient (skip and report) and strict (fatal)
/// handling.
pub struct CorpusReader {
    path: PathBuf,
    lines: Lines<BufReader<File>>,
    line_no: u64,
}

impl CorpusReader {
    /// Split into well-formed notes and per-line error records.
    pub fn collect_lenient(self) -> Result<(Vec<Note>, Vec<LineError>)> {
        let path = self.path.clone();
        let mut notes = Vec::new();
        let mut errors = Vec::new();
        for item in self {
            match item {
                Ok(note) => notes.push(note),
                Err(e) if e.message.starts_with("io:") => {
                    return Err(Error::Data(format!("{}: {}", path.display(), e)));
                }
                Err(e) => errors.push(e),
            }
        }
        Ok((notes, errors))
    }

    /// Fail on the first malformed line.
    pub fn collect_strict(self) -> Result<Vec<Note>> {
        let path = self.path.clone();
        self.map(|item| {
            item.map_err(|e| Error::Data(format!("{}: {}", path.display(), e)))
        })
        .collect()
    }
}

impl Iterator for CorpusReader {
    type Item = std::result::Result<Note, LineError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            self.line_no += 1;
            match self.lines.next()? {
                Ok(line) => {
                    if line.trim().is_empty() {
                        continue;
                    }
                    return Some(serde_json::from_str::<Note>(&line).map_err(|e| LineError {
                        line: self.line_no,
                        message: e.to_string(),
                    }));
                }
                Err(e) => {
                    return Some(Err(LineError {
                        line: self.line_no,
                        message: format!("io: {e}"),
                    }));
                }
            }
        }
    }
}

/// Open a note corpus for streaming reads. An unreadable file is fatal.
pub fn read_corpus(path: &Path) -> Result<CorpusReader> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(CorpusReader {
        path: path.to_path_buf(),
        lines: BufReader::new(file).lines(),
        line_no: 0,
    })
}

/// Write notes as one JSON object per line.
pub fn write_notes<'a>(notes: impl IntoIterator<Item = &'a Note>, path: &Path) -> Result<u64> {
    let mut writer = AtomicFile::create(path)?;
    let mut count = 0;
    for note in notes {
        let line = serde_json::to_string(note)
            .map_err(|e| Error::Data(format!("serialize note {}: {e}", note.note_id)))?;
        writer.write_line(&line)?;
        count += 1;
    }
    writer.commit()?;
    Ok(count)
}

pub const VERDICT_HEADER: &str = "patient_id\tpositive\tqualifying_count\texcluded_count\tevidence";

fn check_field(kind: &str, value: &str) -> Result<()> {
    if value.contains('\t') || value.contains('\n') || value.contains(',') {
        return Err(Error::Data(format!(
            "{kind} {value:?} contains a reserved delimiter character"
        )));
    }
    Ok(())
}

/// Write patient verdicts as a tab-separated table and return the row count.
///
/// The file appears atomically: rows go to a temporary sibling which is
/// renamed into place only after every row is written.
pub fn write_verdicts<'a>(
    verdicts: impl IntoIterator<Item = &'a PatientVerdict>,
    path: &Path,
) -> Result<u64> {
    let mut writer = AtomicFile::create(path)?;
    writer.write_line(VERDICT_HEADER)?;
    let mut count = 0;
    for v in verdicts {
        check_field("patient_id", &v.patient_id)?;
        for sid in &v.evidence {
            check_field("evidence id", sid)?;
        }
        writer.write_line(&format!(
            "{}\t{}\t{}\t{}\t{}",
            v.patient_id,
            v.positive,
            v.qualifying_count,
            v.excluded_count,
            v.evidence.join(",")
        ))?;
        count += 1;
    }
    writer.commit()?;
    Ok(count)
}

/// Read a verdict table written by [`write_verdicts`].
pub fn read_verdicts(path: &Path) -> Result<Vec<PatientVerdict>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Data(format!("{}: empty verdict table", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    if header != VERDICT_HEADER {
        return Err(Error::Data(format!(
            "{}: unexpected verdict header {header:?}",
            path.display()
        )));
    }
    let mut verdicts = Vec::new();
    for (i, line) in lines.enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let row = i + 2;
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 5 {
            return Err(Error::Data(format!(
                "{}: row {row} has {} fields, expected 5",
                path.display(),
                fields.len()
            )));
        }
        let parse_err =
            |what: &str| Error::Data(format!("{}: row {row}: bad {what}", path.display()));
        let positive = match fields[1] {
            "true" => true,
            "false" => false,
            _ => return Err(parse_err("positive flag")),
        };
        verdicts.push(PatientVerdict {
            patient_id: fields[0].to_string(),
            positive,
            qualifying_count: fields[2].parse().map_err(|_| parse_err("qualifying_count"))?,
            excluded_count: fields[3].parse().map_err(|_| parse_err("excluded_count"))?,
            evidence: if fields[4].is_empty() {
                Vec::new()
            } else {
                fields[4].split(',').map(str::to_string).collect()
            },
        });
    }
    Ok(verdicts)
}

/// Write-to-temp-then-rename helper so failed writes never leave a partial
/// file at the destination.
pub struct AtomicFile {
    dest: PathBuf,
    tmp: PathBuf,
    writer: Option<BufWriter<File>>,
}

impl AtomicFile {
    pub fn create(dest: &Path) -> Result<AtomicFile> {
        let file_name = dest
            .file_name()
            .ok_or_else(|| Error::Config(format!("{}: not a file path", dest.display())))?;
        let mut tmp_name = std::ffi::OsString::from(".");
        tmp_name.push(file_name);
        tmp_name.push(format!(".tmp.{}", std::process::id()));
        let tmp = dest.with_file_name(tmp_name);
        let file = File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        Ok(AtomicFile {
            dest: dest.to_path_buf(),
            tmp,
            writer: Some(BufWriter::new(file)),
        })
    }

    pub fn write_line(&mut self, line: &str) -> Result<()> {
        let w = self.writer.as_mut().expect("write after commit");
        w.write_all(line.as_bytes())
            .and_then(|_| w.write_all(b"\n"))
            .map_err(|e| Error::io(&self.tmp, e))
    }

    pub fn commit(mut self) -> Result<()> {
        let w = self.writer.take().expect("double commit");
        w.into_inner()
            .map_err(|e| Error::io(&self.tmp, e.into_error()))?
            .sync_all()
            .map_err(|e| Error::io(&self.tmp, e))?;
        std::fs::rename(&self.tmp, &self.dest).map_err(|e| Error::io(&self.dest, e))
    }
}

impl Drop for AtomicFile {
    fn drop(&mut self) {
        if self.writer.take().is_some() {
            let _ = std::fs::remove_file(&self.tmp);
        }
    }
}

/// Collect the patient universe of a verdict list.
pub fn patient_universe(verdicts: &[PatientVerdict]) -> BTreeSet<&str> {
    verdicts.iter().map(|v| v.patient_id.as_str()).collect()
}
