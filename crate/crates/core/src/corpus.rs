//! Dialogue datasets and teacher-augmented corpora.
//!
//! Both live on disk as JSONL, one UTF-8 object per line. Dialogue records
//! carry `{"id", "dialogue", "reference"}`; augmented records add the
//! teacher's positives, negatives and error explanations.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::text::{normalize_for_compare, whitespace_tokens};

/// Fraction of invalid records above which a load aborts.
pub const MAX_INVALID_FRACTION: f64 = 0.10;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} contains no records")]
    EmptyFile { path: PathBuf },
    #[error("{failed} of {total} records failed validation; first: {}", .issues.first().map(ToString::to_string).unwrap_or_default())]
    Validation {
        failed: usize,
        total: usize,
        issues: Vec<RecordIssue>,
    },
    #[error("instance {id}: {reason}")]
    Invariant { id: String, reason: String },
    #[error("split is empty")]
    EmptySplit,
    #[error("invalid dialogue {id}: {reason}")]
    InvalidDialogue { id: String, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A record that was rejected while loading.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordIssue {
    /// 1-based line number.
    pub line: usize,
    pub kind: IssueKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum IssueKind {
    MissingField(String),
    Malformed(String),
    DuplicateId(String),
    InvalidDialogue(String),
}

impl fmt::Display for RecordIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            IssueKind::MissingField(name) => write!(f, "line {}: missing field `{name}`", self.line),
            IssueKind::Malformed(msg) => write!(f, "line {}: malformed record: {msg}", self.line),
            IssueKind::DuplicateId(id) => write!(f, "line {}: duplicate id `{id}`", self.line),
            IssueKind::InvalidDialogue(msg) => write!(f, "line {}: {msg}", self.line),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub utterance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialogue {
    pub id: String,
    pub turns: Vec<Turn>,
    pub raw_text: String,
    pub reference: Option<String>,
}

impl Dialogue {
    /// Parse "speaker: utterance" lines. The first `:` separates speaker from
    /// utterance; a line without `:` continues the previous turn.
    pub fn parse(id: &str, text: &str, reference: Option<String>) -> Result<Self, CorpusError> {
        let invalid = |reason: String| CorpusError::InvalidDialogue {
            id: id.to_string(),
            reason,
        };
        if id.trim().is_empty() {
            return Err(invalid("empty id".into()));
        }
        let mut turns: Vec<Turn> = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            match line.split_once(':') {
                Some((speaker, utterance)) => turns.push(Turn {
                    speaker: speaker.trim().to_string(),
                    utterance: utterance.trim().to_string(),
                }),
                None => match turns.last_mut() {
                    Some(prev) => {
                        if !prev.utterance.is_empty() {
                            prev.utterance.push(' ');
                        }
                        prev.utterance.push_str(line);
                    }
                    None => return Err(invalid(format!("line without speaker before any turn: {line:?}"))),
                },
            }
        }
        Self::from_turns(id, turns, reference)
    }

    pub fn from_turns(id: &str, turns: Vec<Turn>, reference: Option<String>) -> Result<Self, CorpusError> {
        let invalid = |reason: String| CorpusError::InvalidDialogue {
            id: id.to_string(),
            reason,
        };
        if id.trim().is_empty() {
            return Err(invalid("empty id".into()));
        }
        if turns.is_empty() {
            return Err(invalid("no turns".into()));
        }
        if let Some(i) = turns.iter().position(|t| t.utterance.trim().is_empty()) {
            return Err(invalid(format!("turn {} has an empty utterance", i + 1)));
        }
        let raw_text = render_turns(&turns);
        Ok(Self {
            id: id.to_string(),
            turns,
            raw_text,
            reference,
        })
    }

    pub fn speaker_count(&self) -> usize {
        self.turns.iter().map(|t| t.speaker.as_str()).collect::<HashSet<_>>().len()
    }

    pub fn token_count(&self) -> usize {
        whitespace_tokens(&self.raw_text).count()
    }
}

fn render_turns(turns: &[Turn]) -> String {
    turns
        .iter()
        .map(|t| format!("{}: {}", t.speaker, t.utterance))
        .collect::<Vec<_>>()
        .join("\n")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl FromStr for SplitName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Self::Train),
            "dev" | "validation" | "val" => Ok(Self::Dev),
            "test" => Ok(Self::Test),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Train => "train",
            Self::Dev => "dev",
            Self::Test => "test",
        })
    }
}

/// Source layout of a dialogue JSONL file.
///
/// `SamsumLike` reads `id`/`dialogue`/`reference` (or `summary`).
/// `DialogsumLike` additionally accepts `fname` for the id and `summary1`
/// for the reference; only the first reference is kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceFormat {
    SamsumLike,
    DialogsumLike,
}

impl FromStr for SourceFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "samsum-like" | "samsum" => Ok(Self::SamsumLike),
            "dialogsum-like" | "dialogsum" => Ok(Self::DialogsumLike),
            other => Err(format!("unknown dataset format `{other}`")),
        }
    }
}

impl SourceFormat {
    fn id_fields(self) -> &'static [&'static str] {
        match self {
            Self::SamsumLike => &["id"],
            Self::DialogsumLike => &["id", "fname"],
        }
    }

    fn reference_fields(self) -> &'static [&'static str] {
        match self {
            Self::SamsumLike => &["reference", "summary"],
            Self::DialogsumLike => &["reference", "summary", "summary1"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitStats {
    pub count: usize,
    pub mean_speakers: f64,
    pub mean_turns: f64,
    /// Whitespace tokens of the rendered dialogue text, speaker names included.
    pub mean_tokens: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub dialogues: Vec<Dialogue>,
    pub stats: SplitStats,
}

impl DatasetSplit {
    pub fn new(name: SplitName, dialogues: Vec<Dialogue>) -> Result<Self, CorpusError> {
        let stats = compute_stats(&dialogues)?;
        Ok(Self { name, dialogues, stats })
    }

    pub fn len(&self) -> usize {
        self.dialogues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dialogues.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Dialogue> {
        self.dialogues.iter().find(|d| d.id == id)
    }
}

/// A loaded split plus the records that were skipped.
#[derive(Debug, Clone)]
pub struct LoadedSplit {
    pub split: DatasetSplit,
    pub skipped: Vec<RecordIssue>,
}

fn first_string<'a>(obj: &'a serde_json::Map<String, Value>, keys: &[&str]) -> Option<&'a str> {
    keys.iter().find_map(|k| obj.get(*k).and_then(Value::as_str))
}

fn parse_dialogue_record(
    line: &str,
    format: SourceFormat,
) -> Result<Dialogue, IssueKind> {
    let value: Value = serde_json::from_str(line).map_err(|e| IssueKind::Malformed(e.to_string()))?;
    let obj = value
        .as_object()
        .ok_or_else(|| IssueKind::Malformed("record is not a JSON object".into()))?;
    // Numeric ids occur in some releases.
    let id = match format.id_fields().iter().find_map(|k| obj.get(*k)) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => return Err(IssueKind::MissingField("id".into())),
    };
    let text = first_string(obj, &["dialogue"]).ok_or_else(|| IssueKind::MissingField("dialogue".into()))?;
    let reference = first_string(obj, format.reference_fields())
        .filter(|r| !r.trim().is_empty())
        .ok_or_else(|| IssueKind::MissingField("reference".into()))?;
    Dialogue::parse(&id, &text.replace("\r\n", "\n"), Some(reference.to_string()))
        .map_err(|e| IssueKind::InvalidDialogue(e.to_string()))
}

/// Load a dialogue split. Invalid records are skipped and reported unless
/// more than [`MAX_INVALID_FRACTION`] of the file fails.
pub fn load_split(path: &Path, format: SourceFormat, name: SplitName) -> Result<LoadedSplit, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut dialogues = Vec::new();
    let mut skipped = Vec::new();
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let lineno = idx + 1;
        match parse_dialogue_record(&line, format) {
            Ok(d) if !seen.insert(d.id.clone()) => skipped.push(RecordIssue {
                line: lineno,
                kind: IssueKind::DuplicateId(d.id),
            }),
            Ok(d) => dialogues.push(d),
            Err(kind) => skipped.push(RecordIssue { line: lineno, kind }),
        }
    }
    if total == 0 {
        return Err(CorpusError::EmptyFile { path: path.to_path_buf() });
    }
    if skipped.len() as f64 > MAX_INVALID_FRACTION * total as f64 || dialogues.is_empty() {
        return Err(CorpusError::Validation {
            failed: skipped.len(),
            total,
            issues: skipped,
        });
    }
    for issue in &skipped {
        log::warn!("{}: skipped {issue}", path.display());
    }
    Ok(LoadedSplit {
        split: DatasetSplit::new(name, dialogues)?,
        skipped,
    })
}

fn compute_stats(dialogues: &[Dialogue]) -> Result<SplitStats, CorpusError> {
    if dialogues.is_empty() {
        return Err(CorpusError::EmptySplit);
    }
    let n = dialogues.len() as f64;
    let mean = |f: fn(&Dialogue) -> usize| dialogues.iter().map(f).sum::<usize>() as f64 / n;
    Ok(SplitStats {
        count: dialogues.len(),
        mean_speakers: mean(Dialogue::speaker_count),
        mean_turns: mean(|d| d.turns.len()),
        mean_tokens: mean(Dialogue::token_count),
    })
}

/// Recompute `(count, mean_speakers, mean_turns, mean_tokens)` for a split.
pub fn split_stats(split: &DatasetSplit) -> Result<SplitStats, CorpusError> {
    compute_stats(&split.dialogues)
}

/// A dialogue with teacher-generated positive and negative summaries.
///
/// Field order matches the on-disk record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentedInstance {
    pub id: String,
    pub dialogue: String,
    pub reference: String,
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
    pub error_explanations: Vec<String>,
    pub teacher_model: String,
    pub prompt_version: String,
}

impl AugmentedInstance {
    /// Check the per-instance invariants against the corpus-level `k`.
    pub fn validate(&self, k: usize) -> Result<(), CorpusError> {
        let fail = |reason: String| {
            Err(CorpusError::Invariant {
                id: self.id.clone(),
                reason,
            })
        };
        if self.id.trim().is_empty() {
            return fail("empty id".into());
        }
        if self.dialogue.trim().is_empty() {
            return fail("empty dialogue".into());
        }
        if self.reference.trim().is_empty() {
            return fail("empty reference".into());
        }
        if self.positives.len() != k || self.negatives.len() != k {
            return fail(format!(
                "expected {k} positives and negatives, found {} and {}",
                self.positives.len(),
                self.negatives.len()
            ));
        }
        if self.error_explanations.len() != self.negatives.len() {
            return fail(format!(
                "{} error explanations for {} negatives",
                self.error_explanations.len(),
                self.negatives.len()
            ));
        }
        for (i, (p, n)) in self.positives.iter().zip(&self.negatives).enumerate() {
            if normalize_for_compare(p) == normalize_for_compare(n) {
                return fail(format!("negative {i} does not differ from its positive"));
            }
        }
        Ok(())
    }

    /// Parse the stored dialogue text into a [`Dialogue`].
    pub fn to_dialogue(&self) -> Result<Dialogue, CorpusError> {
        Dialogue::parse(&self.id, &self.dialogue, Some(self.reference.clone()))
    }

    pub fn k(&self) -> usize {
        self.positives.len()
    }
}

fn corpus_k(instances: &[AugmentedInstance]) -> usize {
    instances.first().map_or(0, AugmentedInstance::k)
}

/// Write an augmented corpus, one record per line. Every instance is validated
/// against the `k` of the first instance before anything is written.
pub fn write_augmented(instances: &[AugmentedInstance], path: &Path) -> Result<usize, CorpusError> {
    let k = corpus_k(instances);
    validate_all(instances, k)?;
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for inst in instances {
        write_record(&mut out, inst).map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))?;
    Ok(instances.len())
}

fn validate_all(instances: &[AugmentedInstance], k: usize) -> Result<(), CorpusError> {
    let mut ids = HashSet::new();
    for inst in instances {
        inst.validate(k)?;
        if !ids.insert(inst.id.as_str()) {
            return Err(CorpusError::Invariant {
                id: inst.id.clone(),
                reason: "duplicate id".into(),
            });
        }
    }
    Ok(())
}

fn write_record<W: Write>(out: &mut W, inst: &AugmentedInstance) -> std::io::Result<()> {
    serde_json::to_writer(&mut *out, inst)?;
    out.write_all(b"\n")
}

/// Read an augmented corpus and validate it against the first record's `k`.
pub fn read_augmented(path: &Path) -> Result<Vec<AugmentedInstance>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut instances = Vec::new();
    let mut issues = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<AugmentedInstance>(&line) {
            Ok(inst) => instances.push(inst),
            Err(e) => issues.push(RecordIssue {
                line: idx + 1,
                kind: IssueKind::Malformed(e.to_string()),
            }),
        }
    }
    if !issues.is_empty() {
        return Err(CorpusError::Validation {
            failed: issues.len(),
            total: issues.len() + instances.len(),
            issues,
        });
    }
    validate_all(&instances, corpus_k(&instances))?;
    Ok(instances)
}

/// Append-only writer used while extracting, so an interrupted run keeps
/// everything it finished.
pub struct AugmentedWriter {
    path: PathBuf,
    out: BufWriter<File>,
    k: usize,
}

impl AugmentedWriter {
    pub fn append(path: &Path, k: usize) -> Result<Self, CorpusError> {
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            out: BufWriter::new(file),
            k,
        })
    }

    pub fn write(&mut self, inst: &AugmentedInstance) -> Result<(), CorpusError> {
        inst.validate(self.k)?;
        write_record(&mut self.out, inst)
            .and_then(|_| self.out.flush())
            .map_err(io_err(&self.path))
    }
}

/// A system-output record `{"id", "summary"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SystemOutput {
    pub id: String,
    pub summary: String,
}

pub fn read_system_outputs(path: &Path) -> Result<Vec<SystemOutput>, CorpusError> {
    read_jsonl(path)
}

pub fn write_system_outputs(outputs: &[SystemOutput], path: &Path) -> Result<(), CorpusError> {
    write_jsonl(outputs, path)
}

/// Generic JSONL reader; any malformed line aborts.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut rows = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = serde_json::from_str(&line).map_err(|e| CorpusError::Validation {
            failed: 1,
            total: idx + 1,
            issues: vec![RecordIssue {
                line: idx + 1,
                kind: IssueKind::Malformed(e.to_string()),
            }],
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_jsonl<T: Serialize>(rows: &[T], path: &Path) -> Result<(), CorpusError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut out = BufWriter::new(file);
    for row in rows {
        serde_json::to_writer(&mut out, row)
            .map_err(std::io::Error::from)
            .and_then(|_| out.write_all(b"\n"))
            .map_err(io_err(path))?;
    }
    out.flush().map_err(io_err(path))
}

/// Join system outputs to the dialogues of a split by id.
pub fn join_outputs<'a>(
    split: &'a DatasetSplit,
    outputs: &'a [SystemOutput],
) -> Result<Vec<(&'a Dialogue, &'a SystemOutput)>, CorpusError> {
    let by_id: HashMap<&str, &Dialogue> = split.dialogues.iter().map(|d| (d.id.as_str(), d)).collect();
    outputs
        .iter()
        .map(|o| {
            by_id
                .get(o.id.as_str())
                .map(|d| (*d, o))
                .ok_or_else(|| CorpusError::Invariant {
                    id: o.id.clone(),
                    reason: "system output id not found in the dialogue split".into(),
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(lines: &[&str]) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        for l in lines {
            writeln!(f, "{l}").unwrap();
        }
        f
    }

    pub(crate) fn sample_instance(id: &str, k: usize) -> AugmentedInstance {
        AugmentedInstance {
            id: id.into(),
            dialogue: "A: hi\nB: hello".into(),
            reference: "A greets B.".into(),
            positives: (0..k).map(|i| format!("A says hi {i}.")).collect(),
            negatives: (0..k).map(|i| format!("B says bye {i}.")).collect(),
            error_explanations: vec![String::new(); k],
            teacher_model: "gpt-3.5-turbo".into(),
            prompt_version: "v1".into(),
        }
    }

    #[test]
    fn parse_turns_and_continuations() {
        let d = Dialogue::parse("d1", "Amanda: I baked cookies.\nDo you want some?\n\nJerry: Sure: thanks!", None).unwrap();
        assert_eq!(d.turns.len(), 2);
        assert_eq!(d.turns[0].utterance, "I baked cookies. Do you want some?");
        assert_eq!(d.turns[1].speaker, "Jerry");
        assert_eq!(d.turns[1].utterance, "Sure: thanks!");
        assert_eq!(d.raw_text, "Amanda: I baked cookies. Do you want some?\nJerry: Sure: thanks!");
        assert_eq!(d.speaker_count(), 2);
        // raw_text reparses to the same turns
        let again = Dialogue::parse("d1", &d.raw_text, None).unwrap();
        assert_eq!(again.turns, d.turns);
    }

    #[test]
    fn reject_bad_dialogues() {
        assert!(Dialogue::parse("d", "", None).is_err());
        assert!(Dialogue::parse("d", "A:   ", None).is_err());
        assert!(Dialogue::parse("", "A: hi", None).is_err());
        assert!(Dialogue::parse("d", "no speaker here", None).is_err());
    }

    #[test]
    fn load_single_record() {
        let f = write_lines(&[r#"{"id":"d1","dialogue":"A: hi\nB: hello","reference":"A greets B."}"#]);
        let loaded = load_split(f.path(), SourceFormat::SamsumLike, SplitName::Train).unwrap();
        assert_eq!(loaded.split.stats.count, 1);
        assert_eq!(loaded.split.stats.mean_turns, 2.0);
        assert!(loaded.skipped.is_empty());
    }

    #[test]
    fn missing_reference_names_field_and_line() {
        let f = write_lines(&[r#"{"id":"d1","dialogue":"A: hi\nB: hello"}"#]);
        let err = load_split(f.path(), SourceFormat::SamsumLike, SplitName::Train).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("reference"), "{msg}");
        assert!(msg.contains("line 1"), "{msg}");
    }

    #[test]
    fn empty_file_is_an_error() {
        let f = write_lines(&[]);
        assert!(matches!(
            load_split(f.path(), SourceFormat::SamsumLike, SplitName::Dev),
            Err(CorpusError::EmptyFile { .. })
        ));
    }

    #[test]
    fn skips_few_bad_records_but_aborts_on_many() {
        let good = r#"{"id":"ID","dialogue":"A: hi\nB: hello","reference":"r"}"#;
        let mut lines: Vec<String> = (0..20).map(|i| good.replace("ID", &i.to_string())).collect();
        lines.push(r#"{"id":"x","dialogue":"A: hi"}"#.into());
        lines.push(good.replace("ID", "3"));
        let refs: Vec<&str> = lines.iter().map(String::as_str).collect();
        let f = write_lines(&refs);
        let loaded = load_split(f.path(), SourceFormat::SamsumLike, SplitName::Train).unwrap();
        assert_eq!(loaded.split.len(), 20);
        assert_eq!(loaded.skipped.len(), 2);
        assert_eq!(loaded.skipped[0].line, 21);
        assert_eq!(loaded.skipped[1].kind, IssueKind::DuplicateId("3".into()));

        let mut bad = refs[..5].to_vec();
        bad.push(r#"{"id":"x","dialogue":"A: hi"}"#);
        let f = write_lines(&bad);
        assert!(matches!(
            load_split(f.path(), SourceFormat::SamsumLike, SplitName::Train),
            Err(CorpusError::Validation { failed: 1, total: 6, .. })
        ));
    }

    #[test]
    fn dialogsum_field_names() {
        let f = write_lines(&[r##"{"fname":"train_1","dialogue":"#Person1#: Hi.\n#Person2#: Hello.","summary":"They greet."}"##]);
        let loaded = load_split(f.path(), SourceFormat::DialogsumLike, SplitName::Train).unwrap();
        assert_eq!(loaded.split.dialogues[0].id, "train_1");
        assert_eq!(loaded.split.dialogues[0].turns[0].speaker, "#Person1#");
        assert!(load_split(f.path(), SourceFormat::SamsumLike, SplitName::Train).is_err());
    }

    #[test]
    fn loading_is_deterministic() {
        let f = write_lines(&[
            r#"{"id":"a","dialogue":"A: hi there\nB: hello","reference":"r"}"#,
            r#"{"id":"b","dialogue":"A: one\nB: two\nC: three\nA: four","reference":"r"}"#,
        ]);
        let a = load_split(f.path(), SourceFormat::SamsumLike, SplitName::Test).unwrap();
        let b = load_split(f.path(), SourceFormat::SamsumLike, SplitName::Test).unwrap();
        assert_eq!(a.split, b.split);
        assert_eq!(a.split.stats.mean_turns, 3.0);
    }

    #[test]
    fn stats_singleton_and_mean() {
        let d = Dialogue::parse("x", "A: one two\nB: three\nA: four\nB: five six", None).unwrap();
        let tokens = d.token_count();
        let split = DatasetSplit::new(SplitName::Train, vec![d]).unwrap();
        let s = split_stats(&split).unwrap();
        assert_eq!((s.count, s.mean_speakers, s.mean_turns, s.mean_tokens), (1, 2.0, 4.0, tokens as f64));
        assert_eq!(tokens, 10);

        let empty = DatasetSplit {
            name: SplitName::Train,
            dialogues: vec![],
            stats: s,
        };
        assert!(matches!(split_stats(&empty), Err(CorpusError::EmptySplit)));
    }

    #[test]
    fn write_counts_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("aug.jsonl");
        let xs = vec![sample_instance("a", 3), sample_instance("b", 3)];
        assert_eq!(write_augmented(&xs, &path).unwrap(), 2);
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 2);
        assert_eq!(read_augmented(&path).unwrap(), xs);
    }

    #[test]
    fn write_rejects_length_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let mut bad = sample_instance("bad-one", 3);
        bad.negatives.pop();
        bad.error_explanations.pop();
        let err = write_augmented(&[bad], &dir.path().join("x.jsonl")).unwrap_err();
        assert!(err.to_string().contains("bad-one"));

        let mut echo = sample_instance("echo", 1);
        echo.negatives[0] = format!("  {} ", echo.positives[0].to_uppercase());
        assert!(write_augmented(&[echo], &dir.path().join("y.jsonl")).is_err());

        let mixed = vec![sample_instance("a", 3), sample_instance("b", 2)];
        assert!(write_augmented(&mixed, &dir.path().join("z.jsonl")).is_err());
    }

    #[test]
    fn record_field_order() {
        let line = serde_json::to_string(&sample_instance("a", 1)).unwrap();
        let keys = ["\"id\"", "\"dialogue\"", "\"reference\"", "\"positives\"", "\"negatives\"", "\"error_explanations\"", "\"teacher_model\"", "\"prompt_version\""];
        let positions: Vec<usize> = keys.iter().map(|k| line.find(k).unwrap()).collect();
        assert!(positions.windows(2).all(|w| w[0] < w[1]));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn text() -> impl Strategy<Value = String> {
            "[ -~]{1,30}".prop_filter("non-blank", |s| !s.trim().is_empty())
        }

        fn instance(k: usize) -> impl Strategy<Value = AugmentedInstance> {
            (
                "[a-z0-9]{1,8}",
                text(),
                text(),
                proptest::collection::vec(text(), k),
                proptest::collection::vec(any::<String>(), k),
            )
                .prop_map(move |(id, dialogue, reference, positives, expl)| AugmentedInstance {
                    negatives: positives.iter().map(|p| format!("{p} not")).collect(),
                    id,
                    dialogue,
                    reference,
                    positives,
                    error_explanations: expl,
                    teacher_model: "t".into(),
                    prompt_version: "v".into(),
                })
        }

        proptest! {
            #[test]
            fn augmented_round_trip(xs in (1usize..4).prop_flat_map(|k| proptest::collection::vec(instance(k), 1..5))) {
                let xs: Vec<AugmentedInstance> = xs.into_iter().enumerate().map(|(i, mut x)| {
                    x.id = format!("{}-{i}", x.id);
                    x
                }).collect();
                let dir = tempfile::tempdir().unwrap();
                let path = dir.path().join("c.jsonl");
                write_augmented(&xs, &path).unwrap();
                prop_assert_eq!(read_augmented(&path).unwrap(), xs);
            }
        }
    }
}
