//! Knowledge extraction from a teacher LLM: k consistent summaries per
//! dialogue, each rewritten into an inconsistent variant with an
//! explanation of the injected errors.

mod client;

pub use client::{
    ChatRequest, ChatTransport, HttpChatTransport, Purpose, RateLimiter, RequestOutcome, RequestRecord, TeacherClient,
    TeacherSettings, TransportError,
};

use std::collections::{BTreeMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{AugmentedInstance, AugmentedWriter, CorpusError, DatasetSplit, Dialogue};
use crate::evaluation::{score_checked, Scorer, ScorerError};
use crate::text::normalize_for_compare;

#[derive(Debug, Error)]
pub enum TeacherError {
    #[error("teacher configuration: {0}")]
    Config(String),
    #[error("environment variable {var} is not set")]
    MissingApiKey { var: String },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("empty completion after {attempts} attempt(s)")]
    EmptyCompletion { attempts: u32 },
    #[error("completion lacks SUMMARY:/ERRORS: sections")]
    Unparseable { raw: String },
    #[error("negative is identical to its positive: {positive:?}")]
    IdenticalOutput { positive: String },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("{failed} of {processed} dialogues failed, above the threshold {threshold}")]
    FailureThreshold { failed: usize, processed: usize, threshold: f64 },
    #[error("scoring instance {id}: {source}")]
    Scoring {
        id: String,
        #[source]
        source: ScorerError,
    },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub const DIALOGUE_SLOT: &str = "{dialogue}";
pub const SUMMARY_SLOT: &str = "{summary}";

const DEFAULT_POSITIVE: &str = "Summarize the following dialogue in one to three sentences. \
Include only facts that are stated in the dialogue.\n\nDialogue:\n{dialogue}\n\nSummary:";

const DEFAULT_NEGATIVE: &str = "Below is a dialogue and a faithful summary of it.\n\n\
Dialogue:\n{dialogue}\n\nSummary:\n{summary}\n\n\
Rewrite the summary so that it becomes factually inconsistent with the dialogue, \
changing as few words as possible (for example a wrong speaker, object, time, negation or quantity). \
Then explain each factual error you introduced.\n\
Answer in exactly this format:\nSUMMARY: <modified summary>\nERRORS: <itemized explanation of the errors>";

/// Versioned prompt pair. The version is derived from the template text, so
/// any wording change yields a new version.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PromptTemplate {
    version: String,
    positive_template: String,
    negative_template: String,
}

fn check_slots(name: &str, template: &str, slots: &[&str]) -> Result<(), TeacherError> {
    for slot in slots {
        let n = template.matches(slot).count();
        if n != 1 {
            return Err(TeacherError::Config(format!(
                "{name} template must contain {slot} exactly once (found {n})"
            )));
        }
    }
    Ok(())
}

/// Substitute slots in a single pass so slot-like text inside values is left alone.
fn fill(template: &str, values: &[(&str, &str)]) -> String {
    let mut marks: Vec<(usize, &str, &str)> = values
        .iter()
        .filter_map(|(slot, v)| template.find(slot).map(|at| (at, *slot, *v)))
        .collect();
    marks.sort_by_key(|m| m.0);
    let mut out = String::with_capacity(template.len() + values.iter().map(|v| v.1.len()).sum::<usize>());
    let mut pos = 0;
    for (at, slot, value) in marks {
        out.push_str(&template[pos..at]);
        out.push_str(value);
        pos = at + slot.len();
    }
    out.push_str(&template[pos..]);
    out
}

impl PromptTemplate {
    pub fn new(positive_template: &str, negative_template: &str) -> Result<Self, TeacherError> {
        check_slots("positive", positive_template, &[DIALOGUE_SLOT])?;
        check_slots("negative", negative_template, &[DIALOGUE_SLOT, SUMMARY_SLOT])?;
        let mut hasher = Sha256::new();
        hasher.update(positive_template.as_bytes());
        hasher.update([0u8]);
        hasher.update(negative_template.as_bytes());
        let digest = hex::encode(hasher.finalize());
        Ok(Self {
            version: format!("tpl-{}", &digest[..12]),
            positive_template: positive_template.to_string(),
            negative_template: negative_template.to_string(),
        })
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn render_positive(&self, dialogue: &str) -> String {
        fill(&self.positive_template, &[(DIALOGUE_SLOT, dialogue)])
    }

    pub fn render_negative(&self, dialogue: &str, summary: &str) -> String {
        fill(&self.negative_template, &[(DIALOGUE_SLOT, dialogue), (SUMMARY_SLOT, summary)])
    }
}

impl Default for PromptTemplate {
    fn default() -> Self {
        Self::new(DEFAULT_POSITIVE, DEFAULT_NEGATIVE).expect("built-in templates are well formed")
    }
}

/// The built-in (positive, negative) template text.
pub fn default_template_text() -> (&'static str, &'static str) {
    (DEFAULT_POSITIVE, DEFAULT_NEGATIVE)
}

fn find_marker(upper: &str, marker: &str, from: usize) -> Option<usize> {
    upper[from..].find(marker).map(|i| i + from)
}

/// Split a `SUMMARY: ... ERRORS: ...` completion into its two parts.
pub fn parse_negative_completion(raw: &str) -> Result<(String, String), TeacherError> {
    let unparseable = || TeacherError::Unparseable { raw: raw.to_string() };
    // ASCII uppercasing keeps byte offsets aligned with `raw`.
    let upper = raw.to_ascii_uppercase();
    let s = find_marker(&upper, "SUMMARY:", 0).ok_or_else(unparseable)?;
    let body = s + "SUMMARY:".len();
    let e = find_marker(&upper, "ERRORS:", body).ok_or_else(unparseable)?;
    let summary = raw[body..e].trim();
    let errors = raw[e + "ERRORS:".len()..].trim();
    if summary.is_empty() || errors.is_empty() {
        return Err(unparseable());
    }
    Ok((summary.to_string(), errors.to_string()))
}

/// `k` summaries, each from its own request.
pub fn generate_positives(
    client: &TeacherClient,
    template: &PromptTemplate,
    dialogue: &Dialogue,
    k: usize,
) -> Result<Vec<String>, TeacherError> {
    if k == 0 {
        return Err(TeacherError::InvalidInput("k must be at least 1".into()));
    }
    let prompt = template.render_positive(&dialogue.raw_text);
    let temperature = client.settings().positive_temperature;
    (0..k)
        .map(|_| client.complete(Purpose::Positive, &dialogue.id, &prompt, temperature))
        .collect()
}

/// Rewrite one positive into a negative plus explanation. A parse failure
/// and an echoed positive each earn one re-request.
pub fn perturb_to_negative(
    client: &TeacherClient,
    template: &PromptTemplate,
    dialogue: &Dialogue,
    positive: &str,
) -> Result<(String, String), TeacherError> {
    if positive.trim().is_empty() {
        return Err(TeacherError::InvalidInput("positive summary is empty".into()));
    }
    let prompt = template.render_negative(&dialogue.raw_text, positive);
    let temperature = client.settings().negative_temperature;
    let target = normalize_for_compare(positive);
    let (mut parse_retry, mut echo_retry) = (true, true);
    loop {
        let raw = client.complete(Purpose::Negative, &dialogue.id, &prompt, temperature)?;
        match parse_negative_completion(&raw) {
            Err(e) => {
                if std::mem::take(&mut parse_retry) {
                    log::warn!("dialogue {}: unparseable negative, re-requesting", dialogue.id);
                    continue;
                }
                return Err(e);
            }
            Ok((negative, _)) if normalize_for_compare(&negative) == target => {
                if std::mem::take(&mut echo_retry) {
                    log::warn!("dialogue {}: negative echoes its positive, re-requesting", dialogue.id);
                    continue;
                }
                return Err(TeacherError::IdenticalOutput {
                    positive: positive.to_string(),
                });
            }
            Ok(pair) => return Ok(pair),
        }
    }
}

/// Full extraction for one dialogue.
pub fn extract_instance(
    client: &TeacherClient,
    template: &PromptTemplate,
    dialogue: &Dialogue,
    k: usize,
) -> Result<AugmentedInstance, TeacherError> {
    let reference = dialogue
        .reference
        .clone()
        .filter(|r| !r.trim().is_empty())
        .ok_or_else(|| TeacherError::InvalidInput(format!("dialogue {} has no reference summary", dialogue.id)))?;
    let positives = generate_positives(client, template, dialogue, k)?;
    let mut negatives = Vec::with_capacity(k);
    let mut error_explanations = Vec::with_capacity(k);
    for positive in &positives {
        let (negative, explanation) = perturb_to_negative(client, template, dialogue, positive)?;
        negatives.push(negative);
        error_explanations.push(explanation);
    }
    let inst = AugmentedInstance {
        id: dialogue.id.clone(),
        dialogue: dialogue.raw_text.clone(),
        reference,
        positives,
        negatives,
        error_explanations,
        teacher_model: client.model_name().to_string(),
        prompt_version: template.version().to_string(),
    };
    inst.validate(k)?;
    Ok(inst)
}

/// Where extraction persists its results. Both files are append-only.
#[derive(Debug, Clone)]
pub struct ExtractionStore {
    /// Augmented JSONL output.
    pub output: PathBuf,
    /// JSONL of `{"id": ...}` for every dialogue already written.
    pub checkpoint: PathBuf,
}

impl ExtractionStore {
    pub fn completed_ids(&self) -> Result<HashSet<String>, TeacherError> {
        #[derive(Deserialize)]
        struct Done {
            id: String,
        }
        let file = match File::open(&self.checkpoint) {
            Ok(f) => f,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(HashSet::new()),
            Err(source) => {
                return Err(TeacherError::Io {
                    path: self.checkpoint.clone(),
                    source,
                })
            }
        };
        let mut ids = HashSet::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|source| TeacherError::Io {
                path: self.checkpoint.clone(),
                source,
            })?;
            // A torn final line from a crash is ignored; that dialogue is redone.
            if let Ok(done) = serde_json::from_str::<Done>(&line) {
                ids.insert(done.id);
            }
        }
        Ok(ids)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ExtractionSummary {
    /// Dialogues attempted in this run.
    pub processed: usize,
    /// Dialogues skipped because an earlier run completed them.
    pub resumed: usize,
    pub failures: Vec<(String, String)>,
    pub requests: usize,
}

/// Extract over the first `limit` dialogues of `split` (all when `None`)
/// with up to `max_in_flight` dialogues in progress at once. Instances are
/// emitted in split order. With a store, completed dialogues are skipped and
/// new ones are appended as they finish.
pub fn extract_corpus(
    client: &TeacherClient,
    template: &PromptTemplate,
    split: &DatasetSplit,
    k: usize,
    limit: Option<usize>,
    store: Option<&ExtractionStore>,
) -> Result<(Vec<AugmentedInstance>, ExtractionSummary), TeacherError> {
    if split.is_empty() {
        return Err(CorpusError::EmptySplit.into());
    }
    if k == 0 {
        return Err(TeacherError::InvalidInput("k must be at least 1".into()));
    }
    let n = match limit {
        Some(l) if l > split.len() => {
            return Err(TeacherError::InvalidInput(format!(
                "limit {l} exceeds split size {}",
                split.len()
            )))
        }
        Some(l) => l,
        None => split.len(),
    };
    let done = match store {
        Some(s) => s.completed_ids()?,
        None => HashSet::new(),
    };
    let todo: Vec<&Dialogue> = split.dialogues[..n].iter().filter(|d| !done.contains(&d.id)).collect();
    let mut summary = ExtractionSummary {
        resumed: n - todo.len(),
        ..ExtractionSummary::default()
    };
    let requests_before = client.request_count();

    let (mut writer, mut checkpoint) = match store {
        Some(s) => {
            let ckpt = OpenOptions::new()
                .create(true)
                .append(true)
                .open(&s.checkpoint)
                .map_err(|source| TeacherError::Io {
                    path: s.checkpoint.clone(),
                    source,
                })?;
            (Some(AugmentedWriter::append(&s.output, k)?), Some((ckpt, s.checkpoint.clone())))
        }
        None => (None, None),
    };

    let threshold = client.settings().failure_threshold;
    let workers = client.settings().max_in_flight.min(todo.len()).max(1);
    let next = AtomicUsize::new(0);
    let stop = AtomicBool::new(false);
    let mut instances = Vec::new();
    let mut aborted = None;

    std::thread::scope(|scope| -> Result<(), TeacherError> {
        let (tx, rx) = mpsc::channel();
        for _ in 0..workers {
            let tx = tx.clone();
            let (next, stop, todo) = (&next, &stop, &todo);
            scope.spawn(move || loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= todo.len() {
                    break;
                }
                let result = extract_instance(client, template, todo[i], k);
                if tx.send((i, result)).is_err() {
                    break;
                }
            });
        }
        drop(tx);

        // Reorder buffer: results arrive in completion order, leave in split order.
        let mut pending = BTreeMap::new();
        let mut emit = 0;
        let mut failed = 0;
        for (i, result) in rx {
            pending.insert(i, result);
            while let Some(result) = pending.remove(&emit) {
                let id = &todo[emit].id;
                emit += 1;
                summary.processed += 1;
                match result {
                    Ok(inst) => {
                        if let Some(w) = writer.as_mut() {
                            if let Err(e) = w.write(&inst) {
                                stop.store(true, Ordering::SeqCst);
                                return Err(e.into());
                            }
                        }
                        if let Some((file, path)) = checkpoint.as_mut() {
                            let line = serde_json::json!({ "id": id }).to_string();
                            if let Err(source) = writeln!(file, "{line}").and_then(|_| file.flush()) {
                                stop.store(true, Ordering::SeqCst);
                                return Err(TeacherError::Io { path: path.clone(), source });
                            }
                        }
                        instances.push(inst);
                    }
                    Err(e) => {
                        log::warn!("dialogue {id} skipped: {e}");
                        summary.failures.push((id.clone(), e.to_string()));
                        failed += 1;
                        // Judge the rate only once a handful of dialogues are in.
                        let settled = summary.processed >= 10 || summary.processed == todo.len();
                        if settled && failed as f64 / summary.processed as f64 > threshold {
                            stop.store(true, Ordering::SeqCst);
                            aborted = Some((failed, summary.processed));
                        }
                    }
                }
            }
            if aborted.is_some() {
                break;
            }
        }
        Ok(())
    })?;

    summary.requests = client.request_count() - requests_before;
    if let Some((failed, processed)) = aborted {
        return Err(TeacherError::FailureThreshold {
            failed,
            processed,
            threshold,
        });
    }
    Ok((instances, summary))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QualityReport {
    pub mean: f64,
    pub scored: usize,
    pub floor: f64,
    /// Instances with at least one positive scoring under the floor, with that lowest score.
    pub flagged: Vec<(String, f64)>,
}

/// Mean consistency of all positives in the sample.
pub fn quality_gate(
    instances: &[AugmentedInstance],
    scorer: &dyn Scorer,
    floor: f64,
) -> Result<QualityReport, TeacherError> {
    if instances.is_empty() {
        return Err(TeacherError::InvalidInput("quality gate sample is empty".into()));
    }
    let mut sum = 0.0;
    let mut scored = 0;
    let mut flagged = Vec::new();
    for inst in instances {
        let mut lowest = f64::INFINITY;
        for positive in &inst.positives {
            let s = score_checked(scorer, &inst.dialogue, positive).map_err(|source| TeacherError::Scoring {
                id: inst.id.clone(),
                source,
            })?;
            sum += s;
            scored += 1;
            lowest = lowest.min(s);
        }
        if lowest < floor {
            flagged.push((inst.id.clone(), lowest));
        }
    }
    if scored == 0 {
        return Err(TeacherError::InvalidInput("sample has no positives".into()));
    }
    Ok(QualityReport {
        mean: sum / scored as f64,
        scored,
        floor,
        flagged,
    })
}

/// Write the quality report as pretty JSON.
pub fn write_quality_report(report: &QualityReport, path: &Path) -> Result<(), TeacherError> {
    let body = serde_json::to_vec_pretty(report).expect("report serializes");
    std::fs::write(path, body).map_err(|source| TeacherError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::SplitName;
    use crate::evaluation::{Dimension, LexicalMock};
    use std::sync::Arc;
    use std::sync::Mutex;

    fn settings() -> TeacherSettings {
        TeacherSettings {
            rate_limit: 1e9,
            backoff_ms: 0,
            max_retries: 0,
            ..TeacherSettings::default()
        }
    }

    fn dialogue(id: &str) -> Dialogue {
        Dialogue::parse(id, "Ann: We went together.\nBob: Yes, to the park.", Some("Ann and Bob went to the park.".into()))
            .unwrap()
    }

    /// Answers positives with canned text and negatives in the sectioned format.
    fn healthy(req: &ChatRequest<'_>) -> Result<String, TransportError> {
        if req.prompt.contains("SUMMARY:") {
            Ok("SUMMARY: Ann went alone.\nERRORS: changed 'together' to 'alone'".into())
        } else {
            Ok("Ann and Bob went to the park together.".into())
        }
    }

    #[test]
    fn template_slots_and_version() {
        let t = PromptTemplate::default();
        assert!(t.render_positive("D").contains("\nD\n"));
        let rendered = t.render_negative("has {summary} inside", "S");
        assert!(rendered.contains("has {summary} inside") && rendered.contains("\nS\n"));
        assert!(PromptTemplate::new("no slot", "{dialogue} {summary}").is_err());
        assert!(PromptTemplate::new("{dialogue}", "{dialogue} {summary} {summary}").is_err());
        let a = PromptTemplate::new("A {dialogue}", "{dialogue} {summary}").unwrap();
        let b = PromptTemplate::new("B {dialogue}", "{dialogue} {summary}").unwrap();
        assert_ne!(a.version(), b.version());
        assert_eq!(a.version(), PromptTemplate::new("A {dialogue}", "{dialogue} {summary}").unwrap().version());
    }

    #[test]
    fn parser_contract() {
        let (s, e) = parse_negative_completion("SUMMARY: X went alone.\nERRORS: changed 'together' to 'alone'").unwrap();
        assert_eq!(s, "X went alone.");
        assert_eq!(e, "changed 'together' to 'alone'");
        match parse_negative_completion("SUMMARY: X went alone.") {
            Err(TeacherError::Unparseable { raw }) => assert_eq!(raw, "SUMMARY: X went alone."),
            other => panic!("{other:?}"),
        }
        assert!(parse_negative_completion("Summary: a\nErrors: b").is_ok());
    }

    #[test]
    fn positives_use_k_requests() {
        let client = TeacherClient::new(settings(), Box::new(healthy)).unwrap();
        let out = generate_positives(&client, &PromptTemplate::default(), &dialogue("d"), 3).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(client.request_count(), 3);
    }

    #[test]
    fn echoed_negative_is_rerequested_once() {
        let echo = |_: &ChatRequest<'_>| Ok("SUMMARY: Ann and Bob went.\nERRORS: none".to_string());
        let client = TeacherClient::new(settings(), Box::new(echo)).unwrap();
        let err = perturb_to_negative(&client, &PromptTemplate::default(), &dialogue("d"), "ann and  bob went.").unwrap_err();
        assert!(matches!(err, TeacherError::IdenticalOutput { .. }));
        assert_eq!(client.request_count(), 2);
    }

    #[test]
    fn unparseable_negative_gets_one_repair() {
        let calls = Arc::new(Mutex::new(0));
        let c = calls.clone();
        let flaky = move |_: &ChatRequest<'_>| {
            let mut n = c.lock().unwrap();
            *n += 1;
            Ok(if *n == 1 { "no sections".to_string() } else { "SUMMARY: B.\nERRORS: e".to_string() })
        };
        let client = TeacherClient::new(settings(), Box::new(flaky)).unwrap();
        assert_eq!(
            perturb_to_negative(&client, &PromptTemplate::default(), &dialogue("d"), "A.").unwrap(),
            ("B.".to_string(), "e".to_string())
        );
        assert_eq!(*calls.lock().unwrap(), 2);
    }

    #[test]
    fn extraction_counts_limit_and_resume() {
        let dir = tempfile::tempdir().unwrap();
        let store = ExtractionStore {
            output: dir.path().join("aug.jsonl"),
            checkpoint: dir.path().join("done.jsonl"),
        };
        let split = DatasetSplit::new(SplitName::Train, (0..10).map(|i| dialogue(&format!("d{i}"))).collect()).unwrap();
        let client = TeacherClient::new(settings(), Box::new(healthy)).unwrap();
        let (first, s1) = extract_corpus(&client, &PromptTemplate::default(), &split, 3, Some(4), Some(&store)).unwrap();
        assert_eq!(first.len(), 4);
        assert_eq!(s1.requests, 4 * 6);
        let (second, s2) = extract_corpus(&client, &PromptTemplate::default(), &split, 3, None, Some(&store)).unwrap();
        assert_eq!(second.len(), 6);
        assert_eq!((s2.resumed, s2.requests), (4, 36));
        let all = crate::corpus::read_augmented(&store.output).unwrap();
        let ids: Vec<_> = all.iter().map(|i| i.id.clone()).collect();
        assert_eq!(ids, (0..10).map(|i| format!("d{i}")).collect::<Vec<_>>());
        assert!(extract_corpus(&client, &PromptTemplate::default(), &split, 3, Some(11), None).is_err());
    }

    #[test]
    fn failure_threshold_aborts() {
        let broken = |_: &ChatRequest<'_>| Err(TransportError::Network("down".into()));
        let client = TeacherClient::new(settings(), Box::new(broken)).unwrap();
        let split = DatasetSplit::new(SplitName::Train, (0..3).map(|i| dialogue(&format!("d{i}"))).collect()).unwrap();
        assert!(matches!(
            extract_corpus(&client, &PromptTemplate::default(), &split, 1, None, None),
            Err(TeacherError::FailureThreshold { failed: 3, .. })
        ));
    }

    #[test]
    fn quality_gate_means() {
        let mk = |id: &str, positives: Vec<&str>| AugmentedInstance {
            id: id.into(),
            dialogue: "Ann: We went to the park.".into(),
            reference: "r".into(),
            negatives: positives.iter().map(|_| "x".to_string()).collect(),
            error_explanations: positives.iter().map(|_| String::new()).collect(),
            positives: positives.into_iter().map(String::from).collect(),
            teacher_model: "t".into(),
            prompt_version: "v".into(),
        };
        let scorer = LexicalMock::new(Dimension::Consistency);
        let sample = vec![mk("a", vec!["Ann went to the park."]), mk("b", vec!["Zed flew."])];
        let report = quality_gate(&sample, &scorer, 0.5).unwrap();
        assert_eq!(report.mean, 0.5);
        assert_eq!(report.flagged, vec![("b".to_string(), 0.0)]);
        assert!(quality_gate(&[], &scorer, 0.5).is_err());
    }
}
