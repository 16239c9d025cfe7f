//! Scoring system outputs, comparison reports, and meta-evaluation of
//! factuality metrics against human judgments.

mod metaeval;
mod report;
mod rouge;
mod scorers;

pub use metaeval::{
    binarize, load_meta_eval, meta_evaluate, pearson, spearman, write_meta_eval_tsv, Correlation, Label,
    MetaEvalRecord, MetaEvalRow, RawMetaEvalRecord,
};
pub use report::{build_report, RenderedReport};
pub use rouge::rouge_f;
pub use scorers::{
    parse_judge_score, score_checked, unit_score, Backend, Dimension, ExternalModelScorer, LexicalMock,
    LlmJudgeScorer, Scorer, ScorerError, JUDGE_PROMPT_VERSION,
};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{join_outputs, CorpusError, DatasetSplit, SystemOutput};

#[derive(Debug, Error)]
pub enum EvaluationError {
    #[error("nothing to evaluate")]
    EmptyInput,
    #[error("report for {system} has columns [{found}], expected [{expected}]")]
    SchemaMismatch {
        system: String,
        expected: String,
        found: String,
    },
    #[error("need at least 3 records, got {n}")]
    TooFewRecords { n: usize },
    #[error("record {record} has no score for metric {metric}")]
    MissingMetric { record: usize, metric: String },
    #[error("correlation undefined: {0} have zero variance")]
    UndefinedCorrelation(&'static str),
    #[error("malformed meta-evaluation record on line {line}: {reason}")]
    BadRecord { line: usize, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub(crate) fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> EvaluationError + '_ {
    move |source| EvaluationError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// The comparison-table columns, in display order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Column {
    #[serde(rename = "S_A")]
    ConsistencyA,
    #[serde(rename = "S_G")]
    ConsistencyG,
    #[serde(rename = "Coh")]
    Coherence,
    #[serde(rename = "Flu")]
    Fluency,
    #[serde(rename = "Rel")]
    Relevance,
    #[serde(rename = "R1")]
    Rouge1,
    #[serde(rename = "R2")]
    Rouge2,
}

impl Column {
    pub const ALL: [Column; 7] = [
        Column::ConsistencyA,
        Column::ConsistencyG,
        Column::Coherence,
        Column::Fluency,
        Column::Relevance,
        Column::Rouge1,
        Column::Rouge2,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Column::ConsistencyA => "S_A",
            Column::ConsistencyG => "S_G",
            Column::Coherence => "Coh",
            Column::Fluency => "Flu",
            Column::Relevance => "Rel",
            Column::Rouge1 => "R1",
            Column::Rouge2 => "R2",
        }
    }
}

impl fmt::Display for Column {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Column {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Column::ALL
            .into_iter()
            .find(|c| c.label().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown column `{s}`"))
    }
}

/// One value per column; `None` when unscored or missing.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ColumnValues {
    pub consistency_a: Option<f64>,
    pub consistency_g: Option<f64>,
    pub coherence: Option<f64>,
    pub fluency: Option<f64>,
    pub relevance: Option<f64>,
    pub rouge1_f: Option<f64>,
    pub rouge2_f: Option<f64>,
}

impl ColumnValues {
    pub fn get(&self, column: Column) -> Option<f64> {
        match column {
            Column::ConsistencyA => self.consistency_a,
            Column::ConsistencyG => self.consistency_g,
            Column::Coherence => self.coherence,
            Column::Fluency => self.fluency,
            Column::Relevance => self.relevance,
            Column::Rouge1 => self.rouge1_f,
            Column::Rouge2 => self.rouge2_f,
        }
    }

    pub fn set(&mut self, column: Column, value: Option<f64>) {
        let slot = match column {
            Column::ConsistencyA => &mut self.consistency_a,
            Column::ConsistencyG => &mut self.consistency_g,
            Column::Coherence => &mut self.coherence,
            Column::Fluency => &mut self.fluency,
            Column::Relevance => &mut self.relevance,
            Column::Rouge1 => &mut self.rouge1_f,
            Column::Rouge2 => &mut self.rouge2_f,
        };
        *slot = value;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceScores {
    pub id: String,
    #[serde(flatten)]
    pub scores: ColumnValues,
}

/// A cell that could not be scored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MissingCell {
    pub id: String,
    pub column: Column,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub system_name: String,
    /// Columns this report carries values for.
    pub columns: Vec<Column>,
    pub per_instance: Vec<InstanceScores>,
    /// Column means over the rows that have a value.
    pub aggregates: ColumnValues,
    pub missing: Vec<MissingCell>,
    /// Hash of the run configuration that produced this report.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

impl EvaluationReport {
    /// Assemble a report from rows, computing aggregates.
    pub fn from_rows(system_name: &str, columns: Vec<Column>, rows: Vec<InstanceScores>, missing: Vec<MissingCell>) -> Self {
        let mut aggregates = ColumnValues::default();
        for &column in &columns {
            let values: Vec<f64> = rows.iter().filter_map(|r| r.scores.get(column)).collect();
            if !values.is_empty() {
                aggregates.set(column, Some(values.iter().sum::<f64>() / values.len() as f64));
            }
        }
        Self {
            system_name: system_name.to_string(),
            columns,
            per_instance: rows,
            aggregates,
            missing,
            config_hash: None,
        }
    }

    pub fn write_json(&self, path: &Path) -> Result<(), EvaluationError> {
        let body = serde_json::to_vec_pretty(self).expect("report serializes");
        std::fs::write(path, body).map_err(io_error(path))
    }

    pub fn read_json(path: &Path) -> Result<Self, EvaluationError> {
        let body = std::fs::read(path).map_err(io_error(path))?;
        serde_json::from_slice(&body).map_err(|e| EvaluationError::BadRecord {
            line: e.line(),
            reason: e.to_string(),
        })
    }
}

/// One system output to score.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalItem {
    pub id: String,
    pub dialogue: String,
    pub summary: String,
    /// Enables the ROUGE columns.
    pub reference: Option<String>,
}

/// Join a system-output file's records to their dialogues.
pub fn eval_items(split: &DatasetSplit, outputs: &[SystemOutput]) -> Result<Vec<EvalItem>, EvaluationError> {
    Ok(join_outputs(split, outputs)?
        .into_iter()
        .map(|(d, o)| EvalItem {
            id: o.id.clone(),
            dialogue: d.raw_text.clone(),
            summary: o.summary.clone(),
            reference: d.reference.clone(),
        })
        .collect())
}

/// A scorer bound to the report column it fills.
pub struct ColumnScorer<'a> {
    pub column: Column,
    pub scorer: &'a dyn Scorer,
}

/// Score every (scorer, item) cell with up to `parallelism` threads. Failed
/// cells are recorded as missing and the run continues. ROUGE columns are
/// added when every item carries a reference. Output is independent of
/// completion order.
pub fn score_outputs(
    system_name: &str,
    scorers: &[ColumnScorer<'_>],
    items: &[EvalItem],
    parallelism: usize,
) -> Result<EvaluationReport, EvaluationError> {
    if items.is_empty() {
        return Err(EvaluationError::EmptyInput);
    }
    let cells = scorers.len() * items.len();
    let next = AtomicUsize::new(0);
    let mut results: Vec<Option<Result<f64, ScorerError>>> = (0..cells).map(|_| None).collect();
    std::thread::scope(|scope| {
        let (tx, rx) = mpsc::channel();
        for _ in 0..parallelism.max(1).min(cells.max(1)) {
            let tx = tx.clone();
            let next = &next;
            scope.spawn(move || loop {
                let cell = next.fetch_add(1, Ordering::SeqCst);
                if cell >= cells {
                    break;
                }
                let (s, i) = (cell / items.len(), cell % items.len());
                let r = score_checked(scorers[s].scorer, &items[i].dialogue, &items[i].summary);
                if tx.send((cell, r)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        for (cell, r) in rx {
            results[cell] = Some(r);
        }
    });

    let with_rouge = items.iter().all(|it| it.reference.is_some());
    let mut columns: Vec<Column> = scorers.iter().map(|s| s.column).collect();
    if with_rouge {
        columns.extend([Column::Rouge1, Column::Rouge2]);
    }
    columns.sort();
    columns.dedup();

    let mut rows: Vec<InstanceScores> = items
        .iter()
        .map(|it| {
            let mut scores = ColumnValues::default();
            if let (true, Some(reference)) = (with_rouge, &it.reference) {
                scores.rouge1_f = Some(rouge_f(&it.summary, reference, 1));
                scores.rouge2_f = Some(rouge_f(&it.summary, reference, 2));
            }
            InstanceScores {
                id: it.id.clone(),
                scores,
            }
        })
        .collect();
    let mut missing = Vec::new();
    for (cell, result) in results.into_iter().enumerate() {
        let (s, i) = (cell / items.len(), cell % items.len());
        match result.expect("every cell is scored") {
            Ok(v) => rows[i].scores.set(scorers[s].column, Some(v)),
            Err(e) => {
                log::warn!("{} on {}: {e}", scorers[s].scorer.name(), items[i].id);
                missing.push(MissingCell {
                    id: items[i].id.clone(),
                    column: scorers[s].column,
                    reason: e.to_string(),
                });
            }
        }
    }
    Ok(EvaluationReport::from_rows(system_name, columns, rows, missing))
}
