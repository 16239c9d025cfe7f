use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{io_error, EvaluationError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Consistent,
    Inconsistent,
}

impl Label {
    /// consistent = 1, inconsistent = 0.
    pub fn value(self) -> f64 {
        match self {
            Label::Consistent => 1.0,
            Label::Inconsistent => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaEvalRecord {
    pub dialogue: String,
    pub output_text: String,
    pub human_label: Label,
    pub metric_scores: BTreeMap<String, f64>,
}

/// An annotated record as stored on disk: either an explicit label or the
/// list of error categories the annotators assigned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawMetaEvalRecord {
    pub dialogue: String,
    pub output_text: String,
    #[serde(default)]
    pub human_label: Option<Label>,
    #[serde(default)]
    pub error_categories: Vec<String>,
    #[serde(default)]
    pub metric_scores: BTreeMap<String, f64>,
}

fn category_key(category: &str) -> String {
    let lower = category.trim().to_lowercase().replace(['-', '_'], " ");
    let words: Vec<&str> = lower.split_whitespace().filter(|w| *w != "error" && *w != "errors").collect();
    words.join(" ")
}

fn is_no_error(key: &str) -> bool {
    matches!(key, "" | "none" | "no" | "no error" | "correct" | "consistent")
}

fn is_link_or_coref(key: &str) -> bool {
    matches!(
        key,
        "link" | "linke" | "linking" | "coreference" | "coref" | "corefe" | "link coreference"
    )
}

/// Any error category makes a record inconsistent. With
/// `exclude_link_coref`, records carrying a link or coreference error are
/// dropped instead (`None`).
pub fn binarize(raw: RawMetaEvalRecord, exclude_link_coref: bool) -> Option<MetaEvalRecord> {
    let keys: Vec<String> = raw
        .error_categories
        .iter()
        .map(|c| category_key(c))
        .filter(|k| !is_no_error(k))
        .collect();
    if exclude_link_coref && keys.iter().any(|k| is_link_or_coref(k)) {
        return None;
    }
    let human_label = raw.human_label.unwrap_or(if keys.is_empty() {
        Label::Consistent
    } else {
        Label::Inconsistent
    });
    Some(MetaEvalRecord {
        dialogue: raw.dialogue,
        output_text: raw.output_text,
        human_label,
        metric_scores: raw.metric_scores,
    })
}

/// Load annotated JSONL and binarize it.
pub fn load_meta_eval(path: &Path, exclude_link_coref: bool) -> Result<Vec<MetaEvalRecord>, EvaluationError> {
    let body = fs::read_to_string(path).map_err(io_error(path))?;
    let mut out = Vec::new();
    for (i, line) in body.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawMetaEvalRecord = serde_json::from_str(line).map_err(|e| EvaluationError::BadRecord {
            line: i + 1,
            reason: e.to_string(),
        })?;
        out.extend(binarize(raw, exclude_link_coref));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Correlation {
    pub spearman: f64,
    pub pearson: f64,
    pub n: usize,
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, EvaluationError> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 {
        return Err(EvaluationError::UndefinedCorrelation("scores"));
    }
    if syy == 0.0 {
        return Err(EvaluationError::UndefinedCorrelation("labels"));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, EvaluationError> {
    pearson(&average_ranks(x), &average_ranks(y))
}

/// Correlate `metric` with the binary human labels.
pub fn meta_evaluate(records: &[MetaEvalRecord], metric: &str) -> Result<Correlation, EvaluationError> {
    if records.len() < 3 {
        return Err(EvaluationError::TooFewRecords { n: records.len() });
    }
    let scores = records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            r.metric_scores.get(metric).copied().ok_or_else(|| EvaluationError::MissingMetric {
                record: i,
                metric: metric.to_string(),
            })
        })
        .collect::<Result<Vec<f64>, _>>()?;
    let labels: Vec<f64> = records.iter().map(|r| r.human_label.value()).collect();
    Ok(Correlation {
        spearman: spearman(&scores, &labels)?,
        pearson: pearson(&scores, &labels)?,
        n: records.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetaEvalRow {
    pub dataset: String,
    pub metric: String,
    pub correlation: Correlation,
}

pub fn write_meta_eval_tsv(rows: &[MetaEvalRow], path: &Path) -> Result<(), EvaluationError> {
    let mut out = String::from("dataset\tmetric\tspearman\tpearson\tn\n");
    for r in rows {
        let c = r.correlation;
        let _ = writeln!(out, "{}\t{}\t{:.4}\t{:.4}\t{}", r.dataset, r.metric, c.spearman, c.pearson, c.n);
    }
    fs::write(path, out).map_err(io_error(path))
}
