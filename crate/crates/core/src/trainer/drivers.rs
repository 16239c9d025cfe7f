use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{config_hash, select_dialogues, train, DevSet, RunDir, Student, TrainConfig, TrainerError};
use crate::corpus::{AugmentedInstance, Dialogue};
use crate::evaluation::{build_report, score_outputs, ColumnScorer, EvalItem, EvaluationReport, RenderedReport};
use crate::model::{ModelError, TrainableModel};
use crate::objectives::{Mode, ObjectiveConfig};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridRow {
    pub alpha: f64,
    /// Only searched in margin mode.
    pub theta: Option<f64>,
    pub best_dev_consistency: Option<f64>,
    pub best_step: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridResult {
    pub rows: Vec<GridRow>,
    /// Row with the highest dev consistency; earliest on ties.
    pub best: Option<usize>,
}

/// One full training run per grid point. The alpha grid applies to the
/// contrastive modes and the theta grid to margin mode only; other modes
/// train once. A failing cell is recorded and the search continues.
pub fn grid_search<M, F>(
    factory: F,
    augmented: &[AugmentedInstance],
    base: &TrainConfig,
    objective: &ObjectiveConfig,
    dev: &DevSet<'_>,
    run_root: Option<&Path>,
) -> Result<GridResult, TrainerError>
where
    M: TrainableModel + Clone + Serialize,
    F: Fn(&TrainConfig) -> Student<M>,
{
    base.validate()?;
    let alphas: Vec<f64> = if objective.mode.is_contrastive() {
        base.alpha_grid.clone()
    } else {
        vec![objective.alpha]
    };
    let thetas: Vec<Option<f64>> = if objective.mode == Mode::MarginContrast {
        base.theta_grid.iter().copied().map(Some).collect()
    } else {
        vec![None]
    };
    let mut rows = Vec::new();
    for &alpha in &alphas {
        for &theta in &thetas {
            let cell = ObjectiveConfig {
                alpha,
                theta: theta.unwrap_or(objective.theta),
                ..*objective
            };
            let run = run_root.map(|root| RunDir {
                root: root.to_path_buf(),
                config_hash: config_hash(&(base, &cell)),
            });
            let mut student = factory(base);
            let row = match train(&mut student, augmented, base, &cell, dev, run.as_ref()) {
                Ok(out) => GridRow {
                    alpha,
                    theta,
                    best_dev_consistency: Some(out.best.dev_consistency),
                    best_step: Some(out.best.step),
                    error: None,
                },
                Err(e) => {
                    log::warn!("grid cell alpha={alpha} theta={theta:?} failed: {e}");
                    GridRow {
                        alpha,
                        theta,
                        best_dev_consistency: None,
                        best_step: None,
                        error: Some(e.to_string()),
                    }
                }
            };
            rows.push(row);
        }
    }
    let mut best: Option<usize> = None;
    for (i, r) in rows.iter().enumerate() {
        if let Some(s) = r.best_dev_consistency {
            if best.map_or(true, |b| s > rows[b].best_dev_consistency.unwrap_or(f64::NEG_INFINITY)) {
                best = Some(i);
            }
        }
    }
    Ok(GridResult { rows, best })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationAxis {
    NDialogues,
    K,
    HumanReference,
}

impl FromStr for AblationAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "n_dialogues" => Ok(Self::NDialogues),
            "k" => Ok(Self::K),
            "human_reference" => Ok(Self::HumanReference),
            other => Err(format!("unknown ablation axis `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AblationValue {
    Count(usize),
    Flag(bool),
}

impl AblationValue {
    /// Parse a command-line value for `axis`.
    pub fn parse(axis: AblationAxis, s: &str) -> Result<Self, String> {
        match axis {
            AblationAxis::HumanReference => match s.to_ascii_lowercase().as_str() {
                "true" | "y" | "yes" => Ok(Self::Flag(true)),
                "false" | "n" | "no" => Ok(Self::Flag(false)),
                _ => Err(format!("`{s}` is not a boolean")),
            },
            _ => s.parse().map(Self::Count).map_err(|_| format!("`{s}` is not a count")),
        }
    }
}

impl fmt::Display for AblationValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AblationValue::Count(n) => write!(f, "{n}"),
            AblationValue::Flag(true) => f.write_str("Y"),
            AblationValue::Flag(false) => f.write_str("N"),
        }
    }
}

fn row_label(axis: AblationAxis, value: AblationValue) -> String {
    match axis {
        AblationAxis::NDialogues => format!("#Dialog={value}"),
        AblationAxis::K => format!("k={value}"),
        AblationAxis::HumanReference => format!("R*={value}"),
    }
}

fn apply(axis: AblationAxis, value: AblationValue, base: &TrainConfig, augmented: &[AugmentedInstance]) -> Result<TrainConfig, TrainerError> {
    let mut cfg = base.clone();
    match (axis, value) {
        (AblationAxis::NDialogues, AblationValue::Count(n)) => {
            select_dialogues(augmented, Some(n))?;
            cfg.n_dialogues = Some(n);
        }
        (AblationAxis::K, AblationValue::Count(k)) => {
            let available = augmented
                .iter()
                .map(|a| a.positives.len().min(a.negatives.len()))
                .min()
                .unwrap_or(0);
            if k == 0 || k > available {
                return Err(TrainerError::Config(format!("k={k} outside 1..={available} for this corpus")));
            }
            cfg.k = k;
        }
        (AblationAxis::HumanReference, AblationValue::Flag(b)) => cfg.use_human_reference = b,
        (axis, value) => return Err(TrainerError::Config(format!("value {value} does not fit axis {axis:?}"))),
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Held-out dialogues and the scorer roster for ablation rows.
pub struct EvalSet<'a> {
    pub dialogues: &'a [Dialogue],
    pub scorers: &'a [ColumnScorer<'a>],
    pub parallelism: usize,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub axis: AblationAxis,
    pub values: Vec<AblationValue>,
    pub reports: Vec<EvaluationReport>,
    pub table: RenderedReport,
}

/// Train and evaluate once per axis value; rows are values, columns are
/// the quality dimensions.
#[allow(clippy::too_many_arguments)]
pub fn ablate<M, F>(
    factory: F,
    augmented: &[AugmentedInstance],
    axis: AblationAxis,
    values: &[AblationValue],
    base: &TrainConfig,
    objective: &ObjectiveConfig,
    dev: &DevSet<'_>,
    test: &EvalSet<'_>,
    run_root: Option<&Path>,
) -> Result<AblationResult, TrainerError>
where
    M: TrainableModel + Clone + Serialize,
    F: Fn(&TrainConfig) -> Student<M>,
{
    if values.is_empty() {
        return Err(TrainerError::Config("no ablation values".into()));
    }
    // Validate every value before any training starts.
    let configs = values
        .iter()
        .map(|&v| apply(axis, v, base, augmented))
        .collect::<Result<Vec<_>, _>>()?;
    let mut reports = Vec::with_capacity(values.len());
    for (&value, cfg) in values.iter().zip(&configs) {
        let run = run_root.map(|root| RunDir {
            root: root.to_path_buf(),
            config_hash: config_hash(&(cfg, objective)),
        });
        let mut student = factory(cfg);
        train(&mut student, augmented, cfg, objective, dev, run.as_ref())?;
        let items = test
            .dialogues
            .iter()
            .map(|d| {
                Ok(EvalItem {
                    id: d.id.clone(),
                    dialogue: d.raw_text.clone(),
                    summary: student.model.generate(d)?.text,
                    reference: d.reference.clone(),
                })
            })
            .collect::<Result<Vec<_>, ModelError>>()?;
        reports.push(score_outputs(&row_label(axis, value), test.scorers, &items, test.parallelism)?);
    }
    let table = build_report(&reports, &[])?;
    Ok(AblationResult {
        axis,
        values: values.to_vec(),
        reports,
        table,
    })
}
