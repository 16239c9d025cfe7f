//! Instance assembly, the fine-tuning loop with dev-set checkpoint
//! selection, and the hyperparameter grid and ablation drivers.

mod adam;
mod drivers;

pub use adam::{Adam, AdamConfig};
pub use drivers::{ablate, grid_search, AblationAxis, AblationResult, AblationValue, EvalSet, GridResult, GridRow};

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::{AugmentedInstance, CorpusError, Dialogue};
use crate::evaluation::{score_outputs, Column, ColumnScorer, EvalItem, EvaluationError, Scorer};
use crate::model::{
    save_checkpoint, CheckpointMeta, ModelError, ProjectionHead, SummarizationModel, TrainableModel, Vocab,
};
use crate::objectives::{combined_loss_and_grad, Gradients, LossBreakdown, ObjectiveConfig, ObjectiveError, TrainingInstance};

#[derive(Debug, Error)]
pub enum TrainerError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("instance {id} has {found} {what}, need at least {k}")]
    Insufficient {
        id: String,
        what: &'static str,
        found: usize,
        k: usize,
    },
    #[error("instance {id} has no candidate targets")]
    EmptyCandidates { id: String },
    #[error("no training instances")]
    NoInstances,
    #[error("requested {requested} dialogues but the corpus has {available}")]
    TooManyDialogues { requested: usize, available: usize },
    #[error("non-finite loss at step {step} on instance {id}")]
    NonFinite { step: usize, id: String },
    #[error("step {step}, instance {id}: {source}")]
    Objective {
        step: usize,
        id: String,
        #[source]
        source: ObjectiveError,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("dev evaluation: {0}")]
    Evaluation(#[from] EvaluationError),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainerError + '_ {
    move |source| TrainerError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Hex SHA-256 of the canonical JSON form (object keys sorted).
pub fn config_hash<T: Serialize>(value: &T) -> String {
    let canonical = serde_json::to_value(value).expect("config serializes").to_string();
    let digest = Sha256::digest(canonical.as_bytes());
    hex::encode(&digest[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    /// Instances per optimizer step, accumulated one at a time.
    pub batch_size: usize,
    pub eval_every: usize,
    pub alpha_grid: Vec<f64>,
    pub theta_grid: Vec<f64>,
    pub k: usize,
    pub use_human_reference: bool,
    /// Use only the first n augmented dialogues.
    pub n_dialogues: Option<usize>,
    pub seed: u64,
    /// Score only the first n dev dialogues at each evaluation.
    pub dev_subsample: Option<usize>,
    pub optimizer: AdamConfig,
    /// Hidden widths of the projection head between the state and output widths.
    pub head_hidden: Vec<usize>,
    pub head_output: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 15_000,
            batch_size: 32,
            eval_every: 500,
            alpha_grid: vec![0.5, 1.0, 2.0],
            theta_grid: vec![15.0, 30.0],
            k: 3,
            use_human_reference: true,
            n_dialogues: None,
            seed: 0,
            dev_subsample: None,
            optimizer: AdamConfig::default(),
            head_hidden: vec![32],
            head_output: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainerError> {
        let bad = |m: String| Err(TrainerError::Config(m));
        if self.steps == 0 {
            return bad("steps must be positive".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.eval_every == 0 || self.steps % self.eval_every != 0 {
            return bad(format!("eval_every ({}) must divide steps ({})", self.eval_every, self.steps));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.alpha_grid.is_empty() || self.theta_grid.is_empty() {
            return bad("hyperparameter grids must be non-empty".into());
        }
        if self.head_output == 0 || self.head_hidden.contains(&0) {
            return bad("projection head widths must be positive".into());
        }
        if self.dev_subsample == Some(0) {
            return bad("dev_subsample must be positive".into());
        }
        self.optimizer.validate().map_err(TrainerError::Config)
    }
}

/// Vocabulary covering every text in the corpus, so all summaries tokenize.
pub fn corpus_vocab(augmented: &[AugmentedInstance], max_size: usize) -> Vocab {
    let texts = augmented.iter().flat_map(|a| {
        [&a.dialogue, &a.reference]
            .into_iter()
            .chain(&a.positives)
            .chain(&a.negatives)
            .map(String::as_str)
    });
    Vocab::build(texts, max_size)
}

/// The first `n` dialogues of the corpus, or all of them.
pub fn select_dialogues(augmented: &[AugmentedInstance], n: Option<usize>) -> Result<&[AugmentedInstance], TrainerError> {
    match n {
        Some(n) if n > augmented.len() => Err(TrainerError::TooManyDialogues {
            requested: n,
            available: augmented.len(),
        }),
        Some(n) => Ok(&augmented[..n]),
        None => Ok(augmented),
    }
}

/// Build one epoch's instances. Candidates are `P' = {R*} ∪ P*[..k]` (or
/// `P*[..k]` alone); a seeded uniform draw picks the target `R`, the other
/// candidates become `P`, and `N` is the first `k` negatives. Each epoch
/// draws from its own random stream, so targets rotate reproducibly.
pub fn build_training_instances(
    augmented: &[AugmentedInstance],
    k: usize,
    use_human_reference: bool,
    seed: u64,
    epoch: u64,
) -> Result<Vec<TrainingInstance<String>>, TrainerError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    augmented
        .iter()
        .map(|inst| {
            for (what, found) in [("positives", inst.positives.len()), ("negatives", inst.negatives.len())] {
                if found < k {
                    return Err(TrainerError::Insufficient {
                        id: inst.id.clone(),
                        what,
                        found,
                        k,
                    });
                }
            }
            let mut candidates: Vec<String> = Vec::with_capacity(k + 1);
            if use_human_reference {
                candidates.push(inst.reference.clone());
            }
            candidates.extend(inst.positives[..k].iter().cloned());
            if candidates.is_empty() {
                return Err(TrainerError::EmptyCandidates { id: inst.id.clone() });
            }
            let target = candidates.remove(rng.gen_range(0..candidates.len()));
            Ok(TrainingInstance {
                id: inst.id.clone(),
                dialogue: inst.to_dialogue()?,
                target,
                positives: candidates,
                negatives: inst.negatives[..k].to_vec(),
            })
        })
        .collect()
}

/// A trainable summarizer together with its projection head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Student<M> {
    pub model: M,
    pub head: ProjectionHead,
}

impl<M: TrainableModel> Student<M> {
    /// Pair `model` with a fresh head sized from `config`.
    pub fn new(model: M, config: &TrainConfig) -> Self {
        let mut dims = vec![model.state_dim()];
        dims.extend(&config.head_hidden);
        dims.push(config.head_output);
        let head = ProjectionHead::new(&dims, config.seed ^ 0x5eed);
        Self { model, head }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRecord {
    pub step: usize,
    pub dev_consistency: f64,
    pub path: Option<PathBuf>,
    pub config_hash: String,
    pub best: bool,
}

/// One line of the step log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub l_mle: f64,
    pub l_c: f64,
    pub l_s: f64,
    pub total: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainOutcome {
    pub best: CheckpointRecord,
    pub records: Vec<CheckpointRecord>,
    pub step_log: Vec<StepLog>,
}

/// Dialogues used for checkpoint selection and the scorer that ranks them.
pub struct DevSet<'a> {
    pub dialogues: &'a [Dialogue],
    pub scorer: &'a dyn Scorer,
    pub parallelism: usize,
}

/// Mean consistency (rescaled to [0, 1]) of greedy summaries on the dev set.
pub fn dev_consistency<M: SummarizationModel>(model: &M, dev: &DevSet<'_>, subsample: Option<usize>) -> Result<f64, TrainerError> {
    let n = subsample.unwrap_or(dev.dialogues.len()).min(dev.dialogues.len());
    let items = dev.dialogues[..n]
        .iter()
        .map(|d| {
            Ok(EvalItem {
                id: d.id.clone(),
                dialogue: d.raw_text.clone(),
                summary: model.generate(d)?.text,
                reference: None,
            })
        })
        .collect::<Result<Vec<_>, ModelError>>()?;
    let scorers = [ColumnScorer {
        column: Column::ConsistencyA,
        scorer: dev.scorer,
    }];
    let report = score_outputs("dev", &scorers, &items, dev.parallelism)?;
    let (lo, hi) = dev.scorer.range();
    Ok(report
        .aggregates
        .consistency_a
        .map(|v| if hi > lo { (v - lo) / (hi - lo) } else { v })
        .unwrap_or(0.0))
}

/// Where a run writes its artifacts: `<root>/<config_hash>/`.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
    pub config_hash: String,
}

impl RunDir {
    pub fn dir(&self) -> PathBuf {
        self.root.join(&self.config_hash)
    }
}

fn append_jsonl<T: Serialize>(path: &Path, row: &T) -> Result<(), TrainerError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path).map_err(io_err(path))?;
    let line = serde_json::to_string(row).expect("row serializes");
    writeln!(f, "{line}").map_err(io_err(path))
}

/// Index of the highest score; the earliest wins ties.
pub fn select_best(records: &[CheckpointRecord]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, r) in records.iter().enumerate() {
        if best.map_or(true, |b| r.dev_consistency > records[b].dev_consistency) {
            best = Some(i);
        }
    }
    best
}

/// Run `config.steps` optimizer steps over `augmented`, evaluating on the
/// dev set every `eval_every` steps. On return `student` holds the best
/// checkpoint's parameters.
pub fn train<M>(
    student: &mut Student<M>,
    augmented: &[AugmentedInstance],
    config: &TrainConfig,
    objective: &ObjectiveConfig,
    dev: &DevSet<'_>,
    run: Option<&RunDir>,
) -> Result<TrainOutcome, TrainerError>
where
    M: TrainableModel + Clone + Serialize,
{
    config.validate()?;
    objective.validate().map_err(|e| TrainerError::Config(e.to_string()))?;
    let corpus = select_dialogues(augmented, config.n_dialogues)?;
    if corpus.is_empty() {
        return Err(TrainerError::NoInstances);
    }
    let hash = match run {
        Some(r) => r.config_hash.clone(),
        None => config_hash(&(config, objective)),
    };
    let dir = run.map(RunDir::dir);
    if let Some(d) = &dir {
        fs::create_dir_all(d).map_err(io_err(d))?;
        for name in ["steps.jsonl", "records.jsonl"] {
            let p = d.join(name);
            if p.exists() {
                fs::remove_file(&p).map_err(io_err(&p))?;
            }
        }
    }

    let mut adam = Adam::new(config.optimizer.clone(), student.model.params().len() + student.head.params().len());
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut epoch: u64 = 0;
    let mut epoch_instances = Vec::new();
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;

    let mut step_log = Vec::with_capacity(config.steps);
    let mut records: Vec<CheckpointRecord> = Vec::new();
    let mut best_student: Option<Student<M>> = None;

    for step in 1..=config.steps {
        let mut grads = Gradients::for_student(&student.model, &student.head);
        let mut losses = Vec::with_capacity(config.batch_size);
        for _ in 0..config.batch_size {
            if cursor == order.len() {
                let built = build_training_instances(corpus, config.k, config.use_human_reference, config.seed, epoch)?;
                epoch_instances = built
                    .iter()
                    .map(|i| i.tokenize(&student.model))
                    .collect::<Result<Vec<_>, _>>()?;
                order = (0..epoch_instances.len()).collect();
                shuffle(&mut order, &mut order_rng);
                cursor = 0;
                epoch += 1;
            }
            let inst = &epoch_instances[order[cursor]];
            cursor += 1;
            let loss = combined_loss_and_grad(&student.model, &student.head, inst, objective, &mut grads).map_err(|source| {
                TrainerError::Objective {
                    step,
                    id: inst.id.clone(),
                    source,
                }
            })?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(TrainerError::NonFinite {
                    step,
                    id: inst.id.clone(),
                });
            }
            losses.push(loss);
        }
        grads.scale(1.0 / config.batch_size as f64);
        let mean: LossBreakdown = LossBreakdown::mean(&losses).expect("batch is non-empty");
        let lr = adam.step(student.model.params_mut(), student.head.params_mut(), &grads);
        let row = StepLog {
            step,
            l_mle: mean.l_mle,
            l_c: mean.l_c,
            l_s: mean.l_s,
            total: mean.total,
            lr,
        };
        if let Some(d) = &dir {
            append_jsonl(&d.join("steps.jsonl"), &StepLine { row: &row, config_hash: &hash })?;
        }
        step_log.push(row);

        if step % config.eval_every == 0 {
            let score = dev_consistency(&student.model, dev, config.dev_subsample)?;
            log::info!("step {step}: loss {:.4}, dev consistency {score:.4}", mean.total);
            let path = match &dir {
                Some(d) => {
                    let p = d.join(format!("step-{step}"));
                    let meta = CheckpointMeta {
                        step,
                        dev_consistency: score,
                        config_hash: hash.clone(),
                    };
                    save_checkpoint(&p, &*student, &meta)?;
                    Some(p)
                }
                None => None,
            };
            let record = CheckpointRecord {
                step,
                dev_consistency: score,
                path,
                config_hash: hash.clone(),
                best: false,
            };
            if let Some(d) = &dir {
                append_jsonl(&d.join("records.jsonl"), &record)?;
            }
            let improved = records.iter().all(|r| score > r.dev_consistency);
            records.push(record);
            if improved {
                best_student = Some(student.clone());
            }
        }
    }

    let best_idx = select_best(&records).expect("at least one evaluation ran");
    records[best_idx].best = true;
    if let Some(b) = best_student {
        *student = b;
    }
    if let Some(d) = &dir {
        let p = d.join("records.jsonl");
        let body: String = records
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect();
        fs::write(&p, body).map_err(io_err(&p))?;
        let p = d.join("best.json");
        fs::write(&p, serde_json::to_vec_pretty(&records[best_idx]).expect("record serializes")).map_err(io_err(&p))?;
    }
    Ok(TrainOutcome {
        best: records[best_idx].clone(),
        records,
        step_log,
    })
}

#[derive(Serialize)]
struct StepLine<'a> {
    #[serde(flatten)]
    row: &'a StepLog,
    config_hash: &'a str,
}

fn shuffle(xs: &mut [usize], rng: &mut ChaCha8Rng) {
    use rand::seq::SliceRandom;
    xs.shuffle(rng);
}

#[cfg(test)]
mod tests;
