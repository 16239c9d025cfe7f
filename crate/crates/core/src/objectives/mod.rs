//! Training objectives: cross-entropy on a single target, sequence-level
//! distillation over several references, the length-normalized sequence
//! score, the margin and pairwise contrastive losses, and their combination
//! `l = l_mle + alpha * l_c`.
//!
//! Every function here has a value-only form that works with any
//! [`SummarizationModel`]. [`combined_loss_and_grad`] additionally
//! back-propagates through a [`TrainableModel`] and its projection head.

pub mod functional;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dialogue;
use crate::model::{
    mean_pool, mean_pool_backward, project, ModelError, ProjectionHead, SequenceTrace, SummarizationModel,
    SummaryRepresentation, TokenizedSummary, TrainableModel,
};
use functional::SetMember;

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("summary has no tokens")]
    EmptySummary,
    #[error("positive set is empty")]
    EmptyPositives,
    #[error("negative set is empty")]
    EmptyNegatives,
    #[error("reference set is empty")]
    EmptyReferences,
    #[error("representation of {0:?} has zero norm; cosine similarity is undefined")]
    ZeroNorm(SetMember),
    #[error("representation of summary {text:?} has zero norm; cosine similarity is undefined")]
    ZeroNormSummary { text: String },
    #[error("invalid objective config: {0}")]
    InvalidConfig(String),
    #[error("instance {id} is not usable with mode {mode}: {reason}")]
    ModeMismatch { id: String, mode: Mode, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Mle,
    SeqDistill,
    MarginContrast,
    PairContrast,
}

impl Mode {
    pub fn is_contrastive(self) -> bool {
        matches!(self, Mode::MarginContrast | Mode::PairContrast)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Mle => "mle",
            Mode::SeqDistill => "seq_distill",
            Mode::MarginContrast => "margin_contrast",
            Mode::PairContrast => "pair_contrast",
        })
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.replace('-', "_").as_str() {
            "mle" => Ok(Mode::Mle),
            "seq_distill" => Ok(Mode::SeqDistill),
            "margin_contrast" => Ok(Mode::MarginContrast),
            "pair_contrast" => Ok(Mode::PairContrast),
            other => Err(format!("unknown objective mode `{other}`")),
        }
    }
}

/// How each reference's NLL enters the distillation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillNormalization {
    /// Summed token NLL per reference.
    #[default]
    Sequence,
    /// Mean token NLL per reference.
    TokenMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectiveConfig {
    pub mode: Mode,
    pub alpha: f64,
    pub theta: f64,
    pub tau: f64,
    pub distill_normalization: DistillNormalization,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Mle,
            alpha: 1.0,
            theta: 15.0,
            tau: 1.0,
            distill_normalization: DistillNormalization::Sequence,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let bad = |msg: String| Err(ObjectiveError::InvalidConfig(msg));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be non-negative, got {}", self.alpha));
        }
        if !(self.theta >= 0.0 && self.theta.is_finite()) {
            return bad(format!("theta must be non-negative, got {}", self.theta));
        }
        Ok(())
    }
}

/// Per-instance (or batch-averaged) loss components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_mle: f64,
    pub l_c: f64,
    pub l_s: f64,
    pub total: f64,
    pub config: ObjectiveConfig,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [self.l_mle, self.l_c, self.l_s, self.total].iter().all(|v| v.is_finite())
    }

    /// Component-wise mean; `None` for an empty slice.
    pub fn mean(items: &[LossBreakdown]) -> Option<LossBreakdown> {
        let first = items.first()?;
        let n = items.len() as f64;
        let sum = |f: fn(&LossBreakdown) -> f64| items.iter().map(f).sum::<f64>() / n;
        Some(LossBreakdown {
            l_mle: sum(|b| b.l_mle),
            l_c: sum(|b| b.l_c),
            l_s: sum(|b| b.l_s),
            total: sum(|b| b.total),
            config: first.config,
        })
    }
}

/// `(D, R, P, N)`: dialogue, cross-entropy target, contrastive positives and negatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance<S = TokenizedSummary> {
    pub id: String,
    pub dialogue: Dialogue,
    pub target: S,
    pub positives: Vec<S>,
    pub negatives: Vec<S>,
}

impl TrainingInstance<String> {
    pub fn tokenize<M: SummarizationModel + ?Sized>(&self, model: &M) -> Result<TrainingInstance, ModelError> {
        let tok = |xs: &[String]| xs.iter().map(|s| model.tokenize(s)).collect::<Result<Vec<_>, _>>();
        Ok(TrainingInstance {
            id: self.id.clone(),
            dialogue: self.dialogue.clone(),
            target: model.tokenize(&self.target)?,
            positives: tok(&self.positives)?,
            negatives: tok(&self.negatives)?,
        })
    }
}

/// Cross-entropy of one target: `-sum_i log P_g(R_i | D, R_<i)`.
pub fn mle_loss<M: SummarizationModel + ?Sized>(
    model: &M,
    dialogue: &Dialogue,
    target: &TokenizedSummary,
) -> Result<f64, ObjectiveError> {
    Ok(functional::sequence_nll(&model.token_logprobs(dialogue, target)?))
}

/// Mean sequence NLL over a reference set.
pub fn seq_distill_loss<M: SummarizationModel + ?Sized>(
    model: &M,
    dialogue: &Dialogue,
    references: &[TokenizedSummary],
) -> Result<f64, ObjectiveError> {
    seq_distill_loss_with(model, dialogue, references, DistillNormalization::Sequence)
}

pub fn seq_distill_loss_with<M: SummarizationModel + ?Sized>(
    model: &M,
    dialogue: &Dialogue,
    references: &[TokenizedSummary],
    normalization: DistillNormalization,
) -> Result<f64, ObjectiveError> {
    if references.is_empty() {
        return Err(ObjectiveError::EmptyReferences);
    }
    let mut total = 0.0;
    for r in references {
        let lp = model.token_logprobs(dialogue, r)?;
        total += match normalization {
            DistillNormalization::Sequence => functional::sequence_nll(&lp),
            DistillNormalization::TokenMean => functional::sequence_nll(&lp) / lp.len() as f64,
        };
    }
    Ok(total / references.len() as f64)
}

/// Length-normalized log-likelihood `S(X) = (1/m) sum_i log P_g(x_i | D, X_<i)`.
pub fn sequence_score<M: SummarizationModel + ?Sized>(
    model: &M,
    dialogue: &Dialogue,
    summary: &TokenizedSummary,
) -> Result<f64, ObjectiveError> {
    if summary.is_empty() {
        return Err(ObjectiveError::EmptySummary);
    }
    functional::length_normalized_score(&model.token_logprobs(dialogue, summary)?)
}

/// `max{0, theta + max S(N) - min S(P)}`.
pub fn margin_contrast_loss<M: SummarizationModel + ?Sized>(
    model: &M,
    dialogue: &Dialogue,
    positives: &[TokenizedSummary],
    negatives: &[TokenizedSummary],
    theta: f64,
) -> Result<f64, ObjectiveError> {
    if positives.is_empty() {
        return Err(ObjectiveError::EmptyPositives);
    }
    if negatives.is_empty() {
        return Err(ObjectiveError::EmptyNegatives);
    }
    let scores = |xs: &[TokenizedSummary]| {
        xs.iter()
            .map(|x| sequence_score(model, dialogue, x))
            .collect::<Result<Vec<_>, _>>()
    };
    Ok(functional::margin_hinge(&scores(positives)?, &scores(negatives)?, theta)?.value)
}

/// Pairwise contrastive loss over precomputed representations.
pub fn pair_contrast_loss(
    positives: &[SummaryRepresentation],
    negatives: &[SummaryRepresentation],
    tau: f64,
) -> Result<f64, ObjectiveError> {
    let vecs = |xs: &[SummaryRepresentation]| xs.iter().map(|r| r.vector.clone()).collect::<Vec<_>>();
    Ok(functional::pair_contrast(&vecs(positives), &vecs(negatives), tau)?.value)
}

/// Head applied to the mean of the summary's decoder states.
pub fn summary_representation<M: SummarizationModel + ?Sized>(
    model: &M,
    head: &ProjectionHead,
    dialogue: &Dialogue,
    summary: &TokenizedSummary,
) -> Result<SummaryRepresentation, ObjectiveError> {
    let pooled = mean_pool(&model.decoder_states(dialogue, summary)?)?;
    Ok(project(head, &pooled)?)
}

fn mismatch(instance: &TrainingInstance, mode: Mode, reason: &str) -> ObjectiveError {
    ObjectiveError::ModeMismatch {
        id: instance.id.clone(),
        mode,
        reason: reason.into(),
    }
}

/// Positives actually used by the contrastive term. Margin mode falls back to
/// the target when no other positive is left.
fn contrastive_positives<'a>(instance: &'a TrainingInstance, mode: Mode) -> Result<Vec<&'a TokenizedSummary>, ObjectiveError> {
    if instance.negatives.is_empty() {
        return Err(mismatch(instance, mode, "no negatives"));
    }
    match mode {
        Mode::MarginContrast if instance.positives.is_empty() => Ok(vec![&instance.target]),
        Mode::PairContrast if instance.positives.is_empty() => Err(mismatch(instance, mode, "no positives to pair")),
        _ => Ok(instance.positives.iter().collect()),
    }
}

fn zero_norm_summary(err: ObjectiveError, pos: &[&TokenizedSummary], neg: &[TokenizedSummary]) -> ObjectiveError {
    match err {
        ObjectiveError::ZeroNorm(SetMember::Positive(i)) => ObjectiveError::ZeroNormSummary { text: pos[i].text.clone() },
        ObjectiveError::ZeroNorm(SetMember::Negative(i)) => ObjectiveError::ZeroNormSummary { text: neg[i].text.clone() },
        other => other,
    }
}

/// Loss for one instance under `config.mode`.
pub fn combined_loss<M: SummarizationModel + ?Sized>(
    model: &M,
    head: Option<&ProjectionHead>,
    instance: &TrainingInstance,
    config: &ObjectiveConfig,
) -> Result<LossBreakdown, ObjectiveError> {
    config.validate()?;
    let dialogue = &instance.dialogue;
    let l_mle = mle_loss(model, dialogue, &instance.target)?;
    let mut out = LossBreakdown {
        l_mle,
        l_c: 0.0,
        l_s: 0.0,
        total: l_mle,
        config: *config,
    };
    match config.mode {
        Mode::Mle => {}
        Mode::SeqDistill => {
            let refs: Vec<TokenizedSummary> = std::iter::once(instance.target.clone())
                .chain(instance.positives.iter().cloned())
                .collect();
            out.l_s = seq_distill_loss_with(model, dialogue, &refs, config.distill_normalization)?;
            out.total = out.l_s;
        }
        Mode::MarginContrast => {
            let pos: Vec<TokenizedSummary> = contrastive_positives(instance, config.mode)?.into_iter().cloned().collect();
            out.l_c = margin_contrast_loss(model, dialogue, &pos, &instance.negatives, config.theta)?;
            out.total = l_mle + config.alpha * out.l_c;
        }
        Mode::PairContrast => {
            let head = head.ok_or_else(|| mismatch(instance, config.mode, "a projection head is required"))?;
            let pos = contrastive_positives(instance, config.mode)?;
            let reps = |xs: &mut dyn Iterator<Item = &TokenizedSummary>| {
                xs.map(|s| summary_representation(model, head, dialogue, s)).collect::<Result<Vec<_>, _>>()
            };
            let rp = reps(&mut pos.iter().copied())?;
            let rn = reps(&mut instance.negatives.iter())?;
            out.l_c = pair_contrast_loss(&rp, &rn, config.tau).map_err(|e| zero_norm_summary(e, &pos, &instance.negatives))?;
            out.total = l_mle + config.alpha * out.l_c;
        }
    }
    Ok(out)
}

/// Flat gradient buffers for a model and its projection head.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub model: Vec<f64>,
    pub head: Vec<f64>,
}

impl Gradients {
    pub fn zeros(model_params: usize, head_params: usize) -> Self {
        Self {
            model: vec![0.0; model_params],
            head: vec![0.0; head_params],
        }
    }

    pub fn for_student<M: TrainableModel>(model: &M, head: &ProjectionHead) -> Self {
        Self::zeros(model.params().len(), head.params().len())
    }

    pub fn scale(&mut self, factor: f64) {
        self.model.iter_mut().chain(self.head.iter_mut()).for_each(|g| *g *= factor);
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.model.iter().chain(&self.head)
    }
}

/// [`combined_loss`] plus its exact gradient, accumulated into `grads`.
pub fn combined_loss_and_grad<M: TrainableModel>(
    model: &M,
    head: &ProjectionHead,
    instance: &TrainingInstance,
    config: &ObjectiveConfig,
    grads: &mut Gradients,
) -> Result<LossBreakdown, ObjectiveError> {
    config.validate()?;
    let dialogue = &instance.dialogue;
    let target = model.forward(dialogue, &instance.target)?;
    let l_mle = functional::sequence_nll(target.logprobs());
    let mut out = LossBreakdown {
        l_mle,
        l_c: 0.0,
        l_s: 0.0,
        total: l_mle,
        config: *config,
    };
    let mle_grad = |m: usize| vec![-1.0; m];
    match config.mode {
        Mode::Mle => {
            model.backward(&target, &mle_grad(target.logprobs().len()), None, &mut grads.model);
        }
        Mode::SeqDistill => {
            let n = 1 + instance.positives.len();
            let mut traces = vec![target];
            for p in &instance.positives {
                traces.push(model.forward(dialogue, p)?);
            }
            let mut total = 0.0;
            for t in &traces {
                let m = t.logprobs().len() as f64;
                let (value, weight) = match config.distill_normalization {
                    DistillNormalization::Sequence => (functional::sequence_nll(t.logprobs()), 1.0),
                    DistillNormalization::TokenMean => (functional::sequence_nll(t.logprobs()) / m, 1.0 / m),
                };
                total += value;
                let g = vec![-weight / n as f64; t.logprobs().len()];
                model.backward(t, &g, None, &mut grads.model);
            }
            out.l_s = total / n as f64;
            out.total = out.l_s;
        }
        Mode::MarginContrast => {
            model.backward(&target, &mle_grad(target.logprobs().len()), None, &mut grads.model);
            let pos = contrastive_positives(instance, config.mode)?;
            let pos_traces = pos.iter().map(|s| model.forward(dialogue, s)).collect::<Result<Vec<_>, _>>()?;
            let neg_traces = instance
                .negatives
                .iter()
                .map(|s| model.forward(dialogue, s))
                .collect::<Result<Vec<_>, _>>()?;
            let score = |t: &M::Trace| functional::length_normalized_score(t.logprobs());
            let sp = pos_traces.iter().map(score).collect::<Result<Vec<_>, _>>()?;
            let sn = neg_traces.iter().map(score).collect::<Result<Vec<_>, _>>()?;
            let margin = functional::margin_hinge(&sp, &sn, config.theta)?;
            for (traces, g_scores) in [(&pos_traces, &margin.grad_positive), (&neg_traces, &margin.grad_negative)] {
                for (t, &g) in traces.iter().zip(g_scores.iter()) {
                    if g != 0.0 {
                        let m = t.logprobs().len() as f64;
                        model.backward(t, &vec![config.alpha * g / m; t.logprobs().len()], None, &mut grads.model);
                    }
                }
            }
            out.l_c = margin.value;
            out.total = l_mle + config.alpha * out.l_c;
        }
        Mode::PairContrast => {
            model.backward(&target, &mle_grad(target.logprobs().len()), None, &mut grads.model);
            let pos = contrastive_positives(instance, config.mode)?;
            let summaries: Vec<&TokenizedSummary> = pos.iter().copied().chain(instance.negatives.iter()).collect();
            let mut traces = Vec::with_capacity(summaries.len());
            let mut caches = Vec::with_capacity(summaries.len());
            let mut reps = Vec::with_capacity(summaries.len());
            for s in &summaries {
                let t = model.forward(dialogue, s)?;
                let pooled = mean_pool(t.states())?;
                let (rep, cache) = head.forward(&pooled)?;
                traces.push(t);
                caches.push(cache);
                reps.push(rep);
            }
            let (rp, rn) = reps.split_at(pos.len());
            let pc = functional::pair_contrast(rp, rn, config.tau).map_err(|e| zero_norm_summary(e, &pos, &instance.negatives))?;
            for (i, g_rep) in pc.grad_positive.iter().chain(&pc.grad_negative).enumerate() {
                let g_rep: Vec<f64> = g_rep.iter().map(|g| config.alpha * g).collect();
                if g_rep.iter().all(|g| *g == 0.0) {
                    continue;
                }
                let g_pooled = head.backward(&caches[i], &g_rep, &mut grads.head);
                let g_states = mean_pool_backward(&g_pooled, traces[i].states().len());
                let zeros = vec![0.0; traces[i].logprobs().len()];
                model.backward(&traces[i], &zeros, Some(&g_states), &mut grads.model);
            }
            out.l_c = pc.value;
            out.total = l_mle + config.alpha * out.l_c;
        }
    }
    Ok(out)
}
