//! The conditional sequence model every objective is written against.
//!
//! [`SummarizationModel`] is the inference surface (token log-probabilities,
//! last-layer decoder states, generation). [`TrainableModel`] adds a flat
//! parameter vector and a reverse pass so the objectives can produce exact
//! gradients.

mod checkpoint;
mod external;
mod head;
mod table;
mod toy;
mod vocab;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Dialogue;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use external::{ExternalModel, ModelTransport, ProcessTransport};
pub use head::{mean_pool, mean_pool_backward, project, HeadCache, ProjectionHead, SummaryRepresentation};
pub use table::{TableModel, TableRule};
pub use toy::{ToyConfig, ToyModel, ToyTrace};
pub use vocab::{word_pieces, Vocab, EOS, UNK};

pub type TokenId = usize;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("token `{0}` is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("token id {id} is outside the vocabulary of size {size}")]
    UnknownTokenId { id: TokenId, size: usize },
    #[error("sequence of {len} tokens exceeds the context length {max}")]
    ContextLength { len: usize, max: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("summary has no tokens")]
    EmptySummary,
    #[error("model backend: {0}")]
    Backend(String),
    #[error("checkpoint I/O on {path}: {message}")]
    Checkpoint { path: String, message: String },
}

/// A summary as the model sees it: token ids `x_1..x_m` plus the normalized text.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenizedSummary {
    pub tokens: Vec<TokenId>,
    pub text: String,
}

impl TokenizedSummary {
    /// Build from raw ids (tests and table-driven models).
    pub fn from_ids(tokens: Vec<TokenId>) -> Self {
        let text = tokens.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
        Self { tokens, text }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum DecodeStrategy {
    Greedy,
    Beam { width: usize },
    Sample { temperature: f64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub max_length: usize,
    #[serde(flatten)]
    pub strategy: DecodeStrategy,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            max_length: 64,
            strategy: DecodeStrategy::Greedy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub text: String,
    pub tokens: Vec<TokenId>,
    /// Set when decoding hit `max_length` before an end token.
    pub truncated: bool,
}

/// The summarization model `g`.
pub trait SummarizationModel {
    fn vocab(&self) -> &Vocab;

    /// Width of one decoder state vector.
    fn state_dim(&self) -> usize;

    fn decode_config(&self) -> &DecodeConfig;

    fn context_length(&self) -> Option<usize> {
        None
    }

    /// `P_g(. | D, prefix)` over the whole vocabulary.
    fn next_token_distribution(&self, dialogue: &Dialogue, prefix: &[TokenId]) -> Result<Vec<f64>, ModelError>;

    /// `log P_g(x_i | D, x_<i)` for every position.
    fn token_logprobs(&self, dialogue: &Dialogue, summary: &TokenizedSummary) -> Result<Vec<f64>, ModelError> {
        check_summary(self, summary)?;
        (0..summary.len())
            .map(|i| {
                let dist = self.next_token_distribution(dialogue, &summary.tokens[..i])?;
                Ok(dist[summary.tokens[i]].ln())
            })
            .collect()
    }

    /// One last-layer decoder vector per summary token, in token order.
    fn decoder_states(&self, dialogue: &Dialogue, summary: &TokenizedSummary) -> Result<Vec<Vec<f64>>, ModelError>;

    fn generate(&self, dialogue: &Dialogue) -> Result<Generation, ModelError> {
        decode(self, dialogue, self.decode_config())
    }

    fn tokenize(&self, text: &str) -> Result<TokenizedSummary, ModelError> {
        self.vocab().encode_summary(text)
    }
}

/// Forward-pass cache exposing what the objectives consume.
pub trait SequenceTrace {
    fn logprobs(&self) -> &[f64];
    fn states(&self) -> &[Vec<f64>];
}

/// A model whose parameters live in one flat vector with an exact reverse pass.
pub trait TrainableModel: SummarizationModel {
    type Trace: SequenceTrace;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    fn forward(&self, dialogue: &Dialogue, summary: &TokenizedSummary) -> Result<Self::Trace, ModelError>;

    /// Accumulate into `grads` the gradient of a scalar whose partials with
    /// respect to the trace's log-probabilities and states are given.
    fn backward(
        &self,
        trace: &Self::Trace,
        grad_logprobs: &[f64],
        grad_states: Option<&[Vec<f64>]>,
        grads: &mut [f64],
    );
}

pub(crate) fn check_summary<M: SummarizationModel + ?Sized>(model: &M, summary: &TokenizedSummary) -> Result<(), ModelError> {
    if summary.is_empty() {
        return Err(ModelError::EmptySummary);
    }
    let size = model.vocab().len();
    if let Some(&id) = summary.tokens.iter().find(|&&t| t >= size) {
        return Err(ModelError::UnknownTokenId { id, size });
    }
    if let Some(max) = model.context_length() {
        if summary.len() > max {
            return Err(ModelError::ContextLength { len: summary.len(), max });
        }
    }
    Ok(())
}

/// Decode a summary with any model under the given configuration.
pub fn decode<M: SummarizationModel + ?Sized>(
    model: &M,
    dialogue: &Dialogue,
    config: &DecodeConfig,
) -> Result<Generation, ModelError> {
    let eos = model.vocab().eos();
    let max_length = match model.context_length() {
        Some(ctx) => config.max_length.min(ctx),
        None => config.max_length,
    };
    let tokens = match config.strategy {
        DecodeStrategy::Greedy => {
            let mut tokens = Vec::new();
            while tokens.len() < max_length {
                let dist = model.next_token_distribution(dialogue, &tokens)?;
                let next = argmax(&dist);
                tokens.push(next);
                if Some(next) == eos {
                    break;
                }
            }
            tokens
        }
        DecodeStrategy::Sample { temperature, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut tokens = Vec::new();
            while tokens.len() < max_length {
                let dist = model.next_token_distribution(dialogue, &tokens)?;
                let next = sample(&dist, temperature, &mut rng);
                tokens.push(next);
                if Some(next) == eos {
                    break;
                }
            }
            tokens
        }
        DecodeStrategy::Beam { width } => beam_search(model, dialogue, width.max(1), max_length, eos)?,
    };
    let truncated = tokens.last().copied() != eos || eos.is_none();
    Ok(Generation {
        text: model.vocab().decode(&tokens),
        tokens,
        truncated,
    })
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn sample(dist: &[f64], temperature: f64, rng: &mut ChaCha8Rng) -> usize {
    let weights: Vec<f64> = if temperature > 0.0 {
        dist.iter().map(|p| p.powf(1.0 / temperature)).collect()
    } else {
        return argmax(dist);
    };
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    argmax(dist)
}

fn beam_search<M: SummarizationModel + ?Sized>(
    model: &M,
    dialogue: &Dialogue,
    width: usize,
    max_length: usize,
    eos: Option<TokenId>,
) -> Result<Vec<TokenId>, ModelError> {
    let mut beams: Vec<(Vec<TokenId>, f64)> = vec![(Vec::new(), 0.0)];
    let mut finished: Vec<(Vec<TokenId>, f64)> = Vec::new();
    for _ in 0..max_length {
        let mut candidates = Vec::new();
        for (prefix, score) in &beams {
            let dist = model.next_token_distribution(dialogue, prefix)?;
            for (tok, p) in dist.iter().enumerate() {
                if *p > 0.0 {
                    let mut next = prefix.clone();
                    next.push(tok);
                    candidates.push((next, score + p.ln()));
                }
            }
        }
        // Stable sort keeps lower token ids first on exact ties.
        candidates.sort_by(|a, b| b.1.total_cmp(&a.1));
        beams.clear();
        for cand in candidates.into_iter().take(width) {
            if cand.0.last().copied() == eos && eos.is_some() {
                finished.push(cand);
            } else {
                beams.push(cand);
            }
        }
        if beams.is_empty() {
            break;
        }
    }
    let pool = if finished.is_empty() { beams } else { finished };
    Ok(pool
        .into_iter()
        .max_by(|a, b| (a.1 / a.0.len() as f64).total_cmp(&(b.1 / b.0.len() as f64)))
        .map(|b| b.0)
        .unwrap_or_default())
}

pub(crate) fn softmax_in_place(xs: &mut [f64]) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in xs.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    for x in xs.iter_mut() {
        *x /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dialogue() -> Dialogue {
        Dialogue::parse("d", "A: hi there\nB: hello", None).unwrap()
    }

    #[test]
    fn greedy_truncates_without_end_token() {
        let vocab = Vocab::from_tokens(["a", "b"]);
        let model = TableModel::new(vocab, TableRule::Uniform);
        let out = decode(&model, &dialogue(), &DecodeConfig { max_length: 5, strategy: DecodeStrategy::Greedy }).unwrap();
        assert!(out.truncated);
        assert_eq!(out.tokens.len(), 5);
    }

    #[test]
    fn beam_and_sample_terminate() {
        let vocab = Vocab::from_tokens([EOS, "hi", "there", "hello", "b", "a", ":"]);
        let model = TableModel::new(vocab, TableRule::CopyFirstTurn);
        for strategy in [
            DecodeStrategy::Beam { width: 3 },
            DecodeStrategy::Sample { temperature: 1.0, seed: 3 },
        ] {
            let out = decode(&model, &dialogue(), &DecodeConfig { max_length: 10, strategy }).unwrap();
            assert_eq!(out.text, "hi there");
            assert!(!out.truncated);
        }
    }
}
