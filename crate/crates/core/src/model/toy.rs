//! A one-layer conditional decoder small enough to inspect by hand.
//!
//! The encoder mean-pools source token embeddings into a context vector `c`.
//! Position `i` of the decoder computes
//!
//! ```text
//! s_i = tanh(W_ctx c + W_prev e(x_{i-1}) + b)
//! P(. | D, x_<i) = softmax(W_out s_i + b_out)
//! ```
//!
//! with `x_0` a dedicated begin-of-sequence embedding. `s_i` is the
//! last-layer decoder state.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    check_summary, softmax_in_place, DecodeConfig, ModelError, SequenceTrace, SummarizationModel, TokenId,
    TokenizedSummary, TrainableModel, Vocab,
};
use crate::corpus::Dialogue;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    pub embed_dim: usize,
    pub max_positions: usize,
    pub init_scale: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            embed_dim: 16,
            max_positions: 64,
            init_scale: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    vocab: usize,
    dim: usize,
    emb: usize,
    w_ctx: usize,
    w_prev: usize,
    bias: usize,
    w_out: usize,
    b_out: usize,
    total: usize,
}

impl Layout {
    fn new(vocab: usize, dim: usize) -> Self {
        let emb = 0;
        let w_ctx = emb + (vocab + 1) * dim;
        let w_prev = w_ctx + dim * dim;
        let bias = w_prev + dim * dim;
        let w_out = bias + dim;
        let b_out = w_out + vocab * dim;
        let total = b_out + vocab;
        Self {
            vocab,
            dim,
            emb,
            w_ctx,
            w_prev,
            bias,
            w_out,
            b_out,
            total,
        }
    }

    fn bos(&self) -> usize {
        self.vocab
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyModel {
    config: ToyConfig,
    vocab: Vocab,
    decode: DecodeConfig,
    params: Vec<f64>,
}

/// Cached activations of one teacher-forced pass.
#[derive(Debug, Clone)]
pub struct ToyTrace {
    source: Vec<TokenId>,
    context: Vec<f64>,
    inputs: Vec<usize>,
    targets: Vec<TokenId>,
    states: Vec<Vec<f64>>,
    probs: Vec<Vec<f64>>,
    logprobs: Vec<f64>,
}

impl SequenceTrace for ToyTrace {
    fn logprobs(&self) -> &[f64] {
        &self.logprobs
    }

    fn states(&self) -> &[Vec<f64>] {
        &self.states
    }
}

fn matvec_add(params: &[f64], offset: usize, rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
    for (r, o) in out.iter_mut().enumerate().take(rows) {
        let row = &params[offset + r * cols..offset + (r + 1) * cols];
        *o += row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
    }
}

impl ToyModel {
    pub fn new(vocab: Vocab, config: ToyConfig, decode: DecodeConfig) -> Self {
        let layout = Layout::new(vocab.len(), config.embed_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = vec![0.0; layout.total];
        let scale = config.init_scale;
        let mut fill = |range: std::ops::Range<usize>| {
            for p in &mut params[range] {
                *p = rng.gen_range(-scale..=scale);
            }
        };
        fill(layout.emb..layout.bias);
        fill(layout.w_out..layout.b_out);
        Self {
            config,
            vocab,
            decode,
            params,
        }
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn set_decode_config(&mut self, decode: DecodeConfig) {
        self.decode = decode;
    }

    fn layout(&self) -> Layout {
        Layout::new(self.vocab.len(), self.config.embed_dim)
    }

    fn embedding(&self, row: usize) -> &[f64] {
        let l = self.layout();
        &self.params[l.emb + row * l.dim..l.emb + (row + 1) * l.dim]
    }

    fn context(&self, dialogue: &Dialogue) -> (Vec<TokenId>, Vec<f64>) {
        let source = self.vocab.encode_source(&dialogue.raw_text);
        let mut ctx = vec![0.0; self.config.embed_dim];
        if !source.is_empty() {
            for &t in &source {
                for (c, e) in ctx.iter_mut().zip(self.embedding(t)) {
                    *c += e;
                }
            }
            let n = source.len() as f64;
            ctx.iter_mut().for_each(|c| *c /= n);
        }
        (source, ctx)
    }

    /// Returns (state, next-token probabilities) for one decoder position.
    fn step(&self, context: &[f64], input: usize) -> (Vec<f64>, Vec<f64>) {
        let l = self.layout();
        let p = &self.params;
        let mut pre = p[l.bias..l.bias + l.dim].to_vec();
        matvec_add(p, l.w_ctx, l.dim, l.dim, context, &mut pre);
        matvec_add(p, l.w_prev, l.dim, l.dim, self.embedding(input), &mut pre);
        let state: Vec<f64> = pre.iter().map(|a| a.tanh()).collect();
        let mut logits = p[l.b_out..l.b_out + l.vocab].to_vec();
        matvec_add(p, l.w_out, l.vocab, l.dim, &state, &mut logits);
        softmax_in_place(&mut logits);
        (state, logits)
    }

    fn check_prefix(&self, prefix: &[TokenId]) -> Result<(), ModelError> {
        let size = self.vocab.len();
        if let Some(&id) = prefix.iter().find(|&&t| t >= size) {
            return Err(ModelError::UnknownTokenId { id, size });
        }
        if prefix.len() >= self.config.max_positions {
            return Err(ModelError::ContextLength {
                len: prefix.len() + 1,
                max: self.config.max_positions,
            });
        }
        Ok(())
    }
}

impl SummarizationModel for ToyModel {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn state_dim(&self) -> usize {
        self.config.embed_dim
    }

    fn decode_config(&self) -> &DecodeConfig {
        &self.decode
    }

    fn context_length(&self) -> Option<usize> {
        Some(self.config.max_positions)
    }

    fn next_token_distribution(&self, dialogue: &Dialogue, prefix: &[TokenId]) -> Result<Vec<f64>, ModelError> {
        self.check_prefix(prefix)?;
        let (_, ctx) = self.context(dialogue);
        let input = prefix.last().copied().unwrap_or(self.layout().bos());
        Ok(self.step(&ctx, input).1)
    }

    fn token_logprobs(&self, dialogue: &Dialogue, summary: &TokenizedSummary) -> Result<Vec<f64>, ModelError> {
        Ok(self.forward(dialogue, summary)?.logprobs)
    }

    fn decoder_states(&self, dialogue: &Dialogue, summary: &TokenizedSummary) -> Result<Vec<Vec<f64>>, ModelError> {
        Ok(self.forward(dialogue, summary)?.states)
    }
}

impl TrainableModel for ToyModel {
    type Trace = ToyTrace;

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn forward(&self, dialogue: &Dialogue, summary: &TokenizedSummary) -> Result<ToyTrace, ModelError> {
        check_summary(self, summary)?;
        let (source, context) = self.context(dialogue);
        let bos = self.layout().bos();
        let inputs: Vec<usize> = std::iter::once(bos)
            .chain(summary.tokens[..summary.len() - 1].iter().copied())
            .collect();
        let mut states = Vec::with_capacity(summary.len());
        let mut probs = Vec::with_capacity(summary.len());
        let mut logprobs = Vec::with_capacity(summary.len());
        for (&input, &target) in inputs.iter().zip(&summary.tokens) {
            let (s, p) = self.step(&context, input);
            logprobs.push(p[target].ln());
            states.push(s);
            probs.push(p);
        }
        Ok(ToyTrace {
            source,
            context,
            inputs,
            targets: summary.tokens.clone(),
            states,
            probs,
            logprobs,
        })
    }

    fn backward(&self, trace: &ToyTrace, grad_logprobs: &[f64], grad_states: Option<&[Vec<f64>]>, grads: &mut [f64]) {
        let l = self.layout();
        let p = &self.params;
        let d = l.dim;
        let mut grad_ctx = vec![0.0; d];
        for i in 0..trace.targets.len() {
            let state = &trace.states[i];
            let mut grad_state = match grad_states {
                Some(gs) => gs[i].clone(),
                None => vec![0.0; d],
            };
            let g = grad_logprobs.get(i).copied().unwrap_or(0.0);
            if g != 0.0 {
                // d log p[t] / d logits = onehot(t) - p
                for v in 0..l.vocab {
                    let dz = g * (f64::from(u8::from(v == trace.targets[i])) - trace.probs[i][v]);
                    if dz == 0.0 {
                        continue;
                    }
                    grads[l.b_out + v] += dz;
                    let row = l.w_out + v * d;
                    for k in 0..d {
                        grads[row + k] += dz * state[k];
                        grad_state[k] += dz * p[row + k];
                    }
                }
            }
            let grad_pre: Vec<f64> = grad_state.iter().zip(state).map(|(g, s)| g * (1.0 - s * s)).collect();
            let input_row = l.emb + trace.inputs[i] * d;
            for r in 0..d {
                let gp = grad_pre[r];
                if gp == 0.0 {
                    continue;
                }
                grads[l.bias + r] += gp;
                for k in 0..d {
                    grads[l.w_ctx + r * d + k] += gp * trace.context[k];
                    grads[l.w_prev + r * d + k] += gp * p[input_row + k];
                    grad_ctx[k] += gp * p[l.w_ctx + r * d + k];
                    grads[input_row + k] += gp * p[l.w_prev + r * d + k];
                }
            }
        }
        if !trace.source.is_empty() {
            let n = trace.source.len() as f64;
            for &t in &trace.source {
                let row = l.emb + t * d;
                for k in 0..d {
                    grads[row + k] += grad_ctx[k] / n;
                }
            }
        }
    }
}
