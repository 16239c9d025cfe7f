//! Table-driven model whose probabilities are set directly, for oracle tests.

use serde::{Deserialize, Serialize};

use super::{check_summary, DecodeConfig, ModelError, SummarizationModel, TokenId, TokenizedSummary, Vocab};
use crate::corpus::Dialogue;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TableRule {
    /// Every token equally likely at every position.
    Uniform,
    /// Row `i` is the distribution at position `i`; later positions reuse the last row.
    PerPosition(Vec<Vec<f64>>),
    /// Deterministically emit the first turn's utterance, then `<eos>`.
    CopyFirstTurn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableModel {
    vocab: Vocab,
    rule: TableRule,
    state: Vec<f64>,
    decode: DecodeConfig,
}

impl TableModel {
    pub fn new(vocab: Vocab, rule: TableRule) -> Self {
        Self {
            vocab,
            rule,
            state: vec![1.0],
            decode: DecodeConfig::default(),
        }
    }

    /// Checked constructor for [`TableRule::PerPosition`]: every row must
    /// cover the vocabulary and sum to one.
    pub fn per_position(vocab: Vocab, rows: Vec<Vec<f64>>) -> Result<Self, ModelError> {
        if rows.is_empty() {
            return Err(ModelError::Backend("table needs at least one row".into()));
        }
        for row in &rows {
            if row.len() != vocab.len() {
                return Err(ModelError::DimensionMismatch {
                    expected: vocab.len(),
                    found: row.len(),
                });
            }
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-9 {
                return Err(ModelError::Backend(format!("table row sums to {total}")));
            }
        }
        Ok(Self::new(vocab, TableRule::PerPosition(rows)))
    }

    /// Constant decoder state emitted for every token.
    pub fn with_state(mut self, state: Vec<f64>) -> Self {
        self.state = state;
        self
    }

    pub fn with_decode(mut self, decode: DecodeConfig) -> Self {
        self.decode = decode;
        self
    }

    fn delta(&self, token: TokenId) -> Vec<f64> {
        let mut d = vec![0.0; self.vocab.len()];
        d[token] = 1.0;
        d
    }
}

impl SummarizationModel for TableModel {
    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn state_dim(&self) -> usize {
        self.state.len()
    }

    fn decode_config(&self) -> &DecodeConfig {
        &self.decode
    }

    fn next_token_distribution(&self, dialogue: &Dialogue, prefix: &[TokenId]) -> Result<Vec<f64>, ModelError> {
        let v = self.vocab.len();
        let uniform = || vec![1.0 / v as f64; v];
        Ok(match &self.rule {
            TableRule::Uniform => uniform(),
            TableRule::PerPosition(rows) => rows[prefix.len().min(rows.len() - 1)].clone(),
            TableRule::CopyFirstTurn => {
                let first = &dialogue.turns[0].utterance;
                let unk = self.vocab.unk();
                let copy: Vec<TokenId> = self
                    .vocab
                    .encode_source(first)
                    .into_iter()
                    .filter(|t| Some(*t) != unk)
                    .collect();
                match copy.get(prefix.len()) {
                    Some(&t) => self.delta(t),
                    None => match self.vocab.eos() {
                        Some(eos) => self.delta(eos),
                        None => uniform(),
                    },
                }
            }
        })
    }

    fn decoder_states(&self, _dialogue: &Dialogue, summary: &TokenizedSummary) -> Result<Vec<Vec<f64>>, ModelError> {
        check_summary(self, summary)?;
        Ok(vec![self.state.clone(); summary.len()])
    }
}
