//! Quality scorers. Real metrics (an AlignScore-style consistency model, a
//! G-Eval-style LLM judge) are reached through adapters; the lexical mocks
//! are cheap deterministic stand-ins for desk-scale runs and tests.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::teacher::{Purpose, TeacherClient};
use crate::text::{content_words, sentences, word_tokens};

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("scorer backend unreachable: {0}")]
    Unreachable(String),
    #[error("unusable scorer response: {0}")]
    BadResponse(String),
    #[error("score {value} outside [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Consistency,
    Coherence,
    Fluency,
    Relevance,
}

impl fmt::Display for Dimension {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dimension::Consistency => "consistency",
            Dimension::Coherence => "coherence",
            Dimension::Fluency => "fluency",
            Dimension::Relevance => "relevance",
        })
    }
}

impl FromStr for Dimension {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "consistency" => Ok(Self::Consistency),
            "coherence" => Ok(Self::Coherence),
            "fluency" => Ok(Self::Fluency),
            "relevance" => Ok(Self::Relevance),
            other => Err(format!("unknown dimension `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    ExternalModel,
    LlmJudge,
    LexicalMock,
}

pub trait Scorer: Send + Sync {
    fn name(&self) -> &str;
    fn dimension(&self) -> Dimension;
    fn backend(&self) -> Backend;
    fn range(&self) -> (f64, f64);
    fn score(&self, dialogue: &str, summary: &str) -> Result<f64, ScorerError>;
}

/// Score and verify the result lies inside the scorer's declared range.
pub fn score_checked(scorer: &dyn Scorer, dialogue: &str, summary: &str) -> Result<f64, ScorerError> {
    let value = scorer.score(dialogue, summary)?;
    let (lo, hi) = scorer.range();
    if !(value >= lo && value <= hi) {
        return Err(ScorerError::OutOfRange { value, lo, hi });
    }
    Ok(value)
}

/// Rescale a score to [0, 1] using the scorer's range.
pub fn unit_score(scorer: &dyn Scorer, value: f64) -> f64 {
    let (lo, hi) = scorer.range();
    if hi > lo {
        (value - lo) / (hi - lo)
    } else {
        value
    }
}

/// Deterministic lexical stand-ins, one per dimension:
///
/// - consistency: share of the summary's content words found in the dialogue
/// - coherence: share of adjacent summary sentences that share a content word
/// - fluency: one minus the share of immediately repeated tokens
/// - relevance: share of the dialogue's ten most frequent content words
///   present in the summary
#[derive(Debug, Clone)]
pub struct LexicalMock {
    name: String,
    dimension: Dimension,
}

impl LexicalMock {
    pub fn new(dimension: Dimension) -> Self {
        Self {
            name: format!("lexical-{dimension}"),
            dimension,
        }
    }
}

fn lexical_consistency(dialogue: &str, summary: &str) -> f64 {
    let source: HashSet<String> = content_words(dialogue).into_iter().collect();
    let words = content_words(summary);
    if words.is_empty() {
        return 0.0;
    }
    words.iter().filter(|w| source.contains(*w)).count() as f64 / words.len() as f64
}

fn lexical_coherence(summary: &str) -> f64 {
    let sents: Vec<HashSet<String>> = sentences(summary)
        .into_iter()
        .map(|s| content_words(s).into_iter().collect())
        .collect();
    if sents.is_empty() {
        return 0.0;
    }
    if sents.len() == 1 {
        return 1.0;
    }
    let linked = sents.windows(2).filter(|w| !w[0].is_disjoint(&w[1])).count();
    linked as f64 / (sents.len() - 1) as f64
}

fn lexical_fluency(summary: &str) -> f64 {
    let tokens = word_tokens(summary);
    match tokens.len() {
        0 => 0.0,
        1 => 1.0,
        n => 1.0 - tokens.windows(2).filter(|w| w[0] == w[1]).count() as f64 / (n - 1) as f64,
    }
}

fn lexical_relevance(dialogue: &str, summary: &str) -> f64 {
    let mut freq: HashMap<String, usize> = HashMap::new();
    for w in content_words(dialogue) {
        *freq.entry(w).or_default() += 1;
    }
    let mut ranked: Vec<(String, usize)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    ranked.truncate(10);
    if ranked.is_empty() {
        return 0.0;
    }
    let present: HashSet<String> = content_words(summary).into_iter().collect();
    ranked.iter().filter(|(w, _)| present.contains(w)).count() as f64 / ranked.len() as f64
}

impl Scorer for LexicalMock {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> Dimension {
        self.dimension
    }

    fn backend(&self) -> Backend {
        Backend::LexicalMock
    }

    fn range(&self) -> (f64, f64) {
        (0.0, 1.0)
    }

    fn score(&self, dialogue: &str, summary: &str) -> Result<f64, ScorerError> {
        Ok(match self.dimension {
            Dimension::Consistency => lexical_consistency(dialogue, summary),
            Dimension::Coherence => lexical_coherence(summary),
            Dimension::Fluency => lexical_fluency(summary),
            Dimension::Relevance => lexical_relevance(dialogue, summary),
        })
    }
}

/// Adapter for a scoring service: `POST {"context": str, "claim": str}` and
/// read `{"score": f}` back.
pub struct ExternalModelScorer {
    name: String,
    dimension: Dimension,
    endpoint: String,
    range: (f64, f64),
    client: reqwest::blocking::Client,
}

impl ExternalModelScorer {
    pub fn new(name: &str, dimension: Dimension, endpoint: &str, timeout: Duration) -> Result<Self, ScorerError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ScorerError::Unreachable(e.to_string()))?;
        Ok(Self {
            name: name.to_string(),
            dimension,
            endpoint: endpoint.to_string(),
            range: (0.0, 1.0),
            client,
        })
    }

    pub fn with_range(mut self, lo: f64, hi: f64) -> Self {
        self.range = (lo, hi);
        self
    }
}

impl Scorer for ExternalModelScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> Dimension {
        self.dimension
    }

    fn backend(&self) -> Backend {
        Backend::ExternalModel
    }

    fn range(&self) -> (f64, f64) {
        self.range
    }

    fn score(&self, dialogue: &str, summary: &str) -> Result<f64, ScorerError> {
        #[derive(Deserialize)]
        struct Reply {
            score: f64,
        }
        let resp = self
            .client
            .post(&self.endpoint)
            .json(&serde_json::json!({"context": dialogue, "claim": summary}))
            .send()
            .map_err(|e| ScorerError::Unreachable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(ScorerError::BadResponse(format!("HTTP {}", resp.status())));
        }
        resp.json::<Reply>()
            .map(|r| r.score)
            .map_err(|e| ScorerError::BadResponse(e.to_string()))
    }
}

pub const JUDGE_PROMPT_VERSION: &str = "geval-1to5-v1";

fn judge_criterion(dimension: Dimension) -> &'static str {
    match dimension {
        Dimension::Consistency => {
            "Consistency (1-5) - the factual alignment between the summary and the dialogue. \
             A factually consistent summary contains only statements that are entailed by the dialogue. \
             Penalize summaries that contain hallucinated or contradicted facts."
        }
        Dimension::Coherence => {
            "Coherence (1-5) - the collective quality of all sentences. The summary should be \
             well-structured and well-organized, building a coherent body of information."
        }
        Dimension::Fluency => {
            "Fluency (1-5) - the quality of the summary in terms of grammar, spelling, punctuation, \
             word choice, and sentence structure."
        }
        Dimension::Relevance => {
            "Relevance (1-5) - selection of important content from the dialogue. The summary should \
             include only important information and avoid redundancies."
        }
    }
}

/// G-Eval-style judge on a 1-5 scale, sharing the teacher's client and rate limiter.
pub struct LlmJudgeScorer {
    name: String,
    dimension: Dimension,
    client: Arc<TeacherClient>,
}

impl LlmJudgeScorer {
    pub fn new(name: &str, dimension: Dimension, client: Arc<TeacherClient>) -> Self {
        Self {
            name: name.to_string(),
            dimension,
            client,
        }
    }

    pub fn prompt(&self, dialogue: &str, summary: &str) -> String {
        format!(
            "You will be given a dialogue and a summary written for it.\n\
             Rate the summary on one metric.\n\n\
             Evaluation criterion:\n{}\n\n\
             Dialogue:\n{dialogue}\n\n\
             Summary:\n{summary}\n\n\
             Answer with a single integer from 1 to 5.",
            judge_criterion(self.dimension)
        )
    }
}

/// First number in the reply.
pub fn parse_judge_score(reply: &str) -> Result<f64, ScorerError> {
    let start = reply
        .find(|c: char| c.is_ascii_digit())
        .ok_or_else(|| ScorerError::BadResponse(format!("no score in {reply:?}")))?;
    let number: String = reply[start..]
        .chars()
        .take_while(|c| c.is_ascii_digit() || *c == '.')
        .collect();
    number
        .trim_end_matches('.')
        .parse()
        .map_err(|_| ScorerError::BadResponse(format!("no score in {reply:?}")))
}

impl Scorer for LlmJudgeScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> Dimension {
        self.dimension
    }

    fn backend(&self) -> Backend {
        Backend::LlmJudge
    }

    fn range(&self) -> (f64, f64) {
        (1.0, 5.0)
    }

    fn score(&self, dialogue: &str, summary: &str) -> Result<f64, ScorerError> {
        let reply = self
            .client
            .complete(Purpose::Judge, "judge", &self.prompt(dialogue, summary), 0.0)
            .map_err(|e| ScorerError::Unreachable(e.to_string()))?;
        parse_judge_score(&reply)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DIALOGUE: &str = "Amanda: I baked cookies. Do you want some?\nJerry: Sure!\nAmanda: I'll bring you tomorrow :-)";

    #[test]
    fn consistency_mock() {
        let s = LexicalMock::new(Dimension::Consistency);
        assert_eq!(s.score(DIALOGUE, "I baked cookies.").unwrap(), 1.0);
        assert_eq!(s.score(DIALOGUE, "Zebras dance quietly").unwrap(), 0.0);
        assert_eq!(s.score(DIALOGUE, "Amanda baked muffins").unwrap(), 2.0 / 3.0);
        assert_eq!(s.score(DIALOGUE, "").unwrap(), 0.0);
    }

    #[test]
    fn other_mocks_in_range() {
        for dim in [Dimension::Coherence, Dimension::Fluency, Dimension::Relevance] {
            let s = LexicalMock::new(dim);
            for summary in ["", "Amanda baked cookies. Jerry wants cookies.", "the the the"] {
                let v = score_checked(&s, DIALOGUE, summary).unwrap();
                assert!((0.0..=1.0).contains(&v));
            }
        }
        assert_eq!(lexical_fluency("a a b"), 0.5);
        assert_eq!(lexical_coherence("Amanda baked cookies. Jerry wants cookies."), 1.0);
        assert_eq!(lexical_coherence("Amanda baked. Jerry left."), 0.0);
    }

    #[test]
    fn judge_parsing() {
        assert_eq!(parse_judge_score("4").unwrap(), 4.0);
        assert_eq!(parse_judge_score("Score: 3.5 out of 5").unwrap(), 3.5);
        assert_eq!(parse_judge_score("5.").unwrap(), 5.0);
        assert!(parse_judge_score("excellent").is_err());
    }

    struct Fixed(f64);

    impl Scorer for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }
        fn dimension(&self) -> Dimension {
            Dimension::Consistency
        }
        fn backend(&self) -> Backend {
            Backend::ExternalModel
        }
        fn range(&self) -> (f64, f64) {
            (0.0, 1.0)
        }
        fn score(&self, _: &str, _: &str) -> Result<f64, ScorerError> {
            Ok(self.0)
        }
    }

    #[test]
    fn range_enforced() {
        assert!(matches!(score_checked(&Fixed(1.5), "", ""), Err(ScorerError::OutOfRange { .. })));
        assert!(score_checked(&Fixed(f64::NAN), "", "").is_err());
        assert_eq!(score_checked(&Fixed(0.3), "", "").unwrap(), 0.3);
    }

    #[test]
    fn unreachable_service() {
        let s = ExternalModelScorer::new("align", Dimension::Consistency, "http://127.0.0.1:9/score", Duration::from_millis(200)).unwrap();
        assert!(matches!(s.score("a", "b"), Err(ScorerError::Unreachable(_))));
    }
}
