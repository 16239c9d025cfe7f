//! The declarative run configuration shared by every command.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::SourceFormat;
use crate::evaluation::{Backend, Column, Dimension, ExternalModelScorer, LexicalMock, LlmJudgeScorer, Scorer};
use crate::model::{DecodeConfig, ToyConfig, ToyModel, Vocab};
use crate::objectives::ObjectiveConfig;
use crate::teacher::{PromptTemplate, TeacherClient, TeacherSettings};
use crate::trainer::{config_hash, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub format: SourceFormat,
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Augmented JSONL produced by extraction.
    pub augmented: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            format: SourceFormat::SamsumLike,
            train: None,
            dev: None,
            test: None,
            augmented: None,
        }
    }
}

/// Template overrides; unset fields fall back to the built-in wording.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub positive: Option<String>,
    pub negative: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSettings {
    pub vocab_size: usize,
    pub toy: ToyConfig,
    pub decode: DecodeConfig,
}

impl Default for ModelSettings {
    fn default() -> Self {
        Self {
            vocab_size: 64,
            toy: ToyConfig::default(),
            decode: DecodeConfig::default(),
        }
    }
}

impl ModelSettings {
    pub fn build(&self, vocab: Vocab) -> ToyModel {
        ToyModel::new(vocab, self.toy, self.decode)
    }
}

/// One entry of the scorer roster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScorerSpec {
    pub column: Column,
    pub backend: Backend,
    #[serde(default)]
    pub name: Option<String>,
    /// Service URL for the external-model backend.
    #[serde(default)]
    pub endpoint: Option<String>,
    #[serde(default = "default_scorer_timeout")]
    pub timeout: f64,
}

fn default_scorer_timeout() -> f64 {
    30.0
}

impl ScorerSpec {
    pub fn lexical(column: Column) -> Self {
        Self {
            column,
            backend: Backend::LexicalMock,
            name: None,
            endpoint: None,
            timeout: default_scorer_timeout(),
        }
    }

    pub fn dimension(&self) -> Option<Dimension> {
        match self.column {
            Column::ConsistencyA | Column::ConsistencyG => Some(Dimension::Consistency),
            Column::Coherence => Some(Dimension::Coherence),
            Column::Fluency => Some(Dimension::Fluency),
            Column::Relevance => Some(Dimension::Relevance),
            Column::Rouge1 | Column::Rouge2 => None,
        }
    }
}

fn default_scorers() -> Vec<ScorerSpec> {
    [Column::ConsistencyA, Column::Coherence, Column::Fluency, Column::Relevance]
        .into_iter()
        .map(ScorerSpec::lexical)
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSettings {
    pub parallelism: usize,
    /// Positives scoring below this are flagged by the quality gate.
    pub quality_floor: f64,
    /// Model behind llm-judge scorers; the teacher model when unset. The
    /// judge shares the teacher's endpoint, key and rate limit.
    pub judge_model: Option<String>,
}

impl Default for EvaluationSettings {
    fn default() -> Self {
        Self {
            parallelism: 4,
            quality_floor: 0.5,
            judge_model: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub teacher: TeacherSettings,
    pub prompts: PromptConfig,
    pub train: TrainConfig,
    pub objective: ObjectiveConfig,
    pub model: ModelSettings,
    pub scorers: Vec<ScorerSpec>,
    pub evaluation: EvaluationSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            teacher: TeacherSettings::default(),
            prompts: PromptConfig::default(),
            train: TrainConfig::default(),
            objective: ObjectiveConfig::default(),
            model: ModelSettings::default(),
            scorers: default_scorers(),
            evaluation: EvaluationSettings::default(),
        }
    }
}

impl RunConfig {
    /// Parse a TOML file. Unknown keys are rejected; missing keys take defaults.
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |e: &dyn std::fmt::Display| ConfigError::Invalid(e.to_string());
        self.teacher.validate().map_err(|e| invalid(&e))?;
        self.train.validate().map_err(|e| invalid(&e))?;
        self.objective.validate().map_err(|e| invalid(&e))?;
        self.prompt_template()?;
        if self.model.vocab_size < 3 || self.model.toy.embed_dim == 0 {
            return Err(ConfigError::Invalid("model vocab_size must be ≥ 3 and embed_dim ≥ 1".into()));
        }
        if self.evaluation.parallelism == 0 {
            return Err(ConfigError::Invalid("evaluation.parallelism must be at least 1".into()));
        }
        for s in &self.scorers {
            if s.dimension().is_none() {
                return Err(ConfigError::Invalid(format!("column {} is computed, not scored", s.column)));
            }
            if s.backend == Backend::ExternalModel && s.endpoint.is_none() {
                return Err(ConfigError::Invalid(format!("external-model scorer for {} needs an endpoint", s.column)));
            }
            if !(s.timeout > 0.0) {
                return Err(ConfigError::Invalid("scorer timeout must be positive".into()));
            }
        }
        let mut columns: Vec<Column> = self.scorers.iter().map(|s| s.column).collect();
        columns.sort();
        if columns.windows(2).any(|w| w[0] == w[1]) {
            return Err(ConfigError::Invalid("each column may have only one scorer".into()));
        }
        Ok(())
    }

    pub fn prompt_template(&self) -> Result<PromptTemplate, ConfigError> {
        let default = PromptTemplate::default();
        match (&self.prompts.positive, &self.prompts.negative) {
            (None, None) => Ok(default),
            (p, n) => {
                let (dp, dn) = crate::teacher::default_template_text();
                PromptTemplate::new(p.as_deref().unwrap_or(dp), n.as_deref().unwrap_or(dn))
                    .map_err(|e| ConfigError::Invalid(e.to_string()))
            }
        }
    }

    /// Hash of the canonical form; stamped on every artifact.
    pub fn hash(&self) -> String {
        config_hash(self)
    }

    /// Instantiate the scorer roster. `judge` is required only when an
    /// llm-judge scorer is configured.
    pub fn build_scorers(&self, judge: Option<&Arc<TeacherClient>>) -> Result<Vec<(Column, Box<dyn Scorer>)>, ConfigError> {
        self.scorers
            .iter()
            .map(|s| {
                let dimension = s.dimension().expect("validated");
                let name = s.name.clone().unwrap_or_else(|| format!("{}-{}", s.column, dimension));
                let scorer: Box<dyn Scorer> = match s.backend {
                    Backend::LexicalMock => Box::new(LexicalMock::new(dimension)),
                    Backend::ExternalModel => Box::new(
                        ExternalModelScorer::new(
                            &name,
                            dimension,
                            s.endpoint.as_deref().unwrap_or_default(),
                            Duration::from_secs_f64(s.timeout),
                        )
                        .map_err(|e| ConfigError::Invalid(e.to_string()))?,
                    ),
                    Backend::LlmJudge => {
                        let client = judge.ok_or_else(|| {
                            ConfigError::Invalid(format!("llm-judge scorer for {} needs a teacher client", s.column))
                        })?;
                        Box::new(LlmJudgeScorer::new(&name, dimension, Arc::clone(client)))
                    }
                };
                Ok((s.column, scorer))
            })
            .collect()
    }

    pub fn needs_judge(&self) -> bool {
        self.scorers.iter().any(|s| s.backend == Backend::LlmJudge)
    }
}
