//! Run configuration: backend and judge endpoints, dataset, method,
//! stage parameters, and output layout. TOML on disk; any field the CLI
//! exposes as a flag can be overridden after loading.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backend::{
    GenParams, HttpBackend, HttpConfig, SimBackend, SimJudge, SimProfile, TextBackend,
};
use crate::consistency::ConsistencyConfig;
use crate::dataset::{load_dataset, QuestionRecord, TaskKind};
use crate::error::{Error, Result};
use crate::pipeline::{Method, PipelineConfig, PromptTemplates, DEFAULT_MIN_TOKENS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Simulator,
    Http,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendSection {
    pub kind: BackendKind,
    /// HTTP settings, required when kind = "http".
    #[serde(flatten)]
    pub http: Option<HttpConfig>,
    /// Inline simulator profile.
    #[serde(default)]
    pub profile: Option<SimProfile>,
    /// Or a path to a profile JSON file.
    #[serde(default)]
    pub profile_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSection {
    pub path: PathBuf,
    /// "integer", "multiple_choice", or "binary".
    pub kind: String,
    #[serde(default)]
    pub options: Option<Vec<char>>,
    #[serde(default)]
    pub labels: Option<[String; 2]>,
}

impl DatasetSection {
    pub fn task(&self) -> Result<TaskKind> {
        let task = match self.kind.as_str() {
            "integer" => TaskKind::IntegerGenerative,
            "multiple_choice" => TaskKind::MultipleChoice {
                options: self
                    .options
                    .clone()
                    .unwrap_or_else(|| vec!['A', 'B', 'C', 'D', 'E']),
            },
            "binary" => {
                let labels = self.labels.clone().ok_or_else(|| {
                    Error::Config("binary dataset requires labels = [a, b]".into())
                })?;
                TaskKind::BinaryLabel { labels }
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown dataset kind {other:?} (integer, multiple_choice, binary)"
                )))
            }
        };
        task.validate()?;
        Ok(task)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub backend: BackendSection,
    /// Judge endpoint for CoT labeling; defaults to the simulator judge.
    #[serde(default)]
    pub judge: Option<BackendSection>,
    pub dataset: DatasetSection,
    #[serde(default = "default_method")]
    pub method: String,
    /// Length gate for the zeroshot-length method.
    #[serde(default = "default_min_tokens")]
    pub min_tokens: u32,
    #[serde(default)]
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Question-level parallelism.
    #[serde(default = "default_one")]
    pub workers: usize,
    /// Concurrent draws within one question.
    #[serde(default = "default_one")]
    pub in_flight: usize,
    #[serde(default)]
    pub consistency: ConsistencyConfig,
    #[serde(default)]
    pub buckets: crate::analysis::BucketConfig,
    #[serde(default = "GenParams::reasoning_defaults")]
    pub reasoning: GenParams,
    #[serde(default = "GenParams::answer_defaults")]
    pub answer: GenParams,
    #[serde(default)]
    pub templates: PromptTemplates,
}

fn default_method() -> String {
    "zeroshot".to_string()
}

fn default_min_tokens() -> u32 {
    DEFAULT_MIN_TOKENS
}

fn default_one() -> usize {
    1
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let config: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.method()?;
        self.dataset.task()?;
        self.consistency.validate()?;
        self.pipeline()?.validate()?;
        if self.workers == 0 || self.in_flight == 0 {
            return Err(Error::Config(
                "workers and in_flight must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn method(&self) -> Result<Method> {
        let mut m = Method::parse(&self.method)?;
        if let Method::ZeroshotLength { min_tokens } = &mut m {
            *min_tokens = self.min_tokens;
        }
        Ok(m)
    }

    pub fn pipeline(&self) -> Result<PipelineConfig> {
        let mut reasoning = self.reasoning.clone();
        let mut answer = self.answer.clone();
        reasoning.seed = Some(self.seed);
        answer.seed = Some(self.seed);
        Ok(PipelineConfig {
            templates: self.templates.clone(),
            reasoning_params: reasoning,
            answer_params: answer,
            bucket: self.buckets.clone(),
        })
    }

    pub fn load_questions(&self) -> Result<Vec<QuestionRecord>> {
        load_dataset(&self.dataset.path, &self.dataset.task()?)
    }

    fn resolve_profile(section: &BackendSection) -> Result<SimProfile> {
        if let Some(profile) = &section.profile {
            return Ok(profile.clone());
        }
        if let Some(path) = &section.profile_path {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            return serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("profile {}: {e}", path.display())));
        }
        Err(Error::Config(
            "simulator backend needs profile or profile_path".into(),
        ))
    }

    fn build_section(
        section: &BackendSection,
        questions: &[QuestionRecord],
    ) -> Result<Box<dyn TextBackend>> {
        match section.kind {
            BackendKind::Simulator => {
                let profile = Self::resolve_profile(section)?;
                Ok(Box::new(SimBackend::new(
                    profile,
                    questions.iter().cloned(),
                )?))
            }
            BackendKind::Http => {
                let http = section
                    .http
                    .clone()
                    .ok_or_else(|| Error::Config("http backend needs base_url and model".into()))?;
                Ok(Box::new(HttpBackend::new(http)?))
            }
        }
    }

    /// Subject-model backend over the run's question set.
    pub fn build_backend(&self, questions: &[QuestionRecord]) -> Result<Box<dyn TextBackend>> {
        Self::build_section(&self.backend, questions)
    }

    /// Judge backend; without a judge section the simulated judge is used.
    pub fn build_judge(&self, questions: &[QuestionRecord]) -> Result<Box<dyn TextBackend>> {
        match &self.judge {
            Some(section) => Self::build_section(section, questions),
            None => Ok(Box::new(SimJudge)),
        }
    }

    /// Stable hash of the configuration snapshot, recorded in manifests
    /// and report sidecars.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_string(self).unwrap_or_default();
        let digest = Sha256::digest(json.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        hex[..16].to_string()
    }
}
