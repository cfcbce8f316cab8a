//! Run configuration, validation, environment construction, and manifests.

use crate::backend::{
    Backend, DiskCache, HttpSettings, SamplingParams, ScriptedBackend, DEFAULT_CONCURRENCY,
    DEFAULT_MAX_RETRIES,
};
use crate::pipeline::{Preset, SamplingPlan, StageToggles, TemplateSet};
use crate::qa_repair::RepairTemplates;
use crate::retrieval::{Bm25Index, RemoteRetriever, Retriever};
use crate::util::now_unix_ms;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use thiserror::Error;

pub const API_KEY_ENV: &str = "CARE_RAG_API_KEY";
pub const DEFAULT_PERSPECTIVES: usize = 3;
pub const DEFAULT_RETRIEVAL_K: usize = 5;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config field {field}: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("cannot read config {path}: {message}")]
    Unreadable { path: String, message: String },
    #[error("backend setup: {0}")]
    Backend(#[from] crate::backend::BackendError),
    #[error("retriever setup: {0}")]
    Retrieval(#[from] crate::retrieval::RetrievalError),
    #[error("template setup: {0}")]
    Template(String),
}

impl ConfigError {
    fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        Self::Invalid {
            field,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Http,
    Scripted,
}

/// Where completions come from: a remote endpoint or a scripted transcript.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BackendSettings {
    pub kind: BackendKind,
    pub model_id: String,
    #[serde(default)]
    pub base_url: Option<String>,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub transcript_path: Option<PathBuf>,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
}

fn default_retries() -> u32 {
    DEFAULT_MAX_RETRIES
}

impl BackendSettings {
    pub fn scripted(model_id: impl Into<String>, transcript: impl Into<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Scripted,
            model_id: model_id.into(),
            base_url: None,
            api_key_env: None,
            transcript_path: Some(transcript.into()),
            max_retries: DEFAULT_MAX_RETRIES,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CacheSettings {
    #[serde(default)]
    pub enabled: bool,
    #[serde(default = "default_cache_dir")]
    pub dir: PathBuf,
}

fn default_cache_dir() -> PathBuf {
    PathBuf::from(".care_rag_cache")
}

impl Default for CacheSettings {
    fn default() -> Self {
        Self {
            enabled: false,
            dir: default_cache_dir(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrieverKind {
    Bm25,
    Remote,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrieverSettings {
    pub kind: RetrieverKind,
    #[serde(default)]
    pub index_dir: Option<PathBuf>,
    #[serde(default)]
    pub endpoint: Option<String>,
}

/// Full configuration for one run; serializable so a manifest snapshot can
/// reproduce the run byte-for-byte.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub backend: BackendSettings,
    #[serde(default)]
    pub detector_backend: Option<BackendSettings>,
    #[serde(default)]
    pub sampling: SamplingParams,
    #[serde(default)]
    pub sampling_overrides: BTreeMap<crate::backend::PurposeTag, SamplingParams>,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub stages: StageToggles,
    #[serde(default = "default_preset")]
    pub preset: Preset,
    #[serde(default)]
    pub prompt_dir: Option<PathBuf>,
    #[serde(default)]
    pub cache: CacheSettings,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default = "default_true")]
    pub strict_parsing: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub retriever: Option<RetrieverSettings>,
}

fn default_n() -> usize {
    DEFAULT_PERSPECTIVES
}
fn default_k() -> usize {
    DEFAULT_RETRIEVAL_K
}
fn default_preset() -> Preset {
    Preset::CareRag
}
fn default_concurrency() -> usize {
    DEFAULT_CONCURRENCY
}
fn default_true() -> bool {
    true
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let bytes = std::fs::read(path).map_err(|e| ConfigError::Unreadable {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_slice(&bytes).map_err(|e| ConfigError::Unreadable {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// Validate and normalize for a pipeline run: presets force their stage
    /// toggles, then every numeric bound and backend requirement is checked.
    pub fn validated(mut self) -> Result<Self, ConfigError> {
        match self.preset {
            Preset::NoRag => {
                self.stages.stage2 = false;
                self.stages.stage3 = false;
                self.n = 1;
            }
            Preset::VanillaRag => {
                self.stages.stage1 = false;
                self.stages.stage3 = false;
            }
            Preset::CareRag => {}
        }
        let config = self.validated_for_repair()?;
        let needs_retriever = match config.preset {
            Preset::NoRag => false,
            Preset::VanillaRag => true,
            Preset::CareRag => config.stages.stage2,
        };
        if needs_retriever && config.retriever.is_none() {
            return Err(ConfigError::invalid(
                "retriever",
                "retrieval is enabled but no retriever is configured",
            ));
        }
        Ok(config)
    }

    /// The subset of validation a repair run needs: backends, sampling, and
    /// numeric bounds, without any retrieval requirement.
    pub fn validated_for_repair(self) -> Result<Self, ConfigError> {
        if self.k < 1 {
            return Err(ConfigError::invalid("k", "k must be >= 1"));
        }
        if self.n < 1 {
            return Err(ConfigError::invalid("n", "n must be >= 1"));
        }
        if self.concurrency < 1 {
            return Err(ConfigError::invalid("concurrency", "concurrency must be >= 1"));
        }
        self.sampling
            .validate()
            .map_err(|e| ConfigError::invalid("sampling", e.to_string()))?;
        for (purpose, params) in &self.sampling_overrides {
            params.validate().map_err(|e| {
                ConfigError::invalid("sampling_overrides", format!("{purpose}: {e}"))
            })?;
        }
        for (field, settings) in [
            ("backend", Some(&self.backend)),
            ("detector_backend", self.detector_backend.as_ref()),
        ] {
            let Some(settings) = settings else { continue };
            if settings.model_id.is_empty() {
                return Err(ConfigError::invalid(field, "model_id must be non-empty"));
            }
            match settings.kind {
                BackendKind::Http if settings.base_url.is_none() => {
                    return Err(ConfigError::invalid(field, "http backend requires base_url"));
                }
                BackendKind::Scripted if settings.transcript_path.is_none() => {
                    return Err(ConfigError::invalid(
                        field,
                        "scripted backend requires transcript_path",
                    ));
                }
                _ => {}
            }
        }
        Ok(self)
    }

    pub fn sampling_plan(&self) -> SamplingPlan {
        SamplingPlan {
            default: self.sampling,
            overrides: self.sampling_overrides.clone(),
        }
    }

    pub fn detector_model_id(&self) -> &str {
        self.detector_backend
            .as_ref()
            .map(|b| b.model_id.as_str())
            .unwrap_or(&self.backend.model_id)
    }
}

/// Instantiated backends, templates, and retriever for a run.
pub struct RunEnv {
    pub generator: Arc<Backend>,
    pub detector: Arc<Backend>,
    pub templates: TemplateSet,
    pub repair_templates: RepairTemplates,
    pub retriever: Option<Arc<dyn Retriever>>,
}

fn build_backend(settings: &BackendSettings, config: &RunConfig) -> Result<Backend, ConfigError> {
    let backend = match settings.kind {
        BackendKind::Scripted => {
            let path = settings.transcript_path.as_ref().expect("validated");
            Backend::new(Box::new(ScriptedBackend::from_file(path)?))
        }
        BackendKind::Http => {
            let mut http = HttpSettings::new(settings.base_url.clone().expect("validated"));
            http.max_retries = settings.max_retries;
            let env_name = settings.api_key_env.as_deref().unwrap_or(API_KEY_ENV);
            http.api_key = std::env::var(env_name).ok();
            Backend::http(http)?
        }
    };
    let backend = backend.with_concurrency(config.concurrency);
    Ok(if config.cache.enabled {
        backend.with_cache(DiskCache::new(&config.cache.dir))
    } else {
        backend
    })
}

/// Build the runtime environment for a validated config.
pub fn build_env(config: &RunConfig) -> Result<RunEnv, ConfigError> {
    let generator = Arc::new(build_backend(&config.backend, config)?);
    let detector = match &config.detector_backend {
        Some(settings) => Arc::new(build_backend(settings, config)?),
        None => Arc::clone(&generator),
    };
    let (templates, repair_templates) = match &config.prompt_dir {
        Some(dir) => (
            TemplateSet::from_dir(dir).map_err(|e| ConfigError::Template(e.to_string()))?,
            RepairTemplates::from_dir(dir).map_err(|e| ConfigError::Template(e.to_string()))?,
        ),
        None => (TemplateSet::builtin(), RepairTemplates::default()),
    };
    let retriever: Option<Arc<dyn Retriever>> = match &config.retriever {
        Some(settings) => Some(match settings.kind {
            RetrieverKind::Bm25 => {
                let dir = settings.index_dir.as_ref().ok_or_else(|| {
                    ConfigError::invalid("retriever", "bm25 retriever requires index_dir")
                })?;
                Arc::new(Bm25Index::load(dir)?)
            }
            RetrieverKind::Remote => {
                let endpoint = settings.endpoint.as_ref().ok_or_else(|| {
                    ConfigError::invalid("retriever", "remote retriever requires endpoint")
                })?;
                Arc::new(RemoteRetriever::new(endpoint.clone())?)
            }
        }),
        None => None,
    };
    Ok(RunEnv {
        generator,
        detector,
        templates,
        repair_templates,
        retriever,
    })
}

/// Provenance record written next to every artifact directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub tool_version: String,
    pub command: String,
    pub config: RunConfig,
    pub dataset_path: Option<String>,
    pub dataset_sha256: Option<String>,
    pub corpus_sha256: Option<String>,
    pub trace_version: u32,
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        let started = now_unix_ms();
        Self {
            run_id: format!("{command}-{started}-{}", std::process::id()),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: config.clone(),
            dataset_path: None,
            dataset_sha256: None,
            corpus_sha256: None,
            trace_version: crate::pipeline::trace::TRACE_VERSION,
            started_unix_ms: started,
            finished_unix_ms: 0,
        }
    }

    pub fn with_dataset(mut self, path: &Path) -> std::io::Result<Self> {
        self.dataset_path = Some(path.display().to_string());
        self.dataset_sha256 = Some(crate::util::sha256_file(path)?);
        Ok(self)
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        let mut manifest = self.clone();
        manifest.finished_unix_ms = now_unix_ms();
        let body = serde_json::to_vec_pretty(&manifest)?;
        crate::util::atomic_write(&dir.join("manifest.json"), &body)
    }

    pub fn read(dir: &Path) -> std::io::Result<Self> {
        let bytes = std::fs::read(dir.join("manifest.json"))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
    }
}
