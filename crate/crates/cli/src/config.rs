use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use cefr_cascade::backends::{
    api_key_from_env, cached, Backends, Budgeted, GenerationProfile, Generator, HttpChatGenerator, HttpEstimator,
    HttpSimilarity, MockEstimator, MockGenerator, MockSimilarity, RetryPolicy,
};
use cefr_cascade::corpus::{load_split, CorpusFormat, LabeledSentence, LoadOptions};
use cefr_cascade::orchestrator::{ConfigFlags, PromptConfig};
use cefr_cascade::pipeline::PipelineConfig;
use cefr_cascade::planner::{ObjectiveMode, PlanObjective};
use cefr_cascade::{Parallelism, ProficiencyLevel};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusConfig {
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Guessed from each file's extension when absent.
    pub format: Option<CorpusFormat>,
    #[serde(default = "default_language")]
    pub language: String,
    #[serde(default = "default_source_corpus")]
    pub source_corpus: String,
}

fn default_language() -> String {
    "en".into()
}

fn default_source_corpus() -> String {
    "unknown".into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    pub generator_url: Option<String>,
    pub estimator_url: Option<String>,
    pub similarity_url: Option<String>,
    /// Name of the environment variable holding the API key. The key itself
    /// never appears in the file.
    pub api_key_env: Option<String>,
    pub retry: RetryPolicy,
    /// Hard ceiling on generation calls per command.
    pub max_generation_calls: Option<u64>,
    /// Mock only: sentences containing this text fail to generate.
    pub mock_fail_on: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlagsConfig {
    pub planning: bool,
    pub semantic: bool,
    pub history: bool,
}

impl Default for FlagsConfig {
    fn default() -> Self {
        ConfigFlags::FULL.into()
    }
}

impl From<ConfigFlags> for FlagsConfig {
    fn from(f: ConfigFlags) -> Self {
        Self {
            planning: f.planning,
            semantic: f.semantic,
            history: f.history,
        }
    }
}

impl From<FlagsConfig> for ConfigFlags {
    fn from(f: FlagsConfig) -> Self {
        ConfigFlags {
            planning: f.planning,
            semantic: f.semantic,
            history: f.history,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub backends: BackendConfig,
    pub generation: GenerationProfile,
    pub flags: FlagsConfig,
    pub objective: ObjectiveMode,
    pub forbid_empty_cells: bool,
    pub k: usize,
    pub sample_cap: Option<usize>,
    pub parallelism: usize,
    pub output_dir: PathBuf,
    /// Refuse generation profiles that sample.
    pub deterministic: bool,
    /// Empty reward cells and infeasible plans become errors.
    pub strict: bool,
    /// Largest tolerated fraction of failed cascades in `run`.
    pub failure_threshold: f64,
    pub fresh_exemplar_generations: bool,
    pub allow_store_fallback: bool,
    pub targets: Vec<ProficiencyLevel>,
    pub prompt: PromptConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            train: None,
            dev: None,
            test: None,
            format: None,
            language: default_language(),
            source_corpus: default_source_corpus(),
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            backends: BackendConfig::default(),
            generation: GenerationProfile::default(),
            flags: FlagsConfig::default(),
            objective: ObjectiveMode::default(),
            forbid_empty_cells: false,
            k: 3,
            sample_cap: None,
            parallelism: 4,
            output_dir: PathBuf::from("out"),
            deterministic: true,
            strict: false,
            failure_threshold: 0.05,
            fresh_exemplar_generations: false,
            allow_store_fallback: false,
            targets: ProficiencyLevel::TARGETS.to_vec(),
            prompt: PromptConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// A parsed config plus the directory its relative paths resolve against.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let config: RunConfig = toml::from_str(&raw).with_context(|| format!("invalid config {}", path.display()))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { config, base_dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }

    pub fn split_path(&self, split: Split) -> Option<PathBuf> {
        let c = &self.config.corpus;
        let p = match split {
            Split::Train => c.train.as_ref(),
            Split::Dev => c.dev.as_ref(),
            Split::Test => c.test.as_ref(),
        }?;
        Some(self.resolve(p))
    }

    /// Canonical bytes used for the config digest. Paths stay as written so
    /// the digest does not depend on where the config lives.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(&self.config).expect("config serializes")
    }

    /// Checks everything a command can check before touching backends.
    pub fn validate(&self, needed: &[Split]) -> Result<()> {
        let c = &self.config;
        if c.parallelism == 0 {
            bail!("parallelism must be at least 1");
        }
        if c.k == 0 {
            bail!("k must be at least 1");
        }
        if !(0.0..=1.0).contains(&c.failure_threshold) {
            bail!("failure_threshold must be within [0, 1], got {}", c.failure_threshold);
        }
        if c.deterministic && !c.generation.is_reproducible() {
            bail!(
                "deterministic = true requires temperature 0 with sampling off (got temperature {}, sampling {})",
                c.generation.temperature,
                c.generation.sampling_enabled
            );
        }
        if c.targets.is_empty() {
            bail!("no target levels configured");
        }
        c.prompt.check_descriptors()?;
        if c.backends.kind == BackendKind::Http {
            for (name, url) in [
                ("generator_url", &c.backends.generator_url),
                ("estimator_url", &c.backends.estimator_url),
                ("similarity_url", &c.backends.similarity_url),
            ] {
                if url.is_none() {
                    bail!("http backends need backends.{name}");
                }
            }
        }
        for &split in needed {
            let path = self
                .split_path(split)
                .with_context(|| format!("corpus.{} is not configured", split.name()))?;
            if !path.is_file() {
                bail!("corpus.{} not found: {}", split.name(), path.display());
            }
        }
        Ok(())
    }

    pub fn load(&self, split: Split) -> Result<Vec<LabeledSentence>> {
        let path = self
            .split_path(split)
            .with_context(|| format!("corpus.{} is not configured", split.name()))?;
        let format = self
            .config
            .corpus
            .format
            .unwrap_or_else(|| CorpusFormat::from_path(&path));
        let options = LoadOptions {
            language: self.config.corpus.language.clone(),
            source_corpus: self.config.corpus.source_corpus.clone(),
        };
        Ok(load_split(&path, format, &options)?)
    }

    pub fn parallelism(&self) -> Parallelism {
        Parallelism::from_bound(self.config.parallelism)
    }

    pub fn objective(&self) -> PlanObjective {
        PlanObjective {
            mode: self.config.objective,
            forbid_empty_cells: self.config.forbid_empty_cells,
        }
    }

    pub fn pipeline(&self) -> PipelineConfig {
        let c = &self.config;
        PipelineConfig {
            prompt: c.prompt.clone(),
            profile: c.generation.clone(),
            objective: self.objective(),
            sample_cap: c.sample_cap,
            exemplar_k: c.k,
            fresh_exemplar_generations: c.fresh_exemplar_generations,
            targets: c.targets.clone(),
            parallelism: self.parallelism(),
        }
    }

    pub fn backends(&self) -> Result<Backends> {
        let b = &self.config.backends;
        let generator: Box<dyn Generator> = match b.kind {
            BackendKind::Mock => Box::new(MockGenerator {
                fail_on: b.mock_fail_on.clone(),
            }),
            BackendKind::Http => {
                let key = b.api_key_env.as_deref().map(api_key_from_env).transpose()?;
                let gen = HttpChatGenerator::new(url(&b.generator_url), key, b.retry.clone());
                Box::new(gen)
            }
        };
        let generator: Box<dyn Generator> = match b.max_generation_calls {
            Some(limit) => Box::new(Budgeted::new(generator, limit)),
            None => generator,
        };
        Ok(match b.kind {
            BackendKind::Mock => Backends::new(cached(generator), MockEstimator, MockSimilarity),
            BackendKind::Http => {
                let key = b.api_key_env.as_deref().map(api_key_from_env).transpose()?;
                Backends::new(
                    cached(generator),
                    cached(HttpEstimator::new(url(&b.estimator_url), key.clone(), b.retry.clone())),
                    cached(HttpSimilarity::new(url(&b.similarity_url), key, b.retry.clone())),
                )
            }
        })
    }
}

fn url(u: &Option<String>) -> String {
    u.clone().expect("validated before backend construction")
}
