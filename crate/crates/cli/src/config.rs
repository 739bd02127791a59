//! One TOML run configuration covering every stage, with flag overrides.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use lexcite::baselines::KnnConfig;
use lexcite::cnn::{EmbeddingInit, ModelConfig};
use lexcite::corpus::SplitSpec;
use lexcite::embeddings::EmbedConfig;
use lexcite::synthetic::SyntheticSpec;
use lexcite::textprep::{PrepConfig, PrepMode};
use serde::{Deserialize, Serialize};

pub const DATA_DIR_ENV: &str = "LEXCITE_DATA_DIR";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    /// Prepared-data directory; falls back to `$LEXCITE_DATA_DIR`, then `data`.
    pub data: Option<PathBuf>,
    /// Defaults to `<data>/embeddings_<mode>.lxem`.
    pub embeddings: Option<PathBuf>,
    /// Defaults to `<data>/train/model.lxcn`.
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepSettings {
    pub mode: PrepMode,
    pub min_token_len: usize,
    pub include_title: bool,
    /// Replacement word lists; the bundled lists are used when unset.
    pub stopwords: Option<PathBuf>,
    pub boilerplate: Option<PathBuf>,
    pub lemma_exceptions: Option<PathBuf>,
}

impl Default for PrepSettings {
    fn default() -> Self {
        let d = PrepConfig::default();
        Self {
            mode: d.mode,
            min_token_len: d.min_token_len,
            include_title: d.include_title,
            stopwords: None,
            boilerplate: None,
            lemma_exceptions: None,
        }
    }
}

impl PrepSettings {
    pub fn build(&self) -> Result<PrepConfig> {
        let mut p = PrepConfig::default().with_mode(self.mode);
        p.min_token_len = self.min_token_len;
        p.include_title = self.include_title;
        if let Some(path) = &self.stopwords {
            p.load_stopwords(path)?;
        }
        if let Some(path) = &self.boilerplate {
            p.load_boilerplate(path)?;
        }
        if let Some(path) = &self.lemma_exceptions {
            p.load_lemma_exceptions(path)?;
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ClassWeighting {
    #[default]
    None,
    InverseFrequency,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// Standard deviation of the inference-time embedding noise; unset skips
    /// the robustness run.
    pub sigma: Option<f64>,
    pub ablation_kernels: Vec<Vec<usize>>,
    pub bench_reps: usize,
    pub bench_warmup: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            sigma: None,
            ablation_kernels: vec![vec![3], vec![3, 4], vec![2, 3, 5]],
            bench_reps: 100,
            bench_warmup: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds embedding training and noise sampling.
    pub seed: u64,
    pub class_weighting: ClassWeighting,
    pub paths: Paths,
    pub split: SplitSpec,
    pub prep: PrepSettings,
    pub embeddings: EmbedConfig,
    pub model: ModelConfig,
    pub knn: KnnConfig,
    pub evaluation: EvalSettings,
    pub synthetic: SyntheticSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            class_weighting: ClassWeighting::None,
            paths: Paths::default(),
            split: SplitSpec::default(),
            prep: PrepSettings::default(),
            embeddings: EmbedConfig::default(),
            model: ModelConfig::default(),
            knn: KnnConfig::default(),
            evaluation: EvalSettings::default(),
            synthetic: SyntheticSpec::default(),
        }
    }
}

/// Command-line values that take precedence over the config file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub data: Option<PathBuf>,
    pub kernels: Option<Vec<usize>>,
    pub embedding_init: Option<EmbeddingInit>,
    pub mode: Option<PrepMode>,
    pub class_weights: Option<ClassWeighting>,
    pub sigma: Option<f64>,
    pub reps: Option<usize>,
    pub warmup: Option<usize>,
    pub embeddings: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// Applies overrides, fills path defaults and checks every section.
    pub fn resolve(mut self, o: &Overrides, env_data_dir: Option<PathBuf>) -> Result<Self> {
        if let Some(seed) = o.seed {
            self.seed = seed;
            self.split.seed = seed;
            self.model.seed = seed;
        }
        if let Some(k) = &o.kernels {
            self.model.kernels = k.clone();
        }
        if let Some(init) = o.embedding_init {
            self.model.embedding_init = init;
        }
        if let Some(mode) = o.mode {
            self.prep.mode = mode;
        }
        if let Some(w) = o.class_weights {
            self.class_weighting = w;
        }
        if o.sigma.is_some() {
            self.evaluation.sigma = o.sigma;
        }
        if let Some(r) = o.reps {
            self.evaluation.bench_reps = r;
        }
        if let Some(w) = o.warmup {
            self.evaluation.bench_warmup = w;
        }
        if let Some(d) = &o.data {
            self.paths.data = Some(d.clone());
        }
        if self.paths.data.is_none() {
            self.paths.data = Some(env_data_dir.unwrap_or_else(|| PathBuf::from("data")));
        }
        if let Some(e) = &o.embeddings {
            self.paths.embeddings = Some(e.clone());
        }
        if let Some(m) = &o.model {
            self.paths.model = Some(m.clone());
        }
        // The tokens a model sees are fixed by the preprocessing mode.
        self.model.prep_mode = self.prep.mode;
        let data = self.data_dir().to_path_buf();
        if self.paths.embeddings.is_none() {
            self.paths.embeddings = Some(data.join(format!("embeddings_{}.lxem", self.prep.mode)));
        }
        if self.paths.model.is_none() {
            self.paths.model = Some(data.join("train").join("model.lxcn"));
        }
        self.split.validate()?;
        self.embeddings.validate()?;
        // The class count may still be left for the data to decide.
        let mut probe = self.model.clone();
        if probe.classes == 0 {
            probe.classes = 2;
        }
        probe.validate()?;
        if self.embeddings.dim != self.model.dim && self.model.embedding_init == EmbeddingInit::Pretrained {
            anyhow::bail!(
                "embedding dimension {} differs from model dimension {}",
                self.embeddings.dim,
                self.model.dim
            );
        }
        if let Some(s) = self.evaluation.sigma {
            anyhow::ensure!(s.is_finite() && s >= 0.0, "sigma must be a non-negative number, got {s}");
        }
        Ok(self)
    }

    pub fn data_dir(&self) -> &Path {
        self.paths.data.as_deref().unwrap_or(Path::new("data"))
    }

    pub fn embeddings_path(&self) -> PathBuf {
        self.paths.embeddings.clone().unwrap_or_else(|| self.data_dir().join("embeddings.lxem"))
    }

    pub fn model_path(&self) -> PathBuf {
        self.paths.model.clone().unwrap_or_else(|| self.data_dir().join("train/model.lxcn"))
    }

    /// Writes the resolved config as `config.toml` into `dir`.
    pub fn echo(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join("config.toml");
        std::fs::write(&path, self.to_toml()?).with_context(|| format!("writing {}", path.display()))
    }
}
