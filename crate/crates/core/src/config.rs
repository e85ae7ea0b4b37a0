//! The run configuration file (TOML).
//!
//! Relative paths are resolved against the directory holding the file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensemble::ScoreMode;
use crate::error::{Error, Result};
use crate::model::TrainingConfig;
use crate::search::SearchSpace;
use crate::text::PipelineConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub train: PathBuf,
    #[serde(default)]
    pub test: Option<PathBuf>,
    /// Embedding file per embedding name used in the search space.
    pub embeddings: BTreeMap<String, PathBuf>,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub sizes: Vec<usize>,
    pub runs: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            sizes: (1..=7).collect(),
            runs: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n")]
    pub n: usize,
    #[serde(default = "default_folds")]
    pub folds: usize,
    #[serde(default = "default_top_k")]
    pub top_k: Vec<usize>,
    #[serde(default = "default_true")]
    pub stratified: bool,
    #[serde(default)]
    pub score_mode: ScoreMode,
    #[serde(default)]
    pub jobs: Option<usize>,
    pub paths: PathsConfig,
    #[serde(default)]
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default)]
    pub space: SearchSpace,
    #[serde(default)]
    pub ablation: AblationConfig,
}

fn default_n() -> usize {
    100
}

fn default_folds() -> usize {
    5
}

fn default_top_k() -> Vec<usize> {
    vec![3, 10, 20]
}

fn default_true() -> bool {
    true
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub n: Option<usize>,
    pub folds: Option<usize>,
    pub top_k: Option<Vec<usize>>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn parse(content: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig =
            toml::from_str(content).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&content, base).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        join(&mut self.paths.train);
        if let Some(t) = &mut self.paths.test {
            join(t);
        }
        for p in self.paths.embeddings.values_mut() {
            join(p);
        }
        join(&mut self.paths.out);
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if let Some(v) = o.jobs {
            self.jobs = Some(v);
        }
        if let Some(v) = o.n {
            self.n = v;
        }
        if let Some(v) = o.folds {
            self.folds = v;
        }
        if let Some(v) = &o.top_k {
            self.top_k = v.clone();
        }
        if let Some(v) = &o.out {
            self.paths.out = v.clone();
        }
    }

    /// Checks values and that every referenced input exists.
    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.training.validate()?;
        self.space.validate()?;
        if self.n == 0 {
            return Err(Error::Config("n must be at least 1".into()));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        for name in &self.space.embeddings {
            if !self.paths.embeddings.contains_key(name) {
                return Err(Error::Config(format!(
                    "no embedding file configured for {name:?}"
                )));
            }
        }
        let mut inputs: Vec<&PathBuf> = vec![&self.paths.train];
        inputs.extend(self.paths.test.iter());
        inputs.extend(self.paths.embeddings.values());
        if let Some(missing) = inputs.iter().find(|p| !p.is_file()) {
            return Err(Error::Config(format!(
                "input file {} does not exist",
                missing.display()
            )));
        }
        Ok(())
    }

    /// Directory holding everything written for this seed.
    pub fn run_dir(&self) -> PathBuf {
        self.paths.out.join(format!("run-{:016x}", self.seed))
    }
}
