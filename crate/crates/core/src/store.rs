//! On-disk layout of a search run.
//!
//! ```text
//! <run>/models/ens-0003-fold-1.json   one model per file
//! <run>/ensembles/ens-0003.json       ensemble manifest
//! <run>/results.jsonl                 one record per configuration
//! <run>/stacks/top-20.json            stacked-ensemble manifest
//! ```
//!
//! Paths inside manifests are relative to the manifest's directory so that a
//! run directory can be moved or compared byte-for-byte with another run.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::ensemble::{FoldEnsemble, SharedEnsemble, StackedEnsemble};
use crate::error::{Error, Result};
use crate::model::{HyperParams, ModelWeights};
use crate::scalar::Real;

pub const RESULTS_FILE: &str = "results.jsonl";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleManifest {
    pub id: String,
    pub order: usize,
    pub hyperparams: HyperParams,
    pub folds: usize,
    pub members: Vec<String>,
    pub train_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackManifest {
    pub k: usize,
    /// Ensemble manifests in rank order.
    pub ensembles: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed,
}

/// One line of `results.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub index: usize,
    pub hyperparams: HyperParams,
    pub train_score: Option<f64>,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<String>,
    pub models: Vec<String>,
}

fn json_error(path: &Path, e: serde_json::Error) -> Error {
    Error::Json {
        path: path.into(),
        source: e,
    }
}

/// Writes through a temporary file so readers never see partial content.
pub fn write_atomic(path: &Path, content: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, content).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(|e| json_error(path, e))?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

pub fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&s).map_err(|e| json_error(path, e))
}

/// `target` expressed relative to directory `base`. Both must share a prefix.
pub fn relative_path(base: &Path, target: &Path) -> String {
    let b: Vec<Component> = base.components().collect();
    let t: Vec<Component> = target.components().collect();
    let common = b.iter().zip(&t).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &t[common..] {
        out.push(c.as_os_str());
    }
    out.to_string_lossy().replace('\\', "/")
}

fn resolve(base: &Path, rel: &str) -> PathBuf {
    base.join(rel)
}

/// Loads the ensemble described by a manifest.
pub fn load_ensemble<T: Real>(manifest_path: &Path) -> Result<FoldEnsemble<T>> {
    let m: EnsembleManifest = read_json(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let missing: Vec<PathBuf> = m
        .members
        .iter()
        .map(|p| resolve(dir, p))
        .filter(|p| !p.is_file())
        .collect();
    if !missing.is_empty() {
        let list: Vec<String> = missing.iter().map(|p| p.display().to_string()).collect();
        return Err(Error::Config(format!(
            "{}: missing member model files: {}",
            manifest_path.display(),
            list.join(", ")
        )));
    }
    let members = m
        .members
        .iter()
        .map(|p| ModelWeights::<T>::load(&resolve(dir, p)))
        .collect::<Result<Vec<_>>>()?;
    if members.len() != m.folds {
        return Err(Error::Config(format!(
            "{}: {} members listed for {} folds",
            manifest_path.display(),
            members.len(),
            m.folds
        )));
    }
    if let Some(bad) = members.iter().find(|w| w.hyperparams != m.hyperparams) {
        return Err(Error::Config(format!(
            "{}: member hyperparameters {:?} differ from manifest",
            manifest_path.display(),
            bad.hyperparams
        )));
    }
    Ok(FoldEnsemble {
        id: m.id,
        order: m.order,
        hyperparams: m.hyperparams,
        members,
        train_score: m.train_score,
    })
}

/// Loads every ensemble listed in a stacked manifest, in rank order.
pub fn load_stack<T: Real>(path: &Path) -> Result<StackedEnsemble<T>> {
    let m: StackManifest = read_json(path)?;
    if m.k == 0 || m.k != m.ensembles.len() {
        return Err(Error::Config(format!(
            "{}: K = {} but {} ensembles listed",
            path.display(),
            m.k,
            m.ensembles.len()
        )));
    }
    let dir = path.parent().unwrap_or(Path::new("."));
    let members = m
        .ensembles
        .iter()
        .map(|p| load_ensemble::<T>(&resolve(dir, p)).map(Arc::new))
        .collect::<Result<Vec<_>>>()?;
    Ok(StackedEnsemble { members })
}

/// A run directory.
#[derive(Debug)]
pub struct RunStore {
    root: PathBuf,
    results_lock: Mutex<()>,
}

impl RunStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self {
            root,
            results_lock: Mutex::new(()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn results_path(&self) -> PathBuf {
        self.root.join(RESULTS_FILE)
    }

    pub fn manifest_path(&self, id: &str) -> PathBuf {
        self.root.join("ensembles").join(format!("{id}.json"))
    }

    pub fn model_path(&self, id: &str, fold: usize) -> PathBuf {
        self.root.join("models").join(format!("{id}-fold-{fold}.json"))
    }

    pub fn stack_path(&self, k: usize) -> PathBuf {
        self.root.join("stacks").join(format!("top-{k}.json"))
    }

    /// Writes member models and the manifest; returns the record paths
    /// relative to the run directory.
    pub fn save_ensemble<T: Real>(&self, ens: &FoldEnsemble<T>) -> Result<(String, Vec<String>)> {
        let manifest_path = self.manifest_path(&ens.id);
        let manifest_dir = manifest_path.parent().expect("manifest has a parent");
        let mut members = Vec::new();
        let mut models = Vec::new();
        for (j, m) in ens.members.iter().enumerate() {
            let p = self.model_path(&ens.id, j);
            write_atomic(&p, m.to_json().as_bytes())?;
            members.push(relative_path(manifest_dir, &p));
            models.push(relative_path(&self.root, &p));
        }
        let manifest = EnsembleManifest {
            id: ens.id.clone(),
            order: ens.order,
            hyperparams: ens.hyperparams.clone(),
            folds: ens.members.len(),
            members,
            train_score: ens.train_score,
        };
        write_json(&manifest_path, &manifest)?;
        Ok((relative_path(&self.root, &manifest_path), models))
    }

    pub fn load_ensemble<T: Real>(&self, manifest_rel: &str) -> Result<FoldEnsemble<T>> {
        load_ensemble(&resolve(&self.root, manifest_rel))
    }

    pub fn save_stack<T: Real>(&self, stack: &StackedEnsemble<T>) -> Result<PathBuf> {
        let path = self.stack_path(stack.k());
        let dir = path.parent().expect("stack path has a parent");
        let manifest = StackManifest {
            k: stack.k(),
            ensembles: stack
                .members
                .iter()
                .map(|e| relative_path(dir, &self.manifest_path(&e.id)))
                .collect(),
        };
        write_json(&path, &manifest)?;
        Ok(path)
    }

    /// Appends one record; safe to call from concurrent workers.
    pub fn append_result(&self, record: &ResultRecord) -> Result<()> {
        let path = self.results_path();
        let line = serde_json::to_string(record).map_err(|e| json_error(&path, e))?;
        let _guard = self.results_lock.lock().unwrap_or_else(|p| p.into_inner());
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))
    }

    /// Latest record per index. A truncated final line from an interrupted
    /// run is ignored.
    pub fn read_results(&self) -> Result<BTreeMap<usize, ResultRecord>> {
        let path = self.results_path();
        if !path.exists() {
            return Ok(BTreeMap::new());
        }
        let content = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BTreeMap::new();
        let lines: Vec<&str> = content.lines().filter(|l| !l.trim().is_empty()).collect();
        for (i, line) in lines.iter().enumerate() {
            match serde_json::from_str::<ResultRecord>(line) {
                Ok(r) => {
                    out.insert(r.index, r);
                }
                Err(_) if i + 1 == lines.len() => log::warn!("ignoring truncated last line of {}", path.display()),
                Err(e) => return Err(json_error(&path, e)),
            }
        }
        Ok(out)
    }

    /// Rewrites the results file in index order.
    pub fn finalize_results(&self, records: &[ResultRecord]) -> Result<()> {
        let mut sorted = records.to_vec();
        sorted.sort_by_key(|r| r.index);
        let mut out = String::new();
        for r in &sorted {
            let line = serde_json::to_string(r).map_err(|e| json_error(&self.results_path(), e))?;
            out.push_str(&line);
            out.push('\n');
        }
        let _guard = self.results_lock.lock().unwrap_or_else(|p| p.into_inner());
        write_atomic(&self.results_path(), out.as_bytes())
    }

    /// Every successfully trained ensemble recorded in this run.
    pub fn load_completed<T: Real>(&self) -> Result<Vec<SharedEnsemble<T>>> {
        self.read_results()?
            .values()
            .filter(|r| r.status == Status::Ok)
            .map(|r| {
                let m = r.manifest.as_deref().ok_or_else(|| {
                    Error::Config(format!("result {} has no manifest", r.index))
                })?;
                self.load_ensemble(m).map(Arc::new)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_paths() {
        assert_eq!(
            relative_path(Path::new("/r/ensembles"), Path::new("/r/models/a.json")),
            "../models/a.json"
        );
        assert_eq!(relative_path(Path::new("/r"), Path::new("/r/results.jsonl")), "results.jsonl");
        assert_eq!(
            relative_path(Path::new("out/run/stacks"), Path::new("out/run/ensembles/e.json")),
            "../ensembles/e.json"
        );
    }
}
