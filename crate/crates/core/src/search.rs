//! Random search over the hyperparameter grid and the fixed-filter-size
//! ablation.

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::{rank_ensembles, train_fold_ensemble, FoldPlan, ScoreMode, SharedEnsemble};
use crate::error::{Error, Result};
use crate::model::{HyperParams, TrainingConfig};
use crate::rng::{derive_seed, stream, Rng};
use crate::scalar::Real;
use crate::store::{ResultRecord, RunStore, Status};
use crate::text::EncodedCorpus;

/// Candidate values for every hyperparameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub embeddings: Vec<String>,
    pub num_filters: Vec<usize>,
    pub filter_sizes: Vec<Vec<usize>>,
    pub dense_sizes: Vec<usize>,
    pub dropout: Vec<f64>,
    pub batch_sizes: Vec<usize>,
    pub learning_rates: Vec<f64>,
    pub adam_beta2: Vec<f64>,
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            embeddings: vec!["godin".into(), "shin".into()],
            num_filters: vec![100, 200, 300, 400],
            filter_sizes: vec![
                vec![1, 2, 3, 4, 5],
                vec![2, 3, 4, 5, 6],
                vec![3, 4, 5, 6, 7],
                vec![1, 2, 2, 2, 3],
                vec![2, 3, 3, 3, 4],
                vec![3, 4, 4, 4, 5],
                vec![4, 5, 5, 5, 6],
            ],
            dense_sizes: vec![100, 200, 300, 400],
            dropout: vec![0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            batch_sizes: vec![50, 100, 150],
            learning_rates: vec![0.0001, 0.001],
            adam_beta2: vec![0.9, 0.999],
        }
    }
}

impl SearchSpace {
    pub fn cardinality(&self) -> usize {
        self.embeddings.len()
            * self.num_filters.len()
            * self.filter_sizes.len()
            * self.dense_sizes.len()
            * self.dropout.len()
            * self.batch_sizes.len()
            * self.learning_rates.len()
            * self.adam_beta2.len()
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("embeddings", self.embeddings.is_empty()),
            ("num_filters", self.num_filters.is_empty()),
            ("filter_sizes", self.filter_sizes.is_empty()),
            ("dense_sizes", self.dense_sizes.is_empty()),
            ("dropout", self.dropout.is_empty()),
            ("batch_sizes", self.batch_sizes.is_empty()),
            ("learning_rates", self.learning_rates.is_empty()),
            ("adam_beta2", self.adam_beta2.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|(_, e)| *e) {
            return Err(Error::Config(format!("search space field {name} is empty")));
        }
        Ok(())
    }

    /// Every value of `hp` is one of this space's candidates.
    pub fn contains(&self, hp: &HyperParams) -> bool {
        self.embeddings.contains(&hp.embedding)
            && self.num_filters.contains(&hp.num_filters)
            && self.filter_sizes.contains(&hp.filter_sizes)
            && self.dense_sizes.contains(&hp.dense_size)
            && self.dropout.contains(&hp.dropout)
            && self.batch_sizes.contains(&hp.batch_size)
            && self.learning_rates.contains(&hp.learning_rate)
            && self.adam_beta2.contains(&hp.adam_beta2)
    }
}

fn pick<'a, V>(rng: &mut Rng, values: &'a [V]) -> &'a V {
    &values[rng.below(values.len())]
}

/// Draws every field independently and uniformly, in declaration order.
pub fn sample_config(space: &SearchSpace, rng: &mut Rng) -> HyperParams {
    HyperParams {
        embedding: pick(rng, &space.embeddings).clone(),
        num_filters: *pick(rng, &space.num_filters),
        filter_sizes: pick(rng, &space.filter_sizes).clone(),
        dense_size: *pick(rng, &space.dense_sizes),
        dropout: *pick(rng, &space.dropout),
        batch_size: *pick(rng, &space.batch_sizes),
        learning_rate: *pick(rng, &space.learning_rates),
        adam_beta2: *pick(rng, &space.adam_beta2),
    }
}

/// The configurations a run with `seed` trains, in order.
pub fn sample_configs(space: &SearchSpace, n: usize, seed: u64) -> Vec<HyperParams> {
    let mut rng = Rng::new(derive_seed(seed, &[stream::SEARCH]));
    (0..n).map(|_| sample_config(space, &mut rng)).collect()
}

pub fn ensemble_id(index: usize) -> String {
    format!("ens-{index:04}")
}

/// Training seed of the ensemble at `index`.
pub fn ensemble_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &[stream::INIT, index as u64])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub index: usize,
    pub hyperparams: HyperParams,
    pub ensemble_id: String,
    pub train_score: f64,
    /// Zero for ensembles reloaded from a previous run.
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchFailure {
    pub index: usize,
    pub hyperparams: HyperParams,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRun {
    pub n: usize,
    pub seed: u64,
    pub results: Vec<SearchResult>,
    pub failures: Vec<SearchFailure>,
}

#[derive(Debug, Clone)]
pub struct SearchOutcome<T> {
    pub run: SearchRun,
    pub ranked: Vec<SharedEnsemble<T>>,
}

#[derive(Debug, Clone)]
pub struct SearchSettings {
    pub n: usize,
    pub seed: u64,
    pub score_mode: ScoreMode,
}

enum Trained<T> {
    Done(SharedEnsemble<T>, f64, ResultRecord),
    Failed(ResultRecord),
}

fn train_one<T: Real>(
    index: usize,
    hp: &HyperParams,
    corpus: &EncodedCorpus<T>,
    plan: &FoldPlan,
    tc: &TrainingConfig,
    settings: &SearchSettings,
    store: Option<&RunStore>,
    previous: Option<&ResultRecord>,
) -> Trained<T> {
    let id = ensemble_id(index);
    if let (Some(store), Some(prev)) = (store, previous) {
        if prev.status == Status::Ok && &prev.hyperparams == hp {
            if let Some(m) = prev.manifest.as_deref() {
                match store.load_ensemble::<T>(m) {
                    Ok(ens) => {
                        log::info!("{id}: reusing completed ensemble (F12 {:.4})", ens.train_score);
                        return Trained::Done(Arc::new(ens), 0.0, prev.clone());
                    }
                    Err(e) => log::warn!("{id}: cannot reload ({e}); retraining"),
                }
            }
        }
    }

    let failed = |error: String| ResultRecord {
        index,
        hyperparams: hp.clone(),
        train_score: None,
        status: Status::Failed,
        error: Some(error),
        manifest: None,
        models: Vec::new(),
    };
    let start = Instant::now();
    let trained = corpus.encoded(&hp.embedding).and_then(|data| {
        train_fold_ensemble(
            id.clone(),
            index,
            hp,
            tc,
            data,
            plan,
            ensemble_seed(settings.seed, index),
            settings.score_mode,
        )
    });
    let ens = match trained {
        Ok(e) => e,
        Err(e) => {
            log::warn!("{id}: training failed: {e}");
            let rec = failed(e.to_string());
            if let Some(store) = store {
                if let Err(e) = store.append_result(&rec) {
                    log::warn!("{id}: cannot record failure: {e}");
                }
            }
            return Trained::Failed(rec);
        }
    };
    let secs = start.elapsed().as_secs_f64();
    log::info!("{id}: F12 {:.4} in {secs:.1}s", ens.train_score);

    let mut record = ResultRecord {
        index,
        hyperparams: hp.clone(),
        train_score: Some(ens.train_score),
        status: Status::Ok,
        error: None,
        manifest: None,
        models: Vec::new(),
    };
    if let Some(store) = store {
        let saved = store
            .save_ensemble(&ens)
            .and_then(|(manifest, models)| {
                record.manifest = Some(manifest);
                record.models = models;
                store.append_result(&record)
            });
        if let Err(e) = saved {
            log::warn!("{id}: cannot persist: {e}");
            return Trained::Failed(failed(format!("persist: {e}")));
        }
    }
    Trained::Done(Arc::new(ens), secs, record)
}

/// Samples `settings.n` configurations, trains a fold ensemble for each, and
/// ranks the successes.
///
/// With a `store`, each completed ensemble is persisted as soon as it
/// finishes and a rerun with the same seed reuses it instead of retraining.
/// Failures are recorded and do not abort the run.
pub fn run_search<T: Real>(
    space: &SearchSpace,
    settings: &SearchSettings,
    corpus: &EncodedCorpus<T>,
    plan: &FoldPlan,
    tc: &TrainingConfig,
    store: Option<&RunStore>,
) -> Result<SearchOutcome<T>> {
    if settings.n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    space.validate()?;
    let configs = sample_configs(space, settings.n, settings.seed);
    let previous = match store {
        Some(s) => s.read_results()?,
        None => Default::default(),
    };

    let outcomes: Vec<Trained<T>> = configs
        .par_iter()
        .enumerate()
        .map(|(i, hp)| train_one(i, hp, corpus, plan, tc, settings, store, previous.get(&i)))
        .collect();

    let mut run = SearchRun {
        n: settings.n,
        seed: settings.seed,
        results: Vec::new(),
        failures: Vec::new(),
    };
    let mut ensembles = Vec::new();
    let mut records = Vec::new();
    for (i, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Trained::Done(ens, secs, rec) => {
                run.results.push(SearchResult {
                    index: i,
                    hyperparams: ens.hyperparams.clone(),
                    ensemble_id: ens.id.clone(),
                    train_score: ens.train_score,
                    wall_time_secs: secs,
                });
                ensembles.push(ens);
                records.push(rec);
            }
            Trained::Failed(rec) => {
                run.failures.push(SearchFailure {
                    index: i,
                    hyperparams: rec.hyperparams.clone(),
                    error: rec.error.clone().unwrap_or_default(),
                });
                records.push(rec);
            }
        }
    }
    if let Some(store) = store {
        store.finalize_results(&records)?;
    }
    if ensembles.is_empty() {
        return Err(Error::Training(format!(
            "all {} configurations failed",
            settings.n
        )));
    }
    Ok(SearchOutcome {
        run,
        ranked: rank_ensembles(ensembles)?,
    })
}

/// Mean and sample (n − 1) standard deviation.
pub fn mean_and_sample_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub filter_size: usize,
    pub mean: f64,
    pub std: f64,
    pub scores: Vec<f64>,
}

/// Hyperparameters of ablation run `run` at fixed filter size `size`.
///
/// Learning rate and filter count cycle through the space's candidates
/// (learning rate fastest); every other field takes its first candidate.
pub fn ablation_config(space: &SearchSpace, size: usize, run: usize) -> HyperParams {
    let nlr = space.learning_rates.len();
    HyperParams {
        embedding: space.embeddings[0].clone(),
        num_filters: space.num_filters[(run / nlr) % space.num_filters.len()],
        filter_sizes: vec![size; crate::model::NUM_BANKS],
        dense_size: space.dense_sizes[0],
        dropout: space.dropout[0],
        batch_size: space.batch_sizes[0],
        learning_rate: space.learning_rates[run % nlr],
        adam_beta2: space.adam_beta2[0],
    }
}

/// Trains `runs` fold ensembles per filter size with all five banks at that
/// size and reports the mean and sample standard deviation of their scores.
pub fn filter_size_experiment<T: Real>(
    space: &SearchSpace,
    corpus: &EncodedCorpus<T>,
    plan: &FoldPlan,
    tc: &TrainingConfig,
    sizes: &[usize],
    runs: usize,
    seed: u64,
    score_mode: ScoreMode,
) -> Result<Vec<AblationRow>> {
    if runs < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 runs, got {runs}")));
    }
    space.validate()?;
    sizes
        .iter()
        .map(|&size| {
            let scores = (0..runs)
                .into_par_iter()
                .map(|r| {
                    let hp = ablation_config(space, size, r);
                    let data = corpus.encoded(&hp.embedding)?;
                    let seed = derive_seed(seed, &[stream::ABLATION, size as u64, r as u64]);
                    let id = format!("ablate-{size}-{r}");
                    train_fold_ensemble(id, r, &hp, tc, data, plan, seed, score_mode)
                        .map(|e| e.train_score)
                })
                .collect::<Result<Vec<f64>>>()?;
            let (mean, std) = mean_and_sample_std(&scores);
            Ok(AblationRow {
                filter_size: size,
                mean,
                std,
                scores,
            })
        })
        .collect()
}

pub fn ablation_tsv(rows: &[AblationRow]) -> String {
    let mut out = String::from("filter_size\tmean\tstd\truns\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{:.6}\t{:.6}\t{}\n",
            r.filter_size,
            r.mean,
            r.std,
            r.scores.len()
        ));
    }
    out
}

pub fn ablation_text(rows: &[AblationRow]) -> String {
    let mut out = format!("{:>11}  {:>8}  {:>8}  {:>4}\n", "filter size", "mean F12", "std", "runs");
    for r in rows {
        out.push_str(&format!(
            "{:>11}  {:>8.4}  {:>8.4}  {:>4}\n",
            r.filter_size,
            r.mean,
            r.std,
            r.scores.len()
        ));
    }
    out
}
