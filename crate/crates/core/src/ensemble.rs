//! Fold ensembles, ranking, and top-K stacking.
//!
//! A fold ensemble is the `c` models of one cross-validation run under a
//! single hyperparameter point; it predicts by the plain mean of its members'
//! distributions. A stacked ensemble is the best `K` fold ensembles by
//! training score; it predicts by the plain mean of their distributions.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::class::Class;
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{classify, train_model, HyperParams, ModelWeights, TrainingConfig, NUM_CLASSES};
use crate::rng::{derive_seed, stream, Rng};
use crate::scalar::Real;
use crate::text::{EncodedCorpus, EncodedExample, EncodedInput};

/// Assignment of every example to one of `folds` folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub folds: usize,
    pub assignments: Vec<usize>,
    pub stratified: bool,
    pub seed: u64,
}

impl FoldPlan {
    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.folds];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    /// `(train, held_out)` example indices for fold `j`.
    pub fn split(&self, j: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.assignments.len()).partition(|&i| self.assignments[i] != j)
    }
}

/// Deterministic c-fold assignment.
///
/// Examples are shuffled (per class when stratified) and dealt round-robin,
/// with the fold cursor carried across classes so overall fold sizes and
/// per-class fold counts each differ by at most one.
pub fn kfold_split(labels: &[Class], folds: usize, seed: u64, stratified: bool) -> Result<FoldPlan> {
    if folds < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {folds}")));
    }
    if labels.len() < folds {
        return Err(Error::InvalidArgument(format!(
            "{folds} folds requested for {} examples",
            labels.len()
        )));
    }
    let mut rng = Rng::new(seed);
    let groups: Vec<Vec<usize>> = if stratified {
        Class::ALL
            .iter()
            .map(|&c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
            .collect()
    } else {
        vec![(0..labels.len()).collect()]
    };
    let mut assignments = vec![0; labels.len()];
    let mut cursor = 0;
    for mut group in groups {
        rng.shuffle(&mut group);
        for i in group {
            assignments[i] = cursor % folds;
            cursor += 1;
        }
    }
    Ok(FoldPlan {
        folds,
        assignments,
        stratified,
        seed,
    })
}

/// Which predictions produce an ensemble's ranking score.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    /// Averaged predictions of all members over the whole training set.
    #[default]
    FullTrain,
    /// Each example predicted only by the member that held it out.
    HeldOut,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldEnsemble<T> {
    pub id: String,
    /// Position in training order; breaks ranking ties.
    pub order: usize,
    pub hyperparams: HyperParams,
    /// Member `j` was trained with fold `j` held out.
    pub members: Vec<ModelWeights<T>>,
    pub train_score: f64,
}

pub type SharedEnsemble<T> = Arc<FoldEnsemble<T>>;

/// Plain mean of class distributions, accumulated in `f64`.
pub fn mean_distribution<T: Real, I>(distributions: I) -> Result<[T; 3]>
where
    I: IntoIterator<Item = [T; 3]>,
{
    let mut sum = [0.0f64; NUM_CLASSES];
    let mut n = 0usize;
    for d in distributions {
        for (s, v) in sum.iter_mut().zip(d) {
            *s += v.to_f64_lossy();
        }
        n += 1;
    }
    if n == 0 {
        return Err(Error::InvalidArgument("mean of zero distributions".into()));
    }
    Ok(sum.map(|s| T::lit(s / n as f64)))
}

/// Mean of the members' distributions.
pub fn fold_ensemble_predict<T: Real>(
    ens: &FoldEnsemble<T>,
    input: &impl EncodedInput<T>,
) -> Result<[T; 3]> {
    let x = input.encoding(&ens.hyperparams.embedding)?;
    let probs = ens
        .members
        .iter()
        .map(|m| m.predict_proba(x))
        .collect::<Result<Vec<_>>>()?;
    mean_distribution(probs)
}

/// Seeds of member `j` of an ensemble trained from `seed`.
fn member_rng(seed: u64, j: usize) -> (Rng, u64) {
    (
        Rng::new(derive_seed(seed, &[stream::INIT, j as u64])),
        derive_seed(seed, &[stream::SHUFFLE, j as u64]),
    )
}

/// Trains one model per fold and scores the resulting ensemble on `data`.
pub fn train_fold_ensemble<T: Real>(
    id: impl Into<String>,
    order: usize,
    hp: &HyperParams,
    tc: &TrainingConfig,
    data: &[EncodedExample<T>],
    plan: &FoldPlan,
    seed: u64,
    score_mode: ScoreMode,
) -> Result<FoldEnsemble<T>> {
    if plan.assignments.len() != data.len() {
        return Err(Error::InvalidArgument(format!(
            "fold plan covers {} examples, dataset has {}",
            plan.assignments.len(),
            data.len()
        )));
    }
    let members = (0..plan.folds)
        .into_par_iter()
        .map(|j| {
            let (train_idx, val_idx) = plan.split(j);
            let train: Vec<_> = train_idx.iter().map(|&i| data[i].clone()).collect();
            let val: Vec<_> = val_idx.iter().map(|&i| data[i].clone()).collect();
            let (mut rng, shuffle_seed) = member_rng(seed, j);
            let tc = TrainingConfig {
                shuffle_seed,
                ..tc.clone()
            };
            train_model(hp, &tc, &train, &val, &mut rng).map(|o| o.model)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut ens = FoldEnsemble {
        id: id.into(),
        order,
        hyperparams: hp.clone(),
        members,
        train_score: 0.0,
    };
    let gold: Vec<Class> = data.iter().map(|e| e.label).collect();
    let pred = match score_mode {
        ScoreMode::FullTrain => data
            .iter()
            .map(|x| fold_ensemble_predict(&ens, x).map(|d| classify(&d)))
            .collect::<Result<Vec<_>>>()?,
        ScoreMode::HeldOut => data
            .iter()
            .zip(&plan.assignments)
            .map(|(x, &j)| ens.members[j].predict_proba(x).map(|d| classify(&d)))
            .collect::<Result<Vec<_>>>()?,
    };
    ens.train_score = metrics::f12(&gold, &pred)?;
    Ok(ens)
}

/// Indices sorted by descending score; ties keep input order.
pub fn rank_indices(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx
}

/// Sorts by descending training score, breaking ties by training order.
pub fn rank_ensembles<T: Real>(mut ensembles: Vec<SharedEnsemble<T>>) -> Result<Vec<SharedEnsemble<T>>> {
    if ensembles.is_empty() {
        return Err(Error::InvalidArgument("no ensembles to rank".into()));
    }
    ensembles.sort_by(|a, b| {
        b.train_score
            .total_cmp(&a.train_score)
            .then(a.order.cmp(&b.order))
    });
    Ok(ensembles)
}

#[derive(Debug, Clone)]
pub struct StackedEnsemble<T> {
    pub members: Vec<SharedEnsemble<T>>,
}

impl<T> StackedEnsemble<T> {
    pub fn k(&self) -> usize {
        self.members.len()
    }
}

/// The first `k` ensembles of a ranked list.
pub fn stack_top_k<T: Real>(ranked: &[SharedEnsemble<T>], k: usize) -> Result<StackedEnsemble<T>> {
    if k == 0 || k > ranked.len() {
        return Err(Error::InvalidArgument(format!(
            "K = {k} outside 1..={}",
            ranked.len()
        )));
    }
    Ok(StackedEnsemble {
        members: ranked[..k].to_vec(),
    })
}

/// Mean of the member ensembles' distributions.
pub fn stacked_predict<T: Real>(
    stack: &StackedEnsemble<T>,
    input: &impl EncodedInput<T>,
) -> Result<[T; 3]> {
    let dists = stack
        .members
        .iter()
        .map(|e| fold_ensemble_predict(e, input))
        .collect::<Result<Vec<_>>>()?;
    mean_distribution(dists)
}

/// Distribution of `ens` for every example of `corpus`.
pub fn ensemble_distributions<T: Real>(
    ens: &FoldEnsemble<T>,
    corpus: &EncodedCorpus<T>,
) -> Result<Vec<[T; 3]>> {
    (0..corpus.len())
        .into_par_iter()
        .map(|i| fold_ensemble_predict(ens, &corpus.item(i)))
        .collect()
}

/// Per-example mean over several ensembles' cached distributions.
pub fn stack_distributions<T: Real>(per_ensemble: &[Vec<[T; 3]>]) -> Result<Vec<[T; 3]>> {
    let n = per_ensemble.first().map_or(0, Vec::len);
    if per_ensemble.iter().any(|d| d.len() != n) {
        return Err(Error::Shape("ensembles scored on different corpora".into()));
    }
    (0..n)
        .map(|i| mean_distribution(per_ensemble.iter().map(|d| d[i])))
        .collect()
}
