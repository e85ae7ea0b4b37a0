//! The shallow CNN: per-size filter banks, max-over-time pooling, one hidden
//! dense layer, and a 3-way softmax output.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::class::Class;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::metrics;
use crate::nn::{
    self, adam_step, anneal_restart, cross_entropy, dense_backward, dense_forward, relu,
    softmax_cross_entropy_grad, xavier_init, Activation, AdamState, DropoutSpec,
};
use crate::rng::{stream, Rng};
use crate::scalar::Real;
use crate::text::EncodedExample;

/// Number of filter banks (one per entry of `filter_sizes`).
pub const NUM_BANKS: usize = 5;
pub const NUM_CLASSES: usize = 3;
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// One point of the search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    /// Key of the embedding file the model reads.
    pub embedding: String,
    /// Filters per bank.
    pub num_filters: usize,
    pub filter_sizes: Vec<usize>,
    pub dense_size: usize,
    /// Probability of dropping a pooled feature during training.
    pub dropout: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_beta2: f64,
}

impl HyperParams {
    /// Structural checks; membership in a search space is checked by
    /// `SearchSpace::contains`.
    pub fn validate(&self, max_len: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.filter_sizes.len() != NUM_BANKS {
            return fail(format!(
                "filter_sizes needs exactly {NUM_BANKS} entries, got {:?}",
                self.filter_sizes
            ));
        }
        if let Some(&s) = self.filter_sizes.iter().find(|&&s| s == 0 || s > max_len) {
            return fail(format!("filter size {s} outside 1..={max_len}"));
        }
        if self.num_filters == 0 || self.dense_size == 0 || self.batch_size == 0 {
            return fail("num_filters, dense_size and batch_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(self.adam_beta2 > 0.0 && self.adam_beta2 < 1.0) {
            return fail(format!("adam beta2 {} outside (0, 1)", self.adam_beta2));
        }
        Ok(())
    }

    pub fn pooled_width(&self) -> usize {
        NUM_BANKS * self.num_filters
    }
}

/// Filters of one width. `weights` is `(width · dim) × num_filters`: column
/// `f` is filter `f` flattened row-major over its `width × dim` window.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBank<T> {
    pub width: usize,
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

/// Trainable parameters. Also used as the gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub banks: Vec<ConvBank<T>>,
    pub dense_w: Matrix<T>,
    pub dense_b: Vec<T>,
    pub out_w: Matrix<T>,
    pub out_b: Vec<T>,
}

impl<T: Real> Params<T> {
    pub fn zeros_like(&self) -> Self {
        Self {
            banks: self
                .banks
                .iter()
                .map(|b| ConvBank {
                    width: b.width,
                    weights: Matrix::zeros(b.weights.rows(), b.weights.cols()),
                    bias: vec![T::zero(); b.bias.len()],
                })
                .collect(),
            dense_w: Matrix::zeros(self.dense_w.rows(), self.dense_w.cols()),
            dense_b: vec![T::zero(); self.dense_b.len()],
            out_w: Matrix::zeros(self.out_w.rows(), self.out_w.cols()),
            out_b: vec![T::zero(); self.out_b.len()],
        }
    }

    /// Parameter blocks in a fixed order: each bank's weights then bias,
    /// then the dense layer, then the output layer.
    pub fn blocks(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = Vec::with_capacity(2 * self.banks.len() + 4);
        for b in &self.banks {
            out.push(b.weights.as_slice());
            out.push(&b.bias);
        }
        out.push(self.dense_w.as_slice());
        out.push(&self.dense_b);
        out.push(self.out_w.as_slice());
        out.push(&self.out_b);
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = Vec::with_capacity(2 * self.banks.len() + 4);
        for b in &mut self.banks {
            out.push(b.weights.as_mut_slice());
            out.push(&mut b.bias);
        }
        out.push(self.dense_w.as_mut_slice());
        out.push(&mut self.dense_b);
        out.push(self.out_w.as_mut_slice());
        out.push(&mut self.out_b);
        out
    }

    pub fn block_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 0..self.banks.len() {
            out.push(format!("conv[{i}].weights"));
            out.push(format!("conv[{i}].bias"));
        }
        out.extend(["dense.weights", "dense.bias", "output.weights", "output.bias"].map(String::from));
        out
    }

    fn scale(&mut self, k: T) {
        for block in self.blocks_mut() {
            block.iter_mut().for_each(|x| *x *= k);
        }
    }
}

/// A complete model: parameters plus the configuration that fixes their shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights<T> {
    pub hyperparams: HyperParams,
    pub embedding_dim: usize,
    pub max_len: usize,
    pub params: Params<T>,
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    /// Pooled feature per (bank, filter), bank-major.
    pub pooled: Vec<T>,
    /// Position of the pooled maximum per (bank, filter).
    pub argmax: Vec<usize>,
    pub mask: Option<Vec<T>>,
    pub dropped: Vec<T>,
    pub hidden: Vec<T>,
    pub logits: Vec<T>,
    pub probs: [T; 3],
}

/// Xavier-initialized weights and zero biases for `hp`.
pub fn build_model<T: Real>(
    hp: &HyperParams,
    dim: usize,
    max_len: usize,
    rng: &mut Rng,
) -> Result<ModelWeights<T>> {
    if dim == 0 {
        return Err(Error::Config("embedding dimension must be positive".into()));
    }
    hp.validate(max_len)?;
    let f = hp.num_filters;
    let banks = hp
        .filter_sizes
        .iter()
        .map(|&w| ConvBank {
            width: w,
            weights: xavier_init(w * dim, f, rng),
            bias: vec![T::zero(); f],
        })
        .collect();
    let params = Params {
        banks,
        dense_w: xavier_init(hp.pooled_width(), hp.dense_size, rng),
        dense_b: vec![T::zero(); hp.dense_size],
        out_w: xavier_init(hp.dense_size, NUM_CLASSES, rng),
        out_b: vec![T::zero(); NUM_CLASSES],
    };
    Ok(ModelWeights {
        hyperparams: hp.clone(),
        embedding_dim: dim,
        max_len,
        params,
    })
}

/// Max-over-time of ReLU(conv) for every filter of one bank.
fn bank_forward<T: Real>(bank: &ConvBank<T>, input: &Matrix<T>, pooled: &mut Vec<T>, argmax: &mut Vec<usize>) {
    let nf = bank.bias.len();
    let positions = input.rows() + 1 - bank.width;
    let mut best = vec![T::zero(); nf];
    let mut best_at = vec![0usize; nf];
    let mut acc = vec![T::zero(); nf];
    for t in 0..positions {
        acc.copy_from_slice(&bank.bias);
        for (k, &x) in input.row_span(t, bank.width).iter().enumerate() {
            if x == T::zero() {
                continue;
            }
            for (a, &w) in acc.iter_mut().zip(bank.weights.row(k)) {
                *a += x * w;
            }
        }
        for f in 0..nf {
            let v = relu(acc[f]);
            if t == 0 || v > best[f] {
                best[f] = v;
                best_at[f] = t;
            }
        }
    }
    pooled.extend_from_slice(&best);
    argmax.extend_from_slice(&best_at);
}

fn bank_backward<T: Real>(
    bank: &ConvBank<T>,
    input: &Matrix<T>,
    pooled: &[T],
    argmax: &[usize],
    grad_pooled: &[T],
    grad: &mut ConvBank<T>,
) {
    for f in 0..bank.bias.len() {
        let g = grad_pooled[f];
        if pooled[f] <= T::zero() || g == T::zero() {
            continue;
        }
        grad.bias[f] += g;
        let window = input.row_span(argmax[f], bank.width);
        let cols = grad.weights.cols();
        let gw = grad.weights.as_mut_slice();
        for (k, &x) in window.iter().enumerate() {
            gw[k * cols + f] += x * g;
        }
    }
}

impl<T: Real> ModelWeights<T> {
    fn check_input(&self, input: &Matrix<T>) -> Result<()> {
        if input.shape() != (self.max_len, self.embedding_dim) {
            return Err(Error::Shape(format!(
                "input is {}×{}, model expects {}×{}",
                input.rows(),
                input.cols(),
                self.max_len,
                self.embedding_dim
            )));
        }
        Ok(())
    }

    /// Forward pass. `mask` holds the dropout multipliers for the pooled
    /// features; `None` is inference.
    pub fn forward(&self, input: &Matrix<T>, mask: Option<Vec<T>>) -> Result<Trace<T>> {
        self.check_input(input)?;
        Ok(self.forward_unchecked(input, mask))
    }

    fn forward_unchecked(&self, input: &Matrix<T>, mask: Option<Vec<T>>) -> Trace<T> {
        let p = &self.params;
        let width = self.hyperparams.pooled_width();
        let mut pooled = Vec::with_capacity(width);
        let mut argmax = Vec::with_capacity(width);
        for bank in &p.banks {
            bank_forward(bank, input, &mut pooled, &mut argmax);
        }
        let dropped = match &mask {
            Some(m) => pooled.iter().zip(m).map(|(&x, &k)| x * k).collect(),
            None => pooled.clone(),
        };
        let hidden = dense_forward(&dropped, &p.dense_w, &p.dense_b, Activation::Relu);
        let logits = dense_forward(&hidden, &p.out_w, &p.out_b, Activation::Identity);
        // logits are finite for finite weights; a NaN here means diverged training
        let probs = nn::softmax(&logits).unwrap_or_else(|_| vec![T::nan(); NUM_CLASSES]);
        Trace {
            pooled,
            argmax,
            mask,
            dropped,
            hidden,
            logits,
            probs: [probs[0], probs[1], probs[2]],
        }
    }

    /// Adds the cross-entropy gradient of one example to `grads`.
    pub fn backward(&self, input: &Matrix<T>, trace: &Trace<T>, gold: Class, grads: &mut Params<T>) {
        let p = &self.params;
        let g_logits = softmax_cross_entropy_grad(&trace.probs, gold);
        let g_hidden = dense_backward(
            &trace.hidden,
            &p.out_w,
            &trace.logits,
            Activation::Identity,
            &g_logits,
            &mut grads.out_w,
            &mut grads.out_b,
        );
        let mut g_pooled = dense_backward(
            &trace.dropped,
            &p.dense_w,
            &trace.hidden,
            Activation::Relu,
            &g_hidden,
            &mut grads.dense_w,
            &mut grads.dense_b,
        );
        if let Some(mask) = &trace.mask {
            for (g, &m) in g_pooled.iter_mut().zip(mask) {
                *g *= m;
            }
        }
        let nf = self.hyperparams.num_filters;
        for (b, (bank, gbank)) in p.banks.iter().zip(grads.banks.iter_mut()).enumerate() {
            let r = b * nf..(b + 1) * nf;
            bank_backward(
                bank,
                input,
                &trace.pooled[r.clone()],
                &trace.argmax[r.clone()],
                &g_pooled[r],
                gbank,
            );
        }
    }

    /// Loss of one example under a fixed dropout mask.
    pub fn loss(&self, input: &Matrix<T>, gold: Class, mask: Option<Vec<T>>) -> Result<f64> {
        let trace = self.forward(input, mask)?;
        Ok(cross_entropy(&trace.probs, gold))
    }

    /// Loss and full gradient of one example under a fixed dropout mask.
    pub fn loss_and_gradient(
        &self,
        input: &Matrix<T>,
        gold: Class,
        mask: Option<Vec<T>>,
    ) -> Result<(f64, Params<T>)> {
        let trace = self.forward(input, mask)?;
        let mut grads = self.params.zeros_like();
        self.backward(input, &trace, gold, &mut grads);
        Ok((cross_entropy(&trace.probs, gold), grads))
    }

    /// Class probabilities with dropout inactive.
    pub fn predict_proba(&self, example: &EncodedExample<T>) -> Result<[T; 3]> {
        Ok(self.forward(&example.matrix, None)?.probs)
    }
}

/// Argmax of a class distribution; ties go to the lower class.
pub fn classify<T: Real>(distribution: &[T; 3]) -> Class {
    let mut best = 0;
    for i in 1..NUM_CLASSES {
        if distribution[i] > distribution[best] {
            best = i;
        }
    }
    Class::from_index(best).expect("index < 3")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub max_epochs: usize,
    /// Epochs without validation improvement before an annealing restart.
    pub patience: usize,
    pub max_restarts: usize,
    pub shuffle_seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            max_epochs: 30,
            patience: 3,
            max_restarts: 2,
            shuffle_seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::Config("max_epochs and patience must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_f12: f64,
    /// Learning rate used during this epoch.
    pub learning_rate: f64,
    /// An annealing restart was applied at the end of this epoch.
    pub restarted: bool,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    /// Weights of the best validation epoch.
    pub model: ModelWeights<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_f12: f64,
    pub restarts: usize,
}

fn check_split<T: Real>(name: &str, split: &[EncodedExample<T>], shape: (usize, usize)) -> Result<()> {
    if split.is_empty() {
        return Err(Error::InvalidArgument(format!("{name} split is empty")));
    }
    if let Some(ex) = split.iter().find(|e| e.matrix.shape() != shape) {
        return Err(Error::Shape(format!(
            "{name} example {} is {:?}, expected {shape:?}",
            ex.id,
            ex.matrix.shape()
        )));
    }
    Ok(())
}

/// F over classes 1 and 2 of `model` on `data`.
pub fn evaluate_f12<T: Real>(model: &ModelWeights<T>, data: &[EncodedExample<T>]) -> Result<f64> {
    let mut gold = Vec::with_capacity(data.len());
    let mut pred = Vec::with_capacity(data.len());
    for ex in data {
        gold.push(ex.label);
        pred.push(classify(&model.predict_proba(ex)?));
    }
    metrics::f12(&gold, &pred)
}

/// Trains one model with mini-batch Adam, keeping the best validation
/// checkpoint and applying annealing restarts on plateaus.
///
/// `rng` drives weight initialization and dropout; `tc.shuffle_seed` drives
/// the per-epoch example order.
pub fn train_model<T: Real>(
    hp: &HyperParams,
    tc: &TrainingConfig,
    train: &[EncodedExample<T>],
    validation: &[EncodedExample<T>],
    rng: &mut Rng,
) -> Result<TrainOutcome<T>> {
    tc.validate()?;
    let first = train
        .first()
        .ok_or_else(|| Error::InvalidArgument("train split is empty".into()))?;
    let shape = first.matrix.shape();
    check_split("train", train, shape)?;
    check_split("validation", validation, shape)?;
    let (max_len, dim) = shape;

    let mut model = build_model::<T>(hp, dim, max_len, &mut rng.fork(&[stream::INIT]))?;
    let mut dropout_rng = rng.fork(&[stream::DROPOUT]);
    let mut shuffle_rng = Rng::new(tc.shuffle_seed);
    let dropout = DropoutSpec::new(hp.dropout)?;
    let lens: Vec<usize> = model.params.blocks().iter().map(|b| b.len()).collect();
    let mut adam = AdamState::<T>::new(&lens, hp.learning_rate, hp.adam_beta2);

    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Params<T>)> = None;
    let mut stale = 0;

    for epoch in 1..=tc.max_epochs {
        let lr = adam.learning_rate.to_f64_lossy();
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0f64;
        for batch in order.chunks(hp.batch_size) {
            let mut grads = model.params.zeros_like();
            for &i in batch {
                let ex = &train[i];
                let mask = (dropout.p() > 0.0)
                    .then(|| dropout.sample_mask::<T>(hp.pooled_width(), &mut dropout_rng));
                let trace = model.forward_unchecked(&ex.matrix, mask);
                loss_sum += cross_entropy(&trace.probs, ex.label);
                model.backward(&ex.matrix, &trace, ex.label, &mut grads);
            }
            grads.scale(T::one() / T::lit(batch.len() as f64));
            let g = grads.blocks();
            adam_step(&mut model.params.blocks_mut(), &g, &mut adam).map_err(|e| match e {
                Error::NonFiniteGradient { block, .. } => Error::Training(format!(
                    "epoch {epoch}: non-finite gradient in {}",
                    grads.block_names()[block]
                )),
                other => other,
            })?;
        }
        let train_loss = loss_sum / train.len() as f64;
        let val_f12 = evaluate_f12(&model, validation)?;

        let improved = best.as_ref().map_or(true, |(f, _, _)| val_f12 > *f);
        if improved {
            best = Some((val_f12, epoch, model.params.clone()));
            stale = 0;
        } else {
            stale += 1;
        }

        let mut record = EpochRecord {
            epoch,
            train_loss,
            val_f12,
            learning_rate: lr,
            restarted: false,
        };
        log::info!(
            "{} epoch {epoch}: loss {train_loss:.5} val F12 {val_f12:.4} lr {lr:e}",
            hp.embedding
        );
        let mut stop = false;
        if stale >= tc.patience {
            let (_, _, checkpoint) = best.as_ref().expect("best set after first epoch");
            match anneal_restart(&adam, checkpoint, tc.max_restarts) {
                Some((next, restored)) => {
                    adam = next;
                    model.params = restored;
                    stale = 0;
                    record.restarted = true;
                    log::info!("annealing restart {} (lr {:e})", adam.restarts, adam.learning_rate.to_f64_lossy());
                }
                None => stop = true,
            }
        }
        history.push(record);
        if stop {
            break;
        }
    }

    let (best_val_f12, best_epoch, params) = best.expect("at least one epoch");
    model.params = params;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        best_val_f12,
        restarts: adam.restarts,
    })
}

// ---------------------------------------------------------------------------
// Persistence

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct ConvBankRecord<T> {
    width: usize,
    /// `[filter][row][component]`
    filters: Vec<Vec<Vec<T>>>,
    bias: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct LayerRecord<T> {
    weights: Matrix<T>,
    bias: Vec<T>,
}

#[derive(Serialize, Deserialize)]
#[serde(bound = "T: Real")]
struct ModelRecord<T> {
    format_version: u32,
    hyperparams: HyperParams,
    embedding_dim: usize,
    max_len: usize,
    conv_banks: Vec<ConvBankRecord<T>>,
    dense: LayerRecord<T>,
    output: LayerRecord<T>,
}

impl<T: Real> ModelWeights<T> {
    fn to_record(&self) -> ModelRecord<T> {
        let dim = self.embedding_dim;
        let conv_banks = self
            .params
            .banks
            .iter()
            .map(|b| ConvBankRecord {
                width: b.width,
                filters: (0..b.bias.len())
                    .map(|f| {
                        (0..b.width)
                            .map(|r| (0..dim).map(|d| b.weights.get(r * dim + d, f)).collect())
                            .collect()
                    })
                    .collect(),
                bias: b.bias.clone(),
            })
            .collect();
        ModelRecord {
            format_version: MODEL_FORMAT_VERSION,
            hyperparams: self.hyperparams.clone(),
            embedding_dim: dim,
            max_len: self.max_len,
            conv_banks,
            dense: LayerRecord {
                weights: self.params.dense_w.clone(),
                bias: self.params.dense_b.clone(),
            },
            output: LayerRecord {
                weights: self.params.out_w.clone(),
                bias: self.params.out_b.clone(),
            },
        }
    }

    fn from_record(rec: ModelRecord<T>) -> Result<Self> {
        if rec.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported model format_version {}",
                rec.format_version
            )));
        }
        let hp = rec.hyperparams;
        hp.validate(rec.max_len)?;
        let dim = rec.embedding_dim;
        let nf = hp.num_filters;
        let bad = |what: &str| Error::Shape(format!("model file: {what}"));
        if rec.conv_banks.len() != NUM_BANKS {
            return Err(bad("wrong number of conv banks"));
        }
        let mut banks = Vec::with_capacity(NUM_BANKS);
        for (b, &w) in rec.conv_banks.into_iter().zip(&hp.filter_sizes) {
            if b.width != w || b.filters.len() != nf || b.bias.len() != nf {
                return Err(bad("conv bank shape"));
            }
            let mut weights = Matrix::zeros(w * dim, nf);
            for (f, filt) in b.filters.iter().enumerate() {
                if filt.len() != w || filt.iter().any(|r| r.len() != dim) {
                    return Err(bad("conv filter shape"));
                }
                for (r, row) in filt.iter().enumerate() {
                    for (d, &v) in row.iter().enumerate() {
                        weights.set(r * dim + d, f, v);
                    }
                }
            }
            banks.push(ConvBank {
                width: w,
                weights,
                bias: b.bias,
            });
        }
        if rec.dense.weights.shape() != (hp.pooled_width(), hp.dense_size)
            || rec.dense.bias.len() != hp.dense_size
        {
            return Err(bad("dense layer shape"));
        }
        if rec.output.weights.shape() != (hp.dense_size, NUM_CLASSES)
            || rec.output.bias.len() != NUM_CLASSES
        {
            return Err(bad("output layer shape"));
        }
        Ok(ModelWeights {
            hyperparams: hp,
            embedding_dim: dim,
            max_len: rec.max_len,
            params: Params {
                banks,
                dense_w: rec.dense.weights,
                dense_b: rec.dense.bias,
                out_w: rec.output.weights,
                out_b: rec.output.bias,
            },
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string(&self.to_record()).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let rec: ModelRecord<T> = serde_json::from_str(s).map_err(|e| Error::Json {
            path: "<model>".into(),
            source: e,
        })?;
        Self::from_record(rec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let rec: ModelRecord<T> = serde_json::from_str(&s).map_err(|e| Error::Json {
            path: path.into(),
            source: e,
        })?;
        Self::from_record(rec).map_err(|e| e.in_file(path))
    }
}
