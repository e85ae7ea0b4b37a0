//! Reference implementations and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use stackcnn::model::{build_model, HyperParams};
use stackcnn::nn::DropoutSpec;
use stackcnn::text::{load_dataset, load_embeddings, EncodedCorpus, LabeledExample, PipelineConfig};
use stackcnn::{Class, Matrix, Model64, Rng};

pub const TINY_MAX_LEN: usize = 5;
pub const TINY_DIM: usize = 4;

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn synthetic_dir() -> PathBuf {
    crate_dir().join("data").join("synthetic")
}

pub fn synthetic_examples() -> Vec<LabeledExample> {
    load_dataset(synthetic_dir().join("train.tsv")).unwrap()
}

/// The bundled corpus encoded under both embedding names, `max_len` 16.
pub fn synthetic_corpus() -> EncodedCorpus<f32> {
    let table = load_embeddings::<f32>(synthetic_dir().join("embeddings.txt")).unwrap();
    let tables = BTreeMap::from([("godin".to_string(), table.clone()), ("shin".to_string(), table)]);
    let config = PipelineConfig { max_len: 16, lowercase: true };
    EncodedCorpus::encode(&synthetic_examples(), &tables, &config)
}

/// A run configuration over the bundled corpus with absolute paths, written
/// to `dir/config.toml`. `extra` is appended verbatim.
pub fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let data = synthetic_dir();
    let content = format!(
        "seed = 3\nn = 2\nfolds = 2\ntop_k = [1, 2]\n{extra}\n\n[paths]\ntrain = {train:?}\nout = {out:?}\n\n\
         [paths.embeddings]\ngodin = {emb:?}\nshin = {emb:?}\n\n[pipeline]\nmax_len = 16\n\n\
         [training]\nmax_epochs = 8\npatience = 3\n",
        train = data.join("train.tsv"),
        emb = data.join("embeddings.txt"),
        out = dir.join("out"),
    );
    let path = dir.join("config.toml");
    std::fs::write(&path, content).unwrap();
    path
}

/// Two filters per bank, dense size 3, five random widths in `1..=5`.
pub fn tiny_hyperparams(rng: &mut Rng, dropout: f64) -> HyperParams {
    HyperParams {
        embedding: "tiny".into(),
        num_filters: 2,
        filter_sizes: (0..5).map(|_| 1 + rng.below(TINY_MAX_LEN)).collect(),
        dense_size: 3,
        dropout,
        batch_size: 4,
        learning_rate: 1e-3,
        adam_beta2: 0.999,
    }
}

/// Xavier weights with biases drawn from `[-0.5, 0.5]`.
pub fn tiny_model(rng: &mut Rng, dropout: f64) -> Model64 {
    let hp = tiny_hyperparams(rng, dropout);
    let mut model = build_model::<f64>(&hp, TINY_DIM, TINY_MAX_LEN, rng).unwrap();
    let p = &mut model.params;
    for bank in &mut p.banks {
        bank.bias.iter_mut().for_each(|b| *b = rng.uniform(-0.5, 0.5));
    }
    p.dense_b.iter_mut().for_each(|b| *b = rng.uniform(-0.5, 0.5));
    p.out_b.iter_mut().for_each(|b| *b = rng.uniform(-0.5, 0.5));
    model
}

/// Random input with zero padding after a random number of tokens.
pub fn tiny_input(rng: &mut Rng) -> Matrix<f64> {
    let tokens = 1 + rng.below(TINY_MAX_LEN);
    let mut m = Matrix::zeros(TINY_MAX_LEN, TINY_DIM);
    for r in 0..tokens {
        for c in 0..TINY_DIM {
            m.set(r, c, rng.uniform(-1.0, 1.0));
        }
    }
    m
}

pub fn random_class(rng: &mut Rng) -> Class {
    Class::ALL[rng.below(3)]
}

pub fn tiny_mask(model: &Model64, rng: &mut Rng) -> Vec<f64> {
    let spec = DropoutSpec::new(0.5).unwrap();
    spec.sample_mask(model.hyperparams.pooled_width(), rng)
}

/// Plain forward pass written from the layer definitions. Returns the pooled
/// features and the smallest distance of any ReLU or max-pool decision from
/// its switching point.
pub fn reference_forward(model: &Model64, x: &Matrix<f64>, mask: Option<&[f64]>) -> (Vec<f64>, [f64; 3], f64) {
    let p = &model.params;
    let (len, dim) = x.shape();
    let mut margin = f64::INFINITY;
    let mut pooled = Vec::new();
    for bank in &p.banks {
        let w = bank.width;
        for f in 0..bank.bias.len() {
            let scores: Vec<f64> = (0..=len - w)
                .map(|t| {
                    let mut s = bank.bias[f];
                    for k in 0..w {
                        for d in 0..dim {
                            s += x.get(t + k, d) * bank.weights.get(k * dim + d, f);
                        }
                    }
                    s
                })
                .collect();
            let mut sorted = scores.clone();
            sorted.sort_by(|a, b| b.total_cmp(a));
            margin = margin.min(sorted[0].abs());
            if sorted[0] > 0.0 && sorted.len() > 1 {
                margin = margin.min(sorted[0] - sorted[1]);
            }
            pooled.push(sorted[0].max(0.0));
        }
    }
    let dropped: Vec<f64> = match mask {
        Some(m) => pooled.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => pooled.clone(),
    };
    let hidden: Vec<f64> = (0..p.dense_b.len())
        .map(|j| {
            let z = p.dense_b[j] + (0..dropped.len()).map(|i| dropped[i] * p.dense_w.get(i, j)).sum::<f64>();
            margin = margin.min(z.abs());
            z.max(0.0)
        })
        .collect();
    let logits: Vec<f64> = (0..3)
        .map(|j| p.out_b[j] + (0..hidden.len()).map(|i| hidden[i] * p.out_w.get(i, j)).sum::<f64>())
        .collect();
    let top = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - top).exp()).collect();
    let s: f64 = e.iter().sum();
    (pooled, [e[0] / s, e[1] / s, e[2] / s], margin)
}

/// `||a - n|| / (||a|| + ||n||)`, zero when both vectors vanish.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(numeric).map(|(a, b)| a - b));
    let denom = norm(&mut analytic.iter().copied()) + norm(&mut numeric.iter().copied());
    if denom == 0.0 {
        0.0
    } else {
        diff / denom
    }
}

/// Central differences of `loss` with respect to every parameter, block by
/// block.
pub fn numeric_gradient(model: &Model64, loss: impl Fn(&Model64) -> f64, h: f64) -> Vec<Vec<f64>> {
    let mut probe = model.clone();
    let lens: Vec<usize> = model.params.blocks().iter().map(|b| b.len()).collect();
    let mut out = Vec::with_capacity(lens.len());
    for (b, &n) in lens.iter().enumerate() {
        let mut g = Vec::with_capacity(n);
        for i in 0..n {
            let orig = probe.params.blocks()[b][i];
            probe.params.blocks_mut()[b][i] = orig + h;
            let up = loss(&probe);
            probe.params.blocks_mut()[b][i] = orig - h;
            let down = loss(&probe);
            probe.params.blocks_mut()[b][i] = orig;
            g.push((up - down) / (2.0 * h));
        }
        out.push(g);
    }
    out
}

pub struct GradCheck {
    pub instances: usize,
    pub redraws: usize,
    pub worst: f64,
    pub worst_block: String,
}

/// Full-model gradient check on `instances` tiny models. Instances whose
/// inputs sit within `1e-3` of a ReLU or pooling switch are redrawn.
pub fn gradient_check(instances: usize, seed: u64) -> GradCheck {
    let mut rng = Rng::new(seed);
    let mut report = GradCheck {
        instances: 0,
        redraws: 0,
        worst: 0.0,
        worst_block: String::new(),
    };
    while report.instances < instances {
        let model = tiny_model(&mut rng, 0.5);
        let x = tiny_input(&mut rng);
        let gold = random_class(&mut rng);
        let mask = (report.instances % 2 == 0).then(|| tiny_mask(&model, &mut rng));
        let (_, _, margin) = reference_forward(&model, &x, mask.as_deref());
        if margin < 1e-3 {
            report.redraws += 1;
            continue;
        }
        let (_, grads) = model.loss_and_gradient(&x, gold, mask.clone()).unwrap();
        let numeric = numeric_gradient(&model, |m| m.loss(&x, gold, mask.clone()).unwrap(), 1e-4);
        let names = model.params.block_names();
        for ((a, n), name) in grads.blocks().iter().zip(&numeric).zip(names) {
            let e = relative_error(a, n);
            if e > report.worst {
                report.worst = e;
                report.worst_block = name;
            }
        }
        report.instances += 1;
    }
    report
}

/// Scalar Adam written from the update rule, in the equivalent
/// `lr_t = lr * sqrt(1 - b2^t) / (1 - b1^t)` form.
#[derive(Debug, Clone)]
pub struct ScalarAdam {
    pub m: f64,
    pub v: f64,
    b1_pow: f64,
    b2_pow: f64,
    pub lr: f64,
    pub b1: f64,
    pub b2: f64,
    pub eps: f64,
}

impl ScalarAdam {
    pub fn new(lr: f64, b2: f64) -> Self {
        Self {
            m: 0.0,
            v: 0.0,
            b1_pow: 1.0,
            b2_pow: 1.0,
            lr,
            b1: 0.9,
            b2,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, theta: f64, g: f64) -> f64 {
        self.b1_pow *= self.b1;
        self.b2_pow *= self.b2;
        self.m = self.b1 * self.m + (1.0 - self.b1) * g;
        self.v = self.b2 * self.v + (1.0 - self.b2) * g * g;
        let root = (1.0 - self.b2_pow).sqrt();
        let lr_t = self.lr * root / (1.0 - self.b1_pow);
        theta - lr_t * self.m / (self.v.sqrt() + self.eps * root)
    }
}

/// Counts recomputed from the definition: for class `c`, a true positive is
/// a position where both sequences say `c`, and so on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RefCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

pub fn reference_counts(gold: &[Class], pred: &[Class], c: Class) -> RefCounts {
    let mut out = RefCounts::default();
    for (&g, &p) in gold.iter().zip(pred) {
        match (g == c, p == c) {
            (true, true) => out.tp += 1,
            (false, true) => out.fp += 1,
            (true, false) => out.fn_ += 1,
            (false, false) => out.tn += 1,
        }
    }
    out
}

pub fn div0(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Every label sequence of length `len` over the three classes.
pub fn all_sequences(len: usize) -> Vec<Vec<Class>> {
    let mut out = vec![Vec::new()];
    for _ in 0..len {
        out = out
            .into_iter()
            .flat_map(|s| {
                Class::ALL.iter().map(move |&c| {
                    let mut t = s.clone();
                    t.push(c);
                    t
                })
            })
            .collect();
    }
    out
}

/// Welford running mean and sample standard deviation.
pub fn welford(values: &[f64]) -> (f64, f64) {
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for (i, &x) in values.iter().enumerate() {
        let d = x - mean;
        mean += d / (i + 1) as f64;
        m2 += d * (x - mean);
    }
    (mean, (m2 / (values.len() - 1) as f64).sqrt())
}

/// Every regular file under `root`, as sorted relative paths.
pub fn tree(root: &Path) -> Vec<PathBuf> {
    fn walk(dir: &Path, root: &Path, out: &mut Vec<PathBuf>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(&path, root, out);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_path_buf());
            }
        }
    }
    let mut out = Vec::new();
    walk(root, root, &mut out);
    out.sort();
    out
}
