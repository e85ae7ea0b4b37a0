//! Subcommand implementations behind the `stackcnn` binary.
//!
//! Each command returns the text it wants printed; everything a run produces
//! is also written to files under the run directory.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::ensemble::{kfold_split, stack_top_k, stacked_predict, StackedEnsemble};
use crate::error::Error;
use crate::metrics::MetricReport;
use crate::model::classify;
use crate::report::{emit_ranking_report, metric_table};
use crate::rng::{derive_seed, stream};
use crate::search::{
    ablation_text, ablation_tsv, filter_size_experiment, run_search, SearchSettings,
};
use crate::store::{load_stack, write_atomic, write_json, RunStore};
use crate::text::{
    class_counts, load_dataset, load_embeddings, EmbeddingTable, EncodedCorpus,
    LabeledExample,
};
use crate::class::Class;

/// Scalar type used by the command line.
type F = f32;

pub mod exit {
    pub const OK: i32 = 0;
    pub const USAGE: i32 = 1;
    pub const DATA: i32 = 2;
    pub const RUNTIME: i32 = 3;
}

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: exit::USAGE,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = if e.is_data_error() {
            exit::DATA
        } else {
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => exit::USAGE,
                _ => exit::RUNTIME,
            }
        };
        Self {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn load_tables(
    cfg: &RunConfig,
    names: impl IntoIterator<Item = String>,
) -> CliResult<BTreeMap<String, EmbeddingTable<F>>> {
    let mut tables = BTreeMap::new();
    for name in names {
        let path = cfg.paths.embeddings.get(&name).ok_or_else(|| {
            CliError::usage(format!("no embedding file configured for {name:?}"))
        })?;
        if !path.is_file() {
            return Err(CliError::usage(format!(
                "embedding file {} does not exist",
                path.display()
            )));
        }
        tables.insert(name, load_embeddings::<F>(path)?);
    }
    Ok(tables)
}

fn distribution_table(name: &str, counts: [usize; 3]) -> String {
    let total: usize = counts.iter().sum();
    format!(
        "{name:<8} {:>8} {:>8} {:>8} {:>8}\n",
        counts[0], counts[1], counts[2], total
    )
}

/// Checks every input referenced by the configuration and reports the class
/// distribution of each dataset. All problems are reported, not just the
/// first.
pub fn cmd_validate(cfg: &RunConfig) -> CliResult<String> {
    let mut problems: Vec<CliError> = Vec::new();
    let mut out = String::new();
    if let Err(e) = cfg.pipeline.validate() {
        problems.push(e.into());
    }
    if let Err(e) = cfg.training.validate() {
        problems.push(e.into());
    }
    if let Err(e) = cfg.space.validate() {
        problems.push(e.into());
    }

    let mut datasets = vec![("train", &cfg.paths.train)];
    if let Some(t) = &cfg.paths.test {
        datasets.push(("test", t));
    }
    let mut dist = String::new();
    for (name, path) in datasets {
        if !path.is_file() {
            problems.push(CliError::usage(format!("dataset {} does not exist", path.display())));
            continue;
        }
        match load_dataset(path) {
            Ok(ex) => dist.push_str(&distribution_table(name, class_counts(&ex))),
            Err(e) => problems.push(e.into()),
        }
    }

    for name in &cfg.space.embeddings {
        if !cfg.paths.embeddings.contains_key(name) {
            problems.push(CliError::usage(format!("no embedding file configured for {name:?}")));
        }
    }
    for (name, path) in &cfg.paths.embeddings {
        if !path.is_file() {
            problems.push(CliError::usage(format!(
                "embedding file {} does not exist",
                path.display()
            )));
            continue;
        }
        match load_embeddings::<F>(path) {
            Ok(t) => {
                let _ = writeln!(out, "embedding {name}: {} words, dim {}", t.len(), t.dim());
                let max_size = cfg.space.filter_sizes.iter().flatten().max().copied().unwrap_or(0);
                if max_size > cfg.pipeline.max_len {
                    problems.push(CliError::usage(format!(
                        "filter size {max_size} exceeds max_len {}",
                        cfg.pipeline.max_len
                    )));
                }
            }
            Err(e) => problems.push(e.into()),
        }
    }

    if !dist.is_empty() {
        let _ = writeln!(out, "{:<8} {:>8} {:>8} {:>8} {:>8}", "split", "class 1", "class 2", "class 3", "total");
        out.push_str(&dist);
    }
    if problems.is_empty() {
        Ok(out)
    } else {
        let code = problems.iter().map(|p| p.code).max().unwrap_or(exit::USAGE);
        let msgs: Vec<String> = problems.iter().map(|p| p.message.clone()).collect();
        Err(CliError {
            code,
            message: format!("{out}{}", msgs.join("\n")),
        })
    }
}

fn load_corpus(
    cfg: &RunConfig,
    path: &Path,
    tables: &BTreeMap<String, EmbeddingTable<F>>,
) -> CliResult<EncodedCorpus<F>> {
    let examples = load_dataset(path)?;
    Ok(EncodedCorpus::encode(&examples, tables, &cfg.pipeline))
}

/// Runs (or resumes) the random search and writes the ranking report.
pub fn cmd_search(cfg: &RunConfig) -> CliResult<String> {
    cfg.validate()?;
    let tables = load_tables(cfg, cfg.space.embeddings.iter().cloned())?;
    let examples = load_dataset(&cfg.paths.train)?;
    let train = EncodedCorpus::encode(&examples, &tables, &cfg.pipeline);
    let test = match &cfg.paths.test {
        Some(p) => Some(load_corpus(cfg, p, &tables)?),
        None => None,
    };
    let labels: Vec<Class> = examples.iter().map(|e| e.label).collect();
    let plan = kfold_split(&labels, cfg.folds, derive_seed(cfg.seed, &[stream::FOLDS]), cfg.stratified)?;

    let store = RunStore::open(cfg.run_dir())?;
    let settings = SearchSettings {
        n: cfg.n,
        seed: cfg.seed,
        score_mode: cfg.score_mode,
    };
    let outcome = run_search(&cfg.space, &settings, &train, &plan, &cfg.training, Some(&store))?;
    let report = emit_ranking_report(&outcome.ranked, &train, test.as_ref(), &cfg.top_k)?;
    write_json(&store.root().join("report.json"), &report)?;
    write_atomic(&store.root().join("report.tsv"), report.to_tsv().as_bytes())?;
    let text = report.to_text();
    write_atomic(&store.root().join("report.txt"), text.as_bytes())?;

    let mut out = format!(
        "{} ensembles trained, {} failed; run directory {}\n",
        outcome.run.results.len(),
        outcome.run.failures.len(),
        store.root().display()
    );
    for f in &outcome.run.failures {
        let _ = writeln!(out, "failed: configuration {}: {}", f.index, f.error);
    }
    out.push_str(&text);
    Ok(out)
}

/// Writes the stacked manifest of the top `k` ensembles of the run.
pub fn cmd_stack(cfg: &RunConfig, k: usize) -> CliResult<PathBuf> {
    if k == 0 {
        return Err(CliError::usage("--top-k must be at least 1"));
    }
    let store = RunStore::open(cfg.run_dir())?;
    let completed = store.load_completed::<F>()?;
    if completed.is_empty() {
        return Err(CliError::usage(format!(
            "no completed search in {}",
            store.root().display()
        )));
    }
    let ranked = crate::ensemble::rank_ensembles(completed)?;
    if k > ranked.len() {
        return Err(CliError::usage(format!(
            "K = {k} but only {} ensembles are available",
            ranked.len()
        )));
    }
    let stack = stack_top_k(&ranked, k)?;
    Ok(store.save_stack(&stack)?)
}

fn stack_tables(
    cfg: &RunConfig,
    stack: &StackedEnsemble<F>,
) -> CliResult<BTreeMap<String, EmbeddingTable<F>>> {
    let names: BTreeSet<String> = stack
        .members
        .iter()
        .map(|e| e.hyperparams.embedding.clone())
        .collect();
    load_tables(cfg, names)
}

fn stacked_labels(stack: &StackedEnsemble<F>, corpus: &EncodedCorpus<F>) -> CliResult<Vec<[F; 3]>> {
    (0..corpus.len())
        .map(|i| stacked_predict(stack, &corpus.item(i)).map_err(CliError::from))
        .collect()
}

/// Evaluation record of a stacked ensemble on a labeled dataset.
pub fn evaluate_stack(
    cfg: &RunConfig,
    stack: &StackedEnsemble<F>,
    data: &Path,
) -> CliResult<MetricReport> {
    let tables = stack_tables(cfg, stack)?;
    let corpus = load_corpus(cfg, data, &tables)?;
    let pred: Vec<Class> = stacked_labels(stack, &corpus)?.iter().map(classify).collect();
    Ok(MetricReport::evaluate(corpus.labels(), &pred)?)
}

/// Classifies every example of `data` with the stacked ensemble and writes
/// the evaluation record (`.eval.json`) and a text table (`.eval.txt`).
pub fn cmd_evaluate(
    cfg: &RunConfig,
    stack_path: &Path,
    data: &Path,
    out_dir: Option<&Path>,
) -> CliResult<(MetricReport, String)> {
    let stack = load_stack::<F>(stack_path)?;
    let report = evaluate_stack(cfg, &stack, data)?;
    let stem = stack_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "stack".into());
    let dir = out_dir
        .map(Path::to_path_buf)
        .or_else(|| stack_path.parent().map(Path::to_path_buf))
        .unwrap_or_default();
    let name = format!("Top{}", stack.k());
    let text = metric_table(&[(name, &report)]);
    write_json(&dir.join(format!("{stem}.eval.json")), &report)?;
    write_atomic(&dir.join(format!("{stem}.eval.txt")), text.as_bytes())?;
    Ok((report, text))
}

/// Reads `id<TAB>label<TAB>text` lines; the label column is ignored.
fn parse_prediction_input(content: &str) -> Result<Vec<LabeledExample>, Error> {
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Format {
                line: i + 1,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        out.push(LabeledExample {
            id: fields[0].to_string(),
            // placeholder: never read
            label: Class::Intake,
            text: fields[2].to_string(),
        });
    }
    Ok(out)
}

/// Writes `id<TAB>label<TAB>p1<TAB>p2<TAB>p3` for every input line.
pub fn cmd_predict(cfg: &RunConfig, stack_path: &Path, input: &Path, output: &Path) -> CliResult<usize> {
    let stack = load_stack::<F>(stack_path)?;
    let tables = stack_tables(cfg, &stack)?;
    let content = fs::read_to_string(input).map_err(|e| Error::io(input, e))?;
    let examples = parse_prediction_input(&content).map_err(|e| e.in_file(input))?;
    let corpus = EncodedCorpus::encode(&examples, &tables, &cfg.pipeline);
    let dists = stacked_labels(&stack, &corpus)?;
    let mut out = String::new();
    for (ex, d) in examples.iter().zip(&dists) {
        let _ = writeln!(
            out,
            "{}\t{}\t{:.6}\t{:.6}\t{:.6}",
            ex.id,
            classify(d),
            d[0],
            d[1],
            d[2]
        );
    }
    write_atomic(output, out.as_bytes())?;
    Ok(examples.len())
}

/// Fixed-filter-size ablation; writes `ablation.tsv` and `ablation.txt`.
pub fn cmd_ablate_filters(cfg: &RunConfig) -> CliResult<String> {
    cfg.validate()?;
    let tables = load_tables(cfg, cfg.space.embeddings.iter().cloned())?;
    let examples = load_dataset(&cfg.paths.train)?;
    let train = EncodedCorpus::encode(&examples, &tables, &cfg.pipeline);
    let labels: Vec<Class> = examples.iter().map(|e| e.label).collect();
    let plan = kfold_split(&labels, cfg.folds, derive_seed(cfg.seed, &[stream::FOLDS]), cfg.stratified)?;
    let rows = filter_size_experiment(
        &cfg.space,
        &train,
        &plan,
        &cfg.training,
        &cfg.ablation.sizes,
        cfg.ablation.runs,
        cfg.seed,
        cfg.score_mode,
    )?;
    let dir = cfg.run_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_atomic(&dir.join("ablation.tsv"), ablation_tsv(&rows).as_bytes())?;
    let text = ablation_text(&rows);
    write_atomic(&dir.join("ablation.txt"), text.as_bytes())?;
    Ok(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prediction_input_ignores_label() {
        let ex = parse_prediction_input("a\t?\thello there\n").unwrap();
        assert_eq!(ex[0].text, "hello there");
        assert!(parse_prediction_input("a\thello").is_err());
        assert!(parse_prediction_input("").unwrap().is_empty());
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(Error::Config("x".into())).code, exit::USAGE);
        let data = Error::InvalidLabel { line: 1, label: "0".into() }.in_file("d.tsv");
        assert_eq!(CliError::from(data).code, exit::DATA);
        assert_eq!(CliError::from(Error::Training("x".into())).code, exit::RUNTIME);
    }
}
