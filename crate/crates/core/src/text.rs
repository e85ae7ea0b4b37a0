//! Text ingestion: tokenization, embedding tables, dataset files, and
//! fixed-length encoding.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::class::Class;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::{derive_seed, stream, Rng};
use crate::scalar::Real;

/// Characters split off the start and end of a whitespace chunk.
const SENTENCE_PUNCT: &[char] = &['.', ',', '!', '?', ';', ':', '"', '\'', '(', ')'];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub max_len: usize,
    pub lowercase: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            max_len: 47,
            lowercase: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_len == 0 {
            return Err(Error::Config("max_len must be at least 1".into()));
        }
        Ok(())
    }
}

fn is_url(chunk: &str) -> bool {
    let lower = chunk.get(..8).unwrap_or(chunk).to_ascii_lowercase();
    lower.starts_with("http://") || lower.starts_with("https://")
}

/// Splits `text` into tokens.
///
/// Whitespace separates chunks. URLs are kept whole. Other chunks have
/// leading and trailing sentence punctuation detached into one-character
/// tokens; interior characters (`don't`, `3.5`) and the `#`/`@` prefixes are
/// left alone. No token is ever dropped.
pub fn tokenize(text: &str, config: &PipelineConfig) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        if is_url(chunk) {
            out.push(chunk.to_string());
            continue;
        }
        let core_start = chunk
            .char_indices()
            .find(|(_, c)| !SENTENCE_PUNCT.contains(c))
            .map(|(i, _)| i);
        let Some(start) = core_start else {
            out.extend(chunk.chars().map(String::from));
            continue;
        };
        let end = chunk
            .char_indices()
            .rev()
            .find(|(_, c)| !SENTENCE_PUNCT.contains(c))
            .map(|(i, c)| i + c.len_utf8())
            .unwrap_or(chunk.len());
        out.extend(chunk[..start].chars().map(String::from));
        out.push(chunk[start..end].to_string());
        out.extend(chunk[end..].chars().map(String::from));
    }
    if config.lowercase {
        for t in &mut out {
            *t = t.to_lowercase();
        }
    }
    out
}

/// Word vectors of a fixed dimension, plus the OOV and padding rows.
#[derive(Debug, Clone)]
pub struct EmbeddingTable<T> {
    dim: usize,
    index: HashMap<String, usize>,
    vectors: Vec<T>,
    oov: Vec<T>,
    pad: Vec<T>,
}

impl<T: Real> EmbeddingTable<T> {
    /// Builds a table from `(word, vector)` pairs.
    pub fn from_entries<I>(dim: usize, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (String, Vec<T>)>,
    {
        if dim == 0 {
            return Err(Error::Config("embedding dimension must be positive".into()));
        }
        let mut table = Self::empty(dim);
        for (word, v) in entries {
            if v.len() != dim {
                return Err(Error::Shape(format!(
                    "vector for {word:?} has {} components, expected {dim}",
                    v.len()
                )));
            }
            if table.index.contains_key(&word) {
                return Err(Error::Config(format!("duplicate word {word:?}")));
            }
            table.push(word, &v);
        }
        Ok(table)
    }

    fn empty(dim: usize) -> Self {
        Self {
            dim,
            index: HashMap::new(),
            vectors: Vec::new(),
            oov: oov_vector(dim),
            pad: vec![T::zero(); dim],
        }
    }

    fn push(&mut self, word: String, v: &[T]) {
        self.index.insert(word, self.index.len());
        self.vectors.extend_from_slice(v);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn oov_vector(&self) -> &[T] {
        &self.oov
    }

    pub fn pad_vector(&self) -> &[T] {
        &self.pad
    }

    /// The stored vector for `word`, or `None` if it is out of vocabulary.
    pub fn get(&self, word: &str) -> Option<&[T]> {
        self.index
            .get(word)
            .map(|&i| &self.vectors[i * self.dim..(i + 1) * self.dim])
    }

    /// The stored vector for `word`, falling back to the OOV vector.
    pub fn lookup(&self, word: &str) -> &[T] {
        self.get(word).unwrap_or(&self.oov)
    }
}

/// Fixed unit-norm vector used for every out-of-vocabulary token.
fn oov_vector<T: Real>(dim: usize) -> Vec<T> {
    let mut rng = Rng::new(derive_seed(0, &[stream::OOV]));
    let raw: Vec<f64> = (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        let mut v = vec![T::zero(); dim];
        v[0] = T::one();
        return v;
    }
    raw.iter().map(|x| T::lit(x / norm)).collect()
}

/// Parses the text embedding format: a `<vocab_size> <dim>` header followed
/// by one `<word> <v1> ... <v_dim>` row per word.
pub fn parse_embeddings<T: Real>(content: &str) -> Result<EmbeddingTable<T>> {
    let mut lines = content.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| Error::Format {
        line: 1,
        message: "missing header".into(),
    })?;
    let header_err = |message: &str| Error::Format {
        line: 1,
        message: format!("malformed header {header:?}: {message}"),
    };
    let fields: Vec<&str> = header.split_whitespace().collect();
    if fields.len() != 2 {
        return Err(header_err("expected `<vocab_size> <dim>`"));
    }
    let vocab: usize = fields[0]
        .parse()
        .map_err(|_| header_err("vocab_size is not an integer"))?;
    let dim: usize = fields[1]
        .parse()
        .map_err(|_| header_err("dim is not an integer"))?;
    if dim == 0 {
        return Err(header_err("dim must be positive"));
    }

    let mut table = EmbeddingTable::empty(dim);
    let mut row = Vec::with_capacity(dim);
    for (line, text) in lines {
        if text.trim().is_empty() {
            continue;
        }
        let mut parts = text.split_whitespace();
        let word = parts.next().unwrap_or_default();
        row.clear();
        for p in parts {
            let v: f64 = p.parse().map_err(|_| Error::Format {
                line,
                message: format!("value {p:?} is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Format {
                    line,
                    message: format!("value {p:?} is not finite"),
                });
            }
            row.push(T::lit(v));
        }
        if row.len() != dim {
            return Err(Error::Format {
                line,
                message: format!("expected {dim} values, found {}", row.len()),
            });
        }
        if table.contains(word) {
            return Err(Error::Format {
                line,
                message: format!("duplicate word {word:?}"),
            });
        }
        if table.len() == vocab {
            return Err(Error::Format {
                line,
                message: format!("more rows than the declared vocabulary size {vocab}"),
            });
        }
        table.push(word.to_string(), &row);
    }
    if table.len() != vocab {
        return Err(Error::Format {
            line: content.lines().count(),
            message: format!("header declares {vocab} words, found {}", table.len()),
        });
    }
    Ok(table)
}

pub fn load_embeddings<T: Real>(path: impl AsRef<Path>) -> Result<EmbeddingTable<T>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings(&content).map_err(|e| e.in_file(path))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledExample {
    pub id: String,
    pub label: Class,
    pub text: String,
}

/// Parses a tab-separated `id<TAB>label<TAB>text` dataset.
pub fn parse_dataset(content: &str) -> Result<Vec<LabeledExample>> {
    let mut out = Vec::new();
    for (i, text) in content.lines().enumerate() {
        let line = i + 1;
        if text.is_empty() {
            continue;
        }
        let fields: Vec<&str> = text.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::Format {
                line,
                message: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let label = fields[1].parse::<Class>().map_err(|_| Error::InvalidLabel {
            line,
            label: fields[1].to_string(),
        })?;
        out.push(LabeledExample {
            id: fields[0].to_string(),
            label,
            text: fields[2].to_string(),
        });
    }
    Ok(out)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<LabeledExample>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&content).map_err(|e| e.in_file(path))
}

pub fn write_dataset<W: Write>(mut w: W, examples: &[LabeledExample]) -> std::io::Result<()> {
    for ex in examples {
        writeln!(w, "{}\t{}\t{}", ex.id, ex.label, ex.text)?;
    }
    Ok(())
}

/// Number of examples per class, indexed by [`Class::index`].
pub fn class_counts(examples: &[LabeledExample]) -> [usize; 3] {
    let mut counts = [0; 3];
    for ex in examples {
        counts[ex.label.index()] += 1;
    }
    counts
}

/// A labeled example as a `max_len × dim` matrix of embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample<T> {
    pub id: String,
    pub label: Class,
    pub matrix: Matrix<T>,
}

/// Tokenizes, keeps the first `max_len` tokens, embeds them, and zero-pads.
pub fn encode<T: Real>(
    example: &LabeledExample,
    table: &EmbeddingTable<T>,
    config: &PipelineConfig,
) -> EncodedExample<T> {
    let tokens = tokenize(&example.text, config);
    let mut matrix = Matrix::zeros(config.max_len, table.dim());
    for (row, token) in tokens.iter().take(config.max_len).enumerate() {
        matrix.row_mut(row).copy_from_slice(table.lookup(token));
    }
    EncodedExample {
        id: example.id.clone(),
        label: example.label,
        matrix,
    }
}

pub fn encode_all<T: Real>(
    examples: &[LabeledExample],
    table: &EmbeddingTable<T>,
    config: &PipelineConfig,
) -> Vec<EncodedExample<T>> {
    examples.iter().map(|ex| encode(ex, table, config)).collect()
}

/// Access to the encoding of one example under a named embedding.
///
/// Ensembles built on different embedding files read different matrices for
/// the same post.
pub trait EncodedInput<T> {
    fn encoding(&self, embedding: &str) -> Result<&EncodedExample<T>>;
}

/// A single encoding serves every embedding name.
impl<T> EncodedInput<T> for EncodedExample<T> {
    fn encoding(&self, _embedding: &str) -> Result<&EncodedExample<T>> {
        Ok(self)
    }
}

/// A dataset encoded once per embedding table.
#[derive(Debug, Clone)]
pub struct EncodedCorpus<T> {
    labels: Vec<Class>,
    by_embedding: BTreeMap<String, Vec<EncodedExample<T>>>,
}

impl<T: Real> EncodedCorpus<T> {
    pub fn encode(
        examples: &[LabeledExample],
        tables: &BTreeMap<String, EmbeddingTable<T>>,
        config: &PipelineConfig,
    ) -> Self {
        Self {
            labels: examples.iter().map(|e| e.label).collect(),
            by_embedding: tables
                .iter()
                .map(|(name, table)| (name.clone(), encode_all(examples, table, config)))
                .collect(),
        }
    }

    /// A corpus with a single named encoding.
    pub fn single(embedding: impl Into<String>, encoded: Vec<EncodedExample<T>>) -> Self {
        Self {
            labels: encoded.iter().map(|e| e.label).collect(),
            by_embedding: BTreeMap::from([(embedding.into(), encoded)]),
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[Class] {
        &self.labels
    }

    pub fn embeddings(&self) -> impl Iterator<Item = &str> {
        self.by_embedding.keys().map(String::as_str)
    }

    pub fn encoded(&self, embedding: &str) -> Result<&[EncodedExample<T>]> {
        self.by_embedding
            .get(embedding)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Config(format!("no encoding for embedding {embedding:?}")))
    }

    pub fn item(&self, index: usize) -> CorpusItem<'_, T> {
        CorpusItem {
            corpus: self,
            index,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct CorpusItem<'a, T> {
    corpus: &'a EncodedCorpus<T>,
    index: usize,
}

impl<T: Real> EncodedInput<T> for CorpusItem<'_, T> {
    fn encoding(&self, embedding: &str) -> Result<&EncodedExample<T>> {
        Ok(&self.corpus.encoded(embedding)?[self.index])
    }
}
