//! Embedding files, seed ensembles and vector views.
//!
//! Two plain-text formats are read: word2vec text (`"V d"` header, then one
//! `token v1 .. vd` line per word) and GloVe text (same rows, no header).
//! Binary formats are not supported.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextFormat {
    #[default]
    Auto,
    W2vText,
    GloveText,
}

impl FromStr for TextFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(TextFormat::Auto),
            "w2v_text" | "w2v" | "word2vec" => Ok(TextFormat::W2vText),
            "glove_text" | "glove" => Ok(TextFormat::GloveText),
            other => Err(Error::InvalidArgument(format!("unknown embedding format {other:?}"))),
        }
    }
}

/// One embedding model: a `V x d` row-major matrix plus its vocabulary.
#[derive(Debug, Clone)]
pub struct EmbeddingModel {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Vec<f64>,
    dim: usize,
    label: String,
    warnings: Vec<String>,
}

impl EmbeddingModel {
    /// Builds a model from tokens and a row-major matrix. Tokens must be unique
    /// and every entry finite.
    pub fn new(
        vocab: Vec<String>,
        matrix: Vec<f64>,
        dim: usize,
        label: impl Into<String>,
    ) -> Result<Self> {
        let label = label.into();
        if dim == 0 {
            return Err(Error::InvalidArgument("embedding dimension must be >= 1".into()));
        }
        if vocab.is_empty() {
            return Err(Error::InvalidArgument(format!("model {label} has an empty vocabulary")));
        }
        if matrix.len() != vocab.len() * dim {
            return Err(Error::InvalidArgument(format!(
                "model {label}: matrix has {} entries, expected {} x {}",
                matrix.len(),
                vocab.len(),
                dim
            )));
        }
        if let Some(pos) = matrix.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "model {label}: non-finite value in row of {:?}",
                vocab[pos / dim]
            )));
        }
        let mut index = HashMap::with_capacity(vocab.len());
        for (i, tok) in vocab.iter().enumerate() {
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::InvalidArgument(format!(
                    "model {label}: duplicate token {tok:?}"
                )));
            }
        }
        Ok(EmbeddingModel {
            vocab,
            index,
            matrix,
            dim,
            label,
            warnings: Vec::new(),
        })
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn len(&self) -> usize {
        self.vocab.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vocab.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Non-fatal issues recorded while loading (duplicate tokens, header
    /// count mismatch).
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dim..(i + 1) * self.dim]
    }

    pub fn vector(&self, token: &str) -> Option<&[f64]> {
        self.index_of(token).map(|i| self.row(i))
    }

    /// Same model with every row multiplied by `c`.
    pub fn scaled(&self, c: f64) -> EmbeddingModel {
        let mut out = self.clone();
        out.matrix.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// Writes the model in the given text format. `Auto` writes word2vec text.
    pub fn to_text(&self, format: TextFormat) -> String {
        let mut out = String::with_capacity(self.matrix.len() * 12);
        if format != TextFormat::GloveText {
            let _ = writeln!(out, "{} {}", self.len(), self.dim);
        }
        for (i, tok) in self.vocab.iter().enumerate() {
            out.push_str(tok);
            for v in self.row(i) {
                // Shortest representation that round-trips exactly.
                let _ = write!(out, " {v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_text(&self, path: &Path, format: TextFormat) -> Result<()> {
        fs::write(path, self.to_text(format)).map_err(|e| Error::io(path, e))
    }

    pub fn with_label(mut self, label: String) -> Self {
        self.label = label;
        self
    }
}

/// Reads an embedding text file. Values are parsed as `f64`.
pub fn parse_embedding_text(path: &Path, format: TextFormat) -> Result<EmbeddingModel> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embedding_str(&text, format, path)
}

/// Parses embedding text already in memory; `origin` is used for error
/// messages and as the model label.
pub fn parse_embedding_str(text: &str, format: TextFormat, origin: &Path) -> Result<EmbeddingModel> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        msg,
    };

    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
        .peekable();

    let Some(&(first_no, first)) = lines.peek() else {
        return Err(Error::EmptyFile(origin.to_path_buf()));
    };

    let header = parse_header(first);
    let mut declared: Option<(usize, usize)> = None;
    match format {
        TextFormat::W2vText => {
            let h = header.ok_or_else(|| {
                perr(first_no, format!("expected \"V d\" header, found {first:?}"))
            })?;
            declared = Some(h);
            lines.next();
        }
        TextFormat::Auto => {
            if let Some(h) = header {
                declared = Some(h);
                lines.next();
            }
        }
        TextFormat::GloveText => {}
    }

    let mut dim = declared.map(|(_, d)| d);
    if dim == Some(0) {
        return Err(perr(first_no, "declared dimension is 0".into()));
    }
    let mut vocab = Vec::new();
    let mut matrix = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut warnings = Vec::new();
    let mut row = Vec::new();

    for (line_no, line) in lines {
        let mut fields = line.split(' ').filter(|f| !f.is_empty());
        let Some(token) = fields.next() else { continue };
        row.clear();
        for f in fields {
            let v: f64 = f
                .parse()
                .map_err(|_| perr(line_no, format!("cannot parse value {f:?}")))?;
            if !v.is_finite() {
                return Err(perr(line_no, format!("non-finite value {f:?}")));
            }
            row.push(v);
        }
        match dim {
            None => {
                if row.is_empty() {
                    return Err(perr(line_no, "row has no values".into()));
                }
                dim = Some(row.len());
            }
            Some(d) if d != row.len() => {
                let what = if declared.is_some() { "declared" } else { "expected" };
                return Err(perr(line_no, format!("row dimension {} ≠ {what} {d}", row.len())));
            }
            _ => {}
        }
        if !seen.insert(token.to_string()) {
            warnings.push(format!("line {line_no}: duplicate token {token:?} ignored (kept first)"));
            continue;
        }
        vocab.push(token.to_string());
        matrix.extend_from_slice(&row);
    }

    if vocab.is_empty() {
        return Err(Error::EmptyFile(origin.to_path_buf()));
    }
    if let Some((v, _)) = declared {
        let rows = vocab.len() + warnings.len();
        if v != rows {
            warnings.push(format!("header declares {v} rows, file has {rows}"));
        }
    }
    let dim = dim.expect("dimension fixed by first row");
    let mut model = EmbeddingModel::new(vocab, matrix, dim, origin.display().to_string())?;
    model.warnings = warnings;
    Ok(model)
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut it = line.split_whitespace();
    let v = it.next()?.parse::<usize>().ok()?;
    let d = it.next()?.parse::<usize>().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some((v, d))
}

/// `k >= 2` models re-indexed onto their common vocabulary.
#[derive(Debug, Clone)]
pub struct EmbeddingEnsemble {
    models: Vec<EmbeddingModel>,
    algorithm_label: String,
    corpus_label: String,
    seed_labels: Vec<String>,
    dropped: Vec<usize>,
}

impl EmbeddingEnsemble {
    pub fn models(&self) -> &[EmbeddingModel] {
        &self.models
    }

    pub fn k(&self) -> usize {
        self.models.len()
    }

    pub fn dim(&self) -> usize {
        self.models[0].dim()
    }

    /// The aligned vocabulary, shared by every member.
    pub fn vocab(&self) -> &[String] {
        self.models[0].vocab()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.models[0].contains(token)
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.models[0].index_of(token)
    }

    pub fn algorithm_label(&self) -> &str {
        &self.algorithm_label
    }

    pub fn corpus_label(&self) -> &str {
        &self.corpus_label
    }

    pub fn seed_labels(&self) -> &[String] {
        &self.seed_labels
    }

    /// Tokens dropped from each member by alignment.
    pub fn dropped_counts(&self) -> &[usize] {
        &self.dropped
    }

    /// Applies `f` to every member model, keeping labels.
    pub fn map_models(&self, f: impl Fn(&EmbeddingModel) -> EmbeddingModel) -> EmbeddingEnsemble {
        EmbeddingEnsemble {
            models: self.models.iter().map(f).collect(),
            ..self.clone()
        }
    }
}

/// Restricts every model to the vocabulary they all share, in the first
/// model's order.
pub fn align_ensemble(
    models: Vec<EmbeddingModel>,
    algorithm_label: impl Into<String>,
    corpus_label: impl Into<String>,
) -> Result<EmbeddingEnsemble> {
    if models.len() < 2 {
        return Err(Error::TooFewModels {
            need: 2,
            got: models.len(),
        });
    }
    let d = models[0].dim();
    for m in &models[1..] {
        if m.dim() != d {
            return Err(Error::DimensionMismatch {
                label: m.label().to_string(),
                expected: d,
                got: m.dim(),
            });
        }
    }

    let shared: Vec<String> = models[0]
        .vocab()
        .iter()
        .filter(|t| models[1..].iter().all(|m| m.contains(t)))
        .cloned()
        .collect();
    if shared.is_empty() {
        return Err(Error::EmptyAlignedVocabulary);
    }

    let seed_labels: Vec<String> = models.iter().map(|m| m.label().to_string()).collect();
    let mut dropped = Vec::with_capacity(models.len());
    let mut aligned = Vec::with_capacity(models.len());
    for m in models {
        dropped.push(m.len() - shared.len());
        if m.len() == shared.len() && m.vocab() == shared.as_slice() {
            aligned.push(m);
            continue;
        }
        let mut matrix = Vec::with_capacity(shared.len() * d);
        for tok in &shared {
            let i = m.index_of(tok).expect("token in intersection");
            matrix.extend_from_slice(m.row(i));
        }
        let mut re = EmbeddingModel::new(shared.clone(), matrix, d, String::new())?
            .with_label(m.label().to_string());
        re.warnings = m.warnings;
        aligned.push(re);
    }

    Ok(EmbeddingEnsemble {
        models: aligned,
        algorithm_label: algorithm_label.into(),
        corpus_label: corpus_label.into(),
        seed_labels,
        dropped,
    })
}

/// Divides each row by its L2 norm. Returns the normalized model and the
/// indices of zero-norm rows, which are left unchanged.
pub fn unit_normalize(model: &EmbeddingModel) -> (EmbeddingModel, Vec<usize>) {
    let mut out = model.clone();
    let d = out.dim;
    let mut zero_rows = Vec::new();
    for (i, row) in out.matrix.chunks_exact_mut(d).enumerate() {
        let norm = crate::linalg::norm(row);
        if norm == 0.0 {
            zero_rows.push(i);
        } else {
            row.iter_mut().for_each(|v| *v /= norm);
        }
    }
    (out, zero_rows)
}

/// Loads and aligns one ensemble from files. Files are parsed in parallel.
pub fn load_ensemble(
    paths: &[PathBuf],
    format: TextFormat,
    algorithm_label: &str,
    corpus_label: &str,
) -> Result<EmbeddingEnsemble> {
    use rayon::prelude::*;
    let models = paths
        .par_iter()
        .map(|p| parse_embedding_text(p, format))
        .collect::<Result<Vec<_>>>()?;
    // Label members by file stem unless two files share one.
    let stems: Vec<Option<String>> = paths
        .iter()
        .map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    let unique = stems.iter().all(Option::is_some) && stems.iter().collect::<std::collections::HashSet<_>>().len() == stems.len();
    let models = if unique {
        models.into_iter().zip(stems).map(|(m, s)| m.with_label(s.expect("checked"))).collect()
    } else {
        models
    };
    align_ensemble(models, algorithm_label, corpus_label)
}
