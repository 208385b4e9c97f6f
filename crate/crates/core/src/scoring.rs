//! Per-word gender bias scores under DB/WA, RIPA and NBM, and the
//! `rules x pairs x targets x models` score tensor built from them.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::embedding::{EmbeddingEnsemble, EmbeddingModel};
use crate::error::{Error, Result};
use crate::knn::CosineIndex;
use crate::linalg;

pub const DEFAULT_NBM_K: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleKind {
    Dbwa,
    Ripa,
    Nbm,
}

impl RuleKind {
    pub fn as_str(self) -> &'static str {
        match self {
            RuleKind::Dbwa => "dbwa",
            RuleKind::Ripa => "ripa",
            RuleKind::Nbm => "nbm",
        }
    }
}

impl fmt::Display for RuleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RuleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "dbwa" | "db/wa" => Ok(RuleKind::Dbwa),
            "ripa" => Ok(RuleKind::Ripa),
            "nbm" => Ok(RuleKind::Nbm),
            other => Err(Error::InvalidArgument(format!("unknown scoring rule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoringRule {
    pub kind: RuleKind,
    /// Neighbourhood size; used by NBM only.
    pub k_neighbors: usize,
}

impl ScoringRule {
    pub fn dbwa() -> Self {
        ScoringRule {
            kind: RuleKind::Dbwa,
            k_neighbors: DEFAULT_NBM_K,
        }
    }

    pub fn ripa() -> Self {
        ScoringRule {
            kind: RuleKind::Ripa,
            k_neighbors: DEFAULT_NBM_K,
        }
    }

    pub fn nbm(k: usize) -> Self {
        ScoringRule {
            kind: RuleKind::Nbm,
            k_neighbors: k,
        }
    }

    pub fn label(&self) -> &'static str {
        self.kind.as_str()
    }
}

/// A gendered word pair `(male, female)`, stored lower-case.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BasePair {
    pub male: String,
    pub female: String,
}

impl BasePair {
    pub fn new(male: &str, female: &str) -> Result<Self> {
        let male = male.trim().to_lowercase();
        let female = female.trim().to_lowercase();
        if male.is_empty() || female.is_empty() {
            return Err(Error::InvalidArgument("base pair with an empty side".into()));
        }
        if male == female {
            return Err(Error::InvalidArgument(format!("base pair {male}/{female} has identical sides")));
        }
        Ok(BasePair { male, female })
    }

    pub fn reversed(&self) -> BasePair {
        BasePair {
            male: self.female.clone(),
            female: self.male.clone(),
        }
    }

    pub fn label(&self) -> String {
        format!("{}~{}", self.male, self.female)
    }
}

/// A named list of target words, lower-cased and de-duplicated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TargetList {
    pub name: String,
    pub words: Vec<String>,
}

impl TargetList {
    pub fn new(name: impl Into<String>, words: impl IntoIterator<Item = impl AsRef<str>>) -> Result<Self> {
        let name = name.into();
        let words = dedup_lower(words);
        if words.is_empty() {
            return Err(Error::InvalidArgument(format!("target list {name} is empty")));
        }
        Ok(TargetList { name, words })
    }
}

/// A named concept query (e.g. `career`): a set of related target words.
pub type Query = TargetList;

fn dedup_lower(words: impl IntoIterator<Item = impl AsRef<str>>) -> Vec<String> {
    let mut seen = HashSet::new();
    words
        .into_iter()
        .map(|w| w.as_ref().trim().to_lowercase())
        .filter(|w| !w.is_empty() && seen.insert(w.clone()))
        .collect()
}

fn lookup<'a>(model: &'a EmbeddingModel, token: &str) -> Result<&'a [f64]> {
    model
        .vector(token)
        .ok_or_else(|| Error::MissingWord(token.to_string()))
}

fn unit(v: &[f64], token: &str) -> Result<Vec<f64>> {
    let n = linalg::norm(v);
    if n == 0.0 {
        return Err(Error::DegenerateVector(token.to_string()));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// `cos(w, m) - cos(w, f)`.
pub fn score_dbwa(model: &EmbeddingModel, w: &str, pair: &BasePair) -> Result<f64> {
    let wv = unit(lookup(model, w)?, w)?;
    let mv = unit(lookup(model, &pair.male)?, &pair.male)?;
    let fv = unit(lookup(model, &pair.female)?, &pair.female)?;
    Ok(linalg::dot(&wv, &mv) - linalg::dot(&wv, &fv))
}

/// Projection of `w` onto the unit vector along `m - f`.
pub fn score_ripa(model: &EmbeddingModel, w: &str, pair: &BasePair) -> Result<f64> {
    let wv = lookup(model, w)?;
    let (dir, _) = pair_direction(model, pair)?;
    Ok(linalg::dot(wv, &dir))
}

fn pair_direction(model: &EmbeddingModel, pair: &BasePair) -> Result<(Vec<f64>, f64)> {
    let mv = lookup(model, &pair.male)?;
    let fv = lookup(model, &pair.female)?;
    let diff: Vec<f64> = mv.iter().zip(fv).map(|(a, b)| a - b).collect();
    let n = linalg::norm(&diff);
    if n == 0.0 {
        return Err(Error::DegeneratePair {
            male: pair.male.clone(),
            female: pair.female.clone(),
        });
    }
    Ok((diff.into_iter().map(|x| x / n).collect(), n))
}

/// Signed fraction of gender-leaning words among the `k` cosine nearest
/// neighbours of `w`: `(#{DB/WA > 0} - #{DB/WA < 0}) / k`.
///
/// `w` itself is never a neighbour; tokens in `exclusions` and zero-norm rows
/// are skipped. Neighbours with DB/WA exactly zero count for neither side.
pub fn score_nbm(
    model: &EmbeddingModel,
    w: &str,
    pair: &BasePair,
    k: usize,
    exclusions: &HashSet<String>,
) -> Result<f64> {
    if k == 0 {
        return Err(Error::InvalidArgument("NBM needs k >= 1".into()));
    }
    let wi = model.index_of(w).ok_or_else(|| Error::MissingWord(w.to_string()))?;
    if k >= model.len() {
        return Err(Error::InvalidArgument(format!(
            "NBM k={k} must be smaller than the vocabulary size {}",
            model.len()
        )));
    }
    let index = CosineIndex::new(model);
    if index.is_zero(wi) {
        return Err(Error::DegenerateVector(w.to_string()));
    }
    let pair_scorer = PairScorer::new(&index, model, pair)?;
    let mut excluded = vec![false; model.len()];
    for t in exclusions {
        if let Some(i) = model.index_of(t) {
            excluded[i] = true;
        }
    }
    let neighbours = index.top_k(&[wi], k, &excluded).pop().unwrap_or_default();
    if neighbours.len() < k {
        return Err(Error::TooFewNeighbours {
            word: w.to_string(),
            k,
            available: neighbours.len(),
        });
    }
    Ok(nbm_from_signs(neighbours.iter().map(|&(j, _)| pair_scorer.dbwa(&index, j)), k))
}

/// NBM for many targets and pairs on one model with a single neighbour
/// scan. Returns `targets x pairs` scores.
pub fn nbm_scores(model: &EmbeddingModel, pairs: &[BasePair], targets: &[String], k: usize, opts: &NbmOptions) -> Result<Vec<Vec<f64>>> {
    if k == 0 || k >= model.len() {
        return Err(Error::InvalidArgument(format!(
            "NBM k={k} must satisfy 1 <= k < V={}",
            model.len()
        )));
    }
    let index = CosineIndex::new(model);
    let scorers: Vec<PairScorer> = pairs.iter().map(|p| PairScorer::new(&index, model, p)).collect::<Result<_>>()?;
    let target_idx: Vec<usize> = targets
        .iter()
        .map(|w| {
            let i = model.index_of(w).ok_or_else(|| Error::MissingWord(w.clone()))?;
            if index.is_zero(i) {
                return Err(Error::DegenerateVector(w.clone()));
            }
            Ok(i)
        })
        .collect::<Result<_>>()?;
    let mut excluded = vec![false; model.len()];
    for t in &opts.exclude_tokens {
        if let Some(i) = model.index_of(t) {
            excluded[i] = true;
        }
    }
    nbm_cells(&index, &target_idx, targets, &scorers, k, &excluded, opts.exclude_pair_words)
}

fn nbm_from_signs(dbwa: impl Iterator<Item = f64>, k: usize) -> f64 {
    let (mut masc, mut fem) = (0i64, 0i64);
    for s in dbwa {
        if s > 0.0 {
            masc += 1;
        } else if s < 0.0 {
            fem += 1;
        }
    }
    (masc - fem) as f64 / k as f64
}

/// DB/WA of arbitrary vocabulary rows against one pair, using the unit rows
/// of a [`CosineIndex`].
struct PairScorer {
    m: usize,
    f: usize,
}

impl PairScorer {
    fn new(index: &CosineIndex, model: &EmbeddingModel, pair: &BasePair) -> Result<Self> {
        let m = model
            .index_of(&pair.male)
            .ok_or_else(|| Error::MissingWord(pair.male.clone()))?;
        let f = model
            .index_of(&pair.female)
            .ok_or_else(|| Error::MissingWord(pair.female.clone()))?;
        if index.is_zero(m) {
            return Err(Error::DegenerateVector(pair.male.clone()));
        }
        if index.is_zero(f) {
            return Err(Error::DegenerateVector(pair.female.clone()));
        }
        Ok(PairScorer { m, f })
    }

    fn dbwa(&self, index: &CosineIndex, j: usize) -> f64 {
        linalg::dot(index.unit_row(j), index.unit_row(self.m))
            - linalg::dot(index.unit_row(j), index.unit_row(self.f))
    }
}

/// Neighbour-pool options for NBM.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NbmOptions {
    /// Tokens never used as neighbours (e.g. `<unk>` sentinels).
    #[serde(default)]
    pub exclude_tokens: Vec<String>,
    /// Also drop the pair's own `m` and `f` from each neighbour pool.
    #[serde(default)]
    pub exclude_pair_words: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    Pair,
    Target,
}

/// A label dropped from the tensor and why.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Missing {
    pub axis: Axis,
    pub label: String,
    pub reason: String,
}

/// Scores over `rules x pairs x targets x models`, stored row-major.
#[derive(Debug, Clone)]
pub struct BiasTensor {
    pub rules: Vec<ScoringRule>,
    pub pairs: Vec<BasePair>,
    pub targets: Vec<String>,
    pub models: Vec<String>,
    pub scores: Vec<f64>,
    pub missing: Vec<Missing>,
}

impl BiasTensor {
    pub fn shape(&self) -> (usize, usize, usize, usize) {
        (self.rules.len(), self.pairs.len(), self.targets.len(), self.models.len())
    }

    #[inline]
    pub fn offset(&self, s: usize, g: usize, t: usize, k: usize) -> usize {
        let (_, ng, nt, nk) = self.shape();
        ((s * ng + g) * nt + t) * nk + k
    }

    #[inline]
    pub fn get(&self, s: usize, g: usize, t: usize, k: usize) -> f64 {
        self.scores[self.offset(s, g, t, k)]
    }

    pub fn rule_index(&self, kind: RuleKind) -> Option<usize> {
        self.rules.iter().position(|r| r.kind == kind)
    }

    pub fn target_index(&self, word: &str) -> Option<usize> {
        self.targets.iter().position(|t| t == word)
    }

    pub fn pair_index(&self, pair: &BasePair) -> Option<usize> {
        self.pairs.iter().position(|p| p == pair)
    }
}

/// Scores every in-vocabulary (rule, pair, target, model) cell.
///
/// Targets and pairs that are absent from the aligned vocabulary, or whose
/// vectors are degenerate in any model, are dropped and listed in `missing`.
pub fn compute_bias_tensor(
    ensemble: &EmbeddingEnsemble,
    rules: &[ScoringRule],
    pairs: &[BasePair],
    targets: &TargetList,
    nbm: &NbmOptions,
) -> Result<BiasTensor> {
    if rules.is_empty() || pairs.is_empty() || targets.words.is_empty() {
        return Err(Error::InvalidArgument("rules, pairs and targets must be non-empty".into()));
    }
    let models = ensemble.models();
    let v = ensemble.vocab().len();
    for r in rules {
        if r.kind == RuleKind::Nbm && (r.k_neighbors == 0 || r.k_neighbors >= v) {
            return Err(Error::InvalidArgument(format!(
                "NBM k={} must satisfy 1 <= k < V={v}",
                r.k_neighbors
            )));
        }
    }
    let needs_ripa = rules.iter().any(|r| r.kind == RuleKind::Ripa);
    let mut missing = Vec::new();

    let mut kept_pairs = Vec::new();
    for p in pairs {
        let reason = if !ensemble.contains(&p.male) {
            Some(format!("{} not in vocabulary", p.male))
        } else if !ensemble.contains(&p.female) {
            Some(format!("{} not in vocabulary", p.female))
        } else {
            models.iter().find_map(|m| {
                let zero = |t: &str| linalg::norm(m.vector(t).expect("checked")) == 0.0;
                if zero(&p.male) || zero(&p.female) {
                    Some(format!("zero-norm vector in {}", m.label()))
                } else if needs_ripa && pair_direction(m, p).is_err() {
                    Some(format!("m - f has zero norm in {}", m.label()))
                } else {
                    None
                }
            })
        };
        match reason {
            Some(reason) => missing.push(Missing {
                axis: Axis::Pair,
                label: p.label(),
                reason,
            }),
            None if kept_pairs.contains(p) => {}
            None => kept_pairs.push(p.clone()),
        }
    }

    let mut kept_targets = Vec::new();
    for w in &targets.words {
        let reason = if !ensemble.contains(w) {
            Some("not in vocabulary".to_string())
        } else {
            models
                .iter()
                .find(|m| linalg::norm(m.vector(w).expect("checked")) == 0.0)
                .map(|m| format!("zero-norm vector in {}", m.label()))
        };
        match reason {
            Some(reason) => missing.push(Missing {
                axis: Axis::Target,
                label: w.clone(),
                reason,
            }),
            None => kept_targets.push(w.clone()),
        }
    }

    if kept_targets.is_empty() {
        return Err(Error::AllMissing("targets"));
    }
    if kept_pairs.is_empty() {
        return Err(Error::AllMissing("base pairs"));
    }

    let (ns, ng, nt, nk) = (rules.len(), kept_pairs.len(), kept_targets.len(), models.len());
    let mut scores = vec![0.0; ns * ng * nt * nk];
    let target_idx: Vec<usize> = kept_targets
        .iter()
        .map(|w| ensemble.index_of(w).expect("kept targets are in vocabulary"))
        .collect();

    let mut excluded_base = vec![false; v];
    for t in &nbm.exclude_tokens {
        if let Some(i) = ensemble.index_of(t) {
            excluded_base[i] = true;
        }
    }

    for (ki, model) in models.iter().enumerate() {
        let index = CosineIndex::new(model);
        let scorers: Vec<PairScorer> = kept_pairs
            .iter()
            .map(|p| PairScorer::new(&index, model, p))
            .collect::<Result<_>>()?;
        let directions: Vec<Vec<f64>> = if needs_ripa {
            kept_pairs
                .iter()
                .map(|p| pair_direction(model, p).map(|(d, _)| d))
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };

        for (si, rule) in rules.iter().enumerate() {
            // cell[t][g] for this (rule, model)
            let cells: Vec<Vec<f64>> = match rule.kind {
                RuleKind::Dbwa => target_idx
                    .par_iter()
                    .map(|&wi| scorers.iter().map(|sc| sc.dbwa(&index, wi)).collect())
                    .collect(),
                RuleKind::Ripa => target_idx
                    .par_iter()
                    .map(|&wi| {
                        let wv = model.row(wi);
                        directions.iter().map(|d| linalg::dot(wv, d)).collect()
                    })
                    .collect(),
                RuleKind::Nbm => nbm_cells(
                    &index,
                    &target_idx,
                    &kept_targets,
                    &scorers,
                    rule.k_neighbors,
                    &excluded_base,
                    nbm.exclude_pair_words,
                )?,
            };
            for (ti, row) in cells.iter().enumerate() {
                for (gi, &val) in row.iter().enumerate() {
                    let off = ((si * ng + gi) * nt + ti) * nk + ki;
                    scores[off] = val;
                }
            }
        }
    }

    Ok(BiasTensor {
        rules: rules.to_vec(),
        pairs: kept_pairs,
        targets: kept_targets,
        models: ensemble.seed_labels().to_vec(),
        scores,
        missing,
    })
}

fn nbm_cells(
    index: &CosineIndex,
    target_idx: &[usize],
    target_words: &[String],
    scorers: &[PairScorer],
    k: usize,
    excluded: &[bool],
    exclude_pair_words: bool,
) -> Result<Vec<Vec<f64>>> {
    // Fetch two spare neighbours so that dropping m and f still leaves k.
    let spare = if exclude_pair_words { 2 } else { 0 };
    let lists = index.top_k(target_idx, k + spare, excluded);
    lists
        .into_par_iter()
        .zip(target_idx.par_iter().zip(target_words.par_iter()))
        .map(|(list, (&wi, word))| {
            scorers
                .iter()
                .map(|sc| {
                    let pool = list
                        .iter()
                        .filter(|(j, _)| !exclude_pair_words || (*j != sc.m && *j != sc.f))
                        .take(k);
                    let chosen: Vec<usize> = pool.map(|&(j, _)| j).collect();
                    if chosen.len() < k {
                        let mut ex = excluded.to_vec();
                        if exclude_pair_words {
                            ex[sc.m] = true;
                            ex[sc.f] = true;
                        }
                        return Err(Error::TooFewNeighbours {
                            word: word.clone(),
                            k,
                            available: index.eligible_count(wi, &ex),
                        });
                    }
                    Ok(nbm_from_signs(chosen.iter().map(|&j| sc.dbwa(index, j)), k))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect()
}

/// Bias scores averaged over the model axis: `rules x pairs x targets`.
#[derive(Debug, Clone)]
pub struct MeanBiasCube {
    pub rules: Vec<ScoringRule>,
    pub pairs: Vec<BasePair>,
    pub targets: Vec<String>,
    pub scores: Vec<f64>,
}

impl MeanBiasCube {
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.rules.len(), self.pairs.len(), self.targets.len())
    }

    #[inline]
    pub fn get(&self, s: usize, g: usize, t: usize) -> f64 {
        let (_, ng, nt) = self.shape();
        self.scores[(s * ng + g) * nt + t]
    }

    pub fn rule_index(&self, kind: RuleKind) -> Option<usize> {
        self.rules.iter().position(|r| r.kind == kind)
    }

    pub fn target_index(&self, word: &str) -> Option<usize> {
        self.targets.iter().position(|t| t == word)
    }

    pub fn pair_index(&self, pair: &BasePair) -> Option<usize> {
        self.pairs.iter().position(|p| p == pair)
    }

    fn rule(&self, kind: RuleKind) -> Result<usize> {
        self.rule_index(kind)
            .ok_or_else(|| Error::UnknownLabel(kind.to_string()))
    }

    fn target(&self, word: &str) -> Result<usize> {
        self.target_index(word)
            .ok_or_else(|| Error::UnknownLabel(word.to_string()))
    }
}

/// Arithmetic mean along the model axis, summed in ascending model order.
pub fn average_over_models(b: &BiasTensor) -> MeanBiasCube {
    let nk = b.models.len();
    let scores = b
        .scores
        .chunks_exact(nk)
        .map(|cell| cell.iter().fold(0.0, |acc, &x| acc + x) / nk as f64)
        .collect();
    MeanBiasCube {
        rules: b.rules.clone(),
        pairs: b.pairs.clone(),
        targets: b.targets.clone(),
        scores,
    }
}

/// Mean over pairs of one target's scores.
pub fn aggregate_target(cube: &MeanBiasCube, rule: RuleKind, word: &str) -> Result<f64> {
    let s = cube.rule(rule)?;
    let t = cube.target(word)?;
    let ng = cube.pairs.len();
    Ok((0..ng).fold(0.0, |acc, g| acc + cube.get(s, g, t)) / ng as f64)
}

/// Mean over targets of one pair's scores.
pub fn aggregate_pair(cube: &MeanBiasCube, rule: RuleKind, pair: &BasePair) -> Result<f64> {
    let s = cube.rule(rule)?;
    let g = cube
        .pair_index(pair)
        .ok_or_else(|| Error::UnknownLabel(pair.label()))?;
    let nt = cube.targets.len();
    Ok((0..nt).fold(0.0, |acc, t| acc + cube.get(s, g, t)) / nt as f64)
}

/// Concept-level score: pair-mean for each query word, then the mean over
/// the query's words. Every word must be present in the cube.
pub fn aggregate_query(cube: &MeanBiasCube, rule: RuleKind, query: &Query) -> Result<f64> {
    if query.words.is_empty() {
        return Err(Error::InvalidArgument(format!("query {} is empty", query.name)));
    }
    let mut acc = 0.0;
    for w in &query.words {
        acc += aggregate_target(cube, rule, w)?;
    }
    Ok(acc / query.words.len() as f64)
}
