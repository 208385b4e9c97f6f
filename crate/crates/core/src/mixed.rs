//! Linear mixed model with two crossed random intercepts (algorithm and
//! corpus) fitted by maximum likelihood.
//!
//! The likelihood is profiled over the variance ratios
//! `theta_a = sigma2_nu / sigma2_eps` and `theta_c = sigma2_mu / sigma2_eps`.
//! For a given ratio pair the fixed effects and random intercepts come from
//! Henderson's mixed-model equations
//!
//! ```text
//! [ X'X   X'Z            ] [b]   [X'y]
//! [ Z'X   Z'Z + G^-1     ] [u] = [Z'y],   G = diag(theta)
//! ```
//!
//! and the residual variance is profiled out as `pRSS / n` with
//! `pRSS = y'y - [b u]'[X'y; Z'y]`. The profiled log-likelihood is
//!
//! ```text
//! -n/2 (ln(2 pi sigma2_eps) + 1) - 1/2 (ln|G| + ln|Z'Z + G^-1|)
//! ```
//!
//! Ratios are searched in log space: a coarse grid, then Nelder-Mead.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky};

pub const LOG_THETA_MIN: f64 = -25.0;
pub const LOG_THETA_MAX: f64 = 8.0;
/// A search that ends within this distance of the lower bound reports the
/// component as exactly zero.
const SNAP_MARGIN: f64 = 1e-3;
const GRID: [f64; 7] = [-8.0, -6.0, -4.0, -2.0, 0.0, 2.0, 4.0];
const SIMPLEX_TOL: f64 = 1e-6;
const COLLINEARITY_TOL: f64 = 1e-9;
const SMALL_GROUP: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Intercept,
    Continuous,
    Dummy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    /// Factor the column belongs to. A continuous column is its own factor;
    /// the dummies of a categorical predictor share one.
    pub factor: String,
}

impl Column {
    pub fn intercept() -> Self {
        Column {
            name: "(intercept)".into(),
            kind: ColumnKind::Intercept,
            factor: "(intercept)".into(),
        }
    }

    pub fn continuous(name: &str) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Continuous,
            factor: name.into(),
        }
    }

    pub fn dummy(factor: &str, level: &str) -> Self {
        Column {
            name: format!("{factor}={level}"),
            kind: ColumnKind::Dummy,
            factor: factor.into(),
        }
    }
}

/// Mean and standard deviation used to z-score the outcome and each
/// continuous column. `None` for columns left untouched.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scaling {
    pub y: (f64, f64),
    pub columns: Vec<Option<(f64, f64)>>,
}

#[derive(Debug, Clone)]
pub struct RegressionDataset {
    y: Vec<f64>,
    x: Vec<f64>,
    columns: Vec<Column>,
    algorithm: Vec<usize>,
    corpus: Vec<usize>,
    algorithm_levels: Vec<String>,
    corpus_levels: Vec<String>,
    references: Vec<(String, String)>,
    dropped_rows: usize,
    scaling: Option<Scaling>,
    warnings: Vec<String>,
}

fn levels_of(labels: &[String]) -> (Vec<String>, Vec<usize>) {
    let levels: Vec<String> = labels.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect();
    let idx = labels
        .iter()
        .map(|l| levels.binary_search(l).expect("level present"))
        .collect();
    (levels, idx)
}

impl RegressionDataset {
    /// `x` is row-major n x p and its first column must be the intercept.
    pub fn new(y: Vec<f64>, x: Vec<f64>, columns: Vec<Column>, algorithm: &[String], corpus: &[String]) -> Result<Self> {
        let n = y.len();
        let p = columns.len();
        if p == 0 || columns[0].kind != ColumnKind::Intercept {
            return Err(Error::InvalidArgument("design must start with an intercept column".into()));
        }
        if columns[1..].iter().any(|c| c.kind == ColumnKind::Intercept) {
            return Err(Error::InvalidArgument("only the first column may be the intercept".into()));
        }
        if x.len() != n * p || algorithm.len() != n || corpus.len() != n {
            return Err(Error::InvalidArgument(format!(
                "design is {} values for {n} rows and {p} columns; {} algorithm and {} corpus labels",
                x.len(),
                algorithm.len(),
                corpus.len()
            )));
        }
        if p >= n {
            return Err(Error::InvalidArgument(format!("need more rows than columns (n={n}, p={p})")));
        }
        if y.iter().chain(&x).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("non-finite value in regression data".into()));
        }
        for (j, c) in columns.iter().enumerate() {
            let col = (0..n).map(|i| x[i * p + j]);
            let bad = match c.kind {
                ColumnKind::Intercept => col.clone().any(|v| v != 1.0),
                ColumnKind::Dummy => col.clone().any(|v| v != 0.0 && v != 1.0),
                ColumnKind::Continuous => false,
            };
            if bad {
                return Err(Error::InvalidArgument(format!("column {} has values outside its kind", c.name)));
            }
        }
        let mut seen = BTreeSet::new();
        for c in &columns {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::InvalidArgument(format!("duplicate column name {}", c.name)));
            }
        }
        let (algorithm_levels, algorithm) = levels_of(algorithm);
        let (corpus_levels, corpus) = levels_of(corpus);
        Ok(RegressionDataset {
            y,
            x,
            columns,
            algorithm,
            corpus,
            algorithm_levels,
            corpus_levels,
            references: Vec::new(),
            dropped_rows: 0,
            scaling: None,
            warnings: Vec::new(),
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.columns.len()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let p = self.p();
        &self.x[i * p..(i + 1) * p]
    }

    pub fn columns(&self) -> &[Column] {
        &self.columns
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n()).map(|i| self.x[i * self.p() + j]).collect()
    }

    pub fn algorithm_levels(&self) -> &[String] {
        &self.algorithm_levels
    }

    pub fn corpus_levels(&self) -> &[String] {
        &self.corpus_levels
    }

    pub fn algorithm_index(&self) -> &[usize] {
        &self.algorithm
    }

    pub fn corpus_index(&self) -> &[usize] {
        &self.corpus
    }

    /// `(factor, reference level)` for every categorical predictor.
    pub fn references(&self) -> &[(String, String)] {
        &self.references
    }

    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn scaling(&self) -> Option<&Scaling> {
        self.scaling.as_ref()
    }

    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Factor names other than the intercept, in column order.
    pub fn factors(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for c in &self.columns[1..] {
            if !out.contains(&c.factor) {
                out.push(c.factor.clone());
            }
        }
        out
    }

    fn keep_columns(&self, keep: &[usize]) -> RegressionDataset {
        let p = self.p();
        let mut x = Vec::with_capacity(self.n() * keep.len());
        for i in 0..self.n() {
            x.extend(keep.iter().map(|&j| self.x[i * p + j]));
        }
        RegressionDataset {
            x,
            columns: keep.iter().map(|&j| self.columns[j].clone()).collect(),
            scaling: self.scaling.as_ref().map(|s| Scaling {
                y: s.y,
                columns: keep.iter().map(|&j| s.columns[j]).collect(),
            }),
            ..self.clone()
        }
    }

    /// The dataset with every column of `factor` removed.
    pub fn without_factor(&self, factor: &str) -> Result<RegressionDataset> {
        if !self.columns[1..].iter().any(|c| c.factor == factor) {
            return Err(Error::UnknownLabel(format!("regression factor {factor}")));
        }
        let keep: Vec<usize> = (0..self.p())
            .filter(|&j| j == 0 || self.columns[j].factor != factor)
            .collect();
        Ok(self.keep_columns(&keep))
    }

    /// A dataset made of the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> RegressionDataset {
        let p = self.p();
        let mut x = Vec::with_capacity(rows.len() * p);
        for &i in rows {
            x.extend_from_slice(&self.x[i * p..(i + 1) * p]);
        }
        RegressionDataset {
            y: rows.iter().map(|&i| self.y[i]).collect(),
            x,
            algorithm: rows.iter().map(|&i| self.algorithm[i]).collect(),
            corpus: rows.iter().map(|&i| self.corpus[i]).collect(),
            ..self.clone()
        }
    }

    /// Reverses [`standardize`]. Columns dropped during standardization
    /// stay dropped.
    pub fn destandardize(&self) -> RegressionDataset {
        let Some(s) = &self.scaling else {
            return self.clone();
        };
        let p = self.p();
        let mut out = self.clone();
        out.y = self.y.iter().map(|v| v * s.y.1 + s.y.0).collect();
        for (j, sc) in s.columns.iter().enumerate() {
            if let Some((m, sd)) = sc {
                for i in 0..self.n() {
                    out.x[i * p + j] = self.x[i * p + j] * sd + m;
                }
            }
        }
        out.scaling = None;
        out
    }
}

enum Predictor {
    Continuous(String, Vec<Option<f64>>),
    Categorical(String, Vec<Option<String>>),
}

/// Assembles a [`RegressionDataset`] from possibly incomplete observations.
/// Rows with any absent value are dropped and counted. Categorical
/// predictors are reference-coded against their alphabetically first level.
pub struct DatasetBuilder {
    y: Vec<Option<f64>>,
    algorithm: Vec<String>,
    corpus: Vec<String>,
    predictors: Vec<Predictor>,
}

impl DatasetBuilder {
    pub fn new(y: Vec<Option<f64>>, algorithm: Vec<String>, corpus: Vec<String>) -> Self {
        DatasetBuilder {
            y,
            algorithm,
            corpus,
            predictors: Vec::new(),
        }
    }

    fn check_len(&self, name: &str, len: usize) -> Result<()> {
        if len != self.y.len() {
            return Err(Error::InvalidArgument(format!(
                "predictor {name} has {len} values, outcome has {}",
                self.y.len()
            )));
        }
        Ok(())
    }

    pub fn continuous(mut self, name: &str, values: Vec<Option<f64>>) -> Result<Self> {
        self.check_len(name, values.len())?;
        self.predictors.push(Predictor::Continuous(name.into(), values));
        Ok(self)
    }

    pub fn categorical(mut self, name: &str, values: Vec<Option<String>>) -> Result<Self> {
        self.check_len(name, values.len())?;
        self.predictors.push(Predictor::Categorical(name.into(), values));
        Ok(self)
    }

    pub fn build(self) -> Result<RegressionDataset> {
        let n_all = self.y.len();
        if self.algorithm.len() != n_all || self.corpus.len() != n_all {
            return Err(Error::InvalidArgument("group labels must match the outcome length".into()));
        }
        let complete = |i: usize| {
            self.y[i].is_some_and(f64::is_finite)
                && self.predictors.iter().all(|p| match p {
                    Predictor::Continuous(_, v) => v[i].is_some_and(f64::is_finite),
                    Predictor::Categorical(_, v) => v[i].is_some(),
                })
        };
        let rows: Vec<usize> = (0..n_all).filter(|&i| complete(i)).collect();
        let mut warnings = Vec::new();
        let mut columns = vec![Column::intercept()];
        let mut data: Vec<Vec<f64>> = vec![vec![1.0; rows.len()]];
        let mut references = Vec::new();
        for pred in &self.predictors {
            match pred {
                Predictor::Continuous(name, v) => {
                    columns.push(Column::continuous(name));
                    data.push(rows.iter().map(|&i| v[i].unwrap()).collect());
                }
                Predictor::Categorical(name, v) => {
                    let labels: Vec<&str> = rows.iter().map(|&i| v[i].as_deref().unwrap()).collect();
                    let levels: Vec<&str> = labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
                    if levels.len() < 2 {
                        warnings.push(format!("factor {name} has fewer than two levels and was dropped"));
                        continue;
                    }
                    references.push((name.clone(), levels[0].to_string()));
                    for level in &levels[1..] {
                        columns.push(Column::dummy(name, level));
                        data.push(labels.iter().map(|l| if l == level { 1.0 } else { 0.0 }).collect());
                    }
                }
            }
        }
        let p = columns.len();
        let mut x = vec![0.0; rows.len() * p];
        for (j, col) in data.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                x[i * p + j] = *v;
            }
        }
        let pick = |labels: &[String]| rows.iter().map(|&i| labels[i].clone()).collect::<Vec<_>>();
        let mut ds = RegressionDataset::new(
            rows.iter().map(|&i| self.y[i].unwrap()).collect(),
            x,
            columns,
            &pick(&self.algorithm),
            &pick(&self.corpus),
        )?;
        ds.references = references;
        ds.dropped_rows = n_all - rows.len();
        if ds.dropped_rows > 0 {
            warnings.push(format!("{} rows with absent values dropped", ds.dropped_rows));
        }
        ds.warnings = warnings;
        Ok(ds)
    }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}

/// Z-scores the outcome and every continuous column (divisor n - 1).
/// Intercept and dummy columns are left alone; constant continuous columns
/// are dropped with a warning.
pub fn standardize(ds: &RegressionDataset) -> Result<RegressionDataset> {
    if ds.scaling.is_some() {
        return Err(Error::InvalidArgument("dataset is already standardized".into()));
    }
    let (ym, ysd) = mean_sd(&ds.y);
    if !(ysd > 0.0) {
        return Err(Error::InvalidArgument("outcome is constant".into()));
    }
    let mut warnings = ds.warnings.clone();
    let mut keep = Vec::new();
    let mut stats = Vec::new();
    for (j, c) in ds.columns.iter().enumerate() {
        if c.kind != ColumnKind::Continuous {
            keep.push(j);
            stats.push(None);
            continue;
        }
        let (m, sd) = mean_sd(&ds.column(j));
        if sd > 0.0 {
            keep.push(j);
            stats.push(Some((m, sd)));
        } else {
            warnings.push(format!("constant column {} dropped", c.name));
        }
    }
    let mut out = ds.keep_columns(&keep);
    let p = out.p();
    for v in &mut out.y {
        *v = (*v - ym) / ysd;
    }
    for (j, s) in stats.iter().enumerate() {
        if let Some((m, sd)) = s {
            for i in 0..out.n() {
                let v = &mut out.x[i * p + j];
                *v = (*v - m) / sd;
            }
        }
    }
    out.scaling = Some(Scaling {
        y: (ym, ysd),
        columns: stats,
    });
    out.warnings = warnings;
    Ok(out)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub fix_algorithm_zero: bool,
    pub fix_corpus_zero: bool,
    /// Give collinear columns a zero coefficient instead of failing.
    pub alias_collinear: bool,
    pub max_iterations: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            fix_algorithm_zero: false,
            fix_corpus_zero: false,
            alias_collinear: false,
            max_iterations: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct R2 {
    pub fixed: f64,
    pub algorithm: f64,
    pub corpus: f64,
    pub total: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct LmmFit {
    pub names: Vec<String>,
    pub beta: Vec<f64>,
    pub se: Vec<f64>,
    pub p_values: Vec<f64>,
    pub significant: Vec<bool>,
    pub sigma2_nu: f64,
    pub sigma2_mu: f64,
    pub sigma2_eps: f64,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Final log variance ratios; `None` for components fixed or snapped to 0.
    pub log_theta: [Option<f64>; 2],
    pub r2_fixed: f64,
    pub r2_algorithm: f64,
    pub r2_corpus: f64,
    pub r2_total: f64,
    pub aliased: Vec<String>,
    pub warnings: Vec<String>,
    pub n: usize,
}

impl LmmFit {
    pub fn coefficient(&self, name: &str) -> Option<(f64, f64)> {
        self.names.iter().position(|n| n == name).map(|j| (self.beta[j], self.se[j]))
    }
}

/// Indices of columns that are (numerically) linear combinations of earlier
/// columns, found by modified Gram-Schmidt with reorthogonalization.
pub fn collinear_columns(ds: &RegressionDataset) -> Vec<usize> {
    let (n, p) = (ds.n(), ds.p());
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut out = Vec::new();
    for j in 0..p {
        let mut v = ds.column(j);
        let orig = dot(&v, &v).sqrt();
        for _ in 0..2 {
            for b in &basis {
                let c = dot(b, &v);
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
            }
        }
        let r = dot(&v, &v).sqrt();
        if orig == 0.0 || r <= COLLINEARITY_TOL * orig {
            out.push(j);
        } else {
            v.iter_mut().for_each(|x| *x /= r);
            basis.push(v);
        }
        debug_assert_eq!(basis.last().map_or(n, |b| b.len()), n);
    }
    out
}

/// Cross-products accumulated once per fit, in a canonical row order so the
/// result does not depend on how the rows were ordered.
struct CrossProducts {
    n: usize,
    p: usize,
    qa: usize,
    qc: usize,
    xtx: Vec<f64>,
    xtz: Vec<f64>,
    ztz: Vec<f64>,
    xty: Vec<f64>,
    zty: Vec<f64>,
    yty: f64,
}

fn canonical_order(ds: &RegressionDataset) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ds.n()).collect();
    order.sort_by(|&i, &j| {
        ds.algorithm[i]
            .cmp(&ds.algorithm[j])
            .then(ds.corpus[i].cmp(&ds.corpus[j]))
            .then(ds.y[i].total_cmp(&ds.y[j]))
            .then_with(|| {
                ds.row(i)
                    .iter()
                    .zip(ds.row(j))
                    .map(|(a, b)| a.total_cmp(b))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    order
}

impl CrossProducts {
    fn new(ds: &RegressionDataset) -> Self {
        let (n, p) = (ds.n(), ds.p());
        let (qa, qc) = (ds.algorithm_levels.len(), ds.corpus_levels.len());
        let q = qa + qc;
        let mut cp = CrossProducts {
            n,
            p,
            qa,
            qc,
            xtx: vec![0.0; p * p],
            xtz: vec![0.0; p * q],
            ztz: vec![0.0; q * q],
            xty: vec![0.0; p],
            zty: vec![0.0; q],
            yty: 0.0,
        };
        for i in canonical_order(ds) {
            let xr = ds.row(i);
            let y = ds.y[i];
            let (a, c) = (ds.algorithm[i], qa + ds.corpus[i]);
            for r in 0..p {
                let xv = xr[r];
                for s in r..p {
                    cp.xtx[r * p + s] += xv * xr[s];
                }
                cp.xtz[r * q + a] += xv;
                cp.xtz[r * q + c] += xv;
                cp.xty[r] += xv * y;
            }
            cp.ztz[a * q + a] += 1.0;
            cp.ztz[c * q + c] += 1.0;
            cp.ztz[a * q + c] += 1.0;
            cp.ztz[c * q + a] += 1.0;
            cp.zty[a] += y;
            cp.zty[c] += y;
            cp.yty += y * y;
        }
        for r in 0..p {
            for s in 0..r {
                cp.xtx[r * p + s] = cp.xtx[s * p + r];
            }
        }
        cp
    }

    /// Random-effect columns of `Z` in use and their variance ratios.
    fn active(&self, theta: [Option<f64>; 2]) -> Vec<(usize, f64)> {
        let mut out = Vec::new();
        if let Some(t) = theta[0] {
            out.extend((0..self.qa).map(|i| (i, t)));
        }
        if let Some(t) = theta[1] {
            out.extend((0..self.qc).map(|i| (self.qa + i, t)));
        }
        out
    }

    fn evaluate(&self, theta: [Option<f64>; 2]) -> std::result::Result<Evaluation, usize> {
        let (p, q) = (self.p, self.qa + self.qc);
        let z = self.active(theta);
        let m = p + z.len();
        let mut c = vec![0.0; m * m];
        let mut rhs = vec![0.0; m];
        for r in 0..p {
            c[r * m..r * m + p].copy_from_slice(&self.xtx[r * p..(r + 1) * p]);
            for (k, &(zi, _)) in z.iter().enumerate() {
                c[r * m + p + k] = self.xtz[r * q + zi];
                c[(p + k) * m + r] = self.xtz[r * q + zi];
            }
            rhs[r] = self.xty[r];
        }
        let nz = z.len();
        let mut lower = vec![0.0; nz * nz];
        let mut log_g = 0.0;
        for (k, &(zi, t)) in z.iter().enumerate() {
            for (l, &(zj, _)) in z.iter().enumerate() {
                lower[k * nz + l] = self.ztz[zi * q + zj];
            }
            lower[k * nz + k] += 1.0 / t;
            log_g += t.ln();
            rhs[p + k] = self.zty[zi];
        }
        for k in 0..nz {
            c[(p + k) * m + p..(p + k + 1) * m].copy_from_slice(&lower[k * nz..(k + 1) * nz]);
        }
        let log_det_lower = if nz == 0 {
            0.0
        } else {
            Cholesky::new(&lower, nz).map_err(|j| p + j)?.log_det()
        };
        let chol = Cholesky::new(&c, m)?;
        let sol = chol.solve(&rhs);
        let prss = (self.yty - dot(&sol, &rhs)).max(f64::MIN_POSITIVE);
        let n = self.n as f64;
        let sigma2 = prss / n;
        let loglik = -0.5 * n * ((2.0 * std::f64::consts::PI * sigma2).ln() + 1.0) - 0.5 * (log_g + log_det_lower);
        Ok(Evaluation {
            loglik,
            sigma2_eps: sigma2,
            beta: sol[..p].to_vec(),
            chol,
            m,
        })
    }
}

struct Evaluation {
    loglik: f64,
    sigma2_eps: f64,
    beta: Vec<f64>,
    chol: Cholesky,
    m: usize,
}

/// Minimizes `f` with the Nelder-Mead simplex method. Returns the best
/// vertex, its value, the iteration count and whether the simplex diameter
/// fell below `tol`.
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, start: &[f64], step: f64, tol: f64, max_iter: usize) -> (Vec<f64>, f64, usize, bool) {
    let dim = start.len();
    let mut pts: Vec<Vec<f64>> = vec![start.to_vec()];
    for i in 0..dim {
        let mut v = start.to_vec();
        v[i] += step;
        pts.push(v);
    }
    let mut vals: Vec<f64> = pts.iter().map(|v| f(v)).collect();
    let diameter = |pts: &[Vec<f64>]| {
        let mut d = 0.0f64;
        for a in pts {
            for b in pts {
                d = d.max(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt());
            }
        }
        d
    };
    let mut iter = 0;
    let mut converged = false;
    while iter < max_iter {
        let mut order: Vec<usize> = (0..=dim).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        if diameter(&pts) < tol {
            converged = true;
            break;
        }
        iter += 1;
        let centroid: Vec<f64> = (0..dim)
            .map(|j| pts[..dim].iter().map(|v| v[j]).sum::<f64>() / dim as f64)
            .collect();
        let along = |t: f64| -> Vec<f64> { (0..dim).map(|j| centroid[j] + t * (pts[dim][j] - centroid[j])).collect() };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < vals[0] {
            let xe = along(-2.0);
            let fe = f(&xe);
            if fe < fr {
                pts[dim] = xe;
                vals[dim] = fe;
            } else {
                pts[dim] = xr;
                vals[dim] = fr;
            }
            continue;
        }
        if fr < vals[dim - 1] {
            pts[dim] = xr;
            vals[dim] = fr;
            continue;
        }
        let (xc, fc) = if fr < vals[dim] {
            let x = along(-0.5);
            let v = f(&x);
            (x, v)
        } else {
            let x = along(0.5);
            let v = f(&x);
            (x, v)
        };
        if fc < vals[dim].min(fr) {
            pts[dim] = xc;
            vals[dim] = fc;
            continue;
        }
        for i in 1..=dim {
            pts[i] = (0..dim).map(|j| pts[0][j] + 0.5 * (pts[i][j] - pts[0][j])).collect();
            vals[i] = f(&pts[i]);
        }
    }
    (pts[0].clone(), vals[0], iter, converged)
}

fn clamp_log(v: f64) -> f64 {
    v.clamp(LOG_THETA_MIN, LOG_THETA_MAX)
}

/// Profiled log-likelihood at the given log variance ratios (`None` removes
/// the component). Exposed for optimality probes.
pub fn profile_loglik(ds: &RegressionDataset, log_theta: [Option<f64>; 2]) -> Result<f64> {
    let cp = CrossProducts::new(ds);
    cp.evaluate(log_theta.map(|t| t.map(|v| clamp_log(v).exp())))
        .map(|e| e.loglik)
        .map_err(|j| collinear_error(ds, j))
}

fn collinear_error(ds: &RegressionDataset, pivot: usize) -> Error {
    let mut names: Vec<String> = collinear_columns(ds).into_iter().map(|j| ds.columns[j].name.clone()).collect();
    if names.is_empty() {
        names.push(ds.columns.get(pivot).map_or_else(|| "(random effects)".into(), |c| c.name.clone()));
    }
    Error::Collinear(names)
}

/// Variance partition of a fit. `var(X beta)` uses the n - 1 divisor.
pub fn r2_decomposition(fit: &LmmFit, ds: &RegressionDataset) -> R2 {
    let eta: Vec<f64> = (0..ds.n()).map(|i| dot(ds.row(i), &fit.beta)).collect();
    // Deviations from the first value keep a constant predictor exactly at zero variance.
    let shifted: Vec<f64> = eta.iter().map(|v| v - eta[0]).collect();
    let var_fixed = if eta.len() > 1 { mean_sd(&shifted).1.powi(2) } else { 0.0 };
    let v_tot = var_fixed + fit.sigma2_nu + fit.sigma2_mu + fit.sigma2_eps;
    let fixed = var_fixed / v_tot;
    let algorithm = fit.sigma2_nu / v_tot;
    let corpus = fit.sigma2_mu / v_tot;
    R2 {
        fixed,
        algorithm,
        corpus,
        total: fixed + algorithm + corpus,
        residual: fit.sigma2_eps / v_tot,
    }
}

/// Maximum-likelihood fit of the crossed random-intercept model.
pub fn fit_lmm(ds: &RegressionDataset, opts: &FitOptions) -> Result<LmmFit> {
    let mut warnings = Vec::new();
    let (qa, qc) = (ds.algorithm_levels.len(), ds.corpus_levels.len());
    let mut free = [!opts.fix_algorithm_zero, !opts.fix_corpus_zero];
    for (k, (label, q)) in [("algorithm", qa), ("corpus", qc)].into_iter().enumerate() {
        if q < 2 && free[k] {
            warnings.push(format!("{label} has {q} level(s); its variance component is fixed at 0"));
            free[k] = false;
        } else if q < SMALL_GROUP && free[k] {
            warnings.push(format!("{label} has only {q} levels; its variance component is poorly determined"));
        }
    }
    let q_used = if free[0] { qa } else { 0 } + if free[1] { qc } else { 0 };
    if ds.n() <= ds.p() + q_used {
        return Err(Error::InvalidArgument(format!(
            "too few rows for the model (n={}, p={}, random levels={q_used})",
            ds.n(),
            ds.p()
        )));
    }

    let aliased_idx = collinear_columns(ds);
    if !aliased_idx.is_empty() && !opts.alias_collinear {
        return Err(Error::Collinear(aliased_idx.iter().map(|&j| ds.columns[j].name.clone()).collect()));
    }
    let keep: Vec<usize> = (0..ds.p()).filter(|j| !aliased_idx.contains(j)).collect();
    let work = if aliased_idx.is_empty() { ds.clone() } else { ds.keep_columns(&keep) };
    let aliased: Vec<String> = aliased_idx.iter().map(|&j| ds.columns[j].name.clone()).collect();
    if !aliased.is_empty() {
        warnings.push(format!("aliased columns set to zero: {}", aliased.join(", ")));
    }

    let cp = CrossProducts::new(&work);
    let free_dims: Vec<usize> = (0..2).filter(|&k| free[k]).collect();
    let theta_of = |x: &[f64]| -> [Option<f64>; 2] {
        let mut t = [None, None];
        for (slot, &k) in free_dims.iter().enumerate() {
            t[k] = Some(clamp_log(x[slot]).exp());
        }
        t
    };
    let objective = |x: &[f64]| -> f64 { cp.evaluate(theta_of(x)).map_or(f64::INFINITY, |e| -e.loglik) };

    let (mut log_theta, iterations, converged) = if free_dims.is_empty() {
        ([None, None], 0, true)
    } else {
        let mut best = (f64::INFINITY, vec![0.0; free_dims.len()]);
        let grid_points: Vec<Vec<f64>> = if free_dims.len() == 1 {
            GRID.iter().map(|&a| vec![a]).collect()
        } else {
            GRID.iter().flat_map(|&a| GRID.iter().map(move |&b| vec![a, b])).collect()
        };
        for g in grid_points {
            let v = objective(&g);
            if v < best.0 {
                best = (v, g);
            }
        }
        if !best.0.is_finite() {
            return Err(collinear_error(&work, 0));
        }
        let (x, _, it, ok) = nelder_mead(&objective, &best.1, 1.0, SIMPLEX_TOL, opts.max_iterations);
        let mut lt = [None, None];
        for (slot, &k) in free_dims.iter().enumerate() {
            lt[k] = Some(clamp_log(x[slot]));
        }
        (lt, it, ok)
    };
    if !converged {
        warnings.push(format!("simplex search did not converge after {iterations} iterations"));
    }
    for v in log_theta.iter_mut() {
        if v.is_some_and(|x| x <= LOG_THETA_MIN + SNAP_MARGIN) {
            *v = None;
        }
    }

    let theta = log_theta.map(|t| t.map(f64::exp));
    let eval = cp.evaluate(theta).map_err(|j| collinear_error(&work, j))?;
    let cinv = eval.chol.inverse();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let p_full = ds.p();
    let mut beta = vec![0.0; p_full];
    let mut se = vec![f64::NAN; p_full];
    for (slot, &j) in keep.iter().enumerate() {
        beta[j] = eval.beta[slot];
        se[j] = (eval.sigma2_eps * cinv[slot * eval.m + slot]).sqrt();
    }
    let p_values: Vec<f64> = beta
        .iter()
        .zip(&se)
        .map(|(b, s)| {
            if s.is_finite() && *s > 0.0 {
                2.0 * (1.0 - normal.cdf((b / s).abs()))
            } else {
                f64::NAN
            }
        })
        .collect();
    let mut fit = LmmFit {
        names: ds.columns.iter().map(|c| c.name.clone()).collect(),
        significant: p_values.iter().map(|p| *p < 0.05).collect(),
        beta,
        se,
        p_values,
        sigma2_nu: theta[0].map_or(0.0, |t| t * eval.sigma2_eps),
        sigma2_mu: theta[1].map_or(0.0, |t| t * eval.sigma2_eps),
        sigma2_eps: eval.sigma2_eps,
        loglik: eval.loglik,
        converged,
        iterations,
        log_theta,
        r2_fixed: 0.0,
        r2_algorithm: 0.0,
        r2_corpus: 0.0,
        r2_total: 0.0,
        aliased,
        warnings,
        n: ds.n(),
    };
    let r2 = r2_decomposition(&fit, ds);
    fit.r2_fixed = r2.fixed;
    fit.r2_algorithm = r2.algorithm;
    fit.r2_corpus = r2.corpus;
    fit.r2_total = r2.total;
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DeltaR2 {
    pub factor: String,
    pub r2_fixed_full: f64,
    pub r2_fixed_reduced: f64,
    pub delta: f64,
}

/// Drop in fixed-effect R² when every column of `factor` is left out.
pub fn delta_r2(ds: &RegressionDataset, factor: &str, opts: &FitOptions) -> Result<DeltaR2> {
    let reduced = ds.without_factor(factor)?;
    let (full, red) = rayon::join(|| fit_lmm(ds, opts), || fit_lmm(&reduced, opts));
    delta_from(factor, &full?, &red?)
}

/// Same as [`delta_r2`] but reuses an existing fit of the full model.
pub fn delta_r2_with_full(ds: &RegressionDataset, full: &LmmFit, factor: &str, opts: &FitOptions) -> Result<DeltaR2> {
    let reduced = ds.without_factor(factor)?;
    delta_from(factor, full, &fit_lmm(&reduced, opts)?)
}

fn delta_from(factor: &str, full: &LmmFit, reduced: &LmmFit) -> Result<DeltaR2> {
    Ok(DeltaR2 {
        factor: factor.to_string(),
        r2_fixed_full: full.r2_fixed,
        r2_fixed_reduced: reduced.r2_fixed,
        delta: full.r2_fixed - reduced.r2_fixed,
    })
}
