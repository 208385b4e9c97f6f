//! Reliability estimators over objects x raters matrices.
//!
//! ICC forms follow Shrout & Fleiss. Seeds are treated as a random sample of
//! raters, each object is rated by every seed, and a single seed is what a
//! practitioner would use, so test-retest reliability uses ICC(2,1). The three
//! scoring rules are the only raters of interest and again a single rule is
//! used in practice, so inter-rater consistency uses ICC(3,1). Neither choice
//! is configurable. Internal consistency uses Cronbach's alpha with items as
//! columns.

use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::scoring::{BiasTensor, MeanBiasCube, Query, RuleKind};

/// Relative tolerance for degenerate denominators, scaled by the mean
/// absolute matrix entry.
pub const DEGENERACY_TOL: f64 = 1e-12;

/// Objects in rows, raters (or items) in columns. Row-major, no missing cells.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsMatrix {
    values: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
}

impl RatingsMatrix {
    pub fn new(values: Vec<f64>, n_rows: usize, n_cols: usize) -> Result<Self> {
        if n_rows < 2 || n_cols < 2 {
            return Err(Error::InvalidArgument(format!(
                "ratings matrix needs at least 2 rows and 2 columns, got {n_rows} x {n_cols}"
            )));
        }
        if values.len() != n_rows * n_cols {
            return Err(Error::InvalidArgument(format!(
                "ratings matrix has {} values, expected {n_rows} x {n_cols}",
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("ratings matrix has non-finite entries".into()));
        }
        Ok(RatingsMatrix {
            values,
            n_rows,
            n_cols,
            row_labels: (0..n_rows).map(|i| i.to_string()).collect(),
            col_labels: (0..n_cols).map(|j| j.to_string()).collect(),
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_cols) {
            return Err(Error::InvalidArgument("ragged ratings rows".into()));
        }
        Self::new(rows.concat(), rows.len(), n_cols)
    }

    pub fn with_labels(mut self, rows: Vec<String>, cols: Vec<String>) -> Self {
        assert_eq!(rows.len(), self.n_rows);
        assert_eq!(cols.len(), self.n_cols);
        self.row_labels = rows;
        self.col_labels = cols;
        self
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n_cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.get(i, j)).collect()
    }

    /// Mean absolute entry; the reference scale for degeneracy checks.
    pub fn scale(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() / self.values.len() as f64
    }

    /// Each column centred and divided by its sample standard deviation.
    /// Constant columns become all zeros.
    pub fn zscore_columns(&self) -> RatingsMatrix {
        let mut out = self.clone();
        for j in 0..self.n_cols {
            let col = self.column(j);
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
            let sd = var.sqrt();
            for i in 0..self.n_rows {
                let z = if sd > 0.0 { (col[i] - mean) / sd } else { 0.0 };
                out.values[i * self.n_cols + j] = z;
            }
        }
        out
    }
}

/// Two-way ANOVA without replication.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnovaTable {
    pub ss_rows: f64,
    pub ss_cols: f64,
    pub ss_error: f64,
    pub ss_total: f64,
    pub df_rows: usize,
    pub df_cols: usize,
    pub df_error: usize,
    pub ms_rows: f64,
    pub ms_cols: f64,
    pub ms_error: f64,
}

pub fn two_way_anova(m: &RatingsMatrix) -> AnovaTable {
    let (n, r) = (m.n_rows, m.n_cols);
    let grand = m.values.iter().sum::<f64>() / (n * r) as f64;
    let row_means: Vec<f64> = (0..n)
        .map(|i| (0..r).map(|j| m.get(i, j)).sum::<f64>() / r as f64)
        .collect();
    let col_means: Vec<f64> = (0..r)
        .map(|j| (0..n).map(|i| m.get(i, j)).sum::<f64>() / n as f64)
        .collect();

    let ss_rows = r as f64 * row_means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let ss_cols = n as f64 * col_means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let mut ss_error = 0.0;
    let mut ss_total = 0.0;
    for i in 0..n {
        for j in 0..r {
            let x = m.get(i, j);
            ss_total += (x - grand).powi(2);
            ss_error += (x - row_means[i] - col_means[j] + grand).powi(2);
        }
    }
    let (df_rows, df_cols, df_error) = (n - 1, r - 1, (n - 1) * (r - 1));
    AnovaTable {
        ss_rows,
        ss_cols,
        ss_error,
        ss_total,
        df_rows,
        df_cols,
        df_error,
        ms_rows: ss_rows / df_rows as f64,
        ms_cols: ss_cols / df_cols as f64,
        ms_error: ss_error / df_error as f64,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Estimator {
    #[serde(rename = "icc21")]
    Icc21,
    #[serde(rename = "icc31")]
    Icc31,
    #[serde(rename = "alpha")]
    Alpha,
}

impl Estimator {
    pub fn as_str(self) -> &'static str {
        match self {
            Estimator::Icc21 => "icc21",
            Estimator::Icc31 => "icc31",
            Estimator::Alpha => "alpha",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Band {
    Poor,
    Moderate,
    Good,
    Excellent,
    Acceptable,
    Unacceptable,
    Undefined,
}

impl Band {
    pub fn as_str(self) -> &'static str {
        match self {
            Band::Poor => "poor",
            Band::Moderate => "moderate",
            Band::Good => "good",
            Band::Excellent => "excellent",
            Band::Acceptable => "acceptable",
            Band::Unacceptable => "unacceptable",
            Band::Undefined => "undefined",
        }
    }
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// ICC: below 0.5 poor, below 0.75 moderate, below 0.9 good, else excellent.
/// Alpha: 0.7 and above acceptable. Non-finite values are undefined.
pub fn band(value: f64, estimator: Estimator) -> Band {
    if !value.is_finite() {
        return Band::Undefined;
    }
    match estimator {
        Estimator::Icc21 | Estimator::Icc31 => {
            if value < 0.5 {
                Band::Poor
            } else if value < 0.75 {
                Band::Moderate
            } else if value < 0.9 {
                Band::Good
            } else {
                Band::Excellent
            }
        }
        Estimator::Alpha => {
            if value >= 0.7 {
                Band::Acceptable
            } else {
                Band::Unacceptable
            }
        }
    }
}

/// An estimator value. Negative values are reported as computed; degenerate
/// inputs carry `NaN` and band `Undefined`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReliabilityScore {
    pub value: f64,
    pub estimator: Estimator,
    pub band: Band,
    pub degenerate: bool,
    pub n: usize,
    pub r: usize,
}

impl ReliabilityScore {
    fn from_ratio(num: f64, den: f64, scale: f64, estimator: Estimator, n: usize, r: usize) -> Self {
        if den.abs() <= DEGENERACY_TOL * scale || den == 0.0 {
            return ReliabilityScore {
                value: f64::NAN,
                estimator,
                band: Band::Undefined,
                degenerate: true,
                n,
                r,
            };
        }
        let value = num / den;
        ReliabilityScore {
            value,
            estimator,
            band: band(value, estimator),
            degenerate: false,
            n,
            r,
        }
    }

    pub fn defined(&self) -> Option<f64> {
        (!self.degenerate).then_some(self.value)
    }
}

/// ICC(2,1): two-way random effects, absolute agreement, single rater.
pub fn icc21(m: &RatingsMatrix) -> ReliabilityScore {
    let a = two_way_anova(m);
    let (n, r) = (m.n_rows as f64, m.n_cols as f64);
    let num = a.ms_rows - a.ms_error;
    let den = a.ms_rows + (r - 1.0) * a.ms_error + (r / n) * (a.ms_cols - a.ms_error);
    ReliabilityScore::from_ratio(num, den, m.scale(), Estimator::Icc21, m.n_rows, m.n_cols)
}

/// ICC(3,1): two-way mixed effects, consistency, single rater.
pub fn icc31(m: &RatingsMatrix) -> ReliabilityScore {
    let a = two_way_anova(m);
    let r = m.n_cols as f64;
    let num = a.ms_rows - a.ms_error;
    let den = a.ms_rows + (r - 1.0) * a.ms_error;
    ReliabilityScore::from_ratio(num, den, m.scale(), Estimator::Icc31, m.n_rows, m.n_cols)
}

/// Cronbach's alpha with columns as items. Variances use the `n - 1`
/// divisor throughout; the divisor cancels in the ratio.
pub fn cronbach_alpha(m: &RatingsMatrix) -> ReliabilityScore {
    let (n, r) = (m.n_rows, m.n_cols);
    let item_var: f64 = (0..r).map(|j| sample_variance(&m.column(j))).sum();
    let totals: Vec<f64> = (0..n).map(|i| (0..r).map(|j| m.get(i, j)).sum()).collect();
    let total_var = sample_variance(&totals);
    let rf = r as f64;
    // alpha = r/(r-1) * (total_var - item_var) / total_var
    let num = rf / (rf - 1.0) * (total_var - item_var);
    ReliabilityScore::from_ratio(num, total_var, m.scale(), Estimator::Alpha, n, r)
}

pub(crate) fn sample_variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitType {
    Target,
    Pair,
    Query,
    BasepairEnsemble,
}

impl UnitType {
    pub fn as_str(self) -> &'static str {
        match self {
            UnitType::Target => "target",
            UnitType::Pair => "pair",
            UnitType::Query => "query",
            UnitType::BasepairEnsemble => "basepair_ensemble",
        }
    }
}

/// One matrix cut from the bias tensor, with the unit it describes.
#[derive(Debug, Clone)]
pub struct Unit {
    pub unit_type: UnitType,
    pub unit: String,
    /// `None` when the columns are the rules themselves.
    pub rule: Option<RuleKind>,
    pub matrix: RatingsMatrix,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Skipped {
    pub unit_type: UnitType,
    pub unit: String,
    pub rule: Option<RuleKind>,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct MatrixFamily {
    pub units: Vec<Unit>,
    pub skipped: Vec<Skipped>,
}

impl MatrixFamily {
    fn push(
        &mut self,
        unit_type: UnitType,
        unit: String,
        rule: Option<RuleKind>,
        rows: (usize, Vec<String>),
        cols: Vec<String>,
        values: Vec<f64>,
    ) {
        let (n_rows, row_labels) = rows;
        match RatingsMatrix::new(values, n_rows, cols.len()) {
            Ok(m) => self.units.push(Unit {
                unit_type,
                unit,
                rule,
                matrix: m.with_labels(row_labels, cols),
            }),
            Err(e) => self.skipped.push(Skipped {
                unit_type,
                unit,
                rule,
                reason: e.to_string(),
            }),
        }
    }

    /// Applies `estimator` to every unit, in parallel, preserving order.
    pub fn estimate(&self, estimator: fn(&RatingsMatrix) -> ReliabilityScore) -> Vec<ReliabilityScore> {
        self.units.par_iter().map(|u| estimator(&u.matrix)).collect()
    }
}

/// Test-retest matrices, one family per rule: per target `pairs x models`
/// and per pair `targets x models`.
pub fn build_retest_matrices(b: &BiasTensor) -> MatrixFamily {
    let (ns, ng, nt, nk) = b.shape();
    let pair_labels: Vec<String> = b.pairs.iter().map(|p| p.label()).collect();
    let mut fam = MatrixFamily::default();
    for s in 0..ns {
        let rule = Some(b.rules[s].kind);
        for t in 0..nt {
            let values = (0..ng).flat_map(|g| (0..nk).map(move |k| (g, k))).map(|(g, k)| b.get(s, g, t, k)).collect();
            fam.push(UnitType::Target, b.targets[t].clone(), rule, (ng, pair_labels.clone()), b.models.clone(), values);
        }
        for g in 0..ng {
            let values = (0..nt).flat_map(|t| (0..nk).map(move |k| (t, k))).map(|(t, k)| b.get(s, g, t, k)).collect();
            fam.push(UnitType::Pair, pair_labels[g].clone(), rule, (nt, b.targets.clone()), b.models.clone(), values);
        }
    }
    fam
}

/// Inter-rater matrices from the model-averaged cube: per target
/// `pairs x rules` and per pair `targets x rules`.
pub fn build_interrater_matrices(cube: &MeanBiasCube) -> MatrixFamily {
    let (ns, ng, nt) = cube.shape();
    let pair_labels: Vec<String> = cube.pairs.iter().map(|p| p.label()).collect();
    let rule_labels: Vec<String> = cube.rules.iter().map(|r| r.label().to_string()).collect();
    let mut fam = MatrixFamily::default();
    for t in 0..nt {
        let values = (0..ng).flat_map(|g| (0..ns).map(move |s| (g, s))).map(|(g, s)| cube.get(s, g, t)).collect();
        fam.push(UnitType::Target, cube.targets[t].clone(), None, (ng, pair_labels.clone()), rule_labels.clone(), values);
    }
    for g in 0..ng {
        let values = (0..nt).flat_map(|t| (0..ns).map(move |s| (t, s))).map(|(t, s)| cube.get(s, g, t)).collect();
        fam.push(UnitType::Pair, pair_labels[g].clone(), None, (nt, cube.targets.clone()), rule_labels.clone(), values);
    }
    fam
}

/// Internal-consistency matrices, per rule: for each query a `pairs x words`
/// matrix (query words as items), and, when `ensemble_name` is given, one
/// `targets x pairs` matrix over the whole cube (pairs as items).
///
/// Query words absent from the cube are left out of that query's matrix.
pub fn build_internal_matrices(cube: &MeanBiasCube, queries: &[Query], ensemble_name: Option<&str>) -> MatrixFamily {
    let (ns, ng, nt) = cube.shape();
    let pair_labels: Vec<String> = cube.pairs.iter().map(|p| p.label()).collect();
    let mut fam = MatrixFamily::default();
    for s in 0..ns {
        let rule = Some(cube.rules[s].kind);
        for q in queries {
            let (idx, words): (Vec<usize>, Vec<String>) = q
                .words
                .iter()
                .filter_map(|w| cube.target_index(w).map(|i| (i, w.clone())))
                .unzip();
            let values = (0..ng).flat_map(|g| idx.iter().map(move |&t| (g, t))).map(|(g, t)| cube.get(s, g, t)).collect();
            fam.push(UnitType::Query, q.name.clone(), rule, (ng, pair_labels.clone()), words, values);
        }
        if let Some(name) = ensemble_name {
            let values = (0..nt).flat_map(|t| (0..ng).map(move |g| (t, g))).map(|(t, g)| cube.get(s, g, t)).collect();
            fam.push(UnitType::BasepairEnsemble, name.to_string(), rule, (nt, cube.targets.clone()), pair_labels.clone(), values);
        }
    }
    fam
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scoring::{BasePair, ScoringRule};
    use rand::{Rng, SeedableRng};

    fn rows(r: &[&[f64]]) -> RatingsMatrix {
        RatingsMatrix::from_rows(&r.iter().map(|x| x.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn random(n: usize, r: usize, seed: u64) -> RatingsMatrix {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let v = (0..n * r).map(|_| rng.gen_range(-1.0..1.0)).collect();
        RatingsMatrix::new(v, n, r).unwrap()
    }

    #[test]
    fn anova_constant_and_identical_columns() {
        let c = rows(&[&[0.3, 0.3], &[0.3, 0.3], &[0.3, 0.3]]);
        let a = two_way_anova(&c);
        assert!(a.ms_rows.abs() < 1e-30 && a.ms_cols.abs() < 1e-30 && a.ms_error.abs() < 1e-30);

        let m = rows(&[&[1.0, 1.0, 1.0], &[2.0, 2.0, 2.0], &[-4.0, -4.0, -4.0]]);
        let a = two_way_anova(&m);
        assert_eq!(a.ms_cols, 0.0);
        assert_eq!(a.ms_error, 0.0);
        assert!(a.ms_rows > 0.0);
    }

    #[test]
    fn anova_matches_double_loop() {
        let m = random(6, 4, 9);
        let a = two_way_anova(&m);
        // Oracle: SS from explicit nested sums of effects.
        let (n, r) = (6usize, 4usize);
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..r {
                total += m.get(i, j);
            }
        }
        let g = total / 24.0;
        let mut ss_r = 0.0;
        for i in 0..n {
            let mut s = 0.0;
            for j in 0..r {
                s += m.get(i, j);
            }
            let d = s / r as f64 - g;
            for _ in 0..r {
                ss_r += d * d;
            }
        }
        let mut ss_c = 0.0;
        for j in 0..r {
            let mut s = 0.0;
            for i in 0..n {
                s += m.get(i, j);
            }
            let d = s / n as f64 - g;
            for _ in 0..n {
                ss_c += d * d;
            }
        }
        let mut ss_t = 0.0;
        for i in 0..n {
            for j in 0..r {
                ss_t += (m.get(i, j) - g) * (m.get(i, j) - g);
            }
        }
        assert!((a.ss_rows - ss_r).abs() < 1e-10);
        assert!((a.ss_cols - ss_c).abs() < 1e-10);
        assert!((a.ss_error - (ss_t - ss_r - ss_c)).abs() < 1e-10);
        assert!((a.ss_total - ss_t).abs() < 1e-10);
    }

    #[test]
    fn icc_trivial_values() {
        let m = rows(&[&[1.0, 1.0, 1.0], &[2.0, 2.0, 2.0], &[0.5, 0.5, 0.5]]);
        assert!((icc21(&m).value - 1.0).abs() < 1e-12);
        assert!((icc31(&m).value - 1.0).abs() < 1e-12);
        let c = rows(&[&[2.0, 2.0], &[2.0, 2.0]]);
        for s in [icc21(&c), icc31(&c), cronbach_alpha(&c)] {
            assert!(s.degenerate);
            assert_eq!(s.band, Band::Undefined);
            assert!(s.value.is_nan());
        }
        let z = rows(&[&[0.0, 0.0], &[0.0, 0.0]]);
        assert!(icc21(&z).degenerate);
    }

    #[test]
    fn icc21_matches_shrout_fleiss_5x3() {
        let m = random(5, 3, 1);
        // Oracle in Shrout-Fleiss notation: BMS, JMS, EMS from sums of squares.
        let (n, k) = (5.0, 3.0);
        let x: Vec<Vec<f64>> = (0..5).map(|i| (0..3).map(|j| m.get(i, j)).collect()).collect();
        let g = x.iter().flatten().sum::<f64>() / 15.0;
        let bss: f64 = x.iter().map(|r| k * (r.iter().sum::<f64>() / k - g).powi(2)).sum();
        let jss: f64 = (0..3)
            .map(|j| n * ((0..5).map(|i| x[i][j]).sum::<f64>() / n - g).powi(2))
            .sum();
        let tss: f64 = x.iter().flatten().map(|v| (v - g).powi(2)).sum();
        let (bms, jms, ems) = (bss / (n - 1.0), jss / (k - 1.0), (tss - bss - jss) / ((n - 1.0) * (k - 1.0)));
        let want = (bms - ems) / (bms + (k - 1.0) * ems + k * (jms - ems) / n);
        assert!((icc21(&m).value - want).abs() < 1e-10);
        let want31 = (bms - ems) / (bms + (k - 1.0) * ems);
        assert!((icc31(&m).value - want31).abs() < 1e-10);
    }

    #[test]
    fn icc31_ignores_column_offsets() {
        let m = random(8, 3, 2);
        let base = icc31(&m).value;
        let mut v = m.values().to_vec();
        for i in 0..8 {
            v[i * 3 + 1] += 5.0;
        }
        let shifted = RatingsMatrix::new(v, 8, 3).unwrap();
        assert!((icc31(&shifted).value - base).abs() < 1e-10);
    }

    #[test]
    fn alpha_cases() {
        let m = rows(&[&[1.0, 1.0, 1.0], &[3.0, 3.0, 3.0], &[2.0, 2.0, 2.0], &[0.0, 0.0, 0.0]]);
        let a = cronbach_alpha(&m);
        assert!((a.value - 1.0).abs() < 1e-12);
        assert_eq!(a.band, Band::Acceptable);
        let cancel = rows(&[&[1.0, -1.0], &[2.0, -2.0], &[0.5, -0.5]]);
        assert!(cronbach_alpha(&cancel).degenerate);
    }

    #[test]
    fn alpha_matches_covariance_form() {
        let m = random(10, 4, 7);
        let r = 4;
        let cols: Vec<Vec<f64>> = (0..r).map(|j| m.column(j)).collect();
        let means: Vec<f64> = cols.iter().map(|c| c.iter().sum::<f64>() / 10.0).collect();
        let mut trace = 0.0;
        let mut total = 0.0;
        for a in 0..r {
            for b in 0..r {
                let cov: f64 = (0..10).map(|i| (cols[a][i] - means[a]) * (cols[b][i] - means[b])).sum::<f64>() / 9.0;
                total += cov;
                if a == b {
                    trace += cov;
                }
            }
        }
        let want = r as f64 / (r as f64 - 1.0) * (1.0 - trace / total);
        assert!((cronbach_alpha(&m).value - want).abs() < 1e-10);
    }

    #[test]
    fn banding() {
        assert_eq!(band(0.6, Estimator::Icc21), Band::Moderate);
        assert_eq!(band(0.7, Estimator::Alpha), Band::Acceptable);
        assert_eq!(band(0.69, Estimator::Alpha), Band::Unacceptable);
        assert_eq!(band(-0.2, Estimator::Icc31), Band::Poor);
        assert_eq!(band(0.5, Estimator::Icc31), Band::Moderate);
        assert_eq!(band(0.75, Estimator::Icc21), Band::Good);
        assert_eq!(band(0.9, Estimator::Icc21), Band::Excellent);
        assert_eq!(band(f64::NAN, Estimator::Icc21), Band::Undefined);
    }

    #[test]
    fn negative_values_not_clamped() {
        // Rows anti-correlated across raters.
        let m = rows(&[&[1.0, -1.0], &[-1.0, 1.0], &[2.0, -2.0]]);
        let s = icc31(&m);
        assert!(s.value < 0.0);
        assert_eq!(s.band, Band::Poor);
    }

    #[test]
    fn matrix_validation() {
        assert!(RatingsMatrix::new(vec![1.0, 2.0], 1, 2).is_err());
        assert!(RatingsMatrix::new(vec![1.0, f64::NAN, 1.0, 1.0], 2, 2).is_err());
        assert!(RatingsMatrix::from_rows(&[vec![1.0, 2.0], vec![1.0]]).is_err());
    }

    fn tensor(g: usize, t: usize, k: usize) -> BiasTensor {
        let rules = vec![ScoringRule::dbwa(), ScoringRule::ripa(), ScoringRule::nbm(5)];
        let pairs = (0..g).map(|i| BasePair::new(&format!("m{i}"), &format!("f{i}")).unwrap()).collect();
        let targets = (0..t).map(|i| format!("w{i}")).collect();
        let models = (0..k).map(|i| format!("s{i}")).collect();
        let n = 3 * g * t * k;
        BiasTensor {
            rules,
            pairs,
            targets,
            models,
            scores: (0..n).map(|i| (i as f64 * 0.37).sin()).collect(),
            missing: vec![],
        }
    }

    #[test]
    fn builder_shapes() {
        let b = tensor(23, 4, 32);
        let fam = build_retest_matrices(&b);
        let per_target = fam.units.iter().find(|u| u.unit_type == UnitType::Target).unwrap();
        assert_eq!((per_target.matrix.n_rows(), per_target.matrix.n_cols()), (23, 32));
        let per_pair = fam.units.iter().find(|u| u.unit_type == UnitType::Pair).unwrap();
        assert_eq!((per_pair.matrix.n_rows(), per_pair.matrix.n_cols()), (4, 32));
        assert_eq!(fam.units.len(), 3 * (4 + 23));
        // Orientation: row = pair, column = model.
        assert_eq!(per_target.matrix.get(2, 5), b.get(0, 2, 0, 5));

        let cube = crate::scoring::average_over_models(&b);
        let ir = build_interrater_matrices(&cube);
        let u = &ir.units[1];
        assert_eq!((u.matrix.n_rows(), u.matrix.n_cols()), (23, 3));
        assert_eq!(u.matrix.get(4, 2), cube.get(2, 4, 1));

        let words: Vec<String> = (0..4).map(|i| format!("w{i}")).chain(["missing".into()]).collect();
        let q = Query::new("q", words).unwrap();
        let int = build_internal_matrices(&cube, &[q], Some("list"));
        let qm = &int.units[0];
        assert_eq!((qm.matrix.n_rows(), qm.matrix.n_cols()), (23, 4));
        let em = int.units.iter().find(|u| u.unit_type == UnitType::BasepairEnsemble).unwrap();
        assert_eq!((em.matrix.n_rows(), em.matrix.n_cols()), (4, 23));
        assert_eq!(em.matrix.get(3, 7), cube.get(0, 7, 3));
    }

    #[test]
    fn builder_skips_thin_units() {
        let b = tensor(1, 3, 4);
        let fam = build_retest_matrices(&b);
        // per-target matrices are 1 x 4: skipped
        assert_eq!(fam.skipped.iter().filter(|s| s.unit_type == UnitType::Target).count(), 9);
        assert_eq!(fam.units.len(), 3);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        fn arb_matrix() -> impl Strategy<Value = RatingsMatrix> {
            (3usize..12, 2usize..7).prop_flat_map(|(n, r)| {
                proptest::collection::vec(-2.0f64..2.0, n * r)
                    .prop_map(move |v| RatingsMatrix::new(v, n, r).unwrap())
            })
        }

        fn close(a: ReliabilityScore, b: ReliabilityScore, tol: f64) -> bool {
            a.degenerate == b.degenerate && (a.degenerate || (a.value - b.value).abs() <= tol)
        }

        fn map(m: &RatingsMatrix, f: impl Fn(usize, usize, f64) -> f64) -> RatingsMatrix {
            let (n, r) = (m.n_rows(), m.n_cols());
            let v = (0..n * r).map(|i| f(i / r, i % r, m.values()[i])).collect();
            RatingsMatrix::new(v, n, r).unwrap()
        }

        proptest! {
            #[test]
            fn anova_identity(m in arb_matrix()) {
                let a = two_way_anova(&m);
                let sum = a.ss_rows + a.ss_cols + a.ss_error;
                prop_assert!((a.ss_total - sum).abs() <= 1e-9 * a.ss_total.max(1e-300));
                prop_assert!(a.ss_rows >= 0.0 && a.ss_cols >= 0.0 && a.ss_error >= 0.0);
            }

            #[test]
            fn shift_and_scale_invariance(m in arb_matrix(), shift in -10.0f64..10.0, c in 0.1f64..10.0) {
                let shifted = map(&m, |_, _, x| x + shift);
                let scaled = map(&m, |_, _, x| x * c);
                for f in [icc21 as fn(&RatingsMatrix) -> ReliabilityScore, icc31, cronbach_alpha] {
                    prop_assert!(close(f(&m), f(&shifted), 1e-10));
                    prop_assert!(close(f(&m), f(&scaled), 1e-10));
                }
            }

            #[test]
            fn column_offsets(m in arb_matrix(), seed in 0u64..1000, amp in 0.0f64..5.0) {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let offs: Vec<f64> = (0..m.n_cols()).map(|_| rng.gen_range(-3.0..3.0)).collect();
                let moved = map(&m, |_, j, x| x + offs[j]);
                prop_assert!(close(icc31(&m), icc31(&moved), 1e-10));

                // ICC(2,1) falls as column means spread further apart, and is
                // largest once column means coincide.
                let n = m.n_rows() as f64;
                let colmean: Vec<f64> = (0..m.n_cols()).map(|j| m.column(j).iter().sum::<f64>() / n).collect();
                let grand = colmean.iter().sum::<f64>() / colmean.len() as f64;
                let spread = map(&m, |_, j, x| x + amp * (colmean[j] - grand));
                let centred = map(&m, |_, j, x| x - (colmean[j] - grand));
                let (a, b, c) = (icc21(&m), icc21(&spread), icc21(&centred));
                if !a.degenerate && a.value >= 0.0 {
                    prop_assert!(b.value <= a.value + 1e-10);
                    prop_assert!(a.value <= c.value + 1e-10);
                    prop_assert!(icc21(&moved).value <= c.value + 1e-10);
                }
            }

            #[test]
            fn permutation_invariance(m in arb_matrix(), seed in 0u64..1000) {
                use rand::seq::SliceRandom;
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let mut rp: Vec<usize> = (0..m.n_rows()).collect();
                let mut cp: Vec<usize> = (0..m.n_cols()).collect();
                rp.shuffle(&mut rng);
                cp.shuffle(&mut rng);
                let p = map(&m, |i, j, _| m.get(rp[i], cp[j]));
                for f in [icc21 as fn(&RatingsMatrix) -> ReliabilityScore, icc31, cronbach_alpha] {
                    prop_assert!(close(f(&m), f(&p), 1e-10));
                }
            }

            #[test]
            fn values_at_most_one(m in arb_matrix()) {
                for f in [icc21 as fn(&RatingsMatrix) -> ReliabilityScore, icc31, cronbach_alpha] {
                    let s = f(&m);
                    prop_assert!(s.degenerate || s.value <= 1.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn icc21_non_increasing_in_noise() {
        use rand_distr::{Distribution, Normal};
        let (n, r) = (200, 16);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        let effects: Vec<f64> = (0..n).map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng)).collect();
        let noise: Vec<f64> = (0..n * r).map(|_| Normal::new(0.0, 1.0).unwrap().sample(&mut rng)).collect();
        let mut last = f64::INFINITY;
        for sigma in [0.0, 0.1, 0.5, 2.0] {
            let v = (0..n * r).map(|i| effects[i / r] + sigma * noise[i]).collect();
            let s = icc21(&RatingsMatrix::new(v, n, r).unwrap());
            assert!(s.value <= last, "sigma {sigma}: {} > {last}", s.value);
            last = s.value;
        }
    }
}
