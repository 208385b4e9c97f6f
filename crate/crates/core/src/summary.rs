//! Boxplot-ready summaries of reliability score distributions.
//!
//! Quantiles use linear interpolation between order statistics (Hyndman &
//! Fan type 7, the default in R and NumPy): for sorted `x[0..n]` and
//! probability `p`, `h = (n - 1) p` and `Q(p) = x[floor h] + (h - floor h)
//! (x[floor h + 1] - x[floor h])`. Outliers lie outside
//! `[Q1 - 1.5 IQR, Q3 + 1.5 IQR]`.

use serde::Serialize;

/// Type-7 quantile of already sorted, non-empty data.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionSummary {
    pub count: usize,
    pub degenerate: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub n_outliers: usize,
    pub frac_below_half: f64,
    /// Set when there was nothing to summarize.
    pub empty_reason: Option<String>,
}

/// Summarizes the defined scores; `None` entries count as degenerate.
pub fn summarize_distribution(scores: &[Option<f64>]) -> DistributionSummary {
    let mut vals: Vec<f64> = scores.iter().flatten().copied().filter(|v| v.is_finite()).collect();
    let degenerate = scores.len() - vals.len();
    if vals.is_empty() {
        return DistributionSummary {
            count: 0,
            degenerate,
            min: f64::NAN,
            q1: f64::NAN,
            median: f64::NAN,
            q3: f64::NAN,
            max: f64::NAN,
            n_outliers: 0,
            frac_below_half: f64::NAN,
            empty_reason: Some(if scores.is_empty() {
                "no scores".into()
            } else {
                "all scores degenerate".into()
            }),
        };
    }
    vals.sort_by(f64::total_cmp);
    let q1 = quantile(&vals, 0.25);
    let q3 = quantile(&vals, 0.75);
    let iqr = q3 - q1;
    let (lo, hi) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    DistributionSummary {
        count: vals.len(),
        degenerate,
        min: vals[0],
        q1,
        median: quantile(&vals, 0.5),
        q3,
        max: vals[vals.len() - 1],
        n_outliers: vals.iter().filter(|&&v| v < lo || v > hi).count(),
        frac_below_half: vals.iter().filter(|&&v| v < 0.5).count() as f64 / vals.len() as f64,
        empty_reason: None,
    }
}
