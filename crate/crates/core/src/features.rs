//! Word-level predictors for the reliability regressions, plus the small
//! hypothesis tests used to compare pairs and rules.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::Serialize;
use statrs::function::beta::beta_reg;

use crate::alignment::StabilityReport;
use crate::embedding::{EmbeddingEnsemble, EmbeddingModel};
use crate::error::{Error, Result};
use crate::knn::CosineIndex;
use crate::scoring::BasePair;

/// Highest cosine similarity between `word` and any other vocabulary word.
/// `None` when the word's vector has zero norm or it has no eligible
/// neighbour.
pub fn nn_similarity(model: &EmbeddingModel, word: &str) -> Result<Option<f64>> {
    let wi = model
        .index_of(word)
        .ok_or_else(|| Error::MissingWord(word.to_string()))?;
    if model.len() < 2 {
        return Err(Error::InvalidArgument("nearest-neighbour similarity needs V >= 2".into()));
    }
    let index = CosineIndex::new(model);
    Ok(nn_similarities(&index, &[wi]).pop().flatten())
}

fn nn_similarities(index: &CosineIndex, words: &[usize]) -> Vec<Option<f64>> {
    let excluded = vec![false; index.len()];
    index
        .top_k(words, 1, &excluded)
        .into_iter()
        .map(|l| l.first().map(|&(_, s)| s))
        .collect()
}

/// Reads a `word<TAB>value` table. Blank lines and `#` comments are skipped.
pub fn read_tsv(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('\t').ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: "expected word<TAB>value".into(),
        })?;
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Numeric `word<TAB>value` table; first occurrence of a word wins.
pub fn read_numeric_tsv(path: &Path) -> Result<HashMap<String, f64>> {
    let mut out = HashMap::new();
    for (i, (k, v)) in read_tsv(path)?.into_iter().enumerate() {
        let x: f64 = v.parse().map_err(|_| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: format!("not a number: {v:?}"),
        })?;
        out.entry(k).or_insert(x);
    }
    Ok(out)
}

pub fn read_label_tsv(path: &Path) -> Result<HashMap<String, String>> {
    let mut out = HashMap::new();
    for (k, v) in read_tsv(path)? {
        out.entry(k).or_insert(v);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureRow {
    pub word: String,
    pub log_freq: Option<f64>,
    pub log2_freq: Option<f64>,
    pub log_senses: Option<f64>,
    pub pos: Option<String>,
    pub nn_sim: Option<f64>,
    pub l2_norm: f64,
    pub es: Option<f64>,
}

/// External inputs to [`build_feature_table`]; absent tables leave the
/// corresponding columns empty.
#[derive(Debug, Clone, Default)]
pub struct FeatureSources<'a> {
    pub counts: Option<&'a HashMap<String, f64>>,
    pub senses: Option<&'a HashMap<String, f64>>,
    pub pos: Option<&'a HashMap<String, String>>,
    pub stability: Option<&'a StabilityReport>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FeatureTable {
    pub rows: Vec<FeatureRow>,
    /// Where each column came from.
    pub provenance: Vec<(String, String)>,
}

impl FeatureTable {
    pub fn get(&self, word: &str) -> Option<&FeatureRow> {
        self.rows.iter().find(|r| r.word == word)
    }
}

fn positive_ln(x: Option<f64>) -> Option<f64> {
    x.filter(|&v| v > 0.0).map(f64::ln)
}

/// Feature rows for `words` (which must be in the aligned vocabulary).
/// Embedding-derived features are averaged over the ensemble's models in
/// order.
pub fn build_feature_table(ensemble: &EmbeddingEnsemble, words: &[String], src: &FeatureSources<'_>) -> Result<FeatureTable> {
    let idx: Vec<usize> = words
        .iter()
        .map(|w| ensemble.index_of(w).ok_or_else(|| Error::MissingWord(w.clone())))
        .collect::<Result<_>>()?;
    if ensemble.vocab().len() < 2 {
        return Err(Error::InvalidArgument("feature table needs V >= 2".into()));
    }
    let k = ensemble.k() as f64;
    let mut nn_sum = vec![Some(0.0); words.len()];
    let mut norm_sum = vec![0.0; words.len()];
    for m in ensemble.models() {
        let index = CosineIndex::new(m);
        for (slot, s) in nn_sum.iter_mut().zip(nn_similarities(&index, &idx)) {
            *slot = match (*slot, s) {
                (Some(a), Some(b)) => Some(a + b),
                _ => None,
            };
        }
        for (slot, &i) in norm_sum.iter_mut().zip(&idx) {
            *slot += crate::linalg::norm(m.row(i));
        }
    }

    let rows = words
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let log_freq = positive_ln(src.counts.and_then(|c| c.get(w).copied()));
            FeatureRow {
                word: w.clone(),
                log_freq,
                log2_freq: log_freq.map(|x| x * x),
                log_senses: positive_ln(src.senses.and_then(|c| c.get(w).copied())),
                pos: src.pos.and_then(|p| p.get(w).cloned()),
                nn_sim: nn_sum[i].map(|s| s / k),
                l2_norm: norm_sum[i] / k,
                es: src
                    .stability
                    .and_then(|s| s.index_of(w).map(|j| s.es[j]))
                    .filter(|v| v.is_finite()),
            }
        })
        .collect();

    let have = |b: bool| if b { "table" } else { "absent" };
    let provenance = vec![
        ("log_freq".into(), format!("ln(count), counts {}", have(src.counts.is_some()))),
        ("log2_freq".into(), "ln(count)^2".into()),
        ("log_senses".into(), format!("ln(senses), senses {}", have(src.senses.is_some()))),
        ("pos".into(), format!("pos {}", have(src.pos.is_some()))),
        ("nn_sim".into(), "mean over models of max cosine to another word".into()),
        ("l2_norm".into(), "mean over models of the L2 norm".into()),
        ("es".into(), format!("stability report {}", have(src.stability.is_some()))),
    ];
    Ok(FeatureTable { rows, provenance })
}

/// Two-sided p-value of Student's t with `df` degrees of freedom, via the
/// regularized incomplete beta function.
pub fn t_two_sided_p(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return f64::NAN;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let x = df / (df + t * t);
    beta_reg(df / 2.0, 0.5, x).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PearsonResult {
    pub r: f64,
    pub t_stat: f64,
    pub p_two_sided: f64,
    pub n: usize,
    /// False when an input was constant; the other fields are then `NaN`.
    pub defined: bool,
}

pub fn pearson_r(x: &[f64], y: &[f64]) -> Result<PearsonResult> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument("pearson_r needs equal-length inputs".into()));
    }
    let n = x.len();
    if n < 3 {
        return Err(Error::InvalidArgument("pearson_r needs at least 3 observations".into()));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(PearsonResult {
            r: f64::NAN,
            t_stat: f64::NAN,
            p_two_sided: f64::NAN,
            n,
            defined: false,
        });
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    let df = nf - 2.0;
    let t_stat = if r.abs() == 1.0 {
        r.signum() * f64::INFINITY
    } else {
        r * (df / (1.0 - r * r)).sqrt()
    };
    Ok(PearsonResult {
        r,
        t_stat,
        p_two_sided: t_two_sided_p(t_stat, df),
        n,
        defined: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PairedTTest {
    pub t_stat: f64,
    pub df: usize,
    pub p_two_sided: f64,
    pub mean_difference: f64,
    /// False when the differences have zero variance.
    pub defined: bool,
}

/// Paired t-test on `d = x - y`. The p-value assumes independent pairs.
pub fn paired_t_test(x: &[f64], y: &[f64]) -> Result<PairedTTest> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument("paired_t_test needs equal-length inputs".into()));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::InvalidArgument("paired_t_test needs at least 2 pairs".into()));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var == 0.0 {
        return Ok(PairedTTest {
            t_stat: f64::NAN,
            df: n - 1,
            p_two_sided: f64::NAN,
            mean_difference: mean,
            defined: false,
        });
    }
    let t_stat = mean / (var.sqrt() / nf.sqrt());
    Ok(PairedTTest {
        t_stat,
        df: n - 1,
        p_two_sided: t_two_sided_p(t_stat, nf - 1.0),
        mean_difference: mean,
        defined: true,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Median,
    Mean,
}

impl Aggregation {
    pub fn apply(self, values: &[f64]) -> f64 {
        if values.is_empty() {
            return f64::NAN;
        }
        match self {
            Aggregation::Mean => values.iter().sum::<f64>() / values.len() as f64,
            Aggregation::Median => crate::summary::quantile(&sorted(values), 0.5),
        }
    }
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Singular base pairs matched with their plural form, among the bundled
/// pairs: (boy, boys), (brother, brothers), ...
pub const SINGULAR_PLURAL: [(&str, &str); 8] = [
    ("boy", "boys"),
    ("brother", "brothers"),
    ("father", "fathers"),
    ("male", "males"),
    ("man", "men"),
    ("nephew", "nephews"),
    ("son", "sons"),
    ("uncle", "uncles"),
];

/// Matched (singular, plural) pairs present in `pairs`, keyed by male word.
pub fn singular_plural_matches(pairs: &[BasePair]) -> Vec<(BasePair, BasePair)> {
    SINGULAR_PLURAL
        .iter()
        .filter_map(|(s, p)| {
            let a = pairs.iter().find(|bp| bp.male == *s)?;
            let b = pairs.iter().find(|bp| bp.male == *p)?;
            Some((a.clone(), b.clone()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn model(tokens: &[&str], rows: &[&[f64]]) -> EmbeddingModel {
        let d = rows[0].len();
        EmbeddingModel::new(
            tokens.iter().map(|s| s.to_string()).collect(),
            rows.iter().flat_map(|r| r.iter().copied()).collect(),
            d,
            "m",
        )
        .unwrap()
    }

    #[test]
    fn nn_sim_examples() {
        let m = model(&["a", "b", "c"], &[&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(nn_similarity(&m, "a").unwrap(), Some(1.0));
        let m = model(&["a", "c"], &[&[1.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(nn_similarity(&m, "a").unwrap(), Some(0.0));
        let m = model(&["a", "c"], &[&[0.0, 0.0], &[0.0, 1.0]]);
        assert_eq!(nn_similarity(&m, "a").unwrap(), None);
    }

    #[test]
    fn nn_sim_matches_scan() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let (v, d) = (500, 12);
        let data: Vec<f64> = (0..v * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let m = EmbeddingModel::new((0..v).map(|i| format!("w{i}")).collect(), data, d, "m").unwrap();
        let index = CosineIndex::new(&m);
        for w in [0usize, 17, 250, 499] {
            // Scan with the same unit rows; the result must be the exact max.
            let best = (0..v)
                .filter(|&j| j != w)
                .map(|j| index.similarity(w, j).unwrap())
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(nn_similarity(&m, &format!("w{w}")).unwrap(), Some(best));
            assert!(best < 1.0);
        }
    }

    #[test]
    fn pearson_perfect() {
        let x = [1.0, 2.0, 3.0, 4.0, 5.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        let r = pearson_r(&x, &y).unwrap();
        assert!((r.r - 1.0).abs() < 1e-15);
        assert!(r.p_two_sided < 1e-12);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson_r(&x, &y).unwrap().r + 1.0).abs() < 1e-15);
        assert!(!pearson_r(&x, &[1.0; 5]).unwrap().defined);
        assert!(pearson_r(&x[..2], &x[..2]).is_err());
    }

    #[test]
    fn paired_t_cases() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.5, 1.5, 3.5, 3.5];
        // d = (-0.5, 0.5, -0.5, 0.5): zero mean, positive variance.
        let t = paired_t_test(&x, &y).unwrap();
        assert_eq!(t.t_stat, 0.0);
        assert!((t.p_two_sided - 1.0).abs() < 1e-15);
        let flat = paired_t_test(&[2.0, 3.0, 4.0, 5.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!(!flat.defined);
    }

    #[test]
    fn paired_t_direct_formula() {
        // Eight matched medians, direct formula evaluated independently.
        let sing = [0.91, 0.88, 0.93, 0.79, 0.95, 0.86, 0.90, 0.84];
        let plur = [0.85, 0.87, 0.89, 0.70, 0.91, 0.88, 0.82, 0.80];
        let d: Vec<f64> = sing.iter().zip(&plur).map(|(a, b)| a - b).collect();
        let mean = d.iter().sum::<f64>() / 8.0;
        let ss: f64 = d.iter().map(|x| (x - mean) * (x - mean)).sum();
        let t_want = mean / ((ss / 7.0).sqrt() / 8f64.sqrt());
        let t = paired_t_test(&sing, &plur).unwrap();
        assert!((t.t_stat - t_want).abs() < 1e-9);
        assert_eq!(t.df, 7);
        let rev = paired_t_test(&plur, &sing).unwrap();
        assert_eq!(rev.t_stat, -t.t_stat);
        assert_eq!(rev.p_two_sided, t.p_two_sided);
    }

    #[test]
    fn t_p_monotone() {
        assert_eq!(t_two_sided_p(0.0, 7.0), 1.0);
        let mut last = 1.0;
        for i in 1..200 {
            let p = t_two_sided_p(i as f64 * 0.05, 7.0);
            assert!(p < last);
            last = p;
        }
        assert!((t_two_sided_p(-1.3, 5.0) - t_two_sided_p(1.3, 5.0)).abs() < 1e-15);
    }

    #[test]
    fn log_features() {
        let m = model(&["a", "b", "c"], &[&[3.0, 4.0], &[1.0, 0.0], &[0.0, 1.0]]);
        let e = crate::embedding::align_ensemble(vec![m.clone(), m.scaled(2.0)], "x", "y").unwrap();
        let counts: HashMap<String, f64> =
            [("a".to_string(), 1.0), ("b".to_string(), 2f64.exp()), ("c".to_string(), 0.0)].into();
        let pos: HashMap<String, String> = [("a".to_string(), "noun".to_string())].into();
        let src = FeatureSources {
            counts: Some(&counts),
            pos: Some(&pos),
            ..Default::default()
        };
        let words: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let t = build_feature_table(&e, &words, &src).unwrap();
        let a = t.get("a").unwrap();
        assert_eq!((a.log_freq, a.log2_freq), (Some(0.0), Some(0.0)));
        assert_eq!(a.pos.as_deref(), Some("noun"));
        assert!((a.l2_norm - 7.5).abs() < 1e-12);
        let b = t.get("b").unwrap();
        assert!((b.log_freq.unwrap() - 2.0).abs() < 1e-12);
        assert!((b.log2_freq.unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(t.get("c").unwrap().log_freq, None);
        assert_eq!(b.log_senses, None);
        assert_eq!(b.es, None);
    }

    #[test]
    fn matches_in_bundled_pairs() {
        let pairs = crate::resources::bundled_base_pairs();
        assert_eq!(singular_plural_matches(&pairs).len(), 8);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #[test]
            fn pearson_affine(xs in proptest::collection::vec(-5.0f64..5.0, 4..30), a in 0.1f64..10.0, b in -5.0f64..5.0, seed in 0u64..500) {
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
                let ys: Vec<f64> = xs.iter().map(|x| x + rng.gen_range(-2.0..2.0)).collect();
                let base = pearson_r(&xs, &ys).unwrap();
                prop_assume!(base.defined);
                let pos: Vec<f64> = xs.iter().map(|x| a * x + b).collect();
                let neg: Vec<f64> = xs.iter().map(|x| -a * x + b).collect();
                let rp = pearson_r(&pos, &ys).unwrap();
                let rn = pearson_r(&neg, &ys).unwrap();
                prop_assert!((rp.r - base.r).abs() < 1e-10);
                prop_assert!((rn.r + base.r).abs() < 1e-10);
            }
        }
    }
}
