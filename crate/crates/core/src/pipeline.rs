//! Orchestration of a full run: load, score, slice, estimate, then
//! optionally stability, features and regression, and finally the reports.
//!
//! Everything is computed in memory before the first report is written, so
//! a failing stage leaves no partial report set behind.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use crate::alignment::{embedding_stability, StabilityReport};
use crate::config::{sha256_hex, Analyses, EnsembleSpec, ResourceInfo, RunConfig};
use crate::embedding::{load_ensemble, EmbeddingEnsemble};
use crate::error::{Error, Result};
use crate::features::{build_feature_table, paired_t_test, pearson_r, read_label_tsv, read_numeric_tsv, singular_plural_matches, FeatureSources, FeatureTable};
use crate::mixed::{delta_r2_with_full, fit_lmm, standardize, DatasetBuilder, DeltaR2, FitOptions, LmmFit, RegressionDataset};
use crate::reliability::{
    build_internal_matrices, build_interrater_matrices, build_retest_matrices, cronbach_alpha, icc21, icc31, MatrixFamily,
    ReliabilityScore, UnitType,
};
use crate::scoring::{aggregate_target, average_over_models, compute_bias_tensor, BasePair, BiasTensor, MeanBiasCube, Query, RuleKind, ScoringRule, TargetList};
use crate::summary::summarize_distribution;
use crate::synth::{synth_ensemble, write_ensemble, SynthSpec};

/// Every report file a run may emit, in writing order.
pub const REPORT_FILES: [&str; 10] = [
    "scores.csv",
    "scores_mean.csv",
    "retest.csv",
    "interrater.csv",
    "internal.csv",
    "stability.csv",
    "features.csv",
    "regression.csv",
    "summary.csv",
    "comparisons.csv",
];
pub const MANIFEST_FILE: &str = "manifest.json";

/// Formats a number with 10 significant digits, `%g` style. Non-finite
/// values become empty fields.
pub fn format_number(x: f64) -> String {
    if !x.is_finite() {
        return String::new();
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.9e}");
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..10).contains(&exp) {
        let fixed = format!("{:.*}", (9 - exp) as usize, x);
        trim_zeros(&fixed).to_string()
    } else {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt_num(x: Option<f64>) -> String {
    x.map_or_else(String::new, format_number)
}

/// A CSV table held in memory.
#[derive(Debug, Clone)]
pub struct Table {
    pub header: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Table {
            header: header.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Vec<u8> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct OutputDigest {
    pub file: String,
    pub rows: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct MissingEntry {
    pub list: String,
    pub axis: String,
    pub label: String,
    pub reason: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct EnsembleInfo {
    pub algorithm: String,
    pub corpus: String,
    pub k: usize,
    pub dim: usize,
    pub vocab_size: usize,
    pub dropped_per_model: Vec<usize>,
    pub files: Vec<FileDigest>,
    pub synthetic: Option<SynthSpec>,
    pub missing: Vec<MissingEntry>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct AnalysisCounts {
    pub units: usize,
    pub degenerate: usize,
    pub skipped: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub generated_unix_seconds: u64,
    pub config: RunConfig,
    pub analyses: Analyses,
    pub resources: Vec<ResourceInfo>,
    pub ensembles: Vec<EnsembleInfo>,
    pub counts: BTreeMap<String, AnalysisCounts>,
    pub skipped_units: Vec<String>,
    pub regression_rows_dropped: usize,
    pub outputs: Vec<OutputDigest>,
    pub timings_ms: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub written: Vec<PathBuf>,
    pub manifest: Manifest,
}

/// Scores and reliability results for one target list in one ensemble.
pub struct ListResult {
    pub list: String,
    pub tensor: BiasTensor,
    pub cube: MeanBiasCube,
    pub retest: Option<(MatrixFamily, Vec<ReliabilityScore>)>,
    pub interrater: Option<(MatrixFamily, Vec<ReliabilityScore>)>,
    pub internal: Option<(MatrixFamily, Vec<ReliabilityScore>)>,
}

pub struct EnsembleResult {
    pub spec: EnsembleSpec,
    pub ensemble: EmbeddingEnsemble,
    pub files: Vec<FileDigest>,
    pub lists: Vec<ListResult>,
    pub queries: Option<(MatrixFamily, Vec<ReliabilityScore>)>,
    pub stability: Option<StabilityReport>,
    pub features: Option<FeatureTable>,
}

pub struct RegressionResult {
    pub dataset: RegressionDataset,
    pub fit: LmmFit,
    pub deltas: Vec<DeltaR2>,
}

struct Timer(BTreeMap<String, f64>);

impl Timer {
    fn time<T>(&mut self, stage: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f();
        *self.0.entry(stage.to_string()).or_default() += t.elapsed().as_secs_f64() * 1e3;
        out
    }
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| e.in_stage(name))
}

fn load_spec(cfg: &RunConfig, spec: &EnsembleSpec) -> Result<(EmbeddingEnsemble, Vec<FileDigest>)> {
    let paths: Vec<PathBuf> = match &spec.synthetic {
        Some(recipe) => {
            let ens = synth_ensemble(recipe, &spec.algorithm, &spec.corpus)?;
            let dir = cfg
                .output_path()
                .join("embeddings")
                .join(format!("{}_{}", spec.algorithm, spec.corpus));
            write_ensemble(&ens, &dir)?
        }
        None => spec.files.iter().map(|f| cfg.resolve(f)).collect(),
    };
    for p in &paths {
        if !p.is_file() {
            return Err(Error::io(p, std::io::Error::new(std::io::ErrorKind::NotFound, "embedding file not found")));
        }
    }
    let ensemble = load_ensemble(&paths, spec.format, &spec.algorithm, &spec.corpus)?;
    let files = paths
        .iter()
        .map(|p| {
            let bytes = fs::read(p).map_err(|e| Error::io(p, e))?;
            Ok(FileDigest {
                path: p.display().to_string(),
                sha256: sha256_hex(&bytes),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((ensemble, files))
}

/// Every query word as one target list, first occurrence order.
fn query_union(queries: &[Query]) -> Result<TargetList> {
    TargetList::new("queries", queries.iter().flat_map(|q| q.words.iter()))
}

fn estimate(fam: MatrixFamily, f: fn(&crate::reliability::RatingsMatrix) -> ReliabilityScore) -> (MatrixFamily, Vec<ReliabilityScore>) {
    let s = fam.estimate(f);
    (fam, s)
}

/// Interrater family, optionally with each rule column z-scored.
pub fn interrater_family(cube: &MeanBiasCube, zscore: bool) -> MatrixFamily {
    let mut fam = build_interrater_matrices(cube);
    if zscore {
        for u in &mut fam.units {
            u.matrix = u.matrix.zscore_columns();
        }
    }
    fam
}

struct Needs {
    retest: bool,
    stability: bool,
    features: bool,
}

fn needs(a: &Analyses) -> Needs {
    Needs {
        retest: a.retest || a.regress,
        stability: a.stability || a.features || a.regress,
        features: a.features || a.regress,
    }
}

#[allow(clippy::too_many_arguments)]
fn analyse_ensemble(
    cfg: &RunConfig,
    spec: &EnsembleSpec,
    ensemble: EmbeddingEnsemble,
    files: Vec<FileDigest>,
    rules: &[ScoringRule],
    pairs: &[BasePair],
    targets: &[TargetList],
    queries: &[Query],
    tables: &ExternalTables,
    timer: &mut Timer,
) -> Result<EnsembleResult> {
    let a = cfg.analyses;
    let need = needs(&a);
    let nbm = cfg.rules.nbm_options();
    let mut lists = Vec::new();
    for list in targets {
        let tensor = timer.time("score", || stage("score", compute_bias_tensor(&ensemble, rules, pairs, list, &nbm)))?;
        let cube = average_over_models(&tensor);
        let retest = if need.retest {
            Some(timer.time("retest", || Ok(estimate(build_retest_matrices(&tensor), icc21)))?)
        } else {
            None
        };
        let interrater = if a.interrater {
            Some(timer.time("interrater", || Ok(estimate(interrater_family(&cube, cfg.interrater.zscore), icc31)))?)
        } else {
            None
        };
        let internal = if a.internal {
            Some(timer.time("internal", || Ok(estimate(build_internal_matrices(&cube, &[], Some(&list.name)), cronbach_alpha)))?)
        } else {
            None
        };
        lists.push(ListResult {
            list: list.name.clone(),
            tensor,
            cube,
            retest,
            interrater,
            internal,
        });
    }
    let queries_out = if a.internal && !queries.is_empty() {
        let union = query_union(queries)?;
        let r = timer.time("score", || stage("score", compute_bias_tensor(&ensemble, rules, pairs, &union, &nbm)));
        match r {
            Ok(t) => {
                let cube = average_over_models(&t);
                Some(timer.time("internal", || Ok(estimate(build_internal_matrices(&cube, queries, None), cronbach_alpha)))?)
            }
            Err(Error::Stage { source, .. }) if matches!(*source, Error::AllMissing(_)) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };
    let stability = if need.stability {
        Some(timer.time("stability", || stage("stability", embedding_stability(&ensemble, cfg.stability.pair_budget)))?)
    } else {
        None
    };
    let features = if need.features {
        let mut words: Vec<String> = Vec::new();
        let mut seen = std::collections::HashSet::new();
        for l in &lists {
            for w in &l.tensor.targets {
                if seen.insert(w.clone()) {
                    words.push(w.clone());
                }
            }
        }
        let counts = spec.counts.as_ref().map(|p| &tables.counts_by_path[p]).or(tables.counts.as_ref());
        let src = FeatureSources {
            counts,
            senses: tables.senses.as_ref(),
            pos: tables.pos.as_ref(),
            stability: stability.as_ref(),
        };
        Some(timer.time("features", || stage("features", build_feature_table(&ensemble, &words, &src)))?)
    } else {
        None
    };
    Ok(EnsembleResult {
        spec: spec.clone(),
        ensemble,
        files,
        lists,
        queries: queries_out,
        stability,
        features,
    })
}

#[derive(Default)]
struct ExternalTables {
    counts: Option<HashMap<String, f64>>,
    counts_by_path: HashMap<PathBuf, HashMap<String, f64>>,
    senses: Option<HashMap<String, f64>>,
    pos: Option<HashMap<String, String>>,
}

fn load_tables(cfg: &RunConfig, resources: &mut Vec<ResourceInfo>) -> Result<ExternalTables> {
    let mut t = ExternalTables::default();
    let mut digest = |kind: &'static str, p: &Path| -> Result<PathBuf> {
        let path = cfg.resolve(p);
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        resources.push(ResourceInfo {
            kind,
            name: path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
            source: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(path)
    };
    if let Some(p) = &cfg.features.counts {
        t.counts = Some(read_numeric_tsv(&digest("counts", p)?)?);
    }
    for e in &cfg.ensembles {
        if let Some(p) = &e.counts {
            if !t.counts_by_path.contains_key(p) {
                let table = read_numeric_tsv(&digest("counts", p)?)?;
                t.counts_by_path.insert(p.clone(), table);
            }
        }
    }
    if let Some(p) = &cfg.features.senses {
        t.senses = Some(read_numeric_tsv(&digest("senses", p)?)?);
    }
    if let Some(p) = &cfg.features.pos {
        t.pos = Some(read_label_tsv(&digest("pos", p)?)?);
    }
    Ok(t)
}

/// Builds the regression dataset: one row per (ensemble, list, rule,
/// target) with a defined test-retest ICC(2,1) as the outcome.
pub fn regression_dataset(results: &[EnsembleResult], cfg: &RunConfig) -> Result<RegressionDataset> {
    let mut y = Vec::new();
    let (mut algo, mut corpus, mut rule, mut list) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut rows: Vec<Option<&crate::features::FeatureRow>> = Vec::new();
    for r in results {
        let feats: HashMap<&str, &crate::features::FeatureRow> = r
            .features
            .as_ref()
            .map(|f| f.rows.iter().map(|row| (row.word.as_str(), row)).collect())
            .unwrap_or_default();
        for l in &r.lists {
            let Some((fam, scores)) = &l.retest else { continue };
            for (u, s) in fam.units.iter().zip(scores) {
                if u.unit_type != UnitType::Target {
                    continue;
                }
                y.push(s.defined());
                algo.push(r.spec.algorithm.clone());
                corpus.push(r.spec.corpus.clone());
                rule.push(u.rule.map(|k| k.as_str().to_string()));
                list.push(Some(l.list.clone()));
                rows.push(feats.get(u.unit.as_str()).copied());
            }
        }
    }
    let col = |f: &dyn Fn(&crate::features::FeatureRow) -> Option<f64>| -> Vec<Option<f64>> { rows.iter().map(|r| r.and_then(f)).collect() };
    let mut b = DatasetBuilder::new(y, algo, corpus);
    if cfg.rules.enabled.len() > 1 {
        b = b.categorical("rule", rule)?;
    }
    if cfg.resources.targets.len() > 1 || results.first().is_some_and(|r| r.lists.len() > 1) {
        b = b.categorical("list", list)?;
    }
    let has_counts = cfg.features.counts.is_some() || cfg.ensembles.iter().any(|e| e.counts.is_some());
    if has_counts {
        b = b.continuous("log_freq", col(&|r| r.log_freq))?;
        b = b.continuous("log2_freq", col(&|r| r.log2_freq))?;
    }
    if cfg.features.senses.is_some() {
        b = b.continuous("log_senses", col(&|r| r.log_senses))?;
    }
    if cfg.features.pos.is_some() {
        b = b.categorical("pos", rows.iter().map(|r| r.and_then(|r| r.pos.clone())).collect())?;
    }
    b = b.continuous("nn_sim", col(&|r| r.nn_sim))?;
    b = b.continuous("l2_norm", col(&|r| Some(r.l2_norm)))?;
    b = b.continuous("es", col(&|r| r.es))?;
    b.build()
}

pub fn fit_options(cfg: &RunConfig) -> FitOptions {
    FitOptions {
        alias_collinear: cfg.regression.alias_collinear,
        ..Default::default()
    }
}

pub fn run_regression(results: &[EnsembleResult], cfg: &RunConfig) -> Result<RegressionResult> {
    let raw = regression_dataset(results, cfg)?;
    let dataset = if cfg.regression.standardize { standardize(&raw)? } else { raw };
    let opts = fit_options(cfg);
    let fit = fit_lmm(&dataset, &opts)?;
    let deltas = dataset
        .factors()
        .par_iter()
        .map(|f| delta_r2_with_full(&dataset, &fit, f, &opts))
        .collect::<Result<Vec<_>>>()?;
    Ok(RegressionResult { dataset, fit, deltas })
}

/// Runs every enabled analysis and writes the reports.
pub fn run(cfg: &RunConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let started = Instant::now();
    let mut timer = Timer(BTreeMap::new());
    let mut warnings = Vec::new();

    let (pairs, targets, queries, mut resources) = timer.time("resources", || {
        let (pairs, pinfo) = cfg.load_base_pairs()?;
        let targets = cfg.load_targets()?;
        let queries = if cfg.analyses.internal { cfg.load_queries()? } else { Vec::new() };
        let mut res = vec![pinfo];
        res.extend(targets.iter().map(|(_, i)| i.clone()));
        res.extend(queries.iter().map(|(_, i)| i.clone()));
        Ok((
            pairs,
            targets.into_iter().map(|(l, _)| l).collect::<Vec<_>>(),
            queries.into_iter().map(|(l, _)| l).collect::<Vec<_>>(),
            res,
        ))
    })
    .map_err(|e| e.in_stage("resources"))?;
    let tables = stage("resources", load_tables(cfg, &mut resources))?;
    let rules = cfg.rules.rules();

    let loaded = timer.time("load", || {
        cfg.ensembles
            .par_iter()
            .map(|s| load_spec(cfg, s))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| e.in_stage("load"))
    })?;

    let mut results = Vec::new();
    for (spec, (ensemble, files)) in cfg.ensembles.iter().zip(loaded) {
        for m in ensemble.models() {
            warnings.extend(m.warnings().iter().map(|w| format!("{}: {w}", m.label())));
        }
        results.push(analyse_ensemble(cfg, spec, ensemble, files, &rules, &pairs, &targets, &queries, &tables, &mut timer)?);
    }

    let regression = if cfg.analyses.regress {
        Some(timer.time("regress", || stage("regress", run_regression(&results, cfg)))?)
    } else {
        None
    };
    if let Some(r) = &regression {
        warnings.extend(r.dataset.warnings().iter().cloned());
        warnings.extend(r.fit.warnings.iter().cloned());
    }

    let t_tables = Instant::now();
    let tables_out = build_tables(cfg, &results, regression.as_ref());
    timer.0.insert("tables".into(), t_tables.elapsed().as_secs_f64() * 1e3);

    let out_dir = cfg.output_path();
    let t_write = Instant::now();
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e).in_stage("write"))?;
    let mut outputs = Vec::new();
    let mut written = Vec::new();
    for name in REPORT_FILES {
        let path = out_dir.join(name);
        match tables_out.iter().find(|(n, _)| *n == name) {
            Some((_, table)) => {
                let bytes = table.to_csv();
                fs::write(&path, &bytes).map_err(|e| Error::io(&path, e).in_stage("write"))?;
                outputs.push(OutputDigest {
                    file: name.to_string(),
                    rows: table.rows.len(),
                    sha256: sha256_hex(&bytes),
                });
                written.push(path);
            }
            None if path.exists() => {
                fs::remove_file(&path).map_err(|e| Error::io(&path, e).in_stage("write"))?;
            }
            None => {}
        }
    }
    timer.0.insert("write".into(), t_write.elapsed().as_secs_f64() * 1e3);
    timer.0.insert("total".into(), started.elapsed().as_secs_f64() * 1e3);

    let manifest = Manifest {
        tool: "biasrel",
        version: env!("CARGO_PKG_VERSION"),
        generated_unix_seconds: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        config: cfg.clone(),
        analyses: cfg.analyses,
        resources,
        ensembles: results.iter().map(ensemble_info).collect(),
        counts: analysis_counts(&results),
        skipped_units: skipped_units(&results),
        regression_rows_dropped: regression.as_ref().map_or(0, |r| r.dataset.dropped_rows()),
        outputs,
        timings_ms: timer.0,
        warnings,
    };
    let mpath = out_dir.join(MANIFEST_FILE);
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
    fs::write(&mpath, json).map_err(|e| Error::io(&mpath, e).in_stage("write"))?;
    written.push(mpath);
    Ok(RunOutcome {
        output_dir: out_dir,
        written,
        manifest,
    })
}

fn ensemble_info(r: &EnsembleResult) -> EnsembleInfo {
    let mut missing = Vec::new();
    for l in &r.lists {
        for m in &l.tensor.missing {
            missing.push(MissingEntry {
                list: l.list.clone(),
                axis: format!("{:?}", m.axis).to_lowercase(),
                label: m.label.clone(),
                reason: m.reason.clone(),
            });
        }
    }
    EnsembleInfo {
        algorithm: r.spec.algorithm.clone(),
        corpus: r.spec.corpus.clone(),
        k: r.ensemble.k(),
        dim: r.ensemble.dim(),
        vocab_size: r.ensemble.vocab().len(),
        dropped_per_model: r.ensemble.dropped_counts().to_vec(),
        files: r.files.clone(),
        synthetic: r.spec.synthetic.clone(),
        missing,
    }
}

fn families(r: &EnsembleResult) -> Vec<(&'static str, &(MatrixFamily, Vec<ReliabilityScore>))> {
    let mut out = Vec::new();
    for l in &r.lists {
        if let Some(x) = &l.retest {
            out.push(("retest", x));
        }
        if let Some(x) = &l.interrater {
            out.push(("interrater", x));
        }
        if let Some(x) = &l.internal {
            out.push(("internal", x));
        }
    }
    if let Some(x) = &r.queries {
        out.push(("internal", x));
    }
    out
}

fn analysis_counts(results: &[EnsembleResult]) -> BTreeMap<String, AnalysisCounts> {
    let mut out: BTreeMap<String, AnalysisCounts> = BTreeMap::new();
    for r in results {
        for (name, (fam, scores)) in families(r) {
            let c = out.entry(name.to_string()).or_default();
            c.units += scores.len();
            c.degenerate += scores.iter().filter(|s| s.degenerate).count();
            c.skipped += fam.skipped.len();
        }
    }
    out
}

fn skipped_units(results: &[EnsembleResult]) -> Vec<String> {
    let mut out = Vec::new();
    for r in results {
        for (name, (fam, _)) in families(r) {
            for s in &fam.skipped {
                out.push(format!(
                    "{} {name} {} {} {}: {}",
                    r.spec.label(),
                    s.unit_type.as_str(),
                    s.unit,
                    s.rule.map_or("-", |k| k.as_str()),
                    s.reason
                ));
            }
        }
    }
    out
}

fn score_cells(score: &ReliabilityScore) -> [String; 2] {
    [
        format_number(score.value),
        if score.degenerate { String::new() } else { score.band.as_str().to_string() },
    ]
}

fn rule_str(r: Option<RuleKind>) -> String {
    r.map_or_else(String::new, |k| k.as_str().to_string())
}

/// Appends one five-number summary row per (unit type, rule) cell.
fn summarize(summary: &mut Table, scope: [&str; 3], analysis: &str, fam: &MatrixFamily, sc: &[ReliabilityScore]) {
    let mut cells: BTreeMap<(UnitType, Option<RuleKind>), Vec<Option<f64>>> = BTreeMap::new();
    for (u, s) in fam.units.iter().zip(sc) {
        cells.entry((u.unit_type, u.rule)).or_default().push(s.defined());
    }
    for ((ut, rule), vals) in cells {
        let d = summarize_distribution(&vals);
        summary.push(vec![
            scope[0].into(),
            scope[1].into(),
            scope[2].into(),
            analysis.into(),
            ut.as_str().into(),
            rule_str(rule),
            d.count.to_string(),
            d.degenerate.to_string(),
            format_number(d.min),
            format_number(d.q1),
            format_number(d.median),
            format_number(d.q3),
            format_number(d.max),
            d.n_outliers.to_string(),
            format_number(d.frac_below_half),
            d.empty_reason.unwrap_or_default(),
        ]);
    }
}

fn build_tables(cfg: &RunConfig, results: &[EnsembleResult], regression: Option<&RegressionResult>) -> Vec<(&'static str, Table)> {
    let a = cfg.analyses;
    let mut out = Vec::new();
    let mut scores = Table::new(&["algorithm", "corpus", "list", "rule", "pair", "target", "model", "score"]);
    let mut means = Table::new(&["algorithm", "corpus", "list", "rule", "pair", "target", "score"]);
    let mut retest = Table::new(&["algorithm", "corpus", "list", "unit_type", "unit", "rule", "icc21", "band", "n_rows", "n_cols", "degenerate"]);
    let mut inter = Table::new(&["algorithm", "corpus", "list", "unit_type", "unit", "icc31", "band", "n_rows", "n_cols", "degenerate", "zscored"]);
    let mut internal = Table::new(&["algorithm", "corpus", "scope", "name", "rule", "alpha", "band", "n_items", "n_rows", "degenerate"]);
    let mut stability = Table::new(&["algorithm", "corpus", "word", "es", "pairs_used", "flagged"]);
    let mut features = Table::new(&["algorithm", "corpus", "word", "log_freq", "log2_freq", "log_senses", "pos", "nn_sim", "l2_norm", "es"]);
    let mut summary = Table::new(&[
        "algorithm", "corpus", "list", "analysis", "unit_type", "rule", "count", "degenerate", "min", "q1", "median", "q3", "max", "n_outliers",
        "frac_below_half", "empty_reason",
    ]);
    let mut comparisons = Table::new(&["test", "scope", "n", "statistic", "df", "p_value", "estimate", "defined", "note"]);

    for r in results {
        let (al, co) = (r.spec.algorithm.clone(), r.spec.corpus.clone());
        for l in &r.lists {
            let t = &l.tensor;
            let (ns, ng, nt, nk) = t.shape();
            if a.scores {
                for s in 0..ns {
                    for g in 0..ng {
                        for ti in 0..nt {
                            for k in 0..nk {
                                scores.push(vec![
                                    al.clone(),
                                    co.clone(),
                                    l.list.clone(),
                                    t.rules[s].kind.as_str().into(),
                                    t.pairs[g].label(),
                                    t.targets[ti].clone(),
                                    t.models[k].clone(),
                                    format_number(t.get(s, g, ti, k)),
                                ]);
                            }
                            means.push(vec![
                                al.clone(),
                                co.clone(),
                                l.list.clone(),
                                t.rules[s].kind.as_str().into(),
                                t.pairs[g].label(),
                                t.targets[ti].clone(),
                                format_number(l.cube.get(s, g, ti)),
                            ]);
                        }
                    }
                }
            }
            if let (true, Some((fam, sc))) = (a.retest, &l.retest) {
                for (u, s) in fam.units.iter().zip(sc) {
                    let [v, b] = score_cells(s);
                    retest.push(vec![
                        al.clone(),
                        co.clone(),
                        l.list.clone(),
                        u.unit_type.as_str().into(),
                        u.unit.clone(),
                        rule_str(u.rule),
                        v,
                        b,
                        u.matrix.n_rows().to_string(),
                        u.matrix.n_cols().to_string(),
                        s.degenerate.to_string(),
                    ]);
                }
                summarize(&mut summary, [&al, &co, &l.list], "retest", fam, sc);
            }
            if let Some((fam, sc)) = &l.interrater {
                for (u, s) in fam.units.iter().zip(sc) {
                    let [v, b] = score_cells(s);
                    inter.push(vec![
                        al.clone(),
                        co.clone(),
                        l.list.clone(),
                        u.unit_type.as_str().into(),
                        u.unit.clone(),
                        v,
                        b,
                        u.matrix.n_rows().to_string(),
                        u.matrix.n_cols().to_string(),
                        s.degenerate.to_string(),
                        cfg.interrater.zscore.to_string(),
                    ]);
                }
                summarize(&mut summary, [&al, &co, &l.list], "interrater", fam, sc);
            }
            if let Some((fam, sc)) = &l.internal {
                for (u, s) in fam.units.iter().zip(sc) {
                    let [v, b] = score_cells(s);
                    internal.push(vec![
                        al.clone(),
                        co.clone(),
                        u.unit_type.as_str().into(),
                        u.unit.clone(),
                        rule_str(u.rule),
                        v,
                        b,
                        u.matrix.n_cols().to_string(),
                        u.matrix.n_rows().to_string(),
                        s.degenerate.to_string(),
                    ]);
                }
                summarize(&mut summary, [&al, &co, &l.list], "internal", fam, sc);
            }
            if l.cube.rule_index(RuleKind::Dbwa).is_some() && l.cube.rule_index(RuleKind::Ripa).is_some() {
                let xs: Vec<f64> = l.cube.targets.iter().map(|w| aggregate_target(&l.cube, RuleKind::Dbwa, w).expect("present")).collect();
                let ys: Vec<f64> = l.cube.targets.iter().map(|w| aggregate_target(&l.cube, RuleKind::Ripa, w).expect("present")).collect();
                let scope = format!("{al}/{co}/{}", l.list);
                match pearson_r(&xs, &ys) {
                    Ok(p) => comparisons.push(vec![
                        "pearson_dbwa_ripa".into(),
                        scope,
                        p.n.to_string(),
                        format_number(p.t_stat),
                        format_number(p.n as f64 - 2.0),
                        format_number(p.p_two_sided),
                        format_number(p.r),
                        p.defined.to_string(),
                        "target scores averaged over pairs and models".into(),
                    ]),
                    Err(e) => comparisons.push(vec![
                        "pearson_dbwa_ripa".into(),
                        scope,
                        xs.len().to_string(),
                        String::new(),
                        String::new(),
                        String::new(),
                        String::new(),
                        "false".into(),
                        e.to_string(),
                    ]),
                }
            }
        }
        if let Some((fam, sc)) = &r.queries {
            summarize(&mut summary, [&al, &co, "queries"], "internal", fam, sc);
            for (u, s) in fam.units.iter().zip(sc) {
                let [v, b] = score_cells(s);
                internal.push(vec![
                    al.clone(),
                    co.clone(),
                    u.unit_type.as_str().into(),
                    u.unit.clone(),
                    rule_str(u.rule),
                    v,
                    b,
                    u.matrix.n_cols().to_string(),
                    u.matrix.n_rows().to_string(),
                    s.degenerate.to_string(),
                ]);
            }
        }
        if let (true, Some(st)) = (a.stability, &r.stability) {
            for i in 0..st.words.len() {
                stability.push(vec![
                    al.clone(),
                    co.clone(),
                    st.words[i].clone(),
                    format_number(st.es[i]),
                    st.pairs_used[i].to_string(),
                    st.flagged[i].to_string(),
                ]);
            }
        }
        if let (true, Some(ft)) = (a.features, &r.features) {
            for row in &ft.rows {
                features.push(vec![
                    al.clone(),
                    co.clone(),
                    row.word.clone(),
                    opt_num(row.log_freq),
                    opt_num(row.log2_freq),
                    opt_num(row.log_senses),
                    row.pos.clone().unwrap_or_default(),
                    opt_num(row.nn_sim),
                    format_number(row.l2_norm),
                    opt_num(row.es),
                ]);
            }
        }
    }

    if a.retest {
        if let Some(row) = singular_plural_row(results, cfg) {
            comparisons.push(row);
        }
    }

    if a.scores {
        out.push(("scores.csv", scores));
        out.push(("scores_mean.csv", means));
    }
    if a.retest {
        out.push(("retest.csv", retest));
    }
    if a.interrater {
        out.push(("interrater.csv", inter));
    }
    if a.internal {
        out.push(("internal.csv", internal));
    }
    if a.stability {
        out.push(("stability.csv", stability));
    }
    if a.features {
        out.push(("features.csv", features));
    }
    if let Some(reg) = regression {
        out.push(("regression.csv", regression_table(reg)));
    }
    if a.retest || a.interrater || a.internal {
        out.push(("summary.csv", summary));
    }
    if a.retest || a.scores {
        out.push(("comparisons.csv", comparisons));
    }
    out
}

/// Per-pair test-retest reliabilities pooled over ensembles, lists and
/// rules, in the order of `pairs`.
pub fn pooled_pair_reliability(results: &[EnsembleResult], cfg: &RunConfig, pair: &BasePair) -> Option<f64> {
    let label = pair.label();
    let mut vals = Vec::new();
    for r in results {
        for l in &r.lists {
            if let Some((fam, sc)) = &l.retest {
                for (u, s) in fam.units.iter().zip(sc) {
                    if u.unit_type == UnitType::Pair && u.unit == label {
                        if let Some(v) = s.defined() {
                            vals.push(v);
                        }
                    }
                }
            }
        }
    }
    if vals.is_empty() {
        None
    } else {
        Some(cfg.regression.aggregation.apply(&vals))
    }
}

fn singular_plural_row(results: &[EnsembleResult], cfg: &RunConfig) -> Option<Vec<String>> {
    let pairs = &results.first()?.lists.first()?.tensor.pairs;
    let matches = singular_plural_matches(pairs);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (s, p) in &matches {
        if let (Some(a), Some(b)) = (pooled_pair_reliability(results, cfg, s), pooled_pair_reliability(results, cfg, p)) {
            xs.push(a);
            ys.push(b);
        }
    }
    if xs.is_empty() {
        return None;
    }
    let note = format!("{:?} of per-pair retest ICC(2,1), singular minus plural", cfg.regression.aggregation).to_lowercase();
    Some(match paired_t_test(&xs, &ys) {
        Ok(t) => vec![
            "paired_t_singular_plural".into(),
            "all".into(),
            xs.len().to_string(),
            format_number(t.t_stat),
            format_number(t.df as f64),
            format_number(t.p_two_sided),
            format_number(t.mean_difference),
            t.defined.to_string(),
            note,
        ],
        Err(e) => vec![
            "paired_t_singular_plural".into(),
            "all".into(),
            xs.len().to_string(),
            String::new(),
            String::new(),
            String::new(),
            String::new(),
            "false".into(),
            e.to_string(),
        ],
    })
}

fn regression_table(reg: &RegressionResult) -> Table {
    let mut t = Table::new(&["term", "factor", "estimate", "std_error", "p_value", "significant", "delta_r2"]);
    let fit = &reg.fit;
    let delta_of = |f: &str| reg.deltas.iter().find(|d| d.factor == f).map(|d| d.delta);
    let mut referenced = std::collections::HashSet::new();
    for (j, c) in reg.dataset.columns().iter().enumerate() {
        if let Some((factor, level)) = reg.dataset.references().iter().find(|(f, _)| *f == c.factor) {
            if referenced.insert(factor.clone()) {
                t.push(vec![
                    format!("{factor}={level}"),
                    factor.clone(),
                    "reference".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    opt_num(delta_of(factor)),
                ]);
            }
        }
        let delta = if j == 0 || reg.dataset.references().iter().any(|(f, _)| *f == c.factor) {
            String::new()
        } else {
            opt_num(delta_of(&c.factor))
        };
        t.push(vec![
            c.name.clone(),
            c.factor.clone(),
            format_number(fit.beta[j]),
            format_number(fit.se[j]),
            format_number(fit.p_values[j]),
            fit.significant[j].to_string(),
            delta,
        ]);
    }
    let stats = [
        ("r2_fixed", fit.r2_fixed),
        ("r2_algorithm", fit.r2_algorithm),
        ("r2_corpus", fit.r2_corpus),
        ("r2_total", fit.r2_total),
        ("sigma2_algorithm", fit.sigma2_nu),
        ("sigma2_corpus", fit.sigma2_mu),
        ("sigma2_residual", fit.sigma2_eps),
        ("loglik", fit.loglik),
        ("n", fit.n as f64),
    ];
    for (name, v) in stats {
        t.push(vec![name.into(), String::new(), format_number(v), String::new(), String::new(), String::new(), String::new()]);
    }
    t.push(vec![
        "converged".into(),
        String::new(),
        fit.converged.to_string(),
        String::new(),
        String::new(),
        String::new(),
        String::new(),
    ]);
    t
}

/// Absolute path of the smoke-test config shipped with the crate.
pub fn smoke_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/smoke/smoke.toml")
}
