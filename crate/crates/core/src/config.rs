//! Run configuration, read from a TOML file.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Word-list references accept `bundled` (all bundled lists of that
//! kind), `bundled:<name>` or a file path.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::TextFormat;
use crate::error::{Error, Result};
use crate::features::Aggregation;
use crate::resources;
use crate::scoring::{BasePair, NbmOptions, Query, RuleKind, ScoringRule, TargetList, DEFAULT_NBM_K};
use crate::synth::SynthSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub algorithm: String,
    pub corpus: String,
    #[serde(default)]
    pub files: Vec<PathBuf>,
    #[serde(default)]
    pub format: TextFormat,
    /// Corpus word counts for this ensemble; overrides `features.counts`.
    #[serde(default)]
    pub counts: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SynthSpec>,
}

impl EnsembleSpec {
    pub fn label(&self) -> String {
        format!("{}/{}", self.algorithm, self.corpus)
    }

    /// Number of seed models this spec yields.
    pub fn k(&self) -> usize {
        self.synthetic.as_ref().map_or(self.files.len(), |s| s.k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NbmConfig {
    pub k: usize,
    pub exclude_tokens: Vec<String>,
    pub exclude_pair_words: bool,
}

impl Default for NbmConfig {
    fn default() -> Self {
        NbmConfig {
            k: DEFAULT_NBM_K,
            exclude_tokens: Vec::new(),
            exclude_pair_words: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RulesConfig {
    pub enabled: Vec<RuleKind>,
    pub nbm: NbmConfig,
}

impl Default for RulesConfig {
    fn default() -> Self {
        RulesConfig {
            enabled: vec![RuleKind::Dbwa, RuleKind::Ripa, RuleKind::Nbm],
            nbm: NbmConfig::default(),
        }
    }
}

impl RulesConfig {
    pub fn rules(&self) -> Vec<ScoringRule> {
        self.enabled
            .iter()
            .map(|k| match k {
                RuleKind::Dbwa => ScoringRule::dbwa(),
                RuleKind::Ripa => ScoringRule::ripa(),
                RuleKind::Nbm => ScoringRule::nbm(self.nbm.k),
            })
            .collect()
    }

    pub fn nbm_options(&self) -> NbmOptions {
        NbmOptions {
            exclude_tokens: self.nbm.exclude_tokens.clone(),
            exclude_pair_words: self.nbm.exclude_pair_words,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResourcesConfig {
    pub basepairs: String,
    pub targets: Vec<String>,
    pub queries: Vec<String>,
}

impl Default for ResourcesConfig {
    fn default() -> Self {
        ResourcesConfig {
            basepairs: "bundled".into(),
            targets: vec!["bundled".into()],
            queries: vec!["bundled".into()],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureFiles {
    pub counts: Option<PathBuf>,
    pub senses: Option<PathBuf>,
    pub pos: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Analyses {
    /// Emit the full per-model score table.
    pub scores: bool,
    pub retest: bool,
    pub interrater: bool,
    pub internal: bool,
    pub stability: bool,
    pub features: bool,
    pub regress: bool,
}

impl Default for Analyses {
    fn default() -> Self {
        Analyses {
            scores: true,
            retest: true,
            interrater: true,
            internal: true,
            stability: true,
            features: true,
            regress: true,
        }
    }
}

impl Analyses {
    pub fn none() -> Self {
        Analyses {
            scores: false,
            retest: false,
            interrater: false,
            internal: false,
            stability: false,
            features: false,
            regress: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StabilityConfig {
    /// Cap on the number of model pairs aligned per ensemble.
    pub pair_budget: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InterraterConfig {
    /// Z-score each rule's column before estimating ICC(3,1).
    pub zscore: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegressionConfig {
    pub standardize: bool,
    pub alias_collinear: bool,
    /// How per-pair reliabilities are pooled for the singular/plural test.
    pub aggregation: Aggregation,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        RegressionConfig {
            standardize: true,
            alias_collinear: false,
            aggregation: Aggregation::Median,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    pub ensembles: Vec<EnsembleSpec>,
    #[serde(default)]
    pub rules: RulesConfig,
    #[serde(default)]
    pub resources: ResourcesConfig,
    #[serde(default)]
    pub features: FeatureFiles,
    #[serde(default)]
    pub analyses: Analyses,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default)]
    pub interrater: InterraterConfig,
    #[serde(default)]
    pub regression: RegressionConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("biasrel-out")
}

/// A loaded word-list resource and where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ResourceInfo {
    pub kind: &'static str,
    pub name: String,
    pub source: String,
    pub sha256: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn bundled_info(kind: &'static str, name: &str) -> ResourceInfo {
    ResourceInfo {
        kind,
        name: name.to_string(),
        source: format!("bundled:{name}"),
        sha256: sha256_hex(resources::bundled_source(name).expect("bundled resource").as_bytes()),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml_str(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_path(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.ensembles.is_empty() {
            return fail("at least one ensemble is required".into());
        }
        if self.rules.enabled.is_empty() {
            return fail("at least one scoring rule is required".into());
        }
        if self.rules.enabled.iter().collect::<BTreeSet<_>>().len() != self.rules.enabled.len() {
            return fail("scoring rules are listed more than once".into());
        }
        if self.rules.nbm.k == 0 {
            return fail("nbm.k must be at least 1".into());
        }
        if self.resources.targets.is_empty() {
            return fail("at least one target list is required".into());
        }
        let mut labels = BTreeSet::new();
        for e in &self.ensembles {
            if !labels.insert(e.label()) {
                return fail(format!("ensemble {} is listed twice", e.label()));
            }
            match (&e.synthetic, e.files.is_empty()) {
                (Some(_), false) => return fail(format!("ensemble {} has both files and a synthetic recipe", e.label())),
                (None, true) => return fail(format!("ensemble {} has no embedding files", e.label())),
                _ => {}
            }
            if (self.analyses.retest || self.analyses.stability) && e.k() < 2 {
                return fail(format!("ensemble {} needs at least 2 seed models for retest/stability", e.label()));
            }
        }
        if self.stability.pair_budget == Some(0) {
            return fail("stability.pair_budget must be at least 1".into());
        }
        Ok(())
    }

    pub fn load_base_pairs(&self) -> Result<(Vec<BasePair>, ResourceInfo)> {
        let r = self.resources.basepairs.as_str();
        if r == "bundled" || r == "bundled:basepairs" {
            return Ok((resources::bundled_base_pairs(), bundled_info("basepairs", "basepairs")));
        }
        let path = self.resolve(Path::new(r));
        let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let text = String::from_utf8_lossy(&bytes);
        Ok((
            resources::parse_base_pairs(&text, &path)?,
            ResourceInfo {
                kind: "basepairs",
                name: path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default(),
                source: path.display().to_string(),
                sha256: sha256_hex(&bytes),
            },
        ))
    }

    fn load_lists(&self, refs: &[String], kind: &'static str) -> Result<Vec<(TargetList, ResourceInfo)>> {
        let mut out = Vec::new();
        for r in refs {
            if r == "bundled" {
                if kind == "query" {
                    for q in resources::bundled_queries() {
                        let info = bundled_info(kind, &q.name);
                        out.push((q, info));
                    }
                } else {
                    for (name, _) in resources::TARGET_LISTS {
                        out.push((resources::bundled_target_list(name).expect("bundled"), bundled_info(kind, name)));
                    }
                }
            } else if let Some(name) = r.strip_prefix("bundled:") {
                let list = if kind == "query" {
                    resources::bundled_queries().into_iter().find(|q| q.name == name)
                } else {
                    resources::bundled_target_list(name)
                };
                let list = list.ok_or_else(|| Error::Config(format!("no bundled {kind} list named {name}")))?;
                out.push((list, bundled_info(kind, name)));
            } else {
                let path = self.resolve(Path::new(r));
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                let list = resources::load_word_list(&path)?;
                let info = ResourceInfo {
                    kind,
                    name: list.name.clone(),
                    source: path.display().to_string(),
                    sha256: sha256_hex(&bytes),
                };
                out.push((list, info));
            }
        }
        let mut names = BTreeSet::new();
        for (l, _) in &out {
            if !names.insert(l.name.clone()) {
                return Err(Error::Config(format!("two {kind} lists are named {}", l.name)));
            }
        }
        Ok(out)
    }

    pub fn load_targets(&self) -> Result<Vec<(TargetList, ResourceInfo)>> {
        self.load_lists(&self.resources.targets, "target")
    }

    pub fn load_queries(&self) -> Result<Vec<(Query, ResourceInfo)>> {
        self.load_lists(&self.resources.queries, "query")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
        [[ensembles]]
        algorithm = "sgns"
        corpus = "wiki"
        files = ["a.txt", "b.txt"]
    "#;

    #[test]
    fn defaults() {
        let c = RunConfig::from_toml_str(MINIMAL, Path::new("/cfg")).unwrap();
        assert_eq!(c.rules.enabled.len(), 3);
        assert_eq!(c.rules.nbm.k, 100);
        assert!(c.analyses.retest && c.analyses.regress);
        assert_eq!(c.resolve(&c.ensembles[0].files[0]), PathBuf::from("/cfg/a.txt"));
        let (pairs, info) = c.load_base_pairs().unwrap();
        assert_eq!(pairs.len(), 23);
        assert_eq!(info.source, "bundled:basepairs");
        assert_eq!(c.load_targets().unwrap().len(), 3);
        assert_eq!(c.load_queries().unwrap().len(), 6);
    }

    #[test]
    fn rejects_bad_configs() {
        let one_model = MINIMAL.replace(r#"["a.txt", "b.txt"]"#, r#"["a.txt"]"#);
        assert!(RunConfig::from_toml_str(&one_model, Path::new(".")).is_err());
        let no_rules = format!("{MINIMAL}\n[rules]\nenabled = []\n");
        assert!(RunConfig::from_toml_str(&no_rules, Path::new(".")).is_err());
        let unknown = format!("{MINIMAL}\n[analyses]\nbogus = true\n");
        assert!(matches!(RunConfig::from_toml_str(&unknown, Path::new(".")), Err(Error::Config(_))));
        assert!(RunConfig::from_toml_str("", Path::new(".")).is_err());
    }

    #[test]
    fn named_bundled_lists() {
        let text = format!("{MINIMAL}\n[resources]\ntargets = [\"bundled:occ18\"]\nqueries = [\"bundled:math\"]\n");
        let c = RunConfig::from_toml_str(&text, Path::new(".")).unwrap();
        let t = c.load_targets().unwrap();
        assert_eq!(t[0].0.words.len(), 76);
        assert_eq!(c.load_queries().unwrap()[0].0.name, "math");
        let bad = format!("{MINIMAL}\n[resources]\ntargets = [\"bundled:nope\"]\n");
        assert!(RunConfig::from_toml_str(&bad, Path::new(".")).unwrap().load_targets().is_err());
    }
}
