//! Word-list files and the lists shipped with the crate.
//!
//! Base pairs: one `male<TAB>female` pair per line. Target lists and queries:
//! one token per line; the file stem names the list. `#` starts a comment
//! line in both. Everything is lower-cased on load.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scoring::{BasePair, Query, TargetList};

pub const BASEPAIRS_TSV: &str = include_str!("../resources/basepairs.tsv");
pub const OCC16_TXT: &str = include_str!("../resources/occ16.txt");
pub const OCC18_TXT: &str = include_str!("../resources/occ18.txt");
pub const ADJ_TXT: &str = include_str!("../resources/adj.txt");

pub const QUERY_FILES: [(&str, &str); 6] = [
    ("career", include_str!("../resources/queries/career.txt")),
    ("family", include_str!("../resources/queries/family.txt")),
    ("arts", include_str!("../resources/queries/arts.txt")),
    ("arts_2", include_str!("../resources/queries/arts_2.txt")),
    ("math", include_str!("../resources/queries/math.txt")),
    ("science", include_str!("../resources/queries/science.txt")),
];

pub const TARGET_LISTS: [(&str, &str); 3] = [("occ16", OCC16_TXT), ("occ18", OCC18_TXT), ("adj", ADJ_TXT)];

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub fn parse_base_pairs(text: &str, origin: &Path) -> Result<Vec<BasePair>> {
    let mut out = Vec::new();
    for (line, l) in content_lines(text) {
        let perr = |msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let (m, f) = l
            .split_once('\t')
            .ok_or_else(|| perr("expected male<TAB>female".into()))?;
        let pair = BasePair::new(m, f).map_err(|e| perr(e.to_string()))?;
        if !out.contains(&pair) {
            out.push(pair);
        }
    }
    if out.is_empty() {
        return Err(Error::InvalidArgument(format!("{}: no base pairs", origin.display())));
    }
    Ok(out)
}

pub fn parse_word_list(name: &str, text: &str) -> Result<TargetList> {
    TargetList::new(name, content_lines(text).map(|(_, l)| l))
}

pub fn load_base_pairs(path: &Path) -> Result<Vec<BasePair>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_base_pairs(&text, path)
}

/// Loads a target list or query; the file stem becomes its name.
pub fn load_word_list(path: &Path) -> Result<TargetList> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "list".into());
    parse_word_list(&name, &text)
}

/// The 23 bundled gender base pairs.
pub fn bundled_base_pairs() -> Vec<BasePair> {
    parse_base_pairs(BASEPAIRS_TSV, Path::new("bundled:basepairs")).expect("bundled base pairs parse")
}

/// A bundled target list by name: `occ16`, `occ18` or `adj`.
pub fn bundled_target_list(name: &str) -> Option<TargetList> {
    TARGET_LISTS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(n, text)| parse_word_list(n, text).expect("bundled list parses"))
}

/// The six bundled queries.
pub fn bundled_queries() -> Vec<Query> {
    QUERY_FILES
        .iter()
        .map(|(n, text)| parse_word_list(n, text).expect("bundled query parses"))
        .collect()
}

/// Raw bytes of a bundled resource, for checksums.
pub fn bundled_source(name: &str) -> Option<&'static str> {
    match name {
        "basepairs" => Some(BASEPAIRS_TSV),
        _ => TARGET_LISTS
            .iter()
            .chain(QUERY_FILES.iter())
            .find(|(n, _)| *n == name)
            .map(|(_, t)| *t),
    }
}
