use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use biasrel::alignment::procrustes;
use biasrel::embedding::{EmbeddingModel, TextFormat};
use biasrel::reliability::{icc21, RatingsMatrix};
use biasrel::scoring::{score_dbwa, BasePair};
use biasrel_ffi::*;

// Shrout and Fleiss (1979) six targets rated by four judges.
const SF: [f64; 24] = [
    9., 2., 5., 8., 6., 1., 3., 2., 8., 4., 6., 8., 7., 1., 2., 6., 10., 5., 6., 9., 6., 2., 4., 7.,
];

fn last_error() -> String {
    let p = biasrel_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn estimators_match_published_table() {
    let (mut v, mut deg) = (0.0, true);
    unsafe {
        assert_eq!(biasrel_icc21(SF.as_ptr(), 6, 4, &mut v, &mut deg), BiasrelStatus::Ok);
        assert!((v - 0.29).abs() < 5e-3 && !deg);
        let core = icc21(&RatingsMatrix::new(SF.to_vec(), 6, 4).unwrap()).value;
        assert_eq!(v, core);
        assert_eq!(biasrel_icc31(SF.as_ptr(), 6, 4, &mut v, ptr::null_mut()), BiasrelStatus::Ok);
        assert!((v - 0.71).abs() < 5e-3);
        assert_eq!(biasrel_cronbach_alpha(SF.as_ptr(), 6, 4, &mut v, &mut deg), BiasrelStatus::Ok);
        assert!((v - 0.91).abs() < 5e-3);
    }
    assert!(biasrel_last_error().is_null());
}

#[test]
fn degenerate_matrix_reports_nan() {
    let flat = [1.0; 12];
    let (mut v, mut deg) = (0.0, false);
    let st = unsafe { biasrel_icc21(flat.as_ptr(), 4, 3, &mut v, &mut deg) };
    assert_eq!(st, BiasrelStatus::Ok);
    assert!(v.is_nan() && deg);
}

#[test]
fn null_and_shape_errors() {
    let mut v = 0.0;
    let st = unsafe { biasrel_icc21(ptr::null(), 2, 2, &mut v, ptr::null_mut()) };
    assert_eq!(st, BiasrelStatus::NullPointer);
    assert!(last_error().contains("null"));
    let st = unsafe { biasrel_icc31(SF.as_ptr(), 1, 4, &mut v, ptr::null_mut()) };
    assert_eq!(st, BiasrelStatus::InvalidArgument);
    assert!(!last_error().is_empty());
}

fn write_model(dir: &Path) -> PathBuf {
    let vocab: Vec<String> = ["he", "she", "doctor", "nurse", "table", "chair"].iter().map(|s| s.to_string()).collect();
    let m = vec![
        1.0, 0.0, 0.2, //
        -1.0, 0.0, 0.2, //
        0.6, 0.8, 0.0, //
        -0.5, 0.7, 0.1, //
        0.0, 0.3, 1.0, //
        0.1, -0.2, 0.9,
    ];
    let model = EmbeddingModel::new(vocab, m, 3, "toy").unwrap();
    let path = dir.join("toy.txt");
    model.write_text(&path, TextFormat::W2vText).unwrap();
    path
}

#[test]
fn model_handle_scores() {
    let dir = tempfile::tempdir().unwrap();
    let path = write_model(dir.path());
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    let mut h: *mut BiasrelModel = ptr::null_mut();
    unsafe {
        assert_eq!(biasrel_model_load(cpath.as_ptr(), &mut h), BiasrelStatus::Ok);
        let (mut n, mut d) = (0usize, 0usize);
        assert_eq!(biasrel_model_vocab_size(h, &mut n), BiasrelStatus::Ok);
        assert_eq!(biasrel_model_dim(h, &mut d), BiasrelStatus::Ok);
        assert_eq!((n, d), (6, 3));

        let (w, m, f) = (CString::new("doctor").unwrap(), CString::new("he").unwrap(), CString::new("she").unwrap());
        let mut s = 0.0;
        assert_eq!(biasrel_score_dbwa(h, w.as_ptr(), m.as_ptr(), f.as_ptr(), &mut s), BiasrelStatus::Ok);
        let loaded = biasrel::embedding::parse_embedding_text(&path, TextFormat::Auto).unwrap();
        let expect = score_dbwa(&loaded, "doctor", &BasePair::new("he", "she").unwrap()).unwrap();
        assert!((s - expect).abs() < 1e-15 && s > 0.0);

        assert_eq!(biasrel_score_ripa(h, w.as_ptr(), m.as_ptr(), f.as_ptr(), &mut s), BiasrelStatus::Ok);
        assert!((s - 0.6).abs() < 1e-12);

        assert_eq!(biasrel_score_nbm(h, w.as_ptr(), m.as_ptr(), f.as_ptr(), 2, &mut s), BiasrelStatus::Ok);
        assert!((-1.0..=1.0).contains(&s));

        let missing = CString::new("zebra").unwrap();
        let st = biasrel_score_dbwa(h, missing.as_ptr(), m.as_ptr(), f.as_ptr(), &mut s);
        assert_eq!(st, BiasrelStatus::MissingWord);
        assert!(last_error().contains("zebra"));

        let st = biasrel_score_nbm(h, w.as_ptr(), m.as_ptr(), f.as_ptr(), 0, &mut s);
        assert_eq!(st, BiasrelStatus::InvalidArgument);
        biasrel_model_free(h);
        biasrel_model_free(ptr::null_mut());
    }
}

#[test]
fn load_missing_file_is_io_error() {
    let p = CString::new("/nonexistent/embeddings.txt").unwrap();
    let mut h: *mut BiasrelModel = ptr::null_mut();
    let st = unsafe { biasrel_model_load(p.as_ptr(), &mut h) };
    assert_eq!(st, BiasrelStatus::Io);
    assert!(h.is_null());
    assert!(last_error().contains("/nonexistent/embeddings.txt"));
}

#[test]
fn procrustes_matches_core() {
    let rows = 5;
    let a: Vec<f64> = (0..rows * 2).map(|i| ((i * 7 % 11) as f64) - 5.0).collect();
    let (c, s) = (0.3f64.cos(), 0.3f64.sin());
    // b = a M with M a rotation, so the map back is M^T.
    let b: Vec<f64> = a.chunks(2).flat_map(|r| [c * r[0] + s * r[1], -s * r[0] + c * r[1]]).collect();
    let mut q = [0.0; 4];
    let st = unsafe { biasrel_procrustes(a.as_ptr(), b.as_ptr(), rows, 2, q.as_mut_ptr()) };
    assert_eq!(st, BiasrelStatus::Ok);
    assert_eq!(q.to_vec(), procrustes(&a, &b, rows, 2).unwrap().q);
    for (x, y) in q.iter().zip([c, s, -s, c]) {
        assert!((x - y).abs() < 1e-12, "{q:?}");
    }
}

#[test]
fn run_config_reports_missing_file() {
    let p = CString::new("/nonexistent/run.toml").unwrap();
    let st = unsafe { biasrel_run_config(p.as_ptr()) };
    assert_ne!(st, BiasrelStatus::Ok);
    assert!(last_error().contains("/nonexistent/run.toml"));
}

fn header() -> String {
    std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/biasrel.h")).unwrap()
}

#[test]
fn header_declares_every_export() {
    let h = header();
    for name in [
        "biasrel_last_error",
        "biasrel_icc21",
        "biasrel_icc31",
        "biasrel_cronbach_alpha",
        "biasrel_model_load",
        "biasrel_model_free",
        "biasrel_model_vocab_size",
        "biasrel_model_dim",
        "biasrel_score_dbwa",
        "biasrel_score_ripa",
        "biasrel_score_nbm",
        "biasrel_procrustes",
        "biasrel_run_config",
    ] {
        assert!(h.contains(&format!("{name}(")), "{name} missing from header");
    }
    assert!(h.contains("typedef struct BiasrelModel BiasrelModel;"));
    assert!(h.contains("BIASREL_STATUS_OK = 0"));
    assert!(h.contains("#ifndef BIASREL_H"));
}

const C_PROGRAM: &str = r#"
#include <math.h>
#include <stdio.h>
#include "biasrel.h"
int main(void) {
    double x[24] = {9,2,5,8, 6,1,3,2, 8,4,6,8, 7,1,2,6, 10,5,6,9, 6,2,4,7};
    double v = 0; bool deg = true;
    if (biasrel_icc21(x, 6, 4, &v, &deg) != BIASREL_STATUS_OK || deg) return 1;
    printf("%.6f\n", v);
    if (biasrel_icc21(NULL, 6, 4, &v, &deg) != BIASREL_STATUS_NULL_POINTER) return 2;
    if (biasrel_last_error() == NULL) return 3;
    return 0;
}
"#;

#[test]
fn c_program_links_against_static_library() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let profile_dir = Path::new(env!("CARGO_TARGET_TMPDIR")).parent().unwrap().join(if cfg!(debug_assertions) { "debug" } else { "release" });
    let lib = profile_dir.join("libbiasrel_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no C compiler or static library at {}", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, C_PROGRAM).unwrap();
    let exe = dir.path().join("main");
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let v: f64 = String::from_utf8_lossy(&run.stdout).trim().parse().unwrap();
    let expect = icc21(&RatingsMatrix::new(SF.to_vec(), 6, 4).unwrap()).value;
    assert!((v - expect).abs() < 1e-6);
}
