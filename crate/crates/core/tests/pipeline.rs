use std::path::PathBuf;

use biasrel::config::{Analyses, EnsembleSpec, RunConfig};
use biasrel::embedding::TextFormat;
use biasrel::pipeline::{run, smoke_config_path, MANIFEST_FILE, REPORT_FILES};

fn smoke(out: PathBuf) -> RunConfig {
    let mut cfg = RunConfig::load(&smoke_config_path()).unwrap();
    cfg.output_dir = out;
    cfg.ensembles.truncate(2);
    cfg
}

fn csvs(dir: &std::path::Path) -> Vec<String> {
    let mut v: Vec<String> = std::fs::read_dir(dir)
        .map(|it| it.filter_map(|e| e.ok()).map(|e| e.file_name().to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    v.retain(|n| n.ends_with(".csv"));
    v.sort();
    v
}

#[test]
fn disabled_analyses_leave_no_stale_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = smoke(tmp.path().join("out"));
    let first = run(&cfg).unwrap();
    assert!(first.output_dir.join("retest.csv").is_file());

    cfg.analyses = Analyses {
        retest: false,
        regress: false,
        ..Analyses::default()
    };
    let second = run(&cfg).unwrap();
    let names = csvs(&second.output_dir);
    assert!(!names.contains(&"retest.csv".to_string()), "{names:?}");
    assert!(second.manifest.outputs.iter().all(|o| o.file != "retest.csv"));
    for n in &names {
        assert!(REPORT_FILES.contains(&n.as_str()));
        assert!(second.manifest.outputs.iter().any(|o| &o.file == n), "{n} not in manifest");
    }
    let manifest: serde_json::Value =
        serde_json::from_slice(&std::fs::read(second.output_dir.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(manifest["analyses"]["retest"], false);
}

#[test]
fn missing_embedding_file_fails_before_writing() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = smoke(tmp.path().join("out"));
    let gone = tmp.path().join("no_such_model.txt");
    let real = tmp.path().join("real.txt");
    std::fs::write(&real, "2 2\nhe 1 0\nshe 0 1\n").unwrap();
    cfg.ensembles.push(EnsembleSpec {
        algorithm: "sgns".into(),
        corpus: "lost".into(),
        files: vec![real, gone],
        format: TextFormat::Auto,
        counts: None,
        synthetic: None,
    });
    let err = run(&cfg).unwrap_err().to_string();
    assert!(err.contains("no_such_model.txt"), "{err}");
    assert!(csvs(&tmp.path().join("out")).is_empty());
    assert!(!tmp.path().join("out").join(MANIFEST_FILE).exists());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run(&smoke(tmp.path().join("a"))).unwrap();
    let b = run(&smoke(tmp.path().join("b"))).unwrap();
    let digests = |o: &biasrel::pipeline::RunOutcome| o.manifest.outputs.iter().map(|d| (d.file.clone(), d.sha256.clone())).collect::<Vec<_>>();
    assert_eq!(digests(&a), digests(&b));
    for f in REPORT_FILES.iter().filter(|f| a.output_dir.join(f).is_file()) {
        assert_eq!(std::fs::read(a.output_dir.join(f)).unwrap(), std::fs::read(b.output_dir.join(f)).unwrap(), "{f}");
    }
}
