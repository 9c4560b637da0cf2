use std::path::Path;
use std::process::{Command, Output};

use ihcq::fixtures::{self, Fixture, FixtureKind};
use ihcq::maskops::Polygon;
use ihcq::store::{Annotation, AnnotationDocument, Provenance, Store};
use ihcq::{CellClass, PatchRegion};

fn run(args: &[&str], store_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_ihcq"));
    cmd.args(args).env_remove("IHCQ_STORE");
    if let Some(dir) = store_env {
        cmd.env("IHCQ_STORE", dir);
    }
    cmd.output().expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_png(path: &Path, w: u32, h: u32) {
    image::RgbImage::from_fn(w, h, |x, y| image::Rgb([(x % 251) as u8, (y % 241) as u8, 90]))
        .save(path)
        .unwrap();
}

#[test]
fn ingest_prints_summary_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.png");
    write_png(&img, 1000, 800);
    let root = dir.path().join("store");
    let args = [
        "ingest", s(&img), "--slide-id", "a", "--biomarker", "HER2", "--root", s(&root),
    ];
    let first = stdout(&run(&args, None));
    assert_eq!(first, "a: 1000x800 HER2\n3 levels, 21 tiles\n");
    let tile = Store::open(&root).unwrap().get_tile("a", 1, 0, 0).unwrap();
    let second = stdout(&run(&args, None));
    assert_eq!(first, second);
    let store = Store::open(&root).unwrap();
    assert_eq!(store.slides().unwrap().len(), 1);
    assert_eq!(store.get_tile("a", 1, 0, 0).unwrap().bytes, tile.bytes);
}

#[test]
fn ingest_of_missing_file_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(
        &[
            "ingest",
            s(&dir.path().join("nope.png")),
            "--slide-id",
            "a",
            "--biomarker",
            "Ki-67",
            "--root",
            s(&dir.path().join("store")),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error ["));
}

#[test]
fn store_env_takes_precedence_over_root() {
    let dir = tempfile::tempdir().unwrap();
    let img = dir.path().join("a.png");
    write_png(&img, 300, 200);
    let env_root = dir.path().join("from-env");
    let flag_root = dir.path().join("from-flag");
    stdout(&run(
        &["ingest", s(&img), "--slide-id", "e", "--biomarker", "ER", "--root", s(&flag_root)],
        Some(&env_root),
    ));
    assert!(env_root.join("slides/e/slide.json").exists());
    assert!(!flag_root.join("slides/e").exists());
}

#[test]
fn evaluate_with_empty_ground_truth_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::generate(FixtureKind::Fig5, 0);
    fx.write(dir.path()).unwrap();
    let empty = dir.path().join("empty.json");
    std::fs::write(
        &empty,
        serde_json::to_string(&AnnotationDocument::new(fx.patch().clone())).unwrap(),
    )
    .unwrap();
    let out = run(
        &[
            "evaluate",
            "--pred",
            s(&dir.path().join(fixtures::PREDICTIONS_FILE)),
            "--gt",
            s(&empty),
            "--out",
            s(&dir.path().join("r.json")),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("[empty_dataset]"));
    assert!(!dir.path().join("r.json").exists());
}

#[test]
fn evaluate_perfect_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::generate(FixtureKind::Disks, 4);
    fx.write(dir.path()).unwrap();
    let gt = dir.path().join(fixtures::GROUND_TRUTH_FILE);
    // The ground truth itself, as a prediction file.
    let perfect = ihcq::formats::PredictionFile::from_predictions(
        fx.patch().clone(),
        "oracle",
        &fx.ground_truth
            .ground_truth()
            .unwrap()
            .into_iter()
            .map(|g| ihcq::PredictionInstance::new(g.id, g.class, 1.0, g.mask).unwrap())
            .collect::<Vec<_>>(),
    );
    let pred = dir.path().join("perfect.json");
    std::fs::write(&pred, perfect.to_json()).unwrap();
    let report = dir.path().join("report.json");
    let text = stdout(&run(
        &["evaluate", "--pred", s(&pred), "--gt", s(&gt), "--out", s(&report)],
        None,
    ));
    assert!(text.contains("immunopositive @0.50: TP 3 FP 0 FN 0"), "{text}");
    let r: ihcq::eval::EvalReport =
        serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let summary = r.summary();
    assert_eq!(summary.map_50, Some(1.0));
    assert_eq!(summary.map_75, Some(1.0));
    assert_eq!(summary.map_range, Some(1.0));
    let csv = std::fs::read_to_string(dir.path().join("report.pr.csv")).unwrap();
    assert!(csv.lines().count() > 1);
}

#[test]
fn sweep_rejects_an_empty_grid() {
    let dir = tempfile::tempdir().unwrap();
    let fx = Fixture::generate(FixtureKind::Spurious, 0);
    fx.write(dir.path()).unwrap();
    let out = run(
        &[
            "sweep",
            "--pred",
            s(&dir.path().join(fixtures::PREDICTIONS_FILE)),
            "--gt",
            s(&dir.path().join(fixtures::GROUND_TRUTH_FILE)),
            "--grid",
            "0.5:0.2:0.1",
            "--out",
            s(&dir.path().join("s.csv")),
        ],
        None,
    );
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fixtures_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for d in [&a, &b] {
        stdout(&run(&["gen-fixtures", "--kind", "spurious", "--seed", "7", "--out-dir", s(d)], None));
    }
    for name in [fixtures::GROUND_TRUTH_FILE, fixtures::PREDICTIONS_FILE, fixtures::IMAGE_FILE] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn scores_a_her2_document() {
    let dir = tempfile::tempdir().unwrap();
    let mut doc = AnnotationDocument::new(PatchRegion::new("h", 0, 0).with_size(200, 200));
    let classes = [
        (CellClass::M3IntenseComplete, 3),
        (CellClass::M2ModerateComplete, 2),
        (CellClass::M0NoStaining, 5),
    ];
    let mut i = 0;
    for (class, n) in classes {
        for _ in 0..n {
            let (x, y) = (f64::from(i % 10) * 20.0, f64::from(i / 10) * 20.0);
            doc.annotations.push(Annotation {
                id: format!("a{i}"),
                class,
                polygon: Polygon::rect(x, y, 10.0, 10.0).unwrap(),
                provenance: Provenance::Manual,
                confidence: None,
                author: "t".into(),
                timestamp: None,
            });
            i += 1;
        }
    }
    let path = dir.path().join("doc.json");
    std::fs::write(&path, serde_json::to_string(&doc).unwrap()).unwrap();
    let text = stdout(&run(&["score", "--annotations", s(&path)], None));
    assert!(text.contains("3+ Positive"), "{text}");
    let wrong = run(&["score", "--annotations", s(&path), "--biomarker", "Ki-67"], None);
    assert_eq!(wrong.status.code(), Some(3));
}

#[test]
fn export_renders_split_tables() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("store");
    let store = Store::open(&root).unwrap();
    for seed in 0..3 {
        let mut doc = Fixture::generate(FixtureKind::Disks, seed).ground_truth;
        doc.patch = PatchRegion::new(format!("s{seed}"), 0, 0).with_size(350, 350);
        store.save_document(&doc).unwrap();
    }
    let out_json = dir.path().join("manifest.json");
    let text = stdout(&run(
        &["export", "--test-slides", "s2", "--out", s(&out_json), "--root", s(&root)],
        None,
    ));
    assert!(text.contains("All\t16\t8\t24"), "{text}");
    assert!(out_json.exists());
    let empty = run(&["export", "--test-slides", "zzz", "--root", s(&root)], None);
    assert_eq!(empty.status.code(), Some(3));
}
