use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use aquifer::manifest::{timing_path, RunManifest};
use serde_json::Value;

struct Workspace {
    _dir: tempfile::TempDir,
    root: PathBuf,
}

impl Workspace {
    fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Runs the binary; `{d}` in `line` stands for the workspace directory.
    fn run(&self, line: &str) -> Output {
        let d = self.root.to_str().unwrap();
        assert!(!d.contains(' '));
        Command::new(env!("CARGO_BIN_EXE_aquifer"))
            .args(line.replace("{d}", d).split_whitespace())
            .env_remove("AQUIFER_THREADS")
            .output()
            .expect("binary runs")
    }

    fn code(&self, line: &str) -> i32 {
        self.run(line).status.code().expect("exit code")
    }

    fn ok(&self, line: &str) {
        let out = self.run(line);
        assert!(
            out.status.success(),
            "{line}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }

    fn json(&self, name: &str) -> Value {
        serde_json::from_str(&std::fs::read_to_string(self.path(name)).unwrap()).unwrap()
    }
}

/// A small scene with rasterized building and stage-2 masks.
fn scene() -> Workspace {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let ws = Workspace { _dir: dir, root };
    let cfg = r#"{"width": 40, "height": 40, "n_residential": 3, "n_nonresidential": 2,
                  "building_size_range": [6, 9], "background_cells": 4}"#;
    std::fs::write(ws.path("scene.json"), cfg).unwrap();
    ws.ok("synth --config {d}/scene.json --seed 3 --out-image {d}/scene.mbr --out-annotations {d}/ann.json");
    ws.ok("rasterize --annotations {d}/ann.json --image {d}/scene.mbr --out {d}/building.pgm");
    ws.ok(
        "rasterize --annotations {d}/ann.json --image {d}/scene.mbr --stage2 --out {d}/restype.pgm",
    );
    ws
}

fn train_sgd(ws: &Workspace, k: usize, out: &str) {
    ws.ok(&format!(
        "train --image {{d}}/scene.mbr --mask {{d}}/building.pgm --model sgd --k {k} --seed 1 --out {{d}}/{out}"
    ));
}

#[test]
fn full_pipeline_writes_reports_and_manifests() {
    let ws = scene();
    train_sgd(&ws, 1, "b.model");
    assert!(ws.path("b.model.manifest.json").exists());
    assert!(timing_path(&ws.path("b.model.manifest.json")).exists());
    ws.ok("train --stage restype --image {d}/scene.mbr --mask {d}/restype.pgm --model rf --trees 5 --k 1 --out {d}/r.model");
    ws.ok("predict --model {d}/b.model --image {d}/scene.mbr --out {d}/pb.mbr");
    ws.ok("predict --model {d}/r.model --image {d}/scene.mbr --out {d}/pr.mbr");

    ws.ok("evaluate --probs {d}/pb.mbr --truth {d}/building.pgm --out-dir {d}/eval");
    for f in ["metrics.json", "roc.csv", "confusion.ppm", "manifest.json"] {
        assert!(ws.path("eval").join(f).exists(), "{f} missing");
    }
    let pj = ws.json("eval/metrics.json")["pixel_jaccard"]
        .as_f64()
        .unwrap();
    assert!((0.0..=1.0).contains(&pj));
    let roc = std::fs::read_to_string(ws.path("eval/roc.csv")).unwrap();
    assert!(roc.starts_with("threshold,fpr,tpr\ninf,0,0\n"));

    ws.ok(
        "evaluate --stage restype --probs {d}/pr.mbr --truth {d}/restype.pgm --out-dir {d}/eval2",
    );
    assert!(ws.path("eval2/stage2_truth.ppm").exists());
    assert!(ws.path("eval2/stage2_prediction.ppm").exists());

    ws.ok("estimate --building {d}/pb.mbr --residential {d}/pr.mbr --out {d}/estimate.json");
    let v = ws.json("estimate.json");
    let w = v["report"]["water_gal_per_day"].as_f64().unwrap();
    let parts = v["report"]["residential_share_gal"].as_f64().unwrap()
        + v["report"]["nonresidential_share_gal"].as_f64().unwrap();
    assert!(w > 0.0 && (w - parts).abs() <= 1e-9 * w);
    assert_eq!(v["benchmark"]["entries"].as_array().unwrap().len(), 2);

    ws.ok("cv --image {d}/scene.mbr --mask {d}/building.pgm --model sgd --k 1 --folds 3 --out {d}/cv.json --roc {d}/cv.csv");
    assert_eq!(ws.json("cv.json")["folds"].as_array().unwrap().len(), 3);
}

#[test]
fn replay_detects_changed_outputs() {
    let ws = scene();
    train_sgd(&ws, 1, "m.model");
    let manifest = ws.path("m.model.manifest.json");
    let recorded = RunManifest::load(&manifest).unwrap();
    assert_eq!(recorded.subcommand, "train");
    assert_eq!(recorded.seeds, vec![1]);
    assert_eq!(ws.code("replay {d}/m.model.manifest.json"), 0);

    // The rerun rewrites the model, which no longer matches the bogus digest.
    let mut tampered = recorded.clone();
    tampered.outputs[0].sha256 = "0".repeat(64);
    tampered.save(ws.path("tampered.json")).unwrap();
    assert_eq!(ws.code("replay {d}/tampered.json"), 3);
}

#[test]
fn predict_rejects_mismatched_frame() {
    let ws = scene();
    train_sgd(&ws, 4, "k4.model");
    let out = ws.run("predict --model {d}/k4.model --image {d}/scene.mbr --k 2 --out {d}/p.mbr");
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("648") && err.contains("200"), "{err}");
}

#[test]
fn spilled_features_predict_identically() {
    let ws = scene();
    train_sgd(&ws, 2, "m.model");
    ws.ok("predict --model {d}/m.model --image {d}/scene.mbr --out {d}/a.mbr");
    ws.ok("predict --model {d}/m.model --image {d}/scene.mbr --memory-budget-mb 0 --out {d}/b.mbr");
    let read = |p: &Path| std::fs::read(p).unwrap();
    assert_eq!(read(&ws.path("a.mbr")), read(&ws.path("b.mbr")));
    let m = RunManifest::load(ws.path("b.mbr.manifest.json")).unwrap();
    assert_eq!(m.config["feature_storage"], "disk");
}

#[test]
fn thread_count_does_not_change_models() {
    let ws = scene();
    for t in [1, 3] {
        ws.ok(&format!(
            "--threads {t} train --image {{d}}/scene.mbr --mask {{d}}/building.pgm --model rf --trees 6 --k 1 --out {{d}}/rf{t}.model"
        ));
    }
    assert_eq!(
        std::fs::read(ws.path("rf1.model")).unwrap(),
        std::fs::read(ws.path("rf3.model")).unwrap()
    );
}

#[test]
fn exit_codes() {
    let ws = scene();
    let train = "train --image {d}/scene.mbr --mask {d}/building.pgm --out {d}/x.model";
    assert_eq!(ws.code("frobnicate"), 2);
    assert_eq!(ws.code("--help"), 0);
    assert_eq!(
        ws.code(&format!("{train} --model rf --preset --trees 5")),
        2
    );
    assert_eq!(ws.code(&format!("{train} --model sgd --trees 5")), 2);
    assert_eq!(
        ws.code(&format!("{train} --model rf --stage restype --hog")),
        2
    );
    assert_eq!(
        ws.code(
            "train --image {d}/missing.mbr --mask {d}/building.pgm --model sgd --out {d}/x.model"
        ),
        3
    );
    assert_eq!(
        ws.code(&format!(
            "{train} --model mlp --hidden 4 --k 0 --lr 1e300 --max-iter 5"
        )),
        4
    );
}
