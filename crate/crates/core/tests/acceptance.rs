//! Acceptance suite. Each criterion prints one `PASS` or `FAIL` line; the
//! process exits non-zero when any criterion fails.
//!
//! Every tolerance, budget and scene parameter is pinned in `tol` or `scene`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use aquifer::estimation::{
    benchmark_comparison, water_consumption, ConsumptionRates, PHOENIX_GAL_PER_DAY,
    PORTLAND_GAL_PER_DAY,
};
use aquifer::evaluation::{auc, auc_trapezoid, optimal_threshold, RocCurve, RocPoint};
use aquifer::features::FeatureMatrix;
use aquifer::features::{expand_frame_features, FrameConfig};
use aquifer::learners::{
    decode_model, encode_model, Activation, ClassWeight, LearnerConfig, MaxFeatures, MlpConfig,
    MlpNetwork, RfConfig, SgdConfig, SgdLoss,
};
use aquifer::raster_io::{
    decode_image, decode_mask, encode_annotations, encode_image, encode_mask, parse_annotations,
    AnnotationSet, BuildingClass, Mask, MaskPalette, MultibandImage, Polygon, Ring,
};
use aquifer::rasterize::{rasterize_annotations, rasterize_stage2};
use aquifer::rng::stream_rng;
use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

mod tol {
    use std::time::Duration;

    /// Relative tolerance on each consumption figure.
    pub const CONSUMPTION_REL: f64 = 0.01;
    /// Trapezoidal AUC against the pairwise oracle.
    pub const AUC_ABS: f64 = 1e-12;
    /// Central-difference step and relative error bound.
    pub const FD_STEP: f64 = 1e-5;
    pub const FD_REL: f64 = 1e-4;
    /// Below this magnitude both gradients are treated as zero.
    pub const FD_FLOOR: f64 = 1e-8;
    /// End-to-end thresholds.
    pub const STAGE1_PJ: f64 = 0.90;
    pub const STAGE1_AUC: f64 = 0.98;
    pub const STAGE2_BACC: f64 = 0.95;

    pub const BUDGET_1: Duration = Duration::from_secs(1);
    pub const BUDGET_2: Duration = Duration::from_secs(1);
    pub const BUDGET_3: Duration = Duration::from_secs(10);
    pub const BUDGET_4: Duration = Duration::from_secs(10);
    pub const BUDGET_5: Duration = Duration::from_secs(30);
    pub const BUDGET_6: Duration = Duration::from_secs(30);
    pub const BUDGET_7: Duration = Duration::from_secs(60);
    pub const BUDGET_8: Duration = Duration::from_secs(600);
    pub const BUDGET_9: Duration = Duration::from_secs(600);
    pub const BUDGET_10: Duration = Duration::from_secs(60);
}

mod scene {
    pub const SIZE: usize = 128;
    pub const BANDS: usize = 8;
    pub const NOISE_SIGMA: f64 = 0.05;
    pub const SCENE_SEED: u64 = 2024;
    pub const LEARNER_SEED: u64 = 7;
    pub const FOLDS: usize = 5;
    pub const RF_TREES: usize = 50;
    pub const MLP_HIDDEN: &str = "16,16";
}

const SEED: u64 = 0xACCE;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

// ---------------------------------------------------------------------------
// 1, 2: consumption arithmetic
// ---------------------------------------------------------------------------

const A_R: f64 = 213858.0;
const A_NR: f64 = 16988.0;

fn reference_rates() -> ConsumptionRates {
    ConsumptionRates {
        w_r_gal_per_person_day: 40.0,
        w_nr_gal_per_person_day: 21.0,
        occupancy_ft2_per_person: 750.0,
    }
}

fn criterion_1() -> Outcome {
    let r = water_consumption(A_R, A_NR, &reference_rates()).unwrap();
    let checks = [
        ("residential", r.residential_share_gal, 0.123e6),
        ("non-residential", r.nonresidential_share_gal, 0.005e6),
        ("total", r.water_gal_per_day, 0.128e6),
    ];
    let pass = checks
        .iter()
        .all(|&(_, got, want)| rel(got, want) <= tol::CONSUMPTION_REL);
    let detail = checks
        .iter()
        .map(|(n, got, want)| {
            format!(
                "{n} {got:.1} vs {want:.0} ({:.2}%)",
                100.0 * rel(*got, *want)
            )
        })
        .collect::<Vec<_>>()
        .join(", ");
    outcome(pass, detail)
}

fn criterion_2() -> Outcome {
    let r = water_consumption(A_R, A_NR, &reference_rates()).unwrap();
    let b = benchmark_comparison(&r, 1.0).unwrap();
    let phoenix = &b.entries[0];
    let portland = &b.entries[1];
    let ratio_rule = (portland.ratio - r.water_gal_per_day / PORTLAND_GAL_PER_DAY).abs() == 0.0
        && (phoenix.ratio - r.water_gal_per_day / PHOENIX_GAL_PER_DAY).abs() == 0.0;
    let pass = phoenix.city == "Phoenix"
        && phoenix.within_band
        && portland.city == "Portland"
        && !portland.exact_match
        && ratio_rule;
    outcome(
        pass,
        format!(
            "Phoenix deviation {:.4} (within {}), Portland deviation {:.4} (exact {})",
            phoenix.deviation, phoenix.within_band, portland.deviation, portland.exact_match
        ),
    )
}

// ---------------------------------------------------------------------------
// 3: feature dimension
// ---------------------------------------------------------------------------

fn criterion_3() -> Outcome {
    let mut rng = stream_rng(SEED, 3);
    let mut bad = Vec::new();
    let mut pairs: Vec<(usize, usize)> = vec![(8, 4)];
    while pairs.len() < 50 {
        pairs.push((rng.random_range(1..=8), rng.random_range(0..=4)));
    }
    for &(c, k) in &pairs {
        let side = (2 * k).max(1) + rng.random_range(0..4);
        let data: Vec<f32> = (0..c * side * side).map(|_| rng.random()).collect();
        let img = MultibandImage::new(side, side, c, 1.24, data).unwrap();
        let x = expand_frame_features(&img, &FrameConfig::new(k)).unwrap();
        if x.cols() != c * (2 * k + 1).pow(2) || x.rows() != side * side {
            bad.push((c, k, x.cols()));
        }
    }
    let img = MultibandImage::zeros(9, 9, 8).unwrap();
    let d = expand_frame_features(&img, &FrameConfig::new(4))
        .unwrap()
        .cols();
    outcome(
        bad.is_empty() && d == 648,
        format!("50 pairs, {} mismatches, c=8 k=4 gives {d}", bad.len()),
    )
}

// ---------------------------------------------------------------------------
// 4, 5: ROC and threshold search
// ---------------------------------------------------------------------------

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.random_range(2..=50);
    let coarse = rng.random_bool(0.5);
    let mut y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
    y[0] = true;
    y[1] = false;
    let p = (0..n)
        .map(|_| {
            if coarse {
                rng.random_range(0..=10) as f64 / 10.0
            } else {
                rng.random::<f64>()
            }
        })
        .collect();
    (p, y)
}

fn mann_whitney(p: &[f64], y: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &pi) in p.iter().enumerate() {
        for (j, &pj) in p.iter().enumerate() {
            if y[i] && !y[j] {
                pairs += 1.0;
                wins += if pi > pj {
                    1.0
                } else if pi == pj {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    wins / pairs
}

fn curve(points: &[(f64, f64)]) -> RocCurve {
    RocCurve {
        points: points
            .iter()
            .map(|&(fpr, tpr)| RocPoint {
                threshold: 0.0,
                fpr,
                tpr,
            })
            .collect(),
    }
}

fn criterion_4() -> Outcome {
    let mut rng = stream_rng(SEED, 4);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let (p, y) = random_instance(&mut rng);
        worst = worst.max((auc(&p, &y).unwrap() - mann_whitney(&p, &y)).abs());
    }
    let diag = auc_trapezoid(&curve(&[(0.0, 0.0), (1.0, 1.0)]));
    let perfect = auc_trapezoid(&curve(&[(0.0, 0.0), (0.0, 1.0), (1.0, 1.0)]));
    let three = auc_trapezoid(&curve(&[(0.0, 0.0), (0.5, 1.0), (1.0, 1.0)]));
    let pass = worst <= tol::AUC_ABS && diag == 0.5 && perfect == 1.0 && three == 0.75;
    outcome(
        pass,
        format!("max |AUC - U| = {worst:.2e}; closed forms {diag}, {perfect}, {three}"),
    )
}

fn jaccard_at(p: &[f64], y: &[bool], t: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&pi, &yi) in p.iter().zip(y) {
        match (pi >= t, yi) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let d = tp + fp + fn_;
    if d == 0 {
        0.0
    } else {
        tp as f64 / d as f64
    }
}

fn criterion_5() -> Outcome {
    let mut rng = stream_rng(SEED, 5);
    let mut below_grid = 0;
    let mut below_max = 0;
    let mut grid_ties = 0;
    for _ in 0..200 {
        let (p, y) = random_instance(&mut rng);
        let (t, pj) = optimal_threshold(&p, &y).unwrap();
        let grid = (0..=1000)
            .map(|i| jaccard_at(&p, &y, i as f64 / 1000.0))
            .fold(0.0, f64::max);
        let exhaustive = p
            .iter()
            .map(|&c| jaccard_at(&p, &y, c))
            .fold(grid, f64::max);
        if pj < grid {
            below_grid += 1;
        }
        if pj != exhaustive || jaccard_at(&p, &y, t) != pj {
            below_max += 1;
        }
        if grid == exhaustive && pj == grid {
            grid_ties += 1;
        }
    }
    outcome(
        below_grid == 0 && below_max == 0,
        format!(
            "200 instances, {below_grid} below grid, {below_max} below exhaustive maximum, \
             {grid_ties} equal to a grid maximizer"
        ),
    )
}

// ---------------------------------------------------------------------------
// 6: rasterization
// ---------------------------------------------------------------------------

fn oracle_inside(px: f64, py: f64, polygon: &Polygon) -> bool {
    let area: f64 = {
        let r = &polygon.exterior;
        (0..r.len())
            .map(|i| {
                let (a, b) = (r[i], r[(i + 1) % r.len()]);
                a[0] * b[1] - b[0] * a[1]
            })
            .sum()
    };
    if area == 0.0 {
        return false;
    }
    let mut crossings = 0;
    for ring in polygon.rings() {
        let n = ring.len();
        let mut j = n - 1;
        for i in 0..n {
            let (a, b) = (ring[j], ring[i]);
            if (a[1] <= py) != (b[1] <= py) {
                let x = a[0] + (py - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if px < x {
                    crossings += 1;
                }
            }
            j = i;
        }
    }
    crossings % 2 == 1
}

fn random_coord(rng: &mut ChaCha8Rng, hi: f64, style: u8) -> f64 {
    let v = rng.random_range(-2.0..hi + 2.0);
    match style {
        0 => v.round(),
        1 => v.round() + 0.5,
        _ => v,
    }
}

fn random_ring(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Ring {
    let style = rng.random_range(0..3u8);
    let n = rng.random_range(3..=7);
    (0..n)
        .map(|_| {
            [
                random_coord(rng, w as f64, style),
                random_coord(rng, h as f64, style),
            ]
        })
        .collect()
}

fn random_annotations(rng: &mut ChaCha8Rng, w: usize, h: usize) -> AnnotationSet {
    let n = rng.random_range(1..=5);
    let polygons = (0..n)
        .map(|_| {
            let class = *BuildingClass::ALL.choose(rng).unwrap();
            let mut p = Polygon::new(class, random_ring(rng, w, h));
            if rng.random_bool(0.3) {
                p.holes.push(random_ring(rng, w, h));
            }
            p
        })
        .collect();
    AnnotationSet { polygons }
}

fn criterion_6() -> Outcome {
    let mut rng = stream_rng(SEED, 6);
    let mut mismatched = 0;
    let mut pixels = 0usize;
    for _ in 0..100 {
        let (w, h) = (rng.random_range(1..=24), rng.random_range(1..=24));
        let ann = random_annotations(&mut rng, w, h);
        let binary = rasterize_annotations(&ann, w, h, None).unwrap();
        let stage2 = rasterize_stage2(&ann, w, h).unwrap();
        let mut ok = true;
        for y in 0..h {
            for x in 0..w {
                let c = (x as f64 + 0.5, y as f64 + 0.5);
                let hit = |class: BuildingClass| {
                    ann.polygons
                        .iter()
                        .any(|p| p.class_label == class && oracle_inside(c.0, c.1, p))
                };
                let any = ann.polygons.iter().any(|p| oracle_inside(c.0, c.1, p));
                let want2 = if hit(BuildingClass::NonResidential) {
                    255
                } else if hit(BuildingClass::Residential) {
                    128
                } else {
                    0
                };
                let i = y * w + x;
                ok &= binary.values()[i] == if any { 255 } else { 0 };
                ok &= stage2.values()[i] == want2;
            }
        }
        pixels += w * h;
        if !ok {
            mismatched += 1;
        }
    }
    outcome(
        mismatched == 0,
        format!("100 scenes, {pixels} pixels, {mismatched} scenes differ from the oracle"),
    )
}

// ---------------------------------------------------------------------------
// 7: gradient check
// ---------------------------------------------------------------------------

fn criterion_7() -> Outcome {
    let mut rng = stream_rng(SEED, 7);
    let mut worst = 0.0f64;
    let mut params = 0;
    for net_i in 0..20 {
        let input = rng.random_range(1..=6);
        let depth = rng.random_range(1..=3);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=6)).collect();
        let act = if rng.random_bool(0.5) {
            Activation::Relu
        } else {
            Activation::Tanh
        };
        let n = rng.random_range(1..=12);
        let x: Vec<f64> = (0..n * input)
            .map(|_| rng.random_range(-2.0..2.0))
            .collect();
        let y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let cw = [rng.random_range(0.2..3.0), rng.random_range(0.2..3.0)];
        // Zero initial biases put dead ReLU units exactly on a kink, so the
        // check runs at a random point in parameter space instead.
        let mut net = MlpNetwork::new(input, &hidden, act, net_i);
        let base: Vec<f64> = (0..net.params().len())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        net.set_params(&base);
        let (_, g) = net.loss_and_gradient(&x, &y, cw);
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] = base[i] + tol::FD_STEP;
            net.set_params(&p);
            let up = net.loss_and_gradient(&x, &y, cw).0;
            p[i] = base[i] - tol::FD_STEP;
            net.set_params(&p);
            let down = net.loss_and_gradient(&x, &y, cw).0;
            let num = (up - down) / (2.0 * tol::FD_STEP);
            let scale = g[i].abs().max(num.abs());
            if scale > tol::FD_FLOOR {
                worst = worst.max((g[i] - num).abs() / scale);
            }
        }
        params += base.len();
    }
    outcome(
        worst < tol::FD_REL,
        format!("20 networks, {params} parameters, max relative error {worst:.2e}"),
    )
}

// ---------------------------------------------------------------------------
// 8, 9: end-to-end pipeline through the CLI
// ---------------------------------------------------------------------------

/// Runs one CLI command; `{d}` in `line` stands for the working directory.
fn cli(dir: &Path, line: &str) {
    let d = dir.display().to_string();
    assert!(!d.contains(' '), "work directory must not contain spaces");
    let line = line.replace("{d}", &d);
    let mut argv = vec!["aquifer"];
    argv.extend(line.split_whitespace());
    let code = aquifer::cli::run(argv);
    assert_eq!(code, 0, "aquifer {line} exited with {code}");
}

/// Runs the whole pipeline into `dir` and returns every file it wrote,
/// except wall-clock timing sidecars.
fn run_pipeline(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).unwrap();
    }
    std::fs::create_dir_all(dir).unwrap();
    let scene_cfg = serde_json::json!({
        "width": scene::SIZE,
        "height": scene::SIZE,
        "bands": scene::BANDS,
        "noise_sigma": scene::NOISE_SIGMA,
    });
    std::fs::write(dir.join("scene.json"), scene_cfg.to_string()).unwrap();
    let (seed, folds, trees) = (scene::LEARNER_SEED, scene::FOLDS, scene::RF_TREES);
    let run = |line: String| cli(dir, &line);

    run(format!(
        "synth --config {{d}}/scene.json --seed {} --out-image {{d}}/scene.mbr \
         --out-annotations {{d}}/annotations.json",
        scene::SCENE_SEED
    ));
    run(
        "rasterize --annotations {d}/annotations.json --image {d}/scene.mbr \
         --out {d}/building.pgm"
            .into(),
    );
    run(
        "rasterize --annotations {d}/annotations.json --image {d}/scene.mbr --stage2 \
         --out {d}/restype.pgm"
            .into(),
    );
    let learners = [
        ("rf", format!("--model rf --trees {trees}")),
        ("mlp", format!("--model mlp --hidden {}", scene::MLP_HIDDEN)),
        ("sgd", "--model sgd".to_string()),
    ];
    for (name, flags) in &learners {
        run(format!(
            "cv --image {{d}}/scene.mbr --mask {{d}}/building.pgm --folds {folds} --seed {seed} \
             --out {{d}}/cv_building_{name}.json --roc {{d}}/cv_building_{name}.roc.csv {flags}"
        ));
    }
    run(format!(
        "cv --stage restype --image {{d}}/scene.mbr --mask {{d}}/restype.pgm --model rf \
         --trees {trees} --folds {folds} --seed {seed} --out {{d}}/cv_restype_rf.json"
    ));
    for (stage, mask) in [("building", "building"), ("restype", "restype")] {
        run(format!(
            "train --stage {stage} --image {{d}}/scene.mbr --mask {{d}}/{mask}.pgm --model rf \
             --trees {trees} --seed {seed} --out {{d}}/{stage}.model"
        ));
    }
    run("predict --model {d}/building.model --image {d}/scene.mbr --out {d}/p_building.mbr".into());
    run(
        "predict --model {d}/restype.model --image {d}/scene.mbr --out {d}/p_residential.mbr"
            .into(),
    );
    run(
        "evaluate --probs {d}/p_building.mbr --truth {d}/building.pgm \
         --out-dir {d}/eval_building"
            .into(),
    );
    run(
        "evaluate --stage restype --probs {d}/p_residential.mbr --truth {d}/restype.pgm \
         --out-dir {d}/eval_restype"
            .into(),
    );
    run(
        "estimate --building {d}/p_building.mbr --residential {d}/p_residential.mbr \
         --out {d}/estimate.json"
            .into(),
    );

    let mut files = BTreeMap::new();
    for entry in walk(dir) {
        let name = entry.strip_prefix(dir).unwrap().display().to_string();
        if !name.ends_with(".timing.json") {
            files.insert(name, std::fs::read(&entry).unwrap());
        }
    }
    files
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

fn mean_metric(files: &BTreeMap<String, Vec<u8>>, name: &str, key: &str) -> f64 {
    let v: Value = serde_json::from_slice(&files[name]).unwrap();
    v["mean"][key].as_f64().unwrap()
}

fn criterion_8(files: &BTreeMap<String, Vec<u8>>) -> Outcome {
    let pj = |m: &str| mean_metric(files, &format!("cv_building_{m}.json"), "pixel_jaccard");
    let auc = |m: &str| mean_metric(files, &format!("cv_building_{m}.json"), "auc");
    let (rf_pj, mlp_pj, sgd_pj) = (pj("rf"), pj("mlp"), pj("sgd"));
    let (rf_auc, mlp_auc) = (auc("rf"), auc("mlp"));
    let bacc = mean_metric(files, "cv_restype_rf.json", "balanced_accuracy");
    let pass = rf_pj >= tol::STAGE1_PJ
        && mlp_pj >= tol::STAGE1_PJ
        && rf_auc >= tol::STAGE1_AUC
        && mlp_auc >= tol::STAGE1_AUC
        && bacc >= tol::STAGE2_BACC
        && sgd_pj <= rf_pj
        && sgd_pj <= mlp_pj;
    outcome(
        pass,
        format!(
            "P_J rf {rf_pj:.4} mlp {mlp_pj:.4} sgd {sgd_pj:.4}; AUC rf {rf_auc:.4} \
             mlp {mlp_auc:.4}; stage-2 balanced accuracy {bacc:.4}"
        ),
    )
}

fn criterion_9(first: &BTreeMap<String, Vec<u8>>, dir: &Path) -> Outcome {
    let second = run_pipeline(dir);
    let differing: Vec<&String> = first
        .keys()
        .chain(second.keys())
        .filter(|k| first.get(*k) != second.get(*k))
        .collect();
    let kinds = [
        "manifest.json",
        ".model",
        ".pgm",
        "metrics.json",
        "estimate.json",
    ];
    let covered = kinds
        .iter()
        .all(|k| first.keys().any(|name| name.ends_with(k)));
    outcome(
        differing.is_empty() && covered,
        format!(
            "{} files compared, {} differ{}",
            first.len(),
            differing.len(),
            if differing.is_empty() {
                String::new()
            } else {
                format!(": {differing:?}")
            }
        ),
    )
}

// ---------------------------------------------------------------------------
// 10: format round-trips
// ---------------------------------------------------------------------------

fn random_image(rng: &mut ChaCha8Rng) -> MultibandImage {
    let (w, h, b) = (
        rng.random_range(1..=12),
        rng.random_range(1..=12),
        rng.random_range(1..=8),
    );
    let data = (0..w * h * b)
        .map(|_| loop {
            let v = f32::from_bits(rng.random());
            if v.is_finite() {
                break v;
            }
        })
        .collect();
    let pixel = rng.random_range(0.01..100.0);
    MultibandImage::new(w, h, b, pixel, data).unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng) -> Mask {
    let (w, h) = (rng.random_range(1..=40), rng.random_range(1..=40));
    let (palette, values): (MaskPalette, &[u8]) = if rng.random_bool(0.5) {
        (MaskPalette::Binary, &[0, 255])
    } else {
        (MaskPalette::Stage2, &[0, 128, 255])
    };
    let v = (0..w * h).map(|_| *values.choose(rng).unwrap()).collect();
    Mask::new(w, h, palette, v).unwrap()
}

fn random_learner(rng: &mut ChaCha8Rng, seed: u64) -> LearnerConfig {
    let cw = if rng.random_bool(0.5) {
        ClassWeight::Balanced
    } else {
        ClassWeight::None
    };
    match rng.random_range(0..3) {
        0 => LearnerConfig::Sgd(SgdConfig {
            loss: if rng.random_bool(0.5) {
                SgdLoss::Logistic
            } else {
                SgdLoss::ModifiedHuber
            },
            class_weight: cw,
            epochs: rng.random_range(1..=3),
            l2_alpha: rng.random_range(1e-5..1e-2),
            seed,
            ..SgdConfig::default()
        }),
        1 => LearnerConfig::Rf(RfConfig {
            n_estimators: rng.random_range(1..=4),
            max_depth: rng.random_range(1..=6),
            class_weight: cw,
            features_per_split: MaxFeatures::Sqrt,
            bootstrap: rng.random_bool(0.5),
            seed,
            ..RfConfig::default()
        }),
        _ => LearnerConfig::Mlp(MlpConfig {
            hidden_layer_sizes: (0..rng.random_range(1..=2))
                .map(|_| rng.random_range(1..=5))
                .collect(),
            max_iter: rng.random_range(1..=3),
            batch_size: 8,
            class_weight: cw,
            seed,
            ..MlpConfig::default()
        }),
    }
}

fn criterion_10() -> Outcome {
    let mut rng = stream_rng(SEED, 10);
    let mut failures: BTreeMap<&str, usize> = BTreeMap::new();
    let mut fail = |kind: &'static str| *failures.entry(kind).or_default() += 1;
    for i in 0..1000u64 {
        let img = random_image(&mut rng);
        let bytes = encode_image(&img);
        let back = decode_image(&bytes).unwrap();
        let same_bits = back
            .data()
            .iter()
            .zip(img.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if !same_bits
            || back.pixel_size_m().to_bits() != img.pixel_size_m().to_bits()
            || encode_image(&back) != bytes
        {
            fail("mbr");
        }

        let mask = random_mask(&mut rng);
        let bytes = encode_mask(&mask);
        let back = decode_mask(&bytes).unwrap();
        if back.values() != mask.values() || encode_mask(&back) != bytes {
            fail("pgm");
        }

        let ann = random_annotations(&mut rng, 30, 30);
        let bytes = encode_annotations(&ann).unwrap();
        let back = parse_annotations(std::str::from_utf8(&bytes).unwrap()).unwrap();
        if back != ann || encode_annotations(&back).unwrap() != bytes {
            fail("annotations");
        }

        let n = rng.random_range(4..=24);
        let d = rng.random_range(1..=5);
        let rows: Vec<Vec<f32>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let mut y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        y[0] = true;
        y[1] = false;
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let model = random_learner(&mut rng, i).fit(&x, &y).unwrap();
        let bytes = encode_model(&model).unwrap();
        let back = decode_model(&bytes).unwrap();
        if back != model || encode_model(&back).unwrap() != bytes {
            fail("model");
        }
    }
    outcome(
        failures.is_empty(),
        format!("1000 rounds of MBR, PGM, annotation and model; failures {failures:?}"),
    )
}

// ---------------------------------------------------------------------------

fn record(id: usize, name: &str, budget: Duration, check: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let o = check();
    let elapsed = start.elapsed();
    let pass = o.pass && elapsed <= budget;
    println!(
        "criterion {id:>2} {name}: {} ({}; {:.2}s of {}s budget)",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    pass
}

fn main() {
    let work = tempfile::tempdir().unwrap();
    let pipeline_dir = work.path().join("pipeline");
    let mut first_run = BTreeMap::new();

    let results = [
        record(1, "consumption arithmetic", tol::BUDGET_1, criterion_1),
        record(2, "benchmark band", tol::BUDGET_2, criterion_2),
        record(3, "feature dimension", tol::BUDGET_3, criterion_3),
        record(4, "AUC correctness", tol::BUDGET_4, criterion_4),
        record(5, "threshold sweep", tol::BUDGET_5, criterion_5),
        record(6, "rasterization oracle", tol::BUDGET_6, criterion_6),
        record(7, "MLP gradient check", tol::BUDGET_7, criterion_7),
        record(8, "synthetic pipeline", tol::BUDGET_8, || {
            first_run = run_pipeline(&pipeline_dir);
            criterion_8(&first_run)
        }),
        record(9, "determinism", tol::BUDGET_9, || {
            criterion_9(&first_run, &pipeline_dir)
        }),
        record(10, "format round-trips", tol::BUDGET_10, criterion_10),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed} of {} criteria passed", results.len());
    if passed < results.len() {
        std::process::exit(1);
    }
}
