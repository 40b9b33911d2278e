//! Acceptance suite: one PASS/FAIL line per criterion. Runs every criterion
//! even after a failure and exits non-zero if any failed.
//!
//! `cargo test -p nakascan-tool --test acceptance`

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nakascan_core::classifier::{
    confusion_at, roc_auc, stratified_kfold_scores, threshold_candidates, tune_threshold, ThresholdPolicy, ThresholdRow,
};
use nakascan_core::fractal::{
    default_box_sizes, default_radii, default_rulers, fd_hausdorff, fd_kolmogorov, fd_minkowski, log_spaced,
    quadratic_koch, Curve,
};
use nakascan_core::geometry::Point;
use nakascan_core::imaging::{generate_maps, generate_maps_reference, plan_for_grid, plan_windows};
use nakascan_core::model::{Dataset, EnvelopeImage, Label, MapKind};
use nakascan_core::morpho::{contour_metrics, morphometric_features, shape_ratios};
use nakascan_core::nakagami::{derive_alpha_set, estimate_nakagami, NakagamiParams};
use nakascan_core::phantom::{read_manifest, sample_nakagami_envelope, ContourShape};
use nakascan_core::pipeline::load_envelope_input;
use nakascan_core::regional::glcm_contrast;
use nakascan_core::selection::rfecv_select;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use tempfile::TempDir;

type Outcome = (bool, String);

/// Runs the command-line entry point in-process.
fn nakascan(args: &[&str]) -> Result<(), String> {
    let argv = std::iter::once("nakascan").chain(args.iter().copied());
    if nakascan_cli::main_with_args(argv) == ExitCode::SUCCESS {
        Ok(())
    } else {
        Err(format!("nakascan {args:?} failed"))
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs()
}

/// Default phantom cohort plus two CLI runs over it: the three-window sweep
/// and a repeated 0.75 mm run.
struct Fixture {
    _tmp: TempDir,
    cohort: PathBuf,
    sweep: PathBuf,
    repeat: PathBuf,
    /// Phantom generation plus the single-window run.
    single_run: Duration,
    error: Option<String>,
}

impl Fixture {
    fn build() -> Fixture {
        let tmp = TempDir::new().unwrap();
        let cohort = tmp.path().join("cohort");
        let sweep = tmp.path().join("sweep");
        let repeat = tmp.path().join("repeat");
        let start = Instant::now();
        let mut error = nakascan(&["phantom", "--out", s(&cohort)]).err();
        let mut single_run = Duration::ZERO;
        if error.is_none() {
            error = nakascan(&["run", "--cohort", s(&cohort), "--out", s(&repeat), "--window", "0.75"]).err();
            single_run = start.elapsed();
        }
        if error.is_none() {
            error = nakascan(&["run", "--cohort", s(&cohort), "--out", s(&sweep), "--window", "0.1875,0.45,0.75"]).err();
        }
        Fixture {
            _tmp: tmp,
            cohort,
            sweep,
            repeat,
            single_run,
            error,
        }
    }
}

fn estimator_consistency() -> Outcome {
    let start = Instant::now();
    let mut ok = true;
    let mut detail = Vec::new();
    for (k, m) in [0.6, 1.0, 3.0].into_iter().enumerate() {
        let truth = NakagamiParams::new(m, 1.0).unwrap();
        let hits = (0..200u64)
            .filter(|&t| {
                let p = estimate_nakagami(&sample_nakagami_envelope(truth, 10_000, 1000 * k as u64 + t)).unwrap();
                rel_close(p.m, m, 0.05) && rel_close(p.omega, 1.0, 0.02)
            })
            .count();
        ok &= hits >= 190;
        detail.push(format!("m={m}: {hits}/200"));
    }
    let secs = start.elapsed().as_secs_f64();
    ok &= secs < 10.0;
    (ok, format!("{} (need >=190 each), {secs:.2} s (need <10 s)", detail.join(", ")))
}

fn rayleigh_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let r: Vec<f64> = (0..100_000)
        .map(|_| {
            let i: f64 = StandardNormal.sample(&mut rng);
            let q: f64 = StandardNormal.sample(&mut rng);
            i.hypot(q)
        })
        .collect();
    let m = estimate_nakagami(&r).unwrap().m;
    ((0.97..=1.03).contains(&m), format!("m = {m:.5} (need [0.97, 1.03])"))
}

fn derived_maps_consistent(fx: &Fixture) -> Outcome {
    let manifest = match read_manifest(&fx.cohort) {
        Ok(m) => m,
        Err(e) => return (false, e.to_string()),
    };
    let mut pixels = 0usize;
    let mut mismatches = 0usize;
    for mass in &manifest.masses {
        let env = load_envelope_input(&mass.image_path(&fx.cohort)).unwrap();
        let maps = generate_maps(&env, &plan_windows(&env, 0.75).unwrap()).unwrap();
        let m = maps.get(MapKind::M).values();
        let omega = maps.get(MapKind::Omega).values();
        for ((r, c), &mv) in m.indexed_iter() {
            let a = derive_alpha_set(NakagamiParams { m: mv, omega: omega[[r, c]] });
            let expect = [
                (MapKind::PreAlpha, a.pre_alpha),
                (MapKind::AlphaAbs, a.alpha_abs),
                (MapKind::AlphaPhase, a.alpha_phase),
                (MapKind::AlphaReal, a.alpha_real),
                (MapKind::AlphaImag, a.alpha_imag),
            ];
            pixels += 1;
            if expect.iter().any(|&(k, v)| maps.get(k).values()[[r, c]].to_bits() != v.to_bits()) {
                mismatches += 1;
            }
        }
    }
    (
        mismatches == 0,
        format!("{mismatches} mismatching pixels of {pixels} over {} masses at 0.75 mm", manifest.masses.len()),
    )
}

fn speckle(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let v = sample_nakagami_envelope(NakagamiParams::new(0.8, 1.0).unwrap(), rows * cols, seed);
    Array2::from_shape_vec((rows, cols), v).unwrap()
}

fn max_rel_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| if x == y { 0.0 } else { (x - y).abs() / x.abs().max(y.abs()) })
        .fold(0.0, f64::max)
}

fn sliding_window_oracle() -> Outcome {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let env = EnvelopeImage::new(speckle(40, 40, seed), 0.1, 0.1).unwrap();
        let plan = plan_for_grid((40, 40), (0.1, 0.1), 0.6).unwrap();
        assert_eq!(plan.window_px, (6, 6));
        let fast = generate_maps(&env, &plan).unwrap();
        let slow = generate_maps_reference(&env, &plan).unwrap();
        for (f, r) in fast.images.iter().zip(&slow.images) {
            worst = worst.max(max_rel_diff(f.values(), r.values()));
        }
    }
    let env = EnvelopeImage::new(speckle(2000, 256, 99), 0.0385, 0.075).unwrap();
    let plan = plan_windows(&env, 0.75).unwrap();
    let t = Instant::now();
    generate_maps_reference(&env, &plan).unwrap();
    let slow = t.elapsed().as_secs_f64();
    let fast = (0..3)
        .map(|_| {
            let t = Instant::now();
            generate_maps(&env, &plan).unwrap();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min);
    let speedup = slow / fast;
    (
        worst <= 1e-10 && speedup >= 5.0,
        format!(
            "max relative difference {worst:e} (need <=1e-10); {}x{} window on 2000x256: {speedup:.1}x faster (need >=5x)",
            plan.window_px.0, plan.window_px.1
        ),
    )
}

fn morphometric_known_answers() -> Outcome {
    let circle = ContourShape::Ellipse { semi_x: 5.0, semi_y: 5.0 }
        .polygon(Point::new(10.0, 10.0), 720)
        .unwrap();
    let r = shape_ratios(&contour_metrics(&circle).unwrap()).unwrap();
    let checks = [
        ("roundness", r.roundness, PI / 4.0),
        ("compactness", r.compactness, PI.sqrt() / 2.0),
        ("form factor", r.form_factor, 1.0 / (4.0 * PI)),
        ("aspect", r.aspect_ratio, 1.0),
        ("convexity", r.convexity, 1.0),
        ("solidity", r.solidity, 1.0),
    ];
    let bad: Vec<String> = checks
        .iter()
        .filter(|(_, got, want)| !rel_close(*got, *want, 0.01))
        .map(|(n, got, want)| format!("{n} {got} vs {want}"))
        .collect();
    let ellipse = ContourShape::Ellipse { semi_x: 4.0, semi_y: 2.0 }
        .polygon(Point::new(10.0, 10.0), 720)
        .unwrap();
    let aspect = shape_ratios(&contour_metrics(&ellipse).unwrap()).unwrap().aspect_ratio;
    (
        bad.is_empty() && aspect == 0.5,
        format!(
            "circle ratios within 1%: {}; ellipse a = 2b aspect = {aspect}",
            if bad.is_empty() { "all".to_string() } else { bad.join("; ") }
        ),
    )
}

fn three_fds(c: &Curve) -> [f64; 3] {
    let d = c.max_diameter();
    [
        fd_kolmogorov(c, &default_box_sizes(d)).unwrap(),
        fd_minkowski(c, &default_radii(d)).unwrap(),
        fd_hausdorff(c, &default_rulers(d)).unwrap(),
    ]
}

fn fractal_oracles() -> Outcome {
    let segment = Curve::open(vec![Point::new(0.3, 0.1), Point::new(7.3, 4.6)]).unwrap();
    let circle = Curve::from(
        &ContourShape::Ellipse { semi_x: 5.0, semi_y: 5.0 }
            .polygon(Point::new(10.0, 10.0), 720)
            .unwrap(),
    );
    let seg = three_fds(&segment);
    let circ = three_fds(&circle);
    let mut ok = seg.iter().chain(&circ).all(|d| (d - 1.0).abs() <= 0.1);

    // Ladders over the generator's self-similar range.
    let len = 9.0;
    let koch = Curve::open(quadratic_koch(Point::new(0.0, 0.0), Point::new(len, 0.0), 4)).unwrap();
    let kfd = [
        fd_kolmogorov(&koch, &log_spaced(len / 3.0, len / 81.0, 8)).unwrap(),
        fd_minkowski(&koch, &log_spaced(len / 243.0, len / 27.0, 6)).unwrap(),
        fd_hausdorff(&koch, &log_spaced(len / 3.0, len / 81.0, 6)).unwrap(),
    ];
    ok &= kfd.iter().all(|d| (d - 1.465).abs() <= 0.12);

    let stars: Vec<[f64; 9]> = [0.0, 0.075, 0.15, 0.225, 0.3]
        .iter()
        .map(|&amplitude| {
            let p = ContourShape::Star { radius: 5.0, spikes: 12, amplitude }
                .polygon(Point::new(20.0, 20.0), 720)
                .unwrap();
            morphometric_features(&p).unwrap()
        })
        .collect();
    // Feature order: convexity at 3, the three dimensions at 6..9.
    let monotone = stars
        .windows(2)
        .all(|w| w[1][3] < w[0][3] && (6..9).all(|k| w[1][k] >= w[0][k]));
    ok &= monotone;
    let fmt = |v: &[f64; 3]| format!("{:.3}/{:.3}/{:.3}", v[0], v[1], v[2]);
    (
        ok,
        format!(
            "box/minkowski/divider: segment {}, circle {} (need 1 +- 0.1); koch {} (need 1.465 +- 0.12); star family monotone: {monotone}",
            fmt(&seg),
            fmt(&circ),
            fmt(&kfd)
        ),
    )
}

/// Full 64x64 symmetric co-occurrence matrix at offset (0, 1), then contrast.
fn brute_force_contrast(img: &Array2<f64>) -> f64 {
    let lo = img.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = img.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let level = |v: f64| {
        if hi > lo {
            (((v - lo) / (hi - lo) * 64.0).floor() as usize).min(63)
        } else {
            0
        }
    };
    let mut glcm = [[0u64; 64]; 64];
    let (rows, cols) = img.dim();
    for r in 0..rows {
        for c in 0..cols - 1 {
            let (i, j) = (level(img[[r, c]]), level(img[[r, c + 1]]));
            glcm[i][j] += 1;
            glcm[j][i] += 1;
        }
    }
    let total: u64 = glcm.iter().flatten().sum();
    let mut num = 0u64;
    for (i, row) in glcm.iter().enumerate() {
        for (j, &n) in row.iter().enumerate() {
            num += (i.abs_diff(j) * i.abs_diff(j)) as u64 * n;
        }
    }
    num as f64 / total as f64
}

fn glcm_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut matches = 0;
    for _ in 0..50 {
        let img = Array2::from_shape_fn((8, 8), |_| rng.random_range(0.0..10.0));
        if glcm_contrast(img.view()).unwrap() == brute_force_contrast(&img) {
            matches += 1;
        }
    }
    let constant = glcm_contrast(Array2::from_elem((8, 8), 3.5).view()).unwrap();
    (
        matches == 50 && constant == 0.0,
        format!("{matches}/50 exact matches; constant image contrast {constant}"),
    )
}

fn planted_cohort(seed: u64, informative: usize, noise: usize, shift: f64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let labels: Vec<Label> = (0..130).map(|i| if i < 26 { Label::Malignant } else { Label::Benign }).collect();
    let p = informative + noise;
    let x = Array2::from_shape_fn((130, p), |(i, j)| {
        let z: f64 = StandardNormal.sample(&mut rng);
        if j < informative && i < 26 { z + shift } else { z }
    });
    let names = (0..p)
        .map(|j| if j < informative { format!("signal{j}") } else { format!("noise{j}") })
        .collect();
    Dataset::new(names, x, labels).unwrap()
}

fn rfecv_recovery() -> Outcome {
    let start = Instant::now();
    let found: Vec<usize> = (0..10)
        .map(|seed| {
            let sel = rfecv_select(&planted_cohort(seed, 5, 67, 1.0), 5, seed, 1.0).unwrap();
            sel.selected.iter().filter(|n| n.starts_with("signal")).count()
        })
        .collect();
    let hits = found.iter().filter(|&&f| f >= 4).count();
    let secs = start.elapsed().as_secs_f64();
    (
        hits >= 9 && secs < 120.0,
        format!("{hits}/10 seeds kept >=4 of 5 informative (found {found:?}; need >=9), {secs:.1} s (need <120 s)"),
    )
}

fn u_statistic(scores: &[f64], labels: &[Label]) -> f64 {
    let (mut sum, mut pairs) = (0.0, 0.0);
    for (i, li) in labels.iter().enumerate() {
        for (j, lj) in labels.iter().enumerate() {
            if li.is_positive() && !lj.is_positive() {
                pairs += 1.0;
                sum += if scores[i] > scores[j] {
                    1.0
                } else if scores[i] == scores[j] {
                    0.5
                } else {
                    0.0
                };
            }
        }
    }
    sum / pairs
}

fn auc_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let n = rng.random_range(4..80);
        let mut labels: Vec<Label> = (0..n)
            .map(|_| if rng.random_bool(0.3) { Label::Malignant } else { Label::Benign })
            .collect();
        labels[0] = Label::Malignant;
        labels[1] = Label::Benign;
        // Coarse scores so ties are common.
        let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0.0..1.0f64) * 12.0).round() / 4.0).collect();
        worst = worst.max((roc_auc(&scores, &labels).unwrap().auc - u_statistic(&scores, &labels)).abs());
    }
    let labels = [Label::Malignant, Label::Malignant, Label::Benign, Label::Benign, Label::Benign];
    let separable = roc_auc(&[3.0, 2.5, 1.0, 0.0, -1.0], &labels).unwrap().auc;
    let ties = roc_auc(&[0.4; 5], &labels).unwrap().auc;
    (
        worst <= 1e-12 && separable == 1.0 && ties == 0.5,
        format!("max |trapezoid - U| = {worst:e} over 200 sets (need <=1e-12); separable {separable}; all ties {ties}"),
    )
}

fn identities_hold(r: &ThresholdRow, pos: usize, neg: usize) -> bool {
    r.tp + r.fn_ == pos
        && r.tn + r.fp == neg
        && r.sensitivity == r.tp as f64 / pos as f64
        && r.specificity == r.tn as f64 / neg as f64
        && r.accuracy == (r.tp + r.tn) as f64 / (pos + neg) as f64
}

fn threshold_contract() -> Outcome {
    let data = planted_cohort(3, 3, 5, 1.5);
    let scores = stratified_kfold_scores(&data, 5, 0, 1.0).unwrap();
    let report = tune_threshold(&scores, &data.labels, ThresholdPolicy::ZeroFnMaxAccuracy).unwrap();
    let chosen = report.chosen_row();
    let (pos, neg) = (26, 104);
    let all: Vec<ThresholdRow> = threshold_candidates(&scores)
        .into_iter()
        .map(|t| confusion_at(&scores, &data.labels, t))
        .collect();
    let best_zero_fn = all.iter().filter(|r| r.fn_ == 0).all(|r| chosen.accuracy >= r.accuracy);
    let identities = report.rows.iter().chain(&all).all(|r| identities_hold(r, pos, neg));
    (
        chosen.fn_ == 0 && best_zero_fn && identities,
        format!(
            "chosen threshold {:.6}: FN {}, accuracy {:.4}, specificity {:.4}; best among FN=0 rows: {best_zero_fn}; identities on {} rows: {identities}",
            chosen.threshold,
            chosen.fn_,
            chosen.accuracy,
            chosen.specificity,
            report.rows.len() + all.len()
        ),
    )
}

fn read_json(path: &Path) -> Result<serde_json::Value, String> {
    let bytes = fs::read(path).map_err(|e| format!("{}: {e}", path.display()))?;
    serde_json::from_slice(&bytes).map_err(|e| e.to_string())
}

fn end_to_end(fx: &Fixture) -> Outcome {
    if let Some(e) = &fx.error {
        return (false, e.clone());
    }
    let a = fs::read(fx.repeat.join("window_0.75mm/report.json")).unwrap_or_default();
    let b = fs::read(fx.sweep.join("window_0.75mm/report.json")).unwrap_or_default();
    let identical = !a.is_empty() && a == b;
    let report = match read_json(&fx.repeat.join("window_0.75mm/report.json")) {
        Ok(v) => v,
        Err(e) => return (false, e),
    };
    let schema: serde_json::Value = serde_json::from_str(include_str!("../../../docs/report.schema.json")).unwrap();
    let schema_ok = jsonschema::validator_for(&schema).map(|v| v.is_valid(&report)).unwrap_or(false);
    let auc = report["auc"].as_f64().unwrap_or(f64::NAN);
    let op = &report["operating_point"];
    let fn_ = op["FN"].as_u64().unwrap_or(u64::MAX);
    let spec = op["specificity"].as_f64().unwrap_or(f64::NAN);
    let secs = fx.single_run.as_secs_f64();
    let n = report["n_samples"].as_u64().unwrap_or(0);
    (
        n == 130 && auc >= 0.90 && fn_ == 0 && spec >= 0.80 && secs < 600.0 && identical && schema_ok,
        format!(
            "{n} masses, AUC {auc:.4} (need >=0.90), operating point FN {fn_} specificity {spec:.4} (need 0, >=0.80), \
             {secs:.1} s (need <600 s), repeated report.json identical: {identical}, schema valid: {schema_ok}"
        ),
    )
}

fn window_sweep(fx: &Fixture) -> Outcome {
    if let Some(e) = &fx.error {
        return (false, e.clone());
    }
    let text = fs::read_to_string(fx.sweep.join("sweep.csv")).unwrap_or_default();
    let mut rows = Vec::new();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let parse = |i: usize| f.get(i).and_then(|v| v.parse::<f64>().ok());
        if let (Some(w), Some(auc), Some(acc)) = (parse(0), parse(1), parse(2)) {
            rows.push((w, auc, acc));
        }
    }
    let windows: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let valid = rows.iter().all(|&(_, a, c)| (0.0..=1.0).contains(&a) && (0.0..=1.0).contains(&c));
    let shown: Vec<String> = rows.iter().map(|(w, a, c)| format!("{w} mm: AUC {a:.4} acc {c:.4}")).collect();
    (
        windows == [0.1875, 0.45, 0.75] && valid,
        format!("{}", if shown.is_empty() { "no rows".into() } else { shown.join("; ") }),
    )
}

fn main() {
    // Let `cargo test -- --list` and name filters through without running the suite.
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    println!("building the default phantom cohort and running the CLI over it...");
    let fixture = Fixture::build();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("estimator consistency", Box::new(estimator_consistency)),
        ("Rayleigh identity", Box::new(rayleigh_identity)),
        ("derived-map consistency", Box::new(|| derived_maps_consistent(&fixture))),
        ("sliding-window oracle", Box::new(sliding_window_oracle)),
        ("morphometric known answers", Box::new(morphometric_known_answers)),
        ("fractal oracles", Box::new(fractal_oracles)),
        ("co-occurrence contrast oracle", Box::new(glcm_oracle)),
        ("RFE-CV recovery", Box::new(rfecv_recovery)),
        ("AUC correctness", Box::new(auc_correctness)),
        ("threshold-tuning contract", Box::new(threshold_contract)),
        ("end-to-end phantom pipeline", Box::new(|| end_to_end(&fixture))),
        ("window sweep", Box::new(|| window_sweep(&fixture))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (ok, detail) = check();
        failed += usize::from(!ok);
        println!("criterion {:>2} {} {name}: {detail}", i + 1, if ok { "PASS" } else { "FAIL" });
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
