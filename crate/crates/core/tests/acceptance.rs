//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for
//! each, and exits non-zero if any failed.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use gridpv_core::classify::{LrSolver, lr_gradient, lr_objective, lr_solve, model_from_bytes, model_to_bytes};
use gridpv_core::encoding::{
    Codebook, GmmModel, GmmParams, KMeansParams, Normalization, Provenance, fv_raw, gmm_fit, kmeans_fit,
    load_codebook, save_codebook, vlad_encode,
};
use gridpv_core::config::Config;
use gridpv_core::eval::{round2, weighted_f1};
use gridpv_core::features::{LocalFeatureSet, load_features, save_features};
use gridpv_core::geodata::{Affine, CityDataset, RooftopImage};
use gridpv_core::image::{Image, Mask};
use gridpv_core::matrix::Matrix;
use gridpv_core::phases::{
    Approach, ComparisonReport, Pipeline, PipelineConfig, PipelineReport, load_registry, run_pipeline,
    save_registry,
};
use gridpv_core::synthcity::{AugKind, AugmentationOp, augment, default_benchmark, generate_city};
use gridpv_core::tiler::{lattice_dims, tile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if ok { Ok(()) } else { Err(what()) }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let scale: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(a.iter().map(|x| x * x).sum::<f64>().sqrt());
    if scale < 1e-12 { diff } else { diff / scale }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, spread: f64) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-spread..spread)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

fn local(vectors: Matrix) -> LocalFeatureSet {
    LocalFeatureSet {
        rooftop_id: "r".into(),
        city_id: "c".into(),
        vectors,
        label: None,
    }
}

// Published per-city and global F1 and the weighted score reported for the same run.
fn criterion_1() -> Outcome {
    let rows: [(&[(&str, f64)], f64, f64); 3] = [
        (&[("rcp", 1.00), ("chakan", 0.94)], 0.96, 0.97),
        (&[("rcp", 0.91), ("chakan", 0.98), ("pune", 0.89)], 0.92, 0.92),
        (&[("rcp", 1.0), ("chakan", 0.88), ("pune", 0.88)], 0.89, 0.91),
    ];
    let mut got = Vec::new();
    for (cities, global, target) in rows {
        let per_city: BTreeMap<String, f64> = cities.iter().map(|(c, v)| (c.to_string(), *v)).collect();
        let w = weighted_f1(&per_city, global, 0.5).map_err(err)?;
        ensure(round2(w) == target, || format!("{w} rounds to {}, expected {target}", round2(w)))?;
        ensure((w - target).abs() <= 0.005 + 1e-12, || format!("{w} is not within 0.005 of {target}"))?;
        got.push(format!("{w:.4}->{:.2}", round2(w)));
    }
    Ok(got.join(", "))
}

/// Brute-force VLAD: nearest centroid by full scan, residual sums, signed
/// square root, then L2.
fn vlad_oracle(centroids: &Matrix, x: &Matrix) -> Vec<f64> {
    let (k, d) = (centroids.rows(), centroids.cols());
    let mut v = vec![0.0; k * d];
    for i in 0..x.rows() {
        let row = x.row(i);
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for c in 0..k {
            let dist: f64 = (0..d).map(|j| (row[j] - centroids.row(c)[j]).powi(2)).sum();
            if dist < best_dist {
                best_dist = dist;
                best = c;
            }
        }
        for j in 0..d {
            v[best * d + j] += row[j] - centroids.row(best)[j];
        }
    }
    for e in v.iter_mut() {
        *e = e.signum() * e.abs().sqrt();
    }
    let norm = v.iter().map(|e| e * e).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|e| *e /= norm);
    }
    v
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    let cases = 200;
    for _ in 0..cases {
        let k = rng.random_range(1..=4);
        let d = rng.random_range(2..=8);
        let n = rng.random_range(1..=50);
        let cb = Codebook {
            centroids: random_matrix(&mut rng, k, d, 2.0),
            seed: 0,
            inertia: 0.0,
            provenance: Provenance::default(),
        };
        let x = random_matrix(&mut rng, n, d, 3.0);
        let fast = vlad_encode(&cb, &local(x.clone()), Normalization::default()).map_err(err)?.values;
        let slow = vlad_oracle(&cb.centroids, &x);
        let diff = fast.iter().zip(&slow).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        worst = worst.max(diff);
    }
    ensure(worst <= 1e-9, || format!("max abs difference {worst:e}"))?;
    Ok(format!("{cases} instances, max abs difference {worst:.1e}"))
}

/// Average log-likelihood of `x` under a diagonal GMM given by `sigma` (standard deviations).
fn avg_loglik(weights: &[f64], mu: &[f64], sigma: &[f64], d: usize, x: &Matrix) -> f64 {
    let k = weights.len();
    let mut total = 0.0;
    for i in 0..x.rows() {
        let row = x.row(i);
        let logs: Vec<f64> = (0..k)
            .map(|c| {
                let mut s = weights[c].ln();
                for j in 0..d {
                    let sd = sigma[c * d + j];
                    let z = (row[j] - mu[c * d + j]) / sd;
                    s += -0.5 * z * z - sd.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
                }
                s
            })
            .collect();
        let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        total += m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln();
    }
    total / x.rows() as f64
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let cases = 25;
    for _ in 0..cases {
        let k = rng.random_range(1..=3);
        let d = rng.random_range(1..=4);
        let n = rng.random_range(2..=20);
        let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu: Vec<f64> = (0..k * d).map(|_| rng.random_range(-1.5..1.5)).collect();
        let sigma: Vec<f64> = (0..k * d).map(|_| rng.random_range(0.6..1.6)).collect();
        let x = random_matrix(&mut rng, n, d, 2.0);
        let gmm = GmmModel {
            weights: weights.clone(),
            means: Matrix::from_vec(k, d, mu.clone()).unwrap(),
            variances: Matrix::from_vec(k, d, sigma.iter().map(|s| s * s).collect()).unwrap(),
            floor: 1e-9,
            seed: 0,
            provenance: Provenance::default(),
        };
        let fv = fv_raw(&gmm, &local(x.clone())).map_err(err)?;

        // Central differences, then the Fisher scaling: σ/√w for means, σ/√(2w) for deviations.
        let mut expected = vec![0.0; 2 * k * d];
        for idx in 0..k * d {
            let c = idx / d;
            let h = 1e-5;
            let mut up = mu.clone();
            let mut down = mu.clone();
            up[idx] += h;
            down[idx] -= h;
            let g_mu = (avg_loglik(&weights, &up, &sigma, d, &x) - avg_loglik(&weights, &down, &sigma, d, &x)) / (2.0 * h);
            expected[idx] = g_mu * sigma[idx] / weights[c].sqrt();

            let mut up = sigma.clone();
            let mut down = sigma.clone();
            up[idx] += h;
            down[idx] -= h;
            let g_sigma = (avg_loglik(&weights, &mu, &up, d, &x) - avg_loglik(&weights, &mu, &down, d, &x)) / (2.0 * h);
            expected[k * d + idx] = g_sigma * sigma[idx] / (2.0 * weights[c]).sqrt();
        }
        worst = worst.max(rel_err(&fv, &expected));
    }
    ensure(worst <= 1e-4, || format!("relative error {worst:e}"))?;
    Ok(format!("{cases} instances, max relative error {worst:.1e}"))
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    // (a) Lloyd inertia never rises.
    for run in 0..50 {
        let n = rng.random_range(20..=150);
        let d = rng.random_range(1..=6);
        let k = rng.random_range(1..=6);
        let x = random_matrix(&mut rng, n, d, 5.0);
        let fit = kmeans_fit(&x, &KMeansParams::new(k, run)).map_err(err)?;
        for w in fit.inertia_history.windows(2) {
            ensure(w[1] <= w[0] * (1.0 + 1e-12) + 1e-12, || format!("run {run}: inertia rose {} -> {}", w[0], w[1]))?;
        }
    }

    // (b) EM average log-likelihood never falls.
    for run in 0..50 {
        let n = rng.random_range(30..=150);
        let d = rng.random_range(1..=4);
        let k = rng.random_range(1..=4);
        let x = random_matrix(&mut rng, n, d, 3.0);
        let fit = gmm_fit(&x, &GmmParams::new(k, run)).map_err(err)?;
        for w in fit.loglik_history.windows(2) {
            ensure(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), || {
                format!("run {run}: log-likelihood fell {} -> {}", w[0], w[1])
            })?;
        }
    }

    // (c) analytic gradient against central differences; (d) solvers agree.
    let mut worst_grad: f64 = 0.0;
    let mut worst_gap: f64 = 0.0;
    for problem in 0..10 {
        let n = rng.random_range(40..=120);
        let m = rng.random_range(2..=6);
        let x = random_matrix(&mut rng, n, m, 2.0);
        let truth: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let z: f64 = x.row(i).iter().zip(&truth).map(|(a, b)| a * b).sum::<f64>() + rng.random_range(-1.0..1.0);
                if z > 0.0 { 1.0 } else { -1.0 }
            })
            .collect();
        let c = [0.1, 1.0, 10.0][problem % 3];
        for _ in 0..20 {
            let theta: Vec<f64> = (0..=m).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = lr_gradient(&x, &y, c, &theta);
            let fd: Vec<f64> = (0..=m)
                .map(|j| {
                    let h = 1e-6;
                    let mut up = theta.clone();
                    let mut down = theta.clone();
                    up[j] += h;
                    down[j] -= h;
                    (lr_objective(&x, &y, c, &up) - lr_objective(&x, &y, c, &down)) / (2.0 * h)
                })
                .collect();
            worst_grad = worst_grad.max(rel_err(&g, &fd));
        }
        let objective = |s: LrSolver| {
            let sol = lr_solve(&x, &y, c, s);
            let mut theta = sol.weights;
            theta.push(sol.bias);
            lr_objective(&x, &y, c, &theta)
        };
        worst_gap = worst_gap.max((objective(LrSolver::Liblinear) - objective(LrSolver::Lbfgs)).abs());
    }
    ensure(worst_grad <= 1e-5, || format!("gradient relative error {worst_grad:e}"))?;
    ensure(worst_gap <= 1e-4, || format!("solver objective gap {worst_gap:e}"))?;
    Ok(format!(
        "50 Lloyd + 50 EM runs monotone, gradient rel. error {worst_grad:.1e}, solver gap {worst_gap:.1e}"
    ))
}

struct Benchmark {
    cities: Vec<CityDataset>,
    config: PipelineConfig,
    vlad: Option<(PipelineReport, Pipeline)>,
    br: Option<PipelineReport>,
    leakage_checks: usize,
}

fn weighted_steps(r: &PipelineReport) -> String {
    r.steps.iter().map(|s| format!("{:.2}", s.report.rounded)).collect::<Vec<_>>().join("/")
}

fn criterion_5(bench: &mut Benchmark) -> Outcome {
    let mut cfg = bench.config.clone();
    cfg.approach = Approach::BrgVladMl;
    let (vlad, p) = run_pipeline(&bench.cities, &cfg).map_err(err)?;
    let (again, _) = run_pipeline(&bench.cities, &cfg).map_err(err)?;
    cfg.approach = Approach::BrMl;
    let (br, pb) = run_pipeline(&bench.cities, &cfg).map_err(err)?;
    bench.leakage_checks = p.counters().leakage_checks() + pb.counters().leakage_checks();

    let summary = format!("BRG-VLAD {} vs BR {}", weighted_steps(&vlad), weighted_steps(&br));
    let repeatable = vlad
        .steps
        .iter()
        .zip(&again.steps)
        .all(|(a, b)| a.report.weighted_f1 == b.report.weighted_f1 && a.chosen_combo == b.chosen_combo && a.phases == b.phases);
    let result = (|| {
        ensure(vlad.steps.iter().all(|s| s.report.rounded >= 0.90), || "a step is below 0.90".into())?;
        let (v, b) = (vlad.final_weighted_f1().unwrap(), br.final_weighted_f1().unwrap());
        ensure(v >= b, || format!("final BRG-VLAD {v:.4} < BR {b:.4}"))?;
        ensure(repeatable, || "repeated run differs".into())
    })();
    bench.vlad = Some((vlad, p));
    bench.br = Some(br);
    result.map(|_| format!("{summary}, repeat identical"))
}

fn criterion_6() -> Outcome {
    use common::protocol;
    protocol::first_city_skips_reuse().map_err(|e| format!("first city: {e}"))?;
    protocol::phase1_pass_fits_nothing().map_err(|e| format!("phase 1: {e}"))?;
    protocol::phase2_pass_selects_without_fitting().map_err(|e| format!("phase 2: {e}"))?;
    protocol::rounding_boundary().map_err(|e| format!("rounding: {e}"))?;
    Ok("first-city skip, zero-fit early exits, argmax/tie-break, 0.894/0.895 boundary".into())
}

fn random_rooftop(rng: &mut ChaCha8Rng) -> RooftopImage {
    let w = rng.random_range(1..=180);
    let h = rng.random_range(1..=180);
    let mut pixels = Image::new(w, h, 3);
    let mut mask = Mask::new(w, h);
    // Union of a few random rectangles, plus one guaranteed pixel.
    let blobs = rng.random_range(1..=4);
    let rects: Vec<(usize, usize, usize, usize)> = (0..blobs)
        .map(|_| {
            let x0 = rng.random_range(0..w);
            let y0 = rng.random_range(0..h);
            (x0, y0, rng.random_range(x0..w) + 1, rng.random_range(y0..h) + 1)
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                pixels.set(x, y, c, rng.random());
            }
            if rects.iter().any(|&(x0, y0, x1, y1)| x >= x0 && x < x1 && y >= y0 && y < y1) {
                mask.set(x, y, true);
            }
        }
    }
    RooftopImage {
        rooftop_id: "r".into(),
        city_id: "c".into(),
        pixels,
        valid_mask: mask,
        label: None,
        transform: Affine::IDENTITY,
    }
}

fn check_tiling(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for case in 0..100 {
        let roof = random_rooftop(rng);
        let (w, h) = (roof.pixels.width(), roof.pixels.height());
        let g = [8, 16, 32, 64][rng.random_range(0..4)];
        let (rows, cols) = lattice_dims(w, h, g);

        // With any positive coverage kept, tile footprints cover every valid pixel exactly once.
        let all = tile(&roof, g, 1e-9).map_err(err)?;
        let mut hits = vec![0u8; w * h];
        for t in &all {
            let (r, c) = t.index;
            for y in r * g..((r + 1) * g).min(h) {
                for x in c * g..((c + 1) * g).min(w) {
                    hits[y * w + x] += 1;
                    let expected: &[u8] = if roof.valid_mask.get(x, y) { roof.pixels.pixel(x, y) } else { &[0, 0, 0] };
                    ensure(t.pixels.pixel(x - c * g, y - r * g) == expected, || format!("case {case}: tile pixel differs"))?;
                }
            }
        }
        for y in 0..h {
            for x in 0..w {
                let want = roof.valid_mask.get(x, y) as u8;
                ensure(hits[y * w + x] >= want && hits[y * w + x] <= 1, || format!("case {case}: pixel ({x},{y}) covered {} times", hits[y * w + x]))?;
            }
        }

        let mut last = usize::MAX;
        for cov in [0.05, 0.25, 0.5, 0.75, 1.0] {
            let n = tile(&roof, g, cov).map(|t| t.len()).unwrap_or(0);
            ensure(n <= last, || format!("case {case}: {n} tiles at coverage {cov} after {last}"))?;
            ensure(n <= rows * cols, || format!("case {case}: {n} tiles exceed the lattice"))?;
            last = n;
        }
        ensure(tile(&roof, g, 0.5).map_err(err).ok() == tile(&roof, g, 0.5).map_err(err).ok(), || "tiling is not deterministic".into())?;
    }
    Ok(())
}

fn check_augmentation(rng: &mut ChaCha8Rng) -> Result<(), String> {
    for _ in 0..20 {
        let roof = random_rooftop(rng);
        let img = &roof.pixels;
        let op = |k: AugKind| AugmentationOp::new(k, 5).map_err(err);
        for k in [AugKind::HFlip, AugKind::VFlip] {
            let twice = augment(&augment(img, &op(k)?), &op(k)?);
            ensure(&twice == img, || format!("{k:?} twice is not the identity"))?;
        }
        for k in [
            AugKind::GammaContrast { gamma: 1.0 },
            AugKind::Brightness { delta: 0.0 },
            AugKind::Rotate { degrees: 0.0 },
        ] {
            ensure(&augment(img, &op(k)?) == img, || format!("{k:?} is not the identity"))?;
        }
    }
    Ok(())
}

fn check_serialization(rng: &mut ChaCha8Rng, dir: &Path, bench: &Benchmark) -> Result<(), String> {
    let sets: Vec<LocalFeatureSet> = (0..5)
        .map(|i| {
            let n = rng.random_range(1..=6);
            let vals = (0..n * 4).map(|_| rng.random::<f32>() as f64).collect();
            LocalFeatureSet {
                rooftop_id: format!("r{i}"),
                city_id: "c".into(),
                vectors: Matrix::from_vec(n, 4, vals).unwrap(),
                label: None,
            }
        })
        .collect();
    let fpath = dir.join("c.feat");
    save_features(&fpath, "c", "baseline", &sets).map_err(err)?;
    ensure(load_features(&fpath).map_err(err)?.sets == sets, || "feature file round trip differs".into())?;

    let cb = kmeans_fit(&random_matrix(rng, 60, 5, 2.0), &KMeansParams::new(3, 1)).map_err(err)?.codebook;
    let cpath = dir.join("codebook.bin");
    save_codebook(&cpath, &cb).map_err(err)?;
    ensure(load_codebook(&cpath).map_err(err)? == cb, || "codebook round trip differs".into())?;

    let (_, p) = bench.vlad.as_ref().ok_or("benchmark run missing")?;
    for step in &p.registry().steps {
        for m in &step.models {
            let bytes = model_to_bytes(&m.model);
            let back = model_from_bytes(&bytes).map_err(err)?;
            ensure(back == m.model && model_to_bytes(&back) == bytes, || format!("model {} round trip differs", m.combo))?;
        }
    }
    let root = dir.join("registry");
    save_registry(&root, p.registry()).map_err(err)?;
    let loaded = load_registry(&root).map_err(err)?;
    ensure(&loaded == p.registry(), || "registry round trip differs".into())?;
    let again = Pipeline::attach(loaded, &bench.cities).map_err(err)?;
    let (mut a, mut b) = (p.evaluate_best().map_err(err)?, again.evaluate_best().map_err(err)?);
    a.elapsed_seconds = 0.0;
    b.elapsed_seconds = 0.0;
    ensure(a == b, || "reloaded registry scores differently".into())
}

fn criterion_7(bench: &Benchmark) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let dir = tempfile::tempdir().map_err(err)?;
    check_tiling(&mut rng)?;
    check_augmentation(&mut rng)?;
    check_serialization(&mut rng, dir.path(), bench)?;
    ensure(bench.leakage_checks > 0, || "benchmark run performed no leakage checks".into())?;
    Ok(format!(
        "100 tilings, augmentation identities, round trips bit-exact, {} leakage checks clean",
        bench.leakage_checks
    ))
}

fn criterion_8(bench: &Benchmark) -> Outcome {
    let mut reports = Vec::new();
    reports.push(bench.br.clone().ok_or("BR run missing")?);
    reports.push(bench.vlad.as_ref().ok_or("BRG-VLAD run missing")?.0.clone());
    for approach in [Approach::BrgFvMl, Approach::BrgAvgMl] {
        let mut cfg = bench.config.clone();
        cfg.approach = approach;
        reports.push(run_pipeline(&bench.cities, &cfg).map_err(|e| format!("{approach}: {e}"))?.0);
    }
    let names = bench.cities.iter().map(|c| c.name.clone()).collect();
    let report = ComparisonReport::from_reports(names, &reports);
    report.validate()?;
    let json = serde_json::to_string(&report).map_err(err)?;
    let back: ComparisonReport = serde_json::from_str(&json).map_err(err)?;
    ensure(back == report, || "comparison report does not survive JSON".into())?;
    println!("{}", report.to_table());
    let rows: Vec<String> = reports.iter().map(|r| format!("{} {}", r.approach, weighted_steps(r))).collect();
    Ok(rows.join("; "))
}

fn run(id: usize, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let result = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f))
        .unwrap_or_else(|_| Err("panicked".into()));
    let elapsed = t.elapsed();
    let result = result.and_then(|msg| {
        if elapsed <= limit {
            Ok(msg)
        } else {
            Err(format!("{msg}; took {:.1}s, limit {:.0}s", elapsed.as_secs_f64(), limit.as_secs_f64()))
        }
    });
    match &result {
        Ok(msg) => println!("criterion {id}: PASS ({:.1}s) {msg}", elapsed.as_secs_f64()),
        Err(msg) => println!("criterion {id}: FAIL ({:.1}s) {msg}", elapsed.as_secs_f64()),
    }
    result.is_ok()
}

fn main() {
    let data = tempfile::tempdir().expect("temporary directory");
    let cities: Vec<CityDataset> = default_benchmark(7)
        .iter()
        .map(|s| generate_city(s, data.path()).expect("benchmark generation"))
        .collect();
    let mut bench = Benchmark {
        cities,
        config: PipelineConfig::from_config(&Config::default()).expect("default pipeline config"),
        vlad: None,
        br: None,
        leakage_checks: 0,
    };

    let secs = Duration::from_secs;
    let results = [
        run(1, secs(1), criterion_1),
        run(2, secs(10), criterion_2),
        run(3, secs(30), criterion_3),
        run(4, secs(60), criterion_4),
        run(5, secs(600), || criterion_5(&mut bench)),
        run(6, secs(10), criterion_6),
        run(7, secs(60), || criterion_7(&bench)),
        run(8, secs(600), || criterion_8(&bench)),
    ];
    let failed = results.iter().filter(|ok| !**ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
