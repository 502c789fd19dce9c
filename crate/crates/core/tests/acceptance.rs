//! End-to-end acceptance checks. Each test prints one PASS/FAIL line.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use cnnflow::classifier::{dual_objective, gram_matrix, solve, Chi2KernelParams, KernelMatrix, SmoParams};
use cnnflow::codebook::{train_kmeans, KMeansParams};
use cnnflow::config::{PipelineConfig, SnippetMode};
use cnnflow::evaluation::{run_protocol, sweep, SplitSpec, SweepAxis};
use cnnflow::feature_io::FeatureSequence;
use cnnflow::hashing::{train_itq, BinaryCode};
use cnnflow::pyramid::{build_pyramid, PartitionSchedule};
use cnnflow::reduction::{fit_level_models, fit_pca, reduce_descriptor};
use cnnflow::snippets::{detect_keyframes, KeyframeParams, Snippet};
use cnnflow::synthetic::{generate, SyntheticDataset, SyntheticSpec};

fn verdict(name: &str, pass: bool, detail: String) {
    let line = format!("[{}] {name}: {detail}\n", if pass { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
    assert!(pass, "{name}: {detail}");
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng)
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
#[allow(clippy::needless_range_loop)]
fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let scale: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum::<f64>().max(1e-300);
        if off <= 1e-30 * scale {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    ev.sort_by(|x, y| y.total_cmp(x));
    ev
}

#[test]
fn pipeline_dimensionality() {
    let (dim, frames) = (4096, 60);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows: Vec<Vec<f64>> = (0..frames).map(|_| (0..dim).map(|_| normal(&mut rng)).collect()).collect();
    let seq = FeatureSequence::from_rows("v", &rows).unwrap();
    let schedule = PartitionSchedule::default();
    let descs: Vec<_> = (0..12)
        .map(|i| build_pyramid(&seq, &Snippet::new("v", 1 + 3 * i, 20 + 3 * i).unwrap(), &schedule).unwrap())
        .collect();
    let stacked = descs[0].stacked().len();
    let models = fit_level_models(&descs, 100).unwrap();
    let reduced = descs.iter().map(|d| reduce_descriptor(d, &models).unwrap().len()).collect::<Vec<_>>();
    let pass = stacked == 17 * 4096 && reduced.iter().all(|&l| l == 1700);
    verdict(
        "pipeline dimensionality",
        pass,
        format!("stacked {stacked} (want {}), reduced {:?} (want 1700)", 17 * 4096, reduced[0]),
    );
}

#[test]
fn itq_loss_monotone() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let points: Vec<Vec<f64>> = (0..1000).map(|_| (0..64).map(|_| normal(&mut rng)).collect()).collect();
    let started = Instant::now();
    let model = train_itq(&points, 16, 50, 5).unwrap();
    let loss = model.loss_history();
    // Slack is relative to the loss scale (about 1e4 here).
    let worst = loss
        .windows(2)
        .map(|w| (w[1] - w[0]) / w[0].abs().max(1.0))
        .fold(f64::NEG_INFINITY, f64::max);
    let pass = loss.len() == 51 && worst <= 1e-9;
    verdict(
        "ITQ monotonicity",
        pass,
        format!(
            "{} losses, {:.3} -> {:.3}, largest relative step {worst:.3e} (slack 1e-9), {:.2?}",
            loss.len(),
            loss[0],
            loss[loss.len() - 1],
            started.elapsed()
        ),
    );
}

#[test]
fn keyframe_oracle_equivalence() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let b = rng.random_range(1..=8usize);
        let len = rng.random_range(1..=200usize);
        let threshold = rng.random_range(1..=b as u32);
        let mut words = vec![rng.random_range(0..1u64 << b)];
        for _ in 1..len {
            let prev = *words.last().unwrap();
            // Runs of repeated codes alongside fresh ones.
            words.push(if rng.random_bool(0.5) { prev } else { rng.random_range(0..1u64 << b) });
        }
        let codes: Vec<BinaryCode> = words.iter().map(|&w| BinaryCode::from_u64(w, b)).collect();
        let got = detect_keyframes(&codes, &KeyframeParams { hamming_threshold: threshold }).unwrap();
        let mut expected = vec![1];
        for i in 1..len {
            let differing = (0..b).filter(|&j| (words[i] >> j) & 1 != (words[i - 1] >> j) & 1).count();
            if differing as u32 >= threshold {
                expected.push(i + 1);
            }
        }
        mismatches += usize::from(got != expected);
    }
    verdict(
        "key-frame oracle equivalence",
        mismatches == 0,
        format!("{mismatches} of 1000 random sequences differ from the naive oracle"),
    );
}

fn best_two_partition(points: &[&[f64]]) -> f64 {
    let n = points.len();
    let scatter = |members: &[&[f64]]| -> f64 {
        if members.is_empty() {
            return 0.0;
        }
        let dim = members[0].len();
        let mean: Vec<f64> = (0..dim)
            .map(|d| members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64)
            .collect();
        members
            .iter()
            .map(|p| p.iter().zip(&mean).map(|(a, m)| (a - m) * (a - m)).sum::<f64>())
            .sum()
    };
    let mut best = f64::INFINITY;
    // Point 0 always in the first part; the second part must be non-empty.
    for mask in 0..(1u32 << (n - 1)) {
        let (mut a, mut b) = (vec![points[0]], Vec::new());
        for (i, &p) in points.iter().enumerate().skip(1) {
            if mask >> (i - 1) & 1 == 1 {
                b.push(p);
            } else {
                a.push(p);
            }
        }
        if b.is_empty() {
            continue;
        }
        best = best.min(scatter(&a) + scatter(&b));
    }
    best
}

#[test]
fn kmeans_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (mut optimal, mut chosen, mut monotone) = (0, 0, 0);
    for set in 0..20 {
        let n = rng.random_range(4..=12usize);
        let dim = rng.random_range(1..=3usize);
        let data: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| normal(&mut rng) * 2.0).collect()).collect();
        let params = KMeansParams {
            k: 2,
            restarts: 10,
            validation_fraction: 0.1,
            seed: set,
        };
        let fit = train_kmeans(&data, &params).unwrap();
        let train: Vec<&[f64]> = fit.train_indices.iter().map(|&i| data[i].as_slice()).collect();
        let opt = best_two_partition(&train);
        let at_opt = |sse: f64| (sse - opt).abs() <= 1e-9 * opt.max(1.0);
        let best = fit.restarts.iter().map(|t| t.training_sse).fold(f64::INFINITY, f64::min);
        optimal += usize::from(at_opt(best));
        chosen += usize::from(at_opt(fit.training_sse));
        if fit
            .restarts
            .iter()
            .all(|t| t.sse_history.windows(2).all(|w| w[1] <= w[0]))
        {
            monotone += 1;
        }
    }
    verdict(
        "k-means oracle",
        optimal >= 18 && monotone == 20,
        format!(
            "best of 10 restarts at the exhaustive optimum in {optimal}/20 (need 18), validation-chosen restart in {chosen}/20, SSE non-increasing in {monotone}/20"
        ),
    );
}

#[test]
fn pca_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(51);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(10..=40usize);
        let dim = rng.random_range(3..=10usize);
        let scales: Vec<f64> = (0..dim).map(|_| rng.random_range(0.2..4.0)).collect();
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| scales.iter().map(|s| s * normal(&mut rng) + 1.5).collect())
            .collect();
        let r = dim.min(n - 1);
        let model = fit_pca(&rows, r).unwrap();

        let mean: Vec<f64> = (0..dim).map(|d| rows.iter().map(|x| x[d]).sum::<f64>() / n as f64).collect();
        let cov: Vec<Vec<f64>> = (0..dim)
            .map(|i| {
                (0..dim)
                    .map(|j| rows.iter().map(|x| (x[i] - mean[i]) * (x[j] - mean[j])).sum::<f64>() / (n - 1) as f64)
                    .collect()
            })
            .collect();
        let eig = jacobi_eigenvalues(cov);

        let projected: Vec<Vec<f64>> = rows.iter().map(|x| model.transform(x).unwrap()).collect();
        for c in 0..r {
            let var = projected.iter().map(|p| p[c] * p[c]).sum::<f64>() / (n - 1) as f64;
            let rel = (var - eig[c]).abs() / eig[c].abs().max(1e-300);
            let rel_model = (model.explained_variance()[c] - eig[c]).abs() / eig[c].abs().max(1e-300);
            worst = worst.max(rel).max(rel_model);
        }
    }
    verdict(
        "PCA oracle",
        worst <= 1e-8,
        format!("largest relative variance error {worst:.3e} over 20 matrices (tolerance 1e-8)"),
    );
}

/// Maximises the dual by a shrinking grid over all but the last
/// coefficient, which the equality constraint determines.
fn grid_dual_optimum(gram: &KernelMatrix, y: &[f64], c: f64) -> f64 {
    let n = y.len();
    let free = n - 1;
    let complete = |alpha: &mut Vec<f64>| -> bool {
        let s: f64 = (0..free).map(|i| alpha[i] * y[i]).sum();
        alpha[free] = -s * y[free];
        (0.0..=c).contains(&alpha[free])
    };
    let levels = if free <= 4 { 9 } else { 5 };
    let mut best_alpha = vec![0.0; n];
    let mut best = 0.0;
    // Coarse full grid.
    let mut idx = vec![0usize; free];
    loop {
        let mut alpha: Vec<f64> = idx.iter().map(|&k| c * k as f64 / (levels - 1) as f64).collect();
        alpha.push(0.0);
        if complete(&mut alpha) {
            let v = dual_objective(gram, y, &alpha);
            if v > best {
                best = v;
                best_alpha = alpha;
            }
        }
        let mut d = 0;
        while d < free {
            idx[d] += 1;
            if idx[d] < levels {
                break;
            }
            idx[d] = 0;
            d += 1;
        }
        if d == free {
            break;
        }
    }
    // Refine around the incumbent with every combination of -h, 0, +h.
    let mut h = c / (levels - 1) as f64;
    while h > 1e-7 * c {
        let mut improved = false;
        let mut steps = vec![0usize; free];
        loop {
            let mut alpha = best_alpha.clone();
            let mut inside = true;
            for i in 0..free {
                alpha[i] += (steps[i] as f64 - 1.0) * h;
                if !(0.0..=c).contains(&alpha[i]) {
                    inside = false;
                }
            }
            if inside && complete(&mut alpha) {
                let v = dual_objective(gram, y, &alpha);
                if v > best + 1e-15 {
                    best = v;
                    best_alpha = alpha;
                    improved = true;
                }
            }
            let mut d = 0;
            while d < free {
                steps[d] += 1;
                if steps[d] < 3 {
                    break;
                }
                steps[d] = 0;
                d += 1;
            }
            if d == free {
                break;
            }
        }
        if !improved {
            h /= 2.0;
        }
    }
    best
}

#[test]
fn svm_dual_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let started = Instant::now();
    let (mut worst_gap, mut box_ok, mut problems) = (0.0f64, true, 0);
    while problems < 20 {
        let n = rng.random_range(3..=8usize);
        let hists: Vec<Vec<f64>> = (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
                let s: f64 = raw.iter().sum();
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        if y.iter().all(|&v| v == y[0]) {
            continue;
        }
        problems += 1;
        let c = [0.1, 1.0, 10.0][rng.random_range(0..3)];
        let (gram, _) = gram_matrix(&hists, &Chi2KernelParams::default()).unwrap();
        let sol = solve(&gram, &y, &SmoParams::new(c));
        box_ok &= sol.alpha.iter().all(|&a| (0.0..=c).contains(&a));
        let smo = dual_objective(&gram, &y, &sol.alpha);
        let grid = grid_dual_optimum(&gram, &y, c);
        worst_gap = worst_gap.max((smo - grid).abs());
    }
    verdict(
        "SVM dual oracle",
        worst_gap <= 1e-3 && box_ok,
        format!(
            "largest |SMO - grid search| dual gap {worst_gap:.3e} (tolerance 1e-3) on 20 problems, box constraints {}, {:.2?}",
            if box_ok { "exact" } else { "VIOLATED" },
            started.elapsed()
        ),
    );
}

#[test]
fn kernel_psd() {
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let mut min_eig = f64::INFINITY;
    for _ in 0..20 {
        let hists: Vec<Vec<f64>> = (0..20)
            .map(|_| {
                let raw: Vec<f64> = (0..30)
                    .map(|_| if rng.random_bool(0.6) { 0.0 } else { rng.random::<f64>() })
                    .collect();
                let s: f64 = raw.iter().sum::<f64>().max(1e-12);
                raw.into_iter().map(|v| v / s).collect()
            })
            .collect();
        let (gram, _) = gram_matrix(&hists, &Chi2KernelParams::default()).unwrap();
        let rows: Vec<Vec<f64>> = (0..20).map(|i| gram.row(i).to_vec()).collect();
        min_eig = min_eig.min(*jacobi_eigenvalues(rows).last().unwrap());
    }
    verdict(
        "kernel PSD",
        min_eig >= -1e-8,
        format!("smallest Gram eigenvalue over 20 sets {min_eig:.3e} (bound -1e-8)"),
    );
}

fn synthetic() -> SyntheticDataset {
    generate(&SyntheticSpec::default()).unwrap()
}

fn synthetic_config(mode: SnippetMode) -> PipelineConfig {
    PipelineConfig {
        snippet_mode: mode,
        pca_dim: 16,
        codebook_k: 50,
        ..Default::default()
    }
}

const LOOCV_5: SplitSpec = SplitSpec::Loocv { folds: 5 };

#[test]
fn synthetic_end_to_end() {
    let ds = synthetic();
    let started = Instant::now();
    let acc = |mode| {
        run_protocol(&ds.manifest, &ds.features, &synthetic_config(mode), &LOOCV_5)
            .unwrap()
            .mean_class_accuracy()
    };
    let (binary, windows, baseline) = (acc(SnippetMode::Binary), acc(SnippetMode::Windows), acc(SnippetMode::Baseline));
    let elapsed = started.elapsed();
    let pass = binary >= 0.95 && windows >= 0.95 && baseline < binary && baseline < windows && elapsed.as_secs() < 300;
    verdict(
        "synthetic end-to-end",
        pass,
        format!(
            "LOOCV-5 mean class accuracy binary {binary:.4}, windows {windows:.4} (need >= 0.95), appearance baseline {baseline:.4} (must be lower), {elapsed:.1?}"
        ),
    );
}

#[test]
fn determinism() {
    let ds = synthetic();
    let cfg = PipelineConfig {
        master_seed: 99,
        ..synthetic_config(SnippetMode::Binary)
    };
    let a = run_protocol(&ds.manifest, &ds.features, &cfg, &LOOCV_5).unwrap();
    let b = run_protocol(&ds.manifest, &ds.features, &cfg, &LOOCV_5).unwrap();
    let pass = a.to_text(false) == b.to_text(false) && a.to_kv(false) == b.to_kv(false);
    verdict(
        "determinism",
        pass,
        format!(
            "two evaluations with seed 99 give {} reports ({} bytes of key=value output)",
            if pass { "byte-identical" } else { "different" },
            a.to_kv(false).len()
        ),
    );
}

#[test]
fn sweep_axes() {
    let ds = synthetic();
    let mut lines = Vec::new();
    let mut pass = true;
    for (axis, base, expect) in [
        (SweepAxis::BinarySize, SnippetMode::Binary, vec![8, 10, 16, 20, 32]),
        (SweepAxis::WindowLength, SnippetMode::Windows, vec![20, 30, 40, 50]),
        (SweepAxis::PyramidLevels, SnippetMode::Binary, vec![1, 2, 3, 4]),
    ] {
        let table = sweep(&ds.manifest, &ds.features, &synthetic_config(base), &LOOCV_5, axis, None).unwrap();
        let values: Vec<usize> = table.rows.iter().map(|(v, _)| *v).collect();
        pass &= values == expect;
        print!("{}", table.to_text());
        lines.push(format!("{axis} {values:?}"));
    }
    verdict("parameter sweep axes", pass, lines.join("; "));
}
