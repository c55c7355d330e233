//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use heterotl::feature_map::fit_linear_map;
use heterotl::penalized::{kkt_check, lasso, lasso_objective, lasso_with_offset, null_threshold, LassoSettings};
use heterotl::sieve::{expand, unravel};
use heterotl::simulation::{run_replications, DeltaKind, MetricsReport, SimConfig};
use heterotl::{Dataset, Method};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn gaussian_matrix(n: usize, p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, p, |_, _| gaussian(rng))
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller keeps the oracle free of the library's sampling code
    let u: f64 = rng.random_range(f64::EPSILON..1.0);
    let v: f64 = rng.random();
    (-2.0 * u.ln()).sqrt() * (std::f64::consts::TAU * v).cos()
}

fn check_time(started: Instant, budget: Duration) -> Result<(), String> {
    let used = started.elapsed();
    if used > budget {
        Err(format!("took {used:.1?}, budget {budget:?}"))
    } else {
        Ok(())
    }
}

/// Lasso as a bound-constrained QP in `δ = u − v`, `u, v ≥ 0`, solved by
/// accelerated projected gradient with restarts.
fn reference_lasso(d: &DMatrix<f64>, r: &DVector<f64>, lambda: f64, iters: usize) -> DVector<f64> {
    let n = d.nrows() as f64;
    let p = d.ncols();
    let gram = d.transpose() * d * (2.0 / n);
    let c = d.transpose() * r * (2.0 / n);
    let lip = 2.0 * gram.clone().symmetric_eigenvalues().max();
    let step = 1.0 / lip;
    let objective = |w: &DVector<f64>| {
        let delta = w.rows(0, p) - w.rows(p, p);
        let fit = r - d * &delta;
        fit.norm_squared() / n + lambda * w.sum()
    };
    let grad = |w: &DVector<f64>| {
        let delta = w.rows(0, p) - w.rows(p, p);
        let g = &gram * delta - &c;
        let mut out = DVector::zeros(2 * p);
        for j in 0..p {
            out[j] = g[j] + lambda;
            out[p + j] = -g[j] + lambda;
        }
        out
    };
    let mut w = DVector::zeros(2 * p);
    let mut y = w.clone();
    let mut t = 1.0f64;
    let mut last = objective(&w);
    for _ in 0..iters {
        let next = (&y - grad(&y) * step).map(|v| v.max(0.0));
        let value = objective(&next);
        if value > last {
            y = w.clone();
            t = 1.0;
            continue;
        }
        let t_next = (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0;
        y = &next + (&next - &w) * ((t - 1.0) / t_next);
        w = next;
        t = t_next;
        last = value;
    }
    w.rows(0, p) - w.rows(p, p)
}

fn lasso_correctness() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let settings = LassoSettings::default();
    let (mut worst_gap, mut worst_kkt) = (0.0f64, 0.0f64);
    for i in 0..30 {
        let p = [4, 6, 8][i % 3];
        let lambda = [0.05, 0.2, 1.0][(i / 3) % 3];
        let d = gaussian_matrix(20, p, &mut rng);
        let truth = DVector::from_fn(p, |j, _| if j % 2 == 0 { 1.5 } else { 0.0 });
        let r = &d * truth + DVector::from_fn(20, |_, _| gaussian(&mut rng));
        let (delta, diag) = lasso(&d, &r, lambda, &settings).map_err(|e| e.to_string())?;
        if !diag.converged {
            return Err(format!("instance {i} did not converge"));
        }
        let reference = reference_lasso(&d, &r, lambda, 200_000);
        let ours = lasso_objective(&d, &r, lambda, None, &delta);
        let theirs = lasso_objective(&d, &r, lambda, None, &reference);
        worst_gap = worst_gap.max(ours - theirs);
        worst_kkt = worst_kkt.max(kkt_check(&d, &r, lambda, &delta));
    }
    check_time(started, Duration::from_secs(10))?;
    let summary = format!("objective excess over reference {worst_gap:.2e}, max KKT violation {worst_kkt:.2e}");
    if worst_gap <= 1e-9 && worst_kkt <= 1e-8 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn offset_reduction() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let settings = LassoSettings::default();
    for i in 0..20 {
        let (n, p) = (30, 10);
        let d = gaussian_matrix(n, p, &mut rng);
        let y = DVector::from_fn(n, |_, _| 3.0 * gaussian(&mut rng));
        let omega = DVector::from_fn(p, |_, _| gaussian(&mut rng));
        let lambda = rng.random_range(0.01..2.0);
        let objective = |beta: &DVector<f64>| {
            (&y - &d * beta).norm_squared() / n as f64 + lambda * (beta - &omega).abs().sum()
        };
        let fit = lasso_with_offset(&d, &y, &omega, lambda, &settings).map_err(|e| e.to_string())?;
        if objective(&fit.beta) > objective(&omega) {
            return Err(format!("instance {i}: fit is worse than the offset"));
        }
        let lmax = null_threshold(&d, &(&y - &d * &omega), None);
        for scale in [1.0, 1.5, 10.0] {
            let fit = lasso_with_offset(&d, &y, &omega, scale * lmax, &settings).map_err(|e| e.to_string())?;
            if fit.beta != omega {
                return Err(format!("instance {i}: beta differs from offset at {scale} x null threshold"));
            }
        }
    }
    check_time(started, Duration::from_secs(1))?;
    Ok("20 instances".into())
}

fn basis_orthogonality() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let samples = 200_000;
    let x = DMatrix::from_fn(samples, 2, |_, _| rng.random_range(-1.0..=1.0));
    let basis = unravel(2, 2, 10).map_err(|e| e.to_string())?;
    let psi = expand(&x, &basis).map_err(|e| e.to_string())?;
    let gram = psi.tr_mul(&psi) / samples as f64;
    let (mut off, mut diag) = (0.0f64, 0.0f64);
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            if i == j {
                diag = diag.max((gram[(i, j)] - 1.0).abs());
            } else {
                off = off.max(gram[(i, j)].abs());
            }
        }
    }
    check_time(started, Duration::from_secs(5))?;
    let summary = format!("max off-diagonal {off:.4}, max diagonal deviation {diag:.4}");
    if off <= 0.02 && diag <= 0.02 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn map_error(n: usize, p: &DMatrix<f64>, noise: f64, rng: &mut ChaCha8Rng) -> Result<f64, String> {
    let x = gaussian_matrix(n, p.nrows(), rng);
    let z = &x * p + gaussian_matrix(n, p.ncols(), rng) * noise;
    let ds = Dataset::new(x, Some(z), DVector::zeros(n)).map_err(|e| e.to_string())?;
    let map = fit_linear_map(&ds, 0.0).map_err(|e| e.to_string())?;
    Ok((map.coefficient_matrix() - p).norm())
}

fn linear_map_recovery() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let p = gaussian_matrix(10, 5, &mut rng);
    let exact = map_error(500, &p, 0.0, &mut rng)?;
    let mut improved = 0;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(4040 + seed);
        let p = gaussian_matrix(10, 5, &mut rng);
        let small = map_error(1000, &p, 1.0, &mut rng)?;
        let large = map_error(4000, &p, 1.0, &mut rng)?;
        if large < small {
            improved += 1;
        }
    }
    check_time(started, Duration::from_secs(10))?;
    let summary = format!("noiseless error {exact:.2e}, n=4000 beats n=1000 in {improved}/20 seeds");
    if exact <= 1e-8 && improved >= 19 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn median_map(report: &MetricsReport, method: Method) -> f64 {
    report.summary_for(method).map_or(f64::NAN, |s| s.map.median)
}

fn failures_note(report: &MetricsReport) -> String {
    if report.failures.is_empty() {
        String::new()
    } else {
        format!(", {} failed reps", report.failures.len())
    }
}

fn figure1(reports: &BTreeMap<usize, MetricsReport>, elapsed: Duration) -> Outcome {
    let at50 = &reports[&50];
    let (htl, hm, tl) = (
        median_map(at50, Method::Htl),
        median_map(at50, Method::Homogeneous),
        median_map(at50, Method::TargetLasso),
    );
    let by_n: Vec<f64> = [30, 50, 100].iter().map(|n| median_map(&reports[n], Method::Htl)).collect();
    let failures: usize = reports.values().map(|r| r.failures.len()).sum();
    let summary = format!(
        "n_t=50 median MAP htl {htl:.3} < homogeneous {hm:.3} < target lasso {tl:.3}; htl by n_t 30/50/100: {:.3} {:.3} {:.3}; {failures} failed reps; {elapsed:.1?}",
        by_n[0], by_n[1], by_n[2]
    );
    let ok = htl < hm && hm < tl && by_n[2] < by_n[1] && by_n[1] < by_n[0] && elapsed < Duration::from_secs(300);
    if ok {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn figure5(report: &MetricsReport, elapsed: Duration) -> Outcome {
    let (htl, hm, tl) = (
        median_map(report, Method::Htl),
        median_map(report, Method::Homogeneous),
        median_map(report, Method::TargetLasso),
    );
    let summary = format!(
        "median MAP htl {htl:.3}, homogeneous {hm:.3}, target lasso {tl:.3}; htl/homogeneous {:.3}, homogeneous/target lasso {:.3}{}; {elapsed:.1?}",
        htl / hm,
        hm / tl,
        failures_note(report)
    );
    if htl <= 0.8 * hm && (hm / tl - 1.0).abs() <= 0.15 && elapsed < Duration::from_secs(600) {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn dominance_fraction(report: &MetricsReport) -> f64 {
    let by_rep = |method: Method| -> BTreeMap<usize, f64> {
        report
            .records
            .iter()
            .filter(|r| r.method == method)
            .map(|r| (r.rep, r.l1_err_beta1))
            .collect()
    };
    let htl = by_rep(Method::Htl);
    let hm = by_rep(Method::Homogeneous);
    let wins = htl.iter().filter(|(rep, v)| hm.get(rep).is_some_and(|h| *v < h)).count();
    // failed replications count against the criterion
    wins as f64 / report.config.reps as f64
}

fn estimation_dominance(linear: &MetricsReport, nonlinear: &MetricsReport) -> Outcome {
    let (a, b) = (dominance_fraction(linear), dominance_fraction(nonlinear));
    let summary = format!("htl l1 error below homogeneous in {:.0}% (linear) and {:.0}% (nonlinear) of reps", 100.0 * a, 100.0 * b);
    if a >= 0.9 && b >= 0.9 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn degenerate_transfer() -> Outcome {
    let config = SimConfig {
        delta: DeltaKind::Zero,
        map_perturbation: false,
        map_noise_sd: 0.0,
        response_noise_sd: 0.0,
        reps: 5,
        seed: 808,
        ..SimConfig::default()
    };
    let report = run_replications(&config).map_err(|e| e.to_string())?;
    if !report.failures.is_empty() {
        return Err(format!("{} failed reps: {}", report.failures.len(), report.failures[0].message));
    }
    let worst = report.values(Method::Htl, |r| r.map).into_iter().fold(0.0f64, f64::max);
    let summary = format!("max htl MAP over 5 reps {worst:.2e}");
    if worst <= 1e-6 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

fn simulate_csv(dir: &Path, name: &str, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = dir.join(name);
    let status = Command::new(env!("CARGO_BIN_EXE_heterotl"))
        .arg("simulate")
        .args(args)
        .arg("--out")
        .arg(&out)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(String::from_utf8_lossy(&status.stderr).into_owned());
    }
    std::fs::read(out.join("metrics.csv")).map_err(|e| e.to_string())
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs: [&[&str]; 2] = [
        &["--preset", "fig1", "--reps", "4", "--seed", "909"],
        &["--preset", "fig5", "--reps", "2", "--n-p", "600", "--seed", "909"],
    ];
    for (i, args) in runs.iter().enumerate() {
        let a = simulate_csv(dir.path(), &format!("{i}a"), args)?;
        let b = simulate_csv(dir.path(), &format!("{i}b"), args)?;
        if a != b {
            return Err(format!("metrics.csv differs between runs of `simulate {}`", args.join(" ")));
        }
    }
    Ok("linear and nonlinear simulate runs byte-identical".into())
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = vec![
        ("1 lasso correctness", lasso_correctness()),
        ("2 offset reduction", offset_reduction()),
        ("3 basis orthogonality", basis_orthogonality()),
        ("4 linear map recovery", linear_map_recovery()),
    ];

    let started = Instant::now();
    let mut fig1 = BTreeMap::new();
    let mut fig1_error = None;
    for n_t in [30, 50, 100] {
        let config = SimConfig { n_t, ..SimConfig::default() };
        match run_replications(&config) {
            Ok(r) => {
                fig1.insert(n_t, r);
            }
            Err(e) => fig1_error = Some(e.to_string()),
        }
    }
    let fig1_time = started.elapsed();
    let started = Instant::now();
    let fig5 = SimConfig::preset("fig5").and_then(|c| run_replications(&c)).map_err(|e| e.to_string());
    let fig5_time = started.elapsed();

    results.push((
        "5 linear scenario trend",
        match fig1_error {
            Some(e) => Err(e),
            None => figure1(&fig1, fig1_time),
        },
    ));
    results.push(("6 nonlinear scenario trend", fig5.as_ref().map_err(Clone::clone).and_then(|r| figure5(r, fig5_time))));
    results.push((
        "7 estimation error dominance",
        match (fig1.get(&50), &fig5) {
            (Some(l), Ok(n)) => estimation_dominance(l, n),
            _ => Err("simulation did not run".into()),
        },
    ));
    results.push(("8 degenerate transfer", degenerate_transfer()));
    results.push(("9 determinism", determinism()));

    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS criterion {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {name}: {detail}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
