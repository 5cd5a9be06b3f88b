//! Acceptance suite: one line per criterion, nonzero exit on any failure.

mod common;

use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::Instant;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sysid_core::estimators::{
    run_estimator, EstimatorKind, OlsState, RerState, RunSpec, Snapshot, SupportPattern,
};
use sysid_core::harness::{parse_config, run_experiment};
use sysid_core::metrics::{pred_excess, summarize, Evaluator, SummaryRow};
use sysid_core::model::{
    log_burn_in, r_prefix_len, rand_bimod, HyperParams, SampleSource, StartMode, SystemSpec,
    VarStream, VecSource,
};
use sysid_core::numerics::{solve_lyapunov, DEFAULT_TOL};
use sysid_core::replay::{schedule, BufferReader, OrderPolicy};
use sysid_core::{Matrix, Vector};

use common::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn experiment(args: &[&str]) -> Vec<sysid_core::metrics::ErrorCurve> {
    let cfg = parse_config(args.iter().copied()).expect("valid configuration");
    run_experiment(&cfg).expect("experiment runs").curves
}

fn row(rows: &[SummaryRow], kind: EstimatorKind) -> &SummaryRow {
    rows.iter()
        .find(|r| r.estimator == kind)
        .expect("estimator present")
}

fn comparison() -> Outcome {
    let started = Instant::now();
    let curves = experiment(&[
        "--d",
        "5",
        "--rho",
        "0.9",
        "--sigma",
        "1",
        "--T",
        "1000000",
        "--B",
        "100",
        "--u",
        "10",
        "--estimators",
        "sgd_rer,sgd,sgd_er,ols",
        "--seeds",
        "1,2,3,4,5",
    ]);
    let secs = started.elapsed().as_secs_f64();
    let rows = summarize(&curves);
    let ols = row(&rows, EstimatorKind::Ols).mean_param_err;
    let rer = row(&rows, EstimatorKind::SgdRer).mean_param_err / ols;
    let sgd = row(&rows, EstimatorKind::Sgd).mean_param_err / ols;
    let er = row(&rows, EstimatorKind::SgdEr).mean_param_err / ols;
    check(
        rer <= 2.0 && sgd >= 3.0 && secs <= 60.0,
        format!(
            "sgd_rer/ols = {rer:.3} (<= 2), sgd/ols = {sgd:.2} (>= 3), sgd_er/ols = {er:.2}; ols param_err {ols:.3e}; {secs:.1}s (<= 60s)"
        ),
    )
}

/// Mean and standard error of each entry of `A_B - A*` over Monte-Carlo seeds.
fn one_buffer_deviation(policy_forward: bool, seeds: u64) -> Vec<(f64, f64)> {
    let a_star = Matrix::from_row_major(2, 2, vec![0.6, 0.2, -0.1, 0.4]).unwrap();
    let spec = SystemSpec::isotropic(a_star.clone(), 1.0).unwrap();
    let (b, gamma) = (20, 0.01);
    let h = HyperParams {
        horizon: b + 1,
        buffer_size: b,
        gap: 0,
        gamma,
        r: 1.0 / (2.0 * gamma),
        burn_in: 0,
        alpha: 22.0,
    };
    let sched = if policy_forward {
        schedule(&mut OrderPolicy::Forward, b, 0)
    } else {
        schedule(&mut OrderPolicy::Reverse, b, 0)
    };
    let mut sum = [0.0; 4];
    let mut sum_sq = [0.0; 4];
    for seed in 0..seeds {
        let mut stream = VarStream::from_seed(&spec, StartMode::Stationary, seed).unwrap();
        let buf = BufferReader::new(b).next_buffer(&mut stream).unwrap();
        let mut state = RerState::new(a_star.clone(), 0);
        state.process_buffer(&buf, &sched, &h).unwrap();
        assert!(!state.is_poisoned(), "norm guard tripped for seed {seed}");
        let dev = state.current().sub(&a_star).unwrap();
        for (k, v) in dev.as_slice().iter().enumerate() {
            sum[k] += v;
            sum_sq[k] += v * v;
        }
    }
    let n = seeds as f64;
    (0..4)
        .map(|k| {
            let mean = sum[k] / n;
            let var = (sum_sq[k] - n * mean * mean) / (n - 1.0);
            (mean, (var / n).sqrt())
        })
        .collect()
}

fn unbiasedness() -> Outcome {
    let started = Instant::now();
    let z = |stats: &[(f64, f64)]| -> Vec<f64> { stats.iter().map(|(m, se)| m / se).collect() };
    let reverse = z(&one_buffer_deviation(false, 10_000));
    let forward = z(&one_buffer_deviation(true, 10_000));
    let secs = started.elapsed().as_secs_f64();
    let max_rev = reverse.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let max_fwd = forward.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    check(
        max_rev <= 4.0 && max_fwd > 4.0 && secs <= 30.0,
        format!(
            "reverse max |z| = {max_rev:.2} (<= 4), forward max |z| = {max_fwd:.2} (> 4); {secs:.1}s (<= 30s)"
        ),
    )
}

fn rate() -> Outcome {
    let started = Instant::now();
    let horizons = [100_000usize, 400_000, 1_600_000];
    let mut points = Vec::new();
    for t in horizons {
        let curves = experiment(&[
            "--T",
            &t.to_string(),
            "--estimators",
            "sgd_rer",
            "--seeds",
            "1,2,3,4,5,6,7,8,9,10",
        ]);
        let mean = summarize(&curves)[0].mean_param_err;
        points.push(((t as f64).ln(), mean.ln()));
    }
    let secs = started.elapsed().as_secs_f64();
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let slope = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
        / points.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let errs: Vec<String> = points
        .iter()
        .map(|p| format!("{:.3e}", p.1.exp()))
        .collect();
    check(
        (-0.65..=-0.35).contains(&slope) && secs <= 120.0,
        format!(
            "log-log slope {slope:.3} in [-0.65, -0.35]; mean param_err {}; {secs:.1}s (<= 120s)",
            errs.join(", ")
        ),
    )
}

fn bias_decay() -> Outcome {
    let d = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let a_star = rand_bimod(d, 0.9, &mut rng).unwrap();
    let (b, r) = (20usize, d as f64);
    let gamma = 1.0 / (8.0 * r);
    let mut state = RerState::zeros(d, 0);
    let mut errors = vec![svd_norm(&a_star)];
    for _ in 0..20 {
        let pairs: Vec<(Vector, Vector)> = (0..b)
            .map(|_| {
                let x = Vector::from_vec((0..d).map(|_| rng.random_range(-1.0..1.0)).collect());
                let y = a_star.mul_vec(&x).unwrap();
                (x, y)
            })
            .collect();
        state.process_pairs(&pairs, gamma, r).unwrap();
        errors.push(svd_norm(&state.current().sub(&a_star).unwrap()));
    }
    let decreasing = errors.windows(2).all(|w| w[1] < w[0]);
    let ratio = errors[20] / errors[0];
    check(
        decreasing && ratio <= 0.5,
        format!("strictly decreasing: {decreasing}; final/initial = {ratio:.3e} (<= 0.5)"),
    )
}

fn ols_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let eps = 1e-8;
    let mut worst = 0.0f64;
    for stream_seed in 0..20u64 {
        let d = rng.random_range(1..=8);
        let norm = rng.random_range(0.1..0.95);
        let a_star = random_with_norm(&mut rng, d, norm);
        let spec = SystemSpec::new(a_star, random_spd(&mut rng, d, 0.1)).unwrap();
        let samples: Vec<Vector> = VarStream::from_seed(&spec, StartMode::Stationary, stream_seed)
            .unwrap()
            .take(1001)
            .collect();
        let pairs = transitions(&samples);
        let mut state = OlsState::new(d, eps).unwrap();
        for (k, (x, y)) in pairs.iter().enumerate() {
            state.update(x, y).unwrap();
            if (k + 1) % 100 == 0 {
                let diff = max_abs_diff(&state.estimate(), &batch_ols(&pairs[..=k], eps));
                worst = worst.max(diff);
            }
        }
    }
    check(
        worst <= 1e-6,
        format!("max |online - batch| over 20 streams x 10 checkpoints = {worst:.2e} (<= 1e-6)"),
    )
}

fn lyapunov_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(66);
    let mut worst_res = 0.0f64;
    let mut worst_eig = f64::INFINITY;
    let mut worst_mc = 0.0f64;
    for _ in 0..5 {
        let d = rng.random_range(2..=6);
        let norm = rng.random_range(0.3..0.95);
        let a_star = random_with_norm(&mut rng, d, norm);
        let sigma = random_spd(&mut rng, d, 0.1);
        let g = solve_lyapunov(&a_star, &sigma, DEFAULT_TOL).unwrap();
        let agat = a_star
            .matmul(&g)
            .unwrap()
            .matmul(&a_star.transpose())
            .unwrap();
        let residual = g.sub(&agat).unwrap().sub(&sigma).unwrap().frobenius_norm();
        worst_res = worst_res.max(residual / g.frobenius_norm());
        worst_eig = worst_eig.min(sym_eigenvalues(&g.sub(&sigma).unwrap())[0]);

        let delta = gaussian_matrix(&mut rng, d, d).scale(0.1);
        let a_hat = a_star.add(&delta).unwrap();
        let exact = pred_excess(&a_hat, &a_star, &g).unwrap();
        let l = to_na(&g).cholesky().unwrap().l();
        let dn = to_na(&delta);
        let draws = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let z = DVector::from_iterator(d, (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)));
            acc += (&dn * (&l * z)).norm_squared();
        }
        let mc = acc / draws as f64;
        worst_mc = worst_mc.max((mc - exact).abs() / exact);
    }
    check(
        worst_res <= 1e-10 && worst_eig >= -1e-10 && worst_mc <= 0.02,
        format!(
            "residual/||G||_F = {worst_res:.2e} (<= 1e-10), min lambda(G - Sigma) = {worst_eig:.3e} (>= -1e-10), pred_excess vs Monte Carlo rel. err {worst_mc:.2e} (<= 0.02)"
        ),
    )
}

fn sparse_variant() -> Outcome {
    let started = Instant::now();
    let d = 10;

    // Diagonal supports: off-support entries stay exactly zero.
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let diag: Vec<f64> = (0..d).map(|_| rng.random_range(-0.9..0.9)).collect();
    let spec = SystemSpec::isotropic(Matrix::from_diag(&diag), 1.0).unwrap();
    let mut stream = VarStream::from_seed(&spec, StartMode::Stationary, 1)
        .unwrap()
        .take_samples(200_001);
    let prefix: Vec<Vector> = (0..r_prefix_len(200_000))
        .map_while(|_| stream.next_sample())
        .collect();
    let r = sysid_core::model::estimate_r(&prefix).unwrap();
    let mut run = RunSpec::new(
        EstimatorKind::SparseRer,
        HyperParams {
            horizon: 200_000,
            buffer_size: 100,
            gap: 10,
            gamma: 1.0 / (2.0 * r),
            r,
            burn_in: log_burn_in(200_000),
            alpha: 22.0,
        },
    );
    run.support = Some(SupportPattern::diagonal(d));
    let evaluator = Evaluator::for_system(&spec).unwrap();
    let mut snapshots = 0usize;
    let mut off_support = 0usize;
    let mut observer = |_: usize, s: &Snapshot| {
        snapshots += 1;
        off_support += (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .filter(|&(i, j)| i != j && s.estimate[(i, j)] != 0.0)
            .count();
    };
    run_estimator(
        &run,
        &prefix,
        &mut stream,
        &evaluator,
        1,
        Some(&mut observer),
    )
    .unwrap();

    // Two nonzeros per row: sparse vs dense replay on the same streams.
    let mut a = Matrix::zeros(d, d);
    for l in 0..d {
        a[(l, l)] = rng.random_range(-1.0..1.0);
        a[(l, (l + 3) % d)] = rng.random_range(-1.0..1.0);
    }
    let a = a.scale(0.9 / svd_norm(&a));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a_star.txt");
    let text: String = (0..d)
        .map(|i| {
            let row: Vec<String> = a.row(i).iter().map(|v| v.to_string()).collect();
            row.join(" ") + "\n"
        })
        .collect();
    fs::write(&path, text).unwrap();
    let curves = experiment(&[
        "--matrix-file",
        path.to_str().unwrap(),
        "--d",
        "10",
        "--T",
        "200000",
        "--estimators",
        "sgd_rer,sparse_rer",
        "--seeds",
        "1,2,3,4,5,6,7,8,9,10",
    ]);
    let rows = summarize(&curves);
    let dense = row(&rows, EstimatorKind::SgdRer).mean_pred_excess;
    let sparse = row(&rows, EstimatorKind::SparseRer).mean_pred_excess;
    let secs = started.elapsed().as_secs_f64();
    check(
        snapshots == (200_001 - prefix.len() - 1) / 110 && off_support == 0 && sparse <= dense,
        format!(
            "{off_support} nonzero off-support entries over {snapshots} snapshots; s_l = 2 mean pred_excess sparse {sparse:.3e} <= dense {dense:.3e}; {secs:.1}s"
        ),
    )
}

fn invariants() -> Outcome {
    // Incremental tail average against stored iterates.
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let spec = SystemSpec::isotropic(rand_bimod(4, 0.9, &mut rng).unwrap(), 1.0).unwrap();
    let samples: Vec<Vector> = VarStream::from_seed(&spec, StartMode::Stationary, 3)
        .unwrap()
        .take(40 * 110 + 1)
        .collect();
    let h = HyperParams {
        horizon: samples.len() - 1,
        buffer_size: 100,
        gap: 10,
        gamma: 1e-3,
        r: 500.0,
        burn_in: 7,
        alpha: 22.0,
    };
    let sched = schedule(&mut OrderPolicy::Reverse, 100, 10);
    let mut source = VecSource::new(4, samples);
    let mut reader = BufferReader::new(110);
    let mut state = RerState::zeros(4, h.burn_in);
    let mut stored = Vec::new();
    let mut worst_rel = 0.0f64;
    while let Some(buf) = reader.next_buffer(&mut source) {
        state.process_buffer(&buf, &sched, &h).unwrap();
        stored.push(state.current().clone());
        if stored.len() > h.burn_in {
            let mut sum = Matrix::zeros(4, 4);
            for m in &stored[h.burn_in..] {
                sum.add_scaled_in_place(1.0, m).unwrap();
            }
            let oracle = sum.scale(1.0 / (stored.len() - h.burn_in) as f64);
            let diff = state.snapshot().estimate.sub(&oracle).unwrap().max_abs();
            worst_rel = worst_rel.max(diff / oracle.max_abs());
        }
    }

    // Pair sets of the three replay orders.
    let mut pair_sets_equal = true;
    for (b, u) in [(1, 0), (3, 0), (20, 5), (100, 10), (57, 13)] {
        let reverse = schedule(&mut OrderPolicy::Reverse, b, u).sorted_pairs();
        let forward = schedule(&mut OrderPolicy::Forward, b, u).sorted_pairs();
        let random = schedule(
            &mut OrderPolicy::Random(ChaCha8Rng::seed_from_u64(b as u64)),
            b,
            u,
        )
        .sorted_pairs();
        pair_sets_equal &= reverse == forward && reverse == random && reverse.len() == b;
    }

    // Repeated harness runs, also with a different worker count.
    let args = |threads: &'static str| {
        vec![
            "--T",
            "50000",
            "--seeds",
            "1,2,3",
            "--estimators",
            "sgd_rer,sgd,sgd_er,ols,sparse_rer",
            "--threads",
            threads,
        ]
    };
    let csv = |a: Vec<&str>| {
        run_experiment(&parse_config(a).unwrap())
            .unwrap()
            .csv_bytes()
            .unwrap()
    };
    let first = csv(args("1"));
    let identical = first == csv(args("1")) && first == csv(args("3"));

    check(
        worst_rel <= 1e-12 && pair_sets_equal && identical,
        format!(
            "tail average rel. diff {worst_rel:.2e} (<= 1e-12); schedule pair sets equal: {pair_sets_equal}; byte-identical reruns: {identical}"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("estimator comparison at T = 1e6", comparison),
        ("reverse-order unbiasedness", unbiasedness),
        ("error rate in T", rate),
        ("noise-free bias decay", bias_decay),
        ("online OLS equals batch OLS", ols_equivalence),
        ("Lyapunov and metric identities", lyapunov_identities),
        ("sparse variant", sparse_variant),
        (
            "tail-average, schedule and determinism invariants",
            invariants,
        ),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match outcome {
            Ok(detail) => println!("[PASS] criterion {}: {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("[FAIL] criterion {}: {name}: {detail}", i + 1);
            }
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
