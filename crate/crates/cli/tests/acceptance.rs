//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fails.

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use clap::Parser;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use streamopt::calibrate::{fit_linear, t_real, MeasurementRecord};
use streamopt::cost::{cost_s, cost_t, extreme_schemes, StorageConfig};
use streamopt::optimize::{optimize, OptimizerConfig};
use streamopt::oracle::{enumerate_optimal, mc_prescale_check, Objective, OracleLimits};
use streamopt::relax::{loss_gradient, relaxed_loss, SoftAssignment};
use streamopt::{Dataset, EventLineIncidence, LineCatalog, LineRecord, Scheme};
use streamopt_cli::format::write_scheme;
use streamopt_cli::synth::{generate, scrambled_scheme, SyntheticSpec};
use streamopt_cli::{run, Cli};

struct Outcome {
    passed: bool,
    detail: String,
}

fn check(name: &str, budget: Option<Duration>, f: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let outcome = f();
    let elapsed = start.elapsed();
    let in_time = budget.is_none_or(|b| elapsed <= b);
    let passed = outcome.passed && in_time;
    let budget_note = budget.map_or(String::new(), |b| format!(" (budget {:.0}s)", b.as_secs_f64()));
    println!(
        "{} {name}: {} [{:.1}s{budget_note}]",
        if passed { "PASS" } else { "FAIL" },
        outcome.detail,
        elapsed.as_secs_f64()
    );
    passed
}

struct Shape {
    max_modules: usize,
    max_lines_per_module: usize,
    max_events: usize,
    min_modules: usize,
}

fn random_dataset(rng: &mut ChaCha8Rng, shape: &Shape) -> Dataset {
    loop {
        let n_modules = rng.gen_range(shape.min_modules..=shape.max_modules);
        let mut lines = Vec::new();
        for m in 0..n_modules {
            for j in 0..rng.gen_range(1..=shape.max_lines_per_module) {
                let prescale = if rng.gen_bool(0.4) { rng.gen_range(0.05..1.0) } else { 1.0 };
                let persist = rng.gen_bool(0.3);
                lines.push(
                    LineRecord::new(format!("m{m}_l{j}"), format!("m{m}"))
                        .with_prescale(prescale)
                        .with_flags(!persist || rng.gen_bool(0.5), persist),
                );
            }
        }
        let rates: Vec<f64> = (0..lines.len()).map(|_| rng.gen_range(0.02..0.4)).collect();
        let n_events = rng.gen_range(1..=shape.max_events);
        let rows: Vec<Vec<usize>> = (0..n_events)
            .map(|_| (0..lines.len()).filter(|&l| rng.gen_bool(rates[l])).collect())
            .collect();
        let (inc, _) = EventLineIncidence::from_rows(lines.len(), rows).unwrap();
        if inc.n_events() > 0 {
            return Dataset::new(inc, LineCatalog::new(lines)).unwrap();
        }
    }
}

fn random_scheme(rng: &mut ChaCha8Rng, n_units: usize, n_streams: usize) -> Scheme {
    Scheme::new(n_streams, (0..n_units).map(|_| rng.gen_range(0..n_streams)).collect()).unwrap()
}

fn t_of(ds: &Dataset, scheme: &Scheme) -> f64 {
    cost_t(ds.incidence(), ds.catalog(), scheme).unwrap().total
}

fn s_of(ds: &Dataset, scheme: &Scheme) -> f64 {
    cost_s(ds.incidence(), ds.catalog(), scheme, &StorageConfig::default()).unwrap().total
}

fn integer_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let shape = Shape { max_modules: 20, max_lines_per_module: 3, max_events: 500, min_modules: 1 };
    let mut worst = 0.0f64;
    let n = 200;
    for _ in 0..n {
        let ds = random_dataset(&mut rng, &shape);
        let k = rng.gen_range(1..=8);
        let scheme = random_scheme(&mut rng, ds.catalog().n_modules(), k);
        let relaxed = relaxed_loss(ds.module_incidence(), ds.catalog(), &SoftAssignment::one_hot(&scheme))
            .unwrap()
            .value;
        let exact = t_of(&ds, &scheme);
        worst = worst.max((relaxed - exact).abs() / exact.abs().max(1.0));
    }
    Outcome {
        passed: worst <= 1e-9,
        detail: format!("{n} instances, worst relative difference {worst:.2e} (tolerance 1e-9)"),
    }
}

fn gradient() -> Outcome {
    const STEP: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let shape = Shape { max_modules: 20, max_lines_per_module: 3, max_events: 200, min_modules: 1 };
    let normal = rand_distr::Normal::new(0.0, 1.0).unwrap();
    let n = 50;
    let mut worst = 0.0f64;
    for _ in 0..n {
        let ds = random_dataset(&mut rng, &shape);
        let k = rng.gen_range(1..=8);
        let logits = Array2::from_shape_simple_fn((ds.catalog().n_modules(), k), || {
            rand_distr::Distribution::sample(&normal, &mut rng)
        });
        let loss = |l: &Array2<f64>| {
            relaxed_loss(ds.module_incidence(), ds.catalog(), &SoftAssignment::from_logits(l.clone()).unwrap())
                .unwrap()
                .value
        };
        let soft = SoftAssignment::from_logits(logits.clone()).unwrap();
        let analytic = loss_gradient(ds.module_incidence(), ds.catalog(), &soft).unwrap();
        let mut max_diff = 0.0f64;
        let mut scale = 0.0f64;
        for idx in ndarray::indices_of(&logits) {
            let (mut plus, mut minus) = (logits.clone(), logits.clone());
            plus[idx] += STEP;
            minus[idx] -= STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
            max_diff = max_diff.max((analytic[idx] - numeric).abs());
            scale = scale.max(numeric.abs());
        }
        let err = if scale == 0.0 { max_diff } else { max_diff / scale };
        worst = worst.max(err);
    }
    Outcome {
        passed: worst < 1e-5,
        detail: format!("{n} instances, worst relative error {worst:.2e} (tolerance 1e-5)"),
    }
}

fn oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let shape = Shape { max_modules: 8, max_lines_per_module: 3, max_events: 300, min_modules: 3 };
    let n = 50;
    let (mut exact_hits, mut worst) = (0, 0.0f64);
    for i in 0..n {
        let ds = random_dataset(&mut rng, &shape);
        let k = rng.gen_range(2..=3);
        let best = enumerate_optimal(&ds, k, Objective::T, &StorageConfig::default(), &OracleLimits::default(), None)
            .unwrap()
            .best_cost;
        let config = OptimizerConfig::default().with_streams(k).with_restarts(20).with_seed(i as u64);
        let found = optimize(ds.module_incidence(), ds.catalog(), &config).unwrap().best_cost_discrete.total;
        let gap = found / best - 1.0;
        if gap <= 1e-9 {
            exact_hits += 1;
        } else {
            worst = worst.max(gap);
        }
    }
    Outcome {
        passed: exact_hits * 100 >= 95 * n && worst <= 0.01,
        detail: format!("{exact_hits}/{n} exact optima, worst gap otherwise {:.3}% (need >= 95%, <= 1%)", worst * 100.0),
    }
}

fn expectation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let shape = Shape { max_modules: 6, max_lines_per_module: 3, max_events: 60, min_modules: 1 };
    let n = 20;
    let mut agree = 0;
    let mut worst_z = 0.0f64;
    for i in 0..n {
        let ds = random_dataset(&mut rng, &shape);
        let k = rng.gen_range(1..=3);
        let scheme = random_scheme(&mut rng, ds.catalog().n_modules(), k);
        let (t, s) = (t_of(&ds, &scheme), s_of(&ds, &scheme));
        let mc = mc_prescale_check(ds.incidence(), ds.catalog(), &scheme, 100_000, 1000 + i, &StorageConfig::default())
            .unwrap();
        if mc.agrees_with(t, s, 3.0) {
            agree += 1;
        }
        for (mean, se, x) in [(mc.mean_t, mc.stderr_t, t), (mc.mean_s, mc.stderr_s, s)] {
            if se > 0.0 {
                worst_z = worst_z.max((mean - x).abs() / se);
            }
        }
    }
    Outcome {
        passed: agree == n,
        detail: format!("{agree}/{n} instances within 3 standard errors (10^5 samples), largest deviation {worst_z:.2} SE"),
    }
}

fn extremes() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(400);
    let shape = Shape { max_modules: 10, max_lines_per_module: 3, max_events: 200, min_modules: 2 };
    let (mut extreme_ok, mut extreme_checks) = (0, 0);
    let (mut merge_ok, mut split_ok) = (0, 0);
    let n_perturbations = 1000;
    for _ in 0..n_perturbations {
        let ds = random_dataset(&mut rng, &shape);
        let n = ds.catalog().n_modules();
        let (single, per_unit) = extreme_schemes(ds.catalog());
        let k = rng.gen_range(1..=n.min(5));
        let scheme = random_scheme(&mut rng, n, k);
        let (t, s) = (t_of(&ds, &scheme), s_of(&ds, &scheme));
        extreme_checks += 1;
        if t_of(&ds, &per_unit) <= t * (1.0 + 1e-12) && s_of(&ds, &single) <= s * (1.0 + 1e-12) {
            extreme_ok += 1;
        }

        let (a, b) = (rng.gen_range(0..k), rng.gen_range(0..k));
        let merged: Vec<usize> = scheme.assignment().iter().map(|&x| if x == b { a } else { x }).collect();
        if t_of(&ds, &Scheme::new(k, merged).unwrap()) >= t * (1.0 - 1e-12) {
            merge_ok += 1;
        }
        let target = rng.gen_range(0..k);
        let split: Vec<usize> = scheme
            .assignment()
            .iter()
            .map(|&x| if x == target && rng.gen_bool(0.5) { k } else { x })
            .collect();
        if s_of(&ds, &Scheme::new(k + 1, split).unwrap()) >= s * (1.0 - 1e-12) {
            split_ok += 1;
        }
    }
    Outcome {
        passed: extreme_ok == extreme_checks && merge_ok == n_perturbations && split_ok == n_perturbations,
        detail: format!(
            "extremes {extreme_ok}/{extreme_checks}, merges {merge_ok}/{n_perturbations}, splits {split_ok}/{n_perturbations}"
        ),
    }
}

fn run_cli(args: &[&str]) -> String {
    let cli = Cli::try_parse_from(std::iter::once("streamopt").chain(args.iter().copied())).unwrap();
    let mut out = Vec::new();
    run(cli, &mut out).unwrap();
    String::from_utf8(out).unwrap()
}

fn column(table: &str, name: &str) -> Vec<f64> {
    let mut lines = table.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let i = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(i).unwrap().parse().unwrap()).collect()
}

fn stream_count_sweep(dir: &Path) -> Outcome {
    let spec = SyntheticSpec {
        n_events: 10_000,
        n_modules: 20,
        n_clusters: 5,
        seed: 1,
        ..SyntheticSpec::default()
    };
    let generated = generate(&spec).unwrap();
    let instance = dir.join("planted.csv");
    fs::write(&instance, generated.to_instance_text()).unwrap();
    let instance = instance.to_str().unwrap();
    let catalog = generated.catalog();
    let scrambled = dir.join("scrambled.csv");
    fs::write(&scrambled, write_scheme(&catalog, &scrambled_scheme(&generated.planted, 7))).unwrap();

    let sweep = run_cli(&["sweep", "--instance", instance, "--streams", "1,2,3,4,5,6,7,8", "--restarts", "20"]);
    let t = column(&sweep, "T");
    let pairs = t.len() - 1;
    let non_increasing = t.windows(2).filter(|w| w[1] <= w[0]).count();

    let compare = run_cli(&[
        "compare", "--instance", instance, "--baseline", scrambled.to_str().unwrap(), "--restarts", "20",
    ]);
    let t_norm = column(&compare, "T_norm")[1];
    Outcome {
        passed: non_increasing * 10 >= 9 * pairs && t_norm < 1.0,
        detail: format!(
            "sweep T non-increasing in {non_increasing}/{pairs} consecutive pairs (T from {:.0} to {:.0}); \
             optimized T / scrambled T = {t_norm:.4} at 5 streams",
            t[0],
            t[pairs]
        ),
    }
}

fn calibration() -> Outcome {
    let x = [0.5, 1.0, 2.0, 3.5, 7.0, 11.0];
    let y: Vec<f64> = x.iter().map(|v| 4.0 * v - 3.0).collect();
    let fit = fit_linear(&x, &y).unwrap();
    let record = |stream: &str, n_lines, time| MeasurementRecord {
        scheme_id: "example".into(),
        stream_id: stream.into(),
        measured_time: time,
        measured_size: 0.0,
        n_lines,
        model_t_term: 0.0,
        model_s_term: 0.0,
    };
    let t = t_real(&[record("a", 2, 19.0), record("b", 1, 14.0)], 9.0).unwrap();
    let fit_ok = (fit.slope - 4.0).abs() <= 1e-12 && (fit.intercept + 3.0).abs() <= 1e-12 && fit.r_squared == 1.0;
    Outcome {
        passed: fit_ok && t == 25.0,
        detail: format!(
            "slope {} intercept {} R^2 {}; t_real of the worked example = {t}",
            fit.slope, fit.intercept, fit.r_squared
        ),
    }
}

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let results = [
        check("integer-equivalence", Some(Duration::from_secs(30)), integer_equivalence),
        check("gradient", Some(Duration::from_secs(60)), gradient),
        check("oracle", Some(Duration::from_secs(300)), oracle),
        check("expectation", None, expectation),
        check("extremes", None, extremes),
        check("stream-count-sweep", Some(Duration::from_secs(600)), || stream_count_sweep(dir.path())),
        check("calibration", None, calibration),
    ];
    let failed = results.iter().filter(|&&ok| !ok).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
