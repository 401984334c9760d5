//! End-to-end acceptance criteria. Each criterion prints one PASS/FAIL line;
//! the test fails if any criterion fails. Run with `--nocapture` to see them.

mod support;

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use dynhaz::data::density_from_hazards;
use dynhaz::dist::{ln_gamma, rng_from_seed};
use dynhaz::evaluate::defined_reference;
use dynhaz::{
    aggregate, generate, l_measure, np_hazard, prior_correlation, run_chain, sample_prior, true_hazard, BepPrior,
    Cell, ChainConfig, Grid, SimDesign, SufficientStats, TimeWindow,
};
use ndarray::array;
use support::{enumerate_posterior, mc_se};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let (mx, vx) = mean_var(x);
    let (my, vy) = mean_var(y);
    let cov = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (x.len() as f64 - 1.0);
    cov / (vx * vy).sqrt()
}

fn prior_marginal() -> Outcome {
    let start = Instant::now();
    let grid = Grid::new(5, 5, 0).unwrap();
    let prior = BepPrior::constant(2.0, 3.0, 1, 1, 2, &grid).unwrap();
    let mut rng = rng_from_seed(101);
    let cell = Cell::new(3, 3);
    let draws: Vec<f64> = (0..100_000)
        .map(|_| sample_prior(&prior, &grid, &mut rng).unwrap().pi[cell.ix()])
        .collect();
    let (m, v) = mean_var(&draws);
    let secs = start.elapsed().as_secs_f64();
    outcome(
        (m - 0.4).abs() <= 0.006 && (v - 0.04).abs() <= 0.003 && secs < 10.0,
        format!("mean {m:.5} (0.4 +- 0.006), variance {v:.5} (0.04 +- 0.003), {secs:.2} s (< 10 s)"),
    )
}

fn prior_correlations() -> Outcome {
    let grid = Grid::new(10, 10, 0).unwrap();
    let corr_for = |c: u32, a: Cell, b: Cell, seed: u64| {
        let prior = BepPrior::constant(1.0, 1.0, 1, 1, c, &grid).unwrap();
        let mut rng = rng_from_seed(seed);
        let (mut x, mut y) = (Vec::new(), Vec::new());
        for _ in 0..100_000 {
            let d = sample_prior(&prior, &grid, &mut rng).unwrap();
            x.push(d.pi[a.ix()]);
            y.push(d.pi[b.ix()]);
        }
        let analytic = prior_correlation(a, b, &prior, &grid).unwrap();
        (pearson(&x, &y), analytic)
    };
    let (adj, adj_exact) = corr_for(2, Cell::new(5, 5), Cell::new(5, 6), 201);
    let (dis, dis_exact) = corr_for(2, Cell::new(5, 5), Cell::new(8, 8), 202);
    let (ind, _) = corr_for(0, Cell::new(5, 5), Cell::new(5, 6), 203);
    let passed = (adj - 0.625).abs() <= 0.01
        && (dis - 0.5625).abs() <= 0.01
        && ind.abs() <= 0.01
        && (adj_exact - 0.625).abs() < 1e-15
        && (dis_exact - 0.5625).abs() < 1e-15;
    outcome(
        passed,
        format!("overlapping {adj:.4} (0.625), disjoint {dis:.4} (0.5625), independent {ind:.4} (0) +- 0.01"),
    )
}

fn gibbs_exactness() -> Outcome {
    let start = Instant::now();
    let grid = Grid::new(2, 2, 0).unwrap();
    let prior = BepPrior::constant(1.0, 1.0, 1, 1, 1, &grid).unwrap();
    let stats = SufficientStats::new(grid, array![[1, 2], [1, 0]], array![[3, 3], [2, 1]]).unwrap();
    let config = ChainConfig::new(51_000, 1_000, 1, 301).unwrap();
    let s = run_chain(&prior, &grid, &stats, &config).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let exact = enumerate_posterior(1.0, 1.0, 1, 1, prior.c(), stats.deaths(), stats.at_risk());
    let ups = s.upsilon_draws.as_ref().unwrap();
    let mut worst: f64 = 0.0;
    for cell in grid.cells() {
        let pi = s.pi_trace(cell).unwrap();
        let u: Vec<f64> = ups.column(grid.flat_index(cell)).iter().map(|&v| v as f64).collect();
        for (trace, want) in [(pi, exact.pi_mean[cell.ix()]), (u, exact.upsilon_mean[cell.ix()])] {
            let got = trace.iter().sum::<f64>() / trace.len() as f64;
            worst = worst.max((got - want).abs() / mc_se(&trace));
        }
    }
    outcome(
        worst <= 3.0 && s.n_draws() == 50_000 && secs < 30.0,
        format!("50000 draws, max |chain - exact| = {worst:.2} MC SE (<= 3), {secs:.2} s (< 30 s)"),
    )
}

fn simulated_stats(n_per_time: usize, n_times: usize, n_forecast: usize) -> (SimDesign, SufficientStats) {
    let design = SimDesign {
        n_per_time,
        n_times,
        ..SimDesign::default()
    };
    let records = generate(&design).unwrap();
    let grid = Grid::new(design.max_age, n_times, 0).unwrap();
    (design, aggregate(&records, &grid).unwrap().with_forecast(n_forecast))
}

fn frequentist_reduction() -> Outcome {
    let (_, stats) = simulated_stats(200, 5, 0);
    let grid = *stats.grid();
    let prior = BepPrior::constant(0.001, 0.001, 1, 1, 0, &grid).unwrap();
    let s = run_chain(&prior, &grid, &stats, &ChainConfig::standard(401)).unwrap();
    let np = np_hazard(&stats);
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for cell in grid.cells() {
        if stats.at_risk_at(cell) >= 20 {
            worst = worst.max((s.mean[cell.ix()] - np[cell.ix()].unwrap()).abs());
            n += 1;
        }
    }
    outcome(worst < 0.01 && n > 0, format!("max |E(pi|x) - r/m| = {worst:.5} over {n} cells with m >= 20 (< 0.01)"))
}

fn censoring_rates() -> Outcome {
    let design = SimDesign::default();
    let records = generate(&design).unwrap();
    let rate = |t: usize| {
        let at: Vec<_> = records.iter().filter(|r| r.time == t).collect();
        at.iter().filter(|r| !r.exact).count() as f64 / at.len() as f64
    };
    let n = design.n_per_time as f64;
    let band = |p0: f64| 3.0 * (p0 * (1.0 - p0) / n).sqrt();
    let (r1, r15) = (rate(1), rate(15));
    let (b1, b15) = (band(0.0289), band(0.3308));
    let (e1, e15) = (censored_probability(&design, 1), censored_probability(&design, 15));
    outcome(
        (r1 - 0.0289).abs() <= b1 && (r15 - 0.3308).abs() <= b15,
        format!(
            "t=1: {:.2}% (2.89% +- {:.2}%), t=15: {:.2}% (33.08% +- {:.2}%); exact probability under the simulated indicator {:.2}% / {:.2}%",
            100.0 * r1,
            100.0 * b1,
            100.0 * r15,
            100.0 * b15,
            100.0 * e1,
            100.0 * e15
        ),
    )
}

fn po_plus_pmf(lambda: f64, z: usize) -> f64 {
    let y = z as f64 - 1.0;
    (-lambda + y * lambda.ln() - ln_gamma(y + 1.0)).exp()
}

/// P(record censored) with exact = I(Z <= C) and values above max_age
/// censored at max_age.
fn censored_probability(design: &SimDesign, t: usize) -> f64 {
    let mut total = 0.0;
    for z in 1..=150 {
        for c in 1..=150 {
            if c < z || z.min(c) > design.max_age {
                total += po_plus_pmf(design.lambda(t), z) * po_plus_pmf(design.lambda_censor, c);
            }
        }
    }
    total
}

fn l_ordering() -> Outcome {
    let (design, stats) = simulated_stats(200, 8, 0);
    let grid = *stats.grid();
    let truth = defined_reference(&design.true_hazards(grid.total_times()).unwrap());
    let l_in = |c: u32, seed: u64| {
        let prior = BepPrior::constant(0.001, 0.001, 1, 4, c, &grid).unwrap();
        let s = run_chain(&prior, &grid, &stats, &ChainConfig::standard(seed)).unwrap();
        l_measure(&s, &truth, 0.5, TimeWindow::in_sample(&grid)).unwrap().value
    };
    let (dep, ind) = (l_in(5, 601), l_in(0, 602));
    outcome(dep < ind, format!("L_in(1/2): p=1, q=4, c=5 gives {dep:.6}; c=0 gives {ind:.6}"))
}

fn forecast_sanity() -> Outcome {
    let (design, stats) = simulated_stats(200, 8, 2);
    let grid = *stats.grid();
    let truth = defined_reference(&design.true_hazards(grid.total_times()).unwrap());
    let window = TimeWindow::out_of_sample(&grid).unwrap();
    let fit = |c: u32, seed: u64| {
        let prior = BepPrior::constant(0.001, 0.001, 1, 4, c, &grid).unwrap();
        run_chain(&prior, &grid, &stats, &ChainConfig::standard(seed)).unwrap()
    };
    let dep = fit(5, 701);
    let ind = fit(0, 702);
    let in_unit = window
        .times()
        .flat_map(|t| (1..=grid.n_ages()).map(move |x| Cell::new(x, t)))
        .all(|cell| {
            let m = dep.mean[cell.ix()];
            m.is_finite() && m > 0.0 && m < 1.0
        });
    let l_dep = l_measure(&dep, &truth, 0.5, window).unwrap().value;
    let l_ind = l_measure(&ind, &truth, 0.5, window).unwrap().value;
    outcome(
        in_unit && l_dep < l_ind,
        format!("forecast means in (0,1): {in_unit}; L_out(1/2) c=5 {l_dep:.6} vs c=0 {l_ind:.6}"),
    )
}

fn performance() -> Outcome {
    let (_, stats) = simulated_stats(1_000, 17, 0);
    let grid = *stats.grid();
    let prior = BepPrior::constant(0.001, 0.001, 10, 8, 5, &grid).unwrap();
    let start = Instant::now();
    let s = run_chain(&prior, &grid, &stats, &ChainConfig::standard(801)).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        secs < 120.0 && s.n_draws() == 4_000,
        format!("18000 iterations on 18x17, p=10, q=8, c=5: {secs:.2} s (< 120 s)"),
    )
}

fn run_cli(args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_dynhaz"))
        .args(args)
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let mut failures = Vec::new();
    for run in ["a", "b"] {
        let base = root.path().join(run);
        let d = |name: &str| base.join(name).to_string_lossy().into_owned();
        let (sim, fit, fc, lm, sw, dg) = (d("sim"), d("fit"), d("forecast"), d("lmeasure"), d("sweep"), d("diagnose"));
        let records = format!("{sim}/records.csv");
        let truth = format!("{sim}/true_hazard.csv");
        let fc_draws = format!("{fc}/draws.csv");
        let fit_omega = format!("{fit}/omega.csv");
        let chain = ["--iterations", "300", "--burn-in", "100", "--thinning", "2", "--seed", "9"];
        let steps: Vec<Vec<&str>> = vec![
            vec!["simulate", "--out", &sim, "--n-per-time", "150", "--n-times", "4", "--forecast", "1", "--seed", "9"],
            [&["fit", "--out", &fit, "--records", &records, "--p", "2", "--q", "2", "--c", "3"][..], &chain].concat(),
            [&["forecast", "--out", &fc, "--records", &records, "--forecast", "1"][..], &chain].concat(),
            vec!["lmeasure", "--out", &lm, "--draws", &fc_draws, "--n-times", "4", "--reference", &truth],
            [&["sweep", "--out", &sw, "--records", &records, "--reference", &truth, "--forecast", "1",
                "--p-values", "1,2", "--q-values", "1", "--c-values", "0,2", "--jobs", "2"][..], &chain].concat(),
            vec!["diagnose", "--out", &dg, "--omega", &fit_omega],
        ];
        for step in steps {
            if !run_cli(&step) {
                failures.push(format!("{} failed", step[0]));
            }
        }
    }
    let mut compared = 0;
    for cmd in ["sim", "fit", "forecast", "lmeasure", "sweep", "diagnose"] {
        let a = root.path().join("a").join(cmd);
        let b = root.path().join("b").join(cmd);
        if !a.exists() || !b.exists() {
            continue;
        }
        // manifests hold run-specific paths; compare them with the run directory masked
        let mask = |files: Vec<(String, Vec<u8>)>, run: &str| {
            let from = root.path().join(run).to_string_lossy().into_owned();
            files
                .into_iter()
                .map(|(n, bytes)| {
                    let text = String::from_utf8_lossy(&bytes).replace(&from, "<run>");
                    (n, text.into_bytes())
                })
                .collect::<Vec<_>>()
        };
        let (fa, fb) = (mask(dir_bytes(&a), "a"), mask(dir_bytes(&b), "b"));
        if fa != fb {
            failures.push(format!("{cmd} outputs differ"));
        }
        compared += fa.len();
    }
    outcome(
        failures.is_empty() && compared > 0,
        if failures.is_empty() {
            format!("6 subcommands, {compared} files byte-identical across two runs")
        } else {
            failures.join("; ")
        },
    )
}

fn round_trip() -> Outcome {
    let mut worst: f64 = 0.0;
    let design = SimDesign::default();
    for t in 1..=design.n_times {
        let lambda = design.lambda(t);
        let hazards: Vec<f64> = (1..=40).map(|x| true_hazard(lambda, x).unwrap()).collect();
        let density = density_from_hazards(&hazards);
        for (k, f) in density.iter().enumerate() {
            let y = k as f64;
            let pmf = (-lambda + y * lambda.ln() - ln_gamma(y + 1.0)).exp();
            worst = worst.max((f - pmf).abs());
        }
    }
    outcome(worst <= 1e-12, format!("max |f(x) - pmf(x)| = {worst:.2e} for x = 1..40 over 15 rates (<= 1e-12)"))
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        ("prior marginal", prior_marginal),
        ("prior correlation", prior_correlations),
        ("gibbs exactness", gibbs_exactness),
        ("frequentist reduction", frequentist_reduction),
        ("censoring rates", censoring_rates),
        ("l-measure ordering", l_ordering),
        ("forecast sanity", forecast_sanity),
        ("performance", performance),
        ("determinism", determinism),
        ("hazard-density round trip", round_trip),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check();
        let tag = if o.passed { "PASS" } else { "FAIL" };
        println!("{tag} [{:>2}] {name}: {}", i + 1, o.detail);
        if !o.passed {
            failed.push(*name);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
