//! Subcommands binding data, sampler, simulation, evaluation and
//! diagnostics into reproducible runs. Each run writes its outputs plus a
//! `manifest.toml` into `--out`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use ndarray::{s, Array2};

use crate::config::{
    CSpec, ChainArgs, DataArgs, DependenceArgs, DiagArgs, EvalArgs, GridArgs, RunInfo, SeedArgs,
    Settings, ShapeArgs, SimArgs, SweepArgs, TraceArgs, WindowChoice,
};
use crate::data::{aggregate, from_life_table, np_hazard, LifeTable, SufficientStats, SurvivalRecord};
use crate::diagnostics::{acf, ergodic_means, histogram, Trace};
use crate::error::{Error, Result};
use crate::evaluate::{l_measure, sweep, SweepDesign, SweepSettings, TimeWindow, WindowKind};
use crate::gibbs::{posterior_mean_identity_check, run_chain, ChainConfig, PosteriorSummary};
use crate::grid::{Cell, Grid};
use crate::io;
use crate::prior::BepPrior;
use crate::simulate::{generate, SimDesign};

pub const DEFAULT_A: f64 = 0.001;
pub const DEFAULT_B: f64 = 0.001;
pub const DEFAULT_P: usize = 1;
pub const DEFAULT_Q: usize = 1;
pub const DEFAULT_C: u32 = 5;
pub const DEFAULT_NU: f64 = 0.5;
pub const DEFAULT_BINS: usize = 30;
pub const DEFAULT_MAX_LAG: usize = 50;

#[derive(Debug, Parser)]
#[command(name = "dynhaz", version, about = "Dependent beta process hazard estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML configuration file; flags override its keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory (created if missing)
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate shifted-Poisson survival records and their true hazards
    Simulate(SimulateCmd),
    /// Fit the dependent beta process model
    Fit(FitCmd),
    /// Fit with forecast columns appended (requires --forecast > 0)
    Forecast(FitCmd),
    /// L-measure of exported hazard draws against a reference
    Lmeasure(LMeasureCmd),
    /// Fit a grid of (p, q, c) specifications and tabulate their L-measures
    Sweep(SweepCmd),
    /// Trace, ergodic mean, autocorrelation and histogram tables for one chain
    Diagnose(DiagnoseCmd),
}

#[derive(Debug, Args)]
pub struct SimulateCmd {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub sim: SimArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
}

#[derive(Debug, Args)]
pub struct FitCmd {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[command(flatten)]
    pub dependence: DependenceArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
}

#[derive(Debug, Args)]
pub struct LMeasureCmd {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub trace: TraceArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Args)]
pub struct SweepCmd {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub shape: ShapeArgs,
    #[command(flatten)]
    pub sweep: SweepArgs,
    #[command(flatten)]
    pub eval: EvalArgs,
    #[command(flatten)]
    pub chain: ChainArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
}

#[derive(Debug, Args)]
pub struct DiagnoseCmd {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub trace: TraceArgs,
    #[command(flatten)]
    pub diag: DiagArgs,
}

/// Parse arguments, run, and map the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(cmd) => cmd_simulate(cmd),
        Command::Fit(cmd) => cmd_fit(cmd, "fit"),
        Command::Forecast(cmd) => cmd_fit(cmd, "forecast"),
        Command::Lmeasure(cmd) => cmd_lmeasure(cmd),
        Command::Sweep(cmd) => cmd_sweep(cmd),
        Command::Diagnose(cmd) => cmd_diagnose(cmd),
    }
}

fn load_config(common: &Common) -> Result<Settings> {
    match &common.config {
        Some(path) => Settings::load(path),
        None => Ok(Settings::default()),
    }
}

fn prepare_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_manifest(common: &Common, command: &str, mut resolved: Settings) -> Result<()> {
    resolved.run = Some(RunInfo::now(command, common.config.as_deref()));
    io::write_text(&common.out.join("manifest.toml"), &resolved.to_toml()?)
}

fn chain_config(chain: &ChainArgs, seed: u64) -> Result<ChainConfig> {
    let d = ChainConfig::standard(seed);
    ChainConfig::new(
        chain.iterations.unwrap_or(d.iterations),
        chain.burn_in.unwrap_or(d.burn_in),
        chain.thinning.unwrap_or(d.thinning),
        seed,
    )
}

fn resolved_chain(config: &ChainConfig) -> ChainArgs {
    ChainArgs {
        iterations: Some(config.iterations),
        burn_in: Some(config.burn_in),
        thinning: Some(config.thinning),
    }
}

/// Data prepared for fitting: statistics on the extended grid (data columns
/// beyond `n_times` dropped) and the frequentist `r/m` of all supplied data
/// laid out on that grid.
struct Prepared {
    stats: SufficientStats,
    full_reference: Array2<Option<f64>>,
    grid: GridArgs,
    data: DataArgs,
}

fn reference_on(grid: &Grid, full: &SufficientStats) -> Array2<Option<f64>> {
    let np = np_hazard(full);
    Array2::from_shape_fn(grid.shape(), |(i, j)| np.get((i, j)).copied().flatten())
}

fn prepare_data(data: &DataArgs, grid: &GridArgs, n_forecast: usize) -> Result<Prepared> {
    match (&data.records, &data.deaths, &data.population) {
        (Some(records), None, None) => {
            if data.scale.is_some() {
                return Err(Error::InvalidConfig("--scale applies to life tables only".into()));
            }
            let recs = io::read_records(records)?;
            prepare_records(&recs, data, grid, n_forecast)
        }
        (None, Some(deaths), Some(population)) => {
            let deaths = io::read_matrix::<f64>(deaths)?;
            let population = io::read_matrix::<f64>(population)?;
            prepare_life_table(deaths, population, data, grid, n_forecast)
        }
        (None, None, None) => Err(Error::InvalidConfig(
            "no data: give --records, or --deaths with --population".into(),
        )),
        _ => Err(Error::InvalidConfig(
            "give either --records or both --deaths and --population".into(),
        )),
    }
}

fn prepare_records(
    recs: &[SurvivalRecord],
    data: &DataArgs,
    grid: &GridArgs,
    n_forecast: usize,
) -> Result<Prepared> {
    if recs.is_empty() {
        return Err(Error::DataIntegrity("records file contains no records".into()));
    }
    let n_ages = match grid.max_age {
        Some(n) => n,
        None => recs.iter().map(|r| r.age).max().unwrap_or(0),
    };
    let data_times = recs.iter().map(|r| r.time).max().unwrap_or(0);
    let n_times = grid.n_times.unwrap_or(data_times);
    let fit_grid = Grid::new(n_ages, n_times, n_forecast)?;
    let kept: Vec<SurvivalRecord> = recs.iter().copied().filter(|r| r.time <= n_times).collect();
    if kept.len() < recs.len() {
        info!("holding out {} records after time {n_times}", recs.len() - kept.len());
    }
    let stats = aggregate(&kept, &Grid::new(n_ages, n_times, 0)?)?.with_forecast(n_forecast);
    let full = aggregate(recs, &Grid::new(n_ages, data_times.max(n_times), 0)?)?;
    Ok(Prepared {
        full_reference: reference_on(&fit_grid, &full),
        stats,
        grid: GridArgs {
            max_age: Some(n_ages),
            n_times: Some(n_times),
        },
        data: data.clone(),
    })
}

fn prepare_life_table(
    deaths: Array2<f64>,
    population: Array2<f64>,
    data: &DataArgs,
    grid: &GridArgs,
    n_forecast: usize,
) -> Result<Prepared> {
    let scale = data.scale.unwrap_or(1.0);
    let (rows, cols) = deaths.dim();
    if population.dim() != (rows, cols) {
        return Err(Error::DimensionMismatch(format!(
            "deaths are {rows}x{cols} but population is {:?}",
            population.dim()
        )));
    }
    if let Some(n) = grid.max_age {
        if n != rows {
            return Err(Error::DimensionMismatch(format!(
                "max_age {n} but the life table has {rows} age groups"
            )));
        }
    }
    let n_times = grid.n_times.unwrap_or(cols);
    if n_times == 0 || n_times > cols {
        return Err(Error::InvalidConfig(format!(
            "n_times {n_times} outside the life table's 1..={cols} columns"
        )));
    }
    let full_table = LifeTable::new(deaths.clone(), population.clone(), scale)?;
    let full = from_life_table(&full_table, &Grid::new(rows, cols, 0)?)?;
    let fit_table = LifeTable::new(
        deaths.slice(s![.., ..n_times]).to_owned(),
        population.slice(s![.., ..n_times]).to_owned(),
        scale,
    )?;
    let stats = from_life_table(&fit_table, &Grid::new(rows, n_times, 0)?)?.with_forecast(n_forecast);
    let fit_grid = *stats.grid();
    Ok(Prepared {
        full_reference: reference_on(&fit_grid, &full),
        stats,
        grid: GridArgs {
            max_age: Some(rows),
            n_times: Some(n_times),
        },
        data: DataArgs {
            scale: Some(scale),
            ..data.clone()
        },
    })
}

fn build_prior(a: f64, b: f64, p: usize, q: usize, c: &CSpec, grid: &Grid) -> Result<BepPrior> {
    let prior = match c {
        CSpec::Constant(c) => BepPrior::constant(a, b, p, q, *c, grid)?,
        CSpec::Matrix(path) => BepPrior::new(a, b, p, q, io::read_matrix::<u32>(path)?)?,
    };
    prior.check_grid(grid)?;
    Ok(prior)
}

fn cmd_simulate(cmd: SimulateCmd) -> Result<()> {
    let cfg = load_config(&cmd.common)?;
    let sim = cmd.sim.or(&cfg.sim);
    let grid = cmd.grid.or(&cfg.grid);
    let seed = cmd.seed.or(&cfg.seed);
    let d = SimDesign::default();
    let design = SimDesign {
        lambda_base: sim.lambda_base.unwrap_or(d.lambda_base),
        lambda_slope: sim.lambda_slope.unwrap_or(d.lambda_slope),
        lambda_censor: sim.lambda_censor.unwrap_or(d.lambda_censor),
        n_per_time: sim.n_per_time.unwrap_or(d.n_per_time),
        n_times: grid.n_times.unwrap_or(d.n_times),
        max_age: grid.max_age.unwrap_or(d.max_age),
        seed: seed.seed.unwrap_or(d.seed),
    };
    let n_forecast = seed.n_forecast.unwrap_or(0);
    design.validate()?;
    let records = generate(&design)?;
    let truth = design.true_hazards(design.n_times + n_forecast)?;

    prepare_out(&cmd.common.out)?;
    io::write_records(&cmd.common.out.join("records.csv"), &records)?;
    io::write_reference(&cmd.common.out.join("true_hazard.csv"), &truth.mapv(Some))?;
    let resolved = Settings {
        sim: SimArgs {
            lambda_base: Some(design.lambda_base),
            lambda_slope: Some(design.lambda_slope),
            lambda_censor: Some(design.lambda_censor),
            n_per_time: Some(design.n_per_time),
        },
        grid: GridArgs {
            max_age: Some(design.max_age),
            n_times: Some(design.n_times),
        },
        seed: SeedArgs {
            seed: Some(design.seed),
            n_forecast: Some(n_forecast),
        },
        ..Settings::default()
    };
    write_manifest(&cmd.common, "simulate", resolved)
}

fn cmd_fit(cmd: FitCmd, command: &str) -> Result<()> {
    let cfg = load_config(&cmd.common)?;
    let data = cmd.data.or(&cfg.data);
    let grid_args = cmd.grid.or(&cfg.grid);
    let shape = cmd.shape.or(&cfg.shape);
    let dep = cmd.dependence.or(&cfg.dependence);
    let chain = cmd.chain.or(&cfg.chain);
    let seed_args = cmd.seed.or(&cfg.seed);

    let seed = seed_args.seed.unwrap_or(0);
    let n_forecast = seed_args.n_forecast.unwrap_or(0);
    if command == "forecast" && n_forecast == 0 {
        return Err(Error::InvalidConfig("forecast needs --forecast N with N > 0".into()));
    }
    let config = chain_config(&chain, seed)?;
    let prepared = prepare_data(&data, &grid_args, n_forecast)?;
    let grid = *prepared.stats.grid();
    let (a, b) = (shape.a.unwrap_or(DEFAULT_A), shape.b.unwrap_or(DEFAULT_B));
    let (p, q) = (dep.p.unwrap_or(DEFAULT_P), dep.q.unwrap_or(DEFAULT_Q));
    let c = dep.c.clone().unwrap_or(CSpec::Constant(DEFAULT_C));
    let prior = build_prior(a, b, p, q, &c, &grid)?;

    let summary = run_chain(&prior, &grid, &prepared.stats, &config)?;
    if summary.clamp_count > 0 {
        warn!("{} hazard draws were clamped away from 0 or 1", summary.clamp_count);
    }
    let check = posterior_mean_identity_check(&summary, &prior, &prepared.stats)?;
    if !check.converged() {
        warn!(
            "posterior-mean identity flags {} cells (max |z| = {:.2}); the chain may not have converged",
            check.flagged.len(),
            check.max_z()
        );
    }

    let out = &cmd.common.out;
    prepare_out(out)?;
    io::write_stats(&out.join("stats.csv"), &prepared.stats)?;
    io::write_summary(&out.join("summary.csv"), &summary)?;
    io::write_draws(&out.join("draws.csv"), &summary)?;
    io::write_omega(&out.join("omega.csv"), &summary.omega)?;
    io::write_identity(&out.join("identity.csv"), &grid, &check)?;
    io::write_reference(&out.join("reference.csv"), &prepared.full_reference)?;
    let resolved = Settings {
        shape: ShapeArgs { a: Some(a), b: Some(b) },
        dependence: DependenceArgs {
            p: Some(p),
            q: Some(q),
            c: Some(c),
        },
        chain: resolved_chain(&config),
        seed: SeedArgs {
            seed: Some(seed),
            n_forecast: Some(n_forecast),
        },
        grid: prepared.grid,
        data: prepared.data,
        ..Settings::default()
    };
    write_manifest(&cmd.common, command, resolved)
}

fn load_reference(eval: &EvalArgs, grid: &Grid) -> Result<Option<Array2<Option<f64>>>> {
    match (&eval.reference, &eval.reference_stats) {
        (Some(path), None) => io::read_reference(path, grid).map(Some),
        (None, Some(path)) => io::read_stats_reference(path, grid).map(Some),
        (None, None) => Ok(None),
        (Some(_), Some(_)) => Err(Error::InvalidConfig(
            "give at most one of --reference and --reference-stats".into(),
        )),
    }
}

fn windows_for(choice: WindowChoice, grid: &Grid) -> Result<Vec<TimeWindow>> {
    let windows = match choice {
        WindowChoice::In => vec![TimeWindow::in_sample(grid)],
        WindowChoice::Out => vec![TimeWindow::out_of_sample(grid).ok_or_else(|| {
            Error::InvalidConfig("out-of-sample window requested but the grid has no forecast columns".into())
        })?],
        WindowChoice::All => TimeWindow::all(grid),
    };
    Ok(windows)
}

fn cmd_lmeasure(cmd: LMeasureCmd) -> Result<()> {
    let cfg = load_config(&cmd.common)?;
    let trace = cmd.trace.or(&cfg.trace);
    let grid_args = cmd.grid.or(&cfg.grid);
    let eval = cmd.eval.or(&cfg.eval);
    let draws_path = trace
        .draws
        .clone()
        .ok_or_else(|| Error::InvalidConfig("lmeasure needs --draws".into()))?;
    let (grid, draws) = io::read_draws(&draws_path, grid_args.n_times)?;
    if let Some(n) = grid_args.max_age {
        if n != grid.n_ages() {
            return Err(Error::DimensionMismatch(format!(
                "max_age {n} but the draws cover {} ages",
                grid.n_ages()
            )));
        }
    }
    let reference = load_reference(&eval, &grid)?.ok_or_else(|| {
        Error::InvalidConfig("lmeasure needs --reference or --reference-stats".into())
    })?;
    let nu = eval.nu.unwrap_or(DEFAULT_NU);
    let choice = eval.window.unwrap_or(WindowChoice::All);
    let n = draws.nrows();
    let summary = PosteriorSummary::from_draws(grid, draws, None, vec![f64::NAN; n])?;
    let reports = windows_for(choice, &grid)?
        .into_iter()
        .map(|w| l_measure(&summary, &reference, nu, w))
        .collect::<Result<Vec<_>>>()?;

    prepare_out(&cmd.common.out)?;
    io::write_lmeasure(&cmd.common.out.join("lmeasure.csv"), &reports)?;
    let resolved = Settings {
        trace: TraceArgs {
            draws: Some(draws_path),
            omega: None,
        },
        grid: GridArgs {
            max_age: Some(grid.n_ages()),
            n_times: Some(grid.n_times()),
        },
        eval: EvalArgs {
            nu: Some(nu),
            window: Some(choice),
            ..eval
        },
        ..Settings::default()
    };
    write_manifest(&cmd.common, "lmeasure", resolved)
}

fn cmd_sweep(cmd: SweepCmd) -> Result<()> {
    let cfg = load_config(&cmd.common)?;
    let data = cmd.data.or(&cfg.data);
    let grid_args = cmd.grid.or(&cfg.grid);
    let shape = cmd.shape.or(&cfg.shape);
    let sweep_args = cmd.sweep.or(&cfg.sweep);
    let eval = cmd.eval.or(&cfg.eval);
    let chain = cmd.chain.or(&cfg.chain);
    let seed_args = cmd.seed.or(&cfg.seed);

    let seed = seed_args.seed.unwrap_or(0);
    let n_forecast = seed_args.n_forecast.unwrap_or(0);
    let config = chain_config(&chain, seed)?;
    let prepared = prepare_data(&data, &grid_args, n_forecast)?;
    let grid = *prepared.stats.grid();
    let reference = load_reference(&eval, &grid)?.unwrap_or_else(|| prepared.full_reference.clone());
    let (a, b) = (shape.a.unwrap_or(DEFAULT_A), shape.b.unwrap_or(DEFAULT_B));
    let nu = eval.nu.unwrap_or(DEFAULT_NU);
    let choice = eval.window.unwrap_or(WindowChoice::All);
    let windows: Vec<WindowKind> = windows_for(choice, &grid)?.iter().map(|w| w.kind).collect();
    let missing = |k: &str| Error::InvalidConfig(format!("sweep needs --{k}"));
    let design = SweepDesign {
        p_values: sweep_args.p_values.clone().ok_or_else(|| missing("p-values"))?,
        q_values: sweep_args.q_values.clone().ok_or_else(|| missing("q-values"))?,
        c_values: sweep_args.c_values.clone().ok_or_else(|| missing("c-values"))?,
    };
    let jobs = sweep_args.jobs.unwrap_or(0);
    let settings = SweepSettings {
        a,
        b,
        stats: &prepared.stats,
        chain: config,
        reference: &reference,
        nu,
        windows: windows.clone(),
        jobs,
    };
    let rows = sweep(&design, &settings)?;

    let out = &cmd.common.out;
    prepare_out(out)?;
    let names: Vec<String> = windows.iter().map(|k| k.to_string()).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    io::write_sweep(&out.join("sweep.csv"), &rows, &names, nu)?;
    let n_failed = rows.iter().filter(|r| r.outcome.is_err()).count();
    if n_failed > 0 {
        warn!("{n_failed} of {} sweep rows failed; see sweep_errors.csv", rows.len());
        io::write_sweep_errors(&out.join("sweep_errors.csv"), &rows)?;
    }
    let resolved = Settings {
        shape: ShapeArgs { a: Some(a), b: Some(b) },
        chain: resolved_chain(&config),
        seed: SeedArgs {
            seed: Some(seed),
            n_forecast: Some(n_forecast),
        },
        grid: prepared.grid,
        data: prepared.data,
        sweep: SweepArgs {
            jobs: Some(jobs),
            ..sweep_args
        },
        eval: EvalArgs {
            nu: Some(nu),
            window: Some(choice),
            ..eval
        },
        ..Settings::default()
    };
    write_manifest(&cmd.common, "sweep", resolved)
}

fn cmd_diagnose(cmd: DiagnoseCmd) -> Result<()> {
    let cfg = load_config(&cmd.common)?;
    let trace_args = cmd.trace.or(&cfg.trace);
    let diag = cmd.diag.or(&cfg.diag);
    let trace = match (&trace_args.omega, &trace_args.draws) {
        (Some(path), None) => {
            if diag.age.is_some() || diag.time.is_some() {
                return Err(Error::InvalidConfig("--age/--time apply to --draws only".into()));
            }
            Trace::new("omega", io::read_omega(path)?)?
        }
        (None, Some(path)) => {
            let (age, time) = diag
                .age
                .zip(diag.time)
                .ok_or_else(|| Error::InvalidConfig("diagnosing --draws needs --age and --time".into()))?;
            let (grid, draws) = io::read_draws(path, None)?;
            let cell = Cell::new(age, time);
            grid.check(cell)?;
            let values = draws.column(grid.flat_index(cell)).to_vec();
            Trace::new(format!("pi[{cell}]"), values)?
        }
        _ => {
            return Err(Error::InvalidConfig(
                "diagnose needs exactly one of --omega and --draws".into(),
            ))
        }
    };
    let max_lag = diag.max_lag.unwrap_or(DEFAULT_MAX_LAG).min(trace.len() - 1);
    let bins = diag.bins.unwrap_or(DEFAULT_BINS);
    let ergodic = ergodic_means(&trace);
    let rho = acf(&trace, max_lag)?;
    let hist = histogram(&trace, bins)?;

    prepare_out(&cmd.common.out)?;
    io::write_diagnostics(&cmd.common.out, trace.values(), &ergodic, &rho, &hist)?;
    let resolved = Settings {
        trace: trace_args,
        diag: DiagArgs {
            max_lag: Some(max_lag),
            bins: Some(bins),
            ..diag
        },
        ..Settings::default()
    };
    write_manifest(&cmd.common, "diagnose", resolved)
}
