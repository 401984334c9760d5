//! L-measure goodness of fit and prior-specification sweeps.
//!
//! `L(nu) = mean Var(pi | data) + nu * mean (E(pi | data) - pi0)^2` over the
//! cells of a time window, where `pi0` is a reference hazard: the truth in
//! simulations, the frequentist `r/m` for real data.

use std::fmt;

use ndarray::Array2;
use rayon::prelude::*;

use crate::data::SufficientStats;
use crate::dist::derive_seed;
use crate::error::{Error, Result};
use crate::gibbs::{run_chain, ChainConfig, PosteriorSummary};
use crate::grid::{Cell, Grid};
use crate::prior::BepPrior;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum WindowKind {
    InSample,
    OutOfSample,
}

impl fmt::Display for WindowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WindowKind::InSample => "in",
            WindowKind::OutOfSample => "out",
        })
    }
}

/// Inclusive range of 1-based time columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeWindow {
    pub kind: WindowKind,
    pub start: usize,
    pub end: usize,
}

impl TimeWindow {
    /// Observed columns `1..=n_times`.
    pub fn in_sample(grid: &Grid) -> Self {
        TimeWindow {
            kind: WindowKind::InSample,
            start: 1,
            end: grid.n_times(),
        }
    }

    /// Forecast columns `n_times + 1 ..= n_times + n_forecast`, if any.
    pub fn out_of_sample(grid: &Grid) -> Option<Self> {
        (grid.n_forecast() > 0).then(|| TimeWindow {
            kind: WindowKind::OutOfSample,
            start: grid.n_times() + 1,
            end: grid.total_times(),
        })
    }

    /// In-sample window, then the out-of-sample one when the grid forecasts.
    pub fn all(grid: &Grid) -> Vec<Self> {
        std::iter::once(Self::in_sample(grid))
            .chain(Self::out_of_sample(grid))
            .collect()
    }

    pub fn times(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end < self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LMeasureReport {
    pub nu: f64,
    pub value: f64,
    pub variance_part: f64,
    pub bias_part: f64,
    pub window: TimeWindow,
    /// Cells that entered the averages.
    pub n_cells: usize,
    /// Cells skipped because the reference is undefined there.
    pub n_excluded: usize,
}

/// Reference matrix with every cell defined.
pub fn defined_reference(truth: &Array2<f64>) -> Array2<Option<f64>> {
    truth.mapv(Some)
}

pub fn l_measure(
    summary: &PosteriorSummary,
    reference: &Array2<Option<f64>>,
    nu: f64,
    window: TimeWindow,
) -> Result<LMeasureReport> {
    let grid = summary.grid();
    if !(0.0..=1.0).contains(&nu) {
        return Err(Error::InvalidConfig(format!("nu must lie in [0, 1], got {nu}")));
    }
    if window.is_empty() || window.start == 0 || window.end > grid.total_times() {
        return Err(Error::InvalidConfig(format!(
            "window {}..={} outside times 1..={}",
            window.start,
            window.end,
            grid.total_times()
        )));
    }
    if reference.dim() != grid.shape() {
        return Err(Error::DimensionMismatch(format!(
            "reference is {:?}, posterior grid is {:?}",
            reference.dim(),
            grid.shape()
        )));
    }
    let mut var_sum = 0.0;
    let mut bias_sum = 0.0;
    let mut n_cells = 0;
    let mut n_excluded = 0;
    for age in 1..=grid.n_ages() {
        for time in window.times() {
            let ix = Cell::new(age, time).ix();
            match reference[ix] {
                Some(r) => {
                    var_sum += summary.variance[ix];
                    bias_sum += (summary.mean[ix] - r).powi(2);
                    n_cells += 1;
                }
                None => n_excluded += 1,
            }
        }
    }
    if n_cells == 0 {
        return Err(Error::DataIntegrity(format!(
            "no cell in the {} window has a defined reference",
            window.kind
        )));
    }
    let variance_part = var_sum / n_cells as f64;
    let bias_part = bias_sum / n_cells as f64;
    Ok(LMeasureReport {
        nu,
        value: variance_part + nu * bias_part,
        variance_part,
        bias_part,
        window,
        n_cells,
        n_excluded,
    })
}

/// Dependence orders and constant strengths to cross.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SweepDesign {
    pub p_values: Vec<usize>,
    pub q_values: Vec<usize>,
    pub c_values: Vec<u32>,
}

impl SweepDesign {
    /// The sorted, de-duplicated `(p, q, c)` specifications.
    pub fn specs(&self) -> Vec<(usize, usize, u32)> {
        let mut out: Vec<_> = self
            .p_values
            .iter()
            .flat_map(|&p| {
                self.q_values
                    .iter()
                    .flat_map(move |&q| self.c_values.iter().map(move |&c| (p, q, c)))
            })
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// What one sweep specification produced.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub p: usize,
    pub q: usize,
    pub c: u32,
    pub seed: u64,
    /// One report per window, or the error that stopped this chain.
    pub outcome: std::result::Result<Vec<LMeasureReport>, String>,
}

impl SweepRow {
    pub fn report(&self, kind: WindowKind) -> Option<&LMeasureReport> {
        self.outcome.as_ref().ok()?.iter().find(|r| r.window.kind == kind)
    }
}

#[derive(Debug, Clone)]
pub struct SweepSettings<'a> {
    pub a: f64,
    pub b: f64,
    pub stats: &'a SufficientStats,
    /// `seed` is the master seed; row `i` runs with `derive_seed(seed, i)`.
    pub chain: ChainConfig,
    pub reference: &'a Array2<Option<f64>>,
    pub nu: f64,
    /// Windows to report; a window absent from the grid is skipped.
    pub windows: Vec<WindowKind>,
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
}

fn sweep_one(settings: &SweepSettings<'_>, p: usize, q: usize, c: u32, seed: u64) -> Result<Vec<LMeasureReport>> {
    let grid = *settings.stats.grid();
    let prior = BepPrior::constant(settings.a, settings.b, p, q, c, &grid)?;
    let config = ChainConfig {
        seed,
        ..settings.chain
    };
    let summary = run_chain(&prior, &grid, settings.stats, &config)?;
    TimeWindow::all(&grid)
        .into_iter()
        .filter(|w| settings.windows.contains(&w.kind))
        .map(|w| l_measure(&summary, settings.reference, settings.nu, w))
        .collect()
}

/// Fit one chain per specification and report the L-measure of each window.
/// Rows come back sorted by `(p, q, c)`; a failing chain is recorded in its
/// row and the remaining rows still run.
pub fn sweep(design: &SweepDesign, settings: &SweepSettings<'_>) -> Result<Vec<SweepRow>> {
    settings.chain.validate()?;
    let specs = design.specs();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(settings.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let rows = pool.install(|| {
        specs
            .par_iter()
            .enumerate()
            .map(|(i, &(p, q, c))| {
                let seed = derive_seed(settings.chain.seed, i as u64);
                SweepRow {
                    p,
                    q,
                    c,
                    seed,
                    outcome: sweep_one(settings, p, q, c, seed).map_err(|e| e.to_string()),
                }
            })
            .collect()
    });
    Ok(rows)
}
