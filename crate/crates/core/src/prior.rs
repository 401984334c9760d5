//! The order-(p, q) dependent beta process prior.
//!
//! ```text
//! omega            ~ Be(a, b)
//! v[x,t] | omega   ~ Bin(c[x,t], omega)                       independently
//! pi[x,t] | v      ~ Be(a + sum_N v, b + sum_N (c - v))       independently
//! ```
//!
//! where `N` is the lag neighbourhood of `(x, t)`. Every `pi[x,t]` is
//! marginally Be(a, b); `c` sets how strongly neighbouring hazards move
//! together.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::dist::{clamp_unit, sample_beta};
use crate::error::{Error, Result};
use crate::grid::{neighborhood, reverse_neighborhood, Cell, Grid, Neighborhood};

#[derive(Debug, Clone, PartialEq)]
pub struct BepPrior {
    a: f64,
    b: f64,
    p: usize,
    q: usize,
    c: Array2<u32>,
}

impl BepPrior {
    /// `c` must be shaped `(n_ages, n_times + n_forecast)`; see
    /// [`BepPrior::check_grid`].
    pub fn new(a: f64, b: f64, p: usize, q: usize, c: Array2<u32>) -> Result<Self> {
        if !(a.is_finite() && a > 0.0) {
            return Err(Error::InvalidPrior(format!("a must be positive, got {a}")));
        }
        if !(b.is_finite() && b > 0.0) {
            return Err(Error::InvalidPrior(format!("b must be positive, got {b}")));
        }
        if c.is_empty() {
            return Err(Error::InvalidPrior("c matrix is empty".into()));
        }
        Ok(BepPrior { a, b, p, q, c })
    }

    /// Same strength `c` at every cell of `grid`.
    pub fn constant(a: f64, b: f64, p: usize, q: usize, c: u32, grid: &Grid) -> Result<Self> {
        Self::new(a, b, p, q, Array2::from_elem(grid.shape(), c))
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn c(&self) -> &Array2<u32> {
        &self.c
    }

    pub fn c_at(&self, cell: Cell) -> u32 {
        self.c[cell.ix()]
    }

    /// `Some(c)` when every entry of the strength matrix equals `c`.
    pub fn constant_c(&self) -> Option<u32> {
        let first = *self.c.iter().next()?;
        self.c.iter().all(|&v| v == first).then_some(first)
    }

    pub fn check_grid(&self, grid: &Grid) -> Result<()> {
        if self.c.dim() != grid.shape() {
            return Err(Error::DimensionMismatch(format!(
                "c matrix is {:?} but the grid is {:?}",
                self.c.dim(),
                grid.shape()
            )));
        }
        Ok(())
    }

    pub fn neighborhood(&self, cell: Cell, grid: &Grid) -> Result<Neighborhood> {
        neighborhood(cell, self.p, self.q, grid)
    }

    pub fn reverse_neighborhood(&self, cell: Cell, grid: &Grid) -> Result<Neighborhood> {
        reverse_neighborhood(cell, self.p, self.q, grid)
    }

    fn c_sum<'a>(&self, cells: impl IntoIterator<Item = &'a Cell>) -> u64 {
        cells.into_iter().map(|&c| u64::from(self.c_at(c))).sum()
    }
}

/// One joint draw of `(omega, v, pi)` from the prior.
#[derive(Debug, Clone)]
pub struct PriorDraw {
    pub omega: f64,
    pub upsilon: Array2<u32>,
    pub pi: Array2<f64>,
}

/// Forward-simulate the hierarchy. Hazards are clamped into
/// `[1e-12, 1 - 1e-12]` so they stay inside the open unit interval.
pub fn sample_prior<R: Rng + ?Sized>(prior: &BepPrior, grid: &Grid, rng: &mut R) -> Result<PriorDraw> {
    prior.check_grid(grid)?;
    let omega = clamp_unit(sample_beta(rng, prior.a, prior.b)).0;

    let mut upsilon = Array2::<u32>::zeros(grid.shape());
    for cell in grid.cells() {
        let trials = prior.c_at(cell);
        if trials > 0 {
            let bin = Binomial::new(u64::from(trials), omega)
                .map_err(|e| Error::Invariant(format!("binomial({trials}, {omega}): {e}")))?;
            upsilon[cell.ix()] = bin.sample(rng) as u32;
        }
    }

    let mut pi = Array2::<f64>::zeros(grid.shape());
    for cell in grid.cells() {
        let nb = prior.neighborhood(cell, grid)?;
        let v: u64 = nb.iter().map(|c| u64::from(upsilon[c.ix()])).sum();
        let cs = prior.c_sum(&nb);
        let alpha = prior.a + v as f64;
        let beta = prior.b + (cs - v) as f64;
        pi[cell.ix()] = clamp_unit(sample_beta(rng, alpha, beta)).0;
    }

    Ok(PriorDraw { omega, upsilon, pi })
}

fn correlation_from_sums(ab: f64, shared: f64, s1: f64, s2: f64) -> f64 {
    (ab * shared + s1 * s2) / ((ab + s1) * (ab + s2))
}

/// Prior correlation between the hazards at two cells.
///
/// Identical cells return exactly 1.
pub fn prior_correlation(cell1: Cell, cell2: Cell, prior: &BepPrior, grid: &Grid) -> Result<f64> {
    prior.check_grid(grid)?;
    let n1 = prior.neighborhood(cell1, grid)?;
    let n2 = prior.neighborhood(cell2, grid)?;
    if cell1 == cell2 {
        return Ok(1.0);
    }
    let shared = prior.c_sum(&n1.intersection(&n2));
    let s1 = prior.c_sum(&n1);
    let s2 = prior.c_sum(&n2);
    Ok(correlation_from_sums(
        prior.a + prior.b,
        shared as f64,
        s1 as f64,
        s2 as f64,
    ))
}

/// Correlation between interior cells (`x > p`, `t > q`) of a prior with
/// constant `c`, as a function of how many neighbourhood cells they share.
pub fn stationary_correlation(overlap_count: usize, prior: &BepPrior) -> Result<f64> {
    let c = prior.constant_c().ok_or_else(|| {
        Error::Contract("stationary correlation needs a constant c matrix".into())
    })?;
    let c = u64::from(c);
    let full = (prior.p + prior.q + 1) as u64 * c;
    Ok(correlation_from_sums(
        prior.a + prior.b,
        (overlap_count as u64 * c) as f64,
        full as f64,
        full as f64,
    ))
}
