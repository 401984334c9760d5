//! Gibbs sampler for the joint posterior of `(omega, v, pi)`.
//!
//! One sweep updates, in order: the anchor `omega` from its beta
//! conditional, every latent `v[x,t]` in row-major order from its discrete
//! conditional on `{0, ..., c[x,t]}`, and every hazard `pi[x,t]` in row-major
//! order from its beta conditional. Forecast columns are ordinary cells with
//! `r = m = 0`, so they are predicted by the same sweep.
//!
//! The latent conditional is evaluated on the log scale. Neighbourhood sums
//! of `v` are cached per cell and patched whenever a latent changes, and the
//! `ln Gamma(a + k)`, `ln Gamma(b + k)` terms are tabulated over the integer
//! range the sums can take.

use ndarray::Array2;
use rand::Rng;

use crate::diagnostics::batch_means_se;
use crate::dist::{
    clamp_unit, ln_choose, ln_gamma, logit, normalize_log_weights, rng_from_seed, sample_beta,
    sample_index,
};
use crate::error::{Error, Result};
use crate::grid::{Cell, Grid};
use crate::prior::BepPrior;
use crate::data::SufficientStats;

/// Run length, burn-in, thinning and seed of a chain.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChainConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub seed: u64,
}

impl ChainConfig {
    pub fn new(iterations: usize, burn_in: usize, thinning: usize, seed: u64) -> Result<Self> {
        let cfg = ChainConfig {
            iterations,
            burn_in,
            thinning,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// 18,000 iterations, 6,000 burn-in, every third draw kept.
    pub fn standard(seed: u64) -> Self {
        ChainConfig {
            iterations: 18_000,
            burn_in: 6_000,
            thinning: 3,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("iterations must be positive".into()));
        }
        if self.thinning == 0 {
            return Err(Error::InvalidConfig("thinning must be positive".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::InvalidConfig(format!(
                "burn_in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.retained() == 0 {
            return Err(Error::InvalidConfig(format!(
                "no draws retained with iterations={}, burn_in={}, thinning={}",
                self.iterations, self.burn_in, self.thinning
            )));
        }
        Ok(())
    }

    pub fn retained(&self) -> usize {
        self.iterations.saturating_sub(self.burn_in) / self.thinning
    }
}

/// One configuration of the chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub omega: f64,
    pub upsilon: Array2<u32>,
    pub pi: Array2<f64>,
}

/// Single-chain sampler with its cached neighbourhood structure.
pub struct GibbsSampler<'a> {
    prior: &'a BepPrior,
    stats: &'a SufficientStats,
    grid: Grid,
    state: ChainState,
    reverse: Vec<Vec<usize>>,
    c: Vec<u32>,
    c_sum: Vec<u64>,
    v_sum: Vec<u64>,
    ln_gamma_a: Vec<f64>,
    ln_gamma_b: Vec<f64>,
    ln_choose: Vec<Vec<f64>>,
    weights: Vec<f64>,
    clamp_count: u64,
}

impl<'a> GibbsSampler<'a> {
    /// Start from `omega` drawn from its prior, `v = round(c * omega)` and
    /// `pi` drawn from its full conditional given those latents.
    pub fn new<R: Rng + ?Sized>(
        prior: &'a BepPrior,
        grid: &Grid,
        stats: &'a SufficientStats,
        rng: &mut R,
    ) -> Result<Self> {
        let omega = clamp_unit(sample_beta(rng, prior.a(), prior.b())).0;
        let upsilon = prior.c().mapv(|c| (f64::from(c) * omega).round() as u32);
        let state = ChainState {
            omega,
            upsilon,
            pi: Array2::from_elem(grid.shape(), 0.5),
        };
        let mut sampler = Self::with_state(prior, grid, stats, state)?;
        for flat in 0..grid.n_cells() {
            sampler.update_pi(grid.cell_at(flat), rng)?;
        }
        Ok(sampler)
    }

    /// Start from an explicit state.
    pub fn with_state(
        prior: &'a BepPrior,
        grid: &Grid,
        stats: &'a SufficientStats,
        state: ChainState,
    ) -> Result<Self> {
        prior.check_grid(grid)?;
        if stats.grid() != grid {
            return Err(Error::DimensionMismatch(format!(
                "statistics grid {:?} differs from sampler grid {:?}",
                stats.grid().shape(),
                grid.shape()
            )));
        }
        if state.upsilon.dim() != grid.shape() || state.pi.dim() != grid.shape() {
            return Err(Error::DimensionMismatch("chain state does not match the grid".into()));
        }
        if !(state.omega > 0.0 && state.omega < 1.0) {
            return Err(Error::Invariant(format!("omega {} outside (0, 1)", state.omega)));
        }
        if let Some((cell, _)) = state
            .upsilon
            .indexed_iter()
            .zip(prior.c().iter())
            .find(|((_, v), c)| **v > **c)
            .map(|(x, _)| x)
        {
            return Err(Error::Invariant(format!(
                "latent at ({}, {}) exceeds its strength",
                cell.0 + 1,
                cell.1 + 1
            )));
        }

        let n = grid.n_cells();
        let mut neighbors = Vec::with_capacity(n);
        let mut reverse = Vec::with_capacity(n);
        for cell in grid.cells() {
            let nb = prior.neighborhood(cell, grid)?;
            neighbors.push(nb.iter().map(|&c| grid.flat_index(c)).collect::<Vec<_>>());
            let rv = prior.reverse_neighborhood(cell, grid)?;
            reverse.push(rv.iter().map(|&c| grid.flat_index(c)).collect::<Vec<_>>());
        }

        let c: Vec<u32> = prior.c().iter().copied().collect();
        let ups: Vec<u32> = state.upsilon.iter().copied().collect();
        let c_sum: Vec<u64> = neighbors
            .iter()
            .map(|nb| nb.iter().map(|&j| u64::from(c[j])).sum())
            .collect();
        let v_sum: Vec<u64> = neighbors
            .iter()
            .map(|nb| nb.iter().map(|&j| u64::from(ups[j])).sum())
            .collect();

        let max_sum = c_sum.iter().copied().max().unwrap_or(0) as usize;
        let ln_gamma_a = (0..=max_sum).map(|k| ln_gamma(prior.a() + k as f64)).collect();
        let ln_gamma_b = (0..=max_sum).map(|k| ln_gamma(prior.b() + k as f64)).collect();
        let max_c = c.iter().copied().max().unwrap_or(0) as u64;
        let ln_choose = (0..=max_c)
            .map(|n| (0..=n).map(|k| ln_choose(n, k)).collect())
            .collect();

        Ok(GibbsSampler {
            prior,
            stats,
            grid: *grid,
            state,
            reverse,
            c,
            c_sum,
            v_sum,
            ln_gamma_a,
            ln_gamma_b,
            ln_choose,
            weights: Vec::with_capacity(max_c as usize + 1),
            clamp_count: 0,
        })
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn into_state(self) -> ChainState {
        self.state
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// How many times a hazard or `omega` had to be pulled back into
    /// `[1e-12, 1 - 1e-12]`.
    pub fn clamp_count(&self) -> u64 {
        self.clamp_count
    }

    fn clamped(&mut self, p: f64) -> f64 {
        let (v, hit) = clamp_unit(p);
        if hit {
            self.clamp_count += 1;
        }
        v
    }

    fn upsilon_flat(&self, j: usize) -> u32 {
        self.state.upsilon.as_slice().expect("standard layout")[j]
    }

    fn pi_flat(&self, j: usize) -> f64 {
        self.state.pi.as_slice().expect("standard layout")[j]
    }

    /// Draw `omega | v ~ Be(a + sum v, b + sum (c - v))` over the full grid.
    pub fn update_omega<R: Rng + ?Sized>(&mut self, rng: &mut R) -> f64 {
        let total_v: u64 = self.state.upsilon.iter().map(|&v| u64::from(v)).sum();
        let total_c: u64 = self.c.iter().map(|&c| u64::from(c)).sum();
        let draw = sample_beta(
            rng,
            self.prior.a() + total_v as f64,
            self.prior.b() + (total_c - total_v) as f64,
        );
        let omega = self.clamped(draw);
        self.state.omega = omega;
        omega
    }

    /// Fill `self.weights` with the normalised conditional of `v[cell]`.
    fn fill_upsilon_weights(&mut self, flat: usize) {
        let trials = self.c[flat] as usize;
        let current = u64::from(self.upsilon_flat(flat));

        let mut odds = {
            let w = self.state.omega;
            logit(self.clamped(w))
        };
        for k in 0..self.reverse[flat].len() {
            let p = self.pi_flat(self.reverse[flat][k]);
            odds += logit(self.clamped(p));
        }

        self.weights.clear();
        let choose = &self.ln_choose[trials];
        for (v, &ln_c) in choose.iter().enumerate().take(trials + 1) {
            let mut lw = ln_c + v as f64 * odds;
            for &j in &self.reverse[flat] {
                let s = (self.v_sum[j] - current) as usize + v;
                let f = self.c_sum[j] as usize - s;
                lw -= self.ln_gamma_a[s] + self.ln_gamma_b[f];
            }
            self.weights.push(lw);
        }
        normalize_log_weights(&mut self.weights);
    }

    /// Normalised conditional probabilities of `v[cell] = 0, ..., c[cell]`
    /// given the current `omega` and `pi`.
    pub fn upsilon_conditional(&mut self, cell: Cell) -> Result<Vec<f64>> {
        self.grid.check(cell)?;
        self.fill_upsilon_weights(self.grid.flat_index(cell));
        Ok(self.weights.clone())
    }

    fn set_upsilon(&mut self, flat: usize, value: u32) {
        let old = self.upsilon_flat(flat);
        if old == value {
            return;
        }
        self.state.upsilon.as_slice_mut().expect("standard layout")[flat] = value;
        // v[flat] enters the neighbourhood sum of every cell in its reverse neighbourhood
        for &j in &self.reverse[flat] {
            self.v_sum[j] = self.v_sum[j] - u64::from(old) + u64::from(value);
        }
    }

    /// Draw `v[cell]` from its discrete conditional given `omega` and `pi`.
    pub fn update_upsilon<R: Rng + ?Sized>(&mut self, cell: Cell, rng: &mut R) -> Result<u32> {
        self.grid.check(cell)?;
        let flat = self.grid.flat_index(cell);
        if self.c[flat] == 0 {
            return Ok(0);
        }
        self.fill_upsilon_weights(flat);
        let value = sample_index(rng, &self.weights) as u32;
        self.set_upsilon(flat, value);
        Ok(value)
    }

    /// Shapes of the beta conditional of `pi[cell]`:
    /// `(a + sum_N v + r, b + sum_N (c - v) + m - r)`.
    pub fn pi_conditional(&self, cell: Cell) -> Result<(f64, f64)> {
        self.grid.check(cell)?;
        let flat = self.grid.flat_index(cell);
        let r = self.stats.deaths_at(cell);
        let m = self.stats.at_risk_at(cell);
        let v = self.v_sum[flat];
        let alpha = self.prior.a() + v as f64 + r as f64;
        let beta = self.prior.b() + (self.c_sum[flat] - v) as f64 + (m - r) as f64;
        if !(alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::Invariant(format!(
                "non-positive beta shapes ({alpha}, {beta}) at {cell}"
            )));
        }
        Ok((alpha, beta))
    }

    /// Draw `pi[cell]` from its beta full conditional.
    pub fn update_pi<R: Rng + ?Sized>(&mut self, cell: Cell, rng: &mut R) -> Result<f64> {
        let (alpha, beta) = self.pi_conditional(cell)?;
        let draw = sample_beta(rng, alpha, beta);
        let value = self.clamped(draw);
        self.state.pi[cell.ix()] = value;
        Ok(value)
    }

    /// One systematic scan: `omega`, then all `v`, then all `pi`.
    pub fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        self.update_omega(rng);
        for flat in 0..self.grid.n_cells() {
            if self.c[flat] > 0 {
                self.fill_upsilon_weights(flat);
                let value = sample_index(rng, &self.weights) as u32;
                self.set_upsilon(flat, value);
            }
        }
        for flat in 0..self.grid.n_cells() {
            self.update_pi(self.grid.cell_at(flat), rng)?;
        }
        Ok(())
    }
}

/// Posterior summaries of the hazards plus the retained draws.
#[derive(Debug, Clone)]
pub struct PosteriorSummary {
    grid: Grid,
    pub mean: Array2<f64>,
    pub variance: Array2<f64>,
    pub q025: Array2<f64>,
    pub median: Array2<f64>,
    pub q975: Array2<f64>,
    /// Retained hazard draws, one row per draw, columns in row-major cell order.
    pub pi_draws: Array2<f64>,
    /// Retained latent draws, laid out like `pi_draws`; absent when the
    /// summary was rebuilt from exported hazard draws only.
    pub upsilon_draws: Option<Array2<u32>>,
    pub omega: Vec<f64>,
    pub clamp_count: u64,
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], prob: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * prob;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl PosteriorSummary {
    /// Summarise retained draws (rows = draws, columns = cells of `grid` in
    /// row-major order).
    pub fn from_draws(
        grid: Grid,
        pi_draws: Array2<f64>,
        upsilon_draws: Option<Array2<u32>>,
        omega: Vec<f64>,
    ) -> Result<Self> {
        let (n_draws, n_cells) = pi_draws.dim();
        if n_draws == 0 {
            return Err(Error::InvalidConfig("no retained draws to summarise".into()));
        }
        if n_cells != grid.n_cells() {
            return Err(Error::DimensionMismatch(format!(
                "{n_cells} draw columns for a grid of {} cells",
                grid.n_cells()
            )));
        }
        if let Some(u) = &upsilon_draws {
            if u.dim() != pi_draws.dim() {
                return Err(Error::DimensionMismatch("latent and hazard draws differ in shape".into()));
            }
        }
        let mut mean = Array2::zeros(grid.shape());
        let mut variance = Array2::zeros(grid.shape());
        let mut q025 = Array2::zeros(grid.shape());
        let mut median = Array2::zeros(grid.shape());
        let mut q975 = Array2::zeros(grid.shape());
        let mut column = Vec::with_capacity(n_draws);
        for (flat, col) in pi_draws.columns().into_iter().enumerate() {
            let ix = grid.cell_at(flat).ix();
            column.clear();
            column.extend(col.iter().copied());
            let m = column.iter().sum::<f64>() / n_draws as f64;
            mean[ix] = m;
            variance[ix] = if n_draws > 1 {
                column.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n_draws - 1) as f64
            } else {
                0.0
            };
            column.sort_by(f64::total_cmp);
            q025[ix] = quantile_sorted(&column, 0.025);
            median[ix] = quantile_sorted(&column, 0.5);
            q975[ix] = quantile_sorted(&column, 0.975);
        }
        Ok(PosteriorSummary {
            grid,
            mean,
            variance,
            q025,
            median,
            q975,
            pi_draws,
            upsilon_draws,
            omega,
            clamp_count: 0,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n_draws(&self) -> usize {
        self.pi_draws.nrows()
    }

    /// Retained draws of one hazard.
    pub fn pi_trace(&self, cell: Cell) -> Result<Vec<f64>> {
        self.grid.check(cell)?;
        Ok(self.pi_draws.column(self.grid.flat_index(cell)).to_vec())
    }

    /// Posterior means of the latents, if they were retained.
    pub fn upsilon_mean(&self) -> Option<Array2<f64>> {
        let u = self.upsilon_draws.as_ref()?;
        let n = u.nrows() as f64;
        let mut out = Array2::zeros(self.grid.shape());
        for (flat, col) in u.columns().into_iter().enumerate() {
            out[self.grid.cell_at(flat).ix()] =
                col.iter().map(|&v| f64::from(v)).sum::<f64>() / n;
        }
        Some(out)
    }
}

/// Run one chain and summarise its retained draws.
pub fn run_chain(
    prior: &BepPrior,
    grid: &Grid,
    stats: &SufficientStats,
    config: &ChainConfig,
) -> Result<PosteriorSummary> {
    config.validate()?;
    let mut rng = rng_from_seed(config.seed);
    let mut sampler = GibbsSampler::new(prior, grid, stats, &mut rng)?;

    let n_keep = config.retained();
    let n_cells = grid.n_cells();
    let mut pi_draws = Vec::with_capacity(n_keep * n_cells);
    let mut upsilon_draws = Vec::with_capacity(n_keep * n_cells);
    let mut omega = Vec::with_capacity(n_keep);

    for iter in 1..=config.iterations {
        sampler.sweep(&mut rng)?;
        if iter > config.burn_in && (iter - config.burn_in).is_multiple_of(config.thinning) {
            let st = sampler.state();
            pi_draws.extend_from_slice(st.pi.as_slice().expect("standard layout"));
            upsilon_draws.extend_from_slice(st.upsilon.as_slice().expect("standard layout"));
            omega.push(st.omega);
        }
    }
    debug_assert_eq!(omega.len(), n_keep);

    let pi_draws = Array2::from_shape_vec((n_keep, n_cells), pi_draws)
        .map_err(|e| Error::Invariant(e.to_string()))?;
    let upsilon_draws = Array2::from_shape_vec((n_keep, n_cells), upsilon_draws)
        .map_err(|e| Error::Invariant(e.to_string()))?;
    let mut summary = PosteriorSummary::from_draws(*grid, pi_draws, Some(upsilon_draws), omega)?;
    summary.clamp_count = sampler.clamp_count();
    Ok(summary)
}

/// Residuals of the posterior-mean identity
/// `E(pi | x) = (a + sum_N E(v | x) + r) / (a + b + sum_N c + m)`,
/// both sides estimated from the same retained draws.
#[derive(Debug, Clone)]
pub struct IdentityCheck {
    /// Direct posterior mean minus the identity's right-hand side.
    pub residual: Array2<f64>,
    /// Batch-means standard error of each residual.
    pub std_error: Array2<f64>,
    /// Cells whose residual exceeds [`IdentityCheck::FLAG_SE`] standard errors.
    pub flagged: Vec<Cell>,
}

impl IdentityCheck {
    pub const FLAG_SE: f64 = 10.0;

    /// Largest `|residual| / se` over the grid.
    pub fn max_z(&self) -> f64 {
        self.residual
            .iter()
            .zip(self.std_error.iter())
            .map(|(r, s)| z_score(*r, *s))
            .fold(0.0, f64::max)
    }

    pub fn converged(&self) -> bool {
        self.flagged.is_empty()
    }
}

fn z_score(residual: f64, se: f64) -> f64 {
    if residual == 0.0 {
        0.0
    } else if se > 0.0 {
        residual.abs() / se
    } else {
        f64::INFINITY
    }
}

pub fn posterior_mean_identity_check(
    summary: &PosteriorSummary,
    prior: &BepPrior,
    stats: &SufficientStats,
) -> Result<IdentityCheck> {
    let grid = *summary.grid();
    let ups = summary.upsilon_draws.as_ref().ok_or_else(|| {
        Error::Contract("identity check needs retained latent draws".into())
    })?;
    prior.check_grid(&grid)?;
    if stats.grid() != &grid {
        return Err(Error::DimensionMismatch("statistics grid differs from the summary grid".into()));
    }
    let n = summary.n_draws();
    let mut residual = Array2::zeros(grid.shape());
    let mut std_error = Array2::zeros(grid.shape());
    let mut flagged = Vec::new();
    let mut diff = vec![0.0; n];
    for cell in grid.cells() {
        let nb: Vec<usize> = prior
            .neighborhood(cell, &grid)?
            .iter()
            .map(|&c| grid.flat_index(c))
            .collect();
        let c_sum: u64 = nb.iter().map(|&j| u64::from(prior.c()[grid.cell_at(j).ix()])).sum();
        let r = stats.deaths_at(cell) as f64;
        let m = stats.at_risk_at(cell) as f64;
        let denom = prior.a() + prior.b() + c_sum as f64 + m;
        let flat = grid.flat_index(cell);
        for (k, d) in diff.iter_mut().enumerate() {
            let v: u64 = nb.iter().map(|&j| u64::from(ups[[k, j]])).sum();
            *d = summary.pi_draws[[k, flat]] - (prior.a() + v as f64 + r) / denom;
        }
        let res = diff.iter().sum::<f64>() / n as f64;
        let se = batch_means_se(&diff);
        residual[cell.ix()] = res;
        std_error[cell.ix()] = se;
        if z_score(res, se) > IdentityCheck::FLAG_SE {
            flagged.push(cell);
        }
    }
    Ok(IdentityCheck {
        residual,
        std_error,
        flagged,
    })
}
