//! Exact posterior by enumeration of every latent configuration.
//!
//! With the latent counts fixed, the hierarchy integrates in closed form:
//! omega leaves a beta function of the latent total, and each hazard leaves
//! the ratio of its posterior to prior beta normalisers. Summing those
//! weights over all configurations gives exact posterior means.

#![allow(dead_code)]

use dynhaz::dist::ln_gamma;
use ndarray::Array2;

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

fn ln_choose(n: u32, k: u32) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// Cells (0-based) feeding the hazard at `(i, j)`: itself, up to `p` younger
/// ages and up to `q` earlier times.
fn feeders(i: usize, j: usize, p: usize, q: usize) -> Vec<(usize, usize)> {
    let mut out = vec![(i, j)];
    out.extend((1..=p.min(i)).map(|k| (i - k, j)));
    out.extend((1..=q.min(j)).map(|k| (i, j - k)));
    out
}

pub struct Exact {
    pub pi_mean: Array2<f64>,
    pub upsilon_mean: Array2<f64>,
    pub omega_mean: f64,
}

/// `deaths`/`at_risk` cover the whole (extended) grid; forecast cells carry
/// zeros.
pub fn enumerate_posterior(
    a: f64,
    b: f64,
    p: usize,
    q: usize,
    c: &Array2<u32>,
    deaths: &Array2<u64>,
    at_risk: &Array2<u64>,
) -> Exact {
    let (nx, nt) = c.dim();
    let cells: Vec<(usize, usize)> = (0..nx).flat_map(|i| (0..nt).map(move |j| (i, j))).collect();
    let total_configs: usize = cells.iter().map(|&ix| c[ix] as usize + 1).product();
    assert!(total_configs <= 1 << 20, "too many configurations");
    let c_total: u32 = c.iter().sum();

    let mut ups = Array2::<u32>::zeros((nx, nt));
    let mut log_w = Vec::with_capacity(total_configs);
    let mut pi_terms = Vec::with_capacity(total_configs);
    let mut ups_terms = Vec::with_capacity(total_configs);
    let mut om_terms = Vec::with_capacity(total_configs);
    for code in 0..total_configs {
        let mut rest = code;
        for &ix in &cells {
            let base = c[ix] as usize + 1;
            ups[ix] = (rest % base) as u32;
            rest /= base;
        }
        let v_total: u32 = ups.iter().sum();
        let mut lw = ln_beta(a + v_total as f64, b + (c_total - v_total) as f64) - ln_beta(a, b);
        for &ix in &cells {
            lw += ln_choose(c[ix], ups[ix]);
        }
        let mut pi_m = Array2::<f64>::zeros((nx, nt));
        for &(i, j) in &cells {
            let (mut s, mut cs) = (0.0, 0.0);
            for f in feeders(i, j, p, q) {
                s += ups[f] as f64;
                cs += c[f] as f64;
            }
            let (r, m) = (deaths[[i, j]] as f64, at_risk[[i, j]] as f64);
            let (alpha, beta) = (a + s, b + cs - s);
            let (alpha_post, beta_post) = (alpha + r, beta + m - r);
            lw += ln_beta(alpha_post, beta_post) - ln_beta(alpha, beta);
            pi_m[[i, j]] = alpha_post / (alpha_post + beta_post);
        }
        log_w.push(lw);
        pi_terms.push(pi_m);
        ups_terms.push(ups.mapv(f64::from));
        om_terms.push((a + v_total as f64) / (a + b + c_total as f64));
    }
    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = w.iter().sum();
    let mut pi_mean = Array2::zeros((nx, nt));
    let mut upsilon_mean = Array2::zeros((nx, nt));
    let mut omega_mean = 0.0;
    for k in 0..total_configs {
        pi_mean.scaled_add(w[k] / z, &pi_terms[k]);
        upsilon_mean.scaled_add(w[k] / z, &ups_terms[k]);
        omega_mean += w[k] / z * om_terms[k];
    }
    Exact {
        pi_mean,
        upsilon_mean,
        omega_mean,
    }
}

/// Monte Carlo standard error of a chain average by batch means with
/// `sqrt(n)` batches.
pub fn mc_se(values: &[f64]) -> f64 {
    dynhaz::diagnostics::batch_means_se(values)
}
