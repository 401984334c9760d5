//! Numerical kernels shared by the prior simulator and the Gibbs sampler:
//! log-gamma, log-space beta draws, log-sum-exp, and seeding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

/// Probabilities closer than this to 0 or 1 are clamped before taking logits.
pub const PROB_EPS: f64 = 1e-12;

/// The generator used everywhere in the crate.
pub type ChainRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> ChainRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Deterministically derive an independent seed for sub-stream `index` of a
/// master seed (SplitMix64 finaliser over the pair).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

pub fn ln_choose(n: u64, k: u64) -> f64 {
    debug_assert!(k <= n);
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

pub fn logit(p: f64) -> f64 {
    p.ln() - (-p).ln_1p()
}

/// `1 / (1 + e^{-x})` without overflow for large `|x|`.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Clamp into `[PROB_EPS, 1 - PROB_EPS]`; returns whether clamping happened.
pub fn clamp_unit(p: f64) -> (f64, bool) {
    if p < PROB_EPS {
        (PROB_EPS, true)
    } else if p > 1.0 - PROB_EPS {
        (1.0 - PROB_EPS, true)
    } else {
        (p, false)
    }
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Turn log-weights into probabilities in place.
pub fn normalize_log_weights(weights: &mut [f64]) {
    let lse = log_sum_exp(weights);
    for w in weights.iter_mut() {
        *w = (*w - lse).exp();
    }
}

/// Draw an index from normalised probabilities by inversion.
pub fn sample_index<R: Rng + ?Sized>(rng: &mut R, probs: &[f64]) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the final partial sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Log of a Gamma(shape, 1) variate.
///
/// For shape < 1 the variate is `G(shape + 1) * U^(1/shape)`, evaluated on
/// the log scale so it cannot underflow.
fn sample_ln_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64) -> f64 {
    if shape >= 1.0 {
        let g: f64 = Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
        g.ln()
    } else {
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        let u = 1.0 - rng.random::<f64>();
        g.ln() + u.ln() / shape
    }
}

/// Draw from Be(a, b). Both shapes must be positive and finite.
///
/// The result can round to exactly 0 or 1 for very small shapes; callers that
/// need an open-interval value use [`clamp_unit`].
pub fn sample_beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    debug_assert!(a > 0.0 && b > 0.0, "beta shapes must be positive: ({a}, {b})");
    let la = sample_ln_gamma(rng, a);
    let lb = sample_ln_gamma(rng, b);
    sigmoid(la - lb)
}
