//! Synthetic cohorts with shifted-Poisson lifetimes and independent
//! shifted-Poisson censoring ages.
//!
//! At period `t` lifetimes are `Z = Y + 1`, `Y ~ Po(lambda_t)` with
//! `lambda_t = lambda_base + (t - 1) * lambda_slope`; censoring ages are
//! `C = Y' + 1`, `Y' ~ Po(lambda_censor)`. The record keeps `min(Z, C)` and
//! whether `Z <= C`. Observations above `max_age` are censored at `max_age`.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::data::SurvivalRecord;
use crate::dist::{derive_seed, ln_gamma, rng_from_seed};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimDesign {
    pub lambda_base: f64,
    pub lambda_slope: f64,
    pub lambda_censor: f64,
    pub n_per_time: usize,
    pub n_times: usize,
    pub max_age: usize,
    pub seed: u64,
}

impl Default for SimDesign {
    fn default() -> Self {
        SimDesign {
            lambda_base: 8.0,
            lambda_slope: 0.5,
            lambda_censor: 18.0,
            n_per_time: 1_000,
            n_times: 15,
            max_age: 18,
            seed: 0,
        }
    }
}

impl SimDesign {
    /// Lifetime mean parameter at period `t` (1-based).
    pub fn lambda(&self, t: usize) -> f64 {
        self.lambda_base + (t as f64 - 1.0) * self.lambda_slope
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_per_time == 0 || self.n_times == 0 || self.max_age == 0 {
            return bad("n_per_time, n_times and max_age must be positive".into());
        }
        if !(self.lambda_censor.is_finite() && self.lambda_censor > 0.0) {
            return bad(format!("lambda_censor must be positive, got {}", self.lambda_censor));
        }
        if !self.lambda_slope.is_finite() {
            return bad("lambda_slope must be finite".into());
        }
        for t in 1..=self.n_times {
            let l = self.lambda(t);
            if !(l.is_finite() && l > 0.0) {
                return bad(format!("lambda at time {t} is {l}; it must be positive"));
            }
        }
        Ok(())
    }

    /// True hazards for ages `1..=max_age` and periods `1..=total_times`,
    /// extrapolating the linear trend in `lambda` past `n_times`.
    pub fn true_hazards(&self, total_times: usize) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((self.max_age, total_times));
        for t in 1..=total_times {
            let lambda = self.lambda(t);
            for x in 1..=self.max_age {
                out[[x - 1, t - 1]] = true_hazard(lambda, x)?;
            }
        }
        Ok(out)
    }
}

/// `Y + 1` with `Y ~ Po(lambda)`.
pub fn sample_shifted_poisson<R: Rng + ?Sized>(lambda: f64, rng: &mut R) -> Result<u64> {
    let po = Poisson::new(lambda)
        .map_err(|e| Error::InvalidConfig(format!("poisson rate {lambda}: {e}")))?;
    let y: f64 = po.sample(rng);
    Ok(y as u64 + 1)
}

/// Records for every period, `n_per_time` each, period-major. Each period
/// draws from its own sub-stream of the design seed.
pub fn generate(design: &SimDesign) -> Result<Vec<SurvivalRecord>> {
    design.validate()?;
    let censor = Poisson::new(design.lambda_censor)
        .map_err(|e| Error::InvalidConfig(format!("censoring rate: {e}")))?;
    let mut out = Vec::with_capacity(design.n_per_time * design.n_times);
    for t in 1..=design.n_times {
        let mut rng = rng_from_seed(derive_seed(design.seed, t as u64));
        let life = Poisson::new(design.lambda(t))
            .map_err(|e| Error::InvalidConfig(format!("lifetime rate at time {t}: {e}")))?;
        for _ in 0..design.n_per_time {
            let z = life.sample(&mut rng) as u64 + 1;
            let c = censor.sample(&mut rng) as u64 + 1;
            let observed = z.min(c);
            let rec = if observed > design.max_age as u64 {
                SurvivalRecord::new(design.max_age, t, false)
            } else {
                SurvivalRecord::new(observed as usize, t, z <= c)
            };
            out.push(rec);
        }
    }
    Ok(out)
}

fn ln_poisson_pmf(k: u64, lambda: f64) -> f64 {
    -lambda + k as f64 * lambda.ln() - ln_gamma(k as f64 + 1.0)
}

/// `ln P(Y >= k)` for `Y ~ Po(lambda)`, summing the upper tail on the log scale.
fn ln_poisson_upper_tail(k: u64, lambda: f64) -> f64 {
    let mut max = ln_poisson_pmf(k, lambda);
    let mut acc = 1.0; // sum of exp(term - max)
    let mut j = k + 1;
    loop {
        let term = ln_poisson_pmf(j, lambda);
        if term > max {
            acc = acc * (max - term).exp() + 1.0;
            max = term;
        } else {
            acc += (term - max).exp();
        }
        if j as f64 > lambda && term - max < -45.0 {
            break;
        }
        j += 1;
    }
    max + acc.ln()
}

/// Discrete hazard `P(Z = x | Z >= x)` of `Z = Y + 1`, `Y ~ Po(lambda)`.
pub fn true_hazard(lambda: f64, x: usize) -> Result<f64> {
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::InvalidConfig(format!("lambda must be positive, got {lambda}")));
    }
    if x == 0 {
        return Err(Error::InvalidConfig("ages start at 1".into()));
    }
    let k = x as u64 - 1;
    Ok((ln_poisson_pmf(k, lambda) - ln_poisson_upper_tail(k, lambda)).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{aggregate, density_from_hazards, np_hazard};
    use crate::grid::{Cell, Grid};

    fn poisson_pmf(k: u64, lambda: f64) -> f64 {
        // direct product form, independent of the log-gamma route
        let mut p = (-lambda).exp();
        for i in 1..=k {
            p *= lambda / i as f64;
        }
        p
    }

    #[test]
    fn hazard_at_age_one() {
        let h = true_hazard(8.0, 1).unwrap();
        assert!((h - (-8.0f64).exp()).abs() < 1e-16);
        assert!((h - 3.3546e-4).abs() < 1e-8);
    }

    #[test]
    fn hazard_shape() {
        let mut prev = 0.0;
        for x in 1..=18 {
            let h = true_hazard(8.0, x).unwrap();
            assert!(h > prev && h < 1.0);
            prev = h;
        }
        for x in 1..=18 {
            let hs: Vec<f64> = (1..=15).map(|t| true_hazard(8.0 + (t as f64 - 1.0) / 2.0, x).unwrap()).collect();
            assert!(hs.windows(2).all(|w| w[1] < w[0]), "age {x}");
        }
    }

    #[test]
    fn hazard_density_round_trip() {
        for &lambda in &[8.0, 15.0, 0.7] {
            let h: Vec<f64> = (1..=40).map(|x| true_hazard(lambda, x).unwrap()).collect();
            let f = density_from_hazards(&h);
            for (i, fx) in f.iter().enumerate() {
                assert!((fx - poisson_pmf(i as u64, lambda)).abs() < 1e-12, "lambda {lambda} x {}", i + 1);
            }
        }
    }

    #[test]
    fn hazard_far_tail_is_finite() {
        for x in [60, 200, 2_000] {
            let h = true_hazard(8.0, x).unwrap();
            assert!(h.is_finite() && h > 0.0 && h < 1.0, "x={x}: {h}");
        }
        assert!(true_hazard(0.0, 1).is_err());
        assert!(true_hazard(1.0, 0).is_err());
    }

    #[test]
    fn shifted_poisson_moments() {
        let mut rng = rng_from_seed(11);
        let n = 100_000;
        let xs: Vec<f64> = (0..n).map(|_| sample_shifted_poisson(8.0, &mut rng).unwrap() as f64).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        let se = (8.0 / n as f64).sqrt();
        assert!((mean - 9.0).abs() < 3.0 * se);
        // Var of the sample variance of a Poisson is about (lambda + 2 lambda^2) / n
        assert!((var - 8.0).abs() < 3.0 * ((8.0 + 128.0) / n as f64).sqrt());

        let tiny: Vec<u64> = (0..1_000).map(|_| sample_shifted_poisson(1e-9, &mut rng).unwrap()).collect();
        assert!(tiny.iter().all(|&z| z == 1));
        assert!(sample_shifted_poisson(0.0, &mut rng).is_err());
    }

    #[test]
    fn generate_shape_and_determinism() {
        let d = SimDesign {
            n_per_time: 50,
            n_times: 4,
            seed: 9,
            ..SimDesign::default()
        };
        let a = generate(&d).unwrap();
        assert_eq!(a, generate(&d).unwrap());
        assert_eq!(a.len(), 200);
        for t in 1..=4 {
            assert_eq!(a.iter().filter(|r| r.time == t).count(), 50);
        }
        assert!(a.iter().all(|r| (1..=18).contains(&r.age)));
    }

    #[test]
    fn no_censoring_with_huge_censor_rate() {
        let d = SimDesign {
            lambda_censor: 1e6,
            max_age: 1_000_000,
            n_per_time: 500,
            n_times: 3,
            ..SimDesign::default()
        };
        assert!(generate(&d).unwrap().iter().all(|r| r.exact));
    }

    #[test]
    fn invalid_designs() {
        let d = SimDesign {
            lambda_base: 0.0,
            ..SimDesign::default()
        };
        assert!(generate(&d).is_err());
        let d = SimDesign {
            lambda_base: 1.0,
            lambda_slope: -1.0,
            n_times: 3,
            ..SimDesign::default()
        };
        assert!(d.validate().is_err());
        let d = SimDesign {
            lambda_censor: -2.0,
            ..SimDesign::default()
        };
        assert!(d.validate().is_err());
    }

    #[test]
    fn empirical_hazard_matches_truth() {
        let d = SimDesign {
            lambda_censor: 1e6,
            max_age: 60,
            n_per_time: 100_000,
            n_times: 1,
            seed: 21,
            ..SimDesign::default()
        };
        let recs = generate(&d).unwrap();
        let g = Grid::new(60, 1, 0).unwrap();
        let stats = aggregate(&recs, &g).unwrap();
        let h = np_hazard(&stats);
        for x in 1..=18 {
            let m = stats.at_risk_at(Cell::new(x, 1)) as f64;
            let h0 = true_hazard(8.0, x).unwrap();
            let se = (h0 * (1.0 - h0) / m).sqrt();
            let est = h[[x - 1, 0]].unwrap();
            assert!((est - h0).abs() < 3.0 * se, "age {x}: {est} vs {h0}");
        }
    }
}
