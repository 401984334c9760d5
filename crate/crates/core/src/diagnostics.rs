//! Informal convergence output for a scalar trace: the values themselves,
//! running means, autocorrelations and a probability histogram.

use log::warn;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    label: String,
    values: Vec<f64>,
}

impl Trace {
    pub fn new(label: impl Into<String>, values: Vec<f64>) -> Result<Self> {
        let label = label.into();
        if values.is_empty() {
            return Err(Error::Contract(format!("trace '{label}' is empty")));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::DataIntegrity(format!(
                "trace '{label}' has a non-finite value at position {i}"
            )));
        }
        Ok(Trace { label, values })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// `k`-th output is the mean of the first `k` values.
pub fn ergodic_means(trace: &Trace) -> Vec<f64> {
    let mut sum = 0.0;
    trace
        .values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            sum += v;
            sum / (i + 1) as f64
        })
        .collect()
}

/// Sample autocorrelation for lags `0..=max_lag`, normalised by the lag-0
/// sum of squares. A constant trace gives `[1, 0, 0, ...]`.
pub fn acf(trace: &Trace, max_lag: usize) -> Result<Vec<f64>> {
    let n = trace.len();
    if max_lag >= n {
        return Err(Error::Contract(format!(
            "max_lag {max_lag} must be below the trace length {n}"
        )));
    }
    let mean = trace.mean();
    let centered: Vec<f64> = trace.values.iter().map(|v| v - mean).collect();
    let denom: f64 = centered.iter().map(|d| d * d).sum();
    if denom == 0.0 {
        warn!("trace '{}' has zero variance; autocorrelation set to 0 beyond lag 0", trace.label);
        let mut out = vec![0.0; max_lag + 1];
        out[0] = 1.0;
        return Ok(out);
    }
    Ok((0..=max_lag)
        .map(|k| {
            let num: f64 = centered[..n - k]
                .iter()
                .zip(&centered[k..])
                .map(|(a, b)| a * b)
                .sum();
            (num / denom).clamp(-1.0, 1.0)
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    /// `bins + 1` edges; a single-valued trace yields one degenerate bin.
    pub edges: Vec<f64>,
    /// Fraction of the trace falling in each bin; sums to 1.
    pub freq: Vec<f64>,
}

/// Equal-width bins over `[min, max]`; the maximum falls in the last bin.
pub fn histogram(trace: &Trace, bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::Contract("histogram needs at least one bin".into()));
    }
    let lo = trace.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = trace.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Ok(Histogram {
            edges: vec![lo, hi],
            freq: vec![1.0],
        });
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0usize; bins];
    for &v in &trace.values {
        let i = (((v - lo) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    let n = trace.len() as f64;
    Ok(Histogram {
        edges,
        freq: counts.into_iter().map(|c| c as f64 / n).collect(),
    })
}

/// Monte Carlo standard error of the mean of an autocorrelated sequence,
/// by non-overlapping batch means with batch length `floor(sqrt(n))`.
pub fn batch_means_se(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 4 {
        let mean = values.iter().sum::<f64>() / n.max(1) as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.max(2) - 1) as f64;
        return (var / n.max(1) as f64).sqrt();
    }
    let size = (n as f64).sqrt().floor() as usize;
    let n_batches = n / size;
    let means: Vec<f64> = (0..n_batches)
        .map(|b| values[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / n_batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (n_batches - 1) as f64;
    (var / n_batches as f64).sqrt()
}
