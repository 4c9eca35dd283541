//! Statistical primitives used by every check: RNG streams, confidence
//! intervals, a two-sample chi-square test, a one-sample Kolmogorov-Smirnov
//! test against the exponential law, regression and bootstrap helpers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },
    #[error("fewer than two effective bins after merging")]
    DegenerateBins,
    #[error("invalid confidence level {0}")]
    InvalidLevel(f64),
    #[error("regression design is degenerate (zero variance in the regressor)")]
    DegenerateDesign,
}

/// Independent, reproducible stream keyed by `(seed, replicate, purpose)`.
///
/// The key `(seed, purpose)` is hashed into the ChaCha key; the replicate
/// index selects the ChaCha stream. Draw order in one stream never depends on
/// any other stream.
pub fn stream(seed: u64, replicate: u64, purpose: &str) -> SimRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    let key: [u8; 32] = h.finalize().into();
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(replicate);
    rng
}

/// Run `f` for every replicate in parallel, each with its own stream, and
/// collect the results in replicate order.
pub fn replicates<T, F>(n: usize, seed: u64, purpose: &str, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut SimRng) -> T + Sync,
{
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(seed, i, purpose);
            f(i, &mut rng)
        })
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Mean and standard error of the mean.
pub fn mean_se(xs: &[f64]) -> Result<(f64, f64), StatsError> {
    if xs.len() < 2 {
        return Err(StatsError::TooFewSamples { need: 2, got: xs.len() });
    }
    Ok((mean(xs), (variance(xs) / xs.len() as f64).sqrt()))
}

pub fn z_quantile(level: f64) -> Result<f64, StatsError> {
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::InvalidLevel(level));
    }
    let n = Normal::new(0.0, 1.0).expect("standard normal");
    Ok(n.inverse_cdf(0.5 + level / 2.0))
}

/// Normal-approximation interval: returns `(mean, z(level)·s/√n)`.
pub fn mc_mean_ci(samples: &[f64], level: f64) -> Result<(f64, f64), StatsError> {
    let (m, se) = mean_se(samples)?;
    Ok((m, z_quantile(level)? * se))
}

/// Outcome of one statistical or numerical check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub p_value: Option<f64>,
    pub pass: bool,
    pub seed: Option<u64>,
    pub sample_sizes: Vec<usize>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

impl TestReport {
    /// `pass = value ≤ threshold`.
    pub fn upper(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.to_string(),
            value,
            threshold,
            p_value: None,
            pass: value <= threshold,
            seed: None,
            sample_sizes: vec![],
            note: String::new(),
        }
    }

    /// `pass = p ≥ alpha`, with `value` the test statistic.
    pub fn p_value(name: &str, statistic: f64, p: f64, alpha: f64) -> Self {
        Self {
            name: name.to_string(),
            value: statistic,
            threshold: alpha,
            p_value: Some(p),
            pass: p >= alpha,
            seed: None,
            sample_sizes: vec![],
            note: String::new(),
        }
    }

    /// Two-sided band check: `|estimate - target| ≤ k·se + slack`.
    pub fn band(name: &str, estimate: f64, target: f64, se: f64, k: f64, slack: f64) -> Self {
        let mut r = Self::upper(name, (estimate - target).abs(), k * se + slack);
        r.note = format!("estimate {estimate:.6e}, target {target:.6e}, se {se:.3e}");
        r
    }

    pub fn failed(name: &str, note: &str) -> Self {
        Self {
            name: name.to_string(),
            value: f64::NAN,
            threshold: f64::NAN,
            p_value: None,
            pass: false,
            seed: None,
            sample_sizes: vec![],
            note: note.to_string(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_sizes(mut self, sizes: Vec<usize>) -> Self {
        self.sample_sizes = sizes;
        self
    }

    pub fn with_note(mut self, note: impl Into<String>) -> Self {
        let note = note.into();
        if self.note.is_empty() {
            self.note = note;
        } else {
            self.note = format!("{}; {}", self.note, note);
        }
        self
    }

    pub fn line(&self) -> String {
        format!(
            "{} {}: value {:.6e} threshold {:.6e}{}{}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.value,
            self.threshold,
            self.p_value.map(|p| format!(" p {p:.4}")).unwrap_or_default(),
            if self.note.is_empty() { String::new() } else { format!(" ({})", self.note) }
        )
    }
}

/// Chi-square test of homogeneity for two samples of non-negative integers.
///
/// Values are binned by integer value; adjacent bins (in value order) are
/// merged left to right until every bin's expected count in both samples is
/// at least 5, and an undersized tail bin is folded into its neighbour.
pub fn two_sample_test(a: &[u64], b: &[u64]) -> Result<TestReport, StatsError> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::TooFewSamples { need: 1, got: a.len().min(b.len()) });
    }
    let top = a.iter().chain(b).copied().max().unwrap_or(0) as usize;
    let mut ca = vec![0f64; top + 1];
    let mut cb = vec![0f64; top + 1];
    for &x in a {
        ca[x as usize] += 1.0;
    }
    for &x in b {
        cb[x as usize] += 1.0;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let n = na + nb;
    let expected_ok = |oa: f64, ob: f64| {
        let tot = oa + ob;
        tot * na / n >= 5.0 && tot * nb / n >= 5.0
    };

    let mut bins: Vec<(f64, f64)> = Vec::new();
    let (mut acc_a, mut acc_b) = (0.0, 0.0);
    for v in 0..=top {
        acc_a += ca[v];
        acc_b += cb[v];
        if expected_ok(acc_a, acc_b) {
            bins.push((acc_a, acc_b));
            acc_a = 0.0;
            acc_b = 0.0;
        }
    }
    if acc_a + acc_b > 0.0 {
        match bins.last_mut() {
            Some(last) => {
                last.0 += acc_a;
                last.1 += acc_b;
            }
            None => bins.push((acc_a, acc_b)),
        }
    }
    if bins.len() < 2 {
        return Err(StatsError::DegenerateBins);
    }

    let mut stat = 0.0;
    for &(oa, ob) in &bins {
        let tot = oa + ob;
        let ea = tot * na / n;
        let eb = tot * nb / n;
        stat += (oa - ea).powi(2) / ea + (ob - eb).powi(2) / eb;
    }
    let df = (bins.len() - 1) as f64;
    let p = 1.0 - ChiSquared::new(df).expect("df > 0").cdf(stat);
    Ok(TestReport::p_value("two-sample chi-square", stat, p, 0.01)
        .with_sizes(vec![a.len(), b.len()])
        .with_note(format!("{} bins", bins.len())))
}

/// Kolmogorov distribution tail `P(K > x)`.
fn kolmogorov_tail(x: f64) -> f64 {
    if x < 0.27 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..200 {
        let k = k as f64;
        let term = (-2.0 * k * k * x * x).exp();
        s += if (k as i64) % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample KS test of `samples` against `Exp(rate)`.
pub fn ks_exponential(samples: &[f64], rate: f64) -> Result<TestReport, StatsError> {
    if samples.len() < 2 {
        return Err(StatsError::TooFewSamples { need: 2, got: samples.len() });
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = xs.len() as f64;
    let mut d: f64 = 0.0;
    for (i, x) in xs.iter().enumerate() {
        let f = 1.0 - (-rate * x).exp();
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let sq = n.sqrt();
    let p = kolmogorov_tail((sq + 0.12 + 0.11 / sq) * d);
    Ok(TestReport::p_value("KS exponential", d, p, 0.01).with_sizes(vec![xs.len()]))
}

/// Ordinary least squares `y = a + b x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub intercept: f64,
    pub slope: f64,
    pub slope_se: f64,
}

pub fn ols(x: &[f64], y: &[f64]) -> Result<LinearFit, StatsError> {
    let n = x.len();
    if n < 3 || y.len() != n {
        return Err(StatsError::TooFewSamples { need: 3, got: n.min(y.len()) });
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(StatsError::DegenerateDesign);
    }
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let s2 = rss / (n as f64 - 2.0);
    Ok(LinearFit { intercept, slope, slope_se: (s2 / sxx).sqrt() })
}

/// Percentile bootstrap interval of a statistic over resampled rows.
pub fn bootstrap_ci<T, F>(
    rows: &[T],
    statistic: F,
    n_boot: usize,
    level: f64,
    rng: &mut SimRng,
) -> Result<(f64, f64), StatsError>
where
    T: Clone,
    F: Fn(&[T]) -> Option<f64>,
{
    if rows.len() < 2 {
        return Err(StatsError::TooFewSamples { need: 2, got: rows.len() });
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(StatsError::InvalidLevel(level));
    }
    let mut stats = Vec::with_capacity(n_boot);
    let mut buf = Vec::with_capacity(rows.len());
    for _ in 0..n_boot {
        buf.clear();
        for _ in 0..rows.len() {
            buf.push(rows[rng.random_range(0..rows.len())].clone());
        }
        if let Some(s) = statistic(&buf) {
            if s.is_finite() {
                stats.push(s);
            }
        }
    }
    if stats.len() < n_boot / 2 {
        return Err(StatsError::TooFewSamples { need: n_boot / 2, got: stats.len() });
    }
    stats.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let q = |p: f64| {
        let idx = (p * (stats.len() - 1) as f64).round() as usize;
        stats[idx.min(stats.len() - 1)]
    };
    let tail = (1.0 - level) / 2.0;
    Ok((q(tail), q(1.0 - tail)))
}
