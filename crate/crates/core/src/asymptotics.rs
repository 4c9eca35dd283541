//! Additive martingales, strong-law ratios and growth-rate estimation over
//! archived trajectories.

use crate::mbp_engine::{Mark, ParticleSystem, Trajectory};
use crate::phase_space::PhasePoint;
use crate::stats::{bootstrap_ci, mean, mean_se, ols, LinearFit, SimRng, StatsError, TestReport};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AsymptoticsError {
    #[error("checkpoint lists differ in length: {times} times, {snapshots} snapshots")]
    Checkpoints { times: usize, snapshots: usize },
    #[error("initial weight ⟨φ, μ⟩ is zero")]
    ZeroStart,
    #[error("fewer than two checkpoints after burn-in carry mass")]
    InsufficientSurvival,
    #[error("no trajectories")]
    Empty,
    #[error(transparent)]
    Stats(#[from] StatsError),
}

/// Which particles a martingale counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// All particles, weighted by `φ`.
    Plain,
    /// Prolific particles only, weighted by `φ/p`.
    Skeleton,
}

/// `W_t = e^{−λt}⟨h, X_t⟩/⟨h, μ⟩` per replicate and checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MartingaleTrack {
    pub times: Vec<f64>,
    pub lambda: f64,
    pub variant: Variant,
    /// `values[replicate][checkpoint]`.
    pub values: Vec<Vec<f64>>,
}

impl MartingaleTrack {
    pub fn column(&self, k: usize) -> Vec<f64> {
        self.values.iter().map(|row| row[k]).collect()
    }

    /// `(mean, s.e.)` at each checkpoint.
    pub fn summary(&self) -> Vec<(f64, f64)> {
        (0..self.times.len())
            .map(|k| mean_se(&self.column(k)).unwrap_or((f64::NAN, f64::INFINITY)))
            .collect()
    }

    /// Value at the last checkpoint, the proxy for `W_∞`.
    pub fn terminal(&self) -> Vec<f64> {
        self.column(self.times.len() - 1)
    }

    /// One band report per checkpoint: mean within `k` s.e. of 1.
    pub fn unit_mean_reports(&self, k: f64) -> Vec<TestReport> {
        self.summary()
            .into_iter()
            .zip(&self.times)
            .map(|((m, se), t)| {
                TestReport::band(&format!("mean W at t={t}"), m, 1.0, se, k, 0.0).with_sizes(vec![self.values.len()])
            })
            .collect()
    }

    /// OLS slope of `W_{t_j}` on `W_{t_i}` across replicates.
    pub fn conditional_slope(&self, i: usize, j: usize) -> Result<LinearFit, StatsError> {
        ols(&self.column(i), &self.column(j))
    }

    /// Empirical `E[sup_{t ≤ t_k} W_t²]` for each `k`.
    pub fn sup_second_moments(&self) -> Vec<f64> {
        (0..self.times.len())
            .map(|k| mean(&self.values.iter().map(|row| row[..=k].iter().fold(0.0f64, |a, b| a.max(*b)).powi(2)).collect::<Vec<_>>()))
            .collect()
    }
}

fn weighted<H: Fn(&PhasePoint) -> f64>(sys: &ParticleSystem, variant: Variant, h: &H) -> f64 {
    match variant {
        Variant::Plain => sys.sum(h),
        Variant::Skeleton => sys.sum_mark(Mark::Up, h),
    }
}

/// Additive martingale with weight `h` (`φ` for [`Variant::Plain`], `φ/p`
/// for [`Variant::Skeleton`]) started from `mu`.
pub fn track_w<H: Fn(&PhasePoint) -> f64>(
    mu: &ParticleSystem,
    trajectories: &[Trajectory],
    times: &[f64],
    lambda: f64,
    h: H,
    variant: Variant,
) -> Result<MartingaleTrack, AsymptoticsError> {
    let start = weighted(mu, variant, &h);
    if !(start > 0.0) {
        return Err(AsymptoticsError::ZeroStart);
    }
    let mut values = Vec::with_capacity(trajectories.len());
    for tr in trajectories {
        if tr.snapshots.len() != times.len() {
            return Err(AsymptoticsError::Checkpoints { times: times.len(), snapshots: tr.snapshots.len() });
        }
        values.push(
            tr.snapshots
                .iter()
                .zip(times)
                .map(|(s, t)| (-lambda * t).exp() * weighted(s, variant, &h) / start)
                .collect(),
        );
    }
    Ok(MartingaleTrack { times: times.to_vec(), lambda, variant, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SllnOutcome {
    Extinct,
    Ratio {
        /// Per surviving replicate, `⟨g, X_T⟩/⟨φ, X_T⟩`.
        ratios: Vec<f64>,
        mean: f64,
        relative_error: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SllnReport {
    pub time: f64,
    pub target: f64,
    pub surviving: usize,
    pub replicates: usize,
    pub tolerance: f64,
    pub outcome: SllnOutcome,
    pub pass: bool,
}

/// Final-time ratio `⟨g, X_T⟩/⟨φ, X_T⟩` on replicates alive at `T`,
/// compared with `target = ⟨g, φ̃⟩` to relative tolerance `tol`.
pub fn slln_ratio<G, P>(trajectories: &[Trajectory], time: f64, g: G, phi: P, target: f64, tol: f64) -> SllnReport
where
    G: Fn(&PhasePoint) -> f64,
    P: Fn(&PhasePoint) -> f64,
{
    let ratios: Vec<f64> = trajectories
        .iter()
        .map(|tr| tr.last())
        .filter(|s| s.count() > 0)
        .filter_map(|s| {
            let d = s.sum(&phi);
            (d > 0.0).then(|| s.sum(&g) / d)
        })
        .collect();
    let surviving = ratios.len();
    let outcome = if ratios.is_empty() {
        SllnOutcome::Extinct
    } else {
        let m = mean(&ratios);
        SllnOutcome::Ratio { relative_error: (m - target).abs() / target.abs(), mean: m, ratios }
    };
    let pass = matches!(&outcome, SllnOutcome::Ratio { relative_error, .. } if *relative_error <= tol);
    SllnReport { time, target, surviving, replicates: trajectories.len(), tolerance: tol, outcome, pass }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GrowthEstimate {
    pub lambda: f64,
    pub ci: (f64, f64),
    pub level: f64,
    pub checkpoints_used: usize,
}

impl GrowthEstimate {
    pub fn covers(&self, x: f64) -> bool {
        self.ci.0 <= x && x <= self.ci.1
    }
}

fn log_mean_slope(rows: &[Vec<f64>], times: &[f64]) -> Option<f64> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (k, t) in times.iter().enumerate() {
        let m = rows.iter().map(|r| r[k]).sum::<f64>() / rows.len() as f64;
        if m > 0.0 {
            xs.push(*t);
            ys.push(m.ln());
        }
    }
    if xs.len() < 2 {
        return None;
    }
    ols(&xs, &ys).ok().map(|f| f.slope)
}

/// Least-squares slope of `log E⟨1, X_t⟩` over checkpoints at or after
/// `burn_in`, with a percentile bootstrap interval over replicates.
pub fn estimate_lambda(
    trajectories: &[Trajectory],
    times: &[f64],
    burn_in: f64,
    n_boot: usize,
    level: f64,
    rng: &mut SimRng,
) -> Result<GrowthEstimate, AsymptoticsError> {
    if trajectories.is_empty() {
        return Err(AsymptoticsError::Empty);
    }
    let mut rows = Vec::with_capacity(trajectories.len());
    for tr in trajectories {
        if tr.snapshots.len() != times.len() {
            return Err(AsymptoticsError::Checkpoints { times: times.len(), snapshots: tr.snapshots.len() });
        }
        rows.push(tr.snapshots.iter().map(|s| s.count() as f64).collect::<Vec<f64>>());
    }
    estimate_lambda_from_counts(&rows, times, burn_in, n_boot, level, rng)
}

/// As [`estimate_lambda`] from a table `rows[replicate][checkpoint]` of
/// population sizes.
pub fn estimate_lambda_from_counts(
    rows: &[Vec<f64>],
    times: &[f64],
    burn_in: f64,
    n_boot: usize,
    level: f64,
    rng: &mut SimRng,
) -> Result<GrowthEstimate, AsymptoticsError> {
    if rows.is_empty() {
        return Err(AsymptoticsError::Empty);
    }
    let keep: Vec<usize> = (0..times.len()).filter(|k| times[*k] >= burn_in).collect();
    let ts: Vec<f64> = keep.iter().map(|k| times[*k]).collect();
    let rows: Vec<Vec<f64>> = rows.iter().map(|r| keep.iter().map(|k| r[*k]).collect()).collect();
    let used = (0..ts.len()).filter(|k| rows.iter().any(|r| r[*k] > 0.0)).count();
    let lambda = log_mean_slope(&rows, &ts).ok_or(AsymptoticsError::InsufficientSurvival)?;
    let ci = bootstrap_ci(&rows, |b| log_mean_slope(b, &ts), n_boot, level, rng)?;
    Ok(GrowthEstimate { lambda, ci, level, checkpoints_used: used })
}

/// Band check of a Monte Carlo mean against an oracle value.
pub fn skeleton_identity_check(name: &str, samples: &[f64], oracle: f64, k: f64) -> Result<TestReport, AsymptoticsError> {
    let (m, se) = mean_se(samples)?;
    Ok(TestReport::band(name, m, oracle, se, k, 0.0).with_sizes(vec![samples.len()]))
}

/// Regression of Bernoulli-marked counts on `⟨p, X_t⟩` across replicates;
/// passes when the slope lies within `tol` of 1.
pub fn binpp_regression(mass: &[f64], marked: &[f64], tol: f64) -> Result<(LinearFit, TestReport), AsymptoticsError> {
    let fit = ols(mass, marked)?;
    let report = TestReport::upper("BinPP slope |b - 1|", (fit.slope - 1.0).abs(), tol)
        .with_sizes(vec![mass.len()])
        .with_note(format!("slope {:.5} ± {:.5}, intercept {:.5}", fit.slope, fit.slope_se, fit.intercept));
    Ok((fit, report))
}

/// Finite-difference probe of directional continuity along a flight:
/// `max_j |g(x_{s_j+δ}) − g(x_{s_j})|`.
pub fn directional_jump<G: Fn(&PhasePoint) -> f64>(g: G, x: &PhasePoint, span: f64, steps: usize, delta: f64) -> f64 {
    (0..steps)
        .map(|j| {
            let s = span * j as f64 / steps as f64;
            (g(&x.flown(s + delta)) - g(&x.flown(s))).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mbp_engine::{simulate_replicates, Nbp, SimConfig};
    use crate::presets::{self, GW3_LAMBDA, GW3_W};
    use crate::stats::stream;

    fn gw3_runs(n: usize, times: Vec<f64>, seed: u64) -> (ParticleSystem, Vec<Trajectory>) {
        let m = presets::gw3_spaceless();
        let mu = ParticleSystem::single(presets::probe_point(&m));
        let cfg = SimConfig::new(*times.last().unwrap(), times);
        let trs = simulate_replicates(&mu, &cfg, &Nbp::new(&m), seed, n).unwrap();
        (mu, trs)
    }

    #[test]
    fn starts_at_one_and_stays_non_negative() {
        let times = vec![0.0, 1.0, 2.0];
        let (mu, trs) = gw3_runs(2000, times.clone(), 1);
        let tr = track_w(&mu, &trs, &times, GW3_LAMBDA, |_| 1.0, Variant::Plain).unwrap();
        assert!(tr.column(0).iter().all(|w| *w == 1.0));
        assert!(tr.values.iter().flatten().all(|w| *w >= 0.0));
        assert!(tr.unit_mean_reports(3.0).iter().all(|r| r.pass));
    }

    #[test]
    fn gw3_zero_set_tends_to_extinction() {
        let times = vec![2.0, 6.0, 10.0];
        let (mu, trs) = gw3_runs(10_000, times.clone(), 2);
        let tr = track_w(&mu, &trs, &times, GW3_LAMBDA, |_| 1.0, Variant::Plain).unwrap();
        let zero = |k: usize| tr.column(k).iter().filter(|w| **w == 0.0).count() as f64 / 10_000.0;
        assert!(zero(0) < zero(2));
        let se = (GW3_W * (1.0 - GW3_W) / 10_000.0).sqrt();
        assert!((zero(2) - GW3_W).abs() < 4.0 * se + 2e-3, "{}", zero(2));
    }

    #[test]
    fn martingale_regression_slope_near_one() {
        let times = vec![1.0, 2.0];
        let (mu, trs) = gw3_runs(10_000, times.clone(), 3);
        let tr = track_w(&mu, &trs, &times, GW3_LAMBDA, |_| 1.0, Variant::Plain).unwrap();
        let fit = tr.conditional_slope(0, 1).unwrap();
        assert!((fit.slope - 1.0).abs() <= 3.0 * fit.slope_se, "{fit:?}");
        let m2 = tr.sup_second_moments();
        assert!(m2.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn slln_trivial_and_extinct() {
        let times = vec![3.0];
        let (_, trs) = gw3_runs(500, times, 4);
        let r = slln_ratio(&trs, 3.0, |_| 1.0, |_| 1.0, 1.0, 1e-12);
        match r.outcome {
            SllnOutcome::Ratio { ratios, .. } => assert!(ratios.iter().all(|x| *x == 1.0)),
            SllnOutcome::Extinct => panic!("survivors expected"),
        }
        let dead: Vec<Trajectory> = trs.into_iter().filter(|t| t.last().count() == 0).collect();
        let r = slln_ratio(&dead, 3.0, |_| 1.0, |_| 1.0, 1.0, 0.05);
        assert_eq!(r.outcome, SllnOutcome::Extinct);
        assert!(!r.pass);
    }

    #[test]
    fn gw3_growth_rate() {
        let times: Vec<f64> = (1..=8).map(|k| k as f64 * 0.5).collect();
        let (_, trs) = gw3_runs(10_000, times.clone(), 5);
        let mut rng = stream(5, 0, "bootstrap");
        let est = estimate_lambda(&trs, &times, 0.5, 400, 0.99, &mut rng).unwrap();
        assert!(est.covers(GW3_LAMBDA), "{est:?}");
    }

    #[test]
    fn insufficient_survival_is_an_error() {
        let times = vec![1.0, 2.0];
        let (_, trs) = gw3_runs(50, times.clone(), 6);
        let dead: Vec<Trajectory> = trs.into_iter().filter(|t| t.at(0).count() == 0).collect();
        let mut rng = stream(6, 0, "bootstrap");
        assert_eq!(
            estimate_lambda(&dead, &times, 0.0, 10, 0.9, &mut rng),
            Err(AsymptoticsError::InsufficientSurvival)
        );
    }

    #[test]
    fn directional_jump_detects_steps() {
        let m = presets::rod1();
        let x = PhasePoint::on_rod(0.1, &m.velocities, 0);
        assert!(directional_jump(|y| y.r.x, &x, 0.8, 50, 1e-6) < 1e-5);
        assert!(directional_jump(|y| if y.r.x < 0.5 { 0.0 } else { 1.0 }, &x, 0.8, 800, 1e-3) >= 1.0);
    }
}
