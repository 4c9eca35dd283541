//! Branching Brownian motion with drift, killed on leaving a strip `(0, K)`.

use crate::stats::SimRng;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StripError {
    #[error("invalid strip model: {0}")]
    Invalid(String),
    #[error("starting point {0} outside the open strip")]
    Start(f64),
    #[error("population cap {cap} exceeded at t = {time}")]
    CapExceeded { cap: usize, time: f64 },
    #[error("boundary-value solve did not converge (residual {0:e})")]
    NoConvergence(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripModel {
    /// Strip width `K`.
    pub width: f64,
    pub drift: f64,
    pub rate: f64,
    /// `counts[k] = P(k children)`.
    pub counts: Vec<f64>,
}

impl StripModel {
    pub fn validate(&self) -> Result<(), StripError> {
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(StripError::Invalid(format!("width {}", self.width)));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(StripError::Invalid(format!("rate {}", self.rate)));
        }
        if !self.drift.is_finite() {
            return Err(StripError::Invalid("drift".into()));
        }
        if self.counts.iter().any(|p| !(*p >= 0.0)) || (self.counts.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(StripError::Invalid("offspring probabilities".into()));
        }
        Ok(())
    }

    pub fn mean_offspring(&self) -> f64 {
        self.counts.iter().enumerate().map(|(k, p)| k as f64 * p).sum()
    }

    pub fn pgf(&self, s: f64) -> f64 {
        self.counts.iter().rev().fold(0.0, |acc, p| acc * s + p)
    }

    fn pgf_prime(&self, s: f64) -> f64 {
        self.counts.iter().enumerate().skip(1).rev().fold(0.0, |acc, (k, p)| acc * s + k as f64 * p)
    }

    fn sample_count(&self, rng: &mut SimRng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in self.counts.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        self.counts.iter().rposition(|p| *p > 0.0).unwrap_or(0)
    }
}

/// The spaceless reference instance: unit rate, `P(0) = 1/4`, `P(2) = 3/4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GwInstance {
    pub rate: f64,
    pub p0: f64,
    pub p2: f64,
}

impl GwInstance {
    pub fn gw3() -> Self {
        Self { rate: 1.0, p0: 0.25, p2: 0.75 }
    }

    pub fn mean(&self) -> f64 {
        2.0 * self.p2
    }

    pub fn lambda(&self) -> f64 {
        (self.mean() - 1.0) * self.rate
    }

    /// Smaller root of `p2 w² − w + p0 = 0`.
    pub fn w(&self) -> f64 {
        let disc = (1.0 - 4.0 * self.p0 * self.p2).sqrt();
        // stable form of (1 − disc)/(2 p2)
        2.0 * self.p0 / (1.0 + disc)
    }

    pub fn p(&self) -> f64 {
        1.0 - self.w()
    }

    pub fn counts(&self) -> Vec<f64> {
        vec![self.p0, 1.0 - self.p0 - self.p2, self.p2]
    }

    pub fn on_strip(&self, width: f64, drift: f64) -> StripModel {
        StripModel { width, drift, rate: self.rate, counts: self.counts() }
    }
}

/// `(m − 1)ς − μ²/2 − π²/(2K²)`.
pub fn lambda_strip(model: &StripModel) -> f64 {
    (model.mean_offspring() - 1.0) * model.rate - 0.5 * model.drift * model.drift - PI * PI / (2.0 * model.width * model.width)
}

/// Number of eigenvalues of the symmetric tridiagonal matrix `(d, e)`
/// strictly below `x`.
fn sturm_count(d: &[f64], e2: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut q = d[0] - x;
    if q < 0.0 {
        count += 1;
    }
    for i in 1..d.len() {
        let prev = if q == 0.0 { f64::EPSILON } else { q };
        q = d[i] - x - e2[i - 1] / prev;
        if q < 0.0 {
            count += 1;
        }
    }
    count
}

fn fd_top_eigenvalue(width: f64, drift: f64, n: usize) -> f64 {
    let h = width / n as f64;
    let m = n - 1;
    // (1/2)u'' + μu' with central differences; the drift term is removed by
    // the diagonal similarity that symmetrises the stencil
    let up = 0.5 / (h * h) + 0.5 * drift / h;
    let down = 0.5 / (h * h) - 0.5 * drift / h;
    let d = vec![-1.0 / (h * h); m];
    let e2 = vec![up * down; m - 1];
    let radius = 2.0 * (up * down).abs().sqrt() + 1.0 / (h * h);
    let (mut lo, mut hi) = (-radius - 1.0, radius + 1.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if sturm_count(&d, &e2, mid) < m {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-15 * (1.0 + hi.abs()) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Leading Dirichlet eigenvalue of `(1/2) d²/dx² + μ d/dx` on `(0, K)` by
/// Sturm bisection on the central-difference stencil, Richardson
/// extrapolated from `n` and `2n` intervals. Requires `|μ| h < 1`.
pub fn fd_dirichlet_eigenvalue(width: f64, drift: f64, n: usize) -> Result<f64, StripError> {
    if n < 4 {
        return Err(StripError::Invalid("need at least 4 intervals".into()));
    }
    if drift.abs() * width / n as f64 >= 1.0 {
        return Err(StripError::Invalid("grid too coarse for the drift".into()));
    }
    let coarse = fd_top_eigenvalue(width, drift, n);
    let fine = fd_top_eigenvalue(width, drift, 2 * n);
    Ok((4.0 * fine - coarse) / 3.0)
}

/// Growth rate with the boundary term from the difference eigensolver.
pub fn lambda_strip_fd(model: &StripModel, n: usize) -> Result<f64, StripError> {
    Ok((model.mean_offspring() - 1.0) * model.rate + fd_dirichlet_eigenvalue(model.width, model.drift, n)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripSolution {
    /// Nodes `0, h, …, K`.
    pub x: Vec<f64>,
    pub w: Vec<f64>,
    /// `sup |(1/2)w'' + μw' + ς(f(w) − w)|` at interior nodes.
    pub residual: f64,
    pub newton_iterations: usize,
    /// Whether Newton failed and time-stepping produced the answer.
    pub fell_back: bool,
}

impl StripSolution {
    /// Value at the node nearest to `K/2`.
    pub fn midpoint(&self) -> f64 {
        self.w[self.w.len() / 2]
    }
}

struct Stencil {
    lower: f64,
    diag: f64,
    upper: f64,
}

fn stencil(model: &StripModel, h: f64) -> Stencil {
    Stencil {
        lower: 0.5 / (h * h) - 0.5 * model.drift / h,
        diag: -1.0 / (h * h),
        upper: 0.5 / (h * h) + 0.5 * model.drift / h,
    }
}

fn residual(model: &StripModel, st: &Stencil, w: &[f64]) -> Vec<f64> {
    let n = w.len() - 1;
    (1..n)
        .map(|i| st.lower * w[i - 1] + st.diag * w[i] + st.upper * w[i + 1] + model.rate * (model.pgf(w[i]) - w[i]))
        .collect()
}

/// Solves `a_i x_{i-1} + b_i x_i + c_i x_{i+1} = r_i`.
fn thomas(a: &[f64], b: &[f64], c: &[f64], r: &[f64]) -> Vec<f64> {
    let n = b.len();
    let mut cp = vec![0.0; n];
    let mut rp = vec![0.0; n];
    cp[0] = c[0] / b[0];
    rp[0] = r[0] / b[0];
    for i in 1..n {
        let den = b[i] - a[i] * cp[i - 1];
        cp[i] = c[i] / den;
        rp[i] = (r[i] - a[i] * rp[i - 1]) / den;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = rp[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = rp[i] - cp[i] * x[i + 1];
    }
    x
}

/// Semi-implicit steps of `∂u/∂t = (1/2)u'' + μu' + ς(f(u) − u)` from
/// `u = 0` with `u = 1` on the boundary, until the change per unit time
/// drops below `tol`.
fn time_march(model: &StripModel, st: &Stencil, n: usize, tol: f64, max_time: f64) -> Vec<f64> {
    let dt = 0.05;
    let mut u = vec![0.0; n + 1];
    u[0] = 1.0;
    u[n] = 1.0;
    let m = n - 1;
    let a = vec![-dt * st.lower; m];
    let b = vec![1.0 - dt * st.diag + dt * model.rate; m];
    let c = vec![-dt * st.upper; m];
    let mut t = 0.0;
    while t < max_time {
        let mut r: Vec<f64> = (1..n).map(|i| u[i] + dt * model.rate * model.pgf(u[i])).collect();
        r[0] += dt * st.lower;
        r[m - 1] += dt * st.upper;
        let next = thomas(&a, &b, &c, &r);
        let change = next.iter().zip(&u[1..n]).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / dt;
        u[1..n].copy_from_slice(&next);
        t += dt;
        if change < tol {
            break;
        }
    }
    u
}

/// Extinction probability on `[0, K]` with `w(0) = w(K) = 1`: damped Newton
/// on the central-difference equations, started from a time-marched
/// approximation of `lim u_t[0]`, falling back to time-marching.
pub fn solve_w_strip(model: &StripModel, n_cells: usize, tol: f64) -> Result<StripSolution, StripError> {
    model.validate()?;
    if n_cells < 4 {
        return Err(StripError::Invalid("need at least 4 cells".into()));
    }
    let n = n_cells;
    let h = model.width / n as f64;
    let st = stencil(model, h);
    let x: Vec<f64> = (0..=n).map(|i| i as f64 * h).collect();
    let sup = |v: &[f64]| v.iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let start = time_march(model, &st, n, 1e-3, 200.0);
    let mut w = start.clone();
    let mut res = sup(&residual(model, &st, &w));
    let mut iterations = 0;
    while res > tol && iterations < 100 {
        iterations += 1;
        let r = residual(model, &st, &w);
        let m = n - 1;
        let a = vec![st.lower; m];
        let c = vec![st.upper; m];
        let b: Vec<f64> = (1..n).map(|i| st.diag + model.rate * (model.pgf_prime(w[i]) - 1.0)).collect();
        let neg: Vec<f64> = r.iter().map(|v| -v).collect();
        let delta = thomas(&a, &b, &c, &neg);
        let mut step = 1.0;
        loop {
            let trial: Vec<f64> = w
                .iter()
                .enumerate()
                .map(|(i, v)| if i == 0 || i == n { 1.0 } else { (v + step * delta[i - 1]).clamp(0.0, 1.0) })
                .collect();
            let tr = sup(&residual(model, &st, &trial));
            if tr < res || step < 1e-4 {
                w = trial;
                res = tr;
                break;
            }
            step *= 0.5;
        }
        if !res.is_finite() {
            break;
        }
    }
    if res <= tol {
        return Ok(StripSolution { x, w, residual: res, newton_iterations: iterations, fell_back: false });
    }
    let w = time_march(model, &st, n, tol * 1e-2, 1e4);
    let res = sup(&residual(model, &st, &w));
    if res <= tol {
        Ok(StripSolution { x, w, residual: res, newton_iterations: iterations, fell_back: true })
    } else {
        Err(StripError::NoConvergence(res))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripConfig {
    pub dt: f64,
    pub horizon: f64,
    pub checkpoints: Vec<f64>,
    pub cap: usize,
}

impl StripConfig {
    pub fn new(dt: f64, checkpoints: Vec<f64>) -> Self {
        let horizon = checkpoints.iter().copied().fold(0.0, f64::max);
        Self { dt, horizon, checkpoints, cap: 1_000_000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripTrajectory {
    /// Particle positions at each checkpoint.
    pub snapshots: Vec<Vec<f64>>,
}

impl StripTrajectory {
    pub fn counts(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.len() as f64).collect()
    }
}

struct Walker {
    x: f64,
    /// Absolute time of the next branching.
    clock: f64,
}

/// Moves `x` by drift and Gaussian noise over `dt`; `None` if the path left
/// the strip, including crossings between the endpoints detected through the
/// Brownian-bridge probability `exp(−2 d d′ / dt)` for each wall.
fn diffuse(model: &StripModel, x: f64, dt: f64, rng: &mut SimRng) -> Option<f64> {
    if dt <= 0.0 {
        return Some(x);
    }
    let z: f64 = StandardNormal.sample(rng);
    let y = x + model.drift * dt + dt.sqrt() * z;
    if y <= 0.0 || y >= model.width {
        return None;
    }
    let cross_low = (-2.0 * x * y / dt).exp();
    let cross_high = (-2.0 * (model.width - x) * (model.width - y) / dt).exp();
    let survive = (1.0 - cross_low) * (1.0 - cross_high);
    if rng.random::<f64>() < survive {
        Some(y)
    } else {
        None
    }
}

/// One realisation from a single particle at `x0`: diffusion steps of
/// length `dt` with bridge-corrected absorption and exponential branch
/// clocks resolved at their exact times.
pub fn simulate_strip(model: &StripModel, x0: f64, cfg: &StripConfig, rng: &mut SimRng) -> Result<StripTrajectory, StripError> {
    model.validate()?;
    if !(x0 > 0.0 && x0 < model.width) {
        return Err(StripError::Start(x0));
    }
    if !(cfg.dt > 0.0) || cfg.checkpoints.windows(2).any(|w| w[0] > w[1]) {
        return Err(StripError::Invalid("time grid".into()));
    }
    let clock = |t: f64, rng: &mut SimRng| t + <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / model.rate;
    let mut pop = vec![Walker { x: x0, clock: clock(0.0, rng) }];
    let mut snapshots = Vec::with_capacity(cfg.checkpoints.len());
    let mut t = 0.0;
    let mut next_cp = 0;
    while next_cp < cfg.checkpoints.len() {
        let target = cfg.checkpoints[next_cp];
        while t < target - 1e-12 {
            let t1 = (t + cfg.dt).min(target);
            let mut stack: Vec<(f64, Walker)> = pop.drain(..).map(|w| (t, w)).collect();
            while let Some((s, mut wk)) = stack.pop() {
                if wk.clock < t1 {
                    let Some(y) = diffuse(model, wk.x, wk.clock - s, rng) else { continue };
                    let tb = wk.clock;
                    for _ in 0..model.sample_count(rng) {
                        stack.push((tb, Walker { x: y, clock: clock(tb, rng) }));
                    }
                } else if let Some(y) = diffuse(model, wk.x, t1 - s, rng) {
                    wk.x = y;
                    pop.push(wk);
                }
                if pop.len() + stack.len() > cfg.cap {
                    return Err(StripError::CapExceeded { cap: cfg.cap, time: t1 });
                }
            }
            t = t1;
        }
        snapshots.push(pop.iter().map(|w| w.x).collect());
        next_cp += 1;
    }
    Ok(StripTrajectory { snapshots })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::asymptotics::estimate_lambda_from_counts;
    use crate::stats::{replicates, stream};

    fn binary(width: f64, drift: f64) -> StripModel {
        StripModel { width, drift, rate: 1.0, counts: vec![0.0, 0.0, 1.0] }
    }

    #[test]
    fn gw3_closed_forms() {
        let g = GwInstance::gw3();
        assert!((g.w() - 1.0 / 3.0).abs() < 1e-15);
        assert!((g.lambda() - 0.5).abs() < 1e-15);
        assert!((g.p() - 2.0 / 3.0).abs() < 1e-15);
        let s = g.on_strip(1.0, 0.0);
        assert!((s.pgf(g.w()) - g.w()).abs() < 1e-15);
    }

    #[test]
    fn eigenvalue_matches_difference_solver() {
        let m = binary(PI, 0.0);
        assert!((lambda_strip(&m) - 0.5).abs() < 1e-15);
        assert!((lambda_strip_fd(&m, 400).unwrap() - 0.5).abs() < 1e-6);
        for (k, mu) in [(2.0, 0.7), (5.0, -0.3), (1.0, 2.0)] {
            let m = binary(k, mu);
            let fd = lambda_strip_fd(&m, 400).unwrap();
            assert!((fd - lambda_strip(&m)).abs() < 1e-6, "K={k} μ={mu}: {fd} vs {}", lambda_strip(&m));
        }
    }

    #[test]
    fn boundary_term_scales_with_inverse_square_width() {
        // π²/(2K) in place of π²/(2K²) disagrees with the eigensolver
        let m = binary(3.0, 0.0);
        let alt = 1.0 - PI * PI / (2.0 * 3.0);
        assert!((lambda_strip_fd(&m, 400).unwrap() - alt).abs() > 0.5);
    }

    #[test]
    fn strong_drift_is_subcritical_and_wide_strip_recovers_spaceless_rate() {
        assert!(lambda_strip_fd(&binary(PI, 3.0), 400).unwrap() < 0.0);
        assert!((lambda_strip(&binary(1e4, 0.0)) - 1.0).abs() < 1e-7);
    }

    #[test]
    fn symmetric_solution_with_unit_boundary() {
        let m = GwInstance::gw3().on_strip(12.0, 0.0);
        let s = solve_w_strip(&m, 240, 1e-10).unwrap();
        assert_eq!(s.w[0], 1.0);
        assert_eq!(*s.w.last().unwrap(), 1.0);
        let n = s.w.len();
        for i in 0..n {
            assert!((s.w[i] - s.w[n - 1 - i]).abs() < 1e-8);
        }
        assert!(s.w.iter().all(|v| *v > 1.0 / 3.0 - 1e-9 && *v <= 1.0));
    }

    #[test]
    fn wide_strip_plateau() {
        let m = GwInstance::gw3().on_strip(40.0, 0.0);
        let s = solve_w_strip(&m, 800, 1e-10).unwrap();
        assert!((s.midpoint() - 1.0 / 3.0).abs() < 1e-4, "{}", s.midpoint());
    }

    #[test]
    fn subcritical_strip_is_certain_extinction() {
        let m = GwInstance::gw3().on_strip(2.0, 0.0);
        assert!(lambda_strip(&m) < 0.0);
        let s = solve_w_strip(&m, 80, 1e-10).unwrap();
        assert!(s.w.iter().all(|v| (v - 1.0).abs() < 1e-6), "{:?}", s.midpoint());
    }

    #[test]
    fn pure_diffusion_survival_decreases() {
        let m = StripModel { width: 1.0, drift: 0.0, rate: 1.0, counts: vec![0.0, 1.0] };
        let cfg = StripConfig::new(0.01, vec![0.1, 0.3, 0.6, 1.0]);
        let alive: Vec<Vec<f64>> = replicates(5000, 11, "strip", |_, rng| simulate_strip(&m, 0.5, &cfg, rng).unwrap().counts());
        let frac: Vec<f64> = (0..4).map(|k| alive.iter().map(|r| r[k]).sum::<f64>() / 5000.0).collect();
        assert!(frac.windows(2).all(|w| w[1] < w[0]), "{frac:?}");
        // survival of Brownian motion in (0,1) from the centre decays like
        // (4/π) e^{−π²t/2}
        let exact = 4.0 / PI * (-PI * PI / 2.0).exp();
        assert!((frac[3] - exact).abs() < 0.02, "{} vs {exact}", frac[3]);
    }

    #[test]
    fn seeded_runs_repeat() {
        let m = binary(PI, 0.0);
        let cfg = StripConfig::new(0.01, vec![1.0, 2.0]);
        let a = simulate_strip(&m, 1.0, &cfg, &mut stream(3, 0, "strip")).unwrap();
        let b = simulate_strip(&m, 1.0, &cfg, &mut stream(3, 0, "strip")).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn simulated_growth_covers_gw3_strip_rate() {
        let m = GwInstance::gw3().on_strip(PI, 0.0);
        let times: Vec<f64> = (2..=8).map(|k| k as f64 * 0.5).collect();
        let cfg = StripConfig::new(0.01, times.clone());
        let rows: Vec<Vec<f64>> = replicates(10_000, 12, "strip", |_, rng| simulate_strip(&m, PI / 2.0, &cfg, rng).unwrap().counts());
        let mut rng = stream(12, 0, "bootstrap");
        let est = estimate_lambda_from_counts(&rows, &times, 1.0, 400, 0.99, &mut rng).unwrap();
        assert!(est.covers(lambda_strip(&m)), "{est:?}");
    }
}
