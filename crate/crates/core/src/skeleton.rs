//! Prolific/doomed decomposition of a branching particle system.
//!
//! Given the extinction probability `w` and `p = 1 − w`:
//!
//! * doomed (`Down`) particles scatter with the `w`-tilted kernel
//!   `σ_s π_s(υ,υ′) w(r,υ′)/w(r,υ)`, branch at rate `ς E∏w / w` and keep
//!   configuration `(x_1..x_N)` with probability proportional to `∏ w(x_i)`;
//! * prolific (`Up`) particles scatter with the `p`-tilted kernel, branch at
//!   rate `ς (1 − E∏w) / p`, and at a branch point every child is marked
//!   prolific with probability `p(x_i)`, conditioned on at least one
//!   prolific child. Unmarked-prolific children start doomed subtrees.
//!
//! Neither tilted motion carries a potential, because `Lw + G[w] = 0`.

use crate::cross_sections::{CellData, CrossSectionModel, ModelError};
use crate::mbp_engine::{
    simulate_with_rng, Dynamics, Mark, ParticleSystem, Rates, SimConfig, SimError, Trajectory,
};
use crate::phase_space::{PhasePoint, SpatialDomain, Vec3};
use crate::rod_oracle::{GridFunction, SurvivalField};
use crate::stats::SimRng;
use num_rational::Rational64;
use num_traits::{One, Zero};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SkeletonError {
    #[error("extinction probability {w} at {at} is outside ({floor}, 1 - {floor})")]
    OutOfRange { w: f64, floor: f64, at: String },
    #[error("every child has zero survival probability; the prolific law is undefined")]
    NoProlificChild,
    #[error("empty offspring list")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<SkeletonError> for SimError {
    fn from(e: SkeletonError) -> Self {
        SimError::Dynamics(e.to_string())
    }
}

/// Extinction probability as a function on phase space.
pub trait Survival: Sync {
    fn w(&self, x: &PhasePoint) -> f64;

    fn p(&self, x: &PhasePoint) -> f64 {
        1.0 - self.w(x)
    }

    /// Bounds of `w(r, υ′)` for `r` on the flight `x.r + x.v s`,
    /// `s ∈ [s0, s1]`.
    fn w_range(&self, x: &PhasePoint, s0: f64, s1: f64, v: &Vec3, vi: Option<usize>) -> (f64, f64);

    /// The value when `w` is constant.
    fn constant(&self) -> Option<f64> {
        None
    }
}

/// Constant extinction probability, as in spaceless branching.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstantSurvival(pub f64);

impl Survival for ConstantSurvival {
    fn w(&self, _x: &PhasePoint) -> f64 {
        self.0
    }

    fn w_range(&self, _x: &PhasePoint, _s0: f64, _s1: f64, _v: &Vec3, _vi: Option<usize>) -> (f64, f64) {
        (self.0, self.0)
    }

    fn constant(&self) -> Option<f64> {
        Some(self.0)
    }
}

/// Grid extinction probability on a rod, interpolated per velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSurvival {
    pub w: GridFunction,
}

impl GridSurvival {
    pub fn new(w: GridFunction) -> Self {
        Self { w }
    }

    /// Wraps a solved field after checking `floor < w < 1 − floor` in
    /// every cell and velocity.
    pub fn checked(field: &SurvivalField, floor: f64) -> Result<Self, SkeletonError> {
        let w = &field.w;
        let k = w.grid.k();
        for i in 0..w.grid.n_cells {
            for v in 0..k {
                let wi = w.at_cell(i, v);
                if !(wi > floor && wi < 1.0 - floor) {
                    return Err(SkeletonError::OutOfRange {
                        w: wi,
                        floor,
                        at: format!("cell {i} (x = {}), velocity {v}", w.grid.center(i)),
                    });
                }
            }
        }
        Ok(Self::new(w.clone()))
    }
}

/// Smallest survival probability admitted by the checked constructors.
pub const P_FLOOR: f64 = 1e-6;

impl Survival for GridSurvival {
    fn w(&self, x: &PhasePoint) -> f64 {
        self.w.eval(x.r.x, x.vi.expect("rod velocities are indexed"))
    }

    fn w_range(&self, x: &PhasePoint, s0: f64, s1: f64, _v: &Vec3, vi: Option<usize>) -> (f64, f64) {
        let a = x.r.x + x.v.x * s0;
        let b = x.r.x + x.v.x * s1;
        self.w.range(a.min(b), a.max(b), vi.expect("rod velocities are indexed"))
    }
}

/// Tilted dynamics of marked particles. Unmarked particles follow the
/// original process.
pub struct Skeletal<'a, S: Survival> {
    pub model: &'a CrossSectionModel,
    pub field: &'a S,
    /// Give up on a branch event after this many rejected configurations.
    pub max_resamples: usize,
}

impl<'a, S: Survival> Skeletal<'a, S> {
    pub fn new(model: &'a CrossSectionModel, field: &'a S) -> Self {
        Self { model, field, max_resamples: 1_000_000 }
    }

    fn at(&self, r: Vec3, v: &Vec3, vi: Option<usize>) -> PhasePoint {
        PhasePoint::new(r, *v, vi)
    }

    /// `ς↓(x) = ς(x) E_x[∏ w(x_j)] / w(x)`.
    pub fn down_rate(&self, x: &PhasePoint) -> f64 {
        let c = self.model.cell(x);
        let ew = self.model.pgf(x, |v, vi| self.field.w(&self.at(x.r, v, vi)));
        c.sigma_f * ew / self.field.w(x)
    }

    /// `ς↕(x) = ς(x) (1 − E_x[∏ w(x_j)]) / p(x)`.
    pub fn up_rate(&self, x: &PhasePoint) -> f64 {
        let c = self.model.cell(x);
        let ew = self.model.pgf(x, |v, vi| self.field.w(&self.at(x.r, v, vi)));
        c.sigma_f * (1.0 - ew) / self.field.p(x)
    }

    /// Total rate of the `w`-tilted scattering.
    pub fn down_scatter_rate(&self, x: &PhasePoint) -> f64 {
        let c = self.model.cell(x);
        if c.sigma_s == 0.0 {
            return 0.0;
        }
        let tilt = self.model.scatter_integral_in(c, |v, vi| self.field.w(&self.at(x.r, v, vi)));
        c.sigma_s * tilt / self.field.w(x)
    }

    /// Total rate of the `p`-tilted scattering.
    pub fn up_scatter_rate(&self, x: &PhasePoint) -> f64 {
        let c = self.model.cell(x);
        if c.sigma_s == 0.0 {
            return 0.0;
        }
        let tilt = self.model.scatter_integral_in(c, |v, vi| self.field.p(&self.at(x.r, v, vi)));
        c.sigma_s * tilt / self.field.p(x)
    }

    fn slab_bound(&self, cell: &CellData, mark: Mark, x: &PhasePoint, s0: f64, s1: f64) -> f64 {
        let range = |v: &Vec3, vi: Option<usize>| self.field.w_range(x, s0, s1, v, vi);
        let (own_lo, own_hi) = range(&x.v, x.vi);
        match mark {
            Mark::Down => {
                if own_lo <= 0.0 {
                    return f64::INFINITY;
                }
                let scat = if cell.sigma_s > 0.0 {
                    cell.sigma_s * self.model.scatter_integral_in(cell, |v, vi| range(v, vi).1)
                } else {
                    0.0
                };
                let br = cell.sigma_f * self.model.pgf_in(cell, |v, vi| range(v, vi).1);
                (scat + br) / own_lo
            }
            Mark::Up => {
                let p_lo = 1.0 - own_hi;
                if p_lo <= 0.0 {
                    return f64::INFINITY;
                }
                let scat = if cell.sigma_s > 0.0 {
                    cell.sigma_s * self.model.scatter_integral_in(cell, |v, vi| 1.0 - range(v, vi).0)
                } else {
                    0.0
                };
                let br = cell.sigma_f * (1.0 - self.model.pgf_in(cell, |v, vi| range(v, vi).0));
                (scat + br) / p_lo
            }
            Mark::Unmarked => cell.sigma_s + cell.sigma_f,
        }
    }

    /// Draw from `π_s` tilted by `h` (`w` or `p`).
    fn tilted_scatter<H: Fn(&PhasePoint) -> f64>(
        &self,
        x: &PhasePoint,
        h: H,
        rng: &mut SimRng,
    ) -> Result<PhasePoint, SimError> {
        if self.field.constant().is_some() {
            return Ok(self.model.sample_scatter(x, rng));
        }
        let k = self
            .model
            .velocities
            .len()
            .ok_or_else(|| SimError::Dynamics("spatially varying tilts need a discrete velocity set".into()))?;
        let weights: Vec<f64> = (0..k)
            .map(|j| {
                let y = PhasePoint::new(x.r, self.model.velocities.velocity(j), Some(j));
                self.model.scatter_kernel(x, Some(j)) * h(&y)
            })
            .collect();
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(SimError::Dynamics("tilted scatter kernel has no mass".into()));
        }
        let u: f64 = rng.random::<f64>() * total;
        let mut acc = 0.0;
        for (j, wj) in weights.iter().enumerate() {
            acc += wj;
            if u < acc {
                return Ok(PhasePoint::new(x.r, self.model.velocities.velocity(j), Some(j)));
            }
        }
        let j = weights.iter().rposition(|w| *w > 0.0).expect("positive mass");
        Ok(PhasePoint::new(x.r, self.model.velocities.velocity(j), Some(j)))
    }
}

impl<S: Survival> Dynamics for Skeletal<'_, S> {
    fn domain(&self) -> &SpatialDomain {
        &self.model.domain
    }

    fn rates(&self, mark: Mark, x: &PhasePoint) -> Rates {
        match mark {
            Mark::Unmarked => {
                let c = self.model.cell(x);
                Rates { scatter: c.sigma_s, branch: c.sigma_f }
            }
            Mark::Down => Rates { scatter: self.down_scatter_rate(x), branch: self.down_rate(x) },
            Mark::Up => Rates { scatter: self.up_scatter_rate(x), branch: self.up_rate(x) },
        }
    }

    fn rate_bound(&self, mark: Mark, x: &PhasePoint, s0: f64, s1: f64) -> f64 {
        let a = x.r.x + x.v.x * s0;
        let b = x.r.x + x.v.x * s1;
        let group = self.model.group_of(x);
        self.model
            .slabs_between(a.min(b), a.max(b))
            .map(|slab| self.slab_bound(self.model.cell_at(slab, group), mark, x, s0, s1))
            .fold(0.0, f64::max)
    }

    fn scatter(&self, mark: Mark, x: &PhasePoint, rng: &mut SimRng) -> Result<PhasePoint, SimError> {
        match mark {
            Mark::Unmarked => Ok(self.model.sample_scatter(x, rng)),
            Mark::Down => self.tilted_scatter(x, |y| self.field.w(y), rng),
            Mark::Up => self.tilted_scatter(x, |y| self.field.p(y), rng),
        }
    }

    fn branch(
        &self,
        mark: Mark,
        x: &PhasePoint,
        rng: &mut SimRng,
    ) -> Result<Vec<(Mark, PhasePoint)>, SimError> {
        match mark {
            Mark::Unmarked => Ok(self.model.sample_offspring(x, rng).into_iter().map(|c| (mark, c)).collect()),
            Mark::Down => {
                for _ in 0..self.max_resamples {
                    let kids = self.model.sample_offspring(x, rng);
                    let keep: f64 = kids.iter().map(|c| self.field.w(c)).product();
                    if rng.random::<f64>() < keep {
                        return Ok(kids.into_iter().map(|c| (Mark::Down, c)).collect());
                    }
                }
                Err(SimError::Dynamics("doomed offspring law could not be sampled".into()))
            }
            Mark::Up => {
                for _ in 0..self.max_resamples {
                    let kids = self.model.sample_offspring(x, rng);
                    let marks: Vec<Mark> = kids
                        .iter()
                        .map(|c| if rng.random::<f64>() < self.field.p(c) { Mark::Up } else { Mark::Down })
                        .collect();
                    if marks.contains(&Mark::Up) {
                        return Ok(marks.into_iter().zip(kids).collect());
                    }
                }
                Err(SkeletonError::NoProlificChild.into())
            }
        }
    }
}

/// Mark a given offspring list: each child prolific with probability
/// `p(x_i)`, redrawn until at least one is prolific.
pub fn sample_prolific_subset<S: Survival>(
    offspring: &[PhasePoint],
    field: &S,
    rng: &mut SimRng,
) -> Result<Vec<usize>, SkeletonError> {
    if offspring.is_empty() {
        return Err(SkeletonError::Empty);
    }
    let p: Vec<f64> = offspring.iter().map(|x| field.p(x)).collect();
    if p.iter().all(|v| *v <= 0.0) {
        return Err(SkeletonError::NoProlificChild);
    }
    loop {
        let set: Vec<usize> = p
            .iter()
            .enumerate()
            .filter(|(_, pi)| rng.random::<f64>() < **pi)
            .map(|(i, _)| i)
            .collect();
        if !set.is_empty() {
            return Ok(set);
        }
    }
}

/// Independent Bernoulli(`p(x_i)`) thinning of a configuration; the kept
/// particles are marked prolific.
pub fn mark_binpp<S: Survival>(system: &ParticleSystem, field: &S, rng: &mut SimRng) -> ParticleSystem {
    let particles = system
        .particles
        .iter()
        .filter(|q| rng.random::<f64>() < field.p(&q.x))
        .map(|q| crate::mbp_engine::Particle { id: q.id, mark: Mark::Up, x: q.x })
        .collect();
    ParticleSystem { time: system.time, particles }
}

/// Dressed prolific tree from `x`: a prolific root with doomed immigrants.
pub fn simulate_dressed<S: Survival>(
    x: &PhasePoint,
    cfg: &SimConfig,
    dynamics: &Skeletal<'_, S>,
    rng: &mut SimRng,
) -> Result<Trajectory, SimError> {
    let mu = ParticleSystem::new(&[*x], Mark::Up);
    simulate_with_rng(&mu, cfg, dynamics, rng)
}

/// Per-root draws of a mixture reconstruction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureManifest {
    pub roots: Vec<RootDraw>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootDraw {
    pub index: usize,
    pub p: f64,
    pub prolific: bool,
}

/// Each root becomes a dressed prolific tree with probability `p(x_i)` and a
/// doomed tree otherwise; all trees evolve together.
pub fn reconstruct_mixture<S: Survival>(
    mu: &ParticleSystem,
    cfg: &SimConfig,
    dynamics: &Skeletal<'_, S>,
    rng: &mut SimRng,
) -> Result<(Trajectory, MixtureManifest), SimError> {
    let mut roots = Vec::with_capacity(mu.count());
    let mut marked = mu.clone();
    for (i, q) in marked.particles.iter_mut().enumerate() {
        let p = dynamics.field.p(&q.x);
        let prolific = rng.random::<f64>() < p;
        q.mark = if prolific { Mark::Up } else { Mark::Down };
        roots.push(RootDraw { index: i, p, prolific });
    }
    let tr = simulate_with_rng(&marked, cfg, dynamics, rng)?;
    Ok((tr, MixtureManifest { roots }))
}

/// Enumerated doomed branching law at one point of a discrete model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownProcessSpec {
    pub base_rate: f64,
    pub rate: f64,
    /// `(probability, child velocity indices)`.
    pub law: Vec<(f64, Vec<usize>)>,
    /// Tilted scatter mass over outgoing velocities (rates, not normalised).
    pub scatter: Vec<f64>,
    pub mean_offspring: f64,
}

/// Enumerated prolific branching law at one point of a discrete model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpProcessSpec {
    pub base_rate: f64,
    pub rate: f64,
    /// `(probability, child velocity indices, prolific flags)`.
    pub law: Vec<(f64, Vec<usize>, Vec<bool>)>,
    pub scatter: Vec<f64>,
}

fn w_at<S: Survival>(model: &CrossSectionModel, field: &S, x: &PhasePoint, j: usize) -> f64 {
    field.w(&PhasePoint::new(x.r, model.velocities.velocity(j), Some(j)))
}

fn check_open<S: Survival>(model: &CrossSectionModel, field: &S, x: &PhasePoint) -> Result<(), SkeletonError> {
    let k = model.velocities.len().ok_or(ModelError::NeedsDiscrete)?;
    for j in 0..k {
        let w = w_at(model, field, x, j);
        if !(w > 0.0 && w < 1.0) {
            return Err(SkeletonError::OutOfRange { w, floor: 0.0, at: format!("r = {:?}, velocity {j}", x.r.as_slice()) });
        }
    }
    Ok(())
}

/// Doomed law at `x`; `w` must lie in `(0, 1)` for every velocity at `x`.
pub fn build_down<S: Survival>(model: &CrossSectionModel, field: &S, x: &PhasePoint) -> Result<DownProcessSpec, SkeletonError> {
    check_open(model, field, x)?;
    build_down_unchecked(model, field, x)
}

/// As [`build_down`] without the range check (degenerate tilts allowed).
pub fn build_down_unchecked<S: Survival>(
    model: &CrossSectionModel,
    field: &S,
    x: &PhasePoint,
) -> Result<DownProcessSpec, SkeletonError> {
    let k = model.velocities.len().ok_or(ModelError::NeedsDiscrete)?;
    let cell = model.cell(x);
    let confs = model.enumerate_offspring(x)?;
    let weights: Vec<f64> = confs
        .iter()
        .map(|(p, kids)| p * kids.iter().map(|j| w_at(model, field, x, *j)).product::<f64>())
        .collect();
    let ew: f64 = weights.iter().sum();
    let wx = field.w(x);
    let law: Vec<(f64, Vec<usize>)> = confs
        .into_iter()
        .zip(&weights)
        .map(|((_, kids), q)| (q / ew, kids))
        .collect();
    let mean_offspring = law.iter().map(|(q, kids)| q * kids.len() as f64).sum();
    let scatter = (0..k)
        .map(|j| cell.sigma_s * model.scatter_kernel(x, Some(j)) * w_at(model, field, x, j) / wx)
        .collect();
    Ok(DownProcessSpec { base_rate: cell.sigma_f, rate: cell.sigma_f * ew / wx, law, scatter, mean_offspring })
}

/// Prolific law at `x` by enumerating configurations and prolific subsets.
pub fn build_up<S: Survival>(model: &CrossSectionModel, field: &S, x: &PhasePoint) -> Result<UpProcessSpec, SkeletonError> {
    check_open(model, field, x)?;
    build_up_unchecked(model, field, x)
}

/// As [`build_up`] without the range check.
pub fn build_up_unchecked<S: Survival>(
    model: &CrossSectionModel,
    field: &S,
    x: &PhasePoint,
) -> Result<UpProcessSpec, SkeletonError> {
    let k = model.velocities.len().ok_or(ModelError::NeedsDiscrete)?;
    let cell = model.cell(x);
    let px = field.p(x);
    let mut law = Vec::new();
    let mut mass = 0.0;
    for (q, kids) in model.enumerate_offspring(x)? {
        let n = kids.len();
        let ws: Vec<f64> = kids.iter().map(|j| w_at(model, field, x, *j)).collect();
        for subset in 1u32..(1u32 << n) {
            let flags: Vec<bool> = (0..n).map(|i| subset & (1 << i) != 0).collect();
            let pr: f64 = flags.iter().zip(&ws).map(|(up, w)| if *up { 1.0 - w } else { *w }).product();
            if pr > 0.0 {
                law.push((q * pr, kids.clone(), flags));
                mass += q * pr;
            }
        }
    }
    for entry in &mut law {
        entry.0 /= mass;
    }
    let scatter = (0..k)
        .map(|j| cell.sigma_s * model.scatter_kernel(x, Some(j)) * (1.0 - w_at(model, field, x, j)) / px)
        .collect();
    Ok(UpProcessSpec { base_rate: cell.sigma_f, rate: cell.sigma_f * mass / px, law, scatter })
}

impl UpProcessSpec {
    /// Probability of `n_up` prolific and `n_down` doomed children.
    pub fn split_probability(&self, n_up: usize, n_down: usize) -> f64 {
        self.law
            .iter()
            .filter(|(_, _, f)| f.iter().filter(|u| **u).count() == n_up && f.len() - n_up == n_down)
            .map(|(q, _, _)| q)
            .sum()
    }
}

/// `Σ_{I ⊆ {1..N}} ∏_{i∈I} p_i ∏_{i∉I} w_i` by enumeration of all subsets.
pub fn subset_sum(p: &[f64]) -> f64 {
    let n = p.len();
    (0u32..(1u32 << n))
        .map(|s| (0..n).map(|i| if s & (1 << i) != 0 { p[i] } else { 1.0 - p[i] }).product::<f64>())
        .sum()
}

/// Branching generators at a point of a discrete model, for functions of
/// the velocity at that point.
pub struct Generators<'a> {
    pub model: &'a CrossSectionModel,
    pub x: PhasePoint,
    pub w: Vec<f64>,
}

impl Generators<'_> {
    fn pgf(&self, f: &[f64]) -> f64 {
        self.model.pgf(&self.x, |_, j| f[j.expect("discrete")])
    }

    fn v(&self) -> usize {
        self.x.vi.expect("discrete")
    }

    /// `G[f] = ς (E∏f − f)`.
    pub fn g(&self, f: &[f64]) -> f64 {
        self.model.sigma_f(&self.x) * (self.pgf(f) - f[self.v()])
    }

    /// `G↑[f] = (G[pf + w] − (1 − f) G[w]) / p`.
    pub fn g_up(&self, f: &[f64]) -> f64 {
        let v = self.v();
        let mix: Vec<f64> = f.iter().zip(&self.w).map(|(fi, wi)| (1.0 - wi) * fi + wi).collect();
        (self.g(&mix) - (1.0 - f[v]) * self.g(&self.w)) / (1.0 - self.w[v])
    }

    /// `G↕[f, g]` by enumeration of configurations and prolific subsets.
    pub fn g_updown(&self, f: &[f64], g: &[f64]) -> Result<f64, ModelError> {
        let v = self.v();
        let p: Vec<f64> = self.w.iter().map(|w| 1.0 - w).collect();
        let mut acc = 0.0;
        let mut ew = 0.0;
        for (q, kids) in self.model.enumerate_offspring(&self.x)? {
            let n = kids.len();
            ew += q * kids.iter().map(|j| self.w[*j]).product::<f64>();
            for s in 1u32..(1u32 << n) {
                let term: f64 = kids
                    .iter()
                    .enumerate()
                    .map(|(i, j)| if s & (1 << i) != 0 { p[*j] * f[*j] } else { self.w[*j] * g[*j] })
                    .product();
                acc += q * term;
            }
        }
        let sigma = self.model.sigma_f(&self.x);
        let rate = sigma * (1.0 - ew) / p[v];
        Ok(sigma / p[v] * acc - rate * f[v])
    }
}

/// Exact skeleton algebra for spaceless branching with rational data.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactSpaceless {
    pub down_rate: Rational64,
    /// `P↓(N = n)`.
    pub down_law: Vec<Rational64>,
    pub up_rate: Rational64,
    /// `(n_up, n_down, probability)`.
    pub up_law: Vec<(usize, usize, Rational64)>,
}

fn binomial(n: usize, k: usize) -> i64 {
    (0..k).fold(1i64, |acc, i| acc * (n - i) as i64 / (i as i64 + 1))
}

/// Doomed and prolific laws of a spaceless process with branching rate
/// `rate`, count law `counts` and extinction probability `w`.
pub fn exact_spaceless(rate: Rational64, counts: &[Rational64], w: Rational64) -> ExactSpaceless {
    let one = Rational64::one();
    let p = one - w;
    let f_w: Rational64 = counts.iter().enumerate().fold(Rational64::zero(), |acc, (n, q)| acc + *q * w.pow(n as i32));
    let down_rate = rate * f_w / w;
    let down_law = counts.iter().enumerate().map(|(n, q)| *q * w.pow(n as i32) / f_w).collect();
    let up_rate = rate * (one - f_w) / p;
    let mut up_law = Vec::new();
    for (n, q) in counts.iter().enumerate() {
        for k in 1..=n {
            let pr = *q * Rational64::from_integer(binomial(n, k)) * p.pow(k as i32) * w.pow((n - k) as i32) / (one - f_w);
            if !pr.is_zero() {
                up_law.push((k, n - k, pr));
            }
        }
    }
    ExactSpaceless { down_rate, down_law, up_rate, up_law }
}
