//! Event-driven simulation of Markov branching particle systems with
//! straight-line motion between events.
//!
//! A [`Dynamics`] supplies scatter and branch rates along flights, a bound on
//! them over flight segments, and the event kernels. Events are found by
//! thinning on segments; a segment is bisected while its bound is infinite
//! or bisection tightens it substantially, so position-dependent rates that
//! blow up near the boundary are handled without a global bound. Particles
//! are advanced in global time order from a heap, so the event log is
//! time-ordered.

use crate::cross_sections::CrossSectionModel;
use crate::phase_space::{GeometryError, PhasePoint, SpatialDomain};
use crate::stats::{mean_se, replicates, stream, SimRng};
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::io::Write;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mark {
    Unmarked,
    Up,
    Down,
}

impl Mark {
    pub fn symbol(self) -> &'static str {
        match self {
            Mark::Unmarked => "",
            Mark::Up => "up",
            Mark::Down => "down",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub scatter: f64,
    pub branch: f64,
}

impl Rates {
    pub fn total(&self) -> f64 {
        self.scatter + self.branch
    }
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("population cap {cap} exceeded at time {time}")]
    CapExceeded { cap: usize, time: f64, partial: Box<Trajectory> },
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("initial particle {0} is not inside the domain")]
    OutsideDomain(usize),
    #[error("rate {rate} exceeds its segment bound {bound} (mark {mark:?})")]
    BoundViolated { rate: f64, bound: f64, mark: Mark },
    #[error("dynamics error: {0}")]
    Dynamics(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

/// Rates and event kernels of one branching particle system.
pub trait Dynamics: Sync {
    fn domain(&self) -> &SpatialDomain;

    fn rates(&self, mark: Mark, x: &PhasePoint) -> Rates;

    /// Upper bound on `rates(mark, x.flown(s)).total()` for `s ∈ [s0, s1]`;
    /// may be infinite.
    fn rate_bound(&self, mark: Mark, x: &PhasePoint, s0: f64, s1: f64) -> f64;

    fn scatter(&self, mark: Mark, x: &PhasePoint, rng: &mut SimRng) -> Result<PhasePoint, SimError>;

    fn branch(
        &self,
        mark: Mark,
        x: &PhasePoint,
        rng: &mut SimRng,
    ) -> Result<Vec<(Mark, PhasePoint)>, SimError>;
}

/// The plain neutron branching process, thinned against a global bound.
#[derive(Debug, Clone, Copy)]
pub struct Nbp<'a> {
    pub model: &'a CrossSectionModel,
    pub sigma_bar: f64,
}

impl<'a> Nbp<'a> {
    pub fn new(model: &'a CrossSectionModel) -> Self {
        Self { model, sigma_bar: model.sup_total_rate() }
    }
}

impl Dynamics for Nbp<'_> {
    fn domain(&self) -> &SpatialDomain {
        &self.model.domain
    }

    fn rates(&self, _mark: Mark, x: &PhasePoint) -> Rates {
        let c = self.model.cell(x);
        Rates { scatter: c.sigma_s, branch: c.sigma_f }
    }

    fn rate_bound(&self, _mark: Mark, _x: &PhasePoint, _s0: f64, _s1: f64) -> f64 {
        self.sigma_bar
    }

    fn scatter(&self, _mark: Mark, x: &PhasePoint, rng: &mut SimRng) -> Result<PhasePoint, SimError> {
        Ok(self.model.sample_scatter(x, rng))
    }

    fn branch(
        &self,
        mark: Mark,
        x: &PhasePoint,
        rng: &mut SimRng,
    ) -> Result<Vec<(Mark, PhasePoint)>, SimError> {
        Ok(self.model.sample_offspring(x, rng).into_iter().map(|c| (mark, c)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Particle {
    pub id: u64,
    pub mark: Mark,
    pub x: PhasePoint,
}

/// Atomic measure `X_t = Σ δ_{x_i}` at one time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticleSystem {
    pub time: f64,
    pub particles: Vec<Particle>,
}

impl ParticleSystem {
    pub fn new(points: &[PhasePoint], mark: Mark) -> Self {
        Self {
            time: 0.0,
            particles: points
                .iter()
                .enumerate()
                .map(|(i, x)| Particle { id: i as u64, mark, x: *x })
                .collect(),
        }
    }

    pub fn single(x: PhasePoint) -> Self {
        Self::new(&[x], Mark::Unmarked)
    }

    pub fn count(&self) -> usize {
        self.particles.len()
    }

    pub fn count_mark(&self, mark: Mark) -> usize {
        self.particles.iter().filter(|p| p.mark == mark).count()
    }

    /// `⟨g, X_t⟩`.
    pub fn sum<G: Fn(&PhasePoint) -> f64>(&self, g: G) -> f64 {
        self.particles.iter().map(|p| g(&p.x)).sum()
    }

    /// `⟨g, X_t⟩` restricted to one mark.
    pub fn sum_mark<G: Fn(&PhasePoint) -> f64>(&self, mark: Mark, g: G) -> f64 {
        self.particles.iter().filter(|p| p.mark == mark).map(|p| g(&p.x)).sum()
    }

    /// `∏ g(x_i)`, one for the empty system.
    pub fn product<G: Fn(&PhasePoint) -> f64>(&self, g: G) -> f64 {
        self.particles.iter().map(|p| g(&p.x)).product()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Scatter,
    Fission { children: Vec<u64> },
    Capture,
    BoundaryExit,
    Horizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub id: u64,
    pub mark: Mark,
    #[serde(flatten)]
    pub kind: EventKind,
    pub r: [f64; 3],
    pub v: [f64; 3],
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EventLog {
    pub records: Vec<EventRecord>,
}

impl EventLog {
    /// One JSON object per line.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    /// Snapshot times in `[0, horizon]`.
    pub checkpoints: Vec<f64>,
    pub cap: usize,
    pub record_log: bool,
    /// Segment length below which an unbounded segment forces an event at
    /// its start.
    pub min_segment: f64,
}

impl SimConfig {
    pub fn new(horizon: f64, checkpoints: Vec<f64>) -> Self {
        Self { horizon, checkpoints, cap: 1_000_000, record_log: false, min_segment: 1e-12 }
    }

    pub fn at(t: f64) -> Self {
        Self::new(t, vec![t])
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(SimError::Invalid(format!("horizon {}", self.horizon)));
        }
        if self.cap == 0 {
            return Err(SimError::Invalid("population cap must be positive".into()));
        }
        if self.checkpoints.windows(2).any(|w| w[0] > w[1]) {
            return Err(SimError::Invalid("checkpoints must be sorted".into()));
        }
        if self.checkpoints.iter().any(|c| *c < 0.0 || *c > self.horizon) {
            return Err(SimError::Invalid("checkpoints must lie in [0, horizon]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimCounters {
    pub candidates: u64,
    pub events: u64,
    pub forced: u64,
    pub exits_by_mark: [u64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub snapshots: Vec<ParticleSystem>,
    pub log: Option<EventLog>,
    /// Time of the last event if the system died out before the horizon.
    pub extinction_time: Option<f64>,
    pub counters: SimCounters,
}

impl Trajectory {
    pub fn at(&self, i: usize) -> &ParticleSystem {
        &self.snapshots[i]
    }

    pub fn last(&self) -> &ParticleSystem {
        self.snapshots.last().expect("at least one checkpoint")
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Next {
    Scatter,
    Branch,
    Exit,
}

struct Live {
    id: u64,
    mark: Mark,
    t0: f64,
    x: PhasePoint,
    next: Option<(f64, Next)>,
}

#[derive(PartialEq)]
struct Key {
    time: f64,
    seq: u64,
    slot: usize,
}

impl Eq for Key {}

impl Ord for Key {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (time, seq)
        other.time.total_cmp(&self.time).then_with(|| other.seq.cmp(&self.seq))
    }
}

impl PartialOrd for Key {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn mark_slot(m: Mark) -> usize {
    match m {
        Mark::Unmarked => 0,
        Mark::Up => 1,
        Mark::Down => 2,
    }
}

/// First event of a particle at `x` (time `t0`) before `horizon`, or `None`
/// if it is still in flight at the horizon.
fn next_event<D: Dynamics + ?Sized>(
    dynamics: &D,
    mark: Mark,
    x: &PhasePoint,
    t0: f64,
    cfg: &SimConfig,
    rng: &mut SimRng,
    counters: &mut SimCounters,
) -> Result<Option<(f64, Next)>, SimError> {
    let kappa = dynamics.domain().exit_time(&x.r, &x.v)?;
    let remaining = cfg.horizon - t0;
    let end = kappa.min(remaining);
    let exit_or_park = || {
        if kappa <= remaining {
            Some((t0 + kappa, Next::Exit))
        } else {
            None
        }
    };
    let mut s = 0.0;
    while s < end {
        let mut e = end;
        let mut b = dynamics.rate_bound(mark, x, s, e);
        while e - s > cfg.min_segment {
            let mid = 0.5 * (s + e);
            if b.is_infinite() {
                e = mid;
                b = dynamics.rate_bound(mark, x, s, e);
                continue;
            }
            if b * (e - s) > 8.0 {
                let bh = dynamics.rate_bound(mark, x, s, mid);
                if bh <= 0.75 * b {
                    e = mid;
                    b = bh;
                    continue;
                }
            }
            break;
        }
        if b.is_infinite() {
            let r = dynamics.rates(mark, &x.flown(s));
            if r.total() > 0.0 {
                counters.forced += 1;
                let u: f64 = rng.random::<f64>() * r.total();
                let kind = if u < r.scatter { Next::Scatter } else { Next::Branch };
                return Ok(Some((t0 + s, kind)));
            }
            s = e;
            continue;
        }
        if b <= 0.0 {
            s = e;
            continue;
        }
        loop {
            let step: f64 = Exp1.sample(rng);
            let cand = s + step / b;
            if cand >= e {
                s = e;
                break;
            }
            counters.candidates += 1;
            s = cand;
            let r = dynamics.rates(mark, &x.flown(cand));
            let tot = r.total();
            if tot > b * (1.0 + 1e-9) {
                return Err(SimError::BoundViolated { rate: tot, bound: b, mark });
            }
            let u: f64 = rng.random::<f64>() * b;
            if u < tot {
                let kind = if u < r.scatter { Next::Scatter } else { Next::Branch };
                return Ok(Some((t0 + cand, kind)));
            }
        }
    }
    Ok(exit_or_park())
}

fn record(log: &mut Option<EventLog>, time: f64, p: &Live, x: &PhasePoint, kind: EventKind) {
    if let Some(l) = log.as_mut() {
        l.records.push(EventRecord {
            time,
            id: p.id,
            mark: p.mark,
            kind,
            r: [x.r.x, x.r.y, x.r.z],
            v: [x.v.x, x.v.y, x.v.z],
        });
    }
}

fn snapshot(slots: &[Option<Live>], time: f64) -> ParticleSystem {
    let mut particles: Vec<Particle> = slots
        .iter()
        .flatten()
        .map(|p| Particle { id: p.id, mark: p.mark, x: p.x.flown(time - p.t0) })
        .collect();
    particles.sort_by_key(|p| p.id);
    ParticleSystem { time, particles }
}

/// Simulate from `mu` with an explicit stream.
pub fn simulate_with_rng<D: Dynamics + ?Sized>(
    mu: &ParticleSystem,
    cfg: &SimConfig,
    dynamics: &D,
    rng: &mut SimRng,
) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let domain = dynamics.domain();
    for (i, p) in mu.particles.iter().enumerate() {
        if !domain.contains_closure(&p.x.r) {
            return Err(SimError::OutsideDomain(i));
        }
    }
    let mut counters = SimCounters::default();
    let mut log = if cfg.record_log { Some(EventLog::default()) } else { None };
    let mut slots: Vec<Option<Live>> = Vec::new();
    let mut free: Vec<usize> = Vec::new();
    let mut heap: BinaryHeap<Key> = BinaryHeap::new();
    let mut seq = 0u64;
    let mut next_id = mu.particles.iter().map(|p| p.id + 1).max().unwrap_or(0);
    let mut alive = 0usize;
    let mut snaps: Vec<ParticleSystem> = Vec::with_capacity(cfg.checkpoints.len());
    let mut extinction_time = None;

    macro_rules! insert {
        ($id:expr, $mark:expr, $t0:expr, $x:expr) => {{
            let next = next_event(dynamics, $mark, &$x, $t0, cfg, rng, &mut counters)?;
            let live = Live { id: $id, mark: $mark, t0: $t0, x: $x, next };
            let slot = match free.pop() {
                Some(s) => {
                    slots[s] = Some(live);
                    s
                }
                None => {
                    slots.push(Some(live));
                    slots.len() - 1
                }
            };
            if let Some((t, _)) = next {
                heap.push(Key { time: t, seq, slot });
                seq += 1;
            }
            alive += 1;
        }};
    }

    for p in &mu.particles {
        insert!(p.id, p.mark, 0.0, p.x);
    }
    if alive > cfg.cap {
        return Err(SimError::CapExceeded {
            cap: cfg.cap,
            time: 0.0,
            partial: Box::new(Trajectory { snapshots: snaps, log, extinction_time, counters }),
        });
    }

    while let Some(Key { time, slot, .. }) = heap.pop() {
        while snaps.len() < cfg.checkpoints.len() && cfg.checkpoints[snaps.len()] < time {
            snaps.push(snapshot(&slots, cfg.checkpoints[snaps.len()]));
        }
        let p = slots[slot].take().expect("scheduled slot is live");
        let (_, kind) = p.next.expect("scheduled particle has an event");
        let x = p.x.flown(time - p.t0);
        counters.events += 1;
        match kind {
            Next::Exit => {
                counters.exits_by_mark[mark_slot(p.mark)] += 1;
                record(&mut log, time, &p, &x, EventKind::BoundaryExit);
                free.push(slot);
                alive -= 1;
            }
            Next::Scatter => {
                let y = dynamics.scatter(p.mark, &x, rng)?;
                record(&mut log, time, &p, &x, EventKind::Scatter);
                free.push(slot);
                alive -= 1;
                insert!(p.id, p.mark, time, y);
            }
            Next::Branch => {
                let kids = dynamics.branch(p.mark, &x, rng)?;
                let ids: Vec<u64> = (0..kids.len() as u64).map(|i| next_id + i).collect();
                next_id += kids.len() as u64;
                let ev = if kids.is_empty() {
                    EventKind::Capture
                } else {
                    EventKind::Fission { children: ids.clone() }
                };
                record(&mut log, time, &p, &x, ev);
                free.push(slot);
                alive -= 1;
                for (id, (m, y)) in ids.into_iter().zip(kids) {
                    insert!(id, m, time, y);
                }
                if alive > cfg.cap {
                    return Err(SimError::CapExceeded {
                        cap: cfg.cap,
                        time,
                        partial: Box::new(Trajectory { snapshots: snaps, log, extinction_time, counters }),
                    });
                }
            }
        }
        if alive == 0 {
            extinction_time = Some(time);
        }
    }
    while snaps.len() < cfg.checkpoints.len() {
        snaps.push(snapshot(&slots, cfg.checkpoints[snaps.len()]));
    }
    if let Some(l) = log.as_mut() {
        let mut rest: Vec<&Live> = slots.iter().flatten().collect();
        rest.sort_by_key(|p| p.id);
        for p in rest {
            let x = p.x.flown(cfg.horizon - p.t0);
            l.records.push(EventRecord {
                time: cfg.horizon,
                id: p.id,
                mark: p.mark,
                kind: EventKind::Horizon,
                r: [x.r.x, x.r.y, x.r.z],
                v: [x.v.x, x.v.y, x.v.z],
            });
        }
    }
    Ok(Trajectory { snapshots: snaps, log, extinction_time, counters })
}

/// Simulate replicate `replicate` of an experiment seeded by `seed`.
pub fn simulate<D: Dynamics + ?Sized>(
    mu: &ParticleSystem,
    cfg: &SimConfig,
    dynamics: &D,
    seed: u64,
    replicate: u64,
) -> Result<Trajectory, SimError> {
    let mut rng = stream(seed, replicate, "simulate");
    simulate_with_rng(mu, cfg, dynamics, &mut rng)
}

/// Independent replicates in parallel, in replicate order.
pub fn simulate_replicates<D: Dynamics + ?Sized>(
    mu: &ParticleSystem,
    cfg: &SimConfig,
    dynamics: &D,
    seed: u64,
    n_reps: usize,
) -> Result<Vec<Trajectory>, SimError> {
    replicates(n_reps, seed, "simulate", |_, rng| simulate_with_rng(mu, cfg, dynamics, rng))
        .into_iter()
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    pub fn from_samples(xs: &[f64]) -> Self {
        if xs.len() < 2 {
            return Self { mean: xs.first().copied().unwrap_or(f64::NAN), se: f64::INFINITY, n: xs.len() };
        }
        let (mean, se) = mean_se(xs).expect("n >= 2");
        Self { mean, se, n: xs.len() }
    }
}

/// MC estimate of `ψ_t[g](μ) = E_μ⟨g, X_t⟩`.
pub fn estimate_psi<D, G>(
    g: G,
    t: f64,
    mu: &ParticleSystem,
    n_reps: usize,
    dynamics: &D,
    seed: u64,
) -> Result<Estimate, SimError>
where
    D: Dynamics + ?Sized,
    G: Fn(&PhasePoint) -> f64 + Sync,
{
    let cfg = SimConfig::at(t);
    let vals: Result<Vec<f64>, SimError> =
        replicates(n_reps, seed, "simulate", |_, rng| Ok(simulate_with_rng(mu, &cfg, dynamics, rng)?.last().sum(&g)))
            .into_iter()
            .collect();
    Ok(Estimate::from_samples(&vals?))
}

/// MC estimate of `u_t[g](μ) = E_μ ∏ g(x_i(t))` for `0 ≤ g ≤ 1`.
/// `g` is checked on every particle it is applied to.
pub fn estimate_u<D, G>(
    g: G,
    t: f64,
    mu: &ParticleSystem,
    n_reps: usize,
    dynamics: &D,
    seed: u64,
) -> Result<Estimate, SimError>
where
    D: Dynamics + ?Sized,
    G: Fn(&PhasePoint) -> f64 + Sync,
{
    let cfg = SimConfig::at(t);
    let vals: Result<Vec<f64>, SimError> = replicates(n_reps, seed, "simulate", |_, rng| {
        let tr = simulate_with_rng(mu, &cfg, dynamics, rng)?;
        let mut prod = 1.0;
        for p in &tr.last().particles {
            let v = g(&p.x);
            if !(0.0..=1.0).contains(&v) {
                return Err(SimError::Invalid(format!("g = {v} outside [0, 1]")));
            }
            prod *= v;
        }
        Ok(prod)
    })
    .into_iter()
    .collect();
    Ok(Estimate::from_samples(&vals?))
}

/// Hazard of `σ_f` accumulated along `x.flown(s)`, `s ∈ [0, len]`; returns
/// the flight time at which `budget` is exhausted, if it is, and otherwise
/// subtracts the accumulated hazard from `budget`.
fn consume_fission_hazard(model: &CrossSectionModel, x: &PhasePoint, len: f64, budget: &mut f64) -> Option<f64> {
    let group = model.group_of(x);
    let vx = x.v.x;
    let mut s = 0.0;
    let mut slab = model.slab_of(x.r.x, vx);
    loop {
        let next_cross = if vx > 0.0 && slab < model.x_breaks.len() {
            (model.x_breaks[slab] - x.r.x) / vx
        } else if vx < 0.0 && slab > 0 {
            (model.x_breaks[slab - 1] - x.r.x) / vx
        } else {
            f64::INFINITY
        };
        let piece_end = next_cross.max(s).min(len);
        let rate = model.cell_at(slab, group).sigma_f;
        let h = rate * (piece_end - s);
        if h >= *budget && rate > 0.0 {
            return Some(s + *budget / rate);
        }
        *budget -= h;
        s = piece_end;
        if s >= len {
            return None;
        }
        slab = if vx > 0.0 { slab + 1 } else { slab - 1 };
    }
}

/// `ψ_t[g](x)` through the fission-only decomposition: between fissions the
/// particle follows the scatter-only random walk (thinned against
/// `sup σ_s`), and the fission clock is found by inverting the accumulated
/// `σ_f` hazard exactly along each straight piece.
pub fn estimate_psi_qform<G>(
    model: &CrossSectionModel,
    g: G,
    t: f64,
    x: &PhasePoint,
    n_reps: usize,
    seed: u64,
    cap: usize,
) -> Result<Estimate, SimError>
where
    G: Fn(&PhasePoint) -> f64 + Sync,
{
    let sbar = model.sup_sigma_s();
    let vals: Result<Vec<f64>, SimError> = replicates(n_reps, seed, "qform", |_, rng| {
        let mut total = 0.0;
        let mut stack: Vec<(PhasePoint, f64)> = vec![(*x, t)];
        while let Some((mut y, mut tau)) = stack.pop() {
            let mut budget: f64 = Exp1.sample(rng);
            loop {
                let kappa = model.domain.exit_time(&y.r, &y.v)?;
                let end = kappa.min(tau);
                let cand = if sbar > 0.0 { <Exp1 as Distribution<f64>>::sample(&Exp1, rng) / sbar } else { f64::INFINITY };
                let seg = cand.min(end);
                if let Some(sf) = consume_fission_hazard(model, &y, seg, &mut budget) {
                    let z = y.flown(sf);
                    for c in model.sample_offspring(&z, rng) {
                        stack.push((c, tau - sf));
                    }
                    if stack.len() > cap {
                        return Err(SimError::Invalid("population cap exceeded in fission-only estimator".into()));
                    }
                    break;
                }
                if cand >= end {
                    if kappa > tau {
                        total += g(&y.flown(tau));
                    }
                    break;
                }
                let z = y.flown(cand);
                tau -= cand;
                let u: f64 = rng.random::<f64>() * sbar;
                y = if u < model.sigma_s(&z) { model.sample_scatter(&z, rng) } else { z };
            }
        }
        Ok(total)
    })
    .into_iter()
    .collect();
    Ok(Estimate::from_samples(&vals?))
}
