//! Acceptance suite. Prints one PASS/FAIL line per criterion, with the
//! checks behind it indented underneath, then supplementary lines for a
//! supercritical rod. Exits non-zero when any criterion fails.

use nbplab::asymptotics::{binpp_regression, estimate_lambda, estimate_lambda_from_counts, slln_ratio, track_w, SllnOutcome, Variant};
use nbplab::bbm_strip::{lambda_strip, lambda_strip_fd, simulate_strip, solve_w_strip, StripConfig, StripModel};
use nbplab::cross_sections::CrossSectionModel;
use nbplab::mbp_engine::{simulate_replicates, Mark, Nbp, ParticleSystem, SimConfig, Trajectory};
use nbplab::phase_space::PhasePoint;
use nbplab::presets;
use nbplab::rod_oracle::{solve_w_spaceless, EigenTriple, GridFunction, RodOracle, SurvivalField};
use nbplab::skeleton::{
    build_down, build_up, exact_spaceless, mark_binpp, reconstruct_mixture, simulate_dressed, subset_sum, ConstantSurvival, Generators,
    GridSurvival, Skeletal, Survival, P_FLOOR,
};
use nbplab::stats::{mean_se, replicates, stream, two_sample_test, TestReport};
use nbplab_cli::{run_experiment, RunOptions};
use num_rational::Rational64;
use rand::Rng;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

const SEED: u64 = 20_261_016;
const REPS: usize = 10_000;
const ROD_CELLS: usize = 128;
const ROD5_CELLS: usize = 640;
const EIGEN_TOL: f64 = 1e-6;
const SEMIGROUP_REL: f64 = 1e-4;
const GW3_W_TOL: f64 = 1e-9;
const W_RESIDUAL: f64 = 1e-5;
const K_SE: f64 = 3.0;
const EXACT_TOL: f64 = 1e-12;
const ALPHA: f64 = 0.01;
const BINPP_TOL: f64 = 0.02;
const SLLN_REL: f64 = 0.05;
const SLLN_GROWTH: f64 = 1e3;
const STRIP_LAMBDA: f64 = 0.5;
const PLATEAU_TOL: f64 = 1e-4;
const GROWTH_LEVEL: f64 = 0.99;
const BOOT: usize = 400;

type Checks = Result<Vec<TestReport>, String>;
type Criterion = (&'static str, &'static str, Option<Duration>, fn() -> Checks);
type Supplement = (&'static str, &'static str, fn() -> Checks);

fn e<E: std::fmt::Display>(x: E) -> String {
    x.to_string()
}

fn flag(name: &str, ok: bool, note: impl Into<String>) -> TestReport {
    TestReport::upper(name, if ok { 0.0 } else { 1.0 }, 0.0).with_note(note)
}

fn covers(name: &str, ci: (f64, f64), estimate: f64, target: f64) -> TestReport {
    let miss = (ci.0 - target).max(target - ci.1).max(0.0);
    TestReport::upper(name, miss, 0.0).with_note(format!("estimate {estimate:.6} CI [{:.6}, {:.6}] target {target:.6}", ci.0, ci.1))
}

struct Rod {
    model: CrossSectionModel,
    oracle: RodOracle,
    start: PhasePoint,
}

impl Rod {
    fn new(model: CrossSectionModel, cells: usize, x: f64) -> Result<Self, String> {
        let oracle = RodOracle::new(&model, cells).map_err(e)?;
        let start = PhasePoint::on_rod(x, &model.velocities, 0);
        Ok(Rod { model, oracle, start })
    }

    fn rod1() -> Result<Self, String> {
        Self::new(presets::rod1(), ROD_CELLS, 0.5)
    }

    fn rod5() -> Result<Self, String> {
        Self::new(presets::rod5(), ROD5_CELLS, 2.5)
    }

    fn eigen(&self) -> Result<EigenTriple, String> {
        self.oracle.power_iteration(1e-12, 2_000_000).map_err(e)
    }

    fn survival(&self) -> Result<SurvivalField, String> {
        self.oracle.solve_w(400.0, 1e-10).map_err(e)
    }

    /// `ψ_t[p](x)/p(x)` from the grid semigroup.
    fn up_mean(&self, field: &GridSurvival, t: f64) -> Result<f64, String> {
        let p: Vec<f64> = field.w.values.iter().map(|w| 1.0 - w).collect();
        let moved = self.oracle.step_psi(&p, t).map_err(e)?;
        let g = GridFunction { grid: self.oracle.grid.clone(), values: moved, outgoing_value: 0.0, clamp: (0.0, f64::INFINITY) };
        Ok(g.eval(self.start.r.x, 0) / field.p(&self.start))
    }
}

struct Gw3 {
    model: CrossSectionModel,
    start: PhasePoint,
}

impl Gw3 {
    fn new() -> Self {
        let model = presets::gw3_spaceless();
        let start = presets::probe_point(&model);
        Gw3 { model, start }
    }
}

fn runs(model: &CrossSectionModel, x: &PhasePoint, times: &[f64], n: usize, seed: u64) -> Result<Vec<Trajectory>, String> {
    let cfg = SimConfig::new(*times.last().expect("checkpoints"), times.to_vec());
    simulate_replicates(&ParticleSystem::single(*x), &cfg, &Nbp::new(model), seed, n).map_err(e)
}

// Criterion 1: eigen-triple against the dense spectrum and the semigroup.
fn eigen_oracle() -> Checks {
    let rod = Rod::rod1()?;
    let eig = rod.eigen()?;
    let dense = rod.oracle.dense_spectrum();
    let mut out = vec![TestReport::upper("|λ power − λ dense|", (eig.lambda - dense.lambda).abs(), EIGEN_TOL)
        .with_note(format!("λ* = {:.8}", eig.lambda))];
    let moved = rod.oracle.step_psi(&eig.phi.values, 1.0).map_err(e)?;
    let g = eig.lambda.exp();
    let sup = eig.phi.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dev = moved.iter().zip(&eig.phi.values).map(|(a, b)| (a - g * b).abs()).fold(0.0, f64::max);
    out.push(TestReport::upper("sup |ψ_1[φ] − e^λ φ| / (e^λ sup φ)", dev / (g * sup), SEMIGROUP_REL));
    Ok(out)
}

// Criterion 2: extinction probability.
fn extinction() -> Checks {
    let gw = presets::gw3_spaceless();
    let c = &gw.cells[0];
    let w = solve_w_spaceless(c.sigma_f, |s| c.fission.counts.pgf(s), 1e-13, 1e5).map_err(e)?;
    let mut out = vec![TestReport::upper("GW3 |w − 1/3|", (w - 1.0 / 3.0).abs(), GW3_W_TOL)];
    let rod = Rod::rod1()?;
    let f = rod.survival()?;
    out.push(TestReport::upper("ROD1 stationarity residual", f.residual, W_RESIDUAL));
    out.push(TestReport::upper("ROD1 exp(−∫σ) < w, worst margin (negated)", -f.lower_bound_margin, 0.0));
    out.push(
        TestReport::upper("ROD1 w < 1: P_FLOOR − min p", P_FLOOR - f.min_p, 0.0)
            .with_note(format!("min p {:.3e}, max w {:.15}", f.min_p, 1.0 - f.min_p)),
    );
    Ok(out)
}

// Criterion 3: unit-mean martingale.
fn unit_mean() -> Checks {
    let rod = Rod::rod1()?;
    let eig = rod.eigen()?;
    let times = [0.5, 1.0, 2.0];
    let trs = runs(&rod.model, &rod.start, &times, REPS, SEED)?;
    let mu = ParticleSystem::single(rod.start);
    let track = track_w(&mu, &trs, &times, eig.lambda, |y| eig.phi.eval(y.r.x, y.vi.expect("rod")), Variant::Plain).map_err(e)?;
    Ok(track.unit_mean_reports(K_SE).into_iter().map(|r| r.with_seed(SEED)).collect())
}

fn rational_subset_sum(p: &[Rational64]) -> Rational64 {
    let n = p.len();
    let one = Rational64::from_integer(1);
    (0u32..(1 << n))
        .map(|s| (0..n).fold(one, |acc, i| acc * if s & (1 << i) != 0 { p[i] } else { one - p[i] }))
        .fold(Rational64::from_integer(0), |a, b| a + b)
}

// Criterion 4: exact skeleton algebra.
fn algebra() -> Checks {
    let r = |n: i64, d: i64| Rational64::new(n, d);
    let mut out = Vec::new();
    let ex = exact_spaceless(r(1, 1), &[r(1, 4), r(0, 1), r(3, 4)], r(1, 3));
    let split = |u: usize, d: usize| ex.up_law.iter().filter(|(a, b, _)| *a == u && *b == d).map(|x| x.2).sum::<Rational64>();
    let exact = [
        ("ς↓ = 1", ex.down_rate == r(1, 1)),
        ("P↓(N=0) = 3/4", ex.down_law[0] == r(3, 4)),
        ("P↓(N=2) = 1/4", ex.down_law[2] == r(1, 4)),
        ("ς↕ = 1", ex.up_rate == r(1, 1)),
        ("P(2↑) = 1/2", split(2, 0) == r(1, 2)),
        ("P(1↑,1↓) = 1/2", split(1, 1) == r(1, 2)),
    ];
    for (name, ok) in exact {
        out.push(flag(&format!("rational {name}"), ok, ""));
    }

    let gw = Gw3::new();
    let field = ConstantSurvival(1.0 / 3.0);
    let down = build_down(&gw.model, &field, &gw.start).map_err(e)?;
    let up = build_up(&gw.model, &field, &gw.start).map_err(e)?;
    let by_count = |n: usize| down.law.iter().filter(|(_, k)| k.len() == n).map(|(q, _)| q).sum::<f64>();
    let dev = [
        (down.rate - 1.0).abs(),
        (by_count(0) - 0.75).abs(),
        (by_count(2) - 0.25).abs(),
        (up.rate - 1.0).abs(),
        (up.split_probability(2, 0) - 0.5).abs(),
        (up.split_probability(1, 1) - 0.5).abs(),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    out.push(TestReport::upper("floating build_down/build_up vs closed forms", dev, EXACT_TOL));

    let laws: Vec<Vec<f64>> = vec![
        presets::GW3_COUNTS.to_vec(),
        vec![0.2, 0.1, 0.4, 0.3],
        vec![0.1, 0.2, 0.5, 0.2],
        vec![0.05, 0.1, 0.2, 0.25, 0.2, 0.15, 0.05],
    ];
    let mut rng = stream(SEED, 0, "subset identity");
    let mut worst = 0.0f64;
    let mut rational_ok = true;
    for law in &laws {
        for (n, q) in law.iter().enumerate() {
            if *q == 0.0 {
                continue;
            }
            for _ in 0..20 {
                let p: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
                worst = worst.max((subset_sum(&p) - 1.0).abs());
            }
            let p: Vec<Rational64> = (0..n).map(|i| r(i as i64 + 1, n as i64 + 2)).collect();
            rational_ok &= rational_subset_sum(&p) == r(1, 1);
        }
    }
    out.push(TestReport::upper("subset identity, N ≤ 6, max |Σ − 1|", worst, EXACT_TOL));
    out.push(flag("subset identity in rationals, N ≤ 6", rational_ok, ""));

    let models = [presets::rod5(), presets::opposed_rod()];
    let mut worst = 0.0f64;
    for k in 0..100 {
        let m = &models[k % 2];
        let (a, b) = m.domain.x_range();
        let x = PhasePoint::on_rod(a + (b - a) * rng.random_range(0.01..0.99), &m.velocities, k % 2);
        let w: Vec<f64> = (0..2).map(|_| rng.random_range(0.05..0.95)).collect();
        let f: Vec<f64> = (0..2).map(|_| rng.random::<f64>()).collect();
        let g = Generators { model: m, x, w };
        let both = g.g_updown(&f, &[1.0, 1.0]).map_err(e)?;
        worst = worst.max((both - g.g_up(&f)).abs());
    }
    out.push(TestReport::upper("max |G↕[f,1] − G↑[f]| over 100 random f", worst, EXACT_TOL));
    Ok(out)
}

fn reconstruct_check<S: Survival>(name: &str, model: &CrossSectionModel, x: &PhasePoint, field: &S, t: f64) -> Result<TestReport, String> {
    let cfg = SimConfig::new(t, vec![t]);
    let mu = ParticleSystem::single(*x);
    let direct = simulate_replicates(&mu, &cfg, &Nbp::new(model), SEED, REPS).map_err(e)?;
    let sk = Skeletal::new(model, field);
    let mixed = replicates(REPS, SEED, "mixture", |_, rng| reconstruct_mixture(&mu, &cfg, &sk, rng))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(e)?;
    let a: Vec<u64> = direct.iter().map(|t| t.last().count() as u64).collect();
    let b: Vec<u64> = mixed.iter().map(|(t, _)| t.last().count() as u64).collect();
    let r = two_sample_test(&a, &b).map_err(e)?;
    Ok(TestReport::p_value(name, r.value, r.p_value.unwrap_or(0.0), ALPHA)
        .with_seed(SEED)
        .with_sizes(vec![a.len(), b.len()])
        .with_note(r.note))
}

fn checked_field(rod: &Rod) -> Result<GridSurvival, String> {
    let f = rod.survival()?;
    GridSurvival::checked(&f, P_FLOOR).map_err(e)
}

// Criterion 5: reconstruction law equality.
fn reconstruction() -> Checks {
    let gw = Gw3::new();
    let mut out = vec![reconstruct_check("GW3 N_2 χ²", &gw.model, &gw.start, &ConstantSurvival(1.0 / 3.0), 2.0)?];
    let rod = Rod::rod1()?;
    out.push(match checked_field(&rod) {
        Ok(f) => reconstruct_check("ROD1 N_1 χ²", &rod.model, &rod.start, &f, 1.0)?,
        Err(msg) => TestReport::failed("ROD1 N_1 χ²", &format!("skeleton undefined: {msg}")),
    });
    Ok(out)
}

fn binpp_check<S: Survival>(name: &str, model: &CrossSectionModel, x: &PhasePoint, field: &S, t: f64) -> Result<TestReport, String> {
    let plain = runs(model, x, &[t], REPS, SEED)?;
    let marks: Vec<(f64, f64)> = replicates(REPS, SEED, "binpp", |i, rng| {
        let last = plain[i as usize].last();
        (last.sum(|y| field.p(y)), mark_binpp(last, field, rng).count() as f64)
    });
    let mass: Vec<f64> = marks.iter().map(|m| m.0).collect();
    let marked: Vec<f64> = marks.iter().map(|m| m.1).collect();
    let (_, mut rep) = binpp_regression(&mass, &marked, BINPP_TOL).map_err(e)?;
    rep.name = format!("{name}: {}", rep.name);
    Ok(rep.with_seed(SEED))
}

// Criterion 6: BinPP embedding. The field is used as solved, without the
// range check, so a vanishing `p` shows up in the regression itself.
fn binpp() -> Checks {
    let rod = Rod::rod1()?;
    let f = rod.survival()?;
    let field = GridSurvival::new(f.w.clone());
    Ok(vec![binpp_check("ROD1 t=1", &rod.model, &rod.start, &field, 1.0)?
        .with_note(format!("max p {:.3e}", 1.0 - f.min_w))])
}

fn dressed_means<S: Survival>(model: &CrossSectionModel, x: &PhasePoint, field: &S, times: &[f64]) -> Result<Vec<(f64, f64)>, String> {
    let sk = Skeletal::new(model, field);
    let cfg = SimConfig::new(*times.last().expect("times"), times.to_vec());
    let trs = replicates(REPS, SEED, "dressed", |_, rng| simulate_dressed(x, &cfg, &sk, rng))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(e)?;
    (0..times.len())
        .map(|k| mean_se(&trs.iter().map(|t| t.at(k).count_mark(Mark::Up) as f64).collect::<Vec<_>>()).map_err(e))
        .collect()
}

fn rod_up_means(label: &str, rod: &Rod, times: &[f64]) -> Checks {
    match checked_field(rod) {
        Ok(f) => {
            let ms = dressed_means(&rod.model, &rod.start, &f, times)?;
            times
                .iter()
                .zip(ms)
                .map(|(t, (m, se))| {
                    Ok(TestReport::band(&format!("{label} E↑⟨1,X↑_t⟩ vs ψ_t[p]/p, t={t}"), m, rod.up_mean(&f, *t)?, se, K_SE, 0.0).with_seed(SEED))
                })
                .collect()
        }
        Err(msg) => Ok(times
            .iter()
            .map(|t| TestReport::failed(&format!("{label} E↑⟨1,X↑_t⟩ vs ψ_t[p]/p, t={t}"), &format!("skeleton undefined: {msg}")))
            .collect()),
    }
}

// Criterion 7: skeleton mean identity.
fn skeleton_mean() -> Checks {
    let times = [1.0, 2.0];
    let mut out = rod_up_means("ROD1", &Rod::rod1()?, &times)?;
    let gw = Gw3::new();
    let ms = dressed_means(&gw.model, &gw.start, &ConstantSurvival(1.0 / 3.0), &times)?;
    for (t, (m, se)) in times.iter().zip(ms) {
        out.push(TestReport::band(&format!("GW3 E↑⟨1,X↑_t⟩ vs e^(t/2), t={t}"), m, (0.5 * t).exp(), se, K_SE, 0.0).with_seed(SEED));
    }
    Ok(out)
}

/// Strong-law ratio for `g = φ·1_{left half}` at the first horizon with
/// `e^{λT} ≥ 10³`, or at `fallback` when no such horizon exists.
fn slln_checks(label: &str, rod: &Rod, reps: usize, fallback: f64) -> Checks {
    let eig = rod.eigen()?;
    let mut out = Vec::new();
    let horizon = if eig.lambda > 0.0 {
        let t = (SLLN_GROWTH.ln() / eig.lambda * 100.0).ceil() / 100.0;
        out.push(flag(&format!("{label} horizon with e^(λ*T) ≥ 10³"), true, format!("λ* = {:.6}, T = {t}", eig.lambda)));
        t
    } else {
        out.push(TestReport::failed(
            &format!("{label} horizon with e^(λ*T) ≥ 10³"),
            &format!("λ* = {:.6} ≤ 0, so e^(λ*T) < 1 for every T; ratio below reported at T = {fallback}", eig.lambda),
        ));
        fallback
    };
    let (a, b) = (rod.oracle.grid.a, rod.oracle.grid.b);
    let mid = 0.5 * (a + b);
    let phi = |y: &PhasePoint| eig.phi.eval(y.r.x, y.vi.expect("rod"));
    let left = |y: &PhasePoint| if y.r.x < mid { phi(y) } else { 0.0 };
    let k = rod.oracle.grid.k();
    let masked: Vec<f64> = (0..rod.oracle.grid.len())
        .map(|j| if rod.oracle.grid.center(j / k) < mid { eig.phi.values[j] } else { 0.0 })
        .collect();
    let target = eig.left_pairing(&masked);
    let trs = runs(&rod.model, &rod.start, &[horizon], reps, SEED)?;
    let rep = slln_ratio(&trs, horizon, left, phi, target, SLLN_REL);
    out.push(match &rep.outcome {
        SllnOutcome::Ratio { mean, relative_error, .. } => {
            TestReport::upper(&format!("{label} ⟨g,X_T⟩/⟨φ,X_T⟩ vs ⟨g,φ̃⟩, relative"), *relative_error, SLLN_REL)
                .with_seed(SEED)
                .with_sizes(vec![rep.surviving, rep.replicates])
                .with_note(format!("mean ratio {mean:.6}, target {target:.6}, survivors {}", rep.surviving))
        }
        SllnOutcome::Extinct => TestReport::failed(&format!("{label} strong-law ratio"), "every replicate extinct"),
    });
    let ident = slln_ratio(&trs, horizon, phi, phi, 1.0, 0.0);
    out.push(match &ident.outcome {
        SllnOutcome::Ratio { ratios, .. } => {
            TestReport::upper(&format!("{label} g = φ, max |ratio − 1|"), ratios.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max), 0.0)
        }
        SllnOutcome::Extinct => TestReport::failed(&format!("{label} g = φ ratio"), "every replicate extinct"),
    });
    Ok(out)
}

// Criterion 8: strong law at desk scale.
fn slln() -> Checks {
    slln_checks("ROD1", &Rod::rod1()?, 1000, 3.0)
}

// Criterion 9: growth-rate estimation.
fn growth() -> Checks {
    let times: Vec<f64> = (1..=6).map(|k| k as f64 * 0.5).collect();
    let rod = Rod::rod1()?;
    let eig = rod.eigen()?;
    let trs = runs(&rod.model, &rod.start, &times, REPS, SEED)?;
    let mut rng = stream(SEED, 0, "bootstrap");
    let est = estimate_lambda(&trs, &times, 1.0, BOOT, GROWTH_LEVEL, &mut rng).map_err(e)?;
    let mut out = vec![covers("ROD1 CI covers λ*", est.ci, est.lambda, eig.lambda).with_seed(SEED)];
    let gw = Gw3::new();
    let times: Vec<f64> = (1..=8).map(|k| k as f64 * 0.5).collect();
    let trs = runs(&gw.model, &gw.start, &times, REPS, SEED)?;
    let mut rng = stream(SEED, 1, "bootstrap");
    let est = estimate_lambda(&trs, &times, 0.5, BOOT, GROWTH_LEVEL, &mut rng).map_err(e)?;
    out.push(covers("GW3 CI covers 0.5", est.ci, est.lambda, 0.5).with_seed(SEED));
    Ok(out)
}

// Criterion 10: branching Brownian motion on a strip.
fn strip() -> Checks {
    let binary = StripModel { width: std::f64::consts::PI, drift: 0.0, rate: 1.0, counts: vec![0.0, 0.0, 1.0] };
    let lambda = lambda_strip(&binary);
    let fd = lambda_strip_fd(&binary, 400).map_err(e)?;
    let mut out = vec![
        TestReport::upper("|λ_strip − 1/2|", (lambda - STRIP_LAMBDA).abs(), EXACT_TOL),
        TestReport::upper("|λ_strip − finite-difference eigenvalue|", (lambda - fd).abs(), EIGEN_TOL),
    ];
    let times: Vec<f64> = (2..=8).map(|k| k as f64 * 0.5).collect();
    let cfg = StripConfig::new(0.01, times.clone());
    let rows = replicates(REPS, SEED, "strip", |_, rng| simulate_strip(&binary, 0.5 * binary.width, &cfg, rng).map(|t| t.counts()))
        .into_iter()
        .collect::<Result<Vec<_>, _>>()
        .map_err(e)?;
    let mut rng = stream(SEED, 2, "bootstrap");
    let est = estimate_lambda_from_counts(&rows, &times, 1.0, BOOT, GROWTH_LEVEL, &mut rng).map_err(e)?;
    out.push(covers("simulated strip CI covers λ", est.ci, est.lambda, lambda).with_seed(SEED));
    let wide = StripModel { width: 40.0, drift: 0.0, rate: 1.0, counts: presets::GW3_COUNTS.to_vec() };
    let sol = solve_w_strip(&wide, 800, 1e-10).map_err(e)?;
    out.push(TestReport::upper("K = 40 plateau |w(K/2) − 1/3|", (sol.midpoint() - 1.0 / 3.0).abs(), PLATEAU_TOL));
    Ok(out)
}

const DETERMINISM_CONFIGS: [(&str, &str); 8] = [
    ("validate", r#"{"kind":"validate","model":{"preset":"rod1"}}"#),
    ("eigen", r#"{"kind":"eigen","model":{"preset":"rod1"},"grid":{"type":"rod","cells":64,"tol":"1e-11"}}"#),
    ("extinction", r#"{"kind":"extinction","model":{"preset":"rod5"},"grid":{"type":"rod","cells":160,"tol":"1e-10"}}"#),
    (
        "simulate",
        r#"{"kind":"simulate","model":{"preset":"rod1"},"grid":{"type":"rod","cells":64,"tol":"1e-11"},
           "run":{"seed":7,"replicates":400,"horizon":"2","checkpoints":["0.5","1","1.5","2"],"burn_in":"0.5","bootstrap":50,
                  "start":{"r":["0.5"],"velocity":0}}}"#,
    ),
    (
        "skeleton",
        r#"{"kind":"skeleton","model":{"preset":"rod5"},"grid":{"type":"rod","cells":160,"tol":"1e-10"},
           "run":{"seed":7,"replicates":300,"horizon":"1","checkpoints":["0.5","1"],"snapshot_replicates":3,
                  "start":{"r":["2.5"],"velocity":1}}}"#,
    ),
    (
        "reconstruct",
        r#"{"kind":"reconstruct","model":{"preset":"gw3"},"grid":{"type":"spaceless"},
           "run":{"seed":7,"replicates":500,"horizon":"1.5","checkpoints":["1.5"]}}"#,
    ),
    (
        "slln",
        r#"{"kind":"slln","model":{"preset":"rod5"},"grid":{"type":"rod","cells":160,"tol":"1e-11"},
           "run":{"seed":7,"replicates":100,"horizon":"4","checkpoints":["4"],"start":{"r":["2.5"],"velocity":0}}}"#,
    ),
    (
        "bbm",
        r#"{"kind":"bbm","strip":{"width":"3.141592653589793","drift":"0.2","rate":"1","counts":["0","0","1"],"dt":"0.02","cells":100},
           "run":{"seed":7,"replicates":300,"horizon":"2","checkpoints":["1","1.5","2"],"burn_in":"1","bootstrap":50}}"#,
    ),
];

fn data_files(dir: &Path) -> Result<Vec<(String, Vec<u8>)>, String> {
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.join("data"))
        .map_err(e)?
        .map(|entry| {
            let path = entry.map_err(e)?.path();
            Ok((path.file_name().expect("file").to_string_lossy().into_owned(), std::fs::read(&path).map_err(e)?))
        })
        .collect::<Result<_, String>>()?;
    files.sort();
    Ok(files)
}

// Criterion 11: byte-identical data files across reruns and thread counts.
fn determinism() -> Checks {
    let root = tempfile::tempdir().map_err(e)?;
    let mut out = Vec::new();
    for (kind, text) in DETERMINISM_CONFIGS {
        let cfg = root.path().join(format!("{kind}.json"));
        std::fs::write(&cfg, text).map_err(e)?;
        let mut runs = Vec::new();
        for (tag, threads) in [("a", 1), ("b", 4), ("c", 1)] {
            let dir = root.path().join(format!("{kind}-{tag}"));
            let opts = RunOptions { threads: Some(threads), seed_override: None, quiet: true };
            run_experiment(&cfg, &dir, &opts).map_err(e)?;
            runs.push(data_files(&dir)?);
        }
        let same = !runs[0].is_empty() && runs[0] == runs[1] && runs[0] == runs[2];
        let names: Vec<&str> = runs[0].iter().map(|(n, _)| n.as_str()).collect();
        out.push(flag(&format!("{kind}: data identical for threads 1, 4 and a rerun"), same, names.join(", ")));
    }
    Ok(out)
}

// Supplement: the skeleton criteria on a supercritical rod.
fn supercritical_extinction() -> Checks {
    let rod = Rod::rod5()?;
    let f = rod.survival()?;
    let eig = rod.eigen()?;
    Ok(vec![
        flag("ROD5 λ* > 0", eig.lambda > 0.0, format!("λ* = {:.6}", eig.lambda)),
        TestReport::upper("ROD5 stationarity residual", f.residual, W_RESIDUAL),
        TestReport::upper("ROD5 exp(−∫σ) < w, worst margin (negated)", -f.lower_bound_margin, 0.0),
        TestReport::upper("ROD5 w < 1: P_FLOOR − min p", P_FLOOR - f.min_p, 0.0).with_note(format!("min p {:.3e}", f.min_p)),
    ])
}

fn supercritical_reconstruction() -> Checks {
    let rod = Rod::rod5()?;
    let f = checked_field(&rod)?;
    Ok(vec![reconstruct_check("ROD5 N_1 χ²", &rod.model, &rod.start, &f, 1.0)?])
}

fn supercritical_binpp() -> Checks {
    let rod = Rod::rod5()?;
    let f = checked_field(&rod)?;
    Ok(vec![binpp_check("ROD5 t=1", &rod.model, &rod.start, &f, 1.0)?])
}

fn supercritical_skeleton_mean() -> Checks {
    rod_up_means("ROD5", &Rod::rod5()?, &[1.0, 2.0])
}

fn supercritical_slln() -> Checks {
    slln_checks("ROD5", &Rod::rod5()?, 2000, 20.0)
}

struct Outcome {
    pass: bool,
}

fn run(label: &str, title: &str, budget: Option<Duration>, body: fn() -> Checks) -> Outcome {
    let start = Instant::now();
    let result = catch_unwind(AssertUnwindSafe(body));
    let elapsed = start.elapsed();
    let mut checks = match result {
        Ok(Ok(c)) => c,
        Ok(Err(msg)) => vec![TestReport::failed("error", &msg)],
        Err(_) => vec![TestReport::failed("panic", "see stderr")],
    };
    if let Some(b) = budget {
        checks.push(TestReport::upper("runtime (s)", elapsed.as_secs_f64(), b.as_secs_f64()));
    }
    let pass = !checks.is_empty() && checks.iter().all(|c| c.pass);
    println!("{label} {} {title} [{:.1} s]", if pass { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
    for c in &checks {
        println!("    {}", c.line());
    }
    Outcome { pass }
}

fn main() {
    let secs = Duration::from_secs;
    let criteria: [Criterion; 11] = [
        ("C1", "eigen oracle", Some(secs(10)), eigen_oracle),
        ("C2", "extinction fixed point", Some(secs(10)), extinction),
        ("C3", "unit-mean martingale", Some(secs(120)), unit_mean),
        ("C4", "exact skeleton algebra", None, algebra),
        ("C5", "reconstruction law equality", Some(secs(300)), reconstruction),
        ("C6", "BinPP embedding", None, binpp),
        ("C7", "skeleton mean identity", None, skeleton_mean),
        ("C8", "strong law at desk scale", Some(secs(600)), slln),
        ("C9", "growth-rate estimate", None, growth),
        ("C10", "branching Brownian motion on a strip", None, strip),
        ("C11", "determinism", None, determinism),
    ];
    println!("acceptance: seed {SEED}, {REPS} replicates per statistical check");
    let failed: Vec<&str> = criteria
        .iter()
        .filter_map(|(label, title, budget, body)| (!run(label, title, *budget, *body).pass).then_some(*label))
        .collect();

    println!("supplement: skeleton criteria on the supercritical rod D = (0, 5), {ROD5_CELLS} cells (not counted)");
    let supplement: [Supplement; 5] = [
        ("S2", "extinction fixed point", supercritical_extinction),
        ("S5", "reconstruction law equality", supercritical_reconstruction),
        ("S6", "BinPP embedding", supercritical_binpp),
        ("S7", "skeleton mean identity", supercritical_skeleton_mean),
        ("S8", "strong law at desk scale", supercritical_slln),
    ];
    for (label, title, body) in supplement {
        run(label, title, None, body);
    }

    println!("acceptance: {} of {} criteria pass", criteria.len() - failed.len(), criteria.len());
    if !failed.is_empty() {
        println!("acceptance: failing {}", failed.join(", "));
        std::process::exit(1);
    }
}
