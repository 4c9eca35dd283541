//! One pipeline per experiment kind. Each returns its checks, CSV tables
//! and summary values.

use crate::config::{ExperimentConfig, GridBlock, Kind, RunBlock};
use crate::table::Table;
use nbplab::asymptotics::{binpp_regression, estimate_lambda, estimate_lambda_from_counts, slln_ratio, track_w, SllnOutcome, Variant};
use nbplab::bbm_strip::{lambda_strip, lambda_strip_fd, simulate_strip, solve_w_strip, StripConfig};
use nbplab::cross_sections::HypothesisReport;
use nbplab::mbp_engine::{simulate_replicates, Mark, Nbp, ParticleSystem, SimConfig, Trajectory};
use nbplab::phase_space::PhasePoint;
use nbplab::rod_oracle::{solve_w_spaceless, EigenTriple, GridFunction, RodOracle, SurvivalField};
use nbplab::skeleton::{mark_binpp, reconstruct_mixture, simulate_dressed, ConstantSurvival, GridSurvival, Skeletal, Survival, P_FLOOR};
use nbplab::stats::{mean_se, replicates, stream, two_sample_test, TestReport};
use serde_json::{json, Map, Value};

/// Tolerance of the power iteration against the dense solver.
pub const EIGEN_AGREEMENT: f64 = 1e-6;
/// Relative tolerance of `ψ_1[φ] = e^{λ}φ`.
pub const SEMIGROUP_REL: f64 = 1e-4;
/// Bound on the stationarity residual of `w`.
pub const W_RESIDUAL: f64 = 1e-5;
/// Band width in standard errors.
pub const K_SE: f64 = 3.0;
/// Significance level of law-equality tests.
pub const ALPHA: f64 = 0.01;
/// Tolerance on the BinPP regression slope.
pub const BINPP_SLOPE: f64 = 0.02;
/// Relative tolerance of the strong-law ratio.
pub const SLLN_REL: f64 = 0.05;
/// Required growth factor `e^{λT}` for the strong-law check.
pub const SLLN_GROWTH: f64 = 1e3;
/// Distance of the strip plateau from the spaceless root.
pub const PLATEAU_TOL: f64 = 1e-4;
/// Confidence level of growth-rate intervals.
pub const GROWTH_LEVEL: f64 = 0.99;

#[derive(Debug, Default)]
pub struct Outcome {
    pub checks: Vec<TestReport>,
    pub tables: Vec<(String, Table)>,
    pub values: Map<String, Value>,
    pub hypotheses: Option<HypothesisReport>,
}

impl Outcome {
    fn check(&mut self, r: TestReport) {
        self.checks.push(r);
    }

    fn value(&mut self, k: &str, v: Value) {
        self.values.insert(k.to_string(), v);
    }

    fn table(&mut self, name: &str, t: Table) {
        self.tables.push((name.to_string(), t));
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

type Res<T> = Result<T, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn flag(name: &str, ok: bool, note: impl Into<String>) -> TestReport {
    TestReport::upper(name, if ok { 0.0 } else { 1.0 }, 0.0).with_note(note)
}

/// Deterministic side of an experiment.
enum Oracle {
    Rod { rod: Box<RodOracle>, eig: Option<EigenTriple>, field: Option<SurvivalField> },
    Spaceless { lambda: f64, w: Option<f64> },
}

impl Oracle {
    fn build(cfg: &ExperimentConfig, eigen: bool, survival: bool) -> Res<Self> {
        let m = cfg.model();
        match cfg.grid() {
            GridBlock::Rod { cells, tol, w_horizon } => {
                let rod = RodOracle::new(m, *cells).map_err(err)?;
                let eig = if eigen { Some(rod.power_iteration(*tol, 2_000_000).map_err(err)?) } else { None };
                let field = if survival { Some(rod.solve_w(*w_horizon, *tol).map_err(err)?) } else { None };
                Ok(Oracle::Rod { rod: Box::new(rod), eig, field })
            }
            GridBlock::Spaceless => {
                let c = &m.cells[0];
                if m.cells.iter().any(|d| d != c) {
                    return Err("a spaceless grid needs identical cells".into());
                }
                let lambda = c.sigma_f * (c.fission.counts.mean() - 1.0);
                let w = if survival {
                    Some(solve_w_spaceless(c.sigma_f, |s| c.fission.counts.pgf(s), 1e-13, 1e5).map_err(err)?)
                } else {
                    None
                };
                Ok(Oracle::Spaceless { lambda, w })
            }
        }
    }

    fn lambda(&self) -> f64 {
        match self {
            Oracle::Rod { eig, .. } => eig.as_ref().expect("eigen requested").lambda,
            Oracle::Spaceless { lambda, .. } => *lambda,
        }
    }

    fn phi(&self, x: &PhasePoint) -> f64 {
        match self {
            Oracle::Rod { eig, .. } => eig.as_ref().expect("eigen requested").phi.eval(x.r.x, x.vi.expect("rod")),
            Oracle::Spaceless { .. } => 1.0,
        }
    }
}

fn sim_config(run: &RunBlock) -> SimConfig {
    let mut c = SimConfig::new(run.horizon, run.checkpoints.clone());
    c.cap = run.cap;
    c
}

pub fn dispatch(cfg: &ExperimentConfig) -> Res<Outcome> {
    match cfg.kind {
        Kind::Validate => validate(cfg),
        Kind::Eigen => eigen(cfg),
        Kind::Extinction => extinction(cfg),
        Kind::Simulate => simulate(cfg),
        Kind::Skeleton => skeleton(cfg),
        Kind::Reconstruct => reconstruct(cfg),
        Kind::Slln => slln(cfg),
        Kind::Bbm => bbm(cfg),
    }
}

fn validate(cfg: &ExperimentConfig) -> Res<Outcome> {
    let mut out = Outcome::default();
    let rep = cfg.model().validate_hypotheses().map_err(err)?;
    let mut t = Table::new(&["hypothesis", "status", "witness"]);
    for (name, c) in rep.entries() {
        let status = match c.pass {
            Some(true) => "pass",
            Some(false) => "fail",
            None => "deferred",
        };
        t.row(vec![name.to_string(), status.to_string(), c.witness.clone()]);
        if let Some(p) = c.pass {
            out.check(flag(name, p, c.witness.clone()));
        }
    }
    if let Some(GridBlock::Rod { cells, tol, w_horizon }) = &cfg.grid {
        let field = RodOracle::new(cfg.model(), *cells).and_then(|r| r.solve_w(*w_horizon, *tol)).map_err(err)?;
        out.value("m1_reported", json!({"holds": field.m1_holds(P_FLOOR), "min_w": field.min_w, "min_p": field.min_p}));
    }
    out.table("hypotheses", t);
    out.hypotheses = Some(rep);
    Ok(out)
}

fn eigen(cfg: &ExperimentConfig) -> Res<Outcome> {
    let mut out = Outcome::default();
    let oracle = Oracle::build(cfg, true, false)?;
    match &oracle {
        Oracle::Rod { rod, eig, .. } => {
            let eig = eig.as_ref().expect("requested");
            let dense = rod.dense_spectrum();
            out.check(TestReport::upper("power vs dense |Δλ|", (eig.lambda - dense.lambda).abs(), EIGEN_AGREEMENT));
            let steps = 1.0 / rod.grid.dt;
            if (steps - steps.round()).abs() < 1e-9 {
                let moved = rod.step_psi(&eig.phi.values, 1.0).map_err(err)?;
                let growth = eig.lambda.exp();
                let sup = eig.phi.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let dev = moved.iter().zip(&eig.phi.values).map(|(a, b)| (a - growth * b).abs()).fold(0.0, f64::max);
                out.check(TestReport::upper("ψ_1[φ] vs e^λ φ, relative", dev / (growth * sup), SEMIGROUP_REL));
            }
            let mut t = Table::new(&["cell", "x", "velocity", "phi", "phi_tilde"]);
            for i in 0..rod.grid.n_cells {
                for v in 0..rod.grid.k() {
                    t.row(vec![
                        i.to_string(),
                        rod.grid.center(i).to_string(),
                        v.to_string(),
                        eig.phi.at_cell(i, v).to_string(),
                        eig.phi_tilde[rod.grid.idx(i, v)].to_string(),
                    ]);
                }
            }
            out.table("eigen", t);
            out.value("lambda", json!(eig.lambda));
            out.value("lambda_dense", json!(dense.lambda));
            out.value("lambda2_dense", json!(dense.lambda2));
            out.value("iterations", json!(eig.iterations));
            out.value("residual", json!(eig.residual));
        }
        Oracle::Spaceless { lambda, .. } => {
            let mut t = Table::new(&["lambda"]);
            t.row(vec![lambda.to_string()]);
            out.table("eigen", t);
            out.value("lambda", json!(lambda));
        }
    }
    Ok(out)
}

fn extinction(cfg: &ExperimentConfig) -> Res<Outcome> {
    let mut out = Outcome::default();
    match Oracle::build(cfg, false, true)? {
        Oracle::Rod { rod, field, .. } => {
            let f = field.expect("requested");
            out.check(TestReport::upper("stationarity residual", f.residual, W_RESIDUAL));
            out.check(
                TestReport::upper("lower bound exp(-∫σ) < w, worst margin (negated)", -f.lower_bound_margin, 0.0)
                    .with_note("cell-wise against the direct-exit probability"),
            );
            out.check(TestReport::upper("upper bound w < 1: floor minus min p", P_FLOOR - f.min_p, 0.0).with_note(format!("min p {:e}", f.min_p)));
            let mut t = Table::new(&["cell", "x", "velocity", "w", "p"]);
            for i in 0..rod.grid.n_cells {
                for v in 0..rod.grid.k() {
                    t.row(vec![
                        i.to_string(),
                        rod.grid.center(i).to_string(),
                        v.to_string(),
                        f.w.at_cell(i, v).to_string(),
                        f.p.at_cell(i, v).to_string(),
                    ]);
                }
            }
            out.table("extinction", t);
            out.value("residual", json!(f.residual));
            out.value("residual_trapezoid", json!(f.residual_trapezoid));
            out.value("min_w", json!(f.min_w));
            out.value("min_p", json!(f.min_p));
        }
        Oracle::Spaceless { w, .. } => {
            let w = w.expect("requested");
            let c = &cfg.model().cells[0];
            let g = c.sigma_f * (c.fission.counts.pgf(w) - w);
            out.check(TestReport::upper("|G[w]|", g.abs(), 1e-9));
            out.check(flag("0 < w < 1", w > P_FLOOR && w < 1.0 - P_FLOOR, format!("w = {w}")));
            let mut t = Table::new(&["w", "p"]);
            t.row(vec![w.to_string(), (1.0 - w).to_string()]);
            out.table("extinction", t);
            out.value("w", json!(w));
        }
    }
    Ok(out)
}

fn counts_table(trs: &[Trajectory], times: &[f64], weight: impl Fn(&PhasePoint) -> f64) -> Table {
    let mut t = Table::new(&["replicate", "checkpoint", "time", "count", "weighted"]);
    for (r, tr) in trs.iter().enumerate() {
        for (k, s) in tr.snapshots.iter().enumerate() {
            t.row(vec![r.to_string(), k.to_string(), times[k].to_string(), s.count().to_string(), s.sum(&weight).to_string()]);
        }
    }
    t
}

fn simulate(cfg: &ExperimentConfig) -> Res<Outcome> {
    let mut out = Outcome::default();
    let run = cfg.run();
    let oracle = Oracle::build(cfg, true, false)?;
    let x = cfg.start().map_err(err)?;
    let mu = ParticleSystem::single(x);
    let trs = simulate_replicates(&mu, &sim_config(run), &Nbp::new(cfg.model()), run.seed, run.replicates).map_err(err)?;
    let lambda = oracle.lambda();
    let track = track_w(&mu, &trs, &run.checkpoints, lambda, |y| oracle.phi(y), Variant::Plain).map_err(err)?;
    let mut mt = Table::new(&["checkpoint", "time", "mean_w", "se"]);
    for (k, (m, se)) in track.summary().into_iter().enumerate() {
        mt.row(vec![k.to_string(), run.checkpoints[k].to_string(), m.to_string(), se.to_string()]);
    }
    for r in track.unit_mean_reports(K_SE) {
        out.check(r.with_seed(run.seed));
    }
    let mut rng = stream(run.seed, 0, "bootstrap");
    match estimate_lambda(&trs, &run.checkpoints, run.burn_in, run.bootstrap, GROWTH_LEVEL, &mut rng) {
        Ok(est) => {
            let miss = (est.ci.0 - lambda).max(lambda - est.ci.1).max(0.0);
            out.check(
                TestReport::upper("growth CI covers λ*, distance outside", miss, 0.0)
                    .with_seed(run.seed)
                    .with_note(format!("estimate {:.6} CI [{:.6}, {:.6}] oracle {:.6}", est.lambda, est.ci.0, est.ci.1, lambda)),
            );
            out.value("growth", json!(est));
        }
        Err(e) => out.check(TestReport::failed("growth CI covers λ*", &e.to_string())),
    }
    out.value("lambda", json!(lambda));
    out.table("population", counts_table(&trs, &run.checkpoints, |y| oracle.phi(y)));
    out.table("martingale", mt);
    Ok(out)
}

/// Survival field for the skeleton kinds, with the `0 < w < 1` check.
enum Field {
    Grid(GridSurvival, Box<RodOracle>),
    Constant(ConstantSurvival, f64),
}

fn survival(cfg: &ExperimentConfig, eigen: bool) -> Res<(Oracle, Result<Field, String>)> {
    let oracle = Oracle::build(cfg, eigen, true)?;
    let field = match &oracle {
        Oracle::Rod { rod, field, .. } => GridSurvival::checked(field.as_ref().expect("requested"), P_FLOOR)
            .map(|f| Field::Grid(f, rod.clone()))
            .map_err(err),
        Oracle::Spaceless { w, lambda } => {
            let w = w.expect("requested");
            if w > P_FLOOR && w < 1.0 - P_FLOOR {
                Ok(Field::Constant(ConstantSurvival(w), *lambda))
            } else {
                Err(format!("extinction probability {w} is outside ({P_FLOOR}, 1 - {P_FLOOR})"))
            }
        }
    };
    Ok((oracle, field))
}

fn skeleton(cfg: &ExperimentConfig) -> Res<Outcome> {
    let mut out = Outcome::default();
    let (_, field) = survival(cfg, false)?;
    let field = match field {
        Ok(f) => f,
        Err(e) => {
            out.check(TestReport::failed("M1: 0 < w < 1", &e));
            return Ok(out);
        }
    };
    out.check(flag("M1: 0 < w < 1", true, ""));
    match &field {
        Field::Grid(f, rod) => {
            let oracle = |t: f64, x: &PhasePoint| -> Res<f64> {
                let p = rod.step_psi(&f.w.values.iter().map(|w| 1.0 - w).collect::<Vec<_>>(), t).map_err(err)?;
                let gf = GridFunction { grid: rod.grid.clone(), values: p, outgoing_value: 0.0, clamp: (0.0, f64::INFINITY) };
                Ok(gf.eval(x.r.x, x.vi.expect("rod")) / f.p(x))
            };
            skeleton_with(cfg, f, oracle, &mut out)?;
        }
        Field::Constant(f, lambda) => {
            let oracle = |t: f64, _x: &PhasePoint| -> Res<f64> { Ok((lambda * t).exp()) };
            skeleton_with(cfg, f, oracle, &mut out)?;
        }
    }
    Ok(out)
}

fn skeleton_with<S: Survival>(
    cfg: &ExperimentConfig,
    field: &S,
    oracle: impl Fn(f64, &PhasePoint) -> Res<f64>,
    out: &mut Outcome,
) -> Res<()> {
    let run = cfg.run();
    let model = cfg.model();
    let x = cfg.start().map_err(err)?;
    let sk = Skeletal::new(model, field);
    let sc = sim_config(run);
    let dressed: Vec<Trajectory> = replicates(run.replicates, run.seed, "dressed", |_, rng| simulate_dressed(&x, &sc, &sk, rng))
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let violations = dressed.iter().filter(|t| t.snapshots.iter().any(|s| s.count_mark(Mark::Up) == 0)).count();
    out.check(TestReport::upper("paths without a prolific particle", violations as f64, 0.0).with_sizes(vec![dressed.len()]));
    let mut t = Table::new(&["checkpoint", "time", "mean_up", "se", "oracle"]);
    for (k, time) in run.checkpoints.iter().enumerate() {
        let ups: Vec<f64> = dressed.iter().map(|tr| tr.at(k).count_mark(Mark::Up) as f64).collect();
        let (m, se) = mean_se(&ups).map_err(err)?;
        let target = oracle(*time, &x)?;
        t.row(vec![k.to_string(), time.to_string(), m.to_string(), se.to_string(), target.to_string()]);
        out.check(
            TestReport::band(&format!("E↑⟨1, X↑_t⟩ vs ψ_t[p]/p at t={time}"), m, target, se, K_SE, 0.0)
                .with_seed(run.seed)
                .with_sizes(vec![ups.len()]),
        );
    }
    out.table("skeleton", t);

    let plain = simulate_replicates(&ParticleSystem::single(x), &sc, &Nbp::new(model), run.seed, run.replicates).map_err(err)?;
    let marks: Vec<(f64, f64)> = replicates(run.replicates, run.seed, "binpp", |i, rng| {
        let last = plain[i as usize].last();
        (last.sum(|y| field.p(y)), mark_binpp(last, field, rng).count() as f64)
    });
    let mass: Vec<f64> = marks.iter().map(|m| m.0).collect();
    let marked: Vec<f64> = marks.iter().map(|m| m.1).collect();
    match binpp_regression(&mass, &marked, BINPP_SLOPE) {
        Ok((fit, r)) => {
            out.check(r.with_seed(run.seed));
            out.value("binpp_fit", json!({"slope": fit.slope, "slope_se": fit.slope_se, "intercept": fit.intercept}));
        }
        Err(e) => out.check(TestReport::failed("BinPP slope", &e.to_string())),
    }
    let mut bt = Table::new(&["replicate", "p_mass", "marked"]);
    for (i, (a, b)) in marks.iter().enumerate() {
        bt.row(vec![i.to_string(), a.to_string(), b.to_string()]);
    }
    out.table("binpp", bt);

    let mut st = Table::new(&["replicate", "time", "id", "mark", "x", "y", "z", "vx", "vy", "vz"]);
    for (i, tr) in dressed.iter().take(run.snapshot_replicates).enumerate() {
        let s = tr.last();
        for q in &s.particles {
            st.row(vec![
                i.to_string(),
                s.time.to_string(),
                q.id.to_string(),
                q.mark.symbol().to_string(),
                q.x.r.x.to_string(),
                q.x.r.y.to_string(),
                q.x.r.z.to_string(),
                q.x.v.x.to_string(),
                q.x.v.y.to_string(),
                q.x.v.z.to_string(),
            ]);
        }
    }
    out.table("snapshots", st);
    Ok(())
}

fn reconstruct(cfg: &ExperimentConfig) -> Res<Outcome> {
    let mut out = Outcome::default();
    let (_, field) = survival(cfg, false)?;
    match field {
        Ok(Field::Grid(f, _)) => reconstruct_with(cfg, &f, &mut out)?,
        Ok(Field::Constant(f, _)) => reconstruct_with(cfg, &f, &mut out)?,
        Err(e) => out.check(TestReport::failed("M1: 0 < w < 1", &e)),
    }
    Ok(out)
}

fn reconstruct_with<S: Survival>(cfg: &ExperimentConfig, field: &S, out: &mut Outcome) -> Res<()> {
    let run = cfg.run();
    let model = cfg.model();
    let x = cfg.start().map_err(err)?;
    let mu = ParticleSystem::single(x);
    let sc = sim_config(run);
    let direct = simulate_replicates(&mu, &sc, &Nbp::new(model), run.seed, run.replicates).map_err(err)?;
    let sk = Skeletal::new(model, field);
    let mixed: Vec<_> = replicates(run.replicates, run.seed, "mixture", |_, rng| reconstruct_mixture(&mu, &sc, &sk, rng))
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let a: Vec<u64> = direct.iter().map(|t| t.last().count() as u64).collect();
    let b: Vec<u64> = mixed.iter().map(|(t, _)| t.last().count() as u64).collect();
    match two_sample_test(&a, &b) {
        Ok(r) => out.check(
            TestReport::p_value("N_t law: reconstruction vs direct (χ²)", r.value, r.p_value.unwrap_or(0.0), ALPHA)
                .with_seed(run.seed)
                .with_sizes(vec![a.len(), b.len()])
                .with_note(r.note),
        ),
        Err(e) => out.check(TestReport::failed("N_t law: reconstruction vs direct (χ²)", &e.to_string())),
    }
    let doomed: Vec<f64> = mixed.iter().map(|(_, m)| if m.roots[0].prolific { 0.0 } else { 1.0 }).collect();
    let (f, se) = mean_se(&doomed).map_err(err)?;
    let w = field.w(&x);
    let se_exact = (w * (1.0 - w) / doomed.len() as f64).sqrt();
    out.check(TestReport::band("P(root doomed) vs w(x)", f, w, se_exact.max(se), K_SE, 0.0).with_seed(run.seed));
    let mut t = Table::new(&["replicate", "direct", "mixture"]);
    for (i, (p, q)) in a.iter().zip(&b).enumerate() {
        t.row(vec![i.to_string(), p.to_string(), q.to_string()]);
    }
    out.table("reconstruct", t);
    let mut mt = Table::new(&["replicate", "root", "p", "prolific"]);
    for (i, (_, m)) in mixed.iter().enumerate() {
        for r in &m.roots {
            mt.row(vec![i.to_string(), r.index.to_string(), r.p.to_string(), r.prolific.to_string()]);
        }
    }
    out.table("mixture", mt);
    Ok(())
}

fn slln(cfg: &ExperimentConfig) -> Res<Outcome> {
    let mut out = Outcome::default();
    let run = cfg.run();
    let oracle = Oracle::build(cfg, true, false)?;
    let Oracle::Rod { rod, eig, .. } = &oracle else {
        return Err("the strong-law experiment needs a rod grid".into());
    };
    let eig = eig.as_ref().expect("requested");
    let horizon = *run.checkpoints.last().expect("non-empty");
    let growth = (eig.lambda * horizon).exp();
    out.check(
        TestReport::upper("growth factor requirement 10³/e^{λT}", SLLN_GROWTH / growth, 1.0)
            .with_note(format!("λ* = {:.6}, T = {horizon}", eig.lambda)),
    );
    let (a, b) = (rod.grid.a, rod.grid.b);
    let mid = 0.5 * (a + b);
    let left = |y: &PhasePoint| if y.r.x < mid { oracle.phi(y) } else { 0.0 };
    let masked: Vec<f64> = (0..rod.grid.len())
        .map(|j| if rod.grid.center(j / rod.grid.k()) < mid { eig.phi.values[j] } else { 0.0 })
        .collect();
    let target = eig.left_pairing(&masked);
    let x = cfg.start().map_err(err)?;
    let trs = simulate_replicates(&ParticleSystem::single(x), &sim_config(run), &Nbp::new(cfg.model()), run.seed, run.replicates).map_err(err)?;
    let rep = slln_ratio(&trs, horizon, left, |y| oracle.phi(y), target, SLLN_REL);
    let ident = slln_ratio(&trs, horizon, |y| oracle.phi(y), |y| oracle.phi(y), 1.0, 0.0);
    match &rep.outcome {
        SllnOutcome::Ratio { mean, relative_error, .. } => out.check(
            TestReport::upper("⟨g,X_T⟩/⟨φ,X_T⟩ vs ⟨g,φ̃⟩, relative", *relative_error, SLLN_REL)
                .with_seed(run.seed)
                .with_sizes(vec![rep.surviving, rep.replicates])
                .with_note(format!("mean ratio {mean:.6}, target {target:.6}")),
        ),
        SllnOutcome::Extinct => out.check(TestReport::failed("⟨g,X_T⟩/⟨φ,X_T⟩ vs ⟨g,φ̃⟩", "every replicate extinct")),
    }
    match &ident.outcome {
        SllnOutcome::Ratio { ratios, .. } => {
            let dev = ratios.iter().map(|r| (r - 1.0).abs()).fold(0.0, f64::max);
            out.check(TestReport::upper("g = φ ratio deviation", dev, 0.0));
        }
        SllnOutcome::Extinct => out.check(TestReport::failed("g = φ ratio deviation", "every replicate extinct")),
    }
    let mut t = Table::new(&["replicate", "count", "ratio_left", "ratio_phi"]);
    for (i, tr) in trs.iter().enumerate() {
        let s = tr.last();
        let d = s.sum(|y| oracle.phi(y));
        let (r1, r2) = if s.count() > 0 && d > 0.0 { ((s.sum(left) / d).to_string(), (s.sum(|y| oracle.phi(y)) / d).to_string()) } else { (String::new(), String::new()) };
        t.row(vec![i.to_string(), s.count().to_string(), r1, r2]);
    }
    out.table("slln", t);
    out.value("lambda", json!(eig.lambda));
    out.value("target", json!(target));
    out.value("surviving", json!(rep.surviving));
    Ok(out)
}

fn bbm(cfg: &ExperimentConfig) -> Res<Outcome> {
    let mut out = Outcome::default();
    let s = cfg.strip();
    let run = cfg.run();
    let m = s.model();
    let lambda = lambda_strip(&m);
    let fd = lambda_strip_fd(&m, s.cells).map_err(err)?;
    out.check(TestReport::upper("λ closed form vs difference eigensolver", (lambda - fd).abs(), EIGEN_AGREEMENT));
    let x0 = s.x0.unwrap_or(0.5 * s.width);
    let sc = StripConfig { dt: s.dt, horizon: run.horizon, checkpoints: run.checkpoints.clone(), cap: run.cap };
    let rows: Vec<Vec<f64>> = replicates(run.replicates, run.seed, "strip", |_, rng| simulate_strip(&m, x0, &sc, rng).map(|t| t.counts()))
        .into_iter()
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let mut rng = stream(run.seed, 0, "bootstrap");
    match estimate_lambda_from_counts(&rows, &run.checkpoints, run.burn_in, run.bootstrap, GROWTH_LEVEL, &mut rng) {
        Ok(est) => {
            let miss = (est.ci.0 - lambda).max(lambda - est.ci.1).max(0.0);
            out.check(
                TestReport::upper("simulated growth CI covers λ, distance outside", miss, 0.0)
                    .with_seed(run.seed)
                    .with_note(format!("estimate {:.6} CI [{:.6}, {:.6}] λ {:.6}", est.lambda, est.ci.0, est.ci.1, lambda)),
            );
            out.value("growth", json!(est));
        }
        Err(e) => out.check(TestReport::failed("simulated growth CI covers λ", &e.to_string())),
    }
    let sol = solve_w_strip(&m, s.cells, 1e-10).map_err(err)?;
    out.check(TestReport::upper("strip w residual", sol.residual, 1e-8));
    if s.expect_plateau {
        let root = solve_w_spaceless(m.rate, |z| m.pgf(z), 1e-14, 1e5).map_err(err)?;
        out.check(TestReport::upper("w(K/2) vs spaceless root", (sol.midpoint() - root).abs(), PLATEAU_TOL));
        out.value("spaceless_w", json!(root));
    }
    let mut wt = Table::new(&["x", "w"]);
    for (x, w) in sol.x.iter().zip(&sol.w) {
        wt.row(vec![x.to_string(), w.to_string()]);
    }
    let mut ct = Table::new(&["replicate", "checkpoint", "time", "count"]);
    for (i, r) in rows.iter().enumerate() {
        for (k, c) in r.iter().enumerate() {
            ct.row(vec![i.to_string(), k.to_string(), run.checkpoints[k].to_string(), c.to_string()]);
        }
    }
    out.table("strip_w", wt);
    out.table("strip_counts", ct);
    out.value("lambda", json!(lambda));
    out.value("lambda_fd", json!(fd));
    out.value("w_midpoint", json!(sol.midpoint()));
    Ok(out)
}
