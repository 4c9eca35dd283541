//! Deterministic grid solver for rod models (an interval with finitely many
//! velocities): the mean semigroup, its leading eigen-triple, and the
//! extinction probability.
//!
//! One step of length `Δ = h / v_min` is a Strang splitting: half a step of
//! the per-cell collision system `∂ψ/∂t = Cψ`, an exact characteristic shift
//! by `υΔ/h` cells, and another half step. A particle leaving the rod
//! contributes `0` to the linear problem and an empty product `1` to the
//! non-linear one.

use crate::cross_sections::{CrossSectionModel, ModelError};
use crate::phase_space::{PhasePoint, SpatialDomain, Vec3};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("the grid solver needs an interval domain with a discrete velocity set")]
    NotARod,
    #[error("need at least 16 cells, got {0}")]
    TooFewCells(usize),
    #[error("velocity {0} is not an integer multiple of the slowest speed (CFL mismatch)")]
    Cfl(f64),
    #[error("time {t} is not a whole number of grid steps of {dt}")]
    OffGridTime { t: f64, dt: f64 },
    #[error("input has length {got}, expected {expected}")]
    Length { got: usize, expected: usize },
    #[error("power iteration did not converge in {iterations} iterations (last residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("extinction iteration decreased at cell {cell}, velocity {velocity} by {drop:e}")]
    NonMonotone { cell: usize, velocity: usize, drop: f64 },
    #[error("extinction iteration not settled by the horizon (last increment rate {0:e})")]
    NotSettled(f64),
}

/// Spatial and velocity discretisation of a rod.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub a: f64,
    pub b: f64,
    pub n_cells: usize,
    /// `x` components of the velocities.
    pub vx: Vec<f64>,
    pub h: f64,
    /// Step length `h / v_min`.
    pub dt: f64,
    /// Cells travelled per step, signed.
    pub shifts: Vec<i64>,
}

impl Grid {
    pub fn k(&self) -> usize {
        self.vx.len()
    }

    pub fn len(&self) -> usize {
        self.n_cells * self.k()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn center(&self, i: usize) -> f64 {
        self.a + (i as f64 + 0.5) * self.h
    }

    pub fn idx(&self, i: usize, v: usize) -> usize {
        i * self.k() + v
    }
}

/// Piecewise-linear interpolation per velocity over the nodes
/// `a, centre_0, …, centre_{n-1}, b`. The outgoing boundary carries a fixed
/// value; the incoming one is extrapolated from the first two centres.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub outgoing_value: f64,
    pub clamp: (f64, f64),
}

impl GridFunction {
    pub fn at_cell(&self, i: usize, v: usize) -> f64 {
        self.values[self.grid.idx(i, v)]
    }

    fn node(&self, j: usize, v: usize) -> (f64, f64) {
        let g = &self.grid;
        let n = g.n_cells;
        if j == 0 || j == n + 1 {
            let pos = if j == 0 { g.a } else { g.b };
            let outgoing = (j == n + 1 && g.vx[v] > 0.0) || (j == 0 && g.vx[v] < 0.0);
            let val = if outgoing {
                self.outgoing_value
            } else if j == 0 {
                let (f0, f1) = (self.at_cell(0, v), self.at_cell(1, v));
                (f0 - 0.5 * (f1 - f0)).clamp(self.clamp.0, self.clamp.1)
            } else {
                let (f0, f1) = (self.at_cell(n - 1, v), self.at_cell(n - 2, v));
                (f0 - 0.5 * (f1 - f0)).clamp(self.clamp.0, self.clamp.1)
            };
            (pos, val)
        } else {
            (g.center(j - 1), self.at_cell(j - 1, v))
        }
    }

    /// Node index `j` with `node(j).x ≤ x < node(j+1).x`.
    fn bracket(&self, x: f64) -> usize {
        let g = &self.grid;
        let u = (x - g.a) / g.h - 0.5;
        if u < 0.0 {
            0
        } else {
            ((u.floor() as usize) + 1).min(g.n_cells)
        }
    }

    pub fn eval(&self, x: f64, v: usize) -> f64 {
        let g = &self.grid;
        let x = x.clamp(g.a, g.b);
        let j = self.bracket(x);
        let (x0, f0) = self.node(j, v);
        let (x1, f1) = self.node(j + 1, v);
        let t = if x1 > x0 { ((x - x0) / (x1 - x0)).clamp(0.0, 1.0) } else { 0.0 };
        f0 + t * (f1 - f0)
    }

    /// Minimum and maximum of the interpolant over `[lo, hi]`.
    pub fn range(&self, lo: f64, hi: f64, v: usize) -> (f64, f64) {
        let g = &self.grid;
        let (lo, hi) = (lo.clamp(g.a, g.b), hi.clamp(g.a, g.b));
        let (lo, hi) = if lo <= hi { (lo, hi) } else { (hi, lo) };
        let mut mn = self.eval(lo, v).min(self.eval(hi, v));
        let mut mx = self.eval(lo, v).max(self.eval(hi, v));
        let j0 = self.bracket(lo) + 1;
        let j1 = self.bracket(hi);
        for j in j0..=j1 {
            let (_, f) = self.node(j, v);
            mn = mn.min(f);
            mx = mx.max(f);
        }
        (mn, mx)
    }

    /// Grid-quadrature inner product `Σ f g h` over cells and velocities.
    pub fn inner(&self, other: &[f64]) -> f64 {
        self.values.iter().zip(other).map(|(a, b)| a * b).sum::<f64>() * self.grid.h
    }
}

/// `(λ*, φ, φ̃)` on the grid with `sup φ = 1` and `⟨φ, φ̃⟩ = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenTriple {
    pub lambda: f64,
    pub phi: GridFunction,
    pub phi_tilde: Vec<f64>,
    /// `⟨1, φ̃⟩`.
    pub phi_tilde_mass: f64,
    pub iterations: usize,
    pub residual: f64,
}

impl EigenTriple {
    /// `⟨f, φ̃⟩` for a function evaluated at cell centres.
    pub fn left_pairing(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.phi_tilde).map(|(a, b)| a * b).sum::<f64>() * self.phi.grid.h
    }
}

/// Spectrum of the one-step operator from a dense eigensolver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DenseSpectrum {
    pub lambda: f64,
    /// Next growth rate below `λ*`, after discarding the sign-flipped copy
    /// of the leading eigenvalue that the two-velocity shift produces.
    pub lambda2: Option<f64>,
}

/// `w` and `p = 1 − w` on the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalField {
    pub w: GridFunction,
    pub p: GridFunction,
    /// `sup |Φ(w) − w| / Δ` with `Φ` the solver step.
    pub residual: f64,
    /// Trapezoidal characteristic residual of the stationary equation; an
    /// `O(h²)` consistency measure, reported only.
    pub residual_trapezoid: f64,
    pub iterations: usize,
    /// Worst `w − exp(−∫σ)` over cells (non-negative when the lower bound
    /// holds).
    pub lower_bound_margin: f64,
    pub min_w: f64,
    pub min_p: f64,
}

impl SurvivalField {
    /// `inf w > 0` and `w < 1` everywhere on the grid.
    pub fn m1_holds(&self, floor: f64) -> bool {
        self.min_w > 0.0 && self.min_p > floor
    }

    pub fn lower_bound_holds(&self) -> bool {
        self.lower_bound_margin >= 0.0
    }
}

/// Characteristic-splitting solver for one rod model.
#[derive(Debug, Clone)]
pub struct RodOracle {
    pub model: CrossSectionModel,
    pub grid: Grid,
    half: Vec<DMatrix<f64>>,
    full: Vec<DMatrix<f64>>,
    generators: Vec<DMatrix<f64>>,
}

impl RodOracle {
    pub fn new(model: &CrossSectionModel, n_cells: usize) -> Result<Self, OracleError> {
        model.validate()?;
        let (a, b) = match model.domain {
            SpatialDomain::Interval { a, b } => (a, b),
            _ => return Err(OracleError::NotARod),
        };
        let k = model.velocities.len().ok_or(OracleError::NotARod)?;
        if n_cells < 16 {
            return Err(OracleError::TooFewCells(n_cells));
        }
        let vx: Vec<f64> = (0..k).map(|j| model.velocities.velocity(j).x).collect();
        let vmin = vx.iter().map(|v| v.abs()).fold(f64::INFINITY, f64::min);
        let mut shifts = Vec::with_capacity(k);
        for &v in &vx {
            let q = v / vmin;
            if (q - q.round()).abs() > 1e-9 {
                return Err(OracleError::Cfl(v));
            }
            shifts.push(q.round() as i64);
        }
        let h = (b - a) / n_cells as f64;
        let grid = Grid { a, b, n_cells, vx, h, dt: h / vmin, shifts };

        let mut generators: Vec<DMatrix<f64>> = Vec::with_capacity(n_cells);
        let mut half: Vec<DMatrix<f64>> = Vec::with_capacity(n_cells);
        let mut full: Vec<DMatrix<f64>> = Vec::with_capacity(n_cells);
        let mut cache: Vec<(usize, usize)> = Vec::new();
        for i in 0..n_cells {
            let x = grid.center(i);
            let slab = model.slab_of(x, 0.0);
            if let Some(&(_, j)) = cache.iter().find(|(s, _)| *s == slab) {
                generators.push(generators[j].clone());
                half.push(half[j].clone());
                full.push(full[j].clone());
                continue;
            }
            let c = Self::collision_matrix(model, &grid, x);
            let e_half = (&c * (0.5 * grid.dt)).exp();
            let e_full = (&c * grid.dt).exp();
            cache.push((slab, i));
            generators.push(c);
            half.push(e_half);
            full.push(e_full);
        }
        Ok(Self { model: model.clone(), grid, half, full, generators })
    }

    /// `C[v][v'] = −σ δ + σ_s π_s + σ_f π_f` at position `x`.
    fn collision_matrix(model: &CrossSectionModel, grid: &Grid, x: f64) -> DMatrix<f64> {
        let k = grid.k();
        let mut c = DMatrix::zeros(k, k);
        for v in 0..k {
            let p = PhasePoint::new(Vec3::new(x, 0.0, 0.0), model.velocities.velocity(v), Some(v));
            let cell = model.cell(&p);
            c[(v, v)] -= cell.sigma_s + cell.sigma_f;
            for vp in 0..k {
                c[(v, vp)] += model.combined_kernel(&p, Some(vp));
            }
        }
        c
    }

    pub fn dt(&self) -> f64 {
        self.grid.dt
    }

    /// Values of `g` at cell centres.
    pub fn project<G: Fn(f64, usize) -> f64>(&self, g: G) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for i in 0..self.grid.n_cells {
            for v in 0..self.grid.k() {
                out[self.grid.idx(i, v)] = g(self.grid.center(i), v);
            }
        }
        out
    }

    fn collide(&self, mats: &[DMatrix<f64>], f: &mut [f64], transpose: bool) {
        let k = self.grid.k();
        let mut tmp = vec![0.0; k];
        for i in 0..self.grid.n_cells {
            let m = &mats[i];
            let cell = &mut f[i * k..(i + 1) * k];
            for (r, t) in tmp.iter_mut().enumerate() {
                *t = (0..k)
                    .map(|c| if transpose { m[(c, r)] } else { m[(r, c)] } * cell[c])
                    .sum();
            }
            cell.copy_from_slice(&tmp);
        }
    }

    /// Backward shift `new[i] = old[i + s]` with `inflow` outside the rod,
    /// or its transpose (forward shift, dropping what leaves).
    fn shift(&self, f: &[f64], inflow: f64, transpose: bool) -> Vec<f64> {
        let g = &self.grid;
        let (n, k) = (g.n_cells as i64, g.k());
        let mut out = vec![if transpose { 0.0 } else { inflow }; f.len()];
        for i in 0..n {
            for v in 0..k {
                let j = i + g.shifts[v];
                if transpose {
                    if (0..n).contains(&j) {
                        out[j as usize * k + v] = f[i as usize * k + v];
                    }
                } else if (0..n).contains(&j) {
                    out[i as usize * k + v] = f[j as usize * k + v];
                }
            }
        }
        out
    }

    fn check_len(&self, f: &[f64]) -> Result<(), OracleError> {
        if f.len() != self.grid.len() {
            return Err(OracleError::Length { got: f.len(), expected: self.grid.len() });
        }
        Ok(())
    }

    fn steps_for(&self, t: f64) -> Result<usize, OracleError> {
        if t < 0.0 || !t.is_finite() {
            return Err(OracleError::OffGridTime { t, dt: self.grid.dt });
        }
        let n = t / self.grid.dt;
        if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
            return Err(OracleError::OffGridTime { t, dt: self.grid.dt });
        }
        Ok(n.round() as usize)
    }

    /// One step of the linear operator `M = E_{Δ/2} S E_{Δ/2}` or of `Mᵀ`.
    pub fn apply_step(&self, f: &[f64], transpose: bool) -> Vec<f64> {
        let mut y = f.to_vec();
        self.collide(&self.half, &mut y, transpose);
        let mut y = self.shift(&y, 0.0, transpose);
        self.collide(&self.half, &mut y, transpose);
        y
    }

    fn propagate(&self, g: &[f64], t: f64, transpose: bool) -> Result<Vec<f64>, OracleError> {
        self.check_len(g)?;
        let n = self.steps_for(t)?;
        if n == 0 {
            return Ok(g.to_vec());
        }
        let mut y = g.to_vec();
        self.collide(&self.half, &mut y, transpose);
        for s in 0..n {
            y = self.shift(&y, 0.0, transpose);
            let mats = if s + 1 == n { &self.half } else { &self.full };
            self.collide(mats, &mut y, transpose);
        }
        Ok(y)
    }

    /// `ψ_t[g]` on the grid; `t` must be a whole number of steps.
    pub fn step_psi(&self, g: &[f64], t: f64) -> Result<Vec<f64>, OracleError> {
        self.propagate(g, t, false)
    }

    /// Adjoint semigroup with respect to `⟨f, g⟩ = Σ f g h`.
    pub fn step_psi_adjoint(&self, g: &[f64], t: f64) -> Result<Vec<f64>, OracleError> {
        self.propagate(g, t, true)
    }

    /// Grid inner product.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter().zip(g).map(|(a, b)| a * b).sum::<f64>() * self.grid.h
    }

    /// Leading eigen-triple by power iteration on `(I + M)/2` and its
    /// transpose. The averaging removes the sign-flipped twin `−ρ` of the
    /// leading eigenvalue that the checkerboard symmetry of the two-velocity
    /// shift creates. Stops when the two-sided Rayleigh quotient and both
    /// vectors are settled, judged by their change scaled with the observed
    /// contraction rate.
    pub fn power_iteration(&self, tol: f64, max_iter: usize) -> Result<EigenTriple, OracleError> {
        let len = self.grid.len();
        let avg = |f: &[f64], transpose: bool| -> Vec<f64> {
            let m = self.apply_step(f, transpose);
            f.iter().zip(&m).map(|(a, b)| 0.5 * (a + b)).collect()
        };
        let sup = |f: &[f64]| f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut phi = vec![1.0; len];
        let mut psi = vec![1.0; len];
        let mut rho_prev = f64::NAN;
        let mut dphi_prev = f64::NAN;
        let mut rate: f64 = 0.0;
        let mut last_res = f64::INFINITY;
        for it in 1..=max_iter {
            let aphi = avg(&phi, false);
            let apsi = avg(&psi, true);
            let rho = apsi.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>()
                / psi.iter().zip(&phi).map(|(a, b)| a * b).sum::<f64>();
            let nphi = sup(&aphi);
            let npsi = sup(&apsi);
            let new_phi: Vec<f64> = aphi.iter().map(|v| v / nphi).collect();
            let new_psi: Vec<f64> = apsi.iter().map(|v| v / npsi).collect();
            let dphi = new_phi.iter().zip(&phi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            let dpsi = new_psi.iter().zip(&psi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if dphi_prev.is_finite() && dphi_prev > 0.0 && it > 10 {
                rate = (dphi / dphi_prev).clamp(0.0, 1.0 - 1e-12);
            }
            let amplify = if it > 10 { 1.0 / (1.0 - rate) } else { f64::INFINITY };
            let drho = (rho - rho_prev).abs();
            last_res = dphi.max(dpsi) * amplify;
            phi = new_phi;
            psi = new_psi;
            dphi_prev = dphi;
            if drho * amplify < tol && last_res < tol.sqrt() {
                return Ok(self.finish_triple(phi, psi, 2.0 * rho - 1.0, it, last_res));
            }
            rho_prev = rho;
        }
        Err(OracleError::NoConvergence { iterations: max_iter, residual: last_res })
    }

    fn finish_triple(&self, phi: Vec<f64>, psi: Vec<f64>, rho: f64, iterations: usize, residual: f64) -> EigenTriple {
        let s = self.inner(&phi, &psi);
        let phi_tilde: Vec<f64> = psi.iter().map(|v| v / s).collect();
        let phi_tilde_mass = phi_tilde.iter().sum::<f64>() * self.grid.h;
        EigenTriple {
            lambda: rho.ln() / self.grid.dt,
            phi: GridFunction { grid: self.grid.clone(), values: phi, outgoing_value: 0.0, clamp: (0.0, f64::INFINITY) },
            phi_tilde,
            phi_tilde_mass,
            iterations,
            residual,
        }
    }

    /// The one-step operator as a dense matrix.
    pub fn dense_matrix(&self) -> DMatrix<f64> {
        let len = self.grid.len();
        let mut m = DMatrix::zeros(len, len);
        let mut e = vec![0.0; len];
        for j in 0..len {
            e[j] = 1.0;
            let col = self.apply_step(&e, false);
            m.set_column(j, &DVector::from_vec(col));
            e[j] = 0.0;
        }
        m
    }

    /// Leading growth rate from all eigenvalues of the dense one-step
    /// operator: the largest positive real eigenvalue.
    pub fn dense_spectrum(&self) -> DenseSpectrum {
        let eig = self.dense_matrix().complex_eigenvalues();
        let rho = eig
            .iter()
            .filter(|z| z.im.abs() <= 1e-9 * z.norm().max(1e-300) && z.re > 0.0)
            .map(|z| z.re)
            .fold(0.0, f64::max);
        let tol = 1e-7 * rho;
        let rho2 = eig
            .iter()
            .filter(|z| (z.re - rho).hypot(z.im) > tol && (z.re + rho).hypot(z.im) > tol)
            .map(|z| z.norm())
            .fold(0.0, f64::max);
        let dt = self.grid.dt;
        DenseSpectrum {
            lambda: rho.ln() / dt,
            lambda2: if rho2 > 0.0 { Some(rho2.ln() / dt) } else { None },
        }
    }

    fn nonlinear_rhs(&self, i: usize, u: &[f64], out: &mut [f64]) {
        let k = self.grid.k();
        let x = self.grid.center(i);
        for v in 0..k {
            let p = PhasePoint::new(Vec3::new(x, 0.0, 0.0), self.model.velocities.velocity(v), Some(v));
            let cell = self.model.cell(&p);
            let scat: f64 = (0..k).map(|vp| self.model.scatter_kernel(&p, Some(vp)) * u[vp]).sum();
            let pgf = self.model.pgf(&p, |_, j| u[j.expect("discrete")]);
            out[v] = cell.sigma_s * (scat - u[v]) + cell.sigma_f * (pgf - u[v]);
        }
    }

    /// Per-cell RK4 integration of `du/dt = σ_s(Π_s u − u) + σ_f(E∏u − u)`.
    fn collide_nonlinear(&self, f: &mut [f64], dt: f64, lip: f64) {
        let k = self.grid.k();
        let n_sub = ((dt * lip / 0.02).ceil() as usize).max(1);
        let hs = dt / n_sub as f64;
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
            (vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k], vec![0.0; k]);
        for i in 0..self.grid.n_cells {
            let u = &mut f[i * k..(i + 1) * k];
            for _ in 0..n_sub {
                self.nonlinear_rhs(i, u, &mut k1);
                for j in 0..k {
                    tmp[j] = u[j] + 0.5 * hs * k1[j];
                }
                self.nonlinear_rhs(i, &tmp, &mut k2);
                for j in 0..k {
                    tmp[j] = u[j] + 0.5 * hs * k2[j];
                }
                self.nonlinear_rhs(i, &tmp, &mut k3);
                for j in 0..k {
                    tmp[j] = u[j] + hs * k3[j];
                }
                self.nonlinear_rhs(i, &tmp, &mut k4);
                for j in 0..k {
                    u[j] += hs / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
                }
            }
        }
    }

    fn lipschitz(&self) -> f64 {
        let mean_max = self
            .model
            .cells
            .iter()
            .map(|c| c.fission.counts.mean())
            .fold(0.0, f64::max);
        2.0 * self.model.sup_sigma_s() + self.model.sup_sigma_f() * (1.0 + mean_max)
    }

    /// One step of the non-linear map `Φ`.
    pub fn nonlinear_step(&self, u: &[f64]) -> Vec<f64> {
        let lip = self.lipschitz();
        let mut y = u.to_vec();
        self.collide_nonlinear(&mut y, 0.5 * self.grid.dt, lip);
        let mut y = self.shift(&y, 1.0, false);
        self.collide_nonlinear(&mut y, 0.5 * self.grid.dt, lip);
        y
    }

    /// `∫₀^κ σ(r + υs, υ) ds` from the centre of cell `i` with velocity `v`.
    fn optical_depth(&self, i: usize, v: usize) -> f64 {
        let x = self.grid.center(i);
        let vx = self.grid.vx[v];
        let p = PhasePoint::new(Vec3::new(x, 0.0, 0.0), Vec3::new(vx, 0.0, 0.0), Some(v));
        let target = if vx > 0.0 { self.grid.b } else { self.grid.a };
        let m = &self.model;
        let group = m.group_of(&p);
        let mut pos = x;
        let mut slab = m.slab_of(x, vx);
        let mut depth = 0.0;
        loop {
            let edge = if vx > 0.0 {
                m.x_breaks.get(slab).copied().unwrap_or(target).min(target)
            } else if slab > 0 {
                m.x_breaks[slab - 1].max(target)
            } else {
                target
            };
            let c = m.cell_at(slab, group);
            depth += (c.sigma_s + c.sigma_f) * (edge - pos).abs() / vx.abs();
            pos = edge;
            if pos == target {
                return depth;
            }
            slab = if vx > 0.0 { slab + 1 } else { slab - 1 };
        }
    }

    /// `w = lim u_t[0]`, iterating `Φ` from `u = 0` until
    /// `sup |Φ(u) − u| / Δ < tol`.
    pub fn solve_w(&self, horizon: f64, tol: f64) -> Result<SurvivalField, OracleError> {
        let g = &self.grid;
        let (n, k) = (g.n_cells, g.k());
        let max_steps = (horizon / g.dt).ceil() as usize;
        let mut u = vec![0.0; g.len()];
        let mut rate = f64::INFINITY;
        let mut steps = 0;
        while steps < max_steps {
            let next = self.nonlinear_step(&u);
            let mut inc: f64 = 0.0;
            for (j, (a, b)) in next.iter().zip(&u).enumerate() {
                let d = a - b;
                if d < -1e-13 {
                    return Err(OracleError::NonMonotone { cell: j / k, velocity: j % k, drop: -d });
                }
                inc = inc.max(d.abs());
            }
            u = next;
            steps += 1;
            rate = inc / g.dt;
            if rate < tol {
                break;
            }
        }
        if rate >= tol {
            return Err(OracleError::NotSettled(rate));
        }
        let residual = self
            .nonlinear_step(&u)
            .iter()
            .zip(&u)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / g.dt;

        // trapezoid along the characteristic through neighbouring centres
        let mut rhs = vec![0.0; g.len()];
        for i in 0..n {
            self.nonlinear_rhs(i, &u[i * k..(i + 1) * k], &mut rhs[i * k..(i + 1) * k]);
        }
        let mut residual_trapezoid: f64 = 0.0;
        for i in 0..n as i64 {
            for v in 0..k {
                let j = i + g.shifts[v];
                if !(0..n as i64).contains(&j) {
                    continue;
                }
                let (a, b) = (g.idx(i as usize, v), g.idx(j as usize, v));
                let r = (u[b] - u[a]) / g.dt + 0.5 * (rhs[a] + rhs[b]);
                residual_trapezoid = residual_trapezoid.max(r.abs());
            }
        }

        let mut margin = f64::INFINITY;
        for i in 0..n {
            for v in 0..k {
                let bound = (-self.optical_depth(i, v)).exp();
                margin = margin.min(u[g.idx(i, v)] - bound);
            }
        }
        let min_w = u.iter().copied().fold(f64::INFINITY, f64::min);
        let p: Vec<f64> = u.iter().map(|w| 1.0 - w).collect();
        let min_p = p.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(SurvivalField {
            w: GridFunction { grid: g.clone(), values: u, outgoing_value: 1.0, clamp: (0.0, 1.0) },
            p: GridFunction { grid: g.clone(), values: p, outgoing_value: 0.0, clamp: (0.0, 1.0) },
            residual,
            residual_trapezoid,
            iterations: steps,
            lower_bound_margin: margin,
            min_w,
            min_p,
        })
    }

    /// Largest `φ/p` over the grid.
    pub fn phi_over_p_max(&self, eig: &EigenTriple, field: &SurvivalField) -> f64 {
        eig.phi
            .values
            .iter()
            .zip(&field.p.values)
            .map(|(f, p)| f / p)
            .fold(0.0, f64::max)
    }

    /// Per-cell generator, exposed for diagnostics.
    pub fn collision_generator(&self, i: usize) -> &DMatrix<f64> {
        &self.generators[i]
    }
}

/// Richardson extrapolation for a second-order quantity at `h` and `h/2`.
pub fn richardson(coarse: f64, fine: f64) -> f64 {
    (4.0 * fine - coarse) / 3.0
}

/// `w` for a spaceless branching mechanism: integrate
/// `du/dt = ς(f(u) − u)` from `u = 0` with RK4 until the increment rate is
/// below `tol`, where `f` is the offspring generating function.
pub fn solve_w_spaceless<F: Fn(f64) -> f64>(rate: f64, pgf: F, tol: f64, horizon: f64) -> Result<f64, OracleError> {
    let rhs = |u: f64| rate * (pgf(u) - u);
    let h = 0.01 / rate.max(1e-12);
    let mut u = 0.0;
    let mut t = 0.0;
    while t < horizon {
        let k1 = rhs(u);
        let k2 = rhs(u + 0.5 * h * k1);
        let k3 = rhs(u + 0.5 * h * k2);
        let k4 = rhs(u + h * k3);
        let next = u + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if next < u - 1e-15 {
            return Err(OracleError::NonMonotone { cell: 0, velocity: 0, drop: u - next });
        }
        let r = (next - u).abs() / h;
        u = next;
        t += h;
        if r < tol {
            return Ok(u);
        }
    }
    Err(OracleError::NotSettled(rhs(u).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cross_sections::{CellData, CountLaw, Emission, FissionLaw, ScatterKernel};
    use crate::phase_space::VelocitySpace;
    use crate::presets;
    use crate::stats::stream;
    use proptest::prelude::*;
    use rand::Rng;

    fn free_rod() -> CrossSectionModel {
        let cell = CellData {
            sigma_s: 0.0,
            sigma_f: 0.0,
            scatter: ScatterKernel::Table(vec![0.5, 0.5]),
            fission: FissionLaw {
                counts: CountLaw::Table { probs: vec![1.0] },
                emission: Emission::Independent(vec![0.5, 0.5]),
                intensity: None,
            },
        };
        CrossSectionModel::homogeneous(SpatialDomain::interval(0.0, 1.0).unwrap(), VelocitySpace::rod(1.0).unwrap(), cell)
            .unwrap()
    }

    #[test]
    fn pure_advection_is_a_shift_with_loss() {
        let o = RodOracle::new(&free_rod(), 16).unwrap();
        let g = o.project(|x, _| x);
        let t = 4.0 * o.dt();
        let out = o.step_psi(&g, t).unwrap();
        for i in 0..16 {
            let c = o.grid.center(i);
            let right = out[o.grid.idx(i, 0)];
            let left = out[o.grid.idx(i, 1)];
            let er = if c + t < 1.0 { c + t } else { 0.0 };
            let el = if c - t > 0.0 { c - t } else { 0.0 };
            assert!((right - er).abs() < 1e-12 && (left - el).abs() < 1e-12);
        }
    }

    #[test]
    fn guards() {
        assert_eq!(RodOracle::new(&presets::rod1(), 8).unwrap_err(), OracleError::TooFewCells(8));
        let mut m = presets::rod1();
        m.velocities = VelocitySpace::discrete(vec![[1.0, 0.0, 0.0], [-1.5, 0.0, 0.0]]).unwrap();
        assert_eq!(RodOracle::new(&m, 32).unwrap_err(), OracleError::Cfl(-1.5));
        let o = RodOracle::new(&presets::rod1(), 32).unwrap();
        let g = vec![1.0; o.grid.len()];
        assert!(matches!(o.step_psi(&g, 0.3 * o.dt()), Err(OracleError::OffGridTime { .. })));
        assert!(matches!(o.step_psi(&g[1..], o.dt()), Err(OracleError::Length { .. })));
        assert!(matches!(RodOracle::new(&presets::slab3d(), 32), Err(OracleError::NotARod)));
    }

    #[test]
    fn semigroup_property() {
        let o = RodOracle::new(&presets::rod1(), 64).unwrap();
        let g = o.project(|x, v| 1.0 + x * (v as f64 + 1.0));
        let (s, t) = (10.0 * o.dt(), 23.0 * o.dt());
        let a = o.step_psi(&o.step_psi(&g, s).unwrap(), t).unwrap();
        let b = o.step_psi(&g, s + t).unwrap();
        let err = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn eigen_triple_matches_dense_and_is_invariant() {
        let o = RodOracle::new(&presets::rod1(), 32).unwrap();
        let e = o.power_iteration(1e-13, 1_000_000).unwrap();
        let d = o.dense_spectrum();
        assert!((e.lambda - d.lambda).abs() < 1e-6, "{} vs {}", e.lambda, d.lambda);
        assert!(e.phi.values.iter().all(|v| *v > 0.0));
        assert!(e.phi_tilde.iter().all(|v| *v > 0.0));
        assert!((o.inner(&e.phi.values, &e.phi_tilde) - 1.0).abs() < 1e-12);
        let t = 32.0 * o.dt();
        let out = o.step_psi(&e.phi.values, t).unwrap();
        let growth = (e.lambda * t).exp();
        for (a, b) in out.iter().zip(&e.phi.values) {
            assert!((a - growth * b).abs() <= 1e-6 * growth * b.abs().max(1e-3));
        }
    }

    #[test]
    fn subcritical_sign_agrees_with_dense() {
        let mut m = presets::rod(5.0);
        for c in &mut m.cells {
            c.sigma_f = 0.2;
        }
        let o = RodOracle::new(&m, 32).unwrap();
        let e = o.power_iteration(1e-13, 1_000_000).unwrap();
        let d = o.dense_spectrum();
        assert!(e.lambda < 0.0 && d.lambda < 0.0);
        assert!((e.lambda - d.lambda).abs() < 1e-6);
    }

    #[test]
    fn spaceless_limit_of_growth_rate() {
        let m = presets::gw3_on(SpatialDomain::interval(0.0, 2000.0).unwrap());
        let o = RodOracle::new(&m, 64).unwrap();
        let e = o.power_iteration(1e-13, 1_000_000).unwrap();
        assert!((e.lambda - 0.5).abs() < 1e-3, "{}", e.lambda);
    }

    #[test]
    fn gw3_extinction_root() {
        let w = solve_w_spaceless(1.0, |s| 0.25 + 0.75 * s * s, 1e-11, 1e4).unwrap();
        assert!((w - 1.0 / 3.0).abs() < 1e-9, "{w}");
    }

    #[test]
    fn subcritical_rod_has_certain_extinction() {
        let o = RodOracle::new(&presets::rod1(), 32).unwrap();
        let f = o.solve_w(500.0, 1e-8).unwrap();
        assert!(f.w.values.iter().all(|w| (1.0 - w).abs() < 1e-6));
        assert!(!f.m1_holds(1e-6));
        assert!(f.lower_bound_holds());
    }

    #[test]
    fn extinction_on_growing_rod() {
        let o = RodOracle::new(&presets::rod5(), 160).unwrap();
        let f = o.solve_w(500.0, 1e-7).unwrap();
        assert!(f.residual < 1e-6);
        assert!(f.lower_bound_holds(), "margin {}", f.lower_bound_margin);
        assert!(f.m1_holds(1e-6));
        assert!(f.w.values.iter().all(|w| *w < 1.0));
        // mirror symmetry of the rod
        let n = o.grid.n_cells;
        for i in 0..n {
            assert!((f.w.at_cell(i, 0) - f.w.at_cell(n - 1 - i, 1)).abs() < 1e-9);
        }
        let e = o.power_iteration(1e-13, 1_000_000).unwrap();
        assert!(o.phi_over_p_max(&e, &f).is_finite());
    }

    #[test]
    fn interpolation_contract() {
        let o = RodOracle::new(&presets::rod5(), 40).unwrap();
        let f = o.solve_w(500.0, 1e-7).unwrap();
        let c = o.grid.center(7);
        assert!((f.w.eval(c, 0) - f.w.at_cell(7, 0)).abs() < 1e-15);
        assert_eq!(f.w.eval(5.0, 0), 1.0);
        assert_eq!(f.p.eval(5.0, 0), 0.0);
        assert_eq!(f.w.eval(0.0, 1), 1.0);
        assert!(f.w.eval(0.0, 0) < 1.0);
        let (lo, hi) = f.w.range(4.0, 5.0, 0);
        assert!(lo <= f.w.eval(4.3, 0) && f.w.eval(4.3, 0) <= hi && hi == 1.0);
    }

    #[test]
    fn richardson_cancels_second_order() {
        let exact = 2.0;
        let f = |h: f64| exact + 3.0 * h * h;
        assert!((richardson(f(0.1), f(0.05)) - exact).abs() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn duality(seed in 0u64..1000, steps in 1usize..40) {
            let o = RodOracle::new(&presets::rod1(), 32).unwrap();
            let e = o.power_iteration(1e-13, 1_000_000).unwrap();
            let mut rng = stream(seed, 0, "duality");
            let g: Vec<f64> = (0..o.grid.len()).map(|_| rng.random::<f64>()).collect();
            let t = steps as f64 * o.dt();
            let lhs = e.left_pairing(&o.step_psi(&g, t).unwrap());
            let rhs = (e.lambda * t).exp() * e.left_pairing(&g);
            prop_assert!((lhs - rhs).abs() <= 1e-6 * rhs.abs());
        }

        #[test]
        fn extinction_iterates_increase(steps in 1usize..60) {
            let o = RodOracle::new(&presets::rod5(), 40).unwrap();
            let mut u = vec![0.0; o.grid.len()];
            for _ in 0..steps {
                let next = o.nonlinear_step(&u);
                prop_assert!(next.iter().zip(&u).all(|(a, b)| *a >= *b - 1e-13));
                u = next;
            }
        }
    }
}
