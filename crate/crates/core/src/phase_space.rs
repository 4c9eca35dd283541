//! Physical domain `D`, velocity space `V`, straight-line advection and
//! boundary exit times.
//!
//! Positions and velocities are always carried as 3-vectors. One-dimensional
//! (rod) domains use the `x` component only and require velocities with
//! vanishing `y` and `z` components.

use nalgebra::Vector3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

/// Absolute coordinate tolerance for boundary membership.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("invalid velocity space: {0}")]
    InvalidVelocities(String),
    #[error("zero velocity has no exit time")]
    ZeroVelocity,
    #[error("negative advection time {0}")]
    NegativeTime(f64),
}

/// Open, bounded, convex spatial domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SpatialDomain {
    Interval { a: f64, b: f64 },
    Box { lo: [f64; 3], hi: [f64; 3] },
    Ball { center: [f64; 3], radius: f64 },
}

impl SpatialDomain {
    pub fn interval(a: f64, b: f64) -> Result<Self, GeometryError> {
        let d = SpatialDomain::Interval { a, b };
        d.validate()?;
        Ok(d)
    }

    pub fn cuboid(lo: [f64; 3], hi: [f64; 3]) -> Result<Self, GeometryError> {
        let d = SpatialDomain::Box { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn ball(center: [f64; 3], radius: f64) -> Result<Self, GeometryError> {
        let d = SpatialDomain::Ball { center, radius };
        d.validate()?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        match self {
            SpatialDomain::Interval { a, b } => {
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return Err(GeometryError::InvalidDomain(format!(
                        "interval requires finite a < b, got ({a}, {b})"
                    )));
                }
            }
            SpatialDomain::Box { lo, hi } => {
                for i in 0..3 {
                    if !(lo[i].is_finite() && hi[i].is_finite() && lo[i] < hi[i]) {
                        return Err(GeometryError::InvalidDomain(format!(
                            "box axis {i} requires lo < hi, got ({}, {})",
                            lo[i], hi[i]
                        )));
                    }
                }
            }
            SpatialDomain::Ball { center, radius } => {
                if !(center.iter().all(|c| c.is_finite()) && radius.is_finite() && *radius > 0.0) {
                    return Err(GeometryError::InvalidDomain(format!(
                        "ball requires finite center and radius > 0, got {radius}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Spatial dimension: 1 for intervals, 3 otherwise.
    pub fn dim(&self) -> usize {
        match self {
            SpatialDomain::Interval { .. } => 1,
            _ => 3,
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            SpatialDomain::Interval { a, b } => b - a,
            SpatialDomain::Box { lo, hi } => {
                Vec3::new(hi[0] - lo[0], hi[1] - lo[1], hi[2] - lo[2]).norm()
            }
            SpatialDomain::Ball { radius, .. } => 2.0 * radius,
        }
    }

    /// Extent of the domain along the `x` axis (the partition axis of the
    /// cross-section model).
    pub fn x_range(&self) -> (f64, f64) {
        match self {
            SpatialDomain::Interval { a, b } => (*a, *b),
            SpatialDomain::Box { lo, hi } => (lo[0], hi[0]),
            SpatialDomain::Ball { center, radius } => (center[0] - radius, center[0] + radius),
        }
    }

    /// Closed-domain membership with the boundary tolerance.
    pub fn contains_closure(&self, r: &Vec3) -> bool {
        let tol = BOUNDARY_TOL;
        match self {
            SpatialDomain::Interval { a, b } => r.x >= a - tol && r.x <= b + tol,
            SpatialDomain::Box { lo, hi } => {
                (0..3).all(|i| r[i] >= lo[i] - tol && r[i] <= hi[i] + tol)
            }
            SpatialDomain::Ball { center, radius } => {
                (r - Vec3::from(*center)).norm() <= radius + tol
            }
        }
    }

    /// Strict interior membership: every coordinate more than the tolerance
    /// away from the boundary.
    pub fn contains_interior(&self, r: &Vec3) -> bool {
        let tol = BOUNDARY_TOL;
        match self {
            SpatialDomain::Interval { a, b } => r.x > a + tol && r.x < b - tol,
            SpatialDomain::Box { lo, hi } => (0..3).all(|i| r[i] > lo[i] + tol && r[i] < hi[i] - tol),
            SpatialDomain::Ball { center, radius } => {
                (r - Vec3::from(*center)).norm() < radius - tol
            }
        }
    }

    /// `κ = inf{t > 0 : r + υt ∉ D}` in closed form.
    pub fn exit_time(&self, r: &Vec3, v: &Vec3) -> Result<f64, GeometryError> {
        let tol = BOUNDARY_TOL;
        let t = match self {
            SpatialDomain::Interval { a, b } => {
                if v.x > 0.0 {
                    (b - r.x) / v.x
                } else if v.x < 0.0 {
                    (r.x - a) / (-v.x)
                } else {
                    return Err(GeometryError::ZeroVelocity);
                }
            }
            SpatialDomain::Box { lo, hi } => {
                let mut best = f64::INFINITY;
                for i in 0..3 {
                    let ti = if v[i] > 0.0 {
                        (hi[i] - r[i]) / v[i]
                    } else if v[i] < 0.0 {
                        (lo[i] - r[i]) / v[i]
                    } else {
                        continue;
                    };
                    best = best.min(ti);
                }
                if !best.is_finite() {
                    return Err(GeometryError::ZeroVelocity);
                }
                best
            }
            SpatialDomain::Ball { center, radius } => {
                let a = v.norm_squared();
                if a == 0.0 {
                    return Err(GeometryError::ZeroVelocity);
                }
                let d = r - Vec3::from(*center);
                let b = d.dot(v);
                let c = (d.norm_squared() - radius * radius).min(0.0);
                let disc = (b * b - a * c).max(0.0);
                let sq = disc.sqrt();
                // larger root of a t^2 + 2 b t + c = 0 without cancellation
                if b > 0.0 {
                    -c / (b + sq)
                } else {
                    (-b + sq) / a
                }
            }
        };
        // within tolerance of the boundary and moving outward: already exited
        let speed = v.norm();
        if t * speed <= tol {
            return Ok(0.0);
        }
        Ok(t.max(0.0))
    }

    /// Upper bound on every exit time from a velocity of speed at least `v_min`.
    pub fn max_exit_time(&self, v_min: f64) -> f64 {
        self.diameter() / v_min
    }
}

/// Velocity space `V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum VelocitySpace {
    /// `{υ : v_min ≤ |υ| ≤ v_max}` in `dim` dimensions.
    Annulus { v_min: f64, v_max: f64, dim: usize },
    /// Finite set of velocities, addressed by index.
    Discrete { velocities: Vec<[f64; 3]> },
}

impl VelocitySpace {
    pub fn annulus(v_min: f64, v_max: f64, dim: usize) -> Result<Self, GeometryError> {
        let s = VelocitySpace::Annulus { v_min, v_max, dim };
        s.validate()?;
        Ok(s)
    }

    pub fn discrete(velocities: Vec<[f64; 3]>) -> Result<Self, GeometryError> {
        let s = VelocitySpace::Discrete { velocities };
        s.validate()?;
        Ok(s)
    }

    /// `V = {−c, +c}` along the `x` axis.
    pub fn rod(speed: f64) -> Result<Self, GeometryError> {
        Self::discrete(vec![[speed, 0.0, 0.0], [-speed, 0.0, 0.0]])
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        match self {
            VelocitySpace::Annulus { v_min, v_max, dim } => {
                if !(*v_min > 0.0 && v_min < v_max && v_max.is_finite()) {
                    return Err(GeometryError::InvalidVelocities(format!(
                        "annulus requires 0 < v_min < v_max < ∞, got [{v_min}, {v_max}]"
                    )));
                }
                if *dim != 1 && *dim != 3 {
                    return Err(GeometryError::InvalidVelocities(format!(
                        "annulus dimension must be 1 or 3, got {dim}"
                    )));
                }
            }
            VelocitySpace::Discrete { velocities } => {
                if velocities.is_empty() {
                    return Err(GeometryError::InvalidVelocities("empty velocity set".into()));
                }
                for v in velocities {
                    let s = Vec3::from(*v).norm();
                    if !(s > 0.0 && s.is_finite()) {
                        return Err(GeometryError::InvalidVelocities(format!(
                            "velocity {v:?} must have positive finite speed"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn check_compatible(&self, domain: &SpatialDomain) -> Result<(), GeometryError> {
        let dim = domain.dim();
        match self {
            VelocitySpace::Annulus { dim: d, .. } if *d != dim => Err(
                GeometryError::InvalidVelocities(format!(
                    "annulus of dimension {d} on a {dim}-dimensional domain"
                )),
            ),
            VelocitySpace::Discrete { velocities } if dim == 1 => {
                if velocities.iter().any(|v| v[1] != 0.0 || v[2] != 0.0) {
                    Err(GeometryError::InvalidVelocities(
                        "rod velocities must lie on the x axis".into(),
                    ))
                } else {
                    Ok(())
                }
            }
            _ => Ok(()),
        }
    }

    pub fn v_min(&self) -> f64 {
        match self {
            VelocitySpace::Annulus { v_min, .. } => *v_min,
            VelocitySpace::Discrete { velocities } => velocities
                .iter()
                .map(|v| Vec3::from(*v).norm())
                .fold(f64::INFINITY, f64::min),
        }
    }

    pub fn v_max(&self) -> f64 {
        match self {
            VelocitySpace::Annulus { v_max, .. } => *v_max,
            VelocitySpace::Discrete { velocities } => velocities
                .iter()
                .map(|v| Vec3::from(*v).norm())
                .fold(0.0, f64::max),
        }
    }

    /// Number of discrete velocities, `None` for a continuum.
    pub fn len(&self) -> Option<usize> {
        match self {
            VelocitySpace::Discrete { velocities } => Some(velocities.len()),
            VelocitySpace::Annulus { .. } => None,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, VelocitySpace::Discrete { .. })
    }

    pub fn velocity(&self, index: usize) -> Vec3 {
        match self {
            VelocitySpace::Discrete { velocities } => Vec3::from(velocities[index]),
            VelocitySpace::Annulus { .. } => panic!("continuous velocity space has no indices"),
        }
    }

    /// Lebesgue measure of the annulus.
    pub fn measure(&self) -> f64 {
        match self {
            VelocitySpace::Annulus { v_min, v_max, dim } => {
                if *dim == 1 {
                    2.0 * (v_max - v_min)
                } else {
                    4.0 / 3.0 * std::f64::consts::PI * (v_max.powi(3) - v_min.powi(3))
                }
            }
            VelocitySpace::Discrete { velocities } => velocities.len() as f64,
        }
    }

    /// Draw from the uniform law on the annulus.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        match self {
            VelocitySpace::Annulus { v_min, v_max, dim } => {
                if *dim == 1 {
                    let s = v_min + (v_max - v_min) * rng.random::<f64>();
                    if rng.random::<bool>() {
                        Vec3::new(s, 0.0, 0.0)
                    } else {
                        Vec3::new(-s, 0.0, 0.0)
                    }
                } else {
                    // speed density ∝ s² on [v_min, v_max]
                    let u: f64 = rng.random();
                    let a3 = v_min.powi(3);
                    let s = (a3 + u * (v_max.powi(3) - a3)).cbrt();
                    let cos_t = 2.0 * rng.random::<f64>() - 1.0;
                    let sin_t = (1.0 - cos_t * cos_t).max(0.0).sqrt();
                    let phi = 2.0 * std::f64::consts::PI * rng.random::<f64>();
                    Vec3::new(s * sin_t * phi.cos(), s * sin_t * phi.sin(), s * cos_t)
                }
            }
            VelocitySpace::Discrete { velocities } => {
                Vec3::from(velocities[rng.random_range(0..velocities.len())])
            }
        }
    }

    /// `∫_V f(υ) dυ`: exact sum for discrete sets (counting measure),
    /// composite Simpson in 1-D and a product midpoint rule in 3-D.
    pub fn integrate<F: Fn(&Vec3, Option<usize>) -> f64>(&self, f: F) -> f64 {
        match self {
            VelocitySpace::Discrete { velocities } => velocities
                .iter()
                .enumerate()
                .map(|(i, v)| f(&Vec3::from(*v), Some(i)))
                .sum(),
            VelocitySpace::Annulus { v_min, v_max, dim } => {
                if *dim == 1 {
                    let n = 2000;
                    let h = (v_max - v_min) / n as f64;
                    let mut acc = 0.0;
                    for sign in [1.0, -1.0] {
                        for i in 0..=n {
                            let s = v_min + h * i as f64;
                            let wgt = if i == 0 || i == n {
                                1.0
                            } else if i % 2 == 1 {
                                4.0
                            } else {
                                2.0
                            };
                            acc += wgt * f(&Vec3::new(sign * s, 0.0, 0.0), None);
                        }
                    }
                    acc * h / 3.0
                } else {
                    let (ns, nc, np) = (48, 48, 48);
                    let hs = (v_max - v_min) / ns as f64;
                    let hc = 2.0 / nc as f64;
                    let hp = 2.0 * std::f64::consts::PI / np as f64;
                    let mut acc = 0.0;
                    for i in 0..ns {
                        let s = v_min + hs * (i as f64 + 0.5);
                        for j in 0..nc {
                            let c = -1.0 + hc * (j as f64 + 0.5);
                            let st = (1.0 - c * c).sqrt();
                            for k in 0..np {
                                let ph = hp * (k as f64 + 0.5);
                                let v = Vec3::new(s * st * ph.cos(), s * st * ph.sin(), s * c);
                                acc += f(&v, None) * s * s;
                            }
                        }
                    }
                    acc * hs * hc * hp
                }
            }
        }
    }
}

/// Position–velocity configuration of one neutron. The cemetery state is
/// represented by `None` wherever an `Option<PhasePoint>` is returned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub r: Vec3,
    pub v: Vec3,
    /// Index into a discrete velocity space; `None` for a continuum.
    pub vi: Option<usize>,
}

impl PhasePoint {
    pub fn new(r: Vec3, v: Vec3, vi: Option<usize>) -> Self {
        Self { r, v, vi }
    }

    /// Point on a rod at `x` with discrete velocity `vi` drawn from `space`.
    pub fn on_rod(x: f64, space: &VelocitySpace, vi: usize) -> Self {
        Self { r: Vec3::new(x, 0.0, 0.0), v: space.velocity(vi), vi: Some(vi) }
    }

    /// The point reached after flying for time `s` without interaction.
    pub fn flown(&self, s: f64) -> Self {
        Self { r: self.r + self.v * s, v: self.v, vi: self.vi }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvectMode {
    /// Semantics of `U_t`: mass leaving `D` goes to the cemetery.
    KillAtBoundary,
    /// Semantics of `Û_t`: the point is frozen at `r + υ(t ∧ κ)`.
    StopAtBoundary,
}

pub fn exit_time(x: &PhasePoint, domain: &SpatialDomain) -> Result<f64, GeometryError> {
    domain.exit_time(&x.r, &x.v)
}

pub fn advect(
    x: &PhasePoint,
    t: f64,
    domain: &SpatialDomain,
    mode: AdvectMode,
) -> Result<Option<PhasePoint>, GeometryError> {
    if t < 0.0 || t.is_nan() {
        return Err(GeometryError::NegativeTime(t));
    }
    let kappa = domain.exit_time(&x.r, &x.v)?;
    Ok(match mode {
        AdvectMode::KillAtBoundary => {
            if t >= kappa {
                None
            } else {
                Some(x.flown(t))
            }
        }
        AdvectMode::StopAtBoundary => Some(x.flown(t.min(kappa))),
    })
}
