//! Bundled reference models.

use crate::cross_sections::{
    CellData, CountLaw, CrossSectionModel, Emission, FissionLaw, ScatterKernel,
};
use crate::phase_space::{PhasePoint, SpatialDomain, Vec3, VelocitySpace};

/// Binary fission with `P(N=0) = 1/4`, `P(N=2) = 3/4`.
pub const GW3_COUNTS: [f64; 3] = [0.25, 0.0, 0.75];
/// Growth rate, extinction and survival probabilities of the spaceless
/// binary law at unit branching rate.
pub const GW3_LAMBDA: f64 = 0.5;
pub const GW3_W: f64 = 1.0 / 3.0;
pub const GW3_P: f64 = 2.0 / 3.0;

fn gw3_fission() -> FissionLaw {
    FissionLaw {
        counts: CountLaw::Table { probs: GW3_COUNTS.to_vec() },
        emission: Emission::Independent(vec![0.5, 0.5]),
        intensity: None,
    }
}

/// Two-velocity rod `(0, length)` with flip scattering at rate 0.5 and
/// binary fission at rate 1 with isotropic emission.
pub fn rod(length: f64) -> CrossSectionModel {
    let flip = |row: Vec<f64>| CellData {
        sigma_s: 0.5,
        sigma_f: 1.0,
        scatter: ScatterKernel::Table(row),
        fission: gw3_fission(),
    };
    let m = CrossSectionModel {
        domain: SpatialDomain::interval(0.0, length).expect("positive length"),
        velocities: VelocitySpace::rod(1.0).expect("unit speed"),
        x_breaks: vec![],
        // velocity 0 is +1 and flips to 1; velocity 1 is -1 and flips to 0
        cells: vec![flip(vec![0.0, 1.0]), flip(vec![1.0, 0.0])],
        fission_ball: None,
    };
    m.validate().expect("valid preset");
    m
}

/// The unit rod.
pub fn rod1() -> CrossSectionModel {
    rod(1.0)
}

/// The rod of length 5, long enough for the population to grow.
pub fn rod5() -> CrossSectionModel {
    rod(5.0)
}

/// Spaceless binary branching: no scattering, so a particle on this very
/// long rod never meets the boundary at the horizons used.
pub fn gw3_spaceless() -> CrossSectionModel {
    gw3_on(SpatialDomain::interval(-1e6, 1e6).expect("valid"))
}

/// The same branching mechanism on an arbitrary interval.
pub fn gw3_on(domain: SpatialDomain) -> CrossSectionModel {
    let cell = CellData {
        sigma_s: 0.0,
        sigma_f: 1.0,
        scatter: ScatterKernel::Table(vec![0.5, 0.5]),
        fission: gw3_fission(),
    };
    CrossSectionModel::homogeneous(domain, VelocitySpace::rod(1.0).expect("unit speed"), cell)
        .expect("valid preset")
}

/// Rod with correlated back-to-back fission pairs and up to three children.
pub fn opposed_rod() -> CrossSectionModel {
    let cell = CellData {
        sigma_s: 0.5,
        sigma_f: 1.0,
        scatter: ScatterKernel::Table(vec![0.5, 0.5]),
        fission: FissionLaw {
            counts: CountLaw::Table { probs: vec![0.2, 0.1, 0.4, 0.3] },
            emission: Emission::Opposed(vec![0.7, 0.3]),
            intensity: None,
        },
    };
    CrossSectionModel::homogeneous(
        SpatialDomain::interval(0.0, 2.0).expect("valid"),
        VelocitySpace::rod(1.0).expect("unit speed"),
        cell,
    )
    .expect("valid preset")
}

/// Box with two material slabs and a continuous velocity shell.
pub fn slab3d() -> CrossSectionModel {
    let cell = |sigma_s: f64, sigma_f: f64| CellData {
        sigma_s,
        sigma_f,
        scatter: ScatterKernel::UniformAnnulus,
        fission: FissionLaw {
            counts: CountLaw::Table { probs: vec![0.1, 0.2, 0.5, 0.2] },
            emission: Emission::UniformAnnulus,
            intensity: None,
        },
    };
    let m = CrossSectionModel {
        domain: SpatialDomain::cuboid([0.0; 3], [2.0, 1.0, 1.0]).expect("valid"),
        velocities: VelocitySpace::annulus(0.5, 1.5, 3).expect("valid"),
        x_breaks: vec![1.0],
        cells: vec![cell(1.0, 0.8), cell(0.6, 1.2)],
        fission_ball: None,
    };
    m.validate().expect("valid preset");
    m
}

/// A convenient interior point with the first velocity (or `+x` at unit
/// speed for continua).
pub fn probe_point(m: &CrossSectionModel) -> PhasePoint {
    let (a, b) = m.domain.x_range();
    let x = a + 0.37 * (b - a);
    match &m.domain {
        SpatialDomain::Interval { .. } => PhasePoint::on_rod(x, &m.velocities, 0),
        SpatialDomain::Box { lo, hi } => {
            let r = Vec3::new(x, 0.5 * (lo[1] + hi[1]), 0.5 * (lo[2] + hi[2]));
            probe_velocity(m, r)
        }
        SpatialDomain::Ball { center, .. } => probe_velocity(m, Vec3::new(x, center[1], center[2])),
    }
}

fn probe_velocity(m: &CrossSectionModel, r: Vec3) -> PhasePoint {
    if m.velocities.is_discrete() {
        PhasePoint::new(r, m.velocities.velocity(0), Some(0))
    } else {
        let s = 0.5 * (m.velocities.v_min() + m.velocities.v_max());
        PhasePoint::new(r, Vec3::new(s, 0.0, 0.0), None)
    }
}
