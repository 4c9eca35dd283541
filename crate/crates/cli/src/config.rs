//! Experiment configuration. Real numbers are written as decimal strings and
//! parsed once, so the file's bytes determine the run.

use nbplab::bbm_strip::StripModel;
use nbplab::cross_sections::{CellData, CrossSectionModel, FissionBall};
use nbplab::phase_space::{PhasePoint, SpatialDomain, Vec3, VelocitySpace};
use nbplab::presets;
use serde::Deserialize;
use serde_json::{Map, Number, Value};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SchemaError {
    #[error("cannot parse config: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{path}: write real numbers as decimal strings")]
    BareReal { path: String },
    #[error("{path}: non-finite number")]
    NonFinite { path: String },
    #[error("unknown experiment kind '{0}'")]
    UnknownKind(String),
    #[error("kind '{kind}' needs the '{block}' block")]
    MissingBlock { kind: String, block: &'static str },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Validate,
    Eigen,
    Extinction,
    Simulate,
    Skeleton,
    Reconstruct,
    Slln,
    Bbm,
}

impl Kind {
    pub fn parse(s: &str) -> Result<Self, SchemaError> {
        Ok(match s {
            "validate" => Kind::Validate,
            "eigen" => Kind::Eigen,
            "extinction" => Kind::Extinction,
            "simulate" => Kind::Simulate,
            "skeleton" => Kind::Skeleton,
            "reconstruct" => Kind::Reconstruct,
            "slln" => Kind::Slln,
            "bbm" => Kind::Bbm,
            other => return Err(SchemaError::UnknownKind(other.to_string())),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Kind::Validate => "validate",
            Kind::Eigen => "eigen",
            Kind::Extinction => "extinction",
            Kind::Simulate => "simulate",
            Kind::Skeleton => "skeleton",
            Kind::Reconstruct => "reconstruct",
            Kind::Slln => "slln",
            Kind::Bbm => "bbm",
        }
    }

    fn needs_model(self) -> bool {
        self != Kind::Bbm
    }

    fn needs_grid(self) -> bool {
        !matches!(self, Kind::Validate | Kind::Bbm)
    }

    fn needs_run(self) -> bool {
        matches!(self, Kind::Simulate | Kind::Skeleton | Kind::Reconstruct | Kind::Slln | Kind::Bbm)
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub domain: SpatialDomain,
    pub velocities: VelocitySpace,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum ModelBlock {
    Preset {
        preset: String,
    },
    Explicit {
        #[serde(default)]
        x_breaks: Vec<f64>,
        cells: Vec<CellData>,
        #[serde(default)]
        fission_ball: Option<FissionBall>,
    },
}

/// How the deterministic quantities (`λ*`, `φ`, `w`) are obtained.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GridBlock {
    /// Characteristic grid on a rod.
    Rod {
        cells: usize,
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default = "default_w_horizon")]
        w_horizon: f64,
    },
    /// Homogeneous branching with no spatial effect.
    Spaceless,
}

fn default_tol() -> f64 {
    1e-10
}

fn default_w_horizon() -> f64 {
    400.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StartBlock {
    pub r: Vec<f64>,
    #[serde(default)]
    pub velocity: Option<usize>,
    #[serde(default)]
    pub v: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunBlock {
    pub seed: u64,
    pub replicates: usize,
    pub horizon: f64,
    pub checkpoints: Vec<f64>,
    #[serde(default)]
    pub start: Option<StartBlock>,
    #[serde(default = "default_cap")]
    pub cap: usize,
    /// Checkpoints before this time are ignored by growth-rate fits.
    #[serde(default)]
    pub burn_in: f64,
    #[serde(default = "default_boot")]
    pub bootstrap: usize,
    /// Replicates whose final marked configuration is written out.
    #[serde(default)]
    pub snapshot_replicates: usize,
}

fn default_cap() -> usize {
    1_000_000
}

fn default_boot() -> usize {
    400
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StripBlock {
    pub width: f64,
    pub drift: f64,
    pub rate: f64,
    pub counts: Vec<f64>,
    pub dt: f64,
    pub cells: usize,
    /// Start position; defaults to the middle of the strip.
    #[serde(default)]
    pub x0: Option<f64>,
    /// Also require the solved `w` to reach the spaceless root at `K/2`.
    #[serde(default)]
    pub expect_plateau: bool,
}

impl StripBlock {
    pub fn model(&self) -> StripModel {
        StripModel { width: self.width, drift: self.drift, rate: self.rate, counts: self.counts.clone() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kind: String,
    #[serde(default)]
    model: Option<ModelBlock>,
    #[serde(default)]
    geometry: Option<Geometry>,
    #[serde(default)]
    grid: Option<GridBlock>,
    #[serde(default)]
    run: Option<RunBlock>,
    #[serde(default)]
    strip: Option<StripBlock>,
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub model: Option<CrossSectionModel>,
    pub grid: Option<GridBlock>,
    pub run: Option<RunBlock>,
    pub strip: Option<StripBlock>,
}

impl ExperimentConfig {
    pub fn model(&self) -> &CrossSectionModel {
        self.model.as_ref().expect("checked at parse time")
    }

    pub fn grid(&self) -> &GridBlock {
        self.grid.as_ref().expect("checked at parse time")
    }

    pub fn run(&self) -> &RunBlock {
        self.run.as_ref().expect("checked at parse time")
    }

    pub fn strip(&self) -> &StripBlock {
        self.strip.as_ref().expect("checked at parse time")
    }

    pub fn start(&self) -> Result<PhasePoint, SchemaError> {
        let m = self.model();
        let Some(s) = self.run.as_ref().and_then(|r| r.start.as_ref()) else {
            return Ok(presets::probe_point(m));
        };
        let mut r = [0.0; 3];
        if s.r.is_empty() || s.r.len() > 3 {
            return Err(SchemaError::Invalid("run.start.r needs 1 to 3 coordinates".into()));
        }
        r[..s.r.len()].copy_from_slice(&s.r);
        let r = Vec3::from(r);
        if !m.domain.contains_interior(&r) {
            return Err(SchemaError::Invalid("run.start.r is not inside the domain".into()));
        }
        match (s.velocity, &s.v) {
            (Some(i), None) => {
                let k = m.velocities.len().ok_or_else(|| SchemaError::Invalid("velocity index needs a discrete velocity set".into()))?;
                if i >= k {
                    return Err(SchemaError::Invalid(format!("velocity index {i} out of range")));
                }
                Ok(PhasePoint::new(r, m.velocities.velocity(i), Some(i)))
            }
            (None, Some(v)) if v.len() == 3 && !m.velocities.is_discrete() => {
                let v = Vec3::new(v[0], v[1], v[2]);
                let s = v.norm();
                if !(s >= m.velocities.v_min() && s <= m.velocities.v_max()) {
                    return Err(SchemaError::Invalid("run.start.v is not in the velocity space".into()));
                }
                Ok(PhasePoint::new(r, v, None))
            }
            _ => Err(SchemaError::Invalid("run.start needs 'velocity' (discrete) or a 3-vector 'v' (continuous)".into())),
        }
    }
}

fn preset(name: &str) -> Result<CrossSectionModel, SchemaError> {
    Ok(match name {
        "rod1" => presets::rod1(),
        "rod5" => presets::rod5(),
        "gw3" => presets::gw3_spaceless(),
        "opposed_rod" => presets::opposed_rod(),
        "slab3d" => presets::slab3d(),
        other => return Err(SchemaError::Invalid(format!("unknown model preset '{other}'"))),
    })
}

fn looks_decimal(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_digit() || matches!(c, '.' | 'e' | 'E' | '+' | '-')) && s.chars().any(|c| c.is_ascii_digit())
}

/// Replaces decimal strings by numbers and rejects bare JSON reals.
fn normalize(v: Value, path: &str) -> Result<Value, SchemaError> {
    Ok(match v {
        Value::String(s) if looks_decimal(&s) => match s.parse::<f64>() {
            Ok(x) if x.is_finite() => Value::Number(Number::from_f64(x).expect("finite")),
            Ok(_) => return Err(SchemaError::NonFinite { path: path.into() }),
            Err(_) => Value::String(s),
        },
        Value::Number(n) if !(n.is_u64() || n.is_i64()) => return Err(SchemaError::BareReal { path: path.into() }),
        Value::Array(a) => Value::Array(
            a.into_iter().enumerate().map(|(i, x)| normalize(x, &format!("{path}[{i}]"))).collect::<Result<_, _>>()?,
        ),
        Value::Object(o) => {
            let mut out = Map::new();
            for (k, x) in o {
                let x = normalize(x, &format!("{path}.{k}"))?;
                out.insert(k, x);
            }
            Value::Object(out)
        }
        other => other,
    })
}

pub fn parse(text: &str) -> Result<ExperimentConfig, SchemaError> {
    let raw: Value = serde_json::from_str(text)?;
    let raw: RawConfig = serde_json::from_value(normalize(raw, "$")?)?;
    let kind = Kind::parse(&raw.kind)?;
    let missing = |block| SchemaError::MissingBlock { kind: kind.name().into(), block };
    let model = match (raw.model, raw.geometry) {
        (Some(ModelBlock::Preset { preset: name }), None) => Some(preset(&name)?),
        (Some(ModelBlock::Preset { .. }), Some(_)) => {
            return Err(SchemaError::Invalid("a preset model carries its own geometry".into()))
        }
        (Some(ModelBlock::Explicit { x_breaks, cells, fission_ball }), Some(g)) => {
            let m = CrossSectionModel { domain: g.domain, velocities: g.velocities, x_breaks, cells, fission_ball };
            m.validate().map_err(|e| SchemaError::Invalid(format!("model: {e}")))?;
            Some(m)
        }
        (Some(ModelBlock::Explicit { .. }), None) => return Err(missing("geometry")),
        (None, _) => None,
    };
    if kind.needs_model() && model.is_none() {
        return Err(missing("model"));
    }
    if kind.needs_grid() && raw.grid.is_none() {
        return Err(missing("grid"));
    }
    if kind.needs_run() && raw.run.is_none() {
        return Err(missing("run"));
    }
    if kind == Kind::Bbm {
        let s = raw.strip.as_ref().ok_or_else(|| missing("strip"))?;
        s.model().validate().map_err(|e| SchemaError::Invalid(format!("strip: {e}")))?;
        if !(s.dt > 0.0) || s.cells < 4 {
            return Err(SchemaError::Invalid("strip: dt must be positive and cells at least 4".into()));
        }
    }
    if let Some(r) = &raw.run {
        if r.replicates < 2 {
            return Err(SchemaError::Invalid("run.replicates must be at least 2".into()));
        }
        if r.checkpoints.is_empty()
            || r.checkpoints.windows(2).any(|w| w[0] >= w[1])
            || r.checkpoints.iter().any(|t| *t < 0.0 || *t > r.horizon)
        {
            return Err(SchemaError::Invalid("run.checkpoints must be increasing and within [0, horizon]".into()));
        }
    }
    if let (Some(GridBlock::Rod { .. }), Some(m)) = (&raw.grid, &model) {
        if !matches!(m.domain, SpatialDomain::Interval { .. }) || !m.velocities.is_discrete() {
            return Err(SchemaError::Invalid("a rod grid needs an interval domain and discrete velocities".into()));
        }
    }
    let cfg = ExperimentConfig { kind, model, grid: raw.grid, run: raw.run, strip: raw.strip };
    if kind.needs_run() && kind != Kind::Bbm {
        cfg.start()?;
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decimal_strings_become_numbers() {
        let cfg = parse(r#"{"kind":"eigen","model":{"preset":"rod1"},"grid":{"type":"rod","cells":64,"tol":"1e-9"}}"#).unwrap();
        match cfg.grid() {
            GridBlock::Rod { cells, tol, .. } => {
                assert_eq!(*cells, 64);
                assert_eq!(*tol, 1e-9);
            }
            GridBlock::Spaceless => panic!(),
        }
    }

    #[test]
    fn bare_reals_and_unknown_kinds_are_rejected() {
        let e = parse(r#"{"kind":"eigen","model":{"preset":"rod1"},"grid":{"type":"rod","cells":64,"tol":1e-9}}"#);
        assert!(matches!(e, Err(SchemaError::BareReal { .. })));
        assert!(matches!(parse(r#"{"kind":"teleport"}"#), Err(SchemaError::UnknownKind(_))));
        assert!(matches!(parse(r#"{"kind":"eigen","model":{"preset":"rod1"}}"#), Err(SchemaError::MissingBlock { .. })));
    }

    #[test]
    fn explicit_model_round_trip() {
        let text = r#"{
            "kind": "validate",
            "geometry": {"domain": {"type": "interval", "a": "0", "b": "2"},
                         "velocities": {"type": "discrete", "velocities": [["1","0","0"], ["-1","0","0"]]}},
            "model": {"cells": [
                {"sigma_s": "0.5", "sigma_f": "1", "scatter": {"type": "table", "row": ["0", "1"]},
                 "fission": {"counts": {"type": "table", "probs": ["0.25", "0", "0.75"]},
                             "emission": {"type": "independent", "row": ["0.5", "0.5"]}}},
                {"sigma_s": "0.5", "sigma_f": "1", "scatter": {"type": "table", "row": ["1", "0"]},
                 "fission": {"counts": {"type": "table", "probs": ["0.25", "0", "0.75"]},
                             "emission": {"type": "independent", "row": ["0.5", "0.5"]}}}
            ]}
        }"#;
        let cfg = parse(text).unwrap();
        let mut rod = presets::rod(2.0);
        rod.fission_ball = None;
        assert_eq!(cfg.model(), &rod);
    }

    #[test]
    fn start_point_must_be_inside() {
        let text = r#"{"kind":"simulate","model":{"preset":"rod1"},"grid":{"type":"rod","cells":32},
            "run":{"seed":1,"replicates":10,"horizon":"1","checkpoints":["1"],"start":{"r":["1.5"],"velocity":0}}}"#;
        assert!(matches!(parse(text), Err(SchemaError::Invalid(_))));
    }
}
