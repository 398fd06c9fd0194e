//! Run configuration: a flat `key = value` document with a fixed schema.
//!
//! Unknown keys are errors (they are almost always typos in experiment
//! configs), and every numeric field is validated on parse. A minimal
//! document is empty (all defaults); a full one looks like
//!
//! ```text
//! # widening channel, tracking 10 w
//! geometry.r = 1
//! geometry.R = 2
//! geometry.L = 2
//! mesh.nx = 16
//! mesh.ny = 8
//! time.T = 1
//! time.N = 100
//! physics.mode = ns
//! physics.newton_tol = 1e-10
//! physics.newton_max = 20
//! physics.blowup_threshold = 1e6
//! initial.u0 = scaled_w(15)
//! control.q = 0,0
//! objective.u_d = scaled_w(10)
//! objective.q_d = 50,0
//! objective.alpha = 1e-2
//! bounds.lower = -inf,-inf
//! bounds.upper = inf,inf
//! optimizer.q0 = 0,50
//! optimizer.tol = 1e-6
//! optimizer.max_iter = 500
//! output.vtk_every = 0
//! ```

use std::f64::consts::TAU;
use std::path::PathBuf;
use std::sync::Arc;

use crate::assembly::Convection;
use crate::mesh::{ChannelGeometry, MeshError};
use crate::optimal::{Bounds, OptimalError, OptimizerConfig, TargetFn};
use crate::state::{make_w_field, SolverConfig};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("field {field}: {msg}")]
    Invalid { field: &'static str, msg: String },
    #[error(transparent)]
    Geometry(#[from] MeshError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Built-in catalog of analytic space-time fields, used for both the
/// tracking target `u_d` and the initial velocity (evaluated at `t = 0`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TargetSpec {
    /// Identically zero.
    Zero,
    /// `c * w`.
    ScaledW(f64),
    /// `a * sin(2 pi t) * w`.
    SineW(f64),
    /// `zeta(t) * w` with the near-blowup flowrate profile
    /// `zeta(t) = 5 (1/(0.9 - min(t, 0.82)) - 1/0.9) + 15 min(t, 0.82)`,
    /// finite on `[0, 1]` since `min(t, 0.82) <= 0.82 < 0.9`.
    ZetaW,
    /// Exact Poiseuille profile for a pressure drop `dq` (straight channel).
    Poiseuille(f64),
}

/// The capped-growth flowrate profile of the blowup-prevention experiment.
pub fn zeta(t: f64) -> f64 {
    let m = t.min(0.82);
    5.0 * (1.0 / (0.9 - m) - 1.0 / 0.9) + 15.0 * m
}

impl TargetSpec {
    pub fn parse(text: &str) -> Result<Self, String> {
        let text = text.trim();
        if text == "zero" {
            return Ok(TargetSpec::Zero);
        }
        if text == "zeta_w" {
            return Ok(TargetSpec::ZetaW);
        }
        for (name, make) in [
            ("scaled_w", TargetSpec::ScaledW as fn(f64) -> TargetSpec),
            ("sine_w", TargetSpec::SineW as fn(f64) -> TargetSpec),
            ("poiseuille", TargetSpec::Poiseuille as fn(f64) -> TargetSpec),
        ] {
            if let Some(rest) = text.strip_prefix(name) {
                let inner = rest
                    .strip_prefix('(')
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| format!("expected {name}(<number>), got `{text}`"))?;
                let value: f64 = inner
                    .trim()
                    .parse()
                    .map_err(|e| format!("bad number in `{text}`: {e}"))?;
                return Ok(make(value));
            }
        }
        Err(format!(
            "unknown field `{text}`; available: zero, scaled_w(c), sine_w(a), zeta_w, poiseuille(dq)"
        ))
    }

    /// Instantiate the analytic field on a concrete geometry.
    pub fn instantiate(&self, geom: &ChannelGeometry) -> TargetFn {
        let w = make_w_field(geom);
        match *self {
            TargetSpec::Zero => Arc::new(|_, _| [0.0, 0.0]),
            TargetSpec::ScaledW(c) => Arc::new(move |_, x| {
                let v = w.eval(x);
                [c * v[0], c * v[1]]
            }),
            TargetSpec::SineW(a) => Arc::new(move |t, x| {
                let s = a * (TAU * t).sin();
                let v = w.eval(x);
                [s * v[0], s * v[1]]
            }),
            TargetSpec::ZetaW => Arc::new(move |t, x| {
                let s = zeta(t);
                let v = w.eval(x);
                [s * v[0], s * v[1]]
            }),
            TargetSpec::Poiseuille(dq) => {
                let (r, l) = (geom.inlet_halfwidth(), geom.length());
                Arc::new(move |_, x| [dq / (2.0 * l) * (r * r - x[1] * x[1]), 0.0])
            }
        }
    }
}

/// Parsed and validated run configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub r: f64,
    pub big_r: f64,
    pub length: f64,
    pub nx: usize,
    pub ny: usize,
    pub t_final: f64,
    pub n_steps: usize,
    pub mode: Convection,
    pub newton_tol: f64,
    pub newton_max: usize,
    pub blowup_threshold: f64,
    pub u0: TargetSpec,
    /// Constant control for `solve`, one value per open segment.
    pub q: Vec<f64>,
    /// Alternative control source: a `time,q1,q2` CSV file.
    pub q_file: Option<PathBuf>,
    pub u_d: TargetSpec,
    /// Constant control offset `q_d`, one value per open segment.
    pub q_d: Vec<f64>,
    pub alpha: f64,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Initial control of the optimizer, one value per open segment.
    pub q0: Option<Vec<f64>>,
    pub opt_tol: f64,
    pub opt_max_iter: usize,
    pub vtk_every: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            r: 1.0,
            big_r: 2.0,
            length: 2.0,
            nx: 16,
            ny: 8,
            t_final: 1.0,
            n_steps: 100,
            mode: Convection::NavierStokes,
            newton_tol: 1e-10,
            newton_max: 20,
            blowup_threshold: 1e6,
            u0: TargetSpec::Zero,
            q: vec![0.0, 0.0],
            q_file: None,
            u_d: TargetSpec::Zero,
            q_d: vec![0.0, 0.0],
            alpha: 1e-2,
            lower: vec![f64::NEG_INFINITY, f64::NEG_INFINITY],
            upper: vec![f64::INFINITY, f64::INFINITY],
            q0: None,
            opt_tol: 1e-6,
            opt_max_iter: 500,
            vtk_every: 0,
        }
    }
}

fn parse_f64(v: &str) -> Result<f64, String> {
    match v.trim() {
        "inf" | "+inf" => Ok(f64::INFINITY),
        "-inf" => Ok(f64::NEG_INFINITY),
        other => other.parse().map_err(|e| format!("bad number `{other}`: {e}")),
    }
}

fn parse_list(v: &str) -> Result<Vec<f64>, String> {
    v.split(',').map(parse_f64).collect()
}

impl RunConfig {
    pub fn parse(text: &str, path: &str) -> Result<Self, ConfigError> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| ConfigError::Parse {
                path: path.to_string(),
                line: idx + 1,
                msg,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(format!("expected `key = value`, got `{line}`")))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "geometry.r" => cfg.r = parse_f64(value).map_err(err)?,
                "geometry.R" => cfg.big_r = parse_f64(value).map_err(err)?,
                "geometry.L" => cfg.length = parse_f64(value).map_err(err)?,
                "mesh.nx" => cfg.nx = value.parse().map_err(|e| err(format!("{e}")))?,
                "mesh.ny" => cfg.ny = value.parse().map_err(|e| err(format!("{e}")))?,
                "time.T" => cfg.t_final = parse_f64(value).map_err(err)?,
                "time.N" => cfg.n_steps = value.parse().map_err(|e| err(format!("{e}")))?,
                "physics.mode" => {
                    cfg.mode = match value {
                        "ns" => Convection::NavierStokes,
                        "stokes" => Convection::Off,
                        other => return Err(err(format!("mode must be ns or stokes, got `{other}`"))),
                    }
                }
                "physics.newton_tol" => cfg.newton_tol = parse_f64(value).map_err(err)?,
                "physics.newton_max" => {
                    cfg.newton_max = value.parse().map_err(|e| err(format!("{e}")))?
                }
                "physics.blowup_threshold" => {
                    cfg.blowup_threshold = parse_f64(value).map_err(err)?
                }
                "initial.u0" => cfg.u0 = TargetSpec::parse(value).map_err(err)?,
                "control.q" => cfg.q = parse_list(value).map_err(err)?,
                "control.file" => cfg.q_file = Some(PathBuf::from(value)),
                "objective.u_d" => cfg.u_d = TargetSpec::parse(value).map_err(err)?,
                "objective.q_d" => cfg.q_d = parse_list(value).map_err(err)?,
                "objective.alpha" => cfg.alpha = parse_f64(value).map_err(err)?,
                "bounds.lower" => cfg.lower = parse_list(value).map_err(err)?,
                "bounds.upper" => cfg.upper = parse_list(value).map_err(err)?,
                "optimizer.q0" => cfg.q0 = Some(parse_list(value).map_err(err)?),
                "optimizer.tol" => cfg.opt_tol = parse_f64(value).map_err(err)?,
                "optimizer.max_iter" => {
                    cfg.opt_max_iter = value.parse().map_err(|e| err(format!("{e}")))?
                }
                "output.vtk_every" => {
                    cfg.vtk_every = value.parse().map_err(|e| err(format!("{e}")))?
                }
                unknown => return Err(err(format!("unknown key `{unknown}`"))),
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &'static str, msg: String| ConfigError::Invalid { field, msg };
        for (field, v) in [
            ("geometry.r", self.r),
            ("geometry.R", self.big_r),
            ("geometry.L", self.length),
            ("time.T", self.t_final),
            ("objective.alpha", self.alpha),
            ("physics.newton_tol", self.newton_tol),
            ("physics.blowup_threshold", self.blowup_threshold),
            ("optimizer.tol", self.opt_tol),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(bad(field, format!("must be positive and finite, got {v}")));
            }
        }
        if self.n_steps < 1 {
            return Err(bad("time.N", "need at least one step".into()));
        }
        if self.nx < 1 {
            return Err(bad("mesh.nx", "need at least one cell".into()));
        }
        if self.ny < 2 || self.ny % 2 != 0 {
            return Err(bad("mesh.ny", format!("need even ny >= 2, got {}", self.ny)));
        }
        for (field, list) in [
            ("control.q", &self.q),
            ("objective.q_d", &self.q_d),
            ("bounds.lower", &self.lower),
            ("bounds.upper", &self.upper),
        ] {
            if list.len() != 2 {
                return Err(bad(
                    field,
                    format!("expected one value per open segment (2), got {}", list.len()),
                ));
            }
        }
        if let Some(q0) = &self.q0 {
            if q0.len() != 2 {
                return Err(bad(
                    "optimizer.q0",
                    format!("expected one value per open segment (2), got {}", q0.len()),
                ));
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> Result<ChannelGeometry, ConfigError> {
        Ok(ChannelGeometry::new(self.r, self.big_r, self.length)?)
    }

    pub fn time_grid(&self) -> crate::state::TimeGrid {
        crate::state::TimeGrid::new(self.t_final, self.n_steps)
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            newton_tol: self.newton_tol,
            newton_max: self.newton_max,
            blowup_threshold: self.blowup_threshold,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            tol: self.opt_tol,
            max_iter: self.opt_max_iter,
            progress: std::env::var_os("DNCONTROL_PROGRESS").is_some(),
            ..Default::default()
        }
    }

    pub fn bounds(&self) -> Result<Bounds, OptimalError> {
        Bounds::new(self.lower.clone(), self.upper.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_from_empty_document() {
        let cfg = RunConfig::parse("", "test").unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn full_document_round_trips() {
        let text = "\
# comment
geometry.r = 1.0
geometry.R = 2.0
mesh.nx = 8
mesh.ny = 4
time.N = 10
physics.mode = stokes
initial.u0 = scaled_w(15)
objective.u_d = sine_w(50)
objective.alpha = 1e-1
bounds.lower = -inf,0
bounds.upper = inf,100
optimizer.q0 = 0,50
";
        let cfg = RunConfig::parse(text, "test").unwrap();
        assert_eq!(cfg.nx, 8);
        assert_eq!(cfg.mode, Convection::Off);
        assert_eq!(cfg.u0, TargetSpec::ScaledW(15.0));
        assert_eq!(cfg.u_d, TargetSpec::SineW(50.0));
        assert_eq!(cfg.lower, vec![f64::NEG_INFINITY, 0.0]);
        assert_eq!(cfg.q0, Some(vec![0.0, 50.0]));
    }

    #[test]
    fn unknown_keys_are_rejected_with_line_numbers() {
        let err = RunConfig::parse("time.N = 10\nmesh.nz = 3\n", "cfg").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("cfg:2"), "{msg}");
        assert!(msg.contains("mesh.nz"), "{msg}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(RunConfig::parse("geometry.r = 0", "t").is_err());
        assert!(RunConfig::parse("mesh.ny = 3", "t").is_err());
        assert!(RunConfig::parse("time.N = 0", "t").is_err());
        assert!(RunConfig::parse("physics.mode = euler", "t").is_err());
        assert!(RunConfig::parse("objective.u_d = spiral(3)", "t").is_err());
    }

    #[test]
    fn zeta_profile_is_finite_and_capped() {
        for k in 0..=100 {
            let t = k as f64 / 100.0;
            assert!(zeta(t).is_finite());
        }
        assert_eq!(zeta(0.0), 0.0);
        // Constant after the cap time.
        assert_eq!(zeta(0.82), zeta(0.95));
        assert_eq!(zeta(0.82), zeta(1.0));
    }

    #[test]
    fn target_specs_evaluate() {
        let geom = ChannelGeometry::new(1.0, 1.0, 2.0).unwrap();
        let f = TargetSpec::ScaledW(3.0).instantiate(&geom);
        assert_eq!(f(0.3, [1.0, 0.5]), [3.0, 0.0]);
        let f = TargetSpec::SineW(2.0).instantiate(&geom);
        assert!(f(0.0, [1.0, 0.0])[0].abs() < 1e-15);
        let f = TargetSpec::Poiseuille(3.0).instantiate(&geom);
        assert!((f(0.0, [0.5, 0.0])[0] - 0.75).abs() < 1e-15);
        assert_eq!(f(0.0, [0.5, 1.0])[0], 0.0);
    }
}
