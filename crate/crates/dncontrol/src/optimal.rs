//! Reduced objective, gradient, curvature form, projection and the
//! projected-gradient optimizer.
//!
//! The reduced objective over controls is
//!
//! ```text
//! j(q) = dt sum_n [ 1/4 int |u^n - u_d(t_n)|^4
//!                   + alpha/2 sum_i (q_i^n - q_{d,i}^n)^2 ],
//! ```
//!
//! with `u = S(q)` from the forward solver. Blowup of the state is treated
//! as `j = +infinity`: trial steps that leave the solvable set simply fail
//! the line search and shrink, which keeps the optimizer inside the open
//! set of admissible controls without any explicit characterization of it.
//!
//! The gradient entries are `dt [ alpha (q_i^n - q_{d,i}^n) - b_i^T z^{n-1} ]`
//! with `z` from the adjoint solver; the sign of the boundary term is pinned
//! by the finite-difference gradient test in the verification suite.

use std::sync::Arc;

use crate::adjoint::{solve_adjoint, AdjointTrajectory};
use crate::assembly::{
    assemble_tracking_terms, tracking_misfit, tracking_second_form, Convection,
};
use crate::sensitivity::{solve_second_tangent, solve_tangent};
use crate::state::{
    BlowupReport, ControlVector, FlowSystem, SolverConfig, StateError, StateOutcome, TimeGrid,
    Trajectory,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OptimalError {
    #[error("state solve failed: {0}")]
    State(#[from] StateError),
    #[error("state blows up at t = {t_star}: the gradient is undefined outside the solvable set{context}", t_star = .report.t_star, context = .context)]
    Blowup {
        report: BlowupReport,
        context: String,
    },
    #[error("invalid objective data: {0}")]
    InvalidData(String),
}

/// Space-time target field `u_d(t, x)`.
pub type TargetFn = Arc<dyn Fn(f64, [f64; 2]) -> [f64; 2] + Send + Sync>;

/// Box bounds per open segment; entries may be infinite.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(segments: usize) -> Self {
        Self {
            lower: vec![f64::NEG_INFINITY; segments],
            upper: vec![f64::INFINITY; segments],
        }
    }

    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, OptimalError> {
        if lower.len() != upper.len() {
            return Err(OptimalError::InvalidData(
                "bound vectors differ in length".into(),
            ));
        }
        for (i, (a, b)) in lower.iter().zip(&upper).enumerate() {
            if !(a < b) {
                return Err(OptimalError::InvalidData(format!(
                    "segment {}: need lower < upper, got [{a}, {b}]",
                    i + 1
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    #[inline]
    pub fn clamp(&self, segment: usize, value: f64) -> f64 {
        value.min(self.upper[segment]).max(self.lower[segment])
    }
}

/// Objective data: target field, control offset and regularization weight.
#[derive(Clone)]
pub struct ObjectiveData {
    pub u_d: TargetFn,
    pub q_d: ControlVector,
    pub alpha: f64,
}

impl ObjectiveData {
    pub fn new(u_d: TargetFn, q_d: ControlVector, alpha: f64) -> Result<Self, OptimalError> {
        if !(alpha > 0.0) {
            return Err(OptimalError::InvalidData(format!(
                "regularization weight must be positive, got {alpha}"
            )));
        }
        Ok(Self { u_d, q_d, alpha })
    }
}

/// Objective evaluation record. `j = tracking + regularization` when the
/// state solve completes; `j` is infinite exactly when it blew up.
#[derive(Debug, Clone)]
pub struct ObjectiveReport {
    pub j: f64,
    pub tracking: f64,
    pub regularization: f64,
    pub blowup: Option<BlowupReport>,
}

/// Entrywise projection onto the box.
pub fn project(q: &ControlVector, bounds: &Bounds) -> ControlVector {
    let mut out = q.clone();
    for i in 0..q.segments() {
        for n in 0..q.steps() {
            *out.value_mut(i, n) = bounds.clamp(i, q.value(i, n));
        }
    }
    out
}

fn regularization_term(q: &ControlVector, data: &ObjectiveData, dt: f64) -> f64 {
    let mut sum = 0.0;
    for i in 0..q.segments() {
        for n in 0..q.steps() {
            let d = q.value(i, n) - data.q_d.value(i, n);
            sum += d * d;
        }
    }
    0.5 * data.alpha * dt * sum
}

fn tracking_term(sys: &FlowSystem, traj: &Trajectory, data: &ObjectiveData) -> f64 {
    let grid = traj.grid;
    let dt = grid.dt();
    let mut sum = 0.0;
    for n in 1..=grid.steps {
        let t_n = grid.time(n);
        sum += tracking_misfit(sys.mesh(), sys.layout(), &traj.velocity[n], |x| {
            (data.u_d)(t_n, x)
        });
    }
    dt * sum
}

/// Evaluate the reduced objective at `q`. Blowup yields a report with
/// `j = +infinity`, not an error.
pub fn evaluate_objective(
    sys: &FlowSystem,
    q: &ControlVector,
    u0: &[f64],
    grid: &TimeGrid,
    data: &ObjectiveData,
    cfg: &SolverConfig,
    mode: Convection,
) -> Result<ObjectiveReport, StateError> {
    Ok(evaluate_with_trajectory(sys, q, u0, grid, data, cfg, mode)?.0)
}

fn evaluate_with_trajectory(
    sys: &FlowSystem,
    q: &ControlVector,
    u0: &[f64],
    grid: &TimeGrid,
    data: &ObjectiveData,
    cfg: &SolverConfig,
    mode: Convection,
) -> Result<(ObjectiveReport, Option<Trajectory>), StateError> {
    let outcome = match mode {
        Convection::NavierStokes => sys.solve_state(q, u0, grid, cfg)?,
        Convection::Off => StateOutcome::Completed(sys.solve_state_stokes(q, u0, grid)?),
    };
    match outcome {
        StateOutcome::Completed(traj) => {
            let tracking = tracking_term(sys, &traj, data);
            let regularization = regularization_term(q, data, grid.dt());
            Ok((
                ObjectiveReport {
                    j: tracking + regularization,
                    tracking,
                    regularization,
                    blowup: None,
                },
                Some(traj),
            ))
        }
        StateOutcome::Blowup { report, .. } => Ok((
            ObjectiveReport {
                j: f64::INFINITY,
                tracking: f64::INFINITY,
                regularization: regularization_term(q, data, grid.dt()),
                blowup: Some(report),
            },
            None,
        )),
    }
}

/// Reduced gradient from a converged trajectory (runs only the adjoint).
fn gradient_from_trajectory(
    sys: &FlowSystem,
    q: &ControlVector,
    traj: &Trajectory,
    data: &ObjectiveData,
    mode: Convection,
    boundary_sign: f64,
) -> Result<(ControlVector, AdjointTrajectory), StateError> {
    let grid = traj.grid;
    let dt = grid.dt();
    let adj = solve_adjoint(sys, traj, &|t, x| (data.u_d)(t, x), mode)?;
    let mut g = ControlVector::zeros(q.segments(), q.steps());
    for n in 1..=grid.steps {
        for (i, load) in sys.boundary_loads().iter().enumerate() {
            let reg = data.alpha * (q.value(i, n - 1) - data.q_d.value(i, n - 1));
            let bz = load.dot(&adj.z[n - 1]);
            *g.value_mut(i, n - 1) = dt * (reg - boundary_sign * bz);
        }
    }
    Ok((g, adj))
}

/// Reduced gradient of `j` at `q`, together with the objective report of
/// the same forward solve. Blowup at `q` is an error here: the gradient is
/// undefined outside the solvable set.
pub fn gradient(
    sys: &FlowSystem,
    q: &ControlVector,
    u0: &[f64],
    grid: &TimeGrid,
    data: &ObjectiveData,
    cfg: &SolverConfig,
    mode: Convection,
) -> Result<(ControlVector, ObjectiveReport), OptimalError> {
    gradient_with_sign(sys, q, u0, grid, data, cfg, mode, 1.0)
}

/// Gradient with a sign knob on the adjoint boundary term. The flipped
/// sign is a negative control for the verification suite; production code
/// always uses `1.0`.
#[doc(hidden)]
#[allow(clippy::too_many_arguments)]
pub fn gradient_with_sign(
    sys: &FlowSystem,
    q: &ControlVector,
    u0: &[f64],
    grid: &TimeGrid,
    data: &ObjectiveData,
    cfg: &SolverConfig,
    mode: Convection,
    boundary_sign: f64,
) -> Result<(ControlVector, ObjectiveReport), OptimalError> {
    let (report, traj) = evaluate_with_trajectory(sys, q, u0, grid, data, cfg, mode)?;
    let Some(traj) = traj else {
        return Err(OptimalError::Blowup {
            report: report.blowup.unwrap(),
            context: String::new(),
        });
    };
    let (g, _) = gradient_from_trajectory(sys, q, &traj, data, mode, boundary_sign)?;
    Ok((g, report))
}

/// Curvature form `j''(q)(dq, dq)` by tangent and second-tangent solves.
pub fn curvature(
    sys: &FlowSystem,
    q: &ControlVector,
    dq: &ControlVector,
    u0: &[f64],
    grid: &TimeGrid,
    data: &ObjectiveData,
    cfg: &SolverConfig,
    mode: Convection,
) -> Result<f64, OptimalError> {
    let (report, traj) = evaluate_with_trajectory(sys, q, u0, grid, data, cfg, mode)?;
    let Some(traj) = traj else {
        return Err(OptimalError::Blowup {
            report: report.blowup.unwrap(),
            context: String::new(),
        });
    };
    let du = solve_tangent(sys, &traj, dq, mode)?;
    let d2u = solve_second_tangent(sys, &traj, &du, &du, mode)?;

    let dt = grid.dt();
    let mut total = 0.0;
    for n in 1..=grid.steps {
        let t_n = grid.time(n);
        let u_d = |x: [f64; 2]| (data.u_d)(t_n, x);
        // d_qq J: alpha |dq|^2 on this step.
        let mut reg = 0.0;
        for i in 0..dq.segments() {
            reg += dq.value(i, n - 1).powi(2);
        }
        total += dt * data.alpha * reg;
        // d_uu J (du, du).
        total += dt * tracking_second_form(sys.mesh(), sys.layout(), &traj.velocity[n], &du.velocity[n], u_d);
        // d_u J (d2u).
        let (r, _) = assemble_tracking_terms(sys.mesh(), sys.layout(), &traj.velocity[n], u_d);
        total += dt * r.iter().zip(&d2u.velocity[n]).map(|(a, b)| a * b).sum::<f64>();
    }
    Ok(total)
}

/// Residual of the projection fixed point
/// `q_i^n = P[q_d + (b_i^T z^{n-1}) / alpha]` in the max norm. Vanishes (to
/// optimizer tolerance) at a stationary point.
pub fn projection_residual(
    sys: &FlowSystem,
    q: &ControlVector,
    adj: &AdjointTrajectory,
    data: &ObjectiveData,
    bounds: &Bounds,
) -> f64 {
    let mut worst = 0.0f64;
    for n in 1..=q.steps() {
        for (i, load) in sys.boundary_loads().iter().enumerate() {
            let target = data.q_d.value(i, n - 1) + load.dot(&adj.z[n - 1]) / data.alpha;
            let diff = q.value(i, n - 1) - bounds.clamp(i, target);
            worst = worst.max(diff.abs());
        }
    }
    worst
}

/// Adjoint trajectory at `q` (for diagnostics such as the projection
/// residual). Requires a solvable state.
pub fn adjoint_at(
    sys: &FlowSystem,
    q: &ControlVector,
    u0: &[f64],
    grid: &TimeGrid,
    data: &ObjectiveData,
    cfg: &SolverConfig,
    mode: Convection,
) -> Result<AdjointTrajectory, OptimalError> {
    let (report, traj) = evaluate_with_trajectory(sys, q, u0, grid, data, cfg, mode)?;
    let Some(traj) = traj else {
        return Err(OptimalError::Blowup {
            report: report.blowup.unwrap(),
            context: String::new(),
        });
    };
    let (_, adj) = gradient_from_trajectory(sys, q, &traj, data, mode, 1.0)?;
    Ok(adj)
}

/// Projected-gradient optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizerConfig {
    /// Tolerance on the scaled stationarity measure `|P(q - g) - q|_inf / dt`.
    pub tol: f64,
    pub max_iter: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
    /// Backtracking shrink factor.
    pub shrink: f64,
    /// Initial trial step of the first iteration.
    pub step_init: f64,
    /// Line search gives up below this step.
    pub step_min: f64,
    /// Cap for the Barzilai-Borwein step.
    pub step_max: f64,
    /// Print one line per accepted iterate to stderr.
    pub progress: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 500,
            armijo_c: 1e-4,
            shrink: 0.5,
            step_init: 1.0,
            step_min: 1e-14,
            step_max: 1e8,
            progress: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizeStatus {
    Converged,
    MaxIterations,
    LineSearchFailed,
}

/// One row of the iteration log.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iter: usize,
    pub j: f64,
    pub tracking: f64,
    pub regularization: f64,
    pub stationarity: f64,
    pub step: f64,
    pub blowups_in_linesearch: usize,
}

#[derive(Debug, Clone)]
pub struct OptimizeResult {
    pub q: ControlVector,
    pub status: OptimizeStatus,
    pub iterations: Vec<IterationRecord>,
    pub final_objective: f64,
}

/// Projected gradient with Armijo backtracking and Barzilai-Borwein step
/// initialization.
///
/// The initial control must lie in the solvable set: if the state blows up
/// at `q0` the optimizer cannot start, and the error asks for a stabilizing
/// initial control instead.
#[allow(clippy::too_many_arguments)]
pub fn optimize(
    sys: &FlowSystem,
    q0: &ControlVector,
    u0: &[f64],
    grid: &TimeGrid,
    data: &ObjectiveData,
    bounds: &Bounds,
    opt: &OptimizerConfig,
    cfg: &SolverConfig,
    mode: Convection,
) -> Result<OptimizeResult, OptimalError> {
    let dt = grid.dt();
    let mut q = project(q0, bounds);

    let (report, traj) = evaluate_with_trajectory(sys, &q, u0, grid, data, cfg, mode)?;
    let Some(traj) = traj else {
        return Err(OptimalError::Blowup {
            report: report.blowup.unwrap(),
            context: "; supply a stabilizing initial control (an opposing pressure drop)".into(),
        });
    };
    let (mut g, _) = gradient_from_trajectory(sys, &q, &traj, data, mode, 1.0)?;
    let mut j = report.j;
    let mut tracking = report.tracking;
    let mut regularization = report.regularization;

    let mut iterations = Vec::new();
    let mut step = opt.step_init;
    let mut last_blowups = 0usize;
    let mut status = OptimizeStatus::MaxIterations;

    for iter in 0..=opt.max_iter {
        let stationarity = {
            let trial = project(&q.axpy(-1.0, &g), bounds);
            trial.axpy(-1.0, &q).norm_inf() / dt
        };
        if opt.progress {
            eprintln!(
                "iter {iter}: j = {j:.6e}, stationarity = {stationarity:.3e}, step = {step:.3e}, blowups = {last_blowups}"
            );
        }
        iterations.push(IterationRecord {
            iter,
            j,
            tracking,
            regularization,
            stationarity,
            step,
            blowups_in_linesearch: last_blowups,
        });
        if stationarity <= opt.tol {
            status = OptimizeStatus::Converged;
            break;
        }
        if iter == opt.max_iter {
            break;
        }

        // Backtracking line search over q(s) = P(q - s g).
        let mut s = step.clamp(opt.step_min, opt.step_max);
        let mut blowups = 0usize;
        let mut accepted: Option<(ControlVector, ObjectiveReport, Trajectory)> = None;
        while s >= opt.step_min {
            let q_trial = project(&q.axpy(-s, &g), bounds);
            let move_sq = {
                let d = q_trial.axpy(-1.0, &q);
                d.dot(&d)
            };
            if move_sq == 0.0 {
                break;
            }
            let (rep, tr) = evaluate_with_trajectory(sys, &q_trial, u0, grid, data, cfg, mode)?;
            if rep.j <= j - opt.armijo_c / s * move_sq {
                accepted = Some((q_trial, rep, tr.expect("finite objective has a trajectory")));
                break;
            }
            if rep.blowup.is_some() {
                blowups += 1;
            }
            s *= opt.shrink;
        }
        let Some((q_new, rep, traj_new)) = accepted else {
            status = OptimizeStatus::LineSearchFailed;
            break;
        };
        let (g_new, _) = gradient_from_trajectory(sys, &q_new, &traj_new, data, mode, 1.0)?;

        // Barzilai-Borwein step for the next iteration.
        let dq = q_new.axpy(-1.0, &q);
        let dg = g_new.axpy(-1.0, &g);
        let sy = dq.dot(&dg);
        step = if sy > 0.0 {
            (dq.dot(&dq) / sy).clamp(opt.step_min, opt.step_max)
        } else {
            (s / opt.shrink).clamp(opt.step_min, opt.step_max)
        };

        q = q_new;
        g = g_new;
        j = rep.j;
        tracking = rep.tracking;
        regularization = rep.regularization;
        last_blowups = blowups;
    }

    Ok(OptimizeResult {
        q,
        status,
        iterations,
        final_objective: j,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_channel_mesh, ChannelGeometry};
    use crate::state::make_w_field;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn target_zero() -> TargetFn {
        Arc::new(|_, _| [0.0, 0.0])
    }

    fn small_system(r: f64, big_r: f64, nx: usize, ny: usize) -> FlowSystem {
        let geom = ChannelGeometry::new(r, big_r, 2.0).unwrap();
        let mesh = generate_channel_mesh(&geom, nx, ny).unwrap();
        FlowSystem::new(mesh).unwrap()
    }

    #[test]
    fn objective_zero_at_perfectly_tracked_state() {
        let sys = small_system(1.0, 1.0, 3, 2);
        let grid = TimeGrid::new(1.0, 4);
        let q = ControlVector::zeros(2, 4);
        let u0 = vec![0.0; sys.layout().n_velocity()];
        let data = ObjectiveData::new(target_zero(), ControlVector::zeros(2, 4), 1e-2).unwrap();
        let rep = evaluate_objective(
            &sys,
            &q,
            &u0,
            &grid,
            &data,
            &SolverConfig::default(),
            Convection::NavierStokes,
        )
        .unwrap();
        assert_eq!(rep.j, 0.0);
    }

    #[test]
    fn objective_constant_misfit_quarter() {
        // Unit-area straight channel (r = 1/4, L = 2), u = 0, u_d = (1, 0):
        // tracking = 1/4 * area * T = 1/4.
        let sys = small_system(0.25, 0.25, 4, 2);
        let grid = TimeGrid::new(1.0, 5);
        let q = ControlVector::zeros(2, 5);
        let u0 = vec![0.0; sys.layout().n_velocity()];
        let data = ObjectiveData::new(
            Arc::new(|_, _| [1.0, 0.0]),
            ControlVector::zeros(2, 5),
            1e-2,
        )
        .unwrap();
        let rep = evaluate_objective(
            &sys,
            &q,
            &u0,
            &grid,
            &data,
            &SolverConfig::default(),
            Convection::Off,
        )
        .unwrap();
        assert!((rep.tracking - 0.25).abs() < 1e-12, "tracking {}", rep.tracking);
        assert_eq!(rep.regularization, 0.0);
    }

    #[test]
    fn gradient_reduces_to_regularization_when_adjoint_vanishes() {
        // u0 = 0, q = 0 gives u == 0; with u_d == 0 the adjoint is zero and
        // g = dt * alpha * (q - q_d).
        let sys = small_system(1.0, 2.0, 3, 2);
        let grid = TimeGrid::new(1.0, 4);
        let q = ControlVector::zeros(2, 4);
        let u0 = vec![0.0; sys.layout().n_velocity()];
        let q_d = ControlVector::constant(&[5.0, -3.0], 4);
        let data = ObjectiveData::new(target_zero(), q_d.clone(), 0.1).unwrap();
        let (g, rep) = gradient(
            &sys,
            &q,
            &u0,
            &grid,
            &data,
            &SolverConfig::default(),
            Convection::NavierStokes,
        )
        .unwrap();
        assert!(rep.blowup.is_none());
        let dt = grid.dt();
        for i in 0..2 {
            for n in 0..4 {
                let expect = dt * 0.1 * (0.0 - q_d.value(i, n));
                assert!(
                    (g.value(i, n) - expect).abs() < 1e-14,
                    "segment {i} step {n}"
                );
            }
        }
    }

    fn fd_setup() -> (FlowSystem, TimeGrid, ControlVector, Vec<f64>, ObjectiveData) {
        let geom = ChannelGeometry::new(1.0, 2.0, 2.0).unwrap();
        let mesh = generate_channel_mesh(&geom, 4, 4).unwrap();
        let sys = FlowSystem::new(mesh).unwrap();
        let grid = TimeGrid::new(0.5, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let q = ControlVector::from_values(
            2,
            5,
            (0..10).map(|_| rng.gen_range(-2.0..2.0)).collect(),
        );
        let w = make_w_field(&geom);
        let mut u0 = sys
            .layout()
            .interpolate_velocity(sys.mesh(), |x| w.eval(x))
            .unwrap();
        sys.layout().apply_dirichlet(&mut u0);
        let u_d: TargetFn = Arc::new(move |t, x| {
            let v = w.eval(x);
            [2.0 * v[0] + 0.1 * t, 2.0 * v[1]]
        });
        let data = ObjectiveData::new(u_d, ControlVector::constant(&[1.0, 0.0], 5), 1e-2).unwrap();
        (sys, grid, q, u0, data)
    }

    fn fd_gradient_check(mode: Convection) -> f64 {
        let (sys, grid, q, u0, data) = fd_setup();
        let cfg = SolverConfig::default();
        let (g, _) = gradient(&sys, &q, &u0, &grid, &data, &cfg, mode).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let dq = ControlVector::from_values(
            2,
            grid.steps,
            (0..2 * grid.steps).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let pairing = g.dot(&dq);
        let mut best = f64::INFINITY;
        for k in 2..=7 {
            let eps = 10f64.powi(-k);
            let jp = evaluate_objective(&sys, &q.axpy(eps, &dq), &u0, &grid, &data, &cfg, mode)
                .unwrap()
                .j;
            let jm = evaluate_objective(&sys, &q.axpy(-eps, &dq), &u0, &grid, &data, &cfg, mode)
                .unwrap()
                .j;
            let fd = (jp - jm) / (2.0 * eps);
            best = best.min((fd - pairing).abs() / pairing.abs().max(1e-300));
        }
        best
    }

    #[test]
    fn gradient_matches_finite_differences_navier_stokes() {
        let best = fd_gradient_check(Convection::NavierStokes);
        assert!(best <= 1e-6, "best relative FD error {best}");
    }

    #[test]
    fn gradient_matches_finite_differences_stokes() {
        let best = fd_gradient_check(Convection::Off);
        assert!(best <= 1e-6, "best relative FD error {best}");
    }

    #[test]
    fn flipped_boundary_sign_fails_the_gradient_test() {
        let (sys, grid, q, u0, data) = fd_setup();
        let cfg = SolverConfig::default();
        let (g, _) = gradient_with_sign(
            &sys,
            &q,
            &u0,
            &grid,
            &data,
            &cfg,
            Convection::NavierStokes,
            -1.0,
        )
        .unwrap();
        let dq = ControlVector::constant(&[1.0, 0.5], grid.steps);
        let pairing = g.dot(&dq);
        let eps = 1e-4;
        let jp = evaluate_objective(&sys, &q.axpy(eps, &dq), &u0, &grid, &data, &cfg, Convection::NavierStokes)
            .unwrap()
            .j;
        let jm = evaluate_objective(&sys, &q.axpy(-eps, &dq), &u0, &grid, &data, &cfg, Convection::NavierStokes)
            .unwrap()
            .j;
        let fd = (jp - jm) / (2.0 * eps);
        assert!((fd - pairing).abs() / fd.abs().max(1e-300) > 1e-3);
    }

    #[test]
    fn curvature_trivial_cases() {
        let (sys, grid, q, u0, data) = fd_setup();
        let cfg = SolverConfig::default();
        let dq = ControlVector::zeros(2, grid.steps);
        let c = curvature(&sys, &q, &dq, &u0, &grid, &data, &cfg, Convection::NavierStokes).unwrap();
        assert_eq!(c, 0.0);

        // Perfectly tracked zero state: all tracking factors carry e = 0 and
        // the curvature collapses to the regularization quadratic.
        let sys = small_system(1.0, 1.0, 3, 2);
        let grid = TimeGrid::new(1.0, 4);
        let q = ControlVector::zeros(2, 4);
        let u0 = vec![0.0; sys.layout().n_velocity()];
        let data = ObjectiveData::new(target_zero(), ControlVector::zeros(2, 4), 0.3).unwrap();
        let dq = ControlVector::constant(&[1.0, -2.0], 4);
        let c = curvature(&sys, &q, &dq, &u0, &grid, &data, &cfg, Convection::NavierStokes).unwrap();
        let expect = 0.3 * grid.dt() * dq.dot(&dq);
        assert!((c - expect).abs() < 1e-12, "{c} vs {expect}");
    }

    #[test]
    fn curvature_matches_fd_of_gradient() {
        let (sys, grid, q, u0, data) = fd_setup();
        let cfg = SolverConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let dq = ControlVector::from_values(
            2,
            grid.steps,
            (0..2 * grid.steps).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );
        let c = curvature(&sys, &q, &dq, &u0, &grid, &data, &cfg, Convection::NavierStokes).unwrap();
        let mut best = f64::INFINITY;
        for eps in [1e-2, 1e-3, 1e-4] {
            let (gp, _) = gradient(&sys, &q.axpy(eps, &dq), &u0, &grid, &data, &cfg, Convection::NavierStokes).unwrap();
            let (gm, _) = gradient(&sys, &q.axpy(-eps, &dq), &u0, &grid, &data, &cfg, Convection::NavierStokes).unwrap();
            let fd = gp.axpy(-1.0, &gm).dot(&dq) / (2.0 * eps);
            best = best.min((c - fd).abs() / c.abs().max(1e-300));
        }
        assert!(best <= 1e-4, "best relative error {best}");
    }

    #[test]
    fn projection_examples() {
        let bounds = Bounds::new(vec![0.0], vec![1.0]).unwrap();
        let q = ControlVector::constant(&[2.0], 3);
        let p = project(&q, &bounds);
        assert!(p.as_slice().iter().all(|&v| v == 1.0));

        let unbounded = Bounds::unbounded(1);
        let q = ControlVector::constant(&[-7.5], 3);
        assert_eq!(project(&q, &unbounded), q);

        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let bounds = Bounds::new(vec![-0.5, 0.0], vec![0.5, 2.0]).unwrap();
        let q = ControlVector::from_values(
            2,
            6,
            (0..12).map(|_| rng.gen_range(-3.0..3.0)).collect(),
        );
        let once = project(&q, &bounds);
        assert_eq!(project(&once, &bounds), once);
    }

    #[test]
    fn bounds_validation() {
        assert!(Bounds::new(vec![0.0], vec![0.0]).is_err());
        assert!(Bounds::new(vec![1.0], vec![-1.0]).is_err());
        assert!(Bounds::new(vec![f64::NEG_INFINITY], vec![0.0]).is_ok());
    }

    #[test]
    fn optimizer_stops_at_global_minimum_immediately() {
        let sys = small_system(1.0, 1.0, 3, 2);
        let grid = TimeGrid::new(1.0, 4);
        let q0 = ControlVector::zeros(2, 4);
        let u0 = vec![0.0; sys.layout().n_velocity()];
        let data = ObjectiveData::new(target_zero(), ControlVector::zeros(2, 4), 1e-2).unwrap();
        let result = optimize(
            &sys,
            &q0,
            &u0,
            &grid,
            &data,
            &Bounds::unbounded(2),
            &OptimizerConfig::default(),
            &SolverConfig::default(),
            Convection::NavierStokes,
        )
        .unwrap();
        assert_eq!(result.status, OptimizeStatus::Converged);
        assert_eq!(result.iterations.len(), 1);
        assert_eq!(result.final_objective, 0.0);
    }

    #[test]
    fn optimizer_decreases_objective_monotonically() {
        let (sys, grid, _, u0, data) = fd_setup();
        let q0 = ControlVector::zeros(2, grid.steps);
        let opt = OptimizerConfig {
            tol: 1e-4,
            max_iter: 60,
            ..Default::default()
        };
        let result = optimize(
            &sys,
            &q0,
            &u0,
            &grid,
            &data,
            &Bounds::unbounded(2),
            &opt,
            &SolverConfig::default(),
            Convection::NavierStokes,
        )
        .unwrap();
        let js: Vec<f64> = result.iterations.iter().map(|r| r.j).collect();
        for k in 1..js.len() {
            assert!(js[k] < js[k - 1], "j not strictly decreasing: {js:?}");
        }
        assert!(result.final_objective < js[0]);

        // At an interior stationary point the projection fixed point holds.
        if result.status == OptimizeStatus::Converged {
            let adj = adjoint_at(
                &sys,
                &result.q,
                &u0,
                &grid,
                &data,
                &SolverConfig::default(),
                Convection::NavierStokes,
            )
            .unwrap();
            let res = projection_residual(&sys, &result.q, &adj, &data, &Bounds::unbounded(2));
            assert!(res <= 1e-2, "projection residual {res}");
        }
    }

    #[test]
    fn optimizer_respects_bounds() {
        let (sys, grid, _, u0, data) = fd_setup();
        let q0 = ControlVector::zeros(2, grid.steps);
        let bounds = Bounds::new(vec![-0.2, -0.2], vec![0.2, 0.2]).unwrap();
        let opt = OptimizerConfig {
            tol: 1e-5,
            max_iter: 40,
            ..Default::default()
        };
        let result = optimize(
            &sys,
            &q0,
            &u0,
            &grid,
            &data,
            &bounds,
            &opt,
            &SolverConfig::default(),
            Convection::NavierStokes,
        )
        .unwrap();
        for i in 0..2 {
            for n in 0..grid.steps {
                let v = result.q.value(i, n);
                assert!((-0.2..=0.2).contains(&v), "q[{i}][{n}] = {v}");
            }
        }
    }
}
