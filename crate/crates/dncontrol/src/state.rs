//! Transient flow solver: implicit Euler in time, Newton in each step,
//! with finite-time blowup detection.
//!
//! The state equation in mixed weak form reads, per step,
//!
//! ```text
//! M (u^n - u^{n-1})/dt + K u^n + C(u^n) u^n + G p^n = -sum_i q_i^n b_i,
//! B u^n = 0,
//! ```
//!
//! where `b_i` is the normal-trace load of open segment `i` and the control
//! `q_i` is piecewise constant in time: step `n` uses the value on the
//! interval `(t_{n-1}, t_n]`. Newton runs with the exact Jacobian
//! `M/dt + K + C(u) + C'(u)` and full steps; divergence of the iteration is
//! treated as a blowup signal, not as a bug, since do-nothing boundaries
//! admit genuinely finite-time-divergent solutions.

use crate::assembly::{
    assemble_boundary_loads, assemble_divergence, assemble_mass, assemble_step_jacobian,
    assemble_stiffness, convection_apply, BoundaryLoad, Convection, SparseOperator,
};
use crate::fem::{DofLayout, Space};
use crate::linsolve::{analyze_pattern, factorize_with_pattern, FactorizedSystem, LinSolveError, SystemPattern};
use crate::mesh::{ChannelGeometry, Mesh};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StateError {
    #[error("initial data: {0}")]
    InitialData(String),
    #[error("control has {got} segments, system has {want}")]
    SegmentMismatch { got: usize, want: usize },
    #[error("control has {got} steps, time grid has {want}")]
    StepMismatch { got: usize, want: usize },
    #[error("linear solve failed: {0}")]
    LinearSolve(#[from] LinSolveError),
}

/// Time series of boundary controls: one value per open segment and step,
/// constant in space on each segment and on each interval `(t_{n-1}, t_n]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlVector {
    segments: usize,
    steps: usize,
    values: Vec<f64>,
}

impl ControlVector {
    pub fn zeros(segments: usize, steps: usize) -> Self {
        Self {
            segments,
            steps,
            values: vec![0.0; segments * steps],
        }
    }

    /// Constant-in-time control with one value per segment.
    pub fn constant(per_segment: &[f64], steps: usize) -> Self {
        let mut cv = Self::zeros(per_segment.len(), steps);
        for (i, &v) in per_segment.iter().enumerate() {
            for n in 0..steps {
                *cv.value_mut(i, n) = v;
            }
        }
        cv
    }

    pub fn from_values(segments: usize, steps: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), segments * steps);
        Self {
            segments,
            steps,
            values,
        }
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Value of segment `i` on the interval `(t_n, t_{n+1}]`, `n` 0-based.
    #[inline]
    pub fn value(&self, segment: usize, step: usize) -> f64 {
        self.values[segment * self.steps + step]
    }

    #[inline]
    pub fn value_mut(&mut self, segment: usize, step: usize) -> &mut f64 {
        &mut self.values[segment * self.steps + step]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self + scale * other`, entrywise.
    pub fn axpy(&self, scale: f64, other: &Self) -> Self {
        assert_eq!(self.values.len(), other.values.len());
        Self {
            segments: self.segments,
            steps: self.steps,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + scale * b)
                .collect(),
        }
    }

    pub fn scaled(&self, scale: f64) -> Self {
        Self {
            segments: self.segments,
            steps: self.steps,
            values: self.values.iter().map(|v| v * scale).collect(),
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm_inf(&self) -> f64 {
        self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Uniform time grid on `[0, T]` with `N` implicit-Euler steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, steps: usize) -> Self {
        assert!(t_final > 0.0 && steps >= 1);
        Self { t_final, steps }
    }

    pub fn dt(&self) -> f64 {
        self.t_final / self.steps as f64
    }

    pub fn time(&self, n: usize) -> f64 {
        self.t_final * n as f64 / self.steps as f64
    }
}

/// Per-timestep velocity and pressure coefficients, `n = 0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub velocity: Vec<Vec<f64>>,
    pub pressure: Vec<Vec<f64>>,
}

impl Trajectory {
    /// Number of completed steps (`len - 1` states beyond the initial one).
    pub fn completed_steps(&self) -> usize {
        self.velocity.len() - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlowupTrigger {
    /// Kinetic-energy norm exceeded the configured threshold.
    NormThreshold,
    /// Newton failed to converge within the iteration budget.
    NewtonDivergence,
    /// NaN or infinity appeared in the iterates.
    NonFinite,
}

impl std::fmt::Display for BlowupTrigger {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BlowupTrigger::NormThreshold => write!(f, "norm threshold"),
            BlowupTrigger::NewtonDivergence => write!(f, "newton divergence"),
            BlowupTrigger::NonFinite => write!(f, "non-finite values"),
        }
    }
}

/// Structured record of a finite-time blowup.
#[derive(Debug, Clone, PartialEq)]
pub struct BlowupReport {
    /// First time at which the solve could not continue, in `(0, T]`.
    pub t_star: f64,
    pub trigger: BlowupTrigger,
    /// `L^2` norm of the last stored finite velocity.
    pub last_finite_norm: f64,
}

/// Outcome of a nonlinear forward solve. Blowup is a result, not an error:
/// the partial trajectory up to the last finite step is retained.
#[derive(Debug, Clone)]
pub enum StateOutcome {
    Completed(Trajectory),
    Blowup {
        report: BlowupReport,
        partial: Trajectory,
    },
}

impl StateOutcome {
    pub fn trajectory(&self) -> &Trajectory {
        match self {
            StateOutcome::Completed(t) => t,
            StateOutcome::Blowup { partial, .. } => partial,
        }
    }

    pub fn blowup(&self) -> Option<&BlowupReport> {
        match self {
            StateOutcome::Completed(_) => None,
            StateOutcome::Blowup { report, .. } => Some(report),
        }
    }
}

/// Newton and blowup-detection settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Infinity-norm residual tolerance of the Newton iteration.
    pub newton_tol: f64,
    /// Maximum Newton iterations per step.
    pub newton_max: usize,
    /// `L^2` velocity norm above which the state is declared blown up.
    pub blowup_threshold: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-10,
            newton_max: 20,
            blowup_threshold: 1e6,
        }
    }
}

/// The divergence-free tangential field `w = (1/phi, x2 phi'/phi^2)`,
/// derived from the streamfunction `psi = x2/phi(x1)`. It slips along the
/// curved walls (`w . n = 0` there) and carries unit flux density through
/// the vertical ends, which makes `c * w` the canonical initial and target
/// data of the channel experiments.
#[derive(Debug, Clone, Copy)]
pub struct WField {
    geom: ChannelGeometry,
}

impl WField {
    pub fn eval(&self, x: [f64; 2]) -> [f64; 2] {
        let phi = self.geom.phi(x[0]);
        let dphi = self.geom.dphi(x[0]);
        [1.0 / phi, x[1] * dphi / (phi * phi)]
    }
}

/// Build the `w` field for a channel geometry.
pub fn make_w_field(geom: &ChannelGeometry) -> WField {
    WField { geom: *geom }
}

/// Standing discrete operators of one channel discretization.
///
/// Immutable after construction; independent solves may share it across
/// threads. The saddle-system sparsity patterns (with and without the
/// convection coupling) are analyzed once and reused by every
/// factorization.
pub struct FlowSystem {
    mesh: Mesh,
    layout: DofLayout,
    /// Vector-velocity mass matrix on interleaved dofs.
    mass_v: SparseOperator,
    /// Vector-velocity stiffness matrix.
    stiff_v: SparseOperator,
    /// Divergence coupling `B`.
    divergence: SparseOperator,
    /// Open-segment load vectors, ordered by tag.
    loads: Vec<BoundaryLoad>,
    pattern_ns: SystemPattern,
    pattern_stokes: SystemPattern,
}

/// Expand a scalar P2 operator to interleaved two-component velocity dofs.
fn vectorize(op: &SparseOperator) -> SparseOperator {
    let mut trips = Vec::with_capacity(2 * op.values.len());
    for r in 0..op.nrows {
        for k in op.row_ptr[r]..op.row_ptr[r + 1] {
            let (c, v) = (op.col_idx[k], op.values[k]);
            trips.push((2 * r, 2 * c, v));
            trips.push((2 * r + 1, 2 * c + 1, v));
        }
    }
    SparseOperator::from_triplets(2 * op.nrows, 2 * op.ncols, &trips)
}

impl FlowSystem {
    pub fn new(mesh: Mesh) -> Result<Self, StateError> {
        let layout = DofLayout::new(&mesh);
        let mass_s = assemble_mass(&mesh, &layout, Space::P2);
        let stiff_s = assemble_stiffness(&mesh, &layout, Space::P2);
        let mass_v = vectorize(&mass_s);
        let stiff_v = vectorize(&stiff_s);
        let divergence = assemble_divergence(&mesh, &layout);
        let loads = assemble_boundary_loads(&mesh, &layout);

        let zero = vec![0.0; layout.n_velocity()];
        let n = layout.n_total();
        let mut patterns = Vec::new();
        for mode in [Convection::NavierStokes, Convection::Off] {
            let trips = assemble_step_jacobian(&mesh, &layout, &zero, 1.0, mode);
            patterns.push(analyze_pattern(n, &trips)?);
        }
        let pattern_stokes = patterns.pop().unwrap();
        let pattern_ns = patterns.pop().unwrap();

        Ok(Self {
            mesh,
            layout,
            mass_v,
            stiff_v,
            divergence,
            loads,
            pattern_ns,
            pattern_stokes,
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn layout(&self) -> &DofLayout {
        &self.layout
    }

    pub fn boundary_loads(&self) -> &[BoundaryLoad] {
        &self.loads
    }

    pub fn n_open_segments(&self) -> usize {
        self.loads.len()
    }

    /// Vector-velocity mass matrix product `M u`.
    pub fn mass_apply(&self, u: &[f64]) -> Vec<f64> {
        self.mass_v.matvec(u)
    }

    /// `L^2(Omega)` norm of a velocity coefficient vector.
    pub fn velocity_l2(&self, u: &[f64]) -> f64 {
        let mu = self.mass_v.matvec(u);
        u.iter().zip(&mu).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
    }

    /// Signed flowrate through the first open segment, `Q(v) = -b_1^T v`.
    pub fn flowrate(&self, u: &[f64]) -> f64 {
        // + 0.0 canonicalizes the negative zero of an exactly zero flux.
        -self.loads[0].dot(u) + 0.0
    }

    /// Max-norm of the discrete divergence residual `B u`.
    pub fn divergence_residual(&self, u: &[f64]) -> f64 {
        self.divergence
            .matvec(u)
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Factorize the step operator at linearization point `u`.
    pub fn factorize_step(
        &self,
        u: &[f64],
        dt_inv: f64,
        mode: Convection,
    ) -> Result<FactorizedSystem, LinSolveError> {
        let trips = assemble_step_jacobian(&self.mesh, &self.layout, u, dt_inv, mode);
        let pattern = match mode {
            Convection::NavierStokes => &self.pattern_ns,
            Convection::Off => &self.pattern_stokes,
        };
        factorize_with_pattern(pattern, &trips)
    }

    /// Step residual of the coupled system, with constrained rows zeroed.
    /// Momentum rows hold `M(u - u_prev)/dt + K u + C(u)u + G p + sum q_i b_i`,
    /// pressure rows hold `B u`.
    fn step_residual(
        &self,
        u: &[f64],
        p: &[f64],
        u_prev: &[f64],
        dt_inv: f64,
        q_step: &[f64],
        mode: Convection,
    ) -> Vec<f64> {
        let nv = self.layout.n_velocity();
        let mut r = vec![0.0; self.layout.n_total()];

        let du: Vec<f64> = u.iter().zip(u_prev).map(|(a, b)| a - b).collect();
        let m_du = self.mass_v.matvec(&du);
        let k_u = self.stiff_v.matvec(u);
        let g_p = self.divergence.matvec_transpose(p);
        for k in 0..nv {
            r[k] = dt_inv * m_du[k] + k_u[k] - g_p[k];
        }
        if mode == Convection::NavierStokes {
            let c_u = convection_apply(&self.mesh, &self.layout, u, u);
            for k in 0..nv {
                r[k] += c_u[k];
            }
        }
        for (load, &q) in self.loads.iter().zip(q_step) {
            if q != 0.0 {
                for k in 0..nv {
                    r[k] += q * load.values[k];
                }
            }
        }
        let b_u = self.divergence.matvec(u);
        r[nv..].copy_from_slice(&b_u);

        for (k, &constrained) in self.layout.dirichlet.iter().enumerate() {
            if constrained {
                r[k] = 0.0;
            }
        }
        r
    }

    /// One implicit-Euler step by Newton iteration with full steps.
    fn newton_step(
        &self,
        u_prev: &[f64],
        p_prev: &[f64],
        q_step: &[f64],
        dt_inv: f64,
        cfg: &SolverConfig,
    ) -> Result<(Vec<f64>, Vec<f64>), BlowupTrigger> {
        let nv = self.layout.n_velocity();
        let mut u = u_prev.to_vec();
        let mut p = p_prev.to_vec();
        for _iter in 0..=cfg.newton_max {
            let r = self.step_residual(&u, &p, u_prev, dt_inv, q_step, Convection::NavierStokes);
            let norm = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if !norm.is_finite() {
                return Err(BlowupTrigger::NonFinite);
            }
            if norm <= cfg.newton_tol {
                return Ok((u, p));
            }
            if _iter == cfg.newton_max {
                break;
            }
            let fact = match self.factorize_step(&u, dt_inv, Convection::NavierStokes) {
                Ok(f) => f,
                Err(_) => return Err(BlowupTrigger::NewtonDivergence),
            };
            let neg_r: Vec<f64> = r.iter().map(|v| -v).collect();
            let delta = match fact.solve(&neg_r) {
                Ok(d) => d,
                Err(_) => return Err(BlowupTrigger::NewtonDivergence),
            };
            for k in 0..nv {
                u[k] += delta[k];
            }
            for k in nv..self.layout.n_total() {
                p[k - nv] += delta[k];
            }
            if u.iter().any(|v| !v.is_finite()) {
                return Err(BlowupTrigger::NonFinite);
            }
        }
        Err(BlowupTrigger::NewtonDivergence)
    }

    fn check_control(&self, q: &ControlVector, grid: &TimeGrid) -> Result<(), StateError> {
        if q.segments() != self.n_open_segments() {
            return Err(StateError::SegmentMismatch {
                got: q.segments(),
                want: self.n_open_segments(),
            });
        }
        if q.steps() != grid.steps {
            return Err(StateError::StepMismatch {
                got: q.steps(),
                want: grid.steps,
            });
        }
        if !q.is_finite() {
            return Err(StateError::InitialData("control contains non-finite values".into()));
        }
        Ok(())
    }

    /// March the nonlinear state equation. `u0` must satisfy the wall
    /// constraints; [`DofLayout::apply_dirichlet`] projects interpolated
    /// data onto the admissible set.
    pub fn solve_state(
        &self,
        q: &ControlVector,
        u0: &[f64],
        grid: &TimeGrid,
        cfg: &SolverConfig,
    ) -> Result<StateOutcome, StateError> {
        self.check_control(q, grid)?;
        if u0.len() != self.layout.n_velocity() {
            return Err(StateError::InitialData(format!(
                "u0 has {} entries, expected {}",
                u0.len(),
                self.layout.n_velocity()
            )));
        }
        if u0.iter().any(|v| !v.is_finite()) {
            return Err(StateError::InitialData("u0 contains non-finite values".into()));
        }
        for (k, &constrained) in self.layout.dirichlet.iter().enumerate() {
            if constrained && u0[k] != 0.0 {
                return Err(StateError::InitialData(format!(
                    "u0 violates the wall constraint at dof {k}; apply_dirichlet first"
                )));
            }
        }

        let dt_inv = 1.0 / grid.dt();
        let mut traj = Trajectory {
            grid: *grid,
            velocity: vec![u0.to_vec()],
            pressure: vec![vec![0.0; self.layout.n_pressure()]],
        };
        let mut last_norm = self.velocity_l2(u0);

        for n in 1..=grid.steps {
            let q_step: Vec<f64> = (0..q.segments()).map(|i| q.value(i, n - 1)).collect();
            let (u, p) = match self.newton_step(
                &traj.velocity[n - 1],
                &traj.pressure[n - 1],
                &q_step,
                dt_inv,
                cfg,
            ) {
                Ok(up) => up,
                Err(trigger) => {
                    return Ok(StateOutcome::Blowup {
                        report: BlowupReport {
                            t_star: grid.time(n),
                            trigger,
                            last_finite_norm: last_norm,
                        },
                        partial: traj,
                    })
                }
            };
            let norm = self.velocity_l2(&u);
            if !norm.is_finite() {
                return Ok(StateOutcome::Blowup {
                    report: BlowupReport {
                        t_star: grid.time(n),
                        trigger: BlowupTrigger::NonFinite,
                        last_finite_norm: last_norm,
                    },
                    partial: traj,
                });
            }
            traj.velocity.push(u);
            traj.pressure.push(p);
            if norm > cfg.blowup_threshold {
                return Ok(StateOutcome::Blowup {
                    report: BlowupReport {
                        t_star: grid.time(n),
                        trigger: BlowupTrigger::NormThreshold,
                        last_finite_norm: norm,
                    },
                    partial: traj,
                });
            }
            last_norm = norm;
        }
        Ok(StateOutcome::Completed(traj))
    }

    /// Stokes mode: convection omitted, one linear solve per step with a
    /// single factorization shared by all steps. Never blows up for finite
    /// data.
    pub fn solve_state_stokes(
        &self,
        q: &ControlVector,
        u0: &[f64],
        grid: &TimeGrid,
    ) -> Result<Trajectory, StateError> {
        self.check_control(q, grid)?;
        let nv = self.layout.n_velocity();
        let dt_inv = 1.0 / grid.dt();
        let zero = vec![0.0; nv];
        let fact = self.factorize_step(&zero, dt_inv, Convection::Off)?;

        let mut u0 = u0.to_vec();
        self.layout.apply_dirichlet(&mut u0);
        let mut traj = Trajectory {
            grid: *grid,
            velocity: vec![u0],
            pressure: vec![vec![0.0; self.layout.n_pressure()]],
        };
        for n in 1..=grid.steps {
            let u_prev = &traj.velocity[n - 1];
            // rhs_u = M u_prev / dt - sum q_i b_i, rhs_p = 0.
            let mut rhs = vec![0.0; self.layout.n_total()];
            let m_u = self.mass_v.matvec(u_prev);
            for k in 0..nv {
                rhs[k] = dt_inv * m_u[k];
            }
            for (load, i) in self.loads.iter().zip(0..) {
                let qv = q.value(i, n - 1);
                if qv != 0.0 {
                    for k in 0..nv {
                        rhs[k] -= qv * load.values[k];
                    }
                }
            }
            for (k, &constrained) in self.layout.dirichlet.iter().enumerate() {
                if constrained {
                    rhs[k] = 0.0;
                }
            }
            let sol = fact.solve(&rhs)?;
            traj.velocity.push(sol[..nv].to_vec());
            traj.pressure.push(sol[nv..].to_vec());
        }
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::generate_channel_mesh;

    fn straight_system(nx: usize, ny: usize) -> FlowSystem {
        let geom = ChannelGeometry::new(1.0, 1.0, 2.0).unwrap();
        let mesh = generate_channel_mesh(&geom, nx, ny).unwrap();
        FlowSystem::new(mesh).unwrap()
    }

    fn default_system(nx: usize, ny: usize) -> FlowSystem {
        let geom = ChannelGeometry::new(1.0, 2.0, 2.0).unwrap();
        let mesh = generate_channel_mesh(&geom, nx, ny).unwrap();
        FlowSystem::new(mesh).unwrap()
    }

    #[test]
    fn zero_data_gives_zero_trajectory() {
        let sys = straight_system(4, 4);
        let grid = TimeGrid::new(1.0, 5);
        let q = ControlVector::zeros(2, 5);
        let u0 = vec![0.0; sys.layout().n_velocity()];

        let out = sys.solve_state(&q, &u0, &grid, &SolverConfig::default()).unwrap();
        let traj = match out {
            StateOutcome::Completed(t) => t,
            _ => panic!("zero data must not blow up"),
        };
        for u in &traj.velocity {
            assert!(u.iter().all(|&v| v == 0.0));
        }
        let stokes = sys.solve_state_stokes(&q, &u0, &grid).unwrap();
        for u in &stokes.velocity {
            assert!(u.iter().all(|&v| v == 0.0));
        }
    }

    /// The Poiseuille profile `U(x2) = dq (r^2 - x2^2) / (2L)` with linear
    /// pressure is an exact discrete steady state: the profile is quadratic
    /// (in P2), the pressure linear (in P1), convection vanishes pointwise
    /// and the do-nothing data are matched exactly.
    #[test]
    fn poiseuille_steady_state_is_preserved() {
        let sys = straight_system(8, 4);
        let (dq, r, l) = (3.0, 1.0, 2.0);
        let u0 = sys
            .layout()
            .interpolate_velocity(sys.mesh(), |x| {
                [dq / (2.0 * l) * (r * r - x[1] * x[1]), 0.0]
            })
            .unwrap();
        let grid = TimeGrid::new(1.0, 10);
        let q = ControlVector::constant(&[3.0, 0.0], 10);

        let out = sys.solve_state(&q, &u0, &grid, &SolverConfig::default()).unwrap();
        let traj = match out {
            StateOutcome::Completed(t) => t,
            _ => panic!("steady state must not blow up"),
        };
        let q_exact = 2.0 * dq * r.powi(3) / (3.0 * l);
        assert!((q_exact - 1.0).abs() < 1e-15);
        for n in 0..=10 {
            let flow = sys.flowrate(&traj.velocity[n]);
            assert!(
                (flow - q_exact).abs() < 1e-9 * q_exact,
                "step {n}: flowrate {flow}"
            );
            assert!(sys.divergence_residual(&traj.velocity[n]) <= 1e-9);
        }
        // Stokes mode sees the same steady state (convection vanishes).
        let stokes = sys.solve_state_stokes(&q, &u0, &grid).unwrap();
        let flow = sys.flowrate(stokes.velocity.last().unwrap());
        assert!((flow - q_exact).abs() < 1e-9);
    }

    #[test]
    fn stokes_energy_decays_without_forcing() {
        let sys = default_system(4, 4);
        let w = make_w_field(&ChannelGeometry::new(1.0, 2.0, 2.0).unwrap());
        let mut u0 = sys
            .layout()
            .interpolate_velocity(sys.mesh(), |x| w.eval(x))
            .unwrap();
        sys.layout().apply_dirichlet(&mut u0);
        let grid = TimeGrid::new(0.5, 8);
        let q = ControlVector::zeros(2, 8);
        let traj = sys.solve_state_stokes(&q, &u0, &grid).unwrap();
        let mut prev = sys.velocity_l2(&traj.velocity[0]);
        for n in 1..=8 {
            let norm = sys.velocity_l2(&traj.velocity[n]);
            assert!(norm <= prev + 1e-12, "step {n}: {norm} > {prev}");
            prev = norm;
        }
    }

    #[test]
    fn w_field_matches_straight_channel() {
        let geom = ChannelGeometry::new(1.0, 1.0, 2.0).unwrap();
        let w = make_w_field(&geom);
        for x in [[0.0, 0.0], [1.0, 0.5], [2.0, -1.0]] {
            assert_eq!(w.eval(x), [1.0, 0.0]);
        }
    }

    #[test]
    fn w_field_is_divergence_free_and_wall_tangent() {
        let geom = ChannelGeometry::new(0.8, 2.3, 1.7).unwrap();
        let w = make_w_field(&geom);
        // Central finite differences as the independent oracle.
        let h = 1e-5;
        for &x in &[[0.3, 0.2], [0.9, -0.7], [1.5, 0.4], [1.69, -0.1]] {
            let dwx = (w.eval([x[0] + h, x[1]])[0] - w.eval([x[0] - h, x[1]])[0]) / (2.0 * h);
            let dwy = (w.eval([x[0], x[1] + h])[1] - w.eval([x[0], x[1] - h])[1]) / (2.0 * h);
            assert!((dwx + dwy).abs() < 1e-8, "div w = {} at {x:?}", dwx + dwy);
        }
        // On the wall x2 = phi(x1) the outward normal is (-phi', 1)/norm.
        for &s in &[0.2, 0.8, 1.3] {
            let x = [s, geom.phi(s)];
            let v = w.eval(x);
            let n = [-geom.dphi(s), 1.0];
            let dot = v[0] * n[0] + v[1] * n[1];
            assert!(dot.abs() < 1e-14, "w.n = {dot} at s={s}");
        }
    }

    #[test]
    fn flowrate_of_w_interpolant_is_two() {
        let geom = ChannelGeometry::new(1.0, 2.0, 2.0).unwrap();
        let sys = default_system(6, 4);
        let w = make_w_field(&geom);
        let u = sys
            .layout()
            .interpolate_velocity(sys.mesh(), |x| w.eval(x))
            .unwrap();
        // w = (1/r, *) on the left edge; the edge has length 2r.
        assert!((sys.flowrate(&u) - 2.0).abs() < 1e-13);
        // Linearity.
        let u3: Vec<f64> = u.iter().map(|v| 3.0 * v).collect();
        assert!((sys.flowrate(&u3) - 6.0).abs() < 1e-12);
    }

    #[test]
    fn trajectories_are_deterministic() {
        let sys = default_system(3, 4);
        let geom = ChannelGeometry::new(1.0, 2.0, 2.0).unwrap();
        let w = make_w_field(&geom);
        let mut u0 = sys
            .layout()
            .interpolate_velocity(sys.mesh(), |x| {
                let v = w.eval(x);
                [2.0 * v[0], 2.0 * v[1]]
            })
            .unwrap();
        sys.layout().apply_dirichlet(&mut u0);
        let grid = TimeGrid::new(0.3, 6);
        let q = ControlVector::constant(&[1.0, -0.5], 6);
        let cfg = SolverConfig::default();
        let a = sys.solve_state(&q, &u0, &grid, &cfg).unwrap();
        let b = sys.solve_state(&q, &u0, &grid, &cfg).unwrap();
        match (a, b) {
            (StateOutcome::Completed(ta), StateOutcome::Completed(tb)) => {
                assert_eq!(ta, tb);
            }
            _ => panic!("expected both solves to complete"),
        }
    }

    #[test]
    fn control_shape_mismatch_is_rejected() {
        let sys = straight_system(2, 2);
        let grid = TimeGrid::new(1.0, 4);
        let u0 = vec![0.0; sys.layout().n_velocity()];
        let q = ControlVector::zeros(1, 4);
        assert!(matches!(
            sys.solve_state(&q, &u0, &grid, &SolverConfig::default()),
            Err(StateError::SegmentMismatch { .. })
        ));
        let q = ControlVector::zeros(2, 3);
        assert!(matches!(
            sys.solve_state(&q, &u0, &grid, &SolverConfig::default()),
            Err(StateError::StepMismatch { .. })
        ));
    }
}
