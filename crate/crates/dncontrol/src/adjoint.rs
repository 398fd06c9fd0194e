//! Backward-in-time discrete adjoint solver.
//!
//! Each backward step solves the transpose of the tangent step system. With
//! the multiplier of forward step `n` stored as `z^{n-1}`, the recursion is
//!
//! ```text
//! J(u^n)^T [z^{n-1}; y^{n-1}] = [M z^n / dt + r(u^n, u_d^n); 0],  z^N = 0,
//! ```
//!
//! where `r` is the tracking residual `int |u-u_d|^2 (u-u_d) . phi_k`. The
//! time-index pairing between `z` and the boundary loads in the reduced
//! gradient is defined by this transposition, not chosen by hand; the
//! adjoint-tangent duality identity (tested here for every `N`) pins it.
//! The sign convention matches the continuous adjoint equation with
//! `+tracking` data and terminal condition `z(T) = 0`, so the reduced
//! gradient carries `-b_i^T z` and the projection formula reads
//! `q_i = P[q_d + (z, n)_i / alpha]`.

use crate::assembly::{assemble_tracking_terms, Convection};
use crate::state::{FlowSystem, StateError, TimeGrid, Trajectory};

/// Adjoint velocity/pressure multipliers, `z[n]` for `n = 0..=N` with
/// `z[N] = 0` exactly.
#[derive(Debug, Clone)]
pub struct AdjointTrajectory {
    pub grid: TimeGrid,
    pub z: Vec<Vec<f64>>,
    pub y: Vec<Vec<f64>>,
}

/// Solve the adjoint equation backward along a converged trajectory.
///
/// `u_d(t, x)` is the tracking target; it is sampled at the step times
/// `t_n` with the same quadrature as the objective, so the resulting
/// reduced gradient is the exact derivative of the discrete objective.
pub fn solve_adjoint(
    sys: &FlowSystem,
    traj: &Trajectory,
    u_d: &impl Fn(f64, [f64; 2]) -> [f64; 2],
    mode: Convection,
) -> Result<AdjointTrajectory, StateError> {
    let layout = sys.layout();
    let nv = layout.n_velocity();
    let grid = traj.grid;
    let dt_inv = 1.0 / grid.dt();
    let n_steps = grid.steps;

    let mut z = vec![vec![0.0; nv]; n_steps + 1];
    let mut y = vec![vec![0.0; layout.n_pressure()]; n_steps + 1];

    for n in (1..=n_steps).rev() {
        let t_n = grid.time(n);
        let fact = sys.factorize_step(&traj.velocity[n], dt_inv, mode)?;
        let (tracking, _) =
            assemble_tracking_terms(sys.mesh(), layout, &traj.velocity[n], |x| u_d(t_n, x));
        let mut rhs = vec![0.0; layout.n_total()];
        let m_z = sys.mass_apply(&z[n]);
        for k in 0..nv {
            rhs[k] = dt_inv * m_z[k] + tracking[k];
        }
        for (k, &constrained) in layout.dirichlet.iter().enumerate() {
            if constrained {
                rhs[k] = 0.0;
            }
        }
        let sol = fact.solve_transposed(&rhs)?;
        z[n - 1] = sol[..nv].to_vec();
        y[n - 1] = sol[nv..].to_vec();
    }
    Ok(AdjointTrajectory { grid, z, y })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::assemble_tracking_terms;
    use crate::mesh::{generate_channel_mesh, ChannelGeometry};
    use crate::sensitivity::solve_tangent;
    use crate::state::{ControlVector, SolverConfig, StateOutcome};
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn system() -> FlowSystem {
        let geom = ChannelGeometry::new(1.0, 2.0, 2.0).unwrap();
        let mesh = generate_channel_mesh(&geom, 3, 4).unwrap();
        FlowSystem::new(mesh).unwrap()
    }

    fn solve(sys: &FlowSystem, q: &ControlVector, grid: &TimeGrid) -> Trajectory {
        let u0 = vec![0.0; sys.layout().n_velocity()];
        match sys
            .solve_state(q, &u0, grid, &SolverConfig::default())
            .unwrap()
        {
            StateOutcome::Completed(t) => t,
            _ => panic!("blowup in test data"),
        }
    }

    #[test]
    fn perfect_tracking_gives_zero_adjoint() {
        let sys = system();
        let grid = TimeGrid::new(0.5, 5);
        let q = ControlVector::constant(&[1.0, 0.0], grid.steps);
        let traj = solve(&sys, &q, &grid);

        // u_d == u at the discrete level is impossible to express as an
        // analytic field in general, so check the zero-data special case:
        // q = 0, u0 = 0 gives u == 0, and u_d == 0 tracks it perfectly.
        let zero_q = ControlVector::zeros(2, grid.steps);
        let zero_traj = solve(&sys, &zero_q, &grid);
        let adj = solve_adjoint(
            &sys,
            &zero_traj,
            &|_, _| [0.0, 0.0],
            Convection::NavierStokes,
        )
        .unwrap();
        for zn in &adj.z {
            assert!(zn.iter().all(|&v| v == 0.0));
        }

        // Terminal condition holds for any data.
        let adj = solve_adjoint(
            &sys,
            &traj,
            &|t, x| [x[1] * t, -0.3 * x[0]],
            Convection::NavierStokes,
        )
        .unwrap();
        assert!(adj.z[grid.steps].iter().all(|&v| v == 0.0));
    }

    /// Discrete adjoint-tangent duality: for any direction `dq`,
    ///
    /// `dt * sum_n <r(u^n), du^n> = -dt * sum_{i,n} dq_i^n (b_i^T z^{n-1})`,
    ///
    /// the discrete counterpart of integration by parts in time. Holding
    /// for N = 1 rules out off-by-one indexing.
    #[test]
    fn adjoint_tangent_duality() {
        let sys = system();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for steps in [1usize, 2, 10] {
            let grid = TimeGrid::new(0.4, steps);
            let values = (0..2 * steps).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let q = ControlVector::from_values(2, steps, values);
            let traj = solve(&sys, &q, &grid);

            let u_d = |t: f64, x: [f64; 2]| {
                [(3.0 * x[0] + t).sin(), (2.0 * x[1] - 0.5 * t).cos() * 0.5]
            };
            let adj = solve_adjoint(&sys, &traj, &u_d, Convection::NavierStokes).unwrap();

            let dq_vals: Vec<f64> = (0..2 * steps).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let dq = ControlVector::from_values(2, steps, dq_vals);
            let du = solve_tangent(&sys, &traj, &dq, Convection::NavierStokes).unwrap();

            let dt = grid.dt();
            let mut lhs = 0.0;
            for n in 1..=steps {
                let t_n = grid.time(n);
                let (r, _) = assemble_tracking_terms(sys.mesh(), sys.layout(), &traj.velocity[n], |x| {
                    u_d(t_n, x)
                });
                lhs += dt * r.iter().zip(&du.velocity[n]).map(|(a, b)| a * b).sum::<f64>();
            }
            let mut rhs = 0.0;
            for n in 1..=steps {
                for (i, load) in sys.boundary_loads().iter().enumerate() {
                    rhs -= dt * dq.value(i, n - 1) * load.dot(&adj.z[n - 1]);
                }
            }
            let scale = lhs.abs().max(rhs.abs()).max(1e-300);
            assert!(
                (lhs - rhs).abs() / scale <= 1e-10,
                "N={steps}: lhs {lhs} vs rhs {rhs}, rel {}",
                (lhs - rhs).abs() / scale
            );
        }
    }

    #[test]
    fn adjoint_is_linear_in_tracking_residual() {
        // With the state fixed, z depends linearly on the tracking data:
        // compare z for u_d and for the reflected misfit. Doubling the
        // misfit e = u - u_d is not expressible by scaling u_d alone, so
        // check linearity through the zero-state trajectory where u = 0 and
        // r(0, u_d) is exactly cubic in u_d: scaling u_d by s scales r by
        // s^3, hence z by s^3.
        let sys = system();
        let grid = TimeGrid::new(0.3, 3);
        let q = ControlVector::zeros(2, grid.steps);
        let traj = solve(&sys, &q, &grid);
        let base = |t: f64, x: [f64; 2]| [x[1] + t, 0.5 * x[0]];
        let scaled = |t: f64, x: [f64; 2]| {
            let v = base(t, x);
            [2.0 * v[0], 2.0 * v[1]]
        };
        let z1 = solve_adjoint(&sys, &traj, &base, Convection::NavierStokes).unwrap();
        let z2 = solve_adjoint(&sys, &traj, &scaled, Convection::NavierStokes).unwrap();
        for n in 0..=grid.steps {
            for k in 0..z1.z[n].len() {
                let (a, b) = (8.0 * z1.z[n][k], z2.z[n][k]);
                assert!(
                    (a - b).abs() <= 1e-10 * a.abs().max(1e-12),
                    "step {n} dof {k}: {a} vs {b}"
                );
            }
        }
    }
}
