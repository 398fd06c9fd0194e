//! Tangent solvers: first and second derivatives of the control-to-state
//! map, obtained by differentiating the discrete scheme itself.
//!
//! Each tangent step solves the linearization of the implicit-Euler step
//! residual at the converged state, i.e. exactly the Newton Jacobian matrix
//! assembled by the same code path as the forward solve. That makes the
//! tangent the exact derivative of the discrete map (up to solver
//! residuals), which the adjoint then transposes.

use crate::assembly::{convection_apply, Convection};
use crate::state::{ControlVector, FlowSystem, StateError, Trajectory};

/// Solve the tangent (first-derivative) equation along a converged state
/// trajectory: per step,
///
/// ```text
/// J(u^n) [du^n; dp^n] = [M du^{n-1}/dt - sum_i dq_i^n b_i; 0],  du^0 = 0.
/// ```
pub fn solve_tangent(
    sys: &FlowSystem,
    traj: &Trajectory,
    dq: &ControlVector,
    mode: Convection,
) -> Result<Trajectory, StateError> {
    let layout = sys.layout();
    let nv = layout.n_velocity();
    let grid = traj.grid;
    let dt_inv = 1.0 / grid.dt();

    let mut tangent = Trajectory {
        grid,
        velocity: vec![vec![0.0; nv]],
        pressure: vec![vec![0.0; layout.n_pressure()]],
    };
    for n in 1..=grid.steps {
        let fact = sys.factorize_step(&traj.velocity[n], dt_inv, mode)?;
        let mut rhs = vec![0.0; layout.n_total()];
        let m_prev = sys.mass_apply(&tangent.velocity[n - 1]);
        for k in 0..nv {
            rhs[k] = dt_inv * m_prev[k];
        }
        for (i, load) in sys.boundary_loads().iter().enumerate() {
            let dqv = dq.value(i, n - 1);
            if dqv != 0.0 {
                for k in 0..nv {
                    rhs[k] -= dqv * load.values[k];
                }
            }
        }
        zero_constrained(layout, &mut rhs);
        let sol = fact.solve(&rhs)?;
        tangent.velocity.push(sol[..nv].to_vec());
        tangent.pressure.push(sol[nv..].to_vec());
    }
    Ok(tangent)
}

/// Solve the second-tangent equation for directions whose first tangents
/// are `du` and `ru`: same step operator, right-hand side
/// `-[C(du^n) ru^n + C(ru^n) du^n]` plus the mass transport, zero control
/// load. In Stokes mode the state map is linear and the result is zero.
pub fn solve_second_tangent(
    sys: &FlowSystem,
    traj: &Trajectory,
    du: &Trajectory,
    ru: &Trajectory,
    mode: Convection,
) -> Result<Trajectory, StateError> {
    let layout = sys.layout();
    let nv = layout.n_velocity();
    let grid = traj.grid;
    let dt_inv = 1.0 / grid.dt();

    let mut second = Trajectory {
        grid,
        velocity: vec![vec![0.0; nv]],
        pressure: vec![vec![0.0; layout.n_pressure()]],
    };
    if mode == Convection::Off {
        for _ in 1..=grid.steps {
            second.velocity.push(vec![0.0; nv]);
            second.pressure.push(vec![0.0; layout.n_pressure()]);
        }
        return Ok(second);
    }

    for n in 1..=grid.steps {
        let fact = sys.factorize_step(&traj.velocity[n], dt_inv, mode)?;
        let mut rhs = vec![0.0; layout.n_total()];
        let m_prev = sys.mass_apply(&second.velocity[n - 1]);
        let c_dr = convection_apply(sys.mesh(), layout, &du.velocity[n], &ru.velocity[n]);
        let c_rd = convection_apply(sys.mesh(), layout, &ru.velocity[n], &du.velocity[n]);
        for k in 0..nv {
            rhs[k] = dt_inv * m_prev[k] - c_dr[k] - c_rd[k];
        }
        zero_constrained(layout, &mut rhs);
        let sol = fact.solve(&rhs)?;
        second.velocity.push(sol[..nv].to_vec());
        second.pressure.push(sol[nv..].to_vec());
    }
    Ok(second)
}

fn zero_constrained(layout: &crate::fem::DofLayout, rhs: &mut [f64]) {
    for (k, &constrained) in layout.dirichlet.iter().enumerate() {
        if constrained {
            rhs[k] = 0.0;
        }
    }
}
