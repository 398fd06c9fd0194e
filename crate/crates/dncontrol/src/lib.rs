//! Boundary-pressure control of transient channel flow.
//!
//! This crate solves the two-dimensional incompressible Navier-Stokes
//! equations on a widening channel with no-slip walls and *do-nothing*
//! (natural outflow) conditions on the open in/outflow segments, where the
//! boundary data are purely time-dependent pressure levels `q_i(t)`. On top
//! of the flow solver sits a discrete-adjoint optimal-control layer that
//! steers the `q_i` so the velocity tracks a target field in the strong
//! `L^4` space-time norm, subject to box constraints on the controls.
//!
//! Do-nothing conditions admit unbounded energy inflow, so the forward
//! problem can genuinely blow up in finite time; blowup is a structured
//! outcome here, and the optimizer treats it as an infinite objective
//! value. The narrative guide in `book/` walks through the formulation,
//! the discretization and the experiments; its code snippets are compiled
//! and run as doc-tests of this crate.

pub mod adjoint;
pub mod assembly;
pub mod fem;
pub mod linsolve;
pub mod mesh;
pub mod config;
pub mod optimal;
pub mod output;
pub mod sensitivity;
pub mod state;
pub mod verify;
