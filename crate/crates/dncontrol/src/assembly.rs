//! Assembly of the bilinear and trilinear forms of the mixed weak
//! formulation: mass and stiffness pairings, the divergence coupling, the
//! open-boundary load functionals, the convection term with both of its
//! linearizations, and the quartic tracking terms of the objective.
//!
//! Element loops run in deterministic order and triplets are merged by a
//! stable sort, so every operator is a reproducible function of the mesh:
//! repeated assembly is bit-identical.

use crate::fem::{eval_basis, DofLayout, QuadratureRule, Space};
use crate::mesh::Mesh;

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseOperator {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseOperator {
    /// Build from `(row, col, value)` triplets, summing duplicates.
    ///
    /// Triplets are merged after a stable sort, so the floating-point sums
    /// do not depend on hash ordering.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        order.sort_by_key(|&k| (triplets[k].0, triplets[k].1));

        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut last: Option<(usize, usize)> = None;
        for &k in &order {
            let (r, c, v) = triplets[k];
            debug_assert!(r < nrows && c < ncols);
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        let mut y = vec![0.0; self.nrows];
        for r in 0..self.nrows {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
        y
    }

    pub fn matvec_transpose(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.nrows);
        let mut y = vec![0.0; self.ncols];
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[k]] += self.values[k] * x[r];
            }
        }
        y
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        for k in self.row_ptr[r]..self.row_ptr[r + 1] {
            if self.col_idx[k] == c {
                return self.values[k];
            }
        }
        0.0
    }

    /// Sum of all entries.
    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest asymmetry `max |A - A^T|` (for square operators).
    pub fn asymmetry(&self) -> f64 {
        assert_eq!(self.nrows, self.ncols);
        let mut worst = 0.0f64;
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                worst = worst.max((self.values[k] - self.get(c, r)).abs());
            }
        }
        worst
    }
}

/// Load functional of one open boundary segment: entry `k` holds
/// `int_{segment} phi_k . n ds` over velocity test functions.
#[derive(Debug, Clone)]
pub struct BoundaryLoad {
    /// Open segment tag (1-based).
    pub segment: u32,
    /// Dense vector over velocity dofs, supported on the segment's nodes.
    pub values: Vec<f64>,
}

impl BoundaryLoad {
    /// Pairing `b^T v` with a discrete velocity field.
    pub fn dot(&self, v: &[f64]) -> f64 {
        self.values.iter().zip(v).map(|(a, b)| a * b).sum()
    }
}

/// Affine element geometry: physical basis gradients and the area scale.
struct ElemGeom {
    /// Inverse transpose of the reference-to-physical Jacobian.
    jinv_t: [[f64; 2]; 2],
    /// Absolute Jacobian determinant (twice the triangle area).
    det: f64,
    verts: [[f64; 2]; 3],
}

fn elem_geom(mesh: &Mesh, t: usize) -> ElemGeom {
    let [a, b, c] = mesh.triangles[t];
    let (pa, pb, pc) = (mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
    let j = [
        [pb[0] - pa[0], pc[0] - pa[0]],
        [pb[1] - pa[1], pc[1] - pa[1]],
    ];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let inv_det = 1.0 / det;
    // inv(J)^T = [[ J11, -J10], [-J01, J00]] / det.
    let jinv_t = [
        [j[1][1] * inv_det, -j[1][0] * inv_det],
        [-j[0][1] * inv_det, j[0][0] * inv_det],
    ];
    ElemGeom {
        jinv_t,
        det: det.abs(),
        verts: [pa, pb, pc],
    }
}

impl ElemGeom {
    #[inline]
    fn phys_grad(&self, g: [f64; 2]) -> [f64; 2] {
        [
            self.jinv_t[0][0] * g[0] + self.jinv_t[0][1] * g[1],
            self.jinv_t[1][0] * g[0] + self.jinv_t[1][1] * g[1],
        ]
    }

    #[inline]
    fn map_point(&self, p: [f64; 2]) -> [f64; 2] {
        let [pa, pb, pc] = self.verts;
        [
            pa[0] + (pb[0] - pa[0]) * p[0] + (pc[0] - pa[0]) * p[1],
            pa[1] + (pb[1] - pa[1]) * p[0] + (pc[1] - pa[1]) * p[1],
        ]
    }
}

fn scalar_nodes(layout: &DofLayout, t: usize, space: Space) -> [usize; 6] {
    match space {
        Space::P2 => layout.element_nodes[t],
        Space::P1 => {
            let n = layout.element_nodes[t];
            [n[0], n[1], n[2], usize::MAX, usize::MAX, usize::MAX]
        }
    }
}

/// Scalar mass matrix `(phi_l, phi_k)` for the chosen space.
pub fn assemble_mass(mesh: &Mesh, layout: &DofLayout, space: Space) -> SparseOperator {
    let rule = QuadratureRule::triangle_degree5();
    let table = eval_basis(space, &rule);
    let n_loc = space.n_local();
    let n = match space {
        Space::P1 => layout.n_pressure(),
        Space::P2 => layout.n_nodes(),
    };
    let mut trips = Vec::new();
    for t in 0..mesh.n_triangles() {
        let geom = elem_geom(mesh, t);
        let nodes = scalar_nodes(layout, t, space);
        let mut local = [[0.0f64; 6]; 6];
        for q in 0..rule.points.len() {
            let w = rule.weights[q] * geom.det;
            for k in 0..n_loc {
                for l in 0..n_loc {
                    local[k][l] += w * table.values[q][k] * table.values[q][l];
                }
            }
        }
        for k in 0..n_loc {
            for l in 0..n_loc {
                trips.push((nodes[k], nodes[l], local[k][l]));
            }
        }
    }
    SparseOperator::from_triplets(n, n, &trips)
}

/// Scalar stiffness matrix `(grad phi_l, grad phi_k)` for the chosen space.
pub fn assemble_stiffness(mesh: &Mesh, layout: &DofLayout, space: Space) -> SparseOperator {
    let rule = QuadratureRule::triangle_degree5();
    let table = eval_basis(space, &rule);
    let n_loc = space.n_local();
    let n = match space {
        Space::P1 => layout.n_pressure(),
        Space::P2 => layout.n_nodes(),
    };
    let mut trips = Vec::new();
    for t in 0..mesh.n_triangles() {
        let geom = elem_geom(mesh, t);
        let nodes = scalar_nodes(layout, t, space);
        let mut local = [[0.0f64; 6]; 6];
        for q in 0..rule.points.len() {
            let w = rule.weights[q] * geom.det;
            let grads: Vec<[f64; 2]> = (0..n_loc)
                .map(|i| geom.phys_grad(table.gradients[q][i]))
                .collect();
            for k in 0..n_loc {
                for l in 0..n_loc {
                    local[k][l] += w * (grads[k][0] * grads[l][0] + grads[k][1] * grads[l][1]);
                }
            }
        }
        for k in 0..n_loc {
            for l in 0..n_loc {
                trips.push((nodes[k], nodes[l], local[k][l]));
            }
        }
    }
    SparseOperator::from_triplets(n, n, &trips)
}

/// Divergence coupling `B[j, (c,k)] = (d_c N_k, psi_j)`: maps velocity
/// coefficients to the pressure-test residuals `(div u, psi_j)`.
pub fn assemble_divergence(mesh: &Mesh, layout: &DofLayout) -> SparseOperator {
    let rule = QuadratureRule::triangle_degree5();
    let p2 = eval_basis(Space::P2, &rule);
    let p1 = eval_basis(Space::P1, &rule);
    let mut trips = Vec::new();
    for t in 0..mesh.n_triangles() {
        let geom = elem_geom(mesh, t);
        let nodes = layout.element_nodes[t];
        for q in 0..rule.points.len() {
            let w = rule.weights[q] * geom.det;
            for l in 0..6 {
                let g = geom.phys_grad(p2.gradients[q][l]);
                for j in 0..3 {
                    let psi = p1.values[q][j];
                    for c in 0..2 {
                        trips.push((nodes[j], layout.vdof(nodes[l], c), w * psi * g[c]));
                    }
                }
            }
        }
    }
    SparseOperator::from_triplets(layout.n_pressure(), layout.n_velocity(), &trips)
}

/// One load vector per open segment, ordered by tag.
pub fn assemble_boundary_loads(mesh: &Mesh, layout: &DofLayout) -> Vec<BoundaryLoad> {
    let rule = QuadratureRule::edge_degree5();
    let mut loads: Vec<BoundaryLoad> = (1..=mesh.n_open_segments)
        .map(|segment| BoundaryLoad {
            segment,
            values: vec![0.0; layout.n_velocity()],
        })
        .collect();
    for (e, ([a, b], tag)) in mesh.boundary_edges.iter().enumerate() {
        if *tag == 0 {
            continue;
        }
        let load = &mut loads[*tag as usize - 1];
        let (pa, pb) = (mesh.vertices[*a], mesh.vertices[*b]);
        let len = ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
        let n = mesh.outward_normal(e);
        let nodes = layout.boundary_edge_nodes[e];
        for (p, w) in rule.points.iter().zip(&rule.weights) {
            let t = p[0];
            let shape = edge_trace_p2(t);
            for (i, &node) in nodes.iter().enumerate() {
                for c in 0..2 {
                    load.values[layout.vdof(node, c)] += w * len * shape[i] * n[c];
                }
            }
        }
    }
    loads
}

/// Trace of the P2 basis along one edge, in the order `[a, b, midpoint]`.
#[inline]
pub fn edge_trace_p2(t: f64) -> [f64; 3] {
    [(1.0 - t) * (1.0 - 2.0 * t), t * (2.0 * t - 1.0), 4.0 * t * (1.0 - t)]
}

/// Velocity and velocity-gradient evaluation helpers over one element.
struct LocalField {
    /// Local coefficient values `coeffs[c][i]` for component `c`, node `i`.
    coeffs: [[f64; 6]; 2],
}

impl LocalField {
    fn gather(layout: &DofLayout, t: usize, u: &[f64]) -> Self {
        let nodes = layout.element_nodes[t];
        let mut coeffs = [[0.0; 6]; 2];
        for i in 0..6 {
            for c in 0..2 {
                coeffs[c][i] = u[layout.vdof(nodes[i], c)];
            }
        }
        Self { coeffs }
    }

    #[inline]
    fn value(&self, shape: &[f64]) -> [f64; 2] {
        let mut v = [0.0; 2];
        for c in 0..2 {
            for i in 0..6 {
                v[c] += self.coeffs[c][i] * shape[i];
            }
        }
        v
    }

    /// Gradient `g[c][d] = d_d u_c` from physical basis gradients.
    #[inline]
    fn gradient(&self, grads: &[[f64; 2]]) -> [[f64; 2]; 2] {
        let mut g = [[0.0; 2]; 2];
        for c in 0..2 {
            for i in 0..6 {
                g[c][0] += self.coeffs[c][i] * grads[i][0];
                g[c][1] += self.coeffs[c][i] * grads[i][1];
            }
        }
        g
    }
}

/// Convection operator `C(u)`: the matrix of `w -> ((u . grad) w, v)` over
/// trial `w` and test `v`. Assembled in raw (non-skew-symmetrized) form.
pub fn assemble_convection(mesh: &Mesh, layout: &DofLayout, u: &[f64]) -> SparseOperator {
    assemble_convection_signed(mesh, layout, u, 1.0)
}

/// Convection with a sign knob. The flipped sign exists solely so the
/// verification suite can prove its identity tests detect a wrong-signed
/// convection term; production code always passes `1.0`.
#[doc(hidden)]
pub fn assemble_convection_signed(
    mesh: &Mesh,
    layout: &DofLayout,
    u: &[f64],
    sign: f64,
) -> SparseOperator {
    let rule = QuadratureRule::triangle_degree5();
    let table = eval_basis(Space::P2, &rule);
    let mut trips = Vec::new();
    for t in 0..mesh.n_triangles() {
        let geom = elem_geom(mesh, t);
        let nodes = layout.element_nodes[t];
        let field = LocalField::gather(layout, t, u);
        let mut local = [[0.0f64; 6]; 6];
        for q in 0..rule.points.len() {
            let w = rule.weights[q] * geom.det;
            let grads: Vec<[f64; 2]> = (0..6)
                .map(|i| geom.phys_grad(table.gradients[q][i]))
                .collect();
            let uq = field.value(&table.values[q]);
            for l in 0..6 {
                let adv = uq[0] * grads[l][0] + uq[1] * grads[l][1];
                for k in 0..6 {
                    local[k][l] += w * adv * table.values[q][k];
                }
            }
        }
        for k in 0..6 {
            for l in 0..6 {
                let v = sign * local[k][l];
                for c in 0..2 {
                    trips.push((layout.vdof(nodes[k], c), layout.vdof(nodes[l], c), v));
                }
            }
        }
    }
    SparseOperator::from_triplets(layout.n_velocity(), layout.n_velocity(), &trips)
}

/// Transposed convection linearization `C'(u)`: the matrix of
/// `w -> ((w . grad) u, v)`. Couples the velocity components through the
/// gradient of the background field.
pub fn assemble_convection_linearized(
    mesh: &Mesh,
    layout: &DofLayout,
    u: &[f64],
) -> SparseOperator {
    let rule = QuadratureRule::triangle_degree5();
    let table = eval_basis(Space::P2, &rule);
    let mut trips = Vec::new();
    for t in 0..mesh.n_triangles() {
        let geom = elem_geom(mesh, t);
        let nodes = layout.element_nodes[t];
        let field = LocalField::gather(layout, t, u);
        let mut local = [[[[0.0f64; 6]; 6]; 2]; 2];
        for q in 0..rule.points.len() {
            let w = rule.weights[q] * geom.det;
            let grads: Vec<[f64; 2]> = (0..6)
                .map(|i| geom.phys_grad(table.gradients[q][i]))
                .collect();
            let gu = field.gradient(&grads);
            for c in 0..2 {
                for d in 0..2 {
                    let coeff = w * gu[c][d];
                    if coeff == 0.0 {
                        continue;
                    }
                    for k in 0..6 {
                        for l in 0..6 {
                            local[c][d][k][l] += coeff * table.values[q][k] * table.values[q][l];
                        }
                    }
                }
            }
        }
        for c in 0..2 {
            for d in 0..2 {
                for k in 0..6 {
                    for l in 0..6 {
                        trips.push((
                            layout.vdof(nodes[k], c),
                            layout.vdof(nodes[l], d),
                            local[c][d][k][l],
                        ));
                    }
                }
            }
        }
    }
    SparseOperator::from_triplets(layout.n_velocity(), layout.n_velocity(), &trips)
}

/// Apply `C(u)` to `w` without forming the matrix: `((u . grad) w, phi_k)`.
pub fn convection_apply(mesh: &Mesh, layout: &DofLayout, u: &[f64], w_field: &[f64]) -> Vec<f64> {
    let rule = QuadratureRule::triangle_degree5();
    let table = eval_basis(Space::P2, &rule);
    let mut out = vec![0.0; layout.n_velocity()];
    for t in 0..mesh.n_triangles() {
        let geom = elem_geom(mesh, t);
        let nodes = layout.element_nodes[t];
        let fu = LocalField::gather(layout, t, u);
        let fw = LocalField::gather(layout, t, w_field);
        for q in 0..rule.points.len() {
            let w = rule.weights[q] * geom.det;
            let grads: Vec<[f64; 2]> = (0..6)
                .map(|i| geom.phys_grad(table.gradients[q][i]))
                .collect();
            let uq = fu.value(&table.values[q]);
            let gw = fw.gradient(&grads);
            // (u . grad) w at the quadrature point.
            let adv = [
                uq[0] * gw[0][0] + uq[1] * gw[0][1],
                uq[0] * gw[1][0] + uq[1] * gw[1][1],
            ];
            for k in 0..6 {
                let s = w * table.values[q][k];
                out[layout.vdof(nodes[k], 0)] += s * adv[0];
                out[layout.vdof(nodes[k], 1)] += s * adv[1];
            }
        }
    }
    out
}

/// Tracking residual and its derivative at one time slice.
///
/// Returns `r` with `r_k = int |e|^2 e . phi_k` and the Gateaux derivative
/// `H` of `r` in `u`, where `e = u - u_d`. Both use the degree-8 rule so
/// they are exact derivatives of the discrete quartic objective.
pub fn assemble_tracking_terms(
    mesh: &Mesh,
    layout: &DofLayout,
    u: &[f64],
    u_d: impl Fn([f64; 2]) -> [f64; 2],
) -> (Vec<f64>, SparseOperator) {
    let rule = QuadratureRule::triangle_degree8();
    let table = eval_basis(Space::P2, &rule);
    let mut r = vec![0.0; layout.n_velocity()];
    let mut trips = Vec::new();
    for t in 0..mesh.n_triangles() {
        let geom = elem_geom(mesh, t);
        let nodes = layout.element_nodes[t];
        let field = LocalField::gather(layout, t, u);
        let mut local = [[[[0.0f64; 6]; 6]; 2]; 2];
        for q in 0..rule.points.len() {
            let w = rule.weights[q] * geom.det;
            let x = geom.map_point(rule.points[q]);
            let uq = field.value(&table.values[q]);
            let ud = u_d(x);
            let e = [uq[0] - ud[0], uq[1] - ud[1]];
            let e2 = e[0] * e[0] + e[1] * e[1];
            for k in 0..6 {
                let s = w * table.values[q][k] * e2;
                r[layout.vdof(nodes[k], 0)] += s * e[0];
                r[layout.vdof(nodes[k], 1)] += s * e[1];
            }
            for c in 0..2 {
                for d in 0..2 {
                    let coeff = w * (if c == d { e2 } else { 0.0 } + 2.0 * e[c] * e[d]);
                    if coeff == 0.0 {
                        continue;
                    }
                    for k in 0..6 {
                        for l in 0..6 {
                            local[c][d][k][l] += coeff * table.values[q][k] * table.values[q][l];
                        }
                    }
                }
            }
        }
        for c in 0..2 {
            for d in 0..2 {
                for k in 0..6 {
                    for l in 0..6 {
                        trips.push((
                            layout.vdof(nodes[k], c),
                            layout.vdof(nodes[l], d),
                            local[c][d][k][l],
                        ));
                    }
                }
            }
        }
    }
    (
        r,
        SparseOperator::from_triplets(layout.n_velocity(), layout.n_velocity(), &trips),
    )
}

/// Quartic misfit `1/4 int |u - u_d|^4` at one time slice (degree-8 rule).
pub fn tracking_misfit(
    mesh: &Mesh,
    layout: &DofLayout,
    u: &[f64],
    u_d: impl Fn([f64; 2]) -> [f64; 2],
) -> f64 {
    let rule = QuadratureRule::triangle_degree8();
    let table = eval_basis(Space::P2, &rule);
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let geom = elem_geom(mesh, t);
        let field = LocalField::gather(layout, t, u);
        for q in 0..rule.points.len() {
            let w = rule.weights[q] * geom.det;
            let x = geom.map_point(rule.points[q]);
            let uq = field.value(&table.values[q]);
            let ud = u_d(x);
            let e2 = (uq[0] - ud[0]).powi(2) + (uq[1] - ud[1]).powi(2);
            total += 0.25 * w * e2 * e2;
        }
    }
    total
}

/// Second-derivative form of the misfit at one time slice:
/// `int |e|^2 |du|^2 + 2 (e . du)^2` with `e = u - u_d`.
pub fn tracking_second_form(
    mesh: &Mesh,
    layout: &DofLayout,
    u: &[f64],
    du: &[f64],
    u_d: impl Fn([f64; 2]) -> [f64; 2],
) -> f64 {
    let rule = QuadratureRule::triangle_degree8();
    let table = eval_basis(Space::P2, &rule);
    let mut total = 0.0;
    for t in 0..mesh.n_triangles() {
        let geom = elem_geom(mesh, t);
        let fu = LocalField::gather(layout, t, u);
        let fd = LocalField::gather(layout, t, du);
        for q in 0..rule.points.len() {
            let w = rule.weights[q] * geom.det;
            let x = geom.map_point(rule.points[q]);
            let uq = fu.value(&table.values[q]);
            let dq = fd.value(&table.values[q]);
            let ud = u_d(x);
            let e = [uq[0] - ud[0], uq[1] - ud[1]];
            let e2 = e[0] * e[0] + e[1] * e[1];
            let d2 = dq[0] * dq[0] + dq[1] * dq[1];
            let ed = e[0] * dq[0] + e[1] * dq[1];
            total += w * (e2 * d2 + 2.0 * ed * ed);
        }
    }
    total
}

/// Convection mode of the step operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Convection {
    /// Full Navier-Stokes: `C(u) + C'(u)` in the Jacobian.
    NavierStokes,
    /// Stokes mode: convection omitted entirely.
    Off,
}

/// Assemble the implicit-Euler step Jacobian as triplets of the coupled
/// saddle system, with wall constraints eliminated symmetrically
/// (unit diagonal on constrained rows).
///
/// Layout: velocity dofs first, then pressure. Blocks:
///
/// ```text
/// [ M/dt + K + C(u) + C'(u)   G ]   with  G = -B^T,
/// [ B                          0 ]
/// ```
///
/// This is the exact derivative of the discrete step residual, shared by
/// the Newton solver, the tangent solvers and (transposed) the adjoint.
pub fn assemble_step_jacobian(
    mesh: &Mesh,
    layout: &DofLayout,
    u: &[f64],
    dt_inv: f64,
    convection: Convection,
) -> Vec<(usize, usize, f64)> {
    let rule = QuadratureRule::triangle_degree5();
    let p2 = eval_basis(Space::P2, &rule);
    let p1 = eval_basis(Space::P1, &rule);
    let nv = layout.n_velocity();
    let dirichlet = &layout.dirichlet;
    let mut trips: Vec<(usize, usize, f64)> = Vec::with_capacity(mesh.n_triangles() * 200);

    for t in 0..mesh.n_triangles() {
        let geom = elem_geom(mesh, t);
        let nodes = layout.element_nodes[t];
        let field = LocalField::gather(layout, t, u);

        let mut scal = [[0.0f64; 6]; 6]; // M/dt + K + C(u): same for both components
        let mut cross = [[[[0.0f64; 6]; 6]; 2]; 2]; // C'(u)
        let mut div = [[[0.0f64; 2]; 6]; 3]; // div[j][l][d] = int psi_j d_d N_l

        for q in 0..rule.points.len() {
            let w = rule.weights[q] * geom.det;
            let shape = &p2.values[q];
            let grads: [[f64; 2]; 6] =
                std::array::from_fn(|i| geom.phys_grad(p2.gradients[q][i]));
            for k in 0..6 {
                for l in 0..6 {
                    scal[k][l] += w
                        * (dt_inv * shape[k] * shape[l]
                            + grads[k][0] * grads[l][0]
                            + grads[k][1] * grads[l][1]);
                }
            }
            if convection == Convection::NavierStokes {
                let uq = field.value(shape);
                let gu = field.gradient(&grads);
                for l in 0..6 {
                    let adv = uq[0] * grads[l][0] + uq[1] * grads[l][1];
                    for k in 0..6 {
                        scal[k][l] += w * adv * shape[k];
                    }
                }
                for c in 0..2 {
                    for d in 0..2 {
                        let coeff = w * gu[c][d];
                        for k in 0..6 {
                            for l in 0..6 {
                                cross[c][d][k][l] += coeff * shape[k] * shape[l];
                            }
                        }
                    }
                }
            }
            for j in 0..3 {
                let psi = p1.values[q][j];
                for l in 0..6 {
                    div[j][l][0] += w * psi * grads[l][0];
                    div[j][l][1] += w * psi * grads[l][1];
                }
            }
        }

        let mut push = |r: usize, c: usize, v: f64| {
            let r_con = r < nv && dirichlet[r];
            let c_con = c < nv && dirichlet[c];
            if !r_con && !c_con {
                trips.push((r, c, v));
            }
        };

        for k in 0..6 {
            for l in 0..6 {
                for c in 0..2 {
                    push(layout.vdof(nodes[k], c), layout.vdof(nodes[l], c), scal[k][l]);
                }
                if convection == Convection::NavierStokes {
                    for c in 0..2 {
                        for d in 0..2 {
                            push(
                                layout.vdof(nodes[k], c),
                                layout.vdof(nodes[l], d),
                                cross[c][d][k][l],
                            );
                        }
                    }
                }
            }
        }
        for j in 0..3 {
            let pdof = nv + nodes[j];
            for l in 0..6 {
                for d in 0..2 {
                    let vdof = layout.vdof(nodes[l], d);
                    push(pdof, vdof, div[j][l][d]);
                    push(vdof, pdof, -div[j][l][d]);
                }
            }
        }
    }

    for (d, &constrained) in dirichlet.iter().enumerate() {
        if constrained {
            trips.push((d, d, 1.0));
        }
    }
    trips
}
