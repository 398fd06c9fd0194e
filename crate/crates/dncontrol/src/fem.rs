//! Taylor-Hood mixed finite-element space.
//!
//! Velocity lives in continuous piecewise quadratics (P2, nodes at vertices
//! and edge midpoints, two components per node), pressure in continuous
//! piecewise linears (P1, nodes at vertices). The pair is inf-sup stable, so
//! no pressure stabilization is needed; with open boundary segments present
//! the pressure is unique without a mean constraint.
//!
//! All reference-element tables are immutable after construction and safe to
//! share across threads.

use crate::mesh::{Mesh, TAG_WALL};

/// Quadrature rule on the reference triangle `{(x,y): x,y >= 0, x+y <= 1}`
/// or on the reference edge `[0,1]`.
///
/// Weights are positive and sum to the reference measure (1/2 for the
/// triangle, 1 for the edge).
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Points: `(xi, eta)` for triangles, `(t, 0)` for edges.
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    /// Polynomial degree integrated exactly.
    pub exactness: usize,
}

impl QuadratureRule {
    /// 7-point degree-5 rule on the reference triangle.
    pub fn triangle_degree5() -> Self {
        let s15 = 15.0f64.sqrt();
        let a = (6.0 - s15) / 21.0;
        let b = (6.0 + s15) / 21.0;
        let wa = (155.0 - s15) / 1200.0;
        let wb = (155.0 + s15) / 1200.0;
        let mut points = vec![[1.0 / 3.0, 1.0 / 3.0]];
        let mut weights = vec![9.0 / 40.0];
        for (c, w) in [(a, wa), (b, wb)] {
            points.extend_from_slice(&[[c, c], [1.0 - 2.0 * c, c], [c, 1.0 - 2.0 * c]]);
            weights.extend_from_slice(&[w, w, w]);
        }
        // Normalized weights sum to 1; scale to the reference area 1/2.
        for w in &mut weights {
            *w *= 0.5;
        }
        Self {
            points,
            weights,
            exactness: 5,
        }
    }

    /// 25-point degree-8 rule: 5x5 Gauss-Legendre under the Duffy map
    /// `(u, v) -> (u, v(1-u))` with Jacobian `1-u`.
    ///
    /// A total-degree-`d` polynomial pulls back to degree `d+1` in `u` and
    /// `d` in `v`, so five Gauss points per direction (exact through degree
    /// 9) integrate quartics of quadratic fields exactly.
    pub fn triangle_degree8() -> Self {
        let (gp, gw) = gauss_legendre_5();
        let mut points = Vec::with_capacity(25);
        let mut weights = Vec::with_capacity(25);
        for i in 0..5 {
            // Map from [-1,1] to [0,1].
            let u = 0.5 * (gp[i] + 1.0);
            let wu = 0.5 * gw[i];
            for j in 0..5 {
                let v = 0.5 * (gp[j] + 1.0);
                let wv = 0.5 * gw[j];
                points.push([u, v * (1.0 - u)]);
                weights.push(wu * wv * (1.0 - u));
            }
        }
        Self {
            points,
            weights,
            exactness: 8,
        }
    }

    /// 3-point Gauss rule on `[0,1]`, exact through degree 5.
    pub fn edge_degree5() -> Self {
        let c = (3.0f64 / 5.0).sqrt();
        Self {
            points: vec![[0.5 * (1.0 - c), 0.0], [0.5, 0.0], [0.5 * (1.0 + c), 0.0]],
            weights: vec![5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0],
            exactness: 5,
        }
    }

    /// 5-point Gauss rule on `[0,1]`, exact through degree 9. Used by the
    /// boundary-quadrature oracles, whose integrands reach degree 6.
    pub fn edge_degree9() -> Self {
        let (gp, gw) = gauss_legendre_5();
        Self {
            points: gp.iter().map(|&x| [0.5 * (x + 1.0), 0.0]).collect(),
            weights: gw.iter().map(|&w| 0.5 * w).collect(),
            exactness: 9,
        }
    }
}

/// Nodes and weights of the 5-point Gauss-Legendre rule on `[-1,1]`,
/// in closed form.
fn gauss_legendre_5() -> ([f64; 5], [f64; 5]) {
    let t1 = (5.0 - 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
    let t2 = (5.0 + 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
    let w0 = 128.0 / 225.0;
    let w1 = (322.0 + 13.0 * 70.0f64.sqrt()) / 900.0;
    let w2 = (322.0 - 13.0 * 70.0f64.sqrt()) / 900.0;
    ([-t2, -t1, 0.0, t1, t2], [w2, w1, w0, w1, w2])
}

/// Scalar space selector for the two Taylor-Hood components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    P1,
    P2,
}

impl Space {
    pub fn n_local(self) -> usize {
        match self {
            Space::P1 => 3,
            Space::P2 => 6,
        }
    }
}

/// Values of the P1 basis at a reference point.
pub fn p1_values(p: [f64; 2]) -> [f64; 3] {
    [1.0 - p[0] - p[1], p[0], p[1]]
}

/// Reference gradients of the P1 basis (constant).
pub fn p1_gradients() -> [[f64; 2]; 3] {
    [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]]
}

/// Values of the P2 basis at a reference point.
///
/// Local order: vertex functions 0..3, then midpoint functions of the edges
/// opposite each vertex (edge 0 = midpoint of (v1,v2), etc.).
pub fn p2_values(p: [f64; 2]) -> [f64; 6] {
    let l = p1_values(p);
    [
        l[0] * (2.0 * l[0] - 1.0),
        l[1] * (2.0 * l[1] - 1.0),
        l[2] * (2.0 * l[2] - 1.0),
        4.0 * l[1] * l[2],
        4.0 * l[2] * l[0],
        4.0 * l[0] * l[1],
    ]
}

/// Reference gradients of the P2 basis at a reference point.
pub fn p2_gradients(p: [f64; 2]) -> [[f64; 2]; 6] {
    let l = p1_values(p);
    let g = p1_gradients();
    let mut out = [[0.0; 2]; 6];
    for v in 0..3 {
        for d in 0..2 {
            out[v][d] = (4.0 * l[v] - 1.0) * g[v][d];
        }
    }
    for (m, (i, j)) in [(3, (1, 2)), (4, (2, 0)), (5, (0, 1))] {
        for d in 0..2 {
            out[m][d] = 4.0 * (l[j] * g[i][d] + l[i] * g[j][d]);
        }
    }
    out
}

/// Basis values and reference gradients tabulated at the points of a rule.
#[derive(Debug, Clone)]
pub struct BasisTable {
    pub space: Space,
    /// `values[q][i]`: basis function `i` at quadrature point `q`.
    pub values: Vec<Vec<f64>>,
    /// `gradients[q][i]`: reference gradient of basis `i` at point `q`.
    pub gradients: Vec<Vec<[f64; 2]>>,
}

/// Tabulate a scalar basis at the points of `rule`.
pub fn eval_basis(space: Space, rule: &QuadratureRule) -> BasisTable {
    let mut values = Vec::with_capacity(rule.points.len());
    let mut gradients = Vec::with_capacity(rule.points.len());
    for &p in &rule.points {
        match space {
            Space::P1 => {
                values.push(p1_values(p).to_vec());
                gradients.push(p1_gradients().to_vec());
            }
            Space::P2 => {
                values.push(p2_values(p).to_vec());
                gradients.push(p2_gradients(p).to_vec());
            }
        }
    }
    BasisTable {
        space,
        values,
        gradients,
    }
}

/// Degree-of-freedom maps for the Taylor-Hood pair on one mesh.
///
/// Scalar P2 nodes are numbered vertices first, then one node per mesh edge.
/// Velocity dofs interleave the two components: `vdof(node, c) = 2*node + c`.
/// Pressure dofs are the vertices, offset behind all velocity dofs in the
/// coupled system. Edge numbers are assigned in deterministic element order.
#[derive(Debug, Clone)]
pub struct DofLayout {
    pub n_vertices: usize,
    pub n_edges: usize,
    /// Per triangle: six scalar P2 node ids `[v0, v1, v2, e0, e1, e2]`.
    pub element_nodes: Vec<[usize; 6]>,
    /// Midpoint coordinates per edge node (for nodal interpolation).
    pub edge_midpoints: Vec<[f64; 2]>,
    /// Scalar P2 node ids on each tagged boundary segment, per tag
    /// (`boundary_nodes[tag]`), deduplicated and sorted.
    pub boundary_nodes: Vec<Vec<usize>>,
    /// Per boundary edge: scalar P2 node ids `[a, b, midpoint]`.
    pub boundary_edge_nodes: Vec<[usize; 3]>,
    /// `true` for velocity dofs constrained to zero by the no-slip wall
    /// (all dofs whose node lies on the closure of tag-0 edges).
    pub dirichlet: Vec<bool>,
}

impl DofLayout {
    pub fn new(mesh: &Mesh) -> Self {
        let nv = mesh.n_vertices();
        let mut edge_ids = std::collections::HashMap::new();
        let mut edge_midpoints = Vec::new();
        let mut element_nodes = Vec::with_capacity(mesh.n_triangles());

        let mut edge_node = |a: usize, b: usize, mesh: &Mesh, mids: &mut Vec<[f64; 2]>| -> usize {
            let key = (a.min(b), a.max(b));
            *edge_ids.entry(key).or_insert_with(|| {
                let (pa, pb) = (mesh.vertices[a], mesh.vertices[b]);
                mids.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
                nv + mids.len() - 1
            })
        };

        for tri in &mesh.triangles {
            let [v0, v1, v2] = *tri;
            let e0 = edge_node(v1, v2, mesh, &mut edge_midpoints);
            let e1 = edge_node(v2, v0, mesh, &mut edge_midpoints);
            let e2 = edge_node(v0, v1, mesh, &mut edge_midpoints);
            element_nodes.push([v0, v1, v2, e0, e1, e2]);
        }
        let n_edges = edge_midpoints.len();

        let n_tags = mesh.n_open_segments as usize + 1;
        let mut boundary_nodes: Vec<std::collections::BTreeSet<usize>> =
            vec![Default::default(); n_tags];
        let mut boundary_edge_nodes = Vec::with_capacity(mesh.boundary_edges.len());
        for ([a, b], tag) in &mesh.boundary_edges {
            let key = (*a.min(b), *a.max(b));
            let mid = edge_ids[&key];
            boundary_edge_nodes.push([*a, *b, mid]);
            for n in [*a, *b, mid] {
                boundary_nodes[*tag as usize].insert(n);
            }
        }

        let mut dirichlet = vec![false; 2 * (nv + n_edges)];
        for &node in &boundary_nodes[TAG_WALL as usize] {
            dirichlet[2 * node] = true;
            dirichlet[2 * node + 1] = true;
        }

        Self {
            n_vertices: nv,
            n_edges,
            element_nodes,
            edge_midpoints,
            boundary_nodes: boundary_nodes.into_iter().map(|s| s.into_iter().collect()).collect(),
            boundary_edge_nodes,
            dirichlet,
        }
    }

    /// Number of scalar P2 nodes.
    pub fn n_nodes(&self) -> usize {
        self.n_vertices + self.n_edges
    }

    /// Number of velocity dofs (two components per node).
    pub fn n_velocity(&self) -> usize {
        2 * self.n_nodes()
    }

    /// Number of pressure dofs.
    pub fn n_pressure(&self) -> usize {
        self.n_vertices
    }

    /// Total dofs of the coupled velocity-pressure system.
    pub fn n_total(&self) -> usize {
        self.n_velocity() + self.n_pressure()
    }

    /// Global velocity dof of `(scalar node, component)`.
    #[inline]
    pub fn vdof(&self, node: usize, comp: usize) -> usize {
        2 * node + comp
    }

    /// Coordinates of scalar node `node` on `mesh`.
    pub fn node_coords(&self, mesh: &Mesh, node: usize) -> [f64; 2] {
        if node < self.n_vertices {
            mesh.vertices[node]
        } else {
            self.edge_midpoints[node - self.n_vertices]
        }
    }

    /// Nodal interpolation of an analytic vector field into the velocity
    /// space. Rejects fields that evaluate to NaN or infinity at a node.
    pub fn interpolate_velocity(
        &self,
        mesh: &Mesh,
        field: impl Fn([f64; 2]) -> [f64; 2],
    ) -> Result<Vec<f64>, String> {
        let mut out = vec![0.0; self.n_velocity()];
        for node in 0..self.n_nodes() {
            let x = self.node_coords(mesh, node);
            let v = field(x);
            if !v[0].is_finite() || !v[1].is_finite() {
                return Err(format!("field is not finite at node {node} ({x:?}): {v:?}"));
            }
            out[self.vdof(node, 0)] = v[0];
            out[self.vdof(node, 1)] = v[1];
        }
        Ok(out)
    }

    /// Zero out the wall-constrained entries of a velocity vector, making it
    /// admissible as discrete initial data.
    pub fn apply_dirichlet(&self, velocity: &mut [f64]) {
        for (d, &constrained) in self.dirichlet.iter().enumerate() {
            if constrained {
                velocity[d] = 0.0;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_channel_mesh, ChannelGeometry};

    /// Exact integral of `xi^i eta^j` over the reference triangle.
    fn monomial_integral(i: u32, j: u32) -> f64 {
        fn fact(n: u32) -> f64 {
            (1..=n).map(|k| k as f64).product::<f64>().max(1.0)
        }
        fact(i) * fact(j) / fact(i + j + 2)
    }

    #[test]
    fn triangle_rules_are_exact() {
        for (rule, label) in [
            (QuadratureRule::triangle_degree5(), "degree5"),
            (QuadratureRule::triangle_degree8(), "degree8"),
        ] {
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            let total: f64 = rule.weights.iter().sum();
            assert!((total - 0.5).abs() < 1e-14, "{label} weight sum {total}");
            for i in 0..=rule.exactness as u32 {
                for j in 0..=(rule.exactness as u32 - i) {
                    let approx: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(p, w)| w * p[0].powi(i as i32) * p[1].powi(j as i32))
                        .sum();
                    let exact = monomial_integral(i, j);
                    assert!(
                        (approx - exact).abs() < 1e-15,
                        "{label}: x^{i} y^{j}: {approx} vs {exact}"
                    );
                }
            }
        }
    }

    #[test]
    fn edge_rules_are_exact() {
        for rule in [QuadratureRule::edge_degree5(), QuadratureRule::edge_degree9()] {
            assert!(rule.weights.iter().all(|&w| w > 0.0));
            for d in 0..=rule.exactness as u32 {
                let approx: f64 = rule
                    .points
                    .iter()
                    .zip(&rule.weights)
                    .map(|(p, w)| w * p[0].powi(d as i32))
                    .sum();
                let exact = 1.0 / (d as f64 + 1.0);
                assert!((approx - exact).abs() < 1e-14, "t^{d}: {approx} vs {exact}");
            }
        }
    }

    #[test]
    fn partition_of_unity() {
        let rule = QuadratureRule::triangle_degree5();
        for space in [Space::P1, Space::P2] {
            let table = eval_basis(space, &rule);
            for q in 0..rule.points.len() {
                let sum: f64 = table.values[q].iter().sum();
                assert!((sum - 1.0).abs() < 1e-14);
                for d in 0..2 {
                    let gsum: f64 = table.gradients[q].iter().map(|g| g[d]).sum();
                    assert!(gsum.abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn nodal_properties() {
        // P1 at the barycenter.
        for v in p1_values([1.0 / 3.0, 1.0 / 3.0]) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        // P2 at vertex 0.
        assert_eq!(p2_values([0.0, 0.0]), [1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        // P2 at the three edge midpoints: vertex functions vanish, the
        // matching midpoint function is 1.
        let mids = [[0.5, 0.5], [0.0, 0.5], [0.5, 0.0]];
        for (k, &m) in mids.iter().enumerate() {
            let vals = p2_values(m);
            for v in 0..3 {
                assert!(vals[v].abs() < 1e-15);
            }
            for e in 0..3 {
                let expect = if e == k { 1.0 } else { 0.0 };
                assert!((vals[3 + e] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn interpolation_reproduces_quadratics_at_quad_points() {
        let geom = ChannelGeometry::new(1.0, 2.0, 2.0).unwrap();
        let mesh = generate_channel_mesh(&geom, 3, 4).unwrap();
        let layout = DofLayout::new(&mesh);
        let f = |x: [f64; 2]| [x[0] * x[0] - 2.0 * x[0] * x[1], 3.0 * x[1] * x[1] + x[0]];
        let u = layout.interpolate_velocity(&mesh, f).unwrap();

        let rule = QuadratureRule::triangle_degree5();
        let table = eval_basis(Space::P2, &rule);
        for (t, nodes) in layout.element_nodes.iter().enumerate() {
            let [a, b, c] = mesh.triangles[t];
            let (pa, pb, pc) = (mesh.vertices[a], mesh.vertices[b], mesh.vertices[c]);
            for (q, p) in rule.points.iter().enumerate() {
                let x = [
                    pa[0] + (pb[0] - pa[0]) * p[0] + (pc[0] - pa[0]) * p[1],
                    pa[1] + (pb[1] - pa[1]) * p[0] + (pc[1] - pa[1]) * p[1],
                ];
                let exact = f(x);
                for comp in 0..2 {
                    let val: f64 = (0..6)
                        .map(|i| u[layout.vdof(nodes[i], comp)] * table.values[q][i])
                        .sum();
                    assert!(
                        (val - exact[comp]).abs() < 1e-12,
                        "component {comp} at {x:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn constant_field_interpolation() {
        let geom = ChannelGeometry::new(1.0, 2.0, 2.0).unwrap();
        let mesh = generate_channel_mesh(&geom, 2, 2).unwrap();
        let layout = DofLayout::new(&mesh);
        let u = layout.interpolate_velocity(&mesh, |_| [1.0, 0.0]).unwrap();
        for node in 0..layout.n_nodes() {
            assert_eq!(u[layout.vdof(node, 0)], 1.0);
            assert_eq!(u[layout.vdof(node, 1)], 0.0);
        }
        let bad = layout.interpolate_velocity(&mesh, |x| [1.0 / (x[0] - 1.0), 0.0]);
        assert!(bad.is_err());
    }

    #[test]
    fn dirichlet_set_is_wall_closure() {
        let geom = ChannelGeometry::new(1.0, 2.0, 2.0).unwrap();
        let mesh = generate_channel_mesh(&geom, 4, 4).unwrap();
        let layout = DofLayout::new(&mesh);
        let wall: std::collections::HashSet<usize> =
            layout.boundary_nodes[0].iter().copied().collect();
        for node in 0..layout.n_nodes() {
            let expect = wall.contains(&node);
            assert_eq!(layout.dirichlet[layout.vdof(node, 0)], expect);
            assert_eq!(layout.dirichlet[layout.vdof(node, 1)], expect);
        }
        // Transition corners (wall meets inlet/outlet) are constrained: the
        // four domain corners sit on both a tag-0 and an open edge.
        let corners: Vec<usize> = (0..layout.n_vertices)
            .filter(|&v| {
                let p = mesh.vertices[v];
                (p[0] == 0.0 || p[0] == 2.0) && layout.boundary_nodes[0].contains(&v)
            })
            .collect();
        assert_eq!(corners.len(), 4);
        let open: std::collections::HashSet<usize> = layout.boundary_nodes[1]
            .iter()
            .chain(layout.boundary_nodes[2].iter())
            .copied()
            .collect();
        for v in corners {
            assert!(open.contains(&v));
            assert!(layout.dirichlet[layout.vdof(v, 0)]);
        }
    }
}
