//! Channel geometry and triangulation.
//!
//! The domain is a planar channel of length `L` whose half-width widens from
//! `r` at the inlet to `R` at the outlet along the cubic profile
//!
//! ```text
//! phi(s) = 2(r - R)/L^3 * s^3 + 3(R - r)/L^2 * s^2 + r
//! ```
//!
//! so that `phi(0) = r`, `phi(L) = R` and `phi'(0) = phi'(L) = 0`: the wall
//! meets both vertical ends at a right angle. The open (in/outflow) ends are
//! straight vertical segments; the curved walls carry no-slip conditions.
//!
//! Meshes are mapped structured triangulations of the reference rectangle
//! `[0,L] x [-1,1]`, with every vertex `(x, s)` sent to `(x, s * phi(x))`.
//! Boundary edges carry integer tags: `0` for the wall, `1` for the left
//! (inlet) segment, `2` for the right (outlet) segment.

use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

/// Tag of wall (no-slip) boundary edges.
pub const TAG_WALL: u32 = 0;

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid resolution: {0}")]
    InvalidResolution(String),
    #[error("invalid mesh: {0}")]
    Invalid(String),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Parameterized channel domain. All lengths must be positive, and the
/// width profile must stay positive along the whole channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelGeometry {
    r: f64,
    big_r: f64,
    length: f64,
}

impl ChannelGeometry {
    pub fn new(r: f64, big_r: f64, length: f64) -> Result<Self, MeshError> {
        if !(r > 0.0) || !(big_r > 0.0) || !(length > 0.0) {
            return Err(MeshError::InvalidGeometry(format!(
                "r, R, L must be positive, got r={r}, R={big_r}, L={length}"
            )));
        }
        let geom = Self { r, big_r, length };
        // The cubic can dip below zero between very unequal endpoints; sample
        // finely and reject such profiles instead of producing a tangled mesh.
        for k in 0..=4096 {
            let s = length * k as f64 / 4096.0;
            if geom.phi(s) <= 0.0 {
                return Err(MeshError::InvalidGeometry(format!(
                    "width profile is nonpositive at s={s} (phi={})",
                    geom.phi(s)
                )));
            }
        }
        Ok(geom)
    }

    /// Inlet half-width.
    pub fn inlet_halfwidth(&self) -> f64 {
        self.r
    }

    /// Outlet half-width.
    pub fn outlet_halfwidth(&self) -> f64 {
        self.big_r
    }

    /// Channel length.
    pub fn length(&self) -> f64 {
        self.length
    }

    /// Half-width profile `phi`.
    pub fn phi(&self, s: f64) -> f64 {
        let (r, big_r, l) = (self.r, self.big_r, self.length);
        2.0 * (r - big_r) / (l * l * l) * s * s * s + 3.0 * (big_r - r) / (l * l) * s * s + r
    }

    /// Derivative `phi'`.
    pub fn dphi(&self, s: f64) -> f64 {
        let (r, big_r, l) = (self.r, self.big_r, self.length);
        6.0 * (r - big_r) / (l * l * l) * s * s + 6.0 * (big_r - r) / (l * l) * s
    }

    /// Exact area of the channel, `int_0^L 2 phi = 2 r L + (R - r) L`.
    ///
    /// The cubic and quadratic terms of `phi` integrate to
    /// `(R - r) L (1 - 1/2)`, so the area collapses to `(r + R) L`.
    pub fn area(&self) -> f64 {
        (self.r + self.big_r) * self.length
    }
}

/// Triangulation with tagged boundary edges.
///
/// Triangles are uniformly counterclockwise. Every boundary edge belongs to
/// exactly one triangle and carries exactly one tag; tag `0` is the no-slip
/// wall, tags `1..=n_open_segments` are the straight open segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    /// Vertex index triples, counterclockwise.
    pub triangles: Vec<[usize; 3]>,
    /// `(vertex pair, tag)`, pairs oriented counterclockwise along the boundary.
    pub boundary_edges: Vec<([usize; 2], u32)>,
    /// Number of open (non-wall) boundary segments; open tags are `1..=n`.
    pub n_open_segments: u32,
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Twice the signed area of triangle `t` (positive for counterclockwise).
    pub fn double_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        (pb[0] - pa[0]) * (pc[1] - pa[1]) - (pb[1] - pa[1]) * (pc[0] - pa[0])
    }

    /// Sum of all triangle areas.
    pub fn area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| 0.5 * self.double_area(t))
            .sum()
    }

    /// Outward unit normal of boundary edge `e`.
    ///
    /// Boundary edges are stored counterclockwise, so the outward normal is
    /// the edge direction rotated clockwise by a right angle.
    pub fn outward_normal(&self, e: usize) -> [f64; 2] {
        let ([a, b], _) = self.boundary_edges[e];
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        let d = [pb[0] - pa[0], pb[1] - pa[1]];
        let len = (d[0] * d[0] + d[1] * d[1]).sqrt();
        [d[1] / len, -d[0] / len]
    }

    /// Structural checks: orientation, edge ownership, tag coverage, open
    /// segments straight and vertical.
    pub fn validate(&self) -> Result<(), MeshError> {
        let bad = |msg: String| MeshError::Invalid(msg);
        for t in 0..self.triangles.len() {
            if self.double_area(t) <= 0.0 {
                return Err(bad(format!("triangle {t} is not counterclockwise")));
            }
        }
        // Count how many triangles own each undirected edge.
        let mut owners = std::collections::HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                let (a, b) = (tri[k], tri[(k + 1) % 3]);
                let key = (a.min(b), a.max(b));
                *owners.entry(key).or_insert(0usize) += 1;
            }
        }
        let mut seen = vec![false; self.n_open_segments as usize + 1];
        for (e, ([a, b], tag)) in self.boundary_edges.iter().enumerate() {
            let key = (*a.min(b), *a.max(b));
            match owners.get(&key) {
                Some(1) => {}
                Some(n) => {
                    return Err(bad(format!(
                        "boundary edge {e} belongs to {n} triangles, expected 1"
                    )))
                }
                None => return Err(bad(format!("boundary edge {e} is not a mesh edge"))),
            }
            if *tag > self.n_open_segments {
                return Err(bad(format!(
                    "boundary edge {e} has tag {tag}, declared tags are 0..={}",
                    self.n_open_segments
                )));
            }
            seen[*tag as usize] = true;
        }
        // Open tags must be the contiguous range 1..=n: a file using tags
        // {0, 1, 3} declares three open segments but leaves 2 empty, which
        // is a labelling mistake, not a geometry.
        for seg in 1..=self.n_open_segments {
            if !seen[seg as usize] {
                return Err(bad(format!(
                    "open segment {seg} has no boundary edges (tags must be contiguous)"
                )));
            }
        }
        // Every open segment must be a straight vertical line.
        for seg in 1..=self.n_open_segments {
            let mut x: Option<f64> = None;
            for ([a, b], tag) in &self.boundary_edges {
                if *tag != seg {
                    continue;
                }
                for v in [*a, *b] {
                    let vx = self.vertices[v][0];
                    match x {
                        None => x = Some(vx),
                        Some(x0) if vx == x0 => {}
                        Some(x0) => {
                            return Err(bad(format!(
                                "open segment {seg} is not vertical (x={x0} vs x={vx})"
                            )))
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// Generate the mapped structured triangulation of the channel.
///
/// The reference rectangle `[0,L] x [-1,1]` is divided into `nx * ny` cells;
/// each cell splits into two triangles. `ny` must be even so that the
/// centerline `x2 = 0` is a mesh line and the mesh is exactly symmetric
/// under `x2 -> -x2` (diagonals flip orientation across the centerline).
pub fn generate_channel_mesh(
    geom: &ChannelGeometry,
    nx: usize,
    ny: usize,
) -> Result<Mesh, MeshError> {
    if nx < 1 {
        return Err(MeshError::InvalidResolution(format!("nx={nx}, need >= 1")));
    }
    if ny < 2 || ny % 2 != 0 {
        return Err(MeshError::InvalidResolution(format!(
            "ny={ny}, need even and >= 2"
        )));
    }
    let m = (ny / 2) as i64;
    let vid = |i: usize, j: usize| i * (ny + 1) + j;

    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for i in 0..=nx {
        let x = geom.length * i as f64 / nx as f64;
        let w = geom.phi(x);
        for j in 0..=ny {
            // (j - m)/m negates exactly under j -> ny - j, which keeps the
            // mesh bit-exactly mirror symmetric about the centerline.
            let s = (j as i64 - m) as f64 / m as f64;
            vertices.push([x, s * w]);
        }
    }

    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for i in 0..nx {
        for j in 0..ny {
            let v00 = vid(i, j);
            let v10 = vid(i + 1, j);
            let v11 = vid(i + 1, j + 1);
            let v01 = vid(i, j + 1);
            if j < ny / 2 {
                triangles.push([v00, v10, v11]);
                triangles.push([v00, v11, v01]);
            } else {
                triangles.push([v00, v10, v01]);
                triangles.push([v10, v11, v01]);
            }
        }
    }

    // Counterclockwise boundary traversal: bottom wall, right (outlet),
    // top wall, left (inlet).
    let mut boundary_edges = Vec::with_capacity(2 * nx + 2 * ny);
    for i in 0..nx {
        boundary_edges.push(([vid(i, 0), vid(i + 1, 0)], TAG_WALL));
    }
    for j in 0..ny {
        boundary_edges.push(([vid(nx, j), vid(nx, j + 1)], 2));
    }
    for i in (0..nx).rev() {
        boundary_edges.push(([vid(i + 1, ny), vid(i, ny)], TAG_WALL));
    }
    for j in (0..ny).rev() {
        boundary_edges.push(([vid(0, j + 1), vid(0, j)], 1));
    }

    let mesh = Mesh {
        vertices,
        triangles,
        boundary_edges,
        n_open_segments: 2,
    };
    debug_assert!(mesh.validate().is_ok());
    Ok(mesh)
}

/// Write a mesh in the plain-text format:
///
/// ```text
/// nv nt ne
/// x y          (nv lines)
/// i j k        (nt lines, 0-based vertex indices)
/// i j tag      (ne lines)
/// ```
///
/// Coordinates are written with shortest round-trip precision, so
/// `write_mesh` followed by [`read_mesh`] reproduces them bit-exactly.
pub fn write_mesh(mesh: &Mesh, path: &Path) -> Result<(), MeshError> {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{} {} {}",
        mesh.vertices.len(),
        mesh.triangles.len(),
        mesh.boundary_edges.len()
    );
    for v in &mesh.vertices {
        let _ = writeln!(out, "{} {}", v[0], v[1]);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "{} {} {}", t[0], t[1], t[2]);
    }
    for ([a, b], tag) in &mesh.boundary_edges {
        let _ = writeln!(out, "{a} {b} {tag}");
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_mesh(path: &Path) -> Result<Mesh, MeshError> {
    let text = std::fs::read_to_string(path)?;
    let pstr = path.display().to_string();
    let err = |line: usize, msg: String| MeshError::Parse {
        path: pstr.clone(),
        line,
        msg,
    };

    let mut lines = text.lines().enumerate();
    let (lno, header) = lines
        .next()
        .ok_or_else(|| err(1, "empty mesh file".into()))?;
    let counts: Vec<usize> = header
        .split_whitespace()
        .map(|w| w.parse())
        .collect::<Result<_, _>>()
        .map_err(|e| err(lno + 1, format!("bad header: {e}")))?;
    let [nv, nt, ne] = counts[..] else {
        return Err(err(lno + 1, "header must be `nv nt ne`".into()));
    };

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (lno, line) = lines
            .next()
            .ok_or_else(|| err(0, "unexpected end of file in vertex block".into()))?;
        let xy: Vec<f64> = line
            .split_whitespace()
            .map(|w| w.parse())
            .collect::<Result<_, _>>()
            .map_err(|e| err(lno + 1, format!("bad vertex: {e}")))?;
        let [x, y] = xy[..] else {
            return Err(err(lno + 1, "vertex line must be `x y`".into()));
        };
        vertices.push([x, y]);
    }

    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (lno, line) = lines
            .next()
            .ok_or_else(|| err(0, "unexpected end of file in triangle block".into()))?;
        let ijk: Vec<usize> = line
            .split_whitespace()
            .map(|w| w.parse())
            .collect::<Result<_, _>>()
            .map_err(|e| err(lno + 1, format!("bad triangle: {e}")))?;
        let [i, j, k] = ijk[..] else {
            return Err(err(lno + 1, "triangle line must be `i j k`".into()));
        };
        for v in [i, j, k] {
            if v >= nv {
                return Err(err(lno + 1, format!("vertex index {v} out of range (nv={nv})")));
            }
        }
        triangles.push([i, j, k]);
    }

    let mut boundary_edges = Vec::with_capacity(ne);
    let mut max_tag = 0u32;
    for _ in 0..ne {
        let (lno, line) = lines
            .next()
            .ok_or_else(|| err(0, "unexpected end of file in edge block".into()))?;
        let parts: Vec<&str> = line.split_whitespace().collect();
        let [a, b, tag] = parts[..] else {
            return Err(err(lno + 1, "edge line must be `i j tag`".into()));
        };
        let a: usize = a
            .parse()
            .map_err(|e| err(lno + 1, format!("bad edge index: {e}")))?;
        let b: usize = b
            .parse()
            .map_err(|e| err(lno + 1, format!("bad edge index: {e}")))?;
        let tag: u32 = tag
            .parse()
            .map_err(|e| err(lno + 1, format!("bad edge tag: {e}")))?;
        for v in [a, b] {
            if v >= nv {
                return Err(err(lno + 1, format!("vertex index {v} out of range (nv={nv})")));
            }
        }
        boundary_edges.push(([a, b], tag));
        max_tag = max_tag.max(tag);
    }

    let mesh = Mesh {
        vertices,
        triangles,
        boundary_edges,
        n_open_segments: max_tag,
    };
    mesh.validate().map_err(|e| match e {
        MeshError::Invalid(msg) => err(0, msg),
        other => other,
    })?;
    Ok(mesh)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn unit_geom() -> ChannelGeometry {
        ChannelGeometry::new(1.0, 1.0, 2.0).unwrap()
    }

    fn default_geom() -> ChannelGeometry {
        ChannelGeometry::new(1.0, 2.0, 2.0).unwrap()
    }

    #[test]
    fn phi_matches_endpoints_exactly() {
        let g = ChannelGeometry::new(0.7, 1.9, 3.0).unwrap();
        assert_eq!(g.phi(0.0), 0.7);
        assert!((g.phi(3.0) - 1.9).abs() < 1e-14);
        assert!(g.dphi(0.0).abs() < 1e-15);
        assert!(g.dphi(3.0).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_geometry() {
        assert!(ChannelGeometry::new(0.0, 1.0, 1.0).is_err());
        assert!(ChannelGeometry::new(1.0, -1.0, 1.0).is_err());
        // phi is monotone between r and R, so any positive endpoints give a
        // positive profile; extreme ratios must still construct.
        assert!(ChannelGeometry::new(20.0, 1e-6, 1.0).is_ok());
    }

    #[test]
    fn straight_channel_2x2() {
        let mesh = generate_channel_mesh(&unit_geom(), 2, 2).unwrap();
        assert_eq!(mesh.n_vertices(), 9);
        assert_eq!(mesh.n_triangles(), 8);
        // Boundary width 2 at both ends.
        for (seg, x) in [(1u32, 0.0), (2u32, 2.0)] {
            let len: f64 = mesh
                .boundary_edges
                .iter()
                .filter(|(_, t)| *t == seg)
                .map(|([a, b], _)| {
                    let (pa, pb) = (mesh.vertices[*a], mesh.vertices[*b]);
                    assert_eq!(pa[0], x);
                    ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt()
                })
                .sum();
            assert!((len - 2.0).abs() < 1e-14);
        }
        mesh.validate().unwrap();
    }

    #[test]
    fn widening_channel_boundary_lengths() {
        let mesh = generate_channel_mesh(&default_geom(), 5, 4).unwrap();
        let seg_len = |seg: u32| -> f64 {
            mesh.boundary_edges
                .iter()
                .filter(|(_, t)| *t == seg)
                .map(|([a, b], _)| (mesh.vertices[*b][1] - mesh.vertices[*a][1]).abs())
                .sum()
        };
        assert!((seg_len(1) - 2.0).abs() < 1e-14);
        assert!((seg_len(2) - 4.0).abs() < 1e-14);
    }

    #[test]
    fn area_converges_to_cubic_integral() {
        // Analytic area of the default channel: (r + R) L = 6.
        let exact = default_geom().area();
        assert_eq!(exact, 6.0);
        let coarse = generate_channel_mesh(&default_geom(), 10, 6).unwrap().area();
        let fine = generate_channel_mesh(&default_geom(), 40, 20).unwrap().area();
        // The polygon area is the trapezoid rule applied to 2 phi, and the
        // Euler-Maclaurin boundary terms vanish because phi'(0) = phi'(L)
        // = 0, so the piecewise-linear walls capture the area exactly (well
        // inside the O(1/nx^2) bound) at any resolution.
        assert!((coarse - exact).abs() < 1e-12, "coarse area {coarse}");
        assert!((fine - exact).abs() < 1e-12, "fine area {fine}");
    }

    #[test]
    fn mirror_symmetry_is_exact() {
        let mesh = generate_channel_mesh(&default_geom(), 7, 6).unwrap();
        let set: std::collections::HashSet<(u64, u64)> = mesh
            .vertices
            .iter()
            .map(|v| (v[0].to_bits(), v[1].to_bits()))
            .collect();
        for v in &mesh.vertices {
            // +0.0 canonicalizes the -0.0 produced by negating centerline
            // coordinates.
            let my = -v[1] + 0.0;
            assert!(
                set.contains(&(v[0].to_bits(), my.to_bits())),
                "mirror of {v:?} is not a vertex"
            );
        }
    }

    #[test]
    fn file_roundtrip_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("channel.mesh");
        let mesh = generate_channel_mesh(&default_geom(), 3, 4).unwrap();
        write_mesh(&mesh, &path).unwrap();
        let back = read_mesh(&path).unwrap();
        assert_eq!(mesh, back);
    }

    #[test]
    fn parse_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();

        // Triangle index out of range (line 5 is the triangle line).
        let path = dir.path().join("bad_index.mesh");
        std::fs::write(&path, "3 1 1\n0 0\n1 0\n0 1\n0 1 7\n0 1 0\n").unwrap();
        let e = read_mesh(&path).unwrap_err();
        assert!(e.to_string().contains(":5:"), "{e}");
        assert!(e.to_string().contains("out of range"), "{e}");
    }

    #[test]
    fn noncontiguous_tags_are_rejected() {
        // A single triangle whose edges use tags {0, 1, 3}: segment 2 is
        // declared implicitly but empty.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad_tags.mesh");
        std::fs::write(&path, "3 1 3\n0 0\n1 0\n0 1\n0 1 2\n0 1 0\n1 2 1\n2 0 3\n").unwrap();
        let e = read_mesh(&path).unwrap_err();
        assert!(e.to_string().contains("segment 2"), "{e}");
    }

    #[test]
    fn euler_relation_and_tag_partition() {
        for (nx, ny) in [(1, 2), (3, 2), (5, 8), (12, 6)] {
            let mesh = generate_channel_mesh(&default_geom(), nx, ny).unwrap();
            let mut edges = std::collections::HashSet::new();
            for t in &mesh.triangles {
                for k in 0..3 {
                    let (a, b) = (t[k], t[(k + 1) % 3]);
                    edges.insert((a.min(b), a.max(b)));
                }
            }
            let (v, e, f) = (mesh.n_vertices() as i64, edges.len() as i64, mesh.n_triangles() as i64);
            assert_eq!(v - e + f, 1, "Euler relation on {nx}x{ny}");

            let by_tag: usize = (0..=mesh.n_open_segments)
                .map(|tag| mesh.boundary_edges.iter().filter(|(_, t)| *t == tag).count())
                .sum();
            assert_eq!(by_tag, mesh.boundary_edges.len());
        }
    }

    proptest! {
        #[test]
        fn generated_meshes_validate(
            r in 0.3f64..3.0,
            big_r in 0.3f64..3.0,
            l in 0.5f64..4.0,
            nx in 1usize..8,
            half_ny in 1usize..5,
        ) {
            let geom = ChannelGeometry::new(r, big_r, l).unwrap();
            let mesh = generate_channel_mesh(&geom, nx, 2 * half_ny).unwrap();
            prop_assert!(mesh.validate().is_ok());
            // Mirror symmetry: every vertex has its reflection in the mesh.
            let set: std::collections::HashSet<(u64, u64)> = mesh
                .vertices
                .iter()
                .map(|v| (v[0].to_bits(), v[1].to_bits()))
                .collect();
            for v in &mesh.vertices {
                prop_assert!(set.contains(&(v[0].to_bits(), (-v[1] + 0.0).to_bits())));
            }
        }
    }
}
