//! CSV and legacy-VTK export.
//!
//! All floats are written with Rust's shortest round-trip formatting, so a
//! file re-read with a standard parser reproduces the values bit-exactly
//! and repeated runs of the same configuration produce byte-identical
//! files.

use std::fmt::Write as _;
use std::path::Path;

use crate::fem::DofLayout;
use crate::mesh::Mesh;
use crate::optimal::IterationRecord;
use crate::state::{BlowupReport, ControlVector, FlowSystem, TimeGrid, Trajectory};

/// `time,Q` rows for a (possibly partial) trajectory; a trailing comment
/// line records blowup.
pub fn flowrate_csv(sys: &FlowSystem, traj: &Trajectory, blowup: Option<&BlowupReport>) -> String {
    let mut out = String::from("time,Q\n");
    for (n, u) in traj.velocity.iter().enumerate() {
        let _ = writeln!(out, "{},{}", traj.grid.time(n), sys.flowrate(u));
    }
    if let Some(report) = blowup {
        let _ = writeln!(out, "# blowup t={} ({})", report.t_star, report.trigger);
    }
    out
}

/// `time,q1,...,qL` rows sampled at the `N + 1` grid times. Controls are
/// left-continuous piecewise constants; row `n >= 1` holds the value on
/// `(t_{n-1}, t_n]` and row 0 repeats the first interval.
pub fn control_csv(grid: &TimeGrid, q: &ControlVector) -> String {
    let mut out = String::from("time");
    for i in 1..=q.segments() {
        let _ = write!(out, ",q{i}");
    }
    out.push('\n');
    for n in 0..=grid.steps {
        let _ = write!(out, "{}", grid.time(n));
        let step = n.max(1) - 1;
        for i in 0..q.segments() {
            let _ = write!(out, ",{}", q.value(i, step));
        }
        out.push('\n');
    }
    out
}

/// Parse a control time series written by [`control_csv`] (or compatible):
/// a header line, then `N + 1` rows whose rows `1..=N` carry the interval
/// values.
pub fn parse_control_csv(
    text: &str,
    segments: usize,
    steps: usize,
) -> Result<ControlVector, String> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or("empty control file")?;
    let cols = header.split(',').count();
    if cols != segments + 1 {
        return Err(format!(
            "control file has {cols} columns, expected time plus {segments} segments"
        ));
    }
    let mut q = ControlVector::zeros(segments, steps);
    let mut rows = 0usize;
    for (idx, line) in lines {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != segments + 1 {
            return Err(format!("line {}: expected {} fields", idx + 1, segments + 1));
        }
        if rows >= 1 && rows <= steps {
            for i in 0..segments {
                let v: f64 = fields[i + 1]
                    .trim()
                    .parse()
                    .map_err(|e| format!("line {}: {e}", idx + 1))?;
                *q.value_mut(i, rows - 1) = v;
            }
        }
        rows += 1;
    }
    if rows != steps + 1 {
        return Err(format!(
            "control file has {rows} data rows, expected {} (N + 1)",
            steps + 1
        ));
    }
    Ok(q)
}

/// Optimizer iteration log.
pub fn iterations_csv(records: &[IterationRecord]) -> String {
    let mut out =
        String::from("iter,j,tracking,regularization,stationarity,step,blowups_in_linesearch\n");
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iter, r.j, r.tracking, r.regularization, r.stationarity, r.step, r.blowups_in_linesearch
        );
    }
    out
}

/// Legacy ASCII VTK unstructured grid with vertex velocity vectors and
/// vertex pressure scalars. Quadratic (mid-edge) velocity values are not
/// exported; the file is a visualization artifact, not a checkpoint.
pub fn vtk_snapshot(
    mesh: &Mesh,
    layout: &DofLayout,
    velocity: &[f64],
    pressure: &[f64],
    title: &str,
) -> String {
    let nv = mesh.n_vertices();
    let nt = mesh.n_triangles();
    let mut out = String::new();
    let _ = writeln!(out, "# vtk DataFile Version 3.0");
    let _ = writeln!(out, "{title}");
    let _ = writeln!(out, "ASCII");
    let _ = writeln!(out, "DATASET UNSTRUCTURED_GRID");
    let _ = writeln!(out, "POINTS {nv} double");
    for v in &mesh.vertices {
        let _ = writeln!(out, "{} {} 0", v[0], v[1]);
    }
    let _ = writeln!(out, "CELLS {nt} {}", 4 * nt);
    for t in &mesh.triangles {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    let _ = writeln!(out, "CELL_TYPES {nt}");
    for _ in 0..nt {
        let _ = writeln!(out, "5");
    }
    let _ = writeln!(out, "POINT_DATA {nv}");
    let _ = writeln!(out, "VECTORS velocity double");
    for node in 0..nv {
        let _ = writeln!(
            out,
            "{} {} 0",
            velocity[layout.vdof(node, 0)],
            velocity[layout.vdof(node, 1)]
        );
    }
    let _ = writeln!(out, "SCALARS pressure double 1");
    let _ = writeln!(out, "LOOKUP_TABLE default");
    for node in 0..nv {
        let _ = writeln!(out, "{}", pressure[node]);
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, text)
}
