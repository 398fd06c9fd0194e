use dncontrol::assembly::{assemble_step_jacobian, Convection};
use dncontrol::mesh::{generate_channel_mesh, ChannelGeometry};
use dncontrol::state::*;
use faer::sparse::{SparseColMat, Triplet};
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use std::time::Instant;

fn main() {
    let (nx, ny) = (16usize, 8usize);
    let geom = ChannelGeometry::new(1.0, 2.0, 2.0).unwrap();
    let mesh = generate_channel_mesh(&geom, nx, ny).unwrap();
    let sys = FlowSystem::new(mesh).unwrap();
    let n = sys.layout().n_total();
    let nv = sys.layout().n_velocity();
    let w = make_w_field(&geom);
    let mut u = sys.layout().interpolate_velocity(sys.mesh(), |x| {
        let v = w.eval(x);
        [5.0 * v[0], 5.0 * v[1]]
    }).unwrap();
    sys.layout().apply_dirichlet(&mut u);
    let trips = assemble_step_jacobian(sys.mesh(), sys.layout(), &u, 100.0, Convection::NavierStokes);

    for (label, perm) in [("segregated", false), ("interleaved", true)] {
        // Interleave: node k occupies 3 slots (u,v,[p]); vertices have pressure.
        let n_nodes = sys.layout().n_nodes();
        let n_vert = sys.layout().n_pressure();
        let map = |idx: usize| -> usize {
            if !perm { return idx; }
            if idx < nv {
                let node = idx / 2;
                let comp = idx % 2;
                if node < n_vert { 3 * node + comp } else { 3 * n_vert + 2 * (node - n_vert) + comp }
            } else {
                let vtx = idx - nv;
                3 * vtx + 2
            }
        };
        let _ = n_nodes;
        let ft: Vec<Triplet<usize, usize, f64>> = trips.iter().map(|&(r, c, v)| Triplet::new(map(r), map(c), v)).collect();

        let t0 = Instant::now();
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &ft).unwrap();
        let t_csc = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let sym = SymbolicLu::try_new(mat.symbolic()).unwrap();
        let t_sym = t0.elapsed().as_secs_f64();

        let t0 = Instant::now();
        let reps = 30;
        for _ in 0..reps {
            let lu = Lu::try_new_with_symbolic(sym.clone(), mat.as_ref()).unwrap();
            std::hint::black_box(&lu);
        }
        let t_num = t0.elapsed().as_secs_f64() / reps as f64;
        println!("{label}: csc {:.2} ms, symbolic {:.2} ms, numeric {:.2} ms", t_csc*1e3, t_sym*1e3, t_num*1e3);
    }
}
