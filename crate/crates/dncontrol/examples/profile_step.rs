use dncontrol::assembly::{assemble_step_jacobian, Convection};
use dncontrol::linsolve::{analyze_pattern, factorize_with_pattern};
use dncontrol::mesh::{generate_channel_mesh, ChannelGeometry};
use dncontrol::state::*;
use std::time::Instant;

fn main() {
    for (nx, ny) in [(8usize, 4usize), (12, 6), (16, 8)] {
        let geom = ChannelGeometry::new(1.0, 2.0, 2.0).unwrap();
        let mesh = generate_channel_mesh(&geom, nx, ny).unwrap();
        let sys = FlowSystem::new(mesh).unwrap();
        let n = sys.layout().n_total();
        let w = make_w_field(&geom);
        let mut u = sys.layout().interpolate_velocity(sys.mesh(), |x| {
            let v = w.eval(x);
            [5.0 * v[0], 5.0 * v[1]]
        }).unwrap();
        sys.layout().apply_dirichlet(&mut u);

        let t0 = Instant::now();
        let reps = 50;
        for _ in 0..reps {
            let _ = assemble_step_jacobian(sys.mesh(), sys.layout(), &u, 100.0, Convection::NavierStokes);
        }
        let t_asm = t0.elapsed().as_secs_f64() / reps as f64;

        let trips = assemble_step_jacobian(sys.mesh(), sys.layout(), &u, 100.0, Convection::NavierStokes);
        let pattern = analyze_pattern(n, &trips).unwrap();
        let t0 = Instant::now();
        for _ in 0..reps {
            let f = factorize_with_pattern(&pattern, &trips).unwrap();
            std::hint::black_box(&f);
        }
        let t_fact = t0.elapsed().as_secs_f64() / reps as f64;

        let f = factorize_with_pattern(&pattern, &trips).unwrap();
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64 * 0.37).sin()).collect();
        let t0 = Instant::now();
        for _ in 0..reps {
            let _ = f.solve(&rhs).unwrap();
        }
        let t_solve = t0.elapsed().as_secs_f64() / reps as f64;

        println!("{nx}x{ny}: n={n} nnz={} assemble {:.2} ms, factorize {:.2} ms, solve {:.2} ms",
            trips.len(), t_asm * 1e3, t_fact * 1e3, t_solve * 1e3);
    }
}
