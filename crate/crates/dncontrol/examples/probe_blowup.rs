use dncontrol::mesh::{generate_channel_mesh, ChannelGeometry};
use dncontrol::state::*;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let nx: usize = args[1].parse().unwrap();
    let ny: usize = args[2].parse().unwrap();
    let n_steps: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(100);

    let geom = ChannelGeometry::new(1.0, 2.0, 2.0).unwrap();
    let mesh = generate_channel_mesh(&geom, nx, ny).unwrap();
    let sys = FlowSystem::new(mesh).unwrap();
    let grid = TimeGrid::new(1.0, n_steps);
    let cfg = SolverConfig::default();
    let w = make_w_field(&geom);

    let t0 = std::time::Instant::now();
    // Case A: u0 = 15 w, q = 0.
    let mut u0 = sys.layout().interpolate_velocity(sys.mesh(), |x| {
        let v = w.eval(x);
        [15.0 * v[0], 15.0 * v[1]]
    }).unwrap();
    sys.layout().apply_dirichlet(&mut u0);
    let q = ControlVector::zeros(2, n_steps);
    match sys.solve_state(&q, &u0, &grid, &cfg).unwrap() {
        StateOutcome::Blowup { report, partial } => {
            println!("A: BLOWUP t*={} trigger={} lastnorm={:.3e} flows: t=0:{:.2} last:{:.2}",
                report.t_star, report.trigger, report.last_finite_norm,
                sys.flowrate(&partial.velocity[0]),
                sys.flowrate(partial.velocity.last().unwrap()));
        }
        StateOutcome::Completed(t) => {
            println!("A: COMPLETED flow(T)={:.3}", sys.flowrate(t.velocity.last().unwrap()));
        }
    }
    println!("   elapsed {:.2?}", t0.elapsed());

    // Case B: u0 = 0, q = (50, 0).
    let t0 = std::time::Instant::now();
    let u0 = vec![0.0; sys.layout().n_velocity()];
    let q = ControlVector::constant(&[50.0, 0.0], n_steps);
    match sys.solve_state(&q, &u0, &grid, &cfg).unwrap() {
        StateOutcome::Blowup { report, partial } => {
            println!("B: BLOWUP t*={} trigger={} lastnorm={:.3e} flow(last)={:.2}",
                report.t_star, report.trigger, report.last_finite_norm,
                sys.flowrate(partial.velocity.last().unwrap()));
        }
        StateOutcome::Completed(t) => {
            println!("B: COMPLETED flow(T)={:.3}", sys.flowrate(t.velocity.last().unwrap()));
        }
    }
    println!("   elapsed {:.2?}", t0.elapsed());

    // Stokes on both data sets: must complete.
    let t0 = std::time::Instant::now();
    let mut u0 = sys.layout().interpolate_velocity(sys.mesh(), |x| {
        let v = w.eval(x);
        [15.0 * v[0], 15.0 * v[1]]
    }).unwrap();
    sys.layout().apply_dirichlet(&mut u0);
    let q = ControlVector::zeros(2, n_steps);
    let t = sys.solve_state_stokes(&q, &u0, &grid).unwrap();
    println!("S(A): flow(T)={:.3} elapsed {:.2?}", sys.flowrate(t.velocity.last().unwrap()), t0.elapsed());
    let u0 = vec![0.0; sys.layout().n_velocity()];
    let q = ControlVector::constant(&[50.0, 0.0], n_steps);
    let t = sys.solve_state_stokes(&q, &u0, &grid).unwrap();
    println!("S(B): flow(T)={:.3}", sys.flowrate(t.velocity.last().unwrap()));
}
