//! Command-line front end: mesh generation, forward solves, control
//! optimization, gradient checking and the verification suite.
//!
//! Exit codes: 0 success; 1 verification/check failure; 2 configuration or
//! input errors; 3 blowup during `solve` (still a successful diagnostic
//! run); 4 infeasible starting point (`optimize` / `gradient-check`).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use dncontrol::assembly::Convection;
use dncontrol::config::RunConfig;
use dncontrol::mesh::generate_channel_mesh;
use dncontrol::optimal::{optimize, ObjectiveData, OptimalError, OptimizeStatus};
use dncontrol::output;
use dncontrol::state::{ControlVector, FlowSystem, StateOutcome, Trajectory};
use dncontrol::verify::{self, Profile};

#[derive(Parser)]
#[command(name = "dncontrol", version, about = "Boundary-pressure control of channel flow")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the channel mesh and write it as a plain-text file.
    Mesh {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Solve the state equation for a given control; writes flowrate.csv.
    Solve {
        #[command(flatten)]
        common: CommonArgs,
        /// Dump a VTK snapshot every k steps (0 = off; overrides config).
        #[arg(long)]
        vtk_every: Option<usize>,
    },
    /// Run the control optimizer; writes control.csv, flowrate.csv,
    /// iterations.csv.
    Optimize {
        #[command(flatten)]
        common: CommonArgs,
        /// Dump VTK snapshots of the optimal state every k steps.
        #[arg(long)]
        vtk_every: Option<usize>,
        /// Run several regularization weights concurrently:
        /// `--sweep alpha=1e-1,1e-2`. Output files get an `_alpha<v>` suffix.
        #[arg(long)]
        sweep: Option<String>,
    },
    /// Finite-difference check of the reduced gradient.
    GradientCheck {
        #[command(flatten)]
        common: CommonArgs,
        /// Seed for the random base control and directions.
        #[arg(long, default_value_t = 20240901)]
        seed: u64,
        /// Deliberately flip the adjoint boundary term (negative control;
        /// the check must then fail).
        #[arg(long, hide = true)]
        corrupt_sign: bool,
    },
    /// Run the verification suite.
    Verify {
        #[arg(long, value_enum, default_value_t = ProfileArg::Quick)]
        profile: ProfileArg,
        /// Write a machine-readable CSV report to this path.
        #[arg(long)]
        report: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Quick,
    Full,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Mesh { common } => cmd_mesh(&common),
        Command::Solve { common, vtk_every } => cmd_solve(&common, vtk_every),
        Command::Optimize {
            common,
            vtk_every,
            sweep,
        } => cmd_optimize(&common, vtk_every, sweep),
        Command::GradientCheck {
            common,
            seed,
            corrupt_sign,
        } => cmd_gradient_check(&common, seed, corrupt_sign),
        Command::Verify { profile, report } => cmd_verify(profile, report),
    }
}

struct Problem {
    rc: RunConfig,
    sys: FlowSystem,
    u0: Vec<f64>,
}

fn load_problem(common: &CommonArgs) -> Result<Problem, String> {
    let rc = RunConfig::load(&common.config).map_err(|e| e.to_string())?;
    problem_from(rc)
}

fn problem_from(rc: RunConfig) -> Result<Problem, String> {
    let geom = rc.geometry().map_err(|e| e.to_string())?;
    let mesh = generate_channel_mesh(&geom, rc.nx, rc.ny).map_err(|e| e.to_string())?;
    let sys = FlowSystem::new(mesh).map_err(|e| e.to_string())?;
    let u0_field = rc.u0.instantiate(&geom);
    let mut u0 = sys
        .layout()
        .interpolate_velocity(sys.mesh(), |x| u0_field(0.0, x))
        .map_err(|e| e.to_string())?;
    sys.layout().apply_dirichlet(&mut u0);
    Ok(Problem { rc, sys, u0 })
}

fn objective_data(p: &Problem) -> Result<ObjectiveData, String> {
    let geom = p.rc.geometry().map_err(|e| e.to_string())?;
    ObjectiveData::new(
        p.rc.u_d.instantiate(&geom),
        ControlVector::constant(&p.rc.q_d, p.rc.n_steps),
        p.rc.alpha,
    )
    .map_err(|e| e.to_string())
}

fn cmd_mesh(common: &CommonArgs) -> Result<ExitCode, String> {
    let rc = RunConfig::load(&common.config).map_err(|e| e.to_string())?;
    let geom = rc.geometry().map_err(|e| e.to_string())?;
    let mesh = generate_channel_mesh(&geom, rc.nx, rc.ny).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&common.out).map_err(|e| e.to_string())?;
    let path = common.out.join("mesh.txt");
    dncontrol::mesh::write_mesh(&mesh, &path).map_err(|e| e.to_string())?;
    println!(
        "wrote {} ({} vertices, {} triangles, area {})",
        path.display(),
        mesh.n_vertices(),
        mesh.n_triangles(),
        mesh.area()
    );
    Ok(ExitCode::SUCCESS)
}

fn solve_control(p: &Problem) -> Result<ControlVector, String> {
    match &p.rc.q_file {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| format!("control file {}: {e}", path.display()))?;
            output::parse_control_csv(&text, p.sys.n_open_segments(), p.rc.n_steps)
                .map_err(|e| format!("control file {}: {e}", path.display()))
        }
        None => Ok(ControlVector::constant(&p.rc.q, p.rc.n_steps)),
    }
}

fn dump_vtk(p: &Problem, traj: &Trajectory, out: &Path, every: usize) -> Result<(), String> {
    if every == 0 {
        return Ok(());
    }
    for n in (0..traj.velocity.len()).step_by(every) {
        let text = output::vtk_snapshot(
            p.sys.mesh(),
            p.sys.layout(),
            &traj.velocity[n],
            &traj.pressure[n],
            &format!("t = {}", traj.grid.time(n)),
        );
        let path = out.join(format!("state_{n:06}.vtk"));
        output::write_text(&path, &text).map_err(|e| e.to_string())?;
    }
    Ok(())
}

fn cmd_solve(common: &CommonArgs, vtk_every: Option<usize>) -> Result<ExitCode, String> {
    let p = load_problem(common)?;
    let q = solve_control(&p)?;
    let grid = p.rc.time_grid();
    let every = vtk_every.unwrap_or(p.rc.vtk_every);
    std::fs::create_dir_all(&common.out).map_err(|e| e.to_string())?;

    let (traj, blowup) = match p.rc.mode {
        Convection::NavierStokes => {
            match p
                .sys
                .solve_state(&q, &p.u0, &grid, &p.rc.solver_config())
                .map_err(|e| e.to_string())?
            {
                StateOutcome::Completed(t) => (t, None),
                StateOutcome::Blowup { report, partial } => (partial, Some(report)),
            }
        }
        Convection::Off => (
            p.sys
                .solve_state_stokes(&q, &p.u0, &grid)
                .map_err(|e| e.to_string())?,
            None,
        ),
    };

    let csv = output::flowrate_csv(&p.sys, &traj, blowup.as_ref());
    output::write_text(&common.out.join("flowrate.csv"), &csv).map_err(|e| e.to_string())?;
    dump_vtk(&p, &traj, &common.out, every)?;

    match blowup {
        Some(report) => {
            println!(
                "blowup at t = {} ({}); flowrate.csv holds rows up to t*",
                report.t_star, report.trigger
            );
            Ok(ExitCode::from(3))
        }
        None => {
            println!(
                "completed; final flowrate {}",
                p.sys.flowrate(traj.velocity.last().unwrap())
            );
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn cmd_optimize(
    common: &CommonArgs,
    vtk_every: Option<usize>,
    sweep: Option<String>,
) -> Result<ExitCode, String> {
    let alphas: Vec<Option<(String, f64)>> = match &sweep {
        None => vec![None],
        Some(spec) => {
            let list = spec
                .strip_prefix("alpha=")
                .ok_or_else(|| format!("--sweep expects alpha=<list>, got `{spec}`"))?;
            list.split(',')
                .map(|s| {
                    let v: f64 = s
                        .trim()
                        .parse()
                        .map_err(|e| format!("bad alpha `{s}`: {e}"))?;
                    Ok(Some((s.trim().to_string(), v)))
                })
                .collect::<Result<Vec<_>, String>>()?
        }
    };

    if alphas.len() == 1 {
        let alpha = alphas.into_iter().next().unwrap();
        return run_one_optimization(common, vtk_every, alpha);
    }
    // Independent optimizations of the sweep run concurrently; each writes
    // its own suffixed files and shares nothing mutable.
    let mut handles = Vec::new();
    for alpha in alphas {
        let common = CommonArgs {
            config: common.config.clone(),
            out: common.out.clone(),
        };
        handles.push(std::thread::spawn(move || {
            run_one_optimization(&common, vtk_every, alpha)
        }));
    }
    let mut worst = ExitCode::SUCCESS;
    for h in handles {
        match h.join().map_err(|_| "sweep worker panicked".to_string())? {
            Ok(code) if code == ExitCode::SUCCESS => {}
            Ok(code) => worst = code,
            Err(msg) => return Err(msg),
        }
    }
    Ok(worst)
}

fn run_one_optimization(
    common: &CommonArgs,
    vtk_every: Option<usize>,
    alpha_override: Option<(String, f64)>,
) -> Result<ExitCode, String> {
    let mut rc = RunConfig::load(&common.config).map_err(|e| e.to_string())?;
    let suffix = match &alpha_override {
        Some((label, value)) => {
            rc.alpha = *value;
            format!("_alpha{label}")
        }
        None => String::new(),
    };
    let p = problem_from(rc)?;
    let Some(q0_values) = p.rc.q0.clone() else {
        return Err("optimizer.q0 is required for `optimize`".into());
    };
    let grid = p.rc.time_grid();
    let q0 = ControlVector::constant(&q0_values, grid.steps);
    let data = objective_data(&p)?;
    let bounds = p.rc.bounds().map_err(|e| e.to_string())?;
    std::fs::create_dir_all(&common.out).map_err(|e| e.to_string())?;

    let result = match optimize(
        &p.sys,
        &q0,
        &p.u0,
        &grid,
        &data,
        &bounds,
        &p.rc.optimizer_config(),
        &p.rc.solver_config(),
        p.rc.mode,
    ) {
        Ok(r) => r,
        Err(OptimalError::Blowup { report, .. }) => {
            eprintln!(
                "the state blows up at t = {} for the starting control; \
                 supply a stabilizing optimizer.q0 (an opposing pressure drop)",
                report.t_star
            );
            return Ok(ExitCode::from(4));
        }
        Err(e) => return Err(e.to_string()),
    };

    output::write_text(
        &common.out.join(format!("control{suffix}.csv")),
        &output::control_csv(&grid, &result.q),
    )
    .map_err(|e| e.to_string())?;
    output::write_text(
        &common.out.join(format!("iterations{suffix}.csv")),
        &output::iterations_csv(&result.iterations),
    )
    .map_err(|e| e.to_string())?;

    // Forward solve of the optimal control for the flowrate series.
    let (traj, blowup) = match p
        .sys
        .solve_state(&result.q, &p.u0, &grid, &p.rc.solver_config())
        .map_err(|e| e.to_string())?
    {
        StateOutcome::Completed(t) => (t, None),
        StateOutcome::Blowup { report, partial } => (partial, Some(report)),
    };
    output::write_text(
        &common.out.join(format!("flowrate{suffix}.csv")),
        &output::flowrate_csv(&p.sys, &traj, blowup.as_ref()),
    )
    .map_err(|e| e.to_string())?;
    dump_vtk(&p, &traj, &common.out, vtk_every.unwrap_or(p.rc.vtk_every))?;

    let last = result.iterations.last().unwrap();
    println!(
        "alpha {}: {} after {} iterations, j = {}, stationarity = {:.3e}{}",
        p.rc.alpha,
        match result.status {
            OptimizeStatus::Converged => "converged",
            OptimizeStatus::MaxIterations => "iteration budget exhausted",
            OptimizeStatus::LineSearchFailed => "line search stalled",
        },
        last.iter,
        result.final_objective,
        last.stationarity,
        if blowup.is_some() {
            " (warning: optimal state blows up)"
        } else {
            ""
        }
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradient_check(
    common: &CommonArgs,
    seed: u64,
    corrupt_sign: bool,
) -> Result<ExitCode, String> {
    let p = load_problem(common)?;
    let grid = p.rc.time_grid();
    let data = objective_data(&p)?;
    let bounds = p.rc.bounds().map_err(|e| e.to_string())?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Random feasible base control around the configured constant.
    let mut q = ControlVector::constant(&p.rc.q, grid.steps);
    for i in 0..q.segments() {
        for n in 0..grid.steps {
            *q.value_mut(i, n) += rng.gen_range(-1.0..1.0);
        }
    }
    let q = dncontrol::optimal::project(&q, &bounds);
    let directions: Vec<ControlVector> = (0..5)
        .map(|_| {
            ControlVector::from_values(
                2,
                grid.steps,
                (0..2 * grid.steps).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
        })
        .collect();

    let sign = if corrupt_sign { -1.0 } else { 1.0 };
    let check = match verify::gradient_fd_sweep(
        &p.sys,
        &q,
        &p.u0,
        &grid,
        &data,
        &p.rc.solver_config(),
        p.rc.mode,
        &directions,
        sign,
    ) {
        Ok(c) => c,
        Err(msg) if msg.contains("blows up") => {
            eprintln!("{msg}; pick a tamer configuration for the gradient check");
            return Ok(ExitCode::from(4));
        }
        Err(msg) => return Err(msg),
    };

    let per_direction = check.rows.len() / directions.len();
    for (d, chunk) in check.rows.chunks(per_direction).enumerate() {
        println!("direction {d}: eps, relative error");
        for (eps, rel) in chunk {
            println!("  {eps:9.1e}  {rel:.3e}");
        }
    }
    let pass = check.worst_best <= 1e-6;
    println!(
        "worst best-over-eps relative error: {:.3e} -> {}",
        check.worst_best,
        if pass { "PASS" } else { "FAIL" }
    );
    Ok(if pass { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn cmd_verify(profile: ProfileArg, report: Option<PathBuf>) -> Result<ExitCode, String> {
    let profile = match profile {
        ProfileArg::Quick => Profile::Quick,
        ProfileArg::Full => Profile::Full,
    };
    let result = verify::run_all(profile);
    print!("{}", result.human_readable());
    if let Some(path) = report {
        output::write_text(&path, &result.csv()).map_err(|e| e.to_string())?;
    }
    Ok(if result.all_passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}
