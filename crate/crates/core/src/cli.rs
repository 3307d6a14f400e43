//! Batch command line: `convergence`, `cavity` and `solve`.

use std::cell::RefCell;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use crate::cavity::solve_cavity;
use crate::config::{config_error, parse_tol_mode, ExportFormat, Experiment, RunConfig};
use crate::control::{vi_residual, OptResult};
use crate::error::{Error, Result};
use crate::export::{write_csv_points, write_file, write_vtk, FieldBundle};
use crate::fem::{boundary_interpolate, P0Field};
use crate::mesh::{build_unit_square_mesh, Mesh};
use crate::params::{scaled, Buoyancy, ProblemParams, Viscosity, IDENTITY};
use crate::state::{solve_state, StateData, StateSolution};
use crate::verification::{run_convergence_study_with, ManufacturedCase, Regime, ERROR_NAMES};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NONCONVERGENCE: i32 = 3;
pub const EXIT_IO: i32 = 4;

/// Environment variable capping the worker threads.
pub const THREADS_VAR: &str = "DDOPT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "ddopt", version, about = "Optimal control of doubly diffusive flows with nonconforming elements")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Manufactured-solution study on successively refined meshes.
    Convergence,
    /// Controlled porous cavity with Soret and Dufour effects.
    Cavity,
    /// One forward solve.
    Solve,
}

impl Command {
    pub fn experiment(&self) -> Experiment {
        match self {
            Command::Convergence => Experiment::Convergence,
            Command::Cavity => Experiment::Cavity,
            Command::Solve => Experiment::Solve,
        }
    }
}

/// Flags that take precedence over the configuration file.
#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["flow", "stokes", "darcy"])]
    pub regime: Option<String>,
    #[arg(long, global = true)]
    pub levels: Option<usize>,
    #[arg(long, global = true)]
    pub n: Option<usize>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub da: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub ra: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub lbound: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub ubound: Option<f64>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    #[arg(long = "tol-mode", global = true, value_parser = ["abs", "rel"])]
    pub tol_mode: Option<String>,
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = ["csv", "vtk"])]
    pub export: Option<String>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> Result<()> {
        if let Some(r) = &self.regime {
            cfg.regime = r.parse()?;
        }
        if let Some(v) = self.levels {
            cfg.levels = v;
        }
        if let Some(v) = self.n {
            cfg.n = v;
        }
        if let Some(v) = self.da {
            cfg.cavity.da = v;
        }
        if let Some(v) = self.ra {
            cfg.cavity.ra = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.lbound {
            cfg.lbound = v;
        }
        if let Some(v) = self.ubound {
            cfg.ubound = v;
        }
        if let Some(v) = self.tol {
            cfg.tol = v;
        }
        if let Some(m) = &self.tol_mode {
            cfg.tol_mode = parse_tol_mode(m).map_err(config_error)?;
        }
        if let Some(o) = &self.out {
            cfg.out = o.clone();
        }
        if let Some(e) = &self.export {
            cfg.export = e.parse().map_err(config_error)?;
        }
        Ok(())
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e.root() {
        Error::Parse { .. } | Error::InvalidArgument(_) => EXIT_CONFIG,
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_NONCONVERGENCE,
    }
}

/// Sizes the global worker pool from [`THREADS_VAR`]. Unset or empty
/// leaves the default.
pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    if raw.trim().is_empty() {
        return Ok(());
    }
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| config_error(format!("{THREADS_VAR} must be a positive integer, got '{raw}'")))?;
    if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
        warn!("thread pool already initialized; {THREADS_VAR} ignored");
    }
    Ok(())
}

/// Builds the effective configuration for a subcommand.
pub fn resolve_config(command: Command, overrides: &Overrides) -> Result<RunConfig> {
    let experiment = command.experiment();
    let mut cfg = match &overrides.config {
        Some(path) => RunConfig::load(path, experiment)?,
        None => RunConfig::new(experiment),
    };
    cfg.experiment = experiment;
    overrides.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

/// Runs the CLI and returns the process exit status.
pub fn run(cli: &Cli) -> i32 {
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    configure_threads()?;
    let cfg = resolve_config(cli.command, &cli.overrides)?;
    run_config(&cfg)
}

/// Runs the experiment named in `cfg`, writing everything under `cfg.out`.
pub fn run_config(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    write_file(&cfg.out.join("config.ini"), &cfg.serialize())?;
    let result = match cfg.experiment {
        Experiment::Convergence => run_convergence(cfg),
        Experiment::Cavity => run_cavity(cfg),
        Experiment::Solve => run_solve(cfg),
    };
    if let Err(e) = &result {
        if exit_code(e) == EXIT_NONCONVERGENCE {
            write_file(&cfg.out.join("failure.txt"), &diagnostic(cfg, e))?;
        }
    }
    result
}

fn diagnostic(cfg: &RunConfig, e: &Error) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "experiment: {}", cfg.experiment.name());
    let _ = writeln!(s, "error: {e}");
    if let Error::Level { level, .. } = e {
        let _ = writeln!(s, "level: {level}");
    }
    match e.root() {
        Error::NonConvergence { iterations, last, history } => {
            let _ = writeln!(s, "iterations: {iterations}\nlast: {last:e}");
            let _ = writeln!(s, "history:");
            for h in history {
                let _ = writeln!(s, "{h:e}");
            }
        }
        Error::Diverged { iteration } => {
            let _ = writeln!(s, "diverged at iteration {iteration}");
        }
        _ => {}
    }
    s
}

fn export(cfg: &RunConfig, b: &FieldBundle<'_>, stem: &str, title: &str) -> Result<PathBuf> {
    let path = cfg.out.join(format!("{stem}.{}", cfg.export.extension()));
    match cfg.export {
        ExportFormat::Csv => write_csv_points(b, &path)?,
        ExportFormat::Vtk => write_vtk(b, &path, title)?,
    }
    Ok(path)
}

fn bundle<'a>(mesh: &'a Mesh, state: &'a StateSolution, control: &'a P0Field) -> FieldBundle<'a> {
    FieldBundle {
        mesh,
        u: &state.u,
        p: &state.p,
        y: &state.y,
        control,
    }
}

fn run_convergence(cfg: &RunConfig) -> Result<()> {
    let regime: Regime = cfg.regime;
    let case = ManufacturedCase {
        lambda: cfg.lambda,
        bounds: cfg.bounds(),
        ..ManufacturedCase::new(regime)
    };
    let export_error: RefCell<Option<Error>> = RefCell::new(None);
    let report = run_convergence_study_with(&case, regime, cfg.n, cfg.levels, &cfg.pdas(), |level, mesh, opt| {
        let title = format!("{} level {level}", regime.name());
        if let Err(e) = export(cfg, &bundle(mesh, &opt.state, &opt.control), &format!("level_{level}"), &title) {
            export_error.borrow_mut().get_or_insert(e);
        }
    })?;
    if let Some(e) = export_error.into_inner() {
        return Err(e);
    }
    let path = cfg.out.join("errors.csv");
    write_file(&path, &report.to_csv())?;
    let mut line = format!("{} final-pair rates:", regime.name());
    for name in ERROR_NAMES {
        let _ = write!(line, " {name} {:.3}", report.final_rate(name)?);
    }
    println!("{line}");
    println!("wrote {}", path.display());
    Ok(())
}

/// Iteration log of an optimization run; the last line is `converged in N`.
pub fn iteration_log(opt: &OptResult) -> String {
    let mut s = String::from("iteration,cost,change,lower,upper\n");
    for (i, ((j, dc), sets)) in opt
        .cost_history
        .iter()
        .zip(&opt.change_history)
        .zip(&opt.active_set_history)
        .enumerate()
    {
        let _ = writeln!(
            s,
            "{},{j:e},{dc:e},{},{}",
            i + 1,
            sets.count(crate::control::Label::Lower),
            sets.count(crate::control::Label::Upper)
        );
    }
    let _ = writeln!(s, "converged in {}", opt.iterations);
    s
}

fn run_cavity(cfg: &RunConfig) -> Result<()> {
    let mesh = build_unit_square_mesh(cfg.n)?;
    let case = cfg.cavity_case();
    let coeffs = case.coefficients()?;
    info!(
        "cavity Da = {:e}, Gr_T = {:e}, Gr_C = {:e}, Sc = {}",
        case.da, coeffs.gr_t, coeffs.gr_c, coeffs.sc
    );
    let opt = solve_cavity(&mesh, &case, &cfg.cavity_settings())?;
    let params = crate::cavity::derive_cavity_coefficients(&case)?;
    let title = format!("cavity Da={:e}", case.da);
    let path = export(cfg, &bundle(&mesh, &opt.state, &opt.control), "cavity", &title)?;
    write_file(&cfg.out.join("iterations.log"), &iteration_log(&opt))?;
    println!(
        "cavity Da = {:e}: converged in {} (VI residual {:.3e}), wrote {}",
        case.da,
        opt.iterations,
        vi_residual(&mesh, &opt.control, &opt.adjoint, &params),
        path.display()
    );
    Ok(())
}

/// Parameters and data of the `solve` experiment.
pub fn solve_problem(cfg: &RunConfig, mesh: &Mesh) -> (ProblemParams, StateData, P0Field) {
    let s = cfg.solve;
    let params = ProblemParams {
        kinv: scaled(&IDENTITY, s.sigma),
        viscosity: Viscosity::Constant(s.nu),
        diffusion: s.diffusion,
        buoyancy: Buoyancy::grashof(s.gr_t, s.gr_c, [0.0, -1.0]),
        lambda: cfg.lambda,
        bounds: cfg.bounds(),
        penalty: None,
    };
    let trace = boundary_interpolate(
        mesh,
        2,
        |x| if x[0] < 0.5 { s.wall_left.to_vec() } else { s.wall_right.to_vec() },
        crate::cavity::CavityCase::is_vertical_wall,
    );
    let data = StateData::new(mesh, trace);
    let control = P0Field::constant(mesh, &s.control);
    (params, data, control)
}

fn run_solve(cfg: &RunConfig) -> Result<()> {
    let mesh = build_unit_square_mesh(cfg.n)?;
    let (params, data, control) = solve_problem(cfg, &mesh);
    let state = solve_state(&mesh, &params, &data, &control, &cfg.nonlinear())?;
    let path = export(cfg, &bundle(&mesh, &state, &control), "solve", "forward solve")?;
    println!(
        "solve: {} iterations, max|div u| {:.3e}, wrote {}",
        state.iterations,
        state.u.max_div(&mesh),
        path.display()
    );
    Ok(())
}

/// Path of the field file a run writes for `stem`.
pub fn output_path(cfg: &RunConfig, stem: &str) -> PathBuf {
    Path::new(&cfg.out).join(format!("{stem}.{}", cfg.export.extension()))
}
