//! Run configuration: `key = value` lines grouped under `[section]` headers.
//!
//! ```text
//! [run]
//! experiment = cavity
//! out = results
//!
//! [cavity]
//! da = 1e-7
//! ```
//!
//! `#` and `;` start comments. Keys outside any section are rejected.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::cavity::{CavityCase, CavitySettings};
use crate::control::{PdasSettings, ToleranceMode};
use crate::error::{Error, Result};
use crate::params::Bounds;
use crate::state::{NonlinearMethod, NonlinearSettings};
use crate::verification::Regime;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    Convergence,
    Cavity,
    Solve,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Convergence => "convergence",
            Experiment::Cavity => "cavity",
            Experiment::Solve => "solve",
        }
    }
}

impl FromStr for Experiment {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "convergence" => Ok(Experiment::Convergence),
            "cavity" => Ok(Experiment::Cavity),
            "solve" => Ok(Experiment::Solve),
            _ => Err(format!("unknown experiment '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    Csv,
    Vtk,
}

impl ExportFormat {
    pub fn name(&self) -> &'static str {
        match self {
            ExportFormat::Csv => "csv",
            ExportFormat::Vtk => "vtk",
        }
    }

    pub fn extension(&self) -> &'static str {
        self.name()
    }
}

impl FromStr for ExportFormat {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "csv" => Ok(ExportFormat::Csv),
            "vtk" => Ok(ExportFormat::Vtk),
            _ => Err(format!("unknown export format '{s}' (csv or vtk)")),
        }
    }
}

fn method_name(m: NonlinearMethod) -> &'static str {
    match m {
        NonlinearMethod::Picard => "picard",
        NonlinearMethod::Newton => "newton",
        NonlinearMethod::Hybrid => "hybrid",
    }
}

fn parse_method(s: &str) -> std::result::Result<NonlinearMethod, String> {
    match s {
        "picard" => Ok(NonlinearMethod::Picard),
        "newton" => Ok(NonlinearMethod::Newton),
        "hybrid" => Ok(NonlinearMethod::Hybrid),
        _ => Err(format!("unknown method '{s}' (picard, newton or hybrid)")),
    }
}

pub fn parse_tol_mode(s: &str) -> std::result::Result<ToleranceMode, String> {
    match s {
        "abs" => Ok(ToleranceMode::Absolute),
        "rel" => Ok(ToleranceMode::Relative),
        _ => Err(format!("unknown tolerance mode '{s}' (abs or rel)")),
    }
}

fn tol_mode_name(m: ToleranceMode) -> &'static str {
    match m {
        ToleranceMode::Absolute => "abs",
        ToleranceMode::Relative => "rel",
    }
}

/// Coefficients of a single forward solve on the unit square. With the
/// defaults all data vanish.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolveProblem {
    /// `K⁻¹ = σ I`.
    pub sigma: f64,
    pub nu: f64,
    pub diffusion: [[f64; 2]; 2],
    pub gr_t: f64,
    pub gr_c: f64,
    /// Constant control.
    pub control: [f64; 2],
    /// `(T, S)` on the left and right walls.
    pub wall_left: [f64; 2],
    pub wall_right: [f64; 2],
}

impl Default for SolveProblem {
    fn default() -> Self {
        SolveProblem {
            sigma: 1.0,
            nu: 1.0,
            diffusion: [[1.0, 0.0], [0.0, 1.0]],
            gr_t: 0.0,
            gr_c: 0.0,
            control: [0.0, 0.0],
            wall_left: [0.0, 0.0],
            wall_right: [0.0, 0.0],
        }
    }
}

/// Everything a CLI run needs. Bounds and `λ` live here rather than in the
/// cavity case and are copied into it on use.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub out: PathBuf,
    pub export: ExportFormat,
    pub regime: Regime,
    /// Coarsest (or only) mesh size.
    pub n: usize,
    pub levels: usize,
    pub cavity: CavityCase,
    pub solve: SolveProblem,
    pub lambda: f64,
    pub lbound: f64,
    pub ubound: f64,
    pub tol: f64,
    pub tol_mode: ToleranceMode,
    pub max_iter: usize,
    pub method: NonlinearMethod,
    pub state_tol: f64,
    pub state_max_iter: usize,
    pub damping: f64,
    /// Cavity jump penalty factor; 0 disables it.
    pub penalty: f64,
    pub continuation: bool,
}

impl RunConfig {
    /// Defaults for one experiment.
    pub fn new(experiment: Experiment) -> Self {
        let cavity = CavityCase::default();
        let cs = CavitySettings::default();
        let (n, lbound, ubound, tol, tol_mode, method) = match experiment {
            Experiment::Cavity => (
                64,
                cavity.bounds.lower[0],
                cavity.bounds.upper[0],
                cs.pdas.tol,
                ToleranceMode::Relative,
                NonlinearMethod::Newton,
            ),
            _ => (8, -0.1, 0.25, 1e-8, ToleranceMode::Absolute, NonlinearMethod::Hybrid),
        };
        RunConfig {
            experiment,
            out: PathBuf::from("out"),
            export: ExportFormat::Csv,
            regime: Regime::Flow,
            n,
            levels: 4,
            cavity,
            solve: SolveProblem::default(),
            lambda: 1.0,
            lbound,
            ubound,
            tol,
            tol_mode,
            max_iter: 50,
            method,
            state_tol: 1e-10,
            state_max_iter: 100,
            damping: 1.0,
            penalty: cs.penalty_factor.unwrap_or(0.0),
            continuation: cs.continuation,
        }
    }

    pub fn bounds(&self) -> Bounds {
        Bounds::uniform(self.lbound, self.ubound)
    }

    pub fn nonlinear(&self) -> NonlinearSettings {
        NonlinearSettings {
            tol: self.state_tol,
            max_iter: self.state_max_iter,
            damping: self.damping,
            method: self.method,
            ..NonlinearSettings::default()
        }
    }

    pub fn pdas(&self) -> PdasSettings {
        PdasSettings {
            tol: self.tol,
            tol_mode: self.tol_mode,
            max_iter: self.max_iter,
            nonlinear: self.nonlinear(),
        }
    }

    pub fn cavity_case(&self) -> CavityCase {
        CavityCase {
            lambda: self.lambda,
            bounds: self.bounds(),
            ..self.cavity
        }
    }

    pub fn cavity_settings(&self) -> CavitySettings {
        CavitySettings {
            pdas: self.pdas(),
            penalty_factor: (self.penalty > 0.0).then_some(self.penalty),
            continuation: self.continuation,
        }
    }

    /// Checks the invariants that parsing alone does not enforce.
    pub fn validate(&self) -> Result<()> {
        let c = &self.cavity;
        let s = &self.solve;
        let d = s.diffusion;
        let numbers = [
            ("cavity.da", c.da),
            ("cavity.ra", c.ra),
            ("cavity.pr", c.pr),
            ("cavity.le", c.le),
            ("cavity.sr", c.sr),
            ("cavity.du", c.du),
            ("cavity.rk", c.rk),
            ("cavity.ratio", c.ratio),
            ("cavity.wall_left", c.wall.0),
            ("cavity.wall_right", c.wall.1),
            ("solve.sigma", s.sigma),
            ("solve.nu", s.nu),
            ("solve.d11", d[0][0]),
            ("solve.d12", d[0][1]),
            ("solve.d21", d[1][0]),
            ("solve.d22", d[1][1]),
            ("solve.gr_t", s.gr_t),
            ("solve.gr_c", s.gr_c),
            ("solve.u1", s.control[0]),
            ("solve.u2", s.control[1]),
            ("solve.t_left", s.wall_left[0]),
            ("solve.s_left", s.wall_left[1]),
            ("solve.t_right", s.wall_right[0]),
            ("solve.s_right", s.wall_right[1]),
            ("control.lambda", self.lambda),
            ("control.lbound", self.lbound),
            ("control.ubound", self.ubound),
            ("solver.tol", self.tol),
            ("solver.state_tol", self.state_tol),
            ("solver.damping", self.damping),
            ("solver.penalty", self.penalty),
        ];
        for (name, v) in numbers {
            if !v.is_finite() {
                return Err(config_error(format!("{name} must be finite")));
            }
        }
        if self.lbound > self.ubound {
            return Err(config_error(format!(
                "bounds out of order: lbound {} > ubound {}",
                self.lbound, self.ubound
            )));
        }
        if !(self.lambda > 0.0) {
            return Err(config_error("lambda must be positive"));
        }
        if self.n == 0 {
            return Err(config_error("n must be at least 1"));
        }
        if self.experiment == Experiment::Convergence && self.levels < 2 {
            return Err(config_error("a convergence study needs levels ≥ 2"));
        }
        if !(self.tol > 0.0) || !(self.state_tol > 0.0) || self.max_iter == 0 || self.state_max_iter == 0 {
            return Err(config_error("tolerances and iteration limits must be positive"));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(config_error("damping must lie in (0, 1]"));
        }
        if self.penalty < 0.0 {
            return Err(config_error("penalty must be non-negative"));
        }
        if !(c.da > 0.0) || !(c.pr > 0.0) || !(c.le > 0.0) {
            return Err(config_error("cavity Da, Pr and Le must be positive"));
        }
        if !(s.sigma >= 0.0) || !(s.nu > 0.0) {
            return Err(config_error("solve needs sigma ≥ 0 and nu > 0"));
        }
        Ok(())
    }

    /// Parses configuration text on top of the defaults of the experiment
    /// it names (`[run] experiment`, else `fallback`).
    pub fn parse(text: &str, fallback: Experiment) -> Result<Self> {
        let entries = tokenize(text)?;
        let experiment = match entries.iter().rev().find(|e| e.section == "run" && e.key == "experiment") {
            Some(e) => e.value.parse().map_err(|m| parse_error(e.line, m))?,
            None => fallback,
        };
        let mut cfg = RunConfig::new(experiment);
        for e in &entries {
            cfg.set(&e.section, &e.key, &e.value).map_err(|m| parse_error(e.line, m))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path, fallback: Experiment) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, fallback)
    }

    /// Sets one recognized key from its text form.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(key: &str, v: &str) -> std::result::Result<T, String> {
            v.parse().map_err(|_| format!("invalid value '{v}' for {key}"))
        }
        let v = value;
        match (section, key) {
            ("run", "experiment") => self.experiment = v.parse()?,
            ("run", "out") => self.out = PathBuf::from(v),
            ("run", "export") => self.export = v.parse()?,
            ("mesh", "n") => self.n = num(key, v)?,
            ("mesh", "levels") => self.levels = num(key, v)?,
            ("convergence", "regime") => self.regime = v.parse().map_err(|e: Error| e.to_string())?,
            ("cavity", "da") => self.cavity.da = num(key, v)?,
            ("cavity", "ra") => self.cavity.ra = num(key, v)?,
            ("cavity", "pr") => self.cavity.pr = num(key, v)?,
            ("cavity", "le") => self.cavity.le = num(key, v)?,
            ("cavity", "sr") => self.cavity.sr = num(key, v)?,
            ("cavity", "du") => self.cavity.du = num(key, v)?,
            ("cavity", "rk") => self.cavity.rk = num(key, v)?,
            ("cavity", "ratio") => self.cavity.ratio = num(key, v)?,
            ("cavity", "wall_left") => self.cavity.wall.0 = num(key, v)?,
            ("cavity", "wall_right") => self.cavity.wall.1 = num(key, v)?,
            ("cavity", "continuation") => self.continuation = num(key, v)?,
            ("solve", "sigma") => self.solve.sigma = num(key, v)?,
            ("solve", "nu") => self.solve.nu = num(key, v)?,
            ("solve", "d11") => self.solve.diffusion[0][0] = num(key, v)?,
            ("solve", "d12") => self.solve.diffusion[0][1] = num(key, v)?,
            ("solve", "d21") => self.solve.diffusion[1][0] = num(key, v)?,
            ("solve", "d22") => self.solve.diffusion[1][1] = num(key, v)?,
            ("solve", "gr_t") => self.solve.gr_t = num(key, v)?,
            ("solve", "gr_c") => self.solve.gr_c = num(key, v)?,
            ("solve", "u1") => self.solve.control[0] = num(key, v)?,
            ("solve", "u2") => self.solve.control[1] = num(key, v)?,
            ("solve", "t_left") => self.solve.wall_left[0] = num(key, v)?,
            ("solve", "s_left") => self.solve.wall_left[1] = num(key, v)?,
            ("solve", "t_right") => self.solve.wall_right[0] = num(key, v)?,
            ("solve", "s_right") => self.solve.wall_right[1] = num(key, v)?,
            ("control", "lambda") => self.lambda = num(key, v)?,
            ("control", "lbound") => self.lbound = num(key, v)?,
            ("control", "ubound") => self.ubound = num(key, v)?,
            ("solver", "tol") => self.tol = num(key, v)?,
            ("solver", "tol_mode") => self.tol_mode = parse_tol_mode(v)?,
            ("solver", "max_iter") => self.max_iter = num(key, v)?,
            ("solver", "method") => self.method = parse_method(v)?,
            ("solver", "state_tol") => self.state_tol = num(key, v)?,
            ("solver", "state_max_iter") => self.state_max_iter = num(key, v)?,
            ("solver", "damping") => self.damping = num(key, v)?,
            ("solver", "penalty") => self.penalty = num(key, v)?,
            _ => return Err(format!("unknown key '{key}' in section [{section}]")),
        }
        Ok(())
    }

    /// Writes every recognized key. Parsing the result gives back `self`.
    pub fn serialize(&self) -> String {
        let c = &self.cavity;
        let s = &self.solve;
        let mut out = String::new();
        let _ = writeln!(out, "[run]");
        let _ = writeln!(out, "experiment = {}", self.experiment.name());
        let _ = writeln!(out, "out = {}", self.out.display());
        let _ = writeln!(out, "export = {}", self.export.name());
        let _ = writeln!(out, "\n[mesh]\nn = {}\nlevels = {}", self.n, self.levels);
        let _ = writeln!(out, "\n[convergence]\nregime = {}", self.regime.name());
        let _ = writeln!(out, "\n[cavity]");
        for (k, v) in [
            ("da", c.da),
            ("ra", c.ra),
            ("pr", c.pr),
            ("le", c.le),
            ("sr", c.sr),
            ("du", c.du),
            ("rk", c.rk),
            ("ratio", c.ratio),
            ("wall_left", c.wall.0),
            ("wall_right", c.wall.1),
        ] {
            let _ = writeln!(out, "{k} = {v:?}");
        }
        let _ = writeln!(out, "continuation = {}", self.continuation);
        let _ = writeln!(out, "\n[solve]");
        for (k, v) in [
            ("sigma", s.sigma),
            ("nu", s.nu),
            ("d11", s.diffusion[0][0]),
            ("d12", s.diffusion[0][1]),
            ("d21", s.diffusion[1][0]),
            ("d22", s.diffusion[1][1]),
            ("gr_t", s.gr_t),
            ("gr_c", s.gr_c),
            ("u1", s.control[0]),
            ("u2", s.control[1]),
            ("t_left", s.wall_left[0]),
            ("s_left", s.wall_left[1]),
            ("t_right", s.wall_right[0]),
            ("s_right", s.wall_right[1]),
        ] {
            let _ = writeln!(out, "{k} = {v:?}");
        }
        let _ = writeln!(
            out,
            "\n[control]\nlambda = {:?}\nlbound = {:?}\nubound = {:?}",
            self.lambda, self.lbound, self.ubound
        );
        let _ = writeln!(out, "\n[solver]");
        let _ = writeln!(out, "tol = {:?}", self.tol);
        let _ = writeln!(out, "tol_mode = {}", tol_mode_name(self.tol_mode));
        let _ = writeln!(out, "max_iter = {}", self.max_iter);
        let _ = writeln!(out, "method = {}", method_name(self.method));
        let _ = writeln!(out, "state_tol = {:?}", self.state_tol);
        let _ = writeln!(out, "state_max_iter = {}", self.state_max_iter);
        let _ = writeln!(out, "damping = {:?}", self.damping);
        let _ = writeln!(out, "penalty = {:?}", self.penalty);
        out
    }
}

fn parse_error(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

/// A configuration problem found after parsing.
pub fn config_error(message: impl Into<String>) -> Error {
    Error::InvalidArgument(format!("config: {}", message.into()))
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Entry {
    line: usize,
    section: String,
    key: String,
    value: String,
}

fn tokenize(text: &str) -> Result<Vec<Entry>> {
    let mut section: Option<String> = None;
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let body = raw.split(['#', ';']).next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        if let Some(rest) = body.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .ok_or_else(|| parse_error(line, format!("malformed section header '{body}'")))?;
            section = Some(name.to_ascii_lowercase());
            continue;
        }
        let (key, value) = body
            .split_once('=')
            .ok_or_else(|| parse_error(line, format!("expected key = value, found '{body}'")))?;
        let key = key.trim().to_ascii_lowercase();
        let value = value.trim().to_string();
        if key.is_empty() || value.is_empty() {
            return Err(parse_error(line, "empty key or value"));
        }
        let section = section
            .clone()
            .ok_or_else(|| parse_error(line, format!("key '{key}' outside any section")))?;
        out.push(Entry {
            line,
            section,
            key,
            value,
        });
    }
    Ok(out)
}
