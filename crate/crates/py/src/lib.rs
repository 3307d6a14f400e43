//! Python bindings: meshes, the manufactured study, the cavity and the CLI.

use std::collections::BTreeMap;
use std::path::PathBuf;

use clap::Parser;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ddopt_core::cavity::{self, CavityCase, CavitySettings};
use ddopt_core::cli::{run, Cli};
use ddopt_core::control::{self, OptResult, PdasSettings, ToleranceMode};
use ddopt_core::export::{self, FieldBundle};
use ddopt_core::fem::P0Field;
use ddopt_core::mesh::{self, Mesh};
use ddopt_core::params::{Bounds, ProblemParams};
use ddopt_core::state::{NonlinearMethod, NonlinearSettings};
use ddopt_core::verification::{self, ManufacturedCase, Regime, ERROR_NAMES};
use ddopt_core::Error;

fn to_py(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.root() {
        Error::InvalidArgument(_) | Error::Parse { .. } => PyValueError::new_err(msg),
        Error::Io { .. } => PyOSError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn regime(name: &str) -> PyResult<Regime> {
    name.parse().map_err(to_py)
}

fn tol_mode(name: &str) -> PyResult<ToleranceMode> {
    match name {
        "abs" => Ok(ToleranceMode::Absolute),
        "rel" => Ok(ToleranceMode::Relative),
        _ => Err(PyValueError::new_err(format!("tol_mode must be 'abs' or 'rel', got '{name}'"))),
    }
}

/// Triangulation of the unit square.
#[pyclass(name = "Mesh", module = "ddopt", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyMesh {
    inner: Mesh,
}

#[pymethods]
impl PyMesh {
    /// `n × n` squares, each split into two triangles.
    #[staticmethod]
    fn unit_square(n: usize) -> PyResult<Self> {
        Ok(PyMesh {
            inner: mesh::build_unit_square_mesh(n).map_err(to_py)?,
        })
    }

    fn refine(&self) -> Self {
        PyMesh {
            inner: self.inner.refine_uniform(),
        }
    }

    #[getter]
    fn num_cells(&self) -> usize {
        self.inner.num_cells()
    }

    #[getter]
    fn num_edges(&self) -> usize {
        self.inner.num_edges()
    }

    #[getter]
    fn num_vertices(&self) -> usize {
        self.inner.num_vertices()
    }

    #[getter]
    fn h_max(&self) -> f64 {
        self.inner.stats().h_max
    }

    #[getter]
    fn vertices(&self) -> Vec<(f64, f64)> {
        self.inner.vertices.iter().map(|p| (p[0], p[1])).collect()
    }

    #[getter]
    fn cells(&self) -> Vec<(usize, usize, usize)> {
        self.inner.cells.iter().map(|c| (c[0], c[1], c[2])).collect()
    }

    fn __repr__(&self) -> String {
        format!(
            "Mesh(cells={}, edges={}, vertices={})",
            self.inner.num_cells(),
            self.inner.num_edges(),
            self.inner.num_vertices()
        )
    }
}

/// Cavity parameters. Defaults: Da 1e-3, Ra 100, Pr 0.71, Le 10, Sr 0,
/// Du 0.1, R_k 1, N 1, λ 1, bounds ±0.005.
#[pyclass(name = "CavityCase", module = "ddopt", get_all, set_all, skip_from_py_object)]
#[derive(Clone)]
pub struct PyCavityCase {
    da: f64,
    ra: f64,
    pr: f64,
    le: f64,
    sr: f64,
    du: f64,
    rk: f64,
    ratio: f64,
    lam: f64,
    lbound: f64,
    ubound: f64,
}

impl PyCavityCase {
    fn case(&self) -> CavityCase {
        CavityCase {
            da: self.da,
            ra: self.ra,
            pr: self.pr,
            le: self.le,
            sr: self.sr,
            du: self.du,
            rk: self.rk,
            ratio: self.ratio,
            lambda: self.lam,
            bounds: Bounds::uniform(self.lbound, self.ubound),
            ..CavityCase::default()
        }
    }
}

#[pymethods]
impl PyCavityCase {
    #[new]
    #[pyo3(signature = (da = 1e-3, ra = 100.0, pr = 0.71, le = 10.0, sr = 0.0, du = 0.1, rk = 1.0, ratio = 1.0, lam = 1.0, lbound = -0.005, ubound = 0.005))]
    #[allow(clippy::too_many_arguments)]
    fn new(da: f64, ra: f64, pr: f64, le: f64, sr: f64, du: f64, rk: f64, ratio: f64, lam: f64, lbound: f64, ubound: f64) -> PyResult<Self> {
        if lbound > ubound {
            return Err(PyValueError::new_err("lbound must not exceed ubound"));
        }
        Ok(PyCavityCase {
            da,
            ra,
            pr,
            le,
            sr,
            du,
            rk,
            ratio,
            lam,
            lbound,
            ubound,
        })
    }

    /// `{"gr_t", "gr_c", "sc"}`.
    fn coefficients(&self) -> PyResult<BTreeMap<&'static str, f64>> {
        let c = self.case().coefficients().map_err(to_py)?;
        Ok(BTreeMap::from([("gr_t", c.gr_t), ("gr_c", c.gr_c), ("sc", c.sc)]))
    }

    /// The 2×2 cross-diffusion matrix.
    fn diffusion(&self) -> PyResult<[[f64; 2]; 2]> {
        Ok(cavity::derive_cavity_coefficients(&self.case()).map_err(to_py)?.diffusion)
    }
}

/// Result of an optimal control solve.
#[pyclass(name = "Solution", module = "ddopt", frozen)]
pub struct PySolution {
    mesh: Mesh,
    params: ProblemParams,
    result: OptResult,
}

#[pymethods]
impl PySolution {
    #[getter]
    fn iterations(&self) -> usize {
        self.result.iterations
    }

    #[getter]
    fn cost_history(&self) -> Vec<f64> {
        self.result.cost_history.clone()
    }

    /// Cellwise control, `(U1, U2)` per cell.
    #[getter]
    fn control(&self) -> Vec<(f64, f64)> {
        pairs(&self.result.control)
    }

    #[getter]
    fn pressure(&self) -> Vec<f64> {
        self.result.state.p.values.clone()
    }

    /// Edge values `(u1, u2)` of the velocity.
    #[getter]
    fn velocity(&self) -> Vec<(f64, f64)> {
        self.result.state.u.values.chunks(2).map(|c| (c[0], c[1])).collect()
    }

    /// Edge values `(T, S)`.
    #[getter]
    fn scalars(&self) -> Vec<(f64, f64)> {
        self.result.state.y.values.chunks(2).map(|c| (c[0], c[1])).collect()
    }

    fn max_div_u(&self) -> f64 {
        self.result.state.u.max_div(&self.mesh)
    }

    fn max_div_phi(&self) -> f64 {
        self.result.adjoint.phi.max_div(&self.mesh)
    }

    /// `max |U − P(−Π₀φ/λ)|` over cells.
    fn vi_residual(&self) -> f64 {
        control::vi_residual(&self.mesh, &self.result.control, &self.result.adjoint, &self.params)
    }

    /// Vertex rows `x, y, u1, u2, p, T, S, U1, U2`.
    fn vertex_values(&self) -> PyResult<Vec<Vec<f64>>> {
        let text = export::csv_points(&self.bundle()).map_err(to_py)?;
        let rows = export::parse_csv_points(&text).map_err(to_py)?;
        Ok(rows.into_iter().map(|r| r.to_vec()).collect())
    }

    #[pyo3(signature = (path, format = "csv"))]
    fn export(&self, path: PathBuf, format: &str) -> PyResult<()> {
        match format {
            "csv" => export::write_csv_points(&self.bundle(), &path),
            "vtk" => export::write_vtk(&self.bundle(), &path, "ddopt"),
            _ => return Err(PyValueError::new_err("format must be 'csv' or 'vtk'")),
        }
        .map_err(to_py)
    }
}

impl PySolution {
    fn bundle(&self) -> FieldBundle<'_> {
        FieldBundle {
            mesh: &self.mesh,
            u: &self.result.state.u,
            p: &self.result.state.p,
            y: &self.result.state.y,
            control: &self.result.control,
        }
    }
}

fn pairs(f: &P0Field) -> Vec<(f64, f64)> {
    f.values.chunks(2).map(|c| (c[0], c[1])).collect()
}

fn nonlinear(method: &str) -> PyResult<NonlinearSettings> {
    let method = match method {
        "picard" => NonlinearMethod::Picard,
        "newton" => NonlinearMethod::Newton,
        "hybrid" => NonlinearMethod::Hybrid,
        _ => return Err(PyValueError::new_err("method must be 'picard', 'newton' or 'hybrid'")),
    };
    Ok(NonlinearSettings {
        method,
        ..NonlinearSettings::default()
    })
}

/// Optimal control of the cavity on `mesh`.
#[pyfunction]
#[pyo3(signature = (mesh, case, tol = 1e-6, tol_mode = "rel", penalty = 10.0, continuation = true))]
fn solve_cavity(py: Python<'_>, mesh: &PyMesh, case: &PyCavityCase, tol: f64, tol_mode: &str, penalty: f64, continuation: bool) -> PyResult<PySolution> {
    let c = case.case();
    let mut settings = CavitySettings {
        penalty_factor: (penalty > 0.0).then_some(penalty),
        continuation,
        ..CavitySettings::default()
    };
    settings.pdas.tol = tol;
    settings.pdas.tol_mode = self::tol_mode(tol_mode)?;
    let m = mesh.inner.clone();
    let result = py.detach(|| cavity::solve_cavity(&m, &c, &settings)).map_err(to_py)?;
    let mut params = cavity::derive_cavity_coefficients(&c).map_err(to_py)?;
    params.penalty = settings.penalty_factor.map(|a| a * (1.0 / c.da).sqrt());
    Ok(PySolution { mesh: m, params, result })
}

/// Manufactured problem on `mesh`; returns the solution and its errors.
#[pyfunction]
#[pyo3(signature = (mesh, regime = "flow", tol = 1e-8, method = "hybrid"))]
fn solve_manufactured(py: Python<'_>, mesh: &PyMesh, regime: &str, tol: f64, method: &str) -> PyResult<(PySolution, BTreeMap<&'static str, f64>)> {
    let case = ManufacturedCase::new(self::regime(regime)?);
    let settings = PdasSettings {
        tol,
        tol_mode: ToleranceMode::Absolute,
        max_iter: 50,
        nonlinear: nonlinear(method)?,
    };
    let m = mesh.inner.clone();
    let (level, result) = py.detach(|| verification::run_level(&m, &case, &settings)).map_err(to_py)?;
    let errors = ERROR_NAMES.iter().map(|n| (*n, level.errors.get(n).unwrap())).collect();
    Ok((
        PySolution {
            mesh: m,
            params: case.params(),
            result,
        },
        errors,
    ))
}

/// Manufactured study on `n0, 2·n0, …`; returns the `errors.csv` text.
#[pyfunction]
#[pyo3(signature = (regime = "flow", n0 = 8, levels = 3, tol = 1e-8, method = "hybrid"))]
fn convergence_study(py: Python<'_>, regime: &str, n0: usize, levels: usize, tol: f64, method: &str) -> PyResult<String> {
    let r = self::regime(regime)?;
    let settings = PdasSettings {
        tol,
        tol_mode: ToleranceMode::Absolute,
        max_iter: 50,
        nonlinear: nonlinear(method)?,
    };
    let report = py
        .detach(|| verification::run_convergence_study(r, n0, levels, &settings))
        .map_err(to_py)?;
    Ok(report.to_csv())
}

/// `P_[a,b](−v/λ)` componentwise.
#[pyfunction]
fn project_control(values: Vec<f64>, lam: f64, lbound: f64, ubound: f64) -> PyResult<Vec<f64>> {
    if !values.len().is_multiple_of(2) {
        return Err(PyValueError::new_err("values must hold (U1, U2) pairs"));
    }
    let v = P0Field { ncomp: 2, values };
    Ok(control::project_control(&v, lam, &Bounds::uniform(lbound, ubound)).values)
}

/// Runs the command line with `args` (without the program name) and
/// returns its exit status.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> PyResult<i32> {
    let cli = Cli::try_parse_from(std::iter::once("ddopt".to_string()).chain(args))
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.detach(|| run(&cli)))
}

#[pymodule]
pub fn ddopt(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMesh>()?;
    m.add_class::<PyCavityCase>()?;
    m.add_class::<PySolution>()?;
    m.add_function(wrap_pyfunction!(solve_cavity, m)?)?;
    m.add_function(wrap_pyfunction!(solve_manufactured, m)?)?;
    m.add_function(wrap_pyfunction!(convergence_study, m)?)?;
    m.add_function(wrap_pyfunction!(project_control, m)?)?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    Ok(())
}
