//! Nonlinear discrete state system: Brinkman–Navier–Stokes flow with
//! temperature-dependent viscosity coupled to cross-diffusive transport.
//!
//! Unknowns are ordered `[u (2E) | p (N_K) | y (2E) | μ]`, where `μ` is the
//! multiplier of the zero-mean pressure constraint.

use log::debug;

use crate::assembly;
use crate::error::{invalid, Error, Result};
use crate::fem::{BoundaryTrace, CrField, P0Field};
use crate::linalg::{norm2, CompressedMatrix, DirectSolver, Elimination, Triplets};
use crate::mesh::{Mesh, Point};
use crate::params::{scaled, Buoyancy, ProblemParams};
use crate::quadrature::TRI6;

/// Offsets of the unknown blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub edges: usize,
    pub cells: usize,
}

impl Layout {
    pub fn new(mesh: &Mesh) -> Self {
        Layout {
            edges: mesh.num_edges(),
            cells: mesh.num_cells(),
        }
    }
    pub fn u(&self) -> usize {
        0
    }
    pub fn p(&self) -> usize {
        2 * self.edges
    }
    pub fn y(&self) -> usize {
        2 * self.edges + self.cells
    }
    pub fn mu(&self) -> usize {
        4 * self.edges + self.cells
    }
    pub fn size(&self) -> usize {
        4 * self.edges + self.cells + 1
    }
}

/// Boundary values and volume sources of the state equations.
#[derive(Debug, Clone)]
pub struct StateData {
    /// Velocity trace on Γ; zero for no-slip.
    pub u_dirichlet: BoundaryTrace,
    /// `(T, S)` trace on the Dirichlet part of Γ.
    pub y_dirichlet: BoundaryTrace,
    /// `(f, v)` for the momentum equation.
    pub f_momentum: Vec<f64>,
    /// `(g, s)` for the transport equations.
    pub f_transport: Vec<f64>,
}

impl StateData {
    /// No-slip velocity, given transport trace, no volume sources.
    pub fn new(mesh: &Mesh, y_dirichlet: BoundaryTrace) -> Self {
        StateData {
            u_dirichlet: BoundaryTrace::zero(mesh, 2),
            y_dirichlet,
            f_momentum: vec![0.0; 2 * mesh.num_edges()],
            f_transport: vec![0.0; 2 * mesh.num_edges()],
        }
    }

    pub fn homogeneous(mesh: &Mesh) -> Self {
        Self::new(mesh, BoundaryTrace::zero(mesh, 2))
    }

    /// Adds pointwise volume sources, integrated with cell quadrature.
    pub fn with_sources<F, G>(mut self, mesh: &Mesh, f: F, g: G) -> Self
    where
        F: Fn(Point) -> [f64; 2],
        G: Fn(Point) -> [f64; 2],
    {
        self.f_momentum = assembly::load(mesh, 2, |x| f(x).to_vec());
        self.f_transport = assembly::load(mesh, 2, |x| g(x).to_vec());
        self
    }

    fn check(&self, mesh: &Mesh) -> Result<()> {
        let n = 2 * mesh.num_edges();
        if self.u_dirichlet.values.len() != n
            || self.y_dirichlet.values.len() != n
            || self.f_momentum.len() != n
            || self.f_transport.len() != n
        {
            return Err(invalid("state data does not match the mesh"));
        }
        for e in 0..mesh.num_edges() {
            if mesh.boundary_edge[e] && !self.u_dirichlet.constrained[e] {
                return Err(invalid("velocity trace must cover every boundary edge"));
            }
            if !mesh.boundary_edge[e] && (self.u_dirichlet.constrained[e] || self.y_dirichlet.constrained[e]) {
                return Err(invalid("Dirichlet data on an interior edge"));
            }
        }
        let (mut flux, mut scale) = (0.0, 0.0);
        for e in (0..mesh.num_edges()).filter(|&e| mesh.boundary_edge[e]) {
            let k = mesh.edge_cells[e].0;
            let n = mesh.outward_normal(k, mesh.local_edge_index(k, e).unwrap());
            let (g0, g1) = (self.u_dirichlet.value(e, 0), self.u_dirichlet.value(e, 1));
            flux += mesh.h_edge[e] * (g0 * n[0] + g1 * n[1]);
            scale += mesh.h_edge[e] * (g0.abs() + g1.abs());
        }
        if flux.abs() > 1e-10 * (1.0 + scale) {
            return Err(invalid(format!("boundary velocity has net flux {flux:.3e}")));
        }
        Ok(())
    }

    /// Prescribed values per unknown (`None` for free unknowns).
    pub fn fixed_values(&self, mesh: &Mesh) -> Vec<Option<f64>> {
        let lay = Layout::new(mesh);
        let mut fixed = vec![None; lay.size()];
        for e in 0..mesh.num_edges() {
            for c in 0..2 {
                if self.u_dirichlet.constrained[e] {
                    fixed[lay.u() + 2 * e + c] = Some(self.u_dirichlet.value(e, c));
                }
                if self.y_dirichlet.constrained[e] {
                    fixed[lay.y() + 2 * e + c] = Some(self.y_dirichlet.value(e, c));
                }
            }
        }
        fixed
    }
}

/// Pins for the linear solves: the multiplier and the first pressure are
/// fixed to zero, which also drops the first divergence row. With
/// flux-compatible data that row is implied by the others and the multiplier
/// vanishes, so only the pressure mean has to be restored afterwards. This
/// keeps the dense constraint row out of the factorization.
pub(crate) fn solver_pins(fixed: &[Option<f64>], lay: &Layout) -> Vec<Option<f64>> {
    let mut f = fixed.to_vec();
    f[lay.p()] = Some(0.0);
    f[lay.mu()] = Some(0.0);
    f
}

/// Subtracts the area-weighted mean from the pressure block of `v`.
pub(crate) fn remove_pressure_mean(mesh: &Mesh, lay: &Layout, v: &mut [f64]) {
    let p = &mut v[lay.p()..lay.y()];
    let mean: f64 = p.iter().zip(&mesh.area_cell).map(|(a, b)| a * b).sum::<f64>() / mesh.area_cell.iter().sum::<f64>();
    for x in p.iter_mut() {
        *x -= mean;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NonlinearMethod {
    /// Frozen coefficients and advecting field.
    Picard,
    /// Full linearization of the discrete residual.
    Newton,
    /// Picard until the increment falls below `switch` times the tolerance
    /// scale, then Newton.
    Hybrid,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NonlinearSettings {
    pub tol: f64,
    pub max_iter: usize,
    pub damping: f64,
    pub method: NonlinearMethod,
    /// Relative increment at which `Hybrid` switches to Newton.
    pub switch: f64,
}

impl Default for NonlinearSettings {
    fn default() -> Self {
        NonlinearSettings {
            tol: 1e-10,
            max_iter: 100,
            damping: 1.0,
            method: NonlinearMethod::Picard,
            switch: 1e-2,
        }
    }
}

impl NonlinearSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || self.max_iter == 0 || !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(invalid("nonlinear settings need tol > 0, max_iter ≥ 1, damping in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct StateSolution {
    pub u: CrField,
    pub p: P0Field,
    pub y: CrField,
    /// Multiplier of the mean-zero pressure constraint.
    pub multiplier: f64,
    pub iterations: usize,
    pub increments: Vec<f64>,
}

impl StateSolution {
    pub fn zeros(mesh: &Mesh) -> Self {
        StateSolution {
            u: CrField::zeros(mesh, 2),
            p: P0Field::zeros(mesh, 1),
            y: CrField::zeros(mesh, 2),
            multiplier: 0.0,
            iterations: 0,
            increments: Vec::new(),
        }
    }

    pub fn to_vector(&self, lay: &Layout) -> Vec<f64> {
        let mut x = Vec::with_capacity(lay.size());
        x.extend_from_slice(&self.u.values);
        x.extend_from_slice(&self.p.values);
        x.extend_from_slice(&self.y.values);
        x.push(self.multiplier);
        x
    }

    pub fn from_vector(lay: &Layout, x: &[f64]) -> Self {
        StateSolution {
            u: CrField {
                ncomp: 2,
                values: x[lay.u()..lay.p()].to_vec(),
            },
            p: P0Field {
                ncomp: 1,
                values: x[lay.p()..lay.y()].to_vec(),
            },
            y: CrField {
                ncomp: 2,
                values: x[lay.y()..lay.mu()].to_vec(),
            },
            multiplier: x[lay.mu()],
            iterations: 0,
            increments: Vec::new(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.y.is_finite() && self.p.values.iter().all(|v| v.is_finite())
    }

    /// `‖u‖_{1,h} + ‖y‖_{1,h}` (unweighted broken norms).
    pub fn norm(&self, mesh: &Mesh) -> f64 {
        self.u.broken_h1_norm(mesh) + self.y.broken_h1_norm(mesh)
    }
}

fn place_saddle_structure(t: &mut Triplets, mesh: &Mesh, lay: &Layout) {
    let b = assembly::divergence(mesh);
    t.add_matrix(lay.p(), lay.u(), 1.0, &b);
    t.add_matrix(lay.u(), lay.p(), 1.0, &b.transpose());
    for (k, c) in assembly::mean_constraint(mesh).into_iter().enumerate() {
        t.push(lay.p() + k, lay.mu(), c);
        t.push(lay.mu(), lay.p() + k, c);
    }
}

/// Frozen-coefficient operator `P(x)` with `R(x) = P(x) x − b(x)`.
pub fn picard_matrix(mesh: &Mesh, params: &ProblemParams, x: &StateSolution) -> CompressedMatrix {
    let lay = Layout::new(mesh);
    let mut t = Triplets::new(lay.size(), lay.size());
    t.add_matrix(lay.u(), lay.u(), 1.0, &assembly::brinkman_diffusion(mesh, params, Some(&x.y)));
    t.add_matrix(lay.u(), lay.u(), 1.0, &assembly::upwind_advection(mesh, &x.u, 2));
    if let Some(a0) = params.penalty {
        t.add_matrix(lay.u(), lay.u(), 1.0, &assembly::jump_penalty(mesh, a0, params.viscosity.nu2()));
    }
    if let Buoyancy::Affine { matrix, .. } = &params.buoyancy {
        t.add_matrix(lay.u(), lay.y(), 1.0, &assembly::constant_mass(mesh, &scaled(matrix, -1.0)));
    }
    place_saddle_structure(&mut t, mesh, &lay);
    t.add_matrix(lay.y(), lay.y(), 1.0, &assembly::cross_diffusion(mesh, &params.diffusion));
    t.add_matrix(lay.y(), lay.y(), 1.0, &assembly::upwind_advection(mesh, &x.u, 2));
    t.finalize()
}

/// Right-hand side `b(x)`: sources, control and the non-implicit part of the
/// buoyancy.
pub fn state_rhs(mesh: &Mesh, params: &ProblemParams, data: &StateData, control: &P0Field, x: &StateSolution) -> Vec<f64> {
    let lay = Layout::new(mesh);
    let mut b = vec![0.0; lay.size()];
    let uc = assembly::load_p0(mesh, control);
    let buoy: Vec<f64> = match &params.buoyancy {
        Buoyancy::Affine { offset, .. } => {
            if offset == &[0.0, 0.0] {
                vec![0.0; 2 * lay.edges]
            } else {
                let o = *offset;
                assembly::load(mesh, 2, move |_| o.to_vec())
            }
        }
        Buoyancy::General(_) => buoyancy_load(mesh, params, &x.y),
    };
    for i in 0..2 * lay.edges {
        b[lay.u() + i] = data.f_momentum[i] + uc[i] + buoy[i];
        b[lay.y() + i] = data.f_transport[i];
    }
    b
}

/// `(F(y_h), v)` with cell quadrature.
fn buoyancy_load(mesh: &Mesh, params: &ProblemParams, y: &CrField) -> Vec<f64> {
    let mut b = vec![0.0; 2 * mesh.num_edges()];
    for k in 0..mesh.num_cells() {
        let area = mesh.area_cell[k];
        let ce = &mesh.cell_edges[k];
        for (l, w) in &TRI6 {
            let f = params
                .buoyancy
                .eval([y.eval_bary(mesh, k, 0, l), y.eval_bary(mesh, k, 1, l)]);
            for i in 0..3 {
                let s = w * area * crate::fem::cr_basis(l, i);
                b[2 * ce[i].0] += s * f[0];
                b[2 * ce[i].0 + 1] += s * f[1];
            }
        }
    }
    b
}

/// Derivative of the discrete state residual with respect to `(u, p, y, μ)`.
/// Rows are test functions, columns trial unknowns.
pub fn state_jacobian(mesh: &Mesh, params: &ProblemParams, x: &StateSolution) -> CompressedMatrix {
    let lay = Layout::new(mesh);
    let mut t = picard_matrix(mesh, params, x).to_triplets();
    t.add_matrix(lay.u(), lay.u(), 1.0, &assembly::upwind_linearized(mesh, &x.u, &x.u));
    t.add_matrix(lay.u(), lay.y(), 1.0, &assembly::viscosity_coupling(mesh, params, &x.y, &x.u));
    if let Buoyancy::General(_) = &params.buoyancy {
        let y = &x.y;
        let fy = assembly::weighted_mass(mesh, |k, l| {
            params
                .buoyancy
                .jacobian([y.eval_bary(mesh, k, 0, l), y.eval_bary(mesh, k, 1, l)])
        });
        t.add_matrix(lay.u(), lay.y(), -1.0, &fy);
    }
    t.add_matrix(lay.y(), lay.u(), 1.0, &assembly::upwind_linearized(mesh, &x.u, &x.y));
    t.finalize()
}

/// Euclidean norms of the discrete residual restricted to free test functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateResidual {
    pub momentum: f64,
    pub divergence: f64,
    pub transport: f64,
    pub constraint: f64,
}

impl StateResidual {
    pub fn max(&self) -> f64 {
        self.momentum.max(self.divergence).max(self.transport).max(self.constraint)
    }
}

pub fn residual_vector(
    mesh: &Mesh,
    params: &ProblemParams,
    data: &StateData,
    control: &P0Field,
    x: &StateSolution,
) -> Vec<f64> {
    let lay = Layout::new(mesh);
    let v = x.to_vector(&lay);
    let mut r = picard_matrix(mesh, params, x).matvec(&v);
    let b = state_rhs(mesh, params, data, control, x);
    for (ri, bi) in r.iter_mut().zip(&b) {
        *ri -= bi;
    }
    for (i, f) in data.fixed_values(mesh).iter().enumerate() {
        if f.is_some() {
            r[i] = 0.0;
        }
    }
    r
}

pub fn state_residual(
    mesh: &Mesh,
    params: &ProblemParams,
    data: &StateData,
    control: &P0Field,
    x: &StateSolution,
) -> StateResidual {
    let lay = Layout::new(mesh);
    let r = residual_vector(mesh, params, data, control, x);
    StateResidual {
        momentum: norm2(&r[lay.u()..lay.p()]),
        divergence: norm2(&r[lay.p()..lay.y()]),
        transport: norm2(&r[lay.y()..lay.mu()]),
        constraint: r[lay.mu()].abs(),
    }
}

fn check_inputs(mesh: &Mesh, params: &ProblemParams, data: &StateData, control: &P0Field) -> Result<()> {
    params.validate()?;
    data.check(mesh)?;
    if control.ncomp != 2 || control.values.len() != 2 * mesh.num_cells() {
        return Err(invalid("control must be a two-component P0 field on the mesh"));
    }
    Ok(())
}

/// Backtracking on `‖W R(x)‖` with `W` the inverse absolute row sums of the
/// Jacobian at the current iterate, starting from `alpha0`.
#[allow(clippy::too_many_arguments)]
fn line_search(
    mesh: &Mesh,
    params: &ProblemParams,
    data: &StateData,
    control: &P0Field,
    jac: &CompressedMatrix,
    x: &[f64],
    r: &[f64],
    dx: &[f64],
    alpha0: f64,
) -> f64 {
    let w: Vec<f64> = (0..jac.nrows)
        .map(|i| {
            let s: f64 = jac.row(i).map(|(_, v)| v.abs()).sum();
            if s > 0.0 { 1.0 / s } else { 0.0 }
        })
        .collect();
    let lay = Layout::new(mesh);
    let merit = |v: &[f64]| norm2(&v.iter().zip(&w).map(|(a, b)| a * b).collect::<Vec<_>>());
    let m0 = merit(r);
    let mut alpha = alpha0;
    while alpha > 1.0 / 64.0 {
        let trial: Vec<f64> = x.iter().zip(dx).map(|(a, b)| a + alpha * b).collect();
        let mut t = trial;
        remove_pressure_mean(mesh, &lay, &mut t);
        let st = StateSolution::from_vector(&lay, &t);
        let m = merit(&residual_vector(mesh, params, data, control, &st));
        if m.is_finite() && m <= (1.0 - 1e-4 * alpha) * m0 {
            return alpha;
        }
        alpha *= 0.5;
    }
    debug!("line search stalled at step {alpha:.3e}");
    alpha
}

/// Solves the state equations from a zero initial guess.
pub fn solve_state(
    mesh: &Mesh,
    params: &ProblemParams,
    data: &StateData,
    control: &P0Field,
    settings: &NonlinearSettings,
) -> Result<StateSolution> {
    solve_state_from(mesh, params, data, control, settings, None)
}

/// Solves the state equations starting from `initial` (Dirichlet values are
/// reimposed) or from zero.
pub fn solve_state_from(
    mesh: &Mesh,
    params: &ProblemParams,
    data: &StateData,
    control: &P0Field,
    settings: &NonlinearSettings,
    initial: Option<&StateSolution>,
) -> Result<StateSolution> {
    check_inputs(mesh, params, data, control)?;
    settings.validate()?;
    let lay = Layout::new(mesh);
    let fixed = data.fixed_values(mesh);
    let elim = Elimination::new(solver_pins(&fixed, &lay));
    let zero_elim = Elimination::new(solver_pins(&fixed, &lay).iter().map(|f| f.map(|_| 0.0)).collect());

    let mut xv = match initial {
        Some(s) => s.to_vector(&lay),
        None => vec![0.0; lay.size()],
    };
    for (i, f) in fixed.iter().enumerate() {
        if let Some(g) = f {
            xv[i] = *g;
        }
    }
    let mut x = StateSolution::from_vector(&lay, &xv);
    let mut history = Vec::new();
    let mut newton = settings.method == NonlinearMethod::Newton;

    for it in 1..=settings.max_iter {
        let next = if newton {
            let jac = state_jacobian(mesh, params, &x);
            let r = residual_vector(mesh, params, data, control, &x);
            let neg: Vec<f64> = r.iter().map(|v| -v).collect();
            let (a, b) = zero_elim.reduce(&jac, &neg);
            let dx = zero_elim.expand(&DirectSolver::new(&a)?.solve(&b)?);
            let alpha = line_search(mesh, params, data, control, &jac, &xv, &r, &dx, settings.damping);
            xv.iter().zip(&dx).map(|(xi, di)| xi + alpha * di).collect::<Vec<_>>()
        } else {
            let p = picard_matrix(mesh, params, &x);
            let rhs = state_rhs(mesh, params, data, control, &x);
            let (a, b) = elim.reduce(&p, &rhs);
            let full = elim.expand(&DirectSolver::new(&a)?.solve(&b)?);
            xv.iter()
                .zip(&full)
                .map(|(xi, fi)| xi + settings.damping * (fi - xi))
                .collect::<Vec<_>>()
        };
        let mut next = next;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { iteration: it });
        }
        remove_pressure_mean(mesh, &lay, &mut next);
        let delta: Vec<f64> = next.iter().zip(&xv).map(|(a, b)| a - b).collect();
        let d = StateSolution::from_vector(&lay, &delta);
        xv = next;
        x = StateSolution::from_vector(&lay, &xv);
        let inc = d.norm(mesh);
        let scale = 1.0 + x.norm(mesh);
        history.push(inc);
        debug!("state iteration {it}: increment {inc:.3e} (scale {scale:.3e}, newton {newton})");
        if inc <= settings.tol * scale {
            x.iterations = it;
            x.increments = history;
            return Ok(x);
        }
        if settings.method == NonlinearMethod::Hybrid && !newton && inc <= settings.switch * scale {
            newton = true;
        }
    }
    Err(Error::NonConvergence {
        iterations: settings.max_iter,
        last: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}
