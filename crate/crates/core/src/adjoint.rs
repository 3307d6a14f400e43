//! Discrete adjoint system.
//!
//! The adjoint operator is the exact transpose of the Jacobian of the
//! discrete state residual, so the reduced gradient is consistent with the
//! discrete cost to rounding error. Unknowns follow the state layout:
//! `[φ | ξ | η | κ]`.

use std::fmt;
use std::sync::Arc;

use crate::assembly;
use crate::error::{invalid, Result};
use crate::fem::{p0_project_cr, CrField, P0Field};
use crate::linalg::{CompressedMatrix, DirectSolver, Elimination};
use crate::mesh::{Mesh, Point};
use crate::params::{scaled, transpose, Buoyancy, ProblemParams};
use crate::quadrature::TRI6;
use crate::state::{remove_pressure_mean, solver_pins, state_jacobian, Layout, StateData, StateSolution};

pub type PointFn = Arc<dyn Fn(Point) -> [f64; 2] + Send + Sync>;

/// A desired two-component field.
#[derive(Clone)]
pub enum Target {
    Zero,
    Function(PointFn),
    Field(CrField),
}

impl fmt::Debug for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Zero => f.write_str("Zero"),
            Target::Function(_) => f.write_str("Function(..)"),
            Target::Field(c) => f.debug_tuple("Field").field(&c.values.len()).finish(),
        }
    }
}

impl Target {
    pub fn function<F: Fn(Point) -> [f64; 2] + Send + Sync + 'static>(f: F) -> Self {
        Target::Function(Arc::new(f))
    }

    /// `(w − target, v)` for every CR test function `v`.
    pub fn misfit_load(&self, mesh: &Mesh, w: &CrField) -> Vec<f64> {
        let diag = assembly::mass_diagonal(mesh);
        let mut b: Vec<f64> = w.values.iter().enumerate().map(|(i, v)| diag[i / 2] * v).collect();
        match self {
            Target::Zero => {}
            Target::Function(f) => {
                let t = assembly::load(mesh, 2, |x| f(x).to_vec());
                for (bi, ti) in b.iter_mut().zip(&t) {
                    *bi -= ti;
                }
            }
            Target::Field(c) => {
                for (i, bi) in b.iter_mut().enumerate() {
                    *bi -= diag[i / 2] * c.values[i];
                }
            }
        }
        b
    }

    /// `½ ‖w − target‖²_{0,Ω}` with cell quadrature.
    pub fn misfit(&self, mesh: &Mesh, w: &CrField) -> f64 {
        match self {
            Target::Zero => 0.5 * w.l2_norm_sq(mesh),
            Target::Field(c) => {
                let d = CrField {
                    ncomp: 2,
                    values: w.values.iter().zip(&c.values).map(|(a, b)| a - b).collect(),
                };
                0.5 * d.l2_norm_sq(mesh)
            }
            Target::Function(f) => {
                let mut s = 0.0;
                for k in 0..mesh.num_cells() {
                    for (l, wq) in &TRI6 {
                        let t = f(mesh.bary_to_point(k, *l));
                        for c in 0..2 {
                            s += wq * mesh.area_cell[k] * (w.eval_bary(mesh, k, c, l) - t[c]).powi(2);
                        }
                    }
                }
                0.5 * s
            }
        }
    }

    /// `½‖a − target‖² − ½‖b − target‖²`, summed as `½(a − b, a + b − 2·target)`
    /// so that nearby `a` and `b` do not cancel.
    pub fn misfit_difference(&self, mesh: &Mesh, a: &CrField, b: &CrField) -> f64 {
        let mut s = 0.0;
        for k in 0..mesh.num_cells() {
            for (l, wq) in &TRI6 {
                let t = match self {
                    Target::Zero => [0.0; 2],
                    Target::Function(f) => f(mesh.bary_to_point(k, *l)),
                    Target::Field(c) => [c.eval_bary(mesh, k, 0, l), c.eval_bary(mesh, k, 1, l)],
                };
                for c in 0..2 {
                    let (x, y) = (a.eval_bary(mesh, k, c, l), b.eval_bary(mesh, k, c, l));
                    s += wq * mesh.area_cell[k] * (x - y) * (x + y - 2.0 * t[c]);
                }
            }
        }
        0.5 * s
    }
}

/// Desired states `(u_d, y_d)`.
#[derive(Debug, Clone)]
pub struct TrackingData {
    pub u_d: Target,
    pub y_d: Target,
}

impl TrackingData {
    pub fn zero() -> Self {
        TrackingData {
            u_d: Target::Zero,
            y_d: Target::Zero,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AdjointSolution {
    pub phi: CrField,
    pub xi: P0Field,
    pub eta: CrField,
    pub multiplier: f64,
}

impl AdjointSolution {
    pub fn from_vector(lay: &Layout, x: &[f64]) -> Self {
        let s = StateSolution::from_vector(lay, x);
        AdjointSolution {
            phi: s.u,
            xi: s.p,
            eta: s.y,
            multiplier: s.multiplier,
        }
    }
}

/// The state-linearization blocks that enter the adjoint system, each in
/// state orientation (rows = state test functions); the adjoint operator
/// uses their transposes.
#[derive(Debug, Clone)]
pub struct AdjointBlocks {
    /// `cʰ(u_h; ·, v)`, velocity × velocity.
    pub convection: CompressedMatrix,
    /// `cʰ_lin(·; u_h, v)`, velocity × velocity.
    pub convection_lin: CompressedMatrix,
    /// `c_y,lin(·; y_h, s)`, transport × velocity.
    pub transport_lin: CompressedMatrix,
    /// `(ν'(T_h) δT ∇u_h:∇v)`, velocity × transport.
    pub viscosity: CompressedMatrix,
    /// `((F_y(y_h)) δy, v)`, velocity × transport.
    pub buoyancy: CompressedMatrix,
}

pub fn assemble_adjoint_transport_terms(mesh: &Mesh, params: &ProblemParams, state: &StateSolution) -> Result<AdjointBlocks> {
    if !state.is_finite() {
        return Err(invalid("state contains non-finite values"));
    }
    let buoyancy = match &params.buoyancy {
        Buoyancy::Affine { matrix, .. } => assembly::constant_mass(mesh, matrix),
        Buoyancy::General(_) => {
            let y = &state.y;
            assembly::weighted_mass(mesh, |k, l| {
                params
                    .buoyancy
                    .jacobian([y.eval_bary(mesh, k, 0, l), y.eval_bary(mesh, k, 1, l)])
            })
        }
    };
    Ok(AdjointBlocks {
        convection: assembly::upwind_advection(mesh, &state.u, 2),
        convection_lin: assembly::upwind_linearized(mesh, &state.u, &state.u),
        transport_lin: assembly::upwind_linearized(mesh, &state.u, &state.y),
        viscosity: assembly::viscosity_coupling(mesh, params, &state.y, &state.u),
        buoyancy,
    })
}

/// Adjoint right-hand side `[(u_h − u_d, v); 0; (y_h − y_d, s); 0]`.
pub fn adjoint_rhs(mesh: &Mesh, state: &StateSolution, tracking: &TrackingData) -> Vec<f64> {
    let lay = Layout::new(mesh);
    let mut b = vec![0.0; lay.size()];
    b[lay.u()..lay.p()].copy_from_slice(&tracking.u_d.misfit_load(mesh, &state.u));
    b[lay.y()..lay.mu()].copy_from_slice(&tracking.y_d.misfit_load(mesh, &state.y));
    b
}

/// Solves `J(x_h)ᵀ λ = ∂J/∂x` with homogeneous values on every Dirichlet dof
/// of the state.
pub fn solve_adjoint(
    mesh: &Mesh,
    params: &ProblemParams,
    data: &StateData,
    state: &StateSolution,
    tracking: &TrackingData,
) -> Result<AdjointSolution> {
    if !state.is_finite() {
        return Err(invalid("state contains non-finite values"));
    }
    let lay = Layout::new(mesh);
    if state.u.values.len() != 2 * lay.edges || state.p.values.len() != lay.cells {
        return Err(invalid("state does not match the mesh"));
    }
    let jac_t = state_jacobian(mesh, params, state).transpose();
    let rhs = adjoint_rhs(mesh, state, tracking);
    let pins = solver_pins(&data.fixed_values(mesh), &lay);
    let elim = Elimination::new(pins.iter().map(|f| f.map(|_| 0.0)).collect());
    let (a, b) = elim.reduce(&jac_t, &rhs);
    let mut x = elim.expand(&DirectSolver::new(&a)?.solve(&b)?);
    remove_pressure_mean(mesh, &lay, &mut x);
    Ok(AdjointSolution::from_vector(&lay, &x))
}

/// Cellwise `λ U_K + (Π₀ φ_h)_K`; the L² gradient of the reduced cost.
pub fn gradient_of_reduced_cost(mesh: &Mesh, adjoint: &AdjointSolution, control: &P0Field, lambda: f64) -> P0Field {
    let pphi = p0_project_cr(mesh, &adjoint.phi);
    P0Field {
        ncomp: 2,
        values: control
            .values
            .iter()
            .zip(&pphi.values)
            .map(|(u, f)| lambda * u + f)
            .collect(),
    }
}

/// The buoyancy block of the adjoint transport row, `−((F_y)ᵀ φ, s)`, for an
/// affine buoyancy; equal to the negated transpose of the state coupling.
pub fn adjoint_buoyancy_block(mesh: &Mesh, params: &ProblemParams) -> Option<CompressedMatrix> {
    match &params.buoyancy {
        Buoyancy::Affine { matrix, .. } => Some(assembly::constant_mass(mesh, &scaled(&transpose(matrix), -1.0))),
        Buoyancy::General(_) => None,
    }
}
