//! Box-constrained control: projection formula, reduced cost and the
//! primal-dual active set (semi-smooth Newton) outer loop.

use log::info;

use crate::adjoint::{adjoint_rhs, solve_adjoint, AdjointSolution, TrackingData};
use crate::error::{invalid, Error, Result};
use crate::fem::{p0_project_cr, P0Field};
use crate::linalg::{norm2, Elimination};
use crate::mesh::Mesh;
use crate::params::{Bounds, ProblemParams};
use crate::state::{solve_state_from, state_jacobian, state_residual, Layout, NonlinearSettings, StateData, StateSolution};

/// `max(U_a, min(U_b, −v/λ))` per cell and component, where `v` holds cell
/// averages of the adjoint velocity.
pub fn project_control(v: &P0Field, lambda: f64, bounds: &Bounds) -> P0Field {
    assert!(lambda > 0.0, "lambda must be positive");
    P0Field {
        ncomp: v.ncomp,
        values: v
            .values
            .iter()
            .enumerate()
            .map(|(i, &x)| bounds.clamp(i % v.ncomp, -x / lambda))
            .collect(),
    }
}

/// `½‖u−u_d‖² + ½‖y−y_d‖² + (λ/2)‖U‖²`.
pub fn eval_cost(mesh: &Mesh, state: &StateSolution, control: &P0Field, tracking: &TrackingData, lambda: f64) -> f64 {
    tracking.u_d.misfit(mesh, &state.u)
        + tracking.y_d.misfit(mesh, &state.y)
        + 0.5 * lambda * control.l2_norm(mesh).powi(2)
}

/// `J(s_a, U_a) − J(s_b, U_b)` without forming either cost.
pub fn eval_cost_difference(
    mesh: &Mesh,
    a: (&StateSolution, &P0Field),
    b: (&StateSolution, &P0Field),
    tracking: &TrackingData,
    lambda: f64,
) -> f64 {
    let control: f64 = (0..mesh.num_cells())
        .map(|k| {
            (0..2)
                .map(|c| {
                    let (x, y) = (a.1.get(k, c), b.1.get(k, c));
                    mesh.area_cell[k] * (x - y) * (x + y)
                })
                .sum::<f64>()
        })
        .sum();
    tracking.u_d.misfit_difference(mesh, &a.0.u, &b.0.u)
        + tracking.y_d.misfit_difference(mesh, &a.0.y, &b.0.y)
        + 0.5 * lambda * control
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Lower,
    Inactive,
    Upper,
}

/// One label per cell and control component, stored like a P0 field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ActiveSets {
    pub labels: Vec<Label>,
}

impl ActiveSets {
    /// Classifies `−v/λ` against the bounds; equality counts as inactive.
    pub fn classify(v: &P0Field, lambda: f64, bounds: &Bounds) -> Self {
        ActiveSets {
            labels: v
                .values
                .iter()
                .enumerate()
                .map(|(i, &x)| {
                    let t = -x / lambda;
                    let j = i % v.ncomp;
                    if t > bounds.upper[j] {
                        Label::Upper
                    } else if t < bounds.lower[j] {
                        Label::Lower
                    } else {
                        Label::Inactive
                    }
                })
                .collect(),
        }
    }

    pub fn count(&self, label: Label) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn changes(&self, other: &ActiveSets) -> usize {
        self.labels.iter().zip(&other.labels).filter(|(a, b)| a != b).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToleranceMode {
    Absolute,
    Relative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdasSettings {
    pub tol: f64,
    pub tol_mode: ToleranceMode,
    pub max_iter: usize,
    pub nonlinear: NonlinearSettings,
}

impl Default for PdasSettings {
    fn default() -> Self {
        PdasSettings {
            tol: 1e-6,
            tol_mode: ToleranceMode::Absolute,
            max_iter: 50,
            nonlinear: NonlinearSettings::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub control: P0Field,
    pub state: StateSolution,
    pub adjoint: AdjointSolution,
    /// Outer iterations until the stopping test held.
    pub iterations: usize,
    /// Cost at the control of each outer iteration.
    pub cost_history: Vec<f64>,
    pub active_set_history: Vec<ActiveSets>,
    /// `‖U^{m+1} − U^m‖₀` per outer iteration.
    pub change_history: Vec<f64>,
}

/// Runs the primal-dual active set loop from `U = 0`.
pub fn pdas_solve(
    mesh: &Mesh,
    params: &ProblemParams,
    data: &StateData,
    tracking: &TrackingData,
    settings: &PdasSettings,
) -> Result<OptResult> {
    pdas_solve_from(mesh, params, data, tracking, settings, None)
}

pub fn pdas_solve_from(
    mesh: &Mesh,
    params: &ProblemParams,
    data: &StateData,
    tracking: &TrackingData,
    settings: &PdasSettings,
    initial: Option<&P0Field>,
) -> Result<OptResult> {
    pdas_solve_warm(mesh, params, data, tracking, settings, initial, None)
}

/// Like [`pdas_solve_from`], with the first state solve started from
/// `initial_state`.
pub fn pdas_solve_warm(
    mesh: &Mesh,
    params: &ProblemParams,
    data: &StateData,
    tracking: &TrackingData,
    settings: &PdasSettings,
    initial: Option<&P0Field>,
    initial_state: Option<&StateSolution>,
) -> Result<OptResult> {
    params.validate()?;
    if !(settings.tol > 0.0) || settings.max_iter == 0 {
        return Err(invalid("PDAS settings need tol > 0 and max_iter ≥ 1"));
    }
    let lambda = params.lambda;
    let mut control = match initial {
        Some(u) => {
            let mut u = u.clone();
            for (i, v) in u.values.iter_mut().enumerate() {
                *v = params.bounds.clamp(i % 2, *v);
            }
            u
        }
        None => P0Field {
            ncomp: 2,
            values: (0..2 * mesh.num_cells())
                .map(|i| params.bounds.clamp(i % 2, 0.0))
                .collect(),
        },
    };
    let mut state: Option<StateSolution> = initial_state.cloned();
    let mut cost_history = Vec::new();
    let mut sets_history: Vec<ActiveSets> = Vec::new();
    let mut change_history = Vec::new();
    let mut set_changes = Vec::new();

    for it in 1..=settings.max_iter {
        let s = solve_state_from(mesh, params, data, &control, &settings.nonlinear, state.as_ref())?;
        let a = solve_adjoint(mesh, params, data, &s, tracking)?;
        cost_history.push(eval_cost(mesh, &s, &control, tracking, lambda));
        let pphi = p0_project_cr(mesh, &a.phi);
        let sets = ActiveSets::classify(&pphi, lambda, &params.bounds);
        let next = project_control(&pphi, lambda, &params.bounds);
        let diff = P0Field {
            ncomp: 2,
            values: next.values.iter().zip(&control.values).map(|(a, b)| a - b).collect(),
        };
        let change = diff.l2_norm(mesh);
        let threshold = match settings.tol_mode {
            ToleranceMode::Absolute => settings.tol,
            ToleranceMode::Relative => settings.tol * next.l2_norm(mesh),
        };
        let stable = sets_history.last().is_some_and(|prev| *prev == sets);
        set_changes.push(sets_history.last().map_or(sets.labels.len(), |p| p.changes(&sets)) as f64);
        info!(
            "pdas iteration {it}: J = {:.6e}, |dU| = {change:.3e}, active lower {} upper {}, state its {}",
            cost_history[it - 1],
            sets.count(Label::Lower),
            sets.count(Label::Upper),
            s.iterations
        );
        change_history.push(change);
        sets_history.push(sets);
        control = next;
        state = Some(s);
        if stable && change <= threshold {
            // Final solves so that state and adjoint belong to the returned control.
            let s = solve_state_from(mesh, params, data, &control, &settings.nonlinear, state.as_ref())?;
            let a = solve_adjoint(mesh, params, data, &s, tracking)?;
            return Ok(OptResult {
                control,
                state: s,
                adjoint: a,
                iterations: it,
                cost_history,
                active_set_history: sets_history,
                change_history,
            });
        }
    }
    Err(Error::NonConvergence {
        iterations: settings.max_iter,
        last: change_history.last().copied().unwrap_or(f64::NAN),
        history: set_changes,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktResiduals {
    pub state_res: f64,
    pub adjoint_res: f64,
    pub vi_res: f64,
}

/// `max |U − P_[U_a,U_b](−Π₀φ/λ)|` over cells and components.
pub fn vi_residual(mesh: &Mesh, control: &P0Field, adjoint: &AdjointSolution, params: &ProblemParams) -> f64 {
    let proj = project_control(&p0_project_cr(mesh, &adjoint.phi), params.lambda, &params.bounds);
    control
        .values
        .iter()
        .zip(&proj.values)
        .fold(0.0, |m, (a, b)| m.max((a - b).abs()))
}

pub fn kkt_residuals(
    mesh: &Mesh,
    params: &ProblemParams,
    data: &StateData,
    tracking: &TrackingData,
    result: &OptResult,
) -> KktResiduals {
    let state_res = state_residual(mesh, params, data, &result.control, &result.state).max();
    let lay = Layout::new(mesh);
    let jt = state_jacobian(mesh, params, &result.state).transpose();
    let x = {
        let mut v = Vec::with_capacity(lay.size());
        v.extend_from_slice(&result.adjoint.phi.values);
        v.extend_from_slice(&result.adjoint.xi.values);
        v.extend_from_slice(&result.adjoint.eta.values);
        v.push(result.adjoint.multiplier);
        v
    };
    let rhs = adjoint_rhs(mesh, &result.state, tracking);
    let elim = Elimination::new(data.fixed_values(mesh).iter().map(|f| f.map(|_| 0.0)).collect());
    let (a, b) = elim.reduce(&jt, &rhs);
    let xf: Vec<f64> = elim.free.iter().map(|&i| x[i]).collect();
    let r: Vec<f64> = a.matvec(&xf).iter().zip(&b).map(|(p, q)| p - q).collect();
    KktResiduals {
        state_res,
        adjoint_res: norm2(&r),
        vi_res: vi_residual(mesh, &result.control, &result.adjoint, params),
    }
}
