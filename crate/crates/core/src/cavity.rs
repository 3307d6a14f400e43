//! Porous cavity with Soret and Dufour cross-diffusion.

use log::info;

use crate::adjoint::TrackingData;
use crate::control::{pdas_solve_warm, OptResult, PdasSettings, ToleranceMode};
use crate::error::{invalid, Result};
use crate::fem::{boundary_interpolate, P0Field};
use crate::mesh::{Mesh, Point};
use crate::params::{scaled, Bounds, Buoyancy, ProblemParams, Viscosity, IDENTITY};
use crate::state::{solve_state_from, NonlinearMethod, NonlinearSettings, StateData, StateSolution};

const WALL_TOL: f64 = 1e-12;

/// Dimensionless groups of the cavity problem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityCase {
    pub da: f64,
    pub ra: f64,
    pub pr: f64,
    pub le: f64,
    pub sr: f64,
    pub du: f64,
    pub rk: f64,
    /// `N = Gr_C / Gr_T`.
    pub ratio: f64,
    pub lambda: f64,
    pub bounds: Bounds,
    /// Wall values `(left, right)` for both `T` and `C`.
    pub wall: (f64, f64),
}

impl Default for CavityCase {
    fn default() -> Self {
        CavityCase {
            da: 1e-3,
            ra: 100.0,
            pr: 0.71,
            le: 10.0,
            sr: 0.0,
            du: 0.1,
            rk: 1.0,
            ratio: 1.0,
            lambda: 1.0,
            bounds: Bounds::uniform(-0.005, 0.005),
            wall: (1.0, -1.0),
        }
    }
}

/// Derived coefficients, kept for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavityCoefficients {
    pub gr_t: f64,
    pub gr_c: f64,
    pub sc: f64,
}

impl CavityCase {
    pub fn coefficients(&self) -> Result<CavityCoefficients> {
        if !(self.da > 0.0) || !(self.pr > 0.0) || !(self.le > 0.0) {
            return Err(invalid("Da, Pr and Le must be positive"));
        }
        let gr_t = self.ra / (self.pr * self.da);
        Ok(CavityCoefficients {
            gr_t,
            gr_c: self.ratio * gr_t,
            sc: self.le * self.pr,
        })
    }

    /// Which walls carry Dirichlet data for `(T, C)`.
    pub fn is_vertical_wall(x: Point) -> bool {
        x[0] < WALL_TOL || x[0] > 1.0 - WALL_TOL
    }

    /// No-slip velocity, `T = C = wall.0` on the left and `wall.1` on the
    /// right; the horizontal walls are left natural.
    pub fn state_data(&self, mesh: &Mesh) -> StateData {
        let (left, right) = self.wall;
        let trace = boundary_interpolate(
            mesh,
            2,
            |x| {
                let v = if x[0] < 0.5 { left } else { right };
                vec![v, v]
            },
            Self::is_vertical_wall,
        );
        StateData::new(mesh, trace)
    }

    pub fn tracking(&self) -> TrackingData {
        TrackingData::zero()
    }
}

/// Darcy number at which the Rayleigh ramp runs when the target is smaller.
pub const CONTINUATION_DA: f64 = 1e-3;
/// Rayleigh numbers up to this are solved without a ramp.
pub const CONTINUATION_RA: f64 = 10.0;
const RA_STEP: f64 = 3.0;
const DA_STEP: f64 = 10.0;

/// Solver settings for the cavity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CavitySettings {
    pub pdas: PdasSettings,
    /// Jump penalty factor: `a₀ = factor·√(1/Da)`. `None` disables it.
    pub penalty_factor: Option<f64>,
    pub continuation: bool,
}

impl Default for CavitySettings {
    fn default() -> Self {
        CavitySettings {
            pdas: PdasSettings {
                tol: 1e-6,
                tol_mode: ToleranceMode::Relative,
                max_iter: 50,
                nonlinear: NonlinearSettings {
                    tol: 1e-10,
                    max_iter: 60,
                    damping: 1.0,
                    method: NonlinearMethod::Newton,
                    switch: 1e-2,
                },
            },
            penalty_factor: Some(10.0),
            continuation: true,
        }
    }
}

fn cavity_params(case: &CavityCase, settings: &CavitySettings) -> Result<ProblemParams> {
    let mut p = derive_cavity_coefficients(case)?;
    p.penalty = settings.penalty_factor.map(|a| a * (1.0 / case.da).sqrt());
    Ok(p)
}

/// `(Ra, Da)` stages visited before the target: Ra rises by factors of 3
/// at `max(Da, CONTINUATION_DA)`, then Da falls by factors of 10.
pub fn continuation_path(ra: f64, da: f64) -> Vec<(f64, f64)> {
    let da0 = da.max(CONTINUATION_DA);
    let mut path = Vec::new();
    let mut r = ra;
    let mut ramp = Vec::new();
    while r / RA_STEP >= CONTINUATION_RA {
        r /= RA_STEP;
        ramp.push(r);
    }
    path.extend(ramp.into_iter().rev().map(|r| (r, da0)));
    let mut d = da0;
    while d > da * (1.0 + 1e-9) {
        path.push((ra, d));
        d /= DA_STEP;
    }
    path
}

/// Optimal control of the cavity. The uncontrolled state is first tracked
/// along [`continuation_path`] and used as the starting guess.
pub fn solve_cavity(mesh: &Mesh, case: &CavityCase, settings: &CavitySettings) -> Result<OptResult> {
    let data = case.state_data(mesh);
    let mut guess: Option<StateSolution> = None;
    if settings.continuation {
        let zero = P0Field::zeros(mesh, 2);
        for (ra, da) in continuation_path(case.ra, case.da) {
            let stage = CavityCase { ra, da, ..*case };
            let params = cavity_params(&stage, settings)?;
            let s = solve_state_from(mesh, &params, &data, &zero, &settings.pdas.nonlinear, guess.as_ref())?;
            info!("continuation Ra = {ra:.3e}, Da = {da:.1e}: {} state iterations", s.iterations);
            guess = Some(s);
        }
    }
    let params = cavity_params(case, settings)?;
    pdas_solve_warm(mesh, &params, &data, &case.tracking(), &settings.pdas, None, guess.as_ref())
}

/// `Gr_T = Ra/(Pr·Da)`, `Gr_C = N·Gr_T`, `Sc = Le·Pr`,
/// `D = [[R_k/Pr, Du], [Sr, 1/Sc]]`, `K⁻¹ = I/Da`, `ν ≡ 1`, `g = (0, −1)`.
pub fn derive_cavity_coefficients(case: &CavityCase) -> Result<ProblemParams> {
    let c = case.coefficients()?;
    let params = ProblemParams {
        kinv: scaled(&IDENTITY, 1.0 / case.da),
        viscosity: Viscosity::Constant(1.0),
        diffusion: [[case.rk / case.pr, case.du], [case.sr, 1.0 / c.sc]],
        buoyancy: Buoyancy::grashof(c.gr_t, c.gr_c, [0.0, -1.0]),
        lambda: case.lambda,
        bounds: case.bounds,
        penalty: None,
    };
    params.validate()?;
    Ok(params)
}
