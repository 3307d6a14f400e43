//! Manufactured solutions, weighted error norms and convergence studies.
//!
//! The closed-form state and adjoint fields below are smooth; forcing and
//! tracking data are obtained by applying the strong state and adjoint
//! operators with hand-coded derivatives.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::str::FromStr;

use log::info;

use crate::adjoint::{Target, TrackingData};
use crate::control::{pdas_solve, PdasSettings};
use crate::error::{invalid, Error, Result};
use crate::fem::{boundary_interpolate, cr_interpolate, p0_project, CrField, P0Field};
use crate::mesh::{build_unit_square_mesh, Mesh, Point};
use crate::params::{scaled, Bounds, Buoyancy, Mat2, ProblemParams, Viscosity, IDENTITY};
use crate::quadrature::{GAUSS3, TRI6};
use crate::state::StateData;

type Grad = [[f64; 2]; 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Flow,
    Stokes,
    Darcy,
}

impl Regime {
    /// `(σ, ν₂)`.
    pub fn coefficients(&self) -> (f64, f64) {
        match self {
            Regime::Flow => (1.0, 1.0),
            Regime::Stokes => (1e-6, 1.0),
            Regime::Darcy => (1e6, 1e-6),
        }
    }

    pub fn uses_penalty(&self) -> bool {
        matches!(self, Regime::Darcy)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regime::Flow => "flow",
            Regime::Stokes => "stokes",
            Regime::Darcy => "darcy",
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "flow" => Ok(Regime::Flow),
            "stokes" => Ok(Regime::Stokes),
            "darcy" => Ok(Regime::Darcy),
            other => Err(invalid(format!("unknown regime '{other}'"))),
        }
    }
}

/// Manufactured data: closed-form state `(u, p, T, S)`, adjoint `(φ, ζ, ηᵀ, ηˢ)`
/// and control, with `ν(T) = ν₂e^{−T}`, `F(y) = (T + N_r S)(0, 1)`,
/// `K⁻¹ = σI` and `D = 1000 I`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManufacturedCase {
    pub sigma: f64,
    pub nu2: f64,
    pub buoyancy_ratio: f64,
    pub diffusion: Mat2,
    pub lambda: f64,
    pub bounds: Bounds,
    pub penalty: bool,
}

// sin²(πt) and ½ sin(2πt) with derivatives; φ₁ = A(x)B(y), φ₂ = −A(y)B(x).
fn a0(t: f64) -> f64 {
    (PI * t).sin().powi(2)
}
fn a1(t: f64) -> f64 {
    PI * (2.0 * PI * t).sin()
}
fn a2(t: f64) -> f64 {
    2.0 * PI * PI * (2.0 * PI * t).cos()
}
fn b0(t: f64) -> f64 {
    0.5 * (2.0 * PI * t).sin()
}
fn b1(t: f64) -> f64 {
    PI * (2.0 * PI * t).cos()
}
fn b2(t: f64) -> f64 {
    -2.0 * PI * PI * (2.0 * PI * t).sin()
}

/// Value, gradient and Laplacian of a scalar field.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Jet {
    v: f64,
    g: [f64; 2],
    lap: f64,
}

/// `g(x, y) · x(x−1)y(y−1)` from the jet of `g`.
fn times_bubble(g: Jet, x: f64, y: f64) -> Jet {
    let q = x * (x - 1.0) * y * (y - 1.0);
    let qx = (2.0 * x - 1.0) * y * (y - 1.0);
    let qy = x * (x - 1.0) * (2.0 * y - 1.0);
    let qlap = 2.0 * y * (y - 1.0) + 2.0 * x * (x - 1.0);
    Jet {
        v: g.v * q,
        g: [g.g[0] * q + g.v * qx, g.g[1] * q + g.v * qy],
        lap: g.lap * q + 2.0 * (g.g[0] * qx + g.g[1] * qy) + g.v * qlap,
    }
}

impl ManufacturedCase {
    pub fn new(regime: Regime) -> Self {
        let (sigma, nu2) = regime.coefficients();
        ManufacturedCase {
            sigma,
            nu2,
            buoyancy_ratio: 1.0,
            diffusion: scaled(&IDENTITY, 1000.0),
            lambda: 1.0,
            bounds: Bounds::uniform(-0.1, 0.25),
            penalty: regime.uses_penalty(),
        }
    }

    pub fn params(&self) -> ProblemParams {
        ProblemParams {
            kinv: scaled(&IDENTITY, self.sigma),
            viscosity: Viscosity::Exponential { nu2: self.nu2 },
            diffusion: self.diffusion,
            buoyancy: Buoyancy::thermosolutal(self.buoyancy_ratio, [0.0, 1.0]),
            lambda: self.lambda,
            bounds: self.bounds,
            penalty: self.penalty.then(|| 10.0 * self.sigma.sqrt()),
        }
    }

    pub fn weights(&self) -> NormWeights {
        NormWeights {
            sigma: self.sigma,
            nu2: self.nu2,
            sigma_bar: self.params().sigma_bar(),
            r: 4.0 / 3.0,
            penalty: self.penalty,
        }
    }

    fn g_matrix(&self) -> Mat2 {
        [[0.0, 0.0], [1.0, self.buoyancy_ratio]]
    }

    pub fn u(&self, x: Point) -> [f64; 2] {
        let (sx, cx, sy, cy) = ((PI * x[0]).sin(), (PI * x[0]).cos(), (PI * x[1]).sin(), (PI * x[1]).cos());
        [sx * cy, -cx * sy]
    }

    /// Row `i` is `∇u_i`.
    pub fn grad_u(&self, x: Point) -> Grad {
        let (sx, cx, sy, cy) = ((PI * x[0]).sin(), (PI * x[0]).cos(), (PI * x[1]).sin(), (PI * x[1]).cos());
        [[PI * cx * cy, -PI * sx * sy], [PI * sx * sy, -PI * cx * cy]]
    }

    fn lap_u(&self, x: Point) -> [f64; 2] {
        let u = self.u(x);
        [-2.0 * PI * PI * u[0], -2.0 * PI * PI * u[1]]
    }

    pub fn p(&self, x: Point) -> f64 {
        (PI * x[0]).cos() * x[1].exp()
    }

    fn grad_p(&self, x: Point) -> [f64; 2] {
        [-PI * (PI * x[0]).sin() * x[1].exp(), (PI * x[0]).cos() * x[1].exp()]
    }

    fn temperature(&self, x: Point) -> Jet {
        let (s, c) = ((x[0] * x[1]).sin(), (x[0] * x[1]).cos());
        Jet {
            v: 0.5 + 0.5 * c,
            g: [-0.5 * x[1] * s, -0.5 * x[0] * s],
            lap: -0.5 * c * (x[0] * x[0] + x[1] * x[1]),
        }
    }

    fn concentration(&self, x: Point) -> Jet {
        let e = (x[0] * x[1]).exp();
        Jet {
            v: 0.1 + 0.3 * e,
            g: [0.3 * x[1] * e, 0.3 * x[0] * e],
            lap: 0.3 * e * (x[0] * x[0] + x[1] * x[1]),
        }
    }

    pub fn y(&self, x: Point) -> [f64; 2] {
        [self.temperature(x).v, self.concentration(x).v]
    }

    /// Row `c` is `∇y_c`.
    pub fn grad_y(&self, x: Point) -> Grad {
        [self.temperature(x).g, self.concentration(x).g]
    }

    pub fn phi(&self, x: Point) -> [f64; 2] {
        [a0(x[0]) * b0(x[1]), -a0(x[1]) * b0(x[0])]
    }

    pub fn grad_phi(&self, x: Point) -> Grad {
        let (x, y) = (x[0], x[1]);
        [
            [a1(x) * b0(y), a0(x) * b1(y)],
            [-a0(y) * b1(x), -a1(y) * b0(x)],
        ]
    }

    fn lap_phi(&self, x: Point) -> [f64; 2] {
        let (x, y) = (x[0], x[1]);
        [
            a2(x) * b0(y) + a0(x) * b2(y),
            -(a0(y) * b2(x) + a2(y) * b0(x)),
        ]
    }

    pub fn zeta(&self, x: Point) -> f64 {
        (PI * x[1]).cos() * x[0].exp()
    }

    fn grad_zeta(&self, x: Point) -> [f64; 2] {
        [(PI * x[1]).cos() * x[0].exp(), -PI * (PI * x[1]).sin() * x[0].exp()]
    }

    fn eta_jets(&self, x: Point) -> [Jet; 2] {
        let (s, c, e) = ((x[0] * x[1]).sin(), (x[0] * x[1]).cos(), (x[0] * x[1]).exp());
        let r2 = x[0] * x[0] + x[1] * x[1];
        let gt = Jet {
            v: 0.5 * c,
            g: [-0.5 * x[1] * s, -0.5 * x[0] * s],
            lap: -0.5 * c * r2,
        };
        let gs = Jet {
            v: 0.5 * e,
            g: [0.5 * x[1] * e, 0.5 * x[0] * e],
            lap: 0.5 * e * r2,
        };
        [times_bubble(gt, x[0], x[1]), times_bubble(gs, x[0], x[1])]
    }

    pub fn eta(&self, x: Point) -> [f64; 2] {
        let j = self.eta_jets(x);
        [j[0].v, j[1].v]
    }

    pub fn grad_eta(&self, x: Point) -> Grad {
        let j = self.eta_jets(x);
        [j[0].g, j[1].g]
    }

    pub fn control(&self, x: Point) -> [f64; 2] {
        let f = self.phi(x);
        [
            self.bounds.clamp(0, -f[0] / self.lambda),
            self.bounds.clamp(1, -f[1] / self.lambda),
        ]
    }

    fn nu(&self, x: Point) -> (f64, [f64; 2]) {
        let t = self.temperature(x);
        let nu = self.nu2 * (-t.v).exp();
        (nu, [-nu * t.g[0], -nu * t.g[1]])
    }

    /// Closed-form field by name: `u`, `p`, `T`, `S`, `y`, `phi`, `zeta`
    /// (alias `xi`), `etaT`, `etaS`, `eta`, `U`.
    pub fn exact_eval(&self, name: &str, x: Point) -> Result<Vec<f64>> {
        Ok(match name {
            "u" => self.u(x).to_vec(),
            "p" => vec![self.p(x)],
            "T" => vec![self.y(x)[0]],
            "S" => vec![self.y(x)[1]],
            "y" => self.y(x).to_vec(),
            "phi" => self.phi(x).to_vec(),
            "zeta" | "xi" => vec![self.zeta(x)],
            "etaT" => vec![self.eta(x)[0]],
            "etaS" => vec![self.eta(x)[1]],
            "eta" => self.eta(x).to_vec(),
            "U" => self.control(x).to_vec(),
            other => return Err(invalid(format!("unknown field '{other}'"))),
        })
    }

    /// `K⁻¹u + (u·∇)u − div(ν(T)∇u) + ∇p − F(y) − U`.
    pub fn momentum_forcing(&self, x: Point) -> [f64; 2] {
        let u = self.u(x);
        let gu = self.grad_u(x);
        let lu = self.lap_u(x);
        let gp = self.grad_p(x);
        let (nu, gnu) = self.nu(x);
        let y = self.y(x);
        let f = [0.0, y[0] + self.buoyancy_ratio * y[1]];
        let uc = self.control(x);
        let mut out = [0.0; 2];
        for i in 0..2 {
            let conv = u[0] * gu[i][0] + u[1] * gu[i][1];
            let visc = nu * lu[i] + gnu[0] * gu[i][0] + gnu[1] * gu[i][1];
            out[i] = self.sigma * u[i] + conv - visc + gp[i] - f[i] - uc[i];
        }
        out
    }

    /// `−div(D∇y) + (u·∇)y`.
    pub fn transport_forcing(&self, x: Point) -> [f64; 2] {
        let u = self.u(x);
        let jets = [self.temperature(x), self.concentration(x)];
        let d = &self.diffusion;
        let mut out = [0.0; 2];
        for a in 0..2 {
            let diff: f64 = (0..2).map(|b| d[a][b] * jets[b].lap).sum();
            out[a] = -diff + u[0] * jets[a].g[0] + u[1] * jets[a].g[1];
        }
        out
    }

    pub fn manufactured_forcing(&self, x: Point) -> ([f64; 2], [f64; 2]) {
        (self.momentum_forcing(x), self.transport_forcing(x))
    }

    /// `u − u_d = K⁻ᵀφ + (∇u)ᵀφ − (u·∇)φ − div(ν∇φ) + ∇ζ + (∇y)ᵀη`.
    pub fn adjoint_momentum_source(&self, x: Point) -> [f64; 2] {
        let u = self.u(x);
        let gu = self.grad_u(x);
        let f = self.phi(x);
        let gf = self.grad_phi(x);
        let lf = self.lap_phi(x);
        let (nu, gnu) = self.nu(x);
        let gz = self.grad_zeta(x);
        let gy = self.grad_y(x);
        let eta = self.eta(x);
        let mut out = [0.0; 2];
        for j in 0..2 {
            let react = self.sigma * f[j];
            let transp = gu[0][j] * f[0] + gu[1][j] * f[1];
            let adv = u[0] * gf[j][0] + u[1] * gf[j][1];
            let visc = nu * lf[j] + gnu[0] * gf[j][0] + gnu[1] * gf[j][1];
            let coupling = gy[0][j] * eta[0] + gy[1][j] * eta[1];
            out[j] = react + transp - adv - visc + gz[j] + coupling;
        }
        out
    }

    /// `y − y_d = −div(Dᵀ∇η) − (u·∇)η − F_yᵀφ + (ν'(T)∇u:∇φ, 0)`.
    pub fn adjoint_transport_source(&self, x: Point) -> [f64; 2] {
        let u = self.u(x);
        let jets = self.eta_jets(x);
        let d = &self.diffusion;
        let g = self.g_matrix();
        let f = self.phi(x);
        let gu = self.grad_u(x);
        let gf = self.grad_phi(x);
        let (nu, _) = self.nu(x);
        let dnu = -nu;
        let mut out = [0.0; 2];
        for b in 0..2 {
            let diff: f64 = (0..2).map(|a| d[a][b] * jets[a].lap).sum();
            let adv = u[0] * jets[b].g[0] + u[1] * jets[b].g[1];
            let buoy = g[0][b] * f[0] + g[1][b] * f[1];
            out[b] = -diff - adv - buoy;
        }
        let contraction: f64 = (0..2).map(|i| gu[i][0] * gf[i][0] + gu[i][1] * gf[i][1]).sum();
        out[0] += dnu * contraction;
        out
    }

    pub fn velocity_target(&self, x: Point) -> [f64; 2] {
        let u = self.u(x);
        let s = self.adjoint_momentum_source(x);
        [u[0] - s[0], u[1] - s[1]]
    }

    pub fn transport_target(&self, x: Point) -> [f64; 2] {
        let y = self.y(x);
        let s = self.adjoint_transport_source(x);
        [y[0] - s[0], y[1] - s[1]]
    }

    /// Dirichlet traces of `u` and `y` on all of Γ and the volume sources.
    pub fn state_data(&self, mesh: &Mesh) -> StateData {
        let all = |_: Point| true;
        let ud = boundary_interpolate(mesh, 2, |x| self.u(x).to_vec(), all);
        let yd = boundary_interpolate(mesh, 2, |x| self.y(x).to_vec(), all);
        let mut data = StateData::new(mesh, yd).with_sources(mesh, |x| self.momentum_forcing(x), |x| self.transport_forcing(x));
        data.u_dirichlet = ud;
        data
    }

    pub fn tracking(&self) -> TrackingData {
        let a = *self;
        let b = *self;
        TrackingData {
            u_d: Target::function(move |x| a.velocity_target(x)),
            y_d: Target::function(move |x| b.transport_target(x)),
        }
    }
}

/// Weights of the discrete norms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormWeights {
    pub sigma: f64,
    pub nu2: f64,
    pub sigma_bar: f64,
    pub r: f64,
    pub penalty: bool,
}

/// Errors of one discrete KKT triple against the closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ErrorRecord {
    pub e_u: f64,
    pub e_p: f64,
    pub e_t: f64,
    pub e_s: f64,
    pub e_phi: f64,
    pub e_zeta: f64,
    pub e_eta_t: f64,
    pub e_eta_s: f64,
    pub e_u1: f64,
    pub e_u2: f64,
    /// `‖∇(T − T_h)‖` without the `σ̄` weight.
    pub e_t_h1: f64,
    pub e_s_h1: f64,
    /// Control errors in L².
    pub e_u1_l2: f64,
    pub e_u2_l2: f64,
}

pub const ERROR_NAMES: [&str; 10] = ["e_u", "e_p", "e_T", "e_S", "e_phi", "e_zeta", "e_etaT", "e_etaS", "e_U1", "e_U2"];

impl ErrorRecord {
    pub fn get(&self, name: &str) -> Option<f64> {
        Some(match name {
            "e_u" => self.e_u,
            "e_p" => self.e_p,
            "e_T" => self.e_t,
            "e_S" => self.e_s,
            "e_phi" => self.e_phi,
            "e_zeta" => self.e_zeta,
            "e_etaT" => self.e_eta_t,
            "e_etaS" => self.e_eta_s,
            "e_U1" => self.e_u1,
            "e_U2" => self.e_u2,
            _ => return None,
        })
    }
}

/// The discrete fields compared by [`error_norms`].
#[derive(Debug, Clone, Copy)]
pub struct NumericFields<'a> {
    pub u: &'a CrField,
    pub p: &'a P0Field,
    pub y: &'a CrField,
    pub phi: &'a CrField,
    pub xi: &'a P0Field,
    pub eta: &'a CrField,
    pub control: &'a P0Field,
}

/// Per component: `(‖f − f_h‖², Σ_K ‖∇(f − f_h)‖²)` by six-point quadrature.
pub fn cr_error_parts<F, G>(mesh: &Mesh, field: &CrField, value: F, grad: G) -> Vec<(f64, f64)>
where
    F: Fn(Point) -> Vec<f64>,
    G: Fn(Point) -> Vec<[f64; 2]>,
{
    let n = field.ncomp;
    let mut out = vec![(0.0, 0.0); n];
    for k in 0..mesh.num_cells() {
        let area = mesh.area_cell[k];
        let gh: Vec<Point> = (0..n).map(|c| field.grad(mesh, k, c)).collect();
        for (l, w) in &TRI6 {
            let x = mesh.bary_to_point(k, *l);
            let v = value(x);
            let g = grad(x);
            for c in 0..n {
                let e = v[c] - field.eval_bary(mesh, k, c, l);
                let ge = [g[c][0] - gh[c][0], g[c][1] - gh[c][1]];
                out[c].0 += w * area * e * e;
                out[c].1 += w * area * (ge[0] * ge[0] + ge[1] * ge[1]);
            }
        }
    }
    out
}

/// `Σ_e h_e⁻¹ ‖[f − f_h]‖²_{0,e}`; on Γ the jump is `f − f_h`.
pub fn jump_error_sq<F>(mesh: &Mesh, field: &CrField, value: F) -> f64
where
    F: Fn(Point) -> Vec<f64>,
{
    let mut s = 0.0;
    for e in 0..mesh.num_edges() {
        let [a, b] = mesh.edge_endpoints(e);
        let (kp, km) = mesh.edge_cells[e];
        for &(t, w) in &GAUSS3 {
            let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
            let lp = mesh.point_to_bary(kp, x);
            for c in 0..field.ncomp {
                let jump = match km {
                    Some(km) => {
                        let lm = mesh.point_to_bary(km, x);
                        field.eval_bary(mesh, km, c, &lm) - field.eval_bary(mesh, kp, c, &lp)
                    }
                    None => value(x)[c] - field.eval_bary(mesh, kp, c, &lp),
                };
                // |e| w / h_e with h_e = |e|.
                s += w * jump * jump;
            }
        }
    }
    s
}

/// Per component `Σ_K ∫_K |f − f_h|^r`.
pub fn p0_error_pow<F>(mesh: &Mesh, field: &P0Field, value: F, r: f64) -> Vec<f64>
where
    F: Fn(Point) -> Vec<f64>,
{
    let n = field.ncomp;
    let mut out = vec![0.0; n];
    for k in 0..mesh.num_cells() {
        for (l, w) in &TRI6 {
            let v = value(mesh.bary_to_point(k, *l));
            for c in 0..n {
                out[c] += w * mesh.area_cell[k] * (v[c] - field.get(k, c)).abs().powf(r);
            }
        }
    }
    out
}

pub fn error_norms(mesh: &Mesh, fields: &NumericFields<'_>, case: &ManufacturedCase, weights: &NormWeights) -> Result<ErrorRecord> {
    let (ne, nc) = (mesh.num_edges(), mesh.num_cells());
    let ok = fields.u.values.len() == 2 * ne
        && fields.phi.values.len() == 2 * ne
        && fields.y.values.len() == 2 * ne
        && fields.eta.values.len() == 2 * ne
        && fields.p.values.len() == nc
        && fields.xi.values.len() == nc
        && fields.control.values.len() == 2 * nc;
    if !ok {
        return Err(invalid("fields do not match the mesh"));
    }
    let vel_norm = |f: &CrField, v: &dyn Fn(Point) -> [f64; 2], g: &dyn Fn(Point) -> Grad| {
        let parts = cr_error_parts(mesh, f, |x| v(x).to_vec(), |x| g(x).to_vec());
        let mut s: f64 = parts.iter().map(|(l2, h1)| weights.sigma * l2 + weights.nu2 * h1).sum();
        if weights.penalty {
            s += jump_error_sq(mesh, f, |x| v(x).to_vec());
        }
        s.sqrt()
    };
    let e_u = vel_norm(fields.u, &|x| case.u(x), &|x| case.grad_u(x));
    let e_phi = vel_norm(fields.phi, &|x| case.phi(x), &|x| case.grad_phi(x));
    let y_parts = cr_error_parts(mesh, fields.y, |x| case.y(x).to_vec(), |x| case.grad_y(x).to_vec());
    let eta_parts = cr_error_parts(mesh, fields.eta, |x| case.eta(x).to_vec(), |x| case.grad_eta(x).to_vec());
    let sb = weights.sigma_bar;
    let e_p = p0_error_pow(mesh, fields.p, |x| vec![case.p(x)], 2.0)[0].sqrt();
    let e_zeta = p0_error_pow(mesh, fields.xi, |x| vec![case.zeta(x)], 2.0)[0].sqrt();
    let r = weights.r;
    let ur = p0_error_pow(mesh, fields.control, |x| case.control(x).to_vec(), r);
    let u2 = p0_error_pow(mesh, fields.control, |x| case.control(x).to_vec(), 2.0);
    Ok(ErrorRecord {
        e_u,
        e_p,
        e_t: (sb * y_parts[0].1).sqrt(),
        e_s: (sb * y_parts[1].1).sqrt(),
        e_phi,
        e_zeta,
        e_eta_t: (sb * eta_parts[0].1).sqrt(),
        e_eta_s: (sb * eta_parts[1].1).sqrt(),
        e_u1: ur[0].powf(1.0 / r),
        e_u2: ur[1].powf(1.0 / r),
        e_t_h1: y_parts[0].1.sqrt(),
        e_s_h1: y_parts[1].1.sqrt(),
        e_u1_l2: u2[0].sqrt(),
        e_u2_l2: u2[1].sqrt(),
    })
}

/// Pairwise rates `log(e/ẽ) / log(h/h̃)`.
pub fn eoc(errors: &[f64], hs: &[f64]) -> Result<Vec<f64>> {
    if errors.len() != hs.len() {
        return Err(invalid("errors and mesh sizes differ in length"));
    }
    if hs.len() < 2 {
        return Err(invalid("at least two levels are needed"));
    }
    if hs.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("mesh sizes must be strictly decreasing"));
    }
    Ok(errors
        .windows(2)
        .zip(hs.windows(2))
        .map(|(e, h)| (e[0] / e[1]).ln() / (h[0] / h[1]).ln())
        .collect())
}

/// Interpolation errors `‖y − Π_nc y‖_{1,h}` (σ̄-weighted) and `‖p − Π₀p‖₀`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterpolationErrors {
    pub y: f64,
    pub p: f64,
}

pub fn interpolation_errors(mesh: &Mesh, case: &ManufacturedCase) -> InterpolationErrors {
    let yi = cr_interpolate(mesh, 2, |x| case.y(x).to_vec());
    let parts = cr_error_parts(mesh, &yi, |x| case.y(x).to_vec(), |x| case.grad_y(x).to_vec());
    let sb = case.params().sigma_bar();
    let pi = p0_project(mesh, 1, |x| vec![case.p(x)]);
    InterpolationErrors {
        y: (sb * (parts[0].1 + parts[1].1)).sqrt(),
        p: p0_error_pow(mesh, &pi, |x| vec![case.p(x)], 2.0)[0].sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dofs {
    pub u: usize,
    pub p: usize,
    pub y: usize,
    pub control: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub n: usize,
    pub h: f64,
    pub dofs: Dofs,
    pub errors: ErrorRecord,
    pub interpolation: InterpolationErrors,
    pub iterations: usize,
    pub max_div_u: f64,
    pub max_div_phi: f64,
    pub max_abs_u: f64,
    pub max_abs_phi: f64,
    pub vi_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub regime: Regime,
    pub levels: Vec<LevelResult>,
}

impl ConvergenceReport {
    /// Rates between consecutive levels for one error column.
    pub fn rates(&self, name: &str) -> Result<Vec<f64>> {
        let e: Vec<f64> = self
            .levels
            .iter()
            .map(|l| l.errors.get(name).ok_or_else(|| invalid(format!("unknown error '{name}'"))))
            .collect::<Result<_>>()?;
        let h: Vec<f64> = self.levels.iter().map(|l| l.h).collect();
        eoc(&e, &h)
    }

    pub fn final_rate(&self, name: &str) -> Result<f64> {
        Ok(*self.rates(name)?.last().unwrap())
    }

    pub fn csv_header() -> String {
        let mut s = String::from("level,h,dofs_u,dofs_p,dofs_y,dofs_U");
        for name in ERROR_NAMES {
            let _ = write!(s, ",{name},rate");
        }
        s.push_str(",It");
        s
    }

    /// One row per level; rates on the first level are empty fields.
    pub fn to_csv(&self) -> String {
        let mut s = Self::csv_header();
        s.push('\n');
        let rates: Vec<Vec<f64>> = ERROR_NAMES
            .iter()
            .map(|n| self.rates(n).unwrap_or_default())
            .collect();
        for (i, l) in self.levels.iter().enumerate() {
            let _ = write!(
                s,
                "{},{:.6e},{},{},{},{}",
                i + 1,
                l.h,
                l.dofs.u,
                l.dofs.p,
                l.dofs.y,
                l.dofs.control
            );
            for (j, name) in ERROR_NAMES.iter().enumerate() {
                let e = l.errors.get(name).unwrap();
                if i == 0 {
                    let _ = write!(s, ",{e:.6e},");
                } else {
                    let _ = write!(s, ",{e:.6e},{:.4}", rates[j].get(i - 1).copied().unwrap_or(f64::NAN));
                }
            }
            let _ = writeln!(s, ",{}", l.iterations);
        }
        s
    }
}

/// Solves the optimal control problem with manufactured data on one mesh.
pub fn run_level(mesh: &Mesh, case: &ManufacturedCase, settings: &PdasSettings) -> Result<(LevelResult, crate::control::OptResult)> {
    let params = case.params();
    let data = case.state_data(mesh);
    let tracking = case.tracking();
    let opt = pdas_solve(mesh, &params, &data, &tracking, settings)?;
    let fields = NumericFields {
        u: &opt.state.u,
        p: &opt.state.p,
        y: &opt.state.y,
        phi: &opt.adjoint.phi,
        xi: &opt.adjoint.xi,
        eta: &opt.adjoint.eta,
        control: &opt.control,
    };
    let errors = error_norms(mesh, &fields, case, &case.weights())?;
    let stats = mesh.stats();
    let level = LevelResult {
        n: 0,
        h: stats.h_max,
        dofs: Dofs {
            u: 2 * mesh.num_edges(),
            p: mesh.num_cells(),
            y: 2 * mesh.num_edges(),
            control: 2 * mesh.num_cells(),
        },
        errors,
        interpolation: interpolation_errors(mesh, case),
        iterations: opt.iterations,
        max_div_u: opt.state.u.max_div(mesh),
        max_div_phi: opt.adjoint.phi.max_div(mesh),
        max_abs_u: opt.state.u.max_abs(),
        max_abs_phi: opt.adjoint.phi.max_abs(),
        vi_residual: crate::control::vi_residual(mesh, &opt.control, &opt.adjoint, &params),
    };
    Ok((level, opt))
}

/// Runs the manufactured study on `n₀, 2n₀, …` (`levels` meshes, each the
/// red refinement of the previous one).
pub fn run_convergence_study(regime: Regime, n0: usize, levels: usize, settings: &PdasSettings) -> Result<ConvergenceReport> {
    run_convergence_study_with(&ManufacturedCase::new(regime), regime, n0, levels, settings, |_, _, _| {})
}

/// As [`run_convergence_study`], calling `visit(level, mesh, result)` after
/// each level (used for field dumps).
pub fn run_convergence_study_with<V>(
    case: &ManufacturedCase,
    regime: Regime,
    n0: usize,
    levels: usize,
    settings: &PdasSettings,
    mut visit: V,
) -> Result<ConvergenceReport>
where
    V: FnMut(usize, &Mesh, &crate::control::OptResult),
{
    if levels < 2 {
        return Err(invalid("a convergence study needs at least two levels"));
    }
    let mut mesh = build_unit_square_mesh(n0)?;
    let mut out = Vec::with_capacity(levels);
    for i in 0..levels {
        if i > 0 {
            mesh = mesh.refine_uniform();
        }
        let n = n0 << i;
        let (mut level, opt) = run_level(&mesh, case, settings).map_err(|e| Error::Level {
            level: i + 1,
            source: Box::new(e),
        })?;
        level.n = n;
        info!(
            "{} level {} (n = {n}): e_u {:.3e}, e_p {:.3e}, e_T {:.3e}, e_phi {:.3e}, e_U1 {:.3e}, It {}",
            regime.name(),
            i + 1,
            level.errors.e_u,
            level.errors.e_p,
            level.errors.e_t,
            level.errors.e_phi,
            level.errors.e_u1,
            level.iterations
        );
        visit(i + 1, &mesh, &opt);
        out.push(level);
    }
    Ok(ConvergenceReport { regime, levels: out })
}
