//! Finite-difference oracles for the manufactured data.
//!
//! Only the closed-form values of the exact fields are used here; every
//! derivative is taken numerically with a fourth-order central stencil.

#![allow(dead_code, clippy::needless_range_loop)]

use ddopt_core::mesh::Point;
use ddopt_core::verification::ManufacturedCase;

pub const STEP: f64 = 1e-3;

/// `∂f/∂x_dir` by the five-point stencil.
pub fn d(f: &dyn Fn(Point) -> f64, x: Point, dir: usize) -> f64 {
    let at = |s: f64| {
        let mut y = x;
        y[dir] += s * STEP;
        f(y)
    };
    (-at(2.0) + 8.0 * at(1.0) - 8.0 * at(-1.0) + at(-2.0)) / (12.0 * STEP)
}

fn nu(c: &ManufacturedCase, x: Point) -> f64 {
    c.nu2 * (-c.y(x)[0]).exp()
}

/// `σu + (u·∇)u − div(ν(T)∇u) + ∇p − F(y) − U`.
pub fn momentum(c: &ManufacturedCase, x: Point) -> [f64; 2] {
    let u = c.u(x);
    let y = c.y(x);
    let uc = c.control(x);
    let mut out = [0.0; 2];
    for i in 0..2 {
        let ui = move |z: Point| c.u(z)[i];
        let conv: f64 = (0..2).map(|j| u[j] * d(&ui, x, j)).sum();
        let visc: f64 = (0..2)
            .map(|j| d(&|z: Point| nu(c, z) * d(&ui, z, j), x, j))
            .sum();
        let gp = d(&|z: Point| c.p(z), x, i);
        let f = if i == 1 { y[0] + c.buoyancy_ratio * y[1] } else { 0.0 };
        out[i] = c.sigma * u[i] + conv - visc + gp - f - uc[i];
    }
    out
}

/// `−div(D∇y) + (u·∇)y`.
pub fn transport(c: &ManufacturedCase, x: Point) -> [f64; 2] {
    let u = c.u(x);
    let mut out = [0.0; 2];
    for a in 0..2 {
        let mut div = 0.0;
        for j in 0..2 {
            div += d(
                &|z: Point| (0..2).map(|b| c.diffusion[a][b] * d(&|w: Point| c.y(w)[b], z, j)).sum::<f64>(),
                x,
                j,
            );
        }
        let ya = move |z: Point| c.y(z)[a];
        let adv: f64 = (0..2).map(|j| u[j] * d(&ya, x, j)).sum();
        out[a] = -div + adv;
    }
    out
}

/// `u − [σφ + (∇u)ᵀφ − (u·∇)φ − div(ν∇φ) + ∇ζ + (∇y)ᵀη]`.
pub fn velocity_target(c: &ManufacturedCase, x: Point) -> [f64; 2] {
    let u = c.u(x);
    let phi = c.phi(x);
    let eta = c.eta(x);
    let mut out = [0.0; 2];
    for j in 0..2 {
        let transp: f64 = (0..2).map(|i| d(&|z: Point| c.u(z)[i], x, j) * phi[i]).sum();
        let phij = move |z: Point| c.phi(z)[j];
        let adv: f64 = (0..2).map(|k| u[k] * d(&phij, x, k)).sum();
        let visc: f64 = (0..2)
            .map(|k| d(&|z: Point| nu(c, z) * d(&phij, z, k), x, k))
            .sum();
        let gz = d(&|z: Point| c.zeta(z), x, j);
        let coupling: f64 = (0..2).map(|b| d(&|z: Point| c.y(z)[b], x, j) * eta[b]).sum();
        let src = c.sigma * phi[j] + transp - adv - visc + gz + coupling;
        out[j] = u[j] - src;
    }
    out
}

/// `y − [−div(Dᵀ∇η) − (u·∇)η − Gᵀφ + (ν'(T)∇u:∇φ, 0)]`.
pub fn transport_target(c: &ManufacturedCase, x: Point) -> [f64; 2] {
    let u = c.u(x);
    let y = c.y(x);
    let phi = c.phi(x);
    let mut out = [0.0; 2];
    for b in 0..2 {
        let mut div = 0.0;
        for j in 0..2 {
            div += d(
                &|z: Point| (0..2).map(|a| c.diffusion[a][b] * d(&|w: Point| c.eta(w)[a], z, j)).sum::<f64>(),
                x,
                j,
            );
        }
        let eb = move |z: Point| c.eta(z)[b];
        let adv: f64 = (0..2).map(|j| u[j] * d(&eb, x, j)).sum();
        // G = [[0, 0], [1, N_r]]: (Gᵀφ)_b = G[1][b] φ₂.
        let g1b = if b == 0 { 1.0 } else { c.buoyancy_ratio };
        let mut src = -div - adv - g1b * phi[1];
        if b == 0 {
            let mut contraction = 0.0;
            for i in 0..2 {
                for j in 0..2 {
                    contraction += d(&|z: Point| c.u(z)[i], x, j) * d(&|z: Point| c.phi(z)[i], x, j);
                }
            }
            src += -nu(c, x) * contraction;
        }
        out[b] = y[b] - src;
    }
    out
}

pub fn rel_err(a: [f64; 2], b: [f64; 2]) -> f64 {
    let diff = ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt();
    let scale = (b[0] * b[0] + b[1] * b[1]).sqrt();
    diff / scale.max(f64::MIN_POSITIVE)
}
