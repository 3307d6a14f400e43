//! Coefficient models shared by the state, adjoint and control solvers.

use std::fmt;
use std::sync::Arc;

use crate::error::{invalid, Result};

pub type Mat2 = [[f64; 2]; 2];

pub const IDENTITY: Mat2 = [[1.0, 0.0], [0.0, 1.0]];

pub fn scaled(m: &Mat2, s: f64) -> Mat2 {
    [[s * m[0][0], s * m[0][1]], [s * m[1][0], s * m[1][1]]]
}

pub fn transpose(m: &Mat2) -> Mat2 {
    [[m[0][0], m[1][0]], [m[0][1], m[1][1]]]
}

pub fn matvec(m: &Mat2, v: [f64; 2]) -> [f64; 2] {
    [
        m[0][0] * v[0] + m[0][1] * v[1],
        m[1][0] * v[0] + m[1][1] * v[1],
    ]
}

/// Temperature-dependent kinematic viscosity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Viscosity {
    Constant(f64),
    /// `ν(T) = ν₂ exp(−T)`.
    Exponential { nu2: f64 },
}

impl Viscosity {
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Viscosity::Constant(nu) => nu,
            Viscosity::Exponential { nu2 } => nu2 * (-t).exp(),
        }
    }

    #[inline]
    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            Viscosity::Constant(_) => 0.0,
            Viscosity::Exponential { nu2 } => -nu2 * (-t).exp(),
        }
    }

    /// The reference scale `ν₂` used by norms and the jump penalty.
    pub fn nu2(&self) -> f64 {
        match *self {
            Viscosity::Constant(nu) => nu,
            Viscosity::Exponential { nu2 } => nu2,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Viscosity::Constant(_))
    }
}

/// Nonlinear buoyancy `y ↦ (F(y), F_y(y))`.
pub type BuoyancyFn = Arc<dyn Fn([f64; 2]) -> ([f64; 2], Mat2) + Send + Sync>;

#[derive(Clone)]
pub enum Buoyancy {
    /// `F(y) = offset + G y`.
    Affine { offset: [f64; 2], matrix: Mat2 },
    General(BuoyancyFn),
}

impl Buoyancy {
    /// `(T + N S) g`.
    pub fn thermosolutal(ratio: f64, g: [f64; 2]) -> Self {
        Buoyancy::Affine {
            offset: [0.0; 2],
            matrix: [[g[0], ratio * g[0]], [g[1], ratio * g[1]]],
        }
    }

    /// `(Gr_T T + Gr_C C) g`.
    pub fn grashof(gr_t: f64, gr_c: f64, g: [f64; 2]) -> Self {
        Buoyancy::Affine {
            offset: [0.0; 2],
            matrix: [[gr_t * g[0], gr_c * g[0]], [gr_t * g[1], gr_c * g[1]]],
        }
    }

    pub fn eval(&self, y: [f64; 2]) -> [f64; 2] {
        match self {
            Buoyancy::Affine { offset, matrix } => {
                let gy = matvec(matrix, y);
                [offset[0] + gy[0], offset[1] + gy[1]]
            }
            Buoyancy::General(f) => f(y).0,
        }
    }

    pub fn jacobian(&self, y: [f64; 2]) -> Mat2 {
        match self {
            Buoyancy::Affine { matrix, .. } => *matrix,
            Buoyancy::General(f) => f(y).1,
        }
    }

    pub fn is_affine(&self) -> bool {
        matches!(self, Buoyancy::Affine { .. })
    }
}

impl fmt::Debug for Buoyancy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Buoyancy::Affine { offset, matrix } => f
                .debug_struct("Affine")
                .field("offset", offset)
                .field("matrix", matrix)
                .finish(),
            Buoyancy::General(_) => f.write_str("General(..)"),
        }
    }
}

/// Box constraints `lower[j] ≤ U_j ≤ upper[j]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl Bounds {
    pub fn uniform(lower: f64, upper: f64) -> Self {
        Bounds {
            lower: [lower; 2],
            upper: [upper; 2],
        }
    }

    pub fn validate(&self) -> Result<()> {
        for j in 0..2 {
            if !(self.lower[j].is_finite() && self.upper[j].is_finite()) {
                return Err(invalid("control bounds must be finite"));
            }
            if self.lower[j] >= self.upper[j] {
                return Err(invalid(format!(
                    "control bounds for component {j} are not ordered: [{}, {}]",
                    self.lower[j], self.upper[j]
                )));
            }
        }
        Ok(())
    }

    #[inline]
    pub fn clamp(&self, j: usize, v: f64) -> f64 {
        v.min(self.upper[j]).max(self.lower[j])
    }
}

#[derive(Debug, Clone)]
pub struct ProblemParams {
    /// Inverse permeability `K⁻¹`.
    pub kinv: Mat2,
    pub viscosity: Viscosity,
    /// Cross-diffusion matrix; row = equation (T, S), column = gradient.
    pub diffusion: Mat2,
    pub buoyancy: Buoyancy,
    pub lambda: f64,
    pub bounds: Bounds,
    /// Jump-penalty parameter `a₀`, if the Darcy stabilization is active.
    pub penalty: Option<f64>,
}

impl ProblemParams {
    /// `‖D‖_∞`, the maximum absolute row sum.
    pub fn sigma_bar(&self) -> f64 {
        self.diffusion
            .iter()
            .map(|r| r[0].abs() + r[1].abs())
            .fold(0.0, f64::max)
    }

    /// `‖K⁻¹‖_∞`.
    pub fn sigma(&self) -> f64 {
        self.kinv
            .iter()
            .map(|r| r[0].abs() + r[1].abs())
            .fold(0.0, f64::max)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |m: &Mat2| m.iter().flatten().all(|v| v.is_finite());
        if !finite(&self.kinv) || !finite(&self.diffusion) {
            return Err(invalid("coefficient matrices must be finite"));
        }
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(invalid(format!("lambda must be positive, got {}", self.lambda)));
        }
        self.bounds.validate()?;
        // K⁻¹ symmetric positive semidefinite.
        let k = &self.kinv;
        if (k[0][1] - k[1][0]).abs() > 1e-12 * (1.0 + self.sigma())
            || k[0][0] < 0.0
            || k[0][0] * k[1][1] - k[0][1] * k[1][0] < -1e-14
        {
            return Err(invalid("K⁻¹ must be symmetric positive semidefinite"));
        }
        // sᵀ D s ≥ α |s|² at sampled directions.
        let d = &self.diffusion;
        for i in 0..64 {
            let th = i as f64 * std::f64::consts::PI / 32.0;
            let s = [th.cos(), th.sin()];
            let q = s[0] * (d[0][0] * s[0] + d[0][1] * s[1]) + s[1] * (d[1][0] * s[0] + d[1][1] * s[1]);
            if !(q > 0.0) {
                return Err(invalid("diffusion matrix is not positive definite"));
            }
        }
        for i in 0..=40 {
            let t = -2.0 + 0.1 * i as f64;
            let nu = self.viscosity.eval(t);
            if !(nu > 0.0) || !nu.is_finite() {
                return Err(invalid(format!("viscosity must be positive, got {nu} at T = {t}")));
            }
        }
        if let Some(a0) = self.penalty {
            if !(a0 >= 0.0) || !a0.is_finite() {
                return Err(invalid("penalty parameter must be nonnegative"));
            }
        }
        Ok(())
    }
}
