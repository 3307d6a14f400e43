//! Crouzeix–Raviart (edge-midpoint) and piecewise-constant spaces.
//!
//! Vector-valued fields store their components interleaved per entity:
//! the dof of component `c` on edge `e` sits at `e * ncomp + c`.

use crate::error::{invalid, Result};
use crate::mesh::{Mesh, Point};
use crate::quadrature::{GAUSS2, TRI6};

/// Nonconforming P1 field with one value per edge and component.
#[derive(Debug, Clone, PartialEq)]
pub struct CrField {
    pub ncomp: usize,
    pub values: Vec<f64>,
}

/// Piecewise-constant field with one value per cell and component.
#[derive(Debug, Clone, PartialEq)]
pub struct P0Field {
    pub ncomp: usize,
    pub values: Vec<f64>,
}

/// Edge averages of Dirichlet data on the constrained part of Γ. Edges that
/// are interior or carry a natural condition have `constrained[e] == false`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryTrace {
    pub ncomp: usize,
    pub values: Vec<f64>,
    pub constrained: Vec<bool>,
}

/// Value of the CR basis function on local edge `i` at barycentric point `l`.
#[inline]
pub fn cr_basis(l: &[f64; 3], i: usize) -> f64 {
    1.0 - 2.0 * l[i]
}

/// Gradient of the CR basis function on local edge `i` of cell `k`.
#[inline]
pub fn cr_basis_grad(mesh: &Mesh, k: usize, i: usize) -> Point {
    let g = mesh.grad_bary[k][i];
    [-2.0 * g[0], -2.0 * g[1]]
}

/// Barycentric coordinates on cell `k` of the point at parameter `t` along its
/// local edge `i`, running from local vertex `i+1` to `i+2`.
#[inline]
pub fn edge_bary(i: usize, t: f64) -> [f64; 3] {
    let mut l = [0.0; 3];
    l[(i + 1) % 3] = 1.0 - t;
    l[(i + 2) % 3] = t;
    l
}

/// Parameter along local edge `i` of cell `k` of the point at parameter `t`
/// along the canonical orientation of the global edge.
#[inline]
pub fn canonical_to_local_t(mesh: &Mesh, k: usize, i: usize, t: f64) -> f64 {
    let e = mesh.cell_edges[k][i].0;
    let start = mesh.cells[k][(i + 1) % 3];
    if start == mesh.edges[e][0] {
        t
    } else {
        1.0 - t
    }
}

impl CrField {
    pub fn zeros(mesh: &Mesh, ncomp: usize) -> Self {
        CrField {
            ncomp,
            values: vec![0.0; mesh.num_edges() * ncomp],
        }
    }

    pub fn constant(mesh: &Mesh, value: &[f64]) -> Self {
        let ncomp = value.len();
        let mut values = Vec::with_capacity(mesh.num_edges() * ncomp);
        for _ in 0..mesh.num_edges() {
            values.extend_from_slice(value);
        }
        CrField { ncomp, values }
    }

    pub fn num_edges(&self) -> usize {
        self.values.len() / self.ncomp
    }

    #[inline]
    pub fn dof(&self, e: usize, c: usize) -> f64 {
        self.values[e * self.ncomp + c]
    }

    /// Local dofs on cell `k`, indexed `[local edge][component]`.
    #[inline]
    pub fn local(&self, mesh: &Mesh, k: usize, c: usize) -> [f64; 3] {
        let ce = &mesh.cell_edges[k];
        [
            self.dof(ce[0].0, c),
            self.dof(ce[1].0, c),
            self.dof(ce[2].0, c),
        ]
    }

    #[inline]
    pub fn eval_bary(&self, mesh: &Mesh, k: usize, c: usize, l: &[f64; 3]) -> f64 {
        let d = self.local(mesh, k, c);
        (0..3).map(|i| d[i] * cr_basis(l, i)).sum()
    }

    #[inline]
    pub fn grad(&self, mesh: &Mesh, k: usize, c: usize) -> Point {
        let d = self.local(mesh, k, c);
        let mut g = [0.0; 2];
        for i in 0..3 {
            let b = cr_basis_grad(mesh, k, i);
            g[0] += d[i] * b[0];
            g[1] += d[i] * b[1];
        }
        g
    }

    /// Cellwise divergence of a two-component field (constant per cell).
    pub fn div(&self, mesh: &Mesh, k: usize) -> f64 {
        debug_assert_eq!(self.ncomp, 2);
        self.grad(mesh, k, 0)[0] + self.grad(mesh, k, 1)[1]
    }

    /// Extracts one component as a scalar field.
    pub fn component(&self, c: usize) -> CrField {
        CrField {
            ncomp: 1,
            values: self.values.iter().skip(c).step_by(self.ncomp).copied().collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `‖v‖²_{0,Ω}`, exact for CR fields (the CR mass matrix is `|K|/3 I`).
    pub fn l2_norm_sq(&self, mesh: &Mesh) -> f64 {
        let mut s = 0.0;
        for k in 0..mesh.num_cells() {
            for c in 0..self.ncomp {
                let d = self.local(mesh, k, c);
                s += mesh.area_cell[k] / 3.0 * (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
            }
        }
        s
    }

    /// `Σ_K ‖∇v‖²_{0,K}`.
    pub fn grad_norm_sq(&self, mesh: &Mesh) -> f64 {
        let mut s = 0.0;
        for k in 0..mesh.num_cells() {
            for c in 0..self.ncomp {
                let g = self.grad(mesh, k, c);
                s += mesh.area_cell[k] * (g[0] * g[0] + g[1] * g[1]);
            }
        }
        s
    }

    /// Unweighted broken norm `(‖v‖² + Σ_K ‖∇v‖²)^{1/2}`.
    pub fn broken_h1_norm(&self, mesh: &Mesh) -> f64 {
        (self.l2_norm_sq(mesh) + self.grad_norm_sq(mesh)).sqrt()
    }

    /// `max_K |div v|_K` for a two-component field.
    pub fn max_div(&self, mesh: &Mesh) -> f64 {
        (0..mesh.num_cells()).fold(0.0, |m, k| m.max(self.div(mesh, k).abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

impl P0Field {
    pub fn zeros(mesh: &Mesh, ncomp: usize) -> Self {
        P0Field {
            ncomp,
            values: vec![0.0; mesh.num_cells() * ncomp],
        }
    }

    pub fn constant(mesh: &Mesh, value: &[f64]) -> Self {
        let ncomp = value.len();
        let mut values = Vec::with_capacity(mesh.num_cells() * ncomp);
        for _ in 0..mesh.num_cells() {
            values.extend_from_slice(value);
        }
        P0Field { ncomp, values }
    }

    #[inline]
    pub fn get(&self, k: usize, c: usize) -> f64 {
        self.values[k * self.ncomp + c]
    }

    /// Σ_K |K| v_K per component.
    pub fn integral(&self, mesh: &Mesh, c: usize) -> f64 {
        (0..mesh.num_cells())
            .map(|k| mesh.area_cell[k] * self.get(k, c))
            .sum()
    }

    /// Subtracts the area-weighted mean of every component.
    pub fn remove_mean(&mut self, mesh: &Mesh) {
        let total: f64 = mesh.area_cell.iter().sum();
        for c in 0..self.ncomp {
            let mean = self.integral(mesh, c) / total;
            for k in 0..mesh.num_cells() {
                self.values[k * self.ncomp + c] -= mean;
            }
        }
    }

    pub fn l2_norm(&self, mesh: &Mesh) -> f64 {
        (0..mesh.num_cells())
            .map(|k| {
                let s: f64 = (0..self.ncomp).map(|c| self.get(k, c).powi(2)).sum();
                mesh.area_cell[k] * s
            })
            .sum::<f64>()
            .sqrt()
    }
}

impl BoundaryTrace {
    /// Homogeneous data on every boundary edge.
    pub fn zero(mesh: &Mesh, ncomp: usize) -> Self {
        BoundaryTrace {
            ncomp,
            values: vec![0.0; mesh.num_edges() * ncomp],
            constrained: mesh.boundary_edge.clone(),
        }
    }

    #[inline]
    pub fn value(&self, e: usize, c: usize) -> f64 {
        self.values[e * self.ncomp + c]
    }

    pub fn num_constrained(&self) -> usize {
        self.constrained.iter().filter(|&&b| b).count()
    }
}

/// Edge averages `(1/|e|) ∫_e f ds` for every edge (two-point Gauss).
pub fn cr_interpolate<F>(mesh: &Mesh, ncomp: usize, f: F) -> CrField
where
    F: Fn(Point) -> Vec<f64>,
{
    let mut values = vec![0.0; mesh.num_edges() * ncomp];
    for e in 0..mesh.num_edges() {
        let avg = edge_average(mesh, e, ncomp, &f);
        values[e * ncomp..(e + 1) * ncomp].copy_from_slice(&avg);
    }
    CrField { ncomp, values }
}

pub fn cr_interpolate_scalar<F: Fn(Point) -> f64>(mesh: &Mesh, f: F) -> CrField {
    cr_interpolate(mesh, 1, |x| vec![f(x)])
}

fn edge_average<F: Fn(Point) -> Vec<f64>>(mesh: &Mesh, e: usize, ncomp: usize, f: &F) -> Vec<f64> {
    let [a, b] = mesh.edge_endpoints(e);
    let mut acc = vec![0.0; ncomp];
    for &(t, w) in &GAUSS2 {
        let x = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        let v = f(x);
        for c in 0..ncomp {
            acc[c] += w * v[c];
        }
    }
    acc
}

/// Edge averages of `g` on boundary edges accepted by `on_dirichlet`; other
/// boundary edges are left unconstrained (natural condition).
pub fn boundary_interpolate<F, S>(mesh: &Mesh, ncomp: usize, g: F, on_dirichlet: S) -> BoundaryTrace
where
    F: Fn(Point) -> Vec<f64>,
    S: Fn(Point) -> bool,
{
    let mut trace = BoundaryTrace {
        ncomp,
        values: vec![0.0; mesh.num_edges() * ncomp],
        constrained: vec![false; mesh.num_edges()],
    };
    for e in 0..mesh.num_edges() {
        if !mesh.boundary_edge[e] || !on_dirichlet(mesh.edge_midpoint(e)) {
            continue;
        }
        trace.constrained[e] = true;
        let avg = edge_average(mesh, e, ncomp, &g);
        trace.values[e * ncomp..(e + 1) * ncomp].copy_from_slice(&avg);
    }
    trace
}

/// Cell averages of a pointwise function (degree-four cell quadrature).
pub fn p0_project<F>(mesh: &Mesh, ncomp: usize, f: F) -> P0Field
where
    F: Fn(Point) -> Vec<f64>,
{
    let mut values = vec![0.0; mesh.num_cells() * ncomp];
    for k in 0..mesh.num_cells() {
        for (l, w) in &TRI6 {
            let v = f(mesh.bary_to_point(k, *l));
            for c in 0..ncomp {
                values[k * ncomp + c] += w * v[c];
            }
        }
    }
    P0Field { ncomp, values }
}

/// Cell averages of a CR field: the affine function's value at the centroid,
/// i.e. the mean of the three edge dofs.
pub fn p0_project_cr(mesh: &Mesh, field: &CrField) -> P0Field {
    let n = field.ncomp;
    let mut values = vec![0.0; mesh.num_cells() * n];
    for k in 0..mesh.num_cells() {
        for c in 0..n {
            let d = field.local(mesh, k, c);
            values[k * n + c] = (d[0] + d[1] + d[2]) / 3.0;
        }
    }
    P0Field { ncomp: n, values }
}

/// Evaluates a CR field at a physical point inside cell `k`.
pub fn evaluate_cr(mesh: &Mesh, field: &CrField, k: usize, x: Point) -> Result<Vec<f64>> {
    let l = mesh.point_to_bary(k, x);
    if l.iter().any(|&v| v < -1e-10) {
        return Err(invalid(format!("point ({}, {}) lies outside cell {k}", x[0], x[1])));
    }
    Ok((0..field.ncomp).map(|c| field.eval_bary(mesh, k, c, &l)).collect())
}

/// Cellwise constant gradient of one component.
pub fn gradient_cr(mesh: &Mesh, field: &CrField, k: usize, c: usize) -> Point {
    field.grad(mesh, k, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square_mesh;
    use proptest::prelude::*;

    #[test]
    fn interpolation_examples() {
        let m = build_unit_square_mesh(1).unwrap();
        let c = cr_interpolate_scalar(&m, |_| 3.5);
        assert!(c.values.iter().all(|&v| v == 3.5));
        let bottom = (0..m.num_edges())
            .find(|&e| {
                let [a, b] = m.edge_endpoints(e);
                a[1] == 0.0 && b[1] == 0.0
            })
            .unwrap();
        let fx = cr_interpolate_scalar(&m, |x| x[0]);
        assert!((fx.dof(bottom, 0) - 0.5).abs() < 1e-15);
        let fxx = cr_interpolate_scalar(&m, |x| x[0] * x[0]);
        assert!((fxx.dof(bottom, 0) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn boundary_examples() {
        let m = build_unit_square_mesh(4).unwrap();
        let one = boundary_interpolate(&m, 1, |_| vec![1.0], |_| true);
        for e in 0..m.num_edges() {
            assert_eq!(one.constrained[e], m.boundary_edge[e]);
            if m.boundary_edge[e] {
                assert_eq!(one.value(e, 0), 1.0);
            }
        }
        let t = boundary_interpolate(
            &m,
            1,
            |x| vec![0.5 + 0.5 * (x[0] * x[1]).cos()],
            |x| x[1] == 0.0,
        );
        for e in 0..m.num_edges() {
            if t.constrained[e] {
                assert!((t.value(e, 0) - 1.0).abs() < 1e-15);
            }
        }
        assert_eq!(t.num_constrained(), 4);
        let right = boundary_interpolate(&m, 1, |_| vec![-1.0], |x| (x[0] - 1.0).abs() < 1e-12);
        assert_eq!(right.num_constrained(), 4);
        assert!((0..m.num_edges())
            .filter(|&e| right.constrained[e])
            .all(|e| right.value(e, 0) == -1.0));
    }

    #[test]
    fn p0_examples() {
        let m = build_unit_square_mesh(3).unwrap();
        let c = p0_project(&m, 1, |_| vec![2.0]);
        assert!(c.values.iter().all(|&v| (v - 2.0).abs() < 1e-14));
        let x = p0_project(&m, 1, |x| vec![x[0]]);
        for k in 0..m.num_cells() {
            assert!((x.get(k, 0) - m.centroid(k)[0]).abs() < 1e-14);
        }
        // affine CR field: centroid value equals cell average
        let cr = cr_interpolate_scalar(&m, |x| 2.0 * x[0] - x[1] + 1.0);
        let pc = p0_project_cr(&m, &cr);
        for k in 0..m.num_cells() {
            let g = m.centroid(k);
            assert!((pc.get(k, 0) - (2.0 * g[0] - g[1] + 1.0)).abs() < 1e-14);
        }
    }

    #[test]
    fn p0_rate_for_smooth_function() {
        let f = |x: Point| (std::f64::consts::PI * x[0]).sin();
        let mut errs = vec![];
        let mut hs = vec![];
        for n in [4, 8, 16, 32] {
            let m = build_unit_square_mesh(n).unwrap();
            let p = p0_project(&m, 1, |x| vec![f(x)]);
            let mut e2 = 0.0;
            for k in 0..m.num_cells() {
                for (l, w) in &TRI6 {
                    let d = f(m.bary_to_point(k, *l)) - p.get(k, 0);
                    e2 += w * m.area_cell[k] * d * d;
                }
            }
            errs.push(e2.sqrt());
            hs.push(m.stats().h_max);
        }
        let rate = (errs[2] / errs[3]).ln() / (hs[2] / hs[3]).ln();
        assert!((rate - 1.0).abs() < 0.05, "rate {rate}");
    }

    #[test]
    fn p0_idempotent() {
        let m = build_unit_square_mesh(3).unwrap();
        let p = p0_project(&m, 2, |x| vec![x[0].exp(), x[1] * x[0]]);
        let pp = p0_project(&m, 2, |x| {
            let k = (0..m.num_cells())
                .find(|&k| m.point_to_bary(k, x).iter().all(|&v| v > -1e-12))
                .unwrap();
            vec![p.get(k, 0), p.get(k, 1)]
        });
        for (a, b) in p.values.iter().zip(&pp.values) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn evaluation_and_gradient() {
        let m = Mesh::from_cells(vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]], vec![[0, 1, 2]]).unwrap();
        let f = cr_interpolate_scalar(&m, |x| x[0]);
        let g = gradient_cr(&m, &f, 0, 0);
        assert!((g[0] - 1.0).abs() < 1e-14 && g[1].abs() < 1e-14);
        let v = evaluate_cr(&m, &f, 0, [0.25, 0.25]).unwrap();
        assert!((v[0] - 0.25).abs() < 1e-14);
        assert!(evaluate_cr(&m, &f, 0, [0.9, 0.9]).is_err());
        let c = CrField::constant(&m, &[4.0]);
        assert!((evaluate_cr(&m, &c, 0, [0.1, 0.7]).unwrap()[0] - 4.0).abs() < 1e-14);
        let gc = gradient_cr(&m, &c, 0, 0);
        assert!(gc[0].abs() < 1e-14 && gc[1].abs() < 1e-14);
    }

    #[test]
    fn midpoint_continuity() {
        let m = build_unit_square_mesh(3).unwrap();
        let f = cr_interpolate_scalar(&m, |x| (x[0] * 3.0).sin() + x[1] * x[1]);
        for e in 0..m.num_edges() {
            if let (p, Some(q)) = m.edge_cells[e] {
                let mp = m.edge_midpoint(e);
                let a = evaluate_cr(&m, &f, p, mp).unwrap()[0];
                let b = evaluate_cr(&m, &f, q, mp).unwrap()[0];
                assert!((a - b).abs() < 1e-13);
                assert!((a - f.dof(e, 0)).abs() < 1e-13);
            }
        }
    }

    proptest! {
        #[test]
        fn kronecker_property_on_random_triangles(
            ax in -2.0..2.0f64, ay in -2.0..2.0f64,
            bx in -2.0..2.0f64, by in -2.0..2.0f64,
            cx in -2.0..2.0f64, cy in -2.0..2.0f64,
        ) {
            let area = crate::mesh::signed_area([ax, ay], [bx, by], [cx, cy]);
            prop_assume!(area.abs() > 1e-2);
            let m = Mesh::from_cells(vec![[ax, ay], [bx, by], [cx, cy]], vec![[0, 1, 2]]).unwrap();
            for i in 0..3 {
                let e_i = m.cell_edges[0][i].0;
                for j in 0..3 {
                    let mp = m.edge_midpoint(m.cell_edges[0][j].0);
                    let l = m.point_to_bary(0, mp);
                    let v = cr_basis(&l, i);
                    let expect = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((v - expect).abs() < 1e-9, "edge {} at midpoint {}", e_i, j);
                }
            }
        }

        #[test]
        fn affine_reproduction(a in -3.0..3.0f64, b in -3.0..3.0f64, c in -3.0..3.0f64) {
            let m = build_unit_square_mesh(2).unwrap();
            let f = cr_interpolate_scalar(&m, |x| a * x[0] + b * x[1] + c);
            for k in 0..m.num_cells() {
                let g = gradient_cr(&m, &f, k, 0);
                prop_assert!((g[0] - a).abs() < 1e-12 && (g[1] - b).abs() < 1e-12);
                let x = m.bary_to_point(k, [0.1, 0.3, 0.6]);
                let v = evaluate_cr(&m, &f, k, x).unwrap()[0];
                prop_assert!((v - (a * x[0] + b * x[1] + c)).abs() < 1e-12);
            }
        }
    }
}
