//! Discrete bilinear and trilinear forms.
//!
//! Every routine returns a standalone block with local numbering: CR dofs of
//! an `n`-component field are `e * n + c`, P0 dofs are cell indices. The
//! solvers place blocks into monolithic systems with `Triplets::add_matrix`.
//!
//! Cells are processed in fixed-size chunks on the rayon pool and the chunk
//! outputs are concatenated in order, so the result does not depend on the
//! number of threads.

use rayon::prelude::*;

use crate::fem::{cr_basis, cr_basis_grad, edge_bary, CrField, P0Field};
use crate::linalg::{CompressedMatrix, Triplets};
use crate::mesh::{Mesh, Point};
use crate::params::{Mat2, ProblemParams};
use crate::quadrature::{GAUSS2, TRI6};

const CHUNK: usize = 512;

type Entries = Vec<(usize, usize, f64)>;

fn par_cells<F>(mesh: &Mesh, nrows: usize, ncols: usize, kernel: F) -> CompressedMatrix
where
    F: Fn(usize, &mut Entries) + Sync,
{
    let nc = mesh.num_cells();
    let chunks: Vec<Entries> = (0..nc.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut buf = Entries::new();
            for k in c * CHUNK..((c + 1) * CHUNK).min(nc) {
                kernel(k, &mut buf);
            }
            buf
        })
        .collect();
    let mut t = Triplets::new(nrows, ncols);
    t.entries.reserve(chunks.iter().map(|c| c.len()).sum());
    for c in chunks {
        for (r, col, v) in c {
            t.push(r, col, v);
        }
    }
    t.finalize()
}

#[inline]
fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Cell means of `ν(T_h)` by six-point quadrature; `y` holds `(T, S)` and
/// `None` means `T ≡ 0`.
pub fn cell_viscosity(mesh: &Mesh, params: &ProblemParams, y: Option<&CrField>) -> Vec<f64> {
    (0..mesh.num_cells())
        .map(|k| match y {
            None => params.viscosity.eval(0.0),
            Some(_) if params.viscosity.is_constant() => params.viscosity.eval(0.0),
            Some(y) => TRI6
                .iter()
                .map(|(l, w)| w * params.viscosity.eval(y.eval_bary(mesh, k, 0, l)))
                .sum(),
        })
        .collect()
}

/// `∫ K⁻¹u·v + ν(T_h) ∇u:∇v` on two-component CR fields.
pub fn brinkman_diffusion(mesh: &Mesh, params: &ProblemParams, y: Option<&CrField>) -> CompressedMatrix {
    let nu = cell_viscosity(mesh, params, y);
    let n = 2 * mesh.num_edges();
    let kinv = params.kinv;
    par_cells(mesh, n, n, |k, out| {
        let area = mesh.area_cell[k];
        let ce = &mesh.cell_edges[k];
        let g: [Point; 3] = std::array::from_fn(|i| cr_basis_grad(mesh, k, i));
        for i in 0..3 {
            for a in 0..2 {
                let row = 2 * ce[i].0 + a;
                for b in 0..2 {
                    out.push((row, 2 * ce[i].0 + b, kinv[a][b] * area / 3.0));
                }
                for j in 0..3 {
                    out.push((row, 2 * ce[j].0 + a, nu[k] * area * dot(g[i], g[j])));
                }
            }
        }
    })
}

/// `b(v, q) = −Σ_K q_K ∫_K div v`; rows are cells, columns velocity dofs.
pub fn divergence(mesh: &Mesh) -> CompressedMatrix {
    par_cells(mesh, mesh.num_cells(), 2 * mesh.num_edges(), |k, out| {
        let area = mesh.area_cell[k];
        for (i, &(e, _)) in mesh.cell_edges[k].iter().enumerate() {
            let g = cr_basis_grad(mesh, k, i);
            out.push((k, 2 * e, -area * g[0]));
            out.push((k, 2 * e + 1, -area * g[1]));
        }
    })
}

/// `∫ D∇y:∇s = Σ_ab D_ab ∫ ∇y_b·∇s_a` on `(T, S)`.
pub fn cross_diffusion(mesh: &Mesh, d: &Mat2) -> CompressedMatrix {
    let n = 2 * mesh.num_edges();
    let d = *d;
    par_cells(mesh, n, n, |k, out| {
        let area = mesh.area_cell[k];
        let ce = &mesh.cell_edges[k];
        let g: [Point; 3] = std::array::from_fn(|i| cr_basis_grad(mesh, k, i));
        for i in 0..3 {
            for j in 0..3 {
                let s = area * dot(g[i], g[j]);
                for a in 0..2 {
                    for b in 0..2 {
                        out.push((2 * ce[i].0 + a, 2 * ce[j].0 + b, d[a][b] * s));
                    }
                }
            }
        }
    })
}

/// Weight times `|e|`, basis values on the cell, basis values on the neighbor.
type FacetPoint = (f64, [f64; 3], [f64; 3]);

/// Quadrature data for the facet part of the upwind forms on local edge `m`
/// of cell `k`: for each Gauss point, the weight times `|e|`, the basis values
/// on `k`, the neighbor, and the basis values on the neighbor.
fn facet_points(mesh: &Mesh, k: usize, m: usize) -> Option<(usize, [FacetPoint; 2])> {
    let e = mesh.cell_edges[k][m].0;
    let nb = mesh.neighbor(k, e)?;
    let len = mesh.h_edge[e];
    let pts = GAUSS2.map(|(t, w)| {
        let l = edge_bary(m, t);
        let x = mesh.bary_to_point(k, l);
        let ln = mesh.point_to_bary(nb, x);
        (w * len, l, ln)
    });
    Some((nb, pts))
}

/// Upwind convection `cʰ(w; u, v)` acting on `ncomp`-component fields:
/// `Σ_K ∫_K (w·∇u)·v + Σ_K ∫_{∂K\Γ} ½(w·n_K − |w·n_K|)(uᵉ − u)·v`, with
/// `w·n_K` taken from the trace of `w` on `K`.
pub fn upwind_advection(mesh: &Mesh, w: &CrField, ncomp: usize) -> CompressedMatrix {
    let n = ncomp * mesh.num_edges();
    par_cells(mesh, n, n, |k, out| {
        let area = mesh.area_cell[k];
        let ce = &mesh.cell_edges[k];
        let g: [Point; 3] = std::array::from_fn(|i| cr_basis_grad(mesh, k, i));
        let wl = [w.local(mesh, k, 0), w.local(mesh, k, 1)];
        for i in 0..3 {
            for j in 0..3 {
                // Midpoint rule is exact: ∫ w_c ψ_i = |K|/3 w_c(m_i).
                let v = area / 3.0 * (wl[0][i] * g[j][0] + wl[1][i] * g[j][1]);
                for a in 0..ncomp {
                    out.push((ncomp * ce[i].0 + a, ncomp * ce[j].0 + a, v));
                }
            }
        }
        for m in 0..3 {
            let Some((nb, pts)) = facet_points(mesh, k, m) else {
                continue;
            };
            let nk = mesh.outward_normal(k, m);
            let ne = &mesh.cell_edges[nb];
            for (wt, l, ln) in pts {
                let wn = nk[0] * (0..3).map(|j| wl[0][j] * cr_basis(&l, j)).sum::<f64>()
                    + nk[1] * (0..3).map(|j| wl[1][j] * cr_basis(&l, j)).sum::<f64>();
                let coef = 0.5 * (wn - wn.abs()) * wt;
                if coef == 0.0 {
                    continue;
                }
                for i in 0..3 {
                    let vi = cr_basis(&l, i);
                    for j in 0..3 {
                        let outer = coef * cr_basis(&ln, j) * vi;
                        let inner = -coef * cr_basis(&l, j) * vi;
                        for a in 0..ncomp {
                            out.push((ncomp * ce[i].0 + a, ncomp * ne[j].0 + a, outer));
                            out.push((ncomp * ce[i].0 + a, ncomp * ce[j].0 + a, inner));
                        }
                    }
                }
            }
        }
    })
}

/// Derivative of `cʰ(w; u, v)` with respect to the advecting field `w` at
/// fixed `u`: columns are the two-component `δw` dofs, rows the test dofs of
/// the `u.ncomp`-component field. The upwind flux is linearized as
/// `½(1 − sign(w·n)) (δw·n)(uᵉ − u)·v` with `sign(0) = 0`.
pub fn upwind_linearized(mesh: &Mesh, w: &CrField, u: &CrField) -> CompressedMatrix {
    let nu = u.ncomp;
    let ne_total = mesh.num_edges();
    par_cells(mesh, nu * ne_total, 2 * ne_total, |k, out| {
        let area = mesh.area_cell[k];
        let ce = &mesh.cell_edges[k];
        let wl = [w.local(mesh, k, 0), w.local(mesh, k, 1)];
        for a in 0..nu {
            let gu = u.grad(mesh, k, a);
            for i in 0..3 {
                for c in 0..2 {
                    out.push((nu * ce[i].0 + a, 2 * ce[i].0 + c, area / 3.0 * gu[c]));
                }
            }
        }
        for m in 0..3 {
            let Some((nb, pts)) = facet_points(mesh, k, m) else {
                continue;
            };
            let nk = mesh.outward_normal(k, m);
            for (wt, l, ln) in pts {
                let wn = nk[0] * (0..3).map(|j| wl[0][j] * cr_basis(&l, j)).sum::<f64>()
                    + nk[1] * (0..3).map(|j| wl[1][j] * cr_basis(&l, j)).sum::<f64>();
                let s = if wn > 0.0 {
                    1.0
                } else if wn < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                let coef = 0.5 * (1.0 - s) * wt;
                if coef == 0.0 {
                    continue;
                }
                for a in 0..nu {
                    let jump = u.eval_bary(mesh, nb, a, &ln) - u.eval_bary(mesh, k, a, &l);
                    if jump == 0.0 {
                        continue;
                    }
                    for i in 0..3 {
                        let vi = cr_basis(&l, i);
                        for j in 0..3 {
                            let base = coef * jump * vi * cr_basis(&l, j);
                            for c in 0..2 {
                                out.push((nu * ce[i].0 + a, 2 * ce[j].0 + c, base * nk[c]));
                            }
                        }
                    }
                }
            }
        }
    })
}

/// `∫ ν'(T_h) δT ∇u_h:∇v`: rows are velocity test dofs, columns the `(T, S)`
/// dofs (only the `T` columns are populated).
pub fn viscosity_coupling(mesh: &Mesh, params: &ProblemParams, y: &CrField, u: &CrField) -> CompressedMatrix {
    let n = 2 * mesh.num_edges();
    par_cells(mesh, n, n, |k, out| {
        if params.viscosity.is_constant() {
            return;
        }
        let area = mesh.area_cell[k];
        let ce = &mesh.cell_edges[k];
        let mut wpsi = [0.0; 3];
        for (l, w) in &TRI6 {
            let dnu = params.viscosity.derivative(y.eval_bary(mesh, k, 0, l));
            for (j, acc) in wpsi.iter_mut().enumerate() {
                *acc += w * area * dnu * cr_basis(l, j);
            }
        }
        let gu = [u.grad(mesh, k, 0), u.grad(mesh, k, 1)];
        for i in 0..3 {
            let gi = cr_basis_grad(mesh, k, i);
            for a in 0..2 {
                let s = dot(gu[a], gi);
                for j in 0..3 {
                    out.push((2 * ce[i].0 + a, 2 * ce[j].0, s * wpsi[j]));
                }
            }
        }
    })
}

/// `∫ (M(x) y)·v` between two-component CR fields, with `M` evaluated at the
/// six quadrature points of each cell (`M(k, λ)`).
pub fn weighted_mass<F>(mesh: &Mesh, m: F) -> CompressedMatrix
where
    F: Fn(usize, &[f64; 3]) -> Mat2 + Sync,
{
    let n = 2 * mesh.num_edges();
    par_cells(mesh, n, n, |k, out| {
        let area = mesh.area_cell[k];
        let ce = &mesh.cell_edges[k];
        let mut acc = [[[[0.0; 2]; 2]; 3]; 3];
        for (l, w) in &TRI6 {
            let mk = m(k, l);
            for i in 0..3 {
                for j in 0..3 {
                    let s = w * area * cr_basis(l, i) * cr_basis(l, j);
                    for a in 0..2 {
                        for b in 0..2 {
                            acc[i][j][a][b] += s * mk[a][b];
                        }
                    }
                }
            }
        }
        for i in 0..3 {
            for j in 0..3 {
                for a in 0..2 {
                    for b in 0..2 {
                        out.push((2 * ce[i].0 + a, 2 * ce[j].0 + b, acc[i][j][a][b]));
                    }
                }
            }
        }
    })
}

/// `∫ (M y)·v` for constant `M`; the CR mass matrix is diagonal.
pub fn constant_mass(mesh: &Mesh, m: &Mat2) -> CompressedMatrix {
    let n = 2 * mesh.num_edges();
    let m = *m;
    par_cells(mesh, n, n, |k, out| {
        let area = mesh.area_cell[k];
        for &(e, _) in &mesh.cell_edges[k] {
            for a in 0..2 {
                for b in 0..2 {
                    out.push((2 * e + a, 2 * e + b, m[a][b] * area / 3.0));
                }
            }
        }
    })
}

/// Diagonal of the scalar CR mass matrix, `Σ_{K ∋ e} |K|/3`.
pub fn mass_diagonal(mesh: &Mesh) -> Vec<f64> {
    let mut d = vec![0.0; mesh.num_edges()];
    for k in 0..mesh.num_cells() {
        for &(e, _) in &mesh.cell_edges[k] {
            d[e] += mesh.area_cell[k] / 3.0;
        }
    }
    d
}

/// `Σ_e ∫_e (a₀/h_e) ν₂ [u]:[v]` over all edges; on Γ the jump is the trace.
pub fn jump_penalty(mesh: &Mesh, a0: f64, nu2: f64) -> CompressedMatrix {
    let n = 2 * mesh.num_edges();
    let mut t = Triplets::new(n, n);
    if a0 == 0.0 {
        return t.finalize();
    }
    for e in 0..mesh.num_edges() {
        let (kp, km) = mesh.edge_cells[e];
        let scale = a0 * nu2; // |e| / h_e = 1
        for &(tq, w) in &GAUSS2 {
            let x = {
                let [p, q] = mesh.edge_endpoints(e);
                [p[0] + tq * (q[0] - p[0]), p[1] + tq * (q[1] - p[1])]
            };
            // (dof, value, sign) of every basis function with a trace on e.
            let mut traces: Vec<(usize, f64)> = Vec::with_capacity(6);
            for (k, sign) in std::iter::once((kp, 1.0)).chain(km.map(|k| (k, -1.0))) {
                let l = mesh.point_to_bary(k, x);
                for (i, &(ee, _)) in mesh.cell_edges[k].iter().enumerate() {
                    traces.push((ee, sign * cr_basis(&l, i)));
                }
            }
            for &(ei, vi) in &traces {
                for &(ej, vj) in &traces {
                    let v = scale * w * vi * vj;
                    t.push(2 * ei, 2 * ej, v);
                    t.push(2 * ei + 1, 2 * ej + 1, v);
                }
            }
        }
    }
    t.finalize()
}

/// `(f, v)` for an `ncomp`-component CR test space.
pub fn load<F>(mesh: &Mesh, ncomp: usize, f: F) -> Vec<f64>
where
    F: Fn(Point) -> Vec<f64>,
{
    let mut b = vec![0.0; ncomp * mesh.num_edges()];
    for k in 0..mesh.num_cells() {
        let area = mesh.area_cell[k];
        let ce = &mesh.cell_edges[k];
        for (l, w) in &TRI6 {
            let v = f(mesh.bary_to_point(k, *l));
            for i in 0..3 {
                let s = w * area * cr_basis(l, i);
                for c in 0..ncomp {
                    b[ncomp * ce[i].0 + c] += s * v[c];
                }
            }
        }
    }
    b
}

/// `(U, v)` for a piecewise-constant `U`: `U_K |K| / 3` per local dof.
pub fn load_p0(mesh: &Mesh, u: &P0Field) -> Vec<f64> {
    let n = u.ncomp;
    let mut b = vec![0.0; n * mesh.num_edges()];
    for k in 0..mesh.num_cells() {
        for &(e, _) in &mesh.cell_edges[k] {
            for c in 0..n {
                b[n * e + c] += u.get(k, c) * mesh.area_cell[k] / 3.0;
            }
        }
    }
    b
}

/// Constraint row `c` with `c·p = Σ_K |K| p_K`.
pub fn mean_constraint(mesh: &Mesh) -> Vec<f64> {
    mesh.area_cell.clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::cr_interpolate;
    use crate::mesh::build_unit_square_mesh;
    use crate::params::{scaled, Bounds, Buoyancy, Viscosity, IDENTITY};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn params(sigma: f64, nu: Viscosity) -> ProblemParams {
        ProblemParams {
            kinv: scaled(&IDENTITY, sigma),
            viscosity: nu,
            diffusion: IDENTITY,
            buoyancy: Buoyancy::thermosolutal(1.0, [0.0, 1.0]),
            lambda: 1.0,
            bounds: Bounds::uniform(-1.0, 1.0),
            penalty: None,
        }
    }

    fn random_field(mesh: &Mesh, ncomp: usize, seed: u64) -> CrField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CrField {
            ncomp,
            values: (0..ncomp * mesh.num_edges()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    fn broken_h1_sq(mesh: &Mesh, v: &CrField) -> (f64, f64) {
        let mut l2 = 0.0;
        let mut h1 = 0.0;
        for k in 0..mesh.num_cells() {
            for c in 0..v.ncomp {
                let g = v.grad(mesh, k, c);
                h1 += mesh.area_cell[k] * dot(g, g);
                l2 += TRI6
                    .iter()
                    .map(|(l, w)| w * mesh.area_cell[k] * v.eval_bary(mesh, k, c, l).powi(2))
                    .sum::<f64>();
            }
        }
        (l2, h1)
    }

    #[test]
    fn brinkman_constant_field_and_symmetry() {
        let mesh = build_unit_square_mesh(3).unwrap();
        let p = params(1.0, Viscosity::Constant(1.0));
        let m = brinkman_diffusion(&mesh, &p, None);
        let c = CrField::constant(&mesh, &[0.7, 0.0]);
        assert!((m.quad_form(&c.values, &c.values) - 0.49).abs() < 1e-13);
        let c2 = CrField::constant(&mesh, &[0.7, 0.7]);
        assert!((m.quad_form(&c2.values, &c2.values) - 2.0 * 0.49).abs() < 1e-13);
        assert!(m.asymmetry() < 1e-14);
    }

    #[test]
    fn brinkman_equals_mass_plus_stiffness() {
        let mesh = build_unit_square_mesh(4).unwrap();
        let (sigma, nu) = (2.5, 0.3);
        let m = brinkman_diffusion(&mesh, &params(sigma, Viscosity::Constant(nu)), None);
        let mass = constant_mass(&mesh, &scaled(&IDENTITY, sigma));
        let stiff = cross_diffusion(&mesh, &scaled(&IDENTITY, nu));
        for seed in 0..5 {
            let v = random_field(&mesh, 2, seed);
            let a = m.quad_form(&v.values, &v.values);
            let b = mass.quad_form(&v.values, &v.values) + stiff.quad_form(&v.values, &v.values);
            assert!((a - b).abs() < 1e-12 * a.abs());
            let (l2, h1) = broken_h1_sq(&mesh, &v);
            assert!((a - sigma * l2 - nu * h1).abs() < 1e-11 * a);
        }
    }

    #[test]
    fn brinkman_coercive() {
        let mesh = build_unit_square_mesh(4).unwrap();
        let p = params(1.0, Viscosity::Exponential { nu2: 1.0 });
        let y = cr_interpolate(&mesh, 2, |x| vec![0.5 + 0.5 * (x[0] * x[1]).cos(), 0.0]);
        let m = brinkman_diffusion(&mesh, &p, Some(&y));
        let nu1 = (-1.0f64).exp();
        for seed in 0..100 {
            let v = random_field(&mesh, 2, 100 + seed);
            let (l2, h1) = broken_h1_sq(&mesh, &v);
            assert!(m.quad_form(&v.values, &v.values) >= nu1.min(1.0) * (l2 + h1) - 1e-12);
        }
    }

    #[test]
    fn divergence_examples() {
        let mesh = build_unit_square_mesh(3).unwrap();
        let b = divergence(&mesh);
        let c = CrField::constant(&mesh, &[1.0, -2.0]);
        assert!(b.matvec(&c.values).iter().all(|v| v.abs() < 1e-14));
        let v = cr_interpolate(&mesh, 2, |x| vec![x[0], 0.0]);
        let bv = b.matvec(&v.values);
        for k in 0..mesh.num_cells() {
            assert!((bv[k] + mesh.area_cell[k]).abs() < 1e-14);
            assert!((bv[k] + mesh.area_cell[k] * v.div(&mesh, k)).abs() < 1e-14);
        }
    }

    #[test]
    fn cross_diffusion_scaling_and_coupling() {
        let mesh = build_unit_square_mesh(2).unwrap();
        let a1 = cross_diffusion(&mesh, &IDENTITY);
        let a1000 = cross_diffusion(&mesh, &scaled(&IDENTITY, 1000.0));
        assert_eq!(a1.col_idx, a1000.col_idx);
        for (x, y) in a1.values.iter().zip(&a1000.values) {
            assert_eq!(1000.0 * x, *y);
        }
        for i in 0..a1.nrows {
            for (j, _) in a1.row(i) {
                assert_eq!(i % 2, j % 2, "identity D must not couple components");
            }
        }
        let (sr, du) = (0.3, 0.1);
        let a = cross_diffusion(&mesh, &[[1.0, du], [sr, 2.0]]);
        let t = cr_interpolate(&mesh, 2, |x| vec![x[0] * x[0], 0.0]);
        let s = cr_interpolate(&mesh, 2, |x| vec![0.0, x[0] + 0.5 * x[1]]);
        let base = cross_diffusion(&mesh, &[[0.0, 0.0], [1.0, 0.0]]);
        let q = a.quad_form(&s.values, &t.values);
        assert!((q - sr * base.quad_form(&s.values, &t.values)).abs() < 1e-13);
        assert!(q.abs() > 1e-3);
    }

    #[test]
    fn upwind_zero_field_and_outflow() {
        let mesh = build_unit_square_mesh(3).unwrap();
        let z = CrField::zeros(&mesh, 2);
        assert_eq!(upwind_advection(&mesh, &z, 2).nnz(), 0);
        // On the two-cell mesh, w = (1, −1) leaves the upper-left cell
        // through the diagonal, so rows of its unshared edges see only the
        // volume term.
        let one = build_unit_square_mesh(1).unwrap();
        let w = CrField::constant(&one, &[1.0, -1.0]);
        let n = upwind_advection(&one, &w, 1);
        let upper = (0..2)
            .find(|&k| one.centroid(k)[1] > one.centroid(k)[0])
            .unwrap();
        let ce = one.cell_edges[upper];
        let area = one.area_cell[upper];
        for i in 0..3 {
            let e = ce[i].0;
            if !one.boundary_edge[e] {
                continue;
            }
            for j in 0..3 {
                let g = cr_basis_grad(&one, upper, j);
                let vol = area / 3.0 * (g[0] - g[1]);
                assert!((n.get(e, ce[j].0) - vol).abs() < 1e-14);
            }
        }
    }

    /// Direct evaluation of vᵀ N(w) u from point values, sharing nothing with
    /// the assembly beyond the mesh.
    fn upwind_oracle(mesh: &Mesh, w: &CrField, u: &CrField, v: &CrField) -> f64 {
        let mut total = 0.0;
        for k in 0..mesh.num_cells() {
            let area = mesh.area_cell[k];
            // Volume: midpoint rule on the quadratic integrand.
            for m in 0..3 {
                let mut l = [0.5; 3];
                l[m] = 0.0;
                let x = mesh.bary_to_point(k, l);
                let wx = crate::fem::evaluate_cr(mesh, w, k, x).unwrap();
                let vx = crate::fem::evaluate_cr(mesh, v, k, x).unwrap();
                for c in 0..u.ncomp {
                    let g = u.grad(mesh, k, c);
                    total += area / 3.0 * (wx[0] * g[0] + wx[1] * g[1]) * vx[c];
                }
            }
            for (m, &(e, _)) in mesh.cell_edges[k].iter().enumerate() {
                let Some(nb) = mesh.neighbor(k, e) else { continue };
                let nk = mesh.outward_normal(k, m);
                let [p, q] = mesh.edge_endpoints(e);
                let len = mesh.h_edge[e];
                for &(t, wt) in &GAUSS2 {
                    let x = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
                    let wx = crate::fem::evaluate_cr(mesh, w, k, x).unwrap();
                    let a = wx[0] * nk[0] + wx[1] * nk[1];
                    let ui = crate::fem::evaluate_cr(mesh, u, k, x).unwrap();
                    let ue = crate::fem::evaluate_cr(mesh, u, nb, x).unwrap();
                    let vi = crate::fem::evaluate_cr(mesh, v, k, x).unwrap();
                    for c in 0..u.ncomp {
                        total += wt * len * 0.5 * (a - a.abs()) * (ue[c] - ui[c]) * vi[c];
                    }
                }
            }
        }
        total
    }

    #[test]
    fn upwind_matches_pointwise_oracle() {
        let mesh = build_unit_square_mesh(5).unwrap();
        for seed in 0..5 {
            let w = random_field(&mesh, 2, 60 + seed);
            let u = random_field(&mesh, 2, 70 + seed);
            let v = random_field(&mesh, 2, 80 + seed);
            let a = upwind_advection(&mesh, &w, 2).quad_form(&v.values, &u.values);
            let b = upwind_oracle(&mesh, &w, &u, &v);
            assert!((a - b).abs() < 1e-12 * (1.0 + b.abs()), "{a} vs {b}");
        }
    }

    #[test]
    fn linearization_matches_difference() {
        let mesh = build_unit_square_mesh(4).unwrap();
        let w = random_field(&mesh, 2, 11);
        let u = random_field(&mesh, 2, 12);
        let dw = random_field(&mesh, 2, 13);
        let lin = upwind_linearized(&mesh, &w, &u);
        let eps = 1e-7;
        let shift = |s: f64| CrField {
            ncomp: 2,
            values: w.values.iter().zip(&dw.values).map(|(a, b)| a + s * b).collect(),
        };
        let plus = upwind_advection(&mesh, &shift(eps), 2).matvec(&u.values);
        let minus = upwind_advection(&mesh, &shift(-eps), 2).matvec(&u.values);
        let fd: Vec<f64> = plus.iter().zip(&minus).map(|(a, b)| (a - b) / (2.0 * eps)).collect();
        let an = lin.matvec(&dw.values);
        let err: f64 = fd.iter().zip(&an).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let scale: f64 = an.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(err < 1e-6 * scale, "err {err} scale {scale}");
        // Linear in w in the volume part: the derivative at w itself
        // reproduces the volume term.
        let vol_self = lin.matvec(&w.values);
        assert!(vol_self.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn viscosity_coupling_matches_difference() {
        let mesh = build_unit_square_mesh(3).unwrap();
        let p = params(1.0, Viscosity::Exponential { nu2: 1.5 });
        let y = random_field(&mesh, 2, 21);
        let u = random_field(&mesh, 2, 22);
        let dy = random_field(&mesh, 2, 23);
        let eps = 1e-6;
        let shift = |s: f64| CrField {
            ncomp: 2,
            values: y.values.iter().zip(&dy.values).map(|(a, b)| a + s * b).collect(),
        };
        let ap = brinkman_diffusion(&mesh, &p, Some(&shift(eps))).matvec(&u.values);
        let am = brinkman_diffusion(&mesh, &p, Some(&shift(-eps))).matvec(&u.values);
        let an = viscosity_coupling(&mesh, &p, &y, &u).matvec(&dy.values);
        for (i, v) in an.iter().enumerate() {
            let fd = (ap[i] - am[i]) / (2.0 * eps);
            assert!((fd - v).abs() < 1e-7 * (1.0 + v.abs()));
        }
        let c = viscosity_coupling(&mesh, &params(1.0, Viscosity::Constant(2.0)), &y, &u);
        assert_eq!(c.nnz(), 0);
    }

    #[test]
    fn weighted_mass_matches_constant_mass() {
        let mesh = build_unit_square_mesh(3).unwrap();
        let g = [[0.0, 0.0], [1.0, 2.0]];
        let a = weighted_mass(&mesh, |_, _| g);
        let b = constant_mass(&mesh, &g);
        let u = random_field(&mesh, 2, 31);
        let v = random_field(&mesh, 2, 32);
        assert!((a.quad_form(&v.values, &u.values) - b.quad_form(&v.values, &u.values)).abs() < 1e-13);
    }

    #[test]
    fn jump_penalty_properties() {
        let mesh = build_unit_square_mesh(3).unwrap();
        assert_eq!(jump_penalty(&mesh, 0.0, 1.0).nnz(), 0);
        let j = jump_penalty(&mesh, 10.0, 1.0);
        assert!(j.asymmetry() < 1e-13);
        // Affine functions vanishing on Γ do not exist beyond zero, but
        // interior jumps of an affine interpolant vanish: only boundary
        // traces contribute.
        let aff = cr_interpolate(&mesh, 2, |x| vec![1.0 + x[0] - 2.0 * x[1], 0.0]);
        let boundary_only: f64 = {
            let mut s = 0.0;
            for e in 0..mesh.num_edges() {
                if mesh.boundary_edge[e] {
                    let [p, q] = mesh.edge_endpoints(e);
                    for &(t, w) in &GAUSS2 {
                        let x = [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])];
                        s += 10.0 * w * (1.0 + x[0] - 2.0 * x[1]).powi(2);
                    }
                }
            }
            s
        };
        assert!((j.quad_form(&aff.values, &aff.values) - boundary_only).abs() < 1e-11);
        for seed in 0..20 {
            let v = random_field(&mesh, 2, 40 + seed);
            assert!(j.quad_form(&v.values, &v.values) > 0.0);
        }
        // PSD check through a dense Cholesky with a tiny shift.
        let small = build_unit_square_mesh(1).unwrap();
        let d = jump_penalty(&small, 1.0, 1.0).to_dense();
        let n = d.len();
        let mut l = vec![vec![0.0; n]; n];
        for i in 0..n {
            for k in 0..=i {
                let s: f64 = (0..k).map(|m| l[i][m] * l[k][m]).sum();
                if i == k {
                    let v = d[i][i] + 1e-10 - s;
                    assert!(v > 0.0);
                    l[i][i] = v.sqrt();
                } else {
                    l[i][k] = (d[i][k] - s) / l[k][k];
                }
            }
        }
    }

    #[test]
    fn load_and_constraint_examples() {
        let mesh = build_unit_square_mesh(4).unwrap();
        assert!(load(&mesh, 2, |_| vec![0.0, 0.0]).iter().all(|&v| v == 0.0));
        let b = load(&mesh, 2, |_| vec![1.0, 0.0]);
        let sx: f64 = b.iter().step_by(2).sum();
        let sy: f64 = b.iter().skip(1).step_by(2).sum();
        assert!((sx - 1.0).abs() < 1e-13 && sy == 0.0);
        let u = P0Field::constant(&mesh, &[1.0, 0.0]);
        let bp = load_p0(&mesh, &u);
        for (a, c) in b.iter().zip(&bp) {
            assert!((a - c).abs() < 1e-15);
        }
        let one = build_unit_square_mesh(1).unwrap();
        assert_eq!(mean_constraint(&one), vec![0.5, 0.5]);
        let md = mass_diagonal(&mesh);
        assert!((md.iter().sum::<f64>() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let mesh = build_unit_square_mesh(24).unwrap();
        let w = random_field(&mesh, 2, 51);
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let parallel = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        let a = serial.install(|| upwind_advection(&mesh, &w, 2));
        let b = parallel.install(|| upwind_advection(&mesh, &w, 2));
        assert_eq!(a, b);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn upwind_quadratic_form_on_zero_boundary(seed in 0u64..1000) {
            // For a constant advecting field w·n is single valued, so the
            // form equals ½ Σ ∫ |w·n| [u]² ≥ 0 for u vanishing on Γ.
            let mesh = build_unit_square_mesh(4).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let w = CrField::constant(&mesh, &[rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]);
            let mut u = random_field(&mesh, 1, seed + 1);
            for e in 0..mesh.num_edges() {
                if mesh.boundary_edge[e] {
                    u.values[e] = 0.0;
                }
            }
            let q = upwind_advection(&mesh, &w, 1).quad_form(&u.values, &u.values);
            let norm: f64 = u.values.iter().map(|v| v * v).sum();
            prop_assert!(q >= -1e-12 * norm, "q = {}", q);
        }
    }
}
