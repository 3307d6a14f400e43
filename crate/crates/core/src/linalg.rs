//! Sparse storage and direct solution of the (indefinite) saddle-point systems.
//!
//! Factorization is delegated to faer's sparse LU with partial pivoting and a
//! fill-reducing column ordering, run sequentially so results are bitwise
//! reproducible.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{invalid, Error, Result};

/// Coordinate-format accumulator. Duplicate entries are summed on finalize.
#[derive(Debug, Clone, Default)]
pub struct Triplets {
    pub nrows: usize,
    pub ncols: usize,
    pub entries: Vec<(usize, usize, f64)>,
}

impl Triplets {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Triplets {
            nrows,
            ncols,
            entries: Vec::new(),
        }
    }

    #[inline]
    pub fn push(&mut self, row: usize, col: usize, value: f64) {
        debug_assert!(row < self.nrows && col < self.ncols);
        if value != 0.0 {
            self.entries.push((row, col, value));
        }
    }

    /// Adds `scale * m` with its top-left corner at `(row0, col0)`.
    pub fn add_matrix(&mut self, row0: usize, col0: usize, scale: f64, m: &CompressedMatrix) {
        debug_assert!(row0 + m.nrows <= self.nrows && col0 + m.ncols <= self.ncols);
        self.entries.reserve(m.nnz());
        for i in 0..m.nrows {
            for (j, v) in m.row(i) {
                self.push(row0 + i, col0 + j, scale * v);
            }
        }
    }

    /// A view that shifts indices into a sub-block and scales values.
    pub fn block(&mut self, row0: usize, col0: usize) -> Block<'_> {
        Block {
            t: self,
            row0,
            col0,
            scale: 1.0,
        }
    }

    pub fn finalize(mut self) -> CompressedMatrix {
        // Stable, so duplicates are summed in insertion order.
        self.entries.sort_by_key(|a| (a.0, a.1));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for &(r, c, v) in &self.entries {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..self.nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        CompressedMatrix {
            nrows: self.nrows,
            ncols: self.ncols,
            row_ptr,
            col_idx,
            values,
        }
    }
}

/// Offset, scaled window into a [`Triplets`] accumulator.
pub struct Block<'a> {
    t: &'a mut Triplets,
    row0: usize,
    col0: usize,
    scale: f64,
}

impl Block<'_> {
    #[inline]
    pub fn add(&mut self, row: usize, col: usize, value: f64) {
        self.t.push(self.row0 + row, self.col0 + col, self.scale * value);
    }

    pub fn scaled(self, scale: f64) -> Self {
        Block { scale: self.scale * scale, ..self }
    }
}

/// Compressed sparse row matrix with sorted, unique column indices per row.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedMatrix {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CompressedMatrix {
    pub fn identity(n: usize) -> Self {
        CompressedMatrix {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![1.0; n],
        }
    }

    pub fn from_dense(rows: &[Vec<f64>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut t = Triplets::new(nrows, ncols);
        for (i, r) in rows.iter().enumerate() {
            for (j, &v) in r.iter().enumerate() {
                t.push(i, j, v);
            }
        }
        t.finalize()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(p) => self.values[r.start + p],
            Err(_) => 0.0,
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.ncols);
        (0..self.nrows)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    /// `yᵀ A x`.
    pub fn quad_form(&self, y: &[f64], x: &[f64]) -> f64 {
        self.matvec(x).iter().zip(y).map(|(a, b)| a * b).sum()
    }

    pub fn transpose(&self) -> CompressedMatrix {
        let mut t = Triplets::new(self.ncols, self.nrows);
        t.entries.reserve(self.nnz());
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                t.entries.push((j, i, v));
            }
        }
        t.finalize()
    }

    pub fn to_triplets(&self) -> Triplets {
        let mut t = Triplets::new(self.nrows, self.ncols);
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                t.entries.push((i, j, v));
            }
        }
        t
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let mut d = vec![vec![0.0; self.ncols]; self.nrows];
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                d[i][j] = v;
            }
        }
        d
    }

    /// Largest |A_ij − A_ji|.
    pub fn asymmetry(&self) -> f64 {
        let t = self.transpose();
        let mut m: f64 = 0.0;
        for i in 0..self.nrows {
            for (j, v) in self.row(i) {
                m = m.max((v - t.get(i, j)).abs());
            }
            for (j, v) in t.row(i) {
                m = m.max((v - self.get(i, j)).abs());
            }
        }
        m
    }

    /// Euclidean norm of column `j`.
    pub fn column_norm(&self, j: usize) -> f64 {
        (0..self.nrows)
            .map(|i| self.get(i, j).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    fn to_faer(&self) -> Result<SparseColMat<usize, f64>> {
        let trip: Vec<Triplet<usize, usize, f64>> = (0..self.nrows)
            .flat_map(|i| self.row(i).map(move |(j, v)| Triplet::new(i, j, v)))
            .collect();
        SparseColMat::try_new_from_triplets(self.nrows, self.ncols, &trip)
            .map_err(|e| invalid(format!("sparse conversion failed: {e:?}")))
    }
}

/// Factorized matrix, reusable across right-hand sides.
pub struct DirectSolver {
    matrix: CompressedMatrix,
    lu: faer::sparse::linalg::solvers::Lu<usize, f64>,
    row_scale: Vec<f64>,
    col_scale: Vec<f64>,
}

/// Ruiz equilibration: `R A C` with row and column max-norms close to one.
fn equilibrate(a: &CompressedMatrix) -> (Vec<f64>, Vec<f64>) {
    let mut r = vec![1.0; a.nrows];
    let mut c = vec![1.0; a.ncols];
    for _ in 0..10 {
        let mut rmax = vec![0.0f64; a.nrows];
        let mut cmax = vec![0.0f64; a.ncols];
        for i in 0..a.nrows {
            for (j, v) in a.row(i) {
                let s = (r[i] * v * c[j]).abs();
                rmax[i] = rmax[i].max(s);
                cmax[j] = cmax[j].max(s);
            }
        }
        let mut done = true;
        for (ri, m) in r.iter_mut().zip(&rmax) {
            if *m > 0.0 {
                done &= (m - 1.0).abs() < 0.1;
                *ri /= m.sqrt();
            }
        }
        for (cj, m) in c.iter_mut().zip(&cmax) {
            if *m > 0.0 {
                done &= (m - 1.0).abs() < 0.1;
                *cj /= m.sqrt();
            }
        }
        if done {
            break;
        }
    }
    (r, c)
}

const RESIDUAL_TOL: f64 = 1e-9;

impl DirectSolver {
    pub fn new(a: &CompressedMatrix) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(invalid(format!("matrix is {}x{}, not square", a.nrows, a.ncols)));
        }
        let (row_scale, col_scale) = equilibrate(a);
        let mut scaled = a.clone();
        for i in 0..scaled.nrows {
            for k in scaled.row_ptr[i]..scaled.row_ptr[i + 1] {
                scaled.values[k] *= row_scale[i] * col_scale[scaled.col_idx[k]];
            }
        }
        let csc = scaled.to_faer()?;
        // faer panics on an exactly zero numeric pivot instead of returning an error.
        let lu = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| csc.sp_lu()))
            .map_err(|_| Error::SingularMatrix { pivot: None })?
            .map_err(|e| match e {
            faer::sparse::linalg::LuError::SymbolicSingular { index } => Error::SingularMatrix {
                pivot: Some(index),
            },
            other => invalid(format!("factorization failed: {other:?}")),
        })?;
        Ok(DirectSolver {
            matrix: a.clone(),
            lu,
            row_scale,
            col_scale,
        })
    }

    fn raw_solve(&self, b: &[f64]) -> Vec<f64> {
        let rhs = Mat::from_fn(b.len(), 1, |i, _| self.row_scale[i] * b[i]);
        let x = self.lu.solve(&rhs);
        (0..b.len()).map(|i| self.col_scale[i] * x[(i, 0)]).collect()
    }

    /// Componentwise backward error `max_i |r_i| / (|A||x| + |b|)_i`.
    fn backward_error(&self, x: &[f64], b: &[f64]) -> (Vec<f64>, f64) {
        let a = &self.matrix;
        let mut r = vec![0.0; a.nrows];
        let mut berr: f64 = 0.0;
        for i in 0..a.nrows {
            let (mut ax, mut scale) = (0.0, b[i].abs());
            for (j, v) in a.row(i) {
                ax += v * x[j];
                scale += (v * x[j]).abs();
            }
            r[i] = b[i] - ax;
            if scale > 0.0 {
                berr = berr.max(r[i].abs() / scale);
            } else if r[i] != 0.0 {
                berr = f64::INFINITY;
            }
        }
        (r, berr)
    }

    /// Solves `A x = b`, refining until the componentwise backward error
    /// stagnates; fails when that error stays above 1e-9.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.matrix.nrows {
            return Err(invalid("right-hand side length does not match matrix"));
        }
        let bnorm = norm2(b);
        if bnorm == 0.0 {
            return Ok(vec![0.0; b.len()]);
        }
        let mut x = self.raw_solve(b);
        let mut last = f64::INFINITY;
        let mut best = (x.clone(), f64::INFINITY);
        loop {
            if let Some(p) = x.iter().position(|v| !v.is_finite()) {
                return Err(Error::SingularMatrix { pivot: Some(p) });
            }
            let (r, berr) = self.backward_error(&x, b);
            log::trace!("refinement: backward error {berr:.3e}, residual {:.3e}", norm2(&r) / bnorm);
            if berr < best.1 {
                best = (x.clone(), berr);
            }
            if berr <= 4.0 * f64::EPSILON || berr > 0.5 * last {
                break;
            }
            last = berr;
            let dx = self.raw_solve(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        if best.1 > RESIDUAL_TOL {
            return Err(Error::SingularMatrix { pivot: None });
        }
        Ok(best.0)
    }
}

pub fn solve_direct(a: &CompressedMatrix, b: &[f64]) -> Result<Vec<f64>> {
    DirectSolver::new(a)?.solve(b)
}

pub fn norm2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Removes prescribed unknowns from a square system: `fixed[i] = Some(g)`
/// pins unknown `i` to `g` and moves its column to the right-hand side.
#[derive(Debug, Clone)]
pub struct Elimination {
    pub free: Vec<usize>,
    pub position: Vec<Option<usize>>,
    pub fixed: Vec<Option<f64>>,
}

impl Elimination {
    pub fn new(fixed: Vec<Option<f64>>) -> Self {
        let mut free = Vec::new();
        let mut position = vec![None; fixed.len()];
        for (i, f) in fixed.iter().enumerate() {
            if f.is_none() {
                position[i] = Some(free.len());
                free.push(i);
            }
        }
        Elimination {
            free,
            position,
            fixed,
        }
    }

    pub fn reduce(&self, a: &CompressedMatrix, rhs: &[f64]) -> (CompressedMatrix, Vec<f64>) {
        let n = self.free.len();
        let mut t = Triplets::new(n, n);
        t.entries.reserve(a.nnz());
        let mut b = Vec::with_capacity(n);
        for (ri, &i) in self.free.iter().enumerate() {
            let mut bi = rhs[i];
            for (j, v) in a.row(i) {
                match (self.position[j], self.fixed[j]) {
                    (Some(cj), _) => t.entries.push((ri, cj, v)),
                    (None, Some(g)) => bi -= v * g,
                    (None, None) => unreachable!(),
                }
            }
            b.push(bi);
        }
        (t.finalize(), b)
    }

    /// Reduces the transpose of `a` without forming it explicitly twice.
    pub fn reduce_transposed(&self, a: &CompressedMatrix, rhs: &[f64]) -> (CompressedMatrix, Vec<f64>) {
        self.reduce(&a.transpose(), rhs)
    }

    pub fn expand(&self, x_free: &[f64]) -> Vec<f64> {
        self.fixed
            .iter()
            .enumerate()
            .map(|(i, f)| match f {
                Some(g) => *g,
                None => x_free[self.position[i].unwrap()],
            })
            .collect()
    }
}

/// Layout of a monolithic system assembled from named blocks.
#[derive(Debug, Clone)]
pub struct BlockLayout {
    pub names: Vec<&'static str>,
    pub offsets: Vec<usize>,
}

impl BlockLayout {
    pub fn new(blocks: &[(&'static str, usize)]) -> Self {
        let mut offsets = vec![0];
        for (_, n) in blocks {
            offsets.push(offsets.last().unwrap() + n);
        }
        BlockLayout {
            names: blocks.iter().map(|b| b.0).collect(),
            offsets,
        }
    }

    pub fn offset(&self, name: &str) -> usize {
        let i = self.names.iter().position(|n| *n == name).expect("unknown block");
        self.offsets[i]
    }

    pub fn range(&self, name: &str) -> std::ops::Range<usize> {
        let i = self.names.iter().position(|n| *n == name).expect("unknown block");
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_solve() {
        let b = vec![1.0, -2.0, 3.5];
        let x = solve_direct(&CompressedMatrix::identity(3), &b).unwrap();
        assert_eq!(x, b);
    }

    #[test]
    fn two_by_two() {
        let a = CompressedMatrix::from_dense(&[vec![2.0, 1.0], vec![1.0, 3.0]]);
        let x = solve_direct(&a, &[3.0, 4.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn mean_constrained_projection() {
        // [[I, cᵀ], [c, 0]] with c = (½, ½), rhs ((1, 1), 0)
        let a = CompressedMatrix::from_dense(&[
            vec![1.0, 0.0, 0.5],
            vec![0.0, 1.0, 0.5],
            vec![0.5, 0.5, 0.0],
        ]);
        let x = solve_direct(&a, &[1.0, 1.0, 0.0]).unwrap();
        assert!(x[0].abs() < 1e-14 && x[1].abs() < 1e-14);
        assert!((x[2] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn singular_detected() {
        let a = CompressedMatrix::from_dense(&[vec![1.0, 2.0], vec![2.0, 4.0]]);
        let r = solve_direct(&a, &[1.0, 1.0]);
        assert!(matches!(r, Err(Error::SingularMatrix { .. })), "{r:?}");
        let structurally = CompressedMatrix::from_dense(&[vec![1.0, 0.0], vec![0.0, 0.0]]);
        assert!(matches!(
            solve_direct(&structurally, &[1.0, 1.0]),
            Err(Error::SingularMatrix { .. })
        ));
    }

    #[test]
    fn finalize_sums_duplicates_and_sorts() {
        let mut t = Triplets::new(2, 3);
        t.push(1, 2, 1.0);
        t.push(0, 1, 2.0);
        t.push(1, 0, 3.0);
        t.push(1, 2, 4.0);
        let m = t.finalize();
        assert_eq!(m.row_ptr, vec![0, 1, 3]);
        assert_eq!(m.col_idx, vec![1, 0, 2]);
        assert_eq!(m.values, vec![2.0, 3.0, 5.0]);
        for i in 0..m.nrows {
            let cols: Vec<usize> = m.row(i).map(|x| x.0).collect();
            assert!(cols.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn elimination_matches_full_solve() {
        let a = CompressedMatrix::from_dense(&[
            vec![4.0, -1.0, 0.0],
            vec![-1.0, 4.0, -1.0],
            vec![0.0, -1.0, 4.0],
        ]);
        let elim = Elimination::new(vec![None, Some(2.0), None]);
        let (ar, br) = elim.reduce(&a, &[1.0, 0.0, 3.0]);
        let x = elim.expand(&solve_direct(&ar, &br).unwrap());
        assert_eq!(x[1], 2.0);
        assert!((4.0 * x[0] - 2.0 - 1.0).abs() < 1e-14);
        assert!((4.0 * x[2] - 2.0 - 3.0).abs() < 1e-14);
    }

    #[test]
    fn deterministic_solution() {
        let n = 40;
        let mut t = Triplets::new(n, n);
        for i in 0..n {
            t.push(i, i, 3.0 + (i as f64).sin());
            if i + 1 < n {
                t.push(i, i + 1, -1.0);
                t.push(i + 1, i, -0.5);
            }
        }
        let a = t.finalize();
        let b: Vec<f64> = (0..n).map(|i| (i as f64 * 0.3).cos()).collect();
        let x1 = solve_direct(&a, &b).unwrap();
        let x2 = solve_direct(&a, &b).unwrap();
        assert_eq!(x1, x2);
        let r = a.matvec(&x1);
        let res: f64 = r.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
        assert!(res / norm2(&b) < 1e-9);
    }
}
