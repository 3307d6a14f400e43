//! Conforming triangulations of polygonal domains with full edge/cell adjacency.
//!
//! Local conventions used throughout the crate: local edge `i` of a cell is the
//! edge opposite local vertex `i`, so the Crouzeix–Raviart basis function
//! attached to it is `1 - 2 λ_i`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::error::{invalid, Result};

pub type Point = [f64; 2];

#[derive(Debug, Clone)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    /// Counter-clockwise vertex triples.
    pub cells: Vec<[usize; 3]>,
    /// Vertex pairs with the lower index first, sorted lexicographically.
    pub edges: Vec<[usize; 2]>,
    /// Local edge `i` is opposite local vertex `i`; the sign is `+1` when the
    /// cell is the `plus` cell of that edge.
    pub cell_edges: Vec<[(usize, i8); 3]>,
    /// `(plus, minus)`; boundary edges have no minus cell.
    pub edge_cells: Vec<(usize, Option<usize>)>,
    pub boundary_edge: Vec<bool>,
    /// Unit normal pointing from the plus cell to the minus cell (outward on Γ).
    pub edge_normal: Vec<Point>,
    pub h_cell: Vec<f64>,
    pub area_cell: Vec<f64>,
    pub h_edge: Vec<f64>,
    /// Gradients of the barycentric coordinates, per cell.
    pub grad_bary: Vec<[Point; 3]>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeshStats {
    pub h_max: f64,
    pub min_angle: f64,
    pub cell_count: usize,
    pub edge_count: usize,
}

impl Mesh {
    /// Builds a mesh from vertex coordinates and cell connectivity. Cells with
    /// clockwise orientation are reordered to counter-clockwise.
    pub fn from_cells(vertices: Vec<Point>, mut cells: Vec<[usize; 3]>) -> Result<Self> {
        if cells.is_empty() {
            return Err(invalid("mesh has no cells"));
        }
        for c in cells.iter_mut() {
            if c.iter().any(|&v| v >= vertices.len()) {
                return Err(invalid("cell references a missing vertex"));
            }
            let a = signed_area(vertices[c[0]], vertices[c[1]], vertices[c[2]]);
            if a.abs() < 1e-300 {
                return Err(invalid("degenerate cell"));
            }
            if a < 0.0 {
                c.swap(1, 2);
            }
        }

        let mut edge_map: BTreeMap<[usize; 2], usize> = BTreeMap::new();
        for c in &cells {
            for i in 0..3 {
                edge_map.insert(sorted_pair(c[(i + 1) % 3], c[(i + 2) % 3]), 0);
            }
        }
        let edges: Vec<[usize; 2]> = edge_map.keys().copied().collect();
        for (k, v) in edge_map.values_mut().enumerate() {
            *v = k;
        }

        let mut edge_cells: Vec<(Option<usize>, Option<usize>)> = vec![(None, None); edges.len()];
        let mut cell_edges = Vec::with_capacity(cells.len());
        for (k, c) in cells.iter().enumerate() {
            let mut local = [(0usize, 1i8); 3];
            for (i, slot) in local.iter_mut().enumerate() {
                let e = edge_map[&sorted_pair(c[(i + 1) % 3], c[(i + 2) % 3])];
                let entry = &mut edge_cells[e];
                if entry.0.is_none() {
                    entry.0 = Some(k);
                    *slot = (e, 1);
                } else if entry.1.is_none() {
                    entry.1 = Some(k);
                    *slot = (e, -1);
                } else {
                    return Err(invalid(format!("edge {e} shared by more than two cells")));
                }
            }
            cell_edges.push(local);
        }
        let edge_cells: Vec<(usize, Option<usize>)> =
            edge_cells.into_iter().map(|(p, m)| (p.unwrap(), m)).collect();
        let boundary_edge: Vec<bool> = edge_cells.iter().map(|(_, m)| m.is_none()).collect();

        let h_edge: Vec<f64> = edges
            .iter()
            .map(|e| dist(vertices[e[0]], vertices[e[1]]))
            .collect();

        let mut edge_normal = vec![[0.0; 2]; edges.len()];
        for (k, c) in cells.iter().enumerate() {
            for i in 0..3 {
                let (e, sign) = cell_edges[k][i];
                if sign > 0 {
                    let a = vertices[c[(i + 1) % 3]];
                    let b = vertices[c[(i + 2) % 3]];
                    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
                    let len = h_edge[e];
                    edge_normal[e] = [dy / len, -dx / len];
                }
            }
        }

        let mut area_cell = Vec::with_capacity(cells.len());
        let mut h_cell = Vec::with_capacity(cells.len());
        let mut grad_bary = Vec::with_capacity(cells.len());
        for c in &cells {
            let p = [vertices[c[0]], vertices[c[1]], vertices[c[2]]];
            let area = signed_area(p[0], p[1], p[2]);
            area_cell.push(area);
            h_cell.push(
                dist(p[0], p[1])
                    .max(dist(p[1], p[2]))
                    .max(dist(p[2], p[0])),
            );
            let mut g = [[0.0; 2]; 3];
            for i in 0..3 {
                let a = p[(i + 1) % 3];
                let b = p[(i + 2) % 3];
                // ∇λ_i is the inward normal of the opposite edge scaled by 1/height.
                g[i] = [(a[1] - b[1]) / (2.0 * area), (b[0] - a[0]) / (2.0 * area)];
            }
            grad_bary.push(g);
        }

        Ok(Mesh {
            vertices,
            cells,
            edges,
            cell_edges,
            edge_cells,
            boundary_edge,
            edge_normal,
            h_cell,
            area_cell,
            h_edge,
            grad_bary,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn cell_points(&self, k: usize) -> [Point; 3] {
        let c = self.cells[k];
        [self.vertices[c[0]], self.vertices[c[1]], self.vertices[c[2]]]
    }

    pub fn centroid(&self, k: usize) -> Point {
        let p = self.cell_points(k);
        [
            (p[0][0] + p[1][0] + p[2][0]) / 3.0,
            (p[0][1] + p[1][1] + p[2][1]) / 3.0,
        ]
    }

    pub fn edge_midpoint(&self, e: usize) -> Point {
        let [a, b] = self.edges[e];
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        [0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]
    }

    pub fn edge_endpoints(&self, e: usize) -> [Point; 2] {
        let [a, b] = self.edges[e];
        [self.vertices[a], self.vertices[b]]
    }

    /// Maps barycentric coordinates on cell `k` to physical coordinates.
    pub fn bary_to_point(&self, k: usize, l: [f64; 3]) -> Point {
        let p = self.cell_points(k);
        [
            l[0] * p[0][0] + l[1] * p[1][0] + l[2] * p[2][0],
            l[0] * p[0][1] + l[1] * p[1][1] + l[2] * p[2][1],
        ]
    }

    pub fn point_to_bary(&self, k: usize, x: Point) -> [f64; 3] {
        let p = self.cell_points(k);
        let g = &self.grad_bary[k];
        let mut l = [0.0; 3];
        for i in 0..3 {
            // λ_i vanishes on the opposite edge, which contains vertex i+1.
            let o = p[(i + 1) % 3];
            l[i] = g[i][0] * (x[0] - o[0]) + g[i][1] * (x[1] - o[1]);
        }
        l
    }

    /// Position of a cell inside the local numbering of one of its edges.
    pub fn local_edge_index(&self, k: usize, e: usize) -> Option<usize> {
        self.cell_edges[k].iter().position(|&(ee, _)| ee == e)
    }

    /// Outward unit normal of cell `k` on its local edge `i`.
    pub fn outward_normal(&self, k: usize, i: usize) -> Point {
        let (e, s) = self.cell_edges[k][i];
        let n = self.edge_normal[e];
        let s = s as f64;
        [s * n[0], s * n[1]]
    }

    /// The cell across edge `e` from cell `k`, if any.
    pub fn neighbor(&self, k: usize, e: usize) -> Option<usize> {
        let (p, m) = self.edge_cells[e];
        if p == k {
            m
        } else {
            Some(p)
        }
    }

    /// Red refinement: every triangle is split into four congruent children.
    pub fn refine_uniform(&self) -> Mesh {
        let mut vertices = self.vertices.clone();
        let mut mid = Vec::with_capacity(self.edges.len());
        for e in 0..self.edges.len() {
            mid.push(vertices.len());
            vertices.push(self.edge_midpoint(e));
        }
        let mut cells = Vec::with_capacity(4 * self.cells.len());
        for (k, c) in self.cells.iter().enumerate() {
            // m[i] is the midpoint of the edge opposite vertex i.
            let m = [
                mid[self.cell_edges[k][0].0],
                mid[self.cell_edges[k][1].0],
                mid[self.cell_edges[k][2].0],
            ];
            cells.push([c[0], m[2], m[1]]);
            cells.push([m[2], c[1], m[0]]);
            cells.push([m[1], m[0], c[2]]);
            cells.push([m[0], m[1], m[2]]);
        }
        Mesh::from_cells(vertices, cells).expect("refinement of a valid mesh is valid")
    }

    pub fn stats(&self) -> MeshStats {
        let h_max = self.h_cell.iter().cloned().fold(0.0, f64::max);
        let mut min_angle = f64::INFINITY;
        for k in 0..self.num_cells() {
            let p = self.cell_points(k);
            for i in 0..3 {
                let a = p[i];
                let b = p[(i + 1) % 3];
                let c = p[(i + 2) % 3];
                let u = [b[0] - a[0], b[1] - a[1]];
                let v = [c[0] - a[0], c[1] - a[1]];
                let cos = (u[0] * v[0] + u[1] * v[1]) / (norm(u) * norm(v));
                min_angle = min_angle.min(cos.clamp(-1.0, 1.0).acos());
            }
        }
        MeshStats {
            h_max,
            min_angle,
            cell_count: self.num_cells(),
            edge_count: self.num_edges(),
        }
    }

    /// Largest ratio of cell diameter to inscribed-circle diameter.
    pub fn max_shape_ratio(&self) -> f64 {
        (0..self.num_cells())
            .map(|k| {
                let p = self.cell_points(k);
                let per = dist(p[0], p[1]) + dist(p[1], p[2]) + dist(p[2], p[0]);
                let rho = 4.0 * self.area_cell[k] / per;
                self.h_cell[k] / rho
            })
            .fold(0.0, f64::max)
    }

    /// Debug listing with `v x y` and `c i j k` lines.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        for v in &self.vertices {
            let _ = writeln!(s, "v {} {}", v[0], v[1]);
        }
        for c in &self.cells {
            let _ = writeln!(s, "c {} {} {}", c[0], c[1], c[2]);
        }
        s
    }
}

/// Structured mesh of the unit square: `n × n` squares, each cut along the
/// diagonal from its lower-left to its upper-right corner.
pub fn build_unit_square_mesh(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(invalid("mesh resolution n must be positive"));
    }
    let h = 1.0 / n as f64;
    let idx = |i: usize, j: usize| j * (n + 1) + i;
    let mut vertices = Vec::with_capacity((n + 1) * (n + 1));
    for j in 0..=n {
        for i in 0..=n {
            vertices.push([i as f64 * h, j as f64 * h]);
        }
    }
    let mut cells = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            cells.push([v00, v10, v11]);
            cells.push([v00, v11, v01]);
        }
    }
    Mesh::from_cells(vertices, cells)
}

pub fn refine_uniform(mesh: &Mesh) -> Mesh {
    mesh.refine_uniform()
}

pub fn mesh_stats(mesh: &Mesh) -> MeshStats {
    mesh.stats()
}

fn sorted_pair(a: usize, b: usize) -> [usize; 2] {
    if a < b {
        [a, b]
    } else {
        [b, a]
    }
}

pub(crate) fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist(a: Point, b: Point) -> f64 {
    norm([b[0] - a[0], b[1] - a[1]])
}

fn norm(v: Point) -> f64 {
    (v[0] * v[0] + v[1] * v[1]).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_4, SQRT_2};

    fn check_invariants(m: &Mesh) {
        let total: f64 = m.area_cell.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(m.area_cell.iter().all(|&a| a > 0.0));
        let euler = m.num_vertices() as i64 - m.num_edges() as i64 + m.num_cells() as i64;
        assert_eq!(euler, 1);
        for e in 0..m.num_edges() {
            let (p, minus) = m.edge_cells[e];
            assert_eq!(m.boundary_edge[e], minus.is_none());
            assert!(m.local_edge_index(p, e).is_some());
            if let Some(q) = minus {
                let cp = m.centroid(p);
                let cq = m.centroid(q);
                let n = m.edge_normal[e];
                assert!(n[0] * (cq[0] - cp[0]) + n[1] * (cq[1] - cp[1]) > 0.0);
            } else {
                // outward on the unit square boundary
                let mp = m.edge_midpoint(e);
                let c = m.centroid(p);
                let n = m.edge_normal[e];
                assert!(n[0] * (mp[0] - c[0]) + n[1] * (mp[1] - c[1]) > 0.0);
            }
        }
        for k in 0..m.num_cells() {
            for &(e, _) in &m.cell_edges[k] {
                let (p, q) = m.edge_cells[e];
                assert!(p == k || q == Some(k));
            }
        }
    }

    #[test]
    fn unit_square_counts() {
        let m1 = build_unit_square_mesh(1).unwrap();
        assert_eq!((m1.num_vertices(), m1.num_edges(), m1.num_cells()), (4, 5, 2));
        check_invariants(&m1);
        let m2 = build_unit_square_mesh(2).unwrap();
        assert_eq!((m2.num_vertices(), m2.num_edges(), m2.num_cells()), (9, 16, 8));
        check_invariants(&m2);
        assert_eq!(build_unit_square_mesh(150).unwrap().num_cells(), 45000);
    }

    #[test]
    fn zero_resolution_rejected() {
        assert!(build_unit_square_mesh(0).is_err());
    }

    #[test]
    fn stats_match_geometry() {
        let s1 = build_unit_square_mesh(1).unwrap().stats();
        assert!((s1.h_max - SQRT_2).abs() < 1e-14);
        assert!((s1.min_angle - FRAC_PI_4).abs() < 1e-12);
        let s2 = build_unit_square_mesh(2).unwrap().stats();
        assert!((s2.h_max - SQRT_2 / 2.0).abs() < 1e-14);
    }

    #[test]
    fn red_refinement() {
        let m = build_unit_square_mesh(1).unwrap();
        let r = m.refine_uniform();
        assert_eq!(r.num_cells(), 8);
        assert!((r.stats().h_max - m.stats().h_max / 2.0).abs() < 1e-14);
        check_invariants(&r);
        let rr = r.refine_uniform();
        assert_eq!(rr.num_cells(), 32);
        check_invariants(&rr);
        assert!((rr.max_shape_ratio() - m.max_shape_ratio()).abs() < 1e-12);
        // children lie inside their parents
        for k in 0..m.num_cells() {
            for c in 0..4 {
                for v in r.cell_points(4 * k + c) {
                    let l = m.point_to_bary(k, v);
                    assert!(l.iter().all(|&x| x > -1e-12));
                }
            }
        }
    }

    #[test]
    fn barycentric_round_trip() {
        let m = build_unit_square_mesh(3).unwrap();
        for k in 0..m.num_cells() {
            let l = [0.2, 0.3, 0.5];
            let x = m.bary_to_point(k, l);
            let back = m.point_to_bary(k, x);
            for i in 0..3 {
                assert!((back[i] - l[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dump_lists_vertices_and_cells() {
        let d = build_unit_square_mesh(1).unwrap().dump();
        assert_eq!(d.lines().filter(|l| l.starts_with("v ")).count(), 4);
        assert_eq!(d.lines().filter(|l| l.starts_with("c ")).count(), 2);
    }
}
