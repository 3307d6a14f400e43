//! Field output: vertex-sampled CSV and legacy ASCII VTK.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{invalid, Error, Result};
use crate::fem::{CrField, P0Field};
use crate::mesh::Mesh;

pub const CSV_HEADER: &str = "x,y,u1,u2,p,T,S,U1,U2";
pub const CSV_COLUMNS: usize = 9;

/// Fields written together: velocity, pressure, `(T, S)` and control.
#[derive(Debug, Clone, Copy)]
pub struct FieldBundle<'a> {
    pub mesh: &'a Mesh,
    pub u: &'a CrField,
    pub p: &'a P0Field,
    pub y: &'a CrField,
    pub control: &'a P0Field,
}

impl FieldBundle<'_> {
    fn check(&self) -> Result<()> {
        let m = self.mesh;
        let ok = self.u.ncomp == 2
            && self.y.ncomp == 2
            && self.p.ncomp == 1
            && self.control.ncomp == 2
            && self.u.values.len() == 2 * m.num_edges()
            && self.y.values.len() == 2 * m.num_edges()
            && self.p.values.len() == m.num_cells()
            && self.control.values.len() == 2 * m.num_cells();
        if ok {
            Ok(())
        } else {
            Err(invalid("field sizes do not match the mesh"))
        }
    }
}

/// Vertex values of a CR field: at each vertex, the mean over adjacent
/// cells of the cellwise linear function.
pub fn cr_at_vertices(mesh: &Mesh, field: &CrField) -> Vec<f64> {
    let nc = field.ncomp;
    let mut sum = vec![0.0; nc * mesh.num_vertices()];
    let mut count = vec![0usize; mesh.num_vertices()];
    for (k, cell) in mesh.cells.iter().enumerate() {
        for (j, &v) in cell.iter().enumerate() {
            let mut l = [0.0; 3];
            l[j] = 1.0;
            count[v] += 1;
            for c in 0..nc {
                sum[nc * v + c] += field.eval_bary(mesh, k, c, &l);
            }
        }
    }
    average(sum, &count, nc)
}

/// Vertex values of a P0 field: mean over adjacent cells.
pub fn p0_at_vertices(mesh: &Mesh, field: &P0Field) -> Vec<f64> {
    let nc = field.ncomp;
    let mut sum = vec![0.0; nc * mesh.num_vertices()];
    let mut count = vec![0usize; mesh.num_vertices()];
    for (k, cell) in mesh.cells.iter().enumerate() {
        for &v in cell {
            count[v] += 1;
            for c in 0..nc {
                sum[nc * v + c] += field.get(k, c);
            }
        }
    }
    average(sum, &count, nc)
}

fn average(mut sum: Vec<f64>, count: &[usize], nc: usize) -> Vec<f64> {
    for (v, &n) in count.iter().enumerate() {
        if n > 0 {
            for c in 0..nc {
                sum[nc * v + c] /= n as f64;
            }
        }
    }
    sum
}

/// One row per vertex, columns [`CSV_HEADER`].
pub fn csv_points(b: &FieldBundle<'_>) -> Result<String> {
    b.check()?;
    let m = b.mesh;
    let u = cr_at_vertices(m, b.u);
    let y = cr_at_vertices(m, b.y);
    let p = p0_at_vertices(m, b.p);
    let c = p0_at_vertices(m, b.control);
    let mut out = String::with_capacity(64 * m.num_vertices());
    out.push_str(CSV_HEADER);
    out.push('\n');
    for (v, x) in m.vertices.iter().enumerate() {
        let row = [
            x[0],
            x[1],
            u[2 * v],
            u[2 * v + 1],
            p[v],
            y[2 * v],
            y[2 * v + 1],
            c[2 * v],
            c[2 * v + 1],
        ];
        for (i, val) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            let _ = write!(out, "{val}");
        }
        out.push('\n');
    }
    Ok(out)
}

/// Unstructured grid with `p` and `U` as cell data and vertex-averaged
/// `u`, `T`, `S` as point data.
pub fn vtk_legacy(b: &FieldBundle<'_>, title: &str) -> Result<String> {
    b.check()?;
    let m = b.mesh;
    let nv = m.num_vertices();
    let nk = m.num_cells();
    let u = cr_at_vertices(m, b.u);
    let y = cr_at_vertices(m, b.y);
    let mut out = String::new();
    let title: String = title.chars().filter(|c| *c != '\n').take(255).collect();
    let _ = writeln!(out, "# vtk DataFile Version 3.0\n{title}\nASCII\nDATASET UNSTRUCTURED_GRID");
    let _ = writeln!(out, "POINTS {nv} double");
    for x in &m.vertices {
        let _ = writeln!(out, "{} {} 0", x[0], x[1]);
    }
    let _ = writeln!(out, "CELLS {nk} {}", 4 * nk);
    for c in &m.cells {
        let _ = writeln!(out, "3 {} {} {}", c[0], c[1], c[2]);
    }
    let _ = writeln!(out, "CELL_TYPES {nk}");
    for _ in 0..nk {
        out.push_str("5\n");
    }
    let _ = writeln!(out, "CELL_DATA {nk}\nSCALARS p double 1\nLOOKUP_TABLE default");
    for k in 0..nk {
        let _ = writeln!(out, "{}", b.p.get(k, 0));
    }
    let _ = writeln!(out, "VECTORS U double");
    for k in 0..nk {
        let _ = writeln!(out, "{} {} 0", b.control.get(k, 0), b.control.get(k, 1));
    }
    let _ = writeln!(out, "POINT_DATA {nv}\nVECTORS u double");
    for v in 0..nv {
        let _ = writeln!(out, "{} {} 0", u[2 * v], u[2 * v + 1]);
    }
    for (name, c) in [("T", 0), ("S", 1)] {
        let _ = writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in 0..nv {
            let _ = writeln!(out, "{}", y[2 * v + c]);
        }
    }
    Ok(out)
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn write_csv_points(b: &FieldBundle<'_>, path: &Path) -> Result<()> {
    write_file(path, &csv_points(b)?)
}

pub fn write_vtk(b: &FieldBundle<'_>, path: &Path, title: &str) -> Result<()> {
    write_file(path, &vtk_legacy(b, title)?)
}

/// Reads rows written by [`csv_points`].
pub fn parse_csv_points(text: &str) -> Result<Vec<[f64; CSV_COLUMNS]>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header '{CSV_HEADER}'"),
            })
        }
    }
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut row = [0.0; CSV_COLUMNS];
        let mut n = 0;
        for field in line.split(',') {
            if n == CSV_COLUMNS {
                n += 1;
                break;
            }
            row[n] = field.trim().parse().map_err(|_| Error::Parse {
                line: i + 1,
                message: format!("invalid number '{field}'"),
            })?;
            n += 1;
        }
        if n != CSV_COLUMNS {
            return Err(Error::Parse {
                line: i + 1,
                message: format!("expected {CSV_COLUMNS} columns"),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn read_csv_points(path: &Path) -> Result<Vec<[f64; CSV_COLUMNS]>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_csv_points(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::cr_interpolate;
    use crate::mesh::{build_unit_square_mesh, Mesh};

    fn two_cells() -> Mesh {
        Mesh::from_cells(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn zero_fields_on_two_cells() {
        let m = two_cells();
        let (u, y) = (CrField::zeros(&m, 2), CrField::zeros(&m, 2));
        let (p, c) = (P0Field::zeros(&m, 1), P0Field::zeros(&m, 2));
        let b = FieldBundle { mesh: &m, u: &u, p: &p, y: &y, control: &c };
        let rows = parse_csv_points(&csv_points(&b).unwrap()).unwrap();
        assert_eq!(rows.len(), 4);
        for r in rows {
            assert!(r[2..].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn linear_fields_are_exact_at_vertices() {
        let m = build_unit_square_mesh(4).unwrap();
        let u = cr_interpolate(&m, 2, |x| vec![1.0 + 2.0 * x[0] - x[1], 3.0 * x[1]]);
        let vals = cr_at_vertices(&m, &u);
        for (v, x) in m.vertices.iter().enumerate() {
            assert!((vals[2 * v] - (1.0 + 2.0 * x[0] - x[1])).abs() < 1e-12);
            assert!((vals[2 * v + 1] - 3.0 * x[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn vtk_layout() {
        let m = two_cells();
        let (u, y) = (CrField::zeros(&m, 2), CrField::zeros(&m, 2));
        let (p, c) = (P0Field::zeros(&m, 1), P0Field::zeros(&m, 2));
        let b = FieldBundle { mesh: &m, u: &u, p: &p, y: &y, control: &c };
        let s = vtk_legacy(&b, "t").unwrap();
        assert!(s.starts_with("# vtk DataFile Version 3.0\nt\nASCII\n"));
        assert!(s.contains("POINTS 4 double"));
        assert!(s.contains("CELLS 2 8"));
        assert!(s.contains("CELL_DATA 2"));
        assert!(s.contains("POINT_DATA 4"));
        assert_eq!(s.matches("LOOKUP_TABLE").count(), 3);
    }

    #[test]
    fn rejects_bad_csv() {
        assert!(parse_csv_points("a,b\n").is_err());
        assert!(parse_csv_points(&format!("{CSV_HEADER}\n1,2,3\n")).is_err());
        assert!(parse_csv_points(&format!("{CSV_HEADER}\n1,2,3,4,5,6,7,8,x\n")).is_err());
        assert!(parse_csv_points(&format!("{CSV_HEADER}\n1,2,3,4,5,6,7,8,9,10\n")).is_err());
    }
}
