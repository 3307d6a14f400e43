use std::path::Path;
use std::process::Command;

use ddopt_core::export::read_csv_points;

fn ddopt() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ddopt"));
    c.env("RUST_LOG", "warn").env_remove("DDOPT_THREADS");
    c
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_string()
}

#[test]
fn solve_with_zero_data_exports_zero_fields() {
    let dir = tempfile::tempdir().unwrap();
    let status = ddopt().args(["solve", "--n", "4", "--out", &out_arg(dir.path())]).status().unwrap();
    assert_eq!(status.code(), Some(0));
    let rows = read_csv_points(&dir.path().join("solve.csv")).unwrap();
    assert_eq!(rows.len(), 25);
    for r in rows {
        assert!(r[2..].iter().all(|v| *v == 0.0), "{r:?}");
    }
}

#[test]
fn solve_exports_vtk() {
    let dir = tempfile::tempdir().unwrap();
    let status = ddopt()
        .args(["solve", "--n", "2", "--export", "vtk", "--out", &out_arg(dir.path())])
        .env("DDOPT_THREADS", "2")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let text = std::fs::read_to_string(dir.path().join("solve.vtk")).unwrap();
    assert!(text.starts_with("# vtk DataFile Version 3.0"));
    assert!(text.contains("CELL_TYPES 8"));
}

#[test]
fn malformed_config_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.ini");
    std::fs::write(&cfg, "[mesh]\nn = 4\nlevels = many\n").unwrap();
    let out = ddopt()
        .args(["convergence", "--config", cfg.to_str().unwrap(), "--out", &out_arg(dir.path())])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn bad_thread_count_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let status = ddopt()
        .args(["solve", "--n", "2", "--out", &out_arg(dir.path())])
        .env("DDOPT_THREADS", "zero")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("occupied");
    std::fs::write(&file, "x").unwrap();
    let status = ddopt()
        .args(["solve", "--n", "2", "--out", file.join("sub").to_str().unwrap()])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(4));
}

#[test]
fn nonconvergence_exits_3_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cavity.ini");
    std::fs::write(&cfg, "[solver]\nmethod = picard\nstate_max_iter = 2\n[cavity]\ncontinuation = false\n").unwrap();
    let status = ddopt()
        .args(["cavity", "--n", "4", "--config", cfg.to_str().unwrap(), "--out", &out_arg(dir.path())])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(3));
    let diag = std::fs::read_to_string(dir.path().join("failure.txt")).unwrap();
    assert!(diag.contains("no convergence"), "{diag}");
}

#[test]
fn convergence_writes_table_and_level_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let status = ddopt()
        .args(["convergence", "--regime", "flow", "--n", "4", "--levels", "2", "--out", &out_arg(dir.path())])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let table = std::fs::read_to_string(dir.path().join("errors.csv")).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("level,h,dofs_u,dofs_p,dofs_y,dofs_U,e_u,rate,e_p,rate,e_T,rate"));
    assert!(lines[0].ends_with("e_U2,rate,It"));
    let cols = lines[0].split(',').count();
    assert!(lines[1..].iter().all(|l| l.split(',').count() == cols));
    assert!(lines[1].contains(",,") || lines[1].split(',').nth(7) == Some(""));
    for level in 1..=2 {
        assert!(dir.path().join(format!("level_{level}.csv")).exists());
    }
    assert!(dir.path().join("config.ini").exists());
}

#[test]
fn cavity_writes_iteration_log() {
    let dir = tempfile::tempdir().unwrap();
    let status = ddopt()
        .args(["cavity", "--n", "8", "--out", &out_arg(dir.path())])
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(0));
    let log = std::fs::read_to_string(dir.path().join("iterations.log")).unwrap();
    let last = log.lines().last().unwrap();
    assert!(last.starts_with("converged in "), "{log}");
    let rows = read_csv_points(&dir.path().join("cavity.csv")).unwrap();
    assert_eq!(rows.len(), 81);
    assert!(rows.iter().all(|r| r[7].abs() <= 0.005 + 1e-15 && r[8].abs() <= 0.005 + 1e-15));
}
