"""Smoke test for the ddopt extension module.

Build and install first, e.g. `maturin build --release` in crates/py and
`pip install` the wheel, then run `python python/smoke_test.py`.
"""

import math
import os
import tempfile

import ddopt


def check_mesh():
    m = ddopt.Mesh.unit_square(4)
    assert m.num_cells == 32
    assert m.num_vertices == 25
    assert m.num_edges == 56
    fine = m.refine()
    assert fine.num_cells == 4 * m.num_cells
    assert abs(fine.h_max - m.h_max / 2) < 1e-12
    assert len(m.cells) == m.num_cells and len(m.vertices) == m.num_vertices


def check_cavity_coefficients():
    case = ddopt.CavityCase()
    c = case.coefficients()
    assert abs(c["gr_t"] / 1.4085e5 - 1) < 1e-4
    assert c["gr_c"] == c["gr_t"]
    d = case.diffusion()
    assert abs(d[0][0] - 1.4085) < 1e-4 and d[0][1] == 0.1
    try:
        ddopt.CavityCase(lbound=1.0, ubound=0.0)
    except ValueError:
        pass
    else:
        raise AssertionError("unordered bounds accepted")


def check_projection():
    out = ddopt.project_control([-0.5, 0.0, 0.05, 1.0], 1.0, -0.1, 0.25)
    assert out == [0.25, 0.0, -0.05, -0.1], out


def check_manufactured():
    sol, errors = ddopt.solve_manufactured(ddopt.Mesh.unit_square(4), "flow")
    assert sol.iterations >= 1
    assert sol.max_div_u() < 1e-10 and sol.max_div_phi() < 1e-10
    assert sol.vi_residual() < 1e-7
    assert set(errors) >= {"e_u", "e_p", "e_T", "e_U1"}
    assert all(math.isfinite(v) and v > 0 for v in errors.values())


def check_cavity_and_export():
    sol = ddopt.solve_cavity(ddopt.Mesh.unit_square(8), ddopt.CavityCase())
    assert sol.iterations >= 1
    assert all(abs(u) <= 0.005 + 1e-15 and abs(v) <= 0.005 + 1e-15 for u, v in sol.control)
    rows = sol.vertex_values()
    assert len(rows) == 81 and len(rows[0]) == 9
    with tempfile.TemporaryDirectory() as d:
        for fmt in ("csv", "vtk"):
            path = os.path.join(d, "cavity." + fmt)
            sol.export(path, fmt)
            assert os.path.getsize(path) > 0


def check_cli():
    with tempfile.TemporaryDirectory() as d:
        assert ddopt.run_cli(["solve", "--n", "2", "--out", d]) == 0
        assert os.path.exists(os.path.join(d, "solve.csv"))
        assert ddopt.run_cli(["solve", "--lbound", "1", "--ubound", "0", "--out", d]) == 2


def main():
    for check in (
        check_mesh,
        check_cavity_coefficients,
        check_projection,
        check_manufactured,
        check_cavity_and_export,
        check_cli,
    ):
        check()
        print("ok", check.__name__)
    print("smoke test passed")


if __name__ == "__main__":
    main()
