use ddopt::ddopt;
use pyo3::prelude::*;
use pyo3::types::PyDict;

#[test]
fn module_from_python() {
    pyo3::append_to_inittab!(ddopt);
    Python::initialize();
    Python::attach(|py| -> PyResult<()> {
        let locals = PyDict::new(py);
        locals.set_item("ddopt", py.import("ddopt")?)?;
        let code = c"
m = ddopt.Mesh.unit_square(2)
assert (m.num_cells, m.num_edges, m.num_vertices) == (8, 16, 9)
assert ddopt.project_control([1.0, -1.0], 2.0, -0.1, 0.25) == [-0.1, 0.25]
sol, errs = ddopt.solve_manufactured(m, 'stokes')
assert sol.max_div_u() < 1e-10 and errs['e_u'] > 0
try:
    ddopt.solve_manufactured(m, 'plasma')
    raise AssertionError
except ValueError:
    pass
";
        py.run(code, None, Some(&locals))?;
        Ok(())
    })
    .unwrap();
}
