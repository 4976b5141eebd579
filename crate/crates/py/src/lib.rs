use pyo3::prelude::*;

#[pymodule]
fn visemes(_m: &Bound<'_, PyModule>) -> PyResult<()> {
    Ok(())
}
