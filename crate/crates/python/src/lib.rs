use std::collections::BTreeMap;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use lsi_core::cli::{self, RunConfig};
use lsi_core::inequalities::{assemble, estimate_ls_sg};
use lsi_core::model::{check_hypotheses, HypothesisScan};
use lsi_core::Error;

fn py_err(e: Error) -> PyErr {
    match cli::exit_code(&e) {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn config(toml: &str) -> PyResult<RunConfig> {
    RunConfig::from_toml(toml).map_err(py_err)
}

/// Runs the `lsi-bench` command line with the given arguments and returns
/// the exit code.
#[pyfunction]
fn run(args: Vec<String>) -> i32 {
    let argv = std::iter::once("lsi-bench".to_string()).chain(args);
    cli::main_with(argv)
}

/// Hypothesis margins for a TOML config: name -> (pass, margin).
#[pyfunction]
#[pyo3(signature = (toml = ""))]
fn hypotheses(toml: &str) -> PyResult<BTreeMap<String, (bool, f64)>> {
    let cfg = config(toml)?;
    let spec = cfg.model.build().map_err(py_err)?;
    let r = &cfg.run;
    let scan = HypothesisScan::uniform(r.d_max, r.d_points, r.omega_max, r.omega_points).map_err(py_err)?;
    let rep = check_hypotheses(&spec, &scan).map_err(py_err)?;
    Ok(rep.results.into_iter().map(|h| (h.name, (h.pass, h.margin))).collect())
}

/// Single-site `(c_LS, c_SG)` lower-bound estimates.
#[pyfunction]
#[pyo3(signature = (toml = ""))]
fn estimate_ls(toml: &str) -> PyResult<(f64, f64)> {
    let cfg = config(toml)?;
    let spec = cfg.model.build().map_err(py_err)?;
    let rep = estimate_ls_sg(&spec, &cfg.run.omega().map_err(py_err)?, &cfg.run.family, &cfg.run.quad()).map_err(py_err)?;
    Ok((rep.c_ls, rep.c_sg))
}

/// `(A, B)` from the single-site constant and the block constants.
#[pyfunction]
fn assemble_constants(c: f64, c1: f64, c2: f64) -> PyResult<(f64, f64)> {
    let a = assemble(c, c1, c2).map_err(py_err)?;
    Ok((a.a, a.frak_b))
}

#[pymodule]
fn lsi_workbench(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(hypotheses, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_ls, m)?)?;
    m.add_function(wrap_pyfunction!(assemble_constants, m)?)?;
    Ok(())
}
