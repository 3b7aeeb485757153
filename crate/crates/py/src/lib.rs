//! Python bindings. Matrices cross the boundary as nested lists of floats
//! (row-major), vectors as flat lists.

use bmpc::linalg::{Mat, Vector};
use bmpc::lqr::{backward_scan, StageModel, ValueFunction};
use bmpc::models::{build_intersection_case, build_latency_case, IntersectionSpec, LatencySpec, VehicleProblem};
use bmpc::riccati::riccati_path;
use bmpc::solver::{solve as solve_tree, SolverKind, SolverOptions};
use bmpc::{build_tree, BranchSpec, ScanSchedule};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

type Rows = Vec<Vec<f64>>;

fn to_err(e: bmpc::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn mat(rows: &Rows) -> PyResult<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if rows.iter().any(|x| x.len() != c) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

fn rows(m: &Mat) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn vec_of(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}

fn get<'py, T: FromPyObject<'py>>(d: &Bound<'py, PyDict>, key: &str) -> PyResult<T> {
    d.get_item(key)?
        .ok_or_else(|| PyValueError::new_err(format!("missing key '{key}'")))?
        .extract()
}

/// A stage dict has keys A, B, c, Q, R, M, q, r.
fn stage(d: &Bound<'_, PyDict>) -> PyResult<StageModel> {
    Ok(StageModel {
        a: mat(&get(d, "A")?)?,
        b: mat(&get(d, "B")?)?,
        c: Vector::from_vec(get(d, "c")?),
        q_xx: mat(&get(d, "Q")?)?,
        r_uu: mat(&get(d, "R")?)?,
        m_ux: mat(&get(d, "M")?)?,
        q_x: Vector::from_vec(get(d, "q")?),
        r_u: Vector::from_vec(get(d, "r")?),
    })
}

fn path_problem(stages: Vec<Bound<'_, PyDict>>, p_term: Rows, q_term: Vec<f64>) -> PyResult<(Vec<StageModel>, ValueFunction)> {
    let stages = stages.iter().map(stage).collect::<PyResult<Vec<_>>>()?;
    let terminal = ValueFunction {
        p_mat: mat(&p_term)?,
        p_vec: Vector::from_vec(q_term),
    };
    Ok((stages, terminal))
}

fn schedule(name: &str) -> PyResult<ScanSchedule> {
    serde_json::from_value(serde_json::Value::String(name.into()))
        .map_err(|_| PyValueError::new_err(format!("unknown schedule '{name}'")))
}

/// Value functions `[(P_k, p_k)]` for k = 0..N by the parallel scan.
#[pyfunction]
#[pyo3(signature = (stages, p_terminal, p_vec_terminal, schedule_name = "tree"))]
fn lqr_backward_scan(
    stages: Vec<Bound<'_, PyDict>>,
    p_terminal: Rows,
    p_vec_terminal: Vec<f64>,
    schedule_name: &str,
) -> PyResult<Vec<(Rows, Vec<f64>)>> {
    let (stages, terminal) = path_problem(stages, p_terminal, p_vec_terminal)?;
    let values = backward_scan(&stages, &terminal, schedule(schedule_name)?).map_err(to_err)?;
    Ok(values.iter().map(|v| (rows(&v.p_mat), vec_of(&v.p_vec))).collect())
}

/// Same as `lqr_backward_scan` but by the sequential Riccati recursion.
#[pyfunction]
fn lqr_riccati(
    stages: Vec<Bound<'_, PyDict>>,
    p_terminal: Rows,
    p_vec_terminal: Vec<f64>,
) -> PyResult<Vec<(Rows, Vec<f64>)>> {
    let (stages, terminal) = path_problem(stages, p_terminal, p_vec_terminal)?;
    let (values, _) = riccati_path(&stages, &terminal).map_err(to_err)?;
    Ok(values.iter().map(|v| (rows(&v.p_mat), vec_of(&v.p_vec))).collect())
}

#[pyclass(name = "TreeTopology", frozen)]
struct PyTreeTopology {
    inner: bmpc::TreeTopology,
}

#[pymethods]
impl PyTreeTopology {
    /// `branchings` is a list of `(step, arity)` with uniform weights.
    #[new]
    fn new(horizon: usize, branchings: Vec<(usize, usize)>) -> PyResult<Self> {
        let specs: Vec<BranchSpec> = branchings.iter().map(|&(s, a)| BranchSpec::uniform(s, a)).collect();
        Ok(PyTreeTopology {
            inner: build_tree(horizon, &specs).map_err(to_err)?,
        })
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    #[getter]
    fn leaves(&self) -> Vec<usize> {
        self.inner.leaves().to_vec()
    }

    fn parent(&self, node: usize) -> Option<usize> {
        self.inner.parent(node)
    }

    fn children(&self, node: usize) -> Vec<usize> {
        self.inner.children(node).to_vec()
    }

    fn time_step(&self, node: usize) -> usize {
        self.inner.time_step(node)
    }

    fn weight(&self, node: usize) -> f64 {
        self.inner.weight(node)
    }

    fn __repr__(&self) -> String {
        format!(
            "TreeTopology(horizon={}, nodes={}, leaves={})",
            self.inner.horizon(),
            self.inner.node_count(),
            self.inner.leaves().len()
        )
    }
}

#[pyclass(name = "VehicleProblem", frozen)]
struct PyVehicleProblem {
    inner: VehicleProblem,
}

#[pymethods]
impl PyVehicleProblem {
    #[staticmethod]
    #[pyo3(signature = (leaves = 4, horizon = 63))]
    fn intersection(leaves: usize, horizon: usize) -> PyResult<Self> {
        let (a, b) = IntersectionSpec::counts_for_leaves(leaves).map_err(to_err)?;
        let spec = IntersectionSpec {
            v1_count: a,
            v2_count: b,
            horizon,
            ..Default::default()
        };
        Ok(PyVehicleProblem {
            inner: build_intersection_case(&spec).map_err(to_err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (t_sh1 = 0.5, horizon = 255))]
    fn latency(t_sh1: f64, horizon: usize) -> PyResult<Self> {
        let spec = LatencySpec {
            shared_time1: t_sh1,
            horizon,
            ..Default::default()
        };
        Ok(PyVehicleProblem {
            inner: build_latency_case(&spec).map_err(to_err)?,
        })
    }

    #[getter]
    fn topology(&self) -> PyTreeTopology {
        PyTreeTopology {
            inner: self.inner.topology.clone(),
        }
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("problem serializes")
    }

    /// Returns `(states, inputs, report_json)`; leaf inputs are `None`.
    #[pyo3(signature = (solver = "pmsilqr", options_json = None))]
    fn solve(
        &self,
        py: Python<'_>,
        solver: &str,
        options_json: Option<&str>,
    ) -> PyResult<(Vec<Vec<f64>>, Vec<Option<Vec<f64>>>, String)> {
        let opts = match options_json {
            Some(text) => SolverOptions::from_json(text).map_err(to_err)?,
            None => solver.parse::<SolverKind>().map_err(to_err)?.options(),
        };
        let (traj, report) = py
            .allow_threads(|| solve_tree(&self.inner, &opts, None))
            .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        let states = traj.states.iter().map(vec_of).collect();
        let inputs = traj.inputs.iter().map(|u| u.as_ref().map(vec_of)).collect();
        Ok((states, inputs, report.to_json()))
    }
}

#[pymodule]
fn bmpc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(lqr_backward_scan, m)?)?;
    m.add_function(wrap_pyfunction!(lqr_riccati, m)?)?;
    m.add_class::<PyTreeTopology>()?;
    m.add_class::<PyVehicleProblem>()?;
    Ok(())
}
