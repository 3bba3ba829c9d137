//! Python module `pirsi`: databases, retrieval, audits and bounds.

use std::collections::BTreeSet;

use num_rational::Ratio;
use pyo3::exceptions::{PyConnectionError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pirsi::audit::{audit_w, audit_ws, AuditReport, EnumerableScheme, Prior};
use pirsi::bounds::{self, SideInfoGraph};
use pirsi::mds::MdsScheme;
use pirsi::multi_server::MultiServerScheme;
use pirsi::net::{self, SchemeId, SessionConfig};
use pirsi::partition::PartitionScheme;
use pirsi::wire::Frame;
use pirsi::{sun_jafar, DemandSpec, Error, ProblemParams};

fn err(e: Error) -> PyErr {
    match e {
        Error::Parameter(_)
        | Error::WidthMismatch(..)
        | Error::DivisionByZero(_)
        | Error::Malformed(_) => PyValueError::new_err(e.to_string()),
        Error::Connection(_) | Error::Io(_) => PyConnectionError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn scheme_id(name: &str) -> PyResult<SchemeId> {
    name.parse().map_err(err)
}

/// K messages of t bits each.
#[pyclass(name = "Database", module = "pirsi", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDatabase {
    inner: pirsi::Database,
}

#[pymethods]
impl PyDatabase {
    #[staticmethod]
    #[pyo3(signature = (k, t, seed=0))]
    fn random(k: usize, t: usize, seed: u64) -> PyResult<Self> {
        let inner =
            pirsi::Database::random(k, t, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(err)?;
        Ok(PyDatabase { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(PyDatabase {
            inner: pirsi::Database::load(path).map_err(err)?,
        })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(PyDatabase {
            inner: pirsi::Database::from_bytes(data).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn t(&self) -> usize {
        self.inner.message_bits()
    }

    /// Message j (1-based), packed MSB-first.
    fn message<'py>(&self, py: Python<'py>, j: usize) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(
            py,
            self.inner.message(j).map_err(err)?.as_bytes(),
        ))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "Database(k={}, t={})",
            self.inner.len(),
            self.inner.message_bits()
        )
    }
}

/// A server over an in-memory database; `handle` maps request frames to
/// reply frames.
#[pyclass(name = "Server", module = "pirsi", frozen)]
struct PyServer {
    inner: net::Server,
}

#[pymethods]
impl PyServer {
    #[new]
    fn new(db: &PyDatabase) -> Self {
        PyServer {
            inner: net::Server::new(db.inner.clone()),
        }
    }

    fn handle<'py>(&self, py: Python<'py>, frame: &[u8]) -> PyResult<Bound<'py, PyBytes>> {
        let req = Frame::from_bytes(frame).map_err(err)?;
        Ok(PyBytes::new(py, &self.inner.handle(&req).to_bytes()))
    }

    /// Serves TCP from a background thread; returns the bound address.
    #[pyo3(signature = (addr="127.0.0.1:0"))]
    fn spawn_tcp(&self, addr: &str) -> PyResult<String> {
        Ok(self.inner.spawn_tcp(addr).map_err(err)?.to_string())
    }
}

/// Runs one retrieval. Servers are in-process unless addresses are given.
/// Returns a dict with the message, downloaded bits, rate and transcript.
#[pyfunction]
#[pyo3(signature = (scheme, db, w, s=Vec::new(), n=1, seed=0, servers=Vec::new()))]
#[allow(clippy::too_many_arguments)]
fn fetch<'py>(
    py: Python<'py>,
    scheme: &str,
    db: &PyDatabase,
    w: usize,
    s: Vec<usize>,
    n: usize,
    seed: u64,
    servers: Vec<String>,
) -> PyResult<Bound<'py, PyDict>> {
    let d = &db.inner;
    let params = ProblemParams {
        servers: n,
        messages: d.len(),
        side: s.len(),
        bits: d.message_bits(),
    };
    let mut cfg = SessionConfig::new(scheme_id(scheme)?, params, seed);
    cfg.addresses = servers;
    let spec = DemandSpec::new(d.len(), w, s).map_err(err)?;
    let side = d.side_info(&spec.side).map_err(err)?;
    let out = py
        .detach(|| {
            let mut transports = if cfg.addresses.is_empty() {
                net::in_process(d, n)
            } else {
                net::tcp(&cfg.addresses)?
            };
            net::fetch(&cfg, &mut transports, &spec, &side)
        })
        .map_err(err)?;
    let r = PyDict::new(py);
    r.set_item("message", PyBytes::new(py, out.message.as_bytes()))?;
    r.set_item("downloaded_bits", out.report.total_answer_bits)?;
    r.set_item("message_bits", out.report.message_bits)?;
    r.set_item("rate", out.report.rate().to_string())?;
    r.set_item("upload_bytes", out.transcript.upload_bytes)?;
    r.set_item("transcript", out.transcript.to_json())?;
    Ok(r)
}

fn report_dict<'py>(py: Python<'py>, r: &AuditReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("scheme", &r.scheme)?;
    d.set_item("max_deviation", r.max_posterior_deviation.to_string())?;
    d.set_item("private", r.is_private())?;
    d.set_item("queries", r.queries)?;
    d.set_item("hypotheses", r.hypotheses)?;
    d.set_item("summary", r.summary())?;
    Ok(d)
}

/// Exact privacy audit under the uniform prior. `joint` audits (W, S).
#[pyfunction]
#[pyo3(signature = (scheme, k, m, n=2, joint=false))]
fn audit<'py>(
    py: Python<'py>,
    scheme: &str,
    k: usize,
    m: usize,
    n: usize,
    joint: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let s: Box<dyn EnumerableScheme + Send + Sync> = match scheme_id(scheme)? {
        SchemeId::Partition => Box::new(PartitionScheme::new(k, m).map_err(err)?),
        SchemeId::Mds => Box::new(MdsScheme::new(k, m).map_err(err)?),
        SchemeId::Multiserver => Box::new(MultiServerScheme::new(n, k, m).map_err(err)?),
    };
    let prior = Prior::uniform(k, m).map_err(err)?;
    let r = py
        .detach(|| {
            if joint {
                audit_ws(s.as_ref(), &prior)
            } else {
                audit_w(s.as_ref(), &prior)
            }
        })
        .map_err(err)?;
    report_dict(py, &r)
}

fn ratio(r: Ratio<u64>) -> (u64, u64) {
    (*r.numer(), *r.denom())
}

/// 1 / ceil(K / (M + 1)) as (numerator, denominator).
#[pyfunction]
fn capacity_w(k: usize, m: usize) -> PyResult<(u64, u64)> {
    bounds::capacity_w(k, m).map(ratio).map_err(err)
}

/// 1 / (K - M) as (numerator, denominator).
#[pyfunction]
fn capacity_ws(k: usize, m: usize) -> PyResult<(u64, u64)> {
    bounds::capacity_ws(k, m).map(ratio).map_err(err)
}

#[pyfunction]
fn multiserver_rate_lb(n: usize, k: usize, m: usize) -> PyResult<(u64, u64)> {
    bounds::multiserver_rate_lb(n, k, m).map(ratio).map_err(err)
}

/// (total downloaded bits, (rate numerator, denominator)).
#[pyfunction]
fn sj_download_cost(n: usize, g: usize) -> PyResult<(u64, (u64, u64))> {
    let (bits, r) = sun_jafar::download_cost(n, g).map_err(err)?;
    Ok((bits, ratio(r)))
}

/// Per-server atom lists; each atom is a list of (message, slot) pairs.
#[pyfunction]
#[pyo3(signature = (n, g, theta, seed=0))]
fn sj_queries(
    n: usize,
    g: usize,
    theta: usize,
    seed: u64,
) -> PyResult<Vec<Vec<Vec<(usize, usize)>>>> {
    let tr =
        sun_jafar::build_queries(n, g, theta, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(err)?;
    Ok(tr
        .per_server_atoms
        .iter()
        .map(|atoms| {
            atoms
                .iter()
                .map(|a| a.refs().iter().map(|r| (r.message, r.slot)).collect())
                .collect()
        })
        .collect())
}

/// Greedy acyclic induced subgraph of a graph in "i: j1 j2" text form.
/// `seed=None` takes the lowest remaining vertex each step.
#[pyfunction]
#[pyo3(signature = (graph, seed=None))]
fn mais_greedy(graph: &str, seed: Option<u64>) -> PyResult<BTreeSet<usize>> {
    let g: SideInfoGraph = graph.parse().map_err(err)?;
    Ok(match seed {
        Some(s) => bounds::mais_greedy(&g, &mut ChaCha8Rng::seed_from_u64(s)),
        None => bounds::mais_greedy_lowest(&g),
    })
}

#[pymodule]
#[pyo3(name = "pirsi")]
fn pirsi_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDatabase>()?;
    m.add_class::<PyServer>()?;
    m.add_function(wrap_pyfunction!(fetch, m)?)?;
    m.add_function(wrap_pyfunction!(audit, m)?)?;
    m.add_function(wrap_pyfunction!(capacity_w, m)?)?;
    m.add_function(wrap_pyfunction!(capacity_ws, m)?)?;
    m.add_function(wrap_pyfunction!(multiserver_rate_lb, m)?)?;
    m.add_function(wrap_pyfunction!(sj_download_cost, m)?)?;
    m.add_function(wrap_pyfunction!(sj_queries, m)?)?;
    m.add_function(wrap_pyfunction!(mais_greedy, m)?)?;
    Ok(())
}
