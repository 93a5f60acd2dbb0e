//! Python bindings: configuration, scenario simulation, Monte Carlo risk,
//! the toy DP oracle, training and checkpoint inference.

use std::fs;
use std::io::BufReader;

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use voltreach::config::RunConfig;
use voltreach::neural::{load_checkpoint, save_checkpoint, CheckpointMeta, Ensemble, Trainer};
use voltreach::oracle::{
    compare_learned_vs_oracle, dp_solve_toy, evaluation_grid, linspace, mc_estimate, toy_env, DpTable, McEstimate,
    ToyConfig, ToyPlant,
};
use voltreach::powersys::scenario::Termination;
use voltreach::powersys::simulate_trajectory;
use voltreach::reach::power::power_env;
use voltreach::reach::{risk_from_value, Policy, PowerPlant, ZeroPolicy};
use voltreach::RandomStream;

create_exception!(pyvoltreach, VoltreachError, PyException);

fn err(e: voltreach::Error) -> PyErr {
    match e {
        voltreach::Error::Config(_) | voltreach::Error::DimensionMismatch { .. } => PyValueError::new_err(e.to_string()),
        _ => VoltreachError::new_err(e.to_string()),
    }
}

/// Run configuration (all sections, defaults for anything omitted).
#[pyclass(name = "Config", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    fn new() -> Self {
        Self {
            inner: RunConfig::default(),
        }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::from_toml(text).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: RunConfig::load(path.as_ref()).map_err(err)?,
        })
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml()
    }

    fn hash(&self) -> String {
        self.inner.hash()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    fn __repr__(&self) -> String {
        format!("Config(seed={}, hash={})", self.inner.seed, &self.inner.hash()[..12])
    }
}

fn config_or_default(cfg: Option<PyConfig>) -> RunConfig {
    cfg.map(|c| c.inner).unwrap_or_default()
}

/// Simulates the configured scenario without corrective action.
///
/// Returns a dict with `t`, `v` (rows of four bus voltages), `tap`,
/// `events` (list of `(time, label)`), `termination` and `collapse_time`.
#[pyfunction]
#[pyo3(signature = (config=None, seed=None))]
fn simulate<'py>(py: Python<'py>, config: Option<PyConfig>, seed: Option<u64>) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config_or_default(config);
    let mut rng = RandomStream::new(seed.unwrap_or(cfg.seed));
    let traj = simulate_trajectory(&cfg.scenario, &cfg.system, None, &mut rng).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("t", traj.rows.iter().map(|r| r.t).collect::<Vec<_>>())?;
    d.set_item("v", traj.rows.iter().map(|r| r.v.to_vec()).collect::<Vec<_>>())?;
    d.set_item("tap", traj.rows.iter().map(|r| r.tap).collect::<Vec<_>>())?;
    d.set_item(
        "events",
        traj.events.iter().map(|e| (e.time, e.label())).collect::<Vec<_>>(),
    )?;
    match &traj.termination {
        Termination::HorizonReached => {
            d.set_item("termination", "horizon")?;
            d.set_item("collapse_time", py.None())?;
        }
        Termination::Instability(ev) => {
            d.set_item("termination", ev.mechanism.label())?;
            d.set_item("collapse_time", ev.time)?;
        }
    }
    Ok(d)
}

fn estimate_dict<'py>(py: Python<'py>, e: &McEstimate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("risk", e.risk)?;
    d.set_item("lo", e.lo)?;
    d.set_item("hi", e.hi)?;
    d.set_item("n", e.n)?;
    d.set_item("failures", e.failures)?;
    d.set_item("skipped", e.skipped)?;
    d.set_item("risk_by_mechanism", e.risk_by_mechanism.clone())?;
    d.set_item("failures_by_mechanism", e.failures_by_mechanism.clone())?;
    Ok(d)
}

/// Monte Carlo risk at the configured operating point.
///
/// `env` is `"power"` or `"toy"`; without a `policy` the reference is left
/// unchanged (u = 0).
#[pyfunction]
#[pyo3(signature = (config=None, env="power", episodes=None, policy=None, seed=None))]
fn mc_risk<'py>(
    py: Python<'py>,
    config: Option<PyConfig>,
    env: &str,
    episodes: Option<usize>,
    policy: Option<PyRef<'_, PyEnsemble>>,
    seed: Option<u64>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config_or_default(config);
    let n = episodes.unwrap_or(cfg.mc.episodes);
    let master = RandomStream::new(seed.unwrap_or(cfg.seed));
    let pol: Box<dyn Policy + Sync> = match &policy {
        Some(p) => Box::new(p.inner.policy()),
        None => Box::new(ZeroPolicy),
    };
    let est = match env {
        "toy" => {
            let e = toy_env(cfg.toy.clone(), cfg.toy.tau_max, false).map_err(err)?;
            mc_estimate(&e, pol.as_ref(), n, &master, cfg.workers)
        }
        "power" => {
            let mut ep = cfg.episode.clone();
            ep.sample_horizon = false;
            let e = power_env(cfg.system.clone(), cfg.power.clone(), ep).map_err(err)?;
            mc_estimate(&e, pol.as_ref(), n, &master, cfg.workers)
        }
        other => return Err(PyValueError::new_err(format!("unknown env `{other}` (power or toy)"))),
    }
    .map_err(err)?;
    estimate_dict(py, &est)
}

/// Dynamic-programming solution of the toy safety problem.
#[pyclass(name = "DpTable")]
struct PyDpTable {
    inner: DpTable,
    toy: ToyConfig,
}

#[pymethods]
impl PyDpTable {
    /// Optimal safety probability at remaining horizon `h` and state `z`.
    fn value_at(&self, h: f64, z: f64) -> f64 {
        self.inner.value_at(h, z, &self.toy)
    }

    #[getter]
    fn z(&self) -> Vec<f64> {
        (0..self.inner.grid.n_z).map(|j| self.inner.grid.z(j)).collect()
    }

    /// Rows indexed by remaining decision steps, columns by `z`.
    #[getter]
    fn value(&self) -> Vec<Vec<f64>> {
        self.inner.value.rows().into_iter().map(|r| r.to_vec()).collect()
    }
}

#[pyfunction]
#[pyo3(signature = (config=None))]
fn solve_toy(config: Option<PyConfig>) -> PyResult<PyDpTable> {
    let cfg = config_or_default(config);
    Ok(PyDpTable {
        inner: dp_solve_toy(&cfg.toy, &cfg.dp).map_err(err)?,
        toy: cfg.toy,
    })
}

/// Trained actor and critics.
#[pyclass(name = "Ensemble")]
struct PyEnsemble {
    inner: Ensemble,
}

#[pymethods]
impl PyEnsemble {
    #[getter]
    fn state_dim(&self) -> usize {
        self.inner.state_dim
    }

    #[getter]
    fn mechanisms(&self) -> usize {
        self.inner.mechanisms
    }

    /// Greedy action for normalized features.
    fn act(&self, features: Vec<f64>) -> PyResult<f64> {
        self.check(&features)?;
        Ok(self.inner.act(&features))
    }

    /// `(per-mechanism values, total value)` under the greedy action.
    fn values(&self, features: Vec<f64>) -> PyResult<(Vec<f64>, f64)> {
        self.check(&features)?;
        Ok(self.inner.values(&features))
    }

    /// Learned total risk `clip(1 - v, 0, 1)`.
    fn risk(&self, features: Vec<f64>) -> PyResult<f64> {
        Ok(risk_from_value(self.values(features)?.1))
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let mut buf = Vec::new();
        let meta = CheckpointMeta {
            config_hash: String::new(),
            env_steps: 0,
        };
        save_checkpoint(&self.inner, &meta, &mut buf).map_err(err)?;
        fs::write(path, buf).map_err(|e| VoltreachError::new_err(e.to_string()))
    }
}

impl PyEnsemble {
    fn check(&self, x: &[f64]) -> PyResult<()> {
        if x.len() != self.inner.state_dim {
            return Err(PyValueError::new_err(format!(
                "expected {} features, got {}",
                self.inner.state_dim,
                x.len()
            )));
        }
        Ok(())
    }
}

#[pyfunction]
fn load_ensemble(path: &str) -> PyResult<PyEnsemble> {
    let f = fs::File::open(path).map_err(|e| VoltreachError::new_err(format!("{path}: {e}")))?;
    let (inner, _) = load_checkpoint(BufReader::new(f)).map_err(err)?;
    Ok(PyEnsemble { inner })
}

enum AnyTrainer {
    Toy(Trainer<ToyPlant>),
    Power(Trainer<PowerPlant>),
}

/// Multi-critic TD3 trainer on the toy or the power environment.
#[pyclass(name = "Trainer", unsendable)]
struct PyTrainer {
    inner: AnyTrainer,
    cfg: RunConfig,
}

#[pymethods]
impl PyTrainer {
    #[new]
    #[pyo3(signature = (config=None, env="toy"))]
    fn new(config: Option<PyConfig>, env: &str) -> PyResult<Self> {
        let cfg = config_or_default(config);
        let inner = match env {
            "toy" => {
                let e = toy_env(cfg.toy.clone(), cfg.toy.tau_max, cfg.train.sample_horizon).map_err(err)?;
                AnyTrainer::Toy(Trainer::new(e, cfg.td3.clone(), cfg.seed).map_err(err)?)
            }
            "power" => {
                let mut ep = cfg.episode.clone();
                ep.sample_horizon = cfg.train.sample_horizon;
                let e = power_env(cfg.system.clone(), cfg.power.clone(), ep).map_err(err)?;
                AnyTrainer::Power(Trainer::new(e, cfg.td3.clone(), cfg.seed).map_err(err)?)
            }
            other => return Err(PyValueError::new_err(format!("unknown env `{other}` (power or toy)"))),
        };
        Ok(Self { inner, cfg })
    }

    /// Advances training by `steps` environment steps.
    fn run(&mut self, py: Python<'_>, steps: u64) -> PyResult<()> {
        let r = match &mut self.inner {
            AnyTrainer::Toy(t) => t.run(steps),
            AnyTrainer::Power(t) => t.run(steps),
        };
        py.check_signals()?;
        r.map_err(err)
    }

    #[getter]
    fn env_steps(&self) -> u64 {
        match &self.inner {
            AnyTrainer::Toy(t) => t.env_steps,
            AnyTrainer::Power(t) => t.env_steps,
        }
    }

    /// Copy of the current networks.
    fn ensemble(&self) -> PyEnsemble {
        let inner = match &self.inner {
            AnyTrainer::Toy(t) => t.ensemble.clone(),
            AnyTrainer::Power(t) => t.ensemble.clone(),
        };
        PyEnsemble { inner }
    }

    /// Toy only: error of the learned value against the DP oracle on the
    /// 20 x 20 evaluation grid.
    fn compare_with_oracle<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let AnyTrainer::Toy(t) = &self.inner else {
            return Err(PyValueError::new_err("oracle comparison needs the toy environment"));
        };
        let toy = &self.cfg.toy;
        let dp = dp_solve_toy(toy, &self.cfg.dp).map_err(err)?;
        let mut env = toy_env(toy.clone(), toy.tau_max, false).map_err(err)?;
        let states = evaluation_grid(&linspace(1.0, toy.tau_max, 20), &linspace(0.1, 3.0, 20));
        let r = compare_learned_vs_oracle(&mut env, &t.ensemble, &dp, &states);
        let d = PyDict::new(py);
        d.set_item("max_abs_error", r.max_abs_error)?;
        d.set_item("mean_abs_error", r.mean_abs_error)?;
        d.set_item("action_agreement", r.action_agreement)?;
        d.set_item("worst", r.worst)?;
        Ok(d)
    }
}

#[pymodule]
fn pyvoltreach(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("VoltreachError", m.py().get_type::<VoltreachError>())?;
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDpTable>()?;
    m.add_class::<PyEnsemble>()?;
    m.add_class::<PyTrainer>()?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(mc_risk, m)?)?;
    m.add_function(wrap_pyfunction!(solve_toy, m)?)?;
    m.add_function(wrap_pyfunction!(load_ensemble, m)?)?;
    Ok(())
}
