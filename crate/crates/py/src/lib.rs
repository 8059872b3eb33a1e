//! Python bindings. Build with `maturin develop --features extension-module`
//! from this directory, then `import cv2x`.

use cv2x_core::agents::ga::optimize;
use cv2x_core::agents::{AgentAction, GaPolicy, Individual, MpdqnAgent, RandomPolicy, STATE_DIM};
use cv2x_core::phy;
use cv2x_core::rng::{stream_rng, Stream};
use cv2x_core::sps;
use cv2x_core::training::{episode_seed, train_mpdqn};
use cv2x_core::{ConfigError, EpisodeMetrics, Error, SimulationConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyString};

fn config_err(e: ConfigError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn core_err(e: Error) -> PyErr {
    match e {
        Error::Config(c) => config_err(c),
        Error::Domain { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Scenario parameters. Keyword arguments override the defaults, using the
/// same keys as the config file.
#[pyclass(name = "Config", module = "cv2x", skip_from_py_object)]
#[derive(Clone)]
pub struct PyConfig {
    inner: SimulationConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (**overrides))]
    fn new(overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut text = String::new();
        if let Some(kw) = overrides {
            for (k, v) in kw.iter() {
                text.push_str(&format!("{}={}\n", k.str()?, kv_value(&v)?));
            }
        }
        let inner = SimulationConfig::parse(&text).map_err(config_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn from_text(text: &str) -> PyResult<Self> {
        let inner = SimulationConfig::parse(text).map_err(config_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let inner = cv2x_core::load_config(path).map_err(config_err)?;
        Ok(Self { inner })
    }

    fn to_text(&self) -> String {
        self.inner.to_kv_string()
    }

    /// Copy with some keys replaced.
    #[pyo3(signature = (**overrides))]
    fn replace(&self, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let mut given = Vec::new();
        let mut extra = String::new();
        if let Some(kw) = overrides {
            for (k, v) in kw.iter() {
                let key = k.str()?.to_string();
                extra.push_str(&format!("{key}={}\n", kv_value(&v)?));
                given.push(key);
            }
        }
        let omega1_only =
            given.iter().any(|k| k == "omega1") && !given.iter().any(|k| k == "omega2");
        let mut text: String = self
            .inner
            .to_kv_string()
            .lines()
            .filter(|l| !(omega1_only && l.starts_with("omega2=")))
            .map(|l| format!("{l}\n"))
            .collect();
        text.push_str(&extra);
        let inner = SimulationConfig::parse(&text).map_err(config_err)?;
        Ok(Self { inner })
    }

    /// Every key with its value, as strings.
    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let d = PyDict::new(py);
        for line in self.inner.to_kv_string().lines() {
            if let Some((k, v)) = line.split_once('=') {
                d.set_item(k, v)?;
            }
        }
        Ok(d)
    }

    #[getter]
    fn n_vehicles(&self) -> usize {
        self.inner.n_vehicles
    }

    #[getter]
    fn slots_per_episode(&self) -> u64 {
        self.inner.slots_per_episode
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[getter]
    fn p_max_mw(&self) -> f64 {
        self.inner.p_max_mw()
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(n_vehicles={}, slots_per_episode={}, seed={})",
            self.inner.n_vehicles, self.inner.slots_per_episode, self.inner.seed
        )
    }
}

fn kv_value(v: &Bound<'_, PyAny>) -> PyResult<String> {
    if let Ok(b) = v.extract::<bool>() {
        return Ok(b.to_string());
    }
    if let Ok(items) = v.extract::<Vec<u64>>() {
        let parts: Vec<String> = items.iter().map(u64::to_string).collect();
        return Ok(parts.join(","));
    }
    Ok(v.str()?.to_string())
}

/// Fixed per-vehicle (RRI ms, power mW) allocation found by the genetic search.
#[pyclass(name = "GaAllocation", module = "cv2x", skip_from_py_object)]
#[derive(Clone)]
pub struct PyGaAllocation {
    inner: Individual,
    #[pyo3(get)]
    fitness: f64,
    #[pyo3(get)]
    best_per_generation: Vec<f64>,
}

#[pymethods]
impl PyGaAllocation {
    #[getter]
    fn genes(&self) -> Vec<(u64, f64)> {
        self.inner
            .genes
            .iter()
            .map(|g| (g.rri, g.power_mw))
            .collect()
    }

    fn __len__(&self) -> usize {
        self.inner.genes.len()
    }
}

/// Runs the genetic search with the config's population settings.
#[pyfunction]
fn ga_optimize(py: Python<'_>, config: &PyConfig, seed: u64) -> PyGaAllocation {
    let cfg = config.inner.clone();
    py.detach(move || {
        let mut rng = stream_rng(seed, Stream::Agent, 3);
        let (pop, history) = optimize(&cfg, &mut rng, episode_seed(seed, 0));
        let (best, fitness) = pop.best();
        PyGaAllocation {
            inner: pop.individuals[best].clone(),
            fitness,
            best_per_generation: history.best,
        }
    })
}

/// MPDQN agent: discrete RRI choice with a continuous power per choice.
#[pyclass(name = "MpdqnAgent", module = "cv2x")]
pub struct PyMpdqn {
    inner: MpdqnAgent,
}

#[pymethods]
impl PyMpdqn {
    #[new]
    fn new(config: &PyConfig, seed: u64) -> Self {
        Self {
            inner: MpdqnAgent::new(&config.inner, seed),
        }
    }

    #[staticmethod]
    fn load(path: &str, config: &PyConfig, seed: u64) -> PyResult<Self> {
        let inner = MpdqnAgent::load_checkpoint(path, &config.inner, seed).map_err(core_err)?;
        Ok(Self { inner })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save_checkpoint(path).map_err(core_err)
    }

    /// Greedy `(rri_index, powers)` for a normalized state.
    fn greedy(&self, state: [f64; STATE_DIM]) -> (usize, Vec<f64>) {
        let (k, params) = self.inner.greedy(&state);
        (k, params.to_vec())
    }

    /// Greedy `(rri_ms, power_mw)`, clamped into the action set.
    fn act(&mut self, state: [f64; STATE_DIM]) -> (u64, f64) {
        let d = self.inner.select_action(&state, false, 0);
        (d.action.rri, d.action.power_mw)
    }

    #[getter]
    fn train_steps(&self) -> u64 {
        self.inner.train_steps()
    }
}

/// Trains a fresh agent for `config.episodes` episodes. Returns the agent and
/// one dict per episode.
#[pyfunction]
fn train<'py>(
    py: Python<'py>,
    config: &PyConfig,
    seed: u64,
) -> PyResult<(PyMpdqn, Vec<Bound<'py, PyDict>>)> {
    let cfg = config.inner.clone();
    let (agent, curve) = py.detach(move || train_mpdqn(&cfg, seed, |_, _| {}));
    let mut rows = Vec::with_capacity(curve.len());
    for p in curve {
        let d = PyDict::new(py);
        d.set_item("episode", p.episode)?;
        d.set_item("mean_reward", p.mean_reward)?;
        d.set_item("loss_q", p.loss_q)?;
        d.set_item("loss_x", p.loss_x)?;
        d.set_item("train_steps", p.train_steps)?;
        d.set_item("epsilon", p.epsilon)?;
        d.set_item("mean_aoi_ms", p.mean_aoi_ms)?;
        d.set_item("mean_energy_mj", p.mean_energy_mj)?;
        rows.push(d);
    }
    Ok((PyMpdqn { inner: agent }, rows))
}

fn metrics_dict<'py>(py: Python<'py>, m: &EpisodeMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("seed", m.seed)?;
    d.set_item("slots", m.slots)?;
    d.set_item("mean_energy_mj", m.mean_energy_mj)?;
    d.set_item("mean_aoi_ms", m.mean_aoi_ms)?;
    d.set_item("mean_reward", m.mean_reward)?;
    d.set_item("epochs", m.epochs)?;
    d.set_item("collisions", m.collisions)?;
    d.set_item("drops", m.drops)?;
    d.set_item("queue_aoi_ms", m.queue_aoi_ms.to_vec())?;
    d.set_item("transmissions", m.transmissions)?;
    d.set_item("receptions", m.receptions)?;
    d.set_item("successes", m.successes)?;
    d.set_item("degenerate", m.degenerate)?;
    Ok(d)
}

/// One episode. `policy` is `"random"` (default), an `MpdqnAgent` (run
/// greedily, without learning) or a `GaAllocation`.
#[pyfunction]
#[pyo3(signature = (config, seed, policy = None))]
fn run_episode<'py>(
    py: Python<'py>,
    config: &PyConfig,
    seed: u64,
    policy: Option<&Bound<'py, PyAny>>,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = config.inner.clone();
    let m = match policy {
        None => py.detach(|| cv2x_core::run_episode(&cfg, RandomPolicy::new(seed), seed)),
        Some(p) if p.is_instance_of::<PyString>() => {
            let name: String = p.extract()?;
            if name != "random" {
                return Err(PyValueError::new_err(format!("unknown policy `{name}`")));
            }
            py.detach(|| cv2x_core::run_episode(&cfg, RandomPolicy::new(seed), seed))
        }
        Some(p) => {
            if let Ok(agent) = p.cast::<PyMpdqn>() {
                let mut a = agent.borrow().inner.clone();
                a.set_explore(false);
                py.detach(|| cv2x_core::run_episode(&cfg, a, seed))
            } else if let Ok(ga) = p.cast::<PyGaAllocation>() {
                let policy = GaPolicy::new(ga.borrow().inner.clone());
                py.detach(|| cv2x_core::run_episode(&cfg, policy, seed))
            } else {
                return Err(PyValueError::new_err(
                    "policy must be 'random', MpdqnAgent or GaAllocation",
                ));
            }
        }
    };
    metrics_dict(py, &m)
}

/// Analytic collision probability of a tagged reservation.
#[pyfunction]
fn collision_probability(pi: f64, rri: u64, csr: u64, n_v: u64, p_rk: f64) -> PyResult<f64> {
    sps::collision_probability(pi, rri, csr, n_v, p_rk).map_err(core_err)
}

/// Monte-Carlo estimate of the same probability.
#[pyfunction]
#[pyo3(signature = (pi, rri, csr, n_v, p_rk, trials, seed = 0))]
fn monte_carlo_collision(
    pi: f64,
    rri: u64,
    csr: u64,
    n_v: u64,
    p_rk: f64,
    trials: u64,
    seed: u64,
) -> f64 {
    let mut rng = stream_rng(seed, Stream::MonteCarlo, 0);
    sps::monte_carlo_collision(pi, rri, csr, n_v, p_rk, trials, &mut rng)
}

/// SINR of every received power (mW) after successive cancellation.
#[pyfunction]
fn sic_decode(powers_mw: Vec<f64>, noise_mw: f64) -> Vec<f64> {
    let received: Vec<(usize, f64)> = powers_mw.into_iter().enumerate().collect();
    phy::sic_decode(&received, noise_mw)
}

/// Airtime in ms; infinite when `eta <= 0`.
#[pyfunction]
fn transmission_time(g_bits: f64, w_hz: f64, eta: f64) -> f64 {
    phy::transmission_time(g_bits, w_hz, eta)
}

/// `(per-use, per-reservation)` energy in mJ.
#[pyfunction]
fn transmission_energy(p_tx_mw: f64, beta: bool, rc0: u32, slot_ms: f64) -> (f64, f64) {
    phy::transmission_energy(p_tx_mw, beta, rc0, slot_ms)
}

/// Clamps `(rri, power)` into the config's action set.
#[pyfunction]
fn clamp_action(config: &PyConfig, rri: u64, power_mw: f64) -> (u64, f64, bool) {
    let (a, changed) =
        cv2x_core::agents::clamp_action(AgentAction { rri, power_mw }, &config.inner);
    (a.rri, a.power_mw, changed)
}

#[pymodule]
fn cv2x(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyMpdqn>()?;
    m.add_class::<PyGaAllocation>()?;
    m.add_function(wrap_pyfunction!(run_episode, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(ga_optimize, m)?)?;
    m.add_function(wrap_pyfunction!(collision_probability, m)?)?;
    m.add_function(wrap_pyfunction!(monte_carlo_collision, m)?)?;
    m.add_function(wrap_pyfunction!(sic_decode, m)?)?;
    m.add_function(wrap_pyfunction!(transmission_time, m)?)?;
    m.add_function(wrap_pyfunction!(transmission_energy, m)?)?;
    m.add_function(wrap_pyfunction!(clamp_action, m)?)?;
    Ok(())
}
