//! Python bindings: forward model, synthetic data and one-shot experiments.
//!
//! Configuration crosses the boundary as TOML text using the same keys as
//! the CLI's `[scenario]` section and the trainer config.

use std::collections::BTreeMap;

use pila_core::gnssdata::{generate, split, ScenarioConfig, SyntheticScenario};
use pila_core::mogi::{mogi_forward, MogiParams, Station, StationGeometry, VariableBounds};
use pila_core::trainer::{evaluate, train, TrainConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn core_err(e: pila_core::Error) -> PyErr {
    use pila_core::Error as E;
    match e {
        E::NonFiniteLoss { .. } | E::NonFiniteStage(_) | E::Io(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn parse_toml<T: serde::de::DeserializeOwned + Default>(text: Option<&str>, what: &str) -> PyResult<T> {
    match text {
        None => Ok(T::default()),
        Some(t) => toml::from_str(t).map_err(|e| PyValueError::new_err(format!("{what}: {}", e.message()))),
    }
}

fn geometry(stations: Vec<(f64, f64)>) -> PyResult<StationGeometry> {
    let list = stations
        .into_iter()
        .enumerate()
        .map(|(i, (x_km, y_km))| Station {
            id: format!("S{:02}", i + 1),
            x_km,
            y_km,
        })
        .collect();
    StationGeometry::new(list).map_err(core_err)
}

/// Surface displacement in mm at `stations` [(x_km, y_km), ...] for a source
/// (x_m km, y_m km, depth km, dv m^3). Returns east, north and up lists.
#[pyfunction]
#[pyo3(signature = (x_m, y_m, depth, dv, stations, poisson = 0.25))]
fn forward(
    x_m: f64,
    y_m: f64,
    depth: f64,
    dv: f64,
    stations: Vec<(f64, f64)>,
    poisson: f64,
) -> PyResult<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if !(depth > 0.0) {
        return Err(PyValueError::new_err(format!("depth must be positive, got {depth}")));
    }
    let geom = geometry(stations)?;
    let mut p = MogiParams::new(x_m, y_m, depth, dv);
    p.poisson = poisson;
    let f = mogi_forward(&p, &geom);
    Ok((f.east, f.north, f.up))
}

/// Default variable bounds as {name: (lo, hi)}.
#[pyfunction]
fn default_bounds() -> BTreeMap<&'static str, (f64, f64)> {
    let b = VariableBounds::default();
    [("x_m", b.x_m), ("y_m", b.y_m), ("depth", b.depth), ("dv", b.dv)]
        .into_iter()
        .map(|(k, [lo, hi])| (k, (lo, hi)))
        .collect()
}

/// Synthetic dataset: (observations [days][3·stations], true (x_m, y_m, depth, dv) per day).
#[pyfunction]
#[pyo3(signature = (scenario_toml = None, seed = 0))]
fn synthesize(scenario_toml: Option<&str>, seed: u64) -> PyResult<(Vec<Vec<f64>>, Vec<[f64; 4]>)> {
    let cfg: ScenarioConfig = parse_toml(scenario_toml, "scenario")?;
    let sc = SyntheticScenario::from_config(&cfg, seed).map_err(core_err)?;
    let data = generate(&sc);
    let truth = data
        .truth
        .as_ref()
        .map(|t| t.params.iter().map(MogiParams::as_array).collect())
        .unwrap_or_default();
    Ok((data.samples, truth))
}

/// Generates the scenario, trains on everything outside its test window and
/// evaluates on the window. Returns the metrics; absent values are None.
#[pyfunction]
#[pyo3(signature = (scenario_toml = None, train_toml = None, seed = 0))]
fn run_experiment(
    py: Python<'_>,
    scenario_toml: Option<&str>,
    train_toml: Option<&str>,
    seed: u64,
) -> PyResult<BTreeMap<&'static str, Option<f64>>> {
    let scen: ScenarioConfig = parse_toml(scenario_toml, "scenario")?;
    let mut tc: TrainConfig = parse_toml(train_toml, "train")?;
    tc.seed = seed;
    tc.validate().map_err(core_err)?;
    let metrics = py
        .detach(|| -> pila_core::Result<_> {
            let sc = SyntheticScenario::from_config(&scen, seed)?;
            let data = generate(&sc);
            let splits = split(&data, sc.test_window, seed)?;
            let (ckpt, _) = train(&splits, &tc)?;
            Ok(evaluate(&ckpt, &splits.test, Some(sc.event_window))?.metrics)
        })
        .map_err(core_err)?;
    let mae = metrics.mae.map(|m| m.map(Some)).unwrap_or([None; 4]);
    Ok(BTreeMap::from([
        ("n_test", Some(metrics.n_test as f64)),
        ("test_mse", Some(metrics.test_mse)),
        ("mae_x_m", mae[0]),
        ("mae_y_m", mae[1]),
        ("mae_depth", mae[2]),
        ("mae_dv", mae[3]),
        ("location_std_km", Some(metrics.location_std_km)),
        ("event_capture", metrics.event_capture),
        ("saturation", Some(metrics.saturation)),
        ("separation", metrics.separation),
    ]))
}

#[pymodule]
fn pila_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(forward, m)?)?;
    m.add_function(wrap_pyfunction!(default_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
