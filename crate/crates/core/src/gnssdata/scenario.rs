use std::f64::consts::TAU;

use chrono::NaiveDate;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{pink_noise, Dataset, DayWindow, GroundTruth};
use crate::diffcore::seeded;
use crate::error::{Error, Result};
use crate::mogi::{mogi_forward, MogiParams, StationGeometry, VariableBounds};

pub const ANNUAL_PERIOD_DAYS: f64 = 365.25;
pub const SEMIANNUAL_PERIOD_DAYS: f64 = 182.625;

const STREAM_GEOMETRY: u64 = 1;
const STREAM_TRAJECTORY: u64 = 2;
const STREAM_WHITE: u64 = 0x100;

/// Trajectory coefficients of one station/direction column. `t` in days.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    /// mm
    pub q: f64,
    /// mm/day
    pub m: f64,
    pub a1: f64,
    pub b1: f64,
    pub a2: f64,
    pub b2: f64,
}

impl Trajectory {
    pub fn eval(&self, t: f64) -> f64 {
        self.q + self.m * t + self.seasonal(t)
    }

    /// Annual + semiannual terms only.
    pub fn seasonal(&self, t: f64) -> f64 {
        let (w1, w2) = (TAU * t / ANNUAL_PERIOD_DAYS, TAU * t / SEMIANNUAL_PERIOD_DAYS);
        self.a1 * w1.sin() + self.b1 * w1.cos() + self.a2 * w2.sin() + self.b2 * w2.cos()
    }
}

/// Cumulative source volume change per day, m³.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeProfile {
    values: Vec<f64>,
}

impl VolumeProfile {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(day) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!("volume profile is non-finite at day {day}")));
        }
        Ok(Self { values })
    }

    pub fn zeros(days: usize) -> Self {
        Self {
            values: vec![0.0; days],
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, day: usize) -> f64 {
        self.values[day]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Logistic inflation reaching 1% of `total` at `t_start` and 99% at
/// `t_start + duration`, then a linear decrease of `relax_rate` m³/day.
pub fn volume_profile_ramp(
    t_start: f64,
    duration: f64,
    total: f64,
    relax_rate: f64,
    days: usize,
) -> Result<VolumeProfile> {
    if !(duration > 0.0) {
        return Err(Error::Config(format!("ramp duration must be positive, got {duration}")));
    }
    let center = t_start + duration / 2.0;
    let tau = duration / (2.0 * 99f64.ln());
    let t_end = t_start + duration;
    let values = (0..days)
        .map(|d| {
            let t = d as f64;
            let ramp = total / (1.0 + (-(t - center) / tau).exp());
            ramp - relax_rate * (t - t_end).max(0.0)
        })
        .collect();
    VolumeProfile::new(values)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceLocation {
    /// km
    pub x_m: f64,
    /// km
    pub y_m: f64,
    /// km
    pub depth: f64,
}

/// Scenario description as read from the `[scenario]` table of a config
/// file. Every key is optional.
///
/// | key | unit | default |
/// |---|---|---|
/// | `stations` | count | 12 |
/// | `geometry` | path to `station,x_km,y_km` CSV | jittered grid |
/// | `days` | days | 1400 |
/// | `start_date` | ISO date | 2006-01-01 |
/// | `source` | `{x_m, y_m, depth}` km | 2.5, 0.9, 9.35 |
/// | `event_start` | day | 600 |
/// | `event_duration` | days | 180 |
/// | `event_total` | m³ | 3.7e6 |
/// | `relax_rate` | m³/day | 1850 |
/// | `annual_amplitude` | `[lo, hi]` mm | [2, 6] |
/// | `semiannual_amplitude` | `[lo, hi]` mm | [0.5, 1.5] |
/// | `station_jitter` | relative | 0.15 |
/// | `trend_max` | mm/yr | 3 |
/// | `intercept_max` | mm | 2 |
/// | `white_sigma` | mm | 1 |
/// | `pink_amplitude` | mm | 1 |
/// | `test_window` | `[start, end)` day | [480, 900] |
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub stations: usize,
    pub geometry: Option<std::path::PathBuf>,
    pub days: usize,
    pub start_date: String,
    pub source: SourceLocation,
    pub event_start: f64,
    pub event_duration: f64,
    pub event_total: f64,
    pub relax_rate: f64,
    pub annual_amplitude: [f64; 2],
    pub semiannual_amplitude: [f64; 2],
    pub station_jitter: f64,
    pub trend_max: f64,
    pub intercept_max: f64,
    pub white_sigma: f64,
    pub pink_amplitude: f64,
    pub test_window: [i64; 2],
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let total = 3.7e6;
        Self {
            stations: 12,
            geometry: None,
            days: 1400,
            start_date: "2006-01-01".into(),
            source: SourceLocation {
                x_m: 2.5,
                y_m: 0.9,
                depth: 9.35,
            },
            event_start: 600.0,
            event_duration: 180.0,
            event_total: total,
            relax_rate: 5e-4 * total,
            annual_amplitude: [2.0, 6.0],
            semiannual_amplitude: [0.5, 1.5],
            station_jitter: 0.15,
            trend_max: 3.0,
            intercept_max: 2.0,
            white_sigma: 1.0,
            pink_amplitude: 1.0,
            test_window: [480, 900],
        }
    }
}

impl ScenarioConfig {
    pub fn start_date(&self) -> Result<NaiveDate> {
        NaiveDate::parse_from_str(&self.start_date, "%Y-%m-%d")
            .map_err(|e| Error::Config(format!("start_date `{}`: {e}", self.start_date)))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.days < 2 {
            return bad(format!("days must be at least 2, got {}", self.days));
        }
        if self.geometry.is_none() && self.stations == 0 {
            return bad("stations must be positive".into());
        }
        let nonneg = [
            ("white_sigma", self.white_sigma),
            ("pink_amplitude", self.pink_amplitude),
            ("trend_max", self.trend_max),
            ("intercept_max", self.intercept_max),
            ("station_jitter", self.station_jitter),
        ];
        for (name, v) in nonneg {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        for (name, [lo, hi]) in [
            ("annual_amplitude", self.annual_amplitude),
            ("semiannual_amplitude", self.semiannual_amplitude),
        ] {
            if !(lo.is_finite() && hi.is_finite() && 0.0 <= lo && lo <= hi) {
                return bad(format!("{name} must satisfy 0 <= lo <= hi, got [{lo}, {hi}]"));
            }
        }
        if !(self.event_duration > 0.0) {
            return bad(format!("event_duration must be positive, got {}", self.event_duration));
        }
        let [a, b] = self.test_window;
        if !(0 <= a && a < b && b <= self.days as i64) {
            return bad(format!("test_window [{a}, {b}) must lie inside [0, {})", self.days));
        }
        self.start_date()?;
        Ok(())
    }

    /// Event ramp as a day window, rounded outwards.
    pub fn event_window(&self) -> DayWindow {
        DayWindow::new(
            self.event_start.floor() as i64,
            (self.event_start + self.event_duration).ceil() as i64,
        )
    }
}

/// Everything needed to regenerate a synthetic dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticScenario {
    pub geometry: StationGeometry,
    pub source: SourceLocation,
    pub volume: VolumeProfile,
    /// One per observation column, in flattening order.
    pub trajectories: Vec<Trajectory>,
    pub white_sigma: f64,
    pub pink_amplitude: f64,
    pub seed: u64,
    pub start_date: NaiveDate,
    pub event_window: DayWindow,
    pub test_window: DayWindow,
}

impl SyntheticScenario {
    pub fn from_config(config: &ScenarioConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let bounds = VariableBounds::default();
        let src = config.source;
        let probe = MogiParams::new(src.x_m, src.y_m, src.depth, 0.0);
        if !bounds.contains(&probe) {
            return Err(Error::Config(format!(
                "source ({}, {}, {}) km lies outside the variable bounds",
                src.x_m, src.y_m, src.depth
            )));
        }
        let geometry = match &config.geometry {
            Some(path) => StationGeometry::read_csv(path)?,
            None => StationGeometry::default_layout(
                config.stations,
                &bounds,
                seed.wrapping_add(STREAM_GEOMETRY),
            )?,
        };
        let volume = volume_profile_ramp(
            config.event_start,
            config.event_duration,
            config.event_total,
            config.relax_rate,
            config.days,
        )?;
        let trajectories = draw_trajectories(config, geometry.len(), seed);
        Ok(Self {
            geometry,
            source: src,
            volume,
            trajectories,
            white_sigma: config.white_sigma,
            pink_amplitude: config.pink_amplitude,
            seed,
            start_date: config.start_date()?,
            event_window: config.event_window(),
            test_window: DayWindow::new(config.test_window[0], config.test_window[1]),
        })
    }

    pub fn days(&self) -> usize {
        self.volume.len()
    }

    pub fn params_at(&self, day: usize) -> MogiParams {
        MogiParams::new(
            self.source.x_m,
            self.source.y_m,
            self.source.depth,
            self.volume.at(day),
        )
    }
}

/// Seasonal terms share a regional amplitude and phase per direction;
/// stations perturb both by `station_jitter`.
fn draw_trajectories(config: &ScenarioConfig, n_stations: usize, seed: u64) -> Vec<Trajectory> {
    let mut rng = seeded(seed, STREAM_TRAJECTORY);
    let mut uniform = |lo: f64, hi: f64| {
        if hi > lo {
            rng.random_range(lo..hi)
        } else {
            lo
        }
    };
    let jit = config.station_jitter;
    let trend_per_day = config.trend_max / ANNUAL_PERIOD_DAYS;
    let mut out = Vec::with_capacity(3 * n_stations);
    for _dir in 0..3 {
        let [a_lo, a_hi] = config.annual_amplitude;
        let [s_lo, s_hi] = config.semiannual_amplitude;
        let (amp1, ph1) = (uniform(a_lo, a_hi), uniform(0.0, TAU));
        let (amp2, ph2) = (uniform(s_lo, s_hi), uniform(0.0, TAU));
        for _ in 0..n_stations {
            let r1 = (amp1 * (1.0 + uniform(-jit, jit))).clamp(a_lo, a_hi);
            let p1 = ph1 + uniform(-jit, jit);
            let r2 = (amp2 * (1.0 + uniform(-jit, jit))).clamp(s_lo, s_hi);
            let p2 = ph2 + uniform(-jit, jit);
            out.push(Trajectory {
                q: uniform(-config.intercept_max, config.intercept_max),
                m: uniform(-trend_per_day, trend_per_day),
                a1: r1 * p1.cos(),
                b1: r1 * p1.sin(),
                a2: r2 * p2.cos(),
                b2: r2 * p2.sin(),
            });
        }
    }
    out
}

/// Observation = (background + volcanic) + noise for every day and column.
/// Noise columns come from per-column substreams, so they do not depend on
/// the volume profile.
pub fn generate(scenario: &SyntheticScenario) -> Dataset {
    let days = scenario.days();
    let dim = scenario.geometry.obs_dim();
    let mut noise_cols = Vec::with_capacity(dim);
    for j in 0..dim {
        let pink_seed = scenario.seed ^ (j as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut col = pink_noise(days, scenario.pink_amplitude, pink_seed);
        let mut rng = seeded(scenario.seed, STREAM_WHITE + j as u64);
        for v in col.iter_mut() {
            let w: f64 = StandardNormal.sample(&mut rng);
            *v += scenario.white_sigma * w;
        }
        noise_cols.push(col);
    }

    let mut truth = GroundTruth {
        volcanic: Vec::with_capacity(days),
        background: Vec::with_capacity(days),
        seasonal: Vec::with_capacity(days),
        noise: Vec::with_capacity(days),
        params: Vec::with_capacity(days),
    };
    let mut samples = Vec::with_capacity(days);
    for d in 0..days {
        let params = scenario.params_at(d);
        let volcanic = mogi_forward(&params, &scenario.geometry).to_vec();
        let background: Vec<f64> = scenario
            .trajectories
            .iter()
            .map(|tr| tr.eval(d as f64))
            .collect();
        let noise: Vec<f64> = noise_cols.iter().map(|c| c[d]).collect();
        samples.push(
            (0..dim)
                .map(|j| (background[j] + volcanic[j]) + noise[j])
                .collect(),
        );
        truth.volcanic.push(volcanic);
        truth.background.push(background);
        truth
            .seasonal
            .push(scenario.trajectories.iter().map(|tr| tr.seasonal(d as f64)).collect());
        truth.noise.push(noise);
        truth.params.push(params);
    }
    Dataset {
        geometry: scenario.geometry.clone(),
        start_date: scenario.start_date,
        days: (0..days as i64).collect(),
        samples,
        truth: Some(truth),
        offsets: None,
    }
}
