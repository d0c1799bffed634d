//! Daily GNSS displacement data: synthetic generation following the
//! trajectory model (trend, annual, semiannual, volcanic, pink and white
//! noise), CSV ingestion and splitting.

mod io;
mod noise;
mod scenario;
mod split;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::mogi::{MogiParams, StationGeometry};

pub use io::{load_series, read_dataset_dir, write_dataset_dir, write_observations_csv};
pub use noise::pink_noise;
pub use scenario::{
    generate, volume_profile_ramp, ScenarioConfig, SourceLocation, SyntheticScenario, Trajectory,
    VolumeProfile, ANNUAL_PERIOD_DAYS, SEMIANNUAL_PERIOD_DAYS,
};
pub use split::{split, SplitIndices, Splits};

/// Half-open day range `[start, end)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DayWindow {
    pub start: i64,
    pub end: i64,
}

impl DayWindow {
    pub fn new(start: i64, end: i64) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, day: i64) -> bool {
        (self.start..self.end).contains(&day)
    }

    pub fn len(&self) -> i64 {
        (self.end - self.start).max(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Per-sample decomposition of a synthetic observation.
#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub volcanic: Vec<Vec<f64>>,
    /// Trend + annual + semiannual.
    pub background: Vec<Vec<f64>>,
    /// Annual + semiannual part of `background`.
    pub seasonal: Vec<Vec<f64>>,
    /// Pink + white.
    pub noise: Vec<Vec<f64>>,
    pub params: Vec<MogiParams>,
}

impl GroundTruth {
    fn subset(&self, idx: &[usize]) -> Self {
        let pick = |rows: &Vec<Vec<f64>>| idx.iter().map(|&i| rows[i].clone()).collect();
        Self {
            volcanic: pick(&self.volcanic),
            background: pick(&self.background),
            seasonal: pick(&self.seasonal),
            noise: pick(&self.noise),
            params: idx.iter().map(|&i| self.params[i]).collect(),
        }
    }
}

/// Daily displacement samples, one row per day in observation order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub geometry: StationGeometry,
    pub start_date: NaiveDate,
    /// Day index of each sample, counted from `start_date`.
    pub days: Vec<i64>,
    pub samples: Vec<Vec<f64>>,
    pub truth: Option<GroundTruth>,
    /// Per-dimension means removed at load time.
    pub offsets: Option<Vec<f64>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.geometry.obs_dim()
    }

    pub fn date(&self, i: usize) -> NaiveDate {
        self.start_date + chrono::Days::new(self.days[i] as u64)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            geometry: self.geometry.clone(),
            start_date: self.start_date,
            days: idx.iter().map(|&i| self.days[i]).collect(),
            samples: idx.iter().map(|&i| self.samples[i].clone()).collect(),
            truth: self.truth.as_ref().map(|t| t.subset(idx)),
            offsets: self.offsets.clone(),
        }
    }

    /// Per-dimension mean and (population) standard deviation.
    pub fn column_stats(&self) -> (Vec<f64>, Vec<f64>) {
        let d = self.obs_dim();
        let n = self.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for row in &self.samples {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in &self.samples {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m).powi(2);
            }
        }
        (mean, var.into_iter().map(|s| (s / n).sqrt()).collect())
    }
}
