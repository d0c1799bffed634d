use std::io::Write;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{fmt_f64, Checkpoint};
use crate::error::{Error, Result};
use crate::gnssdata::{Dataset, DayWindow};
use crate::mogi::{rescale, MogiParams, Variable};

/// |η − 0.5| above this counts as a boundary prediction.
pub const SATURATION_THRESHOLD: f64 = 0.49;
/// Averaging span on each side of the event for the capture ratio.
pub const EVENT_MARGIN_DAYS: i64 = 30;

/// Scores over the held-out window. Recovery fields need ground truth;
/// the capture ratio also needs an event window.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n_test: usize,
    /// mm²
    pub test_mse: f64,
    /// x_m, y_m, depth in km; dv in m³.
    pub mae: Option<[f64; 4]>,
    /// sqrt(var x_m + var y_m), km
    pub location_std_km: f64,
    pub event_capture: Option<f64>,
    pub saturation: f64,
    pub separation: Option<f64>,
}

impl Metrics {
    pub const COLUMNS: [&'static str; 10] = [
        "n_test",
        "test_mse",
        "mae_x_m",
        "mae_y_m",
        "mae_depth",
        "mae_dv",
        "location_std_km",
        "event_capture",
        "saturation",
        "separation",
    ];

    /// Values in [`Metrics::COLUMNS`] order; absent fields are empty.
    pub fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        let mae = |i: usize| opt(self.mae.map(|m| m[i]));
        vec![
            self.n_test.to_string(),
            fmt_f64(self.test_mse),
            mae(0),
            mae(1),
            mae(2),
            mae(3),
            fmt_f64(self.location_std_km),
            opt(self.event_capture),
            fmt_f64(self.saturation),
            opt(self.separation),
        ]
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(Self::COLUMNS)?;
        out.write_record(self.record())?;
        out.flush()?;
        Ok(())
    }

    /// Scores precomputed per-day outputs against `data` (same order).
    pub fn from_outputs(data: &Dataset, days: &[DayOutput], event: Option<DayWindow>) -> Result<Self> {
        let n = data.len();
        if days.len() != n || n == 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} outputs for {n} samples",
                days.len()
            )));
        }
        let d = data.obs_dim();
        let mut sq = 0.0;
        for (o, x) in days.iter().zip(&data.samples) {
            if o.x_c.len() != d {
                return Err(Error::DimensionMismatch(format!("outputs have {} values, samples {d}", o.x_c.len())));
            }
            sq += o.x_c.iter().zip(x).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        let test_mse = sq / (n * d) as f64;

        let xs: Vec<f64> = days.iter().map(|o| o.params.x_m).collect();
        let ys: Vec<f64> = days.iter().map(|o| o.params.y_m).collect();
        let location_std_km = (variance(&xs) + variance(&ys)).sqrt();

        let sat = days
            .iter()
            .flat_map(|o| o.eta)
            .filter(|e| (e - 0.5).abs() > SATURATION_THRESHOLD)
            .count();
        let saturation = sat as f64 / (4 * n) as f64;

        let (mut mae, mut event_capture, mut separation) = (None, None, None);
        if let Some(truth) = &data.truth {
            let mut acc = [0.0; 4];
            for (o, t) in days.iter().zip(&truth.params) {
                for v in Variable::ALL {
                    acc[v.index()] += (o.params.get(v) - t.get(v)).abs() / n as f64;
                }
            }
            mae = Some(acc);
            if let Some(w) = event {
                let pred: Vec<f64> = days.iter().map(|o| o.params.dv).collect();
                let real: Vec<f64> = truth.params.iter().map(|p| p.dv).collect();
                let rise = |v: &[f64]| -> Option<f64> {
                    let before = window_mean(&data.days, v, w.start - EVENT_MARGIN_DAYS, w.start)?;
                    let after = window_mean(&data.days, v, w.end, w.end + EVENT_MARGIN_DAYS)?;
                    Some(after - before)
                };
                event_capture = match (rise(&pred), rise(&real)) {
                    (Some(p), Some(r)) if r != 0.0 => Some(p / r),
                    _ => None,
                };
            }
            let xf: Vec<&[f64]> = days.iter().map(|o| o.x_f.as_slice()).collect();
            let c_v = pooled_corr(&xf, &truth.volcanic);
            let c_s = pooled_corr(&xf, &truth.seasonal);
            separation = Some(c_v - c_s);
        }
        Ok(Self {
            n_test: n,
            test_mse,
            mae,
            location_std_km,
            event_capture,
            saturation,
            separation,
        })
    }
}

/// One predicted day: rescaled parameters, normalized η and the
/// X_F / Δ / X_C decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct DayOutput {
    pub day: i64,
    pub date: NaiveDate,
    pub eta: [f64; 4],
    pub params: MogiParams,
    pub x_f: Vec<f64>,
    pub delta: Vec<f64>,
    pub x_c: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub days: Vec<DayOutput>,
}

impl Evaluation {
    /// Columns: date, day, x_m, y_m, depth, dv, eta_x_m, eta_y_m, eta_depth, eta_dv.
    pub fn write_params_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["date".to_string(), "day".into()];
        header.extend(Variable::ALL.iter().map(|v| v.name().to_string()));
        header.extend(Variable::ALL.iter().map(|v| format!("eta_{}", v.name())));
        out.write_record(&header)?;
        for o in &self.days {
            let mut row = vec![o.date.to_string(), o.day.to_string()];
            row.extend(o.params.as_array().iter().map(|v| fmt_f64(*v)));
            row.extend(o.eta.iter().map(|v| fmt_f64(*v)));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Long format: date, station, component (x_f, delta, x_c), east_mm, north_mm, up_mm.
    pub fn write_decomposition_csv(&self, w: impl Write, data: &Dataset) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["date", "station", "component", "east_mm", "north_mm", "up_mm"])?;
        let stations = data.geometry.stations();
        let k = stations.len();
        for o in &self.days {
            for (name, v) in [("x_f", &o.x_f), ("delta", &o.delta), ("x_c", &o.x_c)] {
                for (s, st) in stations.iter().enumerate() {
                    out.write_record([
                        o.date.to_string(),
                        st.id.clone(),
                        name.to_string(),
                        fmt_f64(v[s]),
                        fmt_f64(v[k + s]),
                        fmt_f64(v[2 * k + s]),
                    ])?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Predicts every sample of `data` with the checkpoint and scores it.
pub fn evaluate(checkpoint: &Checkpoint, data: &Dataset, event: Option<DayWindow>) -> Result<Evaluation> {
    let model = checkpoint.model()?;
    let geom = model.geometry();
    if data.obs_dim() != geom.obs_dim() || data.geometry.stations() != geom.stations() {
        return Err(Error::DimensionMismatch(format!(
            "dataset has {} values over {} stations, checkpoint expects {} over {}",
            data.obs_dim(),
            data.geometry.len(),
            geom.obs_dim(),
            geom.len()
        )));
    }
    if data.is_empty() {
        return Err(Error::EmptySplit);
    }
    let rows: Vec<&[f64]> = data.samples.iter().map(Vec::as_slice).collect();
    let pred = model.predict(&rows)?;
    let bounds = *model.bounds();
    let mut days = Vec::with_capacity(data.len());
    for i in 0..data.len() {
        let e = pred.eta.row(i);
        let eta = [e[0], e[1], e[2], e[3]];
        days.push(DayOutput {
            day: data.days[i],
            date: data.date(i),
            eta,
            params: rescale(&eta, &bounds)?,
            x_f: pred.x_f.row(i).to_vec(),
            delta: pred.delta.row(i).to_vec(),
            x_c: pred.x_c.row(i).to_vec(),
        });
    }
    let metrics = Metrics::from_outputs(data, &days, event)?;
    Ok(Evaluation { metrics, days })
}

fn variance(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

fn window_mean(days: &[i64], v: &[f64], start: i64, end: i64) -> Option<f64> {
    let sel: Vec<f64> = days
        .iter()
        .zip(v)
        .filter(|(d, _)| (start..end).contains(*d))
        .map(|(_, x)| *x)
        .collect();
    (!sel.is_empty()).then(|| sel.iter().sum::<f64>() / sel.len() as f64)
}

/// Correlation of two sample×dim arrays after centering each dimension;
/// zero when either side has no spread.
pub(crate) fn pooled_corr(a: &[&[f64]], b: &[Vec<f64>]) -> f64 {
    let n = a.len() as f64;
    let d = a.first().map_or(0, |r| r.len());
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for j in 0..d {
        let ma = a.iter().map(|r| r[j]).sum::<f64>() / n;
        let mb = b.iter().map(|r| r[j]).sum::<f64>() / n;
        for (ra, rb) in a.iter().zip(b) {
            let (x, y) = (ra[j] - ma, rb[j] - mb);
            ab += x * y;
            aa += x * x;
            bb += y * y;
        }
    }
    if aa > 0.0 && bb > 0.0 {
        (ab / (aa * bb).sqrt()).clamp(-1.0, 1.0)
    } else {
        0.0
    }
}
