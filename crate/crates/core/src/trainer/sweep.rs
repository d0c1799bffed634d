use std::fmt;
use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use super::{evaluate, train, Metrics, ModelKind, TrainConfig};
use crate::error::{Error, Result};
use crate::gnssdata::{DayWindow, Splits};
use crate::pila::PriorMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ablation {
    Full,
    /// Δ and its regularizer disabled.
    NoResidual,
    /// No residual and β = 0.
    NoPrior,
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::NoResidual => "no-residual",
            Ablation::NoPrior => "no-prior",
        })
    }
}

/// One sweep dimension with its values. Prior values are `endstop` or
/// `kl-<beta>`.
#[derive(Clone, Debug, PartialEq)]
pub enum SweepAxis {
    Rank(Vec<usize>),
    Ablation(Vec<Ablation>),
    Prior(Vec<(PriorMode, Option<f64>)>),
    Model(Vec<ModelKind>),
}

impl SweepAxis {
    pub const NAMES: [&'static str; 4] = ["rank", "ablation", "prior", "model"];

    pub fn parse(axis: &str, values: &[&str]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Config(format!("sweep axis `{axis}` needs at least one value")));
        }
        let bad = |v: &str| Error::Config(format!("invalid value `{v}` for sweep axis `{axis}`"));
        let out = match axis {
            "rank" => SweepAxis::Rank(
                values
                    .iter()
                    .map(|v| v.trim().parse().map_err(|_| bad(v)))
                    .collect::<Result<_>>()?,
            ),
            "ablation" => SweepAxis::Ablation(
                values
                    .iter()
                    .map(|v| match v.trim() {
                        "full" => Ok(Ablation::Full),
                        "no-residual" => Ok(Ablation::NoResidual),
                        "no-prior" => Ok(Ablation::NoPrior),
                        _ => Err(bad(v)),
                    })
                    .collect::<Result<_>>()?,
            ),
            "prior" => SweepAxis::Prior(
                values
                    .iter()
                    .map(|v| {
                        let v = v.trim();
                        if v == "endstop" {
                            Ok((PriorMode::Endstop, None))
                        } else if let Some(b) = v.strip_prefix("kl-") {
                            b.parse::<f64>()
                                .ok()
                                .filter(|b| *b >= 0.0)
                                .map(|b| (PriorMode::Kl, Some(b)))
                                .ok_or_else(|| bad(v))
                        } else if v == "kl" {
                            Ok((PriorMode::Kl, None))
                        } else {
                            Err(bad(v))
                        }
                    })
                    .collect::<Result<_>>()?,
            ),
            "model" => SweepAxis::Model(
                values
                    .iter()
                    .map(|v| match v.trim() {
                        "pila" => Ok(ModelKind::Pila),
                        "hvae" => Ok(ModelKind::Hvae),
                        _ => Err(bad(v)),
                    })
                    .collect::<Result<_>>()?,
            ),
            _ => {
                return Err(Error::Config(format!(
                    "unknown sweep axis `{axis}`; valid: {}",
                    Self::NAMES.join(", ")
                )))
            }
        };
        Ok(out)
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Rank(_) => "rank",
            SweepAxis::Ablation(_) => "ablation",
            SweepAxis::Prior(_) => "prior",
            SweepAxis::Model(_) => "model",
        }
    }

    /// Labelled configurations derived from `base`, one per value.
    pub fn points(&self, base: &TrainConfig) -> Vec<(String, TrainConfig)> {
        let with = |f: &dyn Fn(&mut TrainConfig)| {
            let mut c = base.clone();
            f(&mut c);
            c
        };
        match self {
            SweepAxis::Rank(v) => v.iter().map(|&r| (r.to_string(), with(&|c| c.rank = r))).collect(),
            SweepAxis::Ablation(v) => v
                .iter()
                .map(|&a| {
                    let cfg = with(&|c| match a {
                        Ablation::Full => {}
                        Ablation::NoResidual => c.residual = false,
                        Ablation::NoPrior => {
                            c.residual = false;
                            c.loss.beta = 0.0;
                        }
                    });
                    (a.to_string(), cfg)
                })
                .collect(),
            SweepAxis::Prior(v) => v
                .iter()
                .map(|&(mode, beta)| {
                    let cfg = with(&|c| {
                        c.loss.prior = mode;
                        if let Some(b) = beta {
                            c.loss.beta = b;
                        }
                    });
                    let label = match (mode, beta) {
                        (PriorMode::Endstop, _) => "endstop".to_string(),
                        (PriorMode::Kl, Some(b)) => format!("kl-{b}"),
                        (PriorMode::Kl, None) => "kl".to_string(),
                    };
                    (label, cfg)
                })
                .collect(),
            SweepAxis::Model(v) => v.iter().map(|&k| (k.to_string(), with(&|c| c.model = k))).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub best_epoch: usize,
    pub final_total: f64,
    pub metrics: Metrics,
}

impl SweepRow {
    /// Columns: axis, value, best_epoch, final_total, then the metrics columns.
    pub fn write_csv(rows: &[SweepRow], w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["axis", "value", "best_epoch", "final_total"];
        header.extend(Metrics::COLUMNS);
        out.write_record(&header)?;
        for r in rows {
            let mut rec = vec![
                r.axis.clone(),
                r.value.clone(),
                r.best_epoch.to_string(),
                super::fmt_f64(r.final_total),
            ];
            rec.extend(r.metrics.record());
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Trains and evaluates every axis value on shared data and seed, on up to
/// `workers` threads. Rows keep the axis order; the first failure wins.
pub fn sweep(
    splits: &Splits,
    base: &TrainConfig,
    axis: &SweepAxis,
    event: Option<DayWindow>,
    workers: usize,
) -> Result<Vec<SweepRow>> {
    let points = axis.points(base);
    if points.is_empty() {
        return Err(Error::Config(format!("sweep axis `{}` has no values", axis.name())));
    }
    let slots: Vec<Mutex<Option<Result<SweepRow>>>> = points.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let run = |(label, cfg): &(String, TrainConfig)| -> Result<SweepRow> {
        let (ckpt, hist) = train(splits, cfg)?;
        let eval = evaluate(&ckpt, &splits.test, event)?;
        Ok(SweepRow {
            axis: axis.name().to_string(),
            value: label.clone(),
            best_epoch: ckpt.epoch,
            final_total: hist.epochs.last().map_or(f64::NAN, |e| e.total),
            metrics: eval.metrics,
        })
    };
    std::thread::scope(|s| {
        for _ in 0..workers.clamp(1, points.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(p) = points.get(i) else { break };
                let r = run(p);
                *slots[i].lock().expect("sweep slot poisoned") = Some(r);
            });
        }
    });
    slots
        .into_iter()
        .map(|m| m.into_inner().expect("sweep slot poisoned").expect("every point runs"))
        .collect()
}
