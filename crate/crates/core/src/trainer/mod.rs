//! Minibatch training, checkpoints, evaluation metrics and sweeps.

mod metrics;
mod sweep;

use std::fmt;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::diffcore::{seeded, stabilize_gradients, AdamConfig, AdamState, Rng, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::gnssdata::{Dataset, Splits};
use crate::hvae::{HvaeConfig, HvaeLossWeights, HvaeModel};
use crate::mogi::{StationGeometry, VariableBounds};
use crate::nn::{batch_tensor, weighted_sum, LossBreakdown, LossTerm, ParamSet, Standardizer};
use crate::pila::{LossConfig, PilaConfig, PilaModel, Prediction, DEFAULT_HIDDEN};

pub use metrics::{evaluate, DayOutput, Evaluation, Metrics, EVENT_MARGIN_DAYS, SATURATION_THRESHOLD};
pub use sweep::{sweep, Ablation, SweepAxis, SweepRow};

pub const CHECKPOINT_VERSION: u32 = 1;
const STREAM_SHUFFLE: u64 = 0x7a1;
const STREAM_SAMPLE: u64 = 0x7a2;
const STREAM_STABILIZE: u64 = 0x7a3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Pila,
    Hvae,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Pila => "pila",
            ModelKind::Hvae => "hvae",
        })
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "pila" => Ok(ModelKind::Pila),
            "hvae" => Ok(ModelKind::Hvae),
            _ => Err(Error::Config(format!("unknown model `{s}`; valid: pila, hvae"))),
        }
    }
}

/// HVAE-only settings; ignored for PILA.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HvaeSettings {
    pub beta: f64,
    pub warmup_epochs: usize,
    pub target_ratio: f64,
}

impl Default for HvaeSettings {
    fn default() -> Self {
        let c = HvaeConfig::default();
        Self {
            beta: c.weights.beta,
            warmup_epochs: c.warmup_epochs,
            target_ratio: c.target_ratio,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub rank: usize,
    pub hidden: usize,
    /// PILA only: false disables Δ and its regularizer.
    pub residual: bool,
    pub loss: LossConfig,
    pub hvae: HvaeSettings,
    pub optimizer: AdamConfig,
    pub bounds: VariableBounds,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            model: ModelKind::Pila,
            epochs: 150,
            batch_size: 16,
            seed: 0,
            rank: 4,
            hidden: DEFAULT_HIDDEN,
            residual: true,
            loss: LossConfig::default(),
            hvae: HvaeSettings::default(),
            optimizer: AdamConfig::default(),
            bounds: VariableBounds::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.optimizer.lr > 0.0) || !(self.optimizer.weight_decay >= 0.0) {
            return Err(Error::Config("optimizer lr must be positive and weight_decay non-negative".into()));
        }
        self.loss.validate()?;
        self.bounds.validate()
    }

    pub fn pila_config(&self) -> PilaConfig {
        PilaConfig {
            rank: self.rank,
            hidden: self.hidden,
            residual: self.residual,
            loss: self.loss.clone(),
        }
    }

    pub fn hvae_config(&self) -> HvaeConfig {
        HvaeConfig {
            rank: self.rank,
            hidden: self.hidden,
            weights: HvaeLossWeights {
                beta: self.hvae.beta,
                ..HvaeLossWeights::default()
            },
            warmup_epochs: self.hvae.warmup_epochs,
            target_ratio: self.hvae.target_ratio,
        }
    }
}

/// A trainable model of either kind behind one interface.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Pila(PilaModel),
    Hvae(HvaeModel),
}

impl Model {
    pub fn build(config: &TrainConfig, geometry: StationGeometry, standardizer: Standardizer) -> Result<Self> {
        config.validate()?;
        Ok(match config.model {
            ModelKind::Pila => Model::Pila(PilaModel::new(
                config.pila_config(),
                geometry,
                config.bounds,
                standardizer,
                config.seed,
            )?),
            ModelKind::Hvae => Model::Hvae(HvaeModel::new(
                config.hvae_config(),
                geometry,
                config.bounds,
                standardizer,
                config.seed,
            )?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Pila(_) => ModelKind::Pila,
            Model::Hvae(_) => ModelKind::Hvae,
        }
    }

    pub fn params(&self) -> &ParamSet {
        match self {
            Model::Pila(m) => &m.params,
            Model::Hvae(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        match self {
            Model::Pila(m) => &mut m.params,
            Model::Hvae(m) => &mut m.params,
        }
    }

    pub fn geometry(&self) -> &StationGeometry {
        match self {
            Model::Pila(m) => &m.geometry,
            Model::Hvae(m) => &m.geometry,
        }
    }

    pub fn bounds(&self) -> &VariableBounds {
        match self {
            Model::Pila(m) => &m.bounds,
            Model::Hvae(m) => &m.bounds,
        }
    }

    pub fn standardizer(&self) -> &Standardizer {
        match self {
            Model::Pila(m) => &m.standardizer,
            Model::Hvae(m) => &m.standardizer,
        }
    }

    pub fn loss(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x: &Tensor,
        epoch: usize,
        sampler: Option<&mut Rng>,
    ) -> Result<(Var, LossBreakdown)> {
        match self {
            Model::Pila(m) => m.total_loss(tape, vars, x, epoch, sampler).map(|(v, b, _)| (v, b)),
            Model::Hvae(m) => m.total_loss(tape, vars, x, epoch, sampler).map(|(v, b, _)| (v, b)),
        }
    }

    pub fn predict(&self, rows: &[&[f64]]) -> Result<Prediction> {
        match self {
            Model::Pila(m) => m.predict(rows),
            Model::Hvae(m) => m.predict(rows),
        }
    }
}

/// Serialized best-validation snapshot; rebuilt through [`Checkpoint::model`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: TrainConfig,
    pub epoch: usize,
    pub val_rec: f64,
    pub geometry: StationGeometry,
    pub standardizer: Standardizer,
    /// Calibrated HVAE regularizer weights.
    pub hvae_lambda: Option<[f64; 3]>,
    pub params: ParamSet,
}

impl Checkpoint {
    pub fn from_model(model: &Model, config: &TrainConfig, epoch: usize, val_rec: f64) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config: config.clone(),
            epoch,
            val_rec,
            geometry: model.geometry().clone(),
            standardizer: model.standardizer().clone(),
            hvae_lambda: match model {
                Model::Hvae(m) => Some(m.config.weights.lambda),
                Model::Pila(_) => None,
            },
            params: model.params().clone(),
        }
    }

    pub fn model(&self) -> Result<Model> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut model = Model::build(&self.config, self.geometry.clone(), self.standardizer.clone())?;
        model.params_mut().load(self.params.clone())?;
        if let (Model::Hvae(m), Some(l)) = (&mut model, self.hvae_lambda) {
            m.config.weights.lambda = l;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }
}

/// Sample-weighted epoch means of each loss term at the epoch's weights.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub terms: Vec<LossTerm>,
    pub total: f64,
    pub val_rec: f64,
    /// Gradient entries replaced by the stabilizer during the epoch.
    pub stabilized: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    /// Columns: epoch, total, val_rec, stabilized, then `<term>` and
    /// `<term>_weight` for every loss term in model order.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let Some(first) = self.epochs.first() else {
            out.write_record(["epoch", "total", "val_rec", "stabilized"])?;
            out.flush()?;
            return Ok(());
        };
        let mut header = vec!["epoch".to_string(), "total".into(), "val_rec".into(), "stabilized".into()];
        for t in &first.terms {
            header.push(t.name.clone());
            header.push(format!("{}_weight", t.name));
        }
        out.write_record(&header)?;
        for e in &self.epochs {
            let mut row = vec![
                e.epoch.to_string(),
                fmt_f64(e.total),
                fmt_f64(e.val_rec),
                e.stabilized.to_string(),
            ];
            for t in &e.terms {
                row.push(fmt_f64(t.value));
                row.push(fmt_f64(t.weight));
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Shortest round-trip decimal representation.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

fn rows_of(data: &Dataset, idx: &[usize]) -> Result<Tensor> {
    let rows: Vec<&[f64]> = idx.iter().map(|&i| data.samples[i].as_slice()).collect();
    batch_tensor(&rows)
}

/// Deterministic reconstruction loss over a dataset, in chunks.
fn mean_rec(model: &Model, data: &Dataset, epoch: usize) -> Result<f64> {
    let mut acc = 0.0;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(256) {
        let x = rows_of(data, chunk)?;
        let mut tape = Tape::new();
        let vars = model.params().bind(&mut tape);
        let (_, b) = model.loss(&mut tape, &vars, &x, epoch, None)?;
        acc += b.value("rec").unwrap_or(f64::NAN) * chunk.len() as f64;
    }
    Ok(acc / data.len() as f64)
}

/// Minibatch Adam over `splits.train`, stabilizing every gradient. The
/// returned checkpoint holds the epoch with the lowest validation L_rec
/// (training L_rec when the validation set is empty).
pub fn train(splits: &Splits, config: &TrainConfig) -> Result<(Checkpoint, History)> {
    config.validate()?;
    let train = &splits.train;
    if train.is_empty() {
        return Err(Error::EmptySplit);
    }
    if splits.val.obs_dim() != train.obs_dim() {
        return Err(Error::DimensionMismatch("train and validation dimensions differ".into()));
    }
    let standardizer = Standardizer::fit(&train.samples);
    let mut model = Model::build(config, train.geometry.clone(), standardizer)?;
    if model.geometry().obs_dim() != train.obs_dim() {
        return Err(Error::DimensionMismatch(format!(
            "samples have {} values, geometry implies {}",
            train.obs_dim(),
            model.geometry().obs_dim()
        )));
    }
    let mut adam = AdamState::new(config.optimizer, model.params().tensors());
    let mut rng_shuffle = seeded(config.seed, STREAM_SHUFFLE);
    let mut rng_sample = seeded(config.seed, STREAM_SAMPLE);
    let mut rng_stab = seeded(config.seed, STREAM_STABILIZE);

    let warmup = match &model {
        Model::Hvae(m) => m.config.warmup_epochs,
        Model::Pila(_) => 0,
    };
    let mut warmup_sums: Option<(f64, [f64; 3])> = None;
    let mut history = History::default();
    let mut best: Option<Checkpoint> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng_shuffle);
        let mut sums: Vec<f64> = Vec::new();
        let mut weights: Vec<LossTerm> = Vec::new();
        let mut stabilized = 0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let x = rows_of(train, chunk)?;
            let mut tape = Tape::new();
            let vars = model.params().bind(&mut tape);
            let (loss, breakdown) = match model.loss(&mut tape, &vars, &x, epoch, Some(&mut rng_sample)) {
                Err(Error::NonFiniteLoss { breakdown, .. }) => {
                    return Err(Error::NonFiniteLoss { epoch, batch: b, breakdown })
                }
                other => other?,
            };
            let grads = tape.backward(loss)?;
            let mut g: Vec<Tensor> = vars.iter().map(|&v| grads.wrt(v)).collect();
            stabilized += stabilize_gradients(&mut g, &mut rng_stab);
            adam.step(model.params_mut().tensors_mut(), &g);

            let n = chunk.len() as f64;
            if sums.is_empty() {
                sums = vec![0.0; breakdown.terms.len()];
                weights = breakdown.terms.clone();
            }
            for (s, t) in sums.iter_mut().zip(&breakdown.terms) {
                *s += t.value * n;
            }
        }
        let terms: Vec<LossTerm> = weights
            .into_iter()
            .zip(&sums)
            .map(|(t, s)| LossTerm {
                value: s / train.len() as f64,
                ..t
            })
            .collect();
        let total = weighted_sum(&terms);
        if !total.is_finite() {
            let breakdown = LossBreakdown::new(terms).to_string();
            return Err(Error::NonFiniteLoss { epoch, batch: 0, breakdown });
        }

        if let Model::Hvae(m) = &mut model {
            if epoch < warmup {
                let get = |k: &str| terms.iter().find(|t| t.name == k).map_or(0.0, |t| t.value);
                let (r, l) = warmup_sums.get_or_insert((0.0, [0.0; 3]));
                *r += get("rec");
                for (acc, k) in l.iter_mut().zip(["unmix", "syn", "res"]) {
                    *acc += get(k);
                }
                if epoch + 1 == warmup {
                    let (r, l) = warmup_sums.expect("set above");
                    let w = warmup as f64;
                    m.calibrate(r / w, l.map(|v| v / w));
                }
            }
        }

        let val_rec = if splits.val.is_empty() {
            terms.iter().find(|t| t.name == "rec").map_or(f64::NAN, |t| t.value)
        } else {
            mean_rec(&model, &splits.val, epoch)?
        };
        if best.as_ref().is_none_or(|c| val_rec < c.val_rec) {
            best = Some(Checkpoint::from_model(&model, config, epoch, val_rec));
        }
        history.epochs.push(EpochRecord {
            epoch,
            terms,
            total,
            val_rec,
            stabilized,
        });
    }
    let best = best.unwrap_or_else(|| Checkpoint::from_model(&model, config, config.epochs - 1, f64::NAN));
    Ok((best, history))
}
