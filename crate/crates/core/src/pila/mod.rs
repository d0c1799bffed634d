//! Physics-informed low-rank augmentation.
//!
//! The encoder maps a standardized observation to normalized Mogi variables
//! η ∈ (0,1)⁴ and r auxiliary variables. The decoder is the Mogi forward
//! model, augmented by a rank-r residual Δ = s·A·Bᵀ whose coefficients A
//! see the physical reconstruction only through a stop-gradient.

use std::f64::consts::FRAC_2_PI;

use serde::{Deserialize, Serialize};

use crate::diffcore::{seeded, Rng, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::mogi::{mogi_forward_tape, StationGeometry, VariableBounds, DEFAULT_POISSON};
use crate::nn::{
    batch_tensor, gaussian_kl, orthonormal_basis, reparameterize, weighted_total, FeatureNet,
    Linear, LossBreakdown, LossTerm, ParamSet, Standardizer,
};


pub const N_PHYS: usize = 4;
pub const DEFAULT_HIDDEN: usize = 128;

const STREAM_INIT: u64 = 0x1417;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorMode {
    /// Log-barrier −mean(ln η + ln(1−η)) on deterministic η.
    Endstop,
    /// Variational heads, η = sigmoid(U), KL(q(U|X) ‖ N(μ₀, σ₀²)).
    Kl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub beta: f64,
    pub lambda: f64,
    pub anneal_epochs: usize,
    pub prior: PriorMode,
    pub clip_eps: f64,
    /// Prior over U in KL mode; standard normal unless configured.
    pub kl_prior_mean: [f64; N_PHYS],
    pub kl_prior_var: [f64; N_PHYS],
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            beta: 10.0,
            lambda: 0.1,
            anneal_epochs: 30,
            prior: PriorMode::Endstop,
            clip_eps: 1e-6,
            kl_prior_mean: [0.0; N_PHYS],
            kl_prior_var: [1.0; N_PHYS],
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be non-negative, got {}", self.beta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 0.5) {
            return Err(Error::Config(format!("clip_eps must lie in (0, 0.5), got {}", self.clip_eps)));
        }
        if self.kl_prior_var.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("kl_prior_var entries must be positive".into()));
        }
        Ok(())
    }
}

/// Residual weight `min(1, epoch/anneal_epochs)`.
pub fn anneal_weight(epoch: usize, anneal_epochs: usize) -> f64 {
    if anneal_epochs == 0 {
        1.0
    } else {
        (epoch as f64 / anneal_epochs as f64).min(1.0)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PilaConfig {
    pub rank: usize,
    pub hidden: usize,
    /// `false` drops Δ from the reconstruction and λ from the objective.
    pub residual: bool,
    pub loss: LossConfig,
}

impl Default for PilaConfig {
    fn default() -> Self {
        Self {
            rank: 4,
            hidden: DEFAULT_HIDDEN,
            residual: true,
            loss: LossConfig::default(),
        }
    }
}

/// Parameter indices of the residual path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResidualLayout {
    pub s: usize,
    pub basis: usize,
    /// r×(r + d_obs), applied as `[Z_aux ‖ X_F]·Wᵀ`.
    pub w: usize,
    pub bias: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PilaLayout {
    pub features: FeatureNet,
    pub phy: Linear,
    pub aux: Linear,
    pub logvar: Option<Linear>,
    pub residual: ResidualLayout,
}

/// Residual-path variables bound on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ResidualVars {
    pub s: Var,
    pub basis: Var,
    pub w: Var,
    pub bias: Var,
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct PilaPass {
    pub eta: Var,
    pub z_aux: Var,
    pub x_f: Var,
    pub a: Var,
    pub delta: Var,
    pub x_c: Var,
    pub mu: Option<Var>,
    pub logvar: Option<Var>,
}

/// Plain-value outputs for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub eta: Tensor,
    pub x_f: Tensor,
    pub delta: Tensor,
    pub x_c: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PilaModel {
    pub config: PilaConfig,
    pub geometry: StationGeometry,
    pub bounds: VariableBounds,
    pub poisson: f64,
    pub standardizer: Standardizer,
    pub params: ParamSet,
    pub layout: PilaLayout,
}

impl PilaModel {
    /// Fresh parameters: fan-in uniform encoder layers, s = 1, B with
    /// orthonormal columns, W ~ N(0, 1e-2²), b = 0.
    pub fn new(
        config: PilaConfig,
        geometry: StationGeometry,
        bounds: VariableBounds,
        standardizer: Standardizer,
        seed: u64,
    ) -> Result<Self> {
        config.loss.validate()?;
        bounds.validate()?;
        let d = geometry.obs_dim();
        let r = config.rank;
        if r == 0 || 2 * r > d {
            return Err(Error::Config(format!(
                "rank must satisfy 1 <= r <= d_obs/2 = {}, got {r}",
                d / 2
            )));
        }
        if config.hidden == 0 {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if standardizer.dim() != d {
            return Err(Error::DimensionMismatch(format!(
                "standardizer has {} dims, geometry implies {d}",
                standardizer.dim()
            )));
        }
        let h = config.hidden;
        let mut rng = seeded(seed, STREAM_INIT);
        let mut ps = ParamSet::default();
        let features = FeatureNet::new(&mut ps, "encoder.features", d, h, &mut rng);
        let phy = Linear::new(&mut ps, "encoder.phy", h, N_PHYS, &mut rng);
        let aux = Linear::new(&mut ps, "encoder.aux", h, r, &mut rng);
        let logvar = (config.loss.prior == PriorMode::Kl)
            .then(|| Linear::new(&mut ps, "encoder.logvar", h, N_PHYS, &mut rng));
        let s = ps.push("residual.s", Tensor::scalar(1.0));
        let basis = ps.push("residual.basis", orthonormal_basis(d, r, &mut rng));
        let w_data = (0..r * (r + d))
            .map(|_| 1e-2 * rand_distr::Distribution::<f64>::sample(&rand_distr::StandardNormal, &mut rng))
            .collect();
        let w = ps.push("residual.w", Tensor::matrix(r, r + d, w_data));
        let bias = ps.push("residual.bias", Tensor::zeros(&[r]));
        Ok(Self {
            config,
            geometry,
            bounds,
            poisson: DEFAULT_POISSON,
            standardizer,
            params: ps,
            layout: PilaLayout {
                features,
                phy,
                aux,
                logvar,
                residual: ResidualLayout { s, basis, w, bias },
            },
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.geometry.obs_dim()
    }

    pub fn rank(&self) -> usize {
        self.config.rank
    }

    pub fn residual_vars(&self, vars: &[Var]) -> ResidualVars {
        let l = self.layout.residual;
        ResidualVars {
            s: vars[l.s],
            basis: vars[l.basis],
            w: vars[l.w],
            bias: vars[l.bias],
        }
    }

    /// η (n×4) and Z_aux (n×r) from standardized inputs. In KL mode a
    /// sampler draws U by reparameterization; without one U = μ.
    pub fn encode(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x_std: Var,
        sampler: Option<&mut Rng>,
    ) -> (Var, Var, Option<Var>, Option<Var>) {
        let l = &self.layout;
        let feat = l.features.forward(tape, vars, x_std);
        let head = l.phy.forward(tape, vars, feat);
        let z_aux = l.aux.forward(tape, vars, feat);
        match l.logvar {
            None => (tape.sigmoid(head), z_aux, None, None),
            Some(lv_head) => {
                let logvar = lv_head.forward(tape, vars, feat);
                let u = match sampler {
                    Some(rng) => reparameterize(tape, head, logvar, rng),
                    None => head,
                };
                (tape.sigmoid(u), z_aux, Some(head), Some(logvar))
            }
        }
    }

    /// X_C = X_F + w·Δ with w the annealing weight (forced to 0 when the
    /// residual is disabled).
    pub fn reconstruct(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x_std: Var,
        w_anneal: f64,
        sampler: Option<&mut Rng>,
    ) -> Result<PilaPass> {
        self.reconstruct_conditioned(tape, vars, x_std, w_anneal, sampler, None)
    }

    /// `condition` replaces the residual's (detached) X_F input with a
    /// constant, which is the function a stop-gradient differentiates.
    pub(crate) fn reconstruct_conditioned(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x_std: Var,
        w_anneal: f64,
        sampler: Option<&mut Rng>,
        condition: Option<&Tensor>,
    ) -> Result<PilaPass> {
        let (eta, z_aux, mu, logvar) = self.encode(tape, vars, x_std, sampler);
        let x_f = mogi_forward_tape(tape, eta, &self.bounds, &self.geometry, self.poisson);
        let cond = match condition {
            Some(c) => tape.leaf(c.clone()),
            None => x_f,
        };
        let (a, delta) = residual(tape, z_aux, cond, &self.residual_vars(vars))?;
        let w = if self.config.residual { w_anneal } else { 0.0 };
        let wd = tape.scale(delta, w);
        let x_c = tape.add(x_f, wd);
        Ok(PilaPass {
            eta,
            z_aux,
            x_f,
            a,
            delta,
            x_c,
            mu,
            logvar,
        })
    }

    /// Objective for one batch: L_rec + β·L_prior + λ·L_res.
    pub fn total_loss(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x_raw: &Tensor,
        epoch: usize,
        sampler: Option<&mut Rng>,
    ) -> Result<(Var, LossBreakdown, PilaPass)> {
        self.total_loss_conditioned(tape, vars, x_raw, epoch, sampler, None)
    }

    pub(crate) fn total_loss_conditioned(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x_raw: &Tensor,
        epoch: usize,
        sampler: Option<&mut Rng>,
        condition: Option<&Tensor>,
    ) -> Result<(Var, LossBreakdown, PilaPass)> {
        let cfg = &self.config.loss;
        let x_std = tape.leaf(self.standardizer.apply(x_raw));
        let x = tape.leaf(x_raw.clone());
        let w = anneal_weight(epoch, cfg.anneal_epochs);
        let pass = self.reconstruct_conditioned(tape, vars, x_std, w, sampler, condition)?;
        let rec = loss_rec(tape, x, pass.x_c);
        let prior = match (pass.mu, pass.logvar) {
            (Some(mu), Some(lv)) => loss_prior_kl_with(tape, mu, lv, &cfg.kl_prior_mean, &cfg.kl_prior_var),
            _ => loss_prior_endstop(tape, pass.eta, cfg.clip_eps),
        };
        let res = loss_res_basis(tape, vars[self.layout.residual.basis]);
        let lambda = if self.config.residual { cfg.lambda } else { 0.0 };
        let total = weighted_total(tape, &[(rec, 1.0), (prior, cfg.beta), (res, lambda)]);
        let breakdown = LossBreakdown::new(vec![
            term("rec", tape.value(rec).item(), 1.0),
            term("prior", tape.value(prior).item(), cfg.beta),
            term("res", tape.value(res).item(), lambda),
        ]);
        debug_assert_eq!(breakdown.total.to_bits(), tape.value(total).item().to_bits());
        if !breakdown.is_finite() {
            return Err(Error::NonFiniteLoss {
                epoch,
                batch: 0,
                breakdown: breakdown.to_string(),
            });
        }
        Ok((total, breakdown, pass))
    }

    /// Deterministic outputs (U = μ in KL mode) with the residual fully on.
    pub fn predict(&self, rows: &[&[f64]]) -> Result<Prediction> {
        let x = batch_tensor(rows)?;
        if x.cols() != self.obs_dim() {
            return Err(Error::DimensionMismatch(format!(
                "samples have {} values, model expects {}",
                x.cols(),
                self.obs_dim()
            )));
        }
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let x_std = tape.leaf(self.standardizer.apply(&x));
        let pass = self.reconstruct(&mut tape, &vars, x_std, 1.0, None)?;
        let delta = if self.config.residual {
            tape.value(pass.delta).clone()
        } else {
            Tensor::zeros(tape.value(pass.delta).shape())
        };
        Ok(Prediction {
            eta: tape.value(pass.eta).clone(),
            x_f: tape.value(pass.x_f).clone(),
            delta,
            x_c: tape.value(pass.x_c).clone(),
        })
    }
}

fn term(name: &str, value: f64, weight: f64) -> LossTerm {
    LossTerm {
        name: name.into(),
        value,
        weight,
    }
}

/// A = (2/π)·atan([Z_aux ‖ sg(X_F)]·Wᵀ + b) and Δ = s·A·Bᵀ.
/// X_F is detached here, so no gradient reaches the physical branch.
pub fn residual(tape: &mut Tape, z_aux: Var, x_f: Var, p: &ResidualVars) -> Result<(Var, Var)> {
    let r = tape.value(z_aux).cols();
    let (br, bc) = tape.value(p.basis).dims2();
    let (wr, wc) = tape.value(p.w).dims2();
    let d = tape.value(x_f).cols();
    if bc != r || wr != r || wc != r + d || br != d || tape.value(p.bias).len() != r {
        return Err(Error::DimensionMismatch(format!(
            "residual rank mismatch: Z_aux has {r} columns, B is {br}x{bc}, W is {wr}x{wc}, X_F has {d} columns"
        )));
    }
    let x_sg = tape.detach(x_f);
    let input = tape.concat_cols(&[z_aux, x_sg]);
    let wt = tape.transpose(p.w);
    let pre = tape.matmul(input, wt);
    let pre = tape.add(pre, p.bias);
    let at = tape.atan(pre);
    let a = tape.scale(at, FRAC_2_PI);
    let bt = tape.transpose(p.basis);
    let ab = tape.matmul(a, bt);
    let delta = tape.mul(ab, p.s);
    Ok((a, delta))
}

/// Mean squared error over batch and dimensions.
pub fn loss_rec(tape: &mut Tape, x: Var, x_c: Var) -> Var {
    let diff = tape.sub(x, x_c);
    let sq = tape.square(diff);
    tape.mean(sq)
}

/// ‖BᵀB − I‖²_F.
pub fn loss_res_basis(tape: &mut Tape, basis: Var) -> Var {
    let r = tape.value(basis).cols();
    let bt = tape.transpose(basis);
    let gram = tape.matmul(bt, basis);
    let eye = tape.leaf(Tensor::identity(r));
    let diff = tape.sub(gram, eye);
    let sq = tape.square(diff);
    tape.sum(sq)
}

/// −mean(ln η + ln(1−η)) with η clipped to [ε, 1−ε].
pub fn loss_prior_endstop(tape: &mut Tape, eta: Var, clip_eps: f64) -> Var {
    let e = tape.clamp(eta, clip_eps, 1.0 - clip_eps);
    let ln_e = tape.ln(e);
    let neg = tape.neg(e);
    let one_minus = tape.add_scalar(neg, 1.0);
    let ln_1m = tape.ln(one_minus);
    let both = tape.add(ln_e, ln_1m);
    let m = tape.mean(both);
    tape.neg(m)
}

/// KL(N(μ, σ²) ‖ N(0, I)) summed over variables, averaged over the batch.
pub fn loss_prior_kl(tape: &mut Tape, mu: Var, logvar: Var) -> Var {
    let k = tape.value(mu).cols();
    loss_prior_kl_with(tape, mu, logvar, &vec![0.0; k], &vec![1.0; k])
}

fn loss_prior_kl_with(tape: &mut Tape, mu: Var, logvar: Var, mean: &[f64], var: &[f64]) -> Var {
    let k = tape.value(mu).cols();
    let n = tape.value(mu).rows();
    let cols: Vec<Var> = (0..k)
        .map(|j| {
            let m = tape.slice_cols(mu, j, 1);
            let lv = tape.slice_cols(logvar, j, 1);
            gaussian_kl(tape, m, lv, mean[j], var[j])
        })
        .collect();
    let kl = tape.concat_cols(&cols);
    let s = tape.sum(kl);
    tape.scale(s, 1.0 / n as f64)
}
