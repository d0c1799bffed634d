//! Hybrid VAE baseline: unmixing loop, variational physical and auxiliary
//! encoders, auxiliary decoder and a nonlinear combiner, trained with four
//! regularizers next to the reconstruction loss.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::diffcore::{seeded, Rng, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::mogi::{mogi_forward_tape, StationGeometry, VariableBounds, DEFAULT_POISSON};
use crate::nn::{
    batch_tensor, gaussian_kl, reparameterize, weighted_total, FeatureNet, Linear, LossBreakdown,
    LossTerm, ParamSet, Standardizer,
};
use crate::pila::{loss_rec, Prediction, DEFAULT_HIDDEN, N_PHYS};

const STREAM_INIT: u64 = 0x4fae;
/// Prior on clamped physical variables, as used by the published baseline.
pub const PHY_PRIOR_MEAN: f64 = 0.5;
pub const PHY_PRIOR_STD: f64 = 0.866;
const COMBINER_HIDDEN_SCALE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HvaeLossWeights {
    pub beta: f64,
    /// λ1 (unmix), λ2 (syn), λ3 (res).
    pub lambda: [f64; 3],
}

impl Default for HvaeLossWeights {
    fn default() -> Self {
        Self {
            beta: (-9f64).exp(),
            lambda: [1.0; 3],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HvaeConfig {
    pub rank: usize,
    pub hidden: usize,
    pub weights: HvaeLossWeights,
    /// Epochs at the initial λ before calibration; 0 keeps λ fixed.
    pub warmup_epochs: usize,
    /// Calibrated λ_k·mean(L_k) as a fraction of mean(L_rec).
    pub target_ratio: f64,
}

impl Default for HvaeConfig {
    fn default() -> Self {
        Self {
            rank: 4,
            hidden: DEFAULT_HIDDEN,
            weights: HvaeLossWeights::default(),
            warmup_epochs: 5,
            target_ratio: 0.1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct HvaeLayout {
    pub features: FeatureNet,
    pub unmix: Linear,
    pub phy_mu: Linear,
    pub phy_logvar: Linear,
    pub aux_mu: Linear,
    pub aux_logvar: Linear,
    pub dec1: Linear,
    pub dec2: Linear,
    pub skip: Linear,
    pub comb1: Linear,
    pub comb2: Linear,
}

#[derive(Clone, Copy, Debug)]
pub struct HvaePass {
    pub alpha: Var,
    pub x_unmix: Var,
    pub z_phy: Var,
    pub mu_phy: Var,
    pub logvar_phy: Var,
    pub z_aux: Var,
    pub mu_aux: Var,
    pub logvar_aux: Var,
    pub x_f: Var,
    pub x_aux: Var,
    pub x_c: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HvaeModel {
    pub config: HvaeConfig,
    pub geometry: StationGeometry,
    pub bounds: VariableBounds,
    pub poisson: f64,
    pub standardizer: Standardizer,
    pub params: ParamSet,
    pub layout: HvaeLayout,
}

impl HvaeModel {
    /// Fan-in uniform layers, except the combiner: its skip block starts at
    /// [I | 0] and its hidden branch output is scaled down so X_C ≈ X_F.
    pub fn new(
        config: HvaeConfig,
        geometry: StationGeometry,
        bounds: VariableBounds,
        standardizer: Standardizer,
        seed: u64,
    ) -> Result<Self> {
        bounds.validate()?;
        let d = geometry.obs_dim();
        let (r, h) = (config.rank, config.hidden);
        if r == 0 || h == 0 {
            return Err(Error::Config("rank and hidden width must be positive".into()));
        }
        if standardizer.dim() != d {
            return Err(Error::DimensionMismatch(format!(
                "standardizer has {} dims, geometry implies {d}",
                standardizer.dim()
            )));
        }
        let w = &config.weights;
        if !(w.beta >= 0.0) || w.lambda.iter().any(|l| !(*l >= 0.0)) {
            return Err(Error::Config("HVAE loss weights must be non-negative".into()));
        }
        let mut rng = seeded(seed, STREAM_INIT);
        let mut ps = ParamSet::default();
        let features = FeatureNet::new(&mut ps, "encoder.features", d, h, &mut rng);
        let unmix = Linear::new(&mut ps, "encoder.unmix", h, d, &mut rng);
        let phy_mu = Linear::new(&mut ps, "encoder.phy_mu", h, N_PHYS, &mut rng);
        let phy_logvar = Linear::new(&mut ps, "encoder.phy_logvar", h, N_PHYS, &mut rng);
        let aux_mu = Linear::new(&mut ps, "encoder.aux_mu", h, r, &mut rng);
        let aux_logvar = Linear::new(&mut ps, "encoder.aux_logvar", h, r, &mut rng);
        let dec1 = Linear::new(&mut ps, "decoder.aux.0", r + N_PHYS, h, &mut rng);
        let dec2 = Linear::new(&mut ps, "decoder.aux.1", h, d, &mut rng);
        let skip = Linear::new(&mut ps, "combiner.skip", 2 * d, d, &mut rng);
        let comb1 = Linear::new(&mut ps, "combiner.0", 2 * d, h, &mut rng);
        let comb2 = Linear::new(&mut ps, "combiner.1", h, d, &mut rng);

        let mut eye = Tensor::zeros(&[d, 2 * d]);
        for i in 0..d {
            eye.data_mut()[i * 2 * d + i] = 1.0;
        }
        *ps.get_mut(skip.w) = eye;
        *ps.get_mut(skip.b) = Tensor::zeros(&[d]);
        for idx in [comb2.w, comb2.b] {
            let t = ps.get(idx).map(|v| v * COMBINER_HIDDEN_SCALE);
            *ps.get_mut(idx) = t;
        }
        Ok(Self {
            config,
            geometry,
            bounds,
            poisson: DEFAULT_POISSON,
            standardizer,
            params: ps,
            layout: HvaeLayout {
                features,
                unmix,
                phy_mu,
                phy_logvar,
                aux_mu,
                aux_logvar,
                dec1,
                dec2,
                skip,
                comb1,
                comb2,
            },
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.geometry.obs_dim()
    }

    /// Physical head on raw-mm input: softplus mean and unbounded log-variance.
    fn encode_phy(&self, tape: &mut Tape, vars: &[Var], x_raw: Var) -> (Var, Var) {
        let l = &self.layout;
        let xs = self.standardizer.apply_tape(tape, x_raw);
        let feat = l.features.forward(tape, vars, xs);
        let pre = l.phy_mu.forward(tape, vars, feat);
        let mu = tape.softplus(pre);
        let lv = l.phy_logvar.forward(tape, vars, feat);
        (mu, lv)
    }

    /// Full forward pass; with a sampler Z_phy and Z_aux are drawn by
    /// reparameterization, otherwise the means are used.
    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x_raw: Var,
        mut sampler: Option<&mut Rng>,
    ) -> Result<HvaePass> {
        let l = &self.layout;
        let check = |tape: &Tape, v: Var, stage: &'static str| -> Result<()> {
            if tape.value(v).all_finite() {
                Ok(())
            } else {
                Err(Error::NonFiniteStage(stage))
            }
        };
        let xs = self.standardizer.apply_tape(tape, x_raw);
        let feat = l.features.forward(tape, vars, xs);
        let pre = l.unmix.forward(tape, vars, feat);
        let sig = tape.sigmoid(pre);
        let alpha = tape.scale(sig, 2.0);
        let x_unmix = tape.mul(alpha, x_raw);
        check(tape, x_unmix, "unmix")?;

        let (mu_phy, logvar_phy) = self.encode_phy(tape, vars, x_unmix);
        let mu_aux = l.aux_mu.forward(tape, vars, feat);
        let logvar_aux = l.aux_logvar.forward(tape, vars, feat);
        let (u_phy, z_aux) = match sampler.as_deref_mut() {
            Some(rng) => (
                reparameterize(tape, mu_phy, logvar_phy, rng),
                reparameterize(tape, mu_aux, logvar_aux, rng),
            ),
            None => (mu_phy, mu_aux),
        };
        let z_phy = tape.clamp(u_phy, 0.0, 1.0);
        check(tape, z_phy, "physical encoder")?;
        check(tape, z_aux, "auxiliary encoder")?;

        let x_f = mogi_forward_tape(tape, z_phy, &self.bounds, &self.geometry, self.poisson);
        check(tape, x_f, "physical model")?;
        let dec_in = tape.concat_cols(&[z_aux, z_phy]);
        let h = l.dec1.forward(tape, vars, dec_in);
        let h = tape.tanh(h);
        let x_aux = l.dec2.forward(tape, vars, h);
        check(tape, x_aux, "auxiliary decoder")?;

        let u = tape.concat_cols(&[x_f, x_aux]);
        let lin = l.skip.forward(tape, vars, u);
        let h = l.comb1.forward(tape, vars, u);
        let h = tape.tanh(h);
        let nl = l.comb2.forward(tape, vars, h);
        let x_c = tape.add(lin, nl);
        check(tape, x_c, "combiner")?;
        Ok(HvaePass {
            alpha,
            x_unmix,
            z_phy,
            mu_phy,
            logvar_phy,
            z_aux,
            mu_aux,
            logvar_aux,
            x_f,
            x_aux,
            x_c,
        })
    }

    /// Objective L_rec + β·L_prior + λ1·L_unmix + λ2·L_syn + λ3·L_res.
    /// Synthetic pairs Z' ~ U[0,1]⁴ come from `sampler` (or a fixed stream).
    pub fn total_loss(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        x_raw: &Tensor,
        epoch: usize,
        sampler: Option<&mut Rng>,
    ) -> Result<(Var, LossBreakdown, HvaePass)> {
        let n = x_raw.rows();
        let x = tape.leaf(x_raw.clone());
        let mut fallback = seeded(0, 0x5e7);
        let (pass, rng) = match sampler {
            Some(rng) => (self.forward(tape, vars, x, Some(&mut *rng))?, rng),
            None => (self.forward(tape, vars, x, None)?, &mut fallback),
        };
        let z_syn = Tensor::matrix(n, N_PHYS, (0..n * N_PHYS).map(|_| rng.random::<f64>()).collect());
        let rec = loss_rec(tape, x, pass.x_c);
        let unmix = loss_rec(tape, pass.x_unmix, pass.x_f);
        let syn = self.loss_syn(tape, vars, &z_syn);
        let res = loss_rec(tape, pass.x_c, pass.x_f);
        let prior = self.loss_prior(tape, &pass);

        let w = &self.config.weights;
        let total = weighted_total(
            tape,
            &[(rec, 1.0), (prior, w.beta), (unmix, w.lambda[0]), (syn, w.lambda[1]), (res, w.lambda[2])],
        );
        let term = |name: &str, v: Var, weight: f64| LossTerm {
            name: name.into(),
            value: tape.value(v).item(),
            weight,
        };
        let breakdown = LossBreakdown::new(vec![
            term("rec", rec, 1.0),
            term("prior", prior, w.beta),
            term("unmix", unmix, w.lambda[0]),
            term("syn", syn, w.lambda[1]),
            term("res", res, w.lambda[2]),
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

    /// Mean squared error between Z' and the physical encoder mean on F(Z').
    pub fn loss_syn(&self, tape: &mut Tape, vars: &[Var], z_syn: &Tensor) -> Var {
        let z = tape.leaf(z_syn.clone());
        let xf = mogi_forward_tape(tape, z, &self.bounds, &self.geometry, self.poisson);
        let xf = tape.detach(xf);
        let (mu, _) = self.encode_phy(tape, vars, xf);
        loss_rec(tape, z, mu)
    }

    /// KL of both posteriors, summed over variables, averaged over the batch.
    pub fn loss_prior(&self, tape: &mut Tape, pass: &HvaePass) -> Var {
        let n = tape.value(pass.mu_phy).rows() as f64;
        let kp = gaussian_kl(
            tape,
            pass.mu_phy,
            pass.logvar_phy,
            PHY_PRIOR_MEAN,
            PHY_PRIOR_STD * PHY_PRIOR_STD,
        );
        let ka = gaussian_kl(tape, pass.mu_aux, pass.logvar_aux, 0.0, 1.0);
        let sp = tape.sum(kp);
        let sa = tape.sum(ka);
        let s = tape.add(sp, sa);
        tape.scale(s, 1.0 / n)
    }

    /// Sets λ_k = target·mean(L_rec)/mean(L_k) from warmup averages of the
    /// (unweighted) terms. Terms with a vanishing mean keep their weight.
    pub fn calibrate(&mut self, mean_rec: f64, means: [f64; 3]) {
        for (lam, m) in self.config.weights.lambda.iter_mut().zip(means) {
            if m.is_finite() && m > 1e-12 && mean_rec.is_finite() {
                *lam = self.config.target_ratio * mean_rec / m;
            }
        }
    }

    /// Deterministic outputs: means in place of samples, Δ = X_C − X_F.
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
        let xv = tape.leaf(x);
        let pass = self.forward(&mut tape, &vars, xv, None)?;
        let delta = tape.sub(pass.x_c, pass.x_f);
        Ok(Prediction {
            eta: tape.value(pass.z_phy).clone(),
            x_f: tape.value(pass.x_f).clone(),
            delta: tape.value(delta).clone(),
            x_c: tape.value(pass.x_c).clone(),
        })
    }
}
