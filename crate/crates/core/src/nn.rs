//! Small building blocks shared by the PILA and HVAE models: a named
//! parameter store, affine layers, input standardization and Gaussian KL.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::{Rng, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Flat list of named trainable tensors. Models keep indices into it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    pub fn push(&mut self, name: impl Into<String>, t: Tensor) -> usize {
        self.names.push(name.into());
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.tensors[i]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Registers every tensor as a tape leaf, in storage order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.leaf(t.clone())).collect()
    }

    /// Replaces tensors with `other`'s after checking names and shapes.
    pub fn load(&mut self, other: ParamSet) -> Result<()> {
        if self.names != other.names {
            return Err(Error::DimensionMismatch(format!(
                "parameter names differ: expected {:?}, found {:?}",
                self.names, other.names
            )));
        }
        for ((name, a), b) in self.names.iter().zip(&self.tensors).zip(&other.tensors) {
            if a.shape() != b.shape() {
                return Err(Error::DimensionMismatch(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        self.tensors = other.tensors;
        Ok(())
    }
}

/// One weighted term of a training objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossTerm {
    pub name: String,
    pub value: f64,
    pub weight: f64,
}

/// Per-term values of an objective. `total` is the left-to-right sum of
/// `weight·value`, the same order the tape uses.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub terms: Vec<LossTerm>,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(terms: Vec<LossTerm>) -> Self {
        let total = weighted_sum(&terms);
        Self { terms, total }
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|t| t.name == name).map(|t| t.value)
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite() && self.terms.iter().all(|t| t.value.is_finite())
    }
}

impl std::fmt::Display for LossBreakdown {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "total={}", self.total)?;
        for t in &self.terms {
            write!(f, " {}={} (x{})", t.name, t.value, t.weight)?;
        }
        Ok(())
    }
}

pub fn weighted_sum(terms: &[LossTerm]) -> f64 {
    let mut it = terms.iter();
    let Some(first) = it.next() else { return 0.0 };
    let mut total = first.value * first.weight;
    for t in it {
        total += t.value * t.weight;
    }
    total
}

/// Tape counterpart of [`weighted_sum`]; `terms` pairs each loss with its weight.
pub fn weighted_total(tape: &mut Tape, terms: &[(Var, f64)]) -> Var {
    let (first, w0) = terms[0];
    let mut total = tape.scale(first, w0);
    for &(v, w) in &terms[1..] {
        let s = tape.scale(v, w);
        total = tape.add(total, s);
    }
    total
}

/// `y = x Wᵀ + b`, W stored out×in.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub w: usize,
    pub b: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    /// Weights and bias uniform in ±1/sqrt(fan_in).
    pub fn new(ps: &mut ParamSet, name: &str, fan_in: usize, fan_out: usize, rng: &mut Rng) -> Self {
        let k = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-k..k)).collect::<Vec<f64>>();
        let w = Tensor::matrix(fan_out, fan_in, draw(fan_in * fan_out));
        let b = Tensor::vector(draw(fan_out));
        Self {
            w: ps.push(format!("{name}.weight"), w),
            b: ps.push(format!("{name}.bias"), b),
            fan_in,
            fan_out,
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Var {
        let wt = tape.transpose(vars[self.w]);
        let y = tape.matmul(x, wt);
        tape.add(y, vars[self.b])
    }
}

/// Shared feature extractor: two tanh layers of equal width.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureNet {
    pub l1: Linear,
    pub l2: Linear,
}

impl FeatureNet {
    pub fn new(ps: &mut ParamSet, name: &str, d_in: usize, hidden: usize, rng: &mut Rng) -> Self {
        Self {
            l1: Linear::new(ps, &format!("{name}.0"), d_in, hidden, rng),
            l2: Linear::new(ps, &format!("{name}.1"), hidden, hidden, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Var {
        let h = self.l1.forward(tape, vars, x);
        let h = tape.tanh(h);
        let h = self.l2.forward(tape, vars, h);
        tape.tanh(h)
    }
}

/// Per-dimension z-scoring with training statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    /// Zero or non-finite spreads fall back to 1.
    pub fn fit(rows: &[Vec<f64>]) -> Self {
        let d = rows.first().map_or(0, Vec::len);
        let n = rows.len().max(1) as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let std = var
            .into_iter()
            .map(|v| {
                let s = v.sqrt();
                if s.is_finite() && s > 1e-12 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn identity(d: usize) -> Self {
        Self {
            mean: vec![0.0; d],
            std: vec![1.0; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &Tensor) -> Tensor {
        let d = self.dim();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % d;
            *v = (*v - self.mean[j]) / self.std[j];
        }
        out
    }

    /// Standardization on the tape, for inputs that are themselves outputs.
    pub fn apply_tape(&self, tape: &mut Tape, x: Var) -> Var {
        let mean = tape.leaf(Tensor::vector(self.mean.clone()));
        let inv = tape.leaf(Tensor::vector(self.std.iter().map(|s| 1.0 / s).collect()));
        let c = tape.sub(x, mean);
        tape.mul(c, inv)
    }
}

/// Stacks rows into an n×d tensor, rejecting non-finite values.
pub fn batch_tensor(rows: &[&[f64]]) -> Result<Tensor> {
    let d = rows.first().map_or(0, |r| r.len());
    let mut data = Vec::with_capacity(rows.len() * d);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != d {
            return Err(Error::DimensionMismatch(format!(
                "sample {i} has {} values, expected {d}",
                r.len()
            )));
        }
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput { sample: i });
        }
        data.extend_from_slice(r);
    }
    Ok(Tensor::matrix(rows.len(), d, data))
}

/// Elementwise KL(N(μ, e^logvar) ‖ N(m, s²)).
pub fn gaussian_kl(tape: &mut Tape, mu: Var, logvar: Var, prior_mean: f64, prior_var: f64) -> Var {
    let d = tape.add_scalar(mu, -prior_mean);
    let d2 = tape.square(d);
    let var = tape.exp(logvar);
    let num = tape.add(var, d2);
    let quad = tape.scale(num, 0.5 / prior_var);
    let half_lv = tape.scale(logvar, -0.5);
    let t = tape.add(quad, half_lv);
    tape.add_scalar(t, 0.5 * prior_var.ln() - 0.5)
}

/// `μ + exp(logvar/2)·ε` with ε drawn from `rng`.
pub fn reparameterize(tape: &mut Tape, mu: Var, logvar: Var, rng: &mut Rng) -> Var {
    let shape = tape.value(mu).shape().to_vec();
    let n: usize = shape.iter().product();
    let eps: Vec<f64> = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    let eps = tape.leaf(Tensor::new(shape, eps).expect("shape from mu"));
    let half = tape.scale(logvar, 0.5);
    let sd = tape.exp(half);
    let noise = tape.mul(sd, eps);
    tape.add(mu, noise)
}

/// Columns of a seeded Gaussian d×r matrix, orthonormalized by modified
/// Gram–Schmidt (a thin QR without the triangular factor).
pub fn orthonormal_basis(d: usize, r: usize, rng: &mut Rng) -> Tensor {
    assert!(r <= d, "cannot fit {r} orthonormal columns in dimension {d}");
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(r);
    while cols.len() < r {
        let mut v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        // two passes keep the columns orthogonal to machine precision
        for _ in 0..2 {
            for c in &cols {
                let dot: f64 = c.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(c).for_each(|(x, a)| *x -= dot * a);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            cols.push(v.into_iter().map(|x| x / norm).collect());
        }
    }
    let mut data = vec![0.0; d * r];
    for (k, c) in cols.iter().enumerate() {
        for (i, &v) in c.iter().enumerate() {
            data[i * r + k] = v;
        }
    }
    Tensor::matrix(d, r, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::seeded;

    #[test]
    fn orthonormal_basis_is_orthonormal() {
        let b = orthonormal_basis(36, 8, &mut seeded(1, 0));
        let g = b.transpose().matmul(&b);
        for i in 0..8 {
            for j in 0..8 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!((g.get(i, j) - e).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn standardizer_zero_spread_falls_back() {
        let s = Standardizer::fit(&[vec![1.0, 2.0], vec![1.0, 4.0]]);
        assert_eq!(s.mean, vec![1.0, 3.0]);
        assert_eq!(s.std, vec![1.0, 1.0]);
        let x = s.apply(&Tensor::matrix(1, 2, vec![2.0, 5.0]));
        assert_eq!(x.data(), &[1.0, 2.0]);
    }

    #[test]
    fn batch_tensor_rejects_non_finite() {
        let rows: [&[f64]; 2] = [&[1.0, 2.0], &[f64::NAN, 0.0]];
        assert!(matches!(batch_tensor(&rows), Err(Error::NonFiniteInput { sample: 1 })));
    }

    #[test]
    fn gaussian_kl_closed_form() {
        let mut tape = Tape::new();
        let mu = tape.leaf(Tensor::vector(vec![0.0, 2.0, 0.5]));
        let lv = tape.leaf(Tensor::vector(vec![0.0, 0.0, (0.866f64 * 0.866).ln()]));
        let kl = gaussian_kl(&mut tape, mu, lv, 0.0, 1.0);
        let v = tape.value(kl).data().to_vec();
        assert!(v[0].abs() < 1e-15);
        assert!((v[1] - 2.0).abs() < 1e-15);
        let kl2 = gaussian_kl(&mut tape, mu, lv, 0.5, 0.866 * 0.866);
        assert!(tape.value(kl2).data()[2].abs() < 1e-12);
    }

    #[test]
    fn load_rejects_shape_change() {
        let mut a = ParamSet::default();
        a.push("w", Tensor::zeros(&[2, 2]));
        let mut b = ParamSet::default();
        b.push("w", Tensor::zeros(&[2, 3]));
        assert!(a.load(b).is_err());
    }
}
