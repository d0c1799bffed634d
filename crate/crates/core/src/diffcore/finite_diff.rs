use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const DEFAULT_RELATIVE_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `x`.
///
/// With `step = None` each coordinate uses `1e-5 * max(1, |x_i|)`.
pub fn finite_difference(
    mut f: impl FnMut(&Tensor) -> f64,
    x: &Tensor,
    step: Option<f64>,
) -> Result<Tensor> {
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let xi = x.data()[i];
        let h = step.unwrap_or(DEFAULT_RELATIVE_STEP * xi.abs().max(1.0));
        probe.data_mut()[i] = xi + h;
        let up = f(&probe);
        probe.data_mut()[i] = xi - h;
        let down = f(&probe);
        probe.data_mut()[i] = xi;
        for value in [up, down] {
            if !value.is_finite() {
                return Err(Error::NonFiniteEvaluation {
                    coordinate: i,
                    value,
                });
            }
        }
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    Ok(grad)
}

/// Elementwise check `|a - b| <= rel * max(|a|, |b|) + abs_floor`.
pub fn grads_close(a: &Tensor, b: &Tensor, rel: f64, abs_floor: f64) -> bool {
    a.shape() == b.shape()
        && a.data()
            .iter()
            .zip(b.data())
            .all(|(&x, &y)| (x - y).abs() <= rel * x.abs().max(y.abs()) + abs_floor)
}
