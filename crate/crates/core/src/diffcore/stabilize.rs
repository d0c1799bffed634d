use rand::Rng as _;

use super::rng::Rng;
use super::tensor::Tensor;

pub const STABILIZE_EPS: f64 = 1e-7;

/// Replaces NaN and exact-zero entries of every NaN-bearing gradient with
/// uniform [0, 1) draws scaled by 1e-7. Gradients without NaN are left
/// untouched. Returns how many tensors were rewritten.
pub fn stabilize_gradients(grads: &mut [Tensor], rng: &mut Rng) -> usize {
    let mut touched = 0;
    for g in grads.iter_mut().filter(|g| g.has_nan()) {
        touched += 1;
        // Draw for every entry so the stream advance depends only on shape.
        for v in g.data_mut() {
            let r: f64 = rng.random::<f64>() * STABILIZE_EPS;
            if v.is_nan() || *v == 0.0 {
                *v = r;
            }
        }
    }
    touched
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::rng::seeded;

    #[test]
    fn finite_gradients_pass_through_bit_identical() {
        let mut grads = vec![Tensor::vector(vec![0.0, 1.0, -2.5]), Tensor::scalar(0.0)];
        let before = grads.clone();
        let n = stabilize_gradients(&mut grads, &mut seeded(1, 0));
        assert_eq!(n, 0);
        assert_eq!(grads, before);
    }

    #[test]
    fn nan_and_zero_entries_are_replaced() {
        let mut grads = vec![Tensor::vector(vec![f64::NAN, 0.0, 2.0])];
        stabilize_gradients(&mut grads, &mut seeded(7, 0));
        let d = grads[0].data();
        for &v in &d[..2] {
            assert!((0.0..STABILIZE_EPS).contains(&v), "{v}");
        }
        assert_eq!(d[2], 2.0);
    }

    #[test]
    fn only_nan_bearing_tensors_are_modified() {
        let mut grads = vec![
            Tensor::vector(vec![0.0, 3.0]),
            Tensor::vector(vec![f64::NAN, 4.0]),
        ];
        let n = stabilize_gradients(&mut grads, &mut seeded(3, 0));
        assert_eq!(n, 1);
        assert_eq!(grads[0].data(), &[0.0, 3.0]);
        assert!(!grads[1].has_nan());
        assert_eq!(grads[1].data()[1], 4.0);
    }
}
