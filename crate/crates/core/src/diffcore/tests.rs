use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::*;

fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

#[test]
fn matmul_identity() {
    let mut tape = Tape::new();
    let m = Tensor::matrix(3, 3, (1..=9).map(f64::from).collect());
    let i = tape.leaf(Tensor::identity(3));
    let mv = tape.leaf(m.clone());
    let out = tape.matmul(i, mv);
    assert_eq!(tape.value(out), &m);
}

#[test]
fn sigmoid_at_zero() {
    let mut tape = Tape::new();
    let x = tape.scalar(0.0);
    let y = tape.sigmoid(x);
    assert_eq!(tape.value(y).item(), 0.5);
}

#[test]
fn mean_by_hand() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0, 3.0, 6.0]));
    let m = tape.mean(x);
    assert_eq!(tape.value(m).item(), 3.0);
}

#[test]
fn sum_of_squares_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let sq = tape.square(x);
    let loss = tape.sum(sq);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.wrt(x).data(), &[2.0, 4.0]);
}

#[test]
fn unreachable_leaf_has_zero_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let p = tape.leaf(Tensor::matrix(2, 2, vec![1.0; 4]));
    let loss = tape.sum(x);
    let g = tape.backward(loss).unwrap();
    assert!(!g.reaches(p));
    assert_eq!(g.wrt(p), Tensor::zeros(&[2, 2]));
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(tape.backward(x), Err(crate::Error::NotScalar(_))));
}

#[test]
fn detach_preserves_values_and_blocks_gradient() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![0.3, -1.2]));
    let d = tape.detach(x);
    assert_eq!(tape.value(d), tape.value(x));
    assert!(!tape.has_parents(d));
    let e = tape.exp(d);
    let loss = tape.sum(e);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.wrt(x), Tensor::zeros(&[2]));
}

#[test]
#[should_panic(expected = "shape mismatch")]
fn shape_mismatch_names_both_shapes() {
    let mut tape = Tape::new();
    let a = tape.leaf(Tensor::zeros(&[2, 3]));
    let b = tape.leaf(Tensor::zeros(&[4, 3]));
    tape.add(a, b);
}

#[test]
fn values_are_deterministic() {
    let build = || {
        let mut rng = seeded(11, 0);
        let mut tape = Tape::new();
        let a = tape.leaf(randn(&mut rng, &[4, 5]));
        let b = tape.leaf(randn(&mut rng, &[5, 3]));
        let c = tape.matmul(a, b);
        let t = tape.tanh(c);
        let loss = tape.mean(t);
        let g = tape.backward(loss).unwrap();
        (tape.value(loss).clone(), g.wrt(a))
    };
    assert_eq!(build(), build());
}

/// Builds a random composite graph over the parameter `x` and returns the
/// scalar loss. Shared by the value-only closure and the taped run.
fn random_graph(tape: &mut Tape, x: Var, plan: &GraphPlan) -> Var {
    let mut h = x;
    for layer in &plan.layers {
        let w = tape.leaf(layer.weight.clone());
        let b = tape.leaf(layer.bias.clone());
        let z = tape.matmul(h, w);
        let z = tape.add(z, b);
        h = match layer.activation {
            0 => tape.tanh(z),
            1 => tape.sigmoid(z),
            2 => tape.bounded_atan(z),
            3 => {
                let s = tape.softplus(z);
                tape.add_scalar(s, 0.1)
            }
            4 => {
                let sq = tape.square(z);
                let e = tape.scale(sq, -0.5);
                tape.exp(e)
            }
            _ => {
                let sq = tape.square(z);
                let shifted = tape.add_scalar(sq, 1.0);
                let l = tape.ln(shifted);
                let r = tape.sqrt(shifted);
                let p = tape.powf(shifted, -1.5);
                // ln(s)/s + z/s, bounded for any depth
                let m = tape.mul(l, r);
                let bounded = tape.mul(m, p);
                let ratio = tape.div(z, shifted);
                tape.add(bounded, ratio)
            }
        };
    }
    let cols = tape.value(h).cols();
    let half = cols / 2;
    let (left, right) = if half > 0 {
        (tape.slice_cols(h, 0, half), tape.slice_cols(h, half, cols - half))
    } else {
        (h, h)
    };
    let t = tape.transpose(left);
    let gram = tape.matmul(t, left);
    let cat = tape.concat_cols(&[left, right]);
    let d = tape.sub(cat, h);
    let dd = tape.square(d);
    let s1 = tape.sum(gram);
    let s2 = tape.mean(dd);
    let v = tape.slice_cols(right, 0, 1);
    let o = tape.outer(v, v);
    let s3 = tape.mean(o);
    let a = tape.add(s1, s2);
    let a = tape.scale(a, 0.3);
    tape.add(a, s3)
}

struct Layer {
    weight: Tensor,
    bias: Tensor,
    activation: u8,
}

struct GraphPlan {
    layers: Vec<Layer>,
}

fn random_plan(rng: &mut Rng, input_cols: usize) -> GraphPlan {
    let depth = rng.random_range(1..=4);
    let mut cols = input_cols;
    let mut layers = Vec::new();
    for _ in 0..depth {
        let out = rng.random_range(1..=16);
        let mut weight = randn(rng, &[cols, out]);
        let scale = 1.0 / (cols as f64).sqrt();
        weight.data_mut().iter_mut().for_each(|v| *v *= scale);
        layers.push(Layer {
            weight,
            bias: randn(rng, &[out]),
            activation: rng.random_range(0..6),
        });
        cols = out;
    }
    GraphPlan { layers }
}

#[test]
fn random_composite_graphs_match_finite_differences() {
    let mut rng = seeded(2024, 0);
    for case in 0..100 {
        let rows = rng.random_range(1..=8);
        let cols = rng.random_range(1..=16);
        let x0 = randn(&mut rng, &[rows, cols]);
        let plan = random_plan(&mut rng, cols);

        let mut tape = Tape::new();
        let x = tape.leaf(x0.clone());
        let loss = random_graph(&mut tape, x, &plan);
        let grad = tape.backward(loss).unwrap().wrt(x);

        let fd = finite_difference(
            |p| {
                let mut t = Tape::new();
                let v = t.leaf(p.clone());
                let l = random_graph(&mut t, v, &plan);
                t.value(l).item()
            },
            &x0,
            None,
        )
        .unwrap();
        assert!(
            grads_close(&grad, &fd, 1e-4, 1e-8),
            "case {case}: autodiff {:?} vs fd {:?}",
            grad.data(),
            fd.data()
        );
    }
}

#[test]
fn broadcast_gradients_reduce_to_operand_shape() {
    let mut rng = seeded(5, 0);
    let m0 = randn(&mut rng, &[3, 4]);
    let row0 = randn(&mut rng, &[4]);
    let col0 = randn(&mut rng, &[3, 1]);
    let f = |tape: &mut Tape, m: Var, row: Var, col: Var| {
        let a = tape.mul(m, row);
        let b = tape.div(a, col);
        let c = tape.sub(b, row);
        let s = tape.square(c);
        tape.mean(s)
    };
    let mut tape = Tape::new();
    let (m, row, col) = (tape.leaf(m0.clone()), tape.leaf(row0.clone()), tape.leaf(col0.clone()));
    let loss = f(&mut tape, m, row, col);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.wrt(row).shape(), &[4]);
    assert_eq!(g.wrt(col).shape(), &[3, 1]);
    let fd_row = finite_difference(
        |r| {
            let mut t = Tape::new();
            let (m, row, col) = (t.leaf(m0.clone()), t.leaf(r.clone()), t.leaf(col0.clone()));
            let l = f(&mut t, m, row, col);
            t.value(l).item()
        },
        &row0,
        None,
    )
    .unwrap();
    assert!(grads_close(&g.wrt(row), &fd_row, 1e-6, 1e-10));
}

#[test]
fn clamp_blocks_gradient_outside_range() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![-0.5, 0.5, 1.5]));
    let c = tape.clamp(x, 0.0, 1.0);
    let loss = tape.sum(c);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.wrt(x).data(), &[0.0, 1.0, 0.0]);
}
