use std::time::Instant;

use proptest::prelude::*;
use rand::Rng;
use statekl_core::numcore::{Activation, Mlp, Module, Tape, Tensor};
use statekl_core::rng::seeded;

const H: f64 = 1e-5;

/// Straight-line forward pass with explicit loops, returning the output and
/// every hidden pre-activation.
fn naive_forward(mlp: &Mlp, x: &[f64], rows: usize) -> (Vec<f64>, Vec<f64>) {
    let mut cur = x.to_vec();
    let mut pre_all = Vec::new();
    let n_layers = mlp.weights().len();
    for (li, (w, b)) in mlp.weights().iter().zip(mlp.biases()).enumerate() {
        let (k, n) = (w.shape()[0], w.shape()[1]);
        let mut next = vec![0.0; rows * n];
        for r in 0..rows {
            for j in 0..n {
                let mut acc = 0.0;
                for i in 0..k {
                    acc += cur[r * k + i] * w.data()[i * n + j];
                }
                acc += b.data()[j];
                let act = if li + 1 == n_layers {
                    mlp.output_activation()
                } else {
                    pre_all.push(acc);
                    mlp.hidden_activation()
                };
                next[r * n + j] = match act {
                    Activation::Linear => acc,
                    Activation::Relu => acc.max(0.0),
                    Activation::Tanh => acc.tanh(),
                };
            }
        }
        cur = next;
    }
    (cur, pre_all)
}

/// Weighted output sum, so every output unit carries a distinct cotangent.
fn loss_value(mlp: &Mlp, x: &Tensor, weights: &[f64]) -> f64 {
    let y = mlp.forward(x).unwrap();
    y.data().iter().zip(weights).map(|(a, b)| a * b).sum()
}

#[test]
fn hand_rolled_oracle_matches_3_8_2_tanh() {
    let mut rng = seeded(42);
    let mlp = Mlp::new(&[3, 8, 2], Activation::Tanh, Activation::Tanh, &mut rng);
    let x: Vec<f64> = (0..15).map(|_| rng.random_range(-2.0..2.0)).collect();
    let got = mlp
        .forward(&Tensor::matrix(5, 3, x.clone()).unwrap())
        .unwrap();
    let (want, _) = naive_forward(&mlp, &x, 5);
    for (a, b) in got.data().iter().zip(&want) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn gradient_oracle_over_random_mlps() {
    let start = Instant::now();
    let mut rng = seeded(2024);
    let mut checked = 0usize;
    for net in 0..100 {
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=16)];
        for _ in 0..depth {
            sizes.push(rng.random_range(1..=16));
        }
        let hidden = if net % 2 == 0 {
            Activation::Tanh
        } else {
            Activation::Relu
        };
        let output = [Activation::Linear, Activation::Tanh][net % 3 % 2];
        let mut mlp = Mlp::new(&sizes, hidden, output, &mut rng);
        let rows = rng.random_range(1..=4);

        // Keep relu pre-activations away from the kink so differences are smooth.
        let x = loop {
            let x: Vec<f64> = (0..rows * sizes[0])
                .map(|_| rng.random_range(-1.5..1.5))
                .collect();
            let (_, pre) = naive_forward(&mlp, &x, rows);
            if hidden != Activation::Relu || pre.iter().all(|p| p.abs() > 1e-3) {
                break Tensor::matrix(rows, sizes[0], x).unwrap();
            }
        };
        let out_n = rows * sizes[sizes.len() - 1];
        let cot: Vec<f64> = (0..out_n).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut tape = Tape::new();
        let xv = tape.leaf(&x);
        let (y, bound) = mlp.forward_on(&mut tape, xv).unwrap();
        let (r, c) = tape.shape(y);
        let cv = tape.constant(r, c, cot.clone()).unwrap();
        let prod = tape.mul(y, cv).unwrap();
        let loss = tape.sum(prod);
        tape.backward(loss).unwrap();
        mlp.zero_grad();
        mlp.pull_grads(&tape, &bound);
        let analytic: Vec<Vec<f64>> = mlp.parameters().iter().map(|p| p.grad().to_vec()).collect();

        for (pi, grads) in analytic.iter().enumerate() {
            for (k, g) in grads.iter().enumerate() {
                let orig = mlp.parameters()[pi].data()[k];
                mlp.parameters_mut()[pi].data_mut()[k] = orig + H;
                let up = loss_value(&mlp, &x, &cot);
                mlp.parameters_mut()[pi].data_mut()[k] = orig - H;
                let down = loss_value(&mlp, &x, &cot);
                mlp.parameters_mut()[pi].data_mut()[k] = orig;
                let fd = (up - down) / (2.0 * H);
                let err = (g - fd).abs();
                let rel = err / g.abs().max(fd.abs());
                assert!(
                    err < 1e-8 || rel < 1e-5,
                    "net {net} {sizes:?} param {pi}[{k}]: analytic {g} fd {fd}"
                );
                checked += 1;
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(checked > 1000);
    assert!(secs < 10.0, "gradient oracle took {secs:.1}s");
}

#[test]
fn backward_accumulates_across_passes() {
    let mut x = Tensor::scalar(5.0).with_grad();
    for _ in 0..2 {
        let mut tape = Tape::new();
        let v = tape.leaf(&x);
        let loss = tape.sum(v);
        tape.backward(loss).unwrap();
        x.accumulate_grad(tape.grad(v).unwrap());
    }
    assert_eq!(x.grad(), &[2.0]);
}

#[test]
fn sum_tanh_wx_matches_finite_differences() {
    let mut rng = seeded(7);
    let w: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let f = |w: &[f64]| -> f64 {
        let mut s = 0.0;
        for r in 0..2 {
            for j in 0..3 {
                let mut z = 0.0;
                for i in 0..4 {
                    z += x[r * 4 + i] * w[i * 3 + j];
                }
                s += z.tanh();
            }
        }
        s
    };
    let mut tape = Tape::new();
    let xv = tape.constant(2, 4, x.clone()).unwrap();
    let wv = tape.variable(4, 3, w.clone()).unwrap();
    let z = tape.matmul(xv, wv).unwrap();
    let t = tape.tanh(z);
    let loss = tape.sum(t);
    tape.backward(loss).unwrap();
    let g = tape.grad(wv).unwrap().to_vec();
    for k in 0..12 {
        let mut up = w.clone();
        up[k] += H;
        let mut down = w.clone();
        down[k] -= H;
        let fd = (f(&up) - f(&down)) / (2.0 * H);
        assert!((g[k] - fd).abs() / g[k].abs().max(fd.abs()).max(1e-8) < 1e-5);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn forward_is_deterministic_and_finite(seed in any::<u64>(), rows in 1usize..6) {
        let mut rng = seeded(seed);
        let mlp = Mlp::new(&[4, 7, 3], Activation::Relu, Activation::Tanh, &mut rng);
        let x: Vec<f64> = (0..rows * 4).map(|_| rng.random_range(-10.0..10.0)).collect();
        let t = Tensor::matrix(rows, 4, x).unwrap();
        let a = mlp.forward(&t).unwrap();
        let b = mlp.forward(&t).unwrap();
        prop_assert_eq!(a.data(), b.data());
        prop_assert!(a.is_finite());
    }

    #[test]
    fn untracked_forward_allocates_no_edges(seed in any::<u64>()) {
        let mut mlp = Mlp::new(&[2, 5, 1], Activation::Tanh, Activation::Linear, &mut seeded(seed));
        mlp.set_trainable(false);
        let mut tape = Tape::new();
        let x = tape.constant(3, 2, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        mlp.forward_on(&mut tape, x).unwrap();
        prop_assert_eq!(tape.edge_count(), 0);
    }
}
