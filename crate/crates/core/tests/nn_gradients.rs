mod common;

use common::naive_forward;
use quadbench::nn::{Activation, Dense, Gradients, Mlp, Tape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;
const FLOOR: f64 = 1e-6;
const KINK: f64 = 1e-4;

fn random_net(act: Activation, rng: &mut ChaCha8Rng) -> Mlp<f64> {
    let depth = rng.random_range(1..=3);
    let mut widths = vec![rng.random_range(1..=5)];
    for _ in 0..depth {
        widths.push(rng.random_range(1..=6));
    }
    widths.push(rng.random_range(1..=3));
    let n = widths.len() - 1;
    let layers = (0..n)
        .map(|i| {
            let a = if i + 1 == n { Activation::Linear } else { act };
            Dense::uniform(widths[i], widths[i + 1], a, 1.0, rng)
        })
        .collect();
    let mut net = Mlp::new(layers).unwrap();
    for l in net.layers_mut() {
        for b in &mut l.bias {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    net
}

/// Smallest |pre-activation| over relu units, computed by straight loops.
fn min_relu_margin(net: &Mlp<f64>, x: &[f64], batch: usize) -> f64 {
    let d = net.input_dim();
    let mut margin = f64::INFINITY;
    for b in 0..batch {
        let mut cur = x[b * d..(b + 1) * d].to_vec();
        for layer in net.layers() {
            let mut next = vec![0.0; layer.out_dim];
            for o in 0..layer.out_dim {
                let z = layer.bias[o]
                    + (0..layer.in_dim).map(|i| layer.weights[o * layer.in_dim + i] * cur[i]).sum::<f64>();
                if layer.activation == Activation::Relu {
                    margin = margin.min(z.abs());
                }
                next[o] = match layer.activation {
                    Activation::Tanh => z.tanh(),
                    Activation::Relu => z.max(0.0),
                    Activation::Linear => z,
                };
            }
            cur = next;
        }
    }
    margin
}

/// L = sum_b sum_k c_k y_bk^2 / 2, evaluated with the loop oracle.
fn loss(net: &Mlp<f64>, x: &[f64], batch: usize, c: &[f64]) -> f64 {
    let d = net.input_dim();
    (0..batch)
        .map(|b| naive_forward(net, &x[b * d..(b + 1) * d]).iter().zip(c).map(|(y, c)| 0.5 * c * y * y).sum::<f64>())
        .sum()
}

fn rel(a: f64, n: f64) -> f64 {
    (a - n).abs() / (FLOOR + a.abs().max(n.abs()))
}

fn check(act: Activation, seed: u64) -> Option<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = random_net(act, &mut rng);
    let batch = rng.random_range(1..=3);
    let x: Vec<f64> = (0..batch * net.input_dim()).map(|_| rng.random_range(-1.5..1.5)).collect();
    if act == Activation::Relu && min_relu_margin(&net, &x, batch) < KINK {
        return None;
    }
    let c: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();

    let mut tape = Tape::new();
    let y = net.forward_tape(&x, batch, &mut tape).unwrap().to_vec();
    let d_out: Vec<f64> = y.iter().enumerate().map(|(i, y)| c[i % c.len()] * y).collect();
    let mut grads = Gradients::zeros_like(&net);
    let dx = net.backward(&tape, &d_out, &mut grads, true).unwrap().unwrap();

    let mut worst: f64 = 0.0;
    let analytic: Vec<f64> = grads.iter().copied().collect();
    for (k, &a) in analytic.iter().enumerate() {
        let mut p = net.clone();
        *p.params_mut().nth(k).unwrap() += H;
        let mut m = net.clone();
        *m.params_mut().nth(k).unwrap() -= H;
        let n = (loss(&p, &x, batch, &c) - loss(&m, &x, batch, &c)) / (2.0 * H);
        worst = worst.max(rel(a, n));
    }
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp[i] += H;
        let mut xm = x.clone();
        xm[i] -= H;
        let n = (loss(&net, &xp, batch, &c) - loss(&net, &xm, batch, &c)) / (2.0 * H);
        worst = worst.max(rel(dx[i], n));
    }
    Some(worst)
}

#[test]
fn analytic_gradients_match_central_differences() {
    for act in [Activation::Tanh, Activation::Relu] {
        let mut checked = 0;
        let mut worst: f64 = 0.0;
        let mut seed = 0;
        while checked < 100 {
            if let Some(w) = check(act, seed) {
                worst = worst.max(w);
                checked += 1;
            }
            seed += 1;
        }
        assert!(worst < 1e-4, "{act:?}: worst relative error {worst}");
    }
}

#[test]
fn library_forward_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for act in [Activation::Tanh, Activation::Relu] {
        for _ in 0..20 {
            let net = random_net(act, &mut rng);
            let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
            let a = net.forward(&x, 1).unwrap();
            let b = naive_forward(&net, &x);
            for (a, b) in a.iter().zip(&b) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn f32_cast_tracks_f64() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    let net = random_net(Activation::Tanh, &mut rng);
    let x: Vec<f64> = (0..net.input_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
    let lo = net.cast::<f32>().forward(&x.iter().map(|&v| v as f32).collect::<Vec<_>>(), 1).unwrap();
    let hi = net.forward(&x, 1).unwrap();
    for (a, b) in lo.iter().zip(&hi) {
        assert!((*a as f64 - b).abs() < 1e-5);
    }
}
