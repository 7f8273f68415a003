#![allow(dead_code)]

use quadbench::nn::{Activation, Mlp};

/// One-sample Kolmogorov-Smirnov statistic against a continuous CDF.
pub fn ks_statistic(samples: &mut [f64], cdf: impl Fn(f64) -> f64) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in samples.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    d
}

/// Asymptotic p-value of the KS statistic `d` for `n` samples.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    let mut sum = 0.0;
    for k in 1..=100 {
        let k = k as f64;
        let term = 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// Straight-loop forward pass of one input row, sharing no code with the library kernels.
pub fn naive_forward(net: &Mlp<f64>, x: &[f64]) -> Vec<f64> {
    let mut cur = x.to_vec();
    for layer in net.layers() {
        let mut next = vec![0.0; layer.out_dim];
        for o in 0..layer.out_dim {
            let mut z = layer.bias[o];
            for i in 0..layer.in_dim {
                z += layer.weights[o * layer.in_dim + i] * cur[i];
            }
            next[o] = match layer.activation {
                Activation::Tanh => z.tanh(),
                Activation::Relu => z.max(0.0),
                Activation::Linear => z,
            };
        }
        cur = next;
    }
    cur
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().cdf(x)
}
