//! Helpers shared by the integration tests. Oracles here never call the
//! library's own kernels.
#![allow(dead_code)]

use ecapa_core::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub mod metrics;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(r: &mut ChaCha8Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| r.random_range(lo..hi)).collect()).unwrap()
}

/// Uniform values with magnitude in `[gap, hi)`, random sign: keeps kinks at 0 out of reach.
pub fn away_from_zero(r: &mut ChaCha8Rng, shape: &[usize], gap: f64, hi: f64) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = r.random_range(gap..hi);
            if r.random_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, 1e-6)`. The floor covers gradients that vanish
/// exactly (a bias in front of a softmax), where only ~1e-11 round-off remains.
pub fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    rel_err_floor(a, n, 1e-6)
}

pub fn rel_err_floor(a: &[f64], n: &[f64], floor: f64) -> f64 {
    let d: Vec<f64> = a.iter().zip(n).map(|(x, y)| x - y).collect();
    norm(&d) / norm(a).max(norm(n)).max(floor)
}

/// Scalar loss `Σ out ⊙ probe` built on top of `build`, so every output entry
/// gets a distinct random weight.
fn probe_loss(g: &mut Graph, out: Var, probe: &Tensor) -> Var {
    let p = g.constant(probe.clone());
    let prod = g.mul(out, p).unwrap();
    g.sum(prod)
}

/// Largest relative error, over inputs, of the analytic gradient of
/// `Σ build(inputs) ⊙ probe` against central differences with step `h`.
pub fn fd_check(inputs: &[Tensor], probe_seed: u64, h: f64, build: impl Fn(&mut Graph, &[Var]) -> Var) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let out = build(&mut g, &vars);
    let probe = uniform(&mut rng(probe_seed), g.shape(out), -1.0, 1.0);
    let loss = probe_loss(&mut g, out, &probe);
    let grads = g.backward(loss).unwrap();

    let eval = |xs: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.constant(t.clone())).collect();
        let out = build(&mut g, &vars);
        let l = probe_loss(&mut g, out, &probe);
        g.value(l).data()[0]
    };
    let mut worst: f64 = 0.0;
    for (i, v) in vars.iter().enumerate() {
        let analytic = grads.wrt(*v);
        let mut numeric = Vec::with_capacity(inputs[i].len());
        let mut xs = inputs.to_vec();
        for k in 0..inputs[i].len() {
            let orig = xs[i].data()[k];
            xs[i].data_mut()[k] = orig + h;
            let lp = eval(&xs);
            xs[i].data_mut()[k] = orig - h;
            let lm = eval(&xs);
            xs[i].data_mut()[k] = orig;
            numeric.push((lp - lm) / (2.0 * h));
        }
        worst = worst.max(rel_err(analytic.data(), &numeric));
    }
    worst
}

/// Direct-summation dilated convolution with explicit zero padding, `x [Cin, T]`, `w [Cout, Cin, K]`.
pub fn naive_conv(x: &[Vec<f64>], w: &[Vec<Vec<f64>>], b: &[f64], dilation: usize) -> Vec<Vec<f64>> {
    let t = x[0].len();
    let k = w[0][0].len();
    let pad = (k - 1) * dilation / 2;
    let mut padded = vec![vec![0.0; t + 2 * pad]; x.len()];
    for (row, src) in padded.iter_mut().zip(x) {
        row[pad..pad + t].copy_from_slice(src);
    }
    let mut y = vec![vec![0.0; t]; w.len()];
    for o in 0..w.len() {
        for tt in 0..t {
            let mut acc = b[o];
            for i in 0..x.len() {
                for j in 0..k {
                    acc += w[o][i][j] * padded[i][tt + j * dilation];
                }
            }
            y[o][tt] = acc;
        }
    }
    y
}

pub fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    let c = *t.shape().last().unwrap();
    t.data().chunks(c).map(<[f64]>::to_vec).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn cosines(e: &[f64], w: &[Vec<f64>]) -> Vec<f64> {
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    w.iter()
        .map(|row| row.iter().zip(e).map(|(a, b)| a * b).sum::<f64>() / (n(row) * n(e)))
        .collect()
}

/// Cross-entropy of `logits` at `y`, shifted log-sum-exp.
pub fn cross_entropy(logits: &[f64], y: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + logits.iter().map(|l| (l - m).exp()).sum::<f64>().ln() - logits[y]
}
