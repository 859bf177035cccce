//! Exhaustive-sweep oracles for EER and MinDCF.

use ecapa_core::scoring::DcfConfig;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Rates at a threshold, counted directly: accept iff `score >= theta`.
pub fn rates(t: &[f64], n: &[f64], theta: f64) -> (f64, f64) {
    let miss = t.iter().filter(|&&s| s < theta).count() as f64 / t.len() as f64;
    let fa = n.iter().filter(|&&s| s >= theta).count() as f64 / n.len() as f64;
    (miss, fa)
}

/// Thresholds below everything, between every pair of adjacent distinct scores, and above everything.
pub fn midpoints(t: &[f64], n: &[f64]) -> Vec<f64> {
    let mut s: Vec<f64> = t.iter().chain(n).copied().collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    let mut out = vec![s[0] - 1.0];
    out.extend(s.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    out.push(s[s.len() - 1] + 1.0);
    out
}

/// EER as the first crossing of the (miss, fa) path with the diagonal, walking up in threshold.
pub fn eer_oracle(t: &[f64], n: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = midpoints(t, n).into_iter().map(|th| rates(t, n, th)).collect();
    for w in pts.windows(2) {
        let ((m0, f0), (m1, f1)) = (w[0], w[1]);
        if m0 == f0 {
            return m0;
        }
        if m0 < f0 && m1 >= f1 {
            // Solve m0 + u(m1 - m0) = f0 + u(f1 - f0).
            let u = (f0 - m0) / ((m1 - m0) - (f1 - f0));
            return m0 + u * (m1 - m0);
        }
    }
    unreachable!("the path ends at miss = 1, fa = 0")
}

pub fn dcf_oracle(t: &[f64], n: &[f64], cfg: &DcfConfig) -> f64 {
    let norm = (cfg.c_miss * cfg.p_target).min(cfg.c_fa * (1.0 - cfg.p_target));
    midpoints(t, n)
        .into_iter()
        .map(|th| {
            let (m, f) = rates(t, n, th);
            (cfg.c_miss * cfg.p_target * m + cfg.c_fa * (1.0 - cfg.p_target) * f) / norm
        })
        .fold(f64::INFINITY, f64::min)
}

/// Random trial set; a coarse grid on half the draws forces ties across classes.
pub fn trial_set(r: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
    let nt = r.random_range(1..40);
    let nn = r.random_range(1..120);
    let grid = r.random_bool(0.5);
    let shift = r.random_range(-1.0..3.0);
    let mut draw = |mu: f64| {
        let v: f64 = mu + r.random_range(-2.0..2.0);
        if grid {
            (v * 4.0).round() / 4.0
        } else {
            v
        }
    };
    let t = (0..nt).map(|_| draw(shift)).collect();
    let n = (0..nn).map(|_| draw(0.0)).collect();
    (t, n)
}
