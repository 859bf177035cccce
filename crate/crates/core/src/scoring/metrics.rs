use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rates at one decision threshold: accept iff `score >= threshold`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub threshold: f64,
    /// Fraction of targets below the threshold.
    pub p_miss: f64,
    /// Fraction of nontargets at or above the threshold.
    pub p_fa: f64,
}

/// Operating points at every distinct score, plus `+∞` (reject all), in increasing threshold.
pub fn operating_points(targets: &[f64], nontargets: &[f64]) -> Result<Vec<OperatingPoint>> {
    if targets.is_empty() || nontargets.is_empty() {
        return Err(Error::MissingTrials {
            targets: targets.len(),
            nontargets: nontargets.len(),
        });
    }
    if targets.iter().chain(nontargets).any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let mut all: Vec<(f64, bool)> = targets
        .iter()
        .map(|&s| (s, true))
        .chain(nontargets.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (nt, nn) = (targets.len() as f64, nontargets.len() as f64);
    let mut points = Vec::new();
    let (mut below_t, mut below_n) = (0usize, 0usize);
    let mut i = 0;
    while i < all.len() {
        let theta = all[i].0;
        points.push(OperatingPoint {
            threshold: theta,
            p_miss: below_t as f64 / nt,
            p_fa: (nontargets.len() - below_n) as f64 / nn,
        });
        while i < all.len() && all[i].0 == theta {
            if all[i].1 {
                below_t += 1;
            } else {
                below_n += 1;
            }
            i += 1;
        }
    }
    points.push(OperatingPoint {
        threshold: f64::INFINITY,
        p_miss: 1.0,
        p_fa: 0.0,
    });
    Ok(points)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EerResult {
    pub eer: f64,
    /// Threshold of the first operating point at or past the crossing (max score if that is `+∞`).
    pub threshold: f64,
}

/// Equal error rate, interpolating linearly between the two operating points that bracket the crossing.
pub fn eer(targets: &[f64], nontargets: &[f64]) -> Result<EerResult> {
    let pts = operating_points(targets, nontargets)?;
    let finite_max = pts[pts.len() - 2].threshold;
    // p_miss - p_fa goes from -1 at the lowest threshold to +1 at +∞.
    let k = pts.iter().position(|p| p.p_miss >= p.p_fa).expect("last point has p_miss = 1");
    let hi = pts[k];
    let threshold = if hi.threshold.is_finite() { hi.threshold } else { finite_max };
    let d_hi = hi.p_miss - hi.p_fa;
    if k == 0 || d_hi == 0.0 {
        return Ok(EerResult { eer: hi.p_miss, threshold });
    }
    let lo = pts[k - 1];
    let d_lo = lo.p_miss - lo.p_fa;
    let lambda = -d_lo / (d_hi - d_lo);
    Ok(EerResult {
        eer: lo.p_miss + lambda * (hi.p_miss - lo.p_miss),
        threshold,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DcfConfig {
    pub p_target: f64,
    pub c_miss: f64,
    pub c_fa: f64,
}

impl Default for DcfConfig {
    fn default() -> Self {
        Self {
            p_target: 0.01,
            c_miss: 1.0,
            c_fa: 1.0,
        }
    }
}

impl DcfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p_target > 0.0 && self.p_target < 1.0) || self.c_miss <= 0.0 || self.c_fa <= 0.0 {
            return Err(Error::Config("DCF needs 0 < p_target < 1 and positive costs".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcfResult {
    pub min_dcf: f64,
    pub threshold: f64,
}

/// Minimum normalized detection cost over all operating points.
pub fn min_dcf(targets: &[f64], nontargets: &[f64], cfg: &DcfConfig) -> Result<DcfResult> {
    cfg.validate()?;
    let pts = operating_points(targets, nontargets)?;
    let norm = (cfg.c_miss * cfg.p_target).min(cfg.c_fa * (1.0 - cfg.p_target));
    let mut best = DcfResult {
        min_dcf: f64::INFINITY,
        threshold: f64::INFINITY,
    };
    for p in pts {
        let c = (cfg.c_miss * p.p_miss * cfg.p_target + cfg.c_fa * p.p_fa * (1.0 - cfg.p_target)) / norm;
        if c < best.min_dcf {
            best = DcfResult {
                min_dcf: c,
                threshold: p.threshold,
            };
        }
    }
    Ok(best)
}
