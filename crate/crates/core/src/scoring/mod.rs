//! Cosine scoring, adaptive s-norm, EER and MinDCF.

mod io;
mod metrics;
mod snorm;

pub use io::{read_scores, read_trials, write_scores, MetricsReport, ScoreLine, Trial};
pub use metrics::{eer, min_dcf, operating_points, DcfConfig, DcfResult, EerResult, OperatingPoint};
pub use snorm::{adaptive_snorm, build_cohort, snorm_from_scores, Cohort, CohortSelection};

use crate::error::{Error, Result};

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `v / ‖v‖`; errors on a zero vector.
pub fn unit(v: &[f64]) -> Result<Vec<f64>> {
    let n = l2_norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::ZeroNorm("unit"));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// `⟨a, b⟩ / (‖a‖ ‖b‖)`, clamped to `[-1, 1]`.
pub fn cosine_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_score", format!("[{}]", a.len()), &[b.len()]));
    }
    let (na, nb) = (l2_norm(a), l2_norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm("cosine_score"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}
