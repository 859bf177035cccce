use serde::{Deserialize, Serialize};

use super::{cosine_score, unit};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CohortSelection {
    /// The `n` highest cohort scores per side (capped at the cohort size).
    TopN(usize),
    /// Every cohort member.
    All,
}

/// Imposter cohort: one unit vector per training speaker.
#[derive(Clone, Debug, PartialEq)]
pub struct Cohort {
    pub vectors: Vec<Vec<f64>>,
    pub selection: CohortSelection,
}

/// Averages unit-normalized embeddings per speaker, then renormalizes each average.
pub fn build_cohort(speakers: &[Vec<Vec<f64>>], selection: CohortSelection) -> Result<Cohort> {
    if speakers.is_empty() {
        return Err(Error::DegenerateCohort("empty cohort".into()));
    }
    if selection == CohortSelection::TopN(0) {
        return Err(Error::InvalidArgument("top-N cohort size must be positive".into()));
    }
    let mut vectors = Vec::with_capacity(speakers.len());
    for (i, embs) in speakers.iter().enumerate() {
        let dim = embs.first().map(Vec::len).ok_or_else(|| Error::DegenerateCohort(format!("speaker {i} has no embeddings")))?;
        let mut mean = vec![0.0; dim];
        for e in embs {
            if e.len() != dim {
                return Err(Error::shape("build_cohort", format!("[{dim}]"), &[e.len()]));
            }
            for (m, x) in mean.iter_mut().zip(unit(e)?) {
                *m += x / embs.len() as f64;
            }
        }
        vectors.push(unit(&mean).map_err(|_| Error::DegenerateCohort(format!("speaker {i} averages to zero")))?);
    }
    Ok(Cohort { vectors, selection })
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    /// Cosine scores of `e` against every cohort vector.
    pub fn scores(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.vectors.iter().map(|c| cosine_score(e, c)).collect()
    }

    fn n(&self) -> usize {
        match self.selection {
            CohortSelection::TopN(n) => n.min(self.len()),
            CohortSelection::All => self.len(),
        }
    }
}

fn top_stats(scores: &[f64], n: usize) -> Result<(f64, f64)> {
    let mut s = scores.to_vec();
    s.sort_by(|a, b| b.total_cmp(a));
    s.truncate(n);
    if s.is_empty() {
        return Err(Error::DegenerateCohort("no cohort scores".into()));
    }
    let mean = s.iter().sum::<f64>() / s.len() as f64;
    let var = s.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / s.len() as f64;
    let std = var.sqrt();
    if std == 0.0 {
        return Err(Error::DegenerateCohort("cohort scores have zero spread".into()));
    }
    Ok((mean, std))
}

/// `½[(raw − μ_e)/σ_e + (raw − μ_t)/σ_t]` over the `n` largest scores of each side.
pub fn snorm_from_scores(raw: f64, enroll_scores: &[f64], test_scores: &[f64], n: usize) -> Result<f64> {
    let (me, se) = top_stats(enroll_scores, n)?;
    let (mt, st) = top_stats(test_scores, n)?;
    Ok(0.5 * ((raw - me) / se + (raw - mt) / st))
}

pub fn adaptive_snorm(raw: f64, e: &[f64], t: &[f64], cohort: &Cohort) -> Result<f64> {
    snorm_from_scores(raw, &cohort.scores(e)?, &cohort.scores(t)?, cohort.n())
}
