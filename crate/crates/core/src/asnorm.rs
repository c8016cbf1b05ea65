//! Adaptive symmetric score normalization against a speaker-averaged cohort.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::embedding::{dot, l2_normalize, mean_vector, Embedding, EmbeddingStore, SpeakerLabel};
use crate::error::{Error, Result};
use crate::scoring::{ScoreColumn, ScoreTable};

pub const DEFAULT_TOP_K: usize = 400;
/// Standard deviations below this make normalization meaningless.
pub const MIN_STD: f64 = 1e-9;

/// One averaged embedding per cohort speaker.
#[derive(Debug, Clone)]
pub struct Cohort {
    speakers: Vec<SpeakerLabel>,
    embeddings: Vec<Vec<f64>>,
    /// Unit-length copies used for scoring.
    units: Vec<Vec<f64>>,
    top_k: usize,
}

impl Cohort {
    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn top_k(&self) -> usize {
        self.top_k
    }

    pub fn dim(&self) -> usize {
        self.embeddings.first().map_or(0, Vec::len)
    }

    /// Entries sorted by speaker id.
    pub fn entries(&self) -> impl Iterator<Item = (&SpeakerLabel, &[f64])> {
        self.speakers.iter().zip(self.embeddings.iter().map(Vec::as_slice))
    }

    /// Cosine of `unit` (already normalized) against every cohort entry.
    fn scores(&self, unit: &[f64]) -> Vec<f64> {
        self.units
            .iter()
            .map(|c| dot(unit, c).clamp(-1.0, 1.0))
            .collect()
    }
}

/// Averages each speaker's raw embeddings into one cohort entry.
pub fn build_cohort(labeled: &[(SpeakerLabel, Embedding)], top_k: usize) -> Result<Cohort> {
    if labeled.is_empty() {
        return Err(Error::EmptyInput);
    }
    if top_k == 0 {
        return Err(Error::InvalidSpec("top_k must be positive".into()));
    }
    let mut grouped: BTreeMap<&SpeakerLabel, Vec<Vec<f64>>> = BTreeMap::new();
    for (speaker, e) in labeled {
        grouped.entry(speaker).or_default().push(e.to_f64());
    }
    if top_k > grouped.len() {
        return Err(Error::TopKTooLarge {
            top_k,
            speakers: grouped.len(),
        });
    }
    let mut speakers = Vec::with_capacity(grouped.len());
    let mut embeddings = Vec::with_capacity(grouped.len());
    let mut units = Vec::with_capacity(grouped.len());
    for (speaker, vectors) in grouped {
        let mean = mean_vector(&vectors)?;
        units.push(l2_normalize(&mean)?);
        embeddings.push(mean);
        speakers.push(speaker.clone());
    }
    Ok(Cohort {
        speakers,
        embeddings,
        units,
        top_k,
    })
}

/// Top-K cohort statistics for one utterance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CohortStats {
    pub mean: f64,
    pub std: f64,
}

impl CohortStats {
    /// Mean of the top-K cohort scores; reused as a QMF quality feature.
    pub fn imposter_mean(&self) -> f64 {
        self.mean
    }
}

pub type StatsMap = HashMap<String, CohortStats>;

/// Mean and population standard deviation of the `top_k` highest cosine
/// scores of `e` against the cohort.
pub fn cohort_stats(e: &[f64], cohort: &Cohort) -> Result<CohortStats> {
    if e.len() != cohort.dim() {
        return Err(Error::DimensionMismatch {
            expected: cohort.dim(),
            found: e.len(),
        });
    }
    let unit = l2_normalize(e)?;
    let scores = cohort.scores(&unit);
    stats_of_top_k(scores, cohort.top_k)
}

/// Sorting descending fixes the summation order, so the result does not
/// depend on cohort entry order.
pub(crate) fn stats_of_top_k(mut scores: Vec<f64>, top_k: usize) -> Result<CohortStats> {
    scores.sort_unstable_by(|a, b| b.total_cmp(a));
    let top = &scores[..top_k.min(scores.len())];
    let n = top.len() as f64;
    let mean = top.iter().sum::<f64>() / n;
    let var = top.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < MIN_STD {
        return Err(Error::DegenerateStd(std));
    }
    Ok(CohortStats { mean, std })
}

/// Statistics for every embedding in the store, computed in parallel.
pub fn stats_for_store(store: &EmbeddingStore, cohort: &Cohort) -> Result<StatsMap> {
    let all: Vec<&Embedding> = store.iter().collect();
    let stats = all
        .par_iter()
        .map(|e| cohort_stats(&e.to_f64(), cohort).map(|s| (e.utterance_id.clone(), s)))
        .collect::<Result<Vec<_>>>()?;
    Ok(stats.into_iter().collect())
}

/// `0.5 * ((raw - m_e) / s_e + (raw - m_t) / s_t)`.
pub fn asnorm_score(raw: f64, enroll: CohortStats, test: CohortStats) -> Result<f64> {
    for s in [enroll.std, test.std] {
        if !(s >= MIN_STD) {
            return Err(Error::DegenerateStd(s));
        }
    }
    Ok(0.5 * ((raw - enroll.mean) / enroll.std + (raw - test.mean) / test.std))
}

pub fn lookup_stats(stats: &StatsMap, id: &str) -> Result<CohortStats> {
    stats.get(id).copied().ok_or_else(|| Error::MissingStats(id.to_string()))
}

/// Normalizes `scores` (aligned with `table.trials`) and stores the result as
/// the `asnorm` column.
pub fn apply_asnorm(table: &mut ScoreTable, scores: &[f64], stats: &StatsMap) -> Result<()> {
    let normed = table
        .trials
        .iter()
        .zip(scores)
        .map(|(t, &s)| {
            asnorm_score(
                s,
                lookup_stats(stats, &t.enroll_id)?,
                lookup_stats(stats, &t.test_id)?,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    table.set_column(ScoreColumn::AsNorm, normed)
}
