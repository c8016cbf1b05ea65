//! Multi-system score fusion and detection metrics (EER, minDCF).
//!
//! Tie convention at a threshold `t`: a target is missed when its score is
//! strictly below `t`, a nontarget is a false alarm when its score is `>= t`.

use crate::error::{Error, Result};
use crate::scoring::{ScoreColumn, ScoreTable};

/// Per-system fusion weights.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionSpec {
    pub system_names: Vec<String>,
    pub weights: Vec<f64>,
}

impl FusionSpec {
    pub fn equal(system_names: Vec<String>) -> Self {
        let weights = vec![1.0; system_names.len()];
        Self {
            system_names,
            weights,
        }
    }

    fn normalized(&self) -> Result<Vec<f64>> {
        if self.weights.len() != self.system_names.len() {
            return Err(Error::InvalidSpec(format!(
                "{} weights for {} systems",
                self.weights.len(),
                self.system_names.len()
            )));
        }
        if self.weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite("fusion weights".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if self.weights.iter().all(|&w| w == 0.0) {
            return Err(Error::AllZeroWeights);
        }
        if total == 0.0 {
            return Err(Error::InvalidSpec("fusion weights sum to zero".into()));
        }
        Ok(self.weights.iter().map(|w| w / total).collect())
    }
}

/// Weighted mean of the latest column of each table, written to `fused`.
pub fn fuse(tables: &[ScoreTable], spec: &FusionSpec) -> Result<ScoreTable> {
    let weights = spec.normalized()?;
    if tables.len() != weights.len() {
        return Err(Error::InvalidSpec(format!(
            "{} tables for {} weights",
            tables.len(),
            weights.len()
        )));
    }
    let first = tables.first().ok_or(Error::EmptyList)?;
    let mut columns = Vec::with_capacity(tables.len());
    for t in tables {
        if t.trials.len() != first.trials.len()
            || t.trials
                .iter()
                .zip(&first.trials)
                .any(|(a, b)| a.enroll_id != b.enroll_id || a.test_id != b.test_id)
        {
            return Err(Error::TrialMismatch);
        }
        let (_, scores) = t.last_column().ok_or(Error::EmptyList)?;
        columns.push(scores);
    }
    let fused = (0..first.len())
        .map(|i| {
            weights
                .iter()
                .zip(&columns)
                .filter(|(&w, _)| w != 0.0)
                .map(|(w, c)| w * c[i])
                .sum()
        })
        .collect();
    let mut out = ScoreTable::new(first.trials.clone());
    out.set_column(ScoreColumn::Fused, fused)?;
    Ok(out)
}

/// Detection cost parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DcfParams {
    pub c_miss: f64,
    pub c_fa: f64,
    pub p_target: f64,
}

impl DcfParams {
    pub fn new(p_target: f64) -> Result<Self> {
        Self {
            c_miss: 1.0,
            c_fa: 1.0,
            p_target,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        if !(self.c_miss > 0.0 && self.c_fa > 0.0) {
            return Err(Error::OutOfRange("DCF costs must be positive".into()));
        }
        if !(self.p_target > 0.0 && self.p_target < 1.0) {
            return Err(Error::OutOfRange(format!(
                "p_target {} not in (0, 1)",
                self.p_target
            )));
        }
        Ok(self)
    }

    /// Cost of the best trivial system (accept all or reject all).
    pub fn default_cost(&self) -> f64 {
        (self.c_miss * self.p_target).min(self.c_fa * (1.0 - self.p_target))
    }

    /// Normalized detection cost at one operating point.
    pub fn normalized_cost(&self, p_miss: f64, p_fa: f64) -> f64 {
        (self.c_miss * self.p_target * p_miss + self.c_fa * (1.0 - self.p_target) * p_fa)
            / self.default_cost()
    }
}

/// Miss and false-alarm rates at every distinct threshold, ascending, ending
/// with the reject-all point at `+inf`.
pub fn operating_points(scores: &[f64], targets: &[bool]) -> Result<Vec<(f64, f64)>> {
    if scores.len() != targets.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            found: targets.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let n_tar = targets.iter().filter(|&&t| t).count();
    let n_non = targets.len() - n_tar;
    if n_tar == 0 || n_non == 0 {
        return Err(Error::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let mut points = Vec::new();
    // Targets strictly below the current threshold / nontargets at or above it.
    let (mut missed, mut accepted_non) = (0usize, n_non);
    let mut i = 0;
    while i < order.len() {
        points.push((missed as f64 / n_tar as f64, accepted_non as f64 / n_non as f64));
        let value = scores[order[i]];
        while i < order.len() && scores[order[i]] == value {
            if targets[order[i]] {
                missed += 1;
            } else {
                accepted_non -= 1;
            }
            i += 1;
        }
    }
    points.push((1.0, 0.0));
    Ok(points)
}

/// Equal error rate, interpolated linearly between the two operating points
/// that bracket the miss/false-alarm crossing.
pub fn eer(scores: &[f64], targets: &[bool]) -> Result<f64> {
    Ok(eer_from_points(&operating_points(scores, targets)?))
}

pub(crate) fn eer_from_points(points: &[(f64, f64)]) -> f64 {
    // p_miss - p_fa is nondecreasing along the sweep; the last point has it at +1.
    let k = points
        .iter()
        .position(|&(m, f)| m >= f)
        .expect("reject-all point always crosses");
    let (m1, f1) = points[k];
    if k == 0 || m1 == f1 {
        return m1;
    }
    let (m0, f0) = points[k - 1];
    let d0 = m0 - f0;
    let d1 = m1 - f1;
    let t = -d0 / (d1 - d0);
    m0 + t * (m1 - m0)
}

/// Minimum normalized detection cost over all thresholds.
pub fn min_dcf(scores: &[f64], targets: &[bool], params: DcfParams) -> Result<f64> {
    let params = params.validated()?;
    let points = operating_points(scores, targets)?;
    Ok(points
        .iter()
        .map(|&(m, f)| params.normalized_cost(m, f))
        .fold(f64::INFINITY, f64::min))
}

/// One-line-per-metric text report.
pub fn report(scores: &[f64], targets: &[bool], p_targets: &[f64]) -> Result<String> {
    let mut out = format!("EER(%) {:.4}\n", 100.0 * eer(scores, targets)?);
    for &p in p_targets {
        let v = min_dcf(scores, targets, DcfParams::new(p)?)?;
        out.push_str(&format!("minDCF(p={p}) {v:.4}\n"));
    }
    Ok(out)
}
