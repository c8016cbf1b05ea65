//! Trial scoring: whole-utterance cosine and CMF-scaled cosine.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rayon::prelude::*;

use crate::embedding::{cosine, Embedding, EmbeddingStore};
use crate::error::{Error, Result};

/// Per-utterance CMF values.
pub type CmfMap = HashMap<String, f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Target,
    Nontarget,
}

impl Label {
    pub fn is_target(self) -> bool {
        self == Label::Target
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Trial {
    pub enroll_id: String,
    pub test_id: String,
    pub label: Option<Label>,
}

impl Trial {
    pub fn new(enroll_id: impl Into<String>, test_id: impl Into<String>, label: Option<Label>) -> Self {
        Self {
            enroll_id: enroll_id.into(),
            test_id: test_id.into(),
            label,
        }
    }
}

/// Named score columns, in pipeline order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ScoreColumn {
    Raw,
    Cmf,
    AsNorm,
    Qmf,
    Fused,
}

impl fmt::Display for ScoreColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreColumn::Raw => "raw",
            ScoreColumn::Cmf => "cmf",
            ScoreColumn::AsNorm => "asnorm",
            ScoreColumn::Qmf => "qmf",
            ScoreColumn::Fused => "fused",
        })
    }
}

/// Trials plus any number of aligned score columns.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub trials: Vec<Trial>,
    columns: BTreeMap<ScoreColumn, Vec<f64>>,
}

impl ScoreTable {
    pub fn new(trials: Vec<Trial>) -> Self {
        Self {
            trials,
            columns: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn set_column(&mut self, column: ScoreColumn, scores: Vec<f64>) -> Result<()> {
        if scores.len() != self.trials.len() {
            return Err(Error::DimensionMismatch {
                expected: self.trials.len(),
                found: scores.len(),
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFinite(format!("{column} column")));
        }
        self.columns.insert(column, scores);
        Ok(())
    }

    pub fn column(&self, column: ScoreColumn) -> Option<&[f64]> {
        self.columns.get(&column).map(Vec::as_slice)
    }

    /// The latest pipeline stage present.
    pub fn last_column(&self) -> Option<(ScoreColumn, &[f64])> {
        self.columns.iter().next_back().map(|(c, v)| (*c, v.as_slice()))
    }

    pub fn columns(&self) -> impl Iterator<Item = (ScoreColumn, &[f64])> {
        self.columns.iter().map(|(c, v)| (*c, v.as_slice()))
    }

    /// Labels as booleans; errors if any trial is unlabeled.
    pub fn target_flags(&self) -> Result<Vec<bool>> {
        labels_of(&self.trials)
    }
}

pub fn labels_of(trials: &[Trial]) -> Result<Vec<bool>> {
    trials
        .iter()
        .enumerate()
        .map(|(i, t)| {
            t.label.map(Label::is_target).ok_or_else(|| Error::Parse {
                line: i + 1,
                msg: format!("trial {} {} is unlabeled", t.enroll_id, t.test_id),
            })
        })
        .collect()
}

pub fn raw_score(enroll: &Embedding, test: &Embedding) -> Result<f64> {
    cosine(&enroll.to_f64(), &test.to_f64())
}

/// `cmf_a * cmf_b * raw`.
pub fn cmf_calibrated_score(cmf_a: f64, cmf_b: f64, raw: f64) -> Result<f64> {
    for (name, v) in [("cmf_a", cmf_a), ("cmf_b", cmf_b)] {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange(format!("{name} = {v} not in [0, 1]")));
        }
    }
    if !(-1.0..=1.0).contains(&raw) {
        return Err(Error::OutOfRange(format!("raw = {raw} not in [-1, 1]")));
    }
    Ok(cmf_a * cmf_b * raw)
}

fn lookup_cmf(cmfs: &CmfMap, id: &str) -> Result<f64> {
    cmfs.get(id).copied().ok_or_else(|| Error::MissingCmf(id.to_string()))
}

/// Scores every trial. Always fills `raw`; fills `cmf` when a CMF map is
/// given. Lookups are validated in trial order before any scoring so the
/// reported error is deterministic.
pub fn score_trials(
    trials: &[Trial],
    embeddings: &EmbeddingStore,
    cmfs: Option<&CmfMap>,
) -> Result<ScoreTable> {
    for t in trials {
        embeddings.require(&t.enroll_id)?;
        embeddings.require(&t.test_id)?;
        if let Some(map) = cmfs {
            lookup_cmf(map, &t.enroll_id)?;
            lookup_cmf(map, &t.test_id)?;
        }
    }
    let raw: Vec<f64> = trials
        .par_iter()
        .map(|t| {
            raw_score(
                embeddings.require(&t.enroll_id)?,
                embeddings.require(&t.test_id)?,
            )
        })
        .collect::<Result<_>>()?;
    let mut table = ScoreTable::new(trials.to_vec());
    if let Some(map) = cmfs {
        let scaled = trials
            .iter()
            .zip(&raw)
            .map(|(t, &r)| cmf_calibrated_score(lookup_cmf(map, &t.enroll_id)?, lookup_cmf(map, &t.test_id)?, r))
            .collect::<Result<Vec<_>>>()?;
        table.set_column(ScoreColumn::Cmf, scaled)?;
    }
    table.set_column(ScoreColumn::Raw, raw)?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> EmbeddingStore {
        EmbeddingStore::from_embeddings(
            2,
            [
                Embedding::new("a", vec![1.0, 1.0]).unwrap(),
                Embedding::new("b", vec![1.0, 0.0]).unwrap(),
                Embedding::new("c", vec![0.0, 3.0]).unwrap(),
                Embedding::new("z", vec![0.0, 0.0]).unwrap(),
            ],
        )
        .unwrap()
    }

    #[test]
    fn raw_examples() {
        let s = store();
        let a = s.get("a").unwrap();
        let b = s.get("b").unwrap();
        let c = s.get("c").unwrap();
        assert!((raw_score(a, a).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(raw_score(b, c).unwrap(), 0.0);
        assert!((raw_score(a, b).unwrap() - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!(matches!(raw_score(a, s.get("z").unwrap()), Err(Error::ZeroVector)));
    }

    #[test]
    fn calibrated_examples() {
        assert!((cmf_calibrated_score(1.0, 1.0, 0.62).unwrap() - 0.62).abs() < 1e-15);
        assert!((cmf_calibrated_score(0.9, 0.8, 0.5).unwrap() - 0.36).abs() < 1e-15);
        assert_eq!(cmf_calibrated_score(0.0, 0.7, 0.9).unwrap(), 0.0);
        assert!(matches!(cmf_calibrated_score(1.1, 0.7, 0.9), Err(Error::OutOfRange(_))));
        assert!(matches!(cmf_calibrated_score(0.5, 0.7, -1.5), Err(Error::OutOfRange(_))));
    }

    #[test]
    fn score_trials_columns() {
        let s = store();
        let trials = vec![Trial::new("a", "a", None)];
        let t = score_trials(&trials, &s, None).unwrap();
        assert!((t.column(ScoreColumn::Raw).unwrap()[0] - 1.0).abs() < 1e-15);
        assert!(t.column(ScoreColumn::Cmf).is_none());

        let cmfs: CmfMap = [("a".to_string(), 1.0)].into_iter().collect();
        let t = score_trials(&trials, &s, Some(&cmfs)).unwrap();
        assert_eq!(t.column(ScoreColumn::Raw), t.column(ScoreColumn::Cmf));
        assert_eq!(t.last_column().unwrap().0, ScoreColumn::Cmf);
    }

    #[test]
    fn score_trials_missing_ids() {
        let s = store();
        let trials = vec![Trial::new("a", "b", None), Trial::new("q", "b", None)];
        assert!(matches!(score_trials(&trials, &s, None), Err(Error::MissingEmbedding(id)) if id == "q"));
        let cmfs: CmfMap = [("a".to_string(), 1.0)].into_iter().collect();
        assert!(matches!(
            score_trials(&trials[..1], &s, Some(&cmfs)),
            Err(Error::MissingCmf(id)) if id == "b"
        ));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn calibrated_is_monotone_and_shrinks(
                ca in 0.0f64..=1.0, cb in 0.0f64..=1.0,
                r1 in -1.0f64..=1.0, r2 in -1.0f64..=1.0,
            ) {
                let (lo, hi) = if r1 <= r2 { (r1, r2) } else { (r2, r1) };
                let s_lo = cmf_calibrated_score(ca, cb, lo).unwrap();
                let s_hi = cmf_calibrated_score(ca, cb, hi).unwrap();
                prop_assert!(s_lo <= s_hi);
                prop_assert!(s_lo.abs() <= lo.abs());
                prop_assert_eq!(s_lo, cmf_calibrated_score(cb, ca, lo).unwrap());
            }
        }
    }
}
