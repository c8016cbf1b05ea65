//! End-to-end backend glue: synthetic utterances to embeddings and CMFs,
//! cohort construction, and the score -> CMF -> AS-Norm -> QMF chain.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;

use crate::asnorm::{apply_asnorm, build_cohort, Cohort, StatsMap};
use crate::embedding::{Embedding, EmbeddingStore, SpeakerLabel};
use crate::error::{Error, Result};
use crate::qmf::{apply_qmf, build_features, FeatureTransform, QmfFeatures, QmfModel, TrainConfig, TrainReport};
use crate::scoring::{labels_of, score_trials, CmfMap, ScoreColumn, ScoreTable, Trial};
use crate::segmentation::{plan_segments, SegmentSet, DEFAULT_MIN_SEGMENTS, DEFAULT_WINDOW, DEFAULT_WINDOW_MIN};
use crate::synth::{parse_clip_id, CorpusEntry, FrameMatrix, Projection, SynthSpec, FRAME_RATE};

/// Toy embedder and segmentation settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbedConfig {
    pub projection_seed: u64,
    pub dim_out: usize,
    pub window: usize,
    pub min_segments: usize,
    pub window_min: usize,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        Self {
            projection_seed: 1,
            dim_out: 128,
            window: DEFAULT_WINDOW,
            min_segments: DEFAULT_MIN_SEGMENTS,
            window_min: DEFAULT_WINDOW_MIN,
        }
    }
}

/// Embeds one utterance whole and, optionally, its segments.
pub struct UtteranceEmbedder {
    projection: Projection,
    config: EmbedConfig,
}

impl UtteranceEmbedder {
    pub fn new(feature_dim: usize, config: EmbedConfig) -> Result<Self> {
        Ok(Self {
            projection: Projection::new(config.projection_seed, feature_dim, config.dim_out)?,
            config,
        })
    }

    pub fn embed_full(&self, m: &FrameMatrix) -> Result<Embedding> {
        self.projection.embed(m, (0, m.n_frames))
    }

    pub fn segment_set(&self, m: &FrameMatrix) -> Result<SegmentSet> {
        let plan = plan_segments(
            m.n_frames,
            self.config.window,
            self.config.min_segments,
            self.config.window_min,
        )?;
        let segments = plan
            .ranges
            .iter()
            .map(|&r| self.projection.embed(m, r))
            .collect::<Result<Vec<_>>>()?;
        SegmentSet::new(m.utterance_id.clone(), segments)
    }
}

/// Whole-utterance embeddings, CMFs and durations for a set of ids.
#[derive(Debug, Clone)]
pub struct EmbeddedUtterances {
    pub store: EmbeddingStore,
    pub cmfs: CmfMap,
    pub durations: HashMap<String, f64>,
}

/// Regenerates and embeds the requested utterances of a synthetic corpus.
///
/// Ids are corpus utterance ids or clip ids (`source@frames`). Each source is
/// generated once, in parallel; output order follows first appearance in
/// `ids`.
pub fn embed_synthetic(
    spec: &SynthSpec,
    ids: &[String],
    config: EmbedConfig,
    with_cmf: bool,
) -> Result<EmbeddedUtterances> {
    spec.validate()?;
    let embedder = UtteranceEmbedder::new(spec.dim, config)?;

    let mut order: Vec<&str> = Vec::new();
    // (speaker, utterance) -> requested ids with their optional clip length.
    let mut by_source: BTreeMap<_, Vec<(&str, Option<usize>)>> = BTreeMap::new();
    let mut seen = std::collections::HashSet::new();
    for id in ids {
        if !seen.insert(id.as_str()) {
            continue;
        }
        order.push(id);
        let (source, clip) = match parse_clip_id(id) {
            Some((s, f)) => (s, Some(f)),
            None => (id.as_str(), None),
        };
        let key = spec
            .utterance_index(source)
            .ok_or_else(|| Error::MissingEmbedding(id.clone()))?;
        by_source.entry(key).or_default().push((id, clip));
    }

    let jobs: Vec<_> = by_source.into_iter().collect();
    let results = jobs
        .par_iter()
        .map(|((s, u), variants)| {
            let full = spec.generate_utterance(*s, *u);
            variants
                .iter()
                .map(|&(id, clip)| {
                    let m = match clip {
                        Some(frames) => full.clip(frames)?,
                        None => full.clone(),
                    };
                    let e = embedder.embed_full(&m)?;
                    let cmf = if with_cmf {
                        Some(embedder.segment_set(&m)?.cmf)
                    } else {
                        None
                    };
                    Ok((id.to_string(), e, cmf))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut found: HashMap<String, (Embedding, Option<f64>)> = results
        .into_iter()
        .flatten()
        .map(|(id, e, c)| (id, (e, c)))
        .collect();
    let mut store = EmbeddingStore::new(config.dim_out);
    let mut cmfs = CmfMap::new();
    let mut durations = HashMap::new();
    for id in order {
        let (e, cmf) = found.remove(id).expect("every id was embedded");
        durations.insert(id.to_string(), e.duration_s);
        if let Some(c) = cmf {
            cmfs.insert(id.to_string(), c);
        }
        store.insert(e)?;
    }
    Ok(EmbeddedUtterances {
        store,
        cmfs,
        durations,
    })
}

/// Every utterance id of the corpus, speaker-major.
pub fn corpus_ids(spec: &SynthSpec) -> Vec<String> {
    (0..spec.n_speakers)
        .flat_map(|s| (0..spec.utts_per_speaker).map(move |u| spec.utterance_id(s, u)))
        .collect()
}

/// Distinct ids referenced by a trial list, in first-appearance order.
pub fn trial_ids(trials: &[Trial]) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    trials
        .iter()
        .flat_map(|t| [&t.enroll_id, &t.test_id])
        .filter(|id| seen.insert(id.as_str()))
        .cloned()
        .collect()
}

/// Durations of corpus utterances and of clips of them.
pub fn durations_for(ids: &[String], corpus: &[CorpusEntry]) -> Result<HashMap<String, f64>> {
    let known: HashMap<&str, f64> = corpus
        .iter()
        .map(|c| (c.utterance_id.as_str(), c.duration_s))
        .collect();
    ids.iter()
        .map(|id| {
            let d = match known.get(id.as_str()) {
                Some(&d) => d,
                None => match parse_clip_id(id) {
                    Some((source, frames)) if known.contains_key(source) => frames as f64 / FRAME_RATE,
                    _ => return Err(Error::MissingDuration(id.clone())),
                },
            };
            Ok((id.clone(), d))
        })
        .collect()
}

/// Speaker-averaged cohort over the embeddings whose ids appear in `corpus`.
pub fn cohort_from_store(store: &EmbeddingStore, corpus: &[CorpusEntry], top_k: usize) -> Result<Cohort> {
    let speakers: HashMap<&str, &SpeakerLabel> = corpus
        .iter()
        .map(|c| (c.utterance_id.as_str(), &c.speaker))
        .collect();
    let labeled: Vec<(SpeakerLabel, Embedding)> = store
        .iter()
        .filter_map(|e| speakers.get(e.utterance_id.as_str()).map(|s| ((*s).clone(), e.clone())))
        .collect();
    build_cohort(&labeled, top_k)
}

/// Which score AS-Norm normalizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AsNormInput {
    /// The CMF-scaled score (falls back to raw when no CMFs are given).
    Cmf,
    Raw,
}

/// Scores of the AS-Norm input column of `table`.
fn asnorm_input(table: &ScoreTable, input: AsNormInput) -> Result<Vec<f64>> {
    let column = match input {
        AsNormInput::Cmf if table.column(ScoreColumn::Cmf).is_some() => ScoreColumn::Cmf,
        _ => ScoreColumn::Raw,
    };
    Ok(table.column(column).ok_or(Error::EmptyList)?.to_vec())
}

/// QMF feature rows for scored trials.
pub fn qmf_features(
    trials: &[Trial],
    scores: &[f64],
    store: &EmbeddingStore,
    stats: &StatsMap,
    durations: &HashMap<String, f64>,
    transform: FeatureTransform,
) -> Result<Vec<QmfFeatures>> {
    trials
        .iter()
        .zip(scores)
        .map(|(t, &s)| build_features(t, s, store, stats, durations, transform))
        .collect()
}

/// Trains a QMF on labeled, already normalized scores.
pub fn train_qmf(
    trials: &[Trial],
    scores: &[f64],
    store: &EmbeddingStore,
    stats: &StatsMap,
    durations: &HashMap<String, f64>,
    transform: FeatureTransform,
    config: TrainConfig,
) -> Result<(QmfModel, TrainReport)> {
    let features = qmf_features(trials, scores, store, stats, durations, transform)?;
    let labels = labels_of(trials)?;
    QmfModel::train(&features, &labels, transform, config)
}

/// Inputs for one full backend pass.
pub struct Backend<'a> {
    pub store: &'a EmbeddingStore,
    pub cmfs: Option<&'a CmfMap>,
    pub stats: Option<&'a StatsMap>,
    pub asnorm_input: AsNormInput,
    pub qmf: Option<(&'a QmfModel, &'a HashMap<String, f64>)>,
}

impl Backend<'_> {
    /// Scores `trials` through every configured stage. QMF requires AS-Norm.
    pub fn run(&self, trials: &[Trial]) -> Result<ScoreTable> {
        let mut table = score_trials(trials, self.store, self.cmfs)?;
        let Some(stats) = self.stats else {
            if self.qmf.is_some() {
                return Err(Error::InvalidSpec("QMF needs AS-Norm statistics".into()));
            }
            return Ok(table);
        };
        let input = asnorm_input(&table, self.asnorm_input)?;
        apply_asnorm(&mut table, &input, stats)?;
        if let Some((model, durations)) = self.qmf {
            let normed = table.column(ScoreColumn::AsNorm).expect("just set").to_vec();
            let features = qmf_features(trials, &normed, self.store, stats, durations, model.transform)?;
            let calibrated = features.iter().map(|f| apply_qmf(model, f)).collect();
            table.set_column(ScoreColumn::Qmf, calibrated)?;
        }
        Ok(table)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segmentation::cmf;

    fn spec() -> SynthSpec {
        SynthSpec {
            n_speakers: 3,
            utts_per_speaker: 2,
            dim: 8,
            frames_range: (150, 450),
            seed: 5,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn embeds_sources_and_clips() {
        let spec = spec();
        let ids = vec![
            "spk0001-001".to_string(),
            "spk0000-000@120".to_string(),
            "spk0000-000".to_string(),
            "spk0001-001".to_string(),
        ];
        let config = EmbedConfig {
            dim_out: 16,
            ..EmbedConfig::default()
        };
        let out = embed_synthetic(&spec, &ids, config, true).unwrap();
        let order: Vec<_> = out.store.iter().map(|e| e.utterance_id.as_str()).collect();
        assert_eq!(order, ["spk0001-001", "spk0000-000@120", "spk0000-000"]);
        assert_eq!(out.durations["spk0000-000@120"], 1.2);
        assert_eq!(out.cmfs.len(), 3);

        let m = spec.generate_utterance(0, 0).clip(120).unwrap();
        let direct = crate::synth::toy_embed(&m, (0, 120), config.projection_seed, 16).unwrap();
        assert_eq!(out.store.get("spk0000-000@120").unwrap().values(), direct.values());

        assert!(matches!(
            embed_synthetic(&spec, &["spk0009-000".to_string()], config, false),
            Err(Error::MissingEmbedding(_))
        ));
    }

    #[test]
    fn noiseless_corpus_has_unit_cmf() {
        let spec = SynthSpec {
            noise_scale: 0.0,
            ..spec()
        };
        let out = embed_synthetic(&spec, &corpus_ids(&spec), EmbedConfig::default(), true).unwrap();
        for c in out.cmfs.values() {
            assert!((c - 1.0).abs() < 1e-12, "cmf {c}");
        }
    }

    #[test]
    fn segment_set_uses_plan() {
        let spec = spec();
        let m = spec.generate_utterance(2, 1);
        let embedder = UtteranceEmbedder::new(spec.dim, EmbedConfig::default()).unwrap();
        let set = embedder.segment_set(&m).unwrap();
        let plan = plan_segments(m.n_frames, 400, 2, 100).unwrap();
        assert_eq!(set.len(), plan.len());
        let vectors: Vec<Vec<f64>> = set.segment_embeddings.iter().map(Embedding::to_f64).collect();
        assert!((cmf(&vectors).unwrap() - set.cmf).abs() < 1e-15);
    }

    #[test]
    fn durations_resolve_clips() {
        let corpus = spec().metadata();
        let ids = vec![corpus[0].utterance_id.clone(), format!("{}@250", corpus[1].utterance_id)];
        let d = durations_for(&ids, &corpus).unwrap();
        assert_eq!(d[&ids[1]], 2.5);
        assert!(durations_for(&["nope@3".to_string()], &corpus).is_err());
    }
}
