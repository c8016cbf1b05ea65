//! Stage-wise backend ablation on synthetic data.
//!
//! A training corpus supplies the AS-Norm cohort and the QMF training
//! trials; a disjoint evaluation corpus supplies the scored trials. Each
//! backend stage is evaluated on the same evaluation trials.

use std::fmt;

use crate::asnorm::{stats_for_store, StatsMap};
use crate::error::Result;
use crate::metrics::{eer, min_dcf, DcfParams};
use crate::pipeline::{cohort_from_store, corpus_ids, embed_synthetic, trial_ids, train_qmf, AsNormInput, Backend, EmbedConfig};
use crate::qmf::{sample_plain_trials, sample_trials, FeatureTransform, SamplerSpec, TrainConfig};
use crate::scoring::{labels_of, ScoreColumn};
use crate::synth::SynthSpec;

#[derive(Debug, Clone)]
pub struct AblationConfig {
    pub eval: SynthSpec,
    pub train: SynthSpec,
    pub embed: EmbedConfig,
    pub top_k: usize,
    pub sampler: SamplerSpec,
    pub sampler_seed: u64,
    pub eval_targets: usize,
    pub eval_nontargets: usize,
    pub eval_seed: u64,
    pub transform: FeatureTransform,
    pub train_config: TrainConfig,
    pub p_target: f64,
}

impl AblationConfig {
    /// 200 speakers x 20 utterances of 2-15 s for evaluation, seeded by `seed`.
    pub fn synthetic(seed: u64) -> Self {
        let base = SynthSpec {
            n_speakers: 200,
            utts_per_speaker: 20,
            dim: 80,
            frames_range: (200, 1500),
            speaker_scale: 1.0,
            noise_scale: 2.5,
            noise_spread: 0.5,
            session_scale: 0.3,
            seed,
        };
        Self {
            train: SynthSpec {
                n_speakers: 300,
                utts_per_speaker: 8,
                seed: seed.wrapping_add(0x5EED_0000),
                ..base.clone()
            },
            eval: base,
            embed: EmbedConfig::default(),
            top_k: 100,
            sampler: SamplerSpec {
                pairs_per_condition: 2000,
                ..SamplerSpec::default()
            },
            sampler_seed: seed.wrapping_add(1),
            eval_targets: 3000,
            eval_nontargets: 20000,
            eval_seed: seed.wrapping_add(2),
            transform: FeatureTransform::Log,
            train_config: TrainConfig::default(),
            p_target: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageResult {
    pub eer: f64,
    pub min_dcf: f64,
}

/// Metrics per backend stage on the evaluation trials.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationResult {
    pub raw: StageResult,
    pub asnorm: StageResult,
    pub asnorm_qmf: StageResult,
    pub cmf: StageResult,
    pub cmf_asnorm: StageResult,
    pub cmf_asnorm_qmf: StageResult,
}

impl fmt::Display for AblationResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = [
            ("baseline", self.raw),
            ("+ AS-Norm", self.asnorm),
            ("++ QMF", self.asnorm_qmf),
            ("+ CMF", self.cmf),
            ("++ AS-Norm", self.cmf_asnorm),
            ("+++ QMF", self.cmf_asnorm_qmf),
        ];
        for (name, r) in rows {
            writeln!(f, "{name:<12} EER(%) {:.4}  minDCF {:.4}", 100.0 * r.eer, r.min_dcf)?;
        }
        Ok(())
    }
}

pub fn run_ablation(config: &AblationConfig) -> Result<AblationResult> {
    // Cohort from whole training utterances.
    let train_meta = config.train.metadata();
    let train_full = embed_synthetic(&config.train, &corpus_ids(&config.train), config.embed, false)?;
    let cohort = cohort_from_store(&train_full.store, &train_meta, config.top_k)?;

    // QMF training trials, with short clips realized by truncation.
    let sampled = sample_trials(&train_meta, &config.sampler, config.sampler_seed)?;
    let qmf_ids = trial_ids(&sampled.trials);
    let qmf_data = embed_synthetic(&config.train, &qmf_ids, config.embed, true)?;
    let qmf_stats = stats_for_store(&qmf_data.store, &cohort)?;

    let train_model = |input: AsNormInput| {
        let backend = Backend {
            store: &qmf_data.store,
            cmfs: (input == AsNormInput::Cmf).then_some(&qmf_data.cmfs),
            stats: Some(&qmf_stats),
            asnorm_input: input,
            qmf: None,
        };
        let table = backend.run(&sampled.trials)?;
        let normed = table.column(ScoreColumn::AsNorm).expect("asnorm column");
        train_qmf(
            &sampled.trials,
            normed,
            &qmf_data.store,
            &qmf_stats,
            &qmf_data.durations,
            config.transform,
            config.train_config,
        )
        .map(|(m, _)| m)
    };
    let model_plain = train_model(AsNormInput::Raw)?;
    let model_cmf = train_model(AsNormInput::Cmf)?;

    // Evaluation.
    let eval_meta = config.eval.metadata();
    let trials = sample_plain_trials(&eval_meta, config.eval_targets, config.eval_nontargets, config.eval_seed)?;
    let labels = labels_of(&trials)?;
    let eval = embed_synthetic(&config.eval, &trial_ids(&trials), config.embed, true)?;
    let eval_stats: StatsMap = stats_for_store(&eval.store, &cohort)?;
    let params = DcfParams::new(config.p_target)?;
    let measure = |scores: &[f64]| -> Result<StageResult> {
        Ok(StageResult {
            eer: eer(scores, &labels)?,
            min_dcf: min_dcf(scores, &labels, params)?,
        })
    };

    let plain = Backend {
        store: &eval.store,
        cmfs: None,
        stats: Some(&eval_stats),
        asnorm_input: AsNormInput::Raw,
        qmf: Some((&model_plain, &eval.durations)),
    }
    .run(&trials)?;
    let with_cmf = Backend {
        store: &eval.store,
        cmfs: Some(&eval.cmfs),
        stats: Some(&eval_stats),
        asnorm_input: AsNormInput::Cmf,
        qmf: Some((&model_cmf, &eval.durations)),
    }
    .run(&trials)?;
    let col = |t: &crate::scoring::ScoreTable, c| t.column(c).expect("column present").to_vec();

    Ok(AblationResult {
        raw: measure(&col(&plain, ScoreColumn::Raw))?,
        asnorm: measure(&col(&plain, ScoreColumn::AsNorm))?,
        asnorm_qmf: measure(&col(&plain, ScoreColumn::Qmf))?,
        cmf: measure(&col(&with_cmf, ScoreColumn::Cmf))?,
        cmf_asnorm: measure(&col(&with_cmf, ScoreColumn::AsNorm))?,
        cmf_asnorm_qmf: measure(&col(&with_cmf, ScoreColumn::Qmf))?,
    })
}
