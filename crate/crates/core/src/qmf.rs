//! Quality measure function (QMF) calibration.
//!
//! A logistic regression over the score being calibrated and three quality
//! measures of each side of a trial: speech duration, AS-Norm imposter mean
//! and raw embedding magnitude. Training trials are drawn in three duration
//! conditions (short-short, long-long, long-short) with a fixed
//! target/nontarget ratio.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::asnorm::{lookup_stats, StatsMap};
use crate::embedding::{magnitude, EmbeddingStore, SpeakerLabel, ZERO_NORM};
use crate::error::{Error, Result};
use crate::scoring::{Label, Trial};
use crate::synth::{clip_id, CorpusEntry, FRAME_RATE};

pub const FEATURE_COUNT: usize = 7;

/// How durations and magnitudes enter the feature vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureTransform {
    Log,
    Linear,
}

impl FeatureTransform {
    pub fn feature_names(self) -> [&'static str; FEATURE_COUNT] {
        match self {
            FeatureTransform::Log => [
                "score",
                "log_dur_enroll",
                "log_dur_test",
                "imposter_mean_enroll",
                "imposter_mean_test",
                "log_mag_enroll",
                "log_mag_test",
            ],
            FeatureTransform::Linear => [
                "score",
                "dur_enroll",
                "dur_test",
                "imposter_mean_enroll",
                "imposter_mean_test",
                "mag_enroll",
                "mag_test",
            ],
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            FeatureTransform::Log => v.ln(),
            FeatureTransform::Linear => v,
        }
    }
}

/// Quality feature vector of one trial, in model input order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QmfFeatures {
    pub score: f64,
    pub dur_enroll: f64,
    pub dur_test: f64,
    pub imposter_mean_enroll: f64,
    pub imposter_mean_test: f64,
    pub mag_enroll: f64,
    pub mag_test: f64,
}

impl QmfFeatures {
    pub fn to_array(&self) -> [f64; FEATURE_COUNT] {
        [
            self.score,
            self.dur_enroll,
            self.dur_test,
            self.imposter_mean_enroll,
            self.imposter_mean_test,
            self.mag_enroll,
            self.mag_test,
        ]
    }
}

/// Builds the feature vector of `trial` whose current score is `score`.
pub fn build_features(
    trial: &Trial,
    score: f64,
    embeddings: &EmbeddingStore,
    stats: &StatsMap,
    durations: &HashMap<String, f64>,
    transform: FeatureTransform,
) -> Result<QmfFeatures> {
    let side = |id: &str| -> Result<(f64, f64, f64)> {
        let e = embeddings.require(id)?;
        let dur = *durations
            .get(id)
            .ok_or_else(|| Error::MissingDuration(id.to_string()))?;
        if !(dur > 0.0) {
            return Err(Error::NonpositiveDuration(dur));
        }
        let mag = magnitude(e);
        if mag < ZERO_NORM {
            return Err(Error::ZeroVector);
        }
        let imposter = lookup_stats(stats, id)?.imposter_mean();
        Ok((transform.apply(dur), imposter, transform.apply(mag)))
    };
    let (dur_e, imp_e, mag_e) = side(&trial.enroll_id)?;
    let (dur_t, imp_t, mag_t) = side(&trial.test_id)?;
    Ok(QmfFeatures {
        score,
        dur_enroll: dur_e,
        dur_test: dur_t,
        imposter_mean_enroll: imp_e,
        imposter_mean_test: imp_t,
        mag_enroll: mag_e,
        mag_test: mag_t,
    })
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// L2-regularized mean logistic loss over already standardized rows.
///
/// Parameters are packed as `[w_1, ..., w_d, bias]`; the bias is not
/// regularized.
#[derive(Debug, Clone)]
pub struct LogisticObjective<'a> {
    pub rows: &'a [Vec<f64>],
    pub labels: &'a [bool],
    pub l2: f64,
}

impl LogisticObjective<'_> {
    fn logit(params: &[f64], row: &[f64]) -> f64 {
        let (w, b) = params.split_at(row.len());
        row.iter().zip(w).map(|(x, w)| x * w).sum::<f64>() + b[0]
    }

    pub fn loss(&self, params: &[f64]) -> f64 {
        let n = self.rows.len() as f64;
        let data: f64 = self
            .rows
            .iter()
            .zip(self.labels)
            .map(|(row, &y)| {
                let z = Self::logit(params, row);
                softplus(z) - if y { z } else { 0.0 }
            })
            .sum::<f64>()
            / n;
        let w = &params[..params.len() - 1];
        data + 0.5 * self.l2 * w.iter().map(|w| w * w).sum::<f64>()
    }

    pub fn gradient(&self, params: &[f64]) -> Vec<f64> {
        let n = self.rows.len() as f64;
        let d = params.len() - 1;
        let mut grad = vec![0.0; d + 1];
        for (row, &y) in self.rows.iter().zip(self.labels) {
            let r = sigmoid(Self::logit(params, row)) - if y { 1.0 } else { 0.0 };
            for (g, x) in grad.iter_mut().zip(row) {
                *g += r * x;
            }
            grad[d] += r;
        }
        for (g, w) in grad.iter_mut().zip(params).take(d) {
            *g = *g / n + self.l2 * w;
        }
        grad[d] /= n;
        grad
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2_lambda: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            epochs: 2000,
            l2_lambda: 1e-4,
        }
    }
}

/// A fitted logistic regression with its input standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub feature_means: Vec<f64>,
    pub feature_stds: Vec<f64>,
}

impl LogisticModel {
    pub fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.feature_means)
            .zip(&self.feature_stds)
            .map(|((x, m), s)| (x - m) / s)
            .collect()
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.standardize(x)
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| x * w)
            .sum::<f64>()
            + self.bias
    }

    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }
}

/// Loss after every epoch, with the initial loss first.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub losses: Vec<f64>,
}

/// Population mean and standard deviation per column; standard deviations
/// below 1e-9 are replaced by 1 so constant columns standardize to zero.
fn column_stats(rows: &[Vec<f64>], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len() as f64;
    let mut means = vec![0.0; d];
    for row in rows {
        for (m, x) in means.iter_mut().zip(row) {
            *m += x;
        }
    }
    means.iter_mut().for_each(|m| *m /= n);
    let mut stds = vec![0.0; d];
    for row in rows {
        for ((s, x), m) in stds.iter_mut().zip(row).zip(&means) {
            *s += (x - m).powi(2);
        }
    }
    for s in &mut stds {
        *s = (*s / n).sqrt();
        if *s < 1e-9 {
            *s = 1.0;
        }
    }
    (means, stds)
}

/// Full-batch gradient descent from zero weights.
pub fn train_lr(
    features: &[Vec<f64>],
    labels: &[bool],
    config: TrainConfig,
) -> Result<(LogisticModel, TrainReport)> {
    if features.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: features.len(),
            found: labels.len(),
        });
    }
    if features.len() < 2 || labels.iter().all(|&l| l) || labels.iter().all(|&l| !l) {
        return Err(Error::SingleClass);
    }
    let d = features[0].len();
    if let Some(bad) = features.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: bad.len(),
        });
    }
    if features.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("training features".into()));
    }
    if !(config.learning_rate > 0.0) || !(config.l2_lambda >= 0.0) {
        return Err(Error::InvalidSpec(
            "learning rate must be positive and l2 nonnegative".into(),
        ));
    }
    let (means, stds) = column_stats(features, d);
    let rows: Vec<Vec<f64>> = features
        .iter()
        .map(|r| {
            r.iter()
                .zip(&means)
                .zip(&stds)
                .map(|((x, m), s)| (x - m) / s)
                .collect()
        })
        .collect();
    let objective = LogisticObjective {
        rows: &rows,
        labels,
        l2: config.l2_lambda,
    };
    let mut params = vec![0.0; d + 1];
    let mut losses = Vec::with_capacity(config.epochs + 1);
    losses.push(objective.loss(&params));
    for epoch in 0..config.epochs {
        let grad = objective.gradient(&params);
        for (p, g) in params.iter_mut().zip(&grad) {
            *p -= config.learning_rate * g;
        }
        let loss = objective.loss(&params);
        if !loss.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(Error::NonFiniteLoss(epoch + 1));
        }
        losses.push(loss);
    }
    let bias = params.pop().expect("bias slot");
    Ok((
        LogisticModel {
            weights: params,
            bias,
            feature_means: means,
            feature_stds: stds,
        },
        TrainReport { losses },
    ))
}

/// A trained QMF: logistic regression over [`QmfFeatures`].
#[derive(Debug, Clone, PartialEq)]
pub struct QmfModel {
    pub transform: FeatureTransform,
    pub lr: LogisticModel,
}

impl QmfModel {
    pub fn train(
        features: &[QmfFeatures],
        labels: &[bool],
        transform: FeatureTransform,
        config: TrainConfig,
    ) -> Result<(Self, TrainReport)> {
        let rows: Vec<Vec<f64>> = features.iter().map(|f| f.to_array().to_vec()).collect();
        let (lr, report) = train_lr(&rows, labels, config)?;
        Ok((Self { transform, lr }, report))
    }

    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        writeln!(w, "QMF1")?;
        writeln!(w, "{FEATURE_COUNT}")?;
        for (i, name) in self.transform.feature_names().iter().enumerate() {
            writeln!(
                w,
                "{name} {:e} {:e} {:e}",
                self.lr.weights[i], self.lr.feature_means[i], self.lr.feature_stds[i]
            )?;
        }
        writeln!(w, "bias {:e}", self.lr.bias)?;
        Ok(())
    }

    pub fn read(r: impl BufRead) -> Result<Self> {
        let lines: Vec<String> = r.lines().collect::<std::io::Result<_>>()?;
        let mut lines = lines.iter().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let mut next = |what: &str| {
            lines.next().ok_or(Error::Parse {
                line: 0,
                msg: format!("missing {what}"),
            })
        };
        let (_, magic) = next("magic")?;
        if magic.trim() != "QMF1" {
            return Err(Error::BadMagic);
        }
        let (i, count) = next("feature count")?;
        let count: usize = count.trim().parse().map_err(|e| perr(i, e))?;
        if count != FEATURE_COUNT {
            return Err(perr(i, format!("expected {FEATURE_COUNT} features, found {count}")));
        }
        let mut names = Vec::with_capacity(count);
        let mut cols = [Vec::new(), Vec::new(), Vec::new()];
        for _ in 0..count {
            let (i, line) = next("feature line")?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [name, values @ ..] = fields.as_slice() else {
                return Err(perr(i, "empty feature line"));
            };
            if values.len() != 3 {
                return Err(perr(i, "expected `name weight mean std`"));
            }
            names.push(name.to_string());
            for (col, v) in cols.iter_mut().zip(values) {
                col.push(v.parse::<f64>().map_err(|e| perr(i, e))?);
            }
        }
        let (i, bias_line) = next("bias")?;
        let bias = match bias_line.split_whitespace().collect::<Vec<_>>().as_slice() {
            ["bias", v] => v.parse::<f64>().map_err(|e| perr(i, e))?,
            _ => return Err(perr(i, "expected `bias <value>`")),
        };
        let transform = [FeatureTransform::Log, FeatureTransform::Linear]
            .into_iter()
            .find(|t| t.feature_names().iter().eq(names.iter()))
            .ok_or_else(|| perr(2, format!("unknown feature names {names:?}")))?;
        let [weights, feature_means, feature_stds] = cols;
        if feature_stds.iter().any(|s| !(*s >= 1e-9)) {
            return Err(Error::DegenerateStd(feature_stds.iter().cloned().fold(f64::INFINITY, f64::min)));
        }
        if weights.iter().chain(&feature_means).chain([&bias]).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("QMF model".into()));
        }
        Ok(Self {
            transform,
            lr: LogisticModel {
                weights,
                bias,
                feature_means,
                feature_stds,
            },
        })
    }
}

fn perr(line: usize, msg: impl fmt::Display) -> Error {
    Error::Parse {
        line: line + 1,
        msg: msg.to_string(),
    }
}

/// Calibrated score: the logistic regression logit.
pub fn apply_qmf(model: &QmfModel, features: &QmfFeatures) -> f64 {
    model.lr.logit(&features.to_array())
}

/// Duration-bucketed trial sampler configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SamplerSpec {
    /// Utterances strictly longer than this are long audio.
    pub long_threshold_s: f64,
    /// Short audio is a clip of this many seconds, inclusive.
    pub short_clip_range_s: (f64, f64),
    pub pairs_per_condition: usize,
    pub target_ratio: f64,
}

impl Default for SamplerSpec {
    fn default() -> Self {
        Self {
            long_threshold_s: 5.0,
            short_clip_range_s: (2.0, 5.0),
            pairs_per_condition: 10_000,
            target_ratio: 0.5,
        }
    }
}

impl SamplerSpec {
    fn validate(&self) -> Result<()> {
        let (lo, hi) = self.short_clip_range_s;
        if !(0.0 < lo && lo < hi && hi <= self.long_threshold_s) {
            return Err(Error::InvalidSpec(
                "need 0 < short clip low < high <= long threshold".into(),
            ));
        }
        if !(self.target_ratio > 0.0 && self.target_ratio < 1.0) {
            return Err(Error::InvalidSpec("target ratio must be in (0, 1)".into()));
        }
        Ok(())
    }

    fn clip_frames(&self) -> (usize, usize) {
        let (lo, hi) = self.short_clip_range_s;
        (
            (lo * FRAME_RATE).ceil() as usize,
            (hi * FRAME_RATE).floor() as usize,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Condition {
    ShortShort,
    LongLong,
    LongShort,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::ShortShort, Condition::LongLong, Condition::LongShort];

    fn sides(self) -> (bool, bool) {
        // (enroll is long, test is long)
        match self {
            Condition::ShortShort => (false, false),
            Condition::LongLong => (true, true),
            Condition::LongShort => (true, false),
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Condition::ShortShort => "short-short",
            Condition::LongLong => "long-long",
            Condition::LongShort => "long-short",
        })
    }
}

/// Sampled QMF training trials. Short-side ids are clip ids
/// (`source@frames`, see [`clip_id`]).
#[derive(Debug, Clone, PartialEq)]
pub struct SampledTrials {
    pub trials: Vec<Trial>,
    pub conditions: Vec<Condition>,
    pub warnings: Vec<String>,
}

struct Pool<'a> {
    members: Vec<usize>,
    by_speaker: BTreeMap<&'a SpeakerLabel, Vec<usize>>,
}

impl<'a> Pool<'a> {
    fn new(corpus: &'a [CorpusEntry], keep: impl Fn(&CorpusEntry) -> bool) -> Self {
        let members: Vec<usize> = (0..corpus.len()).filter(|&i| keep(&corpus[i])).collect();
        let mut by_speaker: BTreeMap<&SpeakerLabel, Vec<usize>> = BTreeMap::new();
        for &i in &members {
            by_speaker.entry(&corpus[i].speaker).or_default().push(i);
        }
        Self {
            members,
            by_speaker,
        }
    }

    fn of(&self, speaker: &SpeakerLabel) -> &[usize] {
        self.by_speaker.get(speaker).map_or(&[], Vec::as_slice)
    }
}

/// Draws `want` distinct pairs with `accept`. Enumerates the candidates when
/// they are scarce, otherwise samples by rejection.
fn draw_pairs(
    rng: &mut ChaCha8Rng,
    enroll: &Pool,
    test: &Pool,
    corpus: &[CorpusEntry],
    target: bool,
    want: usize,
    available: usize,
) -> Vec<(usize, usize)> {
    let valid = |e: usize, t: usize| e != t && (corpus[e].speaker == corpus[t].speaker) == target;
    if want == 0 {
        return Vec::new();
    }
    if available <= 4 * want {
        let mut all: Vec<(usize, usize)> = enroll
            .members
            .iter()
            .flat_map(|&e| test.members.iter().map(move |&t| (e, t)))
            .filter(|&(e, t)| valid(e, t))
            .collect();
        all.shuffle(rng);
        all.truncate(want);
        return all;
    }
    let mut seen = HashSet::with_capacity(want);
    let mut out = Vec::with_capacity(want);
    while out.len() < want {
        let e = enroll.members[rng.gen_range(0..enroll.members.len())];
        let t = if target {
            let same = test.of(&corpus[e].speaker);
            if same.is_empty() {
                continue;
            }
            same[rng.gen_range(0..same.len())]
        } else {
            test.members[rng.gen_range(0..test.members.len())]
        };
        if valid(e, t) && seen.insert((e, t)) {
            out.push((e, t));
        }
    }
    out
}

fn count_pairs(enroll: &Pool, test: &Pool) -> (usize, usize) {
    let test_set: HashSet<usize> = test.members.iter().copied().collect();
    let mut targets = 0;
    let mut nontargets = 0;
    for (speaker, es) in &enroll.by_speaker {
        let ts = test.of(speaker).len();
        let overlap = es.iter().filter(|i| test_set.contains(i)).count();
        targets += es.len() * ts - overlap;
        nontargets += es.len() * (test.members.len() - ts);
    }
    (targets, nontargets)
}

/// Samples QMF training trials in the three duration conditions.
pub fn sample_trials(corpus: &[CorpusEntry], spec: &SamplerSpec, seed: u64) -> Result<SampledTrials> {
    spec.validate()?;
    let speakers: HashSet<&SpeakerLabel> = corpus.iter().map(|c| &c.speaker).collect();
    if speakers.len() < 2 {
        return Err(Error::InsufficientSpeakers(speakers.len()));
    }
    let (clip_lo, clip_hi) = spec.clip_frames();
    let long = Pool::new(corpus, |c| c.duration_s > spec.long_threshold_s);
    let short = Pool::new(corpus, |c| {
        (c.duration_s * FRAME_RATE + 1e-6).floor() as usize >= clip_lo
    });
    if long.members.is_empty() {
        return Err(Error::EmptyBucket("long"));
    }
    if short.members.is_empty() {
        return Err(Error::EmptyBucket("short"));
    }

    let want_targets = (spec.pairs_per_condition as f64 * spec.target_ratio).round() as usize;
    let want_non = spec.pairs_per_condition - want_targets;

    let mut sampled = SampledTrials {
        trials: Vec::new(),
        conditions: Vec::new(),
        warnings: Vec::new(),
    };
    for (stream, condition) in Condition::ALL.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream as u64);
        let (enroll_long, test_long) = condition.sides();
        let enroll = if enroll_long { &long } else { &short };
        let test = if test_long { &long } else { &short };

        let (avail_t, avail_n) = count_pairs(enroll, test);
        let mut scale: f64 = 1.0;
        if want_targets > avail_t {
            scale = scale.min(avail_t as f64 / want_targets as f64);
        }
        if want_non > avail_n {
            scale = scale.min(avail_n as f64 / want_non as f64);
        }
        let (n_t, n_n) = if scale < 1.0 {
            let n_t = (want_targets as f64 * scale).floor() as usize;
            let n_n = (want_non as f64 * scale).floor() as usize;
            sampled.warnings.push(format!(
                "{condition}: only {avail_t} target / {avail_n} nontarget pairs available; \
                 sampling {n_t} / {n_n}"
            ));
            (n_t, n_n)
        } else {
            (want_targets, want_non)
        };

        let mut pairs: Vec<((usize, usize), Label)> = Vec::with_capacity(n_t + n_n);
        pairs.extend(
            draw_pairs(&mut rng, enroll, test, corpus, true, n_t, avail_t)
                .into_iter()
                .map(|p| (p, Label::Target)),
        );
        pairs.extend(
            draw_pairs(&mut rng, enroll, test, corpus, false, n_n, avail_n)
                .into_iter()
                .map(|p| (p, Label::Nontarget)),
        );
        pairs.shuffle(&mut rng);

        let side_id = |idx: usize, is_long: bool, rng: &mut ChaCha8Rng| -> String {
            let entry = &corpus[idx];
            if is_long {
                return entry.utterance_id.clone();
            }
            let available = (entry.duration_s * FRAME_RATE + 1e-6).floor() as usize;
            let frames = rng.gen_range(clip_lo..=clip_hi.min(available));
            clip_id(&entry.utterance_id, frames)
        };
        for ((e, t), label) in pairs {
            let enroll_id = side_id(e, enroll_long, &mut rng);
            let test_id = side_id(t, test_long, &mut rng);
            sampled.trials.push(Trial::new(enroll_id, test_id, Some(label)));
            sampled.conditions.push(condition);
        }
    }
    Ok(sampled)
}

/// Uniformly drawn labeled trials between whole utterances, with no
/// duplicate pairs and no self-pairs.
pub fn sample_plain_trials(
    corpus: &[CorpusEntry],
    n_target: usize,
    n_nontarget: usize,
    seed: u64,
) -> Result<Vec<Trial>> {
    let speakers: HashSet<&SpeakerLabel> = corpus.iter().map(|c| &c.speaker).collect();
    if speakers.len() < 2 {
        return Err(Error::InsufficientSpeakers(speakers.len()));
    }
    let pool = Pool::new(corpus, |_| true);
    let (avail_t, avail_n) = count_pairs(&pool, &pool);
    if n_target > avail_t || n_nontarget > avail_n {
        return Err(Error::InvalidSpec(format!(
            "requested {n_target}/{n_nontarget} trials but only {avail_t}/{avail_n} exist"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs: Vec<((usize, usize), Label)> = draw_pairs(&mut rng, &pool, &pool, corpus, true, n_target, avail_t)
        .into_iter()
        .map(|p| (p, Label::Target))
        .chain(
            draw_pairs(&mut rng, &pool, &pool, corpus, false, n_nontarget, avail_n)
                .into_iter()
                .map(|p| (p, Label::Nontarget)),
        )
        .collect();
    pairs.shuffle(&mut rng);
    Ok(pairs
        .into_iter()
        .map(|((e, t), l)| {
            Trial::new(
                corpus[e].utterance_id.clone(),
                corpus[t].utterance_id.clone(),
                Some(l),
            )
        })
        .collect())
}
