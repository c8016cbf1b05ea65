//! Deterministic synthetic corpus and a toy statistics-pooling embedder.
//!
//! Each utterance is a `T x F` matrix of pseudo-features:
//! `frame_t = speaker_latent + session_offset + sigma_u * noise_t`, where the
//! per-utterance noise level `sigma_u` is log-normally spread around
//! `noise_scale`. Every speaker and utterance draws from its own ChaCha
//! stream, so any subset of the corpus can be regenerated independently and
//! in parallel with identical results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::embedding::{Embedding, SpeakerLabel};
use crate::error::{Error, Result};

/// Frames per second (10 ms shift).
pub const FRAME_RATE: f64 = 100.0;
/// Pseudo filter-bank dimension.
pub const DEFAULT_FEATURE_DIM: usize = 80;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_speakers: usize,
    pub utts_per_speaker: usize,
    /// Feature dimension F of every frame.
    pub dim: usize,
    /// Inclusive range of utterance lengths in frames.
    pub frames_range: (usize, usize),
    pub speaker_scale: f64,
    pub noise_scale: f64,
    /// Log-normal sigma of the per-utterance noise level; 0 keeps it fixed.
    pub noise_spread: f64,
    /// Standard deviation of a per-utterance offset shared by all its frames.
    pub session_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_speakers: 50,
            utts_per_speaker: 10,
            dim: DEFAULT_FEATURE_DIM,
            frames_range: (200, 1500),
            speaker_scale: 1.0,
            noise_scale: 1.0,
            noise_spread: 0.0,
            session_scale: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(msg.to_string()));
        if self.n_speakers < 2 {
            return bad("n_speakers must be at least 2");
        }
        if self.utts_per_speaker < 1 {
            return bad("utts_per_speaker must be at least 1");
        }
        if self.dim < 2 {
            return bad("dim must be at least 2");
        }
        let (lo, hi) = self.frames_range;
        if lo < 1 || lo > hi {
            return bad("frames_range must satisfy 1 <= min <= max");
        }
        let scales = [
            self.speaker_scale,
            self.noise_scale,
            self.noise_spread,
            self.session_scale,
        ];
        if scales.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("scales must be finite and nonnegative");
        }
        Ok(())
    }

    pub fn speaker_id(&self, speaker: usize) -> String {
        format!("spk{speaker:04}")
    }

    pub fn utterance_id(&self, speaker: usize, utt: usize) -> String {
        format!("spk{speaker:04}-{utt:03}")
    }

    /// Inverse of [`utterance_id`](Self::utterance_id).
    pub fn utterance_index(&self, id: &str) -> Option<(usize, usize)> {
        let rest = id.strip_prefix("spk")?;
        let (s, u) = rest.split_once('-')?;
        let (s, u) = (s.parse().ok()?, u.parse().ok()?);
        (s < self.n_speakers && u < self.utts_per_speaker && self.utterance_id(s, u) == id)
            .then_some((s, u))
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }

    fn speaker_stream(speaker: usize) -> u64 {
        (speaker as u64) << 32
    }

    fn utterance_stream(speaker: usize, utt: usize) -> u64 {
        ((speaker as u64) << 32) | (utt as u64 + 1)
    }

    fn speaker_latent(&self, speaker: usize) -> Vec<f64> {
        let mut rng = self.rng(Self::speaker_stream(speaker));
        gaussian_vec(&mut rng, self.dim, self.speaker_scale)
    }

    fn draw_frames(&self, rng: &mut ChaCha8Rng) -> usize {
        let (lo, hi) = self.frames_range;
        rng.gen_range(lo..=hi)
    }

    /// Utterance length in frames without generating its features.
    pub fn utterance_frames(&self, speaker: usize, utt: usize) -> usize {
        self.draw_frames(&mut self.rng(Self::utterance_stream(speaker, utt)))
    }

    pub fn generate_utterance(&self, speaker: usize, utt: usize) -> FrameMatrix {
        let latent = self.speaker_latent(speaker);
        self.generate_with_latent(speaker, utt, &latent)
    }

    fn generate_with_latent(&self, speaker: usize, utt: usize, latent: &[f64]) -> FrameMatrix {
        let mut rng = self.rng(Self::utterance_stream(speaker, utt));
        let n_frames = self.draw_frames(&mut rng);
        let offset = gaussian_vec(&mut rng, self.dim, self.session_scale);
        let z: f64 = rng.sample(StandardNormal);
        let sigma = self.noise_scale * (self.noise_spread * z).exp();
        let center: Vec<f64> = latent.iter().zip(&offset).map(|(l, o)| l + o).collect();
        let mut frames = Vec::with_capacity(n_frames * self.dim);
        for _ in 0..n_frames {
            for c in &center {
                let n: f64 = rng.sample(StandardNormal);
                frames.push((c + sigma * n) as f32);
            }
        }
        FrameMatrix {
            utterance_id: self.utterance_id(speaker, utt),
            speaker: SpeakerLabel::new(self.speaker_id(speaker)).expect("non-empty id"),
            n_frames,
            n_dims: self.dim,
            frames,
        }
    }

    /// Utterance ids, speakers and durations in corpus order.
    pub fn metadata(&self) -> Vec<CorpusEntry> {
        (0..self.n_speakers)
            .flat_map(|s| (0..self.utts_per_speaker).map(move |u| (s, u)))
            .map(|(s, u)| CorpusEntry {
                utterance_id: self.utterance_id(s, u),
                speaker: SpeakerLabel::new(self.speaker_id(s)).expect("non-empty id"),
                duration_s: self.utterance_frames(s, u) as f64 / FRAME_RATE,
            })
            .collect()
    }

    /// One-line `key=value` description, stored as a corpus file header.
    pub fn to_header(&self) -> String {
        format!(
            "synth n_speakers={} utts_per_speaker={} dim={} min_frames={} max_frames={} \
             speaker_scale={} noise_scale={} noise_spread={} session_scale={} seed={}",
            self.n_speakers,
            self.utts_per_speaker,
            self.dim,
            self.frames_range.0,
            self.frames_range.1,
            self.speaker_scale,
            self.noise_scale,
            self.noise_spread,
            self.session_scale,
            self.seed
        )
    }

    /// Parses a header written by [`to_header`](Self::to_header).
    pub fn from_header(line: &str) -> Result<Self> {
        let rest = line
            .trim()
            .strip_prefix("synth ")
            .ok_or_else(|| Error::InvalidSpec("not a synth header".into()))?;
        let mut spec = SynthSpec::default();
        let mut seen = 0;
        for field in rest.split_whitespace() {
            let (key, value) = field
                .split_once('=')
                .ok_or_else(|| Error::InvalidSpec(format!("bad header field `{field}`")))?;
            let bad = || Error::InvalidSpec(format!("bad value in `{field}`"));
            match key {
                "n_speakers" => spec.n_speakers = value.parse().map_err(|_| bad())?,
                "utts_per_speaker" => spec.utts_per_speaker = value.parse().map_err(|_| bad())?,
                "dim" => spec.dim = value.parse().map_err(|_| bad())?,
                "min_frames" => spec.frames_range.0 = value.parse().map_err(|_| bad())?,
                "max_frames" => spec.frames_range.1 = value.parse().map_err(|_| bad())?,
                "speaker_scale" => spec.speaker_scale = value.parse().map_err(|_| bad())?,
                "noise_scale" => spec.noise_scale = value.parse().map_err(|_| bad())?,
                "noise_spread" => spec.noise_spread = value.parse().map_err(|_| bad())?,
                "session_scale" => spec.session_scale = value.parse().map_err(|_| bad())?,
                "seed" => spec.seed = value.parse().map_err(|_| bad())?,
                _ => return Err(Error::InvalidSpec(format!("unknown header key `{key}`"))),
            }
            seen += 1;
        }
        if seen != 10 {
            return Err(Error::InvalidSpec("incomplete synth header".into()));
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn gaussian_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Generates every utterance of the corpus, speaker-major.
pub fn generate_corpus(spec: &SynthSpec) -> Result<Vec<FrameMatrix>> {
    spec.validate()?;
    let latents: Vec<Vec<f64>> = (0..spec.n_speakers).map(|s| spec.speaker_latent(s)).collect();
    let pairs: Vec<(usize, usize)> = (0..spec.n_speakers)
        .flat_map(|s| (0..spec.utts_per_speaker).map(move |u| (s, u)))
        .collect();
    Ok(pairs
        .par_iter()
        .map(|&(s, u)| spec.generate_with_latent(s, u, &latents[s]))
        .collect())
}

/// One row of corpus metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusEntry {
    pub utterance_id: String,
    pub speaker: SpeakerLabel,
    pub duration_s: f64,
}

/// Row-major `n_frames x n_dims` pseudo-feature matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMatrix {
    pub utterance_id: String,
    pub speaker: SpeakerLabel,
    pub n_frames: usize,
    pub n_dims: usize,
    pub frames: Vec<f32>,
}

impl FrameMatrix {
    pub fn duration_s(&self) -> f64 {
        self.n_frames as f64 / FRAME_RATE
    }

    pub fn frame(&self, t: usize) -> &[f32] {
        &self.frames[t * self.n_dims..(t + 1) * self.n_dims]
    }

    /// The first `n_frames` frames, relabeled with the clip id.
    pub fn clip(&self, n_frames: usize) -> Result<FrameMatrix> {
        if n_frames == 0 || n_frames > self.n_frames {
            return Err(Error::RangeOutOfBounds {
                start: 0,
                end: n_frames,
                len: self.n_frames,
            });
        }
        Ok(FrameMatrix {
            utterance_id: clip_id(&self.utterance_id, n_frames),
            speaker: self.speaker.clone(),
            n_frames,
            n_dims: self.n_dims,
            frames: self.frames[..n_frames * self.n_dims].to_vec(),
        })
    }
}

/// Id of the first `n_frames` frames of `source`.
pub fn clip_id(source: &str, n_frames: usize) -> String {
    format!("{source}@{n_frames}")
}

/// Splits a clip id into its source id and frame count.
pub fn parse_clip_id(id: &str) -> Option<(&str, usize)> {
    let (source, frames) = id.rsplit_once('@')?;
    let frames = frames.parse().ok()?;
    Some((source, frames))
}

/// Fixed random projection from pooled statistics to the embedding space.
#[derive(Debug, Clone)]
pub struct Projection {
    in_dim: usize,
    out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    weights: Vec<f64>,
}

impl Projection {
    /// Projection for `feature_dim`-dimensional frames; pooled input is
    /// `2 * feature_dim` (means then standard deviations).
    pub fn new(seed: u64, feature_dim: usize, out_dim: usize) -> Result<Self> {
        if feature_dim == 0 || out_dim == 0 {
            return Err(Error::InvalidSpec("projection dims must be positive".into()));
        }
        let in_dim = 2 * feature_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (in_dim as f64).sqrt();
        let weights = gaussian_vec(&mut rng, in_dim * out_dim, scale);
        Ok(Self {
            in_dim,
            out_dim,
            weights,
        })
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    /// Embeds frames `[start, end)` of `m`. The result is not normalized.
    pub fn embed(&self, m: &FrameMatrix, range: (usize, usize)) -> Result<Embedding> {
        let stats = pooled_stats(m, range)?;
        if stats.len() != self.in_dim {
            return Err(Error::DimensionMismatch {
                expected: self.in_dim,
                found: stats.len(),
            });
        }
        let out: Vec<f64> = self
            .weights
            .chunks_exact(self.in_dim)
            .map(|row| row.iter().zip(&stats).map(|(w, x)| w * x).sum())
            .collect();
        let (start, end) = range;
        Ok(Embedding::from_f64(m.utterance_id.clone(), &out)?
            .with_duration((end - start) as f64 / FRAME_RATE))
    }
}

/// Per-dimension mean followed by per-dimension population standard
/// deviation over frames `[start, end)`.
pub fn pooled_stats(m: &FrameMatrix, (start, end): (usize, usize)) -> Result<Vec<f64>> {
    if start >= end || end > m.n_frames {
        return Err(Error::RangeOutOfBounds {
            start,
            end,
            len: m.n_frames,
        });
    }
    let n = (end - start) as f64;
    let d = m.n_dims;
    let mut mean = vec![0.0; d];
    for t in start..end {
        for (acc, &v) in mean.iter_mut().zip(m.frame(t)) {
            *acc += f64::from(v);
        }
    }
    mean.iter_mut().for_each(|v| *v /= n);
    let mut var = vec![0.0; d];
    for t in start..end {
        for ((acc, &v), mu) in var.iter_mut().zip(m.frame(t)).zip(&mean) {
            *acc += (f64::from(v) - mu).powi(2);
        }
    }
    mean.extend(var.into_iter().map(|v| (v / n).sqrt()));
    Ok(mean)
}

/// Builds the projection from its seed and embeds one frame range.
pub fn toy_embed(
    frames: &FrameMatrix,
    range: (usize, usize),
    projection_seed: u64,
    dim_out: usize,
) -> Result<Embedding> {
    Projection::new(projection_seed, frames.n_dims, dim_out)?.embed(frames, range)
}
