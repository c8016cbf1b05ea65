use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use cmf_backend::asnorm::{apply_asnorm, stats_for_store, StatsMap, DEFAULT_TOP_K};
use cmf_backend::embedding::EmbeddingStore;
use cmf_backend::io;
use cmf_backend::metrics::{fuse, report, FusionSpec};
use cmf_backend::pipeline::{
    cohort_from_store, corpus_ids, durations_for, embed_synthetic, qmf_features, trial_ids, train_qmf, EmbedConfig,
};
use cmf_backend::qmf::{apply_qmf, sample_plain_trials, sample_trials, FeatureTransform, QmfModel, SamplerSpec, TrainConfig};
use cmf_backend::scoring::{labels_of, score_trials, ScoreColumn, ScoreTable, Trial};
use cmf_backend::segmentation::{DEFAULT_MIN_SEGMENTS, DEFAULT_WINDOW, DEFAULT_WINDOW_MIN};
use cmf_backend::synth::{CorpusEntry, SynthSpec};

const FORMATS: &str = "\
File formats:
  corpus       utterance_id<TAB>speaker_id<TAB>duration_s; `# synth ...` header records the generator
  trials       `label enroll test` (label 1 = target, 0 = nontarget) or `enroll test`
  scores       `enroll test score`, 6 fractional digits
  embeddings   binary: `EMB1`, u32 dim, u32 count, then per record u16 id length, UTF-8 id,
               dim x f32 (little-endian); or TSV `id<TAB>v1<TAB>...<TAB>vD`
  cmf map      utterance_id<TAB>cmf
  stats        utterance_id<TAB>mean<TAB>std (top-K cohort statistics)
  qmf model    `QMF1`, feature count, `name weight mean std` per feature, `bias <value>`
  report       `EER(%) <v>` and `minDCF(p=<p>) <v>`, 4 fractional digits
Clip ids `utt@N` in trial lists refer to the first N frames (100 frames/s) of `utt`.";

#[derive(Parser)]
#[command(name = "cmf-backend", version, about = "Speaker-verification score backend", after_help = FORMATS)]
struct Cli {
    /// Worker threads; results do not depend on this.
    #[arg(long, global = true, env = "CMF_BACKEND_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus description.
    Synth(SynthArgs),
    /// Sample labeled trials from a corpus.
    SampleTrials(SampleArgs),
    /// Extract whole-utterance embeddings.
    Embed(EmbedArgs),
    /// Compute per-utterance consistency measure factors.
    Cmf(CmfArgs),
    /// Cosine-score trials, CMF-scaled when a CMF map is given.
    Score(ScoreArgs),
    /// Adaptive symmetric score normalization.
    Asnorm(AsnormArgs),
    /// Train the quality measure function.
    QmfTrain(QmfTrainArgs),
    /// Apply a trained quality measure function.
    QmfApply(QmfApplyArgs),
    /// Weighted fusion of score files.
    Fuse(FuseArgs),
    /// EER and minDCF of a score file.
    Eval(EvalArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 50)]
    speakers: usize,
    #[arg(long, default_value_t = 10)]
    utts: usize,
    #[arg(long, default_value_t = 80)]
    feature_dim: usize,
    #[arg(long, default_value_t = 200)]
    min_frames: usize,
    #[arg(long, default_value_t = 1500)]
    max_frames: usize,
    #[arg(long, default_value_t = 1.0)]
    speaker_scale: f64,
    #[arg(long, default_value_t = 2.5)]
    noise_scale: f64,
    #[arg(long, default_value_t = 0.5)]
    noise_spread: f64,
    #[arg(long, default_value_t = 0.3)]
    session_scale: f64,
    #[arg(long)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct SampleArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    seed: u64,
    /// Draw this many whole-utterance target trials instead of QMF conditions.
    #[arg(long, requires = "plain_nontargets")]
    plain_targets: Option<usize>,
    #[arg(long, requires = "plain_targets")]
    plain_nontargets: Option<usize>,
    #[arg(long, default_value_t = 10_000)]
    pairs_per_condition: usize,
    #[arg(long, default_value_t = 5.0)]
    long_threshold: f64,
    #[arg(long, default_value_t = 2.0)]
    clip_min: f64,
    #[arg(long, default_value_t = 5.0)]
    clip_max: f64,
    #[arg(long, default_value_t = 0.5)]
    target_ratio: f64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    /// Synthetic corpus written by `synth`.
    #[arg(long)]
    corpus: PathBuf,
    /// Also extract every id (including clips) referenced by this trial list.
    #[arg(long)]
    trials: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    dim_out: usize,
    #[arg(long)]
    projection_seed: u64,
}

#[derive(Clone, Copy, ValueEnum)]
enum StoreFormat {
    Bin,
    Tsv,
}

#[derive(Args)]
struct EmbedArgs {
    #[command(flatten)]
    extract: ExtractArgs,
    #[arg(long, value_enum, default_value_t = StoreFormat::Bin)]
    format: StoreFormat,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct CmfArgs {
    #[command(flatten)]
    extract: ExtractArgs,
    /// Segment length in frames (400 for evaluation sets, 200 for short audio).
    #[arg(long, default_value_t = DEFAULT_WINDOW)]
    window: usize,
    #[arg(long, default_value_t = DEFAULT_WINDOW_MIN)]
    min_window: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_SEGMENTS)]
    min_segments: usize,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    trials: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// CMF map written by `cmf`; writes CMF-scaled scores.
    #[arg(long)]
    cmf_map: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct AsnormArgs {
    #[arg(long)]
    trials: PathBuf,
    /// Scores to normalize (raw or CMF-scaled).
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Precomputed statistics; replaces the cohort options.
    #[arg(long, conflicts_with_all = ["cohort_embeddings", "cohort_corpus"])]
    stats_in: Option<PathBuf>,
    #[arg(long, requires = "cohort_corpus")]
    cohort_embeddings: Option<PathBuf>,
    /// Speaker labels of the cohort embeddings.
    #[arg(long, requires = "cohort_embeddings")]
    cohort_corpus: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    top_k: usize,
    /// Also write the per-utterance cohort statistics.
    #[arg(long)]
    stats_out: Option<PathBuf>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct QualityArgs {
    #[arg(long)]
    trials: PathBuf,
    /// AS-Norm (or fused) scores to calibrate.
    #[arg(long)]
    scores: PathBuf,
    #[arg(long)]
    embeddings: PathBuf,
    /// Corpus metadata, for durations.
    #[arg(long)]
    corpus: PathBuf,
    /// Cohort statistics written by `asnorm --stats-out`.
    #[arg(long)]
    stats: PathBuf,
}

#[derive(Args)]
struct QmfTrainArgs {
    #[command(flatten)]
    quality: QualityArgs,
    #[arg(long, default_value_t = 0.5)]
    learning_rate: f64,
    #[arg(long, default_value_t = 2000)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    /// Use raw durations and magnitudes instead of their logarithms.
    #[arg(long)]
    linear: bool,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct QmfApplyArgs {
    #[command(flatten)]
    quality: QualityArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct FuseArgs {
    /// Score files over identical trial lists.
    #[arg(long, required = true, num_args = 1..)]
    scores: Vec<PathBuf>,
    /// Comma-separated weights, one per score file (default equal).
    #[arg(long, value_delimiter = ',')]
    weights: Vec<f64>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    trials: PathBuf,
    #[arg(long)]
    scores: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [0.01, 0.05])]
    p_target: Vec<f64>,
    #[arg(short, long)]
    output: Option<PathBuf>,
}

fn require_inputs(paths: &[&Path]) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            bail!("input file {} does not exist", p.display());
        }
    }
    Ok(())
}

fn require_output(path: &Path) -> Result<()> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    if !parent.is_dir() {
        bail!("output directory {} does not exist", parent.display());
    }
    Ok(())
}

fn read_trials(path: &Path) -> Result<Vec<Trial>> {
    io::read_trials(io::open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn read_corpus(path: &Path) -> Result<(Vec<String>, Vec<CorpusEntry>)> {
    io::read_corpus(io::open(path)?).with_context(|| format!("reading {}", path.display()))
}

/// Reads a binary store, falling back to TSV when the magic does not match.
fn read_store(path: &Path) -> Result<EmbeddingStore> {
    match io::load_store(path) {
        Err(cmf_backend::Error::BadMagic) => {
            io::read_store_tsv(io::open(path)?).with_context(|| format!("reading {}", path.display()))
        }
        other => other.with_context(|| format!("reading {}", path.display())),
    }
}

/// Scores aligned with `trials`.
fn read_aligned_scores(path: &Path, trials: &[Trial]) -> Result<Vec<f64>> {
    let (scored, scores) = io::read_scores(io::open(path)?).with_context(|| format!("reading {}", path.display()))?;
    io::align_scores(trials, &scored).with_context(|| format!("{} does not match the trial list", path.display()))?;
    Ok(scores)
}

fn read_stats(path: &Path) -> Result<StatsMap> {
    io::read_stats(io::open(path)?).with_context(|| format!("reading {}", path.display()))
}

fn write_scores(path: &Path, trials: &[Trial], scores: &[f64]) -> Result<()> {
    io::create_with(path, |w| io::write_scores(w, trials, scores))
        .with_context(|| format!("writing {}", path.display()))
}

fn synth_spec(header: &[String]) -> Result<SynthSpec> {
    let line = header
        .iter()
        .find(|h| h.starts_with("synth "))
        .context("corpus has no `# synth` header; only synthetic corpora can be embedded")?;
    Ok(SynthSpec::from_header(line)?)
}

fn extraction_ids(args: &ExtractArgs, spec: &SynthSpec) -> Result<Vec<String>> {
    let mut ids = corpus_ids(spec);
    if let Some(path) = &args.trials {
        ids.extend(trial_ids(&read_trials(path)?));
    }
    Ok(ids)
}

fn mean_of(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

fn run(cli: Cli) -> Result<()> {
    let mut out = std::io::stdout().lock();
    match cli.command {
        Command::Synth(a) => {
            require_output(&a.output)?;
            let spec = SynthSpec {
                n_speakers: a.speakers,
                utts_per_speaker: a.utts,
                dim: a.feature_dim,
                frames_range: (a.min_frames, a.max_frames),
                speaker_scale: a.speaker_scale,
                noise_scale: a.noise_scale,
                noise_spread: a.noise_spread,
                session_scale: a.session_scale,
                seed: a.seed,
            };
            spec.validate()?;
            let meta = spec.metadata();
            io::create_with(&a.output, |w| io::write_corpus(w, &[spec.to_header()], &meta))?;
            let total: f64 = meta.iter().map(|m| m.duration_s).sum();
            writeln!(
                out,
                "wrote {} utterances of {} speakers ({:.1} h) to {}",
                meta.len(),
                spec.n_speakers,
                total / 3600.0,
                a.output.display()
            )?;
        }
        Command::SampleTrials(a) => {
            require_inputs(&[&a.corpus])?;
            require_output(&a.output)?;
            let (_, corpus) = read_corpus(&a.corpus)?;
            let trials = match (a.plain_targets, a.plain_nontargets) {
                (Some(t), Some(n)) => sample_plain_trials(&corpus, t, n, a.seed)?,
                _ => {
                    let spec = SamplerSpec {
                        long_threshold_s: a.long_threshold,
                        short_clip_range_s: (a.clip_min, a.clip_max),
                        pairs_per_condition: a.pairs_per_condition,
                        target_ratio: a.target_ratio,
                    };
                    let sampled = sample_trials(&corpus, &spec, a.seed)?;
                    for w in &sampled.warnings {
                        eprintln!("warning: {w}");
                    }
                    sampled.trials
                }
            };
            io::create_with(&a.output, |w| io::write_trials(w, &trials))?;
            let targets = labels_of(&trials)?.iter().filter(|&&t| t).count();
            writeln!(
                out,
                "wrote {} trials ({} target, {} nontarget) to {}",
                trials.len(),
                targets,
                trials.len() - targets,
                a.output.display()
            )?;
        }
        Command::Embed(a) => {
            let x = &a.extract;
            require_inputs(&[&x.corpus])?;
            if let Some(t) = &x.trials {
                require_inputs(&[t])?;
            }
            require_output(&a.output)?;
            let (header, _) = read_corpus(&x.corpus)?;
            let spec = synth_spec(&header)?;
            let config = EmbedConfig {
                projection_seed: x.projection_seed,
                dim_out: x.dim_out,
                ..EmbedConfig::default()
            };
            let embedded = embed_synthetic(&spec, &extraction_ids(x, &spec)?, config, false)?;
            io::create_with(&a.output, |w| match a.format {
                StoreFormat::Bin => io::write_store(w, &embedded.store),
                StoreFormat::Tsv => io::write_store_tsv(w, &embedded.store),
            })?;
            writeln!(
                out,
                "wrote {} embeddings of dimension {} to {}",
                embedded.store.len(),
                embedded.store.dim(),
                a.output.display()
            )?;
        }
        Command::Cmf(a) => {
            let x = &a.extract;
            require_inputs(&[&x.corpus])?;
            if let Some(t) = &x.trials {
                require_inputs(&[t])?;
            }
            require_output(&a.output)?;
            let (header, _) = read_corpus(&x.corpus)?;
            let spec = synth_spec(&header)?;
            let config = EmbedConfig {
                projection_seed: x.projection_seed,
                dim_out: x.dim_out,
                window: a.window,
                min_segments: a.min_segments,
                window_min: a.min_window,
            };
            let embedded = embed_synthetic(&spec, &extraction_ids(x, &spec)?, config, true)?;
            io::create_with(&a.output, |w| io::write_cmf_map(w, &embedded.cmfs))?;
            let values: Vec<f64> = embedded.cmfs.values().copied().collect();
            writeln!(
                out,
                "wrote {} CMFs (mean {:.4}) to {}",
                values.len(),
                mean_of(&values),
                a.output.display()
            )?;
        }
        Command::Score(a) => {
            require_inputs(&[&a.trials, &a.embeddings])?;
            if let Some(c) = &a.cmf_map {
                require_inputs(&[c])?;
            }
            require_output(&a.output)?;
            let trials = read_trials(&a.trials)?;
            let store = read_store(&a.embeddings)?;
            let cmfs = match &a.cmf_map {
                Some(p) => Some(io::read_cmf_map(io::open(p)?).with_context(|| format!("reading {}", p.display()))?),
                None => None,
            };
            let table = score_trials(&trials, &store, cmfs.as_ref())?;
            io::create_with(&a.output, |w| io::write_table(w, &table))?;
            let raw = table.column(ScoreColumn::Raw).expect("raw column");
            write!(out, "scored {} trials, mean raw {:.4}", table.len(), mean_of(raw))?;
            if let Some(c) = table.column(ScoreColumn::Cmf) {
                write!(out, ", mean cmf-scaled {:.4}", mean_of(c))?;
            }
            writeln!(out, " -> {}", a.output.display())?;
        }
        Command::Asnorm(a) => {
            require_inputs(&[&a.trials, &a.scores, &a.embeddings])?;
            let cohort_paths = match (&a.stats_in, &a.cohort_embeddings, &a.cohort_corpus) {
                (Some(s), _, _) => {
                    require_inputs(&[s])?;
                    None
                }
                (None, Some(e), Some(c)) => {
                    require_inputs(&[e, c])?;
                    Some((e, c))
                }
                _ => bail!("either --stats-in or --cohort-embeddings with --cohort-corpus is required"),
            };
            require_output(&a.output)?;
            if let Some(p) = &a.stats_out {
                require_output(p)?;
            }
            let trials = read_trials(&a.trials)?;
            let scores = read_aligned_scores(&a.scores, &trials)?;
            let stats = match cohort_paths {
                Some((emb, corpus)) => {
                    let cohort_store = read_store(emb)?;
                    let (_, cohort_corpus) = read_corpus(corpus)?;
                    let cohort = cohort_from_store(&cohort_store, &cohort_corpus, a.top_k)?;
                    let store = read_store(&a.embeddings)?;
                    let ids = trial_ids(&trials);
                    let needed = EmbeddingStore::from_embeddings(
                        store.dim(),
                        ids.iter().map(|id| store.require(id).cloned()).collect::<Result<Vec<_>, _>>()?,
                    )?;
                    writeln!(out, "cohort of {} speakers, top-{}", cohort.len(), cohort.top_k())?;
                    stats_for_store(&needed, &cohort)?
                }
                None => read_stats(a.stats_in.as_ref().expect("checked"))?,
            };
            let mut table = ScoreTable::new(trials);
            apply_asnorm(&mut table, &scores, &stats)?;
            io::create_with(&a.output, |w| io::write_table(w, &table))?;
            if let Some(p) = &a.stats_out {
                io::create_with(p, |w| io::write_stats(w, &stats))?;
            }
            let normed = table.column(ScoreColumn::AsNorm).expect("asnorm column");
            writeln!(
                out,
                "normalized {} trials, mean {:.4} -> {}",
                normed.len(),
                mean_of(normed),
                a.output.display()
            )?;
        }
        Command::QmfTrain(a) => {
            let q = &a.quality;
            require_inputs(&[&q.trials, &q.scores, &q.embeddings, &q.corpus, &q.stats])?;
            require_output(&a.output)?;
            let (trials, scores, store, stats, durations) = load_quality(q)?;
            let transform = if a.linear { FeatureTransform::Linear } else { FeatureTransform::Log };
            let config = TrainConfig {
                learning_rate: a.learning_rate,
                epochs: a.epochs,
                l2_lambda: a.l2,
            };
            let (model, report) = train_qmf(&trials, &scores, &store, &stats, &durations, transform, config)?;
            io::create_with(&a.output, |w| model.write(w))?;
            writeln!(
                out,
                "trained QMF on {} trials, loss {:.6} -> {:.6}, model {}",
                trials.len(),
                report.losses[0],
                report.losses.last().expect("initial loss"),
                a.output.display()
            )?;
        }
        Command::QmfApply(a) => {
            let q = &a.quality;
            require_inputs(&[&q.trials, &q.scores, &q.embeddings, &q.corpus, &q.stats, &a.model])?;
            require_output(&a.output)?;
            let model = QmfModel::read(io::open(&a.model)?).with_context(|| format!("reading {}", a.model.display()))?;
            let (trials, scores, store, stats, durations) = load_quality(q)?;
            let features = qmf_features(&trials, &scores, &store, &stats, &durations, model.transform)?;
            let calibrated: Vec<f64> = features.iter().map(|f| apply_qmf(&model, f)).collect();
            write_scores(&a.output, &trials, &calibrated)?;
            writeln!(out, "calibrated {} trials -> {}", calibrated.len(), a.output.display())?;
        }
        Command::Fuse(a) => {
            let inputs: Vec<&Path> = a.scores.iter().map(PathBuf::as_path).collect();
            require_inputs(&inputs)?;
            require_output(&a.output)?;
            let names: Vec<String> = a.scores.iter().map(|p| p.display().to_string()).collect();
            let spec = if a.weights.is_empty() {
                FusionSpec::equal(names)
            } else {
                FusionSpec {
                    system_names: names,
                    weights: a.weights.clone(),
                }
            };
            let tables = a
                .scores
                .iter()
                .map(|p| {
                    let (trials, scores) = io::read_scores(io::open(p)?).with_context(|| format!("reading {}", p.display()))?;
                    let mut t = ScoreTable::new(trials);
                    t.set_column(ScoreColumn::AsNorm, scores)?;
                    Ok(t)
                })
                .collect::<Result<Vec<_>>>()?;
            let fused = fuse(&tables, &spec)?;
            io::create_with(&a.output, |w| io::write_table(w, &fused))?;
            writeln!(out, "fused {} systems over {} trials -> {}", tables.len(), fused.len(), a.output.display())?;
        }
        Command::Eval(a) => {
            require_inputs(&[&a.trials, &a.scores])?;
            if let Some(p) = &a.output {
                require_output(p)?;
            }
            let trials = read_trials(&a.trials)?;
            let scores = read_aligned_scores(&a.scores, &trials)?;
            let labels = labels_of(&trials)?;
            let text = report(&scores, &labels, &a.p_target)?;
            if let Some(p) = &a.output {
                io::create_with(p, |w| Ok(w.write_all(text.as_bytes())?))?;
            }
            write!(out, "{text}")?;
        }
    }
    Ok(())
}

type QualityInputs = (Vec<Trial>, Vec<f64>, EmbeddingStore, StatsMap, HashMap<String, f64>);

fn load_quality(q: &QualityArgs) -> Result<QualityInputs> {
    let trials = read_trials(&q.trials)?;
    let scores = read_aligned_scores(&q.scores, &trials)?;
    let store = read_store(&q.embeddings)?;
    let stats = read_stats(&q.stats)?;
    let (_, corpus) = read_corpus(&q.corpus)?;
    let durations = durations_for(&trial_ids(&trials), &corpus)?;
    Ok((trials, scores, store, stats, durations))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
