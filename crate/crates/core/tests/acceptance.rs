//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Every reference value here is recomputed independently of the
//! library.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use cmf_backend::ablation::{run_ablation, AblationConfig};
use cmf_backend::embedding::{Embedding, EmbeddingStore};
use cmf_backend::io;
use cmf_backend::metrics::{eer, min_dcf, DcfParams};
use cmf_backend::qmf::{train_lr, LogisticObjective, TrainConfig};
use cmf_backend::segmentation::{cmf, consistency_vector, plan_segments, segment_score};

type Outcome = Result<String, String>;

fn check(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn within(elapsed: Duration, limit_s: f64) -> Result<(), String> {
    check(
        elapsed.as_secs_f64() < limit_s,
        format!("took {:.2} s, limit {limit_s} s", elapsed.as_secs_f64()),
    )
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cos(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (l2(a) * l2(b))
}

fn segment_score_identity() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cases = 2000;
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let dim = rng.gen_range(2..=256);
        let n = rng.gen_range(1..=64);
        let segments: Vec<Vec<f64>> = (0..n).map(|_| gaussian(&mut rng, dim)).collect();
        let y = gaussian(&mut rng, dim);
        // Mean of cosines, straight from the definition.
        let brute = segments.iter().map(|s| cos(s, &y)).sum::<f64>() / n as f64;
        let score = segment_score(&segments, &y).map_err(|e| e.to_string())?;
        let c = consistency_vector(&segments).map_err(|e| e.to_string())?;
        let closed = cmf(&segments).map_err(|e| e.to_string())? * cos(&y, &c);
        worst = worst.max((score - closed).abs()).max((score - brute).abs());
    }
    check(worst <= 1e-9, format!("max deviation {worst:e}"))?;
    within(start.elapsed(), 5.0)?;
    Ok(format!("{cases} cases, max deviation {worst:.1e}, {:.2} s", start.elapsed().as_secs_f64()))
}

fn cmf_cases() -> Outcome {
    let err = |e: cmf_backend::Error| e.to_string();
    let u = vec![0.6, -0.8, 0.0];
    let identical = cmf(&vec![u.clone(); 7]).map_err(err)?;
    check(identical == 1.0, format!("identical segments gave {identical}"))?;
    let orth = cmf(&[vec![1.0, 0.0], vec![0.0, 1.0]]).map_err(err)?;
    check((orth - 0.5f64.sqrt()).abs() <= 1e-12, format!("orthogonal pair gave {orth}"))?;
    let anti = cmf(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).map_err(err)?;
    check(anti.abs() <= 1e-12, format!("antipodal pair gave {anti}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..500 {
        let dim = rng.gen_range(2..=32);
        let n = rng.gen_range(1..=20);
        let segments: Vec<Vec<f64>> = (0..n).map(|_| gaussian(&mut rng, dim)).collect();
        let base = cmf(&segments).map_err(err)?;
        check((0.0..=1.0).contains(&base), format!("cmf {base} out of [0, 1]"))?;
        let scaled: Vec<Vec<f64>> = segments
            .iter()
            .map(|s| {
                let k = rng.gen_range(0.01..100.0);
                s.iter().map(|x| k * x).collect()
            })
            .collect();
        let mut shuffled = segments.clone();
        shuffled.reverse();
        shuffled.rotate_left(n / 2);
        let a = cmf(&scaled).map_err(err)?;
        let b = cmf(&shuffled).map_err(err)?;
        check(
            (a - base).abs() <= 1e-12 && (b - base).abs() <= 1e-12,
            format!("invariance broken: {base} vs scaled {a}, reordered {b}"),
        )?;
    }
    Ok("exact cases plus 500 scale/order invariance cases".into())
}

/// Independent window layout: starts 0, hop, ... and a right-anchored tail.
fn expected_ranges(total: usize, window: usize) -> Vec<(usize, usize)> {
    let hop = window / 2;
    let mut out = Vec::new();
    let mut start = 0;
    while start + window <= total {
        out.push((start, start + window));
        start += hop;
    }
    if out.last().map(|r| r.0) != Some(total - window) {
        out.push((total - window, total));
    }
    out
}

fn segmentation_plans() -> Outcome {
    type Case = ((usize, usize, usize, usize), &'static [(usize, usize)]);
    let examples: [Case; 3] = [
        ((1000, 400, 2, 100), &[(0, 400), (200, 600), (400, 800), (600, 1000)]),
        ((900, 400, 2, 100), &[(0, 400), (200, 600), (400, 800), (500, 900)]),
        ((300, 400, 2, 100), &[(0, 200), (100, 300)]),
    ];
    for ((t, w, m, wm), want) in examples {
        let plan = plan_segments(t, w, m, wm).map_err(|e| e.to_string())?;
        check(plan.ranges == want, format!("plan({t}, {w}, {m}, {wm}) = {:?}", plan.ranges))?;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cases = 5000;
    for _ in 0..cases {
        let window = 2 * rng.gen_range(1..=400);
        let window_min = 2 * rng.gen_range(1..=window / 2);
        let min_segments = rng.gen_range(1..=6);
        let total = rng.gen_range(window..=6000);
        let plan = plan_segments(total, window, min_segments, window_min).map_err(|e| e.to_string())?;
        let r = &plan.ranges;
        let covered = r.first().map(|x| x.0) == Some(0)
            && r.last().map(|x| x.1) == Some(total)
            && r.windows(2).all(|p| p[1].0 <= p[0].1 && p[0].0 < p[1].0)
            && r.iter().all(|&(a, b)| b - a == plan.window && b <= total);
        check(covered, format!("coverage broken for T={total}, window={window}: {r:?}"))?;
        let best = expected_ranges(total, window_min).len();
        check(
            r.len() >= min_segments.min(best),
            format!("T={total}, window={window}: {} segments, attainable {best}", r.len()),
        )?;
    }
    Ok(format!("3 examples exact, {cases} randomized plans cover [0, T)"))
}

struct Oracle {
    eer: f64,
    min_dcf: f64,
}

/// Sweeps every threshold midpoint (plus both infinities), counting rates
/// directly from the definitions.
fn brute_force(scores: &[f64], targets: &[bool], p: f64) -> Oracle {
    let mut distinct = scores.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    let mut thresholds = vec![f64::NEG_INFINITY];
    thresholds.extend(distinct.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    thresholds.push(f64::INFINITY);

    let n_tar = targets.iter().filter(|&&t| t).count() as f64;
    let n_non = targets.len() as f64 - n_tar;
    let rates: Vec<(f64, f64)> = thresholds
        .iter()
        .map(|&th| {
            let (mut miss, mut fa) = (0usize, 0usize);
            for (&s, &t) in scores.iter().zip(targets) {
                if t && s < th {
                    miss += 1;
                }
                if !t && s >= th {
                    fa += 1;
                }
            }
            (miss as f64 / n_tar, fa as f64 / n_non)
        })
        .collect();

    let norm = p.min(1.0 - p);
    let min_dcf = rates
        .iter()
        .map(|&(m, f)| (p * m + (1.0 - p) * f) / norm)
        .fold(f64::INFINITY, f64::min);

    // Crossing of the interpolated ROC with the diagonal.
    let mut eer = f64::NAN;
    for (i, &(m, f)) in rates.iter().enumerate() {
        if m >= f {
            eer = if i == 0 || m == f {
                m
            } else {
                let (m0, f0) = rates[i - 1];
                let t = (f0 - m0) / ((m - f) - (m0 - f0));
                m0 + t * (m - m0)
            };
            break;
        }
    }
    Oracle { eer, min_dcf }
}

fn random_instance(rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<bool>) {
    let n = rng.gen_range(2..=2000);
    // Coarse grids force ties; fine ones exercise the interpolation.
    let grid = [4.0, 64.0, 1e6][rng.gen_range(0..3)];
    let separation = rng.gen_range(0.0..3.0);
    let mut targets: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.3)).collect();
    targets[0] = true;
    targets[1] = false;
    let scores = targets
        .iter()
        .map(|&t| {
            let x: f64 = rng.sample::<f64, _>(StandardNormal) + if t { separation } else { 0.0 };
            (x * grid).round() / grid
        })
        .collect();
    (scores, targets)
}

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let (mut worst_eer, mut worst_dcf) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let (scores, targets) = random_instance(&mut rng);
        let p = [0.01, 0.05, 0.5][rng.gen_range(0..3)];
        let oracle = brute_force(&scores, &targets, p);
        let got_eer = eer(&scores, &targets).map_err(|e| e.to_string())?;
        let params = DcfParams::new(p).map_err(|e| e.to_string())?;
        let got_dcf = min_dcf(&scores, &targets, params).map_err(|e| e.to_string())?;
        worst_eer = worst_eer.max((got_eer - oracle.eer).abs());
        worst_dcf = worst_dcf.max((got_dcf - oracle.min_dcf).abs());
    }
    check(worst_eer <= 1e-9, format!("EER deviation {worst_eer:e}"))?;
    check(worst_dcf <= 1e-12, format!("minDCF deviation {worst_dcf:e}"))?;
    within(start.elapsed(), 30.0)?;
    Ok(format!(
        "200 instances, max |dEER| {worst_eer:.1e}, max |dminDCF| {worst_dcf:.1e}, {:.2} s",
        start.elapsed().as_secs_f64()
    ))
}

fn transform_invariance() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let params = DcfParams::new(0.05).map_err(|e| e.to_string())?;
    let measure = |s: &[f64], t: &[bool]| -> Result<(f64, f64), String> {
        Ok((
            eer(s, t).map_err(|e| e.to_string())?,
            min_dcf(s, t, params).map_err(|e| e.to_string())?,
        ))
    };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        // Dyadic grid inside (-1, 1), so both transforms are exact and order preserving.
        let n = rng.gen_range(2..=1500);
        let mut targets: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.4)).collect();
        targets[0] = true;
        targets[1] = false;
        let scores: Vec<f64> = targets
            .iter()
            .map(|&t| f64::from(rng.gen_range(-1000i32..1000) + if t { 300 } else { 0 }).clamp(-1023.0, 1023.0) / 1024.0)
            .collect();
        let base = measure(&scores, &targets)?;
        let affine: Vec<f64> = scores.iter().map(|s| 3.0 * s - 7.0).collect();
        let cubic: Vec<f64> = scores.iter().map(|s| s * s * s + s).collect();
        for variant in [affine, cubic] {
            let (e, d) = measure(&variant, &targets)?;
            worst = worst.max((e - base.0).abs()).max((d - base.1).abs());
        }
    }
    check(worst <= 1e-12, format!("max deviation {worst:e}"))?;
    Ok(format!("100 instances x affine/cubic, max deviation {worst:.1e}"))
}

fn lr_trainer() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let err = |e: cmf_backend::Error| e.to_string();

    // Gradient against central differences.
    let h = 1e-5;
    let mut worst_grad = 0.0f64;
    for _ in 0..50 {
        let d = rng.gen_range(1..=7);
        let n = rng.gen_range(5..=60);
        let rows: Vec<Vec<f64>> = (0..n).map(|_| gaussian(&mut rng, d)).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(0.5)).collect();
        let obj = LogisticObjective {
            rows: &rows,
            labels: &labels,
            l2: rng.gen_range(0.0..0.1),
        };
        let params = gaussian(&mut rng, d + 1);
        let analytic = obj.gradient(&params);
        let numeric: Vec<f64> = (0..=d)
            .map(|j| {
                let (mut up, mut down) = (params.clone(), params.clone());
                up[j] += h;
                down[j] -= h;
                (obj.loss(&up) - obj.loss(&down)) / (2.0 * h)
            })
            .collect();
        let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, b)| a - b).collect();
        let rel = l2(&diff) / l2(&analytic).max(l2(&numeric)).max(1e-12);
        worst_grad = worst_grad.max(rel);
    }
    check(worst_grad <= 1e-6, format!("gradient relative error {worst_grad:e}"))?;

    // Separable 2-D data with margin 0.5 around x + 2y = 0.5.
    let normal = [1.0 / 5f64.sqrt(), 2.0 / 5f64.sqrt()];
    let offset = 0.5 / 5f64.sqrt();
    let (mut rows, mut labels) = (Vec::new(), Vec::new());
    let (mut pos, mut neg) = (0, 0);
    while pos + neg < 1000 {
        let x = [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0)];
        let dist = normal[0] * x[0] + normal[1] * x[1] - offset;
        if dist >= 0.5 && pos < 500 {
            pos += 1;
            rows.push(x.to_vec());
            labels.push(true);
        } else if dist <= -0.5 && neg < 500 {
            neg += 1;
            rows.push(x.to_vec());
            labels.push(false);
        }
    }
    let config = TrainConfig {
        learning_rate: 0.5,
        epochs: 2000,
        l2_lambda: 1e-4,
    };
    let (model, _) = train_lr(&rows, &labels, config).map_err(err)?;
    let correct = rows
        .iter()
        .zip(&labels)
        .filter(|(r, &y)| (model.logit(r) > 0.0) == y)
        .count();
    let accuracy = correct as f64 / rows.len() as f64;
    check(accuracy >= 0.99, format!("separable accuracy {accuracy}"))?;

    // Constant features leave only the prior.
    let n = 1000;
    let prior_labels: Vec<bool> = (0..n).map(|i| i % 10 < 3).collect();
    let constant = vec![vec![2.5, -1.0]; n];
    let (prior, _) = train_lr(&constant, &prior_labels, config).map_err(err)?;
    let want = (0.3f64 / 0.7).ln();
    let bias_err = (prior.bias - want).abs();
    check(bias_err <= 1e-6, format!("prior-only bias {} vs {want}", prior.bias))?;

    // Small-step loss is nonincreasing; example order is irrelevant.
    let slow = TrainConfig {
        learning_rate: 0.01,
        ..config
    };
    let (_, report) = train_lr(&rows, &labels, slow).map_err(err)?;
    check(
        report.losses.windows(2).all(|w| w[1] <= w[0] + 1e-15),
        "loss increased at learning rate 0.01",
    )?;
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.reverse();
    order.rotate_left(137);
    let rows_p: Vec<Vec<f64>> = order.iter().map(|&i| rows[i].clone()).collect();
    let labels_p: Vec<bool> = order.iter().map(|&i| labels[i]).collect();
    let (permuted, _) = train_lr(&rows_p, &labels_p, config).map_err(err)?;
    let shift = model
        .weights
        .iter()
        .zip(&permuted.weights)
        .map(|(a, b)| (a - b).abs())
        .fold((model.bias - permuted.bias).abs(), f64::max);
    check(shift < 1e-9, format!("permutation moved the model by {shift:e}"))?;

    Ok(format!(
        "gradient rel err {worst_grad:.1e}, separable accuracy {:.1}%, prior bias err {bias_err:.1e}",
        100.0 * accuracy
    ))
}

fn ablation_ordering() -> Outcome {
    let start = Instant::now();
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    for seed in 1..=3u64 {
        let r = run_ablation(&AblationConfig::synthetic(seed)).map_err(|e| e.to_string())?;
        let base = 100.0 * r.raw.eer;
        lines.push(format!(
            "seed {seed}: EER {base:.2}%, minDCF raw {:.4} / AS-Norm {:.4} / CMF+AS-Norm+QMF {:.4}",
            r.raw.min_dcf, r.asnorm.min_dcf, r.cmf_asnorm_qmf.min_dcf
        ));
        if !(5.0..=15.0).contains(&base) {
            failures.push(format!("seed {seed}: baseline EER {base:.2}% outside [5, 15]"));
        }
        if r.raw.min_dcf < r.asnorm.min_dcf {
            failures.push(format!("seed {seed}: AS-Norm raised minDCF"));
        }
        if r.cmf_asnorm_qmf.min_dcf > r.asnorm.min_dcf {
            failures.push(format!("seed {seed}: CMF+AS-Norm+QMF above AS-Norm"));
        }
    }
    for l in &lines {
        println!("    {l}");
    }
    check(failures.is_empty(), failures.join("; "))?;
    within(start.elapsed(), 120.0)?;
    Ok(format!("directional ordering holds on 3 seeds, {:.1} s", start.elapsed().as_secs_f64()))
}

const BIN: &str = env!("CARGO_BIN_EXE_cmf-backend");

fn cli(dir: &Path, threads: usize, args: &[&str]) -> Result<(), String> {
    let out = Command::new(BIN)
        .current_dir(dir)
        .env("CMF_BACKEND_THREADS", threads.to_string())
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    check(
        out.status.success(),
        format!("{args:?} failed: {}", String::from_utf8_lossy(&out.stderr).trim()),
    )
}

/// Runs every stage once and returns all produced files.
fn pipeline_outputs(dir: &Path, threads: usize) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let steps: &[&[&str]] = &[
        &["synth", "--speakers", "12", "--utts", "5", "--seed", "3", "-o", "eval.tsv"],
        &["synth", "--speakers", "16", "--utts", "5", "--seed", "4", "-o", "train.tsv"],
        &["sample-trials", "--corpus", "eval.tsv", "--seed", "5", "--plain-targets", "60", "--plain-nontargets", "200", "-o", "trials.txt"],
        &["sample-trials", "--corpus", "train.tsv", "--seed", "6", "--pairs-per-condition", "60", "-o", "qtrials.txt"],
        &["embed", "--corpus", "eval.tsv", "--trials", "trials.txt", "--projection-seed", "9", "--dim-out", "32", "-o", "eval.emb"],
        &["embed", "--corpus", "train.tsv", "--projection-seed", "9", "--dim-out", "32", "-o", "cohort.emb"],
        &["embed", "--corpus", "train.tsv", "--trials", "qtrials.txt", "--projection-seed", "9", "--dim-out", "32", "--format", "tsv", "-o", "q.tsv"],
        &["cmf", "--corpus", "eval.tsv", "--trials", "trials.txt", "--projection-seed", "9", "--dim-out", "32", "-o", "eval.cmf"],
        &["cmf", "--corpus", "train.tsv", "--trials", "qtrials.txt", "--projection-seed", "9", "--dim-out", "32", "--window", "200", "-o", "q.cmf"],
        &["score", "--trials", "trials.txt", "--embeddings", "eval.emb", "--cmf-map", "eval.cmf", "-o", "s.txt"],
        &["score", "--trials", "qtrials.txt", "--embeddings", "q.tsv", "--cmf-map", "q.cmf", "-o", "qs.txt"],
        &["asnorm", "--trials", "trials.txt", "--scores", "s.txt", "--embeddings", "eval.emb", "--cohort-embeddings", "cohort.emb", "--cohort-corpus", "train.tsv", "--top-k", "8", "--stats-out", "st.tsv", "-o", "as.txt"],
        &["asnorm", "--trials", "qtrials.txt", "--scores", "qs.txt", "--embeddings", "q.tsv", "--cohort-embeddings", "cohort.emb", "--cohort-corpus", "train.tsv", "--top-k", "8", "--stats-out", "qst.tsv", "-o", "qas.txt"],
        &["qmf-train", "--trials", "qtrials.txt", "--scores", "qas.txt", "--embeddings", "q.tsv", "--corpus", "train.tsv", "--stats", "qst.tsv", "-o", "m.qmf"],
        &["qmf-apply", "--trials", "trials.txt", "--scores", "as.txt", "--embeddings", "eval.emb", "--corpus", "eval.tsv", "--stats", "st.tsv", "--model", "m.qmf", "-o", "q.txt"],
        &["fuse", "--scores", "as.txt", "q.txt", "--weights", "1,2", "-o", "f.txt"],
        &["eval", "--trials", "trials.txt", "--scores", "f.txt", "-o", "report.txt"],
    ];
    for step in steps {
        cli(dir, threads, step)?;
    }
    let mut files = BTreeMap::new();
    for entry in std::fs::read_dir(dir).map_err(|e| e.to_string())? {
        let path: PathBuf = entry.map_err(|e| e.to_string())?.path();
        let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
        files.insert(path.file_name().unwrap().to_string_lossy().into_owned(), bytes);
    }
    Ok(files)
}

fn cli_determinism() -> Outcome {
    let runs = [1usize, 1, 4]
        .iter()
        .map(|&threads| {
            let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
            pipeline_outputs(dir.path(), threads)
        })
        .collect::<Result<Vec<_>, String>>()?;
    let reference = &runs[0];
    for (i, run) in runs.iter().enumerate().skip(1) {
        check(
            run.keys().eq(reference.keys()),
            format!("run {i} produced a different file set"),
        )?;
        for (name, bytes) in run {
            check(&reference[name] == bytes, format!("{name} differs in run {i}"))?;
        }
    }
    Ok(format!(
        "{} output files byte-identical across repeated runs and 1 vs 4 threads",
        reference.len()
    ))
}

fn golden_records() -> Vec<(&'static str, [f32; 4])> {
    vec![
        ("spk0000-000", [1.0, -2.5, 0.125, 3.0e-8]),
        ("spk0000-001@250", [0.1, 0.2, -0.3, 65504.0]),
        ("spk0001-000", [-0.0, 1.0e30, -1.0e-30, 7.75]),
        ("ü-utt", [1e-45, f32::MIN, 0.5, -1.0]),
    ]
}

fn store_round_trip() -> Outcome {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/golden.emb");
    let bytes = std::fs::read(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    let store = io::read_store(&mut bytes.as_slice()).map_err(|e| e.to_string())?;
    let want = golden_records();
    check(store.dim() == 4 && store.len() == want.len(), "golden header mismatch")?;
    for (e, (id, values)) in store.iter().zip(&want) {
        check(e.utterance_id == *id, format!("id {} vs {id}", e.utterance_id))?;
        let same = e.values().iter().zip(values).all(|(a, b)| a.to_bits() == b.to_bits());
        check(same, format!("values of {id} differ"))?;
    }
    let mut rewritten = Vec::new();
    io::write_store(&mut rewritten, &store).map_err(|e| e.to_string())?;
    check(rewritten == bytes, "golden fixture does not re-serialize byte-identically")?;

    // Random stores over arbitrary finite bit patterns.
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    for case in 0..100 {
        let dim = rng.gen_range(1..=64);
        let mut store = EmbeddingStore::new(dim);
        for i in 0..rng.gen_range(0..20) {
            let values: Vec<f32> = (0..dim)
                .map(|_| loop {
                    let v = f32::from_bits(rng.gen());
                    if v.is_finite() {
                        break v;
                    }
                })
                .collect();
            let e = Embedding::new(format!("utt{case}-{i}"), values).map_err(|e| e.to_string())?;
            store.insert(e).map_err(|e| e.to_string())?;
        }
        let mut buf = Vec::new();
        io::write_store(&mut buf, &store).map_err(|e| e.to_string())?;
        let back = io::read_store(&mut buf.as_slice()).map_err(|e| e.to_string())?;
        let exact = back.len() == store.len()
            && back.iter().zip(store.iter()).all(|(a, b)| {
                a.utterance_id == b.utterance_id
                    && a.values().iter().zip(b.values()).all(|(x, y)| x.to_bits() == y.to_bits())
            });
        check(exact, format!("random store {case} did not round-trip"))?;
    }
    Ok("golden fixture and 100 random stores round-trip bit-exactly".into())
}

fn main() {
    type Criterion = (&'static str, fn() -> Outcome);
    let criteria: [Criterion; 9] = [
        ("segment score identity", segment_score_identity),
        ("CMF bounds and cases", cmf_cases),
        ("segmentation plans", segmentation_plans),
        ("metric oracle equivalence", metric_oracle),
        ("monotone-transform invariance", transform_invariance),
        ("LR trainer", lr_trainer),
        ("ablation ordering", ablation_ordering),
        ("CLI determinism", cli_determinism),
        ("embedding store round trip", store_round_trip),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {}: PASS {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {}: FAIL {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
