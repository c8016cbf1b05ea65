//! File formats.
//!
//! | file            | layout                                                        |
//! |-----------------|---------------------------------------------------------------|
//! | embedding store | `EMB1`, u32 dim, u32 count, then per record u16 id length, UTF-8 id, dim x f32 (all little-endian) |
//! | embedding TSV   | `id\tv1\t...\tvD`                                             |
//! | trial list      | `label enroll test` (label 0/1) or `enroll test`              |
//! | score file      | `enroll test score`, score with 6 fractional digits           |
//! | corpus metadata | `utterance_id\tspeaker_id\tduration_s`, `#` lines are comments |
//! | CMF map         | `utterance_id\tcmf`                                           |
//! | stats cache     | `utterance_id\tmean\tstd`                                     |

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::asnorm::{CohortStats, StatsMap};
use crate::embedding::{Embedding, EmbeddingStore, SpeakerLabel};
use crate::error::{Error, Result};
use crate::scoring::{CmfMap, Label, ScoreTable, Trial};
use crate::synth::CorpusEntry;

pub const STORE_MAGIC: &[u8; 4] = b"EMB1";

fn read_exact_or_truncated(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::TruncatedFile,
        _ => Error::Io(e),
    })
}

pub fn write_store(w: &mut impl Write, store: &EmbeddingStore) -> Result<()> {
    let count = u32::try_from(store.len())
        .map_err(|_| Error::OutOfRange("too many embeddings".into()))?;
    let dim = u32::try_from(store.dim()).map_err(|_| Error::OutOfRange("dim too large".into()))?;
    w.write_all(STORE_MAGIC)?;
    w.write_all(&dim.to_le_bytes())?;
    w.write_all(&count.to_le_bytes())?;
    for e in store.iter() {
        let id = e.utterance_id.as_bytes();
        let len = u16::try_from(id.len())
            .map_err(|_| Error::OutOfRange(format!("id `{}` too long", e.utterance_id)))?;
        w.write_all(&len.to_le_bytes())?;
        w.write_all(id)?;
        for v in e.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_store(r: &mut impl Read) -> Result<EmbeddingStore> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(r, &mut magic)?;
    if &magic != STORE_MAGIC {
        return Err(Error::BadMagic);
    }
    let mut word = [0u8; 4];
    read_exact_or_truncated(r, &mut word)?;
    let dim = u32::from_le_bytes(word) as usize;
    read_exact_or_truncated(r, &mut word)?;
    let count = u32::from_le_bytes(word) as usize;
    if dim == 0 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            found: 0,
        });
    }
    let mut store = EmbeddingStore::new(dim);
    let mut values = vec![0u8; 4 * dim];
    for _ in 0..count {
        let mut len = [0u8; 2];
        read_exact_or_truncated(r, &mut len)?;
        let mut id = vec![0u8; u16::from_le_bytes(len) as usize];
        read_exact_or_truncated(r, &mut id)?;
        let id = String::from_utf8(id).map_err(|_| Error::Parse {
            line: store.len() + 1,
            msg: "id is not UTF-8".into(),
        })?;
        read_exact_or_truncated(r, &mut values)?;
        let vector = values
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        store.insert(Embedding::new(id, vector)?)?;
    }
    Ok(store)
}

pub fn save_store(path: &Path, store: &EmbeddingStore) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_store(&mut w, store)?;
    w.flush()?;
    Ok(())
}

pub fn load_store(path: &Path) -> Result<EmbeddingStore> {
    read_store(&mut BufReader::new(File::open(path)?))
}

pub fn write_store_tsv(w: &mut impl Write, store: &EmbeddingStore) -> Result<()> {
    for e in store.iter() {
        write!(w, "{}", e.utterance_id)?;
        for v in e.values() {
            write!(w, "\t{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_store_tsv(r: impl BufRead) -> Result<EmbeddingStore> {
    let mut store: Option<EmbeddingStore> = None;
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split('\t');
        let id = fields.next().unwrap_or_default();
        let vector = fields
            .map(|f| f.trim().parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| parse_err(i, e))?;
        let e = Embedding::new(id, vector)?;
        store
            .get_or_insert_with(|| EmbeddingStore::new(e.dim()))
            .insert(e)?;
    }
    store.ok_or(Error::EmptyInput)
}

fn parse_err(line: usize, e: impl std::fmt::Display) -> Error {
    Error::Parse {
        line: line + 1,
        msg: e.to_string(),
    }
}

/// Non-empty, non-comment lines with their zero-based line numbers.
fn content_lines(r: impl BufRead) -> impl Iterator<Item = Result<(usize, String)>> {
    r.lines().enumerate().filter_map(|(i, line)| match line {
        Ok(l) if l.trim().is_empty() || l.starts_with('#') => None,
        Ok(l) => Some(Ok((i, l))),
        Err(e) => Some(Err(Error::Io(e))),
    })
}

pub fn read_trials(r: impl BufRead) -> Result<Vec<Trial>> {
    content_lines(r)
        .map(|line| {
            let (i, line) = line?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            match fields.as_slice() {
                [label, enroll, test] => {
                    let label = match *label {
                        "1" => Label::Target,
                        "0" => Label::Nontarget,
                        other => return Err(parse_err(i, format!("bad label `{other}`"))),
                    };
                    Ok(Trial::new(*enroll, *test, Some(label)))
                }
                [enroll, test] => Ok(Trial::new(*enroll, *test, None)),
                _ => Err(parse_err(i, "expected `label enroll test` or `enroll test`")),
            }
        })
        .collect()
}

pub fn write_trials(w: &mut impl Write, trials: &[Trial]) -> Result<()> {
    for t in trials {
        match t.label {
            Some(l) => writeln!(w, "{} {} {}", u8::from(l.is_target()), t.enroll_id, t.test_id)?,
            None => writeln!(w, "{} {}", t.enroll_id, t.test_id)?,
        }
    }
    Ok(())
}

/// Six fractional digits, with negative zero printed as zero.
pub fn format_score(s: f64) -> String {
    let text = format!("{s:.6}");
    if text == "-0.000000" {
        "0.000000".to_string()
    } else {
        text
    }
}

/// Writes one score column aligned with `trials`.
pub fn write_scores(w: &mut impl Write, trials: &[Trial], scores: &[f64]) -> Result<()> {
    if trials.len() != scores.len() {
        return Err(Error::DimensionMismatch {
            expected: trials.len(),
            found: scores.len(),
        });
    }
    for (t, &s) in trials.iter().zip(scores) {
        writeln!(w, "{} {} {}", t.enroll_id, t.test_id, format_score(s))?;
    }
    Ok(())
}

/// Reads `enroll test score` lines into unlabeled trials and scores.
pub fn read_scores(r: impl BufRead) -> Result<(Vec<Trial>, Vec<f64>)> {
    let mut trials = Vec::new();
    let mut scores = Vec::new();
    for line in content_lines(r) {
        let (i, line) = line?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [enroll, test, score] = fields.as_slice() else {
            return Err(parse_err(i, "expected `enroll test score`"));
        };
        let score: f64 = score.parse().map_err(|e| parse_err(i, e))?;
        if !score.is_finite() {
            return Err(parse_err(i, "non-finite score"));
        }
        trials.push(Trial::new(*enroll, *test, None));
        scores.push(score);
    }
    Ok((trials, scores))
}

/// Checks that a score file lines up with a trial list.
pub fn align_scores(trials: &[Trial], scored: &[Trial]) -> Result<()> {
    if trials.len() != scored.len()
        || trials
            .iter()
            .zip(scored)
            .any(|(a, b)| a.enroll_id != b.enroll_id || a.test_id != b.test_id)
    {
        return Err(Error::TrialMismatch);
    }
    Ok(())
}

/// Writes the latest column of a table.
pub fn write_table(w: &mut impl Write, table: &ScoreTable) -> Result<()> {
    let (_, scores) = table.last_column().ok_or(Error::EmptyList)?;
    write_scores(w, &table.trials, scores)
}

pub fn write_corpus(w: &mut impl Write, header: &[String], entries: &[CorpusEntry]) -> Result<()> {
    for h in header {
        writeln!(w, "# {h}")?;
    }
    for e in entries {
        writeln!(w, "{}\t{}\t{:.2}", e.utterance_id, e.speaker, e.duration_s)?;
    }
    Ok(())
}

/// Corpus rows plus the text of any `#` header lines.
pub fn read_corpus(r: impl BufRead) -> Result<(Vec<String>, Vec<CorpusEntry>)> {
    let mut header = Vec::new();
    let mut entries = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if let Some(h) = line.strip_prefix('#') {
            header.push(h.trim().to_string());
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, speaker, duration] = fields.as_slice() else {
            return Err(parse_err(i, "expected `utterance_id\\tspeaker_id\\tduration_s`"));
        };
        let duration_s: f64 = duration.trim().parse().map_err(|e| parse_err(i, e))?;
        if !(duration_s >= 0.0) {
            return Err(parse_err(i, "negative duration"));
        }
        entries.push(CorpusEntry {
            utterance_id: id.to_string(),
            speaker: SpeakerLabel::new(*speaker)?,
            duration_s,
        });
    }
    Ok((header, entries))
}

fn write_keyed<'a>(
    w: &mut impl Write,
    rows: impl Iterator<Item = (&'a str, Vec<f64>)>,
) -> Result<()> {
    for (id, values) in rows {
        write!(w, "{id}")?;
        for v in values {
            write!(w, "\t{v}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

fn read_keyed(r: impl BufRead, width: usize) -> Result<Vec<(String, Vec<f64>)>> {
    content_lines(r)
        .map(|line| {
            let (i, line) = line?;
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != width + 1 {
                return Err(parse_err(i, format!("expected {} tab-separated fields", width + 1)));
            }
            let values = fields[1..]
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| parse_err(i, e))?;
            Ok((fields[0].to_string(), values))
        })
        .collect()
}

fn sorted_keys<V>(map: &HashMap<String, V>) -> Vec<&str> {
    let mut keys: Vec<&str> = map.keys().map(String::as_str).collect();
    keys.sort_unstable();
    keys
}

/// Rows sorted by id; values round-trip exactly.
pub fn write_cmf_map(w: &mut impl Write, cmfs: &CmfMap) -> Result<()> {
    write_keyed(w, sorted_keys(cmfs).into_iter().map(|k| (k, vec![cmfs[k]])))
}

pub fn read_cmf_map(r: impl BufRead) -> Result<CmfMap> {
    let mut map = CmfMap::new();
    for (id, v) in read_keyed(r, 1)? {
        if !(0.0..=1.0).contains(&v[0]) {
            return Err(Error::OutOfRange(format!("cmf {} for `{id}`", v[0])));
        }
        if map.insert(id.clone(), v[0]).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok(map)
}

/// Rows sorted by id; values round-trip exactly.
pub fn write_stats(w: &mut impl Write, stats: &StatsMap) -> Result<()> {
    write_keyed(
        w,
        sorted_keys(stats)
            .into_iter()
            .map(|k| (k, vec![stats[k].mean, stats[k].std])),
    )
}

pub fn read_stats(r: impl BufRead) -> Result<StatsMap> {
    let mut map = StatsMap::new();
    for (id, v) in read_keyed(r, 2)? {
        let stats = CohortStats {
            mean: v[0],
            std: v[1],
        };
        if map.insert(id.clone(), stats).is_some() {
            return Err(Error::DuplicateId(id));
        }
    }
    Ok(map)
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

/// Writes a file through `f`, flushing before returning.
pub fn create_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    f(&mut w)?;
    w.flush()?;
    Ok(())
}
