//! Corpus construction: ingest raw monolingual text, sample a fraction per
//! language-script, pair every sentence with its romanization, and tokenize.

mod bpe;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::romanizer::{detect_script, Romanizer, RomanizerError, ScriptTag};
use crate::seed::stream_rng;

pub use bpe::{Role, TokenSequence, Vocab, CLS_ID, MASK_ID, PAD_ID, SEP_ID, UNK_ID};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("fraction {0} outside (0, 1]")]
    InvalidFraction(f64),
    #[error("alphabet of {alphabet} symbols plus specials exceeds target vocabulary size {target}")]
    InsufficientData { alphabet: usize, target: usize },
    #[error("record {id}: stored transliteration does not match the loaded rule tables")]
    PairingMismatch { id: String },
    #[error("line {line}: {msg}")]
    Record { line: usize, msg: String },
    #[error("vocabulary file: {0}")]
    VocabFormat(String),
    #[error(transparent)]
    Romanizer(#[from] RomanizerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A raw ingest record: transliteration and script may still be absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RawRecord {
    pub id: String,
    pub lang: String,
    pub script: Option<ScriptTag>,
    pub text: String,
    pub translit: Option<String>,
}

/// One corpus entry: a sentence in its original script plus its Latin
/// transliteration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SentencePair {
    pub id: String,
    pub lang: String,
    pub script: ScriptTag,
    pub text: String,
    pub translit: String,
}

pub fn read_records(path: &Path) -> Result<Vec<RawRecord>, CorpusError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: RawRecord = serde_json::from_str(&line).map_err(|e| CorpusError::Record {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_records(path: &Path, records: &[RawRecord]) -> Result<(), CorpusError> {
    let mut file = std::fs::File::create(path)?;
    for rec in records {
        serde_json::to_writer(&mut file, rec).map_err(|e| CorpusError::Record {
            line: 0,
            msg: e.to_string(),
        })?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

pub fn write_pairs(path: &Path, pairs: &[SentencePair]) -> Result<(), CorpusError> {
    let mut file = std::fs::File::create(path)?;
    for pair in pairs {
        serde_json::to_writer(&mut file, pair).map_err(|e| CorpusError::Record {
            line: 0,
            msg: e.to_string(),
        })?;
        file.write_all(b"\n")?;
    }
    Ok(())
}

/// Load pairs and verify the pairing invariant `translit == romanize(text)`
/// against the given rule tables.
pub fn load_pairs(path: &Path, rom: &Romanizer) -> Result<Vec<SentencePair>, CorpusError> {
    let file = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let pair: SentencePair = serde_json::from_str(&line).map_err(|e| CorpusError::Record {
            line: idx + 1,
            msg: e.to_string(),
        })?;
        if rom.romanize(&pair.text) != pair.translit {
            return Err(CorpusError::PairingMismatch { id: pair.id });
        }
        out.push(pair);
    }
    if out.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok(out)
}

fn group_key(rec: &RawRecord) -> (String, ScriptTag) {
    let script = rec.script.unwrap_or_else(|| detect_script(&rec.text));
    (rec.lang.clone(), script)
}

/// Draw `⌈fraction·n⌉` records per language-script stream, without
/// replacement, deterministically in `seed`. Each stream is shuffled with
/// its own named RNG, so changing one language's data never changes another
/// language's sample, and a smaller fraction is always a prefix of a larger
/// one.
pub fn sample_fraction(
    records: &[RawRecord],
    fraction: f64,
    seed: u64,
) -> Result<Vec<RawRecord>, CorpusError> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CorpusError::InvalidFraction(fraction));
    }
    if records.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    // Group in first-appearance order.
    let mut order: Vec<(String, ScriptTag)> = Vec::new();
    let mut groups: BTreeMap<(String, ScriptTag), Vec<usize>> = BTreeMap::new();
    for (i, rec) in records.iter().enumerate() {
        let key = group_key(rec);
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(i);
    }
    let mut out = Vec::new();
    for key in order {
        let indices = &groups[&key];
        let stream = format!("sample:{}:{}", key.0, key.1);
        let mut rng = stream_rng(seed, &stream, 0);
        let mut shuffled = indices.clone();
        shuffled.shuffle(&mut rng);
        let n = indices.len();
        let take = (((fraction * n as f64) - 1e-9).ceil().max(1.0) as usize).min(n);
        for &i in &shuffled[..take] {
            out.push(records[i].clone());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct PairingOptions {
    /// Keep sentences whose detected script is Latin. Switching this off is
    /// the "-Latn" ablation.
    pub include_latin: bool,
    /// Trust the script field of the record instead of re-detecting.
    pub trust_declared_script: bool,
}

impl Default for PairingOptions {
    fn default() -> Self {
        PairingOptions {
            include_latin: true,
            trust_declared_script: false,
        }
    }
}

/// Pair every sentence with its romanization. Empty-text records are
/// dropped with a warning.
pub fn build_pairs(
    records: &[RawRecord],
    rom: &Romanizer,
    opts: PairingOptions,
) -> Result<Vec<SentencePair>, CorpusError> {
    let mut out = Vec::new();
    for rec in records {
        if rec.text.is_empty() {
            log::warn!("build_pairs: dropping empty-text record {}", rec.id);
            continue;
        }
        let script = if opts.trust_declared_script {
            rec.script.unwrap_or_else(|| detect_script(&rec.text))
        } else {
            detect_script(&rec.text)
        };
        if !opts.include_latin && script == ScriptTag::Latn {
            continue;
        }
        out.push(SentencePair {
            id: rec.id.clone(),
            lang: rec.lang.clone(),
            script,
            text: rec.text.clone(),
            translit: rom.romanize(&rec.text),
        });
    }
    Ok(out)
}
