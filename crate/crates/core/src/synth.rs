//! Synthetic two-script corpus generator.
//!
//! Builds random sentences over a small Latin lexicon and emits each
//! sentence twice: once enciphered into a toy script (an exact bijection on
//! the letters, so the ground-truth transliteration is the original
//! sentence) and once in plain Latin or a second cipher. This gives a
//! controlled corpus where cross-script alignment can be measured against
//! known pairs.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::RawRecord;
use crate::romanizer::{encipher_toy, ScriptTag};
use crate::seed::stream_rng;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    /// Distinct words in the toy Latin lexicon.
    pub lexicon_size: usize,
    /// Sentences per script stream.
    pub count: usize,
    pub min_words: usize,
    pub max_words: usize,
    /// Script for the enciphered stream (ToyA or ToyB).
    pub cipher: ScriptTag,
    /// Script for the second stream: Latn for plain text, or the other toy
    /// cipher.
    pub second: ScriptTag,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            lexicon_size: 200,
            count: 2000,
            min_words: 3,
            max_words: 7,
            cipher: ScriptTag::ToyA,
            second: ScriptTag::Latn,
            seed: 42,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.lexicon_size == 0 || self.count == 0 {
            return Err(SynthError::Invalid("lexicon_size and count must be positive".to_string()));
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(SynthError::Invalid(format!(
                "bad sentence length range {}..={}",
                self.min_words, self.max_words
            )));
        }
        if !matches!(self.cipher, ScriptTag::ToyA | ScriptTag::ToyB) {
            return Err(SynthError::Invalid(format!(
                "cipher stream must be ToyA or ToyB, got {}",
                self.cipher
            )));
        }
        if !matches!(self.second, ScriptTag::Latn | ScriptTag::ToyA | ScriptTag::ToyB) {
            return Err(SynthError::Invalid(format!(
                "second stream must be Latn or a toy script, got {}",
                self.second
            )));
        }
        if self.second == self.cipher {
            return Err(SynthError::Invalid("the two streams must use different scripts".to_string()));
        }
        Ok(())
    }
}

fn random_word<R: Rng>(rng: &mut R) -> String {
    let len = rng.gen_range(3..=7);
    (0..len)
        .map(|_| char::from(b'a' + rng.gen_range(0..26u8)))
        .collect()
}

/// Zipf-like draw: word at rank r has weight 1/(r+1).
fn zipf_index<R: Rng>(rng: &mut R, cumulative: &[f64]) -> usize {
    let total = *cumulative.last().unwrap();
    let u = rng.gen_range(0.0..total);
    cumulative.partition_point(|&c| c <= u)
}

/// Generate the corpus: `2 * count` records, two per sentence, with
/// transliterations left empty for pairing to fill. Deterministic in the
/// spec seed.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Vec<RawRecord>, SynthError> {
    spec.validate()?;

    let mut lex_rng = stream_rng(spec.seed, "synth-lexicon", 0);
    let mut lexicon: Vec<String> = Vec::with_capacity(spec.lexicon_size);
    while lexicon.len() < spec.lexicon_size {
        let w = random_word(&mut lex_rng);
        if !lexicon.contains(&w) {
            lexicon.push(w);
        }
    }
    let cumulative: Vec<f64> = (0..lexicon.len())
        .scan(0.0, |acc, r| {
            *acc += 1.0 / (r as f64 + 1.0);
            Some(*acc)
        })
        .collect();

    let emit = |sentence: &str, script: ScriptTag| -> String {
        match script {
            ScriptTag::Latn => sentence.to_string(),
            toy => encipher_toy(sentence, toy),
        }
    };

    let mut sent_rng = stream_rng(spec.seed, "synth-sentences", 0);
    let mut records = Vec::with_capacity(2 * spec.count);
    for i in 0..spec.count {
        let n_words = sent_rng.gen_range(spec.min_words..=spec.max_words);
        let words: Vec<&str> = (0..n_words)
            .map(|_| lexicon[zipf_index(&mut sent_rng, &cumulative)].as_str())
            .collect();
        let sentence = words.join(" ");
        for script in [spec.cipher, spec.second] {
            records.push(RawRecord {
                id: format!("s{i:06}-{}", script.code().to_lowercase()),
                lang: "toy".to_string(),
                script: Some(script),
                text: emit(&sentence, script),
                translit: None,
            });
        }
    }
    Ok(records)
}
