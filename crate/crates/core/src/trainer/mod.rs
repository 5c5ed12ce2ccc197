//! Deterministic training loop and the ablation-grid runner.
//!
//! Every random draw comes from a named stream of the master seed keyed by
//! the step number, so two runs with the same config, corpus and seed are
//! bitwise identical, and a resumed run continues exactly where an
//! uninterrupted one would be.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{
    build_pairs, CorpusError, PairingOptions, RawRecord, SentencePair, TokenSequence, Vocab,
};
use crate::encoder::{EncoderError, EncoderParams, ModelConfig};
use crate::eval::{self, EvalError};
use crate::objectives::{
    apply_masking, combined_loss, mlm_loss, tcm_loss, ContrastiveBatch, Corruption, LossWeights,
    MaskedSequence, ObjectiveError,
};
use crate::romanizer::{Romanizer, ScriptTag};
use crate::seed::stream_rng;
use crate::tensor::{
    load_checkpoint, save_checkpoint, AdamState, CheckpointEntry, Tensor, TensorError,
};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid train config: {0}")]
    InvalidConfig(String),
    #[error("corpus stream exhausted: need {need} pairs, have {have}")]
    StreamExhausted { need: usize, have: usize },
    #[error("non-finite loss at step {step}; last good checkpoint retained")]
    NonFiniteLoss { step: usize },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("{path}: {err}")]
    Io { path: PathBuf, err: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |err| TrainError::Io {
        path: path.to_path_buf(),
        err,
    }
}

fn default_tau() -> f64 {
    1.0
}
fn default_mask_rate() -> f64 {
    0.15
}
fn default_batch_pairs() -> usize {
    8
}
fn default_steps() -> usize {
    2000
}
/// Desk-scale from-scratch rate. The paper-style fine-tuning preset uses
/// 1e-5, which assumes warm-started weights.
fn default_lr() -> f64 {
    3e-4
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps_adam() -> f64 {
    1e-6
}
fn default_seed() -> u64 {
    42
}
fn default_checkpoint_every() -> usize {
    2000
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default)]
    pub weights: LossWeights,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_mask_rate")]
    pub mask_rate: f64,
    #[serde(default)]
    pub corruption: Corruption,
    /// Pairs per batch (N); each step sees N original + N transliterated
    /// sequences.
    #[serde(default = "default_batch_pairs")]
    pub batch_pairs: usize,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps_adam")]
    pub eps_adam: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
    #[serde(default = "default_true")]
    pub include_latin: bool,
    /// Pool TCM representations from a separate unmasked forward pass
    /// instead of the masked one.
    #[serde(default)]
    pub tcm_clean_forward: bool,
    /// Stop when the total loss has not improved for this many steps.
    /// Disabled by default; fixed step counts keep runs reproducible.
    #[serde(default)]
    pub early_stop_patience: Option<usize>,
    pub model: ModelConfig,
}

impl TrainConfig {
    pub fn desk_default(vocab_size: usize) -> Self {
        serde_json::from_value(serde_json::json!({
            "model": ModelConfig::desk_default(vocab_size),
        }))
        .expect("defaults are valid")
    }

    /// The warm-start preset: low learning rate, checkpoints every 2k steps.
    pub fn finetune_preset(vocab_size: usize) -> Self {
        TrainConfig {
            lr: 1e-5,
            checkpoint_every: 2000,
            ..Self::desk_default(vocab_size)
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        self.weights
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        if self.batch_pairs < 1 {
            return Err(TrainError::InvalidConfig("batch_pairs must be >= 1".to_string()));
        }
        if self.steps < 1 {
            return Err(TrainError::InvalidConfig("steps must be >= 1".to_string()));
        }
        if !(self.lr > 0.0) {
            return Err(TrainError::InvalidConfig(format!("lr {} must be positive", self.lr)));
        }
        if self.checkpoint_every < 1 {
            return Err(TrainError::InvalidConfig("checkpoint_every must be >= 1".to_string()));
        }
        if !(self.tau > 0.0) {
            return Err(TrainError::InvalidConfig(format!("tau {} must be positive", self.tau)));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(TrainError::InvalidConfig(format!(
                "mask_rate {} outside (0, 1)",
                self.mask_rate
            )));
        }
        self.model
            .validate()
            .map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        Ok(())
    }
}

/// One batch: N masked original sequences, their N masked transliterations,
/// and the pair involution over the 2N concatenated slots (original i at
/// slot i, its transliteration at slot N+i).
pub struct TrainBatch {
    pub indices: Vec<usize>,
    pub orig: Vec<MaskedSequence>,
    pub latn: Vec<MaskedSequence>,
    pub pair_of: Vec<usize>,
}

fn pair_involution(n: usize) -> Vec<usize> {
    (0..2 * n).map(|i| (i + n) % (2 * n)).collect()
}

/// Sample N pairs for `step`, encode and mask both sides independently.
pub fn make_batch(
    pairs: &[SentencePair],
    vocab: &Vocab,
    cfg: &TrainConfig,
    step: u64,
) -> Result<TrainBatch, TrainError> {
    let encoded: Vec<(TokenSequence, TokenSequence)> = pairs
        .iter()
        .map(|p| {
            (
                vocab.encode(&p.text, cfg.model.max_len),
                vocab.encode(&p.translit, cfg.model.max_len),
            )
        })
        .collect();
    make_batch_encoded(&encoded, cfg, step)
}

fn make_batch_encoded(
    encoded: &[(TokenSequence, TokenSequence)],
    cfg: &TrainConfig,
    step: u64,
) -> Result<TrainBatch, TrainError> {
    let n = cfg.batch_pairs;
    if encoded.len() < n {
        return Err(TrainError::StreamExhausted {
            need: n,
            have: encoded.len(),
        });
    }
    let mut batch_rng = stream_rng(cfg.seed, "batch", step);
    let indices: Vec<usize> = rand::seq::index::sample(&mut batch_rng, encoded.len(), n).into_vec();

    let mut mask_rng = stream_rng(cfg.seed, "mask", step);
    let vocab_size = cfg.model.vocab_size;
    let mut orig = Vec::with_capacity(n);
    let mut latn = Vec::with_capacity(n);
    for &i in &indices {
        orig.push(apply_masking(
            &encoded[i].0,
            cfg.mask_rate,
            cfg.corruption,
            vocab_size,
            &mut mask_rng,
        )?);
        latn.push(apply_masking(
            &encoded[i].1,
            cfg.mask_rate,
            cfg.corruption,
            vocab_size,
            &mut mask_rng,
        )?);
    }
    Ok(TrainBatch {
        indices,
        orig,
        latn,
        pair_of: pair_involution(n),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct StepRecord {
    pub step: usize,
    pub loss_mlm_orig: f32,
    pub loss_mlm_trans: f32,
    pub loss_tcm: f32,
    pub loss_total: f32,
}

#[derive(Debug, Serialize)]
pub struct TrainReport {
    #[serde(skip)]
    pub records: Vec<StepRecord>,
    pub steps_run: usize,
    pub stopped_early: bool,
    pub wall_secs: f64,
    pub checkpoint_path: PathBuf,
    pub final_loss_total: f32,
}

struct LossBundle {
    mlm_orig: Tensor<f32>,
    mlm_trans: Tensor<f32>,
    tcm: Tensor<f32>,
    total: Tensor<f32>,
}

/// Forward both streams, pool, and combine the three losses for one batch.
fn batch_losses(
    params: &EncoderParams<f32>,
    batch: &TrainBatch,
    encoded: &[(TokenSequence, TokenSequence)],
    cfg: &TrainConfig,
) -> Result<LossBundle, TrainError> {
    let mut pooled: Vec<Tensor<f32>> = Vec::with_capacity(2 * batch.orig.len());
    let mut orig_items = Vec::with_capacity(batch.orig.len());
    let mut latn_items = Vec::with_capacity(batch.latn.len());

    for stream in [&batch.orig, &batch.latn] {
        for masked in stream.iter() {
            let out = params.forward(&masked.seq)?;
            let logits = params.mlm_logits(&out)?;
            if cfg.tcm_clean_forward {
                // pooled representation from a separate unmasked pass
            } else {
                pooled.push(params.mean_pool(&out, &masked.seq.roles)?);
            }
            if std::ptr::eq(stream, &batch.orig) {
                orig_items.push((logits, masked));
            } else {
                latn_items.push((logits, masked));
            }
        }
    }
    if cfg.tcm_clean_forward {
        for side in [0usize, 1] {
            for &i in &batch.indices {
                let seq = if side == 0 { &encoded[i].0 } else { &encoded[i].1 };
                let out = params.forward(seq)?;
                pooled.push(params.mean_pool(&out, &seq.roles)?);
            }
        }
    }

    let mlm_orig = mlm_loss(&orig_items)?;
    let mlm_trans = mlm_loss(&latn_items)?;
    let reps = Tensor::concat_rows(&pooled)?;
    let tcm = tcm_loss(&ContrastiveBatch::new(reps, batch.pair_of.clone(), cfg.tau)?)?;
    let total = combined_loss(&mlm_orig, &mlm_trans, &tcm, &cfg.weights)?;
    Ok(LossBundle {
        mlm_orig,
        mlm_trans,
        tcm,
        total,
    })
}

fn checkpoint_entries(
    params: &EncoderParams<f32>,
    adam: &AdamState<f32>,
) -> BTreeMap<String, CheckpointEntry> {
    let mut entries = params.to_entries();
    for (name, shape, values) in adam.export(params.set()) {
        entries.insert(name, CheckpointEntry { shape, values });
    }
    entries
}

/// Run the training loop. Writes `metrics.csv`, periodic `ckpt-<step>.ckpt`
/// files and a final `model.ckpt` under `out_dir`. `resume_from` restores
/// parameters and optimizer state from a checkpoint and continues at the
/// stored step; the continuation is bitwise identical to never having
/// stopped.
pub fn train(
    cfg: &TrainConfig,
    pairs: &[SentencePair],
    vocab: &Vocab,
    out_dir: &Path,
    resume_from: Option<&Path>,
) -> Result<TrainReport, TrainError> {
    cfg.validate()?;
    if cfg.model.vocab_size != vocab.size() {
        return Err(TrainError::InvalidConfig(format!(
            "model.vocab_size {} != trained vocabulary size {}",
            cfg.model.vocab_size,
            vocab.size()
        )));
    }
    if pairs.len() < cfg.batch_pairs {
        return Err(TrainError::StreamExhausted {
            need: cfg.batch_pairs,
            have: pairs.len(),
        });
    }
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let started = std::time::Instant::now();

    let encoded: Vec<(TokenSequence, TokenSequence)> = pairs
        .iter()
        .map(|p| {
            (
                vocab.encode(&p.text, cfg.model.max_len),
                vocab.encode(&p.translit, cfg.model.max_len),
            )
        })
        .collect();

    let (params, mut adam, start_step) = match resume_from {
        None => {
            let mut init_rng = stream_rng(cfg.seed, "init", 0);
            let params = EncoderParams::<f32>::init(&cfg.model, &mut init_rng)?;
            (params, AdamState::new(), 0usize)
        }
        Some(path) => {
            let entries = load_checkpoint(path)?;
            let params = EncoderParams::<f32>::from_entries(&entries)?;
            if *params.config() != cfg.model {
                return Err(TrainError::InvalidConfig(
                    "checkpoint model config does not match train config".to_string(),
                ));
            }
            let rows: Vec<(String, Vec<f32>)> = entries
                .iter()
                .filter(|(k, _)| k.starts_with("adam."))
                .map(|(k, v)| (k.clone(), v.values.clone()))
                .collect();
            let adam = AdamState::import(&rows);
            let start = adam.step_count() as usize;
            (params, adam, start)
        }
    };

    let csv_path = out_dir.join("metrics.csv");
    let mut csv = std::fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    writeln!(csv, "step,loss_mlm_orig,loss_mlm_trans,loss_tcm,loss_total")
        .map_err(io_err(&csv_path))?;

    let final_path = out_dir.join("model.ckpt");
    let mut records = Vec::with_capacity(cfg.steps.saturating_sub(start_step));
    let mut best_total = f32::INFINITY;
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for step in (start_step + 1)..=cfg.steps {
        let batch = make_batch_encoded(&encoded, cfg, step as u64)?;
        let losses = batch_losses(&params, &batch, &encoded, cfg)?;

        let record = StepRecord {
            step,
            loss_mlm_orig: losses.mlm_orig.item(),
            loss_mlm_trans: losses.mlm_trans.item(),
            loss_tcm: losses.tcm.item(),
            loss_total: losses.total.item(),
        };
        if !record.loss_total.is_finite() {
            return Err(TrainError::NonFiniteLoss { step });
        }

        params.set().zero_grads();
        losses.total.backward()?;
        adam.step(
            params.set(),
            cfg.lr as f32,
            cfg.beta1 as f32,
            cfg.beta2 as f32,
            cfg.eps_adam as f32,
        )?;

        writeln!(
            csv,
            "{},{},{},{},{}",
            record.step,
            record.loss_mlm_orig,
            record.loss_mlm_trans,
            record.loss_tcm,
            record.loss_total
        )
        .map_err(io_err(&csv_path))?;

        if step % cfg.checkpoint_every == 0 && step != cfg.steps {
            let path = out_dir.join(format!("ckpt-{step:06}.ckpt"));
            save_checkpoint(&path, &checkpoint_entries(&params, &adam))?;
        }

        if record.loss_total < best_total {
            best_total = record.loss_total;
            since_best = 0;
        } else {
            since_best += 1;
        }
        records.push(record);
        if let Some(patience) = cfg.early_stop_patience {
            if since_best >= patience {
                log::info!("early stop at step {step} (no improvement in {patience} steps)");
                stopped_early = true;
                break;
            }
        }
    }

    save_checkpoint(&final_path, &checkpoint_entries(&params, &adam))?;
    let final_loss_total = records.last().map(|r| r.loss_total).unwrap_or(f32::NAN);
    Ok(TrainReport {
        steps_run: records.len(),
        records,
        stopped_early,
        wall_secs: started.elapsed().as_secs_f64(),
        checkpoint_path: final_path,
        final_loss_total,
    })
}

// ---- ablation grid ----

#[derive(Debug, Clone, Serialize)]
pub struct AblationCell {
    /// "full", "w/o TCM" or "w/o MLM", matching the usual ablation row
    /// labels.
    pub objective: String,
    /// "+Latn" or "-Latn".
    pub latin: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<AblationMetrics>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AblationMetrics {
    pub retrieval_top10: f64,
    /// Raw cosine between the two script-group centroids (cross-script
    /// entry of the centroid matrix).
    pub centroid_cross_script: f64,
    pub alignment: f64,
    pub uniformity: f64,
    /// Largest absolute change of any MLM-head-only parameter over
    /// training. Exactly zero in the "w/o MLM" cells.
    pub mlm_param_delta: f64,
    pub final_loss_total: f32,
    pub train_pairs: usize,
}

#[derive(Debug, Serialize)]
pub struct AblationReport {
    pub cells: Vec<AblationCell>,
}

/// Train and evaluate the six-variant grid
/// {full, w/o TCM, w/o MLM} × {+Latn, -Latn}.
///
/// Evaluation always runs on the same cross-script subset (up to
/// `eval_limit` non-Latin pairs of the full corpus) so cells are
/// comparable. Cell failures are recorded and do not stop remaining cells.
pub fn run_ablation_grid(
    base: &TrainConfig,
    records: &[RawRecord],
    vocab: &Vocab,
    rom: &Romanizer,
    out_dir: &Path,
    eval_limit: usize,
    threads: usize,
) -> Result<AblationReport, TrainError> {
    base.validate()?;
    let all_pairs = build_pairs(records, rom, PairingOptions::default())?;
    let eval_pairs: Vec<SentencePair> = all_pairs
        .iter()
        .filter(|p| p.script != ScriptTag::Latn)
        .take(eval_limit)
        .cloned()
        .collect();

    let variants: [(&str, LossWeights); 3] = [
        ("full", base.weights),
        (
            "w/o TCM",
            LossWeights {
                lambda_tcm: 0.0,
                ..base.weights
            },
        ),
        (
            "w/o MLM",
            LossWeights {
                lambda_mlm: 0.0,
                lambda_mlm_trans: 0.0,
                ..base.weights
            },
        ),
    ];

    let mut cells = Vec::with_capacity(6);
    for (label, weights) in variants {
        for include_latin in [true, false] {
            let latin = if include_latin { "+Latn" } else { "-Latn" };
            let cell_dir = out_dir.join(format!(
                "{}-{}",
                label.replace([' ', '/'], "_"),
                latin.replace('+', "plus").replace('-', "minus")
            ));
            let cfg = TrainConfig {
                weights,
                include_latin,
                ..base.clone()
            };
            let result = run_cell(&cfg, records, vocab, rom, &eval_pairs, &cell_dir, threads);
            cells.push(match result {
                Ok(metrics) => AblationCell {
                    objective: label.to_string(),
                    latin: latin.to_string(),
                    error: None,
                    metrics: Some(metrics),
                },
                Err(e) => AblationCell {
                    objective: label.to_string(),
                    latin: latin.to_string(),
                    error: Some(e.to_string()),
                    metrics: None,
                },
            });
        }
    }
    Ok(AblationReport { cells })
}

fn run_cell(
    cfg: &TrainConfig,
    records: &[RawRecord],
    vocab: &Vocab,
    rom: &Romanizer,
    eval_pairs: &[SentencePair],
    out_dir: &Path,
    threads: usize,
) -> Result<AblationMetrics, TrainError> {
    let train_pairs = build_pairs(
        records,
        rom,
        PairingOptions {
            include_latin: cfg.include_latin,
            ..Default::default()
        },
    )?;

    let mut init_rng = stream_rng(cfg.seed, "init", 0);
    let initial = EncoderParams::<f32>::init(&cfg.model, &mut init_rng)?;
    let mlm_names: Vec<String> = initial
        .set()
        .iter()
        .filter(|(name, _)| name.starts_with("mlm."))
        .map(|(name, _)| name.clone())
        .collect();
    let before: BTreeMap<String, Vec<f32>> = mlm_names
        .iter()
        .map(|n| (n.clone(), initial.set().get(n).unwrap().value_vec()))
        .collect();

    let report = train(cfg, &train_pairs, vocab, out_dir, None)?;
    let entries = load_checkpoint(&report.checkpoint_path)?;
    let params = EncoderParams::<f32>::from_entries(&entries)?;

    let mut mlm_param_delta = 0.0f64;
    for name in &mlm_names {
        let after = params.set().get(name).unwrap().value_vec();
        for (a, b) in before[name].iter().zip(&after) {
            mlm_param_delta = mlm_param_delta.max((*a as f64 - *b as f64).abs());
        }
    }

    let geometry = eval::geometry_on_pairs(
        &params,
        vocab,
        eval_pairs,
        params.config().pool_layer,
        threads,
    )?;
    let k = 10.min(eval_pairs.len());
    let retrieval = eval::retrieval_on_pairs(&params, vocab, eval_pairs, k, threads, None)?;

    Ok(AblationMetrics {
        retrieval_top10: retrieval.overall,
        centroid_cross_script: geometry.cross_script_centroid,
        alignment: geometry.alignment,
        uniformity: geometry.uniformity,
        mlm_param_delta,
        final_loss_total: report.final_loss_total,
        train_pairs: train_pairs.len(),
    })
}

#[cfg(test)]
mod tests;
