//! The three training objectives: masked-LM loss on original text, the same
//! on transliterations, and the transliteration contrastive loss, plus their
//! weighted combination.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Role, TokenSequence, MASK_ID};
use crate::tensor::{Scalar, Tensor, TensorError};

#[derive(Debug, Error)]
pub enum ObjectiveError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("sequence has no content tokens to mask")]
    NoContent,
    #[error("no masked positions in batch")]
    EmptyMaskSet,
    #[error("invalid contrastive batch: {0}")]
    InvalidBatch(String),
    #[error("mask rate {0} outside (0, 1)")]
    InvalidRate(f64),
    #[error("non-finite loss term")]
    NonFinite,
}

/// How selected positions are corrupted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Corruption {
    /// Replace every selected token by `[mask]`.
    #[default]
    #[serde(rename = "pure-mask")]
    PureMask,
    /// 80% `[mask]`, 10% random token, 10% kept.
    #[serde(rename = "bert-80-10-10")]
    Bert801010,
}

/// A corrupted sequence with its recovery targets. `labels[i]` holds the
/// original token id exactly at the selected positions.
#[derive(Debug, Clone)]
pub struct MaskedSequence {
    pub seq: TokenSequence,
    pub labels: Vec<Option<usize>>,
    pub mask_positions: Vec<usize>,
}

/// Select `⌊mask_rate·content_len⌋` (at least 1) content positions without
/// replacement and corrupt them per strategy. `vocab_size` is only used for
/// the random-replacement arm of the BERT scheme.
pub fn apply_masking<R: Rng>(
    seq: &TokenSequence,
    mask_rate: f64,
    strategy: Corruption,
    vocab_size: usize,
    rng: &mut R,
) -> Result<MaskedSequence, ObjectiveError> {
    if !(mask_rate > 0.0 && mask_rate < 1.0) {
        return Err(ObjectiveError::InvalidRate(mask_rate));
    }
    let content = seq.content_positions();
    if content.is_empty() {
        return Err(ObjectiveError::NoContent);
    }
    let n_mask = ((mask_rate * content.len() as f64).floor() as usize).max(1);
    let chosen = rand::seq::index::sample(rng, content.len(), n_mask.min(content.len()));
    let mut positions: Vec<usize> = chosen.iter().map(|i| content[i]).collect();
    positions.sort_unstable();

    let mut out = seq.clone();
    let mut labels = vec![None; seq.len()];
    for &pos in &positions {
        labels[pos] = Some(seq.ids[pos]);
        match strategy {
            Corruption::PureMask => {
                out.ids[pos] = MASK_ID;
                out.roles[pos] = Role::Mask;
            }
            Corruption::Bert801010 => {
                let u: f64 = rng.gen_range(0.0..1.0);
                if u < 0.8 {
                    out.ids[pos] = MASK_ID;
                    out.roles[pos] = Role::Mask;
                } else if u < 0.9 {
                    out.ids[pos] = rng.gen_range(5..vocab_size.max(6));
                } // else: keep the original token
            }
        }
    }
    Ok(MaskedSequence {
        seq: out,
        labels,
        mask_positions: positions,
    })
}

/// Mean negative log-probability of the original token over all masked
/// positions of the batch. `items` pairs each sequence's logits
/// (`seq_len × vocab`) with its masking record.
pub fn mlm_loss<F: Scalar>(
    items: &[(Tensor<F>, &MaskedSequence)],
) -> Result<Tensor<F>, ObjectiveError> {
    let total: usize = items.iter().map(|(_, m)| m.mask_positions.len()).sum();
    if total == 0 {
        return Err(ObjectiveError::EmptyMaskSet);
    }
    let divisor = F::from_f64(total as f64);
    let mut acc: Option<Tensor<F>> = None;
    for (logits, masked) in items {
        let targets: Vec<usize> = masked
            .labels
            .iter()
            .map(|l| l.unwrap_or(0))
            .collect();
        let term = logits.cross_entropy_rows(&targets, &masked.mask_positions, divisor)?;
        acc = Some(match acc {
            None => term,
            Some(prev) => prev.add(&term)?,
        });
    }
    Ok(acc.expect("non-empty batch"))
}

/// 2N pooled representations with the positive-pair involution and the
/// softmax temperature.
pub struct ContrastiveBatch<F: Scalar> {
    pub reps: Tensor<F>,
    pub pair_of: Vec<usize>,
    pub tau: f64,
}

impl<F: Scalar> ContrastiveBatch<F> {
    pub fn new(reps: Tensor<F>, pair_of: Vec<usize>, tau: f64) -> Result<Self, ObjectiveError> {
        let n = reps.rows();
        if n != pair_of.len() || n % 2 != 0 || n == 0 {
            return Err(ObjectiveError::InvalidBatch(format!(
                "{n} representations for {} pair links",
                pair_of.len()
            )));
        }
        for (i, &p) in pair_of.iter().enumerate() {
            if p >= n || p == i || pair_of[p] != i {
                return Err(ObjectiveError::InvalidBatch(
                    "pair map must be an involution without fixed points".to_string(),
                ));
            }
        }
        if !(tau > 0.0) {
            return Err(ObjectiveError::InvalidBatch(format!("temperature {tau} must be positive")));
        }
        Ok(ContrastiveBatch { reps, pair_of, tau })
    }
}

/// Symmetric InfoNCE over cosine similarities: every representation is an
/// anchor once, its transliteration partner is the positive, and the other
/// 2N−2 batch members are the negatives. Mean over all 2N anchors.
pub fn tcm_loss<F: Scalar>(batch: &ContrastiveBatch<F>) -> Result<Tensor<F>, ObjectiveError> {
    let n = batch.reps.rows();
    for (i, row) in batch.reps.value_vec().chunks(batch.reps.cols()).enumerate() {
        let norm: f64 = row.iter().map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt();
        if norm < 1e-12 {
            log::warn!("tcm_loss: representation {i} has zero norm");
            return Err(ObjectiveError::Tensor(TensorError::DegenerateNorm {
                op: "tcm_loss",
            }));
        }
    }
    let normed = batch.reps.l2_normalize_rows();
    let sims = normed
        .matmul(&normed.transpose())?
        .scale(F::from_f64(1.0 / batch.tau));
    // Self-similarities are not candidates; push them below every reachable
    // score so they vanish under softmax.
    let mut mask = vec![F::zero(); n * n];
    for i in 0..n {
        mask[i * n + i] = F::from_f64(-1e9);
    }
    let masked = sims.add(&Tensor::from_vec(n, n, mask)?)?;
    let all_rows: Vec<usize> = (0..n).collect();
    let loss = masked.cross_entropy_rows(&batch.pair_of, &all_rows, F::from_f64(n as f64))?;
    Ok(loss)
}

/// Loss weights; at least one must be positive.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct LossWeights {
    pub lambda_mlm: f64,
    pub lambda_mlm_trans: f64,
    pub lambda_tcm: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_mlm: 1.0,
            lambda_mlm_trans: 1.0,
            lambda_tcm: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), ObjectiveError> {
        let ws = [self.lambda_mlm, self.lambda_mlm_trans, self.lambda_tcm];
        if ws.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(ObjectiveError::InvalidBatch("loss weights must be non-negative".to_string()));
        }
        if ws.iter().all(|w| *w == 0.0) {
            return Err(ObjectiveError::InvalidBatch("at least one loss weight must be positive".to_string()));
        }
        Ok(())
    }
}

/// `λ1·L_mlm + λ2·L_mlm_trans + λ3·L_tcm`, as a graph node so gradients
/// flow into all three terms (scaled by their weights).
pub fn combined_loss<F: Scalar>(
    l_mlm: &Tensor<F>,
    l_mlm_trans: &Tensor<F>,
    l_tcm: &Tensor<F>,
    w: &LossWeights,
) -> Result<Tensor<F>, ObjectiveError> {
    w.validate()?;
    for term in [l_mlm, l_mlm_trans, l_tcm] {
        if !term.item().as_f64().is_finite() {
            return Err(ObjectiveError::NonFinite);
        }
    }
    let total = l_mlm
        .scale(F::from_f64(w.lambda_mlm))
        .add(&l_mlm_trans.scale(F::from_f64(w.lambda_mlm_trans)))?
        .add(&l_tcm.scale(F::from_f64(w.lambda_tcm)))?;
    Ok(total)
}
