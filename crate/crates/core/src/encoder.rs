//! Small pre-LN bidirectional transformer encoder with a weight-tied MLM
//! head and mean-pooled sequence representations.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Role, TokenSequence};
use crate::tensor::{CheckpointEntry, ParamSet, Scalar, Tensor, TensorError};

const LN_EPS: f64 = 1e-5;
const ATTN_MASK: f64 = -1e9;
const INIT_STD: f64 = 0.02;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("empty pooling set: no content or mask positions")]
    EmptyPool,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("checkpoint does not describe this model: {0}")]
    BadCheckpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    /// Which hidden layer the pooled sequence representation comes from
    /// (1-based; 0 is the embedding output and only valid when `n_layers`
    /// is 0).
    pub pool_layer: usize,
}

/// Pool at two thirds of the depth, rounded up.
pub fn default_pool_layer(n_layers: usize) -> usize {
    (2 * n_layers).div_ceil(3)
}

impl ModelConfig {
    /// Desk-scale default; `vocab_size` must still be set from the trained
    /// vocabulary.
    pub fn desk_default(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 4,
            n_heads: 4,
            d_model: 64,
            d_ff: 256,
            vocab_size,
            max_len: 64,
            pool_layer: default_pool_layer(4),
        }
    }

    pub fn validate(&self) -> Result<(), EncoderError> {
        if self.d_model == 0 || self.d_ff == 0 || self.vocab_size == 0 {
            return Err(EncoderError::InvalidConfig(
                "d_model, d_ff and vocab_size must be positive".to_string(),
            ));
        }
        if self.n_layers > 0 && self.n_heads == 0 {
            return Err(EncoderError::InvalidConfig("n_heads must be positive".to_string()));
        }
        if self.n_heads > 0 && self.d_model % self.n_heads != 0 {
            return Err(EncoderError::InvalidConfig(format!(
                "d_model {} not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.max_len < 2 {
            return Err(EncoderError::InvalidConfig("max_len must be at least 2".to_string()));
        }
        let pool_ok = if self.n_layers == 0 {
            self.pool_layer == 0
        } else {
            (1..=self.n_layers).contains(&self.pool_layer)
        };
        if !pool_ok {
            return Err(EncoderError::InvalidConfig(format!(
                "pool_layer {} outside 1..={}",
                self.pool_layer, self.n_layers
            )));
        }
        Ok(())
    }
}

/// Per-layer hidden states; index 0 is the embedding + positional output,
/// index `n_layers` the final layer.
pub struct EncoderOutput<F: Scalar> {
    pub hidden: Vec<Tensor<F>>,
}

/// All trainable tensors, addressed by canonical names (`embed.tok`,
/// `layer.<i>.attn.q`, `mlm.bias`, ...).
pub struct EncoderParams<F: Scalar> {
    cfg: ModelConfig,
    set: ParamSet<F>,
}

impl<F: Scalar> EncoderParams<F> {
    pub fn init<R: Rng>(cfg: &ModelConfig, rng: &mut R) -> Result<Self, EncoderError> {
        cfg.validate()?;
        let d = cfg.d_model;
        let mut set = ParamSet::new();
        set.insert("embed.tok", Tensor::randn(cfg.vocab_size, d, INIT_STD, rng));
        set.insert("embed.pos", Tensor::randn(cfg.max_len, d, INIT_STD, rng));
        for i in 0..cfg.n_layers {
            set.insert(format!("layer.{i}.ln1.gamma"), Tensor::full(1, d, F::one()));
            set.insert(format!("layer.{i}.ln1.beta"), Tensor::zeros(1, d));
            for name in ["q", "k", "v", "o"] {
                set.insert(
                    format!("layer.{i}.attn.{name}"),
                    Tensor::randn(d, d, INIT_STD, rng),
                );
            }
            set.insert(format!("layer.{i}.ln2.gamma"), Tensor::full(1, d, F::one()));
            set.insert(format!("layer.{i}.ln2.beta"), Tensor::zeros(1, d));
            set.insert(format!("layer.{i}.ffn.w1"), Tensor::randn(d, cfg.d_ff, INIT_STD, rng));
            set.insert(format!("layer.{i}.ffn.b1"), Tensor::zeros(1, cfg.d_ff));
            set.insert(format!("layer.{i}.ffn.w2"), Tensor::randn(cfg.d_ff, d, INIT_STD, rng));
            set.insert(format!("layer.{i}.ffn.b2"), Tensor::zeros(1, d));
        }
        set.insert("mlm.ln.gamma", Tensor::full(1, d, F::one()));
        set.insert("mlm.ln.beta", Tensor::zeros(1, d));
        set.insert("mlm.bias", Tensor::zeros(1, cfg.vocab_size));
        Ok(EncoderParams { cfg: *cfg, set })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn set(&self) -> &ParamSet<F> {
        &self.set
    }

    fn p(&self, name: &str) -> &Tensor<F> {
        self.set
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
    }

    /// Forward pass over one padded sequence. Padding positions neither
    /// attend nor are attended to (additive key mask). Deterministic.
    pub fn forward(&self, seq: &TokenSequence) -> Result<EncoderOutput<F>, EncoderError> {
        let len = seq.len();
        if len == 0 {
            return Err(EncoderError::InvalidConfig("empty sequence".to_string()));
        }
        if len > self.cfg.max_len {
            return Err(EncoderError::InvalidConfig(format!(
                "sequence length {len} exceeds max_len {}",
                self.cfg.max_len
            )));
        }
        let d = self.cfg.d_model;
        let eps = F::from_f64(LN_EPS);

        let tok = Tensor::embed_lookup(self.p("embed.tok"), &seq.ids)?;
        let pos = if len == self.cfg.max_len {
            self.p("embed.pos").clone()
        } else {
            self.p("embed.pos").slice_rows(0, len)?
        };
        let mut x = tok.add(&pos)?;
        let mut hidden = Vec::with_capacity(self.cfg.n_layers + 1);
        hidden.push(x.clone());

        // Additive mask: keys at pad positions get a large negative score.
        let mut mask_vals = vec![F::zero(); len * len];
        for (j, role) in seq.roles.iter().enumerate() {
            if matches!(role, Role::Pad) {
                for i in 0..len {
                    mask_vals[i * len + j] = F::from_f64(ATTN_MASK);
                }
            }
        }
        let mask = Tensor::from_vec(len, len, mask_vals)?;

        let n_heads = self.cfg.n_heads.max(1);
        let d_head = d / n_heads;
        let scale = F::from_f64(1.0 / (d_head as f64).sqrt());

        for i in 0..self.cfg.n_layers {
            let ln1 = x
                .layer_norm(eps)
                .mul_bias(self.p(&format!("layer.{i}.ln1.gamma")))?
                .add_bias(self.p(&format!("layer.{i}.ln1.beta")))?;
            let q = ln1.matmul(self.p(&format!("layer.{i}.attn.q")))?;
            let k = ln1.matmul(self.p(&format!("layer.{i}.attn.k")))?;
            let v = ln1.matmul(self.p(&format!("layer.{i}.attn.v")))?;
            let mut heads = Vec::with_capacity(n_heads);
            for h in 0..n_heads {
                let (lo, hi) = (h * d_head, (h + 1) * d_head);
                let qh = q.slice_cols(lo, hi)?;
                let kh = k.slice_cols(lo, hi)?;
                let vh = v.slice_cols(lo, hi)?;
                let scores = qh.matmul(&kh.transpose())?.scale(scale).add(&mask)?;
                heads.push(scores.softmax_rows().matmul(&vh)?);
            }
            let attn = Tensor::concat_cols(&heads)?.matmul(self.p(&format!("layer.{i}.attn.o")))?;
            x = x.add(&attn)?;

            let ln2 = x
                .layer_norm(eps)
                .mul_bias(self.p(&format!("layer.{i}.ln2.gamma")))?
                .add_bias(self.p(&format!("layer.{i}.ln2.beta")))?;
            let ff = ln2
                .matmul(self.p(&format!("layer.{i}.ffn.w1")))?
                .add_bias(self.p(&format!("layer.{i}.ffn.b1")))?
                .gelu()
                .matmul(self.p(&format!("layer.{i}.ffn.w2")))?
                .add_bias(self.p(&format!("layer.{i}.ffn.b2")))?;
            x = x.add(&ff)?;
            hidden.push(x.clone());
        }
        Ok(EncoderOutput { hidden })
    }

    /// Vocabulary scores from the last hidden layer: layer norm, then a
    /// projection tied to the input embedding, plus a learned bias.
    pub fn mlm_logits(&self, output: &EncoderOutput<F>) -> Result<Tensor<F>, EncoderError> {
        let h = output.hidden.last().expect("hidden list is never empty");
        let eps = F::from_f64(LN_EPS);
        let normed = h
            .layer_norm(eps)
            .mul_bias(self.p("mlm.ln.gamma"))?
            .add_bias(self.p("mlm.ln.beta"))?;
        let logits = normed
            .matmul(&self.p("embed.tok").transpose())?
            .add_bias(self.p("mlm.bias"))?;
        Ok(logits)
    }

    /// Pooled sequence representation: arithmetic mean over content and
    /// mask positions of the configured pooling layer. `[cls]`, `[sep]`
    /// and `[pad]` are excluded.
    pub fn mean_pool(
        &self,
        output: &EncoderOutput<F>,
        roles: &[Role],
    ) -> Result<Tensor<F>, EncoderError> {
        mean_pool_at(output, roles, self.cfg.pool_layer)
    }

    /// Serialize to checkpoint entries (f32 payloads), including `meta.*`
    /// entries recording what tensor shapes cannot: head count and pooling
    /// layer.
    pub fn to_entries(&self) -> BTreeMap<String, CheckpointEntry> {
        let mut out = BTreeMap::new();
        for (name, t) in self.set.iter() {
            out.insert(
                name.clone(),
                CheckpointEntry {
                    shape: t.shape(),
                    values: t.values().iter().map(|v| v.as_f64() as f32).collect(),
                },
            );
        }
        out.insert(
            "meta.n_heads".to_string(),
            CheckpointEntry {
                shape: (1, 1),
                values: vec![self.cfg.n_heads as f32],
            },
        );
        out.insert(
            "meta.pool_layer".to_string(),
            CheckpointEntry {
                shape: (1, 1),
                values: vec![self.cfg.pool_layer as f32],
            },
        );
        out
    }

    /// Rebuild parameters (and the model config) from checkpoint entries.
    pub fn from_entries(entries: &BTreeMap<String, CheckpointEntry>) -> Result<Self, EncoderError> {
        let need = |name: &str| {
            entries
                .get(name)
                .ok_or_else(|| EncoderError::BadCheckpoint(format!("missing entry {name}")))
        };
        let tok = need("embed.tok")?;
        let pos = need("embed.pos")?;
        let (vocab_size, d_model) = tok.shape;
        let max_len = pos.shape.0;
        let mut n_layers = 0;
        while entries.contains_key(&format!("layer.{n_layers}.attn.q")) {
            n_layers += 1;
        }
        let d_ff = if n_layers > 0 {
            need("layer.0.ffn.w1")?.shape.1
        } else {
            1
        };
        let n_heads = need("meta.n_heads")?.values[0] as usize;
        let pool_layer = need("meta.pool_layer")?.values[0] as usize;
        let cfg = ModelConfig {
            n_layers,
            n_heads,
            d_model,
            d_ff,
            vocab_size,
            max_len,
            pool_layer,
        };
        cfg.validate()?;

        let mut set = ParamSet::new();
        for (name, entry) in entries {
            if name.starts_with("meta.") || name.starts_with("adam.") {
                continue;
            }
            let values: Vec<F> = entry.values.iter().map(|v| F::from_f64(*v as f64)).collect();
            let t = Tensor::from_vec(entry.shape.0, entry.shape.1, values)
                .map_err(EncoderError::Tensor)?;
            set.insert(name.clone(), t);
        }
        let params = EncoderParams { cfg, set };
        // Presence check: init the same config and compare names.
        let mut rng = crate::seed::stream_rng(0, "shape-check", 0);
        let reference = EncoderParams::<F>::init(&cfg, &mut rng)?;
        for (name, t) in reference.set.iter() {
            match params.set.get(name) {
                None => return Err(EncoderError::BadCheckpoint(format!("missing entry {name}"))),
                Some(loaded) if loaded.shape() != t.shape() => {
                    return Err(EncoderError::BadCheckpoint(format!(
                        "entry {name} has shape {:?}, expected {:?}",
                        loaded.shape(),
                        t.shape()
                    )))
                }
                _ => {}
            }
        }
        Ok(params)
    }
}

/// Mean over content/mask rows of the given hidden layer.
pub fn mean_pool_at<F: Scalar>(
    output: &EncoderOutput<F>,
    roles: &[Role],
    pool_layer: usize,
) -> Result<Tensor<F>, EncoderError> {
    let layer = output
        .hidden
        .get(pool_layer)
        .ok_or_else(|| EncoderError::InvalidConfig(format!("pool_layer {pool_layer} out of range")))?;
    let eligible: Vec<usize> = roles
        .iter()
        .enumerate()
        .filter(|(_, r)| matches!(r, Role::Content | Role::Mask))
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return Err(EncoderError::EmptyPool);
    }
    layer.mean_rows(&eligible).map_err(EncoderError::Tensor)
}
