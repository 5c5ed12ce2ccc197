//! Evaluation and representation-geometry analysis: cross-script sentence
//! retrieval, script-centroid similarity, alignment/uniformity, and 2-D PCA.
//!
//! Metric computations run in `f64` on plain vectors; only the embedding
//! step touches the model.

mod pca;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::corpus::{SentencePair, Vocab};
use crate::encoder::{mean_pool_at, EncoderError, EncoderParams};
use crate::romanizer::{Romanizer, ScriptTag};
use crate::tensor::TensorError;

pub use pca::{pca_project, PcaProjection};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("sentence {id}: nothing to pool (no content tokens)")]
    EmptyPool { id: String },
    #[error("zero-norm representation at index {index}")]
    DegenerateNorm { index: usize },
    #[error("need at least {need} script groups, found {found}")]
    InsufficientGroups { need: usize, found: usize },
    #[error("covariance has fewer than 2 positive eigenvalues")]
    RankDeficient,
    #[error("{0}")]
    InvalidInput(String),
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

fn normalized(a: &[f64]) -> Vec<f64> {
    let n = norm(a);
    a.iter().map(|x| x / n).collect()
}

fn check_norms(reps: &[Vec<f64>]) -> Result<(), EvalError> {
    for (index, r) in reps.iter().enumerate() {
        if norm(r) < 1e-12 {
            return Err(EvalError::DegenerateNorm { index });
        }
    }
    Ok(())
}

/// One pooled vector per sentence, at `pool_layer`, no masking.
///
/// `threads > 1` splits the sentence list across OS threads; each thread
/// rebuilds the parameters from a plain snapshot (graphs are not shareable)
/// and results are reassembled in input order, so the output does not
/// depend on the thread count.
pub fn embed_sentences(
    params: &EncoderParams<f32>,
    vocab: &Vocab,
    sentences: &[String],
    pool_layer: usize,
    threads: usize,
) -> Result<Vec<Vec<f64>>, EvalError> {
    let max_len = params.config().max_len;
    let embed_one = |params: &EncoderParams<f32>, idx: usize, text: &String| {
        let seq = vocab.encode(text, max_len);
        let out = params.forward(&seq)?;
        let pooled = mean_pool_at(&out, &seq.roles, pool_layer).map_err(|e| match e {
            EncoderError::EmptyPool => EvalError::EmptyPool {
                id: format!("#{idx}: {text:?}"),
            },
            other => EvalError::Encoder(other),
        })?;
        let row: Vec<f64> = pooled.values().iter().map(|v| *v as f64).collect();
        Ok::<Vec<f64>, EvalError>(row)
    };

    if threads <= 1 || sentences.len() < 2 * threads {
        let mut out = Vec::with_capacity(sentences.len());
        for (i, s) in sentences.iter().enumerate() {
            out.push(embed_one(params, i, s)?);
        }
        return Ok(out);
    }

    let entries = params.to_entries();
    let chunk = sentences.len().div_ceil(threads);
    let results: Vec<Result<Vec<Vec<f64>>, EvalError>> = std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for (c, chunk_sentences) in sentences.chunks(chunk).enumerate() {
            let entries = &entries;
            handles.push(scope.spawn(move || {
                let local = EncoderParams::<f32>::from_entries(entries)?;
                let mut out = Vec::with_capacity(chunk_sentences.len());
                for (i, s) in chunk_sentences.iter().enumerate() {
                    out.push(embed_one(&local, c * chunk + i, s)?);
                }
                Ok(out)
            }));
        }
        handles.into_iter().map(|h| h.join().expect("embed worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(sentences.len());
    for r in results {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct RetrievalReport {
    pub k: usize,
    pub n_queries: usize,
    pub n_candidates: usize,
    pub pool_layer: usize,
    /// Fraction of queries whose gold candidate ranks in the top k.
    pub overall: f64,
    /// Accuracy per query script group, when groups were provided.
    pub per_script: BTreeMap<String, f64>,
    pub per_script_counts: BTreeMap<String, usize>,
}

/// Rank candidates by cosine similarity (descending, ties broken by
/// candidate index ascending); count queries whose `gold[i]` lands in the
/// top `k`.
pub fn retrieval_topk(
    queries: &[Vec<f64>],
    candidates: &[Vec<f64>],
    gold: &[usize],
    k: usize,
    groups: Option<&[ScriptTag]>,
) -> Result<RetrievalReport, EvalError> {
    if queries.len() != gold.len() {
        return Err(EvalError::InvalidInput(format!(
            "{} queries but {} gold links",
            queries.len(),
            gold.len()
        )));
    }
    if k == 0 || k > candidates.len() {
        return Err(EvalError::InvalidInput(format!(
            "k {k} outside 1..={}",
            candidates.len()
        )));
    }
    if let Some(g) = groups {
        if g.len() != queries.len() {
            return Err(EvalError::InvalidInput("group tags must match query count".to_string()));
        }
    }
    if gold.iter().any(|&g| g >= candidates.len()) {
        return Err(EvalError::InvalidInput("gold index out of range".to_string()));
    }
    check_norms(queries)?;
    check_norms(candidates)?;

    let mut hits = 0usize;
    let mut group_hits: BTreeMap<String, usize> = BTreeMap::new();
    let mut group_counts: BTreeMap<String, usize> = BTreeMap::new();
    for (i, q) in queries.iter().enumerate() {
        let mut scored: Vec<(usize, f64)> = candidates
            .iter()
            .enumerate()
            .map(|(j, c)| (j, cosine(q, c)))
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        let hit = scored[..k].iter().any(|(j, _)| *j == gold[i]);
        if hit {
            hits += 1;
        }
        if let Some(g) = groups {
            let key = g[i].code().to_string();
            *group_counts.entry(key.clone()).or_insert(0) += 1;
            if hit {
                *group_hits.entry(key).or_insert(0) += 1;
            }
        }
    }
    let per_script = group_counts
        .iter()
        .map(|(key, n)| {
            let h = group_hits.get(key).copied().unwrap_or(0);
            (key.clone(), h as f64 / *n as f64)
        })
        .collect();
    Ok(RetrievalReport {
        k,
        n_queries: queries.len(),
        n_candidates: candidates.len(),
        pool_layer: 0,
        overall: hits as f64 / queries.len().max(1) as f64,
        per_script,
        per_script_counts: group_counts,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ScriptCentroidMatrix {
    pub scripts: Vec<ScriptTag>,
    /// Pairwise cosine between group centroids; symmetric, unit diagonal.
    pub raw: Vec<Vec<f64>>,
    /// Min-max rescaling of the off-diagonal raw entries into [0, 1]
    /// (display aid only; analysis uses `raw`).
    pub display: Vec<Vec<f64>>,
}

impl ScriptCentroidMatrix {
    pub fn raw_between(&self, a: ScriptTag, b: ScriptTag) -> Option<f64> {
        let ia = self.scripts.iter().position(|s| *s == a)?;
        let ib = self.scripts.iter().position(|s| *s == b)?;
        Some(self.raw[ia][ib])
    }

    /// Mean raw cosine over distinct script pairs.
    pub fn mean_off_diagonal(&self) -> f64 {
        let n = self.scripts.len();
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            for j in (i + 1)..n {
                sum += self.raw[i][j];
                count += 1;
            }
        }
        sum / count.max(1) as f64
    }
}

/// Per-script centroids (means of l2-normalized representations unless
/// `normalize_inputs` is false) and their pairwise cosine matrix.
pub fn script_centroids(
    reps: &[Vec<f64>],
    tags: &[ScriptTag],
    normalize_inputs: bool,
) -> Result<ScriptCentroidMatrix, EvalError> {
    if reps.len() != tags.len() {
        return Err(EvalError::InvalidInput("one tag per representation required".to_string()));
    }
    check_norms(reps)?;
    let mut groups: BTreeMap<ScriptTag, Vec<usize>> = BTreeMap::new();
    for (i, tag) in tags.iter().enumerate() {
        groups.entry(*tag).or_default().push(i);
    }
    if groups.len() < 2 {
        return Err(EvalError::InsufficientGroups {
            need: 2,
            found: groups.len(),
        });
    }
    let d = reps[0].len();
    let scripts: Vec<ScriptTag> = groups.keys().copied().collect();
    let mut centroids = Vec::with_capacity(scripts.len());
    for tag in &scripts {
        let mut c = vec![0.0f64; d];
        for &i in &groups[tag] {
            let r = if normalize_inputs {
                normalized(&reps[i])
            } else {
                reps[i].clone()
            };
            for (acc, v) in c.iter_mut().zip(&r) {
                *acc += v;
            }
        }
        let n = groups[tag].len() as f64;
        for v in c.iter_mut() {
            *v /= n;
        }
        if norm(&c) < 1e-12 {
            return Err(EvalError::DegenerateNorm { index: usize::MAX });
        }
        centroids.push(c);
    }

    let n = scripts.len();
    let mut raw = vec![vec![0.0f64; n]; n];
    for i in 0..n {
        for j in 0..n {
            raw[i][j] = cosine(&centroids[i], &centroids[j]);
        }
    }
    // Min-max over off-diagonal entries; a degenerate span maps to 1.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                lo = lo.min(raw[i][j]);
                hi = hi.max(raw[i][j]);
            }
        }
    }
    let span = hi - lo;
    let mut display = vec![vec![1.0f64; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                display[i][j] = if span > 0.0 { (raw[i][j] - lo) / span } else { 1.0 };
            }
        }
    }
    Ok(ScriptCentroidMatrix {
        scripts,
        raw,
        display,
    })
}

/// Contrastive-representation quality on the unit hypersphere.
///
/// Alignment: mean squared distance between normalized positive pairs
/// (lower is tighter). Uniformity: log mean Gaussian kernel
/// `exp(−2‖ĥi−ĥj‖²)` over all distinct pairs (lower is more spread out).
pub fn alignment_uniformity(
    reps: &[Vec<f64>],
    pair_of: &[usize],
) -> Result<(f64, f64), EvalError> {
    let n = reps.len();
    if n < 2 {
        return Err(EvalError::InvalidInput("need at least 2 representations".to_string()));
    }
    if pair_of.len() != n {
        return Err(EvalError::InvalidInput("pair map must cover every representation".to_string()));
    }
    for (i, &p) in pair_of.iter().enumerate() {
        if p >= n || p == i || pair_of[p] != i {
            return Err(EvalError::InvalidInput(
                "pair map must be an involution without fixed points".to_string(),
            ));
        }
    }
    check_norms(reps)?;
    let unit: Vec<Vec<f64>> = reps.iter().map(|r| normalized(r)).collect();

    let sq_dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
    };

    let mut align = 0.0;
    let mut pairs = 0usize;
    for (i, &p) in pair_of.iter().enumerate() {
        if i < p {
            align += sq_dist(&unit[i], &unit[p]);
            pairs += 1;
        }
    }
    align /= pairs as f64;

    let mut kernel = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        for j in (i + 1)..n {
            kernel += (-2.0 * sq_dist(&unit[i], &unit[j])).exp();
            count += 1;
        }
    }
    let uniformity = (kernel / count as f64).ln();
    Ok((align, uniformity))
}

#[derive(Debug, Clone, Serialize)]
pub struct GeometrySummary {
    pub centroids: ScriptCentroidMatrix,
    /// Mean raw centroid cosine over distinct script pairs; for a
    /// two-script corpus this is exactly the cross-script entry.
    pub cross_script_centroid: f64,
    pub alignment: f64,
    pub uniformity: f64,
}

/// Embed pair texts and transliterations, then compute centroid and
/// alignment/uniformity metrics. Transliterations count as Latin-script
/// group members.
pub fn geometry_on_pairs(
    params: &EncoderParams<f32>,
    vocab: &Vocab,
    pairs: &[SentencePair],
    pool_layer: usize,
    threads: usize,
) -> Result<GeometrySummary, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::InvalidInput("no pairs to evaluate".to_string()));
    }
    let mut sentences: Vec<String> = pairs.iter().map(|p| p.text.clone()).collect();
    sentences.extend(pairs.iter().map(|p| p.translit.clone()));
    let reps = embed_sentences(params, vocab, &sentences, pool_layer, threads)?;

    let mut tags: Vec<ScriptTag> = pairs.iter().map(|p| p.script).collect();
    tags.extend(std::iter::repeat(ScriptTag::Latn).take(pairs.len()));

    let centroids = script_centroids(&reps, &tags, true)?;
    let cross = centroids.mean_off_diagonal();

    let n = pairs.len();
    let pair_map: Vec<usize> = (0..2 * n).map(|i| (i + n) % (2 * n)).collect();
    let (alignment, uniformity) = alignment_uniformity(&reps, &pair_map)?;
    Ok(GeometrySummary {
        centroids,
        cross_script_centroid: cross,
        alignment,
        uniformity,
    })
}

/// Retrieval over sentence pairs: original texts are the queries, their
/// transliterations the candidates, gold is the identity map. When `rom`
/// is given, every sentence (query and candidate) is romanized before
/// encoding — the common-script evaluation mode.
pub fn retrieval_on_pairs(
    params: &EncoderParams<f32>,
    vocab: &Vocab,
    pairs: &[SentencePair],
    k: usize,
    threads: usize,
    rom: Option<&Romanizer>,
) -> Result<RetrievalReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::InvalidInput("no pairs to evaluate".to_string()));
    }
    let transform = |s: &str| match rom {
        Some(r) => r.romanize(s),
        None => s.to_string(),
    };
    let queries_text: Vec<String> = pairs.iter().map(|p| transform(&p.text)).collect();
    let cand_text: Vec<String> = pairs.iter().map(|p| transform(&p.translit)).collect();
    let pool_layer = params.config().pool_layer;
    let queries = embed_sentences(params, vocab, &queries_text, pool_layer, threads)?;
    let candidates = embed_sentences(params, vocab, &cand_text, pool_layer, threads)?;
    let gold: Vec<usize> = (0..pairs.len()).collect();
    let tags: Vec<ScriptTag> = pairs.iter().map(|p| p.script).collect();
    let mut report = retrieval_topk(&queries, &candidates, &gold, k, Some(&tags))?;
    report.pool_layer = pool_layer;
    Ok(report)
}

/// Common-script retrieval: romanize everything, then run the standard
/// path.
pub fn evaluate_transliterated(
    params: &EncoderParams<f32>,
    vocab: &Vocab,
    pairs: &[SentencePair],
    rom: &Romanizer,
    k: usize,
    threads: usize,
) -> Result<RetrievalReport, EvalError> {
    retrieval_on_pairs(params, vocab, pairs, k, threads, Some(rom))
}
