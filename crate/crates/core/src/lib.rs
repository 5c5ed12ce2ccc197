//! Cross-script sentence alignment at desk scale.
//!
//! The pipeline: romanize text with a rule engine, pair every sentence with
//! its Latin transliteration, train a small transformer encoder with a
//! combined masked-LM + contrastive objective on the pairs, then measure how
//! well representations from different scripts line up (retrieval accuracy,
//! script-centroid cosine, alignment/uniformity, PCA).

pub mod corpus;
pub mod encoder;
pub mod eval;
pub mod objectives;
pub mod romanizer;
pub mod seed;
pub mod synth;
pub mod tensor;
pub mod trainer;

pub use romanizer::{detect_script, Romanizer, ScriptTag};
pub use tensor::Tensor;
