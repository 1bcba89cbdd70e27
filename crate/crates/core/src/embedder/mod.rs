//! Joint signboard/location embedding.
//!
//! A small convolutional extractor turns the signboard into an `l × d`
//! feature matrix, the location's geohash characters index a learned table to
//! give another `l × d` matrix, and cross-attention in both directions fuses
//! the two. Row means of the fused matrices are concatenated and normalized
//! to unit length, so cosine similarity is a plain inner product. Gradients
//! are derived by hand; see [`backward`].

mod blob;
pub mod gradcheck;
mod loss;
mod network;
mod train;

use ndarray::Array2;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

pub use blob::{PARAMS_MAGIC, PARAMS_VERSION};
pub use loss::{cosine, triplet_loss, triplet_loss_grad};
pub use network::{
    activation_signature, attention_weights, backward, cross_attention_backward,
    cross_attention_fuse, embed, forward, geo_features, image_features, Trace,
};
pub use train::{train, TrainConfig, TrainOutcome};

/// An `l × d` real matrix.
pub type FeatureMatrix = Array2<f64>;

pub(crate) const CONV1_OUT: usize = 8;
pub(crate) const CONV2_OUT: usize = 16;
/// Rows of the second feature map; each pooled position keeps them apart.
pub(crate) const CONV2_ROWS: usize = 8;
pub(crate) const CONV2_COLS: usize = 32;
pub(crate) const POOLED_DIM: usize = CONV2_OUT * CONV2_ROWS;
/// Geohash base-32 alphabet size.
pub(crate) const GEO_SYMBOLS: usize = 32;

/// Shape and margin of an embedder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedderHyper {
    /// Sequence length, equal to the geohash precision.
    pub l: usize,
    /// Model width; embeddings have `2 d` components.
    pub d: usize,
    /// Triplet margin.
    pub gamma: f64,
}

impl Default for EmbedderHyper {
    fn default() -> Self {
        Self {
            l: 8,
            d: 32,
            gamma: 0.2,
        }
    }
}

impl EmbedderHyper {
    pub fn validate(&self) -> Result<()> {
        if !(1..=12).contains(&self.l) {
            return param(format!(
                "l must be 1..=12 (a geohash precision), got {}",
                self.l
            ));
        }
        if self.d == 0 || self.d > 4096 {
            return param(format!("d must be 1..=4096, got {}", self.d));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return param(format!("gamma must be positive, got {}", self.gamma));
        }
        Ok(())
    }
}

/// Trainable weights. Every tensor is stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderParams {
    pub hyper: EmbedderHyper,
    /// `[8][3][3]` first-stage filters over the grayscale input.
    pub conv1_w: Vec<f64>,
    pub conv1_b: Vec<f64>,
    /// `[16][8][3][3]`.
    pub conv2_w: Vec<f64>,
    pub conv2_b: Vec<f64>,
    /// `[l][d][128]`: per-position map from a pooled column group to a
    /// feature row.
    pub proj_w: Vec<f64>,
    /// `[l][d]`.
    pub proj_b: Vec<f64>,
    /// `[32][l][d]`: embedding of geohash symbol `s` at position `p`.
    pub geo_table: Vec<f64>,
    /// Image-side projection, `d × d`.
    pub w: Array2<f64>,
    /// Geo-side projection, `d × d`.
    pub u: Array2<f64>,
}

/// Names of the parameter tensors in storage order.
pub const PARAM_BLOCKS: [&str; 9] = [
    "conv1_w",
    "conv1_b",
    "conv2_w",
    "conv2_b",
    "proj_w",
    "proj_b",
    "geo_table",
    "w",
    "u",
];

fn round_f32(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = *x as f32 as f64);
}

impl EmbedderParams {
    /// All-zero parameters of the given shape; also the gradient accumulator.
    pub fn zeros(hyper: EmbedderHyper) -> Result<Self> {
        hyper.validate()?;
        let EmbedderHyper { l, d, .. } = hyper;
        Ok(Self {
            hyper,
            conv1_w: vec![0.0; CONV1_OUT * 9],
            conv1_b: vec![0.0; CONV1_OUT],
            conv2_w: vec![0.0; CONV2_OUT * CONV1_OUT * 9],
            conv2_b: vec![0.0; CONV2_OUT],
            proj_w: vec![0.0; l * d * POOLED_DIM],
            proj_b: vec![0.0; l * d],
            geo_table: vec![0.0; GEO_SYMBOLS * l * d],
            w: Array2::zeros((d, d)),
            u: Array2::zeros((d, d)),
        })
    }

    /// Seeded initialization: filters and the feature map uniform with
    /// bound √(6 / fan_in), biases zero, geo table and projections uniform
    /// in ±1/√d. Values are rounded to `f32` precision so a saved blob
    /// reproduces them exactly.
    pub fn init(hyper: EmbedderHyper, seed: u64) -> Result<Self> {
        let mut p = Self::zeros(hyper)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fill = |v: &mut [f64], bound: f64| {
            v.iter_mut()
                .for_each(|x| *x = rng.gen_range(-bound..=bound))
        };
        let inv_sqrt_d = 1.0 / (hyper.d as f64).sqrt();
        fill(&mut p.conv1_w, (6.0f64 / 9.0).sqrt());
        fill(&mut p.conv2_w, (6.0 / (9.0 * CONV1_OUT as f64)).sqrt());
        fill(&mut p.proj_w, (6.0 / POOLED_DIM as f64).sqrt());
        fill(&mut p.geo_table, inv_sqrt_d);
        fill(p.w.as_slice_mut().expect("standard layout"), inv_sqrt_d);
        fill(p.u.as_slice_mut().expect("standard layout"), inv_sqrt_d);
        p.round_to_f32();
        Ok(p)
    }

    pub fn embedding_dim(&self) -> usize {
        2 * self.hyper.d
    }

    pub(crate) fn round_to_f32(&mut self) {
        for block in self.blocks_mut() {
            round_f32(block);
        }
    }

    /// Tensors in [`PARAM_BLOCKS`] order.
    pub fn blocks(&self) -> [&[f64]; 9] {
        [
            &self.conv1_w,
            &self.conv1_b,
            &self.conv2_w,
            &self.conv2_b,
            &self.proj_w,
            &self.proj_b,
            &self.geo_table,
            self.w.as_slice().expect("standard layout"),
            self.u.as_slice().expect("standard layout"),
        ]
    }

    pub fn blocks_mut(&mut self) -> [&mut [f64]; 9] {
        [
            &mut self.conv1_w,
            &mut self.conv1_b,
            &mut self.conv2_w,
            &mut self.conv2_b,
            &mut self.proj_w,
            &mut self.proj_b,
            &mut self.geo_table,
            self.w.as_slice_mut().expect("standard layout"),
            self.u.as_slice_mut().expect("standard layout"),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.iter().all(|x| x.is_finite()))
    }

    /// `self += scale · other`, block by block.
    pub(crate) fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (dst, src) in self.blocks_mut().into_iter().zip(other.blocks()) {
            dst.iter_mut().zip(src).for_each(|(a, b)| *a += scale * b);
        }
    }

    pub(crate) fn fill_zero(&mut self) {
        for block in self.blocks_mut() {
            block.fill(0.0);
        }
    }
}

/// Unit-length concatenation of the pooled image-conditioned geo features
/// and geo-conditioned image features.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalEmbedding(pub Vec<f64>);

impl MultimodalEmbedding {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.0.iter().map(|&x| x as f32).collect()
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gradients_match_finite_differences() {
        for (l, d) in [(2, 2), (3, 4)] {
            for seed in 0..2 {
                for b in gradcheck::check_gradients(l, d, seed, 6).unwrap() {
                    println!("l={l} d={d} seed={seed} {b:?}");
                    assert!(b.probes == 6 && b.max_rel_err <= 1e-4, "{b:?}");
                }
            }
        }
    }
}
