//! Vision Transformer inference with entropy-guided token pruning.
//!
//! The crate implements a dense-linear-algebra ViT forward pass whose patch
//! tokens can be pruned layerwise by information-theoretic importance:
//! patches whose attention is concentrated (low Shannon or Rényi attention
//! entropy) are kept, patches with diffuse attention are dropped. An analytic
//! FLOPs model and a wall-clock benchmark quantify the resulting
//! accuracy/compute trade-off.
//!
//! Modules:
//!
//! - [`linalg`] — minimal f64 matrix kernels (matmul, softmax, layer norm, GELU)
//! - [`weights`] — the `ENTPRUN1` named-tensor archive format
//! - [`image`] — PGM/PPM/raw-f32 image IO and normalization
//! - [`model`] — patchify, embedding, transformer blocks, classification head
//! - [`entropy`] — attention distributions, Shannon/Rényi entropy scoring
//! - [`prune`] — top-r selection, token gathering, the pruned forward pass
//! - [`flops`] — analytic cost model
//! - [`bench`] — throughput measurement
//! - [`sweep`] — criterion × keep-rate comparison grids
//! - [`heatmap`] — per-patch entropy heatmaps on the image grid
//! - [`synth`] — seeded random archives and images for tests and demos

pub mod bench;
pub mod entropy;
pub mod error;
pub mod flops;
pub mod heatmap;
pub mod image;
pub mod linalg;
pub mod model;
pub mod parallel;
pub mod prune;
pub mod sweep;
pub mod synth;
pub mod weights;

pub use error::{Error, Result};
pub use linalg::Matrix;
pub use model::{Model, ModelConfig, TokenMatrix};
pub use prune::{PruneSchedule, PruneTrace};
