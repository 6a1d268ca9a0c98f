//! Batch-normalization classifier (BNC) head for source-free unsupervised
//! domain adaptation.
//!
//! The head sits on top of frozen, pre-extracted backbone features:
//!
//! ```text
//! FC(D→512) → LeakyReLU(0.2) → BatchNorm → Dropout(0.5) → FC(512→k) → BatchNorm → Softmax
//! ```
//!
//! It is trained with cross-entropy on a labeled source domain and then
//! adapted to an unlabeled target domain by minimizing prediction entropy,
//! with no access to source data during adaptation. Everything here is
//! implemented from scratch on a small dense [`Matrix`] type with
//! hand-derived gradients.

pub mod analysis;
mod bytes;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod linalg;
pub mod losses;
pub mod model;
pub mod training;

pub use error::{Error, FormatError, Result};
pub use linalg::{Matrix, SeededRng};
pub use model::{BncModel, ModelConfig};
