//! Multimodal multitask pretraining for polymer property prediction.
//!
//! The pipeline pairs two views of a polymer repeating unit:
//!
//! * a 1D view — the P-SMILES string, tokenized and fed to a bidirectional
//!   transformer encoder ([`seq_encoder`]);
//! * a 3D view — a conformer of the (star-substituted) repeating unit, fed
//!   to an SE(3)-invariant encoder with atom-to-pair attention
//!   ([`struct_encoder`]).
//!
//! Pretraining ([`pretrain`]) jointly optimizes masked-token prediction,
//! coordinate denoising, and InfoNCE alignment of the two embeddings.
//! [`finetune`] adds a regression head and a k-fold evaluation harness
//! reporting RMSE and R². Everything runs on a small self-contained f64
//! tensor/autodiff engine ([`numerics`]); no GPU or BLAS dependency.

pub mod cli;
pub mod config;
pub mod conformer;
pub mod finetune;
pub mod numerics;
pub mod pretrain;
pub mod psmiles;
pub mod seq_encoder;
pub mod struct_encoder;

pub use config::RunConfig;
