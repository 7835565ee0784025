//! Network blocks, the variant ladder, the deep-supervised loss, complexity
//! counting, whole-image inference and checkpoints.

mod blocks;
mod checkpoint;
mod complexity;
mod graph;
mod loss;
mod params;
mod predict;

pub use blocks::{Attention, AttentionKind, CfStage, CfTrace, ConvBlock, DecoderStage, PlainStage, PseBlock, PseTrace, SeBlock};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
pub use complexity::{count_complexity, reference_complexity, ComplexityReport, REFERENCE_EXTENT};
pub use graph::{build_model, ModelGraph, ModelSpec, Outputs, Variant};
pub use loss::{multiscale_targets, total_loss, LossConfig, LossTerms};
pub use params::{BatchNormLayer, Builder, ConvLayer, Ctx, ParamStore};
pub use predict::{predict_full, PatchGrid, PatchPredictor, PATCH, STRIDE};
