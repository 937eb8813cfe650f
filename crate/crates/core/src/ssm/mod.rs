//! Toy state-space recurrence, hierarchical prompt/query fusion and the
//! masked point-patch reconstruction task built on top of them.

mod block;
mod gradcheck;
mod params;
mod recon;
mod stack;

pub use block::{BlockCache, BlockGrads, Direction, Gate, SsmBlock};
pub use gradcheck::{gradcheck_block, random_instance, relative_error, GradCheckReport, FD_STEP, REL_FLOOR};
pub use params::{model_from_json, model_to_json, BlockDoc, ParamsDoc, Tensor, PARAMS_FORMAT, PARAMS_VERSION};
pub use recon::{
    chamfer_with_grad, cosine_lr, episode_mask_seed, evaluate, fibonacci_sphere, masked_reconstruct,
    masked_reconstruct_grad, select_mask, train_toy, Episode, ModelConfig, ModelGrads, ReconModel, ReconOutput,
    TrainConfig,
};
pub use stack::{
    hdm_concat_baseline, hdm_forward, interleave, FusionMode, HdmCache, HdmOutput, InterleavedSequence, Origin,
    SsmStack, StackConfig, StackGrads,
};

use nalgebra::DMatrix;

use crate::error::Result;

/// Forward pass of a single block.
pub fn ssm_forward(block: &SsmBlock, sequence: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    block.forward(sequence)
}

/// Gradients of `Σ upstream ⊙ ssm_forward(block, ·)` for a cached forward pass.
pub fn ssm_backward(block: &SsmBlock, cache: &BlockCache, upstream: &DMatrix<f64>) -> Result<(BlockGrads, DMatrix<f64>)> {
    block.backward(cache, upstream)
}
