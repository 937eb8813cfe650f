use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::block::{Direction, Gate, SsmBlock};
use super::recon::ReconModel;
use super::stack::{FusionMode, SsmStack};
use crate::error::{Error, Result};

pub const PARAMS_FORMAT: &str = "sas-ssm-params";
pub const PARAMS_VERSION: u32 = 1;

/// Shape-tagged row-major array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            data.extend(m.row(r).iter());
        }
        Self {
            shape: vec![m.nrows(), m.ncols()],
            data,
        }
    }

    pub fn from_vector(v: &DVector<f64>) -> Self {
        Self {
            shape: vec![v.len()],
            data: v.iter().copied().collect(),
        }
    }

    pub fn to_matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        match self.shape[..] {
            [r, c] if r * c == self.data.len() => Ok(DMatrix::from_row_slice(r, c, &self.data)),
            _ => Err(Error::DimensionMismatch(format!("{name}: expected a matrix, got shape {:?}", self.shape))),
        }
    }

    pub fn to_vector(&self, name: &str) -> Result<DVector<f64>> {
        match self.shape[..] {
            [n] if n == self.data.len() => Ok(DVector::from_vec(self.data.clone())),
            _ => Err(Error::DimensionMismatch(format!("{name}: expected a vector, got shape {:?}", self.shape))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockDoc {
    pub gate: Gate,
    pub direction: Direction,
    pub a: Tensor,
    pub b: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsDoc {
    pub format: String,
    pub version: u32,
    pub embed_dim: usize,
    pub patch_size: usize,
    pub fusion: FusionMode,
    pub branch_p: Vec<BlockDoc>,
    pub branch_q: Vec<BlockDoc>,
    pub fusion_blocks: Vec<BlockDoc>,
    pub mask_token: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

fn block_doc(b: &SsmBlock) -> BlockDoc {
    BlockDoc {
        gate: b.gate,
        direction: b.direction,
        a: Tensor::from_matrix(&b.a),
        b: Tensor::from_matrix(&b.b),
        bias: Tensor::from_vector(&b.bias),
    }
}

fn block_from(doc: &BlockDoc) -> Result<SsmBlock> {
    Ok(SsmBlock {
        a: doc.a.to_matrix("a")?,
        b: doc.b.to_matrix("b")?,
        bias: doc.bias.to_vector("bias")?,
        gate: doc.gate,
        direction: doc.direction,
    })
}

impl ParamsDoc {
    pub fn from_model(model: &ReconModel) -> Self {
        Self {
            format: PARAMS_FORMAT.into(),
            version: PARAMS_VERSION,
            embed_dim: model.embed_dim(),
            patch_size: model.patch_size,
            fusion: model.fusion,
            branch_p: model.stack.branch_p.iter().map(block_doc).collect(),
            branch_q: model.stack.branch_q.iter().map(block_doc).collect(),
            fusion_blocks: model.stack.fusion.iter().map(block_doc).collect(),
            mask_token: Tensor::from_vector(&model.mask_token),
            head_w: Tensor::from_matrix(&model.head_w),
            head_b: Tensor::from_vector(&model.head_b),
        }
    }

    pub fn into_model(self) -> Result<ReconModel> {
        if self.format != PARAMS_FORMAT || self.version != PARAMS_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported parameter document {} v{}",
                self.format, self.version
            )));
        }
        let blocks = |docs: &[BlockDoc]| docs.iter().map(block_from).collect::<Result<Vec<_>>>();
        let stack = SsmStack {
            branch_p: blocks(&self.branch_p)?,
            branch_q: blocks(&self.branch_q)?,
            fusion: blocks(&self.fusion_blocks)?,
            embed_dim: self.embed_dim,
        };
        stack.validate()?;
        let model = ReconModel {
            stack,
            mask_token: self.mask_token.to_vector("mask_token")?,
            head_w: self.head_w.to_matrix("head_w")?,
            head_b: self.head_b.to_vector("head_b")?,
            patch_size: self.patch_size,
            fusion: self.fusion,
        };
        if model.mask_token.len() != self.embed_dim
            || model.head_w.shape() != (3 * self.patch_size, self.embed_dim)
            || model.head_b.len() != 3 * self.patch_size
        {
            return Err(Error::DimensionMismatch("head or mask token shape disagrees with the stack".into()));
        }
        Ok(model)
    }
}

pub fn model_to_json(model: &ReconModel) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ParamsDoc::from_model(model))?)
}

pub fn model_from_json(text: &str) -> Result<ReconModel> {
    serde_json::from_str::<ParamsDoc>(text)?.into_model()
}
