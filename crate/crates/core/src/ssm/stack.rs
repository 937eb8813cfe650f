use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::block::{BlockCache, BlockGrads, Direction, Gate, SsmBlock};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StackConfig {
    pub embed_dim: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub gate: Gate,
    pub direction: Direction,
    /// Frobenius norm of each transition matrix at initialization.
    pub a_norm: f64,
    pub seed: u64,
}

impl Default for StackConfig {
    fn default() -> Self {
        Self {
            embed_dim: 256,
            enc_layers: 4,
            dec_layers: 2,
            gate: Gate::Sigmoid,
            direction: Direction::Forward,
            a_norm: 0.9,
            seed: 0,
        }
    }
}

/// How prompt and query branch outputs are combined before the shared fusion blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMode {
    /// Slot `2t` holds the prompt's `t`-th token, slot `2t+1` the query's.
    Interleave,
    /// All prompt slots followed by all query slots.
    Concat,
}

/// Prompt branch, query branch and shared fusion blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmStack {
    pub branch_p: Vec<SsmBlock>,
    pub branch_q: Vec<SsmBlock>,
    pub fusion: Vec<SsmBlock>,
    pub embed_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackGrads {
    pub branch_p: Vec<BlockGrads>,
    pub branch_q: Vec<BlockGrads>,
    pub fusion: Vec<BlockGrads>,
}

impl StackGrads {
    pub fn norm_squared(&self) -> f64 {
        self.branch_p
            .iter()
            .chain(&self.branch_q)
            .chain(&self.fusion)
            .map(BlockGrads::norm_squared)
            .sum()
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.branch_p.iter_mut().chain(&mut self.branch_q).chain(&mut self.fusion) {
            g.scale(s);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Prompt,
    Query,
}

/// Alternating prompt/query rows with the source of every slot.
#[derive(Debug, Clone, PartialEq)]
pub struct InterleavedSequence {
    pub tokens: DMatrix<f64>,
    /// (domain, position within that domain's sequence)
    pub origin: Vec<(Origin, usize)>,
}

pub fn interleave(prompt: &DMatrix<f64>, query: &DMatrix<f64>) -> Result<InterleavedSequence> {
    check_pair(prompt, query)?;
    let (len, d) = prompt.shape();
    let mut tokens = DMatrix::zeros(2 * len, d);
    let mut origin = Vec::with_capacity(2 * len);
    for t in 0..len {
        tokens.set_row(2 * t, &prompt.row(t));
        tokens.set_row(2 * t + 1, &query.row(t));
        origin.push((Origin::Prompt, t));
        origin.push((Origin::Query, t));
    }
    Ok(InterleavedSequence { tokens, origin })
}

impl InterleavedSequence {
    pub fn deinterleave(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        split_slots(&self.tokens, FusionMode::Interleave)
    }
}

fn check_pair(prompt: &DMatrix<f64>, query: &DMatrix<f64>) -> Result<()> {
    if prompt.shape() != query.shape() {
        return Err(Error::DimensionMismatch(format!(
            "prompt sequence is {}x{}, query sequence is {}x{}",
            prompt.nrows(),
            prompt.ncols(),
            query.nrows(),
            query.ncols()
        )));
    }
    Ok(())
}

fn join_slots(p: &DMatrix<f64>, q: &DMatrix<f64>, mode: FusionMode) -> DMatrix<f64> {
    let (len, d) = p.shape();
    let mut out = DMatrix::zeros(2 * len, d);
    for t in 0..len {
        let (ip, iq) = match mode {
            FusionMode::Interleave => (2 * t, 2 * t + 1),
            FusionMode::Concat => (t, len + t),
        };
        out.set_row(ip, &p.row(t));
        out.set_row(iq, &q.row(t));
    }
    out
}

fn split_slots(joined: &DMatrix<f64>, mode: FusionMode) -> (DMatrix<f64>, DMatrix<f64>) {
    let len = joined.nrows() / 2;
    let d = joined.ncols();
    let mut p = DMatrix::zeros(len, d);
    let mut q = DMatrix::zeros(len, d);
    for t in 0..len {
        let (ip, iq) = match mode {
            FusionMode::Interleave => (2 * t, 2 * t + 1),
            FusionMode::Concat => (t, len + t),
        };
        p.set_row(t, &joined.row(ip));
        q.set_row(t, &joined.row(iq));
    }
    (p, q)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HdmOutput {
    /// `2L x d` fusion output in slot order.
    pub fused: DMatrix<f64>,
    /// `L x d` query rows recovered from the fused output.
    pub query: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct HdmCache {
    mode: FusionMode,
    branch_p: Vec<BlockCache>,
    branch_q: Vec<BlockCache>,
    fusion: Vec<BlockCache>,
}

fn chain_forward(blocks: &[SsmBlock], x: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<BlockCache>)> {
    let mut h = x.clone();
    let mut caches = Vec::with_capacity(blocks.len());
    for blk in blocks {
        let (out, cache) = blk.forward_cached(&h)?;
        caches.push(cache);
        h = out;
    }
    Ok((h, caches))
}

fn chain_backward(blocks: &[SsmBlock], caches: &[BlockCache], upstream: DMatrix<f64>) -> Result<(Vec<BlockGrads>, DMatrix<f64>)> {
    if caches.len() != blocks.len() {
        return Err(Error::MissingCache);
    }
    let mut grads = Vec::with_capacity(blocks.len());
    let mut up = upstream;
    for (blk, cache) in blocks.iter().zip(caches).rev() {
        let (g, dx) = blk.backward(cache, &up)?;
        grads.push(g);
        up = dx;
    }
    grads.reverse();
    Ok((grads, up))
}

impl SsmStack {
    pub fn init(cfg: &StackConfig) -> Result<Self> {
        if cfg.embed_dim == 0 || cfg.enc_layers == 0 || cfg.dec_layers == 0 {
            return Err(Error::InvalidArgument("stack dimensions and layer counts must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut make = |n: usize| -> Vec<SsmBlock> {
            (0..n)
                .map(|_| SsmBlock::init(cfg.embed_dim, cfg.gate, cfg.direction, cfg.a_norm, &mut rng))
                .collect()
        };
        let branch_p = make(cfg.enc_layers);
        let branch_q = make(cfg.enc_layers);
        let fusion = make(cfg.dec_layers);
        Ok(Self {
            branch_p,
            branch_q,
            fusion,
            embed_dim: cfg.embed_dim,
        })
    }

    /// Every block a pass-through.
    pub fn identity(d: usize, enc_layers: usize, dec_layers: usize) -> Self {
        Self {
            branch_p: vec![SsmBlock::identity(d); enc_layers],
            branch_q: vec![SsmBlock::identity(d); enc_layers],
            fusion: vec![SsmBlock::identity(d); dec_layers],
            embed_dim: d,
        }
    }

    pub fn enc_layers(&self) -> usize {
        self.branch_p.len()
    }

    pub fn dec_layers(&self) -> usize {
        self.fusion.len()
    }

    pub fn blocks(&self) -> impl Iterator<Item = &SsmBlock> {
        self.branch_p.iter().chain(&self.branch_q).chain(&self.fusion)
    }

    pub fn validate(&self) -> Result<()> {
        if self.branch_p.len() != self.branch_q.len() {
            return Err(Error::DimensionMismatch("prompt and query branches differ in depth".into()));
        }
        if let Some(b) = self.blocks().find(|b| b.dim() != self.embed_dim || b.b.shape() != (self.embed_dim, self.embed_dim) || b.bias.len() != self.embed_dim) {
            return Err(Error::DimensionMismatch(format!(
                "block of dimension {} in a stack of dimension {}",
                b.dim(),
                self.embed_dim
            )));
        }
        if !self.blocks().all(SsmBlock::is_finite) {
            return Err(Error::InvalidArgument("non-finite stack parameters".into()));
        }
        Ok(())
    }

    pub fn forward(&self, prompt: &DMatrix<f64>, query: &DMatrix<f64>, mode: FusionMode) -> Result<HdmOutput> {
        Ok(self.forward_cached(prompt, query, mode)?.0)
    }

    /// Independent branches, then the shared fusion blocks over the joined slots.
    pub fn forward_cached(&self, prompt: &DMatrix<f64>, query: &DMatrix<f64>, mode: FusionMode) -> Result<(HdmOutput, HdmCache)> {
        check_pair(prompt, query)?;
        if prompt.ncols() != self.embed_dim {
            return Err(Error::DimensionMismatch(format!(
                "sequence width {} does not match embed dim {}",
                prompt.ncols(),
                self.embed_dim
            )));
        }
        let (zp, cp) = chain_forward(&self.branch_p, prompt)?;
        let (zq, cq) = chain_forward(&self.branch_q, query)?;
        let joined = join_slots(&zp, &zq, mode);
        let (fused, cf) = chain_forward(&self.fusion, &joined)?;
        let (_, q) = split_slots(&fused, mode);
        Ok((
            HdmOutput { fused, query: q },
            HdmCache {
                mode,
                branch_p: cp,
                branch_q: cq,
                fusion: cf,
            },
        ))
    }

    /// Gradients given an upstream gradient on the query rows only.
    /// Returns parameter gradients and the gradients for the prompt and query inputs.
    pub fn backward(&self, cache: &HdmCache, query_upstream: &DMatrix<f64>) -> Result<(StackGrads, DMatrix<f64>, DMatrix<f64>)> {
        let zeros = DMatrix::zeros(query_upstream.nrows(), query_upstream.ncols());
        let up = join_slots(&zeros, query_upstream, cache.mode);
        let (fusion, djoined) = chain_backward(&self.fusion, &cache.fusion, up)?;
        let (dzp, dzq) = split_slots(&djoined, cache.mode);
        let (branch_p, dp) = chain_backward(&self.branch_p, &cache.branch_p, dzp)?;
        let (branch_q, dq) = chain_backward(&self.branch_q, &cache.branch_q, dzq)?;
        Ok((StackGrads { branch_p, branch_q, fusion }, dp, dq))
    }

    pub fn apply_update(&mut self, grads: &StackGrads, lr: f64) {
        for (blk, g) in self.branch_p.iter_mut().zip(&grads.branch_p) {
            blk.apply_update(g, lr);
        }
        for (blk, g) in self.branch_q.iter_mut().zip(&grads.branch_q) {
            blk.apply_update(g, lr);
        }
        for (blk, g) in self.fusion.iter_mut().zip(&grads.fusion) {
            blk.apply_update(g, lr);
        }
    }
}

/// Interleaved fusion per the hierarchical domain-aware model.
pub fn hdm_forward(stack: &SsmStack, prompt: &DMatrix<f64>, query: &DMatrix<f64>) -> Result<HdmOutput> {
    stack.forward(prompt, query, FusionMode::Interleave)
}

/// Same pipeline with plain concatenation before fusion.
pub fn hdm_concat_baseline(stack: &SsmStack, prompt: &DMatrix<f64>, query: &DMatrix<f64>) -> Result<HdmOutput> {
    stack.forward(prompt, query, FusionMode::Concat)
}
