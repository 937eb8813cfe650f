use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::block::{Direction, Gate, SsmBlock};
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Denominator floor so gradients that are zero up to rounding compare absolutely.
pub const REL_FLOOR: f64 = 1e-6;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub len: usize,
    pub dim: usize,
    pub gate: Gate,
    pub direction: Direction,
    pub max_rel_a: f64,
    pub max_rel_b: f64,
    pub max_rel_bias: f64,
    pub max_rel_input: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> f64 {
        self.max_rel_a.max(self.max_rel_b).max(self.max_rel_bias).max(self.max_rel_input)
    }
}

/// Compares analytic gradients of `Σ upstream ⊙ block(x)` with central differences
/// for every parameter and input coordinate.
pub fn gradcheck_block(block: &SsmBlock, x: &DMatrix<f64>, upstream: &DMatrix<f64>) -> Result<GradCheckReport> {
    let (_, cache) = block.forward_cached(x)?;
    let (grads, dx) = block.backward(&cache, upstream)?;
    let loss = |blk: &SsmBlock, x: &DMatrix<f64>| -> Result<f64> { Ok(blk.forward(x)?.dot(upstream)) };

    let mut max_a: f64 = 0.0;
    let mut max_b: f64 = 0.0;
    for which in 0..2 {
        let analytic = if which == 0 { &grads.a } else { &grads.b };
        for idx in 0..analytic.len() {
            let mut plus = block.clone();
            let mut minus = block.clone();
            let (mp, mm) = if which == 0 { (&mut plus.a, &mut minus.a) } else { (&mut plus.b, &mut minus.b) };
            mp[idx] += FD_STEP;
            mm[idx] -= FD_STEP;
            let fd = (loss(&plus, x)? - loss(&minus, x)?) / (2.0 * FD_STEP);
            let e = relative_error(analytic[idx], fd);
            if which == 0 {
                max_a = max_a.max(e);
            } else {
                max_b = max_b.max(e);
            }
        }
    }
    let mut max_bias: f64 = 0.0;
    for k in 0..block.bias.len() {
        let mut plus = block.clone();
        let mut minus = block.clone();
        plus.bias[k] += FD_STEP;
        minus.bias[k] -= FD_STEP;
        let fd = (loss(&plus, x)? - loss(&minus, x)?) / (2.0 * FD_STEP);
        max_bias = max_bias.max(relative_error(grads.bias[k], fd));
    }
    let mut max_input: f64 = 0.0;
    for idx in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[idx] += FD_STEP;
        xm[idx] -= FD_STEP;
        let fd = (loss(block, &xp)? - loss(block, &xm)?) / (2.0 * FD_STEP);
        max_input = max_input.max(relative_error(dx[idx], fd));
    }
    Ok(GradCheckReport {
        len: x.nrows(),
        dim: block.dim(),
        gate: block.gate,
        direction: block.direction,
        max_rel_a: max_a,
        max_rel_b: max_b,
        max_rel_bias: max_bias,
        max_rel_input: max_input,
    })
}

/// A random block, input and upstream gradient with `L <= 16`, `d <= 8`.
pub fn random_instance(seed: u64) -> (SsmBlock, DMatrix<f64>, DMatrix<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len = rng.random_range(2..=16);
    let d = rng.random_range(1..=8);
    let gate = if rng.random_bool(0.5) { Gate::Identity } else { Gate::Sigmoid };
    let direction = match rng.random_range(0..3) {
        0 => Direction::Forward,
        1 => Direction::Backward,
        _ => Direction::Bidirectional,
    };
    let a_norm = rng.random_range(0.2..1.2);
    let mut block = SsmBlock::init(d, gate, direction, a_norm, &mut rng);
    block.b = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    block.bias = DVector::from_fn(d, |_, _| rng.random_range(-0.5..0.5));
    let x = DMatrix::from_fn(len, d, |_, _| rng.random_range(-1.0..1.0));
    let up = DMatrix::from_fn(len, d, |_, _| rng.random_range(-1.0..1.0));
    (block, x, up)
}
