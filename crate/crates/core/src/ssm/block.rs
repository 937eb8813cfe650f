use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Gate {
    Identity,
    Sigmoid,
}

impl Gate {
    fn apply(self, v: f64) -> f64 {
        match self {
            Gate::Identity => v,
            Gate::Sigmoid => 1.0 / (1.0 + (-v).exp()),
        }
    }

    /// Derivative expressed through the gate output.
    fn slope_from_output(self, out: f64) -> f64 {
        match self {
            Gate::Identity => 1.0,
            Gate::Sigmoid => out * (1.0 - out),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
    /// Forward and backward scans with shared parameters, summed.
    Bidirectional,
}

impl Direction {
    fn passes(self) -> &'static [bool] {
        match self {
            Direction::Forward => &[false],
            Direction::Backward => &[true],
            Direction::Bidirectional => &[false, true],
        }
    }
}

/// `z_t = g(A z_{t-1} + B x_t + b)` with `z_0 = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsmBlock {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub gate: Gate,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl BlockGrads {
    pub fn zeros(d: usize) -> Self {
        Self {
            a: DMatrix::zeros(d, d),
            b: DMatrix::zeros(d, d),
            bias: DVector::zeros(d),
        }
    }

    pub fn norm_squared(&self) -> f64 {
        self.a.norm_squared() + self.b.norm_squared() + self.bias.norm_squared()
    }

    pub fn scale(&mut self, s: f64) {
        self.a *= s;
        self.b *= s;
        self.bias *= s;
    }
}

/// States saved by a forward pass, column `t` holding the state at position `t`.
#[derive(Debug, Clone)]
pub struct BlockCache {
    input_t: DMatrix<f64>,
    states: Vec<(bool, DMatrix<f64>)>,
}

impl SsmBlock {
    /// `A = 0`, `B = I`, `b = 0`, identity gate: a memoryless pass-through.
    pub fn identity(d: usize) -> Self {
        Self {
            a: DMatrix::zeros(d, d),
            b: DMatrix::identity(d, d),
            bias: DVector::zeros(d),
            gate: Gate::Identity,
            direction: Direction::Forward,
        }
    }

    /// Random orthogonal `A` rescaled to Frobenius norm `a_norm`, `B = I`, `b = 0`.
    pub fn init<R: Rng + ?Sized>(d: usize, gate: Gate, direction: Direction, a_norm: f64, rng: &mut R) -> Self {
        let g = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        let a = &q * (a_norm / q.norm());
        Self {
            a,
            b: DMatrix::identity(d, d),
            bias: DVector::zeros(d),
            gate,
            direction,
        }
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().chain(self.b.iter()).chain(self.bias.iter()).all(|v| v.is_finite())
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.ncols() != self.dim() {
            return Err(Error::DimensionMismatch(format!(
                "sequence width {} does not match block dimension {}",
                x.ncols(),
                self.dim()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward_cached(x)?.0)
    }

    /// Runs the recurrence on an `L x d` sequence and keeps what the backward pass needs.
    pub fn forward_cached(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, BlockCache)> {
        self.check_input(x)?;
        let (len, d) = x.shape();
        let input_t = x.transpose();
        // B x_t + b for every position at once.
        let mut drive = &self.b * &input_t;
        for mut col in drive.column_iter_mut() {
            col += &self.bias;
        }
        let mut out_t = DMatrix::zeros(d, len);
        let mut states = Vec::with_capacity(2);
        for &reverse in self.direction.passes() {
            let mut z = DMatrix::zeros(d, len);
            let mut prev = DVector::zeros(d);
            for step in 0..len {
                let t = if reverse { len - 1 - step } else { step };
                let mut pre = drive.column(t).clone_owned();
                pre.gemv(1.0, &self.a, &prev, 1.0);
                pre.apply(|v| *v = self.gate.apply(*v));
                if pre.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite { step: t });
                }
                z.set_column(t, &pre);
                prev = pre;
            }
            out_t += &z;
            states.push((reverse, z));
        }
        Ok((out_t.transpose(), BlockCache { input_t, states }))
    }

    /// Reverse-mode gradients of `Σ upstream ⊙ output` with respect to the
    /// parameters and the input sequence.
    pub fn backward(&self, cache: &BlockCache, upstream: &DMatrix<f64>) -> Result<(BlockGrads, DMatrix<f64>)> {
        let d = self.dim();
        let len = cache.input_t.ncols();
        if cache.input_t.nrows() != d || upstream.shape() != (len, d) || cache.states.len() != self.direction.passes().len() {
            return Err(Error::MissingCache);
        }
        let up_t = upstream.transpose();
        let mut grads = BlockGrads::zeros(d);
        let mut dpre_all = DMatrix::zeros(d, len);
        let at = self.a.transpose();
        for (reverse, z) in &cache.states {
            let mut carry = DVector::zeros(d);
            for step in (0..len).rev() {
                let t = if *reverse { len - 1 - step } else { step };
                let mut dpre = up_t.column(t) + &carry;
                for k in 0..d {
                    dpre[k] *= self.gate.slope_from_output(z[(k, t)]);
                }
                if step > 0 {
                    let prev_t = if *reverse { t + 1 } else { t - 1 };
                    grads.a.ger(1.0, &dpre, &z.column(prev_t), 1.0);
                }
                carry = &at * &dpre;
                let mut col = dpre_all.column_mut(t);
                col += &dpre;
            }
        }
        grads.b = &dpre_all * cache.input_t.transpose();
        grads.bias = dpre_all.column_sum();
        let dx = (self.b.transpose() * &dpre_all).transpose();
        Ok((grads, dx))
    }

    pub fn apply_update(&mut self, grads: &BlockGrads, lr: f64) {
        self.a -= &grads.a * lr;
        self.b -= &grads.b * lr;
        self.bias -= &grads.bias * lr;
    }
}
