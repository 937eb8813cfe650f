use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::stack::{FusionMode, SsmStack, StackConfig, StackGrads};
use crate::error::{Error, Result};
use crate::pointcloud::{Point3, TokenSet};
use crate::serialize::SasSequence;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub stack: StackConfig,
    pub patch_size: usize,
    pub fusion: FusionMode,
    /// Standard deviation of the initial head weights.
    pub head_init_std: f64,
    /// Radius of the sphere the initial head bias points lie on.
    pub head_init_radius: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            stack: StackConfig::default(),
            patch_size: 32,
            fusion: FusionMode::Interleave,
            head_init_std: 0.01,
            head_init_radius: 0.05,
        }
    }
}

/// Stack plus the learned mask token and the linear point-prediction head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconModel {
    pub stack: SsmStack,
    pub mask_token: DVector<f64>,
    /// `3S x d`; output row `3k + c` is coordinate `c` of predicted point `k`.
    pub head_w: DMatrix<f64>,
    pub head_b: DVector<f64>,
    pub patch_size: usize,
    pub fusion: FusionMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub stack: StackGrads,
    pub mask_token: DVector<f64>,
    pub head_w: DMatrix<f64>,
    pub head_b: DVector<f64>,
}

impl ModelGrads {
    pub fn norm(&self) -> f64 {
        (self.stack.norm_squared() + self.mask_token.norm_squared() + self.head_w.norm_squared() + self.head_b.norm_squared()).sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        self.stack.scale(s);
        self.mask_token *= s;
        self.head_w *= s;
        self.head_b *= s;
    }
}

/// Points spread evenly over a sphere of the given radius.
pub fn fibonacci_sphere(n: usize, radius: f64) -> Vec<Point3> {
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..n)
        .map(|i| {
            let y = if n == 1 { 0.0 } else { 1.0 - 2.0 * i as f64 / (n - 1) as f64 };
            let r = (1.0 - y * y).max(0.0).sqrt();
            let th = golden * i as f64;
            Point3::new(r * th.cos(), y, r * th.sin()) * radius
        })
        .collect()
}

impl ReconModel {
    pub fn init(cfg: &ModelConfig) -> Result<Self> {
        if cfg.patch_size == 0 {
            return Err(Error::InvalidArgument("patch size must be positive".into()));
        }
        let stack = SsmStack::init(&cfg.stack)?;
        let d = cfg.stack.embed_dim;
        let rows = 3 * cfg.patch_size;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.stack.seed.wrapping_add(0x9e37_79b9));
        let head_w = DMatrix::from_fn(rows, d, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal) * cfg.head_init_std);
        let sphere = fibonacci_sphere(cfg.patch_size, cfg.head_init_radius);
        let head_b = DVector::from_iterator(rows, sphere.iter().flat_map(|p| [p.x, p.y, p.z]));
        Ok(Self {
            stack,
            mask_token: DVector::zeros(d),
            head_w,
            head_b,
            patch_size: cfg.patch_size,
            fusion: cfg.fusion,
        })
    }

    pub fn embed_dim(&self) -> usize {
        self.stack.embed_dim
    }

    pub fn predict_points(&self, feature: &DVector<f64>) -> Vec<Point3> {
        let out = &self.head_w * feature + &self.head_b;
        (0..self.patch_size)
            .map(|k| Point3::new(out[3 * k], out[3 * k + 1], out[3 * k + 2]))
            .collect()
    }

    pub fn apply_update(&mut self, grads: &ModelGrads, lr: f64) {
        self.stack.apply_update(&grads.stack, lr);
        self.mask_token -= &grads.mask_token * lr;
        self.head_w -= &grads.head_w * lr;
        self.head_b -= &grads.head_b * lr;
    }

    /// Order-sensitive digest of every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv64::new();
        for blk in self.stack.blocks() {
            h.write_all(blk.a.iter());
            h.write_all(blk.b.iter());
            h.write_all(blk.bias.iter());
        }
        h.write_all(self.mask_token.iter());
        h.write_all(self.head_w.iter());
        h.write_all(self.head_b.iter());
        h.finish()
    }
}

struct Fnv64(u64);

impl Fnv64 {
    fn new() -> Self {
        Fnv64(0xcbf2_9ce4_8422_2325)
    }

    fn write_all<'a>(&mut self, values: impl Iterator<Item = &'a f64>) {
        for v in values {
            for byte in v.to_bits().to_le_bytes() {
                self.0 ^= u64::from(byte);
                self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

/// One reconstruction problem: a serialized prompt and a query whose tokens get masked.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub prompt: SasSequence,
    pub query_tokens: TokenSet,
    /// Slot layout of the query; its features are the unmasked query features.
    pub query: SasSequence,
}

impl Episode {
    pub fn new(prompt: SasSequence, query_tokens: TokenSet, query: SasSequence) -> Result<Self> {
        if prompt.len() != query.len() {
            return Err(Error::DimensionMismatch(format!(
                "prompt sequence has {} slots, query sequence {}",
                prompt.len(),
                query.len()
            )));
        }
        if query.token_count() != query_tokens.len() {
            return Err(Error::DimensionMismatch("query layout does not cover the query tokens".into()));
        }
        Ok(Self { prompt, query_tokens, query })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconOutput {
    pub masked_tokens: Vec<usize>,
    pub predictions: Vec<Vec<Point3>>,
    pub loss: f64,
}

/// `⌈ratio·G⌉` distinct tokens chosen by a seeded shuffle, ascending.
pub fn select_mask(g: usize, ratio: f64, seed: u64) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("mask ratio {ratio} must lie in (0, 1)")));
    }
    // Products like 0.7 * 10 land just above the integer.
    let count = (ratio * g as f64 * (1.0 - 1e-12)).ceil() as usize;
    if count == 0 || count >= g {
        return Err(Error::InvalidArgument(format!(
            "mask ratio {ratio} masks {count} of {g} tokens"
        )));
    }
    let mut idx: Vec<usize> = (0..g).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut chosen = idx[..count].to_vec();
    chosen.sort_unstable();
    Ok(chosen)
}

/// Symmetric Chamfer distance and its gradient with respect to `pred`.
pub fn chamfer_with_grad(pred: &[Point3], target: &[Point3]) -> Result<(f64, Vec<Point3>)> {
    if pred.is_empty() || target.is_empty() {
        return Err(Error::Empty("chamfer point set"));
    }
    let nearest = |p: &Point3, set: &[Point3]| -> (usize, f64) {
        let mut best = (0, f64::INFINITY);
        for (j, q) in set.iter().enumerate() {
            let d = (p - q).norm_squared();
            if d < best.1 {
                best = (j, d);
            }
        }
        best
    };
    let (n, m) = (pred.len() as f64, target.len() as f64);
    let mut grad = vec![Point3::zeros(); pred.len()];
    let mut fwd = 0.0;
    for (i, p) in pred.iter().enumerate() {
        let (j, d) = nearest(p, target);
        fwd += d;
        grad[i] += (p - target[j]) * (2.0 / n);
    }
    let mut bwd = 0.0;
    for q in target {
        let (i, d) = nearest(q, pred);
        bwd += d;
        grad[i] += (pred[i] - q) * (2.0 / m);
    }
    Ok((fwd / n + bwd / m, grad))
}

fn masked_features(model: &ReconModel, tokens: &TokenSet, masked: &[usize]) -> DMatrix<f64> {
    let mut x = tokens.features.clone();
    for &t in masked {
        x.set_row(t, &model.mask_token.transpose());
    }
    x
}

fn check_episode(model: &ReconModel, ep: &Episode) -> Result<()> {
    if ep.query_tokens.feature_dim() != model.embed_dim() {
        return Err(Error::DimensionMismatch(format!(
            "token features have width {}, model expects {}",
            ep.query_tokens.feature_dim(),
            model.embed_dim()
        )));
    }
    if ep.query_tokens.local_points.iter().any(|p| p.len() != model.patch_size) {
        return Err(Error::DimensionMismatch(format!(
            "model predicts patches of {} points",
            model.patch_size
        )));
    }
    Ok(())
}

/// Masks query tokens, runs the fused model and scores the predicted patches.
pub fn masked_reconstruct(model: &ReconModel, ep: &Episode, mask_ratio: f64, seed: u64) -> Result<ReconOutput> {
    Ok(reconstruct(model, ep, mask_ratio, seed, false)?.0)
}

/// Loss and exact gradients for every trainable parameter.
pub fn masked_reconstruct_grad(model: &ReconModel, ep: &Episode, mask_ratio: f64, seed: u64) -> Result<(ReconOutput, ModelGrads)> {
    let (out, grads) = reconstruct(model, ep, mask_ratio, seed, true)?;
    Ok((out, grads.expect("gradients requested")))
}

fn reconstruct(model: &ReconModel, ep: &Episode, mask_ratio: f64, seed: u64, want_grad: bool) -> Result<(ReconOutput, Option<ModelGrads>)> {
    check_episode(model, ep)?;
    let g = ep.query_tokens.len();
    let masked = select_mask(g, mask_ratio, seed)?;
    let x = masked_features(model, &ep.query_tokens, &masked);
    let query_seq = ep.query.regather(&x)?;
    let (out, cache) = model.stack.forward_cached(&ep.prompt.features, &query_seq.features, model.fusion)?;

    let slots = ep.query.slot_tokens();
    let mut slots_of = vec![Vec::new(); g];
    for (s, &t) in slots.iter().enumerate() {
        slots_of[t].push(s);
    }

    let d = model.embed_dim();
    let scale = 1.0 / masked.len() as f64;
    let mut loss = 0.0;
    let mut predictions = Vec::with_capacity(masked.len());
    let mut d_query = DMatrix::zeros(out.query.nrows(), d);
    let mut d_w = DMatrix::zeros(model.head_w.nrows(), d);
    let mut d_b = DVector::zeros(model.head_b.len());
    for &t in &masked {
        if slots_of[t].is_empty() {
            return Err(Error::InvalidArgument(format!("masked token {t} never appears in the sequence")));
        }
        let mut pooled = DVector::zeros(d);
        for &s in &slots_of[t] {
            pooled += out.query.row(s).transpose();
        }
        pooled /= slots_of[t].len() as f64;
        let pred = model.predict_points(&pooled);
        let (l, gp) = chamfer_with_grad(&pred, &ep.query_tokens.local_points[t])?;
        loss += l * scale;
        predictions.push(pred);
        if want_grad {
            let dout = DVector::from_iterator(d_b.len(), gp.iter().flat_map(|p| [p.x, p.y, p.z])) * scale;
            d_b += &dout;
            d_w.ger(1.0, &dout, &pooled, 1.0);
            let dpooled = model.head_w.transpose() * &dout / slots_of[t].len() as f64;
            for &s in &slots_of[t] {
                let mut row = d_query.row_mut(s);
                row += dpooled.transpose();
            }
        }
    }
    if !loss.is_finite() {
        return Err(Error::NonFinite { step: 0 });
    }
    let output = ReconOutput {
        masked_tokens: masked.clone(),
        predictions,
        loss,
    };
    if !want_grad {
        return Ok((output, None));
    }
    let (stack_grads, _, dq) = model.stack.backward(&cache, &d_query)?;
    let mut d_mask = DVector::zeros(d);
    for &t in &masked {
        for &s in &slots_of[t] {
            d_mask += dq.row(s).transpose();
        }
    }
    Ok((
        output,
        Some(ModelGrads {
            stack: stack_grads,
            mask_token: d_mask,
            head_w: d_w,
            head_b: d_b,
        }),
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Peak learning rate; decays to zero along a half cosine.
    pub lr: f64,
    pub mask_ratio: f64,
    pub seed: u64,
    /// Rescale gradients whose global norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            lr: 1e-4,
            mask_ratio: 0.7,
            seed: 0,
            clip_norm: None,
        }
    }
}

pub fn cosine_lr(base: f64, epoch: usize, epochs: usize) -> f64 {
    if epochs == 0 {
        return base;
    }
    0.5 * base * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs as f64).cos())
}

/// Mask seed for an episode; fixed across epochs so `lr = 0` gives a flat trace.
pub fn episode_mask_seed(seed: u64, episode: usize) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(episode as u64)
}

/// Plain gradient descent over the corpus, one step per episode. Returns the
/// mean training loss of every epoch.
pub fn train_toy(model: &mut ReconModel, corpus: &[Episode], cfg: &TrainConfig) -> Result<Vec<f64>> {
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(cfg.lr, epoch, cfg.epochs);
        let mut total = 0.0;
        for (i, ep) in corpus.iter().enumerate() {
            let (out, mut grads) = match masked_reconstruct_grad(model, ep, cfg.mask_ratio, episode_mask_seed(cfg.seed, i)) {
                Ok(r) => r,
                Err(Error::NonFinite { .. }) => return Err(Error::Divergence { epoch }),
                Err(e) => return Err(e),
            };
            if let Some(max) = cfg.clip_norm {
                let n = grads.norm();
                if n > max {
                    grads.scale(max / n);
                }
            }
            total += out.loss;
            model.apply_update(&grads, lr);
        }
        let mean = total / corpus.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        trace.push(mean);
    }
    Ok(trace)
}

/// Mean masked-reconstruction loss without touching the model.
pub fn evaluate(model: &ReconModel, corpus: &[Episode], mask_ratio: f64, seed: u64) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Empty("evaluation corpus"));
    }
    let mut total = 0.0;
    for (i, ep) in corpus.iter().enumerate() {
        total += masked_reconstruct(model, ep, mask_ratio, episode_mask_seed(seed, i))?.loss;
    }
    Ok(total / corpus.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::serialize::{build_sas_sequence, SerializationOrder, Strategy};
    use crate::ssm::{Direction, Gate};

    fn order(strategy: Strategy, permutation: Vec<usize>) -> SerializationOrder {
        SerializationOrder { strategy, permutation, root: None, scores: None }
    }

    fn token_set(g: usize, s: usize, d: usize, seed: u64) -> TokenSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        TokenSet {
            center_indices: (0..g).collect(),
            centers: (0..g).map(|_| Point3::new(rng.random(), rng.random(), rng.random())).collect(),
            patches: vec![(0..s).collect(); g],
            local_points: (0..g)
                .map(|_| (0..s).map(|_| Point3::new(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1))).collect())
                .collect(),
            features: DMatrix::from_fn(g, d, |_, _| rng.random_range(-1.0..1.0)),
        }
    }

    fn episode(g: usize, s: usize, d: usize, seed: u64) -> Episode {
        let p = token_set(g, s, d, seed);
        let q = token_set(g, s, d, seed + 1);
        let a = order(Strategy::CdsSpectral, (0..g).collect());
        let b = order(Strategy::Gcs, (0..g).rev().collect());
        let ps = build_sas_sequence(&p.features, &a, &b).unwrap();
        let qs = build_sas_sequence(&q.features, &b, &a).unwrap();
        Episode::new(ps, q, qs).unwrap()
    }

    fn small_model(d: usize, s: usize, fusion: FusionMode) -> ReconModel {
        let cfg = ModelConfig {
            stack: StackConfig { embed_dim: d, enc_layers: 1, dec_layers: 1, gate: Gate::Sigmoid, direction: Direction::Forward, a_norm: 0.9, seed: 4 },
            patch_size: s,
            fusion,
            ..Default::default()
        };
        let mut m = ReconModel::init(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        m.mask_token = DVector::from_fn(d, |_, _| rng.random_range(-0.5..0.5));
        m
    }

    #[test]
    fn mask_count_rounding() {
        assert_eq!(select_mask(32, 0.7, 1).unwrap().len(), 23);
        assert_eq!(select_mask(10, 0.7, 1).unwrap().len(), 7);
        assert!(select_mask(10, 0.01, 1).is_ok());
        assert!(select_mask(1, 0.5, 1).is_err());
        assert!(select_mask(10, 0.0, 1).is_err());
        assert_eq!(select_mask(20, 0.5, 3).unwrap(), select_mask(20, 0.5, 3).unwrap());
    }

    #[test]
    fn chamfer_grad_matches_fd() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pred: Vec<Point3> = (0..7).map(|_| Point3::new(rng.random(), rng.random(), rng.random())).collect();
        let target: Vec<Point3> = (0..9).map(|_| Point3::new(rng.random(), rng.random(), rng.random())).collect();
        let (l, g) = chamfer_with_grad(&pred, &target).unwrap();
        assert!((l - crate::metrics::chamfer_distance(&pred, &target).unwrap()).abs() < 1e-14);
        let h = 1e-6;
        for i in 0..7 {
            for c in 0..3 {
                let mut p = pred.clone();
                p[i][c] += h;
                let mut m = pred.clone();
                m[i][c] -= h;
                let fd = (chamfer_with_grad(&p, &target).unwrap().0 - chamfer_with_grad(&m, &target).unwrap().0) / (2.0 * h);
                assert!((fd - g[i][c]).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn teacher_forced_head_gives_zero_loss() {
        let ep = episode(4, 5, 16, 1);
        let mut m = small_model(16, 5, FusionMode::Interleave);
        // With 0.25 of 4 tokens exactly one token is masked.
        let masked = select_mask(4, 0.25, 9).unwrap();
        assert_eq!(masked.len(), 1);
        m.head_w.fill(0.0);
        let target = &ep.query_tokens.local_points[masked[0]];
        m.head_b = DVector::from_iterator(15, target.iter().flat_map(|p| [p.x, p.y, p.z]));
        let out = masked_reconstruct(&m, &ep, 0.25, 9).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for fusion in [FusionMode::Interleave, FusionMode::Concat] {
            let ep = episode(6, 4, 16, 3);
            let m = small_model(16, 4, fusion);
            let (_, g) = masked_reconstruct_grad(&m, &ep, 0.5, 5).unwrap();
            let loss = |m: &ReconModel| masked_reconstruct(m, &ep, 0.5, 5).unwrap().loss;
            let h = 1e-6;
            let check = |analytic: f64, plus: ReconModel, minus: ReconModel| {
                let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
                assert!((fd - analytic).abs() <= 1e-6 * fd.abs().max(1e-3), "{fd} vs {analytic}");
            };
            let bump = |f: &dyn Fn(&mut ReconModel, f64)| {
                let mut p = m.clone();
                f(&mut p, h);
                let mut q = m.clone();
                f(&mut q, -h);
                (p, q)
            };
            let (p, q) = bump(&|m, e| m.head_w[(3, 2)] += e);
            check(g.head_w[(3, 2)], p, q);
            let (p, q) = bump(&|m, e| m.head_b[7] += e);
            check(g.head_b[7], p, q);
            let (p, q) = bump(&|m, e| m.mask_token[5] += e);
            check(g.mask_token[5], p, q);
            let (p, q) = bump(&|m, e| m.stack.branch_p[0].a[(1, 4)] += e);
            check(g.stack.branch_p[0].a[(1, 4)], p, q);
            let (p, q) = bump(&|m, e| m.stack.branch_q[0].b[(0, 0)] += e);
            check(g.stack.branch_q[0].b[(0, 0)], p, q);
            let (p, q) = bump(&|m, e| m.stack.fusion[0].bias[2] += e);
            check(g.stack.fusion[0].bias[2], p, q);
        }
    }

    #[test]
    fn small_step_decreases_loss() {
        let ep = episode(8, 6, 16, 5);
        let mut m = small_model(16, 6, FusionMode::Interleave);
        let (before, g) = masked_reconstruct_grad(&m, &ep, 0.7, 1).unwrap();
        m.apply_update(&g, 1e-4);
        let after = masked_reconstruct(&m, &ep, 0.7, 1).unwrap();
        assert!(after.loss < before.loss);
    }

    #[test]
    fn zero_lr_gives_flat_trace_and_seeds_repeat() {
        let corpus: Vec<Episode> = (0..3).map(|i| episode(6, 4, 16, 10 + i)).collect();
        let mut m = small_model(16, 4, FusionMode::Interleave);
        let before = m.checksum();
        let cfg = TrainConfig { epochs: 4, lr: 0.0, mask_ratio: 0.5, seed: 2, clip_norm: None };
        let trace = train_toy(&mut m, &corpus, &cfg).unwrap();
        assert!(trace.windows(2).all(|w| w[0] == w[1]));
        assert_eq!(m.checksum(), before);

        let cfg = TrainConfig { lr: 0.5, ..cfg };
        let mut a = small_model(16, 4, FusionMode::Interleave);
        let mut b = small_model(16, 4, FusionMode::Interleave);
        let ta = train_toy(&mut a, &corpus, &cfg).unwrap();
        let tb = train_toy(&mut b, &corpus, &cfg).unwrap();
        assert_eq!(ta.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), tb.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert!(ta.last().unwrap() < &ta[0]);
    }

    #[test]
    fn divergence_reports_epoch() {
        let corpus = vec![episode(6, 4, 16, 1)];
        let mut m = small_model(16, 4, FusionMode::Interleave);
        let cfg = TrainConfig { epochs: 50, lr: 1e12, mask_ratio: 0.5, seed: 0, clip_norm: None };
        assert!(matches!(train_toy(&mut m, &corpus, &cfg), Err(Error::Divergence { .. })));
    }

    #[test]
    fn empty_corpus_rejected() {
        let mut m = small_model(16, 4, FusionMode::Interleave);
        assert!(train_toy(&mut m, &[], &TrainConfig::default()).is_err());
    }

    #[test]
    fn fibonacci_sphere_radius() {
        for p in fibonacci_sphere(16, 0.05) {
            assert!((p.norm() - 0.05).abs() < 1e-15);
        }
    }
}
