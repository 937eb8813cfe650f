//! Test-time spectral graph alignment of target token features toward source
//! prototypes.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{spectral_basis, GraphKind, LaplacianMode, SpectralBasis};
use crate::pipeline::CloudAnalysis;
use crate::serialize::SerializationOrder;

/// `X̂ = Φᵀ X`
pub fn gft(basis: &SpectralBasis, signal: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_rows(basis, signal)?;
    Ok(basis.eigenvectors.tr_mul(signal))
}

/// `X = Φ X̂`
pub fn igft(basis: &SpectralBasis, spectral: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_rows(basis, spectral)?;
    Ok(&basis.eigenvectors * spectral)
}

fn check_rows(basis: &SpectralBasis, m: &DMatrix<f64>) -> Result<()> {
    if basis.size() != m.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "basis of size {} applied to {} rows",
            basis.size(),
            m.nrows()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralPrototype {
    pub basis_kind: GraphKind,
    pub vector: DVector<f64>,
    pub source_count: usize,
}

/// Token-wise mean of the sources, projected on the (serialized) target basis,
/// then averaged over spectral rows.
///
/// `target_eigenvectors` rows must be in the same serialized order as the
/// source feature rows.
pub fn compute_prototype(target_eigenvectors: &DMatrix<f64>, sources: &[DMatrix<f64>], kind: GraphKind) -> Result<SpectralPrototype> {
    let first = sources.first().ok_or(Error::Empty("source features"))?;
    let (g, d) = first.shape();
    if sources.iter().any(|s| s.shape() != (g, d)) {
        return Err(Error::DimensionMismatch("source feature matrices differ in shape".into()));
    }
    if target_eigenvectors.nrows() != g {
        return Err(Error::DimensionMismatch(format!(
            "target basis has {} rows, sources have {}",
            target_eigenvectors.nrows(),
            g
        )));
    }
    let mut mean = DMatrix::zeros(g, d);
    for s in sources {
        mean += s;
    }
    mean /= sources.len() as f64;
    let spectral = target_eigenvectors.tr_mul(&mean);
    let vector = spectral.row_mean().transpose();
    if vector.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { step: 0 });
    }
    Ok(SpectralPrototype {
        basis_kind: kind,
        vector,
        source_count: sources.len(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum AlignMode {
    AdaptiveCosine,
    FixedAlpha(f64),
    SimpleShift(f64),
    Off,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// One prototype over every source.
    Pooled,
    /// Only sources tagged with this domain.
    Domain(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignmentConfig {
    pub mode: AlignMode,
    /// Lower clamp for the adaptive coefficient.
    pub eps_low: f64,
    pub pooling: Pooling,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        Self {
            mode: AlignMode::AdaptiveCosine,
            eps_low: 0.05,
            pooling: Pooling::Pooled,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eps_low > 0.0 && self.eps_low <= 0.5) {
            return Err(Error::InvalidArgument(format!("eps_low {} must lie in (0, 0.5]", self.eps_low)));
        }
        match self.mode {
            AlignMode::FixedAlpha(v) | AlignMode::SimpleShift(v) if !(0.0..=1.0).contains(&v) => {
                Err(Error::InvalidArgument(format!("coefficient {v} must lie in [0, 1]")))
            }
            _ => Ok(()),
        }
    }
}

pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na > 0.0 && nb > 0.0 {
        Some((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
    } else {
        None
    }
}

/// Per-row coefficient: `clamp((1 + cos)/2, eps_low, 1)`; rows or prototypes of
/// zero norm keep `α = 1`.
pub fn adaptive_alpha(row: &[f64], prototype: &[f64], eps_low: f64) -> f64 {
    match cosine(row, prototype) {
        Some(c) => (0.5 * (1.0 + c)).clamp(eps_low, 1.0),
        None => 1.0,
    }
}

/// `X̂_i ← α_i X̂_i + (1 − α_i)(P̂ − X̂_i)` on every spectral row.
pub fn spectral_shift(spectral: &DMatrix<f64>, prototype: &SpectralPrototype, config: &AlignmentConfig) -> Result<DMatrix<f64>> {
    let d = spectral.ncols();
    if prototype.vector.len() != d {
        return Err(Error::DimensionMismatch(format!(
            "prototype width {} vs features {}",
            prototype.vector.len(),
            d
        )));
    }
    let p: Vec<f64> = prototype.vector.iter().copied().collect();
    let mut out = spectral.clone();
    for i in 0..spectral.nrows() {
        let row: Vec<f64> = spectral.row(i).iter().copied().collect();
        let alpha = match config.mode {
            AlignMode::AdaptiveCosine => adaptive_alpha(&row, &p, config.eps_low),
            AlignMode::FixedAlpha(a) => a,
            AlignMode::Off => 1.0,
            AlignMode::SimpleShift(_) => {
                return Err(Error::InvalidArgument("simple shift acts on spatial features".into()))
            }
        };
        if alpha == 1.0 {
            continue;
        }
        for k in 0..d {
            out[(i, k)] = alpha * row[k] + (1.0 - alpha) * (p[k] - row[k]);
        }
    }
    Ok(out)
}

/// `X_i ← β X_i + (1 − β)(P − X_i)` on every row.
pub fn simple_shift(features: &DMatrix<f64>, prototype: &DVector<f64>, beta: f64) -> Result<DMatrix<f64>> {
    if prototype.len() != features.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "prototype width {} vs features {}",
            prototype.len(),
            features.ncols()
        )));
    }
    if beta == 1.0 {
        return Ok(features.clone());
    }
    Ok(DMatrix::from_fn(features.nrows(), features.ncols(), |i, k| {
        beta * features[(i, k)] + (1.0 - beta) * (prototype[k] - features[(i, k)])
    }))
}

/// Serialized source token features, one entry per (cloud, graph kind).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceEntry {
    pub domain: String,
    pub kind: GraphKind,
    /// G x d rows in serialized order.
    pub features: DMatrix<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SourceBank {
    pub entries: Vec<SourceEntry>,
}

impl SourceBank {
    pub fn add_analysis(&mut self, domain: &str, analysis: &CloudAnalysis) {
        for (kind, order) in [(GraphKind::Cds, &analysis.order_cds), (GraphKind::Gcs, &analysis.order_gcs)] {
            self.entries.push(SourceEntry {
                domain: domain.to_string(),
                kind,
                features: gather(&analysis.tokens.features, &order.permutation),
            });
        }
    }

    pub fn features(&self, kind: GraphKind, pooling: &Pooling) -> Vec<DMatrix<f64>> {
        self.entries
            .iter()
            .filter(|e| e.kind == kind)
            .filter(|e| match pooling {
                Pooling::Pooled => true,
                Pooling::Domain(d) => &e.domain == d,
            })
            .map(|e| e.features.clone())
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn gather(features: &DMatrix<f64>, perm: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(perm.len(), features.ncols(), |r, c| features[(perm[r], c)])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KindReport {
    pub kind: GraphKind,
    /// Mean row cosine to the prototype before and after the shift.
    pub pre_cosine: f64,
    pub post_cosine: f64,
    pub shift_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignOutput {
    /// G x d, original token order.
    pub features: DMatrix<f64>,
    pub kinds: Vec<KindReport>,
    pub shift_norm: f64,
}

fn mean_row_cosine(m: &DMatrix<f64>, p: &DVector<f64>) -> f64 {
    let p: Vec<f64> = p.iter().copied().collect();
    let vals: Vec<f64> = (0..m.nrows())
        .filter_map(|i| cosine(&m.row(i).iter().copied().collect::<Vec<_>>(), &p))
        .collect();
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// Aligns `features` (rows indexed like `target.tokens`) on the target's own
/// CDS and GCS graph bases and averages the two results.
pub fn align_features(
    features: &DMatrix<f64>,
    target: &CloudAnalysis,
    bank: &SourceBank,
    config: &AlignmentConfig,
) -> Result<AlignOutput> {
    config.validate()?;
    let g = target.tokens.len();
    if features.nrows() != g {
        return Err(Error::DimensionMismatch(format!("{} feature rows for {} tokens", features.nrows(), g)));
    }
    match config.mode {
        AlignMode::Off => {
            return Ok(AlignOutput {
                features: features.clone(),
                kinds: Vec::new(),
                shift_norm: 0.0,
            })
        }
        AlignMode::SimpleShift(beta) => {
            let mut sources = bank.features(GraphKind::Cds, &config.pooling);
            sources.extend(bank.features(GraphKind::Gcs, &config.pooling));
            if sources.is_empty() {
                return Err(Error::Empty("source bank"));
            }
            let mut p = DVector::zeros(features.ncols());
            for s in &sources {
                p += s.row_mean().transpose();
            }
            p /= sources.len() as f64;
            let out = simple_shift(features, &p, beta)?;
            let shift_norm = (&out - features).norm();
            return Ok(AlignOutput {
                features: out,
                kinds: Vec::new(),
                shift_norm,
            });
        }
        AlignMode::AdaptiveCosine | AlignMode::FixedAlpha(_) => {}
    }

    let mut sum = DMatrix::zeros(g, features.ncols());
    let mut kinds = Vec::new();
    let graphs: [(GraphKind, &DMatrix<f64>, &SerializationOrder); 2] = [
        (GraphKind::Cds, &target.cds_graph.affinity, &target.order_cds),
        (GraphKind::Gcs, &target.gcs_graph.affinity, &target.order_gcs),
    ];
    for (kind, affinity, order) in graphs {
        let sources = bank.features(kind, &config.pooling);
        if sources.is_empty() {
            return Err(Error::Empty("source bank"));
        }
        let basis = spectral_basis(affinity, LaplacianMode::Combinatorial)?;
        let proto = compute_prototype(&basis.permuted_rows(&order.permutation), &sources, kind)?;
        let spectral = gft(&basis, features)?;
        let shifted = spectral_shift(&spectral, &proto, config)?;
        let back = igft(&basis, &shifted)?;
        kinds.push(KindReport {
            kind,
            pre_cosine: mean_row_cosine(&spectral, &proto.vector),
            post_cosine: mean_row_cosine(&shifted, &proto.vector),
            shift_norm: (&back - features).norm(),
        });
        sum += back;
    }
    let out = sum / kinds.len() as f64;
    let shift_norm = (&out - features).norm();
    Ok(AlignOutput {
        features: out,
        kinds,
        shift_norm,
    })
}

/// Aligns the target's own token features.
pub fn align_pipeline(target: &CloudAnalysis, bank: &SourceBank, config: &AlignmentConfig) -> Result<AlignOutput> {
    align_features(&target.tokens.features, target, bank, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::sym_eig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(n: usize, d: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))
    }

    fn random_basis(n: usize, seed: u64) -> SpectralBasis {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 3]> = (0..n).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
        let w = DMatrix::from_fn(n, n, |i, j| {
            let d2: f64 = (0..3).map(|k| (pts[i][k] - pts[j][k]).powi(2)).sum();
            (-d2 / 0.2).exp()
        });
        spectral_basis(&w, LaplacianMode::Combinatorial).unwrap()
    }

    fn identity_basis(n: usize) -> SpectralBasis {
        sym_eig(&DMatrix::from_diagonal(&DVector::from_fn(n, |i, _| i as f64))).unwrap()
    }

    #[test]
    fn eigenvector_maps_to_unit_vector() {
        let b = random_basis(12, 1);
        let phi = b.eigenvectors.columns(4, 1).clone_owned();
        let spec = gft(&b, &phi).unwrap();
        for k in 0..12 {
            let expected = if k == 4 { 1.0 } else { 0.0 };
            assert!((spec[(k, 0)] - expected).abs() < 1e-10);
        }
        let e = DMatrix::from_fn(12, 1, |k, _| if k == 4 { 1.0 } else { 0.0 });
        assert!((igft(&b, &e).unwrap() - phi).amax() < 1e-15);
    }

    #[test]
    fn constant_signal_lives_in_zero_mode() {
        let b = random_basis(10, 2);
        let spec = gft(&b, &DMatrix::from_element(10, 1, 2.0)).unwrap();
        assert!((spec[(0, 0)].abs() - 2.0 * 10f64.sqrt()).abs() < 1e-9);
        assert!(spec.rows(1, 9).amax() < 1e-9);
    }

    #[test]
    fn parseval_and_round_trip() {
        let b = random_basis(64, 3);
        let x = random(64, 256, 4);
        let spec = gft(&b, &x).unwrap();
        assert!((spec.norm() - x.norm()).abs() <= 1e-8 * x.norm());
        let back = igft(&b, &spec).unwrap();
        assert!((back - &x).norm() <= 1e-8 * x.norm());
        assert_eq!(igft(&b, &DMatrix::zeros(64, 3)).unwrap(), DMatrix::zeros(64, 3));
        assert!(gft(&b, &random(63, 2, 0)).is_err());
    }

    #[test]
    fn prototype_of_single_source_on_identity_basis() {
        let b = identity_basis(5);
        let x = random(5, 3, 1);
        let p = compute_prototype(&b.eigenvectors, &[x.clone()], GraphKind::Cds).unwrap();
        assert!((p.vector.clone() - x.row_mean().transpose()).amax() < 1e-15);
        let twice = compute_prototype(&b.eigenvectors, &[x.clone(), x.clone()], GraphKind::Cds).unwrap();
        assert!((twice.vector - p.vector).amax() < 1e-15);
        assert_eq!(twice.source_count, 2);
        assert!(compute_prototype(&b.eigenvectors, &[], GraphKind::Cds).is_err());
    }

    #[test]
    fn prototype_matches_naive_reference() {
        let b = random_basis(16, 5);
        let sources: Vec<DMatrix<f64>> = (0..4).map(|s| random(16, 6, 10 + s)).collect();
        let p = compute_prototype(&b.eigenvectors, &sources, GraphKind::Gcs).unwrap();
        for c in 0..6 {
            let mut acc = 0.0;
            for k in 0..16 {
                for i in 0..16 {
                    let mean: f64 = sources.iter().map(|s| s[(i, c)]).sum::<f64>() / 4.0;
                    acc += b.eigenvectors[(i, k)] * mean;
                }
            }
            assert!((p.vector[c] - acc / 16.0).abs() < 1e-10);
        }
    }

    fn proto(v: Vec<f64>) -> SpectralPrototype {
        SpectralPrototype { basis_kind: GraphKind::Cds, vector: DVector::from_vec(v), source_count: 1 }
    }

    #[test]
    fn fixed_alpha_edges() {
        let x = random(6, 3, 7);
        let p = proto(vec![0.3, -0.2, 0.9]);
        let one = AlignmentConfig { mode: AlignMode::FixedAlpha(1.0), ..Default::default() };
        assert_eq!(spectral_shift(&x, &p, &one).unwrap(), x);
        let zero = AlignmentConfig { mode: AlignMode::FixedAlpha(0.0), ..Default::default() };
        let out = spectral_shift(&x, &p, &zero).unwrap();
        for i in 0..6 {
            for k in 0..3 {
                assert!((out[(i, k)] - (p.vector[k] - x[(i, k)])).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn parallel_row_is_untouched() {
        let p = proto(vec![1.0, 2.0, -1.0]);
        let x = DMatrix::from_row_slice(2, 3, &[2.0, 4.0, -2.0, 0.0, 0.0, 0.0]);
        let out = spectral_shift(&x, &p, &AlignmentConfig::default()).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn adaptive_pull_never_lowers_cosine() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = AlignmentConfig::default();
        let mut checked = 0;
        for _ in 0..1000 {
            let p: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let row: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let c0 = cosine(&row, &p).unwrap();
            if c0 <= -1.0 + 2.0 * cfg.eps_low {
                continue;
            }
            let out = spectral_shift(&DMatrix::from_row_slice(1, 8, &row), &proto(p.clone()), &cfg).unwrap();
            let c1 = cosine(&out.iter().copied().collect::<Vec<_>>(), &p).unwrap_or(1.0);
            assert!(c1 >= c0 - 1e-12, "{c0} -> {c1}");
            checked += 1;
        }
        assert!(checked > 900);
    }

    #[test]
    fn simple_shift_literal() {
        let x = random(5, 4, 2);
        let p = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(simple_shift(&x, &p, 1.0).unwrap(), x);
        let at_p = DMatrix::from_fn(3, 4, |_, k| p[k]);
        assert!((simple_shift(&at_p, &p, 0.5).unwrap() - &at_p * 0.5).amax() < 1e-15);
        let out = simple_shift(&x, &p, 0.3).unwrap();
        for i in 0..5 {
            for k in 0..4 {
                assert!((out[(i, k)] - (0.3 * x[(i, k)] + 0.7 * (p[k] - x[(i, k)]))).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(AlignmentConfig::default().validate().is_ok());
        assert!(AlignmentConfig { eps_low: 0.0, ..Default::default() }.validate().is_err());
        assert!(AlignmentConfig { mode: AlignMode::FixedAlpha(1.5), ..Default::default() }.validate().is_err());
        let json = serde_json::to_string(&AlignmentConfig { mode: AlignMode::FixedAlpha(0.5), ..Default::default() }).unwrap();
        let back: AlignmentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.mode, AlignMode::FixedAlpha(0.5));
    }

    #[test]
    fn self_source_shifts_less_than_mismatched_source() {
        use crate::harness::{gen_shape, ShapeKind};
        use crate::pipeline::{analyze, TokenizeConfig};
        let cfg = TokenizeConfig { num_groups: 24, patch_size: 8, embed_dim: 16, ..Default::default() };
        let enc = cfg.encoder().unwrap();
        let target = analyze(&gen_shape(ShapeKind::Torus, 400, 1).unwrap(), &cfg, &enc).unwrap();
        let other = analyze(&gen_shape(ShapeKind::BoxComposite, 400, 2).unwrap(), &cfg, &enc).unwrap();
        let mut own = SourceBank::default();
        own.add_analysis("torus", &target);
        let mut foreign = SourceBank::default();
        foreign.add_analysis("box", &other);
        let cfg = AlignmentConfig::default();
        let a = align_pipeline(&target, &own, &cfg).unwrap();
        let b = align_pipeline(&target, &foreign, &cfg).unwrap();
        assert!(a.shift_norm < b.shift_norm, "{} vs {}", a.shift_norm, b.shift_norm);
        assert_eq!(a.kinds.len(), 2);

        let off = AlignmentConfig { mode: AlignMode::Off, ..Default::default() };
        assert_eq!(align_pipeline(&target, &foreign, &off).unwrap().features, target.tokens.features);
        let empty = SourceBank::default();
        assert!(align_pipeline(&target, &empty, &cfg).is_err());
        let dom = AlignmentConfig { pooling: Pooling::Domain("torus".into()), ..Default::default() };
        assert!(align_pipeline(&target, &foreign, &dom).is_err());
    }
}
