use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{Point3, PointCloud};
use crate::error::{Error, Result};

/// Length of the raw statistics vector: mean (3), covariance upper triangle (6),
/// min (3), max (3).
pub const PATCH_STATS_DIM: usize = 15;

/// Patch tokens: FPS centers, their KNN groups and one feature row per token.
///
/// Token `i` is the `i`-th FPS selection, so the token index order is the FPS order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenSet {
    pub center_indices: Vec<usize>,
    pub centers: Vec<Point3>,
    pub patches: Vec<Vec<usize>>,
    /// Patch members relative to their center, in the same order as `patches`.
    pub local_points: Vec<Vec<Point3>>,
    /// G x d, one row per token.
    pub features: DMatrix<f64>,
}

impl TokenSet {
    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }

    pub fn patch_size(&self) -> usize {
        self.patches.first().map_or(0, Vec::len)
    }

    pub fn feature_dim(&self) -> usize {
        self.features.ncols()
    }
}

/// Fixed seeded random projection of center-relative patch statistics.
///
/// Stands in for a learned patch encoder. It is translation invariant and
/// insensitive to member order, but deliberately not rotation invariant.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEncoder {
    seed: u64,
    projection: DMatrix<f64>,
}

impl PatchEncoder {
    pub fn new(dim: usize, seed: u64) -> Result<Self> {
        if dim < 16 {
            return Err(Error::InvalidArgument(format!(
                "feature dimension must be at least 16, got {dim}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (PATCH_STATS_DIM as f64).sqrt();
        let projection = DMatrix::from_fn(dim, PATCH_STATS_DIM, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * scale
        });
        Ok(Self { seed, projection })
    }

    pub fn dim(&self) -> usize {
        self.projection.nrows()
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn encode_patch(&self, patch_points: &[Point3], center: &Point3) -> DVector<f64> {
        let stats = patch_statistics(patch_points, center);
        &self.projection * stats
    }
}

/// `[mean, cov upper triangle, min, max]` of the center-relative points.
pub fn patch_statistics(patch_points: &[Point3], center: &Point3) -> DVector<f64> {
    let mut stats = DVector::zeros(PATCH_STATS_DIM);
    if patch_points.is_empty() {
        return stats;
    }
    let n = patch_points.len() as f64;
    let rel: Vec<Point3> = patch_points.iter().map(|p| p - center).collect();
    let mean = rel.iter().fold(Point3::zeros(), |a, p| a + p) / n;
    let mut cov = [0.0; 6];
    let mut lo = Point3::repeat(f64::INFINITY);
    let mut hi = Point3::repeat(f64::NEG_INFINITY);
    for p in &rel {
        let q = p - mean;
        cov[0] += q.x * q.x;
        cov[1] += q.x * q.y;
        cov[2] += q.x * q.z;
        cov[3] += q.y * q.y;
        cov[4] += q.y * q.z;
        cov[5] += q.z * q.z;
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    for k in 0..3 {
        stats[k] = mean[k];
        stats[9 + k] = lo[k];
        stats[12 + k] = hi[k];
    }
    for (k, c) in cov.iter().enumerate() {
        stats[3 + k] = c / n;
    }
    stats
}

/// Groups the `patch_size` nearest points around each center and encodes them.
///
/// The center itself always comes first; remaining members are ordered by
/// (distance, index).
pub fn knn_group(
    cloud: &PointCloud,
    center_indices: &[usize],
    patch_size: usize,
    encoder: &PatchEncoder,
) -> Result<TokenSet> {
    let n = cloud.len();
    if patch_size > n {
        return Err(Error::CountExceeds {
            requested: patch_size,
            available: n,
        });
    }
    if patch_size == 0 {
        return Err(Error::InvalidArgument("patch size must be positive".into()));
    }
    if let Some(&bad) = center_indices.iter().find(|&&c| c >= n) {
        return Err(Error::InvalidArgument(format!("center index {bad} out of range")));
    }
    let g = center_indices.len();
    let mut centers = Vec::with_capacity(g);
    let mut patches = Vec::with_capacity(g);
    let mut local_points = Vec::with_capacity(g);
    let mut features = DMatrix::zeros(g, encoder.dim());
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);

    for (row, &ci) in center_indices.iter().enumerate() {
        let c = cloud.points[ci];
        order.clear();
        order.extend(
            cloud
                .points
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != ci)
                .map(|(i, p)| ((p - c).norm_squared(), i)),
        );
        order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut members = Vec::with_capacity(patch_size);
        members.push(ci);
        members.extend(order.iter().take(patch_size - 1).map(|&(_, i)| i));
        let pts: Vec<Point3> = members.iter().map(|&i| cloud.points[i]).collect();
        let feat = encoder.encode_patch(&pts, &c);
        features.row_mut(row).copy_from(&feat.transpose());
        local_points.push(pts.iter().map(|p| p - c).collect());
        centers.push(c);
        patches.push(members);
    }

    Ok(TokenSet {
        center_indices: center_indices.to_vec(),
        centers,
        patches,
        local_points,
        features,
    })
}
