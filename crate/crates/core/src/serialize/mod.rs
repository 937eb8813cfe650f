//! Token orderings: CDS (BFS and spectral), GCS curvature order, coordinate
//! curves and simple baselines, plus the four-segment SAS sequence.

mod curves;
mod sequence;

use std::collections::VecDeque;

use nalgebra::{DMatrix, Matrix3};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{spectral_basis, sym_eig, GraphKind, HeatDescriptor, LaplacianMode, TokenGraph};
use crate::pointcloud::{centroid, Point3, TokenSet};

pub use curves::{hilbert_index, morton_code, quantize};
pub use sequence::{build_sas_sequence, build_sequence, SasSequence, SequenceSegment};

pub const DEFAULT_CURVE_BITS: u32 = 10;
/// Spectral modes at or below this eigenvalue are treated as constant.
pub const FIEDLER_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    CdsBfs,
    CdsSpectral,
    Gcs,
    Zorder,
    Hilbert,
    FpsOrder,
    Random,
    EuclidCentroidSort,
    NaiveCurvatureSort,
}

impl Strategy {
    pub const ALL: [Strategy; 9] = [
        Strategy::CdsBfs,
        Strategy::CdsSpectral,
        Strategy::Gcs,
        Strategy::Zorder,
        Strategy::Hilbert,
        Strategy::FpsOrder,
        Strategy::Random,
        Strategy::EuclidCentroidSort,
        Strategy::NaiveCurvatureSort,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::CdsBfs => "cds_bfs",
            Strategy::CdsSpectral => "cds_spectral",
            Strategy::Gcs => "gcs",
            Strategy::Zorder => "zorder",
            Strategy::Hilbert => "hilbert",
            Strategy::FpsOrder => "fps_order",
            Strategy::Random => "random",
            Strategy::EuclidCentroidSort => "euclid_centroid_sort",
            Strategy::NaiveCurvatureSort => "naive_curvature_sort",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown strategy '{s}'")))
    }
}

/// A permutation of token indices: `permutation[rank] = token`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerializationOrder {
    pub strategy: Strategy,
    pub permutation: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub root: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub scores: Option<Vec<f64>>,
}

impl SerializationOrder {
    pub fn len(&self) -> usize {
        self.permutation.len()
    }

    pub fn is_empty(&self) -> bool {
        self.permutation.is_empty()
    }

    /// `ranks[token] = position in the sequence`
    pub fn ranks(&self) -> Vec<usize> {
        let mut ranks = vec![0; self.permutation.len()];
        for (r, &t) in self.permutation.iter().enumerate() {
            ranks[t] = r;
        }
        ranks
    }

    pub fn reversed(&self) -> Vec<usize> {
        self.permutation.iter().rev().copied().collect()
    }

    pub fn is_bijection(&self) -> bool {
        is_permutation(&self.permutation)
    }
}

pub fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    for &t in perm {
        if t >= perm.len() || seen[t] {
            return false;
        }
        seen[t] = true;
    }
    true
}

/// Ascending stable sort of scores; equal scores keep index order.
pub fn argsort(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    idx
}

/// Token whose center is nearest to the centroid of all centers, smallest index on ties.
pub fn centroid_nearest(centers: &[Point3]) -> usize {
    let c = centroid(centers);
    let d: Vec<f64> = centers.iter().map(|u| (u - c).norm()).collect();
    argsort(&d).first().copied().unwrap_or(0)
}

fn check_cds(graph: &TokenGraph, centers: &[Point3]) -> Result<()> {
    if graph.kind != GraphKind::Cds {
        return Err(Error::InvalidArgument(format!(
            "expected a cds graph, got {}",
            graph.kind.name()
        )));
    }
    if graph.size() != centers.len() {
        return Err(Error::DimensionMismatch(format!(
            "graph has {} tokens but {} centers were given",
            graph.size(),
            centers.len()
        )));
    }
    if centers.is_empty() {
        return Err(Error::Empty("token centers"));
    }
    Ok(())
}

/// Ranked BFS over the `knn_k` strongest affinities of each token, rooted at the
/// centroid-nearest token.
pub fn serialize_cds_bfs(graph: &TokenGraph, centers: &[Point3], knn_k: usize) -> Result<SerializationOrder> {
    check_cds(graph, centers)?;
    let n = centers.len();
    let w = &graph.affinity;
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| {
            let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            others.sort_by(|&a, &b| w[(i, b)].total_cmp(&w[(i, a)]).then(a.cmp(&b)));
            others.truncate(knn_k);
            others
        })
        .collect();

    let root = centroid_nearest(centers);
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = VecDeque::from([root]);
    visited[root] = true;
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &v in &neighbors[u] {
            if !visited[v] {
                visited[v] = true;
                queue.push_back(v);
            }
        }
    }
    if order.len() < n {
        let c = centroid(centers);
        let d: Vec<f64> = centers.iter().map(|u| (u - c).norm()).collect();
        order.extend(argsort(&d).into_iter().filter(|&t| !visited[t]));
    }
    Ok(SerializationOrder {
        strategy: Strategy::CdsBfs,
        permutation: order,
        root: Some(root),
        scores: None,
    })
}

/// Sort by the first nontrivial eigenvector of the normalized Laplacian (read
/// in random-walk form), signed so the centroid-nearest token's entry is
/// nonpositive.
pub fn serialize_cds_spectral(graph: &TokenGraph, centers: &[Point3]) -> Result<SerializationOrder> {
    check_cds(graph, centers)?;
    let basis = spectral_basis(&graph.affinity, LaplacianMode::SymmetricNormalized)?;
    let k = basis
        .eigenvalues
        .iter()
        .position(|&l| l > FIEDLER_EPS)
        .ok_or_else(|| Error::DegenerateSpectrum(basis.max_eigenvalue()))?;
    // Undo the D^{1/2} weighting so entries vary monotonically along a chain;
    // raw normalized-Laplacian entries dip at low-degree ends.
    let w = &graph.affinity;
    let mut fiedler: Vec<f64> = basis
        .eigenvectors
        .column(k)
        .iter()
        .enumerate()
        .map(|(i, &v)| v / w.row(i).sum().sqrt())
        .collect();
    let root = centroid_nearest(centers);
    if fiedler[root] > 0.0 {
        for v in &mut fiedler {
            *v = -*v;
        }
    }
    Ok(SerializationOrder {
        strategy: Strategy::CdsSpectral,
        permutation: argsort(&fiedler),
        root: Some(root),
        scores: Some(fiedler),
    })
}

/// Ascending heat-descriptor norm; the first token is the lowest-curvature root.
pub fn serialize_gcs(descriptor: &HeatDescriptor) -> Result<SerializationOrder> {
    if descriptor.values.nrows() == 0 {
        return Err(Error::Empty("heat descriptor"));
    }
    let scores = descriptor.row_norms();
    Ok(order_from_scores(Strategy::Gcs, scores))
}

fn order_from_scores(strategy: Strategy, scores: Vec<f64>) -> SerializationOrder {
    let permutation = argsort(&scores);
    SerializationOrder {
        strategy,
        root: permutation.first().copied(),
        permutation,
        scores: Some(scores),
    }
}

fn check_bits(bits: u32) -> Result<()> {
    if !(4..=16).contains(&bits) {
        return Err(Error::InvalidArgument(format!(
            "curve bits must be in [4, 16], got {bits}"
        )));
    }
    Ok(())
}

fn curve_order(strategy: Strategy, centers: &[Point3], bits: u32, key: fn([u32; 3], u32) -> u64) -> Result<SerializationOrder> {
    check_bits(bits)?;
    let keys: Vec<u64> = quantize(centers, bits).into_iter().map(|c| key(c, bits)).collect();
    let mut permutation: Vec<usize> = (0..centers.len()).collect();
    permutation.sort_by_key(|&i| (keys[i], i));
    Ok(SerializationOrder {
        strategy,
        permutation,
        root: None,
        scores: None,
    })
}

pub fn serialize_zorder(centers: &[Point3], bits: u32) -> Result<SerializationOrder> {
    curve_order(Strategy::Zorder, centers, bits, morton_code)
}

pub fn serialize_hilbert(centers: &[Point3], bits: u32) -> Result<SerializationOrder> {
    curve_order(Strategy::Hilbert, centers, bits, hilbert_index)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Baseline {
    FpsOrder,
    Random { seed: u64 },
    EuclidCentroidSort,
    NaiveCurvatureSort,
}

impl Baseline {
    pub fn strategy(self) -> Strategy {
        match self {
            Baseline::FpsOrder => Strategy::FpsOrder,
            Baseline::Random { .. } => Strategy::Random,
            Baseline::EuclidCentroidSort => Strategy::EuclidCentroidSort,
            Baseline::NaiveCurvatureSort => Strategy::NaiveCurvatureSort,
        }
    }
}

/// Coordinate-driven orderings that ignore the token graph.
pub fn serialize_baseline(baseline: Baseline, tokens: &TokenSet) -> Result<SerializationOrder> {
    let n = tokens.len();
    if n == 0 {
        return Err(Error::Empty("token set"));
    }
    let plain = |permutation: Vec<usize>| SerializationOrder {
        strategy: baseline.strategy(),
        permutation,
        root: None,
        scores: None,
    };
    Ok(match baseline {
        // Tokens are stored in FPS selection order.
        Baseline::FpsOrder => plain((0..n).collect()),
        Baseline::Random { seed } => {
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            plain(perm)
        }
        Baseline::EuclidCentroidSort => {
            let c = centroid(&tokens.centers);
            let d = tokens.centers.iter().map(|u| (u - c).norm()).collect();
            order_from_scores(Strategy::EuclidCentroidSort, d)
        }
        Baseline::NaiveCurvatureSort => {
            let scores = tokens
                .local_points
                .iter()
                .map(|pts| pca_curvature(pts))
                .collect::<Result<Vec<f64>>>()?;
            order_from_scores(Strategy::NaiveCurvatureSort, scores)
        }
    })
}

/// `λ_min / (λ₁ + λ₂ + λ₃)` of the patch covariance; 0 for a single point.
pub fn pca_curvature(points: &[Point3]) -> Result<f64> {
    if points.len() < 2 {
        return Ok(0.0);
    }
    let c = centroid(points);
    let mut cov = Matrix3::zeros();
    for p in points {
        let q = p - c;
        cov += q * q.transpose();
    }
    cov /= points.len() as f64;
    let basis = sym_eig(&DMatrix::from_iterator(3, 3, cov.iter().copied()))?;
    let total: f64 = basis.eigenvalues.iter().sum();
    if total <= 0.0 {
        return Ok(0.0);
    }
    Ok(basis.eigenvalues[0].max(0.0) / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_cds_graph, heat_descriptor};
    use nalgebra::{Rotation3, Vector3};
    use rand::{Rng, SeedableRng};

    fn cds(centers: &[Point3]) -> TokenGraph {
        build_cds_graph(centers, None).unwrap()
    }

    fn random_centers(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
            .collect()
    }

    fn chain(n: usize) -> Vec<Point3> {
        // Gently curved open curve with unequal spacing so no symmetry ties arise.
        (0..n)
            .map(|i| {
                let t = i as f64 / (n - 1) as f64;
                Point3::new(3.0 * t + 0.2 * t * t, 0.3 * (2.0 * t).sin(), 0.0)
            })
            .collect()
    }

    #[test]
    fn bfs_collinear_tie_prefers_smaller_index() {
        let pts: Vec<Point3> = (0..3).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect();
        let o = serialize_cds_bfs(&cds(&pts), &pts, 6).unwrap();
        assert_eq!(o.permutation, vec![1, 0, 2]);
        assert_eq!(o.root, Some(1));
    }

    #[test]
    fn bfs_star_visits_leaves_by_affinity() {
        let pts = vec![
            Point3::new(0.3, 0.0, 0.0),
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(0.0, -0.5, 0.0),
            Point3::new(-0.2, 0.0, 0.0),
            Point3::new(0.0, 0.0, 0.4),
        ];
        // centroid (0.02, -0.1, 0.08): token 1 is closest
        let o = serialize_cds_bfs(&cds(&pts), &pts, 6).unwrap();
        assert_eq!(o.permutation, vec![1, 3, 0, 4, 2]);
    }

    #[test]
    fn bfs_is_bijection() {
        let pts = random_centers(64, 5);
        for k in [1, 2, 6] {
            let o = serialize_cds_bfs(&cds(&pts), &pts, k).unwrap();
            assert!(o.is_bijection());
            assert_eq!(o.len(), 64);
        }
    }

    #[test]
    fn bfs_appends_unreached_tokens() {
        // Two far clusters with k=1: the second cluster is unreachable.
        let mut pts = random_centers(5, 1);
        pts.extend(random_centers(3, 2).into_iter().map(|p| p * 0.1 + Point3::new(50.0, 0.0, 0.0)));
        let g = build_cds_graph(&pts, Some(1.0)).unwrap();
        let o = serialize_cds_bfs(&g, &pts, 1).unwrap();
        assert!(o.is_bijection());
    }

    #[test]
    fn bfs_rejects_gcs_graph() {
        let pts = random_centers(4, 1);
        let mut g = cds(&pts);
        g.kind = GraphKind::Gcs;
        assert!(serialize_cds_bfs(&g, &pts, 3).is_err());
    }

    #[test]
    fn spectral_chain_is_end_to_end() {
        let pts = chain(24);
        let g = build_cds_graph(&pts, Some(0.12)).unwrap();
        let o = serialize_cds_spectral(&g, &pts).unwrap();
        let forward: Vec<usize> = (0..24).collect();
        let backward: Vec<usize> = (0..24).rev().collect();
        assert!(o.permutation == forward || o.permutation == backward, "{:?}", o.permutation);
        let s = o.scores.as_ref().unwrap();
        assert!(s[o.root.unwrap()] <= 0.0);
    }

    #[test]
    fn spectral_sequence_matches_fiedler_ranks() {
        let pts = random_centers(40, 8);
        let o = serialize_cds_spectral(&cds(&pts), &pts).unwrap();
        let s = o.scores.unwrap();
        assert!(o.permutation.windows(2).all(|w| s[w[0]] <= s[w[1]]));
    }

    #[test]
    fn rigid_motion_keeps_intrinsic_orders() {
        let pts = random_centers(48, 11);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), 1.1) * Rotation3::from_axis_angle(&Vector3::x_axis(), -0.4);
        let shift = Point3::new(rng.random(), rng.random(), rng.random());
        let moved: Vec<Point3> = pts.iter().map(|p| rot * p + shift).collect();
        let a = serialize_cds_bfs(&cds(&pts), &pts, 6).unwrap();
        let b = serialize_cds_bfs(&cds(&moved), &moved, 6).unwrap();
        assert_eq!(a.permutation, b.permutation);
        let a = serialize_cds_spectral(&cds(&pts), &pts).unwrap();
        let b = serialize_cds_spectral(&cds(&moved), &moved).unwrap();
        assert_eq!(a.permutation, b.permutation);
        let ga = crate::graph::geodesic_basis(&pts, 6).unwrap();
        let gb = crate::graph::geodesic_basis(&moved, 6).unwrap();
        let ha = heat_descriptor(&ga, &crate::graph::default_heat_scales(&ga)).unwrap();
        let hb = heat_descriptor(&gb, &crate::graph::default_heat_scales(&gb)).unwrap();
        assert_eq!(serialize_gcs(&ha).unwrap().permutation, serialize_gcs(&hb).unwrap().permutation);
    }

    #[test]
    fn gcs_sorts_scores() {
        let d = HeatDescriptor {
            scales: vec![1.0],
            values: DMatrix::from_column_slice(3, 1, &[3.0, 1.0, 2.0]),
        };
        let o = serialize_gcs(&d).unwrap();
        assert_eq!(o.permutation, vec![1, 2, 0]);
        assert_eq!(o.root, Some(1));
    }

    #[test]
    fn gcs_equal_scores_keep_identity() {
        let d = HeatDescriptor {
            scales: vec![1.0, 2.0],
            values: DMatrix::from_element(5, 2, 0.5),
        };
        assert_eq!(serialize_gcs(&d).unwrap().permutation, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn zorder_on_cube_corners() {
        let mut pts = Vec::new();
        for c in [5u32, 2, 7, 0, 3, 6, 1, 4] {
            pts.push(Point3::new(((c >> 2) & 1) as f64, ((c >> 1) & 1) as f64, (c & 1) as f64));
        }
        let o = serialize_zorder(&pts, 4).unwrap();
        // Corner with code c is at position idx where the input list holds c.
        let codes: Vec<u32> = o
            .permutation
            .iter()
            .map(|&i| [5u32, 2, 7, 0, 3, 6, 1, 4][i])
            .collect();
        assert_eq!(codes, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn curve_bits_validated() {
        let pts = random_centers(4, 0);
        assert!(serialize_zorder(&pts, 3).is_err());
        assert!(serialize_hilbert(&pts, 17).is_err());
        assert!(serialize_hilbert(&pts, 16).is_ok());
    }

    #[test]
    fn curves_are_not_rotation_invariant() {
        let pts = random_centers(64, 2);
        let rot = Rotation3::from_axis_angle(&Vector3::z_axis(), std::f64::consts::FRAC_PI_2);
        let moved: Vec<Point3> = pts.iter().map(|p| rot * p).collect();
        for f in [serialize_zorder, serialize_hilbert] {
            let a = f(&pts, 10).unwrap();
            let b = f(&moved, 10).unwrap();
            assert!(a.is_bijection() && b.is_bijection());
            assert_ne!(a.permutation, b.permutation);
        }
    }

    fn token_set(centers: Vec<Point3>, local: Vec<Vec<Point3>>) -> TokenSet {
        let g = centers.len();
        TokenSet {
            center_indices: (0..g).collect(),
            patches: vec![vec![0]; g],
            centers,
            local_points: local,
            features: DMatrix::zeros(g, 16),
        }
    }

    #[test]
    fn random_baseline_is_seeded() {
        let ts = token_set(random_centers(30, 1), vec![vec![]; 30]);
        let a = serialize_baseline(Baseline::Random { seed: 9 }, &ts).unwrap();
        let b = serialize_baseline(Baseline::Random { seed: 9 }, &ts).unwrap();
        let c = serialize_baseline(Baseline::Random { seed: 10 }, &ts).unwrap();
        assert_eq!(a.permutation, b.permutation);
        assert_ne!(a.permutation, c.permutation);
        assert!(a.is_bijection());
        assert_eq!(serialize_baseline(Baseline::FpsOrder, &ts).unwrap().permutation, (0..30).collect::<Vec<_>>());
    }

    #[test]
    fn centroid_sort_puts_inner_ring_first() {
        let mut centers = Vec::new();
        for i in 0..12 {
            let a = i as f64 * 0.7;
            let r = if i % 2 == 0 { 2.0 } else { 1.0 };
            centers.push(Point3::new(r * a.cos(), r * a.sin(), 0.0));
        }
        // Rings sampled at uneven angles; recentre so the centroid sits at the origin.
        let c = centroid(&centers);
        let centers: Vec<Point3> = centers.iter().map(|p| p - c).collect();
        let ts = token_set(centers.clone(), vec![vec![]; 12]);
        let o = serialize_baseline(Baseline::EuclidCentroidSort, &ts).unwrap();
        let norms: Vec<f64> = o.permutation.iter().map(|&i| centers[i].norm()).collect();
        assert!(norms.windows(2).all(|w| w[0] <= w[1]));
        assert!(o.permutation[..6].iter().all(|i| i % 2 == 1));
    }

    #[test]
    fn planar_patch_before_spherical_patch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let planar: Vec<Point3> = (0..32).map(|_| Point3::new(rng.random(), rng.random(), 0.0)).collect();
        let round: Vec<Point3> = (0..32)
            .map(|_| {
                let v = Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                v.normalize()
            })
            .collect();
        assert!(pca_curvature(&planar).unwrap() < 1e-12);
        let k = pca_curvature(&round).unwrap();
        assert!(k > 0.2 && k <= 1.0 / 3.0 + 1e-12);
        let ts = token_set(vec![Point3::zeros(), Point3::x()], vec![round, planar]);
        let o = serialize_baseline(Baseline::NaiveCurvatureSort, &ts).unwrap();
        assert_eq!(o.permutation, vec![1, 0]);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(s.name().parse::<Strategy>().unwrap(), s);
            assert_eq!(serde_json::to_string(&s).unwrap(), format!("\"{}\"", s.name()));
        }
    }
}
