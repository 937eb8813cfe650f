//! Chamfer distance and neighborhood preservation rates.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::KnnGraph;
use crate::pointcloud::Point3;
use crate::serialize::SerializationOrder;
use nalgebra::DMatrix;

/// Symmetric squared-L2 Chamfer distance.
pub fn chamfer_distance(a: &[Point3], b: &[Point3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("chamfer point set"));
    }
    Ok(mean_nearest_sq(a, b) + mean_nearest_sq(b, a))
}

fn mean_nearest_sq(from: &[Point3], to: &[Point3]) -> f64 {
    let total: f64 = from
        .par_iter()
        .map(|p| to.iter().map(|q| (p - q).norm_squared()).fold(f64::INFINITY, f64::min))
        .sum();
    total / from.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NprVariant {
    BfsReference,
    Topo,
    Geo,
}

impl NprVariant {
    pub fn name(self) -> &'static str {
        match self {
            NprVariant::BfsReference => "bfs_reference",
            NprVariant::Topo => "topo",
            NprVariant::Geo => "geo",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NprSpec {
    pub variant: NprVariant,
    /// Hop count for `bfs_reference`, neighbor count for `topo` and `geo`.
    pub hops_or_k: usize,
    pub window_radius: usize,
}

impl NprSpec {
    pub fn validate(&self) -> Result<()> {
        if self.hops_or_k == 0 || self.window_radius == 0 {
            return Err(Error::InvalidArgument(
                "npr hops/k and window radius must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Tokens of the `r`-hop set of `i` whose rank distance to `i` under the order
/// is at most the size of that set.
fn rank_local(hop_set: &[usize], ranks: &[usize], i: usize) -> Vec<usize> {
    let m = hop_set.len();
    hop_set
        .iter()
        .copied()
        .filter(|&j| ranks[j].abs_diff(ranks[i]) <= m)
        .collect()
}

/// Overlap of rank-local `r`-hop neighborhoods under `order` with those under
/// the BFS reference, averaged over tokens whose reference set is nonempty.
pub fn npr_bfs_reference(
    order: &SerializationOrder,
    bfs_order: &SerializationOrder,
    graph: &KnnGraph,
    r: usize,
) -> Result<f64> {
    let g = graph.len();
    if order.len() != g || bfs_order.len() != g {
        return Err(Error::DimensionMismatch(format!(
            "orders of length {} and {} on a graph of {} tokens",
            order.len(),
            bfs_order.len(),
            g
        )));
    }
    if r == 0 {
        return Err(Error::InvalidArgument("hop radius must be at least 1".into()));
    }
    let ranks = order.ranks();
    let bfs_ranks = bfs_order.ranks();
    let per_token: Vec<Option<f64>> = (0..g)
        .into_par_iter()
        .map(|i| {
            let hops = graph.hop_neighborhood(i, r);
            let reference = rank_local(&hops, &bfs_ranks, i);
            if reference.is_empty() {
                return None;
            }
            let ours = rank_local(&hops, &ranks, i);
            let shared = reference.iter().filter(|j| ours.contains(j)).count();
            Some(shared as f64 / reference.len() as f64)
        })
        .collect();
    let kept: Vec<f64> = per_token.into_iter().flatten().collect();
    if kept.is_empty() {
        return Err(Error::Empty("bfs reference neighborhoods"));
    }
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

/// Fraction of each token's reference neighbors that fall within `h` sequence
/// positions of it, averaged over tokens.
pub fn npr_window(order: &SerializationOrder, reference_neighbors: &[Vec<usize>], h: usize) -> Result<f64> {
    let g = order.len();
    if reference_neighbors.len() != g {
        return Err(Error::DimensionMismatch(format!(
            "{} neighbor lists for {} tokens",
            reference_neighbors.len(),
            g
        )));
    }
    if h == 0 {
        return Err(Error::InvalidArgument("window radius must be at least 1".into()));
    }
    if g == 0 {
        return Err(Error::Empty("serialization order"));
    }
    let ranks = order.ranks();
    let mut total = 0.0;
    for (i, nbrs) in reference_neighbors.iter().enumerate() {
        if nbrs.is_empty() {
            return Err(Error::Empty("reference neighborhood"));
        }
        let inside = nbrs
            .iter()
            .filter(|&&j| j != i && ranks[j].abs_diff(ranks[i]) <= h)
            .count();
        total += inside as f64 / nbrs.len() as f64;
    }
    Ok(total / g as f64)
}

fn check_k(k: usize, g: usize) -> Result<()> {
    if k == 0 || k >= g {
        return Err(Error::InvalidArgument(format!(
            "neighbor count {k} must be in [1, {})",
            g
        )));
    }
    Ok(())
}

fn top_k(i: usize, n: usize, k: usize, key: impl Fn(usize) -> f64) -> Vec<usize> {
    let mut others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
    others.sort_by(|&a, &b| key(a).total_cmp(&key(b)).then(a.cmp(&b)));
    others.truncate(k);
    others
}

/// The `k` nearest other centers of each token.
pub fn topo_neighbors(centers: &[Point3], k: usize) -> Result<Vec<Vec<usize>>> {
    let g = centers.len();
    check_k(k, g)?;
    Ok((0..g)
        .into_par_iter()
        .map(|i| top_k(i, g, k, |j| (centers[i] - centers[j]).norm_squared()))
        .collect())
}

/// The `k` other feature rows with the highest cosine similarity.
pub fn geo_neighbors(features: &DMatrix<f64>, k: usize) -> Result<Vec<Vec<usize>>> {
    let g = features.nrows();
    check_k(k, g)?;
    let norms: Vec<f64> = (0..g).map(|i| features.row(i).norm()).collect();
    let cosine = |i: usize, j: usize| {
        let d = norms[i] * norms[j];
        if d > 0.0 {
            features.row(i).dot(&features.row(j)) / d
        } else {
            0.0
        }
    };
    Ok((0..g)
        .into_par_iter()
        .map(|i| top_k(i, g, k, |j| -cosine(i, j)))
        .collect())
}
