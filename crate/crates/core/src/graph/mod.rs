//! Token graphs: Gaussian affinities over token centers (CDS) and heat
//! descriptors (GCS), Laplacians, eigenbases and geodesic distances.

mod eigen;
mod geodesic;
mod heat;
mod laplacian;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::Point3;

pub use eigen::{sym_eig, SpectralBasis};
pub use geodesic::{geodesic_distances, KnnGraph};
pub use heat::{default_heat_scales, heat_descriptor, HeatDescriptor, DEFAULT_HEAT_TIMES};
pub use laplacian::{laplacian, spectral_basis, LaplacianMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    Cds,
    Gcs,
}

impl GraphKind {
    pub fn name(self) -> &'static str {
        match self {
            GraphKind::Cds => "cds",
            GraphKind::Gcs => "gcs",
        }
    }
}

/// Dense Gaussian affinity graph over tokens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenGraph {
    pub kind: GraphKind,
    pub affinity: DMatrix<f64>,
    pub kernel_scale: f64,
    /// Set when the adaptive scale could not be computed and `γ = 1` was used.
    pub degenerate_scale: bool,
}

impl TokenGraph {
    pub fn size(&self) -> usize {
        self.affinity.nrows()
    }
}

pub fn pairwise_distances(points: &[Point3]) -> DMatrix<f64> {
    let n = points.len();
    let mut d = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let v = (points[i] - points[j]).norm();
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    d
}

/// Median of the strict upper triangle; even counts average the two middle values.
pub fn median_scale(pairwise_distances: &DMatrix<f64>) -> Result<f64> {
    let n = pairwise_distances.nrows();
    let mut vals = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            vals.push(pairwise_distances[(i, j)]);
        }
    }
    median_of_distances(&vals)
}

/// Median of a list of distances; fails unless at least one is strictly positive.
pub fn median_of_distances(values: &[f64]) -> Result<f64> {
    if !values.iter().any(|&v| v > 0.0) {
        return Err(Error::DegenerateScale);
    }
    let mut vals = values.to_vec();
    vals.sort_by(f64::total_cmp);
    let m = vals.len();
    let median = if m % 2 == 1 {
        vals[m / 2]
    } else {
        0.5 * (vals[m / 2 - 1] + vals[m / 2])
    };
    if median > 0.0 {
        Ok(median)
    } else {
        Err(Error::DegenerateScale)
    }
}

fn gaussian_affinity(dist: &DMatrix<f64>, scale: f64) -> DMatrix<f64> {
    let inv = 1.0 / (scale * scale);
    let n = dist.nrows();
    let mut w = DMatrix::from_element(n, n, 1.0);
    for i in 0..n {
        for j in i + 1..n {
            let v = (-dist[(i, j)] * dist[(i, j)] * inv).exp();
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
    }
    w
}

/// `w(i,j) = exp(-|u_i - u_j|^2 / σ^2)`, σ defaulting to the median center distance.
pub fn build_cds_graph(centers: &[Point3], scale: Option<f64>) -> Result<TokenGraph> {
    if centers.len() < 2 {
        return Err(Error::InvalidArgument(
            "a token graph needs at least 2 tokens".into(),
        ));
    }
    let dist = pairwise_distances(centers);
    let sigma = match scale {
        Some(s) if s > 0.0 => s,
        Some(s) => return Err(Error::InvalidArgument(format!("kernel scale {s} must be positive"))),
        None => median_scale(&dist)?,
    };
    Ok(TokenGraph {
        kind: GraphKind::Cds,
        affinity: gaussian_affinity(&dist, sigma),
        kernel_scale: sigma,
        degenerate_scale: false,
    })
}

/// `w(i,j) = exp(-|h_i - h_j|^2 / γ^2)` over heat-descriptor rows.
///
/// With identical descriptors the adaptive γ is undefined; the graph then uses
/// γ = 1 (all weights 1) and sets `degenerate_scale`.
pub fn build_gcs_graph(descriptor: &HeatDescriptor, scale: Option<f64>) -> Result<TokenGraph> {
    let rows = descriptor.values.nrows();
    if rows < 2 {
        return Err(Error::InvalidArgument(
            "a token graph needs at least 2 tokens".into(),
        ));
    }
    let mut dist = DMatrix::zeros(rows, rows);
    for i in 0..rows {
        for j in i + 1..rows {
            let v = (descriptor.values.row(i) - descriptor.values.row(j)).norm();
            dist[(i, j)] = v;
            dist[(j, i)] = v;
        }
    }
    let (gamma, degenerate) = match scale {
        Some(s) if s > 0.0 => (s, false),
        Some(s) => return Err(Error::InvalidArgument(format!("kernel scale {s} must be positive"))),
        None => match median_scale(&dist) {
            Ok(g) => (g, false),
            Err(Error::DegenerateScale) => (1.0, true),
            Err(e) => return Err(e),
        },
    };
    Ok(TokenGraph {
        kind: GraphKind::Gcs,
        affinity: gaussian_affinity(&dist, gamma),
        kernel_scale: gamma,
        degenerate_scale: degenerate,
    })
}

/// Spectral basis whose heat kernel yields the GCS descriptor.
///
/// Geodesic distances over the center KNN graph feed a dense Gaussian kernel
/// (σ = median geodesic distance); its combinatorial Laplacian is diagonalized.
pub fn geodesic_basis(centers: &[Point3], knn_k: usize) -> Result<SpectralBasis> {
    let geo = geodesic_distances(centers, knn_k)?;
    let sigma = median_scale(&geo)?;
    let w = gaussian_affinity(&geo, sigma);
    spectral_basis(&w, LaplacianMode::Combinatorial)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Vector3};

    fn spiral(n: usize) -> Vec<Point3> {
        (0..n)
            .map(|i| {
                let t = i as f64 * 0.37;
                Point3::new(t.cos(), t.sin(), 0.05 * t * t.sqrt())
            })
            .collect()
    }

    #[test]
    fn median_odd_and_even() {
        assert_eq!(median_of_distances(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert_eq!(median_of_distances(&[1.0, 2.0, 3.0, 4.0]).unwrap(), 2.5);
        let mut m = DMatrix::zeros(3, 3);
        m[(0, 1)] = 1.0;
        m[(0, 2)] = 3.0;
        m[(1, 2)] = 2.0;
        assert_eq!(median_scale(&(&m + m.transpose())).unwrap(), 2.0);
    }

    #[test]
    fn median_matches_sort_oracle() {
        let d = pairwise_distances(&spiral(64));
        let mut all = Vec::new();
        for i in 0..64 {
            for j in i + 1..64 {
                all.push(d[(i, j)]);
            }
        }
        all.sort_by(f64::total_cmp);
        let expected = 0.5 * (all[all.len() / 2 - 1] + all[all.len() / 2]);
        assert_eq!(median_scale(&d).unwrap(), expected);
    }

    #[test]
    fn median_all_zero_fails() {
        assert!(matches!(
            median_scale(&DMatrix::zeros(3, 3)),
            Err(Error::DegenerateScale)
        ));
    }

    #[test]
    fn cds_weight_at_one_sigma() {
        let g = build_cds_graph(
            &[Point3::zeros(), Point3::new(0.7, 0.0, 0.0)],
            Some(0.7),
        )
        .unwrap();
        assert!((g.affinity[(0, 1)] - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(g.affinity[(0, 0)], 1.0);
    }

    #[test]
    fn cds_coincident_centers_weight_one() {
        let g = build_cds_graph(
            &[Point3::zeros(), Point3::zeros(), Point3::new(1.0, 0.0, 0.0)],
            None,
        )
        .unwrap();
        assert_eq!(g.affinity[(0, 1)], 1.0);
    }

    #[test]
    fn cds_rotation_invariant() {
        let pts = spiral(40);
        let rot = Rotation3::from_axis_angle(&Vector3::y_axis(), 1.1)
            * Rotation3::from_axis_angle(&Vector3::x_axis(), -0.4);
        let moved: Vec<Point3> = pts.iter().map(|p| rot * p + Point3::new(0.2, 0.5, -1.0)).collect();
        let a = build_cds_graph(&pts, None).unwrap();
        let b = build_cds_graph(&moved, None).unwrap();
        assert!((a.affinity - b.affinity).amax() < 1e-12);
    }

    #[test]
    fn cds_graph_invariants() {
        let g = build_cds_graph(&spiral(30), None).unwrap();
        assert!((&g.affinity - g.affinity.transpose()).amax() < 1e-12);
        assert!(g.affinity.iter().all(|&w| w > 0.0 && w <= 1.0));
    }

    #[test]
    fn gcs_weights() {
        let desc = HeatDescriptor {
            scales: vec![1.0, 2.0],
            values: DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.6, 1.8]),
        };
        let g = build_gcs_graph(&desc, Some(1.0)).unwrap();
        assert_eq!(g.affinity[(0, 1)], 1.0);
        assert!((g.affinity[(0, 2)] - (-1.0f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn gcs_identical_descriptors_fall_back() {
        let desc = HeatDescriptor {
            scales: vec![1.0],
            values: DMatrix::from_element(4, 1, 0.3),
        };
        let g = build_gcs_graph(&desc, None).unwrap();
        assert!(g.degenerate_scale);
        assert_eq!(g.kernel_scale, 1.0);
        assert!(g.affinity.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn gcs_rotation_invariant() {
        let pts = spiral(48);
        let rot = Rotation3::from_euler_angles(0.3, -1.2, 2.0);
        let moved: Vec<Point3> = pts.iter().map(|p| rot * p).collect();
        let graph = |c: &[Point3]| {
            let basis = geodesic_basis(c, 6).unwrap();
            let desc = heat_descriptor(&basis, &default_heat_scales(&basis)).unwrap();
            build_gcs_graph(&desc, None).unwrap()
        };
        assert!((graph(&pts).affinity - graph(&moved).affinity).amax() < 1e-9);
    }
}
