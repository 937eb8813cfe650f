//! Point-cloud ingestion, normalization, farthest-point sampling and patch
//! tokenization.

mod io;
mod patch;
mod sampling;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_cloud, parse_ply_ascii, parse_xyz_ascii, CloudFormat};
pub use patch::{knn_group, patch_statistics, PatchEncoder, TokenSet, PATCH_STATS_DIM};
pub use sampling::{default_fps_seed, fps};

pub type Point3 = Vector3<f64>;

/// Raw 3D points with an optional provenance label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointCloud {
    pub points: Vec<Point3>,
    pub source_tag: Option<String>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self {
            points,
            source_tag: None,
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.source_tag = Some(tag.into());
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Point3 {
        centroid(&self.points)
    }

    pub fn max_radius(&self) -> f64 {
        self.points.iter().map(|p| p.norm()).fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }
}

pub fn centroid(points: &[Point3]) -> Point3 {
    if points.is_empty() {
        return Point3::zeros();
    }
    let sum = points.iter().fold(Point3::zeros(), |acc, p| acc + p);
    sum / points.len() as f64
}

/// Centers the cloud at the origin and scales it so the farthest point lies on
/// the unit sphere.
pub fn normalize_unit_sphere(cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.is_empty() {
        return Err(Error::Empty("point cloud"));
    }
    let c = cloud.centroid();
    let centered: Vec<Point3> = cloud.points.iter().map(|p| p - c).collect();
    let radius = centered.iter().map(|p| p.norm()).fold(0.0, f64::max);
    // Rounding in the centroid leaves a residual radius for coincident points.
    let magnitude = cloud.points.iter().map(|p| p.amax()).fold(1.0, f64::max);
    if !(radius > 64.0 * f64::EPSILON * magnitude) {
        return Err(Error::DegenerateCloud);
    }
    Ok(PointCloud {
        points: centered.into_iter().map(|p| p / radius).collect(),
        source_tag: cloud.source_tag.clone(),
    })
}
