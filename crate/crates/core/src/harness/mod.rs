//! Synthetic corpora, perturbations and the experiment drivers.

mod ablation;
mod bfs_spectral;
mod drift;
mod report;
mod shapes;

pub use ablation::{run_ablation, run_ablations, AblationConfig, AblationVariant};
pub use bfs_spectral::{run_bfs_vs_spectral, BfsSpectralConfig};
pub use drift::{rotation_invariance, run_drift_bench, DriftConfig, DriftStrategy, InvarianceCounts};
pub use report::{BenchReport, ReportRow, SummaryRow, CSV_HEADER};
pub use shapes::{
    gen_shape, occlusion_keep_count, perturb, random_rotation, rotate_about_centroid, Perturbation, ShapeKind,
    MIN_SHAPE_POINTS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pointcloud::PointCloud;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusConfig {
    pub kinds: Vec<ShapeKind>,
    pub seeds_per_kind: usize,
    pub n_points: usize,
    pub base_seed: u64,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        Self {
            kinds: ShapeKind::ALL.to_vec(),
            seeds_per_kind: 4,
            n_points: 1024,
            base_seed: 0,
        }
    }
}

impl CorpusConfig {
    pub fn smooth() -> Self {
        Self {
            kinds: ShapeKind::SMOOTH.to_vec(),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.kinds.len() * self.seeds_per_kind
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `(shape_id, kind, instance, cloud)`, kinds outermost.
    pub fn generate(&self) -> Result<Vec<CorpusShape>> {
        if self.is_empty() {
            return Err(Error::Empty("corpus"));
        }
        let mut out = Vec::with_capacity(self.len());
        for &kind in &self.kinds {
            for instance in 0..self.seeds_per_kind {
                let seed = self.base_seed + instance as u64;
                out.push(CorpusShape {
                    id: format!("{kind}_{seed}"),
                    kind,
                    instance,
                    cloud: gen_shape(kind, self.n_points, seed)?,
                });
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusShape {
    pub id: String,
    pub kind: ShapeKind,
    pub instance: usize,
    pub cloud: PointCloud,
}

/// SplitMix64 finalizer over a base seed and two indices.
pub fn derive_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        .wrapping_add(a.wrapping_mul(0x9e37_79b9_7f4a_7c15))
        .wrapping_add(b.wrapping_mul(0xd1b5_4a32_d192_ed03));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
