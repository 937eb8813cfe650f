use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::BenchReport;
use super::shapes::{random_rotation, rotate_about_centroid};
use super::{derive_seed, CorpusConfig};
use crate::error::{Error, Result};
use crate::graph::build_cds_graph;
use crate::metrics::{geo_neighbors, npr_window, topo_neighbors};
use crate::pipeline::{analyze_tokens, tokenize, CdsVariant, CloudAnalysis, TokenizeConfig};
use crate::pointcloud::PointCloud;
use crate::serialize::{
    serialize_baseline, serialize_cds_bfs, serialize_cds_spectral, serialize_hilbert, serialize_zorder, Baseline,
    SerializationOrder, DEFAULT_CURVE_BITS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftStrategy {
    /// Mean of the CDS and GCS readings.
    Sas,
    Cds,
    Gcs,
    Zorder,
    Hilbert,
    FpsOrder,
    Random,
    EuclidCentroidSort,
    NaiveCurvatureSort,
}

impl DriftStrategy {
    pub fn name(self) -> &'static str {
        match self {
            DriftStrategy::Sas => "sas",
            DriftStrategy::Cds => "cds",
            DriftStrategy::Gcs => "gcs",
            DriftStrategy::Zorder => "zorder",
            DriftStrategy::Hilbert => "hilbert",
            DriftStrategy::FpsOrder => "fps_order",
            DriftStrategy::Random => "random",
            DriftStrategy::EuclidCentroidSort => "euclid_centroid_sort",
            DriftStrategy::NaiveCurvatureSort => "naive_curvature_sort",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftConfig {
    pub corpus: CorpusConfig,
    pub tokenize: TokenizeConfig,
    pub strategies: Vec<DriftStrategy>,
    pub rotations_per_shape: usize,
    /// Reference neighbors per token.
    pub k: usize,
    /// Sequence window radius.
    pub h: usize,
    pub curve_bits: u32,
    pub seed: u64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::default(),
            tokenize: TokenizeConfig::default(),
            strategies: vec![
                DriftStrategy::Sas,
                DriftStrategy::Cds,
                DriftStrategy::Gcs,
                DriftStrategy::Hilbert,
                DriftStrategy::Zorder,
                DriftStrategy::FpsOrder,
                DriftStrategy::Random,
            ],
            rotations_per_shape: 20,
            k: 8,
            h: 8,
            curve_bits: DEFAULT_CURVE_BITS,
            seed: 0,
        }
    }
}

fn orders_for(strategy: DriftStrategy, a: &CloudAnalysis, bits: u32, random_seed: u64) -> Result<Vec<SerializationOrder>> {
    let centers = &a.tokens.centers;
    Ok(match strategy {
        DriftStrategy::Sas => vec![a.order_cds.clone(), a.order_gcs.clone()],
        DriftStrategy::Cds => vec![a.order_cds.clone()],
        DriftStrategy::Gcs => vec![a.order_gcs.clone()],
        DriftStrategy::Zorder => vec![serialize_zorder(centers, bits)?],
        DriftStrategy::Hilbert => vec![serialize_hilbert(centers, bits)?],
        DriftStrategy::FpsOrder => vec![serialize_baseline(Baseline::FpsOrder, &a.tokens)?],
        DriftStrategy::Random => vec![serialize_baseline(Baseline::Random { seed: random_seed }, &a.tokens)?],
        DriftStrategy::EuclidCentroidSort => vec![serialize_baseline(Baseline::EuclidCentroidSort, &a.tokens)?],
        DriftStrategy::NaiveCurvatureSort => vec![serialize_baseline(Baseline::NaiveCurvatureSort, &a.tokens)?],
    })
}

struct Cell {
    shape: usize,
    rotation: usize,
    values: Vec<(DriftStrategy, f64, f64)>,
}

/// Topological and feature-space NPR of every strategy over random rotations
/// of every corpus shape.
///
/// Fails with [`Error::Assertion`] if a rotation changes the CDS or GCS
/// permutation.
pub fn run_drift_bench(cfg: &DriftConfig) -> Result<BenchReport> {
    if cfg.rotations_per_shape < 5 {
        return Err(Error::InvalidArgument(format!(
            "at least 5 rotations per shape required, got {}",
            cfg.rotations_per_shape
        )));
    }
    if cfg.strategies.is_empty() {
        return Err(Error::Empty("strategy list"));
    }
    let shapes = cfg.corpus.generate()?;
    let encoder = cfg.tokenize.encoder()?;
    let bases: Vec<CloudAnalysis> = shapes
        .par_iter()
        .map(|s| analyze_tokens(tokenize(&s.cloud, &cfg.tokenize, &encoder)?, &cfg.tokenize))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, usize)> = (0..shapes.len())
        .flat_map(|s| (0..cfg.rotations_per_shape).map(move |r| (s, r)))
        .collect();
    let cells: Vec<Cell> = jobs
        .par_iter()
        .map(|&(si, ri)| {
            let rot = random_rotation(derive_seed(cfg.seed, si as u64, ri as u64));
            let cloud = rotate_about_centroid(&shapes[si].cloud, &rot);
            let a = analyze_tokens(tokenize(&cloud, &cfg.tokenize, &encoder)?, &cfg.tokenize)?;
            let base = &bases[si];
            if a.order_cds.permutation != base.order_cds.permutation || a.order_gcs.permutation != base.order_gcs.permutation {
                return Err(Error::Assertion(format!(
                    "rotation {ri} of {} changed the CDS/GCS permutation",
                    shapes[si].id
                )));
            }
            let topo = topo_neighbors(&a.tokens.centers, cfg.k)?;
            let geo = geo_neighbors(&a.tokens.features, cfg.k)?;
            let random_seed = derive_seed(cfg.seed ^ 0x5eed, si as u64, ri as u64);
            let mut values = Vec::with_capacity(cfg.strategies.len());
            for &st in &cfg.strategies {
                let orders = orders_for(st, &a, cfg.curve_bits, random_seed)?;
                let (mut t, mut g) = (0.0, 0.0);
                for o in &orders {
                    t += npr_window(o, &topo, cfg.h)?;
                    g += npr_window(o, &geo, cfg.h)?;
                }
                values.push((st, t / orders.len() as f64, g / orders.len() as f64));
            }
            Ok(Cell { shape: si, rotation: ri, values })
        })
        .collect::<Result<_>>()?;

    let mut report = BenchReport::new("drift_bench", cfg)?;
    report.metadata.insert("reference_k".into(), cfg.k.to_string());
    report.metadata.insert("window_h".into(), cfg.h.to_string());
    report.metadata.insert("rotation_distribution".into(), "uniform_so3".into());
    report.metadata.insert("rotations_per_shape".into(), cfg.rotations_per_shape.to_string());
    report.metadata.insert("sas_reading".into(), "mean of cds and gcs".into());
    for cell in &cells {
        let label = format!("rotation_{}", cell.rotation);
        for &(st, t, g) in &cell.values {
            report.push(&shapes[cell.shape].id, st.name(), &label, "topo_npr", t, None);
            report.push(&shapes[cell.shape].id, st.name(), &label, "geo_npr", g, None);
        }
    }
    report.finish()?;
    Ok(report)
}

/// Number of rotations under which each permutation equals the unrotated one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvarianceCounts {
    pub rotations: usize,
    pub cds_bfs: usize,
    pub cds_spectral: usize,
    pub gcs: usize,
    pub zorder: usize,
    pub hilbert: usize,
}

impl std::ops::AddAssign for InvarianceCounts {
    fn add_assign(&mut self, o: Self) {
        self.rotations += o.rotations;
        self.cds_bfs += o.cds_bfs;
        self.cds_spectral += o.cds_spectral;
        self.gcs += o.gcs;
        self.zorder += o.zorder;
        self.hilbert += o.hilbert;
    }
}

struct Perms {
    bfs: Vec<usize>,
    spectral: Vec<usize>,
    gcs: Vec<usize>,
    zorder: Vec<usize>,
    hilbert: Vec<usize>,
}

fn perms(cloud: &PointCloud, cfg: &TokenizeConfig, bits: u32) -> Result<Perms> {
    let cfg = TokenizeConfig { cds_variant: CdsVariant::Spectral, ..cfg.clone() };
    let a = analyze_tokens(tokenize(cloud, &cfg, &cfg.encoder()?)?, &cfg)?;
    let graph = build_cds_graph(&a.tokens.centers, cfg.cds_scale)?;
    Ok(Perms {
        bfs: serialize_cds_bfs(&graph, &a.tokens.centers, cfg.knn_k)?.permutation,
        spectral: serialize_cds_spectral(&graph, &a.tokens.centers)?.permutation,
        gcs: a.order_gcs.permutation,
        zorder: serialize_zorder(&a.tokens.centers, bits)?.permutation,
        hilbert: serialize_hilbert(&a.tokens.centers, bits)?.permutation,
    })
}

/// Compares every serialization of `cloud` with the same serialization after
/// each seeded random rotation.
pub fn rotation_invariance(cloud: &PointCloud, cfg: &TokenizeConfig, rotation_seeds: &[u64], bits: u32) -> Result<InvarianceCounts> {
    let base = perms(cloud, cfg, bits)?;
    let per: Vec<InvarianceCounts> = rotation_seeds
        .par_iter()
        .map(|&seed| {
            let p = perms(&rotate_about_centroid(cloud, &random_rotation(seed)), cfg, bits)?;
            Ok(InvarianceCounts {
                rotations: 1,
                cds_bfs: (p.bfs == base.bfs) as usize,
                cds_spectral: (p.spectral == base.spectral) as usize,
                gcs: (p.gcs == base.gcs) as usize,
                zorder: (p.zorder == base.zorder) as usize,
                hilbert: (p.hilbert == base.hilbert) as usize,
            })
        })
        .collect::<Result<_>>()?;
    let mut total = InvarianceCounts::default();
    for c in per {
        total += c;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ShapeKind;

    fn small() -> DriftConfig {
        DriftConfig {
            corpus: CorpusConfig { kinds: vec![ShapeKind::Sphere], seeds_per_kind: 1, n_points: 256, base_seed: 0 },
            tokenize: TokenizeConfig { num_groups: 16, patch_size: 8, embed_dim: 16, ..Default::default() },
            strategies: vec![DriftStrategy::Sas, DriftStrategy::Hilbert],
            rotations_per_shape: 5,
            k: 4,
            h: 4,
            ..Default::default()
        }
    }

    #[test]
    fn row_count_and_determinism() {
        let cfg = small();
        let r = run_drift_bench(&cfg).unwrap();
        assert_eq!(r.rows.len(), 5 * 2 * 2);
        assert_eq!(r.summary.len(), 4);
        assert!(r.rows.iter().all(|row| (0.0..=1.0).contains(&row.value)));
        assert_eq!(r.csv_string().unwrap(), run_drift_bench(&cfg).unwrap().csv_string().unwrap());
    }

    #[test]
    fn too_few_rotations() {
        let cfg = DriftConfig { rotations_per_shape: 4, ..small() };
        assert!(run_drift_bench(&cfg).is_err());
    }

    #[test]
    fn sas_topo_reading_is_rotation_invariant() {
        let r = run_drift_bench(&small()).unwrap();
        let vals: Vec<f64> = r
            .rows
            .iter()
            .filter(|x| x.strategy == "sas" && x.metric == "topo_npr")
            .map(|x| x.value)
            .collect();
        assert!(vals.iter().all(|v| *v == vals[0]));
    }
}
