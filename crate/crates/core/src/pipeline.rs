//! Cloud to tokens to graphs to orders, with the settings shared by every driver.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{
    build_cds_graph, build_gcs_graph, geodesic_basis, heat_descriptor, laplacian, sym_eig, HeatDescriptor,
    LaplacianMode, SpectralBasis, TokenGraph, DEFAULT_HEAT_TIMES,
};
use crate::ssm::Tensor;
use crate::pointcloud::{default_fps_seed, fps, knn_group, PatchEncoder, PointCloud, TokenSet};
use crate::serialize::{build_sas_sequence, serialize_cds_bfs, serialize_cds_spectral, serialize_gcs, SasSequence, SerializationOrder};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CdsVariant {
    Spectral,
    Bfs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TokenizeConfig {
    pub num_groups: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub encoder_seed: u64,
    /// Neighbors per token in the geodesic graph and the BFS neighbor lists.
    pub knn_k: usize,
    pub cds_scale: Option<f64>,
    pub gcs_scale: Option<f64>,
    /// Diffusion times before division by the largest eigenvalue.
    pub heat_times: Vec<f64>,
    pub cds_variant: CdsVariant,
}

impl Default for TokenizeConfig {
    fn default() -> Self {
        Self {
            num_groups: 64,
            patch_size: 32,
            embed_dim: 256,
            encoder_seed: 0,
            knn_k: 6,
            cds_scale: None,
            gcs_scale: None,
            heat_times: DEFAULT_HEAT_TIMES.to_vec(),
            cds_variant: CdsVariant::Spectral,
        }
    }
}

impl TokenizeConfig {
    pub fn encoder(&self) -> Result<PatchEncoder> {
        PatchEncoder::new(self.embed_dim, self.encoder_seed)
    }
}

/// FPS centers, KNN patches and encoded features.
pub fn tokenize(cloud: &PointCloud, cfg: &TokenizeConfig, encoder: &PatchEncoder) -> Result<TokenSet> {
    if cloud.len() < 4 {
        return Err(Error::TooFewPoints {
            found: cloud.len(),
            required: 4,
        });
    }
    let centers = fps(cloud, cfg.num_groups, default_fps_seed(cloud))?;
    knn_group(cloud, &centers, cfg.patch_size, encoder)
}

/// Everything derived from one tokenized cloud.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CloudAnalysis {
    pub tokens: TokenSet,
    pub cds_graph: TokenGraph,
    pub geodesic: SpectralBasis,
    pub heat: HeatDescriptor,
    pub gcs_graph: TokenGraph,
    pub order_cds: SerializationOrder,
    pub order_gcs: SerializationOrder,
}

impl CloudAnalysis {
    pub fn sas_sequence(&self) -> Result<SasSequence> {
        build_sas_sequence(&self.tokens.features, &self.order_cds, &self.order_gcs)
    }
}

pub fn analyze_tokens(tokens: TokenSet, cfg: &TokenizeConfig) -> Result<CloudAnalysis> {
    let cds_graph = build_cds_graph(&tokens.centers, cfg.cds_scale)?;
    let order_cds = match cfg.cds_variant {
        CdsVariant::Spectral => serialize_cds_spectral(&cds_graph, &tokens.centers)?,
        CdsVariant::Bfs => serialize_cds_bfs(&cds_graph, &tokens.centers, cfg.knn_k)?,
    };
    let geodesic = geodesic_basis(&tokens.centers, cfg.knn_k)?;
    let lmax = geodesic.max_eigenvalue();
    let lmax = if lmax > 0.0 { lmax } else { 1.0 };
    let scales: Vec<f64> = cfg.heat_times.iter().map(|t| t / lmax).collect();
    let heat = heat_descriptor(&geodesic, &scales)?;
    let gcs_graph = build_gcs_graph(&heat, cfg.gcs_scale)?;
    let order_gcs = serialize_gcs(&heat)?;
    Ok(CloudAnalysis {
        tokens,
        cds_graph,
        geodesic,
        heat,
        gcs_graph,
        order_cds,
        order_gcs,
    })
}

pub fn analyze(cloud: &PointCloud, cfg: &TokenizeConfig, encoder: &PatchEncoder) -> Result<CloudAnalysis> {
    analyze_tokens(tokenize(cloud, cfg, encoder)?, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphDump {
    pub kind: String,
    pub kernel_scale: f64,
    pub affinity: Tensor,
    pub laplacian_mode: LaplacianMode,
    pub laplacian: Tensor,
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the eigenvector of `eigenvalues[k]`.
    pub eigenvectors: Tensor,
}

fn dump_graph(graph: &TokenGraph, mode: LaplacianMode) -> Result<GraphDump> {
    let l = laplacian(&graph.affinity, mode)?;
    let basis = sym_eig(&l)?;
    Ok(GraphDump {
        kind: graph.kind.name().into(),
        kernel_scale: graph.kernel_scale,
        affinity: Tensor::from_matrix(&graph.affinity),
        laplacian_mode: mode,
        laplacian: Tensor::from_matrix(&l),
        eigenvalues: basis.eigenvalues,
        eigenvectors: Tensor::from_matrix(&basis.eigenvectors),
    })
}

/// Affinity, Laplacian and eigendata of both token graphs, row-major.
///
/// CDS is dumped with the normalized Laplacian its spectral order uses, GCS
/// with the combinatorial one used by alignment.
pub fn debug_dump(analysis: &CloudAnalysis) -> Result<Vec<GraphDump>> {
    Ok(vec![
        dump_graph(&analysis.cds_graph, LaplacianMode::SymmetricNormalized)?,
        dump_graph(&analysis.gcs_graph, LaplacianMode::Combinatorial)?,
    ])
}
