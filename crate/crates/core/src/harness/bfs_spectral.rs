use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::BenchReport;
use super::CorpusConfig;
use crate::error::{Error, Result};
use crate::graph::{build_cds_graph, KnnGraph};
use crate::metrics::npr_bfs_reference;
use crate::pipeline::{tokenize, TokenizeConfig};
use crate::serialize::{serialize_cds_bfs, serialize_cds_spectral, SerializationOrder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BfsSpectralConfig {
    pub corpus: CorpusConfig,
    pub tokenize: TokenizeConfig,
    /// Hop radius of the reference neighborhoods.
    pub r: usize,
    /// Each serializer is timed this many times per shape; the minimum is kept.
    pub timing_repeats: usize,
}

impl Default for BfsSpectralConfig {
    fn default() -> Self {
        Self {
            corpus: CorpusConfig::smooth(),
            tokenize: TokenizeConfig::default(),
            r: 2,
            timing_repeats: 5,
        }
    }
}

fn timed<F: Fn() -> Result<SerializationOrder>>(repeats: usize, f: F) -> Result<(SerializationOrder, f64)> {
    let mut best = f64::INFINITY;
    let mut out = None;
    for _ in 0..repeats.max(1) {
        let t = Instant::now();
        let o = f()?;
        best = best.min(t.elapsed().as_secs_f64() * 1e3);
        out = Some(o);
    }
    Ok((out.expect("at least one repeat"), best))
}

/// NPR of spectral CDS against the BFS traversal on the same kernel graph,
/// plus per-variant serialization wall time.
pub fn run_bfs_vs_spectral(cfg: &BfsSpectralConfig) -> Result<BenchReport> {
    if cfg.r == 0 {
        return Err(Error::InvalidArgument("hop radius must be at least 1".into()));
    }
    let shapes = cfg.corpus.generate()?;
    let encoder = cfg.tokenize.encoder()?;
    let tokens = shapes
        .par_iter()
        .map(|s| tokenize(&s.cloud, &cfg.tokenize, &encoder))
        .collect::<Result<Vec<_>>>()?;

    // Timing runs sequentially so the two variants see the same machine load.
    let metric = format!("npr_bfs_r{}", cfg.r);
    let mut report = BenchReport::new("bfs_vs_spectral", cfg)?;
    for (shape, tok) in shapes.iter().zip(&tokens) {
        let graph = build_cds_graph(&tok.centers, cfg.tokenize.cds_scale)?;
        let knn = KnnGraph::build(&tok.centers, cfg.tokenize.knn_k)?;
        let (bfs, bfs_ms) = timed(cfg.timing_repeats, || serialize_cds_bfs(&graph, &tok.centers, cfg.tokenize.knn_k))?;
        let (spec, spec_ms) = timed(cfg.timing_repeats, || serialize_cds_spectral(&graph, &tok.centers))?;
        let self_npr = npr_bfs_reference(&bfs, &bfs, &knn, cfg.r)?;
        let spec_npr = npr_bfs_reference(&spec, &bfs, &knn, cfg.r)?;
        report.push(&shape.id, "cds_bfs", "identity", &metric, self_npr, Some(bfs_ms));
        report.push(&shape.id, "cds_spectral", "identity", &metric, spec_npr, Some(spec_ms));
    }
    report.metadata.insert("tokens".into(), cfg.tokenize.num_groups.to_string());
    report.metadata.insert("hop_graph".into(), format!("knn_{}", cfg.tokenize.knn_k));
    report.metadata.insert(
        "timing".into(),
        format!("min of {} runs per serializer, kernel graph prebuilt", cfg.timing_repeats.max(1)),
    );
    report.finish()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ShapeKind;

    #[test]
    fn bfs_against_itself_is_one() {
        let cfg = BfsSpectralConfig {
            corpus: CorpusConfig { kinds: vec![ShapeKind::Torus], seeds_per_kind: 2, n_points: 256, base_seed: 0 },
            tokenize: TokenizeConfig { num_groups: 24, patch_size: 8, embed_dim: 16, ..Default::default() },
            timing_repeats: 1,
            ..Default::default()
        };
        let r = run_bfs_vs_spectral(&cfg).unwrap();
        assert_eq!(r.rows.len(), 4);
        assert_eq!(r.mean("cds_bfs", "npr_bfs_r2"), Some(1.0));
        assert!(r.rows.iter().all(|x| x.elapsed_ms.is_some()));
        let s = r.mean("cds_spectral", "npr_bfs_r2").unwrap();
        assert!((0.0..=1.0).contains(&s));
    }
}
