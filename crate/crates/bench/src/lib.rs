//! Shared fixtures for the benchmarks.

use sas_core::harness::{gen_shape, ShapeKind};
use sas_core::pipeline::{analyze, CloudAnalysis, TokenizeConfig};

/// A tokenized and analyzed torus with `groups` tokens.
pub fn torus_analysis(groups: usize) -> CloudAnalysis {
    let cfg = TokenizeConfig { num_groups: groups, embed_dim: 16, ..Default::default() };
    let cloud = gen_shape(ShapeKind::Torus, 1024, 0).expect("torus");
    analyze(&cloud, &cfg, &cfg.encoder().expect("encoder")).expect("analysis")
}
