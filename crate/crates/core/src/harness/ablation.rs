use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::report::BenchReport;
use super::shapes::{random_rotation, rotate_about_centroid};
use super::{derive_seed, CorpusConfig};
use crate::align::{align_features, AlignMode, AlignmentConfig, SourceBank};
use crate::error::{Error, Result};
use crate::pipeline::{analyze_tokens, tokenize, CloudAnalysis, TokenizeConfig};
use crate::serialize::{
    build_sas_sequence, build_sequence, serialize_baseline, serialize_hilbert, serialize_zorder, Baseline, SasSequence,
    DEFAULT_CURVE_BITS,
};
use crate::ssm::{evaluate, train_toy, Episode, FusionMode, Gate, ModelConfig, ReconModel, StackConfig, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "alpha")]
pub enum AblationVariant {
    /// SAS sequence, interleaved fusion, no alignment.
    Full,
    NoCds,
    NoGcs,
    Zorder,
    Hilbert,
    FpsOrder,
    Random,
    ConcatHdm,
    InterleaveHdm,
    SgaOn,
    SgaOff,
    SimpleShift,
    FixedAlpha(f64),
}

impl AblationVariant {
    pub const ALL: [AblationVariant; 13] = [
        AblationVariant::Full,
        AblationVariant::NoCds,
        AblationVariant::NoGcs,
        AblationVariant::Zorder,
        AblationVariant::Hilbert,
        AblationVariant::FpsOrder,
        AblationVariant::Random,
        AblationVariant::ConcatHdm,
        AblationVariant::InterleaveHdm,
        AblationVariant::SgaOn,
        AblationVariant::SgaOff,
        AblationVariant::SimpleShift,
        AblationVariant::FixedAlpha(0.5),
    ];

    pub fn name(self) -> String {
        match self {
            AblationVariant::Full => "full".into(),
            AblationVariant::NoCds => "no_cds".into(),
            AblationVariant::NoGcs => "no_gcs".into(),
            AblationVariant::Zorder => "zorder".into(),
            AblationVariant::Hilbert => "hilbert".into(),
            AblationVariant::FpsOrder => "fps_order".into(),
            AblationVariant::Random => "random".into(),
            AblationVariant::ConcatHdm => "concat_hdm".into(),
            AblationVariant::InterleaveHdm => "interleave_hdm".into(),
            AblationVariant::SgaOn => "sga_on".into(),
            AblationVariant::SgaOff => "sga_off".into(),
            AblationVariant::SimpleShift => "simple_shift".into(),
            AblationVariant::FixedAlpha(a) => format!("fixed_alpha_{a}"),
        }
    }

    /// Alignment applied to rotated targets, or `None` for variants scored on
    /// the training domain.
    fn alignment(self, cfg: &AblationConfig) -> Option<AlignMode> {
        match self {
            AblationVariant::SgaOn => Some(cfg.align.mode),
            AblationVariant::SgaOff => Some(AlignMode::Off),
            AblationVariant::SimpleShift => Some(AlignMode::SimpleShift(cfg.simple_shift_beta)),
            AblationVariant::FixedAlpha(a) => Some(AlignMode::FixedAlpha(a)),
            _ => None,
        }
    }

    fn training(self) -> (Layout, FusionMode) {
        let layout = match self {
            AblationVariant::NoCds => Layout::NoCds,
            AblationVariant::NoGcs => Layout::NoGcs,
            AblationVariant::Zorder => Layout::Zorder,
            AblationVariant::Hilbert => Layout::Hilbert,
            AblationVariant::FpsOrder => Layout::FpsOrder,
            AblationVariant::Random => Layout::Random,
            _ => Layout::Sas,
        };
        let fusion = match self {
            AblationVariant::ConcatHdm => FusionMode::Concat,
            _ => FusionMode::Interleave,
        };
        (layout, fusion)
    }
}

impl std::str::FromStr for AblationVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(a) = s.strip_prefix("fixed_alpha_") {
            let a: f64 = a
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad alpha in '{s}'")))?;
            return Ok(AblationVariant::FixedAlpha(a));
        }
        AblationVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation variant '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Layout {
    Sas,
    NoCds,
    NoGcs,
    Zorder,
    Hilbert,
    FpsOrder,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationConfig {
    pub corpus: CorpusConfig,
    pub tokenize: TokenizeConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Model seeds; every comparison averages over them.
    pub seeds: Vec<u64>,
    pub align: AlignmentConfig,
    pub simple_shift_beta: f64,
    pub curve_bits: u32,
    /// Z-score token features with source-corpus column statistics before
    /// they reach the model.
    pub standardize: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        let tokenize = TokenizeConfig { embed_dim: 16, ..Default::default() };
        Self {
            corpus: CorpusConfig::default(),
            model: ModelConfig {
                stack: StackConfig {
                    embed_dim: tokenize.embed_dim,
                    enc_layers: 1,
                    dec_layers: 1,
                    gate: Gate::Identity,
                    ..Default::default()
                },
                patch_size: tokenize.patch_size,
                ..Default::default()
            },
            tokenize,
            train: TrainConfig { epochs: 30, lr: 0.3, clip_norm: Some(1.0), ..Default::default() },
            seeds: vec![0, 1, 2, 3],
            align: AlignmentConfig::default(),
            simple_shift_beta: 0.5,
            curve_bits: DEFAULT_CURVE_BITS,
            standardize: true,
        }
    }
}

impl AblationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Empty("seed list"));
        }
        if self.corpus.seeds_per_kind < 2 {
            return Err(Error::InvalidArgument("prompts need at least two instances per shape kind".into()));
        }
        if self.model.stack.embed_dim != self.tokenize.embed_dim || self.model.patch_size != self.tokenize.patch_size {
            return Err(Error::DimensionMismatch("model and tokenizer disagree on embed_dim or patch_size".into()));
        }
        if !(0.0..=1.0).contains(&self.simple_shift_beta) {
            return Err(Error::InvalidArgument("simple_shift_beta must lie in [0, 1]".into()));
        }
        self.align.validate()
    }
}

/// Source clouds, their rotated copies and the prompt partner of each shape.
struct Prepared {
    ids: Vec<String>,
    standardizer: Option<Standardizer>,
    source: Vec<CloudAnalysis>,
    partner: Vec<usize>,
    bank: SourceBank,
}

fn prepare(cfg: &AblationConfig) -> Result<Prepared> {
    let shapes = cfg.corpus.generate()?;
    let encoder = cfg.tokenize.encoder()?;
    let mut source = shapes
        .par_iter()
        .map(|s| analyze_tokens(tokenize(&s.cloud, &cfg.tokenize, &encoder)?, &cfg.tokenize))
        .collect::<Result<Vec<_>>>()?;
    let standardizer = cfg.standardize.then(|| Standardizer::fit(&source));
    if let Some(st) = &standardizer {
        for a in source.iter_mut() {
            st.apply(&mut a.tokens.features);
        }
    }
    let per = cfg.corpus.seeds_per_kind;
    let partner = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| i - s.instance + (s.instance + 1) % per)
        .collect();
    let mut bank = SourceBank::default();
    for (s, a) in shapes.iter().zip(&source) {
        bank.add_analysis(&s.kind.to_string(), a);
    }
    Ok(Prepared {
        ids: shapes.iter().map(|s| s.id.clone()).collect(),
        standardizer,
        source,
        partner,
        bank,
    })
}

/// Per-column affine map fitted on every source token.
struct Standardizer {
    mean: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Standardizer {
    fn fit(source: &[CloudAnalysis]) -> Self {
        let d = source[0].tokens.feature_dim();
        let n: usize = source.iter().map(|a| a.tokens.len()).sum();
        let mut mean = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for a in source {
            for r in a.tokens.features.row_iter() {
                for (k, v) in r.iter().enumerate() {
                    mean[k] += v;
                    sq[k] += v * v;
                }
            }
        }
        let inv_std = (0..d)
            .map(|k| {
                mean[k] /= n as f64;
                let var = sq[k] / n as f64 - mean[k] * mean[k];
                if var > 1e-24 {
                    1.0 / var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, inv_std }
    }

    fn apply(&self, features: &mut nalgebra::DMatrix<f64>) {
        for mut r in features.row_iter_mut() {
            for (k, v) in r.iter_mut().enumerate() {
                *v = (*v - self.mean[k]) * self.inv_std[k];
            }
        }
    }
}

fn rotated_targets(p: &Prepared, cfg: &AblationConfig, seed: u64) -> Result<Vec<CloudAnalysis>> {
    let shapes = cfg.corpus.generate()?;
    let encoder = cfg.tokenize.encoder()?;
    shapes
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let cloud = rotate_about_centroid(&s.cloud, &random_rotation(derive_seed(seed, i as u64, 0xa11)));
            let mut a = analyze_tokens(tokenize(&cloud, &cfg.tokenize, &encoder)?, &cfg.tokenize)?;
            if let Some(st) = &p.standardizer {
                st.apply(&mut a.tokens.features);
            }
            Ok(a)
        })
        .collect()
}

fn sequence(a: &CloudAnalysis, layout: Layout, bits: u32, seed: u64) -> Result<SasSequence> {
    let f = &a.tokens.features;
    let coord = |o| build_sequence(f, &[(&o, false), (&o, true), (&o, false), (&o, true)]);
    match layout {
        Layout::Sas => build_sas_sequence(f, &a.order_cds, &a.order_gcs),
        Layout::NoCds => build_sequence(f, &[(&a.order_gcs, false), (&a.order_gcs, true)]),
        Layout::NoGcs => build_sequence(f, &[(&a.order_cds, false), (&a.order_cds, true)]),
        Layout::Zorder => coord(serialize_zorder(&a.tokens.centers, bits)?),
        Layout::Hilbert => coord(serialize_hilbert(&a.tokens.centers, bits)?),
        Layout::FpsOrder => coord(serialize_baseline(Baseline::FpsOrder, &a.tokens)?),
        Layout::Random => coord(serialize_baseline(Baseline::Random { seed }, &a.tokens)?),
    }
}

fn episodes(p: &Prepared, queries: &[CloudAnalysis], layout: Layout, cfg: &AblationConfig, seed: u64) -> Result<Vec<Episode>> {
    queries
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let prompt = sequence(&p.source[p.partner[i]], layout, cfg.curve_bits, derive_seed(seed, i as u64, 1))?;
            let query = sequence(q, layout, cfg.curve_bits, derive_seed(seed, i as u64, 2))?;
            Episode::new(prompt, q.tokens.clone(), query)
        })
        .collect()
}

struct Trained {
    model: ReconModel,
    trace: Vec<f64>,
}

fn train(p: &Prepared, layout: Layout, fusion: FusionMode, cfg: &AblationConfig, seed: u64) -> Result<Trained> {
    let eps = episodes(p, &p.source, layout, cfg, seed)?;
    let mut mcfg = cfg.model;
    mcfg.fusion = fusion;
    mcfg.stack.seed = seed;
    let mut model = ReconModel::init(&mcfg)?;
    let tcfg = TrainConfig { seed, ..cfg.train };
    let trace = train_toy(&mut model, &eps, &tcfg)?;
    Ok(Trained { model, trace })
}

fn eval_seed(seed: u64) -> u64 {
    derive_seed(seed, 0xe7a1, 0)
}

/// Rotated-target loss with the given alignment; parameters must not change.
fn score_aligned(p: &Prepared, t: &Trained, mode: AlignMode, cfg: &AblationConfig, seed: u64) -> Result<(f64, f64)> {
    let before = t.model.checksum();
    let mut targets = rotated_targets(p, cfg, seed)?;
    let align = AlignmentConfig { mode, ..cfg.align.clone() };
    let mut shift = 0.0;
    for target in targets.iter_mut() {
        let out = align_features(&target.tokens.features, target, &p.bank, &align)?;
        shift += out.shift_norm;
        target.tokens.features = out.features;
    }
    let eps = episodes(p, &targets, Layout::Sas, cfg, seed)?;
    let loss = evaluate(&t.model, &eps, cfg.train.mask_ratio, eval_seed(seed))?;
    if t.model.checksum() != before {
        return Err(Error::Assertion("alignment changed model parameters".into()));
    }
    Ok((loss, shift / targets.len() as f64))
}

/// Runs every variant over every seed, sharing trained models between
/// variants that train identically.
pub fn run_ablations(variants: &[AblationVariant], cfg: &AblationConfig) -> Result<BenchReport> {
    cfg.validate()?;
    if variants.is_empty() {
        return Err(Error::Empty("variant list"));
    }
    let p = prepare(cfg)?;
    let mut keys: Vec<(Layout, FusionMode, u64)> = Vec::new();
    for v in variants {
        let (l, f) = v.training();
        for &s in &cfg.seeds {
            if !keys.contains(&(l, f, s)) {
                keys.push((l, f, s));
            }
        }
    }
    let trained: Vec<Trained> = keys
        .par_iter()
        .map(|&(l, f, s)| train(&p, l, f, cfg, s))
        .collect::<Result<_>>()?;
    let models: HashMap<(Layout, FusionMode, u64), &Trained> = keys.iter().copied().zip(trained.iter()).collect();

    let jobs: Vec<(AblationVariant, u64)> = variants
        .iter()
        .flat_map(|&v| cfg.seeds.iter().map(move |&s| (v, s)))
        .collect();
    let results: Vec<Vec<(String, &'static str, f64)>> = jobs
        .par_iter()
        .map(|&(v, s)| {
            let (l, f) = v.training();
            let t = models[&(l, f, s)];
            match v.alignment(cfg) {
                Some(mode) => {
                    let (loss, shift) = score_aligned(&p, t, mode, cfg, s)?;
                    Ok(vec![
                        ("rotated".to_string(), "chamfer", loss),
                        ("rotated".to_string(), "shift_norm", shift),
                    ])
                }
                None => {
                    let eps = episodes(&p, &p.source, l, cfg, s)?;
                    let loss = evaluate(&t.model, &eps, cfg.train.mask_ratio, eval_seed(s))?;
                    Ok(vec![
                        ("identity".to_string(), "chamfer", loss),
                        ("identity".to_string(), "train_loss_first", t.trace[0]),
                        ("identity".to_string(), "train_loss_last", *t.trace.last().expect("nonempty trace")),
                    ])
                }
            }
        })
        .collect::<Result<_>>()?;

    let mut report = BenchReport::new("ablation", cfg)?;
    for ((v, s), rows) in jobs.iter().zip(results) {
        for (pert, metric, value) in rows {
            report.push(&format!("seed_{s}"), &v.name(), &pert, metric, value, None);
        }
    }
    report.metadata.insert("shapes".into(), p.ids.len().to_string());
    report.metadata.insert("prompt".into(), "next instance of the same shape kind".into());
    report.metadata.insert("occlusion".into(), "re-tokenized, not renormalized".into());
    report.finish()?;
    Ok(report)
}

pub fn run_ablation(variant: AblationVariant, cfg: &AblationConfig) -> Result<BenchReport> {
    run_ablations(&[variant], cfg)
}
