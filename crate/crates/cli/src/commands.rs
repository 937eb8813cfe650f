use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use sas_core::align::{align_pipeline, AlignmentConfig, KindReport, SourceBank};
use sas_core::graph::KnnGraph;
use sas_core::harness::{
    run_ablations, run_bfs_vs_spectral, run_drift_bench, AblationConfig, AblationVariant, BenchReport,
    BfsSpectralConfig, DriftConfig, ShapeKind,
};
use sas_core::metrics::{chamfer_distance, geo_neighbors, npr_bfs_reference, npr_window, topo_neighbors, NprVariant};
use sas_core::pipeline::{analyze, debug_dump, CloudAnalysis, TokenizeConfig};
use sas_core::serialize::{
    serialize_baseline, serialize_cds_bfs, serialize_cds_spectral, serialize_gcs, serialize_hilbert,
    serialize_zorder, Baseline, SerializationOrder, Strategy, DEFAULT_CURVE_BITS,
};
use sas_core::ssm::{gradcheck_block, random_instance, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::{canonical, check_unique_ids, write_snapshot, CloudSource};

/// A check performed by the run failed. Outputs are still written.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "check failed: {}", self.0)
    }
}

impl std::error::Error for CheckFailed {}

/// Options shared by every subcommand.
pub struct Opts {
    pub out: PathBuf,
    pub seed: Option<u64>,
}

impl Opts {
    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        Ok(BufWriter::new(File::create(&p).with_context(|| format!("creating {}", p.display()))?))
    }

    fn write_json<T: Serialize + ?Sized>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.path(name), text)?;
        Ok(())
    }

    fn write_text(&self, name: &str, text: &str) -> Result<()> {
        let mut text = text.to_string();
        if !text.ends_with('\n') {
            text.push('\n');
        }
        fs::write(self.path(name), text)?;
        Ok(())
    }
}

fn write_report(opts: &Opts, report: &BenchReport) -> Result<()> {
    report.write_csv(opts.create("report.csv")?)?;
    opts.write_text("summary.json", &report.summary_json()?)
}

fn label<T: Serialize>(v: &T) -> String {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => s,
        Ok(other) => other.to_string(),
        Err(_) => String::new(),
    }
}

fn order_for(st: Strategy, a: &CloudAnalysis, tok: &TokenizeConfig, bits: u32, random_seed: u64) -> Result<SerializationOrder> {
    let centers = &a.tokens.centers;
    Ok(match st {
        Strategy::CdsBfs => serialize_cds_bfs(&a.cds_graph, centers, tok.knn_k)?,
        Strategy::CdsSpectral => serialize_cds_spectral(&a.cds_graph, centers)?,
        Strategy::Gcs => serialize_gcs(&a.heat)?,
        Strategy::Zorder => serialize_zorder(centers, bits)?,
        Strategy::Hilbert => serialize_hilbert(centers, bits)?,
        Strategy::FpsOrder => serialize_baseline(Baseline::FpsOrder, &a.tokens)?,
        Strategy::Random => serialize_baseline(Baseline::Random { seed: random_seed }, &a.tokens)?,
        Strategy::EuclidCentroidSort => serialize_baseline(Baseline::EuclidCentroidSort, &a.tokens)?,
        Strategy::NaiveCurvatureSort => serialize_baseline(Baseline::NaiveCurvatureSort, &a.tokens)?,
    })
}

// ---------------------------------------------------------------- serialize

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SerializeConfig {
    pub cloud: CloudSource,
    pub tokenize: TokenizeConfig,
    pub strategies: Vec<Strategy>,
    pub curve_bits: u32,
    pub random_seed: u64,
    /// Domain label on the exported source features.
    pub domain: String,
}

impl Default for SerializeConfig {
    fn default() -> Self {
        Self {
            cloud: CloudSource::default(),
            tokenize: TokenizeConfig::default(),
            strategies: Strategy::ALL.to_vec(),
            curve_bits: DEFAULT_CURVE_BITS,
            random_seed: 0,
            domain: "source".into(),
        }
    }
}

#[derive(Serialize)]
struct OrderRecord {
    #[serde(flatten)]
    order: SerializationOrder,
    elapsed_ms: f64,
}

/// Writes `orders.json`, `orders.csv`, `features.json` and, on request,
/// `debug.json` with the graph and eigen data of both token graphs.
pub fn serialize(mut cfg: SerializeConfig, opts: &Opts, dump: bool) -> Result<()> {
    if let Some(s) = opts.seed {
        cfg.cloud.set_seed(s);
    }
    cfg.cloud.canonicalize()?;
    if cfg.strategies.is_empty() {
        bail!("no strategies requested");
    }
    write_snapshot(&opts.out, &cfg)?;

    let cloud = cfg.cloud.load(cfg.tokenize.patch_size)?;
    let analysis = analyze(&cloud, &cfg.tokenize, &cfg.tokenize.encoder()?)?;
    let mut records = Vec::with_capacity(cfg.strategies.len());
    for &st in &cfg.strategies {
        let t = Instant::now();
        let order = order_for(st, &analysis, &cfg.tokenize, cfg.curve_bits, cfg.random_seed)?;
        let elapsed_ms = t.elapsed().as_secs_f64() * 1e3;
        if !order.is_bijection() {
            return Err(CheckFailed(format!("{st} produced a non-bijective order")).into());
        }
        records.push(OrderRecord { order, elapsed_ms });
    }
    opts.write_json("orders.json", &records)?;

    let mut w = csv::Writer::from_writer(opts.create("orders.csv")?);
    w.write_record(["strategy", "rank", "token_index", "x", "y", "z"])?;
    for r in &records {
        for (rank, &tok) in r.order.permutation.iter().enumerate() {
            let c = analysis.tokens.centers[tok];
            w.write_record([
                r.order.strategy.name().to_string(),
                rank.to_string(),
                tok.to_string(),
                c.x.to_string(),
                c.y.to_string(),
                c.z.to_string(),
            ])?;
        }
    }
    w.flush()?;

    let mut bank = SourceBank::default();
    bank.add_analysis(&cfg.domain, &analysis);
    opts.write_json("features.json", &bank)?;
    if dump {
        opts.write_json("debug.json", &debug_dump(&analysis)?)?;
    }

    #[derive(Serialize)]
    struct Summary<'a> {
        shape_id: String,
        points: usize,
        tokens: usize,
        embed_dim: usize,
        strategies: Vec<&'a str>,
    }
    opts.write_json(
        "summary.json",
        &Summary {
            shape_id: cfg.cloud.id(),
            points: cloud.len(),
            tokens: analysis.tokens.len(),
            embed_dim: analysis.tokens.features.ncols(),
            strategies: records.iter().map(|r| r.order.strategy.name()).collect(),
        },
    )?;
    for r in &records {
        println!("{:<22} {:>9.3} ms", r.order.strategy.name(), r.elapsed_ms);
    }
    Ok(())
}

// ---------------------------------------------------------------- npr

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NprConfig {
    pub clouds: Vec<CloudSource>,
    pub tokenize: TokenizeConfig,
    pub strategies: Vec<Strategy>,
    pub variants: Vec<NprVariant>,
    /// Reference neighbors per token for `topo` and `geo`.
    pub k: usize,
    /// Sequence window radius for `topo` and `geo`.
    pub h: usize,
    /// Hop radius for `bfs_reference`.
    pub r: usize,
    pub curve_bits: u32,
    pub random_seed: u64,
}

impl Default for NprConfig {
    fn default() -> Self {
        Self {
            clouds: ShapeKind::ALL.iter().map(|&k| CloudSource::shape(k, 0)).collect(),
            tokenize: TokenizeConfig::default(),
            strategies: Strategy::ALL.to_vec(),
            variants: vec![NprVariant::Topo, NprVariant::Geo, NprVariant::BfsReference],
            k: 8,
            h: 8,
            r: 2,
            curve_bits: DEFAULT_CURVE_BITS,
            random_seed: 0,
        }
    }
}

/// Writes `npr.csv` with one row per (cloud, strategy, variant).
pub fn npr(mut cfg: NprConfig, opts: &Opts) -> Result<()> {
    if let Some(s) = opts.seed {
        cfg.clouds.iter_mut().for_each(|c| c.set_seed(s));
    }
    for c in &mut cfg.clouds {
        c.canonicalize()?;
    }
    if cfg.clouds.is_empty() || cfg.strategies.is_empty() || cfg.variants.is_empty() {
        bail!("clouds, strategies and variants must all be nonempty");
    }
    if cfg.k == 0 || cfg.h == 0 || cfg.r == 0 {
        bail!("k, h and r must be at least 1");
    }
    check_unique_ids(&cfg.clouds)?;
    write_snapshot(&opts.out, &cfg)?;

    let encoder = cfg.tokenize.encoder()?;
    let mut report = BenchReport::new("npr", &cfg)?;
    for src in &cfg.clouds {
        let id = src.id();
        let a = analyze(&src.load(cfg.tokenize.patch_size)?, &cfg.tokenize, &encoder)?;
        let centers = &a.tokens.centers;
        let topo = topo_neighbors(centers, cfg.k)?;
        let geo = geo_neighbors(&a.tokens.features, cfg.k)?;
        let knn = KnnGraph::build(centers, cfg.tokenize.knn_k)?;
        let bfs = serialize_cds_bfs(&a.cds_graph, centers, cfg.tokenize.knn_k)?;
        for &st in &cfg.strategies {
            let order = order_for(st, &a, &cfg.tokenize, cfg.curve_bits, cfg.random_seed)?;
            for &v in &cfg.variants {
                let value = match v {
                    NprVariant::Topo => npr_window(&order, &topo, cfg.h)?,
                    NprVariant::Geo => npr_window(&order, &geo, cfg.h)?,
                    NprVariant::BfsReference => npr_bfs_reference(&order, &bfs, &knn, cfg.r)?,
                };
                report.push(&id, st.name(), "identity", v.name(), value, None);
            }
        }
    }
    report.finish()?;

    let mut w = csv::Writer::from_writer(opts.create("npr.csv")?);
    w.write_record(["shape_id", "strategy", "variant", "value"])?;
    for r in &report.rows {
        w.write_record([&r.shape_id, &r.strategy, &r.metric, &r.value.to_string()])?;
    }
    w.flush()?;
    opts.write_text("summary.json", &report.summary_json()?)?;
    for s in &report.summary {
        println!("{:<22} {:<18} {:.4}", s.strategy, s.metric, s.mean);
    }
    Ok(())
}

// ---------------------------------------------------------------- cd

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CdConfig {
    pub cloud_a: CloudSource,
    pub cloud_b: CloudSource,
}

impl Default for CdConfig {
    fn default() -> Self {
        Self {
            cloud_a: CloudSource::shape(ShapeKind::Sphere, 0),
            cloud_b: CloudSource::shape(ShapeKind::Sphere, 1),
        }
    }
}

/// Writes `cd.csv` with the symmetric Chamfer distance of the two clouds.
pub fn cd(mut cfg: CdConfig, opts: &Opts) -> Result<()> {
    if let Some(s) = opts.seed {
        cfg.cloud_a.set_seed(s);
        cfg.cloud_b.set_seed(s);
    }
    cfg.cloud_a.canonicalize()?;
    cfg.cloud_b.canonicalize()?;
    write_snapshot(&opts.out, &cfg)?;

    let a = cfg.cloud_a.load(0)?;
    let b = cfg.cloud_b.load(0)?;
    let value = chamfer_distance(&a.points, &b.points)?;
    let mut w = csv::Writer::from_writer(opts.create("cd.csv")?);
    w.write_record(["cloud_a", "cloud_b", "points_a", "points_b", "chamfer"])?;
    w.write_record([
        cfg.cloud_a.id(),
        cfg.cloud_b.id(),
        a.len().to_string(),
        b.len().to_string(),
        value.to_string(),
    ])?;
    w.flush()?;
    opts.write_json("summary.json", &serde_json::json!({ "chamfer": value }))?;
    println!("chamfer {value}");
    Ok(())
}

// ---------------------------------------------------------------- benches

pub fn drift_bench(mut cfg: DriftConfig, opts: &Opts) -> Result<()> {
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    write_snapshot(&opts.out, &cfg)?;
    let report = run_drift_bench(&cfg)?;
    write_report(opts, &report)?;
    print_summary(&report);
    Ok(())
}

/// `--seed` shifts the corpus base seed.
pub fn bfs_vs_spectral(mut cfg: BfsSpectralConfig, opts: &Opts) -> Result<()> {
    if let Some(s) = opts.seed {
        cfg.corpus.base_seed = s;
    }
    write_snapshot(&opts.out, &cfg)?;
    let report = run_bfs_vs_spectral(&cfg)?;
    write_report(opts, &report)?;
    report.write_timings_csv(opts.create("timings.csv")?)?;
    print_summary(&report);
    Ok(())
}

fn print_summary(report: &BenchReport) {
    for s in &report.summary {
        match s.total_elapsed_ms {
            Some(ms) => println!("{:<22} {:<18} {:.4} ± {:.4}  ({ms:.1} ms)", s.strategy, s.metric, s.mean, s.std),
            None => println!("{:<22} {:<18} {:.4} ± {:.4}", s.strategy, s.metric, s.mean, s.std),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblateConfig {
    /// Variant names such as `full`, `no_cds` or `fixed_alpha_0.5`.
    pub variants: Vec<String>,
    #[serde(flatten)]
    pub ablation: AblationConfig,
}

impl Default for AblateConfig {
    fn default() -> Self {
        Self {
            variants: AblationVariant::ALL.iter().map(|v| v.name()).collect(),
            ablation: AblationConfig::default(),
        }
    }
}

/// `--seed` replaces the model seed list with that single seed.
pub fn ablate(mut cfg: AblateConfig, opts: &Opts) -> Result<()> {
    if let Some(s) = opts.seed {
        cfg.ablation.seeds = vec![s];
    }
    let variants = cfg
        .variants
        .iter()
        .map(|v| v.parse::<AblationVariant>())
        .collect::<Result<Vec<_>, _>>()?;
    write_snapshot(&opts.out, &cfg)?;
    let report = run_ablations(&variants, &cfg.ablation)?;
    write_report(opts, &report)?;
    print_summary(&report);
    Ok(())
}

// ---------------------------------------------------------------- align

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlignConfig {
    pub target: CloudSource,
    /// Directory of `features.json` dumps written by `serialize`.
    pub sources: PathBuf,
    pub tokenize: TokenizeConfig,
    pub alignment: AlignmentConfig,
}

impl Default for AlignConfig {
    fn default() -> Self {
        Self {
            target: CloudSource::default(),
            sources: PathBuf::from("sources"),
            tokenize: TokenizeConfig::default(),
            alignment: AlignmentConfig::default(),
        }
    }
}

/// Every `*.json` file directly under `dir`, in file-name order, merged.
pub fn load_source_bank(dir: &Path) -> Result<SourceBank> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file() && p.extension().is_some_and(|e| e == "json"));
    files.sort();
    let mut bank = SourceBank::default();
    for f in &files {
        let text = fs::read_to_string(f)?;
        let part: SourceBank = serde_json::from_str(&text).with_context(|| format!("parsing {}", f.display()))?;
        bank.entries.extend(part.entries);
    }
    if bank.is_empty() {
        bail!("no source features found in {}", dir.display());
    }
    Ok(bank)
}

#[derive(Serialize)]
struct Aligned<'a> {
    target: String,
    /// G x d in the target's original token order.
    features: Tensor,
    kinds: &'a [KindReport],
    shift_norm: f64,
}

/// Writes `aligned.json` and `align.csv` with per-graph cosine and shift norms.
pub fn align(mut cfg: AlignConfig, opts: &Opts) -> Result<()> {
    if let Some(s) = opts.seed {
        cfg.target.set_seed(s);
    }
    cfg.target.canonicalize()?;
    cfg.sources = canonical(&cfg.sources)?;
    cfg.alignment.validate()?;
    write_snapshot(&opts.out, &cfg)?;

    let bank = load_source_bank(&cfg.sources)?;
    let cloud = cfg.target.load(cfg.tokenize.patch_size)?;
    let analysis = analyze(&cloud, &cfg.tokenize, &cfg.tokenize.encoder()?)?;
    let out = align_pipeline(&analysis, &bank, &cfg.alignment)?;

    let id = cfg.target.id();
    opts.write_json(
        "aligned.json",
        &Aligned {
            target: id.clone(),
            features: Tensor::from_matrix(&out.features),
            kinds: &out.kinds,
            shift_norm: out.shift_norm,
        },
    )?;
    let mut w = csv::Writer::from_writer(opts.create("align.csv")?);
    w.write_record(["target", "kind", "pre_cosine", "post_cosine", "shift_norm"])?;
    for k in &out.kinds {
        w.write_record([
            id.clone(),
            k.kind.name().to_string(),
            k.pre_cosine.to_string(),
            k.post_cosine.to_string(),
            k.shift_norm.to_string(),
        ])?;
    }
    w.flush()?;
    opts.write_json(
        "summary.json",
        &serde_json::json!({
            "target": id,
            "source_entries": bank.entries.len(),
            "kinds": out.kinds,
            "shift_norm": out.shift_norm,
        }),
    )?;
    for k in &out.kinds {
        println!(
            "{}: cosine {:.4} -> {:.4}, shift norm {:.4}",
            k.kind.name(),
            k.pre_cosine,
            k.post_cosine,
            k.shift_norm
        );
    }
    Ok(())
}

// ---------------------------------------------------------------- gradcheck

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckConfig {
    pub instances: usize,
    /// Instance `i` is drawn from seed `seed + i`.
    pub seed: u64,
    pub tolerance: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self { instances: 50, seed: 0, tolerance: 1e-4 }
    }
}

/// Finite-difference check of random recurrence blocks. Fails when any
/// parameter group exceeds the tolerance.
pub fn gradcheck(mut cfg: GradcheckConfig, opts: &Opts) -> Result<()> {
    if let Some(s) = opts.seed {
        cfg.seed = s;
    }
    if cfg.instances == 0 {
        bail!("at least one instance required");
    }
    write_snapshot(&opts.out, &cfg)?;

    let groups = ["a", "b", "bias", "input"];
    let mut worst = [0.0f64; 4];
    let mut w = csv::Writer::from_writer(opts.create("gradcheck.csv")?);
    w.write_record(["instance", "seed", "len", "dim", "gate", "direction", "group", "max_rel_error"])?;
    for i in 0..cfg.instances {
        let seed = cfg.seed.wrapping_add(i as u64);
        let (block, x, up) = random_instance(seed);
        let r = gradcheck_block(&block, &x, &up)?;
        let vals = [r.max_rel_a, r.max_rel_b, r.max_rel_bias, r.max_rel_input];
        for (g, v) in groups.iter().zip(vals) {
            w.write_record([
                i.to_string(),
                seed.to_string(),
                r.len.to_string(),
                r.dim.to_string(),
                label(&r.gate),
                label(&r.direction),
                g.to_string(),
                v.to_string(),
            ])?;
        }
        for (m, v) in worst.iter_mut().zip(vals) {
            *m = m.max(v);
        }
    }
    w.flush()?;

    let summary: serde_json::Map<String, serde_json::Value> =
        groups.iter().zip(worst).map(|(g, v)| (g.to_string(), v.into())).collect();
    opts.write_json(
        "summary.json",
        &serde_json::json!({ "instances": cfg.instances, "tolerance": cfg.tolerance, "max_rel_error": summary }),
    )?;
    for (g, v) in groups.iter().zip(worst) {
        println!("{g:<6} {v:.3e}");
    }
    let overall = worst.iter().copied().fold(0.0, f64::max);
    if overall.is_nan() || overall > cfg.tolerance {
        return Err(CheckFailed(format!("max relative error {overall:e} exceeds {:e}", cfg.tolerance)).into());
    }
    Ok(())
}
