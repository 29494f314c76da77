//! Command-line pipeline: corpus synthesis, shredding, sample
//! extraction, training, embedding export, reconstruction, neighbor
//! queries, rendering and benchmarking.
//!
//! Every tunable can come from (highest priority first) a command-line
//! flag, a JSON config file (`--config`), the defaults below; the seed
//! additionally falls back to the `SHREDREC_SEED` environment variable.
//! Outputs are written with a `.partial` suffix and renamed once
//! complete.

use crate::compat::{build_cost_matrix, CompatConfig, CostMatrix, DistanceForm, ShredEmbeddings};
use crate::docproc::{
    boundary_crop, load_image, load_shreds, permute_instance, save_png, save_shreds, shred_page,
    BinaryImage, BoundarySide, GrayImage, ReconstructionInstance, Shred,
};
use crate::metrics::{accuracy, log_log_slope, RunReport, Stage, StageTimer};
use crate::projector::{ProjectorPair, Side};
use crate::rng::{derive_seed, fnv1a64};
use crate::sampling::{
    extract_pairs, load_dataset, save_dataset, split_train_val, ExtractConfig, SampleDataset,
};
use crate::solver::solve_auto;
use crate::synth::{generate_corpus, load_corpus_manifest, SynthConfig};
use crate::trainer::{best_record, train, TrainConfig};
use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

// sub-seed stream tags, so stages never share a draw sequence
const STREAM_SPLIT: u64 = 0xA1;
const STREAM_SOLVER: u64 = 0xA2;
const STREAM_BENCH: u64 = 0xA3;
const STREAM_EVAL: u64 = 0xA4;

/// Defaults for every tunable; a `--config` JSON file may override any
/// subset, and explicit flags win over both.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Tunables {
    pub s_y: usize,
    pub s_x: usize,
    pub strips: usize,
    pub stride: usize,
    pub max_pos: usize,
    pub blank_ratio: f64,
    pub noise_p: f64,
    pub noise_cols: usize,
    pub d: usize,
    pub delta_max: usize,
    pub margin: f32,
    pub lr: f32,
    pub batch: usize,
    pub epochs: usize,
    pub val_docs: usize,
    pub exact_limit: usize,
    pub restarts: usize,
    pub distance: String,
    pub label_convention: String,
    pub sauvola_window: usize,
    pub sauvola_k: f64,
    pub sauvola_r: f64,
    pub seed: u64,
}

impl Default for Tunables {
    fn default() -> Self {
        Tunables {
            s_y: 32,
            s_x: 32,
            strips: 30,
            stride: 2,
            max_pos: 1000,
            blank_ratio: 0.8,
            noise_p: 0.2,
            noise_cols: 2,
            d: 128,
            delta_max: 3,
            margin: 1.0,
            lr: 0.1,
            batch: 256,
            epochs: 100,
            val_docs: 10,
            exact_limit: crate::solver::DEFAULT_EXACT_LIMIT,
            restarts: 16,
            distance: "squared".into(),
            label_convention: "intent".into(),
            sauvola_window: crate::docproc::SAUVOLA_WINDOW,
            sauvola_k: crate::docproc::SAUVOLA_K,
            sauvola_r: crate::docproc::SAUVOLA_R,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TunablesPatch {
    s_y: Option<usize>,
    s_x: Option<usize>,
    strips: Option<usize>,
    stride: Option<usize>,
    max_pos: Option<usize>,
    blank_ratio: Option<f64>,
    noise_p: Option<f64>,
    noise_cols: Option<usize>,
    d: Option<usize>,
    delta_max: Option<usize>,
    margin: Option<f32>,
    lr: Option<f32>,
    batch: Option<usize>,
    epochs: Option<usize>,
    val_docs: Option<usize>,
    exact_limit: Option<usize>,
    restarts: Option<usize>,
    distance: Option<String>,
    label_convention: Option<String>,
    sauvola_window: Option<usize>,
    sauvola_k: Option<f64>,
    sauvola_r: Option<f64>,
    seed: Option<u64>,
}

/// Flags shared by the pipeline commands; `None` means "not overridden".
#[derive(Debug, Clone, Default, Args)]
struct TuneFlags {
    /// JSON config file overriding the defaults
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (falls back to $SHREDREC_SEED, then 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Sample height in pixels
    #[arg(long)]
    s_y: Option<usize>,
    /// Sample width in pixels
    #[arg(long)]
    s_x: Option<usize>,
    /// Virtual strips per page
    #[arg(long)]
    strips: Option<usize>,
    /// Vertical scan stride for sample extraction
    #[arg(long)]
    stride: Option<usize>,
    /// Positive-pair cap per document
    #[arg(long)]
    max_pos: Option<usize>,
    /// Blank-fraction filter threshold over a sample pair
    #[arg(long)]
    blank_ratio: Option<f64>,
    /// Per-pixel probability of simulated shredding noise
    #[arg(long)]
    noise_p: Option<f64>,
    /// Seam-facing columns affected by shredding noise
    #[arg(long)]
    noise_cols: Option<usize>,
    /// Embedding dimension
    #[arg(long)]
    d: Option<usize>,
    /// Vertical shift search range in embedding rows
    #[arg(long)]
    delta_max: Option<usize>,
    /// Contrastive-loss margin
    #[arg(long)]
    margin: Option<f32>,
    /// SGD learning rate
    #[arg(long)]
    lr: Option<f32>,
    /// Mini-batch size
    #[arg(long)]
    batch: Option<usize>,
    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Documents reserved for validation
    #[arg(long)]
    val_docs: Option<usize>,
    /// Largest instance solved exactly
    #[arg(long)]
    exact_limit: Option<usize>,
    /// Heuristic solver restarts
    #[arg(long)]
    restarts: Option<usize>,
    /// Distance form: squared | plain
    #[arg(long)]
    distance: Option<String>,
    /// Loss label convention: intent | literal
    #[arg(long)]
    loss_label_convention: Option<String>,
    /// Sauvola window (odd)
    #[arg(long)]
    sauvola_window: Option<usize>,
    /// Sauvola k
    #[arg(long)]
    sauvola_k: Option<f64>,
    /// Sauvola dynamic range r
    #[arg(long)]
    sauvola_r: Option<f64>,
}

impl TuneFlags {
    fn resolve(&self) -> Result<Tunables> {
        let mut t = Tunables::default();
        if let Ok(env_seed) = std::env::var("SHREDREC_SEED") {
            t.seed = env_seed
                .parse()
                .with_context(|| format!("SHREDREC_SEED must be an integer, got '{env_seed}'"))?;
        }
        if let Some(path) = &self.config {
            let data = std::fs::read(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            let patch: TunablesPatch = serde_json::from_slice(&data)
                .with_context(|| format!("parsing config {}", path.display()))?;
            macro_rules! apply {
                ($($f:ident),*) => { $( if let Some(v) = patch.$f { t.$f = v; } )* };
            }
            apply!(
                s_y, s_x, strips, stride, max_pos, blank_ratio, noise_p, noise_cols, d, delta_max,
                margin, lr, batch, epochs, val_docs, exact_limit, restarts, distance,
                label_convention, sauvola_window, sauvola_k, sauvola_r, seed
            );
        }
        macro_rules! flag {
            ($($f:ident),*) => { $( if let Some(v) = &self.$f { t.$f = v.clone(); } )* };
        }
        flag!(
            s_y, s_x, strips, stride, max_pos, blank_ratio, noise_p, noise_cols, d, delta_max,
            margin, lr, batch, epochs, val_docs, exact_limit, restarts, distance, sauvola_window,
            sauvola_k, sauvola_r, seed
        );
        if let Some(v) = &self.loss_label_convention {
            t.label_convention = v.clone();
        }
        if DistanceForm::parse(&t.distance).is_none() {
            bail!("unknown distance form '{}'", t.distance);
        }
        if crate::tensornet::LabelConvention::parse(&t.label_convention).is_none() {
            bail!("unknown label convention '{}'", t.label_convention);
        }
        Ok(t)
    }
}

impl Tunables {
    fn extract_config(&self) -> ExtractConfig {
        ExtractConfig {
            s_y: self.s_y,
            s_x: self.s_x,
            stride: self.stride,
            max_pos: self.max_pos,
            blank_ratio: self.blank_ratio,
            noise_cols: self.noise_cols,
            noise_p: self.noise_p,
        }
    }

    fn compat_config(&self) -> CompatConfig {
        CompatConfig {
            delta_max: self.delta_max,
            distance: DistanceForm::parse(&self.distance).expect("validated"),
        }
    }

    fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            lr: self.lr,
            batch: self.batch,
            margin: self.margin,
            seed: self.seed,
            d: self.d,
            s_y: self.s_y,
            s_x: self.s_x,
            label_convention: self.label_convention.clone(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "shredrec",
    version,
    about = "Strip-shredded document reconstruction via asymmetric boundary embeddings"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Cap the rayon worker pool (results do not depend on this)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic corpus of binary text pages
    Synth(SynthArgs),
    /// Cut pages into virtual shreds and persist them with a manifest
    Shred(ShredArgs),
    /// Extract a labeled sample-pair dataset from pages
    Extract(ExtractArgs),
    /// Train the projection model pair on a dataset
    Train(TrainArgs),
    /// Export boundary embeddings of a shred set to CSV
    Embed(EmbedArgs),
    /// Reconstruct shredded pages and write a run report
    Reconstruct(ReconstructArgs),
    /// Rank complementary-side samples nearest to a query sample
    QueryNn(QueryNnArgs),
    /// Render a solved instance side by side into a PNG
    Render(RenderArgs),
    /// Stage-timing benchmark across instance sizes, or a parameter sweep
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Number of pages
    #[arg(long)]
    count: usize,
    /// Output directory (PNG pages + pages.json)
    #[arg(long)]
    out_dir: PathBuf,
    /// Page width in pixels
    #[arg(long, default_value_t = 2480)]
    width: usize,
    /// Page height in pixels
    #[arg(long, default_value_t = 3508)]
    height: usize,
    /// Page margin in pixels
    #[arg(long, default_value_t = 64)]
    margin: usize,
    #[command(flatten)]
    tune: TuneFlags,
}

#[derive(Args)]
struct ShredArgs {
    /// Input pages (PNG or PGM)
    #[arg(required = true)]
    pages: Vec<PathBuf>,
    /// Output shred directory
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    tune: TuneFlags,
}

#[derive(Args)]
struct ExtractArgs {
    /// Input pages (PNG or PGM)
    #[arg(required = true)]
    pages: Vec<PathBuf>,
    /// Output dataset file (.shrd)
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    tune: TuneFlags,
}

#[derive(Args)]
struct TrainArgs {
    /// Input dataset (.shrd)
    #[arg(long)]
    dataset: PathBuf,
    /// Run directory (checkpoints, log.csv, best.shrw)
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    tune: TuneFlags,
}

#[derive(Args)]
struct EmbedArgs {
    /// Trained weights (.shrw)
    #[arg(long)]
    model: PathBuf,
    /// Shred directory (from `shred`)
    #[arg(long)]
    shreds_dir: PathBuf,
    /// Output CSV
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    tune: TuneFlags,
}

#[derive(Args)]
struct ReconstructArgs {
    /// Pages to shred and reconstruct (each page separately unless --mix)
    pages: Vec<PathBuf>,
    /// Reconstruct an existing shred directory instead of pages
    #[arg(long, conflicts_with = "pages")]
    shreds_dir: Option<PathBuf>,
    /// Mix all pages into one multi-page instance
    #[arg(long)]
    mix: bool,
    /// Trained weights (.shrw)
    #[arg(long)]
    model: PathBuf,
    /// Seed for the presentation-order shuffle
    #[arg(long, default_value_t = 0)]
    permute_seed: u64,
    /// Report path (single instance) or directory (per-page reports)
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also render the solved instance to this PNG
    #[arg(long)]
    render: Option<PathBuf>,
    /// Export the cost matrix CSV
    #[arg(long)]
    export_costs: Option<PathBuf>,
    /// Omit wall-clock fields so reports are byte-reproducible
    #[arg(long)]
    no_timings: bool,
    /// Mark page seams with a gray column in renders
    #[arg(long)]
    seam_markers: bool,
    #[command(flatten)]
    tune: TuneFlags,
}

#[derive(Args)]
struct QueryNnArgs {
    /// Trained weights (.shrw)
    #[arg(long)]
    model: PathBuf,
    /// Query sample (s x s PNG)
    #[arg(long)]
    query: PathBuf,
    /// Candidates: directory of s x s PNGs, or a .shrd dataset
    #[arg(long)]
    candidates: PathBuf,
    /// How many neighbors to return
    #[arg(long, default_value_t = 3)]
    k: usize,
    /// Which boundary the query comes from: r (right) or l (left)
    #[arg(long, default_value = "r")]
    query_side: String,
    /// Optional JSON output
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    tune: TuneFlags,
}

#[derive(Args)]
struct RenderArgs {
    /// Run report JSON from `reconstruct`
    #[arg(long)]
    report: PathBuf,
    /// Shred directory the report refers to
    #[arg(long)]
    shreds_dir: PathBuf,
    /// Output PNG
    #[arg(long)]
    out: PathBuf,
    /// Mark page seams with a gray column
    #[arg(long)]
    seam_markers: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Trained weights; omit to benchmark a randomly initialized pair
    #[arg(long)]
    model: Option<PathBuf>,
    /// Instance sizes, e.g. 60,120,240,480
    #[arg(long, value_delimiter = ',', default_value = "60,120,240,480")]
    sizes: Vec<usize>,
    /// Output CSV
    #[arg(long)]
    out: PathBuf,
    /// Page corpus directory (pages.json); synthesized when omitted
    #[arg(long)]
    corpus: Option<PathBuf>,
    /// Sweep instead: train and evaluate per value, e.g. d=2,4,8 or sy=32,48
    #[arg(long)]
    sweep: Option<String>,
    /// Training pages for sweep mode
    #[arg(long)]
    pages: Vec<PathBuf>,
    /// Evaluation pages for sweep mode
    #[arg(long)]
    eval_pages: Vec<PathBuf>,
    #[command(flatten)]
    tune: TuneFlags,
}

pub fn run() -> Result<()> {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .ok();
    }
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Shred(a) => cmd_shred(a),
        Command::Extract(a) => cmd_extract(a),
        Command::Train(a) => cmd_train(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Reconstruct(a) => cmd_reconstruct(a),
        Command::QueryNn(a) => cmd_query_nn(a),
        Command::Render(a) => cmd_render(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn page_id_of(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "page".into())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let t = a.tune.resolve()?;
    let cfg = SynthConfig { width: a.width, height: a.height, margin: a.margin };
    let paths = generate_corpus(&cfg, a.count, t.seed, &a.out_dir)?;
    println!("wrote {} pages to {}", paths.len(), a.out_dir.display());
    Ok(())
}

fn load_page_shreds(path: &Path, t: &Tunables) -> Result<Vec<Shred>> {
    let page = load_image(path)?;
    Ok(shred_page(&page, t.strips, &page_id_of(path), t.sauvola_window, t.sauvola_k, t.sauvola_r)?)
}

fn cmd_shred(a: ShredArgs) -> Result<()> {
    let t = a.tune.resolve()?;
    let mut shreds = Vec::new();
    for page in &a.pages {
        shreds.extend(load_page_shreds(page, &t)?);
    }
    save_shreds(&shreds, &a.out_dir)?;
    println!("wrote {} shreds from {} pages to {}", shreds.len(), a.pages.len(), a.out_dir.display());
    Ok(())
}

fn cmd_extract(a: ExtractArgs) -> Result<()> {
    let t = a.tune.resolve()?;
    let ecfg = t.extract_config();
    let mut dataset = SampleDataset::new(t.s_y, t.s_x);
    for page in &a.pages {
        let shreds = load_page_shreds(page, &t)?;
        // per-page stream keyed by the page id, so page order is irrelevant
        let page_seed = derive_seed(t.seed, fnv1a64(page_id_of(page).as_bytes()));
        dataset.pairs.extend(extract_pairs(&shreds, &ecfg, page_seed)?);
    }
    save_dataset(&dataset, &a.out)?;
    let stats = dataset.stats();
    let (pos, neg): (usize, usize) =
        stats.values().fold((0, 0), |(p, n), (dp, dn)| (p + dp, n + dn));
    println!(
        "wrote {} pairs ({pos} positive, {neg} negative) from {} documents to {}",
        dataset.len(),
        stats.len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let t = a.tune.resolve()?;
    let dataset = load_dataset(&a.dataset)?;
    if dataset.s_y != t.s_y || dataset.s_x != t.s_x {
        bail!(
            "dataset is {}x{} but the configuration says {}x{}",
            dataset.s_y,
            dataset.s_x,
            t.s_y,
            t.s_x
        );
    }
    let (train_set, val_set) = split_train_val(&dataset, t.val_docs, derive_seed(t.seed, STREAM_SPLIT))?;
    let cfg = t.train_config();
    let t0 = Instant::now();
    let (best, records) = train(&train_set, &val_set, &cfg, &a.out_dir)?;
    let best_rec = best_record(&records).expect("records");
    best.save_weights(&a.out_dir.join("best.shrw"))?;
    #[derive(Serialize)]
    struct TrainReport<'a> {
        config: &'a Tunables,
        best_epoch: usize,
        best_smd: f64,
        epochs: &'a [crate::trainer::EpochRecord],
        train_pairs: usize,
        val_pairs: usize,
    }
    let report = TrainReport {
        config: &t,
        best_epoch: best_rec.epoch,
        best_smd: best_rec.smd,
        epochs: &records,
        train_pairs: train_set.len(),
        val_pairs: val_set.len(),
    };
    write_atomic(&a.out_dir.join("train_report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    println!(
        "trained {} epochs in {:.1}s; best epoch {} (SMD {:.4}) -> {}",
        t.epochs,
        t0.elapsed().as_secs_f64(),
        best_rec.epoch,
        best_rec.smd,
        a.out_dir.join("best.shrw").display()
    );
    Ok(())
}

/// Embeds both boundaries of every shred at the instance's common
/// height; parallel over shreds, order preserved.
fn embed_instance(
    pair: &ProjectorPair,
    inst: &ReconstructionInstance,
) -> Result<Vec<ShredEmbeddings>> {
    let h = inst.common_boundary_height();
    if h < pair.s_y {
        bail!("shreds are too short ({h}px) for {}px samples", pair.s_y);
    }
    inst.shreds
        .par_iter()
        .map(|s| {
            let right = boundary_crop(s, BoundarySide::Right, pair.s_x, h)?;
            let left = boundary_crop(s, BoundarySide::Left, pair.s_x, h)?;
            Ok(ShredEmbeddings {
                right: pair.embed_boundary(Side::Right, &right, &s.key())?,
                left: pair.embed_boundary(Side::Left, &left, &s.key())?,
            })
        })
        .collect()
}

fn cmd_embed(a: EmbedArgs) -> Result<()> {
    let t = a.tune.resolve()?;
    let _ = &t;
    let pair = ProjectorPair::load_weights(&a.model)?;
    let shreds = load_shreds(&a.shreds_dir)?;
    let inst = ReconstructionInstance::new(shreds);
    let embeddings = embed_instance(&pair, &inst)?;
    let mut out = String::new();
    let header: Vec<String> = (0..pair.d).map(|i| format!("e{i}")).collect();
    out.push_str(&format!("shred,side,row,{}\n", header.join(",")));
    for (shred, emb) in inst.shreds.iter().zip(&embeddings) {
        for (side, tensor) in [("r", &emb.right), ("l", &emb.left)] {
            for row in 0..tensor.rows {
                let vals: Vec<String> =
                    tensor.row(row).iter().map(|v| format!("{v:.7}")).collect();
                out.push_str(&format!("{},{side},{row},{}\n", shred.key(), vals.join(",")));
            }
        }
    }
    write_atomic(&a.out, out.as_bytes())?;
    println!(
        "wrote embeddings for {} shreds ({} rows per boundary) to {}",
        inst.len(),
        embeddings[0].right.rows,
        a.out.display()
    );
    Ok(())
}

struct ReconstructionOutcome {
    report: RunReport,
    matrix: CostMatrix,
    instance: ReconstructionInstance,
}

fn reconstruct_instance(
    pair: &ProjectorPair,
    instance: ReconstructionInstance,
    t: &Tunables,
    with_timings: bool,
) -> Result<ReconstructionOutcome> {
    let t0 = Instant::now();
    let mut timer = StageTimer::new();
    pair.reset_inference_count();
    let embeddings = timer.scope(Stage::Projection, || embed_instance(pair, &instance))??;
    let inferences = pair.count_inferences().total();
    let matrix = timer.scope(Stage::Pairwise, || build_cost_matrix(&embeddings, &t.compat_config()))??;
    debug_assert_eq!(pair.count_inferences().total(), inferences, "pairwise stage must not infer");
    let solution = timer.scope(Stage::Optimization, || {
        solve_auto(&matrix, t.exact_limit, derive_seed(t.seed, STREAM_SOLVER), t.restarts)
    })??;
    let report = RunReport {
        n: instance.len(),
        multi_page: instance.multi_page,
        accuracy_strict: accuracy(&solution, &instance, false)?,
        accuracy_relaxed: accuracy(&solution, &instance, true)?,
        timings: with_timings.then(|| timer.timings()),
        inference_count: inferences,
        presented: instance.shreds.iter().map(|s| s.key()).collect(),
        solution,
        wall_time_s: with_timings.then(|| t0.elapsed().as_secs_f64()),
        config: serde_json::to_value(t)?,
    };
    Ok(ReconstructionOutcome { report, matrix, instance })
}

/// Places shreds side by side in solution order; heights pad to the
/// tallest with white. Page transitions get a 4-px gray marker column
/// when requested.
fn render_solution(
    instance: &ReconstructionInstance,
    order: &[usize],
    seam_markers: bool,
) -> GrayImage {
    let max_h = instance.shreds.iter().map(|s| s.image.height).max().unwrap_or(1);
    let marker_w = 4usize;
    let mut width = 0usize;
    for (k, &idx) in order.iter().enumerate() {
        width += instance.shreds[idx].image.width;
        if seam_markers && k + 1 < order.len() {
            let a = &instance.shreds[idx];
            let b = &instance.shreds[order[k + 1]];
            if a.page_id != b.page_id {
                width += marker_w;
            }
        }
    }
    let mut img = GrayImage::new(width.max(1), max_h, 255);
    let mut x0 = 0usize;
    for (k, &idx) in order.iter().enumerate() {
        let shred = &instance.shreds[idx];
        for y in 0..shred.image.height {
            for x in 0..shred.image.width {
                if shred.image.at(x, y) {
                    img.set(x0 + x, y, 0);
                }
            }
        }
        x0 += shred.image.width;
        if seam_markers && k + 1 < order.len() {
            let b = &instance.shreds[order[k + 1]];
            if shred.page_id != b.page_id {
                for y in 0..max_h {
                    for dx in 0..marker_w {
                        img.set(x0 + dx, y, 128);
                    }
                }
                x0 += marker_w;
            }
        }
    }
    img
}

fn cmd_reconstruct(a: ReconstructArgs) -> Result<()> {
    let t = a.tune.resolve()?;
    let pair = ProjectorPair::load_weights(&a.model)?;
    if pair.d != t.d && a.tune.d.is_some() {
        bail!("model has d={} but --d {} was requested", pair.d, t.d);
    }

    // assemble instances: one per page, or a single (possibly mixed) one
    let mut instances: Vec<(String, ReconstructionInstance)> = Vec::new();
    if let Some(dir) = &a.shreds_dir {
        let shreds = load_shreds(dir)?;
        instances.push(("instance".into(), ReconstructionInstance::new(shreds)));
    } else {
        if a.pages.is_empty() {
            bail!("give pages to reconstruct or --shreds-dir");
        }
        if a.mix {
            let mut shreds = Vec::new();
            for page in &a.pages {
                shreds.extend(load_page_shreds(page, &t)?);
            }
            instances.push(("mixed".into(), ReconstructionInstance::new(shreds)));
        } else {
            for page in &a.pages {
                instances.push((
                    page_id_of(page),
                    ReconstructionInstance::new(load_page_shreds(page, &t)?),
                ));
            }
        }
    }

    let multi_report = instances.len() > 1;
    if multi_report {
        if let Some(out) = &a.out {
            std::fs::create_dir_all(out)?;
        }
    }
    let mut strict_accs = Vec::new();
    for (name, instance) in instances {
        let presented = permute_instance(&instance, a.permute_seed);
        let outcome = reconstruct_instance(&pair, presented, &t, !a.no_timings)?;
        let report = &outcome.report;
        println!(
            "{name}: n={} strict={:.4} relaxed={:.4} objective={:.3} inferences={}",
            report.n,
            report.accuracy_strict,
            report.accuracy_relaxed,
            report.solution.objective,
            report.inference_count
        );
        strict_accs.push(report.accuracy_strict);
        if let Some(out) = &a.out {
            let path = if multi_report { out.join(format!("{name}.json")) } else { out.clone() };
            write_atomic(&path, report.to_json().as_bytes())?;
        }
        if let Some(costs) = &a.export_costs {
            let path = if multi_report {
                costs.with_file_name(format!("{name}_{}", costs.file_name().unwrap_or_default().to_string_lossy()))
            } else {
                costs.clone()
            };
            outcome.matrix.save_csv(&path)?;
        }
        if let Some(render) = &a.render {
            let path = if multi_report {
                render.with_file_name(format!("{name}_{}", render.file_name().unwrap_or_default().to_string_lossy()))
            } else {
                render.clone()
            };
            let img = render_solution(&outcome.instance, &outcome.report.solution.order, a.seam_markers);
            save_png(&img, &path)?;
        }
    }
    if strict_accs.len() > 1 {
        println!(
            "mean strict accuracy over {} instances: {:.4}",
            strict_accs.len(),
            strict_accs.iter().sum::<f64>() / strict_accs.len() as f64
        );
    }
    Ok(())
}

fn load_patch(path: &Path, s_y: usize, s_x: usize) -> Result<BinaryImage> {
    let gray = load_image(path)?;
    if gray.height != s_y || gray.width != s_x {
        bail!(
            "{} is {}x{}, expected {}x{}",
            path.display(),
            gray.height,
            gray.width,
            s_y,
            s_x
        );
    }
    Ok(BinaryImage {
        width: gray.width,
        height: gray.height,
        bits: gray.pixels.iter().map(|&p| p < 128).collect(),
    })
}

fn cmd_query_nn(a: QueryNnArgs) -> Result<()> {
    let t = a.tune.resolve()?;
    let _ = &t;
    let pair = ProjectorPair::load_weights(&a.model)?;
    let query_side = match a.query_side.as_str() {
        "r" => Side::Right,
        "l" => Side::Left,
        other => bail!("query side must be r or l, got '{other}'"),
    };
    let candidate_side = match query_side {
        Side::Right => Side::Left,
        Side::Left => Side::Right,
    };
    let query = load_patch(&a.query, pair.s_y, pair.s_x)?;
    let query_emb = pair.embed_sample(query_side, &query)?;

    // candidates: every complementary-side sample of a dataset, or a
    // directory of patch PNGs
    let mut candidates: Vec<(String, BinaryImage)> = Vec::new();
    if a.candidates.is_file() {
        let ds = load_dataset(&a.candidates)?;
        if ds.s_y != pair.s_y || ds.s_x != pair.s_x {
            bail!("dataset samples are {}x{}, model wants {}x{}", ds.s_y, ds.s_x, pair.s_y, pair.s_x);
        }
        for (i, p) in ds.pairs.iter().enumerate() {
            let img = match candidate_side {
                Side::Left => &p.x_l,
                Side::Right => &p.x_r,
            };
            candidates.push((format!("{}[{}]", p.source_doc, i), img.clone()));
        }
    } else {
        let mut files: Vec<PathBuf> = std::fs::read_dir(&a.candidates)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "png" || e == "pgm"))
            .collect();
        files.sort();
        for f in files {
            candidates.push((page_id_of(&f), load_patch(&f, pair.s_y, pair.s_x)?));
        }
    }
    if candidates.is_empty() {
        bail!("no candidate samples found in {}", a.candidates.display());
    }

    let mut ranked: Vec<(f64, String)> = candidates
        .par_iter()
        .map(|(name, img)| {
            let emb = pair.embed_sample(candidate_side, img)?;
            Ok((crate::projector::embedding_distance(&query_emb, &emb), name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then_with(|| a.1.cmp(&b.1)));
    ranked.truncate(a.k);

    #[derive(Serialize)]
    struct Ranked<'a> {
        rank: usize,
        distance: f64,
        candidate: &'a str,
    }
    let rows: Vec<Ranked> = ranked
        .iter()
        .enumerate()
        .map(|(i, (d, name))| Ranked { rank: i + 1, distance: *d, candidate: name })
        .collect();
    for r in &rows {
        println!("{:>3}. {}  dist={:.6}", r.rank, r.candidate, r.distance);
    }
    if let Some(out) = &a.out {
        write_atomic(out, serde_json::to_string_pretty(&rows)?.as_bytes())?;
    }
    Ok(())
}

fn cmd_render(a: RenderArgs) -> Result<()> {
    let data = std::fs::read(&a.report)?;
    let report: RunReport = serde_json::from_slice(&data)
        .with_context(|| format!("parsing report {}", a.report.display()))?;
    let shreds = load_shreds(&a.shreds_dir)?;
    let by_key: std::collections::HashMap<String, Shred> =
        shreds.into_iter().map(|s| (s.key(), s)).collect();
    let mut presented = Vec::with_capacity(report.presented.len());
    for key in &report.presented {
        presented.push(
            by_key
                .get(key)
                .with_context(|| format!("shred {key} from the report is not in the directory"))?
                .clone(),
        );
    }
    let instance = ReconstructionInstance::new(presented);
    let img = render_solution(&instance, &report.solution.order, a.seam_markers);
    save_png(&img, &a.out)?;
    println!("rendered {}x{} to {}", img.width, img.height, a.out.display());
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> Result<()> {
    let t = a.tune.resolve()?;
    if let Some(sweep) = &a.sweep {
        return cmd_bench_sweep(&a, &t, sweep);
    }
    let pair = match &a.model {
        Some(path) => ProjectorPair::load_weights(path)?,
        None => crate::projector::build_projector(t.d, t.s_y, t.s_x, t.seed)?,
    };
    let max_n = a.sizes.iter().copied().max().unwrap_or(0);
    if max_n < 2 {
        bail!("give at least one size >= 2");
    }

    // page pool: an existing corpus or a synthesized one
    let corpus_dir = match &a.corpus {
        Some(dir) => dir.clone(),
        None => {
            let dir = a.out.parent().unwrap_or(Path::new(".")).join("bench_corpus");
            let pages_needed = max_n.div_ceil(t.strips);
            generate_corpus(&SynthConfig::default(), pages_needed, derive_seed(t.seed, STREAM_BENCH), &dir)?;
            dir
        }
    };
    let manifest = load_corpus_manifest(&corpus_dir)?;

    let mut rows = Vec::new();
    let mut pro_times = Vec::new();
    let mut pw_times = Vec::new();
    for &n in &a.sizes {
        let pages_needed = n.div_ceil(t.strips);
        if pages_needed > manifest.pages.len() {
            bail!("corpus has {} pages, need {pages_needed} for n={n}", manifest.pages.len());
        }
        let mut shreds = Vec::with_capacity(n);
        for page in manifest.pages.iter().take(pages_needed) {
            shreds.extend(load_page_shreds(&corpus_dir.join(&page.file), &t)?);
        }
        shreds.truncate(n);
        let instance = permute_instance(
            &ReconstructionInstance::new(shreds),
            derive_seed(t.seed, n as u64),
        );
        let outcome = reconstruct_instance(&pair, instance, &t, true)?;
        let timings = outcome.report.timings.expect("requested timings");
        println!(
            "n={n}: pro={:.3}s pw={:.3}s opt={:.3}s inferences={} relaxed={:.4}",
            timings.pro_s,
            timings.pw_s,
            timings.opt_s,
            outcome.report.inference_count,
            outcome.report.accuracy_relaxed
        );
        pro_times.push(timings.pro_s);
        pw_times.push(timings.pw_s);
        rows.push(format!(
            "{n},{:.6},{:.6},{:.6},{},{:.6}",
            timings.pro_s,
            timings.pw_s,
            timings.opt_s,
            outcome.report.inference_count,
            outcome.report.accuracy_relaxed
        ));
    }
    let mut csv = String::from("n,pro_s,pw_s,opt_s,inferences,accuracy\n");
    for r in &rows {
        csv.push_str(r);
        csv.push('\n');
    }
    write_atomic(&a.out, csv.as_bytes())?;
    if a.sizes.len() >= 2 {
        println!(
            "log-log exponents: projection {:.2}, pairwise {:.2}",
            log_log_slope(&a.sizes, &pro_times),
            log_log_slope(&a.sizes, &pw_times)
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

/// Sensitivity sweep: retrain per parameter value and reconstruct the
/// evaluation pages. `d=...` reuses one extracted dataset; `sy=...`
/// re-extracts samples at each height.
fn cmd_bench_sweep(a: &BenchArgs, t: &Tunables, sweep: &str) -> Result<()> {
    let (param, values_str) = sweep
        .split_once('=')
        .with_context(|| format!("sweep must look like d=2,4,8 — got '{sweep}'"))?;
    if !matches!(param, "d" | "sy") {
        bail!("sweep parameter must be d or sy, got '{param}'");
    }
    let values: Vec<usize> = values_str
        .split(',')
        .map(|v| v.trim().parse().with_context(|| format!("bad sweep value '{v}'")))
        .collect::<Result<Vec<_>>>()?;
    if a.pages.is_empty() || a.eval_pages.is_empty() {
        bail!("sweep mode needs --pages (training) and --eval-pages");
    }

    let mut csv = String::from("param,value,n,pro_s,pw_s,opt_s,inferences,accuracy\n");
    for &value in &values {
        let mut tv = t.clone();
        match param {
            "d" => tv.d = value,
            _ => tv.s_y = value,
        }
        let ecfg = tv.extract_config();
        let mut dataset = SampleDataset::new(tv.s_y, tv.s_x);
        for page in &a.pages {
            let shreds = load_page_shreds(page, &tv)?;
            let page_seed = derive_seed(tv.seed, fnv1a64(page_id_of(page).as_bytes()));
            dataset.pairs.extend(extract_pairs(&shreds, &ecfg, page_seed)?);
        }
        let (train_set, val_set) = split_train_val(&dataset, tv.val_docs, derive_seed(tv.seed, STREAM_SPLIT))?;
        let run_dir = a.out.parent().unwrap_or(Path::new(".")).join(format!("sweep_{param}{value}"));
        let (best, _) = train(&train_set, &val_set, &tv.train_config(), &run_dir)?;
        let mut accs = Vec::new();
        let mut last = None;
        for page in &a.eval_pages {
            let instance = permute_instance(
                &ReconstructionInstance::new(load_page_shreds(page, &tv)?),
                derive_seed(tv.seed, STREAM_EVAL),
            );
            let outcome = reconstruct_instance(&best, instance, &tv, true)?;
            accs.push(outcome.report.accuracy_strict);
            last = Some(outcome);
        }
        let outcome = last.expect("eval pages");
        let timings = outcome.report.timings.expect("requested timings");
        let mean_acc = accs.iter().sum::<f64>() / accs.len() as f64;
        println!("{param}={value}: mean accuracy {mean_acc:.4}");
        csv.push_str(&format!(
            "{param},{value},{},{:.6},{:.6},{:.6},{},{mean_acc:.6}\n",
            outcome.report.n,
            timings.pro_s,
            timings.pw_s,
            timings.opt_s,
            outcome.report.inference_count
        ));
    }
    write_atomic(&a.out, csv.as_bytes())?;
    println!("wrote {}", a.out.display());
    Ok(())
}
