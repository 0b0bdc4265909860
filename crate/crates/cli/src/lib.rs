//! The `flexcast` command-line pipeline: synthetic data, preparation,
//! training, fine-tuning, evaluation and single-station prediction.

pub mod config;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use flexcast_core::data::{
    generate_synthetic, split, voronoi_aggregate, Block, PreparedDataset, Sample, Scaler, Split,
    SplitManifest, SplitMode, SplitSpec, SubgraphCache, SyntheticConfig, TileTraffic,
    TrafficSeries,
};
use flexcast_core::eval::{
    evaluate, format_table, predict_raw, write_csv, ForecastData, ReportRow,
};
use flexcast_core::graph::{build_proximity_graph, build_store, StationMap, SubgraphStore};
use flexcast_core::model::{Checkpoint, Model, ModelConfig, REFERENCE_PARAMETER_COUNT};
use flexcast_core::training::{finetune, train, TrainReport, TransferScope};
use flexcast_core::{Error, Result};
use serde::Serialize;

pub use config::{RunConfig, SEED_ENV};

/// File names inside a prepared dataset directory.
pub const DATASET_FILE: &str = "dataset.fxds";
pub const STORE_FILE: &str = "subgraphs.fxsg";
/// File names written by `gen-synthetic`.
pub const STATIONS_FILE: &str = "stations.csv";
pub const TRAFFIC_FILE: &str = "traffic.csv";

#[derive(Debug, Parser)]
#[command(
    name = "flexcast",
    version,
    about = "Inductive per-station traffic forecasting"
)]
pub struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic station map and traffic matrix.
    GenSynthetic(GenArgs),
    /// Aggregate traffic, build the proximity graph, subgraph store and dataset.
    Prepare(PrepareArgs),
    /// Train a model from scratch.
    Train(TrainArgs),
    /// Fine-tune a checkpoint on another dataset.
    Finetune(FinetuneArgs),
    /// Per-horizon MAE/RMSE of a checkpoint on one split.
    Evaluate(EvaluateArgs),
    /// Forecast one station from one time index.
    Predict(PredictArgs),
    /// Print the effective configuration.
    ShowConfig(ShowConfigArgs),
    /// Print the parameter accounting of a configuration.
    Params(ShowConfigArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub stations: usize,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    /// `station_id,lat,lon` or `station_id,x_m,y_m`.
    #[arg(long)]
    pub stations: PathBuf,
    /// `tile_id,…` coordinates; traffic is then keyed by tile.
    #[arg(long, conflicts_with = "no_voronoi")]
    pub tiles: Option<PathBuf>,
    /// Traffic matrix, wide or long.
    #[arg(long)]
    pub traffic: PathBuf,
    /// Traffic is already per station.
    #[arg(long)]
    pub no_voronoi: bool,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub max_degree: Option<usize>,
    /// Subgraph radius in hops.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SplitFlags {
    #[arg(long, conflicts_with = "transductive")]
    pub inductive: bool,
    #[arg(long)]
    pub transductive: bool,
    /// Fraction of the train+val timeline kept, newest first.
    #[arg(long)]
    pub scarcity: Option<f64>,
}

impl SplitFlags {
    fn apply(&self, spec: &mut SplitSpec) {
        if self.inductive {
            spec.mode = SplitMode::Inductive;
        }
        if self.transductive {
            spec.mode = SplitMode::Transductive;
        }
        if self.scarcity.is_some() {
            spec.scarcity = self.scarcity;
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitFlags,
    /// Drop every graph component (temporal-only ablation).
    #[arg(long)]
    pub graph_free: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    #[arg(long)]
    pub from: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Parameters taken from the source (`all` or `tcn-eps`).
    #[arg(long)]
    pub scope: Option<TransferScope>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub split: SplitFlags,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Write the CSV report here (`-` for stdout).
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// Variant label in the report; defaults from the checkpoint.
    #[arg(long)]
    pub variant: Option<String>,
    /// Divide displayed values by this factor.
    #[arg(long)]
    pub scale: Option<f64>,
    #[arg(long, default_value_t = 4096)]
    pub batch_size: usize,
    #[command(flatten)]
    pub split_flags: SplitFlags,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub station: String,
    /// Forecast origin: the first predicted step.
    #[arg(long)]
    pub t: usize,
}

#[derive(Debug, Args)]
pub struct ShowConfigArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Process exit status for an error: 1 configuration, 2 data, 3 numeric.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        Error::Numeric { .. } => 3,
        _ => 2,
    }
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    match cli.command {
        Command::GenSynthetic(a) => gen_synthetic(&a, out),
        Command::Prepare(a) => prepare(&a, out),
        Command::Train(a) => train_cmd(&a, out),
        Command::Finetune(a) => finetune_cmd(&a, out),
        Command::Evaluate(a) => evaluate_cmd(&a, out),
        Command::Predict(a) => predict_cmd(&a, out),
        Command::ShowConfig(a) => {
            let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
            cfg.apply_seed(a.seed, None)?;
            write!(out, "{}", cfg.to_toml())?;
            Ok(())
        }
        Command::Params(a) => {
            let cfg = RunConfig::load_or_default(a.config.as_deref())?;
            write!(out, "{}", parameter_report(&cfg.model)?)?;
            Ok(())
        }
    }
}

/// Per-tensor parameter counts, the total, the closed-form count and the
/// difference to the reference count.
pub fn parameter_report(cfg: &ModelConfig) -> Result<String> {
    let model = Model::new(cfg.clone(), 0)?;
    let mut s = String::new();
    for (name, n) in model.params.breakdown() {
        s.push_str(&format!("{name:<28} {n:>8}\n"));
    }
    let runtime = model.count_parameters();
    let closed = cfg.closed_form_parameter_count();
    s.push_str(&format!("{:<28} {runtime:>8}\n", "total"));
    s.push_str(&format!("{:<28} {closed:>8}\n", "closed form"));
    s.push_str(&format!(
        "{:<28} {REFERENCE_PARAMETER_COUNT:>8}\n",
        "reference"
    ));
    s.push_str(&format!(
        "{:<28} {:>8}\n",
        "delta to reference",
        runtime as i64 - REFERENCE_PARAMETER_COUNT as i64
    ));
    Ok(s)
}

fn gen_synthetic(a: &GenArgs, out: &mut dyn Write) -> Result<()> {
    let seed = RunConfig::default().apply_seed(a.seed, None)?;
    let cfg = SyntheticConfig {
        n_stations: a.stations,
        n_steps: a.steps,
        seed,
        ..SyntheticConfig::default()
    };
    let (stations, series) = generate_synthetic(&cfg)?;
    fs::create_dir_all(&a.out)?;
    stations.write_csv(fs::File::create(a.out.join(STATIONS_FILE))?)?;
    series.write_csv(
        std::io::BufWriter::new(fs::File::create(a.out.join(TRAFFIC_FILE))?),
        "station_id",
    )?;
    writeln!(
        out,
        "wrote {} stations × {} steps to {}",
        stations.len(),
        series.n_steps(),
        a.out.display()
    )?;
    Ok(())
}

fn prepare(a: &PrepareArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    cfg.apply_seed(a.seed, None)?;
    if let Some(k) = a.kappa {
        cfg.graph.kappa_km = k;
    }
    if let Some(m) = a.max_degree {
        cfg.graph.max_degree = m;
    }
    if let Some(k) = a.k {
        cfg.graph.hops = k;
    }
    cfg.validate()?;

    let stations = StationMap::read_csv_path(&a.stations)?;
    let ids: Vec<String> = stations.ids().map(str::to_string).collect();
    let series = match (&a.tiles, a.no_voronoi) {
        (Some(tiles), _) => {
            let tt = TileTraffic::read_csv_paths(tiles, &a.traffic)?;
            voronoi_aggregate(&tt, &stations)?
        }
        (None, true) => {
            TrafficSeries::read_csv(fs::File::open(&a.traffic)?, "station_id")?.aligned_to(&ids)?
        }
        (None, false) => {
            return Err(Error::Config(
                "pass --tiles for tile traffic or --no-voronoi for per-station traffic".into(),
            ))
        }
    };

    let graph = build_proximity_graph(&stations, cfg.graph.kappa_km, cfg.graph.max_degree)?;
    let report = graph.report().clone();
    writeln!(out, "graph: {report}")?;
    if !report.is_connected() {
        log::warn!(
            "proximity graph has {} connected components at kappa = {} km",
            report.components,
            cfg.graph.kappa_km
        );
    }

    fs::create_dir_all(&a.out)?;
    let store = build_store(&graph, cfg.graph.hops, &a.out.join(STORE_FILE))?;
    writeln!(
        out,
        "store: {} subgraphs ({} hops)",
        store.len(),
        cfg.graph.hops
    )?;

    let mc = &cfg.model;
    let manifest = split(
        series.n_stations(),
        series.n_steps(),
        &cfg.split,
        mc.history,
        mc.horizon,
    )?;
    let scaler = Scaler::fit_train(&series, &manifest)?;
    let dataset = PreparedDataset {
        stations,
        series,
        graph: cfg.graph,
        scaler,
        manifest,
    };
    dataset.save(&a.out.join(DATASET_FILE))?;
    writeln!(
        out,
        "dataset: {} stations × {} steps in {}",
        dataset.series.n_stations(),
        dataset.series.n_steps(),
        a.out.display()
    )?;
    Ok(())
}

/// A prepared dataset with its subgraphs held in memory.
pub struct LoadedData {
    pub dataset: PreparedDataset,
    pub subgraphs: SubgraphCache,
}

impl LoadedData {
    pub fn load(dir: &Path) -> Result<Self> {
        let dataset = PreparedDataset::load(&dir.join(DATASET_FILE))?;
        let store = SubgraphStore::open(&dir.join(STORE_FILE))?;
        if store.len() != dataset.series.n_stations() {
            return Err(Error::Integrity(format!(
                "store holds {} subgraphs for {} stations",
                store.len(),
                dataset.series.n_stations()
            )));
        }
        let subgraphs = SubgraphCache::load(&store, dataset.series.station_ids())?;
        Ok(LoadedData { dataset, subgraphs })
    }

    pub fn manifest(&self, spec: &SplitSpec, model: &ModelConfig) -> Result<SplitManifest> {
        let s = &self.dataset.series;
        split(
            s.n_stations(),
            s.n_steps(),
            spec,
            model.history,
            model.horizon,
        )
    }
}

/// What `train` and `finetune` record next to the checkpoint.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub config: RunConfig,
    pub split: SplitSummary,
    pub scaler: Scaler,
    pub train: TrainReport,
}

#[derive(Debug, Serialize)]
pub struct SplitSummary {
    pub mode: SplitMode,
    pub scarcity: Option<f64>,
    pub floor: usize,
    pub train_block: Block,
    pub val_block: Block,
    pub test_block: Block,
    pub train_nodes: usize,
    pub val_nodes: usize,
    pub test_nodes: usize,
    pub train_samples: usize,
    pub val_samples: usize,
    pub test_samples: usize,
}

impl SplitSummary {
    fn new(m: &SplitManifest, cfg: &ModelConfig) -> Self {
        let count = |s| m.nodes(s).len() * m.origins(s, cfg.history, cfg.horizon).len();
        SplitSummary {
            mode: m.spec.mode,
            scarcity: m.spec.scarcity,
            floor: m.floor,
            train_block: m.train,
            val_block: m.val,
            test_block: m.test,
            train_nodes: m.train_nodes.len(),
            val_nodes: m.val_nodes.len(),
            test_nodes: m.test_nodes.len(),
            train_samples: count(Split::Train),
            val_samples: count(Split::Val),
            test_samples: count(Split::Test),
        }
    }
}

/// Path of the JSON report written next to a checkpoint.
pub fn report_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".report.json");
    PathBuf::from(s)
}

fn fit(
    cfg: &RunConfig,
    data: &LoadedData,
    model_cfg: &ModelConfig,
    run: impl FnOnce(&ForecastData<'_>, &[Sample], &[Sample]) -> Result<(Model, TrainReport)>,
) -> Result<(Model, Scaler, SplitManifest, TrainReport)> {
    let manifest = data.manifest(&cfg.split, model_cfg)?;
    let scaler = Scaler::fit_train(&data.dataset.series, &manifest)?;
    let fd = ForecastData::new(&data.dataset.series, scaler, &data.subgraphs);
    let train_s = manifest.samples(Split::Train, model_cfg.history, model_cfg.horizon);
    let val_s = manifest.samples(Split::Val, model_cfg.history, model_cfg.horizon);
    let (model, report) = run(&fd, &train_s, &val_s)?;
    Ok((model, scaler, manifest, report))
}

fn finish(
    cfg: RunConfig,
    model: Model,
    scaler: Scaler,
    manifest: &SplitManifest,
    report: TrainReport,
    path: &Path,
    out: &mut dyn Write,
) -> Result<()> {
    let summary = SplitSummary::new(manifest, &model.config);
    writeln!(
        out,
        "split: {:?}, nodes {}/{}/{}, samples {}/{}/{}",
        summary.mode,
        summary.train_nodes,
        summary.val_nodes,
        summary.test_nodes,
        summary.train_samples,
        summary.val_samples,
        summary.test_samples
    )?;
    writeln!(
        out,
        "trained {} epochs, best epoch {:?}, best val MAE {:?}, {} parameters",
        report.epochs.len(),
        report.best_epoch,
        report.best_val_mae,
        report.parameter_count
    )?;
    let seed = cfg.seed.unwrap_or(0);
    let ckpt = Checkpoint {
        model,
        scaler,
        seed,
        split: Some(cfg.split.clone()),
    };
    ckpt.save(path)?;
    let run = RunReport {
        config: cfg,
        split: summary,
        scaler,
        train: report,
    };
    let mut json = serde_json::to_string_pretty(&run)?;
    json.push('\n');
    fs::write(report_path(path), json)?;
    writeln!(out, "checkpoint: {}", path.display())?;
    Ok(())
}

fn train_cmd(a: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let seed = cfg.apply_seed(a.seed, None)?;
    a.split.apply(&mut cfg.split);
    if a.graph_free {
        cfg.model.graph_free = true;
    }
    if let Some(e) = a.epochs {
        cfg.train.max_epochs = e;
    }
    cfg.validate()?;
    let data = LoadedData::load(&a.data)?;
    cfg.graph = data.dataset.graph;
    let init = Model::new(cfg.model.clone(), seed)?;
    let (model, scaler, manifest, report) = fit(&cfg, &data, &cfg.model, |fd, tr, va| {
        train(init, fd, tr, va, &cfg.train)
    })?;
    finish(cfg, model, scaler, &manifest, report, &a.out, out)
}

fn finetune_cmd(a: &FinetuneArgs, out: &mut dyn Write) -> Result<()> {
    let source = Checkpoint::load(&a.from)?;
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    cfg.apply_seed(a.seed, Some(source.seed))?;
    a.split.apply(&mut cfg.split);
    if let Some(e) = a.epochs {
        cfg.train.max_epochs = e;
    }
    if let Some(s) = a.scope {
        cfg.transfer.scope = s;
    }
    cfg.model = source.model.config.clone();
    cfg.validate()?;
    let data = LoadedData::load(&a.data)?;
    cfg.graph = data.dataset.graph;
    let scope = cfg.transfer.scope;
    let (model, scaler, manifest, report) = fit(&cfg, &data, &cfg.model, |fd, tr, va| {
        finetune(&source.model, scope, fd, tr, va, &cfg.train)
    })?;
    finish(cfg, model, scaler, &manifest, report, &a.out, out)
}

fn evaluate_cmd(a: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let data = LoadedData::load(&a.data)?;
    let mut spec = ckpt.split.clone().unwrap_or(SplitSpec {
        seed: ckpt.seed,
        ..SplitSpec::default()
    });
    a.split_flags.apply(&mut spec);
    let mc = &ckpt.model.config;
    let manifest = data.manifest(&spec, mc)?;
    let samples = manifest.samples(a.split, mc.history, mc.horizon);
    let fd = ForecastData::new(&data.dataset.series, ckpt.scaler, &data.subgraphs);
    let report = evaluate(&ckpt.model, &fd, &samples, a.batch_size, a.split.name())?;
    let variant = a
        .variant
        .clone()
        .unwrap_or_else(|| if mc.graph_free { "tcn" } else { "flexible" }.to_string());
    let rows = [ReportRow {
        variant,
        rate: spec.scarcity.unwrap_or(1.0),
        report,
    }];
    write!(out, "{}", rows[0].report.table(a.scale))?;
    match &a.csv {
        Some(p) if p.as_os_str() == "-" => write_csv(&rows, &mut *out)?,
        Some(p) => write_csv(&rows, fs::File::create(p)?)?,
        None => {}
    }
    log::info!("\n{}", format_table(&rows, a.scale));
    Ok(())
}

/// Eval-mode forecast for one station at origin `t`, in raw units. Origins up
/// to the end of the series are accepted; steps past the end are unknown.
pub fn predict_station(
    ckpt: &Checkpoint,
    data: &LoadedData,
    station: &str,
    t: usize,
) -> Result<Vec<f64>> {
    let series = &data.dataset.series;
    let row = series
        .station_ids()
        .iter()
        .position(|id| id == station)
        .ok_or_else(|| Error::Key(format!("unknown station {station:?}")))?;
    let mc = &ckpt.model.config;
    if t < mc.history || t > series.n_steps() {
        return Err(Error::Index(format!(
            "origin t={t} needs {} steps of history within {} steps",
            mc.history,
            series.n_steps()
        )));
    }
    // Pad with unknown future steps so the window helper accepts the origin.
    let padded;
    let series = if t + mc.horizon > series.n_steps() {
        let extra = t + mc.horizon - series.n_steps();
        let n = series.n_steps() + extra;
        let mut values = Vec::with_capacity(series.n_stations() * n);
        for i in 0..series.n_stations() {
            values.extend_from_slice(series.row(i));
            values.extend(std::iter::repeat_n(0.0, extra));
        }
        let mut s = TrafficSeries::new(series.station_ids().to_vec(), n, values)?;
        s.start_unix = series.start_unix;
        s.resolution_minutes = series.resolution_minutes;
        padded = s;
        &padded
    } else {
        series
    };
    let fd = ForecastData::new(series, ckpt.scaler, &data.subgraphs);
    predict_raw(&ckpt.model, &fd, &[Sample { station: row, t }], 1)
}

fn predict_cmd(a: &PredictArgs, out: &mut dyn Write) -> Result<()> {
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let data = LoadedData::load(&a.data)?;
    let values = predict_station(&ckpt, &data, &a.station, a.t)?;
    for v in values {
        writeln!(out, "{v}")?;
    }
    Ok(())
}
