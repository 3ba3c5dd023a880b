//! The `atelier` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use atelier_core::aggregate::{
    classify_painting, combine, ensemble_objective, optimize_weights, set_accuracy,
    PaintingResult,
};
use atelier_core::classifier::{init_model, train, CnnConfig, ConvStage, Pool};
use atelier_core::dataset::{tile_tensor, Label, Split};
use atelier_core::imaging::image_entropy;
use atelier_core::probmap::{accumulate, legend, render};
use atelier_core::synthgen::StyleParams;
use atelier_core::{grid_tiles, sieve, to_luma, ImageBuffer, TileSpec};

use crate::corpus::{build_dataset, generate_corpus, read_manifest, resolve};
use crate::image_io::{load_image, save_png};
use crate::model_io::{load_model, save_model};
use crate::parallel::RayonExecutor;
use crate::tables::{
    map_table, metrics_table, read_results, results_table, tile_table, weights_table, write_text,
    ResultRow,
};
use crate::{Error, Result};

#[derive(Debug, Parser)]
#[command(name = "atelier", version, about = "Entropy-sieved tile classification of paintings")]
#[command(args_override_self = true)]
pub struct Cli {
    /// Seed for every random choice in the run.
    #[arg(long, global = true, default_value_t = 42)]
    pub seed: u64,
    /// Worker threads; 0 uses one per core. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    /// File of `key = value` lines used as default flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the Shannon entropy (bits) of an image's luma histogram.
    Entropy { image: PathBuf },
    /// Tile an image and write the sieve verdict of every tile.
    Tile(TileArgs),
    /// Generate a two-style synthetic corpus with its manifest.
    Synth(SynthArgs),
    /// Train a tile classifier on the train/val paintings of a manifest.
    Train(TrainArgs),
    /// Classify paintings by their mean kept-tile probability.
    Classify(ClassifyArgs),
    /// Render a probability map of one painting.
    Map(MapArgs),
    /// Fit the weight combining two models' painting probabilities.
    Ensemble(EnsembleArgs),
    /// Render a Grad-CAM heat map for one tile.
    Gradcam(GradcamArgs),
}

#[derive(Debug, Args)]
pub struct TileArgs {
    pub image: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub size: usize,
    /// Defaults to half the tile size.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Tile table path; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 600)]
    pub width: usize,
    #[arg(long, default_value_t = 600)]
    pub height: usize,
    /// Stroke orientation of the positive style, degrees.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub orientation_a: f64,
    /// Stroke orientation of the negative style, degrees.
    #[arg(long, default_value_t = 90.0, allow_negative_numbers = true)]
    pub orientation_b: f64,
    #[arg(long, default_value_t = 10.0)]
    pub jitter: f64,
    #[arg(long, default_value_t = 24.0)]
    pub stroke_length: f64,
    #[arg(long, default_value_t = 4.0)]
    pub stroke_width: f64,
    #[arg(long, default_value_t = 12)]
    pub noise: u32,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub size: usize,
    /// Defaults to half the tile size.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Model file to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch metrics table; defaults to `<out>.metrics.tsv`.
    #[arg(long)]
    pub metrics: Option<PathBuf>,
    /// Convolution stages as `FILTERSxKERNEL`, with a `p` suffix for 2x2
    /// max-pooling, e.g. `8x3p,16x3p`.
    #[arg(long, default_value = "8x3p,16x3p", value_parser = parse_conv)]
    pub conv: ConvList,
    #[arg(long, default_value_t = 32)]
    pub dense_units: usize,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvList(pub Vec<ConvStage>);

fn parse_conv(s: &str) -> std::result::Result<ConvList, String> {
    let mut stages = Vec::new();
    for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (body, pool) = match part.strip_suffix('p') {
            Some(b) => (b, Pool::Max2),
            None => (part, Pool::None),
        };
        let (f, k) = body
            .split_once('x')
            .ok_or_else(|| format!("stage {part:?} is not FILTERSxKERNEL[p]"))?;
        let num = |v: &str| v.parse::<usize>().map_err(|_| format!("bad number in {part:?}"));
        stages.push(ConvStage::new(num(f)?, num(k)?, pool));
    }
    Ok(ConvList(stages))
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Images to classify; each painting is named by its file stem.
    pub images: Vec<PathBuf>,
    /// Classify the paintings of a manifest instead, with their labels.
    #[arg(long, conflicts_with = "images")]
    pub manifest: Option<PathBuf>,
    /// Restrict `--manifest` to one split.
    #[arg(long, requires = "manifest")]
    pub split: Option<Split>,
    /// Defaults to half the tile size.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Results table path; standard output when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct MapArgs {
    #[arg(long)]
    pub model: PathBuf,
    pub image: PathBuf,
    /// Defaults to half the tile size.
    #[arg(long)]
    pub stride: Option<usize>,
    /// Weight of the band colors over the painting; 1 hides the painting.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Rendered PNG. The raw map and legend go next to it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long = "resultsA")]
    pub results_a: PathBuf,
    #[arg(long = "resultsB")]
    pub results_b: PathBuf,
    /// Manifest giving labels and splits; weights are fitted on `val`.
    #[arg(long)]
    pub labels: PathBuf,
    /// Combined results table.
    #[arg(long)]
    pub out: PathBuf,
    /// Weights file; defaults to `<out>.weights.tsv`.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcamArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// A tile of exactly the model's input size.
    pub tile: PathBuf,
    /// Weight of the heat colors over the tile.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    #[arg(long)]
    pub out: PathBuf,
}

const SUBCOMMANDS: [&str; 8] = [
    "entropy", "tile", "synth", "train", "classify", "map", "ensemble", "gradcam",
];

/// Turns `key = value` lines into flags placed right after the subcommand,
/// ahead of everything the user typed, so the command line wins.
fn apply_config_file(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut config = None;
    let mut iter = args.iter().skip(1);
    while let Some(a) = iter.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            config = iter.next().cloned();
        } else if let Some(v) = s.strip_prefix("--config=") {
            config = Some(v.into());
        }
    }
    let Some(config) = config else {
        return Ok(args);
    };
    let path = PathBuf::from(config);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut injected: Vec<OsString> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Table {
            path: path.clone(),
            line: i + 1,
            message: "expected `key = value`".into(),
        })?;
        let key = key.trim().replace('_', "-");
        if key == "config" {
            continue;
        }
        injected.push(format!("--{key}").into());
        injected.push(value.trim().into());
    }
    let Some(pos) = args
        .iter()
        .position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref()))
    else {
        return Ok(args);
    };
    let mut out = vec![args[0].clone(), args[pos].clone()];
    out.extend(injected);
    out.extend(args[1..pos].iter().cloned());
    out.extend(args[pos + 1..].iter().cloned());
    Ok(out)
}

/// Parses, runs and returns the process exit code.
pub fn main_with_args(args: Vec<OsString>) -> i32 {
    let args = match apply_config_file(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("atelier: {e}");
            return 1;
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .try_init();
    eprintln!("atelier: config {cli:?}");
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("atelier: error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    let exec = RayonExecutor::new(cli.threads)?;
    match &cli.command {
        Command::Entropy { image } => {
            let img = load_image(image)?;
            println!("{:.6}", image_entropy(&to_luma(&img))?);
            Ok(())
        }
        Command::Tile(a) => cmd_tile(a),
        Command::Synth(a) => cmd_synth(a, cli.seed, &exec),
        Command::Train(a) => cmd_train(a, cli.seed, &exec),
        Command::Classify(a) => cmd_classify(a, &exec),
        Command::Map(a) => cmd_map(a, &exec),
        Command::Ensemble(a) => cmd_ensemble(a),
        Command::Gradcam(a) => cmd_gradcam(a),
    }
}

/// Flag-level tile validation, reported as a usage error.
fn tile_spec(size: usize, stride: Option<usize>) -> Result<TileSpec> {
    match stride {
        Some(s) => TileSpec::new(size, s),
        None => TileSpec::with_default_stride(size),
    }
    .map_err(|e| Error::Usage(e.to_string()))
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// `path` with `suffix` appended to its file name.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().map(OsString::from).unwrap_or_default();
    name.push(suffix);
    path.with_file_name(name)
}

fn cmd_tile(a: &TileArgs) -> Result<()> {
    let spec = tile_spec(a.size, a.stride)?;
    let img = load_image(&a.image)?;
    let tiles = sieve(&to_luma(&img), grid_tiles(&img, spec)?)?;
    let kept = tiles.iter().filter(|t| t.kept).count();
    log::info!("{kept} of {} tiles kept", tiles.len());
    emit(a.out.as_deref(), &tile_table(&tiles))
}

fn cmd_synth(a: &SynthArgs, seed: u64, exec: &RayonExecutor) -> Result<()> {
    let style = |orientation: f64, seed: u64| StyleParams {
        orientation_jitter: a.jitter,
        stroke_length: a.stroke_length,
        stroke_width: a.stroke_width,
        noise_amplitude: a.noise,
        ..StyleParams::with_orientation(orientation, seed)
    };
    let manifest = generate_corpus(
        &style(a.orientation_a, seed),
        &style(a.orientation_b, seed.wrapping_add(1)),
        a.n_per_class,
        a.width,
        a.height,
        &a.out_dir,
        exec,
    )
    .map_err(|e| match e {
        Error::Core(atelier_core::Error::InvalidStyle(m)) => Error::Usage(m),
        other => other,
    })?;
    println!("{}", manifest.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs, seed: u64, exec: &RayonExecutor) -> Result<()> {
    let spec = tile_spec(a.size, a.stride)?;
    let entries = read_manifest(&a.manifest)?;
    let base = a.manifest.parent().unwrap_or(Path::new("."));
    let started = Instant::now();
    let train_set = build_dataset(&entries, base, spec.size(), spec.stride(), Split::Train, exec)?;
    let val_set = build_dataset(&entries, base, spec.size(), spec.stride(), Split::Val, exec)?;
    log::info!(
        "{} training and {} validation tiles",
        train_set.len(),
        val_set.len()
    );
    let cfg = CnnConfig {
        input_size: spec.size(),
        input_channels: train_set.channels().unwrap_or(3),
        conv_layers: a.conv.0.clone(),
        dense_units: a.dense_units,
        seed,
        learning_rate: a.lr,
        momentum: a.momentum,
        epochs: a.epochs,
        batch_size: a.batch_size,
    };
    let model = init_model(&cfg).map_err(|e| Error::Usage(e.to_string()))?;
    let outcome = train(&model, &train_set, &val_set, exec)?;
    for m in &outcome.metrics {
        log::info!(
            "epoch {}: train loss {:.4}, val loss {:.4}, val accuracy {:.4}",
            m.epoch,
            m.train_loss,
            m.val_loss,
            m.val_accuracy
        );
    }
    log::info!(
        "kept epoch {} of {} after {:.1}s",
        outcome.best_epoch,
        outcome.metrics.len(),
        started.elapsed().as_secs_f64()
    );
    save_model(&outcome.model, &a.out)?;
    let metrics = a.metrics.clone().unwrap_or_else(|| sibling(&a.out, ".metrics.tsv"));
    write_text(metrics, &metrics_table(&outcome.metrics))
}

fn classify_file(
    model: &atelier_core::classifier::CnnModel,
    path: &Path,
    stride: Option<usize>,
    painting_id: &str,
    true_label: Option<Label>,
    exec: &RayonExecutor,
) -> Result<(ImageBuffer, PaintingResult)> {
    let spec = tile_spec(model.config().input_size, stride)?;
    let run = || -> Result<(ImageBuffer, PaintingResult)> {
        let img = load_image(path)?;
        let r = classify_painting(model, &img, spec, painting_id, true_label, exec)?;
        Ok((img, r))
    };
    run().map_err(|e| Error::Painting {
        painting_id: painting_id.to_string(),
        source: Box::new(e),
    })
}

fn cmd_classify(a: &ClassifyArgs, exec: &RayonExecutor) -> Result<()> {
    let model = load_model(&a.model)?;
    let mut jobs: Vec<(PathBuf, String, Option<Label>)> = Vec::new();
    if let Some(manifest) = &a.manifest {
        let base = manifest.parent().unwrap_or(Path::new("."));
        for e in read_manifest(manifest)? {
            if a.split.is_none_or(|s| s == e.split) {
                jobs.push((resolve(base, &e), e.painting_id.clone(), Some(e.label)));
            }
        }
    } else {
        for p in &a.images {
            let id = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string());
            jobs.push((p.clone(), id, None));
        }
    }
    if jobs.is_empty() {
        return Err(Error::Usage("nothing to classify".into()));
    }
    let mut results = Vec::with_capacity(jobs.len());
    for (path, id, label) in &jobs {
        let (_, r) = classify_file(&model, path, a.stride, id, *label, exec)?;
        results.push(r);
    }
    if results.iter().all(|r| r.true_label.is_some()) {
        log::info!("painting accuracy {:.4}", set_accuracy(&results)?);
    }
    let rows: Vec<ResultRow> = results.iter().map(ResultRow::from).collect();
    emit(a.out.as_deref(), &results_table(&rows))
}

fn cmd_map(a: &MapArgs, exec: &RayonExecutor) -> Result<()> {
    if !(0.0..=1.0).contains(&a.alpha) {
        return Err(Error::Usage(format!("alpha {} outside [0, 1]", a.alpha)));
    }
    let model = load_model(&a.model)?;
    let id = a
        .image
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let (img, result) = classify_file(&model, &a.image, a.stride, &id, None, exec)?;
    let map = accumulate(img.width(), img.height(), &result.tiles)?;
    save_png(&render(&map, Some(&img), a.alpha)?, &a.out)?;
    write_text(a.out.with_extension("map.tsv"), &map_table(&map))?;
    write_text(a.out.with_extension("legend.txt"), legend())?;
    println!(
        "{}\t{}\t{}",
        result.painting_id, result.mean_prob, result.predicted
    );
    Ok(())
}

fn cmd_ensemble(a: &EnsembleArgs) -> Result<()> {
    let rows_a = read_results(&a.results_a)?;
    let rows_b = read_results(&a.results_b)?;
    let labels = read_manifest(&a.labels)?;
    let mut pairs: Vec<(ResultRow, ResultRow)> = Vec::with_capacity(rows_a.len());
    for ra in rows_a {
        let rb = rows_b
            .iter()
            .find(|r| r.painting_id == ra.painting_id)
            .ok_or_else(|| {
                Error::Data(format!(
                    "painting {} is missing from {}",
                    ra.painting_id,
                    a.results_b.display()
                ))
            })?;
        pairs.push((ra, rb.clone()));
    }
    if pairs.len() != rows_b.len() {
        return Err(Error::Data(format!(
            "{} lists paintings absent from {}",
            a.results_b.display(),
            a.results_a.display()
        )));
    }
    let manifest_entry = |id: &str| labels.iter().find(|e| e.painting_id == id);
    let val: Vec<(f64, f64, Label)> = pairs
        .iter()
        .filter_map(|(ra, rb)| {
            let e = manifest_entry(&ra.painting_id)?;
            (e.split == Split::Val).then_some((ra.mean_prob, rb.mean_prob, e.label))
        })
        .collect();
    if val.is_empty() {
        return Err(Error::Data(
            "no validation painting appears in both results tables".into(),
        ));
    }
    let weights = optimize_weights(&val)?;
    let (err_a, _) = ensemble_objective(&val, 1.0);
    let (err_b, _) = ensemble_objective(&val, 0.0);
    log::info!(
        "validation error: A {err_a:.6}, B {err_b:.6}, combined {:.6} at w = {:.2}",
        weights.achieved_error,
        weights.w
    );
    let combined: Vec<ResultRow> = pairs
        .iter()
        .map(|(ra, rb)| {
            let p = combine(ra.mean_prob, rb.mean_prob, &weights);
            ResultRow {
                painting_id: ra.painting_id.clone(),
                mean_prob: p,
                predicted: Label::from_probability(p),
                true_label: manifest_entry(&ra.painting_id)
                    .map(|e| e.label)
                    .or(ra.true_label),
                n_tiles_kept: ra.n_tiles_kept + rb.n_tiles_kept,
                n_tiles_total: ra.n_tiles_total + rb.n_tiles_total,
            }
        })
        .collect();
    write_text(&a.out, &results_table(&combined))?;
    let weights_path = a
        .weights
        .clone()
        .unwrap_or_else(|| sibling(&a.out, ".weights.tsv"));
    write_text(weights_path, &weights_table(&weights))?;
    println!("{:.2}", weights.w);
    Ok(())
}

/// Blue through cyan, yellow to red.
fn heat_color(v: f64) -> [f64; 3] {
    let ramp = |center: f64| (1.5 - (4.0 * v - center).abs()).clamp(0.0, 1.0) * 255.0;
    [ramp(3.0), ramp(2.0), ramp(1.0)]
}

fn cmd_gradcam(a: &GradcamArgs) -> Result<()> {
    if !(0.0..=1.0).contains(&a.alpha) {
        return Err(Error::Usage(format!("alpha {} outside [0, 1]", a.alpha)));
    }
    let model = load_model(&a.model)?;
    let img = load_image(&a.tile)?;
    let size = model.config().input_size;
    if img.width() != size || img.height() != size {
        return Err(Error::Data(format!(
            "tile is {}x{}, the model expects {size}x{size}",
            img.width(),
            img.height()
        )));
    }
    let heat = model.gradcam(&tile_tensor(&img, 0, 0, size))?;
    let mut data = Vec::with_capacity(size * size * 3);
    for (i, &h) in heat.iter().enumerate() {
        let px = img.pixel(i % size, i / size);
        for (ch, c) in heat_color(h).into_iter().enumerate() {
            let s = if px.len() == 1 { px[0] } else { px[ch] } as f64;
            data.push((a.alpha * c + (1.0 - a.alpha) * s + 0.5).floor().clamp(0.0, 255.0) as u8);
        }
    }
    save_png(&ImageBuffer::new(size, size, 3, data)?, &a.out)?;
    let peak = heat
        .iter()
        .enumerate()
        .fold((0, 0.0), |best, (i, &h)| if h > best.1 { (i, h) } else { best });
    println!("peak\t{}\t{}\t{:.6}", peak.0 % size, peak.0 / size, peak.1);
    Ok(())
}
