use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use artifact_annotate::{AnnotationService, ServiceConfig, SystemClock};
use artifact_core::dataset::{
    extract_many, label_frequency, load_manifest, manifest_dir, save_manifest, split_dataset, DatasetManifest,
    FrameRate, FrequencyTable, PercentRounding, Subset,
};
use artifact_core::evaluation::{evaluate, format_percent, results_table, MetricsReport};
use artifact_core::gradcam::{attention_agreement, compute_gradcam, overlay, DEFAULT_PERCENTILE};
use artifact_core::models::{load_checkpoint, Architecture, BackboneSpec};
use artifact_core::synthetic::{generate_synthetic_dataset, InjectionSpec, RegionMask, SceneKind};
use artifact_core::training::{export_loss_curves, load_image, train, TrainConfig};
use artifact_core::{ArtifactLabel, NUM_LABELS};
use clap::Args;

use crate::{Cli, CliError, Command, GlobalArgs};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Clip files (animated GIF), one or more.
    #[arg(long = "video", required = true, num_args = 1..)]
    pub videos: Vec<PathBuf>,
    /// Sampling rate in frames per second, e.g. 2 or 30000/1001.
    #[arg(long, default_value = "2")]
    pub fps: FrameRate,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 600)]
    pub frames: usize,
    /// Square frame side in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: u32,
    /// Per-label injection probabilities, in label order.
    #[arg(long, value_delimiter = ',', default_value = "0.45,0.25,0.26,0.80")]
    pub probabilities: Vec<f64>,
    /// Injection intensity in (0, 1], one value for all labels or four.
    #[arg(long, value_delimiter = ',', default_value = "1.0")]
    pub intensity: Vec<f32>,
    #[arg(long, default_value = "striped")]
    pub scene: SceneKind,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long, required_unless_present = "counts", conflicts_with = "counts")]
    pub manifest: Option<PathBuf>,
    /// Per-label counts instead of a manifest, e.g. 134,74,78,241.
    #[arg(long, value_delimiter = ',', requires = "total")]
    pub counts: Option<Vec<u64>>,
    /// Number of labeled frames behind `--counts`.
    #[arg(long)]
    pub total: Option<u64>,
    /// truncate or half_up.
    #[arg(long, default_value = "truncate")]
    pub rounding: PercentRounding,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// tiny_cnn, resnet50, efficientnet_b3, efficientnet_b4 or vit_base.
    #[arg(long, visible_alias = "backbone", default_value = "tiny_cnn")]
    pub arch: Architecture,
    /// Input side in pixels (architecture default when omitted).
    #[arg(long)]
    pub resolution: Option<u32>,
    /// Start from ImageNet weights found in the weights directory.
    #[arg(long)]
    pub pretrained: bool,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    #[arg(long, visible_alias = "batch", default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
    /// Per-label loss weights, four values.
    #[arg(long, value_delimiter = ',')]
    pub loss_weights: Option<Vec<f64>>,
    /// Train without random left-right mirroring.
    #[arg(long)]
    pub no_augment: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// train or val.
    #[arg(long, default_value = "val")]
    pub split: Subset,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f32,
    /// Row name in reports (the architecture name when omitted).
    #[arg(long)]
    pub name: Option<String>,
    /// A published mean accuracy in percent to compare against.
    #[arg(long)]
    pub reference_mean: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Metrics files written by `eval`, one row each.
    #[arg(long, required = true, num_args = 1..)]
    pub metrics: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcamArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Label indices 1-4 (all four when omitted).
    #[arg(long, value_delimiter = ',')]
    pub label: Vec<usize>,
    /// Layer id (the architecture's default when omitted).
    #[arg(long)]
    pub layer: Option<String>,
}

#[derive(Debug, Args)]
pub struct AgreementArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    /// Binary mask image of the human-drawn region.
    #[arg(long)]
    pub mask: PathBuf,
    /// Label index 1-4.
    #[arg(long)]
    pub label: usize,
    #[arg(long, default_value_t = DEFAULT_PERCENTILE)]
    pub percentile: f64,
    #[arg(long)]
    pub layer: Option<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Seconds before an unsubmitted lease lapses.
    #[arg(long, default_value_t = 300)]
    pub lease_timeout: u64,
    /// Manifest snapshot every this many events (0 disables).
    #[arg(long, default_value_t = 25)]
    pub checkpoint_every: usize,
    /// Event log path (next to the manifest when omitted).
    #[arg(long)]
    pub event_log: Option<PathBuf>,
}

pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let g = &cli.global;
    match &cli.command {
        Command::Extract(a) => extract(g, a, out),
        Command::Synth(a) => synth(g, a, out),
        Command::Split(a) => split(g, a, out),
        Command::Stats(a) => stats(g, a, out),
        Command::Train(a) => train_cmd(g, a, out),
        Command::Eval(a) => eval(g, a, out),
        Command::Report(a) => report(g, a, out),
        Command::Gradcam(a) => gradcam(g, a, out),
        Command::Agreement(a) => agreement(g, a, out),
        Command::Serve(a) => serve(g, a, out),
    }
}

fn say(out: &mut dyn Write, text: &str) {
    let _ = writeln!(out, "{text}");
}

fn out_dir(g: &GlobalArgs, default: &str) -> PathBuf {
    g.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| CliError::Io(format!("{}: {e}", parent.display())))?;
    }
    let text = serde_json::to_string_pretty(value).expect("json value serializes");
    std::fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn four<T: Copy>(name: &str, values: &[T]) -> Result<[T; NUM_LABELS], CliError> {
    values
        .try_into()
        .map_err(|_| CliError::Usage(format!("--{name} needs {NUM_LABELS} values, got {}", values.len())))
}

fn extract(g: &GlobalArgs, a: &ExtractArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let dir = out_dir(g, "frames");
    let videos: Vec<&Path> = a.videos.iter().map(PathBuf::as_path).collect();
    let records = extract_many(&videos, a.fps, &dir)?;
    let manifest = DatasetManifest::new(records);
    let path = dir.join(MANIFEST_FILE);
    save_manifest(&manifest, &path)?;
    say(out, &format!("{} frames from {} clips at {} fps -> {}", manifest.frames.len(), videos.len(), a.fps, path.display()));
    Ok(())
}

fn synth(g: &GlobalArgs, a: &SynthArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let intensity = match a.intensity.as_slice() {
        [one] => [*one; NUM_LABELS],
        many => four("intensity", many)?,
    };
    let spec = InjectionSpec {
        seed: g.seed.unwrap_or(0),
        artifact_probabilities: four("probabilities", &a.probabilities)?,
        intensity,
        scene_kind: a.scene,
        size: a.size,
    };
    let dir = out_dir(g, "synthetic");
    let manifest = generate_synthetic_dataset(&spec, a.frames, &dir)?;
    let table = label_frequency(&manifest, PercentRounding::Truncate)?;
    say(out, &format!("{} synthetic frames -> {}", manifest.frames.len(), dir.join(MANIFEST_FILE).display()));
    say(out, &table.render());
    Ok(())
}

fn split(g: &GlobalArgs, a: &SplitArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let manifest = load_manifest(&a.manifest)?;
    let seed = g.seed.unwrap_or(0);
    let split = split_dataset(&manifest, a.train_fraction, seed)?;
    let path = g.out.clone().unwrap_or_else(|| a.manifest.clone());
    save_manifest(&split, &path)?;
    let train = split.subset(Subset::Train)?.len();
    let val = split.subset(Subset::Val)?.len();
    say(out, &format!("TRAIN {train}, VAL {val} (seed {seed}) -> {}", path.display()));
    Ok(())
}

fn stats(g: &GlobalArgs, a: &StatsArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let table = match (&a.manifest, &a.counts, a.total) {
        (Some(path), _, _) => label_frequency(&load_manifest(path)?, a.rounding)?,
        (None, Some(counts), Some(total)) => FrequencyTable::from_counts(four("counts", counts)?, total, a.rounding)?,
        _ => return Err(CliError::Usage("give --manifest or --counts with --total".into())),
    };
    say(out, table.render().trim_end());
    if let Some(dir) = &g.out {
        write_json(&dir.join("stats.json"), &table.to_record())?;
    }
    Ok(())
}

fn train_cmd(g: &GlobalArgs, a: &TrainArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let manifest = load_manifest(&a.manifest)?;
    let resolution = a.resolution.unwrap_or(a.arch.default_resolution());
    let config = TrainConfig {
        backbone: BackboneSpec::new(a.arch, a.pretrained, resolution),
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        seed: g.seed.unwrap_or(TrainConfig::default().seed),
        threshold: a.threshold,
        loss_weights: a.loss_weights.as_deref().map(|w| four("loss-weights", w)).transpose()?,
        augment: !a.no_augment,
    };
    let dir = out_dir(g, "run");
    let run = train(&config, &manifest, &manifest_dir(&a.manifest), &dir)?;
    let (csv, png) = export_loss_curves(&run, &dir.join("loss_curves.csv"))?;
    say(out, "epoch  train_loss  val_loss");
    for e in &run.loss_history {
        say(out, &format!("{:>5}  {:>10.6}  {:>8.6}", e.epoch, e.train_loss, e.val_loss));
    }
    say(
        out,
        &format!(
            "best epoch {} (val loss {:.6}) -> {}\nloss curves -> {}, {}",
            run.best_epoch,
            run.best_val_loss,
            run.checkpoint_path.display(),
            csv.display(),
            png.display()
        ),
    );
    Ok(())
}

fn eval(g: &GlobalArgs, a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let manifest = load_manifest(&a.manifest)?;
    let mut report = evaluate(&model, &manifest, &manifest_dir(&a.manifest), a.split, a.threshold)?;
    if let Some(name) = &a.name {
        report.model_name = name.clone();
    }
    report.reference_mean_accuracy = a.reference_mean.map(|m| m / 100.0);
    report.validate()?;
    let path = out_dir(g, "eval").join("metrics.json");
    report.save(&path)?;
    for label in ArtifactLabel::ALL {
        say(out, &format!("{label}: {}", format_percent(report.per_label_accuracy[label.position()])));
    }
    say(out, &format!("mean: {} (n = {}) -> {}", format_percent(report.mean_accuracy), report.n_eval, path.display()));
    Ok(())
}

fn report(g: &GlobalArgs, a: &ReportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let reports = a.metrics.iter().map(|p| MetricsReport::load(p)).collect::<Result<Vec<_>, _>>()?;
    let (md, _) = results_table(&reports, &out_dir(g, "report").join("results.md"))?;
    let text = std::fs::read_to_string(&md).map_err(|e| CliError::Io(format!("{}: {e}", md.display())))?;
    say(out, text.trim_end());
    Ok(())
}

fn gradcam(g: &GlobalArgs, a: &GradcamArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let image = load_image(&a.image)?;
    let labels = if a.label.is_empty() { (1..=NUM_LABELS).collect() } else { a.label.clone() };
    let dir = out_dir(g, "gradcam");
    let stem = a.image.file_stem().map_or("image".into(), |s| s.to_string_lossy().into_owned());
    for index in labels {
        let heatmap = compute_gradcam(&model, &image, index, a.layer.as_deref())?;
        std::fs::create_dir_all(&dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
        let png = dir.join(format!("{stem}_l{index}.png"));
        overlay(&heatmap, &image, &png)?;
        write_json(&png.with_extension("json"), &serde_json::to_value(&heatmap).expect("heatmap serializes"))?;
        let (x, y) = heatmap.argmax_pixel(image.width(), image.height());
        say(
            out,
            &format!(
                "L{index} at {}: peak ({x}, {y}), pre-normalization max {:.6} -> {}",
                heatmap.layer_id,
                heatmap.pre_norm_max,
                png.display()
            ),
        );
    }
    Ok(())
}

fn agreement(g: &GlobalArgs, a: &AgreementArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let label = ArtifactLabel::from_index(a.label)?;
    let (model, _) = load_checkpoint(&a.checkpoint)?;
    let image = load_image(&a.image)?;
    let mask = RegionMask::load(&a.mask, label)?;
    let heatmap = compute_gradcam(&model, &image, a.label, a.layer.as_deref())?;
    let iou = attention_agreement(&heatmap, &mask, a.percentile)?;
    say(out, &format!("{label} agreement (IoU above the {} percentile): {iou:.4}", a.percentile));
    if let Some(dir) = &g.out {
        let record = serde_json::json!({
            "image": a.image,
            "mask": a.mask,
            "label": a.label,
            "layer": heatmap.layer_id,
            "percentile": a.percentile,
            "iou": iou,
        });
        write_json(&dir.join("agreement.json"), &record)?;
    }
    Ok(())
}

fn serve(g: &GlobalArgs, a: &ServeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let mut config = ServiceConfig::new(&a.manifest);
    config.lease_timeout = Duration::from_secs(a.lease_timeout);
    config.checkpoint_every = a.checkpoint_every;
    if let Some(log) = &a.event_log {
        config.event_log = log.clone();
    }
    if let Some(dir) = &g.out {
        config.export_path = dir.join(artifact_annotate::service::EXPORT_FILE);
    }
    let service = Arc::new(AnnotationService::open(config, Arc::new(SystemClock))?);
    let progress = service.progress();
    say(out, &format!("serving {} frames ({} unlabeled) on http://{}", progress.total, progress.unlabeled, a.addr));
    let _ = out.flush();
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Io(e.to_string()))?;
    runtime
        .block_on(artifact_annotate::serve(service, a.addr))
        .map_err(|e| CliError::Io(format!("{}: {e}", a.addr)))
}
