//! Mini-batch training with per-epoch loss tracking and best-validation
//! checkpointing.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use candle_core::{DType, Device, Tensor};
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use image::{Rgb, RgbImage};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{write_atomic, DatasetManifest, Subset};
use crate::error::{Error, Result};
use crate::labels::NUM_LABELS;
use crate::models::{build_classifier, multilabel_loss, save_checkpoint, BackboneSpec, ClassifierModel, Preprocessing};

pub const CHECKPOINT_FILE: &str = "best.safetensors";
pub const RUN_FILE: &str = "train_run.json";
const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub backbone: BackboneSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub threshold: f32,
    pub loss_weights: Option<[f64; NUM_LABELS]>,
    /// Mirror each training image left to right with probability 1/2.
    #[serde(default)]
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            backbone: BackboneSpec::tiny(64),
            epochs: 20,
            batch_size: 32,
            learning_rate: 1e-3,
            seed: 7,
            threshold: 0.5,
            loss_weights: None,
            augment: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Parameter("epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be positive".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Parameter(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Parameter(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        if let Some(w) = &self.loss_weights {
            if w.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
                return Err(Error::Parameter(format!("loss weights {w:?} must be positive")));
            }
        }
        self.backbone.validate()
    }
}

/// Optimizer name and hyperparameters, recorded with every run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerInfo {
    pub name: String,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl OptimizerInfo {
    pub fn adam(learning_rate: f64) -> Self {
        OptimizerInfo {
            name: "adam".into(),
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    fn params(&self) -> ParamsAdamW {
        ParamsAdamW {
            lr: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

impl EpochLoss {
    /// Positive values mean validation loss above training loss.
    pub fn generalization_gap(&self) -> f64 {
        self.val_loss - self.train_loss
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub config: TrainConfig,
    pub optimizer: OptimizerInfo,
    pub loss_history: Vec<EpochLoss>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub checkpoint_path: PathBuf,
    pub wall_time_s: f64,
}

impl TrainRun {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Training(e.to_string()))?;
        write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Training(format!("{}: {e}", path.display())))
    }
}

/// Images and targets of one subset, preprocessed into tensors.
pub struct LoadedSplit {
    pub frame_ids: Vec<String>,
    /// N×3×R×R.
    pub inputs: Tensor,
    /// N×4 with 0/1 entries.
    pub targets: Tensor,
}

impl LoadedSplit {
    pub fn len(&self) -> usize {
        self.frame_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frame_ids.is_empty()
    }
}

pub fn load_image(path: &Path) -> Result<RgbImage> {
    Ok(image::open(path).map_err(|e| Error::image(path, e))?.to_rgb8())
}

/// Loads the labeled frames assigned to `subset`, in manifest order.
pub fn load_split(
    manifest: &DatasetManifest,
    subset: Subset,
    data_dir: &Path,
    preprocessing: &Preprocessing,
) -> Result<LoadedSplit> {
    let frames = manifest.subset(subset)?;
    let r = preprocessing.resolution as usize;
    let mut values = Vec::with_capacity(frames.len() * 3 * r * r);
    let mut targets = Vec::with_capacity(frames.len() * NUM_LABELS);
    let mut frame_ids = Vec::with_capacity(frames.len());
    for f in frames {
        let labels = f
            .labels
            .ok_or_else(|| Error::Manifest(format!("frame {} is in a split but unlabeled", f.frame_id)))?;
        let path = data_dir.join(&f.image_path);
        values.extend(preprocessing.image_values(&load_image(&path)?)?);
        targets.extend(labels.as_f32());
        frame_ids.push(f.frame_id.clone());
    }
    let n = frame_ids.len();
    Ok(LoadedSplit {
        frame_ids,
        inputs: Tensor::from_vec(values, (n, 3, r, r), &Device::Cpu)?,
        targets: Tensor::from_vec(targets, (n, NUM_LABELS), &Device::Cpu)?,
    })
}

fn index_tensor(idx: &[usize]) -> Result<Tensor> {
    let v: Vec<u32> = idx.iter().map(|&i| i as u32).collect();
    Ok(Tensor::from_vec(v, idx.len(), &Device::Cpu)?)
}

/// Mean loss over every element of `data` in inference mode.
pub fn dataset_loss(model: &ClassifierModel, data: &LoadedSplit, weights: Option<&[f64; NUM_LABELS]>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Evaluation("empty split".into()));
    }
    let mut total = 0.0;
    let n = data.len();
    let mut start = 0;
    while start < n {
        let len = EVAL_BATCH.min(n - start);
        let x = data.inputs.narrow(0, start, len)?;
        let y = data.targets.narrow(0, start, len)?;
        let logits = model.forward_t(&x, false)?.to_dtype(DType::F64)?;
        let loss = multilabel_loss(&logits, &y, weights)?.to_scalar::<f64>()?;
        total += loss * len as f64;
        start += len;
    }
    Ok(total / n as f64)
}

/// One optimizer step's worth of training data, reported to observers.
#[derive(Clone, Debug)]
pub struct BatchEvent<'a> {
    pub epoch: usize,
    pub batch: usize,
    pub frame_ids: Vec<&'a str>,
    pub loss: f64,
}

/// Trains on the TRAIN subset, validates on VAL after each epoch and keeps
/// the best-validation checkpoint in `out_dir`.
pub fn train(config: &TrainConfig, manifest: &DatasetManifest, data_dir: &Path, out_dir: &Path) -> Result<TrainRun> {
    train_observed(config, manifest, data_dir, out_dir, &mut |_| {})
}

/// As [`train`], calling `observer` with the frames behind every gradient step.
pub fn train_observed(
    config: &TrainConfig,
    manifest: &DatasetManifest,
    data_dir: &Path,
    out_dir: &Path,
    observer: &mut dyn FnMut(&BatchEvent),
) -> Result<TrainRun> {
    config.validate()?;
    let started = Instant::now();
    let model = build_classifier(&config.backbone, config.seed)?;
    let pre = model.preprocessing().clone();
    let train_set = load_split(manifest, Subset::Train, data_dir, &pre)?;
    let val_set = load_split(manifest, Subset::Val, data_dir, &pre)?;
    if train_set.is_empty() {
        return Err(Error::Training("TRAIN split is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Training("VAL split is empty".into()));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);

    let optimizer = OptimizerInfo::adam(config.learning_rate);
    let mut opt = AdamW::new(model.params().trainable(), optimizer.params())?;
    let weights = config.loss_weights.as_ref();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let n_train = train_set.len();
    // Row i + n of `pool` is row i mirrored, so one gather builds a batch.
    let pool = if config.augment {
        let width = train_set.inputs.dim(3)?;
        let reversed: Vec<usize> = (0..width).rev().collect();
        let mirrored = train_set.inputs.index_select(&index_tensor(&reversed)?, 3)?;
        Tensor::cat(&[&train_set.inputs, &mirrored], 0)?
    } else {
        train_set.inputs.clone()
    };
    let mut order: Vec<usize> = (0..n_train).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64)> = None;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (batch, idx) in order.chunks(config.batch_size).enumerate() {
            let rows: Vec<usize> = idx
                .iter()
                .map(|&i| if config.augment && rng.random_bool(0.5) { i + n_train } else { i })
                .collect();
            let x = pool.index_select(&index_tensor(&rows)?, 0)?;
            let y = train_set.targets.index_select(&index_tensor(idx)?, 0)?;
            let logits = model.forward_t(&x, true)?;
            let loss = multilabel_loss(&logits, &y, weights)?;
            let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
            if !value.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            opt.backward_step(&loss)?;
            observer(&BatchEvent {
                epoch,
                batch,
                frame_ids: idx.iter().map(|&i| train_set.frame_ids[i].as_str()).collect(),
                loss: value,
            });
            total += value * idx.len() as f64;
        }
        let train_loss = total / train_set.len() as f64;
        let val_loss = dataset_loss(&model, &val_set, weights)?;
        if !val_loss.is_finite() {
            return Err(Error::Training(format!("validation loss is not finite at epoch {epoch}")));
        }
        tracing::info!(epoch, train_loss, val_loss, "epoch finished");
        history.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
        if best.is_none_or(|(_, b)| val_loss < b) {
            best = Some((epoch, val_loss));
            let mut extra = BTreeMap::new();
            extra.insert("epoch".to_string(), epoch.to_string());
            extra.insert("val_loss".to_string(), format!("{val_loss:?}"));
            save_checkpoint(&model, &checkpoint_path, &extra)?;
        }
    }

    let (best_epoch, best_val_loss) = best.expect("epochs is positive");
    let run = TrainRun {
        config: config.clone(),
        optimizer,
        loss_history: history,
        best_epoch,
        best_val_loss,
        checkpoint_path,
        wall_time_s: started.elapsed().as_secs_f64(),
    };
    run.save(&out_dir.join(RUN_FILE))?;
    Ok(run)
}

/// Writes the per-epoch loss table as CSV at `path` and a line plot next to
/// it (same stem, `.png`). Returns both paths; the table is authoritative.
pub fn export_loss_curves(run: &TrainRun, path: &Path) -> Result<(PathBuf, PathBuf)> {
    let mut csv = String::from("epoch,train_loss,val_loss\n");
    for e in &run.loss_history {
        csv.push_str(&format!("{},{:.9},{:.9}\n", e.epoch, e.train_loss, e.val_loss));
    }
    write_atomic(path, csv.as_bytes())?;
    let plot_path = path.with_extension("png");
    render_loss_plot(&run.loss_history)
        .save(&plot_path)
        .map_err(|e| Error::image(&plot_path, e))?;
    Ok((path.to_path_buf(), plot_path))
}

pub fn read_loss_table(path: &Path) -> Result<Vec<EpochLoss>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, what: &str| Error::Training(format!("{}:{line}: {what}", path.display()));
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, "epoch,train_loss,val_loss")) => {}
        _ => return Err(bad(1, "missing header")),
    }
    lines
        .map(|(i, line)| {
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 3 {
                return Err(bad(i + 1, "expected 3 columns"));
            }
            Ok(EpochLoss {
                epoch: cols[0].parse().map_err(|_| bad(i + 1, "bad epoch"))?,
                train_loss: cols[1].parse().map_err(|_| bad(i + 1, "bad train_loss"))?,
                val_loss: cols[2].parse().map_err(|_| bad(i + 1, "bad val_loss"))?,
            })
        })
        .collect()
}

const PLOT_W: u32 = 640;
const PLOT_H: u32 = 400;
const MARGIN: i64 = 40;
const TRAIN_COLOR: Rgb<u8> = Rgb([31, 119, 180]);
const VAL_COLOR: Rgb<u8> = Rgb([255, 127, 14]);

fn draw_line(img: &mut RgbImage, (x0, y0): (i64, i64), (x1, y1): (i64, i64), color: Rgb<u8>) {
    let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
    let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        for (ox, oy) in [(0, 0), (1, 0), (0, 1)] {
            let (px, py) = (x + ox, y + oy);
            if px >= 0 && py >= 0 && px < img.width() as i64 && py < img.height() as i64 {
                img.put_pixel(px as u32, py as u32, color);
            }
        }
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Train (blue) and validation (orange) loss against epoch, y axis from 0.
pub fn render_loss_plot(history: &[EpochLoss]) -> RgbImage {
    let mut img = RgbImage::from_pixel(PLOT_W, PLOT_H, Rgb([255, 255, 255]));
    let axis = Rgb([0, 0, 0]);
    let (left, right) = (MARGIN, PLOT_W as i64 - MARGIN);
    let (top, bottom) = (MARGIN, PLOT_H as i64 - MARGIN);
    draw_line(&mut img, (left, bottom), (right, bottom), axis);
    draw_line(&mut img, (left, bottom), (left, top), axis);
    let y_max = history
        .iter()
        .flat_map(|e| [e.train_loss, e.val_loss])
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let n = history.len().max(2) - 1;
    let point = |i: usize, v: f64| -> (i64, i64) {
        let x = left + ((right - left) as f64 * i as f64 / n as f64).round() as i64;
        let y = bottom - ((bottom - top) as f64 * (v / y_max).clamp(0.0, 1.0)).round() as i64;
        (x, y)
    };
    for (color, value) in [
        (TRAIN_COLOR, (|e: &EpochLoss| e.train_loss) as fn(&EpochLoss) -> f64),
        (VAL_COLOR, |e: &EpochLoss| e.val_loss),
    ] {
        let pts: Vec<_> = history.iter().enumerate().map(|(i, e)| point(i, value(e))).collect();
        for w in pts.windows(2) {
            draw_line(&mut img, w[0], w[1], color);
        }
        if let [only] = pts.as_slice() {
            draw_line(&mut img, *only, *only, color);
        }
    }
    img
}
