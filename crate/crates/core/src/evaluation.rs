//! Per-label accuracy, evaluation reports and results tables.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{write_atomic, DatasetManifest, Subset};
use crate::error::{Error, Result};
use crate::labels::{LabelVector, NUM_LABELS};
use crate::models::ClassifierModel;
use crate::training::load_image;

const PREDICT_BATCH: usize = 64;

/// Fraction of rows where prediction and truth agree, per label.
pub fn per_label_accuracy(predictions: &[LabelVector], truths: &[LabelVector]) -> Result<[f64; NUM_LABELS]> {
    let correct = per_label_correct(predictions, truths)?;
    let n = predictions.len() as f64;
    Ok(correct.map(|c| c as f64 / n))
}

/// Per-label count of agreeing rows.
pub fn per_label_correct(predictions: &[LabelVector], truths: &[LabelVector]) -> Result<[usize; NUM_LABELS]> {
    if predictions.len() != truths.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Contract("no rows to score".into()));
    }
    let mut correct = [0usize; NUM_LABELS];
    for (p, t) in predictions.iter().zip(truths) {
        for (i, c) in correct.iter_mut().enumerate() {
            *c += usize::from(p.bits()[i] == t.bits()[i]);
        }
    }
    Ok(correct)
}

/// Fraction of rows where all four labels agree. A stricter, secondary metric.
pub fn subset_accuracy(predictions: &[LabelVector], truths: &[LabelVector]) -> Result<f64> {
    per_label_correct(predictions, truths)?;
    let exact = predictions.iter().zip(truths).filter(|(p, t)| p == t).count();
    Ok(exact as f64 / predictions.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsReport {
    pub model_name: String,
    pub per_label_accuracy: [f64; NUM_LABELS],
    pub mean_accuracy: f64,
    pub n_eval: usize,
    pub threshold: f32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subset_accuracy: Option<f64>,
    /// A mean published elsewhere for the same row, compared at display
    /// precision when rendering.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_mean_accuracy: Option<f64>,
}

fn check_unit(what: &str, v: f64) -> Result<()> {
    if v.is_nan() || !(0.0..=1.0).contains(&v) {
        return Err(Error::Report(format!("{what} {v} outside [0, 1]")));
    }
    Ok(())
}

/// Arithmetic mean of the four values, summed in label order.
pub fn mean_of(values: &[f64; NUM_LABELS]) -> f64 {
    values.iter().sum::<f64>() / NUM_LABELS as f64
}

impl MetricsReport {
    pub fn new(model_name: &str, per_label_accuracy: [f64; NUM_LABELS], n_eval: usize, threshold: f32) -> Result<Self> {
        let r = MetricsReport {
            model_name: model_name.to_string(),
            per_label_accuracy,
            mean_accuracy: mean_of(&per_label_accuracy),
            n_eval,
            threshold,
            subset_accuracy: None,
            reference_mean_accuracy: None,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, a) in self.per_label_accuracy.iter().enumerate() {
            check_unit(&format!("label {} accuracy", i + 1), *a)?;
        }
        check_unit("mean accuracy", self.mean_accuracy)?;
        if self.mean_accuracy != mean_of(&self.per_label_accuracy) {
            return Err(Error::Report(format!(
                "{}: mean {} is not the mean of the per-label accuracies",
                self.model_name, self.mean_accuracy
            )));
        }
        if let Some(s) = self.subset_accuracy {
            check_unit("subset accuracy", s)?;
        }
        if let Some(m) = self.reference_mean_accuracy {
            check_unit("reference mean", m)?;
        }
        if self.n_eval == 0 {
            return Err(Error::Report("n_eval must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Report(format!("threshold {} outside (0, 1)", self.threshold)));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Report(e.to_string()))?;
        write_atomic(path, json.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let r: MetricsReport =
            serde_json::from_str(&text).map_err(|e| Error::Report(format!("{}: {e}", path.display())))?;
        r.validate()?;
        Ok(r)
    }
}

/// Predicts every labeled frame of `subset` and scores it.
pub fn evaluate(
    model: &ClassifierModel,
    manifest: &DatasetManifest,
    data_dir: &Path,
    subset: Subset,
    threshold: f32,
) -> Result<MetricsReport> {
    if manifest.taxonomy_version != model.taxonomy_version() {
        return Err(Error::Evaluation(format!(
            "manifest taxonomy {:?} does not match model taxonomy {:?}",
            manifest.taxonomy_version,
            model.taxonomy_version()
        )));
    }
    let frames = manifest.subset(subset)?;
    if frames.is_empty() {
        return Err(Error::Evaluation(format!("{subset:?} split is empty")));
    }
    let mut predictions = Vec::with_capacity(frames.len());
    let mut truths = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(PREDICT_BATCH) {
        let images = chunk
            .iter()
            .map(|f| load_image(&data_dir.join(&f.image_path)))
            .collect::<Result<Vec<_>>>()?;
        for (f, p) in chunk.iter().zip(model.predict_batch(&images, threshold)?) {
            predictions.push(p.labels);
            truths.push(f.labels.ok_or_else(|| Error::Evaluation(format!("frame {} is unlabeled", f.frame_id)))?);
        }
    }
    let mut report = MetricsReport::new(
        model.spec().architecture.name(),
        per_label_accuracy(&predictions, &truths)?,
        predictions.len(),
        threshold,
    )?;
    report.subset_accuracy = Some(subset_accuracy(&predictions, &truths)?);
    Ok(report)
}

/// Round-half-up of a percentage to hundredths, as an integer count of
/// hundredths. Decided on the decimal expansion, so 93.365 becomes 9337
/// even though the nearest double lies slightly below it.
pub fn percent_hundredths(fraction: f64) -> i64 {
    let text = format!("{:.12}", fraction * 100.0);
    let (int, frac) = text.split_once('.').expect("fixed-point format has a point");
    let negative = int.starts_with('-');
    let int: i64 = int.trim_start_matches('-').parse().expect("digits");
    let digits = frac.as_bytes();
    let cents = (digits[0] - b'0') as i64 * 10 + (digits[1] - b'0') as i64;
    let round_up = digits[2] >= b'5';
    let v = int * 100 + cents + i64::from(round_up);
    if negative {
        -v
    } else {
        v
    }
}

pub fn format_percent(fraction: f64) -> String {
    let h = percent_hundredths(fraction);
    format!("{}.{:02}", h / 100, h % 100)
}

/// Notes for rows whose reference mean disagrees with the computed one at
/// display precision.
pub fn discrepancy_notes(reports: &[MetricsReport]) -> Vec<String> {
    reports
        .iter()
        .filter_map(|r| {
            let reference = r.reference_mean_accuracy?;
            let (ours, theirs) = (percent_hundredths(r.mean_accuracy), percent_hundredths(reference));
            (ours != theirs).then(|| {
                format!(
                    "{}: mean of the per-label accuracies is {:.4}% (shown as {}), reference gives {}",
                    r.model_name,
                    r.mean_accuracy * 100.0,
                    format_percent(r.mean_accuracy),
                    format_percent(reference)
                )
            })
        })
        .collect()
}

/// Display values (hundredths) of each row: four labels then the mean.
fn display_rows(reports: &[MetricsReport]) -> Vec<[i64; NUM_LABELS + 1]> {
    reports
        .iter()
        .map(|r| {
            let mut row = [0; NUM_LABELS + 1];
            for (dst, a) in row.iter_mut().zip(r.per_label_accuracy) {
                *dst = percent_hundredths(a);
            }
            row[NUM_LABELS] = percent_hundredths(r.mean_accuracy);
            row
        })
        .collect()
}

/// Per column, which rows hold the maximum display value (ties all marked).
fn column_maxima(rows: &[[i64; NUM_LABELS + 1]]) -> Vec<[bool; NUM_LABELS + 1]> {
    let mut best = [i64::MIN; NUM_LABELS + 1];
    for row in rows {
        for (b, v) in best.iter_mut().zip(row) {
            *b = (*b).max(*v);
        }
    }
    rows.iter().map(|row| std::array::from_fn(|c| row[c] == best[c])).collect()
}

fn cell(h: i64) -> String {
    format!("{}.{:02}", h / 100, h % 100)
}

fn check_reports(reports: &[MetricsReport]) -> Result<()> {
    if reports.is_empty() {
        return Err(Error::Report("no reports to tabulate".into()));
    }
    reports.iter().try_for_each(MetricsReport::validate)
}

/// Markdown table: Model, Label 1-4 (%), Mean (%); per-column maxima in bold.
pub fn render_markdown(reports: &[MetricsReport]) -> Result<String> {
    check_reports(reports)?;
    let rows = display_rows(reports);
    let marks = column_maxima(&rows);
    let mut out = String::from("| Model | Label 1 (%) | Label 2 (%) | Label 3 (%) | Label 4 (%) | Mean (%) |\n");
    out.push_str("|---|---:|---:|---:|---:|---:|\n");
    for ((r, row), mark) in reports.iter().zip(&rows).zip(&marks) {
        out.push_str(&format!("| {} |", r.model_name));
        for (v, m) in row.iter().zip(mark) {
            if *m {
                out.push_str(&format!(" **{}** |", cell(*v)));
            } else {
                out.push_str(&format!(" {} |", cell(*v)));
            }
        }
        out.push('\n');
    }
    let notes = discrepancy_notes(reports);
    if !notes.is_empty() {
        out.push_str("\nNotes:\n");
        for n in notes {
            let _ = writeln!(out, "- {n}");
        }
    }
    Ok(out)
}

/// LaTeX tabular rows (`name & v1 & ... & mean \\`) with `\textbf` maxima.
pub fn render_latex_rows(reports: &[MetricsReport]) -> Result<Vec<String>> {
    check_reports(reports)?;
    let rows = display_rows(reports);
    let marks = column_maxima(&rows);
    Ok(reports
        .iter()
        .zip(&rows)
        .zip(&marks)
        .map(|((r, row), mark)| {
            let cells: Vec<String> = row
                .iter()
                .zip(mark)
                .map(|(v, m)| if *m { format!("\\textbf{{{}}}", cell(*v)) } else { cell(*v) })
                .collect();
            format!("{} & {} \\\\", r.model_name, cells.join(" & "))
        })
        .collect())
}

#[derive(Serialize)]
struct TableRecord<'a> {
    reports: &'a [MetricsReport],
    display_percent: Vec<Vec<String>>,
    column_max: Vec<[bool; NUM_LABELS + 1]>,
    notes: Vec<String>,
}

/// Writes the Markdown table to `path` and a JSON companion with exact
/// values next to it (same stem, `.json`). Returns both paths.
pub fn results_table(reports: &[MetricsReport], path: &Path) -> Result<(PathBuf, PathBuf)> {
    let markdown = render_markdown(reports)?;
    let rows = display_rows(reports);
    let record = TableRecord {
        reports,
        display_percent: rows.iter().map(|r| r.iter().map(|v| cell(*v)).collect()).collect(),
        column_max: column_maxima(&rows),
        notes: discrepancy_notes(reports),
    };
    let json = serde_json::to_string_pretty(&record).map_err(|e| Error::Report(e.to_string()))?;
    write_atomic(path, markdown.as_bytes())?;
    let json_path = path.with_extension("json");
    write_atomic(&json_path, json.as_bytes())?;
    Ok((path.to_path_buf(), json_path))
}
