use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::eval::{case_metrics, CaseClassMetrics, LabelMask, MetricsReport};
use crate::network::{load_checkpoint, Model};

use super::data::{Dataset, Sample};
use super::train::{check_compatible, load_prepared, stack_images};

const EVAL_BATCH: usize = 4;

/// Argmax masks of the main logits, one per sample, in input order.
pub fn predict_masks(model: &Model<f32>, samples: &[Sample]) -> Result<Vec<LabelMask>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(EVAL_BATCH) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let classes = model.segment(&stack_images(&refs)?)?;
        for (s, c) in chunk.iter().zip(classes) {
            out.push(LabelMask::with_spacing(s.mask.h, s.mask.w, c, s.mask.spacing)?);
        }
    }
    Ok(out)
}

/// Per-case metrics for aligned `(id, prediction, ground truth)` triples.
pub fn evaluate_masks(
    cases: &[(&str, &LabelMask, &LabelMask)],
    num_classes: usize,
    class_names: &[String],
) -> Result<(Vec<CaseClassMetrics>, MetricsReport)> {
    let mut rows = Vec::new();
    for &(id, pred, gt) in cases {
        rows.extend(case_metrics(id, pred, gt, num_classes)?);
    }
    let report = MetricsReport::aggregate(&rows, num_classes, class_names);
    Ok((rows, report))
}

pub fn evaluate_model(model: &Model<f32>, samples: &[Sample], class_names: &[String]) -> Result<(Vec<CaseClassMetrics>, MetricsReport)> {
    let preds = predict_masks(model, samples)?;
    let cases: Vec<_> = samples.iter().zip(&preds).map(|(s, p)| (s.id.as_str(), p, &s.mask)).collect();
    evaluate_masks(&cases, model.config.num_classes, class_names)
}

/// `case,class,dice,iou,hd95,support,flag` with one row per (case, class).
pub fn metrics_csv(rows: &[CaseClassMetrics]) -> String {
    let mut s = String::from("case,class,dice,iou,hd95,support,flag\n");
    for r in rows {
        let flag = r.flag.map(|f| f.name()).unwrap_or("");
        writeln!(s, "{},{},{},{},{},{},{}", r.case, r.class, r.dice, r.iou, r.hd95, r.support, flag).unwrap();
    }
    s
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes the JSON report to `report_path` and the per-case CSV next to it
/// with a `.csv` extension.
pub fn write_report(report_path: &Path, report: &MetricsReport, rows: &[CaseClassMetrics]) -> Result<()> {
    let mut json = serde_json::to_vec_pretty(report)?;
    json.push(b'\n');
    write(report_path, &json)?;
    write(&report_path.with_extension("csv"), metrics_csv(rows).as_bytes())
}

pub fn run_evaluation(checkpoint: impl AsRef<Path>, dataset_dir: impl AsRef<Path>, split: &str, report_path: impl AsRef<Path>) -> Result<MetricsReport> {
    let ckpt = load_checkpoint(checkpoint)?;
    let data = Dataset::open(dataset_dir)?;
    check_compatible(&ckpt.model.config, &data)?;
    let samples = load_prepared(&data, split)?;
    if samples.is_empty() {
        return Err(Error::Data(format!("split '{split}' is empty")));
    }
    let (rows, report) = evaluate_model(&ckpt.model, &samples, &data.manifest.class_names)?;
    write_report(report_path.as_ref(), &report, &rows)?;
    Ok(report)
}
