use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::LabelMask;

/// Why a metric took its conventional value instead of being measured.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyFlag {
    /// Neither mask contains the structure: Dice = IoU = 100, HD95 = 0.
    BothEmpty,
    /// Only the prediction is empty: Dice = IoU = 0, HD95 = penalty.
    PredEmpty,
    /// Only the ground truth is empty.
    GtEmpty,
}

impl EmptyFlag {
    pub fn name(self) -> &'static str {
        match self {
            EmptyFlag::BothEmpty => "both_empty",
            EmptyFlag::PredEmpty => "pred_empty",
            EmptyFlag::GtEmpty => "gt_empty",
        }
    }

    fn of(pred_count: usize, gt_count: usize) -> Option<Self> {
        match (pred_count, gt_count) {
            (0, 0) => Some(EmptyFlag::BothEmpty),
            (0, _) => Some(EmptyFlag::PredEmpty),
            (_, 0) => Some(EmptyFlag::GtEmpty),
            _ => None,
        }
    }
}

/// Dice and IoU of one foreground class, in percent.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassOverlap {
    pub class: usize,
    pub dice: f64,
    pub iou: f64,
    pub intersection: usize,
    pub pred_count: usize,
    pub gt_count: usize,
    pub flag: Option<EmptyFlag>,
}

fn check_pair(pred: &LabelMask, gt: &LabelMask) -> Result<()> {
    if (pred.h, pred.w) != (gt.h, gt.w) {
        return Err(Error::shape("metrics", format!("prediction {}x{} vs ground truth {}x{}", pred.h, pred.w, gt.h, gt.w)));
    }
    Ok(())
}

/// `Dice = 2|A n B| / (|A| + |B|)`, `IoU = |A n B| / |A u B|` for classes
/// `1..num_classes`.
pub fn overlap_metrics(pred: &LabelMask, gt: &LabelMask, num_classes: usize) -> Result<Vec<ClassOverlap>> {
    check_pair(pred, gt)?;
    let mut inter = vec![0usize; num_classes];
    let mut pc = vec![0usize; num_classes];
    let mut gc = vec![0usize; num_classes];
    for (&p, &g) in pred.classes.iter().zip(&gt.classes) {
        let (p, g) = (p as usize, g as usize);
        if p >= num_classes || g >= num_classes {
            return Err(Error::InvalidArgument(format!("class id {} out of range for {num_classes} classes", p.max(g))));
        }
        pc[p] += 1;
        gc[g] += 1;
        if p == g {
            inter[p] += 1;
        }
    }
    Ok((1..num_classes)
        .map(|c| {
            let flag = EmptyFlag::of(pc[c], gc[c]);
            let (dice, iou) = if flag == Some(EmptyFlag::BothEmpty) {
                (100.0, 100.0)
            } else {
                let union = pc[c] + gc[c] - inter[c];
                (200.0 * inter[c] as f64 / (pc[c] + gc[c]) as f64, 100.0 * inter[c] as f64 / union as f64)
            };
            ClassOverlap { class: c, dice, iou, intersection: inter[c], pred_count: pc[c], gt_count: gc[c], flag }
        })
        .collect())
}

/// Pixels of `mask` with at least one 4-neighbour that is background or
/// outside the image, as `(row, col)` in row-major order.
pub fn extract_boundary(mask: &[bool], h: usize, w: usize) -> Vec<(usize, usize)> {
    let at = |y: usize, x: usize| mask[y * w + x];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !at(y, x) {
                continue;
            }
            let edge = y == 0 || x == 0 || y + 1 == h || x + 1 == w;
            if edge || !at(y - 1, x) || !at(y + 1, x) || !at(y, x - 1) || !at(y, x + 1) {
                out.push((y, x));
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hd95 {
    /// Millimetres.
    pub value: f64,
    pub flag: Option<EmptyFlag>,
}

/// Distance assigned when exactly one mask is empty: the image diagonal in mm.
pub fn hd95_penalty(h: usize, w: usize, spacing: (f64, f64)) -> f64 {
    let (a, b) = (h as f64 * spacing.0, w as f64 * spacing.1);
    (a * a + b * b).sqrt()
}

/// 1-based nearest rank `ceil(0.95 n)`.
pub fn p95_rank(n: usize) -> usize {
    (95 * n).div_ceil(100)
}

fn directed_p95(from: &[(usize, usize)], to: &[(usize, usize)], spacing: (f64, f64)) -> f64 {
    let mut d: Vec<f64> = from
        .iter()
        .map(|&(ay, ax)| {
            let best = to
                .iter()
                .map(|&(by, bx)| {
                    let dy = ay.abs_diff(by) as f64 * spacing.0;
                    let dx = ax.abs_diff(bx) as f64 * spacing.1;
                    dy * dy + dx * dx
                })
                .fold(f64::INFINITY, f64::min);
            best.sqrt()
        })
        .collect();
    d.sort_by(f64::total_cmp);
    d[p95_rank(d.len()) - 1]
}

/// Symmetric 95th-percentile boundary distance between two binary masks.
pub fn hd95(pred: &[bool], gt: &[bool], h: usize, w: usize, spacing: (f64, f64)) -> Result<Hd95> {
    if pred.len() != h * w || gt.len() != h * w {
        return Err(Error::shape("hd95", format!("masks of {} and {} pixels for {h}x{w}", pred.len(), gt.len())));
    }
    let a = extract_boundary(pred, h, w);
    let b = extract_boundary(gt, h, w);
    if let Some(flag) = EmptyFlag::of(a.len(), b.len()) {
        let value = if flag == EmptyFlag::BothEmpty { 0.0 } else { hd95_penalty(h, w, spacing) };
        return Ok(Hd95 { value, flag: Some(flag) });
    }
    let value = directed_p95(&a, &b, spacing).max(directed_p95(&b, &a, spacing));
    Ok(Hd95 { value, flag: None })
}

/// All metrics of one foreground class on one case.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseClassMetrics {
    pub case: String,
    pub class: usize,
    pub dice: f64,
    pub iou: f64,
    pub hd95: f64,
    pub support: usize,
    pub flag: Option<EmptyFlag>,
}

pub fn case_metrics(case: &str, pred: &LabelMask, gt: &LabelMask, num_classes: usize) -> Result<Vec<CaseClassMetrics>> {
    let overlap = overlap_metrics(pred, gt, num_classes)?;
    overlap
        .into_iter()
        .map(|o| {
            let c = o.class as u8;
            let pm: Vec<bool> = pred.classes.iter().map(|&v| v == c).collect();
            let gm: Vec<bool> = gt.classes.iter().map(|&v| v == c).collect();
            let hd = hd95(&pm, &gm, gt.h, gt.w, gt.spacing)?;
            Ok(CaseClassMetrics {
                case: case.to_string(),
                class: o.class,
                dice: o.dice,
                iou: o.iou,
                hd95: hd.value,
                support: o.gt_count,
                flag: o.flag.or(hd.flag),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub id: usize,
    pub name: String,
    pub dice: f64,
    pub hd95: Option<f64>,
    pub iou: f64,
    /// Ground-truth pixels over all cases.
    pub support: usize,
    /// Number of cases carrying each flag.
    pub flags: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanReport {
    pub dice: f64,
    pub hd95: Option<f64>,
    pub iou: f64,
}

/// Per-class metrics averaged over cases, then over foreground classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassReport>,
    pub mean: MeanReport,
    pub n_cases: usize,
}

impl MetricsReport {
    /// `rows` holds every (case, class) pair; `class_names[c]` names class `c`.
    pub fn aggregate(rows: &[CaseClassMetrics], num_classes: usize, class_names: &[String]) -> Self {
        let mut cases: Vec<&str> = rows.iter().map(|r| r.case.as_str()).collect();
        cases.sort_unstable();
        cases.dedup();
        let per_class: Vec<ClassReport> = (1..num_classes)
            .map(|c| {
                let rs: Vec<_> = rows.iter().filter(|r| r.class == c).collect();
                let n = rs.len() as f64;
                let mean = |f: fn(&CaseClassMetrics) -> f64| if rs.is_empty() { 0.0 } else { rs.iter().map(|r| f(r)).sum::<f64>() / n };
                let mut flags = BTreeMap::new();
                for r in &rs {
                    if let Some(f) = r.flag {
                        *flags.entry(f.name().to_string()).or_insert(0) += 1;
                    }
                }
                ClassReport {
                    id: c,
                    name: class_names.get(c).cloned().unwrap_or_else(|| format!("class{c}")),
                    dice: mean(|r| r.dice),
                    hd95: (!rs.is_empty()).then(|| mean(|r| r.hd95)),
                    iou: mean(|r| r.iou),
                    support: rs.iter().map(|r| r.support).sum(),
                    flags,
                }
            })
            .collect();
        let k = per_class.len().max(1) as f64;
        let hd: Option<Vec<f64>> = per_class.iter().map(|c| c.hd95).collect();
        let mean = MeanReport {
            dice: per_class.iter().map(|c| c.dice).sum::<f64>() / k,
            hd95: hd.filter(|v| !v.is_empty()).map(|v| v.iter().sum::<f64>() / k),
            iou: per_class.iter().map(|c| c.iou).sum::<f64>() / k,
        };
        MetricsReport { per_class, mean, n_cases: cases.len() }
    }
}
