//! Pixel-level confusion counts, the five derived ratios, and report
//! rendering for whole test sets.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::raster_io::{read_gray, GrayRaster, Raster, RasterError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{what}: prediction is {pred:?}, ground truth is {gt:?}")]
    ShapeMismatch {
        what: String,
        pred: (usize, usize),
        gt: (usize, usize),
    },
    #[error("{0}: mask values must be 0/1 or 0/255")]
    NonBinaryInput(String),
    #[error("no ground truth for predicted scene {0}")]
    MissingGt(String),
    #[error("no predictions (*_mask.TIF) found in {0}")]
    NoPredictions(PathBuf),
    #[error("ground truth without a prediction: {}", .0.join(", "))]
    MissingPredictions(Vec<String>),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

/// Cloud is the positive class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            tn: self.tn + o.tn,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
        }
    }
}

impl std::iter::Sum for ConfusionCounts {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |a, b| a + b)
    }
}

/// Counts over two equally long `{0, 1}` slices, from three sums rather than
/// a four-way branch per pixel.
pub fn confusion_slices(pred: &[u8], gt: &[u8]) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(EvalError::ShapeMismatch {
            what: "mask lengths".into(),
            pred: (1, pred.len()),
            gt: (1, gt.len()),
        });
    }
    if pred.iter().chain(gt).any(|&v| v > 1) {
        return Err(EvalError::NonBinaryInput("confusion input".into()));
    }
    let sum = |v: &[u8]| v.iter().map(|&x| u64::from(x)).sum::<u64>();
    let pos_pred = sum(pred);
    let pos_gt = sum(gt);
    let tp: u64 = pred.iter().zip(gt).map(|(&p, &g)| u64::from(p & g)).sum();
    let n = pred.len() as u64;
    Ok(ConfusionCounts {
        tp,
        fp: pos_pred - tp,
        fn_: pos_gt - tp,
        tn: n + tp - pos_pred - pos_gt,
    })
}

pub fn confusion(pred: &Raster<u8>, gt: &Raster<u8>) -> Result<ConfusionCounts> {
    if pred.dims() != gt.dims() {
        return Err(EvalError::ShapeMismatch {
            what: "mask dimensions".into(),
            pred: pred.dims(),
            gt: gt.dims(),
        });
    }
    confusion_slices(pred.data(), gt.data())
}

/// Ratios in `[0, 1]`; `None` where the denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MetricsReport {
    pub jaccard: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub overall_accuracy: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics(c: &ConfusionCounts) -> MetricsReport {
    MetricsReport {
        jaccard: ratio(c.tp, c.tp + c.fn_ + c.fp),
        precision: ratio(c.tp, c.tp + c.fp),
        recall: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        overall_accuracy: ratio(c.tp + c.tn, c.total()),
    }
}

impl MetricsReport {
    pub fn values(&self) -> [Option<f64>; 5] {
        [
            self.jaccard,
            self.precision,
            self.recall,
            self.specificity,
            self.overall_accuracy,
        ]
    }

    /// Mean of each metric over the reports where it is defined.
    pub fn mean(reports: &[MetricsReport]) -> MetricsReport {
        let avg = |i: usize| {
            let defined: Vec<f64> = reports.iter().filter_map(|r| r.values()[i]).collect();
            (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
        };
        MetricsReport {
            jaccard: avg(0),
            precision: avg(1),
            recall: avg(2),
            specificity: avg(3),
            overall_accuracy: avg(4),
        }
    }
}

pub const METRIC_NAMES: [&str; 5] = ["Jaccard", "Precision", "Recall", "Specificity", "Overall"];

/// Percentage with two decimals, or `n/a`.
pub fn percent(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{:.2}", 100.0 * x))
}

/// `Jaccard 60.00  Precision 75.00  Recall 75.00  Specificity 83.33  Overall 80.00`
pub fn render_row(m: &MetricsReport) -> String {
    METRIC_NAMES
        .iter()
        .zip(m.values())
        .map(|(name, v)| format!("{name} {}", percent(v)))
        .collect::<Vec<_>>()
        .join("  ")
}

/// Published results on the 38-Cloud test set, percent, for side-by-side
/// comparison: (method, [jaccard, precision, recall, specificity, overall]).
pub const REFERENCE_ROWS: [(&str, [f64; 5]); 3] = [
    ("FCN (38-Cloud train)", [72.17, 84.59, 81.37, 98.45, 95.23]),
    ("Fmask", [75.16, 77.71, 97.22, 93.96, 94.89]),
    ("Cloud-Net", [78.50, 91.23, 84.85, 98.67, 96.48]),
];

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SceneReport {
    pub scene_id: String,
    pub counts: ConfusionCounts,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TestsetReport {
    pub scenes: Vec<SceneReport>,
    /// From counts pooled over every scene.
    pub global: MetricsReport,
    pub global_counts: ConfusionCounts,
    /// Per-metric mean over scenes where the metric is defined.
    pub scene_mean: MetricsReport,
}

impl TestsetReport {
    pub fn from_scenes(scenes: Vec<SceneReport>) -> Self {
        let global_counts: ConfusionCounts = scenes.iter().map(|s| s.counts).sum();
        let per: Vec<MetricsReport> = scenes.iter().map(|s| s.metrics).collect();
        Self {
            global: metrics(&global_counts),
            global_counts,
            scene_mean: MetricsReport::mean(&per),
            scenes,
        }
    }

    /// Aligned table in the column order Jaccard, Precision, Recall,
    /// Specificity, Overall.
    pub fn render_table(&self) -> String {
        let mut rows: Vec<(String, [String; 5])> = Vec::new();
        let fmt = |m: &MetricsReport| m.values().map(percent);
        for s in &self.scenes {
            rows.push((s.scene_id.clone(), fmt(&s.metrics)));
        }
        rows.push(("global (pooled pixels)".into(), fmt(&self.global)));
        rows.push(("mean over scenes".into(), fmt(&self.scene_mean)));
        let first = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max("Scene".len());
        let mut out = String::new();
        let _ = write!(out, "{:<first$}", "Scene");
        for name in METRIC_NAMES {
            let _ = write!(out, "  {name:>11}");
        }
        out.push('\n');
        for (i, (name, vals)) in rows.iter().enumerate() {
            if i == self.scenes.len() {
                out.push_str(&"-".repeat(first + 5 * 13));
                out.push('\n');
            }
            let _ = write!(out, "{name:<first$}");
            for v in vals {
                let _ = write!(out, "  {v:>11}");
            }
            out.push('\n');
        }
        out.push('\n');
        out.push_str("global: ");
        out.push_str(&render_row(&self.global));
        out.push('\n');
        out
    }

    /// One row per scene plus `global` and `mean` rows; ratios in `[0, 1]`,
    /// empty cells for undefined metrics.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let mut w = csv::Writer::from_path(path).map_err(std::io::Error::other)?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        w.write_record([
            "scene", "tp", "tn", "fp", "fn", "jaccard", "precision", "recall", "specificity", "overall",
        ])
        .map_err(std::io::Error::other)?;
        let mut row = |name: &str, c: Option<&ConfusionCounts>, m: &MetricsReport| {
            let counts = match c {
                Some(c) => [c.tp, c.tn, c.fp, c.fn_].map(|v| v.to_string()),
                None => Default::default(),
            };
            let mut rec: Vec<String> = vec![name.to_string()];
            rec.extend(counts);
            rec.extend(m.values().map(cell));
            w.write_record(&rec).map_err(std::io::Error::other)
        };
        for s in &self.scenes {
            row(&s.scene_id, Some(&s.counts), &s.metrics)?;
        }
        row("global", Some(&self.global_counts), &self.global)?;
        row("mean", None, &self.scene_mean)?;
        w.flush()?;
        Ok(())
    }
}

/// Loads a mask file as `{0, 1}`, accepting `{0, 1}` or `{0, 255}` storage.
pub fn read_binary_mask(path: &Path) -> Result<Raster<u8>> {
    let (dims, values): ((usize, usize), Vec<f64>) = match read_gray(path)? {
        GrayRaster::U8(r) => (r.dims(), r.data().iter().map(|&v| f64::from(v)).collect()),
        GrayRaster::U16(r) => (r.dims(), r.data().iter().map(|&v| f64::from(v)).collect()),
        GrayRaster::F32(r) => (r.dims(), r.data().iter().map(|&v| f64::from(v)).collect()),
    };
    let mut out = Vec::with_capacity(values.len());
    for v in values {
        out.push(if v == 0.0 {
            0
        } else if v == 1.0 || v == 255.0 {
            1
        } else {
            return Err(EvalError::NonBinaryInput(path.display().to_string()));
        });
    }
    Ok(Raster::new(dims.0, dims.1, out)?)
}

fn tif_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("tif") || e.eq_ignore_ascii_case("tiff"))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

/// Finds the GT file for `scene_id`: `<id>.TIF`, `gt_<id>.TIF`, or the
/// single file whose stem ends in `_<id>`.
fn resolve_gt<'a>(gt_files: &'a [PathBuf], scene_id: &str) -> Option<&'a PathBuf> {
    let exact = gt_files
        .iter()
        .find(|p| stem(p) == scene_id || stem(p) == format!("gt_{scene_id}"));
    if exact.is_some() {
        return exact;
    }
    let suffix = format!("_{scene_id}");
    let mut hits = gt_files.iter().filter(|p| stem(p).ends_with(&suffix));
    match (hits.next(), hits.next()) {
        (Some(p), None) => Some(p),
        _ => None,
    }
}

/// Scores every `<scene_id>_mask.TIF` in `pred_dir` against `gt_dir`.
pub fn evaluate_testset(pred_dir: &Path, gt_dir: &Path) -> Result<TestsetReport> {
    let preds: Vec<(String, PathBuf)> = tif_files(pred_dir)?
        .into_iter()
        .filter_map(|p| stem(&p).strip_suffix("_mask").map(|id| (id.to_string(), p.clone())))
        .collect();
    let gt_files = tif_files(gt_dir)?;
    if preds.is_empty() {
        let missing: Vec<String> = gt_files.iter().map(|p| stem(p)).collect();
        if missing.is_empty() {
            return Err(EvalError::NoPredictions(pred_dir.to_path_buf()));
        }
        return Err(EvalError::MissingPredictions(missing));
    }
    let mut pairs = Vec::with_capacity(preds.len());
    for (id, p) in preds {
        let gt = resolve_gt(&gt_files, &id).ok_or_else(|| EvalError::MissingGt(id.clone()))?;
        pairs.push((id, p, gt.clone()));
    }
    let used: BTreeSet<&PathBuf> = pairs.iter().map(|(_, _, g)| g).collect();
    let unmatched: Vec<String> = gt_files.iter().filter(|g| !used.contains(g)).map(|g| stem(g)).collect();
    if !unmatched.is_empty() {
        return Err(EvalError::MissingPredictions(unmatched));
    }
    let scenes: Result<Vec<SceneReport>> = pairs
        .par_iter()
        .map(|(id, p, g)| {
            let pred = read_binary_mask(p)?;
            let gt = read_binary_mask(g)?;
            let counts = confusion(&pred, &gt).map_err(|e| match e {
                EvalError::ShapeMismatch { pred, gt, .. } => EvalError::ShapeMismatch {
                    what: format!("scene {id}"),
                    pred,
                    gt,
                },
                other => other,
            })?;
            Ok(SceneReport {
                scene_id: id.clone(),
                counts,
                metrics: metrics(&counts),
            })
        })
        .collect();
    Ok(TestsetReport::from_scenes(scenes?))
}
