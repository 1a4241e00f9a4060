//! Confusion-matrix metrics, multi-seed aggregation and report rendering.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data_model::{LabelTile, SampleTriple};
use crate::error::{Error, Result};
use crate::ingestion::{load_samples, read_manifest, CLASS_NAMES};
use crate::segmentation_trainer::read_predictions;

/// `counts[i * C + j]`: pixels with ground truth `i` predicted as `j`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn accumulate(&mut self, pred: &LabelTile, gt: &LabelTile) -> Result<()> {
        self.accumulate_masked(pred, gt, None)
    }

    /// Count only pixels whose mask entry is true.
    pub fn accumulate_masked(&mut self, pred: &LabelTile, gt: &LabelTile, mask: Option<&[bool]>) -> Result<()> {
        if pred.hw() != gt.hw() {
            return Err(Error::shape("prediction", format!("{:?}", gt.hw()), format!("{:?}", pred.hw())));
        }
        if let Some(m) = mask {
            if m.len() != gt.data().len() {
                return Err(Error::shape("evaluation mask", gt.data().len(), m.len()));
            }
        }
        let c = self.classes;
        for (k, (&g, &p)) in gt.data().iter().zip(pred.data()).enumerate() {
            if mask.is_some_and(|m| !m[k]) {
                continue;
            }
            for v in [g, p] {
                if v as usize >= c {
                    return Err(Error::Range {
                        field: "label".into(),
                        value: v as f64,
                        min: 0.0,
                        max: (c - 1) as f64,
                    });
                }
            }
            self.counts[g as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::shape("confusion matrix classes", self.classes, other.classes));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        Ok(())
    }

    /// `(tp, fp, fn)` of class `c`.
    fn outcomes(&self, c: usize) -> (u64, u64, u64) {
        let tp = self.get(c, c);
        let predicted: u64 = (0..self.classes).map(|i| self.get(i, c)).sum();
        let actual: u64 = (0..self.classes).map(|j| self.get(c, j)).sum();
        (tp, predicted - tp, actual - tp)
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `TP / (TP + FP + FN)` per class; 0 for classes absent from both maps.
pub fn iou_per_class(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.classes)
        .map(|c| {
            let (tp, fp, fn_) = cm.outcomes(c);
            ratio(tp, tp + fp + fn_)
        })
        .collect()
}

/// Harmonic mean of precision and recall per class; 0 when both vanish.
/// Evaluated as `2 TP / (2 TP + FP + FN)`, which is the same quantity
/// computed from integer counts in a single division.
pub fn f1_per_class(cm: &ConfusionMatrix) -> Vec<f64> {
    (0..cm.classes)
        .map(|c| {
            let (tp, fp, fn_) = cm.outcomes(c);
            ratio(2 * tp, 2 * tp + fp + fn_)
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Metrics of one run (or the mean of several, see [`aggregate_seeds`]).
/// All values are fractions in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub class_names: Vec<String>,
    pub iou: Vec<f64>,
    pub f1: Vec<f64>,
    pub miou: f64,
    /// Mean of the per-class F1 scores.
    pub mean_f1: f64,
    pub pixels: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_seed: Vec<SeedMetrics>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedMetrics {
    pub seed: Option<u64>,
    pub iou: Vec<f64>,
    pub f1: Vec<f64>,
    pub miou: f64,
    pub mean_f1: f64,
}

pub fn class_names(classes: usize) -> Vec<String> {
    (0..classes)
        .map(|c| CLASS_NAMES.get(c).map_or_else(|| format!("class {c}"), |s| s.to_string()))
        .collect()
}

impl EvalReport {
    pub fn from_matrix(cm: &ConfusionMatrix) -> Self {
        let iou = iou_per_class(cm);
        let f1 = f1_per_class(cm);
        EvalReport {
            class_names: class_names(cm.classes),
            miou: mean(&iou),
            mean_f1: mean(&f1),
            iou,
            f1,
            pixels: cm.total(),
            per_seed: Vec::new(),
        }
    }

    pub fn seed_metrics(&self, seed: Option<u64>) -> SeedMetrics {
        SeedMetrics {
            seed,
            iou: self.iou.clone(),
            f1: self.f1.clone(),
            miou: self.miou,
            mean_f1: self.mean_f1,
        }
    }

    /// Fixed-width table of per-class IoU and F1 (percent) plus the overall row.
    pub fn render_table(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{title}");
        let _ = writeln!(s, "{:<16} {:>8} {:>8}", "class", "IoU", "F1");
        for (c, name) in self.class_names.iter().enumerate() {
            let _ = writeln!(s, "{:<16} {:>8.2} {:>8.2}", name, 100.0 * self.iou[c], 100.0 * self.f1[c]);
        }
        let _ = writeln!(s, "{:<16} {:>8.2} {:>8.2}", "overall", 100.0 * self.miou, 100.0 * self.mean_f1);
        let _ = writeln!(s, "(overall: mIoU and mean of per-class F1 over {} classes)", self.class_names.len());
        if !self.per_seed.is_empty() {
            for m in &self.per_seed {
                let seed = m.seed.map_or_else(|| "-".to_string(), |v| v.to_string());
                let _ = writeln!(s, "seed {seed:<11} mIoU {:>6.2}  F1 {:>6.2}", 100.0 * m.miou, 100.0 * m.mean_f1);
            }
        }
        s
    }
}

/// Mean of every metric over runs; the individual runs are kept in `per_seed`.
pub fn aggregate_seeds(reports: &[(Option<u64>, EvalReport)]) -> Result<EvalReport> {
    let (_, first) = reports.first().ok_or_else(|| Error::Data("no reports to aggregate".into()))?;
    let c = first.iou.len();
    if let Some((_, r)) = reports.iter().find(|(_, r)| r.iou.len() != c || r.f1.len() != c) {
        return Err(Error::shape("report classes", c, r.iou.len()));
    }
    let n = reports.len() as f64;
    let avg = |f: &dyn Fn(&EvalReport) -> f64| reports.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
    Ok(EvalReport {
        class_names: first.class_names.clone(),
        iou: (0..c).map(|k| avg(&|r| r.iou[k])).collect(),
        f1: (0..c).map(|k| avg(&|r| r.f1[k])).collect(),
        miou: avg(&|r| r.miou),
        mean_f1: avg(&|r| r.mean_f1),
        pixels: reports.iter().map(|(_, r)| r.pixels).sum(),
        per_seed: reports.iter().map(|(s, r)| r.seed_metrics(*s)).collect(),
    })
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    match s.len() {
        0 => f64::NAN,
        n if n % 2 == 1 => s[n / 2],
        n => 0.5 * (s[n / 2 - 1] + s[n / 2]),
    }
}

/// One mask per sample so that overlapping tiles of a scene count every
/// scene pixel once; the first tile in the given order claims a pixel.
/// Samples without an origin are counted in full.
pub fn dedup_masks(samples: &[SampleTriple]) -> Vec<Vec<bool>> {
    let mut claimed: HashMap<&str, Vec<bool>> = HashMap::new();
    samples
        .iter()
        .map(|s| {
            let (h, w) = s.image.hw();
            let Some(o) = &s.origin else { return vec![true; h * w] };
            let scene = claimed
                .entry(o.scene_id.as_str())
                .or_insert_with(|| vec![false; o.scene_height * o.scene_width]);
            let mut mask = vec![false; h * w];
            for y in 0..h {
                for x in 0..w {
                    let (sy, sx) = (o.row + y, o.col + x);
                    if sy < o.scene_height && sx < o.scene_width && !scene[sy * o.scene_width + sx] {
                        scene[sy * o.scene_width + sx] = true;
                        mask[y * w + x] = true;
                    }
                }
            }
            mask
        })
        .collect()
}

/// Score predictions against labeled samples matched by tile id.
pub fn evaluate(preds: &[(String, LabelTile)], gt: &[SampleTriple]) -> Result<ConfusionMatrix> {
    let classes = gt.first().ok_or_else(|| Error::Data("ground-truth set is empty".into()))?.domain.class_count;
    let by_id: HashMap<&str, &LabelTile> = preds.iter().map(|(id, l)| (id.as_str(), l)).collect();
    let masks = dedup_masks(gt);
    let mut cm = ConfusionMatrix::new(classes);
    for (s, mask) in gt.iter().zip(&masks) {
        let label = s
            .label
            .as_ref()
            .ok_or_else(|| Error::Data(format!("ground-truth tile `{}` has no label", s.tile_id)))?;
        let pred = by_id
            .get(s.tile_id.as_str())
            .ok_or_else(|| Error::Data(format!("no prediction for tile `{}`", s.tile_id)))?;
        cm.accumulate_masked(pred, label, Some(mask))?;
    }
    Ok(cm)
}

/// Evaluate a prediction directory against a ground-truth manifest; writes
/// the JSON record to `out` and the text table next to it.
pub fn evaluate_dir(pred_dir: &Path, gt_manifest: &Path, out: &Path) -> Result<EvalReport> {
    let m = read_manifest(gt_manifest)?;
    let gt = load_samples(&m, gt_manifest)?;
    let preds = read_predictions(pred_dir)?;
    let report = EvalReport::from_matrix(&evaluate(&preds, &gt)?);
    write_report(&report, out, &format!("evaluation of {}", pred_dir.display()))?;
    Ok(report)
}

pub fn write_report(report: &EvalReport, out: &Path, title: &str) -> Result<()> {
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let json = serde_json::to_string_pretty(report).map_err(|e| Error::Schema(e.to_string()))?;
    std::fs::write(out, json)?;
    std::fs::write(out.with_extension("txt"), report.render_table(title))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_model::{DepthStats, DomainRole, DomainSpec, ImageTile, TileOrigin};
    use std::sync::Arc;

    fn tile(h: usize, w: usize, d: &[u8]) -> LabelTile {
        LabelTile::new(h, w, d.to_vec()).unwrap()
    }

    #[test]
    fn diagonal_and_single_entry() {
        let mut cm = ConfusionMatrix::new(6);
        let t = tile(2, 2, &[0, 1, 2, 3]);
        cm.accumulate(&t, &t).unwrap();
        assert_eq!((0..4).map(|c| cm.get(c, c)).sum::<u64>(), 4);
        let mut one = ConfusionMatrix::new(6);
        one.accumulate(&tile(1, 1, &[5]), &tile(1, 1, &[2])).unwrap();
        assert_eq!(one.get(2, 5), 1);
        assert_eq!(one.total(), 1);
    }

    #[test]
    fn hand_counted_iou_and_f1() {
        let mut cm = ConfusionMatrix::new(2);
        cm.accumulate(&tile(1, 2, &[0, 0]), &tile(1, 2, &[0, 1])).unwrap();
        assert_eq!(iou_per_class(&cm), vec![0.5, 0.0]);
        // class 0: precision 1/2, recall 1
        assert!((f1_per_class(&cm)[0] - 2.0 / 3.0).abs() < 1e-15);
        let t = tile(1, 2, &[0, 1]);
        let mut perfect = ConfusionMatrix::new(2);
        perfect.accumulate(&t, &t).unwrap();
        assert_eq!(iou_per_class(&perfect), vec![1.0, 1.0]);
        assert_eq!(f1_per_class(&perfect), vec![1.0, 1.0]);
    }

    #[test]
    fn absent_classes_count_as_zero() {
        let t = tile(1, 2, &[0, 1]);
        let mut cm = ConfusionMatrix::new(6);
        cm.accumulate(&t, &t).unwrap();
        let r = EvalReport::from_matrix(&cm);
        assert!((r.miou - 2.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn range_and_geometry_errors() {
        let mut cm = ConfusionMatrix::new(3);
        assert!(cm.accumulate(&tile(1, 1, &[3]), &tile(1, 1, &[0])).is_err());
        assert!(cm.accumulate(&tile(1, 2, &[0, 0]), &tile(2, 1, &[0, 0])).is_err());
        assert!(cm.merge(&ConfusionMatrix::new(4)).is_err());
    }

    #[test]
    fn aggregation_means_and_keeps_seeds() {
        let base = EvalReport {
            class_names: class_names(2),
            iou: vec![0.5, 0.5],
            f1: vec![0.6, 0.6],
            miou: 0.5,
            mean_f1: 0.6,
            pixels: 10,
            per_seed: vec![],
        };
        let rs: Vec<_> = [0.50, 0.52, 0.54]
            .iter()
            .enumerate()
            .map(|(i, &m)| (Some(i as u64), EvalReport { miou: m, ..base.clone() }))
            .collect();
        let agg = aggregate_seeds(&rs).unwrap();
        assert!((agg.miou - 0.52).abs() < 1e-12);
        assert_eq!(agg.per_seed.len(), 3);
        let same = aggregate_seeds(&[(None, base.clone()), (None, base.clone())]).unwrap();
        assert_eq!(same.iou, base.iou);
        let bad = EvalReport { iou: vec![0.0; 3], ..base.clone() };
        assert!(aggregate_seeds(&[(None, base), (None, bad)]).is_err());
        assert!(agg.render_table("t").contains("overall"));
    }

    #[test]
    fn overlapping_edge_tiles_counted_once() {
        let d = Arc::new(DomainSpec {
            name: "e".into(),
            role: DomainRole::Evaluation,
            tile_height: 2,
            tile_width: 2,
            ground_resolution: 9.0,
            class_count: 2,
            depth_stats: DepthStats { min: 0.0, max: 1.0 },
        });
        // A 2x3 scene covered by tiles at columns 0 and 1.
        let mk = |col: usize| SampleTriple {
            tile_id: format!("s_c{col}"),
            domain: Arc::clone(&d),
            image: ImageTile::new(2, 2, vec![0.0; 12]).unwrap(),
            label: Some(tile(2, 2, &[0, 1, 0, 1])),
            depth: None,
            origin: Some(TileOrigin {
                scene_id: "s".into(),
                row: 0,
                col,
                scene_height: 2,
                scene_width: 3,
            }),
        };
        let gt = vec![mk(0), mk(1)];
        let masks = dedup_masks(&gt);
        assert_eq!(masks[1], vec![false, true, false, true]);
        let preds: Vec<_> = gt.iter().map(|s| (s.tile_id.clone(), s.label.clone().unwrap())).collect();
        assert_eq!(evaluate(&preds, &gt).unwrap().total(), 6);
        assert!(evaluate(&preds[..1], &gt).is_err());
    }
}
