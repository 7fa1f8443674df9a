//! Evaluation: lane point/cell F1, blob-based road-marking recall and
//! precision, and vanishing-point recall over a distance threshold.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lanes::LanePoint;
use crate::markings::MarkingInstance;
use crate::types::{Cell, ClassLabel, GridMask, ImageSize, Point, VpDifficulty};

fn ratio(num: usize, den: usize, empty: f64) -> f64 {
    if den == 0 {
        empty
    } else {
        num as f64 / den as f64
    }
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// Counts and scores for one lane class (or all of them).
///
/// Precision is point-level (`TP / (TP + FP)`, 0 when nothing was predicted);
/// recall is cell-level (`detected / GT`, 1 when there is nothing to find);
/// F1 is their harmonic mean (0 when both are 0).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LaneScores {
    pub tp_points: usize,
    pub fp_points: usize,
    pub detected_cells: usize,
    pub gt_cells: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl LaneScores {
    pub fn from_counts(tp: usize, fp: usize, detected: usize, gt: usize) -> Self {
        let precision = ratio(tp, tp + fp, 0.0);
        let recall = ratio(detected, gt, 1.0);
        LaneScores {
            tp_points: tp,
            fp_points: fp,
            detected_cells: detected,
            gt_cells: gt,
            precision,
            recall,
            f1: f1(precision, recall),
        }
    }

    /// Sums the counts of two results and recomputes the scores.
    pub fn combine(&self, other: &LaneScores) -> LaneScores {
        LaneScores::from_counts(
            self.tp_points + other.tp_points,
            self.fp_points + other.fp_points,
            self.detected_cells + other.detected_cells,
            self.gt_cells + other.gt_cells,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LaneEvalResult {
    pub overall: LaneScores,
    pub per_class: BTreeMap<ClassLabel, LaneScores>,
}

impl LaneEvalResult {
    /// Adds another frame's counts.
    pub fn accumulate(&mut self, other: &LaneEvalResult) {
        self.overall = self.overall.combine(&other.overall);
        for (l, s) in &other.per_class {
            let e = self.per_class.entry(*l).or_default();
            *e = e.combine(s);
        }
    }
}

/// Matches points to cell centers within `r`; returns (tp points, detected cells).
fn match_points(points: &[Point], cells: &[Point], r: f64) -> (usize, usize) {
    let mut point_hit = vec![false; points.len()];
    let mut detected = 0;
    for c in cells {
        let mut min = f64::INFINITY;
        for p in points {
            min = min.min(c.distance(*p));
        }
        if min <= r {
            detected += 1;
            for (hit, p) in point_hit.iter_mut().zip(points) {
                if c.distance(*p) <= r {
                    *hit = true;
                }
            }
        }
    }
    (point_hit.iter().filter(|h| **h).count(), detected)
}

/// Lane metric: a GT cell is detected when the nearest predicted point lies
/// within `r` pixels of its center, and every point within `r` of a detected
/// cell is a true positive (counted once). `class_aware` restricts matching to
/// equal labels for the overall score; per-class scores always match by label.
pub fn eval_lanes(
    pred: &[LanePoint],
    gt: &GridMask,
    size: &ImageSize,
    r: f64,
    class_aware: bool,
) -> Result<LaneEvalResult> {
    if !(r > 0.0) {
        return Err(Error::Validation(format!("lane radius {r} must be positive")));
    }
    if gt.width() != size.lattice_width() || gt.height() != size.lattice_height() {
        return Err(Error::Shape(
            "ground-truth mask does not match the lattice".into(),
        ));
    }
    let centers_with = |pred_label: Option<ClassLabel>| -> Result<Vec<Point>> {
        gt.labeled_cells()
            .filter(|(_, s)| match pred_label {
                Some(l) => s.contains(l),
                None => s.has_lane(),
            })
            .map(|(c, _)| size.cell_center(c))
            .collect()
    };
    let mut per_class = BTreeMap::new();
    for label in ClassLabel::lanes() {
        let pts: Vec<Point> = pred
            .iter()
            .filter(|p| p.label == label)
            .map(|p| p.position)
            .collect();
        let cells = centers_with(Some(label))?;
        if pts.is_empty() && cells.is_empty() {
            continue;
        }
        let (tp, det) = match_points(&pts, &cells, r);
        per_class.insert(
            label,
            LaneScores::from_counts(tp, pts.len() - tp, det, cells.len()),
        );
    }
    let overall = if class_aware {
        per_class
            .values()
            .fold(LaneScores::from_counts(0, 0, 0, 0), |acc, s| acc.combine(s))
    } else {
        let pts: Vec<Point> = pred
            .iter()
            .filter(|p| p.label.is_lane())
            .map(|p| p.position)
            .collect();
        let cells = centers_with(None)?;
        let (tp, det) = match_points(&pts, &cells, r);
        LaneScores::from_counts(tp, pts.len() - tp, det, cells.len())
    };
    Ok(LaneEvalResult { overall, per_class })
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MarkingScores {
    pub gt_instances: usize,
    pub detected: usize,
    pub blobs: usize,
    pub true_blobs: usize,
    pub recall: f64,
    pub precision: f64,
}

impl MarkingScores {
    pub fn from_counts(gt: usize, detected: usize, blobs: usize, true_blobs: usize) -> Self {
        MarkingScores {
            gt_instances: gt,
            detected,
            blobs,
            true_blobs,
            recall: ratio(detected, gt, 1.0),
            precision: ratio(true_blobs, blobs, 0.0),
        }
    }

    pub fn combine(&self, o: &MarkingScores) -> Self {
        MarkingScores::from_counts(
            self.gt_instances + o.gt_instances,
            self.detected + o.detected,
            self.blobs + o.blobs,
            self.true_blobs + o.true_blobs,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MarkingEvalResult {
    pub overall: MarkingScores,
    pub per_class: BTreeMap<ClassLabel, MarkingScores>,
}

impl MarkingEvalResult {
    pub fn accumulate(&mut self, other: &MarkingEvalResult) {
        self.overall = self.overall.combine(&other.overall);
        for (l, s) in &other.per_class {
            let e = self.per_class.entry(*l).or_default();
            *e = e.combine(s);
        }
    }
}

/// `(label, cells)` pairs for predicted instances.
pub fn instance_blobs(instances: &[MarkingInstance]) -> Vec<(ClassLabel, BTreeSet<Cell>)> {
    instances.iter().map(|i| (i.label, i.cells.clone())).collect()
}

/// Blob is a true detection iff strictly more than half its cells overlap
/// ground-truth cells of the same class.
pub fn blob_is_true(blob: &BTreeSet<Cell>, gt_cells: &BTreeSet<Cell>) -> bool {
    let tp = blob.intersection(gt_cells).count();
    2 * tp > blob.len()
}

/// Road-marking metric. A GT instance counts as detected when at least one
/// true blob of its class overlays it.
pub fn eval_markings(
    pred: &[(ClassLabel, BTreeSet<Cell>)],
    gt: &[(ClassLabel, BTreeSet<Cell>)],
) -> MarkingEvalResult {
    let labels: BTreeSet<ClassLabel> = pred
        .iter()
        .chain(gt)
        .map(|(l, _)| *l)
        .filter(|l| !l.is_lane())
        .collect();
    let mut per_class = BTreeMap::new();
    for label in labels {
        let gt_union: BTreeSet<Cell> = gt
            .iter()
            .filter(|(l, _)| *l == label)
            .flat_map(|(_, c)| c.iter().copied())
            .collect();
        let blobs: Vec<&BTreeSet<Cell>> = pred.iter().filter(|(l, _)| *l == label).map(|(_, c)| c).collect();
        let true_blobs: Vec<&BTreeSet<Cell>> = blobs
            .iter()
            .copied()
            .filter(|b| blob_is_true(b, &gt_union))
            .collect();
        let gts: Vec<&BTreeSet<Cell>> = gt.iter().filter(|(l, _)| *l == label).map(|(_, c)| c).collect();
        let detected = gts
            .iter()
            .filter(|g| true_blobs.iter().any(|b| !b.is_disjoint(g)))
            .count();
        per_class.insert(
            label,
            MarkingScores::from_counts(gts.len(), detected, blobs.len(), true_blobs.len()),
        );
    }
    let overall = per_class
        .values()
        .fold(MarkingScores::from_counts(0, 0, 0, 0), |acc, s| acc.combine(s));
    MarkingEvalResult { overall, per_class }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VpRecallCurve {
    pub thresholds: Vec<f64>,
    pub recalls: Vec<f64>,
    /// Frames that entered the recall (NONE frames, and HARD when filtered, excluded).
    pub frames: usize,
}

impl VpRecallCurve {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("R,recall\n");
        for (t, r) in self.thresholds.iter().zip(&self.recalls) {
            let _ = writeln!(s, "{t},{r}");
        }
        s
    }
}

/// Recall of VP predictions against ground truth for each threshold `R`:
/// the fraction of eligible frames with a prediction within `R` pixels
/// (boundary inclusive).
pub fn eval_vp(
    pred: &[Option<Point>],
    gt: &[(Option<Point>, VpDifficulty)],
    thresholds: &[f64],
    include_hard: bool,
) -> Result<VpRecallCurve> {
    if pred.len() != gt.len() {
        return Err(Error::Input(format!(
            "{} predictions for {} ground-truth frames",
            pred.len(),
            gt.len()
        )));
    }
    if let Some(t) = thresholds.iter().find(|t| !(**t > 0.0)) {
        return Err(Error::Validation(format!(
            "recall threshold {t} must be positive"
        )));
    }
    let mut distances = Vec::new();
    for (i, (p, (g, d))) in pred.iter().zip(gt).enumerate() {
        match d {
            VpDifficulty::None => continue,
            VpDifficulty::Hard if !include_hard => continue,
            _ => {}
        }
        let g = g.ok_or_else(|| Error::Input(format!("frame {i} has difficulty {d:?} but no VP")))?;
        distances.push(p.map_or(f64::INFINITY, |p| p.distance(g)));
    }
    let recalls = thresholds
        .iter()
        .map(|t| {
            ratio(
                distances.iter().filter(|d| **d <= *t).count(),
                distances.len(),
                1.0,
            )
        })
        .collect();
    Ok(VpRecallCurve {
        thresholds: thresholds.to_vec(),
        recalls,
        frames: distances.len(),
    })
}

/// Aligned text table of lane scores, one row per class plus the overall row.
pub fn lane_table(result: &LaneEvalResult) -> String {
    let mut s = format!(
        "{:<16} {:>8} {:>8} {:>8} {:>8} {:>9} {:>9} {:>7}\n",
        "class", "tp_pts", "fp_pts", "det", "gt", "precision", "recall", "F1"
    );
    let row = |s: &mut String, name: &str, v: &LaneScores| {
        let _ = writeln!(
            s,
            "{:<16} {:>8} {:>8} {:>8} {:>8} {:>9.4} {:>9.4} {:>7.4}",
            name, v.tp_points, v.fp_points, v.detected_cells, v.gt_cells, v.precision, v.recall, v.f1
        );
    };
    for (l, v) in &result.per_class {
        row(&mut s, l.name(), v);
    }
    row(&mut s, "overall", &result.overall);
    s
}

/// Aligned text table of road-marking scores.
pub fn marking_table(result: &MarkingEvalResult) -> String {
    let mut s = format!(
        "{:<16} {:>8} {:>8} {:>8} {:>8} {:>9} {:>9}\n",
        "class", "gt", "detected", "blobs", "true", "recall", "precision"
    );
    let row = |s: &mut String, name: &str, v: &MarkingScores| {
        let _ = writeln!(
            s,
            "{:<16} {:>8} {:>8} {:>8} {:>8} {:>9.4} {:>9.4}",
            name, v.gt_instances, v.detected, v.blobs, v.true_blobs, v.recall, v.precision
        );
    };
    for (l, v) in &result.per_class {
        row(&mut s, l.name(), v);
    }
    row(&mut s, "overall", &result.overall);
    s
}
