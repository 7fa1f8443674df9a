//! Lane post-processing: row-wise peak sampling on the lane channels, inverse
//! perspective mapping derived from the vanishing point, sequential bin-stack
//! clustering in the bird's-eye frame, and quadratic `x(y)` regression with
//! optional VP attachment.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, SVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Cell, ClassLabel, ConfidenceMap, ImageSize, Point};

/// A sampled lane candidate at a cell center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LanePoint {
    pub position: Point,
    pub cell: Cell,
    pub score: f64,
    pub label: ClassLabel,
}

/// Row-wise 1-D non-maximum suppression (window ±1 cell) on each lane
/// channel. On a plateau only the leftmost cell survives.
pub fn sample_peaks(map: &ConfidenceMap, size: &ImageSize, threshold: f64) -> Result<Vec<LanePoint>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Validation(format!(
            "peak threshold {threshold} must lie in (0, 1)"
        )));
    }
    if map.channels() < ClassLabel::LANE_COUNT {
        return Err(Error::Shape(format!(
            "lane sampling needs {} channels, got {}",
            ClassLabel::LANE_COUNT,
            map.channels()
        )));
    }
    if map.width() != size.lattice_width() || map.height() != size.lattice_height() {
        return Err(Error::Shape(format!(
            "map is {}x{}, lattice is {}x{}",
            map.width(),
            map.height(),
            size.lattice_width(),
            size.lattice_height()
        )));
    }
    let w = map.width();
    let mut out = Vec::new();
    for label in ClassLabel::lanes() {
        let ch = map.channel(label.id() as usize);
        for row in 0..map.height() {
            let line = &ch[row * w..(row + 1) * w];
            for col in 0..w {
                let s = line[col];
                if s < threshold {
                    continue;
                }
                let beats_left = col == 0 || s > line[col - 1];
                let holds_right = col + 1 == w || s >= line[col + 1];
                if beats_left && holds_right {
                    let cell = Cell::new(col, row);
                    out.push(LanePoint {
                        position: size.cell_center(cell)?,
                        cell,
                        score: s,
                        label,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// Planar projective transform acting on `[x, y, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography(pub Matrix3<f64>);

impl Homography {
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let det = m.determinant();
        if !det.is_finite() || det.abs() <= 1e-9 {
            return Err(Error::Geometry(format!(
                "homography determinant {det:e} is singular"
            )));
        }
        Ok(Homography(m))
    }

    pub fn identity() -> Self {
        Homography(Matrix3::identity())
    }

    /// Exact four-point solution with `h33 = 1`.
    pub fn from_correspondences(src: &[Point; 4], dst: &[Point; 4]) -> Result<Self> {
        let mut a = SMatrix::<f64, 8, 8>::zeros();
        let mut b = SVector::<f64, 8>::zeros();
        for (i, (s, d)) in src.iter().zip(dst).enumerate() {
            let r = 2 * i;
            a.row_mut(r)
                .copy_from_slice(&[s.x, s.y, 1.0, 0.0, 0.0, 0.0, -d.x * s.x, -d.x * s.y]);
            a.row_mut(r + 1)
                .copy_from_slice(&[0.0, 0.0, 0.0, s.x, s.y, 1.0, -d.y * s.x, -d.y * s.y]);
            b[r] = d.x;
            b[r + 1] = d.y;
        }
        let h = a
            .lu()
            .solve(&b)
            .ok_or_else(|| Error::Geometry("degenerate point correspondences".into()))?;
        Homography::new(Matrix3::new(h[0], h[1], h[2], h[3], h[4], h[5], h[6], h[7], 1.0))
    }

    /// Maps a point; `None` when it lands on or beyond the line at infinity.
    pub fn apply(&self, p: Point) -> Option<Point> {
        let v = self.0 * Vector3::new(p.x, p.y, 1.0);
        if v.z.abs() < 1e-12 {
            return None;
        }
        let q = Point::new(v.x / v.z, v.y / v.z);
        (q.x.is_finite() && q.y.is_finite()).then_some(q)
    }

    pub fn inverse(&self) -> Result<Homography> {
        let inv = self
            .0
            .try_inverse()
            .ok_or_else(|| Error::Geometry("homography is not invertible".into()))?;
        Homography::new(inv)
    }

    /// Same transform with `h33` scaled to 1 (when possible), for comparisons.
    pub fn normalized(&self) -> Matrix3<f64> {
        let s = self.0[(2, 2)];
        if s.abs() > 1e-15 {
            self.0 / s
        } else {
            self.0
        }
    }
}

/// Bird's-eye mapping implied by a vanishing point on a flat road.
///
/// The source trapezoid has its bottom edge on the image bottom (`y = height`)
/// and its top edge on row `near_y`; its sides run from the bottom corners
/// toward the VP, so every image line through the VP becomes a vertical line.
/// The target rectangle is scaled so the map is locally isotropic with unit
/// scale at the top edge. In the output frame `u` grows to the right and `v`
/// grows with distance ahead (0 at the image bottom).
pub fn ipm_from_vp(vp: Point, size: &ImageSize, near_y: f64) -> Result<Homography> {
    let (w, h) = (f64::from(size.width), f64::from(size.height));
    if !size.contains_point(vp) {
        return Err(Error::Geometry(format!(
            "vanishing point ({}, {}) outside the image",
            vp.x, vp.y
        )));
    }
    if !(near_y > vp.y && near_y < h) {
        return Err(Error::Geometry(format!(
            "trapezoid top {near_y} must lie strictly between the VP row {} and the image bottom {h}",
            vp.y
        )));
    }
    let margin = near_y - vp.y;
    let depth = h - vp.y;
    let t = margin / depth;
    let top_left = Point::new(vp.x + (0.0 - vp.x) * t, near_y);
    let top_right = Point::new(vp.x + (w - vp.x) * t, near_y);
    let rect_w = w * t;
    let rect_h = margin * (h - near_y) / depth;
    Homography::from_correspondences(
        &[Point::new(0.0, h), Point::new(w, h), top_left, top_right],
        &[
            Point::new(0.0, 0.0),
            Point::new(rect_w, 0.0),
            Point::new(0.0, rect_h),
            Point::new(rect_w, rect_h),
        ],
    )
}

/// Sequential bin-stack clustering.
///
/// Points are visited in increasing `y` (ties by `x`, then input order). Each
/// point joins the bin whose most recently stacked point is nearest and
/// within `dist_threshold`; otherwise it opens a new bin. Returns bins as
/// indices into `points`, in creation order.
pub fn cluster_points(points: &[Point], dist_threshold: f64) -> Result<Vec<Vec<usize>>> {
    if !(dist_threshold > 0.0) {
        return Err(Error::Validation(format!(
            "cluster distance {dist_threshold} must be positive"
        )));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| {
        let (p, q) = (points[a], points[b]);
        p.y.total_cmp(&q.y).then(p.x.total_cmp(&q.x)).then(a.cmp(&b))
    });
    let mut bins: Vec<Vec<usize>> = Vec::new();
    for i in order {
        let p = points[i];
        let mut best: Option<(usize, f64)> = None;
        for (b, bin) in bins.iter().enumerate() {
            let top = points[*bin.last().expect("bins are never empty")];
            let d = p.distance(top);
            if d <= dist_threshold && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((b, d));
            }
        }
        match best {
            Some((b, _)) => bins[b].push(i),
            None => bins.push(vec![i]),
        }
    }
    Ok(bins)
}

/// Least-squares `x = a·y² + b·y + c`. Needs at least three distinct rows.
pub fn fit_quadratic(points: &[Point]) -> Result<[f64; 3]> {
    let rows: BTreeSet<u64> = points.iter().map(|p| p.y.to_bits()).collect();
    if rows.len() < 3 {
        return Err(Error::Fit(format!(
            "quadratic needs 3 distinct rows, got {}",
            rows.len()
        )));
    }
    let n = points.len() as f64;
    let mean = points.iter().map(|p| p.y).sum::<f64>() / n;
    let scale = points
        .iter()
        .map(|p| (p.y - mean).abs())
        .fold(0.0, f64::max)
        .max(1e-12);
    let design = DMatrix::from_fn(points.len(), 3, |r, c| {
        let t = (points[r].y - mean) / scale;
        t.powi(2 - c as i32)
    });
    let rhs = DVector::from_iterator(points.len(), points.iter().map(|p| p.x));
    let svd = design.svd(true, true);
    let sv = &svd.singular_values;
    if sv.min() <= sv.max() * 1e-12 {
        return Err(Error::Fit("rank-deficient design".into()));
    }
    let coef = svd.solve(&rhs, 0.0).map_err(|e| Error::Fit(e.to_string()))?;
    // x = A t² + B t + C with t = (y − m)/s.
    let (ca, cb, cc) = (coef[0], coef[1], coef[2]);
    let a = ca / (scale * scale);
    let b = cb / scale - 2.0 * ca * mean / (scale * scale);
    let c = cc - cb * mean / scale + ca * mean * mean / (scale * scale);
    Ok([a, b, c])
}

/// A classified quadratic lane `x = a·y² + b·y + c` in image coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneCurve {
    pub coeffs: [f64; 3],
    pub label: ClassLabel,
    pub support: Vec<LanePoint>,
    /// `[y_far, y_near]` covered by the fit (the far end is the VP row when attached).
    pub y_range: [f64; 2],
    pub vp_attached: bool,
    /// RMS horizontal residual over the support points.
    pub rms: f64,
}

impl LaneCurve {
    pub fn x_at(&self, y: f64) -> f64 {
        let [a, b, c] = self.coeffs;
        (a * y + b) * y + c
    }

    pub fn mean_score(&self) -> f64 {
        self.support.iter().map(|p| p.score).sum::<f64>() / self.support.len() as f64
    }

    /// Points on the curve at every cell-row center inside the y-range, for evaluation.
    pub fn sample_points(&self, size: &ImageSize) -> Vec<LanePoint> {
        sample_curve(self.coeffs, self.y_range, self.label, size)
    }

    pub fn to_json(&self) -> LaneCurveJson {
        LaneCurveJson {
            label: self.label,
            coeffs: self.coeffs,
            y_range: self.y_range,
            support: self.support.len(),
        }
    }
}

/// Curve samples at cell-row centers with `y` in `y_range` and `x` inside the image.
pub fn sample_curve(
    coeffs: [f64; 3],
    y_range: [f64; 2],
    label: ClassLabel,
    size: &ImageSize,
) -> Vec<LanePoint> {
    let g = f64::from(size.grid);
    let [a, b, c] = coeffs;
    (0..size.lattice_height())
        .filter_map(|row| {
            let y = row as f64 * g + g / 2.0;
            if y < y_range[0] - 1e-9 || y > y_range[1] + 1e-9 {
                return None;
            }
            let p = Point::new((a * y + b) * y + c, y);
            let cell = size.cell_of(p)?;
            Some(LanePoint {
                position: p,
                cell,
                score: 1.0,
                label,
            })
        })
        .collect()
}

/// Serialized lane: `{"label", "coeffs": [a, b, c], "y_range": [y0, y1], "support": N}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneCurveJson {
    pub label: ClassLabel,
    pub coeffs: [f64; 3],
    pub y_range: [f64; 2],
    pub support: usize,
}

/// Fits one cluster. When the farthest support point (smallest `y`) lies within
/// `vp_attach_radius` of the VP, the VP joins the regression as an extra point.
/// The label is the majority label of the support (lowest id on ties).
pub fn fit_lane(cluster: &[LanePoint], vp: Option<Point>, vp_attach_radius: f64) -> Result<LaneCurve> {
    if cluster.len() < 3 {
        return Err(Error::Fit(format!(
            "cluster of {} points is too small for a quadratic",
            cluster.len()
        )));
    }
    let farthest = cluster
        .iter()
        .min_by(|a, b| a.position.y.total_cmp(&b.position.y))
        .expect("non-empty");
    let y_near = cluster
        .iter()
        .map(|p| p.position.y)
        .fold(f64::NEG_INFINITY, f64::max);
    let mut fit_points: Vec<Point> = cluster.iter().map(|p| p.position).collect();
    let attach =
        vp.filter(|v| v.y < farthest.position.y && farthest.position.distance(*v) <= vp_attach_radius);
    if let Some(v) = attach {
        fit_points.push(v);
    }
    let coeffs = fit_quadratic(&fit_points)?;
    let [a, b, c] = coeffs;
    let sq: f64 = cluster
        .iter()
        .map(|p| {
            let y = p.position.y;
            ((a * y + b) * y + c - p.position.x).powi(2)
        })
        .sum();
    let rms = (sq / cluster.len() as f64).sqrt();

    let mut votes = [0usize; ClassLabel::COUNT];
    for p in cluster {
        votes[p.label.id() as usize] += 1;
    }
    let best = votes
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.cmp(b).then(j.cmp(i)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    let label = ClassLabel::from_id(best as u8).expect("id in range");

    Ok(LaneCurve {
        coeffs,
        label,
        support: cluster.to_vec(),
        y_range: [attach.map_or(farthest.position.y, |v| v.y), y_near],
        vp_attached: attach.is_some(),
        rms,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LaneConfig {
    /// Minimum lane confidence for a peak.
    pub peak_threshold: f64,
    /// Trapezoid top edge below the VP, in cells.
    pub ipm_margin_cells: f64,
    /// Bin-stack distance in cell widths, measured in the bird's-eye frame.
    pub cluster_distance_cells: f64,
    /// Farthest-point-to-VP distance (pixels) under which the VP joins the fit.
    pub vp_attach_radius: f64,
    pub min_cluster_size: usize,
    /// Curves whose support RMS residual exceeds this (pixels) are dropped.
    pub fit_tolerance: f64,
    /// Support overlap (fraction of the smaller curve) that merges curves across labels.
    pub merge_overlap: f64,
}

impl Default for LaneConfig {
    fn default() -> Self {
        LaneConfig {
            peak_threshold: 0.5,
            ipm_margin_cells: 3.0,
            cluster_distance_cells: 1.5,
            vp_attach_radius: 48.0,
            min_cluster_size: 3,
            fit_tolerance: 8.0,
            merge_overlap: 0.5,
        }
    }
}

impl LaneConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Validation(format!("lanes.{what} out of range")));
        if !(self.peak_threshold > 0.0 && self.peak_threshold < 1.0) {
            return bad("peak_threshold");
        }
        if !(self.ipm_margin_cells > 0.0) {
            return bad("ipm_margin_cells");
        }
        if !(self.cluster_distance_cells > 0.0) {
            return bad("cluster_distance_cells");
        }
        if !(self.vp_attach_radius >= 0.0) {
            return bad("vp_attach_radius");
        }
        if self.min_cluster_size < 3 {
            return bad("min_cluster_size");
        }
        if !(self.fit_tolerance > 0.0) {
            return bad("fit_tolerance");
        }
        if !(self.merge_overlap > 0.0 && self.merge_overlap <= 1.0) {
            return bad("merge_overlap");
        }
        Ok(())
    }
}

/// Maps lane points into the clustering frame. Returns the transformed points
/// and the indices of the lane points they came from.
fn to_cluster_frame(
    points: &[LanePoint],
    vp: Option<Point>,
    size: &ImageSize,
    cfg: &LaneConfig,
) -> Result<(Vec<Point>, Vec<usize>)> {
    let g = f64::from(size.grid);
    let h = f64::from(size.height);
    let ipm = match vp {
        Some(v) if v.y + cfg.ipm_margin_cells * g < h => {
            let near_y = v.y + cfg.ipm_margin_cells * g;
            Some((ipm_from_vp(v, size, near_y)?, near_y))
        }
        _ => None,
    };
    let mut out = Vec::with_capacity(points.len());
    let mut idx = Vec::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        match &ipm {
            Some((hom, near_y)) => {
                if p.position.y < *near_y {
                    continue;
                }
                if let Some(q) = hom.apply(p.position) {
                    out.push(q);
                    idx.push(i);
                }
            }
            // Without a usable VP: image pixels with the row axis flipped, so
            // clustering still runs from the bottom of the image upward.
            None => {
                out.push(Point::new(p.position.x, h - p.position.y));
                idx.push(i);
            }
        }
    }
    Ok((out, idx))
}

/// Full lane stage for one frame.
///
/// Per lane channel: peaks, bird's-eye projection, bin-stack clustering,
/// quadratic fit. Curves of different labels sharing at least
/// `merge_overlap` of their support cells are merged into the higher-scoring
/// one. Output is ordered by `x` at the near end, then label.
pub fn extract_lanes(
    map: &ConfidenceMap,
    vp: Option<Point>,
    size: &ImageSize,
    cfg: &LaneConfig,
) -> Result<Vec<LaneCurve>> {
    cfg.validate()?;
    let peaks = sample_peaks(map, size, cfg.peak_threshold)?;
    let threshold = cfg.cluster_distance_cells * f64::from(size.grid);
    let mut curves = Vec::new();
    for label in ClassLabel::lanes() {
        let channel_points: Vec<LanePoint> = peaks.iter().filter(|p| p.label == label).copied().collect();
        if channel_points.len() < cfg.min_cluster_size {
            continue;
        }
        let (bev, idx) = to_cluster_frame(&channel_points, vp, size, cfg)?;
        for bin in cluster_points(&bev, threshold)? {
            if bin.len() < cfg.min_cluster_size {
                continue;
            }
            let support: Vec<LanePoint> = bin.iter().map(|&b| channel_points[idx[b]]).collect();
            match fit_lane(&support, vp, cfg.vp_attach_radius) {
                Ok(curve) if curve.rms <= cfg.fit_tolerance => curves.push(curve),
                Ok(_) | Err(Error::Fit(_)) => {}
                Err(e) => return Err(e),
            }
        }
    }
    let mut merged = merge_across_labels(curves, cfg.merge_overlap);
    merged.sort_by(|a, b| {
        a.x_at(a.y_range[1])
            .total_cmp(&b.x_at(b.y_range[1]))
            .then(a.label.cmp(&b.label))
    });
    Ok(merged)
}

fn merge_across_labels(mut curves: Vec<LaneCurve>, min_overlap: f64) -> Vec<LaneCurve> {
    curves.sort_by(|a, b| {
        b.mean_score()
            .total_cmp(&a.mean_score())
            .then(a.label.cmp(&b.label))
    });
    let mut kept: Vec<(LaneCurve, BTreeSet<Cell>)> = Vec::new();
    for curve in curves {
        let cells: BTreeSet<Cell> = curve.support.iter().map(|p| p.cell).collect();
        let dup = kept.iter().any(|(k, kc)| {
            k.label != curve.label && {
                let shared = kc.intersection(&cells).count();
                shared as f64 >= min_overlap * kc.len().min(cells.len()) as f64
            }
        });
        if !dup {
            kept.push((curve, cells));
        }
    }
    kept.into_iter().map(|(c, _)| c).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn size() -> ImageSize {
        ImageSize::default()
    }

    fn lane_map() -> ConfidenceMap {
        ConfidenceMap::zeros(17, 60, 80)
    }

    #[test]
    fn isolated_ridge_gives_one_point_per_row() {
        let mut m = lane_map();
        for row in 0..60 {
            m.set(0, row, 30, 0.9);
        }
        let peaks = sample_peaks(&m, &size(), 0.5).unwrap();
        assert_eq!(peaks.len(), 60);
        assert!(peaks
            .iter()
            .all(|p| p.cell.col == 30 && p.label == ClassLabel::SingleWhite));
        assert_eq!(peaks[0].position, Point::new(244.0, 4.0));
    }

    #[test]
    fn plateau_keeps_leftmost() {
        let mut m = lane_map();
        m.channel_mut(1).fill(0.9);
        let peaks = sample_peaks(&m, &size(), 0.5).unwrap();
        assert_eq!(peaks.len(), 60);
        assert!(peaks.iter().all(|p| p.cell.col == 0));

        let mut m = lane_map();
        for (col, v) in [(10, 0.4), (11, 0.9), (12, 0.9), (13, 0.9), (14, 0.4)] {
            m.set(2, 7, col, v);
        }
        let peaks = sample_peaks(&m, &size(), 0.5).unwrap();
        assert_eq!(peaks.len(), 1);
        assert_eq!(peaks[0].cell, Cell::new(11, 7));
    }

    #[test]
    fn ridges_two_cells_apart_both_survive() {
        // Window enumeration: col 20 sees (19: 0, 21: 0); col 22 sees (21: 0, 23: 0).
        let mut m = lane_map();
        m.set(0, 5, 20, 0.9);
        m.set(0, 5, 22, 0.8);
        let peaks = sample_peaks(&m, &size(), 0.5).unwrap();
        let cols: Vec<usize> = peaks.iter().map(|p| p.cell.col).collect();
        assert_eq!(cols, vec![20, 22]);
        // Adjacent ridges: the weaker one is suppressed.
        m.set(0, 5, 21, 0.85);
        let cols: Vec<usize> = sample_peaks(&m, &size(), 0.5)
            .unwrap()
            .iter()
            .map(|p| p.cell.col)
            .collect();
        assert_eq!(cols, vec![20]);
    }

    #[test]
    fn rejects_bad_threshold() {
        assert!(sample_peaks(&lane_map(), &size(), 0.0).is_err());
        assert!(sample_peaks(&lane_map(), &size(), 1.0).is_err());
    }

    #[test]
    fn identity_rectangle_gives_identity() {
        let r = [
            Point::new(0.0, 0.0),
            Point::new(640.0, 0.0),
            Point::new(0.0, 480.0),
            Point::new(640.0, 480.0),
        ];
        let h = Homography::from_correspondences(&r, &r).unwrap();
        let m = h.normalized();
        assert!((m - Matrix3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn center_line_stays_vertical() {
        let s = size();
        let vp = Point::new(320.0, 200.0);
        let h = ipm_from_vp(vp, &s, 224.0).unwrap();
        let us: Vec<f64> = (0..20)
            .map(|k| h.apply(Point::new(320.0, 230.0 + 12.0 * k as f64)).unwrap().x)
            .collect();
        for u in &us {
            assert!((u - us[0]).abs() < 1e-9);
        }
    }

    /// Independent least-squares line fit `u = m·v + q` for the parallelism oracle.
    fn line_slope(points: &[Point]) -> f64 {
        let n = points.len() as f64;
        let mv = points.iter().map(|p| p.y).sum::<f64>() / n;
        let mu = points.iter().map(|p| p.x).sum::<f64>() / n;
        let cov: f64 = points.iter().map(|p| (p.y - mv) * (p.x - mu)).sum();
        let var: f64 = points.iter().map(|p| (p.y - mv).powi(2)).sum();
        cov / var
    }

    #[test]
    fn lines_through_vp_become_parallel() {
        let s = size();
        let vp = Point::new(350.0, 190.0);
        let h = ipm_from_vp(vp, &s, 214.0).unwrap();
        let lane = |bottom_x: f64| -> Vec<Point> {
            (0..30)
                .map(|k| {
                    let y = 220.0 + 8.0 * k as f64;
                    let t = (y - vp.y) / (480.0 - vp.y);
                    h.apply(Point::new(vp.x + (bottom_x - vp.x) * t, y)).unwrap()
                })
                .collect()
        };
        let (a, b) = (lane(60.0), lane(610.0));
        let angle = (line_slope(&a).atan() - line_slope(&b).atan()).abs().to_degrees();
        assert!(angle < 0.5, "angle {angle}");
        // Both lanes are separated in the bird's-eye frame.
        assert!((a[0].x - b[0].x).abs() > 10.0);
    }

    #[test]
    fn ipm_rejects_bad_geometry() {
        let s = size();
        assert!(ipm_from_vp(Point::new(320.0, 200.0), &s, 190.0).is_err());
        assert!(ipm_from_vp(Point::new(320.0, 200.0), &s, 480.0).is_err());
    }

    #[test]
    fn inverse_round_trips() {
        let h = ipm_from_vp(Point::new(300.0, 210.0), &size(), 234.0).unwrap();
        let inv = h.inverse().unwrap();
        for p in [
            Point::new(10.0, 470.0),
            Point::new(320.0, 250.0),
            Point::new(600.0, 300.0),
        ] {
            let q = inv.apply(h.apply(p).unwrap()).unwrap();
            assert!(q.distance(p) < 1e-8);
        }
    }

    #[test]
    fn clustering_trivial_inputs() {
        assert!(cluster_points(&[], 5.0).unwrap().is_empty());
        assert_eq!(
            cluster_points(&[Point::new(1.0, 1.0)], 5.0).unwrap(),
            vec![vec![0]]
        );
        assert!(cluster_points(&[], 0.0).is_err());
    }

    #[test]
    fn two_columns_make_two_clusters() {
        let pts: Vec<Point> = (0..20)
            .flat_map(|k| {
                [
                    Point::new(50.0, 10.0 * k as f64),
                    Point::new(150.0, 10.0 * k as f64),
                ]
            })
            .collect();
        let bins = cluster_points(&pts, 20.0).unwrap();
        assert_eq!(bins.len(), 2);
        for bin in &bins {
            let x0 = pts[bin[0]].x;
            assert_eq!(bin.len(), 20);
            assert!(bin.iter().all(|&i| pts[i].x == x0));
        }
    }

    #[test]
    fn exact_models() {
        let line: Vec<Point> = (0..10)
            .map(|k| Point::new(k as f64 * 7.0, k as f64 * 7.0))
            .collect();
        let [a, b, c] = fit_quadratic(&line).unwrap();
        assert!(a.abs() < 1e-9 && (b - 1.0).abs() < 1e-9 && c.abs() < 1e-9);

        let quad: Vec<Point> = (0..30)
            .map(|k| {
                let y = 200.0 + 9.5 * k as f64;
                Point::new(0.001 * y * y + 2.0, y)
            })
            .collect();
        let [a, b, c] = fit_quadratic(&quad).unwrap();
        assert!((a - 0.001).abs() < 1e-6 && b.abs() < 1e-6 && (c - 2.0).abs() < 1e-6);
    }

    #[test]
    fn single_row_is_rank_deficient() {
        let pts: Vec<Point> = (0..5).map(|k| Point::new(k as f64, 100.0)).collect();
        assert!(matches!(fit_quadratic(&pts), Err(Error::Fit(_))));
        let two_rows = [Point::new(0.0, 1.0), Point::new(1.0, 1.0), Point::new(2.0, 5.0)];
        assert!(fit_quadratic(&two_rows).is_err());
    }

    fn lane_points(xs_ys: &[(f64, f64)], label: ClassLabel) -> Vec<LanePoint> {
        let s = size();
        xs_ys
            .iter()
            .map(|&(x, y)| LanePoint {
                position: Point::new(x, y),
                cell: s.cell_of(Point::new(x, y)).unwrap(),
                score: 0.9,
                label,
            })
            .collect()
    }

    #[test]
    fn vp_attachment_pins_the_far_end() {
        // A straight lane through the VP, sampled with a small lateral bias so
        // that the unattached fit misses the VP.
        let vp = Point::new(320.0, 200.0);
        let truth = |y: f64| vp.x + 0.8 * (y - vp.y);
        let pts: Vec<(f64, f64)> = (0..25)
            .map(|k| {
                let y = vp.y + 10.0 + 10.0 * k as f64;
                let bias = if k % 2 == 0 { 3.0 } else { -1.0 } * (1.0 + k as f64 / 10.0);
                (truth(y) + bias, y)
            })
            .collect();
        let cluster = lane_points(&pts, ClassLabel::SingleWhite);
        let far = cluster[0].position.distance(vp);
        assert!(far > 9.0 && far < 20.0, "farthest sample {far} px from VP");
        let free = fit_lane(&cluster, None, 20.0).unwrap();
        let pinned = fit_lane(&cluster, Some(vp), 20.0).unwrap();
        assert!(!free.vp_attached && pinned.vp_attached);
        assert_eq!(pinned.y_range[0], vp.y);
        let miss = (pinned.x_at(vp.y) - vp.x).abs();
        assert!(miss <= 2.0, "attached curve misses VP by {miss}");
        assert!(miss < (free.x_at(vp.y) - vp.x).abs());
        // Too far: no attachment.
        let far_fit = fit_lane(&cluster, Some(vp), 5.0).unwrap();
        assert!(!far_fit.vp_attached);
    }

    #[test]
    fn majority_label_wins() {
        let mut pts = lane_points(
            &[(10.0, 100.0), (12.0, 120.0), (14.0, 140.0)],
            ClassLabel::DashedWhite,
        );
        pts[0].label = ClassLabel::Zigzag;
        assert_eq!(fit_lane(&pts, None, 0.0).unwrap().label, ClassLabel::DashedWhite);
        assert!(fit_lane(&pts[..2], None, 0.0).is_err());
    }

    #[test]
    fn empty_map_gives_no_lanes() {
        let lanes = extract_lanes(
            &lane_map(),
            Some(Point::new(324.0, 204.0)),
            &size(),
            &LaneConfig::default(),
        )
        .unwrap();
        assert!(lanes.is_empty());
    }

    #[test]
    fn cross_label_duplicates_merge() {
        let mut m = lane_map();
        for row in 30..60 {
            m.set(0, row, 10 + (row - 30) / 3, 0.9);
            m.set(3, row, 10 + (row - 30) / 3, 0.7);
        }
        let lanes = extract_lanes(&m, None, &size(), &LaneConfig::default()).unwrap();
        assert_eq!(lanes.len(), 1);
        assert_eq!(lanes[0].label, ClassLabel::SingleWhite);
    }

    proptest! {
        #[test]
        fn clusters_partition_their_input(
            raw in proptest::collection::vec((0.0f64..200.0, 0.0f64..200.0), 0..60),
            t in 1.0f64..40.0,
        ) {
            let pts: Vec<Point> = raw.iter().map(|&(x, y)| Point::new(x, y)).collect();
            let bins = cluster_points(&pts, t).unwrap();
            let mut seen = vec![0usize; pts.len()];
            for bin in &bins {
                prop_assert!(!bin.is_empty());
                for &i in bin { seen[i] += 1; }
            }
            prop_assert!(seen.iter().all(|&c| c == 1));
        }

        #[test]
        fn attachment_never_hurts_consistent_clusters(
            slope in -1.5f64..1.5, curv in -0.002f64..0.002, start in 8.0f64..30.0,
        ) {
            // Exact quadratic through the VP: attaching the VP adds a zero-residual point.
            let vp = Point::new(320.0, 200.0);
            let f = |y: f64| vp.x + slope * (y - vp.y) + curv * (y - vp.y).powi(2);
            let pts: Vec<(f64, f64)> = (0..12).map(|k| {
                let y = vp.y + start + 8.0 * k as f64;
                (f(y), y)
            }).filter(|&(x, _)| (0.0..640.0).contains(&x)).collect();
            prop_assume!(pts.len() >= 3);
            let cluster = lane_points(&pts, ClassLabel::SingleYellow);
            let free = fit_lane(&cluster, None, 0.0).unwrap();
            let pinned = fit_lane(&cluster, Some(vp), 1e6).unwrap();
            prop_assert!(pinned.rms <= free.rms + 1e-6);
        }
    }
}
