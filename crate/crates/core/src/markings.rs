//! Road-marking post-processing: confident cells per class, optionally
//! re-anchored by the grid-regression offsets, then merged into instances by
//! growing regions over shared cell corners.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Cell, ClassLabel, ConfidenceMap, ImageSize};

/// Per-cell regressed offset `(dx, dy)` in pixels from the cell center to its
/// anchor cell center.
#[derive(Debug, Clone, PartialEq)]
pub struct GridRegressionMap {
    pub width: usize,
    pub height: usize,
    offsets: Vec<[f64; 2]>,
}

impl GridRegressionMap {
    pub fn new(width: usize, height: usize, offsets: Vec<[f64; 2]>, grid: u32) -> Result<Self> {
        if offsets.len() != width * height {
            return Err(Error::Shape(format!(
                "{} offsets for a {width}x{height} lattice",
                offsets.len()
            )));
        }
        let limit = f64::from(grid) * std::f64::consts::SQRT_2 + 1e-9;
        for (i, [dx, dy]) in offsets.iter().enumerate() {
            if !dx.is_finite() || !dy.is_finite() {
                return Err(Error::Data(format!("non-finite regression offset at cell {i}")));
            }
            if dx.hypot(*dy) > limit {
                return Err(Error::Data(format!(
                    "regression offset ({dx}, {dy}) at cell {i} exceeds one cell diagonal"
                )));
            }
        }
        Ok(GridRegressionMap {
            width,
            height,
            offsets,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        GridRegressionMap {
            width,
            height,
            offsets: vec![[0.0; 2]; width * height],
        }
    }

    /// Reads offsets from a 2-channel map (channel 0 = dx, channel 1 = dy).
    pub fn from_map(map: &ConfidenceMap, grid: u32) -> Result<Self> {
        if map.channels() != 2 {
            return Err(Error::Shape(format!(
                "regression map needs 2 channels, got {}",
                map.channels()
            )));
        }
        let offsets = map
            .channel(0)
            .iter()
            .zip(map.channel(1))
            .map(|(x, y)| [*x, *y])
            .collect();
        Self::new(map.width(), map.height(), offsets, grid)
    }

    pub fn to_map(&self) -> ConfidenceMap {
        let mut data: Vec<f64> = self.offsets.iter().map(|o| o[0]).collect();
        data.extend(self.offsets.iter().map(|o| o[1]));
        ConfidenceMap::new(2, self.height, self.width, data).expect("finite offsets")
    }

    pub fn get(&self, cell: Cell) -> [f64; 2] {
        self.offsets[cell.row * self.width + cell.col]
    }

    pub fn set(&mut self, cell: Cell, offset: [f64; 2]) {
        self.offsets[cell.row * self.width + cell.col] = offset;
    }

    pub fn offsets(&self) -> &[[f64; 2]] {
        &self.offsets
    }
}

/// Cell the regression points `cell` at, clamped to the lattice.
pub fn reanchor(cell: Cell, offset: [f64; 2], size: &ImageSize) -> Result<Cell> {
    let c = size.cell_center(cell)?;
    let g = f64::from(size.grid);
    let col = ((c.x + offset[0]) / g)
        .floor()
        .clamp(0.0, (size.lattice_width() - 1) as f64);
    let row = ((c.y + offset[1]) / g)
        .floor()
        .clamp(0.0, (size.lattice_height() - 1) as f64);
    Ok(Cell::new(col as usize, row as usize))
}

/// Confident cells of one class with their confidence.
pub type ScoredCells = BTreeMap<Cell, f64>;

/// Cells at or above `threshold` for every road-marking class. With a
/// regression map each cell moves to its regressed anchor; when several cells
/// land on one anchor the anchor keeps the highest confidence.
pub fn sample_cells(
    map: &ConfidenceMap,
    regression: Option<&GridRegressionMap>,
    size: &ImageSize,
    threshold: f64,
) -> Result<BTreeMap<ClassLabel, ScoredCells>> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::Validation(format!(
            "marking threshold {threshold} must lie in (0, 1)"
        )));
    }
    if map.channels() < ClassLabel::COUNT {
        return Err(Error::Shape(format!(
            "class map needs {} channels, got {}",
            ClassLabel::COUNT,
            map.channels()
        )));
    }
    if map.width() != size.lattice_width() || map.height() != size.lattice_height() {
        return Err(Error::Shape("class map does not match the lattice".into()));
    }
    if let Some(r) = regression {
        if r.width != map.width() || r.height != map.height() {
            return Err(Error::Shape("regression map does not match the class map".into()));
        }
    }
    let w = map.width();
    let mut out = BTreeMap::new();
    for label in ClassLabel::road_markings() {
        let mut cells = ScoredCells::new();
        for (i, &s) in map.channel(label.id() as usize).iter().enumerate() {
            if s < threshold {
                continue;
            }
            let cell = Cell::new(i % w, i / w);
            let target = match regression {
                Some(r) => reanchor(cell, r.get(cell), size)?,
                None => cell,
            };
            let e = cells.entry(target).or_insert(s);
            if s > *e {
                *e = s;
            }
        }
        if !cells.is_empty() {
            out.insert(label, cells);
        }
    }
    Ok(out)
}

/// One detected road marking.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkingInstance {
    pub label: ClassLabel,
    pub cells: BTreeSet<Cell>,
    /// Tight pixel box `[x0, y0, x1, y1)` over the member cells; `None` for
    /// classes reported as raw cell sets.
    pub bbox: Option<[u32; 4]>,
    /// Mean member confidence.
    pub score: f64,
}

impl MarkingInstance {
    pub fn to_json(&self) -> MarkingJson {
        MarkingJson {
            label: self.label,
            bbox: self.bbox,
            cells: self.cells.iter().map(|c| [c.row, c.col]).collect(),
            score: self.score,
        }
    }
}

/// Serialized instance: `{"label", "box": [x0, y0, x1, y1] | null, "cells": [[r, c], ...], "score"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkingJson {
    pub label: ClassLabel,
    #[serde(rename = "box")]
    pub bbox: Option<[u32; 4]>,
    pub cells: Vec<[usize; 2]>,
    pub score: f64,
}

impl MarkingJson {
    pub fn cell_set(&self) -> BTreeSet<Cell> {
        self.cells.iter().map(|&[r, c]| Cell::new(c, r)).collect()
    }
}

/// Classes localized by their raw cells, without region merging.
pub fn reported_as_cells(label: ClassLabel) -> bool {
    matches!(label, ClassLabel::Crosswalk | ClassLabel::SafetyZone)
}

fn corners(cell: Cell) -> [(usize, usize); 4] {
    let (c, r) = (cell.col, cell.row);
    [(c, r), (c + 1, r), (c, r + 1), (c + 1, r + 1)]
}

fn bounding_box(cells: &BTreeSet<Cell>, grid: u32) -> [u32; 4] {
    let c0 = cells.iter().map(|c| c.col).min().unwrap_or(0) as u32;
    let c1 = cells.iter().map(|c| c.col).max().unwrap_or(0) as u32 + 1;
    let r0 = cells.iter().map(|c| c.row).min().unwrap_or(0) as u32;
    let r1 = cells.iter().map(|c| c.row).max().unwrap_or(0) as u32 + 1;
    [c0 * grid, r0 * grid, c1 * grid, r1 * grid]
}

/// Groups the cells of one class into instances.
///
/// Starting from the first unassigned cell, the region repeatedly absorbs every
/// cell that shares a corner point with it, until no neighbour of the same
/// class remains (8-connectivity on the lattice). Crosswalks and safety zones
/// come back as a single raw cell set without a box.
pub fn merge_cells(cells: &ScoredCells, label: ClassLabel, size: &ImageSize) -> Vec<MarkingInstance> {
    if cells.is_empty() {
        return Vec::new();
    }
    let mean = |set: &BTreeSet<Cell>| set.iter().map(|c| cells[c]).sum::<f64>() / set.len() as f64;
    if reported_as_cells(label) {
        let set: BTreeSet<Cell> = cells.keys().copied().collect();
        let score = mean(&set);
        return vec![MarkingInstance {
            label,
            cells: set,
            bbox: None,
            score,
        }];
    }
    // corner point -> cells touching it
    let mut by_corner: BTreeMap<(usize, usize), Vec<Cell>> = BTreeMap::new();
    for &c in cells.keys() {
        for k in corners(c) {
            by_corner.entry(k).or_default().push(c);
        }
    }
    let mut assigned: BTreeSet<Cell> = BTreeSet::new();
    let mut out = Vec::new();
    for &seed in cells.keys() {
        if assigned.contains(&seed) {
            continue;
        }
        let mut region = BTreeSet::from([seed]);
        assigned.insert(seed);
        let mut frontier = VecDeque::from([seed]);
        while let Some(c) = frontier.pop_front() {
            for k in corners(c) {
                for &n in &by_corner[&k] {
                    if assigned.insert(n) {
                        region.insert(n);
                        frontier.push_back(n);
                    }
                }
            }
        }
        let score = mean(&region);
        out.push(MarkingInstance {
            label,
            bbox: Some(bounding_box(&region, size.grid)),
            cells: region,
            score,
        });
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarkingConfig {
    pub threshold: f64,
    /// Use the regression channels when the input provides them.
    pub use_regression: bool,
}

impl Default for MarkingConfig {
    fn default() -> Self {
        MarkingConfig {
            threshold: 0.5,
            use_regression: true,
        }
    }
}

impl MarkingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Validation("markings.threshold out of range".into()));
        }
        Ok(())
    }
}

/// Road-marking stage for one frame; instances ordered by label then first cell.
pub fn extract_markings(
    map: &ConfidenceMap,
    regression: Option<&GridRegressionMap>,
    size: &ImageSize,
    cfg: &MarkingConfig,
) -> Result<Vec<MarkingInstance>> {
    cfg.validate()?;
    let regression = regression.filter(|_| cfg.use_regression);
    let per_class = sample_cells(map, regression, size, cfg.threshold)?;
    Ok(per_class
        .iter()
        .flat_map(|(label, cells)| merge_cells(cells, *label, size))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn size() -> ImageSize {
        ImageSize::default()
    }

    fn scored(cells: &[(usize, usize)]) -> ScoredCells {
        cells.iter().map(|&(c, r)| (Cell::new(c, r), 0.9)).collect()
    }

    #[test]
    fn sampling_examples() {
        let mut m = ConfidenceMap::zeros(17, 60, 80);
        m.set(ClassLabel::StopLine.id() as usize, 3, 4, 0.9);
        let got = sample_cells(&m, None, &size(), 0.5).unwrap();
        assert_eq!(got.len(), 1);
        assert_eq!(
            got[&ClassLabel::StopLine].keys().copied().collect::<Vec<_>>(),
            vec![Cell::new(4, 3)]
        );

        let mut low = ConfidenceMap::zeros(17, 60, 80);
        for l in ClassLabel::road_markings() {
            low.channel_mut(l.id() as usize).fill(0.4);
        }
        assert!(sample_cells(&low, None, &size(), 0.5).unwrap().is_empty());
    }

    #[test]
    fn regression_moves_cell_right() {
        // 3x3 lattice, center cell regressed one cell (8 px) to the right:
        // center (12, 12) + (8, 0) = (20, 12) -> cell (2, 1).
        let s = ImageSize::new(24, 24, 8).unwrap();
        let mut m = ConfidenceMap::zeros(17, 3, 3);
        m.set(ClassLabel::StraightArrow.id() as usize, 1, 1, 0.9);
        let mut reg = GridRegressionMap::zeros(3, 3);
        reg.set(Cell::new(1, 1), [8.0, 0.0]);
        let got = sample_cells(&m, Some(&reg), &s, 0.5).unwrap();
        assert_eq!(
            got[&ClassLabel::StraightArrow]
                .keys()
                .copied()
                .collect::<Vec<_>>(),
            vec![Cell::new(2, 1)]
        );
    }

    #[test]
    fn regression_offsets_are_bounded() {
        assert!(GridRegressionMap::new(1, 1, vec![[12.0, 0.0]], 8).is_err());
        assert!(GridRegressionMap::new(1, 1, vec![[f64::NAN, 0.0]], 8).is_err());
        assert!(GridRegressionMap::new(1, 1, vec![[8.0, 8.0]], 8).is_ok());
    }

    #[test]
    fn block_merges_into_one_box() {
        let inst = merge_cells(
            &scored(&[(5, 5), (6, 5), (5, 6), (6, 6)]),
            ClassLabel::StraightArrow,
            &size(),
        );
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].cells.len(), 4);
        let [x0, y0, x1, y1] = inst[0].bbox.unwrap();
        assert_eq!((x1 - x0, y1 - y0), (16, 16));
        assert_eq!([x0, y0], [40, 40]);
    }

    #[test]
    fn separated_cells_stay_apart() {
        let inst = merge_cells(&scored(&[(5, 5), (8, 5)]), ClassLabel::StopLine, &size());
        assert_eq!(inst.len(), 2);
        let diag = merge_cells(&scored(&[(5, 5), (6, 6)]), ClassLabel::StopLine, &size());
        assert_eq!(diag.len(), 1);
    }

    #[test]
    fn crosswalk_is_reported_raw() {
        let cells: Vec<(usize, usize)> = (0..10).map(|k| (k * 7, (k * 13) % 60)).collect();
        let inst = merge_cells(&scored(&cells), ClassLabel::Crosswalk, &size());
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].cells.len(), 10);
        assert!(inst[0].bbox.is_none());
    }

    #[test]
    fn score_is_mean() {
        let mut cells = scored(&[(1, 1), (2, 1)]);
        cells.insert(Cell::new(2, 1), 0.5);
        let inst = merge_cells(&cells, ClassLabel::SpeedBump, &size());
        assert!((inst[0].score - 0.7).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn merging_partitions_and_is_idempotent(
            raw in proptest::collection::btree_set((0usize..20, 0usize..15), 0..80),
            raw_label in prop::bool::ANY,
        ) {
            let label = if raw_label { ClassLabel::StopLine } else { ClassLabel::SafetyZone };
            let cells = scored(&raw.iter().copied().collect::<Vec<_>>());
            let inst = merge_cells(&cells, label, &size());
            let mut seen = BTreeSet::new();
            for i in &inst {
                prop_assert!(!i.cells.is_empty());
                for c in &i.cells {
                    prop_assert!(seen.insert(*c));
                }
                let again = merge_cells(&i.cells.iter().map(|c| (*c, cells[c])).collect(), label, &size());
                prop_assert_eq!(again.len(), 1);
                prop_assert_eq!(&again[0], i);
            }
            prop_assert_eq!(seen.len(), cells.len());
        }
    }
}
