//! Vanishing-point targets and decoding.
//!
//! Channel order of every 5-channel VP map is `[absence, Q1, Q2, Q3, Q4]` with
//! Q1 lower-right, Q2 lower-left, Q3 upper-right and Q4 upper-left of the VP.
//! Cells on the VP's own row or column fall to the left/upper side (`≤`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{BinaryMask, Cell, ConfidenceMap, ImageSize, Point};

pub const VP_CHANNELS: usize = 5;
pub const ABSENCE: u8 = 0;

/// Per-cell VP channel assignment in `0..=4`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuadrantMask {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<u8>,
}

impl QuadrantMask {
    pub fn get(&self, cell: Cell) -> u8 {
        self.cells[cell.row * self.width + cell.col]
    }

    pub fn count(&self, channel: u8) -> usize {
        self.cells.iter().filter(|c| **c == channel).count()
    }

    /// Hard one-hot map with a 1 in the assigned channel of every cell.
    pub fn to_one_hot(&self) -> ConfidenceMap {
        let mut map = ConfidenceMap::zeros(VP_CHANNELS, self.height, self.width);
        for row in 0..self.height {
            for col in 0..self.width {
                let ch = self.cells[row * self.width + col] as usize;
                map.set(ch, row, col, 1.0);
            }
        }
        map
    }
}

fn check_vp(vp: Point, size: &ImageSize) -> Result<()> {
    size.validate()?;
    if !vp.x.is_finite() || !vp.y.is_finite() || !size.contains_point(vp) {
        return Err(Error::Validation(format!(
            "vanishing point ({}, {}) outside {}x{} image",
            vp.x, vp.y, size.width, size.height
        )));
    }
    Ok(())
}

/// Quadrant channel of `cell` relative to the VP lattice cell.
pub fn quadrant_of(cell: Cell, vp_cell: Cell) -> u8 {
    match (cell.col > vp_cell.col, cell.row > vp_cell.row) {
        (true, true) => 1,
        (false, true) => 2,
        (true, false) => 3,
        (false, false) => 4,
    }
}

/// Hard quadrant mask. Without a VP every cell is absence.
pub fn encode_quadrant(vp: Option<Point>, size: &ImageSize) -> Result<QuadrantMask> {
    size.validate()?;
    let (w, h) = (size.lattice_width(), size.lattice_height());
    let cells = match vp {
        None => vec![ABSENCE; w * h],
        Some(p) => {
            check_vp(p, size)?;
            let vc = size.cell_of(p).expect("checked in bounds");
            (0..h)
                .flat_map(|row| (0..w).map(move |col| quadrant_of(Cell::new(col, row), vc)))
                .collect()
        }
    };
    Ok(QuadrantMask {
        width: w,
        height: h,
        cells,
    })
}

/// Anti-aliased quadrant map: each cell holds the fraction of its area in each
/// quadrant, with the quadrant boundaries through the center of the VP's pixel.
///
/// This is the noiseless map a perfectly trained VP branch would produce at
/// lattice resolution. Unlike the hard one-hot mask it has a unique
/// minimizer of the decoding objective at the VP cell.
pub fn ideal_quadrant_map(vp: Option<Point>, size: &ImageSize) -> Result<ConfidenceMap> {
    size.validate()?;
    let (w, h) = (size.lattice_width(), size.lattice_height());
    let mut map = ConfidenceMap::zeros(VP_CHANNELS, h, w);
    let Some(p) = vp else {
        map.channel_mut(0).fill(1.0);
        return Ok(map);
    };
    check_vp(p, size)?;
    let g = f64::from(size.grid);
    let bx = p.x.floor() + 0.5;
    let by = p.y.floor() + 0.5;
    for row in 0..h {
        let upper = ((by - row as f64 * g) / g).clamp(0.0, 1.0);
        for col in 0..w {
            let left = ((bx - col as f64 * g) / g).clamp(0.0, 1.0);
            map.set(1, row, col, (1.0 - left) * (1.0 - upper));
            map.set(2, row, col, left * (1.0 - upper));
            map.set(3, row, col, (1.0 - left) * upper);
            map.set(4, row, col, left * upper);
        }
    }
    Ok(map)
}

fn check_vp_map(map: &ConfidenceMap) -> Result<()> {
    if map.channels() != VP_CHANNELS {
        return Err(Error::Shape(format!(
            "VP map needs {VP_CHANNELS} channels, got {}",
            map.channels()
        )));
    }
    if map.height() == 0 || map.width() == 0 {
        return Err(Error::Shape("empty VP map".into()));
    }
    if let Some(i) = map.data().iter().position(|v| v.is_nan()) {
        return Err(Error::Data(format!("NaN in VP map at flat index {i}")));
    }
    Ok(())
}

/// `P_avg = (1 − mean(p_0)) / 4`: the per-quadrant confidence expected where
/// all four quadrants meet.
pub fn p_avg(map: &ConfidenceMap) -> Result<f64> {
    check_vp_map(map)?;
    Ok(existence(map) / 4.0)
}

fn existence(map: &ConfidenceMap) -> f64 {
    let absence = map.channel(0);
    1.0 - absence.iter().sum::<f64>() / absence.len() as f64
}

/// Decoding objective `Σ_{n=1..4} (P_avg − p_n)^2` for every cell, row-major.
pub fn vp_objective(map: &ConfidenceMap) -> Result<Vec<f64>> {
    let avg = p_avg(map)?;
    let n = map.height() * map.width();
    let mut out = vec![0.0; n];
    for ch in 1..VP_CHANNELS {
        for (acc, p) in out.iter_mut().zip(map.channel(ch)) {
            let d = avg - p;
            *acc += d * d;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VpDecodeResult {
    pub location: Cell,
    /// `1 − mean(p_0)`: probability that the frame has a VP.
    pub existence: f64,
    pub p_avg: f64,
}

impl VpDecodeResult {
    pub fn is_present(&self, threshold: f64) -> bool {
        self.existence >= threshold
    }

    /// Pixel position of the decoded cell's center.
    pub fn pixel(&self, size: &ImageSize) -> Result<Point> {
        size.cell_center(self.location)
    }
}

/// Locates the cell where the four quadrant confidences are all closest to
/// `P_avg`. Ties go to the first cell in row-major order.
pub fn decode_vp(map: &ConfidenceMap) -> Result<VpDecodeResult> {
    let objective = vp_objective(map)?;
    let mut best = 0;
    for (i, v) in objective.iter().enumerate() {
        if *v < objective[best] {
            best = i;
        }
    }
    let existence = existence(map);
    Ok(VpDecodeResult {
        location: Cell::new(best % map.width(), best / map.width()),
        existence,
        p_avg: existence / 4.0,
    })
}

/// Circular baseline target: cells whose centers lie within `radius` pixels of the VP.
pub fn encode_binary(vp: Option<Point>, radius: f64, size: &ImageSize) -> Result<BinaryMask> {
    size.validate()?;
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::Validation(format!("radius {radius} must be positive")));
    }
    let (w, h) = (size.lattice_width(), size.lattice_height());
    let mut cells = vec![false; w * h];
    if let Some(p) = vp {
        check_vp(p, size)?;
        for row in 0..h {
            for col in 0..w {
                let c = size.cell_center(Cell::new(col, row))?;
                cells[row * w + col] = c.distance(p) <= radius;
            }
        }
    }
    Ok(BinaryMask {
        width: w,
        height: h,
        cells,
    })
}
