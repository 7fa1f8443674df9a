//! Pixel polygons to grid-level masks, and the horizontal flip augmentation.
//!
//! A cell receives a polygon's label when at least one rasterized pixel of the
//! polygon falls inside it. Rasterization is exact integer arithmetic:
//!
//! - polygons with three or more vertices: boundary edges plus even-odd interior
//!   (pixel `(x, y)` is tested at its index position, rows use the half-open
//!   `[y_min, y_max)` crossing rule);
//! - two-vertex polylines: the segment alone.
//!
//! Segments are drawn with an 8-connected DDA that emits both candidate pixels
//! when the exact minor coordinate lies halfway between them. That makes the
//! pixel set independent of endpoint order and exactly symmetric under
//! horizontal mirroring.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Cell, ClassLabel, FrameAnnotation, GridMask, ImageSize, MarkedObject, VpDifficulty};

/// Calls `visit` for every pixel of the segment from `a` to `b`.
pub fn rasterize_segment(a: [i32; 2], b: [i32; 2], mut visit: impl FnMut(i32, i32)) {
    let (dx, dy) = (i64::from(b[0] - a[0]), i64::from(b[1] - a[1]));
    let n = dx.abs().max(dy.abs());
    if n == 0 {
        visit(a[0], a[1]);
        return;
    }
    let x_major = dx.abs() >= dy.abs();
    for i in 0..=n {
        let (major, minor0, dminor) = if x_major {
            (i64::from(a[0]) + i * dx.signum(), i64::from(a[1]), dy)
        } else {
            (i64::from(a[1]) + i * dy.signum(), i64::from(a[0]), dx)
        };
        let num = i * dminor;
        let q = num.div_euclid(n);
        let r = num.rem_euclid(n);
        let mut emit = |minor: i64| {
            if x_major {
                visit(major as i32, minor as i32);
            } else {
                visit(minor as i32, major as i32);
            }
        };
        match (2 * r).cmp(&n) {
            std::cmp::Ordering::Less => emit(minor0 + q),
            std::cmp::Ordering::Greater => emit(minor0 + q + 1),
            std::cmp::Ordering::Equal => {
                emit(minor0 + q);
                emit(minor0 + q + 1);
            }
        }
    }
}

/// Exact rational `num / den` with `den > 0`.
#[derive(Clone, Copy, Debug)]
struct Ratio {
    num: i64,
    den: i64,
}

impl Ratio {
    fn cmp(&self, other: &Ratio) -> std::cmp::Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }

    fn ceil(&self) -> i64 {
        -(-self.num).div_euclid(self.den)
    }

    fn floor(&self) -> i64 {
        self.num.div_euclid(self.den)
    }
}

/// Calls `visit` for every pixel covered by an object outline. Pixels may be
/// visited more than once.
pub fn rasterize_object(polygon: &[[i32; 2]], mut visit: impl FnMut(i32, i32)) -> Result<()> {
    match polygon.len() {
        0 | 1 => Err(Error::Validation(format!(
            "degenerate polygon with {} vertices",
            polygon.len()
        ))),
        2 => {
            rasterize_segment(polygon[0], polygon[1], visit);
            Ok(())
        }
        n => {
            for i in 0..n {
                rasterize_segment(polygon[i], polygon[(i + 1) % n], &mut visit);
            }
            let y_min = polygon.iter().map(|p| p[1]).min().unwrap_or(0);
            let y_max = polygon.iter().map(|p| p[1]).max().unwrap_or(0);
            let mut crossings: Vec<Ratio> = Vec::new();
            for y in y_min..y_max {
                crossings.clear();
                for i in 0..n {
                    let (p, q) = (polygon[i], polygon[(i + 1) % n]);
                    let (lo, hi) = if p[1] < q[1] { (p, q) } else { (q, p) };
                    if lo[1] == hi[1] || y < lo[1] || y >= hi[1] {
                        continue;
                    }
                    let den = i64::from(hi[1] - lo[1]);
                    let num = i64::from(lo[0]) * den + i64::from(y - lo[1]) * i64::from(hi[0] - lo[0]);
                    crossings.push(Ratio { num, den });
                }
                crossings.sort_by(|a, b| a.cmp(b));
                for pair in crossings.chunks_exact(2) {
                    for x in pair[0].ceil()..=pair[1].floor() {
                        visit(x as i32, y);
                    }
                }
            }
            Ok(())
        }
    }
}

/// Lattice cells touched by one object.
pub fn object_cells(obj: &MarkedObject, size: &ImageSize) -> Result<BTreeSet<Cell>> {
    let mut cells = BTreeSet::new();
    let (w, h) = (size.width as i32, size.height as i32);
    let mut out_of_bounds = None;
    rasterize_object(&obj.polygon, |x, y| {
        if x < 0 || y < 0 || x >= w || y >= h {
            out_of_bounds = Some((x, y));
        } else {
            cells.insert(size.cell_of_pixel(x as u32, y as u32));
        }
    })?;
    if let Some((x, y)) = out_of_bounds {
        return Err(Error::Validation(format!(
            "{} rasterizes to pixel ({x}, {y}) outside the image",
            obj.label
        )));
    }
    Ok(cells)
}

fn check_frame(ann: &FrameAnnotation, size: &ImageSize) -> Result<()> {
    size.validate()?;
    if ann.image.w != size.width || ann.image.h != size.height {
        return Err(Error::Validation(format!(
            "annotation is {}x{} but the configured image is {}x{}",
            ann.image.w, ann.image.h, size.width, size.height
        )));
    }
    ann.validate()
}

/// Projects pixel polygons onto the lattice; each cell keeps every label that touches it.
pub fn encode_grid(ann: &FrameAnnotation, size: &ImageSize) -> Result<GridMask> {
    check_frame(ann, size)?;
    let mut mask = GridMask::for_size(size);
    for obj in &ann.objects {
        for cell in object_cells(obj, size)? {
            mask.insert(cell, obj.label);
        }
    }
    Ok(mask)
}

/// Per-object cell sets, in annotation order. Used as marking ground truth.
pub fn encode_instances(
    ann: &FrameAnnotation,
    size: &ImageSize,
) -> Result<Vec<(ClassLabel, BTreeSet<Cell>)>> {
    check_frame(ann, size)?;
    ann.objects
        .iter()
        .map(|o| Ok((o.label, object_cells(o, size)?)))
        .collect()
}

/// Mirrors the frame left to right: `x ↦ width − 1 − x` for vertices and the
/// VP, left/right arrows swapped. VP difficulty is kept.
pub fn flip_horizontal(ann: &FrameAnnotation, size: &ImageSize) -> Result<FrameAnnotation> {
    check_frame(ann, size)?;
    let w = size.width as i32;
    let objects = ann
        .objects
        .iter()
        .map(|o| MarkedObject {
            label: o.label.mirrored(),
            polygon: o.polygon.iter().map(|&[x, y]| [w - 1 - x, y]).collect(),
        })
        .collect();
    let vp = ann.vp.map(|mut v| {
        v.x = f64::from(size.width) - 1.0 - v.x;
        v
    });
    Ok(FrameAnnotation {
        image: ann.image,
        objects,
        vp,
    })
}

/// Per-class instance counts and VP difficulty counts over a set of frames.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DatasetStats {
    pub frames: usize,
    pub instances: BTreeMap<ClassLabel, usize>,
    pub vp: BTreeMap<VpDifficulty, usize>,
}

impl DatasetStats {
    pub fn add(&mut self, ann: &FrameAnnotation) {
        self.frames += 1;
        for obj in &ann.objects {
            *self.instances.entry(obj.label).or_default() += 1;
        }
        *self.vp.entry(ann.vp_difficulty()).or_default() += 1;
    }

    /// Three column pairs: lane classes, road-marking classes, VP difficulty.
    pub fn table(&self) -> String {
        let count = |l: ClassLabel| self.instances.get(&l).copied().unwrap_or(0);
        let lanes: Vec<(String, usize)> = ClassLabel::lanes()
            .map(|l| (l.name().to_string(), count(l)))
            .collect();
        let marks: Vec<(String, usize)> = ClassLabel::road_markings()
            .map(|l| (l.name().to_string(), count(l)))
            .collect();
        let vps: Vec<(String, usize)> = [VpDifficulty::Easy, VpDifficulty::Hard, VpDifficulty::None]
            .iter()
            .map(|d| (d.as_str().to_string(), self.vp.get(d).copied().unwrap_or(0)))
            .collect();
        let rows = lanes.len().max(marks.len());
        let cell = |col: &[(String, usize)], i: usize| match col.get(i) {
            Some((n, c)) => format!("{n:<16}{c:>8}"),
            None => format!("{:24}", ""),
        };
        let mut out = format!(
            "{:<24} | {:<24} | {}\n",
            "lane", "road marking", "vanishing point"
        );
        out.push_str(&format!("{}\n", "-".repeat(78)));
        for i in 0..rows {
            let line = format!("{} | {} | {}", cell(&lanes, i), cell(&marks, i), cell(&vps, i));
            out.push_str(line.trim_end());
            out.push('\n');
        }
        out.push_str(&format!("frames: {}\n", self.frames));
        out
    }
}
