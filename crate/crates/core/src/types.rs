//! Domain types shared by every stage: the 17-class taxonomy, lattice geometry,
//! dense confidence maps, grid masks and frame annotations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Whether a class describes a lane line or a painted road marking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelKind {
    Lane,
    RoadMarking,
}

/// One of the 17 lane and road-marking classes. The discriminant is the
/// stable class id and doubles as the channel index in class confidence maps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[repr(u8)]
pub enum ClassLabel {
    SingleWhite = 0,
    DashedWhite = 1,
    DoubleWhite = 2,
    SingleYellow = 3,
    DashedYellow = 4,
    DoubleYellow = 5,
    DashedBlue = 6,
    Zigzag = 7,
    StopLine = 8,
    LeftArrow = 9,
    RightArrow = 10,
    StraightArrow = 11,
    UturnArrow = 12,
    SpeedBump = 13,
    Crosswalk = 14,
    SafetyZone = 15,
    OtherMarkings = 16,
}

impl ClassLabel {
    pub const COUNT: usize = 17;
    pub const LANE_COUNT: usize = 8;

    pub const ALL: [ClassLabel; 17] = [
        ClassLabel::SingleWhite,
        ClassLabel::DashedWhite,
        ClassLabel::DoubleWhite,
        ClassLabel::SingleYellow,
        ClassLabel::DashedYellow,
        ClassLabel::DoubleYellow,
        ClassLabel::DashedBlue,
        ClassLabel::Zigzag,
        ClassLabel::StopLine,
        ClassLabel::LeftArrow,
        ClassLabel::RightArrow,
        ClassLabel::StraightArrow,
        ClassLabel::UturnArrow,
        ClassLabel::SpeedBump,
        ClassLabel::Crosswalk,
        ClassLabel::SafetyZone,
        ClassLabel::OtherMarkings,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<ClassLabel> {
        Self::ALL.get(usize::from(id)).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            ClassLabel::SingleWhite => "single_white",
            ClassLabel::DashedWhite => "dashed_white",
            ClassLabel::DoubleWhite => "double_white",
            ClassLabel::SingleYellow => "single_yellow",
            ClassLabel::DashedYellow => "dashed_yellow",
            ClassLabel::DoubleYellow => "double_yellow",
            ClassLabel::DashedBlue => "dashed_blue",
            ClassLabel::Zigzag => "zigzag",
            ClassLabel::StopLine => "stop_line",
            ClassLabel::LeftArrow => "left_arrow",
            ClassLabel::RightArrow => "right_arrow",
            ClassLabel::StraightArrow => "straight_arrow",
            ClassLabel::UturnArrow => "uturn_arrow",
            ClassLabel::SpeedBump => "speed_bump",
            ClassLabel::Crosswalk => "crosswalk",
            ClassLabel::SafetyZone => "safety_zone",
            ClassLabel::OtherMarkings => "other_markings",
        }
    }

    pub fn kind(self) -> LabelKind {
        if (self as u8) < Self::LANE_COUNT as u8 {
            LabelKind::Lane
        } else {
            LabelKind::RoadMarking
        }
    }

    pub fn is_lane(self) -> bool {
        self.kind() == LabelKind::Lane
    }

    /// Looks a label up by its snake_case identifier.
    pub fn by_name(name: &str) -> Result<ClassLabel> {
        Self::ALL
            .iter()
            .copied()
            .find(|l| l.name() == name)
            .ok_or_else(|| Error::UnknownLabel {
                name: name.to_string(),
                valid: Self::ALL.iter().map(|l| l.name()).collect::<Vec<_>>().join(", "),
            })
    }

    /// Label seen after a horizontal mirror: left and right arrows swap.
    pub fn mirrored(self) -> ClassLabel {
        match self {
            ClassLabel::LeftArrow => ClassLabel::RightArrow,
            ClassLabel::RightArrow => ClassLabel::LeftArrow,
            other => other,
        }
    }

    pub fn lanes() -> impl Iterator<Item = ClassLabel> {
        Self::ALL.into_iter().filter(|l| l.is_lane())
    }

    pub fn road_markings() -> impl Iterator<Item = ClassLabel> {
        Self::ALL.into_iter().filter(|l| !l.is_lane())
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClassLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClassLabel::by_name(s)
    }
}

impl Serialize for ClassLabel {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for ClassLabel {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        ClassLabel::by_name(&s).map_err(serde::de::Error::custom)
    }
}

/// Vanishing-point annotation difficulty. `None` means the frame has no VP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum VpDifficulty {
    Easy,
    Hard,
    None,
}

impl VpDifficulty {
    pub fn as_str(self) -> &'static str {
        match self {
            VpDifficulty::Easy => "EASY",
            VpDifficulty::Hard => "HARD",
            VpDifficulty::None => "NONE",
        }
    }
}

/// A point in continuous pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A lattice cell. Ordering is row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    /// Cell at column `col` (x) and row `row` (y).
    pub const fn new(col: usize, row: usize) -> Self {
        Cell { row, col }
    }

    pub fn chebyshev(self, other: Cell) -> usize {
        self.row.abs_diff(other.row).max(self.col.abs_diff(other.col))
    }
}

/// Image dimensions in pixels together with the lattice cell side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImageSize {
    pub width: u32,
    pub height: u32,
    pub grid: u32,
}

impl Default for ImageSize {
    fn default() -> Self {
        ImageSize {
            width: 640,
            height: 480,
            grid: 8,
        }
    }
}

impl ImageSize {
    pub fn new(width: u32, height: u32, grid: u32) -> Result<Self> {
        let size = ImageSize { width, height, grid };
        size.validate()?;
        Ok(size)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.width == 0 || self.height == 0 {
            return Err(Error::Validation(format!(
                "image size {}x{} with grid {} must be positive",
                self.width, self.height, self.grid
            )));
        }
        if !self.width.is_multiple_of(self.grid) || !self.height.is_multiple_of(self.grid) {
            return Err(Error::Validation(format!(
                "image size {}x{} is not divisible by grid {}",
                self.width, self.height, self.grid
            )));
        }
        Ok(())
    }

    pub fn lattice_width(&self) -> usize {
        (self.width / self.grid) as usize
    }

    pub fn lattice_height(&self) -> usize {
        (self.height / self.grid) as usize
    }

    pub fn cell_count(&self) -> usize {
        self.lattice_width() * self.lattice_height()
    }

    pub fn contains_cell(&self, cell: Cell) -> bool {
        cell.col < self.lattice_width() && cell.row < self.lattice_height()
    }

    pub fn contains_point(&self, p: Point) -> bool {
        p.x >= 0.0 && p.y >= 0.0 && p.x < f64::from(self.width) && p.y < f64::from(self.height)
    }

    /// Pixel-space center of a lattice cell.
    pub fn cell_center(&self, cell: Cell) -> Result<Point> {
        if !self.contains_cell(cell) {
            return Err(Error::OutOfBounds {
                col: cell.col as i64,
                row: cell.row as i64,
                width: self.lattice_width(),
                height: self.lattice_height(),
            });
        }
        let g = f64::from(self.grid);
        Ok(Point::new(
            cell.col as f64 * g + g / 2.0,
            cell.row as f64 * g + g / 2.0,
        ))
    }

    /// Quantizes a pixel-space point to the cell containing it.
    pub fn cell_of(&self, p: Point) -> Option<Cell> {
        if !self.contains_point(p) {
            return None;
        }
        let g = f64::from(self.grid);
        Some(Cell::new((p.x / g).floor() as usize, (p.y / g).floor() as usize))
    }

    /// Cell of an integer pixel index.
    pub fn cell_of_pixel(&self, x: u32, y: u32) -> Cell {
        Cell::new((x / self.grid) as usize, (y / self.grid) as usize)
    }
}

/// Center of `cell` in pixel coordinates.
pub fn cell_center(cell: Cell, size: &ImageSize) -> Result<Point> {
    size.cell_center(cell)
}

/// Dense `channels × height × width` map of real scores, channel-major and
/// row-major within a channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ConfidenceMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} map",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at flat index {i}")));
        }
        Ok(ConfidenceMap {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        ConfidenceMap {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    /// Builds a map from an unchecked buffer; the values may contain NaN.
    /// Consumers that care (e.g. the VP decoder) re-check.
    pub fn from_raw(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} map",
                data.len()
            )));
        }
        Ok(ConfidenceMap {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, channel: usize, row: usize, col: usize) -> usize {
        (channel * self.height + row) * self.width + col
    }

    #[inline]
    pub fn get(&self, channel: usize, row: usize, col: usize) -> f64 {
        self.data[self.index(channel, row, col)]
    }

    #[inline]
    pub fn set(&mut self, channel: usize, row: usize, col: usize, value: f64) {
        let i = self.index(channel, row, col);
        self.data[i] = value;
    }

    pub fn channel(&self, channel: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[channel * n..(channel + 1) * n]
    }

    pub fn channel_mut(&mut self, channel: usize) -> &mut [f64] {
        let n = self.height * self.width;
        &mut self.data[channel * n..(channel + 1) * n]
    }

    /// Copies out channels `start..start + count` as a new map.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<ConfidenceMap> {
        if start + count > self.channels {
            return Err(Error::Shape(format!(
                "channels {start}..{} requested from a {}-channel map",
                start + count,
                self.channels
            )));
        }
        let n = self.height * self.width;
        Ok(ConfidenceMap {
            channels: count,
            height: self.height,
            width: self.width,
            data: self.data[start * n..(start + count) * n].to_vec(),
        })
    }

    /// Stacks maps of equal lattice size along the channel axis.
    pub fn concat(maps: &[&ConfidenceMap]) -> Result<ConfidenceMap> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Shape("no maps to concatenate".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::new();
        let mut channels = 0;
        for m in maps {
            if m.height != h || m.width != w {
                return Err(Error::Shape(format!(
                    "cannot stack {}x{} with {h}x{w}",
                    m.height, m.width
                )));
            }
            channels += m.channels;
            data.extend_from_slice(&m.data);
        }
        Ok(ConfidenceMap {
            channels,
            height: h,
            width: w,
            data,
        })
    }

    /// Checks the probability invariant: every value finite and in `[0, 1]`.
    pub fn validate_probabilities(&self) -> Result<()> {
        match self
            .data
            .iter()
            .position(|v| !v.is_finite() || !(0.0..=1.0).contains(v))
        {
            Some(i) => Err(Error::Data(format!(
                "value {} at flat index {i} is not a probability",
                self.data[i]
            ))),
            None => Ok(()),
        }
    }

    /// Horizontal mirror of every channel (column `c` becomes `width - 1 - c`).
    pub fn mirrored(&self) -> ConfidenceMap {
        let mut out = self.clone();
        for ch in 0..self.channels {
            for row in 0..self.height {
                for col in 0..self.width {
                    out.set(ch, row, self.width - 1 - col, self.get(ch, row, col));
                }
            }
        }
        out
    }
}

/// The set of class labels carried by one lattice cell, as a 17-bit mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct LabelSet(u32);

impl LabelSet {
    pub const MASK: u32 = (1 << ClassLabel::COUNT) - 1;

    pub const fn empty() -> Self {
        LabelSet(0)
    }

    pub fn from_bits(bits: u32) -> Result<Self> {
        if bits & !Self::MASK != 0 {
            return Err(Error::Data(format!("label bits {bits:#x} exceed 17 classes")));
        }
        Ok(LabelSet(bits))
    }

    pub fn bits(self) -> u32 {
        self.0
    }

    pub fn insert(&mut self, label: ClassLabel) {
        self.0 |= 1 << label.id();
    }

    pub fn contains(self, label: ClassLabel) -> bool {
        self.0 & (1 << label.id()) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn union(self, other: LabelSet) -> LabelSet {
        LabelSet(self.0 | other.0)
    }

    pub fn has_lane(self) -> bool {
        self.0 & ((1 << ClassLabel::LANE_COUNT) - 1) != 0
    }

    pub fn iter(self) -> impl Iterator<Item = ClassLabel> {
        ClassLabel::ALL.into_iter().filter(move |l| self.contains(*l))
    }

    pub fn mirrored(self) -> LabelSet {
        let mut out = LabelSet::empty();
        for l in self.iter() {
            out.insert(l.mirrored());
        }
        out
    }
}

impl FromIterator<ClassLabel> for LabelSet {
    fn from_iter<I: IntoIterator<Item = ClassLabel>>(iter: I) -> Self {
        let mut s = LabelSet::empty();
        for l in iter {
            s.insert(l);
        }
        s
    }
}

/// Grid-level annotation: a label set per lattice cell. Empty set is background.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridMask {
    width: usize,
    height: usize,
    cells: Vec<LabelSet>,
}

impl GridMask {
    pub fn new(width: usize, height: usize) -> Self {
        GridMask {
            width,
            height,
            cells: vec![LabelSet::empty(); width * height],
        }
    }

    pub fn for_size(size: &ImageSize) -> Self {
        Self::new(size.lattice_width(), size.lattice_height())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, cell: Cell) -> LabelSet {
        self.cells[cell.row * self.width + cell.col]
    }

    pub fn insert(&mut self, cell: Cell, label: ClassLabel) {
        self.cells[cell.row * self.width + cell.col].insert(label);
    }

    pub fn cells(&self) -> &[LabelSet] {
        &self.cells
    }

    /// Iterates `(cell, labels)` over non-empty cells in row-major order.
    pub fn labeled_cells(&self) -> impl Iterator<Item = (Cell, LabelSet)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|&(_i, s)| !s.is_empty())
            .map(|(i, s)| (Cell::new(i % self.width, i / self.width), *s))
    }

    pub fn is_background(&self) -> bool {
        self.cells.iter().all(|s| s.is_empty())
    }

    /// Mirror columns and swap direction-dependent labels.
    pub fn mirrored(&self) -> GridMask {
        let mut out = GridMask::new(self.width, self.height);
        for row in 0..self.height {
            for col in 0..self.width {
                out.cells[row * self.width + (self.width - 1 - col)] =
                    self.cells[row * self.width + col].mirrored();
            }
        }
        out
    }

    /// Compact JSON form: dimensions plus run-length encoded hex bitmasks.
    pub fn to_json(&self) -> GridMaskJson {
        let mut runs: Vec<(String, usize)> = Vec::new();
        for s in &self.cells {
            let hex = format!("{:05x}", s.bits());
            match runs.last_mut() {
                Some((h, n)) if *h == hex => *n += 1,
                _ => runs.push((hex, 1)),
            }
        }
        GridMaskJson {
            width: self.width,
            height: self.height,
            runs,
        }
    }

    pub fn from_json(json: &GridMaskJson) -> Result<Self> {
        let mut cells = Vec::with_capacity(json.width * json.height);
        for (hex, n) in &json.runs {
            let bits = u32::from_str_radix(hex, 16)
                .map_err(|e| Error::Format(format!("bad cell bitmask `{hex}`: {e}")))?;
            let set = LabelSet::from_bits(bits)?;
            cells.extend(std::iter::repeat_n(set, *n));
        }
        if cells.len() != json.width * json.height {
            return Err(Error::Format(format!(
                "runs cover {} cells, expected {}",
                cells.len(),
                json.width * json.height
            )));
        }
        Ok(GridMask {
            width: json.width,
            height: json.height,
            cells,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridMaskJson {
    pub width: usize,
    pub height: usize,
    pub runs: Vec<(String, usize)>,
}

/// Single-channel boolean lattice (the circular VP baseline target).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub cells: Vec<bool>,
}

impl BinaryMask {
    pub fn count(&self) -> usize {
        self.cells.iter().filter(|c| **c).count()
    }

    pub fn get(&self, cell: Cell) -> bool {
        self.cells[cell.row * self.width + cell.col]
    }
}

/// Image dimensions as they appear in annotation files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageDims {
    pub w: u32,
    pub h: u32,
}

/// One annotated object: a class label and its pixel polygon.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkedObject {
    pub label: ClassLabel,
    pub polygon: Vec<[i32; 2]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VpAnnotation {
    pub x: f64,
    pub y: f64,
    pub difficulty: VpDifficulty,
}

impl VpAnnotation {
    pub fn point(&self) -> Point {
        Point::new(self.x, self.y)
    }
}

/// Polygons, labels and the vanishing point for one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameAnnotation {
    pub image: ImageDims,
    #[serde(default)]
    pub objects: Vec<MarkedObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vp: Option<VpAnnotation>,
}

impl FrameAnnotation {
    pub fn new(image: ImageDims) -> Self {
        FrameAnnotation {
            image,
            objects: Vec::new(),
            vp: None,
        }
    }

    pub fn vp_difficulty(&self) -> VpDifficulty {
        self.vp.map_or(VpDifficulty::None, |v| v.difficulty)
    }

    pub fn vp_point(&self) -> Option<Point> {
        self.vp.map(|v| v.point())
    }

    pub fn image_size(&self, grid: u32) -> Result<ImageSize> {
        ImageSize::new(self.image.w, self.image.h, grid)
    }

    /// Checks vertex bounds and the VP/difficulty pairing.
    pub fn validate(&self) -> Result<()> {
        for (i, obj) in self.objects.iter().enumerate() {
            if obj.polygon.is_empty() {
                return Err(Error::Validation(format!("object {i} has an empty polygon")));
            }
            for &[x, y] in &obj.polygon {
                if x < 0 || y < 0 || x as u32 >= self.image.w || y as u32 >= self.image.h {
                    return Err(Error::Validation(format!(
                        "object {i} ({}) vertex ({x}, {y}) outside {}x{} image",
                        obj.label, self.image.w, self.image.h
                    )));
                }
            }
        }
        if let Some(vp) = &self.vp {
            if vp.difficulty == VpDifficulty::None {
                return Err(Error::Validation(
                    "vp coordinates given with difficulty NONE".into(),
                ));
            }
            if !vp.x.is_finite()
                || !vp.y.is_finite()
                || vp.x < 0.0
                || vp.y < 0.0
                || vp.x >= f64::from(self.image.w)
                || vp.y >= f64::from(self.image.h)
            {
                return Err(Error::Validation(format!(
                    "vp ({}, {}) outside {}x{} image",
                    vp.x, vp.y, self.image.w, self.image.h
                )));
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let ann: FrameAnnotation = serde_json::from_str(s)?;
        ann.validate()?;
        Ok(ann)
    }
}
