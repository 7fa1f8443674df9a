//! Synthetic flat-road scenes with exact ground truth.
//!
//! A pinhole camera at height `h` above a flat ground plane, pitched down by
//! `θ`, looks along `+Z`. A ground point `(X, Z)` (lateral, forward, metres)
//! lands at
//!
//! ```text
//! Zc = h·sinθ + Z·cosθ
//! x  = cx + f·X / Zc
//! y  = cy + f·(h·cosθ − Z·sinθ) / Zc
//! ```
//!
//! so straight lanes meet at `(cx, cy − f·tanθ)`. Lanes follow
//! `X = offset + curvature·Z²`. Lane channels are Gaussian ridges across
//! the lane's image position on every cell row; marking channels are 1 on
//! the marking's cells; VP channels are the anti-aliased quadrant map.
//! Optional corruption: clipped Gaussian noise and Bernoulli clutter in the
//! class channels, and separately controlled clipped Gaussian noise in the VP
//! channels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::annotation::object_cells;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::pipeline::{evaluate_frame, postprocess, EvalPrediction, CLASS_CHANNELS, TENSOR_CHANNELS};
use crate::types::{
    ClassLabel, ConfidenceMap, FrameAnnotation, ImageDims, ImageSize, MarkedObject, Point, VpAnnotation,
    VpDifficulty,
};
use crate::vpp::{ideal_quadrant_map, VP_CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Camera {
    /// Height above ground, metres.
    pub height: f64,
    /// Focal length, pixels.
    pub focal: f64,
    /// Downward pitch, radians.
    pub pitch: f64,
}

impl Default for Camera {
    fn default() -> Self {
        Camera {
            height: 1.5,
            focal: 500.0,
            pitch: 0.08,
        }
    }
}

impl Camera {
    fn principal(size: &ImageSize) -> (f64, f64) {
        (f64::from(size.width) / 2.0, f64::from(size.height) / 2.0)
    }

    pub fn project(&self, x: f64, z: f64, size: &ImageSize) -> Option<Point> {
        let (s, c) = self.pitch.sin_cos();
        let zc = self.height * s + z * c;
        if zc <= 0.0 {
            return None;
        }
        let (cx, cy) = Self::principal(size);
        Some(Point::new(
            cx + self.focal * x / zc,
            cy + self.focal * (self.height * c - z * s) / zc,
        ))
    }

    /// Forward distance of the ground seen at image row `y`; `None` at or above the horizon.
    pub fn ground_depth(&self, y: f64, size: &ImageSize) -> Option<f64> {
        let (s, c) = self.pitch.sin_cos();
        let t = (y - Self::principal(size).1) / self.focal;
        let den = t * c + s;
        (den > 0.0).then(|| self.height * (c - t * s) / den)
    }

    pub fn vanishing_point(&self, size: &ImageSize) -> Point {
        let (cx, cy) = Self::principal(size);
        Point::new(cx, cy - self.focal * self.pitch.tan())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dashes {
    /// Painted length, metres.
    pub length: f64,
    /// Gap between dashes, metres.
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaneSpec {
    pub label: ClassLabel,
    /// Lateral position at the camera, metres (positive to the right).
    pub offset: f64,
    #[serde(default)]
    pub curvature: f64,
    #[serde(default)]
    pub dashes: Option<Dashes>,
}

/// A painted ground rectangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkingSpec {
    pub label: ClassLabel,
    /// Lateral centre, metres.
    pub x: f64,
    /// Near edge distance, metres.
    pub z: f64,
    pub width: f64,
    pub length: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSpec {
    pub image: ImageSize,
    pub camera: Camera,
    pub lanes: Vec<LaneSpec>,
    pub markings: Vec<MarkingSpec>,
    /// Painted lane width, metres.
    pub lane_width: f64,
    /// Lanes are drawn out to this distance, metres.
    pub z_far: f64,
    /// Ridge standard deviation across the lane, pixels.
    pub ridge_sigma: f64,
    /// Standard deviation of the additive noise on the class confidences.
    pub noise: f64,
    /// Standard deviation of the additive noise on the VP confidences.
    pub vp_noise: f64,
    /// Per-value probability of a spurious class response.
    pub clutter: f64,
    pub difficulty: VpDifficulty,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            image: ImageSize::default(),
            camera: Camera::default(),
            lanes: vec![
                LaneSpec {
                    label: ClassLabel::SingleYellow,
                    offset: -1.8,
                    curvature: 0.0,
                    dashes: None,
                },
                LaneSpec {
                    label: ClassLabel::SingleWhite,
                    offset: 1.8,
                    curvature: 0.0,
                    dashes: None,
                },
            ],
            markings: Vec::new(),
            lane_width: 0.12,
            z_far: 150.0,
            ridge_sigma: 4.0,
            noise: 0.0,
            vp_noise: 0.0,
            clutter: 0.0,
            difficulty: VpDifficulty::Easy,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        self.image.validate()?;
        let cam = &self.camera;
        if !(cam.height > 0.0 && cam.focal > 0.0 && cam.pitch > 0.0 && cam.pitch < 1.0) {
            return Err(Error::Validation(
                "camera height, focal and pitch must be positive".into(),
            ));
        }
        let vp = cam.vanishing_point(&self.image);
        if !self.image.contains_point(vp) {
            return Err(Error::Validation(format!(
                "horizon at y = {} is outside the image",
                vp.y
            )));
        }
        for lane in &self.lanes {
            if !lane.label.is_lane() {
                return Err(Error::Validation(format!("{} is not a lane class", lane.label)));
            }
            if let Some(d) = lane.dashes {
                if !(d.length > 0.0 && d.gap >= 0.0) {
                    return Err(Error::Validation("dash length must be positive".into()));
                }
            }
        }
        for m in &self.markings {
            if m.label.is_lane() {
                return Err(Error::Validation(format!(
                    "{} is not a road-marking class",
                    m.label
                )));
            }
            if !(m.width > 0.0 && m.length > 0.0 && m.z > 0.0) {
                return Err(Error::Validation(
                    "marking size and distance must be positive".into(),
                ));
            }
        }
        if !(self.z_far > 0.0) {
            return Err(Error::Geometry("lanes end behind the camera (z_far <= 0)".into()));
        }
        if !(self.lane_width > 0.0 && self.ridge_sigma > 0.0) {
            return Err(Error::Validation(
                "lane_width and ridge_sigma must be positive".into(),
            ));
        }
        for v in [self.noise, self.vp_noise] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Validation("noise levels must be non-negative".into()));
            }
        }
        if !(0.0..=1.0).contains(&self.clutter) {
            return Err(Error::Validation("clutter must be a probability".into()));
        }
        Ok(())
    }

    /// Scenes without lanes have no VP.
    fn difficulty(&self) -> VpDifficulty {
        if self.lanes.is_empty() {
            VpDifficulty::None
        } else {
            self.difficulty
        }
    }

    fn vp(&self) -> Option<Point> {
        (self.difficulty() != VpDifficulty::None).then(|| self.camera.vanishing_point(&self.image))
    }

    /// Image row where lanes end (`z_far`), rounded up to a pixel index.
    fn top_row(&self) -> u32 {
        let p = self
            .camera
            .project(0.0, self.z_far, &self.image)
            .expect("z_far ahead of camera");
        p.y.max(0.0).ceil() as u32
    }

    fn painted(lane: &LaneSpec, z: f64) -> bool {
        lane.dashes
            .is_none_or(|d| z.rem_euclid(d.length + d.gap) < d.length)
    }

    fn lane_x(&self, lane: &LaneSpec, z: f64, dx: f64) -> f64 {
        let x = lane.offset + lane.curvature * z * z + dx;
        self.camera.project(x, z, &self.image).map_or(f64::NAN, |p| p.x)
    }

    fn lane_polygons(&self, lane: &LaneSpec) -> Vec<Vec<[i32; 2]>> {
        let w = f64::from(self.image.width);
        let half = self.lane_width / 2.0;
        let mut runs: Vec<Vec<(i32, i32, i32)>> = Vec::new();
        let mut current: Vec<(i32, i32, i32)> = Vec::new();
        for y in self.top_row()..self.image.height {
            let yc = f64::from(y) + 0.5;
            let visible = self.camera.ground_depth(yc, &self.image).filter(|&z| {
                let x = self.lane_x(lane, z, 0.0);
                Self::painted(lane, z) && x >= 0.0 && x < w
            });
            match visible {
                Some(z) => {
                    let clamp = |x: f64| x.floor().clamp(0.0, w - 1.0) as i32;
                    let l = clamp(self.lane_x(lane, z, -half));
                    let r = clamp(self.lane_x(lane, z, half));
                    current.push((y as i32, l.min(r), l.max(r)));
                }
                None if !current.is_empty() => runs.push(std::mem::take(&mut current)),
                None => {}
            }
        }
        if !current.is_empty() {
            runs.push(current);
        }
        runs.into_iter()
            .map(|run| {
                let keep: Vec<&(i32, i32, i32)> = run
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| i % 4 == 0 || *i == run.len() - 1)
                    .map(|(_, r)| r)
                    .collect();
                let mut poly: Vec<[i32; 2]> = keep.iter().map(|&&(y, l, _)| [l, y]).collect();
                poly.extend(keep.iter().rev().map(|&&(y, _, r)| [r, y]));
                poly
            })
            .collect()
    }

    fn marking_polygon(&self, m: &MarkingSpec) -> Result<Vec<[i32; 2]>> {
        let corners = [
            (m.x - m.width / 2.0, m.z),
            (m.x + m.width / 2.0, m.z),
            (m.x + m.width / 2.0, m.z + m.length),
            (m.x - m.width / 2.0, m.z + m.length),
        ];
        corners
            .iter()
            .map(|&(x, z)| {
                self.camera
                    .project(x, z, &self.image)
                    .filter(|p| self.image.contains_point(*p))
                    .map(|p| [p.x.floor() as i32, p.y.floor() as i32])
                    .ok_or_else(|| Error::Validation(format!("{} marking leaves the image", m.label)))
            })
            .collect()
    }

    /// Ground-truth annotation of the scene.
    pub fn annotation(&self) -> Result<FrameAnnotation> {
        self.validate()?;
        let mut ann = FrameAnnotation::new(ImageDims {
            w: self.image.width,
            h: self.image.height,
        });
        for lane in &self.lanes {
            for polygon in self.lane_polygons(lane) {
                ann.objects.push(MarkedObject {
                    label: lane.label,
                    polygon,
                });
            }
        }
        for m in &self.markings {
            ann.objects.push(MarkedObject {
                label: m.label,
                polygon: self.marking_polygon(m)?,
            });
        }
        ann.vp = self.vp().map(|p| VpAnnotation {
            x: p.x,
            y: p.y,
            difficulty: self.difficulty(),
        });
        ann.validate()?;
        Ok(ann)
    }

    /// Noise-free output tensor (VP, class and zero regression channels).
    pub fn clean_tensor(&self) -> Result<ConfidenceMap> {
        self.validate()?;
        let size = &self.image;
        let (w, h) = (size.lattice_width(), size.lattice_height());
        let g = f64::from(size.grid);
        let vp = ideal_quadrant_map(self.vp(), size)?;
        let mut classes = ConfidenceMap::zeros(CLASS_CHANNELS, h, w);
        let top = f64::from(self.top_row());
        let two_s2 = 2.0 * self.ridge_sigma * self.ridge_sigma;
        for lane in &self.lanes {
            let ch = usize::from(lane.label.id());
            for row in 0..h {
                let yc = row as f64 * g + g / 2.0;
                if yc < top {
                    continue;
                }
                let Some(z) = self.camera.ground_depth(yc, size) else {
                    continue;
                };
                if !Self::painted(lane, z) {
                    continue;
                }
                let x = self.lane_x(lane, z, 0.0);
                for col in 0..w {
                    let dx = col as f64 * g + g / 2.0 - x;
                    let v = (-dx * dx / two_s2).exp();
                    if v > classes.get(ch, row, col) {
                        classes.set(ch, row, col, v);
                    }
                }
            }
        }
        for m in &self.markings {
            let obj = MarkedObject {
                label: m.label,
                polygon: self.marking_polygon(m)?,
            };
            for c in object_cells(&obj, size)? {
                classes.set(usize::from(m.label.id()), c.row, c.col, 1.0);
            }
        }
        let regression = ConfidenceMap::zeros(TENSOR_CHANNELS - VP_CHANNELS - CLASS_CHANNELS, h, w);
        ConfidenceMap::concat(&[&vp, &classes, &regression])
    }

    /// Scene tensor with this scene's corruption drawn from `seed`.
    pub fn tensor(&self, seed: u64) -> Result<ConfidenceMap> {
        let mut t = self.clean_tensor()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = t.height() * t.width();
        let vp_end = VP_CHANNELS * n;
        let class_end = (VP_CHANNELS + CLASS_CHANNELS) * n;
        for (range, sigma) in [(0..vp_end, self.vp_noise), (vp_end..class_end, self.noise)] {
            if sigma > 0.0 {
                let normal = Normal::new(0.0, sigma).map_err(|e| Error::Validation(e.to_string()))?;
                for v in &mut t.data_mut()[range] {
                    *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
                }
            }
        }
        if self.clutter > 0.0 {
            for v in &mut t.data_mut()[vp_end..class_end] {
                if rng.random_bool(self.clutter) {
                    *v = v.max(rng.random_range(0.5..1.0));
                }
            }
        }
        Ok(t)
    }
}

/// One generated frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthFrame {
    pub annotation: FrameAnnotation,
    pub tensor: ConfidenceMap,
}

pub fn generate(spec: &SceneSpec, seed: u64) -> Result<SynthFrame> {
    Ok(SynthFrame {
        annotation: spec.annotation()?,
        tensor: spec.tensor(seed)?,
    })
}

/// Scores of the post-processing stage on one synthetic frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleEval {
    pub lane_precision: f64,
    pub lane_recall: f64,
    pub lane_f1: f64,
    pub lanes_found: usize,
    /// Pixel distance from the decoded VP to the true one.
    pub vp_error_px: Option<f64>,
    /// Chebyshev distance in cells between decoded and true VP cells.
    pub vp_error_cells: Option<usize>,
    pub marking_recall: f64,
    pub marking_precision: f64,
}

/// Runs post-processing on the frame's tensor and scores it against the frame's annotation.
pub fn oracle_eval(frame: &SynthFrame, cfg: &PipelineConfig) -> Result<OracleEval> {
    let size = &cfg.image;
    let pred = postprocess(&frame.tensor, cfg)?;
    let scores = evaluate_frame(
        &EvalPrediction::from_prediction(&pred, size),
        &frame.annotation,
        cfg,
    )?;
    let gt_vp = frame.annotation.vp_point();
    let (vp_error_px, vp_error_cells) = match (pred.vp_point, gt_vp) {
        (Some(p), Some(g)) => {
            let gc = size
                .cell_of(g)
                .ok_or_else(|| Error::Validation("ground-truth VP outside the image".into()))?;
            (Some(p.distance(g)), Some(pred.vp.location.chebyshev(gc)))
        }
        _ => (None, None),
    };
    Ok(OracleEval {
        lane_precision: scores.lanes.overall.precision,
        lane_recall: scores.lanes.overall.recall,
        lane_f1: scores.lanes.overall.f1,
        lanes_found: pred.lanes.len(),
        vp_error_px,
        vp_error_cells,
        marking_recall: scores.markings.overall.recall,
        marking_precision: scores.markings.overall.precision,
    })
}
