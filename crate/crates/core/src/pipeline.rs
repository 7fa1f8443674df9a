//! The composed post-processing stage and per-frame evaluation.
//!
//! A network output tensor stacks, in channel order, the five VP channels
//! (absence then quadrants 1-4), the seventeen class channels, and optionally
//! the two grid-regression channels `(dx, dy)`.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::annotation::{encode_grid, encode_instances, object_cells};
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::lanes::{extract_lanes, sample_curve, LaneCurve, LaneCurveJson, LanePoint};
use crate::markings::{extract_markings, GridRegressionMap, MarkingInstance, MarkingJson};
use crate::metrics::{eval_lanes, eval_markings, eval_vp, LaneEvalResult, MarkingEvalResult, VpRecallCurve};
use crate::types::{Cell, ClassLabel, ConfidenceMap, FrameAnnotation, ImageSize, Point, VpDifficulty};
use crate::vpp::{decode_vp, VpDecodeResult, VP_CHANNELS};

pub const CLASS_CHANNELS: usize = ClassLabel::COUNT;
pub const REGRESSION_CHANNELS: usize = 2;
/// Channels of a full output tensor.
pub const TENSOR_CHANNELS: usize = VP_CHANNELS + CLASS_CHANNELS + REGRESSION_CHANNELS;

/// A network output split into its branches.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkOutput {
    pub vp: ConfidenceMap,
    pub classes: ConfidenceMap,
    pub regression: Option<GridRegressionMap>,
}

impl NetworkOutput {
    /// Splits a 22- or 24-channel tensor.
    pub fn split(tensor: &ConfidenceMap, size: &ImageSize) -> Result<Self> {
        let base = VP_CHANNELS + CLASS_CHANNELS;
        if tensor.channels() != base && tensor.channels() != TENSOR_CHANNELS {
            return Err(Error::Shape(format!(
                "output tensor needs {base} or {TENSOR_CHANNELS} channels, got {}",
                tensor.channels()
            )));
        }
        if tensor.width() != size.lattice_width() || tensor.height() != size.lattice_height() {
            return Err(Error::Shape(format!(
                "{}x{} tensor for a {}x{} lattice",
                tensor.width(),
                tensor.height(),
                size.lattice_width(),
                size.lattice_height()
            )));
        }
        let regression = if tensor.channels() == TENSOR_CHANNELS {
            Some(GridRegressionMap::from_map(
                &tensor.slice_channels(base, REGRESSION_CHANNELS)?,
                size.grid,
            )?)
        } else {
            None
        };
        Ok(NetworkOutput {
            vp: tensor.slice_channels(0, VP_CHANNELS)?,
            classes: tensor.slice_channels(VP_CHANNELS, CLASS_CHANNELS)?,
            regression,
        })
    }

    pub fn to_tensor(&self) -> Result<ConfidenceMap> {
        match &self.regression {
            Some(r) => ConfidenceMap::concat(&[&self.vp, &self.classes, &r.to_map()]),
            None => ConfidenceMap::concat(&[&self.vp, &self.classes]),
        }
    }
}

/// Everything the post-processing stage extracts from one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub vp: VpDecodeResult,
    /// Decoded VP in pixels, when its existence clears the threshold.
    pub vp_point: Option<Point>,
    pub lanes: Vec<LaneCurve>,
    pub markings: Vec<MarkingInstance>,
}

/// VP decode, then lanes (steered by the VP), then road markings.
pub fn postprocess(tensor: &ConfidenceMap, cfg: &PipelineConfig) -> Result<Prediction> {
    let size = &cfg.image;
    let out = NetworkOutput::split(tensor, size)?;
    if let Some(v) = out.classes.data().iter().find(|v| v.is_nan()) {
        return Err(Error::Data(format!("class map holds {v}")));
    }
    let vp = decode_vp(&out.vp)?;
    let vp_point = if vp.is_present(cfg.vp.existence_threshold) {
        Some(vp.pixel(size)?)
    } else {
        None
    };
    let lanes = extract_lanes(&out.classes, vp_point, size, &cfg.lanes)?;
    let markings = extract_markings(&out.classes, out.regression.as_ref(), size, &cfg.markings)?;
    Ok(Prediction {
        vp,
        vp_point,
        lanes,
        markings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VpJson {
    pub x: f64,
    pub y: f64,
    /// `[row, col]` of the decoded cell.
    pub cell: [usize; 2],
}

/// Serialized post-processing result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionJson {
    pub vp: Option<VpJson>,
    pub vp_existence: f64,
    pub lanes: Vec<LaneCurveJson>,
    pub markings: Vec<MarkingJson>,
}

impl Prediction {
    pub fn to_json(&self) -> PredictionJson {
        PredictionJson {
            vp: self.vp_point.map(|p| VpJson {
                x: p.x,
                y: p.y,
                cell: [self.vp.location.row, self.vp.location.col],
            }),
            vp_existence: self.vp.existence,
            lanes: self.lanes.iter().map(LaneCurve::to_json).collect(),
            markings: self.markings.iter().map(MarkingInstance::to_json).collect(),
        }
    }
}

/// Prediction reduced to what the metrics consume.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EvalPrediction {
    pub lane_points: Vec<LanePoint>,
    pub blobs: Vec<(ClassLabel, BTreeSet<Cell>)>,
    pub vp: Option<Point>,
}

impl EvalPrediction {
    pub fn from_json(pred: &PredictionJson, size: &ImageSize) -> Result<Self> {
        let mut lane_points = Vec::new();
        for lane in &pred.lanes {
            if !lane.label.is_lane() {
                return Err(Error::Validation(format!("{} is not a lane class", lane.label)));
            }
            lane_points.extend(sample_curve(lane.coeffs, lane.y_range, lane.label, size));
        }
        let mut blobs = Vec::new();
        for m in &pred.markings {
            let cells = m.cell_set();
            if let Some(c) = cells.iter().find(|c| !size.contains_cell(**c)) {
                return Err(Error::Validation(format!(
                    "marking cell ({}, {}) outside the lattice",
                    c.col, c.row
                )));
            }
            blobs.push((m.label, cells));
        }
        Ok(EvalPrediction {
            lane_points,
            blobs,
            vp: pred.vp.as_ref().map(|v| Point::new(v.x, v.y)),
        })
    }

    /// Treats an annotation as a perfect prediction: lane cells become points
    /// at their centers, each marking object one blob.
    pub fn from_annotation(ann: &FrameAnnotation, size: &ImageSize) -> Result<Self> {
        let mut lane_points = Vec::new();
        let mut blobs = Vec::new();
        for obj in &ann.objects {
            let cells = object_cells(obj, size)?;
            if obj.label.is_lane() {
                for c in cells {
                    lane_points.push(LanePoint {
                        position: size.cell_center(c)?,
                        cell: c,
                        score: 1.0,
                        label: obj.label,
                    });
                }
            } else {
                blobs.push((obj.label, cells));
            }
        }
        Ok(EvalPrediction {
            lane_points,
            blobs,
            vp: ann.vp_point(),
        })
    }

    pub fn from_prediction(p: &Prediction, size: &ImageSize) -> Self {
        EvalPrediction {
            lane_points: p.lanes.iter().flat_map(|l| l.sample_points(size)).collect(),
            blobs: p.markings.iter().map(|m| (m.label, m.cells.clone())).collect(),
            vp: p.vp_point,
        }
    }

    /// Parses either a post-processing result or an annotation file.
    pub fn parse(text: &str, size: &ImageSize) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        if value.get("image").is_some() {
            let ann: FrameAnnotation = serde_json::from_value(value)?;
            ann.validate()?;
            Self::from_annotation(&ann, size)
        } else {
            Self::from_json(&serde_json::from_value(value)?, size)
        }
    }
}

/// Lane and marking scores for one frame.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrameEval {
    pub lanes: LaneEvalResult,
    pub markings: MarkingEvalResult,
}

pub fn evaluate_frame(
    pred: &EvalPrediction,
    gt: &FrameAnnotation,
    cfg: &PipelineConfig,
) -> Result<FrameEval> {
    let size = &cfg.image;
    let mask = encode_grid(gt, size)?;
    let instances: Vec<_> = encode_instances(gt, size)?
        .into_iter()
        .filter(|(l, _)| !l.is_lane())
        .collect();
    Ok(FrameEval {
        lanes: eval_lanes(
            &pred.lane_points,
            &mask,
            size,
            cfg.eval.lane_radius,
            cfg.eval.class_aware,
        )?,
        markings: eval_markings(&pred.blobs, &instances),
    })
}

/// Aggregate scores over a set of frames.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub lanes: LaneEvalResult,
    pub markings: MarkingEvalResult,
    pub vp_recall: VpRecallCurve,
}

/// Evaluates frames in the given order. Lane and marking counts are summed
/// before scores are computed.
pub fn evaluate(frames: &[(EvalPrediction, FrameAnnotation)], cfg: &PipelineConfig) -> Result<EvalReport> {
    let mut lanes = LaneEvalResult::default();
    let mut markings = MarkingEvalResult::default();
    lanes.overall = crate::metrics::LaneScores::from_counts(0, 0, 0, 0);
    markings.overall = crate::metrics::MarkingScores::from_counts(0, 0, 0, 0);
    let mut vp_pred = Vec::with_capacity(frames.len());
    let mut vp_gt: Vec<(Option<Point>, VpDifficulty)> = Vec::with_capacity(frames.len());
    for (pred, gt) in frames {
        let f = evaluate_frame(pred, gt, cfg)?;
        lanes.accumulate(&f.lanes);
        markings.accumulate(&f.markings);
        vp_pred.push(pred.vp);
        vp_gt.push((gt.vp_point(), gt.vp_difficulty()));
    }
    Ok(EvalReport {
        frames: frames.len(),
        lanes,
        markings,
        vp_recall: eval_vp(&vp_pred, &vp_gt, &cfg.eval.vp_thresholds, cfg.eval.include_hard)?,
    })
}
