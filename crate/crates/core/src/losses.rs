//! Multi-task loss arithmetic: the weighted sum of the four task losses,
//! reciprocal weight balancing, and the per-task loss functions themselves.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markings::GridRegressionMap;
use crate::types::{Cell, ConfidenceMap};

pub const DEFAULT_EPSILON: f64 = 1e-7;
pub const DEFAULT_RATIO_LIMIT: f64 = 10.0;

/// Grid regression (L1), object mask, multi-label and VP losses, in that order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskLosses {
    pub reg: f64,
    pub om: f64,
    pub ml: f64,
    pub vp: f64,
}

impl TaskLosses {
    pub fn new(reg: f64, om: f64, ml: f64, vp: f64) -> Result<Self> {
        let l = TaskLosses { reg, om, ml, vp };
        l.validate()?;
        Ok(l)
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.reg, self.om, self.ml, self.vp]
    }

    pub fn from_array(a: [f64; 4]) -> Result<Self> {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn validate(&self) -> Result<()> {
        for v in self.as_array() {
            if v.is_nan() {
                return Err(Error::Data("NaN task loss".into()));
            }
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Validation(format!(
                    "task loss {v} must be finite and non-negative"
                )));
            }
        }
        Ok(())
    }
}

/// Strictly positive task weights `w1..w4`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskWeights([f64; 4]);

impl TaskWeights {
    pub fn new(w: [f64; 4]) -> Result<Self> {
        if let Some(v) = w.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Validation(format!(
                "task weight {v} must be positive and finite"
            )));
        }
        Ok(TaskWeights(w))
    }

    pub fn ones() -> Self {
        TaskWeights([1.0; 4])
    }

    pub fn as_array(&self) -> [f64; 4] {
        self.0
    }
}

/// `w1·L_reg + w2·L_om + w3·L_ml + w4·L_vp`.
pub fn combined_loss(l: &TaskLosses, w: &TaskWeights) -> Result<f64> {
    l.validate()?;
    Ok(l.as_array().iter().zip(w.0).map(|(l, w)| l * w).sum())
}

/// Reciprocal balancing: `w_i = 1 / L_i`, so every weighted term starts at 1.
pub fn balance_weights(initial: &TaskLosses) -> Result<TaskWeights> {
    initial.validate()?;
    let l = initial.as_array();
    if let Some(i) = l.iter().position(|v| *v == 0.0) {
        return Err(Error::Validation(format!(
            "task loss {i} is zero; its balancing weight is undefined"
        )));
    }
    TaskWeights::new(l.map(|v| 1.0 / v))
}

/// Repeats the balancing when `max / min` of the weighted losses exceeds
/// `ratio_limit`; otherwise returns `w` unchanged.
pub fn rebalance_if_skewed(weighted: &TaskLosses, w: &TaskWeights, ratio_limit: f64) -> Result<TaskWeights> {
    if !(ratio_limit > 1.0) {
        return Err(Error::Validation(format!(
            "ratio limit {ratio_limit} must exceed 1"
        )));
    }
    weighted.validate()?;
    let l = weighted.as_array();
    if l.contains(&0.0) {
        return Err(Error::Validation(
            "a weighted task loss is zero; its balancing weight is undefined".into(),
        ));
    }
    let max = l.iter().copied().fold(f64::MIN, f64::max);
    let min = l.iter().copied().fold(f64::MAX, f64::min);
    if max / min <= ratio_limit {
        return Ok(*w);
    }
    // raw_i = weighted_i / w_i, new w_i = 1 / raw_i
    let mut out = [0.0; 4];
    for i in 0..4 {
        out[i] = w.0[i] / l[i];
    }
    TaskWeights::new(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseWeights {
    pub w: [f64; 4],
}

/// Two-phase schedule for an external trainer: VP task alone, then all tasks
/// with balanced weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSchedule {
    pub phase1: PhaseWeights,
    pub phase2: PhaseWeights,
    pub ratio_limit: f64,
}

pub fn weight_schedule(initial: &TaskLosses, ratio_limit: f64) -> Result<WeightSchedule> {
    if !(ratio_limit > 1.0) {
        return Err(Error::Validation(format!(
            "ratio limit {ratio_limit} must exceed 1"
        )));
    }
    Ok(WeightSchedule {
        phase1: PhaseWeights {
            w: [0.0, 0.0, 0.0, 1.0],
        },
        phase2: PhaseWeights {
            w: balance_weights(initial)?.as_array(),
        },
        ratio_limit,
    })
}

/// Mean absolute offset error over the masked cells, averaged over both
/// coordinates. An empty mask gives 0.
pub fn l1_grid_loss(pred: &GridRegressionMap, gt: &GridRegressionMap, mask: &BTreeSet<Cell>) -> Result<f64> {
    if pred.width != gt.width || pred.height != gt.height {
        return Err(Error::Shape(format!(
            "{}x{} prediction against {}x{} target",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    if mask.is_empty() {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for &c in mask {
        if c.col >= pred.width || c.row >= pred.height {
            return Err(Error::Shape(format!(
                "mask cell ({}, {}) outside the map",
                c.col, c.row
            )));
        }
        let (p, g) = (pred.get(c), gt.get(c));
        sum += (p[0] - g[0]).abs() + (p[1] - g[1]).abs();
    }
    Ok(sum / (2.0 * mask.len() as f64))
}

fn check_ce(pred: &ConfidenceMap, targets: &[u8], mask: Option<&[bool]>) -> Result<usize> {
    let n = pred.height() * pred.width();
    if targets.len() != n {
        return Err(Error::Shape(format!("{} targets for {n} cells", targets.len())));
    }
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::Shape(format!("{} mask entries for {n} cells", m.len())));
        }
    }
    if let Some(t) = targets.iter().find(|t| usize::from(**t) >= pred.channels()) {
        return Err(Error::Shape(format!(
            "target channel {t} outside a {}-channel map",
            pred.channels()
        )));
    }
    if let Some(v) = pred.data().iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite prediction {v}")));
    }
    Ok(n)
}

/// Mean over masked cells of `−log(clamp(p_target, ε, 1))`, where `targets`
/// holds the ground-truth channel of each cell (row-major).
pub fn cross_entropy(
    pred: &ConfidenceMap,
    targets: &[u8],
    mask: Option<&[bool]>,
    epsilon: f64,
) -> Result<f64> {
    let n = check_ce(pred, targets, mask)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..n {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let p = pred.data()[usize::from(targets[i]) * n + i];
        sum -= p.clamp(epsilon, 1.0).ln();
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { sum / count as f64 })
}

/// Gradient of [`cross_entropy`] with respect to every prediction value.
pub fn cross_entropy_grad(
    pred: &ConfidenceMap,
    targets: &[u8],
    mask: Option<&[bool]>,
    epsilon: f64,
) -> Result<ConfidenceMap> {
    let n = check_ce(pred, targets, mask)?;
    let count = (0..n).filter(|&i| mask.is_none_or(|m| m[i])).count();
    let mut grad = ConfidenceMap::zeros(pred.channels(), pred.height(), pred.width());
    if count == 0 {
        return Ok(grad);
    }
    for i in 0..n {
        if mask.is_some_and(|m| !m[i]) {
            continue;
        }
        let k = usize::from(targets[i]) * n + i;
        let p = pred.data()[k];
        if p > epsilon && p <= 1.0 {
            grad.data_mut()[k] = -1.0 / (p * count as f64);
        }
    }
    Ok(grad)
}
