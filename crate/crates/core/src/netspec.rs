//! Receptive-field and stride arithmetic for a plain conv/pool backbone.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bundled description of the eight-layer backbone, with its published
/// receptive fields and declared input/output sizes.
pub const BUNDLED_TABLE: &str = include_str!("../data/backbone.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolSpec {
    pub size: u32,
    pub stride: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerSpec {
    #[serde(default)]
    pub name: String,
    pub kernel: u32,
    pub stride: u32,
    pub pad: u32,
    #[serde(default)]
    pub pool: Option<PoolSpec>,
}

impl LayerSpec {
    pub fn conv(kernel: u32, stride: u32, pad: u32) -> Self {
        LayerSpec {
            name: String::new(),
            kernel,
            stride,
            pad,
            pool: None,
        }
    }

    pub fn with_pool(mut self, size: u32, stride: u32) -> Self {
        self.pool = Some(PoolSpec { size, stride });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kernel < 1 || self.stride < 1 {
            return Err(Error::Validation(format!(
                "layer `{}`: kernel and stride must be at least 1",
                self.name
            )));
        }
        if let Some(p) = self.pool {
            if p.size < 1 || p.stride < 1 {
                return Err(Error::Validation(format!(
                    "layer `{}`: pool size and stride must be at least 1",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dims {
    pub w: u32,
    pub h: u32,
}

/// A layer list together with the values published alongside it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input: Dims,
    pub output: Dims,
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub receptive_field: Vec<u64>,
}

impl NetworkSpec {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED_TABLE).expect("bundled layer table parses")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let spec: NetworkSpec = serde_json::from_str(s)?;
        for l in &spec.layers {
            l.validate()?;
        }
        Ok(spec)
    }
}

fn check(layers: &[LayerSpec]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::Validation("layer list is empty".into()));
    }
    layers.iter().try_for_each(LayerSpec::validate)
}

/// Receptive field at each conv output, in input pixels.
///
/// Runs `rf ← rf + (k − 1)·jump; jump ← jump·stride` through every conv and
/// then its pool; the value reported for a layer is taken after its conv,
/// before its pool.
pub fn receptive_fields(layers: &[LayerSpec]) -> Result<Vec<u64>> {
    check(layers)?;
    let mut rf: u64 = 1;
    let mut jump: u64 = 1;
    let mut out = Vec::with_capacity(layers.len());
    for l in layers {
        rf += (u64::from(l.kernel) - 1) * jump;
        jump *= u64::from(l.stride);
        out.push(rf);
        if let Some(p) = l.pool {
            rf += (u64::from(p.size) - 1) * jump;
            jump *= u64::from(p.stride);
        }
    }
    Ok(out)
}

/// Product of every conv and pool stride.
pub fn output_stride(layers: &[LayerSpec]) -> Result<u64> {
    check(layers)?;
    Ok(layers
        .iter()
        .map(|l| u64::from(l.stride) * l.pool.map_or(1, |p| u64::from(p.stride)))
        .product())
}

/// Spatial size after each layer (conv then pool), floor division.
pub fn feature_sizes(layers: &[LayerSpec], input: Dims) -> Result<Vec<Dims>> {
    check(layers)?;
    let step =
        |n: u32, k: u32, s: u32, p: u32| -> u32 { (n + 2 * p).checked_sub(k).map_or(0, |v| v / s + 1) };
    let mut cur = input;
    let mut out = Vec::new();
    for l in layers {
        cur = Dims {
            w: step(cur.w, l.kernel, l.stride, l.pad),
            h: step(cur.h, l.kernel, l.stride, l.pad),
        };
        if let Some(p) = l.pool {
            cur = Dims {
                w: step(cur.w, p.size, p.stride, 0),
                h: step(cur.h, p.size, p.stride, 0),
            };
        }
        out.push(cur);
    }
    Ok(out)
}

/// Computed values next to the declared ones.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetspecReport {
    pub receptive_field: Vec<u64>,
    pub declared_receptive_field: Vec<u64>,
    pub receptive_field_matches: bool,
    pub stride_product: u64,
    /// Input/output size ratio declared by the layer table (`None` when not an integer
    /// or inconsistent between axes).
    pub declared_output_factor: Option<u64>,
    pub stride_matches: bool,
    pub feature_sizes: Vec<Dims>,
}

impl NetspecReport {
    pub fn consistent(&self) -> bool {
        self.receptive_field_matches && self.stride_matches
    }
}

pub fn report(spec: &NetworkSpec) -> Result<NetspecReport> {
    let rf = receptive_fields(&spec.layers)?;
    let stride = output_stride(&spec.layers)?;
    let factor = (spec.output.w > 0
        && spec.output.h > 0
        && spec.input.w.is_multiple_of(spec.output.w)
        && spec.input.h.is_multiple_of(spec.output.h)
        && spec.input.w / spec.output.w == spec.input.h / spec.output.h)
        .then(|| u64::from(spec.input.w / spec.output.w));
    Ok(NetspecReport {
        receptive_field_matches: spec.receptive_field.is_empty() || rf == spec.receptive_field,
        receptive_field: rf,
        declared_receptive_field: spec.receptive_field.clone(),
        stride_product: stride,
        declared_output_factor: factor,
        stride_matches: factor == Some(stride),
        feature_sizes: feature_sizes(&spec.layers, spec.input)?,
    })
}
