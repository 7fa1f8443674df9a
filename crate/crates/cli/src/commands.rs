use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::time::Instant;

use anyhow::{Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use roadgrid_core::annotation::{encode_grid, flip_horizontal, DatasetStats};
use roadgrid_core::metrics::{lane_table, marking_table};
use roadgrid_core::netspec::{self, NetworkSpec};
use roadgrid_core::pipeline::{self, EvalPrediction, Prediction};
use roadgrid_core::synth::{self, OracleEval, SceneSpec};
use roadgrid_core::tensor::{read_tensor, write_tensor};
use roadgrid_core::vpp::{self, encode_quadrant, VP_CHANNELS};
use roadgrid_core::{ConfidenceMap, Error, FrameAnnotation, PipelineConfig};

use crate::files;
use crate::overlay;

/// A failure that carries its own exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for Failure {}

fn fail(code: u8, message: impl Into<String>) -> anyhow::Error {
    Failure {
        code,
        message: message.into(),
    }
    .into()
}

/// 1 validation, 2 format, 3 internal.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return e.exit_code() as u8;
        }
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return f.code;
        }
        if cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    3
}

fn read_annotation(path: &Path) -> Result<FrameAnnotation> {
    let text = fs::read_to_string(path).map_err(Error::from)?;
    Ok(FrameAnnotation::from_json_str(&text)?)
}

fn encode_frame(
    stem: &str,
    path: &Path,
    out: &Path,
    flip: bool,
    cfg: &PipelineConfig,
) -> Result<FrameAnnotation> {
    let ann = read_annotation(path)?;
    let size = ann.image_size(cfg.image.grid)?;
    let mut frames = vec![(stem.to_string(), ann.clone())];
    if flip {
        frames.push((format!("{stem}.flip"), flip_horizontal(&ann, &size)?));
    }
    for (name, frame) in &frames {
        let mask = encode_grid(frame, &size)?;
        let quad = encode_quadrant(frame.vp_point(), &size)?;
        files::write_json(&out.join(format!("{name}.grid.json")), &mask.to_json())?;
        write_tensor(&out.join(format!("{name}.quad.vpgc")), &quad.to_one_hot())?;
        if name.ends_with(".flip") {
            files::write_json(&out.join(format!("{name}.json")), frame)?;
        }
    }
    Ok(ann)
}

pub fn encode(dir: &Path, out: &Path, flip: bool, cfg: &PipelineConfig) -> Result<()> {
    let frames = files::list(dir, "json")?;
    files::create_dir(out)?;
    let results: Vec<Result<FrameAnnotation>> = frames
        .par_iter()
        .map(|(stem, path)| encode_frame(stem, path, out, flip, cfg))
        .collect();
    let mut stats = DatasetStats::default();
    let mut failed = Vec::new();
    for ((stem, _), r) in frames.iter().zip(results) {
        match r {
            Ok(ann) => stats.add(&ann),
            Err(e) => {
                eprintln!("{stem}: {e:#}");
                failed.push(stem.clone());
            }
        }
    }
    files::write_json(&out.join("stats.json"), &stats)?;
    print!("{}", stats.table());
    if !failed.is_empty() {
        return Err(fail(
            1,
            format!(
                "{} of {} files failed: {}",
                failed.len(),
                frames.len(),
                failed.join(", ")
            ),
        ));
    }
    Ok(())
}

#[derive(Serialize)]
struct DecodedVp {
    cell: [usize; 2],
    x: f64,
    y: f64,
    existence: f64,
    p_avg: f64,
    present: bool,
}

pub fn decode_vp(path: &Path, cfg: &PipelineConfig) -> Result<()> {
    files::require_file(path)?;
    let tensor = read_tensor(path)?;
    let vp_map = match tensor.channels() {
        VP_CHANNELS => tensor,
        c if c == pipeline::TENSOR_CHANNELS || c == pipeline::TENSOR_CHANNELS - 2 => {
            tensor.slice_channels(0, VP_CHANNELS)?
        }
        c => {
            return Err(Error::Shape(format!(
                "expected a {VP_CHANNELS}-channel VP map or a full output tensor, got {c} channels"
            ))
            .into())
        }
    };
    if vp_map.width() != cfg.image.lattice_width() || vp_map.height() != cfg.image.lattice_height() {
        return Err(Error::Shape(format!(
            "{}x{} map for a {}x{} lattice",
            vp_map.width(),
            vp_map.height(),
            cfg.image.lattice_width(),
            cfg.image.lattice_height()
        ))
        .into());
    }
    let d = vpp::decode_vp(&vp_map)?;
    let p = d.pixel(&cfg.image)?;
    print!(
        "{}",
        files::to_json(&DecodedVp {
            cell: [d.location.row, d.location.col],
            x: p.x,
            y: p.y,
            existence: d.existence,
            p_avg: d.p_avg,
            present: d.is_present(cfg.vp.existence_threshold),
        })?
    );
    Ok(())
}

/// Runs the post-processing stage and returns it with its wall-clock time in ms.
fn timed_postprocess(tensor: &ConfidenceMap, cfg: &PipelineConfig) -> Result<(Prediction, f64)> {
    let start = Instant::now();
    let pred = pipeline::postprocess(tensor, cfg)?;
    Ok((pred, start.elapsed().as_secs_f64() * 1e3))
}

pub fn postprocess(
    input: &Path,
    out: Option<&Path>,
    overlay_path: Option<&Path>,
    cfg: &PipelineConfig,
) -> Result<()> {
    if input.is_dir() {
        let out = out.ok_or_else(|| fail(1, "--out <dir> is required for directory input"))?;
        if overlay_path.is_some() {
            return Err(fail(1, "--overlay needs a single tensor file"));
        }
        files::create_dir(out)?;
        let tensors = files::list(input, "vpgc")?;
        let times: Vec<f64> = tensors
            .par_iter()
            .map(|(stem, path)| -> Result<f64> {
                let tensor = read_tensor(path).with_context(|| stem.clone())?;
                let (pred, ms) = timed_postprocess(&tensor, cfg).with_context(|| stem.clone())?;
                files::write_json(&out.join(format!("{stem}.json")), &pred.to_json())?;
                Ok(ms)
            })
            .collect::<Result<_>>()?;
        if !times.is_empty() {
            let mut sorted = times.clone();
            sorted.sort_by(f64::total_cmp);
            eprintln!(
                "postprocess: {} frames, median {:.3} ms",
                times.len(),
                sorted[sorted.len() / 2]
            );
        }
        return Ok(());
    }
    files::require_file(input)?;
    let tensor = read_tensor(input)?;
    let (pred, ms) = timed_postprocess(&tensor, cfg)?;
    eprintln!("postprocess: {ms:.3} ms");
    let json = files::to_json(&pred.to_json())?;
    match out {
        Some(path) => files::write_text(path, &json)?,
        None => print!("{json}"),
    }
    if let Some(path) = overlay_path {
        overlay::render(&pred, &cfg.image, path)?;
    }
    Ok(())
}

pub fn evaluate(pred_dir: &Path, gt_dir: &Path, out: &Path, cfg: &PipelineConfig) -> Result<()> {
    let preds = files::list(pred_dir, "json")?;
    let gts = files::list(gt_dir, "json")?;
    let pred_names: BTreeSet<&str> = preds.iter().map(|(s, _)| s.as_str()).collect();
    let gt_names: BTreeSet<&str> = gts.iter().map(|(s, _)| s.as_str()).collect();
    if pred_names != gt_names {
        let missing: Vec<&str> = gt_names.difference(&pred_names).copied().collect();
        let extra: Vec<&str> = pred_names.difference(&gt_names).copied().collect();
        return Err(Error::Input(format!(
            "frame sets differ; without prediction: [{}], without ground truth: [{}]",
            missing.join(", "),
            extra.join(", ")
        ))
        .into());
    }
    let frames: Vec<(EvalPrediction, FrameAnnotation)> = preds
        .par_iter()
        .zip(gts.par_iter())
        .map(|((stem, p), (_, g))| -> Result<_> {
            let text = fs::read_to_string(p).map_err(Error::from)?;
            let pred =
                EvalPrediction::parse(&text, &cfg.image).with_context(|| format!("prediction {stem}"))?;
            let gt = read_annotation(g).with_context(|| format!("ground truth {stem}"))?;
            Ok((pred, gt))
        })
        .collect::<Result<_>>()?;
    let report = pipeline::evaluate(&frames, cfg)?;
    files::create_dir(out)?;
    let lanes = lane_table(&report.lanes);
    let markings = marking_table(&report.markings);
    files::write_json(&out.join("report.json"), &report)?;
    files::write_text(&out.join("lanes.txt"), &lanes)?;
    files::write_text(&out.join("markings.txt"), &markings)?;
    files::write_text(&out.join("vp_recall.csv"), &report.vp_recall.to_csv())?;
    println!("frames: {}\n\n{lanes}\n{markings}", report.frames);
    Ok(())
}

#[derive(Serialize)]
struct FrameScore {
    frame: String,
    seed: u64,
    #[serde(flatten)]
    scores: OracleEval,
}

type ScoredFrame = (OracleEval, EvalPrediction, FrameAnnotation);

#[derive(Serialize)]
struct SynthReport {
    frames: Vec<FrameScore>,
    mean_lane_f1: f64,
    min_lane_f1: f64,
    evaluation: pipeline::EvalReport,
}

pub fn synth(
    spec_path: Option<&Path>,
    out: &Path,
    count: u64,
    seed: u64,
    eval: bool,
    cfg: &PipelineConfig,
) -> Result<()> {
    let spec: SceneSpec = match spec_path {
        Some(p) => serde_json::from_str(
            &fs::read_to_string(files::require_file(p).map(|_| p)?).map_err(Error::from)?,
        )?,
        None => SceneSpec::default(),
    };
    spec.validate()?;
    let mut cfg = cfg.clone();
    cfg.image = spec.image;
    let (gt_dir, tensor_dir) = (out.join("gt"), out.join("tensors"));
    files::create_dir(&gt_dir)?;
    files::create_dir(&tensor_dir)?;
    let results: Vec<(String, u64, Option<ScoredFrame>)> = (0..count)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let name = format!("frame_{i:04}");
            let frame_seed = seed.wrapping_add(i);
            let frame = synth::generate(&spec, frame_seed)?;
            files::write_json(&gt_dir.join(format!("{name}.json")), &frame.annotation)?;
            write_tensor(&tensor_dir.join(format!("{name}.vpgc")), &frame.tensor)?;
            let scored = if eval {
                let scores = synth::oracle_eval(&frame, &cfg)?;
                let pred = pipeline::postprocess(&frame.tensor, &cfg)?;
                Some((
                    scores,
                    EvalPrediction::from_prediction(&pred, &cfg.image),
                    frame.annotation,
                ))
            } else {
                None
            };
            Ok((name, frame_seed, scored))
        })
        .collect::<Result<_>>()?;
    println!("wrote {count} frames to {}", out.display());
    if !eval || results.is_empty() {
        return Ok(());
    }
    let mut frames = Vec::new();
    let mut pairs = Vec::new();
    for (name, s, scored) in results {
        let (scores, pred, gt) = scored.expect("scored when eval is set");
        frames.push(FrameScore {
            frame: name,
            seed: s,
            scores,
        });
        pairs.push((pred, gt));
    }
    let f1: Vec<f64> = frames.iter().map(|f| f.scores.lane_f1).collect();
    let report = SynthReport {
        mean_lane_f1: f1.iter().sum::<f64>() / f1.len() as f64,
        min_lane_f1: f1.iter().copied().fold(f64::INFINITY, f64::min),
        evaluation: pipeline::evaluate(&pairs, &cfg)?,
        frames,
    };
    files::write_json(&out.join("report.json"), &report)?;
    println!(
        "lane F1: mean {:.4}, min {:.4}; overall {:.4}",
        report.mean_lane_f1, report.min_lane_f1, report.evaluation.lanes.overall.f1
    );
    Ok(())
}

pub fn netspec(layers: Option<&Path>, strict: bool) -> Result<()> {
    let spec = match layers {
        Some(p) => NetworkSpec::from_json(
            &fs::read_to_string(files::require_file(p).map(|_| p)?).map_err(Error::from)?,
        )?,
        None => NetworkSpec::bundled(),
    };
    let r = netspec::report(&spec)?;
    println!(
        "{:<8} {:>6} {:>6} {:>4} {:>6} {:>10} {:>9} {:>9}",
        "layer", "kernel", "stride", "pad", "pool", "rf", "declared", "size"
    );
    for (i, l) in spec.layers.iter().enumerate() {
        let pool = l
            .pool
            .map_or("-".to_string(), |p| format!("{}/{}", p.size, p.stride));
        let declared = r
            .declared_receptive_field
            .get(i)
            .map_or("-".to_string(), |v| v.to_string());
        let fs = r.feature_sizes[i];
        println!(
            "{:<8} {:>6} {:>6} {:>4} {:>6} {:>10} {:>9} {:>9}",
            if l.name.is_empty() {
                format!("#{}", i + 1)
            } else {
                l.name.clone()
            },
            l.kernel,
            l.stride,
            l.pad,
            pool,
            r.receptive_field[i],
            declared,
            format!("{}x{}", fs.w, fs.h)
        );
    }
    println!(
        "receptive fields: {}",
        if r.receptive_field_matches {
            "match"
        } else {
            "MISMATCH"
        }
    );
    let factor = r
        .declared_output_factor
        .map_or("none".to_string(), |f| f.to_string());
    println!(
        "output stride: {} from layers, {} declared ({}x{} -> {}x{}): {}",
        r.stride_product,
        factor,
        spec.input.w,
        spec.input.h,
        spec.output.w,
        spec.output.h,
        if r.stride_matches { "match" } else { "MISMATCH" }
    );
    if strict && !r.consistent() {
        return Err(fail(1, "layer table is inconsistent with its declared values"));
    }
    Ok(())
}
