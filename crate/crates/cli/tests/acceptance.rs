//! Acceptance suite. Runs every criterion in order, prints one PASS/FAIL line
//! per criterion, and fails if any criterion fails.

use std::collections::{BTreeSet, VecDeque};
use std::fs;
use std::io::Write;
use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use roadgrid_core::lanes::cluster_points;
use roadgrid_core::losses::{
    balance_weights, cross_entropy, cross_entropy_grad, TaskLosses, DEFAULT_EPSILON,
};
use roadgrid_core::markings::{merge_cells, ScoredCells};
use roadgrid_core::metrics::{blob_is_true, eval_markings, eval_vp};
use roadgrid_core::netspec::{receptive_fields, NetworkSpec};
use roadgrid_core::pipeline::postprocess;
use roadgrid_core::synth::{generate, oracle_eval, SceneSpec};
use roadgrid_core::tensor::{decode_tensor, encode_tensor};
use roadgrid_core::vpp::{decode_vp, ideal_quadrant_map, p_avg};
use roadgrid_core::{Cell, ClassLabel, ConfidenceMap, ImageSize, PipelineConfig, Point, VpDifficulty};

/// Mean lane F1 over seeds 0..100 at noise 0.1, frozen from a single oracle
/// run that measured 0.9996.
const FROZEN_NOISY_F1: f64 = 0.99;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn receptive_field_row() -> Outcome {
    let start = Instant::now();
    let rf = receptive_fields(&NetworkSpec::bundled().layers).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    check(
        rf == [11, 51, 99, 131, 163, 355, 355, 355] && secs < 1.0,
        format!("rf {rf:?} in {secs:.4} s"),
    )
}

fn vp_round_trip() -> Outcome {
    let size = ImageSize::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let start = Instant::now();
    let mut worst = 0;
    for _ in 0..1000 {
        let vp = Point::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
        let map = ideal_quadrant_map(Some(vp), &size).map_err(|e| e.to_string())?;
        let got = decode_vp(&map).map_err(|e| e.to_string())?.location;
        worst = worst.max(got.chebyshev(size.cell_of(vp).expect("in bounds")));
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst <= 1 && secs < 10.0,
        format!("1000 VPs, worst Chebyshev error {worst}, {secs:.2} s"),
    )
}

fn p_avg_units() -> Outcome {
    let mut map = ConfidenceMap::zeros(5, 60, 80);
    let zero = p_avg(&map).map_err(|e| e.to_string())?;
    map.channel_mut(0).fill(1.0);
    let one = p_avg(&map).map_err(|e| e.to_string())?;
    check(
        (zero - 0.25).abs() <= 1e-12 && one.abs() <= 1e-12,
        format!("p0=0 -> {zero}, p0=1 -> {one}"),
    )
}

fn end_to_end_oracle() -> Outcome {
    let cfg = PipelineConfig::default();
    let clean = oracle_eval(
        &generate(&SceneSpec::default(), 0).map_err(|e| e.to_string())?,
        &cfg,
    )
    .map_err(|e| e.to_string())?;
    let vp_cells = clean.vp_error_cells.ok_or("no VP decoded")?;
    let noisy_spec = SceneSpec {
        noise: 0.1,
        ..SceneSpec::default()
    };
    let mut f1 = Vec::new();
    for seed in 0..100 {
        let frame = generate(&noisy_spec, seed).map_err(|e| e.to_string())?;
        f1.push(oracle_eval(&frame, &cfg).map_err(|e| e.to_string())?.lane_f1);
    }
    let mean = f1.iter().sum::<f64>() / f1.len() as f64;
    check(
        clean.lane_f1 == 1.0 && vp_cells <= 1 && mean >= FROZEN_NOISY_F1,
        format!(
            "clean F1 {}, VP error {vp_cells} cell(s); noisy mean F1 {mean:.4} (threshold {FROZEN_NOISY_F1})",
            clean.lane_f1
        ),
    )
}

fn components<F: Fn(usize, usize) -> bool>(n: usize, linked: F) -> BTreeSet<BTreeSet<usize>> {
    let mut seen = vec![false; n];
    let mut out = BTreeSet::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        let mut comp = BTreeSet::new();
        let mut queue = VecDeque::from([s]);
        while let Some(i) = queue.pop_front() {
            comp.insert(i);
            for (j, s) in seen.iter_mut().enumerate() {
                if !*s && linked(i, j) {
                    *s = true;
                    queue.push_back(j);
                }
            }
        }
        out.insert(comp);
    }
    out
}

fn random_clusters(rng: &mut ChaCha8Rng, t: f64) -> Vec<Point> {
    loop {
        let k = rng.random_range(1..=5);
        let mut groups: Vec<Vec<Point>> = Vec::new();
        for _ in 0..k {
            let mut p = Point::new(rng.random_range(0.0..600.0), rng.random_range(0.0..200.0));
            let mut walk = vec![p];
            for _ in 0..rng.random_range(0..25) {
                // Step length stays below t: |dx| < 0.6t, 0 < dy < 0.6t.
                p = Point::new(
                    p.x + rng.random_range(-0.6 * t..0.6 * t),
                    p.y + rng.random_range(0.05 * t..0.6 * t),
                );
                walk.push(p);
            }
            groups.push(walk);
        }
        let separated = groups.iter().enumerate().all(|(i, a)| {
            groups[i + 1..]
                .iter()
                .all(|b| a.iter().all(|p| b.iter().all(|q| p.distance(*q) > 2.0 * t)))
        });
        if separated {
            return groups.concat();
        }
    }
}

fn clustering_equivalence() -> Outcome {
    let t = 12.0;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..1000 {
        let pts = random_clusters(&mut rng, t);
        let got: BTreeSet<BTreeSet<usize>> = cluster_points(&pts, t)
            .map_err(|e| e.to_string())?
            .into_iter()
            .map(|b| b.into_iter().collect())
            .collect();
        let want = components(pts.len(), |i, j| pts[i].distance(pts[j]) <= t);
        if got != want {
            return Err(format!("trial {trial}: partitions differ"));
        }
    }
    Ok("1000 random point sets, identical partitions".into())
}

/// Grid flood fill over the 8-neighbourhood.
fn flood_fill_components(cells: &[Cell], w: usize, h: usize) -> BTreeSet<BTreeSet<Cell>> {
    let mut on = vec![false; w * h];
    for c in cells {
        on[c.row * w + c.col] = true;
    }
    let mut out = BTreeSet::new();
    for c in cells {
        if !on[c.row * w + c.col] {
            continue;
        }
        on[c.row * w + c.col] = false;
        let mut comp = BTreeSet::new();
        let mut stack = vec![*c];
        while let Some(p) = stack.pop() {
            comp.insert(p);
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (r, col) = (p.row as i64 + dr, p.col as i64 + dc);
                    if r < 0 || col < 0 || r >= h as i64 || col >= w as i64 {
                        continue;
                    }
                    let k = r as usize * w + col as usize;
                    if on[k] {
                        on[k] = false;
                        stack.push(Cell::new(col as usize, r as usize));
                    }
                }
            }
        }
        out.insert(comp);
    }
    out
}

fn merge_equivalence() -> Outcome {
    let size = ImageSize::default();
    let (w, h) = (80usize, 60usize);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..1000 {
        let density = rng.random_range(0.02..0.6);
        let cells: Vec<Cell> = (0..h)
            .flat_map(|r| (0..w).map(move |c| Cell::new(c, r)))
            .filter(|_| rng.random_bool(density))
            .collect();
        let scored: ScoredCells = cells.iter().map(|c| (*c, 0.9)).collect();
        let got: BTreeSet<BTreeSet<Cell>> = merge_cells(&scored, ClassLabel::StopLine, &size)
            .into_iter()
            .map(|m| m.cells)
            .collect();
        let want = flood_fill_components(&cells, w, h);
        if got != want {
            return Err(format!("trial {trial}: components differ"));
        }
    }
    Ok("1000 random 80x60 masks, identical components".into())
}

fn loss_suite() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_balance: f64 = 0.0;
    for _ in 0..1000 {
        let l: [f64; 4] = std::array::from_fn(|_| 10f64.powf(rng.random_range(-4.0..4.0)));
        let w = balance_weights(&TaskLosses::from_array(l).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?
            .as_array();
        for i in 0..4 {
            worst_balance = worst_balance.max((w[i] * l[i] - 1.0).abs());
        }
    }
    let mut worst_rel: f64 = 0.0;
    let h = 1e-6;
    for _ in 0..100 {
        let (c, rows, cols) = (
            rng.random_range(2..6),
            rng.random_range(1..5),
            rng.random_range(1..5),
        );
        let n = rows * cols;
        let data: Vec<f64> = (0..c * n).map(|_| rng.random_range(0.05..0.95)).collect();
        let map = ConfidenceMap::new(c, rows, cols, data).map_err(|e| e.to_string())?;
        let targets: Vec<u8> = (0..n).map(|_| rng.random_range(0..c) as u8).collect();
        let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.8)).collect();
        let grad =
            cross_entropy_grad(&map, &targets, Some(&mask), DEFAULT_EPSILON).map_err(|e| e.to_string())?;
        for k in 0..map.data().len() {
            let mut plus = map.clone();
            plus.data_mut()[k] += h;
            let mut minus = map.clone();
            minus.data_mut()[k] -= h;
            let f = |m: &ConfidenceMap| cross_entropy(m, &targets, Some(&mask), DEFAULT_EPSILON).unwrap();
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            let g = grad.data()[k];
            let scale = g.abs().max(fd.abs());
            if scale > 1e-9 {
                worst_rel = worst_rel.max((g - fd).abs() / scale);
            } else if g != 0.0 {
                worst_rel = f64::INFINITY;
            }
        }
    }
    check(
        worst_balance <= 1e-12 && worst_rel <= 1e-4,
        format!(
            "balance max |w·L − 1| = {worst_balance:.2e}; CE gradient max relative error {worst_rel:.2e}"
        ),
    )
}

fn metric_rules() -> Outcome {
    let blob: BTreeSet<Cell> = [(0, 0), (1, 0), (0, 1), (1, 1)]
        .iter()
        .map(|&(c, r)| Cell::new(c, r))
        .collect();
    let gt_half: BTreeSet<Cell> = [Cell::new(0, 0), Cell::new(1, 0)].into();
    let gt_three: BTreeSet<Cell> = [Cell::new(0, 0), Cell::new(1, 0), Cell::new(0, 1)].into();
    let half = eval_markings(
        &[(ClassLabel::StopLine, blob.clone())],
        &[(ClassLabel::StopLine, gt_half.clone())],
    );
    let strict =
        !blob_is_true(&blob, &gt_half) && blob_is_true(&blob, &gt_three) && half.overall.recall == 0.0;

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut monotone = true;
    for _ in 0..500 {
        let n = rng.random_range(1..40);
        let gt: Vec<(Option<Point>, VpDifficulty)> = (0..n)
            .map(|_| match rng.random_range(0..3) {
                0 => (None, VpDifficulty::None),
                1 => (
                    Some(Point::new(
                        rng.random_range(0.0..640.0),
                        rng.random_range(0.0..480.0),
                    )),
                    VpDifficulty::Hard,
                ),
                _ => (
                    Some(Point::new(
                        rng.random_range(0.0..640.0),
                        rng.random_range(0.0..480.0),
                    )),
                    VpDifficulty::Easy,
                ),
            })
            .collect();
        let pred: Vec<Option<Point>> = (0..n)
            .map(|_| {
                rng.random_bool(0.9)
                    .then(|| Point::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)))
            })
            .collect();
        let mut thresholds: Vec<f64> = (0..10).map(|_| rng.random_range(0.5..400.0)).collect();
        thresholds.sort_by(f64::total_cmp);
        for include_hard in [true, false] {
            let curve = eval_vp(&pred, &gt, &thresholds, include_hard).map_err(|e| e.to_string())?;
            monotone &= curve.recalls.windows(2).all(|w| w[0] <= w[1]);
        }
    }
    check(
        strict && monotone,
        format!("2-of-4 blob rejected: {strict}; VP recall monotone on 500 random inputs: {monotone}"),
    )
}

fn postprocess_speed() -> Outcome {
    let cfg = PipelineConfig::default();
    let spec = SceneSpec {
        noise: 0.1,
        ..SceneSpec::default()
    };
    let tensor = generate(&spec, 11).map_err(|e| e.to_string())?.tensor;
    if (tensor.channels(), tensor.height(), tensor.width()) != (24, 60, 80) {
        return Err("unexpected tensor shape".into());
    }
    postprocess(&tensor, &cfg).map_err(|e| e.to_string())?;
    let mut times: Vec<f64> = (0..100)
        .map(|_| {
            let start = Instant::now();
            let p = postprocess(&tensor, &cfg).expect("postprocess");
            std::hint::black_box(p);
            start.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(f64::total_cmp);
    let median = (times[49] + times[50]) / 2.0;
    check(
        median <= 20.0,
        format!("median {median:.3} ms over 100 runs on 80x60x24"),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_roadgrid"))
        .current_dir(dir)
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() && !args.contains(&"--strict") {
        return Err(format!(
            "{args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(out.stdout)
}

fn snapshot(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).expect("readable") {
            let p = entry.expect("entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).expect("prefix").display().to_string();
                out.push((rel, fs::read(&p).expect("readable")));
            }
        }
    }
    out.sort();
    out
}

fn run_all_commands(dir: &Path) -> Result<Vec<u8>, String> {
    let spec = r#"{"noise": 0.1, "clutter": 0.001, "markings": [{"label": "crosswalk", "x": 0.0, "z": 10.0, "width": 3.0, "length": 3.0}]}"#;
    fs::write(dir.join("scene.json"), spec).map_err(|e| e.to_string())?;
    let mut stdout = Vec::new();
    for args in [
        &[
            "synth",
            "--spec",
            "scene.json",
            "--out",
            "syn",
            "--count",
            "6",
            "--seed",
            "9",
            "--eval",
            "--jobs",
            "3",
        ][..],
        &["encode", "syn/gt", "--out", "enc", "--flip", "--jobs", "3"],
        &["decode-vp", "syn/tensors/frame_0002.vpgc"],
        &[
            "postprocess",
            "syn/tensors/frame_0001.vpgc",
            "--out",
            "single.json",
            "--overlay",
            "overlay.png",
        ],
        &["postprocess", "syn/tensors", "--out", "pred", "--jobs", "3"],
        &["evaluate", "pred", "syn/gt", "--out", "eval", "--jobs", "3"],
        &["netspec"],
        &["netspec", "--strict"],
    ] {
        stdout.extend(run_cli(dir, args)?);
    }
    Ok(stdout)
}

fn determinism() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out_a = run_all_commands(a.path())?;
    let out_b = run_all_commands(b.path())?;
    let (snap_a, snap_b) = (snapshot(a.path()), snapshot(b.path()));
    let files_equal = snap_a == snap_b;

    let mut round_trips = 0;
    for (name, bytes) in snap_a.iter().filter(|(n, _)| n.ends_with(".vpgc")) {
        let back = decode_tensor(bytes).map_err(|e| format!("{name}: {e}"))?;
        if encode_tensor(&back).map_err(|e| e.to_string())? != *bytes {
            return Err(format!("{name}: tensor round trip changed bytes"));
        }
        round_trips += 1;
    }
    check(
        files_equal && out_a == out_b && round_trips > 0,
        format!(
            "{} output files identical across runs: {files_equal}; stdout identical: {}; {round_trips} tensor files byte-exact",
            snap_a.len(),
            out_a == out_b
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let criteria: [Criterion; 10] = [
        ("netspec receptive-field row", receptive_field_row),
        ("VP encode/decode round trip", vp_round_trip),
        ("P_avg unit checks", p_avg_units),
        ("end-to-end synthetic oracle", end_to_end_oracle),
        ("bin-stack clustering equivalence", clustering_equivalence),
        ("8-connected merge equivalence", merge_equivalence),
        ("loss balancing and CE gradient", loss_suite),
        ("marking half rule and VP recall monotonicity", metric_rules),
        ("post-processing latency", postprocess_speed),
        ("command determinism and tensor round trip", determinism),
    ];
    let mut failures = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let outcome = panic::catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d.clone()),
            Err(d) => ("FAIL", d.clone()),
        };
        // Written straight to stdout so the lines show without --nocapture.
        let line = format!("acceptance {:>2} {status}: {name} ({detail})\n", i + 1);
        std::io::stdout().write_all(line.as_bytes()).expect("stdout");
        if outcome.is_err() {
            failures.push(i + 1);
        }
    }
    assert!(failures.is_empty(), "failed criteria: {failures:?}");
}
