use std::path::Path;

use anyhow::Result;
use image::{ImageFormat, Rgb, RgbImage};
use roadgrid_core::pipeline::Prediction;
use roadgrid_core::{ClassLabel, ImageSize};

fn color(label: ClassLabel) -> Rgb<u8> {
    const PALETTE: [[u8; 3]; 17] = [
        [255, 255, 255],
        [200, 200, 255],
        [255, 200, 200],
        [255, 220, 0],
        [255, 160, 0],
        [255, 100, 0],
        [0, 120, 255],
        [0, 255, 160],
        [255, 0, 0],
        [0, 255, 0],
        [0, 180, 0],
        [120, 255, 120],
        [180, 0, 255],
        [255, 0, 180],
        [0, 255, 255],
        [255, 128, 128],
        [128, 128, 128],
    ];
    Rgb(PALETTE[usize::from(label.id())])
}

/// Draws marking cells, lane curves and the VP on a black canvas.
pub fn render(pred: &Prediction, size: &ImageSize, path: &Path) -> Result<()> {
    let mut img = RgbImage::new(size.width, size.height);
    let g = size.grid;
    for m in &pred.markings {
        let c = color(m.label);
        for cell in &m.cells {
            let (x0, y0) = (cell.col as u32 * g, cell.row as u32 * g);
            for y in y0..(y0 + g).min(size.height) {
                for x in x0..(x0 + g).min(size.width) {
                    img.put_pixel(x, y, Rgb(c.0.map(|v| v / 2)));
                }
            }
        }
    }
    for lane in &pred.lanes {
        let c = color(lane.label);
        let [y0, y1] = lane.y_range;
        for y in (y0.max(0.0).ceil() as u32)..=(y1.min(f64::from(size.height) - 1.0).floor() as u32) {
            let x = lane.x_at(f64::from(y) + 0.5).floor();
            for dx in -1..=1 {
                let xi = x as i64 + dx;
                if xi >= 0 && xi < i64::from(size.width) {
                    img.put_pixel(xi as u32, y, c);
                }
            }
        }
    }
    if let Some(vp) = pred.vp_point {
        let (cx, cy) = (vp.x as i64, vp.y as i64);
        for d in -6..=6i64 {
            for (x, y) in [(cx + d, cy), (cx, cy + d)] {
                if x >= 0 && y >= 0 && x < i64::from(size.width) && y < i64::from(size.height) {
                    img.put_pixel(x as u32, y as u32, Rgb([255, 0, 255]));
                }
            }
        }
    }
    img.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}
