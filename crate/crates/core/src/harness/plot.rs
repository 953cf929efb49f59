//! Evaluation-return curves: a two-column CSV series and a PNG line plot.

use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};

use super::metrics::read_metrics;
use crate::error::Result;

const WIDTH: u32 = 640;
const HEIGHT: u32 = 400;
const MARGIN: u32 = 40;
const TICKS: u32 = 5;

/// `(env_step, eval_return_mean)` for every row that has an evaluation.
pub fn eval_series(metrics_path: &Path) -> Result<Vec<(u64, f64)>> {
    Ok(read_metrics(metrics_path)?
        .into_iter()
        .filter_map(|r| r.eval_return_mean.map(|m| (r.env_step, m)))
        .collect())
}

/// Where the series CSV goes for a given image path.
pub fn series_path(out_path: &Path) -> PathBuf {
    out_path.with_extension("csv")
}

/// Writes the series next to `out_path` and the plot to `out_path`.
pub fn export_curves(metrics_path: &Path, out_path: &Path) -> Result<Vec<(u64, f64)>> {
    let series = eval_series(metrics_path)?;
    let mut csv = String::from("env_step,eval_return_mean\n");
    for (s, m) in &series {
        csv.push_str(&format!("{s},{m}\n"));
    }
    std::fs::write(series_path(out_path), csv)?;
    render(&series).save(out_path)?;
    Ok(series)
}

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let n = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let (x, y) = (x0 + t * (x1 - x0), y0 + t * (y1 - y0));
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Axes with tick marks and, if there are points, the polyline through them.
pub fn render(series: &[(u64, f64)]) -> RgbImage {
    let mut img = RgbImage::from_pixel(WIDTH, HEIGHT, Rgb([255, 255, 255]));
    let axis = Rgb([0, 0, 0]);
    let (left, right) = (MARGIN as f64, (WIDTH - MARGIN) as f64);
    let (top, bottom) = (MARGIN as f64, (HEIGHT - MARGIN) as f64);
    line(&mut img, (left, bottom), (right, bottom), axis);
    line(&mut img, (left, bottom), (left, top), axis);
    for i in 0..=TICKS {
        let f = i as f64 / TICKS as f64;
        let x = left + f * (right - left);
        let y = bottom - f * (bottom - top);
        line(&mut img, (x, bottom), (x, bottom + 5.0), axis);
        line(&mut img, (left - 5.0, y), (left, y), axis);
    }
    if series.is_empty() {
        return img;
    }
    let xmax = series.iter().map(|p| p.0).max().unwrap_or(1).max(1) as f64;
    let ymin = series.iter().map(|p| p.1).fold(f64::INFINITY, f64::min).min(0.0);
    let ymax = series.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let yspan = if ymax > ymin { ymax - ymin } else { 1.0 };
    let to_px = |(s, v): (u64, f64)| {
        (
            left + s as f64 / xmax * (right - left),
            bottom - (v - ymin) / yspan * (bottom - top),
        )
    };
    let color = Rgb([200, 40, 40]);
    let pts: Vec<(f64, f64)> = series.iter().map(|&p| to_px(p)).collect();
    for w in pts.windows(2) {
        line(&mut img, w[0], w[1], color);
    }
    for &(x, y) in &pts {
        for dy in -2i32..=2 {
            for dx in -2i32..=2 {
                let (px, py) = (x as i32 + dx, y as i32 + dy);
                if px >= 0 && py >= 0 && (px as u32) < WIDTH && (py as u32) < HEIGHT {
                    img.put_pixel(px as u32, py as u32, color);
                }
            }
        }
    }
    img
}
