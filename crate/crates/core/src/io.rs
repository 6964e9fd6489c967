//! Output helpers: atomic writes, grayscale PNGs, CSV tables and a minimal
//! line-plot renderer.

use std::io::Write;
use std::path::Path;

use image::{GrayImage, ImageEncoder, Luma, Rgb, RgbImage};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::stack::RealImage;

/// Writes via a temporary file in the destination directory, then renames.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// Serializes rows with a header derived from the row type. Floats use the
/// shortest representation that round-trips.
pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_atomic(path, &csv_bytes(rows, path)?)
}

pub fn csv_bytes<T: Serialize>(rows: &[T], path: &Path) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    }
    w.into_inner().map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

/// 8-bit grayscale rendering of `image / scale`, clamped to `[0, 1]`.
pub fn grayscale(image: &RealImage, scale: f64) -> GrayImage {
    let inv = if scale > 0.0 { 1.0 / scale } else { 0.0 };
    GrayImage::from_fn(image.m() as u32, image.n() as u32, |x, y| {
        let v = (image.get(y as usize, x as usize) * inv).clamp(0.0, 1.0);
        Luma([(v * 255.0).round() as u8])
    })
}

pub fn write_png_gray(path: &Path, image: &RealImage, scale: f64) -> Result<()> {
    let img = grayscale(image, scale);
    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(&mut buf)
        .write_image(img.as_raw(), img.width(), img.height(), image::ExtendedColorType::L8)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    write_atomic(path, &buf)
}

/// One named series for [`write_line_plot`].
pub struct Series<'a> {
    pub label: &'a str,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [[u8; 3]; 6] = [
    [200, 30, 30],
    [30, 90, 200],
    [30, 150, 60],
    [200, 130, 20],
    [130, 40, 160],
    [40, 40, 40],
];

/// Plain line plot: axes box, one colored polyline with point markers per
/// series. No text rendering; series colors follow the order given.
pub fn write_line_plot(path: &Path, series: &[Series<'_>]) -> Result<()> {
    let (w, h) = (480u32, 320u32);
    let margin = 30i64;
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));

    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let to_px = |x: f64, y: f64| -> (i64, i64) {
        let px = margin + ((x - x0) / (x1 - x0) * (w as i64 - 2 * margin) as f64).round() as i64;
        let py = h as i64 - margin - ((y - y0) / (y1 - y0) * (h as i64 - 2 * margin) as f64).round() as i64;
        (px, py)
    };

    let axis = Rgb([0, 0, 0]);
    let (left, bottom) = (margin, h as i64 - margin);
    let (right, top) = (w as i64 - margin, margin);
    draw_line(&mut img, (left, bottom), (right, bottom), axis);
    draw_line(&mut img, (left, bottom), (left, top), axis);

    for (k, s) in series.iter().enumerate() {
        let color = Rgb(PALETTE[k % PALETTE.len()]);
        let mut prev = None;
        for &(x, y) in s.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
            let p = to_px(x, y);
            if let Some(q) = prev {
                draw_line(&mut img, q, p, color);
            }
            for dx in -2..=2 {
                for dy in -2..=2 {
                    put(&mut img, p.0 + dx, p.1 + dy, color);
                }
            }
            prev = Some(p);
        }
    }

    let mut buf = Vec::new();
    image::codecs::png::PngEncoder::new(&mut buf)
        .write_image(img.as_raw(), w, h, image::ExtendedColorType::Rgb8)
        .map_err(|e| Error::Format {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    write_atomic(path, &buf)
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

// Bresenham
fn draw_line(img: &mut RgbImage, a: (i64, i64), b: (i64, i64), c: Rgb<u8>) {
    let (mut x, mut y) = a;
    let dx = (b.0 - a.0).abs();
    let dy = -(b.1 - a.1).abs();
    let sx = if a.0 < b.0 { 1 } else { -1 };
    let sy = if a.1 < b.1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(img, x, y, c);
        if (x, y) == b {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}
