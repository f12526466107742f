//! Minimal raster plots. Axis ticks carry numeric labels; series and cell
//! names go into a CSV written next to each PNG.

use std::path::Path;

use image::{Rgb, RgbImage};
use pnp_cosmo::Result;

const W: u32 = 560;
const H: u32 = 380;
const LEFT: u32 = 64;
const RIGHT: u32 = 150;
const TOP: u32 = 16;
const BOTTOM: u32 = 40;
const SCALE: u32 = 2;

const PALETTE: [[u8; 3]; 8] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
    [227, 119, 194],
    [127, 127, 127],
];

// 3x5 glyphs, one row per byte, high bit on the left.
fn glyph(c: char) -> Option<[u8; 5]> {
    Some(match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b010, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        'e' => [0b000, 0b111, 0b111, 0b100, 0b111],
        _ => return None,
    })
}

fn text_width(s: &str) -> u32 {
    s.chars().count() as u32 * 4 * SCALE
}

fn draw_text(img: &mut RgbImage, x: i64, y: i64, s: &str, color: Rgb<u8>) {
    for (k, c) in s.chars().enumerate() {
        let Some(g) = glyph(c) else { continue };
        let ox = x + (k as u32 * 4 * SCALE) as i64;
        for (row, bits) in g.iter().enumerate() {
            for col in 0..3 {
                if bits & (0b100 >> col) != 0 {
                    for dy in 0..SCALE {
                        for dx in 0..SCALE {
                            put(
                                img,
                                ox + (col * SCALE + dx) as i64,
                                y + (row as u32 * SCALE + dy) as i64,
                                color,
                            );
                        }
                    }
                }
            }
        }
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: Rgb<u8>, thick: i64) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for k in 0..=steps {
        let t = k as f64 / steps as f64;
        let (x, y) = (
            (x0 + t * (x1 - x0)).round() as i64,
            (y0 + t * (y1 - y0)).round() as i64,
        );
        for d in -(thick / 2)..=(thick / 2) {
            put(img, x + d, y, c);
            put(img, x, y + d, c);
        }
    }
}

fn fill(img: &mut RgbImage, x0: u32, y0: u32, x1: u32, y1: u32, c: Rgb<u8>) {
    for y in y0..y1.min(img.height()) {
        for x in x0..x1.min(img.width()) {
            img.put_pixel(x, y, c);
        }
    }
}

fn label(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e4).contains(&a) {
        return format!("{v:.0e}");
    }
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

/// About five round tick positions covering `[lo, hi]`.
pub fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    if !(hi > lo) {
        return vec![lo];
    }
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let mut out = Vec::new();
    let mut t = (lo / step).ceil() * step;
    while t <= hi + step * 1e-9 {
        out.push(if t.abs() < step * 1e-9 { 0.0 } else { t });
        t += step;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Line plot with markers. The legend shows each series' color and its
/// index; `<path>.csv` maps indices to labels and lists the points.
pub fn line_plot(path: &Path, series: &[Series], log_x: bool) -> Result<()> {
    let tx = |x: f64| if log_x { x.log10() } else { x };
    let pts = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y) in pts {
        x0 = x0.min(tx(x));
        x1 = x1.max(tx(x));
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        (x0, x1) = (x0 - 0.5, x1 + 0.5);
    }
    let pad = ((y1 - y0) * 0.08).max(1e-6);
    (y0, y1) = (y0 - pad, y1 + pad);

    let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
    let (pw, ph) = ((W - LEFT - RIGHT) as f64, (H - TOP - BOTTOM) as f64);
    let px = |x: f64| LEFT as f64 + (tx(x) - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP as f64 + (y1 - y) / (y1 - y0) * ph;
    let grid = Rgb([225, 225, 225]);
    let ink = Rgb([40, 40, 40]);
    for t in ticks(y0, y1) {
        let y = py(t);
        line(&mut img, (LEFT as f64, y), ((W - RIGHT) as f64, y), grid, 1);
        let s = label(t);
        draw_text(
            &mut img,
            LEFT as i64 - 6 - text_width(&s) as i64,
            y as i64 - 5,
            &s,
            ink,
        );
    }
    for t in ticks(x0, x1) {
        let x = LEFT as f64 + (t - x0) / (x1 - x0) * pw;
        line(&mut img, (x, TOP as f64), (x, (H - BOTTOM) as f64), grid, 1);
        let s = label(if log_x { 10f64.powf(t) } else { t });
        draw_text(
            &mut img,
            x as i64 - text_width(&s) as i64 / 2,
            (H - BOTTOM + 8) as i64,
            &s,
            ink,
        );
    }
    line(
        &mut img,
        (LEFT as f64, TOP as f64),
        (LEFT as f64, (H - BOTTOM) as f64),
        ink,
        1,
    );
    line(
        &mut img,
        (LEFT as f64, (H - BOTTOM) as f64),
        ((W - RIGHT) as f64, (H - BOTTOM) as f64),
        ink,
        1,
    );

    for (k, s) in series.iter().enumerate() {
        let c = Rgb(PALETTE[k % PALETTE.len()]);
        let p: Vec<(f64, f64)> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| (px(x), py(y)))
            .collect();
        for w in p.windows(2) {
            line(&mut img, w[0], w[1], c, 2);
        }
        for &(x, y) in &p {
            fill(
                &mut img,
                (x - 2.0).max(0.0) as u32,
                (y - 2.0).max(0.0) as u32,
                x as u32 + 3,
                y as u32 + 3,
                c,
            );
        }
        let ly = TOP + 4 + 16 * k as u32;
        fill(&mut img, W - RIGHT + 12, ly, W - RIGHT + 32, ly + 10, c);
        draw_text(
            &mut img,
            (W - RIGHT + 38) as i64,
            ly as i64,
            &k.to_string(),
            ink,
        );
    }
    img.save(path)?;

    let mut wtr = csv::Writer::from_path(path.with_extension("csv"))?;
    wtr.write_record(["series", "label", "x", "y"])?;
    for (k, s) in series.iter().enumerate() {
        for (x, y) in &s.points {
            wtr.write_record([k.to_string(), s.label.clone(), x.to_string(), y.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

fn colormap(t: f64) -> Rgb<u8> {
    // Dark blue through teal to yellow.
    let stops = [
        [68.0, 1.0, 84.0],
        [59.0, 82.0, 139.0],
        [33.0, 145.0, 140.0],
        [94.0, 201.0, 98.0],
        [253.0, 231.0, 37.0],
    ];
    let t = t.clamp(0.0, 1.0) * (stops.len() - 1) as f64;
    let i = (t.floor() as usize).min(stops.len() - 2);
    let f = t - i as f64;
    let c = |k: usize| (stops[i][k] + f * (stops[i + 1][k] - stops[i][k])).round() as u8;
    Rgb([c(0), c(1), c(2)])
}

/// Heatmap of `values[row][col]` with the value printed in each cell.
/// `<path>.csv` lists the row and column labels with the values.
pub fn heatmap(path: &Path, rows: &[String], cols: &[String], values: &[Vec<f64>]) -> Result<()> {
    let finite = values.iter().flatten().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, |a, &b| a.min(b));
    let hi = finite.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let cell = 72u32;
    let (nr, nc) = (rows.len().max(1) as u32, cols.len().max(1) as u32);
    let mut img = RgbImage::from_pixel(nc * cell + 16, nr * cell + 16, Rgb([255, 255, 255]));
    for (i, row) in values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let (x, y) = (8 + j as u32 * cell, 8 + i as u32 * cell);
            let t = (v - lo) / span;
            let c = if v.is_finite() {
                colormap(t)
            } else {
                Rgb([200, 200, 200])
            };
            fill(&mut img, x + 1, y + 1, x + cell - 1, y + cell - 1, c);
            if v.is_finite() {
                let s = format!("{v:.2}");
                let ink = if t > 0.6 {
                    Rgb([0, 0, 0])
                } else {
                    Rgb([255, 255, 255])
                };
                draw_text(
                    &mut img,
                    (x + cell / 2) as i64 - text_width(&s) as i64 / 2,
                    (y + cell / 2) as i64 - 5,
                    &s,
                    ink,
                );
            }
        }
    }
    img.save(path)?;

    let mut wtr = csv::Writer::from_path(path.with_extension("csv"))?;
    wtr.write_record(["row", "col", "value"])?;
    for (i, row) in values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            wtr.write_record([rows[i].clone(), cols[j].clone(), v.to_string()])?;
        }
    }
    wtr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_cover_range() {
        assert_eq!(
            ticks(0.0, 1.0),
            vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]
        );
        let t = ticks(23.4, 31.7);
        assert_eq!(t.first(), Some(&24.0));
        assert_eq!(t.last(), Some(&30.0));
        assert_eq!(label(0.001), "0.001");
        assert_eq!(label(2.50), "2.5");
    }

    #[test]
    fn plots_write_png_and_csv() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.png");
        let s = vec![
            Series {
                label: "x".into(),
                points: vec![(1.0, 2.0), (2.0, 3.0), (4.0, 2.5)],
            },
            Series {
                label: "y".into(),
                points: vec![(1.0, 1.0), (4.0, f64::NAN)],
            },
        ];
        line_plot(&p, &s, true).unwrap();
        assert_eq!(image::open(&p).unwrap().width(), W);
        let text = std::fs::read_to_string(dir.path().join("a.csv")).unwrap();
        assert_eq!(text.lines().count(), 6);
        let h = dir.path().join("h.png");
        heatmap(
            &h,
            &["r0".into()],
            &["c0".into(), "c1".into()],
            &[vec![1.0, 2.0]],
        )
        .unwrap();
        assert!(h.exists());
    }
}
