//! Chart rendering without a plotting dependency.
//!
//! Line and bar charts are rasterized straight into an `RgbImage` with a
//! small built-in 5x7 glyph set. Text is lowercased before lookup; the
//! glyph table only carries what axis labels and legends actually need.

use crate::error::Result;
use image::{Rgb, RgbImage};
use std::path::Path;

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([20, 20, 20]);
const GRID: Rgb<u8> = Rgb([225, 225, 225]);

/// Series colors, reused cyclically.
pub const SERIES_COLORS: [[u8; 3]; 6] = [
    [31, 119, 180],
    [255, 127, 14],
    [44, 160, 44],
    [214, 39, 40],
    [148, 103, 189],
    [140, 86, 75],
];

// Rows are 5-bit bitmaps, most significant bit on the left.
const GLYPHS: [(char, [u8; 7]); 44] = [
    ('0', [0x0E, 0x11, 0x13, 0x15, 0x19, 0x11, 0x0E]),
    ('1', [0x04, 0x0C, 0x04, 0x04, 0x04, 0x04, 0x0E]),
    ('2', [0x0E, 0x11, 0x01, 0x02, 0x04, 0x08, 0x1F]),
    ('3', [0x1F, 0x02, 0x04, 0x02, 0x01, 0x11, 0x0E]),
    ('4', [0x02, 0x06, 0x0A, 0x12, 0x1F, 0x02, 0x02]),
    ('5', [0x1F, 0x10, 0x1E, 0x01, 0x01, 0x11, 0x0E]),
    ('6', [0x06, 0x08, 0x10, 0x1E, 0x11, 0x11, 0x0E]),
    ('7', [0x1F, 0x01, 0x02, 0x04, 0x08, 0x08, 0x08]),
    ('8', [0x0E, 0x11, 0x11, 0x0E, 0x11, 0x11, 0x0E]),
    ('9', [0x0E, 0x11, 0x11, 0x0F, 0x01, 0x02, 0x0C]),
    ('a', [0x00, 0x00, 0x0E, 0x01, 0x0F, 0x11, 0x0F]),
    ('b', [0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x1E]),
    ('c', [0x00, 0x00, 0x0E, 0x10, 0x10, 0x11, 0x0E]),
    ('d', [0x01, 0x01, 0x0D, 0x13, 0x11, 0x11, 0x0F]),
    ('e', [0x00, 0x00, 0x0E, 0x11, 0x1F, 0x10, 0x0E]),
    ('f', [0x06, 0x09, 0x08, 0x1C, 0x08, 0x08, 0x08]),
    ('g', [0x00, 0x0F, 0x11, 0x11, 0x0F, 0x01, 0x0E]),
    ('h', [0x10, 0x10, 0x16, 0x19, 0x11, 0x11, 0x11]),
    ('i', [0x04, 0x00, 0x0C, 0x04, 0x04, 0x04, 0x0E]),
    ('j', [0x02, 0x00, 0x06, 0x02, 0x02, 0x12, 0x0C]),
    ('k', [0x10, 0x10, 0x12, 0x14, 0x18, 0x14, 0x12]),
    ('l', [0x0C, 0x04, 0x04, 0x04, 0x04, 0x04, 0x0E]),
    ('m', [0x00, 0x00, 0x1A, 0x15, 0x15, 0x11, 0x11]),
    ('n', [0x00, 0x00, 0x16, 0x19, 0x11, 0x11, 0x11]),
    ('o', [0x00, 0x00, 0x0E, 0x11, 0x11, 0x11, 0x0E]),
    ('p', [0x00, 0x00, 0x1E, 0x11, 0x1E, 0x10, 0x10]),
    ('q', [0x00, 0x00, 0x0D, 0x13, 0x0F, 0x01, 0x01]),
    ('r', [0x00, 0x00, 0x16, 0x19, 0x10, 0x10, 0x10]),
    ('s', [0x00, 0x00, 0x0E, 0x10, 0x0E, 0x01, 0x1E]),
    ('t', [0x08, 0x08, 0x1C, 0x08, 0x08, 0x09, 0x06]),
    ('u', [0x00, 0x00, 0x11, 0x11, 0x11, 0x13, 0x0D]),
    ('v', [0x00, 0x00, 0x11, 0x11, 0x11, 0x0A, 0x04]),
    ('w', [0x00, 0x00, 0x11, 0x11, 0x15, 0x15, 0x0A]),
    ('x', [0x00, 0x00, 0x11, 0x0A, 0x04, 0x0A, 0x11]),
    ('y', [0x00, 0x00, 0x11, 0x11, 0x0F, 0x01, 0x0E]),
    ('z', [0x00, 0x00, 0x1F, 0x02, 0x04, 0x08, 0x1F]),
    ('.', [0x00, 0x00, 0x00, 0x00, 0x00, 0x0C, 0x0C]),
    (',', [0x00, 0x00, 0x00, 0x00, 0x0C, 0x04, 0x08]),
    ('-', [0x00, 0x00, 0x00, 0x1F, 0x00, 0x00, 0x00]),
    (':', [0x00, 0x0C, 0x0C, 0x00, 0x0C, 0x0C, 0x00]),
    ('=', [0x00, 0x00, 0x1F, 0x00, 0x1F, 0x00, 0x00]),
    ('/', [0x01, 0x01, 0x02, 0x04, 0x08, 0x10, 0x10]),
    ('%', [0x18, 0x19, 0x02, 0x04, 0x08, 0x13, 0x03]),
    ('_', [0x00, 0x00, 0x00, 0x00, 0x00, 0x00, 0x1F]),
];

fn glyph(c: char) -> [u8; 7] {
    if c == ' ' {
        return [0; 7];
    }
    for (g, rows) in GLYPHS {
        if g == c {
            return rows;
        }
    }
    // unmapped characters render as a hollow box
    [0x1F, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1F]
}

fn put(img: &mut RgbImage, x: i32, y: i32, color: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, color);
    }
}

pub fn draw_text(img: &mut RgbImage, x: i32, y: i32, text: &str, color: Rgb<u8>) {
    let mut cx = x;
    for c in text.to_lowercase().chars() {
        let rows = glyph(c);
        for (ry, row) in rows.iter().enumerate() {
            for rx in 0..5 {
                if row & (0x10 >> rx) != 0 {
                    put(img, cx + rx, y + ry as i32, color);
                }
            }
        }
        cx += 6;
    }
}

/// Pixel width of `text` under [`draw_text`].
pub fn text_width(text: &str) -> i32 {
    text.chars().count() as i32 * 6
}

pub fn draw_line(img: &mut RgbImage, x0: i32, y0: i32, x1: i32, y1: i32, color: Rgb<u8>) {
    let (mut x, mut y) = (x0, y0);
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(img, x, y, color);
        if x == x1 && y == y1 {
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

pub fn fill_rect(img: &mut RgbImage, x0: i32, y0: i32, x1: i32, y1: i32, color: Rgb<u8>) {
    for y in y0.min(y1)..=y0.max(y1) {
        for x in x0.min(x1)..=x0.max(x1) {
            put(img, x, y, color);
        }
    }
}

fn marker(img: &mut RgbImage, x: i32, y: i32, color: Rgb<u8>) {
    fill_rect(img, x - 1, y - 1, x + 1, y + 1, color);
}

/// Shortest decimal that still distinguishes typical tick values.
fn tick_label(v: f64) -> String {
    if (v - v.round()).abs() < 1e-9 && v.abs() < 1e6 {
        format!("{}", v.round() as i64)
    } else {
        format!("{v:.3}")
    }
}

/// One polyline per series, shared axes, legend in the top-right corner.
pub fn line_chart(
    path: &Path,
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> Result<()> {
    let (w, h) = (640u32, 420u32);
    let (ml, mr, mt, mb) = (70i32, 20i32, 30i32, 50i32);
    let mut img = RgbImage::from_pixel(w, h, WHITE);

    let pts: Vec<(f64, f64)> = series.iter().flat_map(|(_, p)| p.iter().copied()).collect();
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if pts.is_empty() {
        x0 = 0.0;
        x1 = 1.0;
        y0 = 0.0;
        y1 = 1.0;
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y1 = y0 + 1.0;
    }
    let pad = (y1 - y0) * 0.08;
    y0 -= pad;
    y1 += pad;

    let px = |x: f64| ml + ((x - x0) / (x1 - x0) * (w as i32 - ml - mr) as f64) as i32;
    let py = |y: f64| (h as i32 - mb) - ((y - y0) / (y1 - y0) * (h as i32 - mt - mb) as f64) as i32;

    for i in 0..=4 {
        let gy = y0 + (y1 - y0) * i as f64 / 4.0;
        draw_line(&mut img, ml, py(gy), w as i32 - mr, py(gy), GRID);
        let lab = tick_label(gy);
        draw_text(&mut img, ml - 6 - text_width(&lab), py(gy) - 3, &lab, BLACK);
    }
    for i in 0..=4 {
        let gx = x0 + (x1 - x0) * i as f64 / 4.0;
        draw_line(&mut img, px(gx), mt, px(gx), h as i32 - mb, GRID);
        let lab = tick_label(gx);
        draw_text(&mut img, px(gx) - text_width(&lab) / 2, h as i32 - mb + 6, &lab, BLACK);
    }
    draw_line(&mut img, ml, mt, ml, h as i32 - mb, BLACK);
    draw_line(&mut img, ml, h as i32 - mb, w as i32 - mr, h as i32 - mb, BLACK);

    draw_text(&mut img, ml, mt - 14, title, BLACK);
    draw_text(&mut img, (w as i32 - text_width(x_label)) / 2, h as i32 - 14, x_label, BLACK);
    draw_text(&mut img, 6, mt - 14, y_label, BLACK);

    for (si, (name, points)) in series.iter().enumerate() {
        let c = SERIES_COLORS[si % SERIES_COLORS.len()];
        let color = Rgb(c);
        let mut prev: Option<(i32, i32)> = None;
        for &(x, y) in points {
            let (cx, cy) = (px(x), py(y));
            if let Some((ox, oy)) = prev {
                draw_line(&mut img, ox, oy, cx, cy, color);
            }
            marker(&mut img, cx, cy, color);
            prev = Some((cx, cy));
        }
        let ly = mt + 6 + 12 * si as i32;
        let lx = w as i32 - mr - 14 - text_width(name);
        fill_rect(&mut img, lx - 12, ly, lx - 5, ly + 6, color);
        draw_text(&mut img, lx, ly, name, BLACK);
    }

    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Vertical bars with the value printed above each bar and the category
/// label below it.
pub fn bar_chart(path: &Path, title: &str, labels: &[String], values: &[f64]) -> Result<()> {
    assert_eq!(labels.len(), values.len());
    let n = values.len().max(1) as i32;
    let (w, h) = (640u32, 420u32);
    let (ml, mr, mt, mb) = (40i32, 20i32, 30i32, 50i32);
    let mut img = RgbImage::from_pixel(w, h, WHITE);

    let vmax = values.iter().cloned().fold(0.0f64, f64::max).max(1e-12);
    let span = w as i32 - ml - mr;
    let base = h as i32 - mb;
    let bar_w = (span / n.max(1)).max(8);

    draw_line(&mut img, ml, mt, ml, base, BLACK);
    draw_line(&mut img, ml, base, w as i32 - mr, base, BLACK);
    draw_text(&mut img, ml, mt - 14, title, BLACK);

    for (i, (&v, lab)) in values.iter().zip(labels).enumerate() {
        let x = ml + i as i32 * span / n;
        let bh = ((v / vmax) * (base - mt) as f64) as i32;
        let c = Rgb(SERIES_COLORS[i % SERIES_COLORS.len()]);
        fill_rect(&mut img, x + 4, base - bh, x + bar_w - 4, base, c);
        let vt = format!("{v:.3}");
        draw_text(&mut img, x + (bar_w - text_width(&vt)) / 2, base - bh - 10, &vt, BLACK);
        draw_text(&mut img, x + (bar_w - text_width(lab)) / 2, base + 6, lab, BLACK);
    }

    img.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
