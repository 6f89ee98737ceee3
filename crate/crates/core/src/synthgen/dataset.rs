//! Dataset directory layout and (de)serialization.
//!
//! One directory per domain:
//!   images/<id>.png      lossless 8-bit RGB
//!   annotations.jsonl    one record per image
//!   dataset.meta         key = value provenance (spec, seed, chain)
//!
//! Pixels quantize to 8 bits on save; loading maps them back to [0, 1].

use crate::error::{Error, Result};
use crate::geom::PixelBox;
use crate::synthgen::scene::{AnnotatedImage, BoxLabel};
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

#[derive(Serialize, Deserialize)]
struct AnnLabel {
    class: usize,
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

#[derive(Serialize, Deserialize)]
struct AnnRecord {
    id: String,
    file: String,
    width: usize,
    height: usize,
    labels: Vec<AnnLabel>,
}

pub fn pixels_to_rgb8(pixels: &Array3<f64>) -> image::RgbImage {
    let (h, w, _) = pixels.dim();
    let mut out = image::RgbImage::new(w as u32, h as u32);
    for y in 0..h {
        for x in 0..w {
            let px = image::Rgb([
                (pixels[[y, x, 0]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (pixels[[y, x, 1]].clamp(0.0, 1.0) * 255.0).round() as u8,
                (pixels[[y, x, 2]].clamp(0.0, 1.0) * 255.0).round() as u8,
            ]);
            out.put_pixel(x as u32, y as u32, px);
        }
    }
    out
}

pub fn rgb8_to_pixels(img: &image::RgbImage) -> Array3<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut out = Array3::zeros((h, w, 3));
    for y in 0..h {
        for x in 0..w {
            let p = img.get_pixel(x as u32, y as u32);
            for c in 0..3 {
                out[[y, x, c]] = p.0[c] as f64 / 255.0;
            }
        }
    }
    out
}

/// Write one domain directory. `meta` lines are `key = value` pairs
/// recorded verbatim in dataset.meta.
pub fn write_domain(dir: &Path, images: &[AnnotatedImage], meta: &[(String, String)]) -> Result<()> {
    let img_dir = dir.join("images");
    fs::create_dir_all(&img_dir)?;
    let mut ann = fs::File::create(dir.join("annotations.jsonl"))?;
    for img in images {
        let file = format!("images/{}.png", img.id);
        pixels_to_rgb8(&img.pixels)
            .save_with_format(dir.join(&file), image::ImageFormat::Png)?;
        let rec = AnnRecord {
            id: img.id.clone(),
            file,
            width: img.width(),
            height: img.height(),
            labels: img
                .labels
                .iter()
                .map(|l| AnnLabel {
                    class: l.class_id,
                    x1: l.bbox.x1,
                    y1: l.bbox.y1,
                    x2: l.bbox.x2,
                    y2: l.bbox.y2,
                })
                .collect(),
        };
        writeln!(ann, "{}", serde_json::to_string(&rec)?)?;
    }
    let mut mf = fs::File::create(dir.join("dataset.meta"))?;
    for (k, v) in meta {
        writeln!(mf, "{k} = {v}")?;
    }
    Ok(())
}

/// Load a domain directory written by [`write_domain`].
pub fn load_domain(dir: &Path) -> Result<Vec<AnnotatedImage>> {
    let ann_path = dir.join("annotations.jsonl");
    if !ann_path.exists() {
        return Err(Error::MissingInput(format!(
            "dataset annotations not found: {}",
            ann_path.display()
        )));
    }
    let mut out = Vec::new();
    let reader = BufReader::new(fs::File::open(&ann_path)?);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnRecord = serde_json::from_str(&line)?;
        let img_path = dir.join(&rec.file);
        if !img_path.exists() {
            return Err(Error::MissingInput(format!("image not found: {}", img_path.display())));
        }
        let rgb = image::open(&img_path)?.to_rgb8();
        let pixels = rgb8_to_pixels(&rgb);
        if pixels.dim() != (rec.height, rec.width, 3) {
            return Err(Error::Other(format!(
                "{}: annotation says {}x{} but image is {}x{}",
                rec.id,
                rec.width,
                rec.height,
                pixels.dim().1,
                pixels.dim().0
            )));
        }
        out.push(AnnotatedImage {
            id: rec.id,
            pixels,
            labels: rec
                .labels
                .into_iter()
                .map(|l| BoxLabel { class_id: l.class, bbox: PixelBox::new(l.x1, l.y1, l.x2, l.y2) })
                .collect(),
        });
    }
    Ok(out)
}

/// Read dataset.meta back as ordered key/value pairs.
pub fn read_meta(dir: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(dir.join("dataset.meta"))?;
    let mut out = Vec::new();
    for line in text.lines() {
        if let Some((k, v)) = line.split_once('=') {
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    Ok(out)
}

/// SHA-256 of every file under a directory, ordered by relative path.
/// Used by determinism tests: same seed, same bytes.
pub fn dir_checksum(dir: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut files: Vec<PathBuf> = Vec::new();
    collect_files(dir, &mut files)?;
    files.sort();
    let mut h = Sha256::new();
    for f in &files {
        h.update(f.strip_prefix(dir).unwrap().to_string_lossy().as_bytes());
        h.update(fs::read(f)?);
    }
    Ok(format!("{:x}", h.finalize()))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir)? {
        let p = entry?.path();
        if p.is_dir() {
            collect_files(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}
