//! Domain shifts: appearance-only transforms that never touch labels.
//!
//! Each transform sits behind the `ShiftTransform` trait and is registered
//! by name; a `DomainSpec` is an ordered chain parsed from strings like
//! `"fog:0.55,noise:0.03"`. Randomized transforms draw from a stream
//! derived from (domain seed, image id), so applying a shift to the same
//! image is always reproducible.

use crate::error::{Error, Result};
use crate::rng::substream;
use crate::synthgen::scene::AnnotatedImage;
use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

pub trait ShiftTransform: Send + Sync {
    fn name(&self) -> &'static str;
    /// Human-readable parameterization, used in manifests.
    fn describe(&self) -> String;
    fn apply(&self, img: &mut Array3<f64>, rng: &mut ChaCha12Rng);
}

/// Linear remix of the color channels. Modes: 0 rotate RGB->GBR,
/// 1 swap R/B, 2 warm cast, 3 cold cast.
pub struct PaletteRemap {
    pub mode: usize,
}

impl ShiftTransform for PaletteRemap {
    fn name(&self) -> &'static str {
        "palette"
    }
    fn describe(&self) -> String {
        format!("palette:{}", self.mode)
    }
    fn apply(&self, img: &mut Array3<f64>, _rng: &mut ChaCha12Rng) {
        let (h, w, _) = img.dim();
        for y in 0..h {
            for x in 0..w {
                let r = img[[y, x, 0]];
                let g = img[[y, x, 1]];
                let b = img[[y, x, 2]];
                let out = match self.mode {
                    0 => [g, b, r],
                    1 => [b, g, r],
                    2 => [(r * 1.18 + 0.04).min(1.0), g, (b * 0.78).max(0.0)],
                    _ => [(r * 0.78).max(0.0), g, (b * 1.18 + 0.04).min(1.0)],
                };
                for c in 0..3 {
                    img[[y, x, c]] = out[c].clamp(0.0, 1.0);
                }
            }
        }
    }
}

/// Multiplicative sinusoidal grid, amplitude in [0, 1], fixed period.
pub struct TextureOverlay {
    pub amplitude: f64,
}

impl ShiftTransform for TextureOverlay {
    fn name(&self) -> &'static str {
        "texture"
    }
    fn describe(&self) -> String {
        format!("texture:{}", self.amplitude)
    }
    fn apply(&self, img: &mut Array3<f64>, rng: &mut ChaCha12Rng) {
        let period = 11.0;
        let phase_x = rng.gen_range(0.0..period);
        let phase_y = rng.gen_range(0.0..period);
        let (h, w, _) = img.dim();
        for y in 0..h {
            for x in 0..w {
                let m = 1.0
                    + self.amplitude
                        * ((x as f64 + phase_x) * std::f64::consts::TAU / period).sin()
                        * ((y as f64 + phase_y) * std::f64::consts::TAU / period).sin();
                for c in 0..3 {
                    img[[y, x, c]] = (img[[y, x, c]] * m).clamp(0.0, 1.0);
                }
            }
        }
    }
}

/// Blend toward a light fog color; density 1.0 replaces every pixel.
pub struct Fog {
    pub density: f64,
}

impl ShiftTransform for Fog {
    fn name(&self) -> &'static str {
        "fog"
    }
    fn describe(&self) -> String {
        format!("fog:{}", self.density)
    }
    fn apply(&self, img: &mut Array3<f64>, _rng: &mut ChaCha12Rng) {
        let fog = [0.78, 0.80, 0.83];
        let d = self.density.clamp(0.0, 1.0);
        for v in img.iter_mut() {
            *v *= 1.0 - d;
        }
        let (h, w, _) = img.dim();
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    img[[y, x, c]] = (img[[y, x, c]] + d * fog[c]).clamp(0.0, 1.0);
                }
            }
        }
    }
}

/// Blend toward a sketch: light paper, dark strokes along luminance edges.
pub struct EdgeStylize {
    pub strength: f64,
}

impl ShiftTransform for EdgeStylize {
    fn name(&self) -> &'static str {
        "edge"
    }
    fn describe(&self) -> String {
        format!("edge:{}", self.strength)
    }
    fn apply(&self, img: &mut Array3<f64>, _rng: &mut ChaCha12Rng) {
        let (h, w, _) = img.dim();
        let mut lum = Array3::<f64>::zeros((h, w, 1));
        for y in 0..h {
            for x in 0..w {
                lum[[y, x, 0]] =
                    0.299 * img[[y, x, 0]] + 0.587 * img[[y, x, 1]] + 0.114 * img[[y, x, 2]];
            }
        }
        let s = self.strength.clamp(0.0, 1.0);
        for y in 0..h {
            for x in 0..w {
                let xm = x.saturating_sub(1);
                let xp = (x + 1).min(w - 1);
                let ym = y.saturating_sub(1);
                let yp = (y + 1).min(h - 1);
                let gx = lum[[y, xp, 0]] - lum[[y, xm, 0]];
                let gy = lum[[yp, x, 0]] - lum[[ym, x, 0]];
                let mag = (gx * gx + gy * gy).sqrt().min(1.0);
                let sketch = 0.92 - 0.85 * mag;
                for c in 0..3 {
                    img[[y, x, c]] = (img[[y, x, c]] * (1.0 - s) + sketch * s).clamp(0.0, 1.0);
                }
            }
        }
    }
}

/// Additive Gaussian pixel noise.
pub struct Noise {
    pub sigma: f64,
}

impl ShiftTransform for Noise {
    fn name(&self) -> &'static str {
        "noise"
    }
    fn describe(&self) -> String {
        format!("noise:{}", self.sigma)
    }
    fn apply(&self, img: &mut Array3<f64>, rng: &mut ChaCha12Rng) {
        for v in img.iter_mut() {
            // Box-Muller; two uniforms per sample keeps the stream layout simple
            let u1: f64 = rng.gen_range(1e-12..1.0);
            let u2: f64 = rng.gen::<f64>();
            let n = (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
            *v = (*v + self.sigma * n).clamp(0.0, 1.0);
        }
    }
}

pub const TRANSFORM_NAMES: [&str; 5] = ["palette", "texture", "fog", "edge", "noise"];

/// Parse a single `name:param` entry against the registry.
pub fn parse_transform(entry: &str) -> Result<Box<dyn ShiftTransform>> {
    let (name, arg) = match entry.split_once(':') {
        Some((n, a)) => (n.trim(), Some(a.trim())),
        None => (entry.trim(), None),
    };
    let num = |what: &str| -> Result<f64> {
        arg.ok_or_else(|| Error::Config(format!("transform '{name}' needs a parameter ({what})")))?
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("transform '{name}': bad parameter '{}'", arg.unwrap())))
    };
    match name {
        "palette" => {
            let mode = num("mode 0..4")? as usize;
            if mode > 3 {
                return Err(Error::Config(format!("palette mode {mode} outside 0..4")));
            }
            Ok(Box::new(PaletteRemap { mode }))
        }
        "texture" => Ok(Box::new(TextureOverlay { amplitude: num("amplitude")? })),
        "fog" => Ok(Box::new(Fog { density: num("density")? })),
        "edge" => Ok(Box::new(EdgeStylize { strength: num("strength")? })),
        "noise" => Ok(Box::new(Noise { sigma: num("sigma")? })),
        other => Err(Error::Config(format!(
            "unknown shift transform '{other}' (known: {})",
            TRANSFORM_NAMES.join(", ")
        ))),
    }
}

/// A named target domain: an ordered transform chain plus its seed.
pub struct DomainSpec {
    pub name: String,
    pub chain_text: String,
    pub chain: Vec<Box<dyn ShiftTransform>>,
    pub seed: u64,
}

impl DomainSpec {
    pub fn parse(name: &str, chain_text: &str, seed: u64) -> Result<DomainSpec> {
        let mut chain = Vec::new();
        for entry in chain_text.split(',') {
            let entry = entry.trim();
            if entry.is_empty() {
                continue;
            }
            chain.push(parse_transform(entry)?);
        }
        if chain.is_empty() {
            return Err(Error::Config(format!("domain '{name}': empty transform chain")));
        }
        Ok(DomainSpec { name: name.to_string(), chain_text: chain_text.to_string(), chain, seed })
    }
}

/// Apply a domain's transform chain. Labels are copied verbatim; geometry
/// is never altered by a shift.
pub fn apply_domain_shift(img: &AnnotatedImage, domain: &DomainSpec) -> AnnotatedImage {
    let mut pixels = img.pixels.clone();
    let mut rng = substream(domain.seed, &["shift", &domain.name, &img.id]);
    for t in &domain.chain {
        t.apply(&mut pixels, &mut rng);
    }
    AnnotatedImage { id: img.id.clone(), pixels, labels: img.labels.clone() }
}
