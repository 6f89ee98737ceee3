//! Synthetic scene rendering.
//!
//! Scenes are flat-shaded geometric shapes on a background that always
//! carries an orientation cue (a vertical luminance gradient or a ground
//! strip), so the "which way is up" task is learnable from image content.
//! Shapes render in canonical upright pose; masks are hard (pixel-center
//! test, no anti-aliasing), and each label is the tight bounding box of the
//! rendered mask, so labels exactly cover the object pixels.

use crate::error::{Error, Result};
use crate::geom::PixelBox;
use ndarray::Array3;
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Shape classes, in class-id order.
pub const CLASS_NAMES: [&str; 5] = ["circle", "triangle", "square", "cross", "arrow"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxLabel {
    pub class_id: usize,
    pub bbox: PixelBox,
}

/// One image with ground-truth labels. Pixels are `(H, W, 3)` in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct AnnotatedImage {
    pub id: String,
    pub pixels: Array3<f64>,
    pub labels: Vec<BoxLabel>,
}

impl AnnotatedImage {
    pub fn width(&self) -> usize {
        self.pixels.dim().1
    }
    pub fn height(&self) -> usize {
        self.pixels.dim().0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OrientationCue {
    /// Vertical luminance gradient, lighter at the top.
    Gradient,
    /// Uniform background with a darker ground strip at the bottom.
    Strip,
    /// No cue. Rejected at generation time: the rotation task would be
    /// unlearnable from such scenes.
    None,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SceneSpec {
    pub width: usize,
    pub height: usize,
    /// Sampling weight per class, parallel to [`CLASS_NAMES`].
    pub class_weights: Vec<f64>,
    /// Inclusive range for the number of objects per scene.
    pub num_objects: (usize, usize),
    /// Nominal object height range in pixels.
    pub size_range: (f64, f64),
    pub cue: OrientationCue,
    /// Top-to-bottom luminance difference (Gradient) or strip darkening
    /// (Strip); `[0, 1]`.
    pub cue_strength: f64,
    /// Placement is rejected while IoU with any placed object exceeds this.
    pub max_mutual_overlap: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            width: 96,
            height: 96,
            class_weights: vec![1.0; CLASS_NAMES.len()],
            num_objects: (1, 4),
            size_range: (20.0, 44.0),
            cue: OrientationCue::Gradient,
            cue_strength: 0.38,
            max_mutual_overlap: 0.5,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let mut errs = Vec::new();
        if self.cue == OrientationCue::None {
            errs.push("orientation cue is required (cue=none makes the rotation task unlearnable)".to_string());
        }
        if self.width < 32 || self.height < 32 {
            errs.push(format!("image size {}x{} too small (min 32)", self.width, self.height));
        }
        if self.class_weights.len() != CLASS_NAMES.len() {
            errs.push(format!(
                "class_weights needs {} entries, got {}",
                CLASS_NAMES.len(),
                self.class_weights.len()
            ));
        }
        if self.class_weights.iter().any(|w| *w < 0.0) || self.class_weights.iter().sum::<f64>() <= 0.0 {
            errs.push("class_weights must be non-negative with positive sum".to_string());
        }
        if self.num_objects.0 < 1 || self.num_objects.0 > self.num_objects.1 {
            errs.push(format!("bad num_objects range {:?}", self.num_objects));
        }
        if self.size_range.0 < 8.0 || self.size_range.0 > self.size_range.1 {
            errs.push(format!("bad size_range {:?}", self.size_range));
        }
        if self.size_range.1 > (self.width.min(self.height) as f64) - 4.0 {
            errs.push("size_range upper bound leaves no room for placement".to_string());
        }
        if !(0.0..=1.0).contains(&self.cue_strength) {
            errs.push(format!("cue_strength {} outside [0,1]", self.cue_strength));
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errs.join("; ")))
        }
    }
}

fn sample_class(weights: &[f64], rng: &mut ChaCha12Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        u -= w;
        if u <= 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Pixel-center membership test for each shape class, in a nominal box.
/// Every shape touches all four edges of its nominal box.
fn inside_shape(class_id: usize, px: f64, py: f64, b: &PixelBox) -> bool {
    let (w, h) = (b.width(), b.height());
    let (cx, cy) = (b.cx(), b.cy());
    match class_id {
        // circle: inscribed ellipse
        0 => {
            let dx = (px - cx) / (w / 2.0);
            let dy = (py - cy) / (h / 2.0);
            dx * dx + dy * dy <= 1.0
        }
        // triangle: apex top-center, base at the bottom
        1 => {
            let t = (py - b.y1) / h;
            (px - cx).abs() <= t * w / 2.0
        }
        // square: the whole box
        2 => true,
        // cross: upright plus sign
        3 => {
            let arm = 0.34;
            (px - cx).abs() <= arm * w / 2.0 || (py - cy).abs() <= arm * h / 2.0
        }
        // arrow: shaft on the left, head pointing right
        4 => {
            let split = b.x1 + 0.58 * w;
            if px < split {
                (py - cy).abs() <= 0.20 * h
            } else {
                (py - cy).abs() <= (b.x2 - px) / (b.x2 - split) * h / 2.0
            }
        }
        _ => false,
    }
}

fn hsv_to_rgb(hue: f64, s: f64, v: f64) -> [f64; 3] {
    let h = (hue.rem_euclid(1.0)) * 6.0;
    let i = h.floor() as i64 % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - f * s);
    let t = v * (1.0 - (1.0 - f) * s);
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Render one scene. All randomness comes from `rng`; the same stream state
/// always produces the same scene.
pub fn generate_scene(spec: &SceneSpec, id: &str, rng: &mut ChaCha12Rng) -> Result<AnnotatedImage> {
    spec.validate()?;
    let (w, h) = (spec.width, spec.height);
    let mut pixels = Array3::zeros((h, w, 3));

    // background with orientation cue
    let tint: [f64; 3] = [
        rng.gen_range(-0.03..0.03),
        rng.gen_range(-0.03..0.03),
        rng.gen_range(-0.03..0.03),
    ];
    match spec.cue {
        OrientationCue::Gradient => {
            let top = 0.72;
            let bottom = top - spec.cue_strength;
            for y in 0..h {
                let lum = top + (bottom - top) * (y as f64 + 0.5) / h as f64;
                for x in 0..w {
                    for c in 0..3 {
                        pixels[[y, x, c]] = (lum + tint[c]).clamp(0.0, 1.0);
                    }
                }
            }
        }
        OrientationCue::Strip => {
            let base = 0.62;
            let strip_top = h - (h as f64 * 0.16).round() as usize;
            for y in 0..h {
                let lum = if y >= strip_top { base - spec.cue_strength } else { base };
                for x in 0..w {
                    for c in 0..3 {
                        pixels[[y, x, c]] = (lum + tint[c]).clamp(0.0, 1.0);
                    }
                }
            }
        }
        OrientationCue::None => unreachable!("rejected by validate"),
    }

    // place objects with bounded rejection sampling
    let n = rng.gen_range(spec.num_objects.0..=spec.num_objects.1);
    let margin = 2.0;
    let mut placed: Vec<PixelBox> = Vec::new();
    let mut labels: Vec<BoxLabel> = Vec::new();
    for _ in 0..n {
        let class_id = sample_class(&spec.class_weights, rng);
        let oh = rng.gen_range(spec.size_range.0..=spec.size_range.1);
        let aspect = match class_id {
            4 => rng.gen_range(1.15..1.6), // arrows are wide
            1 => rng.gen_range(0.9..1.25),
            _ => rng.gen_range(0.85..1.15),
        };
        let ow = (oh * aspect).min(w as f64 - 2.0 * margin - 1.0);
        let mut found = None;
        for _attempt in 0..100 {
            let x1 = rng.gen_range(margin..(w as f64 - margin - ow));
            let y1 = rng.gen_range(margin..(h as f64 - margin - oh));
            let cand = PixelBox::new(x1.floor(), y1.floor(), (x1 + ow).round(), (y1 + oh).round());
            let ok = placed.iter().all(|p| {
                let inter = cand.intersection_area(p);
                let union = cand.area() + p.area() - inter;
                inter / union <= spec.max_mutual_overlap
            });
            if ok {
                found = Some(cand);
                break;
            }
        }
        let nominal = found.ok_or_else(|| {
            Error::Config(format!(
                "scene spec over-dense: no non-overlapping placement found in 100 attempts \
                 (objects={n}, size_range={:?}, image {w}x{h})",
                spec.size_range
            ))
        })?;

        // color: saturated, distinct from the grayish background
        let rgb = hsv_to_rgb(rng.gen::<f64>(), rng.gen_range(0.65..1.0), rng.gen_range(0.5..0.95));

        // rasterize and take the tight mask bounds as the label
        let (mut bx1, mut by1, mut bx2, mut by2) = (w, h, 0usize, 0usize);
        for y in nominal.y1 as usize..(nominal.y2 as usize).min(h) {
            for x in nominal.x1 as usize..(nominal.x2 as usize).min(w) {
                if inside_shape(class_id, x as f64 + 0.5, y as f64 + 0.5, &nominal) {
                    for c in 0..3 {
                        pixels[[y, x, c]] = rgb[c];
                    }
                    bx1 = bx1.min(x);
                    by1 = by1.min(y);
                    bx2 = bx2.max(x + 1);
                    by2 = by2.max(y + 1);
                }
            }
        }
        if bx2 <= bx1 || by2 <= by1 {
            return Err(Error::Config("degenerate object rendered empty mask".to_string()));
        }
        let tight = PixelBox::new(bx1 as f64, by1 as f64, bx2 as f64, by2 as f64);
        placed.push(nominal);
        labels.push(BoxLabel { class_id, bbox: tight });
    }

    Ok(AnnotatedImage { id: id.to_string(), pixels, labels })
}
