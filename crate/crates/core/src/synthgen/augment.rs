//! Semantics-preserving photometric augmentations.
//!
//! Used two ways: the tran-* training variants draw one kind per image per
//! epoch, and meta-learning episodes draw K distinct kinds per source
//! image. Augmentations never move pixels, so labels pass through
//! untouched.

use crate::synthgen::scene::AnnotatedImage;
use ndarray::Array3;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha12Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AugmentKind {
    Identity,
    Grayscale,
    ColorJitter,
    Brightness,
    Contrast,
}

impl AugmentKind {
    pub fn name(&self) -> &'static str {
        match self {
            AugmentKind::Identity => "identity",
            AugmentKind::Grayscale => "grayscale",
            AugmentKind::ColorJitter => "color-jitter",
            AugmentKind::Brightness => "brightness",
            AugmentKind::Contrast => "contrast",
        }
    }
}

/// The non-identity catalogue episodes sample from.
pub const EPISODE_CATALOGUE: [AugmentKind; 4] = [
    AugmentKind::Grayscale,
    AugmentKind::ColorJitter,
    AugmentKind::Brightness,
    AugmentKind::Contrast,
];

/// Catalogue used by the tran-* training variants (includes identity, so
/// some steps see clean images).
pub const TRAIN_CATALOGUE: [AugmentKind; 5] = [
    AugmentKind::Identity,
    AugmentKind::Grayscale,
    AugmentKind::ColorJitter,
    AugmentKind::Brightness,
    AugmentKind::Contrast,
];

fn apply_to_pixels(pixels: &mut Array3<f64>, kind: AugmentKind, rng: &mut ChaCha12Rng) {
    let (h, w, _) = pixels.dim();
    match kind {
        AugmentKind::Identity => {}
        AugmentKind::Grayscale => {
            for y in 0..h {
                for x in 0..w {
                    let l = 0.299 * pixels[[y, x, 0]]
                        + 0.587 * pixels[[y, x, 1]]
                        + 0.114 * pixels[[y, x, 2]];
                    for c in 0..3 {
                        pixels[[y, x, c]] = l;
                    }
                }
            }
        }
        AugmentKind::ColorJitter => {
            let scale: [f64; 3] = [
                rng.gen_range(0.7..1.3),
                rng.gen_range(0.7..1.3),
                rng.gen_range(0.7..1.3),
            ];
            let shift: [f64; 3] = [
                rng.gen_range(-0.08..0.08),
                rng.gen_range(-0.08..0.08),
                rng.gen_range(-0.08..0.08),
            ];
            for y in 0..h {
                for x in 0..w {
                    for c in 0..3 {
                        pixels[[y, x, c]] = (pixels[[y, x, c]] * scale[c] + shift[c]).clamp(0.0, 1.0);
                    }
                }
            }
        }
        AugmentKind::Brightness => {
            let s = rng.gen_range(0.6..1.4);
            for v in pixels.iter_mut() {
                *v = (*v * s).clamp(0.0, 1.0);
            }
        }
        AugmentKind::Contrast => {
            let c = rng.gen_range(0.55..1.5);
            let mean = pixels.sum() / pixels.len() as f64;
            for v in pixels.iter_mut() {
                *v = ((*v - mean) * c + mean).clamp(0.0, 1.0);
            }
        }
    }
}

/// Apply one augmentation kind; labels are carried over unchanged.
pub fn augment(img: &AnnotatedImage, kind: AugmentKind, rng: &mut ChaCha12Rng) -> AnnotatedImage {
    let mut pixels = img.pixels.clone();
    apply_to_pixels(&mut pixels, kind, rng);
    AnnotatedImage { id: img.id.clone(), pixels, labels: img.labels.clone() }
}

/// Draw `k` distinct kinds for meta-learning episodes. `k = 1` means the
/// single clean episode (identity); larger `k` samples without replacement
/// from the non-identity catalogue plus identity.
pub fn episode_kinds(k: usize, rng: &mut ChaCha12Rng) -> Vec<AugmentKind> {
    if k <= 1 {
        return vec![AugmentKind::Identity];
    }
    let mut pool = TRAIN_CATALOGUE.to_vec();
    pool.shuffle(rng);
    pool.truncate(k.min(pool.len()));
    pool
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::synthgen::scene::{generate_scene, SceneSpec};

    fn scene() -> AnnotatedImage {
        generate_scene(&SceneSpec::default(), "a", &mut substream(1, &["data", "a"])).unwrap()
    }

    #[test]
    fn augmentations_preserve_labels_and_range() {
        let img = scene();
        for kind in TRAIN_CATALOGUE {
            let out = augment(&img, kind, &mut substream(3, &["augmentation", kind.name()]));
            assert_eq!(out.labels, img.labels);
            for v in out.pixels.iter() {
                assert!((0.0..=1.0).contains(v));
            }
        }
    }

    #[test]
    fn grayscale_collapses_channels() {
        let img = scene();
        let out = augment(&img, AugmentKind::Grayscale, &mut substream(0, &["augmentation"]));
        for y in 0..out.height() {
            for x in 0..out.width() {
                assert_eq!(out.pixels[[y, x, 0]], out.pixels[[y, x, 1]]);
                assert_eq!(out.pixels[[y, x, 1]], out.pixels[[y, x, 2]]);
            }
        }
    }

    #[test]
    fn episode_kinds_are_distinct_and_sized() {
        let mut rng = substream(4, &["augmentation", "episodes"]);
        assert_eq!(episode_kinds(1, &mut rng), vec![AugmentKind::Identity]);
        for k in 2..=5 {
            let kinds = episode_kinds(k, &mut rng);
            assert_eq!(kinds.len(), k);
            for i in 0..kinds.len() {
                for j in i + 1..kinds.len() {
                    assert_ne!(kinds[i], kinds[j]);
                }
            }
        }
    }
}
