//! Quarter-turn rotations of images, feature maps and boxes.
//!
//! `q` counts counter-clockwise quarter turns. A pixel `(x, y)` of a
//! `W x H` input lands at `(y, W - 1 - x)` in the `H x W` output, so the
//! output dimensions swap for odd `q`. Rotation is a pure index
//! permutation: values are moved bit-exactly, never interpolated.

use crate::geom::PixelBox;
use ndarray::Array3;

/// Rotate an `(H, W, C)` image by `q` quarter turns.
pub fn rotate(img: &Array3<f64>, q: u8) -> Array3<f64> {
    assert!(q < 4, "q must be in 0..4");
    let (h, w, c) = img.dim();
    let (oh, ow) = if q % 2 == 1 { (w, h) } else { (h, w) };
    let mut out = Array3::zeros((oh, ow, c));
    for y in 0..h {
        for x in 0..w {
            let (nx, ny) = rotate_index(x, y, w, h, q);
            for ch in 0..c {
                out[[ny, nx, ch]] = img[[y, x, ch]];
            }
        }
    }
    out
}

/// Rotate a `(C, H, W)` map by `q` quarter turns. Same index permutation
/// as [`rotate`], channel-first layout.
pub fn rotate_chw(map: &Array3<f64>, q: u8) -> Array3<f64> {
    assert!(q < 4, "q must be in 0..4");
    let (c, h, w) = map.dim();
    let (oh, ow) = if q % 2 == 1 { (w, h) } else { (h, w) };
    let mut out = Array3::zeros((c, oh, ow));
    for y in 0..h {
        for x in 0..w {
            let (nx, ny) = rotate_index(x, y, w, h, q);
            for ch in 0..c {
                out[[ch, ny, nx]] = map[[ch, y, x]];
            }
        }
    }
    out
}

/// Destination of pixel `(x, y)` of a `w x h` input under `q` quarter turns.
pub fn rotate_index(x: usize, y: usize, w: usize, h: usize, q: u8) -> (usize, usize) {
    match q % 4 {
        0 => (x, y),
        1 => (y, w - 1 - x),
        2 => (w - 1 - x, h - 1 - y),
        3 => (h - 1 - y, x),
        _ => unreachable!(),
    }
}

/// Closed-form box transform matching [`rotate`] exactly under the
/// half-open convention: the result is the bounding box of the rotated
/// pixel set of `b`. `w` and `h` are the dimensions of the *unrotated*
/// image the box lives in.
pub fn rotate_box(b: PixelBox, q: u8, w: f64, h: f64) -> PixelBox {
    match q % 4 {
        0 => b,
        1 => PixelBox::new(b.y1, w - b.x2, b.y2, w - b.x1),
        2 => PixelBox::new(w - b.x2, h - b.y2, w - b.x1, h - b.y1),
        3 => PixelBox::new(h - b.y2, b.x1, h - b.y1, b.x2),
        _ => unreachable!(),
    }
}
