//! Adaptive average pooling of a cell rectangle onto a fixed grid.
//!
//! Output bin `i` over an extent of `L` cells covers
//! `[floor(i*L/s), ceil((i+1)*L/s))`. Bins tile the rectangle when
//! `L >= s` and overlap when `L < s`, so any rectangle of at least one
//! cell pools to a full `s x s` grid. The floor/ceil pair is symmetric
//! under index reversal, which is what makes pooling commute exactly with
//! quarter-turn rotations.

use crate::nn::dual::Dual3;
use ndarray::Array3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CellRect {
    pub y0: usize,
    pub y1: usize,
    pub x0: usize,
    pub x1: usize,
}

pub struct PoolCache {
    pub rect: CellRect,
    pub ybins: Vec<(usize, usize)>,
    pub xbins: Vec<(usize, usize)>,
    in_dim: (usize, usize, usize),
}

fn make_bins(start: usize, end: usize, s: usize) -> Vec<(usize, usize)> {
    let len = end - start;
    (0..s)
        .map(|i| (start + i * len / s, start + ((i + 1) * len).div_ceil(s)))
        .collect()
}

/// Average-pool `map[:, rect]` onto an `s x s` grid.
pub fn adaptive_pool(map: &Dual3, rect: CellRect, s: usize) -> (Dual3, PoolCache) {
    let (c, h, w) = map.v.dim();
    assert!(rect.y1 > rect.y0 && rect.x1 > rect.x0);
    assert!(rect.y1 <= h && rect.x1 <= w);
    let ybins = make_bins(rect.y0, rect.y1, s);
    let xbins = make_bins(rect.x0, rect.x1, s);
    let mut out = Dual3 {
        v: Array3::zeros((c, s, s)),
        t: map.t.as_ref().map(|_| Array3::zeros((c, s, s))),
    };
    for ci in 0..c {
        for (i, &(y0, y1)) in ybins.iter().enumerate() {
            for (j, &(x0, x1)) in xbins.iter().enumerate() {
                let n = ((y1 - y0) * (x1 - x0)) as f64;
                let mut sv = 0.0;
                let mut st = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sv += map.v[[ci, y, x]];
                        if let Some(t) = &map.t {
                            st += t[[ci, y, x]];
                        }
                    }
                }
                out.v[[ci, i, j]] = sv / n;
                if let Some(t) = &mut out.t {
                    t[[ci, i, j]] = st / n;
                }
            }
        }
    }
    (out, PoolCache { rect, ybins, xbins, in_dim: (c, h, w) })
}

/// Scatter pooled gradients back onto the map.
pub fn adaptive_pool_backward(cache: &PoolCache, gy: &Dual3) -> Dual3 {
    let (c, h, w) = cache.in_dim;
    let mut gx = Dual3 {
        v: Array3::zeros((c, h, w)),
        t: gy.t.as_ref().map(|_| Array3::zeros((c, h, w))),
    };
    for ci in 0..c {
        for (i, &(y0, y1)) in cache.ybins.iter().enumerate() {
            for (j, &(x0, x1)) in cache.xbins.iter().enumerate() {
                let n = ((y1 - y0) * (x1 - x0)) as f64;
                let gv = gy.v[[ci, i, j]] / n;
                let gt = gy.t.as_ref().map_or(0.0, |t| t[[ci, i, j]] / n);
                for y in y0..y1 {
                    for x in x0..x1 {
                        gx.v[[ci, y, x]] += gv;
                        if let Some(t) = &mut gx.t {
                            t[[ci, y, x]] += gt;
                        }
                    }
                }
            }
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::dual::Dual3;
    use ndarray::Array3;

    #[test]
    fn bin_layout_tiles_or_overlaps_correctly() {
        // extent 6 onto 5 bins: floor/ceil bins, each at least one cell
        let b = make_bins(2, 8, 5);
        assert_eq!(b, vec![(2, 4), (3, 5), (4, 6), (5, 7), (6, 8)]);
        // extent 10 onto 5 bins: exact tiling
        let b = make_bins(0, 10, 5);
        assert_eq!(b, vec![(0, 2), (2, 4), (4, 6), (6, 8), (8, 10)]);
        // extent 1 onto 5 bins: all bins repeat the single cell
        let b = make_bins(3, 4, 5);
        assert_eq!(b, vec![(3, 4); 5]);
    }

    #[test]
    fn bins_are_symmetric_under_reversal() {
        // reverse of the bin grid of [a, b) equals the bin grid of the
        // reversed interval; required for rotation commutation
        for len in 1..20usize {
            let s = 5;
            let fwd = make_bins(0, len, s);
            for i in 0..s {
                let (a, b) = fwd[i];
                let (ra, rb) = fwd[s - 1 - i];
                assert_eq!((len - rb, len - ra), (a, b), "len={len} i={i}");
            }
        }
    }

    /// Hand-computed pooling oracle: 12x12 map, rect rows [3,9) x cols
    /// [2,6), pooled to 5x5. Expected values derived cell by cell from the
    /// floor/ceil bin layout.
    #[test]
    fn pooling_matches_explicit_cell_oracle() {
        let mut map = Array3::<f64>::zeros((1, 12, 12));
        for y in 0..12 {
            for x in 0..12 {
                map[[0, y, x]] = (y * 12 + x) as f64;
            }
        }
        let rect = CellRect { y0: 3, y1: 9, x0: 2, x1: 6 };
        let (out, _) = adaptive_pool(&Dual3::plain(map.clone()), rect, 5);
        // rows [3,9): bins (3,5)(4,6)(5,7)(6,8)(7,9); cols [2,6): bins
        // (2,3)(2,4)(3,5)(4,6)(5,6) from start = 2+floor(4j/5),
        // end = 2+ceil(4(j+1)/5)
        let ybins = [(3, 5), (4, 6), (5, 7), (6, 8), (7, 9)];
        let xbins = [(2, 3), (2, 4), (3, 5), (4, 6), (5, 6)];
        for (i, &(y0, y1)) in ybins.iter().enumerate() {
            for (j, &(x0, x1)) in xbins.iter().enumerate() {
                let mut sum = 0.0;
                for y in y0..y1 {
                    for x in x0..x1 {
                        sum += map[[0, y, x]];
                    }
                }
                let want = sum / ((y1 - y0) * (x1 - x0)) as f64;
                let got = out.v[[0, i, j]];
                assert!((got - want).abs() < 1e-12, "bin ({i},{j}): {got} vs {want}");
            }
        }
    }

    #[test]
    fn pool_backward_matches_finite_differences() {
        let map0 = Array3::from_shape_fn((2, 6, 6), |(c, y, x)| (c * 36 + y * 6 + x) as f64 * 0.1 - 1.0);
        let rect = CellRect { y0: 1, y1: 5, x0: 0, x1: 6 };
        let proj: Vec<f64> = (0..2 * 25).map(|i| ((i * 3 + 1) % 9) as f64 / 9.0 - 0.4).collect();
        let loss = |m: &Array3<f64>| -> f64 {
            let (out, _) = adaptive_pool(&Dual3::plain(m.clone()), rect, 5);
            out.v.iter().zip(&proj).map(|(a, b)| a * b).sum()
        };
        let (out0, cache) = adaptive_pool(&Dual3::plain(map0.clone()), rect, 5);
        let gy = Dual3::plain(
            ndarray::Array1::from(proj.clone()).into_shape_with_order(out0.v.dim()).unwrap(),
        );
        let gx = adaptive_pool_backward(&cache, &gy);
        let h = 1e-6;
        let mut worst = 0.0f64;
        for idx in 0..map0.len() {
            let (c, y, x) = (idx / 36, (idx / 6) % 6, idx % 6);
            let mut mp = map0.clone();
            mp[[c, y, x]] += h;
            let mut mm = map0.clone();
            mm[[c, y, x]] -= h;
            let fd = (loss(&mp) - loss(&mm)) / (2.0 * h);
            worst = worst.max((fd - gx.v[[c, y, x]]).abs());
        }
        assert!(worst < 1e-8, "worst abs err {worst}");
    }
}
