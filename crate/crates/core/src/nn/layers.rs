//! Layers with hand-written forward/backward passes over dual arrays.
//!
//! Shapes: activations are `(C, H, W)`, conv weights are stored flattened
//! as `(Cout, Cin*k*k)` so both passes ride on gemm via im2col.

use crate::nn::dual::{mm, mm_nt, mm_tn, mv, mv_t, outer, to_2d, to_3d, Dual1, Dual2, Dual3, Ds};
use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha12Rng;

/// He-normal initialization for a weight matrix with `fan_in` inputs.
pub fn he_init(rows: usize, cols: usize, fan_in: usize, rng: &mut ChaCha12Rng) -> Array2<f64> {
    let std = (2.0 / fan_in as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| {
        // Box-Muller
        let u1: f64 = rng.gen_range(1e-12..1.0);
        let u2: f64 = rng.gen::<f64>();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos() * std
    })
}

// ---------------------------------------------------------------- conv ----

#[derive(Clone)]
pub struct Conv2d {
    /// `(Cout, Cin * k * k)`
    pub w: Dual2,
    pub b: Dual1,
    pub cin: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

pub struct ConvCache {
    cols: Dual2,
    in_dim: (usize, usize, usize),
    out_dim: (usize, usize, usize),
}

#[derive(Clone)]
pub struct ConvGrads {
    pub w: Dual2,
    pub b: Dual1,
}

impl Conv2d {
    pub fn new(cin: usize, cout: usize, k: usize, stride: usize, pad: usize, rng: &mut ChaCha12Rng) -> Conv2d {
        let fan_in = cin * k * k;
        Conv2d {
            w: Dual2::plain(he_init(cout, fan_in, fan_in, rng)),
            b: Dual1::plain(Array1::zeros(cout)),
            cin,
            k,
            stride,
            pad,
        }
    }

    pub fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn forward(&self, x: &Dual3) -> (Dual3, ConvCache) {
        let (c, h, w) = x.v.dim();
        assert_eq!(c, self.cin);
        let (oh, ow) = self.out_hw(h, w);
        let cols_v = im2col(&x.v, self.k, self.stride, self.pad, oh, ow);
        let cols_t = x.t.as_ref().map(|t| im2col(t, self.k, self.stride, self.pad, oh, ow));
        let cols = Dual2 { v: cols_v, t: cols_t };
        let mut y2 = mm(&self.w, &cols);
        // bias broadcast over spatial positions
        for (mut row, b) in y2.v.axis_iter_mut(Axis(0)).zip(self.b.v.iter()) {
            row += *b;
        }
        if let Some(bt) = &self.b.t {
            let t = y2.t.get_or_insert_with(|| Array2::zeros(y2.v.raw_dim()));
            for (mut row, b) in t.axis_iter_mut(Axis(0)).zip(bt.iter()) {
                row += *b;
            }
        }
        let cout = self.w.v.dim().0;
        let y = to_3d(&y2, (cout, oh, ow));
        (y, ConvCache { cols, in_dim: (c, h, w), out_dim: (cout, oh, ow) })
    }

    /// Returns (grad wrt input, grads wrt params).
    pub fn backward(&self, cache: &ConvCache, gy: &Dual3) -> (Dual3, ConvGrads) {
        let (cout, oh, ow) = cache.out_dim;
        let gy2 = {
            let g = to_2d(gy);
            debug_assert_eq!(g.v.dim(), (cout, oh * ow));
            g
        };
        let gw = mm_nt(&gy2, &cache.cols);
        let gb = Dual1 {
            v: gy2.v.sum_axis(Axis(1)),
            t: gy2.t.as_ref().map(|t| t.sum_axis(Axis(1))),
        };
        let gcols = mm_tn(&self.w, &gy2);
        let (c, h, w) = cache.in_dim;
        let gx_v = col2im(&gcols.v, c, h, w, self.k, self.stride, self.pad, oh, ow);
        let gx_t = gcols.t.as_ref().map(|t| col2im(t, c, h, w, self.k, self.stride, self.pad, oh, ow));
        (Dual3 { v: gx_v, t: gx_t }, ConvGrads { w: gw, b: gb })
    }

    pub fn num_params(&self) -> usize {
        self.w.v.len() + self.b.v.len()
    }
}

fn im2col(
    x: &ndarray::Array3<f64>,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Array2<f64> {
    let (c, h, w) = x.dim();
    let mut cols = Array2::zeros((c * k * k, oh * ow));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        cols[[row, oy * ow + ox]] = x[[ci, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    cols: &Array2<f64>,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> ndarray::Array3<f64> {
    let mut x = ndarray::Array3::zeros((c, h, w));
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        x[[ci, iy as usize, ix as usize]] += cols[[row, oy * ow + ox]];
                    }
                }
            }
        }
    }
    x
}

// ----------------------------------------------------------- group norm ----

/// Batch-independent normalization over channel groups of a single image.
#[derive(Clone)]
pub struct GroupNorm {
    pub gamma: Dual1,
    pub beta: Dual1,
    pub groups: usize,
    pub eps: f64,
}

pub struct GnCache {
    xhat: Dual3,
    inv_std: Vec<Ds>,
}

#[derive(Clone)]
pub struct GnGrads {
    pub gamma: Dual1,
    pub beta: Dual1,
}

impl GroupNorm {
    pub fn new(channels: usize, groups: usize) -> GroupNorm {
        assert_eq!(channels % groups, 0, "channels must divide into groups");
        GroupNorm {
            gamma: Dual1::plain(Array1::ones(channels)),
            beta: Dual1::plain(Array1::zeros(channels)),
            groups,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Dual3) -> (Dual3, GnCache) {
        let (c, h, w) = x.v.dim();
        let per = c / self.groups;
        let m = (per * h * w) as f64;
        let mut xhat = x.zeros_like();
        if xhat.t.is_none() && x.has_t() {
            xhat.t = Some(ndarray::Array3::zeros((c, h, w)));
        }
        let mut inv_std = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let c0 = g * per;
            let c1 = c0 + per;
            // mean
            let mut mu = Ds::ZERO;
            for ci in c0..c1 {
                for y in 0..h {
                    for xx in 0..w {
                        mu.v += x.v[[ci, y, xx]];
                        if let Some(t) = &x.t {
                            mu.t += t[[ci, y, xx]];
                        }
                    }
                }
            }
            mu = mu.scale(1.0 / m);
            // biased variance; tangent uses sum of (xv - mu.v) * xt
            let mut var = Ds::ZERO;
            for ci in c0..c1 {
                for y in 0..h {
                    for xx in 0..w {
                        let d = x.v[[ci, y, xx]] - mu.v;
                        var.v += d * d;
                        if let Some(t) = &x.t {
                            var.t += 2.0 * d * t[[ci, y, xx]];
                        }
                    }
                }
            }
            var = var.scale(1.0 / m);
            let s = var.rsqrt(self.eps);
            inv_std.push(s);
            for ci in c0..c1 {
                for y in 0..h {
                    for xx in 0..w {
                        let dv = x.v[[ci, y, xx]] - mu.v;
                        xhat.v[[ci, y, xx]] = dv * s.v;
                        if let Some(xt) = &x.t {
                            let dt = xt[[ci, y, xx]] - mu.t;
                            xhat.t.as_mut().unwrap()[[ci, y, xx]] = dt * s.v + dv * s.t;
                        }
                    }
                }
            }
        }
        // y = gamma_c * xhat + beta_c
        let mut y = xhat.clone();
        let want_t = xhat.has_t() || self.gamma.has_t() || self.beta.has_t();
        if want_t && y.t.is_none() {
            y.t = Some(ndarray::Array3::zeros((c, h, w)));
        }
        for ci in 0..c {
            let gv = self.gamma.v[ci];
            let gt = self.gamma.t.as_ref().map_or(0.0, |t| t[ci]);
            let bv = self.beta.v[ci];
            let bt = self.beta.t.as_ref().map_or(0.0, |t| t[ci]);
            for yy in 0..h {
                for xx in 0..w {
                    let xv = xhat.v[[ci, yy, xx]];
                    let xt = xhat.t.as_ref().map_or(0.0, |t| t[[ci, yy, xx]]);
                    y.v[[ci, yy, xx]] = gv * xv + bv;
                    if want_t {
                        y.t.as_mut().unwrap()[[ci, yy, xx]] = gv * xt + gt * xv + bt;
                    }
                }
            }
        }
        (y, GnCache { xhat, inv_std })
    }

    pub fn backward(&self, cache: &GnCache, gy: &Dual3) -> (Dual3, GnGrads) {
        let (c, h, w) = gy.v.dim();
        let per = c / self.groups;
        let m = (per * h * w) as f64;
        let want_t = gy.has_t() || cache.xhat.has_t() || self.gamma.has_t();
        let mut ggamma = Dual1 {
            v: Array1::zeros(c),
            t: if want_t { Some(Array1::zeros(c)) } else { None },
        };
        let mut gbeta = ggamma.clone();
        let mut gx = Dual3 {
            v: ndarray::Array3::zeros((c, h, w)),
            t: if want_t { Some(ndarray::Array3::zeros((c, h, w))) } else { None },
        };
        for ci in 0..c {
            let mut sg = Ds::ZERO;
            let mut sb = Ds::ZERO;
            for yy in 0..h {
                for xx in 0..w {
                    let gv = gy.v[[ci, yy, xx]];
                    let gt = gy.t.as_ref().map_or(0.0, |t| t[[ci, yy, xx]]);
                    let xv = cache.xhat.v[[ci, yy, xx]];
                    let xt = cache.xhat.t.as_ref().map_or(0.0, |t| t[[ci, yy, xx]]);
                    sg.v += gv * xv;
                    sg.t += gt * xv + gv * xt;
                    sb.v += gv;
                    sb.t += gt;
                }
            }
            ggamma.v[ci] = sg.v;
            gbeta.v[ci] = sb.v;
            if want_t {
                ggamma.t.as_mut().unwrap()[ci] = sg.t;
                gbeta.t.as_mut().unwrap()[ci] = sb.t;
            }
        }
        for g in 0..self.groups {
            let c0 = g * per;
            let c1 = c0 + per;
            let s = cache.inv_std[g];
            // group means of g_xhat and g_xhat * xhat, where g_xhat = gamma_c * gy
            let mut a = Ds::ZERO;
            let mut b = Ds::ZERO;
            for ci in c0..c1 {
                let gam = Ds {
                    v: self.gamma.v[ci],
                    t: self.gamma.t.as_ref().map_or(0.0, |t| t[ci]),
                };
                for yy in 0..h {
                    for xx in 0..w {
                        let gyd = Ds {
                            v: gy.v[[ci, yy, xx]],
                            t: gy.t.as_ref().map_or(0.0, |t| t[[ci, yy, xx]]),
                        };
                        let xh = Ds {
                            v: cache.xhat.v[[ci, yy, xx]],
                            t: cache.xhat.t.as_ref().map_or(0.0, |t| t[[ci, yy, xx]]),
                        };
                        let gxh = gam.mul(gyd);
                        a = a.add(gxh);
                        b = b.add(gxh.mul(xh));
                    }
                }
            }
            a = a.scale(1.0 / m);
            b = b.scale(1.0 / m);
            for ci in c0..c1 {
                let gam = Ds {
                    v: self.gamma.v[ci],
                    t: self.gamma.t.as_ref().map_or(0.0, |t| t[ci]),
                };
                for yy in 0..h {
                    for xx in 0..w {
                        let gyd = Ds {
                            v: gy.v[[ci, yy, xx]],
                            t: gy.t.as_ref().map_or(0.0, |t| t[[ci, yy, xx]]),
                        };
                        let xh = Ds {
                            v: cache.xhat.v[[ci, yy, xx]],
                            t: cache.xhat.t.as_ref().map_or(0.0, |t| t[[ci, yy, xx]]),
                        };
                        let gxh = gam.mul(gyd);
                        let r = s.mul(gxh.sub(a).sub(xh.mul(b)));
                        gx.v[[ci, yy, xx]] = r.v;
                        if want_t {
                            gx.t.as_mut().unwrap()[[ci, yy, xx]] = r.t;
                        }
                    }
                }
            }
        }
        (gx, GnGrads { gamma: ggamma, beta: gbeta })
    }

    pub fn num_params(&self) -> usize {
        self.gamma.v.len() + self.beta.v.len()
    }
}

// --------------------------------------------------------------- linear ----

#[derive(Clone)]
pub struct Linear {
    /// `(out, in)`
    pub w: Dual2,
    pub b: Dual1,
}

pub struct LinearCache {
    x: Dual1,
}

#[derive(Clone)]
pub struct LinearGrads {
    pub w: Dual2,
    pub b: Dual1,
}

impl Linear {
    pub fn new(inp: usize, out: usize, rng: &mut ChaCha12Rng) -> Linear {
        Linear {
            w: Dual2::plain(he_init(out, inp, inp, rng)),
            b: Dual1::plain(Array1::zeros(out)),
        }
    }

    /// All-zero weights: produces uniform logits regardless of input.
    pub fn zeros(inp: usize, out: usize) -> Linear {
        Linear {
            w: Dual2::plain(Array2::zeros((out, inp))),
            b: Dual1::plain(Array1::zeros(out)),
        }
    }

    pub fn forward(&self, x: &Dual1) -> (Dual1, LinearCache) {
        let y = mv(&self.w, x).add(&self.b);
        (y, LinearCache { x: x.clone() })
    }

    pub fn backward(&self, cache: &LinearCache, gy: &Dual1) -> (Dual1, LinearGrads) {
        let gw = outer(gy, &cache.x);
        let gb = gy.clone();
        let gx = mv_t(&self.w, gy);
        (gx, LinearGrads { w: gw, b: gb })
    }

    pub fn num_params(&self) -> usize {
        self.w.v.len() + self.b.v.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use ndarray::Array3;
    use rand::Rng;

    /// Central finite differences of `f` over `params`.
    fn fd_grad(params: &mut [f64], mut f: impl FnMut(&[f64]) -> f64, h: f64) -> Vec<f64> {
        let mut g = vec![0.0; params.len()];
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + h;
            let fp = f(params);
            params[i] = orig - h;
            let fm = f(params);
            params[i] = orig;
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1e-12);
        num / den
    }

    /// Scalar loss used by the layer checks: weighted sum of outputs through
    /// a fixed projection, smooth in all inputs.
    fn proj_loss(y: &ndarray::ArrayView1<f64>, w: &[f64]) -> f64 {
        y.iter().zip(w).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = substream(100, &["test", "conv"]);
        let conv = Conv2d::new(2, 3, 3, 2, 1, &mut rng);
        let x0 = Array3::from_shape_fn((2, 6, 8), |_| rng.gen_range(-1.0..1.0));
        let (y0, cache) = conv.forward(&Dual3::plain(x0.clone()));
        let proj: Vec<f64> = (0..y0.v.len()).map(|i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4).collect();
        // analytic grads via backward with gy = proj
        let gy = Dual3::plain(
            ndarray::Array1::from(proj.clone())
                .into_shape_with_order(y0.v.dim())
                .unwrap(),
        );
        let (gx, grads) = conv.backward(&cache, &gy);

        // FD over weights
        let mut wflat: Vec<f64> = conv.w.v.iter().cloned().collect();
        let fd_w = fd_grad(
            &mut wflat,
            |w| {
                let mut c2 = conv.clone();
                c2.w.v = Array2::from_shape_vec(conv.w.v.dim(), w.to_vec()).unwrap();
                let (y, _) = c2.forward(&Dual3::plain(x0.clone()));
                proj_loss(&y.v.view().into_shape_with_order(y.v.len()).unwrap(), &proj)
            },
            1e-6,
        );
        let an_w: Vec<f64> = grads.w.v.iter().cloned().collect();
        assert!(rel_err(&fd_w, &an_w) < 1e-7, "conv weight grad rel err {}", rel_err(&fd_w, &an_w));

        // FD over input
        let mut xflat: Vec<f64> = x0.iter().cloned().collect();
        let fd_x = fd_grad(
            &mut xflat,
            |xv| {
                let x = Array3::from_shape_vec(x0.dim(), xv.to_vec()).unwrap();
                let (y, _) = conv.forward(&Dual3::plain(x));
                proj_loss(&y.v.view().into_shape_with_order(y.v.len()).unwrap(), &proj)
            },
            1e-6,
        );
        let an_x: Vec<f64> = gx.v.iter().cloned().collect();
        assert!(rel_err(&fd_x, &an_x) < 1e-7, "conv input grad rel err {}", rel_err(&fd_x, &an_x));
    }

    #[test]
    fn group_norm_gradients_match_finite_differences() {
        let mut rng = substream(101, &["test", "gn"]);
        let gn = GroupNorm::new(4, 2);
        let x0 = Array3::from_shape_fn((4, 3, 5), |_| rng.gen_range(-1.0..1.0));
        let (y0, cache) = gn.forward(&Dual3::plain(x0.clone()));
        let proj: Vec<f64> = (0..y0.v.len()).map(|i| ((i * 5 + 1) % 13) as f64 / 13.0 - 0.5).collect();
        let gy = Dual3::plain(
            ndarray::Array1::from(proj.clone()).into_shape_with_order(y0.v.dim()).unwrap(),
        );
        let (gx, grads) = gn.backward(&cache, &gy);

        let mut xflat: Vec<f64> = x0.iter().cloned().collect();
        let fd_x = fd_grad(
            &mut xflat,
            |xv| {
                let x = Array3::from_shape_vec(x0.dim(), xv.to_vec()).unwrap();
                let (y, _) = gn.forward(&Dual3::plain(x));
                proj_loss(&y.v.view().into_shape_with_order(y.v.len()).unwrap(), &proj)
            },
            1e-6,
        );
        let an_x: Vec<f64> = gx.v.iter().cloned().collect();
        assert!(rel_err(&fd_x, &an_x) < 1e-6, "gn input grad rel err {}", rel_err(&fd_x, &an_x));

        let mut gflat: Vec<f64> = gn.gamma.v.iter().cloned().collect();
        let fd_g = fd_grad(
            &mut gflat,
            |gv| {
                let mut g2 = gn.clone();
                g2.gamma.v = Array1::from(gv.to_vec());
                let (y, _) = g2.forward(&Dual3::plain(x0.clone()));
                proj_loss(&y.v.view().into_shape_with_order(y.v.len()).unwrap(), &proj)
            },
            1e-6,
        );
        let an_g: Vec<f64> = grads.gamma.v.iter().cloned().collect();
        assert!(rel_err(&fd_g, &an_g) < 1e-7, "gn gamma grad rel err {}", rel_err(&fd_g, &an_g));
    }

    #[test]
    fn group_norm_output_is_normalized_per_group() {
        let mut rng = substream(102, &["test", "gn2"]);
        let gn = GroupNorm::new(4, 2);
        let x0 = Array3::from_shape_fn((4, 8, 8), |_| rng.gen_range(-2.0..3.0));
        let (y, _) = gn.forward(&Dual3::plain(x0));
        for g in 0..2 {
            let slice = y.v.slice(ndarray::s![g * 2..(g + 1) * 2, .., ..]);
            let mean = slice.mean().unwrap();
            let var = slice.mapv(|v| (v - mean) * (v - mean)).mean().unwrap();
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    /// Tangent-of-gradient equals finite differences of the gradient: the
    /// property that makes Hessian-vector products exact.
    #[test]
    fn layer_tangents_are_directional_derivatives_of_gradients() {
        let mut rng = substream(103, &["test", "hvp"]);
        let gn = GroupNorm::new(2, 1);
        let conv = Conv2d::new(2, 2, 3, 1, 1, &mut rng);
        let x0 = Array3::from_shape_fn((2, 4, 4), |_| rng.gen_range(-1.0..1.0));
        let dir_w = Array2::from_shape_fn(conv.w.v.dim(), |_| rng.gen_range(-1.0..1.0));
        let proj: Vec<f64> = (0..32).map(|i| ((i * 3 + 2) % 7) as f64 / 7.0 - 0.3).collect();

        // gradient of the composite loss wrt conv weights at w + e*dir
        let grad_at = |eps: f64, with_tangent: bool| -> (Vec<f64>, Option<Vec<f64>>) {
            let mut c2 = conv.clone();
            c2.w.v = &conv.w.v + &(&dir_w * eps);
            if with_tangent {
                c2.w.t = Some(dir_w.clone());
            }
            let (y1, cache1) = c2.forward(&Dual3::plain(x0.clone()));
            let (y2, cache2) = gn.forward(&y1);
            let mut gy = y2.zeros_like();
            for (g, p) in gy.v.iter_mut().zip(&proj) {
                *g = *p;
            }
            if y2.has_t() && gy.t.is_none() {
                gy.t = Some(ndarray::Array3::zeros(y2.v.dim()));
            }
            let (g1, _) = gn.backward(&cache2, &gy);
            let (_, cg) = c2.backward(&cache1, &g1);
            (
                cg.w.v.iter().cloned().collect(),
                cg.w.t.as_ref().map(|t| t.iter().cloned().collect()),
            )
        };

        let (_, hvp) = grad_at(0.0, true);
        let hvp = hvp.expect("tangent must propagate to parameter grads");
        let h = 1e-6;
        let (gp, _) = grad_at(h, false);
        let (gm, _) = grad_at(-h, false);
        let fd: Vec<f64> = gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * h)).collect();
        assert!(rel_err(&fd, &hvp) < 1e-5, "hvp rel err {}", rel_err(&fd, &hvp));
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = substream(104, &["test", "lin"]);
        let lin = Linear::new(6, 4, &mut rng);
        let x0 = Array1::from_shape_fn(6, |_| rng.gen_range(-1.0..1.0));
        let proj = [0.3, -0.7, 0.2, 0.9];
        let (_, cache) = lin.forward(&Dual1::plain(x0.clone()));
        let gy = Dual1::plain(Array1::from(proj.to_vec()));
        let (gx, grads) = lin.backward(&cache, &gy);

        let mut wflat: Vec<f64> = lin.w.v.iter().cloned().collect();
        let fd_w = fd_grad(
            &mut wflat,
            |w| {
                let mut l2 = lin.clone();
                l2.w.v = Array2::from_shape_vec(lin.w.v.dim(), w.to_vec()).unwrap();
                let (y, _) = l2.forward(&Dual1::plain(x0.clone()));
                proj_loss(&y.v.view(), &proj)
            },
            1e-6,
        );
        let an_w: Vec<f64> = grads.w.v.iter().cloned().collect();
        assert!(rel_err(&fd_w, &an_w) < 1e-8);

        let mut xflat: Vec<f64> = x0.iter().cloned().collect();
        let fd_x = fd_grad(
            &mut xflat,
            |xv| {
                let (y, _) = lin.forward(&Dual1::plain(Array1::from(xv.to_vec())));
                proj_loss(&y.v.view(), &proj)
            },
            1e-6,
        );
        let an_x: Vec<f64> = gx.v.iter().cloned().collect();
        assert!(rel_err(&fd_x, &an_x) < 1e-8);
    }
}
