//! Dual-number arrays: value plus optional forward-mode tangent.
//!
//! Every layer's forward and backward pass is written against these ops.
//! With tangents absent they cost nothing extra and compute plain values
//! and gradients. With tangents installed on the parameters, the same code
//! propagates directional derivatives through both passes, so the tangent
//! of a gradient is an exact Hessian-vector product. That is what the
//! second-order meta-gradient needs, without a second implementation of
//! any formula.

use ndarray::{Array, Array1, Array2, Array3, Dimension};

#[derive(Clone, Debug)]
pub struct Dual<D: Dimension> {
    pub v: Array<f64, D>,
    pub t: Option<Array<f64, D>>,
}

pub type Dual1 = Dual<ndarray::Ix1>;
pub type Dual2 = Dual<ndarray::Ix2>;
pub type Dual3 = Dual<ndarray::Ix3>;

/// Dual scalar. `t` is only meaningful when produced from arrays carrying
/// tangents; it stays 0.0 otherwise.
#[derive(Clone, Copy, Debug)]
pub struct Ds {
    pub v: f64,
    pub t: f64,
}

impl Ds {
    pub const ZERO: Ds = Ds { v: 0.0, t: 0.0 };

    pub fn plain(v: f64) -> Ds {
        Ds { v, t: 0.0 }
    }

    pub fn add(self, o: Ds) -> Ds {
        Ds { v: self.v + o.v, t: self.t + o.t }
    }

    pub fn sub(self, o: Ds) -> Ds {
        Ds { v: self.v - o.v, t: self.t - o.t }
    }

    pub fn mul(self, o: Ds) -> Ds {
        Ds { v: self.v * o.v, t: self.t * o.v + self.v * o.t }
    }

    pub fn scale(self, s: f64) -> Ds {
        Ds { v: self.v * s, t: self.t * s }
    }

    /// 1 / sqrt(v + eps)
    pub fn rsqrt(self, eps: f64) -> Ds {
        let r = 1.0 / (self.v + eps).sqrt();
        Ds { v: r, t: -0.5 * r * r * r * self.t }
    }
}

impl<D: Dimension> Dual<D> {
    pub fn plain(v: Array<f64, D>) -> Self {
        Dual { v, t: None }
    }

    pub fn with_tangent(v: Array<f64, D>, t: Array<f64, D>) -> Self {
        assert_eq!(v.raw_dim(), t.raw_dim());
        Dual { v, t: Some(t) }
    }

    pub fn zeros_like(&self) -> Self {
        Dual {
            v: Array::zeros(self.v.raw_dim()),
            t: self.t.as_ref().map(|t| Array::zeros(t.raw_dim())),
        }
    }

    pub fn has_t(&self) -> bool {
        self.t.is_some()
    }

    /// Tangent view that materializes zeros when absent.
    pub fn t_or_zeros(&self) -> Array<f64, D> {
        match &self.t {
            Some(t) => t.clone(),
            None => Array::zeros(self.v.raw_dim()),
        }
    }

    pub fn add(&self, o: &Dual<D>) -> Dual<D> {
        Dual { v: &self.v + &o.v, t: combine(&self.t, &o.t, 1.0) }
    }

    pub fn sub(&self, o: &Dual<D>) -> Dual<D> {
        Dual { v: &self.v - &o.v, t: combine(&self.t, &o.t, -1.0) }
    }

    pub fn scale(&self, s: f64) -> Dual<D> {
        Dual { v: &self.v * s, t: self.t.as_ref().map(|t| t * s) }
    }

    /// Elementwise product with the product rule on tangents.
    pub fn hadamard(&self, o: &Dual<D>) -> Dual<D> {
        let v = &self.v * &o.v;
        let t = match (&self.t, &o.t) {
            (None, None) => None,
            (Some(at), None) => Some(at * &o.v),
            (None, Some(bt)) => Some(&self.v * bt),
            (Some(at), Some(bt)) => Some(at * &o.v + &self.v * bt),
        };
        Dual { v, t }
    }

    /// Multiply by a dual scalar.
    pub fn scale_ds(&self, s: Ds) -> Dual<D> {
        let v = &self.v * s.v;
        let t = if s.t != 0.0 || self.t.is_some() {
            let mut t = &self.v * s.t;
            if let Some(at) = &self.t {
                t = t + at * s.v;
            }
            Some(t)
        } else {
            None
        };
        Dual { v, t }
    }

    /// Add a dual scalar to every element.
    pub fn add_ds(&self, s: Ds) -> Dual<D> {
        let v = &self.v + s.v;
        let t = if s.t != 0.0 || self.t.is_some() {
            Some(self.t_or_zeros() + s.t)
        } else {
            None
        };
        Dual { v, t }
    }

    pub fn sum(&self) -> Ds {
        Ds { v: self.v.sum(), t: self.t.as_ref().map_or(0.0, |t| t.sum()) }
    }

    pub fn mean(&self) -> Ds {
        self.sum().scale(1.0 / self.v.len() as f64)
    }

    /// In-place `self += o * s`.
    pub fn axpy(&mut self, o: &Dual<D>, s: f64) {
        self.v.scaled_add(s, &o.v);
        match (&mut self.t, &o.t) {
            (Some(st), Some(ot)) => st.scaled_add(s, ot),
            (None, Some(ot)) => self.t = Some(ot * s),
            _ => {}
        }
    }
}

fn combine<D: Dimension>(
    a: &Option<Array<f64, D>>,
    b: &Option<Array<f64, D>>,
    sb: f64,
) -> Option<Array<f64, D>> {
    match (a, b) {
        (None, None) => None,
        (Some(a), None) => Some(a.clone()),
        (None, Some(b)) => Some(b * sb),
        (Some(a), Some(b)) => Some(a + &(b * sb)),
    }
}

/// `a . b`
pub fn mm(a: &Dual2, b: &Dual2) -> Dual2 {
    let v = a.v.dot(&b.v);
    let t = match (&a.t, &b.t) {
        (None, None) => None,
        (Some(at), None) => Some(at.dot(&b.v)),
        (None, Some(bt)) => Some(a.v.dot(bt)),
        (Some(at), Some(bt)) => Some(at.dot(&b.v) + a.v.dot(bt)),
    };
    Dual2 { v, t }
}

/// `a^T . b`
pub fn mm_tn(a: &Dual2, b: &Dual2) -> Dual2 {
    let v = a.v.t().dot(&b.v);
    let t = match (&a.t, &b.t) {
        (None, None) => None,
        (Some(at), None) => Some(at.t().dot(&b.v)),
        (None, Some(bt)) => Some(a.v.t().dot(bt)),
        (Some(at), Some(bt)) => Some(at.t().dot(&b.v) + a.v.t().dot(bt)),
    };
    Dual2 { v, t }
}

/// `a . b^T`
pub fn mm_nt(a: &Dual2, b: &Dual2) -> Dual2 {
    let v = a.v.dot(&b.v.t());
    let t = match (&a.t, &b.t) {
        (None, None) => None,
        (Some(at), None) => Some(at.dot(&b.v.t())),
        (None, Some(bt)) => Some(a.v.dot(&bt.t())),
        (Some(at), Some(bt)) => Some(at.dot(&b.v.t()) + a.v.dot(&bt.t())),
    };
    Dual2 { v, t }
}

/// Matrix-vector product `w . x`.
pub fn mv(w: &Dual2, x: &Dual1) -> Dual1 {
    let v = w.v.dot(&x.v);
    let t = match (&w.t, &x.t) {
        (None, None) => None,
        (Some(wt), None) => Some(wt.dot(&x.v)),
        (None, Some(xt)) => Some(w.v.dot(xt)),
        (Some(wt), Some(xt)) => Some(wt.dot(&x.v) + w.v.dot(xt)),
    };
    Dual1 { v, t }
}

/// `w^T . x` (vector through the transposed matrix).
pub fn mv_t(w: &Dual2, x: &Dual1) -> Dual1 {
    let v = w.v.t().dot(&x.v);
    let t = match (&w.t, &x.t) {
        (None, None) => None,
        (Some(wt), None) => Some(wt.t().dot(&x.v)),
        (None, Some(xt)) => Some(w.v.t().dot(xt)),
        (Some(wt), Some(xt)) => Some(wt.t().dot(&x.v) + w.v.t().dot(xt)),
    };
    Dual1 { v, t }
}

/// Outer product `a b^T`.
pub fn outer(a: &Dual1, b: &Dual1) -> Dual2 {
    let av = a.v.view().insert_axis(ndarray::Axis(1));
    let bv = b.v.view().insert_axis(ndarray::Axis(0));
    let v = av.dot(&bv);
    let t = match (&a.t, &b.t) {
        (None, None) => None,
        _ => {
            let at = a.t_or_zeros();
            let bt = b.t_or_zeros();
            let mut t = at.insert_axis(ndarray::Axis(1)).dot(&bv);
            t = t + av.dot(&bt.insert_axis(ndarray::Axis(0)));
            Some(t)
        }
    };
    Dual2 { v, t }
}

/// ReLU. The mask comes from the value part and multiplies both parts;
/// exact almost everywhere.
pub fn relu<D: Dimension>(x: &Dual<D>) -> (Dual<D>, Array<f64, D>) {
    let mask = x.v.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    let v = &x.v * &mask;
    let t = x.t.as_ref().map(|t| t * &mask);
    (Dual { v, t }, mask)
}

/// Backward through a ReLU given its forward mask.
pub fn mask_apply<D: Dimension>(g: &Dual<D>, mask: &Array<f64, D>) -> Dual<D> {
    Dual { v: &g.v * mask, t: g.t.as_ref().map(|t| t * mask) }
}

/// Fused softmax cross-entropy: returns the loss and the gradient with
/// respect to the logits (upstream seed 1). Both carry tangents when the
/// logits do.
pub fn softmax_ce(logits: &Dual1, target: usize) -> (Ds, Dual1) {
    let m = logits.v.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let ex = logits.v.mapv(|z| (z - m).exp());
    let sum = ex.sum();
    let p = &ex / sum;
    let loss_v = sum.ln() + m - logits.v[target];
    let mut g = p.clone();
    g[target] -= 1.0;
    match &logits.t {
        None => (Ds { v: loss_v, t: 0.0 }, Dual1::plain(g)),
        Some(zt) => {
            let pdot = p.dot(zt);
            let loss_t = pdot - zt[target];
            // dp = p * (zt - <p, zt>)
            let pt = &p * &(zt - pdot);
            (Ds { v: loss_v, t: loss_t }, Dual1::with_tangent(g, pt))
        }
    }
}

/// Fused binary cross-entropy with logits, elementwise weights.
/// loss = sum_i w_i * (softplus(z_i) - y_i z_i); grad = w * (sigmoid(z) - y).
pub fn bce_with_logits(logits: &Dual1, targets: &Array1<f64>, weights: &Array1<f64>) -> (Ds, Dual1) {
    let mut loss_v = 0.0;
    let n = logits.v.len();
    let mut g = Array1::zeros(n);
    let mut sig = Array1::zeros(n);
    for i in 0..n {
        let z = logits.v[i];
        let sp = z.max(0.0) + (1.0 + (-z.abs()).exp()).ln();
        loss_v += weights[i] * (sp - targets[i] * z);
        let s = 1.0 / (1.0 + (-z).exp());
        sig[i] = s;
        g[i] = weights[i] * (s - targets[i]);
    }
    match &logits.t {
        None => (Ds { v: loss_v, t: 0.0 }, Dual1::plain(g)),
        Some(zt) => {
            let mut loss_t = 0.0;
            let mut gt = Array1::zeros(n);
            for i in 0..n {
                loss_t += g[i] * zt[i];
                gt[i] = weights[i] * sig[i] * (1.0 - sig[i]) * zt[i];
            }
            (Ds { v: loss_v, t: loss_t }, Dual1::with_tangent(g, gt))
        }
    }
}

/// Fused smooth-L1 (transition at |e| = 1) against plain targets, with
/// elementwise weights. Returns loss and gradient w.r.t. predictions.
pub fn smooth_l1(pred: &Dual1, targets: &Array1<f64>, weights: &Array1<f64>) -> (Ds, Dual1) {
    let n = pred.v.len();
    let mut loss_v = 0.0;
    let mut g = Array1::zeros(n);
    let mut inner = Array1::zeros(n);
    for i in 0..n {
        let e = pred.v[i] - targets[i];
        if e.abs() < 1.0 {
            loss_v += weights[i] * 0.5 * e * e;
            g[i] = weights[i] * e;
            inner[i] = 1.0;
        } else {
            loss_v += weights[i] * (e.abs() - 0.5);
            g[i] = weights[i] * e.signum();
        }
    }
    match &pred.t {
        None => (Ds { v: loss_v, t: 0.0 }, Dual1::plain(g)),
        Some(pt) => {
            let mut loss_t = 0.0;
            let mut gt = Array1::zeros(n);
            for i in 0..n {
                loss_t += g[i] * pt[i];
                gt[i] = weights[i] * inner[i] * pt[i];
            }
            (Ds { v: loss_v, t: loss_t }, Dual1::with_tangent(g, gt))
        }
    }
}

/// Flatten a `(C, H, W)` dual map into a vector, C-major.
pub fn flatten3(x: &Dual3) -> Dual1 {
    let n = x.v.len();
    let v = x.v.clone().into_shape_with_order(n).unwrap();
    let t = x.t.as_ref().map(|t| t.clone().into_shape_with_order(n).unwrap());
    Dual1 { v, t }
}

/// Inverse of [`flatten3`].
pub fn unflatten3(x: &Dual1, dim: (usize, usize, usize)) -> Dual3 {
    let v = x.v.clone().into_shape_with_order(dim).unwrap();
    let t = x.t.as_ref().map(|t| t.clone().into_shape_with_order(dim).unwrap());
    Dual3 { v, t }
}

/// Reshape helpers between `(C, H, W)` and `(C, H*W)`.
pub fn to_2d(x: &Dual3) -> Dual2 {
    let (c, h, w) = x.v.dim();
    let v = x.v.clone().into_shape_with_order((c, h * w)).unwrap();
    let t = x.t.as_ref().map(|t| t.clone().into_shape_with_order((c, h * w)).unwrap());
    Dual2 { v, t }
}

pub fn to_3d(x: &Dual2, dim: (usize, usize, usize)) -> Dual3 {
    let v = x.v.clone().into_shape_with_order(dim).unwrap();
    let t = x.t.as_ref().map(|t| t.clone().into_shape_with_order(dim).unwrap());
    Dual3 { v, t }
}

#[allow(unused)]
pub fn dual3_from(v: Array3<f64>) -> Dual3 {
    Dual3::plain(v)
}

#[allow(unused)]
pub fn dual2_from(v: Array2<f64>) -> Dual2 {
    Dual2::plain(v)
}
