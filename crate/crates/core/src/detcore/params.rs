//! Flat parameter plumbing.
//!
//! Optimizers, checkpoints and the bi-level machinery all see parameters
//! as flat `Vec<f64>` blocks per group. Layer order inside a block is
//! fixed by the `Flat` impls; parameter structs and their gradient mirrors
//! implement the same trait so the orders cannot drift apart without the
//! finite-difference tests catching it.

use crate::nn::dual::{Dual1, Dual2};
use crate::nn::layers::{Conv2d, ConvGrads, GnGrads, GroupNorm, Linear, LinearGrads};
use ndarray::{Array1, Array2};

pub struct Reader<'a> {
    data: &'a [f64],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(data: &'a [f64]) -> Self {
        Reader { data, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> &'a [f64] {
        let s = &self.data[self.pos..self.pos + n];
        self.pos += n;
        s
    }

    pub fn finish(self) {
        assert_eq!(self.pos, self.data.len(), "flat vector length mismatch");
    }
}

pub trait Flat {
    fn flat_len(&self) -> usize;
    /// Append values in canonical order.
    fn write_flat(&self, out: &mut Vec<f64>);
    /// Read values back in the same order.
    fn read_flat(&mut self, r: &mut Reader);
    /// Append tangents (zeros where absent) in the same order.
    fn write_flat_tangent(&self, out: &mut Vec<f64>);
    /// Install tangents in the same order.
    fn set_tangent(&mut self, r: &mut Reader);
    fn clear_tangent(&mut self);
}

fn write_d1(d: &Dual1, out: &mut Vec<f64>) {
    out.extend(d.v.iter());
}

fn write_d2(d: &Dual2, out: &mut Vec<f64>) {
    out.extend(d.v.iter());
}

fn write_d1_t(d: &Dual1, out: &mut Vec<f64>) {
    match &d.t {
        Some(t) => out.extend(t.iter()),
        None => out.extend(std::iter::repeat(0.0).take(d.v.len())),
    }
}

fn write_d2_t(d: &Dual2, out: &mut Vec<f64>) {
    match &d.t {
        Some(t) => out.extend(t.iter()),
        None => out.extend(std::iter::repeat(0.0).take(d.v.len())),
    }
}

fn read_d1(d: &mut Dual1, r: &mut Reader) {
    d.v = Array1::from(r.take(d.v.len()).to_vec());
}

fn read_d2(d: &mut Dual2, r: &mut Reader) {
    let dim = d.v.dim();
    d.v = Array2::from_shape_vec(dim, r.take(d.v.len()).to_vec()).unwrap();
}

fn set_t1(d: &mut Dual1, r: &mut Reader) {
    d.t = Some(Array1::from(r.take(d.v.len()).to_vec()));
}

fn set_t2(d: &mut Dual2, r: &mut Reader) {
    let dim = d.v.dim();
    d.t = Some(Array2::from_shape_vec(dim, r.take(d.v.len()).to_vec()).unwrap());
}

impl Flat for Conv2d {
    fn flat_len(&self) -> usize {
        self.w.v.len() + self.b.v.len()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        write_d2(&self.w, out);
        write_d1(&self.b, out);
    }
    fn read_flat(&mut self, r: &mut Reader) {
        read_d2(&mut self.w, r);
        read_d1(&mut self.b, r);
    }
    fn write_flat_tangent(&self, out: &mut Vec<f64>) {
        write_d2_t(&self.w, out);
        write_d1_t(&self.b, out);
    }
    fn set_tangent(&mut self, r: &mut Reader) {
        set_t2(&mut self.w, r);
        set_t1(&mut self.b, r);
    }
    fn clear_tangent(&mut self) {
        self.w.t = None;
        self.b.t = None;
    }
}

impl Flat for ConvGrads {
    fn flat_len(&self) -> usize {
        self.w.v.len() + self.b.v.len()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        write_d2(&self.w, out);
        write_d1(&self.b, out);
    }
    fn read_flat(&mut self, r: &mut Reader) {
        read_d2(&mut self.w, r);
        read_d1(&mut self.b, r);
    }
    fn write_flat_tangent(&self, out: &mut Vec<f64>) {
        write_d2_t(&self.w, out);
        write_d1_t(&self.b, out);
    }
    fn set_tangent(&mut self, r: &mut Reader) {
        set_t2(&mut self.w, r);
        set_t1(&mut self.b, r);
    }
    fn clear_tangent(&mut self) {
        self.w.t = None;
        self.b.t = None;
    }
}

impl Flat for GroupNorm {
    fn flat_len(&self) -> usize {
        self.gamma.v.len() + self.beta.v.len()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        write_d1(&self.gamma, out);
        write_d1(&self.beta, out);
    }
    fn read_flat(&mut self, r: &mut Reader) {
        read_d1(&mut self.gamma, r);
        read_d1(&mut self.beta, r);
    }
    fn write_flat_tangent(&self, out: &mut Vec<f64>) {
        write_d1_t(&self.gamma, out);
        write_d1_t(&self.beta, out);
    }
    fn set_tangent(&mut self, r: &mut Reader) {
        set_t1(&mut self.gamma, r);
        set_t1(&mut self.beta, r);
    }
    fn clear_tangent(&mut self) {
        self.gamma.t = None;
        self.beta.t = None;
    }
}

impl Flat for GnGrads {
    fn flat_len(&self) -> usize {
        self.gamma.v.len() + self.beta.v.len()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        write_d1(&self.gamma, out);
        write_d1(&self.beta, out);
    }
    fn read_flat(&mut self, r: &mut Reader) {
        read_d1(&mut self.gamma, r);
        read_d1(&mut self.beta, r);
    }
    fn write_flat_tangent(&self, out: &mut Vec<f64>) {
        write_d1_t(&self.gamma, out);
        write_d1_t(&self.beta, out);
    }
    fn set_tangent(&mut self, r: &mut Reader) {
        set_t1(&mut self.gamma, r);
        set_t1(&mut self.beta, r);
    }
    fn clear_tangent(&mut self) {
        self.gamma.t = None;
        self.beta.t = None;
    }
}

impl Flat for Linear {
    fn flat_len(&self) -> usize {
        self.w.v.len() + self.b.v.len()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        write_d2(&self.w, out);
        write_d1(&self.b, out);
    }
    fn read_flat(&mut self, r: &mut Reader) {
        read_d2(&mut self.w, r);
        read_d1(&mut self.b, r);
    }
    fn write_flat_tangent(&self, out: &mut Vec<f64>) {
        write_d2_t(&self.w, out);
        write_d1_t(&self.b, out);
    }
    fn set_tangent(&mut self, r: &mut Reader) {
        set_t2(&mut self.w, r);
        set_t1(&mut self.b, r);
    }
    fn clear_tangent(&mut self) {
        self.w.t = None;
        self.b.t = None;
    }
}

impl Flat for LinearGrads {
    fn flat_len(&self) -> usize {
        self.w.v.len() + self.b.v.len()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        write_d2(&self.w, out);
        write_d1(&self.b, out);
    }
    fn read_flat(&mut self, r: &mut Reader) {
        read_d2(&mut self.w, r);
        read_d1(&mut self.b, r);
    }
    fn write_flat_tangent(&self, out: &mut Vec<f64>) {
        write_d2_t(&self.w, out);
        write_d1_t(&self.b, out);
    }
    fn set_tangent(&mut self, r: &mut Reader) {
        set_t2(&mut self.w, r);
        set_t1(&mut self.b, r);
    }
    fn clear_tangent(&mut self) {
        self.w.t = None;
        self.b.t = None;
    }
}
