//! Feature extractor: a stack of conv + group norm + relu blocks.

use super::params::{Flat, Reader};
use super::DetectorConfig;
use crate::nn::dual::{mask_apply, Dual3};
use crate::nn::layers::{Conv2d, ConvCache, ConvGrads, GnCache, GnGrads, GroupNorm};
use ndarray::Array3;
use rand_chacha::ChaCha12Rng;

#[derive(Clone)]
pub struct Block {
    pub conv: Conv2d,
    pub gn: GroupNorm,
}

#[derive(Clone)]
pub struct Backbone {
    pub blocks: Vec<Block>,
}

pub struct BackboneCache {
    steps: Vec<(ConvCache, GnCache, Array3<f64>)>,
}

pub struct BackboneGrads {
    pub blocks: Vec<(ConvGrads, GnGrads)>,
}

impl Backbone {
    pub fn new(cfg: &DetectorConfig, rng: &mut ChaCha12Rng) -> Backbone {
        let mut blocks = Vec::with_capacity(cfg.channels.len());
        let mut cin = 3;
        for (i, &cout) in cfg.channels.iter().enumerate() {
            blocks.push(Block {
                conv: Conv2d::new(cin, cout, 3, cfg.block_strides[i], 1, rng),
                gn: GroupNorm::new(cout, cfg.gn_groups),
            });
            cin = cout;
        }
        Backbone { blocks }
    }

    /// `x` is `(3, H, W)`; the result is `(C, H/stride, W/stride)`.
    pub fn forward(&self, x: &Dual3) -> (Dual3, BackboneCache) {
        let mut cur = x.clone();
        let mut steps = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (z, cc) = b.conv.forward(&cur);
            let (n, gc) = b.gn.forward(&z);
            let (y, mask) = crate::nn::dual::relu(&n);
            steps.push((cc, gc, mask));
            cur = y;
        }
        (cur, BackboneCache { steps })
    }

    /// Gradient of the loss with respect to every block parameter. The
    /// input-image gradient is dropped.
    pub fn backward(&self, cache: &BackboneCache, gy: &Dual3) -> BackboneGrads {
        let mut g = gy.clone();
        let mut rev = Vec::with_capacity(self.blocks.len());
        for (b, (cc, gc, mask)) in self.blocks.iter().zip(cache.steps.iter()).rev() {
            let g_relu = mask_apply(&g, mask);
            let (g_gn, gn_grads) = b.gn.backward(gc, &g_relu);
            let (g_in, conv_grads) = b.conv.backward(cc, &g_gn);
            rev.push((conv_grads, gn_grads));
            g = g_in;
        }
        rev.reverse();
        BackboneGrads { blocks: rev }
    }

    pub fn num_params(&self) -> usize {
        self.blocks.iter().map(|b| b.conv.num_params() + b.gn.num_params()).sum()
    }
}

impl Flat for Backbone {
    fn flat_len(&self) -> usize {
        self.num_params()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        for b in &self.blocks {
            b.conv.write_flat(out);
            b.gn.write_flat(out);
        }
    }
    fn read_flat(&mut self, r: &mut Reader) {
        for b in &mut self.blocks {
            b.conv.read_flat(r);
            b.gn.read_flat(r);
        }
    }
    fn write_flat_tangent(&self, out: &mut Vec<f64>) {
        for b in &self.blocks {
            b.conv.write_flat_tangent(out);
            b.gn.write_flat_tangent(out);
        }
    }
    fn set_tangent(&mut self, r: &mut Reader) {
        for b in &mut self.blocks {
            b.conv.set_tangent(r);
            b.gn.set_tangent(r);
        }
    }
    fn clear_tangent(&mut self) {
        for b in &mut self.blocks {
            b.conv.clear_tangent();
            b.gn.clear_tangent();
        }
    }
}

impl Flat for BackboneGrads {
    fn flat_len(&self) -> usize {
        self.blocks.iter().map(|(c, g)| c.flat_len() + g.flat_len()).sum()
    }
    fn write_flat(&self, out: &mut Vec<f64>) {
        for (c, g) in &self.blocks {
            c.write_flat(out);
            g.write_flat(out);
        }
    }
    fn read_flat(&mut self, r: &mut Reader) {
        for (c, g) in &mut self.blocks {
            c.read_flat(r);
            g.read_flat(r);
        }
    }
    fn write_flat_tangent(&self, out: &mut Vec<f64>) {
        for (c, g) in &self.blocks {
            c.write_flat_tangent(out);
            g.write_flat_tangent(out);
        }
    }
    fn set_tangent(&mut self, r: &mut Reader) {
        for (c, g) in &mut self.blocks {
            c.set_tangent(r);
            g.set_tangent(r);
        }
    }
    fn clear_tangent(&mut self) {
        for (c, g) in &mut self.blocks {
            c.clear_tangent();
            g.clear_tangent();
        }
    }
}
