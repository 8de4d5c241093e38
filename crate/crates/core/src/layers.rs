//! Parameterised building blocks shared by the generator, the
//! discriminators and the metric feature extractor.

use crate::error::Result;
use crate::tensor::{init_gaussian, Element, ParamId, ParamStore, ParamVars, Tape, Tensor, Var};

pub const INIT_STD: f64 = 0.02;
pub const NORM_EPS: f64 = 1e-5;

/// Registers layers with seeded weights; each layer draws from its own stream.
pub struct Init<'a> {
    pub store: &'a mut ParamStore<f32>,
    pub seed: u64,
    layer: u64,
}

impl<'a> Init<'a> {
    pub fn new(store: &'a mut ParamStore<f32>, seed: u64) -> Self {
        let layer = store.len() as u64;
        Init { store, seed, layer }
    }

    fn weight(&mut self, name: &str, shape: [usize; 4]) -> ParamId {
        self.layer += 1;
        let w = init_gaussian(&shape, INIT_STD, self.seed, self.layer);
        self.store.add(format!("{name}.weight"), w)
    }

    fn bias(&mut self, name: &str, n: usize) -> ParamId {
        self.store.add(format!("{name}.bias"), Tensor::zeros([n]))
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Conv {
        let weight = self.weight(name, [cout, cin, k, k]);
        let bias = self.bias(name, cout);
        Conv { weight, bias, stride, pad, transpose: false, cin, cout }
    }

    pub fn conv_t(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, pad: usize) -> Conv {
        let weight = self.weight(name, [cin, cout, k, k]);
        let bias = self.bias(name, cout);
        Conv { weight, bias, stride, pad, transpose: true, cin, cout }
    }

    pub fn res_block(&mut self, name: &str, ch: usize) -> ResBlock {
        ResBlock {
            conv1: self.conv(&format!("{name}.conv1"), ch, ch, 3, 1, 1),
            conv2: self.conv(&format!("{name}.conv2"), ch, ch, 3, 1, 1),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
    pub transpose: bool,
    pub cin: usize,
    pub cout: usize,
}

impl Conv {
    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &ParamVars, x: Var) -> Result<Var> {
        let (w, b) = (p.var(self.weight), Some(p.var(self.bias)));
        if self.transpose {
            tape.conv_transpose2d(x, w, b, self.stride, self.pad)
        } else {
            tape.conv2d(x, w, b, self.stride, self.pad)
        }
    }

    /// conv → instance norm → ReLU
    pub fn norm_relu<T: Element>(&self, tape: &mut Tape<T>, p: &ParamVars, x: Var) -> Result<Var> {
        let y = self.forward(tape, p, x)?;
        let y = tape.instance_norm(y, T::from_f64_lossy(NORM_EPS))?;
        Ok(tape.relu(y))
    }

    /// Output spatial extent for a square input of side `h`.
    pub fn out_extent(&self, h: usize, k: usize) -> Option<usize> {
        if self.transpose {
            ((h - 1) * self.stride + k).checked_sub(2 * self.pad)
        } else {
            (h + 2 * self.pad).checked_sub(k).map(|v| v / self.stride + 1)
        }
    }
}

/// conv–norm–relu–conv–norm plus identity skip.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResBlock {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl ResBlock {
    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, p: &ParamVars, x: Var) -> Result<Var> {
        let eps = T::from_f64_lossy(NORM_EPS);
        let y = self.conv1.norm_relu(tape, p, x)?;
        let y = self.conv2.forward(tape, p, y)?;
        let y = tape.instance_norm(y, eps)?;
        tape.add(x, y)
    }
}
