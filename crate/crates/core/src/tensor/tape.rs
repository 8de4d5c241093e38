//! Reverse-mode tape.
//!
//! Nodes are appended in evaluation order, so every op's inputs precede it
//! and a single reverse sweep visits each node once.

use super::ops;
use super::{Element, Tensor};
use crate::error::{contract_err, dim_err, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    ConvTranspose2d { x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize },
    InstanceNorm { x: Var, inv_std: Vec<T> },
    LeakyRelu { x: Var, slope: T },
    Tanh { x: Var },
    AvgDown2 { x: Var },
    Concat { a: Var, b: Var },
    Add { a: Var, b: Var },
    Scale { x: Var, factor: T },
    Sum { x: Var },
    L1 { a: Var, b: Var },
    Mse { a: Var, b: Var },
    MseTarget { x: Var, target: T },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

#[derive(Debug, Default)]
pub struct Tape<T: Element> {
    nodes: Vec<Node<T>>,
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, requires_grad, Op::Leaf)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Copy of `v`'s value with no path back to its inputs.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, op: Op<T>) -> Var {
        debug_assert!(value.is_finite() || !matches!(op, Op::Leaf), "non-finite op output");
        self.nodes.push(Node { value, grad: None, requires_grad, op });
        Var(self.nodes.len() - 1)
    }

    fn any_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err!("{what}: {:?} vs {:?}", self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let out = ops::conv2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        let rg = self.any_grad(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(out, rg, Op::Conv2d { x, w, b, stride, pad }))
    }

    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        pad: usize,
    ) -> Result<Var> {
        let out =
            ops::conv_transpose2d(self.value(x), self.value(w), b.map(|b| self.value(b)), stride, pad)?;
        let rg = self.any_grad(&[x, w]) || b.is_some_and(|b| self.requires_grad(b));
        Ok(self.push(out, rg, Op::ConvTranspose2d { x, w, b, stride, pad }))
    }

    pub fn instance_norm(&mut self, x: Var, eps: T) -> Result<Var> {
        let (out, inv_std) = ops::instance_norm(self.value(x), eps)?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, rg, Op::InstanceNorm { x, inv_std }))
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let out = self.value(x).map(|v| if v > T::zero() { v } else { v * slope });
        let rg = self.requires_grad(x);
        self.push(out, rg, Op::LeakyRelu { x, slope })
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.leaky_relu(x, T::zero())
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.tanh());
        let rg = self.requires_grad(x);
        self.push(out, rg, Op::Tanh { x })
    }

    pub fn avg_downsample2(&mut self, x: Var) -> Result<Var> {
        let out = ops::avg_downsample2(self.value(x))?;
        let rg = self.requires_grad(x);
        Ok(self.push(out, rg, Op::AvgDown2 { x }))
    }

    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::concat_channels(self.value(a), self.value(b))?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, rg, Op::Concat { a, b }))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(out, rg, Op::Add { a, b }))
    }

    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let out = self.value(x).map(|v| v * factor);
        let rg = self.requires_grad(x);
        self.push(out, rg, Op::Scale { x, factor })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.requires_grad(x);
        self.push(out, rg, Op::Sum { x })
    }

    /// Sum of several scalars (or same-shaped tensors).
    pub fn add_all(&mut self, vars: &[Var]) -> Result<Var> {
        let (&first, rest) = vars
            .split_first()
            .ok_or_else(|| contract_err!("add_all on an empty list"))?;
        rest.iter().try_fold(first, |acc, &v| self.add(acc, v))
    }

    /// `mean |a - b|`
    pub fn l1_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "l1_loss")?;
        let (va, vb) = (self.value(a), self.value(b));
        let n = T::from_usize(va.numel()).unwrap();
        let s = va.data().iter().zip(vb.data()).fold(T::zero(), |acc, (&x, &y)| acc + (x - y).abs());
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::scalar(s / n), rg, Op::L1 { a, b }))
    }

    /// `mean (a - b)²`
    pub fn mse_loss(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mse_loss")?;
        let (va, vb) = (self.value(a), self.value(b));
        let n = T::from_usize(va.numel()).unwrap();
        let s = va.data().iter().zip(vb.data()).fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
        let rg = self.any_grad(&[a, b]);
        Ok(self.push(Tensor::scalar(s / n), rg, Op::Mse { a, b }))
    }

    /// `mean (x - target)²` against a constant target.
    pub fn mse_to(&mut self, x: Var, target: T) -> Var {
        let vx = self.value(x);
        let n = T::from_usize(vx.numel()).unwrap();
        let s = vx.data().iter().fold(T::zero(), |acc, &v| acc + (v - target) * (v - target));
        let rg = self.requires_grad(x);
        self.push(Tensor::scalar(s / n), rg, Op::MseTarget { x, target })
    }

    /// Fill `grad` for every node reachable from the scalar `loss`.
    ///
    /// Gradients from a previous call are cleared first.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(contract_err!(
                "backward needs a scalar, got shape {:?}",
                self.shape(loss)
            ));
        }
        self.zero_grad();
        if !self.requires_grad(loss) {
            return Ok(());
        }
        self.nodes[loss.0].grad = Some(Tensor::new(self.shape(loss).to_vec(), vec![T::one()])?);
        for i in (0..=loss.0).rev() {
            let (before, rest) = self.nodes.split_at_mut(i);
            let node = &rest[0];
            let Some(g) = node.grad.as_ref() else { continue };
            if !node.requires_grad {
                continue;
            }
            backprop(before, node, g)?;
        }
        Ok(())
    }
}

fn accumulate<T: Element>(nodes: &mut [Node<T>], v: Var, delta: Tensor<T>) {
    let node = &mut nodes[v.0];
    if !node.requires_grad {
        return;
    }
    match node.grad.as_mut() {
        Some(g) => {
            for (a, &d) in g.data_mut().iter_mut().zip(delta.data()) {
                *a = *a + d;
            }
        }
        None => node.grad = Some(delta),
    }
}

fn elementwise<T: Element>(like: &Tensor<T>, f: impl Fn(usize) -> T) -> Tensor<T> {
    Tensor::from_fn(like.shape().to_vec(), f)
}

fn backprop<T: Element>(nodes: &mut [Node<T>], node: &Node<T>, g: &Tensor<T>) -> Result<()> {
    let rg = |nodes: &[Node<T>], v: Var| nodes[v.0].requires_grad;
    match &node.op {
        Op::Leaf => {}
        &Op::Conv2d { x, w, b, stride, pad } => {
            let (want_x, want_w) = (rg(nodes, x), rg(nodes, w));
            let (dx, dw, db) = ops::conv2d_backward(
                &nodes[x.0].value,
                &nodes[w.0].value,
                g,
                stride,
                pad,
                want_x,
                want_w,
            )?;
            if let Some(dx) = dx {
                accumulate(nodes, x, dx);
            }
            if let Some(dw) = dw {
                accumulate(nodes, w, dw);
            }
            if let Some(b) = b {
                let shape = nodes[b.0].value.shape().to_vec();
                accumulate(nodes, b, Tensor::new(shape, db)?);
            }
        }
        &Op::ConvTranspose2d { x, w, b, stride, pad } => {
            let (want_x, want_w) = (rg(nodes, x), rg(nodes, w));
            let (dx, dw, db) = ops::conv_transpose2d_backward(
                &nodes[x.0].value,
                &nodes[w.0].value,
                g,
                stride,
                pad,
                want_x,
                want_w,
            )?;
            if let Some(dx) = dx {
                accumulate(nodes, x, dx);
            }
            if let Some(dw) = dw {
                accumulate(nodes, w, dw);
            }
            if let Some(b) = b {
                let shape = nodes[b.0].value.shape().to_vec();
                accumulate(nodes, b, Tensor::new(shape, db)?);
            }
        }
        Op::InstanceNorm { x, inv_std } => {
            let dx = ops::instance_norm_backward(&node.value, inv_std, g);
            accumulate(nodes, *x, dx);
        }
        &Op::LeakyRelu { x, slope } => {
            let xv = &nodes[x.0].value;
            let dx = elementwise(xv, |i| {
                if xv.data()[i] > T::zero() { g.data()[i] } else { g.data()[i] * slope }
            });
            accumulate(nodes, x, dx);
        }
        &Op::Tanh { x } => {
            let y = &node.value;
            let dx = elementwise(y, |i| g.data()[i] * (T::one() - y.data()[i] * y.data()[i]));
            accumulate(nodes, x, dx);
        }
        &Op::AvgDown2 { x } => {
            let dx = ops::avg_downsample2_backward(nodes[x.0].value.shape(), g);
            accumulate(nodes, x, dx);
        }
        &Op::Concat { a, b } => {
            let (da, db) = ops::split_channels(g, nodes[a.0].value.shape(), nodes[b.0].value.shape());
            accumulate(nodes, a, da);
            accumulate(nodes, b, db);
        }
        &Op::Add { a, b } => {
            accumulate(nodes, a, g.clone());
            accumulate(nodes, b, g.clone());
        }
        &Op::Scale { x, factor } => {
            accumulate(nodes, x, g.map(|v| v * factor));
        }
        &Op::Sum { x } => {
            let dx = Tensor::full(nodes[x.0].value.shape().to_vec(), g.data()[0]);
            accumulate(nodes, x, dx);
        }
        &Op::L1 { a, b } => {
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            let k = g.data()[0] / T::from_usize(va.numel()).unwrap();
            // subgradient 0 at a == b
            let da = elementwise(va, |i| {
                let d = va.data()[i] - vb.data()[i];
                if d > T::zero() {
                    k
                } else if d < T::zero() {
                    -k
                } else {
                    T::zero()
                }
            });
            let db = da.map(|v| -v);
            accumulate(nodes, a, da);
            accumulate(nodes, b, db);
        }
        &Op::Mse { a, b } => {
            let (va, vb) = (&nodes[a.0].value, &nodes[b.0].value);
            let k = g.data()[0] * T::from_f64_lossy(2.0) / T::from_usize(va.numel()).unwrap();
            let da = elementwise(va, |i| k * (va.data()[i] - vb.data()[i]));
            let db = da.map(|v| -v);
            accumulate(nodes, a, da);
            accumulate(nodes, b, db);
        }
        &Op::MseTarget { x, target } => {
            let vx = &nodes[x.0].value;
            let k = g.data()[0] * T::from_f64_lossy(2.0) / T::from_usize(vx.numel()).unwrap();
            let dx = elementwise(vx, |i| k * (vx.data()[i] - target));
            accumulate(nodes, x, dx);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_fn([2, 3], |i| i as f64), true);
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert!(t.grad(x).unwrap().data().iter().all(|&g| g == 1.0));
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::zeros([2]), true);
        assert!(matches!(t.backward(x), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn elementwise_values() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::new([3], vec![-1.0, 0.0, 2.0]).unwrap(), true);
        let l = t.leaky_relu(x, 0.2);
        assert_eq!(t.value(l).data(), &[-0.2, 0.0, 2.0]);
        let r = t.relu(x);
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
        let th = t.tanh(x);
        assert_eq!(t.value(th).data()[1], 0.0);
        let z = t.constant(Tensor::zeros([3]));
        let a = t.add(x, z).unwrap();
        assert_eq!(t.value(a), t.value(x));
        let bad = t.constant(Tensor::zeros([2]));
        assert!(t.add(x, bad).is_err());
    }

    #[test]
    fn loss_values() {
        let mut t = Tape::<f64>::new();
        let a = t.leaf(Tensor::new([2], vec![1.0, 3.0]).unwrap(), true);
        let b = t.constant(Tensor::new([2], vec![0.0, 1.0]).unwrap());
        let l1 = t.l1_loss(a, b).unwrap();
        let mse = t.mse_loss(a, b).unwrap();
        assert_eq!(t.value(l1).data(), &[1.5]);
        assert_eq!(t.value(mse).data(), &[2.5]);
        let same = t.mse_loss(a, a).unwrap();
        assert_eq!(t.value(same).data(), &[0.0]);
        let c = t.constant(Tensor::zeros([3]));
        assert!(t.l1_loss(a, c).is_err());
        assert!(t.mse_loss(a, c).is_err());
    }

    #[test]
    fn replay_gives_identical_grads() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::from_fn([1, 1, 4, 4], |i| (i as f64).sin()), true);
        let w = t.leaf(Tensor::from_fn([2, 1, 3, 3], |i| (i as f64 * 0.3).cos()), true);
        let y = t.conv2d(x, w, None, 1, 1).unwrap();
        let n = t.instance_norm(y, 1e-5).unwrap();
        let a = t.tanh(n);
        let l = t.mse_to(a, 0.5);
        t.backward(l).unwrap();
        let first = t.grad(w).unwrap().clone();
        t.backward(l).unwrap();
        assert_eq!(&first, t.grad(w).unwrap());
    }

    #[test]
    fn detached_input_gets_no_grad() {
        let mut t = Tape::<f64>::new();
        let x = t.leaf(Tensor::full([2], 2.0), true);
        let y = t.scale(x, 3.0);
        let d = t.detach(y);
        let s = t.sum(d);
        t.backward(s).unwrap();
        assert!(t.grad(x).is_none());
    }
}
