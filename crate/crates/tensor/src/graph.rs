//! Operation tape and reverse-mode accumulation.
//!
//! A [`Graph`] records each forward operation together with what its
//! vector-Jacobian product needs. [`Graph::gradients`] walks the tape once in
//! reverse and consumes it; a second call reports [`TensorError::StaleTape`].

use crate::error::{shape_err, Result, TensorError};
use crate::ops::{self, Activation, BinaryOp, Broadcast, ConvSpec};
use crate::param::{Gradients, ParamId, ParamStore};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T> {
    Constant,
    Param(ParamId),
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        spec: ConvSpec,
    },
    MaxPool2 {
        x: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool {
        x: Var,
    },
    Dense {
        x: Var,
        w: Var,
        b: Var,
    },
    Activate {
        x: Var,
        kind: Activation,
    },
    Concat {
        xs: Vec<Var>,
    },
    Binary {
        a: Var,
        b: Var,
        op: BinaryOp,
        broadcast: Broadcast,
    },
    PixelShuffle {
        x: Var,
        r: usize,
    },
    Scale {
        x: Var,
        factor: T,
    },
    Sum {
        x: Var,
    },
    Mse {
        x: Var,
        target: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    needs_grad: bool,
}

pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    spent: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            spent: false,
        }
    }

    /// Drops the recorded tape so the graph can record a fresh forward pass.
    pub fn clear(&mut self) {
        self.nodes.clear();
        self.spent = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of `v`. Values are released by [`Graph::gradients`].
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        debug_assert!(
            value.all_finite() || !self.inputs_finite(&op),
            "non-finite output from finite inputs"
        );
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn inputs_finite(&self, op: &Op<T>) -> bool {
        let ok = |v: &Var| self.nodes[v.0].value.all_finite();
        match op {
            Op::Constant | Op::Param(_) => false,
            Op::Conv2d { x, w, b, .. } | Op::Dense { x, w, b } => ok(x) && ok(w) && ok(b),
            Op::MaxPool2 { x, .. }
            | Op::GlobalAvgPool { x }
            | Op::Activate { x, .. }
            | Op::PixelShuffle { x, .. }
            | Op::Scale { x, .. }
            | Op::Sum { x } => ok(x),
            Op::Concat { xs } => xs.iter().all(ok),
            Op::Binary { a, b, .. } => ok(a) && ok(b),
            Op::Mse { x, target } => ok(x) && target.all_finite(),
        }
    }

    /// Records a value that gradients do not flow into.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Records the current value of a stored parameter.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.push(store.get(id).value.clone(), Op::Param(id), true)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, spec: ConvSpec) -> Result<Var> {
        let y = ops::conv2d(self.value(x), self.value(w), self.value(b), &spec)?;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(y, Op::Conv2d { x, w, b, spec }, ng))
    }

    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let (y, argmax) = ops::max_pool2(self.value(x))?;
        let ng = self.needs(x);
        Ok(self.push(y, Op::MaxPool2 { x, argmax }, ng))
    }

    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let y = ops::global_avg_pool(self.value(x))?;
        let ng = self.needs(x);
        Ok(self.push(y, Op::GlobalAvgPool { x }, ng))
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let y = ops::dense(self.value(x), self.value(w), self.value(b))?;
        let ng = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(y, Op::Dense { x, w, b }, ng))
    }

    pub fn activate(&mut self, x: Var, kind: Activation) -> Var {
        if kind == Activation::Linear {
            return x;
        }
        let y = ops::activate(self.value(x), kind);
        let ng = self.needs(x);
        self.push(y, Op::Activate { x, kind }, ng)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.activate(x, Activation::Relu)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.activate(x, Activation::Sigmoid)
    }

    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.len() == 1 {
            return Ok(xs[0]);
        }
        let vals: Vec<&Tensor<T>> = xs.iter().map(|&v| self.value(v)).collect();
        let y = ops::concat_channels(&vals)?;
        let ng = xs.iter().any(|&v| self.needs(v));
        Ok(self.push(y, Op::Concat { xs: xs.to_vec() }, ng))
    }

    pub fn elementwise(
        &mut self,
        a: Var,
        b: Var,
        op: BinaryOp,
        broadcast: Broadcast,
    ) -> Result<Var> {
        let y = ops::elementwise(self.value(a), self.value(b), op, broadcast)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(
            y,
            Op::Binary {
                a,
                b,
                op,
                broadcast,
            },
            ng,
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryOp::Mul, Broadcast::None)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, BinaryOp::Add, Broadcast::None)
    }

    /// `a[B,C,H,W] * s[B,C]`, each channel plane scaled by its scalar.
    pub fn mul_channels(&mut self, a: Var, s: Var) -> Result<Var> {
        self.elementwise(a, s, BinaryOp::Mul, Broadcast::ChannelScalar)
    }

    pub fn pixel_shuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let y = ops::pixel_shuffle(self.value(x), r)?;
        let ng = self.needs(x);
        Ok(self.push(y, Op::PixelShuffle { x, r }, ng))
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let y = self.value(x).map(|v| v * factor);
        let ng = self.needs(x);
        self.push(y, Op::Scale { x, factor }, ng)
    }

    /// Sum of all elements, as a one-element tensor.
    pub fn sum(&mut self, x: Var) -> Var {
        let y = Tensor::scalar(self.value(x).sum());
        let ng = self.needs(x);
        self.push(y, Op::Sum { x }, ng)
    }

    /// Mean squared difference between `x` and a fixed target.
    pub fn mse(&mut self, x: Var, target: Tensor<T>) -> Result<Var> {
        let xv = self.value(x);
        if xv.shape() != target.shape() {
            return shape_err(
                "mse",
                format!("{:?} vs target {:?}", xv.shape(), target.shape()),
            );
        }
        let n = T::from_usize(xv.len().max(1)).unwrap();
        let s: T = xv
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        let ng = self.needs(x);
        Ok(self.push(Tensor::scalar(s / n), Op::Mse { x, target }, ng))
    }

    /// Reverse-mode pass from a scalar `loss`, returning parameter gradients.
    ///
    /// Consumes the tape: forward values are released as the walk proceeds.
    pub fn gradients(&mut self, loss: Var) -> Result<Gradients<T>> {
        if self.spent {
            return Err(TensorError::StaleTape);
        }
        if self.nodes[loss.0].value.len() != 1 {
            return Err(TensorError::NonScalarLoss(
                self.nodes[loss.0].value.shape().to_vec(),
            ));
        }
        self.spent = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.nodes[loss.0].value.shape(), T::one()));
        let num_params = self
            .nodes
            .iter()
            .filter_map(|n| match n.op {
                Op::Param(id) => Some(id.0 + 1),
                _ => None,
            })
            .max()
            .unwrap_or(0);
        let mut out = Gradients::empty(num_params);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let send = |v: Var, d: Tensor<T>, grads: &mut Vec<Option<Tensor<T>>>| {
                accumulate(&mut grads[v.0], d);
            };
            let val = |v: Var| &self.nodes[v.0].value;
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => out.add(*id, g),
                Op::Conv2d { x, w, b, spec } => {
                    let (dx, dw, db) =
                        ops::conv2d_backward(val(*x), val(*w), val(*b), spec, &g, self.needs(*x))?;
                    if let Some(dx) = dx {
                        send(*x, dx, &mut grads);
                    }
                    if self.needs(*w) {
                        send(*w, dw, &mut grads);
                    }
                    if self.needs(*b) {
                        send(*b, db, &mut grads);
                    }
                }
                Op::MaxPool2 { x, argmax } => {
                    let dx = ops::max_pool2_backward(val(*x).shape(), argmax, &g);
                    send(*x, dx, &mut grads);
                }
                Op::GlobalAvgPool { x } => {
                    let dx = ops::global_avg_pool_backward(val(*x).shape(), &g);
                    send(*x, dx, &mut grads);
                }
                Op::Dense { x, w, b } => {
                    let (dx, dw, db) = ops::dense_backward(val(*x), val(*w), &g, self.needs(*x));
                    if let Some(dx) = dx {
                        send(*x, dx, &mut grads);
                    }
                    if self.needs(*w) {
                        send(*w, dw, &mut grads);
                    }
                    if self.needs(*b) {
                        send(*b, db, &mut grads);
                    }
                }
                Op::Activate { x, kind } => {
                    let dx = ops::activate_backward(val(*x), &node.value, *kind, &g);
                    send(*x, dx, &mut grads);
                }
                Op::Concat { xs } => {
                    let chans: Vec<usize> = xs.iter().map(|&v| val(v).shape()[1]).collect();
                    for (&v, d) in xs.iter().zip(ops::split_channels(&g, &chans)?) {
                        if self.needs(v) {
                            send(v, d, &mut grads);
                        }
                    }
                }
                Op::Binary {
                    a,
                    b,
                    op,
                    broadcast,
                } => {
                    let (da, db) = ops::elementwise_backward(val(*a), val(*b), *op, *broadcast, &g);
                    if self.needs(*a) {
                        send(*a, da, &mut grads);
                    }
                    if self.needs(*b) {
                        send(*b, db, &mut grads);
                    }
                }
                Op::PixelShuffle { x, r } => {
                    let dx = ops::pixel_unshuffle(&g, *r)?;
                    send(*x, dx, &mut grads);
                }
                Op::Scale { x, factor } => {
                    let f = *factor;
                    send(*x, g.map(|v| v * f), &mut grads);
                }
                Op::Sum { x } => {
                    let s = g.data()[0];
                    send(*x, Tensor::full(val(*x).shape(), s), &mut grads);
                }
                Op::Mse { x, target } => {
                    let xv = val(*x);
                    let k = g.data()[0] * T::from_f64_lossy(2.0)
                        / T::from_usize(xv.len().max(1)).unwrap();
                    let d = Tensor::new(
                        xv.shape(),
                        xv.data()
                            .iter()
                            .zip(target.data())
                            .map(|(&a, &b)| k * (a - b))
                            .collect(),
                    )?;
                    send(*x, d, &mut grads);
                }
            }
            // Nothing later in the walk reads this node's own value.
            self.nodes[i].value = Tensor::zeros(&[0]);
        }
        Ok(out)
    }

    /// Zeroes `store`'s gradients and fills them from a backward pass from `loss`.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        let grads = self.gradients(loss)?;
        store.zero_grad();
        store.accumulate(&grads);
        Ok(())
    }
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, d: Tensor<T>) {
    match slot {
        Some(acc) => {
            for (a, &v) in acc.data_mut().iter_mut().zip(d.data()) {
                *a += v;
            }
        }
        None => *slot = Some(d),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_sum_gradient_is_input() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::<f64>::new(&[3], vec![0.5, -1.0, 2.0]).unwrap());
        let unused = store.add("unused", Tensor::full(&[2], 3.0));
        store.get_mut(unused).grad = Tensor::full(&[2], 9.0);
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        let x = g.constant(Tensor::new(&[3], vec![1.0, 2.0, 3.0]).unwrap());
        let p = g.mul(wv, x).unwrap();
        let loss = g.sum(p);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad.data(), &[1.0, 2.0, 3.0]);
        assert_eq!(store.get(unused).grad.data(), &[0.0, 0.0]);
    }

    #[test]
    fn second_backward_is_stale() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::<f64>::scalar(1.0));
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        let loss = g.sum(wv);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(g.backward(loss, &mut store), Err(TensorError::StaleTape));
        g.clear();
        let wv = g.param(&store, w);
        let loss = g.sum(wv);
        assert!(g.backward(loss, &mut store).is_ok());
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::<f64>::zeros(&[2]));
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        assert!(matches!(
            g.gradients(wv),
            Err(TensorError::NonScalarLoss(_))
        ));
    }

    #[test]
    fn reused_value_accumulates() {
        let mut store = ParamStore::new();
        let w = store.add("w", Tensor::<f64>::scalar(3.0));
        let mut g = Graph::new();
        let wv = g.param(&store, w);
        let sq = g.mul(wv, wv).unwrap();
        let loss = g.sum(sq);
        g.backward(loss, &mut store).unwrap();
        assert_eq!(store.get(w).grad.data(), &[6.0]);
    }
}
