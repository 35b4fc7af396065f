//! Tape-based reverse-mode differentiation over [`Tensor`] values.
//!
//! Nodes are appended in evaluation order, so the tape is already a
//! topological order and `backward` walks it once in reverse. Leaf gradients
//! accumulate across `backward` calls until [`Graph::zero_grad`].

use crate::error::{invalid_arg, Result};
use crate::ops::conv::{conv2d_backward, conv2d_forward};
use crate::ops::resize::ResizePlan;
use crate::tensor::{Real, Tensor};

/// Handle to a node on a [`Graph`].
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
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        dilation: usize,
        stride: usize,
    },
    Elu(Var),
    Relu(Var),
    Clip {
        input: Var,
        lo: T,
        hi: T,
    },
    Resize {
        input: Var,
        plan: ResizePlan,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Reshape(Var),
    Add(Var, Var),
    Mul(Var, Var),
    Sum(Var),
    WeightedL1 {
        a: Var,
        b: Var,
        weights: Vec<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    requires_grad: bool,
    op: Op<T>,
}

/// Recorded computation: values plus the operations that produced them.
#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    /// A constant leaf.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.nodes[v.0].grad.take()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, parents: &[Var]) -> Var {
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        dilation: usize,
        stride: usize,
    ) -> Result<Var> {
        let out = conv2d_forward(
            self.value(input),
            self.value(kernel),
            self.value(bias),
            dilation,
            stride,
        )?;
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernel,
                bias,
                dilation,
                stride,
            },
            &[input, kernel, bias],
        ))
    }

    /// `x` for `x > 0`, `exp(x) - 1` otherwise.
    pub fn elu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .map(|v| if v > T::zero() { v } else { v.exp_m1() });
        self.push(out, Op::Elu(x), &[x])
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(T::zero()));
        self.push(out, Op::Relu(x), &[x])
    }

    /// Elementwise clamp to `[lo, hi]`; the gradient is zero outside the open interval.
    pub fn clip(&mut self, x: Var, lo: T, hi: T) -> Result<Var> {
        if lo >= hi {
            return Err(invalid_arg!("clip bounds must satisfy lo < hi"));
        }
        let out = self.value(x).map(|v| v.max(lo).min(hi));
        Ok(self.push(out, Op::Clip { input: x, lo, hi }, &[x]))
    }

    pub fn resize(&mut self, x: Var, out_hw: (usize, usize)) -> Result<Var> {
        let [_, _, h, w] = self.value(x).dims4()?;
        let plan = ResizePlan::new((h, w), out_hw)?;
        let out = plan.forward(self.value(x))?;
        Ok(self.push(out, Op::Resize { input: x, plan }, &[x]))
    }

    pub fn upscale2x(&mut self, x: Var) -> Result<Var> {
        let [_, _, h, w] = self.value(x).dims4()?;
        self.resize(x, (2 * h, 2 * w))
    }

    /// `input[B, in] * weight[out, in]^T + bias[out]`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (&[batch, fan_in], &[fan_out, w_in]) = (x.shape(), w.shape()) else {
            return Err(invalid_arg!(
                "linear expects 2-D input and weight, got {:?} and {:?}",
                x.shape(),
                w.shape()
            ));
        };
        if fan_in != w_in || b.shape() != [fan_out] {
            return Err(invalid_arg!(
                "linear shape mismatch: input {:?}, weight {:?}, bias {:?}",
                x.shape(),
                w.shape(),
                b.shape()
            ));
        }
        let mut out = Vec::with_capacity(batch * fan_out);
        for _ in 0..batch {
            out.extend_from_slice(b.data());
        }
        T::gemm(
            batch,
            fan_in,
            fan_out,
            T::one(),
            x.data(),
            (fan_in as isize, 1),
            w.data(),
            (1, fan_in as isize),
            T::one(),
            &mut out,
            (fan_out as isize, 1),
        );
        let out = Tensor::new(&[batch, fan_out], out)?;
        Ok(self.push(
            out,
            Op::Linear {
                input,
                weight,
                bias,
            },
            &[input, weight, bias],
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.push(out, Op::Reshape(x), &[x]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        Ok(self.push(out, Op::Add(a, b), &[a, b]))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x * y)
            .collect();
        let out = Tensor::new(self.value(a).shape(), data)?;
        Ok(self.push(out, Op::Mul(a, b), &[a, b]))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.push(out, Op::Sum(x), &[x])
    }

    /// `sum_i w[i mod P] * |a_i - b_i| / numel`, with `P = weights.len()`.
    ///
    /// The weight pattern repeats over the leading dimensions, so a per-pixel
    /// map of an `H x W` plane applies to every sample and channel.
    pub fn weighted_l1(&mut self, a: Var, b: Var, weights: Vec<T>) -> Result<Var> {
        self.same_shape(a, b, "weighted_l1")?;
        let n = self.value(a).numel();
        if weights.is_empty() || !n.is_multiple_of(weights.len()) {
            return Err(invalid_arg!(
                "weight pattern of length {} does not tile {n} elements",
                weights.len()
            ));
        }
        let mut acc = T::zero();
        for (chunk_a, chunk_b) in self
            .value(a)
            .data()
            .chunks_exact(weights.len())
            .zip(self.value(b).data().chunks_exact(weights.len()))
        {
            for ((&x, &y), &w) in chunk_a.iter().zip(chunk_b).zip(&weights) {
                acc += w * (x - y).abs();
            }
        }
        let out = Tensor::scalar(acc / T::lit(n as f64));
        Ok(self.push(out, Op::WeightedL1 { a, b, weights }, &[a, b]))
    }

    /// Mean absolute difference between two equally shaped tensors.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        self.weighted_l1(a, b, vec![T::one()])
    }

    fn same_shape(&self, a: Var, b: Var, op: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(invalid_arg!(
                "{op}: shapes {:?} and {:?} differ",
                self.value(a).shape(),
                self.value(b).shape()
            ));
        }
        Ok(())
    }

    fn accumulate(&mut self, v: Var, g: Tensor<T>) {
        let node = &mut self.nodes[v.0];
        if !node.requires_grad {
            return;
        }
        match node.grad.as_mut() {
            Some(existing) => existing.add_assign(&g),
            None => node.grad = Some(g),
        }
    }

    /// Propagates `d(root)/d(node)` to every leaf that requires a gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(invalid_arg!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            ));
        }
        for n in &mut self.nodes[..=root.0] {
            if !matches!(n.op, Op::Leaf) {
                n.grad = None;
            }
        }
        let seed = Tensor::full(self.value(root).shape(), T::one());
        self.accumulate(root, seed);

        for i in (0..=root.0).rev() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(g) = self.nodes[i].grad.take() else {
                continue;
            };
            for (parent, pg) in self.vjp(i, &g)? {
                self.accumulate(parent, pg);
            }
        }
        Ok(())
    }

    /// Vector-Jacobian products of node `i` for each parent that needs one.
    fn vjp(&self, i: usize, g: &Tensor<T>) -> Result<Vec<(Var, Tensor<T>)>> {
        let node = &self.nodes[i];
        let needs = |v: Var| self.nodes[v.0].requires_grad;
        let mut out = Vec::with_capacity(3);
        match &node.op {
            Op::Leaf => {}
            &Op::Conv2d {
                input,
                kernel,
                bias,
                dilation,
                stride,
            } => {
                let grads = conv2d_backward(
                    self.value(input),
                    self.value(kernel),
                    self.value(bias),
                    dilation,
                    stride,
                    g,
                    [needs(input), needs(kernel), needs(bias)],
                )?;
                out.extend(grads.input.map(|t| (input, t)));
                out.extend(grads.kernel.map(|t| (kernel, t)));
                out.extend(grads.bias.map(|t| (bias, t)));
            }
            &Op::Elu(x) => {
                let data = zip_map(self.value(x), g, |v, gv| {
                    if v > T::zero() {
                        gv
                    } else {
                        gv * v.exp()
                    }
                });
                out.push((x, data));
            }
            &Op::Relu(x) => {
                let data = zip_map(self.value(x), g, |v, gv| {
                    if v > T::zero() {
                        gv
                    } else {
                        T::zero()
                    }
                });
                out.push((x, data));
            }
            &Op::Clip { input, lo, hi } => {
                let data = zip_map(self.value(input), g, |v, gv| {
                    if v > lo && v < hi {
                        gv
                    } else {
                        T::zero()
                    }
                });
                out.push((input, data));
            }
            Op::Resize { input, plan } => out.push((*input, plan.backward(g)?)),
            &Op::Linear {
                input,
                weight,
                bias,
            } => {
                let (x, w) = (self.value(input), self.value(weight));
                let (batch, fan_in) = (x.shape()[0], x.shape()[1]);
                let fan_out = w.shape()[0];
                if needs(input) {
                    let mut dx = vec![T::zero(); batch * fan_in];
                    T::gemm(
                        batch,
                        fan_out,
                        fan_in,
                        T::one(),
                        g.data(),
                        (fan_out as isize, 1),
                        w.data(),
                        (fan_in as isize, 1),
                        T::zero(),
                        &mut dx,
                        (fan_in as isize, 1),
                    );
                    out.push((input, Tensor::new(x.shape(), dx)?));
                }
                if needs(weight) {
                    let mut dw = vec![T::zero(); fan_out * fan_in];
                    T::gemm(
                        fan_out,
                        batch,
                        fan_in,
                        T::one(),
                        g.data(),
                        (1, fan_out as isize),
                        x.data(),
                        (fan_in as isize, 1),
                        T::zero(),
                        &mut dw,
                        (fan_in as isize, 1),
                    );
                    out.push((weight, Tensor::new(w.shape(), dw)?));
                }
                if needs(bias) {
                    let mut db = vec![T::zero(); fan_out];
                    for row in g.data().chunks_exact(fan_out) {
                        for (acc, &v) in db.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    out.push((bias, Tensor::new(&[fan_out], db)?));
                }
            }
            &Op::Reshape(x) => {
                out.push((x, g.clone().reshape(self.value(x).shape())?));
            }
            &Op::Add(a, b) => {
                out.push((a, g.clone()));
                out.push((b, g.clone()));
            }
            &Op::Mul(a, b) => {
                out.push((a, zip_map(self.value(b), g, |v, gv| v * gv)));
                out.push((b, zip_map(self.value(a), g, |v, gv| v * gv)));
            }
            &Op::Sum(x) => {
                out.push((x, Tensor::full(self.value(x).shape(), g.data()[0])));
            }
            Op::WeightedL1 { a, b, weights } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let scale = g.data()[0] / T::lit(va.numel() as f64);
                let period = weights.len();
                let da: Vec<T> = va
                    .data()
                    .iter()
                    .zip(vb.data())
                    .enumerate()
                    .map(|(idx, (&x, &y))| {
                        let d = x - y;
                        let sign = if d > T::zero() {
                            T::one()
                        } else if d < T::zero() {
                            -T::one()
                        } else {
                            T::zero()
                        };
                        sign * weights[idx % period] * scale
                    })
                    .collect();
                if needs(*b) {
                    let db: Vec<T> = da.iter().map(|&v| -v).collect();
                    out.push((*b, Tensor::new(vb.shape(), db)?));
                }
                out.push((*a, Tensor::new(va.shape(), da)?));
            }
        }
        Ok(out)
    }
}

fn zip_map<T: Real>(x: &Tensor<T>, g: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = x.data().iter().zip(g.data()).map(|(&v, &gv)| f(v, gv)).collect();
    Tensor::new(x.shape(), data).expect("gradient shape matches value shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn elu_values() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::new(&[3], vec![0.0, 2.0, -1.0]).unwrap());
        let y = g.elu(x);
        let v = g.value(y).data();
        assert_eq!(v[0], 0.0);
        assert_eq!(v[1], 2.0);
        assert!((v[2] - (-0.6321205588285577)).abs() < 1e-15);
    }

    #[test]
    fn clip_values_and_saturation_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(&[5], vec![-2.0, -1.0, 0.0, 1.0, 2.0]).unwrap());
        let y = g.clip(x, -1.0, 1.0).unwrap();
        assert_eq!(g.value(y).data(), &[-1.0, -1.0, 0.0, 1.0, 1.0]);
        let s = g.sum(y);
        g.backward(s).unwrap();
        // boundary and outside points get the zero subgradient
        assert_eq!(g.grad(x).unwrap().data(), &[0.0, 0.0, 1.0, 0.0, 0.0]);

        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::scalar(0.5));
        assert!(g.clip(x, 1.0, 1.0).is_err());
        let y = g.clip(x, -1.0, 1.0).unwrap();
        assert_eq!(g.value(y).data(), &[0.5]);
    }

    #[test]
    fn sum_gradient_is_all_ones() {
        let mut g = Graph::<f32>::new();
        let x = g.param(Tensor::from_fn(&[2, 3, 4], |i| i as f32));
        let s = g.sum(x);
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn repeated_backward_accumulates_until_reset() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::from_fn(&[4], |i| i as f64));
        let s = g.sum(x);
        g.backward(s).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 2.0));
        g.zero_grad();
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn non_scalar_root_is_rejected() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::zeros(&[2, 2]));
        let y = g.elu(x);
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn shared_leaf_sums_branch_gradients() {
        let mut g = Graph::<f64>::new();
        let x = g.param(Tensor::new(&[3], vec![-0.5, 0.3, 2.0]).unwrap());
        let a = g.elu(x);
        let b = g.mul(x, x).unwrap();
        let c = g.add(a, b).unwrap();
        let s = g.sum(c);
        g.backward(s).unwrap();
        let grad = g.grad(x).unwrap().data().to_vec();
        for (i, &v) in [-0.5f64, 0.3, 2.0].iter().enumerate() {
            let elu_d = if v > 0.0 { 1.0 } else { v.exp() };
            assert!((grad[i] - (elu_d + 2.0 * v)).abs() < 1e-15);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::<f64>::new();
        let x = g.constant(Tensor::full(&[2], 1.0));
        let w = g.param(Tensor::full(&[2], 3.0));
        let y = g.mul(x, w).unwrap();
        let s = g.sum(y);
        g.backward(s).unwrap();
        assert!(g.grad(x).is_none());
        assert_eq!(g.grad(w).unwrap().data(), &[1.0, 1.0]);
    }
}
