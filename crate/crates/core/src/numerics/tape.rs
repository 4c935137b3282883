//! Dynamically recorded reverse-mode tape over coarse tensor operations.
//!
//! Nodes are appended in evaluation order, so a single reverse sweep over the
//! node list visits every consumer before its inputs. Scalar functions whose
//! local gradient is already known (the loss family) enter the tape through
//! [`Tape::scalar_fn`].

use super::kernels::{self, ConvGeometry};
use super::Tensor;
use crate::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Square(Var),
    Exp(Var),
    Ln(Var),
    Sum(Var),
    Mean(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Stack(Vec<Var>),
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        geometry: ConvGeometry,
    },
    PixelLinear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    ScalarFn {
        inputs: Vec<Var>,
        grads: Vec<Tensor>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of one scalar root with respect to every node that needs one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Takes the gradient of `v`, or zeros of `shape` when nothing flowed.
    pub fn take_or_zeros(&mut self, v: Var, shape: &[usize]) -> Tensor {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

fn accumulate(slot: &mut Option<Tensor>, delta: Tensor) {
    match slot {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                *a += b;
            }
        }
        None => *slot = Some(delta),
    }
}

fn same_shape(a: &Tensor, b: &Tensor, what: &str) -> Result<()> {
    a.check_same_shape(b)
        .map_err(|e| Error::InvalidShape(format!("{what}: {e}")))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn zip(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        same_shape(va, vb, "elementwise op")?;
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let ng = self.needs(a) || self.needs(b);
        Ok(self.push(out, op, ng))
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let out = self.value(a).map(f);
        let ng = self.needs(a);
        self.push(out, op, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, alpha: f64) -> Var {
        self.unary(a, |x| alpha * x, Op::Scale(a, alpha))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.unary(a, |x| x * x, Op::Square(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(a, f64::exp, Op::Exp(a))
    }

    /// Natural log with inputs floored at [`super::PROB_FLOOR`].
    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(super::PROB_FLOOR).ln(), Op::Ln(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let ng = self.needs(a);
        self.push(out, Op::Sum(a), ng)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let out = Tensor::scalar(v.sum() / v.len().max(1) as f64);
        let ng = self.needs(a);
        self.push(out, Op::Mean(a), ng)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let out = super::softmax(self.value(a))?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::Softmax(a), ng))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let out = super::log_softmax(self.value(a))?;
        let ng = self.needs(a);
        Ok(self.push(out, Op::LogSoftmax(a), ng))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidShape("stack of zero tensors".into()))?;
        let inner = self.value(*first).shape().to_vec();
        let mut data = Vec::with_capacity(inner.iter().product::<usize>() * parts.len());
        for &p in parts {
            if self.value(p).shape() != inner.as_slice() {
                return Err(Error::InvalidShape(format!(
                    "stack: expected {:?}, got {:?}",
                    inner,
                    self.value(p).shape()
                )));
            }
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![parts.len()];
        shape.extend(inner);
        let ng = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Tensor::new(shape, data)?, Op::Stack(parts.to_vec()), ng))
    }

    /// Same-padded stride-1 convolution. `input` is `[H, W, Cin]`, `weight`
    /// `[k, k, Cin, Cout]` with odd `k`, `bias` `[Cout]`.
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(input).shape(),
            self.value(weight).shape(),
            self.value(bias).shape(),
        );
        if xs.len() != 3 || ws.len() != 4 || bs.len() != 1 {
            return Err(Error::InvalidShape(format!(
                "conv2d expects [H,W,C], [k,k,Cin,Cout], [Cout]; got {xs:?}, {ws:?}, {bs:?}"
            )));
        }
        if ws[0] != ws[1] || ws[0] % 2 == 0 || ws[2] != xs[2] || ws[3] != bs[0] {
            return Err(Error::InvalidShape(format!(
                "conv2d shape mismatch: input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        let geometry = ConvGeometry {
            height: xs[0],
            width: xs[1],
            in_channels: xs[2],
            out_channels: ws[3],
            kernel: ws[0],
        };
        let out = kernels::conv2d_forward(
            geometry,
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let out = Tensor::new(vec![geometry.height, geometry.width, geometry.out_channels], out)?;
        let ng = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geometry,
            },
            ng,
        ))
    }

    /// Per-pixel affine map: input `[..., D]`, weight `[K, D]`, bias `[K]`.
    pub fn pixel_linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(input).shape().to_vec(),
            self.value(weight).shape(),
            self.value(bias).shape(),
        );
        let d = *xs
            .last()
            .ok_or_else(|| Error::InvalidShape("pixel_linear on a scalar".into()))?;
        if ws.len() != 2 || ws[1] != d || bs.len() != 1 || bs[0] != ws[0] {
            return Err(Error::InvalidShape(format!(
                "pixel_linear: input {xs:?}, weight {ws:?}, bias {bs:?}"
            )));
        }
        let k = ws[0];
        let out = kernels::pixel_linear_forward(
            self.value(input).data(),
            d,
            self.value(weight).data(),
            self.value(bias).data(),
        );
        let mut shape = xs;
        *shape.last_mut().expect("non-empty") = k;
        let ng = self.needs(input) || self.needs(weight) || self.needs(bias);
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::PixelLinear {
                input,
                weight,
                bias,
            },
            ng,
        ))
    }

    /// Records a scalar `value` whose gradient w.r.t. each of `inputs` is
    /// already known.
    pub fn scalar_fn(&mut self, inputs: &[Var], value: f64, grads: Vec<Tensor>) -> Result<Var> {
        if inputs.len() != grads.len() {
            return Err(Error::InvalidShape(
                "scalar_fn needs one gradient per input".into(),
            ));
        }
        for (&v, g) in inputs.iter().zip(&grads) {
            same_shape(self.value(v), g, "scalar_fn gradient")?;
        }
        let ng = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push(
            Tensor::scalar(value),
            Op::ScalarFn {
                inputs: inputs.to_vec(),
                grads,
            },
            ng,
        ))
    }

    /// Reverse sweep from a single-element `root`.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.value(root).len() != 1 {
            return Err(Error::InvalidShape(format!(
                "backward needs a scalar root, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let send = |v: Var, delta: Tensor, grads: &mut [Option<Tensor>]| {
            if self.needs(v) {
                accumulate(&mut grads[v.0], delta);
            }
        };
        let with = |t: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
            let data = t.data().iter().zip(g.data()).map(|(&x, &gv)| f(x, gv)).collect();
            Tensor::new(t.shape().to_vec(), data).expect("shape preserved")
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                send(*a, g.clone(), grads);
                send(*b, g.clone(), grads);
            }
            Op::Sub(a, b) => {
                send(*a, g.clone(), grads);
                send(*b, g.map(|v| -v), grads);
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                send(*a, with(vb, &|y, gv| y * gv), grads);
                send(*b, with(va, &|x, gv| x * gv), grads);
            }
            Op::Scale(a, alpha) => send(*a, g.map(|v| alpha * v), grads),
            Op::Relu(a) => send(
                *a,
                with(self.value(*a), &|x, gv| if x > 0.0 { gv } else { 0.0 }),
                grads,
            ),
            Op::Square(a) => send(*a, with(self.value(*a), &|x, gv| 2.0 * x * gv), grads),
            Op::Exp(a) => send(*a, with(&node.value, &|y, gv| y * gv), grads),
            Op::Ln(a) => send(
                *a,
                with(self.value(*a), &|x, gv| {
                    if x > super::PROB_FLOOR {
                        gv / x
                    } else {
                        0.0
                    }
                }),
                grads,
            ),
            Op::Sum(a) => send(*a, Tensor::full(self.value(*a).shape(), g.item()), grads),
            Op::Mean(a) => {
                let n = self.value(*a).len().max(1) as f64;
                send(*a, Tensor::full(self.value(*a).shape(), g.item() / n), grads)
            }
            Op::Softmax(a) => {
                let c = node.value.last_dim()?;
                let mut out = node.value.clone();
                for (row, gr) in out.data_mut().chunks_mut(c).zip(g.data().chunks(c)) {
                    let dot: f64 = row.iter().zip(gr).map(|(p, gv)| p * gv).sum();
                    for (p, gv) in row.iter_mut().zip(gr) {
                        *p *= gv - dot;
                    }
                }
                send(*a, out, grads);
            }
            Op::LogSoftmax(a) => {
                let c = node.value.last_dim()?;
                let mut out = node.value.clone();
                for (row, gr) in out.data_mut().chunks_mut(c).zip(g.data().chunks(c)) {
                    let total: f64 = gr.iter().sum();
                    for (lp, gv) in row.iter_mut().zip(gr) {
                        *lp = gv - lp.exp() * total;
                    }
                }
                send(*a, out, grads);
            }
            Op::Stack(parts) => {
                let n = g.len() / parts.len();
                for (i, &p) in parts.iter().enumerate() {
                    let piece = g.data()[i * n..(i + 1) * n].to_vec();
                    send(p, Tensor::new(self.value(p).shape().to_vec(), piece)?, grads);
                }
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                geometry,
            } => {
                let (gi, gw, gb) = kernels::conv2d_backward(
                    *geometry,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    g.data(),
                    self.needs(*input),
                );
                if let Some(gi) = gi {
                    send(*input, Tensor::new(self.value(*input).shape().to_vec(), gi)?, grads);
                }
                send(*weight, Tensor::new(self.value(*weight).shape().to_vec(), gw)?, grads);
                send(*bias, Tensor::new(self.value(*bias).shape().to_vec(), gb)?, grads);
            }
            Op::PixelLinear {
                input,
                weight,
                bias,
            } => {
                let d = self.value(*input).last_dim()?;
                let (gi, gw, gb) = kernels::pixel_linear_backward(
                    self.value(*input).data(),
                    d,
                    self.value(*weight).data(),
                    g.data(),
                    self.needs(*input),
                );
                if let Some(gi) = gi {
                    send(*input, Tensor::new(self.value(*input).shape().to_vec(), gi)?, grads);
                }
                send(*weight, Tensor::new(self.value(*weight).shape().to_vec(), gw)?, grads);
                send(*bias, Tensor::new(self.value(*bias).shape().to_vec(), gb)?, grads);
            }
            Op::ScalarFn { inputs, grads: local } => {
                let up = g.item();
                for (&v, lg) in inputs.iter().zip(local) {
                    send(v, lg.map(|x| x * up), grads);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_rule() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::new(vec![2], vec![3.0, -1.0]).unwrap());
        let y = tape.mul(x, x).unwrap();
        let s = tape.sum(y);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[6.0, -2.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(2.0));
        let c = tape.constant(Tensor::scalar(5.0));
        let y = tape.mul(x, c).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 5.0);
        assert!(g.get(c).is_none());
    }

    #[test]
    fn fan_out_accumulates() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::scalar(1.5));
        let a = tape.scale(x, 2.0);
        let b = tape.square(x);
        let s = tape.add(a, b).unwrap();
        let g = tape.backward(s).unwrap();
        assert!((g.get(x).unwrap().item() - 5.0).abs() < 1e-15);
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let x = tape.leaf(Tensor::zeros(&[3]));
        assert!(tape.backward(x).is_err());
    }
}
