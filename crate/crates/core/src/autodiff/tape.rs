use std::borrow::Cow;

use rand::Rng;

use super::array::Array;
use super::kernels::{self, ConvDims};
use crate::error::{Error, Result};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Conv1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: ConvDims,
    },
    ConvTranspose1d {
        x: Var,
        w: Var,
        b: Option<Var>,
        dims: ConvDims,
    },
    AvgPool1d {
        x: Var,
        window: usize,
    },
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
        batch: usize,
    },
    Relu(Var),
    Exp(Var),
    Softmax(Var),
    LogClamp {
        x: Var,
        floor: f64,
    },
    Dropout {
        x: Var,
        mask: Vec<f64>,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    Reshape(Var),
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
}

struct Node<'a> {
    value: Cow<'a, Array>,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run record of a forward computation.
///
/// Nodes are appended in evaluation order, so every node's inputs precede
/// it and a reverse sweep visits consumers before producers. Parameters
/// are borrowed for the tape's lifetime; a fresh tape is built per step.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of a scalar loss with respect to every differentiable node.
pub struct Gradients {
    grads: Vec<Option<Array>>,
}

impl Gradients {
    /// `None` when `var` does not influence the loss or is a constant.
    pub fn get(&self, var: Var) -> Option<&Array> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Array> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn same_shape(op: &'static str, a: &Array, b: &Array) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op,
            left: a.shape().to_vec(),
            right: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Splits a `[C, L]` or `[B, C, L]` signal into `(batch, channels, len)`.
fn signal_dims(op: &'static str, a: &Array) -> Result<(usize, usize, usize)> {
    match *a.shape() {
        [c, l] => Ok((1, c, l)),
        [b, c, l] => Ok((b, c, l)),
        _ => Err(Error::invalid(
            op,
            format!("expected [C, L] or [B, C, L] input, got {:?}", a.shape()),
        )),
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn requires(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// An owned leaf that receives a gradient.
    pub fn variable(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A borrowed leaf that receives a gradient (model parameters).
    pub fn param(&mut self, value: &'a Array) -> Var {
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            requires_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    fn conv_dims(
        &self,
        op: &'static str,
        x: Var,
        w: Var,
        b: Option<Var>,
        stride: usize,
        padding: usize,
        transposed: bool,
    ) -> Result<(ConvDims, bool)> {
        let xa = self.value(x);
        let wa = self.value(w);
        let (batch, c_in, len_in) = signal_dims(op, xa)?;
        let mismatch = || Error::Shape {
            op,
            left: xa.shape().to_vec(),
            right: wa.shape().to_vec(),
        };
        let [w0, w1, kernel] = *wa.shape() else {
            return Err(mismatch());
        };
        let (w_in, c_out) = if transposed { (w0, w1) } else { (w1, w0) };
        if w_in != c_in || kernel == 0 {
            return Err(mismatch());
        }
        if stride == 0 {
            return Err(Error::invalid(op, "stride must be at least 1"));
        }
        if let Some(b) = b {
            if self.value(b).shape() != [c_out] {
                return Err(Error::Shape {
                    op,
                    left: vec![c_out],
                    right: self.value(b).shape().to_vec(),
                });
            }
        }
        let len_out = if transposed {
            let full = (len_in.saturating_sub(1)) * stride + kernel;
            if len_in == 0 || full <= 2 * padding {
                return Err(Error::invalid(op, "output length would be empty"));
            }
            full - 2 * padding
        } else {
            if kernel > len_in + 2 * padding {
                return Err(Error::invalid(
                    op,
                    format!("kernel {kernel} exceeds padded length {}", len_in + 2 * padding),
                ));
            }
            (len_in + 2 * padding - kernel) / stride + 1
        };
        let dims = ConvDims {
            batch,
            c_in,
            c_out,
            kernel,
            stride,
            padding,
            len_in,
            len_out,
        };
        Ok((dims, xa.rank() == 2))
    }

    /// 1-D cross-correlation. `x`: `[B, C_in, L]` (or `[C_in, L]`),
    /// `w`: `[C_out, C_in, K]`, `b`: `[C_out]`.
    /// Output length is `(L + 2 * padding - K) / stride + 1`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (dims, unbatched) = self.conv_dims("conv1d", x, w, b, stride, padding, false)?;
        let out = kernels::conv1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &dims,
        );
        let shape = if unbatched {
            vec![dims.c_out, dims.len_out]
        } else {
            vec![dims.batch, dims.c_out, dims.len_out]
        };
        let req = self.requires(x) || self.requires(w) || b.is_some_and(|b| self.requires(b));
        Ok(self.push(Array::new(shape, out)?, Op::Conv1d { x, w, b, dims }, req))
    }

    /// Transposed 1-D convolution, the adjoint of [`Tape::conv1d`].
    /// `w`: `[C_in, C_out, K]`; output length is `(L - 1) * stride - 2 * padding + K`.
    pub fn conv1d_transpose(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, padding: usize) -> Result<Var> {
        let (dims, unbatched) = self.conv_dims("conv1d_transpose", x, w, b, stride, padding, true)?;
        let out = kernels::conv_transpose1d_forward(
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
            &dims,
        );
        let shape = if unbatched {
            vec![dims.c_out, dims.len_out]
        } else {
            vec![dims.batch, dims.c_out, dims.len_out]
        };
        let req = self.requires(x) || self.requires(w) || b.is_some_and(|b| self.requires(b));
        Ok(self.push(Array::new(shape, out)?, Op::ConvTranspose1d { x, w, b, dims }, req))
    }

    /// Mean over non-overlapping windows of the last axis.
    pub fn avg_pool1d(&mut self, x: Var, window: usize) -> Result<Var> {
        let xa = self.value(x);
        let Some(&len) = xa.shape().last() else {
            return Err(Error::invalid("avg_pool1d", "input must have rank >= 1"));
        };
        if window == 0 {
            return Err(Error::invalid("avg_pool1d", "window must be at least 1"));
        }
        if window > len {
            return Err(Error::invalid(
                "avg_pool1d",
                format!("window {window} larger than length {len} gives empty output"),
            ));
        }
        let out = kernels::avg_pool_forward(xa.data(), len, window);
        let mut shape = xa.shape().to_vec();
        *shape.last_mut().unwrap() = len / window;
        let req = self.requires(x);
        Ok(self.push(Array::new(shape, out)?, Op::AvgPool1d { x, window }, req))
    }

    /// Affine map `x W^T + b` with `x`: `[B, N]` (or `[N]`), `w`: `[M, N]`, `b`: `[M]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let xa = self.value(x);
        let wa = self.value(w);
        let (batch, n_in, unbatched) = match *xa.shape() {
            [n] => (1, n, true),
            [bt, n] => (bt, n, false),
            _ => {
                return Err(Error::Shape {
                    op: "linear",
                    left: xa.shape().to_vec(),
                    right: wa.shape().to_vec(),
                })
            }
        };
        let [n_out, w_in] = *wa.shape() else {
            return Err(Error::Shape {
                op: "linear",
                left: xa.shape().to_vec(),
                right: wa.shape().to_vec(),
            });
        };
        if w_in != n_in {
            return Err(Error::Shape {
                op: "linear",
                left: xa.shape().to_vec(),
                right: wa.shape().to_vec(),
            });
        }
        if let Some(b) = b {
            if self.value(b).shape() != [n_out] {
                return Err(Error::Shape {
                    op: "linear",
                    left: vec![n_out],
                    right: self.value(b).shape().to_vec(),
                });
            }
        }
        let out = kernels::linear_forward(xa.data(), wa.data(), b.map(|b| self.value(b).data()), batch, n_in, n_out);
        let shape = if unbatched { vec![n_out] } else { vec![batch, n_out] };
        let req = self.requires(x) || self.requires(w) || b.is_some_and(|b| self.requires(b));
        Ok(self.push(Array::new(shape, out)?, Op::Linear { x, w, b, batch }, req))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v.max(0.0));
        let req = self.requires(x);
        self.push(y, Op::Relu(x), req)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let y = self.value(x).map(f64::exp);
        let req = self.requires(x);
        self.push(y, Op::Exp(x), req)
    }

    /// Softmax along the last axis, stabilised by subtracting the row maximum.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xa = self.value(x);
        let len = match xa.shape().last() {
            Some(&l) if l >= 1 => l,
            _ => return Err(Error::invalid("softmax", "input length must be at least 1")),
        };
        let y = Array::new(xa.shape().to_vec(), kernels::softmax_rows(xa.data(), len))?;
        let req = self.requires(x);
        Ok(self.push(y, Op::Softmax(x), req))
    }

    /// `ln(max(x, floor))`; the gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, x: Var, floor: f64) -> Var {
        let y = self.value(x).map(|v| v.max(floor).ln());
        let req = self.requires(x);
        self.push(y, Op::LogClamp { x, floor }, req)
    }

    /// Inverted dropout: in training mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1 / (1 - p)`; in
    /// evaluation mode `x` is returned untouched and no node is recorded.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R, training: bool) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::invalid("dropout", format!("p must lie in [0, 1), got {p}")));
        }
        if !training || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let xa = self.value(x);
        let mask: Vec<f64> = (0..xa.len())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let data = xa.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let y = Array::new(xa.shape().to_vec(), data)?;
        let req = self.requires(x);
        Ok(self.push(y, Op::Dropout { x, mask }, req))
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, rec: Op) -> Result<Var> {
        let (aa, ba) = (self.value(a), self.value(b));
        same_shape(op, aa, ba)?;
        let data = aa.data().iter().zip(ba.data()).map(|(x, y)| f(*x, *y)).collect();
        let y = Array::new(aa.shape().to_vec(), data)?;
        let req = self.requires(a) || self.requires(b);
        Ok(self.push(y, rec, req))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let y = self.value(x).map(|v| v * factor);
        let req = self.requires(x);
        self.push(y, Op::Scale(x, factor), req)
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x).map(|v| v + c);
        let req = self.requires(x);
        self.push(y, Op::Offset(x), req)
    }

    pub fn square(&mut self, x: Var) -> Var {
        let y = self.value(x).map(|v| v * v);
        let req = self.requires(x);
        self.push(y, Op::Square(x), req)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        let req = self.requires(x);
        self.push(Array::scalar(s), Op::Sum(x), req)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let xa = self.value(x);
        let s = xa.data().iter().sum::<f64>() / xa.len() as f64;
        let req = self.requires(x);
        self.push(Array::scalar(s), Op::Mean(x), req)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let y = self.value(x).clone().reshape(shape.to_vec())?;
        let req = self.requires(x);
        Ok(self.push(y, Op::Reshape(x), req))
    }

    /// Collapses all axes after the first: `[B, ...] -> [B, prod(...)]`.
    pub fn flatten(&mut self, x: Var) -> Result<Var> {
        let shape = self.value(x).shape();
        let b = *shape.first().unwrap_or(&1);
        let rest: usize = shape.iter().skip(1).product();
        self.reshape(x, &[b, rest])
    }

    /// Concatenates along `axis`; all other axes must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(Error::invalid("concat", "no inputs"));
        };
        let base = self.value(first).shape().to_vec();
        if axis >= base.len() {
            return Err(Error::invalid("concat", format!("axis {axis} out of range for {base:?}")));
        }
        let mut total = 0;
        for &p in parts {
            let s = self.value(p).shape();
            let compatible = s.len() == base.len()
                && s.iter().zip(&base).enumerate().all(|(i, (a, b))| i == axis || a == b);
            if !compatible {
                return Err(Error::Shape {
                    op: "concat",
                    left: base.clone(),
                    right: s.to_vec(),
                });
            }
            total += s[axis];
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &p in parts {
                let pa = self.value(p);
                let block = pa.shape()[axis] * inner;
                data.extend_from_slice(&pa.data()[o * block..(o + 1) * block]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let req = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(
            Array::new(shape, data)?,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            req,
        ))
    }

    /// Reverse sweep from a scalar `loss`. Gradients reaching a node along
    /// several paths are summed.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if lv.len() != 1 {
            return Err(Error::NonScalarLoss(lv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Array>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array::full(lv.shape().to_vec(), 1.0));

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if node.requires_grad {
                self.propagate(i, &g, &mut grads)?;
            }
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Array>], v: Var, delta: Array) {
        if !self.requires(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot @ None => *slot = Some(delta),
        }
    }

    fn shaped(&self, like: Var, data: Vec<f64>) -> Result<Array> {
        Array::new(self.value(like).shape().to_vec(), data)
    }

    fn propagate(&self, i: usize, g: &Array, grads: &mut [Option<Array>]) -> Result<()> {
        let gd = g.data();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Conv1d { x, w, b, dims } | Op::ConvTranspose1d { x, w, b, dims } => {
                let need = (self.requires(*x), self.requires(*w), b.is_some_and(|b| self.requires(b)));
                let xd = self.value(*x).data();
                let wd = self.value(*w).data();
                let cg = if matches!(self.nodes[i].op, Op::Conv1d { .. }) {
                    kernels::conv1d_backward(xd, wd, gd, dims, need)
                } else {
                    kernels::conv_transpose1d_backward(xd, wd, gd, dims, need)
                };
                if let Some(dx) = cg.dx {
                    let a = self.shaped(*x, dx)?;
                    self.accumulate(grads, *x, a);
                }
                if let Some(dw) = cg.dw {
                    let a = self.shaped(*w, dw)?;
                    self.accumulate(grads, *w, a);
                }
                if let (Some(b), Some(db)) = (b, cg.db) {
                    self.accumulate(grads, *b, Array::from_vec(db));
                }
            }
            Op::AvgPool1d { x, window } => {
                let len = *self.value(*x).shape().last().unwrap();
                let a = self.shaped(*x, kernels::avg_pool_backward(gd, len, *window))?;
                self.accumulate(grads, *x, a);
            }
            Op::Linear { x, w, b, batch } => {
                let [n_out, n_in] = *self.value(*w).shape() else { unreachable!() };
                let need = (self.requires(*x), self.requires(*w), b.is_some_and(|b| self.requires(b)));
                let lg = kernels::linear_backward(
                    self.value(*x).data(),
                    self.value(*w).data(),
                    gd,
                    (*batch, n_in, n_out),
                    need,
                );
                if let Some(dx) = lg.dx {
                    let a = self.shaped(*x, dx)?;
                    self.accumulate(grads, *x, a);
                }
                if let Some(dw) = lg.dw {
                    let a = self.shaped(*w, dw)?;
                    self.accumulate(grads, *w, a);
                }
                if let (Some(b), Some(db)) = (b, lg.db) {
                    self.accumulate(grads, *b, Array::from_vec(db));
                }
            }
            Op::Relu(x) => {
                let xd = self.value(*x).data();
                let d = gd.iter().zip(xd).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect();
                let a = self.shaped(*x, d)?;
                self.accumulate(grads, *x, a);
            }
            Op::Exp(x) => {
                let yd = self.nodes[i].value.data();
                let d = gd.iter().zip(yd).map(|(g, y)| g * y).collect();
                let a = self.shaped(*x, d)?;
                self.accumulate(grads, *x, a);
            }
            Op::Softmax(x) => {
                let y = &self.nodes[i].value;
                let len = *y.shape().last().unwrap();
                let a = self.shaped(*x, kernels::softmax_rows_backward(y.data(), gd, len))?;
                self.accumulate(grads, *x, a);
            }
            Op::LogClamp { x, floor } => {
                let xd = self.value(*x).data();
                let d = gd.iter().zip(xd).map(|(g, v)| if *v > *floor { g / v } else { 0.0 }).collect();
                let a = self.shaped(*x, d)?;
                self.accumulate(grads, *x, a);
            }
            Op::Dropout { x, mask } => {
                let d = gd.iter().zip(mask).map(|(g, m)| g * m).collect();
                let a = self.shaped(*x, d)?;
                self.accumulate(grads, *x, a);
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.requires(*a) {
                    let bd = self.value(*b).data();
                    let d = gd.iter().zip(bd).map(|(g, v)| g * v).collect();
                    let arr = self.shaped(*a, d)?;
                    self.accumulate(grads, *a, arr);
                }
                if self.requires(*b) {
                    let ad = self.value(*a).data();
                    let d = gd.iter().zip(ad).map(|(g, v)| g * v).collect();
                    let arr = self.shaped(*b, d)?;
                    self.accumulate(grads, *b, arr);
                }
            }
            Op::Scale(x, f) => self.accumulate(grads, *x, g.map(|v| v * f)),
            Op::Offset(x) => self.accumulate(grads, *x, g.clone()),
            Op::Square(x) => {
                let xd = self.value(*x).data();
                let d = gd.iter().zip(xd).map(|(g, v)| 2.0 * g * v).collect();
                let a = self.shaped(*x, d)?;
                self.accumulate(grads, *x, a);
            }
            Op::Sum(x) => {
                let a = Array::full(self.value(*x).shape().to_vec(), g.item());
                self.accumulate(grads, *x, a);
            }
            Op::Mean(x) => {
                let xa = self.value(*x);
                let a = Array::full(xa.shape().to_vec(), g.item() / xa.len() as f64);
                self.accumulate(grads, *x, a);
            }
            Op::Reshape(x) => {
                let a = g.clone().reshape(self.value(*x).shape().to_vec())?;
                self.accumulate(grads, *x, a);
            }
            Op::Concat { parts, axis } => {
                let out_shape = self.nodes[i].value.shape();
                let outer: usize = out_shape[..*axis].iter().product();
                let inner: usize = out_shape[axis + 1..].iter().product();
                let row = out_shape[*axis] * inner;
                let mut offset = 0;
                for &p in parts {
                    let block = self.value(p).shape()[*axis] * inner;
                    if self.requires(p) {
                        let mut d = Vec::with_capacity(outer * block);
                        for o in 0..outer {
                            d.extend_from_slice(&gd[o * row + offset..o * row + offset + block]);
                        }
                        let a = self.shaped(p, d)?;
                        self.accumulate(grads, p, a);
                    }
                    offset += block;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arr(shape: &[usize], data: &[f64]) -> Array {
        Array::new(shape.to_vec(), data.to_vec()).unwrap()
    }

    #[test]
    fn conv_box_filter_on_impulse() {
        let mut t = Tape::new();
        let x = t.constant(arr(&[1, 5], &[0.0, 0.0, 1.0, 0.0, 0.0]));
        let w = t.constant(arr(&[1, 1, 3], &[1.0, 1.0, 1.0]));
        let b = t.constant(arr(&[1], &[0.0]));
        let y = t.conv1d(x, w, Some(b), 1, 0).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, 1.0, 1.0]);
        assert_eq!(t.value(y).shape(), &[1, 3]);
    }

    #[test]
    fn conv_is_cross_correlation_with_zero_padding() {
        let mut t = Tape::new();
        let x = t.constant(arr(&[1, 4], &[1.0, 2.0, 3.0, 4.0]));
        let w = t.constant(arr(&[1, 1, 3], &[1.0, 0.0, -1.0]));
        let y = t.conv1d(x, w, None, 1, 1).unwrap();
        assert_eq!(t.value(y).data(), &[-2.0, -2.0, -2.0, 3.0]);
    }

    #[test]
    fn conv_of_zeros_is_zero() {
        let mut t = Tape::new();
        let x = t.constant(Array::zeros([3, 622]));
        let w = t.constant(Array::full([4, 3, 3], 0.7));
        let y = t.conv1d(x, w, None, 1, 1).unwrap();
        assert!(t.value(y).data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn conv_shape_error_names_both_shapes() {
        let mut t = Tape::new();
        let x = t.constant(Array::zeros([2, 10]));
        let w = t.constant(Array::zeros([1, 3, 3]));
        let err = t.conv1d(x, w, None, 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 10]") && msg.contains("[1, 3, 3]"), "{msg}");
    }

    #[test]
    fn conv_rejects_kernel_longer_than_input() {
        let mut t = Tape::new();
        let x = t.constant(Array::zeros([1, 2]));
        let w = t.constant(Array::zeros([1, 1, 5]));
        assert!(t.conv1d(x, w, None, 1, 1).is_err());
        let x = t.constant(Array::zeros([1, 6]));
        let w = t.constant(Array::zeros([1, 1, 3]));
        assert!(t.conv1d(x, w, None, 0, 1).is_err());
    }

    #[test]
    fn transpose_lengths() {
        let mut t = Tape::new();
        let x = t.constant(Array::zeros([1, 8, 77]));
        let w5 = t.constant(Array::zeros([8, 8, 5]));
        let w4 = t.constant(Array::zeros([8, 1, 4]));
        let a = t.conv1d_transpose(x, w5, None, 2, 1).unwrap();
        assert_eq!(t.value(a).shape(), &[1, 8, 155]);
        let b = t.conv1d_transpose(a, w5, None, 2, 1).unwrap();
        assert_eq!(t.value(b).shape(), &[1, 8, 311]);
        let c = t.conv1d_transpose(b, w4, None, 2, 1).unwrap();
        assert_eq!(t.value(c).shape(), &[1, 1, 622]);
    }

    #[test]
    fn pooling_examples() {
        let mut t = Tape::new();
        let x = t.constant(arr(&[1, 4], &[1.0, 3.0, 5.0, 7.0]));
        let y = t.avg_pool1d(x, 2).unwrap();
        assert_eq!(t.value(y).data(), &[2.0, 6.0]);
        let c = t.constant(Array::full([2, 9], 4.5));
        let y = t.avg_pool1d(c, 4).unwrap();
        assert!(t.value(y).data().iter().all(|v| *v == 4.5));
        let x = t.constant(Array::zeros([1, 622]));
        let p1 = t.avg_pool1d(x, 2).unwrap();
        let p2 = t.avg_pool1d(p1, 2).unwrap();
        assert_eq!(t.value(p1).shape(), &[1, 311]);
        assert_eq!(t.value(p2).shape(), &[1, 155]);
        assert!(t.avg_pool1d(x, 700).is_err());
        assert!(t.avg_pool1d(x, 0).is_err());
    }

    #[test]
    fn linear_examples() {
        let mut t = Tape::new();
        let x = t.constant(Array::from_vec(vec![2.0, 3.0]));
        let w = t.constant(arr(&[1, 2], &[1.0, 1.0]));
        let b = t.constant(Array::from_vec(vec![0.0]));
        let y = t.linear(x, w, Some(b)).unwrap();
        assert_eq!(t.value(y).data(), &[5.0]);

        let eye = t.constant(arr(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
        let zb = t.constant(Array::zeros([2]));
        let y = t.linear(x, eye, Some(zb)).unwrap();
        assert_eq!(t.value(y).data(), &[2.0, 3.0]);

        let zw = t.constant(Array::zeros([3, 2]));
        let bias = t.constant(Array::from_vec(vec![1.0, -2.0, 0.5]));
        let y = t.linear(x, zw, Some(bias)).unwrap();
        assert_eq!(t.value(y).data(), &[1.0, -2.0, 0.5]);

        let bad = t.constant(Array::zeros([3, 4]));
        assert!(matches!(t.linear(x, bad, None), Err(Error::Shape { .. })));
    }

    #[test]
    fn activations() {
        let mut t = Tape::new();
        let x = t.constant(Array::from_vec(vec![-1.0, 0.0, 2.0]));
        let r = t.relu(x);
        assert_eq!(t.value(r).data(), &[0.0, 0.0, 2.0]);
        let c = t.constant(Array::full([10], 3.3));
        let s = t.softmax(c).unwrap();
        for v in t.value(s).data() {
            assert!((v - 0.1).abs() < 1e-15);
        }
        let empty = t.constant(Array::zeros([0]));
        assert!(t.softmax(empty).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = t.dropout(x, 0.5, &mut rng, false).unwrap();
        assert_eq!(d, x);
        assert!(t.dropout(x, 1.0, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_scales_survivors() {
        let mut t = Tape::new();
        let x = t.constant(Array::full([10_000], 1.0));
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let d = t.dropout(x, 0.5, &mut rng, true).unwrap();
        let v = t.value(d).data();
        assert!(v.iter().all(|&e| e == 0.0 || e == 2.0));
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - 1.0).abs() < 0.05);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.variable(Array::from_vec(vec![0.3, -2.0, 5.0]));
        let s = t.sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn relu_gradient_on_positive_inputs() {
        let mut t = Tape::new();
        let x = t.variable(Array::from_vec(vec![0.3, 2.0, 5.0]));
        let r = t.relu(x);
        let s = t.sum(r);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn reused_node_accumulates() {
        let mut t = Tape::new();
        let x = t.variable(Array::from_vec(vec![1.0, 2.0]));
        let y = t.add(x, x).unwrap();
        let z = t.mul(y, x).unwrap();
        let s = t.sum(z);
        let g = t.backward(s).unwrap();
        // s = 2 x^2, ds/dx = 4x
        assert_eq!(g.get(x).unwrap().data(), &[4.0, 8.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut t = Tape::new();
        let x = t.variable(Array::from_vec(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn constants_get_no_gradient() {
        let mut t = Tape::new();
        let x = t.variable(Array::from_vec(vec![1.0, 2.0]));
        let c = t.constant(Array::from_vec(vec![3.0, 4.0]));
        let y = t.mul(x, c).unwrap();
        let s = t.sum(y);
        let g = t.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn concat_along_channels() {
        let mut t = Tape::new();
        let a = t.variable(arr(&[2, 1, 2], &[1.0, 2.0, 3.0, 4.0]));
        let b = t.variable(arr(&[2, 2, 2], &[5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 12.0]));
        let c = t.concat(&[a, b], 1).unwrap();
        assert_eq!(t.value(c).shape(), &[2, 3, 2]);
        assert_eq!(
            t.value(c).data(),
            &[1.0, 2.0, 5.0, 6.0, 7.0, 8.0, 3.0, 4.0, 9.0, 10.0, 11.0, 12.0]
        );
        let w = t.constant(Array::new([2, 3, 2], (0..12).map(|v| v as f64).collect()).unwrap());
        let p = t.mul(c, w).unwrap();
        let s = t.sum(p);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(a).unwrap().data(), &[0.0, 1.0, 6.0, 7.0]);
        assert_eq!(g.get(b).unwrap().data(), &[2.0, 3.0, 4.0, 5.0, 8.0, 9.0, 10.0, 11.0]);
    }
}
