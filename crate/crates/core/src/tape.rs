//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation eagerly during the forward pass and
//! replays the record in reverse to accumulate gradients. Tapes are cheap and
//! short-lived: the attack loop builds a fresh tape per iteration. A tape is
//! single-threaded; independent tapes may run on separate threads.
//!
//! Gradient semantics: [`Tape::backward`] *accumulates* into each node's
//! gradient buffer. Callers that re-run backward on the same tape must call
//! [`Tape::zero_grads`] in between if they want fresh gradients.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{self, Padding};
use crate::tensor::Tensor;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

struct Node {
    values: Vec<f64>,
    shape: Vec<usize>,
    needs_grad: bool,
}

enum Op {
    Add { a: Var, b: Var, out: Var },
    Sub { a: Var, b: Var, out: Var },
    Mul { a: Var, b: Var, out: Var },
    Div { a: Var, b: Var, out: Var },
    Abs { a: Var, out: Var },
    Pow { a: Var, exponent: f64, out: Var },
    Sqrt { a: Var, out: Var },
    Neg { a: Var, out: Var },
    Scale { a: Var, factor: f64, out: Var },
    AddScalar { a: Var, out: Var },
    LnClamped { a: Var, floor: f64, out: Var },
    Sum { a: Var, out: Var },
    Mean { a: Var, out: Var },
    DotConst { a: Var, weights: Vec<f64>, out: Var },
    Select { a: Var, index: usize, out: Var },
    Reshape { a: Var, out: Var },
    Slice { a: Var, offset: usize, out: Var },
    Concat { parts: Vec<Var>, out: Var },
    Gather { a: Var, map: Vec<Option<u32>>, out: Var },
    Relu { a: Var, out: Var },
    Softmax { a: Var, out: Var },
    Conv2d { input: Var, weight: Var, bias: Option<Var>, stride: usize, padding: Padding, out: Var },
    MaxPool2 { input: Var, argmax: Vec<u32>, out: Var },
    Linear { input: Var, weight: Var, bias: Var, out: Var },
}

/// Recording tape plus value arena.
pub struct Tape {
    nodes: Vec<Node>,
    ops: Vec<Op>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            ops: Vec::new(),
            grads: Vec::new(),
        }
    }

    /// Register a tensor as a leaf value.
    pub fn input(&mut self, tensor: &Tensor, requires_grad: bool) -> Var {
        self.push_node(tensor.values().to_vec(), tensor.shape().to_vec(), requires_grad)
    }

    /// Register a tensor that never receives a gradient.
    pub fn constant(&mut self, tensor: &Tensor) -> Var {
        self.input(tensor, false)
    }

    pub fn scalar_const(&mut self, value: f64) -> Var {
        self.push_node(vec![value], vec![1], false)
    }

    fn push_node(&mut self, values: Vec<f64>, shape: Vec<usize>, needs_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        let id = self.nodes.len();
        self.nodes.push(Node {
            values,
            shape,
            needs_grad,
        });
        self.grads.push(None);
        Var(id)
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].values
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn len(&self, v: Var) -> usize {
        self.nodes[v.0].values.len()
    }

    pub fn is_scalar(&self, v: Var) -> bool {
        self.len(v) == 1
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        debug_assert!(self.is_scalar(v));
        self.nodes[v.0].values[0]
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Accumulated gradient of `v`, if backward reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            *g = None;
        }
    }

    pub fn to_tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("node shape is consistent")
    }

    // ---- elementwise -----------------------------------------------------

    fn binary_shape(&self, a: Var, b: Var, op: &str) -> Result<Vec<usize>> {
        let (la, lb) = (self.len(a), self.len(b));
        if la == lb && self.shape(a) == self.shape(b) {
            Ok(self.shape(a).to_vec())
        } else if lb == 1 {
            Ok(self.shape(a).to_vec())
        } else if la == 1 {
            Ok(self.shape(b).to_vec())
        } else {
            Err(Error::Shape(format!(
                "{op}: operands {:?} vs {:?} (only identical shapes or scalar broadcast)",
                self.shape(a),
                self.shape(b)
            )))
        }
    }

    fn binary<FV>(
        &mut self,
        a: Var,
        b: Var,
        name: &str,
        fv: FV,
        make: impl FnOnce(Var, Var, Var) -> Op,
    ) -> Result<Var>
    where
        FV: Fn(f64, f64) -> f64,
    {
        let shape = self.binary_shape(a, b, name)?;
        let (va, vb) = (&self.nodes[a.0].values, &self.nodes[b.0].values);
        let n = shape.iter().product();
        let mut out = Vec::with_capacity(n);
        for i in 0..n {
            let x = va[if va.len() == 1 { 0 } else { i }];
            let y = vb[if vb.len() == 1 { 0 } else { i }];
            out.push(fv(x, y));
        }
        let ng = self.needs_grad(a) || self.needs_grad(b);
        let out = self.push_node(out, shape, ng);
        self.ops.push(make(a, b, out));
        Ok(out)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |x, y| x + y, |a, b, out| Op::Add { a, b, out })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "sub", |x, y| x - y, |a, b, out| Op::Sub { a, b, out })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "mul", |x, y| x * y, |a, b, out| Op::Mul { a, b, out })
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "div", |x, y| x / y, |a, b, out| Op::Div { a, b, out })
    }

    fn unary<FV>(&mut self, a: Var, fv: FV, make: impl FnOnce(Var, Var) -> Op) -> Var
    where
        FV: Fn(f64) -> f64,
    {
        let values = self.nodes[a.0].values.iter().map(|&x| fv(x)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let ng = self.needs_grad(a);
        let out = self.push_node(values, shape, ng);
        self.ops.push(make(a, out));
        out
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.unary(a, f64::abs, |a, out| Op::Abs { a, out })
    }

    /// Elementwise power with a fixed exponent. Negative bases are only
    /// valid for integral exponents.
    pub fn powf(&mut self, a: Var, exponent: f64) -> Result<Var> {
        if exponent.fract() != 0.0 && self.nodes[a.0].values.iter().any(|&v| v < 0.0) {
            return Err(Error::Domain(format!(
                "pow({exponent}) of negative value"
            )));
        }
        Ok(self.unary(a, |x| x.powf(exponent), move |a, out| Op::Pow { a, exponent, out }))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        if self.nodes[a.0].values.iter().any(|&v| v < 0.0) {
            return Err(Error::Domain("sqrt of negative value".into()));
        }
        Ok(self.unary(a, f64::sqrt, |a, out| Op::Sqrt { a, out }))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(a, |x| -x, |a, out| Op::Neg { a, out })
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.unary(a, |x| factor * x, move |a, out| Op::Scale { a, factor, out })
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        self.unary(a, |x| x + offset, |a, out| Op::AddScalar { a, out })
    }

    /// `ln(max(x, floor))`; the clamp keeps log finite on near-zero inputs.
    pub fn ln_clamped(&mut self, a: Var, floor: f64) -> Var {
        self.unary(a, |x| x.max(floor).ln(), move |a, out| Op::LnClamped { a, floor, out })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), |a, out| Op::Relu { a, out })
    }

    // ---- reductions ------------------------------------------------------

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        if self.len(a) == 0 {
            return Err(Error::Domain("sum of empty tensor".into()));
        }
        let s = self.nodes[a.0].values.iter().sum();
        let ng = self.needs_grad(a);
        let out = self.push_node(vec![s], vec![1], ng);
        self.ops.push(Op::Sum { a, out });
        Ok(out)
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        if self.len(a) == 0 {
            return Err(Error::Domain("mean of empty tensor".into()));
        }
        let n = self.len(a) as f64;
        let s: f64 = self.nodes[a.0].values.iter().sum();
        let ng = self.needs_grad(a);
        let out = self.push_node(vec![s / n], vec![1], ng);
        self.ops.push(Op::Mean { a, out });
        Ok(out)
    }

    /// Weighted sum with constant weights: `sum_i w[i] * a[i]`.
    pub fn dot_const(&mut self, a: Var, weights: &[f64]) -> Result<Var> {
        if weights.len() != self.len(a) {
            return Err(Error::Shape(format!(
                "dot_const: {} weights vs {} values",
                weights.len(),
                self.len(a)
            )));
        }
        let s = self.nodes[a.0]
            .values
            .iter()
            .zip(weights)
            .map(|(x, w)| x * w)
            .sum();
        let ng = self.needs_grad(a);
        let out = self.push_node(vec![s], vec![1], ng);
        self.ops.push(Op::DotConst {
            a,
            weights: weights.to_vec(),
            out,
        });
        Ok(out)
    }

    /// Pick a single element as a scalar.
    pub fn select(&mut self, a: Var, index: usize) -> Result<Var> {
        if index >= self.len(a) {
            return Err(Error::Usage(format!(
                "select index {index} out of range for length {}",
                self.len(a)
            )));
        }
        let v = self.nodes[a.0].values[index];
        let ng = self.needs_grad(a);
        let out = self.push_node(vec![v], vec![1], ng);
        self.ops.push(Op::Select { a, index, out });
        Ok(out)
    }

    // ---- structure -------------------------------------------------------

    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        if shape.iter().product::<usize>() != self.len(a) {
            return Err(Error::Shape(format!(
                "reshape {:?} -> {:?}",
                self.shape(a),
                shape
            )));
        }
        let values = self.nodes[a.0].values.clone();
        let ng = self.needs_grad(a);
        let out = self.push_node(values, shape, ng);
        self.ops.push(Op::Reshape { a, out });
        Ok(out)
    }

    pub fn flatten(&mut self, a: Var) -> Result<Var> {
        let n = self.len(a);
        self.reshape(a, vec![n])
    }

    /// Contiguous 1-D window `a[offset .. offset + len]`.
    pub fn slice(&mut self, a: Var, offset: usize, len: usize) -> Result<Var> {
        if offset + len > self.len(a) {
            return Err(Error::Shape(format!(
                "slice {offset}..{} out of range for length {}",
                offset + len,
                self.len(a)
            )));
        }
        let values = self.nodes[a.0].values[offset..offset + len].to_vec();
        let ng = self.needs_grad(a);
        let out = self.push_node(values, vec![len], ng);
        self.ops.push(Op::Slice { a, offset, out });
        Ok(out)
    }

    /// Concatenate flattened parts into one 1-D value.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Usage("concat of zero parts".into()));
        }
        let mut values = Vec::new();
        let mut ng = false;
        for &p in parts {
            values.extend_from_slice(&self.nodes[p.0].values);
            ng |= self.needs_grad(p);
        }
        let n = values.len();
        let out = self.push_node(values, vec![n], ng);
        self.ops.push(Op::Concat {
            parts: parts.to_vec(),
            out,
        });
        Ok(out)
    }

    /// Rearrange elements: `out[k] = a[map[k]]`, or 0 where the map is `None`.
    ///
    /// Implements nearest-neighbor resizing and zero-padding placements.
    pub fn gather(&mut self, a: Var, map: Vec<Option<u32>>, out_shape: Vec<usize>) -> Result<Var> {
        if map.len() != out_shape.iter().product::<usize>() {
            return Err(Error::Shape("gather: map length vs output shape".into()));
        }
        let src = &self.nodes[a.0].values;
        if let Some(bad) = map.iter().flatten().find(|&&i| i as usize >= src.len()) {
            return Err(Error::Shape(format!(
                "gather: index {bad} out of range for length {}",
                src.len()
            )));
        }
        let values = map
            .iter()
            .map(|m| m.map_or(0.0, |i| src[i as usize]))
            .collect();
        let ng = self.needs_grad(a);
        let out = self.push_node(values, out_shape, ng);
        self.ops.push(Op::Gather { a, map, out });
        Ok(out)
    }

    // ---- neural-network ops ----------------------------------------------

    /// Stable softmax over a 1-D vector of at least two logits.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        if self.shape(a).len() != 1 || self.len(a) < 2 {
            return Err(Error::Shape(format!(
                "softmax expects a 1-D vector of length >= 2, got {:?}",
                self.shape(a)
            )));
        }
        let logits = &self.nodes[a.0].values;
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|&u| (u - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        let values: Vec<f64> = exps.iter().map(|&e| e / total).collect();
        let shape = vec![values.len()];
        let ng = self.needs_grad(a);
        let out = self.push_node(values, shape, ng);
        self.ops.push(Op::Softmax { a, out });
        Ok(out)
    }

    /// 2-D convolution over `[C_in, H, W]` with an odd square kernel
    /// `[C_out, C_in, K, K]` and same-size padding.
    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: Padding,
    ) -> Result<Var> {
        let ishape = self.shape(input).to_vec();
        let wshape = self.shape(weight).to_vec();
        if ishape.len() != 3 || wshape.len() != 4 {
            return Err(Error::Shape(format!(
                "conv2d expects input [C,H,W] and weight [O,C,K,K], got {ishape:?} and {wshape:?}"
            )));
        }
        let (cin, h, w) = (ishape[0], ishape[1], ishape[2]);
        let (cout, wc, kh, kw) = (wshape[0], wshape[1], wshape[2], wshape[3]);
        if wc != cin {
            return Err(Error::Shape(format!(
                "conv2d: kernel expects {wc} input channels, image has {cin}"
            )));
        }
        if kh != kw || kh % 2 == 0 {
            return Err(Error::Shape(format!("conv2d: kernel must be odd square, got {kh}x{kw}")));
        }
        if h < kh || w < kw {
            return Err(Error::Shape(format!(
                "conv2d: image {h}x{w} smaller than kernel {kh}x{kw}"
            )));
        }
        if stride == 0 {
            return Err(Error::Config("conv2d: stride must be >= 1".into()));
        }
        if let Some(b) = bias {
            if self.len(b) != cout {
                return Err(Error::Shape(format!(
                    "conv2d: bias length {} vs {cout} output channels",
                    self.len(b)
                )));
            }
        }
        let (values, oh, ow) = kernels::conv2d_forward(
            &self.nodes[input.0].values,
            cin,
            h,
            w,
            &self.nodes[weight.0].values,
            cout,
            kh,
            kw,
            bias.map(|b| self.nodes[b.0].values.as_slice()),
            stride,
            padding,
        );
        let ng = self.needs_grad(input)
            || self.needs_grad(weight)
            || bias.is_some_and(|b| self.needs_grad(b));
        let out = self.push_node(values, vec![cout, oh, ow], ng);
        self.ops.push(Op::Conv2d {
            input,
            weight,
            bias,
            stride,
            padding,
            out,
        });
        Ok(out)
    }

    /// 2x2 max pooling with stride 2 over `[C, H, W]`; H and W must be even.
    pub fn maxpool2(&mut self, input: Var) -> Result<Var> {
        let shape = self.shape(input).to_vec();
        if shape.len() != 3 {
            return Err(Error::Shape(format!("maxpool2 expects [C,H,W], got {shape:?}")));
        }
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::Shape(format!("maxpool2: odd spatial dims {h}x{w}")));
        }
        let (values, argmax) = kernels::maxpool2_forward(&self.nodes[input.0].values, c, h, w);
        let ng = self.needs_grad(input);
        let out = self.push_node(values, vec![c, h / 2, w / 2], ng);
        self.ops.push(Op::MaxPool2 { input, argmax, out });
        Ok(out)
    }

    /// Affine map `W x + b` over a flattened input.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let n = self.len(input);
        let wshape = self.shape(weight).to_vec();
        if self.shape(input).len() != 1 || wshape.len() != 2 {
            return Err(Error::Shape(format!(
                "linear expects 1-D input and 2-D weight, got {:?} and {wshape:?}",
                self.shape(input)
            )));
        }
        let (m, wn) = (wshape[0], wshape[1]);
        if wn != n {
            return Err(Error::Shape(format!(
                "linear: weight inner dim {wn} vs input length {n}"
            )));
        }
        if self.len(bias) != m {
            return Err(Error::Shape(format!(
                "linear: bias length {} vs {m} outputs",
                self.len(bias)
            )));
        }
        let values = kernels::linear_forward(
            &self.nodes[input.0].values,
            &self.nodes[weight.0].values,
            &self.nodes[bias.0].values,
            m,
            n,
        );
        let ng = self.needs_grad(input) || self.needs_grad(weight) || self.needs_grad(bias);
        let out = self.push_node(values, vec![m], ng);
        self.ops.push(Op::Linear {
            input,
            weight,
            bias,
            out,
        });
        Ok(out)
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar loss. Accumulates into each node's
    /// gradient; call [`Tape::zero_grads`] between sweeps for fresh values.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.is_scalar(loss) {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut t: Vec<Option<Vec<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        t[loss.0] = Some(vec![1.0]);

        for op in self.ops.iter().rev() {
            step_backward(&self.nodes, op, &mut t);
        }

        for (slot, transient) in self.grads.iter_mut().zip(t.into_iter()) {
            if let Some(g) = transient {
                match slot {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(&g) {
                            *a += v;
                        }
                    }
                    None => *slot = Some(g),
                }
            }
        }
        Ok(())
    }
}

fn slot_mut<'a>(t: &'a mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'a mut [f64]> {
    if !nodes[v.0].needs_grad {
        return None;
    }
    let n = nodes[v.0].values.len();
    Some(t[v.0].get_or_insert_with(|| vec![0.0; n]).as_mut_slice())
}

fn step_backward(nodes: &[Node], op: &Op, t: &mut [Option<Vec<f64>>]) {
    // Helper: pull the output gradient; absent means this op is off the
    // differentiation path.
    macro_rules! with_gout {
        ($out:expr, $body:expr) => {{
            if let Some(gout) = t[$out.0].take() {
                #[allow(clippy::redundant_closure_call)]
                ($body)(&gout);
                t[$out.0] = Some(gout);
            }
        }};
    }

    // Broadcast-aware accumulation for binary ops: `factor(i)` multiplies the
    // output gradient before it lands on operand `v`.
    fn acc_binary(
        nodes: &[Node],
        t: &mut [Option<Vec<f64>>],
        v: Var,
        gout: &[f64],
        factor: impl Fn(usize) -> f64,
    ) {
        let vlen = nodes[v.0].values.len();
        if let Some(gv) = slot_mut(t, nodes, v) {
            if vlen == 1 && gout.len() > 1 {
                let mut acc = 0.0;
                for (i, g) in gout.iter().enumerate() {
                    acc += g * factor(i);
                }
                gv[0] += acc;
            } else {
                for (i, g) in gout.iter().enumerate() {
                    gv[i] += g * factor(i);
                }
            }
        }
    }

    match op {
        Op::Add { a, b, out } => with_gout!(out, |g: &[f64]| {
            acc_binary(nodes, t, *a, g, |_| 1.0);
            acc_binary(nodes, t, *b, g, |_| 1.0);
        }),
        Op::Sub { a, b, out } => with_gout!(out, |g: &[f64]| {
            acc_binary(nodes, t, *a, g, |_| 1.0);
            acc_binary(nodes, t, *b, g, |_| -1.0);
        }),
        Op::Mul { a, b, out } => with_gout!(out, |g: &[f64]| {
            let (va, vb) = (&nodes[a.0].values, &nodes[b.0].values);
            acc_binary(nodes, t, *a, g, |i| vb[if vb.len() == 1 { 0 } else { i }]);
            acc_binary(nodes, t, *b, g, |i| va[if va.len() == 1 { 0 } else { i }]);
        }),
        Op::Div { a, b, out } => with_gout!(out, |g: &[f64]| {
            let (va, vb) = (&nodes[a.0].values, &nodes[b.0].values);
            let bv = |i: usize| vb[if vb.len() == 1 { 0 } else { i }];
            let av = |i: usize| va[if va.len() == 1 { 0 } else { i }];
            acc_binary(nodes, t, *a, g, |i| 1.0 / bv(i));
            acc_binary(nodes, t, *b, g, |i| -av(i) / (bv(i) * bv(i)));
        }),
        Op::Abs { a, out } => with_gout!(out, |g: &[f64]| {
            let va = &nodes[a.0].values;
            acc_binary(nodes, t, *a, g, |i| sign(va[i]));
        }),
        Op::Pow { a, exponent, out } => with_gout!(out, |g: &[f64]| {
            let va = &nodes[a.0].values;
            let k = *exponent;
            acc_binary(nodes, t, *a, g, |i| k * va[i].powf(k - 1.0));
        }),
        Op::Sqrt { a, out } => with_gout!(out, |g: &[f64]| {
            let vo = &nodes[out.0].values;
            acc_binary(nodes, t, *a, g, |i| 0.5 / vo[i]);
        }),
        Op::Neg { a, out } => with_gout!(out, |g: &[f64]| {
            acc_binary(nodes, t, *a, g, |_| -1.0);
        }),
        Op::Scale { a, factor, out } => with_gout!(out, |g: &[f64]| {
            acc_binary(nodes, t, *a, g, |_| *factor);
        }),
        Op::AddScalar { a, out } => with_gout!(out, |g: &[f64]| {
            acc_binary(nodes, t, *a, g, |_| 1.0);
        }),
        Op::LnClamped { a, floor, out } => with_gout!(out, |g: &[f64]| {
            let va = &nodes[a.0].values;
            acc_binary(nodes, t, *a, g, |i| if va[i] > *floor { 1.0 / va[i] } else { 0.0 });
        }),
        Op::Relu { a, out } => with_gout!(out, |g: &[f64]| {
            let va = &nodes[a.0].values;
            acc_binary(nodes, t, *a, g, |i| if va[i] > 0.0 { 1.0 } else { 0.0 });
        }),
        Op::Sum { a, out } => with_gout!(out, |g: &[f64]| {
            let g0 = g[0];
            if let Some(ga) = slot_mut(t, nodes, *a) {
                for v in ga.iter_mut() {
                    *v += g0;
                }
            }
        }),
        Op::Mean { a, out } => with_gout!(out, |g: &[f64]| {
            let n = nodes[a.0].values.len() as f64;
            let g0 = g[0] / n;
            if let Some(ga) = slot_mut(t, nodes, *a) {
                for v in ga.iter_mut() {
                    *v += g0;
                }
            }
        }),
        Op::DotConst { a, weights, out } => with_gout!(out, |g: &[f64]| {
            let g0 = g[0];
            if let Some(ga) = slot_mut(t, nodes, *a) {
                for (v, w) in ga.iter_mut().zip(weights) {
                    *v += g0 * w;
                }
            }
        }),
        Op::Select { a, index, out } => with_gout!(out, |g: &[f64]| {
            let g0 = g[0];
            if let Some(ga) = slot_mut(t, nodes, *a) {
                ga[*index] += g0;
            }
        }),
        Op::Reshape { a, out } => with_gout!(out, |g: &[f64]| {
            if let Some(ga) = slot_mut(t, nodes, *a) {
                for (v, gi) in ga.iter_mut().zip(g) {
                    *v += gi;
                }
            }
        }),
        Op::Slice { a, offset, out } => with_gout!(out, |g: &[f64]| {
            if let Some(ga) = slot_mut(t, nodes, *a) {
                for (v, gi) in ga[*offset..*offset + g.len()].iter_mut().zip(g) {
                    *v += gi;
                }
            }
        }),
        Op::Concat { parts, out } => with_gout!(out, |g: &[f64]| {
            let mut offset = 0;
            for &p in parts {
                let n = nodes[p.0].values.len();
                if let Some(gp) = slot_mut(t, nodes, p) {
                    for (v, gi) in gp.iter_mut().zip(&g[offset..offset + n]) {
                        *v += gi;
                    }
                }
                offset += n;
            }
        }),
        Op::Gather { a, map, out } => with_gout!(out, |g: &[f64]| {
            if let Some(ga) = slot_mut(t, nodes, *a) {
                for (m, gi) in map.iter().zip(g) {
                    if let Some(src) = m {
                        ga[*src as usize] += gi;
                    }
                }
            }
        }),
        Op::Softmax { a, out } => with_gout!(out, |g: &[f64]| {
            let y = &nodes[out.0].values;
            let dot: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
            if let Some(ga) = slot_mut(t, nodes, *a) {
                for ((v, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                    *v += yi * (gi - dot);
                }
            }
        }),
        Op::MaxPool2 { input, argmax, out } => with_gout!(out, |g: &[f64]| {
            if let Some(gi) = slot_mut(t, nodes, *input) {
                for (src, gv) in argmax.iter().zip(g) {
                    gi[*src as usize] += gv;
                }
            }
        }),
        Op::Linear { input, weight, bias, out } => with_gout!(out, |g: &[f64]| {
            let x = &nodes[input.0].values;
            let wgt = &nodes[weight.0].values;
            let (m, n) = (nodes[out.0].values.len(), x.len());
            if nodes[input.0].needs_grad {
                let dx = kernels::linear_backward_input(wgt, g, m, n);
                if let Some(gi) = slot_mut(t, nodes, *input) {
                    for (v, d) in gi.iter_mut().zip(&dx) {
                        *v += d;
                    }
                }
            }
            if let Some(gw) = slot_mut(t, nodes, *weight) {
                for (row, gv) in g.iter().enumerate() {
                    let wrow = &mut gw[row * n..(row + 1) * n];
                    for (wv, xv) in wrow.iter_mut().zip(x) {
                        *wv += gv * xv;
                    }
                }
            }
            if let Some(gb) = slot_mut(t, nodes, *bias) {
                for (v, gv) in gb.iter_mut().zip(g) {
                    *v += gv;
                }
            }
        }),
        Op::Conv2d { input, weight, bias, stride, padding, out } => with_gout!(out, |g: &[f64]| {
            let ishape = &nodes[input.0].shape;
            let wshape = &nodes[weight.0].shape;
            let oshape = &nodes[out.0].shape;
            let (di, dw, db) = kernels::conv2d_backward(
                &nodes[input.0].values,
                ishape[0],
                ishape[1],
                ishape[2],
                &nodes[weight.0].values,
                wshape[0],
                wshape[2],
                wshape[3],
                *stride,
                *padding,
                g,
                oshape[1],
                oshape[2],
                nodes[input.0].needs_grad,
                nodes[weight.0].needs_grad,
                bias.is_some_and(|b| nodes[b.0].needs_grad),
            );
            if let (Some(d), Some(gi)) = (di, slot_mut(t, nodes, *input)) {
                for (v, dv) in gi.iter_mut().zip(&d) {
                    *v += dv;
                }
            }
            if let (Some(d), Some(gw)) = (dw, slot_mut(t, nodes, *weight)) {
                for (v, dv) in gw.iter_mut().zip(&d) {
                    *v += dv;
                }
            }
            if let (Some(d), Some(b)) = (db, *bias) {
                if let Some(gb) = slot_mut(t, nodes, b) {
                    for (v, dv) in gb.iter_mut().zip(&d) {
                        *v += dv;
                    }
                }
            }
        }),
    }
}

// ---- finite-difference validation -----------------------------------------

/// Default step for central finite differences.
pub const DEFAULT_FD_EPS: f64 = 1e-4;

/// Outcome of comparing a tape gradient against central finite differences.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub tape_at_worst: f64,
    pub fd_at_worst: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Compare the tape gradient of a scalar-valued function against central
/// finite differences at one point.
///
/// Relative error is measured per coordinate against the larger of the two
/// gradient vectors' infinity norms, so near-cancelled coordinates do not
/// dominate: a genuinely wrong formula produces deviations on the order of
/// the gradient scale, which this metric flags at any coordinate.
///
/// `f` must be deterministic. Coordinates are probed in parallel; the report
/// is independent of thread scheduling.
pub fn grad_check<F>(f: F, input: &Tensor, eps: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, Var) -> Result<Var> + Sync,
{
    let eval = |point: &Tensor, with_grad: bool| -> Result<(f64, Option<Vec<f64>>)> {
        let mut tape = Tape::new();
        let x = tape.input(point, with_grad);
        let y = f(&mut tape, x)?;
        if !tape.is_scalar(y) {
            return Err(Error::Usage("grad_check requires a scalar-valued function".into()));
        }
        let value = tape.scalar_value(y);
        if !value.is_finite() {
            return Err(Error::Domain("non-finite value during grad check".into()));
        }
        if with_grad {
            tape.backward(y)?;
            let g = tape
                .grad(x)
                .ok_or_else(|| Error::Usage("function does not depend on its input".into()))?
                .to_vec();
            Ok((value, Some(g)))
        } else {
            Ok((value, None))
        }
    };

    let (_, tape_grad) = eval(input, true)?;
    let tape_grad = tape_grad.expect("gradient requested");

    let fd: Vec<f64> = (0..input.len())
        .into_par_iter()
        .map(|i| {
            let mut plus = input.clone();
            plus.values_mut()[i] += eps;
            let mut minus = input.clone();
            minus.values_mut()[i] -= eps;
            let fp = eval(&plus, false)?.0;
            let fm = eval(&minus, false)?.0;
            Ok((fp - fm) / (2.0 * eps))
        })
        .collect::<Result<Vec<f64>>>()?;

    let inf_norm = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let scale = inf_norm(&tape_grad).max(inf_norm(&fd)).max(1e-6);

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst_index: 0,
        tape_at_worst: tape_grad.first().copied().unwrap_or(0.0),
        fd_at_worst: fd.first().copied().unwrap_or(0.0),
    };
    for (i, (&g, &d)) in tape_grad.iter().zip(&fd).enumerate() {
        let e = (g - d).abs() / scale;
        if e > report.max_rel_err {
            report.max_rel_err = e;
            report.worst_index = i;
            report.tape_at_worst = g;
            report.fd_at_worst = d;
        }
    }
    Ok(report)
}
