//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation of one forward pass. Nodes are
//! appended in evaluation order, so walking the tape backwards visits each
//! node after all of its consumers. The tape is built fresh for every
//! forward pass and dropped afterwards.

use std::sync::Arc;

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::image::resample::Resize2d;
use crate::kernels;
use crate::params::ParamStore;
use crate::tensor::{Real, Shape, Tensor};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
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
        weight: Var,
        bias: Option<Var>,
    },
    WeightNorm {
        v: Var,
        g: Var,
        norms: Vec<T>,
    },
    Relu(Var),
    Sigmoid(Var),
    Add(Var, Var),
    AddChannel {
        x: Var,
        b: Var,
    },
    MulChannel {
        x: Var,
        s: Var,
    },
    Gate {
        gate: Var,
        x: Var,
    },
    Gap(Var),
    Concat(Vec<Var>),
    PixelShuffle {
        x: Var,
        r: usize,
    },
    Resize {
        x: Var,
        plan: Arc<Resize2d>,
    },
    L1Mean {
        x: Var,
        target: Tensor<T>,
    },
    Sum(Var),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    params: IndexMap<String, Var>,
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &str, detail: String) -> Error {
    Error::config(format!("{op}: {detail}"))
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: IndexMap::new(),
            grads: Vec::new(),
        }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Record a leaf tensor.
    pub fn input(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.input(value, false)
    }

    /// Bind a named parameter as a differentiable leaf. Binding the same
    /// name twice returns the same node, so gradients from every use
    /// accumulate in one place.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let value = store.value(name)?.clone();
        let v = self.input(value, true);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> Shape {
        self.nodes[v.0].value.shape()
    }

    /// Gradient of the last backward pass with respect to a leaf.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Same-padded, stride-1 2-D convolution. `weight` is (out, in, k, k)
    /// with odd `k`; `bias` is (1, out, 1, 1).
    pub fn conv2d(&mut self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let xs = self.shape(x);
        let ws = self.shape(weight);
        if ws.h != ws.w || ws.h % 2 == 0 {
            return Err(shape_err("conv2d", format!("kernel must be square and odd, got {ws}")));
        }
        if xs.c != ws.c {
            return Err(shape_err(
                "conv2d",
                format!("input has {} channels, weight expects {}", xs.c, ws.c),
            ));
        }
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != Shape::new(1, ws.n, 1, 1) {
                return Err(shape_err("conv2d", format!("bias shape {bs} for {} outputs", ws.n)));
            }
        }
        if !self.value(x).is_finite() {
            return Err(Error::Numeric("conv2d input contains NaN or Inf".into()));
        }
        let (cin, cout, k) = (ws.c, ws.n, ws.h);
        let plane = xs.plane();
        let os = Shape::new(xs.n, cout, xs.h, xs.w);
        let mut out = Tensor::zeros(os);
        {
            let xv = self.value(x).data();
            let wv = self.value(weight).data();
            let bv = bias.map(|b| self.value(b).data());
            let od = out.data_mut();
            let mut cols = if k > 1 {
                vec![T::zero(); cin * k * k * plane]
            } else {
                Vec::new()
            };
            for n in 0..xs.n {
                let inp = &xv[n * cin * plane..(n + 1) * cin * plane];
                let on = &mut od[n * cout * plane..(n + 1) * cout * plane];
                if let Some(bv) = bv {
                    for (o, row) in on.chunks_exact_mut(plane).enumerate() {
                        row.fill(bv[o]);
                    }
                }
                if k == 1 {
                    kernels::gemm_acc(cout, cin, plane, wv, inp, on);
                } else {
                    kernels::im2col(inp, cin, xs.h, xs.w, k, &mut cols);
                    kernels::gemm_acc(cout, cin * k * k, plane, wv, &cols, on);
                }
            }
        }
        let rg = self.rg(x) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        Ok(self.push(out, Op::Conv2d { input: x, weight, bias }, rg))
    }

    /// Effective weight `g · v / ‖v‖`, the norm taken per output channel.
    /// A zero direction yields a zero weight.
    pub fn weight_norm(&mut self, v: Var, g: Var) -> Result<Var> {
        let vs = self.shape(v);
        let gs = self.shape(g);
        if gs != Shape::new(1, vs.n, 1, 1) {
            return Err(shape_err("weight_norm", format!("gain shape {gs} for direction {vs}")));
        }
        let per = vs.c * vs.plane();
        let vv = self.value(v).data();
        let gv = self.value(g).data();
        let mut out = Tensor::zeros(vs);
        let mut norms = Vec::with_capacity(vs.n);
        for o in 0..vs.n {
            let row = &vv[o * per..(o + 1) * per];
            let norm = row.iter().map(|&a| a * a).sum::<T>().sqrt();
            norms.push(norm);
            if norm > T::zero() {
                let s = gv[o] / norm;
                for (d, &a) in out.data_mut()[o * per..(o + 1) * per].iter_mut().zip(row) {
                    *d = s * a;
                }
            }
        }
        let rg = self.rg(v) || self.rg(g);
        Ok(self.push(out, Op::WeightNorm { v, g, norms }, rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|a| if a > T::zero() { a } else { T::zero() });
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|a| T::one() / (T::one() + (-a).exp()));
        let rg = self.rg(x);
        self.push(out, Op::Sigmoid(x), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(shape_err("add", format!("{sa} vs {sb}")));
        }
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    fn check_channel_operand(&self, op: &str, x: Var, b: Var) -> Result<()> {
        let (xs, bs) = (self.shape(x), self.shape(b));
        if bs.c != xs.c || bs.h != 1 || bs.w != 1 || !(bs.n == xs.n || bs.n == 1) {
            return Err(shape_err(op, format!("cannot broadcast {bs} over {xs}")));
        }
        Ok(())
    }

    /// `x + b` with `b` of shape (N or 1, C, 1, 1) broadcast spatially.
    pub fn add_channel(&mut self, x: Var, b: Var) -> Result<Var> {
        self.check_channel_operand("add_channel", x, b)?;
        let xs = self.shape(x);
        let bs = self.shape(b);
        let mut out = self.value(x).clone();
        let bv = self.value(b).data();
        for (i, plane) in out.data_mut().chunks_exact_mut(xs.plane()).enumerate() {
            let (n, c) = (i / xs.c, i % xs.c);
            let add = bv[if bs.n == 1 { c } else { n * xs.c + c }];
            plane.iter_mut().for_each(|v| *v += add);
        }
        let rg = self.rg(x) || self.rg(b);
        Ok(self.push(out, Op::AddChannel { x, b }, rg))
    }

    /// `x · s` with `s` of shape (N or 1, C, 1, 1) broadcast spatially.
    pub fn mul_channel(&mut self, x: Var, s: Var) -> Result<Var> {
        self.check_channel_operand("mul_channel", x, s)?;
        let xs = self.shape(x);
        let ss = self.shape(s);
        let mut out = self.value(x).clone();
        let sv = self.value(s).data();
        for (i, plane) in out.data_mut().chunks_exact_mut(xs.plane()).enumerate() {
            let (n, c) = (i / xs.c, i % xs.c);
            let m = sv[if ss.n == 1 { c } else { n * xs.c + c }];
            plane.iter_mut().for_each(|v| *v *= m);
        }
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(out, Op::MulChannel { x, s }, rg))
    }

    /// Multiply a tensor by a learned scalar (a (1,1,1,1) tensor).
    pub fn gate(&mut self, gate: Var, x: Var) -> Result<Var> {
        let gs = self.shape(gate);
        if gs != Shape::scalar() {
            return Err(shape_err("gate", format!("gate must be a scalar, got {gs}")));
        }
        let l = self.value(gate).item();
        let out = self.value(x).map(|a| l * a);
        let rg = self.rg(x) || self.rg(gate);
        Ok(self.push(out, Op::Gate { gate, x }, rg))
    }

    /// Global average pooling to (N, C, 1, 1).
    pub fn gap(&mut self, x: Var) -> Var {
        let xs = self.shape(x);
        let inv = T::from_f64(1.0 / xs.plane() as f64);
        let data: Vec<T> = self
            .value(x)
            .data()
            .chunks_exact(xs.plane())
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let out = Tensor::from_vec(Shape::new(xs.n, xs.c, 1, 1), data).expect("gap shape");
        let rg = self.rg(x);
        self.push(out, Op::Gap(x), rg)
    }

    /// Concatenate along channels, preserving order.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        let first = match xs.first() {
            Some(&v) => self.shape(v),
            None => return Err(Error::usage("concat of an empty list")),
        };
        let mut c_total = 0;
        for &v in xs {
            let s = self.shape(v);
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(shape_err("concat", format!("{s} does not match {first}")));
            }
            c_total += s.c;
        }
        let os = Shape::new(first.n, c_total, first.h, first.w);
        let mut data = Vec::with_capacity(os.numel());
        for n in 0..first.n {
            for &v in xs {
                let s = self.shape(v);
                let per = s.c * s.plane();
                data.extend_from_slice(&self.value(v).data()[n * per..(n + 1) * per]);
            }
        }
        let out = Tensor::from_vec(os, data)?;
        let rg = xs.iter().any(|&v| self.rg(v));
        Ok(self.push(out, Op::Concat(xs.to_vec()), rg))
    }

    /// Rearrange (N, C·r², H, W) into (N, C, H·r, W·r):
    /// `out[n, c, y, x] = in[n, c·r² + (y mod r)·r + (x mod r), y / r, x / r]`.
    pub fn pixelshuffle(&mut self, x: Var, r: usize) -> Result<Var> {
        let xs = self.shape(x);
        if r == 0 || xs.c % (r * r) != 0 {
            return Err(shape_err(
                "pixelshuffle",
                format!("{} channels not divisible by {}²", xs.c, r),
            ));
        }
        let os = Shape::new(xs.n, xs.c / (r * r), xs.h * r, xs.w * r);
        let mut out = Tensor::zeros(os);
        shuffle_apply(self.value(x).data(), xs, r, out.data_mut(), |d, s| *d = s);
        let rg = self.rg(x);
        Ok(self.push(out, Op::PixelShuffle { x, r }, rg))
    }

    /// Apply a fixed separable resize to every plane.
    pub fn resize(&mut self, x: Var, plan: Arc<Resize2d>) -> Result<Var> {
        let xs = self.shape(x);
        if (xs.h, xs.w) != plan.in_dims() {
            return Err(shape_err(
                "resize",
                format!("input {xs} does not match plan input {:?}", plan.in_dims()),
            ));
        }
        let (oh, ow) = plan.out_dims();
        let os = Shape::new(xs.n, xs.c, oh, ow);
        let mut out = Tensor::zeros(os);
        for (src, dst) in self
            .value(x)
            .data()
            .chunks_exact(xs.plane())
            .zip(out.data_mut().chunks_exact_mut(os.plane()))
        {
            plan.apply_plane(src, dst);
        }
        let rg = self.rg(x);
        Ok(self.push(out, Op::Resize { x, plan }, rg))
    }

    /// Mean absolute difference against a fixed target; returns a scalar.
    pub fn l1_mean(&mut self, x: Var, target: &Tensor<T>) -> Result<Var> {
        let xs = self.shape(x);
        if xs != target.shape() {
            return Err(shape_err("l1_mean", format!("{xs} vs target {}", target.shape())));
        }
        let total: f64 = self
            .value(x)
            .data()
            .iter()
            .zip(target.data())
            .map(|(&a, &b)| (a - b).abs().as_f64())
            .sum();
        let out = Tensor::scalar(T::from_f64(total / xs.numel() as f64));
        let rg = self.rg(x);
        Ok(self.push(
            out,
            Op::L1Mean {
                x,
                target: target.clone(),
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).data().iter().map(|v| v.as_f64()).sum();
        let rg = self.rg(x);
        self.push(Tensor::scalar(T::from_f64(total)), Op::Sum(x), rg)
    }

    /// Hash of the sign pattern at every non-differentiable point on the
    /// tape (ReLU inputs and L1 residuals). Two forward passes with equal
    /// signatures lie on the same smooth piece of the loss.
    pub fn kink_signature(&self) -> u64 {
        let mut h = Fnv::new();
        for node in &self.nodes {
            match &node.op {
                Op::Relu(x) => {
                    for &a in self.value(*x).data() {
                        h.sign(a);
                    }
                }
                Op::L1Mean { x, target } => {
                    for (&a, &b) in self.value(*x).data().iter().zip(target.data()) {
                        h.sign(a - b);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }

    /// Populate gradients of a scalar `loss` with respect to every node
    /// that requires them. Leaf gradients remain queryable via
    /// [`grad`](Self::grad).
    pub fn compute_grads(&mut self, loss: Var) -> Result<()> {
        let ls = self.shape(loss);
        if ls.numel() != 1 {
            return Err(Error::usage(format!("backward needs a scalar loss, got {ls}")));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(());
        }
        self.grads[loss.0] = Some(Tensor::scalar(T::one()));
        for i in (0..=loss.0).rev() {
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backward_node(i, &g);
            if matches!(self.nodes[i].op, Op::Leaf) {
                self.grads[i] = Some(g);
            }
        }
        Ok(())
    }

    /// Run [`compute_grads`](Self::compute_grads) and accumulate the
    /// results into the bound entries of `params`.
    pub fn backward(&mut self, loss: Var, params: &mut ParamStore<T>) -> Result<()> {
        self.compute_grads(loss)?;
        for (name, &v) in &self.params {
            match self.grads[v.0].as_ref() {
                Some(g) => params.accumulate_grad(name, g)?,
                None => {
                    let zero = Tensor::zeros(self.shape(v));
                    params.accumulate_grad(name, &zero)?;
                }
            }
        }
        Ok(())
    }

    fn acc(&mut self, v: Var) -> Option<&mut [T]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let shape = self.nodes[v.0].value.shape();
        Some(
            self.grads[v.0]
                .get_or_insert_with(|| Tensor::zeros(shape))
                .data_mut(),
        )
    }

    fn backward_node(&mut self, i: usize, g: &Tensor<T>) {
        // Inputs always precede node `i`, so temporarily moving the op out
        // lets us borrow node values while writing input gradients.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Conv2d { input, weight, bias } => self.conv2d_backward(*input, *weight, *bias, g),
            Op::WeightNorm { v, g: gain, norms } => {
                let vs = self.shape(*v);
                let per = vs.c * vs.plane();
                let vv = self.value(*v).data().to_vec();
                let gv = self.value(*gain).data().to_vec();
                let gd = g.data();
                // d/dg = <gw, v>/‖v‖,  d/dv = g/‖v‖ · (gw − v·<gw, v>/‖v‖²)
                let mut dots = vec![T::zero(); vs.n];
                for o in 0..vs.n {
                    let r = o * per..(o + 1) * per;
                    dots[o] = vv[r.clone()].iter().zip(&gd[r]).map(|(&a, &b)| a * b).sum();
                }
                if let Some(dg) = self.acc(*gain) {
                    for o in 0..vs.n {
                        if norms[o] > T::zero() {
                            dg[o] += dots[o] / norms[o];
                        }
                    }
                }
                if let Some(dv) = self.acc(*v) {
                    for o in 0..vs.n {
                        let n = norms[o];
                        if n > T::zero() {
                            let s = gv[o] / n;
                            let proj = dots[o] / (n * n);
                            for j in o * per..(o + 1) * per {
                                dv[j] += s * (gd[j] - vv[j] * proj);
                            }
                        }
                    }
                }
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data().to_vec();
                if let Some(dx) = self.acc(*x) {
                    for ((d, &a), &gg) in dx.iter_mut().zip(&xv).zip(g.data()) {
                        if a > T::zero() {
                            *d += gg;
                        }
                    }
                }
            }
            Op::Sigmoid(x) => {
                let yv = self.nodes[i].value.data().to_vec();
                if let Some(dx) = self.acc(*x) {
                    for ((d, &y), &gg) in dx.iter_mut().zip(&yv).zip(g.data()) {
                        *d += gg * y * (T::one() - y);
                    }
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = self.acc(v) {
                        for (d, &gg) in d.iter_mut().zip(g.data()) {
                            *d += gg;
                        }
                    }
                }
            }
            Op::AddChannel { x, b } => {
                if let Some(dx) = self.acc(*x) {
                    for (d, &gg) in dx.iter_mut().zip(g.data()) {
                        *d += gg;
                    }
                }
                let xs = self.shape(*x);
                let bn = self.shape(*b).n;
                if let Some(db) = self.acc(*b) {
                    for (p, plane) in g.data().chunks_exact(xs.plane()).enumerate() {
                        let (n, c) = (p / xs.c, p % xs.c);
                        db[if bn == 1 { c } else { n * xs.c + c }] += plane.iter().copied().sum();
                    }
                }
            }
            Op::MulChannel { x, s } => {
                let xs = self.shape(*x);
                let sn = self.shape(*s).n;
                let sv = self.value(*s).data().to_vec();
                let xv = self.value(*x).data().to_vec();
                let pl = xs.plane();
                let idx = |p: usize| {
                    let (n, c) = (p / xs.c, p % xs.c);
                    if sn == 1 {
                        c
                    } else {
                        n * xs.c + c
                    }
                };
                if let Some(dx) = self.acc(*x) {
                    for (p, (dplane, gplane)) in dx
                        .chunks_exact_mut(pl)
                        .zip(g.data().chunks_exact(pl))
                        .enumerate()
                    {
                        let m = sv[idx(p)];
                        for (d, &gg) in dplane.iter_mut().zip(gplane) {
                            *d += m * gg;
                        }
                    }
                }
                if let Some(ds) = self.acc(*s) {
                    for (p, (xplane, gplane)) in
                        xv.chunks_exact(pl).zip(g.data().chunks_exact(pl)).enumerate()
                    {
                        ds[idx(p)] += kernels::dot(xplane, gplane);
                    }
                }
            }
            Op::Gate { gate, x } => {
                let l = self.value(*gate).item();
                let xv = self.value(*x).data().to_vec();
                if let Some(dx) = self.acc(*x) {
                    for (d, &gg) in dx.iter_mut().zip(g.data()) {
                        *d += l * gg;
                    }
                }
                if let Some(dl) = self.acc(*gate) {
                    dl[0] += kernels::dot(&xv, g.data());
                }
            }
            Op::Gap(x) => {
                let pl = self.shape(*x).plane();
                let inv = T::from_f64(1.0 / pl as f64);
                if let Some(dx) = self.acc(*x) {
                    for (plane, &gg) in dx.chunks_exact_mut(pl).zip(g.data()) {
                        let v = gg * inv;
                        plane.iter_mut().for_each(|d| *d += v);
                    }
                }
            }
            Op::Concat(xs) => {
                let os = g.shape();
                let mut offset = 0;
                for &v in xs {
                    let s = self.shape(v);
                    let per = s.c * s.plane();
                    let start = offset;
                    offset += per;
                    if let Some(d) = self.acc(v) {
                        for n in 0..os.n {
                            let src = &g.data()[n * os.c * os.plane() + start..][..per];
                            for (dd, &gg) in d[n * per..(n + 1) * per].iter_mut().zip(src) {
                                *dd += gg;
                            }
                        }
                    }
                }
            }
            Op::PixelShuffle { x, r } => {
                let xs = self.shape(*x);
                if let Some(dx) = self.acc(*x) {
                    shuffle_gather(g.data(), xs, *r, dx);
                }
            }
            Op::Resize { x, plan } => {
                let xs = self.shape(*x);
                let os = g.shape();
                if let Some(dx) = self.acc(*x) {
                    for (gp, dp) in g
                        .data()
                        .chunks_exact(os.plane())
                        .zip(dx.chunks_exact_mut(xs.plane()))
                    {
                        plan.adjoint_plane_acc(gp, dp);
                    }
                }
            }
            Op::L1Mean { x, target } => {
                let scale = g.item() / T::from_f64(target.numel() as f64);
                let xv = self.value(*x).data().to_vec();
                if let Some(dx) = self.acc(*x) {
                    for ((d, &a), &b) in dx.iter_mut().zip(&xv).zip(target.data()) {
                        let diff = a - b;
                        if diff > T::zero() {
                            *d += scale;
                        } else if diff < T::zero() {
                            *d -= scale;
                        }
                    }
                }
            }
            Op::Sum(x) => {
                let gg = g.item();
                if let Some(dx) = self.acc(*x) {
                    dx.iter_mut().for_each(|d| *d += gg);
                }
            }
        }
        self.nodes[i].op = op;
    }

    fn conv2d_backward(&mut self, input: Var, weight: Var, bias: Option<Var>, g: &Tensor<T>) {
        let xs = self.shape(input);
        let ws = self.shape(weight);
        let (cin, cout, k) = (ws.c, ws.n, ws.h);
        let plane = xs.plane();
        let kk = cin * k * k;
        let gd = g.data();

        if let Some(b) = bias {
            if let Some(db) = self.acc(b) {
                for n in 0..xs.n {
                    for (o, row) in gd[n * cout * plane..(n + 1) * cout * plane]
                        .chunks_exact(plane)
                        .enumerate()
                    {
                        db[o] += row.iter().copied().sum();
                    }
                }
            }
        }

        let need_w = self.rg(weight);
        let need_x = self.rg(input);
        let mut cols = vec![T::zero(); if k > 1 { kk * plane } else { 0 }];

        if need_w {
            let xv = self.value(input).data().to_vec();
            let mut dw = vec![T::zero(); cout * kk];
            for n in 0..xs.n {
                let inp = &xv[n * cin * plane..(n + 1) * cin * plane];
                let gn = &gd[n * cout * plane..(n + 1) * cout * plane];
                if k == 1 {
                    kernels::gemm_a_bt_acc(cout, kk, plane, gn, inp, &mut dw);
                } else {
                    kernels::im2col(inp, cin, xs.h, xs.w, k, &mut cols);
                    kernels::gemm_a_bt_acc(cout, kk, plane, gn, &cols, &mut dw);
                }
            }
            let d = self.acc(weight).expect("weight requires grad");
            for (a, b) in d.iter_mut().zip(&dw) {
                *a += *b;
            }
        }

        if need_x {
            let wv = self.value(weight).data().to_vec();
            let (h, w) = (xs.h, xs.w);
            let dx = self.acc(input).expect("input requires grad");
            for n in 0..xs.n {
                let gn = &gd[n * cout * plane..(n + 1) * cout * plane];
                let dn = &mut dx[n * cin * plane..(n + 1) * cin * plane];
                if k == 1 {
                    kernels::gemm_at_b_acc(cout, cin, plane, &wv, gn, dn);
                } else {
                    cols.fill(T::zero());
                    kernels::gemm_at_b_acc(cout, kk, plane, &wv, gn, &mut cols);
                    kernels::col2im_acc(&cols, cin, h, w, k, dn);
                }
            }
        }
    }
}

/// Visit every (output, input) element pair of a pixel shuffle.
fn shuffle_apply<T: Real>(src: &[T], xs: Shape, r: usize, dst: &mut [T], f: impl Fn(&mut T, T)) {
    let oc = xs.c / (r * r);
    let (oh, ow) = (xs.h * r, xs.w * r);
    for n in 0..xs.n {
        for c in 0..oc {
            for i in 0..r {
                for j in 0..r {
                    let ci = c * r * r + i * r + j;
                    let sbase = (n * xs.c + ci) * xs.plane();
                    let dbase = (n * oc + c) * oh * ow;
                    for y in 0..xs.h {
                        let srow = &src[sbase + y * xs.w..sbase + (y + 1) * xs.w];
                        let drow = &mut dst[dbase + (y * r + i) * ow..dbase + (y * r + i + 1) * ow];
                        for (x, &s) in srow.iter().enumerate() {
                            f(&mut drow[x * r + j], s);
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`shuffle_apply`]: gather the output gradient back into
/// input order, accumulating.
fn shuffle_gather<T: Real>(gout: &[T], xs: Shape, r: usize, dx: &mut [T]) {
    let oc = xs.c / (r * r);
    let (oh, ow) = (xs.h * r, xs.w * r);
    for n in 0..xs.n {
        for c in 0..oc {
            for i in 0..r {
                for j in 0..r {
                    let ci = c * r * r + i * r + j;
                    let sbase = (n * xs.c + ci) * xs.plane();
                    let gbase = (n * oc + c) * oh * ow;
                    for y in 0..xs.h {
                        let grow = &gout[gbase + (y * r + i) * ow..gbase + (y * r + i + 1) * ow];
                        let drow = &mut dx[sbase + y * xs.w..sbase + (y + 1) * xs.w];
                        for (x, d) in drow.iter_mut().enumerate() {
                            *d += grow[x * r + j];
                        }
                    }
                }
            }
        }
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn byte(&mut self, b: u8) {
        self.0 ^= b as u64;
        self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
    }

    fn sign<T: Real>(&mut self, v: T) {
        self.byte(if v > T::zero() {
            1
        } else if v < T::zero() {
            2
        } else {
            3
        });
    }

    fn finish(&self) -> u64 {
        self.0
    }
}
