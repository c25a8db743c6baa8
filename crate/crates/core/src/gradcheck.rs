//! Central finite-difference checks of every differentiable operation and
//! of the full network, in `f64`.
//!
//! Losses are L1 against a target pushed away from the output by a random
//! signed offset, so each output element receives an upstream gradient of
//! `±1/n`. Coordinates whose `±ε` and `±2ε` evaluations cross a kink (a ReLU input
//! or L1 residual changing sign) are skipped and counted.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::image::resample::{Filter, Resize2d};
use crate::loss::multiscale_l1;
use crate::model::{self, ModelConfig};
use crate::params::ParamStore;
use crate::rng;
use crate::scale::Scale;
use crate::tensor::{Shape, Tensor};

/// Perturbation used by every check.
pub const EPS: f64 = 1e-3;

/// Acceptance bound on the worst relative error.
pub const TOLERANCE: f64 = 1e-4;

/// Gradients below this magnitude on both sides count as agreeing.
pub const NEGLIGIBLE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub worst_rel: f64,
    pub checked: usize,
    pub skipped: usize,
}

impl CheckResult {
    fn new(name: impl Into<String>) -> Self {
        CheckResult {
            name: name.into(),
            worst_rel: 0.0,
            checked: 0,
            skipped: 0,
        }
    }

    fn record(&mut self, analytic: f64, numeric: f64) {
        let scale = analytic.abs().max(numeric.abs());
        let rel = if scale < NEGLIGIBLE {
            0.0
        } else {
            (analytic - numeric).abs() / scale
        };
        self.worst_rel = self.worst_rel.max(rel);
        self.checked += 1;
    }

    fn merge(&mut self, other: &CheckResult) {
        self.worst_rel = self.worst_rel.max(other.worst_rel);
        self.checked += other.checked;
        self.skipped += other.skipped;
    }

    pub fn passed(&self) -> bool {
        self.worst_rel <= TOLERANCE && self.checked > 0
    }
}

fn random_tensor(r: &mut ChaCha8Rng, shape: Shape, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| r.random_range(lo..hi))
}

/// Target at a random signed distance of 0.5–1.5 from every output.
fn offset_target(r: &mut ChaCha8Rng, y: &Tensor<f64>) -> Tensor<f64> {
    let data = y
        .data()
        .iter()
        .map(|&v| {
            let d: f64 = r.random_range(0.5..1.5);
            if r.random_bool(0.5) {
                v + d
            } else {
                v - d
            }
        })
        .collect();
    Tensor::from_vec(y.shape(), data).expect("same shape")
}

/// Fourth-order central difference `(f(-2ε) − 8f(−ε) + 8f(ε) − f(2ε)) / 12ε`
/// at step `ε`. `None` when any evaluation leaves the kink signature `sig`.
fn central_difference(sig: u64, mut at: impl FnMut(f64) -> Result<(f64, u64)>) -> Result<Option<f64>> {
    let mut f = [0.0; 4];
    for (slot, k) in f.iter_mut().zip([-2.0, -1.0, 1.0, 2.0]) {
        let (v, s) = at(k * EPS)?;
        if s != sig {
            return Ok(None);
        }
        *slot = v;
    }
    Ok(Some((f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * EPS)))
}

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

fn eval_op(inputs: &[Tensor<f64>], build: &Build, target: &Tensor<f64>) -> Result<(f64, u64)> {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
    let y = build(&mut g, &vars)?;
    let l = g.l1_mean(y, target)?;
    Ok((g.value(l).item(), g.kink_signature()))
}

/// Check an operation on every coordinate of every input.
pub fn check_op(name: &str, mut inputs: Vec<Tensor<f64>>, seed: u64, build: &Build) -> Result<CheckResult> {
    let mut r = rng::stream(seed, &format!("gradcheck-op:{name}"), 0);
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone(), true)).collect();
    let y = build(&mut g, &vars)?;
    let target = offset_target(&mut r, g.value(y));
    let l = g.l1_mean(y, &target)?;
    g.compute_grads(l)?;
    let sig = g.kink_signature();
    let grads: Vec<Tensor<f64>> = vars
        .iter()
        .zip(&inputs)
        .map(|(&v, t)| g.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();

    let mut res = CheckResult::new(name);
    for k in 0..inputs.len() {
        for j in 0..inputs[k].numel() {
            let orig = inputs[k].data()[j];
            let numeric = central_difference(sig, |d| {
                inputs[k].data_mut()[j] = orig + d;
                eval_op(&inputs, build, &target)
            })?;
            inputs[k].data_mut()[j] = orig;
            match numeric {
                Some(n) => res.record(grads[k].data()[j], n),
                None => res.skipped += 1,
            }
        }
    }
    Ok(res)
}

fn dims(r: &mut ChaCha8Rng) -> (usize, usize, usize, usize) {
    (
        r.random_range(1..3),
        r.random_range(1..4),
        r.random_range(2..6),
        r.random_range(2..6),
    )
}

/// One randomized check of every primitive operation.
pub fn check_all_ops(seed: u64) -> Result<Vec<CheckResult>> {
    let mut r = rng::stream(seed, "gradcheck-shapes", 0);
    let mut out = Vec::new();
    let (n, c, h, w) = dims(&mut r);
    let s = Shape::new(n, c, h, w);
    let x = random_tensor(&mut r, s, -1.0, 1.0);

    for k in [1usize, 3] {
        let o = r.random_range(1..4);
        let wt = random_tensor(&mut r, Shape::new(o, c, k, k), -1.0, 1.0);
        let b = random_tensor(&mut r, Shape::new(1, o, 1, 1), -0.5, 0.5);
        out.push(check_op(&format!("conv2d_{k}x{k}"), vec![x.clone(), wt, b], seed, &|g, v| {
            g.conv2d(v[0], v[1], Some(v[2]))
        })?);
    }

    let o = r.random_range(1..4);
    let v = random_tensor(&mut r, Shape::new(o, c, 3, 3), -1.0, 1.0);
    let gain = random_tensor(&mut r, Shape::new(1, o, 1, 1), 0.5, 1.5);
    out.push(check_op("weight_norm", vec![v, gain], seed, &|g, v| g.weight_norm(v[0], v[1]))?);

    out.push(check_op("relu", vec![x.clone()], seed, &|g, v| Ok(g.relu(v[0])))?);
    out.push(check_op("sigmoid", vec![x.clone()], seed, &|g, v| Ok(g.sigmoid(v[0])))?);

    let y = random_tensor(&mut r, s, -1.0, 1.0);
    out.push(check_op("add", vec![x.clone(), y.clone()], seed, &|g, v| g.add(v[0], v[1]))?);

    let chan = random_tensor(&mut r, Shape::new(1, c, 1, 1), -1.0, 1.0);
    let per_item = random_tensor(&mut r, Shape::new(n, c, 1, 1), -1.0, 1.0);
    out.push(check_op("add_channel", vec![x.clone(), chan.clone()], seed, &|g, v| {
        g.add_channel(v[0], v[1])
    })?);
    out.push(check_op("mul_channel", vec![x.clone(), per_item], seed, &|g, v| {
        g.mul_channel(v[0], v[1])
    })?);
    out.push(check_op("mul_channel_shared", vec![x.clone(), chan], seed, &|g, v| {
        g.mul_channel(v[0], v[1])
    })?);

    let gate = Tensor::scalar(r.random_range(-1.5..1.5));
    out.push(check_op("gate", vec![gate, x.clone()], seed, &|g, v| g.gate(v[0], v[1]))?);
    out.push(check_op("gap", vec![x.clone()], seed, &|g, v| Ok(g.gap(v[0])))?);

    let c2 = r.random_range(1..4);
    let z = random_tensor(&mut r, Shape::new(n, c2, h, w), -1.0, 1.0);
    out.push(check_op("concat", vec![x.clone(), z, y], seed, &|g, v| g.concat(v))?);

    let q = r.random_range(1..4);
    let sh = random_tensor(&mut r, Shape::new(n, 3 * q * q, h, w), -1.0, 1.0);
    out.push(check_op("pixelshuffle", vec![sh], seed, &move |g, v| g.pixelshuffle(v[0], q))?);

    for (label, filter, oh, ow) in [
        ("resize_bicubic_up", Filter::Bicubic, 2 * h + 1, 3 * w),
        ("resize_bicubic_down", Filter::Bicubic, h.div_ceil(2), w.max(3) - 1),
        ("resize_bilinear", Filter::Bilinear, h + 3, w.div_ceil(2)),
    ] {
        let plan = Arc::new(Resize2d::new(filter, h, w, oh, ow));
        out.push(check_op(label, vec![x.clone()], seed, &move |g, v| g.resize(v[0], plan.clone()))?);
    }

    let t = random_tensor(&mut r, s, -1.0, 1.0);
    out.push(check_op("l1_mean", vec![x.clone()], seed, &move |g, v| g.l1_mean(v[0], &t))?);
    out.push(check_op("sum", vec![x], seed, &|g, v| Ok(g.sum(v[0])))?);
    Ok(out)
}

/// Parameters for a network check: initialization plus random biases and
/// gates away from their initial values, so no term is trivially zero.
pub fn perturbed_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<f64>> {
    let mut p = model::init_params::<f64>(cfg, seed)?;
    let mut r = rng::stream(seed, "gradcheck-params", 0);
    for (name, e) in p.iter_mut() {
        if name.ends_with(".b") {
            e.value.data_mut().iter_mut().for_each(|v| *v = r.random_range(-0.1..0.1));
        } else if name.contains("lambda") {
            e.value.fill(r.random_range(0.5..1.5));
        }
    }
    Ok(p)
}

struct NetCase {
    cfg: ModelConfig,
    lr: Tensor<f64>,
    hr: Tensor<f64>,
    scales: Vec<Scale>,
}

impl NetCase {
    fn loss(&self, p: &ParamStore<f64>) -> Result<(Graph<f64>, Var)> {
        let mut g = Graph::new();
        let x = g.constant(self.lr.clone());
        let outs = model::overnet_forward(&mut g, p, &self.cfg, x, &self.scales)?;
        let s = self.lr.shape();
        let l = multiscale_l1(&mut g, &outs, &self.hr, (s.h, s.w), &self.scales)?;
        Ok((g, l))
    }

    fn eval(&self, p: &ParamStore<f64>) -> Result<(f64, u64)> {
        let (g, l) = self.loss(p)?;
        Ok((g.value(l).item(), g.kink_signature()))
    }
}

/// Check the full network with multi-scale L1 on a small random input.
/// `per_tensor` coordinates are drawn from every parameter tensor; `None`
/// checks every coordinate.
pub fn check_network(cfg: &ModelConfig, seed: u64, lr_side: usize, per_tensor: Option<usize>) -> Result<CheckResult> {
    let mut r = rng::stream(seed, "gradcheck-net", 0);
    let n = cfg.max_scale as usize;
    let lr = random_tensor(&mut r, Shape::new(1, 3, lr_side, lr_side), 0.0, 1.0);
    let hr = random_tensor(&mut r, Shape::new(1, 3, n * lr_side, n * lr_side), 0.0, 1.0);
    let mut scales: Vec<Scale> = (2..=cfg.max_scale).map(Scale::integer).collect();
    scales.insert(0, Scale::new(3, 2)?);
    let case = NetCase {
        cfg: cfg.clone(),
        lr,
        hr,
        scales,
    };

    let mut p = perturbed_params(cfg, seed)?;
    let (mut g, l) = case.loss(&p)?;
    let sig = g.kink_signature();
    g.backward(l, &mut p)?;

    let names: Vec<String> = p.names().map(str::to_string).collect();
    let mut res = CheckResult::new(format!("network(seed={seed})"));
    for name in names {
        let numel = p.value(&name)?.numel();
        let coords: Vec<usize> = match per_tensor {
            Some(k) if k < numel => (0..k).map(|_| r.random_range(0..numel)).collect(),
            _ => (0..numel).collect(),
        };
        for j in coords {
            let analytic = p.grad(&name)?.data()[j];
            let orig = p.value(&name)?.data()[j];
            let numeric = central_difference(sig, |d| {
                p.value_mut(&name)?.data_mut()[j] = orig + d;
                case.eval(&p)
            })?;
            p.value_mut(&name)?.data_mut()[j] = orig;
            match numeric {
                Some(n) => res.record(analytic, n),
                None => res.skipped += 1,
            }
        }
    }
    Ok(res)
}

/// Every operation and the network over `seeds` seeds.
pub fn run_suite(cfg: &ModelConfig, seeds: u64, per_tensor: usize) -> Result<Vec<CheckResult>> {
    let mut ops: Vec<CheckResult> = Vec::new();
    let mut net = CheckResult::new("network");
    for seed in 0..seeds {
        for res in check_all_ops(seed)? {
            match ops.iter_mut().find(|o| o.name == res.name) {
                Some(o) => o.merge(&res),
                None => ops.push(res),
            }
        }
        net.merge(&check_network(cfg, seed, 5, Some(per_tensor))?);
    }
    ops.push(net);
    Ok(ops)
}
