//! The multi-scale network: residual blocks with wide activation and
//! channel attention, local and global dense groups, a pooled global skip
//! and an overscaling reconstruction head.

mod config;

use std::sync::Arc;

use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::image::resample::{Filter, Resize2d};
use crate::image::Image;
use crate::params::ParamStore;
use crate::rng;
use crate::scale::Scale;
use crate::tensor::{Real, Shape, Tensor};

pub use config::{Head, ModelConfig};

/// One learnable unit of the layout.
#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    /// Weight-normalized convolution stored as `{name}.v` (out, in, k, k),
    /// `{name}.g` and `{name}.b` (1, out, 1, 1).
    Conv {
        name: String,
        cin: usize,
        cout: usize,
        k: usize,
    },
    /// Scalar gate stored as a (1, 1, 1, 1) tensor.
    Gate { name: String },
}

fn conv_layer(name: String, cin: usize, cout: usize, k: usize) -> Layer {
    Layer::Conv { name, cin, cout, k }
}

fn gate_layer(name: String) -> Layer {
    Layer::Gate { name }
}

/// Every learnable layer in construction order.
pub fn layout(cfg: &ModelConfig) -> Vec<Layer> {
    let c = cfg.base_channels;
    let mut out = vec![conv_layer("shallow".into(), 3, c, 3)];
    for d in 0..cfg.num_ldgs {
        if cfg.sc_in_gdg && d > 0 {
            out.push(conv_layer(format!("gdg.merge{d}"), (d + 1) * c, c, 1));
        }
        for k in 0..cfg.rbs_per_ldg {
            if cfg.sc_in_ldg && k > 0 {
                out.push(conv_layer(format!("ldg{d}.merge{k}"), (k + 1) * c, c, 1));
            }
            let p = format!("ldg{d}.rb{k}");
            out.push(conv_layer(format!("{p}.expand"), c, cfg.wide_channels(), 1));
            out.push(conv_layer(
                format!("{p}.reduce"),
                cfg.wide_channels(),
                cfg.lowrank_channels(),
                1,
            ));
            out.push(conv_layer(format!("{p}.conv"), cfg.lowrank_channels(), c, 3));
            out.push(conv_layer(format!("{p}.se.fc1"), c, cfg.se_channels(), 1));
            out.push(conv_layer(format!("{p}.se.fc2"), cfg.se_channels(), c, 1));
            out.push(gate_layer(format!("{p}.lambda_o")));
            out.push(gate_layer(format!("{p}.lambda_i")));
        }
    }
    if cfg.sc_in_gdg {
        out.push(conv_layer("gdg.fuse".into(), cfg.num_ldgs * c, c, 1));
    }
    out.push(conv_layer("skip.conv".into(), c, c, 1));
    out.push(gate_layer("skip.lambda0".into()));
    out.push(gate_layer("skip.lambda1".into()));
    let q = cfg.shuffle_factor() as usize;
    out.push(conv_layer("osm.up".into(), c, 3 * q * q, 3));
    out.push(conv_layer("osm.refine".into(), 3, 3, 3));
    out
}

/// Names and shapes of every parameter tensor, in store order.
pub fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Shape)> {
    let mut out = Vec::new();
    for layer in layout(cfg) {
        match layer {
            Layer::Conv { name, cin, cout, k } => {
                out.push((format!("{name}.v"), Shape::new(cout, cin, k, k)));
                out.push((format!("{name}.g"), Shape::new(1, cout, 1, 1)));
                out.push((format!("{name}.b"), Shape::new(1, cout, 1, 1)));
            }
            Layer::Gate { name } => out.push((name, Shape::scalar())),
        }
    }
    out
}

/// Closed-form number of learnable scalars.
pub fn param_count(cfg: &ModelConfig) -> usize {
    let conv = |i: usize, o: usize, k: usize| o * i * k * k + 2 * o;
    let c = cfg.base_channels;
    let (wide, low, se) = (cfg.wide_channels(), cfg.lowrank_channels(), cfg.se_channels());
    let (d, k) = (cfg.num_ldgs, cfg.rbs_per_ldg);
    let rb = conv(c, wide, 1) + conv(wide, low, 1) + conv(low, c, 3) + conv(c, se, 1)
        + conv(se, c, 1)
        + 2;
    // merging j+1 maps of C channels: (j+1)·C² + 2C, summed over j = 1..m−1
    let merges = |m: usize| {
        if m < 2 {
            0
        } else {
            c * c * ((m + 2) * (m - 1) / 2) + 2 * c * (m - 1)
        }
    };
    let ldg = k * rb + if cfg.sc_in_ldg { merges(k) } else { 0 };
    let gdg = d * ldg
        + if cfg.sc_in_gdg {
            merges(d) + conv(d * c, c, 1)
        } else {
            0
        };
    let q = cfg.shuffle_factor() as usize;
    conv(3, c, 3) + gdg + conv(c, c, 1) + 2 + conv(c, 3 * q * q, 3) + conv(3, 3, 3)
}

/// Fresh parameters: He-uniform directions, gains equal to the direction
/// norms (so each effective weight starts equal to its direction), zero
/// biases and unit gates. Each tensor draws from its own named stream.
pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut store = ParamStore::new();
    for layer in layout(cfg) {
        match layer {
            Layer::Conv { name, cin, cout, k } => {
                let fan_in = cin * k * k;
                let bound = (6.0 / fan_in as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                let mut r = rng::stream(seed, &format!("init:{name}"), 0);
                let shape = Shape::new(cout, cin, k, k);
                let v: Vec<T> = (0..shape.numel())
                    .map(|_| T::from_f64(dist.sample(&mut r)))
                    .collect();
                let norms: Vec<T> = v
                    .chunks_exact(fan_in)
                    .map(|row| T::from_f64(row.iter().map(|a| a.as_f64().powi(2)).sum::<f64>().sqrt()))
                    .collect();
                store.insert(format!("{name}.v"), Tensor::from_vec(shape, v)?)?;
                store.insert(
                    format!("{name}.g"),
                    Tensor::from_vec(Shape::new(1, cout, 1, 1), norms)?,
                )?;
                store.insert(format!("{name}.b"), Tensor::zeros(Shape::new(1, cout, 1, 1)))?;
            }
            Layer::Gate { name } => store.insert(name, Tensor::scalar(T::one()))?,
        }
    }
    Ok(store)
}

/// Check that `store` holds exactly the tensors `cfg` implies. The error
/// names the first offending entry.
pub fn check_params<T: Real>(cfg: &ModelConfig, store: &ParamStore<T>) -> Result<()> {
    let expected = param_shapes(cfg);
    for (name, shape) in &expected {
        match store.get(name) {
            None => return Err(Error::config(format!("missing parameter `{name}`"))),
            Some(e) if e.value.shape() != *shape => {
                return Err(Error::config(format!(
                    "parameter `{name}` has shape {}, expected {shape}",
                    e.value.shape()
                )))
            }
            Some(_) => {}
        }
    }
    if let Some(extra) = store.names().find(|n| !expected.iter().any(|(e, _)| e == n)) {
        return Err(Error::config(format!("unexpected parameter `{extra}`")));
    }
    Ok(())
}

/// Weight-normalized convolution `name` applied to `x`.
pub fn conv<T: Real>(g: &mut Graph<T>, p: &ParamStore<T>, name: &str, x: Var) -> Result<Var> {
    let v = g.param(p, &format!("{name}.v"))?;
    let gain = g.param(p, &format!("{name}.g"))?;
    let b = g.param(p, &format!("{name}.b"))?;
    let w = g.weight_norm(v, gain)?;
    g.conv2d(x, w, Some(b))
}

fn expect_channels<T: Real>(g: &Graph<T>, x: Var, c: usize, what: &str) -> Result<()> {
    let s = g.shape(x);
    if s.c != c {
        return Err(Error::config(format!("{what}: expected {c} channels, got {s}")));
    }
    Ok(())
}

/// `λ_o · SE(WA(x)) + λ_i · x` for the block under `prefix`.
pub fn residual_block<T: Real>(
    g: &mut Graph<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    prefix: &str,
    x: Var,
) -> Result<Var> {
    expect_channels(g, x, cfg.base_channels, prefix)?;
    let t = conv(g, p, &format!("{prefix}.expand"), x)?;
    let t = g.relu(t);
    let t = conv(g, p, &format!("{prefix}.reduce"), t)?;
    let t = conv(g, p, &format!("{prefix}.conv"), t)?;

    let s = g.gap(t);
    let s = conv(g, p, &format!("{prefix}.se.fc1"), s)?;
    let s = g.relu(s);
    let s = conv(g, p, &format!("{prefix}.se.fc2"), s)?;
    let s = g.sigmoid(s);
    let t = g.mul_channel(t, s)?;

    let lo = g.param(p, &format!("{prefix}.lambda_o"))?;
    let li = g.param(p, &format!("{prefix}.lambda_i"))?;
    let a = g.gate(lo, t)?;
    let b = g.gate(li, x)?;
    g.add(a, b)
}

/// Local dense group `d`.
pub fn ldg_forward<T: Real>(
    g: &mut Graph<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    d: usize,
    x: Var,
) -> Result<Var> {
    expect_channels(g, x, cfg.base_channels, "ldg input")?;
    let mut seen = vec![x];
    let mut last = x;
    for k in 0..cfg.rbs_per_ldg {
        let input = if cfg.sc_in_ldg && k > 0 {
            let cat = g.concat(&seen)?;
            conv(g, p, &format!("ldg{d}.merge{k}"), cat)?
        } else {
            last
        };
        last = residual_block(g, p, cfg, &format!("ldg{d}.rb{k}"), input)?;
        seen.push(last);
    }
    Ok(last)
}

/// Global dense group over the shallow features `f0`.
pub fn gdg_forward<T: Real>(
    g: &mut Graph<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    f0: Var,
) -> Result<Var> {
    expect_channels(g, f0, cfg.base_channels, "gdg input")?;
    let mut seen = vec![f0];
    let mut last = f0;
    for d in 0..cfg.num_ldgs {
        let input = if cfg.sc_in_gdg && d > 0 {
            let cat = g.concat(&seen)?;
            conv(g, p, &format!("gdg.merge{d}"), cat)?
        } else {
            last
        };
        last = ldg_forward(g, p, cfg, d, input)?;
        seen.push(last);
    }
    if cfg.sc_in_gdg {
        let cat = g.concat(&seen[1..])?;
        conv(g, p, "gdg.fuse", cat)
    } else {
        Ok(last)
    }
}

/// `λ_0 · f_D + λ_1 · relu(conv1×1(GAP(shallow)))`, the pooled term
/// broadcast over every position.
pub fn global_skip<T: Real>(
    g: &mut Graph<T>,
    p: &ParamStore<T>,
    f_d: Var,
    shallow: Var,
) -> Result<Var> {
    let (a, b) = (g.shape(f_d), g.shape(shallow));
    if (a.n, a.c, a.h, a.w) != (b.n, b.c, b.h, b.w) {
        return Err(Error::config(format!(
            "global skip: features {a} do not match shallow map {b}"
        )));
    }
    let pooled = g.gap(shallow);
    let pooled = conv(g, p, "skip.conv", pooled)?;
    let pooled = g.relu(pooled);
    let l0 = g.param(p, "skip.lambda0")?;
    let l1 = g.param(p, "skip.lambda1")?;
    let main = g.gate(l0, f_d)?;
    let pooled = g.gate(l1, pooled)?;
    g.add_channel(main, pooled)
}

fn resize_to<T: Real>(g: &mut Graph<T>, x: Var, filter: Filter, h: usize, w: usize) -> Result<Var> {
    let s = g.shape(x);
    if (s.h, s.w) == (h, w) {
        return Ok(x);
    }
    g.resize(x, Arc::new(Resize2d::new(filter, s.h, s.w, h, w)))
}

/// Head output before the final resize: the refined overscaled map
/// (N, 3, q·H, q·W).
fn overscaled<T: Real>(g: &mut Graph<T>, p: &ParamStore<T>, cfg: &ModelConfig, h: Var) -> Result<Var> {
    let q = cfg.shuffle_factor() as usize;
    let up = conv(g, p, "osm.up", h)?;
    let hr = g.pixelshuffle(up, q)?;
    conv(g, p, "osm.refine", hr)
}

fn down_filter(cfg: &ModelConfig) -> Filter {
    match cfg.head {
        Head::OsmBilinear => Filter::Bilinear,
        Head::OsmBicubic | Head::PixelShuffle => Filter::Bicubic,
    }
}

/// Canonical ×N reconstruction: the refined overscaled map resized down to
/// N·H plus a bicubic upscale of the input.
pub fn osm_forward<T: Real>(
    g: &mut Graph<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    h: Var,
    lr: Var,
) -> Result<Var> {
    if cfg.overscale_factor < cfg.max_scale {
        return Err(Error::config(format!(
            "overscale factor {} is below the maximum scale {}",
            cfg.overscale_factor, cfg.max_scale
        )));
    }
    let s = g.shape(lr);
    let n = cfg.max_scale as usize;
    let refined = overscaled(g, p, cfg, h)?;
    let refined = resize_to(g, refined, down_filter(cfg), n * s.h, n * s.w)?;
    let naive = resize_to(g, lr, Filter::Bicubic, n * s.h, n * s.w)?;
    g.add(refined, naive)
}

/// Full forward pass on an (N, 3, H, W) batch. Returns one unclamped
/// output per requested scale, in the order given.
pub fn overnet_forward<T: Real>(
    g: &mut Graph<T>,
    p: &ParamStore<T>,
    cfg: &ModelConfig,
    lr: Var,
    scales: &[Scale],
) -> Result<Vec<(Scale, Var)>> {
    if let Some(s) = scales.iter().find(|s| s.exceeds(cfg.max_scale)) {
        return Err(Error::ScaleOverflow {
            requested: s.to_string(),
            max: cfg.max_scale,
        });
    }
    if let Some(s) = scales.iter().find(|s| s.num() <= s.den()) {
        return Err(Error::usage(format!("scale {s} must exceed 1")));
    }
    expect_channels(g, lr, 3, "input image")?;
    let ls = g.shape(lr);
    let shallow = conv(g, p, "shallow", lr)?;
    let f_d = gdg_forward(g, p, cfg, shallow)?;
    let h = global_skip(g, p, f_d, shallow)?;

    let mut out = Vec::with_capacity(scales.len());
    if cfg.direct_scale_head {
        let refined = overscaled(g, p, cfg, h)?;
        for &s in scales {
            let (oh, ow) = (s.apply(ls.h), s.apply(ls.w));
            let r = resize_to(g, refined, down_filter(cfg), oh, ow)?;
            let naive = resize_to(g, lr, Filter::Bicubic, oh, ow)?;
            out.push((s, g.add(r, naive)?));
        }
    } else {
        let canonical = osm_forward(g, p, cfg, h, lr)?;
        for &s in scales {
            let v = resize_to(g, canonical, Filter::Bicubic, s.apply(ls.h), s.apply(ls.w))?;
            out.push((s, v));
        }
    }
    Ok(out)
}

/// Inference on a single image: forward at every scale, clamp to `[0, 1]`.
pub fn super_resolve(
    cfg: &ModelConfig,
    p: &ParamStore<f32>,
    lr: &Image,
    scales: &[Scale],
) -> Result<Vec<(Scale, Image)>> {
    if lr.channels() != 3 {
        return Err(Error::usage(format!(
            "input must have 3 channels, got {}",
            lr.channels()
        )));
    }
    let mut g = Graph::new();
    let x = g.constant(lr.to_tensor());
    let outs = overnet_forward(&mut g, p, cfg, x, scales)?;
    outs.into_iter()
        .map(|(s, v)| {
            let mut img = Image::from_tensor(g.value(v), 0)?;
            img.clamp01();
            Ok((s, img))
        })
        .collect()
}

#[cfg(test)]
mod tests;
