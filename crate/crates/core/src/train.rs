//! Deterministic training: configuration, data preparation and the loop.
//!
//! Every random choice at step `k` is drawn from streams keyed by
//! `(seed, purpose, k)`, so a run resumed from a checkpoint at step `k`
//! continues exactly as the unbroken run would.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::adam::Adam;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::image::{degrade, sample_patch, BdOrder, DegradationKind, DegradationSpec, Image};
use crate::kv;
use crate::loss::multiscale_l1;
use crate::model::{self, ModelConfig};
use crate::params::ParamStore;
use crate::rng;
use crate::scale::{Scale, ScaleSet};
use crate::tensor::Tensor;

/// Training hyperparameters. The model configuration travels with it so a
/// single `key = value` file describes a whole run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub halve_every: u64,
    pub batch_size: usize,
    /// LR patch side; HR patches are `patch · N`.
    pub patch: usize,
    pub total_iters: u64,
    pub seed: u64,
    pub degradation: DegradationKind,
    pub blur_sigma: f64,
    pub blur_kernel: usize,
    pub noise_level: f64,
    pub bd_order: BdOrder,
    pub scales: ScaleSet,
    /// Write a checkpoint every this many steps; 0 disables.
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            halve_every: 2_000,
            batch_size: 8,
            patch: 64,
            total_iters: 2_000,
            seed: 0,
            degradation: DegradationKind::Bi,
            blur_sigma: 1.6,
            blur_kernel: 7,
            noise_level: 30.0,
            bd_order: BdOrder::DownThenBlur,
            scales: ScaleSet::integers(&[2, 3, 4]).expect("valid"),
            checkpoint_every: 0,
            log_every: 50,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            model: ModelConfig::default(),
        }
    }
}

const TRAIN_KEYS: &[&str] = &[
    "lr0",
    "halve_every",
    "batch_size",
    "patch",
    "total_iters",
    "seed",
    "degradation",
    "blur_sigma",
    "blur_kernel",
    "noise_level",
    "bd_order",
    "scales",
    "checkpoint_every",
    "log_every",
    "beta1",
    "beta2",
    "eps",
];

impl TrainConfig {
    /// Batch 64 and halving every 2·10⁵ iterations.
    pub fn paper_scale(mut self) -> Self {
        self.batch_size = 64;
        self.halve_every = 200_000;
        self.patch = 64;
        self.lr0 = 1e-3;
        self
    }

    pub fn is_key(key: &str) -> bool {
        TRAIN_KEYS.contains(&key)
    }

    /// Set one training or model field from its text form.
    pub fn set(&mut self, key: &str, raw: &str) -> Result<()> {
        match key {
            "lr0" => self.lr0 = kv::value(key, raw)?,
            "halve_every" => self.halve_every = kv::value(key, raw)?,
            "batch_size" => self.batch_size = kv::value(key, raw)?,
            "patch" => self.patch = kv::value(key, raw)?,
            "total_iters" => self.total_iters = kv::value(key, raw)?,
            "seed" => self.seed = kv::value(key, raw)?,
            "degradation" => self.degradation = raw.parse()?,
            "blur_sigma" => self.blur_sigma = kv::value(key, raw)?,
            "blur_kernel" => self.blur_kernel = kv::value(key, raw)?,
            "noise_level" => self.noise_level = kv::value(key, raw)?,
            "bd_order" => self.bd_order = raw.parse()?,
            "scales" => self.scales = raw.parse()?,
            "checkpoint_every" => self.checkpoint_every = kv::value(key, raw)?,
            "log_every" => self.log_every = kv::value(key, raw)?,
            "beta1" => self.beta1 = kv::value(key, raw)?,
            "beta2" => self.beta2 = kv::value(key, raw)?,
            "eps" => self.eps = kv::value(key, raw)?,
            _ => {
                if !self.model.set(key, raw)? {
                    return Err(Error::config(format!("unknown key `{key}`")));
                }
                if key == "max_scale" {
                    self.model.overscale_factor = self.model.max_scale + 1;
                }
            }
        }
        Ok(())
    }

    /// Apply a parsed `key = value` map on top of `self`. When the map
    /// sets `max_scale` without `overscale_factor`, the latter follows as
    /// `max_scale + 1`.
    pub fn apply(&mut self, map: &indexmap::IndexMap<String, String>) -> Result<()> {
        if let Some(v) = map.get("max_scale") {
            self.set("max_scale", v)?;
        }
        for (k, v) in map {
            if k != "max_scale" {
                self.set(k, v)?;
            }
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        cfg.apply(&kv::parse(text)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Training keys only; the model is stored separately in checkpoints.
    pub fn train_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr0", self.lr0.to_string()),
            ("halve_every", self.halve_every.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("patch", self.patch.to_string()),
            ("total_iters", self.total_iters.to_string()),
            ("seed", self.seed.to_string()),
            ("degradation", self.degradation.to_string()),
            ("blur_sigma", self.blur_sigma.to_string()),
            ("blur_kernel", self.blur_kernel.to_string()),
            ("noise_level", self.noise_level.to_string()),
            ("bd_order", self.bd_order.to_string()),
            ("scales", self.scales.to_string()),
            ("checkpoint_every", self.checkpoint_every.to_string()),
            ("log_every", self.log_every.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("eps", self.eps.to_string()),
        ]
    }

    /// Model and training keys in one block.
    pub fn to_text(&self) -> String {
        let mut pairs = self.model.to_pairs();
        pairs.extend(self.train_pairs());
        kv::render(pairs)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::config("`lr0` must be positive"));
        }
        for (k, v) in [
            ("halve_every", self.halve_every),
            ("batch_size", self.batch_size as u64),
            ("patch", self.patch as u64),
            ("log_every", self.log_every),
        ] {
            if v == 0 {
                return Err(Error::config(format!("`{k}` must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::config("Adam needs β1, β2 in [0, 1) and ε > 0"));
        }
        self.scales.check_max(self.model.max_scale)?;
        self.degradation_spec().validate()
    }

    /// Degradation producing the LR inputs: always at the model's ×N.
    pub fn degradation_spec(&self) -> DegradationSpec {
        DegradationSpec {
            kind: self.degradation,
            scale: Scale::integer(self.model.max_scale),
            blur_sigma: self.blur_sigma,
            blur_kernel: self.blur_kernel,
            noise_level: self.noise_level,
            bd_order: self.bd_order,
        }
    }

    pub fn adam(&self, step: u64) -> Adam {
        Adam {
            lr: learning_rate(self.lr0, self.halve_every, step),
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

/// `lr0 · 2^(−⌊step / halve_every⌋)`.
pub fn learning_rate(lr0: f64, halve_every: u64, step: u64) -> f64 {
    let halvings = step / halve_every.max(1);
    lr0 * 0.5f64.powi(halvings.min(2000) as i32)
}

/// Read every `.png` in `dir`, sorted by file name.
pub fn load_images(dir: &Path) -> Result<Vec<(String, Image)>> {
    let rd = fs::read_dir(dir).map_err(|e| Error::Data(format!("{}: {e}", dir.display())))?;
    let mut paths: Vec<_> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::usage(format!("no PNG images in {}", dir.display())));
    }
    paths
        .into_iter()
        .map(|p| {
            let name = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default();
            let img = Image::read_png(&p).map_err(|e| Error::Data(e.to_string()))?;
            Ok((name, img))
        })
        .collect()
}

/// HR images cropped to multiples of N with their degraded LR versions.
#[derive(Debug, Clone)]
pub struct TrainPairs {
    pub names: Vec<String>,
    pub hr: Vec<Image>,
    pub lr: Vec<Image>,
}

/// Seed of the degradation noise for image `name`.
pub fn degrade_seed(seed: u64, name: &str) -> u64 {
    rng::stream_key(seed, &format!("degrade:{name}"), 0)
}

impl TrainPairs {
    pub fn prepare(images: &[(String, Image)], cfg: &TrainConfig) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::usage("empty dataset"));
        }
        let n = cfg.model.max_scale as usize;
        let spec = cfg.degradation_spec();
        let mut out = TrainPairs {
            names: Vec::new(),
            hr: Vec::new(),
            lr: Vec::new(),
        };
        for (name, img) in images {
            if img.height().min(img.width()) < cfg.patch * n {
                return Err(Error::Data(format!(
                    "image `{name}` ({}x{}) is smaller than the HR patch {}",
                    img.height(),
                    img.width(),
                    cfg.patch * n
                )));
            }
            let hr = img.mod_crop(n)?;
            let lr = degrade(&hr, &spec, degrade_seed(cfg.seed, name))?;
            out.names.push(name.clone());
            out.hr.push(hr);
            out.lr.push(lr);
        }
        Ok(out)
    }

    pub fn len(&self) -> usize {
        self.hr.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hr.is_empty()
    }

    /// The (LR, HR) batch used at `step`.
    pub fn batch(&self, cfg: &TrainConfig, step: u64) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let n = cfg.model.max_scale as usize;
        let b = cfg.batch_size as u64;
        let mut lrs = Vec::with_capacity(cfg.batch_size);
        let mut hrs = Vec::with_capacity(cfg.batch_size);
        for i in 0..b {
            let counter = step * b + i;
            let idx = rng::stream(cfg.seed, "batch", counter).random_range(0..self.len());
            let key = rng::stream_key(cfg.seed, "patch", counter);
            let (lp, hp) = sample_patch(&self.hr[idx], &self.lr[idx], cfg.patch, n, key)?;
            lrs.push(lp.to_tensor());
            hrs.push(hp.to_tensor());
        }
        Ok((Tensor::stack(&lrs)?, Tensor::stack(&hrs)?))
    }
}

/// Forward the model on an LR batch and return the multi-scale loss.
pub fn batch_loss(
    cfg: &TrainConfig,
    params: &ParamStore<f32>,
    lr: &Tensor<f32>,
    hr: &Tensor<f32>,
) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.constant(lr.clone());
    let outs = model::overnet_forward(&mut g, params, &cfg.model, x, cfg.scales.scales())?;
    let s = lr.shape();
    let l = multiscale_l1(&mut g, &outs, hr, (s.h, s.w), cfg.scales.scales())?;
    Ok(g.value(l).item() as f64)
}

/// Something the loop reports to its caller.
#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    /// Loss of the batch at `step`, computed before that step's update.
    Log { step: u64, lr: f64, loss: f64 },
    /// `step` updates have been applied and a checkpoint is due.
    Checkpoint { step: u64 },
}

impl Event {
    /// `step<TAB>lr<TAB>loss`.
    pub fn log_line(&self) -> Option<String> {
        match self {
            Event::Log { step, lr, loss } => Some(format!("{step}\t{lr:e}\t{loss:.6}")),
            Event::Checkpoint { .. } => None,
        }
    }
}

/// Run one update at the store's current step. Returns the batch loss.
pub fn train_step(cfg: &TrainConfig, pairs: &TrainPairs, params: &mut ParamStore<f32>) -> Result<f64> {
    let step = params.step_count();
    let (lr, hr) = pairs.batch(cfg, step)?;
    let mut g = Graph::new();
    let x = g.constant(lr.clone());
    let outs = model::overnet_forward(&mut g, params, &cfg.model, x, cfg.scales.scales())
        .map_err(|e| numeric_context(e, step, params))?;
    let s = lr.shape();
    let l = multiscale_l1(&mut g, &outs, &hr, (s.h, s.w), cfg.scales.scales())?;
    let loss = g.value(l).item() as f64;
    if !loss.is_finite() {
        return Err(diagnostic(step, &format!("loss is {loss}"), params));
    }
    g.backward(l, params)?;
    if let Some((name, _)) = params.iter().find(|(_, e)| !e.grad.is_finite()) {
        return Err(diagnostic(step, &format!("gradient of `{name}` is not finite"), params));
    }
    cfg.adam(step).step(params)?;
    Ok(loss)
}

fn diagnostic(step: u64, what: &str, params: &ParamStore<f32>) -> Error {
    let culprit = match params.first_non_finite() {
        Some(n) => format!("; first non-finite parameter: `{n}`"),
        None => "; all parameters finite".to_string(),
    };
    Error::Numeric(format!("step {step}: {what}{culprit}"))
}

fn numeric_context(e: Error, step: u64, params: &ParamStore<f32>) -> Error {
    match e {
        Error::Numeric(msg) => diagnostic(step, &msg, params),
        other => other,
    }
}

/// Train from the store's current step up to `cfg.total_iters`.
pub fn train_loop(
    cfg: &TrainConfig,
    pairs: &TrainPairs,
    params: &mut ParamStore<f32>,
    on_event: &mut dyn FnMut(&Event, &ParamStore<f32>) -> Result<()>,
) -> Result<()> {
    cfg.validate()?;
    model::check_params(&cfg.model, params)?;
    while params.step_count() < cfg.total_iters {
        let step = params.step_count();
        let loss = train_step(cfg, pairs, params)?;
        if step % cfg.log_every == 0 || step + 1 == cfg.total_iters {
            let lr = learning_rate(cfg.lr0, cfg.halve_every, step);
            on_event(&Event::Log { step, lr, loss }, params)?;
        }
        if cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 {
            on_event(&Event::Checkpoint { step: step + 1 }, params)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_halves_exactly() {
        assert_eq!(learning_rate(1e-3, 2000, 0), 1e-3);
        assert_eq!(learning_rate(1e-3, 2000, 1999), 1e-3);
        assert_eq!(learning_rate(1e-3, 2000, 2000), 1e-3 / 2.0);
        assert_eq!(learning_rate(1e-3, 2000, 6001), 1e-3 / 8.0);
    }

    #[test]
    fn config_text_round_trip_and_errors() {
        let mut cfg = TrainConfig {
            model: ModelConfig::tiny(),
            patch: 12,
            ..TrainConfig::default()
        };
        cfg.scales = "2,2.5,4".parse().unwrap();
        cfg.degradation = DegradationKind::Dn;
        assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);

        let err = TrainConfig::from_text("lr0 = 1\nlr0 = 2\n").unwrap_err().to_string();
        assert!(err.contains("duplicate key `lr0`"), "{err}");
        let err = TrainConfig::from_text("learning_rate = 1\n").unwrap_err().to_string();
        assert!(err.contains("unknown key `learning_rate`"), "{err}");
        assert!(matches!(
            TrainConfig::from_text("scales = 2,5\n"),
            Err(Error::ScaleOverflow { .. })
        ));
        let cfg = TrainConfig::from_text("max_scale = 3\nscales = 2,3\n").unwrap();
        assert_eq!(cfg.model.overscale_factor, 4);
    }

    #[test]
    fn batches_are_keyed_by_step() {
        let cfg = TrainConfig {
            model: ModelConfig::tiny(),
            patch: 6,
            batch_size: 3,
            ..TrainConfig::default()
        };
        let img = Image::from_fn(3, 40, 36, |c, y, x| ((c * 7 + y * 3 + x * 5) % 31) as f32 / 30.0);
        let pairs = TrainPairs::prepare(&[("a".into(), img)], &cfg).unwrap();
        let (l1, h1) = pairs.batch(&cfg, 5).unwrap();
        let (l2, h2) = pairs.batch(&cfg, 5).unwrap();
        let (l3, _) = pairs.batch(&cfg, 6).unwrap();
        assert_eq!((l1.clone(), h1.clone()), (l2, h2));
        assert_ne!(l1, l3);
        assert_eq!(l1.shape().dims(), [3, 3, 6, 6]);
        assert_eq!(h1.shape().dims(), [3, 3, 24, 24]);
    }

    #[test]
    fn too_small_images_and_empty_sets_are_rejected() {
        let cfg = TrainConfig {
            model: ModelConfig::tiny(),
            patch: 16,
            ..TrainConfig::default()
        };
        let img = Image::filled(3, 40, 80, 0.5);
        assert!(matches!(
            TrainPairs::prepare(&[("a".into(), img)], &cfg),
            Err(Error::Data(_))
        ));
        assert!(matches!(TrainPairs::prepare(&[], &cfg), Err(Error::Usage(_))));
    }

    #[test]
    fn injected_infinity_aborts_with_diagnostic() {
        let cfg = TrainConfig {
            model: ModelConfig::tiny(),
            patch: 4,
            batch_size: 1,
            total_iters: 3,
            ..TrainConfig::default()
        };
        let img = Image::from_fn(3, 16, 16, |_, y, x| ((y + x) % 5) as f32 / 4.0);
        let pairs = TrainPairs::prepare(&[("a".into(), img)], &cfg).unwrap();
        let mut params = model::init_params::<f32>(&cfg.model, 0).unwrap();
        params.value_mut("ldg0.rb0.conv.b").unwrap().data_mut()[0] = f32::INFINITY;
        let err = train_loop(&cfg, &pairs, &mut params, &mut |_, _| Ok(())).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Numeric(_)), "{msg}");
        assert!(msg.contains("step 0") && msg.contains("ldg0.rb0.conv.b"), "{msg}");
        assert_eq!(params.step_count(), 0);
    }
}
