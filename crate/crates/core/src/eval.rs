//! Dataset evaluation against the bicubic baseline.

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::image::{bicubic_resize, degrade, DegradationSpec, Image};
use crate::metrics::{border_for, psnr, ssim, EvalRecord, EvalReport};
use crate::model::super_resolve;
use crate::rng;
use crate::scale::{Scale, ScaleSet};
use crate::train::degrade_seed;

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub scales: ScaleSet,
    /// Kind and parameters of the degradation; the scale is replaced by
    /// the checkpoint's maximum scale.
    pub degradation: DegradationSpec,
    pub seed: u64,
    /// Crop `⌈s⌉` border pixels before measuring.
    pub crop: bool,
}

/// Ground truth at scale `s` for an HR image whose LR is `lr_h × lr_w`.
pub fn eval_target(hr: &Image, s: Scale, lr_h: usize, lr_w: usize) -> Result<Image> {
    let (h, w) = (s.apply(lr_h), s.apply(lr_w));
    if (h, w) == (hr.height(), hr.width()) {
        return Ok(hr.clone());
    }
    bicubic_resize(hr, h, w)
}

/// Fingerprint of a checkpoint's model configuration.
pub fn fingerprint(ck: &Checkpoint) -> String {
    format!("{:016x}", rng::stream_key(0, &ck.model.to_text(), 0))
}

/// Evaluate every image at every scale. Images are processed in name
/// order; the report carries no timing (callers fill `seconds`).
pub fn evaluate(ck: &Checkpoint, images: &[(String, Image)], opts: &EvalOptions) -> Result<EvalReport> {
    let n = ck.model.max_scale;
    opts.scales.check_max(n)?;
    if images.is_empty() {
        return Err(Error::usage("no images to evaluate"));
    }
    let spec = DegradationSpec {
        scale: Scale::integer(n),
        ..opts.degradation
    };
    let mut sorted: Vec<&(String, Image)> = images.iter().collect();
    sorted.sort_by(|a, b| a.0.cmp(&b.0));

    let mut records = Vec::new();
    for (name, img) in sorted {
        let hr = img.mod_crop(n as usize)?;
        let lr = degrade(&hr, &spec, degrade_seed(opts.seed, name))?;
        let outs = super_resolve(&ck.model, &ck.params, &lr, opts.scales.scales())?;
        for (s, sr) in outs {
            let target = eval_target(&hr, s, lr.height(), lr.width())?;
            let base = bicubic_resize(&lr, sr.height(), sr.width())?;
            let border = if opts.crop { border_for(s) } else { 0 };
            records.push(EvalRecord {
                name: name.clone(),
                scale: s,
                psnr: psnr(&sr, &target, border)?,
                ssim: ssim(&sr, &target, border)?,
                baseline_psnr: psnr(&base, &target, border)?,
                baseline_ssim: ssim(&base, &target, border)?,
            });
        }
    }
    Ok(EvalReport {
        records,
        fingerprint: fingerprint(ck),
        seconds: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    fn images() -> Vec<(String, Image)> {
        let mk = |k: usize| {
            Image::from_fn(3, 50, 46, move |c, y, x| {
                (0.5 + 0.4 * ((y * (k + 1)) as f32 * 0.11 + x as f32 * 0.07 + c as f32).sin()).clamp(0.0, 1.0)
            })
        };
        vec![("b".to_string(), mk(1)), ("a".to_string(), mk(2))]
    }

    fn opts() -> EvalOptions {
        EvalOptions {
            scales: ScaleSet::integers(&[2, 3, 4]).unwrap(),
            degradation: DegradationSpec::bi(Scale::integer(4)),
            seed: 0,
            crop: true,
        }
    }

    #[test]
    fn zero_model_matches_baseline_at_max_scale() {
        let cfg = ModelConfig::tiny();
        let mut p = init_params::<f32>(&cfg, 0).unwrap();
        p.zero_values();
        let report = evaluate(&Checkpoint::new(cfg, p), &images(), &opts()).unwrap();
        assert_eq!(report.records[0].name, "a");
        for r in &report.records {
            if r.scale == Scale::integer(4) {
                assert_eq!(r.psnr, r.baseline_psnr);
                assert_eq!(r.ssim, r.baseline_ssim);
            } else {
                assert!((r.psnr - r.baseline_psnr).abs() < 0.5, "{r:?}");
            }
        }
    }

    #[test]
    fn reports_are_deterministic_and_scales_checked() {
        let cfg = ModelConfig::tiny();
        let ck = Checkpoint::new(cfg.clone(), init_params::<f32>(&cfg, 4).unwrap());
        let a = evaluate(&ck, &images(), &opts()).unwrap();
        let b = evaluate(&ck, &images(), &opts()).unwrap();
        assert_eq!(a.to_records(), b.to_records());
        assert_eq!(a.to_table(), b.to_table());
        let mut o = opts();
        o.scales = ScaleSet::integers(&[2, 5]).unwrap();
        assert!(matches!(evaluate(&ck, &images(), &o), Err(Error::ScaleOverflow { .. })));
    }
}
