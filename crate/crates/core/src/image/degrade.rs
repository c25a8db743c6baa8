//! Synthetic low-resolution generation: BI, BD and DN degradations.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};

use super::{bicubic_resize, Image};
use crate::error::{Error, Result};
use crate::rng;
use crate::scale::Scale;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DegradationKind {
    /// Bicubic downsampling.
    Bi,
    /// Bicubic downsampling combined with a Gaussian blur.
    Bd,
    /// Bicubic downsampling followed by additive Gaussian noise.
    Dn,
}

impl FromStr for DegradationKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "BI" => Ok(DegradationKind::Bi),
            "BD" | "DB" => Ok(DegradationKind::Bd),
            "DN" => Ok(DegradationKind::Dn),
            _ => Err(Error::config(format!("unknown degradation `{s}` (BI, BD, DN)"))),
        }
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DegradationKind::Bi => "BI",
            DegradationKind::Bd => "BD",
            DegradationKind::Dn => "DN",
        })
    }
}

/// Order of the two BD stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum BdOrder {
    #[default]
    DownThenBlur,
    BlurThenDown,
}

impl FromStr for BdOrder {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "down_then_blur" => Ok(BdOrder::DownThenBlur),
            "blur_then_down" => Ok(BdOrder::BlurThenDown),
            _ => Err(Error::config(format!(
                "unknown bd_order `{s}` (down_then_blur, blur_then_down)"
            ))),
        }
    }
}

impl fmt::Display for BdOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BdOrder::DownThenBlur => "down_then_blur",
            BdOrder::BlurThenDown => "blur_then_down",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradationSpec {
    pub kind: DegradationKind,
    pub scale: Scale,
    pub blur_sigma: f64,
    pub blur_kernel: usize,
    /// Standard deviation on the 0–255 scale.
    pub noise_level: f64,
    pub bd_order: BdOrder,
}

impl DegradationSpec {
    pub fn bi(scale: Scale) -> Self {
        DegradationSpec {
            kind: DegradationKind::Bi,
            scale,
            blur_sigma: 1.6,
            blur_kernel: 7,
            noise_level: 30.0,
            bd_order: BdOrder::DownThenBlur,
        }
    }

    /// ×3 downsampling with a 7×7, σ = 1.6 Gaussian.
    pub fn bd() -> Self {
        DegradationSpec {
            kind: DegradationKind::Bd,
            ..DegradationSpec::bi(Scale::integer(3))
        }
    }

    /// Downsampling plus Gaussian noise of level 30.
    pub fn dn(scale: Scale) -> Self {
        DegradationSpec {
            kind: DegradationKind::Dn,
            ..DegradationSpec::bi(scale)
        }
    }

    pub fn with_kind(kind: DegradationKind, scale: Scale) -> Self {
        DegradationSpec {
            kind,
            ..DegradationSpec::bi(scale)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scale.num() <= self.scale.den() {
            return Err(Error::config(format!(
                "degradation scale {} must exceed 1",
                self.scale
            )));
        }
        if !(self.noise_level >= 0.0) || !self.noise_level.is_finite() {
            return Err(Error::config(format!(
                "noise level must be a finite value ≥ 0, got {}",
                self.noise_level
            )));
        }
        if self.blur_kernel % 2 == 0 || !(self.blur_sigma > 0.0) {
            return Err(Error::config(format!(
                "blur needs an odd kernel and positive sigma, got {} / {}",
                self.blur_kernel, self.blur_sigma
            )));
        }
        Ok(())
    }
}

/// Smallest LR side `degrade` will produce.
pub const MIN_LR_SIDE: usize = 4;

/// Normalized `size × size` Gaussian, row-major.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let r = (size / 2) as i64;
    let mut k = Vec::with_capacity(size * size);
    for dy in -r..=r {
        for dx in -r..=r {
            k.push((-((dx * dx + dy * dy) as f64) / (2.0 * sigma * sigma)).exp());
        }
    }
    let total: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= total);
    k
}

/// Mirror an out-of-range index without repeating the edge sample.
fn reflect(i: i64, n: usize) -> usize {
    let n = n as i64;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let m = i.rem_euclid(period);
    (if m >= n { period - m } else { m }) as usize
}

/// Gaussian blur with reflect padding.
pub fn gaussian_blur(img: &Image, size: usize, sigma: f64) -> Image {
    let k = gaussian_kernel(size, sigma);
    let r = (size / 2) as i64;
    let (h, w) = (img.height(), img.width());
    Image::from_fn(img.channels(), h, w, |c, y, x| {
        let plane = img.plane(c);
        let mut acc = 0.0f64;
        let mut ki = 0;
        for dy in -r..=r {
            let sy = reflect(y as i64 + dy, h);
            for dx in -r..=r {
                let sx = reflect(x as i64 + dx, w);
                acc += k[ki] * plane[sy * w + sx] as f64;
                ki += 1;
            }
        }
        acc as f32
    })
}

/// Produce a low-resolution observation of `img`. Deterministic in
/// `(img, spec, rng_seed)`.
pub fn degrade(img: &Image, spec: &DegradationSpec, rng_seed: u64) -> Result<Image> {
    spec.validate()?;
    let (oh, ow) = (spec.scale.divide(img.height()), spec.scale.divide(img.width()));
    if oh < MIN_LR_SIDE || ow < MIN_LR_SIDE {
        return Err(Error::usage(format!(
            "{}x{} image is too small for ×{} degradation",
            img.height(),
            img.width(),
            spec.scale
        )));
    }
    let mut out = match spec.kind {
        DegradationKind::Bi => bicubic_resize(img, oh, ow)?,
        DegradationKind::Bd => match spec.bd_order {
            BdOrder::DownThenBlur => {
                let down = bicubic_resize(img, oh, ow)?;
                gaussian_blur(&down, spec.blur_kernel, spec.blur_sigma)
            }
            BdOrder::BlurThenDown => {
                let blurred = gaussian_blur(img, spec.blur_kernel, spec.blur_sigma);
                bicubic_resize(&blurred, oh, ow)?
            }
        },
        DegradationKind::Dn => {
            let mut down = bicubic_resize(img, oh, ow)?;
            if spec.noise_level > 0.0 {
                let normal = Normal::new(0.0f64, spec.noise_level / 255.0)
                    .map_err(|e| Error::config(e.to_string()))?;
                let mut rng = rng::stream(rng_seed, "degrade-noise", 0);
                for v in down.pixels_mut() {
                    *v = (*v as f64 + normal.sample(&mut rng)) as f32;
                }
            }
            down
        }
    };
    out.clamp01();
    Ok(out)
}
