//! Luma PSNR/SSIM and evaluation reports.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::scale::Scale;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const PEAK: f64 = 255.0;

/// Luma plane in 0–255 units, computed in `f64`.
fn luma(img: &Image) -> Result<Vec<f64>> {
    if img.channels() != 3 {
        return Err(Error::usage(format!(
            "metrics need RGB images, got {} channels",
            img.channels()
        )));
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    Ok(r.iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| 16.0 + 65.481 * r as f64 + 128.553 * g as f64 + 24.966 * b as f64)
        .collect())
}

/// Both luma planes with `border` pixels removed from every edge.
fn cropped_pair(sr: &Image, hr: &Image, border: usize) -> Result<(Vec<f64>, Vec<f64>, usize, usize)> {
    if (sr.height(), sr.width()) != (hr.height(), hr.width()) {
        return Err(Error::usage(format!(
            "image sizes differ: {}x{} vs {}x{}",
            sr.height(),
            sr.width(),
            hr.height(),
            hr.width()
        )));
    }
    let (h, w) = (hr.height(), hr.width());
    if h < 2 * border + 1 || w < 2 * border + 1 {
        return Err(Error::usage(format!(
            "{h}x{w} image is too small for a {border}-pixel border crop"
        )));
    }
    let (ya, yb) = (luma(sr)?, luma(hr)?);
    let (ch, cw) = (h - 2 * border, w - 2 * border);
    let crop = |p: &[f64]| {
        let mut out = Vec::with_capacity(ch * cw);
        for y in border..h - border {
            out.extend_from_slice(&p[y * w + border..y * w + w - border]);
        }
        out
    };
    Ok((crop(&ya), crop(&yb), ch, cw))
}

/// Y-channel PSNR in dB after cropping `border` pixels. Identical images
/// give `f64::INFINITY`.
pub fn psnr(sr: &Image, hr: &Image, border: usize) -> Result<f64> {
    let (a, b, _, _) = cropped_pair(sr, hr, border)?;
    let mse = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (PEAK * PEAK / mse).log10())
}

/// Normalized 1-D Gaussian; the 2-D window is its outer product.
pub fn ssim_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let k: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-(i as f64 - r).powi(2) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Valid-mode separable filtering of an `h × w` plane.
fn filter_valid(p: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * p[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Single-scale Y-channel SSIM (11×11 Gaussian window, σ = 1.5) averaged
/// over every window fully inside the cropped image.
pub fn ssim(sr: &Image, hr: &Image, border: usize) -> Result<f64> {
    let (a, b, h, w) = cropped_pair(sr, hr, border)?;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::usage(format!(
            "{h}x{w} region is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window"
        )));
    }
    let k = ssim_window();
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(x, y)| x * y).collect::<Vec<_>>();
    let mu_a = filter_valid(&a, h, w, &k);
    let mu_b = filter_valid(&b, h, w, &k);
    let aa = filter_valid(&prod(&a, &a), h, w, &k);
    let bb = filter_valid(&prod(&b, &b), h, w, &k);
    let ab = filter_valid(&prod(&a, &b), h, w, &k);
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);
    let total: f64 = (0..mu_a.len())
        .map(|i| {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = aa[i] - ma * ma;
            let vb = bb[i] - mb * mb;
            let cov = ab[i] - ma * mb;
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2))
        })
        .sum();
    Ok(total / mu_a.len() as f64)
}

/// Border crop used for scale `s`: `⌈s⌉` pixels.
pub fn border_for(s: Scale) -> usize {
    s.num().div_ceil(s.den()) as usize
}

/// One image at one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub name: String,
    pub scale: Scale,
    pub psnr: f64,
    pub ssim: f64,
    pub baseline_psnr: f64,
    pub baseline_ssim: f64,
}

/// Per-scale means over every image.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleSummary {
    pub scale: Scale,
    pub images: usize,
    pub psnr: f64,
    pub ssim: f64,
    pub baseline_psnr: f64,
    pub baseline_ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Sorted by image name, then scale.
    pub records: Vec<EvalRecord>,
    pub fingerprint: String,
    pub seconds: f64,
}

fn fmt_db(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.4}")
    }
}

impl EvalReport {
    pub fn summaries(&self) -> Vec<ScaleSummary> {
        let mut scales: Vec<Scale> = self.records.iter().map(|r| r.scale).collect();
        scales.sort();
        scales.dedup();
        scales
            .into_iter()
            .map(|s| {
                let rs: Vec<&EvalRecord> = self.records.iter().filter(|r| r.scale == s).collect();
                let mean = |f: fn(&EvalRecord) -> f64| rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64;
                ScaleSummary {
                    scale: s,
                    images: rs.len(),
                    psnr: mean(|r| r.psnr),
                    ssim: mean(|r| r.ssim),
                    baseline_psnr: mean(|r| r.baseline_psnr),
                    baseline_ssim: mean(|r| r.baseline_ssim),
                }
            })
            .collect()
    }

    /// `name<TAB>scale<TAB>psnr<TAB>ssim` lines.
    pub fn to_records(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            let _ = writeln!(out, "{}\t{}\t{}\t{:.6}", r.name, r.scale, fmt_db(r.psnr), r.ssim);
        }
        out
    }

    /// Human-readable table of per-scale means next to the bicubic baseline.
    pub fn to_table(&self) -> String {
        let mut out = format!("model {}\n", self.fingerprint);
        let _ = writeln!(
            out,
            "{:>6}  {:>6}  {:>10}  {:>8}  {:>12}  {:>10}",
            "scale", "images", "psnr", "ssim", "bicubic_psnr", "bicubic_ssim"
        );
        for s in self.summaries() {
            let _ = writeln!(
                out,
                "{:>6}  {:>6}  {:>10}  {:>8.4}  {:>12}  {:>10.4}",
                s.scale.to_string(),
                s.images,
                fmt_db(s.psnr),
                s.ssim,
                fmt_db(s.baseline_psnr),
                s.baseline_ssim
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// RGB image whose luma is exactly `16 + y` for gray levels `y/219`.
    fn gray_luma(h: usize, w: usize, f: impl Fn(usize, usize) -> f64) -> Image {
        Image::from_fn(3, h, w, |_, y, x| (f(y, x) / 219.0) as f32)
    }

    fn pattern(seed: u64, h: usize, w: usize) -> Image {
        Image::from_fn(3, h, w, |c, y, x| {
            let v = ((seed as usize * 97 + c * 31 + y * 17 + x * 7 + y * x) % 101) as f32;
            v / 100.0
        })
    }

    #[test]
    fn identical_images_give_infinite_psnr_and_unit_ssim() {
        let a = pattern(1, 20, 24);
        assert_eq!(psnr(&a, &a, 2).unwrap(), f64::INFINITY);
        assert_eq!(ssim(&a, &a, 2).unwrap(), 1.0);
    }

    #[test]
    fn uniform_luma_offsets() {
        // exact luma offsets: gray levels differ by whole units of 1/219
        let base = gray_luma(16, 16, |y, x| ((y * 16 + x) % 150) as f64);
        let plus = |d: f64| gray_luma(16, 16, move |y, x| ((y * 16 + x) % 150) as f64 + d);
        let one = psnr(&plus(1.0), &base, 0).unwrap();
        let sixteen = psnr(&plus(16.0), &base, 0).unwrap();
        assert!((one - 10.0 * (255.0f64 * 255.0).log10()).abs() < 1e-3, "{one}");
        assert!((sixteen - 24.0483).abs() < 1e-3, "{sixteen}");
    }

    #[test]
    fn small_images_are_rejected() {
        let a = pattern(1, 6, 6);
        assert!(matches!(psnr(&a, &a, 3), Err(Error::Usage(_))));
        assert!(psnr(&a, &a, 2).is_ok());
        assert!(matches!(ssim(&a, &a, 0), Err(Error::Usage(_))));
    }

    #[test]
    fn negative_image_has_negative_ssim() {
        let a = gray_luma(24, 24, |y, x| if (y / 3 + x / 3) % 2 == 0 { 10.0 } else { 209.0 });
        let b = gray_luma(24, 24, |y, x| if (y / 3 + x / 3) % 2 == 0 { 209.0 } else { 10.0 });
        assert!(ssim(&a, &b, 0).unwrap() < 0.0);
    }

    /// Direct per-window evaluation with the full 2-D window.
    fn ssim_oracle(a: &Image, b: &Image) -> f64 {
        let (ya, yb) = (luma(a).unwrap(), luma(b).unwrap());
        let (h, w) = (a.height(), a.width());
        let k1 = ssim_window();
        let c1 = (0.01f64 * 255.0).powi(2);
        let c2 = (0.03f64 * 255.0).powi(2);
        let mut total = 0.0;
        let mut count = 0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let (mut ma, mut mb) = (0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = k1[i] * k1[j];
                        ma += wt * ya[(y0 + i) * w + x0 + j];
                        mb += wt * yb[(y0 + i) * w + x0 + j];
                    }
                }
                let (mut va, mut vb, mut cov) = (0.0, 0.0, 0.0);
                for i in 0..11 {
                    for j in 0..11 {
                        let wt = k1[i] * k1[j];
                        let da = ya[(y0 + i) * w + x0 + j] - ma;
                        let db = yb[(y0 + i) * w + x0 + j] - mb;
                        va += wt * da * da;
                        vb += wt * db * db;
                        cov += wt * da * db;
                    }
                }
                total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
        total / count as f64
    }

    #[test]
    fn ssim_matches_windowed_oracle() {
        for seed in 0..4 {
            let a = pattern(seed, 17, 19);
            let b = pattern(seed + 50, 17, 19);
            let fast = ssim(&a, &b, 0).unwrap();
            assert!((fast - ssim_oracle(&a, &b)).abs() < 1e-6);
        }
    }

    #[test]
    fn border_is_ceiling_of_scale() {
        assert_eq!(border_for(Scale::integer(3)), 3);
        assert_eq!(border_for("2.5".parse().unwrap()), 3);
        assert_eq!(border_for("1.1".parse().unwrap()), 2);
    }

    #[test]
    fn report_formats_records_and_means() {
        let rec = |name: &str, s: u32, p: f64| EvalRecord {
            name: name.into(),
            scale: Scale::integer(s),
            psnr: p,
            ssim: 0.5,
            baseline_psnr: 20.0,
            baseline_ssim: 0.25,
        };
        let report = EvalReport {
            records: vec![rec("a", 2, 30.0), rec("b", 2, 32.0), rec("b", 3, f64::INFINITY)],
            fingerprint: "abc".into(),
            seconds: 1.0,
        };
        assert_eq!(
            report.to_records(),
            "a\t2\t30.0000\t0.500000\nb\t2\t32.0000\t0.500000\nb\t3\tinf\t0.500000\n"
        );
        let s = report.summaries();
        assert_eq!(s[0].psnr, 31.0);
        assert!(report.to_table().contains("inf"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn ssim_is_symmetric(s1 in 0u64..500, s2 in 0u64..500) {
            let a = pattern(s1, 14, 15);
            let b = pattern(s2, 14, 15);
            prop_assert!((ssim(&a, &b, 1).unwrap() - ssim(&b, &a, 1).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn larger_errors_lower_psnr(seed in 0u64..500, alpha in 1.05f32..4.0) {
            let hr = Image::from_fn(3, 12, 12, |_, _, _| 0.5);
            let err = pattern(seed, 12, 12);
            let with = |k: f32| Image::from_fn(3, 12, 12, |c, y, x| 0.5 + k * (err.at(c, y, x) - 0.5) * 0.2);
            let p1 = psnr(&with(1.0), &hr, 0).unwrap();
            let p2 = psnr(&with(alpha), &hr, 0).unwrap();
            prop_assert!(p2 < p1);
        }
    }
}
