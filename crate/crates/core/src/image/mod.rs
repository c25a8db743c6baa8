//! Planar floating-point images, PNG I/O, color conversion and resizing.

pub mod degrade;
pub mod patch;
pub mod resample;

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Real, Shape, Tensor};

pub use degrade::{degrade, gaussian_kernel, BdOrder, DegradationKind, DegradationSpec};
pub use patch::sample_patch;
pub use resample::{Filter, Resize2d};

/// Planar image with values nominally in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::usage(format!(
                "image dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if pixels.len() != channels * height * width {
            return Err(Error::usage(format!(
                "{channels}x{height}x{width} image needs {} values, got {}",
                channels * height * width,
                pixels.len()
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            pixels,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Image::new(channels, height, width, vec![value; channels * height * width])
            .expect("positive dimensions")
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Self {
        let mut pixels = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    pixels.push(f(c, y, x));
                }
            }
        }
        Image::new(channels, height, width, pixels).expect("positive dimensions")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.pixels[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[(c * self.height + y) * self.width + x]
    }

    pub fn clamp01(&mut self) {
        self.pixels.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Result<Image> {
        if y0 + h > self.height || x0 + w > self.width || h == 0 || w == 0 {
            return Err(Error::usage(format!(
                "crop {h}x{w} at ({y0}, {x0}) outside {}x{} image",
                self.height, self.width
            )));
        }
        Ok(Image::from_fn(self.channels, h, w, |c, y, x| {
            self.at(c, y0 + y, x0 + x)
        }))
    }

    /// Crop the bottom/right edges so both dimensions are multiples of `m`.
    pub fn mod_crop(&self, m: usize) -> Result<Image> {
        let h = self.height - self.height % m;
        let w = self.width - self.width % m;
        self.crop(0, 0, h, w)
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.channels, self.height, self.width, |c, y, x| {
            self.at(c, y, self.width - 1 - x)
        })
    }

    /// Rotate 90° clockwise.
    pub fn rotate90(&self) -> Image {
        Image::from_fn(self.channels, self.width, self.height, |c, y, x| {
            self.at(c, self.height - 1 - x, y)
        })
    }

    /// View as a (1, C, H, W) tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_vec(
            Shape::new(1, self.channels, self.height, self.width),
            self.pixels.iter().map(|&v| T::from_f64(v as f64)).collect(),
        )
        .expect("consistent image shape")
    }

    /// Batch item `n` of a tensor as an image, without clamping.
    pub fn from_tensor<T: Real>(t: &Tensor<T>, n: usize) -> Result<Image> {
        let s = t.shape();
        if n >= s.n {
            return Err(Error::usage(format!("batch index {n} out of range for {s}")));
        }
        let item = t.batch_item(n);
        Image::new(
            s.c,
            s.h,
            s.w,
            item.data().iter().map(|v| v.as_f64() as f32).collect(),
        )
    }

    /// Read a PNG as RGB with values `b / 255`.
    pub fn read_png(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut decoder = png::Decoder::new(BufReader::new(file));
        decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
        let mut reader = decoder
            .read_info()
            .map_err(|e| Error::format(path, format!("invalid PNG: {e}")))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| Error::format(path, "PNG too large"))?;
        let mut buf = vec![0u8; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| Error::format(path, format!("invalid PNG: {e}")))?;
        let (w, h) = (info.width as usize, info.height as usize);
        let stride = info.line_size;
        let spp = match info.color_type {
            png::ColorType::Grayscale => 1,
            png::ColorType::GrayscaleAlpha => 2,
            png::ColorType::Rgb => 3,
            png::ColorType::Rgba => 4,
            png::ColorType::Indexed => {
                return Err(Error::format(path, "unexpanded palette PNG"));
            }
        };
        let mut pixels = vec![0f32; 3 * h * w];
        for y in 0..h {
            let row = &buf[y * stride..y * stride + w * spp];
            for x in 0..w {
                let px = &row[x * spp..(x + 1) * spp];
                let rgb = if spp < 3 {
                    [px[0]; 3]
                } else {
                    [px[0], px[1], px[2]]
                };
                for c in 0..3 {
                    pixels[(c * h + y) * w + x] = rgb[c] as f32 / 255.0;
                }
            }
        }
        Image::new(3, h, w, pixels).map_err(|e| Error::format(path, e.to_string()))
    }

    /// Write an 8-bit RGB PNG, mapping `v` to `round(clamp(v, 0, 1) · 255)`.
    /// Single-channel images are written as gray RGB.
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let (h, w) = (self.height, self.width);
        let mut bytes = vec![0u8; 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    let src = if self.channels == 1 { 0 } else { c };
                    bytes[(y * w + x) * 3 + c] = to_byte(self.at(src, y, x));
                }
            }
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::format(path, format!("PNG encode: {e}")))?;
        writer
            .write_image_data(&bytes)
            .map_err(|e| Error::format(path, format!("PNG encode: {e}")))?;
        writer
            .finish()
            .map_err(|e| Error::format(path, format!("PNG encode: {e}")))
    }

    /// Round-trip through 8-bit quantization.
    pub fn quantized(&self) -> Image {
        let mut out = self.clone();
        out.pixels
            .iter_mut()
            .for_each(|v| *v = to_byte(*v) as f32 / 255.0);
        out
    }
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Resize every channel with `filter`, clamping the result to `[0, 1]`.
pub fn resize(img: &Image, filter: Filter, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::usage(format!("resize target {out_h}x{out_w} is empty")));
    }
    let plan = Resize2d::new(filter, img.height, img.width, out_h, out_w);
    let mut pixels = vec![0f32; img.channels * out_h * out_w];
    for (c, dst) in pixels.chunks_exact_mut(out_h * out_w).enumerate() {
        plan.apply_plane(img.plane(c), dst);
    }
    let mut out = Image::new(img.channels, out_h, out_w, pixels)?;
    out.clamp01();
    Ok(out)
}

/// Keys bicubic resize (a = −0.5, half-pixel centers, antialiased when
/// shrinking), clamped to `[0, 1]`.
pub fn bicubic_resize(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    resize(img, Filter::Bicubic, out_h, out_w)
}

/// Luma in 0–255 units: `16 + 65.481 R + 128.553 G + 24.966 B`.
pub fn rgb_to_y(img: &Image) -> Result<Image> {
    if img.channels != 3 {
        return Err(Error::usage(format!(
            "rgb_to_y needs 3 channels, got {}",
            img.channels
        )));
    }
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let y = r
        .iter()
        .zip(g)
        .zip(b)
        .map(|((&r, &g), &b)| {
            (16.0 + 65.481 * r as f64 + 128.553 * g as f64 + 24.966 * b as f64) as f32
        })
        .collect();
    Image::new(1, img.height, img.width, y)
}
