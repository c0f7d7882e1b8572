//! Image I/O and the bicubic degradation pipeline.
//!
//! Images are RGB with values in [0, 1], stored row-major as
//! `[H][W][3]` f64 planes. 16-bit PNGs are accepted on load (Middlebury
//! ships them) but output is always 8-bit.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Clone, Debug)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    /// RGB interleaved, row-major, values clamped to [0, 1].
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::Image(format!(
                "data length {} does not match {}x{}x3",
                data.len(),
                height,
                width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value.clamp(0.0, 1.0); height * width * 3],
        }
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    pub fn clamp01(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    /// Channel-first `[1, 3, H, W]` tensor for model input.
    pub fn to_tensor<T: Element>(&self) -> Tensor<T> {
        let (h, w) = (self.height, self.width);
        let mut out = vec![T::zero(); 3 * h * w];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    out[(c * h + y) * w + x] = T::from_f64(self.get(y, x, c));
                }
            }
        }
        Tensor::new(vec![1, 3, h, w], out).expect("sized above")
    }

    /// Back from a `[1, 3, H, W]` tensor, clamping into [0, 1].
    pub fn from_tensor<T: Element>(t: &Tensor<T>) -> Result<Self> {
        let (h, w) = match t.shape() {
            [1, 3, h, w] => (*h, *w),
            _ => {
                return Err(Error::Image(format!(
                    "expected [1, 3, H, W] tensor, got {:?}",
                    t.shape()
                )))
            }
        };
        let d = t.data();
        let mut data = vec![0.0; h * w * 3];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data[(y * w + x) * 3 + c] = d[(c * h + y) * w + x].as_f64().clamp(0.0, 1.0);
                }
            }
        }
        Image::new(h, w, data)
    }

    pub fn mirror_horizontal(&self) -> Self {
        let (h, w) = (self.height, self.width);
        let mut data = vec![0.0; self.data.len()];
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    data[(y * w + x) * 3 + c] = self.get(y, w - 1 - x, c);
                }
            }
        }
        Self {
            height: h,
            width: w,
            data,
        }
    }

    /// Crops to `[y..y+h, x..x+w]`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Self> {
        if y + h > self.height || x + w > self.width {
            return Err(Error::Image(format!(
                "crop {}x{} at ({}, {}) exceeds image {}x{}",
                h, w, y, x, self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w * 3);
        for yy in y..y + h {
            for xx in x..x + w {
                for c in 0..3 {
                    data.push(self.get(yy, xx, c));
                }
            }
        }
        Image::new(h, w, data)
    }
}

/// Left/right image pair, the unit of inference and evaluation.
#[derive(Clone, Debug)]
pub struct StereoPair {
    pub left: Image,
    pub right: Image,
}

impl StereoPair {
    pub fn new(left: Image, right: Image) -> Result<Self> {
        if left.height != right.height || left.width != right.width {
            return Err(Error::Image(format!(
                "stereo views differ in size: {}x{} vs {}x{}",
                left.height, left.width, right.height, right.width
            )));
        }
        Ok(Self { left, right })
    }
}

pub fn load_png(path: &Path) -> Result<Image> {
    let img = image::open(path)
        .map_err(|e| Error::Image(format!("cannot read {}: {}", path.display(), e)))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match img {
        image::DynamicImage::ImageLuma8(_)
        | image::DynamicImage::ImageLumaA8(_)
        | image::DynamicImage::ImageLuma16(_)
        | image::DynamicImage::ImageLumaA16(_) => {
            return Err(Error::Image(format!(
                "{}: grayscale PNGs are not supported",
                path.display()
            )))
        }
        image::DynamicImage::ImageRgb16(buf) => buf
            .pixels()
            .flat_map(|p| p.0)
            .map(|v| v as f64 / 65535.0)
            .collect(),
        image::DynamicImage::ImageRgba16(buf) => buf
            .pixels()
            .flat_map(|p| [p.0[0], p.0[1], p.0[2]])
            .map(|v| v as f64 / 65535.0)
            .collect(),
        other => other
            .to_rgb8()
            .pixels()
            .flat_map(|p| p.0)
            .map(|v| v as f64 / 255.0)
            .collect::<Vec<f64>>(),
    };
    Ok(Image::new(h, w, data)?.clamp01())
}

/// Writes 8-bit RGB; quantization is round(v * 255) half-away-from-zero
/// after clamping, so save-then-load is idempotent.
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = img
        .data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let buf = image::RgbImage::from_raw(img.width as u32, img.height as u32, bytes)
        .expect("raw buffer sized to image");
    buf.save(path)
        .map_err(|e| Error::Image(format!("cannot write {}: {}", path.display(), e)))
}

/// Cubic convolution kernel with a = -0.5 (Keys).
pub fn cubic_kernel(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * (t * t * t - 5.0 * t * t + 8.0 * t - 4.0)
    } else {
        0.0
    }
}

/// Separable bicubic resize, a = -0.5, pixel-center coordinate mapping.
/// When downscaling the kernel support is widened by the scale ratio
/// (antialiasing). Edge handling clamps source coordinates; weights are
/// renormalized so constant images stay exactly constant.
pub fn bicubic_resize(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Image("resize to zero-sized output".into()));
    }
    // horizontal pass, then vertical
    let horiz = resize_axis(&img.data, img.height, img.width, out_w, 3, true);
    let vert = resize_axis(&horiz, img.height, out_w, out_h, 3, false);
    Ok(Image::new(out_h, out_w, vert)?.clamp01())
}

fn resize_axis(
    data: &[f64],
    h: usize,
    w: usize,
    out_len: usize,
    ch: usize,
    horizontal: bool,
) -> Vec<f64> {
    let in_len = if horizontal { w } else { h };
    let scale = out_len as f64 / in_len as f64;
    // antialias: widen support when shrinking
    let (kscale, support) = if scale < 1.0 {
        (scale, 2.0 / scale)
    } else {
        (1.0, 2.0)
    };

    // precompute taps per output coordinate, each with the nearest source
    // pixel as an anchor so constant inputs are reproduced exactly
    let mut taps: Vec<(i64, usize, Vec<f64>)> = Vec::with_capacity(out_len);
    for o in 0..out_len {
        let src = (o as f64 + 0.5) / scale - 0.5;
        let lo = (src - support).ceil() as i64;
        let hi = (src + support).floor() as i64;
        let mut weights = Vec::with_capacity((hi - lo + 1).max(0) as usize);
        let mut sum = 0.0;
        for i in lo..=hi {
            let wgt = cubic_kernel((src - i as f64) * kscale) * kscale;
            weights.push(wgt);
            sum += wgt;
        }
        if sum != 0.0 {
            for wgt in &mut weights {
                *wgt /= sum;
            }
        }
        let anchor = (src.round() as i64).clamp(0, in_len as i64 - 1) as usize;
        taps.push((lo, anchor, weights));
    }

    let (out_h, out_w) = if horizontal { (h, out_len) } else { (out_len, w) };
    let mut out = vec![0.0; out_h * out_w * ch];
    for y in 0..out_h {
        for x in 0..out_w {
            let (o, fixed) = if horizontal { (x, y) } else { (y, x) };
            let (lo, anchor, weights) = &taps[o];
            for c in 0..ch {
                let at = |i: usize| {
                    if horizontal {
                        data[(fixed * w + i) * ch + c]
                    } else {
                        data[(i * w + fixed) * ch + c]
                    }
                };
                // weights sum to 1, so accumulating deviations from the
                // anchor pixel is equivalent and exact on constant inputs
                let base = at(*anchor);
                let mut acc = 0.0;
                for (k, wgt) in weights.iter().enumerate() {
                    let i = (*lo + k as i64).clamp(0, in_len as i64 - 1) as usize;
                    acc += (at(i) - base) * wgt;
                }
                out[(y * out_w + x) * ch + c] = base + acc;
            }
        }
    }
    out
}

/// Aligned LR/HR crops for training. The LR patch starts at `(y, x)` with
/// size `(ph, pw)`; the HR patch is the same region scaled by `s`. Left and
/// right views are cropped at identical coordinates to preserve epipolar
/// alignment.
pub fn extract_patch_pair(
    hr: &StereoPair,
    lr: &StereoPair,
    y: usize,
    x: usize,
    ph: usize,
    pw: usize,
    s: usize,
) -> Result<(StereoPair, StereoPair)> {
    let lr_patch = StereoPair::new(
        lr.left.crop(y, x, ph, pw)?,
        lr.right.crop(y, x, ph, pw)?,
    )?;
    let hr_patch = StereoPair::new(
        hr.left.crop(y * s, x * s, ph * s, pw * s)?,
        hr.right.crop(y * s, x * s, ph * s, pw * s)?,
    )?;
    Ok((lr_patch, hr_patch))
}
