//! Image ingestion, bicubic degradation, dataset layout and patch sampling.
//!
//! Directory convention: `<root>/HR/*.png` and `<root>/LR_x{2,3,4}/*.png`
//! with matching stems. PNG is the only supported codec; 8-bit grayscale is
//! promoted to RGB and an alpha channel is dropped.

use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// 8-bit RGB image, row-major, 3 bytes per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ImageRgb {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl ImageRgb {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<ImageRgb> {
        if pixels.len() != 3 * width * height {
            return Err(Error::data(format!(
                "image buffer has {} bytes, expected {} for {}x{}",
                pixels.len(),
                3 * width * height,
                width,
                height
            )));
        }
        Ok(ImageRgb { width, height, pixels })
    }

    pub fn constant(width: usize, height: usize, rgb: [u8; 3]) -> ImageRgb {
        let mut pixels = Vec::with_capacity(3 * width * height);
        for _ in 0..width * height {
            pixels.extend_from_slice(&rgb);
        }
        ImageRgb { width, height, pixels }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = 3 * (y * self.width + x);
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Result<ImageRgb> {
        if x0 + width > self.width || y0 + height > self.height || width == 0 || height == 0 {
            return Err(Error::data(format!(
                "crop {width}x{height}+{x0}+{y0} exceeds image {}x{}",
                self.width, self.height
            )));
        }
        let mut pixels = Vec::with_capacity(3 * width * height);
        for y in y0..y0 + height {
            let start = 3 * (y * self.width + x0);
            pixels.extend_from_slice(&self.pixels[start..start + 3 * width]);
        }
        ImageRgb::new(width, height, pixels)
    }

    /// (1, 3, H, W) tensor scaled to [0, 1].
    pub fn to_tensor(&self) -> Tensor<f32> {
        let shape = Shape::new(1, 3, self.height, self.width);
        let mut data = vec![0.0f32; shape.numel()];
        let plane = self.height * self.width;
        for y in 0..self.height {
            for x in 0..self.width {
                let [r, g, b] = self.get(x, y);
                let p = y * self.width + x;
                data[p] = r as f32 / 255.0;
                data[plane + p] = g as f32 / 255.0;
                data[2 * plane + p] = b as f32 / 255.0;
            }
        }
        Tensor::new(shape, data).expect("image tensor shape")
    }

    /// Quantize a (1, 3, H, W) tensor in [0, 1] back to 8-bit RGB, clamping
    /// and rounding half away from zero.
    pub fn from_tensor(t: &Tensor<f32>) -> ImageRgb {
        let s = t.shape();
        assert_eq!(s.n, 1, "batch of one expected");
        assert_eq!(s.c, 3, "RGB tensor expected");
        let plane = s.h * s.w;
        let mut pixels = Vec::with_capacity(3 * plane);
        let data = t.data();
        for p in 0..plane {
            for ch in 0..3 {
                let v = (data[ch * plane + p] as f64 * 255.0).round().clamp(0.0, 255.0);
                pixels.push(v as u8);
            }
        }
        ImageRgb { width: s.w, height: s.h, pixels }
    }
}

pub fn read_png(path: &Path) -> Result<ImageRgb> {
    let dynamic = image::open(path)
        .map_err(|e| Error::data(format!("cannot read PNG {}: {e}", path.display())))?;
    let (rgb, width, height) = match dynamic {
        image::DynamicImage::ImageRgb8(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            (img.into_raw(), w, h)
        }
        image::DynamicImage::ImageLuma8(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            let mut out = Vec::with_capacity(3 * w * h);
            for &v in img.as_raw() {
                out.extend_from_slice(&[v, v, v]);
            }
            (out, w, h)
        }
        image::DynamicImage::ImageRgba8(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            let mut out = Vec::with_capacity(3 * w * h);
            for px in img.as_raw().chunks_exact(4) {
                out.extend_from_slice(&px[..3]);
            }
            (out, w, h)
        }
        image::DynamicImage::ImageLumaA8(img) => {
            let (w, h) = (img.width() as usize, img.height() as usize);
            let mut out = Vec::with_capacity(3 * w * h);
            for px in img.as_raw().chunks_exact(2) {
                out.extend_from_slice(&[px[0], px[0], px[0]]);
            }
            (out, w, h)
        }
        other => {
            return Err(Error::data(format!(
                "{}: unsupported pixel format {:?}, only 8-bit RGB/grayscale PNG is supported",
                path.display(),
                other.color()
            )))
        }
    };
    ImageRgb::new(width, height, rgb)
}

pub fn write_png(path: &Path, img: &ImageRgb) -> Result<()> {
    let buffer: image::RgbImage =
        image::RgbImage::from_raw(img.width as u32, img.height as u32, img.pixels.clone())
            .ok_or_else(|| Error::data("image buffer size mismatch"))?;
    buffer
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::data(format!("cannot write PNG {}: {e}", path.display())))
}

/// Catmull-Rom cubic kernel (a = -0.5).
fn cubic_weight(t: f64) -> f64 {
    let t = t.abs();
    if t <= 1.0 {
        (1.5 * t - 2.5) * t * t + 1.0
    } else if t < 2.0 {
        ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0
    } else {
        0.0
    }
}

/// Bicubic resampling with edge-clamped taps and center-aligned mapping,
/// src_x = (dst_x + 0.5) * (src_w / dst_w) - 0.5, channel independent.
pub fn bicubic_resize(img: &ImageRgb, out_w: usize, out_h: usize) -> Result<ImageRgb> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::config("bicubic_resize: target dimensions must be positive"));
    }
    let sx = img.width as f64 / out_w as f64;
    let sy = img.height as f64 / out_h as f64;
    let mut pixels = vec![0u8; 3 * out_w * out_h];
    let mut wy = [0.0f64; 4];
    let mut wx = [0.0f64; 4];
    for oy in 0..out_h {
        let src_y = (oy as f64 + 0.5) * sy - 0.5;
        let y0 = src_y.floor() as isize;
        let fy = src_y - y0 as f64;
        for (m, wv) in wy.iter_mut().enumerate() {
            *wv = cubic_weight(fy + 1.0 - m as f64);
        }
        for ox in 0..out_w {
            let src_x = (ox as f64 + 0.5) * sx - 0.5;
            let x0 = src_x.floor() as isize;
            let fx = src_x - x0 as f64;
            for (m, wv) in wx.iter_mut().enumerate() {
                *wv = cubic_weight(fx + 1.0 - m as f64);
            }
            let mut acc = [0.0f64; 3];
            for (m, &wyv) in wy.iter().enumerate() {
                let ty = (y0 - 1 + m as isize).clamp(0, img.height as isize - 1) as usize;
                for (q, &wxv) in wx.iter().enumerate() {
                    let tx = (x0 - 1 + q as isize).clamp(0, img.width as isize - 1) as usize;
                    let px = img.get(tx, ty);
                    let wgt = wyv * wxv;
                    acc[0] += wgt * px[0] as f64;
                    acc[1] += wgt * px[1] as f64;
                    acc[2] += wgt * px[2] as f64;
                }
            }
            let base = 3 * (oy * out_w + ox);
            for ch in 0..3 {
                pixels[base + ch] = acc[ch].round().clamp(0.0, 255.0) as u8;
            }
        }
    }
    ImageRgb::new(out_w, out_h, pixels)
}

/// One HR/LR file pair.
#[derive(Clone, Debug)]
pub struct SrPair {
    pub stem: String,
    pub hr_path: PathBuf,
    pub lr_path: PathBuf,
}

/// All pairs found under a dataset root for one scale, sorted by stem.
#[derive(Clone, Debug)]
pub struct SrPairSet {
    pub scale: usize,
    pub pairs: Vec<SrPair>,
}

fn png_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let entries = std::fs::read_dir(dir)
        .map_err(|e| Error::data(format!("cannot read directory {}: {e}", dir.display())))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(out)
}

/// Scan `<root>/HR` and `<root>/LR_x{scale}` for matching stems.
pub fn scan_pairs(root: &Path, scale: usize) -> Result<SrPairSet> {
    let hr_dir = root.join("HR");
    let lr_dir = root.join(format!("LR_x{scale}"));
    let hr = png_stems(&hr_dir)?;
    let lr = png_stems(&lr_dir)?;
    let mut pairs = Vec::new();
    for (stem, hr_path) in hr {
        match lr.iter().find(|(s, _)| *s == stem) {
            Some((_, lr_path)) => {
                pairs.push(SrPair { stem, hr_path, lr_path: lr_path.clone() })
            }
            None => {
                return Err(Error::data(format!(
                    "HR image '{stem}' has no counterpart in {}",
                    lr_dir.display()
                )))
            }
        }
    }
    Ok(SrPairSet { scale, pairs })
}

/// Uniform random aligned crop: a patch x patch LR crop and the
/// (scale*patch)^2 HR crop at scale times the offset, scaled to [0, 1].
pub fn sample_patch(
    lr: &ImageRgb,
    hr: &ImageRgb,
    scale: usize,
    patch: usize,
    rng: &mut ChaCha12Rng,
) -> Result<(Tensor<f32>, Tensor<f32>)> {
    if lr.width < patch || lr.height < patch {
        return Err(Error::data(format!(
            "image {}x{} smaller than patch size {patch}",
            lr.width, lr.height
        )));
    }
    if hr.width != scale * lr.width || hr.height != scale * lr.height {
        return Err(Error::config(format!(
            "HR {}x{} is not exactly {scale}x the LR {}x{}",
            hr.width, hr.height, lr.width, lr.height
        )));
    }
    let ox = rng.gen_range(0..=lr.width - patch);
    let oy = rng.gen_range(0..=lr.height - patch);
    let lr_crop = lr.crop(ox, oy, patch, patch)?;
    let hr_crop = hr.crop(scale * ox, scale * oy, scale * patch, scale * patch)?;
    Ok((lr_crop.to_tensor(), hr_crop.to_tensor()))
}

/// Stack single-image tensors along the batch axis.
pub fn stack_batch(items: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = items.first().ok_or_else(|| Error::data("stack_batch: empty batch"))?;
    let s = first.shape();
    let mut data = Vec::with_capacity(items.len() * first.numel());
    for item in items {
        if item.shape() != s {
            return Err(Error::config("stack_batch: mismatched item shapes"));
        }
        data.extend_from_slice(item.data());
    }
    Tensor::new(Shape::new(items.len() * s.n, s.c, s.h, s.w), data)
}

/// In-memory training sampler over a pair set.
pub struct PatchSampler {
    scale: usize,
    patch: usize,
    images: Vec<(ImageRgb, ImageRgb)>,
    rng: ChaCha12Rng,
}

impl PatchSampler {
    pub fn new(set: &SrPairSet, patch: usize, seed: u64) -> Result<PatchSampler> {
        use rand_chacha::rand_core::SeedableRng;
        let mut images = Vec::new();
        for pair in &set.pairs {
            let lr = read_png(&pair.lr_path)?;
            let hr = read_png(&pair.hr_path)?;
            if hr.width != set.scale * lr.width || hr.height != set.scale * lr.height {
                return Err(Error::config(format!(
                    "pair '{}': HR {}x{} is not exactly {}x the LR {}x{}",
                    pair.stem, hr.width, hr.height, set.scale, lr.width, lr.height
                )));
            }
            if lr.width < patch || lr.height < patch {
                eprintln!(
                    "warning: skipping '{}', LR {}x{} smaller than patch {}",
                    pair.stem, lr.width, lr.height, patch
                );
                continue;
            }
            images.push((lr, hr));
        }
        if images.is_empty() {
            return Err(Error::data("no usable training images (empty or undersized dataset)"));
        }
        Ok(PatchSampler {
            scale: set.scale,
            patch,
            images,
            rng: ChaCha12Rng::seed_from_u64(seed),
        })
    }

    pub fn next_batch(&mut self, batch_size: usize) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let mut lrs = Vec::with_capacity(batch_size);
        let mut hrs = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let idx = self.rng.gen_range(0..self.images.len());
            let (lr, hr) = &self.images[idx];
            let (lt, ht) = sample_patch(lr, hr, self.scale, self.patch, &mut self.rng)?;
            lrs.push(lt);
            hrs.push(ht);
        }
        Ok((stack_batch(&lrs)?, stack_batch(&hrs)?))
    }
}
