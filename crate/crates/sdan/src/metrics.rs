//! Luminance-plane image quality metrics: BT.601 Y extraction, PSNR and
//! single-scale SSIM, both with a configurable border shave.

use crate::data::ImageRgb;
use crate::error::{Error, Result};

/// Floating-point luminance plane, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Plane> {
        if data.len() != width * height {
            return Err(Error::data("plane buffer does not match dimensions"));
        }
        Ok(Plane { width, height, data })
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    fn shaved(&self, shave: usize) -> Result<Plane> {
        if 2 * shave >= self.width || 2 * shave >= self.height {
            return Err(Error::config(format!(
                "shave {shave} leaves nothing of a {}x{} plane",
                self.width, self.height
            )));
        }
        let w = self.width - 2 * shave;
        let h = self.height - 2 * shave;
        let mut data = Vec::with_capacity(w * h);
        for y in 0..h {
            let start = (y + shave) * self.width + shave;
            data.extend_from_slice(&self.data[start..start + w]);
        }
        Plane::new(w, h, data)
    }
}

/// ITU-R BT.601 luminance in the studio-swing convention:
/// Y = 16 + (65.481 R + 128.553 G + 24.966 B) / 255, not rounded.
pub fn rgb_to_y(img: &ImageRgb) -> Plane {
    let mut data = Vec::with_capacity(img.width * img.height);
    for px in img.pixels.chunks_exact(3) {
        let y = 16.0
            + (65.481 * px[0] as f64 + 128.553 * px[1] as f64 + 24.966 * px[2] as f64) / 255.0;
        data.push(y);
    }
    Plane { width: img.width, height: img.height, data }
}

fn check_dims(a: &Plane, b: &Plane, op: &str) -> Result<()> {
    if a.width != b.width || a.height != b.height {
        return Err(Error::config(format!(
            "{op}: plane dimensions differ, {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB over the shaved region, peak 255.
/// Identical planes yield the +inf sentinel.
pub fn psnr(a: &Plane, b: &Plane, shave: usize) -> Result<f64> {
    check_dims(a, b, "psnr")?;
    let a = a.shaved(shave)?;
    let b = b.shaved(shave)?;
    let mut se = 0.0f64;
    for (&x, &y) in a.data.iter().zip(&b.data) {
        let d = x - y;
        se += d * d;
    }
    let mse = se / a.data.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (255.0 * 255.0 / mse).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const SSIM_L: f64 = 255.0;

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0f64; SSIM_WINDOW * SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for i in 0..SSIM_WINDOW {
        for j in 0..SSIM_WINDOW {
            let di = i as f64 - c;
            let dj = j as f64 - c;
            let v = (-(di * di + dj * dj) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[i * SSIM_WINDOW + j] = v;
            sum += v;
        }
    }
    for v in &mut w {
        *v /= sum;
    }
    w
}

/// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1 = 0.01,
/// K2 = 0.03, L = 255, averaged over all fully valid window positions of the
/// shaved region.
pub fn ssim(a: &Plane, b: &Plane, shave: usize) -> Result<f64> {
    check_dims(a, b, "ssim")?;
    let a = a.shaved(shave)?;
    let b = b.shaved(shave)?;
    if a.width < SSIM_WINDOW || a.height < SSIM_WINDOW {
        return Err(Error::config(format!(
            "ssim: shaved plane {}x{} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window",
            a.width, a.height
        )));
    }
    let window = gaussian_window();
    let c1 = (SSIM_K1 * SSIM_L) * (SSIM_K1 * SSIM_L);
    let c2 = (SSIM_K2 * SSIM_L) * (SSIM_K2 * SSIM_L);
    let mut total = 0.0f64;
    let mut count = 0usize;
    for wy in 0..=a.height - SSIM_WINDOW {
        for wx in 0..=a.width - SSIM_WINDOW {
            let mut mu_x = 0.0;
            let mut mu_y = 0.0;
            let mut xx = 0.0;
            let mut yy = 0.0;
            let mut xy = 0.0;
            for i in 0..SSIM_WINDOW {
                for j in 0..SSIM_WINDOW {
                    let w = window[i * SSIM_WINDOW + j];
                    let xv = a.at(wx + j, wy + i);
                    let yv = b.at(wx + j, wy + i);
                    mu_x += w * xv;
                    mu_y += w * yv;
                    xx += w * xv * xv;
                    yy += w * yv * yv;
                    xy += w * xv * yv;
                }
            }
            let var_x = xx - mu_x * mu_x;
            let var_y = yy - mu_y * mu_y;
            let cov = xy - mu_x * mu_y;
            let v = ((2.0 * mu_x * mu_y + c1) * (2.0 * cov + c2))
                / ((mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2));
            total += v;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Per-image and aggregate metrics for one evaluation run.
#[derive(Clone, Debug)]
pub struct ImageMetrics {
    pub stem: String,
    pub psnr_db: f64,
    pub ssim: f64,
}

#[derive(Clone, Debug)]
pub struct MetricReport {
    pub per_image: Vec<ImageMetrics>,
    pub shave: usize,
}

impl MetricReport {
    pub fn mean_psnr(&self) -> f64 {
        self.per_image.iter().map(|m| m.psnr_db).sum::<f64>() / self.per_image.len() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.per_image.iter().map(|m| m.ssim).sum::<f64>() / self.per_image.len() as f64
    }
}
