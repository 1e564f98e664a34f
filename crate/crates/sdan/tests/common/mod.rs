//! Shared test oracles, written independently of the library kernels they
//! check: a quadruple-loop reference convolution, random tensor helpers and
//! a synthetic photo generator.

#![allow(dead_code)]

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

use sdan::conv::ConvSpec;
use sdan::data::ImageRgb;
use sdan::tensor::{Elem, Shape, Tensor};

/// Direct per-output-element convolution: nested loops, per-tap bounds
/// check, zero padding, cross-correlation, stride 1, "same" output size.
pub fn conv2d_reference<T: Elem>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&[f64]>,
    spec: &ConvSpec,
) -> Tensor<T> {
    let s = input.shape();
    let cin_g = spec.in_channels / spec.groups;
    let cout_g = spec.out_channels / spec.groups;
    let eff_h = spec.kernel_h + (spec.kernel_h - 1) * (spec.dilation - 1);
    let eff_w = spec.kernel_w + (spec.kernel_w - 1) * (spec.dilation - 1);
    let (ph, pw) = ((eff_h - 1) / 2, (eff_w - 1) / 2);
    let mut out = Tensor::zeros(Shape::new(s.n, spec.out_channels, s.h, s.w));
    for n in 0..s.n {
        for co in 0..spec.out_channels {
            let group = co / cout_g;
            for oy in 0..s.h {
                for ox in 0..s.w {
                    let mut acc = bias.map_or(0.0, |b| b[co]);
                    for cil in 0..cin_g {
                        let ci = group * cin_g + cil;
                        for ki in 0..spec.kernel_h {
                            for kj in 0..spec.kernel_w {
                                let iy = oy as isize + (ki * spec.dilation) as isize - ph as isize;
                                let ix = ox as isize + (kj * spec.dilation) as isize - pw as isize;
                                if iy < 0 || ix < 0 || iy >= s.h as isize || ix >= s.w as isize {
                                    continue;
                                }
                                let v = input.at(n, ci, iy as usize, ix as usize).to_f64();
                                let w = weight.at(co, cil, ki, kj).to_f64();
                                acc += w * v;
                            }
                        }
                    }
                    let idx = out.index(n, co, oy, ox);
                    out.data_mut()[idx] = T::from_f64(acc);
                }
            }
        }
    }
    out
}

pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

pub fn rand_tensor<T: Elem>(shape: Shape, rng: &mut ChaCha12Rng) -> Tensor<T> {
    rand_tensor_in(shape, -1.0, 1.0, rng)
}

pub fn rand_tensor_in<T: Elem>(shape: Shape, lo: f64, hi: f64, rng: &mut ChaCha12Rng) -> Tensor<T> {
    let data = (0..shape.numel()).map(|_| T::from_f64(rng.gen_range(lo..hi))).collect();
    Tensor::new(shape, data).unwrap()
}

pub fn max_abs_diff<T: Elem>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "shape mismatch in comparison");
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x.to_f64() - y.to_f64()).abs())
        .fold(0.0, f64::max)
}

pub fn assert_close<T: Elem>(a: &Tensor<T>, b: &Tensor<T>, tol: f64, what: &str) {
    let d = max_abs_diff(a, b);
    assert!(d < tol, "{what}: max abs diff {d:.3e} exceeds {tol:.1e}");
}

/// PSNR written as the bare formula over the shaved region.
pub fn psnr_ref(a: &sdan::metrics::Plane, b: &sdan::metrics::Plane, shave: usize) -> f64 {
    let mut se = 0.0;
    let mut n = 0.0;
    for y in shave..a.height - shave {
        for x in shave..a.width - shave {
            let d = a.at(x, y) - b.at(x, y);
            se += d * d;
            n += 1.0;
        }
    }
    let mse = se / n;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * ((255.0 * 255.0) / mse).log10()
    }
}

/// SSIM written straight from the windowed formula: 11x11 Gaussian of sigma
/// 1.5, K1 = 0.01, K2 = 0.03, L = 255, valid windows only.
pub fn ssim_ref(a: &sdan::metrics::Plane, b: &sdan::metrics::Plane, shave: usize) -> f64 {
    let win = 11usize;
    let sigma = 1.5f64;
    let c1 = (0.01 * 255.0f64).powi(2);
    let c2 = (0.03 * 255.0f64).powi(2);
    let mut weights = vec![0.0; win * win];
    let mut wsum = 0.0;
    for i in 0..win {
        for j in 0..win {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            let v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            weights[i * win + j] = v;
            wsum += v;
        }
    }
    for v in &mut weights {
        *v /= wsum;
    }
    let (w, h) = (a.width - 2 * shave, a.height - 2 * shave);
    let sample = |p: &sdan::metrics::Plane, x: usize, y: usize| p.at(x + shave, y + shave);
    let mut total = 0.0;
    let mut count = 0.0;
    for wy in 0..=h - win {
        for wx in 0..=w - win {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in 0..win {
                for j in 0..win {
                    let wgt = weights[i * win + j];
                    let xv = sample(a, wx + j, wy + i);
                    let yv = sample(b, wx + j, wy + i);
                    mx += wgt * xv;
                    my += wgt * yv;
                    sxx += wgt * xv * xv;
                    syy += wgt * yv * yv;
                    sxy += wgt * xv * yv;
                }
            }
            let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
            total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1.0;
        }
    }
    total / count
}

/// Scalar transcription of the Adan update, independent of the optimizer:
/// retention-factor moments, per-moment bias correction, decoupled decay.
pub struct ScalarAdan {
    lr: f64,
    b1: f64,
    b2: f64,
    b3: f64,
    eps: f64,
    wd: f64,
    m: f64,
    v: f64,
    n: f64,
    g_prev: Option<f64>,
    t: i32,
}

impl ScalarAdan {
    pub fn new(cfg: &sdan::config::TrainConfig) -> ScalarAdan {
        ScalarAdan {
            lr: cfg.lr,
            b1: cfg.beta1,
            b2: cfg.beta2,
            b3: cfg.beta3,
            eps: cfg.eps,
            wd: cfg.weight_decay,
            m: 0.0,
            v: 0.0,
            n: 0.0,
            g_prev: None,
            t: 0,
        }
    }

    pub fn step(&mut self, theta: f64, g: f64) -> f64 {
        self.t += 1;
        let diff = g - self.g_prev.unwrap_or(g);
        self.m = self.b1 * self.m + (1.0 - self.b1) * g;
        self.v = self.b2 * self.v + (1.0 - self.b2) * diff;
        let upd = g + self.b2 * diff;
        self.n = self.b3 * self.n + (1.0 - self.b3) * upd * upd;
        self.g_prev = Some(g);
        let m_hat = self.m / (1.0 - self.b1.powi(self.t));
        let v_hat = self.v / (1.0 - self.b2.powi(self.t));
        let n_hat = self.n / (1.0 - self.b3.powi(self.t));
        (theta - self.lr * (m_hat + self.b2 * v_hat) / (n_hat.sqrt() + self.eps))
            / (1.0 + self.lr * self.wd)
    }
}

/// Textured synthetic photo: low-frequency shading, hard edges, and patches
/// of period-2 stripes and checkers. The fine patterns alias away under x2
/// downscaling, so interpolation genuinely loses detail, while staying
/// structured enough for a small network to memorize.
pub fn synthetic_image(width: usize, height: usize, seed: u64) -> ImageRgb {
    let mut r = rng(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| {
            (
                r.gen_range(0.2..1.4),
                r.gen_range(0.2..1.4),
                r.gen_range(0.0..std::f64::consts::TAU),
                r.gen_range(0.2..1.0),
            )
        })
        .collect();
    let edge_x = r.gen_range(width / 4..3 * width / 4);
    let edge_y = r.gen_range(height / 4..3 * height / 4);
    // Cell pattern assignment: smooth, stripes, checker.
    let cell = 8usize.max(width.min(height) / 8);
    let cells_x = width.div_ceil(cell);
    let cells_y = height.div_ceil(cell);
    let styles: Vec<u8> = (0..cells_x * cells_y).map(|_| r.gen_range(0..4u8)).collect();
    let mut pixels = Vec::with_capacity(3 * width * height);
    for y in 0..height {
        for x in 0..width {
            let (xf, yf) = (x as f64, y as f64);
            let mut v = [0.45, 0.5, 0.55];
            let style = styles[(y / cell) * cells_x + x / cell];
            for (ch, val) in v.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (i, &(fx, fy, phase, amp)) in waves.iter().enumerate() {
                    let rot = (i + ch) as f64 * 0.7;
                    acc += amp * (fx * (xf * rot.cos() - yf * rot.sin()) + fy * yf + phase).sin();
                }
                *val += 0.055 * acc;
                match style {
                    1 => {
                        if x % 2 == 0 {
                            *val += 0.16;
                        }
                    }
                    2 => {
                        if y % 2 == 0 {
                            *val -= 0.16;
                        }
                    }
                    3 => {
                        if (x + y) % 2 == 0 {
                            *val += 0.14;
                        }
                    }
                    _ => {}
                }
                if x > edge_x {
                    *val -= 0.18;
                }
                if y > edge_y {
                    *val += 0.12;
                }
            }
            for val in v {
                pixels.push((val.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    ImageRgb::new(width, height, pixels).unwrap()
}
