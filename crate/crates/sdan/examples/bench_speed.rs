use std::time::Instant;
use sdan::config::{ModelConfig, TrainConfig};
use sdan::data::bicubic_resize;
use sdan::model::Sdan;
use sdan::optim::{train, FixedBatch};
use sdan::tensor::Tensor;

// quick convergence probe for smoke-test calibration
fn main() {
    let args: Vec<String> = std::env::args().collect();
    let c: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(32);
    let m: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(4);
    let iters: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(60);
    let lr: f64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(5e-3);

    let mut cfg = ModelConfig::default();
    cfg.channels = c;
    cfg.num_blocks = m;
    cfg.distill_channels = c / 2;
    let model: Sdan<f32> = Sdan::new(&cfg, 7).unwrap();
    println!("params: {}", sdan::model::count_params(&cfg));

    // synthetic 128x128 HR patch, bicubic-degraded to 64x64
    let hr = synth(128, 128, 42);
    let lr_img = bicubic_resize(&hr, 64, 64).unwrap();
    let mut src = FixedBatch { lr: lr_img.to_tensor(), hr: hr.to_tensor() };

    let mut tc = TrainConfig::default();
    tc.iterations = iters;
    tc.lr = lr;
    tc.batch_size = 1;
    let t0 = Instant::now();
    let out = train(&model, &mut src, &tc, 10, |r| println!("{r}")).unwrap();
    let el = t0.elapsed().as_secs_f64();
    println!("{} iters in {:.1}s ({:.3}s/iter), loss {:.4e} -> {:.4e} (ratio {:.3})",
        iters, el, el / iters as f64, out.initial_loss, out.final_loss,
        out.final_loss / out.initial_loss);

    // bicubic baseline PSNR on Y
    let up = bicubic_resize(&lr_img, 128, 128).unwrap();
    let y_hr = sdan::metrics::rgb_to_y(&hr);
    let y_up = sdan::metrics::rgb_to_y(&up);
    println!("bicubic psnr: {:.2}", sdan::metrics::psnr(&y_hr, &y_up, 2).unwrap());
    let sr = sdan::model::super_resolve(&model, &lr_img).unwrap();
    let y_sr = sdan::metrics::rgb_to_y(&sr);
    println!("model   psnr: {:.2}", sdan::metrics::psnr(&y_hr, &y_sr, 2).unwrap());
}

fn synth(w: usize, h: usize, seed: u64) -> sdan::data::ImageRgb {
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    let mut r = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let waves: Vec<(f64, f64, f64, f64)> = (0..6)
        .map(|_| (r.gen_range(0.2..1.4), r.gen_range(0.2..1.4), r.gen_range(0.0..6.28), r.gen_range(0.2..1.0)))
        .collect();
    let ex = r.gen_range(w / 4..3 * w / 4);
    let ey = r.gen_range(h / 4..3 * h / 4);
    let cell = 8usize.max(w.min(h) / 8);
    let cx = w.div_ceil(cell);
    let cy = h.div_ceil(cell);
    let styles: Vec<u8> = (0..cx * cy).map(|_| r.gen_range(0..4u8)).collect();
    let mut px = Vec::with_capacity(3 * w * h);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            let mut v = [0.45, 0.5, 0.55];
            let style = styles[(y / cell) * cx + x / cell];
            for (ch, val) in v.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (i, &(fx, fy, p, a)) in waves.iter().enumerate() {
                    let rot = (i + ch) as f64 * 0.7;
                    acc += a * (fx * (xf * rot.cos() - yf * rot.sin()) + fy * yf + p).sin();
                }
                *val += 0.055 * acc;
                match style {
                    1 => { if x % 2 == 0 { *val += 0.16; } }
                    2 => { if y % 2 == 0 { *val -= 0.16; } }
                    3 => { if (x + y) % 2 == 0 { *val += 0.14; } }
                    _ => {}
                }
                if x > ex { *val -= 0.18; }
                if y > ey { *val += 0.12; }
            }
            for vv in v { px.push((vv.clamp(0.0, 1.0) * 255.0).round() as u8); }
        }
    }
    sdan::data::ImageRgb::new(w, h, px).unwrap()
}
