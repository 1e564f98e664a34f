use std::time::Instant;
use sdan::conv::{conv2d, conv2d_grad_input, conv2d_grad_weight, ConvSpec};
use sdan::tensor::{pixel_norm_backward, Shape, Tensor};

fn t(shape: Shape, k: usize) -> Tensor<f32> {
    Tensor::from_fn(shape, |n, c, y, x| ((n * 7 + c * 13 + y * 5 + x * k) % 31) as f32 * 0.03)
}

fn main() {
    let x = t(Shape::new(1, 56, 64, 64), 3);
    let spec = ConvSpec::pointwise(56, 56);
    let w = t(spec.weight_shape(), 7);
    let b = t(Shape::new(1, 56, 1, 1), 11);
    let reps = 20;

    let t0 = Instant::now();
    for _ in 0..reps { let _ = conv2d(&x, &w, Some(&b), &spec).unwrap(); }
    println!("pw56 fwd: {:.1}ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    let g = t(Shape::new(1, 56, 64, 64), 9);
    let t1 = Instant::now();
    for _ in 0..reps { let _ = conv2d_grad_input(&g, &w, &spec).unwrap(); }
    println!("pw56 grad_input: {:.1}ms", t1.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    let t2 = Instant::now();
    for _ in 0..reps { let _ = conv2d_grad_weight(&x, &g, &spec).unwrap(); }
    println!("pw56 grad_weight: {:.1}ms", t2.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // depthwise strip 1x11 dilated
    let gc = Shape::new(1, 14, 64, 64);
    let xs = t(gc, 3);
    let sspec = ConvSpec::depthwise_strip(14, 1, 11, 3);
    let sw = t(sspec.weight_shape(), 5);
    let sb = t(Shape::new(1, 14, 1, 1), 3);
    let t3 = Instant::now();
    for _ in 0..reps { let _ = conv2d(&xs, &sw, Some(&sb), &sspec).unwrap(); }
    println!("strip fwd: {:.1}ms", t3.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // pixel_norm backward
    let gamma = t(Shape::new(1, 56, 1, 1), 3);
    let t4 = Instant::now();
    for _ in 0..reps { let _ = pixel_norm_backward(&x, &gamma, 1e-6, &g).unwrap(); }
    println!("pixel_norm bwd: {:.1}ms", t4.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // elementwise add_assign path
    let mut a = t(Shape::new(1, 56, 64, 64), 13);
    let t5 = Instant::now();
    for _ in 0..reps { a.add_assign(&g).unwrap(); }
    println!("add_assign: {:.2}ms", t5.elapsed().as_secs_f64() * 1000.0 / reps as f64);

    // allocation + clone
    let t6 = Instant::now();
    for _ in 0..reps { let c = g.clone(); std::hint::black_box(&c); }
    println!("clone 0.9MB: {:.2}ms", t6.elapsed().as_secs_f64() * 1000.0 / reps as f64);
}
