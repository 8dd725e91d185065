use std::time::Instant;

use prune_tune::models::{build_lenet, LeNetVariant};
use prune_tune::Tensor;

fn main() {
    let variant: LeNetVariant = std::env::args().nth(1).unwrap_or("lenet-s".into()).parse().unwrap();
    let mut net = build_lenet::<f32>(variant, 10).unwrap();
    net.init_he(1);
    let b = 128;
    let x = Tensor::from_vec(&[b, 3, 32, 32], (0..b * 3072).map(|i| ((i * 7919) % 255) as f32 / 255.0).collect()).unwrap();
    let labels: Vec<usize> = (0..b).map(|i| i % 10).collect();
    let t = Instant::now();
    let iters = 5;
    for _ in 0..iters {
        let _ = net.backward(&x, &labels).unwrap();
    }
    let dt = t.elapsed().as_secs_f64() / (iters * b) as f64;
    println!("{variant}: {:.3} ms/sample fwd+bwd, {:.0} samples/s", dt * 1e3, 1.0 / dt);
    let t = Instant::now();
    for _ in 0..iters {
        let _ = net.forward(&x).unwrap();
    }
    let dt = t.elapsed().as_secs_f64() / (iters * b) as f64;
    println!("{variant}: {:.3} ms/sample fwd", dt * 1e3);
}
