use shredrec::docproc::BinaryImage;
use shredrec::projector::{ProjectorPair, Side};
use shredrec::tensornet::{contrastive_batch, LossSpec, Tensor};
use std::time::Instant;

fn random_bits(seed: u64, h: usize, w: usize) -> BinaryImage {
    let mut rng = shredrec::rng::rng_from_seed(seed);
    let bits = (0..h * w).map(|_| shredrec::rng::uniform_unit(&mut rng) < 0.1).collect();
    BinaryImage { width: w, height: h, bits }
}

fn batch_tensor(n: usize, seed: u64) -> Tensor {
    let mut t = Tensor::zeros(n, 32, 32, 1);
    let mut rng = shredrec::rng::rng_from_seed(seed);
    for v in t.data_mut() {
        *v = if shredrec::rng::uniform_unit(&mut rng) < 0.1 { 1.0 } else { 0.0 };
    }
    t
}

fn main() {
    let pair = ProjectorPair::square(8, 32, 1).unwrap();

    let xl = batch_tensor(256, 2);
    let xr = batch_tensor(256, 3);
    let spec = LossSpec::default();
    let labels: Vec<u8> = (0..256).map(|i| (i % 2) as u8).collect();
    let t0 = Instant::now();
    let iters = 5;
    for _ in 0..iters {
        let (el, cl) = pair.left.forward_train(&xl).unwrap();
        let (er, cr) = pair.right.forward_train(&xr).unwrap();
        let (_loss, gl, gr) = contrastive_batch(&el, &er, &labels, &spec).unwrap();
        let _ = pair.left.backward(&cl, &gl).unwrap();
        let _ = pair.right.backward(&cr, &gr).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64() / iters as f64;
    println!("train step (256 pairs, 1 thread): {:.3}s -> {:.0} pairs/s", dt, 256.0 / dt);

    let strip = random_bits(7, 3504, 32);
    let t0 = Instant::now();
    for _ in 0..3 {
        let _ = pair.embed_boundary(Side::Right, &strip, "x").unwrap();
    }
    let per = t0.elapsed().as_secs_f64() / 3.0;
    println!("embed_boundary h=3504 d=8: {:.3}s", per);

    let pair128 = ProjectorPair::square(128, 32, 1).unwrap();
    let t0 = Instant::now();
    let _ = pair128.embed_boundary(Side::Right, &strip, "x").unwrap();
    println!("embed_boundary h=3504 d=128: {:.3}s", t0.elapsed().as_secs_f64());
}
