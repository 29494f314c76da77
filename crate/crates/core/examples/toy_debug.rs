use shredrec::rng::{rng_from_seed, uniform_unit};
use shredrec::tensornet::{Fire, Layer, Network, Tensor};
use rand_chacha::ChaCha8Rng;

fn rand_tensor(rng: &mut ChaCha8Rng, n: usize, h: usize, w: usize, c: usize) -> Tensor {
    let mut t = Tensor::zeros(n, h, w, c);
    for v in t.data_mut() {
        let mag = 0.1 + 0.8 * uniform_unit(rng);
        *v = if uniform_unit(rng) < 0.5 { -mag as f32 } else { mag as f32 };
    }
    t
}

fn main() {
    let mut rng = rng_from_seed(99);
    let mut fire = Fire::new(3, 2, 3);
    fire.init_he(&mut rng);
    let net = Network { layers: vec![Layer::Fire(fire)] };
    let x = rand_tensor(&mut rng, 1, 8, 5, 3);

    let (out, caches) = net.forward_train(&x).unwrap();
    let probe: Vec<f64> = (0..out.len()).map(|_| uniform_unit(&mut rng) * 2.0 - 1.0).collect();
    let mut gout = Tensor::zeros(out.batch(), out.height(), out.width(), out.channels());
    for (g, p) in gout.data_mut().iter_mut().zip(&probe) {
        *g = *p as f32;
    }
    let (grads, gin) = net.backward(&caches, &gout).unwrap();
    let analytic: Vec<Vec<f32>> = Network::grad_slices(&grads).iter().map(|s| s.to_vec()).collect();

    // finite differences in f32 through the implementation itself
    let loss = |net: &Network, x: &Tensor| -> f64 {
        net.infer(x).unwrap().data().iter().zip(&probe).map(|(v, w)| f64::from(*v) * w).sum()
    };
    let mut net2 = net.clone();
    let step = 1e-3f32;
    let n_slices = net2.param_slices().len();
    for si in 0..n_slices {
        let len = net2.param_slices()[si].len();
        for i in 0..len {
            let orig = net2.param_slices()[si][i];
            net2.param_slices_mut()[si][i] = orig + step;
            let plus = loss(&net2, &x);
            net2.param_slices_mut()[si][i] = orig - step;
            let minus = loss(&net2, &x);
            net2.param_slices_mut()[si][i] = orig;
            let fd = (plus - minus) / (2.0 * f64::from(step));
            let a = f64::from(analytic[si][i]);
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
            if err > 1e-2 {
                println!("param slice {si} [{i}]: analytic {a:.6} fd {fd:.6} err {err:.3}");
            }
        }
    }
    for i in 0..x.len() {
        let mut xp = x.clone();
        xp.data_mut()[i] += step;
        let plus = loss(&net, &xp);
        xp.data_mut()[i] = x.data()[i] - step;
        let minus = loss(&net, &xp);
        let fd = (plus - minus) / (2.0 * f64::from(step));
        let a = f64::from(gin.data()[i]);
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-2);
        if err > 1e-2 {
            println!("input [{i}]: analytic {a:.6} fd {fd:.6} err {err:.3}");
        }
    }
    println!("done");
}
