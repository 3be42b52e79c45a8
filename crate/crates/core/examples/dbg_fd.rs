use unseg::diffmath::*;

fn uniform(shape: &[usize], seed: u64) -> Tensor {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

fn main() {
    let x = uniform(&[3, 8, 8], 100);
    let k = uniform(&[4, 3, 3, 3], 101);
    let k2 = uniform(&[4, 4, 3, 3], 102);

    let e = finite_diff_check(|_, v| Ok(v.pad_replicate(1).unwrap().sum()), &x, 1e-4).unwrap();
    println!("pad_replicate: {:.3e}", e);

    let e = finite_diff_check(|_, v| Ok(v.center_channels().unwrap().mul(v).unwrap().sum()), &x, 1e-4).unwrap();
    println!("center_channels: {:.3e}", e);

    let e = finite_diff_check(|t, v| {
        let kv = t.constant(k.clone());
        Ok(v.conv2d(kv, 2, 0)?.sum())
    }, &x, 1e-4).unwrap();
    println!("conv s2 p0: {:.3e}", e);

    let e = finite_diff_check(|t, v| {
        let kv = t.constant(k.clone());
        Ok(v.pad_replicate(1)?.conv2d(kv, 2, 0)?.sum())
    }, &x, 1e-4).unwrap();
    println!("pad+conv s2: {:.3e}", e);

    let e = finite_diff_check(|_, v| Ok(v.gauss_blur(3, 0.8, true).unwrap().mul(v).unwrap().sum()), &x, 1e-4).unwrap();
    println!("gauss same: {:.3e}", e);

    let e = finite_diff_check(|t, v| {
        let kv = t.constant(k.clone());
        let k2v = t.constant(k2.clone());
        let a = v.pad_replicate(1)?.conv2d(kv, 2, 0)?;
        let b = a.pad_replicate(1)?.conv2d(k2v, 2, 0)?;
        Ok(b.gauss_blur(3, 0.8, true)?.center_channels()?.mul(b)?.sum())
    }, &x, 1e-4).unwrap();
    println!("two-layer no relu: {:.3e}", e);

    // with relu
    let e = finite_diff_check(|t, v| {
        let kv = t.constant(k.clone());
        let k2v = t.constant(k2.clone());
        let a = v.pad_replicate(1)?.conv2d(kv, 2, 0)?.relu();
        let b = a.pad_replicate(1)?.conv2d(k2v, 2, 0)?;
        Ok(b.gauss_blur(3, 0.8, true)?.center_channels()?.sum())
    }, &x, 1e-4).unwrap();
    println!("two-layer with relu: {:.3e}", e);
}
