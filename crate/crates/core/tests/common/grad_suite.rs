//! Finite-difference checks for every differentiable operation.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use skelconv::classifier::skeleton_transform;
use skelconv::detector::{crop_and_resize_1d, Window};
use skelconv::tensor::{Tensor, Var};

use super::{fd_max_error, random_tensor, tensor_avoiding};

/// Name of the operation, number of random cases, worst abs error.
pub struct OpResult {
    pub op: &'static str,
    pub cases: usize,
    pub worst: f64,
}

/// Distinct values spaced ≥ 0.01 apart, shuffled; keeps pooling argmaxes
/// stable under a 1e-3 perturbation.
fn distinct_tensor<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n)
        .map(|i| i as f64 * 0.01 + rng.gen_range(0.0..0.004) - n as f64 * 0.005)
        .collect();
    v.shuffle(rng);
    Tensor::new(shape.to_vec(), v).unwrap()
}

fn run<F>(op: &'static str, cases: usize, seed: u64, mut case: F) -> OpResult
where
    F: FnMut(&mut ChaCha8Rng) -> f64,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let worst = (0..cases).map(|_| case(&mut rng)).fold(0.0, f64::max);
    OpResult { op, cases, worst }
}

pub fn gradient_suite(cases: usize) -> Vec<OpResult> {
    let mut out = Vec::new();

    out.push(run("dense", cases, 1, |rng| {
        let (b, i, o) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..5));
        let ins = [
            random_tensor(&[b, i], 1.0, rng),
            random_tensor(&[i, o], 1.0, rng),
            random_tensor(&[o], 1.0, rng),
        ];
        let mut r = ChaCha8Rng::seed_from_u64(rng.gen());
        fd_max_error(&ins, &mut r, |g, v| g.dense(v[0], v[1], Some(v[2])).unwrap())
    }));

    out.push(run("conv2d", cases, 2, |rng| {
        let (c, k) = (rng.gen_range(1..3), rng.gen_range(1..3));
        let (kh, kw) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let (h, w) = (rng.gen_range(kh..kh + 3), rng.gen_range(kw..kw + 3));
        let stride = (rng.gen_range(1..3), rng.gen_range(1..3));
        let pad = (rng.gen_range(0..2), rng.gen_range(0..2));
        let ins = [
            random_tensor(&[1, c, h, w], 1.0, rng),
            random_tensor(&[k, c, kh, kw], 1.0, rng),
            random_tensor(&[k], 1.0, rng),
        ];
        let mut r = ChaCha8Rng::seed_from_u64(rng.gen());
        fd_max_error(&ins, &mut r, |g, v| {
            g.conv2d(v[0], v[1], Some(v[2]), stride, pad).unwrap()
        })
    }));

    out.push(run("relu", cases, 3, |rng| {
        let n = rng.gen_range(1..12);
        let ins = [tensor_avoiding(&[n], 1.0, &[0.0], 2e-3, rng)];
        let mut r = ChaCha8Rng::seed_from_u64(rng.gen());
        fd_max_error(&ins, &mut r, |g, v| g.relu(v[0]))
    }));

    out.push(run("max_elementwise", cases, 4, |rng| {
        let n = rng.gen_range(1..12);
        let a = random_tensor(&[n], 1.0, rng);
        let gap = tensor_avoiding(&[n], 0.5, &[0.0], 2e-3, rng);
        let b = Tensor::from_fn(&[n], |i| a.data()[i] + gap.data()[i]);
        let mut r = ChaCha8Rng::seed_from_u64(rng.gen());
        fd_max_error(&[a, b], &mut r, |g, v| g.max_elementwise(v[0], v[1]).unwrap())
    }));

    out.push(run("max_pool2d", cases, 5, |rng| {
        let c = rng.gen_range(1..3);
        let (h, w) = (rng.gen_range(2..6), rng.gen_range(2..6));
        let ins = [distinct_tensor(&[1, c, h, w], rng)];
        let mut r = ChaCha8Rng::seed_from_u64(rng.gen());
        fd_max_error(&ins, &mut r, |g, v| g.max_pool2d(v[0], (2, 2), (2, 2)).unwrap())
    }));

    out.push(run("softmax_cross_entropy", cases, 6, |rng| {
        let (b, k) = (rng.gen_range(1..4), rng.gen_range(2..6));
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..k)).collect();
        let ins = [random_tensor(&[b, k], 2.0, rng)];
        let mut r = ChaCha8Rng::seed_from_u64(rng.gen());
        fd_max_error(&ins, &mut r, |g, v| g.softmax_cross_entropy(v[0], &labels).unwrap())
    }));

    out.push(run("smooth_l1", cases, 7, |rng| {
        let n = rng.gen_range(1..10);
        let t = random_tensor(&[n], 1.0, rng);
        let d = tensor_avoiding(&[n], 2.0, &[-1.0, 1.0], 3e-3, rng);
        let p = Tensor::from_fn(&[n], |i| t.data()[i] + d.data()[i]);
        let weights: Vec<f64> = (0..n).map(|_| rng.gen_range(0.1..2.0)).collect();
        let mut r = ChaCha8Rng::seed_from_u64(rng.gen());
        fd_max_error(&[p, t], &mut r, |g, v| g.smooth_l1(v[0], v[1], &weights).unwrap())
    }));

    out.push(run("skeleton_transform", cases, 8, |rng| {
        let (b, t, n, m) = (
            rng.gen_range(1..3),
            rng.gen_range(1..4),
            rng.gen_range(1..5),
            rng.gen_range(1..5),
        );
        let ins = [random_tensor(&[b, 3, t, n], 1.0, rng), random_tensor(&[n, m], 1.0, rng)];
        let mut r = ChaCha8Rng::seed_from_u64(rng.gen());
        fd_max_error(&ins, &mut r, |g, v| skeleton_transform(g, v[0], v[1]).unwrap())
    }));

    out.push(run("crop_and_resize_1d", cases, 9, |rng| {
        let (c, f, bins) = (rng.gen_range(1..3), rng.gen_range(2..8), rng.gen_range(1..6));
        let stride = 8.0;
        let span = f as f64 * stride;
        let windows: Vec<Window> = (0..rng.gen_range(1..4))
            .map(|_| {
                let s = rng.gen_range(0.0..span - 1.0);
                Window::new(s, rng.gen_range(s + 0.5..=span))
            })
            .collect();
        let ins = [random_tensor(&[c, f], 1.0, rng)];
        let mut r = ChaCha8Rng::seed_from_u64(rng.gen());
        fd_max_error(&ins, &mut r, |g, v| {
            crop_and_resize_1d(g, v[0], &windows, 8, bins).unwrap().0
        })
    }));

    out.push(run("elementwise_add_sub_mul_scale", cases, 10, |rng| {
        let n = rng.gen_range(1..8);
        let ins = [random_tensor(&[n], 1.0, rng), random_tensor(&[n], 1.0, rng)];
        let mut r = ChaCha8Rng::seed_from_u64(rng.gen());
        fd_max_error(&ins, &mut r, |g, v| {
            let s = g.add(v[0], v[1]).unwrap();
            let d = g.sub(v[0], v[1]).unwrap();
            let p = g.mul(s, d).unwrap();
            g.scale(p, 1.7)
        })
    }));

    out.push(run("concat_gather_reshape", cases, 11, |rng| {
        let (a, b, w) = (rng.gen_range(1..4), rng.gen_range(1..4), rng.gen_range(1..4));
        let ins = [random_tensor(&[2, a, w], 1.0, rng), random_tensor(&[2, b, w], 1.0, rng)];
        let total = 2 * (a + b) * w;
        let idx: Vec<usize> = (0..6).map(|_| rng.gen_range(0..total)).collect();
        let mut r = ChaCha8Rng::seed_from_u64(rng.gen());
        fd_max_error(&ins, &mut r, |g, v: &[Var]| {
            let c = g.concat(&[v[0], v[1]], 1).unwrap();
            let flat = g.reshape(c, &[total]).unwrap();
            let picked = g.gather(flat, &idx, &[2, 3]).unwrap();
            g.mul(picked, picked).unwrap()
        })
    }));

    out.push(run("linear_resample", cases, 12, |rng| {
        let (c, l, w) = (rng.gen_range(1..3), rng.gen_range(2..6), rng.gen_range(1..3));
        let positions: Vec<Vec<f64>> = (0..2)
            .map(|_| (0..3).map(|_| rng.gen_range(-0.5..l as f64 - 0.5)).collect())
            .collect();
        let ins = [random_tensor(&[c, l, w], 1.0, rng)];
        let mut r = ChaCha8Rng::seed_from_u64(rng.gen());
        fd_max_error(&ins, &mut r, |g, v| g.linear_resample(v[0], &positions).unwrap())
    }));

    out
}
