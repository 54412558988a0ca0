//! Central finite-difference checks for every layer's backward pass.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Conv2d, GroupNorm, Linear};
use super::ops;
use super::param::Module;
use super::tensor::Tensor;

fn random(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor {
    let len = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Checks `dx` against finite differences of `x ↦ <f(x), r>` on a few coordinates.
fn check_input_grad(x: &Tensor, r: &Tensor, dx: &Tensor, f: impl Fn(&Tensor) -> Tensor) {
    let h = 1e-2f32;
    let step = (x.data().len() / 13).max(1);
    for idx in (0..x.data().len()).step_by(step) {
        let mut xp = x.clone();
        xp.data_mut()[idx] += h;
        let mut xm = x.clone();
        xm.data_mut()[idx] -= h;
        let fd = (dot(&f(&xp), r) - dot(&f(&xm), r)) / (2.0 * h as f64);
        let an = dx.data()[idx] as f64;
        assert!(
            (fd - an).abs() <= 2e-2 * (1.0 + fd.abs()),
            "input grad mismatch at {idx}: fd {fd} vs analytic {an}"
        );
    }
}

fn check_param_grads<M: Module + Clone>(m: &M, x: &Tensor, r: &Tensor, f: impl Fn(&M, &Tensor) -> Tensor) {
    let h = 1e-2f32;
    let n_params = m.params().len();
    for pi in 0..n_params {
        let len = m.params()[pi].len();
        let step = (len / 7).max(1);
        for j in (0..len).step_by(step) {
            let mut mp = m.clone();
            mp.params_mut()[pi].value[j] += h;
            let mut mm = m.clone();
            mm.params_mut()[pi].value[j] -= h;
            let fd = (dot(&f(&mp, x), r) - dot(&f(&mm, x), r)) / (2.0 * h as f64);
            let an = m.params()[pi].grad[j] as f64;
            assert!(
                (fd - an).abs() <= 2e-2 * (1.0 + fd.abs()),
                "param {} [{j}] grad mismatch: fd {fd} vs analytic {an}",
                m.params()[pi].name
            );
        }
    }
}

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for (k, stride, pad) in [(3, 1, 1), (3, 2, 1), (1, 1, 0)] {
        let mut conv = Conv2d::new("c", 3, 4, k, stride, pad, &mut rng);
        let x = random([2, 3, 6, 6], &mut rng);
        let y = conv.forward(&x);
        let r = random(y.shape(), &mut rng);
        let dx = conv.backward(&x, &r);
        check_input_grad(&x, &r, &dx, |x| conv.forward(x));
        check_param_grads(&conv, &x, &r, |m, x| m.forward(x));
    }
}

#[test]
fn linear_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut lin = Linear::new("l", 5, 3, &mut rng);
    let x = random([4, 5, 1, 1], &mut rng);
    let r = random([4, 3, 1, 1], &mut rng);
    let dx = lin.backward(&x, &r);
    check_input_grad(&x, &r, &dx, |x| lin.forward(x));
    check_param_grads(&lin, &x, &r, |m, x| m.forward(x));
}

#[test]
fn group_norm_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut gn = GroupNorm::new("g", 2, 4);
    for p in gn.params_mut() {
        for v in p.value.iter_mut() {
            *v += rng.gen_range(-0.5..0.5);
        }
    }
    let x = random([2, 4, 3, 3], &mut rng);
    let r = random(x.shape(), &mut rng);
    let dx = gn.backward(&x, &r);
    check_input_grad(&x, &r, &dx, |x| gn.forward(x));
    check_param_grads(&gn, &x, &r, |m, x| m.forward(x));
}

#[test]
fn elementwise_and_reshaping_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random([2, 3, 4, 4], &mut rng);
    let r = random(x.shape(), &mut rng);
    check_input_grad(&x, &r, &ops::silu_backward(&x, &r), ops::silu);

    let up = ops::upsample2(&x);
    let ru = random(up.shape(), &mut rng);
    check_input_grad(&x, &ru, &ops::upsample2_backward(&ru), ops::upsample2);

    let scale = random([2, 3, 1, 1], &mut rng);
    let shift = random([2, 3, 1, 1], &mut rng);
    let (dx, dscale, dshift) = ops::modulate_backward(&x, &scale, &r);
    check_input_grad(&x, &r, &dx, |x| ops::modulate(x, &scale, &shift));
    check_input_grad(&scale, &r, &dscale, |s| ops::modulate(&x, s, &shift));
    check_input_grad(&shift, &r, &dshift, |b| ops::modulate(&x, &scale, b));
    check_input_grad(&shift, &r, &ops::channel_sums(&r), |b| ops::add_channel_bias(&x, b));
}

#[test]
fn batch_items_are_computed_independently() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let conv = Conv2d::new("c", 2, 3, 3, 1, 1, &mut rng);
    let a = random([1, 2, 5, 5], &mut rng);
    let b = random([1, 2, 5, 5], &mut rng);
    let both = Tensor::stack(&[&a, &b]).unwrap();
    let ya = conv.forward(&a);
    let yboth = conv.forward(&both);
    assert_eq!(ya.item(0), yboth.item(0));
}
