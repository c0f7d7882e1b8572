use super::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t64(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Central finite differences (h = 1e-5, f64) against the tape gradient.
/// Error metric: |analytic - numeric| / max(1, |analytic|, |numeric|).
pub(crate) fn grad_check<F>(f: F, x: &Tensor<f64>, tol: f64)
where
    F: Fn(&Tensor<f64>) -> Tensor<f64>,
{
    let tape = GradTape::new();
    let xt = tape.watch(x);
    let loss = f(&xt);
    let analytic = tape.backward(&loss).unwrap().grad(&xt);

    let h = 1e-5;
    let base = x.to_vec();
    for i in 0..x.len() {
        let mut plus = base.clone();
        plus[i] += h;
        let mut minus = base.clone();
        minus[i] -= h;
        let fp = f(&Tensor::new(x.shape().to_vec(), plus).unwrap()).item();
        let fm = f(&Tensor::new(x.shape().to_vec(), minus).unwrap()).item();
        let numeric = (fp - fm) / (2.0 * h);
        let a = analytic.data()[i];
        let err = (a - numeric).abs() / 1.0_f64.max(a.abs()).max(numeric.abs());
        assert!(
            err <= tol,
            "gradient mismatch at {}: analytic {} vs numeric {} (err {})",
            i,
            a,
            numeric,
            err
        );
    }
}

#[test]
fn matmul_identity_case() {
    let eye = t64(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
    let a = t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    assert!(eye.matmul(&a).unwrap().bitwise_eq(&a));
    // (A*I)*B == A*B bit-exactly
    let b = t64(&[2, 2], &[0.5, -1.5, 2.5, 0.25]);
    let lhs = a.matmul(&eye).unwrap().matmul(&b).unwrap();
    let rhs = a.matmul(&b).unwrap();
    assert!(lhs.bitwise_eq(&rhs));
}

#[test]
fn matmul_hand_computed() {
    let a = t64(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
    let b = t64(&[2, 1], &[5.0, 6.0]);
    let c = a.matmul(&b).unwrap();
    assert_eq!(c.shape(), &[2, 1]);
    assert_eq!(c.data(), &[17.0, 39.0]);
}

#[test]
fn matmul_annihilator() {
    let z = Tensor::<f64>::zeros(&[2, 3]);
    let o = Tensor::<f64>::ones(&[3, 4]);
    let c = z.matmul(&o).unwrap();
    assert_eq!(c.shape(), &[2, 4]);
    assert!(c.data().iter().all(|&v| v == 0.0));
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let a = Tensor::<f64>::zeros(&[2, 3]);
    let b = Tensor::<f64>::zeros(&[4, 5]);
    let msg = a.matmul(&b).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[4, 5]"), "{msg}");
}

#[test]
fn matmul_batched_vs_per_slice() {
    let a = random_tensor(&[3, 2, 4], 1);
    let b = random_tensor(&[3, 4, 5], 2);
    let c = a.matmul(&b).unwrap();
    for i in 0..3 {
        let ai = t64(&[2, 4], &a.data()[i * 8..(i + 1) * 8]);
        let bi = t64(&[4, 5], &b.data()[i * 20..(i + 1) * 20]);
        let ci = ai.matmul(&bi).unwrap();
        assert_eq!(&c.data()[i * 10..(i + 1) * 10], ci.data());
    }
}

#[test]
fn softmax_uniform_and_stability() {
    let x = t64(&[4], &[0.0; 4]);
    let y = x.softmax(0).unwrap();
    assert_eq!(y.data(), &[0.25; 4]);

    let big = t64(&[2], &[1000.0, 1000.0]);
    let y = big.softmax(0).unwrap();
    assert_eq!(y.data(), &[0.5, 0.5]);
}

#[test]
fn softmax_closed_form() {
    let x = t64(&[2], &[2.0_f64.ln(), 0.0]);
    let y = x.softmax(0).unwrap();
    assert!((y.data()[0] - 2.0 / 3.0).abs() < 1e-12);
    assert!((y.data()[1] - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn softmax_shift_invariance() {
    let x = random_tensor(&[3, 5], 9);
    let shifted = x.scale(1.0).add(&Tensor::full(&[3, 5], 7.25)).unwrap();
    let a = x.softmax(1).unwrap();
    let b = shifted.softmax(1).unwrap();
    assert!(a.max_abs_diff(&b) < 1e-7);
    // rows sum to 1
    for row in 0..3 {
        let s: f64 = a.data()[row * 5..(row + 1) * 5].iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn layer_norm_examples() {
    let gamma = Tensor::<f64>::ones(&[3]);
    let beta = Tensor::<f64>::zeros(&[3]);
    // constant vector -> zeros
    let y = Tensor::full(&[3], 4.2)
        .layer_norm(&gamma, &beta, 1e-5)
        .unwrap();
    assert!(y.data().iter().all(|&v| v.abs() < 1e-6));

    // [1, -1]: mean 0, population variance 1
    let g2 = Tensor::<f64>::ones(&[2]);
    let b2 = Tensor::<f64>::zeros(&[2]);
    let y = t64(&[2], &[1.0, -1.0]).layer_norm(&g2, &b2, 1e-12).unwrap();
    assert!((y.data()[0] - 1.0).abs() < 1e-6);
    assert!((y.data()[1] + 1.0).abs() < 1e-6);

    // gamma = 0, beta = 5 -> all 5
    let y = random_tensor(&[4, 3], 3)
        .layer_norm(&Tensor::zeros(&[3]), &Tensor::full(&[3], 5.0), 1e-5)
        .unwrap();
    assert!(y.data().iter().all(|&v| v == 5.0));
}

#[test]
fn gelu_reference_points() {
    let y = t64(&[3], &[0.0, 1.0, 100.0]).gelu();
    assert_eq!(y.data()[0], 0.0);
    assert!((y.data()[1] - 0.841345).abs() < 1e-6);
    assert!((y.data()[2] - 100.0).abs() < 1e-9);
}

#[test]
fn conv2d_hand_computed() {
    let x = Tensor::<f64>::ones(&[1, 1, 3, 3]);
    let w = Tensor::<f64>::ones(&[1, 1, 3, 3]);
    let b = Tensor::<f64>::zeros(&[1]);
    let y = x.conv2d(&w, &b, 1).unwrap();
    assert_eq!(y.shape(), &[1, 1, 3, 3]);
    assert_eq!(
        y.data(),
        &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]
    );
}

#[test]
fn conv2d_identity_and_bias() {
    let x = random_tensor(&[1, 1, 4, 5], 4);
    let eye = Tensor::<f64>::ones(&[1, 1, 1, 1]);
    let y = x.conv2d(&eye, &Tensor::zeros(&[1]), 0).unwrap();
    assert!(y.bitwise_eq(&x.reshape(&[1, 1, 4, 5]).unwrap()));

    let zw = Tensor::<f64>::zeros(&[2, 1, 3, 3]);
    let bias = t64(&[2], &[3.5, -1.0]);
    let y = x.conv2d(&zw, &bias, 1).unwrap();
    assert!(y.data()[..20].iter().all(|&v| v == 3.5));
    assert!(y.data()[20..].iter().all(|&v| v == -1.0));
}

#[test]
fn conv2d_channel_mismatch_error() {
    let x = Tensor::<f64>::zeros(&[1, 2, 4, 4]);
    let w = Tensor::<f64>::zeros(&[1, 3, 3, 3]);
    assert!(x.conv2d(&w, &Tensor::zeros(&[1]), 1).is_err());
}

#[test]
fn pixel_shuffle_definition_and_shapes() {
    let x = t64(&[1, 4, 1, 1], &[1.0, 2.0, 3.0, 4.0]);
    let y = x.pixel_shuffle(2).unwrap();
    assert_eq!(y.shape(), &[1, 1, 2, 2]);
    assert_eq!(y.data(), &[1.0, 2.0, 3.0, 4.0]);

    let x = random_tensor(&[1, 8, 2, 3], 5);
    let y = x.pixel_shuffle(2).unwrap();
    assert_eq!(y.shape(), &[1, 2, 4, 6]);
    // bijection and multiset preservation
    let back = y.pixel_unshuffle(2).unwrap();
    assert!(back.bitwise_eq(&x));
    let mut a = x.to_vec();
    let mut b = y.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    assert_eq!(a, b);

    assert!(random_tensor(&[1, 3, 2, 2], 6).pixel_shuffle(2).is_err());
}

#[test]
fn backward_sum_of_squares() {
    let x = t64(&[3], &[1.0, 2.0, 3.0]);
    let tape = GradTape::new();
    let xt = tape.watch(&x);
    let loss = xt.mul(&xt).unwrap().sum_all();
    let g = tape.backward(&loss).unwrap().grad(&xt);
    assert_eq!(g.data(), &[2.0, 4.0, 6.0]);
}

#[test]
fn backward_softmax_sum_is_constant() {
    let x = random_tensor(&[5], 8);
    let tape = GradTape::new();
    let xt = tape.watch(&x);
    let loss = xt.softmax(0).unwrap().sum_all();
    let g = tape.backward(&loss).unwrap().grad(&xt);
    assert!(g.data().iter().all(|&v| v.abs() < 1e-12));
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let x = random_tensor(&[3], 10);
    let tape = GradTape::new();
    let xt = tape.watch(&x);
    let y = xt.mul(&xt).unwrap();
    assert!(matches!(
        tape.backward(&y),
        Err(crate::error::Error::NonScalarLoss { .. })
    ));
}

#[test]
fn untouched_parameter_gets_zero_gradient() {
    let x = random_tensor(&[3], 11);
    let unused = random_tensor(&[2], 12);
    let tape = GradTape::new();
    let xt = tape.watch(&x);
    let ut = tape.watch(&unused);
    let loss = xt.sum_all();
    let grads = tape.backward(&loss).unwrap();
    assert_eq!(grads.grad(&ut).data(), &[0.0, 0.0]);
}

#[test]
fn composite_gradient_matches_finite_differences() {
    // matmul -> gelu -> layer_norm -> mean, random weights folded in
    let w = random_tensor(&[4, 4], 21);
    let gamma = random_tensor(&[4], 22);
    let beta = random_tensor(&[4], 23);
    let x = random_tensor(&[3, 4], 20);
    grad_check(
        |x| {
            x.matmul(&w)
                .unwrap()
                .gelu()
                .layer_norm(&gamma, &beta, 1e-5)
                .unwrap()
                .mean_all()
        },
        &x,
        1e-4,
    );
}

#[test]
fn per_op_gradients_match_finite_differences() {
    let x = random_tensor(&[2, 3, 4], 30);
    let other = random_tensor(&[2, 3, 4], 31);
    grad_check(|x| x.mul(&other).unwrap().mean_all(), &x, 1e-4);
    grad_check(|x| x.softmax(2).unwrap().mul(&other).unwrap().mean_all(), &x, 1e-4);
    grad_check(|x| x.gelu().mul(&other).unwrap().sum_all(), &x, 1e-4);

    let img = random_tensor(&[1, 2, 5, 5], 32);
    let w = random_tensor(&[3, 2, 3, 3], 33);
    let b = random_tensor(&[3], 34);
    let r = random_tensor(&[1, 3, 5, 5], 35);
    grad_check(
        |x| x.conv2d(&w, &b, 1).unwrap().mul(&r).unwrap().mean_all(),
        &img,
        1e-4,
    );
    grad_check(|x| x.conv2d(&w, &b, 1).unwrap().mean_all(), &w.clone(), 1e-4);

    let bias = random_tensor(&[4], 36);
    let x2 = random_tensor(&[3, 4], 37);
    grad_check(|x| x.add_bcast(&bias).unwrap().mul(&x).unwrap().mean_all(), &x2, 1e-4);

    let alpha = t64(&[1], &[0.7]);
    grad_check(|x| x.scale_by(&alpha).unwrap().mul(&x).unwrap().sum_all(), &x2, 1e-4);

    let table = random_tensor(&[5, 3], 38);
    grad_check(
        |t| {
            t.gather_rows(&[0, 2, 2, 4])
                .unwrap()
                .mul(&t.gather_rows(&[1, 1, 3, 0]).unwrap())
                .unwrap()
                .mean_all()
        },
        &table,
        1e-4,
    );

    let sp = random_tensor(&[1, 8, 2, 2], 39);
    let rr = random_tensor(&[1, 2, 4, 4], 40);
    grad_check(
        |x| x.pixel_shuffle(2).unwrap().mul(&rr).unwrap().mean_all(),
        &sp,
        1e-4,
    );

    let p = random_tensor(&[1, 3, 4, 2], 41);
    let rp = random_tensor(&[1, 5, 6, 2], 42);
    grad_check(
        |x| {
            x.pad_hw(2, 2)
                .unwrap()
                .roll_hw(1, -2)
                .unwrap()
                .mul(&rp)
                .unwrap()
                .mean_all()
        },
        &p,
        1e-4,
    );
}

#[test]
fn conv_weight_gradient_matches_finite_differences() {
    let img = random_tensor(&[2, 2, 4, 4], 50);
    let w0 = random_tensor(&[2, 2, 3, 3], 51);
    let b0 = random_tensor(&[2], 52);
    let r = random_tensor(&[2, 2, 4, 4], 53);
    grad_check(
        |w| img.conv2d(w, &b0, 1).unwrap().mul(&r).unwrap().mean_all(),
        &w0,
        1e-4,
    );
    grad_check(
        |b| img.conv2d(&w0, b, 1).unwrap().mul(&r).unwrap().mean_all(),
        &b0,
        1e-4,
    );
}

#[test]
fn layer_norm_param_gradients() {
    let x = random_tensor(&[6, 4], 60);
    let g0 = random_tensor(&[4], 61);
    let b0 = random_tensor(&[4], 62);
    let r = random_tensor(&[6, 4], 63);
    grad_check(
        |g| x.layer_norm(g, &b0, 1e-5).unwrap().mul(&r).unwrap().mean_all(),
        &g0,
        1e-4,
    );
    grad_check(
        |b| x.layer_norm(&g0, b, 1e-5).unwrap().mul(&r).unwrap().mean_all(),
        &b0,
        1e-4,
    );
    grad_check(
        |x| x.layer_norm(&g0, &b0, 1e-5).unwrap().mul(&r).unwrap().mean_all(),
        &x,
        1e-4,
    );
}

#[test]
fn abs_and_l1_style_gradient() {
    let x = t64(&[4], &[1.5, -2.0, 3.0, -0.5]);
    let tape = GradTape::new();
    let xt = tape.watch(&x);
    let loss = xt.abs().mean_all();
    let g = tape.backward(&loss).unwrap().grad(&xt);
    assert_eq!(g.data(), &[0.25, -0.25, 0.25, -0.25]);
}

#[test]
fn repeated_runs_are_bit_identical() {
    let a = random_tensor(&[4, 7, 6], 70);
    let b = random_tensor(&[4, 6, 5], 71);
    let c1 = a.matmul(&b).unwrap();
    let c2 = a.matmul(&b).unwrap();
    assert!(c1.bitwise_eq(&c2));
    let s1 = a.softmax(1).unwrap();
    let s2 = a.softmax(1).unwrap();
    assert!(s1.bitwise_eq(&s2));
}

#[test]
fn finite_outputs_from_exported_ops() {
    let a = random_tensor(&[2, 8, 8], 80).scale(1000.0);
    assert!(a.softmax(2).unwrap().all_finite());
    assert!(a.gelu().all_finite());
    assert!(a
        .layer_norm(&Tensor::ones(&[8]), &Tensor::zeros(&[8]), 1e-5)
        .unwrap()
        .all_finite());
}
