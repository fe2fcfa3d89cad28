use mcn_core::checks::{check_op_gradients, check_total_loss_gradient, Fault, GRAD_TOLERANCE};
use mcn_core::tensor::{grad_check, Tape, Tensor};
use proptest::prelude::*;

#[test]
fn every_op_passes_ten_seeds() {
    let r = check_op_gradients(10, None);
    assert!(r.passed, "{}", r.detail);
}

#[test]
fn full_loss_gradient_matches_finite_differences() {
    let r = check_total_loss_gradient(3);
    assert!(r.passed, "{}", r.detail);
}

#[test]
fn sign_flipped_focal_gradient_is_caught() {
    let r = check_op_gradients(2, Some(Fault::FocalSign));
    assert!(!r.passed);
    assert!(r.detail.contains("focal_loss"), "{}", r.detail);
}

#[test]
fn relu_sum_gradient_by_central_differences() {
    let x = Tensor::new(vec![2], vec![-1.0f64, 2.0]).unwrap();
    let mut tape = Tape::new();
    let v = tape.leaf(&x.clone().with_requires_grad(true));
    let y = tape.relu(v);
    let s = tape.sum(y);
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(v).unwrap(), &[0.0, 1.0]);
    let err = grad_check(|t, v| { let y = t.relu(v); Ok(t.sum(y)) }, &x, 1e-6).unwrap();
    assert!(err <= GRAD_TOLERANCE);
}

#[test]
fn conv_output_shape_stride_two() {
    let mut tape = Tape::<f32>::new();
    let x = tape.leaf(&Tensor::zeros(vec![1, 1, 8, 8]));
    let w = tape.leaf(&Tensor::zeros(vec![1, 1, 3, 3]));
    let y = tape.conv2d(x, w, None, 2, 1).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 4, 4]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn softmax_is_a_distribution_and_shift_invariant(
        vals in prop::collection::vec(-20.0f64..20.0, 12),
        shift in -50.0f64..50.0,
    ) {
        let x = Tensor::new(vec![1, 3, 2, 2], vals.clone()).unwrap();
        let shifted = Tensor::new(vec![1, 3, 2, 2], vals.iter().map(|v| v + shift).collect()).unwrap();
        let mut tape = Tape::inference();
        let a = tape.leaf(&x);
        let a = tape.softmax_channels(a).unwrap();
        let b = tape.leaf(&shifted);
        let b = tape.softmax_channels(b).unwrap();
        let (pa, pb) = (tape.value(a).to_vec(), tape.value(b).to_vec());
        for p in 0..4 {
            let s: f64 = (0..3).map(|c| pa[c * 4 + p]).sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        for (u, v) in pa.iter().zip(&pb) {
            prop_assert!(*u >= 0.0 && *u <= 1.0);
            prop_assert!((u - v).abs() < 1e-9);
        }
    }
}

#[test]
fn nan_survives_relu_and_sigmoid() {
    let x = Tensor::new(vec![1], vec![f64::NAN]).unwrap();
    let mut tape = Tape::inference();
    let v = tape.leaf(&x);
    let r = tape.relu(v);
    let s = tape.sigmoid(v);
    assert!(tape.value(r)[0].is_nan() && tape.value(s)[0].is_nan());
}
