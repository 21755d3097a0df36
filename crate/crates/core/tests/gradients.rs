//! Backpropagation against central finite differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scatternet::neuralnet::{gradient_check, FeatureTensor, GradientCheck, NetworkBuilder, Target};

const STEP: f64 = 1e-3;
const TOL: f64 = 1e-4;

fn random_input(c: usize, h: usize, w: usize, seed: u64) -> FeatureTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureTensor::new(c, h, w, (0..c * h * w).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn assert_every_parameter(gc: &GradientCheck) {
    assert_eq!(gc.kink_count(), 0, "stencil crosses a kink; finite differences are not an oracle here");
    let (i, err) = gc.worst();
    assert!(err < TOL, "parameter {i}: analytic {} vs numeric {} (rel {err:e})", gc.analytic[i], gc.numeric[i]);
}

#[test]
fn two_conv_pool_dense_on_8x8() {
    let net = NetworkBuilder::new(1, 8, 8)
        .conv(3, 3, 1)
        .relu()
        .conv(3, 3, 1)
        .relu()
        .max_pool(2, 2)
        .dense(4)
        .build(0)
        .unwrap();
    let gc = gradient_check(&net, &random_input(1, 8, 8, 100), &Target::Class(1), STEP).unwrap();
    assert_eq!(gc.analytic.len(), net.param_count());
    assert_every_parameter(&gc);
}

#[test]
fn smooth_parameters_match_across_seeds() {
    for seed in 0..20 {
        let net = NetworkBuilder::new(1, 8, 8)
            .conv(3, 3, 1)
            .relu()
            .conv(3, 3, 1)
            .relu()
            .max_pool(2, 2)
            .dense(4)
            .build(seed)
            .unwrap();
        let gc = gradient_check(&net, &random_input(1, 8, 8, seed + 100), &Target::Class(1), STEP).unwrap();
        for i in (0..gc.analytic.len()).filter(|&i| !gc.kinked[i]) {
            assert!(gc.relative_error(i) < TOL, "seed {seed}, parameter {i}");
        }
    }
}

#[test]
fn conv_alone() {
    // a 3x3 input and 3x3 kernels give 1x1 maps, used directly as logits
    let net = NetworkBuilder::new(2, 3, 3).conv(3, 3, 1).build(1).unwrap();
    let gc = gradient_check(&net, &random_input(2, 3, 3, 1), &Target::Class(2), STEP).unwrap();
    assert_every_parameter(&gc);
}

#[test]
fn strided_conv_then_dense() {
    let net = NetworkBuilder::new(1, 7, 7).conv(2, 3, 2).dense(3).build(2).unwrap();
    let gc = gradient_check(&net, &random_input(1, 7, 7, 2), &Target::Class(0), STEP).unwrap();
    assert_every_parameter(&gc);
}

#[test]
fn dense_alone_with_soft_target() {
    let net = NetworkBuilder::new(1, 2, 3).dense(3).build(3).unwrap();
    let target = Target::Distribution(vec![0.2, 0.5, 0.3]);
    let gc = gradient_check(&net, &random_input(1, 2, 3, 3), &target, STEP).unwrap();
    assert_every_parameter(&gc);
}

#[test]
fn relu_between_dense_layers() {
    let net = NetworkBuilder::new(1, 1, 6).dense(5).relu().dense(3).build(4).unwrap();
    let gc = gradient_check(&net, &random_input(1, 1, 6, 4), &Target::Class(1), STEP).unwrap();
    assert_every_parameter(&gc);
}

#[test]
fn sigmoid_between_dense_layers() {
    let net = NetworkBuilder::new(1, 1, 6).dense(5).sigmoid().dense(3).build(5).unwrap();
    let gc = gradient_check(&net, &random_input(1, 1, 6, 5), &Target::Class(2), STEP).unwrap();
    assert_every_parameter(&gc);
}

#[test]
fn pooling_between_conv_and_dense() {
    let net = NetworkBuilder::new(1, 6, 6).conv(2, 3, 1).max_pool(2, 2).dense(2).build(6).unwrap();
    let gc = gradient_check(&net, &random_input(1, 6, 6, 6), &Target::Class(0), STEP).unwrap();
    assert_every_parameter(&gc);
}

#[test]
fn kinks_are_reported_not_hidden() {
    // seed 1 of the two-conv network is known to place ReLU inputs within
    // the stencil width of zero
    let net = NetworkBuilder::new(1, 8, 8)
        .conv(3, 3, 1)
        .relu()
        .conv(3, 3, 1)
        .relu()
        .max_pool(2, 2)
        .dense(4)
        .build(1)
        .unwrap();
    let gc = gradient_check(&net, &random_input(1, 8, 8, 101), &Target::Class(1), STEP).unwrap();
    assert!(gc.kink_count() > 0);
    let (i, err) = gc.worst();
    assert!(err > TOL && gc.kinked[i]);
}

#[test]
fn rejects_bad_step() {
    let net = NetworkBuilder::new(1, 1, 2).dense(2).build(0).unwrap();
    let x = random_input(1, 1, 2, 0);
    assert!(gradient_check(&net, &x, &Target::Class(0), 0.0).is_err());
    assert!(gradient_check(&net, &x, &Target::Class(0), f64::NAN).is_err());
}
