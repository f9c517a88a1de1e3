mod common;

use common::gradcheck::{self, Checks};

fn check(f: impl FnOnce(&mut Checks)) {
    let mut c = Checks::default();
    f(&mut c);
    assert!(!c.errors.is_empty());
    c.assert_ok();
}

#[test]
fn conv1d_gradients() {
    check(gradcheck::conv1d_gradients);
}

#[test]
fn linear_gradients() {
    check(gradcheck::linear_gradients);
}

#[test]
fn batchnorm_gradients_rank2_and_rank3() {
    check(gradcheck::batchnorm_gradients_rank2_and_rank3);
}

#[test]
fn leaky_relu_gradient() {
    check(gradcheck::leaky_relu_gradient);
}

#[test]
fn maxpool_gradient_off_ties() {
    check(gradcheck::maxpool_gradient_off_ties);
}

#[test]
fn dropout_gradient_with_fixed_mask() {
    check(gradcheck::dropout_gradient_with_fixed_mask);
}

#[test]
fn mse_gradient() {
    check(gradcheck::mse_gradient);
}

#[test]
fn tiny_cnn_end_to_end() {
    check(|c| gradcheck::cnn_end_to_end(c, 0.0, 70));
}

#[test]
fn tiny_cnn_end_to_end_with_dropout() {
    check(|c| gradcheck::cnn_end_to_end(c, 0.3, 80));
}

#[test]
fn lstm_bptt() {
    check(|c| gradcheck::lstm_bptt(c, false, 90));
}

#[test]
fn lstm_bptt_with_readout_dropout() {
    check(|c| gradcheck::lstm_bptt(c, true, 100));
}
