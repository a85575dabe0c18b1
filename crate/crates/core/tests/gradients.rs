use facedeblur::trainer::{finite_diff_gradcheck, GradcheckLoss};

fn check(loss: GradcheckLoss, tol: f64) {
    let r = finite_diff_gradcheck(loss, 7, 1e-3).unwrap();
    assert!(r.checked > 5000, "{r:?}");
    assert!(r.max_rel_error < tol, "{loss:?}: {r:?}");
}

#[test]
fn content_loss_gradients() {
    check(GradcheckLoss::Content, 1e-6);
}

#[test]
fn structural_loss_gradients_with_one_hot_masks() {
    check(GradcheckLoss::Structural, 1e-6);
}

#[test]
fn perceptual_loss_gradients() {
    check(GradcheckLoss::Perceptual, 1e-6);
}

#[test]
fn total_loss_gradients() {
    check(GradcheckLoss::Total, 1e-6);
}
