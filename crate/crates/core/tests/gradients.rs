mod common;
#[path = "common/grad_cases.rs"]
#[allow(dead_code)]
mod grad_cases;

fn check(cases: Vec<(&'static str, f64)>, tol: f64) {
    for (name, err) in cases {
        assert!(err < tol, "{name}: relative error {err:e}");
    }
}

#[test]
fn elementwise_matches_finite_differences() {
    check(grad_cases::elementwise(), 1e-5);
}

#[test]
fn conv2d_matches_finite_differences() {
    check(grad_cases::conv2d(), 1e-4);
}

#[test]
fn resample_matches_finite_differences() {
    check(grad_cases::resample(), 1e-5);
}

#[test]
fn grid_sample_matches_finite_differences() {
    check(grad_cases::grid_sample(), 1e-5);
}

#[test]
fn structural_ops_match_finite_differences() {
    check(grad_cases::structural(), 1e-5);
}

#[test]
fn reductions_match_finite_differences() {
    check(grad_cases::reduce(), 1e-5);
}

#[test]
fn eid_loss_matches_finite_differences() {
    check(grad_cases::eid(), 1e-4);
}
