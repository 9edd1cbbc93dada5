mod common;

use common::{
    actor_gradient_error, critic_gradient_error, pipeline_gradient_error, FdCheck, MAX_CHECK_PARAMS,
};

const TOLERANCE: f64 = 1e-4;
/// Straddled kinks are skipped, but only a handful may be.
const MAX_KINK_FRACTION: f64 = 0.05;

fn assert_check(label: &str, check: FdCheck) {
    assert!(
        check.params <= MAX_CHECK_PARAMS,
        "{label}: {} params",
        check.params
    );
    assert!(
        check.kink_fraction() <= MAX_KINK_FRACTION,
        "{label}: {check:?}"
    );
    assert!(
        check.max_rel_err <= TOLERANCE,
        "{label}: relative error {:e}",
        check.max_rel_err
    );
}

#[test]
fn actor_gradients_match_finite_differences() {
    for seed in 0..25 {
        assert_check(&format!("actor seed {seed}"), actor_gradient_error(seed));
    }
}

#[test]
fn critic_gradients_match_finite_differences() {
    for seed in 100..125 {
        assert_check(&format!("critic seed {seed}"), critic_gradient_error(seed));
    }
}

#[test]
fn update_pipeline_matches_finite_differences() {
    for seed in 0..3 {
        let (actor, critic) = pipeline_gradient_error(seed);
        assert_check(&format!("pipeline actor seed {seed}"), actor);
        assert_check(&format!("pipeline critic seed {seed}"), critic);
    }
}
