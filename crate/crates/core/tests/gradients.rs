mod common;

use common::{gradient_suite, GRAD_KINDS, GRAD_TOLERANCE};

#[test]
fn suite_matches_central_differences() {
    let cases = gradient_suite(60, 1);
    for c in &cases {
        assert!(c.coords > 0, "{:?} seed {} checked no coordinates", c.kind, c.seed);
        assert!(c.max_rel < GRAD_TOLERANCE, "{:?} seed {}: max relative error {:.3e}", c.kind, c.seed, c.max_rel);
    }
    for k in GRAD_KINDS {
        assert!(cases.iter().filter(|c| c.kind == k).count() >= 10, "{k:?} under-covered");
    }
}

#[test]
fn second_seed_family() {
    for c in gradient_suite(25, 99) {
        assert!(c.max_rel < GRAD_TOLERANCE, "{:?} seed {}: {:.3e}", c.kind, c.seed, c.max_rel);
    }
}
