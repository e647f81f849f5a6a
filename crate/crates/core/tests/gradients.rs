use vocspec::gradcheck::{cvae_check, discriminator_check, operator_suite};

const TOLERANCE: f64 = 1e-4;

#[test]
fn every_operator_matches_finite_differences() {
    for seed in [1, 2] {
        for (name, err) in operator_suite(seed).unwrap() {
            assert!(err < TOLERANCE, "{name}: relative error {err:e} (seed {seed})");
        }
    }
}

#[test]
fn miniature_discriminator_matches_finite_differences() {
    let err = discriminator_check(3).unwrap();
    assert!(err < TOLERANCE, "relative error {err:e}");
}

#[test]
fn miniature_cvae_matches_finite_differences() {
    let err = cvae_check(4).unwrap();
    assert!(err < TOLERANCE, "relative error {err:e}");
}
