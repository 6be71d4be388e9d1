use evmx_core::gradcheck::{cvae_gradient_check, snn_gradient_check};

#[test]
fn snn_bptt_matches_finite_differences() {
    for seed in [1, 2] {
        let c = snn_gradient_check(seed, 1e-4);
        assert!(c.entries > 100);
        assert!(c.max_relative_error < 1e-3, "seed {seed}: {c:?}");
    }
}

#[test]
fn cvae_backprop_matches_finite_differences() {
    for seed in [1, 2] {
        let c = cvae_gradient_check(seed, 1e-4);
        assert!(c.entries > 100);
        assert!(c.max_relative_error < 1e-3, "seed {seed}: {c:?}");
    }
}
