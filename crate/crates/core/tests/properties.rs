mod common;

use std::sync::OnceLock;

use proptest::prelude::*;
use tempfile::TempDir;

use clbench::nn::masked_softmax_xent;
use clbench::scenario::task_permutation;

fn data_root() -> &'static std::path::Path {
    static DIR: OnceLock<TempDir> = OnceLock::new();
    let d = DIR.get_or_init(|| {
        let d = tempfile::tempdir().unwrap();
        common::write_synth_mnist(d.path(), 30, 10);
        d
    });
    d.path()
}

#[test]
fn gradient_checks_pass_for_every_arch() {
    for (name, err) in common::gradcheck_errors().unwrap() {
        assert!(err < 1e-4, "{name}: {err:e}");
    }
}

#[test]
fn zero_lambda_matches_finetune_bitwise() {
    common::check_lambda_zero(data_root()).unwrap();
}

#[test]
fn buffer_invariants_over_random_sequences() {
    common::check_buffer_random(1000).unwrap();
}

#[test]
fn permutations_and_determinism() {
    common::check_permutations_and_determinism(data_root()).unwrap();
}

#[test]
fn importances_nonnegative_across_tasks() {
    common::check_omega_nonnegative(data_root()).unwrap();
}

#[test]
fn optimizer_step_count_never_resets() {
    common::check_step_audit(data_root()).unwrap();
}

#[test]
fn inactive_outputs_get_no_gradient() {
    common::check_masked_zero_grad().unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn buffer_sequence(capacity in 0usize..800, cands in prop::collection::vec(0usize..500, 1..12), seed in any::<u64>()) {
        prop_assert_eq!(common::check_buffer_sequence(capacity, &cands, seed), Ok(()));
    }
}

proptest! {
    #[test]
    fn permutation_is_bijection(seed in any::<u64>(), t in 2usize..50, dim in 1usize..2000) {
        let mut p = task_permutation(seed, t, dim).unwrap();
        p.sort_unstable();
        prop_assert_eq!(p, (0..dim).collect::<Vec<_>>());
    }

    #[test]
    fn masked_softmax_ignores_inactive(
        logits in prop::collection::vec(-50.0f64..50.0, 2..16),
        mask_bits in any::<u16>(),
        pick in any::<prop::sample::Index>(),
    ) {
        let n = logits.len();
        let mut mask: Vec<bool> = (0..n).map(|i| mask_bits >> i & 1 == 1).collect();
        let target = pick.index(n);
        mask[target] = true;
        let (loss, d) = masked_softmax_xent(&logits, target, &mask).unwrap();
        prop_assert!(loss.is_finite() && loss >= 0.0);
        for i in 0..n {
            if !mask[i] {
                prop_assert_eq!(d[i], 0.0);
            }
        }
        // inactive logits do not change the loss
        let mut moved = logits.clone();
        for i in 0..n {
            if !mask[i] {
                moved[i] += 1e3;
            }
        }
        let (loss2, _) = masked_softmax_xent(&moved, target, &mask).unwrap();
        prop_assert_eq!(loss, loss2);
    }
}
