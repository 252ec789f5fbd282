use proptest::prelude::*;
use whiskers::continuation::{StepPolicy, Verdict};

#[test]
fn halves_after_failures_and_recovers() {
    let steps = StepPolicy::replay(1e-3, 3, 4, &[true, false, false, true, true]);
    assert_eq!(steps, vec![1e-3, 1e-3, 5e-4, 2.5e-4, 1e-3]);
}

#[test]
fn window_forgets_old_large_steps() {
    // the unit step leaves a window of two after two half steps
    let verdicts = [true, false, true, false, true, true];
    let steps = StepPolicy::replay(1.0, 2, 8, &verdicts);
    assert_eq!(steps, vec![1.0, 1.0, 0.5, 1.0, 0.5, 0.5]);
    let mut p = StepPolicy::new(1.0, 2, 8);
    for v in &verdicts[..5] {
        p.record(*v);
    }
    assert_eq!(p.phi(), 0.5);
}

#[test]
fn ends_after_max_halvings() {
    let mut p = StepPolicy::new(1e-4, 5, 2);
    assert_eq!(p.record(false), Verdict::Retry);
    assert_eq!(p.record(false), Verdict::Retry);
    assert_eq!(p.record(false), Verdict::End);
    assert_eq!(StepPolicy::replay(1e-4, 5, 2, &[false; 10]).len(), 3);
}

#[test]
fn sign_of_initial_step_is_ignored() {
    assert_eq!(StepPolicy::new(-2e-4, 5, 8).trial(), 2e-4);
}

proptest! {
    #[test]
    fn trial_never_exceeds_initial(verdicts in prop::collection::vec(any::<bool>(), 1..60), window in 1usize..8) {
        let steps = StepPolicy::replay(1e-3, window, 6, &verdicts);
        for s in &steps {
            prop_assert!(*s > 0.0 && *s <= 1e-3);
        }
    }

    #[test]
    fn failure_halves_next_trial(verdicts in prop::collection::vec(any::<bool>(), 1..60)) {
        let steps = StepPolicy::replay(1e-3, 5, 60, &verdicts);
        for (i, w) in steps.windows(2).enumerate() {
            if !verdicts[i] {
                prop_assert_eq!(w[1], w[0] / 2.0);
            } else {
                prop_assert!(w[1] >= w[0]);
            }
        }
    }
}
