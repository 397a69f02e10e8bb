//! Properties of the exact chain oracle and its agreement with the
//! simulator.

use std::sync::Arc;

use proptest::prelude::*;

use lifecycle_core::harness::{chain_scenario, markov_success, ChainParams, SubtaskChain};
use lifecycle_core::{deploy, DeployConfig};

fn chain() -> impl Strategy<Value = SubtaskChain> {
    (
        0.0..=1.0f64,
        0.0..=1.0f64,
        prop::option::of(0.0..=1.0f64),
        1u32..5,
        any::<bool>(),
    )
        .prop_map(|(p, b, r, m, h)| SubtaskChain {
            success_prob: p,
            nondegrading_fraction: b,
            recovery_success: r,
            max_attempts: m,
            human_retry: h,
        })
}

proptest! {
    #[test]
    fn success_is_a_probability(c in chain()) {
        let s = c.success();
        prop_assert!((0.0..=1.0 + 1e-12).contains(&s));
        prop_assert!(s >= c.success_prob - 1e-12);
    }

    #[test]
    fn more_attempts_never_hurt(c in chain()) {
        let more = SubtaskChain { max_attempts: c.max_attempts + 1, ..c };
        prop_assert!(more.success() >= c.success() - 1e-12);
    }

    #[test]
    fn human_retry_never_hurts(c in chain()) {
        let with = SubtaskChain { human_retry: true, ..c };
        let without = SubtaskChain { human_retry: false, ..c };
        prop_assert!(with.success() >= without.success() - 1e-12);
    }

    #[test]
    fn pure_retries_are_geometric(p in 0.0..=1.0f64, m in 1u32..8) {
        let c = SubtaskChain { success_prob: p, nondegrading_fraction: 1.0, recovery_success: None, max_attempts: m, human_retry: false };
        let want = 1.0 - (1.0 - p).powi(m as i32);
        prop_assert!((c.success() - want).abs() < 1e-12);
    }

    #[test]
    fn task_success_is_the_product(cs in prop::collection::vec(chain(), 1..5)) {
        let want: f64 = cs.iter().map(SubtaskChain::success).product();
        let got = markov_success(&ChainParams { subtasks: cs }).unwrap();
        prop_assert_eq!(got, want);
    }
}

#[test]
fn degrading_failure_without_recovery_goes_to_the_human() {
    let c = SubtaskChain {
        success_prob: 0.4,
        nondegrading_fraction: 0.0,
        recovery_success: None,
        max_attempts: 3,
        human_retry: true,
    };
    assert!((c.success() - (0.4 + 0.6 * 0.4)).abs() < 1e-15);
}

#[test]
fn invalid_chains_are_rejected() {
    let ok = SubtaskChain {
        success_prob: 0.5,
        nondegrading_fraction: 0.5,
        recovery_success: None,
        max_attempts: 1,
        human_retry: false,
    };
    assert!(markov_success(&ChainParams { subtasks: vec![] }).is_err());
    assert!(markov_success(&ChainParams {
        subtasks: vec![SubtaskChain {
            max_attempts: 0,
            ..ok
        }]
    })
    .is_err());
    assert!(markov_success(&ChainParams {
        subtasks: vec![SubtaskChain {
            recovery_success: Some(-0.1),
            ..ok
        }]
    })
    .is_err());
}

#[test]
fn simulator_agrees_with_the_oracle() {
    let params = ChainParams {
        subtasks: vec![
            SubtaskChain {
                success_prob: 0.55,
                nondegrading_fraction: 0.3,
                recovery_success: Some(0.7),
                max_attempts: 3,
                human_retry: true,
            },
            SubtaskChain {
                success_prob: 0.8,
                nondegrading_fraction: 0.6,
                recovery_success: None,
                max_attempts: 2,
                human_retry: false,
            },
        ],
    };
    let exact = markov_success(&params).unwrap();
    let setup = chain_scenario(&params).unwrap();
    let n = 4000;
    let report = deploy(
        &Arc::new(setup.scenario),
        &setup.pool,
        &setup.plan,
        &DeployConfig {
            episodes: n,
            seed: 11,
            human: setup.human,
            iteration: None,
        },
    )
    .unwrap();
    let sigma = (exact * (1.0 - exact) / n as f64).sqrt();
    assert!(
        (report.success_rate - exact).abs() < 4.0 * sigma,
        "{} vs {exact}",
        report.success_rate
    );
}
