mod support {
    pub mod td_oracle;
}

use mfrs::gridworld::{invariance_experiment, theorem1_grid_chain, GridWorld, InvarianceConfig, INVARIANCE_MAP};
use mfrs::shaping::{theorem1_check, PairChain, Theorem1Config};
use support::td_oracle::{shaping_gap, td_fixpoint};

fn chain4() -> PairChain {
    PairChain { transitions: vec![vec![(1, 1.0)], vec![(2, 1.0)], vec![(3, 1.0)], vec![]], reward: vec![0.1, -0.5, 0.3, 1.0] }
}

fn stochastic_two_state() -> PairChain {
    // pairs: (s0, a), (s1, a); s0 stays with 0.3, moves with 0.6, ends with 0.1
    PairChain { transitions: vec![vec![(0, 0.3), (1, 0.6)], vec![(0, 0.5), (1, 0.45)]], reward: vec![0.8, -0.3] }
}

fn cfg(gamma: f64) -> Theorem1Config {
    Theorem1Config { gamma, eta: 0.5, max_sweeps: 100_000, tolerance: 1e-13 }
}

#[test]
fn chain_matches_linear_fixpoint() {
    let chain = chain4();
    let rep = theorem1_check(&chain, &cfg(0.9)).unwrap();
    let exact = td_fixpoint(&chain, 0.9);
    for (a, b) in rep.potential.iter().zip(&exact) {
        assert!((a - b).abs() < 1e-10, "{a} vs {b}");
    }
    assert!(rep.gap < 1e-6);
    assert!(shaping_gap(&chain, 0.9, &rep.potential) < 1e-6);
    assert!(shaping_gap(&chain, 0.9, &exact) < 1e-12);
}

#[test]
fn stochastic_chain_matches_linear_fixpoint() {
    let chain = stochastic_two_state();
    let rep = theorem1_check(&chain, &cfg(0.95)).unwrap();
    let exact = td_fixpoint(&chain, 0.95);
    for (a, b) in rep.potential.iter().zip(&exact) {
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }
    assert!(rep.gap < 1e-3);
}

#[test]
fn grid_chain_under_fixed_policy() {
    let chain = theorem1_grid_chain(0.1).unwrap();
    assert_eq!(chain.len(), 100);
    let rep = theorem1_check(&chain, &cfg(0.9)).unwrap();
    let exact = td_fixpoint(&chain, 0.9);
    let worst = rep.potential.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-9, "{worst}");
    assert!(rep.gap < 1e-3);
}

#[test]
fn gridworld_greedy_policies_agree() {
    let world = GridWorld::parse(INVARIANCE_MAP).unwrap();
    let rep = invariance_experiment(&world, &InvarianceConfig { seeds: 10, ..InvarianceConfig::default() }).unwrap();
    assert_eq!(rep.mismatches, 0, "{rep:?}");
    assert_eq!(rep.sparse_vs_optimal, 0, "{rep:?}");
    assert!(rep.checked_states >= 10 * 6);
}
