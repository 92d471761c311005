//! Exact TD fixpoint of a pair chain by a dense linear solve.

use mfrs::shaping::PairChain;
use nalgebra::{DMatrix, DVector};

/// Solves `(I - γP)Φ = -r`.
pub fn td_fixpoint(chain: &PairChain, gamma: f64) -> Vec<f64> {
    let n = chain.len();
    let mut a = DMatrix::<f64>::identity(n, n);
    for (x, row) in chain.transitions.iter().enumerate() {
        for &(y, p) in row {
            a[(x, y)] -= gamma * p;
        }
    }
    let b = DVector::from_iterator(n, chain.reward.iter().map(|r| -r));
    a.lu().solve(&b).expect("singular TD system").iter().copied().collect()
}

/// `max_x |γ(PΦ)(x) - Φ(x) - r(x)|` computed independently of the library.
pub fn shaping_gap(chain: &PairChain, gamma: f64, phi: &[f64]) -> f64 {
    (0..chain.len())
        .map(|x| {
            let next: f64 = chain.transitions[x].iter().map(|&(y, p)| p * phi[y]).sum();
            (gamma * next - phi[x] - chain.reward[x]).abs()
        })
        .fold(0.0, f64::max)
}
