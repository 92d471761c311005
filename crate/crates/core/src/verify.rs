//! Property suites with machine-readable results.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::AgentDims;
use crate::error::Result;
use crate::geometry::{MagnetPose, Vec3};
use crate::gridworld::{invariance_experiment, theorem1_grid_chain, GridWorld, InvarianceConfig, INVARIANCE_MAP};
use crate::magnet::{axial_sphere_intensity, cuboid_intensity, sphere_intensity, CuboidMagnet, QuadratureSpec, SphericalMagnet, DEFAULT_MAGNETIZATION, EPSILON};
use crate::nn::{gradient_check, Mlp, OutputActivation};
use crate::reward::{combine, softsign, standardize};
use crate::shaping::{theorem1_check, PairChain, Theorem1Config};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Pipeline,
    Theorem1,
    Invariance,
    Gradients,
    Field,
}

impl Suite {
    pub const ALL: [Suite; 5] = [Suite::Pipeline, Suite::Theorem1, Suite::Invariance, Suite::Gradients, Suite::Field];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Pipeline => "pipeline",
            Suite::Theorem1 => "theorem1",
            Suite::Invariance => "invariance",
            Suite::Gradients => "gradients",
            Suite::Field => "field",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s.to_ascii_lowercase())
            .ok_or_else(|| crate::Error::InvalidArgument(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyResult {
    pub suite: Suite,
    pub name: String,
    pub passed: bool,
    /// Measured residual or statistic.
    pub measured: f64,
    /// Bound the measurement is compared against.
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub passed: bool,
    pub properties: Vec<PropertyResult>,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &PropertyResult> {
        self.properties.iter().filter(|p| !p.passed)
    }
}

struct Collector {
    suite: Suite,
    out: Vec<PropertyResult>,
}

impl Collector {
    /// Passes when `measured <= threshold`.
    fn at_most(&mut self, name: &str, measured: f64, threshold: f64, detail: String) {
        self.out.push(PropertyResult { suite: self.suite, name: name.into(), passed: measured <= threshold, measured, threshold, detail });
    }

    fn holds(&mut self, name: &str, ok: bool, detail: String) {
        self.out.push(PropertyResult {
            suite: self.suite,
            name: name.into(),
            passed: ok,
            measured: if ok { 0.0 } else { 1.0 },
            threshold: 0.0,
            detail,
        });
    }

    fn error(&mut self, name: &str, e: crate::Error) {
        self.out.push(PropertyResult { suite: self.suite, name: name.into(), passed: false, measured: f64::NAN, threshold: 0.0, detail: e.to_string() });
    }
}

/// Runs the requested suites; failures become report entries, never errors.
pub fn verify(suites: &[Suite]) -> VerifyReport {
    let mut properties = Vec::new();
    for &suite in suites {
        let mut c = Collector { suite, out: Vec::new() };
        match suite {
            Suite::Pipeline => pipeline(&mut c),
            Suite::Theorem1 => theorem1(&mut c),
            Suite::Invariance => invariance(&mut c),
            Suite::Gradients => gradients(&mut c),
            Suite::Field => field(&mut c),
        }
        properties.extend(c.out);
    }
    VerifyReport { passed: properties.iter().all(|p| p.passed), properties }
}

fn pipeline(c: &mut Collector) {
    c.holds("softsign_examples", softsign(0.0) == 0.0 && softsign(1.0) == 0.5 && softsign(-3.0) == -0.75, "0, 1, -3".into());
    let xs: Vec<f64> = (-400..=400).map(|i| (i as f64 / 20.0).powi(3)).chain([1e300, -1e300, f64::MIN_POSITIVE]).collect();
    c.holds("softsign_bounded", xs.iter().all(|&x| softsign(x).abs() < 1.0 || x.abs() > 1e15), format!("{} points", xs.len()));
    let grid: Vec<f64> = (-400..=400).map(|i| (i as f64 / 20.0).powi(3)).collect();
    c.holds("softsign_increasing", grid.windows(2).all(|w| softsign(w[0]) < softsign(w[1])), "cubic grid on [-1000, 1000]".into());
    c.holds("softsign_odd", xs.iter().all(|&x| softsign(-x) == -softsign(x)), "bitwise".into());
    c.holds("standardize_centered", standardize(3.25, 3.25, 0.7, EPSILON) == 0.0, "H = mean".into());
    c.holds("standardize_unit", standardize(1.0, 0.0, 1.0, EPSILON) == 1.0 / (1.0 + EPSILON), "mean 0, std 1".into());
    c.holds("standardize_zero_std", standardize(1e-7, 0.0, 0.0, EPSILON) == 1.0 && standardize(5.0, 1.0, 0.0, EPSILON).is_finite(), "std 0".into());
    c.holds("combine_mean", combine(1.0, &[0.5, 0.5]) == 0.5 && combine(0.0, &[0.0, 0.0, 0.0]) == 0.0, "N = 2, 3".into());
    c.holds("combine_empty", combine(-0.37, &[]) == -0.37, "N = 0".into());
}

/// Deterministic 4-pair chain ending after the last pair.
pub fn chain4() -> PairChain {
    PairChain { transitions: vec![vec![(1, 1.0)], vec![(2, 1.0)], vec![(3, 1.0)], vec![]], reward: vec![0.1, -0.5, 0.3, 1.0] }
}

/// Two pairs with stochastic successors and a termination probability.
pub fn two_state_chain() -> PairChain {
    PairChain { transitions: vec![vec![(0, 0.3), (1, 0.6)], vec![(0, 0.5), (1, 0.45)]], reward: vec![0.8, -0.3] }
}

fn theorem1(c: &mut Collector) {
    let cfg = |gamma| Theorem1Config { gamma, eta: 0.5, max_sweeps: 100_000, tolerance: 1e-13 };
    let cases: [(&str, Result<PairChain>, f64, f64); 3] = [
        ("chain4_expected_shaping", Ok(chain4()), 0.9, 1e-6),
        ("two_state_expected_shaping", Ok(two_state_chain()), 0.95, 1e-3),
        ("grid5x5_expected_shaping", theorem1_grid_chain(0.1), 0.9, 1e-3),
    ];
    for (name, chain, gamma, tol) in cases {
        match chain.and_then(|ch| theorem1_check(&ch, &cfg(gamma))) {
            Ok(r) => c.at_most(name, r.gap, tol, format!("{} sweeps, residual {:e}", r.sweeps, r.residual)),
            Err(e) => c.error(name, e),
        }
    }
}

fn invariance(c: &mut Collector) {
    let rep = GridWorld::parse(INVARIANCE_MAP).and_then(|w| invariance_experiment(&w, &InvarianceConfig::default()));
    match rep {
        Ok(r) => {
            c.at_most("greedy_policies_identical", r.mismatches as f64, 0.0, format!("{} states checked", r.checked_states));
            c.at_most("sparse_matches_optimal", r.sparse_vs_optimal as f64, 0.0, "value iteration".into());
            let ratio = r.speedup_ratio().unwrap_or(f64::INFINITY);
            c.at_most("shaped_speedup", ratio, 0.5, format!("episodes to 95%: shaped {:?}, sparse {:?}", r.shaped_episodes, r.sparse_episodes));
        }
        Err(e) => c.error("invariance_experiment", e),
    }
}

/// Actor, critic and potential with two 256-unit layers for the 2-D navigation task.
pub fn reference_networks<R: Rng + ?Sized>(rng: &mut R) -> Result<Vec<(&'static str, Mlp)>> {
    let dims = AgentDims { state: 4, action: 2, goal: 4 };
    let hidden = [256, 256];
    let mut pot = vec![dims.potential().input_len()];
    pot.extend_from_slice(&hidden);
    pot.push(1);
    Ok(vec![
        ("actor", Mlp::new(&dims.actor_sizes(&hidden), OutputActivation::Tanh { scale: 1.0 }, rng)?),
        ("critic", Mlp::new(&dims.critic_sizes(&hidden), OutputActivation::Linear, rng)?),
        ("potential", Mlp::new(&pot, OutputActivation::Linear, rng)?),
    ])
}

fn gradients(c: &mut Collector) {
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let nets = match reference_networks(&mut rng) {
        Ok(n) => n,
        Err(e) => return c.error("networks", e),
    };
    for (name, net) in nets {
        let x = Array2::from_shape_fn((8, net.input_len()), |_| rng.random_range(-1.0..1.0));
        let up = Array2::from_shape_fn((8, net.output_len()), |_| rng.random_range(-1.0..1.0));
        match gradient_check(&net, x.view(), up.view(), 64, 1e-5, &mut rng) {
            Ok(r) => c.at_most(&format!("{name}_gradient"), r.max_rel_err, 1e-4, format!("{} probes", r.probes)),
            Err(e) => c.error(name, e),
        }
    }
}

fn field(c: &mut Collector) {
    let sphere = SphericalMagnet::new(1.0, DEFAULT_MAGNETIZATION, MagnetPose::IDENTITY).expect("valid sphere");
    for (nodes, tol) in [(64, 1e-2), (128, 1e-3)] {
        let q = QuadratureSpec::square(nodes).expect("valid quadrature");
        let mut worst: f64 = 0.0;
        for z in [1.5, 2.0, 4.0] {
            let h = sphere_intensity(&sphere, Vec3::new(0.0, 0.0, z), &q).unwrap_or(f64::NAN);
            let exact = axial_sphere_intensity(&sphere, z);
            worst = worst.max(((h - exact) / exact).abs());
        }
        c.at_most(&format!("sphere_axial_{nodes}"), worst, tol, "z = 1.5a, 2a, 4a".into());
    }
    // far field of the cuboid against a point dipole of the same moment
    let cuboid = CuboidMagnet::new(0.1, 0.4, 0.05, DEFAULT_MAGNETIZATION, MagnetPose::IDENTITY).expect("valid cuboid");
    let center = cuboid.center_offset();
    let moment = DEFAULT_MAGNETIZATION * 0.1 * 0.4 * 0.05;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let d = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let r: f64 = 20.0;
        let u = d * (1.0 / d.norm());
        let dipole = moment / (4.0 * std::f64::consts::PI * r.powi(3)) * (u * (3.0 * u.z) - Vec3::Z).norm();
        let h = cuboid_intensity(&cuboid, center + u * r, EPSILON).unwrap_or(f64::NAN);
        worst = worst.max(((h - dipole) / dipole).abs());
    }
    c.at_most("cuboid_far_field_dipole", worst, 1e-3, "20 directions at 50x the half length".into());
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_suites_pass() {
        let r = verify(&[Suite::Pipeline, Suite::Theorem1, Suite::Gradients, Suite::Field]);
        for p in &r.properties {
            assert!(p.passed, "{p:?}");
        }
        assert!(r.passed);
    }

    #[test]
    fn suite_names() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn report_is_deterministic() {
        let a = serde_json::to_string(&verify(&[Suite::Gradients, Suite::Pipeline])).unwrap();
        let b = serde_json::to_string(&verify(&[Suite::Gradients, Suite::Pipeline])).unwrap();
        assert_eq!(a, b);
    }
}
