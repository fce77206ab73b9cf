//! Finite probabilistic decision problems.
//!
//! A decision problem is a finite ordered set of instances, a 0/1 membership
//! label per instance and a prior distribution used for the opening draw of
//! every game.

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::{PvgError, Result};

/// Tolerance for prior normalisation.
pub const PRIOR_TOLERANCE: f64 = 1e-12;

/// A finite decision problem: instances, membership labels and a prior.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DecisionProblem {
    names: Vec<String>,
    labels: Vec<u8>,
    prior: Vec<f64>,
    degenerate: bool,
}

impl DecisionProblem {
    /// Build a problem from per-instance names, labels and prior weights.
    ///
    /// Fails unless the prior sums to one (within [`PRIOR_TOLERANCE`]) with
    /// non-negative entries, every instance is labelled 0 or 1, and both
    /// labels occur at least once. Single-label problems must be constructed
    /// via [`DecisionProblem::new_degenerate`].
    pub fn new(names: Vec<String>, labels: Vec<u8>, prior: Vec<f64>) -> Result<Self> {
        let p = Self::build(names, labels, prior, false)?;
        if !p.labels.contains(&0) || !p.labels.contains(&1) {
            return Err(PvgError::Domain(
                "both labels must be present unless the problem is flagged degenerate".into(),
            ));
        }
        Ok(p)
    }

    /// Build a problem that is allowed to carry a single label.
    pub fn new_degenerate(names: Vec<String>, labels: Vec<u8>, prior: Vec<f64>) -> Result<Self> {
        Self::build(names, labels, prior, true)
    }

    fn build(
        names: Vec<String>,
        labels: Vec<u8>,
        prior: Vec<f64>,
        degenerate: bool,
    ) -> Result<Self> {
        if names.is_empty() {
            return Err(PvgError::Domain(
                "a problem needs at least one instance".into(),
            ));
        }
        if names.len() != labels.len() || names.len() != prior.len() {
            return Err(PvgError::Domain(
                "names, labels and prior must have equal length".into(),
            ));
        }
        if labels.iter().any(|&y| y > 1) {
            return Err(PvgError::Domain("labels must be 0 or 1".into()));
        }
        if prior.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(PvgError::Domain(
                "prior weights must be finite and non-negative".into(),
            ));
        }
        let total: f64 = prior.iter().sum();
        if (total - 1.0).abs() > PRIOR_TOLERANCE {
            return Err(PvgError::Domain(format!(
                "prior must sum to 1 within {PRIOR_TOLERANCE:e}, got {total}"
            )));
        }
        Ok(Self {
            names,
            labels,
            prior,
            degenerate,
        })
    }

    /// Number of instances.
    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Whether the problem was flagged as single-label.
    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn name(&self, x: usize) -> &str {
        &self.names[x]
    }

    pub fn prior(&self, x: usize) -> f64 {
        self.prior[x]
    }

    pub fn priors(&self) -> &[f64] {
        &self.prior
    }

    /// Membership label of `x`; errors on out-of-range instances.
    pub fn membership_label(&self, x: usize) -> Result<u8> {
        self.labels
            .get(x)
            .copied()
            .ok_or_else(|| PvgError::UnknownInstance(format!("#{x}")))
    }

    /// Label without the bounds check, for hot loops over known instances.
    pub fn label(&self, x: usize) -> u8 {
        self.labels[x]
    }

    /// Instances carrying the given label, in instance order.
    pub fn instances_with_label(&self, label: u8) -> Vec<usize> {
        (0..self.len())
            .filter(|&x| self.labels[x] == label)
            .collect()
    }

    /// i.i.d. draws from the prior; deterministic given the generator state.
    pub fn sample_instances<R: rand::Rng>(&self, count: usize, rng: &mut R) -> Vec<usize> {
        (0..count).map(|_| self.sample_instance(rng)).collect()
    }

    /// One draw from the prior.
    pub fn sample_instance<R: rand::Rng>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (x, &w) in self.prior.iter().enumerate() {
            acc += w;
            if u < acc {
                return x;
            }
        }
        self.len() - 1
    }
}

/// The four-instance parity problem together with its reference strategy
/// tables, used throughout the tests and the `reproduce-counterexample`
/// command.
///
/// Instances are 0..=3 with label `x mod 2` and prior `(a, a, a, 1 - 3a)`.
#[derive(Debug, Clone)]
pub struct ParityFixture {
    pub problem: DecisionProblem,
    /// Three deterministic prover maps, message index per instance:
    /// `x mod 2`, `2 - |x - 2|` and the identity map.
    pub prover_maps: Vec<[u32; 4]>,
    /// Three deterministic verifier acceptance tables indexed by the prover
    /// message: `0 < m < 3`, `m < 2` and the constant accept.
    pub verifier_accept: Vec<[u8; 4]>,
}

/// Build the parity problem for `0 < a < 1/3` plus its fixture strategies.
pub fn make_parity_problem(a: f64) -> Result<ParityFixture> {
    if !(a > 0.0 && a < 1.0 / 3.0) {
        return Err(PvgError::Domain(format!(
            "parity prior parameter must lie in (0, 1/3), got {a}"
        )));
    }
    let names = (0..4).map(|x| format!("x{x}")).collect();
    let labels = vec![0, 1, 0, 1];
    let prior = vec![a, a, a, 1.0 - 3.0 * a];
    let problem = DecisionProblem::new(names, labels, prior)?;
    let prover_maps = vec![
        [0, 1, 0, 1], // x mod 2
        [0, 1, 2, 1], // 2 - |x - 2|
        [0, 1, 2, 3], // identity
    ];
    let verifier_accept = vec![
        [0, 1, 1, 0], // 0 < m < 3
        [1, 1, 0, 0], // m < 2
        [1, 1, 1, 1], // always accept
    ];
    Ok(ParityFixture {
        problem,
        prover_maps,
        verifier_accept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn parity_labels_follow_the_modulus() {
        let fx = make_parity_problem(0.2).unwrap();
        assert_eq!(fx.problem.membership_label(3).unwrap(), 1);
        assert_eq!(fx.problem.membership_label(0).unwrap(), 0);
        assert_eq!(fx.problem.membership_label(1).unwrap(), 1);
        assert_eq!(fx.problem.membership_label(2).unwrap(), 0);
    }

    #[test]
    fn unknown_instance_is_a_lookup_error() {
        let fx = make_parity_problem(0.25).unwrap();
        assert!(matches!(
            fx.problem.membership_label(4),
            Err(PvgError::UnknownInstance(_))
        ));
    }

    #[test]
    fn parity_fixture_tables_match_their_closed_forms() {
        let fx = make_parity_problem(0.2).unwrap();
        // Second prover map on x = 0..=3 sends 0, 1, 2, 1.
        assert_eq!(fx.prover_maps[1], [0, 1, 2, 1]);
        // First verifier accepts exactly messages 1 and 2.
        assert_eq!(fx.verifier_accept[0], [0, 1, 1, 0]);
        // First prover map is the parity map itself.
        assert_eq!(fx.prover_maps[0][1], 1);
        for x in 0..4usize {
            assert_eq!(u32::from(fx.problem.label(x)), fx.prover_maps[0][x]);
        }
    }

    #[test]
    fn parity_rejects_out_of_range_parameters() {
        assert!(make_parity_problem(0.0).is_err());
        assert!(make_parity_problem(1.0 / 3.0).is_err());
        assert!(make_parity_problem(-0.1).is_err());
    }

    #[test]
    fn point_mass_prior_always_samples_the_same_instance() {
        let p = DecisionProblem::new_degenerate(vec!["only".into()], vec![1], vec![1.0]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        assert_eq!(p.sample_instances(5, &mut rng), vec![0; 5]);
    }

    #[test]
    fn sampling_matches_the_prior_in_frequency() {
        let fx = make_parity_problem(0.25).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let draws = fx.problem.sample_instances(100_000, &mut rng);
        for x in 0..4 {
            let freq = draws.iter().filter(|&&d| d == x).count() as f64 / 1e5;
            assert!((freq - 0.25).abs() < 0.01, "instance {x} frequency {freq}");
        }
    }

    #[test]
    fn sampling_is_deterministic_per_seed() {
        let fx = make_parity_problem(0.2).unwrap();
        let a = fx
            .problem
            .sample_instances(64, &mut ChaCha12Rng::seed_from_u64(9));
        let b = fx
            .problem
            .sample_instances(64, &mut ChaCha12Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn prior_must_normalise() {
        let bad = DecisionProblem::new(vec!["a".into(), "b".into()], vec![0, 1], vec![0.5, 0.6]);
        assert!(bad.is_err());
    }
}
