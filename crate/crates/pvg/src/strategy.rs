//! Behavioural strategies over finite observation histories.
//!
//! An observation key packs everything an agent may condition on: the channel
//! it is about to send in, the opening instance and true label when its game
//! role grants them, and the token histories of the channels it belongs to.
//! Sender identities never appear in keys, so co-channel agents are
//! interchangeable from the observer's point of view.

use std::collections::BTreeMap;

use rand::RngExt;
use serde::{Deserialize, Serialize};

use crate::game::{reachable_keys, AgentId, ChannelId, GameSpec};
use crate::{PvgError, Result};

/// Normalisation tolerance for probability rows.
pub const ROW_TOLERANCE: f64 = 1e-12;

/// Observation key: target channel, optional instance and label, and the
/// observed channel histories in channel order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ObsKey {
    pub target: ChannelId,
    pub instance: Option<usize>,
    pub label: Option<u8>,
    pub histories: Vec<(ChannelId, Vec<u32>)>,
}

impl ObsKey {
    /// Stable string form used as the map key in tabular and softmax tables.
    pub fn encode(&self) -> String {
        let mut out = format!("t{}", self.target);
        if let Some(x) = self.instance {
            out.push_str(&format!("|x{x}"));
        }
        if let Some(y) = self.label {
            out.push_str(&format!("|y{y}"));
        }
        for (c, tokens) in &self.histories {
            out.push_str(&format!("|c{c}:"));
            let parts: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
            out.push_str(&parts.join("."));
        }
        out
    }
}

/// Tabular behavioural strategy: one probability row per observation key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularStrategy {
    pub rows: BTreeMap<String, Vec<f64>>,
}

impl TabularStrategy {
    pub fn new(rows: BTreeMap<String, Vec<f64>>) -> Result<Self> {
        for (key, row) in &rows {
            validate_row(key, row)?;
        }
        Ok(Self { rows })
    }

    pub fn row(&self, key: &str) -> Result<&[f64]> {
        self.rows
            .get(key)
            .map(|r| r.as_slice())
            .ok_or_else(|| PvgError::MissingKey(key.to_string()))
    }

    /// Point-mass row helper.
    pub fn deterministic_row(space: usize, pick: usize) -> Vec<f64> {
        let mut row = vec![0.0; space];
        row[pick] = 1.0;
        row
    }
}

fn validate_row(key: &str, row: &[f64]) -> Result<()> {
    if row.is_empty() {
        return Err(PvgError::Domain(format!(
            "empty probability row at `{key}`"
        )));
    }
    if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
        return Err(PvgError::Domain(format!(
            "negative or non-finite probability at `{key}`"
        )));
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > ROW_TOLERANCE {
        return Err(PvgError::Domain(format!(
            "row at `{key}` sums to {total}, expected 1 within {ROW_TOLERANCE:e}"
        )));
    }
    Ok(())
}

/// Softmax-parametric strategy: one logit vector per observation key,
/// temperature fixed at one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftmaxStrategy {
    pub logits: BTreeMap<String, Vec<f64>>,
}

impl SoftmaxStrategy {
    pub fn distribution(&self, key: &str) -> Result<Vec<f64>> {
        let logits = self
            .logits
            .get(key)
            .ok_or_else(|| PvgError::MissingKey(key.to_string()))?;
        Ok(softmax(logits))
    }

    /// Total parameter count across keys.
    pub fn parameter_count(&self) -> usize {
        self.logits.values().map(|v| v.len()).sum()
    }

    /// Flatten logits into one vector, keys in sorted order.
    pub fn flatten(&self) -> Vec<f64> {
        self.logits.values().flatten().copied().collect()
    }

    /// Rebuild from a flat vector laid out as [`SoftmaxStrategy::flatten`].
    pub fn unflatten(&self, params: &[f64]) -> Result<Self> {
        if params.len() != self.parameter_count() {
            return Err(PvgError::Domain("parameter vector length mismatch".into()));
        }
        let mut logits = BTreeMap::new();
        let mut offset = 0;
        for (key, row) in &self.logits {
            logits.insert(key.clone(), params[offset..offset + row.len()].to_vec());
            offset += row.len();
        }
        Ok(Self { logits })
    }

    /// Flat parameter offset of `(key, message)`.
    pub fn offset_of(&self, key: &str, message: usize) -> Option<usize> {
        let mut offset = 0;
        for (k, row) in &self.logits {
            if k == key {
                return (message < row.len()).then_some(offset + message);
            }
            offset += row.len();
        }
        None
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Mixed strategy: an explicit weight vector over pure tabular strategies,
/// resolved once per episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureStrategy {
    pub weights: Vec<f64>,
    pub components: Vec<TabularStrategy>,
}

impl MixtureStrategy {
    pub fn new(weights: Vec<f64>, components: Vec<TabularStrategy>) -> Result<Self> {
        if weights.len() != components.len() || weights.is_empty() {
            return Err(PvgError::Domain(
                "mixture weights/components mismatch".into(),
            ));
        }
        validate_row("mixture", &weights)?;
        Ok(Self {
            weights,
            components,
        })
    }
}

/// A single agent's strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Strategy {
    Tabular(TabularStrategy),
    Softmax(SoftmaxStrategy),
    Mixture(MixtureStrategy),
}

impl Strategy {
    /// Message distribution at an observation key.
    ///
    /// Tabular strategies error on unknown keys rather than defaulting.
    /// Mixtures have no per-observation distribution of their own (their
    /// component is drawn once per episode), so they error here.
    pub fn message_distribution(&self, key: &str, space: usize) -> Result<Vec<f64>> {
        let dist = match self {
            Strategy::Tabular(t) => t.row(key)?.to_vec(),
            Strategy::Softmax(s) => s.distribution(key)?,
            Strategy::Mixture(_) => {
                return Err(PvgError::Domain(
                    "mixtures resolve per episode; query a component instead".into(),
                ))
            }
        };
        if dist.len() != space {
            return Err(PvgError::Protocol(format!(
                "row at `{key}` has {} entries, message space has {space}",
                dist.len()
            )));
        }
        Ok(dist)
    }
}

/// Borrowed behavioural view used by the play engine.
#[derive(Debug, Clone, Copy)]
pub enum BehaviouralStrategy<'a> {
    Tabular(&'a TabularStrategy),
    Softmax(&'a SoftmaxStrategy),
}

impl BehaviouralStrategy<'_> {
    pub fn distribution(&self, key: &str, space: usize) -> Result<Vec<f64>> {
        let dist = match self {
            BehaviouralStrategy::Tabular(t) => t.row(key)?.to_vec(),
            BehaviouralStrategy::Softmax(s) => s.distribution(key)?,
        };
        if dist.len() != space {
            return Err(PvgError::Protocol(format!(
                "row at `{key}` has {} entries, message space has {space}",
                dist.len()
            )));
        }
        Ok(dist)
    }
}

/// Shared randomness for a prover pair: a distribution over joint pure
/// strategy pairs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationDevice {
    pub weights: Vec<f64>,
    pub pairs: Vec<(TabularStrategy, TabularStrategy)>,
}

impl CorrelationDevice {
    pub fn new(weights: Vec<f64>, pairs: Vec<(TabularStrategy, TabularStrategy)>) -> Result<Self> {
        if weights.len() != pairs.len() || weights.is_empty() {
            return Err(PvgError::Domain("device weights/pairs mismatch".into()));
        }
        validate_row("correlation-device", &weights)?;
        Ok(Self { weights, pairs })
    }

    /// Draw one joint pure pair.
    pub fn sample_joint_prover<R: rand::Rng>(
        &self,
        rng: &mut R,
    ) -> (&TabularStrategy, &TabularStrategy) {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return (&self.pairs[i].0, &self.pairs[i].1);
            }
        }
        let last = self.pairs.len() - 1;
        (&self.pairs[last].0, &self.pairs[last].1)
    }
}

/// Per-agent strategies plus an optional correlation device that overrides
/// the two named prover slots.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyProfile {
    pub strategies: Vec<Strategy>,
    pub correlation: Option<(AgentId, AgentId, CorrelationDevice)>,
}

impl StrategyProfile {
    pub fn new(strategies: Vec<Strategy>) -> Self {
        Self {
            strategies,
            correlation: None,
        }
    }

    pub fn with_correlation(
        strategies: Vec<Strategy>,
        first: AgentId,
        second: AgentId,
        device: CorrelationDevice,
    ) -> Self {
        Self {
            strategies,
            correlation: Some((first, second, device)),
        }
    }

    /// Replace one agent's strategy, returning the modified profile. Replacing
    /// a correlated prover drops the device.
    pub fn with_strategy(&self, agent: AgentId, strategy: Strategy) -> Self {
        let mut clone = self.clone();
        clone.strategies[agent] = strategy;
        if let Some((a, b, _)) = &clone.correlation {
            if *a == agent || *b == agent {
                clone.correlation = None;
            }
        }
        clone
    }

    /// Expand mixtures and the correlation device into weighted behavioural
    /// profiles. The weights multiply across independently mixing agents.
    pub fn expand(&self) -> Result<Vec<(f64, Vec<BehaviouralStrategy<'_>>)>> {
        let mut expansions: Vec<(f64, Vec<BehaviouralStrategy<'_>>)> = vec![(1.0, Vec::new())];
        let correlated: Vec<AgentId> = match &self.correlation {
            Some((a, b, _)) => vec![*a, *b],
            None => Vec::new(),
        };
        for (agent, strategy) in self.strategies.iter().enumerate() {
            if correlated.contains(&agent) {
                // Placeholder; the joint expansion below overwrites the slot.
                for (_, row) in &mut expansions {
                    row.push(match strategy {
                        Strategy::Tabular(t) => BehaviouralStrategy::Tabular(t),
                        Strategy::Softmax(s) => BehaviouralStrategy::Softmax(s),
                        Strategy::Mixture(m) => BehaviouralStrategy::Tabular(&m.components[0]),
                    });
                }
                continue;
            }
            match strategy {
                Strategy::Tabular(t) => {
                    for (_, row) in &mut expansions {
                        row.push(BehaviouralStrategy::Tabular(t));
                    }
                }
                Strategy::Softmax(s) => {
                    for (_, row) in &mut expansions {
                        row.push(BehaviouralStrategy::Softmax(s));
                    }
                }
                Strategy::Mixture(m) => {
                    let mut next = Vec::with_capacity(expansions.len() * m.components.len());
                    for (w, row) in &expansions {
                        for (cw, comp) in m.weights.iter().zip(&m.components) {
                            if *cw == 0.0 {
                                continue;
                            }
                            let mut row = row.clone();
                            row.push(BehaviouralStrategy::Tabular(comp));
                            next.push((w * cw, row));
                        }
                    }
                    expansions = next;
                }
            }
        }
        if let Some((first, second, device)) = &self.correlation {
            let mut next = Vec::with_capacity(expansions.len() * device.pairs.len());
            for (w, row) in &expansions {
                for (dw, (p1, p2)) in device.weights.iter().zip(&device.pairs) {
                    if *dw == 0.0 {
                        continue;
                    }
                    let mut row = row.clone();
                    row[*first] = BehaviouralStrategy::Tabular(p1);
                    row[*second] = BehaviouralStrategy::Tabular(p2);
                    next.push((w * dw, row));
                }
            }
            expansions = next;
        }
        Ok(expansions)
    }

    /// Resolve mixtures and the correlation device by sampling, fixing the
    /// behavioural profile for one episode.
    pub fn sample_behavioural<R: rand::Rng>(
        &self,
        rng: &mut R,
    ) -> Result<Vec<BehaviouralStrategy<'_>>> {
        let mut out = Vec::with_capacity(self.strategies.len());
        for strategy in &self.strategies {
            out.push(match strategy {
                Strategy::Tabular(t) => BehaviouralStrategy::Tabular(t),
                Strategy::Softmax(s) => BehaviouralStrategy::Softmax(s),
                Strategy::Mixture(m) => {
                    let u: f64 = rng.random();
                    let mut acc = 0.0;
                    let mut idx = m.components.len() - 1;
                    for (i, &w) in m.weights.iter().enumerate() {
                        acc += w;
                        if u < acc {
                            idx = i;
                            break;
                        }
                    }
                    BehaviouralStrategy::Tabular(&m.components[idx])
                }
            });
        }
        if let Some((first, second, device)) = &self.correlation {
            let (p1, p2) = device.sample_joint_prover(rng);
            out[*first] = BehaviouralStrategy::Tabular(p1);
            out[*second] = BehaviouralStrategy::Tabular(p2);
        }
        Ok(out)
    }
}

/// The strategy that plays uniformly at every reachable observation key.
pub fn uniform_strategy(game: &GameSpec, agent: AgentId) -> Result<TabularStrategy> {
    let keys = reachable_keys(game, agent, crate::game::DEFAULT_BRANCH_BUDGET)?;
    let rows = keys
        .into_iter()
        .map(|(key, space)| (key, vec![1.0 / space as f64; space]))
        .collect();
    TabularStrategy::new(rows)
}

/// Logit initialisation for [`make_tabular_softmax`].
#[derive(Debug, Clone, Copy)]
pub enum LogitInit {
    Zeros,
    Gaussian { std: f64, seed: u64 },
}

/// A softmax strategy with one logit row per reachable observation key.
pub fn make_tabular_softmax(
    init: LogitInit,
    game: &GameSpec,
    agent: AgentId,
) -> Result<SoftmaxStrategy> {
    let keys = reachable_keys(game, agent, crate::game::DEFAULT_BRANCH_BUDGET)?;
    let mut logits = BTreeMap::new();
    match init {
        LogitInit::Zeros => {
            for (key, space) in keys {
                logits.insert(key, vec![0.0; space]);
            }
        }
        LogitInit::Gaussian { std, seed } => {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
            for (key, space) in keys {
                let row = (0..space)
                    .map(|_| std * standard_normal(&mut rng))
                    .collect();
                logits.insert(key, row);
            }
        }
    }
    Ok(SoftmaxStrategy { logits })
}

/// Box-Muller standard normal draw.
fn standard_normal<R: rand::Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.random();
        let u2: f64 = rng.random();
        if u1 > f64::MIN_POSITIVE {
            return (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let d = softmax(&[0.0, 0.0]);
        assert!((d[0] - 0.5).abs() < 1e-15);
        assert!((d[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn softmax_matches_closed_form() {
        let d = softmax(&[3f64.ln(), 0.0]);
        assert!((d[0] - 0.75).abs() < 1e-12);
        assert!((d[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[0.3, -1.2, 2.0]);
        let b = softmax(&[0.3 + 7.0, -1.2 + 7.0, 2.0 + 7.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn tabular_point_mass_row_is_deterministic() {
        let mut rows = BTreeMap::new();
        rows.insert("k".to_string(), vec![1.0, 0.0]);
        let t = TabularStrategy::new(rows).unwrap();
        assert_eq!(t.row("k").unwrap(), &[1.0, 0.0]);
    }

    #[test]
    fn unknown_tabular_key_errors() {
        let t = TabularStrategy::new(BTreeMap::new()).unwrap();
        assert!(matches!(t.row("nope"), Err(PvgError::MissingKey(_))));
    }

    #[test]
    fn rows_must_normalise() {
        let mut rows = BTreeMap::new();
        rows.insert("k".to_string(), vec![0.5, 0.6]);
        assert!(TabularStrategy::new(rows).is_err());
    }

    #[test]
    fn obs_key_encoding_is_stable() {
        let key = ObsKey {
            target: 1,
            instance: Some(3),
            label: Some(1),
            histories: vec![(0, vec![2, 1]), (1, vec![])],
        };
        assert_eq!(key.encode(), "t1|x3|y1|c0:2.1|c1:");
    }

    fn device_of(weights: Vec<f64>) -> CorrelationDevice {
        let comp = |pick: usize| {
            let mut rows = BTreeMap::new();
            rows.insert("k".to_string(), TabularStrategy::deterministic_row(2, pick));
            TabularStrategy { rows }
        };
        let pairs = vec![(comp(0), comp(0)), (comp(1), comp(1))];
        CorrelationDevice::new(weights, pairs).unwrap()
    }

    #[test]
    fn point_mass_device_always_returns_the_same_pair() {
        use rand::SeedableRng;
        let device = device_of(vec![1.0, 0.0]);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(0);
        for _ in 0..32 {
            let (a, b) = device.sample_joint_prover(&mut rng);
            assert_eq!(a.row("k").unwrap()[0], 1.0);
            assert_eq!(b.row("k").unwrap()[0], 1.0);
        }
    }

    #[test]
    fn correlated_device_keeps_indices_equal() {
        use rand::SeedableRng;
        let device = device_of(vec![0.5, 0.5]);
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(1);
        for _ in 0..64 {
            let (a, b) = device.sample_joint_prover(&mut rng);
            assert_eq!(a.row("k").unwrap(), b.row("k").unwrap());
        }
    }

    #[test]
    fn product_device_draws_are_uncorrelated() {
        use rand::SeedableRng;
        let comp = |pick: usize| {
            let mut rows = BTreeMap::new();
            rows.insert("k".to_string(), TabularStrategy::deterministic_row(2, pick));
            TabularStrategy { rows }
        };
        let pairs = vec![
            (comp(0), comp(0)),
            (comp(0), comp(1)),
            (comp(1), comp(0)),
            (comp(1), comp(1)),
        ];
        let device = CorrelationDevice::new(vec![0.25; 4], pairs).unwrap();
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(2);
        let n = 100_000;
        let (mut sum_a, mut sum_b, mut sum_ab) = (0.0, 0.0, 0.0);
        for _ in 0..n {
            let (a, b) = device.sample_joint_prover(&mut rng);
            let ia = a.row("k").unwrap()[1];
            let ib = b.row("k").unwrap()[1];
            sum_a += ia;
            sum_b += ib;
            sum_ab += ia * ib;
        }
        let n = n as f64;
        let cov = sum_ab / n - (sum_a / n) * (sum_b / n);
        assert!(cov.abs() < 0.01, "covariance {cov} should vanish");
    }
}
