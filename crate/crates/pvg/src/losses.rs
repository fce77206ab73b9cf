//! Exact loss evaluation: per-instance error probabilities, protocol loss
//! functionals, completeness/soundness errors, zero-knowledge statistical
//! distance and validity verdicts.
//!
//! Everything here is computed from exact transcript distributions; a
//! Monte-Carlo fallback exists only for per-instance losses when the branch
//! budget is exceeded. Log losses of zero-probability events evaluate to the
//! `+inf` sentinel rather than being clipped, so deviation comparisons stay
//! meaningful.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::game::{
    decision_correct, enumerate_transcript_distribution, rollout, AgentId, ChannelId, GameSpec,
    Role, Transcript, DEFAULT_BRANCH_BUDGET,
};
use crate::strategy::{ObsKey, Strategy, StrategyProfile, TabularStrategy};
use crate::{PvgError, Result};

/// Numerical tolerance for probability comparisons in reports.
pub const PROB_TOLERANCE: f64 = 1e-9;

/// Loss functional identifiers, one per agent slot in a game.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LossKind {
    /// Negative expected log acceptance probability.
    AdpProver,
    /// Negative expected log probability of the correct decision.
    AdpVerifier,
    /// Worst-case loss on positives minus worst-case loss on negatives.
    NipProver,
    /// Worst-case loss on positives plus worst-case loss on negatives.
    NipVerifier,
    /// Negative probability that the verdict names this prover (1 or 2).
    DebateProver { index: u8 },
    /// Negative probability that the chosen prover declared the true label.
    DebateVerifier,
    /// Negative expected log probability of the true class.
    MacHelpfulProver,
    /// Positive expected log probability of (true class or abstain).
    MacUnhelpfulProver,
    /// Mixture of the two conditional objectives weighted by `gamma`.
    MacVerifier { gamma: f64 },
    /// Negative of the maximal statistical distance to the simulator.
    ZkDishonestVerifier,
    /// The maximal statistical distance to the watched channel.
    ZkSimulator,
    /// Honest-channel objective plus the simulator term.
    ZkProver {
        coefficient: f64,
        mode: ZkProverMode,
    },
    /// Diagnostic simultaneous game: minimise (matcher) or maximise the
    /// probability that the two moves coincide.
    MatchingPennies { matcher: bool },
    /// Adversary choosing a (positive, negative) instance pair.
    AdversaryInstancePicker,
    /// Prover loss with worst-case terms replaced by adversary picks.
    AdversarialNipProver,
    /// Verifier loss with worst-case terms replaced by adversary picks.
    AdversarialNipVerifier,
}

/// How the simulator term enters the prover objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ZkProverMode {
    /// Scalar objective: honest loss + coefficient * distance.
    Weighted,
    /// Order by honest loss first, distance second; primary values within
    /// `tolerance` count as tied.
    Lexicographic { tolerance: f64 },
}

/// A loss value together with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossEstimate {
    pub value: f64,
    pub mode: EstimateMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EstimateMode {
    Exact,
    MonteCarlo { samples: usize, std_error: f64 },
}

impl LossEstimate {
    pub fn exact(value: f64) -> Self {
        Self {
            value,
            mode: EstimateMode::Exact,
        }
    }
}

/// Evaluation options for per-instance losses.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub branch_budget: usize,
    pub monte_carlo_fallback: bool,
    pub samples: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            branch_budget: DEFAULT_BRANCH_BUDGET,
            monte_carlo_fallback: true,
            samples: 100_000,
            seed: 0,
        }
    }
}

impl EvalOptions {
    pub fn exact_only() -> Self {
        Self {
            monte_carlo_fallback: false,
            ..Self::default()
        }
    }
}

/// Probability that the play on `x` ends incorrectly for the game's rule.
pub fn instance_loss(
    game: &GameSpec,
    profile: &StrategyProfile,
    x: usize,
    opts: &EvalOptions,
) -> Result<LossEstimate> {
    match instance_loss_exact(game, profile, x, opts.branch_budget) {
        Ok(v) => Ok(LossEstimate::exact(v)),
        Err(PvgError::BudgetExceeded { .. }) if opts.monte_carlo_fallback => {
            let mut rng = ChaCha12Rng::seed_from_u64(opts.seed);
            let y = game.problem.membership_label(x)?;
            let mut wrong = 0usize;
            for _ in 0..opts.samples {
                let tr = rollout(game, profile, x, &mut rng)?;
                if !decision_correct(game, &tr, y) {
                    wrong += 1;
                }
            }
            let p = wrong as f64 / opts.samples as f64;
            let std_error = (p * (1.0 - p) / opts.samples as f64).sqrt();
            Ok(LossEstimate {
                value: p,
                mode: EstimateMode::MonteCarlo {
                    samples: opts.samples,
                    std_error,
                },
            })
        }
        Err(e) => Err(e),
    }
}

fn instance_loss_exact(
    game: &GameSpec,
    profile: &StrategyProfile,
    x: usize,
    budget: usize,
) -> Result<f64> {
    let y = game.problem.membership_label(x)?;
    let dist = enumerate_transcript_distribution(game, profile, x, budget)?;
    Ok(dist
        .iter()
        .filter(|(tr, _)| !decision_correct(game, tr, y))
        .map(|(_, p)| p)
        .sum())
}

/// Probability that a binary-decision game accepts on `x`.
pub fn accept_probability(game: &GameSpec, profile: &StrategyProfile, x: usize) -> Result<f64> {
    if !game.is_binary_decision() {
        return Err(PvgError::Protocol(
            "acceptance requires a binary decision space".into(),
        ));
    }
    let dist = enumerate_transcript_distribution(game, profile, x, DEFAULT_BRANCH_BUDGET)?;
    Ok(dist
        .iter()
        .filter(|(tr, _)| tr.decision == Some(1))
        .map(|(_, p)| p)
        .sum())
}

/// Mean per-instance loss over an explicit instance list.
pub fn empirical_risk(
    game: &GameSpec,
    profile: &StrategyProfile,
    dataset: &[usize],
    opts: &EvalOptions,
) -> Result<LossEstimate> {
    if dataset.is_empty() {
        return Err(PvgError::Domain("empty dataset".into()));
    }
    let mut total = 0.0;
    for &x in dataset {
        total += instance_loss(game, profile, x, opts)?.value;
    }
    Ok(LossEstimate::exact(total / dataset.len() as f64))
}

/// Maximal per-instance loss over the dataset, optionally restricted by
/// label, together with the attaining instance (earliest on ties).
pub fn empirical_worst_case(
    game: &GameSpec,
    profile: &StrategyProfile,
    dataset: &[usize],
    condition: Option<u8>,
    opts: &EvalOptions,
) -> Result<(LossEstimate, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for &x in dataset {
        if let Some(label) = condition {
            if game.problem.membership_label(x)? != label {
                continue;
            }
        }
        let value = instance_loss(game, profile, x, opts)?.value;
        if best.is_none_or(|(b, _)| value > b + PROB_TOLERANCE) {
            best = Some((value, x));
        }
    }
    match best {
        Some((v, x)) => Ok((LossEstimate::exact(v), x)),
        None => Err(PvgError::Domain("empty dataset restriction".into())),
    }
}

/// Worst-case loss over all instances with the given label.
fn worst_case_by_label(game: &GameSpec, profile: &StrategyProfile, label: u8) -> Result<f64> {
    let instances = game.problem.instances_with_label(label);
    if instances.is_empty() {
        return Err(PvgError::Domain(format!(
            "problem has no label-{label} instance"
        )));
    }
    let mut worst: f64 = 0.0;
    for x in instances {
        worst = worst.max(instance_loss_exact(
            game,
            profile,
            x,
            DEFAULT_BRANCH_BUDGET,
        )?);
    }
    Ok(worst)
}

/// Exact expected loss of one agent under its game's loss functional.
///
/// For the lexicographic prover objective this returns the primary
/// component; solvers order lexicographically via [`agent_loss_components`].
pub fn agent_expected_loss(
    game: &GameSpec,
    profile: &StrategyProfile,
    agent: AgentId,
) -> Result<f64> {
    Ok(agent_loss_components(game, profile, agent)?[0])
}

/// Loss components for ordering: a single entry except for the
/// lexicographic prover objective, which yields (primary, distance).
pub fn agent_loss_components(
    game: &GameSpec,
    profile: &StrategyProfile,
    agent: AgentId,
) -> Result<Vec<f64>> {
    let kind = game
        .losses
        .get(agent)
        .copied()
        .ok_or_else(|| PvgError::Protocol(format!("no loss for agent {agent}")))?;
    match kind {
        LossKind::AdpProver => Ok(vec![adp_log_loss(game, profile, true)?]),
        LossKind::AdpVerifier => Ok(vec![adp_log_loss(game, profile, false)?]),
        LossKind::NipProver => {
            let wc1 = worst_case_by_label(game, profile, 1)?;
            let wc0 = worst_case_by_label(game, profile, 0)?;
            Ok(vec![wc1 - wc0])
        }
        LossKind::NipVerifier => {
            let wc1 = worst_case_by_label(game, profile, 1)?;
            let wc0 = worst_case_by_label(game, profile, 0)?;
            Ok(vec![wc1 + wc0])
        }
        LossKind::DebateProver { index } => {
            Ok(vec![-debate_verdict_probability(game, profile, index)?])
        }
        LossKind::DebateVerifier => {
            let mut total = 0.0;
            for x in 0..game.problem.len() {
                total -= game.problem.prior(x)
                    * (1.0 - instance_loss_exact(game, profile, x, DEFAULT_BRANCH_BUDGET)?);
            }
            Ok(vec![total])
        }
        LossKind::MacHelpfulProver => Ok(vec![mac_losses_full(game, profile)?.0]),
        LossKind::MacUnhelpfulProver => Ok(vec![mac_losses_full(game, profile)?.1]),
        LossKind::MacVerifier { gamma } => {
            let (_, _, helpful_branch, unhelpful_branch) = mac_losses_full(game, profile)?;
            // Zero-weight branches drop out entirely so an infinite branch
            // cannot poison the mixture through 0 * inf.
            let mut total = 0.0;
            if gamma < 1.0 {
                total += (1.0 - gamma) * helpful_branch;
            }
            if gamma > 0.0 {
                total += gamma * unhelpful_branch;
            }
            Ok(vec![total])
        }
        LossKind::ZkDishonestVerifier => Ok(vec![-zk_max_distance(game, profile)?]),
        LossKind::ZkSimulator => Ok(vec![zk_max_distance(game, profile)?]),
        LossKind::ZkProver { coefficient, mode } => {
            let wc1 = worst_case_by_label(game, profile, 1)?;
            let wc0 = worst_case_by_label(game, profile, 0)?;
            let primary = wc1 - wc0;
            let distance = zk_max_distance(game, profile)?;
            match mode {
                ZkProverMode::Weighted => Ok(vec![primary + coefficient * distance]),
                ZkProverMode::Lexicographic { .. } => Ok(vec![primary, distance]),
            }
        }
        LossKind::MatchingPennies { matcher } => {
            let p = match_probability(game, profile)?;
            Ok(vec![if matcher { -p } else { p }])
        }
        LossKind::AdversaryInstancePicker => {
            let (ls, lx) = adversary_expected_losses(game, profile)?;
            Ok(vec![-ls - lx])
        }
        LossKind::AdversarialNipProver => {
            let (ls, lx) = adversary_expected_losses(game, profile)?;
            Ok(vec![ls - lx])
        }
        LossKind::AdversarialNipVerifier => {
            let (ls, lx) = adversary_expected_losses(game, profile)?;
            Ok(vec![ls + lx])
        }
    }
}

/// Sums `weight * ln(prob)` terms; any positive-weight zero-probability term
/// switches the total to the infinity sentinel.
struct LogAccumulator {
    total: f64,
    infinite: bool,
}

impl LogAccumulator {
    fn new() -> Self {
        Self {
            total: 0.0,
            infinite: false,
        }
    }

    fn add(&mut self, weight: f64, prob: f64) {
        if weight <= 0.0 {
            return;
        }
        if prob <= 0.0 {
            self.infinite = true;
        } else {
            self.total += weight * prob.ln();
        }
    }

    fn negated(&self) -> f64 {
        if self.infinite {
            f64::INFINITY
        } else {
            -self.total
        }
    }
}

/// The one prover in a single-prover game.
fn sole_prover(game: &GameSpec) -> Result<AgentId> {
    let provers = game.agents_with_role(Role::Prover);
    match provers.as_slice() {
        [p] => Ok(*p),
        _ => Err(PvgError::Protocol("expected exactly one prover".into())),
    }
}

/// Negative expected log of the acceptance probability (prover side) or of
/// the correct-decision probability (verifier side), conditioned on the
/// opening instance and the prover's message.
fn adp_log_loss(game: &GameSpec, profile: &StrategyProfile, prover_side: bool) -> Result<f64> {
    let prover = sole_prover(game)?;
    let mut acc = LogAccumulator::new();
    for x in 0..game.problem.len() {
        let prior = game.problem.prior(x);
        if prior == 0.0 {
            continue;
        }
        let y = game.problem.label(x);
        let dist = enumerate_transcript_distribution(game, profile, x, DEFAULT_BRANCH_BUDGET)?;
        let mut by_message: BTreeMap<u32, (f64, f64)> = BTreeMap::new();
        for (tr, p) in &dist {
            let Some(m) = tr.first_message_of(prover, game.decision_channel) else {
                return Err(PvgError::Protocol(
                    "prover message missing from transcript".into(),
                ));
            };
            let entry = by_message.entry(m).or_insert((0.0, 0.0));
            entry.0 += p;
            let accepted = tr.decision == Some(1);
            let counted = if prover_side || y == 1 {
                accepted
            } else {
                !accepted
            };
            if counted {
                entry.1 += p;
            }
        }
        for (pm, pgood) in by_message.values() {
            if *pm <= 0.0 {
                continue;
            }
            acc.add(prior * pm, pgood / pm);
        }
    }
    Ok(acc.negated())
}

/// Probability that the debate verdict names prover `index` (1 or 2).
fn debate_verdict_probability(
    game: &GameSpec,
    profile: &StrategyProfile,
    index: u8,
) -> Result<f64> {
    let mut total = 0.0;
    for x in 0..game.problem.len() {
        let prior = game.problem.prior(x);
        if prior == 0.0 {
            continue;
        }
        let dist = enumerate_transcript_distribution(game, profile, x, DEFAULT_BRANCH_BUDGET)?;
        let p: f64 = dist
            .iter()
            .filter(|(tr, _)| tr.decision == Some(u32::from(index)))
            .map(|(_, p)| p)
            .sum();
        total += prior * p;
    }
    Ok(total)
}

/// Helpful/unhelpful prover losses (unconditional expectations) plus the two
/// prover-conditional branches entering the verifier mixture.
fn mac_losses_full(game: &GameSpec, profile: &StrategyProfile) -> Result<(f64, f64, f64, f64)> {
    let provers = game.agents_with_role(Role::Prover);
    let [helpful, unhelpful] = provers.as_slice() else {
        return Err(PvgError::Protocol("expected two provers".into()));
    };
    let channel = game.decision_channel;
    let mut l_helpful = LogAccumulator::new();
    let mut l_unhelpful = LogAccumulator::new();
    let mut branch_helpful = LogAccumulator::new();
    let mut branch_unhelpful = LogAccumulator::new();
    // The mechanism picks each prover with probability one half, so the
    // conditional expectations renormalise by two.
    let branch_norm = 2.0;

    for x in 0..game.problem.len() {
        let prior = game.problem.prior(x);
        if prior == 0.0 {
            continue;
        }
        let y = game.problem.label(x);
        let class_token = u32::from(y) + 1;
        let dist = enumerate_transcript_distribution(game, profile, x, DEFAULT_BRANCH_BUDGET)?;
        let mut by_feature: BTreeMap<u32, FeatureStats> = BTreeMap::new();
        for (tr, p) in &dist {
            let feature_event = tr
                .events
                .iter()
                .find(|e| e.t == 1 && e.channel == channel)
                .ok_or_else(|| PvgError::Protocol("feature event missing".into()))?;
            let stats = by_feature.entry(feature_event.message).or_default();
            stats.mass += p;
            if feature_event.sender == Some(*helpful) {
                stats.helpful_mass += p;
            } else if feature_event.sender == Some(*unhelpful) {
                stats.unhelpful_mass += p;
            }
            match tr.decision {
                Some(d) if d == class_token => stats.correct += p,
                Some(0) => stats.abstain += p,
                _ => {}
            }
        }
        // The verdict conditional on (instance, feature) is sender
        // independent, so the per-feature quotients serve both views.
        for stats in by_feature.values() {
            if stats.mass <= 0.0 {
                continue;
            }
            let q_correct = stats.correct / stats.mass;
            let q_safe = (stats.correct + stats.abstain) / stats.mass;
            l_helpful.add(prior * stats.mass, q_correct);
            l_unhelpful.add(prior * stats.mass, q_safe);
            branch_helpful.add(prior * stats.helpful_mass * branch_norm, q_correct);
            branch_unhelpful.add(prior * stats.unhelpful_mass * branch_norm, q_safe);
        }
    }
    // The unhelpful prover's objective enters with a positive sign.
    let unhelpful_loss = if l_unhelpful.infinite {
        f64::INFINITY
    } else {
        l_unhelpful.total
    };
    Ok((
        l_helpful.negated(),
        unhelpful_loss,
        branch_helpful.negated(),
        branch_unhelpful.negated(),
    ))
}

#[derive(Default)]
struct FeatureStats {
    mass: f64,
    helpful_mass: f64,
    unhelpful_mass: f64,
    correct: f64,
    abstain: f64,
}

/// Probability that the mover's token equals the decider's decision value in
/// the diagnostic simultaneous game.
fn match_probability(game: &GameSpec, profile: &StrategyProfile) -> Result<f64> {
    let prover = sole_prover(game)?;
    let prover_channel = *game
        .channels_of(prover)
        .first()
        .ok_or_else(|| PvgError::Protocol("mover has no channel".into()))?;
    let mut total = 0.0;
    for x in 0..game.problem.len() {
        let prior = game.problem.prior(x);
        if prior == 0.0 {
            continue;
        }
        let dist = enumerate_transcript_distribution(game, profile, x, DEFAULT_BRANCH_BUDGET)?;
        for (tr, p) in dist {
            let token = tr.first_message_of(prover, prover_channel);
            if let (Some(token), Some(d)) = (token, tr.decision) {
                if token == d {
                    total += prior * p;
                }
            }
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Zero-knowledge statistical distance.
// ---------------------------------------------------------------------------

/// Distribution over one channel's post-opening token sequences.
pub fn channel_sequence_distribution(
    game: &GameSpec,
    profile: &StrategyProfile,
    x: usize,
    channel: ChannelId,
) -> Result<BTreeMap<Vec<u32>, f64>> {
    let dist = enumerate_transcript_distribution(game, profile, x, DEFAULT_BRANCH_BUDGET)?;
    let mut out: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
    for (tr, p) in dist {
        *out.entry(tr.channel_messages(channel)).or_insert(0.0) += p;
    }
    Ok(out)
}

/// Total variation distance between two sequence distributions.
pub fn tv_distance(a: &BTreeMap<Vec<u32>, f64>, b: &BTreeMap<Vec<u32>, f64>) -> f64 {
    let mut keys: Vec<&Vec<u32>> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys
        .into_iter()
        .map(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

/// Maximal statistical distance between the watched channel and the
/// simulator channel over the given instances.
pub fn zk_statistical_distance(
    game: &GameSpec,
    profile: &StrategyProfile,
    instances: &[usize],
) -> Result<f64> {
    let layout = game
        .zk
        .as_ref()
        .ok_or_else(|| PvgError::Protocol("game has no zero-knowledge layout".into()))?;
    let mut worst: f64 = 0.0;
    for &x in instances {
        let watched = channel_sequence_distribution(game, profile, x, layout.watched_channel)?;
        let simulated = channel_sequence_distribution(game, profile, x, layout.simulator_channel)?;
        worst = worst.max(tv_distance(&watched, &simulated));
    }
    Ok(worst)
}

fn zk_max_distance(game: &GameSpec, profile: &StrategyProfile) -> Result<f64> {
    let layout = game
        .zk
        .as_ref()
        .ok_or_else(|| PvgError::Protocol("game has no zero-knowledge layout".into()))?;
    let instances: Vec<usize> = if layout.all_instances {
        (0..game.problem.len()).collect()
    } else {
        game.problem.instances_with_label(1)
    };
    zk_statistical_distance(game, profile, &instances)
}

// ---------------------------------------------------------------------------
// Adversarial instance selection.
// ---------------------------------------------------------------------------

/// Observation key under which the adversary's pair distribution is stored.
pub fn adversary_key(game: &GameSpec) -> String {
    ObsKey {
        target: game.channels.len(),
        instance: None,
        label: None,
        histories: Vec::new(),
    }
    .encode()
}

/// Expected per-instance losses at the adversary's chosen positive and
/// negative instances.
fn adversary_expected_losses(game: &GameSpec, profile: &StrategyProfile) -> Result<(f64, f64)> {
    let layout = game
        .adversary
        .as_ref()
        .ok_or_else(|| PvgError::Protocol("game has no adversary layout".into()))?;
    let Strategy::Tabular(t) = &profile.strategies[layout.agent] else {
        return Err(PvgError::Protocol(
            "adversary strategy must be tabular".into(),
        ));
    };
    let weights = t.row(&adversary_key(game))?;
    if weights.len() != layout.pairs.len() {
        return Err(PvgError::Protocol("adversary row arity mismatch".into()));
    }
    let mut loss_cache: BTreeMap<usize, f64> = BTreeMap::new();
    let mut positive = 0.0;
    let mut negative = 0.0;
    for (&w, &(s, x)) in weights.iter().zip(&layout.pairs) {
        if w == 0.0 {
            continue;
        }
        for (instance, sink) in [(s, &mut positive), (x, &mut negative)] {
            let loss = match loss_cache.get(&instance) {
                Some(&v) => v,
                None => {
                    let v = instance_loss_exact(game, profile, instance, DEFAULT_BRANCH_BUDGET)?;
                    loss_cache.insert(instance, v);
                    v
                }
            };
            *sink += w * loss;
        }
    }
    Ok((positive, negative))
}

// ---------------------------------------------------------------------------
// Completeness, soundness, validity.
// ---------------------------------------------------------------------------

/// Largest rejection probability over positive instances, with the witness.
pub fn completeness_error(game: &GameSpec, profile: &StrategyProfile) -> Result<(f64, usize)> {
    let positives = game.problem.instances_with_label(1);
    if positives.is_empty() {
        return Err(PvgError::Domain("problem has no positive instance".into()));
    }
    let mut worst = (f64::NEG_INFINITY, 0usize);
    for x in positives {
        let loss = instance_loss_exact(game, profile, x, DEFAULT_BRANCH_BUDGET)?;
        if loss > worst.0 + PROB_TOLERANCE {
            worst = (loss, x);
        }
    }
    Ok(worst)
}

/// A joint reassignment of prover strategies used as a soundness deviation.
pub type ProverDeviation = Vec<(AgentId, Strategy)>;

/// Witness for the soundness supremum.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SoundnessWitness {
    pub deviation_index: usize,
    pub instance: usize,
}

/// Largest acceptance probability over negative instances and prover
/// deviations from the supplied set (joint deviations for multi-prover
/// games). The verifier part of `profile` stays fixed.
pub fn soundness_error(
    game: &GameSpec,
    profile: &StrategyProfile,
    deviations: &[ProverDeviation],
) -> Result<(f64, SoundnessWitness)> {
    if deviations.is_empty() {
        return Err(PvgError::Domain("empty prover deviation set".into()));
    }
    let negatives = game.problem.instances_with_label(0);
    if negatives.is_empty() {
        return Err(PvgError::Domain("problem has no negative instance".into()));
    }
    let mut worst = (
        f64::NEG_INFINITY,
        SoundnessWitness {
            deviation_index: 0,
            instance: 0,
        },
    );
    for (i, deviation) in deviations.iter().enumerate() {
        let mut deviated = profile.clone();
        for (agent, strategy) in deviation {
            deviated = deviated.with_strategy(*agent, strategy.clone());
        }
        for &x in &negatives {
            let accept = accept_probability(game, &deviated, x)?;
            if accept > worst.0 + PROB_TOLERANCE {
                worst = (
                    accept,
                    SoundnessWitness {
                        deviation_index: i,
                        instance: x,
                    },
                );
            }
        }
    }
    Ok(worst)
}

/// Every pure tabular strategy of one agent, as point-mass rows over its
/// reachable observation keys. Errors when the count would exceed `cap`.
pub fn enumerate_pure_strategies(
    game: &GameSpec,
    agent: AgentId,
    cap: usize,
) -> Result<Vec<TabularStrategy>> {
    let keys: Vec<(String, usize)> =
        crate::game::reachable_keys(game, agent, DEFAULT_BRANCH_BUDGET)?
            .into_iter()
            .collect();
    let mut count: usize = 1;
    for (_, space) in &keys {
        count = count.saturating_mul(*space);
        if count > cap {
            return Err(PvgError::BudgetExceeded {
                visited: count,
                budget: cap,
            });
        }
    }
    let mut out = Vec::with_capacity(count);
    let mut picks = vec![0usize; keys.len()];
    loop {
        let rows: BTreeMap<String, Vec<f64>> = keys
            .iter()
            .zip(&picks)
            .map(|((key, space), &pick)| {
                (
                    key.clone(),
                    TabularStrategy::deterministic_row(*space, pick),
                )
            })
            .collect();
        out.push(TabularStrategy { rows });
        // Odometer increment over the per-key message choices.
        let mut idx = keys.len();
        loop {
            if idx == 0 {
                return Ok(out);
            }
            idx -= 1;
            picks[idx] += 1;
            if picks[idx] < keys[idx].1 {
                break;
            }
            picks[idx] = 0;
        }
    }
}

/// Joint pure deviations across all provers of the game.
pub fn all_pure_prover_deviations(game: &GameSpec, cap: usize) -> Result<Vec<ProverDeviation>> {
    let provers = game.agents_with_role(Role::Prover);
    let mut per_agent: Vec<(AgentId, Vec<TabularStrategy>)> = Vec::new();
    for p in provers {
        per_agent.push((p, enumerate_pure_strategies(game, p, cap)?));
    }
    let mut out: Vec<ProverDeviation> = vec![Vec::new()];
    for (agent, strategies) in per_agent {
        let mut next = Vec::with_capacity(out.len() * strategies.len());
        for base in &out {
            for s in &strategies {
                if next.len() > cap {
                    return Err(PvgError::BudgetExceeded {
                        visited: next.len(),
                        budget: cap,
                    });
                }
                let mut dev = base.clone();
                dev.push((agent, Strategy::Tabular(s.clone())));
                next.push(dev);
            }
        }
        out = next;
    }
    Ok(out)
}

/// Completeness error, soundness error, verdict and optional zero-knowledge
/// distance for one profile.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidityReport {
    pub completeness_error: f64,
    pub completeness_witness: usize,
    pub soundness_error: f64,
    pub soundness_witness: SoundnessWitness,
    pub valid: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zk_distance: Option<f64>,
    /// Numerical tolerance used for the comparisons above.
    pub tolerance: f64,
}

/// Assemble the validity verdict for a profile against a prover deviation set.
pub fn validity_report(
    game: &GameSpec,
    profile: &StrategyProfile,
    deviations: &[ProverDeviation],
    with_zk: bool,
) -> Result<ValidityReport> {
    let (eps_c, completeness_witness) = completeness_error(game, profile)?;
    let (eps_s, soundness_witness) = soundness_error(game, profile, deviations)?;
    let zk_distance = if with_zk {
        Some(zk_max_distance(game, profile)?)
    } else {
        None
    };
    Ok(ValidityReport {
        completeness_error: eps_c,
        completeness_witness,
        soundness_error: eps_s,
        soundness_witness,
        valid: eps_c + eps_s < 1.0,
        zk_distance,
        tolerance: PROB_TOLERANCE,
    })
}

/// Empirical transcript check: run `samples` rollouts and compare
/// frequencies against the exact distribution within `sigmas` standard
/// errors.
pub fn monte_carlo_consistency(
    game: &GameSpec,
    profile: &StrategyProfile,
    x: usize,
    samples: usize,
    sigmas: f64,
    seed: u64,
) -> Result<bool> {
    let exact = enumerate_transcript_distribution(game, profile, x, DEFAULT_BRANCH_BUDGET)?;
    let mut counts: BTreeMap<Transcript, usize> = BTreeMap::new();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    for _ in 0..samples {
        let tr = rollout(game, profile, x, &mut rng)?;
        *counts.entry(tr).or_insert(0) += 1;
    }
    for (tr, p) in &exact {
        let freq = counts.get(tr).copied().unwrap_or(0) as f64 / samples as f64;
        let std_error = (p * (1.0 - p) / samples as f64).sqrt();
        if (freq - p).abs() > sigmas * std_error + 1e-12 {
            return Ok(false);
        }
    }
    let support: f64 = exact.iter().map(|(_, p)| p).sum();
    Ok((support - 1.0).abs() < 1e-9)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tv_distance_of_identical_distributions_is_zero() {
        let mut a = BTreeMap::new();
        a.insert(vec![0u32], 0.4);
        a.insert(vec![1u32], 0.6);
        assert_eq!(tv_distance(&a, &a.clone()), 0.0);
    }

    #[test]
    fn tv_distance_of_disjoint_supports_is_one() {
        let mut a = BTreeMap::new();
        a.insert(vec![0u32], 1.0);
        let mut b = BTreeMap::new();
        b.insert(vec![1u32], 1.0);
        assert!((tv_distance(&a, &b) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tv_distance_against_uniform_fixture() {
        let mut a = BTreeMap::new();
        a.insert(vec![0u32], 0.75);
        a.insert(vec![1u32], 0.25);
        let mut b = BTreeMap::new();
        b.insert(vec![0u32], 0.5);
        b.insert(vec![1u32], 0.5);
        assert!((tv_distance(&a, &b) - 0.25).abs() < 1e-12);
    }

    #[test]
    fn tv_triangle_inequality_on_random_distributions() {
        use rand::{RngExt, SeedableRng};
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        for _ in 0..200 {
            let mut make = |_: usize| {
                let raw: Vec<f64> = (0..4).map(|_| rng.random::<f64>()).collect();
                let total: f64 = raw.iter().sum();
                let mut m = BTreeMap::new();
                for (i, w) in raw.iter().enumerate() {
                    m.insert(vec![i as u32], w / total);
                }
                m
            };
            let (a, b, c) = (make(0), make(1), make(2));
            let (ab, bc, ac) = (
                tv_distance(&a, &b),
                tv_distance(&b, &c),
                tv_distance(&a, &c),
            );
            assert!(ac <= ab + bc + 1e-12);
            assert!((0.0..=1.0).contains(&ab));
        }
    }
}

#[cfg(test)]
mod risk_tests {
    use super::*;
    use crate::problem::DecisionProblem;
    use crate::protocols::{build_nip, constant_verifier, oracle_verifier, parity_adp_game};
    use crate::strategy::{uniform_strategy, Strategy, StrategyProfile};

    fn four_point_problem() -> DecisionProblem {
        DecisionProblem::new(
            vec!["a".into(), "b".into(), "c".into(), "d".into()],
            vec![0, 1, 0, 1],
            vec![0.1, 0.2, 0.3, 0.4],
        )
        .unwrap()
    }

    #[test]
    fn uniform_losses_make_worst_case_equal_risk() {
        let game = build_nip(four_point_problem(), 1, 2).unwrap();
        let profile = StrategyProfile::new(vec![
            Strategy::Tabular(uniform_strategy(&game, 0).unwrap()),
            Strategy::Tabular(constant_verifier(&game, 1).unwrap()),
        ]);
        // Always accepting: loss 1 on negatives, 0 on positives; restrict to
        // negatives so the per-instance losses are uniform.
        let negatives = game.problem.instances_with_label(0);
        let opts = EvalOptions::exact_only();
        let risk = empirical_risk(&game, &profile, &negatives, &opts).unwrap();
        let (worst, _) = empirical_worst_case(&game, &profile, &negatives, None, &opts).unwrap();
        assert!((risk.value - worst.value).abs() < 1e-12);
    }

    #[test]
    fn worst_case_picks_the_maximum_with_its_witness() {
        let game = build_nip(four_point_problem(), 1, 2).unwrap();
        // Mix an oracle with an always-accept verifier to spread losses.
        let oracle = oracle_verifier(&game).unwrap();
        let accept = constant_verifier(&game, 1).unwrap();
        let mixed =
            crate::strategy::MixtureStrategy::new(vec![0.3, 0.7], vec![accept, oracle]).unwrap();
        let profile = StrategyProfile::new(vec![
            Strategy::Tabular(uniform_strategy(&game, 0).unwrap()),
            Strategy::Mixture(mixed),
        ]);
        let opts = EvalOptions::exact_only();
        let all: Vec<usize> = (0..4).collect();
        // Negatives lose 0.3 (accept weight), positives 0.
        let (worst, witness) = empirical_worst_case(&game, &profile, &all, None, &opts).unwrap();
        assert!((worst.value - 0.3).abs() < 1e-12);
        assert_eq!(game.problem.label(witness), 0);
        let risk = empirical_risk(&game, &profile, &all, &opts).unwrap();
        assert!(worst.value >= risk.value);
        // Restricting to positives gives zero loss.
        let (pos_worst, _) = empirical_worst_case(&game, &profile, &all, Some(1), &opts).unwrap();
        assert!(pos_worst.value.abs() < 1e-12);
        // An empty restriction errors.
        assert!(empirical_worst_case(&game, &profile, &[], None, &opts).is_err());
    }

    #[test]
    fn risk_over_prior_proportional_multiplicity_matches_the_expectation() {
        let game = build_nip(four_point_problem(), 1, 2).unwrap();
        let profile = StrategyProfile::new(vec![
            Strategy::Tabular(uniform_strategy(&game, 0).unwrap()),
            Strategy::Tabular(constant_verifier(&game, 1).unwrap()),
        ]);
        let opts = EvalOptions::exact_only();
        // Prior (0.1, 0.2, 0.3, 0.4) over ten slots.
        let dataset = vec![0, 1, 1, 2, 2, 2, 3, 3, 3, 3];
        let risk = empirical_risk(&game, &profile, &dataset, &opts).unwrap();
        let mut expectation = 0.0;
        for x in 0..4 {
            expectation +=
                game.problem.prior(x) * instance_loss(&game, &profile, x, &opts).unwrap().value;
        }
        assert!((risk.value - expectation).abs() < 1e-12);
    }

    #[test]
    fn log_loss_of_an_unreachable_acceptance_is_the_infinity_sentinel() {
        let parity = parity_adp_game(0.2).unwrap();
        // The identity map sends the fourth message, which the reference
        // mixture never accepts.
        let profile = StrategyProfile::new(vec![
            parity.provers[2].clone(),
            parity.reference_verifier().unwrap(),
        ]);
        let loss = agent_expected_loss(&parity.game, &profile, 0).unwrap();
        assert!(loss.is_infinite() && loss > 0.0);
        // The sentinel stays ordered against finite losses.
        let finite = agent_expected_loss(
            &parity.game,
            &StrategyProfile::new(vec![
                parity.provers[1].clone(),
                parity.reference_verifier().unwrap(),
            ]),
            0,
        )
        .unwrap();
        assert!(finite < loss);
    }

    #[test]
    fn uniform_decision_gives_a_coin_flip_loss() {
        let game = build_nip(four_point_problem(), 1, 2).unwrap();
        let profile = StrategyProfile::new(vec![
            Strategy::Tabular(uniform_strategy(&game, 0).unwrap()),
            Strategy::Tabular(uniform_strategy(&game, 1).unwrap()),
        ]);
        for x in 0..4 {
            let loss = instance_loss(&game, &profile, x, &EvalOptions::exact_only()).unwrap();
            assert!((loss.value - 0.5).abs() < 1e-12);
        }
    }
}

#[cfg(test)]
mod worst_case_sum_tests {
    use super::*;
    use crate::problem::DecisionProblem;
    use crate::protocols::build_nip;
    use crate::strategy::{uniform_strategy, Strategy, StrategyProfile, TabularStrategy};

    /// Per-instance losses 0.3 (positive) and 0.2 (negative) add up to the
    /// verifier's worst-case objective of one half.
    #[test]
    fn verifier_loss_is_the_sum_of_the_two_worst_cases() {
        let problem =
            DecisionProblem::new(vec!["neg".into(), "pos".into()], vec![0, 1], vec![0.5, 0.5])
                .unwrap();
        let game = build_nip(problem, 1, 2).unwrap();
        // Accept probability 0.7 on the positive instance, 0.2 on the
        // negative one, independent of the message.
        let keys = crate::game::reachable_keys(&game, 1, 1_000_000).unwrap();
        let rows = keys
            .into_iter()
            .map(|(key, _)| {
                let accept = if key.contains("|x1|") { 0.7 } else { 0.2 };
                (key, vec![1.0 - accept, accept])
            })
            .collect();
        let verifier = TabularStrategy::new(rows).unwrap();
        let profile = StrategyProfile::new(vec![
            Strategy::Tabular(uniform_strategy(&game, 0).unwrap()),
            Strategy::Tabular(verifier),
        ]);
        let opts = EvalOptions::exact_only();
        assert!((instance_loss(&game, &profile, 1, &opts).unwrap().value - 0.3).abs() < 1e-12);
        assert!((instance_loss(&game, &profile, 0, &opts).unwrap().value - 0.2).abs() < 1e-12);
        let loss = agent_expected_loss(&game, &profile, 1).unwrap();
        assert!((loss - 0.5).abs() < 1e-12);
    }
}
