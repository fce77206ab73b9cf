//! Equilibrium enumeration over finite strategy grids: approximate Nash,
//! leader-ordered Stackelberg and correlated Stackelberg, the adversarial
//! worst-case transformation, and the two exhaustive verification harnesses
//! relating validity to verifier-leading equilibria.
//!
//! Mixed strategies appear in grids as explicit points (mixtures over pure
//! sets at a chosen simplex resolution), so every search is exhaustive and
//! every certificate is an exactly recomputable deviation gain.

use std::collections::HashMap;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::game::{AdversaryLayout, AgentId, GameSpec, Role};
use crate::losses::{agent_loss_components, LossKind};
use crate::strategy::{CorrelationDevice, Strategy, StrategyProfile, TabularStrategy};
use crate::{PvgError, Result};

/// Default cap on loss evaluations per query.
pub const DEFAULT_SEARCH_BUDGET: usize = 5_000_000;

/// Finite strategy list for one agent.
#[derive(Debug, Clone)]
pub struct Grid {
    pub agent: AgentId,
    pub strategies: Vec<Strategy>,
}

impl Grid {
    pub fn new(agent: AgentId, strategies: Vec<Strategy>) -> Self {
        Self { agent, strategies }
    }

    pub fn len(&self) -> usize {
        self.strategies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strategies.is_empty()
    }
}

/// Follower selection when a leader scores its commitment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TieBreaking {
    /// Strong equilibrium: followers break ties in the leader's favour.
    LeaderOptimistic,
    /// Followers break ties against the leader.
    LeaderPessimistic,
}

#[derive(Debug, Clone)]
pub enum QueryKind {
    Nash,
    /// Leaders commit in the given order; remaining agents play an
    /// approximate Nash equilibrium among themselves.
    Stackelberg {
        leader_order: Vec<AgentId>,
    },
}

#[derive(Debug, Clone)]
pub struct EquilibriumQuery {
    pub kind: QueryKind,
    /// Per-agent tolerances, indexed by agent id.
    pub tolerances: Vec<f64>,
    pub tie_breaking: TieBreaking,
    pub budget: usize,
}

impl EquilibriumQuery {
    pub fn nash(tolerances: Vec<f64>) -> Self {
        Self {
            kind: QueryKind::Nash,
            tolerances,
            tie_breaking: TieBreaking::LeaderPessimistic,
            budget: DEFAULT_SEARCH_BUDGET,
        }
    }

    pub fn stackelberg(leader_order: Vec<AgentId>, tolerances: Vec<f64>, tie: TieBreaking) -> Self {
        Self {
            kind: QueryKind::Stackelberg { leader_order },
            tolerances,
            tie_breaking: tie,
            budget: DEFAULT_SEARCH_BUDGET,
        }
    }
}

/// One equilibrium profile: grid indices per agent (in grid order), primary
/// losses, and the per-agent deviation gains certifying membership.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumPoint {
    pub assignment: Vec<usize>,
    pub losses: Vec<f64>,
    pub certificates: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquilibriumResult {
    pub points: Vec<EquilibriumPoint>,
    /// Leader score of the reported points, for Stackelberg queries.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub leader_value: Option<f64>,
    pub evaluations: usize,
    pub elapsed_ms: u128,
}

/// Memoising loss oracle over grid assignments.
struct LossOracle<'a> {
    game: &'a GameSpec,
    grids: &'a [Grid],
    base: StrategyProfile,
    cache: HashMap<Vec<usize>, Vec<Vec<f64>>>,
    evaluations: usize,
    budget: usize,
}

impl<'a> LossOracle<'a> {
    fn new(game: &'a GameSpec, grids: &'a [Grid], budget: usize) -> Result<Self> {
        if grids.iter().any(|g| g.is_empty()) {
            return Err(PvgError::Domain("empty strategy grid".into()));
        }
        // Agents without a grid keep a placeholder that must never be used;
        // grids must cover every agent that the losses touch.
        let strategies: Vec<Strategy> = (0..game.agent_count())
            .map(|agent| {
                grids
                    .iter()
                    .find(|g| g.agent == agent)
                    .map(|g| g.strategies[0].clone())
                    .ok_or_else(|| PvgError::Domain(format!("agent {agent} has no strategy grid")))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            game,
            grids,
            base: StrategyProfile::new(strategies),
            cache: HashMap::new(),
            evaluations: 0,
            budget,
        })
    }

    fn profile(&self, assignment: &[usize]) -> StrategyProfile {
        let mut profile = self.base.clone();
        for (grid, &idx) in self.grids.iter().zip(assignment) {
            profile.strategies[grid.agent] = grid.strategies[idx].clone();
        }
        profile
    }

    /// Loss components for every agent at the assignment.
    fn losses(&mut self, assignment: &[usize]) -> Result<Vec<Vec<f64>>> {
        if let Some(hit) = self.cache.get(assignment) {
            return Ok(hit.clone());
        }
        self.evaluations += 1;
        if self.evaluations > self.budget {
            return Err(PvgError::BudgetExceeded {
                visited: self.evaluations,
                budget: self.budget,
            });
        }
        let profile = self.profile(assignment);
        let mut all = Vec::with_capacity(self.game.agent_count());
        for agent in 0..self.game.agent_count() {
            all.push(agent_loss_components(self.game, &profile, agent)?);
        }
        self.cache.insert(assignment.to_vec(), all.clone());
        Ok(all)
    }

    fn primary(&mut self, assignment: &[usize], agent: AgentId) -> Result<f64> {
        Ok(self.losses(assignment)?[agent][0])
    }
}

fn grid_slot(grids: &[Grid], agent: AgentId) -> Result<usize> {
    grids
        .iter()
        .position(|g| g.agent == agent)
        .ok_or_else(|| PvgError::Domain(format!("no grid for agent {agent}")))
}

/// All grid strategies of `agent` whose loss is within `tolerance` of the
/// grid minimum, others held fixed. Returns (index, loss) pairs sorted by
/// grid index, with exact losses attached.
pub fn best_responses(
    game: &GameSpec,
    grids: &[Grid],
    fixed: &[usize],
    agent: AgentId,
    tolerance: f64,
) -> Result<Vec<(usize, f64)>> {
    let mut oracle = LossOracle::new(game, grids, DEFAULT_SEARCH_BUDGET)?;
    let slot = grid_slot(grids, agent)?;
    best_responses_inner(&mut oracle, fixed, slot, agent, tolerance)
}

fn best_responses_inner(
    oracle: &mut LossOracle<'_>,
    fixed: &[usize],
    slot: usize,
    agent: AgentId,
    tolerance: f64,
) -> Result<Vec<(usize, f64)>> {
    let n = oracle.grids[slot].len();
    let mut losses = Vec::with_capacity(n);
    let mut best = f64::INFINITY;
    for idx in 0..n {
        let mut assignment = fixed.to_vec();
        assignment[slot] = idx;
        let value = oracle.primary(&assignment, agent)?;
        if value < best {
            best = value;
        }
        losses.push((idx, value));
    }
    // An all-infinite column keeps every entry (any response is as good).
    Ok(losses
        .into_iter()
        .filter(|(_, v)| {
            if best.is_infinite() {
                true
            } else {
                *v <= best + tolerance
            }
        })
        .collect())
}

/// Exhaustive approximate-Nash scan over the product of the grids.
pub fn find_nash(
    game: &GameSpec,
    grids: &[Grid],
    query: &EquilibriumQuery,
) -> Result<EquilibriumResult> {
    let start = Instant::now();
    let mut oracle = LossOracle::new(game, grids, query.budget)?;
    let mut points = Vec::new();
    let sizes: Vec<usize> = grids.iter().map(Grid::len).collect();
    let mut assignment = vec![0usize; grids.len()];
    loop {
        let mut certificates = Vec::with_capacity(grids.len());
        let mut is_equilibrium = true;
        for (slot, grid) in grids.iter().enumerate() {
            let current = oracle.primary(&assignment, grid.agent)?;
            let responses = best_responses_inner(&mut oracle, &assignment, slot, grid.agent, 0.0)?;
            let best = responses.first().map(|(_, v)| *v).unwrap_or(f64::INFINITY);
            let gain = if current.is_infinite() && best.is_infinite() {
                0.0
            } else {
                current - best
            };
            certificates.push(gain);
            if gain > query.tolerances[grid.agent] {
                is_equilibrium = false;
                break;
            }
        }
        if is_equilibrium {
            let losses = oracle.losses(&assignment)?.iter().map(|c| c[0]).collect();
            points.push(EquilibriumPoint {
                assignment: assignment.clone(),
                losses,
                certificates,
            });
        }
        if !increment(&mut assignment, &sizes) {
            break;
        }
    }
    Ok(EquilibriumResult {
        points,
        leader_value: None,
        evaluations: oracle.evaluations,
        elapsed_ms: start.elapsed().as_millis(),
    })
}

fn increment(assignment: &mut [usize], sizes: &[usize]) -> bool {
    for i in (0..assignment.len()).rev() {
        assignment[i] += 1;
        if assignment[i] < sizes[i] {
            return true;
        }
        assignment[i] = 0;
    }
    false
}

/// Stackelberg search with an explicit leader order; agents outside the
/// order play an approximate Nash equilibrium among themselves given the
/// leaders' commitments (a single trailing agent degenerates to its
/// best-response set).
pub fn find_stackelberg(
    game: &GameSpec,
    grids: &[Grid],
    query: &EquilibriumQuery,
) -> Result<EquilibriumResult> {
    let QueryKind::Stackelberg { leader_order } = &query.kind else {
        return Err(PvgError::Domain("query kind must be Stackelberg".into()));
    };
    let start = Instant::now();
    let mut oracle = LossOracle::new(game, grids, query.budget)?;
    let followers: Vec<AgentId> = grids
        .iter()
        .map(|g| g.agent)
        .filter(|a| !leader_order.contains(a))
        .collect();
    let assignment = vec![0usize; grids.len()];
    let level = solve_level(
        &mut oracle,
        leader_order,
        &followers,
        &assignment,
        &query.tolerances,
        query.tie_breaking,
    )?;
    let mut points = Vec::new();
    for completion in &level.completions {
        let losses: Vec<f64> = oracle
            .losses(&completion.assignment)?
            .iter()
            .map(|c| c[0])
            .collect();
        points.push(EquilibriumPoint {
            assignment: completion.assignment.clone(),
            losses,
            certificates: completion.certificates.clone(),
        });
    }
    Ok(EquilibriumResult {
        points,
        leader_value: Some(level.value),
        evaluations: oracle.evaluations,
        elapsed_ms: start.elapsed().as_millis(),
    })
}

/// Verifier-leading Stackelberg equilibrium: the game's decider commits
/// first, every other gridded agent follows.
pub fn find_verifier_leading_se(
    game: &GameSpec,
    grids: &[Grid],
    tolerances: Vec<f64>,
    tie: TieBreaking,
) -> Result<EquilibriumResult> {
    let query = EquilibriumQuery::stackelberg(vec![game.decider], tolerances, tie);
    find_stackelberg(game, grids, &query)
}

#[derive(Debug, Clone)]
struct Completion {
    assignment: Vec<usize>,
    /// Per-agent deviation gains, indexed like the grids.
    certificates: Vec<f64>,
}

#[derive(Debug)]
struct LevelResult {
    /// The leader-level score of the reported completions.
    value: f64,
    completions: Vec<Completion>,
}

fn solve_level(
    oracle: &mut LossOracle<'_>,
    leaders: &[AgentId],
    followers: &[AgentId],
    assignment: &[usize],
    tolerances: &[f64],
    tie: TieBreaking,
) -> Result<LevelResult> {
    let Some((leader, rest)) = leaders.split_first() else {
        return solve_followers(oracle, followers, assignment, tolerances);
    };
    let slot = grid_slot(oracle.grids, *leader)?;
    let n = oracle.grids[slot].len();
    let mut scored: Vec<(usize, f64, LevelResult)> = Vec::with_capacity(n);
    let mut best = f64::INFINITY;
    for idx in 0..n {
        let mut assignment = assignment.to_vec();
        assignment[slot] = idx;
        let sub = solve_level(oracle, rest, followers, &assignment, tolerances, tie)?;
        // Score this commitment by the leader's loss over the follower set.
        let mut score = match tie {
            TieBreaking::LeaderOptimistic => f64::INFINITY,
            TieBreaking::LeaderPessimistic => f64::NEG_INFINITY,
        };
        for completion in &sub.completions {
            let value = oracle.primary(&completion.assignment, *leader)?;
            score = match tie {
                TieBreaking::LeaderOptimistic => score.min(value),
                TieBreaking::LeaderPessimistic => score.max(value),
            };
        }
        if sub.completions.is_empty() {
            continue;
        }
        if score < best {
            best = score;
        }
        scored.push((idx, score, sub));
    }
    if scored.is_empty() {
        return Err(PvgError::Domain("no admissible leader commitment".into()));
    }
    let tolerance = tolerances[*leader];
    let mut completions = Vec::new();
    for (_, score, sub) in scored {
        let admitted = if best.is_infinite() {
            true
        } else {
            score <= best + tolerance
        };
        if !admitted {
            continue;
        }
        let leader_gain = if best.is_infinite() {
            0.0
        } else {
            score - best
        };
        for mut completion in sub.completions {
            completion.certificates[grid_slot(oracle.grids, *leader)?] = leader_gain;
            completions.push(completion);
        }
    }
    Ok(LevelResult {
        value: best,
        completions,
    })
}

fn solve_followers(
    oracle: &mut LossOracle<'_>,
    followers: &[AgentId],
    assignment: &[usize],
    tolerances: &[f64],
) -> Result<LevelResult> {
    match followers {
        [] => Ok(LevelResult {
            value: 0.0,
            completions: vec![Completion {
                assignment: assignment.to_vec(),
                certificates: vec![0.0; oracle.grids.len()],
            }],
        }),
        [agent] => {
            let slot = grid_slot(oracle.grids, *agent)?;
            let responses =
                best_responses_inner(oracle, assignment, slot, *agent, tolerances[*agent])?;
            let best = responses
                .iter()
                .map(|(_, v)| *v)
                .fold(f64::INFINITY, f64::min);
            let completions = responses
                .into_iter()
                .map(|(idx, value)| {
                    let mut assignment = assignment.to_vec();
                    assignment[slot] = idx;
                    let mut certificates = vec![0.0; oracle.grids.len()];
                    certificates[slot] = if best.is_infinite() {
                        0.0
                    } else {
                        value - best
                    };
                    Completion {
                        assignment,
                        certificates,
                    }
                })
                .collect();
            Ok(LevelResult {
                value: best,
                completions,
            })
        }
        group => {
            // Joint scan: approximate Nash among the trailing agents.
            let slots: Vec<usize> = group
                .iter()
                .map(|a| grid_slot(oracle.grids, *a))
                .collect::<Result<_>>()?;
            let sizes: Vec<usize> = slots.iter().map(|&s| oracle.grids[s].len()).collect();
            let mut picks = vec![0usize; slots.len()];
            let mut completions = Vec::new();
            loop {
                let mut assignment = assignment.to_vec();
                for (&slot, &pick) in slots.iter().zip(&picks) {
                    assignment[slot] = pick;
                }
                let mut certificates = vec![0.0; oracle.grids.len()];
                let mut ok = true;
                for (i, agent) in group.iter().enumerate() {
                    let current = oracle.primary(&assignment, *agent)?;
                    let responses =
                        best_responses_inner(oracle, &assignment, slots[i], *agent, 0.0)?;
                    let best = responses.first().map(|(_, v)| *v).unwrap_or(f64::INFINITY);
                    let gain = if current.is_infinite() && best.is_infinite() {
                        0.0
                    } else {
                        current - best
                    };
                    certificates[slots[i]] = gain;
                    if gain > tolerances[*agent] {
                        ok = false;
                        break;
                    }
                }
                if ok {
                    completions.push(Completion {
                        assignment,
                        certificates,
                    });
                }
                if !increment(&mut picks, &sizes) {
                    break;
                }
            }
            Ok(LevelResult {
                value: 0.0,
                completions,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Correlated Stackelberg for two-prover games.
// ---------------------------------------------------------------------------

/// Simplex grid: all weight vectors over `vertices` points whose entries are
/// multiples of `1/resolution`.
pub fn simplex_grid(vertices: usize, resolution: usize) -> Vec<Vec<f64>> {
    assert!(resolution >= 1, "resolution must be at least 1");
    let mut out = Vec::new();
    let mut current = vec![0usize; vertices];
    compositions(resolution, 0, &mut current, &mut out);
    out
}

fn compositions(left: usize, idx: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
    if idx == current.len() - 1 {
        current[idx] = left;
        let total: usize = current.iter().sum();
        out.push(current.iter().map(|&c| c as f64 / total as f64).collect());
        return;
    }
    for take in 0..=left {
        current[idx] = take;
        compositions(left - take, idx + 1, current, out);
    }
}

/// Correlated verifier-leading Stackelberg equilibrium for a two-prover
/// game: the provers' joint space is the simplex grid over pure strategy
/// pairs, deviations are joint (the pair acts as one minimiser of the shared
/// loss), and the verifier leads.
pub fn find_correlated_se(
    game: &GameSpec,
    prover_pures: &[(Vec<TabularStrategy>, Vec<TabularStrategy>)],
    verifier_grid: &Grid,
    resolution: usize,
    tolerances: Vec<f64>,
    tie: TieBreaking,
) -> Result<EquilibriumResult> {
    let provers = game.agents_with_role(Role::Prover);
    let [p1, p2] = provers.as_slice() else {
        return Err(PvgError::Domain(
            "correlated search needs exactly two provers".into(),
        ));
    };
    if game.losses[*p1] != game.losses[*p2] {
        return Err(PvgError::Domain(
            "correlated provers must share a loss".into(),
        ));
    }
    // Build the joint pure pair list, then all devices on the simplex grid.
    let mut pairs: Vec<(TabularStrategy, TabularStrategy)> = Vec::new();
    for (first, second) in prover_pures {
        for a in first {
            for b in second {
                pairs.push((a.clone(), b.clone()));
            }
        }
    }
    if pairs.is_empty() {
        return Err(PvgError::Domain("empty joint prover set".into()));
    }
    let devices: Vec<CorrelationDevice> = simplex_grid(pairs.len(), resolution)
        .into_iter()
        .map(|weights| CorrelationDevice::new(weights, pairs.clone()))
        .collect::<Result<_>>()?;
    find_correlated_se_over_devices(game, &devices, verifier_grid, tolerances, tie)
}

/// As [`find_correlated_se`], with an explicit device list as the joint grid.
pub fn find_correlated_se_over_devices(
    game: &GameSpec,
    devices: &[CorrelationDevice],
    verifier_grid: &Grid,
    tolerances: Vec<f64>,
    tie: TieBreaking,
) -> Result<EquilibriumResult> {
    let provers = game.agents_with_role(Role::Prover);
    let [p1, p2] = provers.as_slice() else {
        return Err(PvgError::Domain(
            "correlated search needs exactly two provers".into(),
        ));
    };
    let start = Instant::now();
    let mut evaluations = 0usize;
    // Loss of (device j, verifier v): evaluated with the device installed.
    let mut cache: HashMap<(usize, usize), (f64, f64)> = HashMap::new();
    let mut eval = |j: usize, v: usize, evaluations: &mut usize| -> Result<(f64, f64)> {
        if let Some(&hit) = cache.get(&(j, v)) {
            return Ok(hit);
        }
        *evaluations += 1;
        let mut strategies: Vec<Strategy> = (0..game.agent_count())
            .map(|_| Strategy::Tabular(devices[j].pairs[0].0.clone()))
            .collect();
        strategies[verifier_grid.agent] = verifier_grid.strategies[v].clone();
        let profile = StrategyProfile::with_correlation(strategies, *p1, *p2, devices[j].clone());
        let shared = agent_loss_components(game, &profile, *p1)?[0];
        let leader = agent_loss_components(game, &profile, game.decider)?[0];
        cache.insert((j, v), (shared, leader));
        Ok((shared, leader))
    };

    let e_prover = tolerances[*p1];
    let e_verifier = tolerances[game.decider];
    let mut scored: Vec<(usize, f64, Vec<usize>)> = Vec::new();
    let mut best_score = f64::INFINITY;
    for v in 0..verifier_grid.len() {
        let mut best_shared = f64::INFINITY;
        let mut shared_losses = Vec::with_capacity(devices.len());
        for j in 0..devices.len() {
            let (shared, _) = eval(j, v, &mut evaluations)?;
            best_shared = best_shared.min(shared);
            shared_losses.push(shared);
        }
        let responders: Vec<usize> = (0..devices.len())
            .filter(|&j| best_shared.is_infinite() || shared_losses[j] <= best_shared + e_prover)
            .collect();
        let mut score = match tie {
            TieBreaking::LeaderOptimistic => f64::INFINITY,
            TieBreaking::LeaderPessimistic => f64::NEG_INFINITY,
        };
        for &j in &responders {
            let (_, leader) = eval(j, v, &mut evaluations)?;
            score = match tie {
                TieBreaking::LeaderOptimistic => score.min(leader),
                TieBreaking::LeaderPessimistic => score.max(leader),
            };
        }
        best_score = best_score.min(score);
        scored.push((v, score, responders));
    }
    let mut points = Vec::new();
    for (v, score, responders) in scored {
        if !best_score.is_infinite() && score > best_score + e_verifier {
            continue;
        }
        let leader_gain = if best_score.is_infinite() {
            0.0
        } else {
            score - best_score
        };
        for j in responders {
            let (shared, leader) = eval(j, v, &mut evaluations)?;
            let mut best_shared = f64::INFINITY;
            for other in 0..devices.len() {
                best_shared = best_shared.min(eval(other, v, &mut evaluations)?.0);
            }
            let prover_gain = if best_shared.is_infinite() {
                0.0
            } else {
                shared - best_shared
            };
            points.push(EquilibriumPoint {
                assignment: vec![v, j],
                losses: vec![leader, shared],
                certificates: vec![leader_gain, prover_gain],
            });
        }
    }
    Ok(EquilibriumResult {
        points,
        leader_value: Some(best_score),
        evaluations,
        elapsed_ms: start.elapsed().as_millis(),
    })
}

// ---------------------------------------------------------------------------
// Adversarial transformation.
// ---------------------------------------------------------------------------

/// Add an adversary whose pure strategies are (positive, negative) instance
/// pairs; worst-case loss terms become the adversary's picks.
pub fn build_adversarial_game(game: &GameSpec) -> Result<GameSpec> {
    if !game.losses.iter().any(|k| matches!(k, LossKind::NipProver)) {
        return Err(PvgError::Domain(
            "adversarial transform expects the alternating protocol".into(),
        ));
    }
    let positives = game.problem.instances_with_label(1);
    let negatives = game.problem.instances_with_label(0);
    if positives.is_empty() || negatives.is_empty() {
        return Err(PvgError::Domain("problem must carry both labels".into()));
    }
    let mut pairs = Vec::with_capacity(positives.len() * negatives.len());
    for &s in &positives {
        for &x in &negatives {
            pairs.push((s, x));
        }
    }
    let mut transformed = game.clone();
    transformed.name = format!("{}-adversarial", game.name);
    let adversary = transformed.agents.len();
    transformed.agents.push(crate::game::AgentSpec {
        name: "adversary".into(),
        role: Role::Adversary,
        sees_instance: false,
        sees_label: false,
    });
    for kind in &mut transformed.losses {
        *kind = match *kind {
            LossKind::NipProver => LossKind::AdversarialNipProver,
            LossKind::NipVerifier => LossKind::AdversarialNipVerifier,
            other => other,
        };
    }
    transformed.losses.push(LossKind::AdversaryInstancePicker);
    transformed.adversary = Some(AdversaryLayout {
        agent: adversary,
        pairs: pairs.clone(),
    });
    // The adversary's selection row lives under a reserved key outside the
    // channel table; give it a message space for grid construction.
    transformed.message_spaces.insert(
        (adversary, transformed.channels.len()),
        (0..pairs.len() as u32).collect(),
    );
    Ok(transformed)
}

/// Point-mass adversary strategies, one per (positive, negative) pair.
pub fn adversary_pure_strategies(game: &GameSpec) -> Result<Vec<TabularStrategy>> {
    let layout = game
        .adversary
        .as_ref()
        .ok_or_else(|| PvgError::Protocol("game has no adversary".into()))?;
    let key = crate::losses::adversary_key(game);
    Ok((0..layout.pairs.len())
        .map(|i| {
            let mut rows = std::collections::BTreeMap::new();
            rows.insert(
                key.clone(),
                TabularStrategy::deterministic_row(layout.pairs.len(), i),
            );
            TabularStrategy { rows }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Validity <-> equilibrium harnesses.
// ---------------------------------------------------------------------------

/// Per-profile data shared by the two harnesses.
struct ProfileTable {
    /// Worst rejection probability on positives, per (prover, verifier).
    eps_c: Vec<Vec<f64>>,
    /// Worst acceptance probability on negatives, per (prover, verifier).
    eps_s: Vec<Vec<f64>>,
}

impl ProfileTable {
    fn build(game: &GameSpec, provers: &Grid, verifiers: &Grid) -> Result<Self> {
        let positives = game.problem.instances_with_label(1);
        let negatives = game.problem.instances_with_label(0);
        let mut eps_c = vec![vec![0.0; verifiers.len()]; provers.len()];
        let mut eps_s = vec![vec![0.0; verifiers.len()]; provers.len()];
        for (i, p) in provers.strategies.iter().enumerate() {
            for (j, v) in verifiers.strategies.iter().enumerate() {
                let profile = StrategyProfile::new(vec![p.clone(), v.clone()]);
                let mut worst_reject: f64 = 0.0;
                for &x in &positives {
                    worst_reject = worst_reject
                        .max(1.0 - crate::losses::accept_probability(game, &profile, x)?);
                }
                let mut worst_accept: f64 = 0.0;
                for &x in &negatives {
                    worst_accept =
                        worst_accept.max(crate::losses::accept_probability(game, &profile, x)?);
                }
                eps_c[i][j] = worst_reject;
                eps_s[i][j] = worst_accept;
            }
        }
        Ok(Self { eps_c, eps_s })
    }

    fn prover_loss(&self, i: usize, j: usize) -> f64 {
        self.eps_c[i][j] - self.eps_s[i][j]
    }

    fn verifier_loss(&self, i: usize, j: usize) -> f64 {
        self.eps_c[i][j] + self.eps_s[i][j]
    }

    /// Soundness against every prover in the grid, per verifier.
    fn grid_soundness(&self, j: usize) -> f64 {
        (0..self.eps_s.len())
            .map(|i| self.eps_s[i][j])
            .fold(0.0, f64::max)
    }
}

/// Canonical tolerances and the profile-by-profile comparison of validity
/// with strict approximate verifier-leading equilibrium membership.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum ValidityEquivalence {
    /// The grids contain no valid system, so the equivalence is vacuous.
    HypothesisUnmet,
    Checked {
        prover_tolerance: f64,
        verifier_tolerance: f64,
        profiles: usize,
        violations: Vec<EquivalenceViolation>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EquivalenceViolation {
    pub prover: usize,
    pub verifier: usize,
    pub valid: bool,
    pub equilibrium_member: bool,
}

/// Check, over the whole grid product, that a profile is a valid proof
/// system exactly when it is a strict approximate verifier-leading
/// Stackelberg equilibrium at the canonical tolerances: the prover tolerance
/// is one minus the best valid verifier loss, the verifier tolerance one
/// minus the minimax verifier loss over prover near-best-responses.
pub fn classify_validity_equivalence(
    game: &GameSpec,
    provers: &Grid,
    verifiers: &Grid,
) -> Result<ValidityEquivalence> {
    let table = ProfileTable::build(game, provers, verifiers)?;
    let np = provers.len();
    let nv = verifiers.len();

    // Validity of (i, j): the profile's completeness error plus the grid-wide
    // soundness error of the verifier must stay below one.
    let valid = |i: usize, j: usize| table.eps_c[i][j] + table.grid_soundness(j) < 1.0;

    // Canonical prover tolerance from the best valid verifier loss.
    let mut best_valid_loss = f64::INFINITY;
    for i in 0..np {
        for j in 0..nv {
            if valid(i, j) {
                best_valid_loss = best_valid_loss.min(table.verifier_loss(i, j));
            }
        }
    }
    if best_valid_loss.is_infinite() {
        return Ok(ValidityEquivalence::HypothesisUnmet);
    }
    let e_p = 1.0 - best_valid_loss;

    // Leader scores: worst verifier loss over the prover's strict
    // near-best-response set (gains strictly below the tolerance, matching
    // the strict equilibrium notion being characterised).
    let mut scores = vec![0.0; nv];
    for (j, score) in scores.iter_mut().enumerate() {
        let best_p = (0..np)
            .map(|i| table.prover_loss(i, j))
            .fold(f64::INFINITY, f64::min);
        *score = (0..np)
            .filter(|&i| table.prover_loss(i, j) - best_p < e_p)
            .map(|i| table.verifier_loss(i, j))
            .fold(f64::NEG_INFINITY, f64::max);
    }
    let minimax = scores.iter().copied().fold(f64::INFINITY, f64::min);
    let e_v = 1.0 - minimax;

    let mut violations = Vec::new();
    for i in 0..np {
        for j in 0..nv {
            let best_p = (0..np)
                .map(|k| table.prover_loss(k, j))
                .fold(f64::INFINITY, f64::min);
            let prover_gain = table.prover_loss(i, j) - best_p;
            let member = prover_gain < e_p && scores[j] - minimax < e_v;
            let is_valid = valid(i, j);
            if member != is_valid {
                violations.push(EquivalenceViolation {
                    prover: i,
                    verifier: j,
                    valid: is_valid,
                    equilibrium_member: member,
                });
            }
        }
    }
    Ok(ValidityEquivalence::Checked {
        prover_tolerance: e_p,
        verifier_tolerance: e_v,
        profiles: np * nv,
        violations,
    })
}

/// Result of comparing the equilibria of a game with its adversarial
/// counterpart.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrespondenceReport {
    pub matches: bool,
    pub base_members: usize,
    pub adversarial_members: usize,
    pub counterexamples: Vec<(usize, usize)>,
}

/// Verify that the strict approximate verifier-leading equilibria of the
/// base game coincide with the (prover, verifier) projections of the
/// verifier-prover-leading equilibria of its adversarial transform, where
/// the adversary best-responds exactly.
///
/// `corrupt_sign` flips the adversary's objective (a falsification control
/// that must break the correspondence on generic games).
pub fn check_se_adversarial_correspondence(
    game: &GameSpec,
    provers: &Grid,
    verifiers: &Grid,
    e_p: f64,
    e_v: f64,
    corrupt_sign: bool,
) -> Result<CorrespondenceReport> {
    let np = provers.len();
    let nv = verifiers.len();
    // Base game: membership via worst-case tables.
    let table = ProfileTable::build(game, provers, verifiers)?;
    let membership = |scores: &[f64], prover_loss: &dyn Fn(usize, usize) -> f64| {
        let minimax = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let mut set = Vec::new();
        for j in 0..nv {
            let best_p = (0..np)
                .map(|i| prover_loss(i, j))
                .fold(f64::INFINITY, f64::min);
            for i in 0..np {
                let member = prover_loss(i, j) - best_p < e_p && scores[j] - minimax < e_v;
                if member {
                    set.push((i, j));
                }
            }
        }
        set
    };
    let base_scores: Vec<f64> = (0..nv)
        .map(|j| {
            let best_p = (0..np)
                .map(|i| table.prover_loss(i, j))
                .fold(f64::INFINITY, f64::min);
            (0..np)
                .filter(|&i| table.prover_loss(i, j) <= best_p + e_p)
                .map(|i| table.verifier_loss(i, j))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let base_set = membership(&base_scores, &|i, j| table.prover_loss(i, j));

    // Adversarial game: the same quantities through the transformed losses
    // with an explicit exactly-best-responding adversary.
    let adv_game = build_adversarial_game(game)?;
    let adv_layout = adv_game.adversary.clone().expect("layout just built");
    let adv_strategies = adversary_pure_strategies(&adv_game)?;
    let mut adv_prover_loss = vec![vec![0.0; nv]; np];
    let mut adv_verifier_loss = vec![vec![0.0; nv]; np];
    for i in 0..np {
        for j in 0..nv {
            // Adversary best response at (i, j).
            let mut best_adv = f64::INFINITY;
            let mut adv_values = Vec::with_capacity(adv_layout.pairs.len());
            for adv in &adv_strategies {
                let mut strategies = vec![provers.strategies[i].clone()];
                strategies.push(verifiers.strategies[j].clone());
                strategies.push(Strategy::Tabular(adv.clone()));
                let profile = StrategyProfile::new(strategies);
                let mut value = agent_loss_components(&adv_game, &profile, adv_layout.agent)?[0];
                if corrupt_sign {
                    value = -value;
                }
                best_adv = best_adv.min(value);
                adv_values.push((profile, value));
            }
            // Pessimistic over exact adversary best responses.
            let mut worst_p = f64::NEG_INFINITY;
            let mut worst_v = f64::NEG_INFINITY;
            for (profile, value) in &adv_values {
                if *value <= best_adv + 1e-12 {
                    worst_p = worst_p.max(agent_loss_components(&adv_game, profile, 0)?[0]);
                    worst_v = worst_v
                        .max(agent_loss_components(&adv_game, profile, adv_game.decider)?[0]);
                }
            }
            adv_prover_loss[i][j] = worst_p;
            adv_verifier_loss[i][j] = worst_v;
        }
    }
    let adv_scores: Vec<f64> = (0..nv)
        .map(|j| {
            let best_p = (0..np)
                .map(|i| adv_prover_loss[i][j])
                .fold(f64::INFINITY, f64::min);
            (0..np)
                .filter(|&i| adv_prover_loss[i][j] <= best_p + e_p)
                .map(|i| adv_verifier_loss[i][j])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let adv_set = membership(&adv_scores, &|i, j| adv_prover_loss[i][j]);

    let mut counterexamples: Vec<(usize, usize)> = Vec::new();
    for entry in base_set.iter() {
        if !adv_set.contains(entry) {
            counterexamples.push(*entry);
        }
    }
    for entry in adv_set.iter() {
        if !base_set.contains(entry) {
            counterexamples.push(*entry);
        }
    }
    Ok(CorrespondenceReport {
        matches: counterexamples.is_empty(),
        base_members: base_set.len(),
        adversarial_members: adv_set.len(),
        counterexamples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::DecisionProblem;
    use crate::protocols::{build_nip, constant_verifier, oracle_verifier, parity_adp_game};
    use crate::strategy::uniform_strategy;

    fn two_point_problem() -> DecisionProblem {
        DecisionProblem::new(vec!["neg".into(), "pos".into()], vec![0, 1], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn simplex_grid_counts_and_normalisation() {
        let grid = simplex_grid(3, 2);
        assert_eq!(grid.len(), 6);
        for point in &grid {
            let total: f64 = point.iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        // Resolution 2 over two vertices: the three mixtures.
        let line = simplex_grid(2, 2);
        assert_eq!(line.len(), 3);
    }

    #[test]
    fn dominant_strategy_game_has_the_dominant_profile_as_unique_equilibrium() {
        let problem =
            DecisionProblem::new_degenerate(vec!["x".into()], vec![1], vec![1.0]).unwrap();
        let game = crate::protocols::build_adp(problem, 2).unwrap();
        let prover_grid = Grid::new(
            0,
            vec![Strategy::Tabular(uniform_strategy(&game, 0).unwrap())],
        );
        let verifier_grid = Grid::new(
            1,
            vec![
                Strategy::Tabular(constant_verifier(&game, 1).unwrap()),
                Strategy::Tabular(constant_verifier(&game, 0).unwrap()),
            ],
        );
        let result = find_nash(
            &game,
            &[prover_grid, verifier_grid],
            &EquilibriumQuery::nash(vec![0.0, 0.0]),
        )
        .unwrap();
        assert_eq!(result.points.len(), 1);
        assert_eq!(result.points[0].assignment, vec![0, 0]);
    }

    #[test]
    fn full_tolerance_admits_every_profile() {
        let parity = parity_adp_game(0.2).unwrap();
        let prover_grid = Grid::new(0, parity.provers.clone());
        let verifier_grid = Grid::new(
            1,
            vec![
                parity.reference_verifier().unwrap(),
                parity.verifier_mixture([0.0, 0.0, 1.0]).unwrap(),
            ],
        );
        let result = find_nash(
            &parity.game,
            &[prover_grid, verifier_grid],
            &EquilibriumQuery::nash(vec![f64::INFINITY, f64::INFINITY]),
        )
        .unwrap();
        assert_eq!(result.points.len(), 6);
    }

    #[test]
    fn best_responses_exclude_the_dominated_prover_map() {
        // Against the reference mixture the parity-map prover is strictly
        // worse than the second map, and the identity map has infinite loss.
        let parity = parity_adp_game(0.2).unwrap();
        let grids = [
            Grid::new(0, parity.provers.clone()),
            Grid::new(1, vec![parity.reference_verifier().unwrap()]),
        ];
        let responses = best_responses(&parity.game, &grids, &[0, 0], 0, 0.0).unwrap();
        assert_eq!(responses.len(), 1);
        assert_eq!(responses[0].0, 1);
    }

    #[test]
    fn tolerance_zero_unique_minimiser_is_a_singleton() {
        let game = build_nip(two_point_problem(), 1, 2).unwrap();
        let prover = Strategy::Tabular(uniform_strategy(&game, 0).unwrap());
        let grids = [
            Grid::new(0, vec![prover]),
            Grid::new(
                1,
                vec![
                    Strategy::Tabular(oracle_verifier(&game).unwrap()),
                    Strategy::Tabular(constant_verifier(&game, 0).unwrap()),
                ],
            ),
        ];
        let responses = best_responses(&game, &grids, &[0, 0], 1, 0.0).unwrap();
        assert_eq!(responses.len(), 1);
        assert_eq!(responses[0].0, 0);
    }

    #[test]
    fn certificates_recompute_within_tolerance() {
        let parity = parity_adp_game(0.25).unwrap();
        let grids = [
            Grid::new(0, parity.provers.clone()),
            Grid::new(
                1,
                vec![
                    parity.reference_verifier().unwrap(),
                    parity.verifier_mixture([0.25, 0.25, 0.5]).unwrap(),
                ],
            ),
        ];
        let result = find_nash(
            &parity.game,
            &grids,
            &EquilibriumQuery::nash(vec![2.0, 2.0]),
        )
        .unwrap();
        assert!(!result.points.is_empty());
        for point in &result.points {
            for (slot, grid) in grids.iter().enumerate() {
                let responses =
                    best_responses(&parity.game, &grids, &point.assignment, grid.agent, 0.0)
                        .unwrap();
                let best = responses.first().map(|(_, v)| *v).unwrap();
                let mut oracle = LossOracle::new(&parity.game, &grids, 10_000).unwrap();
                let current = oracle.primary(&point.assignment, grid.agent).unwrap();
                let gain = if current.is_infinite() && best.is_infinite() {
                    0.0
                } else {
                    current - best
                };
                assert!((gain - point.certificates[slot]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn follower_with_dominant_response_pins_the_leader_choice() {
        // The oracle verifier dominates; the prover leads? No: verifier
        // leads, prover follows with a dominant response per commitment.
        let game = build_nip(two_point_problem(), 1, 2).unwrap();
        let honest = Strategy::Tabular(uniform_strategy(&game, 0).unwrap());
        let grids = [
            Grid::new(0, vec![honest]),
            Grid::new(
                1,
                vec![
                    Strategy::Tabular(oracle_verifier(&game).unwrap()),
                    Strategy::Tabular(constant_verifier(&game, 1).unwrap()),
                ],
            ),
        ];
        let result = find_verifier_leading_se(
            &game,
            &grids,
            vec![0.0, 0.0],
            TieBreaking::LeaderPessimistic,
        )
        .unwrap();
        assert_eq!(result.points.len(), 1);
        // Verifier slot is grid 1; the oracle wins.
        assert_eq!(result.points[0].assignment[1], 0);
        assert_eq!(result.leader_value, Some(0.0));
    }

    #[test]
    fn adversarial_transform_enumerates_label_pairs() {
        let parity = parity_adp_game(0.2).unwrap();
        let nip = build_nip(parity.game.problem.clone(), 1, 4).unwrap();
        let adv = build_adversarial_game(&nip).unwrap();
        let layout = adv.adversary.as_ref().unwrap();
        // Two positives and two negatives.
        assert_eq!(layout.pairs.len(), 4);
        assert_eq!(adv.agents.len(), 3);
        assert!(matches!(adv.losses[0], LossKind::AdversarialNipProver));
        assert!(matches!(adv.losses[1], LossKind::AdversarialNipVerifier));
    }

    #[test]
    fn singleton_adversary_reduces_to_the_base_losses() {
        // One instance per label: the adversarial losses equal the
        // worst-case ones identically.
        let game = build_nip(two_point_problem(), 1, 2).unwrap();
        let adv_game = build_adversarial_game(&game).unwrap();
        let adv = adversary_pure_strategies(&adv_game).unwrap();
        assert_eq!(adv.len(), 1);
        let prover = Strategy::Tabular(uniform_strategy(&game, 0).unwrap());
        let verifier = Strategy::Tabular(constant_verifier(&game, 1).unwrap());
        let base_profile = StrategyProfile::new(vec![prover.clone(), verifier.clone()]);
        let adv_profile =
            StrategyProfile::new(vec![prover, verifier, Strategy::Tabular(adv[0].clone())]);
        for agent in 0..2 {
            let a = agent_loss_components(&game, &base_profile, agent).unwrap()[0];
            let b = agent_loss_components(&adv_game, &adv_profile, agent).unwrap()[0];
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn adversary_best_response_maximises_the_instance_losses() {
        let problem = DecisionProblem::new(
            vec!["n0".into(), "n1".into(), "p0".into(), "p1".into()],
            vec![0, 0, 1, 1],
            vec![0.25; 4],
        )
        .unwrap();
        let game = build_nip(problem, 1, 2).unwrap();
        let adv_game = build_adversarial_game(&game).unwrap();
        let advs = adversary_pure_strategies(&adv_game).unwrap();
        let prover = Strategy::Tabular(uniform_strategy(&game, 0).unwrap());
        // Verifier accepting only after prover message 0: instance losses
        // differ across instances through the prover's uniform play.
        let verifier = Strategy::Tabular(oracle_verifier(&game).unwrap());
        let mut best = (f64::INFINITY, 0usize);
        for (k, adv) in advs.iter().enumerate() {
            let profile = StrategyProfile::new(vec![
                prover.clone(),
                verifier.clone(),
                Strategy::Tabular(adv.clone()),
            ]);
            let value = agent_loss_components(
                &adv_game,
                &profile,
                adv_game.adversary.as_ref().unwrap().agent,
            )
            .unwrap()[0];
            if value < best.0 {
                best = (value, k);
            }
        }
        // With a perfect verifier every pair ties at loss zero; the argmin
        // certificate is that the best value equals -max sum of losses = 0.
        assert!((best.0 - 0.0).abs() < 1e-12);
    }
}


#[cfg(test)]
mod coverage_tests {
    use super::*;
    use crate::protocols::{constant_verifier, parity_adp_game};
    use crate::strategy::Strategy;

    #[test]
    fn a_tolerance_covering_the_loss_range_returns_the_whole_grid() {
        let parity = parity_adp_game(0.2).unwrap();
        let grids = [
            Grid::new(0, parity.provers.clone()),
            Grid::new(1, vec![parity.reference_verifier().unwrap()]),
        ];
        let responses = best_responses(&parity.game, &grids, &[0, 0], 0, f64::INFINITY).unwrap();
        assert_eq!(responses.len(), 3);
    }

    #[test]
    fn grids_without_a_valid_system_report_the_unmet_hypothesis() {
        let parity = parity_adp_game(0.2).unwrap();
        // Only an always-accept verifier: soundness error one everywhere.
        let provers = Grid::new(0, parity.provers.clone());
        let verifiers = Grid::new(
            1,
            vec![Strategy::Tabular(
                constant_verifier(&parity.game, 1).unwrap(),
            )],
        );
        let outcome = classify_validity_equivalence(&parity.game, &provers, &verifiers).unwrap();
        assert!(matches!(outcome, ValidityEquivalence::HypothesisUnmet));
    }
}
