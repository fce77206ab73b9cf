//! Training dynamics at desk scale: timescale-separated Stackelberg updates
//! with the implicit correction term, the opponent-shaping variant that
//! replaces the solved system with a learning-rate scalar, plain
//! simultaneous gradients, and tabular expert iteration with a stabilised
//! variant that overwrites the verifier's guess with the true label on an
//! annealed fraction of rollouts.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::game::{decision_correct, rollout, AgentId, GameSpec, Role, Transcript};
use crate::gradients::{exact_gradient_of, MaxMode};
use crate::losses::{agent_expected_loss, LossKind};
use crate::strategy::{Strategy, StrategyProfile, TabularStrategy};
use crate::{PvgError, Result};

/// Pseudo-count added per message when refitting expert-iteration rows.
pub const REFIT_PSEUDOCOUNT: f64 = 0.5;
/// Default log-sum-exp temperature for softened worst-case terms during
/// gradient training; evaluation always uses the exact max.
pub const SOFTMAX_TRAINING_TAU: f64 = 0.01;
/// Conditioning threshold for the implicit linear solve.
pub const CONDITION_LIMIT: f64 = 1e8;

/// Learning-rate schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    Constant(f64),
    /// `base / (1 + t)^decay`.
    Polynomial {
        base: f64,
        decay: f64,
    },
}

impl Schedule {
    pub fn at(&self, t: usize) -> f64 {
        match self {
            Schedule::Constant(a) => *a,
            Schedule::Polynomial { base, decay } => base / (1.0 + t as f64).powf(*decay),
        }
    }

    fn positive(&self) -> bool {
        match self {
            Schedule::Constant(a) => *a > 0.0,
            Schedule::Polynomial { base, .. } => *base > 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TrainMethod {
    Simultaneous,
    StackelbergImplicit,
    Lola { lookahead: f64 },
    ExpertIteration,
    StabilisedExpertIteration,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: TrainMethod,
    pub prover_rate: Schedule,
    pub verifier_rate: Schedule,
    pub steps: usize,
    /// Relative step for finite-difference Hessian blocks.
    pub fd_step: f64,
    /// Rollouts per expert-iteration round.
    pub rollout_budget: usize,
    /// Stabilisation anneal: replace fraction at the first and last round.
    pub anneal: (f64, f64),
    pub seed: u64,
    /// Record validity metrics every this many steps (0: final step only).
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.prover_rate.positive() || !self.verifier_rate.positive() {
            return Err(PvgError::Config("learning rates must be positive".into()));
        }
        if self.fd_step <= 0.0 {
            return Err(PvgError::Config("fd_step must be positive".into()));
        }
        let (start, end) = self.anneal;
        if !(0.0..=1.0).contains(&start) || !(0.0..=1.0).contains(&end) || end > start {
            return Err(PvgError::Config(
                "anneal fractions must lie in [0,1] and be non-increasing".into(),
            ));
        }
        if matches!(self.method, TrainMethod::StackelbergImplicit) && self.steps > 1 {
            // Timescale separation: the verifier-to-prover rate ratio must
            // shrink over the horizon.
            let first = self.verifier_rate.at(0) / self.prover_rate.at(0);
            let last = self.verifier_rate.at(self.steps - 1) / self.prover_rate.at(self.steps - 1);
            if last >= first * 0.5 {
                return Err(PvgError::Config(
                    "timescale separation requires the verifier/prover rate ratio to decay \
                     over the horizon"
                        .into(),
                ));
            }
        }
        Ok(())
    }

    /// Linearly annealed replace fraction at a given round.
    pub fn replace_fraction(&self, round: usize) -> f64 {
        let (start, end) = self.anneal;
        if self.steps <= 1 {
            return start;
        }
        let progress = round as f64 / (self.steps - 1) as f64;
        start + (end - start) * progress
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: TrainMethod::Simultaneous,
            prover_rate: Schedule::Constant(0.5),
            verifier_rate: Schedule::Constant(0.5),
            steps: 100,
            fd_step: 1e-4,
            rollout_budget: 256,
            anneal: (0.8, 0.0),
            seed: 0,
            eval_every: 10,
        }
    }
}

/// A differentiable two-player objective: a fast inner agent (prover) and a
/// slow outer agent (verifier).
pub trait BilevelObjective {
    fn prover_dim(&self) -> usize;
    fn verifier_dim(&self) -> usize;
    /// (prover loss, verifier loss).
    fn losses(&self, prover: &[f64], verifier: &[f64]) -> Result<(f64, f64)>;
    /// Gradient of the prover's loss in the prover's parameters.
    fn prover_grad(&self, prover: &[f64], verifier: &[f64]) -> Result<Vec<f64>>;
    /// Gradient of the verifier's loss in the verifier's parameters.
    fn verifier_grad(&self, prover: &[f64], verifier: &[f64]) -> Result<Vec<f64>>;
    /// Gradient of the verifier's loss in the prover's parameters.
    fn cross_grad(&self, prover: &[f64], verifier: &[f64]) -> Result<Vec<f64>>;
}

/// The closed-form benchmark: verifier loss `v^2 + v*p`, prover loss
/// `(p + v)^2`. The prover's best response is `p = -v` and the coupled
/// dynamics settle at the origin.
pub struct QuadraticBenchmark;

impl BilevelObjective for QuadraticBenchmark {
    fn prover_dim(&self) -> usize {
        1
    }

    fn verifier_dim(&self) -> usize {
        1
    }

    fn losses(&self, prover: &[f64], verifier: &[f64]) -> Result<(f64, f64)> {
        let (p, v) = (prover[0], verifier[0]);
        Ok(((p + v) * (p + v), v * v + v * p))
    }

    fn prover_grad(&self, prover: &[f64], verifier: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![2.0 * (prover[0] + verifier[0])])
    }

    fn verifier_grad(&self, prover: &[f64], verifier: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![2.0 * verifier[0] + prover[0]])
    }

    fn cross_grad(&self, _prover: &[f64], verifier: &[f64]) -> Result<Vec<f64>> {
        Ok(vec![verifier[0]])
    }
}

/// A messaging game viewed as a bilevel objective over the softmax logits of
/// one prover-role agent and the deciding verifier. Other agents' strategies
/// stay fixed at the template profile. Worst-case terms are softened for
/// gradients; reported losses stay exact.
pub struct GameObjective<'a> {
    pub game: &'a GameSpec,
    pub template: StrategyProfile,
    pub prover: AgentId,
    pub verifier: AgentId,
    pub mode: MaxMode,
}

impl GameObjective<'_> {
    fn assemble(&self, prover: &[f64], verifier: &[f64]) -> Result<StrategyProfile> {
        let mut profile = self.template.clone();
        let Strategy::Softmax(p) = &self.template.strategies[self.prover] else {
            return Err(PvgError::Domain("prover slot must be softmax".into()));
        };
        let Strategy::Softmax(v) = &self.template.strategies[self.verifier] else {
            return Err(PvgError::Domain("verifier slot must be softmax".into()));
        };
        profile.strategies[self.prover] = Strategy::Softmax(p.unflatten(prover)?);
        profile.strategies[self.verifier] = Strategy::Softmax(v.unflatten(verifier)?);
        Ok(profile)
    }
}

impl BilevelObjective for GameObjective<'_> {
    fn prover_dim(&self) -> usize {
        match &self.template.strategies[self.prover] {
            Strategy::Softmax(s) => s.parameter_count(),
            _ => 0,
        }
    }

    fn verifier_dim(&self) -> usize {
        match &self.template.strategies[self.verifier] {
            Strategy::Softmax(s) => s.parameter_count(),
            _ => 0,
        }
    }

    fn losses(&self, prover: &[f64], verifier: &[f64]) -> Result<(f64, f64)> {
        let profile = self.assemble(prover, verifier)?;
        Ok((
            agent_expected_loss(self.game, &profile, self.prover)?,
            agent_expected_loss(self.game, &profile, self.verifier)?,
        ))
    }

    fn prover_grad(&self, prover: &[f64], verifier: &[f64]) -> Result<Vec<f64>> {
        let profile = self.assemble(prover, verifier)?;
        exact_gradient_of(self.game, &profile, self.prover, self.prover, self.mode)
    }

    fn verifier_grad(&self, prover: &[f64], verifier: &[f64]) -> Result<Vec<f64>> {
        let profile = self.assemble(prover, verifier)?;
        exact_gradient_of(self.game, &profile, self.verifier, self.verifier, self.mode)
    }

    fn cross_grad(&self, prover: &[f64], verifier: &[f64]) -> Result<Vec<f64>> {
        let profile = self.assemble(prover, verifier)?;
        exact_gradient_of(self.game, &profile, self.verifier, self.prover, self.mode)
    }
}

/// One timescale-separated update: the prover takes its fast gradient step;
/// the verifier's step adds the implicit correction obtained by solving the
/// prover-Hessian linear system (never forming an inverse). Hessian and
/// mixed blocks come from central finite differences of the exact gradients.
pub fn stackelberg_implicit_update(
    objective: &dyn BilevelObjective,
    prover: &[f64],
    verifier: &[f64],
    prover_rate: f64,
    verifier_rate: f64,
    fd_step: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let gp = objective.prover_grad(prover, verifier)?;
    let hessian = prover_hessian(objective, prover, verifier, fd_step)?;
    let mixed = mixed_block(objective, prover, verifier, fd_step)?;
    let cross = objective.cross_grad(prover, verifier)?;
    let solved = solve_with_condition_guard(&hessian, &cross)?;
    // correction_k = sum_ab cross_a H^{-1}_ab mixed_bk.
    let dv = objective.verifier_dim();
    let mut correction = vec![0.0; dv];
    for (b, w) in solved.iter().enumerate() {
        for k in 0..dv {
            correction[k] += w * mixed[b][k];
        }
    }
    let gv = objective.verifier_grad(prover, verifier)?;
    let new_prover: Vec<f64> = prover
        .iter()
        .zip(&gp)
        .map(|(t, g)| t - prover_rate * g)
        .collect();
    let new_verifier: Vec<f64> = verifier
        .iter()
        .zip(gv.iter().zip(&correction))
        .map(|(t, (g, c))| t - verifier_rate * (g + c))
        .collect();
    Ok((new_prover, new_verifier))
}

/// The opponent-shaping update: the solved system is replaced by the
/// prover's next learning rate, optionally interpolated away by the
/// look-ahead weight (1 keeps the plain gradient, 0 the full shaping term).
pub fn lola_update(
    objective: &dyn BilevelObjective,
    prover: &[f64],
    verifier: &[f64],
    prover_rate: f64,
    verifier_rate: f64,
    next_prover_rate: f64,
    lookahead: f64,
    fd_step: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if !(0.0..=1.0).contains(&lookahead) {
        return Err(PvgError::Config(
            "lookahead weight must lie in [0,1]".into(),
        ));
    }
    let gp = objective.prover_grad(prover, verifier)?;
    let gv = objective.verifier_grad(prover, verifier)?;
    let cross = objective.cross_grad(prover, verifier)?;
    let mixed = mixed_block(objective, prover, verifier, fd_step)?;
    let dv = objective.verifier_dim();
    let mut correction = vec![0.0; dv];
    let scale = (1.0 - lookahead) * next_prover_rate;
    if scale != 0.0 {
        for (b, c) in cross.iter().enumerate() {
            for k in 0..dv {
                correction[k] += scale * c * mixed[b][k];
            }
        }
    }
    let new_prover: Vec<f64> = prover
        .iter()
        .zip(&gp)
        .map(|(t, g)| t - prover_rate * g)
        .collect();
    let new_verifier: Vec<f64> = verifier
        .iter()
        .zip(gv.iter().zip(&correction))
        .map(|(t, (g, c))| t - verifier_rate * (g + c))
        .collect();
    Ok((new_prover, new_verifier))
}

/// Plain simultaneous gradient descent.
pub fn simultaneous_update(
    objective: &dyn BilevelObjective,
    prover: &[f64],
    verifier: &[f64],
    prover_rate: f64,
    verifier_rate: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let gp = objective.prover_grad(prover, verifier)?;
    let gv = objective.verifier_grad(prover, verifier)?;
    Ok((
        prover
            .iter()
            .zip(&gp)
            .map(|(t, g)| t - prover_rate * g)
            .collect(),
        verifier
            .iter()
            .zip(&gv)
            .map(|(t, g)| t - verifier_rate * g)
            .collect(),
    ))
}

/// Central-difference Hessian of the prover loss in the prover parameters,
/// symmetrised.
fn prover_hessian(
    objective: &dyn BilevelObjective,
    prover: &[f64],
    verifier: &[f64],
    fd_step: f64,
) -> Result<Vec<Vec<f64>>> {
    let d = prover.len();
    let mut h = vec![vec![0.0; d]; d];
    for j in 0..d {
        let step = fd_step * prover[j].abs().max(1.0);
        let mut plus = prover.to_vec();
        plus[j] += step;
        let mut minus = prover.to_vec();
        minus[j] -= step;
        let gp = objective.prover_grad(&plus, verifier)?;
        let gm = objective.prover_grad(&minus, verifier)?;
        for i in 0..d {
            h[i][j] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = avg;
            h[j][i] = avg;
        }
    }
    Ok(h)
}

/// Central-difference mixed block: rows indexed by prover parameters,
/// columns by verifier parameters.
fn mixed_block(
    objective: &dyn BilevelObjective,
    prover: &[f64],
    verifier: &[f64],
    fd_step: f64,
) -> Result<Vec<Vec<f64>>> {
    let dp = prover.len();
    let dv = verifier.len();
    let mut m = vec![vec![0.0; dv]; dp];
    for k in 0..dv {
        let step = fd_step * verifier[k].abs().max(1.0);
        let mut plus = verifier.to_vec();
        plus[k] += step;
        let mut minus = verifier.to_vec();
        minus[k] -= step;
        let gp = objective.prover_grad(prover, &plus)?;
        let gm = objective.prover_grad(prover, &minus)?;
        for b in 0..dp {
            m[b][k] = (gp[b] - gm[b]) / (2.0 * step);
        }
    }
    Ok(m)
}

/// LU solve with partial pivoting plus a one-norm condition estimate; errors
/// above [`CONDITION_LIMIT`].
fn solve_with_condition_guard(matrix: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = matrix.len();
    let lu = LuFactors::factor(matrix)?;
    // cond_1 = ||A||_1 * ||A^{ -1 }||_1 with the inverse norm from solves.
    let norm_a = (0..n)
        .map(|j| (0..n).map(|i| matrix[i][j].abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut norm_inv: f64 = 0.0;
    for j in 0..n {
        let mut unit = vec![0.0; n];
        unit[j] = 1.0;
        let col = lu.solve(&unit);
        norm_inv = norm_inv.max(col.iter().map(|v| v.abs()).sum());
    }
    let condition = norm_a * norm_inv;
    if !condition.is_finite() || condition > CONDITION_LIMIT {
        return Err(PvgError::Singular {
            condition,
            threshold: CONDITION_LIMIT,
        });
    }
    Ok(lu.solve(rhs))
}

struct LuFactors {
    lu: Vec<Vec<f64>>,
    perm: Vec<usize>,
}

impl LuFactors {
    fn factor(matrix: &[Vec<f64>]) -> Result<Self> {
        let n = matrix.len();
        let mut lu: Vec<Vec<f64>> = matrix.to_vec();
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&a, &b| lu[a][col].abs().partial_cmp(&lu[b][col].abs()).unwrap())
                .unwrap();
            if lu[pivot][col].abs() < 1e-300 {
                return Err(PvgError::Singular {
                    condition: f64::INFINITY,
                    threshold: CONDITION_LIMIT,
                });
            }
            lu.swap(col, pivot);
            perm.swap(col, pivot);
            for row in (col + 1)..n {
                let factor = lu[row][col] / lu[col][col];
                lu[row][col] = factor;
                for k in (col + 1)..n {
                    lu[row][k] -= factor * lu[col][k];
                }
            }
        }
        Ok(Self { lu, perm })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut v = rhs[self.perm[i]];
            for j in 0..i {
                v -= self.lu[i][j] * y[j];
            }
            y[i] = v;
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let mut v = y[i];
            for j in (i + 1)..n {
                v -= self.lu[i][j] * x[j];
            }
            x[i] = v / self.lu[i][i];
        }
        x
    }
}

// ---------------------------------------------------------------------------
// Expert iteration.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExpertIterationStats {
    pub rollouts: usize,
    /// Fraction of rollouts accepted (binary-decision games only).
    pub acceptance_rate: Option<f64>,
    /// Kept rollouts per agent.
    pub kept: Vec<usize>,
    /// Agents whose round was a no-op for lack of kept rollouts.
    pub no_op: Vec<AgentId>,
}

/// Whether an agent's reward in one rollout is positive, per its loss kind.
fn rollout_kept(game: &GameSpec, kind: LossKind, transcript: &Transcript, y: u8) -> bool {
    match kind {
        LossKind::AdpVerifier
        | LossKind::NipVerifier
        | LossKind::DebateVerifier
        | LossKind::MacVerifier { .. } => decision_correct(game, transcript, y),
        LossKind::AdpProver | LossKind::NipProver | LossKind::ZkProver { .. } => {
            transcript.decision == Some(1)
        }
        LossKind::DebateProver { index } => transcript.decision == Some(u32::from(index)),
        LossKind::MacHelpfulProver => decision_correct(game, transcript, y),
        LossKind::MacUnhelpfulProver => {
            // Rewarded when the verifier names a wrong class outright.
            !decision_correct(game, transcript, y) && transcript.decision != Some(0)
        }
        _ => false,
    }
}

/// Replay a transcript and recover, per agent send, the observation key and
/// the position of the sent message in the agent's space.
fn transcript_agent_moves(
    game: &GameSpec,
    transcript: &Transcript,
    agent: AgentId,
) -> Result<Vec<(String, usize, bool)>> {
    let mut histories: Vec<Vec<u32>> = vec![Vec::new(); game.channels.len()];
    let mut snapshot = histories.clone();
    let mut current_round = 0usize;
    let mut out = Vec::new();
    let instance = transcript
        .events
        .first()
        .map(|e| e.message as usize)
        .ok_or_else(|| PvgError::Protocol("transcript missing the opening".into()))?;
    let label = game.problem.membership_label(instance)?;
    for event in &transcript.events {
        if event.t == 0 {
            continue;
        }
        if event.t != current_round {
            snapshot = histories.clone();
            current_round = event.t;
        }
        if event.sender == Some(agent) {
            let key = crate::game::observation_from(
                game,
                agent,
                event.channel,
                instance,
                label,
                &snapshot,
            )
            .encode();
            let space = game.space(agent, event.channel)?;
            let position = space
                .iter()
                .position(|&t| t == event.message)
                .ok_or_else(|| PvgError::Protocol("message outside the sender's space".into()))?;
            let is_decision = event.channel == game.decision_channel
                && agent == game.decider
                && game.decision_tokens.contains(&event.message);
            out.push((key, position, is_decision));
        }
        histories[event.channel].push(event.message);
    }
    Ok(out)
}

/// One expert-iteration round: collect rollouts, keep the positive-reward
/// ones per agent, and refit every visited observation-key row to the kept
/// message frequencies with additive smoothing. Unvisited keys keep their
/// previous rows; an agent with no kept rollouts is left unchanged and
/// flagged.
pub fn expert_iteration_round<R: rand::Rng>(
    game: &GameSpec,
    profile: &StrategyProfile,
    rollout_budget: usize,
    rng: &mut R,
) -> Result<(StrategyProfile, ExpertIterationStats)> {
    stabilised_expert_iteration_round(game, profile, rollout_budget, 0.0, rng)
}

/// As [`expert_iteration_round`], but the first `replace_fraction` of the
/// rollouts form a partition in which the verifier's guess is overwritten
/// with the true label before the keep filter, and the verifier's decision
/// refit counts the label's token instead of the guess. Provers train on the
/// unmodified rollouts throughout.
pub fn stabilised_expert_iteration_round<R: rand::Rng>(
    game: &GameSpec,
    profile: &StrategyProfile,
    rollout_budget: usize,
    replace_fraction: f64,
    rng: &mut R,
) -> Result<(StrategyProfile, ExpertIterationStats)> {
    if !(0.0..=1.0).contains(&replace_fraction) {
        return Err(PvgError::Config(
            "replace fraction must lie in [0,1]".into(),
        ));
    }
    for (agent, strategy) in profile.strategies.iter().enumerate() {
        if !matches!(strategy, Strategy::Tabular(_)) {
            return Err(PvgError::Domain(format!(
                "expert iteration needs tabular strategies (agent {agent})"
            )));
        }
    }
    let replace_count = (replace_fraction * rollout_budget as f64).floor() as usize;
    let mut accepted = 0usize;
    let mut counts: Vec<BTreeMap<String, Vec<f64>>> = vec![BTreeMap::new(); game.agent_count()];
    let mut kept = vec![0usize; game.agent_count()];

    for i in 0..rollout_budget {
        let x = game.problem.sample_instance(rng);
        let y = game.problem.label(x);
        let transcript = rollout(game, profile, x, rng)?;
        if game.is_binary_decision() && transcript.decision == Some(1) {
            accepted += 1;
        }
        let replaced = i < replace_count;
        for agent in 0..game.agent_count() {
            let kind = game.losses[agent];
            let is_verifier = agent == game.decider;
            let keep = if replaced && is_verifier {
                // The guess is overwritten with the truth, so the verifier's
                // reward is positive by construction.
                true
            } else {
                rollout_kept(game, kind, &transcript, y)
            };
            if !keep {
                continue;
            }
            kept[agent] += 1;
            let moves = transcript_agent_moves(game, &transcript, agent)?;
            for (key, position, is_decision) in moves {
                let space = row_space(game, agent, &key, profile)?;
                let row = counts[agent].entry(key).or_insert_with(|| vec![0.0; space]);
                let counted_position = if replaced && is_verifier && is_decision {
                    decision_position(game, agent, y)?
                } else {
                    position
                };
                row[counted_position] += 1.0;
            }
        }
    }

    // Refit visited keys with additive smoothing; untouched keys unchanged.
    let mut new_profile = profile.clone();
    let mut no_op = Vec::new();
    for agent in 0..game.agent_count() {
        if counts[agent].is_empty() {
            if matches!(
                game.losses[agent],
                LossKind::ZkDishonestVerifier | LossKind::ZkSimulator
            ) {
                continue;
            }
            no_op.push(agent);
            continue;
        }
        let Strategy::Tabular(old) = &profile.strategies[agent] else {
            unreachable!()
        };
        let mut rows = old.rows.clone();
        for (key, tally) in &counts[agent] {
            let total: f64 = tally.iter().sum();
            let space = tally.len() as f64;
            let refit: Vec<f64> = tally
                .iter()
                .map(|c| (c + REFIT_PSEUDOCOUNT) / (total + REFIT_PSEUDOCOUNT * space))
                .collect();
            rows.insert(key.clone(), refit);
        }
        new_profile.strategies[agent] = Strategy::Tabular(TabularStrategy::new(rows)?);
    }
    let stats = ExpertIterationStats {
        rollouts: rollout_budget,
        acceptance_rate: game
            .is_binary_decision()
            .then(|| accepted as f64 / rollout_budget as f64),
        kept,
        no_op,
    };
    Ok((new_profile, stats))
}

fn row_space(
    game: &GameSpec,
    agent: AgentId,
    key: &str,
    profile: &StrategyProfile,
) -> Result<usize> {
    if let Strategy::Tabular(t) = &profile.strategies[agent] {
        if let Ok(row) = t.row(key) {
            return Ok(row.len());
        }
    }
    // Fallback: parse the target channel from the key prefix.
    let channel: usize = key
        .strip_prefix('t')
        .and_then(|rest| rest.split('|').next())
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| PvgError::Protocol(format!("malformed observation key `{key}`")))?;
    Ok(game.space(agent, channel)?.len())
}

fn decision_position(game: &GameSpec, agent: AgentId, y: u8) -> Result<usize> {
    let space = game.space(agent, game.decision_channel)?;
    let token = game.decision_tokens[usize::from(y)];
    space
        .iter()
        .position(|&t| t == token)
        .ok_or_else(|| PvgError::Protocol("label token missing from decision space".into()))
}

// ---------------------------------------------------------------------------
// Orchestration.
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    /// Per-agent exact losses.
    pub losses: Vec<f64>,
    pub gradient_norm: Option<f64>,
    pub completeness_error: Option<f64>,
    /// Worst acceptance probability on negatives for the current profile.
    pub profile_soundness: Option<f64>,
    pub zk_distance: Option<f64>,
    pub acceptance_rate: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainTrace {
    pub steps: Vec<StepRecord>,
    /// Profile snapshots at checkpoint steps, serialised as JSON.
    pub snapshots: Vec<(usize, String)>,
    pub final_profile: StrategyProfile,
}

/// Run a training schedule on a game. Gradient methods drive the first
/// prover-role agent and the deciding verifier through the chosen coupled
/// update; any remaining softmax agents descend their own losses at the
/// prover rate. Expert-iteration methods update every tabular agent.
pub fn run_training(
    game: &GameSpec,
    config: &TrainConfig,
    initial: &StrategyProfile,
) -> Result<TrainTrace> {
    config.validate()?;
    let mut steps = Vec::new();
    let mut snapshots = Vec::new();
    if config.steps == 0 {
        return Ok(TrainTrace {
            steps,
            snapshots,
            final_profile: initial.clone(),
        });
    }
    match config.method {
        TrainMethod::ExpertIteration | TrainMethod::StabilisedExpertIteration => {
            let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
            let mut profile = initial.clone();
            for round in 0..config.steps {
                let fraction = match config.method {
                    TrainMethod::StabilisedExpertIteration => config.replace_fraction(round),
                    _ => 0.0,
                };
                let (next, stats) = stabilised_expert_iteration_round(
                    game,
                    &profile,
                    config.rollout_budget,
                    fraction,
                    &mut rng,
                )?;
                profile = next;
                steps.push(evaluate_step(
                    game,
                    &profile,
                    round,
                    None,
                    stats.acceptance_rate,
                )?);
                if checkpoint_due(config, round) {
                    snapshots.push((round, serde_json::to_string(&profile)?));
                }
            }
            Ok(TrainTrace {
                steps,
                snapshots,
                final_profile: profile,
            })
        }
        TrainMethod::Simultaneous | TrainMethod::StackelbergImplicit | TrainMethod::Lola { .. } => {
            let provers = game.agents_with_role(Role::Prover);
            let prover = *provers
                .first()
                .ok_or_else(|| PvgError::Domain("game has no prover".into()))?;
            let verifier = game.decider;
            let objective = GameObjective {
                game,
                template: initial.clone(),
                prover,
                verifier,
                mode: MaxMode::Softened {
                    tau: SOFTMAX_TRAINING_TAU,
                },
            };
            let Strategy::Softmax(p0) = &initial.strategies[prover] else {
                return Err(PvgError::Domain(
                    "prover must use a softmax strategy".into(),
                ));
            };
            let Strategy::Softmax(v0) = &initial.strategies[verifier] else {
                return Err(PvgError::Domain(
                    "verifier must use a softmax strategy".into(),
                ));
            };
            let mut theta_p = p0.flatten();
            let mut theta_v = v0.flatten();
            // Side agents (for the zero-knowledge games) follow their own
            // losses at the prover rate.
            let side_agents: Vec<AgentId> = (0..game.agent_count())
                .filter(|&a| {
                    a != prover
                        && a != verifier
                        && matches!(initial.strategies[a], Strategy::Softmax(_))
                })
                .collect();
            let mut profile = initial.clone();

            for step in 0..config.steps {
                let ap = config.prover_rate.at(step);
                let av = config.verifier_rate.at(step);
                let objective = GameObjective {
                    template: profile.clone(),
                    ..objective
                };
                let (next_p, next_v) = match config.method {
                    TrainMethod::Simultaneous => {
                        simultaneous_update(&objective, &theta_p, &theta_v, ap, av)?
                    }
                    TrainMethod::StackelbergImplicit => stackelberg_implicit_update(
                        &objective,
                        &theta_p,
                        &theta_v,
                        ap,
                        av,
                        config.fd_step,
                    )?,
                    TrainMethod::Lola { lookahead } => lola_update(
                        &objective,
                        &theta_p,
                        &theta_v,
                        ap,
                        av,
                        config.prover_rate.at(step + 1),
                        lookahead,
                        config.fd_step,
                    )?,
                    _ => unreachable!(),
                };
                let mut grad_norm = 0.0;
                for (a, b) in theta_p.iter().zip(&next_p) {
                    grad_norm += ((a - b) / ap) * ((a - b) / ap);
                }
                theta_p = next_p;
                theta_v = next_v;
                // Install the pair, then step side agents on their losses.
                let pt = match &profile.strategies[prover] {
                    Strategy::Softmax(s) => s.unflatten(&theta_p)?,
                    _ => unreachable!(),
                };
                let vt = match &profile.strategies[verifier] {
                    Strategy::Softmax(s) => s.unflatten(&theta_v)?,
                    _ => unreachable!(),
                };
                profile.strategies[prover] = Strategy::Softmax(pt);
                profile.strategies[verifier] = Strategy::Softmax(vt);
                for &agent in &side_agents {
                    let grad = exact_gradient_of(
                        game,
                        &profile,
                        agent,
                        agent,
                        MaxMode::Softened {
                            tau: SOFTMAX_TRAINING_TAU,
                        },
                    )?;
                    let Strategy::Softmax(s) = &profile.strategies[agent] else {
                        unreachable!()
                    };
                    let params: Vec<f64> = s
                        .flatten()
                        .iter()
                        .zip(&grad)
                        .map(|(t, g)| t - ap * g)
                        .collect();
                    profile.strategies[agent] = Strategy::Softmax(s.unflatten(&params)?);
                }
                steps.push(evaluate_step(
                    game,
                    &profile,
                    step,
                    Some(grad_norm.sqrt()),
                    None,
                )?);
                if checkpoint_due(config, step) {
                    snapshots.push((step, serde_json::to_string(&profile)?));
                }
            }
            Ok(TrainTrace {
                steps,
                snapshots,
                final_profile: profile,
            })
        }
    }
}

fn checkpoint_due(config: &TrainConfig, step: usize) -> bool {
    if step + 1 == config.steps {
        return true;
    }
    config.eval_every > 0 && step % config.eval_every == 0
}

fn evaluate_step(
    game: &GameSpec,
    profile: &StrategyProfile,
    step: usize,
    gradient_norm: Option<f64>,
    acceptance_rate: Option<f64>,
) -> Result<StepRecord> {
    let mut losses = Vec::with_capacity(game.agent_count());
    for agent in 0..game.agent_count() {
        losses.push(agent_expected_loss(game, profile, agent)?);
    }
    let (completeness, soundness) = if game.is_binary_decision() {
        let (eps_c, _) = crate::losses::completeness_error(game, profile)?;
        let negatives = game.problem.instances_with_label(0);
        let mut worst: f64 = 0.0;
        for x in negatives {
            worst = worst.max(crate::losses::accept_probability(game, profile, x)?);
        }
        (Some(eps_c), Some(worst))
    } else {
        (None, None)
    };
    let zk_distance = if game.zk.is_some() {
        let instances: Vec<usize> = (0..game.problem.len()).collect();
        Some(crate::losses::zk_statistical_distance(
            game, profile, &instances,
        )?)
    } else {
        None
    };
    Ok(StepRecord {
        step,
        losses,
        gradient_norm,
        completeness_error: completeness,
        profile_soundness: soundness,
        zk_distance,
        acceptance_rate,
    })
}
