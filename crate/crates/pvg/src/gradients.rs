//! Exact gradients of expected losses with respect to one agent's softmax
//! logits, computed analytically from the enumerated transcript tree via the
//! score identity: the derivative of a transcript's log-probability is the
//! sum, over that agent's sends, of (one-hot of the sent message minus the
//! row distribution).
//!
//! This path is deliberately independent of finite differencing so the two
//! can cross-check each other. Worst-case (max) terms use the subgradient of
//! the active maximiser (ties averaged) in exact mode, or a log-sum-exp
//! softening during gradient training.

use std::collections::BTreeMap;

use crate::game::{
    decision_correct, AgentId, ChannelId, GameSpec, Role, SenderRule, Transcript,
    DEFAULT_BRANCH_BUDGET,
};
use crate::losses::{adversary_key, LossKind, ZkProverMode};
use crate::strategy::{SoftmaxStrategy, Strategy, StrategyProfile};
use crate::{PvgError, Result};

/// How max-over-instances terms are differentiated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MaxMode {
    /// Subgradient of the active maximiser; ties averaged.
    Exact,
    /// Log-sum-exp with the given temperature (gradients only; evaluation
    /// elsewhere always uses the exact max).
    Softened { tau: f64 },
}

/// Gradient of agent `loss_agent`'s expected loss with respect to the
/// softmax logits of `wrt_agent`, laid out like
/// [`SoftmaxStrategy::flatten`].
pub fn exact_gradient_of(
    game: &GameSpec,
    profile: &StrategyProfile,
    loss_agent: AgentId,
    wrt_agent: AgentId,
    mode: MaxMode,
) -> Result<Vec<f64>> {
    let Strategy::Softmax(target) = &profile.strategies[wrt_agent] else {
        return Err(PvgError::Domain(
            "gradient target must be a softmax strategy".into(),
        ));
    };
    let dim = target.parameter_count();
    let kind = game.losses[loss_agent];
    let ctx = GradContext {
        game,
        profile,
        wrt: wrt_agent,
        target,
        dim,
    };
    match kind {
        LossKind::NipProver => ctx.worst_case_combination(1.0, -1.0, mode),
        LossKind::NipVerifier => ctx.worst_case_combination(1.0, 1.0, mode),
        LossKind::AdpProver => ctx.adp_gradient(true),
        LossKind::AdpVerifier => ctx.adp_gradient(false),
        LossKind::DebateProver { index } => ctx.debate_prover_gradient(index),
        LossKind::DebateVerifier => ctx.debate_verifier_gradient(),
        LossKind::MacHelpfulProver => ctx.mac_gradient(MacPart::Helpful),
        LossKind::MacUnhelpfulProver => ctx.mac_gradient(MacPart::Unhelpful),
        LossKind::MacVerifier { gamma } => ctx.mac_verifier_gradient(gamma),
        LossKind::ZkSimulator => ctx.zk_distance_gradient(1.0, mode),
        LossKind::ZkDishonestVerifier => ctx.zk_distance_gradient(-1.0, mode),
        LossKind::ZkProver {
            coefficient,
            mode: prover_mode,
        } => {
            let mut grad = ctx.worst_case_combination(1.0, -1.0, mode)?;
            let weight = match prover_mode {
                ZkProverMode::Weighted => coefficient,
                // The lexicographic objective's primary component drives
                // gradient play; the secondary enters only through solvers.
                ZkProverMode::Lexicographic { .. } => 0.0,
            };
            if weight != 0.0 {
                let zk = ctx.zk_distance_gradient(1.0, mode)?;
                for (g, z) in grad.iter_mut().zip(zk) {
                    *g += weight * z;
                }
            }
            Ok(grad)
        }
        LossKind::MatchingPennies { matcher } => {
            let sign = if matcher { -1.0 } else { 1.0 };
            ctx.match_probability_gradient(sign)
        }
        LossKind::AdversaryInstancePicker
        | LossKind::AdversarialNipProver
        | LossKind::AdversarialNipVerifier => ctx.adversarial_gradient(kind),
    }
}

/// Per-transcript probability and score vector for one agent.
struct ScoredTranscript {
    transcript: Transcript,
    prob: f64,
    score: Vec<f64>,
}

struct GradContext<'a> {
    game: &'a GameSpec,
    profile: &'a StrategyProfile,
    wrt: AgentId,
    target: &'a SoftmaxStrategy,
    dim: usize,
}

impl GradContext<'_> {
    /// Enumerate transcripts on `x` with scores for the target agent.
    fn scored(&self, x: usize) -> Result<Vec<ScoredTranscript>> {
        let expansions = self.profile.expand()?;
        let mut out = Vec::new();
        for (weight, strategies) in expansions {
            if weight == 0.0 {
                continue;
            }
            let state = crate::game::GameState::open(self.game, x)?;
            let mut stack = vec![(state, weight, vec![0.0; self.dim])];
            let mut visited = 0usize;
            while let Some((state, prob, score)) = stack.pop() {
                visited += 1;
                if visited > DEFAULT_BRANCH_BUDGET {
                    return Err(PvgError::BudgetExceeded {
                        visited,
                        budget: DEFAULT_BRANCH_BUDGET,
                    });
                }
                if state.terminated(self.game) {
                    out.push(ScoredTranscript {
                        transcript: finish(self.game, state),
                        prob,
                        score,
                    });
                    continue;
                }
                self.expand_round(&strategies, state, prob, score, &mut stack)?;
            }
        }
        Ok(out)
    }

    fn expand_round<'p>(
        &self,
        strategies: &[crate::strategy::BehaviouralStrategy<'p>],
        state: crate::game::GameState,
        prob: f64,
        score: Vec<f64>,
        stack: &mut Vec<(crate::game::GameState, f64, Vec<f64>)>,
    ) -> Result<()> {
        let game = self.game;
        let t = state.round;
        let rules: Vec<(ChannelId, &SenderRule)> = (0..game.channels.len())
            .map(|c| (c, game.mechanism.rule_at(t, c)))
            .collect();
        let mut alternatives: Vec<(Vec<usize>, f64)> = vec![(vec![0; rules.len()], 1.0)];
        for (idx, (_, rule)) in rules.iter().enumerate() {
            if let SenderRule::Choice(options) = rule {
                let mut next = Vec::new();
                for (picks, w) in &alternatives {
                    for (i, (_, p)) in options.iter().enumerate() {
                        if *p == 0.0 {
                            continue;
                        }
                        let mut picks = picks.clone();
                        picks[idx] = i;
                        next.push((picks, w * p));
                    }
                }
                alternatives = next;
            }
        }
        for (picks, mech_prob) in alternatives {
            let sends = round_sends_public(&rules, &picks);
            let snapshot = state.histories.clone();
            let mut partial = vec![(state.clone(), prob * mech_prob, score.clone())];
            for (channel, sender) in sends {
                let mut next = Vec::new();
                for (st, p, sc) in partial {
                    match sender {
                        Some(agent) => {
                            let key = crate::game::observation_from(
                                game,
                                agent,
                                channel,
                                st.instance,
                                st.label,
                                &snapshot,
                            )
                            .encode();
                            let space = game.space(agent, channel)?;
                            let dist = strategies[agent].distribution(&key, space.len())?;
                            for (pos, &mp) in dist.iter().enumerate() {
                                if mp == 0.0 {
                                    continue;
                                }
                                let mut branch = st.clone();
                                crate::game::apply_send(
                                    game,
                                    &mut branch,
                                    t,
                                    channel,
                                    Some(agent),
                                    space[pos],
                                );
                                let mut sc = sc.clone();
                                if agent == self.wrt {
                                    // Score identity for the sent message.
                                    for (m, &q) in dist.iter().enumerate() {
                                        if let Some(offset) = self.target.offset_of(&key, m) {
                                            sc[offset] += if m == pos { 1.0 - q } else { -q };
                                        }
                                    }
                                }
                                next.push((branch, p * mp, sc));
                            }
                        }
                        None => {
                            let alphabet = game.channels[channel].alphabet.len();
                            let mp = 1.0 / alphabet as f64;
                            for token in 0..alphabet as u32 {
                                let mut branch = st.clone();
                                crate::game::apply_send(game, &mut branch, t, channel, None, token);
                                next.push((branch, p * mp, sc.clone()));
                            }
                        }
                    }
                }
                partial = next;
            }
            for (mut st, p, sc) in partial {
                st.round += 1;
                stack.push((st, p, sc));
            }
        }
        Ok(())
    }

    /// Value and gradient of the per-instance error probability.
    fn instance_loss_grad(&self, x: usize) -> Result<(f64, Vec<f64>)> {
        let y = self.game.problem.membership_label(x)?;
        let scans = self.scored(x)?;
        let mut value = 0.0;
        let mut grad = vec![0.0; self.dim];
        for s in &scans {
            if !decision_correct(self.game, &s.transcript, y) {
                value += s.prob;
                axpy(&mut grad, s.prob, &s.score);
            }
        }
        Ok((value, grad))
    }

    /// Gradient of `c1 * max_{y=1} loss + c0 * max_{y=0} loss`.
    fn worst_case_combination(&self, c1: f64, c0: f64, mode: MaxMode) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.dim];
        for (label, coeff) in [(1u8, c1), (0u8, c0)] {
            if coeff == 0.0 {
                continue;
            }
            let instances = self.game.problem.instances_with_label(label);
            if instances.is_empty() {
                return Err(PvgError::Domain(format!(
                    "problem has no label-{label} instance"
                )));
            }
            let pairs: Vec<(f64, Vec<f64>)> = instances
                .iter()
                .map(|&x| self.instance_loss_grad(x))
                .collect::<Result<_>>()?;
            match mode {
                MaxMode::Exact => {
                    let best = pairs
                        .iter()
                        .map(|(v, _)| *v)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let active: Vec<&(f64, Vec<f64>)> = pairs
                        .iter()
                        .filter(|(v, _)| (best - v).abs() < 1e-12)
                        .collect();
                    let share = coeff / active.len() as f64;
                    for (_, g) in active {
                        axpy(&mut grad, share, g);
                    }
                }
                MaxMode::Softened { tau } => {
                    let best = pairs
                        .iter()
                        .map(|(v, _)| *v)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let weights: Vec<f64> = pairs
                        .iter()
                        .map(|(v, _)| ((v - best) / tau).exp())
                        .collect();
                    let total: f64 = weights.iter().sum();
                    for ((_, g), w) in pairs.iter().zip(weights) {
                        axpy(&mut grad, coeff * w / total, g);
                    }
                }
            }
        }
        Ok(grad)
    }

    /// Gradient of the one-shot log losses via the quotient rule on the
    /// (message mass, favourable mass) pairs.
    fn adp_gradient(&self, prover_side: bool) -> Result<Vec<f64>> {
        let provers = self.game.agents_with_role(Role::Prover);
        let [prover] = provers.as_slice() else {
            return Err(PvgError::Protocol("expected exactly one prover".into()));
        };
        let mut grad = vec![0.0; self.dim];
        for x in 0..self.game.problem.len() {
            let prior = self.game.problem.prior(x);
            if prior == 0.0 {
                continue;
            }
            let y = self.game.problem.label(x);
            let scans = self.scored(x)?;
            let mut groups: BTreeMap<u32, Quotient> = BTreeMap::new();
            for s in &scans {
                let Some(m) = s
                    .transcript
                    .first_message_of(*prover, self.game.decision_channel)
                else {
                    return Err(PvgError::Protocol("prover message missing".into()));
                };
                let accepted = s.transcript.decision == Some(1);
                let counted = if prover_side || y == 1 {
                    accepted
                } else {
                    !accepted
                };
                groups
                    .entry(m)
                    .or_insert_with(|| Quotient::new(self.dim))
                    .push(s.prob, &s.score, counted);
            }
            for q in groups.values() {
                q.add_log_term(prior, &mut grad)?;
            }
        }
        Ok(grad)
    }

    fn debate_prover_gradient(&self, index: u8) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.dim];
        for x in 0..self.game.problem.len() {
            let prior = self.game.problem.prior(x);
            if prior == 0.0 {
                continue;
            }
            for s in self.scored(x)? {
                if s.transcript.decision == Some(u32::from(index)) {
                    axpy(&mut grad, -prior * s.prob, &s.score);
                }
            }
        }
        Ok(grad)
    }

    fn debate_verifier_gradient(&self) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.dim];
        for x in 0..self.game.problem.len() {
            let prior = self.game.problem.prior(x);
            if prior == 0.0 {
                continue;
            }
            let y = self.game.problem.label(x);
            for s in self.scored(x)? {
                if decision_correct(self.game, &s.transcript, y) {
                    axpy(&mut grad, -prior * s.prob, &s.score);
                }
            }
        }
        Ok(grad)
    }

    fn mac_gradient(&self, part: MacPart) -> Result<Vec<f64>> {
        let (helpful, unhelpful) = self.mac_partial_gradients()?;
        Ok(match part {
            MacPart::Helpful => helpful,
            MacPart::Unhelpful => unhelpful,
        })
    }

    /// Gradients of the two unconditional log objectives.
    fn mac_partial_gradients(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut helpful = vec![0.0; self.dim];
        let mut unhelpful = vec![0.0; self.dim];
        self.mac_accumulate(&mut helpful, &mut unhelpful, None)?;
        // The unhelpful objective enters with a positive sign.
        for g in &mut unhelpful {
            *g = -*g;
        }
        Ok((helpful, unhelpful))
    }

    fn mac_verifier_gradient(&self, gamma: f64) -> Result<Vec<f64>> {
        let mut helpful = vec![0.0; self.dim];
        let mut unhelpful = vec![0.0; self.dim];
        self.mac_accumulate(&mut helpful, &mut unhelpful, Some(2.0))?;
        let mut grad = vec![0.0; self.dim];
        if gamma < 1.0 {
            axpy(&mut grad, 1.0 - gamma, &helpful);
        }
        if gamma > 0.0 {
            axpy(&mut grad, gamma, &unhelpful);
        }
        Ok(grad)
    }

    /// Accumulate negative-log-gradients of the correct-class quotient into
    /// `helpful` and of the (correct or abstain) quotient into `unhelpful`.
    /// With `branch_norm` set, each side restricts to rollouts where its own
    /// prover moved (the conditional form entering the verifier loss).
    fn mac_accumulate(
        &self,
        helpful: &mut [f64],
        unhelpful: &mut [f64],
        branch_norm: Option<f64>,
    ) -> Result<()> {
        let provers = self.game.agents_with_role(Role::Prover);
        let [first, second] = provers.as_slice() else {
            return Err(PvgError::Protocol("expected two provers".into()));
        };
        let channel = self.game.decision_channel;
        for x in 0..self.game.problem.len() {
            let prior = self.game.problem.prior(x);
            if prior == 0.0 {
                continue;
            }
            let y = self.game.problem.label(x);
            let class_token = u32::from(y) + 1;
            let scans = self.scored(x)?;
            // Quotients per feature: denominators may be restricted by the
            // sender when computing conditional branches.
            let mut groups: BTreeMap<(u32, u8), (Quotient, Quotient)> = BTreeMap::new();
            for s in &scans {
                let feature = s
                    .transcript
                    .events
                    .iter()
                    .find(|e| e.t == 1 && e.channel == channel)
                    .ok_or_else(|| PvgError::Protocol("feature event missing".into()))?;
                let sender_tag = if feature.sender == Some(*first) {
                    0u8
                } else if feature.sender == Some(*second) {
                    1u8
                } else {
                    return Err(PvgError::Protocol("feature sender missing".into()));
                };
                let key = if branch_norm.is_some() {
                    (feature.message, sender_tag)
                } else {
                    (feature.message, 0)
                };
                let entry = groups
                    .entry(key)
                    .or_insert_with(|| (Quotient::new(self.dim), Quotient::new(self.dim)));
                let correct = s.transcript.decision == Some(class_token);
                let safe = correct || s.transcript.decision == Some(0);
                entry.0.push(s.prob, &s.score, correct);
                entry.1.push(s.prob, &s.score, safe);
            }
            let scale = prior * branch_norm.unwrap_or(1.0);
            for ((_, sender_tag), (correct_q, safe_q)) in &groups {
                match branch_norm {
                    None => {
                        correct_q.add_log_term(prior, helpful)?;
                        safe_q.add_log_term(prior, unhelpful)?;
                    }
                    Some(_) => {
                        if *sender_tag == 0 {
                            correct_q.add_log_term(scale, helpful)?;
                        } else {
                            safe_q.add_log_term(scale, unhelpful)?;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Gradient of `sign * max_x TV(watched(x), simulated(x))`.
    fn zk_distance_gradient(&self, sign: f64, mode: MaxMode) -> Result<Vec<f64>> {
        let layout = self
            .game
            .zk
            .as_ref()
            .ok_or_else(|| PvgError::Protocol("game has no zero-knowledge layout".into()))?;
        let instances: Vec<usize> = if layout.all_instances {
            (0..self.game.problem.len()).collect()
        } else {
            self.game.problem.instances_with_label(1)
        };
        let mut pairs: Vec<(f64, Vec<f64>)> = Vec::with_capacity(instances.len());
        for &x in &instances {
            let scans = self.scored(x)?;
            // Linear masses and gradients per projected sequence.
            let mut acc: BTreeMap<Vec<u32>, (f64, Vec<f64>, f64, Vec<f64>)> = BTreeMap::new();
            for s in &scans {
                let watched = s.transcript.channel_messages(layout.watched_channel);
                let entry = acc
                    .entry(watched)
                    .or_insert_with(|| (0.0, vec![0.0; self.dim], 0.0, vec![0.0; self.dim]));
                entry.0 += s.prob;
                axpy(&mut entry.1, s.prob, &s.score);
            }
            for s in &scans {
                let simulated = s.transcript.channel_messages(layout.simulator_channel);
                let entry = acc
                    .entry(simulated)
                    .or_insert_with(|| (0.0, vec![0.0; self.dim], 0.0, vec![0.0; self.dim]));
                entry.2 += s.prob;
                axpy(&mut entry.3, s.prob, &s.score);
            }
            let mut value = 0.0;
            let mut grad = vec![0.0; self.dim];
            for (w, wg, sm, sg) in acc.values() {
                let diff = w - sm;
                value += 0.5 * diff.abs();
                let sgn = if diff > 0.0 {
                    0.5
                } else if diff < 0.0 {
                    -0.5
                } else {
                    0.0
                };
                if sgn != 0.0 {
                    axpy(&mut grad, sgn, wg);
                    axpy(&mut grad, -sgn, sg);
                }
            }
            pairs.push((value, grad));
        }
        let mut grad = vec![0.0; self.dim];
        match mode {
            MaxMode::Exact => {
                let best = pairs
                    .iter()
                    .map(|(v, _)| *v)
                    .fold(f64::NEG_INFINITY, f64::max);
                let active: Vec<&(f64, Vec<f64>)> = pairs
                    .iter()
                    .filter(|(v, _)| (best - v).abs() < 1e-12)
                    .collect();
                let share = sign / active.len() as f64;
                for (_, g) in active {
                    axpy(&mut grad, share, g);
                }
            }
            MaxMode::Softened { tau } => {
                let best = pairs
                    .iter()
                    .map(|(v, _)| *v)
                    .fold(f64::NEG_INFINITY, f64::max);
                let weights: Vec<f64> = pairs
                    .iter()
                    .map(|(v, _)| ((v - best) / tau).exp())
                    .collect();
                let total: f64 = weights.iter().sum();
                for ((_, g), w) in pairs.iter().zip(weights) {
                    axpy(&mut grad, sign * w / total, g);
                }
            }
        }
        Ok(grad)
    }

    fn match_probability_gradient(&self, sign: f64) -> Result<Vec<f64>> {
        let provers = self.game.agents_with_role(Role::Prover);
        let [prover] = provers.as_slice() else {
            return Err(PvgError::Protocol("expected exactly one prover".into()));
        };
        let prover_channel = *self
            .game
            .channels_of(*prover)
            .first()
            .ok_or_else(|| PvgError::Protocol("mover has no channel".into()))?;
        let mut grad = vec![0.0; self.dim];
        for x in 0..self.game.problem.len() {
            let prior = self.game.problem.prior(x);
            if prior == 0.0 {
                continue;
            }
            for s in self.scored(x)? {
                let token = s.transcript.first_message_of(*prover, prover_channel);
                if let (Some(token), Some(d)) = (token, s.transcript.decision) {
                    if token == d {
                        axpy(&mut grad, sign * prior * s.prob, &s.score);
                    }
                }
            }
        }
        Ok(grad)
    }

    /// Gradients of the adversarial losses: mixtures of per-instance loss
    /// gradients under the adversary's fixed pair distribution.
    fn adversarial_gradient(&self, kind: LossKind) -> Result<Vec<f64>> {
        let layout = self
            .game
            .adversary
            .as_ref()
            .ok_or_else(|| PvgError::Protocol("game has no adversary layout".into()))?;
        let Strategy::Tabular(t) = &self.profile.strategies[layout.agent] else {
            return Err(PvgError::Protocol(
                "adversary strategy must be tabular".into(),
            ));
        };
        let weights = t.row(&adversary_key(self.game))?.to_vec();
        let (c_pos, c_neg) = match kind {
            LossKind::AdversaryInstancePicker => (-1.0, -1.0),
            LossKind::AdversarialNipProver => (1.0, -1.0),
            LossKind::AdversarialNipVerifier => (1.0, 1.0),
            _ => unreachable!("adversarial dispatch"),
        };
        let mut grad = vec![0.0; self.dim];
        let mut cache: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
        for (&w, &(s, x)) in weights.iter().zip(&layout.pairs) {
            if w == 0.0 {
                continue;
            }
            for (instance, coeff) in [(s, c_pos), (x, c_neg)] {
                if let std::collections::btree_map::Entry::Vacant(slot) = cache.entry(instance) {
                    let (_, g) = self.instance_loss_grad(instance)?;
                    slot.insert(g);
                }
                axpy(&mut grad, w * coeff, &cache[&instance]);
            }
        }
        Ok(grad)
    }
}

enum MacPart {
    Helpful,
    Unhelpful,
}

/// Linear masses `(denominator, numerator)` with their gradients, for
/// negative-log-of-quotient terms.
struct Quotient {
    denom: f64,
    denom_grad: Vec<f64>,
    numer: f64,
    numer_grad: Vec<f64>,
}

impl Quotient {
    fn new(dim: usize) -> Self {
        Self {
            denom: 0.0,
            denom_grad: vec![0.0; dim],
            numer: 0.0,
            numer_grad: vec![0.0; dim],
        }
    }

    fn push(&mut self, prob: f64, score: &[f64], favourable: bool) {
        self.denom += prob;
        axpy(&mut self.denom_grad, prob, score);
        if favourable {
            self.numer += prob;
            axpy(&mut self.numer_grad, prob, score);
        }
    }

    /// Accumulate the gradient of `-prior * D * ln(N / D)`:
    /// `-prior * (D' ln(N/D) + (D/N) N' - D')`.
    fn add_log_term(&self, prior: f64, grad: &mut [f64]) -> Result<()> {
        if self.denom <= 0.0 {
            return Ok(());
        }
        if self.numer <= 0.0 {
            return Err(PvgError::Domain(
                "log-loss gradient undefined at zero probability".into(),
            ));
        }
        let ratio = self.numer / self.denom;
        let log_ratio = ratio.ln();
        for i in 0..grad.len() {
            let term = self.denom_grad[i] * log_ratio
                + (self.denom / self.numer) * self.numer_grad[i]
                - self.denom_grad[i];
            grad[i] -= prior * term;
        }
        Ok(())
    }
}

fn axpy(acc: &mut [f64], a: f64, x: &[f64]) {
    for (dst, src) in acc.iter_mut().zip(x) {
        *dst += a * src;
    }
}

fn finish(game: &GameSpec, mut state: crate::game::GameState) -> Transcript {
    if state.decision.is_none() && state.round > game.max_rounds {
        state.decision = Some(0);
    }
    Transcript {
        events: state.events,
        decision: state.decision,
    }
}

fn round_sends_public(
    rules: &[(ChannelId, &SenderRule)],
    picks: &[usize],
) -> Vec<(ChannelId, Option<AgentId>)> {
    let mut sends = Vec::new();
    for (idx, (channel, rule)) in rules.iter().enumerate() {
        let agents: Vec<AgentId> = match rule {
            SenderRule::Agents(list) => {
                if list.is_empty() {
                    sends.push((*channel, None));
                    continue;
                }
                list.clone()
            }
            SenderRule::Choice(options) => {
                let list = &options[picks[idx]].0;
                if list.is_empty() {
                    sends.push((*channel, None));
                    continue;
                }
                list.clone()
            }
            SenderRule::Silent => continue,
        };
        let mut sorted = agents;
        sorted.sort_unstable();
        for a in sorted {
            sends.push((*channel, Some(a)));
        }
    }
    sends
}

/// Central finite-difference gradient of an agent's expected loss, the
/// oracle that [`exact_gradient_of`] is checked against.
pub fn finite_difference_gradient(
    game: &GameSpec,
    profile: &StrategyProfile,
    loss_agent: AgentId,
    wrt_agent: AgentId,
    step: f64,
) -> Result<Vec<f64>> {
    let Strategy::Softmax(target) = &profile.strategies[wrt_agent] else {
        return Err(PvgError::Domain(
            "gradient target must be a softmax strategy".into(),
        ));
    };
    let params = target.flatten();
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let mut plus = params.clone();
        plus[i] += step;
        let mut minus = params.clone();
        minus[i] -= step;
        let loss_at = |p: &[f64]| -> Result<f64> {
            let strategy = Strategy::Softmax(target.unflatten(p)?);
            let profile = profile.with_strategy(wrt_agent, strategy);
            crate::losses::agent_expected_loss(game, &profile, loss_agent)
        };
        grad[i] = (loss_at(&plus)? - loss_at(&minus)?) / (2.0 * step);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::DecisionProblem;
    use crate::protocols::{build_adp, build_nip};
    use crate::strategy::{make_tabular_softmax, LogitInit};

    fn two_point_problem() -> DecisionProblem {
        DecisionProblem::new(vec!["neg".into(), "pos".into()], vec![0, 1], vec![0.5, 0.5]).unwrap()
    }

    fn softmax_profile(game: &GameSpec, seed: u64) -> StrategyProfile {
        let strategies = (0..game.agent_count())
            .map(|agent| {
                Strategy::Softmax(
                    make_tabular_softmax(
                        LogitInit::Gaussian {
                            std: 0.7,
                            seed: seed + agent as u64,
                        },
                        game,
                        agent,
                    )
                    .unwrap(),
                )
            })
            .collect();
        StrategyProfile::new(strategies)
    }

    #[test]
    fn uniform_logits_on_a_symmetric_game_have_zero_gradient() {
        // Matching-pennies-like symmetry: with uniform play on a label-
        // balanced problem, the alternating-protocol prover gradient
        // vanishes by symmetry of the two instances.
        let game = build_nip(two_point_problem(), 1, 2).unwrap();
        let strategies = (0..2)
            .map(|agent| {
                Strategy::Softmax(make_tabular_softmax(LogitInit::Zeros, &game, agent).unwrap())
            })
            .collect();
        let profile = StrategyProfile::new(strategies);
        let grad = exact_gradient_of(&game, &profile, 0, 0, MaxMode::Exact).unwrap();
        // Prover messages do not change the uniform verifier's behaviour.
        for g in grad {
            assert!(g.abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences_on_small_games() {
        let mut checked = 0;
        for seed in 0..6u64 {
            let adp = build_adp(two_point_problem(), 2).unwrap();
            let nip = build_nip(two_point_problem(), 1, 2).unwrap();
            for game in [&adp, &nip] {
                let profile = softmax_profile(game, 100 + seed);
                for loss_agent in 0..game.agent_count() {
                    for wrt in 0..game.agent_count() {
                        let exact =
                            exact_gradient_of(game, &profile, loss_agent, wrt, MaxMode::Exact)
                                .unwrap();
                        let fd = finite_difference_gradient(game, &profile, loss_agent, wrt, 1e-5)
                            .unwrap();
                        for (a, b) in exact.iter().zip(&fd) {
                            let scale = 1.0_f64.max(b.abs());
                            assert!(
                                (a - b).abs() / scale < 1e-4,
                                "seed {seed} game {} loss {loss_agent} wrt {wrt}: {a} vs {b}",
                                game.name
                            );
                        }
                        checked += 1;
                    }
                }
            }
        }
        assert!(checked >= 40);
    }

    #[test]
    fn softened_max_approaches_the_exact_subgradient() {
        let game = build_nip(two_point_problem(), 1, 2).unwrap();
        let profile = softmax_profile(&game, 5);
        let exact = exact_gradient_of(&game, &profile, 1, 1, MaxMode::Exact).unwrap();
        let soft =
            exact_gradient_of(&game, &profile, 1, 1, MaxMode::Softened { tau: 1e-4 }).unwrap();
        for (a, b) in exact.iter().zip(&soft) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }
}
