//! Messaging games: channels, mechanism, transcripts, rollouts and exact
//! transcript-distribution enumeration.
//!
//! Play opens with a common observation of an instance drawn from the
//! problem prior (posted to every channel at time zero), then proceeds in
//! rounds. At each round the mechanism selects, per channel, a set of
//! senders; every selected agent samples a message from its strategy given
//! the histories of the channels it belongs to, snapshotted at the start of
//! the round. Play terminates when the designated verifier sends a decision
//! token in the decision channel, or at the round cap, in which case the
//! decision is forced to 0 (reject).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::losses::LossKind;
use crate::problem::DecisionProblem;
use crate::strategy::{BehaviouralStrategy, ObsKey, StrategyProfile};
use crate::{PvgError, Result};

pub type AgentId = usize;
pub type ChannelId = usize;

/// Default branch budget for exact enumeration.
pub const DEFAULT_BRANCH_BUDGET: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Prover,
    Verifier,
    Adversary,
    Simulator,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentSpec {
    pub name: String,
    pub role: Role,
    /// Whether the opening instance is part of this agent's observation key.
    pub sees_instance: bool,
    /// Whether the true label is part of this agent's observation key.
    pub sees_label: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChannelSpec {
    pub name: String,
    pub members: Vec<AgentId>,
    /// Ordered message tokens; wire encoding is the index into this list.
    pub alphabet: Vec<String>,
}

/// Who sends in a channel at a given round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SenderRule {
    /// Deterministic sender set; the empty set draws a uniform random token.
    Agents(Vec<AgentId>),
    /// Stochastic choice over sender sets.
    Choice(Vec<(Vec<AgentId>, f64)>),
    /// Nobody sends.
    Silent,
}

/// Mechanism table indexed by post-opening round (starting at 1) and channel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mechanism {
    /// `rounds[t - 1][c]` is the rule for channel `c` at round `t`.
    pub rounds: Vec<Vec<SenderRule>>,
    /// When set, rounds beyond the table repeat from this 0-based table row.
    pub cycle_from: Option<usize>,
}

impl Mechanism {
    pub fn rule_at(&self, round: usize, channel: ChannelId) -> &SenderRule {
        debug_assert!(round >= 1);
        let idx = round - 1;
        if idx < self.rounds.len() {
            return &self.rounds[idx][channel];
        }
        match self.cycle_from {
            Some(start) => {
                let period = self.rounds.len() - start;
                let wrapped = start + (idx - start) % period;
                &self.rounds[wrapped][channel]
            }
            None => &SenderRule::Silent,
        }
    }
}

/// How a terminated transcript is scored against the true label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DecisionRule {
    /// Correct iff the decision value equals the label.
    MatchLabel,
    /// Correct iff the verdict names a prover whose declared answer (its
    /// first message) equals the label; verdict 0 is always a miss.
    DebateAnswer,
    /// Correct iff the decision names the class `label + 1`; 0 is "not sure".
    MacClass,
}

/// Extra wiring for zero-knowledge games.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ZkLayout {
    pub prover: AgentId,
    pub honest_verifier: AgentId,
    pub dishonest_verifier: AgentId,
    pub simulator: AgentId,
    /// The prover / dishonest-verifier channel whose transcripts leak.
    pub watched_channel: ChannelId,
    /// The channel in which the simulator writes its imitation.
    pub simulator_channel: ChannelId,
    /// Maximise the statistical distance over all instances rather than the
    /// positively labelled ones only.
    pub all_instances: bool,
}

/// Extra wiring for the adversarial worst-case variant: the adversary picks
/// a (positive, negative) instance pair that replaces the worst-case terms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdversaryLayout {
    pub agent: AgentId,
    /// Pure strategies: (positive instance, negative instance).
    pub pairs: Vec<(usize, usize)>,
}

/// A complete finite messaging game over a decision problem.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GameSpec {
    pub name: String,
    pub problem: DecisionProblem,
    pub agents: Vec<AgentSpec>,
    pub channels: Vec<ChannelSpec>,
    pub mechanism: Mechanism,
    /// Ordered token positions (into the channel alphabet) each agent may
    /// send per channel, keyed by (agent, channel).
    pub message_spaces: BTreeMap<(AgentId, ChannelId), Vec<u32>>,
    pub decision_channel: ChannelId,
    /// The unique verifier whose decision tokens terminate play.
    pub decider: AgentId,
    /// Raw token indices in the decision channel; the decision value is the
    /// position within this list.
    pub decision_tokens: Vec<u32>,
    pub decision_rule: DecisionRule,
    /// Round cap (post-opening). Reaching it without a decision forces 0.
    pub max_rounds: usize,
    /// One loss functional per agent.
    pub losses: Vec<LossKind>,
    pub zk: Option<ZkLayout>,
    pub adversary: Option<AdversaryLayout>,
}

impl GameSpec {
    pub fn agent_count(&self) -> usize {
        self.agents.len()
    }

    /// Channels the agent belongs to, ascending.
    pub fn channels_of(&self, agent: AgentId) -> Vec<ChannelId> {
        self.channels
            .iter()
            .enumerate()
            .filter(|(_, c)| c.members.contains(&agent))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn space(&self, agent: AgentId, channel: ChannelId) -> Result<&[u32]> {
        self.message_spaces
            .get(&(agent, channel))
            .map(|v| v.as_slice())
            .ok_or_else(|| {
                PvgError::Protocol(format!(
                    "agent {agent} has no message space in channel {channel}"
                ))
            })
    }

    /// Whether decisions are binary accept/reject.
    pub fn is_binary_decision(&self) -> bool {
        self.decision_tokens.len() == 2
    }

    pub fn agent_by_name(&self, name: &str) -> Option<AgentId> {
        self.agents.iter().position(|a| a.name == name)
    }

    pub fn agents_with_role(&self, role: Role) -> Vec<AgentId> {
        self.agents
            .iter()
            .enumerate()
            .filter(|(_, a)| a.role == role)
            .map(|(i, _)| i)
            .collect()
    }

    /// Validate the structural invariants: the decision channel holds exactly
    /// one verifier (the decider), message spaces are non-empty and in range,
    /// mechanism sender sets are channel members, losses cover every agent.
    pub fn validate(&self) -> Result<()> {
        if self.max_rounds < 1 {
            return Err(PvgError::Protocol("max_rounds must be at least 1".into()));
        }
        if self.losses.len() != self.agents.len() {
            return Err(PvgError::Protocol("one loss per agent required".into()));
        }
        let decision_members = &self.channels[self.decision_channel].members;
        let verifiers_in_decision: Vec<_> = decision_members
            .iter()
            .filter(|&&a| matches!(self.agents[a].role, Role::Verifier))
            .collect();
        if verifiers_in_decision.len() != 1 || *verifiers_in_decision[0] != self.decider {
            return Err(PvgError::Protocol(
                "decision channel must contain exactly one verifier, the decider".into(),
            ));
        }
        if self.decision_tokens.is_empty() {
            return Err(PvgError::Protocol(
                "decision tokens must be non-empty".into(),
            ));
        }
        for (&(agent, channel), space) in &self.message_spaces {
            if agent >= self.agents.len() || channel >= self.channels.len() {
                return Err(PvgError::Protocol(
                    "message space references unknown agent/channel".into(),
                ));
            }
            if space.is_empty() {
                return Err(PvgError::Protocol(
                    "message spaces must be non-empty".into(),
                ));
            }
            let alphabet = self.channels[channel].alphabet.len() as u32;
            if space.iter().any(|&t| t >= alphabet) {
                return Err(PvgError::Protocol(
                    "message space token out of alphabet range".into(),
                ));
            }
        }
        for row in &self.mechanism.rounds {
            if row.len() != self.channels.len() {
                return Err(PvgError::Protocol("mechanism row arity mismatch".into()));
            }
            for (c, rule) in row.iter().enumerate() {
                let check = |agents: &[AgentId]| -> Result<()> {
                    for &a in agents {
                        if !self.channels[c].members.contains(&a) {
                            return Err(PvgError::Protocol(format!(
                                "mechanism schedules non-member agent {a} in channel {c}"
                            )));
                        }
                        self.space(a, c)?;
                    }
                    Ok(())
                };
                match rule {
                    SenderRule::Agents(list) => check(list)?,
                    SenderRule::Choice(options) => {
                        let total: f64 = options.iter().map(|(_, p)| p).sum();
                        if (total - 1.0).abs() > 1e-9 {
                            return Err(PvgError::Protocol("sender choice must normalise".into()));
                        }
                        for (list, _) in options {
                            check(list)?;
                        }
                    }
                    SenderRule::Silent => {}
                }
            }
        }
        Ok(())
    }
}

/// One message event. The opening observation appears as one event per
/// channel at time zero with no sender and the instance index as message.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Event {
    pub t: usize,
    pub channel: ChannelId,
    pub sender: Option<AgentId>,
    pub message: u32,
}

/// A terminated or truncated play record.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Transcript {
    pub events: Vec<Event>,
    /// Decision value (position in the game's decision-token list).
    pub decision: Option<u32>,
}

impl Transcript {
    /// Tokens posted in one channel, post-opening, in order.
    pub fn channel_messages(&self, channel: ChannelId) -> Vec<u32> {
        self.events
            .iter()
            .filter(|e| e.channel == channel && e.t > 0)
            .map(|e| e.message)
            .collect()
    }

    /// The first post-opening message sent by `agent` in `channel`.
    pub fn first_message_of(&self, agent: AgentId, channel: ChannelId) -> Option<u32> {
        self.events
            .iter()
            .find(|e| e.t > 0 && e.channel == channel && e.sender == Some(agent))
            .map(|e| e.message)
    }
}

/// The decision of a terminated transcript; errors when absent.
pub fn decision_of(transcript: &Transcript) -> Result<u32> {
    transcript
        .decision
        .ok_or_else(|| PvgError::Protocol("transcript carries no decision".into()))
}

/// Whether the transcript's outcome counts as correct for label `y`.
pub fn decision_correct(game: &GameSpec, transcript: &Transcript, y: u8) -> bool {
    let Some(d) = transcript.decision else {
        return false;
    };
    match game.decision_rule {
        DecisionRule::MatchLabel => d == u32::from(y),
        DecisionRule::DebateAnswer => {
            if d == 0 {
                return false;
            }
            let provers = game.agents_with_role(Role::Prover);
            match provers.get((d - 1) as usize).copied() {
                Some(p) => {
                    game.channels_of(p)
                        .into_iter()
                        .find_map(|c| transcript.first_message_of(p, c))
                        == Some(u32::from(y))
                }
                None => false,
            }
        }
        DecisionRule::MacClass => d == u32::from(y) + 1,
    }
}

/// Mutable play state used by [`advance_state`] and [`rollout`].
#[derive(Debug, Clone)]
pub struct GameState {
    pub instance: usize,
    pub label: u8,
    /// Post-opening tokens per channel, in arrival order.
    pub histories: Vec<Vec<u32>>,
    /// Next round to play (the opening occupies round 0).
    pub round: usize,
    pub decision: Option<u32>,
    pub events: Vec<Event>,
}

impl GameState {
    /// Open the game on instance `x`: the common observation is posted to
    /// every channel at time zero.
    pub fn open(game: &GameSpec, x: usize) -> Result<Self> {
        let label = game.problem.membership_label(x)?;
        let events = (0..game.channels.len())
            .map(|c| Event {
                t: 0,
                channel: c,
                sender: None,
                message: x as u32,
            })
            .collect();
        Ok(Self {
            instance: x,
            label,
            histories: vec![Vec::new(); game.channels.len()],
            round: 1,
            decision: None,
            events,
        })
    }

    pub fn terminated(&self, game: &GameSpec) -> bool {
        self.decision.is_some() || self.round > game.max_rounds
    }

    /// Observation key for `agent` about to send in `target`.
    pub fn observation(&self, game: &GameSpec, agent: AgentId, target: ChannelId) -> ObsKey {
        observation_from(
            game,
            agent,
            target,
            self.instance,
            self.label,
            &self.histories,
        )
    }

    fn into_transcript(mut self, game: &GameSpec) -> Transcript {
        if self.decision.is_none() && self.round > game.max_rounds {
            // Round cap with no decision: forced reject, no synthetic event.
            self.decision = Some(0);
        }
        Transcript {
            events: self.events,
            decision: self.decision,
        }
    }
}

pub(crate) fn observation_from(
    game: &GameSpec,
    agent: AgentId,
    target: ChannelId,
    instance: usize,
    label: u8,
    histories: &[Vec<u32>],
) -> ObsKey {
    let spec = &game.agents[agent];
    let observed: Vec<(ChannelId, Vec<u32>)> = game
        .channels_of(agent)
        .into_iter()
        .map(|c| (c, histories[c].clone()))
        .collect();
    ObsKey {
        target,
        instance: spec.sees_instance.then_some(instance),
        label: spec.sees_label.then_some(label),
        histories: observed,
    }
}

/// The ordered sends of one round under one realisation of the mechanism:
/// `(channel, Some(agent))` for strategic sends, `(channel, None)` for a
/// uniform random token. Channels ascend; within a channel, agents ascend.
fn round_sends(
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

/// Advance the state by one round, sampling senders and messages.
///
/// Mixture strategies are resolved by a fresh component draw, so callers
/// stepping a full episode should prefer [`rollout`], which fixes mixture
/// components once per episode.
pub fn advance_state<R: rand::Rng>(
    game: &GameSpec,
    profile: &StrategyProfile,
    state: &mut GameState,
    rng: &mut R,
) -> Result<()> {
    if state.terminated(game) {
        return Err(PvgError::Protocol(
            "cannot advance a terminated state".into(),
        ));
    }
    let behavioural = profile.sample_behavioural(rng)?;
    advance_behavioural(game, &behavioural, state, rng)
}

pub(crate) fn advance_behavioural<R: rand::Rng>(
    game: &GameSpec,
    strategies: &[BehaviouralStrategy<'_>],
    state: &mut GameState,
    rng: &mut R,
) -> Result<()> {
    let t = state.round;
    let rules: Vec<(ChannelId, &SenderRule)> = (0..game.channels.len())
        .map(|c| (c, game.mechanism.rule_at(t, c)))
        .collect();
    let picks: Vec<usize> = rules
        .iter()
        .map(|(_, rule)| match rule {
            SenderRule::Choice(options) => {
                let u: f64 = rand::RngExt::random(rng);
                let mut acc = 0.0;
                for (i, (_, p)) in options.iter().enumerate() {
                    acc += p;
                    if u < acc {
                        return i;
                    }
                }
                options.len() - 1
            }
            _ => 0,
        })
        .collect();
    let snapshot = state.histories.clone();
    for (channel, sender) in round_sends(&rules, &picks) {
        match sender {
            Some(agent) => {
                let key =
                    observation_from(game, agent, channel, state.instance, state.label, &snapshot);
                let space = game.space(agent, channel)?;
                let dist = strategies[agent].distribution(&key.encode(), space.len())?;
                let pos = sample_index(&dist, rng);
                apply_send(game, state, t, channel, Some(agent), space[pos]);
            }
            None => {
                let alphabet = game.channels[channel].alphabet.len() as u32;
                let token = rand::RngExt::random_range(rng, 0..alphabet);
                apply_send(game, state, t, channel, None, token);
            }
        }
    }
    state.round += 1;
    Ok(())
}

fn sample_index<R: rand::Rng>(dist: &[f64], rng: &mut R) -> usize {
    let u: f64 = rand::RngExt::random(rng);
    let mut acc = 0.0;
    for (i, &p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    dist.len() - 1
}

pub(crate) fn apply_send(
    game: &GameSpec,
    state: &mut GameState,
    t: usize,
    channel: ChannelId,
    sender: Option<AgentId>,
    token: u32,
) {
    state.histories[channel].push(token);
    state.events.push(Event {
        t,
        channel,
        sender,
        message: token,
    });
    if sender == Some(game.decider) && channel == game.decision_channel {
        if let Some(pos) = game.decision_tokens.iter().position(|&d| d == token) {
            // Termination takes effect at the end of the round, so the other
            // simultaneous sends of the round stand.
            state.decision = Some(pos as u32);
        }
    }
}

/// Play one full game from the forced opening observation of `x`.
pub fn rollout<R: rand::Rng>(
    game: &GameSpec,
    profile: &StrategyProfile,
    x: usize,
    rng: &mut R,
) -> Result<Transcript> {
    let behavioural = profile.sample_behavioural(rng)?;
    let mut state = GameState::open(game, x)?;
    while !state.terminated(game) {
        advance_behavioural(game, &behavioural, &mut state, rng)?;
    }
    Ok(state.into_transcript(game))
}

/// Exact transcript distribution for the game opened on `x`.
///
/// Mixture strategies and prover correlation devices expand into their
/// behavioural components and the component distributions combine by weight.
/// Fails with a budget error when the branch count exceeds `budget`.
pub fn enumerate_transcript_distribution(
    game: &GameSpec,
    profile: &StrategyProfile,
    x: usize,
    budget: usize,
) -> Result<Vec<(Transcript, f64)>> {
    let mut merged: BTreeMap<Transcript, f64> = BTreeMap::new();
    let mut visited = 0usize;
    for (weight, strategies) in profile.expand()? {
        if weight == 0.0 {
            continue;
        }
        let state = GameState::open(game, x)?;
        let mut stack: Vec<(GameState, f64)> = vec![(state, 1.0)];
        while let Some((state, prob)) = stack.pop() {
            visited += 1;
            if visited > budget {
                return Err(PvgError::BudgetExceeded { visited, budget });
            }
            if state.terminated(game) {
                let transcript = state.into_transcript(game);
                *merged.entry(transcript).or_insert(0.0) += weight * prob;
                continue;
            }
            expand_round(
                game,
                &strategies,
                &state,
                prob,
                &mut stack,
                &mut visited,
                budget,
            )?;
        }
    }
    let mut out: Vec<(Transcript, f64)> = merged.into_iter().collect();
    out.retain(|(_, p)| *p > 0.0);
    Ok(out)
}

fn expand_round(
    game: &GameSpec,
    strategies: &[BehaviouralStrategy<'_>],
    state: &GameState,
    prob: f64,
    stack: &mut Vec<(GameState, f64)>,
    visited: &mut usize,
    budget: usize,
) -> Result<()> {
    let t = state.round;
    let rules: Vec<(ChannelId, &SenderRule)> = (0..game.channels.len())
        .map(|c| (c, game.mechanism.rule_at(t, c)))
        .collect();
    // Expand stochastic sender choices into weighted alternatives.
    let mut alternatives: Vec<(Vec<usize>, f64)> = vec![(vec![0; rules.len()], 1.0)];
    for (idx, (_, rule)) in rules.iter().enumerate() {
        if let SenderRule::Choice(options) = rule {
            let mut next = Vec::with_capacity(alternatives.len() * options.len());
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
        let sends = round_sends(&rules, &picks);
        // Every sender in the round observes the round-start histories.
        let snapshot = state.histories.clone();
        let mut partial: Vec<(GameState, f64)> = vec![(state.clone(), prob * mech_prob)];
        for (channel, sender) in sends {
            let mut next: Vec<(GameState, f64)> = Vec::new();
            for (st, p) in partial {
                *visited += 1;
                if *visited > budget {
                    return Err(PvgError::BudgetExceeded {
                        visited: *visited,
                        budget,
                    });
                }
                match sender {
                    Some(agent) => {
                        let key = observation_from(
                            game,
                            agent,
                            channel,
                            st.instance,
                            st.label,
                            &snapshot,
                        );
                        let space = game.space(agent, channel)?;
                        let dist = strategies[agent].distribution(&key.encode(), space.len())?;
                        for (pos, &mp) in dist.iter().enumerate() {
                            if mp == 0.0 {
                                continue;
                            }
                            let mut branch = st.clone();
                            apply_send(game, &mut branch, t, channel, Some(agent), space[pos]);
                            next.push((branch, p * mp));
                        }
                    }
                    None => {
                        let alphabet = game.channels[channel].alphabet.len();
                        let mp = 1.0 / alphabet as f64;
                        for token in 0..alphabet as u32 {
                            let mut branch = st.clone();
                            apply_send(game, &mut branch, t, channel, None, token);
                            next.push((branch, p * mp));
                        }
                    }
                }
            }
            partial = next;
        }
        for (mut st, p) in partial {
            st.round += 1;
            stack.push((st, p));
        }
    }
    Ok(())
}

/// Every observation key reachable for `agent` within the game horizon,
/// mapped to the size of the message space it selects from.
pub fn reachable_keys(
    game: &GameSpec,
    agent: AgentId,
    budget: usize,
) -> Result<BTreeMap<String, usize>> {
    let mut keys = BTreeMap::new();
    let mut visited = 0usize;
    for x in 0..game.problem.len() {
        let state = GameState::open(game, x)?;
        let mut stack = vec![state];
        while let Some(state) = stack.pop() {
            visited += 1;
            if visited > budget {
                return Err(PvgError::BudgetExceeded { visited, budget });
            }
            if state.terminated(game) {
                continue;
            }
            let t = state.round;
            let rules: Vec<(ChannelId, &SenderRule)> = (0..game.channels.len())
                .map(|c| (c, game.mechanism.rule_at(t, c)))
                .collect();
            // Union over every sender-set alternative.
            let mut alternatives: Vec<Vec<usize>> = vec![vec![0; rules.len()]];
            for (idx, (_, rule)) in rules.iter().enumerate() {
                if let SenderRule::Choice(options) = rule {
                    let mut next = Vec::new();
                    for picks in &alternatives {
                        for i in 0..options.len() {
                            let mut picks = picks.clone();
                            picks[idx] = i;
                            next.push(picks);
                        }
                    }
                    alternatives = next;
                }
            }
            for picks in alternatives {
                let sends = round_sends(&rules, &picks);
                let snapshot = state.histories.clone();
                let mut partial: Vec<GameState> = vec![state.clone()];
                for (channel, sender) in &sends {
                    let mut next: Vec<GameState> = Vec::new();
                    for st in partial {
                        visited += 1;
                        if visited > budget {
                            return Err(PvgError::BudgetExceeded { visited, budget });
                        }
                        match sender {
                            Some(a) => {
                                if *a == agent {
                                    let key = observation_from(
                                        game,
                                        agent,
                                        *channel,
                                        st.instance,
                                        st.label,
                                        &snapshot,
                                    );
                                    let space = game.space(agent, *channel)?;
                                    keys.insert(key.encode(), space.len());
                                }
                                let space = game.space(*a, *channel)?;
                                for &token in space {
                                    let mut branch = st.clone();
                                    apply_send(game, &mut branch, t, *channel, Some(*a), token);
                                    next.push(branch);
                                }
                            }
                            None => {
                                let alphabet = game.channels[*channel].alphabet.len() as u32;
                                for token in 0..alphabet {
                                    let mut branch = st.clone();
                                    apply_send(game, &mut branch, t, *channel, None, token);
                                    next.push(branch);
                                }
                            }
                        }
                    }
                    partial = next;
                }
                for mut st in partial {
                    st.round += 1;
                    stack.push(st);
                }
            }
        }
    }
    Ok(keys)
}

// ---------------------------------------------------------------------------
// Well-formedness conditions for prover-verifier games.
// ---------------------------------------------------------------------------

/// Outcome of one well-formedness condition.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConditionCheck {
    pub holds: bool,
    pub detail: String,
}

/// Report over the four conditions: the deciding verifier's loss orders like
/// accuracy, the verifiers cannot solve the problem alone, any prover could
/// solve it alone, and the objectives are not fully aligned.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PvgConditionReport {
    pub objective_tracks_accuracy: ConditionCheck,
    pub verifier_weak_alone: ConditionCheck,
    pub prover_strong_alone: ConditionCheck,
    pub objectives_misaligned: ConditionCheck,
}

/// Check the four conditions against finite per-agent strategy sets.
///
/// Condition 1 compares verifier-loss order with expected-correctness order
/// over sampled profile pairs; condition 2 minimises the verifier loss with
/// all non-verifiers uniform and compares against the best loss over the
/// sets with margin `weakness_margin`; condition 3 searches the
/// counterfactual in which a prover's message, read through any map to
/// {reject, accept}, decides directly; condition 4 looks for a profile pair
/// moving the two objectives in opposite directions.
pub fn check_pvg_conditions(
    game: &GameSpec,
    strategy_sets: &[Vec<crate::strategy::Strategy>],
    samples: usize,
    weakness_margin: f64,
    seed: u64,
) -> Result<PvgConditionReport> {
    use crate::losses::{agent_expected_loss, instance_loss, EvalOptions};
    use crate::strategy::{uniform_strategy, Strategy, StrategyProfile};
    use rand::{RngExt, SeedableRng};

    if strategy_sets.len() != game.agent_count() || strategy_sets.iter().any(|s| s.is_empty()) {
        return Err(PvgError::Domain(
            "one non-empty strategy set per agent required".into(),
        ));
    }
    let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(seed);
    let random_profile = |rng: &mut rand_chacha::ChaCha12Rng| {
        let strategies = strategy_sets
            .iter()
            .map(|set| set[rng.random_range(0..set.len())].clone())
            .collect();
        StrategyProfile::new(strategies)
    };

    let accuracy = |profile: &StrategyProfile| -> Result<f64> {
        let mut acc = 0.0;
        for x in 0..game.problem.len() {
            acc += game.problem.prior(x)
                * (1.0 - instance_loss(game, profile, x, &EvalOptions::exact_only())?.value);
        }
        Ok(acc)
    };

    // Condition 1: loss order against accuracy order on sampled pairs.
    let mut order_witness = None;
    for _ in 0..samples {
        let p1 = random_profile(&mut rng);
        let p2 = random_profile(&mut rng);
        let l1 = agent_expected_loss(game, &p1, game.decider)?;
        let l2 = agent_expected_loss(game, &p2, game.decider)?;
        let a1 = accuracy(&p1)?;
        let a2 = accuracy(&p2)?;
        if (l1 - l2).abs() > 1e-9 && (a1 - a2).abs() > 1e-9 && ((l1 < l2) != (a1 > a2)) {
            order_witness = Some(format!(
                "losses ({l1:.4}, {l2:.4}) against accuracies ({a1:.4}, {a2:.4})"
            ));
            break;
        }
    }

    // Best verifier loss over the whole sampled product.
    let mut best_loss = f64::INFINITY;
    for _ in 0..samples {
        let profile = random_profile(&mut rng);
        best_loss = best_loss.min(agent_expected_loss(game, &profile, game.decider)?);
    }

    // Condition 2: verifiers with every non-verifier playing uniformly.
    let mut uniform_others = Vec::with_capacity(game.agent_count());
    for agent in 0..game.agent_count() {
        uniform_others.push(Strategy::Tabular(uniform_strategy(game, agent)?));
    }
    let verifier_agents = game.agents_with_role(Role::Verifier);
    let mut best_alone = f64::INFINITY;
    for &v in &verifier_agents {
        for candidate in &strategy_sets[v] {
            let mut profile = StrategyProfile::new(uniform_others.clone());
            profile.strategies[v] = candidate.clone();
            best_alone = best_alone.min(agent_expected_loss(game, &profile, game.decider)?);
        }
    }
    let verifier_weak = best_alone - best_loss > weakness_margin;

    // Condition 3: a prover message, read through some map into
    // {reject, accept}, decides the problem as well as the best profile.
    let provers = game.agents_with_role(Role::Prover);
    let mut prover_strong = false;
    let mut strong_detail = String::from("no prover/readout pair reaches the best loss");
    'outer: for &p in &provers {
        let channels = game.channels_of(p);
        let Some(&channel) = channels.first() else {
            continue;
        };
        let space = game.space(p, channel)?.len();
        for candidate in &strategy_sets[p] {
            // Enumerate readout maps from the prover's message space.
            for readout_bits in 0..(1u32 << space) {
                let mut worst_pos: f64 = 0.0;
                let mut worst_neg: f64 = 0.0;
                let mut ok = true;
                for x in 0..game.problem.len() {
                    let key = ObsKey {
                        target: channel,
                        instance: game.agents[p].sees_instance.then_some(x),
                        label: game.agents[p].sees_label.then(|| game.problem.label(x)),
                        histories: channels.iter().map(|&c| (c, Vec::new())).collect(),
                    };
                    let dist = match candidate.message_distribution(&key.encode(), space) {
                        Ok(d) => d,
                        Err(_) => {
                            ok = false;
                            break;
                        }
                    };
                    let accept: f64 = dist
                        .iter()
                        .enumerate()
                        .filter(|(m, _)| readout_bits >> m & 1 == 1)
                        .map(|(_, p)| p)
                        .sum();
                    if game.problem.label(x) == 1 {
                        worst_pos = worst_pos.max(1.0 - accept);
                    } else {
                        worst_neg = worst_neg.max(accept);
                    }
                }
                if ok && worst_pos + worst_neg <= best_loss.max(0.0) + 1e-9 {
                    prover_strong = true;
                    strong_detail =
                        format!("prover {p} solves the problem through readout {readout_bits:b}");
                    break 'outer;
                }
            }
        }
    }

    // Condition 4: a pair of profiles moving the objectives oppositely.
    let mut misaligned = false;
    let mut misaligned_detail = String::from("no opposed movement found");
    if let Some(&p) = provers.first() {
        for _ in 0..samples {
            let s1 = random_profile(&mut rng);
            let s2 = random_profile(&mut rng);
            let v1 = agent_expected_loss(game, &s1, game.decider)?;
            let v2 = agent_expected_loss(game, &s2, game.decider)?;
            let p1 = agent_expected_loss(game, &s1, p)?;
            let p2 = agent_expected_loss(game, &s2, p)?;
            if v1 > v2 + 1e-9 && p1 <= p2 {
                misaligned = true;
                misaligned_detail =
                    format!("verifier loss {v1:.4} > {v2:.4} while prover {p1:.4} <= {p2:.4}");
                break;
            }
        }
    } else {
        misaligned_detail = String::from("game has no prover");
    }

    Ok(PvgConditionReport {
        objective_tracks_accuracy: ConditionCheck {
            holds: order_witness.is_none(),
            detail: order_witness.unwrap_or_else(|| "no counterexample sampled".into()),
        },
        verifier_weak_alone: ConditionCheck {
            holds: verifier_weak,
            detail: format!("alone {best_alone:.4} vs best {best_loss:.4}"),
        },
        prover_strong_alone: ConditionCheck {
            holds: prover_strong,
            detail: strong_detail,
        },
        objectives_misaligned: ConditionCheck {
            holds: misaligned,
            detail: misaligned_detail,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::DecisionProblem;
    use crate::protocols::{build_mnip, constant_verifier};
    use crate::strategy::{uniform_strategy, Strategy, StrategyProfile};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn two_point_problem() -> DecisionProblem {
        DecisionProblem::new(vec!["neg".into(), "pos".into()], vec![0, 1], vec![0.5, 0.5]).unwrap()
    }

    #[test]
    fn the_opening_posts_the_same_instance_to_every_channel() {
        let game = build_mnip(two_point_problem(), 1, 2).unwrap();
        let state = GameState::open(&game, 1).unwrap();
        assert_eq!(state.events.len(), game.channels.len());
        for (c, event) in state.events.iter().enumerate() {
            assert_eq!(event.t, 0);
            assert_eq!(event.channel, c);
            assert_eq!(event.sender, None);
            assert_eq!(event.message, 1);
        }
    }

    #[test]
    fn advancing_a_terminated_state_errors() {
        let game = build_mnip(two_point_problem(), 1, 2).unwrap();
        let profile = StrategyProfile::new(vec![
            Strategy::Tabular(uniform_strategy(&game, 0).unwrap()),
            Strategy::Tabular(uniform_strategy(&game, 1).unwrap()),
            Strategy::Tabular(constant_verifier(&game, 1).unwrap()),
        ]);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let mut state = GameState::open(&game, 0).unwrap();
        while !state.terminated(&game) {
            advance_state(&game, &profile, &mut state, &mut rng).unwrap();
        }
        assert!(advance_state(&game, &profile, &mut state, &mut rng).is_err());
    }

    #[test]
    fn decision_of_requires_termination() {
        let undecided = Transcript {
            events: Vec::new(),
            decision: None,
        };
        assert!(decision_of(&undecided).is_err());
        let decided = Transcript {
            events: Vec::new(),
            decision: Some(1),
        };
        assert_eq!(decision_of(&decided).unwrap(), 1);
    }

    #[test]
    fn transcript_wire_format_is_stable() {
        let transcript = Transcript {
            events: vec![
                Event {
                    t: 0,
                    channel: 0,
                    sender: None,
                    message: 1,
                },
                Event {
                    t: 1,
                    channel: 0,
                    sender: Some(0),
                    message: 3,
                },
            ],
            decision: Some(1),
        };
        let json = serde_json::to_string(&transcript).unwrap();
        assert_eq!(
            json,
            r#"{"events":[{"t":0,"channel":0,"sender":null,"message":1},{"t":1,"channel":0,"sender":0,"message":3}],"decision":1}"#
        );
    }

    #[test]
    fn cyclic_mechanisms_repeat_their_tail() {
        let mechanism = Mechanism {
            rounds: vec![
                vec![SenderRule::Agents(vec![0])],
                vec![SenderRule::Agents(vec![1])],
            ],
            cycle_from: Some(0),
        };
        assert_eq!(mechanism.rule_at(1, 0), &SenderRule::Agents(vec![0]));
        assert_eq!(mechanism.rule_at(2, 0), &SenderRule::Agents(vec![1]));
        assert_eq!(mechanism.rule_at(3, 0), &SenderRule::Agents(vec![0]));
        assert_eq!(mechanism.rule_at(4, 0), &SenderRule::Agents(vec![1]));
    }
}

#[cfg(test)]
mod cap_tests {
    use super::*;
    use crate::problem::DecisionProblem;
    use crate::protocols::build_nip;
    use crate::strategy::{uniform_strategy, Strategy, StrategyProfile, TabularStrategy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn reaching_the_round_cap_forces_a_reject() {
        let problem =
            DecisionProblem::new(vec!["neg".into(), "pos".into()], vec![0, 1], vec![0.5, 0.5])
                .unwrap();
        let game = build_nip(problem, 2, 2).unwrap();
        // A verifier that always plays the continue token never decides.
        let keys = reachable_keys(&game, 1, 1_000_000).unwrap();
        let rows = keys
            .into_iter()
            .map(|(key, size)| (key, TabularStrategy::deterministic_row(size, size - 1)))
            .collect();
        let stall = TabularStrategy::new(rows).unwrap();
        let profile = StrategyProfile::new(vec![
            Strategy::Tabular(uniform_strategy(&game, 0).unwrap()),
            Strategy::Tabular(stall),
        ]);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let tr = rollout(&game, &profile, 1, &mut rng).unwrap();
        assert_eq!(decision_of(&tr).unwrap(), 0);
        // No decision event was ever sent.
        assert!(tr.events.iter().all(|e| {
            e.sender != Some(game.decider) || !game.decision_tokens.contains(&e.message)
        }));
        let dist = enumerate_transcript_distribution(&game, &profile, 1, 100_000).unwrap();
        assert!(dist.iter().all(|(t, _)| t.decision == Some(0)));
    }
}
