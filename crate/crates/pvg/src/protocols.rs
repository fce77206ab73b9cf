//! Game builders for the supported interaction protocols.
//!
//! Each builder wires agents, channels, message spaces, the mechanism and the
//! per-agent loss functionals, then validates the result. Protocols are
//! selected by name (`adp`, `nip`, `mnip`, `debate`, `mac`, `zk-nip`); the
//! zero-knowledge multi-prover variant is the composition of the multi-prover
//! builder with the zero-knowledge wrapper and has no bespoke builder.

use std::collections::BTreeMap;

use crate::game::{
    AgentSpec, ChannelSpec, DecisionRule, GameSpec, Mechanism, Role, SenderRule, ZkLayout,
};
use crate::losses::{LossKind, ZkProverMode};
use crate::problem::{make_parity_problem, DecisionProblem, ParityFixture};
use crate::strategy::{MixtureStrategy, ObsKey, Strategy, TabularStrategy};
use crate::{PvgError, Result};

fn message_tokens(count: usize) -> Vec<String> {
    (0..count).map(|i| format!("m{i}")).collect()
}

/// One prover sends a single message, the verifier answers with a decision.
///
/// The prover's strategy set is conventionally deterministic maps from the
/// instance to a message; the verifier mixes over deterministic accept
/// tables. Losses are the negative expected log acceptance probability for
/// the prover and the negative expected log probability of the correct
/// decision for the verifier.
pub fn build_adp(problem: DecisionProblem, prover_alphabet: usize) -> Result<GameSpec> {
    if prover_alphabet == 0 {
        return Err(PvgError::Domain("prover alphabet must be non-empty".into()));
    }
    let mut alphabet = message_tokens(prover_alphabet);
    alphabet.push("0".into());
    alphabet.push("1".into());
    let reject = prover_alphabet as u32;
    let accept = prover_alphabet as u32 + 1;

    let mut message_spaces = BTreeMap::new();
    message_spaces.insert(
        (0usize, 0usize),
        (0..prover_alphabet as u32).collect::<Vec<_>>(),
    );
    message_spaces.insert((1usize, 0usize), vec![reject, accept]);

    let game = GameSpec {
        name: "adp".into(),
        problem,
        agents: vec![
            AgentSpec {
                name: "prover".into(),
                role: Role::Prover,
                sees_instance: true,
                sees_label: false,
            },
            AgentSpec {
                name: "verifier".into(),
                role: Role::Verifier,
                sees_instance: true,
                sees_label: false,
            },
        ],
        channels: vec![ChannelSpec {
            name: "main".into(),
            members: vec![0, 1],
            alphabet,
        }],
        mechanism: Mechanism {
            rounds: vec![
                vec![SenderRule::Agents(vec![0])],
                vec![SenderRule::Agents(vec![1])],
            ],
            cycle_from: None,
        },
        message_spaces,
        decision_channel: 0,
        decider: 1,
        decision_tokens: vec![reject, accept],
        decision_rule: DecisionRule::MatchLabel,
        max_rounds: 2,
        losses: vec![LossKind::AdpProver, LossKind::AdpVerifier],
        zk: None,
        adversary: None,
    };
    game.validate()?;
    Ok(game)
}

/// Alternating prover/verifier exchange on a single channel; the verifier's
/// loss is the sum of the worst-case losses on the two label classes and the
/// prover's their difference.
pub fn build_nip(
    problem: DecisionProblem,
    rounds: usize,
    prover_alphabet: usize,
) -> Result<GameSpec> {
    if rounds < 1 {
        return Err(PvgError::Domain("rounds must be at least 1".into()));
    }
    let mut alphabet = message_tokens(prover_alphabet);
    let reject = alphabet.len() as u32;
    alphabet.push("0".into());
    let accept = alphabet.len() as u32;
    alphabet.push("1".into());
    let mut verifier_space = vec![reject, accept];
    if rounds > 1 {
        alphabet.push("go".into());
        verifier_space.push(accept + 1);
    }

    let mut message_spaces = BTreeMap::new();
    message_spaces.insert(
        (0usize, 0usize),
        (0..prover_alphabet as u32).collect::<Vec<_>>(),
    );
    message_spaces.insert((1usize, 0usize), verifier_space);

    let mut mech_rounds = Vec::new();
    for _ in 0..rounds {
        mech_rounds.push(vec![SenderRule::Agents(vec![0])]);
        mech_rounds.push(vec![SenderRule::Agents(vec![1])]);
    }

    let game = GameSpec {
        name: "nip".into(),
        problem,
        agents: vec![
            AgentSpec {
                name: "prover".into(),
                role: Role::Prover,
                sees_instance: true,
                sees_label: false,
            },
            AgentSpec {
                name: "verifier".into(),
                role: Role::Verifier,
                sees_instance: true,
                sees_label: false,
            },
        ],
        channels: vec![ChannelSpec {
            name: "main".into(),
            members: vec![0, 1],
            alphabet,
        }],
        mechanism: Mechanism {
            rounds: mech_rounds,
            cycle_from: None,
        },
        message_spaces,
        decision_channel: 0,
        decider: 1,
        decision_tokens: vec![reject, accept],
        decision_rule: DecisionRule::MatchLabel,
        max_rounds: 2 * rounds,
        losses: vec![LossKind::NipProver, LossKind::NipVerifier],
        zk: None,
        adversary: None,
    };
    game.validate()?;
    Ok(game)
}

/// Two provers on separate channels to the same verifier, each with the
/// shared prover loss. The provers never observe each other's channel; a
/// correlation device on the profile supplies their shared randomness.
pub fn build_mnip(
    problem: DecisionProblem,
    rounds: usize,
    prover_alphabet: usize,
) -> Result<GameSpec> {
    if rounds < 1 {
        return Err(PvgError::Domain("rounds must be at least 1".into()));
    }
    let mut main_alphabet = message_tokens(prover_alphabet);
    let reject = main_alphabet.len() as u32;
    main_alphabet.push("0".into());
    let accept = main_alphabet.len() as u32;
    main_alphabet.push("1".into());
    let mut verifier_main_space = vec![reject, accept];
    if rounds > 1 {
        main_alphabet.push("go".into());
        verifier_main_space.push(accept + 1);
    }
    let mut side_alphabet = message_tokens(prover_alphabet);
    let side_reply = side_alphabet.len() as u32;
    if rounds > 1 {
        side_alphabet.push("go".into());
    }

    let mut message_spaces = BTreeMap::new();
    message_spaces.insert(
        (0usize, 0usize),
        (0..prover_alphabet as u32).collect::<Vec<_>>(),
    );
    message_spaces.insert(
        (1usize, 1usize),
        (0..prover_alphabet as u32).collect::<Vec<_>>(),
    );
    message_spaces.insert((2usize, 0usize), verifier_main_space);
    if rounds > 1 {
        message_spaces.insert((2usize, 1usize), vec![side_reply]);
    }

    let mut mech_rounds = Vec::new();
    for j in 0..rounds {
        mech_rounds.push(vec![
            SenderRule::Agents(vec![0]),
            SenderRule::Agents(vec![1]),
        ]);
        let side_rule = if j + 1 < rounds {
            SenderRule::Agents(vec![2])
        } else {
            SenderRule::Silent
        };
        mech_rounds.push(vec![SenderRule::Agents(vec![2]), side_rule]);
    }

    let game = GameSpec {
        name: "mnip".into(),
        problem,
        agents: vec![
            AgentSpec {
                name: "prover1".into(),
                role: Role::Prover,
                sees_instance: true,
                sees_label: false,
            },
            AgentSpec {
                name: "prover2".into(),
                role: Role::Prover,
                sees_instance: true,
                sees_label: false,
            },
            AgentSpec {
                name: "verifier".into(),
                role: Role::Verifier,
                sees_instance: true,
                sees_label: false,
            },
        ],
        channels: vec![
            ChannelSpec {
                name: "first".into(),
                members: vec![0, 2],
                alphabet: main_alphabet,
            },
            ChannelSpec {
                name: "second".into(),
                members: vec![1, 2],
                alphabet: side_alphabet,
            },
        ],
        mechanism: Mechanism {
            rounds: mech_rounds,
            cycle_from: None,
        },
        message_spaces,
        decision_channel: 0,
        decider: 2,
        decision_tokens: vec![reject, accept],
        decision_rule: DecisionRule::MatchLabel,
        max_rounds: 2 * rounds,
        losses: vec![
            LossKind::NipProver,
            LossKind::NipProver,
            LossKind::NipVerifier,
        ],
        zk: None,
        adversary: None,
    };
    game.validate()?;
    Ok(game)
}

/// Two provers argue in a shared channel, cycling prover 1, prover 2,
/// verifier; each prover's first message declares its answer and the
/// verifier's verdict names the prover whose answer it accepts (0 abstains,
/// which rewards nobody and counts as a miss).
pub fn build_debate(problem: DecisionProblem, rounds: usize) -> Result<GameSpec> {
    if rounds < 1 {
        return Err(PvgError::Domain("rounds must be at least 1".into()));
    }
    // Answer tokens come first so a declared answer equals its label value.
    let mut alphabet = vec!["0".to_string(), "1".to_string()];
    let undecided = alphabet.len() as u32;
    alphabet.push("u".into());
    let win1 = alphabet.len() as u32;
    alphabet.push("w1".into());
    let win2 = alphabet.len() as u32;
    alphabet.push("w2".into());
    let mut verifier_space = vec![undecided, win1, win2];
    if rounds > 1 {
        alphabet.push("go".into());
        verifier_space.push(win2 + 1);
    }

    let mut message_spaces = BTreeMap::new();
    message_spaces.insert((0usize, 0usize), vec![0u32, 1]);
    message_spaces.insert((1usize, 0usize), vec![0u32, 1]);
    message_spaces.insert((2usize, 0usize), verifier_space);

    let mut mech_rounds = Vec::new();
    for _ in 0..rounds {
        mech_rounds.push(vec![SenderRule::Agents(vec![0])]);
        mech_rounds.push(vec![SenderRule::Agents(vec![1])]);
        mech_rounds.push(vec![SenderRule::Agents(vec![2])]);
    }

    let game = GameSpec {
        name: "debate".into(),
        problem,
        agents: vec![
            AgentSpec {
                name: "prover1".into(),
                role: Role::Prover,
                sees_instance: true,
                sees_label: false,
            },
            AgentSpec {
                name: "prover2".into(),
                role: Role::Prover,
                sees_instance: true,
                sees_label: false,
            },
            AgentSpec {
                name: "verifier".into(),
                role: Role::Verifier,
                sees_instance: true,
                sees_label: false,
            },
        ],
        channels: vec![ChannelSpec {
            name: "floor".into(),
            members: vec![0, 1, 2],
            alphabet,
        }],
        mechanism: Mechanism {
            rounds: mech_rounds,
            cycle_from: None,
        },
        message_spaces,
        decision_channel: 0,
        decider: 2,
        decision_tokens: vec![undecided, win1, win2],
        decision_rule: DecisionRule::DebateAnswer,
        max_rounds: 3 * rounds,
        losses: vec![
            LossKind::DebateProver { index: 1 },
            LossKind::DebateProver { index: 2 },
            LossKind::DebateVerifier,
        ],
        zk: None,
        adversary: None,
    };
    game.validate()?;
    Ok(game)
}

/// Nature picks one of two provers to emit a feature; the verifier, unable
/// to tell which prover moved, outputs a class or abstains.
pub fn build_mac(problem: DecisionProblem, feature_count: usize, gamma: f64) -> Result<GameSpec> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(PvgError::Domain(format!(
            "gamma must lie in [0,1], got {gamma}"
        )));
    }
    if feature_count == 0 {
        return Err(PvgError::Domain("feature space must be non-empty".into()));
    }
    let mut alphabet: Vec<String> = (0..feature_count).map(|i| format!("f{i}")).collect();
    let not_sure = alphabet.len() as u32;
    alphabet.push("u".into());
    let class1 = alphabet.len() as u32;
    alphabet.push("k1".into());
    let class2 = alphabet.len() as u32;
    alphabet.push("k2".into());

    let features: Vec<u32> = (0..feature_count as u32).collect();
    let mut message_spaces = BTreeMap::new();
    message_spaces.insert((0usize, 0usize), features.clone());
    message_spaces.insert((1usize, 0usize), features);
    message_spaces.insert((2usize, 0usize), vec![not_sure, class1, class2]);

    let game = GameSpec {
        name: "mac".into(),
        problem,
        agents: vec![
            AgentSpec {
                name: "helpful".into(),
                role: Role::Prover,
                sees_instance: true,
                sees_label: false,
            },
            AgentSpec {
                name: "unhelpful".into(),
                role: Role::Prover,
                sees_instance: true,
                sees_label: false,
            },
            AgentSpec {
                name: "verifier".into(),
                role: Role::Verifier,
                sees_instance: true,
                sees_label: false,
            },
        ],
        channels: vec![ChannelSpec {
            name: "floor".into(),
            members: vec![0, 1, 2],
            alphabet,
        }],
        mechanism: Mechanism {
            rounds: vec![
                vec![SenderRule::Choice(vec![(vec![0], 0.5), (vec![1], 0.5)])],
                vec![SenderRule::Agents(vec![2])],
            ],
            cycle_from: None,
        },
        message_spaces,
        decision_channel: 0,
        decider: 2,
        decision_tokens: vec![not_sure, class1, class2],
        decision_rule: DecisionRule::MacClass,
        max_rounds: 2,
        losses: vec![
            LossKind::MacHelpfulProver,
            LossKind::MacUnhelpfulProver,
            LossKind::MacVerifier { gamma },
        ],
        zk: None,
        adversary: None,
    };
    game.validate()?;
    Ok(game)
}

/// Zero-knowledge wrapper around the alternating protocol: the honest
/// subgame runs on its own channel while a dishonest verifier probes the
/// prover on a second channel and a simulator, seeing only the instance and
/// label, writes an imitation of that second channel. The prover, dishonest
/// verifier and simulator all observe the label.
pub fn build_zk_nip(
    problem: DecisionProblem,
    rounds: usize,
    prover_alphabet: usize,
    zk_coefficient: f64,
    mode: ZkProverMode,
) -> Result<GameSpec> {
    if rounds < 1 {
        return Err(PvgError::Domain("rounds must be at least 1".into()));
    }
    if zk_coefficient < 0.0 {
        return Err(PvgError::Domain(
            "zk coefficient must be non-negative".into(),
        ));
    }
    // Honest channel: prover tokens then verdict tokens.
    let mut honest_alphabet = message_tokens(prover_alphabet);
    let reject = honest_alphabet.len() as u32;
    honest_alphabet.push("0".into());
    let accept = honest_alphabet.len() as u32;
    honest_alphabet.push("1".into());
    let mut v1_space = vec![reject, accept];
    if rounds > 1 {
        honest_alphabet.push("go".into());
        v1_space.push(accept + 1);
    }
    // Probe channel: prover tokens then dishonest-verifier reply tokens.
    let mut probe_alphabet = message_tokens(prover_alphabet);
    let reply0 = probe_alphabet.len() as u32;
    probe_alphabet.push("r0".into());
    let reply1 = probe_alphabet.len() as u32;
    probe_alphabet.push("r1".into());
    // The simulator channel shares the probe alphabet so sequences compare.
    let sim_alphabet = probe_alphabet.clone();
    let sim_space: Vec<u32> = (0..sim_alphabet.len() as u32).collect();

    let mut message_spaces = BTreeMap::new();
    message_spaces.insert(
        (0usize, 0usize),
        (0..prover_alphabet as u32).collect::<Vec<_>>(),
    );
    message_spaces.insert(
        (0usize, 1usize),
        (0..prover_alphabet as u32).collect::<Vec<_>>(),
    );
    message_spaces.insert((1usize, 0usize), v1_space);
    message_spaces.insert((2usize, 1usize), vec![reply0, reply1]);
    message_spaces.insert((3usize, 2usize), sim_space);

    let mut mech_rounds = Vec::new();
    for _ in 0..rounds {
        mech_rounds.push(vec![
            SenderRule::Agents(vec![0]),
            SenderRule::Agents(vec![0]),
            SenderRule::Agents(vec![3]),
        ]);
        mech_rounds.push(vec![
            SenderRule::Silent,
            SenderRule::Agents(vec![2]),
            SenderRule::Agents(vec![3]),
        ]);
        mech_rounds.push(vec![
            SenderRule::Agents(vec![1]),
            SenderRule::Silent,
            SenderRule::Silent,
        ]);
    }

    let game = GameSpec {
        name: "zk-nip".into(),
        problem,
        agents: vec![
            AgentSpec {
                name: "prover".into(),
                role: Role::Prover,
                sees_instance: true,
                sees_label: true,
            },
            AgentSpec {
                name: "verifier".into(),
                role: Role::Verifier,
                sees_instance: true,
                sees_label: false,
            },
            AgentSpec {
                name: "probe".into(),
                role: Role::Verifier,
                sees_instance: true,
                sees_label: true,
            },
            AgentSpec {
                name: "simulator".into(),
                role: Role::Simulator,
                sees_instance: true,
                sees_label: true,
            },
        ],
        channels: vec![
            ChannelSpec {
                name: "honest".into(),
                members: vec![0, 1],
                alphabet: honest_alphabet,
            },
            ChannelSpec {
                name: "probe".into(),
                members: vec![0, 2],
                alphabet: probe_alphabet,
            },
            ChannelSpec {
                name: "sim".into(),
                members: vec![3],
                alphabet: sim_alphabet,
            },
        ],
        mechanism: Mechanism {
            rounds: mech_rounds,
            cycle_from: None,
        },
        message_spaces,
        decision_channel: 0,
        decider: 1,
        decision_tokens: vec![reject, accept],
        decision_rule: DecisionRule::MatchLabel,
        max_rounds: 3 * rounds,
        losses: vec![
            LossKind::ZkProver {
                coefficient: zk_coefficient,
                mode,
            },
            LossKind::NipVerifier,
            LossKind::ZkDishonestVerifier,
            LossKind::ZkSimulator,
        ],
        zk: Some(ZkLayout {
            prover: 0,
            honest_verifier: 1,
            dishonest_verifier: 2,
            simulator: 3,
            watched_channel: 1,
            simulator_channel: 2,
            all_instances: true,
        }),
        adversary: None,
    };
    game.validate()?;
    Ok(game)
}

/// Build a protocol by its registry name.
pub fn build_by_name(
    name: &str,
    problem: DecisionProblem,
    rounds: usize,
    alphabet: usize,
    gamma: f64,
    zk_coefficient: f64,
) -> Result<GameSpec> {
    match name {
        "adp" => build_adp(problem, alphabet),
        "nip" => build_nip(problem, rounds, alphabet),
        "mnip" => build_mnip(problem, rounds, alphabet),
        "debate" => build_debate(problem, rounds),
        "mac" => build_mac(problem, alphabet, gamma),
        "zk-nip" => build_zk_nip(
            problem,
            rounds,
            alphabet,
            zk_coefficient,
            ZkProverMode::Weighted,
        ),
        other => Err(PvgError::Config(format!(
            "unknown protocol `{other}` (expected adp|nip|mnip|debate|mac|zk-nip)"
        ))),
    }
}

// ---------------------------------------------------------------------------
// Reference strategies for the four-instance parity game.
// ---------------------------------------------------------------------------

/// The parity game plus its three deterministic prover maps and three
/// deterministic verifier accept tables as ready-made strategies.
#[derive(Debug, Clone)]
pub struct ParityGame {
    pub game: GameSpec,
    pub provers: Vec<Strategy>,
    pub verifier_tables: Vec<TabularStrategy>,
}

impl ParityGame {
    /// Verifier mixture over the three accept tables.
    pub fn verifier_mixture(&self, weights: [f64; 3]) -> Result<Strategy> {
        Ok(Strategy::Mixture(MixtureStrategy::new(
            weights.to_vec(),
            self.verifier_tables.clone(),
        )?))
    }

    /// The reference verifier mixture (5/8, 3/8, 0).
    pub fn reference_verifier(&self) -> Result<Strategy> {
        self.verifier_mixture([5.0 / 8.0, 3.0 / 8.0, 0.0])
    }
}

/// Build the one-shot parity game at prior parameter `a` with the fixture
/// strategies attached.
pub fn parity_adp_game(a: f64) -> Result<ParityGame> {
    let ParityFixture {
        problem,
        prover_maps,
        verifier_accept,
    } = make_parity_problem(a)?;
    let game = build_adp(problem, 4)?;
    let provers = prover_maps
        .iter()
        .map(|map| Strategy::Tabular(parity_prover_strategy(map)))
        .collect();
    let verifier_tables = verifier_accept
        .iter()
        .map(parity_verifier_strategy)
        .collect();
    Ok(ParityGame {
        game,
        provers,
        verifier_tables,
    })
}

fn parity_prover_strategy(map: &[u32; 4]) -> TabularStrategy {
    let mut rows = BTreeMap::new();
    for (x, &m) in map.iter().enumerate() {
        let key = ObsKey {
            target: 0,
            instance: Some(x),
            label: None,
            histories: vec![(0, Vec::new())],
        };
        rows.insert(
            key.encode(),
            TabularStrategy::deterministic_row(4, m as usize),
        );
    }
    TabularStrategy { rows }
}

fn parity_verifier_strategy(accept: &[u8; 4]) -> TabularStrategy {
    let mut rows = BTreeMap::new();
    for x in 0..4usize {
        for m in 0..4u32 {
            let key = ObsKey {
                target: 0,
                instance: Some(x),
                label: None,
                histories: vec![(0, vec![m])],
            };
            rows.insert(
                key.encode(),
                TabularStrategy::deterministic_row(2, accept[m as usize] as usize),
            );
        }
    }
    TabularStrategy { rows }
}

/// Verifier tabular strategy that always outputs the true label; available
/// whenever the verifier observes the instance.
pub fn oracle_verifier(game: &GameSpec) -> Result<TabularStrategy> {
    let keys = crate::game::reachable_keys(game, game.decider, crate::game::DEFAULT_BRANCH_BUDGET)?;
    let space = game.space(game.decider, game.decision_channel)?.to_vec();
    let mut rows = BTreeMap::new();
    for (key, size) in keys {
        // Keys carry the instance as `|x<idx>|`; output its label.
        let x = parse_instance(&key).ok_or_else(|| {
            PvgError::Protocol("oracle verifier needs instance-visible keys".into())
        })?;
        let y = game.problem.membership_label(x)?;
        let target_token = game.decision_tokens[usize::from(y)];
        let pick = space
            .iter()
            .position(|&t| t == target_token)
            .ok_or_else(|| PvgError::Protocol("decision token missing from space".into()))?;
        rows.insert(key, TabularStrategy::deterministic_row(size, pick));
    }
    TabularStrategy::new(rows)
}

/// Verifier strategy that plays one fixed decision everywhere.
pub fn constant_verifier(game: &GameSpec, decision: u8) -> Result<TabularStrategy> {
    let keys = crate::game::reachable_keys(game, game.decider, crate::game::DEFAULT_BRANCH_BUDGET)?;
    let space = game.space(game.decider, game.decision_channel)?.to_vec();
    let target_token = game.decision_tokens[usize::from(decision)];
    let pick = space
        .iter()
        .position(|&t| t == target_token)
        .ok_or_else(|| PvgError::Protocol("decision token missing from space".into()))?;
    let rows = keys
        .into_iter()
        .map(|(key, size)| (key, TabularStrategy::deterministic_row(size, pick)))
        .collect();
    TabularStrategy::new(rows)
}

fn parse_instance(key: &str) -> Option<usize> {
    key.split('|')
        .find(|part| part.starts_with('x'))
        .and_then(|part| part[1..].parse().ok())
}



#[cfg(test)]
mod zk_projection_tests {
    use super::*;
    use crate::losses::{agent_expected_loss, enumerate_pure_strategies};
    use crate::strategy::{uniform_strategy, StrategyProfile};

    fn two_point_problem() -> DecisionProblem {
        DecisionProblem::new(vec!["neg".into(), "pos".into()], vec![0, 1], vec![0.5, 0.5]).unwrap()
    }

    /// With a zero coefficient the honest lane of the zero-knowledge game
    /// carries exactly the alternating-protocol losses: lift matched pure
    /// profiles and compare.
    #[test]
    fn zero_coefficient_reproduces_the_base_losses() {
        let nip = build_nip(two_point_problem(), 1, 2).unwrap();
        let zk = build_zk_nip(two_point_problem(), 1, 2, 0.0, ZkProverMode::Weighted).unwrap();
        let nip_provers = enumerate_pure_strategies(&nip, 0, 64).unwrap();
        let nip_verifiers = enumerate_pure_strategies(&nip, 1, 64).unwrap();

        let lift_prover = |pure: &TabularStrategy| {
            let keys = crate::game::reachable_keys(&zk, 0, 1_000_000).unwrap();
            let rows = keys
                .into_iter()
                .map(|(key, size)| {
                    if key.starts_with("t0") {
                        // Honest-lane turn: replay the base row for this
                        // instance (empty history at round one).
                        let x: usize = key
                            .split('|')
                            .find(|p| p.starts_with('x'))
                            .and_then(|p| p[1..].parse().ok())
                            .unwrap();
                        let base_key = format!("t0|x{x}|c0:");
                        (key, pure.rows[&base_key].clone())
                    } else {
                        (key, vec![1.0 / size as f64; size])
                    }
                })
                .collect();
            TabularStrategy::new(rows).unwrap()
        };
        let lift_verifier = |pure: &TabularStrategy| {
            // The honest verifier sits in the same single channel, so keys
            // coincide with the base game's.
            let keys = crate::game::reachable_keys(&zk, 1, 1_000_000).unwrap();
            let rows = keys
                .into_keys()
                .map(|key| {
                    let row = pure.rows[&key].clone();
                    (key, row)
                })
                .collect();
            TabularStrategy::new(rows).unwrap()
        };

        let mut compared = 0usize;
        for prover in nip_provers.iter().take(4) {
            for verifier in nip_verifiers.iter().take(6) {
                let base = StrategyProfile::new(vec![
                    Strategy::Tabular(prover.clone()),
                    Strategy::Tabular(verifier.clone()),
                ]);
                let lifted = StrategyProfile::new(vec![
                    Strategy::Tabular(lift_prover(prover)),
                    Strategy::Tabular(lift_verifier(verifier)),
                    Strategy::Tabular(uniform_strategy(&zk, 2).unwrap()),
                    Strategy::Tabular(uniform_strategy(&zk, 3).unwrap()),
                ]);
                let base_p = agent_expected_loss(&nip, &base, 0).unwrap();
                let base_v = agent_expected_loss(&nip, &base, 1).unwrap();
                let zk_p = agent_expected_loss(&zk, &lifted, 0).unwrap();
                let zk_v = agent_expected_loss(&zk, &lifted, 1).unwrap();
                assert!((base_p - zk_p).abs() < 1e-12, "prover {base_p} vs {zk_p}");
                assert!((base_v - zk_v).abs() < 1e-12, "verifier {base_v} vs {zk_v}");
                compared += 1;
            }
        }
        assert!(compared >= 12);
    }

    #[test]
    fn weighted_mode_with_zero_coefficient_is_the_plain_prover_loss() {
        let zk = build_zk_nip(two_point_problem(), 1, 2, 0.0, ZkProverMode::Weighted).unwrap();
        let profile = StrategyProfile::new(
            (0..4)
                .map(|a| Strategy::Tabular(uniform_strategy(&zk, a).unwrap()))
                .collect(),
        );
        let with_term = agent_expected_loss(&zk, &profile, 0).unwrap();
        // Recompute the worst-case difference directly.
        use crate::losses::{instance_loss, EvalOptions};
        let mut wc = [0.0f64, 0.0];
        for x in 0..zk.problem.len() {
            let y = zk.problem.label(x) as usize;
            let loss = instance_loss(&zk, &profile, x, &EvalOptions::exact_only())
                .unwrap()
                .value;
            wc[y] = wc[y].max(loss);
        }
        assert!((with_term - (wc[1] - wc[0])).abs() < 1e-12);
    }
}
