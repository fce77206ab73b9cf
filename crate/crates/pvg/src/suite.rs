//! Seeded fixtures: random tiny alternating-protocol games with pure
//! strategy grids, a simultaneous-move diagnostic game, and the toy problem
//! used to study expert-iteration acceptance dynamics.

use std::collections::BTreeMap;

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::equilibrium::Grid;
use crate::game::{AgentSpec, ChannelSpec, DecisionRule, GameSpec, Mechanism, Role, SenderRule};
use crate::losses::LossKind;
use crate::problem::DecisionProblem;
use crate::protocols::{build_nip, oracle_verifier};
use crate::strategy::{Strategy, TabularStrategy};
use crate::{PvgError, Result};

/// A random decision problem with both labels present: 2..=4 instances,
/// uniform prior.
pub fn random_tiny_problem(rng: &mut ChaCha12Rng) -> DecisionProblem {
    loop {
        let n = 2 + rng.random_range(0..3usize);
        let labels: Vec<u8> = (0..n)
            .map(|_| u8::from(rng.random::<f64>() < 0.5))
            .collect();
        if !labels.contains(&0) || !labels.contains(&1) {
            continue;
        }
        let names = (0..n).map(|i| format!("x{i}")).collect();
        let prior = vec![1.0 / n as f64; n];
        // Repair rounding drift in the uniform prior.
        let mut prior = prior;
        let total: f64 = prior.iter().sum();
        *prior.last_mut().unwrap() += 1.0 - total;
        return DecisionProblem::new(names, labels, prior).expect("both labels present");
    }
}

/// A uniformly random pure tabular strategy for one agent.
pub fn random_pure_strategy(
    game: &GameSpec,
    agent: usize,
    rng: &mut ChaCha12Rng,
) -> Result<TabularStrategy> {
    let keys = crate::game::reachable_keys(game, agent, crate::game::DEFAULT_BRANCH_BUDGET)?;
    let rows = keys
        .into_iter()
        .map(|(key, space)| {
            let pick = rng.random_range(0..space);
            (key, TabularStrategy::deterministic_row(space, pick))
        })
        .collect();
    Ok(TabularStrategy { rows })
}

/// A seeded tiny alternating-protocol game together with pure strategy
/// grids whose verifier side always contains the label oracle, so a valid
/// system is guaranteed to exist on the grid.
pub fn random_tiny_nip_game(seed: u64) -> Result<(GameSpec, Grid, Grid)> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let problem = random_tiny_problem(&mut rng);
    let alphabet = 2 + rng.random_range(0..2usize);
    let game = build_nip(problem, 1, alphabet)?;
    let prover_count = 3 + rng.random_range(0..3usize);
    let verifier_count = 3 + rng.random_range(0..3usize);
    let mut provers = Vec::with_capacity(prover_count);
    for _ in 0..prover_count {
        provers.push(Strategy::Tabular(random_pure_strategy(&game, 0, &mut rng)?));
    }
    let mut verifiers = vec![Strategy::Tabular(oracle_verifier(&game)?)];
    for _ in 0..verifier_count {
        verifiers.push(Strategy::Tabular(random_pure_strategy(&game, 1, &mut rng)?));
    }
    Ok((game, Grid::new(0, provers), Grid::new(1, verifiers)))
}

/// One-round simultaneous-move diagnostic: a mover picks a bit in a private
/// channel while the decider simultaneously outputs a bit; the matcher side
/// wants the bits to coincide. With both agents minimising the match
/// probability's opposite signs this is the classic zero-sum coin-matching
/// game whose unique equilibrium is uniform play by both.
pub fn build_matching_pennies(coordination: bool) -> Result<GameSpec> {
    let problem = DecisionProblem::new_degenerate(vec!["round".into()], vec![1], vec![1.0])?;
    let mut message_spaces = BTreeMap::new();
    message_spaces.insert((0usize, 0usize), vec![0u32, 1]);
    message_spaces.insert((1usize, 1usize), vec![0u32, 1]);
    let game = GameSpec {
        name: if coordination {
            "coin-coordination"
        } else {
            "coin-matching"
        }
        .into(),
        problem,
        agents: vec![
            AgentSpec {
                name: "mover".into(),
                role: Role::Prover,
                sees_instance: true,
                sees_label: false,
            },
            AgentSpec {
                name: "decider".into(),
                role: Role::Verifier,
                sees_instance: true,
                sees_label: false,
            },
        ],
        channels: vec![
            ChannelSpec {
                name: "hidden".into(),
                members: vec![0],
                alphabet: vec!["0".into(), "1".into()],
            },
            ChannelSpec {
                name: "call".into(),
                members: vec![1],
                alphabet: vec!["0".into(), "1".into()],
            },
        ],
        mechanism: Mechanism {
            rounds: vec![vec![
                SenderRule::Agents(vec![0]),
                SenderRule::Agents(vec![1]),
            ]],
            cycle_from: None,
        },
        message_spaces,
        decision_channel: 1,
        decider: 1,
        decision_tokens: vec![0, 1],
        decision_rule: DecisionRule::MatchLabel,
        max_rounds: 1,
        losses: vec![
            LossKind::MatchingPennies {
                matcher: coordination,
            },
            LossKind::MatchingPennies { matcher: true },
        ],
        zk: None,
        adversary: None,
    };
    game.validate()?;
    Ok(game)
}

/// Mixture grid for one single-key agent of the coin game: rows
/// `(k/resolution, 1 - k/resolution)`.
pub fn coin_mixture_grid(game: &GameSpec, agent: usize, resolution: usize) -> Result<Grid> {
    let keys = crate::game::reachable_keys(game, agent, crate::game::DEFAULT_BRANCH_BUDGET)?;
    let mut strategies = Vec::with_capacity(resolution + 1);
    for k in 0..=resolution {
        let w = k as f64 / resolution as f64;
        let rows: BTreeMap<String, Vec<f64>> = keys
            .keys()
            .map(|key| (key.clone(), vec![w, 1.0 - w]))
            .collect();
        strategies.push(Strategy::Tabular(TabularStrategy::new(rows)?));
    }
    Ok(Grid::new(agent, strategies))
}

/// Toy fixture for acceptance-rate dynamics under expert iteration: a
/// two-instance problem with a 0.3 positive base rate whose verifier sees
/// only the prover's message, never the instance (the tabular analogue of
/// parameters shared across inputs). Correct rejections then dominate the
/// kept rollouts at every observation key, so each refit contracts the
/// acceptance rate, while the blind verifier leaves the prover no
/// per-message acceptance signal to chase.
pub fn acceptance_collapse_game() -> Result<GameSpec> {
    let problem =
        DecisionProblem::new(vec!["neg".into(), "pos".into()], vec![0, 1], vec![0.7, 0.3])?;
    let mut message_spaces = BTreeMap::new();
    message_spaces.insert((0usize, 0usize), vec![0u32, 1]);
    message_spaces.insert((1usize, 0usize), vec![2u32, 3]);
    let game = GameSpec {
        name: "collapse-toy".into(),
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
                // The verifier judges from the message alone, the tabular
                // analogue of shared parameters across instances.
                sees_instance: false,
                sees_label: false,
            },
        ],
        channels: vec![ChannelSpec {
            name: "main".into(),
            members: vec![0, 1],
            alphabet: vec!["m0".into(), "m1".into(), "0".into(), "1".into()],
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
        decision_tokens: vec![2, 3],
        decision_rule: DecisionRule::MatchLabel,
        max_rounds: 2,
        losses: vec![LossKind::AdpProver, LossKind::AdpVerifier],
        zk: None,
        adversary: None,
    };
    game.validate()?;
    Ok(game)
}

/// Initial profile for the collapse fixture: uniform prover, reject-biased
/// verifier.
pub fn acceptance_collapse_profile(
    game: &GameSpec,
    accept_bias: f64,
) -> Result<crate::strategy::StrategyProfile> {
    if !(0.0..=1.0).contains(&accept_bias) {
        return Err(PvgError::Domain("accept bias must lie in [0,1]".into()));
    }
    let prover = crate::strategy::uniform_strategy(game, 0)?;
    let keys = crate::game::reachable_keys(game, 1, crate::game::DEFAULT_BRANCH_BUDGET)?;
    let rows = keys
        .into_keys()
        .map(|key| (key, vec![1.0 - accept_bias, accept_bias]))
        .collect();
    let verifier = TabularStrategy::new(rows)?;
    Ok(crate::strategy::StrategyProfile::new(vec![
        Strategy::Tabular(prover),
        Strategy::Tabular(verifier),
    ]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::equilibrium::{find_nash, EquilibriumQuery};

    #[test]
    fn coin_matching_has_the_uniform_profile_as_unique_equilibrium() {
        let game = build_matching_pennies(false).unwrap();
        let mover = coin_mixture_grid(&game, 0, 2).unwrap();
        let decider = coin_mixture_grid(&game, 1, 2).unwrap();
        let result = find_nash(
            &game,
            &[mover, decider],
            &EquilibriumQuery::nash(vec![0.0, 0.0]),
        )
        .unwrap();
        assert_eq!(result.points.len(), 1);
        // Index 1 of 0..=2 is the (1/2, 1/2) mixture on both sides.
        assert_eq!(result.points[0].assignment, vec![1, 1]);
    }

    #[test]
    fn doubling_the_resolution_keeps_pure_coordination_equilibria() {
        // Match-probability losses are linear in each agent's mixture, so a
        // pure equilibrium survives grid refinement.
        let game = build_matching_pennies(true).unwrap();
        let pure_points = |resolution: usize| {
            let mover = coin_mixture_grid(&game, 0, resolution).unwrap();
            let decider = coin_mixture_grid(&game, 1, resolution).unwrap();
            let result = find_nash(
                &game,
                &[mover, decider],
                &EquilibriumQuery::nash(vec![0.0, 0.0]),
            )
            .unwrap();
            result
                .points
                .iter()
                .map(|p| {
                    (
                        p.assignment[0] * (8 / resolution),
                        p.assignment[1] * (8 / resolution),
                    )
                })
                .collect::<Vec<_>>()
        };
        let coarse = pure_points(4);
        let fine = pure_points(8);
        for point in coarse {
            // Pure profiles sit at the simplex corners, indices 0 and max.
            if point.0 % 8 == 0 && point.1 % 8 == 0 {
                assert!(fine.contains(&point), "{point:?} lost after refinement");
            }
        }
    }

    #[test]
    fn random_tiny_games_are_deterministic_per_seed() {
        let (g1, p1, v1) = random_tiny_nip_game(7).unwrap();
        let (g2, p2, v2) = random_tiny_nip_game(7).unwrap();
        assert_eq!(g1.problem.len(), g2.problem.len());
        assert_eq!(p1.len(), p2.len());
        assert_eq!(v1.len(), v2.len());
        assert_eq!(
            serde_json::to_string(&p1.strategies).unwrap(),
            serde_json::to_string(&p2.strategies).unwrap()
        );
    }

    #[test]
    fn collapse_fixture_hides_the_instance_from_the_verifier() {
        let game = acceptance_collapse_game().unwrap();
        let keys = crate::game::reachable_keys(&game, 1, 1_000_000).unwrap();
        for key in keys.keys() {
            assert!(
                !key.contains("|x"),
                "verifier key leaks the instance: {key}"
            );
        }
        // Two shared keys, one per prover message.
        assert_eq!(keys.len(), 2);
    }
}
