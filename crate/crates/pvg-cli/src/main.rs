//! Command-line front end: dataset generation, equilibrium solving,
//! training, the reference counterexample pipeline, the zero-knowledge
//! coefficient sweep, and metrics aggregation.
//!
//! Every command is deterministic given its configuration and seed. Exit
//! codes: 2 for configuration errors, 3 for budget and I/O errors, 1 when
//! the reproduction pipeline fails an assertion.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use pvg::dataset::{
    dataset_problem, generate_graph_pair_dataset, write_jsonl, GraphDatasetConfig, Split,
};
use pvg::equilibrium::{find_nash, find_verifier_leading_se, EquilibriumQuery, Grid, TieBreaking};
use pvg::game::{decision_correct, rollout, GameSpec};
use pvg::losses::{accept_probability, validity_report, zk_statistical_distance, ZkProverMode};
use pvg::metrics::{read_metrics, write_metrics, MetricsRow};
use pvg::problem::DecisionProblem;
use pvg::protocols::{build_by_name, build_zk_nip, parity_adp_game};
use pvg::strategy::{make_tabular_softmax, uniform_strategy, LogitInit, Strategy, StrategyProfile};
use pvg::training::{run_training, Schedule, TrainConfig, TrainMethod};
use pvg::PvgError;

#[derive(Parser)]
#[command(name = "pvg", about = "Prover-verifier game laboratory", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a graph-pair dataset calibrated by colour-refinement rounds.
    GenData(GenDataArgs),
    /// Enumerate equilibria of a protocol game over finite grids.
    Solve(SolveArgs),
    /// Run a training schedule and write metrics and snapshots.
    Train(TrainArgs),
    /// Re-derive the reference parity-game results and verify them.
    ReproduceCounterexample(ReproduceArgs),
    /// Train the zero-knowledge protocol over a coefficient sweep.
    ZkSweep(ZkSweepArgs),
    /// Aggregate metrics files into a per-protocol report.
    Report(ReportArgs),
}

/// Shared optional JSON configuration; explicit flags override its fields.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
struct FileConfig {
    protocol: Option<String>,
    a: Option<f64>,
    rounds: Option<usize>,
    alphabet: Option<usize>,
    gamma: Option<f64>,
    zk_coefficient: Option<f64>,
    method: Option<String>,
    steps: Option<usize>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    dataset: Option<PathBuf>,
    total_count: Option<usize>,
    resolution: Option<usize>,
    tolerance: Option<f64>,
    rollout_budget: Option<usize>,
    prover_rate: Option<f64>,
    verifier_rate: Option<f64>,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// JSON configuration file; explicit flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Total number of graph pairs.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    protocol: Option<String>,
    /// Parity prior parameter.
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Equilibrium kind: nash or se.
    #[arg(long)]
    kind: Option<String>,
    /// Verifier mixture resolution (se on the parity game: the weight grid).
    #[arg(long)]
    resolution: Option<usize>,
    /// Per-agent deviation tolerance.
    #[arg(long)]
    tolerance: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    protocol: Option<String>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    zk_coefficient: Option<f64>,
    /// Train on a graph-pair dataset instead of the parity problem.
    #[arg(long)]
    dataset: Option<PathBuf>,
}

#[derive(Args)]
struct ReproduceArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    a: Option<f64>,
}

#[derive(Args)]
struct ZkSweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long)]
    steps: Option<usize>,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: CommonArgs,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::GenData(args) => gen_data(args),
        Command::Solve(args) => solve(args),
        Command::Train(args) => train(args),
        Command::ReproduceCounterexample(args) => reproduce(args),
        Command::ZkSweep(args) => zk_sweep(args),
        Command::Report(args) => report(args),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                PvgError::Config(_)
                | PvgError::Domain(_)
                | PvgError::UnknownInstance(_)
                | PvgError::Protocol(_)
                | PvgError::MissingKey(_) => 2,
                _ => 3,
            };
            ExitCode::from(code)
        }
    }
}

fn load_config(common: &CommonArgs) -> Result<FileConfig, PvgError> {
    match &common.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)?;
            Ok(serde_json::from_str(&text)?)
        }
        None => Ok(FileConfig::default()),
    }
}

fn out_dir(common: &CommonArgs, file: &FileConfig) -> Result<PathBuf, PvgError> {
    let dir = common
        .out
        .clone()
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn seed_of(common: &CommonArgs, file: &FileConfig) -> Result<u64, PvgError> {
    common
        .seed
        .or(file.seed)
        .ok_or_else(|| PvgError::Config("a seed is mandatory (--seed or config)".into()))
}

fn parity_problem(a: f64) -> Result<DecisionProblem, PvgError> {
    Ok(pvg::problem::make_parity_problem(a)?.problem)
}

fn build_game(
    protocol: &str,
    problem: DecisionProblem,
    rounds: usize,
    alphabet: usize,
    gamma: f64,
    zk_coefficient: f64,
) -> Result<GameSpec, PvgError> {
    build_by_name(protocol, problem, rounds, alphabet, gamma, zk_coefficient)
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

fn gen_data(args: GenDataArgs) -> Result<ExitCode, PvgError> {
    let file = load_config(&args.common)?;
    let seed = seed_of(&args.common, &file)?;
    let dir = out_dir(&args.common, &file)?;
    let k = args.k.or(file.total_count).unwrap_or(10_000);
    let config = GraphDatasetConfig::baseline(k, seed);
    config.validate()?;
    let pairs = generate_graph_pair_dataset(&config)?;
    let path = dir.join("dataset.jsonl");
    write_jsonl(&path, &pairs)?;
    let config_path = dir.join("dataset-config.json");
    std::fs::write(&config_path, serde_json::to_string_pretty(&config)?)?;
    let non_iso = pairs.iter().filter(|p| p.label == 0).count();
    let train = pairs.iter().filter(|p| p.split == Split::Train).count();
    println!(
        "wrote {} pairs ({} non-isomorphic, {} train) to {}",
        pairs.len(),
        non_iso,
        train,
        path.display()
    );
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// solve
// ---------------------------------------------------------------------------

fn solve(args: SolveArgs) -> Result<ExitCode, PvgError> {
    let file = load_config(&args.common)?;
    let seed = seed_of(&args.common, &file)?;
    let dir = out_dir(&args.common, &file)?;
    let protocol = args
        .protocol
        .or(file.protocol.clone())
        .unwrap_or_else(|| "adp".to_string());
    let a = args.a.or(file.a).unwrap_or(0.2);
    let kind = args.kind.unwrap_or_else(|| "se".to_string());
    let resolution = args.resolution.or(file.resolution).unwrap_or(1000);
    let tolerance = args.tolerance.or(file.tolerance).unwrap_or(0.0);

    if protocol != "adp" {
        return Err(PvgError::Config(
            "solve currently targets the one-shot parity game; use --protocol adp".into(),
        ));
    }
    let parity = parity_adp_game(a)?;
    let mut verifiers = Vec::with_capacity(resolution + 1);
    let mut weights = Vec::with_capacity(resolution + 1);
    for k in 0..=resolution {
        let b = 0.5 * k as f64 / resolution as f64;
        verifiers.push(parity.verifier_mixture([b, b, 1.0 - 2.0 * b])?);
        weights.push(b);
    }
    let grids = [
        Grid::new(0, parity.provers.clone()),
        Grid::new(1, verifiers),
    ];
    let result = match kind.as_str() {
        "nash" => find_nash(
            &parity.game,
            &grids,
            &EquilibriumQuery::nash(vec![tolerance, tolerance]),
        )?,
        "se" => find_verifier_leading_se(
            &parity.game,
            &grids,
            vec![f64::INFINITY, tolerance],
            TieBreaking::LeaderPessimistic,
        )?,
        other => {
            return Err(PvgError::Config(format!(
                "unknown equilibrium kind `{other}`"
            )))
        }
    };
    let path = dir.join("equilibria.json");
    std::fs::write(&path, serde_json::to_string_pretty(&result)?)?;
    println!(
        "{} profiles in {} evaluations ({} ms); leader value {:?}; seed {}",
        result.points.len(),
        result.evaluations,
        result.elapsed_ms,
        result.leader_value,
        seed
    );
    for point in result.points.iter().take(10) {
        println!(
            "  prover {} verifier-weight {:.4} losses {:?}",
            point.assignment[0], weights[point.assignment[1]], point.losses
        );
    }
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn parse_method(name: &str) -> Result<TrainMethod, PvgError> {
    Ok(match name {
        "simultaneous" => TrainMethod::Simultaneous,
        "stackelberg-implicit" => TrainMethod::StackelbergImplicit,
        "lola" => TrainMethod::Lola { lookahead: 0.0 },
        "expert-iteration" => TrainMethod::ExpertIteration,
        "stabilised-expert-iteration" => TrainMethod::StabilisedExpertIteration,
        other => {
            return Err(PvgError::Config(format!(
                "unknown method `{other}` (expected simultaneous|stackelberg-implicit|lola|\
                 expert-iteration|stabilised-expert-iteration)"
            )))
        }
    })
}

fn initial_profile(
    game: &GameSpec,
    method: TrainMethod,
    seed: u64,
) -> Result<StrategyProfile, PvgError> {
    let tabular = matches!(
        method,
        TrainMethod::ExpertIteration | TrainMethod::StabilisedExpertIteration
    );
    let strategies = (0..game.agent_count())
        .map(|agent| {
            if tabular {
                Ok(Strategy::Tabular(uniform_strategy(game, agent)?))
            } else {
                Ok(Strategy::Softmax(make_tabular_softmax(
                    LogitInit::Gaussian {
                        std: 0.5,
                        seed: seed + agent as u64,
                    },
                    game,
                    agent,
                )?))
            }
        })
        .collect::<Result<_, PvgError>>()?;
    Ok(StrategyProfile::new(strategies))
}

fn train(args: TrainArgs) -> Result<ExitCode, PvgError> {
    let file = load_config(&args.common)?;
    let seed = seed_of(&args.common, &file)?;
    let dir = out_dir(&args.common, &file)?;
    let protocol = args
        .protocol
        .or(file.protocol.clone())
        .unwrap_or_else(|| "nip".into());
    let a = args.a.or(file.a).unwrap_or(0.2);
    let rounds = args.rounds.or(file.rounds).unwrap_or(1);
    let alphabet = file.alphabet.unwrap_or(2);
    let gamma = file.gamma.unwrap_or(0.5);
    let zk_coefficient = args.zk_coefficient.or(file.zk_coefficient).unwrap_or(1.0);
    let method = parse_method(
        &args
            .method
            .or(file.method.clone())
            .unwrap_or_else(|| "simultaneous".into()),
    )?;
    let steps = args.steps.or(file.steps).unwrap_or(100);
    let dataset_path = args.dataset.or(file.dataset.clone());

    let problem = match &dataset_path {
        Some(path) => {
            let pairs = pvg::dataset::read_jsonl(path)?;
            dataset_problem(&pairs, Some(Split::Train))?
        }
        None => parity_problem(a)?,
    };
    let game = build_game(&protocol, problem, rounds, alphabet, gamma, zk_coefficient)?;
    let initial = initial_profile(&game, method, seed)?;
    let config = TrainConfig {
        method,
        prover_rate: Schedule::Constant(file.prover_rate.unwrap_or(1.0)),
        verifier_rate: match method {
            TrainMethod::StackelbergImplicit => Schedule::Polynomial {
                base: file.verifier_rate.unwrap_or(0.05),
                decay: 1.0,
            },
            _ => Schedule::Constant(file.verifier_rate.unwrap_or(1.0)),
        },
        steps,
        rollout_budget: file.rollout_budget.unwrap_or(512),
        seed,
        eval_every: 10,
        ..TrainConfig::default()
    };
    let trace = run_training(&game, &config, &initial)?;

    // Metrics at the final step plus the trace CSV.
    let run_id = format!("train-{protocol}-{seed}");
    let mut rows = Vec::new();
    if let Some(last) = trace.steps.last() {
        if let (Some(eps_c), Some(eps_s)) = (last.completeness_error, last.profile_soundness) {
            rows.push(MetricsRow::new(
                &run_id, &protocol, "eps_c", eps_c, last.step, seed,
            )?);
            rows.push(MetricsRow::new(
                &run_id, &protocol, "eps_s", eps_s, last.step, seed,
            )?);
        }
        if let Some(tv) = last.zk_distance {
            rows.push(MetricsRow::new(
                &run_id, &protocol, "zk_tv", tv, last.step, seed,
            )?);
        }
        if let Some(rate) = last.acceptance_rate {
            rows.push(MetricsRow::new(
                &run_id,
                &protocol,
                "acceptance_rate",
                rate,
                last.step,
                seed,
            )?);
        }
    }
    let eval = evaluate_profile(&game, &trace.final_profile, seed)?;
    rows.push(MetricsRow::new(
        &run_id,
        &protocol,
        "accuracy",
        eval.accuracy,
        steps,
        seed,
    )?);
    rows.push(MetricsRow::new(
        &run_id,
        &protocol,
        "worst_case_fail_rate",
        eval.worst_case_fail_rate,
        steps,
        seed,
    )?);
    rows.push(MetricsRow::new(
        &run_id,
        &protocol,
        "precision",
        eval.precision,
        steps,
        seed,
    )?);
    rows.push(MetricsRow::new(
        &run_id,
        &protocol,
        "recall",
        eval.recall,
        steps,
        seed,
    )?);
    write_metrics(&rows, dir.join("metrics.csv"))?;
    write_trace_csv(&trace, dir.join("trace.csv"))?;
    let snap_dir = dir.join("snapshots");
    std::fs::create_dir_all(&snap_dir)?;
    for (step, json) in &trace.snapshots {
        std::fs::write(snap_dir.join(format!("step-{step:06}.json")), json)?;
    }
    println!(
        "trained {protocol} with {method:?} for {steps} steps; accuracy {:.4}, \
         worst-case fail rate {:.4}",
        eval.accuracy, eval.worst_case_fail_rate
    );
    Ok(ExitCode::SUCCESS)
}

struct ProfileEvaluation {
    accuracy: f64,
    worst_case_fail_rate: f64,
    precision: f64,
    recall: f64,
}

/// Prior-weighted accuracy, the fraction of instances on which ten seeded
/// rollouts all end incorrectly, and precision/recall of the accept verdict.
fn evaluate_profile(
    game: &GameSpec,
    profile: &StrategyProfile,
    seed: u64,
) -> Result<ProfileEvaluation, PvgError> {
    let mut accuracy = 0.0;
    let mut fails = 0usize;
    let mut true_accepts = 0.0;
    let mut predicted_accepts = 0.0;
    let mut actual_positives = 0.0;
    let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x9e3779b97f4a7c15);
    for x in 0..game.problem.len() {
        let y = game.problem.membership_label(x)?;
        let prior = game.problem.prior(x);
        let mut all_wrong = true;
        for _ in 0..10 {
            let tr = rollout(game, profile, x, &mut rng)?;
            if decision_correct(game, &tr, y) {
                all_wrong = false;
            }
        }
        if all_wrong {
            fails += 1;
        }
        let wrong =
            pvg::losses::instance_loss(game, profile, x, &pvg::losses::EvalOptions::default())?
                .value;
        accuracy += prior * (1.0 - wrong);
        if game.is_binary_decision() {
            let accept = accept_probability(game, profile, x)?;
            predicted_accepts += prior * accept;
            if y == 1 {
                actual_positives += prior;
                true_accepts += prior * accept;
            }
        }
    }
    let precision = if predicted_accepts > 0.0 {
        true_accepts / predicted_accepts
    } else {
        0.0
    };
    let recall = if actual_positives > 0.0 {
        true_accepts / actual_positives
    } else {
        0.0
    };
    Ok(ProfileEvaluation {
        accuracy,
        worst_case_fail_rate: fails as f64 / game.problem.len() as f64,
        precision,
        recall,
    })
}

fn write_trace_csv(trace: &pvg::training::TrainTrace, path: PathBuf) -> Result<(), PvgError> {
    use std::io::Write;
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        out,
        "step,losses,grad_norm,eps_c,eps_s,zk_tv,acceptance_rate"
    )?;
    let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for record in &trace.steps {
        let losses: Vec<String> = record.losses.iter().map(|l| l.to_string()).collect();
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            record.step,
            losses.join(";"),
            fmt(record.gradient_norm),
            fmt(record.completeness_error),
            fmt(record.profile_soundness),
            fmt(record.zk_distance),
            fmt(record.acceptance_rate),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// reproduce-counterexample
// ---------------------------------------------------------------------------

fn reproduce(args: ReproduceArgs) -> Result<ExitCode, PvgError> {
    let file = load_config(&args.common)?;
    let seed = seed_of(&args.common, &file).unwrap_or(0);
    let dir = out_dir(&args.common, &file)?;
    let a = args.a.or(file.a).unwrap_or(0.2);
    let parity = parity_adp_game(a)?;
    let game = &parity.game;
    let mut failed = false;
    let mut lines: Vec<String> = Vec::new();
    let mut check = |name: &str, pass: bool, detail: String| {
        lines.push(format!(
            "[{}] {name}: {detail}",
            if pass { "PASS" } else { "FAIL" }
        ));
        if !pass {
            failed = true;
        }
    };

    // Validity of the honest map against the reference mixture.
    let profile = StrategyProfile::new(vec![
        parity.provers[0].clone(),
        parity.reference_verifier()?,
    ]);
    let deviations: Vec<_> = parity
        .provers
        .iter()
        .map(|p| vec![(0usize, p.clone())])
        .collect();
    let report = validity_report(game, &profile, &deviations, false)?;
    check(
        "completeness error",
        report.completeness_error.abs() < 1e-9,
        format!("eps_c = {}", report.completeness_error),
    );
    check(
        "soundness error",
        (report.soundness_error - 0.625).abs() < 1e-9,
        format!("eps_s = {}", report.soundness_error),
    );
    check(
        "validity verdict",
        report.valid,
        format!("valid = {}", report.valid),
    );

    // Prover deviation incentive.
    let l1 = pvg::losses::agent_expected_loss(game, &profile, 0)?;
    let profile2 = StrategyProfile::new(vec![
        parity.provers[1].clone(),
        parity.reference_verifier()?,
    ]);
    let l2 = pvg::losses::agent_expected_loss(game, &profile2, 0)?;
    let want1 = a * (64f64 / 9.0).ln();
    let want2 = a * (64f64 / 15.0).ln();
    check(
        "honest prover loss",
        (l1 - want1).abs() < 1e-9,
        format!("{l1} vs a*ln(64/9) = {want1}"),
    );
    check(
        "deviating prover loss",
        (l2 - want2).abs() < 1e-9,
        format!("{l2} vs a*ln(64/15) = {want2}"),
    );
    check("deviation is profitable", l2 < l1, format!("{l2} < {l1}"));

    // Worst-case-prover equilibrium over the symmetric verifier family.
    let resolution = 5000usize;
    let mut verifiers = Vec::with_capacity(resolution + 1);
    let mut weights = Vec::with_capacity(resolution + 1);
    for k in 0..=resolution {
        let b = 0.5 * k as f64 / resolution as f64;
        verifiers.push(parity.verifier_mixture([b, b, 1.0 - 2.0 * b])?);
        weights.push(b);
    }
    let grids = [
        Grid::new(0, parity.provers.clone()),
        Grid::new(1, verifiers),
    ];
    let result = find_verifier_leading_se(
        game,
        &grids,
        vec![f64::INFINITY, 0.0],
        TieBreaking::LeaderPessimistic,
    )?;
    let leader_value = result.leader_value.unwrap_or(f64::INFINITY);
    let binding = result
        .points
        .iter()
        .find(|p| (p.losses[1] - leader_value).abs() < 1e-9);
    let (binding_prover, equilibrium_b) = match binding {
        Some(point) => (point.assignment[0], weights[point.assignment[1]]),
        None => (usize::MAX, f64::NAN),
    };
    check(
        "worst-case equilibrium prover",
        binding_prover == 2,
        format!("binding prover index {binding_prover} (identity map = 2)"),
    );
    check(
        "positive weight on the always-accept table",
        equilibrium_b.is_finite() && 1.0 - 2.0 * equilibrium_b > 0.0,
        format!("1 - 2b = {}", 1.0 - 2.0 * equilibrium_b),
    );

    // Independent one-dimensional search over the verifier objective.
    let oracle_b = parity_verifier_objective_scan(a, 1e-4);
    check(
        "equilibrium weight matches the scan",
        (equilibrium_b - oracle_b).abs() <= 1e-4 + 1e-12,
        format!("solver b = {equilibrium_b}, scan b = {oracle_b}"),
    );
    lines.push(format!(
        "[NOTE] recorded reference stationary point 3a/2 = {} (not asserted)",
        1.5 * a
    ));

    for line in &lines {
        println!("{line}");
    }
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&lines)?,
    )?;
    let _ = seed;
    if failed {
        Ok(ExitCode::from(1))
    } else {
        Ok(ExitCode::SUCCESS)
    }
}

/// Plain scan of the exact verifier objective against the worst-case
/// fixture prover, computed directly from the accept tables.
fn parity_verifier_objective_scan(a: f64, step: f64) -> f64 {
    let prover_maps: [[usize; 4]; 3] = [[0, 1, 0, 1], [0, 1, 2, 1], [0, 1, 2, 3]];
    let accept_tables: [[f64; 4]; 3] = [
        [0.0, 1.0, 1.0, 0.0],
        [1.0, 1.0, 0.0, 0.0],
        [1.0, 1.0, 1.0, 1.0],
    ];
    let prior = [a, a, a, 1.0 - 3.0 * a];
    let labels = [0.0, 1.0, 0.0, 1.0];
    let mut best = (f64::INFINITY, 0.0);
    let mut k = 0usize;
    loop {
        let b = k as f64 * step;
        if b > 0.5 {
            break;
        }
        let mix = [b, b, 1.0 - 2.0 * b];
        let mut worst: f64 = f64::NEG_INFINITY;
        for map in &prover_maps {
            let mut loss = 0.0;
            for x in 0..4 {
                let m = map[x];
                let accept: f64 = (0..3).map(|t| mix[t] * accept_tables[t][m]).sum();
                let correct = if labels[x] == 1.0 {
                    accept
                } else {
                    1.0 - accept
                };
                loss += if correct <= 0.0 {
                    f64::INFINITY
                } else {
                    -prior[x] * correct.ln()
                };
            }
            worst = worst.max(loss);
        }
        if worst < best.0 {
            best = (worst, b);
        }
        k += 1;
    }
    best.1
}

// ---------------------------------------------------------------------------
// zk-sweep
// ---------------------------------------------------------------------------

fn zk_sweep(args: ZkSweepArgs) -> Result<ExitCode, PvgError> {
    let file = load_config(&args.common)?;
    let seed = seed_of(&args.common, &file)?;
    let dir = out_dir(&args.common, &file)?;
    let steps = args.steps.or(file.steps).unwrap_or(120);
    let coefficients = [0.0, 0.5, 1.0, 2.0];
    let mut rows = Vec::new();
    let mut finals = Vec::new();
    for (i, &coefficient) in coefficients.iter().enumerate() {
        let problem =
            DecisionProblem::new(vec!["neg".into(), "pos".into()], vec![0, 1], vec![0.5, 0.5])?;
        let game = build_zk_nip(problem, 1, 2, coefficient, ZkProverMode::Weighted)?;
        let strategies = (0..game.agent_count())
            .map(|agent| {
                Ok(Strategy::Softmax(make_tabular_softmax(
                    LogitInit::Gaussian {
                        std: 0.5,
                        seed: seed + agent as u64,
                    },
                    &game,
                    agent,
                )?))
            })
            .collect::<Result<_, PvgError>>()?;
        let initial = StrategyProfile::new(strategies);
        let config = TrainConfig {
            method: TrainMethod::Simultaneous,
            prover_rate: Schedule::Constant(1.0),
            verifier_rate: Schedule::Constant(1.0),
            steps,
            seed,
            eval_every: 0,
            ..TrainConfig::default()
        };
        let trace = run_training(&game, &config, &initial)?;
        let instances: Vec<usize> = (0..game.problem.len()).collect();
        let tv = zk_statistical_distance(&game, &trace.final_profile, &instances)?;
        println!("coefficient {coefficient}: final statistical distance {tv:.6}");
        rows.push(MetricsRow::new(
            &format!("zk-sweep-{seed}-c{coefficient}"),
            "zk-nip",
            "zk_tv",
            tv,
            i,
            seed,
        )?);
        finals.push((coefficient, tv));
    }
    write_metrics(&rows, dir.join("metrics.csv"))?;
    std::fs::write(
        dir.join("report.json"),
        serde_json::to_string_pretty(&finals)?,
    )?;
    Ok(ExitCode::SUCCESS)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

#[derive(Debug, Serialize)]
struct MetricSummary {
    count: usize,
    mean: f64,
    min: f64,
    max: f64,
}

fn report(args: ReportArgs) -> Result<ExitCode, PvgError> {
    let file = load_config(&args.common)?;
    let dir = out_dir(&args.common, &file)?;
    let path = dir.join("metrics.csv");
    let rows = read_metrics(&path)?;
    let mut grouped: std::collections::BTreeMap<(String, String), Vec<f64>> =
        std::collections::BTreeMap::new();
    for row in &rows {
        grouped
            .entry((row.protocol.clone(), row.metric.clone()))
            .or_default()
            .push(row.value);
    }
    let mut summary: std::collections::BTreeMap<
        String,
        std::collections::BTreeMap<String, MetricSummary>,
    > = std::collections::BTreeMap::new();
    for ((protocol, metric), values) in grouped {
        let count = values.len();
        let mean = values.iter().sum::<f64>() / count as f64;
        let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        summary.entry(protocol).or_default().insert(
            metric,
            MetricSummary {
                count,
                mean,
                min,
                max,
            },
        );
    }
    let out = dir.join("report.json");
    std::fs::write(&out, serde_json::to_string_pretty(&summary)?)?;
    println!(
        "aggregated {} rows from {} into {}",
        rows.len(),
        path.display(),
        out.display()
    );
    for (protocol, metrics) in &summary {
        for (metric, s) in metrics {
            println!(
                "  {protocol:>8} {metric:<22} n={} mean={:.6}",
                s.count, s.mean
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

// Keep the unused-path helper referenced for future subcommands.
#[allow(dead_code)]
fn ensure_exists(path: &Path) -> Result<(), PvgError> {
    if !path.exists() {
        return Err(PvgError::Config(format!(
            "path {} does not exist",
            path.display()
        )));
    }
    Ok(())
}
