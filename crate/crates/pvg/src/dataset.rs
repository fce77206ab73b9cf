//! Graph-pair dataset generation and its JSON-lines wire format.
//!
//! The generator follows a three-step recipe: first a quota of
//! non-isomorphic pairs spread over a grid of (vertex count, edge
//! probability) cells and calibrated by the colour-refinement round needed to
//! tell the pair apart; then isomorphic pairs obtained by node-shuffling
//! members of the non-isomorphic pool; then isomorphic pairs built from fresh
//! samples. Pairs are finally shuffled and split into train/test.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{is_isomorphic_bruteforce, wl_distinguishing_round, Graph, WlOutcome};
use crate::problem::DecisionProblem;
use crate::{PvgError, Result};

/// Attempt cap for the rejection loop, per pair slot.
pub const ATTEMPT_CAP: usize = 100_000;
/// Consecutive failures after which a (cell, bucket) combination is written
/// off and the slot moves to the next cell.
const CELL_STREAK_CAP: usize = 4_000;
/// Vertex count above which never-distinguished pairs are discarded instead
/// of certified by permutation search.
const BRUTE_FORCE_CAP: usize = 12;
/// Independent-sample draws tried per ">2" slot before switching to the
/// degree-matched rewire proposal. Pairs of independent samples land in that
/// bucket at a rate of roughly 1e-4, so the bucket is unreachable by plain
/// rejection; the rewire proposal preserves the first two refinement rounds
/// by construction.
const INDEPENDENT_PROBE: usize = 50;
/// Rewire attempts per candidate graph.
const SWAP_TRIES: usize = 60;

/// Configuration mirrored one-to-one by the JSON config document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphDatasetConfig {
    pub total_count: usize,
    pub min_vertices: usize,
    pub max_vertices: usize,
    pub min_edge_prob: f64,
    pub max_edge_prob: f64,
    /// Fraction of pairs that are non-isomorphic.
    pub non_isomorphic_fraction: f64,
    /// Fraction of the non-isomorphic pairs distinguished at refinement round 1.
    pub wl_round_one_fraction: f64,
    /// Fraction of the non-isomorphic pairs distinguished at refinement round 2.
    pub wl_round_two_fraction: f64,
    /// Fraction of the isomorphic pairs produced by shuffling non-isomorphic members.
    pub shuffled_isomorphic_fraction: f64,
    pub train_fraction: f64,
    pub seed: u64,
}

impl GraphDatasetConfig {
    /// The published baseline: 7..=11 vertices, edge probabilities 0.2..=0.8,
    /// half the pairs non-isomorphic with a 10/20/70 round split, and an
    /// 80:20 train/test split.
    pub fn baseline(total_count: usize, seed: u64) -> Self {
        Self {
            total_count,
            min_vertices: 7,
            max_vertices: 11,
            min_edge_prob: 0.2,
            max_edge_prob: 0.8,
            non_isomorphic_fraction: 0.5,
            wl_round_one_fraction: 0.1,
            wl_round_two_fraction: 0.2,
            shuffled_isomorphic_fraction: 0.5,
            train_fraction: 0.8,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_count < 1 {
            return Err(PvgError::Config("total_count must be at least 1".into()));
        }
        if self.min_vertices < 2 || self.max_vertices > 32 || self.min_vertices > self.max_vertices
        {
            return Err(PvgError::Config(
                "vertex range must satisfy 2 <= min <= max <= 32".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.min_edge_prob)
            || !(0.0..=1.0).contains(&self.max_edge_prob)
            || self.min_edge_prob > self.max_edge_prob
        {
            return Err(PvgError::Config(
                "edge probability range must lie in [0,1]".into(),
            ));
        }
        for (name, f) in [
            ("non_isomorphic_fraction", self.non_isomorphic_fraction),
            ("wl_round_one_fraction", self.wl_round_one_fraction),
            ("wl_round_two_fraction", self.wl_round_two_fraction),
            (
                "shuffled_isomorphic_fraction",
                self.shuffled_isomorphic_fraction,
            ),
            ("train_fraction", self.train_fraction),
        ] {
            if !(0.0..=1.0).contains(&f) {
                return Err(PvgError::Config(format!(
                    "{name} must lie in [0,1], got {f}"
                )));
            }
        }
        if self.wl_round_one_fraction + self.wl_round_two_fraction > 1.0 + 1e-12 {
            return Err(PvgError::Config(
                "round-one and round-two fractions exceed 1".into(),
            ));
        }
        Ok(())
    }

    /// The (vertex count, edge probability) grid, in lexicographic order.
    /// The edge-probability range is discretised into as many evenly spaced
    /// values as there are vertex counts.
    pub fn cells(&self) -> Vec<(usize, f64)> {
        let sizes: Vec<usize> = (self.min_vertices..=self.max_vertices).collect();
        let steps = sizes.len();
        let probs: Vec<f64> = if steps == 1 || self.max_edge_prob == self.min_edge_prob {
            vec![self.min_edge_prob]
        } else {
            (0..steps)
                .map(|i| {
                    self.min_edge_prob
                        + (self.max_edge_prob - self.min_edge_prob) * i as f64 / (steps - 1) as f64
                })
                .collect()
        };
        let mut cells = Vec::with_capacity(sizes.len() * probs.len());
        for &n in &sizes {
            for &p in &probs {
                cells.push((n, p));
            }
        }
        cells
    }

    /// Exact generation targets after rounding: non-isomorphic total, the
    /// three round buckets (1, 2, >2), shuffled-isomorphic and fresh-isomorphic
    /// counts. Rounding is floor with every remainder pushed to the ">2"
    /// bucket (respectively the fresh-isomorphic group).
    pub fn targets(&self) -> DatasetTargets {
        let non_iso = (self.total_count as f64 * self.non_isomorphic_fraction).floor() as usize;
        let round1 = (non_iso as f64 * self.wl_round_one_fraction).floor() as usize;
        let round2 = (non_iso as f64 * self.wl_round_two_fraction).floor() as usize;
        let round_gt2 = non_iso - round1 - round2;
        let iso = self.total_count - non_iso;
        let shuffled = (iso as f64 * self.shuffled_isomorphic_fraction).floor() as usize;
        let fresh = iso - shuffled;
        DatasetTargets {
            non_iso,
            round1,
            round2,
            round_gt2,
            shuffled,
            fresh,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetTargets {
    pub non_iso: usize,
    pub round1: usize,
    pub round2: usize,
    pub round_gt2: usize,
    pub shuffled: usize,
    pub fresh: usize,
}

/// Which side of the train/test split a pair landed on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Split::Train => write!(f, "train"),
            Split::Test => write!(f, "test"),
        }
    }
}

/// One labelled graph pair, as serialised to the dataset file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GraphPair {
    /// Sorted `[u, v]` edge lists with `u < v`.
    pub left: Vec<[usize; 2]>,
    pub right: Vec<[usize; 2]>,
    pub left_vertices: usize,
    pub right_vertices: usize,
    /// 1 = isomorphic, 0 = non-isomorphic.
    pub label: u8,
    /// Distinguishing refinement round; absent for isomorphic pairs and for
    /// non-isomorphic pairs colour refinement never separates.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wl_round: Option<usize>,
    pub split: Split,
}

impl GraphPair {
    pub fn left_graph(&self) -> Result<Graph> {
        edges_to_graph(self.left_vertices, &self.left)
    }

    pub fn right_graph(&self) -> Result<Graph> {
        edges_to_graph(self.right_vertices, &self.right)
    }

    /// Re-check the structural invariants: isomorphic pairs carry no round,
    /// recorded rounds match a fresh refinement run.
    pub fn validate(&self) -> Result<()> {
        if self.label == 1 && self.wl_round.is_some() {
            return Err(PvgError::Domain(
                "isomorphic pair carries a wl_round".into(),
            ));
        }
        let l = self.left_graph()?;
        let r = self.right_graph()?;
        let recomputed = wl_distinguishing_round(&l, &r, 64).round();
        if self.label == 0 {
            if recomputed != self.wl_round {
                return Err(PvgError::Domain(format!(
                    "recorded wl_round {:?} disagrees with recomputed {:?}",
                    self.wl_round, recomputed
                )));
            }
        } else if recomputed.is_some() {
            return Err(PvgError::Domain(
                "isomorphic pair distinguished by refinement".into(),
            ));
        }
        Ok(())
    }
}

fn edges_to_graph(n: usize, edges: &[[usize; 2]]) -> Result<Graph> {
    let pairs: Vec<(usize, usize)> = edges.iter().map(|&[u, v]| (u, v)).collect();
    Graph::from_edges(n, &pairs)
}

fn graph_to_pair_side(g: &Graph) -> (Vec<[usize; 2]>, usize) {
    (g.edge_list(), g.vertex_count())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum RoundBucket {
    One,
    Two,
    AboveTwo,
}

impl RoundBucket {
    fn name(self) -> &'static str {
        match self {
            RoundBucket::One => "wl-round-1",
            RoundBucket::Two => "wl-round-2",
            RoundBucket::AboveTwo => "wl-round->2",
        }
    }

    fn matches(self, outcome: WlOutcome) -> bool {
        match (self, outcome) {
            (RoundBucket::One, WlOutcome::Distinguished(1)) => true,
            (RoundBucket::Two, WlOutcome::Distinguished(2)) => true,
            (RoundBucket::AboveTwo, WlOutcome::Distinguished(r)) => r > 2,
            (RoundBucket::AboveTwo, WlOutcome::NotDistinguished) => true,
            _ => false,
        }
    }
}

/// Generate the dataset described by `config`.
///
/// Non-isomorphic pair counts per grid cell are as equal as the bucket quotas
/// allow: the hard bucket is placed first and a cell that exhausts its retry
/// streak hands the slot to the next cell in lexicographic order, so the
/// global bucket counts are always exact.
pub fn generate_graph_pair_dataset(config: &GraphDatasetConfig) -> Result<Vec<GraphPair>> {
    config.validate()?;
    let targets = config.targets();
    let cells = config.cells();
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);

    // Equal split of the non-isomorphic quota across cells, remainder to the
    // earliest cells in lexicographic order.
    let base = targets.non_iso / cells.len();
    let rem = targets.non_iso % cells.len();
    let mut room: Vec<usize> = (0..cells.len())
        .map(|i| base + usize::from(i < rem))
        .collect();

    let mut non_iso: Vec<(Graph, Graph, Option<usize>, usize)> =
        Vec::with_capacity(targets.non_iso);
    // Hard bucket first so it gets first claim on the cells able to produce it.
    for (bucket, quota) in [
        (RoundBucket::AboveTwo, targets.round_gt2),
        (RoundBucket::Two, targets.round2),
        (RoundBucket::One, targets.round1),
    ] {
        fill_bucket(bucket, quota, &cells, &mut room, &mut non_iso, &mut rng)?;
    }

    let mut pairs: Vec<GraphPair> = non_iso
        .iter()
        .map(|(l, r, round, _)| {
            let (left, left_vertices) = graph_to_pair_side(l);
            let (right, right_vertices) = graph_to_pair_side(r);
            GraphPair {
                left,
                right,
                left_vertices,
                right_vertices,
                label: 0,
                wl_round: *round,
                split: Split::Train,
            }
        })
        .collect();

    // Step two: isomorphic pairs by shuffling members of the non-isomorphic pool.
    for _ in 0..targets.shuffled {
        if non_iso.is_empty() {
            return Err(PvgError::Generation(
                "no non-isomorphic pairs available to shuffle".into(),
            ));
        }
        let source = &non_iso[rng.random_range(0..non_iso.len())];
        let g = if rng.random::<f64>() < 0.5 {
            &source.0
        } else {
            &source.1
        };
        pairs.push(isomorphic_pair_from(g, &mut rng));
    }

    // Step three: isomorphic pairs from fresh samples, cells in round-robin.
    for i in 0..targets.fresh {
        let (n, p) = cells[i % cells.len()];
        let g = Graph::sample_er(n, p, &mut rng);
        pairs.push(isomorphic_pair_from(&g, &mut rng));
    }

    // Seeded shuffle, then split by position.
    pairs.shuffle(&mut rng);
    let train_count = (config.train_fraction * config.total_count as f64).floor() as usize;
    for (i, pair) in pairs.iter_mut().enumerate() {
        pair.split = if i < train_count {
            Split::Train
        } else {
            Split::Test
        };
    }
    Ok(pairs)
}

fn isomorphic_pair_from<R: rand::Rng>(g: &Graph, rng: &mut R) -> GraphPair {
    let mut perm: Vec<usize> = (0..g.vertex_count()).collect();
    perm.shuffle(rng);
    let shuffled = g.permuted(&perm);
    let (left, left_vertices) = graph_to_pair_side(g);
    let (right, right_vertices) = graph_to_pair_side(&shuffled);
    GraphPair {
        left,
        right,
        left_vertices,
        right_vertices,
        label: 1,
        wl_round: None,
        split: Split::Train,
    }
}

fn fill_bucket(
    bucket: RoundBucket,
    quota: usize,
    cells: &[(usize, f64)],
    room: &mut [usize],
    out: &mut Vec<(Graph, Graph, Option<usize>, usize)>,
    rng: &mut ChaCha12Rng,
) -> Result<()> {
    let mut exhausted = vec![false; cells.len()];
    let mut cell_cursor = 0usize;
    for _slot in 0..quota {
        let mut attempts = 0usize;
        loop {
            // Move to the next cell with room that is not written off.
            let mut scanned = 0;
            while scanned < cells.len() && (room[cell_cursor] == 0 || exhausted[cell_cursor]) {
                cell_cursor = (cell_cursor + 1) % cells.len();
                scanned += 1;
            }
            if scanned == cells.len() && (room[cell_cursor] == 0 || exhausted[cell_cursor]) {
                return Err(PvgError::Generation(format!(
                    "bucket {} unsatisfiable: no grid cell can supply further pairs",
                    bucket.name()
                )));
            }
            let cell = cell_cursor;
            let (n, p) = cells[cell];
            let mut streak = 0usize;
            let mut found = None;
            while streak < CELL_STREAK_CAP && attempts < ATTEMPT_CAP {
                attempts += 1;
                streak += 1;
                let left = Graph::sample_er(n, p, rng);
                let use_rewire = bucket == RoundBucket::AboveTwo && streak > INDEPENDENT_PROBE;
                let right = if use_rewire {
                    match degree_matched_rewire(&left, rng) {
                        Some(g) => g,
                        None => continue,
                    }
                } else {
                    Graph::sample_er(n, p, rng)
                };
                let outcome = wl_distinguishing_round(&left, &right, n.max(8));
                if !bucket.matches(outcome) {
                    continue;
                }
                if outcome == WlOutcome::NotDistinguished {
                    // Refinement never separated them: certify non-isomorphism
                    // by permutation search, or skip when too large for it.
                    if n > BRUTE_FORCE_CAP || is_isomorphic_bruteforce(&left, &right) {
                        continue;
                    }
                }
                found = Some((left, right, outcome.round()));
                break;
            }
            match found {
                Some((l, r, round)) => {
                    room[cell] -= 1;
                    out.push((l, r, round, cell));
                    // Spread consecutive slots over the grid.
                    cell_cursor = (cell_cursor + 1) % cells.len();
                    break;
                }
                None if attempts >= ATTEMPT_CAP => {
                    return Err(PvgError::Generation(format!(
                        "bucket {} unsatisfiable: attempt cap {} reached",
                        bucket.name(),
                        ATTEMPT_CAP
                    )));
                }
                None => {
                    exhausted[cell] = true;
                }
            }
        }
    }
    Ok(())
}

/// Rewire one graph by a double edge swap whose endpoints match in degree:
/// replace edges (a,b),(c,d) with (a,c),(b,d) where deg(b)=deg(c) and
/// deg(a)=deg(d). Such a swap preserves every vertex degree and every
/// (degree, neighbour-degree multiset) signature, so colour refinement
/// cannot separate the result from the original before round three.
fn degree_matched_rewire<R: rand::Rng>(g: &Graph, rng: &mut R) -> Option<Graph> {
    let edges = g.edge_list();
    if edges.len() < 2 {
        return None;
    }
    for _ in 0..SWAP_TRIES {
        let e = edges[rng.random_range(0..edges.len())];
        let f = edges[rng.random_range(0..edges.len())];
        let (a, b) = if rng.random::<f64>() < 0.5 {
            (e[0], e[1])
        } else {
            (e[1], e[0])
        };
        let (c, d) = if rng.random::<f64>() < 0.5 {
            (f[0], f[1])
        } else {
            (f[1], f[0])
        };
        if a == c || a == d || b == c || b == d {
            continue;
        }
        if g.degree(b) != g.degree(c) || g.degree(a) != g.degree(d) {
            continue;
        }
        if g.has_edge(a, c) || g.has_edge(b, d) {
            continue;
        }
        let mut new_edges: Vec<(usize, usize)> = edges
            .iter()
            .filter(|&&x| x != e && x != f)
            .map(|&[u, v]| (u, v))
            .collect();
        new_edges.push((a, c));
        new_edges.push((b, d));
        return Graph::from_edges(g.vertex_count(), &new_edges).ok();
    }
    None
}

/// Write pairs as JSON lines.
pub fn write_jsonl<P: AsRef<Path>>(path: P, pairs: &[GraphPair]) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for pair in pairs {
        serde_json::to_writer(&mut file, pair)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

/// Read pairs back from a JSON-lines file.
pub fn read_jsonl<P: AsRef<Path>>(path: P) -> Result<Vec<GraphPair>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for line in file.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

/// View a dataset slice as a decision problem with a uniform prior
/// (instance `i` is pair `i`, label = isomorphism).
pub fn dataset_problem(pairs: &[GraphPair], split: Option<Split>) -> Result<DecisionProblem> {
    let selected: Vec<(usize, &GraphPair)> = pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| split.is_none_or(|s| p.split == s))
        .collect();
    if selected.is_empty() {
        return Err(PvgError::Domain("empty dataset selection".into()));
    }
    let names = selected.iter().map(|(i, _)| format!("pair{i}")).collect();
    let labels = selected.iter().map(|(_, p)| p.label).collect();
    let w = 1.0 / selected.len() as f64;
    let mut prior = vec![w; selected.len()];
    // Nudge the last weight so the prior sums to exactly one.
    let total: f64 = prior.iter().sum();
    *prior.last_mut().unwrap() += 1.0 - total;
    DecisionProblem::new_degenerate(names, labels, prior)
}
