//! Undirected graphs, Erdős–Rényi sampling, colour refinement and a
//! permutation-search isomorphism check for small graphs.

use std::collections::BTreeMap;

use rand::RngExt;

use crate::{PvgError, Result};

/// An undirected graph without self-loops, stored as sorted adjacency lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    adj: Vec<Vec<usize>>,
}

impl Graph {
    /// Build from an edge list; duplicate edges collapse, self-loops error.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut adj = vec![Vec::new(); n];
        for &(u, v) in edges {
            if u == v {
                return Err(PvgError::Domain(format!("self-loop at vertex {u}")));
            }
            if u >= n || v >= n {
                return Err(PvgError::Domain(format!(
                    "edge ({u},{v}) out of range for n={n}"
                )));
            }
            if !adj[u].contains(&v) {
                adj[u].push(v);
                adj[v].push(u);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        Ok(Self { n, adj })
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn neighbours(&self, v: usize) -> &[usize] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].binary_search(&v).is_ok()
    }

    /// Sorted `[u, v]` pairs with `u < v`, the wire format for datasets.
    pub fn edge_list(&self) -> Vec<[usize; 2]> {
        let mut out = Vec::new();
        for u in 0..self.n {
            for &v in &self.adj[u] {
                if u < v {
                    out.push([u, v]);
                }
            }
        }
        out
    }

    /// Relabel vertices by the permutation `perm` (vertex `v` becomes `perm[v]`).
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let edges: Vec<(usize, usize)> = self
            .edge_list()
            .into_iter()
            .map(|[u, v]| (perm[u], perm[v]))
            .collect();
        Self::from_edges(self.n, &edges).expect("permutation preserves validity")
    }

    /// Erdős–Rényi sample G(n, p).
    pub fn sample_er<R: rand::Rng>(n: usize, p: f64, rng: &mut R) -> Self {
        let mut edges = Vec::new();
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.random::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        Self::from_edges(n, &edges).expect("generated edges are valid")
    }
}

/// Outcome of running colour refinement on a pair of graphs in lockstep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WlOutcome {
    /// First refinement round at which the colour multisets differ.
    Distinguished(usize),
    /// Colour multisets agreed up to stabilisation (or the round cap).
    NotDistinguished,
}

impl WlOutcome {
    pub fn round(self) -> Option<usize> {
        match self {
            WlOutcome::Distinguished(r) => Some(r),
            WlOutcome::NotDistinguished => None,
        }
    }
}

/// Run 1-dimensional colour refinement on both graphs in lockstep, starting
/// from a single shared colour, and report the first round at which the
/// colour multisets differ.
///
/// Graphs of different orders are distinguished at round 1 (their degree
/// multisets have different cardinality). Refinement stops once the joint
/// partition is stable or after `max(n, max_rounds)` rounds.
pub fn wl_distinguishing_round(left: &Graph, right: &Graph, max_rounds: usize) -> WlOutcome {
    assert!(max_rounds >= 1, "max_rounds must be at least 1");
    let n = left.vertex_count().max(right.vertex_count());
    let cap = n.max(max_rounds);

    let mut colours_l = vec![0u32; left.vertex_count()];
    let mut colours_r = vec![0u32; right.vertex_count()];
    let mut class_count = 1usize;

    for round in 1..=cap {
        // Shared palette so colour ids are comparable across the two graphs.
        let mut palette: BTreeMap<(u32, Vec<u32>), u32> = BTreeMap::new();
        let refine = |g: &Graph, colours: &[u32], palette: &mut BTreeMap<(u32, Vec<u32>), u32>| {
            let mut next = Vec::with_capacity(g.vertex_count());
            for v in 0..g.vertex_count() {
                let mut neigh: Vec<u32> = g.neighbours(v).iter().map(|&u| colours[u]).collect();
                neigh.sort_unstable();
                let key = (colours[v], neigh);
                let fresh = palette.len() as u32;
                let id = *palette.entry(key).or_insert(fresh);
                next.push(id);
            }
            next
        };
        let next_l = refine(left, &colours_l, &mut palette);
        let next_r = refine(right, &colours_r, &mut palette);

        if colour_histogram(&next_l) != colour_histogram(&next_r) {
            return WlOutcome::Distinguished(round);
        }
        let new_count = palette.len();
        colours_l = next_l;
        colours_r = next_r;
        if new_count == class_count && round >= 1 {
            // Partition stable and multisets equal: refinement cannot split further.
            return WlOutcome::NotDistinguished;
        }
        class_count = new_count;
    }
    WlOutcome::NotDistinguished
}

fn colour_histogram(colours: &[u32]) -> BTreeMap<u32, usize> {
    let mut h = BTreeMap::new();
    for &c in colours {
        *h.entry(c).or_insert(0) += 1;
    }
    h
}

/// Exhaustive isomorphism test by backtracking over vertex assignments,
/// pruned by degree. Intended for small graphs (the generator uses it only
/// up to the configured vertex cap); cost grows factorially beyond that.
pub fn is_isomorphic_bruteforce(left: &Graph, right: &Graph) -> bool {
    if left.vertex_count() != right.vertex_count() {
        return false;
    }
    let n = left.vertex_count();
    let mut deg_l: Vec<usize> = (0..n).map(|v| left.degree(v)).collect();
    let mut deg_r: Vec<usize> = (0..n).map(|v| right.degree(v)).collect();
    deg_l.sort_unstable();
    deg_r.sort_unstable();
    if deg_l != deg_r {
        return false;
    }

    let mut assignment = vec![usize::MAX; n];
    let mut used = vec![false; n];
    backtrack(left, right, 0, &mut assignment, &mut used)
}

fn backtrack(
    left: &Graph,
    right: &Graph,
    v: usize,
    assignment: &mut [usize],
    used: &mut [bool],
) -> bool {
    let n = left.vertex_count();
    if v == n {
        return true;
    }
    for candidate in 0..n {
        if used[candidate] || left.degree(v) != right.degree(candidate) {
            continue;
        }
        let consistent = (0..v)
            .all(|prev| left.has_edge(v, prev) == right.has_edge(candidate, assignment[prev]));
        if consistent {
            assignment[v] = candidate;
            used[candidate] = true;
            if backtrack(left, right, v + 1, assignment, used) {
                return true;
            }
            used[candidate] = false;
            assignment[v] = usize::MAX;
        }
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn triangle() -> Graph {
        Graph::from_edges(3, &[(0, 1), (1, 2), (2, 0)]).unwrap()
    }

    fn path3() -> Graph {
        Graph::from_edges(3, &[(0, 1), (1, 2)]).unwrap()
    }

    fn cycle(n: usize) -> Graph {
        let edges: Vec<(usize, usize)> = (0..n).map(|i| (i, (i + 1) % n)).collect();
        Graph::from_edges(n, &edges).unwrap()
    }

    fn two_triangles() -> Graph {
        Graph::from_edges(6, &[(0, 1), (1, 2), (2, 0), (3, 4), (4, 5), (5, 3)]).unwrap()
    }

    #[test]
    fn identical_graphs_are_never_distinguished() {
        let g = cycle(5);
        assert_eq!(
            wl_distinguishing_round(&g, &g.clone(), 16),
            WlOutcome::NotDistinguished
        );
    }

    #[test]
    fn triangle_vs_path_is_distinguished_at_round_one() {
        // Degree multisets {2,2,2} vs {1,2,1}.
        assert_eq!(
            wl_distinguishing_round(&triangle(), &path3(), 8),
            WlOutcome::Distinguished(1)
        );
    }

    #[test]
    fn six_cycle_vs_two_triangles_fools_colour_refinement() {
        let c6 = cycle(6);
        let tt = two_triangles();
        assert!(!is_isomorphic_bruteforce(&c6, &tt));
        assert_eq!(
            wl_distinguishing_round(&c6, &tt, 32),
            WlOutcome::NotDistinguished
        );
    }

    #[test]
    fn permuted_graphs_are_isomorphic_and_undistinguished() {
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        for _ in 0..20 {
            let n = 2 + rng.random_range(0..7usize);
            let g = Graph::sample_er(n, 0.4, &mut rng);
            let mut perm: Vec<usize> = (0..n).collect();
            use rand::seq::SliceRandom;
            perm.shuffle(&mut rng);
            let h = g.permuted(&perm);
            assert!(is_isomorphic_bruteforce(&g, &h));
            assert_eq!(
                wl_distinguishing_round(&g, &h, 16),
                WlOutcome::NotDistinguished
            );
        }
    }

    #[test]
    fn wl_monotone_once_distinguished() {
        // If distinguished at round r, any cap above r reports the same round,
        // and refinement keeps the graphs apart at deeper caps.
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        for _ in 0..50 {
            let n = 4 + rng.random_range(0..5usize);
            let g = Graph::sample_er(n, 0.5, &mut rng);
            let h = Graph::sample_er(n, 0.5, &mut rng);
            if let WlOutcome::Distinguished(r) = wl_distinguishing_round(&g, &h, 4) {
                for cap in r..=(r + 4) {
                    assert_eq!(
                        wl_distinguishing_round(&g, &h, cap),
                        WlOutcome::Distinguished(r)
                    );
                }
            }
        }
    }

    #[test]
    fn different_orders_split_at_round_one() {
        assert_eq!(
            wl_distinguishing_round(&triangle(), &cycle(4), 8),
            WlOutcome::Distinguished(1)
        );
    }

    #[test]
    fn edge_list_round_trip() {
        let g = Graph::from_edges(4, &[(2, 1), (0, 3), (1, 0)]).unwrap();
        assert_eq!(g.edge_list(), vec![[0, 1], [0, 3], [1, 2]]);
    }
}
