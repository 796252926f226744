//! Structured hub Markov chain: graph construction, shortest distances,
//! start/trap sampling, and the attempt verifier.
//!
//! States `0..n_states` are grouped into `n_hubs` ordered hubs of `m` states.
//! Transitions are local within a hub (positions within `local_window`,
//! self-loops included) plus sparse boundary edges into the next hub. The
//! last state is an absorbing terminal with no outgoing edges. An attempt is
//! a token sequence of state ids; it earns reward 1 iff it reaches the
//! terminal over valid edges, never decreases the state id, avoids the trap
//! (trap variant), and has length equal to the shortest-path distance.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// State identifier; also the token id emitted by the policy.
pub type StateId = u16;

#[derive(Debug, Error)]
pub enum ChainError {
    #[error("m must be at least 2, got {0}")]
    TooFewStatesPerHub(usize),
    #[error("n_hubs must be at least 1, got {0}")]
    NoHubs(usize),
    #[error("trap variant requires two last-hub predecessors of the terminal; found {found}")]
    NoTrapCandidates { found: usize },
    #[error("no eligible start state (every candidate start is cut off from the terminal)")]
    NoEligibleStart,
}

/// Chain construction parameters. Intra-hub edges are deterministic; only
/// the boundary connections between consecutive hubs depend on `seed`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub n_hubs: usize,
    pub m: usize,
    pub local_window: usize,
    pub boundary_edges_per_pair: usize,
    pub seed: u64,
}

impl ChainSpec {
    pub fn new(n_hubs: usize, m: usize, seed: u64) -> Self {
        Self {
            n_hubs,
            m,
            local_window: 1,
            boundary_edges_per_pair: 1,
            seed,
        }
    }

    pub fn with_local_window(mut self, w: usize) -> Self {
        self.local_window = w;
        self
    }

    pub fn with_boundary_edges(mut self, b: usize) -> Self {
        self.boundary_edges_per_pair = b;
        self
    }

    pub fn n_states(&self) -> usize {
        self.n_hubs * self.m
    }

    pub fn terminal(&self) -> StateId {
        (self.n_states() - 1) as StateId
    }

    /// Stable hash of the construction parameters, stored in policy
    /// checkpoints so a checkpoint is never replayed against a different
    /// graph.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf2_9ce4_8422_2325u64;
        for v in [
            self.n_hubs as u64,
            self.m as u64,
            self.local_window as u64,
            self.boundary_edges_per_pair as u64,
            self.seed,
        ] {
            h ^= v;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

/// Trap realization for one trajectory: either no trap or one of the two
/// pre-terminal candidates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrapAssignment {
    pub trap: Option<StateId>,
}

impl TrapAssignment {
    pub const NONE: TrapAssignment = TrapAssignment { trap: None };

    pub fn at(state: StateId) -> Self {
        Self { trap: Some(state) }
    }
}

/// Verifier outcome for one attempt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VerdictReason {
    Ok,
    NotTerminal,
    InvalidTransition,
    NonMonotone,
    WrongLength,
    HitTrap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VerifierVerdict {
    pub success: bool,
    pub reason: VerdictReason,
}

impl VerifierVerdict {
    fn ok() -> Self {
        Self {
            success: true,
            reason: VerdictReason::Ok,
        }
    }

    fn fail(reason: VerdictReason) -> Self {
        debug_assert!(reason != VerdictReason::Ok);
        Self {
            success: false,
            reason,
        }
    }
}

/// An immutable chain instance: adjacency, trap candidates, reachability,
/// and precomputed shortest distances for every trap assignment that can
/// occur (none plus each candidate).
#[derive(Debug, Clone)]
pub struct ChainInstance {
    pub spec: ChainSpec,
    /// Sorted successor lists, one per state. The terminal row is empty.
    pub adjacency: Vec<Vec<StateId>>,
    /// The two pre-terminal states of the last hub, ascending, when the
    /// geometry provides them.
    pub trap_candidates: Option<(StateId, StateId)>,
    /// States from which the terminal is reachable in the full graph
    /// (backtracking allowed).
    pub reachable: Vec<bool>,
    dists: Vec<(Option<StateId>, Vec<Option<u32>>)>,
}

impl ChainInstance {
    pub fn n_states(&self) -> usize {
        self.spec.n_states()
    }

    pub fn terminal(&self) -> StateId {
        self.spec.terminal()
    }

    pub fn has_edge(&self, from: StateId, to: StateId) -> bool {
        self.adjacency[from as usize].binary_search(&to).is_ok()
    }

    pub fn successors(&self, from: StateId) -> &[StateId] {
        &self.adjacency[from as usize]
    }

    /// Precomputed monotone shortest distances under `trap`. Panics if a
    /// trap outside the candidate pair is supplied.
    pub fn distances(&self, trap: TrapAssignment) -> &[Option<u32>] {
        self.dists
            .iter()
            .find(|(t, _)| *t == trap.trap)
            .map(|(_, d)| d.as_slice())
            .expect("trap assignment must be none or one of the instance candidates")
    }

    pub fn hub_of(&self, state: StateId) -> usize {
        state as usize / self.spec.m
    }

    /// First state of the last hub; trap-variant starts must lie below it.
    pub fn last_hub_start(&self) -> StateId {
        ((self.spec.n_hubs - 1) * self.spec.m) as StateId
    }
}

/// Build the chain graph. Deterministic given the spec.
pub fn build_chain(spec: &ChainSpec) -> Result<ChainInstance, ChainError> {
    if spec.n_hubs < 1 {
        return Err(ChainError::NoHubs(spec.n_hubs));
    }
    if spec.m < 2 {
        return Err(ChainError::TooFewStatesPerHub(spec.m));
    }
    let n = spec.n_states();
    let terminal = spec.terminal();
    let mut adj: Vec<Vec<StateId>> = vec![Vec::new(); n];

    // Intra-hub edges: symmetric within local_window positions, self-loops
    // included, nothing out of the terminal.
    for u in 0..n {
        if u as StateId == terminal {
            continue;
        }
        let hub = u / spec.m;
        let pos = u % spec.m;
        let lo = pos.saturating_sub(spec.local_window);
        let hi = (pos + spec.local_window).min(spec.m - 1);
        for q in lo..=hi {
            let v = (hub * spec.m + q) as StateId;
            adj[u].push(v);
        }
    }

    // Boundary edges: the first one leaves from the hub's last state, the
    // extras from seeded sources; all targets are seeded in the next hub.
    let mut rng = StdRng::seed_from_u64(spec.seed);
    for hub in 0..spec.n_hubs - 1 {
        let hub_first = hub * spec.m;
        let next_first = (hub + 1) * spec.m;
        for e in 0..spec.boundary_edges_per_pair {
            let src = if e == 0 {
                hub_first + spec.m - 1
            } else {
                hub_first + rng.gen_range(0..spec.m)
            };
            let dst = (next_first + rng.gen_range(0..spec.m)) as StateId;
            adj[src].push(dst);
        }
    }

    for row in &mut adj {
        row.sort_unstable();
        row.dedup();
    }

    // Two largest last-hub predecessors of the terminal, if present.
    let last_hub_first = (spec.n_hubs - 1) * spec.m;
    let mut preds: Vec<StateId> = (last_hub_first..n - 1)
        .map(|s| s as StateId)
        .filter(|s| adj[*s as usize].binary_search(&terminal).is_ok())
        .collect();
    preds.sort_unstable();
    let trap_candidates = if preds.len() >= 2 {
        Some((preds[preds.len() - 2], preds[preds.len() - 1]))
    } else {
        None
    };

    let reachable = reverse_reachable(&adj, terminal);

    let mut inst = ChainInstance {
        spec: spec.clone(),
        adjacency: adj,
        trap_candidates,
        reachable,
        dists: Vec::new(),
    };
    inst.dists
        .push((None, bfs_distances(&inst, TrapAssignment::NONE)));
    if let Some((a, b)) = trap_candidates {
        for c in [a, b] {
            inst.dists
                .push((Some(c), bfs_distances(&inst, TrapAssignment::at(c))));
        }
    }
    Ok(inst)
}

fn reverse_reachable(adj: &[Vec<StateId>], terminal: StateId) -> Vec<bool> {
    let n = adj.len();
    let mut rev: Vec<Vec<StateId>> = vec![Vec::new(); n];
    for (u, row) in adj.iter().enumerate() {
        for &v in row {
            rev[v as usize].push(u as StateId);
        }
    }
    let mut seen = vec![false; n];
    let mut stack = vec![terminal];
    seen[terminal as usize] = true;
    while let Some(s) = stack.pop() {
        for &p in &rev[s as usize] {
            if !seen[p as usize] {
                seen[p as usize] = true;
                stack.push(p);
            }
        }
    }
    seen
}

fn bfs_distances(inst: &ChainInstance, trap: TrapAssignment) -> Vec<Option<u32>> {
    let n = inst.n_states();
    let terminal = inst.terminal();
    let mut dist: Vec<Option<u32>> = vec![None; n];
    if trap.trap == Some(terminal) {
        return dist;
    }
    // Reverse BFS over the monotone subgraph (strictly increasing edges)
    // with the trap node excised.
    let mut rev: Vec<Vec<StateId>> = vec![Vec::new(); n];
    for (u, row) in inst.adjacency.iter().enumerate() {
        if trap.trap == Some(u as StateId) {
            continue;
        }
        for &v in row {
            if v as usize > u && trap.trap != Some(v) {
                rev[v as usize].push(u as StateId);
            }
        }
    }
    dist[terminal as usize] = Some(0);
    let mut frontier = vec![terminal];
    let mut d = 0u32;
    while !frontier.is_empty() {
        d += 1;
        let mut next = Vec::new();
        for &s in &frontier {
            for &p in &rev[s as usize] {
                if dist[p as usize].is_none() {
                    dist[p as usize] = Some(d);
                    next.push(p);
                }
            }
        }
        frontier = next;
    }
    dist
}

/// Shortest monotone distances to the terminal with the trap removed;
/// `None` marks states that cannot reach it.
pub fn shortest_distances(inst: &ChainInstance, trap: TrapAssignment) -> Vec<Option<u32>> {
    match inst.dists.iter().find(|(t, _)| *t == trap.trap) {
        Some((_, d)) => d.clone(),
        None => bfs_distances(inst, trap),
    }
}

/// Start states that are legal for the given mode: the terminal is never a
/// start, the state must reach the terminal, and in the trap variant the
/// start must sit in a hub before the last one and survive either candidate
/// trap.
pub fn eligible_starts(inst: &ChainInstance, trap_variant: bool) -> Vec<StateId> {
    let terminal = inst.terminal();
    let mut out = Vec::new();
    for s in 0..inst.n_states() as StateId {
        if s == terminal {
            continue;
        }
        let ok = if trap_variant {
            match inst.trap_candidates {
                Some((a, b)) => {
                    s < inst.last_hub_start()
                        && inst.distances(TrapAssignment::at(a))[s as usize].is_some()
                        && inst.distances(TrapAssignment::at(b))[s as usize].is_some()
                }
                None => false,
            }
        } else {
            inst.distances(TrapAssignment::NONE)[s as usize].is_some()
        };
        if ok {
            out.push(s);
        }
    }
    out
}

/// Uniform draw over the eligible start states.
pub fn sample_start(
    inst: &ChainInstance,
    trap_variant: bool,
    rng: &mut StdRng,
) -> Result<StateId, ChainError> {
    let starts = eligible_starts(inst, trap_variant);
    if starts.is_empty() {
        return Err(ChainError::NoEligibleStart);
    }
    Ok(starts[rng.gen_range(0..starts.len())])
}

/// Fair coin between the two trap candidates.
pub fn sample_trap(inst: &ChainInstance, rng: &mut StdRng) -> Result<TrapAssignment, ChainError> {
    let (a, b) = inst
        .trap_candidates
        .ok_or(ChainError::NoTrapCandidates { found: 0 })?;
    Ok(TrapAssignment::at(if rng.gen_bool(0.5) { a } else { b }))
}

/// Check one attempt. Checks run in a fixed order so failure reasons are
/// deterministic: trap hit, invalid transition, monotonicity, terminal,
/// length. An empty token sequence is judged from the start state.
pub fn verify_attempt(
    inst: &ChainInstance,
    start: StateId,
    tokens: &[StateId],
    trap: TrapAssignment,
) -> VerifierVerdict {
    if let Some(t) = trap.trap {
        if start == t || tokens.contains(&t) {
            return VerifierVerdict::fail(VerdictReason::HitTrap);
        }
    }
    let n = inst.n_states() as StateId;
    let mut prev = start;
    for &tok in tokens {
        if tok >= n || !inst.has_edge(prev, tok) {
            return VerifierVerdict::fail(VerdictReason::InvalidTransition);
        }
        prev = tok;
    }
    let mut prev = start;
    for &tok in tokens {
        if tok < prev {
            return VerifierVerdict::fail(VerdictReason::NonMonotone);
        }
        prev = tok;
    }
    let last = tokens.last().copied().unwrap_or(start);
    if last != inst.terminal() {
        return VerifierVerdict::fail(VerdictReason::NotTerminal);
    }
    let dist = match inst.dists.iter().find(|(t, _)| *t == trap.trap) {
        Some((_, d)) => d[start as usize],
        None => bfs_distances(inst, trap)[start as usize],
    };
    match dist {
        Some(d) if d as usize == tokens.len() => VerifierVerdict::ok(),
        _ => VerifierVerdict::fail(VerdictReason::WrongLength),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn line3() -> ChainInstance {
        build_chain(&ChainSpec::new(1, 3, 0)).unwrap()
    }

    #[test]
    fn thirty_state_instance_shape() {
        let spec = ChainSpec::new(5, 6, 0).with_local_window(2);
        let inst = build_chain(&spec).unwrap();
        assert_eq!(inst.n_states(), 30);
        assert_eq!(inst.terminal(), 29);
        assert_eq!(inst.trap_candidates, Some((27, 28)));
    }

    #[test]
    fn smallest_legal_chain() {
        let inst = build_chain(&ChainSpec::new(1, 2, 0)).unwrap();
        assert_eq!(inst.terminal(), 1);
        assert_eq!(inst.adjacency[0], vec![0, 1]);
        assert!(inst.adjacency[1].is_empty());
        assert!(inst.reachable.iter().all(|&r| r));
        // The terminal is never a start, so state 0 is the only candidate.
        assert_eq!(eligible_starts(&inst, false), vec![0]);
    }

    #[test]
    fn rejects_single_state_hubs() {
        assert!(matches!(
            build_chain(&ChainSpec::new(3, 1, 0)),
            Err(ChainError::TooFewStatesPerHub(1))
        ));
    }

    #[test]
    fn construction_is_deterministic() {
        let spec = ChainSpec::new(4, 5, 123).with_boundary_edges(2);
        let a = build_chain(&spec).unwrap();
        let b = build_chain(&spec).unwrap();
        assert_eq!(a.adjacency, b.adjacency);
    }

    #[test]
    fn reachable_matches_exhaustive_dfs() {
        let inst = build_chain(&ChainSpec::new(2, 3, 7)).unwrap();
        // Independent forward DFS from every state over the full graph.
        let n = inst.n_states();
        for s in 0..n as StateId {
            let mut seen = BTreeSet::new();
            let mut stack = vec![s];
            seen.insert(s);
            while let Some(u) = stack.pop() {
                for &v in inst.successors(u) {
                    if seen.insert(v) {
                        stack.push(v);
                    }
                }
            }
            assert_eq!(
                inst.reachable[s as usize],
                seen.contains(&inst.terminal()),
                "state {s}"
            );
        }
    }

    #[test]
    fn line_distances() {
        let inst = line3();
        let d = shortest_distances(&inst, TrapAssignment::NONE);
        assert_eq!(d, vec![Some(2), Some(1), Some(0)]);
    }

    #[test]
    fn distances_match_enumerated_monotone_paths() {
        let inst = build_chain(&ChainSpec::new(2, 3, 7)).unwrap();
        let d = shortest_distances(&inst, TrapAssignment::NONE);
        // Brute force: expand every strictly increasing walk.
        let n = inst.n_states() as StateId;
        for s in 0..n {
            let mut best: Option<u32> = if s == inst.terminal() { Some(0) } else { None };
            let mut frontier = vec![(s, 0u32)];
            while let Some((u, len)) = frontier.pop() {
                for &v in inst.successors(u) {
                    if v > u {
                        let l = len + 1;
                        if v == inst.terminal() {
                            best = Some(best.map_or(l, |b| b.min(l)));
                        } else if (l as usize) < n as usize {
                            frontier.push((v, l));
                        }
                    }
                }
            }
            assert_eq!(d[s as usize], best, "state {s}");
        }
    }

    #[test]
    fn trap_can_disconnect_a_start() {
        // Single boundary edge into the last hub; when its target is a trap
        // candidate and that candidate is trapped, the first hub is cut off.
        for seed in 0..64 {
            let spec = ChainSpec::new(2, 3, seed).with_local_window(2);
            let inst = build_chain(&spec).unwrap();
            let (a, b) = inst.trap_candidates.unwrap();
            assert_eq!((a, b), (3, 4));
            let target = inst.adjacency[2]
                .iter()
                .copied()
                .find(|&v| v > 2)
                .unwrap();
            if target == a {
                let d = inst.distances(TrapAssignment::at(a));
                assert_eq!(d[0], None);
                assert_eq!(d[1], None);
                return;
            }
        }
        panic!("no seed produced a boundary edge into a trap candidate");
    }

    #[test]
    fn start_sampling_is_uniform() {
        let inst = build_chain(&ChainSpec::new(2, 3, 7)).unwrap();
        let starts = eligible_starts(&inst, false);
        let mut rng = StdRng::seed_from_u64(9);
        let draws = 100_000;
        let mut counts = vec![0usize; inst.n_states()];
        for _ in 0..draws {
            counts[sample_start(&inst, false, &mut rng).unwrap() as usize] += 1;
        }
        let expected = draws as f64 / starts.len() as f64;
        let chi2: f64 = starts
            .iter()
            .map(|&s| {
                let o = counts[s as usize] as f64;
                (o - expected).powi(2) / expected
            })
            .sum();
        let df = (starts.len() - 1) as f64;
        assert!(chi2 < df + 6.0 * (2.0 * df).sqrt(), "chi2={chi2}");
        // Terminal never sampled.
        assert_eq!(counts[inst.terminal() as usize], 0);
    }

    #[test]
    fn trap_variant_starts_stay_before_last_hub() {
        // Seed 1 routes the hub-3 boundary edge past the trap candidates,
        // so every early-hub start survives either trap.
        let spec = ChainSpec::new(5, 6, 1).with_local_window(2);
        let inst = build_chain(&spec).unwrap();
        let mut rng = StdRng::seed_from_u64(3);
        for _ in 0..2000 {
            let s = sample_start(&inst, true, &mut rng).unwrap();
            assert!(s < 24);
        }
    }

    #[test]
    fn trap_sampling_is_a_fair_coin() {
        let spec = ChainSpec::new(5, 6, 0).with_local_window(2);
        let inst = build_chain(&spec).unwrap();
        let mut rng = StdRng::seed_from_u64(11);
        let draws = 100_000usize;
        let mut hits = 0usize;
        for _ in 0..draws {
            let t = sample_trap(&inst, &mut rng).unwrap();
            assert!(matches!(t.trap, Some(27) | Some(28)));
            if t.trap == Some(27) {
                hits += 1;
            }
        }
        let sigma = 0.5 * (draws as f64).sqrt();
        assert!((hits as f64 - draws as f64 * 0.5).abs() < 3.0 * sigma);
    }

    #[test]
    fn verifier_flags_backtracking() {
        let spec = ChainSpec::new(5, 6, 0).with_local_window(2);
        let inst = build_chain(&spec).unwrap();
        let v = verify_attempt(&inst, 0, &[2, 0, 1], TrapAssignment::NONE);
        assert_eq!(v.reason, VerdictReason::NonMonotone);
        assert!(!v.success);
    }

    #[test]
    fn empty_attempt_at_terminal_is_optimal() {
        let inst = line3();
        let v = verify_attempt(&inst, inst.terminal(), &[], TrapAssignment::NONE);
        assert!(v.success);
        let v = verify_attempt(&inst, 0, &[], TrapAssignment::NONE);
        assert_eq!(v.reason, VerdictReason::NotTerminal);
    }

    #[test]
    fn line_attempts() {
        let inst = line3();
        assert!(verify_attempt(&inst, 0, &[1, 2], TrapAssignment::NONE).success);
        let v = verify_attempt(&inst, 0, &[1, 1, 2], TrapAssignment::NONE);
        assert_eq!(v.reason, VerdictReason::WrongLength);
    }

    #[test]
    fn verifier_agrees_with_exhaustive_enumeration() {
        // Every token sequence of length <= 4 on a 6-state chain, compared
        // against an independent re-derivation of the success predicate.
        let spec = ChainSpec::new(2, 3, 7).with_local_window(2);
        let inst = build_chain(&spec).unwrap();
        let n = inst.n_states() as StateId;
        let start: StateId = 0;
        let dist = {
            // Independent Dijkstra-style relaxation on increasing edges.
            let mut d = vec![u32::MAX; n as usize];
            d[inst.terminal() as usize] = 0;
            for _ in 0..n {
                for u in 0..n {
                    for &v in inst.successors(u) {
                        if v > u && d[v as usize] != u32::MAX {
                            d[u as usize] = d[u as usize].min(d[v as usize] + 1);
                        }
                    }
                }
            }
            d
        };
        let mut checked = 0usize;
        let mut seqs: Vec<Vec<StateId>> = vec![vec![]];
        for _ in 0..4 {
            let mut next = Vec::new();
            for s in &seqs {
                for t in 0..n {
                    let mut s2 = s.clone();
                    s2.push(t);
                    next.push(s2);
                }
            }
            for s in &next {
                let expected = {
                    let mut ok = true;
                    let mut prev = start;
                    for &t in s {
                        if !inst.has_edge(prev, t) || t < prev {
                            ok = false;
                            break;
                        }
                        prev = t;
                    }
                    ok && prev == inst.terminal() && s.len() as u32 == dist[start as usize]
                };
                let got = verify_attempt(&inst, start, s, TrapAssignment::NONE);
                assert_eq!(got.success, expected, "sequence {s:?}");
                checked += 1;
            }
            seqs = next;
        }
        assert_eq!(checked, 6 + 36 + 216 + 1296);
    }

    #[test]
    fn verify_handles_arbitrary_trap_states() {
        // Traps outside the candidate pair have no precomputed distances;
        // the verifier falls back to a fresh search.
        let inst = line3();
        let v = verify_attempt(&inst, 0, &[1, 2], TrapAssignment::at(1));
        assert_eq!(v.reason, VerdictReason::HitTrap);
        let v = verify_attempt(&inst, 0, &[1, 2], TrapAssignment::at(0));
        assert_eq!(v.reason, VerdictReason::HitTrap);
    }

    #[test]
    fn removing_the_trap_never_increases_distance() {
        let spec = ChainSpec::new(3, 4, 5).with_local_window(2).with_boundary_edges(2);
        let inst = build_chain(&spec).unwrap();
        let free = shortest_distances(&inst, TrapAssignment::NONE);
        let (a, _) = inst.trap_candidates.unwrap();
        let trapped = shortest_distances(&inst, TrapAssignment::at(a));
        for s in 0..inst.n_states() {
            if let Some(dt) = trapped[s] {
                assert!(free[s].unwrap() <= dt);
            }
        }
    }

    #[test]
    fn witness_path_exists_for_every_finite_start() {
        let spec = ChainSpec::new(3, 4, 5).with_local_window(2);
        let inst = build_chain(&spec).unwrap();
        for trap in [TrapAssignment::NONE, TrapAssignment::at(inst.trap_candidates.unwrap().0)] {
            let d = shortest_distances(&inst, trap);
            for s in 0..inst.n_states() as StateId {
                let Some(ds) = d[s as usize] else { continue };
                // Greedy BFS witness: follow any increasing edge that
                // decreases the distance.
                let mut path = Vec::new();
                let mut cur = s;
                for _ in 0..ds {
                    let next = inst
                        .successors(cur)
                        .iter()
                        .copied()
                        .find(|&v| {
                            v > cur
                                && trap.trap != Some(v)
                                && d[v as usize] == Some(d[cur as usize].unwrap() - 1)
                        })
                        .expect("distance chain must continue");
                    path.push(next);
                    cur = next;
                }
                assert!(verify_attempt(&inst, s, &path, trap).success);
            }
        }
    }
}
