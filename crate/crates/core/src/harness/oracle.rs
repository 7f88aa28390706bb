//! Exhaustive matching oracle: all-pairs shortest paths plus enumeration of
//! every pairing, used as ground truth for the engine.

use crate::engine::{EngineError, MatchPair, MatchTarget, Matching};
use crate::model::{DetectorId, Endpoint, MatchingGraph, ObservableMask};
use crate::scalar::Real;

/// Largest event count the oracle accepts.
pub const MAX_ORACLE_EVENTS: usize = 14;

/// Oracle solution with the weight of the best pairing that differs from it.
#[derive(Clone, Debug)]
pub struct OracleSolution<W> {
    pub matching: Matching<W>,
    pub runner_up: Option<W>,
}

impl<W: Real> OracleSolution<W> {
    /// Whether the optimum beats every other pairing by more than `gap`.
    pub fn is_unique(&self, gap: f64) -> bool {
        self.runner_up
            .is_none_or(|r| (r - self.matching.total_weight).as_f64() > gap)
    }
}

struct Paths<W> {
    dist: Vec<Vec<W>>,
    mask: Vec<Vec<ObservableMask>>,
    boundary: Vec<(W, ObservableMask)>,
}

/// Floyd-Warshall over detectors; the boundary is a sink, never a waypoint.
fn all_pairs<W: Real>(graph: &MatchingGraph<W>) -> Paths<W> {
    let n = graph.num_detectors() as usize;
    let inf = W::infinity();
    let mut dist = vec![vec![inf; n]; n];
    let mut mask = vec![vec![0; n]; n];
    let mut boundary = vec![(inf, 0); n];
    for (i, row) in dist.iter_mut().enumerate() {
        row[i] = W::zero();
    }
    for e in graph.edges() {
        let a = e.a.0 as usize;
        match e.b {
            Endpoint::Detector(b) => {
                let b = b.0 as usize;
                if e.weight < dist[a][b] {
                    dist[a][b] = e.weight;
                    dist[b][a] = e.weight;
                    mask[a][b] = e.observables;
                    mask[b][a] = e.observables;
                }
            }
            Endpoint::Boundary => {
                if e.weight < boundary[a].0 {
                    boundary[a] = (e.weight, e.observables);
                }
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            if dist[i][k] == inf {
                continue;
            }
            for j in 0..n {
                let through = dist[i][k] + dist[k][j];
                if through < dist[i][j] {
                    dist[i][j] = through;
                    mask[i][j] = mask[i][k] ^ mask[k][j];
                }
            }
        }
    }
    let direct = boundary.clone();
    for i in 0..n {
        for (v, &(w, m)) in direct.iter().enumerate() {
            let through = dist[i][v] + w;
            if through < boundary[i].0 {
                boundary[i] = (through, mask[i][v] ^ m);
            }
        }
    }
    Paths { dist, mask, boundary }
}

#[derive(Clone, Copy)]
struct Best<W> {
    weight: W,
    runner_up: W,
    /// Partner slot of the lowest event in the subset; `usize::MAX` is the boundary.
    choice: usize,
}

pub fn oracle_decode<W: Real>(
    graph: &MatchingGraph<W>,
    events: &[DetectorId],
) -> Result<Matching<W>, EngineError> {
    oracle_solve(graph, events).map(|s| s.matching)
}

/// Minimum over all pairings of events to events or the graph boundary. Equal
/// weights resolve to the lexicographically smallest sorted pair list.
pub fn oracle_solve<W: Real>(
    graph: &MatchingGraph<W>,
    events: &[DetectorId],
) -> Result<OracleSolution<W>, EngineError> {
    if events.len() > MAX_ORACLE_EVENTS {
        return Err(EngineError::TooManyEvents(events.len()));
    }
    let mut ev: Vec<DetectorId> = events.to_vec();
    ev.sort_unstable();
    for w in ev.windows(2) {
        if w[0] == w[1] {
            return Err(EngineError::DuplicateEvent(w[0]));
        }
    }
    if let Some(&e) = ev.iter().find(|e| e.0 >= graph.num_detectors()) {
        return Err(EngineError::EventOutOfRange(e));
    }
    let paths = all_pairs(graph);
    let n = ev.len();
    let idx: Vec<usize> = ev.iter().map(|e| e.0 as usize).collect();
    let inf = W::infinity();
    let full = (1usize << n) - 1;
    let mut table = vec![Best { weight: inf, runner_up: inf, choice: usize::MAX }; full + 1];
    table[0] = Best { weight: W::zero(), runner_up: inf, choice: usize::MAX };
    for set in 1..=full {
        let i = set.trailing_zeros() as usize;
        let rest = set & !(1 << i);
        let mut best = Best { weight: inf, runner_up: inf, choice: usize::MAX };
        let offer = |w: W, r: W, choice: usize, best: &mut Best<W>| {
            // Boundary sorts after every event, so visiting events in
            // ascending order first keeps the lexicographic rule on ties.
            if w < best.weight {
                best.runner_up = best.weight.min(r);
                best.weight = w;
                best.choice = choice;
            } else {
                best.runner_up = best.runner_up.min(w);
            }
            best.runner_up = best.runner_up.min(r);
        };
        for j in i + 1..n {
            if rest & (1 << j) != 0 {
                let sub = table[rest & !(1 << j)];
                let d = paths.dist[idx[i]][idx[j]];
                offer(d + sub.weight, d + sub.runner_up, j, &mut best);
            }
        }
        let sub = table[rest];
        let b = paths.boundary[idx[i]].0;
        offer(b + sub.weight, b + sub.runner_up, usize::MAX, &mut best);
        table[set] = best;
    }
    let root = table[full];
    if root.weight == inf {
        return Err(EngineError::Unmatchable);
    }
    let mut pairs = Vec::new();
    let mut set = full;
    while set != 0 {
        let i = set.trailing_zeros() as usize;
        let choice = table[set].choice;
        set &= !(1 << i);
        if choice == usize::MAX {
            let (w, m) = paths.boundary[idx[i]];
            pairs.push(MatchPair { event: ev[i], target: MatchTarget::GraphBoundary, weight: w, observables: m });
        } else {
            set &= !(1 << choice);
            pairs.push(MatchPair {
                event: ev[i],
                target: MatchTarget::Event(ev[choice]),
                weight: paths.dist[idx[i]][idx[choice]],
                observables: paths.mask[idx[i]][idx[choice]],
            });
        }
    }
    let runner_up = Some(root.runner_up).filter(|r| *r < inf);
    Ok(OracleSolution { matching: Matching::from_pairs(pairs), runner_up })
}
