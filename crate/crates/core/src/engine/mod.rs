//! Exact minimum-weight perfect matching of detection events.
//!
//! Events are matched to each other, to the graph boundary, or (in block-scoped
//! views) to a block boundary whose crossing edge is free. Pair costs are
//! shortest-path distances; the pairing itself is solved by the blossom
//! algorithm on a boundary-doubled event graph.

mod blossom;
mod fusion;
mod search;

use std::collections::HashMap;

use thiserror::Error;

pub use blossom::min_cost_perfect_matching;
pub use fusion::{decode_block, fuse, BlockResult, OpenRegion};
pub use search::{SearchGraph, SearchGraphBuilder};

pub(crate) use search::Dijkstra;

use crate::model::{DetectorId, MatchingGraph, ObservableMask};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Side {
    Leading,
    Trailing,
}

/// What a detection event is matched to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MatchTarget {
    Event(DetectorId),
    GraphBoundary,
    /// The cut in front of block `cut`.
    BlockBoundary { side: Side, cut: u64 },
}

impl MatchTarget {
    pub fn is_block_boundary(&self) -> bool {
        matches!(self, MatchTarget::BlockBoundary { .. })
    }
}

/// One matched event with the weight and observable mask of its realizing path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MatchPair<W> {
    pub event: DetectorId,
    pub target: MatchTarget,
    pub weight: W,
    pub observables: ObservableMask,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matching<W> {
    /// Sorted by event; an event pair is listed once, under its smaller event.
    pub pairs: Vec<MatchPair<W>>,
    pub total_weight: W,
    pub observable_mask: ObservableMask,
}

impl<W: Real> Matching<W> {
    pub fn empty() -> Self {
        Matching { pairs: Vec::new(), total_weight: W::zero(), observable_mask: 0 }
    }

    pub(crate) fn from_pairs(mut pairs: Vec<MatchPair<W>>) -> Self {
        pairs.sort_by_key(|a| (a.event, a.target));
        let total_weight = pairs.iter().map(|p| p.weight).sum();
        let observable_mask = pairs.iter().fold(0, |m, p| m ^ p.observables);
        Matching { pairs, total_weight, observable_mask }
    }

    /// Number of events covered by the matching.
    pub fn num_events(&self) -> usize {
        self.pairs
            .iter()
            .map(|p| if matches!(p.target, MatchTarget::Event(_)) { 2 } else { 1 })
            .sum()
    }

    /// `(event, target)` list with event pairs in both orientations collapsed.
    pub fn pairing(&self) -> Vec<(DetectorId, MatchTarget)> {
        self.pairs.iter().map(|p| (p.event, p.target)).collect()
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("detection event {0} lies outside the graph")]
    EventOutOfRange(DetectorId),
    #[error("detection event {0} listed twice")]
    DuplicateEvent(DetectorId),
    #[error("events cannot be perfectly matched: odd parity with no reachable boundary")]
    Unmatchable,
    #[error("blocks {left:?} and {right:?} are not adjacent")]
    NonAdjacent { left: (u64, u64), right: (u64, u64) },
    #[error("too many events for exhaustive enumeration: {0}")]
    TooManyEvents(usize),
}

/// Exact decoder over a whole matching graph, reusable across shots.
pub struct ExactDecoder<W> {
    graph: SearchGraph<W>,
    solver: Solver<W>,
}

impl<W: Real> ExactDecoder<W> {
    pub fn new(graph: &MatchingGraph<W>) -> Self {
        Self::from_search_graph(SearchGraph::from_matching_graph(graph))
    }

    /// Decoder over the same structure with replaced edge weights.
    pub fn with_weights(graph: &MatchingGraph<W>, weights: &[W]) -> Self {
        Self::from_search_graph(SearchGraph::from_matching_graph_with_weights(graph, weights))
    }

    pub fn from_search_graph(graph: SearchGraph<W>) -> Self {
        let solver = Solver::new(graph.num_nodes());
        ExactDecoder { graph, solver }
    }

    pub fn search_graph(&self) -> &SearchGraph<W> {
        &self.graph
    }

    pub fn decode(&mut self, events: &[DetectorId]) -> Result<Matching<W>, EngineError> {
        let local = localize(&self.graph, events)?;
        let pairs = self.solver.solve(&self.graph, &local)?;
        Ok(Matching::from_pairs(pairs))
    }
}

/// Minimum-weight matching of `events` on the whole graph.
pub fn decode_exact<W: Real>(
    graph: &MatchingGraph<W>,
    events: &[DetectorId],
) -> Result<Matching<W>, EngineError> {
    ExactDecoder::new(graph).decode(events)
}

/// Sorted local indices of `events`, rejecting duplicates and strays.
pub(crate) fn localize<W: Real>(
    graph: &SearchGraph<W>,
    events: &[DetectorId],
) -> Result<Vec<u32>, EngineError> {
    let mut local = Vec::with_capacity(events.len());
    for &e in events {
        local.push(graph.local(e).ok_or(EngineError::EventOutOfRange(e))?);
    }
    local.sort_unstable();
    if let Some(w) = local.windows(2).find(|w| w[0] == w[1]) {
        return Err(EngineError::DuplicateEvent(graph.global(w[0])));
    }
    Ok(local)
}

const FRACTION_BITS: i32 = 40;
const TIE_BITS: u32 = 12;
const GRAPH_BOUNDARY_TAG: u64 = u64::MAX;

/// Fixed-point weight. Distances are quantized once, after summation, so equal
/// paths quantize identically in every view that contains them.
pub(crate) fn quantize<W: Real>(w: W) -> i128 {
    if w.is_infinite() {
        return i128::MAX >> 8;
    }
    (w.as_f64() * (1u64 << FRACTION_BITS) as f64).round() as i128
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Small perturbation that depends only on global identities, so equal-weight
/// alternatives resolve the same way in monolithic and block-scoped solves.
fn tie(a: u64, b: u64) -> i128 {
    (splitmix64(splitmix64(a) ^ b) & ((1 << TIE_BITS) - 1)) as i128
}

fn cost(q: i128, a: u64, b: u64) -> i128 {
    (q << 32) + tie(a, b)
}

fn cut_tag(side: Side, cut: u64) -> u64 {
    let s = match side {
        Side::Leading => 0,
        Side::Trailing => 1,
    };
    u64::MAX - 1 - (cut << 1 | s)
}

#[derive(Clone, Copy, Debug)]
struct BoundaryChoice<W> {
    target: MatchTarget,
    dist: W,
    mask: ObservableMask,
    cost: i128,
}

struct PairCandidate<W> {
    i: usize,
    j: usize,
    dist: W,
    mask: ObservableMask,
    cost: i128,
}

/// Scratch state for repeated solves on graphs of bounded size.
pub(crate) struct Solver<W> {
    dijkstra: Dijkstra<W>,
    slot_of: HashMap<u32, usize>,
}

impl<W: Real> Solver<W> {
    pub fn new(num_nodes: usize) -> Self {
        Solver { dijkstra: Dijkstra::new(num_nodes), slot_of: HashMap::new() }
    }

    fn ensure(&mut self, n: usize) {
        if self.dijkstra_len() < n {
            self.dijkstra = Dijkstra::new(n);
        }
    }

    fn dijkstra_len(&self) -> usize {
        self.dijkstra.len()
    }

    /// Cheapest admissible boundary reachable from `source`.
    fn nearest_boundary(&mut self, graph: &SearchGraph<W>, source: u32) -> Option<BoundaryChoice<W>> {
        let gid = graph.global(source).0;
        let mut best: Option<BoundaryChoice<W>> = None;
        self.dijkstra.run(graph, &[source], W::infinity(), |v, d, m| {
            if let Some(b) = best {
                if quantize(d) << 32 > b.cost {
                    return false;
                }
            }
            let mut offer = |target: MatchTarget, dist: W, mask: ObservableMask, tag: u64| {
                let c = cost(quantize(dist), gid, tag);
                if best.is_none_or(|b| c < b.cost) {
                    best = Some(BoundaryChoice { target, dist, mask, cost: c });
                }
            };
            if let Some(e) = graph.boundary_edge(v) {
                offer(MatchTarget::GraphBoundary, d + graph.weight(e), m ^ graph.mask(e), GRAPH_BOUNDARY_TAG);
            }
            if graph.is_leading_port(v) {
                let cut = graph.leading_cut().unwrap();
                offer(MatchTarget::BlockBoundary { side: Side::Leading, cut }, d, m, cut_tag(Side::Leading, cut));
            }
            if graph.is_trailing_port(v) {
                let cut = graph.trailing_cut().unwrap();
                offer(MatchTarget::BlockBoundary { side: Side::Trailing, cut }, d, m, cut_tag(Side::Trailing, cut));
            }
            true
        });
        best
    }

    /// Minimum-weight matching of the given local events, which must be sorted.
    pub fn solve(&mut self, graph: &SearchGraph<W>, events: &[u32]) -> Result<Vec<MatchPair<W>>, EngineError> {
        let n = events.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        self.ensure(graph.num_nodes());
        self.slot_of.clear();
        for (k, &e) in events.iter().enumerate() {
            self.slot_of.insert(e, k);
        }

        let boundary: Vec<Option<BoundaryChoice<W>>> =
            events.iter().map(|&e| self.nearest_boundary(graph, e)).collect();
        let bq: Vec<i128> = boundary
            .iter()
            .map(|b| b.map_or(i128::MAX >> 8, |b| quantize(b.dist)))
            .collect();
        let bmax = boundary
            .iter()
            .map(|b| b.map_or(W::infinity(), |b| b.dist))
            .fold(W::zero(), |a, b| a.max(b));

        let mut pairs = Vec::new();
        for (i, &e) in events.iter().enumerate() {
            let radius = boundary[i].map_or(W::infinity(), |b| b.dist) + bmax;
            let radius = radius + radius * W::of(1e-9) + W::of(1e-9);
            let gi = graph.global(e).0;
            let slot_of = &self.slot_of;
            self.dijkstra.run(graph, &[e], radius, |v, d, m| {
                if let Some(&j) = slot_of.get(&v) {
                    if j > i {
                        let q = quantize(d);
                        if q <= bq[i].saturating_add(bq[j]) {
                            let gj = graph.global(v).0;
                            pairs.push(PairCandidate { i, j, dist: d, mask: m, cost: cost(q, gi, gj) });
                        }
                    }
                }
                true
            });
        }

        // Solve each connected component of the candidate graph separately.
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for c in &pairs {
            let (a, b) = (find(&mut parent, c.i), find(&mut parent, c.j));
            if a != b {
                parent[a.max(b)] = a.min(b);
            }
        }
        let mut components: Vec<Vec<usize>> = Vec::new();
        let mut comp_of = vec![usize::MAX; n];
        let mut pos = vec![0usize; n];
        for k in 0..n {
            let r = find(&mut parent, k);
            if comp_of[r] == usize::MAX {
                comp_of[r] = components.len();
                components.push(Vec::new());
            }
            let c = comp_of[r];
            comp_of[k] = c;
            pos[k] = components[c].len();
            components[c].push(k);
        }
        let mut comp_pairs: Vec<Vec<&PairCandidate<W>>> = vec![Vec::new(); components.len()];
        for p in &pairs {
            comp_pairs[comp_of[p.i]].push(p);
        }

        let mut out = Vec::with_capacity(n);
        for (c, members) in components.iter().enumerate() {
            let m = members.len();
            if m == 1 {
                let k = members[0];
                let b = boundary[k].ok_or(EngineError::Unmatchable)?;
                out.push(MatchPair { event: graph.global(events[k]), target: b.target, weight: b.dist, observables: b.mask });
                continue;
            }
            let mut edges = Vec::with_capacity(m + 2 * comp_pairs[c].len());
            for (x, &k) in members.iter().enumerate() {
                if let Some(b) = boundary[k] {
                    edges.push((x, m + x, b.cost));
                }
            }
            for p in &comp_pairs[c] {
                let (x, y) = (pos[p.i], pos[p.j]);
                edges.push((x, y, p.cost));
                edges.push((m + x, m + y, 0));
            }
            let mate = min_cost_perfect_matching(2 * m, &edges).ok_or(EngineError::Unmatchable)?;
            for (x, &k) in members.iter().enumerate() {
                let y = mate[x];
                if y == m + x {
                    let b = boundary[k].expect("boundary edge present when matched to copy");
                    out.push(MatchPair { event: graph.global(events[k]), target: b.target, weight: b.dist, observables: b.mask });
                } else if y > x && y < m {
                    let j = members[y];
                    let p = comp_pairs[c]
                        .iter()
                        .find(|p| p.i == k && p.j == j)
                        .expect("matched pair is a candidate");
                    out.push(MatchPair {
                        event: graph.global(events[k]),
                        target: MatchTarget::Event(graph.global(events[j])),
                        weight: p.dist,
                        observables: p.mask,
                    });
                }
            }
        }
        Ok(out)
    }
}
