//! Compact adjacency over a contiguous detector range, with shortest-path search.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::model::{DetectorId, Endpoint, MatchingGraph, ObservableMask};
use crate::scalar::Real;

pub(crate) const NO_EDGE: u32 = u32::MAX;

/// Search graph over detectors `[base, base + num_nodes)`.
///
/// Nodes incident to edges that leave the range through the start (end) of the
/// covered cycles are *leading* (*trailing*) ports; matching to a port is
/// matching to the block boundary with the crossing itself free.
#[derive(Clone, Debug)]
pub struct SearchGraph<W> {
    base: u64,
    detectors_per_cycle: u32,
    offsets: Vec<u32>,
    adj: Vec<(u32, u32)>,
    boundary: Vec<u32>,
    weights: Vec<W>,
    masks: Vec<ObservableMask>,
    leading: Vec<bool>,
    trailing: Vec<bool>,
    leading_cut: Option<u64>,
    trailing_cut: Option<u64>,
    cycles_per_block: u64,
}

/// Incremental construction of a [`SearchGraph`].
pub struct SearchGraphBuilder<W> {
    base: u64,
    detectors_per_cycle: u32,
    num_nodes: usize,
    edges: Vec<(u32, u32)>,
    weights: Vec<W>,
    masks: Vec<ObservableMask>,
    leading: Vec<bool>,
    trailing: Vec<bool>,
    leading_cut: Option<u64>,
    trailing_cut: Option<u64>,
    cycles_per_block: u64,
}

impl<W: Real> SearchGraphBuilder<W> {
    pub fn new(base: u64, num_nodes: usize, detectors_per_cycle: u32) -> Self {
        SearchGraphBuilder {
            base,
            detectors_per_cycle,
            num_nodes,
            edges: Vec::new(),
            weights: Vec::new(),
            masks: Vec::new(),
            leading: vec![false; num_nodes],
            trailing: vec![false; num_nodes],
            leading_cut: None,
            trailing_cut: None,
            cycles_per_block: 0,
        }
    }

    /// Block geometry used to locate cuts; 0 for whole-shot graphs.
    pub fn cycles_per_block(&mut self, m: u64) {
        self.cycles_per_block = m;
    }

    /// Adds an edge between local nodes; `b == None` is the graph boundary.
    pub fn edge(&mut self, a: u32, b: Option<u32>, weight: W, mask: ObservableMask) {
        self.edges.push((a, b.unwrap_or(NO_EDGE)));
        self.weights.push(weight);
        self.masks.push(mask);
    }

    /// Reserves an edge slot without adjacency, keeping slot numbering aligned
    /// with an external edge list.
    pub fn skip_edge(&mut self, weight: W, mask: ObservableMask) {
        self.edges.push((NO_EDGE, NO_EDGE));
        self.weights.push(weight);
        self.masks.push(mask);
    }

    pub fn leading_port(&mut self, local: u32) {
        self.leading[local as usize] = true;
    }

    pub fn trailing_port(&mut self, local: u32) {
        self.trailing[local as usize] = true;
    }

    /// Block index of the cut before the first covered block.
    pub fn leading_cut(&mut self, cut: u64) {
        self.leading_cut = Some(cut);
    }

    /// Block index of the cut after the last covered block.
    pub fn trailing_cut(&mut self, cut: u64) {
        self.trailing_cut = Some(cut);
    }

    pub fn build(self) -> SearchGraph<W> {
        let n = self.num_nodes;
        let mut degree = vec![0u32; n + 1];
        let mut boundary = vec![NO_EDGE; n];
        for (k, &(a, b)) in self.edges.iter().enumerate() {
            if a == NO_EDGE {
                continue;
            }
            if b == NO_EDGE {
                // At most one boundary edge per node; keep the lightest.
                let slot = &mut boundary[a as usize];
                if *slot == NO_EDGE || self.weights[k] < self.weights[*slot as usize] {
                    *slot = k as u32;
                }
            } else {
                degree[a as usize] += 1;
                degree[b as usize] += 1;
            }
        }
        let mut offsets = vec![0u32; n + 1];
        for i in 0..n {
            offsets[i + 1] = offsets[i] + degree[i];
        }
        let mut fill = offsets.clone();
        let mut adj = vec![(0u32, 0u32); offsets[n] as usize];
        for (k, &(a, b)) in self.edges.iter().enumerate() {
            if a != NO_EDGE && b != NO_EDGE {
                adj[fill[a as usize] as usize] = (b, k as u32);
                fill[a as usize] += 1;
                adj[fill[b as usize] as usize] = (a, k as u32);
                fill[b as usize] += 1;
            }
        }
        SearchGraph {
            base: self.base,
            detectors_per_cycle: self.detectors_per_cycle,
            offsets,
            adj,
            boundary,
            weights: self.weights,
            masks: self.masks,
            leading: self.leading,
            trailing: self.trailing,
            leading_cut: self.leading_cut,
            trailing_cut: self.trailing_cut,
            cycles_per_block: self.cycles_per_block,
        }
    }
}

impl<W: Real> SearchGraph<W> {
    /// Whole-graph search structure; edge slots coincide with edge ids.
    pub fn from_matching_graph(graph: &MatchingGraph<W>) -> Self {
        Self::from_matching_graph_with_weights(graph, &graph.weights())
    }

    pub fn from_matching_graph_with_weights(graph: &MatchingGraph<W>, weights: &[W]) -> Self {
        let n = graph.num_detectors() as usize;
        let mut b = SearchGraphBuilder::new(0, n, graph.detectors_per_cycle);
        for (e, &w) in graph.edges().iter().zip(weights) {
            let other = match e.b {
                Endpoint::Detector(d) => Some(d.0 as u32),
                Endpoint::Boundary => None,
            };
            b.edge(e.a.0 as u32, other, w, e.observables);
        }
        b.build()
    }

    pub fn num_nodes(&self) -> usize {
        self.boundary.len()
    }

    pub fn base(&self) -> u64 {
        self.base
    }

    pub fn detectors_per_cycle(&self) -> u32 {
        self.detectors_per_cycle
    }

    pub fn local(&self, d: DetectorId) -> Option<u32> {
        d.0.checked_sub(self.base)
            .filter(|&l| l < self.num_nodes() as u64)
            .map(|l| l as u32)
    }

    pub fn global(&self, local: u32) -> DetectorId {
        DetectorId(self.base + local as u64)
    }

    pub fn contains(&self, d: DetectorId) -> bool {
        self.local(d).is_some()
    }

    pub fn leading_cut(&self) -> Option<u64> {
        self.leading_cut
    }

    pub fn trailing_cut(&self) -> Option<u64> {
        self.trailing_cut
    }

    pub fn is_leading_port(&self, local: u32) -> bool {
        self.leading_cut.is_some() && self.leading[local as usize]
    }

    pub fn is_trailing_port(&self, local: u32) -> bool {
        self.trailing_cut.is_some() && self.trailing[local as usize]
    }

    pub fn num_edges(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[W] {
        &self.weights
    }

    pub(crate) fn neighbors(&self, local: u32) -> &[(u32, u32)] {
        let i = local as usize;
        &self.adj[self.offsets[i] as usize..self.offsets[i + 1] as usize]
    }

    pub(crate) fn boundary_edge(&self, local: u32) -> Option<u32> {
        Some(self.boundary[local as usize]).filter(|&e| e != NO_EDGE)
    }

    pub(crate) fn weight(&self, slot: u32) -> W {
        self.weights[slot as usize]
    }

    pub(crate) fn mask(&self, slot: u32) -> ObservableMask {
        self.masks[slot as usize]
    }

    pub fn cycles_per_block(&self) -> u64 {
        self.cycles_per_block
    }

    /// Cycle of a local node.
    pub fn cycle_of(&self, local: u32) -> u64 {
        (self.base + local as u64) / self.detectors_per_cycle as u64
    }
}

/// Heap entry ordered by (distance, node) ascending.
#[derive(Clone, Copy, PartialEq)]
struct Entry<W> {
    dist: W,
    node: u32,
}

impl<W: Real> Eq for Entry<W> {}

impl<W: Real> Ord for Entry<W> {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.node.cmp(&self.node))
    }
}

impl<W: Real> PartialOrd for Entry<W> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Reusable Dijkstra state. Paths never pass through the graph boundary or
/// through block-boundary ports: both are terminal sinks.
pub(crate) struct Dijkstra<W> {
    dist: Vec<W>,
    mask: Vec<ObservableMask>,
    settled: Vec<bool>,
    touched: Vec<u32>,
    heap: BinaryHeap<Entry<W>>,
}

impl<W: Real> Dijkstra<W> {
    pub fn new(n: usize) -> Self {
        Dijkstra {
            dist: vec![W::infinity(); n],
            mask: vec![0; n],
            settled: vec![false; n],
            touched: Vec::new(),
            heap: BinaryHeap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.dist.len()
    }

    fn reset(&mut self) {
        for &t in &self.touched {
            self.dist[t as usize] = W::infinity();
            self.mask[t as usize] = 0;
            self.settled[t as usize] = false;
        }
        self.touched.clear();
        self.heap.clear();
    }

    fn seed(&mut self, node: u32) {
        self.dist[node as usize] = W::zero();
        self.mask[node as usize] = 0;
        self.touched.push(node);
        self.heap.push(Entry { dist: W::zero(), node });
    }

    /// Runs from `sources`, calling `visit(node, dist, mask)` on every settled
    /// node in order of increasing distance until it returns `false` or the
    /// next distance exceeds `radius`.
    pub fn run(
        &mut self,
        graph: &SearchGraph<W>,
        sources: &[u32],
        radius: W,
        mut visit: impl FnMut(u32, W, ObservableMask) -> bool,
    ) {
        self.reset();
        for &s in sources {
            self.seed(s);
        }
        while let Some(Entry { dist, node }) = self.heap.pop() {
            let i = node as usize;
            if self.settled[i] || dist > self.dist[i] {
                continue;
            }
            if dist > radius {
                break;
            }
            self.settled[i] = true;
            let m = self.mask[i];
            if !visit(node, dist, m) {
                break;
            }
            for &(nb, slot) in graph.neighbors(node) {
                let j = nb as usize;
                if self.settled[j] {
                    continue;
                }
                let nd = dist + graph.weight(slot);
                if nd < self.dist[j] {
                    if self.dist[j] == W::infinity() {
                        self.touched.push(nb);
                    }
                    self.dist[j] = nd;
                    self.mask[j] = m ^ graph.mask(slot);
                    self.heap.push(Entry { dist: nd, node: nb });
                }
            }
        }
    }
}
