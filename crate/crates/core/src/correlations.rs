//! Preweighting from hyperedge correlations.
//!
//! Edges that the detection pattern makes likely (both endpoints fired, or an
//! isolated event next to the boundary) are taken as having occurred, and the
//! partner edges of their hyperedge mechanisms are made cheaper accordingly.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::engine::{EngineError, ExactDecoder, Matching};
use crate::model::{DetectorId, EdgeId, MatchingGraph};
use crate::scalar::{weight_of, Real};

/// Upper clamp on reweighted probabilities, keeping weights finite.
pub const PROBABILITY_CLAMP: f64 = 1.0 - 1.0 / (1u64 << 24) as f64;

/// Graph data the preweight pass reads, plus a mutable weight overlay.
pub trait EdgeOverlay<W: Real> {
    /// Edges at `d` whose endpoints both lie in the view, with the other
    /// endpoint (`None` for the graph boundary).
    fn incident(&self, d: DetectorId, out: &mut Vec<(EdgeId, Option<DetectorId>)>);
    /// Unmodified probability of `e`.
    fn probability(&self, e: EdgeId) -> W;
    fn partners(&self, e: EdgeId) -> &[(EdgeId, W)];
    fn weight(&self, e: EdgeId) -> W;
    fn set_weight(&mut self, e: EdgeId, w: W);
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SeedEdgeSet {
    edges: Vec<EdgeId>,
}

impl SeedEdgeSet {
    pub fn edges(&self) -> &[EdgeId] {
        &self.edges
    }

    pub fn contains(&self, e: EdgeId) -> bool {
        self.edges.binary_search(&e).is_ok()
    }

    pub fn len(&self) -> usize {
        self.edges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.edges.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ReweightEntry<W> {
    pub edge: EdgeId,
    pub original: W,
    pub new: W,
}

/// Record of one preweight pass; undoing it restores weights bit-exactly.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReweightLog<W> {
    entries: Vec<ReweightEntry<W>>,
    undone: bool,
}

impl<W: Real> ReweightLog<W> {
    pub fn entries(&self) -> &[ReweightEntry<W>] {
        &self.entries
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn is_undone(&self) -> bool {
        self.undone
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorrelationError {
    #[error("reweight log already undone")]
    AlreadyUndone,
}

/// Edges with events at both endpoints, plus boundary edges of events none of
/// whose neighbours fired. `events` must be sorted.
pub fn select_seed_edges<W: Real, V: EdgeOverlay<W> + ?Sized>(view: &V, events: &[DetectorId]) -> SeedEdgeSet {
    let fired = |d: DetectorId| events.binary_search(&d).is_ok();
    let mut edges = Vec::new();
    let mut incident = Vec::new();
    for &v in events {
        incident.clear();
        view.incident(v, &mut incident);
        let mut lonely = true;
        let mut boundary = None;
        for &(e, other) in &incident {
            match other {
                Some(u) if fired(u) => {
                    lonely = false;
                    if v < u {
                        edges.push(e);
                    }
                }
                Some(_) => {}
                None => boundary = Some(e),
            }
        }
        if let (true, Some(e)) = (lonely, boundary) {
            edges.push(e);
        }
    }
    edges.sort_unstable();
    edges.dedup();
    SeedEdgeSet { edges }
}

/// Conditions every partner of every seed on the seed having occurred.
///
/// With `q = p_h / p(e)` the partner probability becomes `q + p - 2qp`; several
/// seeds hitting one partner compose in ascending seed order.
pub fn apply_preweights<W: Real, V: EdgeOverlay<W> + ?Sized>(view: &mut V, seeds: &SeedEdgeSet) -> ReweightLog<W> {
    let two = W::of(2.0);
    let mut updated: BTreeMap<EdgeId, W> = BTreeMap::new();
    for &e in &seeds.edges {
        let pe = view.probability(e);
        for &(partner, p_h) in view.partners(e) {
            let q = p_h / pe;
            let p = updated.get(&partner).copied().unwrap_or_else(|| view.probability(partner));
            updated.insert(partner, q + p - two * q * p);
        }
    }
    let clamp = W::of(PROBABILITY_CLAMP);
    let mut entries = Vec::with_capacity(updated.len());
    for (edge, p) in updated {
        let original = view.weight(edge);
        let new = weight_of(p.min(clamp));
        view.set_weight(edge, new);
        entries.push(ReweightEntry { edge, original, new });
    }
    ReweightLog { entries, undone: false }
}

/// Restores the weights recorded in `log`.
pub fn undo_reweights<W: Real, V: EdgeOverlay<W> + ?Sized>(
    view: &mut V,
    log: &mut ReweightLog<W>,
) -> Result<(), CorrelationError> {
    if log.undone {
        return Err(CorrelationError::AlreadyUndone);
    }
    for entry in log.entries.iter().rev() {
        view.set_weight(entry.edge, entry.original);
    }
    log.undone = true;
    Ok(())
}

/// Monolithic decoder that preweights the whole graph for every shot.
pub struct CorrelatedDecoder<'g, W> {
    overlay: WeightedGraph<'g, W>,
}

impl<'g, W: Real> CorrelatedDecoder<'g, W> {
    pub fn new(graph: &'g MatchingGraph<W>) -> Self {
        CorrelatedDecoder { overlay: WeightedGraph::new(graph) }
    }

    /// Decodes `events` (sorted) on the preweighted graph.
    pub fn decode(&mut self, events: &[DetectorId]) -> Result<Matching<W>, EngineError> {
        let seeds = select_seed_edges(&self.overlay, events);
        let mut log = apply_preweights(&mut self.overlay, &seeds);
        let result = ExactDecoder::with_weights(self.overlay.graph, &self.overlay.weights).decode(events);
        undo_reweights(&mut self.overlay, &mut log).expect("fresh log");
        result
    }
}

/// A whole matching graph with its own weight overlay.
#[derive(Clone, Debug)]
pub struct WeightedGraph<'g, W> {
    graph: &'g MatchingGraph<W>,
    weights: Vec<W>,
}

impl<'g, W: Real> WeightedGraph<'g, W> {
    pub fn new(graph: &'g MatchingGraph<W>) -> Self {
        WeightedGraph { graph, weights: graph.weights() }
    }

    pub fn graph(&self) -> &'g MatchingGraph<W> {
        self.graph
    }

    pub fn weights(&self) -> &[W] {
        &self.weights
    }
}

impl<W: Real> EdgeOverlay<W> for WeightedGraph<'_, W> {
    fn incident(&self, d: DetectorId, out: &mut Vec<(EdgeId, Option<DetectorId>)>) {
        for &e in self.graph.incident(d) {
            let other = match self.graph.edge(e).other(d) {
                crate::model::Endpoint::Detector(u) => Some(u),
                crate::model::Endpoint::Boundary => None,
            };
            out.push((e, other));
        }
    }

    fn probability(&self, e: EdgeId) -> W {
        self.graph.edge(e).probability
    }

    fn partners(&self, e: EdgeId) -> &[(EdgeId, W)] {
        self.graph.correlations().partners(e)
    }

    fn weight(&self, e: EdgeId) -> W {
        self.weights[e.index()]
    }

    fn set_weight(&mut self, e: EdgeId, w: W) {
        self.weights[e.index()] = w;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_matching_graph, Endpoint, ErrorMechanism, NoiseModel, Part};

    fn d(i: u64) -> DetectorId {
        DetectorId(i)
    }

    /// Edge (0,1) at p=0.01 correlated with edge (2,3) at p=0.004 through a
    /// joint mechanism of p_h = 0.004.
    fn correlated() -> MatchingGraph<f64> {
        let mut m = NoiseModel::new(4, 1);
        let p1 = 0.01;
        let ph = 0.004;
        // Independent remainder of (0,1) so that its merged probability is 0.01.
        let rest = (p1 - ph) / (1.0 - 2.0 * ph);
        m.mechanisms = vec![
            ErrorMechanism::new(ph, vec![Part::new(vec![d(0), d(1)], 0), Part::new(vec![d(2), d(3)], 1)]),
            ErrorMechanism::graphlike(rest, &[0, 1], 0),
            ErrorMechanism::graphlike(0.01, &[0], 0),
            ErrorMechanism::graphlike(0.01, &[3], 0),
        ];
        build_matching_graph(&m).unwrap()
    }

    fn edge(g: &MatchingGraph<f64>, a: u64, b: Option<u64>) -> EdgeId {
        g.find_edge(d(a), b.map_or(Endpoint::Boundary, |b| Endpoint::Detector(d(b)))).unwrap()
    }

    #[test]
    fn seeds_follow_both_conditions() {
        let g = correlated();
        let view = WeightedGraph::new(&g);
        let s = select_seed_edges(&view, &[d(0), d(1)]);
        assert_eq!(s.edges(), &[edge(&g, 0, Some(1))]);
        let s = select_seed_edges(&view, &[d(0)]);
        assert_eq!(s.edges(), &[edge(&g, 0, None)]);
        // A fired neighbour suppresses the boundary seed.
        let s = select_seed_edges(&view, &[d(0), d(1), d(3)]);
        assert!(!s.contains(edge(&g, 0, None)));
        assert!(s.contains(edge(&g, 0, Some(1))));
        assert!(s.contains(edge(&g, 3, None)));
    }

    #[test]
    fn posterior_example() {
        let g = correlated();
        let e1 = edge(&g, 0, Some(1));
        let e2 = edge(&g, 2, Some(3));
        assert!((g.edge(e1).probability - 0.01).abs() < 1e-15);
        assert!((g.edge(e2).probability - 0.004).abs() < 1e-15);
        let mut view = WeightedGraph::new(&g);
        assert!((view.weight(e2) - 5.517).abs() < 1e-3);
        let seeds = select_seed_edges(&view, &[d(0), d(1)]);
        let log = apply_preweights(&mut view, &seeds);
        assert_eq!(log.entries().len(), 1);
        let expected = (0.5992f64 / 0.4008).ln();
        assert!((view.weight(e2) - expected).abs() < 1e-12);
        assert!((view.weight(e2) - 0.4021).abs() < 1e-4);
    }

    #[test]
    fn empty_seed_set_changes_nothing() {
        let g = correlated();
        let mut view = WeightedGraph::new(&g);
        let log = apply_preweights(&mut view, &SeedEdgeSet::default());
        assert!(log.is_empty());
        assert_eq!(view.weights(), g.weights().as_slice());
    }

    #[test]
    fn undo_restores_and_rejects_repeat() {
        let g = correlated();
        let mut view = WeightedGraph::new(&g);
        let before = view.weights().to_vec();
        let seeds = select_seed_edges(&view, &[d(0), d(1)]);
        let mut a = apply_preweights(&mut view, &seeds);
        let mut b = apply_preweights(&mut view, &seeds);
        assert_ne!(view.weights(), before.as_slice());
        undo_reweights(&mut view, &mut b).unwrap();
        undo_reweights(&mut view, &mut a).unwrap();
        assert_eq!(view.weights(), before.as_slice());
        assert_eq!(undo_reweights(&mut view, &mut a), Err(CorrelationError::AlreadyUndone));
    }
}
