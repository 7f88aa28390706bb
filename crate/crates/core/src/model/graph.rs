use std::collections::BTreeMap;

use thiserror::Error;

use super::{DetectorId, NoiseModel, ObservableMask};
use crate::scalar::{weight_of, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeId(pub u32);

impl EdgeId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// Second endpoint of an edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    Detector(DetectorId),
    Boundary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge<W> {
    pub id: EdgeId,
    pub a: DetectorId,
    pub b: Endpoint,
    pub probability: W,
    pub weight: W,
    pub observables: ObservableMask,
}

impl<W> Edge<W> {
    pub fn is_boundary(&self) -> bool {
        self.b == Endpoint::Boundary
    }

    pub fn other(&self, v: DetectorId) -> Endpoint {
        match self.b {
            Endpoint::Detector(b) if b == v => Endpoint::Detector(self.a),
            other => other,
        }
    }
}

/// Per-edge list of `(partner, joint probability)` from decomposed hyperedges.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CorrelationTable<W> {
    partners: Vec<Vec<(EdgeId, W)>>,
}

impl<W: Real> CorrelationTable<W> {
    pub fn new(num_edges: usize) -> Self {
        CorrelationTable { partners: vec![Vec::new(); num_edges] }
    }

    pub fn partners(&self, e: EdgeId) -> &[(EdgeId, W)] {
        self.partners.get(e.index()).map_or(&[], |v| v.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.partners.iter().all(|p| p.is_empty())
    }

    pub fn len(&self) -> usize {
        self.partners.len()
    }

    pub fn is_symmetric(&self) -> bool {
        self.partners.iter().enumerate().all(|(e, list)| {
            list.iter().all(|&(f, p)| {
                self.partners(f).iter().any(|&(g, q)| g.index() == e && q == p)
            })
        })
    }

    pub(crate) fn from_pairs(num_edges: usize, pairs: BTreeMap<(EdgeId, EdgeId), W>) -> Self {
        let mut table = CorrelationTable::new(num_edges);
        for ((a, b), p) in pairs {
            table.partners[a.index()].push((b, p));
            table.partners[b.index()].push((a, p));
        }
        for list in &mut table.partners {
            list.sort_by_key(|&(e, _)| e);
        }
        table
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("mechanism {mechanism} has two parts on the same edge {edge:?}")]
    DegenerateDecomposition { mechanism: usize, edge: (DetectorId, Endpoint) },
    #[error("mechanism {mechanism} has probability outside (0, 0.5]")]
    InvalidProbability { mechanism: usize },
    #[error("parallel mechanisms on {edge:?} flip different observables")]
    ObservableConflict { edge: (DetectorId, Endpoint) },
    #[error("mechanism {mechanism} has a part with {count} detectors")]
    NotGraphlike { mechanism: usize, count: usize },
}

/// Weighted matching graph over all detectors of a model.
#[derive(Clone, Debug)]
pub struct MatchingGraph<W> {
    pub detectors_per_cycle: u32,
    pub num_observables: u32,
    num_detectors: u64,
    edges: Vec<Edge<W>>,
    incident: Vec<Vec<EdgeId>>,
    correlations: CorrelationTable<W>,
}

/// Merged probability of two independent flips on the same edge.
pub(crate) fn xor_probability<W: Real>(p1: W, p2: W) -> W {
    p1 * (W::one() - p2) + p2 * (W::one() - p1)
}

fn edge_key(dets: &[DetectorId]) -> (DetectorId, Endpoint) {
    match dets {
        [a] => (*a, Endpoint::Boundary),
        [a, b] => ((*a).min(*b), Endpoint::Detector((*a).max(*b))),
        _ => unreachable!("parts are validated to hold one or two detectors"),
    }
}

/// Decomposes every mechanism into its graphlike parts, merges parallel parts
/// into single edges and records hyperedge joint probabilities.
pub fn build_matching_graph<W: Real>(model: &NoiseModel<W>) -> Result<MatchingGraph<W>, GraphError> {
    struct Acc<W> {
        p: W,
        obs: ObservableMask,
    }
    let half = W::of(0.5);
    let mut merged: BTreeMap<(DetectorId, Endpoint), Acc<W>> = BTreeMap::new();
    for (mi, mech) in model.mechanisms.iter().enumerate() {
        if !(mech.probability > W::zero() && mech.probability <= half) {
            return Err(GraphError::InvalidProbability { mechanism: mi });
        }
        let mut keys = Vec::with_capacity(mech.parts.len());
        for part in &mech.parts {
            if part.detectors.is_empty() || part.detectors.len() > 2 {
                return Err(GraphError::NotGraphlike { mechanism: mi, count: part.detectors.len() });
            }
            let key = edge_key(&part.detectors);
            if keys.contains(&key) {
                return Err(GraphError::DegenerateDecomposition { mechanism: mi, edge: key });
            }
            keys.push(key);
            match merged.get_mut(&key) {
                Some(acc) => {
                    if acc.obs != part.observables {
                        return Err(GraphError::ObservableConflict { edge: key });
                    }
                    acc.p = xor_probability(acc.p, mech.probability).min(half);
                }
                None => {
                    merged.insert(key, Acc { p: mech.probability, obs: part.observables });
                }
            }
        }
    }

    let num_detectors = model.num_detectors();
    let mut index = BTreeMap::new();
    let mut edges = Vec::with_capacity(merged.len());
    let mut incident = vec![Vec::new(); num_detectors as usize];
    for (i, (key, acc)) in merged.into_iter().enumerate() {
        let id = EdgeId(i as u32);
        index.insert(key, id);
        incident[key.0 .0 as usize].push(id);
        if let Endpoint::Detector(b) = key.1 {
            incident[b.0 as usize].push(id);
        }
        edges.push(Edge {
            id,
            a: key.0,
            b: key.1,
            probability: acc.p,
            weight: weight_of(acc.p),
            observables: acc.obs,
        });
    }

    let mut pairs: BTreeMap<(EdgeId, EdgeId), W> = BTreeMap::new();
    for mech in model.mechanisms.iter().filter(|m| m.is_hyperedge()) {
        let ids: Vec<EdgeId> = mech.parts.iter().map(|p| index[&edge_key(&p.detectors)]).collect();
        for i in 0..ids.len() {
            for j in i + 1..ids.len() {
                let key = (ids[i].min(ids[j]), ids[i].max(ids[j]));
                pairs
                    .entry(key)
                    .and_modify(|p| *p = xor_probability(*p, mech.probability))
                    .or_insert(mech.probability);
            }
        }
    }
    let correlations = CorrelationTable::from_pairs(edges.len(), pairs);

    Ok(MatchingGraph {
        detectors_per_cycle: model.detectors_per_cycle,
        num_observables: model.num_observables,
        num_detectors,
        edges,
        incident,
        correlations,
    })
}

impl<W: Real> MatchingGraph<W> {
    pub fn num_detectors(&self) -> u64 {
        self.num_detectors
    }

    pub fn edges(&self) -> &[Edge<W>] {
        &self.edges
    }

    pub fn edge(&self, id: EdgeId) -> &Edge<W> {
        &self.edges[id.index()]
    }

    pub fn incident(&self, d: DetectorId) -> &[EdgeId] {
        self.incident.get(d.0 as usize).map_or(&[], |v| v.as_slice())
    }

    pub fn boundary_edge(&self, d: DetectorId) -> Option<EdgeId> {
        self.incident(d).iter().copied().find(|&e| self.edge(e).is_boundary())
    }

    pub fn correlations(&self) -> &CorrelationTable<W> {
        &self.correlations
    }

    pub fn find_edge(&self, a: DetectorId, b: Endpoint) -> Option<EdgeId> {
        self.incident(a).iter().copied().find(|&e| {
            let edge = self.edge(e);
            edge.other(a) == b
        })
    }

    pub fn weights(&self) -> Vec<W> {
        self.edges.iter().map(|e| e.weight).collect()
    }
}
