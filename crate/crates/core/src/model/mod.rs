//! Detector error models and the weighted matching graph built from them.

mod dem;
mod graph;
mod template;

pub use dem::{parse_dem, serialize_dem, DemError};
pub use graph::{
    build_matching_graph, CorrelationTable, Edge, EdgeId, Endpoint, GraphError, MatchingGraph,
};
pub use template::{ModelTemplate, TemplateError};

pub(crate) use graph::xor_probability;

use std::fmt;

use crate::scalar::Real;

/// Global detector index: `cycle * detectors_per_cycle + local_index`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct DetectorId(pub u64);

impl DetectorId {
    pub fn cycle(self, detectors_per_cycle: u32) -> u64 {
        self.0 / detectors_per_cycle as u64
    }

    pub fn shifted(self, cycles: i64, detectors_per_cycle: u32) -> DetectorId {
        DetectorId((self.0 as i64 + cycles * detectors_per_cycle as i64) as u64)
    }
}

impl fmt::Display for DetectorId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "D{}", self.0)
    }
}

/// Bitmask over logical observables (bit `i` = observable `L{i}`).
pub type ObservableMask = u64;

/// Largest number of logical observables a mask can carry.
pub const MAX_OBSERVABLES: u32 = 64;

/// One graphlike component of an error mechanism: one or two detectors and
/// the observables it flips.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Part {
    pub detectors: Vec<DetectorId>,
    pub observables: ObservableMask,
}

impl Part {
    pub fn new(mut detectors: Vec<DetectorId>, observables: ObservableMask) -> Self {
        detectors.sort_unstable();
        Part { detectors, observables }
    }

    fn shifted(&self, cycles: i64, detectors_per_cycle: u32) -> Part {
        Part {
            detectors: self
                .detectors
                .iter()
                .map(|d| d.shifted(cycles, detectors_per_cycle))
                .collect(),
            observables: self.observables,
        }
    }
}

/// An independent error mechanism. Two or more parts make it a hyperedge
/// whose decomposition is explicit.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorMechanism<W> {
    pub probability: W,
    pub parts: Vec<Part>,
}

impl<W: Real> ErrorMechanism<W> {
    pub fn new(probability: W, parts: Vec<Part>) -> Self {
        ErrorMechanism { probability, parts }
    }

    pub fn graphlike(probability: W, detectors: &[u64], observables: ObservableMask) -> Self {
        ErrorMechanism {
            probability,
            parts: vec![Part::new(detectors.iter().map(|&d| DetectorId(d)).collect(), observables)],
        }
    }

    pub fn is_hyperedge(&self) -> bool {
        self.parts.len() >= 2
    }

    /// Every detector fired by the mechanism (parts XOR-combined).
    pub fn detectors(&self) -> impl Iterator<Item = DetectorId> + '_ {
        self.parts.iter().flat_map(|p| p.detectors.iter().copied())
    }

    /// Observables flipped when the mechanism fires.
    pub fn observables(&self) -> ObservableMask {
        self.parts.iter().fold(0, |acc, p| acc ^ p.observables)
    }

    pub(crate) fn cycle_range(&self, detectors_per_cycle: u32) -> (u64, u64) {
        let mut lo = u64::MAX;
        let mut hi = 0;
        for d in self.detectors() {
            let c = d.cycle(detectors_per_cycle);
            lo = lo.min(c);
            hi = hi.max(c);
        }
        (lo, hi)
    }

    pub(crate) fn shifted(&self, cycles: i64, detectors_per_cycle: u32) -> Self {
        ErrorMechanism {
            probability: self.probability,
            parts: self.parts.iter().map(|p| p.shifted(cycles, detectors_per_cycle)).collect(),
        }
    }

    fn sort_key(&self) -> (u64, Option<u64>, W) {
        let first = &self.parts[0];
        (first.detectors[0].0, first.detectors.get(1).map(|d| d.0), self.probability)
    }
}

/// A detector error model laid out cycle by cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseModel<W> {
    pub detectors_per_cycle: u32,
    pub num_observables: u32,
    /// Cycles after which the bulk edge pattern repeats.
    pub period: u32,
    pub prologue_cycles: u32,
    pub epilogue_cycles: u32,
    pub mechanisms: Vec<ErrorMechanism<W>>,
}

impl<W: Real> NoiseModel<W> {
    pub fn new(detectors_per_cycle: u32, num_observables: u32) -> Self {
        NoiseModel {
            detectors_per_cycle,
            num_observables,
            period: 1,
            prologue_cycles: 0,
            epilogue_cycles: 0,
            mechanisms: Vec::new(),
        }
    }

    /// Number of cycles spanned by the mechanisms (highest detector cycle + 1).
    pub fn cycles(&self) -> u64 {
        self.mechanisms
            .iter()
            .flat_map(|m| m.detectors())
            .map(|d| d.cycle(self.detectors_per_cycle) + 1)
            .max()
            .unwrap_or(0)
    }

    pub fn num_detectors(&self) -> u64 {
        self.cycles() * self.detectors_per_cycle as u64
    }

    /// Sorts detectors within parts, parts within mechanisms, then mechanisms
    /// by (first detector, second detector, probability).
    pub fn canonicalize(&mut self) {
        for m in &mut self.mechanisms {
            for p in &mut m.parts {
                p.detectors.sort_unstable();
            }
            m.parts.sort();
        }
        self.mechanisms.sort_by(|a, b| {
            a.sort_key()
                .partial_cmp(&b.sort_key())
                .unwrap_or(std::cmp::Ordering::Equal)
                .then_with(|| a.parts.cmp(&b.parts))
        });
    }

    pub fn canonical(mut self) -> Self {
        self.canonicalize();
        self
    }
}
