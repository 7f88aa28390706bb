//! Generators for the phenomenological noise models used by tests and demos.

use crate::model::{DetectorId, ErrorMechanism, NoiseModel, Part};
use crate::scalar::Real;

/// Distance-`d` repetition code memory: `d` data qubits, `d - 1` parity
/// detectors per cycle, each data flip with probability `p` per cycle and each
/// parity measurement wrong with probability `p`.
///
/// `cycles` counts detector layers. Observable 0 is flipped by data qubit 0.
/// With `readout` set, the last layer compares against a final data readout
/// whose flips occur with that probability, making it an epilogue cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct RepetitionCode {
    pub distance: u32,
    pub cycles: u64,
    pub p: f64,
    pub readout: Option<f64>,
}

impl RepetitionCode {
    pub fn new(distance: u32, cycles: u64, p: f64) -> Self {
        assert!(distance >= 2, "repetition code needs at least two data qubits");
        RepetitionCode { distance, cycles, p, readout: None }
    }

    pub fn with_readout(mut self, p_readout: f64) -> Self {
        self.readout = Some(p_readout);
        self
    }

    pub fn detectors_per_cycle(&self) -> u32 {
        self.distance - 1
    }

    pub fn noise_model<W: Real>(&self) -> NoiseModel<W> {
        let dpc = self.detectors_per_cycle() as u64;
        let mut model = NoiseModel::new(dpc as u32, 1);
        model.prologue_cycles = 1;
        model.epilogue_cycles = u32::from(self.readout.is_some());
        let p = W::of(self.p);
        for c in 0..self.cycles {
            let base = c * dpc;
            for q in 0..self.distance as u64 {
                let mut dets = Vec::with_capacity(2);
                if q > 0 {
                    dets.push(base + q - 1);
                }
                if q < dpc {
                    dets.push(base + q);
                }
                model.mechanisms.push(ErrorMechanism::graphlike(p, &dets, u64::from(q == 0)));
            }
            if c > 0 {
                let pm = match self.readout {
                    Some(r) if c + 1 == self.cycles => W::of(r),
                    _ => p,
                };
                for k in 0..dpc {
                    model.mechanisms.push(ErrorMechanism::graphlike(pm, &[base - dpc + k, base + k], 0));
                }
            }
        }
        model.canonical()
    }
}

/// Small planar surface-code memory with independent X, Z and Y data errors
/// and measurement errors.
///
/// Per cycle there are `d(d-1)` Z-type checks (detecting X flips) followed by
/// `(d-1)d` X-type checks. A Y error is a two-part mechanism: its X part and
/// Z part are the same edges an X or Z error on that qubit would produce.
/// Observable 0 tracks X flips across the left edge, observable 1 Z flips
/// across the top edge.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanarSurfaceCode {
    pub distance: u32,
    pub cycles: u64,
    pub p_x: f64,
    pub p_z: f64,
    pub p_y: f64,
    pub p_measure: f64,
}

impl PlanarSurfaceCode {
    /// Every channel at probability `p`.
    pub fn new(distance: u32, cycles: u64, p: f64) -> Self {
        assert!(distance >= 2, "planar code needs distance at least two");
        PlanarSurfaceCode { distance, cycles, p_x: p, p_z: p, p_y: p, p_measure: p }
    }

    /// Y-dominated noise: Y errors at `p`, X and Z at `p / bias`.
    pub fn y_biased(distance: u32, cycles: u64, p: f64, bias: f64) -> Self {
        PlanarSurfaceCode {
            distance,
            cycles,
            p_x: p / bias,
            p_z: p / bias,
            p_y: p,
            p_measure: p / bias,
        }
    }

    pub fn detectors_per_cycle(&self) -> u32 {
        2 * self.distance * (self.distance - 1)
    }

    fn z_check(&self, r: i64, c: i64) -> Option<u64> {
        let d = self.distance as i64;
        (r >= 0 && r < d && c >= 0 && c < d - 1).then(|| (r * (d - 1) + c) as u64)
    }

    fn x_check(&self, r: i64, c: i64) -> Option<u64> {
        let d = self.distance as i64;
        (r >= 0 && r < d - 1 && c >= 0 && c < d).then(|| (d * (d - 1) + r * d + c) as u64)
    }

    /// X and Z parts (local detector indices, observables) of every data qubit.
    fn qubits(&self) -> Vec<((Vec<u64>, u64), (Vec<u64>, u64))> {
        let d = self.distance as i64;
        let mut out = Vec::new();
        for r in 0..d {
            for c in 0..d {
                let x: Vec<u64> = [self.z_check(r, c - 1), self.z_check(r, c)].into_iter().flatten().collect();
                let z: Vec<u64> = [self.x_check(r - 1, c), self.x_check(r, c)].into_iter().flatten().collect();
                out.push(((x, u64::from(c == 0)), (z, u64::from(r == 0) << 1)));
            }
        }
        for r in 0..d - 1 {
            for c in 0..d - 1 {
                let x = [self.z_check(r, c), self.z_check(r + 1, c)].into_iter().flatten().collect();
                let z = [self.x_check(r, c), self.x_check(r, c + 1)].into_iter().flatten().collect();
                out.push(((x, 0), (z, 0)));
            }
        }
        out
    }

    pub fn noise_model<W: Real>(&self) -> NoiseModel<W> {
        let dpc = self.detectors_per_cycle() as u64;
        let mut model = NoiseModel::new(dpc as u32, 2);
        model.prologue_cycles = 1;
        let qubits = self.qubits();
        let part = |base: u64, (dets, obs): &(Vec<u64>, u64)| {
            Part::new(dets.iter().map(|&k| DetectorId(base + k)).collect(), *obs)
        };
        for c in 0..self.cycles {
            let base = c * dpc;
            for (x, z) in &qubits {
                model.mechanisms.push(ErrorMechanism::new(W::of(self.p_x), vec![part(base, x)]));
                model.mechanisms.push(ErrorMechanism::new(W::of(self.p_z), vec![part(base, z)]));
                model
                    .mechanisms
                    .push(ErrorMechanism::new(W::of(self.p_y), vec![part(base, x), part(base, z)]));
            }
            if c > 0 {
                for k in 0..dpc {
                    model.mechanisms.push(ErrorMechanism::graphlike(
                        W::of(self.p_measure),
                        &[base - dpc + k, base + k],
                        0,
                    ));
                }
            }
        }
        model.canonical()
    }
}
