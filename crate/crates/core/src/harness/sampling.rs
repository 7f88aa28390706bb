//! Independent-mechanism sampling of detection events.
//!
//! Shot `k` draws from ChaCha8 seeded with `seed` on stream `k`; mechanisms
//! consume one uniform draw each, in canonical model order. Results are
//! therefore independent of thread count and platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::HarnessError;
use crate::model::{DetectorId, ModelTemplate, NoiseModel, ObservableMask};
use crate::scalar::Real;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ShotSample {
    pub shot: u64,
    pub cycles: u64,
    pub detectors_per_cycle: u32,
    /// Fired detectors in ascending order.
    pub events: Vec<DetectorId>,
    pub true_observables: ObservableMask,
}

impl ShotSample {
    pub fn num_detectors(&self) -> u64 {
        self.cycles * self.detectors_per_cycle as u64
    }

    /// Bit-packed frame of one cycle: bit `i` of byte `i / 8` is local detector `i`.
    pub fn frame(&self, cycle: u64) -> Vec<u8> {
        let dpc = self.detectors_per_cycle as u64;
        let mut frame = vec![0u8; (dpc as usize).div_ceil(8)];
        let lo = cycle * dpc;
        let start = self.events.partition_point(|d| d.0 < lo);
        for d in self.events[start..].iter().take_while(|d| d.0 < lo + dpc) {
            let i = (d.0 - lo) as usize;
            frame[i / 8] |= 1 << (i % 8);
        }
        frame
    }
}

/// Flattened mechanism list ready for repeated sampling.
#[derive(Clone, Debug)]
pub struct Sampler {
    cycles: u64,
    detectors_per_cycle: u32,
    probability: Vec<f64>,
    offsets: Vec<usize>,
    detectors: Vec<u64>,
    observables: Vec<ObservableMask>,
}

impl Sampler {
    /// Sampler for a shot of `cycles` cycles; the model is extended through its
    /// periodic template when the lengths differ.
    pub fn new<W: Real>(model: &NoiseModel<W>, cycles: u64) -> Result<Self, HarnessError> {
        let model = if cycles == model.cycles() {
            model.clone().canonical()
        } else {
            ModelTemplate::new(model)?.extend_to(cycles)?
        };
        let mut s = Sampler {
            cycles,
            detectors_per_cycle: model.detectors_per_cycle,
            probability: Vec::with_capacity(model.mechanisms.len()),
            offsets: vec![0],
            detectors: Vec::new(),
            observables: Vec::with_capacity(model.mechanisms.len()),
        };
        for m in &model.mechanisms {
            s.probability.push(m.probability.as_f64());
            s.detectors.extend(m.detectors().map(|d| d.0));
            s.offsets.push(s.detectors.len());
            s.observables.push(m.observables());
        }
        Ok(s)
    }

    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    pub fn sample(&self, seed: u64, shot: u64) -> ShotSample {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(shot);
        let mut fired: Vec<u64> = Vec::new();
        let mut obs = 0;
        for (k, &p) in self.probability.iter().enumerate() {
            let u: f64 = rng.gen();
            if u < p {
                fired.extend_from_slice(&self.detectors[self.offsets[k]..self.offsets[k + 1]]);
                obs ^= self.observables[k];
            }
        }
        fired.sort_unstable();
        let mut events = Vec::with_capacity(fired.len());
        let mut i = 0;
        while i < fired.len() {
            let mut j = i;
            while j < fired.len() && fired[j] == fired[i] {
                j += 1;
            }
            if (j - i) % 2 == 1 {
                events.push(DetectorId(fired[i]));
            }
            i = j;
        }
        ShotSample {
            shot,
            cycles: self.cycles,
            detectors_per_cycle: self.detectors_per_cycle,
            events,
            true_observables: obs,
        }
    }
}

/// `shots` independent shots of `cycles` cycles, sampled in parallel.
pub fn sample_shots<W: Real>(
    model: &NoiseModel<W>,
    shots: u64,
    cycles: u64,
    seed: u64,
) -> Result<Vec<ShotSample>, HarnessError> {
    let sampler = Sampler::new(model, cycles)?;
    Ok((0..shots).into_par_iter().map(|k| sampler.sample(seed, k)).collect())
}

/// Fired detectors over all detector slots.
pub fn detection_fraction(samples: &[ShotSample]) -> Result<f64, HarnessError> {
    let slots: u64 = samples.iter().map(|s| s.num_detectors()).sum();
    if slots == 0 {
        return Err(HarnessError::EmptyInput);
    }
    let fired: u64 = samples.iter().map(|s| s.events.len() as u64).sum();
    Ok(fired as f64 / slots as f64)
}
