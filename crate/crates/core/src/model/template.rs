//! Periodic structure of a model: a prologue, a bulk pattern repeating every
//! `period` cycles, and an epilogue anchored to the end of the shot. The
//! template regenerates the mechanisms of any cycle range for shots of any
//! length without materialising the whole shot.

use std::ops::Range;

use thiserror::Error;

use super::{ErrorMechanism, NoiseModel};
use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("model spans {cycles} cycles; prologue {prologue} + epilogue {epilogue} + one period {period} do not fit")]
    TooShort { cycles: u64, prologue: u32, epilogue: u32, period: u32 },
    #[error("bulk cycle {cycle} does not repeat with period {period}")]
    NotPeriodic { cycle: u64, period: u32 },
    #[error("shot of {cycles} cycles is shorter than prologue + epilogue ({min})")]
    ShotTooShort { cycles: u64, min: u64 },
}

#[derive(Clone, Debug)]
pub struct ModelTemplate<W> {
    model: NoiseModel<W>,
    model_cycles: u64,
    span: u64,
    head: Vec<Vec<ErrorMechanism<W>>>,
    bulk: Vec<Vec<ErrorMechanism<W>>>,
    tail: Vec<Vec<ErrorMechanism<W>>>,
}

fn canonical_set<W: Real>(mut mechs: Vec<ErrorMechanism<W>>) -> Vec<ErrorMechanism<W>> {
    let mut m = NoiseModel::new(1, 0);
    m.mechanisms = std::mem::take(&mut mechs);
    m.canonicalize();
    m.mechanisms
}

impl<W: Real> ModelTemplate<W> {
    pub fn new(model: &NoiseModel<W>) -> Result<Self, TemplateError> {
        let model = model.clone().canonical();
        let dpc = model.detectors_per_cycle;
        let cycles = model.cycles();
        let pro = model.prologue_cycles as u64;
        let epi = model.epilogue_cycles as u64;
        let period = model.period as u64;
        if cycles < pro + epi + period {
            return Err(TemplateError::TooShort {
                cycles,
                prologue: model.prologue_cycles,
                epilogue: model.epilogue_cycles,
                period: model.period,
            });
        }
        let mut by_cycle: Vec<Vec<ErrorMechanism<W>>> = vec![Vec::new(); cycles as usize];
        let mut span = 0;
        for m in &model.mechanisms {
            let (lo, hi) = m.cycle_range(dpc);
            span = span.max(hi - lo);
            by_cycle[hi as usize].push(m.clone());
        }
        let by_cycle: Vec<_> = by_cycle.into_iter().map(canonical_set).collect();
        let bulk_end = cycles - epi;
        for c in pro + period..bulk_end {
            let shifted = canonical_set(
                by_cycle[(c - period) as usize]
                    .iter()
                    .map(|m| m.shifted(period as i64, dpc))
                    .collect(),
            );
            if shifted != by_cycle[c as usize] {
                return Err(TemplateError::NotPeriodic { cycle: c, period: model.period });
            }
        }
        Ok(ModelTemplate {
            head: by_cycle[..pro as usize].to_vec(),
            bulk: by_cycle[pro as usize..(pro + period) as usize].to_vec(),
            tail: by_cycle[bulk_end as usize..].to_vec(),
            model_cycles: cycles,
            span,
            model,
        })
    }

    pub fn model(&self) -> &NoiseModel<W> {
        &self.model
    }

    pub fn detectors_per_cycle(&self) -> u32 {
        self.model.detectors_per_cycle
    }

    pub fn num_observables(&self) -> u32 {
        self.model.num_observables
    }

    pub fn model_cycles(&self) -> u64 {
        self.model_cycles
    }

    /// Largest cycle distance between two detectors of one mechanism.
    pub fn span(&self) -> u64 {
        self.span
    }

    pub fn period(&self) -> u64 {
        self.model.period as u64
    }

    pub fn prologue(&self) -> u64 {
        self.model.prologue_cycles as u64
    }

    pub fn epilogue(&self) -> u64 {
        self.model.epilogue_cycles as u64
    }

    pub fn min_shot_cycles(&self) -> u64 {
        self.prologue() + self.epilogue()
    }

    /// Whether cycle `c` of a shot lies in the translation-invariant bulk.
    /// With an unknown shot length everything past the prologue is bulk.
    pub fn is_bulk_cycle(&self, c: u64, shot_cycles: Option<u64>) -> bool {
        c >= self.prologue() && shot_cycles.is_none_or(|t| c + self.epilogue() < t)
    }

    /// Phase of a bulk cycle within the repeating pattern.
    pub fn phase(&self, c: u64) -> u64 {
        (c - self.prologue()) % self.period()
    }

    /// Mechanisms whose highest detector cycle lies in `cycles`, in shot coordinates.
    pub fn mechanisms_ending_in(
        &self,
        cycles: Range<u64>,
        shot_cycles: Option<u64>,
    ) -> Vec<ErrorMechanism<W>> {
        let dpc = self.detectors_per_cycle();
        let mut out = Vec::new();
        let end = shot_cycles.map_or(cycles.end, |t| cycles.end.min(t));
        for c in cycles.start..end {
            if c < self.prologue() {
                out.extend(self.head[c as usize].iter().cloned());
            } else if self.is_bulk_cycle(c, shot_cycles) {
                let phase = self.phase(c);
                let shift = (c - self.prologue() - phase) as i64;
                out.extend(self.bulk[phase as usize].iter().map(|m| m.shifted(shift, dpc)));
            } else {
                let t = shot_cycles.expect("tail cycles require a known shot length");
                let idx = c + self.epilogue() - t;
                let shift = t as i64 - self.model_cycles as i64;
                out.extend(self.tail[idx as usize].iter().map(|m| m.shifted(shift, dpc)));
            }
        }
        out
    }

    /// The full model for a shot of `cycles` cycles.
    pub fn extend_to(&self, cycles: u64) -> Result<NoiseModel<W>, TemplateError> {
        if cycles < self.min_shot_cycles() {
            return Err(TemplateError::ShotTooShort { cycles, min: self.min_shot_cycles() });
        }
        let mut model = NoiseModel {
            mechanisms: self.mechanisms_ending_in(0..cycles, Some(cycles)),
            ..self.model.clone()
        };
        model.canonicalize();
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::codes::RepetitionCode;

    #[test]
    fn extend_to_own_length_is_identity() {
        let model = RepetitionCode::new(5, 12, 0.01).with_readout(0.002).noise_model::<f64>();
        let t = ModelTemplate::new(&model).unwrap();
        assert_eq!(t.extend_to(12).unwrap(), model.clone().canonical());
        assert_eq!(t.span(), 1);
    }

    #[test]
    fn extend_matches_direct_generation() {
        let base = RepetitionCode::new(3, 6, 0.02).with_readout(0.005);
        let t = ModelTemplate::new(&base.noise_model::<f64>()).unwrap();
        for cycles in [2, 3, 7, 40] {
            let direct = RepetitionCode { cycles, ..base.clone() }.noise_model::<f64>().canonical();
            assert_eq!(t.extend_to(cycles).unwrap(), direct, "cycles={cycles}");
        }
        assert!(matches!(t.extend_to(1), Err(TemplateError::ShotTooShort { .. })));
    }

    #[test]
    fn bulk_translates_by_period() {
        // Template property: cycles [k, k+p) map onto [k+p, k+2p) under translation.
        let model = RepetitionCode::new(7, 30, 0.03).noise_model::<f64>();
        let t = ModelTemplate::new(&model).unwrap();
        let dpc = t.detectors_per_cycle();
        for k in 1..20u64 {
            let a: Vec<_> = t
                .mechanisms_ending_in(k..k + 1, Some(30))
                .into_iter()
                .map(|m| m.shifted(1, dpc))
                .collect();
            let b = t.mechanisms_ending_in(k + 1..k + 2, Some(30));
            assert_eq!(canonical_set(a), canonical_set(b));
        }
    }

    #[test]
    fn non_periodic_model_rejected() {
        let mut model = RepetitionCode::new(3, 8, 0.01).noise_model::<f64>();
        model.mechanisms.push(ErrorMechanism::graphlike(0.2, &[8, 9], 0));
        assert!(matches!(ModelTemplate::new(&model), Err(TemplateError::NotPeriodic { .. })));
    }
}
