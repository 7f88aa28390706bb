//! Streaming block decoder: per-block matching on a worker pool, two layers
//! of fuses, herald detection and observable extraction.
//!
//! The caller's thread coordinates. It hands each block to a worker once the
//! block's frames and final graph view are available; workers reweight and
//! decode blocks and run the first fuse layer. The second layer runs on the
//! coordinator in stream order, since each of its fuses extends the result of
//! the previous one, re-solving every pair inside the blocks still held.
//! Blocks retire one fused unit behind the newest cut: their matches are read
//! out, their reweights undone and their views released.

use std::collections::BTreeMap;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::MutexGuard;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::buffer::{assemble_view, BlockView, BufferConfig, BufferError, GraphBuffer, SlotData};
use crate::correlations::{apply_preweights, select_seed_edges, undo_reweights, CorrelationError, ReweightLog};
use crate::engine::{decode_block, fuse, BlockResult, EngineError, MatchPair};
use crate::model::{DetectorId, ModelTemplate, ObservableMask};
use crate::scalar::Real;
use crate::stream::{LatencyRecord, ShotLatency};

/// Decoder output for one shot.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub shot_index: u64,
    pub observables: ObservableMask,
    pub heralded: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PipelineConfig {
    pub cycles_per_block: u64,
    pub workers: usize,
    pub buffer_capacity: usize,
    /// Run the preweight pass on every block.
    pub correlations: bool,
}

impl PipelineConfig {
    pub fn new(cycles_per_block: u64) -> Self {
        PipelineConfig {
            cycles_per_block,
            workers: 1,
            buffer_capacity: crate::buffer::DEFAULT_CAPACITY,
            correlations: true,
        }
    }

    pub fn workers(mut self, workers: usize) -> Self {
        self.workers = workers.max(1);
        self
    }

    pub fn capacity(mut self, capacity: usize) -> Self {
        self.buffer_capacity = capacity;
        self
    }

    pub fn correlations(mut self, on: bool) -> Self {
        self.correlations = on;
        self
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Buffer(#[from] BufferError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Correlation(#[from] CorrelationError),
    #[error("blocks need at least 2 cycles, got {0}")]
    BlockTooSmall(u64),
    #[error("frame for cycle {cycle} exceeds the shot length {cycles}")]
    PastShotEnd { cycle: u64, cycles: u64 },
    #[error("shot ended after {received} of {expected} cycles")]
    IncompleteShot { received: u64, expected: u64 },
    #[error("shot of {cycles} cycles is shorter than the model's prologue and epilogue ({min})")]
    ShotTooShort { cycles: u64, min: u64 },
    #[error("detector {index} out of range for {detectors_per_cycle} detectors per cycle")]
    DetectorOutOfRange { index: u32, detectors_per_cycle: u32 },
    #[error("worker pool failed: {0}")]
    Pool(String),
}

/// Everything known about a decoded shot.
#[derive(Clone, Debug)]
pub struct ShotOutcome<W> {
    pub prediction: Prediction,
    /// Total weight of the final matching.
    pub weight: W,
    pub cycles: u64,
    /// Final matching in retirement order.
    pub pairs: Vec<MatchPair<W>>,
    pub blocks: Vec<LatencyRecord>,
    pub latency: ShotLatency,
}

/// Fused units kept open behind the newest cut before their blocks retire.
const RETIRE_LAG_UNITS: u64 = 1;

type TaskResult<W> = Result<Done<W>, PipelineError>;

enum Done<W> {
    Block { block: u64, result: BlockResult<W>, log: ReweightLog<W>, at: u64 },
    Unit { unit: u64, result: BlockResult<W> },
}

/// Reusable streaming decoder owning the graph buffer and worker pool.
pub struct StreamingDecoder<W: Real> {
    buffer: GraphBuffer<W>,
    pool: rayon::ThreadPool,
    config: PipelineConfig,
    clock: Instant,
}

impl<W: Real> StreamingDecoder<W> {
    pub fn new(template: ModelTemplate<W>, config: PipelineConfig) -> Result<Self, PipelineError> {
        if config.cycles_per_block < 2 {
            return Err(PipelineError::BlockTooSmall(config.cycles_per_block));
        }
        let buffer = GraphBuffer::new(
            template,
            BufferConfig::new(config.cycles_per_block).with_capacity(config.buffer_capacity),
        )?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers.max(1))
            .thread_name(|i| format!("block-worker-{i}"))
            .build()
            .map_err(|e| PipelineError::Pool(e.to_string()))?;
        Ok(StreamingDecoder { buffer, pool, config, clock: Instant::now() })
    }

    pub fn config(&self) -> PipelineConfig {
        self.config
    }

    pub fn buffer(&self) -> &GraphBuffer<W> {
        &self.buffer
    }

    /// Nanoseconds on the decoder's monotonic clock.
    pub fn now_ns(&self) -> u64 {
        self.clock.elapsed().as_nanos() as u64
    }

    /// Starts a shot of `cycles` cycles, or of unknown length.
    pub fn begin_shot(&mut self, shot_index: u64, cycles: Option<u64>) -> Result<ShotSession<'_, W>, PipelineError> {
        let min = self.buffer.template().min_shot_cycles().max(1);
        if let Some(t) = cycles {
            if t < min {
                return Err(PipelineError::ShotTooShort { cycles: t, min });
            }
        }
        self.buffer.begin_shot(cycles)?;
        let (tx, rx) = channel();
        Ok(ShotSession {
            decoder: self,
            shot_index,
            cycles,
            received: 0,
            pending: BTreeMap::new(),
            launched: 0,
            views: BTreeMap::new(),
            acquired_at: BTreeMap::new(),
            depth_at: BTreeMap::new(),
            blocks_done: BTreeMap::new(),
            units_done: BTreeMap::new(),
            unit_launched: 0,
            acc: None,
            next_unit: 1,
            retired: 0,
            in_flight: 0,
            tx,
            rx,
            observables: 0,
            heralded: false,
            weight: W::zero(),
            pairs: Vec::new(),
            records: Vec::new(),
            reported: 0,
            last_frame_ns: 0,
        })
    }

    /// Decodes a complete shot given its fired detectors.
    pub fn decode_shot(
        &mut self,
        shot_index: u64,
        cycles: u64,
        events: &[DetectorId],
    ) -> Result<ShotOutcome<W>, PipelineError> {
        let dpc = self.buffer.template().detectors_per_cycle() as u64;
        let mut session = self.begin_shot(shot_index, Some(cycles))?;
        let mut sorted = events.to_vec();
        sorted.sort_unstable();
        let mut k = 0;
        let mut frame = Vec::new();
        for c in 0..cycles {
            frame.clear();
            while k < sorted.len() && sorted[k].0 < (c + 1) * dpc {
                frame.push((sorted[k].0 - c * dpc) as u32);
                k += 1;
            }
            session.push_cycle(&frame)?;
        }
        session.finish()
    }
}

/// One shot in progress.
pub struct ShotSession<'d, W: Real> {
    decoder: &'d mut StreamingDecoder<W>,
    shot_index: u64,
    cycles: Option<u64>,
    received: u64,
    /// Events of blocks not yet launched, by block.
    pending: BTreeMap<u64, Vec<DetectorId>>,
    launched: u64,
    views: BTreeMap<u64, BlockView<W>>,
    acquired_at: BTreeMap<u64, u64>,
    depth_at: BTreeMap<u64, u64>,
    blocks_done: BTreeMap<u64, (BlockResult<W>, ReweightLog<W>, u64)>,
    units_done: BTreeMap<u64, BlockResult<W>>,
    unit_launched: u64,
    /// Fused result of every unit up to `next_unit`, minus retired blocks.
    acc: Option<BlockResult<W>>,
    next_unit: u64,
    retired: u64,
    in_flight: usize,
    tx: Sender<TaskResult<W>>,
    rx: Receiver<TaskResult<W>>,
    observables: ObservableMask,
    heralded: bool,
    weight: W,
    pairs: Vec<MatchPair<W>>,
    records: Vec<LatencyRecord>,
    reported: usize,
    last_frame_ns: u64,
}

fn lock_all<W: Real>(views: &[BlockView<W>]) -> Result<Vec<MutexGuard<'_, SlotData<W>>>, BufferError> {
    views.iter().map(|v| v.lock()).collect()
}

fn run_block<W: Real>(
    view: BlockView<W>,
    events: Vec<DetectorId>,
    m: u64,
    correlations: bool,
) -> Result<(BlockResult<W>, ReweightLog<W>), PipelineError> {
    let mut slot = view.lock()?;
    let log = if correlations {
        let seeds = select_seed_edges(&*slot, &events);
        apply_preweights(&mut *slot, &seeds)
    } else {
        ReweightLog::default()
    };
    let graph = assemble_view(&[&*slot], m, true, true);
    let result = decode_block(&graph, view.block(), &events)?;
    Ok((result, log))
}

fn run_fuse<W: Real>(
    a: BlockResult<W>,
    b: BlockResult<W>,
    views: &[BlockView<W>],
    m: u64,
    leading: bool,
) -> Result<BlockResult<W>, PipelineError> {
    let guards = lock_all(views)?;
    let slots: Vec<&SlotData<W>> = guards.iter().map(|g| &**g).collect();
    let graph = assemble_view(&slots, m, leading, true);
    drop(guards);
    Ok(fuse(a, b, &graph)?)
}

impl<W: Real> ShotSession<'_, W> {
    fn m(&self) -> u64 {
        self.decoder.config.cycles_per_block
    }

    fn dpc(&self) -> u64 {
        self.decoder.buffer.template().detectors_per_cycle() as u64
    }

    fn num_blocks(&self) -> Option<u64> {
        self.cycles.map(|t| t.div_ceil(self.m()))
    }

    /// Cycles received so far.
    pub fn received(&self) -> u64 {
        self.received
    }

    /// Blocks whose frames are complete but which are not yet retired.
    pub fn queue_depth(&self) -> u64 {
        self.complete_blocks() - self.retired
    }

    fn complete_blocks(&self) -> u64 {
        let m = self.m();
        match self.cycles {
            Some(t) if self.received >= t => t.div_ceil(m),
            _ => self.received / m,
        }
    }

    /// Latency records of blocks retired since the previous call.
    pub fn new_records(&mut self) -> &[LatencyRecord] {
        let from = self.reported;
        self.reported = self.records.len();
        &self.records[from..]
    }

    /// Adds the next cycle's fired detectors (local indices within the cycle).
    pub fn push_cycle(&mut self, fired: &[u32]) -> Result<(), PipelineError> {
        if let Some(t) = self.cycles {
            if self.received >= t {
                return Err(PipelineError::PastShotEnd { cycle: self.received, cycles: t });
            }
        }
        let dpc = self.dpc();
        let c = self.received;
        let block = c / self.m();
        if !fired.is_empty() {
            let list = self.pending.entry(block).or_default();
            for &i in fired {
                if i as u64 >= dpc {
                    return Err(PipelineError::DetectorOutOfRange { index: i, detectors_per_cycle: dpc as u32 });
                }
                list.push(DetectorId(c * dpc + i as u64));
            }
        }
        let before = self.complete_blocks();
        self.received += 1;
        let now = self.decoder.now_ns();
        self.last_frame_ns = now;
        let after = self.complete_blocks();
        for b in before..after {
            self.acquired_at.insert(b, now);
            self.depth_at.insert(b, after - self.retired);
        }
        self.launch_ready()?;
        self.drain(false)
    }

    /// Whether block `b`'s graph no longer depends on the unknown shot end.
    fn structure_final(&self, b: u64) -> bool {
        if self.cycles.is_some() {
            return true;
        }
        let t = self.decoder.buffer.template();
        self.received > (b + 1) * self.m() + t.span() + t.epilogue()
    }

    fn launch_ready(&mut self) -> Result<(), PipelineError> {
        while self.launched < self.complete_blocks() && self.structure_final(self.launched) {
            let b = self.launched;
            while b >= self.retired + self.decoder.config.buffer_capacity as u64 {
                self.wait_one()?;
            }
            let view = self.decoder.buffer.ensure_window(b)?;
            let mut events = self.pending.remove(&b).unwrap_or_default();
            events.sort_unstable();
            let (m, corr) = (self.m(), self.decoder.config.correlations);
            let tx = self.tx.clone();
            let task_view = view.clone();
            self.views.insert(b, view);
            self.in_flight += 1;
            let clock = self.decoder.clock;
            self.decoder.pool.spawn(move || {
                let out = run_block(task_view, events, m, corr).map(|(result, log)| Done::Block {
                    block: b,
                    result,
                    log,
                    at: clock.elapsed().as_nanos() as u64,
                });
                let _ = tx.send(out);
            });
            self.launched += 1;
        }
        Ok(())
    }

    fn handle(&mut self, done: Done<W>) {
        self.in_flight -= 1;
        match done {
            Done::Block { block, result, log, at } => {
                self.blocks_done.insert(block, (result, log, at));
            }
            Done::Unit { unit, result } => {
                self.units_done.insert(unit, result);
            }
        }
    }

    /// Blocks for one finished task and advances the fuse chain.
    fn wait_one(&mut self) -> Result<(), PipelineError> {
        if self.in_flight == 0 {
            return Err(PipelineError::Pool("window full with no task in flight".into()));
        }
        let msg = self.rx.recv().map_err(|e| PipelineError::Pool(e.to_string()))?;
        self.handle(msg?);
        self.launch_units()?;
        self.advance_chain()
    }

    /// Processes finished tasks; with `wait`, blocks until nothing is in flight.
    fn drain(&mut self, wait: bool) -> Result<(), PipelineError> {
        loop {
            while let Ok(msg) = self.rx.try_recv() {
                self.handle(msg?);
            }
            self.launch_units()?;
            self.advance_chain()?;
            if !wait || self.in_flight == 0 {
                return Ok(());
            }
            let msg = self.rx.recv().map_err(|e| PipelineError::Pool(e.to_string()))?;
            self.handle(msg?);
        }
    }

    /// Starts first-layer fuses whose two blocks are decoded.
    fn launch_units(&mut self) -> Result<(), PipelineError> {
        loop {
            let k = self.unit_launched;
            let (lo, hi) = (2 * k, 2 * k + 1);
            let last_known = self.num_blocks();
            let lone = last_known == Some(lo + 1);
            if !self.blocks_done.contains_key(&lo) || (!lone && !self.blocks_done.contains_key(&hi)) {
                return Ok(());
            }
            let a = self.blocks_done.get_mut(&lo).map(|x| std::mem::replace(&mut x.0, empty(lo))).unwrap();
            if lone {
                self.units_done.insert(k, a);
            } else {
                let b = self.blocks_done.get_mut(&hi).map(|x| std::mem::replace(&mut x.0, empty(hi))).unwrap();
                let views = vec![self.views[&lo].clone(), self.views[&hi].clone()];
                let m = self.m();
                let tx = self.tx.clone();
                self.in_flight += 1;
                self.decoder.pool.spawn(move || {
                    let out = run_fuse(a, b, &views, m, true).map(|result| Done::Unit { unit: k, result });
                    let _ = tx.send(out);
                });
            }
            self.unit_launched += 1;
        }
    }

    /// Applies second-layer fuses in order and retires finished blocks.
    fn advance_chain(&mut self) -> Result<(), PipelineError> {
        if self.acc.is_none() {
            match self.units_done.remove(&0) {
                Some(u) => self.acc = Some(u),
                None => return Ok(()),
            }
        }
        while let Some(next) = self.units_done.remove(&self.next_unit) {
            let k = self.next_unit;
            let acc = self.acc.take().unwrap();
            let views: Vec<BlockView<W>> =
                (self.retired..next.blocks.end).map(|b| self.views[&b].clone()).collect();
            let fused = run_fuse(acc, next, &views, self.m(), false)?;
            self.acc = Some(fused);
            self.next_unit += 1;
            self.retire_before((2 * k).saturating_sub(2 * RETIRE_LAG_UNITS))?;
        }
        Ok(())
    }

    /// Reads out and releases every block below `upto`.
    fn retire_before(&mut self, upto: u64) -> Result<(), PipelineError> {
        if upto <= self.retired {
            return Ok(());
        }
        let m = self.m();
        let dpc = self.dpc();
        let acc = self.acc.take().unwrap();
        let (gone, kept): (Vec<_>, Vec<_>) =
            acc.matching.pairs.into_iter().partition(|p| p.event.cycle(dpc as u32) / m < upto);
        for p in &gone {
            self.observables ^= p.observables;
            self.weight = self.weight + p.weight;
            self.heralded |= p.target.is_block_boundary();
        }
        self.pairs.extend(gone);
        let end = acc.blocks.end;
        self.acc = Some(BlockResult::new(upto.max(acc.blocks.start)..end, crate::engine::Matching::from_pairs(kept)));
        let done_ns = self.decoder.now_ns();
        for b in self.retired..upto {
            let (_, mut log, decoded_at) = self.blocks_done.remove(&b).expect("retired blocks are decoded");
            let view = self.views.remove(&b).expect("retired blocks are held");
            {
                let mut slot = view.lock()?;
                undo_reweights(&mut *slot, &mut log)?;
            }
            self.decoder.buffer.release(view)?;
            let acquired = self.acquired_at.remove(&b).unwrap_or(decoded_at);
            let depth = self.depth_at.remove(&b).unwrap_or(0);
            self.records.push(LatencyRecord::new(self.shot_index, b, acquired, done_ns, depth));
        }
        self.retired = upto;
        Ok(())
    }

    /// Ends the shot (announcing its length if it was open) and returns the
    /// prediction once every block is retired.
    pub fn finish(mut self) -> Result<ShotOutcome<W>, PipelineError> {
        let end_ns = self.decoder.now_ns();
        match self.cycles {
            Some(t) if self.received < t => {
                return Err(PipelineError::IncompleteShot { received: self.received, expected: t });
            }
            Some(_) => {}
            None => {
                let min = self.decoder.buffer.template().min_shot_cycles().max(1);
                if self.received < min {
                    return Err(PipelineError::ShotTooShort { cycles: self.received, min });
                }
                self.cycles = Some(self.received);
                self.decoder.buffer.announce_end(self.received)?;
                self.last_frame_ns = end_ns;
            }
        }
        self.launch_ready()?;
        self.drain(true)?;
        let total = self.num_blocks().unwrap();
        debug_assert_eq!(self.next_unit, total.div_ceil(2));
        self.retire_before(total)?;
        let emitted = self.decoder.now_ns();
        let latency = ShotLatency::new(self.shot_index, emitted.saturating_sub(self.last_frame_ns), &self.records);
        Ok(ShotOutcome {
            prediction: Prediction {
                shot_index: self.shot_index,
                observables: self.observables,
                heralded: self.heralded,
            },
            weight: self.weight,
            cycles: self.received,
            pairs: std::mem::take(&mut self.pairs),
            blocks: std::mem::take(&mut self.records),
            latency,
        })
    }
}

fn empty<W: Real>(block: u64) -> BlockResult<W> {
    BlockResult::new(block..block + 1, crate::engine::Matching::empty())
}

impl<W: Real> Drop for ShotSession<'_, W> {
    fn drop(&mut self) {
        // Let workers finish before views and overlays are torn down.
        while self.in_flight > 0 {
            match self.rx.recv() {
                Ok(_) => self.in_flight -= 1,
                Err(_) => break,
            }
        }
        for (_, view) in std::mem::take(&mut self.views) {
            if let Ok(mut slot) = view.lock() {
                if let Some((_, log, _)) = self.blocks_done.get_mut(&view.block()) {
                    let _ = undo_reweights(&mut *slot, log);
                }
            }
            let _ = self.decoder.buffer.release(view);
        }
    }
}
