//! Constant-size sliding window of per-block graph views.
//!
//! Block `b` covers cycles `[bM, (b+1)M)` and owns every edge whose highest
//! detector lies in those cycles. Its structure is stored relative to the
//! block's first node, so all bulk blocks of the same phase share one
//! immutable structure. A grapher thread publishes blocks ahead of the
//! decoder into `capacity` slots addressed by `block % capacity`; each slot
//! keeps a weight overlay that decoders reweight and restore in place.

use std::collections::{BTreeMap, HashMap};
use std::mem::size_of;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;

use thiserror::Error;

use crate::correlations::EdgeOverlay;
use crate::engine::{SearchGraph, SearchGraphBuilder};
use crate::model::{xor_probability, DetectorId, EdgeId, ModelTemplate, ObservableMask};
use crate::scalar::{weight_of, Real};

pub const DEFAULT_CAPACITY: usize = 128;

/// Edge of a block structure. Node offsets are relative to the block's first
/// detector; a negative `a` lies in an earlier block.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockEdge<W> {
    pub a: i64,
    /// `None` is the graph boundary.
    pub b: Option<i64>,
    pub probability: W,
    pub weight: W,
    pub observables: ObservableMask,
}

impl<W> BlockEdge<W> {
    pub fn is_internal(&self) -> bool {
        self.a >= 0
    }
}

/// Translation-invariant description of one block's slice of the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockStructure<W> {
    cycles: u64,
    detectors_per_cycle: u32,
    edges: Vec<BlockEdge<W>>,
    weights: Vec<W>,
    offsets: Vec<u32>,
    incident: Vec<u32>,
    partners: Vec<Vec<(EdgeId, W)>>,
    trailing_ports: Vec<u32>,
}

impl<W: Real> BlockStructure<W> {
    /// Structure of cycles `[c0, c1)` of a shot of `shot_cycles` cycles
    /// (`None` while the length is unknown).
    pub fn build(template: &ModelTemplate<W>, c0: u64, c1: u64, shot_cycles: Option<u64>) -> Self {
        let dpc = template.detectors_per_cycle() as u64;
        let base = (c0 * dpc) as i64;
        let lo = c0 * dpc;
        let hi = c1 * dpc;
        let half = W::of(0.5);
        let mut merged: BTreeMap<(i64, Option<i64>), (W, ObservableMask)> = BTreeMap::new();
        let mut ports = Vec::new();
        let mut joint: BTreeMap<((i64, Option<i64>), (i64, Option<i64>)), W> = BTreeMap::new();
        let mechanisms = template.mechanisms_ending_in(c0..c1 + template.span() + 1, shot_cycles);
        for m in &mechanisms {
            let mut owned = Vec::new();
            for part in &m.parts {
                let top = part.detectors.last().unwrap().0;
                let bottom = part.detectors[0].0;
                if top >= hi && bottom < hi && bottom >= lo {
                    ports.push((bottom - lo) as u32);
                }
                if top < lo || top >= hi {
                    continue;
                }
                let key = match part.detectors.as_slice() {
                    [a] => (a.0 as i64 - base, None),
                    [a, b] => (a.0 as i64 - base, Some(b.0 as i64 - base)),
                    _ => unreachable!("parts hold one or two detectors"),
                };
                let entry = merged.entry(key).or_insert((W::zero(), part.observables));
                entry.0 = xor_probability(entry.0, m.probability).min(half);
                owned.push(key);
            }
            for i in 0..owned.len() {
                for j in i + 1..owned.len() {
                    let k = (owned[i].min(owned[j]), owned[i].max(owned[j]));
                    let p = joint.entry(k).or_insert(W::zero());
                    *p = xor_probability(*p, m.probability);
                }
            }
        }
        let nodes = ((c1 - c0) * dpc) as usize;
        let mut index = HashMap::new();
        let mut edges = Vec::with_capacity(merged.len());
        let mut degree = vec![0u32; nodes + 1];
        for (i, ((a, b), (p, obs))) in merged.into_iter().enumerate() {
            index.insert((a, b), i as u32);
            if a >= 0 {
                degree[a as usize] += 1;
                if let Some(b) = b {
                    degree[b as usize] += 1;
                }
            }
            edges.push(BlockEdge { a, b, probability: p, weight: weight_of(p), observables: obs });
        }
        let mut offsets = vec![0u32; nodes + 1];
        for v in 0..nodes {
            offsets[v + 1] = offsets[v] + degree[v];
        }
        let mut fill = offsets.clone();
        let mut incident = vec![0u32; offsets[nodes] as usize];
        for (i, e) in edges.iter().enumerate().filter(|(_, e)| e.is_internal()) {
            for v in std::iter::once(e.a).chain(e.b) {
                incident[fill[v as usize] as usize] = i as u32;
                fill[v as usize] += 1;
            }
        }
        let mut partners = vec![Vec::new(); edges.len()];
        for ((x, y), p) in joint {
            let (x, y) = (index[&x], index[&y]);
            partners[x as usize].push((EdgeId(y), p));
            partners[y as usize].push((EdgeId(x), p));
        }
        for list in &mut partners {
            list.sort_by_key(|&(e, _)| e);
        }
        ports.sort_unstable();
        ports.dedup();
        let weights = edges.iter().map(|e| e.weight).collect();
        BlockStructure {
            cycles: c1 - c0,
            detectors_per_cycle: dpc as u32,
            edges,
            weights,
            offsets,
            incident,
            partners,
            trailing_ports: ports,
        }
    }

    pub fn cycles(&self) -> u64 {
        self.cycles
    }

    pub fn num_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn edges(&self) -> &[BlockEdge<W>] {
        &self.edges
    }

    pub fn weights(&self) -> &[W] {
        &self.weights
    }

    pub fn partners(&self, e: EdgeId) -> &[(EdgeId, W)] {
        &self.partners[e.index()]
    }

    pub fn trailing_ports(&self) -> &[u32] {
        &self.trailing_ports
    }

    fn incident_local(&self, v: usize) -> &[u32] {
        &self.incident[self.offsets[v] as usize..self.offsets[v + 1] as usize]
    }

    /// Heap bytes held by the structure.
    pub fn heap_bytes(&self) -> usize {
        self.edges.capacity() * size_of::<BlockEdge<W>>()
            + self.weights.capacity() * size_of::<W>()
            + (self.offsets.capacity() + self.incident.capacity() + self.trailing_ports.capacity())
                * size_of::<u32>()
            + self.partners.capacity() * size_of::<Vec<(EdgeId, W)>>()
            + self.partners.iter().map(|p| p.capacity() * size_of::<(EdgeId, W)>()).sum::<usize>()
    }
}

/// A published block: shared structure plus this slot's weight overlay.
#[derive(Debug)]
pub struct SlotData<W> {
    block: u64,
    first_cycle: u64,
    structure: Arc<BlockStructure<W>>,
    overlay: Vec<W>,
}

impl<W: Real> SlotData<W> {
    pub fn block(&self) -> u64 {
        self.block
    }

    pub fn first_cycle(&self) -> u64 {
        self.first_cycle
    }

    pub fn structure(&self) -> &BlockStructure<W> {
        &self.structure
    }

    pub fn base(&self) -> u64 {
        self.first_cycle * self.structure.detectors_per_cycle as u64
    }

    pub fn overlay(&self) -> &[W] {
        &self.overlay
    }

    pub fn contains(&self, d: DetectorId) -> bool {
        d.0 >= self.base() && d.0 < self.base() + self.structure.num_nodes() as u64
    }

    /// Whether every overlay weight equals the template bit for bit.
    pub fn is_clean(&self) -> bool {
        self.overlay.len() == self.structure.weights.len()
            && self
                .overlay
                .iter()
                .zip(&self.structure.weights)
                .all(|(a, b)| a.to_f64().map(f64::to_bits) == b.to_f64().map(f64::to_bits))
    }

    /// Edges with global endpoints, for comparison with a whole-shot graph.
    pub fn global_edges(&self) -> Vec<(DetectorId, Option<DetectorId>, W, ObservableMask)> {
        let base = self.base() as i64;
        self.structure
            .edges
            .iter()
            .map(|e| {
                let a = DetectorId((base + e.a) as u64);
                let b = e.b.map(|b| DetectorId((base + b) as u64));
                (a, b, e.probability, e.observables)
            })
            .collect()
    }
}

impl<W: Real> EdgeOverlay<W> for SlotData<W> {
    fn incident(&self, d: DetectorId, out: &mut Vec<(EdgeId, Option<DetectorId>)>) {
        if !self.contains(d) {
            return;
        }
        let base = self.base();
        let v = (d.0 - base) as i64;
        for &e in self.structure.incident_local(v as usize) {
            let edge = &self.structure.edges[e as usize];
            let other = match edge.b {
                None => None,
                Some(b) if b == v => Some(DetectorId(base + edge.a as u64)),
                Some(b) => Some(DetectorId(base + b as u64)),
            };
            out.push((EdgeId(e), other));
        }
    }

    fn probability(&self, e: EdgeId) -> W {
        self.structure.edges[e.index()].probability
    }

    fn partners(&self, e: EdgeId) -> &[(EdgeId, W)] {
        self.structure.partners(e)
    }

    fn weight(&self, e: EdgeId) -> W {
        self.overlay[e.index()]
    }

    fn set_weight(&mut self, e: EdgeId, w: W) {
        self.overlay[e.index()] = w;
    }
}

/// Search graph over consecutive published blocks, using their overlays.
///
/// Edges entering the first block from an earlier one become leading ports
/// when `leading` is set; the last block's trailing ports are used when
/// `trailing` is set.
pub fn assemble_view<W: Real>(
    blocks: &[&SlotData<W>],
    cycles_per_block: u64,
    leading: bool,
    trailing: bool,
) -> SearchGraph<W> {
    let first = blocks[0];
    let base = first.base();
    let nodes: usize = blocks.iter().map(|b| b.structure.num_nodes()).sum();
    let mut builder = SearchGraphBuilder::new(base, nodes, first.structure.detectors_per_cycle);
    builder.cycles_per_block(cycles_per_block);
    for (k, slot) in blocks.iter().enumerate() {
        let shift = (slot.base() - base) as i64;
        for (e, w) in slot.structure.edges.iter().zip(&slot.overlay) {
            let a = shift + e.a;
            let b = e.b.map(|b| (shift + b) as u32);
            if a >= 0 {
                builder.edge(a as u32, b, *w, e.observables);
            } else {
                debug_assert_eq!(k, 0, "edges reach at most one block back");
                builder.skip_edge(*w, e.observables);
                if leading {
                    builder.leading_port(b.expect("boundary edges are internal"));
                }
            }
        }
    }
    if leading && first.block > 0 {
        builder.leading_cut(first.block);
    }
    let last = blocks[blocks.len() - 1];
    if trailing && !last.structure.trailing_ports.is_empty() {
        let shift = (last.base() - base) as u32;
        for &p in &last.structure.trailing_ports {
            builder.trailing_port(shift + p);
        }
        builder.trailing_cut(last.block + 1);
    }
    builder.build()
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BufferError {
    #[error("block {block} precedes the window start {lo}")]
    Rewind { block: u64, lo: u64 },
    #[error("block {block} is beyond the window [{lo}, {lo} + {capacity}) while block {lo} is not retired")]
    WindowFull { block: u64, lo: u64, capacity: usize },
    #[error("block {block} is past the end of the shot ({blocks} blocks)")]
    PastEnd { block: u64, blocks: u64 },
    #[error("view of block {0} is stale")]
    StaleView(u64),
    #[error("block {0} released without being held")]
    NotHeld(u64),
    #[error("block {0} released with reweights still applied")]
    DirtyOverlay(u64),
    #[error("cannot start a new shot or end this one while block {0} is held")]
    InUse(u64),
    #[error("capacity must be a power of two of at least 8, got {0}")]
    BadCapacity(usize),
    #[error("blocks of {block} cycles are shorter than the model span {span}")]
    BlockTooShort { block: u64, span: u64 },
    #[error("grapher stopped")]
    Closed,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BufferConfig {
    pub capacity: usize,
    pub cycles_per_block: u64,
}

impl BufferConfig {
    pub fn new(cycles_per_block: u64) -> Self {
        BufferConfig { capacity: DEFAULT_CAPACITY, cycles_per_block }
    }

    pub fn with_capacity(mut self, capacity: usize) -> Self {
        self.capacity = capacity;
        self
    }
}

/// Counters describing grapher work and memory.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BufferStats {
    pub structure_writes: u64,
    pub structure_reuses: u64,
    pub structural_bytes: usize,
    pub peak_structural_bytes: usize,
}

struct SlotMeta<W> {
    block: Option<u64>,
    readers: u32,
    released: bool,
    data: Arc<Mutex<SlotData<W>>>,
}

struct State<W> {
    epoch: u64,
    shot_cycles: Option<u64>,
    lo: u64,
    hi: u64,
    target: u64,
    slots: Vec<SlotMeta<W>>,
    shutdown: bool,
    stats: BufferStats,
}

impl<W> State<W> {
    fn num_blocks(&self, m: u64) -> Option<u64> {
        self.shot_cycles.map(|t| t.div_ceil(m))
    }
}

struct Shared<W> {
    template: ModelTemplate<W>,
    cycles_per_block: u64,
    capacity: usize,
    state: Mutex<State<W>>,
    changed: Condvar,
    bulk: Mutex<HashMap<u64, Arc<BlockStructure<W>>>>,
}

impl<W: Real> Shared<W> {
    fn lock(&self) -> MutexGuard<'_, State<W>> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn block_range(&self, block: u64, shot: Option<u64>) -> (u64, u64) {
        let c0 = block * self.cycles_per_block;
        let c1 = c0 + self.cycles_per_block;
        (c0, shot.map_or(c1, |t| c1.min(t)))
    }

    /// Whether block `b` is a full block in the periodic bulk.
    fn is_bulk(&self, block: u64, shot: Option<u64>) -> bool {
        let (c0, c1) = self.block_range(block, shot);
        let t = &self.template;
        c1 - c0 == self.cycles_per_block
            && c0 >= t.prologue()
            && shot.is_none_or(|s| c1 + t.span() + t.epilogue() <= s)
    }

    fn structure(&self, block: u64, shot: Option<u64>) -> Arc<BlockStructure<W>> {
        let (c0, c1) = self.block_range(block, shot);
        if !self.is_bulk(block, shot) {
            return Arc::new(BlockStructure::build(&self.template, c0, c1, shot));
        }
        let phase = self.template.phase(c0);
        let mut cache = self.bulk.lock().unwrap_or_else(|e| e.into_inner());
        cache
            .entry(phase)
            .or_insert_with(|| Arc::new(BlockStructure::build(&self.template, c0, c1, None)))
            .clone()
    }

    fn structural_bytes(&self, state: &State<W>) -> usize {
        let mut seen: Vec<*const BlockStructure<W>> = Vec::new();
        let mut bytes = 0;
        for slot in &state.slots {
            let data = slot.data.lock().unwrap_or_else(|e| e.into_inner());
            bytes += data.overlay.capacity() * size_of::<W>();
            let ptr = Arc::as_ptr(&data.structure);
            if !seen.contains(&ptr) {
                seen.push(ptr);
                bytes += data.structure.heap_bytes();
            }
        }
        let cache = self.bulk.lock().unwrap_or_else(|e| e.into_inner());
        for s in cache.values() {
            if !seen.contains(&Arc::as_ptr(s)) {
                bytes += s.heap_bytes();
            }
        }
        bytes
    }

    fn grapher(&self) {
        let mut state = self.lock();
        loop {
            if state.shutdown {
                return;
            }
            let limit = state.num_blocks(self.cycles_per_block).unwrap_or(u64::MAX);
            let want = state.target.min(state.lo + self.capacity as u64).min(limit);
            if state.hi >= want {
                state = self.changed.wait(state).unwrap_or_else(|e| e.into_inner());
                continue;
            }
            let block = state.hi;
            let epoch = state.epoch;
            let shot = state.shot_cycles;
            drop(state);
            let structure = self.structure(block, shot);
            state = self.lock();
            if state.epoch != epoch || state.hi != block {
                continue;
            }
            let slot = &mut state.slots[(block % self.capacity as u64) as usize];
            debug_assert_eq!(slot.readers, 0);
            let rewrote = {
                let mut data = slot.data.lock().unwrap_or_else(|e| e.into_inner());
                let same = Arc::ptr_eq(&data.structure, &structure);
                if !same {
                    data.overlay.clear();
                    data.overlay.extend_from_slice(&structure.weights);
                    data.structure = structure;
                }
                data.block = block;
                data.first_cycle = block * self.cycles_per_block;
                !same
            };
            slot.block = Some(block);
            slot.readers = 0;
            slot.released = false;
            if rewrote {
                state.stats.structure_writes += 1;
            } else {
                state.stats.structure_reuses += 1;
            }
            state.hi = block + 1;
            let bytes = self.structural_bytes(&state);
            state.stats.structural_bytes = bytes;
            state.stats.peak_structural_bytes = state.stats.peak_structural_bytes.max(bytes);
            self.changed.notify_all();
        }
    }
}

/// Handle on a published block; keep it until the block is retired and hand
/// it back through [`GraphBuffer::release`]. Cloning a handle does not add a
/// hold, so releasing both copies fails the second time.
#[derive(Clone, Debug)]
pub struct BlockView<W> {
    block: u64,
    data: Arc<Mutex<SlotData<W>>>,
}

impl<W: Real> BlockView<W> {
    pub fn block(&self) -> u64 {
        self.block
    }

    /// Locks the slot. Fails if the slot has since been reassigned.
    pub fn lock(&self) -> Result<MutexGuard<'_, SlotData<W>>, BufferError> {
        let guard = self.data.lock().unwrap_or_else(|e| e.into_inner());
        if guard.block != self.block {
            return Err(BufferError::StaleView(self.block));
        }
        Ok(guard)
    }
}

/// The graph buffer and its grapher thread.
pub struct GraphBuffer<W: Real> {
    shared: Arc<Shared<W>>,
    grapher: Option<JoinHandle<()>>,
}

impl<W: Real> GraphBuffer<W> {
    pub fn new(template: ModelTemplate<W>, config: BufferConfig) -> Result<Self, BufferError> {
        if config.capacity < 8 || !config.capacity.is_power_of_two() {
            return Err(BufferError::BadCapacity(config.capacity));
        }
        if config.cycles_per_block < template.span().max(1) {
            return Err(BufferError::BlockTooShort { block: config.cycles_per_block, span: template.span() });
        }
        // Every slot gets an overlay sized for the largest block it may hold.
        let m = config.cycles_per_block;
        let probe_len = template.prologue() + template.epilogue() + 2 * m + 4 * template.span() + template.period() * 2;
        let mut max_edges = 0;
        for b in 0..probe_len.div_ceil(m) + 1 {
            let c0 = b * m;
            for shot in [None, Some(probe_len), Some(c0 + m), Some(c0 + m + template.span() + template.epilogue())] {
                let t = shot.unwrap_or(u64::MAX);
                if c0 < t && t >= template.min_shot_cycles() {
                    let s = BlockStructure::build(&template, c0, (c0 + m).min(t), shot);
                    max_edges = max_edges.max(s.edges.len());
                }
            }
        }
        let empty = Arc::new(BlockStructure {
            cycles: 0,
            detectors_per_cycle: template.detectors_per_cycle(),
            edges: Vec::new(),
            weights: Vec::new(),
            offsets: vec![0],
            incident: Vec::new(),
            partners: Vec::new(),
            trailing_ports: Vec::new(),
        });
        let slots = (0..config.capacity)
            .map(|_| SlotMeta {
                block: None,
                readers: 0,
                released: false,
                data: Arc::new(Mutex::new(SlotData {
                    block: u64::MAX,
                    first_cycle: 0,
                    structure: empty.clone(),
                    overlay: Vec::with_capacity(max_edges),
                })),
            })
            .collect();
        let shared = Arc::new(Shared {
            template,
            cycles_per_block: m,
            capacity: config.capacity,
            state: Mutex::new(State {
                epoch: 0,
                shot_cycles: None,
                lo: 0,
                hi: 0,
                target: 0,
                slots,
                shutdown: false,
                stats: BufferStats::default(),
            }),
            changed: Condvar::new(),
            bulk: Mutex::new(HashMap::new()),
        });
        let worker = shared.clone();
        let grapher = std::thread::Builder::new()
            .name("grapher".into())
            .spawn(move || worker.grapher())
            .expect("spawn grapher thread");
        Ok(GraphBuffer { shared, grapher: Some(grapher) })
    }

    pub fn template(&self) -> &ModelTemplate<W> {
        &self.shared.template
    }

    pub fn cycles_per_block(&self) -> u64 {
        self.shared.cycles_per_block
    }

    pub fn capacity(&self) -> usize {
        self.shared.capacity
    }

    pub fn stats(&self) -> BufferStats {
        self.shared.lock().stats
    }

    /// Current window `[lo, hi)` of published blocks.
    pub fn window(&self) -> (u64, u64) {
        let s = self.shared.lock();
        (s.lo, s.hi)
    }

    pub fn readers(&self, block: u64) -> u32 {
        let s = self.shared.lock();
        let slot = &s.slots[(block % self.shared.capacity as u64) as usize];
        if slot.block == Some(block) {
            slot.readers
        } else {
            0
        }
    }

    /// Starts a new shot; `None` leaves the length open until [`Self::announce_end`].
    pub fn begin_shot(&self, shot_cycles: Option<u64>) -> Result<(), BufferError> {
        let mut s = self.shared.lock();
        if let Some(held) = s.slots.iter().find(|x| x.readers > 0) {
            return Err(BufferError::InUse(held.block.unwrap_or(0)));
        }
        s.epoch += 1;
        s.shot_cycles = shot_cycles;
        s.lo = 0;
        s.hi = 0;
        s.target = self.shared.capacity as u64;
        for slot in &mut s.slots {
            slot.block = None;
            slot.released = false;
        }
        self.shared.changed.notify_all();
        Ok(())
    }

    /// Fixes the length of an open-ended shot. Published blocks whose
    /// structure depends on the end are withdrawn and rebuilt.
    pub fn announce_end(&self, shot_cycles: u64) -> Result<(), BufferError> {
        let m = self.shared.cycles_per_block;
        let t = &self.shared.template;
        let mut s = self.shared.lock();
        s.shot_cycles = Some(shot_cycles);
        let mut first = s.hi;
        for b in s.lo..s.hi {
            let c1 = (b + 1) * m;
            if c1 + t.span() + t.epilogue() > shot_cycles {
                first = b;
                break;
            }
        }
        for b in first..s.hi {
            let slot = &s.slots[(b % self.shared.capacity as u64) as usize];
            if slot.readers > 0 {
                return Err(BufferError::InUse(b));
            }
        }
        for b in first..s.hi {
            s.slots[(b % self.shared.capacity as u64) as usize].block = None;
        }
        s.hi = first;
        s.epoch += 1;
        s.target = s.target.max(s.lo + self.shared.capacity as u64);
        self.shared.changed.notify_all();
        Ok(())
    }

    /// Returns a view of `block`, waiting for the grapher to publish it.
    pub fn ensure_window(&self, block: u64) -> Result<BlockView<W>, BufferError> {
        let cap = self.shared.capacity as u64;
        let mut s = self.shared.lock();
        if block < s.lo {
            return Err(BufferError::Rewind { block, lo: s.lo });
        }
        if let Some(n) = s.num_blocks(self.shared.cycles_per_block) {
            if block >= n {
                return Err(BufferError::PastEnd { block, blocks: n });
            }
        }
        if block >= s.lo + cap {
            return Err(BufferError::WindowFull { block, lo: s.lo, capacity: self.shared.capacity });
        }
        s.target = s.target.max(block + 1);
        self.shared.changed.notify_all();
        while s.hi <= block {
            if s.shutdown {
                return Err(BufferError::Closed);
            }
            s = self.shared.changed.wait(s).unwrap_or_else(|e| e.into_inner());
        }
        let slot = &mut s.slots[(block % cap) as usize];
        slot.readers += 1;
        Ok(BlockView { block, data: slot.data.clone() })
    }

    /// Drops a hold on a block. The overlay must be back to template weights.
    pub fn release(&self, view: BlockView<W>) -> Result<(), BufferError> {
        let cap = self.shared.capacity as u64;
        let mut s = self.shared.lock();
        let idx = (view.block % cap) as usize;
        {
            let slot = &s.slots[idx];
            if slot.block != Some(view.block) {
                return Err(BufferError::StaleView(view.block));
            }
            if slot.readers == 0 {
                return Err(BufferError::NotHeld(view.block));
            }
            if !slot.data.lock().unwrap_or_else(|e| e.into_inner()).is_clean() {
                return Err(BufferError::DirtyOverlay(view.block));
            }
        }
        let slot = &mut s.slots[idx];
        slot.readers -= 1;
        if slot.readers == 0 {
            slot.released = true;
        }
        while s.lo < s.hi {
            let slot = &s.slots[(s.lo % cap) as usize];
            if slot.readers == 0 && slot.released {
                s.lo += 1;
            } else {
                break;
            }
        }
        s.target = s.target.max(s.lo + cap);
        self.shared.changed.notify_all();
        Ok(())
    }
}

impl<W: Real> Drop for GraphBuffer<W> {
    fn drop(&mut self) {
        self.shared.lock().shutdown = true;
        self.shared.changed.notify_all();
        if let Some(h) = self.grapher.take() {
            let _ = h.join();
        }
    }
}
