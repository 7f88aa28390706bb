//! Block-scoped decoding and fusion of adjacent block results.

use std::ops::Range;

use super::{localize, EngineError, MatchPair, MatchTarget, Matching, SearchGraph, Side, Solver};
use crate::model::DetectorId;
use crate::scalar::Real;

/// An event left matched to a block boundary, waiting for a fuse.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OpenRegion<W> {
    pub event: DetectorId,
    pub side: Side,
    pub cut: u64,
    /// Path weight from the event to the cut.
    pub residual_weight: W,
}

/// Matching of the events in a contiguous range of blocks.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockResult<W> {
    pub blocks: Range<u64>,
    pub matching: Matching<W>,
    pub open_regions: Vec<OpenRegion<W>>,
}

impl<W: Real> BlockResult<W> {
    pub fn new(blocks: Range<u64>, matching: Matching<W>) -> Self {
        let open_regions = matching
            .pairs
            .iter()
            .filter_map(|p| match p.target {
                MatchTarget::BlockBoundary { side, cut } => {
                    Some(OpenRegion { event: p.event, side, cut, residual_weight: p.weight })
                }
                _ => None,
            })
            .collect();
        BlockResult { blocks, matching, open_regions }
    }

    pub fn block_index(&self) -> u64 {
        self.blocks.start
    }
}

/// Decodes the events of one block on its view. Block-boundary targets are
/// admissible on the sides where the view declares a cut.
pub fn decode_block<W: Real>(
    view: &SearchGraph<W>,
    block: u64,
    events: &[DetectorId],
) -> Result<BlockResult<W>, EngineError> {
    let local = localize(view, events)?;
    let pairs = Solver::new(view.num_nodes()).solve(view, &local)?;
    Ok(BlockResult::new(block..block + 1, Matching::from_pairs(pairs)))
}

/// Fuses two adjacent results across their shared cut.
///
/// When either side has a region at the shared cut, every pair lying wholly
/// inside `joined` is re-solved on it; pairs reaching outside stay as they are.
pub fn fuse<W: Real>(
    a: BlockResult<W>,
    b: BlockResult<W>,
    joined: &SearchGraph<W>,
) -> Result<BlockResult<W>, EngineError> {
    if a.blocks.end != b.blocks.start {
        return Err(EngineError::NonAdjacent {
            left: (a.blocks.start, a.blocks.end),
            right: (b.blocks.start, b.blocks.end),
        });
    }
    let shared = b.blocks.start;
    let blocks = a.blocks.start..b.blocks.end;
    // Without a region at the shared cut each side is already optimal for the
    // joined range: any crossing path costs at least its two halves to the cut.
    let touches_cut = |r: &BlockResult<W>| r.open_regions.iter().any(|o| o.cut == shared);
    if !touches_cut(&a) && !touches_cut(&b) {
        let mut pairs = a.matching.pairs;
        pairs.extend(b.matching.pairs);
        return Ok(BlockResult::new(blocks, Matching::from_pairs(pairs)));
    }

    let candidates: Vec<MatchPair<W>> =
        a.matching.pairs.into_iter().chain(b.matching.pairs).collect();
    let inside = |p: &MatchPair<W>| {
        joined.contains(p.event)
            && match p.target {
                MatchTarget::Event(f) => joined.contains(f),
                _ => true,
            }
    };
    let (reopen, frozen): (Vec<_>, Vec<_>) = candidates.into_iter().partition(|p| inside(p));
    let mut reopened = Vec::with_capacity(2 * reopen.len());
    for p in reopen {
        reopened.push(p.event);
        if let MatchTarget::Event(f) = p.target {
            reopened.push(f);
        }
    }
    let local = localize(joined, &reopened)?;
    let mut pairs = Solver::new(joined.num_nodes()).solve(joined, &local)?;
    pairs.extend(frozen);
    Ok(BlockResult::new(blocks, Matching::from_pairs(pairs)))
}
