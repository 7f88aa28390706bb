//! Block partitioning and the two-layer fusion plan.

use thiserror::Error;

/// Fusion schedule for a stream of blocks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockPlan {
    pub cycles_per_block: u64,
    pub total_blocks: Option<u64>,
    /// Even block with the odd block after it.
    pub layer1: Vec<(u64, u64)>,
    /// Odd block with the even block after it.
    pub layer2: Vec<(u64, u64)>,
}

/// Fuse pairs for `num_blocks` blocks.
pub fn plan_fusion(num_blocks: u64) -> BlockPlan {
    BlockPlan {
        cycles_per_block: 0,
        total_blocks: Some(num_blocks),
        layer1: (0..num_blocks / 2).map(|k| (2 * k, 2 * k + 1)).collect(),
        layer2: (0..num_blocks.saturating_sub(1) / 2).map(|k| (2 * k + 1, 2 * k + 2)).collect(),
    }
}

impl BlockPlan {
    pub fn new(cycles_per_block: u64, total_cycles: Option<u64>) -> Self {
        match total_cycles {
            Some(t) => BlockPlan { cycles_per_block, ..plan_fusion(t.div_ceil(cycles_per_block)) },
            None => BlockPlan { cycles_per_block, total_blocks: None, layer1: Vec::new(), layer2: Vec::new() },
        }
    }

    /// Layer that fuses the cut in front of `block`; lazily valid for open-ended plans.
    pub fn layer_of_cut(block: u64) -> Option<u8> {
        match block {
            0 => None,
            b if b % 2 == 1 => Some(1),
            _ => Some(2),
        }
    }

    pub fn block_of_cycle(&self, cycle: u64) -> u64 {
        cycle / self.cycles_per_block
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CodeFamily {
    SurfaceCode,
    RepetitionCode,
}

/// How to pick the number of cycles per block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockSize {
    Preset { family: CodeFamily, distance: u32 },
    Explicit(u64),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PlanError {
    #[error("blocks need at least 2 cycles, got {0}")]
    TooSmall(u64),
    #[error("no block-size preset for {family:?} at distance {distance}")]
    NoPreset { family: CodeFamily, distance: u32 },
}

/// Cycles per block: 10 for distance-3 and -5 surface codes, 90 for the
/// distance-29 repetition code, or an explicit size of at least 2.
pub fn choose_block_size(size: BlockSize) -> Result<u64, PlanError> {
    match size {
        BlockSize::Explicit(m) if m >= 2 => Ok(m),
        BlockSize::Explicit(m) => Err(PlanError::TooSmall(m)),
        BlockSize::Preset { family: CodeFamily::SurfaceCode, distance: 3 | 5 } => Ok(10),
        BlockSize::Preset { family: CodeFamily::RepetitionCode, distance: 29 } => Ok(90),
        BlockSize::Preset { family, distance } => Err(PlanError::NoPreset { family, distance }),
    }
}
