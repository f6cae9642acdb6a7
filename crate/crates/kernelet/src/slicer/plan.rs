//! Slicing plans: partitioning a kernel's grid into contiguous runs of
//! thread blocks, and choosing the smallest slice size whose launch
//! overhead stays within budget.

use crate::error::{Error, Result};
use crate::kernel::{max_feasible_blocks, KernelDescriptor, SMConfig};

/// Contiguous partition of a kernel's linearized grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlicingPlan {
    pub kernel: String,
    pub slice_size: u64,
    /// (offset, block count) per slice; offsets strictly increasing,
    /// blocks 0..k-1 covered exactly once.
    pub slices: Vec<(u64, u64)>,
}

impl SlicingPlan {
    pub fn total_blocks(&self) -> u64 {
        self.slices.iter().map(|&(_, c)| c).sum()
    }
}

/// Split `desc.grid_blocks` into ceil(k/s) contiguous slices of size `s`,
/// the last holding the remainder.
pub fn make_slicing_plan(desc: &KernelDescriptor, slice_size: u64) -> Result<SlicingPlan> {
    let k = desc.grid_blocks;
    if slice_size < 1 || slice_size > k {
        return Err(Error::InvalidInput(format!(
            "slice size {slice_size} outside 1..={k} for kernel {}",
            desc.name
        )));
    }
    let mut slices = Vec::new();
    let mut at = 0;
    while at < k {
        let c = slice_size.min(k - at);
        slices.push((at, c));
        at += c;
    }
    Ok(SlicingPlan {
        kernel: desc.name.clone(),
        slice_size,
        slices,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinSliceSize {
    pub blocks: u64,
    /// Measured overhead (T_sliced / T_unsliced - 1) at the returned size.
    pub overhead: f64,
    /// False when no candidate met the budget and the occupancy-limit
    /// size was returned instead.
    pub within_budget: bool,
}

/// Smallest slice size whose slicing overhead is at most `p_percent`% of
/// the unsliced execution time. Candidates are multiples of the SM count
/// up to the occupancy limit; `timing(s)` returns total execution time
/// when the kernel runs in slices of `s` blocks (s = grid size means
/// unsliced).
pub fn min_slice_size(
    desc: &KernelDescriptor,
    cfg: &SMConfig,
    p_percent: f64,
    mut timing: impl FnMut(u64) -> Result<f64>,
) -> Result<MinSliceSize> {
    if p_percent <= 0.0 {
        return Err(Error::InvalidInput("p_percent must be > 0".into()));
    }
    let (per_sm, _) = max_feasible_blocks(desc, cfg);
    let limit = (per_sm as u64 * cfg.num_sms as u64).min(desc.grid_blocks);
    let t_unsliced = timing(desc.grid_blocks)?;
    if t_unsliced <= 0.0 {
        return Err(Error::InvalidInput("unsliced time must be positive".into()));
    }
    let mut candidates: Vec<u64> = (1..)
        .map(|m| m * cfg.num_sms as u64)
        .take_while(|&s| s <= limit)
        .collect();
    if candidates.is_empty() {
        candidates.push(limit.max(1));
    }
    let mut last = MinSliceSize {
        blocks: *candidates.last().unwrap(),
        overhead: f64::INFINITY,
        within_budget: false,
    };
    for &s in &candidates {
        let overhead = timing(s)? / t_unsliced - 1.0;
        if overhead <= p_percent / 100.0 {
            return Ok(MinSliceSize {
                blocks: s,
                overhead,
                within_budget: true,
            });
        }
        last = MinSliceSize {
            blocks: s,
            overhead,
            within_budget: false,
        };
    }
    Ok(last)
}
