//! Kernel descriptors, SM configuration and profiling-derived metrics.
//!
//! A [`KernelDescriptor`] is the statistical profile of one kernel: grid
//! shape, memory instruction ratio, resource usage and the two pruning
//! features PUR (pipeline utilization ratio) and MUR (memory-bandwidth
//! utilization ratio). Descriptors either carry PUR/MUR directly or carry
//! raw profiling counters from which they are recomputed; raw counters win
//! when both are present.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Raw profiling counters of a solo run (or a small pre-execution of a few
/// thread blocks). `elapsed_cycles` is the time-frequency product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelProfile {
    pub instructions_executed: u64,
    pub dram_reads: u64,
    pub dram_writes: u64,
    pub elapsed_cycles: u64,
}

/// Statistical profile of one kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelDescriptor {
    pub name: String,
    /// Total thread blocks in the grid.
    pub grid_blocks: u64,
    pub warps_per_block: u32,
    /// Instructions issued per thread block (per warp-instruction count).
    pub instructions_per_block: u64,
    /// Fraction of issued instructions that are memory instructions.
    pub mem_instruction_ratio: f64,
    /// Fraction of memory instructions that are fully uncoalesced.
    #[serde(default)]
    pub uncoalesced_fraction: f64,
    pub registers_per_thread: u32,
    pub shared_mem_per_block: u64,
    #[serde(default)]
    pub pur: Option<f64>,
    #[serde(default)]
    pub mur: Option<f64>,
    #[serde(default)]
    pub profile: Option<KernelProfile>,
}

impl KernelDescriptor {
    pub fn validate(&self) -> Result<()> {
        let frac = |v: f64, field: &str| -> Result<()> {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidInput(format!(
                    "kernel {}: {} = {} outside [0, 1]",
                    self.name, field, v
                )));
            }
            Ok(())
        };
        frac(self.mem_instruction_ratio, "mem_instruction_ratio")?;
        frac(self.uncoalesced_fraction, "uncoalesced_fraction")?;
        if let Some(m) = self.mur {
            frac(m, "mur")?;
        }
        if let Some(p) = self.pur {
            if p < 0.0 {
                return Err(Error::InvalidInput(format!(
                    "kernel {}: pur = {} is negative",
                    self.name, p
                )));
            }
        }
        if self.grid_blocks < 1 || self.warps_per_block < 1 || self.instructions_per_block < 1 {
            return Err(Error::InvalidInput(format!(
                "kernel {}: grid_blocks, warps_per_block and instructions_per_block must be >= 1",
                self.name
            )));
        }
        if self.pur.is_none() && self.profile.is_none() {
            return Err(Error::InvalidInput(format!(
                "kernel {}: neither pur/mur nor a raw profile is present",
                self.name
            )));
        }
        Ok(())
    }

    /// Effective PUR: recomputed from raw counters when present, else the
    /// stored value.
    pub fn effective_pur(&self, cfg: &SMConfig) -> Result<f64> {
        match self.profile {
            Some(p) => compute_pur(&p, cfg),
            None => self.pur.ok_or_else(|| {
                Error::InvalidInput(format!("kernel {}: no PUR source", self.name))
            }),
        }
    }

    /// Effective MUR: recomputed from raw counters when present, else the
    /// stored value.
    pub fn effective_mur(&self, cfg: &SMConfig) -> Result<f64> {
        match self.profile {
            Some(p) => compute_mur(&p, cfg),
            None => self.mur.ok_or_else(|| {
                Error::InvalidInput(format!("kernel {}: no MUR source", self.name))
            }),
        }
    }

    pub fn threads_per_block(&self) -> u32 {
        self.warps_per_block * 32
    }

    /// Hash of every model-relevant field except the name. Workload
    /// instances of the same application share a fingerprint, so model
    /// and duration caches treat them as the same kernel.
    pub fn model_fingerprint(&self) -> u64 {
        use std::hash::{Hash, Hasher};
        let mut h = std::collections::hash_map::DefaultHasher::new();
        self.grid_blocks.hash(&mut h);
        self.warps_per_block.hash(&mut h);
        self.instructions_per_block.hash(&mut h);
        self.mem_instruction_ratio.to_bits().hash(&mut h);
        self.uncoalesced_fraction.to_bits().hash(&mut h);
        self.registers_per_thread.hash(&mut h);
        self.shared_mem_per_block.hash(&mut h);
        self.pur.map(f64::to_bits).hash(&mut h);
        self.mur.map(f64::to_bits).hash(&mut h);
        h.finish()
    }
}

/// Machine parameters of one (possibly virtual) streaming multiprocessor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SMConfig {
    /// Maximum number of active warps on the SM (W).
    pub max_active_warps: u32,
    pub max_registers: u64,
    pub max_shared_mem: u64,
    pub max_blocks_per_sm: u32,
    /// Uncontended memory latency in cycles (L0).
    pub base_latency: f64,
    /// Global memory bandwidth in requests per cycle (B).
    pub bandwidth: f64,
    /// Added latency in cycles per outstanding memory request.
    pub latency_slope: f64,
    /// When true, the memory latency uses the literal published expression
    /// L = L0 + B / (a0 * idle) with a0 = latency_slope, instead of the
    /// default increasing model. See [`crate::markov::memory_latency`].
    #[serde(default)]
    pub verbatim_latency: bool,
    /// Memory requests generated by one fully uncoalesced memory
    /// instruction (up to 32, one per thread of the warp).
    #[serde(default = "default_uncoalesced_requests")]
    pub uncoalesced_requests_per_instr: u32,
    pub warp_schedulers: u32,
    pub peak_ipc: f64,
    pub peak_mpc: f64,
    pub num_sms: u32,
    /// Cycles charged per slice launch.
    pub launch_overhead: u64,
}

fn default_uncoalesced_requests() -> u32 {
    32
}

impl SMConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_active_warps < 1
            || self.max_blocks_per_sm < 1
            || self.warp_schedulers < 1
            || self.num_sms < 1
            || self.uncoalesced_requests_per_instr < 1
        {
            return Err(Error::InvalidInput("SMConfig counts must be >= 1".into()));
        }
        if self.base_latency <= 0.0 || self.bandwidth <= 0.0 {
            return Err(Error::InvalidInput(
                "SMConfig base_latency and bandwidth must be > 0".into(),
            ));
        }
        Ok(())
    }

    /// Derive the single-pipeline virtual SM: one warp scheduler with the
    /// per-scheduler share of warps, bandwidth, issue width and blocks.
    /// Integer parameters round down with a floor of one.
    pub fn virtual_sm(&self) -> SMConfig {
        let n = self.warp_schedulers.max(1);
        let div = |v: u32| (v / n).max(1);
        SMConfig {
            max_active_warps: div(self.max_active_warps),
            max_blocks_per_sm: div(self.max_blocks_per_sm),
            bandwidth: self.bandwidth / n as f64,
            peak_ipc: self.peak_ipc / n as f64,
            peak_mpc: self.peak_mpc / n as f64,
            warp_schedulers: 1,
            ..self.clone()
        }
    }
}

/// PUR = Instruction_Executed / (Time x Frequency x Peak_IPC).
pub fn compute_pur(profile: &KernelProfile, cfg: &SMConfig) -> Result<f64> {
    if profile.elapsed_cycles == 0 {
        return Err(Error::InvalidInput("elapsed_cycles is zero".into()));
    }
    if cfg.peak_ipc <= 0.0 {
        return Err(Error::InvalidInput("peak_ipc must be > 0".into()));
    }
    Ok(profile.instructions_executed as f64 / (profile.elapsed_cycles as f64 * cfg.peak_ipc))
}

/// MUR = (Dram_Reads + Dram_Writes) / (Time x Frequency x Peak_MPC).
pub fn compute_mur(profile: &KernelProfile, cfg: &SMConfig) -> Result<f64> {
    if profile.elapsed_cycles == 0 {
        return Err(Error::InvalidInput("elapsed_cycles is zero".into()));
    }
    if cfg.peak_mpc <= 0.0 {
        return Err(Error::InvalidInput("peak_mpc must be > 0".into()));
    }
    Ok((profile.dram_reads + profile.dram_writes) as f64
        / (profile.elapsed_cycles as f64 * cfg.peak_mpc))
}

/// Which SM resource caps the number of co-resident blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BindingConstraint {
    Registers,
    SharedMemory,
    BlockSlots,
    WarpSlots,
}

impl std::fmt::Display for BindingConstraint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BindingConstraint::Registers => "registers",
            BindingConstraint::SharedMemory => "shared memory",
            BindingConstraint::BlockSlots => "block slots",
            BindingConstraint::WarpSlots => "warp slots",
        };
        f.write_str(s)
    }
}

/// Maximum number of blocks of `desc` that fit on one SM, together with the
/// constraint that binds first.
pub fn max_feasible_blocks(desc: &KernelDescriptor, cfg: &SMConfig) -> (u32, BindingConstraint) {
    let regs_per_block = desc.registers_per_thread as u64 * desc.threads_per_block() as u64;
    let by_regs = if regs_per_block == 0 {
        u32::MAX
    } else {
        (cfg.max_registers / regs_per_block) as u32
    };
    let by_smem = if desc.shared_mem_per_block == 0 {
        u32::MAX
    } else {
        (cfg.max_shared_mem / desc.shared_mem_per_block) as u32
    };
    let by_blocks = cfg.max_blocks_per_sm;
    let by_warps = cfg.max_active_warps / desc.warps_per_block;
    let candidates = [
        (by_regs, BindingConstraint::Registers),
        (by_smem, BindingConstraint::SharedMemory),
        (by_blocks, BindingConstraint::BlockSlots),
        (by_warps, BindingConstraint::WarpSlots),
    ];
    candidates
        .into_iter()
        .min_by_key(|(n, _)| *n)
        .expect("non-empty")
}

/// Occupancy of `blocks_on_sm` resident blocks: active warps over the
/// maximum active warps. Errors when the block count is resource-infeasible,
/// naming the binding constraint.
pub fn compute_occupancy(
    desc: &KernelDescriptor,
    cfg: &SMConfig,
    blocks_on_sm: u32,
) -> Result<f64> {
    let (max_blocks, binding) = max_feasible_blocks(desc, cfg);
    if blocks_on_sm > max_blocks {
        return Err(Error::Infeasible(format!(
            "{} blocks of kernel {} exceed the SM limit of {} (binding constraint: {})",
            blocks_on_sm, desc.name, max_blocks, binding
        )));
    }
    Ok(blocks_on_sm as f64 * desc.warps_per_block as f64 / cfg.max_active_warps as f64)
}

/// Load and validate a JSON array of kernel descriptors. Unknown fields and
/// duplicate names are rejected.
pub fn load_descriptors(path: &std::path::Path) -> Result<Vec<KernelDescriptor>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_descriptors(&text).map_err(|e| match e {
        Error::InvalidInput(msg) | Error::DescriptorFile { msg, .. } => Error::DescriptorFile {
            path: path.display().to_string(),
            msg,
        },
        other => other,
    })
}

pub fn parse_descriptors(text: &str) -> Result<Vec<KernelDescriptor>> {
    let descs: Vec<KernelDescriptor> = serde_json::from_str(text)
        .map_err(|e| Error::InvalidInput(format!("line {}: {}", e.line(), e)))?;
    let mut seen = std::collections::HashSet::new();
    for d in &descs {
        d.validate()?;
        if !seen.insert(d.name.clone()) {
            return Err(Error::InvalidInput(format!("duplicate kernel name {}", d.name)));
        }
    }
    Ok(descs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    pub(crate) fn test_cfg() -> SMConfig {
        SMConfig {
            max_active_warps: 48,
            max_registers: 32768,
            max_shared_mem: 49152,
            max_blocks_per_sm: 8,
            base_latency: 400.0,
            bandwidth: 1.0,
            latency_slope: 10.0,
            verbatim_latency: false,
            uncoalesced_requests_per_instr: 32,
            warp_schedulers: 1,
            peak_ipc: 1.0,
            peak_mpc: 1.0,
            num_sms: 14,
            launch_overhead: 5000,
        }
    }

    fn desc(warps_per_block: u32) -> KernelDescriptor {
        KernelDescriptor {
            name: "k".into(),
            grid_blocks: 256,
            warps_per_block,
            instructions_per_block: 1000,
            mem_instruction_ratio: 0.2,
            uncoalesced_fraction: 0.0,
            registers_per_thread: 16,
            shared_mem_per_block: 0,
            pur: Some(0.5),
            mur: Some(0.1),
            profile: None,
        }
    }

    #[test]
    fn pur_direct_ratio() {
        let p = KernelProfile {
            instructions_executed: 1_000_000_000,
            dram_reads: 0,
            dram_writes: 0,
            elapsed_cycles: 2_000_000_000,
        };
        assert_relative_eq!(compute_pur(&p, &test_cfg()).unwrap(), 0.5);
    }

    #[test]
    fn pur_zero_numerator() {
        let p = KernelProfile {
            instructions_executed: 0,
            dram_reads: 0,
            dram_writes: 0,
            elapsed_cycles: 1234,
        };
        assert_eq!(compute_pur(&p, &test_cfg()).unwrap(), 0.0);
    }

    #[test]
    fn pur_matches_tea_on_c2050() {
        // Profile constructed so the ratio equals TEA's published 0.9978.
        let p = KernelProfile {
            instructions_executed: 9978,
            dram_reads: 0,
            dram_writes: 0,
            elapsed_cycles: 10000,
        };
        assert_relative_eq!(compute_pur(&p, &test_cfg()).unwrap(), 0.9978);
    }

    #[test]
    fn pur_zero_cycles_rejected() {
        let p = KernelProfile {
            instructions_executed: 1,
            dram_reads: 0,
            dram_writes: 0,
            elapsed_cycles: 0,
        };
        assert!(compute_pur(&p, &test_cfg()).is_err());
    }

    #[test]
    fn mur_direct_ratio() {
        let p = KernelProfile {
            instructions_executed: 0,
            dram_reads: 500_000_000,
            dram_writes: 500_000_000,
            elapsed_cycles: 2_000_000_000,
        };
        assert_relative_eq!(compute_mur(&p, &test_cfg()).unwrap(), 0.5);
    }

    #[test]
    fn mur_matches_pc_on_c2050() {
        let p = KernelProfile {
            instructions_executed: 0,
            dram_reads: 702,
            dram_writes: 702,
            elapsed_cycles: 10000,
        };
        assert_relative_eq!(compute_mur(&p, &test_cfg()).unwrap(), 0.1404);
    }

    #[test]
    fn pur_mur_scale_invariant() {
        let cfg = test_cfg();
        let p = KernelProfile {
            instructions_executed: 123,
            dram_reads: 45,
            dram_writes: 67,
            elapsed_cycles: 890,
        };
        let scaled = KernelProfile {
            instructions_executed: p.instructions_executed * 7,
            dram_reads: p.dram_reads * 7,
            dram_writes: p.dram_writes * 7,
            elapsed_cycles: p.elapsed_cycles * 7,
        };
        assert_relative_eq!(
            compute_pur(&p, &cfg).unwrap(),
            compute_pur(&scaled, &cfg).unwrap()
        );
        assert_relative_eq!(
            compute_mur(&p, &cfg).unwrap(),
            compute_mur(&scaled, &cfg).unwrap()
        );
    }

    #[test]
    fn occupancy_arithmetic() {
        let cfg = test_cfg();
        let d = desc(8);
        assert_relative_eq!(compute_occupancy(&d, &cfg, 4).unwrap(), 32.0 / 48.0);
        assert_eq!(compute_occupancy(&d, &cfg, 0).unwrap(), 0.0);
    }

    #[test]
    fn occupancy_monotone_up_to_limit() {
        let cfg = test_cfg();
        let d = desc(8);
        let (limit, _) = max_feasible_blocks(&d, &cfg);
        let mut last = -1.0;
        for b in 0..=limit {
            let occ = compute_occupancy(&d, &cfg, b).unwrap();
            assert!(occ >= last);
            last = occ;
        }
        assert!(compute_occupancy(&d, &cfg, limit + 1).is_err());
    }

    #[test]
    fn shared_memory_binds_at_one_block() {
        let cfg = test_cfg();
        let mut d = desc(1);
        d.shared_mem_per_block = cfg.max_shared_mem;
        let (limit, binding) = max_feasible_blocks(&d, &cfg);
        assert_eq!(limit, 1);
        assert_eq!(binding, BindingConstraint::SharedMemory);
        let err = compute_occupancy(&d, &cfg, 2).unwrap_err().to_string();
        assert!(err.contains("shared memory"), "{err}");
    }

    #[test]
    fn virtual_sm_divides_parameters() {
        let mut cfg = test_cfg();
        cfg.warp_schedulers = 4;
        cfg.max_active_warps = 64;
        cfg.bandwidth = 8.0;
        let v = cfg.virtual_sm();
        assert_eq!(v.warp_schedulers, 1);
        assert_eq!(v.max_active_warps, 16);
        assert_relative_eq!(v.bandwidth, 2.0);
        assert_eq!(v.max_blocks_per_sm, 2);

        let id = test_cfg().virtual_sm();
        assert_eq!(id, test_cfg());
    }

    #[test]
    fn descriptor_json_roundtrip_and_validation() {
        let good = r#"[{"name":"a","grid_blocks":4,"warps_per_block":2,
            "instructions_per_block":10,"mem_instruction_ratio":0.3,
            "registers_per_thread":16,"shared_mem_per_block":0,
            "pur":0.4,"mur":0.1}]"#;
        assert_eq!(parse_descriptors(good).unwrap().len(), 1);
        assert!(parse_descriptors("[]").unwrap().is_empty());

        let bad_ratio = good.replace("0.3", "1.5");
        let err = parse_descriptors(&bad_ratio).unwrap_err().to_string();
        assert!(err.contains("mem_instruction_ratio"), "{err}");

        let unknown = good.replace("\"pur\":0.4", "\"pur\":0.4,\"bogus\":1");
        assert!(parse_descriptors(&unknown).is_err());

        let dup = format!("[{0},{0}]", &good[1..good.len() - 1]);
        let err = parse_descriptors(&dup).unwrap_err().to_string();
        assert!(err.contains("duplicate"), "{err}");
    }
}
