//! Stochastic ground-truth executors: a chain-faithful Monte Carlo
//! simulator, an event-driven latency-mechanism simulator, and a
//! scheduling-plan executor with a content-addressed duration cache.
//!
//! RNG discipline: every warp owns a ChaCha8 stream seeded as
//! `base_seed XOR (workload_index << 40) XOR warp_index`, so results are
//! portable and independent of iteration order; identical seeds and
//! inputs always yield identical results.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernel::SMConfig;
use crate::markov::{memory_latency, ChainWorkload};
use crate::scheduler::{CoSchedule, SchedulingPlan};

fn warp_rng(seed: u64, workload: usize, warp: u32) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ ((workload as u64) << 40) ^ warp as u64)
}

/// Batch-means estimate of an IPC with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchStats {
    pub mean: f64,
    pub std_error: f64,
    pub batches: usize,
}

#[derive(Debug, Clone)]
pub struct SimResult {
    pub total_cycles: f64,
    /// Instructions issued per workload.
    pub instructions: Vec<u64>,
    /// Measured IPC per workload (instructions / total_cycles).
    pub ipc: Vec<f64>,
    /// Cycles of rounds in which no warp was ready.
    pub idle_cycles: f64,
    pub seed: u64,
    pub rounds: u64,
    /// Per-workload batch-means IPC statistics (empty when the run is too
    /// short to batch).
    pub batch_stats: Vec<BatchStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WarpState {
    Ready,
    IdleCoal,
    IdleUncoal,
}

const BATCHES: usize = 32;

/// Chain-faithful Monte Carlo: per round every ready warp issues one
/// instruction and goes idle with probability R_m (uncoalesced with
/// conditional probability u); each idle warp returns with probability
/// round/L of the current state; time advances by the round duration
/// (1 when nothing is ready). Long-run IPC estimates the Markov model's
/// IPC without bias.
pub fn simulate_chain(
    workloads: &[ChainWorkload],
    cfg: &SMConfig,
    rounds: u64,
    seed: u64,
) -> Result<SimResult> {
    if rounds < 1 {
        return Err(Error::InvalidInput("rounds must be >= 1".into()));
    }
    run_chain(workloads, cfg, Stop::Rounds(rounds), seed)
}

enum Stop {
    Rounds(u64),
    /// Per-workload instruction quotas; finished workloads withdraw their
    /// warps.
    Instructions(Vec<u64>),
}

fn run_chain(
    workloads: &[ChainWorkload],
    cfg: &SMConfig,
    stop: Stop,
    seed: u64,
) -> Result<SimResult> {
    let total_warps: u32 = workloads.iter().map(|w| w.warps).sum();
    if total_warps == 0 || total_warps > cfg.max_active_warps {
        return Err(Error::InvalidInput(format!(
            "total warps {total_warps} outside 1..={}",
            cfg.max_active_warps
        )));
    }
    let n = workloads.len();
    let mut states: Vec<Vec<WarpState>> = workloads
        .iter()
        .map(|w| vec![WarpState::Ready; w.warps as usize])
        .collect();
    let mut rngs: Vec<Vec<ChaCha8Rng>> = workloads
        .iter()
        .enumerate()
        .map(|(k, w)| (0..w.warps).map(|i| warp_rng(seed, k, i)).collect())
        .collect();
    let mut active: Vec<bool> = vec![true; n];
    let mut instructions = vec![0u64; n];
    let mut cycles = 0.0f64;
    let mut idle_cycles = 0.0f64;
    let mut rounds_done = 0u64;

    let u_extra = (cfg.uncoalesced_requests_per_instr.saturating_sub(1)) as f64 / cfg.bandwidth;

    // batch accumulators: (instructions per workload, cycles) per batch
    let batch_len = match &stop {
        Stop::Rounds(r) => (*r / BATCHES as u64).max(1),
        Stop::Instructions(_) => 0,
    };
    let mut batch_instr = vec![0u64; n];
    let mut batch_cycles = 0.0f64;
    let mut batch_samples: Vec<Vec<f64>> = vec![Vec::new(); n];

    loop {
        match &stop {
            Stop::Rounds(r) => {
                if rounds_done >= *r {
                    break;
                }
            }
            Stop::Instructions(q) => {
                for k in 0..n {
                    if active[k] && instructions[k] >= q[k] {
                        active[k] = false;
                    }
                }
                if active.iter().all(|a| !a) {
                    break;
                }
            }
        }
        let ready: u32 = (0..n)
            .filter(|&k| active[k])
            .map(|k| states[k].iter().filter(|s| **s == WarpState::Ready).count() as u32)
            .sum();
        let round = (ready as f64).max(1.0);
        let outstanding: f64 = (0..n)
            .filter(|&k| active[k])
            .map(|k| {
                let ic = states[k].iter().filter(|s| **s == WarpState::IdleCoal).count() as f64;
                let iu = states[k]
                    .iter()
                    .filter(|s| **s == WarpState::IdleUncoal)
                    .count() as f64;
                ic + iu * cfg.uncoalesced_requests_per_instr as f64
            })
            .sum();
        let l_c = memory_latency(outstanding, cfg);
        let l_u = l_c + u_extra;
        let p_ic_r = (round / l_c).clamp(0.0, 1.0);
        let p_iu_r = (round / l_u).clamp(0.0, 1.0);

        for k in 0..n {
            if !active[k] {
                continue;
            }
            let rm = workloads[k].desc.mem_instruction_ratio;
            let u = workloads[k].desc.uncoalesced_fraction;
            for (i, s) in states[k].iter_mut().enumerate() {
                let rng = &mut rngs[k][i];
                match *s {
                    WarpState::Ready => {
                        instructions[k] += 1;
                        batch_instr[k] += 1;
                        let x: f64 = rng.gen();
                        if x < rm {
                            *s = if rng.gen::<f64>() < u {
                                WarpState::IdleUncoal
                            } else {
                                WarpState::IdleCoal
                            };
                        }
                    }
                    WarpState::IdleCoal => {
                        if rng.gen::<f64>() < p_ic_r {
                            *s = WarpState::Ready;
                        }
                    }
                    WarpState::IdleUncoal => {
                        if rng.gen::<f64>() < p_iu_r {
                            *s = WarpState::Ready;
                        }
                    }
                }
            }
        }
        cycles += round;
        batch_cycles += round;
        if ready == 0 {
            idle_cycles += round;
        }
        rounds_done += 1;
        if batch_len > 0 && rounds_done % batch_len == 0 {
            for k in 0..n {
                batch_samples[k].push(batch_instr[k] as f64 / batch_cycles);
                batch_instr[k] = 0;
            }
            batch_cycles = 0.0;
        }
    }

    let batch_stats = batch_samples
        .iter()
        .filter(|s| s.len() >= 2)
        .map(|s| {
            let m = s.iter().sum::<f64>() / s.len() as f64;
            let var =
                s.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (s.len() - 1) as f64;
            BatchStats {
                mean: m,
                std_error: (var / s.len() as f64).sqrt(),
                batches: s.len(),
            }
        })
        .collect();

    Ok(SimResult {
        total_cycles: cycles,
        ipc: instructions.iter().map(|&i| i as f64 / cycles).collect(),
        instructions,
        idle_cycles,
        seed,
        rounds: rounds_done,
        batch_stats,
    })
}

/// Event-driven mechanism check: a memory instruction stalls its warp for
/// exactly L(current outstanding requests) cycles; ready warps issue
/// round-robin, one instruction per cycle. Each workload retires
/// `blocks * instructions_per_block` instructions. Reported for
/// model-vs-mechanism comparison.
pub fn simulate_latency_model(
    workloads: &[ChainWorkload],
    cfg: &SMConfig,
    blocks: u64,
    seed: u64,
) -> Result<SimResult> {
    if blocks < 1 {
        return Err(Error::InvalidInput("blocks must be >= 1".into()));
    }
    let n = workloads.len();
    let total_warps: u32 = workloads.iter().map(|w| w.warps).sum();
    if total_warps == 0 {
        return Err(Error::InvalidInput("no warps to simulate".into()));
    }
    struct Warp {
        workload: usize,
        remaining: u64,
        stall_until: f64,
        weight: f64,
        rng: ChaCha8Rng,
    }
    let mut warps: Vec<Warp> = Vec::new();
    for (k, w) in workloads.iter().enumerate() {
        let total = blocks * w.desc.instructions_per_block;
        let per = total / w.warps as u64;
        let extra = total % w.warps as u64;
        for i in 0..w.warps {
            warps.push(Warp {
                workload: k,
                remaining: per + if (i as u64) < extra { 1 } else { 0 },
                stall_until: 0.0,
                weight: 0.0,
                rng: warp_rng(seed, k, i),
            });
        }
    }
    let mut cycle = 0.0f64;
    let mut idle_cycles = 0.0f64;
    let mut instructions = vec![0u64; n];
    let mut outstanding = 0.0f64;
    let mut rr = 0usize;
    let u_req = cfg.uncoalesced_requests_per_instr as f64;
    loop {
        // release finished stalls
        for w in warps.iter_mut() {
            if w.weight > 0.0 && w.stall_until <= cycle {
                outstanding -= w.weight;
                w.weight = 0.0;
            }
        }
        if warps.iter().all(|w| w.remaining == 0) {
            break;
        }
        // next ready warp, round-robin
        let mut issued = false;
        for off in 0..warps.len() {
            let i = (rr + off) % warps.len();
            let w = &mut warps[i];
            if w.remaining == 0 || w.stall_until > cycle {
                continue;
            }
            w.remaining -= 1;
            instructions[w.workload] += 1;
            let rm = workloads[w.workload].desc.mem_instruction_ratio;
            let u = workloads[w.workload].desc.uncoalesced_fraction;
            if w.rng.gen::<f64>() < rm {
                let uncoal = w.rng.gen::<f64>() < u;
                let l = memory_latency(outstanding, cfg)
                    + if uncoal { (u_req - 1.0) / cfg.bandwidth } else { 0.0 };
                w.weight = if uncoal { u_req } else { 1.0 };
                outstanding += w.weight;
                // the stall begins after the issue cycle itself
                w.stall_until = cycle + 1.0 + l;
            }
            rr = (i + 1) % warps.len();
            issued = true;
            break;
        }
        if !issued {
            idle_cycles += 1.0;
        }
        cycle += 1.0;
    }
    Ok(SimResult {
        total_cycles: cycle,
        ipc: instructions.iter().map(|&i| i as f64 / cycle.max(1.0)).collect(),
        instructions,
        idle_cycles,
        seed,
        rounds: cycle as u64,
        batch_stats: vec![],
    })
}

/// One executed co-schedule in a timeline.
#[derive(Debug, Clone)]
pub struct TimelineEntry {
    pub index: usize,
    pub start_cycle: f64,
    pub end_cycle: f64,
    pub kernel_1: String,
    pub blocks_1: u64,
    pub kernel_2: Option<String>,
    pub blocks_2: u64,
}

#[derive(Debug, Clone)]
pub struct ScheduleTimeline {
    pub entries: Vec<TimelineEntry>,
    pub makespan: f64,
    /// Completion cycle per kernel name (last co-schedule touching it).
    pub completions: std::collections::HashMap<String, f64>,
}

impl ScheduleTimeline {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("co_schedule,start_cycle,end_cycle,kernel_1,blocks_1,kernel_2,blocks_2\n");
        for e in &self.entries {
            out.push_str(&format!(
                "{},{:.0},{:.0},{},{},{},{}\n",
                e.index,
                e.start_cycle,
                e.end_cycle,
                e.kernel_1,
                e.blocks_1,
                e.kernel_2.as_deref().unwrap_or("-"),
                e.blocks_2
            ));
        }
        out
    }
}

/// Content-addressed cache of co-schedule durations. The key and the RNG
/// seed derive from the co-schedule's content, so any policy evaluating
/// the same co-schedule observes the same duration — Monte Carlo and
/// exhaustive searches stay consistent with the scheduled runs.
#[derive(Debug, Default)]
pub struct DurationCache {
    map: std::collections::HashMap<(u64, u64, u32, u32, u64, u64), f64>,
    pub hits: u64,
    pub misses: u64,
}

fn content_seed(base: u64, key: &(u64, u64, u32, u32, u64, u64)) -> u64 {
    use std::hash::{Hash, Hasher};
    let mut h = std::collections::hash_map::DefaultHasher::new();
    base.hash(&mut h);
    key.hash(&mut h);
    h.finish()
}

/// Simulate one co-schedule on one SM: each kernel runs
/// `ceil(size / num_sms) * instructions_per_block` instructions with its
/// co-resident warp count; a kernel's warps withdraw when it finishes.
/// Returns the duration in cycles, excluding launch overhead.
pub fn co_schedule_duration(
    cs: &CoSchedule,
    cfg: &SMConfig,
    cache: &mut DurationCache,
    base_seed: u64,
) -> Result<f64> {
    let key = (
        cs.kernel_1.model_fingerprint(),
        cs.kernel_2.as_ref().map(|k| k.model_fingerprint()).unwrap_or_default(),
        cs.warps.0,
        cs.warps.1,
        cs.size_1,
        cs.size_2,
    );
    if let Some(&d) = cache.map.get(&key) {
        cache.hits += 1;
        return Ok(d);
    }
    cache.misses += 1;
    let per_sm = |size: u64| size.div_ceil(cfg.num_sms as u64);
    let mut workloads = vec![ChainWorkload {
        desc: cs.kernel_1.clone(),
        warps: cs.warps.0,
    }];
    let mut quotas = vec![per_sm(cs.size_1) * cs.kernel_1.instructions_per_block];
    if let Some(k2) = &cs.kernel_2 {
        workloads.push(ChainWorkload {
            desc: k2.clone(),
            warps: cs.warps.1,
        });
        quotas.push(per_sm(cs.size_2) * k2.instructions_per_block);
    }
    let seed = content_seed(base_seed, &key);
    let res = run_chain(&workloads, cfg, Stop::Instructions(quotas), seed)?;
    cache.map.insert(key, res.total_cycles);
    Ok(res.total_cycles)
}

/// Execute a scheduling plan co-schedule by co-schedule. Duration per
/// co-schedule comes from the chain simulator; launch overhead is charged
/// once per slice launch (one per kernel present in the co-schedule).
pub fn execute_schedule(
    plan: &SchedulingPlan,
    cfg: &SMConfig,
    seed: u64,
    cache: &mut DurationCache,
) -> Result<ScheduleTimeline> {
    let mut entries = Vec::new();
    let mut completions: std::collections::HashMap<String, f64> = Default::default();
    let mut t = 0.0f64;
    for (i, cs) in plan.co_schedules.iter().enumerate() {
        let launches = 1 + cs.kernel_2.is_some() as u64;
        let dur = co_schedule_duration(cs, cfg, cache, seed)?
            + launches as f64 * cfg.launch_overhead as f64;
        let start = t;
        t += dur;
        completions.insert(cs.kernel_1.name.clone(), t);
        if let Some(k2) = &cs.kernel_2 {
            completions.insert(k2.name.clone(), t);
        }
        entries.push(TimelineEntry {
            index: i,
            start_cycle: start,
            end_cycle: t,
            kernel_1: cs.kernel_1.name.clone(),
            blocks_1: cs.size_1,
            kernel_2: cs.kernel_2.as_ref().map(|k| k.name.clone()),
            blocks_2: cs.size_2,
        });
    }
    Ok(ScheduleTimeline {
        entries,
        makespan: t,
        completions,
    })
}
