//! Pair pruning by resource-utilization dissimilarity, co-schedule
//! selection by predicted profit, and the greedy non-preemptive
//! scheduling loop.

use crate::error::{Error, Result};
use crate::kernel::{KernelDescriptor, SMConfig};
use crate::markov::{
    balanced_slice_sizes, co_scheduling_profit, solo_operating_point, BalancedSplit,
};

/// Model predictions attached to a co-schedule.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Prediction {
    pub ipc_1: f64,
    pub ipc_2: f64,
    pub c: f64,
    pub cp: f64,
}

/// A pair of kernel slices co-resident on the SMs (kernel_2 absent for a
/// solo run): `<K1, K2, size1, size2>` plus the warp split behind it.
#[derive(Debug, Clone)]
pub struct CoSchedule {
    pub kernel_1: KernelDescriptor,
    pub kernel_2: Option<KernelDescriptor>,
    /// Blocks of each kernel in this co-schedule (whole machine).
    pub size_1: u64,
    pub size_2: u64,
    /// Per-SM co-resident warps per kernel.
    pub warps: (u32, u32),
    pub predicted: Prediction,
}

/// Ordered sequence of co-schedules covering every thread block of every
/// submitted kernel exactly once.
#[derive(Debug, Clone, Default)]
pub struct SchedulingPlan {
    pub co_schedules: Vec<CoSchedule>,
}

#[derive(Debug, Clone)]
pub struct PendingKernel {
    pub desc: KernelDescriptor,
    pub remaining_blocks: u64,
    pub arrival: f64,
    /// Tie-break index: admission order.
    pub seq: usize,
}

/// Kernels awaiting execution, in arrival order.
#[derive(Debug, Clone, Default)]
pub struct PendingSet {
    pub kernels: Vec<PendingKernel>,
}

impl PendingSet {
    pub fn push(&mut self, desc: KernelDescriptor, arrival: f64) {
        let seq = self.kernels.len();
        self.kernels.push(PendingKernel {
            remaining_blocks: desc.grid_blocks,
            desc,
            arrival,
            seq,
        });
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PruneThresholds {
    pub alpha_p: f64,
    pub alpha_m: f64,
}

impl PruneThresholds {
    pub fn new(alpha_p: f64, alpha_m: f64) -> Result<Self> {
        if alpha_p < 0.0 || alpha_m < 0.0 {
            return Err(Error::InvalidInput("thresholds must be >= 0".into()));
        }
        Ok(PruneThresholds { alpha_p, alpha_m })
    }
}

/// Paper defaults for the C2050-style configuration.
pub const DEFAULT_THRESHOLDS: PruneThresholds = PruneThresholds {
    alpha_p: 0.4,
    alpha_m: 0.1,
};

fn pur_mur(desc: &KernelDescriptor, cfg: &SMConfig) -> Result<(f64, f64)> {
    Ok((desc.effective_pur(cfg)?, desc.effective_mur(cfg)?))
}

/// Single pruning pass: pair (A, B) is pruned iff
/// |PUR_A - PUR_B| < alpha_p AND |MUR_A - MUR_B| < alpha_m (two kernels
/// with similar utilization of both pipes gain nothing from sharing).
/// Returns (pruned, surviving) index pairs, i < j in input order.
pub fn prune_partition(
    kernels: &[KernelDescriptor],
    cfg: &SMConfig,
    th: PruneThresholds,
) -> Result<(Vec<(usize, usize)>, Vec<(usize, usize)>)> {
    let stats: Vec<(f64, f64)> = kernels
        .iter()
        .map(|k| pur_mur(k, cfg))
        .collect::<Result<_>>()?;
    let mut pruned = Vec::new();
    let mut survive = Vec::new();
    for i in 0..kernels.len() {
        for j in i + 1..kernels.len() {
            let dp = (stats[i].0 - stats[j].0).abs();
            let dm = (stats[i].1 - stats[j].1).abs();
            if dp < th.alpha_p && dm < th.alpha_m {
                pruned.push((i, j));
            } else {
                survive.push((i, j));
            }
        }
    }
    Ok((pruned, survive))
}

#[derive(Debug, Clone)]
pub struct PruneOutcome {
    pub survivors: Vec<(usize, usize)>,
    pub pruned: usize,
    /// Thresholds in effect after any relaxation.
    pub thresholds_used: PruneThresholds,
    pub relaxed: bool,
}

/// Prune candidate pairs; when every pair is pruned, relax by halving
/// both thresholds until something survives (flooring at zero, which
/// disables pruning entirely).
pub fn prune_pairs(
    kernels: &[KernelDescriptor],
    cfg: &SMConfig,
    th: PruneThresholds,
) -> Result<PruneOutcome> {
    if kernels.len() < 2 {
        return Ok(PruneOutcome {
            survivors: vec![],
            pruned: 0,
            thresholds_used: th,
            relaxed: false,
        });
    }
    let mut current = th;
    let mut relaxed = false;
    loop {
        let (pruned, survivors) = prune_partition(kernels, cfg, current)?;
        if !survivors.is_empty() {
            return Ok(PruneOutcome {
                survivors,
                pruned: pruned.len(),
                thresholds_used: current,
                relaxed,
            });
        }
        relaxed = true;
        current = PruneThresholds {
            alpha_p: if current.alpha_p < 1e-9 { 0.0 } else { current.alpha_p / 2.0 },
            alpha_m: if current.alpha_m < 1e-9 { 0.0 } else { current.alpha_m / 2.0 },
        };
        if current.alpha_p == 0.0 && current.alpha_m == 0.0 {
            // nothing can be pruned at zero thresholds
            let (_, survivors) = prune_partition(kernels, cfg, current)?;
            return Ok(PruneOutcome {
                pruned: 0,
                survivors,
                thresholds_used: current,
                relaxed,
            });
        }
    }
}

/// Memoized model evaluations shared across scheduling decisions.
#[derive(Debug, Default)]
pub struct ModelCache {
    solo: std::collections::HashMap<u64, (u32, u32, f64)>,
    pair: std::collections::HashMap<(u64, u64), (BalancedSplit, f64)>,
}

impl ModelCache {
    pub fn solo_point(
        &mut self,
        desc: &KernelDescriptor,
        cfg: &SMConfig,
    ) -> Result<(u32, u32, f64)> {
        let key = desc.model_fingerprint();
        if let Some(v) = self.solo.get(&key) {
            return Ok(*v);
        }
        let v = solo_operating_point(desc, cfg)?;
        self.solo.insert(key, v);
        Ok(v)
    }

    pub fn pair_eval(
        &mut self,
        d1: &KernelDescriptor,
        d2: &KernelDescriptor,
        cfg: &SMConfig,
    ) -> Result<(BalancedSplit, f64)> {
        let key = (d1.model_fingerprint(), d2.model_fingerprint());
        if let Some(v) = self.pair.get(&key) {
            return Ok(v.clone());
        }
        let split = balanced_slice_sizes(d1, d2, cfg)?;
        let (_, _, solo1) = self.solo_point(d1, cfg)?;
        let (_, _, solo2) = self.solo_point(d2, cfg)?;
        let cp = co_scheduling_profit(&[solo1, solo2], &[split.ipc.0, split.ipc.1])?;
        self.pair.insert(key, (split.clone(), cp));
        Ok((split, cp))
    }
}

fn solo_co_schedule(
    k: &PendingKernel,
    cfg: &SMConfig,
    cache: &mut ModelCache,
) -> Result<CoSchedule> {
    let (blocks, warps, ipc) = cache.solo_point(&k.desc, cfg)?;
    let size = (blocks as u64 * cfg.num_sms as u64).min(k.remaining_blocks).max(1);
    Ok(CoSchedule {
        kernel_1: k.desc.clone(),
        kernel_2: None,
        size_1: size,
        size_2: 0,
        warps: (warps, 0),
        predicted: Prediction {
            ipc_1: ipc,
            ipc_2: 0.0,
            c: ipc,
            cp: 0.0,
        },
    })
}

/// Pick the next co-schedule: prune candidate pairs, evaluate CP at each
/// surviving pair's balanced slice sizes, and take the maximum-CP pair if
/// it beats solo execution (CP > 0); otherwise run the oldest kernel
/// solo at max occupancy. Ties break toward the earliest-arrived pair.
pub fn find_co_schedule(
    pending: &PendingSet,
    cfg: &SMConfig,
    th: PruneThresholds,
    cache: &mut ModelCache,
) -> Result<CoSchedule> {
    if pending.is_empty() {
        return Err(Error::InvalidInput("pending set is empty".into()));
    }
    let oldest = pending
        .kernels
        .iter()
        .min_by(|a, b| {
            a.arrival
                .partial_cmp(&b.arrival)
                .unwrap()
                .then(a.seq.cmp(&b.seq))
        })
        .unwrap();
    if pending.kernels.len() == 1 {
        return solo_co_schedule(oldest, cfg, cache);
    }
    let descs: Vec<KernelDescriptor> =
        pending.kernels.iter().map(|k| k.desc.clone()).collect();
    let outcome = prune_pairs(&descs, cfg, th)?;
    let mut best: Option<(f64, usize, usize, BalancedSplit)> = None;
    for &(i, j) in &outcome.survivors {
        let (split, cp) = cache.pair_eval(&descs[i], &descs[j], cfg)?;
        // strict > keeps the earliest-arrival pair on ties (survivors are
        // enumerated in arrival order)
        if best.as_ref().map_or(true, |(bcp, ..)| cp > *bcp) {
            best = Some((cp, i, j, split));
        }
    }
    match best {
        Some((cp, i, j, split)) if cp > 0.0 => {
            let (k1, k2) = (&pending.kernels[i], &pending.kernels[j]);
            Ok(CoSchedule {
                kernel_1: k1.desc.clone(),
                kernel_2: Some(k2.desc.clone()),
                size_1: split.slice_sizes.0.min(k1.remaining_blocks).max(1),
                size_2: split.slice_sizes.1.min(k2.remaining_blocks).max(1),
                warps: split.warps,
                predicted: Prediction {
                    ipc_1: split.ipc.0,
                    ipc_2: split.ipc.1,
                    c: split.c,
                    cp,
                },
            })
        }
        _ => solo_co_schedule(oldest, cfg, cache),
    }
}

/// Executes one co-schedule and reports its duration in cycles.
pub trait Executor {
    fn execute(&mut self, cs: &CoSchedule) -> Result<f64>;
}

#[derive(Debug, Clone)]
pub struct Arrival {
    pub desc: KernelDescriptor,
    pub time: f64,
}

#[derive(Debug, Clone)]
pub struct TraceEvent {
    pub time: f64,
    pub event: String,
    pub kernel_1: String,
    pub kernel_2: Option<String>,
    pub size_1: u64,
    pub size_2: u64,
    pub predicted_cp: f64,
}

#[derive(Debug, Clone, Default)]
pub struct SchedulerRun {
    pub plan: SchedulingPlan,
    pub trace: Vec<TraceEvent>,
    pub makespan: f64,
    /// Executor error that aborted the run, leaving a partial plan and
    /// timeline.
    pub aborted: Option<String>,
}

impl SchedulerRun {
    pub fn trace_csv(&self) -> String {
        let mut out = String::from("time,event,kernel_1,kernel_2,size_1,size_2,predicted_CP\n");
        for e in &self.trace {
            out.push_str(&format!(
                "{:.0},{},{},{},{},{},{:.6}\n",
                e.time,
                e.event,
                e.kernel_1,
                e.kernel_2.as_deref().unwrap_or("-"),
                e.size_1,
                e.size_2,
                e.predicted_cp
            ));
        }
        out
    }
}

/// The greedy scheduling loop: admit arrivals, pick a co-schedule, run it
/// to completion (no preemption), deduct the executed blocks, and
/// recompute only when the pending set changed — otherwise the previous
/// decision is reused while both kernels still have blocks.
pub fn run_scheduler(
    arrivals: &[Arrival],
    cfg: &SMConfig,
    th: PruneThresholds,
    executor: &mut dyn Executor,
) -> Result<SchedulerRun> {
    let mut queue: Vec<Arrival> = arrivals.to_vec();
    queue.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    let mut next_arrival = 0usize;
    let mut pending = PendingSet::default();
    let mut cache = ModelCache::default();
    let mut run = SchedulerRun::default();
    let mut t = 0.0f64;
    let mut reusable: Option<CoSchedule> = None;

    loop {
        // admit everything that has arrived by now
        let mut changed = false;
        while next_arrival < queue.len() && queue[next_arrival].time <= t {
            let a = &queue[next_arrival];
            pending.push(a.desc.clone(), a.time);
            run.trace.push(TraceEvent {
                time: a.time,
                event: "arrival".into(),
                kernel_1: a.desc.name.clone(),
                kernel_2: None,
                size_1: a.desc.grid_blocks,
                size_2: 0,
                predicted_cp: 0.0,
            });
            next_arrival += 1;
            changed = true;
        }
        if pending.is_empty() {
            if next_arrival >= queue.len() {
                break;
            }
            t = queue[next_arrival].time;
            continue;
        }
        if changed {
            reusable = None;
        }
        let cs = match reusable.take() {
            Some(prev) => clamp_to_remaining(prev, &pending),
            None => {
                run.trace.push(TraceEvent {
                    time: t,
                    event: "decide".into(),
                    kernel_1: String::new(),
                    kernel_2: None,
                    size_1: 0,
                    size_2: 0,
                    predicted_cp: 0.0,
                });
                find_co_schedule(&pending, cfg, th, &mut cache)?
            }
        };
        run.trace.push(TraceEvent {
            time: t,
            event: "launch".into(),
            kernel_1: cs.kernel_1.name.clone(),
            kernel_2: cs.kernel_2.as_ref().map(|k| k.name.clone()),
            size_1: cs.size_1,
            size_2: cs.size_2,
            predicted_cp: cs.predicted.cp,
        });
        let dur = match executor.execute(&cs) {
            Ok(d) => d,
            Err(e) => {
                run.aborted = Some(e.to_string());
                run.makespan = t;
                return Ok(run);
            }
        };
        t += dur;
        // deduct executed blocks; drop finished kernels
        let mut finished = false;
        for (name, used) in [
            (cs.kernel_1.name.clone(), cs.size_1),
            (
                cs.kernel_2.as_ref().map(|k| k.name.clone()).unwrap_or_default(),
                cs.size_2,
            ),
        ] {
            if used == 0 {
                continue;
            }
            if let Some(k) = pending.kernels.iter_mut().find(|k| k.desc.name == name) {
                k.remaining_blocks -= used;
                if k.remaining_blocks == 0 {
                    finished = true;
                    run.trace.push(TraceEvent {
                        time: t,
                        event: "complete".into(),
                        kernel_1: name.clone(),
                        kernel_2: None,
                        size_1: 0,
                        size_2: 0,
                        predicted_cp: 0.0,
                    });
                }
            }
        }
        pending.kernels.retain(|k| k.remaining_blocks > 0);
        run.plan.co_schedules.push(cs.clone());
        // Alg. 1 inner loop: reuse the decision while the pending set is
        // unchanged and both kernels still have blocks
        let both_alive = match &cs.kernel_2 {
            Some(k2) => {
                pending.kernels.iter().any(|k| k.desc.name == cs.kernel_1.name)
                    && pending.kernels.iter().any(|k| k.desc.name == k2.name)
            }
            None => pending
                .kernels
                .iter()
                .any(|k| k.desc.name == cs.kernel_1.name),
        };
        if !finished && both_alive {
            reusable = Some(cs);
        } else {
            reusable = None;
        }
    }
    run.makespan = t;
    Ok(run)
}

fn clamp_to_remaining(mut cs: CoSchedule, pending: &PendingSet) -> CoSchedule {
    let rem = |name: &str| {
        pending
            .kernels
            .iter()
            .find(|k| k.desc.name == name)
            .map(|k| k.remaining_blocks)
            .unwrap_or(0)
    };
    cs.size_1 = cs.size_1.min(rem(&cs.kernel_1.name)).max(1);
    if let Some(k2) = &cs.kernel_2 {
        cs.size_2 = cs.size_2.min(rem(&k2.name)).max(1);
    }
    cs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> SMConfig {
        SMConfig {
            max_active_warps: 24,
            max_registers: 1 << 20,
            max_shared_mem: 1 << 20,
            max_blocks_per_sm: 8,
            base_latency: 60.0,
            bandwidth: 1.0,
            latency_slope: 2.0,
            verbatim_latency: false,
            uncoalesced_requests_per_instr: 32,
            warp_schedulers: 1,
            peak_ipc: 1.0,
            peak_mpc: 1.0,
            num_sms: 14,
            launch_overhead: 100,
        }
    }

    fn desc(name: &str, rm: f64, pur: f64, mur: f64) -> KernelDescriptor {
        KernelDescriptor {
            name: name.into(),
            grid_blocks: 56,
            warps_per_block: 2,
            instructions_per_block: 200,
            mem_instruction_ratio: rm,
            uncoalesced_fraction: 0.0,
            registers_per_thread: 8,
            shared_mem_per_block: 0,
            pur: Some(pur),
            mur: Some(mur),
            profile: None,
        }
    }

    struct FixedExecutor;
    impl Executor for FixedExecutor {
        fn execute(&mut self, cs: &CoSchedule) -> Result<f64> {
            Ok(100.0 + (cs.size_1 + cs.size_2) as f64)
        }
    }

    #[test]
    fn pruning_and_relaxation() {
        let c = cfg();
        let ks = vec![
            desc("a", 0.2, 0.3, 0.02),
            desc("b", 0.2, 0.32, 0.03),
            desc("c", 0.2, 0.9, 0.2),
        ];
        let th = PruneThresholds::new(0.1, 0.05).unwrap();
        let (pruned, survive) = prune_partition(&ks, &c, th).unwrap();
        assert_eq!(pruned, vec![(0, 1)]);
        assert_eq!(survive, vec![(0, 2), (1, 2)]);

        // identical kernels: everything pruned, relaxation floors to zero
        // and all pairs return
        let same = vec![ks[0].clone(), ks[0].clone()];
        let out = prune_pairs(&same, &c, th).unwrap();
        assert!(out.relaxed);
        assert_eq!(out.survivors, vec![(0, 1)]);
        // under AND semantics pruning stops as soon as one threshold
        // floors at zero
        assert_eq!(out.thresholds_used.alpha_m, 0.0);

        let solo = prune_pairs(&ks[..1], &c, th).unwrap();
        assert!(solo.survivors.is_empty());
    }

    #[test]
    fn find_co_schedule_solo_and_pair() {
        // constant latency so the memory-bound kernel stays latency-bound
        // and the balanced split is profitable
        let mut c = cfg();
        c.base_latency = 60.0;
        c.latency_slope = 0.0;
        let mut cache = ModelCache::default();
        let mut pending = PendingSet::default();
        pending.push(desc("a", 0.02, 0.9, 0.02), 0.0);
        let cs = find_co_schedule(&pending, &c, DEFAULT_THRESHOLDS, &mut cache).unwrap();
        assert!(cs.kernel_2.is_none());
        assert_eq!(cs.predicted.cp, 0.0);

        // complementary kernels: compute-bound + memory-bound
        pending.push(desc("b", 0.3, 0.1, 0.3), 0.0);
        let cs = find_co_schedule(&pending, &c, DEFAULT_THRESHOLDS, &mut cache).unwrap();
        assert!(cs.kernel_2.is_some(), "complementary pair should co-schedule");
        assert!(cs.predicted.cp > 0.0);

        // exhaustive oracle: cp equals max over surviving pairs
        let descs: Vec<_> = pending.kernels.iter().map(|k| k.desc.clone()).collect();
        let out = prune_pairs(&descs, &c, DEFAULT_THRESHOLDS).unwrap();
        let mut best = f64::NEG_INFINITY;
        for &(i, j) in &out.survivors {
            let split = balanced_slice_sizes(&descs[i], &descs[j], &c).unwrap();
            let (_, _, s1) = solo_operating_point(&descs[i], &c).unwrap();
            let (_, _, s2) = solo_operating_point(&descs[j], &c).unwrap();
            let cp = co_scheduling_profit(&[s1, s2], &[split.ipc.0, split.ipc.1]).unwrap();
            best = best.max(cp);
        }
        assert!((cs.predicted.cp - best).abs() < 1e-12);
    }

    #[test]
    fn scheduler_covers_every_block_exactly_once() {
        let c = cfg();
        let arrivals = vec![
            Arrival {
                desc: desc("a", 0.05, 0.9, 0.02),
                time: 0.0,
            },
            Arrival {
                desc: desc("b", 0.9, 0.1, 0.3),
                time: 0.0,
            },
            Arrival {
                desc: desc("c", 0.5, 0.5, 0.15),
                time: 5000.0,
            },
        ];
        let run = run_scheduler(&arrivals, &c, DEFAULT_THRESHOLDS, &mut FixedExecutor).unwrap();
        assert!(run.aborted.is_none());
        let mut blocks: std::collections::HashMap<String, u64> = Default::default();
        for cs in &run.plan.co_schedules {
            *blocks.entry(cs.kernel_1.name.clone()).or_default() += cs.size_1;
            if let Some(k2) = &cs.kernel_2 {
                *blocks.entry(k2.name.clone()).or_default() += cs.size_2;
            }
        }
        for a in &arrivals {
            assert_eq!(blocks[&a.desc.name], a.desc.grid_blocks, "{}", a.desc.name);
        }
        let csv = run.trace_csv();
        assert!(csv.starts_with("time,event"));
        assert!(csv.contains("launch"));
    }

    #[test]
    fn single_kernel_plan_is_its_slices_in_order() {
        let c = cfg();
        let arrivals = vec![Arrival {
            desc: desc("a", 0.2, 0.5, 0.1),
            time: 0.0,
        }];
        let run = run_scheduler(&arrivals, &c, DEFAULT_THRESHOLDS, &mut FixedExecutor).unwrap();
        let total: u64 = run.plan.co_schedules.iter().map(|cs| cs.size_1).sum();
        assert_eq!(total, 56);
        assert!(run
            .plan
            .co_schedules
            .iter()
            .all(|cs| cs.kernel_2.is_none()));
    }
}

