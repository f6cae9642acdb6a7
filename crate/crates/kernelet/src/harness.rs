//! Synthetic workloads (Poisson arrivals over benchmark mixes) and
//! policy comparison: BASE consolidation, the model-driven scheduler,
//! exhaustive oracle search (OPT), and Monte Carlo random scheduling
//! (MC), all executed against the same oracle durations.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use crate::error::{Error, Result};
use crate::kernel::{KernelDescriptor, SMConfig};
use crate::markov::feasible_splits;
use crate::scheduler::{
    prune_pairs, run_scheduler, Arrival, CoSchedule, Executor, ModelCache, PendingSet,
    Prediction, PruneThresholds, SchedulingPlan,
};
use crate::sim::{co_schedule_duration, DurationCache};

/// Benchmark mixes. The named mixes follow the standard grouping of the
/// eight bundled benchmarks by compute- vs memory-intensity.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Mix {
    /// Compute-intensive: BS, MM, TEA, MRIQ.
    Ci,
    /// Memory-intensive: PC, SPMV, ST, SAD.
    Mi,
    /// Mixed: PC, BS, TEA, SAD.
    Mixed,
    /// All eight benchmarks.
    All,
    Custom(Vec<String>),
}

impl Mix {
    pub fn members(&self) -> Vec<String> {
        let names: &[&str] = match self {
            Mix::Ci => &["BS", "MM", "TEA", "MRIQ"],
            Mix::Mi => &["PC", "SPMV", "ST", "SAD"],
            Mix::Mixed => &["PC", "BS", "TEA", "SAD"],
            Mix::All => &["PC", "SAD", "SPMV", "ST", "MM", "MRIQ", "BS", "TEA"],
            Mix::Custom(v) => return v.clone(),
        };
        names.iter().map(|s| s.to_string()).collect()
    }
}

impl std::str::FromStr for Mix {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.to_ascii_uppercase().as_str() {
            "CI" => Mix::Ci,
            "MI" => Mix::Mi,
            "MIX" => Mix::Mixed,
            "ALL" => Mix::All,
            other => Mix::Custom(other.split(',').map(|s| s.trim().to_string()).collect()),
        })
    }
}

#[derive(Debug, Clone)]
pub struct WorkloadSpec {
    pub mix: Mix,
    /// Kernel instances launched per application.
    pub instances: u32,
    /// Arrival rate (arrivals per cycle), shared by all applications.
    pub lambda: f64,
    pub seed: u64,
}

impl WorkloadSpec {
    fn validate(&self) -> Result<()> {
        if self.lambda <= 0.0 {
            return Err(Error::InvalidInput("lambda must be > 0".into()));
        }
        if self.instances < 1 {
            return Err(Error::InvalidInput("instances must be >= 1".into()));
        }
        Ok(())
    }
}

/// Draw Poisson arrivals: per application, `instances` kernels with
/// exponential inter-arrival times at the shared rate, merged and sorted.
/// Instances get unique names `APP#i`. Deterministic given the seed.
pub fn generate_workload(
    spec: &WorkloadSpec,
    library: &[KernelDescriptor],
) -> Result<Vec<Arrival>> {
    spec.validate()?;
    let exp = Exp::new(spec.lambda)
        .map_err(|e| Error::InvalidInput(format!("bad lambda: {e}")))?;
    let mut arrivals = Vec::new();
    for (ai, app) in spec.mix.members().iter().enumerate() {
        let base = library
            .iter()
            .find(|k| &k.name == app)
            .ok_or_else(|| Error::InvalidInput(format!("unknown benchmark {app:?}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ ((ai as u64) << 32));
        let mut t = 0.0;
        for i in 0..spec.instances {
            t += exp.sample(&mut rng);
            let mut desc = base.clone();
            desc.name = format!("{app}#{i}");
            arrivals.push(Arrival { desc, time: t });
        }
    }
    arrivals.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    Ok(arrivals)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Policy {
    Base,
    Kernelet,
    Opt,
    Mc(u32),
}

impl Policy {
    pub fn name(&self) -> String {
        match self {
            Policy::Base => "BASE".into(),
            Policy::Kernelet => "KERNELET".into(),
            Policy::Opt => "OPT".into(),
            Policy::Mc(s) => format!("MC({s})"),
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let low = s.to_ascii_lowercase();
        Ok(match low.as_str() {
            "base" => Policy::Base,
            "kernelet" => Policy::Kernelet,
            "opt" => Policy::Opt,
            _ => {
                if let Some(n) = low.strip_prefix("mc:").or_else(|| low.strip_prefix("mc")) {
                    Policy::Mc(
                        n.parse()
                            .map_err(|_| Error::UnknownPolicy(s.to_string()))?,
                    )
                } else {
                    return Err(Error::UnknownPolicy(s.to_string()));
                }
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct PolicyReport {
    pub policy: String,
    pub makespan: f64,
    /// Completion cycle per kernel instance.
    pub completions: std::collections::HashMap<String, f64>,
    pub co_schedules: usize,
    /// Block-weighted mean of the model CP predictions attached to the
    /// executed co-schedules (zero for policies that do not predict).
    pub mean_predicted_cp: f64,
    pub seed: u64,
    /// All sampled makespans (Monte Carlo policies only).
    pub mc_samples: Vec<f64>,
    /// The executed co-schedules, for coverage audits.
    pub plan: SchedulingPlan,
}

/// Executes co-schedules through the chain simulator with
/// content-derived seeds and per-slice launch overheads.
pub struct OracleExecutor<'a> {
    pub cfg: &'a SMConfig,
    pub seed: u64,
    pub cache: &'a mut DurationCache,
}

impl Executor for OracleExecutor<'_> {
    fn execute(&mut self, cs: &CoSchedule) -> Result<f64> {
        let launches = 1 + cs.kernel_2.is_some() as u64;
        Ok(co_schedule_duration(cs, self.cfg, self.cache, self.seed)?
            + launches as f64 * self.cfg.launch_overhead as f64)
    }
}

fn summarize(
    policy: &Policy,
    plan: &SchedulingPlan,
    makespan: f64,
    completions: std::collections::HashMap<String, f64>,
    seed: u64,
) -> PolicyReport {
    let mut wcp = 0.0;
    let mut wtot = 0.0;
    for cs in &plan.co_schedules {
        let w = (cs.size_1 + cs.size_2) as f64;
        wcp += w * cs.predicted.cp;
        wtot += w;
    }
    PolicyReport {
        policy: policy.name(),
        makespan,
        completions,
        co_schedules: plan.co_schedules.len(),
        mean_predicted_cp: if wtot > 0.0 { wcp / wtot } else { 0.0 },
        seed,
        mc_samples: vec![],
        plan: plan.clone(),
    }
}

/// Generic non-preemptive event loop shared by the BASE/OPT/MC policies:
/// admit arrivals, let the chooser pick a co-schedule, execute it,
/// deduct blocks.
fn policy_loop(
    arrivals: &[Arrival],
    mcache: &mut ModelCache,
    mut choose: impl FnMut(&PendingSet, &mut ModelCache) -> Result<CoSchedule>,
    executor: &mut dyn Executor,
) -> Result<(SchedulingPlan, f64, std::collections::HashMap<String, f64>)> {
    let mut queue: Vec<Arrival> = arrivals.to_vec();
    queue.sort_by(|a, b| a.time.partial_cmp(&b.time).unwrap());
    let mut next = 0usize;
    let mut pending = PendingSet::default();
    let mut plan = SchedulingPlan::default();
    let mut completions: std::collections::HashMap<String, f64> = Default::default();
    let mut t = 0.0f64;
    loop {
        while next < queue.len() && queue[next].time <= t {
            pending.push(queue[next].desc.clone(), queue[next].time);
            next += 1;
        }
        if pending.is_empty() {
            if next >= queue.len() {
                break;
            }
            t = queue[next].time;
            continue;
        }
        let cs = choose(&pending, mcache)?;
        let dur = executor.execute(&cs)?;
        t += dur;
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
                k.remaining_blocks = k.remaining_blocks.saturating_sub(used);
                if k.remaining_blocks == 0 {
                    completions.insert(name.clone(), t);
                }
            }
        }
        pending.kernels.retain(|k| k.remaining_blocks > 0);
        plan.co_schedules.push(cs);
    }
    Ok((plan, t, completions))
}

/// BASE consolidation: whole kernels FIFO, never sliced; a second whole
/// kernel rides along only when the first cannot fill the SM on its own
/// and the leftovers fit it.
fn base_choose(
    pending: &PendingSet,
    cfg: &SMConfig,
    mcache: &mut ModelCache,
) -> Result<CoSchedule> {
    let k1 = &pending.kernels[0];
    let (b1, w1, ipc1) = mcache.solo_point(&k1.desc, cfg)?;
    let mut cs = CoSchedule {
        kernel_1: k1.desc.clone(),
        kernel_2: None,
        size_1: k1.remaining_blocks,
        size_2: 0,
        warps: (w1, 0),
        predicted: Prediction {
            ipc_1: ipc1,
            ipc_2: 0.0,
            c: ipc1,
            cp: 0.0,
        },
    };
    if w1 >= cfg.max_active_warps {
        return Ok(cs);
    }
    for k2 in &pending.kernels[1..] {
        // largest co-resident count for k2 with k1 held at its solo shape
        let best = feasible_splits(&k1.desc, &k2.desc, cfg)
            .into_iter()
            .filter(|&(a, _)| a == b1)
            .map(|(_, b)| b)
            .max();
        if let Some(b2) = best {
            cs.kernel_2 = Some(k2.desc.clone());
            cs.size_2 = k2.remaining_blocks;
            cs.warps.1 = b2 * k2.desc.warps_per_block;
            break;
        }
    }
    Ok(cs)
}

/// Candidate co-schedules for one decision point: a solo slice per
/// distinct kernel shape, plus every feasible split of every surviving
/// pair. Pending instances sharing a shape are represented by their two
/// earliest arrivals, which is sufficient because identical instances
/// are interchangeable.
fn decision_candidates(
    pending: &PendingSet,
    cfg: &SMConfig,
    th: PruneThresholds,
    mcache: &mut ModelCache,
) -> Result<Vec<CoSchedule>> {
    let mut reps: Vec<usize> = Vec::new();
    let mut seen: std::collections::HashMap<u64, usize> = Default::default();
    for (i, k) in pending.kernels.iter().enumerate() {
        let c = seen.entry(k.desc.model_fingerprint()).or_insert(0);
        if *c < 2 {
            reps.push(i);
            *c += 1;
        }
    }
    let mut out = Vec::new();
    for &i in &reps {
        let k = &pending.kernels[i];
        let (b, w, ipc) = mcache.solo_point(&k.desc, cfg)?;
        out.push(CoSchedule {
            kernel_1: k.desc.clone(),
            kernel_2: None,
            size_1: (b as u64 * cfg.num_sms as u64).min(k.remaining_blocks).max(1),
            size_2: 0,
            warps: (w, 0),
            predicted: Prediction {
                ipc_1: ipc,
                ipc_2: 0.0,
                c: ipc,
                cp: 0.0,
            },
        });
    }
    if reps.len() >= 2 {
        let descs: Vec<KernelDescriptor> = reps
            .iter()
            .map(|&i| pending.kernels[i].desc.clone())
            .collect();
        let outcome = prune_pairs(&descs, cfg, th)?;
        for &(ri, rj) in &outcome.survivors {
            let (ki, kj) = (&pending.kernels[reps[ri]], &pending.kernels[reps[rj]]);
            for (b1, b2) in feasible_splits(&ki.desc, &kj.desc, cfg) {
                out.push(CoSchedule {
                    kernel_1: ki.desc.clone(),
                    kernel_2: Some(kj.desc.clone()),
                    size_1: (b1 as u64 * cfg.num_sms as u64)
                        .min(ki.remaining_blocks)
                        .max(1),
                    size_2: (b2 as u64 * cfg.num_sms as u64)
                        .min(kj.remaining_blocks)
                        .max(1),
                    warps: (b1 * ki.desc.warps_per_block, b2 * kj.desc.warps_per_block),
                    predicted: Prediction::default(),
                });
            }
        }
    }
    Ok(out)
}

/// Run one policy over one workload. All policies draw co-schedule
/// durations from the same content-addressed cache, so their makespans
/// are directly comparable.
pub fn run_policy(
    policy: &Policy,
    arrivals: &[Arrival],
    cfg: &SMConfig,
    th: PruneThresholds,
    seed: u64,
    cache: &mut DurationCache,
) -> Result<PolicyReport> {
    match policy {
        Policy::Kernelet => {
            let mut exec = OracleExecutor { cfg, seed, cache };
            let run = run_scheduler(arrivals, cfg, th, &mut exec)?;
            if let Some(e) = run.aborted {
                return Err(Error::InvalidInput(format!("executor aborted: {e}")));
            }
            let completions = run
                .trace
                .iter()
                .filter(|e| e.event == "complete")
                .map(|e| (e.kernel_1.clone(), e.time))
                .collect();
            Ok(summarize(policy, &run.plan, run.makespan, completions, seed))
        }
        Policy::Base => {
            let mut exec = OracleExecutor { cfg, seed, cache };
            let mut mcache = ModelCache::default();
            let (plan, makespan, completions) =
                policy_loop(arrivals, &mut mcache, |p, m| base_choose(p, cfg, m), &mut exec)?;
            Ok(summarize(policy, &plan, makespan, completions, seed))
        }
        Policy::Opt => {
            // pre-execute every candidate through the shared duration
            // cache and take the highest effective throughput
            let cell = std::cell::RefCell::new(cache);
            let exec_cell = |cs: &CoSchedule| -> Result<f64> {
                let mut c = cell.borrow_mut();
                let launches = 1 + cs.kernel_2.is_some() as u64;
                Ok(co_schedule_duration(cs, cfg, &mut c, seed)?
                    + launches as f64 * cfg.launch_overhead as f64)
            };
            let choose = |p: &PendingSet, m: &mut ModelCache| -> Result<CoSchedule> {
                let cands = decision_candidates(p, cfg, th, m)?;
                let mut best: Option<(f64, CoSchedule)> = None;
                for cs in cands {
                    let dur = exec_cell(&cs)?;
                    // serial-equivalent work retired per cycle: each block
                    // is weighted by the time it would cost at its
                    // kernel's solo operating point
                    let mut work = 0.0;
                    for (desc, size) in [
                        (Some(&cs.kernel_1), cs.size_1),
                        (cs.kernel_2.as_ref(), cs.size_2),
                    ] {
                        if let Some(d) = desc {
                            if size > 0 {
                                let (_, _, ipc) = m.solo_point(d, cfg)?;
                                work += size as f64 * d.instructions_per_block as f64 / ipc
                                    / cfg.num_sms as f64;
                            }
                        }
                    }
                    let score = work / dur;
                    if best.as_ref().map_or(true, |(b, _)| score > *b) {
                        best = Some((score, cs));
                    }
                }
                Ok(best.unwrap().1)
            };
            struct Fn2<'f>(&'f dyn Fn(&CoSchedule) -> Result<f64>);
            impl Executor for Fn2<'_> {
                fn execute(&mut self, cs: &CoSchedule) -> Result<f64> {
                    (self.0)(cs)
                }
            }
            let exec_fn = |cs: &CoSchedule| exec_cell(cs);
            let mut exec = Fn2(&exec_fn);
            let mut mcache = ModelCache::default();
            let (plan, makespan, completions) =
                policy_loop(arrivals, &mut mcache, choose, &mut exec)?;
            Ok(summarize(policy, &plan, makespan, completions, seed))
        }
        Policy::Mc(samples) => {
            let mut mc_samples = Vec::with_capacity(*samples as usize);
            let mut mcache = ModelCache::default();
            let mut best: Option<(SchedulingPlan, f64, std::collections::HashMap<String, f64>)> =
                None;
            for s in 0..*samples {
                let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4d43 ^ ((s as u64) << 24));
                let cell = std::cell::RefCell::new(&mut *cache);
                let choose = |p: &PendingSet, m: &mut ModelCache| -> Result<CoSchedule> {
                    let cands = decision_candidates(p, cfg, th, m)?;
                    use rand::Rng;
                    let i = rng.gen_range(0..cands.len());
                    Ok(cands[i].clone())
                };
                struct CellExec<'f> {
                    cfg: &'f SMConfig,
                    seed: u64,
                    cell: &'f std::cell::RefCell<&'f mut DurationCache>,
                }
                impl Executor for CellExec<'_> {
                    fn execute(&mut self, cs: &CoSchedule) -> Result<f64> {
                        let mut c = self.cell.borrow_mut();
                        let launches = 1 + cs.kernel_2.is_some() as u64;
                        Ok(co_schedule_duration(cs, self.cfg, &mut c, self.seed)?
                            + launches as f64 * self.cfg.launch_overhead as f64)
                    }
                }
                let mut exec = CellExec {
                    cfg,
                    seed,
                    cell: &cell,
                };
                let (plan, makespan, completions) =
                    policy_loop(arrivals, &mut mcache, choose, &mut exec)?;
                mc_samples.push(makespan);
                if best.as_ref().map_or(true, |(_, m, _)| makespan < *m) {
                    best = Some((plan, makespan, completions));
                }
            }
            let (plan, _, completions) = best.unwrap();
            let mut sorted = mc_samples.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let median = sorted[sorted.len() / 2];
            let mut report = summarize(policy, &plan, median, completions, seed);
            report.mc_samples = mc_samples;
            Ok(report)
        }
    }
}

/// Write the policy summary CSV and, when Monte Carlo samples exist, a
/// makespan CDF table. Returns the created paths.
pub fn write_report(
    reports: &[PolicyReport],
    workload: &str,
    out_dir: &std::path::Path,
) -> Result<Vec<std::path::PathBuf>> {
    if reports.is_empty() {
        return Err(Error::InvalidInput("no reports to write".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let base = reports
        .iter()
        .find(|r| r.policy == "BASE")
        .map(|r| r.makespan);
    let mut summary =
        String::from("policy,workload,seed,makespan_cycles,improvement_vs_base_percent\n");
    for r in reports {
        let imp = base
            .map(|b| format!("{:.2}", (b - r.makespan) / b * 100.0))
            .unwrap_or_default();
        summary.push_str(&format!(
            "{},{},{},{:.0},{}\n",
            r.policy, workload, r.seed, r.makespan, imp
        ));
    }
    let mut paths = Vec::new();
    let spath = out_dir.join("summary.csv");
    std::fs::write(&spath, summary).map_err(|e| Error::io(spath.display().to_string(), e))?;
    paths.push(spath);

    let mc: Vec<f64> = reports
        .iter()
        .flat_map(|r| r.mc_samples.iter().copied())
        .collect();
    if !mc.is_empty() {
        let mut sorted = mc;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = sorted.len();
        let mut cdf = String::from("sample_makespan,cumulative_fraction\n");
        for (i, v) in sorted.iter().enumerate() {
            cdf.push_str(&format!("{:.0},{:.6}\n", v, (i + 1) as f64 / n as f64));
        }
        let cpath = out_dir.join("mc_cdf.csv");
        std::fs::write(&cpath, cdf).map_err(|e| Error::io(cpath.display().to_string(), e))?;
        paths.push(cpath);
    }
    Ok(paths)
}

/// Fraction of Monte Carlo samples strictly better (smaller) than the
/// reference makespan.
pub fn mc_fraction_below(samples: &[f64], reference: f64) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    samples.iter().filter(|&&s| s < reference).count() as f64 / samples.len() as f64
}
