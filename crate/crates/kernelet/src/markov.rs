//! Warp-state Markov chains and the throughput quantities derived from
//! them.
//!
//! A (possibly virtual) SM is modelled as a chain over idle-warp counts.
//! Each round every ready warp issues one instruction and then goes idle
//! with probability R_m; each idle warp returns with probability
//! round/L where L comes from a linear contention model. Heterogeneous
//! chains track one idle count per kernel; the three-state extension splits
//! idle warps into coalesced-stalled and uncoalesced-stalled flavors.

use crate::error::{Error, Result};
use crate::kernel::{max_feasible_blocks, KernelDescriptor, SMConfig};

/// Upper bound on the joint state space before chain construction refuses
/// and advises block granularity.
pub const DEFAULT_STATE_CAP: usize = 20_000;

const STEADY_STATE_MAX_ITERS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Granularity {
    Warp,
    Block,
}

/// One kernel's share of the SM in a chain.
#[derive(Debug, Clone)]
pub struct ChainWorkload {
    pub desc: KernelDescriptor,
    pub warps: u32,
}

/// Full description of a chain to build: one or two workloads, the
/// scheduling-unit granularity, and whether idle warps are split by
/// coalescing flavor.
#[derive(Debug, Clone)]
pub struct ChainSpec {
    pub workloads: Vec<ChainWorkload>,
    pub granularity: Granularity,
    pub three_state: bool,
}

impl ChainSpec {
    /// Chain over a single kernel. Three-state when the descriptor has any
    /// uncoalesced accesses.
    pub fn homogeneous(desc: &KernelDescriptor, warps: u32, granularity: Granularity) -> Self {
        ChainSpec {
            three_state: desc.uncoalesced_fraction > 0.0,
            workloads: vec![ChainWorkload {
                desc: desc.clone(),
                warps,
            }],
            granularity,
        }
    }

    /// Joint chain over a co-scheduled pair.
    pub fn heterogeneous(
        d1: &KernelDescriptor,
        w1: u32,
        d2: &KernelDescriptor,
        w2: u32,
    ) -> Self {
        ChainSpec {
            three_state: d1.uncoalesced_fraction > 0.0 || d2.uncoalesced_fraction > 0.0,
            workloads: vec![
                ChainWorkload {
                    desc: d1.clone(),
                    warps: w1,
                },
                ChainWorkload {
                    desc: d2.clone(),
                    warps: w2,
                },
            ],
            granularity: Granularity::Warp,
        }
    }

    fn validate(&self, cfg: &SMConfig) -> Result<()> {
        if self.workloads.is_empty() || self.workloads.len() > 2 {
            return Err(Error::InvalidInput(
                "a chain holds one or two workloads".into(),
            ));
        }
        let total: u32 = self.workloads.iter().map(|w| w.warps).sum();
        if total > cfg.max_active_warps {
            return Err(Error::InvalidInput(format!(
                "total active warps {} exceed max {}",
                total, cfg.max_active_warps
            )));
        }
        for w in &self.workloads {
            if w.warps < 1 {
                return Err(Error::InvalidInput(format!(
                    "workload {} has zero active warps",
                    w.desc.name
                )));
            }
        }
        Ok(())
    }
}

/// One scheduling-unit population in the chain. At warp granularity an
/// entity is a warp; at block granularity an entity is a thread block,
/// treated as idle when any of its warps is idle.
#[derive(Debug, Clone)]
pub(crate) struct EntityClass {
    pub count: u32,
    /// Per-round probability that a ready entity goes idle.
    pub rm: f64,
    /// Fraction of idle transitions that land in the uncoalesced flavor.
    pub uncoal: f64,
    /// Instructions issued per ready entity per round.
    pub issue: u32,
    /// Outstanding memory requests per coalesced-idle entity.
    pub weight_c: f64,
    /// Outstanding memory requests per uncoalesced-idle entity.
    pub weight_u: f64,
    pub three_state: bool,
}

impl EntityClass {
    fn from_workload(w: &ChainWorkload, cfg: &SMConfig, granularity: Granularity) -> Self {
        let u_req = cfg.uncoalesced_requests_per_instr as f64;
        match granularity {
            Granularity::Warp => EntityClass {
                count: w.warps,
                rm: w.desc.mem_instruction_ratio,
                uncoal: w.desc.uncoalesced_fraction,
                issue: 1,
                weight_c: 1.0,
                weight_u: u_req,
                three_state: w.desc.uncoalesced_fraction > 0.0,
            },
            Granularity::Block => {
                let g = w.desc.warps_per_block.min(w.warps).max(1);
                let blocks = (w.warps / g).max(1);
                // A block is idle when any of its warps is idle.
                let rm_block = 1.0 - (1.0 - w.desc.mem_instruction_ratio).powi(g as i32);
                EntityClass {
                    count: blocks,
                    rm: rm_block,
                    uncoal: w.desc.uncoalesced_fraction,
                    issue: g,
                    weight_c: g as f64,
                    weight_u: u_req * g as f64,
                    three_state: w.desc.uncoalesced_fraction > 0.0,
                }
            }
        }
    }
}

/// Per-class idle counts; `iu` stays zero in the two-state model.
pub type StateKey = Vec<(u32, u32)>;

/// Row-stochastic transition matrix with per-state round durations.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    pub states: Vec<StateKey>,
    /// Row-major probabilities; `p[i][j]` transits state i -> state j.
    pub p: Vec<Vec<f64>>,
    /// Cycles spent in one round of each state (ready warps, minimum 1).
    pub round_durations: Vec<f64>,
    pub(crate) classes: Vec<EntityClass>,
}

impl TransitionMatrix {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    /// Warps (issue slots) ready for class `k` in state `s`.
    pub fn ready(&self, s: usize, k: usize) -> f64 {
        let (ic, iu) = self.states[s][k];
        let c = &self.classes[k];
        (c.count - ic - iu) as f64 * c.issue as f64
    }

    /// Lump states by a key function, summing transition probabilities.
    /// Valid exactly when the chain is lumpable with respect to the
    /// partition; the caller checks that lumped rows are consistent.
    pub fn lump_by<K: std::hash::Hash + Eq + Ord + Clone>(
        &self,
        key: impl Fn(&StateKey) -> K,
    ) -> (Vec<K>, Vec<Vec<f64>>) {
        let mut keys: Vec<K> = self.states.iter().map(&key).collect();
        let mut uniq = keys.clone();
        uniq.sort();
        uniq.dedup();
        let index: std::collections::HashMap<K, usize> = uniq
            .iter()
            .cloned()
            .enumerate()
            .map(|(i, k)| (k, i))
            .collect();
        let n = uniq.len();
        let mut lumped = vec![vec![0.0; n]; n];
        let mut counts = vec![0usize; n];
        for (i, row) in self.p.iter().enumerate() {
            let ki = index[&keys[i]];
            counts[ki] += 1;
            for (j, &v) in row.iter().enumerate() {
                lumped[ki][index[&keys[j]]] += v;
            }
        }
        for (ki, row) in lumped.iter_mut().enumerate() {
            for v in row.iter_mut() {
                *v /= counts[ki] as f64;
            }
        }
        keys.sort();
        (uniq, lumped)
    }
}

/// Linear contention model: L = L0 + slope * outstanding requests, never
/// below L0. `outstanding` counts idle warps weighted by the requests one
/// of their memory instructions generates (1 coalesced, up to 32
/// uncoalesced).
///
/// The verbatim mode evaluates the published expression
/// L = L0 + B / (a0 * idle) with a0 bound to `latency_slope`, which
/// decreases with the idle count; it is kept behind `verbatim_latency` for
/// comparison and is not the default.
pub fn memory_latency(outstanding: f64, cfg: &SMConfig) -> f64 {
    if cfg.verbatim_latency {
        let denom = cfg.latency_slope * outstanding.max(1.0);
        if denom <= 0.0 {
            return cfg.base_latency;
        }
        cfg.base_latency + cfg.bandwidth / denom
    } else {
        cfg.base_latency + cfg.latency_slope * outstanding.max(0.0)
    }
}

/// Per-warp transition probabilities in a given SM state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WarpProbs {
    pub r_to_r: f64,
    /// Ready -> coalesced-idle.
    pub r_to_ic: f64,
    /// Ready -> uncoalesced-idle (zero in the two-state model).
    pub r_to_iu: f64,
    /// Coalesced-idle -> ready.
    pub ic_to_r: f64,
    /// Uncoalesced-idle -> ready.
    pub iu_to_r: f64,
}

/// Probabilities for one warp of `desc` when the SM currently has
/// `total_ready` ready warps and `outstanding` weighted outstanding
/// requests. The return probability round/L is clamped to [0, 1].
pub fn warp_transition_probs(
    desc: &KernelDescriptor,
    total_ready: u32,
    outstanding: f64,
    cfg: &SMConfig,
) -> WarpProbs {
    let rm = desc.mem_instruction_ratio;
    let u = desc.uncoalesced_fraction;
    let round = (total_ready as f64).max(1.0);
    let l_c = memory_latency(outstanding, cfg);
    // An uncoalesced stall additionally drains its own extra requests
    // through the memory pipes at bandwidth B.
    let l_u = l_c + (cfg.uncoalesced_requests_per_instr.saturating_sub(1)) as f64 / cfg.bandwidth;
    WarpProbs {
        r_to_r: 1.0 - rm,
        r_to_ic: rm * (1.0 - u),
        r_to_iu: rm * u,
        ic_to_r: (round / l_c).clamp(0.0, 1.0),
        iu_to_r: (round / l_u).clamp(0.0, 1.0),
    }
}

fn binom_coef(n: u32, k: u32) -> f64 {
    let mut c = 1.0;
    for i in 0..k {
        c *= (n - i) as f64 / (i + 1) as f64;
    }
    c
}

fn powi0(base: f64, exp: u32) -> f64 {
    if exp == 0 {
        1.0
    } else {
        base.powi(exp as i32)
    }
}

/// Distribution over (ic', iu') for one class given the current
/// (ic, iu) and the shared round context. Ready entities split
/// multinomially into (stay, go coalesced-idle, go uncoalesced-idle);
/// idle entities return independently.
fn class_transition_dist(
    class: &EntityClass,
    ic: u32,
    iu: u32,
    p_ic_r: f64,
    p_iu_r: f64,
) -> Vec<Vec<f64>> {
    let n = class.count;
    let nr = n - ic - iu;
    let p_stay = 1.0 - class.rm;
    let p_go_c = class.rm * (1.0 - class.uncoal);
    let p_go_u = class.rm * class.uncoal;

    let mut dist = vec![vec![0.0; (n + 1) as usize]; (n + 1) as usize];
    for b in 0..=nr {
        for c in 0..=(nr - b) {
            let a = nr - b - c;
            let m = binom_coef(nr, b)
                * binom_coef(nr - b, c)
                * powi0(p_stay, a)
                * powi0(p_go_c, b)
                * powi0(p_go_u, c);
            if m == 0.0 {
                continue;
            }
            for jc in 0..=ic {
                let pc = binom_coef(ic, jc) * powi0(p_ic_r, jc) * powi0(1.0 - p_ic_r, ic - jc);
                if pc == 0.0 {
                    continue;
                }
                for ju in 0..=iu {
                    let pu =
                        binom_coef(iu, ju) * powi0(p_iu_r, ju) * powi0(1.0 - p_iu_r, iu - ju);
                    if pu == 0.0 {
                        continue;
                    }
                    let ic2 = ic - jc + b;
                    let iu2 = iu - ju + c;
                    dist[ic2 as usize][iu2 as usize] += m * pc * pu;
                }
            }
        }
    }
    dist
}

fn enumerate_states(classes: &[EntityClass], cap: usize) -> Result<Vec<StateKey>> {
    let mut per_class: Vec<Vec<(u32, u32)>> = Vec::new();
    for c in classes {
        let mut states = Vec::new();
        if c.three_state {
            for ic in 0..=c.count {
                for iu in 0..=(c.count - ic) {
                    states.push((ic, iu));
                }
            }
        } else {
            for ic in 0..=c.count {
                states.push((ic, 0));
            }
        }
        per_class.push(states);
    }
    let total: usize = per_class.iter().map(|s| s.len()).product();
    if total > cap {
        return Err(Error::StateSpaceTooLarge {
            states: total,
            cap,
        });
    }
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; classes.len()];
    loop {
        out.push(
            idx.iter()
                .zip(&per_class)
                .map(|(&i, s)| s[i])
                .collect::<Vec<_>>(),
        );
        // odometer, last class fastest
        let mut k = classes.len();
        loop {
            if k == 0 {
                return Ok(out);
            }
            k -= 1;
            idx[k] += 1;
            if idx[k] < per_class[k].len() {
                break;
            }
            idx[k] = 0;
        }
    }
}

/// Build the chain for an arbitrary [`ChainSpec`].
pub fn build_chain(spec: &ChainSpec, cfg: &SMConfig) -> Result<TransitionMatrix> {
    build_chain_capped(spec, cfg, DEFAULT_STATE_CAP)
}

pub fn build_chain_capped(
    spec: &ChainSpec,
    cfg: &SMConfig,
    state_cap: usize,
) -> Result<TransitionMatrix> {
    spec.validate(cfg)?;
    let mut classes: Vec<EntityClass> = spec
        .workloads
        .iter()
        .map(|w| EntityClass::from_workload(w, cfg, spec.granularity))
        .collect();
    if spec.three_state {
        for c in &mut classes {
            c.three_state = true;
        }
    }
    let states = enumerate_states(&classes, state_cap)?;
    let _index: std::collections::HashMap<StateKey, usize> = states
        .iter()
        .cloned()
        .enumerate()
        .map(|(i, s)| (s, i))
        .collect();
    let n = states.len();
    let mut p = vec![vec![0.0; n]; n];
    let mut round_durations = vec![0.0; n];

    for (si, state) in states.iter().enumerate() {
        let total_ready: u32 = state
            .iter()
            .zip(&classes)
            .map(|(&(ic, iu), c)| (c.count - ic - iu) * c.issue)
            .sum();
        let round = (total_ready as f64).max(1.0);
        round_durations[si] = round;
        let outstanding: f64 = state
            .iter()
            .zip(&classes)
            .map(|(&(ic, iu), c)| ic as f64 * c.weight_c + iu as f64 * c.weight_u)
            .sum();
        let l_c = memory_latency(outstanding, cfg);
        let l_u =
            l_c + (cfg.uncoalesced_requests_per_instr.saturating_sub(1)) as f64 / cfg.bandwidth;
        let p_ic_r = (round / l_c).clamp(0.0, 1.0);
        let p_iu_r = (round / l_u).clamp(0.0, 1.0);

        let dists: Vec<Vec<Vec<f64>>> = state
            .iter()
            .zip(&classes)
            .map(|(&(ic, iu), c)| class_transition_dist(c, ic, iu, p_ic_r, p_iu_r))
            .collect();

        // Outer product of per-class distributions fills the row.
        for (sj, target) in states.iter().enumerate() {
            let mut prob = 1.0;
            for (k, &(ic2, iu2)) in target.iter().enumerate() {
                prob *= dists[k][ic2 as usize][iu2 as usize];
                if prob == 0.0 {
                    break;
                }
            }
            p[si][sj] = prob;
        }
        let sum: f64 = p[si].iter().sum();
        debug_assert!((sum - 1.0).abs() < 1e-9, "row {si} sums to {sum}");
    }

    Ok(TransitionMatrix {
        states,
        p,
        round_durations,
        classes,
    })
}

/// Chain of a single kernel with `warps` active warps.
pub fn build_homogeneous_chain(
    desc: &KernelDescriptor,
    warps: u32,
    cfg: &SMConfig,
    granularity: Granularity,
) -> Result<TransitionMatrix> {
    build_chain(&ChainSpec::homogeneous(desc, warps, granularity), cfg)
}

/// Joint chain of a co-scheduled pair; state (p, q) counts idle warps per
/// kernel, round duration and contention latency are shared.
pub fn build_heterogeneous_chain(
    d1: &KernelDescriptor,
    w1: u32,
    d2: &KernelDescriptor,
    w2: u32,
    cfg: &SMConfig,
) -> Result<TransitionMatrix> {
    build_chain(&ChainSpec::heterogeneous(d1, w1, d2, w2), cfg)
}

/// Stationary distribution with a power-iteration / linear-solve cross
/// check.
#[derive(Debug, Clone)]
pub struct SteadyState {
    /// Best available stationary vector (linear solve when it exists, else
    /// power iteration).
    pub pi: Vec<f64>,
    pub pi_power: Vec<f64>,
    pub pi_linear: Option<Vec<f64>>,
    /// False when the stationary distribution is not unique (singular
    /// linear system); `pi` is then the limit of the uniform start.
    pub unique: bool,
    /// Final infinity-norm residual of pi P - pi.
    pub residual: f64,
}

fn row_stochastic_check(tm: &TransitionMatrix) -> Result<()> {
    for (i, row) in tm.p.iter().enumerate() {
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-7 {
            return Err(Error::InvalidInput(format!(
                "row {i} sums to {sum}, not stochastic"
            )));
        }
        if row.iter().any(|&v| !(-1e-12..=1.0 + 1e-9).contains(&v)) {
            return Err(Error::InvalidInput(format!("row {i} has entries outside [0, 1]")));
        }
    }
    Ok(())
}

fn residual_inf(pi: &[f64], tm: &TransitionMatrix) -> f64 {
    let n = pi.len();
    let mut r: f64 = 0.0;
    for j in 0..n {
        let mut v = 0.0;
        for i in 0..n {
            v += pi[i] * tm.p[i][j];
        }
        r = r.max((v - pi[j]).abs());
    }
    r
}

fn solve_linear(tm: &TransitionMatrix) -> Option<Vec<f64>> {
    let n = tm.num_states();
    // (P^T - I) x = 0 with the last equation replaced by sum(x) = 1.
    let mut a = nalgebra::DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = tm.p[j][i] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = nalgebra::DVector::<f64>::zeros(n);
    b[n - 1] = 1.0;
    let lu = a.lu();
    let x = lu.solve(&b)?;
    if x.iter().any(|&v| !v.is_finite() || v < -1e-8) {
        return None;
    }
    let sum: f64 = x.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return None;
    }
    Some(x.iter().map(|&v| (v / sum).max(0.0)).collect())
}

/// Solve pi P = pi by power iteration from the uniform start, safeguarded
/// by a direct linear solve.
pub fn steady_state(tm: &TransitionMatrix, tol: f64) -> Result<SteadyState> {
    row_stochastic_check(tm)?;
    let n = tm.num_states();
    // Slowly mixing chains need tens of thousands of plain power steps, so
    // iterate with a repeatedly squared operator P^(2^s). The fixed point is
    // the same and the residual below is still measured against P itself.
    let mut op = nalgebra::DMatrix::<f64>::from_fn(n, n, |i, j| tm.p[i][j]);
    let squarings = if n > 8 { 6 } else { 0 };
    for _ in 0..squarings {
        op = &op * &op;
        // Squaring compounds rounding; re-normalize each row to keep the
        // iterates on the probability simplex.
        for mut row in op.row_iter_mut() {
            let s: f64 = row.iter().sum();
            row /= s;
        }
    }
    let mut pi = nalgebra::DVector::<f64>::from_element(n, 1.0 / n as f64);
    let mut converged = false;
    for _ in 0..STEADY_STATE_MAX_ITERS >> squarings {
        let next = op.tr_mul(&pi);
        let delta = pi
            .iter()
            .zip(next.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        pi = next;
        if delta <= tol {
            converged = true;
            break;
        }
    }
    let sum: f64 = pi.iter().sum();
    let pi_power: Vec<f64> = pi.iter().map(|&v| (v / sum).max(0.0)).collect();
    let pi_linear = solve_linear(tm);
    let unique = pi_linear.is_some();
    let best = match &pi_linear {
        Some(lin) if residual_inf(lin, tm) <= residual_inf(&pi_power, tm) => lin.clone(),
        _ => pi_power.clone(),
    };
    let residual = residual_inf(&best, tm);
    if !converged && residual > tol.max(1e-9) {
        return Err(Error::NoConvergence {
            iters: STEADY_STATE_MAX_ITERS,
            residual,
        });
    }
    Ok(SteadyState {
        pi: best,
        pi_power,
        pi_linear,
        unique,
        residual,
    })
}

/// Homogeneous IPC: ratio of non-idle cycles,
/// sum γ_i (W-i) / (sum γ_i (W-i) + γ_W) over the two-state warp chain.
pub fn ipc_homogeneous(pi: &[f64], w: u32) -> f64 {
    let w = w as usize;
    assert_eq!(pi.len(), w + 1, "pi must cover W+1 states");
    let busy: f64 = (0..w).map(|i| pi[i] * (w - i) as f64).sum();
    busy / (busy + pi[w])
}

/// Per-kernel IPCs of a joint chain plus their sum C. States are laid out
/// (p, q) with q fastest; the shared denominator is the expected round
/// duration.
pub fn ipc_heterogeneous(pi: &[f64], w1: u32, w2: u32) -> (f64, f64, f64) {
    let (n1, n2) = (w1 as usize + 1, w2 as usize + 1);
    assert_eq!(pi.len(), n1 * n2, "pi must cover (w1+1)(w2+1) states");
    let mut num1 = 0.0;
    let mut num2 = 0.0;
    let mut denom = 0.0;
    for p in 0..n1 {
        for q in 0..n2 {
            let g = pi[p * n2 + q];
            let ready = (w1 as usize - p) + (w2 as usize - q);
            num1 += g * (w1 as usize - p) as f64;
            num2 += g * (w2 as usize - q) as f64;
            denom += g * (ready as f64).max(1.0);
        }
    }
    let ipc1 = num1 / denom;
    let ipc2 = num2 / denom;
    (ipc1, ipc2, ipc1 + ipc2)
}

/// Per-class IPCs for any built chain (handles block granularity and the
/// three-state extension): issued instructions over expected round
/// duration.
pub fn chain_ipcs(tm: &TransitionMatrix, ss: &SteadyState) -> Vec<f64> {
    let denom: f64 = ss
        .pi
        .iter()
        .zip(&tm.round_durations)
        .map(|(g, r)| g * r)
        .sum();
    (0..tm.classes.len())
        .map(|k| {
            let num: f64 = (0..tm.num_states()).map(|s| ss.pi[s] * tm.ready(s, k)).sum();
            num / denom
        })
        .collect()
}

/// Co-scheduling profit: CP = 1 - 1 / sum(cIPC_i / IPC_i).
pub fn co_scheduling_profit(solo: &[f64], concurrent: &[f64]) -> Result<f64> {
    if solo.len() != concurrent.len() || solo.is_empty() {
        return Err(Error::InvalidInput(
            "solo and concurrent IPC lists must be equal-length and non-empty".into(),
        ));
    }
    let mut sum = 0.0;
    for (&s, &c) in solo.iter().zip(concurrent) {
        if s <= 0.0 {
            return Err(Error::InvalidInput("solo IPC must be > 0".into()));
        }
        sum += c / s;
    }
    Ok(1.0 - 1.0 / sum)
}

/// Solo operating point of a kernel: blocks and warps at its maximum
/// occupancy (capped by the grid), and the model IPC there.
pub fn solo_operating_point(
    desc: &KernelDescriptor,
    cfg: &SMConfig,
) -> Result<(u32, u32, f64)> {
    let (max_blocks, _) = max_feasible_blocks(desc, cfg);
    let blocks = max_blocks.min(desc.grid_blocks.min(u32::MAX as u64) as u32).max(1);
    let warps = (blocks * desc.warps_per_block).min(cfg.max_active_warps);
    let tm = build_homogeneous_chain(desc, warps, cfg, Granularity::Warp)?;
    let ss = steady_state(&tm, 1e-12)?;
    let ipc = chain_ipcs(&tm, &ss)[0];
    Ok((blocks, warps, ipc))
}

/// A balanced co-residency choice for a pair of kernels.
#[derive(Debug, Clone)]
pub struct BalancedSplit {
    /// Co-resident blocks per SM for each kernel.
    pub per_sm_blocks: (u32, u32),
    /// Whole-machine slice sizes in blocks (per-SM counts x num_sms).
    pub slice_sizes: (u64, u64),
    pub warps: (u32, u32),
    pub ipc: (f64, f64),
    pub c: f64,
    pub delta_t: f64,
}

/// All per-SM block splits (b1, b2) of a pair that fit the SM's
/// registers, shared memory, block slots, and warp slots.
pub fn feasible_splits(
    d1: &KernelDescriptor,
    d2: &KernelDescriptor,
    cfg: &SMConfig,
) -> Vec<(u32, u32)> {
    let bmax1 = cfg.max_blocks_per_sm.min(cfg.max_active_warps / d1.warps_per_block.max(1));
    let bmax2 = cfg.max_blocks_per_sm.min(cfg.max_active_warps / d2.warps_per_block.max(1));
    let mut out = Vec::new();
    for b1 in 1..=bmax1.max(1) {
        for b2 in 1..=bmax2.max(1) {
            if pair_feasible(d1, b1, d2, b2, cfg) {
                out.push((b1, b2));
            }
        }
    }
    out
}

fn pair_feasible(
    d1: &KernelDescriptor,
    b1: u32,
    d2: &KernelDescriptor,
    b2: u32,
    cfg: &SMConfig,
) -> bool {
    let regs = b1 as u64 * d1.registers_per_thread as u64 * d1.threads_per_block() as u64
        + b2 as u64 * d2.registers_per_thread as u64 * d2.threads_per_block() as u64;
    let smem = b1 as u64 * d1.shared_mem_per_block + b2 as u64 * d2.shared_mem_per_block;
    let warps = b1 * d1.warps_per_block + b2 * d2.warps_per_block;
    regs <= cfg.max_registers
        && smem <= cfg.max_shared_mem
        && b1 + b2 <= cfg.max_blocks_per_sm
        && warps <= cfg.max_active_warps
}

/// Enumerate all feasible per-SM block splits of a pair and return the one
/// minimizing the execution-time difference
/// ΔT = |I1 P1 / IPC1 - I2 P2 / IPC2| with P_i the whole-slice size.
/// Ties break toward more total warps, then larger combined IPC.
pub fn balanced_slice_sizes(
    d1: &KernelDescriptor,
    d2: &KernelDescriptor,
    cfg: &SMConfig,
) -> Result<BalancedSplit> {
    let mut best: Option<BalancedSplit> = None;
    for (b1, b2) in feasible_splits(d1, d2, cfg) {
        {
            let w1 = b1 * d1.warps_per_block;
            let w2 = b2 * d2.warps_per_block;
            let tm = build_heterogeneous_chain(d1, w1, d2, w2, cfg)?;
            let ss = steady_state(&tm, 1e-12)?;
            let ipcs = chain_ipcs(&tm, &ss);
            let (ipc1, ipc2) = (ipcs[0], ipcs[1]);
            let s1 = b1 as u64 * cfg.num_sms as u64;
            let s2 = b2 as u64 * cfg.num_sms as u64;
            let t1 = d1.instructions_per_block as f64 * s1 as f64 / ipc1;
            let t2 = d2.instructions_per_block as f64 * s2 as f64 / ipc2;
            let cand = BalancedSplit {
                per_sm_blocks: (b1, b2),
                slice_sizes: (s1, s2),
                warps: (w1, w2),
                ipc: (ipc1, ipc2),
                c: ipc1 + ipc2,
                delta_t: (t1 - t2).abs(),
            };
            let better = match &best {
                None => true,
                Some(b) => {
                    let dt = cand.delta_t - b.delta_t;
                    if dt.abs() > 1e-9 * (1.0 + b.delta_t) {
                        dt < 0.0
                    } else {
                        let wt_cand = cand.warps.0 + cand.warps.1;
                        let wt_best = b.warps.0 + b.warps.1;
                        if wt_cand != wt_best {
                            wt_cand > wt_best
                        } else if (cand.c - b.c).abs() > 1e-9 * (1.0 + b.c) {
                            cand.c > b.c
                        } else {
                            // deterministic final tie-break: most balanced,
                            // then lowest first index
                            let skew = |s: &BalancedSplit| {
                                (s.per_sm_blocks.0 as i64 - s.per_sm_blocks.1 as i64).abs()
                            };
                            skew(&cand) < skew(b)
                        }
                    }
                }
            };
            if better {
                best = Some(cand);
            }
        }
    }
    best.ok_or_else(|| {
        Error::Infeasible(format!(
            "no co-resident split of {} and {} fits the SM",
            d1.name, d2.name
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::SMConfig;
    use approx::assert_relative_eq;

    fn cfg(base_latency: f64, slope: f64) -> SMConfig {
        SMConfig {
            max_active_warps: 48,
            max_registers: 1 << 20,
            max_shared_mem: 1 << 20,
            max_blocks_per_sm: 8,
            base_latency,
            bandwidth: 1.0,
            latency_slope: slope,
            verbatim_latency: false,
            uncoalesced_requests_per_instr: 32,
            warp_schedulers: 1,
            peak_ipc: 1.0,
            peak_mpc: 1.0,
            num_sms: 14,
            launch_overhead: 0,
        }
    }

    fn desc(rm: f64) -> KernelDescriptor {
        KernelDescriptor {
            name: "k".into(),
            grid_blocks: 1024,
            warps_per_block: 1,
            instructions_per_block: 1000,
            mem_instruction_ratio: rm,
            uncoalesced_fraction: 0.0,
            registers_per_thread: 8,
            shared_mem_per_block: 0,
            pur: Some(0.5),
            mur: Some(0.1),
            profile: None,
        }
    }

    #[test]
    fn latency_examples() {
        let c = cfg(400.0, 10.0);
        assert_relative_eq!(memory_latency(0.0, &c), 400.0);
        assert_relative_eq!(memory_latency(8.0, &c), 480.0);
        let flat = cfg(400.0, 0.0);
        assert_relative_eq!(memory_latency(17.0, &flat), 400.0);
    }

    #[test]
    fn warp_probs_formula() {
        let c = cfg(40.0, 0.0);
        let d = desc(0.0);
        let p = warp_transition_probs(&d, 5, 3.0, &c);
        assert_relative_eq!(p.r_to_ic, 0.0);
        assert_relative_eq!(p.r_to_r, 1.0);
        assert_relative_eq!(p.ic_to_r, 5.0 / 40.0);
        // all idle: round duration is one
        let p = warp_transition_probs(&d, 0, 8.0, &c);
        assert_relative_eq!(p.ic_to_r, 1.0 / 40.0);
    }

    #[test]
    fn single_warp_chain_matrix() {
        let c = cfg(40.0, 0.0);
        let d = desc(0.3);
        let tm = build_homogeneous_chain(&d, 1, &c, Granularity::Warp).unwrap();
        assert_eq!(tm.num_states(), 2);
        assert_relative_eq!(tm.p[0][0], 0.7);
        assert_relative_eq!(tm.p[0][1], 0.3);
        assert_relative_eq!(tm.p[1][0], 1.0 / 40.0);
        assert_relative_eq!(tm.p[1][1], 1.0 - 1.0 / 40.0);
    }

    #[test]
    fn zero_rm_row_absorbing() {
        let c = cfg(100.0, 5.0);
        let d = desc(0.0);
        let tm = build_homogeneous_chain(&d, 6, &c, Granularity::Warp).unwrap();
        assert_relative_eq!(tm.p[0][0], 1.0);
        for j in 1..tm.num_states() {
            assert_relative_eq!(tm.p[0][j], 0.0);
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let c = cfg(120.0, 7.0);
        for &(rm, u, w) in &[(0.2, 0.0, 8u32), (0.5, 0.3, 6), (0.9, 1.0, 5)] {
            let mut d = desc(rm);
            d.uncoalesced_fraction = u;
            let tm = build_homogeneous_chain(&d, w, &c, Granularity::Warp).unwrap();
            for row in &tm.p {
                let s: f64 = row.iter().sum();
                assert!((s - 1.0).abs() < 1e-12, "row sums to {s}");
            }
        }
    }

    #[test]
    fn heterogeneous_state_count_and_w2_zero() {
        let c = cfg(80.0, 2.0);
        let tm = build_heterogeneous_chain(&desc(0.2), 2, &desc(0.4), 2, &c).unwrap();
        assert_eq!(tm.num_states(), 9);
        assert!(build_heterogeneous_chain(&desc(0.2), 2, &desc(0.4), 0, &c).is_err());
    }

    #[test]
    fn steady_state_two_state_closed_form() {
        // W=1, Rm=1, L=9: balance gives pi = (0.1, 0.9).
        let c = cfg(9.0, 0.0);
        let tm = build_homogeneous_chain(&desc(1.0), 1, &c, Granularity::Warp).unwrap();
        let ss = steady_state(&tm, 1e-12).unwrap();
        assert!((ss.pi[0] - 0.1).abs() < 1e-9);
        assert!((ss.pi[1] - 0.9).abs() < 1e-9);
        assert_relative_eq!(ipc_homogeneous(&ss.pi, 1), 0.1, epsilon = 1e-9);
    }

    #[test]
    fn identity_matrix_flagged_non_unique() {
        let tm = TransitionMatrix {
            states: (0..3).map(|i| vec![(i, 0)]).collect(),
            p: vec![
                vec![1.0, 0.0, 0.0],
                vec![0.0, 1.0, 0.0],
                vec![0.0, 0.0, 1.0],
            ],
            round_durations: vec![1.0; 3],
            classes: vec![EntityClass {
                count: 2,
                rm: 0.0,
                uncoal: 0.0,
                issue: 1,
                weight_c: 1.0,
                weight_u: 1.0,
                three_state: false,
            }],
        };
        let ss = steady_state(&tm, 1e-12).unwrap();
        assert!(!ss.unique);
        for v in &ss.pi {
            assert_relative_eq!(*v, 1.0 / 3.0);
        }
    }

    #[test]
    fn non_stochastic_rejected() {
        let mut tm = build_homogeneous_chain(&desc(0.5), 2, &cfg(50.0, 0.0), Granularity::Warp)
            .unwrap();
        tm.p[0][0] += 0.5;
        assert!(steady_state(&tm, 1e-12).is_err());
    }

    #[test]
    fn ipc_closed_forms() {
        // Rm = 0 -> IPC = 1 exactly.
        let c = cfg(100.0, 3.0);
        let tm = build_homogeneous_chain(&desc(0.0), 8, &c, Granularity::Warp).unwrap();
        let ss = steady_state(&tm, 1e-12).unwrap();
        assert!((ipc_homogeneous(&ss.pi, 8) - 1.0).abs() < 1e-12);

        // W = 1 constant L: IPC = 1 / (1 + Rm L).
        let c = cfg(10.0, 0.0);
        let tm = build_homogeneous_chain(&desc(0.5), 1, &c, Granularity::Warp).unwrap();
        let ss = steady_state(&tm, 1e-12).unwrap();
        assert!((ipc_homogeneous(&ss.pi, 1) - 1.0 / 6.0).abs() < 1e-9);
    }

    #[test]
    fn heterogeneous_symmetry_and_lumpability() {
        let c = cfg(60.0, 4.0);
        let d = desc(0.3);
        let tm = build_heterogeneous_chain(&d, 3, &d, 3, &c).unwrap();
        let ss = steady_state(&tm, 1e-12).unwrap();
        let (i1, i2, ctot) = ipc_heterogeneous(&ss.pi, 3, 3);
        assert!((i1 - i2).abs() < 1e-9);

        let homo = build_homogeneous_chain(&d, 6, &c, Granularity::Warp).unwrap();
        let hss = steady_state(&homo, 1e-12).unwrap();
        assert!((ctot - ipc_homogeneous(&hss.pi, 6)).abs() < 1e-9);

        // matrix-level lumping by total idle count
        let (keys, lumped) = tm.lump_by(|s| s[0].0 + s[1].0);
        assert_eq!(keys, (0..=6).collect::<Vec<_>>());
        for (i, row) in lumped.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert!(
                    (v - homo.p[i][j]).abs() < 1e-12,
                    "lumped[{i}][{j}] = {v} vs {}",
                    homo.p[i][j]
                );
            }
        }
    }

    #[test]
    fn ipc_monotone_in_rm() {
        let c = cfg(80.0, 0.0);
        let mut last = f64::INFINITY;
        for i in 0..=10 {
            let rm = i as f64 / 10.0;
            let tm = build_homogeneous_chain(&desc(rm), 6, &c, Granularity::Warp).unwrap();
            let ss = steady_state(&tm, 1e-12).unwrap();
            let ipc = ipc_homogeneous(&ss.pi, 6);
            assert!(ipc <= last + 1e-12, "IPC increased at Rm={rm}");
            last = ipc;
        }
    }

    #[test]
    fn three_state_reduces_to_two_state() {
        let c = cfg(90.0, 6.0);
        let d = desc(0.4);
        let spec2 = ChainSpec::homogeneous(&d, 5, Granularity::Warp);
        let mut spec3 = spec2.clone();
        spec3.three_state = true;
        let tm2 = build_chain(&spec2, &c).unwrap();
        let tm3 = build_chain(&spec3, &c).unwrap();
        // restrict the three-state chain to its iu = 0 slice
        let idx: Vec<usize> = tm3
            .states
            .iter()
            .enumerate()
            .filter(|(_, s)| s[0].1 == 0)
            .map(|(i, _)| i)
            .collect();
        assert_eq!(idx.len(), tm2.num_states());
        for (a, &i3) in idx.iter().enumerate() {
            for (b, &j3) in idx.iter().enumerate() {
                assert!((tm3.p[i3][j3] - tm2.p[a][b]).abs() < 1e-12);
            }
        }
        let s2 = steady_state(&tm2, 1e-12).unwrap();
        let s3 = steady_state(&tm3, 1e-12).unwrap();
        let i2 = chain_ipcs(&tm2, &s2)[0];
        let i3 = chain_ipcs(&tm3, &s3)[0];
        assert!((i2 - i3).abs() < 1e-10);
    }

    #[test]
    fn block_granularity_chain_is_stochastic() {
        let c = cfg(150.0, 2.0);
        let mut d = desc(0.3);
        d.warps_per_block = 4;
        let tm = build_homogeneous_chain(&d, 16, &c, Granularity::Block).unwrap();
        assert_eq!(tm.num_states(), 5); // 4 blocks + 1
        for row in &tm.p {
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn profit_unit_cases() {
        assert_relative_eq!(
            co_scheduling_profit(&[0.4, 0.6], &[0.4, 0.6]).unwrap(),
            0.5
        );
        assert_relative_eq!(
            co_scheduling_profit(&[0.4, 0.6], &[0.2, 0.3]).unwrap(),
            0.0
        );
        assert_relative_eq!(co_scheduling_profit(&[0.4], &[0.4]).unwrap(), 0.0);
        assert!(co_scheduling_profit(&[0.0], &[0.4]).is_err());
    }

    #[test]
    fn balanced_split_symmetric_for_identical_kernels() {
        let c = cfg(60.0, 1.0);
        let mut d = desc(0.3);
        d.warps_per_block = 2;
        let split = balanced_slice_sizes(&d, &d, &c).unwrap();
        assert_eq!(split.per_sm_blocks.0, split.per_sm_blocks.1);
        assert!(split.delta_t < 1e-6);
        assert_eq!(
            split.slice_sizes.0,
            split.per_sm_blocks.0 as u64 * c.num_sms as u64
        );
    }

    #[test]
    fn balanced_split_tracks_instruction_ratio() {
        let c = cfg(60.0, 0.0);
        let mut d1 = desc(0.3);
        d1.name = "a".into();
        d1.warps_per_block = 2;
        d1.instructions_per_block = 2000;
        let mut d2 = d1.clone();
        d2.name = "b".into();
        d2.instructions_per_block = 1000;
        let split = balanced_slice_sizes(&d1, &d2, &c).unwrap();
        // brute-force optimality oracle over all feasible splits
        for b1 in 1..=4u32 {
            for b2 in 1..=4u32 {
                if b1 + b2 > c.max_blocks_per_sm
                    || (b1 + b2) * d1.warps_per_block > c.max_active_warps
                {
                    continue;
                }
                let (w1, w2) = (b1 * d1.warps_per_block, b2 * d2.warps_per_block);
                let tm = build_heterogeneous_chain(&d1, w1, &d2, w2, &c).unwrap();
                let ss = steady_state(&tm, 1e-12).unwrap();
                let ipcs = chain_ipcs(&tm, &ss);
                let t1 = d1.instructions_per_block as f64 * (b1 * c.num_sms) as f64 / ipcs[0];
                let t2 = d2.instructions_per_block as f64 * (b2 * c.num_sms) as f64 / ipcs[1];
                assert!(
                    split.delta_t <= (t1 - t2).abs() + 1e-9,
                    "({b1},{b2}) beats chosen {:?}",
                    split.per_sm_blocks
                );
            }
        }
    }

    #[test]
    fn balanced_split_infeasible_pair() {
        let mut c = cfg(60.0, 1.0);
        c.max_blocks_per_sm = 1;
        let d = desc(0.3);
        assert!(matches!(
            balanced_slice_sizes(&d, &d, &c),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn state_cap_enforced() {
        let c = cfg(60.0, 1.0);
        let spec = ChainSpec::heterogeneous(&desc(0.2), 20, &desc(0.3), 20);
        assert!(matches!(
            build_chain_capped(&spec, &c, 100),
            Err(Error::StateSpaceTooLarge { .. })
        ));
    }
}
