//! Acceptance suite: every criterion prints one PASS/FAIL line.
//! Run with `cargo test --test acceptance -- --nocapture` to see them all.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use kernelet::harness::{
    generate_workload, mc_fraction_below, run_policy, Mix, Policy, WorkloadSpec,
};
use kernelet::kernel::{load_descriptors, KernelDescriptor, SMConfig};
use kernelet::markov::{
    build_heterogeneous_chain, build_homogeneous_chain, chain_ipcs, co_scheduling_profit,
    ipc_homogeneous, steady_state, ChainWorkload, Granularity,
};
use kernelet::scheduler::{prune_partition, PruneThresholds, DEFAULT_THRESHOLDS};
use kernelet::sim::{simulate_chain, DurationCache};
use kernelet::slicer::{
    emit_kernel_ir, interpret_kernel, make_slicing_plan, parse_kernel_ir, rectify_indices,
    run_sliced,
};

fn data_path(file: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(file)
}

fn corpus_path(file: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../corpus")
        .join(file)
}

fn desk_cfg() -> SMConfig {
    let text = std::fs::read_to_string(data_path("sm_desk.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

/// The runtime budgets are per-criterion wall-clock bounds, so the
/// criteria take turns instead of contending for cores.
static SERIAL: std::sync::Mutex<()> = std::sync::Mutex::new(());

fn serial() -> std::sync::MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(ok: bool, name: &str, detail: &str) {
    println!("[{}] {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "{name}: {detail}");
}

fn bare_kernel(name: &str, warps: u32, rm: f64) -> KernelDescriptor {
    KernelDescriptor {
        name: name.into(),
        grid_blocks: 1,
        warps_per_block: warps,
        instructions_per_block: 1,
        mem_instruction_ratio: rm,
        uncoalesced_fraction: 0.0,
        registers_per_thread: 1,
        shared_mem_per_block: 0,
        pur: Some(0.0),
        mur: Some(0.0),
        profile: None,
    }
}

/// Expected pruned-pair counts for the bundled eight-benchmark file:
/// rows are alpha_m = 0.015..0.15 step 0.015, columns alpha_p = 0.1..1.0
/// step 0.1.
const EXPECTED_GRID: [[usize; 10]; 10] = [
    [0, 0, 2, 2, 3, 4, 4, 4, 4, 4],
    [0, 2, 5, 6, 7, 8, 9, 9, 9, 9],
    [0, 3, 7, 8, 9, 10, 11, 11, 11, 11],
    [1, 4, 8, 9, 12, 13, 15, 15, 15, 15],
    [1, 4, 8, 9, 12, 13, 15, 15, 15, 15],
    [1, 4, 8, 9, 12, 13, 15, 15, 16, 16],
    [1, 4, 9, 10, 14, 15, 18, 18, 20, 20],
    [2, 6, 11, 12, 17, 18, 21, 22, 24, 24],
    [2, 6, 11, 12, 17, 19, 22, 23, 25, 26],
    [2, 6, 11, 13, 18, 20, 23, 24, 27, 28],
];

#[test]
fn acceptance_1_pruning_grid() {
    let _guard = serial();
    let start = std::time::Instant::now();
    let lib = load_descriptors(&data_path("benchmarks_c2050.json")).unwrap();
    let cfg = desk_cfg();
    let mut mismatches = 0;
    for (i, row) in EXPECTED_GRID.iter().enumerate() {
        let am = 0.015 * (i + 1) as f64;
        for (j, &want) in row.iter().enumerate() {
            let ap = 0.1 * (j + 1) as f64;
            let th = PruneThresholds::new(ap, am).unwrap();
            let (pruned, _) = prune_partition(&lib, &cfg, th).unwrap();
            if pruned.len() != want {
                mismatches += 1;
            }
        }
    }
    // spot checks with analytically counted cells
    for (ap, am, want) in [(0.3, 0.015, 2usize), (0.5, 0.03, 7), (1.0, 0.15, 28)] {
        let th = PruneThresholds::new(ap, am).unwrap();
        let (pruned, _) = prune_partition(&lib, &cfg, th).unwrap();
        if pruned.len() != want {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    report(
        mismatches == 0 && elapsed.as_secs_f64() < 1.0,
        "1 pruning grid",
        &format!(
            "{}/100 cells match, 3 spot checks, {:.3}s",
            100 - mismatches.min(100),
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn acceptance_2_steady_state() {
    let _guard = serial();
    let start = std::time::Instant::now();
    let cfg = desk_cfg();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst_residual = 0.0f64;
    let mut worst_sum = 0.0f64;
    let mut worst_agree = 0.0f64;
    let mut neg = 0usize;
    for i in 0..200 {
        let w = rng.gen_range(1..=24u32);
        let rm = rng.gen_range(0.01..0.95);
        let u = if i % 3 == 0 { rng.gen_range(0.0..1.0) } else { 0.0 };
        let mut c = cfg.clone();
        c.base_latency = rng.gen_range(5.0..300.0);
        c.latency_slope = rng.gen_range(0.0..4.0);
        c.max_active_warps = 24;
        let mut d = bare_kernel("rand", w, rm);
        d.uncoalesced_fraction = u;
        let tm = build_homogeneous_chain(&d, w, &c, Granularity::Warp).unwrap();
        let ss = steady_state(&tm, 1e-12).unwrap();
        worst_residual = worst_residual.max(ss.residual);
        worst_sum = worst_sum.max((ss.pi.iter().sum::<f64>() - 1.0).abs());
        neg += ss.pi.iter().filter(|&&p| p < 0.0).count();
        if let Some(lin) = &ss.pi_linear {
            let diff = ss
                .pi_power
                .iter()
                .zip(lin)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            worst_agree = worst_agree.max(diff);
        }
    }
    let elapsed = start.elapsed();
    let ok = worst_residual <= 1e-9
        && worst_sum <= 1e-9
        && neg == 0
        && worst_agree <= 1e-8
        && elapsed.as_secs_f64() < 30.0;
    report(
        ok,
        "2 steady state",
        &format!(
            "200 chains, max residual {worst_residual:.2e}, max |sum-1| {worst_sum:.2e}, \
             max power/linear gap {worst_agree:.2e}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn acceptance_3_closed_forms() {
    let _guard = serial();
    let mut cfg = desk_cfg();
    cfg.latency_slope = 0.0;
    let mut worst_zero = 0.0f64;
    for w in 1..=24u32 {
        let d = bare_kernel("compute", w, 0.0);
        let tm = build_homogeneous_chain(&d, w, &cfg, Granularity::Warp).unwrap();
        let ss = steady_state(&tm, 1e-13).unwrap();
        let ipc: f64 = chain_ipcs(&tm, &ss).iter().sum();
        worst_zero = worst_zero.max((ipc - 1.0).abs());
    }
    let mut worst_single = 0.0f64;
    let mut points = 0;
    for rm in [0.05, 0.1, 0.25, 0.5, 0.9] {
        for l in [5.0, 20.0, 80.0, 200.0] {
            let mut c = cfg.clone();
            c.base_latency = l;
            let d = bare_kernel("mono", 1, rm);
            let tm = build_homogeneous_chain(&d, 1, &c, Granularity::Warp).unwrap();
            let ss = steady_state(&tm, 1e-13).unwrap();
            let ipc: f64 = chain_ipcs(&tm, &ss).iter().sum();
            let expect = 1.0 / (1.0 + rm * l);
            worst_single = worst_single.max((ipc - expect).abs());
            points += 1;
        }
    }
    let ok = worst_zero <= 1e-12 && worst_single <= 1e-9 && points == 20;
    report(
        ok,
        "3 closed forms",
        &format!(
            "no-memory gap {worst_zero:.2e} (W<=24), single-warp gap {worst_single:.2e} \
             over {points} (ratio, latency) points"
        ),
    );
}

#[test]
fn acceptance_4_lumpability() {
    let _guard = serial();
    let cfg = desk_cfg();
    let mut worst_entry = 0.0f64;
    let mut worst_ipc = 0.0f64;
    for w in [4u32, 8, 12] {
        let d = bare_kernel("same", 1, 0.3);
        let homo = build_homogeneous_chain(&d, w, &cfg, Granularity::Warp).unwrap();
        let hss = steady_state(&homo, 1e-12).unwrap();
        let hipc = ipc_homogeneous(&hss.pi, w);
        for p in 1..w {
            let q = w - p;
            let het = build_heterogeneous_chain(&d, p, &d, q, &cfg).unwrap();
            let (keys, lumped) = het.lump_by(|s| s.iter().map(|&(a, b)| a + b).sum::<u32>());
            assert_eq!(keys.len(), homo.num_states());
            for (i, row) in lumped.iter().enumerate() {
                for (j, &v) in row.iter().enumerate() {
                    worst_entry = worst_entry.max((v - homo.p[i][j]).abs());
                }
            }
            let ss = steady_state(&het, 1e-12).unwrap();
            let c: f64 = chain_ipcs(&het, &ss).iter().sum();
            worst_ipc = worst_ipc.max((c - hipc).abs());
        }
    }
    let ok = worst_entry <= 1e-12 && worst_ipc <= 1e-9;
    report(
        ok,
        "4 lumpability",
        &format!("max matrix-entry gap {worst_entry:.2e}, max throughput gap {worst_ipc:.2e}"),
    );
}

#[test]
fn acceptance_5_model_vs_oracle() {
    let _guard = serial();
    let start = std::time::Instant::now();
    let mut pass = 0;
    let mut total = 0;
    for &w in &[4u32, 8, 16] {
        for &rm in &[0.05, 0.2, 0.5] {
            for &l in &[20.0, 80.0, 200.0] {
                let mut c = desk_cfg();
                c.base_latency = l;
                c.latency_slope = 0.0;
                let d = bare_kernel("sweep", w, rm);
                let tm = build_homogeneous_chain(&d, w, &c, Granularity::Warp).unwrap();
                let ss = steady_state(&tm, 1e-12).unwrap();
                let model: f64 = chain_ipcs(&tm, &ss).iter().sum();
                let r = simulate_chain(
                    &[ChainWorkload {
                        desc: d.clone(),
                        warps: w,
                    }],
                    &c,
                    100_000,
                    7,
                )
                .unwrap();
                let sigma = r.batch_stats[0].std_error;
                if (r.ipc[0] - model).abs() <= 3.0 * sigma {
                    pass += 1;
                }
                total += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let ok = pass >= 26 && total == 27 && elapsed.as_secs_f64() < 120.0;
    report(
        ok,
        "5 model vs oracle",
        &format!("{pass}/{total} cells within 3 sigma, {:.1}s", elapsed.as_secs_f64()),
    );
}

struct CorpusCase {
    file: &'static str,
    args: Vec<u32>,
    mem_bytes: usize,
    init: fn(&mut [u8]),
}

fn u32_write(mem: &mut [u8], index: usize, v: u32) {
    mem[index * 4..index * 4 + 4].copy_from_slice(&v.to_le_bytes());
}

fn corpus_cases() -> Vec<CorpusCase> {
    vec![
        CorpusCase {
            file: "matrix_add.ptxl",
            args: vec![0, 262_144, 524_288, 256],
            mem_bytes: 786_432,
            init: |m| {
                for i in 0..65_536 {
                    u32_write(m, i, i as u32 * 3 + 1);
                    u32_write(m, 65_536 + i, i as u32 * 7 + 2);
                }
            },
        },
        CorpusCase {
            file: "stencil.ptxl",
            args: vec![0, 4096, 1024],
            mem_bytes: 8192,
            init: |m| {
                for i in 0..1024 {
                    u32_write(m, i, (i as u32).wrapping_mul(2654435761));
                }
            },
        },
        CorpusCase {
            file: "pointer_chase.ptxl",
            args: vec![0, 128, 7],
            mem_bytes: 256,
            init: |m| {
                for i in 0..32u32 {
                    u32_write(m, i as usize, (i
* 11 + 5) % 32);
                }
            },
        },
        CorpusCase {
            file: "copy_const.ptxl",
            args: vec![0, 0xDEAD_BEEF],
            mem_bytes: 32,
            init: |_| {},
        },
    ]
}

#[test]
fn acceptance_6_slicer_equivalence() {
    let _guard = serial();
    let start = std::time::Instant::now();
    let mut checked = 0;
    let mut failures = 0;
    let mut reg_count_ok = true;
    for case in corpus_cases() {
        let src = std::fs::read_to_string(corpus_path(case.file)).unwrap();
        let ir = parse_kernel_ir(&src).unwrap();
        let rectified = rectify_indices(&ir);
        if case.file == "matrix_add.ptxl"
            && rectified.declared_regs().len() != ir.declared_regs().len()
        {
            reg_count_ok = false;
        }
        // round-trip of the rectified text must be exact
        assert_eq!(
            parse_kernel_ir(&emit_kernel_ir(&rectified)).unwrap(),
            rectified
        );
        let grid = ir.grid_dims;
        let blocks = ir.grid_blocks();
        let mut reference = vec![0u8; case.mem_bytes];
        (case.init)(&mut reference);
        interpret_kernel(&ir, grid, &case.args, &mut reference).unwrap();
        let desc = bare_kernel("corpus", 1, 0.0);
        for size in [1u64, 2, 4, 8, 16, 32, 64, 128, 256] {
            if size > blocks {
                continue;
            }
            let mut d = desc.clone();
            d.grid_blocks = blocks;
            let plan = make_slicing_plan(&d, size).unwrap();
            let mut mem = vec![0u8; case.mem_bytes];
            (case.init)(&mut mem);
            run_sliced(&rectified, grid, &plan, &case.args, &mut mem).unwrap();
            checked += 1;
            if mem != reference {
                failures += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let ok = failures == 0 && reg_count_ok && elapsed.as_secs_f64() < 60.0;
    report(
        ok,
        "6 slicer equivalence",
        &format!(
            "{checked} kernel/slice-size combinations bit-identical ({failures} failures), \
             register count preserved: {reg_count_ok}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    );
}

#[test]
fn acceptance_7_profit_unit_checks() {
    let _guard = serial();
    let half = co_scheduling_profit(&[0.4, 0.6], &[0.4, 0.6]).unwrap();
    let zero = co_scheduling_profit(&[0.4, 0.6], &[0.2, 0.3]).unwrap();
    let solo = co_scheduling_profit(&[0.4], &[0.4]).unwrap();
    let ok = half == 0.5 && zero == 0.0 && solo == 0.0;
    report(
        ok,
        "7 profit unit checks",
        &format!("equal-rate pair {half}, half-rate pair {zero}, single kernel {solo}"),
    );
}

#[test]
fn acceptance_8_policy_dominance() {
    let _guard = serial();
    let start = std::time::Instant::now();
    let cfg = desk_cfg();
    let lib = load_descriptors(&data_path("benchmarks_desk.json")).unwrap();
    let mut ok = true;
    let mut lines = Vec::new();
    for seed in 1..=5u64 {
        let spec = WorkloadSpec {
            mix: Mix::Mixed,
            instances: 20,
            lambda: 1.0 / 1_000.0,
            seed,
        };
        let arrivals = generate_workload(&spec, &lib).unwrap();
        let mut cache = DurationCache::default();
        let base = run_policy(&Policy::Base, &arrivals, &cfg, DEFAULT_THRESHOLDS, seed, &mut cache)
            .unwrap();
        let kern = run_policy(
            &Policy::Kernelet,
            &arrivals,
            &cfg,
            DEFAULT_THRESHOLDS,
            seed,
            &mut cache,
        )
        .unwrap();
        let opt = run_policy(&Policy::Opt, &arrivals, &cfg, DEFAULT_THRESHOLDS, seed, &mut cache)
            .unwrap();
        let mc = run_policy(
            &Policy::Mc(1000),
            &arrivals,
            &cfg,
            DEFAULT_THRESHOLDS,
            seed,
            &mut cache,
        )
        .unwrap();
        let frac = mc_fraction_below(&mc.mc_samples, kern.makespan);
        let dominance = opt.makespan <= kern.makespan && kern.makespan <= base.makespan;
        let within = kern.makespan <= opt.makespan * 1.15;
        let rare = frac < 0.05;
        ok &= dominance && within && rare;
        lines.push(format!(
            "seed {seed}: OPT {:.0} <= KERNELET {:.0} <= BASE {:.0} ({dominance}), \
             KERNELET/OPT {:.3} (<=1.15: {within}), MC below {:.1}% (<5%: {rare})",
            opt.makespan,
            kern.makespan,
            base.makespan,
            kern.makespan / opt.makespan,
            frac * 100.0
        ));
    }
    let elapsed = start.elapsed();
    ok &= elapsed.as_secs_f64() < 600.0;
    report(
        ok,
        "8 policy dominance",
        &format!("{} | {:.0}s", lines.join(" ; "), elapsed.as_secs_f64()),
    );
}

#[test]
fn acceptance_9_plan_coverage() {
    let _guard = serial();
    let cfg = desk_cfg();
    let lib = load_descriptors(&data_path("benchmarks_desk.json")).unwrap();
    let mut violations = 0;
    let mut audited = 0;
    for seed in [1u64, 2, 3] {
        let spec = WorkloadSpec {
            mix: Mix::All,
            instances: 3,
            lambda: 1.0 / 10_000.0,
            seed,
        };
        let arrivals = generate_workload(&spec, &lib).unwrap();
        for policy in [Policy::Base, Policy::Kernelet, Policy::Opt, Policy::Mc(5)] {
            let mut cache = DurationCache::default();
            let rep = run_policy(&policy, &arrivals, &cfg, DEFAULT_THRESHOLDS, seed, &mut cache)
                .unwrap();
            let mut scheduled: std::collections::HashMap<String, u64> = Default::default();
            for cs in &rep.plan.co_schedules {
                *scheduled.entry(cs.kernel_1.name.clone()).or_default() += cs.size_1;
                if let Some(k2) = &cs.kernel_2 {
                    *scheduled.entry(k2.name.clone()).or_default() += cs.size_2;
                }
            }
            for a in &arrivals {
                audited += 1;
                if scheduled.get(&a.desc.name).copied().unwrap_or(0) != a.desc.grid_blocks {
                    violations += 1;
                }
            }
        }
    }
    report(
        violations == 0,
        "9 plan coverage",
        &format!("{audited} kernel instances audited across policies, {violations} violations"),
    );
}
