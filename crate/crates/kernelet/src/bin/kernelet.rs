//! Command-line entry point binding the library modules into
//! reproducible experiments. Every run logs its resolved configuration
//! to stderr; results go to stdout and, where applicable, `--out`.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use kernelet::harness::{generate_workload, run_policy, write_report, Mix, Policy, WorkloadSpec};
use kernelet::kernel::{load_descriptors, KernelDescriptor, SMConfig};
use kernelet::markov::{
    build_homogeneous_chain, chain_ipcs, solo_operating_point, steady_state, ChainWorkload,
    Granularity,
};
use kernelet::scheduler::{prune_pairs, prune_partition, ModelCache, PruneThresholds};
use kernelet::sim::{simulate_chain, DurationCache};
use kernelet::slicer::{emit_kernel_ir, make_slicing_plan, parse_kernel_ir, rectify_indices};
use kernelet::{Error, Result};

const PRESET_C2050: &str = include_str!("../../../../data/sm_c2050_virtual.json");
const PRESET_GTX680: &str = include_str!("../../../../data/sm_gtx680_virtual.json");
const PRESET_DESK: &str = include_str!("../../../../data/sm_desk.json");

#[derive(Parser)]
#[command(name = "kernelet", about = "Concurrent GPU-kernel co-scheduling laboratory")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Base RNG seed for every stochastic component.
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// SM preset: c2050-virtual, gtx680-virtual, desk, or a JSON file path.
    #[arg(long, global = true, default_value = "c2050-virtual")]
    sm_preset: String,
    /// Pipeline-utilization pruning threshold.
    #[arg(long, global = true, default_value_t = 0.4)]
    alpha_p: f64,
    /// Memory-utilization pruning threshold.
    #[arg(long, global = true, default_value_t = 0.1)]
    alpha_m: f64,
    /// Slicing overhead budget in percent.
    #[arg(long, global = true, default_value_t = 2.0)]
    p_percent: f64,
    /// Output directory for CSV/JSON artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Predict (IPC_1, IPC_2, C, CP) for a kernel pair.
    Model {
        /// Comma-separated pair of kernel names, e.g. MRIQ,PC.
        #[arg(long)]
        pair: String,
        #[arg(long)]
        descriptors: PathBuf,
    },
    /// Count pruned pairs; with --grid, sweep a 10x10 threshold grid.
    Prune {
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long)]
        grid: bool,
    },
    /// Rectify a .ptxl kernel and emit its slicing plan.
    Slice {
        kernel: PathBuf,
        #[arg(long, default_value_t = 8)]
        slice_size: u64,
    },
    /// Stochastic oracle run of one kernel's warp chain.
    Simulate {
        #[arg(long)]
        descriptors: PathBuf,
        /// Kernel name from the descriptor file.
        #[arg(long)]
        kernel: String,
        #[arg(long, default_value_t = 100_000)]
        rounds: u64,
    },
    /// Compare scheduling policies on a synthetic workload.
    Bench {
        #[arg(long)]
        descriptors: PathBuf,
        /// CI, MI, MIX, ALL, or a comma-separated name list.
        #[arg(long, default_value = "MIX")]
        mix: String,
        #[arg(long, default_value_t = 4)]
        instances: u32,
        /// Poisson arrival rate in arrivals per cycle.
        #[arg(long, default_value_t = 5e-5)]
        lambda: f64,
        /// Comma-separated policies: base, kernelet, opt, mc:N.
        #[arg(long, default_value = "base,kernelet,opt")]
        policies: String,
    },
    /// Model-vs-oracle sweep over warp count, memory ratio and latency.
    Validate {
        #[arg(long, default_value_t = 100_000)]
        rounds: u64,
    },
}

fn load_preset(name: &str) -> Result<SMConfig> {
    let text = match name {
        "c2050-virtual" => PRESET_C2050.to_string(),
        "gtx680-virtual" => PRESET_GTX680.to_string(),
        "desk" => PRESET_DESK.to_string(),
        path => std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?,
    };
    let cfg: SMConfig = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidInput(format!("bad SM preset {name}: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn find_kernel<'a>(lib: &'a [KernelDescriptor], name: &str) -> Result<&'a KernelDescriptor> {
    lib.iter()
        .find(|k| k.name == name)
        .ok_or_else(|| Error::InvalidInput(format!("unknown kernel {name:?}")))
}

fn write_out(dir: &Path, file: &str, text: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let path = dir.join(file);
    std::fs::write(&path, text).map_err(|e| Error::io(path.display().to_string(), e))?;
    Ok(path)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = load_preset(&cli.common.sm_preset)?;
    let th = PruneThresholds::new(cli.common.alpha_p, cli.common.alpha_m)?;
    eprintln!(
        "config: sm_preset={} seed={} alpha_p={} alpha_m={} p_percent={} out={}",
        cli.common.sm_preset,
        cli.common.seed,
        th.alpha_p,
        th.alpha_m,
        cli.common.p_percent,
        cli.common.out.display()
    );
    match cli.cmd {
        Cmd::Model { pair, descriptors } => {
            let lib = load_descriptors(&descriptors)?;
            let (a, b) = pair
                .split_once(',')
                .ok_or_else(|| Error::InvalidInput("--pair expects NAME,NAME".into()))?;
            let (d1, d2) = (find_kernel(&lib, a.trim())?, find_kernel(&lib, b.trim())?);
            let mut cache = ModelCache::default();
            let (split, cp) = cache.pair_eval(d1, d2, &cfg)?;
            let record = serde_json::json!({
                "pair": [d1.name, d2.name],
                "per_sm_blocks": [split.per_sm_blocks.0, split.per_sm_blocks.1],
                "slice_sizes": [split.slice_sizes.0, split.slice_sizes.1],
                "ipc_1": split.ipc.0,
                "ipc_2": split.ipc.1,
                "c": split.c,
                "cp": cp,
            });
            let text = serde_json::to_string_pretty(&record).unwrap();
            println!("{text}");
            write_out(&cli.common.out, "model.json", &text)?;
        }
        Cmd::Prune { descriptors, grid } => {
            let lib = load_descriptors(&descriptors)?;
            let mut text = String::new();
            if grid {
                text.push_str("alpha_m\\alpha_p");
                for j in 1..=10 {
                    text.push_str(&format!(",{:.1}", 0.1 * j as f64));
                }
                text.push('\n');
                for i in 1..=10 {
                    let am = 0.015 * i as f64;
                    text.push_str(&format!("{am:.3}"));
                    for j in 1..=10 {
                        let t = PruneThresholds::new(0.1 * j as f64, am)?;
                        let (pruned, _) = prune_partition(&lib, &cfg, t)?;
                        text.push_str(&format!(",{}", pruned.len()));
                    }
                    text.push('\n');
                }
            } else {
                let out = prune_pairs(&lib, &cfg, th)?;
                text = format!(
                    "pruned,survivors,relaxed\n{},{},{}\n",
                    out.pruned,
                    out.survivors.len(),
                    out.relaxed
                );
            }
            print!("{text}");
            write_out(&cli.common.out, "prune.csv", &text)?;
        }
        Cmd::Slice { kernel, slice_size } => {
            let src =
                std::fs::read_to_string(&kernel).map_err(|e| Error::io(kernel.display().to_string(), e))?;
            let ir = parse_kernel_ir(&src)?;
            let rectified = rectify_indices(&ir);
            let desc = KernelDescriptor {
                name: ir.name.clone(),
                grid_blocks: ir.grid_blocks(),
                warps_per_block: 1,
                instructions_per_block: ir.body.len().max(1) as u64,
                mem_instruction_ratio: 0.0,
                uncoalesced_fraction: 0.0,
                registers_per_thread: ir.declared_regs().len() as u32,
                shared_mem_per_block: 0,
                pur: Some(0.0),
                mur: Some(0.0),
                profile: None,
            };
            let plan = make_slicing_plan(&desc, slice_size)?;
            let text = emit_kernel_ir(&rectified);
            println!("{text}");
            let mut plan_csv = String::from("slice,first_block,blocks\n");
            for (i, (start, len)) in plan.slices.iter().enumerate() {
                plan_csv.push_str(&format!("{i},{start},{len}\n"));
            }
            print!("{plan_csv}");
            write_out(&cli.common.out, &format!("{}_rectified.ptxl", ir.name), &text)?;
            write_out(&cli.common.out, &format!("{}_plan.csv", ir.name), &plan_csv)?;
        }
        Cmd::Simulate {
            descriptors,
            kernel,
            rounds,
        } => {
            let lib = load_descriptors(&descriptors)?;
            let desc = find_kernel(&lib, &kernel)?;
            let (blocks, warps, model_ipc) = solo_operating_point(desc, &cfg)?;
            let r = simulate_chain(
                &[ChainWorkload {
                    desc: desc.clone(),
                    warps,
                }],
                &cfg,
                rounds,
                cli.common.seed,
            )?;
            let record = serde_json::json!({
                "kernel": desc.name,
                "resident_blocks": blocks,
                "warps": warps,
                "rounds": rounds,
                "model_ipc": model_ipc,
                "measured_ipc": r.ipc[0],
                "ipc_std_error": r.batch_stats[0].std_error,
                "total_cycles": r.total_cycles,
                "idle_cycles": r.idle_cycles,
                "seed": r.seed,
            });
            let text = serde_json::to_string_pretty(&record).unwrap();
            println!("{text}");
            write_out(&cli.common.out, "simulate.json", &text)?;
        }
        Cmd::Bench {
            descriptors,
            mix,
            instances,
            lambda,
            policies,
        } => {
            let lib = load_descriptors(&descriptors)?;
            let spec = WorkloadSpec {
                mix: mix.parse::<Mix>()?,
                instances,
                lambda,
                seed: cli.common.seed,
            };
            let arrivals = generate_workload(&spec, &lib)?;
            let mut cache = DurationCache::default();
            let mut reports = Vec::new();
            for p in policies.split(',') {
                let policy: Policy = p.trim().parse()?;
                let rep = run_policy(&policy, &arrivals, &cfg, th, cli.common.seed, &mut cache)?;
                println!(
                    "{:<10} makespan {:>14.0} cycles  co-schedules {:>4}",
                    rep.policy, rep.makespan, rep.co_schedules
                );
                reports.push(rep);
            }
            let files = write_report(&reports, &mix, &cli.common.out)?;
            for f in &files {
                eprintln!("wrote {}", f.display());
            }
            if reports.iter().all(|r| r.mc_samples.is_empty()) {
                eprintln!("no Monte Carlo policies requested; CDF table omitted");
            }
        }
        Cmd::Validate { rounds } => {
            let mut text = String::from("warps,mem_ratio,latency,model_ipc,sim_ipc,sigma,ok\n");
            let mut pass = 0;
            let mut total = 0;
            for &w in &[4u32, 8, 16] {
                for &rm in &[0.05, 0.2, 0.5] {
                    for &l in &[20.0, 80.0, 200.0] {
                        let mut c = cfg.clone();
                        c.base_latency = l;
                        c.latency_slope = 0.0;
                        c.max_active_warps = c.max_active_warps.max(w);
                        let desc = KernelDescriptor {
                            name: format!("sweep_w{w}"),
                            grid_blocks: 1,
                            warps_per_block: w,
                            instructions_per_block: 1,
                            mem_instruction_ratio: rm,
                            uncoalesced_fraction: 0.0,
                            registers_per_thread: 1,
                            shared_mem_per_block: 0,
                            pur: Some(0.0),
                            mur: Some(0.0),
                            profile: None,
                        };
                        let tm = build_homogeneous_chain(&desc, w, &c, Granularity::Warp)?;
                        let ss = steady_state(&tm, 1e-12)?;
                        let model = chain_ipcs(&tm, &ss).iter().sum::<f64>();
                        let r = simulate_chain(
                            &[ChainWorkload {
                                desc: desc.clone(),
                                warps: w,
                            }],
                            &c,
                            rounds,
                            cli.common.seed,
                        )?;
                        let sigma = r.batch_stats[0].std_error;
                        let ok = (r.ipc[0] - model).abs() <= 3.0 * sigma;
                        pass += ok as u32;
                        total += 1;
                        text.push_str(&format!(
                            "{w},{rm},{l},{model:.6},{:.6},{sigma:.6},{ok}\n",
                            r.ipc[0]
                        ));
                    }
                }
            }
            print!("{text}");
            println!("within 3 sigma: {pass}/{total}");
            write_out(&cli.common.out, "validate.csv", &text)?;
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
