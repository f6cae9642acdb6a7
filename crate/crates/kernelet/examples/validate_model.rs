//! Model-vs-oracle sweep: for a grid of warp counts, memory instruction
//! ratios and latencies, check that the oracle simulator's measured IPC
//! falls within three standard errors of the analytical prediction.

use kernelet::kernel::{KernelDescriptor, SMConfig};
use kernelet::markov::{
    build_homogeneous_chain, chain_ipcs, steady_state, ChainWorkload, Granularity,
};
use kernelet::sim::simulate_chain;

fn main() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let mut cfg: SMConfig =
        serde_json::from_str(&std::fs::read_to_string(root.join("data/sm_desk.json")).unwrap())
            .unwrap();
    cfg.latency_slope = 0.0;

    let mut pass = 0;
    let mut total = 0;
    println!(
        "{:>5} {:>6} {:>7} {:>10} {:>10} {:>9} ok",
        "warps", "ratio", "latency", "model", "measured", "sigma"
    );
    for w in [4u32, 8, 16] {
        for rm in [0.05, 0.2, 0.5] {
            for l in [20.0, 80.0, 200.0] {
                cfg.base_latency = l;
                let desc = KernelDescriptor {
                    name: "sweep".into(),
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
                let tm = build_homogeneous_chain(&desc, w, &cfg, Granularity::Warp).unwrap();
                let ss = steady_state(&tm, 1e-12).unwrap();
                let model: f64 = chain_ipcs(&tm, &ss).iter().sum();
                let r = simulate_chain(
                    &[ChainWorkload {
                        desc: desc.clone(),
                        warps: w,
                    }],
                    &cfg,
                    100_000,
                    1,
                )
                .unwrap();
                let sigma = r.batch_stats[0].std_error;
                let ok = (r.ipc[0] - model).abs() <= 3.0 * sigma;
                pass += ok as u32;
                total += 1;
                println!(
                    "{w:>5} {rm:>6.2} {l:>7.0} {model:>10.5} {:>10.5} {sigma:>9.5} {ok}",
                    r.ipc[0]
                );
            }
        }
    }
    println!("within 3 sigma: {pass}/{total}");
}
