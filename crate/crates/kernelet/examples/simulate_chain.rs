//! Run the stochastic warp-state oracle on one kernel and compare the
//! measured IPC (with batch-means error bars) against the analytical
//! steady-state prediction.

use kernelet::kernel::{load_descriptors, SMConfig};
use kernelet::markov::solo_operating_point;
use kernelet::sim::simulate_chain;
use kernelet::markov::ChainWorkload;

fn main() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let lib = load_descriptors(&root.join("data/benchmarks_desk.json")).unwrap();
    let cfg: SMConfig =
        serde_json::from_str(&std::fs::read_to_string(root.join("data/sm_desk.json")).unwrap())
            .unwrap();

    for name in ["TEA", "PC"] {
        let desc = lib.iter().find(|k| k.name == name).unwrap();
        let (blocks, warps, model_ipc) = solo_operating_point(desc, &cfg).unwrap();
        let r = simulate_chain(
            &[ChainWorkload {
                desc: desc.clone(),
                warps,
            }],
            &cfg,
            200_000,
            1,
        )
        .unwrap();
        println!(
            "{name:<4} {blocks} blocks/SM, {warps} warps: model IPC {model_ipc:.4}, \
             measured {:.4} +/- {:.4}",
            r.ipc[0], r.batch_stats[0].std_error
        );
    }
}
