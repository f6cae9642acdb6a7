//! Predict the throughput of co-scheduling a compute-heavy kernel with a
//! memory-heavy one: balanced slice sizes, per-kernel IPC, total
//! throughput C, and the co-scheduling profit CP.

use kernelet::kernel::{load_descriptors, SMConfig};
use kernelet::scheduler::ModelCache;

fn main() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let lib = load_descriptors(&root.join("data/benchmarks_desk.json")).unwrap();
    let cfg: SMConfig =
        serde_json::from_str(&std::fs::read_to_string(root.join("data/sm_desk.json")).unwrap())
            .unwrap();

    let tea = lib.iter().find(|k| k.name == "TEA").unwrap();
    let sad = lib.iter().find(|k| k.name == "SAD").unwrap();

    let mut cache = ModelCache::default();
    let (split, cp) = cache.pair_eval(tea, sad, &cfg).unwrap();
    println!("pair        : {} + {}", tea.name, sad.name);
    println!("blocks/SM   : {:?}", split.per_sm_blocks);
    println!("slice sizes : {:?}", split.slice_sizes);
    println!("warps       : {:?}", split.warps);
    println!(
        "IPC         : {:.4} + {:.4} = C {:.4}",
        split.ipc.0, split.ipc.1, split.c
    );
    println!("profit CP   : {cp:.4}");
}
