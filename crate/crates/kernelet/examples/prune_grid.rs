//! Sweep the pruning thresholds over a 10x10 grid and print how many of
//! the 28 benchmark pairs are pruned (too similar in both pipeline and
//! memory utilization to be worth co-scheduling) at each setting.

use kernelet::kernel::{load_descriptors, SMConfig};
use kernelet::scheduler::{prune_partition, PruneThresholds};

fn main() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let lib = load_descriptors(&root.join("data/benchmarks_c2050.json")).unwrap();
    let cfg: SMConfig =
        serde_json::from_str(&std::fs::read_to_string(root.join("data/sm_desk.json")).unwrap())
            .unwrap();

    print!("{:>8}", "am\\ap");
    for j in 1..=10 {
        print!("{:>5.1}", 0.1 * j as f64);
    }
    println!();
    for i in 1..=10 {
        let am = 0.015 * i as f64;
        print!("{am:>8.3}");
        for j in 1..=10 {
            let th = PruneThresholds::new(0.1 * j as f64, am).unwrap();
            let (pruned, _) = prune_partition(&lib, &cfg, th).unwrap();
            print!("{:>5}", pruned.len());
        }
        println!();
    }
}
