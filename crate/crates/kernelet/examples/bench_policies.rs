//! Generate a Poisson workload over the mixed benchmark set and compare
//! the scheduling policies: FIFO consolidation (BASE), the model-driven
//! slice co-scheduler (KERNELET), greedy oracle search (OPT), and 200
//! random schedules (MC).

use kernelet::harness::{generate_workload, run_policy, Mix, Policy, WorkloadSpec};
use kernelet::kernel::{load_descriptors, SMConfig};
use kernelet::scheduler::DEFAULT_THRESHOLDS;
use kernelet::sim::DurationCache;

fn main() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../..");
    let lib = load_descriptors(&root.join("data/benchmarks_desk.json")).unwrap();
    let cfg: SMConfig =
        serde_json::from_str(&std::fs::read_to_string(root.join("data/sm_desk.json")).unwrap())
            .unwrap();

    let spec = WorkloadSpec {
        mix: Mix::Mixed,
        instances: 8,
        lambda: 1.0 / 1_000.0,
        seed: 7,
    };
    let arrivals = generate_workload(&spec, &lib).unwrap();
    println!("{} kernel instances", arrivals.len());

    let mut cache = DurationCache::default();
    let mut base = None;
    for policy in [Policy::Base, Policy::Kernelet, Policy::Opt, Policy::Mc(200)] {
        let rep = run_policy(&policy, &arrivals, &cfg, DEFAULT_THRESHOLDS, 7, &mut cache).unwrap();
        let gain = base
            .map(|b: f64| format!("  ({:+.1}% vs BASE)", (b - rep.makespan) / b * 100.0))
            .unwrap_or_default();
        base = base.or(Some(rep.makespan));
        println!(
            "{:<9} makespan {:>12.0} cycles, {:>3} co-schedules{gain}",
            rep.policy, rep.makespan, rep.co_schedules
        );
    }
}
