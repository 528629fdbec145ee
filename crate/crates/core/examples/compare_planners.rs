//! Paired comparison of the blended planner against the single-source
//! baseline on a scenario, over a range of seeds.
//!
//! ```text
//! cargo run --release --example compare_planners -- scenarios/benchmark.json 10
//! ```

use std::path::Path;

use mixplan::io::load_scenario;
use mixplan::sim::{run_scenario, Algorithm};

fn main() {
    let mut args = std::env::args().skip(1);
    let scenario = args
        .next()
        .unwrap_or_else(|| "scenarios/benchmark.json".to_string());
    let runs: u64 = args.next().map(|s| s.parse().expect("run count")).unwrap_or(10);

    let base = load_scenario(Path::new(&scenario))
        .expect("scenario loads")
        .config;
    let mut blended = Vec::new();
    let mut binary = Vec::new();
    println!("seed  blended parked/attp      binary parked/attp");
    for seed in 1..=runs {
        let mut cfg = base.clone();
        cfg.seed = seed;
        cfg.algorithm = Algorithm::Composed;
        let mc = run_scenario(&cfg).expect("run");
        cfg.algorithm = Algorithm::Binary;
        let mb = run_scenario(&cfg).expect("run");
        println!(
            "{seed:>4}  {:>3}/{:<3} {:>8.2}      {:>3}/{:<3} {:>8.2}",
            mc.parked, mc.total, mc.attp_mean, mb.parked, mb.total, mb.attp_mean
        );
        blended.push(mc.attp_mean);
        binary.push(mb.attp_mean);
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (a, b) = (mean(&blended), mean(&binary));
    println!("paired mean time-to-park: blended {a:.2}, single-source {b:.2}");
    if a < b {
        println!("blending reduced it by {:.1}%", (1.0 - a / b) * 100.0);
    }
}
