//! Runs the three-arm synthetic shift study.
//!
//! Usage: `synthetic_shift [ITERS] [SEEDS] [all|reduced]`.

use clfa_core::experiment::{arm_summary, run_arm, shift_data, with_strategies, Arm};
use clfa_core::{Strategy, SyntheticFactorSpec, TrainConfig};

fn main() -> clfa_core::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let iters: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let seeds: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3);
    let reduced = args.get(3).map(|s| s == "reduced").unwrap_or(false);
    let mut base = TrainConfig { max_iters: iters, ..TrainConfig::profile("synthetic")? };
    if reduced {
        base = with_strategies(&base, &Strategy::REDUCED_5);
    }
    let (train, test) = shift_data(&SyntheticFactorSpec::default())?;
    let mut results = Vec::new();
    for seed in 0..seeds {
        for arm in Arm::ALL {
            let t = std::time::Instant::now();
            let r = run_arm(&base, arm, seed, &train, &test, arm == Arm::Full)?;
            println!("{} seed {seed}: acc {:.4} fc {:?} fb {:?} ({:.1}s)", arm.name(), r.shifted_acc, r.probe_fc, r.probe_fb, t.elapsed().as_secs_f64());
            results.push(r);
        }
    }
    for arm in Arm::ALL {
        let (m, s) = arm_summary(&results, arm);
        println!("{}: mean {m:.4} std {s:.4}", arm.name());
    }
    Ok(())
}
