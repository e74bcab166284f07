//! Sweeps one ablation axis over a few seeds, reusing stage-1 checkpoints
//! from a cache, and prints mean and range per value.
//!
//! Usage: `cargo run --release --example ablation [n-demos|fusion-mode|candidate-scope] [cache-dir]`

use paff::harness::{run_ablation, AblationConfig, ArtifactCache, RunConfig};

fn main() -> paff::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let axis = args.next().unwrap_or_else(|| "n-demos".into()).parse()?;
    let cache = ArtifactCache::new(args.next().unwrap_or_else(|| "target/paff-cache".into()))?;
    let config = AblationConfig {
        axis,
        seeds: vec![0, 1, 2],
        ..AblationConfig::default()
    };
    let table = run_ablation(&RunConfig::default(), &config, &cache)?;
    for c in &table.cells {
        let h = c.held_out_success.expect("at least one run");
        let s = c.shift_accuracy.expect("at least one run");
        println!(
            "{:<18} held-out {:.3} [{:.3}, {:.3}]  shift accuracy {:.3}  unadapted {}  failed {}",
            c.label,
            h.mean,
            h.min,
            h.max,
            s.mean,
            c.unadapted,
            c.errors.len()
        );
    }
    Ok(())
}
