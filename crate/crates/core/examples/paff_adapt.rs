//! Adapts a stage-1 policy to the compositional task: plays 40 demos on
//! put-shapes-in-bowls scenes, relabels them, fine-tunes, and compares the
//! frozen and adapted policies.
//!
//! Usage: `cargo run --release --example paff_adapt [seed] [cache-dir]`

use paff::grammar::Family;
use paff::harness::{
    calibrate, candidate_set, evaluate, ArtifactCache, CalibrationConfig, EvalConfig,
    PolicyStageConfig, Protocol, RelabelerStageConfig,
};
use paff::paff::{run_paff, LabelSource, PaffConfig, PaffInputs};
use paff::world::{Renderer, WorldSplits};

fn main() -> paff::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let cache = ArtifactCache::new(args.next().unwrap_or_else(|| "target/paff-cache".into()))?;
    let splits = WorldSplits::default();
    let renderer = Renderer::default();

    let policy = cache.policy(&PolicyStageConfig::default(), &splits, &renderer, seed)?;
    let relabeler = cache.relabeler(&RelabelerStageConfig::default(), &splits, &renderer, seed)?;
    let candidates = candidate_set(&relabeler, &splits)?;
    let cal = calibrate(
        &relabeler,
        &candidates,
        &CalibrationConfig::default(),
        &splits,
        &renderer,
        seed,
    )?;
    println!(
        "theta {:.3} (validation precision {:.4})",
        cal.theta, cal.precision
    );

    let eval = EvalConfig::default();
    let baseline = evaluate(&policy, &eval, &splits, &renderer, seed ^ 0xE7A1)?;
    for source in [LabelSource::Model, LabelSource::Oracle] {
        let mut config = PaffConfig::default();
        config.relabel.source = source;
        let inputs = PaffInputs {
            policy: &policy,
            relabeler: &relabeler,
            candidates: &candidates,
            theta: cal.theta,
            stage1: &[],
        };
        let out = run_paff(inputs, &config, &splits, &renderer, seed)?;
        let adapted = evaluate(&out.policy, &eval, &splits, &renderer, seed ^ 0xE7A1)?;
        let r = &out.report.relabel;
        println!(
            "{source:?}: kept {}/{} precision {:?} dropped precision {:?}",
            r.kept, r.total, r.kept_precision, r.dropped_precision
        );
        for family in Family::PLACEMENT {
            println!(
                "  {family:<22} B {:.3} -> {:.3}   A {:.3} -> {:.3}",
                baseline.success(family, Protocol::B).unwrap(),
                adapted.success(family, Protocol::B).unwrap(),
                baseline.success(family, Protocol::A).unwrap(),
                adapted.success(family, Protocol::A).unwrap(),
            );
        }
    }
    Ok(())
}
