//! Pretrains the relabeler on captioned frames, trains its temporal adapter
//! on expert transitions, then reports retrieval accuracy on held-out
//! seen-family transitions, the compositional family and the held-out theme,
//! and calibrates the acceptance threshold.
//!
//! Usage: `cargo run --release --example relabeler [seed] [fusion]`

use std::time::Instant;

use paff::grammar::{enumerate_all_shapes, Family};
use paff::relabeler::{
    calibrate_threshold, caption_dataset, evaluate_retrieval, train_relabeler, transition_dataset,
    CandidateSet, FusionMode, RelabelerConfig, RelabelerModel, RelabelerTrainConfig,
};
use paff::world::{derive_rng, Renderer, WorldSplits};

fn main() -> paff::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let fusion: FusionMode = args
        .next()
        .and_then(|s| s.parse().ok())
        .unwrap_or(FusionMode::TemporalAdapter);
    let splits = WorldSplits::default();
    let renderer = Renderer::default();
    let seen = [Family::PackShapes, Family::PutBlocksInBowls];

    let captions = caption_dataset(&splits, &[0, 1, 2, 3], 8, seed)?;
    let train = transition_dataset(&seen, 100, 5, &splits.seen_themes, &splits, seed)?;
    println!(
        "{} captions, {} training transitions",
        captions.len(),
        train.len()
    );

    let config = RelabelerConfig {
        fusion,
        ..Default::default()
    };
    let model = RelabelerModel::new(config, &mut derive_rng(seed, "relabeler/init"))?;
    let t = Instant::now();
    let out = train_relabeler(
        model,
        &captions,
        &train,
        &renderer,
        &RelabelerTrainConfig::default(),
        seed,
    )?;
    println!(
        "trained in {:.1}s; phase A loss {:.4}, phase B loss {:.4}",
        t.elapsed().as_secs_f64(),
        out.phase_a_losses.last().unwrap_or(&f64::NAN),
        out.phase_b_losses.last().unwrap_or(&f64::NAN),
    );

    let candidates = CandidateSet::new(
        &out.model,
        enumerate_all_shapes(&Family::PLACEMENT, &splits),
    )?;
    let other = seed ^ 0x5EED;
    let held_out = transition_dataset(&seen, 40, 5, &splits.seen_themes, &splits, other)?;
    let compositional = transition_dataset(
        &[Family::PutShapesInBowls],
        40,
        5,
        &splits.seen_themes,
        &splits,
        other,
    )?;
    let shifted = transition_dataset(&Family::PLACEMENT, 20, 5, &[3], &splits, other)?;
    for (name, data) in [
        ("seen", &held_out),
        ("compositional", &compositional),
        ("theme 3", &shifted),
    ] {
        let r = evaluate_retrieval(&out.model, data, &candidates, &renderer)?;
        println!("{name:<14} accuracy {:.4} over {}", r.accuracy, data.len());
    }

    let validation = transition_dataset(
        &Family::PLACEMENT,
        40,
        5,
        &splits.seen_themes,
        &splits,
        seed ^ 0xCA1,
    )?;
    let scored = evaluate_retrieval(&out.model, &validation, &candidates, &renderer)?.scored;
    let cal = calibrate_threshold(&scored, 0.98)?;
    println!(
        "theta {:.3}: keeps {}/{} at precision {:.4}",
        cal.theta, cal.kept, cal.total, cal.precision
    );
    Ok(())
}
