//! Runs every stage of the command line in process, against a run directory
//! named by the configuration fingerprint, then prints the report digest.
//! The same directory can be inspected or extended with the `paff` binary.
//!
//! Usage: `cargo run --release --example pipeline [config.toml] [out-dir]`

use paff::harness::{
    calibrate_stage, evaluate_stage, gen_data, paff_stage, report_stage, train_policy_stage,
    train_relabeler_stage, RunConfig, RunDir,
};

fn main() -> paff::Result<()> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let config = match args.next() {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    config.validate()?;
    let dir = RunDir::create(args.next().unwrap_or_else(|| "runs".into()), &config)?;
    println!("run {}", dir.root.display());

    println!("demos: {}", gen_data(&config, &dir)?);
    let losses = train_policy_stage(&config, &dir)?;
    println!(
        "policy: final loss {:.5}",
        losses.last().copied().unwrap_or(f64::NAN)
    );
    let (a, b) = train_relabeler_stage(&config, &dir)?;
    println!(
        "relabeler: phase A {:.5}, phase B {:.5}",
        a.last().copied().unwrap_or(f64::NAN),
        b.last().copied().unwrap_or(f64::NAN)
    );
    let cal = calibrate_stage(&config, &dir)?;
    println!("theta {} keeps {}/{}", cal.theta, cal.kept, cal.total);
    let paff = paff_stage(&config, &dir)?;
    println!(
        "kept {} of {} relabeled transitions",
        paff.relabel.kept, paff.relabel.total
    );
    evaluate_stage(&config, &dir)?;
    print!("{}", report_stage(&config, &dir)?);
    Ok(())
}
