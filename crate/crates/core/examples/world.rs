//! Builds a put-shapes-in-bowls scene, saves its rendering under every
//! theme, and lets the scripted expert carry out a few sampled
//! instructions, printing each event and the instruction recovered from it.
//!
//! Usage: `cargo run --example world [seed] [out-dir]`

use std::path::PathBuf;

use paff::grammar::{sample_instruction, Family};
use paff::policy::scripted_expert;
use paff::world::{
    derive_rng, new_scene, oracle_instruction, render, step, SceneSpec, WorldSplits,
};

fn main() -> paff::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().and_then(|s| s.parse().ok()).unwrap_or(0);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "target/world".into()));
    std::fs::create_dir_all(&out)?;
    let splits = WorldSplits::default();
    let family = Family::PutShapesInBowls;
    let mut scene = new_scene(seed, &SceneSpec::for_family(family), &splits)?;
    println!(
        "{}x{} grid, {} objects, {} containers",
        scene.rows,
        scene.cols,
        scene.objects.len(),
        scene.containers.len()
    );

    for theme in splits.all_themes() {
        let obs = render(&scene, theme)?;
        let path = out.join(format!("scene-theme{theme}.png"));
        image::save_buffer(
            &path,
            &obs.pixels,
            obs.width as u32,
            obs.height as u32,
            image::ColorType::Rgb8,
        )
        .map_err(|e| paff::Error::Io(std::io::Error::other(e)))?;
        println!("theme {theme}: {}", path.display());
    }

    let mut rng = derive_rng(seed, "example/world");
    for _ in 0..5 {
        let Ok(instruction) = sample_instruction(&mut rng, family, &splits, Some(&scene), true)
        else {
            println!("nothing left to do");
            break;
        };
        let action = scripted_expert(&scene, &instruction)
            .expect("feasible instructions have an expert action");
        let (next, event) = step(&scene, action)?;
        let recovered = oracle_instruction(&event, &splits).map(|i| i.surface);
        println!(
            "{:<34} {action:?}\n  -> {event:?}\n  recovered: {recovered:?}",
            instruction.surface
        );
        scene = next;
    }
    Ok(())
}
