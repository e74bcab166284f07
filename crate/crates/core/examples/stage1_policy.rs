//! Trains a stage-1 policy on the seen task families and reports its success
//! on seen tasks, the compositional task and the held-out theme.

use std::time::Instant;

use paff::grammar::Family;
use paff::harness::{eval_chains, eval_success, EvalContext, Protocol};
use paff::policy::{generate_demos, train_policy, PolicyConfig, PolicyModel, PolicyTrainConfig};
use paff::world::{derive_rng, Renderer, WorldSplits};

fn main() -> paff::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let epochs: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);
    let splits = WorldSplits::default();
    let renderer = Renderer::default();
    let families = [Family::PackShapes, Family::PutBlocksInBowls];
    let demos = generate_demos(&families, 100, 5, &splits.seen_themes, &splits, seed)?;
    let samples = demos
        .iter()
        .map(|d| Ok((d.render(&renderer)?, d.instruction.clone(), d.action)))
        .collect::<paff::Result<Vec<_>>>()?;
    println!("{} demonstration steps", samples.len());

    let model = PolicyModel::new(
        PolicyConfig::default(),
        &mut derive_rng(seed, "policy/init"),
    )?;
    let cfg = PolicyTrainConfig {
        epochs,
        ..Default::default()
    };
    let t = Instant::now();
    let out = train_policy(model, &samples, &cfg, seed)?;
    println!(
        "trained {} epochs in {:.1}s, final loss {:.4}",
        epochs,
        t.elapsed().as_secs_f64(),
        out.losses.last().unwrap()
    );

    let ctx = EvalContext {
        splits: &splits,
        renderer: &renderer,
        seed: seed ^ 0xE7A1,
    };
    for family in Family::PLACEMENT {
        for theme in [0, 3] {
            let a = eval_success(&out.model, &ctx, family, theme, Protocol::A, 10, 10)?;
            let b = eval_success(&out.model, &ctx, family, theme, Protocol::B, 10, 10)?;
            println!(
                "{family:<22} theme {theme}: A {:.2}  B {:.2}",
                a.rate(),
                b.rate()
            );
        }
    }
    for theme in [0, 3] {
        let c = eval_chains(&out.model, &ctx, &families, theme, 100, 5)?;
        println!(
            "chains theme {theme}: Len {:.2} rates {:?}",
            c.len, c.position_rates
        );
    }
    Ok(())
}
