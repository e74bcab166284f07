//! Checks the hand-written backprop of a small policy and of the contrastive
//! loss against central finite differences, in f64.
//!
//! Usage: `cargo run --release --example gradcheck [seed]`

use ndarray::Array2;
use rand::Rng;

use paff::grammar::{sample_instruction, Family};
use paff::learn::{grad_check, nce_loss, ParamStore};
use paff::policy::{observation_batch, scripted_expert, PolicyConfig, PolicyModel};
use paff::world::{derive_rng, new_scene, render, SceneSpec, WorldSplits};

const EPS: f64 = 1e-3;

fn main() -> paff::Result<()> {
    let seed: u64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let mut rng = derive_rng(seed, "example/gradcheck");
    let splits = WorldSplits::default();

    // A 3x3 block scene keeps the parameter count small enough to probe
    // every entry.
    let spec = SceneSpec::for_family(Family::PutBlocksInBowls)
        .with_grid(3, 3)
        .with_objects(2)
        .with_bowls(1);
    let mut obs = Vec::new();
    let mut tokens = Vec::new();
    let mut actions = Vec::new();
    for i in 0..3 {
        let scene = new_scene(seed + i, &spec, &splits)?;
        let instruction = sample_instruction(
            &mut rng,
            Family::PutBlocksInBowls,
            &splits,
            Some(&scene),
            true,
        )?;
        actions.push(scripted_expert(&scene, &instruction).expect("feasible"));
        obs.push(render(&scene, 0)?);
        tokens.push(instruction.tokens);
    }
    let config = PolicyConfig {
        rows: 3,
        cols: 3,
        conv_channels: 2,
        cell_channels: 3,
        text_dim: 3,
        hidden: 4,
        ..PolicyConfig::default()
    };
    let mut model = PolicyModel::<f64>::new(config, &mut rng)?;
    for (_, a) in model.params.iter_mut() {
        a.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
    }
    let images = observation_batch::<f64>(&obs.iter().collect::<Vec<_>>());
    let token_refs: Vec<&[u32]> = tokens.iter().map(|t| t.as_slice()).collect();
    let err = grad_check(
        |p| {
            let m = PolicyModel {
                config: model.config.clone(),
                params: p.clone(),
            };
            m.loss_and_grad(&images, &token_refs, &actions)
        },
        &model.params,
        EPS,
    )?;
    println!(
        "policy loss: {} parameters, max rel err {err:.2e}",
        model.params.num_values()
    );

    let mut store = ParamStore::new();
    store.insert(
        "q",
        Array2::from_shape_fn((4, 6), |_| rng.gen_range(-1.0..1.0)).into_dyn(),
    )?;
    store.insert(
        "k",
        Array2::from_shape_fn((4, 6), |_| rng.gen_range(-1.0..1.0)).into_dyn(),
    )?;
    let err = grad_check(
        |p| {
            let out = nce_loss(p.matrix("q"), p.matrix("k"), 0.5, true)?;
            let mut g = p.zeros_like();
            *g.get_mut("q") = out.d_queries.into_dyn();
            *g.get_mut("k") = out.d_keys.into_dyn();
            Ok((out.loss, g))
        },
        &store,
        EPS,
    )?;
    println!("symmetric NCE: max rel err {err:.2e}");
    Ok(())
}
