//! Shared helpers for the integration tests: stage-1 artifacts from a cache
//! under the target directory, randomized gradient-check cases, and the
//! exhaustive small-world sweep.
#![allow(dead_code)]

use std::path::PathBuf;

use ndarray::{Array1, Array2, ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use paff::grammar::{enumerate_all_shapes, Family, Instruction, Vocabulary};
use paff::harness::{
    calibrate, candidate_set, fulfils, ArtifactCache, CalibrationConfig, PolicyStageConfig,
    RelabelerStageConfig,
};
use paff::learn::{
    grad_check,
    gradcheck::{grad_check_report, GradCheckReport},
    nce_loss, softmax_xent, Activation, AttentionPool, Conv2d, Dense, DepthwiseTemporal, Embedding,
    FeatureMap, L2Normalize, ParamStore, PositionalPool,
};
use paff::policy::{observation_batch, PolicyConfig, PolicyModel};
use paff::relabeler::{CandidateSet, FusionMode, RelabelerConfig, RelabelerModel};
use paff::world::{
    is_satisfied, new_scene, oracle_instruction, render, reset_containers, step, Cell, Container,
    ContainerKind, Location, Object, Observation, PickPlaceAction, Renderer, Scene, SceneSpec,
    WorldSplits, BLOCK,
};

pub const EPS: f64 = 1e-3;
pub const TOL: f64 = 1e-4;
pub const SHAPES_PER_CASE: u64 = 10;
pub const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

// ---------------------------------------------------------------------------
// Stage-1 artifacts

pub fn stage1_cache() -> ArtifactCache {
    ArtifactCache::new(PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("paff-stage1"))
        .expect("cache dir")
}

pub struct Stage1 {
    pub policy: PolicyModel<f32>,
    pub relabeler: RelabelerModel<f32>,
    pub candidates: CandidateSet,
    pub theta: f64,
}

/// Default-config stage-1 models for `seed`, trained once and cached.
pub fn stage1(seed: u64) -> paff::Result<Stage1> {
    let (splits, renderer) = (WorldSplits::default(), Renderer::default());
    let cache = stage1_cache();
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
    Ok(Stage1 {
        policy,
        relabeler,
        candidates,
        theta: cal.theta,
    })
}

// ---------------------------------------------------------------------------
// Gradient checks

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || rng.gen_range(-1.0..1.0))
}

/// Uniform values bounded away from zero, so kinked activations are never
/// probed across their kink.
fn off_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> ArrayD<f64> {
    ArrayD::from_shape_simple_fn(IxDyn(shape), || {
        let v: f64 = rng.gen_range(0.1..1.0);
        if rng.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn randomize(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for (_, a) in store.iter_mut() {
        a.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
    }
}

fn m2(a: &ArrayD<f64>) -> Array2<f64> {
    a.clone().into_dimensionality().expect("2-D")
}

fn dense(rng: &mut ChaCha8Rng) -> paff::Result<f64> {
    let (n, i, o) = (
        rng.gen_range(1..5),
        rng.gen_range(1..6),
        rng.gen_range(1..6),
    );
    let layer = Dense::new("d", i, o);
    let mut store = ParamStore::new();
    layer.init(&mut store, rng)?;
    randomize(&mut store, rng);
    store.insert("x", uniform(rng, &[n, i]))?;
    let target = m2(&uniform(rng, &[n, o]));
    grad_check(
        |p| {
            let x = p.matrix("x");
            let y = layer.forward(p, x);
            let mut g = p.zeros_like();
            let dx = layer.backward(p, x, target.view(), &mut g);
            *g.get_mut("x") = dx.into_dyn();
            Ok(((&y * &target).sum(), g))
        },
        &store,
        EPS,
    )
}

fn conv2d(rng: &mut ChaCha8Rng) -> paff::Result<f64> {
    let kernel = rng.gen_range(1..4);
    let stride = rng.gen_range(1..3);
    let padding = rng.gen_range(0..2);
    let (n, cin, cout) = (
        rng.gen_range(1..3),
        rng.gen_range(1..4),
        rng.gen_range(1..4),
    );
    let (h, w) = (kernel + rng.gen_range(0..4), kernel + rng.gen_range(0..4));
    let layer = Conv2d::new("c", cin, cout, kernel, stride, padding);
    let (ho, wo) = layer.output_size(h, w);
    let mut store = ParamStore::new();
    layer.init(&mut store, rng)?;
    randomize(&mut store, rng);
    store.insert("x", uniform(rng, &[n * h * w, cin]))?;
    let target = m2(&uniform(rng, &[n * ho * wo, cout]));
    grad_check(
        |p| {
            let x = FeatureMap::new(n, h, w, p.matrix("x").to_owned());
            let (y, cols) = layer.forward(p, &x);
            let mut g = p.zeros_like();
            let dx = layer.backward(p, &cols, (n, h, w), target.view(), &mut g);
            *g.get_mut("x") = dx.into_dyn();
            Ok(((&y.data * &target).sum(), g))
        },
        &store,
        EPS,
    )
}

fn temporal(rng: &mut ChaCha8Rng, zero_sum: bool) -> paff::Result<f64> {
    let (frames, rows, ch, k) = (
        rng.gen_range(1..5),
        rng.gen_range(1..5),
        rng.gen_range(1..5),
        rng.gen_range(1..4),
    );
    let mut layer = DepthwiseTemporal::new("t", ch, k);
    if zero_sum {
        layer = layer.with_zero_sum();
    }
    let mut store = ParamStore::new();
    layer.init(&mut store, rng)?;
    randomize(&mut store, rng);
    for f in 0..frames {
        store.insert(format!("x{f}"), uniform(rng, &[rows, ch]))?;
    }
    let targets: Vec<Array2<f64>> = (0..frames)
        .map(|_| m2(&uniform(rng, &[rows, ch])))
        .collect();
    grad_check(
        |p| {
            let xs: Vec<Array2<f64>> = (0..frames)
                .map(|f| p.matrix(&format!("x{f}")).to_owned())
                .collect();
            let ys = layer.forward(p, &xs);
            let loss = ys.iter().zip(&targets).map(|(y, t)| (y * t).sum()).sum();
            let mut g = p.zeros_like();
            let dxs = layer.backward(p, &xs, &targets, &mut g);
            for (f, dx) in dxs.into_iter().enumerate() {
                *g.get_mut(&format!("x{f}")) = dx.into_dyn();
            }
            Ok((loss, g))
        },
        &store,
        EPS,
    )
}

fn activation(rng: &mut ChaCha8Rng, act: Activation) -> paff::Result<f64> {
    let shape = [rng.gen_range(1..5), rng.gen_range(1..6)];
    let mut store = ParamStore::new();
    store.insert("x", off_zero(rng, &shape))?;
    let target = m2(&uniform(rng, &shape));
    grad_check(
        |p| {
            let x = p.matrix("x").to_owned();
            let y = act.forward(&x);
            let mut g = p.zeros_like();
            *g.get_mut("x") = act.backward(&x, &target).into_dyn();
            Ok(((&y * &target).sum(), g))
        },
        &store,
        EPS,
    )
}

fn l2_normalize(rng: &mut ChaCha8Rng) -> paff::Result<f64> {
    let shape = [rng.gen_range(1..5), rng.gen_range(2..6)];
    let mut store = ParamStore::new();
    store.insert("x", uniform(rng, &shape))?;
    let target = m2(&uniform(rng, &shape));
    grad_check(
        |p| {
            let x = p.matrix("x");
            let y = L2Normalize::forward(x);
            let mut g = p.zeros_like();
            *g.get_mut("x") = L2Normalize::backward(x, target.view()).into_dyn();
            Ok(((&y * &target).sum(), g))
        },
        &store,
        EPS,
    )
}

fn embedding(rng: &mut ChaCha8Rng) -> paff::Result<f64> {
    let (vocab, dim, len) = (
        rng.gen_range(2..8),
        rng.gen_range(1..5),
        rng.gen_range(1..8),
    );
    let layer = Embedding::new("e", vocab, dim);
    let mut store = ParamStore::new();
    layer.init(&mut store, rng)?;
    randomize(&mut store, rng);
    let tokens: Vec<u32> = (0..len).map(|_| rng.gen_range(0..vocab as u32)).collect();
    let target = m2(&uniform(rng, &[len, dim]));
    grad_check(
        |p| {
            let y = layer.forward(p, &tokens);
            let mut g = p.zeros_like();
            layer.backward(&tokens, target.view(), &mut g);
            Ok(((&y * &target).sum(), g))
        },
        &store,
        EPS,
    )
}

fn positional_pool(rng: &mut ChaCha8Rng) -> paff::Result<f64> {
    let (max_len, dim) = (rng.gen_range(1..8), rng.gen_range(1..5));
    let len = rng.gen_range(1..=max_len);
    let layer = PositionalPool::new("pp", max_len, dim);
    let mut store = ParamStore::new();
    layer.init(&mut store, rng)?;
    store.insert("x", uniform(rng, &[len, dim]))?;
    let target: Array1<f64> = Array1::from_shape_simple_fn(dim, || rng.gen_range(-1.0..1.0));
    grad_check(
        |p| {
            let x = p.matrix("x");
            let y = layer.forward(p, x);
            let mut g = p.zeros_like();
            *g.get_mut("x") = layer.backward(p, x, target.view(), &mut g).into_dyn();
            Ok((y.dot(&target), g))
        },
        &store,
        EPS,
    )
}

fn attention_pool(rng: &mut ChaCha8Rng) -> paff::Result<f64> {
    let (dim, group, n) = (
        rng.gen_range(1..5),
        rng.gen_range(1..6),
        rng.gen_range(1..4),
    );
    let layer = AttentionPool::new("a", dim, group);
    let mut store = ParamStore::new();
    layer.init_zero(&mut store)?;
    randomize(&mut store, rng);
    store.insert("x", uniform(rng, &[n * group, dim]))?;
    store.insert("e", uniform(rng, &[n * group]))?;
    let target = m2(&uniform(rng, &[n, dim]));
    grad_check(
        |p| {
            let x = p.matrix("x");
            let (y, cache) = layer.forward(p, x, Some(p.vector("e")));
            let mut g = p.zeros_like();
            let (dx, de) = layer.backward(p, x, &cache, target.view(), &mut g);
            *g.get_mut("x") = dx.into_dyn();
            *g.get_mut("e") = de.into_dyn();
            Ok(((&y * &target).sum(), g))
        },
        &store,
        EPS,
    )
}

fn cross_entropy(rng: &mut ChaCha8Rng) -> paff::Result<f64> {
    let n = rng.gen_range(1..10);
    let target = rng.gen_range(0..n);
    let mut store = ParamStore::new();
    store.insert("z", uniform(rng, &[n]).mapv(|v| 3.0 * v))?;
    grad_check(
        |p| {
            let (l, dz) = softmax_xent(p.vector("z"), target);
            let mut g = p.zeros_like();
            *g.get_mut("z") = dz.into_dyn();
            Ok((l, g))
        },
        &store,
        EPS,
    )
}

fn nce(rng: &mut ChaCha8Rng) -> paff::Result<f64> {
    let (n, d) = (rng.gen_range(1..6), rng.gen_range(1..5));
    let tau = rng.gen_range(0.2..1.0);
    let symmetric = rng.gen_bool(0.5);
    let mut store = ParamStore::new();
    store.insert("q", uniform(rng, &[n, d]))?;
    store.insert("k", uniform(rng, &[n, d]))?;
    grad_check(
        |p| {
            let out = nce_loss(p.matrix("q"), p.matrix("k"), tau, symmetric)?;
            let mut g = p.zeros_like();
            *g.get_mut("q") = out.d_queries.into_dyn();
            *g.get_mut("k") = out.d_keys.into_dyn();
            Ok((out.loss, g))
        },
        &store,
        EPS,
    )
}

fn small_grid(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.gen_range(2..4), rng.gen_range(2..4))
}

/// Rendered block scenes on a `rows x cols` grid, with one put-block
/// instruction each.
fn block_scenes(
    rng: &mut ChaCha8Rng,
    rows: usize,
    cols: usize,
    n: usize,
) -> Vec<(Scene, Instruction, u8)> {
    let spec = SceneSpec::for_family(Family::PutBlocksInBowls)
        .with_grid(rows, cols)
        .with_objects(2)
        .with_bowls(1);
    (0..n)
        .map(|_| {
            let scene = new_scene(rng.gen(), &spec, &WorldSplits::default()).expect("small scene");
            let o = &scene.objects[rng.gen_range(0..scene.objects.len())];
            let instr = Instruction::put_block(o.color, scene.containers[0].color);
            let theme = rng.gen_range(0..4);
            (scene, instr, theme)
        })
        .collect()
}

fn policy_loss(rng: &mut ChaCha8Rng) -> paff::Result<f64> {
    let (rows, cols) = small_grid(rng);
    let config = PolicyConfig {
        rows,
        cols,
        conv_channels: rng.gen_range(1..4),
        cell_channels: rng.gen_range(1..5),
        text_dim: rng.gen_range(1..4),
        hidden: rng.gen_range(2..6),
        activation: if rng.gen_bool(0.5) {
            Activation::Silu
        } else {
            Activation::Tanh
        },
    };
    let mut model = PolicyModel::<f64>::new(config, rng)?;
    randomize(&mut model.params, rng);
    let n = rng.gen_range(1..4);
    let batch = block_scenes(rng, rows, cols, n);
    let obs: Vec<Observation> = batch
        .iter()
        .map(|(s, _, t)| render(s, *t))
        .collect::<paff::Result<_>>()?;
    let images = observation_batch::<f64>(&obs.iter().collect::<Vec<_>>());
    let tokens: Vec<&[u32]> = batch.iter().map(|(_, i, _)| i.tokens.as_slice()).collect();
    let n_cells = rows * cols;
    let actions: Vec<PickPlaceAction> = batch
        .iter()
        .map(|_| {
            PickPlaceAction::new(
                Cell::from_index(rng.gen_range(0..n_cells), cols),
                Cell::from_index(rng.gen_range(0..n_cells), cols),
            )
        })
        .collect();
    grad_check(
        |p| {
            let m = PolicyModel {
                config: model.config.clone(),
                params: p.clone(),
            };
            m.loss_and_grad(&images, &tokens, &actions)
        },
        &model.params,
        EPS,
    )
}

/// One randomized relabeler grad-check point, checked at step `eps`.
pub fn relabeler_report(
    rng: &mut ChaCha8Rng,
    fusion: FusionMode,
    eps: f64,
) -> paff::Result<GradCheckReport> {
    let (rows, cols) = small_grid(rng);
    let config = RelabelerConfig {
        rows,
        cols,
        conv_channels: rng.gen_range(1..4),
        cell_channels: rng.gen_range(1..5),
        cell_hidden: rng.gen_range(2..6),
        embed_dim: rng.gen_range(2..5),
        text_dim: rng.gen_range(1..4),
        text_hidden: rng.gen_range(2..5),
        fusion,
        tau: 0.5,
        ..Default::default()
    };
    let mut model = RelabelerModel::<f64>::new(config, rng)?;
    // At the initialization scale, zero biases and small token embeddings
    // leave the pre-normalization vectors near the origin, and small features
    // leave the change energies near the share's stabilizer. Both regions are
    // too curved for a finite difference at this step size, so the check runs
    // at a point drawn like the layer cases.
    randomize(&mut model.params, rng);
    let n = rng.gen_range(2..5);
    let batch = block_scenes(rng, rows, cols, n);
    let mut starts = Vec::new();
    let mut ends = Vec::new();
    for (scene, instr, theme) in &batch {
        let action = paff::policy::scripted_expert(scene, instr).expect("feasible by construction");
        let (next, _) = step(scene, action)?;
        starts.push(render(scene, *theme)?);
        ends.push(render(&next, *theme)?);
    }
    let tokens: Vec<&[u32]> = batch.iter().map(|(_, i, _)| i.tokens.as_slice()).collect();
    let (sa, sb): (Vec<&Observation>, Vec<&Observation>) =
        (starts.iter().collect(), ends.iter().collect());
    grad_check_report(
        |p| {
            let m = RelabelerModel {
                config: model.config.clone(),
                params: p.clone(),
            };
            let s0 = m.stem(&observation_batch(&sa), true)?;
            let s1 = m.stem(&observation_batch(&sb), true)?;
            m.nce_step(&[&s0, &s1], &tokens, true, true)
        },
        &model.params,
        eps,
    )
}

fn relabeler_loss(rng: &mut ChaCha8Rng, fusion: FusionMode) -> paff::Result<f64> {
    relabeler_report(rng, fusion, EPS).map(|r| r.max_rel_error)
}

pub type GradCase = fn(&mut ChaCha8Rng) -> paff::Result<f64>;

/// Every layer, loss and full model loss, as randomized grad-check cases.
pub fn grad_cases() -> Vec<(&'static str, GradCase)> {
    vec![
        ("dense", dense),
        ("conv2d", conv2d),
        ("temporal", |r| temporal(r, false)),
        ("temporal-zero-sum", |r| temporal(r, true)),
        ("relu", |r| activation(r, Activation::Relu)),
        ("silu", |r| activation(r, Activation::Silu)),
        ("tanh", |r| activation(r, Activation::Tanh)),
        ("identity", |r| activation(r, Activation::Identity)),
        ("l2-normalize", l2_normalize),
        ("embedding", embedding),
        ("positional-pool", positional_pool),
        ("attention-pool", attention_pool),
        ("softmax-xent", cross_entropy),
        ("nce", nce),
        ("policy-loss", policy_loss),
        ("relabeler-loss/temporal-adapter", |r| {
            relabeler_loss(r, FusionMode::TemporalAdapter)
        }),
        ("relabeler-loss/channel-concat", |r| {
            relabeler_loss(r, FusionMode::ChannelConcat)
        }),
        ("relabeler-loss/frame-difference", |r| {
            relabeler_loss(r, FusionMode::FrameDifference)
        }),
    ]
}

/// Worst relative error of a case over its random shapes.
pub fn worst_error(name: &str, case: GradCase) -> paff::Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..SHAPES_PER_CASE {
        let mut rng = ChaCha8Rng::seed_from_u64(paff::util::derive_seed(i, name));
        worst = worst.max(case(&mut rng)?);
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Exhaustive small world

#[derive(Debug, Default, Clone, Copy)]
pub struct SweepCounts {
    pub scenes: usize,
    pub pairs: usize,
    pub container_moves: usize,
}

/// Every scene with one bowl and the two given objects on a 3x3 grid: all
/// bowl cells, table cells and in-bowl stacking orders.
pub fn small_scenes(objects: [(u8, u8); 2], bowl_color: u8) -> Vec<Scene> {
    const N: usize = 3;
    let cells: Vec<Cell> = (0..N * N).map(|i| Cell::from_index(i, N)).collect();
    let mut out = Vec::new();
    for &bowl_cell in &cells {
        let bowl = Container {
            id: 0,
            kind: ContainerKind::Bowl,
            color: bowl_color,
            cell: bowl_cell,
        };
        let mut places: Vec<Location> = cells.iter().map(|&c| Location::Table(c)).collect();
        places.extend((0..2).map(|seq| Location::Inside { container: 0, seq }));
        for &a in &places {
            for &b in &places {
                let objs = vec![
                    Object {
                        id: 0,
                        shape: objects[0].0,
                        color: objects[0].1,
                        location: a,
                    },
                    Object {
                        id: 1,
                        shape: objects[1].0,
                        color: objects[1].1,
                        location: b,
                    },
                ];
                // Two contained objects need distinct sequence numbers; a lone
                // one sits at sequence 0 only.
                let seqs: Vec<u32> = objs
                    .iter()
                    .filter_map(|o| match o.location {
                        Location::Inside { seq, .. } => Some(seq),
                        Location::Table(_) => None,
                    })
                    .collect();
                let canonical = match seqs.as_slice() {
                    [] => true,
                    [s] => *s == 0,
                    [s, t] => s != t,
                    _ => unreachable!(),
                };
                if !canonical {
                    continue;
                }
                if let Ok(scene) = Scene::from_parts(N, N, objs, vec![bowl.clone()]) {
                    out.push(scene);
                }
            }
        }
    }
    out
}

/// Checks event soundness, conservation and the oracle/grammar inverse on
/// every (scene, action) pair of [`small_scenes`]. Returns the first
/// violation as an error.
pub fn sweep_small_world(objects: [(u8, u8); 2], bowl_color: u8) -> Result<SweepCounts, String> {
    let splits = WorldSplits::default();
    let productions = enumerate_all_shapes(&Family::PLACEMENT, &splits);
    let vocab = Vocabulary::standard();
    let mut counts = SweepCounts::default();
    let scenes = small_scenes(objects, bowl_color);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for scene in &scenes {
        counts.scenes += 1;
        let reset = reset_containers(scene, &mut rng).map_err(|e| e.to_string())?;
        if reset.object_multiset() != scene.object_multiset() || reset.objects_in_containers() != 0
        {
            return Err(format!("reset_containers broke conservation on {scene:?}"));
        }
        for pick in 0..9 {
            for place in 0..9 {
                counts.pairs += 1;
                let action =
                    PickPlaceAction::new(Cell::from_index(pick, 3), Cell::from_index(place, 3));
                let (next, event) = step(scene, action).map_err(|e| e.to_string())?;
                let ctx = || format!("{action:?} on {scene:?}");
                if event.is_noop() != (next == *scene) {
                    return Err(format!("unsound event {event:?} for {}", ctx()));
                }
                if next.object_multiset() != scene.object_multiset() || next.validate().is_err() {
                    return Err(format!("conservation violated by {}", ctx()));
                }
                if !event.is_container_move() {
                    continue;
                }
                counts.container_moves += 1;
                let instr = oracle_instruction(&event, &splits)
                    .ok_or_else(|| format!("no oracle label for {}", ctx()))?;
                let matching: Vec<&Instruction> =
                    productions.iter().filter(|p| fulfils(p, &event)).collect();
                if matching.len() != 1 || matching[0] != &instr {
                    return Err(format!("{} productions describe {event:?}", matching.len()));
                }
                if !is_satisfied(&next, &instr).map_err(|e| e.to_string())? {
                    return Err(format!("`{instr}` unsatisfied after {}", ctx()));
                }
                let round_trip = vocab.detokenize(&instr.tokens).map_err(|e| e.to_string())?;
                if round_trip != instr.surface
                    || vocab.tokenize(&instr.surface).ok().as_ref() != Some(&instr.tokens)
                {
                    return Err(format!("`{instr}` does not round-trip through tokens"));
                }
            }
        }
    }
    Ok(counts)
}

/// Object pairs for the sweep: two colored blocks, two shapes, and an
/// indistinguishable duplicate pair.
pub const SWEEP_OBJECTS: [[(u8, u8); 2]; 3] =
    [[(BLOCK, 0), (BLOCK, 2)], [(1, 3), (8, 6)], [(2, 5), (2, 5)]];

// ---------------------------------------------------------------------------
// CLI

/// A configuration small enough to run the whole pipeline in seconds.
pub const TINY_CONFIG: &str = r#"
seed = 7

[policy]
demos = 8

[policy.train]
epochs = 2

[relabeler]
caption_themes = [0]
captions_per_pair = 1
demos = 4

[relabeler.train.phase_a]
epochs = 1
batch_size = 32
lr = 2e-3

[relabeler.train.phase_b]
epochs = 1
batch_size = 32
lr = 1e-3

[calibration]
demos = 4
# Too little training to reach any precision target; keep every label.
theta = -1.0

[paff.play]
n_demos = 16

[paff.finetune]
epochs = 2

[eval]
n_scenes = 2
instr_per_scene = 2
n_chains = 4
chain_themes = [3]

[ablation]
seeds = [0, 1, 2, 3, 4]
n_demos = [16, 20, 24]
shift_demos = 2
"#;

pub fn paff_bin() -> std::process::Command {
    let mut cmd = std::process::Command::new(env!("CARGO_BIN_EXE_paff"));
    cmd.env_remove(paff::harness::SEED_ENV);
    cmd
}

/// Runs `paff <args>` with the config and output root, returning the exit
/// code and combined output.
pub fn run_cli(config: &std::path::Path, out: &std::path::Path, args: &[&str]) -> (i32, String) {
    let output = paff_bin()
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(args)
        .output()
        .expect("spawn paff");
    let text = format!(
        "{}{}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
    (output.status.code().unwrap_or(-1), text)
}

pub const PIPELINE: [&str; 6] = [
    "gen-data",
    "train-policy",
    "train-relabeler",
    "calibrate",
    "paff-adapt",
    "evaluate",
];
