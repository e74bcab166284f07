//! Two-phase relabeler training: single-frame pretraining of the backbone
//! and text encoder, then adapter training on transitions with the backbone
//! and text encoder frozen.

use std::collections::{HashMap, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Caption, LabeledTransition, RelabelerModel, Stem};
use crate::error::{Error, Result};
use crate::grammar::Instruction;
use crate::learn::{OptimizerKind, OptimizerState, ParamStore};
use crate::policy::observation_batch;
use crate::world::{derive_rng, Observation, Renderer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RelabelerTrainConfig {
    pub phase_a: PhaseConfig,
    pub phase_b: PhaseConfig,
    /// Visual head parameters trained in phase B besides the fusion ones.
    pub phase_b_heads: HeadScope,
    pub optimizer: OptimizerKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HeadScope {
    None,
    /// The final linear projection only.
    Projection,
    /// Per-cell MLP, attention pooling and projection.
    All,
}

impl Default for RelabelerTrainConfig {
    fn default() -> Self {
        RelabelerTrainConfig {
            phase_a: PhaseConfig {
                epochs: 80,
                batch_size: 64,
                lr: 2e-3,
            },
            phase_b: PhaseConfig {
                epochs: 20,
                batch_size: 64,
                lr: 1e-3,
            },
            phase_b_heads: HeadScope::None,
            optimizer: OptimizerKind::adam(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RelabelerTrainOutcome {
    pub model: RelabelerModel<f32>,
    pub phase_a_losses: Vec<f64>,
    pub phase_b_losses: Vec<f64>,
}

/// Shuffled batches in which no label repeats, so in-batch negatives are
/// never copies of the positive. Examples that collide are deferred to a
/// later batch.
pub fn distinct_label_batches<R: Rng + ?Sized>(
    labels: &[usize],
    batch_size: usize,
    rng: &mut R,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.shuffle(rng);
    let mut queue: VecDeque<usize> = order.into();
    let mut batches = Vec::new();
    while !queue.is_empty() {
        let mut batch = Vec::with_capacity(batch_size);
        let mut seen = HashSet::new();
        for _ in 0..queue.len() {
            let i = queue.pop_front().expect("non-empty");
            if batch.len() < batch_size && seen.insert(labels[i]) {
                batch.push(i);
            } else {
                queue.push_back(i);
            }
        }
        batches.push(batch);
    }
    batches
}

fn label_ids<'a>(instructions: impl Iterator<Item = &'a Instruction>) -> Vec<usize> {
    let mut ids = HashMap::new();
    instructions
        .map(|i| {
            let next = ids.len();
            *ids.entry(i.surface.clone()).or_insert(next)
        })
        .collect()
}

fn check_finite(loss: f32, grads: &ParamStore<f32>, epoch: usize, step: usize) -> Result<f64> {
    let loss = f64::from(loss);
    if !loss.is_finite() || !grads.all_finite() {
        return Err(Error::Diverged { epoch, step, loss });
    }
    Ok(loss)
}

fn phase_a(
    model: &mut RelabelerModel<f32>,
    captions: &[Caption],
    renderer: &Renderer,
    cfg: &PhaseConfig,
    optimizer: OptimizerKind,
    seed: u64,
) -> Result<Vec<f64>> {
    let frames: Vec<Observation> = captions
        .iter()
        .map(|c| renderer.render(&c.scene, c.theme))
        .collect::<Result<_>>()?;
    let labels = label_ids(captions.iter().map(|c| &c.instruction));
    let mut trainable = model.backbone_names();
    trainable.extend(model.text_names());
    trainable.extend(model.head_names());
    let mut opt = OptimizerState::new(
        optimizer,
        cfg.lr,
        &model.params,
        trainable.iter().map(String::as_str),
    );
    let mut rng = derive_rng(seed, "relabeler/phase-a");
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in distinct_label_batches(&labels, cfg.batch_size, &mut rng) {
            let obs: Vec<&Observation> = batch.iter().map(|&i| &frames[i]).collect();
            let tokens: Vec<&[u32]> = batch
                .iter()
                .map(|&i| captions[i].instruction.tokens.as_slice())
                .collect();
            let stem = model.stem(&observation_batch(&obs), true)?;
            let (loss, grads) = model.nce_step(&[&stem], &tokens, true, true)?;
            total += check_finite(loss, &grads, epoch, step)? * batch.len() as f64;
            opt.apply(&mut model.params, &grads)?;
            step += 1;
        }
        let mean = total / captions.len() as f64;
        log::debug!("relabeler phase A epoch {epoch}: loss {mean:.4}");
        losses.push(mean);
    }
    Ok(losses)
}

fn stems_of(model: &RelabelerModel<f32>, frames: &[Observation]) -> Result<Stem<f32>> {
    let refs: Vec<&Observation> = frames.iter().collect();
    model.stem(&observation_batch(&refs), false)
}

fn phase_b(
    model: &mut RelabelerModel<f32>,
    transitions: &[LabeledTransition],
    renderer: &Renderer,
    config: &RelabelerTrainConfig,
    seed: u64,
) -> Result<Vec<f64>> {
    let cfg = &config.phase_b;
    let mut trainable = model.fusion_names();
    match config.phase_b_heads {
        HeadScope::None => {}
        HeadScope::Projection => trainable.extend(model.projection_names()),
        HeadScope::All => trainable.extend(model.head_names()),
    }
    if trainable.is_empty() || cfg.epochs == 0 {
        return Ok(Vec::new());
    }
    let starts: Vec<Observation> = transitions
        .iter()
        .map(|t| renderer.render(&t.before, t.theme))
        .collect::<Result<_>>()?;
    let ends: Vec<Observation> = transitions
        .iter()
        .map(|t| renderer.render(&t.after, t.theme))
        .collect::<Result<_>>()?;
    // The first stage is frozen, so its outputs are computed once.
    let s0 = stems_of(model, &starts)?;
    let s1 = stems_of(model, &ends)?;
    drop((starts, ends));

    let labels = label_ids(transitions.iter().map(|t| &t.label));
    let mut opt = OptimizerState::new(
        config.optimizer,
        cfg.lr,
        &model.params,
        trainable.iter().map(String::as_str),
    );
    let mut rng = derive_rng(seed, "relabeler/phase-b");
    let mut losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut total = 0.0;
        for batch in distinct_label_batches(&labels, cfg.batch_size, &mut rng) {
            let tokens: Vec<&[u32]> = batch
                .iter()
                .map(|&i| transitions[i].label.tokens.as_slice())
                .collect();
            let (a, b) = (s0.select(&batch), s1.select(&batch));
            let (loss, grads) = model.nce_step(&[&a, &b], &tokens, false, false)?;
            total += check_finite(loss, &grads, epoch, step)? * batch.len() as f64;
            opt.apply(&mut model.params, &grads)?;
            step += 1;
        }
        let mean = total / transitions.len() as f64;
        log::debug!("relabeler phase B epoch {epoch}: loss {mean:.4}");
        losses.push(mean);
    }
    Ok(losses)
}

/// Phase A trains backbone, text encoder and head on captioned single
/// frames. Phase B freezes backbone and text encoder and trains the fusion
/// parameters (plus the head, if configured) on labeled transitions. A
/// frozen parameter that changes during phase B is a contract error.
pub fn train_relabeler(
    mut model: RelabelerModel<f32>,
    captions: &[Caption],
    transitions: &[LabeledTransition],
    renderer: &Renderer,
    config: &RelabelerTrainConfig,
    seed: u64,
) -> Result<RelabelerTrainOutcome> {
    if captions.is_empty() && config.phase_a.epochs > 0 {
        return Err(Error::Contract("phase A needs captioned frames".into()));
    }
    if transitions.is_empty() && config.phase_b.epochs > 0 {
        return Err(Error::Contract("phase B needs labeled transitions".into()));
    }
    for phase in [&config.phase_a, &config.phase_b] {
        if phase.batch_size < 2 {
            return Err(Error::Config(
                "contrastive batches need at least two examples".into(),
            ));
        }
    }
    let phase_a_losses = phase_a(
        &mut model,
        captions,
        renderer,
        &config.phase_a,
        config.optimizer,
        seed,
    )?;

    let mut frozen_names = model.backbone_names();
    frozen_names.extend(model.text_names());
    let frozen = model.params.subset(frozen_names.iter().map(String::as_str));
    let phase_b_losses = phase_b(&mut model, transitions, renderer, config, seed)?;
    if !model
        .params
        .subset(frozen_names.iter().map(String::as_str))
        .bit_equal(&frozen)
    {
        return Err(Error::Contract(
            "frozen backbone drifted during adapter training".into(),
        ));
    }
    Ok(RelabelerTrainOutcome {
        model,
        phase_a_losses,
        phase_b_losses,
    })
}
