//! Demonstration data and imitation training.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{observation_batch, scripted_expert, PolicyModel};
use crate::error::{Error, Result};
use crate::grammar::{sample_instruction, Family, Instruction};
use crate::learn::{OptimizerKind, OptimizerState};
use crate::world::{
    derive_rng, new_scene, step, Observation, PickPlaceAction, Renderer, Scene, SceneSpec, ThemeId,
    WorldSplits,
};

pub const DEMO_SCHEMA_VERSION: u32 = 1;

/// One expert step. The observation is not stored; it is re-rendered from
/// the symbolic scene and theme on load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub schema_version: u32,
    pub scene: Scene,
    pub theme: ThemeId,
    pub instruction: Instruction,
    pub action: PickPlaceAction,
    pub demo: usize,
    pub step: usize,
}

impl DemoRecord {
    pub fn render(&self, renderer: &Renderer) -> Result<Observation> {
        renderer.render(&self.scene, self.theme)
    }
}

/// Expert demonstrations: per family, `demos` fresh scenes, each played for
/// up to `steps` feasible instructions in sequence. Every demo draws its
/// theme uniformly from `themes`.
pub fn generate_demos(
    families: &[Family],
    demos: usize,
    steps: usize,
    themes: &[ThemeId],
    splits: &WorldSplits,
    seed: u64,
) -> Result<Vec<DemoRecord>> {
    if themes.is_empty() {
        return Err(Error::Config(
            "no themes to render demonstrations in".into(),
        ));
    }
    let mut out = Vec::new();
    for &family in families {
        let spec = SceneSpec::for_family(family);
        for d in 0..demos {
            let mut rng = derive_rng(seed, &format!("demo/{family}/{d}"));
            let mut scene = new_scene(rng.gen(), &spec, splits)?;
            let theme = themes[rng.gen_range(0..themes.len())];
            for s in 0..steps {
                let instruction =
                    match sample_instruction(&mut rng, family, splits, Some(&scene), true) {
                        Ok(i) => i,
                        Err(Error::EmptyCandidates(_)) => break,
                        Err(e) => return Err(e),
                    };
                let action = scripted_expert(&scene, &instruction).ok_or_else(|| {
                    Error::Contract(format!("no expert action for `{instruction}`"))
                })?;
                out.push(DemoRecord {
                    schema_version: DEMO_SCHEMA_VERSION,
                    scene: scene.clone(),
                    theme,
                    instruction,
                    action,
                    demo: d,
                    step: s,
                });
                scene = step(&scene, action)?.0;
            }
        }
    }
    Ok(out)
}

pub fn save_demos(path: impl AsRef<Path>, records: &[DemoRecord]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_demos(path: impl AsRef<Path>) -> Result<Vec<DemoRecord>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: DemoRecord = serde_json::from_str(&line)?;
        if record.schema_version != DEMO_SCHEMA_VERSION {
            return Err(Error::Integrity(format!(
                "line {}: demo schema version {} is not {DEMO_SCHEMA_VERSION}",
                n + 1,
                record.schema_version
            )));
        }
        out.push(record);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub optimizer: OptimizerKind,
}

impl Default for PolicyTrainConfig {
    fn default() -> Self {
        PolicyTrainConfig {
            epochs: 200,
            batch_size: 32,
            lr: 1e-3,
            optimizer: OptimizerKind::adam(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: PolicyModel<f32>,
    /// Mean loss of every epoch.
    pub losses: Vec<f64>,
}

/// Mini-batch imitation training. Sample order is reshuffled every epoch
/// from `seed`; the run is fully determined by its inputs.
pub fn train_policy(
    mut model: PolicyModel<f32>,
    samples: &[(Observation, Instruction, PickPlaceAction)],
    config: &PolicyTrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if samples.is_empty() {
        return Err(Error::Contract(
            "policy training needs at least one sample".into(),
        ));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("batch_size must be positive".into()));
    }
    let mut rng = derive_rng(seed, "policy/shuffle");
    let mut opt = OptimizerState::for_all(config.optimizer, config.lr, &model.params);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut losses = Vec::with_capacity(config.epochs);
    let mut global_step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(config.batch_size) {
            let obs: Vec<&Observation> = batch.iter().map(|&i| &samples[i].0).collect();
            let tokens: Vec<&[u32]> = batch
                .iter()
                .map(|&i| samples[i].1.tokens.as_slice())
                .collect();
            let actions: Vec<PickPlaceAction> = batch.iter().map(|&i| samples[i].2).collect();
            let images = observation_batch::<f32>(&obs);
            let (loss, grads) = model.loss_and_grad(&images, &tokens, &actions)?;
            let loss = f64::from(loss);
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Diverged {
                    epoch,
                    step: global_step,
                    loss,
                });
            }
            opt.apply(&mut model.params, &grads)?;
            total += loss * batch.len() as f64;
            global_step += 1;
        }
        let mean = total / samples.len() as f64;
        log::debug!("policy epoch {epoch}: loss {mean:.4}");
        losses.push(mean);
    }
    Ok(TrainOutcome { model, losses })
}
