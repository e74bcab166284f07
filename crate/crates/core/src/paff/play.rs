//! Autonomous play: the current policy acts on randomly sampled
//! instructions and every step is recorded with its ground-truth event.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{sample_instruction, Family, Instruction};
use crate::harness::Actor;
use crate::policy::unload;
use crate::world::{
    derive_rng, new_scene, reset_containers, step, Event, Observation, PickPlaceAction, Renderer,
    Scene, SceneSpec, ThemeId, WorldSplits,
};

pub const TRANSITION_SCHEMA_VERSION: u32 = 1;

/// One recorded play step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionRecord {
    pub schema_version: u32,
    pub scene_seed: u64,
    pub pre_digest: String,
    pub pre_state: Scene,
    pub theme: ThemeId,
    pub observation_t: Observation,
    pub observation_next: Observation,
    pub instruction_given: Instruction,
    pub action: PickPlaceAction,
    pub oracle_event: Event,
    pub demo: usize,
    pub step: usize,
}

impl TransitionRecord {
    /// Re-simulates the stored action from the stored pre-state and checks
    /// digest, event and both observations bit for bit.
    pub fn verify(&self, renderer: &Renderer) -> Result<()> {
        let fail = |what: &str| {
            Err(Error::Integrity(format!(
                "demo {} step {}: {what}",
                self.demo, self.step
            )))
        };
        if self.pre_state.digest() != self.pre_digest {
            return fail("pre-state digest mismatch");
        }
        if renderer.render(&self.pre_state, self.theme)? != self.observation_t {
            return fail("observation_t does not re-render");
        }
        let (next, event) = step(&self.pre_state, self.action)?;
        if event != self.oracle_event {
            return fail("oracle event does not re-simulate");
        }
        if renderer.render(&next, self.theme)? != self.observation_next {
            return fail("observation_next does not re-simulate");
        }
        Ok(())
    }

    /// The post-state, recomputed.
    pub fn post_state(&self) -> Result<Scene> {
        Ok(step(&self.pre_state, self.action)?.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResetMode {
    /// Contained objects are put back on random free table cells.
    #[default]
    Scripted,
    /// The policy is told to move the objects out, with a scripted fallback
    /// when it gets stuck.
    Policy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlayConfig {
    /// Scene-episode `e` uses `families[e % len]`.
    pub families: Vec<Family>,
    /// Each scene-episode draws its theme uniformly from this list.
    pub themes: Vec<ThemeId>,
    pub n_demos: usize,
    pub steps_per_demo: usize,
    /// Consecutive demos played on the same scene, reset in between.
    pub demos_per_scene: usize,
    pub reset: ResetMode,
    /// Sample only instructions executable in the current scene.
    pub feasible_only: bool,
}

impl Default for PlayConfig {
    fn default() -> Self {
        PlayConfig {
            families: vec![Family::PutShapesInBowls],
            themes: vec![0, 1, 2],
            n_demos: 40,
            steps_per_demo: 5,
            demos_per_scene: 4,
            reset: ResetMode::Scripted,
            feasible_only: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlayStats {
    pub records: usize,
    pub scenes: usize,
    pub noops: usize,
    pub table_moves: usize,
    pub container_moves: usize,
    /// Records whose event is exactly the given instruction.
    pub instructed_successes: usize,
    /// Scripted resets between demos, or fallbacks after a stuck policy reset.
    pub scripted_resets: usize,
    /// Resets forced mid-demo because nothing was left to place.
    pub exhausted_resets: usize,
    pub policy_reset_steps: usize,
    pub policy_reset_fallbacks: usize,
}

#[derive(Debug, Clone)]
pub struct PlayOutcome {
    pub records: Vec<TransitionRecord>,
    pub stats: PlayStats,
}

fn validate(config: &PlayConfig) -> Result<()> {
    if config.n_demos == 0 {
        return Err(Error::Config("play needs n_demos >= 1".into()));
    }
    if config.steps_per_demo == 0 || config.demos_per_scene == 0 {
        return Err(Error::Config(
            "steps_per_demo and demos_per_scene must be positive".into(),
        ));
    }
    if config.families.is_empty() || config.themes.is_empty() {
        return Err(Error::Config(
            "play needs at least one family and one theme".into(),
        ));
    }
    if config.families.contains(&Family::MoveOut) {
        return Err(Error::Config(
            "play families must be placement families".into(),
        ));
    }
    Ok(())
}

/// Lets the actor execute "move the objects out" until every container is
/// empty or the step budget runs out. Returns the scene and the steps used;
/// a stuck reset is finished by the scripted one.
fn policy_reset<R: Rng>(
    actor: &dyn Actor,
    mut scene: Scene,
    theme: ThemeId,
    renderer: &Renderer,
    rng: &mut R,
    stats: &mut PlayStats,
) -> Result<Scene> {
    let instruction = Instruction::move_out();
    let budget = 2 * scene.objects.len();
    for _ in 0..budget {
        if scene.objects_in_containers() == 0 {
            break;
        }
        let obs = renderer.render(&scene, theme)?;
        let action = actor.act(&obs, &scene, &instruction)?;
        scene = unload(&scene, action)?.0;
        stats.policy_reset_steps += 1;
    }
    if scene.objects_in_containers() > 0 {
        stats.policy_reset_fallbacks += 1;
        stats.scripted_resets += 1;
        scene = reset_containers(&scene, rng)?;
    }
    Ok(scene)
}

/// Plays `n_demos` demos of `steps_per_demo` steps. Scenes persist for
/// `demos_per_scene` demos and are reset between demos. Records come out in
/// `(demo, step)` order and depend only on the inputs.
pub fn play(
    actor: &dyn Actor,
    config: &PlayConfig,
    splits: &WorldSplits,
    renderer: &Renderer,
    seed: u64,
) -> Result<PlayOutcome> {
    validate(config)?;
    let mut records = Vec::with_capacity(config.n_demos * config.steps_per_demo);
    let mut stats = PlayStats::default();
    let mut scene: Option<(Scene, ThemeId, Family)> = None;
    for demo in 0..config.n_demos {
        let mut rng = derive_rng(seed, &format!("play/demo/{demo}"));
        let (mut current, theme, family) = match scene.take() {
            Some((s, theme, family)) if demo % config.demos_per_scene != 0 => {
                let s = match config.reset {
                    ResetMode::Scripted => {
                        stats.scripted_resets += 1;
                        reset_containers(&s, &mut rng)?
                    }
                    ResetMode::Policy => {
                        policy_reset(actor, s, theme, renderer, &mut rng, &mut stats)?
                    }
                };
                (s, theme, family)
            }
            _ => {
                let episode = demo / config.demos_per_scene;
                let mut scene_rng = derive_rng(seed, &format!("play/scene/{episode}"));
                let family = config.families[episode % config.families.len()];
                let s = new_scene(scene_rng.gen(), &SceneSpec::for_family(family), splits)?;
                let theme = config.themes[scene_rng.gen_range(0..config.themes.len())];
                stats.scenes += 1;
                (s, theme, family)
            }
        };
        for s in 0..config.steps_per_demo {
            let instruction = match sample_instruction(
                &mut rng,
                family,
                splits,
                Some(&current),
                config.feasible_only,
            ) {
                Err(Error::EmptyCandidates(_)) => {
                    stats.exhausted_resets += 1;
                    current = reset_containers(&current, &mut rng)?;
                    sample_instruction(
                        &mut rng,
                        family,
                        splits,
                        Some(&current),
                        config.feasible_only,
                    )?
                }
                other => other?,
            };
            let observation_t = renderer.render(&current, theme)?;
            let action = actor.act(&observation_t, &current, &instruction)?;
            let (next, event) = step(&current, action)?;
            match event {
                Event::NoOp => stats.noops += 1,
                e if e.is_container_move() => stats.container_moves += 1,
                _ => stats.table_moves += 1,
            }
            if crate::harness::fulfils(&instruction, &event) {
                stats.instructed_successes += 1;
            }
            records.push(TransitionRecord {
                schema_version: TRANSITION_SCHEMA_VERSION,
                scene_seed: current.seed,
                pre_digest: current.digest(),
                pre_state: current,
                theme,
                observation_next: renderer.render(&next, theme)?,
                observation_t,
                instruction_given: instruction,
                action,
                oracle_event: event,
                demo,
                step: s,
            });
            current = next;
        }
        scene = Some((current, theme, family));
    }
    stats.records = records.len();
    Ok(PlayOutcome { records, stats })
}

/// Writes schema-versioned JSON lines.
pub fn save_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Reads JSON lines, rejecting records whose `schema_version` differs.
pub fn load_jsonl<T: serde::de::DeserializeOwned>(
    path: impl AsRef<Path>,
    schema_version: u32,
) -> Result<Vec<T>> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(&line)?;
        let found = value
            .get("schema_version")
            .and_then(serde_json::Value::as_u64);
        if found != Some(u64::from(schema_version)) {
            return Err(Error::Integrity(format!(
                "line {}: schema version {found:?} is not {schema_version}",
                n + 1
            )));
        }
        out.push(serde_json::from_value(value)?);
    }
    Ok(out)
}

pub fn save_records(path: impl AsRef<Path>, records: &[TransitionRecord]) -> Result<()> {
    save_jsonl(path, records)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<TransitionRecord>> {
    load_jsonl(path, TRANSITION_SCHEMA_VERSION)
}
