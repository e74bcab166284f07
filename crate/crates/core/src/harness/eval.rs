//! Success-rate protocols and instruction chains.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{sample_instruction, Family, Instruction};
use crate::learn::Real;
use crate::policy::{scripted_expert, PolicyModel};
use crate::world::{
    derive_rng, new_scene, reset_containers, step, Cell, Destination, Event, Observation,
    PickPlaceAction, Renderer, Scene, SceneSpec, ThemeId, WorldSplits,
};

/// Anything that maps (observation, instruction) to an action. The scene is
/// passed so oracle and random baselines can share the protocols; learned
/// policies must ignore it.
pub trait Actor {
    fn act(
        &self,
        observation: &Observation,
        scene: &Scene,
        instruction: &Instruction,
    ) -> Result<PickPlaceAction>;
}

impl<T: Real> Actor for PolicyModel<T> {
    fn act(
        &self,
        observation: &Observation,
        _scene: &Scene,
        instruction: &Instruction,
    ) -> Result<PickPlaceAction> {
        self.predict_action(observation, instruction)
    }
}

/// The scripted expert; infeasible instructions yield a no-op at (0, 0).
#[derive(Debug, Clone, Copy, Default)]
pub struct ExpertActor;

impl Actor for ExpertActor {
    fn act(
        &self,
        _observation: &Observation,
        scene: &Scene,
        instruction: &Instruction,
    ) -> Result<PickPlaceAction> {
        let origin = Cell::new(0, 0);
        Ok(scripted_expert(scene, instruction).unwrap_or(PickPlaceAction::new(origin, origin)))
    }
}

/// Uniformly random pick and place cells, derived from the scene state so the
/// actor stays immutable and deterministic.
#[derive(Debug, Clone, Copy)]
pub struct RandomActor {
    pub seed: u64,
}

impl Actor for RandomActor {
    fn act(
        &self,
        _observation: &Observation,
        scene: &Scene,
        instruction: &Instruction,
    ) -> Result<PickPlaceAction> {
        let mut rng = derive_rng(
            self.seed,
            &format!("{}/{}", scene.digest(), instruction.surface),
        );
        let n = scene.n_cells();
        let cell = |i: usize| Cell::from_index(i, scene.cols);
        Ok(PickPlaceAction::new(
            cell(rng.gen_range(0..n)),
            cell(rng.gen_range(0..n)),
        ))
    }
}

/// Whether `event` is exactly the placement `instruction` asks for.
pub fn fulfils(instruction: &Instruction, event: &Event) -> bool {
    let (
        Some(slot),
        Event::Moved {
            shape,
            color,
            destination,
        },
    ) = (instruction.container, event)
    else {
        return false;
    };
    let Destination::Container { kind, color: c, .. } = destination else {
        return false;
    };
    instruction.matches_object(*shape, *color) && slot.kind == *kind && slot.color == *c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Protocol {
    /// A fresh instruction every step, whatever the outcome.
    A,
    /// The same instruction until it is satisfied or the retry budget runs out.
    B,
}

pub const PROTOCOL_B_BUDGET: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessOutcome {
    pub successes: usize,
    pub total: usize,
}

impl SuccessOutcome {
    pub fn rate(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.successes as f64 / self.total as f64
        }
    }
}

/// Shared settings of every evaluation.
#[derive(Debug, Clone)]
pub struct EvalContext<'a> {
    pub splits: &'a WorldSplits,
    pub renderer: &'a Renderer,
    pub seed: u64,
}

fn next_instruction<R: Rng>(
    rng: &mut R,
    family: Family,
    scene: &mut Scene,
    splits: &WorldSplits,
) -> Result<Instruction> {
    match sample_instruction(rng, family, splits, Some(scene), true) {
        Err(Error::EmptyCandidates(_)) => {
            *scene = reset_containers(scene, rng)?;
            sample_instruction(rng, family, splits, Some(scene), true)
        }
        other => other,
    }
}

/// Placement success of `actor` on `n_scenes` fresh scenes of `family`, with
/// `instr_per_scene` instructions each. Scenes are reset when nothing is
/// left to place.
pub fn eval_success(
    actor: &dyn Actor,
    ctx: &EvalContext,
    family: Family,
    theme: ThemeId,
    protocol: Protocol,
    n_scenes: usize,
    instr_per_scene: usize,
) -> Result<SuccessOutcome> {
    let spec = SceneSpec::for_family(family);
    let mut out = SuccessOutcome {
        successes: 0,
        total: 0,
    };
    let attempts = match protocol {
        Protocol::A => 1,
        Protocol::B => PROTOCOL_B_BUDGET,
    };
    for i in 0..n_scenes {
        // Scenes and instructions depend only on the seed, so protocols and
        // policies are compared on the same instances.
        let mut rng = derive_rng(ctx.seed, &format!("eval/{family}/{theme}/{i}"));
        let mut scene = new_scene(rng.gen(), &spec, ctx.splits)?;
        for _ in 0..instr_per_scene {
            let instruction = next_instruction(&mut rng, family, &mut scene, ctx.splits)?;
            out.total += 1;
            for _ in 0..attempts {
                let obs = ctx.renderer.render(&scene, theme)?;
                let action = actor.act(&obs, &scene, &instruction)?;
                let (next, event) = step(&scene, action)?;
                scene = next;
                if fulfils(&instruction, &event) {
                    out.successes += 1;
                    break;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainOutcome {
    /// Completed prefix length of every chain.
    pub completed: Vec<usize>,
    /// Fraction of chains whose first `k` subtasks all succeeded, `k = 1..`.
    pub position_rates: Vec<f64>,
    /// Mean completed-prefix length.
    pub len: f64,
}

impl ChainOutcome {
    pub fn from_completed(completed: Vec<usize>, chain_len: usize) -> Self {
        let n = completed.len().max(1) as f64;
        let position_rates = (1..=chain_len)
            .map(|k| completed.iter().filter(|&&c| c >= k).count() as f64 / n)
            .collect();
        let len = completed.iter().sum::<usize>() as f64 / n;
        ChainOutcome {
            completed,
            position_rates,
            len,
        }
    }
}

/// Sequential chains: a chain advances only when the current subtask
/// succeeds. Chain `c` plays a fresh scene of `families[c % families.len()]`
/// with feasibility-filtered instructions.
pub fn eval_chains(
    actor: &dyn Actor,
    ctx: &EvalContext,
    families: &[Family],
    theme: ThemeId,
    n_chains: usize,
    chain_len: usize,
) -> Result<ChainOutcome> {
    if chain_len == 0 || families.is_empty() {
        return Err(Error::Config(
            "chains need a positive length and at least one family".into(),
        ));
    }
    let mut completed = Vec::with_capacity(n_chains);
    for c in 0..n_chains {
        let family = families[c % families.len()];
        let mut rng = derive_rng(ctx.seed, &format!("chain/{theme}/{c}"));
        let mut scene = new_scene(rng.gen(), &SceneSpec::for_family(family), ctx.splits)?;
        let mut done = 0;
        for _ in 0..chain_len {
            let instruction = next_instruction(&mut rng, family, &mut scene, ctx.splits)?;
            let obs = ctx.renderer.render(&scene, theme)?;
            let (next, event) = step(&scene, actor.act(&obs, &scene, &instruction)?)?;
            scene = next;
            if !fulfils(&instruction, &event) {
                break;
            }
            done += 1;
        }
        completed.push(done);
    }
    Ok(ChainOutcome::from_completed(completed, chain_len))
}
