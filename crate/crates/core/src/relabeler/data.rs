//! Pretraining captions and labeled transitions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{enumerate_all_shapes, Family, Instruction};
use crate::policy::generate_demos;
use crate::world::{
    derive_rng, new_scene, oracle_instruction, step, Event, Location, Scene, SceneSpec, ThemeId,
    WorldSplits, BLOCK,
};

/// A single scene described by the one placement it shows: exactly one
/// object sits inside a container, and the caption names that pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Caption {
    pub scene: Scene,
    pub theme: ThemeId,
    pub instruction: Instruction,
}

/// Builds the scene for a caption from a fresh family scene by making sure
/// the named object and container exist, then putting the object inside.
fn caption_scene(instruction: &Instruction, seed: u64, splits: &WorldSplits) -> Result<Scene> {
    let mut spec = SceneSpec::for_family(instruction.family);
    if instruction.family == Family::PutShapesInBowls {
        spec.shapes = Some(splits.all_shapes());
    }
    let mut scene = new_scene(seed, &spec, splits)?;
    let slot = instruction
        .container
        .ok_or_else(|| Error::UnsupportedInstruction(instruction.surface.clone()))?;
    let shape = instruction.shape.unwrap_or(BLOCK);

    let object = match scene
        .objects
        .iter()
        .position(|o| instruction.matches_object(o.shape, o.color))
    {
        Some(i) => i,
        None => {
            // The replaced descriptor is absent from the scene, so every
            // descriptor stays distinct.
            let o = &mut scene.objects[0];
            o.shape = shape;
            if let Some(c) = instruction.object_color {
                o.color = c;
            }
            0
        }
    };
    let container = match scene
        .containers
        .iter()
        .position(|c| c.kind == slot.kind && c.color == slot.color)
    {
        Some(i) => i,
        None => {
            scene.containers[0].color = slot.color;
            0
        }
    };
    scene.objects[object].location = Location::Inside {
        container,
        seq: scene.next_seq,
    };
    scene.next_seq += 1;
    scene.validate()?;
    Ok(scene)
}

/// Captioned single frames covering every placement production (all shapes,
/// seen or not) in every listed theme, `per_pair` scenes each.
pub fn caption_dataset(
    splits: &WorldSplits,
    themes: &[ThemeId],
    per_pair: usize,
    seed: u64,
) -> Result<Vec<Caption>> {
    let mut out = Vec::new();
    for (k, instruction) in enumerate_all_shapes(&Family::PLACEMENT, splits)
        .into_iter()
        .enumerate()
    {
        for &theme in themes {
            for r in 0..per_pair {
                let mut rng = derive_rng(seed, &format!("caption/{k}/{theme}/{r}"));
                out.push(Caption {
                    scene: caption_scene(&instruction, rng.gen(), splits)?,
                    theme,
                    instruction: instruction.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// A transition with its ground-truth event and oracle label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledTransition {
    pub before: Scene,
    pub after: Scene,
    pub theme: ThemeId,
    pub event: Event,
    pub label: Instruction,
}

/// Expert transitions of the given families (see
/// [`crate::policy::generate_demos`]) paired with their oracle labels.
pub fn transition_dataset(
    families: &[Family],
    demos: usize,
    steps: usize,
    themes: &[ThemeId],
    splits: &WorldSplits,
    seed: u64,
) -> Result<Vec<LabeledTransition>> {
    let mut out = Vec::new();
    for d in generate_demos(families, demos, steps, themes, splits, seed)? {
        let (after, event) = step(&d.scene, d.action)?;
        let Some(label) = oracle_instruction(&event, splits) else {
            continue;
        };
        out.push(LabeledTransition {
            before: d.scene,
            after,
            theme: d.theme,
            event,
            label,
        });
    }
    Ok(out)
}
