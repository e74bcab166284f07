use crate::error::Result;
use crate::grammar::{Family, Instruction};
use crate::world::{Destination, Event, Location, PickPlaceAction, Scene};

/// The oracle demonstrator. For a placement instruction it returns the cell
/// of the first matching table object and the referenced container's cell,
/// or `None` when either is missing. For move-out it returns the first
/// (container cell, free table cell) pair, or `None` once every container
/// is empty.
pub fn scripted_expert(scene: &Scene, instruction: &Instruction) -> Option<PickPlaceAction> {
    if instruction.family == Family::MoveOut {
        let container = scene
            .containers
            .iter()
            .find(|c| scene.top_of(c.id).is_some())?;
        let free = *scene.free_cells().first()?;
        return Some(PickPlaceAction::new(container.cell, free));
    }
    let slot = instruction.container?;
    let (_, pick) = scene
        .objects_on_table()
        .find(|(o, _)| instruction.matches_object(o.shape, o.color))?;
    let target = scene
        .containers
        .iter()
        .find(|c| c.kind == slot.kind && c.color == slot.color)?;
    Some(PickPlaceAction::new(pick, target.cell))
}

/// Executes a move-out action: takes the most recent object out of the
/// container at `pick` and puts it on the free table cell `place`. Anything
/// else is a no-op. Ordinary [`crate::world::step`] never picks from a
/// container, so a policy-driven reset goes through here.
pub fn unload(scene: &Scene, action: PickPlaceAction) -> Result<(Scene, Event)> {
    scene.check_bounds(action.pick)?;
    scene.check_bounds(action.place)?;
    let Some(container) = scene.container_at(action.pick) else {
        return Ok((scene.clone(), Event::NoOp));
    };
    let Some(top) = scene.top_of(container.id) else {
        return Ok((scene.clone(), Event::NoOp));
    };
    if !scene.is_free(action.place) {
        return Ok((scene.clone(), Event::NoOp));
    }
    let (id, shape, color) = (top.id, top.shape, top.color);
    let mut next = scene.clone();
    next.objects[id].location = Location::Table(action.place);
    Ok((
        next,
        Event::Moved {
            shape,
            color,
            destination: Destination::Table(action.place),
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::world::{is_satisfied, new_scene, step, SceneSpec, WorldSplits};

    fn bowl_scene() -> Scene {
        new_scene(
            5,
            &SceneSpec::for_family(Family::PutShapesInBowls),
            &WorldSplits::default(),
        )
        .unwrap()
    }

    #[test]
    fn expert_satisfies_a_feasible_instruction() {
        let scene = bowl_scene();
        let instr = Instruction::put_shape(scene.objects[2].shape, scene.containers[1].color);
        let a = scripted_expert(&scene, &instr).unwrap();
        let (next, _) = step(&scene, a).unwrap();
        assert!(is_satisfied(&next, &instr).unwrap());
    }

    #[test]
    fn absent_shape_has_no_expert_action() {
        let scene = bowl_scene();
        let missing = (1..=9)
            .find(|s| scene.objects.iter().all(|o| o.shape != *s))
            .unwrap();
        let instr = Instruction::put_shape(missing, scene.containers[0].color);
        assert!(scripted_expert(&scene, &instr).is_none());
    }

    #[test]
    fn move_out_empties_containers() {
        let mut scene = bowl_scene();
        assert!(scripted_expert(&scene, &Instruction::move_out()).is_none());
        for k in 0..2 {
            let instr = Instruction::put_shape(scene.objects[k].shape, scene.containers[0].color);
            scene = step(&scene, scripted_expert(&scene, &instr).unwrap())
                .unwrap()
                .0;
        }
        assert_eq!(scene.objects_in_containers(), 2);
        while let Some(a) = scripted_expert(&scene, &Instruction::move_out()) {
            let (next, event) = unload(&scene, a).unwrap();
            assert!(!event.is_noop());
            scene = next;
        }
        assert_eq!(scene.objects_in_containers(), 0);
        scene.validate().unwrap();
    }
}
