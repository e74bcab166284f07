//! Exhaustive checks on a small world and the instruction grammar.

mod common;

use std::collections::HashSet;

use paff::grammar::{
    enumerate_all_shapes, enumerate_instructions, Family, Instruction, Vocabulary,
};
use paff::world::WorldSplits;

use common::{small_scenes, sweep_small_world, SWEEP_OBJECTS};

#[test]
fn small_world_enumeration_is_complete() {
    // 9 bowl cells x (8 * 7 both on the table + 2 * 8 one inside + 2 stacking
    // orders) = 666 scenes.
    assert_eq!(small_scenes(SWEEP_OBJECTS[0], 0).len(), 666);
}

#[test]
fn every_small_world_transition_is_sound() {
    let splits = WorldSplits::default();
    for objects in SWEEP_OBJECTS {
        for &bowl in &splits.bowl_colors {
            let counts = sweep_small_world(objects, bowl)
                .unwrap_or_else(|e| panic!("{objects:?} bowl {bowl}: {e}"));
            assert_eq!(counts.pairs, 666 * 81);
            assert!(counts.container_moves > 0);
        }
    }
}

fn productions() -> Vec<Instruction> {
    let mut all = enumerate_all_shapes(&Family::PLACEMENT, &WorldSplits::default());
    all.push(Instruction::move_out());
    all
}

#[test]
fn grammar_is_a_bijection() {
    let vocab = Vocabulary::standard();
    let all = productions();
    let slots: HashSet<_> = all
        .iter()
        .map(|i| (i.family, i.shape, i.object_color, i.container))
        .collect();
    let surfaces: HashSet<_> = all.iter().map(|i| i.surface.clone()).collect();
    let tokens: HashSet<_> = all.iter().map(|i| i.tokens.clone()).collect();
    assert_eq!(slots.len(), all.len());
    assert_eq!(surfaces.len(), all.len());
    assert_eq!(tokens.len(), all.len());
    for i in &all {
        assert_eq!(vocab.tokenize(&i.surface).unwrap(), i.tokens);
        assert_eq!(vocab.detokenize(&i.tokens).unwrap(), i.surface);
        let rebuilt = match i.family {
            Family::PackShapes | Family::PackUnseenObjects => {
                Instruction::pack(i.family, i.shape.unwrap())
            }
            Family::PutBlocksInBowls => {
                Instruction::put_block(i.object_color.unwrap(), i.container.unwrap().color)
            }
            Family::PutShapesInBowls => {
                Instruction::put_shape(i.shape.unwrap(), i.container.unwrap().color)
            }
            Family::MoveOut => Instruction::move_out(),
        };
        assert_eq!(&rebuilt, i);
    }
}

#[test]
fn production_counts_follow_the_splits() {
    let s = WorldSplits::default();
    let count = |f| enumerate_all_shapes(&[f], &s).len();
    assert_eq!(count(Family::PackShapes), s.seen_shapes.len());
    assert_eq!(count(Family::PackUnseenObjects), s.unseen_shapes.len());
    assert_eq!(count(Family::PutBlocksInBowls), s.bowl_colors.len().pow(2));
    assert_eq!(
        count(Family::PutShapesInBowls),
        s.all_shapes().len() * s.bowl_colors.len()
    );
    // The training grammar only names seen shapes in bowls.
    assert_eq!(
        enumerate_instructions(&[Family::PutShapesInBowls], &s).len(),
        s.seen_shapes.len() * s.bowl_colors.len()
    );
}

#[test]
fn out_of_vocabulary_words_are_rejected() {
    assert!(Vocabulary::standard()
        .tokenize("put the teapot in the red bowl")
        .is_err());
}
