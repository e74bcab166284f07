//! Instruction language: fixed templates per task family, a closed
//! vocabulary, candidate enumeration and random sampling for play.

use std::collections::HashMap;
use std::sync::OnceLock;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::world::{
    color_name, shape_name, ColorId, ContainerKind, Location, Scene, ShapeId, WorldSplits, BLOCK,
    BROWN, COLOR_NAMES, SHAPE_NAMES,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    PackShapes,
    PutBlocksInBowls,
    PutShapesInBowls,
    PackUnseenObjects,
    MoveOut,
}

impl Family {
    pub const PLACEMENT: [Family; 4] = [
        Family::PackShapes,
        Family::PutBlocksInBowls,
        Family::PutShapesInBowls,
        Family::PackUnseenObjects,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Family::PackShapes => "pack-shapes",
            Family::PutBlocksInBowls => "put-blocks-in-bowls",
            Family::PutShapesInBowls => "put-shapes-in-bowls",
            Family::PackUnseenObjects => "pack-unseen-objects",
            Family::MoveOut => "move-out",
        }
    }

    pub fn container_kind(self) -> Option<ContainerKind> {
        match self {
            Family::PackShapes | Family::PackUnseenObjects => Some(ContainerKind::Box),
            Family::PutBlocksInBowls | Family::PutShapesInBowls => Some(ContainerKind::Bowl),
            Family::MoveOut => None,
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::PLACEMENT
            .iter()
            .chain(&[Family::MoveOut])
            .find(|f| f.name() == s)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown task family `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContainerSlot {
    pub kind: ContainerKind,
    pub color: ColorId,
}

/// One grammar production.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub family: Family,
    pub shape: Option<ShapeId>,
    /// Object color, named only by the block family.
    pub object_color: Option<ColorId>,
    pub container: Option<ContainerSlot>,
    pub surface: String,
    pub tokens: Vec<u32>,
}

impl Instruction {
    fn build(
        family: Family,
        shape: Option<ShapeId>,
        object_color: Option<ColorId>,
        container: Option<ContainerSlot>,
    ) -> Self {
        let surface = match family {
            Family::PackShapes | Family::PackUnseenObjects => {
                format!("pack the {} in the brown box", shape_name(shape.unwrap()))
            }
            Family::PutBlocksInBowls => format!(
                "put the {} block in the {} bowl",
                color_name(object_color.unwrap()),
                color_name(container.unwrap().color)
            ),
            Family::PutShapesInBowls => format!(
                "put the {} in the {} bowl",
                shape_name(shape.unwrap()),
                color_name(container.unwrap().color)
            ),
            Family::MoveOut => "move the objects out".to_string(),
        };
        let tokens = Vocabulary::standard()
            .tokenize(&surface)
            .expect("templates only use vocabulary words");
        Instruction {
            family,
            shape,
            object_color,
            container,
            surface,
            tokens,
        }
    }

    /// `pack the <shape> in the brown box`, for either pack family.
    pub fn pack(family: Family, shape: ShapeId) -> Self {
        debug_assert!(matches!(
            family,
            Family::PackShapes | Family::PackUnseenObjects
        ));
        Self::build(
            family,
            Some(shape),
            None,
            Some(ContainerSlot {
                kind: ContainerKind::Box,
                color: BROWN,
            }),
        )
    }

    /// `put the <color> block in the <bowl> bowl`.
    pub fn put_block(block_color: ColorId, bowl_color: ColorId) -> Self {
        Self::build(
            Family::PutBlocksInBowls,
            Some(BLOCK),
            Some(block_color),
            Some(ContainerSlot {
                kind: ContainerKind::Bowl,
                color: bowl_color,
            }),
        )
    }

    /// `put the <shape> in the <bowl> bowl`.
    pub fn put_shape(shape: ShapeId, bowl_color: ColorId) -> Self {
        Self::build(
            Family::PutShapesInBowls,
            Some(shape),
            None,
            Some(ContainerSlot {
                kind: ContainerKind::Bowl,
                color: bowl_color,
            }),
        )
    }

    pub fn move_out() -> Self {
        Self::build(Family::MoveOut, None, None, None)
    }

    pub fn is_placement(&self) -> bool {
        self.family != Family::MoveOut
    }

    /// Whether `scene` has an object on the table matching this instruction
    /// and the referenced container.
    pub fn is_feasible(&self, scene: &Scene) -> bool {
        let Some(slot) = self.container else {
            return scene.objects_in_containers() > 0;
        };
        let container = scene
            .containers
            .iter()
            .any(|c| c.kind == slot.kind && c.color == slot.color);
        container
            && scene.objects.iter().any(|o| {
                matches!(o.location, Location::Table(_)) && self.matches_object(o.shape, o.color)
            })
    }

    pub fn matches_object(&self, shape: ShapeId, color: ColorId) -> bool {
        self.shape.is_none_or(|s| s == shape) && self.object_color.is_none_or(|c| c == color)
    }
}

impl std::fmt::Display for Instruction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.surface)
    }
}

const TEMPLATE_WORDS: [&str; 11] = [
    "put", "the", "in", "bowl", "pack", "brown", "box", "block", "move", "objects", "out",
];

/// Closed token table over template, shape and color words.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<&'static str>,
    ids: HashMap<&'static str, u32>,
}

impl Vocabulary {
    /// The process-wide vocabulary. Ids are fixed by construction order.
    pub fn standard() -> &'static Vocabulary {
        static VOCAB: OnceLock<Vocabulary> = OnceLock::new();
        VOCAB.get_or_init(|| {
            let mut words: Vec<&'static str> = TEMPLATE_WORDS.to_vec();
            for w in SHAPE_NAMES.iter().chain(COLOR_NAMES.iter()) {
                if !words.contains(w) {
                    words.push(w);
                }
            }
            let ids = words
                .iter()
                .enumerate()
                .map(|(i, w)| (*w, i as u32))
                .collect();
            Vocabulary { words, ids }
        })
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn words(&self) -> &[&'static str] {
        &self.words
    }

    pub fn tokenize(&self, surface: &str) -> Result<Vec<u32>> {
        surface
            .split_whitespace()
            .map(|w| {
                self.ids
                    .get(w)
                    .copied()
                    .ok_or_else(|| Error::Vocabulary(w.to_string()))
            })
            .collect()
    }

    pub fn detokenize(&self, tokens: &[u32]) -> Result<String> {
        let words = tokens
            .iter()
            .map(|&t| {
                self.words
                    .get(t as usize)
                    .copied()
                    .ok_or_else(|| Error::Vocabulary(format!("#{t}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(words.join(" "))
    }
}

/// Tokenizes with the standard vocabulary.
pub fn tokenize(surface: &str) -> Result<Vec<u32>> {
    Vocabulary::standard().tokenize(surface)
}

/// Longest token sequence any production can have.
pub const MAX_TOKENS: usize = 8;

fn family_productions(family: Family, splits: &WorldSplits, all_shapes: bool) -> Vec<Instruction> {
    match family {
        Family::PackShapes => splits
            .seen_shapes
            .iter()
            .map(|&s| Instruction::pack(family, s))
            .collect(),
        Family::PackUnseenObjects => splits
            .unseen_shapes
            .iter()
            .map(|&s| Instruction::pack(family, s))
            .collect(),
        Family::PutBlocksInBowls => splits
            .bowl_colors
            .iter()
            .flat_map(|&block| {
                splits
                    .bowl_colors
                    .iter()
                    .map(move |&bowl| Instruction::put_block(block, bowl))
            })
            .collect(),
        Family::PutShapesInBowls => {
            let shapes = if all_shapes {
                splits.all_shapes()
            } else {
                splits.seen_shapes.clone()
            };
            shapes
                .iter()
                .flat_map(|&s| {
                    splits
                        .bowl_colors
                        .iter()
                        .map(move |&bowl| Instruction::put_shape(s, bowl))
                })
                .collect()
        }
        Family::MoveOut => vec![Instruction::move_out()],
    }
}

fn canonical(families: &[Family]) -> Vec<Family> {
    let mut fams = families.to_vec();
    fams.sort_unstable();
    fams.dedup();
    fams
}

/// All productions of the given families over the split's seen shapes for
/// `put-shapes-in-bowls`. Families are visited in canonical order.
pub fn enumerate_instructions(families: &[Family], splits: &WorldSplits) -> Vec<Instruction> {
    canonical(families)
        .into_iter()
        .flat_map(|f| family_productions(f, splits, false))
        .collect()
}

/// Like [`enumerate_instructions`], but `put-shapes-in-bowls` ranges over
/// every shape, seen or not. This is the relabeling candidate set.
pub fn enumerate_all_shapes(families: &[Family], splits: &WorldSplits) -> Vec<Instruction> {
    canonical(families)
        .into_iter()
        .flat_map(|f| family_productions(f, splits, true))
        .collect()
}

/// Samples one production of `family` uniformly. With `feasible_only` and a
/// scene, only productions executable in that scene are candidates.
pub fn sample_instruction<R: Rng + ?Sized>(
    rng: &mut R,
    family: Family,
    splits: &WorldSplits,
    scene: Option<&Scene>,
    feasible_only: bool,
) -> Result<Instruction> {
    if family == Family::MoveOut {
        return Err(Error::UnsupportedInstruction(
            "move-out is not sampled".into(),
        ));
    }
    let mut candidates = family_productions(family, splits, false);
    if let (Some(scene), true) = (scene, feasible_only) {
        candidates.retain(|i| i.is_feasible(scene));
    }
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates(family.to_string()));
    }
    let pick = rng.gen_range(0..candidates.len());
    Ok(candidates.swap_remove(pick))
}

/// Human-readable dump of the vocabulary and the production counts.
pub fn manifest(splits: &WorldSplits) -> String {
    let vocab = Vocabulary::standard();
    let mut out = String::from("# instruction grammar\n[vocabulary]\n");
    for (i, w) in vocab.words().iter().enumerate() {
        out.push_str(&format!("{i} = \"{w}\"\n"));
    }
    out.push_str("\n[productions]\n");
    for f in Family::PLACEMENT.iter().chain(&[Family::MoveOut]) {
        let n = family_productions(*f, splits, true).len();
        out.push_str(&format!("\"{f}\" = {n}\n"));
    }
    out
}
