//! Deterministic tabletop grid world.
//!
//! A [`Scene`] is a small grid holding movable objects and fixed containers
//! (colored bowls and a brown box). The only dynamics are pick-and-place:
//! [`step`] moves the object under the pick cell either into the container at
//! the place cell or onto a free table cell, and reports what happened as an
//! [`Event`]. Every operation is a pure function of its inputs and seed.

mod render;

pub use render::{render, sprite_mask, Observation, Renderer, Stripes, Theme, CELL_PX, THEMES};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grammar::{Family, Instruction};

pub type ShapeId = u8;
pub type ColorId = u8;
pub type ThemeId = u8;

/// Shape id of the plain block used by the block task families.
pub const BLOCK: ShapeId = 0;

pub const SHAPE_NAMES: [&str; 10] = [
    "block", "star", "ring", "heart", "triangle", "diamond", "cross", "flower", "moon", "spiral",
];

pub const COLOR_NAMES: [&str; 9] = [
    "red", "green", "blue", "yellow", "cyan", "purple", "orange", "pink", "brown",
];

/// The reserved box color.
pub const BROWN: ColorId = 8;

pub fn shape_name(shape: ShapeId) -> &'static str {
    SHAPE_NAMES[shape as usize]
}

pub fn color_name(color: ColorId) -> &'static str {
    COLOR_NAMES[color as usize]
}

/// A grid cell, `(row, col)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Cell { row, col }
    }

    /// Row-major index on a grid with `cols` columns.
    pub fn index(self, cols: usize) -> usize {
        self.row * cols + self.col
    }

    pub fn from_index(index: usize, cols: usize) -> Self {
        Cell::new(index / cols, index % cols)
    }
}

impl std::fmt::Display for Cell {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ContainerKind {
    Bowl,
    Box,
}

impl ContainerKind {
    pub fn word(self) -> &'static str {
        match self {
            ContainerKind::Bowl => "bowl",
            ContainerKind::Box => "box",
        }
    }
}

/// Where a movable object currently is. Objects inside a container carry the
/// scene-wide insertion sequence number, so the most recent arrival is known.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Location {
    Table(Cell),
    Inside { container: usize, seq: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Object {
    pub id: usize,
    pub shape: ShapeId,
    pub color: ColorId,
    pub location: Location,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Container {
    pub id: usize,
    pub kind: ContainerKind,
    pub color: ColorId,
    pub cell: Cell,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Scene {
    pub rows: usize,
    pub cols: usize,
    pub objects: Vec<Object>,
    pub containers: Vec<Container>,
    pub seed: u64,
    /// Next insertion sequence number.
    pub next_seq: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PickPlaceAction {
    pub pick: Cell,
    pub place: Cell,
}

impl PickPlaceAction {
    pub const fn new(pick: Cell, place: Cell) -> Self {
        PickPlaceAction { pick, place }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Destination {
    Container {
        id: usize,
        kind: ContainerKind,
        color: ColorId,
    },
    Table(Cell),
}

/// Ground-truth outcome of a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum Event {
    Moved {
        shape: ShapeId,
        color: ColorId,
        destination: Destination,
    },
    NoOp,
}

impl Event {
    pub fn is_noop(&self) -> bool {
        matches!(self, Event::NoOp)
    }

    /// True when the event moved an object into a container.
    pub fn is_container_move(&self) -> bool {
        matches!(
            self,
            Event::Moved {
                destination: Destination::Container { .. },
                ..
            }
        )
    }
}

/// Attribute splits shared by the world, the grammar and the experiments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSplits {
    pub seen_shapes: Vec<ShapeId>,
    pub unseen_shapes: Vec<ShapeId>,
    pub bowl_colors: Vec<ColorId>,
    /// Colors available to shape objects (never the box color).
    pub object_colors: Vec<ColorId>,
    pub seen_themes: Vec<ThemeId>,
    pub unseen_theme: ThemeId,
}

impl Default for WorldSplits {
    fn default() -> Self {
        WorldSplits {
            seen_shapes: vec![1, 2, 3, 4, 5, 6],
            unseen_shapes: vec![7, 8, 9],
            bowl_colors: vec![0, 1, 2, 3, 4, 5],
            object_colors: vec![0, 1, 2, 3, 4, 5, 6, 7],
            seen_themes: vec![0, 1, 2],
            unseen_theme: 3,
        }
    }
}

impl WorldSplits {
    pub fn validate(&self) -> Result<()> {
        let overlap = self
            .seen_shapes
            .iter()
            .any(|s| self.unseen_shapes.contains(s));
        if overlap {
            return Err(Error::Config("seen and unseen shapes overlap".into()));
        }
        if self.seen_themes.contains(&self.unseen_theme) {
            return Err(Error::Config("unseen theme is also listed as seen".into()));
        }
        let shapes = self.seen_shapes.iter().chain(&self.unseen_shapes);
        if shapes
            .clone()
            .any(|&s| s == BLOCK || s as usize >= SHAPE_NAMES.len())
        {
            return Err(Error::Config(
                "shape splits must name non-block shapes".into(),
            ));
        }
        let colors = self.bowl_colors.iter().chain(&self.object_colors);
        if colors
            .clone()
            .any(|&c| c == BROWN || c as usize >= COLOR_NAMES.len())
        {
            return Err(Error::Config("bowl and object colors exclude brown".into()));
        }
        if self
            .seen_themes
            .iter()
            .chain(std::iter::once(&self.unseen_theme))
            .any(|&t| t as usize >= THEMES.len())
        {
            return Err(Error::Config("theme id outside the theme table".into()));
        }
        Ok(())
    }

    pub fn all_shapes(&self) -> Vec<ShapeId> {
        self.seen_shapes
            .iter()
            .chain(&self.unseen_shapes)
            .copied()
            .collect()
    }

    pub fn all_themes(&self) -> Vec<ThemeId> {
        let mut themes = self.seen_themes.clone();
        themes.push(self.unseen_theme);
        themes
    }

    pub fn is_unseen_shape(&self, shape: ShapeId) -> bool {
        self.unseen_shapes.contains(&shape)
    }

    /// Shapes a family draws its objects from.
    pub fn family_shapes(&self, family: Family) -> Vec<ShapeId> {
        match family {
            Family::PackShapes | Family::PutShapesInBowls => self.seen_shapes.clone(),
            Family::PackUnseenObjects => self.unseen_shapes.clone(),
            Family::PutBlocksInBowls => vec![BLOCK],
            Family::MoveOut => Vec::new(),
        }
    }
}

/// Template for generating scenes of one task family.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub family: Family,
    pub rows: usize,
    pub cols: usize,
    pub n_objects: usize,
    /// Number of bowls; box families always get exactly one box.
    pub n_bowls: usize,
    /// Overrides the family's shape pool when set.
    #[serde(default)]
    pub shapes: Option<Vec<ShapeId>>,
}

impl SceneSpec {
    /// The default template of a placement family on a 6x6 grid.
    pub fn for_family(family: Family) -> Self {
        let (n_objects, n_bowls) = match family {
            Family::PackShapes => (5, 0),
            Family::PackUnseenObjects => (3, 0),
            Family::PutBlocksInBowls | Family::PutShapesInBowls => (5, 3),
            Family::MoveOut => (5, 3),
        };
        SceneSpec {
            family,
            rows: 6,
            cols: 6,
            n_objects,
            n_bowls,
            shapes: None,
        }
    }

    pub fn with_objects(mut self, n: usize) -> Self {
        self.n_objects = n;
        self
    }

    pub fn with_bowls(mut self, n: usize) -> Self {
        self.n_bowls = n;
        self
    }

    pub fn with_grid(mut self, rows: usize, cols: usize) -> Self {
        self.rows = rows;
        self.cols = cols;
        self
    }

    pub fn has_box(&self) -> bool {
        self.family.container_kind() == Some(ContainerKind::Box)
    }
}

/// Generates a scene from a family template. The same `(seed, spec)` always
/// yields the same scene.
pub fn new_scene(seed: u64, spec: &SceneSpec, splits: &WorldSplits) -> Result<Scene> {
    if spec.family == Family::MoveOut {
        return Err(Error::Config("move-out has no scene template".into()));
    }
    if spec.rows == 0 || spec.cols == 0 {
        return Err(Error::Config("grid must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_box = usize::from(spec.has_box());
    let n_bowls = if spec.has_box() { 0 } else { spec.n_bowls };
    if n_bowls > splits.bowl_colors.len() {
        return Err(Error::Capacity(format!(
            "{n_bowls} bowls requested from a pool of {} colors",
            splits.bowl_colors.len()
        )));
    }
    let cells_needed = spec.n_objects + n_bowls + n_box;
    if cells_needed > spec.rows * spec.cols {
        return Err(Error::Capacity(format!(
            "{cells_needed} items do not fit on a {}x{} grid",
            spec.rows, spec.cols
        )));
    }

    // (shape, color) descriptors, all distinct.
    let descriptors: Vec<(ShapeId, ColorId)> = if spec.family == Family::PutBlocksInBowls {
        let colors = &splits.bowl_colors;
        if spec.n_objects > colors.len() {
            return Err(Error::Capacity(format!(
                "{} blocks requested from a pool of {} colors",
                spec.n_objects,
                colors.len()
            )));
        }
        colors
            .choose_multiple(&mut rng, spec.n_objects)
            .map(|&c| (BLOCK, c))
            .collect()
    } else {
        let pool = spec
            .shapes
            .clone()
            .unwrap_or_else(|| splits.family_shapes(spec.family));
        if spec.n_objects > pool.len() {
            return Err(Error::Capacity(format!(
                "{} distinct shapes requested from a pool of {}",
                spec.n_objects,
                pool.len()
            )));
        }
        if splits.object_colors.is_empty() && spec.n_objects > 0 {
            return Err(Error::Capacity("no object colors available".into()));
        }
        pool.choose_multiple(&mut rng, spec.n_objects)
            .map(|&s| {
                let color = splits.object_colors[rng.gen_range(0..splits.object_colors.len())];
                (s, color)
            })
            .collect()
    };
    let bowl_colors: Vec<ColorId> = splits
        .bowl_colors
        .choose_multiple(&mut rng, n_bowls)
        .copied()
        .collect();

    let mut cells: Vec<Cell> = (0..spec.rows * spec.cols)
        .map(|i| Cell::from_index(i, spec.cols))
        .collect();
    cells.shuffle(&mut rng);
    let mut cells = cells.into_iter();

    let mut containers = Vec::with_capacity(n_bowls + n_box);
    for color in bowl_colors {
        containers.push(Container {
            id: containers.len(),
            kind: ContainerKind::Bowl,
            color,
            cell: cells.next().expect("capacity checked"),
        });
    }
    if n_box == 1 {
        containers.push(Container {
            id: containers.len(),
            kind: ContainerKind::Box,
            color: BROWN,
            cell: cells.next().expect("capacity checked"),
        });
    }
    let objects = descriptors
        .into_iter()
        .enumerate()
        .map(|(id, (shape, color))| Object {
            id,
            shape,
            color,
            location: Location::Table(cells.next().expect("capacity checked")),
        })
        .collect();

    Ok(Scene {
        rows: spec.rows,
        cols: spec.cols,
        objects,
        containers,
        seed,
        next_seq: 0,
    })
}

impl Scene {
    /// Builds a scene from explicit parts, checking every structural
    /// invariant.
    pub fn from_parts(
        rows: usize,
        cols: usize,
        objects: Vec<Object>,
        containers: Vec<Container>,
    ) -> Result<Scene> {
        let next_seq = objects
            .iter()
            .filter_map(|o| match o.location {
                Location::Inside { seq, .. } => Some(seq + 1),
                Location::Table(_) => None,
            })
            .max()
            .unwrap_or(0);
        let scene = Scene {
            rows,
            cols,
            objects,
            containers,
            seed: 0,
            next_seq,
        };
        scene.validate()?;
        Ok(scene)
    }

    pub fn validate(&self) -> Result<()> {
        let mut occupied = vec![false; self.rows * self.cols];
        for (i, c) in self.containers.iter().enumerate() {
            self.check_bounds(c.cell)?;
            if c.id != i {
                return Err(Error::Contract("container ids must be dense".into()));
            }
            if c.kind == ContainerKind::Box && c.color != BROWN {
                return Err(Error::Contract("boxes are always brown".into()));
            }
            let slot = &mut occupied[c.cell.index(self.cols)];
            if *slot {
                return Err(Error::Contract(format!("containers overlap at {}", c.cell)));
            }
            *slot = true;
        }
        for (i, o) in self.objects.iter().enumerate() {
            if o.id != i {
                return Err(Error::Contract("object ids must be dense".into()));
            }
            match o.location {
                Location::Table(cell) => {
                    self.check_bounds(cell)?;
                    let slot = &mut occupied[cell.index(self.cols)];
                    if *slot {
                        return Err(Error::Contract(format!("cell {cell} holds two items")));
                    }
                    *slot = true;
                }
                Location::Inside { container, .. } => {
                    if container >= self.containers.len() {
                        return Err(Error::Contract("object inside unknown container".into()));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn check_bounds(&self, cell: Cell) -> Result<()> {
        if cell.row < self.rows && cell.col < self.cols {
            Ok(())
        } else {
            Err(Error::Bounds {
                row: cell.row,
                col: cell.col,
                rows: self.rows,
                cols: self.cols,
            })
        }
    }

    pub fn n_cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn object_at(&self, cell: Cell) -> Option<&Object> {
        self.objects
            .iter()
            .find(|o| o.location == Location::Table(cell))
    }

    pub fn container_at(&self, cell: Cell) -> Option<&Container> {
        self.containers.iter().find(|c| c.cell == cell)
    }

    pub fn is_free(&self, cell: Cell) -> bool {
        self.object_at(cell).is_none() && self.container_at(cell).is_none()
    }

    /// Free table cells in row-major order.
    pub fn free_cells(&self) -> Vec<Cell> {
        (0..self.n_cells())
            .map(|i| Cell::from_index(i, self.cols))
            .filter(|&c| self.is_free(c))
            .collect()
    }

    pub fn objects_on_table(&self) -> impl Iterator<Item = (&Object, Cell)> {
        self.objects.iter().filter_map(|o| match o.location {
            Location::Table(cell) => Some((o, cell)),
            Location::Inside { .. } => None,
        })
    }

    pub fn objects_in_containers(&self) -> usize {
        self.objects
            .iter()
            .filter(|o| matches!(o.location, Location::Inside { .. }))
            .count()
    }

    /// The most recently inserted object of a container, if any.
    pub fn top_of(&self, container: usize) -> Option<&Object> {
        self.objects
            .iter()
            .filter_map(|o| match o.location {
                Location::Inside { container: c, seq } if c == container => Some((seq, o)),
                _ => None,
            })
            .max_by_key(|(seq, _)| *seq)
            .map(|(_, o)| o)
    }

    /// Sorted `(shape, color)` multiset, used by conservation checks.
    pub fn object_multiset(&self) -> Vec<(ShapeId, ColorId)> {
        let mut v: Vec<_> = self.objects.iter().map(|o| (o.shape, o.color)).collect();
        v.sort_unstable();
        v
    }

    /// Stable digest of the full state.
    pub fn digest(&self) -> String {
        crate::util::digest_json(self)
    }
}

/// Applies a pick-and-place action. The input scene is never modified.
pub fn step(scene: &Scene, action: PickPlaceAction) -> Result<(Scene, Event)> {
    scene.check_bounds(action.pick)?;
    scene.check_bounds(action.place)?;
    let Some(object) = scene.object_at(action.pick) else {
        return Ok((scene.clone(), Event::NoOp));
    };
    let (shape, color, id) = (object.shape, object.color, object.id);

    if let Some(container) = scene.container_at(action.place) {
        let mut next = scene.clone();
        next.objects[id].location = Location::Inside {
            container: container.id,
            seq: next.next_seq,
        };
        next.next_seq += 1;
        let event = Event::Moved {
            shape,
            color,
            destination: Destination::Container {
                id: container.id,
                kind: container.kind,
                color: container.color,
            },
        };
        return Ok((next, event));
    }
    if scene.object_at(action.place).is_some() {
        return Ok((scene.clone(), Event::NoOp));
    }
    let mut next = scene.clone();
    next.objects[id].location = Location::Table(action.place);
    let event = Event::Moved {
        shape,
        color,
        destination: Destination::Table(action.place),
    };
    Ok((next, event))
}

/// Moves every contained object back onto a free table cell.
pub fn reset_containers<R: Rng + ?Sized>(scene: &Scene, rng: &mut R) -> Result<Scene> {
    let mut next = scene.clone();
    for i in 0..next.objects.len() {
        if matches!(next.objects[i].location, Location::Inside { .. }) {
            let free = next.free_cells();
            if free.is_empty() {
                return Err(Error::Capacity("no free table cell for reset".into()));
            }
            let cell = free[rng.gen_range(0..free.len())];
            next.objects[i].location = Location::Table(cell);
        }
    }
    Ok(next)
}

/// Maps a container-destination event back to the unique instruction that
/// describes it. Table moves, no-ops and blocks packed into a box have no
/// production.
pub fn oracle_instruction(event: &Event, splits: &WorldSplits) -> Option<Instruction> {
    let Event::Moved {
        shape,
        color,
        destination:
            Destination::Container {
                kind,
                color: container_color,
                ..
            },
    } = *event
    else {
        return None;
    };
    match (kind, shape == BLOCK) {
        (ContainerKind::Bowl, true) => Some(Instruction::put_block(color, container_color)),
        (ContainerKind::Bowl, false) => Some(Instruction::put_shape(shape, container_color)),
        (ContainerKind::Box, false) => {
            let family = if splits.is_unseen_shape(shape) {
                Family::PackUnseenObjects
            } else {
                Family::PackShapes
            };
            Some(Instruction::pack(family, shape))
        }
        (ContainerKind::Box, true) => None,
    }
}

/// Whether some object matching the instruction sits inside the referenced
/// container.
pub fn is_satisfied(scene: &Scene, instruction: &Instruction) -> Result<bool> {
    let Some(target) = instruction.container else {
        return Err(Error::UnsupportedInstruction(instruction.surface.clone()));
    };
    Ok(scene.objects.iter().any(|o| {
        let Location::Inside { container, .. } = o.location else {
            return false;
        };
        let c = &scene.containers[container];
        c.kind == target.kind
            && c.color == target.color
            && instruction.shape.is_none_or(|s| s == o.shape)
            && instruction.object_color.is_none_or(|col| col == o.color)
    }))
}

/// Stable per-purpose RNG derived from a master seed and a label.
pub fn derive_rng(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(crate::util::derive_seed(seed, label))
}
