//! Per-task sample construction.
//!
//! Conventions: text-to-image and identity samples get a black input image
//! and an all-ones mask; editing and the auxiliary tasks keep the all-ones
//! mask with the rendered scene as input; in- and outpainting mark the
//! region to generate with ones.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::describe::{describe, Relation};
use super::glyph::{composite, GlyphLibrary};
use super::scene::{
    blank_canvas, fill_cell, marker_covers, paint_stencil, put_pixel, random_object, render, Cell, Color, Object,
    SceneSpec, Shape, Size, CANVAS, CELL, GRID,
};
use super::TaskKind;
use crate::error::{Error, Result};
use crate::grid::{ImageTensor, MaskImage};

/// Whole-cell rectangle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Region {
    pub top: usize,
    pub left: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Region {
    pub const FULL: Region = Region {
        top: 0,
        left: 0,
        rows: GRID,
        cols: GRID,
    };

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.top + self.rows > GRID || self.left + self.cols > GRID {
            return Err(Error::Invalid(format!("region {self:?} outside the canvas")));
        }
        Ok(())
    }

    pub fn contains_cell(&self, c: Cell) -> bool {
        (self.top..self.top + self.rows).contains(&c.row) && (self.left..self.left + self.cols).contains(&c.col)
    }

    pub fn contains_pixel(&self, y: usize, x: usize) -> bool {
        self.contains_cell(Cell::new(y / CELL, x / CELL))
    }

    /// Area in pixels.
    pub fn area(&self) -> usize {
        self.rows * self.cols * CELL * CELL
    }

    pub fn random<R: Rng>(rng: &mut R, max_side: usize) -> Self {
        let rows = rng.random_range(1..=max_side);
        let cols = rng.random_range(1..=max_side);
        Self {
            top: rng.random_range(0..=GRID - rows),
            left: rng.random_range(0..=GRID - cols),
            rows,
            cols,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Left,
    Right,
    Top,
    Bottom,
}

impl Edge {
    pub const ALL: [Edge; 4] = [Edge::Left, Edge::Right, Edge::Top, Edge::Bottom];

    pub fn word(self) -> &'static str {
        match self {
            Edge::Left => "left",
            Edge::Right => "right",
            Edge::Top => "top",
            Edge::Bottom => "bottom",
        }
    }

    /// Edge cell in the same row or column.
    pub fn destination(self, from: Cell) -> Cell {
        match self {
            Edge::Left => Cell::new(from.row, 0),
            Edge::Right => Cell::new(from.row, GRID - 1),
            Edge::Top => Cell::new(0, from.col),
            Edge::Bottom => Cell::new(GRID - 1, from.col),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EditOp {
    /// New large object next to the object at `anchor`.
    Add { object: Object, anchor: Cell },
    Remove { cell: Cell },
    Recolor { cell: Cell, color: Color },
    Move { from: Cell, edge: Edge },
}

impl EditOp {
    pub fn apply(&self, scene: &SceneSpec) -> Result<SceneSpec> {
        let need = |c: Cell| {
            scene
                .at(c)
                .copied()
                .ok_or_else(|| Error::Referent(format!("no object at {c:?}")))
        };
        let mut objects = scene.objects.clone();
        match *self {
            EditOp::Add { object, anchor } => {
                need(anchor)?;
                if scene.at(object.cell).is_some() {
                    return Err(Error::Invalid(format!("cell {:?} is occupied", object.cell)));
                }
                if Relation::between(&object, &need(anchor)?).is_none() || !adjacent(object.cell, anchor) {
                    return Err(Error::Invalid("added object must sit next to its anchor".into()));
                }
                objects.push(object);
            }
            EditOp::Remove { cell } => {
                need(cell)?;
                objects.retain(|o| o.cell != cell);
            }
            EditOp::Recolor { cell, color } => {
                need(cell)?;
                objects.iter_mut().filter(|o| o.cell == cell).for_each(|o| o.color = color);
            }
            EditOp::Move { from, edge } => {
                need(from)?;
                let to = edge.destination(from);
                if to == from || scene.at(to).is_some() {
                    return Err(Error::Invalid(format!("cannot move {from:?} to the {}", edge.word())));
                }
                objects.iter_mut().filter(|o| o.cell == from).for_each(|o| o.cell = to);
            }
        }
        SceneSpec::new(objects)
    }

    /// Cells whose content the edit may change.
    pub fn affected_cells(&self) -> Vec<Cell> {
        match *self {
            EditOp::Add { object, .. } => vec![object.cell],
            EditOp::Remove { cell } | EditOp::Recolor { cell, .. } => vec![cell],
            EditOp::Move { from, edge } => vec![from, edge.destination(from)],
        }
    }

    /// Instruction text without the task token.
    pub fn instruction(&self, scene: &SceneSpec) -> Result<String> {
        Ok(match *self {
            EditOp::Add { object, anchor } => {
                let rel = Relation::between(&object, scene.at(anchor).ok_or_else(|| missing(anchor))?)
                    .ok_or_else(|| Error::Invalid("added object overlaps its anchor".into()))?;
                format!(
                    "add a {} {} {} {}",
                    object.color,
                    object.shape,
                    rel.words(),
                    referent(scene, anchor)?
                )
            }
            EditOp::Remove { cell } => format!("remove {}", referent(scene, cell)?),
            EditOp::Recolor { cell, color } => format!("recolor {} to {color}", referent(scene, cell)?),
            EditOp::Move { from, edge } => format!("move {} to the {}", referent(scene, from)?, edge.word()),
        })
    }
}

fn adjacent(a: Cell, b: Cell) -> bool {
    a.row.abs_diff(b.row) + a.col.abs_diff(b.col) == 1
}

fn missing(c: Cell) -> Error {
    Error::Referent(format!("no object at {c:?}"))
}

/// "the circle" when the shape is unique, else "the red circle" when the
/// colour-shape pair is.
pub fn referent(scene: &SceneSpec, cell: Cell) -> Result<String> {
    let o = scene.at(cell).ok_or_else(|| missing(cell))?;
    let same_shape = scene.objects.iter().filter(|p| p.shape == o.shape).count();
    if same_shape == 1 {
        return Ok(format!("the {}", o.shape));
    }
    let same_both = scene
        .objects
        .iter()
        .filter(|p| p.shape == o.shape && p.color == o.color)
        .count();
    if same_both == 1 {
        return Ok(format!("the {} {}", o.color, o.shape));
    }
    Err(Error::Referent(format!("{} {} is ambiguous", o.color, o.shape)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SegTarget {
    Object(Shape),
    Background,
}

impl SegTarget {
    pub fn word(self) -> &'static str {
        match self {
            SegTarget::Object(s) => s.word(),
            SegTarget::Background => "background",
        }
    }
}

/// Task-specific facts the verifier needs beyond the scene.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskMeta {
    Plain,
    Inpaint { region: Region, guided: bool },
    Outpaint { keep: Region, guided: bool },
    Edit { op: EditOp, result: SceneSpec },
    Seg { target: SegTarget, color: Color },
    Layout { blocks: Vec<(Cell, Color)> },
    Id { glyph: usize, slot: Cell },
}

/// One training or evaluation unit.
#[derive(Clone, Debug, PartialEq)]
pub struct TaskSample {
    pub kind: TaskKind,
    pub prompt: String,
    pub input_image: ImageTensor,
    pub input_mask: MaskImage,
    pub target_image: ImageTensor,
    /// Identity crop for placeholder tasks.
    pub external: Option<ImageTensor>,
    /// Scene depicted by the target (for edits: the source scene).
    pub scene: SceneSpec,
    pub meta: TaskMeta,
}

fn all_ones() -> MaskImage {
    MaskImage::filled(CANVAS, CANVAS, true)
}

pub fn make_t2i(scene: &SceneSpec) -> Result<TaskSample> {
    Ok(TaskSample {
        kind: TaskKind::T2i,
        prompt: format!("<t2i> {}", describe(scene)).trim_end().to_string(),
        input_image: blank_canvas(),
        input_mask: all_ones(),
        target_image: render(scene)?,
        external: None,
        scene: scene.clone(),
        meta: TaskMeta::Plain,
    })
}

fn painting(scene: &SceneSpec, guided: bool, generate: impl Fn(usize, usize) -> bool) -> Result<(String, ImageTensor, MaskImage, ImageTensor)> {
    let target = render(scene)?;
    let mut input = target.clone();
    let mut mask = MaskImage::filled(CANVAS, CANVAS, false);
    for y in 0..CANVAS {
        for x in 0..CANVAS {
            if generate(y, x) {
                mask.set(y, x, true);
                put_pixel(&mut input, y, x, [0, 0, 0]);
            }
        }
    }
    let prompt = if guided {
        format!("<t2i> {}", describe(scene)).trim_end().to_string()
    } else {
        String::new()
    };
    Ok((prompt, input, mask, target))
}

/// The region is blacked out in the input and marked in the mask.
pub fn make_inpaint(scene: &SceneSpec, region: Region, guided: bool) -> Result<TaskSample> {
    region.validate()?;
    let (prompt, input_image, input_mask, target_image) =
        painting(scene, guided, |y, x| region.contains_pixel(y, x))?;
    Ok(TaskSample {
        kind: TaskKind::Inpaint,
        prompt,
        input_image,
        input_mask,
        target_image,
        external: None,
        scene: scene.clone(),
        meta: TaskMeta::Inpaint { region, guided },
    })
}

/// Only `keep` stays visible; everything else is generated.
pub fn make_outpaint(scene: &SceneSpec, keep: Region, guided: bool) -> Result<TaskSample> {
    keep.validate()?;
    let (prompt, input_image, input_mask, target_image) =
        painting(scene, guided, |y, x| !keep.contains_pixel(y, x))?;
    Ok(TaskSample {
        kind: TaskKind::Outpaint,
        prompt,
        input_image,
        input_mask,
        target_image,
        external: None,
        scene: scene.clone(),
        meta: TaskMeta::Outpaint { keep, guided },
    })
}

pub fn make_edit(scene: &SceneSpec, op: EditOp) -> Result<TaskSample> {
    let result = op.apply(scene)?;
    Ok(TaskSample {
        kind: TaskKind::Edit,
        prompt: format!("<ie> {}", op.instruction(scene)?),
        input_image: render(scene)?,
        input_mask: all_ones(),
        target_image: render(&result)?,
        external: None,
        scene: scene.clone(),
        meta: TaskMeta::Edit { op, result },
    })
}

/// Grey level of an object in the depth map: lower rows and large objects
/// are nearer and brighter.
pub fn depth_level(row: usize, size: Size) -> u8 {
    (80 + 40 * row + if size == Size::Large { 40 } else { 0 }) as u8
}

fn auxiliary(kind: TaskKind, token: &str, scene: &SceneSpec, target_image: ImageTensor, meta: TaskMeta) -> Result<TaskSample> {
    Ok(TaskSample {
        kind,
        prompt: token.to_string(),
        input_image: render(scene)?,
        input_mask: all_ones(),
        target_image,
        external: None,
        scene: scene.clone(),
        meta,
    })
}

pub fn make_depth(scene: &SceneSpec) -> Result<TaskSample> {
    scene.validate()?;
    let mut o = blank_canvas();
    for obj in &scene.objects {
        let g = depth_level(obj.cell.row, obj.size);
        paint_stencil(&mut o, obj.cell, obj.shape, obj.size, [g; 3]);
    }
    auxiliary(TaskKind::Depth, "<depth>", scene, o, TaskMeta::Plain)
}

pub fn pose_map(scene: &SceneSpec) -> ImageTensor {
    let mut o = blank_canvas();
    for obj in &scene.objects {
        let (y0, x0) = obj.cell.origin();
        for y in 0..CELL {
            for x in 0..CELL {
                if marker_covers(y, x) {
                    put_pixel(&mut o, y0 + y, x0 + x, [255; 3]);
                }
            }
        }
    }
    o
}

pub fn make_pose(scene: &SceneSpec) -> Result<TaskSample> {
    scene.validate()?;
    auxiliary(TaskKind::Pose, "<pose>", scene, pose_map(scene), TaskMeta::Plain)
}

/// Object targets need a shape that occurs exactly once.
pub fn make_seg(scene: &SceneSpec, target: SegTarget, color: Color) -> Result<TaskSample> {
    let mut o = render(scene)?;
    match target {
        SegTarget::Object(shape) => {
            let hits: Vec<&Object> = scene.objects.iter().filter(|p| p.shape == shape).collect();
            let [obj] = hits.as_slice() else {
                return Err(Error::Referent(format!("{} matches {} objects", shape, hits.len())));
            };
            paint_stencil(&mut o, obj.cell, obj.shape, obj.size, color.rgb());
        }
        SegTarget::Background => {
            let occupied = render_coverage(scene);
            for y in 0..CANVAS {
                for x in 0..CANVAS {
                    if !occupied[y * CANVAS + x] {
                        put_pixel(&mut o, y, x, color.rgb());
                    }
                }
            }
        }
    }
    let prompt = format!("<seg> {} : {color}", target.word());
    auxiliary(TaskKind::Seg, &prompt, scene, o, TaskMeta::Seg { target, color })
}

/// Canvas pixels covered by any object stencil.
pub fn render_coverage(scene: &SceneSpec) -> Vec<bool> {
    let mut cov = vec![false; CANVAS * CANVAS];
    for o in &scene.objects {
        let (y0, x0) = o.cell.origin();
        for (i, &on) in super::scene::stencil(o.shape, o.size).iter().enumerate() {
            if on {
                cov[(y0 + i / CELL) * CANVAS + x0 + i % CELL] = true;
            }
        }
    }
    cov
}

pub const BLOCK_COLORS: [Color; 3] = [Color::Blue, Color::Green, Color::Yellow];

pub fn make_layout(scene: &SceneSpec) -> Result<TaskSample> {
    scene.validate()?;
    if scene.objects.is_empty() {
        return Err(Error::Invalid("layout needs at least one object".into()));
    }
    let mut v = blank_canvas();
    let mut blocks = Vec::new();
    let mut clauses = Vec::new();
    for (o, &bc) in scene.objects.iter().zip(&BLOCK_COLORS) {
        fill_cell(&mut v, o.cell, bc.rgb());
        blocks.push((o.cell, bc));
        clauses.push(format!("{} in {bc} block", o.shape));
    }
    Ok(TaskSample {
        kind: TaskKind::Layout,
        prompt: format!("<lg> {} {}", describe(scene), clauses.join(" ")),
        input_image: v,
        input_mask: all_ones(),
        target_image: render(scene)?,
        external: None,
        scene: scene.clone(),
        meta: TaskMeta::Layout { blocks },
    })
}

pub const ID_SLOTS: [Cell; 4] = [Cell::new(0, 0), Cell::new(0, GRID - 1), Cell::new(GRID - 1, 0), Cell::new(GRID - 1, GRID - 1)];

fn slot_words(slot: Cell) -> Result<&'static str> {
    match (slot.row, slot.col) {
        (0, 0) => Ok("top left"),
        (0, c) if c == GRID - 1 => Ok("top right"),
        (r, 0) if r == GRID - 1 => Ok("bottom left"),
        (r, c) if r == GRID - 1 && c == GRID - 1 => Ok("bottom right"),
        _ => Err(Error::Invalid(format!("identity slot {slot:?} is not a corner"))),
    }
}

/// Glyph composited at a corner cell, with optional companion objects.
pub fn make_id(library: &GlyphLibrary, glyph: usize, slot: Cell, scene: &SceneSpec) -> Result<TaskSample> {
    let tile = library.get(glyph)?.clone();
    let words = slot_words(slot)?;
    if scene.at(slot).is_some() || scene.objects.len() > 2 {
        return Err(Error::Invalid("identity scenes hold at most two objects outside the slot".into()));
    }
    let mut o = render(scene)?;
    let (y0, x0) = slot.origin();
    composite(&mut o, &tile, y0, x0);
    let mut prompt = format!("<t2i> <p> <p> <p> <p> in the {words}");
    if !scene.objects.is_empty() {
        prompt = format!("{prompt} and {}", describe(scene));
    }
    Ok(TaskSample {
        kind: TaskKind::Id,
        prompt,
        input_image: blank_canvas(),
        input_mask: all_ones(),
        target_image: o,
        external: Some(tile),
        scene: scene.clone(),
        meta: TaskMeta::Id { glyph, slot },
    })
}

/// Which scenes a generator may emit.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    /// Scenes never drawn for training.
    Eval,
}

/// Roughly one scene in eight is reserved for evaluation. Uses FNV-1a so
/// the split is stable across toolchains.
pub fn is_held_out(scene: &SceneSpec) -> bool {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for o in &scene.objects {
        let code = [o.shape as u8, o.color as u8, o.cell.row as u8, o.cell.col as u8, o.size as u8];
        for b in code {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h.is_multiple_of(8)
}

pub fn random_scene<R: Rng>(rng: &mut R, split: Split, n: usize, exclude: &[Cell]) -> SceneSpec {
    loop {
        let s = SceneSpec::random(rng, n, exclude);
        if n == 0 || is_held_out(&s) == (split == Split::Eval) {
            return s;
        }
    }
}

/// A random applicable edit, or `None` when nothing unambiguous applies.
pub fn random_edit<R: Rng>(rng: &mut R, scene: &SceneSpec) -> Option<EditOp> {
    let mut ops = Vec::new();
    for o in &scene.objects {
        if referent(scene, o.cell).is_err() {
            continue;
        }
        ops.push(EditOp::Remove { cell: o.cell });
        ops.push(EditOp::Recolor {
            cell: o.cell,
            color: *Color::ALL.choose(rng).unwrap(),
        });
        for edge in Edge::ALL {
            let to = edge.destination(o.cell);
            if to != o.cell && scene.at(to).is_none() {
                ops.push(EditOp::Move { from: o.cell, edge });
            }
        }
        if scene.objects.len() < super::scene::MAX_OBJECTS {
            for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (r, c) = (o.cell.row as i64 + dr, o.cell.col as i64 + dc);
                if (0..GRID as i64).contains(&r) && (0..GRID as i64).contains(&c) {
                    let cell = Cell::new(r as usize, c as usize);
                    if scene.at(cell).is_none() {
                        let mut object = random_object(rng, cell);
                        object.size = Size::Large;
                        ops.push(EditOp::Add { object, anchor: o.cell });
                    }
                }
            }
        }
    }
    // pick the operation kind first so every kind is equally likely
    let kinds: Vec<u8> = (0u8..4)
        .filter(|&k| ops.iter().any(|op| op_kind(op) == k))
        .collect();
    let k = *kinds.choose(rng)?;
    let pool: Vec<&EditOp> = ops.iter().filter(|op| op_kind(op) == k).collect();
    pool.choose(rng).map(|op| **op)
}

fn op_kind(op: &EditOp) -> u8 {
    match op {
        EditOp::Add { .. } => 0,
        EditOp::Remove { .. } => 1,
        EditOp::Recolor { .. } => 2,
        EditOp::Move { .. } => 3,
    }
}

/// Draws one sample of `kind` from the synthetic generators.
pub fn generate<R: Rng>(kind: TaskKind, rng: &mut R, split: Split, glyphs: &GlyphLibrary) -> TaskSample {
    let n = rng.random_range(1..=3);
    let result = match kind {
        TaskKind::T2i => make_t2i(&random_scene(rng, split, n, &[])),
        TaskKind::Inpaint => {
            let scene = random_scene(rng, split, n, &[]);
            let region = Region::random(rng, 3);
            make_inpaint(&scene, region, rng.random_bool(0.5))
        }
        TaskKind::Outpaint => {
            let scene = random_scene(rng, split, n, &[]);
            let keep = Region::random(rng, 3);
            make_outpaint(&scene, keep, rng.random_bool(0.5))
        }
        TaskKind::Edit => loop {
            let scene = random_scene(rng, split, n, &[]);
            if let Some(op) = random_edit(rng, &scene) {
                break make_edit(&scene, op);
            }
        },
        TaskKind::Depth => make_depth(&random_scene(rng, split, n, &[])),
        TaskKind::Pose => make_pose(&random_scene(rng, split, n, &[])),
        TaskKind::Seg => {
            let scene = random_scene(rng, split, n, &[]);
            let color = *Color::ALL.choose(rng).unwrap();
            let unique: Vec<Shape> = Shape::ALL
                .into_iter()
                .filter(|&s| scene.objects.iter().filter(|o| o.shape == s).count() == 1)
                .collect();
            let target = if rng.random_bool(0.25) || unique.is_empty() {
                SegTarget::Background
            } else {
                SegTarget::Object(*unique.choose(rng).unwrap())
            };
            make_seg(&scene, target, color)
        }
        TaskKind::Layout => make_layout(&random_scene(rng, split, n, &[])),
        TaskKind::Id => {
            let glyph = rng.random_range(0..glyphs.len());
            let slot = *ID_SLOTS.choose(rng).unwrap();
            let k = rng.random_range(0..=2);
            let scene = random_scene(rng, split, k, &[slot]);
            make_id(glyphs, glyph, slot, &scene)
        }
    };
    result.expect("generated scenes satisfy constructor preconditions")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::Vocabulary;
    use rand::SeedableRng;

    fn obj(shape: Shape, color: Color, row: usize, col: usize) -> Object {
        Object {
            shape,
            color,
            cell: Cell::new(row, col),
            size: Size::Large,
        }
    }

    fn two() -> SceneSpec {
        SceneSpec::new(vec![obj(Shape::Circle, Color::Red, 1, 1), obj(Shape::Square, Color::Blue, 2, 3)]).unwrap()
    }

    #[test]
    fn t2i_conventions() {
        let s = make_t2i(&two()).unwrap();
        assert!(s.input_image.data.iter().all(|&v| v == -1.0));
        assert_eq!(s.input_mask.area(), CANVAS * CANVAS);
        assert_eq!(s.target_image, render(&two()).unwrap());
        assert!(s.prompt.starts_with("<t2i> "));
    }

    #[test]
    fn painting_masks() {
        let region = Region {
            top: 1,
            left: 0,
            rows: 2,
            cols: 3,
        };
        let s = make_inpaint(&two(), region, true).unwrap();
        assert_eq!(s.input_mask.area(), region.area());
        let o = make_outpaint(&two(), region, false).unwrap();
        assert_eq!(o.input_mask.area(), CANVAS * CANVAS - region.area());
        assert_eq!(o.prompt, "");
        for y in 0..CANVAS {
            for x in 0..CANVAS {
                if !s.input_mask.get(y, x) {
                    assert_eq!(s.input_image.pixel(y, x), s.target_image.pixel(y, x));
                }
            }
        }
        let full = make_inpaint(&two(), Region::FULL, true).unwrap();
        let t = make_t2i(&two()).unwrap();
        assert_eq!(
            (&full.prompt, &full.input_image, &full.input_mask, &full.target_image),
            (&t.prompt, &t.input_image, &t.input_mask, &t.target_image)
        );
        assert!(make_inpaint(&two(), Region { top: 3, left: 0, rows: 2, cols: 1 }, true).is_err());
    }

    #[test]
    fn edit_prompts_and_results() {
        let s = two();
        let recolor = EditOp::Recolor {
            cell: Cell::new(1, 1),
            color: Color::Green,
        };
        let e = make_edit(&s, recolor).unwrap();
        assert_eq!(e.prompt, "<ie> recolor the circle to green");
        let st = super::super::scene::stencil(Shape::Circle, Size::Large);
        for y in 0..CANVAS {
            for x in 0..CANVAS {
                let on = y / CELL == 1 && x / CELL == 1 && st[(y % CELL) * CELL + x % CELL];
                assert_eq!(e.input_image.pixel(y, x) != e.target_image.pixel(y, x), on);
            }
        }
        let same = make_edit(&s, EditOp::Recolor { cell: Cell::new(1, 1), color: Color::Red }).unwrap();
        assert_eq!(same.input_image, same.target_image);
        let rm = make_edit(&s, EditOp::Remove { cell: Cell::new(2, 3) }).unwrap();
        assert_eq!(rm.prompt, "<ie> remove the square");
        assert_eq!(rm.target_image, render(&SceneSpec::new(vec![s.objects[0]]).unwrap()).unwrap());
        let add = EditOp::Add {
            object: obj(Shape::Cross, Color::White, 1, 0),
            anchor: Cell::new(1, 1),
        };
        assert_eq!(make_edit(&s, add).unwrap().prompt, "<ie> add a white cross left of the circle");
        let mv = EditOp::Move { from: Cell::new(1, 1), edge: Edge::Top };
        assert_eq!(make_edit(&s, mv).unwrap().prompt, "<ie> move the circle to the top");
        let twins = SceneSpec::new(vec![obj(Shape::Circle, Color::Red, 0, 0), obj(Shape::Circle, Color::Red, 3, 3)]).unwrap();
        assert!(matches!(make_edit(&twins, EditOp::Remove { cell: Cell::new(0, 0) }), Err(Error::Referent(_))));
        let mixed = SceneSpec::new(vec![obj(Shape::Circle, Color::Red, 0, 0), obj(Shape::Circle, Color::Blue, 3, 3)]).unwrap();
        assert_eq!(make_edit(&mixed, EditOp::Remove { cell: Cell::new(0, 0) }).unwrap().prompt, "<ie> remove the red circle");
    }

    #[test]
    fn depth_and_pose() {
        assert!(make_depth(&SceneSpec::default()).unwrap().target_image.data.iter().all(|&v| v == -1.0));
        assert!(make_pose(&SceneSpec::default()).unwrap().target_image.data.iter().all(|&v| v == -1.0));
        let mut levels = Vec::new();
        for row in 0..GRID {
            for size in Size::ALL {
                levels.push(depth_level(row, size));
            }
        }
        assert_eq!(*levels.iter().max().unwrap(), depth_level(3, Size::Large));
        assert_eq!(depth_level(3, Size::Large), 240);
        let d = make_depth(&two()).unwrap();
        let near = crate::imageio::level_to_unit(depth_level(2, Size::Large));
        let far = crate::imageio::level_to_unit(depth_level(1, Size::Large));
        assert_eq!(d.target_image.get(2 * CELL + 8, 3 * CELL + 8, 0), near);
        assert_eq!(d.target_image.get(CELL + 8, CELL + 8, 0), far);
        let p = make_pose(&two()).unwrap();
        let white = p.target_image.data.chunks(3).filter(|px| px[0] == 1.0).count();
        assert_eq!(white, 2 * (2 * 10 + 2 * 10 - 4));
    }

    #[test]
    fn seg_targets() {
        let s = make_seg(&two(), SegTarget::Object(Shape::Circle), Color::Green).unwrap();
        assert_eq!(s.prompt, "<seg> circle : green");
        let b = make_seg(&two(), SegTarget::Background, Color::Cyan).unwrap();
        let cov = render_coverage(&two());
        for y in 0..CANVAS {
            for x in 0..CANVAS {
                let want = if cov[y * CANVAS + x] { b.input_image.pixel(y, x).to_vec() } else { Color::Cyan.unit().to_vec() };
                assert_eq!(b.target_image.pixel(y, x), &want[..]);
            }
        }
        let twins = SceneSpec::new(vec![obj(Shape::Circle, Color::Red, 0, 0), obj(Shape::Circle, Color::Blue, 3, 3)]).unwrap();
        assert!(make_seg(&twins, SegTarget::Object(Shape::Circle), Color::Green).is_err());
        assert!(make_seg(&twins, SegTarget::Object(Shape::Square), Color::Green).is_err());
    }

    #[test]
    fn layout_blocks_match_cells() {
        let l = make_layout(&two()).unwrap();
        assert_eq!(l.prompt, "<lg> a red circle left of a blue square circle in blue block square in green block");
        assert_eq!(l.input_image.pixel(CELL + 3, CELL + 3), &Color::Blue.unit());
        assert_eq!(l.input_image.pixel(2 * CELL, 3 * CELL), &Color::Green.unit());
    }

    #[test]
    fn id_samples() {
        let lib = GlyphLibrary::default();
        let a = make_id(&lib, 3, Cell::new(0, 0), &SceneSpec::default()).unwrap();
        let b = make_id(&lib, 3, Cell::new(3, 3), &two()).unwrap();
        assert_eq!(a.external, b.external);
        assert_eq!(b.prompt, "<t2i> <p> <p> <p> <p> in the bottom right and a red circle left of a blue square");
        assert_eq!(b.target_image.pixel(3 * CELL, 3 * CELL), lib.get(3).unwrap().pixel(0, 0));
        assert!(make_id(&lib, 64, Cell::new(0, 0), &SceneSpec::default()).is_err());
        assert!(make_id(&lib, 0, Cell::new(1, 1), &SceneSpec::default()).is_err());
    }

    #[test]
    fn generators_are_pure_and_tokenizable() {
        let vocab = Vocabulary::default();
        let lib = GlyphLibrary::default();
        for kind in TaskKind::ALL {
            let mut r1 = rand_chacha::ChaCha8Rng::seed_from_u64(9);
            let mut r2 = rand_chacha::ChaCha8Rng::seed_from_u64(9);
            for _ in 0..40 {
                let a = generate(kind, &mut r1, Split::Train, &lib);
                let b = generate(kind, &mut r2, Split::Train, &lib);
                assert_eq!(a, b);
                assert_eq!(a.kind, kind);
                let toks = vocab.tokenize(&a.prompt, 24).unwrap();
                if a.prompt.is_empty() {
                    assert!(matches!(kind, TaskKind::Inpaint | TaskKind::Outpaint));
                } else {
                    assert_eq!(vocab.token(toks.ids[0]).unwrap(), kind.task_token(), "{}", a.prompt);
                }
                if kind == TaskKind::Id {
                    assert_eq!(toks.positions_of(vocab.placeholder_id()).len(), 4);
                }
            }
        }
    }

    #[test]
    fn longest_layout_prompt_fits() {
        let s = SceneSpec::new(vec![
            obj(Shape::Triangle, Color::Magenta, 0, 0),
            obj(Shape::Square, Color::Yellow, 1, 1),
            obj(Shape::Circle, Color::Black, 2, 2),
        ])
        .unwrap();
        let l = make_layout(&s).unwrap();
        assert_eq!(Vocabulary::default().tokenize(&l.prompt, 24).unwrap().ids.len(), 24);
    }

    #[test]
    fn held_out_split() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            assert!(is_held_out(&random_scene(&mut rng, Split::Eval, 1, &[])));
            assert!(!is_held_out(&random_scene(&mut rng, Split::Train, 2, &[])));
        }
    }
}
