//! Scene model and rasterizer of the shapes world.
//!
//! A 64x64 canvas is split into a 4x4 grid of 16-pixel cells. Each cell
//! holds at most one object drawn from a fixed stencil set. Stencils are
//! evaluated at pixel centres relative to the cell centre.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, ImageTensor};
use crate::imageio::level_to_unit;

pub const CANVAS: usize = 64;
pub const GRID: usize = 4;
pub const CELL: usize = CANVAS / GRID;
pub const MAX_OBJECTS: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
    Cross,
}

impl Shape {
    pub const ALL: [Shape; 4] = [Shape::Circle, Shape::Square, Shape::Triangle, Shape::Cross];

    pub fn word(self) -> &'static str {
        match self {
            Shape::Circle => "circle",
            Shape::Square => "square",
            Shape::Triangle => "triangle",
            Shape::Cross => "cross",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Color {
    Red,
    Green,
    Blue,
    Yellow,
    White,
    Black,
    Cyan,
    Magenta,
}

impl Color {
    pub const ALL: [Color; 8] = [
        Color::Red,
        Color::Green,
        Color::Blue,
        Color::Yellow,
        Color::White,
        Color::Black,
        Color::Cyan,
        Color::Magenta,
    ];

    pub fn word(self) -> &'static str {
        match self {
            Color::Red => "red",
            Color::Green => "green",
            Color::Blue => "blue",
            Color::Yellow => "yellow",
            Color::White => "white",
            Color::Black => "black",
            Color::Cyan => "cyan",
            Color::Magenta => "magenta",
        }
    }

    /// Palette value. Black objects are charcoal so they stay visible on
    /// the black background.
    pub fn rgb(self) -> [u8; 3] {
        match self {
            Color::Red => [255, 0, 0],
            Color::Green => [0, 255, 0],
            Color::Blue => [0, 0, 255],
            Color::Yellow => [255, 255, 0],
            Color::White => [255, 255, 255],
            Color::Black => [88, 88, 88],
            Color::Cyan => [0, 255, 255],
            Color::Magenta => [255, 0, 255],
        }
    }

    pub fn unit(self) -> [f32; 3] {
        self.rgb().map(level_to_unit)
    }
}

pub const BACKGROUND_RGB: [u8; 3] = [0, 0, 0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Size {
    Small,
    Large,
}

impl Size {
    pub const ALL: [Size; 2] = [Size::Small, Size::Large];
}

macro_rules! word_parse {
    ($ty:ty, $what:literal) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                <$ty>::ALL
                    .into_iter()
                    .find(|v| format!("{v}") == s)
                    .ok_or_else(|| Error::Invalid(format!(concat!("unknown ", $what, " `{}`"), s)))
            }
        }
    };
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

impl fmt::Display for Color {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.word())
    }
}

impl fmt::Display for Size {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Size::Small => "small",
            Size::Large => "large",
        })
    }
}

word_parse!(Shape, "shape");
word_parse!(Color, "color");
word_parse!(Size, "size");

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub row: usize,
    pub col: usize,
}

impl Cell {
    pub const fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }

    pub fn all() -> impl Iterator<Item = Cell> {
        (0..GRID).flat_map(|r| (0..GRID).map(move |c| Cell::new(r, c)))
    }

    pub fn is_valid(self) -> bool {
        self.row < GRID && self.col < GRID
    }

    /// Top-left pixel.
    pub fn origin(self) -> (usize, usize) {
        (self.row * CELL, self.col * CELL)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Object {
    pub shape: Shape,
    pub color: Color,
    pub cell: Cell,
    pub size: Size,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<Object>,
}

impl SceneSpec {
    pub fn new(objects: Vec<Object>) -> Result<Self> {
        let s = Self { objects };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.objects.len() > MAX_OBJECTS {
            return Err(Error::Invalid(format!(
                "scene has {} objects, limit is {MAX_OBJECTS}",
                self.objects.len()
            )));
        }
        for (i, o) in self.objects.iter().enumerate() {
            if !o.cell.is_valid() {
                return Err(Error::Invalid(format!("cell {:?} outside the grid", o.cell)));
            }
            if self.objects[..i].iter().any(|p| p.cell == o.cell) {
                return Err(Error::Invalid(format!("two objects share cell {:?}", o.cell)));
            }
        }
        Ok(())
    }

    pub fn at(&self, cell: Cell) -> Option<&Object> {
        self.objects.iter().find(|o| o.cell == cell)
    }

    pub fn free_cells(&self) -> Vec<Cell> {
        Cell::all().filter(|&c| self.at(c).is_none()).collect()
    }

    /// Random scene with `n` objects in distinct cells, avoiding `exclude`.
    pub fn random<R: Rng>(rng: &mut R, n: usize, exclude: &[Cell]) -> Self {
        let mut cells: Vec<Cell> = Cell::all().filter(|c| !exclude.contains(c)).collect();
        cells.shuffle(rng);
        let objects = cells
            .into_iter()
            .take(n)
            .map(|cell| random_object(rng, cell))
            .collect();
        Self { objects }
    }
}

pub fn random_object<R: Rng>(rng: &mut R, cell: Cell) -> Object {
    Object {
        shape: Shape::ALL[rng.random_range(0..4)],
        color: Color::ALL[rng.random_range(0..8)],
        cell,
        size: Size::ALL[rng.random_range(0..2)],
    }
}

/// Offset of pixel `i` of a cell from the cell centre.
fn centred(i: usize) -> f64 {
    i as f64 + 0.5 - CELL as f64 / 2.0
}

fn covers(shape: Shape, size: Size, y: usize, x: usize) -> bool {
    let (dy, dx) = (centred(y), centred(x));
    let large = size == Size::Large;
    match shape {
        Shape::Circle => {
            let r = if large { 6.5 } else { 4.0 };
            dy * dy + dx * dx <= r * r
        }
        Shape::Square => {
            let h = if large { 5.5 } else { 3.5 };
            dy.abs() <= h && dx.abs() <= h
        }
        Shape::Triangle => {
            let a = if large { 6.5 } else { 4.0 };
            dy >= -a && dy <= a && dx.abs() <= (dy + a) / 2.0
        }
        Shape::Cross => {
            let (w, l) = if large { (1.5, 6.5) } else { (0.5, 4.0) };
            (dy.abs() <= w && dx.abs() <= l) || (dx.abs() <= w && dy.abs() <= l)
        }
    }
}

/// Cell-local `CELL x CELL` coverage mask, row-major.
pub fn stencil(shape: Shape, size: Size) -> &'static [bool] {
    static TABLE: OnceLock<Vec<Vec<bool>>> = OnceLock::new();
    let table = TABLE.get_or_init(|| {
        Shape::ALL
            .iter()
            .flat_map(|&s| Size::ALL.map(move |z| (s, z)))
            .map(|(s, z)| {
                (0..CELL * CELL)
                    .map(|i| covers(s, z, i / CELL, i % CELL))
                    .collect()
            })
            .collect()
    });
    let si = Shape::ALL.iter().position(|&s| s == shape).unwrap();
    let zi = if size == Size::Large { 1 } else { 0 };
    &table[si * 2 + zi]
}

/// Pose marker: a white plus two pixels thick and ten long.
pub fn marker_covers(y: usize, x: usize) -> bool {
    let (dy, dx) = (centred(y), centred(x));
    (dy.abs() <= 1.0 && dx.abs() <= 5.0) || (dx.abs() <= 1.0 && dy.abs() <= 5.0)
}

pub fn blank_canvas() -> ImageTensor {
    Grid::filled(CANVAS, CANVAS, 3, level_to_unit(0))
}

pub fn put_pixel(img: &mut ImageTensor, y: usize, x: usize, rgb: [u8; 3]) {
    for (c, &v) in rgb.iter().enumerate() {
        img.set(y, x, c, level_to_unit(v));
    }
}

/// Paints `rgb` over the pixels of a stencil placed at `cell`.
pub fn paint_stencil(img: &mut ImageTensor, cell: Cell, shape: Shape, size: Size, rgb: [u8; 3]) {
    let (y0, x0) = cell.origin();
    for (i, &on) in stencil(shape, size).iter().enumerate() {
        if on {
            put_pixel(img, y0 + i / CELL, x0 + i % CELL, rgb);
        }
    }
}

pub fn fill_cell(img: &mut ImageTensor, cell: Cell, rgb: [u8; 3]) {
    let (y0, x0) = cell.origin();
    for y in y0..y0 + CELL {
        for x in x0..x0 + CELL {
            put_pixel(img, y, x, rgb);
        }
    }
}

/// Palette objects on black.
pub fn render(scene: &SceneSpec) -> Result<ImageTensor> {
    scene.validate()?;
    let mut img = blank_canvas();
    for o in &scene.objects {
        paint_stencil(&mut img, o.cell, o.shape, o.size, o.color.rgb());
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn obj(shape: Shape, color: Color, row: usize, col: usize, size: Size) -> Object {
        Object {
            shape,
            color,
            cell: Cell::new(row, col),
            size,
        }
    }

    #[test]
    fn empty_scene_is_black() {
        let img = render(&SceneSpec::default()).unwrap();
        assert!(img.data.iter().all(|&v| v == -1.0));
    }

    #[test]
    fn overlapping_cells_rejected() {
        let a = obj(Shape::Circle, Color::Red, 1, 1, Size::Large);
        let b = obj(Shape::Square, Color::Blue, 1, 1, Size::Small);
        assert!(SceneSpec::new(vec![a, b]).is_err());
        assert!(SceneSpec::new(vec![a; 4]).is_err());
        assert!(SceneSpec::new(vec![obj(Shape::Circle, Color::Red, 4, 0, Size::Large)]).is_err());
    }

    #[test]
    fn stencils_are_distinct_and_centred() {
        let mut seen = HashSet::new();
        for s in Shape::ALL {
            for z in Size::ALL {
                let st = stencil(s, z);
                assert!(seen.insert(st.to_vec()), "{s} {z}");
                let area = st.iter().filter(|&&v| v).count();
                assert!(area >= 20, "{s} {z} area {area}");
                // left-right symmetric
                for y in 0..CELL {
                    for x in 0..CELL {
                        assert_eq!(st[y * CELL + x], st[y * CELL + CELL - 1 - x]);
                    }
                }
                // border rows and columns stay empty
                assert!((0..CELL).all(|i| !st[i] && !st[i * CELL] && !st[(CELL - 1) * CELL + i]));
            }
        }
        assert_eq!(stencil(Shape::Square, Size::Large).iter().filter(|&&v| v).count(), 144);
        assert_eq!(stencil(Shape::Square, Size::Small).iter().filter(|&&v| v).count(), 64);
    }

    #[test]
    fn render_paints_only_the_stencil() {
        let scene = SceneSpec::new(vec![obj(Shape::Triangle, Color::Cyan, 2, 3, Size::Small)]).unwrap();
        let img = render(&scene).unwrap();
        let st = stencil(Shape::Triangle, Size::Small);
        for y in 0..CANVAS {
            for x in 0..CANVAS {
                let inside = y / CELL == 2 && x / CELL == 3 && st[(y % CELL) * CELL + x % CELL];
                let want = if inside { Color::Cyan.unit() } else { [-1.0; 3] };
                assert_eq!(img.pixel(y, x), &want);
            }
        }
    }

    #[test]
    fn words_round_trip() {
        for s in Shape::ALL {
            assert_eq!(s.word().parse::<Shape>().unwrap(), s);
        }
        for c in Color::ALL {
            assert_eq!(c.word().parse::<Color>().unwrap(), c);
        }
        assert!("oval".parse::<Shape>().is_err());
    }

    #[test]
    fn random_scenes_are_valid() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for n in 0..=3 {
            for _ in 0..50 {
                let s = SceneSpec::random(&mut rng, n, &[Cell::new(0, 0)]);
                assert_eq!(s.objects.len(), n);
                s.validate().unwrap();
                assert!(s.at(Cell::new(0, 0)).is_none());
            }
        }
    }
}
