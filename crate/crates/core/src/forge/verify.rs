//! Programmatic verifiers.
//!
//! Objects are recovered per cell: every pixel is snapped to the nearest
//! palette colour or the background, and the foreground set is matched
//! against all stencils by intersection over union.

use std::fmt;

use super::describe::Description;
use super::glyph::max_ncc;
use super::scene::{stencil, Cell, Color, Shape, Size, BACKGROUND_RGB, CELL};
use super::tasks::{TaskMeta, TaskSample};
use super::TaskKind;
use crate::grid::ImageTensor;
use crate::imageio::level_to_unit;

/// Pass thresholds, all in `[-1, 1]` pixel units where relevant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VerifyConfig {
    /// Minimum stencil IoU for an object to count as detected.
    pub match_score: f64,
    /// Minimum foreground pixels in a cell before matching.
    pub min_pixels: usize,
    pub max_rmse: f64,
    pub min_correlation: f64,
    pub min_agreement: f64,
    /// Per-channel tolerance for a pixel to agree with the oracle.
    pub pixel_tolerance: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self {
            match_score: 0.7,
            min_pixels: 12,
            max_rmse: 0.08,
            min_correlation: 0.6,
            min_agreement: 0.9,
            pixel_tolerance: 0.15,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum CheckName {
    Presence,
    Color,
    Count,
    Position,
    Layout,
    Instruction,
    Preservation,
    PixelAgreement,
    Correlation,
}

impl fmt::Display for CheckName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CheckName::Presence => "presence",
            CheckName::Color => "color",
            CheckName::Count => "count",
            CheckName::Position => "position",
            CheckName::Layout => "layout",
            CheckName::Instruction => "instruction",
            CheckName::Preservation => "preservation",
            CheckName::PixelAgreement => "pixel_agreement",
            CheckName::Correlation => "correlation",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Check {
    pub name: CheckName,
    pub passed: bool,
    /// Measured quantity (fraction satisfied, RMSE, agreement, correlation).
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerificationReport {
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl VerificationReport {
    fn from_checks(checks: Vec<Check>) -> Self {
        Self {
            passed: checks.iter().all(|c| c.passed),
            checks,
        }
    }

    pub fn get(&self, name: CheckName) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failed(&self) -> Vec<CheckName> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub cell: Cell,
    pub shape: Shape,
    pub size: Size,
    pub color: Color,
    pub score: f64,
}

/// Nearest palette colour, or `None` for background.
pub fn classify_pixel(px: &[f32]) -> Option<Color> {
    let dist = |rgb: [u8; 3]| -> f32 {
        rgb.iter()
            .zip(px)
            .map(|(&l, &v)| (level_to_unit(l) - v).powi(2))
            .sum()
    };
    let mut best = (dist(BACKGROUND_RGB), None);
    for c in Color::ALL {
        let d = dist(c.rgb());
        if d < best.0 {
            best = (d, Some(c));
        }
    }
    best.1
}

/// Per-pixel palette labels of one cell, row-major.
fn cell_labels(image: &ImageTensor, cell: Cell) -> Vec<Option<Color>> {
    let (y0, x0) = cell.origin();
    (0..CELL * CELL)
        .map(|i| classify_pixel(image.pixel(y0 + i / CELL, x0 + i % CELL)))
        .collect()
}

/// Foreground pixel count of a cell.
pub fn cell_foreground(image: &ImageTensor, cell: Cell) -> usize {
    cell_labels(image, cell).iter().filter(|l| l.is_some()).count()
}

pub fn detect_cell(image: &ImageTensor, cell: Cell, cfg: &VerifyConfig) -> Option<Detection> {
    let labels = cell_labels(image, cell);
    let fg = labels.iter().filter(|l| l.is_some()).count();
    if fg < cfg.min_pixels {
        return None;
    }
    let mut best: Option<(f64, Shape, Size)> = None;
    for shape in Shape::ALL {
        for size in Size::ALL {
            let st = stencil(shape, size);
            let (mut inter, mut union) = (0usize, 0usize);
            for (l, &on) in labels.iter().zip(st) {
                let f = l.is_some();
                inter += (f && on) as usize;
                union += (f || on) as usize;
            }
            let iou = inter as f64 / union as f64;
            if best.is_none_or(|b| iou > b.0) {
                best = Some((iou, shape, size));
            }
        }
    }
    let (score, shape, size) = best?;
    if score < cfg.match_score {
        return None;
    }
    let mut votes = [0usize; 8];
    for c in labels.iter().flatten() {
        votes[Color::ALL.iter().position(|x| x == c).unwrap()] += 1;
    }
    let top = (0..8).max_by_key(|&i| (votes[i], std::cmp::Reverse(i))).unwrap();
    Some(Detection {
        cell,
        shape,
        size,
        color: Color::ALL[top],
        score,
    })
}

pub fn detect(image: &ImageTensor, cfg: &VerifyConfig) -> Vec<Detection> {
    Cell::all().filter_map(|c| detect_cell(image, c, cfg)).collect()
}

fn check(name: CheckName, passed: bool, value: f64) -> Check {
    Check { name, passed, value }
}

fn fraction(ok: usize, n: usize) -> f64 {
    if n == 0 {
        1.0
    } else {
        ok as f64 / n as f64
    }
}

/// Presence, colour, count and position checks for a description.
pub fn description_checks(desc: &Description, found: &[Detection]) -> Vec<Check> {
    let with_shape = |s: Shape| found.iter().filter(move |d| d.shape == s);
    let matching = |s: Shape, c: Color| found.iter().filter(move |d| d.shape == s && d.color == c);

    let present = desc.phrases.iter().filter(|p| with_shape(p.shape).next().is_some()).count();
    let mut out = vec![check(
        CheckName::Presence,
        present == desc.phrases.len(),
        fraction(present, desc.phrases.len()),
    )];

    // only judged where the shape was found, so a missing object does not
    // also count as a colour error
    let judged: Vec<_> = desc.phrases.iter().filter(|p| with_shape(p.shape).next().is_some()).collect();
    let colored = judged.iter().filter(|p| matching(p.shape, p.color).next().is_some()).count();
    out.push(check(CheckName::Color, colored == judged.len(), fraction(colored, judged.len())));

    let counted: Vec<_> = desc.phrases.iter().filter(|p| p.count >= 2).collect();
    if !counted.is_empty() {
        let ok = counted
            .iter()
            .filter(|p| matching(p.shape, p.color).count() == p.count)
            .count();
        out.push(check(CheckName::Count, ok == counted.len(), fraction(ok, counted.len())));
    }

    if let (Some(rel), [a, b]) = (desc.relation, desc.phrases.as_slice()) {
        let ok = matching(a.shape, a.color).any(|da| {
            matching(b.shape, b.color)
                .any(|db| da.cell != db.cell && rel.holds((da.cell.row, da.cell.col), (db.cell.row, db.cell.col)))
        });
        out.push(check(CheckName::Position, ok, ok as u8 as f64));
    }
    out
}

/// RMSE over pixels selected by `keep`.
pub fn masked_rmse(a: &ImageTensor, b: &ImageTensor, keep: impl Fn(usize, usize) -> bool) -> f64 {
    let (mut acc, mut n) = (0.0f64, 0usize);
    for y in 0..a.height {
        for x in 0..a.width {
            if keep(y, x) {
                for (&p, &q) in a.pixel(y, x).iter().zip(b.pixel(y, x)) {
                    acc += ((p - q) as f64).powi(2);
                    n += 1;
                }
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        (acc / n as f64).sqrt()
    }
}

/// Fraction of pixels whose channels all lie within `tol` of the oracle.
pub fn pixel_agreement(a: &ImageTensor, b: &ImageTensor, tol: f64) -> f64 {
    let n = a.height * a.width;
    let ok = a
        .data
        .chunks(a.channels)
        .zip(b.data.chunks(b.channels))
        .filter(|(p, q)| p.iter().zip(q.iter()).all(|(&u, &v)| ((u - v) as f64).abs() <= tol))
        .count();
    fraction(ok, n)
}

fn prompt_description(prompt: &str) -> Option<Description> {
    let body = prompt.strip_prefix("<t2i>")?.trim();
    let body = match body.split_once(" in the ") {
        // identity prompts: "<p> <p> <p> <p> in the top left [and ...]"
        Some((_, rest)) => rest.splitn(3, ' ').nth(2)?.strip_prefix("and ").unwrap_or("").trim(),
        None => body,
    };
    Description::parse(body).ok()
}

fn edit_instruction(sample: &TaskSample, generated: &ImageTensor, cfg: &VerifyConfig) -> bool {
    let TaskMeta::Edit { op, result } = &sample.meta else {
        return false;
    };
    // every affected cell must look like the edited scene there
    op.affected_cells().into_iter().all(|cell| match result.at(cell) {
        Some(want) => {
            detect_cell(generated, cell, cfg).is_some_and(|d| d.shape == want.shape && d.color == want.color)
        }
        None => cell_foreground(generated, cell) < cfg.min_pixels,
    })
}

/// Kind-specific verification of `generated` against a sample.
pub fn verify(sample: &TaskSample, generated: &ImageTensor, cfg: &VerifyConfig) -> VerificationReport {
    if generated.dims() != sample.target_image.dims() {
        return VerificationReport {
            passed: false,
            checks: vec![check(CheckName::PixelAgreement, false, 0.0)],
        };
    }
    let mut checks = Vec::new();
    let v = &sample.input_image;
    match (&sample.kind, &sample.meta) {
        (TaskKind::T2i, _) => {
            if let Some(desc) = prompt_description(&sample.prompt) {
                checks.extend(description_checks(&desc, &detect(generated, cfg)));
            }
        }
        (TaskKind::Inpaint | TaskKind::Outpaint, _) => {
            let mask = &sample.input_mask;
            let rmse = masked_rmse(generated, v, |y, x| !mask.get(y, x));
            checks.push(check(CheckName::Preservation, rmse <= cfg.max_rmse, rmse));
            if let Some(desc) = prompt_description(&sample.prompt) {
                checks.extend(description_checks(&desc, &detect(generated, cfg)));
            }
        }
        (TaskKind::Edit, TaskMeta::Edit { op, .. }) => {
            let ok = edit_instruction(sample, generated, cfg);
            checks.push(check(CheckName::Instruction, ok, ok as u8 as f64));
            let touched = op.affected_cells();
            let rmse = masked_rmse(generated, v, |y, x| !touched.contains(&Cell::new(y / CELL, x / CELL)));
            checks.push(check(CheckName::Preservation, rmse <= cfg.max_rmse, rmse));
        }
        (TaskKind::Depth | TaskKind::Pose | TaskKind::Seg, _) => {
            let a = pixel_agreement(generated, &sample.target_image, cfg.pixel_tolerance);
            checks.push(check(CheckName::PixelAgreement, a >= cfg.min_agreement, a));
        }
        (TaskKind::Layout, TaskMeta::Layout { blocks }) => {
            let ok = blocks
                .iter()
                .filter(|(cell, _)| {
                    let want = sample.scene.at(*cell).map(|o| o.shape);
                    detect_cell(generated, *cell, cfg).is_some_and(|d| Some(d.shape) == want)
                })
                .count();
            checks.push(check(CheckName::Layout, ok == blocks.len(), fraction(ok, blocks.len())));
        }
        (TaskKind::Id, TaskMeta::Id { slot, .. }) => {
            let corr = sample.external.as_ref().map_or(0.0, |g| max_ncc(generated, g));
            checks.push(check(CheckName::Correlation, corr >= cfg.min_correlation, corr));
            if let Some(desc) = prompt_description(&sample.prompt) {
                if !desc.phrases.is_empty() {
                    let found: Vec<_> = detect(generated, cfg).into_iter().filter(|d| d.cell != *slot).collect();
                    checks.extend(description_checks(&desc, &found));
                }
            }
        }
        _ => checks.push(check(CheckName::Instruction, false, 0.0)),
    }
    VerificationReport::from_checks(checks)
}
