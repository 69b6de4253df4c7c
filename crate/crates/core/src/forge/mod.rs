//! Synthetic shapes world: scenes, rasterizer, task samples and verifiers.

pub mod dataset;
pub mod describe;
pub mod glyph;
pub mod scene;
pub mod tasks;
pub mod verify;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use dataset::{read_index, write_dataset, DatasetRecord, INDEX_FILE};
pub use describe::{describe, Description, Phrase, Relation};
pub use glyph::GlyphLibrary;
pub use scene::{render, Cell, Color, Object, SceneSpec, Shape, Size, CANVAS};
pub use tasks::{
    generate, make_depth, make_edit, make_id, make_inpaint, make_layout, make_outpaint, make_pose, make_seg, make_t2i,
    EditOp, Edge, Region, SegTarget, Split, TaskMeta, TaskSample,
};
pub use verify::{verify, CheckName, VerificationReport, VerifyConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    T2i,
    Inpaint,
    Outpaint,
    Edit,
    Depth,
    Pose,
    Seg,
    Layout,
    Id,
}

impl TaskKind {
    pub const ALL: [TaskKind; 9] = [
        TaskKind::T2i,
        TaskKind::Inpaint,
        TaskKind::Outpaint,
        TaskKind::Edit,
        TaskKind::Depth,
        TaskKind::Pose,
        TaskKind::Seg,
        TaskKind::Layout,
        TaskKind::Id,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::T2i => "t2i",
            TaskKind::Inpaint => "inpaint",
            TaskKind::Outpaint => "outpaint",
            TaskKind::Edit => "edit",
            TaskKind::Depth => "depth",
            TaskKind::Pose => "pose",
            TaskKind::Seg => "seg",
            TaskKind::Layout => "layout",
            TaskKind::Id => "id",
        }
    }

    /// Leading prompt token.
    pub fn task_token(self) -> &'static str {
        match self {
            TaskKind::T2i | TaskKind::Inpaint | TaskKind::Outpaint | TaskKind::Id => "<t2i>",
            TaskKind::Edit => "<ie>",
            TaskKind::Depth => "<depth>",
            TaskKind::Pose => "<pose>",
            TaskKind::Seg => "<seg>",
            TaskKind::Layout => "<lg>",
        }
    }

    /// Whether the input image carries content the output depends on.
    /// Text-to-image and identity samples get a blank input.
    pub fn has_visual_condition(self) -> bool {
        !matches!(self, TaskKind::T2i | TaskKind::Id)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        TaskKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown task kind `{s}`")))
    }
}
