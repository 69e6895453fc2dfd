//! Synthetic clips of a single moving shape with exact ground-truth motion,
//! the on-disk dataset format, and epoch iteration over frames and windows.

mod format;
mod render;
mod windows;

pub use format::{read_dataset, write_dataset, Dataset};
pub use render::{generate_clip_range, generate_dataset, render_clip, Clip, ClipDistribution, ClipSpec, Displacement, ShapeKind};
pub use windows::{iterate_windows, IterMode, WindowRef};
