use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::diffusion::{Frame, FrameShape};
use crate::rng::{keyed_rng, Stream};
use crate::{Error, Result};

use super::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    GaussianBlob,
    Rectangle,
    Bar,
}

/// Inter-frame translation in pixels, `x` to the right and `y` down.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Displacement {
    pub dx: f64,
    pub dy: f64,
}

impl Displacement {
    pub fn norm_sq(&self) -> f64 {
        self.dx * self.dx + self.dy * self.dy
    }
}

/// Everything needed to render one clip. Positions are in continuous pixel
/// coordinates; pixel `(r, c)` is sampled at `(y, x) = (r, c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipSpec {
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    pub shape_kind: ShapeKind,
    pub intensity: f64,
    /// Blob standard deviation, or rectangle/bar half extents `(along, across)`.
    pub extent: (f64, f64),
    /// Edge softness of rectangles and bars.
    pub softness: f64,
    pub start: (f64, f64),
    pub rotation: f64,
    pub rotation_rate: f64,
    pub scale: f64,
    pub scale_rate: f64,
    /// Displacement applied between frame `i` and `i + 1`.
    pub motion: Vec<Displacement>,
}

/// A rendered clip and the motion that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub frames: Vec<Frame>,
    pub true_displacement: Vec<Displacement>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl ClipSpec {
    fn scale_at(&self, i: usize) -> f64 {
        self.scale + self.scale_rate * i as f64
    }

    /// Radius of the disc outside which the shape is considered absent.
    pub fn support_radius(&self, i: usize) -> f64 {
        let s = self.scale_at(i);
        match self.shape_kind {
            ShapeKind::GaussianBlob => 2.0 * self.extent.0 * s,
            ShapeKind::Rectangle | ShapeKind::Bar => {
                (self.extent.0.powi(2) + self.extent.1.powi(2)).sqrt() * s + self.softness
            }
        }
    }

    pub fn positions(&self) -> Vec<(f64, f64)> {
        let mut p = self.start;
        let mut out = vec![p];
        for d in &self.motion {
            p = (p.0 + d.dx, p.1 + d.dy);
            out.push(p);
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_frames < 1 || self.height < 1 || self.width < 1 {
            return Err(Error::Config("clip needs frames and a non-empty canvas".into()));
        }
        if self.motion.len() + 1 != self.num_frames {
            return Err(Error::Config(format!(
                "{} frames need {} displacements, got {}",
                self.num_frames,
                self.num_frames - 1,
                self.motion.len()
            )));
        }
        if self.motion.iter().any(|d| !(d.dx.is_finite() && d.dy.is_finite())) {
            return Err(Error::Config("non-finite displacement".into()));
        }
        if !(0.0..=1.0).contains(&self.intensity) {
            return Err(Error::Config("intensity must lie in [0, 1]".into()));
        }
        for (i, (x, y)) in self.positions().into_iter().enumerate() {
            let r = self.support_radius(i);
            let inside = x - r >= 0.0
                && y - r >= 0.0
                && x + r <= (self.width - 1) as f64
                && y + r <= (self.height - 1) as f64;
            if self.scale_at(i) <= 0.0 || !inside {
                return Err(Error::Config(format!("shape leaves the frame at index {i}")));
            }
        }
        Ok(())
    }

    fn intensity_at(&self, i: usize, x: f64, y: f64, (cx, cy): (f64, f64)) -> f64 {
        let s = self.scale_at(i);
        let (dx, dy) = (x - cx, y - cy);
        match self.shape_kind {
            ShapeKind::GaussianBlob => {
                let sigma = self.extent.0 * s;
                self.intensity * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
            }
            ShapeKind::Rectangle | ShapeKind::Bar => {
                let theta = self.rotation + self.rotation_rate * i as f64;
                let (sin, cos) = theta.sin_cos();
                let u = cos * dx + sin * dy;
                let v = -sin * dx + cos * dy;
                let along = sigmoid((self.extent.0 * s - u.abs()) / self.softness);
                let across = sigmoid((self.extent.1 * s - v.abs()) / self.softness);
                self.intensity * along * across
            }
        }
    }
}

/// Renders every frame by evaluating the shape function at pixel coordinates.
pub fn render_clip(spec: &ClipSpec) -> Result<Clip> {
    spec.validate()?;
    let shape = FrameShape::new(1, spec.height, spec.width);
    let frames = spec
        .positions()
        .into_iter()
        .enumerate()
        .map(|(i, center)| {
            let mut pixels = Vec::with_capacity(shape.len());
            for r in 0..spec.height {
                for c in 0..spec.width {
                    pixels.push(spec.intensity_at(i, c as f64, r as f64, center).clamp(0.0, 1.0));
                }
            }
            Frame::new(shape, pixels)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Clip { frames, true_displacement: spec.motion.clone() })
}

/// Sampling ranges for random clips.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipDistribution {
    pub num_frames: usize,
    pub height: usize,
    pub width: usize,
    pub kinds: Vec<ShapeKind>,
    /// Per-step speed is drawn from `[0, max_speed]` pixels/frame.
    pub max_speed: f64,
    pub max_rotation_rate: f64,
    pub max_scale_rate: f64,
}

impl Default for ClipDistribution {
    fn default() -> Self {
        Self {
            num_frames: 10,
            height: 16,
            width: 16,
            kinds: vec![ShapeKind::GaussianBlob, ShapeKind::Rectangle, ShapeKind::Bar],
            max_speed: 3.0,
            max_rotation_rate: 0.08,
            max_scale_rate: 0.0,
        }
    }
}

impl ClipDistribution {
    /// Draws a clip whose speed ramps smoothly between two levels in
    /// `[0, max_speed]`, so clips mix slow and fast segments. The heading
    /// turns slowly and reflects off the admissible box.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Result<ClipSpec> {
        if self.kinds.is_empty() || self.num_frames < 1 || !(self.max_speed >= 0.0) {
            return Err(Error::Config("invalid clip distribution".into()));
        }
        let kind = self.kinds[rng.random_range(0..self.kinds.len())];
        let (extent, softness) = match kind {
            ShapeKind::GaussianBlob => ((rng.random_range(1.0..1.8), 0.0), 0.0),
            ShapeKind::Rectangle => ((rng.random_range(1.5..2.6), rng.random_range(1.2..2.2)), 0.45),
            ShapeKind::Bar => ((rng.random_range(2.8..3.8), rng.random_range(0.6..0.9)), 0.45),
        };
        let intensity = rng.random_range(0.6..1.0);
        let n = self.num_frames;
        let scale_rate = if self.max_scale_rate > 0.0 {
            rng.random_range(-self.max_scale_rate..=self.max_scale_rate)
        } else {
            0.0
        };
        let rotation_rate = match kind {
            ShapeKind::GaussianBlob => 0.0,
            _ if self.max_rotation_rate > 0.0 => rng.random_range(-self.max_rotation_rate..=self.max_rotation_rate),
            _ => 0.0,
        };
        let mut spec = ClipSpec {
            num_frames: n,
            height: self.height,
            width: self.width,
            shape_kind: kind,
            intensity,
            extent,
            softness,
            start: (0.0, 0.0),
            rotation: rng.random_range(0.0..PI),
            rotation_rate,
            scale: 1.0,
            scale_rate,
            motion: Vec::with_capacity(n.saturating_sub(1)),
        };
        let radius = (0..n).map(|i| spec.support_radius(i)).fold(0.0, f64::max);
        let (lo_x, hi_x) = (radius, (self.width - 1) as f64 - radius);
        let (lo_y, hi_y) = (radius, (self.height - 1) as f64 - radius);
        if hi_x < lo_x || hi_y < lo_y {
            return Err(Error::Config("shape does not fit the canvas".into()));
        }
        let mut pos = (rng.random_range(lo_x..=hi_x), rng.random_range(lo_y..=hi_y));
        spec.start = pos;
        let v0 = rng.random_range(0.0..=self.max_speed);
        let v1 = rng.random_range(0.0..=self.max_speed);
        let mut heading = rng.random_range(0.0..2.0 * PI);
        let turn = rng.random_range(-0.3..0.3);
        let steps = n.saturating_sub(1);
        for i in 0..steps {
            let phase = if steps > 1 { i as f64 / (steps - 1) as f64 } else { 0.0 };
            let speed = v0 + (v1 - v0) * 0.5 * (1.0 - (PI * phase).cos());
            let (s, c) = heading.sin_cos();
            let mut d = Displacement { dx: speed * c, dy: speed * s };
            // reflect whatever component would carry the shape out of the box
            if pos.0 + d.dx < lo_x || pos.0 + d.dx > hi_x {
                d.dx = -d.dx;
                heading = PI - heading;
            }
            if pos.1 + d.dy < lo_y || pos.1 + d.dy > hi_y {
                d.dy = -d.dy;
                heading = -heading;
            }
            // a reflected step can still overshoot a narrow box; clamp it
            let nx = (pos.0 + d.dx).clamp(lo_x, hi_x);
            let ny = (pos.1 + d.dy).clamp(lo_y, hi_y);
            d = Displacement { dx: nx - pos.0, dy: ny - pos.1 };
            pos = (nx, ny);
            spec.motion.push(d);
            heading += turn;
        }
        Ok(spec)
    }
}

/// `n_clips` clips, clip `i` drawn from a generator keyed by `(seed, i)`.
pub fn generate_dataset(n_clips: usize, dist: &ClipDistribution, seed: u64) -> Result<Dataset> {
    generate_clip_range(0..n_clips, dist, seed)
}

/// Clips with generator keys `(seed, i)` for `i` in `indices`. Disjoint index
/// ranges under one seed give disjoint splits.
pub fn generate_clip_range(indices: std::ops::Range<usize>, dist: &ClipDistribution, seed: u64) -> Result<Dataset> {
    if indices.is_empty() {
        return Err(Error::Config("dataset needs at least one clip".into()));
    }
    let clips = indices
        .map(|i| {
            let mut rng = keyed_rng(seed, Stream::Dataset, i as u64, 0);
            render_clip(&dist.sample(&mut rng)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(clips)
}
