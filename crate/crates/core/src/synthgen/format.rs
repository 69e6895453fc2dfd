//! Little-endian dataset file:
//! `"TDV1" | u32 version=1 | u32 n_clips`, then per clip
//! `u32 n_frames | u16 H | u16 W | u16 C | n_frames*C*H*W f32 pixels |
//! (n_frames-1)*2 f32 displacements (dx, dy)`.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use super::render::{Clip, Displacement};
use crate::diffusion::{Frame, FrameShape};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"TDV1";
const VERSION: u32 = 1;

/// Clips sharing one frame shape. Pixel values are always representable in
/// `f32`, so a dataset survives a write/read cycle unchanged.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    clips: Vec<Clip>,
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

impl Dataset {
    pub fn new(clips: Vec<Clip>) -> Result<Self> {
        if let Some(first) = clips.iter().flat_map(|c| c.frames.first()).next() {
            let shape = first.shape();
            for clip in &clips {
                if let Some(bad) = clip.frames.iter().find(|f| f.shape() != shape) {
                    return Err(Error::shape(shape, bad.shape()));
                }
            }
        }
        for clip in &clips {
            if clip.frames.is_empty() {
                return Err(Error::Format { what: "dataset", detail: "clip without frames".into() });
            }
            if clip.true_displacement.len() + 1 != clip.frames.len() {
                return Err(Error::Format { what: "dataset", detail: "displacement count".into() });
            }
            if !clip.frames.iter().all(Frame::is_clean) {
                return Err(Error::Format { what: "dataset", detail: "pixel outside [0, 1]".into() });
            }
        }
        let clips = clips
            .into_iter()
            .map(|c| Clip {
                frames: c
                    .frames
                    .into_iter()
                    .map(|f| {
                        let shape = f.shape();
                        Frame::from_raw(shape, f.into_pixels().into_iter().map(quantize).collect())
                    })
                    .collect(),
                true_displacement: c
                    .true_displacement
                    .into_iter()
                    .map(|d| Displacement { dx: quantize(d.dx), dy: quantize(d.dy) })
                    .collect(),
            })
            .collect();
        Ok(Self { clips })
    }

    /// Wraps loose frames as single-frame clips (the sample-set layout).
    pub fn from_frames(frames: Vec<Frame>) -> Result<Self> {
        Self::new(
            frames
                .into_iter()
                .map(|f| Clip { frames: vec![f], true_displacement: vec![] })
                .collect(),
        )
    }

    pub fn clips(&self) -> &[Clip] {
        &self.clips
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    pub fn frame_shape(&self) -> Option<FrameShape> {
        self.clips.iter().flat_map(|c| c.frames.first()).next().map(Frame::shape)
    }

    pub fn frame_count(&self) -> usize {
        self.clips.iter().map(|c| c.frames.len()).sum()
    }

    pub fn all_frames(&self) -> impl Iterator<Item = &Frame> {
        self.clips.iter().flat_map(|c| c.frames.iter())
    }

    pub fn frame(&self, clip: usize, index: usize) -> &Frame {
        &self.clips[clip].frames[index]
    }
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(ds.clips.len() as u32).to_le_bytes())?;
    for clip in &ds.clips {
        let shape = clip.frames[0].shape();
        let dims = [shape.height, shape.width, shape.channels];
        if dims.iter().any(|&d| d > u16::MAX as usize) {
            return Err(Error::arg("frame dimension exceeds u16"));
        }
        w.write_all(&(clip.frames.len() as u32).to_le_bytes())?;
        for d in dims {
            w.write_all(&(d as u16).to_le_bytes())?;
        }
        for f in &clip.frames {
            for &p in f.pixels() {
                w.write_all(&(p as f32).to_le_bytes())?;
            }
        }
        for d in &clip.true_displacement {
            w.write_all(&(d.dx as f32).to_le_bytes())?;
            w.write_all(&(d.dy as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut cur = Cursor { bytes: &bytes, pos: 0 };
    if cur.take(4)? != MAGIC {
        return Err(bad("bad magic"));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let n_clips = cur.u32()? as usize;
    let mut clips = Vec::with_capacity(n_clips.min(1 << 20));
    for _ in 0..n_clips {
        let n_frames = cur.u32()? as usize;
        let h = cur.u16()? as usize;
        let w = cur.u16()? as usize;
        let c = cur.u16()? as usize;
        if n_frames == 0 {
            return Err(bad("clip without frames"));
        }
        let shape = FrameShape::new(c, h, w);
        let mut frames = Vec::with_capacity(n_frames);
        for _ in 0..n_frames {
            let pixels = (0..shape.len()).map(|_| cur.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
            frames.push(Frame::new(shape, pixels).map_err(|_| bad("non-finite pixel"))?);
        }
        let true_displacement = (1..n_frames)
            .map(|_| Ok(Displacement { dx: cur.f32()? as f64, dy: cur.f32()? as f64 }))
            .collect::<Result<Vec<_>>>()?;
        clips.push(Clip { frames, true_displacement });
    }
    if cur.pos != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Dataset::new(clips)
}

impl Dataset {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        write_dataset(self, &mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_dataset(fs::File::open(path)?)
    }
}

fn bad(detail: &str) -> Error {
    Error::Format { what: "dataset", detail: detail.to_string() }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| bad("truncated"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
