use rand::seq::SliceRandom;

use super::Dataset;
use crate::rng::{keyed_rng, Stream};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IterMode {
    /// Single frames, shuffled across the whole dataset.
    IidFrames,
    /// Clips in shuffled order, frames within a clip in order, cut into
    /// consecutive runs of `K` (the last run of a clip may be shorter).
    SequencePreserving,
    /// Every stride-1 window of `K` frames inside a clip, shuffled.
    Windowed,
}

/// Frames `start .. start + len` of clip `clip`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct WindowRef {
    pub clip: usize,
    pub start: usize,
    pub len: usize,
}

impl WindowRef {
    pub fn center(&self) -> usize {
        self.start + self.len / 2
    }
}

/// The visit order for one epoch. The order is a function of
/// `(seed, epoch)` only.
pub fn iterate_windows(ds: &Dataset, k: usize, mode: IterMode, seed: u64, epoch: u64) -> Result<Vec<WindowRef>> {
    if k < 1 {
        return Err(Error::arg("window length must be at least 1"));
    }
    let mut rng = keyed_rng(seed, Stream::Shuffle, epoch, mode as u64);
    let clips = ds.clips();
    let out = match mode {
        IterMode::IidFrames => {
            let mut v: Vec<WindowRef> = clips
                .iter()
                .enumerate()
                .flat_map(|(c, clip)| (0..clip.frames.len()).map(move |s| WindowRef { clip: c, start: s, len: 1 }))
                .collect();
            v.shuffle(&mut rng);
            v
        }
        IterMode::SequencePreserving => {
            let mut order: Vec<usize> = (0..clips.len()).collect();
            order.shuffle(&mut rng);
            order
                .into_iter()
                .flat_map(|c| {
                    let n = clips[c].frames.len();
                    (0..n).step_by(k).map(move |s| WindowRef { clip: c, start: s, len: k.min(n - s) })
                })
                .collect()
        }
        IterMode::Windowed => {
            if let Some(short) = clips.iter().map(|c| c.frames.len()).min() {
                if short < k {
                    return Err(Error::Config(format!("window length {k} exceeds shortest clip ({short} frames)")));
                }
            }
            let mut v: Vec<WindowRef> = clips
                .iter()
                .enumerate()
                .flat_map(|(c, clip)| (0..=clip.frames.len() - k).map(move |s| WindowRef { clip: c, start: s, len: k }))
                .collect();
            v.shuffle(&mut rng);
            v
        }
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_dataset, ClipDistribution};
    use std::collections::HashSet;

    fn ds(frames: usize, clips: usize) -> Dataset {
        generate_dataset(clips, &ClipDistribution { num_frames: frames, ..Default::default() }, 9).unwrap()
    }

    #[test]
    fn iid_is_a_permutation_of_frames() {
        let d = ds(6, 7);
        let v = iterate_windows(&d, 1, IterMode::IidFrames, 1, 0).unwrap();
        assert_eq!(v.len(), 42);
        let set: HashSet<_> = v.iter().map(|w| (w.clip, w.start)).collect();
        assert_eq!(set.len(), 42);
        assert!(v.iter().all(|w| w.len == 1));
    }

    #[test]
    fn windowed_five_frame_clip() {
        let d = ds(5, 1);
        let mut v = iterate_windows(&d, 3, IterMode::Windowed, 1, 0).unwrap();
        v.sort_by_key(|w| w.start);
        assert_eq!(v.iter().map(WindowRef::center).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn windows_stay_inside_clips_and_cover_once() {
        let d = ds(7, 5);
        let v = iterate_windows(&d, 3, IterMode::Windowed, 4, 2).unwrap();
        assert_eq!(v.len(), 5 * 5);
        assert!(v.iter().all(|w| w.start + w.len <= 7));
        assert_eq!(v.iter().collect::<HashSet<_>>().len(), v.len());
    }

    #[test]
    fn sequence_preserving_keeps_frame_order() {
        let d = ds(5, 4);
        let v = iterate_windows(&d, 1, IterMode::SequencePreserving, 3, 0).unwrap();
        assert_eq!(v.len(), 20);
        for chunk in v.chunks(5) {
            assert!(chunk.iter().all(|w| w.clip == chunk[0].clip));
            assert_eq!(chunk.iter().map(|w| w.start).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
        }
        let runs = iterate_windows(&d, 2, IterMode::SequencePreserving, 3, 0).unwrap();
        assert_eq!(runs.iter().map(|w| w.len).sum::<usize>(), 20);
    }

    #[test]
    fn deterministic_per_epoch() {
        let d = ds(6, 6);
        let a = iterate_windows(&d, 3, IterMode::Windowed, 8, 1).unwrap();
        assert_eq!(a, iterate_windows(&d, 3, IterMode::Windowed, 8, 1).unwrap());
        assert_ne!(a, iterate_windows(&d, 3, IterMode::Windowed, 8, 2).unwrap());
    }

    #[test]
    fn window_longer_than_clip_rejected() {
        let d = ds(4, 2);
        assert!(iterate_windows(&d, 5, IterMode::Windowed, 0, 0).is_err());
        assert!(iterate_windows(&d, 0, IterMode::IidFrames, 0, 0).is_err());
    }
}
