use super::config::RunConfig;
use crate::analysis::{LocalGraph, ProbeWindow};
use crate::diffusion::{corrupt_window_with, draw_pair, FrameWindow, NoiseSchedule};
use crate::objective::{TrainBatch, Variant};
use crate::proximity::{pi_divergence, pi_flow, weight, FlowConfig, Floors, ProximityKind};
use crate::rng::{keyed_rng, Stream};
use crate::synthgen::{iterate_windows, Dataset, IterMode, WindowRef};
use crate::{Error, Result};

/// Edge weights for the windows of one run. Flow proximities depend only on
/// the clean frames and are computed once per adjacent pair; divergence
/// proximities depend on the window's corruption and are computed per visit.
pub struct WeightRule {
    kind: ProximityKind,
    floors: Floors,
    dt: usize,
    /// `flow_pi[clip][i]` for the pair `(i, i + 1)`.
    flow_pi: Vec<Vec<f64>>,
}

impl WeightRule {
    pub fn new(ds: &Dataset, kind: ProximityKind, floors: Floors, dt: usize) -> Result<Self> {
        let flow_pi = if kind == ProximityKind::Flow {
            ds.clips()
                .iter()
                .map(|c| c.frames.windows(2).map(|p| pi_flow(&p[0], &p[1], FlowConfig::default())).collect())
                .collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        Ok(Self { kind, floors, dt, flow_pi })
    }

    pub fn kind(&self) -> ProximityKind {
        self.kind
    }

    /// `K - 1` weights of a corrupted window starting at `at`.
    pub fn weights(&self, at: WindowRef, win: &FrameWindow, sched: &NoiseSchedule) -> Result<Vec<f64>> {
        let c = win.corruption.as_ref().ok_or_else(|| Error::arg("window is not corrupted"))?;
        (0..win.len().saturating_sub(1))
            .map(|i| {
                let pi = match self.kind {
                    ProximityKind::Flow => self.flow_pi[at.clip][at.start + i],
                    ProximityKind::Divergence => {
                        pi_divergence(&win.frames[i], &win.frames[i + 1], c.tau, self.dt, &c.eps, sched)?
                    }
                    ProximityKind::Uniform => 0.0,
                };
                Ok(weight(pi, self.kind, self.floors)?.w)
            })
            .collect()
    }
}

fn window_of(ds: &Dataset, at: WindowRef) -> Result<FrameWindow> {
    FrameWindow::new((at.start..at.start + at.len).map(|i| ds.frame(at.clip, i).clone()).collect())
}

/// Shared-noise corruption keyed by `(seed, step, unit)`.
fn corrupt_keyed(win: &FrameWindow, sched: &NoiseSchedule, seed: u64, step: u64, unit: u64) -> Result<FrameWindow> {
    let mut rng = keyed_rng(seed, Stream::Corruption, step, unit);
    let (tau, eps) = draw_pair(&mut rng, sched, win.shape());
    corrupt_window_with(win, tau, eps, sched)
}

/// Endless, seed-determined stream of training batches for one variant.
pub struct BatchSource<'a> {
    ds: &'a Dataset,
    sched: &'a NoiseSchedule,
    variant: Variant,
    seed: u64,
    batch: usize,
    k: usize,
    rule: Option<WeightRule>,
    epoch: u64,
    order: Vec<WindowRef>,
    cursor: usize,
}

impl<'a> BatchSource<'a> {
    pub fn new(ds: &'a Dataset, sched: &'a NoiseSchedule, cfg: &RunConfig) -> Result<Self> {
        let variant = cfg.variant;
        let k = if variant.is_windowed() { cfg.k } else { 1 };
        let rule = variant.proximity().map(|kind| WeightRule::new(ds, kind, cfg.floors(), cfg.dt)).transpose()?;
        let order = iterate_windows(ds, k, variant.iter_mode(), cfg.seed, 0)?;
        if order.is_empty() {
            return Err(Error::Config("dataset yields no training windows".into()));
        }
        Ok(Self { ds, sched, variant, seed: cfg.seed, batch: cfg.batch_size(), k, rule, epoch: 0, order, cursor: 0 })
    }

    /// Windows (or frames) visited per epoch.
    pub fn units_per_epoch(&self) -> usize {
        self.order.len()
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.order.len().div_ceil(self.batch) as u64
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    fn next_ref(&mut self) -> Result<WindowRef> {
        if self.cursor == self.order.len() {
            self.epoch += 1;
            self.order = iterate_windows(self.ds, self.k, self.variant.iter_mode(), self.seed, self.epoch)?;
            self.cursor = 0;
        }
        self.cursor += 1;
        Ok(self.order[self.cursor - 1])
    }

    /// Batch for update number `step` (0-based). Batches run across epoch
    /// boundaries; the stream continues with the next epoch's order.
    pub fn next_batch(&mut self, step: u64) -> Result<TrainBatch> {
        let mut windows = Vec::with_capacity(self.batch);
        let mut weights = Vec::with_capacity(self.batch);
        for unit in 0..self.batch {
            let at = self.next_ref()?;
            let win = corrupt_keyed(&window_of(self.ds, at)?, self.sched, self.seed, step, unit as u64)?;
            let w = match &self.rule {
                Some(rule) => rule.weights(at, &win, self.sched)?,
                None => Vec::new(),
            };
            windows.push(win);
            weights.push(w);
        }
        TrainBatch::from_windows(&windows, &weights)
    }
}

/// Fixed windows of `k` frames used to measure gradient statistics at
/// checkpoints. They depend on the dataset, `probe_seed` and the weighting of
/// the run's variant (uniform for variants without a regularizer).
pub fn build_probes(ds: &Dataset, sched: &NoiseSchedule, cfg: &RunConfig) -> Result<Vec<ProbeWindow>> {
    let k = cfg.k.max(2);
    let admissible = iterate_windows(ds, k, IterMode::Windowed, cfg.probe_seed, 0)?;
    if admissible.is_empty() {
        return Err(Error::Config(format!("no clip has {k} frames for probe windows")));
    }
    let kind = cfg.variant.proximity().unwrap_or(ProximityKind::Uniform);
    let rule = WeightRule::new(ds, kind, cfg.floors(), cfg.dt)?;
    (0..cfg.probe_windows)
        .map(|i| {
            let at = admissible[i % admissible.len()];
            let win = corrupt_keyed(&window_of(ds, at)?, sched, cfg.probe_seed, u64::MAX, i as u64)?;
            let w = rule.weights(at, &win, sched)?;
            let tb = TrainBatch::from_windows(std::slice::from_ref(&win), std::slice::from_ref(&w))?;
            ProbeWindow::new(tb.noisy, LocalGraph::path(&w)?)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::build_schedule;
    use crate::synthgen::{generate_dataset, ClipDistribution};

    fn data() -> Dataset {
        let dist = ClipDistribution { num_frames: 5, height: 12, width: 12, ..ClipDistribution::default() };
        generate_dataset(6, &dist, 3).unwrap()
    }

    fn cfg(variant: Variant) -> RunConfig {
        RunConfig { variant, batch_size: Some(4), ..RunConfig::default() }
    }

    #[test]
    fn windowed_batches_share_noise_within_windows() {
        let ds = data();
        let sched = build_schedule(1000, 1e-4, 0.02).unwrap();
        let mut src = BatchSource::new(&ds, &sched, &cfg(Variant::Divergence)).unwrap();
        assert_eq!(src.units_per_epoch(), 6 * 3);
        let b = src.next_batch(0).unwrap();
        assert_eq!(b.noisy.len(), 12);
        assert_eq!(b.edges.len(), 8);
        assert_eq!(b.n_windows, 4);
        for w in 0..4 {
            let r = 3 * w;
            assert_eq!(b.noisy.targets.row(r), b.noisy.targets.row(r + 2));
            assert_eq!(b.noisy.timesteps[r], b.noisy.timesteps[r + 1]);
        }
        assert!(b.edges.iter().all(|e| e.w > 0.0 && e.w.is_finite()));
    }

    #[test]
    fn iid_batches_draw_independent_noise() {
        let ds = data();
        let sched = build_schedule(1000, 1e-4, 0.02).unwrap();
        let mut src = BatchSource::new(&ds, &sched, &cfg(Variant::Baseline)).unwrap();
        assert_eq!(src.units_per_epoch(), 30);
        assert_eq!(src.steps_per_epoch(), 8);
        let b = src.next_batch(0).unwrap();
        assert_eq!(b.noisy.len(), 4);
        assert!(b.edges.is_empty());
        assert_ne!(b.noisy.targets.row(0), b.noisy.targets.row(1));
    }

    #[test]
    fn stream_crosses_epochs_deterministically() {
        let ds = data();
        let sched = build_schedule(1000, 1e-4, 0.02).unwrap();
        let run = || {
            let mut src = BatchSource::new(&ds, &sched, &cfg(Variant::Flow)).unwrap();
            let batches: Vec<TrainBatch> = (0..7).map(|s| src.next_batch(s).unwrap()).collect();
            (batches, src.epoch())
        };
        let (a, epoch) = run();
        assert_eq!(epoch, 1);
        assert_eq!(a, run().0);
    }

    #[test]
    fn probes_are_fixed() {
        let ds = data();
        let sched = build_schedule(1000, 1e-4, 0.02).unwrap();
        let p = build_probes(&ds, &sched, &cfg(Variant::Flow)).unwrap();
        assert_eq!(p.len(), 4);
        assert_eq!(p, build_probes(&ds, &sched, &cfg(Variant::Flow)).unwrap());
        assert!(p.iter().all(|w| w.graph.n() == 3 && w.graph.is_connected()));
    }
}
