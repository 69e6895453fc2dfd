use std::path::{Path, PathBuf};

use tprox::denoiser::{Checkpoint, DenoiserModel, Preset};
use tprox::diffusion::{build_schedule, corrupt_window, FrameWindow};
use tprox::harness::{
    compare, ema_update, evaluate, read_metrics, sample, summarize, train, train_step, Optimizer, OptimizerState,
    RunConfig,
};
use tprox::objective::{ObjectiveConfig, TrainBatch, Variant};
use tprox::synthgen::{generate_dataset, ClipDistribution, Dataset};

fn dataset(dir: &Path, clips: usize, seed: u64) -> PathBuf {
    let path = dir.join(format!("data-{clips}-{seed}.tdv"));
    generate_dataset(clips, &ClipDistribution::default(), seed).unwrap().save(&path).unwrap();
    path
}

fn tiny_config(data: &Path, variant: &str, steps: u64) -> RunConfig {
    RunConfig::from_text(&format!(
        "variant = {variant}\nseed = 3\ndataset = {}\npreset = tiny\nsteps = {steps}\nlr = 0.2\n\
         checkpoint_interval = 10\nlog_interval = 5\nsample_count = 0\nprobe_windows = 1\n",
        data.display()
    ))
    .unwrap()
}

fn without_wall(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect()
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 8, 1);
    let cfg = tiny_config(&data, "flow", 20);
    let a = train(&cfg, &dir.path().join("a")).unwrap();
    let b = train(&cfg, &dir.path().join("b")).unwrap();
    assert_eq!(a.checkpoints.len(), 3);
    for (x, y) in a.checkpoints.iter().zip(&b.checkpoints) {
        assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
    }
    assert_eq!(without_wall(&a.metrics), without_wall(&b.metrics));
    assert_eq!(a.config_hash, b.config_hash);
}

#[test]
fn existing_run_is_not_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 4, 1);
    let cfg = tiny_config(&data, "baseline", 5);
    train(&cfg, &dir.path().join("run")).unwrap();
    assert!(train(&cfg, &dir.path().join("run")).is_err());
}

#[test]
fn zero_learning_rate_does_not_move() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 4, 2);
    let mut cfg = tiny_config(&data, "divergence", 10);
    cfg.lr = 0.0;
    let run = train(&cfg, &dir.path().join("still")).unwrap();
    let rows = read_metrics(&run.metrics).unwrap();
    assert!(rows.iter().all(|r| r.param_travel.is_none_or(|t| t == 0.0)));
    let first = Checkpoint::load(&run.checkpoints[0]).unwrap();
    let last = Checkpoint::load(run.checkpoints.last().unwrap()).unwrap();
    assert_eq!(first.model.params(), last.model.params());
    assert_eq!(first.ema, last.ema);
}

#[test]
fn ema_decay_endpoints() {
    let theta = [1.0, -2.0, 3.5];
    let mut ema = vec![0.5; 3];
    ema_update(&mut ema, &theta, 1.0);
    assert_eq!(ema, vec![0.5; 3]);
    ema_update(&mut ema, &theta, 0.0);
    assert_eq!(ema, theta);
}

#[test]
fn unregularized_flow_step_matches_baseline() {
    let ds = generate_dataset(3, &ClipDistribution::default(), 5).unwrap();
    let shape = ds.frame_shape().unwrap();
    let sched = build_schedule(1000, 1e-4, 0.02).unwrap();
    let windows: Vec<FrameWindow> = (0..4)
        .map(|i| {
            let clip = &ds.clips()[i % 3];
            corrupt_window(&FrameWindow::new(clip.frames[i..i + 3].to_vec()).unwrap(), &sched, i as u64).unwrap()
        })
        .collect();
    let weights = vec![vec![3.0, 0.25]; 4];
    let batch = TrainBatch::from_windows(&windows, &weights).unwrap();
    let objective = ObjectiveConfig { lambda: 0.0, ..ObjectiveConfig::default() };

    let init = DenoiserModel::init(Preset::Tiny.architecture(shape), 8).unwrap();
    let run = |variant| {
        let mut model = init.clone();
        let mut ema = model.params().to_vec();
        let mut opt = OptimizerState::new(Optimizer::Adam, model.param_count());
        for step in 0..3 {
            train_step(&mut model, &mut ema, &mut opt, variant, &batch, &objective, 0.01, 0.9, step).unwrap();
        }
        (model, ema)
    };
    let (m_base, e_base) = run(Variant::Baseline);
    let (m_flow, e_flow) = run(Variant::Flow);
    assert_eq!(m_base.params(), m_flow.params());
    assert_eq!(e_base, e_flow);
}

#[test]
fn non_finite_updates_are_reported_as_divergence() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 4, 3);
    let mut cfg = tiny_config(&data, "baseline", 50);
    cfg.lr = 1e200;
    let err = train(&cfg, &dir.path().join("boom")).unwrap_err();
    assert!(matches!(err, tprox::Error::Divergence { .. }), "{err}");
}

#[test]
fn sampling_and_evaluation() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 4, 4);
    let run = train(&tiny_config(&data, "baseline", 10), &dir.path().join("run")).unwrap();
    let sched = build_schedule(1000, 1e-4, 0.02).unwrap();
    let ckpt = run.checkpoints.last().unwrap();

    let a = sample(ckpt, 6, 11, 5, &sched, &dir.path().join("a.tdv")).unwrap();
    sample(ckpt, 6, 11, 5, &sched, &dir.path().join("b.tdv")).unwrap();
    assert_eq!(std::fs::read(dir.path().join("a.tdv")).unwrap(), std::fs::read(dir.path().join("b.tdv")).unwrap());
    assert_eq!(a.frame_count(), 6);
    assert_eq!(Dataset::load(&dir.path().join("a.tdv")).unwrap(), a);
    for f in a.all_frames() {
        assert!(f.pixels().iter().all(|p| (0.0..=1.0).contains(p)));
    }
    sample(ckpt, 7, 12, 5, &sched, &dir.path().join("c.tdv")).unwrap();
    assert_ne!(std::fs::read(dir.path().join("a.tdv")).unwrap(), std::fs::read(dir.path().join("c.tdv")).unwrap());

    // too few samples for a stable covariance
    let reference = generate_dataset(60, &ClipDistribution::default(), 9).unwrap();
    assert!(evaluate(&a, &reference, None, 1).is_err());
}

#[test]
fn reference_split_against_itself() {
    let reference = generate_dataset(60, &ClipDistribution::default(), 9).unwrap();
    let r = evaluate(&reference, &reference, Some(&reference), 1).unwrap();
    assert!(r.fid_train <= 1e-6, "{}", r.fid_train);
    assert_eq!(Some(r.fid_train), r.fid_val);
    assert!(r.diversity > 0.0);
}

#[test]
fn comparing_a_run_with_itself() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 60, 6);
    let mut cfg = tiny_config(&data, "baseline", 20);
    cfg.sample_count = 500;
    cfg.ddim_steps = 4;
    cfg.val_dataset = Some(data.clone());
    let run = dir.path().join("run");
    train(&cfg, &run).unwrap();

    let s = summarize(&run).unwrap();
    assert_eq!(s.final_step, 20);
    assert!(s.best_fid_val.is_some() && s.final_fid_train.is_some());
    let c = compare(&[run.clone(), run.clone()], None).unwrap();
    assert_eq!(c.speedup, vec![Some(1.0), Some(1.0)]);
    assert_eq!(c.threshold, s.best_fid_val.unwrap());
    assert!(c.to_csv().lines().count() == 3);

    assert!(compare(std::slice::from_ref(&run), None).is_err());
    let other_data = dataset(dir.path(), 4, 7);
    let other = dir.path().join("other");
    train(&tiny_config(&other_data, "baseline", 5), &other).unwrap();
    assert!(compare(&[run, other], Some(1.0)).is_err());
}

#[test]
fn seeded_initialization_differs_by_seed() {
    let dir = tempfile::tempdir().unwrap();
    let data = dataset(dir.path(), 4, 8);
    let mut cfg = tiny_config(&data, "baseline", 1);
    let a = train(&cfg, &dir.path().join("a")).unwrap();
    cfg.seed = 4;
    let b = train(&cfg, &dir.path().join("b")).unwrap();
    let (ca, cb) = (Checkpoint::load(&a.checkpoints[0]).unwrap(), Checkpoint::load(&b.checkpoints[0]).unwrap());
    assert_ne!(ca.model.params(), cb.model.params());
}
