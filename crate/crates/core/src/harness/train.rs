use std::fs;
use std::path::Path;
use std::time::Instant;

use super::batches::{build_probes, BatchSource};
use super::config::{Optimizer, RunConfig};
use super::eval::{sample_frames, Evaluator};
use super::record::{checkpoint_name, MetricsRow, MetricsWriter, RunRecord, CONFIG_FILE, METRICS_FILE};
use crate::analysis::{analyze_window, param_travel, ProbeWindow};
use crate::denoiser::{Checkpoint, DenoiserModel, DEFAULT_JACOBIAN_BUDGET};
use crate::diffusion::build_schedule;
use crate::objective::{loss_total, LossBreakdown, ObjectiveConfig, TrainBatch, Variant};
use crate::rng::{derive_seed, Stream};
use crate::synthgen::Dataset;
use crate::{Error, Result};

/// Parameter update rule with its running state.
#[derive(Debug, Clone)]
pub enum OptimizerState {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64>, t: i32 },
}

impl OptimizerState {
    pub fn new(kind: Optimizer, n_params: usize) -> Self {
        match kind {
            Optimizer::Sgd => OptimizerState::Sgd,
            Optimizer::Adam => OptimizerState::Adam { m: vec![0.0; n_params], v: vec![0.0; n_params], t: 0 },
        }
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            OptimizerState::Sgd => params.iter_mut().zip(grad).for_each(|(p, g)| *p -= lr * g),
            OptimizerState::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                *t += 1;
                let (c1, c2) = (1.0 - B1.powi(*t), 1.0 - B2.powi(*t));
                for i in 0..params.len() {
                    m[i] = B1 * m[i] + (1.0 - B1) * grad[i];
                    v[i] = B2 * v[i] + (1.0 - B2) * grad[i] * grad[i];
                    params[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + 1e-8);
                }
            }
        }
    }
}

/// `ema <- decay * ema + (1 - decay) * theta`.
pub fn ema_update(ema: &mut [f64], theta: &[f64], decay: f64) {
    for (e, t) in ema.iter_mut().zip(theta) {
        *e = decay * *e + (1.0 - decay) * t;
    }
}

/// One optimizer step on `batch`; returns the loss terms and the gradient norm.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut DenoiserModel,
    ema: &mut [f64],
    opt: &mut OptimizerState,
    variant: Variant,
    batch: &TrainBatch,
    objective: &ObjectiveConfig,
    lr: f64,
    ema_decay: f64,
    step: u64,
) -> Result<(LossBreakdown, f64)> {
    let (bd, grad) = loss_total(variant, batch, model, objective)?;
    let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if !bd.l_total.is_finite() || !grad_norm.is_finite() {
        return Err(Error::Divergence {
            step,
            detail: format!(
                "loss_mse={} loss_reg={} loss_disp={} loss_total={} grad_norm={grad_norm}",
                bd.l_mse, bd.l_reg, bd.l_disp, bd.l_total
            ),
        });
    }
    opt.update(model.params_mut(), &grad, lr);
    if model.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::Divergence { step, detail: format!("non-finite parameters after update (grad_norm={grad_norm})") });
    }
    ema_update(ema, model.params(), ema_decay);
    Ok((bd, grad_norm))
}

/// Checkpoint-time measurements averaged over the probe windows.
fn probe_summary(model: &DenoiserModel, probes: &[ProbeWindow], row: &mut MetricsRow) -> Result<()> {
    let with_jac = model.architecture().shape.len() * model.param_count() <= DEFAULT_JACOBIAN_BUDGET;
    let m = probes.len() as f64;
    let (mut var, mut e_s, mut l2) = (0.0, 0.0, 0.0);
    let (mut e_g, mut rhs, mut d_ij) = (0.0, 0.0, 0.0);
    for p in probes {
        let rep = analyze_window(model, p, with_jac)?;
        var += rep.grad_variance / m;
        e_s += rep.e_s / m;
        l2 += rep.lambda2 / m;
        e_g += rep.e_g.unwrap_or(0.0) / m;
        rhs += rep.bound_rhs.unwrap_or(0.0) / m;
        d_ij += rep.mean_d_ij.unwrap_or(0.0) / m;
    }
    row.grad_variance = Some(var);
    row.e_s = Some(e_s);
    row.lambda2 = Some(l2);
    if with_jac {
        row.e_g = Some(e_g);
        row.bound_rhs = Some(rhs);
        row.mean_d_ij = Some(d_ij);
    }
    Ok(())
}

#[derive(Default)]
struct Interval {
    steps: u64,
    mse: f64,
    reg: f64,
    disp: f64,
    total: f64,
    grad_norm: f64,
}

impl Interval {
    fn add(&mut self, bd: &LossBreakdown, g: f64) {
        self.steps += 1;
        self.mse += bd.l_mse;
        self.reg += bd.l_reg;
        self.disp += bd.l_disp;
        self.total += bd.l_total;
        self.grad_norm += g;
    }

    fn fill(&self, row: &mut MetricsRow) {
        if self.steps == 0 {
            return;
        }
        let n = self.steps as f64;
        row.loss_mse = Some(self.mse / n);
        row.loss_reg = Some(self.reg / n);
        row.loss_disp = Some(self.disp / n);
        row.loss_total = Some(self.total / n);
        row.grad_norm = Some(self.grad_norm / n);
    }
}

/// Trains one run into `out_dir`.
///
/// The directory receives `config.txt` (every config field plus its hash),
/// `metrics.csv` and one checkpoint per interval, including step 0 and the
/// final step. Loss columns average the steps since the previous row; the
/// analysis columns come from fixed probe windows at checkpoints, and desk-FID
/// from EMA samples when `sample_count > 0`.
pub fn train(cfg: &RunConfig, out_dir: &Path) -> Result<RunRecord> {
    cfg.validate()?;
    let ds = Dataset::load(&cfg.dataset)?;
    let val = cfg.val_dataset.as_deref().map(Dataset::load).transpose()?;
    let shape = ds.frame_shape().ok_or_else(|| Error::Config("training dataset is empty".into()))?;
    let sched = build_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end)?;

    fs::create_dir_all(out_dir)?;
    let metrics_path = out_dir.join(METRICS_FILE);
    if metrics_path.exists() {
        return Err(Error::Config(format!("{} already holds a run", out_dir.display())));
    }
    let hash = cfg.hash();
    fs::write(out_dir.join(CONFIG_FILE), format!("{}# config_hash = {hash}\n", cfg.to_text()))?;
    let mut writer = MetricsWriter::open(&metrics_path)?;

    let mut model = DenoiserModel::init(cfg.architecture(shape), derive_seed(cfg.seed, Stream::Init, 0, 0))?;
    let theta0 = model.params().to_vec();
    let mut ema = theta0.clone();
    let mut opt = OptimizerState::new(cfg.optimizer, model.param_count());
    let mut source = BatchSource::new(&ds, &sched, cfg)?;
    let probes = build_probes(&ds, &sched, cfg)?;
    let evaluator = if cfg.sample_count > 0 { Some(Evaluator::new(&ds, val.as_ref(), cfg.feature_seed)?) } else { None };
    let total_steps = if cfg.steps > 0 { cfg.steps } else { cfg.epochs * source.steps_per_epoch() };
    let objective = cfg.objective();

    let start = Instant::now();
    let mut record = RunRecord {
        dir: out_dir.to_path_buf(),
        config: cfg.clone(),
        config_hash: hash,
        metrics: metrics_path,
        checkpoints: Vec::new(),
        epoch_seconds: Vec::new(),
    };
    let mut epoch_start = 0.0;
    let mut interval = Interval::default();

    let mut emit = |step: u64, model: &DenoiserModel, ema: &[f64], interval: &Interval, record: &mut RunRecord| -> Result<()> {
        let mut row = MetricsRow { step, variant: cfg.variant.to_string(), seed: cfg.seed, ..Default::default() };
        interval.fill(&mut row);
        row.param_travel = Some(param_travel(model.params(), &theta0)?);
        let at_checkpoint = step.is_multiple_of(cfg.checkpoint_interval) || step == total_steps;
        if at_checkpoint {
            let path = out_dir.join(checkpoint_name(step));
            Checkpoint { model: model.clone(), ema: ema.to_vec(), step }.save(&path)?;
            record.checkpoints.push(path);
            probe_summary(model, &probes, &mut row)?;
            if let Some(ev) = &evaluator {
                let ema_model = DenoiserModel::from_params(model.architecture().clone(), ema.to_vec())?;
                let samples = sample_frames(&ema_model, &sched, cfg.ddim_steps, cfg.sample_count, derive_seed(cfg.seed, Stream::Sampling, step, 1))?;
                let res = ev.evaluate(&samples)?;
                row.fid_train = Some(res.fid_train);
                row.fid_val = res.fid_val;
                row.diversity = Some(res.diversity);
            }
        }
        row.wall_seconds = Some(start.elapsed().as_secs_f64());
        log::info!(
            "step {step}/{total_steps} loss={} grad_norm={} fid_val={}",
            row.loss_total.map_or("-".into(), |v| format!("{v:.5}")),
            row.grad_norm.map_or("-".into(), |v| format!("{v:.4}")),
            row.fid_val.or(row.fid_train).map_or("-".into(), |v| format!("{v:.4}")),
        );
        writer.append(&row)
    };

    emit(0, &model, &ema, &interval, &mut record)?;
    for step in 1..=total_steps {
        let batch = source.next_batch(step - 1)?;
        let (bd, g) = train_step(&mut model, &mut ema, &mut opt, cfg.variant, &batch, &objective, cfg.lr, cfg.ema_decay, step)?;
        interval.add(&bd, g);
        if step % source.steps_per_epoch() == 0 {
            let now = start.elapsed().as_secs_f64();
            record.epoch_seconds.push(now - epoch_start);
            epoch_start = now;
        }
        if step % cfg.log_interval == 0 || step % cfg.checkpoint_interval == 0 || step == total_steps {
            emit(step, &model, &ema, &interval, &mut record)?;
            interval = Interval::default();
        }
    }
    Ok(record)
}
