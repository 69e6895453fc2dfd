use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::batches::build_probes;
use super::record::{read_metrics, MetricsRow, RunRecord};
use crate::analysis::{analyze_window, param_travel, AnalysisReport};
use crate::denoiser::{Checkpoint, DEFAULT_JACOBIAN_BUDGET};
use crate::diffusion::build_schedule;
use crate::synthgen::Dataset;
use crate::{Error, Result};

/// Headline numbers of one run, read back from its metrics file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub variant: String,
    pub seed: u64,
    pub best_fid_val: Option<f64>,
    pub best_step: Option<u64>,
    pub final_fid_val: Option<f64>,
    pub final_fid_train: Option<f64>,
    pub final_step: u64,
    /// First step whose validation desk-FID is at or below the comparison threshold.
    pub steps_to_threshold: Option<u64>,
    pub final_grad_variance: Option<f64>,
    /// Mean probe gradient variance over checkpoints after initialization.
    pub mean_grad_variance: Option<f64>,
    pub final_param_travel: Option<f64>,
    /// Sum of per-step gradient norms up to the final step.
    pub cumulative_grad_norm: f64,
}

impl RunSummary {
    pub fn travel_per_grad(&self) -> Option<f64> {
        let t = self.final_param_travel?;
        (self.cumulative_grad_norm > 0.0).then(|| t / self.cumulative_grad_norm)
    }

    fn from_rows(dir: &Path, rows: &[MetricsRow]) -> Result<Self> {
        let last = rows.last().ok_or_else(|| Error::Format { what: "metrics csv", detail: format!("{} has no rows", dir.display()) })?;
        let fid_rows: Vec<(u64, f64)> = rows.iter().filter_map(|r| Some((r.step, r.fid_val.or(r.fid_train)?))).collect();
        let best = fid_rows.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
        let last_fid = rows.iter().rev().find(|r| r.fid_train.is_some());
        let variances: Vec<f64> = rows.iter().filter(|r| r.step > 0).filter_map(|r| r.grad_variance).collect();
        let mut cumulative = 0.0;
        let mut prev = 0;
        for r in rows {
            if let Some(g) = r.grad_norm {
                cumulative += g * (r.step - prev) as f64;
            }
            prev = r.step;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            variant: last.variant.clone(),
            seed: last.seed,
            best_fid_val: best.map(|b| b.1),
            best_step: best.map(|b| b.0),
            final_fid_val: last_fid.and_then(|r| r.fid_val),
            final_fid_train: last_fid.and_then(|r| r.fid_train),
            final_step: last.step,
            steps_to_threshold: None,
            final_grad_variance: rows.iter().rev().find_map(|r| r.grad_variance),
            mean_grad_variance: (!variances.is_empty()).then(|| variances.iter().sum::<f64>() / variances.len() as f64),
            final_param_travel: last.param_travel,
            cumulative_grad_norm: cumulative,
        })
    }

    fn set_threshold(&mut self, rows: &[MetricsRow], threshold: f64) {
        self.steps_to_threshold = rows.iter().find(|r| r.fid_val.or(r.fid_train).is_some_and(|f| f <= threshold)).map(|r| r.step);
    }
}

pub fn summarize(dir: &Path) -> Result<RunSummary> {
    let rec = RunRecord::open(dir)?;
    RunSummary::from_rows(dir, &read_metrics(&rec.metrics)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub threshold: f64,
    pub runs: Vec<RunSummary>,
    /// `steps_to_threshold(run) / steps_to_threshold(first run)`.
    pub speedup: Vec<Option<f64>>,
}

impl Comparison {
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        let opt_u = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from(
            "run,variant,seed,best_fid_val,best_step,final_fid_val,final_fid_train,steps_to_threshold,speedup_ratio,final_grad_variance,mean_grad_variance,final_param_travel,travel_per_grad\n",
        );
        for (r, s) in self.runs.iter().zip(&self.speedup) {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.dir.display(),
                r.variant,
                r.seed,
                opt(r.best_fid_val),
                opt_u(r.best_step),
                opt(r.final_fid_val),
                opt(r.final_fid_train),
                opt_u(r.steps_to_threshold),
                opt(*s),
                opt(r.final_grad_variance),
                opt(r.mean_grad_variance),
                opt(r.final_param_travel),
                opt(r.travel_per_grad()),
            );
        }
        out
    }
}

/// Compares runs over the same data and feature extractor. The threshold
/// defaults to the first run's best validation desk-FID (train desk-FID when
/// the run has no validation split).
pub fn compare(dirs: &[PathBuf], threshold: Option<f64>) -> Result<Comparison> {
    if dirs.len() < 2 {
        return Err(Error::Config("compare needs at least two runs".into()));
    }
    let records = dirs.iter().map(|d| RunRecord::open(d)).collect::<Result<Vec<_>>>()?;
    let first = &records[0].config;
    for r in &records[1..] {
        let c = &r.config;
        if c.dataset != first.dataset || c.val_dataset != first.val_dataset || c.feature_seed != first.feature_seed {
            return Err(Error::Config(format!(
                "{} uses a different dataset or feature extractor than {}",
                r.dir.display(),
                records[0].dir.display()
            )));
        }
    }
    let rows = records.iter().map(|r| read_metrics(&r.metrics)).collect::<Result<Vec<_>>>()?;
    let mut runs = dirs.iter().zip(&rows).map(|(d, r)| RunSummary::from_rows(d, r)).collect::<Result<Vec<_>>>()?;
    let threshold = match threshold.or(runs[0].best_fid_val) {
        Some(t) => t,
        None => return Err(Error::Config(format!("{} has no desk-FID rows to set a threshold", dirs[0].display()))),
    };
    for (s, r) in runs.iter_mut().zip(&rows) {
        s.set_threshold(r, threshold);
    }
    let base = runs[0].steps_to_threshold;
    let speedup = runs
        .iter()
        .map(|s| match (s.steps_to_threshold, base) {
            (Some(a), Some(b)) if b > 0 => Some(a as f64 / b as f64),
            (Some(0), Some(0)) => Some(1.0),
            _ => None,
        })
        .collect();
    Ok(Comparison { threshold, runs, speedup })
}

/// Full probe analysis of one checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointAnalysis {
    pub step: u64,
    pub param_travel: f64,
    pub reports: Vec<AnalysisReport>,
}

/// Re-evaluates every checkpoint of a run on its probe windows. Jacobian
/// quantities are included when the model fits the Jacobian budget.
pub fn analyze_run(dir: &Path) -> Result<Vec<CheckpointAnalysis>> {
    let rec = RunRecord::open(dir)?;
    if rec.checkpoints.is_empty() {
        return Err(Error::Config(format!("{} has no checkpoints", dir.display())));
    }
    let ds = Dataset::load(&rec.config.dataset)?;
    let sched = build_schedule(rec.config.diffusion_steps, rec.config.beta_start, rec.config.beta_end)?;
    let probes = build_probes(&ds, &sched, &rec.config)?;
    let ckpts = rec.checkpoints.iter().map(|p| Checkpoint::load(p)).collect::<Result<Vec<_>>>()?;
    let init = ckpts.iter().find(|c| c.step == 0).ok_or_else(|| Error::Config("initial checkpoint (step 0) missing".into()))?;
    let theta0 = init.model.params().to_vec();
    ckpts
        .iter()
        .map(|c| {
            let with_jac = c.model.architecture().shape.len() * c.model.param_count() <= DEFAULT_JACOBIAN_BUDGET;
            Ok(CheckpointAnalysis {
                step: c.step,
                param_travel: param_travel(c.model.params(), &theta0)?,
                reports: probes.iter().map(|p| analyze_window(&c.model, p, with_jac)).collect::<Result<_>>()?,
            })
        })
        .collect()
}

/// One line per checkpoint and probe window.
pub fn analysis_csv(rows: &[CheckpointAnalysis]) -> String {
    let num = |x: f64| format!("{x:?}");
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
    let mut out = String::from(
        "step,probe,grad_norm,grad_variance,param_travel,e_s,e_g,lambda2,g_sup,f_sup,bound_rhs,variance_bound_holds,poincare_holds,pairwise_holds,max_residual_literal,max_residual_applicable,mean_d_ij\n",
    );
    for c in rows {
        for (i, r) in c.reports.iter().enumerate() {
            let max = |f: fn(&crate::analysis::DecompositionResidual) -> f64| {
                r.decomposition.iter().map(f).reduce(f64::max)
            };
            let _ = writeln!(
                out,
                "{},{i},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                c.step,
                num(r.grad_norm),
                num(r.grad_variance),
                num(c.param_travel),
                num(r.e_s),
                opt(r.e_g),
                num(r.lambda2),
                opt(r.g_sup),
                num(r.f_sup),
                opt(r.bound_rhs),
                r.bound_holds.map(|b| b.to_string()).unwrap_or_default(),
                r.poincare.holds,
                if r.pairwise.is_empty() { String::new() } else { r.pairwise.iter().all(|p| p.holds).to_string() },
                opt(max(|d| d.literal)),
                opt(max(|d| d.applicable)),
                opt(r.mean_d_ij),
            );
        }
    }
    out
}
