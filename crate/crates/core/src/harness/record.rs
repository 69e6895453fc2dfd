use std::fs::{File, OpenOptions};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use crate::{Error, Result};

pub const METRICS_COLUMNS: [&str; 19] = [
    "step",
    "variant",
    "seed",
    "loss_mse",
    "loss_reg",
    "loss_disp",
    "loss_total",
    "grad_norm",
    "grad_variance",
    "e_s",
    "e_g",
    "lambda2",
    "bound_rhs",
    "mean_d_ij",
    "param_travel",
    "fid_train",
    "fid_val",
    "diversity",
    "wall_seconds",
];

/// One CSV row; `None` fields are written empty.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsRow {
    pub step: u64,
    pub variant: String,
    pub seed: u64,
    pub loss_mse: Option<f64>,
    pub loss_reg: Option<f64>,
    pub loss_disp: Option<f64>,
    pub loss_total: Option<f64>,
    /// Mean gradient norm over the steps since the previous row.
    pub grad_norm: Option<f64>,
    pub grad_variance: Option<f64>,
    pub e_s: Option<f64>,
    pub e_g: Option<f64>,
    pub lambda2: Option<f64>,
    pub bound_rhs: Option<f64>,
    pub mean_d_ij: Option<f64>,
    pub param_travel: Option<f64>,
    pub fid_train: Option<f64>,
    pub fid_val: Option<f64>,
    pub diversity: Option<f64>,
    pub wall_seconds: Option<f64>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:?}")).unwrap_or_default()
}

fn parse_opt(field: &str, column: &str) -> Result<Option<f64>> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse()
        .map(Some)
        .map_err(|_| Error::Format { what: "metrics csv", detail: format!("column {column}: `{field}` is not a number") })
}

impl MetricsRow {
    fn fields(&self) -> [String; 19] {
        [
            self.step.to_string(),
            self.variant.clone(),
            self.seed.to_string(),
            opt(self.loss_mse),
            opt(self.loss_reg),
            opt(self.loss_disp),
            opt(self.loss_total),
            opt(self.grad_norm),
            opt(self.grad_variance),
            opt(self.e_s),
            opt(self.e_g),
            opt(self.lambda2),
            opt(self.bound_rhs),
            opt(self.mean_d_ij),
            opt(self.param_travel),
            opt(self.fid_train),
            opt(self.fid_val),
            opt(self.diversity),
            opt(self.wall_seconds),
        ]
    }

    fn from_record(rec: &csv::StringRecord) -> Result<Self> {
        if rec.len() != METRICS_COLUMNS.len() {
            return Err(Error::Format {
                what: "metrics csv",
                detail: format!("expected {} columns, got {}", METRICS_COLUMNS.len(), rec.len()),
            });
        }
        let num = |i: usize| parse_opt(&rec[i], METRICS_COLUMNS[i]);
        let int = |i: usize| {
            rec[i].parse::<u64>().map_err(|_| Error::Format {
                what: "metrics csv",
                detail: format!("column {}: `{}` is not an integer", METRICS_COLUMNS[i], &rec[i]),
            })
        };
        Ok(Self {
            step: int(0)?,
            variant: rec[1].to_string(),
            seed: int(2)?,
            loss_mse: num(3)?,
            loss_reg: num(4)?,
            loss_disp: num(5)?,
            loss_total: num(6)?,
            grad_norm: num(7)?,
            grad_variance: num(8)?,
            e_s: num(9)?,
            e_g: num(10)?,
            lambda2: num(11)?,
            bound_rhs: num(12)?,
            mean_d_ij: num(13)?,
            param_travel: num(14)?,
            fid_train: num(15)?,
            fid_val: num(16)?,
            diversity: num(17)?,
            wall_seconds: num(18)?,
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format { what: "metrics csv", detail: format!("{other:?}") },
    }
}

/// Append-only writer; the header is written only when the file is new or empty.
pub struct MetricsWriter {
    inner: csv::Writer<BufWriter<File>>,
}

impl MetricsWriter {
    pub fn open(path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        let fresh = file.metadata()?.len() == 0;
        let mut inner = csv::WriterBuilder::new().has_headers(false).from_writer(BufWriter::new(file));
        if fresh {
            inner.write_record(METRICS_COLUMNS).map_err(csv_err)?;
            inner.flush()?;
        }
        Ok(Self { inner })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        self.inner.write_record(row.fields()).map_err(csv_err)?;
        self.inner.flush()?;
        Ok(())
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.iter().ne(METRICS_COLUMNS) {
        return Err(Error::Format { what: "metrics csv", detail: format!("unexpected header in {}", path.display()) });
    }
    rdr.records().map(|r| MetricsRow::from_record(&r.map_err(csv_err)?)).collect()
}

pub const CONFIG_FILE: &str = "config.txt";
pub const METRICS_FILE: &str = "metrics.csv";

/// Files of a finished (or aborted) run inside its output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub dir: PathBuf,
    pub config: RunConfig,
    pub config_hash: String,
    pub metrics: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    /// Seconds spent in each completed epoch of the training stream.
    pub epoch_seconds: Vec<f64>,
}

impl RunRecord {
    /// Rebuilds the record of a run directory from its config and checkpoint files.
    pub fn open(dir: &Path) -> Result<Self> {
        let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
        let mut checkpoints: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "tdck"))
            .collect();
        checkpoints.sort();
        Ok(Self {
            dir: dir.to_path_buf(),
            config_hash: config.hash(),
            config,
            metrics: dir.join(METRICS_FILE),
            checkpoints,
            epoch_seconds: Vec::new(),
        })
    }
}

pub fn checkpoint_name(step: u64) -> String {
    format!("ckpt-{step:09}.tdck")
}
