use crate::{Error, Result};

/// Per-step noise rates and their cumulative signal retention.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

/// Linear schedule `beta[t] = beta_start + t (beta_end - beta_start) / (T - 1)`.
pub fn build_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps < 2 {
        return Err(Error::Config(format!("schedule needs at least 2 steps, got {steps}")));
    }
    if !(beta_start.is_finite() && beta_end.is_finite()) {
        return Err(Error::Config("schedule bounds must be finite".into()));
    }
    if !(0.0 < beta_start && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "need 0 < beta_start <= beta_end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let span = (beta_end - beta_start) / (steps - 1) as f64;
    let beta: Vec<f64> = (0..steps).map(|t| beta_start + t as f64 * span).collect();
    Ok(NoiseSchedule::from_betas(beta))
}

impl NoiseSchedule {
    fn from_betas(beta: Vec<f64>) -> Self {
        let mut acc = 1.0;
        let alpha_bar = beta
            .iter()
            .map(|b| {
                acc *= 1.0 - b;
                acc
            })
            .collect();
        Self { beta, alpha_bar }
    }

    #[cfg(test)]
    pub(crate) fn from_parts_unchecked(beta: Vec<f64>, alpha_bar: Vec<f64>) -> Self {
        Self { beta, alpha_bar }
    }

    /// Number of diffusion steps `T`.
    pub fn len(&self) -> usize {
        self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.beta.is_empty()
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bar(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t >= self.len() {
            return Err(Error::arg(format!("timestep {t} outside schedule of {} steps", self.len())));
        }
        Ok(())
    }

    /// `(sqrt(alpha_bar[t]), sqrt(1 - alpha_bar[t]))`.
    pub fn coefficients(&self, t: usize) -> Result<(f64, f64)> {
        self.check_step(t)?;
        let ab = self.alpha_bar[t];
        Ok((ab.sqrt(), (1.0 - ab).sqrt()))
    }
}
