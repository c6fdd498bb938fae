use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::error::{Error, Result};

/// Affine map of each input coordinate from `[x_min, x_max]` onto `[-1, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputScaler {
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
}

impl InputScaler {
    pub fn new(x_min: Vec<f64>, x_max: Vec<f64>) -> Result<Self> {
        if x_min.len() != x_max.len() || x_min.is_empty() {
            return Err(Error::Shape(format!(
                "input bounds have lengths {} and {}",
                x_min.len(),
                x_max.len()
            )));
        }
        if let Some(i) = (0..x_min.len()).find(|&i| !(x_min[i] < x_max[i])) {
            return Err(Error::Config(format!(
                "input bound {i}: x_min {} is not below x_max {}",
                x_min[i], x_max[i]
            )));
        }
        Ok(InputScaler { x_min, x_max })
    }

    pub fn dims(&self) -> usize {
        self.x_min.len()
    }

    fn center(&self, i: usize) -> f64 {
        (self.x_max[i] + self.x_min[i]) / 2.0
    }

    fn inv_half_width(&self, i: usize) -> f64 {
        2.0 / (self.x_max[i] - self.x_min[i])
    }

    /// Derivative of the scaled coordinate `i` with respect to the raw one.
    pub fn slope(&self, i: usize) -> f64 {
        self.inv_half_width(i)
    }

    pub fn scale<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        x.iter()
            .enumerate()
            .map(|(i, v)| v.offset(-self.center(i)).scale(self.inv_half_width(i)))
            .collect()
    }

    pub fn scale_point(&self, x: &[f64]) -> Vec<f64> {
        if log::log_enabled!(log::Level::Debug) {
            for (i, &v) in x.iter().enumerate() {
                if v < self.x_min[i] || v > self.x_max[i] {
                    log::debug!("input coordinate {i} = {v} outside [{}, {}]", self.x_min[i], self.x_max[i]);
                }
            }
        }
        self.scale(x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputMode {
    #[default]
    Identity,
    StandardScore,
}

/// Output normalization: identity or per-component standard score.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct OutputScaler {
    pub mode: OutputMode,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl OutputScaler {
    pub fn identity() -> Self {
        OutputScaler::default()
    }

    pub fn standard(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::Shape("mean and std lengths differ".into()));
        }
        if let Some(i) = std.iter().position(|&s| !(s > 0.0) || !s.is_finite()) {
            return Err(Error::DegenerateStatistics(format!(
                "output component {i} has standard deviation {}",
                std[i]
            )));
        }
        Ok(OutputScaler {
            mode: OutputMode::StandardScore,
            mean,
            std,
        })
    }

    /// Mean and population standard deviation of each output component.
    pub fn fit(data: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = data.first() else {
            return Err(Error::DegenerateStatistics("empty labeled set".into()));
        };
        let k = first.len();
        if data.iter().any(|r| r.len() != k) {
            return Err(Error::Shape("ragged output rows".into()));
        }
        let n = data.len() as f64;
        let mean: Vec<f64> = (0..k).map(|c| data.iter().map(|r| r[c]).sum::<f64>() / n).collect();
        let std: Vec<f64> = (0..k)
            .map(|c| (data.iter().map(|r| (r[c] - mean[c]).powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        Self::standard(mean, std)
    }

    pub fn is_identity(&self) -> bool {
        self.mode == OutputMode::Identity
    }

    pub fn scale(&self, y: &[f64]) -> Vec<f64> {
        match self.mode {
            OutputMode::Identity => y.to_vec(),
            OutputMode::StandardScore => y
                .iter()
                .enumerate()
                .map(|(c, v)| (v - self.mean[c]) / self.std[c])
                .collect(),
        }
    }

    pub fn unscale<S: Scalar>(&self, y: &[S]) -> Vec<S> {
        match self.mode {
            OutputMode::Identity => y.to_vec(),
            OutputMode::StandardScore => y
                .iter()
                .enumerate()
                .map(|(c, v)| v.scale(self.std[c]).offset(self.mean[c]))
                .collect(),
        }
    }
}
