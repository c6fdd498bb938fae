use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Scalar;
use crate::error::{Error, Result};

/// Random Fourier mapping `x ↦ (sin πBx, cos πBx)` with a frozen matrix `B`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierEmbedding {
    /// `m × n_p`, row-major.
    pub b: Vec<Vec<f64>>,
    /// Average wave number per input dimension.
    pub sigma: Vec<f64>,
}

impl FourierEmbedding {
    /// Column `i` of `B` is drawn from `N(0, (π/2)σ_i²)`, so that `E|b_i| = σ_i`.
    pub fn sample<R: Rng + ?Sized>(features: usize, sigma: &[f64], rng: &mut R) -> Result<Self> {
        if features == 0 || sigma.is_empty() {
            return Err(Error::Config("Fourier embedding needs m > 0 and at least one σ".into()));
        }
        let dists = sigma
            .iter()
            .map(|&s| {
                Normal::new(0.0, s * (PI / 2.0).sqrt())
                    .map_err(|e| Error::Config(format!("average wave number {s}: {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let b = (0..features)
            .map(|_| dists.iter().map(|d| d.sample(rng)).collect())
            .collect();
        Ok(FourierEmbedding {
            b,
            sigma: sigma.to_vec(),
        })
    }

    pub fn features(&self) -> usize {
        self.b.len()
    }

    pub fn input_dims(&self) -> usize {
        self.sigma.len()
    }

    pub fn output_dims(&self) -> usize {
        2 * self.features()
    }

    pub fn embed<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let z: Vec<S> = self
            .b
            .iter()
            .map(|row| {
                let mut acc = x[0].scale(PI * row[0]);
                for (xi, &bi) in x.iter().zip(row).skip(1) {
                    acc = acc + xi.scale(PI * bi);
                }
                acc
            })
            .collect();
        let mut out: Vec<S> = z.iter().map(Scalar::sin).collect();
        out.extend(z.iter().map(Scalar::cos));
        out
    }
}
