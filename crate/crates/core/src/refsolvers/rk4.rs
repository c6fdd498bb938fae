use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl TimeSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Cubic Hermite interpolation using the right-hand side for slopes.
    pub fn interpolate(&self, t: f64, mut rhs: impl FnMut(f64, &[f64]) -> Vec<f64>) -> Result<Vec<f64>> {
        let (first, last) = match (self.times.first(), self.times.last()) {
            (Some(&a), Some(&b)) => (a, b),
            _ => return Err(Error::Domain("empty time series".into())),
        };
        let tol = 1e-12 * (last - first).abs().max(1.0);
        if t < first - tol || t > last + tol {
            return Err(Error::Domain(format!("time {t} outside [{first}, {last}]")));
        }
        if self.len() == 1 {
            return Ok(self.states[0].clone());
        }
        let j = self.times.partition_point(|&v| v <= t).clamp(1, self.len() - 1) - 1;
        let (t0, t1) = (self.times[j], self.times[j + 1]);
        let (y0, y1) = (&self.states[j], &self.states[j + 1]);
        let (f0, f1) = (rhs(t0, y0), rhs(t1, y1));
        let h = t1 - t0;
        let s = ((t - t0) / h).clamp(0.0, 1.0);
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        Ok((0..y0.len())
            .map(|i| h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i])
            .collect())
    }
}

/// Classical four-stage Runge-Kutta with fixed step `dt`; the last step is
/// shortened so the series ends exactly at `t_span.1`.
pub fn rk4_integrate(
    mut rhs: impl FnMut(f64, &[f64]) -> Vec<f64>,
    s0: &[f64],
    t_span: (f64, f64),
    dt: f64,
) -> Result<TimeSeries> {
    let (t0, t1) = t_span;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::Config(format!("time step must be positive, got {dt}")));
    }
    if !(t1 >= t0) {
        return Err(Error::Config(format!("time span [{t0}, {t1}] is reversed")));
    }
    let span = t1 - t0;
    let mut full = (span / dt + 1e-9).floor() as usize;
    let tol = 1e-12 * span.max(1.0);
    if full > 0 && full as f64 * dt > span + tol {
        full -= 1;
    }
    let partial = span - full as f64 * dt > tol;
    let mut times: Vec<f64> = (0..=full).map(|k| t0 + k as f64 * dt).collect();
    if partial {
        times.push(t1);
    } else if let Some(last) = times.last_mut() {
        *last = t1;
    }

    let mut states = Vec::with_capacity(times.len());
    let mut y = s0.to_vec();
    states.push(y.clone());
    let axpy = |y: &[f64], a: f64, k: &[f64]| -> Vec<f64> { y.iter().zip(k).map(|(y, k)| y + a * k).collect() };
    for w in times.windows(2) {
        let (t, h) = (w[0], w[1] - w[0]);
        let k1 = rhs(t, &y);
        let k2 = rhs(t + h / 2.0, &axpy(&y, h / 2.0, &k1));
        let k3 = rhs(t + h / 2.0, &axpy(&y, h / 2.0, &k2));
        let k4 = rhs(t + h, &axpy(&y, h, &k3));
        let next: Vec<f64> = (0..y.len())
            .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(format!("non-finite state after t = {t}")));
        }
        y = next;
        states.push(y.clone());
    }
    Ok(TimeSeries { times, states })
}
