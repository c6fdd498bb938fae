use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `sqrt(Σ‖ŷ−y‖² / Σ‖y‖²)` over paired samples.
pub fn relative_l2(predictions: &[Vec<f64>], truths: &[Vec<f64>]) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} truths",
            predictions.len(),
            truths.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::UndefinedMetric("empty test set".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, (p, t)) in predictions.iter().zip(truths).enumerate() {
        if p.len() != t.len() {
            return Err(Error::Shape(format!("sample {i}: {} vs {} components", p.len(), t.len())));
        }
        for (a, b) in p.iter().zip(t) {
            num += (a - b) * (a - b);
            den += b * b;
        }
    }
    if den == 0.0 {
        return Err(Error::UndefinedMetric("all truths are zero".into()));
    }
    Ok((num / den).sqrt())
}

/// Relative L2 error of each distinct value of coordinate `dim` (e.g. time slices).
pub fn relative_l2_by_slice(
    points: &[Vec<f64>],
    predictions: &[Vec<f64>],
    truths: &[Vec<f64>],
    dim: usize,
) -> Result<Vec<(f64, f64)>> {
    if points.len() != truths.len() || points.len() != predictions.len() {
        return Err(Error::Shape("points, predictions and truths differ in length".into()));
    }
    if points.iter().any(|x| x.len() <= dim) {
        return Err(Error::Shape(format!("point without coordinate {dim}")));
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| points[a][dim].total_cmp(&points[b][dim]));
    order
        .chunk_by(|&a, &b| points[a][dim] == points[b][dim])
        .map(|idx| {
            let p: Vec<Vec<f64>> = idx.iter().map(|&i| predictions[i].clone()).collect();
            let t: Vec<Vec<f64>> = idx.iter().map(|&i| truths[i].clone()).collect();
            Ok((points[idx[0]][dim], relative_l2(&p, &t)?))
        })
        .collect()
}

/// Inferred value of one physical parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferredParam {
    pub name: String,
    pub value: f64,
    pub exact: Option<f64>,
    pub relative_error: Option<f64>,
}

impl InferredParam {
    pub fn new(name: &str, value: f64, exact: Option<f64>) -> Self {
        InferredParam {
            name: name.to_string(),
            value,
            exact,
            relative_error: exact.map(|e| ((value - e) / e).abs()),
        }
    }
}

/// Accuracy summary of one trained model (or reference solution) on a test set.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalReport {
    /// Relative L2 error per approach label (`mf`, `lf`, `single-hf`, ...).
    pub relative_l2: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_slice: Vec<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub parameters: Vec<InferredParam>,
}
