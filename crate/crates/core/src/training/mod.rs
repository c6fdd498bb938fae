//! Composite loss, self-adaptive point weights and the Adam → L-BFGS schedule.

mod adam;
mod lbfgs;
mod loss;

pub use adam::{lr_schedule, Adam, StepDecay};
pub use lbfgs::{lbfgs_run, LbfgsOptions, LbfgsReport, Termination};
pub use loss::{
    assemble_loss, chunk_points, prepare_terms, prepare_terms_chunked, term_errors, Constraint, InverseParam, LossEval, LossTerm,
    ParamScaling, PreparedChunk, CHUNK_POINTS,
    Physics, PreparedTerm, TermKind,
};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float::{Precision, Real};
use crate::network::MultiFidelityNet;

/// Gradient used for the weight ascent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum SaRule {
    /// `w ← w + ρ·M′(w)·e`, without the `1/N` factor.
    #[default]
    Unnormalized,
    /// `w ← w + ρ·M′(w)·e/N`, the exact gradient of the loss.
    Normalized,
}

/// Ascent direction `M′(w_i)·e_i = 2w_i·e_i` (divided by `n` under [`SaRule::Normalized`]).
pub fn sa_gradient(weights: &[f64], errors: &[f64], rule: SaRule) -> Vec<f64> {
    let scale = match rule {
        SaRule::Unnormalized => 1.0,
        SaRule::Normalized => 1.0 / errors.len() as f64,
    };
    weights.iter().zip(errors).map(|(w, e)| 2.0 * w * e * scale).collect()
}

/// `w_i ← w_i + ρ·2w_i·e_i` (divided by `n` under [`SaRule::Normalized`]).
pub fn update_sa_weights(weights: &mut [f64], errors: &[f64], rho: f64, rule: SaRule) {
    let g = sa_gradient(weights, errors, rule);
    for (w, g) in weights.iter_mut().zip(g) {
        *w += rho * g;
    }
}

/// How the weight gradient is applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum SaStep {
    /// Plain ascent `w ← w + ρ·∇_w`.
    #[default]
    Ascent,
    /// Adam ascent with learning rate `ρ`; steps are bounded by about `ρ`.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    pub adam_iters: usize,
    pub lbfgs_iters: usize,
    #[serde(default)]
    pub lr: StepDecay,
    #[serde(default = "default_rho")]
    pub rho: f64,
    #[serde(default)]
    pub sa_rule: SaRule,
    #[serde(default)]
    pub sa_step: SaStep,
    /// Disable to train with all weights fixed at 1.
    #[serde(default = "default_true")]
    pub self_adaptive: bool,
    #[serde(default = "default_log_every")]
    pub log_every: usize,
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    #[serde(default)]
    pub precision: Precision,
    #[serde(default = "default_history")]
    pub lbfgs_history: usize,
}

fn default_rho() -> f64 {
    0.1
}
fn default_true() -> bool {
    true
}
fn default_log_every() -> usize {
    100
}
fn default_history() -> usize {
    50
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            adam_iters: 72_000,
            lbfgs_iters: 8_000,
            lr: StepDecay::default(),
            rho: 0.1,
            sa_rule: SaRule::Unnormalized,
            sa_step: SaStep::Ascent,
            self_adaptive: true,
            log_every: 100,
            checkpoint_every: None,
            precision: Precision::F64,
            lbfgs_history: 50,
        }
    }
}

/// Everything needed to resume or inspect a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Network parameters followed by trained inverse parameters.
    pub theta: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    pub adam: Adam,
    /// Per-term optimizer state of the weights under [`SaStep::Adam`].
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weight_adam: Vec<Adam>,
    pub iteration: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub iteration: usize,
    pub phase: String,
    pub total: f64,
    pub per_term: Vec<f64>,
    pub eta: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub history: Vec<HistoryRow>,
    /// Physical values of the inverse parameters.
    pub inverse: Vec<f64>,
    pub lbfgs: Option<LbfgsReport>,
    pub final_loss: f64,
}

/// Where to write checkpoints and divergence dumps.
#[derive(Debug, Clone, Default)]
pub struct TrainIo {
    pub out_dir: Option<PathBuf>,
}

const DIVERGENCE_LIMIT: f64 = 1e12;

pub struct Trainer<'a, P: Physics> {
    pub net: &'a mut MultiFidelityNet,
    pub physics: &'a P,
    pub terms: &'a [LossTerm],
    pub inverse: &'a [InverseParam],
    pub schedule: &'a Schedule,
    pub io: TrainIo,
}

impl<P: Physics> Trainer<'_, P> {
    pub fn run(&mut self, seed: u64) -> Result<TrainOutcome> {
        match self.schedule.precision {
            Precision::F64 => self.run_with::<f64>(seed),
            Precision::F32 => self.run_with::<f32>(seed),
        }
    }

    fn dump(&self, state: &TrainState) -> Option<PathBuf> {
        let dir = self.io.out_dir.as_ref()?;
        let path = dir.join("diverged_state.json");
        let json = serde_json::to_string(state).ok()?;
        std::fs::write(&path, json).ok()?;
        Some(path)
    }

    fn checkpoint(&self, theta: &[f64], iteration: usize) -> Result<()> {
        if let Some(dir) = &self.io.out_dir {
            let mut net = self.net.clone();
            let np = net.n_params();
            net.theta.copy_from_slice(&theta[..np]);
            net.save(dir.join(format!("checkpoint_{iteration:06}.json")))?;
        }
        Ok(())
    }

    fn run_with<T: Real>(&mut self, seed: u64) -> Result<TrainOutcome> {
        let sch = self.schedule;
        let net = &*self.net;
        let prepared = prepare_terms::<T, P>(net, self.physics, self.terms)?;
        let np = net.n_params();
        let mut theta = net.theta.clone();
        theta.extend(self.inverse.iter().map(InverseParam::trained_init));
        let mut state = TrainState {
            adam: Adam::new(theta.len()),
            theta,
            weights: self.terms.iter().map(|t| vec![1.0; t.len()]).collect(),
            weight_adam: match sch.sa_step {
                SaStep::Adam => self.terms.iter().map(|t| Adam::new(t.len())).collect(),
                SaStep::Ascent => Vec::new(),
            },
            iteration: 0,
            seed,
        };
        let mut history = Vec::new();
        let eval = |theta: &[f64], weights: &[Vec<f64>], grad: bool| {
            assemble_loss::<T, P>(net, self.physics, self.terms, &prepared, self.inverse, theta, weights, grad)
        };
        for k in 0..sch.adam_iters {
            let eta = sch.lr.at(k);
            let ev = match eval(&state.theta, &state.weights, true) {
                Ok(ev) => ev,
                Err(e @ Error::NonFinite { .. }) => {
                    self.dump(&state);
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            // The weighted total grows with the weights; judge the plain loss.
            let plain: f64 = ev.point_errors.iter().filter(|e| !e.is_empty()).map(|e| e.iter().sum::<f64>() / e.len() as f64).sum();
            if !(plain <= DIVERGENCE_LIMIT) || !ev.total.is_finite() {
                let dumped = self.dump(&state);
                log::error!("diverged at iteration {k}, loss {plain}; state dump: {dumped:?}");
                return Err(Error::Diverged {
                    iteration: k,
                    loss: if ev.total.is_finite() { plain } else { ev.total },
                });
            }
            if k % sch.log_every.max(1) == 0 {
                log::info!("adam {k:>6} loss {:.6e} eta {eta:.3e}", ev.total);
                history.push(HistoryRow {
                    iteration: k,
                    phase: "adam".into(),
                    total: ev.total,
                    per_term: ev.per_term.clone(),
                    eta,
                });
            }
            // Concurrent update: both use the gradients at the current iterate.
            state.adam.step(&mut state.theta, &ev.grad, eta)?;
            if sch.self_adaptive {
                for (k, t) in self.terms.iter().enumerate() {
                    if !t.adaptive {
                        continue;
                    }
                    let (w, e) = (&mut state.weights[k], &ev.point_errors[k]);
                    match sch.sa_step {
                        SaStep::Ascent => update_sa_weights(w, e, sch.rho, sch.sa_rule),
                        SaStep::Adam => {
                            let mut g = sa_gradient(w, e, sch.sa_rule);
                            g.iter_mut().for_each(|v| *v = -*v);
                            state.weight_adam[k].step(w, &g, sch.rho)?;
                        }
                    }
                }
            }
            state.iteration = k + 1;
            if let Some(every) = sch.checkpoint_every {
                if every > 0 && (k + 1) % every == 0 {
                    self.checkpoint(&state.theta, k + 1)?;
                }
            }
        }
        let mut report = None;
        if sch.lbfgs_iters > 0 {
            let weights = state.weights.clone();
            let opts = LbfgsOptions {
                history: sch.lbfgs_history,
                max_iters: sch.lbfgs_iters,
                ..LbfgsOptions::default()
            };
            let base = state.iteration;
            let mut calls = 0usize;
            let mut hist_rows = Vec::new();
            let log_every = sch.log_every.max(1);
            let r = lbfgs_run(
                &mut state.theta,
                |th| {
                    let ev = eval(th, &weights, true)?;
                    if calls % log_every == 0 {
                        hist_rows.push(HistoryRow {
                            iteration: base + calls,
                            phase: "lbfgs".into(),
                            total: ev.total,
                            per_term: ev.per_term.clone(),
                            eta: 0.0,
                        });
                    }
                    calls += 1;
                    // Non-finite trial points are rejected by the line search.
                    Ok((ev.total, ev.grad))
                },
                &opts,
            )?;
            history.extend(hist_rows);
            log::info!(
                "lbfgs stopped after {} iterations ({:?}), loss {:.6e}",
                r.iterations,
                r.termination,
                r.loss
            );
            state.iteration += r.iterations;
            report = Some(r);
        }
        let final_ev = eval(&state.theta, &state.weights, false)?;
        if !final_ev.total.is_finite() {
            self.dump(&state);
            return Err(Error::Diverged {
                iteration: state.iteration,
                loss: final_ev.total,
            });
        }
        history.push(HistoryRow {
            iteration: state.iteration,
            phase: "final".into(),
            total: final_ev.total,
            per_term: final_ev.per_term,
            eta: 0.0,
        });
        self.net.theta.copy_from_slice(&state.theta[..np]);
        let inverse = self
            .inverse
            .iter()
            .enumerate()
            .map(|(k, p)| p.raw(state.theta[np + k]))
            .collect();
        Ok(TrainOutcome {
            final_loss: final_ev.total,
            state,
            history,
            inverse,
            lbfgs: report,
        })
    }
}

/// Convenience wrapper around [`Trainer`].
pub fn train<P: Physics>(
    net: &mut MultiFidelityNet,
    physics: &P,
    terms: &[LossTerm],
    inverse: &[InverseParam],
    schedule: &Schedule,
    seed: u64,
) -> Result<TrainOutcome> {
    Trainer {
        net,
        physics,
        terms,
        inverse,
        schedule,
        io: TrainIo::default(),
    }
    .run(seed)
}

/// Loss history as CSV: `iteration, phase, total_loss, <term names>…, eta`.
pub fn write_history_csv(path: &Path, terms: &[LossTerm], rows: &[HistoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["iteration".to_string(), "phase".into(), "total_loss".into()];
    header.extend(terms.iter().map(|t| t.name.clone()));
    header.push("eta".into());
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.iteration.to_string(), r.phase.clone(), format!("{:e}", r.total)];
        rec.extend(r.per_term.iter().map(|v| format!("{v:e}")));
        rec.push(format!("{:e}", r.eta));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_points() {
        assert_eq!(lr_schedule(0), 0.001);
        assert_eq!(lr_schedule(399), 0.001);
        assert!((lr_schedule(400) - 0.00099).abs() < 1e-18);
    }

    #[test]
    fn sa_step() {
        let mut w = vec![1.0, 1.0];
        update_sa_weights(&mut w, &[0.5, 0.0], 0.1, SaRule::Unnormalized);
        assert!((w[0] - 1.1).abs() < 1e-15);
        assert_eq!(w[1], 1.0);
    }
}
