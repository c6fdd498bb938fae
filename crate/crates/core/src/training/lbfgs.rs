use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LbfgsOptions {
    pub history: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_evals: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            history: 50,
            max_iters: 8000,
            grad_tol: 1e-12,
            c1: 1e-4,
            c2: 0.9,
            max_evals: 25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    MaxIterations,
    GradientNorm,
    LineSearchFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbfgsReport {
    pub iterations: usize,
    pub evaluations: usize,
    pub loss: f64,
    pub grad_norm: f64,
    pub termination: Termination,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Two-loop recursion: `-H·g` from the stored pairs.
fn direction(g: &[f64], hist: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(hist.len());
    for (s, y, rho) in hist.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = hist.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for ((s, y, rho), a) in hist.iter().zip(alphas.into_iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Minimizer of the cubic interpolating `(a, fa, ga)` and `(b, fb, gb)`, kept inside the bracket.
fn cubic_min(a: f64, fa: f64, ga: f64, b: f64, fb: f64, gb: f64) -> f64 {
    let (lo, hi) = if a < b { (a, b) } else { (b, a) };
    let d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
    let disc = d1 * d1 - ga * gb;
    if disc >= 0.0 {
        let d2 = disc.sqrt() * (b - a).signum();
        let t = b - (b - a) * (gb + d2 - d1) / (gb - ga + 2.0 * d2);
        if t.is_finite() {
            let margin = 0.1 * (hi - lo);
            return t.clamp(lo + margin, hi - margin);
        }
    }
    (lo + hi) / 2.0
}

struct Point {
    t: f64,
    f: f64,
    g: Vec<f64>,
    dg: f64,
}

enum Search {
    Found(Point),
    Failed,
}

/// Strong-Wolfe line search (bracketing then zoom).
fn line_search<F>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    dg0: f64,
    d: &[f64],
    t_init: f64,
    opts: &LbfgsOptions,
    evals: &mut usize,
) -> Result<Search>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut eval = |t: f64, evals: &mut usize| -> Result<Point> {
        let xt: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + t * di).collect();
        let (fv, g) = f(&xt)?;
        *evals += 1;
        let dg = dot(&g, d);
        Ok(Point { t, f: fv, g, dg })
    };
    let armijo = |p: &Point| p.f.is_finite() && p.f <= f0 + opts.c1 * p.t * dg0;
    let curvature = |p: &Point| p.dg.abs() <= -opts.c2 * dg0;
    let mut used = 0;
    let mut prev = Point {
        t: 0.0,
        f: f0,
        g: Vec::new(),
        dg: dg0,
    };
    let mut t = t_init;
    let mut best: Option<Point> = None;
    let (mut lo, mut hi);
    loop {
        if used >= opts.max_evals {
            return Ok(best.map_or(Search::Failed, Search::Found));
        }
        let p = eval(t, evals)?;
        used += 1;
        if !armijo(&p) || (used > 1 && p.f >= prev.f) {
            lo = prev;
            hi = p;
            break;
        }
        if curvature(&p) {
            return Ok(Search::Found(p));
        }
        if p.dg >= 0.0 {
            lo = p;
            hi = prev;
            break;
        }
        t = p.t * 2.0;
        if best.as_ref().is_none_or(|b| p.f < b.f) {
            best = Some(Point {
                t: p.t,
                f: p.f,
                g: p.g.clone(),
                dg: p.dg,
            });
        }
        prev = p;
    }
    // Zoom: `lo` satisfies sufficient decrease with the lowest value seen.
    loop {
        if used >= opts.max_evals {
            if lo.t > 0.0 && armijo(&lo) {
                return Ok(Search::Found(lo));
            }
            return Ok(best.map_or(Search::Failed, Search::Found));
        }
        let tj = if hi.f.is_finite() && hi.dg.is_finite() {
            cubic_min(lo.t, lo.f, lo.dg, hi.t, hi.f, hi.dg)
        } else {
            (lo.t + hi.t) / 2.0
        };
        if (hi.t - lo.t).abs() < 1e-16 * lo.t.abs().max(1.0) {
            return Ok(if lo.t > 0.0 { Search::Found(lo) } else { Search::Failed });
        }
        let p = eval(tj, evals)?;
        used += 1;
        if !armijo(&p) || p.f >= lo.f {
            hi = p;
        } else {
            if curvature(&p) {
                return Ok(Search::Found(p));
            }
            if p.dg * (hi.t - lo.t) >= 0.0 {
                hi = lo;
            }
            lo = p;
        }
    }
}

/// Limited-memory BFGS with a strong-Wolfe line search.
///
/// `f` returns the loss and its gradient. On a line-search failure the
/// history is discarded once and the search retried along `-g`; a second
/// failure stops the run.
pub fn lbfgs_run<F>(theta: &mut [f64], mut f: F, opts: &LbfgsOptions) -> Result<LbfgsReport>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let mut evals = 1;
    let (mut fx, mut g) = f(theta)?;
    let mut hist: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.history);
    let mut reset_used = false;
    let mut iters = 0;
    let termination = loop {
        let gn = norm(&g);
        if gn < opts.grad_tol {
            break Termination::GradientNorm;
        }
        if iters >= opts.max_iters {
            break Termination::MaxIterations;
        }
        let mut d = direction(&g, &hist);
        let mut dg = dot(&d, &g);
        if !(dg < 0.0) {
            hist.clear();
            d = g.iter().map(|v| -v).collect();
            dg = -gn * gn;
        }
        let t0 = if hist.is_empty() { (1.0 / gn).min(1.0) } else { 1.0 };
        match line_search(&mut f, theta, fx, dg, &d, t0, opts, &mut evals)? {
            Search::Found(p) => {
                let s: Vec<f64> = d.iter().map(|v| v * p.t).collect();
                let y: Vec<f64> = p.g.iter().zip(&g).map(|(a, b)| a - b).collect();
                let sy = dot(&s, &y);
                if sy > 1e-10 * dot(&y, &y).max(f64::MIN_POSITIVE) {
                    if hist.len() == opts.history {
                        hist.pop_front();
                    }
                    hist.push_back((s.clone(), y, 1.0 / sy));
                }
                for (xi, si) in theta.iter_mut().zip(&s) {
                    *xi += si;
                }
                fx = p.f;
                g = p.g;
                iters += 1;
            }
            Search::Failed => {
                if reset_used || hist.is_empty() {
                    log::warn!("L-BFGS line search failed at iteration {iters}; stopping");
                    break Termination::LineSearchFailure;
                }
                log::warn!("L-BFGS line search failed at iteration {iters}; resetting history");
                hist.clear();
                reset_used = true;
            }
        }
    };
    Ok(LbfgsReport {
        iterations: iters,
        evaluations: evals,
        loss: fx,
        grad_norm: norm(&g),
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_stops_immediately() {
        let mut x = vec![0.0, 0.0];
        let r = lbfgs_run(&mut x, |x| Ok((x[0] * x[0] + x[1] * x[1], vec![2.0 * x[0], 2.0 * x[1]])), &LbfgsOptions::default()).unwrap();
        assert_eq!(r.iterations, 0);
        assert_eq!(r.termination, Termination::GradientNorm);
        assert_eq!(x, vec![0.0, 0.0]);
    }
}
