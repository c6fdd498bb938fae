//! Governing equations, boundary data and inverse parameters of the benchmark problems.

mod chemreact;
mod grayscott;
mod hydraulic;
mod metrics;
mod navier_stokes;
mod pendulum;

pub use chemreact::{ChemReact, EXACT_AR, EXACT_KF};
pub use grayscott::GrayScott;
pub use hydraulic::{
    van_genuchten_k, van_genuchten_k_f64, Conductivity, Hydraulic, HydraulicForm, ALPHA_RANGE, EXACT_ALPHA, EXACT_M,
    M_RANGE, SATURATED_K,
};
pub use metrics::{relative_l2, relative_l2_by_slice, EvalReport, InferredParam};
pub use navier_stokes::{check_re, NavierStokes, EXACT_INVERSE_RE, RE_INIT_RANGE};
pub use pendulum::Pendulum;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet, Scalar};
use crate::error::{Error, Result};
use crate::network::Fidelity;
use crate::training::{InverseParam, LossTerm, ParamScaling, Physics, TermKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    Pendulum,
    HydraulicFlux,
    HydraulicDiff,
    Chemreact,
    Grayscott,
    LidSteady,
    LidUnsteady,
    LidInverseRe,
}

impl ProblemKind {
    pub const ALL: [ProblemKind; 8] = [
        ProblemKind::Pendulum,
        ProblemKind::HydraulicFlux,
        ProblemKind::HydraulicDiff,
        ProblemKind::Chemreact,
        ProblemKind::Grayscott,
        ProblemKind::LidSteady,
        ProblemKind::LidUnsteady,
        ProblemKind::LidInverseRe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Pendulum => "pendulum",
            ProblemKind::HydraulicFlux => "hydraulic-flux",
            ProblemKind::HydraulicDiff => "hydraulic-diff",
            ProblemKind::Chemreact => "chemreact",
            ProblemKind::Grayscott => "grayscott",
            ProblemKind::LidSteady => "lid-steady",
            ProblemKind::LidUnsteady => "lid-unsteady",
            ProblemKind::LidInverseRe => "lid-inverse-re",
        }
    }
}

impl std::str::FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProblemKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown problem `{s}`")))
    }
}

/// Problem-specific knobs; unset fields take the benchmark values.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct ProblemOptions {
    #[serde(default)]
    pub time_span: Option<f64>,
    #[serde(default)]
    pub reynolds: Option<f64>,
    /// Known inlet flux for the flux-form hydraulic residual.
    #[serde(default)]
    pub inlet_flux: Option<f64>,
}

/// A benchmark problem with its constants resolved.
#[derive(Debug, Clone, PartialEq)]
pub enum Problem {
    Pendulum(Pendulum),
    Hydraulic(Hydraulic),
    ChemReact(ChemReact),
    GrayScott(GrayScott),
    NavierStokes(NavierStokes),
}

macro_rules! dispatch {
    ($self:expr, $p:ident => $body:expr) => {
        match $self {
            Problem::Pendulum($p) => $body,
            Problem::Hydraulic($p) => $body,
            Problem::ChemReact($p) => $body,
            Problem::GrayScott($p) => $body,
            Problem::NavierStokes($p) => $body,
        }
    };
}

impl Physics for Problem {
    fn input_dims(&self) -> usize {
        dispatch!(self, p => p.input_dims())
    }

    fn outputs(&self) -> usize {
        dispatch!(self, p => p.outputs())
    }

    fn residual_derivatives(&self) -> (Vec<usize>, Vec<usize>) {
        dispatch!(self, p => p.residual_derivatives())
    }

    fn residual<S: Scalar>(&self, x: &[S], y: &[Jet<S>], params: &[S]) -> Vec<S> {
        dispatch!(self, p => p.residual(x, y, params))
    }
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![a],
        _ => (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect(),
    }
}

impl Problem {
    pub fn build(kind: ProblemKind, opts: &ProblemOptions) -> Result<Self> {
        let span = |default: f64| positive("time_span", opts.time_span.unwrap_or(default));
        Ok(match kind {
            ProblemKind::Pendulum => Problem::Pendulum(Pendulum::new(span(50.0)?)),
            ProblemKind::HydraulicFlux => {
                let q0 = opts
                    .inlet_flux
                    .ok_or_else(|| Error::Config("flux-form hydraulic problem needs `inlet_flux`".into()))?;
                Problem::Hydraulic(Hydraulic::new(HydraulicForm::Flux { q0 }))
            }
            ProblemKind::HydraulicDiff => Problem::Hydraulic(Hydraulic::new(HydraulicForm::Differential)),
            ProblemKind::Chemreact => Problem::ChemReact(ChemReact::default()),
            ProblemKind::Grayscott => Problem::GrayScott(GrayScott::new(span(25.0)?)),
            ProblemKind::LidSteady => Problem::NavierStokes(NavierStokes::steady(opts.reynolds.unwrap_or(2500.0))?),
            ProblemKind::LidUnsteady => {
                Problem::NavierStokes(NavierStokes::unsteady(opts.reynolds.unwrap_or(1000.0), span(1.0)?)?)
            }
            ProblemKind::LidInverseRe => Problem::NavierStokes(NavierStokes::inverse()),
        })
    }

    pub fn input_names(&self) -> Vec<&'static str> {
        match self {
            Problem::Pendulum(_) => vec!["t"],
            Problem::Hydraulic(_) => vec!["x"],
            Problem::ChemReact(_) | Problem::GrayScott(_) => vec!["x", "t"],
            Problem::NavierStokes(ns) if ns.unsteady => vec!["x", "y", "t"],
            Problem::NavierStokes(_) => vec!["x", "y"],
        }
    }

    pub fn output_names(&self) -> Vec<&'static str> {
        match self {
            Problem::Pendulum(_) => vec!["s1", "s2"],
            Problem::Hydraulic(_) => vec!["h"],
            Problem::ChemReact(_) => vec!["ca", "cb"],
            Problem::GrayScott(_) => vec!["u", "v"],
            Problem::NavierStokes(_) => vec!["u", "v", "p"],
        }
    }

    /// Lower and upper corners of the input domain.
    pub fn domain(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Problem::Pendulum(p) => (vec![0.0], vec![p.time_span]),
            Problem::Hydraulic(h) => (vec![0.0], vec![h.length]),
            Problem::ChemReact(c) => (vec![0.0, 0.0], vec![c.length, c.duration]),
            Problem::GrayScott(g) => (vec![0.0, 0.0], vec![g.half_length, g.time_span]),
            Problem::NavierStokes(ns) if ns.unsteady => (vec![0.0, 0.0, 0.0], vec![1.0, 1.0, ns.time_span]),
            Problem::NavierStokes(_) => (vec![0.0, 0.0], vec![1.0, 1.0]),
        }
    }

    /// Residual points: a uniform grid in time for the pendulum, i.i.d.
    /// uniform samples elsewhere.
    pub fn residual_points(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        let (lo, hi) = self.domain();
        match self {
            Problem::Pendulum(p) => linspace(0.0, p.time_span, n).into_iter().map(|t| vec![t]).collect(),
            _ => (0..n)
                .map(|_| lo.iter().zip(&hi).map(|(&a, &b)| rng.random_range(a..=b)).collect())
                .collect(),
        }
    }

    /// Names of the inferred parameters, in the order the residual expects them.
    pub fn parameter_names(&self) -> Vec<&'static str> {
        match self {
            Problem::Hydraulic(_) => vec!["alpha0", "m"],
            Problem::ChemReact(_) => vec!["kf", "ar"],
            Problem::NavierStokes(ns) if ns.reynolds.is_none() => vec!["re"],
            _ => vec![],
        }
    }

    /// Ground-truth parameter values used to generate the high-fidelity data.
    pub fn exact_parameters(&self) -> Vec<f64> {
        match self {
            Problem::Hydraulic(_) => vec![EXACT_ALPHA, EXACT_M],
            Problem::ChemReact(_) => vec![EXACT_KF, EXACT_AR],
            Problem::NavierStokes(ns) if ns.reynolds.is_none() => vec![EXACT_INVERSE_RE],
            _ => vec![],
        }
    }

    /// Range from which both the initial guess and (for the hydraulic and
    /// reaction problems) the low-fidelity parameters are drawn.
    pub fn parameter_ranges(&self) -> Vec<(f64, f64)> {
        match self {
            Problem::Hydraulic(_) => vec![ALPHA_RANGE, M_RANGE],
            Problem::ChemReact(_) => vec![(0.75 * EXACT_KF, 1.25 * EXACT_KF), (0.75 * EXACT_AR, 1.25 * EXACT_AR)],
            Problem::NavierStokes(ns) if ns.reynolds.is_none() => vec![RE_INIT_RANGE],
            _ => vec![],
        }
    }

    /// Unknown parameters with random initial guesses. The hydraulic
    /// parameters are trained in their affinely scaled form.
    pub fn inverse_params(&self, rng: &mut impl Rng) -> Vec<InverseParam> {
        let scaled = matches!(self, Problem::Hydraulic(_));
        self.parameter_names()
            .into_iter()
            .zip(self.parameter_ranges())
            .map(|(name, (lo, hi))| InverseParam {
                name: name.to_string(),
                init: rng.random_range(lo..=hi),
                scaling: scaled.then_some(ParamScaling { lo, hi }),
            })
            .collect()
    }

    /// Initial and boundary conditions known in closed form, as high-fidelity
    /// loss terms. Conditions that need simulation data (the unsteady cavity
    /// initial field) come from the dataset instead.
    pub fn boundary_terms(&self, rng: &mut impl Rng) -> Vec<LossTerm> {
        let hf = Fidelity::High;
        let bc = TermKind::Boundary;
        match self {
            Problem::Pendulum(p) => vec![LossTerm::values(
                "hf_initial",
                bc,
                hf,
                vec![0, 1],
                vec![vec![0.0]],
                vec![p.initial.to_vec()],
            )],
            Problem::Hydraulic(h) => vec![LossTerm::values(
                "hf_boundary",
                bc,
                hf,
                vec![0],
                vec![vec![0.0], vec![h.length]],
                vec![vec![h.h0], vec![h.h1]],
            )],
            Problem::ChemReact(c) => {
                let xs = linspace(0.0, c.length, 51);
                let ts = linspace(0.0, c.duration, 21);
                vec![
                    LossTerm::values(
                        "hf_initial",
                        bc,
                        hf,
                        vec![0, 1],
                        xs.iter().map(|&x| vec![x, 0.0]).collect(),
                        vec![vec![1.0, 0.0]; xs.len()],
                    ),
                    LossTerm::values(
                        "hf_inlet",
                        bc,
                        hf,
                        vec![0, 1],
                        ts.iter().map(|&t| vec![0.0, t]).collect(),
                        vec![vec![1.0, 0.0]; ts.len()],
                    ),
                    LossTerm::derivative(
                        "hf_outlet",
                        hf,
                        vec![0, 1],
                        0,
                        ts.iter().map(|&t| vec![c.length, t]).collect(),
                        vec![vec![0.0, 0.0]; ts.len()],
                    ),
                ]
            }
            Problem::GrayScott(g) => {
                let xs = linspace(0.0, g.half_length, 101);
                let ts = linspace(0.0, g.time_span, 51);
                let walls: Vec<Vec<f64>> = ts
                    .iter()
                    .flat_map(|&t| [vec![0.0, t], vec![g.half_length, t]])
                    .collect();
                vec![
                    LossTerm::values(
                        "hf_initial",
                        bc,
                        hf,
                        vec![0, 1],
                        xs.iter().map(|&x| vec![x, 0.0]).collect(),
                        xs.iter()
                            .map(|&x| {
                                let (u, v) = g.initial(x);
                                vec![u, v]
                            })
                            .collect(),
                    ),
                    LossTerm::derivative("hf_neumann", hf, vec![0, 1], 0, walls.clone(), vec![vec![0.0, 0.0]; walls.len()]),
                ]
            }
            Problem::NavierStokes(ns) => {
                let per_wall = 100;
                let mut pts = Vec::with_capacity(4 * per_wall);
                let mut targets = Vec::with_capacity(4 * per_wall);
                for wall in 0..4 {
                    for s in linspace(0.0, 1.0, per_wall) {
                        let (x, y) = match wall {
                            0 => (s, 1.0),
                            1 => (s, 0.0),
                            2 => (0.0, s),
                            _ => (1.0, s),
                        };
                        let mut pt = vec![x, y];
                        let mut t = 0.0;
                        if ns.unsteady {
                            t = rng.random_range(0.0..=ns.time_span);
                            pt.push(t);
                        }
                        let u = if wall == 0 { ns.lid_velocity(x, t) } else { 0.0 };
                        pts.push(pt);
                        targets.push(vec![u, 0.0]);
                    }
                }
                vec![LossTerm::values("hf_walls", bc, hf, vec![0, 1], pts, targets)]
            }
        }
    }
}
