use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::{
    relative_l2, ChemReact, Hydraulic, HydraulicForm, Pendulum, Problem, ProblemKind, ProblemOptions, ALPHA_RANGE,
    EXACT_AR, EXACT_KF, EXACT_ALPHA, EXACT_M, M_RANGE,
};
use crate::refsolvers::{add_noise_values, bvp_solve_hydraulic, fd_adr_solve, linspace, rk4_integrate, GridField};

use super::config::GeneratorConfig;
use super::dataset::{DataFidelity, DataRow, Dataset};

/// Random streams derived from a run seed.
pub(crate) mod stream {
    pub const RESIDUAL: u64 = 1;
    pub const BOUNDARY: u64 = 2;
    pub const INVERSE: u64 = 3;
    pub const DATA: u64 = 4;
    pub const NOISE: u64 = 5;
}

pub(crate) fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

/// What a run needs to know about how its data were made.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataMeta {
    pub problem: Option<ProblemKind>,
    pub seed: Option<u64>,
    /// Parameters of the low-fidelity simulation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub lf_parameters: Vec<f64>,
    /// Inlet flux of the high-fidelity hydraulic solution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inlet_flux: Option<f64>,
    /// Error of the low-fidelity solution on the test split.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lf_relative_l2: Option<f64>,
    /// Standard deviation of the noise added to the low-fidelity labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generated {
    pub dataset: Dataset,
    pub meta: DataMeta,
}

/// Runs the reference solvers for `kind` and collects low-fidelity labels,
/// high-fidelity labels and the test split. The low-fidelity parameters of
/// inverse problems are drawn from `seed` unless fixed in `gen`.
pub fn generate(kind: ProblemKind, opts: &ProblemOptions, gen: &GeneratorConfig, seed: u64) -> Result<Generated> {
    let mut draw = rng(seed, stream::DATA);
    let mut out = match kind {
        ProblemKind::Pendulum => pendulum(opts, gen)?,
        ProblemKind::HydraulicFlux | ProblemKind::HydraulicDiff => hydraulic(gen, &mut draw)?,
        ProblemKind::Chemreact => chemreact(gen, &mut draw)?,
        other => {
            return Err(Error::Config(format!(
                "no built-in generator for `{}`; supply a dataset file",
                other.name()
            )))
        }
    };
    out.meta.problem = Some(kind);
    out.meta.seed = Some(seed);
    if let Some(noise) = &gen.noise {
        let sigma = noise.interpretation.std_dev(noise.level);
        let idx: Vec<usize> = (0..out.dataset.rows.len())
            .filter(|&i| out.dataset.rows[i].fidelity == DataFidelity::Low)
            .collect();
        let clean: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| out.dataset.rows[i].y.iter().map(|v| v.unwrap_or(0.0)).collect())
            .collect();
        let noise_seed = rng(seed, stream::NOISE).random();
        let noisy = add_noise_values(&clean, sigma, noise_seed)?;
        for (&i, v) in idx.iter().zip(noisy) {
            for (slot, nv) in out.dataset.rows[i].y.iter_mut().zip(v) {
                if slot.is_some() {
                    *slot = Some(nv);
                }
            }
        }
        out.meta.noise_std = Some(sigma);
    }
    Ok(out)
}

fn draw_parameters(gen: &GeneratorConfig, ranges: &[(f64, f64)], rng: &mut impl Rng) -> Result<Vec<f64>> {
    match &gen.lf_parameters {
        Some(p) if p.len() == ranges.len() => Ok(p.clone()),
        Some(p) => Err(Error::Config(format!("{} low-fidelity parameters, expected {}", p.len(), ranges.len()))),
        None => Ok(ranges.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect()),
    }
}

fn dataset_for(kind: ProblemKind, opts: &ProblemOptions) -> Result<Dataset> {
    let mut o = opts.clone();
    o.inlet_flux.get_or_insert(0.0);
    let p = Problem::build(kind, &o)?;
    Ok(Dataset::new(&p.input_names(), &p.output_names()))
}

fn pendulum(opts: &ProblemOptions, gen: &GeneratorConfig) -> Result<Generated> {
    let mut ds = dataset_for(ProblemKind::Pendulum, opts)?;
    let p = Pendulum::new(opts.time_span.unwrap_or(50.0));
    let span = (0.0, p.time_span);
    let rhs = |t: f64, s: &[f64]| p.rhs(t, s);
    let lf = rk4_integrate(rhs, &p.initial, span, gen.lf_step.unwrap_or(1.0 / 3.0))?;
    let hf = rk4_integrate(rhs, &p.initial, span, gen.hf_step.unwrap_or(0.01))?;
    for (&t, s) in lf.times.iter().zip(&lf.states) {
        ds.push(DataRow::labeled(vec![t], s, DataFidelity::Low));
    }
    for &t in &lf.times {
        ds.push(DataRow::labeled(vec![t], &hf.interpolate(t, rhs)?, DataFidelity::High));
    }
    let mut lf_at_test = Vec::with_capacity(hf.len());
    for (&t, s) in hf.times.iter().zip(&hf.states) {
        ds.push(DataRow::labeled(vec![t], s, DataFidelity::Test));
        lf_at_test.push(lf.interpolate(t, rhs)?);
    }
    let lf_err = relative_l2(&lf_at_test, &hf.states)?;
    Ok(Generated {
        dataset: ds,
        meta: DataMeta {
            lf_relative_l2: Some(lf_err),
            ..DataMeta::default()
        },
    })
}

fn observe(ds: &mut Dataset, field: &GridField, points: &[Vec<f64>], fidelity: DataFidelity) -> Result<Vec<Vec<f64>>> {
    let mut values = Vec::with_capacity(points.len());
    for x in points {
        let v = field.interpolate(x)?;
        ds.push(DataRow::labeled(x.clone(), &v, fidelity));
        values.push(v);
    }
    Ok(values)
}

fn grid_points(axes: &[Vec<f64>]) -> Vec<Vec<f64>> {
    axes.iter().fold(vec![vec![]], |acc, axis| {
        acc.iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .collect()
    })
}

fn grid_sizes(given: &Option<Vec<usize>>, default: &[usize]) -> Result<Vec<usize>> {
    let g = given.clone().unwrap_or_else(|| default.to_vec());
    if g.len() != default.len() || g.contains(&0) {
        return Err(Error::Config(format!("grid needs {} positive sizes, got {g:?}", default.len())));
    }
    Ok(g)
}

fn hydraulic(gen: &GeneratorConfig, rng: &mut impl Rng) -> Result<Generated> {
    let h = Hydraulic::new(HydraulicForm::Differential);
    let mut ds = Dataset::new(&["x"], &["h"]);
    let lf_params = draw_parameters(gen, &[ALPHA_RANGE, M_RANGE], rng)?;
    let hf = bvp_solve_hydraulic(EXACT_ALPHA, EXACT_M, h.h0, h.h1, h.length, gen.hf_step.unwrap_or(8.0))?;
    let lf = bvp_solve_hydraulic(lf_params[0], lf_params[1], h.h0, h.h1, h.length, gen.lf_step.unwrap_or(8.0))?;
    let n = grid_sizes(&gen.lf_grid, &[26])?[0];
    let lf_points: Vec<Vec<f64>> = linspace(0.0, h.length, n).into_iter().map(|x| vec![x]).collect();
    observe(&mut ds, &lf.field, &lf_points, DataFidelity::Low)?;
    let obs = gen.observations.clone().unwrap_or_else(|| vec![vec![96.0], vec![184.0]]);
    observe(&mut ds, &hf.field, &obs, DataFidelity::High)?;
    let test = hf.field.points();
    let truths = observe(&mut ds, &hf.field, &test, DataFidelity::Test)?;
    let lf_at_test = test.iter().map(|x| lf.field.interpolate(x)).collect::<Result<Vec<_>>>()?;
    Ok(Generated {
        dataset: ds,
        meta: DataMeta {
            lf_parameters: lf_params,
            inlet_flux: Some(hf.mean_flux()),
            lf_relative_l2: Some(relative_l2(&lf_at_test, &truths)?),
            ..DataMeta::default()
        },
    })
}

fn chemreact(gen: &GeneratorConfig, rng: &mut impl Rng) -> Result<Generated> {
    let c = ChemReact::default();
    let mut ds = Dataset::new(&["x", "t"], &["ca", "cb"]);
    let ranges = [(0.75 * EXACT_KF, 1.25 * EXACT_KF), (0.75 * EXACT_AR, 1.25 * EXACT_AR)];
    let lf_params = draw_parameters(gen, &ranges, rng)?;
    let dt = gen.time_step.unwrap_or(0.005);
    let hf = fd_adr_solve(EXACT_KF, EXACT_AR, gen.hf_step.unwrap_or(0.0125), dt)?.to_field("high fidelity")?;
    let lf = fd_adr_solve(lf_params[0], lf_params[1], gen.lf_step.unwrap_or(0.0125), dt)?.to_field("low fidelity")?;
    let g = grid_sizes(&gen.lf_grid, &[21, 11])?;
    let lf_points = grid_points(&[linspace(0.0, c.length, g[0]), linspace(0.0, c.duration, g[1])]);
    observe(&mut ds, &lf, &lf_points, DataFidelity::Low)?;
    let obs = gen.observations.clone().unwrap_or_else(|| {
        grid_points(&[vec![0.625, 1.25, 2.5, 3.75], vec![0.5, 1.0]])
    });
    observe(&mut ds, &hf, &obs, DataFidelity::High)?;
    let tg = grid_sizes(&gen.test_grid, &[101, 51])?;
    let test = grid_points(&[linspace(0.0, c.length, tg[0]), linspace(0.0, c.duration, tg[1])]);
    let truths = observe(&mut ds, &hf, &test, DataFidelity::Test)?;
    let lf_at_test = test.iter().map(|x| lf.interpolate(x)).collect::<Result<Vec<_>>>()?;
    Ok(Generated {
        dataset: ds,
        meta: DataMeta {
            lf_parameters: lf_params,
            lf_relative_l2: Some(relative_l2(&lf_at_test, &truths)?),
            ..DataMeta::default()
        },
    })
}
