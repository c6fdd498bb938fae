//! Feature-adjacent multi-fidelity network: scaling, Fourier embedding,
//! encoder, feature shift and decoder.

mod dense;
mod embedding;
mod scaler;

pub use dense::{DenseNet, DenseParams, Variant};
pub use embedding::FourierEmbedding;
pub use scaler::{InputScaler, OutputMode, OutputScaler};

use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Jet, JetLayout, ParamFunction, Scalar, Tape, Var};
use crate::error::{Error, Result};
use crate::float::Real;

pub const CHECKPOINT_FORMAT: &str = "mfpinn-checkpoint/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Fidelity {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(rename_all = "lowercase")]
pub enum VariantRule {
    /// Modified wherever admissible.
    #[default]
    Auto,
    Standard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct FourierConfig {
    pub features: usize,
    pub sigma: Vec<f64>,
}

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, schemars::JsonSchema)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    /// Widths of the `L_M` interior layers.
    pub hidden: Vec<usize>,
    /// `L_f`: index (1-based) of the feature layer; 0 means the embedded input.
    pub feature_depth: usize,
    /// `d_f`.
    pub feature_distance: f64,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub fourier: Option<FourierConfig>,
    #[serde(default)]
    pub variant: VariantRule,
    #[serde(default = "default_lambda_std")]
    pub lambda_std: f64,
}

fn default_lambda_std() -> f64 {
    0.2
}

impl NetworkConfig {
    pub fn uniform(layers: usize, width: usize, feature_depth: usize) -> Self {
        NetworkConfig {
            hidden: vec![width; layers],
            feature_depth,
            feature_distance: 1.0,
            activation: Activation::Swish,
            fourier: None,
            variant: VariantRule::Auto,
            lambda_std: 0.2,
        }
    }
}

/// Shared encoder/decoder with a trainable feature shift `λ`:
/// `y_L = g_d(g_e(x̂))`, `y_H = g_d(g_e(x̂) ⊗ (1 + d_f λ))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiFidelityNet {
    pub config: NetworkConfig,
    pub input_scaler: InputScaler,
    pub output_scaler: OutputScaler,
    pub embedding: Option<FourierEmbedding>,
    pub encoder: Option<DenseNet>,
    pub decoder: DenseNet,
    pub lambda_offset: usize,
    pub feature_width: usize,
    pub outputs: usize,
    /// Flat trainable parameters: encoder, decoder, then `λ`.
    pub theta: Vec<f64>,
    pub seed: u64,
}

/// Tape handles for a [`MultiFidelityNet`].
pub struct NetParams<'t, T: Real> {
    pub encoder: Option<DenseParams<'t, T>>,
    pub decoder: DenseParams<'t, T>,
    pub lambda: Var<'t, T>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    net: MultiFidelityNet,
}

impl MultiFidelityNet {
    /// Builds and initializes a network: Xavier-uniform weights, zero biases,
    /// `λ ~ N(0, lambda_std²)`.
    pub fn init(
        config: &NetworkConfig,
        input_scaler: InputScaler,
        output_scaler: OutputScaler,
        outputs: usize,
        seed: u64,
    ) -> Result<Self> {
        let lm = config.hidden.len();
        if config.feature_depth > lm {
            return Err(Error::Config(format!(
                "feature depth {} exceeds the {lm} interior layers",
                config.feature_depth
            )));
        }
        if outputs == 0 {
            return Err(Error::Config("network needs at least one output".into()));
        }
        let np = input_scaler.dims();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = match &config.fourier {
            Some(f) => {
                if f.sigma.len() != np {
                    return Err(Error::Config(format!(
                        "{} average wave numbers for {np} input dimensions",
                        f.sigma.len()
                    )));
                }
                Some(FourierEmbedding::sample(f.features, &f.sigma, &mut rng)?)
            }
            None => None,
        };
        let n_in = embedding.as_ref().map_or(np, FourierEmbedding::output_dims);
        let lf = config.feature_depth;
        let build = |widths: Vec<usize>, offset: usize| match config.variant {
            VariantRule::Auto => DenseNet::auto(widths, config.activation, offset),
            VariantRule::Standard => DenseNet::new(widths, Variant::Standard, config.activation, offset),
        };
        let encoder = if lf == 0 {
            None
        } else {
            let mut w = vec![n_in];
            w.extend_from_slice(&config.hidden[..lf]);
            Some(build(w, 0)?)
        };
        let feature_width = if lf == 0 { n_in } else { config.hidden[lf - 1] };
        let dec_off = encoder.as_ref().map_or(0, DenseNet::n_params);
        let mut w = vec![feature_width];
        w.extend_from_slice(&config.hidden[lf..]);
        w.push(outputs);
        let decoder = build(w, dec_off)?;
        let lambda_offset = dec_off + decoder.n_params();
        let mut theta = vec![0.0; lambda_offset + feature_width];
        if let Some(e) = &encoder {
            e.init(&mut theta, &mut rng);
        }
        decoder.init(&mut theta, &mut rng);
        let normal = Normal::new(0.0, config.lambda_std)
            .map_err(|e| Error::Config(format!("lambda_std {}: {e}", config.lambda_std)))?;
        for v in &mut theta[lambda_offset..] {
            *v = normal.sample(&mut rng);
        }
        if config.activation.max_order() < 2 {
            log::warn!("activation {:?} has no second-derivative rule", config.activation);
        }
        Ok(MultiFidelityNet {
            config: config.clone(),
            input_scaler,
            output_scaler,
            embedding,
            encoder,
            decoder,
            lambda_offset,
            feature_width,
            outputs,
            theta,
            seed,
        })
    }

    pub fn input_dims(&self) -> usize {
        self.input_scaler.dims()
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn lambda(&self) -> &[f64] {
        &self.theta[self.lambda_offset..]
    }

    pub fn set_lambda(&mut self, lambda: &[f64]) -> Result<()> {
        if lambda.len() != self.feature_width {
            return Err(Error::Shape(format!(
                "lambda has {} entries, feature layer has {}",
                lambda.len(),
                self.feature_width
            )));
        }
        self.theta[self.lambda_offset..].copy_from_slice(lambda);
        Ok(())
    }

    /// Scaled and embedded input `γ(s_I(x))`.
    pub fn prepare<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let xs = self.input_scaler.scale(x);
        match &self.embedding {
            Some(e) => e.embed(&xs),
            None => xs,
        }
    }

    /// Feature vector `g_e(γ(s_I(x)))`.
    pub fn features<S: Scalar>(&self, theta: &[S], x: &[S]) -> Result<Vec<S>> {
        let h = self.prepare(x);
        match &self.encoder {
            Some(e) => e.forward(theta, &h),
            None => Ok(h),
        }
    }

    /// Per-point evaluation with explicit parameters.
    pub fn eval<S: Scalar>(&self, theta: &[S], x: &[S], fidelity: Fidelity) -> Result<Vec<S>> {
        if x.len() != self.input_dims() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dims(),
                x.len()
            )));
        }
        if theta.len() < self.theta.len() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, need {}",
                theta.len(),
                self.theta.len()
            )));
        }
        let mut f = self.features(theta, x)?;
        if fidelity == Fidelity::High {
            let df = self.config.feature_distance;
            for (k, fk) in f.iter_mut().enumerate() {
                let factor = theta[self.lambda_offset + k].scale(df).offset(1.0);
                *fk = fk.clone() * factor;
            }
        }
        let y = self.decoder.forward(theta, &f)?;
        Ok(self.output_scaler.unscale(&y))
    }

    /// `y_L` at a raw input point.
    pub fn forward_lf(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.eval(&self.theta, x, Fidelity::Low)
    }

    /// `y_H` at a raw input point.
    pub fn forward_hf(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.eval(&self.theta, x, Fidelity::High)
    }

    pub fn forward(&self, x: &[f64], fidelity: Fidelity) -> Result<Vec<f64>> {
        self.eval(&self.theta, x, fidelity)
    }

    pub fn predict(&self, points: &[Vec<f64>], fidelity: Fidelity) -> Result<Vec<Vec<f64>>> {
        points.iter().map(|x| self.forward(x, fidelity)).collect()
    }

    /// Fixed-parameter view usable with `jet_eval` and friends.
    pub fn view(&self, fidelity: Fidelity) -> NetView<'_> {
        NetView { net: self, fidelity }
    }

    /// Jet-stacked, scaled and embedded inputs for a batch of raw points.
    ///
    /// These do not depend on `θ`, so callers can build them once per point set.
    pub fn prepare_batch<T: Real>(&self, points: &[Vec<f64>], layout: &JetLayout) -> Result<Array2<T>> {
        if points.len() != layout.points {
            return Err(Error::Shape(format!(
                "layout is for {} points, got {}",
                layout.points,
                points.len()
            )));
        }
        let np = self.input_dims();
        if let Some(&d) = layout.first.iter().find(|&&d| d >= np) {
            return Err(Error::Shape(format!("derivative dimension {d} with {np} inputs")));
        }
        let width = self.embedding.as_ref().map_or(np, FourierEmbedding::output_dims);
        let n = layout.points;
        let mut m = Array2::zeros((layout.rows(), width));
        for (p, x) in points.iter().enumerate() {
            if x.len() != np {
                return Err(Error::Shape(format!("point {p} has {} coordinates, expected {np}", x.len())));
            }
            let seeds: Vec<Jet<f64>> = x
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    if layout.first.contains(&i) {
                        Jet::variable(v, i, np)
                    } else {
                        Jet::constant(v, np)
                    }
                })
                .collect();
            let h = self.prepare(&seeds);
            for (c, j) in h.iter().enumerate() {
                m[[p, c]] = T::from_f64(j.value);
                for (k, &d) in layout.first.iter().enumerate() {
                    m[[(1 + k) * n + p, c]] = T::from_f64(j.d1(d));
                }
                for (k, &d) in layout.second.iter().enumerate() {
                    m[[(1 + layout.first.len() + k) * n + p, c]] = T::from_f64(j.d2(d));
                }
            }
        }
        Ok(m)
    }

    /// Records `θ` (or an override of the same length) on `tape`.
    pub fn register<'t, T: Real>(&self, tape: &'t Tape<T>, theta: &[f64]) -> NetParams<'t, T> {
        let lam = Array2::from_shape_fn((1, self.feature_width), |(_, k)| {
            T::from_f64(theta[self.lambda_offset + k])
        });
        NetParams {
            encoder: self.encoder.as_ref().map(|e| e.register(tape, theta)),
            decoder: self.decoder.register(tape, theta),
            lambda: tape.param(lam, self.lambda_offset),
        }
    }

    fn encode_tape<'t, T: Real>(&self, p: &NetParams<'t, T>, input: Var<'t, T>, layout: &JetLayout) -> Var<'t, T> {
        match (&self.encoder, &p.encoder) {
            (Some(e), Some(ep)) => e.forward_tape(ep, input, layout),
            _ => input,
        }
    }

    fn decode_tape<'t, T: Real>(
        &self,
        p: &NetParams<'t, T>,
        f: Var<'t, T>,
        layout: &JetLayout,
        fidelity: Fidelity,
    ) -> Var<'t, T> {
        let tape = f.tape();
        let f = match fidelity {
            Fidelity::Low => f,
            Fidelity::High => tape.scale_cols(f, p.lambda, T::from_f64(self.config.feature_distance)),
        };
        let y = self.decoder.forward_tape(&p.decoder, f, layout);
        if self.output_scaler.is_identity() {
            y
        } else {
            let sc: Vec<T> = self.output_scaler.std.iter().map(|&v| T::from_f64(v)).collect();
            let sh: Vec<T> = self.output_scaler.mean.iter().map(|&v| T::from_f64(v)).collect();
            tape.col_affine(y, &sc, &sh, layout.points)
        }
    }

    /// Batched jet-stacked outputs (`layout.rows() × outputs`) for one fidelity.
    pub fn forward_tape<'t, T: Real>(
        &self,
        p: &NetParams<'t, T>,
        input: Var<'t, T>,
        layout: &JetLayout,
        fidelity: Fidelity,
    ) -> Var<'t, T> {
        let f = self.encode_tape(p, input, layout);
        self.decode_tape(p, f, layout, fidelity)
    }

    /// Both fidelities on the same batch, sharing the encoder pass.
    pub fn forward_tape_both<'t, T: Real>(
        &self,
        p: &NetParams<'t, T>,
        input: Var<'t, T>,
        layout: &JetLayout,
    ) -> (Var<'t, T>, Var<'t, T>) {
        let f = self.encode_tape(p, input, layout);
        (
            self.decode_tape(p, f, layout, Fidelity::Low),
            self.decode_tape(p, f, layout, Fidelity::High),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            net: self.clone(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(s)?;
        match v.get("format").and_then(|f| f.as_str()) {
            Some(CHECKPOINT_FORMAT) => {}
            Some(other) => return Err(Error::Checkpoint(format!("unsupported format tag {other:?}"))),
            None => return Err(Error::Checkpoint("missing format tag".into())),
        }
        let ck: Checkpoint = serde_json::from_value(v)?;
        ck.net.validate()?;
        Ok(ck.net)
    }

    fn validate(&self) -> Result<()> {
        let expect = self.lambda_offset + self.feature_width;
        let dec_end = self.decoder.offset + self.decoder.n_params();
        if self.theta.len() != expect || dec_end != self.lambda_offset {
            return Err(Error::Checkpoint(format!(
                "parameter vector of length {} does not match the architecture",
                self.theta.len()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

/// Splits a jet-stacked output into one jet per component, each entry an `n × 1` column.
pub fn split_output<'t, T: Real>(y: Var<'t, T>, layout: &JetLayout, dims: usize) -> Vec<Jet<Var<'t, T>>> {
    let tape = y.tape();
    let cols = y.shape().1;
    (0..cols)
        .map(|c| {
            let col = |r: std::ops::Range<usize>| tape.slice(y, r, c..c + 1);
            let mut j = Jet::constant(col(layout.value_rows()), dims);
            for &d in &layout.first {
                j.first[d] = layout.first_rows(d).map(col);
            }
            for &d in &layout.second {
                j.second[d] = layout.second_rows(d).map(col);
            }
            j
        })
        .collect()
}

/// A network with its parameters frozen at a fidelity.
pub struct NetView<'a> {
    pub net: &'a MultiFidelityNet,
    pub fidelity: Fidelity,
}

impl crate::autodiff::JetFunction for NetView<'_> {
    fn eval<S: Scalar>(&self, x: &[S]) -> Vec<S> {
        let th: Vec<S> = self.net.theta.iter().map(|&t| x[0].lift(t)).collect();
        self.net
            .eval(&th, x, self.fidelity)
            .expect("input length checked by caller")
    }

    fn max_order(&self) -> usize {
        self.net.config.activation.max_order()
    }
}

impl ParamFunction for NetView<'_> {
    fn n_params(&self) -> usize {
        self.net.n_params()
    }

    fn eval<S: Scalar>(&self, theta: &[S], x: &[S]) -> Vec<S> {
        self.net
            .eval(theta, x, self.fidelity)
            .expect("input length checked by caller")
    }

    fn max_order(&self) -> usize {
        self.net.config.activation.max_order()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(lf: usize, fourier: bool) -> MultiFidelityNet {
        let mut cfg = NetworkConfig::uniform(4, 6, lf);
        if fourier {
            cfg.fourier = Some(FourierConfig {
                features: 5,
                sigma: vec![1.0, 0.5],
            });
        }
        let sc = InputScaler::new(vec![0.0, -1.0], vec![2.0, 3.0]).unwrap();
        MultiFidelityNet::init(&cfg, sc, OutputScaler::identity(), 2, 3).unwrap()
    }

    #[test]
    fn biases_start_at_zero() {
        let net = small(2, true);
        for d in net.encoder.iter().chain([&net.decoder]) {
            for (_, b, rows, _) in d.blocks_for_test() {
                assert!(net.theta[b..b + rows].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn feature_width_rules() {
        assert_eq!(small(0, true).feature_width, 10);
        assert_eq!(small(0, false).feature_width, 2);
        assert!(small(0, true).encoder.is_none());
        assert_eq!(small(4, false).decoder.hidden_layers(), 0);
    }

    #[test]
    fn same_seed_same_parameters() {
        let a = small(2, true);
        let b = small(2, true);
        assert!(a.theta.iter().zip(&b.theta).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
