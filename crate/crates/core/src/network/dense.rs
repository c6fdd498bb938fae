use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, JetLayout, Scalar, Tape, Var};
use crate::error::{Error, Result};
use crate::float::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Standard,
    Modified,
}

/// Fully connected net `n₀ → n₁ … n_L → n_{L+1}` with a linear output layer.
///
/// Parameters live in a flat vector starting at `offset`, ordered
/// `W¹, b¹, …, W^{L+1}, b^{L+1}` then, for the modified variant, `W^U, b^U, W^V, b^V`.
/// Each `W^l` is `n_l × n_{l−1}` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseNet {
    pub widths: Vec<usize>,
    pub variant: Variant,
    pub activation: Activation,
    pub offset: usize,
}

/// Tape handles for one [`DenseNet`].
pub struct DenseParams<'t, T: Real> {
    pub layers: Vec<(Var<'t, T>, Var<'t, T>)>,
    pub gates: Option<[(Var<'t, T>, Var<'t, T>); 2]>,
}

impl DenseNet {
    /// Picks the modified variant whenever it is admissible.
    pub fn auto(widths: Vec<usize>, activation: Activation, offset: usize) -> Result<Self> {
        let variant = if Self::modified_admissible(&widths) {
            Variant::Modified
        } else {
            Variant::Standard
        };
        Self::new(widths, variant, activation, offset)
    }

    pub fn new(widths: Vec<usize>, variant: Variant, activation: Activation, offset: usize) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::Config(format!("invalid layer widths {widths:?}")));
        }
        if variant == Variant::Modified && !Self::modified_admissible(&widths) {
            return Err(Error::Config(format!(
                "modified variant needs at least 2 hidden layers of equal width, got {widths:?}"
            )));
        }
        Ok(DenseNet {
            widths,
            variant,
            activation,
            offset,
        })
    }

    pub fn modified_admissible(widths: &[usize]) -> bool {
        let hidden = &widths[1..widths.len() - 1];
        hidden.len() >= 2 && hidden.iter().all(|&w| w == hidden[0])
    }

    pub fn hidden_layers(&self) -> usize {
        self.widths.len() - 2
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    fn layer_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    fn gate_params(&self) -> usize {
        match self.variant {
            Variant::Standard => 0,
            Variant::Modified => 2 * (self.widths[0] * self.widths[1] + self.widths[1]),
        }
    }

    pub fn n_params(&self) -> usize {
        self.layer_params() + self.gate_params()
    }

    /// `(weight offset, bias offset, rows, cols)` of every affine map, layers first.
    fn blocks(&self) -> Vec<(usize, usize, usize, usize)> {
        let mut off = self.offset;
        let mut out = Vec::new();
        let mut push = |rows: usize, cols: usize| {
            out.push((off, off + rows * cols, rows, cols));
            off += rows * cols + rows;
        };
        for w in self.widths.windows(2) {
            push(w[1], w[0]);
        }
        if self.variant == Variant::Modified {
            push(self.widths[1], self.widths[0]);
            push(self.widths[1], self.widths[0]);
        }
        out
    }

    /// Xavier-uniform weights, zero biases.
    pub fn init<R: Rng + ?Sized>(&self, theta: &mut [f64], rng: &mut R) {
        for (w, b, rows, cols) in self.blocks() {
            let a = (6.0 / (rows + cols) as f64).sqrt();
            let dist = Uniform::new_inclusive(-a, a).unwrap();
            for v in &mut theta[w..w + rows * cols] {
                *v = dist.sample(rng);
            }
            theta[b..b + rows].fill(0.0);
        }
    }

    fn affine<S: Scalar>(theta: &[S], (w, b, rows, cols): (usize, usize, usize, usize), x: &[S]) -> Vec<S> {
        (0..rows)
            .map(|r| {
                let row = &theta[w + r * cols..w + (r + 1) * cols];
                let mut acc = theta[b + r].clone();
                for (wi, xi) in row.iter().zip(x) {
                    acc = acc + wi.clone() * xi.clone();
                }
                acc
            })
            .collect()
    }

    /// Per-point evaluation over any [`Scalar`].
    pub fn forward<S: Scalar>(&self, theta: &[S], x: &[S]) -> Result<Vec<S>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "dense net expects {} inputs, got {}",
                self.input_dim(),
                x.len()
            )));
        }
        if theta.len() < self.offset + self.n_params() {
            return Err(Error::Shape(format!(
                "parameter vector has {} entries, need {}",
                theta.len(),
                self.offset + self.n_params()
            )));
        }
        let blocks = self.blocks();
        let nl = self.widths.len() - 1;
        let act = |v: Vec<S>| -> Vec<S> { v.iter().map(|z| self.activation.apply(z)).collect() };
        let out = match self.variant {
            Variant::Standard => {
                let mut h = x.to_vec();
                for blk in &blocks[..nl - 1] {
                    h = act(Self::affine(theta, *blk, &h));
                }
                Self::affine(theta, blocks[nl - 1], &h)
            }
            Variant::Modified => {
                let u = act(Self::affine(theta, blocks[nl], x));
                let v = act(Self::affine(theta, blocks[nl + 1], x));
                let mut h = act(Self::affine(theta, blocks[0], x));
                for blk in &blocks[1..nl - 1] {
                    let z = act(Self::affine(theta, *blk, &h));
                    h = z
                        .iter()
                        .zip(u.iter().zip(&v))
                        .map(|(z, (u, v))| (z.lift(1.0) - z.clone()) * u.clone() + z.clone() * v.clone())
                        .collect();
                }
                Self::affine(theta, blocks[nl - 1], &h)
            }
        };
        Ok(out)
    }

    /// Records every weight matrix and bias row as a parameter node.
    pub fn register<'t, T: Real>(&self, tape: &'t Tape<T>, theta: &[f64]) -> DenseParams<'t, T> {
        let blocks = self.blocks();
        let nl = self.widths.len() - 1;
        let reg = |(w, b, rows, cols): (usize, usize, usize, usize)| {
            let wm = Array2::from_shape_fn((rows, cols), |(r, c)| T::from_f64(theta[w + r * cols + c]));
            let bm = Array2::from_shape_fn((1, rows), |(_, r)| T::from_f64(theta[b + r]));
            (tape.param(wm, w), tape.param(bm, b))
        };
        let layers = blocks[..nl].iter().map(|&blk| reg(blk)).collect();
        let gates = (self.variant == Variant::Modified).then(|| [reg(blocks[nl]), reg(blocks[nl + 1])]);
        DenseParams { layers, gates }
    }

    /// Batched evaluation of a jet-stacked input (`layout.rows() × n₀`).
    pub fn forward_tape<'t, T: Real>(
        &self,
        p: &DenseParams<'t, T>,
        x: Var<'t, T>,
        layout: &JetLayout,
    ) -> Var<'t, T> {
        let tape = x.tape();
        let n = layout.points;
        let affine = |h: Var<'t, T>, (w, b): (Var<'t, T>, Var<'t, T>)| tape.add_bias(tape.matmul_t(h, w), b, n);
        let act = |h: Var<'t, T>| tape.jet_act(h, self.activation, layout);
        let nl = p.layers.len();
        match &p.gates {
            None => {
                let mut h = x;
                for &l in &p.layers[..nl - 1] {
                    h = act(affine(h, l));
                }
                affine(h, p.layers[nl - 1])
            }
            Some([gu, gv]) => {
                let u = act(affine(x, *gu));
                let v = act(affine(x, *gv));
                let mut h = act(affine(x, p.layers[0]));
                for &l in &p.layers[1..nl - 1] {
                    let z = act(affine(h, l));
                    h = tape.jet_gate(z, u, v, layout);
                }
                affine(h, p.layers[nl - 1])
            }
        }
    }
}


#[cfg(test)]
impl DenseNet {
    pub(crate) fn blocks_for_test(&self) -> Vec<(usize, usize, usize, usize)> {
        self.blocks()
    }
}
