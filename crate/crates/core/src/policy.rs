//! Feedforward policies over flat parameter vectors, with optional Toeplitz
//! weight sharing.
//!
//! Toeplitz layers store one value per diagonal, which shrinks the search
//! space from `m*n` to `m+n-1` weights per layer. The flat layout is fixed:
//! for each layer in forward order, the `m+n-1` diagonal values ordered from
//! the bottom-left diagonal to the top-right one, followed by the `n`
//! biases. Hidden layers and the output use tanh; the output is then
//! affinely rescaled into the action bounds.

use nalgebra::{DMatrix, DVector};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicyArchitecture {
    /// Layer widths from input (state_dim) to output (action_dim).
    pub layer_sizes: Vec<usize>,
    pub toeplitz: bool,
}

impl PolicyArchitecture {
    pub fn new(layer_sizes: Vec<usize>, toeplitz: bool) -> Self {
        PolicyArchitecture { layer_sizes, toeplitz }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::config("architecture needs at least input and output layers"));
        }
        if self.layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::config("layer sizes must be positive"));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Total number of parameters: a Toeplitz m->n layer contributes
    /// `(m + n - 1) + n`, a dense one `m*n + n`.
    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| {
                let (m, n) = (w[0], w[1]);
                let weights = if self.toeplitz { m + n - 1 } else { m * n };
                weights + n
            })
            .sum()
    }
}

/// Flat parameter vector; its length must match the architecture exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams<T: Real> {
    pub values: Vec<T>,
}

impl<T: Real> PolicyParams<T> {
    pub fn new(values: Vec<T>) -> Self {
        PolicyParams { values }
    }

    pub fn zeros(len: usize) -> Self {
        PolicyParams { values: vec![T::zero(); len] }
    }

    pub fn random(len: usize, scale: f64, rng: &mut ChaCha8Rng) -> Self {
        PolicyParams {
            values: (0..len).map(|_| T::standard_normal(rng) * T::of(scale)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Expands the `m + n - 1` diagonal values of an n x m Toeplitz matrix.
/// Entry (i, j) carries the diagonal with offset `j - i`, so
/// `W[i][j] == W[i+1][j+1]`.
fn expand_toeplitz<T: Real>(diags: &[T], rows: usize, cols: usize) -> DMatrix<T> {
    debug_assert_eq!(diags.len(), rows + cols - 1);
    DMatrix::from_fn(rows, cols, |i, j| diags[j + rows - 1 - i])
}

/// A policy with weights materialized from a flat parameter vector; reused
/// across the steps of a rollout.
#[derive(Debug, Clone)]
pub struct PolicyNet<T: Real> {
    weights: Vec<DMatrix<T>>,
    biases: Vec<DVector<T>>,
}

impl<T: Real> PolicyNet<T> {
    pub fn compile(arch: &PolicyArchitecture, params: &PolicyParams<T>) -> Result<Self> {
        arch.validate()?;
        if params.len() != arch.param_count() {
            return Err(Error::config(format!(
                "parameter vector has length {} but the architecture needs {}",
                params.len(),
                arch.param_count()
            )));
        }
        let mut weights = Vec::with_capacity(arch.layer_sizes.len() - 1);
        let mut biases = Vec::with_capacity(arch.layer_sizes.len() - 1);
        let mut cursor = 0usize;
        for w in arch.layer_sizes.windows(2) {
            let (m, n) = (w[0], w[1]);
            let weight = if arch.toeplitz {
                let count = m + n - 1;
                let mat = expand_toeplitz(&params.values[cursor..cursor + count], n, m);
                cursor += count;
                mat
            } else {
                let count = m * n;
                // Row-major fill: row i holds the weights of output unit i.
                let mat = DMatrix::from_fn(n, m, |i, j| params.values[cursor + i * m + j]);
                cursor += count;
                mat
            };
            let bias = DVector::from_fn(n, |i, _| params.values[cursor + i]);
            cursor += n;
            weights.push(weight);
            biases.push(bias);
        }
        Ok(PolicyNet { weights, biases })
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().unwrap().nrows()
    }

    /// Forward pass: tanh at every layer, then an affine rescale of the
    /// squashed output into [action_low, action_high].
    pub fn act(&self, state: &DVector<T>, action_low: &[T], action_high: &[T]) -> DVector<T> {
        let mut x = state.clone();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            x = w * x + b;
            x.apply(|v| *v = v.tanh());
        }
        let half = T::of(0.5);
        for i in 0..x.len() {
            let (lo, hi) = (action_low[i], action_high[i]);
            x[i] = lo + (x[i] + T::one()) * half * (hi - lo);
        }
        x
    }
}

/// Convenience wrapper implementing the one-shot contract: compile, then
/// evaluate a single state.
pub fn act<T: Real>(
    params: &PolicyParams<T>,
    arch: &PolicyArchitecture,
    state: &DVector<T>,
    action_low: &[T],
    action_high: &[T],
) -> Result<DVector<T>> {
    if state.len() != arch.input_dim() {
        return Err(Error::config(format!(
            "state has length {} but the architecture expects {}",
            state.len(),
            arch.input_dim()
        )));
    }
    let net = PolicyNet::compile(arch, params)?;
    Ok(net.act(state, action_low, action_high))
}
