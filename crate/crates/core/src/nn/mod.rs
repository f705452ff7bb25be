//! Dense feed-forward networks with exact input derivatives and parameter gradients.
//!
//! Input derivatives (through fourth order in `x`) are propagated forward as
//! Taylor jets; parameter gradients of any loss built from those jets come from
//! a hand-written reverse pass over the recorded [`JetTape`].

mod activation;
mod checkpoint;
mod jet;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use activation::Activation;
pub use checkpoint::{load_mlp, read_mlp, save_mlp, write_mlp};
pub use jet::{Component, InputTangents, JetBatch, JetRequest, N_COMPONENTS};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("derivative order {0} is not supported")]
    UnsupportedOrder(usize),
    #[error("activation {activation} has no closed-form derivative of order {order}")]
    Capability { activation: &'static str, order: usize },
    #[error("non-finite value at batch row {row}, input {point:?}")]
    NonFinite { row: usize, point: Vec<f64> },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Weights, biases and activation of one dense network.
///
/// Layer `k` maps width `widths[k]` to `widths[k + 1]` with a weight matrix of shape
/// `(widths[k + 1], widths[k])`. Hidden layers apply the activation, the last layer is affine.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    widths: Vec<usize>,
    activation: Activation,
    seed: u64,
    weights: Vec<Array2<f64>>,
    biases: Vec<Array1<f64>>,
}

fn check_widths(widths: &[usize]) -> Result<(), NnError> {
    if widths.len() < 2 {
        return Err(NnError::InvalidArchitecture(format!(
            "need at least input and output widths, got {widths:?}"
        )));
    }
    if widths.contains(&0) {
        return Err(NnError::InvalidArchitecture(format!(
            "widths must be positive, got {widths:?}"
        )));
    }
    Ok(())
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases. Deterministic in `seed`.
    pub fn init(widths: &[usize], activation: Activation, seed: u64) -> Result<Self, NnError> {
        check_widths(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::with_capacity(widths.len() - 1);
        let mut biases = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.random_range(-limit..limit));
            weights.push(w);
            biases.push(Array1::zeros(fan_out));
        }
        Ok(MlpParams {
            widths: widths.to_vec(),
            activation,
            seed,
            weights,
            biases,
        })
    }

    /// All-zero parameters.
    pub fn zeros(widths: &[usize], activation: Activation) -> Result<Self, NnError> {
        check_widths(widths)?;
        let weights = widths
            .windows(2)
            .map(|p| Array2::zeros((p[1], p[0])))
            .collect();
        let biases = widths[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(MlpParams {
            widths: widths.to_vec(),
            activation,
            seed: 0,
            weights,
            biases,
        })
    }

    pub fn from_parts(
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        activation: Activation,
    ) -> Result<Self, NnError> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(NnError::InvalidArchitecture(
                "weights and biases must be non-empty and paired".into(),
            ));
        }
        let mut widths = vec![weights[0].ncols()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.ncols() != *widths.last().unwrap() || b.len() != w.nrows() {
                return Err(NnError::InvalidArchitecture("inconsistent layer shapes".into()));
            }
            widths.push(w.nrows());
        }
        check_widths(&widths)?;
        Ok(MlpParams {
            widths,
            activation,
            seed: 0,
            weights,
            biases,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }

    /// Parameters flattened layer by layer: row-major weights, then biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.n_params() {
            return Err(NnError::Shape {
                expected: self.n_params(),
                got: flat.len(),
            });
        }
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            for v in w.iter_mut() {
                *v = flat[at];
                at += 1;
            }
            for v in b.iter_mut() {
                *v = flat[at];
                at += 1;
            }
        }
        Ok(())
    }

    pub(crate) fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn check_input(&self, got: usize) -> Result<(), NnError> {
        if got != self.input_dim() {
            return Err(NnError::Shape {
                expected: self.input_dim(),
                got,
            });
        }
        Ok(())
    }

    /// Forward pass for a single input vector. Shares the arithmetic path of
    /// [`MlpParams::jet`], so jet values agree with it bitwise.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        self.check_input(input.len())?;
        let inputs = Array2::from_shape_vec((1, input.len()), input.to_vec()).unwrap();
        Ok(self.forward_batch(&inputs)?.row(0).to_vec())
    }

    /// Batched forward pass over the rows of `inputs`.
    pub fn forward_batch(&self, inputs: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        let tape = self.tape(JetBatch::values(inputs.clone()))?;
        Ok(tape.output.value().clone())
    }

    fn check_request(&self, request: &JetRequest) -> Result<(), NnError> {
        request.validate()?;
        let order = request.max_order();
        if order > self.activation.max_order() && self.weights.len() > 1 {
            return Err(NnError::Capability {
                activation: self.activation.tag(),
                order,
            });
        }
        Ok(())
    }

    /// Records a forward pass of a batched input jet, keeping everything the reverse pass needs.
    pub fn tape(&self, input: JetBatch) -> Result<JetTape, NnError> {
        self.check_input(input.width())?;
        let has = |c: Component| input.get(c).is_some();
        let request = JetRequest {
            time: has(Component::T),
            x_order: (1..=4).rev().find(|&k| has(Component::x(k).unwrap())).unwrap_or(0),
            y_order: (1..=2).rev().find(|&k| has(Component::y(k).unwrap())).unwrap_or(0),
            mixed_xy: has(Component::Xy),
        };
        self.check_request(&request)?;
        let last = self.weights.len() - 1;
        let mut layers = Vec::with_capacity(self.weights.len());
        let mut a = input;
        for (k, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let z = jet::affine_forward(&a, w, b);
            if k == last {
                layers.push(LayerCache {
                    input: a,
                    pre: None,
                    tables: Vec::new(),
                });
                a = z;
            } else {
                let tables = jet::activation_tables(z.value(), self.activation, request.max_order() + 1);
                let next = jet::activation_forward(&z, &tables);
                layers.push(LayerCache {
                    input: a,
                    pre: Some(z),
                    tables,
                });
                a = next;
            }
        }
        Ok(JetTape { layers, output: a })
    }

    /// Exact input derivatives at one point `(t, x)` or `(t, x, y)`.
    pub fn jet(&self, point: &[f64], request: &JetRequest) -> Result<DerivativeJet, NnError> {
        self.jet_with_tangents(point, request, &InputTangents::identity(point.len()))
    }

    pub fn jet_with_tangents(
        &self,
        point: &[f64],
        request: &JetRequest,
        tangents: &InputTangents,
    ) -> Result<DerivativeJet, NnError> {
        self.check_input(point.len())?;
        self.check_request(request)?;
        let inputs = Array2::from_shape_vec((1, point.len()), point.to_vec()).unwrap();
        let tape = self.tape(JetBatch::seed(inputs, request, tangents))?;
        let out = tape.output();
        let row = |c: Component| out.get(c).map(|a| a.row(0).to_vec());
        let zero = vec![0.0; self.output_dim()];
        let jet = DerivativeJet {
            point: point.to_vec(),
            value: row(Component::Value).unwrap(),
            d_t: row(Component::T).unwrap_or_else(|| zero.clone()),
            spatial: (1..=request.x_order)
                .map(|k| row(Component::x(k).unwrap()).unwrap())
                .collect(),
            spatial_y: (1..=request.y_order)
                .map(|k| row(Component::y(k).unwrap()).unwrap())
                .collect(),
            mixed_xy: if request.mixed_xy { row(Component::Xy) } else { None },
        };
        if jet.all().any(|v| !v.is_finite()) {
            return Err(NnError::NonFinite {
                row: 0,
                point: point.to_vec(),
            });
        }
        Ok(jet)
    }
}

struct LayerCache {
    input: JetBatch,
    pre: Option<JetBatch>,
    tables: Vec<Array2<f64>>,
}

/// Forward record of one batched jet pass.
pub struct JetTape {
    layers: Vec<LayerCache>,
    output: JetBatch,
}

impl JetTape {
    pub fn output(&self) -> &JetBatch {
        &self.output
    }

    /// First batch row whose output jet has a non-finite entry.
    pub fn first_non_finite(&self) -> Option<usize> {
        let rows = self.output.rows();
        (0..rows).find(|&r| {
            self.output
                .present()
                .any(|(_, a)| a.row(r).iter().any(|v| !v.is_finite()))
        })
    }

    /// Reverse pass. `adjoint` holds `∂loss/∂output` for any subset of the output
    /// components; absent components are treated as zero. Returns the parameter
    /// gradient (flattened like [`MlpParams::flatten`]) and, when requested, the
    /// adjoint of the input jet.
    pub fn backward(
        &self,
        params: &MlpParams,
        adjoint: &JetBatch,
        need_input: bool,
    ) -> (Vec<f64>, Option<JetBatch>) {
        let n_layers = self.layers.len();
        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(n_layers);
        let mut d = adjoint.clone();
        for (k, cache) in self.layers.iter().enumerate().rev() {
            if let Some(pre) = &cache.pre {
                d = jet::activation_backward(&d, pre, &cache.tables);
            }
            let want_input = k > 0 || need_input;
            let (dw, db, da) = jet::affine_backward(&d, &cache.input, &params.weights[k], want_input);
            grads.push((dw, db));
            if let Some(da) = da {
                d = da;
            }
        }
        grads.reverse();
        let mut flat = Vec::with_capacity(params.n_params());
        for (dw, db) in &grads {
            flat.extend(dw.iter());
            flat.extend(db.iter());
        }
        (flat, need_input.then_some(d))
    }
}

/// Value and input derivatives of a network at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeJet {
    pub point: Vec<f64>,
    /// One entry per output channel.
    pub value: Vec<f64>,
    pub d_t: Vec<f64>,
    /// `spatial[k - 1]` holds `∂ᵏ/∂xᵏ`.
    pub spatial: Vec<Vec<f64>>,
    /// `spatial_y[k - 1]` holds `∂ᵏ/∂yᵏ`.
    pub spatial_y: Vec<Vec<f64>>,
    pub mixed_xy: Option<Vec<f64>>,
}

impl DerivativeJet {
    fn all(&self) -> impl Iterator<Item = f64> + '_ {
        self.value
            .iter()
            .chain(&self.d_t)
            .chain(self.spatial.iter().flatten())
            .chain(self.spatial_y.iter().flatten())
            .chain(self.mixed_xy.iter().flatten())
            .copied()
    }

    /// `∂ᵏu/∂xᵏ` of output channel `ch` (k = 0 is the value).
    pub fn dx(&self, order: usize, ch: usize) -> Option<f64> {
        if order == 0 {
            self.value.get(ch).copied()
        } else {
            self.spatial.get(order - 1).and_then(|v| v.get(ch).copied())
        }
    }
}

/// `∂loss/∂θ` in [`MlpParams::flatten`] order, with the loss it was taken at.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientVector {
    pub loss: f64,
    pub values: Vec<f64>,
}

/// Gradient of a scalar loss built from one network's output jet over a batch.
///
/// `loss` receives the output jet and returns the loss value together with its
/// adjoint `∂loss/∂jet` (same shape as the output; absent components mean zero).
pub fn param_gradient<F>(
    params: &MlpParams,
    input: JetBatch,
    loss: F,
) -> Result<GradientVector, NnError>
where
    F: FnOnce(&JetBatch) -> (f64, JetBatch),
{
    let points = input.value().clone();
    let tape = params.tape(input)?;
    if let Some(row) = tape.first_non_finite() {
        return Err(NnError::NonFinite {
            row,
            point: points.row(row).to_vec(),
        });
    }
    let (value, adjoint) = loss(tape.output());
    if !value.is_finite() {
        return Err(NnError::NonFinite {
            row: 0,
            point: points.row(0).to_vec(),
        });
    }
    let (values, _) = tape.backward(params, &adjoint, false);
    Ok(GradientVector { loss: value, values })
}

#[cfg(test)]
mod tests;
