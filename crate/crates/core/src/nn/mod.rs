//! Feed-forward networks with hand-written reverse-mode gradients.
//!
//! Inputs are `batch × input_dim` matrices. Layer `l` computes `z = a·W + b` with
//! `W` stored row-major as `in × out`, followed by SiLU on hidden layers and the
//! configured output activation on the last one. Parameters live in one flat
//! vector: for each layer its weights, then its biases.

mod adam;
mod checkpoint;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};

use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView2, ArrayViewMut2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract_err, param_err, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HiddenActivation {
    /// `x · sigmoid(x)`.
    Silu,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OutputActivation {
    /// `bound · tanh(z)`, strictly inside `(-bound, bound)`.
    TanhScaled { bound: f64 },
    Linear,
    /// `input + z`; needs `output_dim == input_dim`.
    ResidualLinear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden_layers: Vec<usize>,
    pub hidden_activation: HiddenActivation,
    pub output_dim: usize,
    pub output_activation: OutputActivation,
}

impl MlpSpec {
    /// Five SiLU layers of 35 units and a `2·tanh` head.
    pub fn hedging_policy(input_dim: usize) -> Self {
        Self::hedging_policy_with_bound(input_dim, 2.0)
    }

    pub fn hedging_policy_with_bound(input_dim: usize, bound: f64) -> Self {
        Self {
            input_dim,
            hidden_layers: vec![35; 5],
            hidden_activation: HiddenActivation::Silu,
            output_dim: 1,
            output_activation: OutputActivation::TanhScaled { bound },
        }
    }

    /// One SiLU layer of 10 units with a residual head, scalar in and out.
    pub fn wealth_adversary() -> Self {
        Self {
            input_dim: 1,
            hidden_layers: vec![10],
            hidden_activation: HiddenActivation::Silu,
            output_dim: 1,
            output_activation: OutputActivation::ResidualLinear,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_layers.iter().any(|&w| w == 0) {
            return Err(param_err("every layer width must be at least 1"));
        }
        match self.output_activation {
            OutputActivation::TanhScaled { bound } if !(bound > 0.0) => {
                Err(param_err("tanh bound must be positive"))
            }
            OutputActivation::ResidualLinear if self.input_dim != self.output_dim => {
                Err(param_err("residual head needs output_dim == input_dim"))
            }
            _ => Ok(()),
        }
    }

    /// `(fan_in, fan_out)` of every dense layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_layers);
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn n_params(&self) -> usize {
        self.layer_shapes().iter().map(|&(i, o)| i * o + o).sum()
    }
}

static STAMP: AtomicU64 = AtomicU64::new(1);

fn next_stamp() -> u64 {
    STAMP.fetch_add(1, Ordering::Relaxed)
}

/// Flat parameter vector with its layer table.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T: Scalar> {
    values: Vec<T>,
    shapes: Vec<(usize, usize)>,
    init_seed: u64,
    // changes whenever `values` may have changed; caches remember it
    stamp: u64,
}

impl<T: Scalar> MlpParams<T> {
    /// Fan-in scaled uniform init `U(-1/√fan_in, 1/√fan_in)`; a residual head starts at zero
    /// so the network is the identity map.
    pub fn init(spec: &MlpSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values = Vec::with_capacity(spec.n_params());
        let last = shapes.len() - 1;
        for (l, &(fan_in, fan_out)) in shapes.iter().enumerate() {
            let count = fan_in * fan_out + fan_out;
            if l == last && spec.output_activation == OutputActivation::ResidualLinear {
                values.extend(std::iter::repeat_n(T::zero(), count));
            } else {
                let bound = 1.0 / (fan_in as f64).sqrt();
                values.extend((0..count).map(|_| T::lit(rng.random_range(-bound..bound))));
            }
        }
        Ok(Self { values, shapes, init_seed: seed, stamp: next_stamp() })
    }

    pub fn zeros(spec: &MlpSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self { values: vec![T::zero(); spec.n_params()], shapes: spec.layer_shapes(), init_seed: 0, stamp: next_stamp() })
    }

    pub fn from_values(spec: &MlpSpec, values: Vec<T>, init_seed: u64) -> Result<Self> {
        spec.validate()?;
        if values.len() != spec.n_params() {
            return Err(contract_err(format!("{} parameters supplied, spec needs {}", values.len(), spec.n_params())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(param_err("parameters must be finite"));
        }
        Ok(Self { values, shapes: spec.layer_shapes(), init_seed, stamp: next_stamp() })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        self.stamp = next_stamp();
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn shapes(&self) -> &[(usize, usize)] {
        &self.shapes
    }

    fn layer_offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.shapes
            .iter()
            .map(|&(i, o)| {
                let start = off;
                off += i * o + o;
                start
            })
            .collect()
    }
}

/// Activations recorded by [`Mlp::forward`] for one backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache<T: Scalar> {
    /// Input of every layer (layer 0's is the network input).
    layer_inputs: Vec<Array2<T>>,
    /// Pre-activation of every layer.
    pre: Vec<Array2<T>>,
    /// Sigmoid of each hidden pre-activation.
    gates: Vec<Array2<T>>,
    stamp: u64,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn batch_size(&self) -> usize {
        self.layer_inputs[0].nrows()
    }
}

/// Gradients of `Σ upstream ⊙ outputs` with respect to parameters and inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBuffer<T: Scalar> {
    pub params: Vec<T>,
    pub inputs: Array2<T>,
}

impl<T: Scalar> GradBuffer<T> {
    pub fn zeros(n_params: usize, batch: usize, input_dim: usize) -> Self {
        Self { params: vec![T::zero(); n_params], inputs: Array2::zeros((batch, input_dim)) }
    }

    pub fn reset(&mut self) {
        self.params.iter_mut().for_each(|g| *g = T::zero());
        self.inputs.fill(T::zero());
    }

    pub fn accumulate(&mut self, other: &GradBuffer<T>) -> Result<()> {
        if self.params.len() != other.params.len() || self.inputs.dim() != other.inputs.dim() {
            return Err(contract_err("gradient buffers have different shapes"));
        }
        self.params.iter_mut().zip(&other.params).for_each(|(a, &b)| *a += b);
        self.inputs += &other.inputs;
        Ok(())
    }
}

#[inline]
fn sigmoid<T: Scalar>(z: T) -> T {
    T::one() / (T::one() + (-z).exp())
}

/// A network: architecture plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<T: Scalar> {
    spec: MlpSpec,
    params: MlpParams<T>,
}

impl<T: Scalar> Mlp<T> {
    pub fn new(spec: MlpSpec, params: MlpParams<T>) -> Result<Self> {
        spec.validate()?;
        if params.shapes != spec.layer_shapes() {
            return Err(contract_err("parameter layout does not match the network spec"));
        }
        Ok(Self { spec, params })
    }

    pub fn init(spec: MlpSpec, seed: u64) -> Result<Self> {
        let params = MlpParams::init(&spec, seed)?;
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &MlpParams<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MlpParams<T> {
        &mut self.params
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    fn layer(&self, offset: usize, (fan_in, fan_out): (usize, usize)) -> (ArrayView2<'_, T>, &[T]) {
        let w = &self.params.values[offset..offset + fan_in * fan_out];
        let b = &self.params.values[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
        (ArrayView2::from_shape((fan_in, fan_out), w).expect("layer slice matches its shape"), b)
    }

    fn check_inputs(&self, inputs: &ArrayView2<T>) -> Result<()> {
        if inputs.ncols() != self.spec.input_dim {
            return Err(contract_err(format!(
                "network expects {} input features, got {}",
                self.spec.input_dim,
                inputs.ncols()
            )));
        }
        Ok(())
    }

    fn run(&self, inputs: ArrayView2<T>, mut cache: Option<&mut ForwardCache<T>>) -> Result<Array2<T>> {
        self.check_inputs(&inputs)?;
        let shapes = &self.params.shapes;
        let offsets = self.params.layer_offsets();
        let last = shapes.len() - 1;
        let mut a = inputs.to_owned();
        for (l, (&shape, &off)) in shapes.iter().zip(&offsets).enumerate() {
            let (w, b) = self.layer(off, shape);
            let mut z = Array2::<T>::zeros((a.nrows(), shape.1));
            for mut row in z.rows_mut() {
                row.as_slice_mut().expect("row-major").copy_from_slice(b);
            }
            general_mat_mul(T::one(), &a, &w, T::one(), &mut z);
            let next = if l < last {
                if let Some(c) = cache.as_deref_mut() {
                    let gate = z.mapv(sigmoid);
                    let out = Zip::from(&z).and(&gate).map_collect(|&z, &g| z * g);
                    c.gates.push(gate);
                    out
                } else {
                    z.mapv(|v| v * sigmoid(v))
                }
            } else {
                match self.spec.output_activation {
                    OutputActivation::TanhScaled { bound } => {
                        let bound = T::lit(bound);
                        z.mapv(|v| bound * v.tanh())
                    }
                    OutputActivation::Linear => z.clone(),
                    OutputActivation::ResidualLinear => &z + &inputs,
                }
            };
            if let Some(c) = cache.as_deref_mut() {
                c.layer_inputs.push(std::mem::replace(&mut a, next));
                c.pre.push(z);
            } else {
                a = next;
            }
        }
        Ok(a)
    }

    /// Outputs without recording activations.
    pub fn predict(&self, inputs: ArrayView2<T>) -> Result<Array2<T>> {
        self.run(inputs, None)
    }

    pub fn forward(&self, inputs: ArrayView2<T>) -> Result<(Array2<T>, ForwardCache<T>)> {
        let n_layers = self.params.shapes.len();
        let mut cache = ForwardCache {
            layer_inputs: Vec::with_capacity(n_layers),
            pre: Vec::with_capacity(n_layers),
            gates: Vec::with_capacity(n_layers),
            stamp: self.params.stamp,
        };
        let out = self.run(inputs, Some(&mut cache))?;
        Ok((out, cache))
    }

    /// Adds the parameter gradient of `Σ upstream ⊙ outputs` into `param_grad` and
    /// returns the input gradient.
    pub fn backward_accumulate(
        &self,
        cache: &ForwardCache<T>,
        upstream: ArrayView2<T>,
        param_grad: &mut [T],
    ) -> Result<Array2<T>> {
        if cache.stamp != self.params.stamp || cache.pre.len() != self.params.shapes.len() {
            return Err(contract_err("forward cache is stale: parameters changed since the forward pass"));
        }
        if param_grad.len() != self.params.len() {
            return Err(contract_err("parameter gradient buffer has the wrong length"));
        }
        let last = cache.pre.len() - 1;
        if upstream.dim() != cache.pre[last].dim() {
            return Err(contract_err(format!(
                "upstream has shape {:?}, outputs have {:?}",
                upstream.dim(),
                cache.pre[last].dim()
            )));
        }
        let mut dz = match self.spec.output_activation {
            OutputActivation::TanhScaled { bound } => {
                let bound = T::lit(bound);
                let mut d = upstream.to_owned();
                Zip::from(&mut d).and(&cache.pre[last]).for_each(|d, &z| {
                    let t = z.tanh();
                    *d *= bound * (T::one() - t * t);
                });
                d
            }
            OutputActivation::Linear | OutputActivation::ResidualLinear => upstream.to_owned(),
        };
        let offsets = self.params.layer_offsets();
        let shapes = self.params.shapes.clone();
        for l in (0..=last).rev() {
            let (fan_in, fan_out) = shapes[l];
            let off = offsets[l];
            let a = &cache.layer_inputs[l];
            {
                let (gw, gb) = param_grad[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                let mut gw = ArrayViewMut2::from_shape((fan_in, fan_out), gw).expect("layer slice matches its shape");
                general_mat_mul(T::one(), &a.t(), &dz, T::one(), &mut gw);
                for (g, col_sum) in gb.iter_mut().zip(dz.sum_axis(Axis(0))) {
                    *g += col_sum;
                }
            }
            let (w, _) = self.layer(off, shapes[l]);
            let da = dz.dot(&w.t());
            if l == 0 {
                let mut dx = da;
                if self.spec.output_activation == OutputActivation::ResidualLinear {
                    dx += &upstream;
                }
                return Ok(dx);
            }
            let mut next = da;
            Zip::from(&mut next).and(&cache.pre[l - 1]).and(&cache.gates[l - 1]).for_each(|d, &z, &s| {
                *d *= s * (T::one() + z * (T::one() - s));
            });
            dz = next;
        }
        unreachable!("network has at least one layer")
    }

    pub fn backward(&self, cache: &ForwardCache<T>, upstream: ArrayView2<T>) -> Result<GradBuffer<T>> {
        let mut params = vec![T::zero(); self.n_params()];
        let inputs = self.backward_accumulate(cache, upstream, &mut params)?;
        Ok(GradBuffer { params, inputs })
    }
}
