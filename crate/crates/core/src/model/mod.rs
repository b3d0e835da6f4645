//! The LSDAN network: per-hop masked attention, attention across hops, and
//! residual stacking of layers down to a scalar logit per node.

mod checkpoint;
mod layer;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::HopMaskSet;
use crate::tensor::{Tape, Tensor, TensorError, Var};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use layer::{
    long_distance_attention, lsdan_layer, short_distance_attention, LayerOutput, LayerVars,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid network configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Elu,
    LeakyRelu,
    Identity,
}

impl Activation {
    pub fn apply(self, tape: &Tape, x: Var, leaky_slope: f64) -> Var {
        match self {
            Activation::Elu => tape.elu(x, 1.0),
            Activation::LeakyRelu => tape.leaky_relu(x, leaky_slope),
            Activation::Identity => x,
        }
    }
}

/// Which tensor feeds the key transform of the attention across hops.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KeySource {
    /// The layer's own input (raw features at the first layer).
    #[default]
    LayerInput,
    /// The raw node features at every layer.
    RawFeatures,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub kappa: usize,
    pub layers: usize,
    pub hidden_dim: usize,
    pub input_dim: usize,
    pub leaky_slope: f64,
    pub hidden_activation: Activation,
    /// Activation of the final (logit) layer.
    pub output_activation: Activation,
    pub key_source: KeySource,
    pub final_dim: usize,
}

impl NetworkConfig {
    pub fn new(input_dim: usize) -> Self {
        NetworkConfig {
            kappa: 4,
            layers: 2,
            hidden_dim: 64,
            input_dim,
            leaky_slope: 0.2,
            hidden_activation: Activation::Elu,
            output_activation: Activation::Identity,
            key_source: KeySource::LayerInput,
            final_dim: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(ModelError::Config(msg.to_string()));
        if self.kappa == 0 {
            return fail("kappa must be at least 1");
        }
        if self.layers == 0 {
            return fail("at least one layer is required");
        }
        if self.hidden_dim == 0 || self.input_dim == 0 {
            return fail("dimensions must be at least 1");
        }
        if self.final_dim != 1 {
            return fail("the output layer produces one logit per node");
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return fail("leaky slope must lie in (0, 1)");
        }
        Ok(())
    }

    /// `(input, output)` width of every layer: `m→d`, `d→d`…, `d→1`; a single
    /// layer maps `m→1` directly.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        (0..self.layers)
            .map(|l| {
                let d_in = if l == 0 { self.input_dim } else { self.hidden_dim };
                let d_out = if l + 1 == self.layers { self.final_dim } else { self.hidden_dim };
                (d_in, d_out)
            })
            .collect()
    }

    fn key_dim(&self, d_in: usize) -> usize {
        match self.key_source {
            KeySource::LayerInput => d_in,
            KeySource::RawFeatures => self.input_dim,
        }
    }
}

/// Parameters of one layer. Transforms are stored input-major
/// (`d_in × d_out`) so node embeddings are `U · W`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    /// Shared short-distance transform, used by every hop of the layer.
    pub transform: Tensor,
    /// Attention score vector over `[z_i ⊕ z_j]`, shape `2·d_out × 1`.
    pub score: Tensor,
    /// Key transform for the attention across hops.
    pub key_transform: Tensor,
}

fn glorot(rows: usize, cols: usize, fan: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let limit = (6.0 / fan as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::new(rows, cols, data).expect("sized")
}

impl LayerParams {
    pub fn glorot(d_in: usize, d_out: usize, key_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        LayerParams {
            transform: glorot(d_in, d_out, d_in + d_out, rng),
            score: glorot(2 * d_out, 1, 2 * d_out + 1, rng),
            key_transform: glorot(key_dim, d_out, key_dim + d_out, rng),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize, key_dim: usize) -> Self {
        LayerParams {
            transform: Tensor::zeros(d_in, d_out),
            score: Tensor::zeros(2 * d_out, 1),
            key_transform: Tensor::zeros(key_dim, d_out),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.transform.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.transform.cols()
    }

    pub fn check(&self) -> Result<()> {
        let d_out = self.output_dim();
        if self.key_transform.cols() != d_out {
            return Err(ModelError::Config(format!(
                "key transform {:?} does not match transform {:?}",
                self.key_transform.shape(),
                self.transform.shape()
            )));
        }
        if self.score.shape() != (2 * d_out, 1) {
            return Err(ModelError::Config(format!(
                "score vector {:?} should be {}x1",
                self.score.shape(),
                2 * d_out
            )));
        }
        Ok(())
    }

    pub fn bind(&self, tape: &Tape) -> LayerVars {
        LayerVars {
            transform: tape.param(self.transform.clone()),
            score: tape.param(self.score.clone()),
            key_transform: tape.param(self.key_transform.clone()),
        }
    }
}

/// Everything a forward pass records, beyond the logits.
#[derive(Debug)]
pub struct ForwardPass {
    /// `n × 1` pre-sigmoid scores.
    pub logits: Var,
    pub layers: Vec<LayerOutput>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Lsdan {
    config: NetworkConfig,
    layers: Vec<LayerParams>,
}

impl Lsdan {
    /// Glorot-uniform initialization from `seed`.
    pub fn new(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = config
            .layer_dims()
            .into_iter()
            .map(|(d_in, d_out)| LayerParams::glorot(d_in, d_out, config.key_dim(d_in), &mut rng))
            .collect();
        Ok(Lsdan { config, layers })
    }

    pub fn from_params(config: NetworkConfig, layers: Vec<LayerParams>) -> Result<Self> {
        config.validate()?;
        let dims = config.layer_dims();
        if dims.len() != layers.len() {
            return Err(ModelError::Config(format!(
                "{} layers configured, {} parameter sets given",
                dims.len(),
                layers.len()
            )));
        }
        for (l, ((d_in, d_out), p)) in dims.iter().zip(&layers).enumerate() {
            p.check()?;
            if p.transform.shape() != (*d_in, *d_out)
                || p.key_transform.rows() != config.key_dim(*d_in)
            {
                return Err(ModelError::Config(format!(
                    "layer {l}: expected {d_in}->{d_out}, got transform {:?}, key {:?}",
                    p.transform.shape(),
                    p.key_transform.shape()
                )));
            }
        }
        Ok(Lsdan { config, layers })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn layers(&self) -> &[LayerParams] {
        &self.layers
    }

    /// All parameter tensors in a fixed order (layer by layer: transform,
    /// score, key transform). [`Lsdan::bind`] registers them in this order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|p| [&mut p.transform, &mut p.score, &mut p.key_transform])
            .collect()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|p| p.transform.len() + p.score.len() + p.key_transform.len())
            .sum()
    }

    pub fn bind(&self, tape: &Tape) -> Vec<LayerVars> {
        self.layers.iter().map(|p| p.bind(tape)).collect()
    }

    /// Runs every layer over the full graph.
    ///
    /// `U¹ = X`; the first layer output replaces the input (`U² = O¹`),
    /// middle layers add their output to their input (`Uˡ⁺¹ = Uˡ + Oˡ`) and the
    /// last layer's output is the logit column.
    pub fn forward(
        &self,
        tape: &Tape,
        vars: &[LayerVars],
        features: Var,
        masks: &HopMaskSet,
    ) -> Result<ForwardPass> {
        let (n, m) = tape.shape(features);
        if m != self.config.input_dim {
            return Err(ModelError::Config(format!(
                "features have {m} columns, network expects {}",
                self.config.input_dim
            )));
        }
        if masks.n() != n {
            return Err(ModelError::Config(format!(
                "masks cover {} nodes, features {n}",
                masks.n()
            )));
        }
        if vars.len() != self.layers.len() {
            return Err(ModelError::Config("parameter binding does not match layers".into()));
        }
        let last = self.layers.len() - 1;
        let mut input = features;
        let mut outputs = Vec::with_capacity(self.layers.len());
        for (l, layer_vars) in vars.iter().enumerate() {
            let key_input = match self.config.key_source {
                KeySource::LayerInput => input,
                KeySource::RawFeatures => features,
            };
            let activation = if l == last {
                self.config.output_activation
            } else {
                self.config.hidden_activation
            };
            let out = lsdan_layer(
                tape,
                input,
                key_input,
                masks,
                layer_vars,
                self.config.leaky_slope,
                activation,
            )?;
            input = if l == 0 || l == last {
                out.output
            } else {
                tape.add(input, out.output)?
            };
            outputs.push(out);
        }
        Ok(ForwardPass {
            logits: input,
            layers: outputs,
        })
    }
}
