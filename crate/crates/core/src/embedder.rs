//! Per-modality embedders: small affine/rectifier networks mapping raw
//! feature vectors into the shared metric space.
//!
//! An embedder is a stack of affine layers with a rectifier between
//! consecutive layers (never after the last one), followed by the scaled L2
//! normalization from [`crate::metric`]. Zero hidden layers — a single
//! affine map — is the common desk-scale configuration; up to three hidden
//! layers are supported for capacity experiments.
//!
//! Initialization draws weights and biases uniformly from
//! `[-1/sqrt(fan_in), +1/sqrt(fan_in)]` in a documented order (per layer:
//! weights row-major, then biases), so a seed pins the parameters exactly.
//!
//! A [`ModalityPair`] bundles the two embedders with the space geometry and
//! round-trips losslessly through JSON checkpoints: floats are written in
//! shortest round-trip form, so save/load reproduces every parameter bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metric::{l2_normalize_scale, Embedding, MetricSpaceConfig};

/// Nonlinearity applied between consecutive layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    /// max(x, 0); the derivative at exactly 0 is taken as 0.
    #[default]
    Rectifier,
    /// Pass-through; stacking identity layers stays an affine map.
    Identity,
}

/// One affine layer: `y = w * x + b`, with `w` stored row-major
/// (`w[out][in]`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Layer {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl Layer {
    pub fn out_dim(&self) -> usize {
        self.w.len()
    }

    pub fn in_dim(&self) -> usize {
        self.w.first().map_or(0, Vec::len)
    }
}

/// Parameters of one modality's embedder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmbedderParams {
    pub layers: Vec<Layer>,
    /// Frozen embedders receive no gradients and are never updated.
    pub frozen: bool,
    #[serde(default)]
    pub activation: Activation,
}

impl EmbedderParams {
    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, Layer::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Layer::out_dim)
    }

    /// Checks that the layer stack is non-empty and internally consistent.
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::InvalidConfig("embedder has no layers".into()));
        }
        let mut prev_out = None;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.w.is_empty() || layer.in_dim() == 0 {
                return Err(Error::InvalidConfig(format!("layer {i} is empty")));
            }
            if layer.w.iter().any(|row| row.len() != layer.in_dim()) {
                return Err(Error::InvalidConfig(format!(
                    "layer {i} has ragged weight rows"
                )));
            }
            if layer.b.len() != layer.out_dim() {
                return Err(Error::InvalidConfig(format!(
                    "layer {i}: {} bias terms for {} outputs",
                    layer.b.len(),
                    layer.out_dim()
                )));
            }
            if let Some(prev) = prev_out {
                if layer.in_dim() != prev {
                    return Err(Error::DimensionMismatch {
                        context: "embedder layer chain",
                        left: prev,
                        right: layer.in_dim(),
                    });
                }
            }
            prev_out = Some(layer.out_dim());
        }
        Ok(())
    }
}

/// Initializes an embedder with the fan-in uniform scheme.
///
/// `hidden_dims` may hold zero to three sizes; zero means a single affine
/// layer from `in_dim` straight to `out_dim`. Draw order per layer is
/// weights row-major, then biases, from a ChaCha stream seeded with `seed`.
pub fn init_embedder(
    in_dim: usize,
    hidden_dims: &[usize],
    out_dim: usize,
    activation: Activation,
    frozen: bool,
    seed: u64,
) -> Result<EmbedderParams> {
    if in_dim == 0 || out_dim == 0 || hidden_dims.contains(&0) {
        return Err(Error::InvalidConfig(
            "embedder dimensions must all be >= 1".into(),
        ));
    }
    if hidden_dims.len() > 3 {
        return Err(Error::InvalidConfig(format!(
            "at most 3 hidden layers supported, got {}",
            hidden_dims.len()
        )));
    }
    let mut dims = Vec::with_capacity(hidden_dims.len() + 2);
    dims.push(in_dim);
    dims.extend_from_slice(hidden_dims);
    dims.push(out_dim);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for pair in dims.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = (0..fan_out)
            .map(|_| (0..fan_in).map(|_| rng.random_range(-bound..=bound)).collect())
            .collect();
        let b = (0..fan_out).map(|_| rng.random_range(-bound..=bound)).collect();
        layers.push(Layer { w, b });
    }
    Ok(EmbedderParams {
        layers,
        frozen,
        activation,
    })
}

/// Maps a raw feature vector into the shared space:
/// forward through the layers, then scaled L2 normalization.
pub fn embed(params: &EmbedderParams, space: &MetricSpaceConfig, x: &[f64]) -> Result<Embedding> {
    let cache = forward_cached(params, x)?;
    if cache.output().len() != space.dim {
        return Err(Error::DimensionMismatch {
            context: "embedder output vs space dim",
            left: cache.output().len(),
            right: space.dim,
        });
    }
    l2_normalize_scale(cache.output(), space.scale)
}

/// Activations recorded during a forward pass, for use by backpropagation.
///
/// `post[0]` is the input; `post[i + 1]` is the output of layer `i` after
/// its activation (no activation after the last layer). With the rectifier,
/// `post > 0` exactly characterizes the units whose derivative is 1, so the
/// pre-activation values do not need to be kept.
#[derive(Debug, Clone)]
pub(crate) struct ForwardCache {
    pub(crate) post: Vec<Vec<f64>>,
}

impl ForwardCache {
    /// Raw (pre-normalization) network output.
    pub(crate) fn output(&self) -> &[f64] {
        self.post.last().expect("cache always has the input layer")
    }
}

pub(crate) fn forward_cached(params: &EmbedderParams, x: &[f64]) -> Result<ForwardCache> {
    if params.layers.is_empty() {
        return Err(Error::InvalidConfig("embedder has no layers".into()));
    }
    if x.len() != params.in_dim() {
        return Err(Error::DimensionMismatch {
            context: "embedder input",
            left: x.len(),
            right: params.in_dim(),
        });
    }
    let mut post = Vec::with_capacity(params.layers.len() + 1);
    post.push(x.to_vec());
    for (i, layer) in params.layers.iter().enumerate() {
        let input = &post[i];
        let last = i + 1 == params.layers.len();
        let mut out = Vec::with_capacity(layer.out_dim());
        for (row, bias) in layer.w.iter().zip(&layer.b) {
            let mut acc = *bias;
            for (w, v) in row.iter().zip(input) {
                acc += w * v;
            }
            if !last && params.activation == Activation::Rectifier {
                acc = acc.max(0.0);
            }
            out.push(acc);
        }
        post.push(out);
    }
    Ok(ForwardCache { post })
}

/// The two embedders plus the space they share. This is the unit that
/// training consumes and checkpoints persist.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityPair {
    pub space: MetricSpaceConfig,
    pub voice: EmbedderParams,
    pub face: EmbedderParams,
}

impl ModalityPair {
    pub fn validate(&self) -> Result<()> {
        self.space.validate()?;
        self.voice.validate()?;
        self.face.validate()?;
        for (name, p) in [("voice", &self.voice), ("face", &self.face)] {
            if p.out_dim() != self.space.dim {
                return Err(Error::DimensionMismatch {
                    context: match name {
                        "voice" => "voice embedder output vs space dim",
                        _ => "face embedder output vs space dim",
                    },
                    left: p.out_dim(),
                    right: self.space.dim,
                });
            }
        }
        Ok(())
    }

    /// Serializes the pair as a versioned JSON checkpoint. Floats use the
    /// shortest representation that parses back to the same bits, so the
    /// round trip is lossless.
    pub fn to_checkpoint_json(&self) -> String {
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            space: self.space,
            voice: self.voice.clone(),
            face: self.face.clone(),
        };
        serde_json::to_string_pretty(&file).expect("checkpoint serialization cannot fail")
    }

    /// Parses and validates a checkpoint produced by
    /// [`Self::to_checkpoint_json`].
    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)
            .map_err(|e| Error::MalformedData(format!("checkpoint: {e}")))?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::MalformedData(format!(
                "unsupported checkpoint version {}",
                file.version
            )));
        }
        let pair = ModalityPair {
            space: file.space,
            voice: file.voice,
            face: file.face,
        };
        pair.validate()?;
        Ok(pair)
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    version: u32,
    space: MetricSpaceConfig,
    voice: EmbedderParams,
    face: EmbedderParams,
}
