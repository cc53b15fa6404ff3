//! Voice-anchored triplet loss, exact batch gradients, and the training
//! loop.
//!
//! The loss over a batch is
//!
//! ```text
//! L = sum over triplets of max(d(ev(v_i), ef(f_i)) - d(ev(v_i), ef(f_j)) + margin, 0)
//! ```
//!
//! with `v_i` an anchor voice, `f_i` a face of the same identity, `f_j` a
//! face of another identity in the batch, and `d` the Euclidean distance in
//! the shared space. The hinge's subgradient at its breakpoint is taken as
//! 0, i.e. a triplet contributes only when its term is strictly positive.
//!
//! Because a batch of `b*(b-1)*q*r^2` triplets references only `b*(q+r)`
//! distinct samples, the implementation embeds each sample once, scans the
//! triplets as index arithmetic over a precomputed distance matrix, and
//! accumulates integer activation counts per (voice, face) pair. Gradients
//! then flow through each embedding exactly once. All floating-point
//! reductions happen in a fixed order (canonical triplet order for the
//! loss, canonical sample order for parameter gradients), so the parallel
//! and sequential paths agree bit for bit.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::embedder::{forward_cached, EmbedderParams, ForwardCache, ModalityPair};
use crate::error::{Error, Result};
use crate::exec;
use crate::metric::{l2_norm, raw_distance, NORM_EPSILON};
use crate::sampling::{Sampler, SamplerConfig, TripletBatch};

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Optimizer {
    Sgd,
    Adam {
        #[serde(default = "default_beta1")]
        beta1: f64,
        #[serde(default = "default_beta2")]
        beta2: f64,
        #[serde(default = "default_adam_epsilon")]
        epsilon: f64,
    },
}

fn default_beta1() -> f64 {
    0.9
}

fn default_beta2() -> f64 {
    0.999
}

fn default_adam_epsilon() -> f64 {
    1e-8
}

impl Default for Optimizer {
    fn default() -> Self {
        Optimizer::Adam {
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_adam_epsilon(),
        }
    }
}

/// One stage of the step-wise learning-rate schedule: `rate` applies while
/// `step < until_step`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrStage {
    pub until_step: u64,
    pub rate: f64,
}

/// Step-wise learning-rate schedule: a sorted list of stages, then
/// `final_rate` for the remainder of training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LrSchedule {
    pub stages: Vec<LrStage>,
    pub final_rate: f64,
}

impl LrSchedule {
    /// The reference shape: 1e-3 for the first 2/7 of training, then 1e-4,
    /// then 1e-5, then 1e-6 — i.e. drops at 20k/40k/60k steps of a 70k-step
    /// run, scaled proportionally for shorter runs.
    pub fn step_wise(total_steps: u64) -> Self {
        Self {
            stages: vec![
                LrStage {
                    until_step: total_steps * 2 / 7,
                    rate: 1e-3,
                },
                LrStage {
                    until_step: total_steps * 4 / 7,
                    rate: 1e-4,
                },
                LrStage {
                    until_step: total_steps * 6 / 7,
                    rate: 1e-5,
                },
            ],
            final_rate: 1e-6,
        }
    }

    /// Constant learning rate, occasionally handy in tests.
    pub fn constant(rate: f64) -> Self {
        Self {
            stages: Vec::new(),
            final_rate: rate,
        }
    }

    pub fn rate_at(&self, step: u64) -> f64 {
        for stage in &self.stages {
            if step < stage.until_step {
                return stage.rate;
            }
        }
        self.final_rate
    }

    pub fn validate(&self) -> Result<()> {
        let mut prev = 0;
        for (i, stage) in self.stages.iter().enumerate() {
            if i > 0 && stage.until_step <= prev {
                return Err(Error::InvalidConfig(
                    "learning-rate stages must have strictly increasing boundaries".into(),
                ));
            }
            if !(stage.rate.is_finite() && stage.rate > 0.0) {
                return Err(Error::InvalidConfig(
                    "learning rates must be finite and positive".into(),
                ));
            }
            prev = stage.until_step;
        }
        if !(self.final_rate.is_finite() && self.final_rate > 0.0) {
            return Err(Error::InvalidConfig(
                "final learning rate must be finite and positive".into(),
            ));
        }
        Ok(())
    }
}

/// How per-triplet terms aggregate into the batch loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Sum,
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub margin: f64,
    pub optimizer: Optimizer,
    pub schedule: LrSchedule,
    pub total_steps: u64,
    pub reduction: Reduction,
    pub sampler: SamplerConfig,
    /// Per-layer learning-rate multipliers for the voice embedder; empty
    /// means 1.0 everywhere. A multiplier of 0 pins a layer without
    /// freezing the whole embedder.
    pub voice_lr_multipliers: Vec<f64>,
    /// Per-layer learning-rate multipliers for the face embedder.
    pub face_lr_multipliers: Vec<f64>,
}

impl TrainingConfig {
    /// Desk-scale defaults for a run of `total_steps` optimization steps.
    pub fn for_steps(total_steps: u64) -> Self {
        Self {
            margin: 1.0,
            optimizer: Optimizer::default(),
            schedule: LrSchedule::step_wise(total_steps),
            total_steps,
            reduction: Reduction::default(),
            sampler: SamplerConfig::default(),
            voice_lr_multipliers: Vec::new(),
            face_lr_multipliers: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.margin.is_finite() && self.margin >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "margin must be finite and >= 0, got {}",
                self.margin
            )));
        }
        self.schedule.validate()?;
        self.sampler.validate()?;
        for mults in [&self.voice_lr_multipliers, &self.face_lr_multipliers] {
            if mults.iter().any(|m| !(m.is_finite() && *m >= 0.0)) {
                return Err(Error::InvalidConfig(
                    "learning-rate multipliers must be finite and >= 0".into(),
                ));
            }
        }
        Ok(())
    }
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self::for_steps(2_000)
    }
}

/// Gradients for one layer, same shapes as [`crate::embedder::Layer`].
#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradients {
    pub w: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

/// Gradients for one embedder, aligned with its layer stack.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderGradients {
    pub layers: Vec<LayerGradients>,
}

impl EmbedderGradients {
    pub fn zeros_like(params: &EmbedderParams) -> Self {
        Self {
            layers: params
                .layers
                .iter()
                .map(|l| LayerGradients {
                    w: vec![vec![0.0; l.in_dim()]; l.out_dim()],
                    b: vec![0.0; l.out_dim()],
                })
                .collect(),
        }
    }

    fn add(mut self, other: Self) -> Self {
        for (a, b) in self.layers.iter_mut().zip(other.layers) {
            for (ra, rb) in a.w.iter_mut().zip(b.w) {
                for (x, y) in ra.iter_mut().zip(rb) {
                    *x += y;
                }
            }
            for (x, y) in a.b.iter_mut().zip(b.b) {
                *x += y;
            }
        }
        self
    }

}

/// Batch loss together with the gradients of every trainable embedder.
/// Frozen embedders get `None`: their gradients are never even computed.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub loss: f64,
    pub num_triplets: usize,
    pub voice: Option<EmbedderGradients>,
    pub face: Option<EmbedderGradients>,
}

/// One row of the loss history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub loss: f64,
    pub learning_rate: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Mode {
    Default,
    Sequential,
}

fn map<U: Send>(mode: Mode, n: usize, f: impl Fn(usize) -> U + Sync + Send) -> Vec<U> {
    match mode {
        Mode::Default => exec::map_indexed(n, f),
        Mode::Sequential => exec::map_indexed_seq(n, f),
    }
}

/// Batch triplet loss under the given margin and reduction.
pub fn triplet_loss(
    batch: &TripletBatch,
    pair: &ModalityPair,
    margin: f64,
    reduction: Reduction,
) -> Result<f64> {
    Ok(evaluate_batch(batch, pair, margin, reduction, false, Mode::Default)?.loss)
}

/// Sequential reference implementation of [`triplet_loss`]; bit-identical
/// output, used by the comparison benches.
pub fn triplet_loss_seq(
    batch: &TripletBatch,
    pair: &ModalityPair,
    margin: f64,
    reduction: Reduction,
) -> Result<f64> {
    Ok(evaluate_batch(batch, pair, margin, reduction, false, Mode::Sequential)?.loss)
}

/// Batch loss plus exact gradients for every non-frozen embedder.
pub fn loss_gradients(
    batch: &TripletBatch,
    pair: &ModalityPair,
    margin: f64,
    reduction: Reduction,
) -> Result<LossGradients> {
    evaluate_batch(batch, pair, margin, reduction, true, Mode::Default)
}

/// Sequential reference implementation of [`loss_gradients`]; bit-identical
/// output, used by the comparison benches.
pub fn loss_gradients_seq(
    batch: &TripletBatch,
    pair: &ModalityPair,
    margin: f64,
    reduction: Reduction,
) -> Result<LossGradients> {
    evaluate_batch(batch, pair, margin, reduction, true, Mode::Sequential)
}

fn evaluate_batch(
    batch: &TripletBatch,
    pair: &ModalityPair,
    margin: f64,
    reduction: Reduction,
    want_grads: bool,
    mode: Mode,
) -> Result<LossGradients> {
    if !(margin.is_finite() && margin >= 0.0) {
        return Err(Error::InvalidConfig(format!(
            "margin must be finite and >= 0, got {margin}"
        )));
    }
    pair.validate()?;

    // Flatten the batch samples in canonical order: identity by identity,
    // voices then faces.
    let mut voice_refs: Vec<(usize, &[f64])> = Vec::new();
    let mut face_refs: Vec<(usize, &[f64])> = Vec::new();
    for (idx, identity) in batch.identities.iter().enumerate() {
        for v in &identity.voices {
            voice_refs.push((idx, v));
        }
        for f in &identity.faces {
            face_refs.push((idx, f));
        }
    }
    let num_voices = voice_refs.len();
    let num_faces = face_refs.len();

    let grads_voice = want_grads && !pair.voice.frozen;
    let grads_face = want_grads && !pair.face.frozen;

    // Forward passes, one per distinct sample. The cache is kept only when
    // that modality will be backpropagated.
    let voice_fwd: Vec<Result<(Vec<f64>, Option<ForwardCache>)>> = map(mode, num_voices, |i| {
        embed_one(&pair.voice, pair.space.scale, pair.space.dim, voice_refs[i].1, grads_voice)
    });
    let face_fwd: Vec<Result<(Vec<f64>, Option<ForwardCache>)>> = map(mode, num_faces, |i| {
        embed_one(&pair.face, pair.space.scale, pair.space.dim, face_refs[i].1, grads_face)
    });
    let mut voice_embs = Vec::with_capacity(num_voices);
    let mut voice_caches = Vec::with_capacity(if grads_voice { num_voices } else { 0 });
    for r in voice_fwd {
        let (e, c) = r?;
        voice_embs.push(e);
        if let Some(c) = c {
            voice_caches.push(c);
        }
    }
    let mut face_embs = Vec::with_capacity(num_faces);
    let mut face_caches = Vec::with_capacity(if grads_face { num_faces } else { 0 });
    for r in face_fwd {
        let (e, c) = r?;
        face_embs.push(e);
        if let Some(c) = c {
            face_caches.push(c);
        }
    }

    // Distance matrix between every voice and face embedding.
    let distances: Vec<Vec<f64>> = map(mode, num_voices, |vi| {
        face_embs
            .iter()
            .map(|f| raw_distance(&voice_embs[vi], f))
            .collect()
    });

    // Canonical triplet scan: cheap scalar work, done sequentially in every
    // mode. Activation counts are integers, so their accumulation order
    // cannot affect the result; the loss terms are summed pairwise in scan
    // order.
    let per_identity_faces: Vec<(usize, usize)> = face_offsets(batch);
    let per_identity_voices: Vec<(usize, usize)> = voice_offsets(batch);
    let mut terms: Vec<f64> = Vec::new();
    let mut count_pos = vec![vec![0i64; num_faces]; num_voices];
    let mut count_neg = vec![vec![0i64; num_faces]; num_voices];
    let mut num_triplets = 0usize;
    for (ai, _) in batch.identities.iter().enumerate() {
        let (v_start, v_len) = per_identity_voices[ai];
        let (p_start, p_len) = per_identity_faces[ai];
        for (ni, _) in batch.identities.iter().enumerate() {
            if ni == ai {
                continue;
            }
            let (g_start, g_len) = per_identity_faces[ni];
            for v in v_start..v_start + v_len {
                for p in p_start..p_start + p_len {
                    let d_pos = distances[v][p];
                    for g in g_start..g_start + g_len {
                        num_triplets += 1;
                        let term = d_pos - distances[v][g] + margin;
                        if term > 0.0 {
                            terms.push(term);
                            count_pos[v][p] += 1;
                            count_neg[v][g] += 1;
                        }
                    }
                }
            }
        }
    }
    let scale_factor = match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => {
            if num_triplets == 0 {
                1.0
            } else {
                1.0 / num_triplets as f64
            }
        }
    };
    let loss = exec::pairwise_sum(&terms) * scale_factor;

    if !want_grads {
        return Ok(LossGradients {
            loss,
            num_triplets,
            voice: None,
            face: None,
        });
    }

    // Gradient of the loss with respect to each embedding. For an active
    // triplet (a, p, n): d/da += u(a,p) - u(a,n), d/dp -= u(a,p),
    // d/dn += u(a,n), with u(x,y) = (e_x - e_y) / dist(x,y). Grouping by
    // (voice, face) pair turns that into one weighted difference vector per
    // pair, accumulated in canonical face (resp. voice) order. A distance of
    // exactly zero contributes the zero subgradient.
    let voice = if grads_voice {
        let grad_e: Vec<Vec<f64>> = map(mode, num_voices, |v| {
            let mut g = vec![0.0; pair.space.dim];
            for f in 0..num_faces {
                let coeff = (count_pos[v][f] - count_neg[v][f]) as f64;
                let dist = distances[v][f];
                if coeff != 0.0 && dist > 0.0 {
                    let w = coeff * scale_factor / dist;
                    for (gi, (a, b)) in g.iter_mut().zip(voice_embs[v].iter().zip(&face_embs[f]))
                    {
                        *gi += w * (a - b);
                    }
                }
            }
            g
        });
        let per_sample: Vec<EmbedderGradients> = map(mode, num_voices, |v| {
            backward(&pair.voice, pair.space.scale, &voice_caches[v], &grad_e[v])
        });
        Some(
            exec::pairwise_reduce(per_sample, EmbedderGradients::add)
                .unwrap_or_else(|| EmbedderGradients::zeros_like(&pair.voice)),
        )
    } else {
        None
    };

    let face = if grads_face {
        let grad_e: Vec<Vec<f64>> = map(mode, num_faces, |f| {
            let mut g = vec![0.0; pair.space.dim];
            for v in 0..num_voices {
                let coeff = (count_neg[v][f] - count_pos[v][f]) as f64;
                let dist = distances[v][f];
                if coeff != 0.0 && dist > 0.0 {
                    let w = coeff * scale_factor / dist;
                    for (gi, (a, b)) in g.iter_mut().zip(voice_embs[v].iter().zip(&face_embs[f]))
                    {
                        *gi += w * (a - b);
                    }
                }
            }
            g
        });
        let per_sample: Vec<EmbedderGradients> = map(mode, num_faces, |f| {
            backward(&pair.face, pair.space.scale, &face_caches[f], &grad_e[f])
        });
        Some(
            exec::pairwise_reduce(per_sample, EmbedderGradients::add)
                .unwrap_or_else(|| EmbedderGradients::zeros_like(&pair.face)),
        )
    } else {
        None
    };

    Ok(LossGradients {
        loss,
        num_triplets,
        voice,
        face,
    })
}

fn voice_offsets(batch: &TripletBatch) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(batch.identities.len());
    let mut start = 0;
    for identity in &batch.identities {
        out.push((start, identity.voices.len()));
        start += identity.voices.len();
    }
    out
}

fn face_offsets(batch: &TripletBatch) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(batch.identities.len());
    let mut start = 0;
    for identity in &batch.identities {
        out.push((start, identity.faces.len()));
        start += identity.faces.len();
    }
    out
}

fn embed_one(
    params: &EmbedderParams,
    scale: f64,
    space_dim: usize,
    x: &[f64],
    keep_cache: bool,
) -> Result<(Vec<f64>, Option<ForwardCache>)> {
    let cache = forward_cached(params, x)?;
    let z = cache.output();
    if z.len() != space_dim {
        return Err(Error::DimensionMismatch {
            context: "embedder output vs space dim",
            left: z.len(),
            right: space_dim,
        });
    }
    let norm = l2_norm(z);
    if norm <= NORM_EPSILON {
        return Err(Error::ZeroVector {
            norm,
            epsilon: NORM_EPSILON,
        });
    }
    let factor = scale / norm;
    let emb = z.iter().map(|v| v * factor).collect();
    Ok((emb, keep_cache.then_some(cache)))
}

/// Backpropagates a gradient on the *normalized* embedding through the
/// normalization and the layer stack.
fn backward(
    params: &EmbedderParams,
    scale: f64,
    cache: &ForwardCache,
    grad_e: &[f64],
) -> EmbedderGradients {
    let z = cache.output();
    let norm = l2_norm(z);
    // Jacobian of e = scale * z / ||z||:
    // de_i/dz_j = (scale/||z||) * (delta_ij - zhat_i * zhat_j).
    let zhat: Vec<f64> = z.iter().map(|v| v / norm).collect();
    let projected: f64 = zhat.iter().zip(grad_e).map(|(a, g)| a * g).sum();
    let mut delta: Vec<f64> = zhat
        .iter()
        .zip(grad_e)
        .map(|(zh, g)| (scale / norm) * (g - zh * projected))
        .collect();

    let mut layers: Vec<LayerGradients> = params
        .layers
        .iter()
        .map(|l| LayerGradients {
            w: vec![vec![0.0; l.in_dim()]; l.out_dim()],
            b: vec![0.0; l.out_dim()],
        })
        .collect();

    for i in (0..params.layers.len()).rev() {
        let layer = &params.layers[i];
        let input = &cache.post[i];
        for (o, d) in delta.iter().enumerate() {
            layers[i].b[o] = *d;
            for (j, x) in input.iter().enumerate() {
                layers[i].w[o][j] = d * x;
            }
        }
        if i > 0 {
            let mut grad_in = vec![0.0; layer.in_dim()];
            for (o, d) in delta.iter().enumerate() {
                for (j, w) in layer.w[o].iter().enumerate() {
                    grad_in[j] += w * d;
                }
            }
            // `input` is the activation output of layer i-1; under the
            // rectifier, exactly the positive units pass gradient (the
            // derivative at 0 is taken as 0).
            if params.activation == crate::embedder::Activation::Rectifier {
                for (g, x) in grad_in.iter_mut().zip(input) {
                    if *x <= 0.0 {
                        *g = 0.0;
                    }
                }
            }
            delta = grad_in;
        }
    }
    EmbedderGradients { layers }
}

struct AdamState {
    m: EmbedderGradients,
    v: EmbedderGradients,
}

impl AdamState {
    fn new(params: &EmbedderParams) -> Self {
        Self {
            m: EmbedderGradients::zeros_like(params),
            v: EmbedderGradients::zeros_like(params),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn apply_update(
    params: &mut EmbedderParams,
    grads: &EmbedderGradients,
    optimizer: Optimizer,
    state: &mut Option<AdamState>,
    t: u64,
    lr: f64,
    multipliers: &[f64],
) {
    match optimizer {
        Optimizer::Sgd => {
            for (li, (layer, g)) in params.layers.iter_mut().zip(&grads.layers).enumerate() {
                let rate = lr * multipliers[li];
                for (row, grow) in layer.w.iter_mut().zip(&g.w) {
                    for (p, gv) in row.iter_mut().zip(grow) {
                        *p -= rate * gv;
                    }
                }
                for (p, gv) in layer.b.iter_mut().zip(&g.b) {
                    *p -= rate * gv;
                }
            }
        }
        Optimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } => {
            let state = state.as_mut().expect("adam state exists for trainable nets");
            let bc1 = 1.0 - beta1.powi(t as i32);
            let bc2 = 1.0 - beta2.powi(t as i32);
            for (li, (layer, g)) in params.layers.iter_mut().zip(&grads.layers).enumerate() {
                let rate = lr * multipliers[li];
                let (ml, vl) = (&mut state.m.layers[li], &mut state.v.layers[li]);
                for (o, (row, grow)) in layer.w.iter_mut().zip(&g.w).enumerate() {
                    for (j, (p, gv)) in row.iter_mut().zip(grow).enumerate() {
                        let m = &mut ml.w[o][j];
                        let v = &mut vl.w[o][j];
                        *m = beta1 * *m + (1.0 - beta1) * gv;
                        *v = beta2 * *v + (1.0 - beta2) * gv * gv;
                        *p -= rate * (*m / bc1) / ((*v / bc2).sqrt() + epsilon);
                    }
                }
                for (o, (p, gv)) in layer.b.iter_mut().zip(&g.b).enumerate() {
                    let m = &mut ml.b[o];
                    let v = &mut vl.b[o];
                    *m = beta1 * *m + (1.0 - beta1) * gv;
                    *v = beta2 * *v + (1.0 - beta2) * gv * gv;
                    *p -= rate * (*m / bc1) / ((*v / bc2).sqrt() + epsilon);
                }
            }
        }
    }
}

fn resolve_multipliers(configured: &[f64], layer_count: usize, which: &str) -> Result<Vec<f64>> {
    if configured.is_empty() {
        return Ok(vec![1.0; layer_count]);
    }
    if configured.len() != layer_count {
        return Err(Error::InvalidConfig(format!(
            "{which} has {layer_count} layers but {} learning-rate multipliers",
            configured.len()
        )));
    }
    Ok(configured.to_vec())
}

/// Trains a modality pair on `dataset` and returns the trained pair plus
/// the per-step loss history. Frozen embedders come back bit-identical.
pub fn train(
    dataset: &Dataset,
    pair: &ModalityPair,
    cfg: &TrainingConfig,
) -> Result<(ModalityPair, Vec<LossRecord>)> {
    cfg.validate()?;
    pair.validate()?;
    check_feature_dims(dataset, pair)?;
    let voice_mults = resolve_multipliers(
        &cfg.voice_lr_multipliers,
        pair.voice.layers.len(),
        "voice embedder",
    )?;
    let face_mults = resolve_multipliers(
        &cfg.face_lr_multipliers,
        pair.face.layers.len(),
        "face embedder",
    )?;

    let mut pair = pair.clone();
    let mut sampler = Sampler::new(cfg.sampler)?;
    let mut voice_state = (!pair.voice.frozen).then(|| AdamState::new(&pair.voice));
    let mut face_state = (!pair.face.frozen).then(|| AdamState::new(&pair.face));
    let mut history = Vec::with_capacity(cfg.total_steps as usize);

    for step in 0..cfg.total_steps {
        let lr = cfg.schedule.rate_at(step);
        let batch = sampler.sample_batch(dataset)?;
        let lg = loss_gradients(&batch, &pair, cfg.margin, cfg.reduction)?;
        let t = step + 1;
        if let Some(g) = &lg.voice {
            apply_update(
                &mut pair.voice,
                g,
                cfg.optimizer,
                &mut voice_state,
                t,
                lr,
                &voice_mults,
            );
        }
        if let Some(g) = &lg.face {
            apply_update(
                &mut pair.face,
                g,
                cfg.optimizer,
                &mut face_state,
                t,
                lr,
                &face_mults,
            );
        }
        history.push(LossRecord {
            step,
            loss: lg.loss,
            learning_rate: lr,
        });
    }
    Ok((pair, history))
}

fn check_feature_dims(dataset: &Dataset, pair: &ModalityPair) -> Result<()> {
    if let Some(d) = dataset.voice_dim() {
        if d != pair.voice.in_dim() {
            return Err(Error::DimensionMismatch {
                context: "voice features vs voice embedder input",
                left: d,
                right: pair.voice.in_dim(),
            });
        }
    }
    if let Some(d) = dataset.face_dim() {
        if d != pair.face.in_dim() {
            return Err(Error::DimensionMismatch {
                context: "face features vs face embedder input",
                left: d,
                right: pair.face.in_dim(),
            });
        }
    }
    Ok(())
}
