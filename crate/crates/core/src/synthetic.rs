//! Synthetic paired voice/face data from a latent-factor model.
//!
//! Each identity owns a latent vector; its voice and face features are
//! (population-specific) linear projections of per-modality mixtures of that
//! latent, plus per-sample Gaussian noise. The knobs map directly onto the
//! phenomena the engine is tested against:
//!
//! - `rho` is the shared-variance fraction between the two modalities'
//!   latents: `rho = 1` makes voice and face deterministic functions of the
//!   same latent, `rho = 0` makes them independent (no cross-modal signal
//!   exists, so no model can beat chance).
//! - `noise_sigma` is per-sample feature noise; at 0 every sample of an
//!   identity within a modality is identical.
//! - `gender_offset` shifts the first latent coordinate by `+offset` for
//!   male and `-offset` for female identities in both modalities. The base
//!   projections keep the first feature coordinate aligned with that latent
//!   coordinate, so a large offset makes gender trivially separable by a
//!   threshold on `features[0]`.
//! - each population perturbs the base projections with its own
//!   `projection_sigma`, modeling distribution shift between cohorts.
//!
//! Identities are generated from per-identity derived seeds, so generation
//! parallelizes without changing a single output bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Gender, Identity};
use crate::error::{Error, Result};
use crate::exec;
use crate::seeds;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub label: String,
    /// Standard deviation of the additive perturbation applied to the base
    /// projection matrices for this population.
    pub projection_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub num_identities: usize,
    pub voices_per_identity: usize,
    pub faces_per_identity: usize,
    pub latent_dim: usize,
    pub voice_dim: usize,
    pub face_dim: usize,
    /// Shared-variance fraction between the voice and face latents, in
    /// [0, 1].
    pub rho: f64,
    pub noise_sigma: f64,
    pub gender_offset: f64,
    pub populations: Vec<PopulationSpec>,
    pub seed: u64,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            num_identities: 200,
            voices_per_identity: 12,
            faces_per_identity: 12,
            latent_dim: 16,
            voice_dim: 64,
            face_dim: 64,
            rho: 1.0,
            noise_sigma: 0.1,
            gender_offset: 0.0,
            populations: vec![PopulationSpec {
                label: "main".into(),
                projection_sigma: 0.0,
            }],
            seed: 0,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_identities < 2 {
            return Err(Error::InvalidConfig(
                "num_identities must be >= 2 (matching and sampling need at least two people)"
                    .into(),
            ));
        }
        if self.voices_per_identity == 0 || self.faces_per_identity == 0 {
            return Err(Error::InvalidConfig(
                "each identity needs at least one voice and one face sample".into(),
            ));
        }
        if self.latent_dim == 0 || self.voice_dim == 0 || self.face_dim == 0 {
            return Err(Error::InvalidConfig("dimensions must all be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::InvalidConfig(format!(
                "rho must lie in [0, 1], got {}",
                self.rho
            )));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise_sigma must be >= 0".into()));
        }
        if !(self.gender_offset.is_finite() && self.gender_offset >= 0.0) {
            return Err(Error::InvalidConfig("gender_offset must be >= 0".into()));
        }
        if self.populations.is_empty() {
            return Err(Error::InvalidConfig("at least one population required".into()));
        }
        let mut labels: Vec<&str> = self.populations.iter().map(|p| p.label.as_str()).collect();
        labels.sort_unstable();
        labels.dedup();
        if labels.len() != self.populations.len() {
            return Err(Error::InvalidConfig("population labels must be unique".into()));
        }
        if self
            .populations
            .iter()
            .any(|p| !(p.projection_sigma.is_finite() && p.projection_sigma >= 0.0))
        {
            return Err(Error::InvalidConfig("projection_sigma must be >= 0".into()));
        }
        Ok(())
    }
}

/// A population's voice and face projection matrices.
type ProjectionPair = (Vec<Vec<f64>>, Vec<Vec<f64>>);

/// Generates a dataset. Identities alternate male/female and are assigned
/// to populations round-robin, so both attributes stay balanced.
pub fn generate(cfg: &GeneratorConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(cfg.seed);

    // Base projections, then one perturbed copy per population, all from the
    // master stream in config order.
    let base_voice = base_projection(&mut master, cfg.voice_dim, cfg.latent_dim);
    let base_face = base_projection(&mut master, cfg.face_dim, cfg.latent_dim);
    let projections: Vec<ProjectionPair> = cfg
        .populations
        .iter()
        .map(|p| {
            (
                perturb(&mut master, &base_voice, p.projection_sigma),
                perturb(&mut master, &base_face, p.projection_sigma),
            )
        })
        .collect();

    let identities = exec::map_indexed(cfg.num_identities, |i| {
        let pop_idx = i % cfg.populations.len();
        let (proj_voice, proj_face) = &projections[pop_idx];
        build_identity(cfg, i, pop_idx, proj_voice, proj_face)
    });
    Dataset::from_identities(identities)
}

fn build_identity(
    cfg: &GeneratorConfig,
    index: usize,
    pop_idx: usize,
    proj_voice: &[Vec<f64>],
    proj_face: &[Vec<f64>],
) -> Identity {
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive_indexed(
        cfg.seed,
        seeds::stream::GENERATOR,
        index as u64,
    ));
    let gender = if index % 2 == 0 {
        Gender::Male
    } else {
        Gender::Female
    };

    // Fixed draw order regardless of rho/noise settings, so e.g. changing
    // noise_sigma never reshuffles the latents.
    let shared = gaussian_vec(&mut rng, cfg.latent_dim);
    let voice_private = gaussian_vec(&mut rng, cfg.latent_dim);
    let face_private = gaussian_vec(&mut rng, cfg.latent_dim);

    let offset = match gender {
        Gender::Male => cfg.gender_offset,
        Gender::Female => -cfg.gender_offset,
    };
    let mix = |private: &[f64]| -> Vec<f64> {
        let shared_w = cfg.rho.sqrt();
        let private_w = (1.0 - cfg.rho).sqrt();
        let mut latent: Vec<f64> = shared
            .iter()
            .zip(private)
            .map(|(s, p)| shared_w * s + private_w * p)
            .collect();
        latent[0] += offset;
        latent
    };
    let voice_latent = mix(&voice_private);
    let face_latent = mix(&face_private);

    let sample = |proj: &[Vec<f64>], latent: &[f64], rng: &mut ChaCha8Rng| -> Vec<f64> {
        let noise = gaussian_vec(rng, proj.len());
        proj.iter()
            .zip(&noise)
            .map(|(row, n)| {
                row.iter().zip(latent).map(|(w, z)| w * z).sum::<f64>() + cfg.noise_sigma * n
            })
            .collect()
    };
    let voices = (0..cfg.voices_per_identity)
        .map(|_| sample(proj_voice, &voice_latent, &mut rng))
        .collect();
    let faces = (0..cfg.faces_per_identity)
        .map(|_| sample(proj_face, &face_latent, &mut rng))
        .collect();

    Identity {
        id: format!("id{index:05}"),
        gender,
        population: cfg.populations[pop_idx].label.clone(),
        voices,
        faces,
    }
}

/// Base projection: the first row picks out the first latent coordinate
/// (keeping the gender offset observable as `features[0]`); remaining rows
/// are Gaussian with variance 1/latent_dim so projected features have
/// roughly unit variance.
fn base_projection(rng: &mut ChaCha8Rng, out_dim: usize, latent_dim: usize) -> Vec<Vec<f64>> {
    let std = 1.0 / (latent_dim as f64).sqrt();
    (0..out_dim)
        .map(|r| {
            if r == 0 {
                let mut row = vec![0.0; latent_dim];
                row[0] = 1.0;
                row
            } else {
                (0..latent_dim).map(|_| std * std_normal(rng)).collect()
            }
        })
        .collect()
}

fn perturb(rng: &mut ChaCha8Rng, base: &[Vec<f64>], sigma: f64) -> Vec<Vec<f64>> {
    base.iter()
        .map(|row| row.iter().map(|v| v + sigma * std_normal(rng)).collect())
        .collect()
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_vec(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| std_normal(rng)).collect()
}
