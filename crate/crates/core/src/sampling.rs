//! Identity-based triplet batch sampling and the random-tuple baseline.
//!
//! A batch selects `b` identities, `q` voices and `r` faces per identity,
//! and induces every cross-identity triplet (anchor voice, positive face of
//! the same person, negative face of another selected person). That yields
//! exactly `b*(b-1)*q*r^2` triplets from only `b*(q+r)` samples — the whole
//! point of grouping by identity is that embeddings are shared across all
//! those triplets.
//!
//! Triplet enumeration order is canonical and documented: anchor identity,
//! then negative identity, then voice, then positive face, then negative
//! face. Training relies on this order for its deterministic reductions.

use std::collections::HashSet;

use rand::seq::index;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Gender};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenderBalance {
    /// Identities are drawn uniformly regardless of gender.
    #[default]
    None,
    /// Each batch holds a 3:1 gender split; which gender is in the majority
    /// alternates from batch to batch, starting from a seed-derived choice.
    ThreeToOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SamplerConfig {
    /// Identities per batch (`b`).
    pub identities_per_batch: usize,
    /// Voices selected per identity (`q`).
    pub voices_per_identity: usize,
    /// Faces selected per identity (`r`).
    pub faces_per_identity: usize,
    pub gender_balance: GenderBalance,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            identities_per_batch: 4,
            voices_per_identity: 4,
            faces_per_identity: 8,
            gender_balance: GenderBalance::None,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.identities_per_batch < 2 {
            return Err(Error::InvalidConfig(
                "identities_per_batch must be >= 2 to form cross-identity triplets".into(),
            ));
        }
        if self.voices_per_identity == 0 || self.faces_per_identity == 0 {
            return Err(Error::InvalidConfig(
                "voices_per_identity and faces_per_identity must be >= 1".into(),
            ));
        }
        if self.gender_balance == GenderBalance::ThreeToOne && self.identities_per_batch % 4 != 0 {
            return Err(Error::InvalidConfig(format!(
                "a 3:1 gender split needs identities_per_batch divisible by 4, got {}",
                self.identities_per_batch
            )));
        }
        Ok(())
    }

    /// Number of triplets every batch induces: `b*(b-1)*q*r^2`.
    pub fn triplets_per_batch(&self) -> usize {
        let b = self.identities_per_batch;
        let q = self.voices_per_identity;
        let r = self.faces_per_identity;
        b * (b - 1) * q * r * r
    }
}

/// One selected identity inside a batch, with its chosen samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchIdentity {
    pub id: String,
    pub gender: Gender,
    pub voices: Vec<Vec<f64>>,
    pub faces: Vec<Vec<f64>>,
}

/// An identity-grouped batch; triplets are a view, not stored.
#[derive(Debug, Clone, PartialEq)]
pub struct TripletBatch {
    pub identities: Vec<BatchIdentity>,
}

/// Borrowed view of one (anchor voice, positive face, negative face)
/// triplet.
#[derive(Debug, Clone, Copy)]
pub struct Triplet<'a> {
    pub anchor_id: &'a str,
    pub negative_id: &'a str,
    pub anchor_voice: &'a [f64],
    pub positive_face: &'a [f64],
    pub negative_face: &'a [f64],
}

/// Owned triplet, as produced by [`mine_random_tuples`].
#[derive(Debug, Clone, PartialEq)]
pub struct OwnedTriplet {
    pub anchor_id: String,
    pub negative_id: String,
    pub anchor_voice: Vec<f64>,
    pub positive_face: Vec<f64>,
    pub negative_face: Vec<f64>,
}

impl TripletBatch {
    pub fn num_triplets(&self) -> usize {
        let b = self.identities.len();
        if b < 2 {
            return 0;
        }
        let mut total = 0;
        for (ai, a) in self.identities.iter().enumerate() {
            for (ni, n) in self.identities.iter().enumerate() {
                if ai != ni {
                    total += a.voices.len() * a.faces.len() * n.faces.len();
                }
            }
        }
        total
    }

    /// Enumerates triplets in canonical order: anchor identity, negative
    /// identity, anchor voice, positive face, negative face.
    pub fn triplets(&self) -> impl Iterator<Item = Triplet<'_>> + '_ {
        self.identities.iter().enumerate().flat_map(move |(ai, a)| {
            self.identities
                .iter()
                .enumerate()
                .filter(move |(ni, _)| *ni != ai)
                .flat_map(move |(_, n)| {
                    a.voices.iter().flat_map(move |v| {
                        a.faces.iter().flat_map(move |p| {
                            n.faces.iter().map(move |g| Triplet {
                                anchor_id: &a.id,
                                negative_id: &n.id,
                                anchor_voice: v,
                                positive_face: p,
                                negative_face: g,
                            })
                        })
                    })
                })
        })
    }
}

/// Stateful batch sampler. Holds the RNG stream and the batch counter that
/// drives gender-majority alternation.
#[derive(Debug, Clone)]
pub struct Sampler {
    cfg: SamplerConfig,
    rng: ChaCha8Rng,
    batch_index: u64,
    first_majority: Gender,
    /// Identities already warned about replacement sampling; keeps the log
    /// to one line per identity over the sampler's lifetime.
    warned: HashSet<String>,
}

impl Sampler {
    pub fn new(cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let first_majority = if rng.random::<bool>() {
            Gender::Male
        } else {
            Gender::Female
        };
        Ok(Self {
            cfg,
            rng,
            batch_index: 0,
            first_majority,
            warned: HashSet::new(),
        })
    }

    /// Majority gender the *next* sampled batch will use under
    /// [`GenderBalance::ThreeToOne`].
    pub fn next_majority(&self) -> Gender {
        if self.batch_index % 2 == 0 {
            self.first_majority
        } else {
            self.first_majority.opposite()
        }
    }

    /// Draws one batch. Identities are selected without replacement; per
    /// identity, samples are selected without replacement when enough exist,
    /// otherwise with replacement (a warning is logged once per identity
    /// over the sampler's lifetime).
    ///
    /// RNG consumption order: identity selection, batch-order shuffle, then
    /// per identity in batch order its voice then face selection.
    pub fn sample_batch(&mut self, dataset: &Dataset) -> Result<TripletBatch> {
        let cfg = self.cfg;
        let eligible: Vec<usize> = (0..dataset.len())
            .filter(|&i| {
                let identity = &dataset.identities()[i];
                !identity.voices.is_empty() && !identity.faces.is_empty()
            })
            .collect();

        let mut chosen: Vec<usize> = match cfg.gender_balance {
            GenderBalance::None => {
                if eligible.len() < cfg.identities_per_batch {
                    return Err(Error::InsufficientData(format!(
                        "batch needs {} identities with both modalities, found {}",
                        cfg.identities_per_batch,
                        eligible.len()
                    )));
                }
                index::sample(&mut self.rng, eligible.len(), cfg.identities_per_batch)
                    .iter()
                    .map(|k| eligible[k])
                    .collect()
            }
            GenderBalance::ThreeToOne => {
                let majority = self.next_majority();
                let majority_count = 3 * cfg.identities_per_batch / 4;
                let minority_count = cfg.identities_per_batch - majority_count;
                let pool = |g: Gender| -> Vec<usize> {
                    eligible
                        .iter()
                        .copied()
                        .filter(|&i| dataset.identities()[i].gender == g)
                        .collect()
                };
                let majority_pool = pool(majority);
                let minority_pool = pool(majority.opposite());
                if majority_pool.len() < majority_count || minority_pool.len() < minority_count {
                    return Err(Error::InsufficientData(format!(
                        "3:1 balance needs {majority_count}+{minority_count} identities by gender, \
                         found {}+{}",
                        majority_pool.len(),
                        minority_pool.len()
                    )));
                }
                let mut sel: Vec<usize> =
                    index::sample(&mut self.rng, majority_pool.len(), majority_count)
                        .iter()
                        .map(|k| majority_pool[k])
                        .collect();
                sel.extend(
                    index::sample(&mut self.rng, minority_pool.len(), minority_count)
                        .iter()
                        .map(|k| minority_pool[k]),
                );
                sel
            }
        };
        chosen.shuffle(&mut self.rng);

        let mut identities = Vec::with_capacity(chosen.len());
        for idx in chosen {
            let identity = &dataset.identities()[idx];
            let short = identity.voices.len() < cfg.voices_per_identity
                || identity.faces.len() < cfg.faces_per_identity;
            if short && !self.warned.contains(&identity.id) {
                log::warn!(
                    "identity {:?} has {} voices / {} faces for a request of {} / {}; \
                     sampling with replacement (reported once per identity)",
                    identity.id,
                    identity.voices.len(),
                    identity.faces.len(),
                    cfg.voices_per_identity,
                    cfg.faces_per_identity
                );
                self.warned.insert(identity.id.clone());
            }
            let voices =
                select_samples(&mut self.rng, &identity.voices, cfg.voices_per_identity);
            let faces = select_samples(&mut self.rng, &identity.faces, cfg.faces_per_identity);
            identities.push(BatchIdentity {
                id: identity.id.clone(),
                gender: identity.gender,
                voices,
                faces,
            });
        }
        self.batch_index += 1;
        Ok(TripletBatch { identities })
    }
}

fn select_samples(rng: &mut ChaCha8Rng, pool: &[Vec<f64>], amount: usize) -> Vec<Vec<f64>> {
    if pool.len() >= amount {
        index::sample(rng, pool.len(), amount)
            .iter()
            .map(|k| pool[k].clone())
            .collect()
    } else {
        (0..amount)
            .map(|_| pool[rng.random_range(0..pool.len())].clone())
            .collect()
    }
}

/// Draws `count` independent triplets with every ordered identity pair
/// equally likely (probability `1/(N*(N-1))`), the classical baseline that
/// identity-grouped batching is measured against.
pub fn mine_random_tuples(dataset: &Dataset, count: usize, seed: u64) -> Result<Vec<OwnedTriplet>> {
    let n = dataset.len();
    if n < 2 {
        return Err(Error::InsufficientData(
            "random tuples need at least two identities".into(),
        ));
    }
    for identity in dataset.identities() {
        if identity.voices.is_empty() || identity.faces.is_empty() {
            return Err(Error::InsufficientData(format!(
                "identity {:?} lacks a modality; uniform pair probabilities would be skewed",
                identity.id
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let a = rng.random_range(0..n);
        let mut b = rng.random_range(0..n - 1);
        if b >= a {
            b += 1;
        }
        let anchor = &dataset.identities()[a];
        let negative = &dataset.identities()[b];
        let voice = &anchor.voices[rng.random_range(0..anchor.voices.len())];
        let positive = &anchor.faces[rng.random_range(0..anchor.faces.len())];
        let neg_face = &negative.faces[rng.random_range(0..negative.faces.len())];
        out.push(OwnedTriplet {
            anchor_id: anchor.id.clone(),
            negative_id: negative.id.clone(),
            anchor_voice: voice.clone(),
            positive_face: positive.clone(),
            negative_face: neg_face.clone(),
        });
    }
    Ok(out)
}
