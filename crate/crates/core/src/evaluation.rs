//! Matching and retrieval evaluation: 1:n matching instances, ranked
//! retrieval with mean average precision, joint (multi-sample) embeddings,
//! per-identity probes, dataset splits, and the combined report.
//!
//! Every evaluation first embeds each dataset sample exactly once (in
//! parallel), then builds test instances with a sequential seeded RNG and
//! scores them in parallel over instances. Scores aggregate through integer
//! counts or fixed-order pairwise sums, so results are bit-identical across
//! thread counts. Models are taken by shared reference and never mutated.

use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::confidence::{confidence_t, round_to_4_significant, TestDesign};
use crate::dataset::{Dataset, Gender};
use crate::embedder::{embed, EmbedderParams, ModalityPair};
use crate::error::{Error, Result};
use crate::exec;
use crate::metric::{
    inner_product_similarity, l2_normalize_scale, Embedding, MetricSpaceConfig,
};
use crate::seeds;

/// One 1:n matching instance over raw feature vectors: a voice query, `n`
/// candidate faces of pairwise-distinct identities exactly one of which
/// belongs to the speaker, and the position of that true candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchingInstance {
    pub query_voice: Vec<f64>,
    pub candidates: Vec<Vec<f64>>,
    pub true_index: usize,
}

/// Predicts the candidate with the highest inner-product similarity to the
/// query; ties break to the lowest index.
pub fn match_1n(instance: &MatchingInstance, pair: &ModalityPair) -> Result<usize> {
    if instance.candidates.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "matching needs at least 2 candidates, got {}",
            instance.candidates.len()
        )));
    }
    let query = embed(&pair.voice, &pair.space, &instance.query_voice)?;
    let candidates: Vec<Embedding> = instance
        .candidates
        .iter()
        .map(|c| embed(&pair.face, &pair.space, c))
        .collect::<Result<_>>()?;
    best_match(&query, &candidates)
}

/// Index of the candidate embedding most similar to the query (highest
/// inner product); ties break to the lowest index.
pub fn best_match(query: &Embedding, candidates: &[Embedding]) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::InsufficientData(
            "cannot match against an empty candidate list".into(),
        ));
    }
    let mut best = 0;
    let mut best_sim = inner_product_similarity(query, &candidates[0])?;
    for (i, c) in candidates.iter().enumerate().skip(1) {
        let sim = inner_product_similarity(query, c)?;
        if sim > best_sim {
            best = i;
            best_sim = sim;
        }
    }
    Ok(best)
}

/// Embeds each vector, averages the embeddings, and re-projects the mean
/// onto the radius-`scale` sphere. Fails with `ZeroVector` if the
/// embeddings cancel (near-)exactly.
pub fn joint_embedding(
    vectors: &[Vec<f64>],
    params: &EmbedderParams,
    space: &MetricSpaceConfig,
) -> Result<Embedding> {
    if vectors.is_empty() {
        return Err(Error::InsufficientData(
            "joint embedding of an empty sample list".into(),
        ));
    }
    let embs: Vec<Embedding> = vectors
        .iter()
        .map(|v| embed(params, space, v))
        .collect::<Result<_>>()?;
    joint_of_embeddings(&embs.iter().collect::<Vec<_>>(), space.scale)
}

/// Mean-then-renormalize over already-computed embeddings, in list order.
fn joint_of_embeddings(embs: &[&Embedding], scale: f64) -> Result<Embedding> {
    let dim = embs[0].dim();
    let mut mean = vec![0.0; dim];
    for e in embs {
        for (m, v) in mean.iter_mut().zip(e.values()) {
            *m += v;
        }
    }
    let k = embs.len() as f64;
    for m in &mut mean {
        *m /= k;
    }
    l2_normalize_scale(&mean, scale)
}

/// Average precision of one ranked result list: the mean, over relevant
/// items, of precision at that item's rank. `None` when nothing is
/// relevant.
pub fn average_precision(relevance_in_rank_order: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut total = 0.0;
    for (rank0, rel) in relevance_in_rank_order.iter().enumerate() {
        if *rel {
            hits += 1;
            total += hits as f64 / (rank0 + 1) as f64;
        }
    }
    (hits > 0).then(|| total / hits as f64)
}

/// Mean of per-query average precision. Errors with the index of the first
/// query that has no relevant item.
pub fn mean_average_precision(relevance_per_query: &[Vec<bool>]) -> Result<f64> {
    if relevance_per_query.is_empty() {
        return Err(Error::InsufficientData(
            "mean average precision over zero queries".into(),
        ));
    }
    let mut aps = Vec::with_capacity(relevance_per_query.len());
    for (query_index, flags) in relevance_per_query.iter().enumerate() {
        match average_precision(flags) {
            Some(ap) => aps.push(ap),
            None => return Err(Error::NoRelevantItems { query_index }),
        }
    }
    Ok(exec::pairwise_sum(&aps) / aps.len() as f64)
}

/// Gallery indices sorted by descending similarity to the query embedding;
/// ties break to the ascending index.
pub fn rank_by_similarity(query: &Embedding, gallery: &[Embedding]) -> Result<Vec<usize>> {
    let sims: Vec<f64> = gallery
        .iter()
        .map(|g| inner_product_similarity(query, g))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..gallery.len()).collect();
    order.sort_by(|a, b| {
        sims[*b]
            .partial_cmp(&sims[*a])
            .expect("similarities of finite embeddings are finite")
            .then_with(|| a.cmp(b))
    });
    Ok(order)
}

/// Ranks raw gallery face features against a raw voice query.
pub fn retrieve(
    query_voice: &[f64],
    gallery_faces: &[Vec<f64>],
    pair: &ModalityPair,
) -> Result<Vec<usize>> {
    if gallery_faces.is_empty() {
        return Err(Error::InsufficientData("empty retrieval gallery".into()));
    }
    let query = embed(&pair.voice, &pair.space, query_voice)?;
    let gallery: Vec<Embedding> = gallery_faces
        .iter()
        .map(|f| embed(&pair.face, &pair.space, f))
        .collect::<Result<_>>()?;
    rank_by_similarity(&query, &gallery)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MatchingOptions {
    /// Candidates per instance (`n` in 1:n matching).
    pub num_candidates: usize,
    pub num_instances: usize,
    /// Voices jointly embedded per query.
    pub voices_per_query: usize,
    /// Faces jointly embedded per candidate.
    pub faces_per_candidate: usize,
    /// Alternate query genders across instances and report per-gender
    /// accuracy.
    pub stratify_gender: bool,
    /// Restrict distractor candidates to the query's gender. Off by
    /// default: candidate sets are sampled without a gender constraint.
    pub same_gender_candidates: bool,
    pub seed: u64,
}

impl Default for MatchingOptions {
    fn default() -> Self {
        Self {
            num_candidates: 2,
            num_instances: 10_000,
            voices_per_query: 1,
            faces_per_candidate: 1,
            stratify_gender: false,
            same_gender_candidates: false,
            seed: 0,
        }
    }
}

impl MatchingOptions {
    pub fn validate(&self) -> Result<()> {
        if self.num_candidates < 2 {
            return Err(Error::InvalidConfig(format!(
                "matching needs at least 2 candidates, got {}",
                self.num_candidates
            )));
        }
        if self.num_instances == 0 || self.voices_per_query == 0 || self.faces_per_candidate == 0
        {
            return Err(Error::InvalidConfig(
                "matching instance counts and joint sizes must be positive".into(),
            ));
        }
        if self.stratify_gender && self.num_instances < 2 {
            return Err(Error::InvalidConfig(
                "gender stratification needs at least 2 instances".into(),
            ));
        }
        Ok(())
    }
}

/// Per-gender matching accuracy (gender of the query identity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GenderAccuracy {
    pub male: f64,
    pub female: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchingResult {
    pub accuracy: f64,
    pub num_instances: usize,
    /// Present when gender stratification was requested.
    pub by_gender: Option<GenderAccuracy>,
    /// Test-design confidence `T = N ln(n / (N (N-1)))`, rounded to 4
    /// significant figures; attached for 1:2 matching only.
    pub confidence_t: Option<f64>,
}

/// Runs 1:n matching over sampled instances.
///
/// Instances are built sequentially from a ChaCha stream seeded by the
/// evaluation-stream derivation of `opts.seed`; per instance the draw order
/// is: query identity, distractor identities, true-candidate position,
/// query voice indices, then candidate face indices in candidate order.
/// Identities lacking a voice or a face sample are excluded up front.
/// Identities with fewer samples than a joint size fall back to drawing
/// with replacement.
pub fn evaluate_matching(
    dataset: &Dataset,
    pair: &ModalityPair,
    opts: &MatchingOptions,
) -> Result<MatchingResult> {
    let embedded = EmbeddedDataset::build(dataset, pair)?;
    evaluate_matching_with(&embedded, opts, Mode::Default)
}

/// Sequential reference implementation of [`evaluate_matching`];
/// bit-identical output, used by the comparison benches.
pub fn evaluate_matching_seq(
    dataset: &Dataset,
    pair: &ModalityPair,
    opts: &MatchingOptions,
) -> Result<MatchingResult> {
    let embedded = EmbeddedDataset::build_seq(dataset, pair)?;
    evaluate_matching_with(&embedded, opts, Mode::Sequential)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetrievalOptions {
    /// Identities whose faces form the gallery.
    pub gallery_identities: usize,
    /// Gallery faces drawn per identity.
    pub faces_per_identity: usize,
    /// Voice queries issued per gallery identity.
    pub queries_per_identity: usize,
    /// Voices jointly embedded per query.
    pub voices_per_query: usize,
    /// Collapse each identity's gallery faces into one joint entry.
    pub join_gallery_faces: bool,
    pub seed: u64,
}

impl Default for RetrievalOptions {
    fn default() -> Self {
        Self {
            gallery_identities: 100,
            faces_per_identity: 5,
            queries_per_identity: 40,
            voices_per_query: 1,
            join_gallery_faces: false,
            seed: 0,
        }
    }
}

impl RetrievalOptions {
    pub fn validate(&self) -> Result<()> {
        if self.gallery_identities < 2 {
            return Err(Error::InvalidConfig(
                "retrieval needs at least 2 gallery identities".into(),
            ));
        }
        if self.faces_per_identity == 0
            || self.queries_per_identity == 0
            || self.voices_per_query == 0
        {
            return Err(Error::InvalidConfig(
                "retrieval sample counts must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub map_score: f64,
    pub num_queries: usize,
    /// Mean average precision of each gallery identity's own queries.
    pub per_identity_ap: BTreeMap<String, f64>,
}

/// Builds a face gallery and voice queries, ranks every query against the
/// gallery, and reports mean average precision.
pub fn evaluate_retrieval(
    dataset: &Dataset,
    pair: &ModalityPair,
    opts: &RetrievalOptions,
) -> Result<RetrievalResult> {
    let embedded = EmbeddedDataset::build(dataset, pair)?;
    evaluate_retrieval_with(&embedded, opts, Mode::Default)
}

/// Sequential reference implementation of [`evaluate_retrieval`];
/// bit-identical output, used by the comparison benches.
pub fn evaluate_retrieval_seq(
    dataset: &Dataset,
    pair: &ModalityPair,
    opts: &RetrievalOptions,
) -> Result<RetrievalResult> {
    let embedded = EmbeddedDataset::build_seq(dataset, pair)?;
    evaluate_retrieval_with(&embedded, opts, Mode::Sequential)
}

/// Mean 1:2 accuracy of `target_id` against every other identity, with
/// `repeats` fresh instances per opponent. Opponents run in parallel, each
/// on its own index-derived RNG stream, so the result does not depend on
/// scheduling.
pub fn individual_test(
    dataset: &Dataset,
    pair: &ModalityPair,
    target_id: &str,
    repeats: usize,
    seed: u64,
) -> Result<f64> {
    let embedded = EmbeddedDataset::build(dataset, pair)?;
    individual_test_with(&embedded, target_id, repeats, seed, Mode::Default)
}

/// How a dataset is partitioned into train and test halves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Disjoint identity sets: test identities are never seen in training.
    UnseenUnheard,
    /// Identities shared, samples disjoint: every identity keeps some
    /// voices and faces on each side.
    SeenHeard,
}

/// Splits a dataset for train/test protocols. `fraction` is the share that
/// goes to the training side, strictly between 0 and 1; each side always
/// receives at least one identity (or one sample per modality).
pub fn split_dataset(
    dataset: &Dataset,
    mode: SplitMode,
    fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset)> {
    if !(fraction.is_finite() && fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "split fraction must lie strictly between 0 and 1, got {fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, seeds::stream::SPLIT));
    match mode {
        SplitMode::UnseenUnheard => {
            let n = dataset.len();
            if n < 2 {
                return Err(Error::InsufficientData(format!(
                    "identity split needs at least 2 identities, got {n}"
                )));
            }
            let train_count =
                ((fraction * n as f64).round() as usize).clamp(1, n - 1);
            let chosen = index::sample(&mut rng, n, train_count);
            let mut in_train = vec![false; n];
            for i in chosen {
                in_train[i] = true;
            }
            let split = |keep: bool| -> Vec<_> {
                dataset
                    .identities()
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| in_train[*i] == keep)
                    .map(|(_, ident)| ident.clone())
                    .collect()
            };
            Ok((
                Dataset::from_identities(split(true))?,
                Dataset::from_identities(split(false))?,
            ))
        }
        SplitMode::SeenHeard => {
            let mut train = Vec::with_capacity(dataset.len());
            let mut test = Vec::with_capacity(dataset.len());
            for ident in dataset.identities() {
                let mut train_ident = ident.clone();
                let mut test_ident = ident.clone();
                for (pick_train, pick_test, pool, what) in [
                    (
                        &mut train_ident.voices,
                        &mut test_ident.voices,
                        &ident.voices,
                        "voices",
                    ),
                    (
                        &mut train_ident.faces,
                        &mut test_ident.faces,
                        &ident.faces,
                        "faces",
                    ),
                ] {
                    let n = pool.len();
                    if n < 2 {
                        return Err(Error::InsufficientData(format!(
                            "sample split needs at least 2 {what} per identity; '{}' has {n}",
                            ident.id
                        )));
                    }
                    let train_count =
                        ((fraction * n as f64).round() as usize).clamp(1, n - 1);
                    let chosen = index::sample(&mut rng, n, train_count);
                    let mut in_train = vec![false; n];
                    for i in chosen {
                        in_train[i] = true;
                    }
                    *pick_train = pool
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| in_train[*i])
                        .map(|(_, s)| s.clone())
                        .collect();
                    *pick_test = pool
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| !in_train[*i])
                        .map(|(_, s)| s.clone())
                        .collect();
                }
                train.push(train_ident);
                test.push(test_ident);
            }
            Ok((
                Dataset::from_identities(train)?,
                Dataset::from_identities(test)?,
            ))
        }
    }
}

/// The combined evaluation: 1:n accuracies, retrieval mAP, per-gender and
/// per-identity accuracy, and the 1:2 design confidence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// 1:n matching accuracy keyed by n.
    pub accuracy_1n: BTreeMap<usize, f64>,
    pub map_score: f64,
    pub accuracy_by_gender: GenderAccuracy,
    /// Individual 1:2 accuracy per identity (empty when disabled).
    pub per_identity_accuracy: BTreeMap<String, f64>,
    /// Confidence of the 1:2 matching design, rounded to 4 significant
    /// figures.
    pub confidence_t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReportOptions {
    pub matching: MatchingOptions,
    /// Candidate-set sizes for the 1:n accuracy table.
    pub matching_sizes: Vec<usize>,
    pub retrieval: RetrievalOptions,
    /// Instances per opponent in the per-identity probe; 0 disables it.
    pub individual_repeats: usize,
    pub individual_seed: u64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            matching: MatchingOptions::default(),
            matching_sizes: vec![2, 10],
            retrieval: RetrievalOptions::default(),
            individual_repeats: 10,
            individual_seed: 0,
        }
    }
}

impl ReportOptions {
    pub fn validate(&self) -> Result<()> {
        self.matching.validate()?;
        self.retrieval.validate()?;
        if self.matching_sizes.is_empty() {
            return Err(Error::InvalidConfig(
                "at least one matching size is required".into(),
            ));
        }
        if self.matching_sizes.iter().any(|n| *n < 2) {
            return Err(Error::InvalidConfig(
                "matching sizes must all be at least 2".into(),
            ));
        }
        Ok(())
    }
}

/// Runs matching at every configured size, retrieval, and the per-identity
/// probe, sharing one pass of sample embeddings. Gender stratification is
/// always on here so the per-gender numbers are well defined.
pub fn evaluation_report(
    dataset: &Dataset,
    pair: &ModalityPair,
    opts: &ReportOptions,
) -> Result<EvaluationReport> {
    opts.validate()?;
    let embedded = EmbeddedDataset::build(dataset, pair)?;

    let mut accuracy_1n = BTreeMap::new();
    let mut by_gender = None;
    for &n in &opts.matching_sizes {
        let m_opts = MatchingOptions {
            num_candidates: n,
            stratify_gender: true,
            ..opts.matching
        };
        let result = evaluate_matching_with(&embedded, &m_opts, Mode::Default)?;
        if by_gender.is_none() {
            by_gender = result.by_gender;
        }
        accuracy_1n.insert(n, result.accuracy);
    }

    let retrieval = evaluate_retrieval_with(&embedded, &opts.retrieval, Mode::Default)?;

    let mut per_identity_accuracy = BTreeMap::new();
    if opts.individual_repeats > 0 {
        for ident in embedded.dataset.identities() {
            let acc = individual_test_with(
                &embedded,
                &ident.id,
                opts.individual_repeats,
                opts.individual_seed,
                Mode::Default,
            )?;
            per_identity_accuracy.insert(ident.id.clone(), acc);
        }
    }

    let design = TestDesign {
        num_identities: embedded.eligible.len() as u64,
        num_tuples: opts.matching.num_instances as u64,
    };
    Ok(EvaluationReport {
        accuracy_1n,
        map_score: retrieval.map_score,
        accuracy_by_gender: by_gender.expect("stratified matching always reports genders"),
        per_identity_accuracy,
        confidence_t: round_to_4_significant(confidence_t(design)?),
    })
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

/// Every sample of the dataset embedded once, plus the index of identities
/// eligible for evaluation (those with at least one sample per modality).
struct EmbeddedDataset<'a> {
    dataset: &'a Dataset,
    scale: f64,
    voices: Vec<Vec<Embedding>>,
    faces: Vec<Vec<Embedding>>,
    eligible: Vec<usize>,
}

impl<'a> EmbeddedDataset<'a> {
    fn build(dataset: &'a Dataset, pair: &ModalityPair) -> Result<Self> {
        Self::build_mode(dataset, pair, Mode::Default)
    }

    fn build_seq(dataset: &'a Dataset, pair: &ModalityPair) -> Result<Self> {
        Self::build_mode(dataset, pair, Mode::Sequential)
    }

    fn build_mode(dataset: &'a Dataset, pair: &ModalityPair, mode: Mode) -> Result<Self> {
        pair.validate()?;
        if dataset.is_empty() {
            return Err(Error::InsufficientData(
                "cannot evaluate on an empty dataset".into(),
            ));
        }
        let per_identity: Vec<Result<(Vec<Embedding>, Vec<Embedding>)>> =
            map(mode, dataset.len(), |i| {
                let ident = &dataset.identities()[i];
                let voices = ident
                    .voices
                    .iter()
                    .map(|v| embed(&pair.voice, &pair.space, v))
                    .collect::<Result<_>>()?;
                let faces = ident
                    .faces
                    .iter()
                    .map(|f| embed(&pair.face, &pair.space, f))
                    .collect::<Result<_>>()?;
                Ok((voices, faces))
            });
        let mut voices = Vec::with_capacity(dataset.len());
        let mut faces = Vec::with_capacity(dataset.len());
        for r in per_identity {
            let (v, f) = r?;
            voices.push(v);
            faces.push(f);
        }
        let eligible = (0..dataset.len())
            .filter(|i| !voices[*i].is_empty() && !faces[*i].is_empty())
            .collect();
        Ok(Self {
            dataset,
            scale: pair.space.scale,
            voices,
            faces,
            eligible,
        })
    }

    fn gender_of(&self, identity: usize) -> Gender {
        self.dataset.identities()[identity].gender
    }

    fn joint_voice(&self, identity: usize, sample_idxs: &[usize]) -> Result<Embedding> {
        let refs: Vec<&Embedding> = sample_idxs
            .iter()
            .map(|s| &self.voices[identity][*s])
            .collect();
        joint_of_embeddings(&refs, self.scale)
    }

    fn joint_face(&self, identity: usize, sample_idxs: &[usize]) -> Result<Embedding> {
        let refs: Vec<&Embedding> = sample_idxs
            .iter()
            .map(|s| &self.faces[identity][*s])
            .collect();
        joint_of_embeddings(&refs, self.scale)
    }
}

/// Draws `amount` sample indices from `0..pool`: without replacement when
/// the pool suffices, with replacement (and a warning) otherwise.
fn select_indices(rng: &mut ChaCha8Rng, pool: usize, amount: usize, what: &str) -> Vec<usize> {
    if amount <= pool {
        index::sample(rng, pool, amount).into_vec()
    } else {
        log::warn!("identity has {pool} {what} but {amount} were requested; drawing with replacement");
        (0..amount).map(|_| rng.random_range(0..pool)).collect()
    }
}

struct InstanceSpec {
    query_identity: usize,
    voice_samples: Vec<usize>,
    /// (identity, face sample indices) per candidate, in candidate order.
    candidates: Vec<(usize, Vec<usize>)>,
    true_position: usize,
}

fn evaluate_matching_with(
    embedded: &EmbeddedDataset<'_>,
    opts: &MatchingOptions,
    mode: Mode,
) -> Result<MatchingResult> {
    opts.validate()?;
    let n = opts.num_candidates;
    let male_pool: Vec<usize> = embedded
        .eligible
        .iter()
        .copied()
        .filter(|i| embedded.gender_of(*i) == Gender::Male)
        .collect();
    let female_pool: Vec<usize> = embedded
        .eligible
        .iter()
        .copied()
        .filter(|i| embedded.gender_of(*i) == Gender::Female)
        .collect();

    if embedded.eligible.len() < n {
        return Err(Error::InsufficientData(format!(
            "1:{n} matching needs {n} identities with both modalities, found {}",
            embedded.eligible.len()
        )));
    }
    if opts.stratify_gender && (male_pool.is_empty() || female_pool.is_empty()) {
        return Err(Error::InsufficientData(
            "gender stratification needs identities of both genders".into(),
        ));
    }
    if opts.same_gender_candidates {
        for (pool, label) in [(&male_pool, "male"), (&female_pool, "female")] {
            if !pool.is_empty() && pool.len() < n {
                return Err(Error::InsufficientData(format!(
                    "same-gender 1:{n} matching needs {n} {label} identities, found {}",
                    pool.len()
                )));
            }
        }
    }

    // Sequential instance construction; see the draw-order contract in the
    // doc comment of `evaluate_matching`.
    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(opts.seed, seeds::stream::EVALUATION));
    let mut instances = Vec::with_capacity(opts.num_instances);
    for k in 0..opts.num_instances {
        let query_pool: &[usize] = if opts.stratify_gender {
            if k % 2 == 0 {
                &male_pool
            } else {
                &female_pool
            }
        } else {
            &embedded.eligible
        };
        let query_pos = rng.random_range(0..query_pool.len());
        let query_identity = query_pool[query_pos];

        let distractor_pool: &[usize] = if opts.same_gender_candidates {
            if embedded.gender_of(query_identity) == Gender::Male {
                &male_pool
            } else {
                &female_pool
            }
        } else {
            &embedded.eligible
        };
        // Position of the query inside the distractor pool, so the sampled
        // indices can skip over it.
        let skip = distractor_pool
            .iter()
            .position(|i| *i == query_identity)
            .expect("query identity belongs to its own pool");
        let distractors: Vec<usize> = index::sample(&mut rng, distractor_pool.len() - 1, n - 1)
            .into_iter()
            .map(|x| distractor_pool[if x >= skip { x + 1 } else { x }])
            .collect();

        let true_position = rng.random_range(0..n);
        let voice_samples = select_indices(
            &mut rng,
            embedded.voices[query_identity].len(),
            opts.voices_per_query,
            "voices",
        );
        let mut candidates = Vec::with_capacity(n);
        let mut next_distractor = 0;
        for pos in 0..n {
            let identity = if pos == true_position {
                query_identity
            } else {
                let d = distractors[next_distractor];
                next_distractor += 1;
                d
            };
            let faces = select_indices(
                &mut rng,
                embedded.faces[identity].len(),
                opts.faces_per_candidate,
                "faces",
            );
            candidates.push((identity, faces));
        }
        instances.push(InstanceSpec {
            query_identity,
            voice_samples,
            candidates,
            true_position,
        });
    }

    // Score instances in parallel; each outcome is an integer, so the
    // aggregation below is order-free.
    let outcomes: Vec<Result<bool>> = map(mode, instances.len(), |i| {
        let spec = &instances[i];
        let query = embedded.joint_voice(spec.query_identity, &spec.voice_samples)?;
        let candidate_embs: Vec<Embedding> = spec
            .candidates
            .iter()
            .map(|(identity, faces)| embedded.joint_face(*identity, faces))
            .collect::<Result<_>>()?;
        Ok(best_match(&query, &candidate_embs)? == spec.true_position)
    });

    let mut correct = 0usize;
    let mut per_gender_correct = [0usize; 2];
    let mut per_gender_total = [0usize; 2];
    for (spec, outcome) in instances.iter().zip(outcomes) {
        let ok = outcome?;
        let g = usize::from(embedded.gender_of(spec.query_identity) == Gender::Female);
        per_gender_total[g] += 1;
        if ok {
            correct += 1;
            per_gender_correct[g] += 1;
        }
    }
    let accuracy = correct as f64 / opts.num_instances as f64;
    let by_gender = opts.stratify_gender.then(|| GenderAccuracy {
        male: per_gender_correct[0] as f64 / per_gender_total[0] as f64,
        female: per_gender_correct[1] as f64 / per_gender_total[1] as f64,
    });
    let confidence = if n == 2 {
        let design = TestDesign {
            num_identities: embedded.eligible.len() as u64,
            num_tuples: opts.num_instances as u64,
        };
        Some(round_to_4_significant(confidence_t(design)?))
    } else {
        None
    };
    Ok(MatchingResult {
        accuracy,
        num_instances: opts.num_instances,
        by_gender,
        confidence_t: confidence,
    })
}

fn evaluate_retrieval_with(
    embedded: &EmbeddedDataset<'_>,
    opts: &RetrievalOptions,
    mode: Mode,
) -> Result<RetrievalResult> {
    opts.validate()?;
    if embedded.eligible.len() < opts.gallery_identities {
        return Err(Error::InsufficientData(format!(
            "retrieval needs {} identities with both modalities, found {}",
            opts.gallery_identities,
            embedded.eligible.len()
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(opts.seed, seeds::stream::EVALUATION));
    let chosen: Vec<usize> = index::sample(&mut rng, embedded.eligible.len(), opts.gallery_identities)
        .into_iter()
        .map(|i| embedded.eligible[i])
        .collect();

    // Gallery entries in identity order: either every selected face on its
    // own or one joint entry per identity.
    let mut entry_specs: Vec<(usize, Vec<usize>)> = Vec::new();
    for &identity in &chosen {
        let faces = select_indices(
            &mut rng,
            embedded.faces[identity].len(),
            opts.faces_per_identity,
            "faces",
        );
        if opts.join_gallery_faces {
            entry_specs.push((identity, faces));
        } else {
            for f in faces {
                entry_specs.push((identity, vec![f]));
            }
        }
    }
    let mut query_specs: Vec<(usize, Vec<usize>)> = Vec::new();
    for &identity in &chosen {
        for _ in 0..opts.queries_per_identity {
            let voices = select_indices(
                &mut rng,
                embedded.voices[identity].len(),
                opts.voices_per_query,
                "voices",
            );
            query_specs.push((identity, voices));
        }
    }

    let gallery: Vec<Embedding> = {
        let built: Vec<Result<Embedding>> = map(mode, entry_specs.len(), |i| {
            let (identity, faces) = &entry_specs[i];
            embedded.joint_face(*identity, faces)
        });
        built.into_iter().collect::<Result<_>>()?
    };
    let gallery_owner: Vec<usize> = entry_specs.iter().map(|(identity, _)| *identity).collect();

    let aps: Vec<Result<f64>> = map(mode, query_specs.len(), |qi| {
        let (identity, voices) = &query_specs[qi];
        let query = embedded.joint_voice(*identity, voices)?;
        let order = rank_by_similarity(&query, &gallery)?;
        let flags: Vec<bool> = order.iter().map(|g| gallery_owner[*g] == *identity).collect();
        average_precision(&flags).ok_or(Error::NoRelevantItems { query_index: qi })
    });
    let aps: Vec<f64> = aps.into_iter().collect::<Result<_>>()?;

    let map_score = exec::pairwise_sum(&aps) / aps.len() as f64;
    let mut per_identity_ap = BTreeMap::new();
    for (&identity, chunk) in chosen
        .iter()
        .zip(aps.chunks(opts.queries_per_identity))
    {
        let mean = exec::pairwise_sum(chunk) / chunk.len() as f64;
        per_identity_ap.insert(embedded.dataset.identities()[identity].id.clone(), mean);
    }
    Ok(RetrievalResult {
        map_score,
        num_queries: query_specs.len(),
        per_identity_ap,
    })
}

fn individual_test_with(
    embedded: &EmbeddedDataset<'_>,
    target_id: &str,
    repeats: usize,
    seed: u64,
    mode: Mode,
) -> Result<f64> {
    let target = embedded
        .dataset
        .index_of(target_id)
        .ok_or_else(|| Error::UnknownIdentity(target_id.to_string()))?;
    if repeats == 0 {
        return Err(Error::InvalidConfig(
            "individual test needs at least 1 repeat".into(),
        ));
    }
    if !embedded.eligible.contains(&target) {
        return Err(Error::InsufficientData(format!(
            "identity '{target_id}' lacks voice or face samples"
        )));
    }
    let opponents: Vec<usize> = embedded
        .eligible
        .iter()
        .copied()
        .filter(|i| *i != target)
        .collect();
    if opponents.is_empty() {
        return Err(Error::InsufficientData(
            "individual test needs at least one other identity".into(),
        ));
    }

    let correct_per_opponent: Vec<Result<usize>> = map(mode, opponents.len(), |oi| {
        let opponent = opponents[oi];
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive_indexed(
            seed,
            seeds::stream::EVALUATION,
            opponent as u64,
        ));
        let mut correct = 0usize;
        for _ in 0..repeats {
            let true_position = rng.random_range(0..2usize);
            let voice = rng.random_range(0..embedded.voices[target].len());
            let target_face = rng.random_range(0..embedded.faces[target].len());
            let opponent_face = rng.random_range(0..embedded.faces[opponent].len());
            let query = &embedded.voices[target][voice];
            let (first, second) = if true_position == 0 {
                (
                    &embedded.faces[target][target_face],
                    &embedded.faces[opponent][opponent_face],
                )
            } else {
                (
                    &embedded.faces[opponent][opponent_face],
                    &embedded.faces[target][target_face],
                )
            };
            let pred = best_match(query, &[first.clone(), second.clone()])?;
            if pred == true_position {
                correct += 1;
            }
        }
        Ok(correct)
    });
    let mut total = 0usize;
    for c in correct_per_opponent {
        total += c?;
    }
    Ok(total as f64 / (repeats * opponents.len()) as f64)
}
