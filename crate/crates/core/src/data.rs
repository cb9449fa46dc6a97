//! Synthetic dataset with planted ground truth.
//!
//! Items are drawn from `C` latent concepts. A concept fixes the
//! discriminative region, a question-embedding prototype and a joint-
//! embedding prototype (so same-concept items are mutual near
//! neighbours). The answer class of an item is planted as a signature
//! vector in the feature row of the concept's region: the question never
//! reveals the answer, attending the right region does.

use crate::attention::{AttentionParams, AnswerParams, ImageFeatures};
use crate::error::{Error, Result};
use crate::exemplar::EmbeddingStore;
use crate::metrics::AnnotatedAnswers;
use crate::model::{ModelDims, ModelParams};
use crate::tensor::{Matrix, Vector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Generator configuration.
#[derive(Debug, Clone)]
pub struct GenConfig {
    pub n_items: usize,
    pub regions: usize,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub classes: usize,
    /// Clusters used downstream by the coarse quantisation.
    pub n_clusters: usize,
    /// Feature noise level; question/joint noise scale with it.
    pub noise_sigma: f64,
    /// Probability that one annotator entry is replaced by a wrong class.
    pub answer_corruption: f64,
    pub seed: u64,
}

impl GenConfig {
    /// Desk-scale defaults: R=16, D=32, E=16, C=8, and one cluster per
    /// 40 items capped at 50.
    pub fn new(n_items: usize, seed: u64) -> Self {
        Self {
            n_items,
            regions: 16,
            feature_dim: 32,
            embed_dim: 16,
            classes: 8,
            n_clusters: (n_items / 40).clamp(1, 50),
            noise_sigma: 0.5,
            answer_corruption: 0.1,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.n_items > 0
            && self.regions > 0
            && self.feature_dim > 0
            && self.embed_dim > 0
            && self.classes > 0
            && self.classes <= self.n_items
            && self.n_clusters >= 1
            && self.n_clusters <= self.n_items
            && self.noise_sigma >= 0.0
            && (0.0..=1.0).contains(&self.answer_corruption);
        if !ok {
            return Err(Error::InvalidArgument {
                op: "generate",
                msg: format!("invalid dimensions in {self:?}"),
            });
        }
        Ok(())
    }
}

/// Fraction of reference-attention mass spread off the planted region.
pub const REFERENCE_SMOOTHING: f64 = 0.05;

/// The ground truth the generator planted; enough to reconstruct an
/// analytically correct model.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantedMeta {
    /// Concept of each item, aligned with item ids 0..n.
    pub concept_of_item: Vec<u32>,
    /// Discriminative region of each concept.
    pub region_of_concept: Vec<u32>,
    /// `C x D` question prototypes.
    pub question_prototypes: Matrix,
    /// `C x E` joint-embedding prototypes.
    pub joint_prototypes: Matrix,
    /// `C x D` answer signatures.
    pub signatures: Matrix,
    /// Gain applied inside the signature-energy saliency.
    pub saliency_gain: f64,
}

/// One synthetic item.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub id: u32,
    pub image_features: ImageFeatures,
    pub question_embedding: Vector,
    pub answer: u32,
    pub joint_embedding: Vector,
    /// Distribution over regions; present for every generated item.
    pub reference_attention: Option<Vector>,
    pub annotated: AnnotatedAnswers,
}

/// A generated dataset plus its planted ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub regions: usize,
    pub feature_dim: usize,
    pub embed_dim: usize,
    pub classes: usize,
    pub items: Vec<DatasetItem>,
    pub planted: Option<PlantedMeta>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Joint embeddings as a store for the exemplar index.
    pub fn embedding_store(&self) -> Result<EmbeddingStore> {
        let n = self.items.len();
        let mut data = Vec::with_capacity(n * self.embed_dim);
        let mut ids = Vec::with_capacity(n);
        for item in &self.items {
            ids.push(item.id);
            data.extend_from_slice(item.joint_embedding.as_slice());
        }
        EmbeddingStore::new(ids, Matrix::from_vec(n, self.embed_dim, data)?)
    }

    pub fn item_by_id(&self, id: u32) -> Option<&DatasetItem> {
        // Generated ids are dense 0..n; fall back to a scan otherwise.
        self.items
            .get(id as usize)
            .filter(|item| item.id == id)
            .or_else(|| self.items.iter().find(|item| item.id == id))
    }

    /// First `n_train` items and the rest as two datasets.
    pub fn split_at(&self, n_train: usize) -> (Dataset, Dataset) {
        let head = Dataset {
            regions: self.regions,
            feature_dim: self.feature_dim,
            embed_dim: self.embed_dim,
            classes: self.classes,
            items: self.items[..n_train.min(self.items.len())].to_vec(),
            planted: self.planted.clone(),
        };
        let tail = Dataset {
            regions: self.regions,
            feature_dim: self.feature_dim,
            embed_dim: self.embed_dim,
            classes: self.classes,
            items: self.items[n_train.min(self.items.len())..].to_vec(),
            planted: self.planted.clone(),
        };
        (head, tail)
    }
}

fn gaussian_vec(rng: &mut impl Rng, n: usize, sigma: f64) -> Vec<f64> {
    (0..n)
        .map(|_| sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Signature-energy saliency: `softmax_r(sum_a tanh(gain * g_r . sig_a))`.
/// The reference attention's off-region mass follows it so that the map
/// is tie-free and reconstructible from the planted structure.
pub fn signature_energy(features: &ImageFeatures, signatures: &Matrix, gain: f64) -> Vector {
    let regions = features.regions();
    let mut energy = Vector::zeros(regions);
    for r in 0..regions {
        let row = features.row(r);
        let mut acc = 0.0;
        for a in 0..signatures.rows() {
            let dot: f64 = row
                .iter()
                .zip(signatures.row(a))
                .map(|(x, y)| x * y)
                .sum();
            acc += (gain * dot).tanh();
        }
        *energy.at_mut(r) = acc;
    }
    crate::tensor::softmax(&energy).expect("non-empty energy")
}

/// Generate the planted synthetic dataset.
pub fn generate(cfg: &GenConfig) -> Result<Dataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let c = cfg.classes;
    let d = cfg.feature_dim;
    let e = cfg.embed_dim;
    let r_count = cfg.regions;
    let saliency_gain = 4.0 / d as f64;

    // Concept-level structure. Regions are distinct while they fit.
    let mut region_pool: Vec<u32> = (0..r_count as u32).collect();
    region_pool.shuffle(&mut rng);
    let region_of_concept: Vec<u32> = (0..c)
        .map(|i| {
            if c <= r_count {
                region_pool[i]
            } else {
                region_pool[rng.random_range(0..r_count)]
            }
        })
        .collect();
    let question_prototypes = Matrix::from_vec(c, d, gaussian_vec(&mut rng, c * d, 1.0))?;
    let joint_prototypes = Matrix::from_vec(c, e, gaussian_vec(&mut rng, c * e, 1.0))?;
    let signatures = Matrix::from_vec(c, d, gaussian_vec(&mut rng, c * d, 1.0))?;

    // Balanced concept assignment, then shuffled.
    let mut concept_of_item: Vec<u32> = (0..cfg.n_items).map(|i| (i % c) as u32).collect();
    concept_of_item.shuffle(&mut rng);

    let side_noise = 0.2 * cfg.noise_sigma;
    let mut items = Vec::with_capacity(cfg.n_items);
    for id in 0..cfg.n_items {
        let concept = concept_of_item[id] as usize;
        let region = region_of_concept[concept] as usize;
        let answer = rng.random_range(0..c as u32);

        // Image: noise everywhere, answer signature added at the
        // concept's region.
        let mut image = gaussian_vec(&mut rng, r_count * d, cfg.noise_sigma);
        for (slot, &sig) in image[region * d..(region + 1) * d]
            .iter_mut()
            .zip(signatures.row(answer as usize))
        {
            *slot += sig;
        }
        let image_features = ImageFeatures::new(Matrix::from_vec(r_count, d, image)?);

        let question_embedding = Vector::from_vec(
            question_prototypes
                .row(concept)
                .iter()
                .zip(gaussian_vec(&mut rng, d, side_noise))
                .map(|(p, n)| p + n)
                .collect(),
        );
        let joint_embedding = Vector::from_vec(
            joint_prototypes
                .row(concept)
                .iter()
                .zip(gaussian_vec(&mut rng, e, side_noise))
                .map(|(p, n)| p + n)
                .collect(),
        );

        // Reference attention: dominant mass on the planted region, the
        // smoothing mass shaped by signature energy (tie-free).
        let saliency = signature_energy(&image_features, &signatures, saliency_gain);
        let mut reference = crate::tensor::scale(&saliency, REFERENCE_SMOOTHING);
        *reference.at_mut(region) += 1.0 - REFERENCE_SMOOTHING;

        // Ten annotator answers: true class, each independently
        // corrupted to a uniformly random other class.
        let annotated = AnnotatedAnswers::from_classes(
            &(0..AnnotatedAnswers::COUNT)
                .map(|_| {
                    if c > 1 && rng.random::<f64>() < cfg.answer_corruption {
                        let wrong = rng.random_range(0..c as u32 - 1);
                        if wrong >= answer {
                            wrong + 1
                        } else {
                            wrong
                        }
                    } else {
                        answer
                    }
                })
                .collect::<Vec<u32>>(),
        )?;

        items.push(DatasetItem {
            id: id as u32,
            image_features,
            question_embedding,
            answer,
            joint_embedding,
            reference_attention: Some(reference),
            annotated,
        });
    }

    let dataset = Dataset {
        regions: r_count,
        feature_dim: d,
        embed_dim: e,
        classes: c,
        items,
        planted: Some(PlantedMeta {
            concept_of_item,
            region_of_concept,
            question_prototypes,
            joint_prototypes,
            signatures,
            saliency_gain,
        }),
    };
    check_planted_structure(&dataset)?;
    Ok(dataset)
}

/// Sanity check at generation time: same-concept items must be closer
/// in joint space than different-concept items on average.
fn check_planted_structure(dataset: &Dataset) -> Result<()> {
    let planted = dataset.planted.as_ref().expect("generated dataset");
    let probe = dataset.items.len().min(256);
    let mut within = (0.0, 0usize);
    let mut across = (0.0, 0usize);
    for i in 0..probe {
        for j in (i + 1)..probe {
            let d = crate::tensor::squared_distance(
                &dataset.items[i].joint_embedding,
                &dataset.items[j].joint_embedding,
            )?
            .sqrt();
            if planted.concept_of_item[i] == planted.concept_of_item[j] {
                within.0 += d;
                within.1 += 1;
            } else {
                across.0 += d;
                across.1 += 1;
            }
        }
    }
    if within.1 == 0 || across.1 == 0 {
        return Ok(());
    }
    let within_mean = within.0 / within.1 as f64;
    let across_mean = across.0 / across.1 as f64;
    if within_mean >= across_mean {
        return Err(Error::PlantedStructure {
            within: within_mean,
            across: across_mean,
        });
    }
    Ok(())
}

/// Parameters constructed analytically from the planted structure: one
/// hidden unit per class detecting its signature, so attention follows
/// signature energy and peaks at the planted region; the answer head is
/// the matched filter of the signatures.
pub fn oracle_params(dataset: &Dataset, sharpness: f64) -> Result<ModelParams> {
    let planted = dataset.planted.as_ref().ok_or(Error::InvalidArgument {
        op: "oracle_params",
        msg: "dataset carries no planted structure".into(),
    })?;
    let d = dataset.feature_dim;
    let c = dataset.classes;
    let mut w_i = Matrix::zeros(d, c);
    for a in 0..c {
        for (dim, &sig) in planted.signatures.row(a).iter().enumerate() {
            *w_i.at_mut(dim, a) = planted.saliency_gain * sig;
        }
    }
    let mut w_a = Matrix::zeros(d, c);
    for j in 0..c {
        for (dim, &sig) in planted.signatures.row(j).iter().enumerate() {
            *w_a.at_mut(dim, j) = sig / d as f64;
        }
    }
    Ok(ModelParams {
        attention: AttentionParams {
            w_i,
            w_q: Matrix::zeros(d, c),
            b_q: Vector::zeros(c),
            w_p: Vector::from_vec(vec![sharpness; c]),
            b_p: 0.0,
        },
        answer: AnswerParams {
            w_a,
            b_a: Vector::zeros(c),
        },
        dcn: None,
    })
}

/// Dims implied by a dataset for a given attention width.
pub fn dataset_dims(dataset: &Dataset, hidden_dim: usize) -> ModelDims {
    ModelDims {
        regions: dataset.regions,
        feature_dim: dataset.feature_dim,
        hidden_dim,
        classes: dataset.classes,
    }
}
