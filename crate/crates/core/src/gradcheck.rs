//! Finite-difference verification of the analytic gradients.
//!
//! The oracle side only ever calls `forward`, so it stays independent of
//! the hand-derived backward pass it is checking.

use crate::attention::ImageFeatures;
use crate::error::Result;
use crate::model::{
    backward, forward, BranchInput, Instance, LossSpec, ModelDims, ModelKind, ModelParams,
};
use crate::tensor::{Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Configuration of one gradient check run.
#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub dims: ModelDims,
    /// Exemplar pairs per instance.
    pub k: usize,
    /// Random instances to test.
    pub samples: usize,
    pub seed: u64,
    /// Central-difference step.
    pub epsilon: f64,
    /// Maximum allowed relative error.
    pub tolerance: f64,
    /// Check the quintuplet objective instead of the triplet one.
    pub quintuplet: bool,
}

impl GradCheckConfig {
    /// The check the acceptance criteria pin: R=8, D=16, A=8, C=4,
    /// eps=1e-5, tol=1e-4, five seeded instances.
    pub fn acceptance(seed: u64) -> Self {
        Self {
            dims: ModelDims {
                regions: 8,
                feature_dim: 16,
                hidden_dim: 8,
                classes: 4,
            },
            k: 1,
            samples: 5,
            seed,
            epsilon: 1e-5,
            tolerance: 1e-4,
            quintuplet: false,
        }
    }
}

/// Worst relative error observed in one parameter block.
#[derive(Debug, Clone)]
pub struct BlockReport {
    pub name: &'static str,
    pub max_rel_err: f64,
}

/// Outcome of a gradient check over all samples.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub model: &'static str,
    pub blocks: Vec<BlockReport>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_err(&self) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.max_rel_err)
            .fold(0.0, f64::max)
    }
}

/// Owned random inputs for one instance; `instance()` borrows them.
pub struct InstanceData {
    pub target: (ImageFeatures, Vector),
    pub label: usize,
    pub support: Vec<(ImageFeatures, Vector)>,
    pub oppose: Vec<(ImageFeatures, Vector)>,
    pub quint: Option<Vec<(ImageFeatures, Vector)>>,
}

impl InstanceData {
    pub fn random(rng: &mut impl Rng, dims: &ModelDims, k: usize, quintuplet: bool) -> Self {
        let item = |rng: &mut dyn rand::RngCore| {
            let features = ImageFeatures::new(
                Matrix::from_vec(
                    dims.regions,
                    dims.feature_dim,
                    (0..dims.regions * dims.feature_dim)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect(),
                )
                .unwrap(),
            );
            let question = Vector::from_vec(
                (0..dims.feature_dim)
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect(),
            );
            (features, question)
        };
        let target = item(rng);
        let label = rng.random_range(0..dims.classes);
        let support = (0..k).map(|_| item(rng)).collect();
        let oppose = (0..k).map(|_| item(rng)).collect();
        let quint = quintuplet.then(|| (0..4).map(|_| item(rng)).collect());
        Self {
            target,
            label,
            support,
            oppose,
            quint,
        }
    }

    pub fn instance(&self) -> Instance<'_> {
        Instance {
            target: BranchInput {
                features: &self.target.0,
                question: &self.target.1,
            },
            label: self.label,
            support: self
                .support
                .iter()
                .map(|(f, q)| BranchInput {
                    features: f,
                    question: q,
                })
                .collect(),
            oppose: self
                .oppose
                .iter()
                .map(|(f, q)| BranchInput {
                    features: f,
                    question: q,
                })
                .collect(),
            quint: self.quint.as_ref().map(|items| {
                [
                    BranchInput {
                        features: &items[0].0,
                        question: &items[0].1,
                    },
                    BranchInput {
                        features: &items[1].0,
                        question: &items[1].1,
                    },
                    BranchInput {
                        features: &items[2].0,
                        question: &items[2].1,
                    },
                    BranchInput {
                        features: &items[3].0,
                        question: &items[3].1,
                    },
                ]
            }),
        }
    }
}

/// Central differences can only be compared away from the hinge kinks,
/// so redraw instances that land too close to one.
fn is_generic(
    data: &InstanceData,
    params: &ModelParams,
    spec: &LossSpec,
    alpha: f64,
) -> Result<bool> {
    let instance = data.instance();
    let trace = forward(&instance, params, spec)?;
    if trace.probs.at(data.label) < 1e-9 {
        return Ok(false);
    }
    let s = &trace.target.map;
    if spec.use_quintuplet {
        if let Some(q) = &trace.quint {
            let d: Vec<f64> = q
                .iter()
                .map(|t| crate::tensor::squared_distance(s, &t.map).unwrap())
                .collect();
            let margins = [
                spec.loss.alpha1 + d[0] - d[1],
                spec.loss.alpha2 + d[1] - d[2],
                spec.loss.alpha3 + d[2] - d[3],
            ];
            if margins.iter().any(|m| m.abs() < 1e-3) {
                return Ok(false);
            }
        }
    } else {
        for (sp, sm) in trace.support.iter().zip(&trace.oppose) {
            let d_plus = crate::tensor::squared_distance(s, &sp.map)?;
            let d_minus = crate::tensor::squared_distance(s, &sm.map)?;
            if (alpha + d_plus - d_minus).abs() < 1e-3 {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

/// Check freshly initialised parameters of the given model kind.
pub fn grad_check_model(kind: ModelKind, cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let params = ModelParams::init(&cfg.dims, kind, cfg.seed.wrapping_add(1));
    grad_check_params(kind, &params, cfg)
}

/// Check the given parameters against central finite differences on
/// `cfg.samples` random instances. The relative error denominator is
/// `max(|analytic|, |numeric|, 1e-8)`.
pub fn grad_check_params(
    kind: ModelKind,
    params: &ModelParams,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let mut spec = LossSpec::new(kind);
    spec.use_quintuplet = cfg.quintuplet;
    let needs_exemplars = kind.needs_exemplars();
    let k = if needs_exemplars { cfg.k.max(1) } else { 0 };

    let block_names: Vec<&'static str> = params.blocks().iter().map(|(n, _)| *n).collect();
    let mut worst: Vec<f64> = vec![0.0; block_names.len()];

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for _ in 0..cfg.samples {
        // Redraw until the instance sits away from every kink.
        let mut data = InstanceData::random(&mut rng, &cfg.dims, k, cfg.quintuplet && needs_exemplars);
        let mut tries = 0;
        while !is_generic(&data, params, &spec, spec.loss.alpha)? {
            data = InstanceData::random(&mut rng, &cfg.dims, k, cfg.quintuplet && needs_exemplars);
            tries += 1;
            if tries > 200 {
                return Err(crate::error::Error::InvalidArgument {
                    op: "grad_check",
                    msg: "could not draw an instance away from hinge kinks".into(),
                });
            }
        }
        let instance = data.instance();
        let trace = forward(&instance, params, &spec)?;
        let analytic = backward(&instance, params, &spec, &trace)?;

        for (block_idx, (_, block)) in params.blocks().iter().enumerate() {
            for elem in 0..block.len() {
                let numeric = {
                    let mut plus = params.clone();
                    plus.blocks_mut()[block_idx].1[elem] += cfg.epsilon;
                    let up = forward(&data.instance(), &plus, &spec)?.loss;
                    let mut minus = params.clone();
                    minus.blocks_mut()[block_idx].1[elem] -= cfg.epsilon;
                    let down = forward(&data.instance(), &minus, &spec)?.loss;
                    (up - down) / (2.0 * cfg.epsilon)
                };
                let a = analytic.blocks()[block_idx].1[elem];
                let denom = a.abs().max(numeric.abs()).max(1e-8);
                let rel = (a - numeric).abs() / denom;
                if rel > worst[block_idx] {
                    worst[block_idx] = rel;
                }
            }
        }
    }

    let blocks: Vec<BlockReport> = block_names
        .into_iter()
        .zip(worst)
        .map(|(name, max_rel_err)| BlockReport { name, max_rel_err })
        .collect();
    let passed = blocks.iter().all(|b| b.max_rel_err <= cfg.tolerance);
    Ok(GradCheckReport {
        model: kind.name(),
        blocks,
        tolerance: cfg.tolerance,
        passed,
    })
}
