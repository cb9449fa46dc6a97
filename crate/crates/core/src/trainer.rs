//! RMSProp training of all model variants and evaluation against the
//! planted ground truth.

use crate::data::{Dataset, DatasetItem};
use crate::error::{Error, Result};
use crate::exemplar::{
    build_exemplar_set, cluster_quantize, pick_opposing_excluding, pick_quintuplet,
    ClusterOrdering, ExemplarSet, KdIndex, QuintupletConfig, QuintupletIds,
};
use crate::losses::LossConfig;
use crate::metrics::{rank_correlation, vqa_accuracy, Answer};
use crate::model::{
    forward, forward_backward, BranchInput, Checkpoint, Instance, LossParts, LossSpec, ModelDims,
    ModelKind, ModelParams,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Training configuration. Optimizer defaults follow the two groups the
/// method separates: classification (alpha 0.99, lr 4e-4) and triplet
/// (alpha 0.9, lr 1e-3).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub model: ModelKind,
    pub epochs: usize,
    pub seed: u64,
    pub batch: usize,
    pub lr_cls: f64,
    pub lr_triplet: f64,
    pub rms_alpha_cls: f64,
    pub rms_alpha_triplet: f64,
    pub rms_eps: f64,
    pub decay_a: f64,
    pub decay_b: f64,
    /// Supporting/opposing exemplars per item (1..=5).
    pub k_exemplars: usize,
    /// Cluster rank of the opposing pick.
    pub oppose_offset: usize,
    /// Clusters for the coarse quantisation; `None` derives one cluster
    /// per 40 items, capped at 50.
    pub n_clusters: Option<usize>,
    /// Attention hidden width.
    pub hidden_dim: usize,
    pub loss: LossConfig,
    /// Replace the triplet term by the quintuplet loss (experimental).
    pub use_quintuplet: bool,
    /// Neighbour pool for quintuplet bucketing; `None` uses
    /// `min(2000, n-1)`.
    pub quintuplet_pool: Option<usize>,
    /// Treat `nu` as an update-frequency ratio instead of a loss weight:
    /// round(nu) triplet-only RMSProp steps per classification step.
    pub nu_frequency: bool,
}

impl TrainConfig {
    pub fn new(model: ModelKind, epochs: usize, seed: u64) -> Self {
        Self {
            model,
            epochs,
            seed,
            batch: 200,
            lr_cls: 4e-4,
            lr_triplet: 1e-3,
            rms_alpha_cls: 0.99,
            rms_alpha_triplet: 0.9,
            rms_eps: 1e-8,
            decay_a: 1500.0,
            decay_b: 1250.0,
            k_exemplars: 1,
            oppose_offset: 20,
            n_clusters: None,
            hidden_dim: 64,
            loss: LossConfig::default(),
            use_quintuplet: false,
            quintuplet_pool: None,
            nu_frequency: false,
        }
    }

    fn clusters_for(&self, n: usize) -> usize {
        self.n_clusters.unwrap_or((n / 40).clamp(1, 50)).min(n)
    }

    fn loss_spec(&self) -> LossSpec {
        LossSpec {
            kind: self.model,
            loss: self.loss.clone(),
            use_quintuplet: self.use_quintuplet,
            parts: LossParts::Both,
        }
    }

    /// DAN with `nu == 0` has no triplet gradient at all, so exemplar
    /// retrieval is skipped and the run is structurally the baseline.
    fn fetches_exemplars(&self) -> bool {
        match self.model {
            ModelKind::Baseline => false,
            ModelKind::Dan => self.use_quintuplet || self.loss.nu != 0.0,
            ModelKind::Dcn { .. } => true,
        }
    }
}

/// One RMSProp update over aligned slices:
/// `state = alpha * state + (1 - alpha) * grad^2`,
/// `param -= lr * grad / (sqrt(state) + eps)`.
pub fn rmsprop_step(
    param: &mut [f64],
    grad: &[f64],
    state: &mut [f64],
    lr: f64,
    alpha: f64,
    eps: f64,
) -> Result<()> {
    if grad.iter().any(|g| g.is_nan()) {
        return Err(Error::NonFinite { layer: "gradient" });
    }
    for ((p, &g), s) in param.iter_mut().zip(grad).zip(state.iter_mut()) {
        *s = alpha * *s + (1.0 - alpha) * g * g;
        *p -= lr * g / (s.sqrt() + eps);
    }
    Ok(())
}

/// Per-epoch multiplicative learning-rate decay: `exp(ln(0.1) / (a*b))`.
pub fn decay_factor(a: f64, b: f64) -> f64 {
    (0.1f64.ln() / (a * b)).exp()
}

/// One history row per epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
    pub triplet_satisfaction: f64,
    pub rank_correlation: f64,
}

/// Training history; serialises to `epoch,loss,acc,triplet_sat,rankcorr`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss,acc,triplet_sat,rankcorr\n");
        for r in &self.records {
            out.push_str(&format!(
                "{},{:.17e},{:.17e},{:.17e},{:.17e}\n",
                r.epoch, r.loss, r.accuracy, r.triplet_satisfaction, r.rank_correlation
            ));
        }
        out
    }
}

fn mix_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut x = seed
        ^ a.wrapping_mul(0x9e3779b97f4a7c15)
        ^ b.wrapping_mul(0xd1b54a32d192ed03);
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58476d1ce4e5b9);
    x ^= x >> 27;
    x
}

enum Exemplars {
    None,
    Pairs(ExemplarSet),
    Quint(QuintupletIds),
}

fn instance_for<'a>(
    dataset: &'a Dataset,
    item: &'a DatasetItem,
    exemplars: &Exemplars,
) -> Result<Instance<'a>> {
    let branch = |id: u32| -> Result<BranchInput<'a>> {
        let it = dataset.item_by_id(id).ok_or(Error::InvalidArgument {
            op: "train",
            msg: format!("exemplar id {id} missing from dataset"),
        })?;
        Ok(BranchInput {
            features: &it.image_features,
            question: &it.question_embedding,
        })
    };
    let target = BranchInput {
        features: &item.image_features,
        question: &item.question_embedding,
    };
    let mut instance = Instance::bare(target, item.answer as usize);
    match exemplars {
        Exemplars::None => {}
        Exemplars::Pairs(set) => {
            instance.support = set.supports.iter().map(|&id| branch(id)).collect::<Result<_>>()?;
            instance.oppose = set.opposes.iter().map(|&id| branch(id)).collect::<Result<_>>()?;
        }
        Exemplars::Quint(q) => {
            instance.quint = Some([
                branch(q.p_plus)?,
                branch(q.p_plusplus)?,
                branch(q.n_minusminus)?,
                branch(q.n_minus)?,
            ]);
        }
    }
    Ok(instance)
}

fn retrieve_exemplars(
    dataset: &Dataset,
    index: &KdIndex,
    ordering: Option<&ClusterOrdering>,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<Vec<Exemplars>> {
    if !cfg.fetches_exemplars() {
        return Ok(dataset.items.iter().map(|_| Exemplars::None).collect());
    }
    let mut out = Vec::with_capacity(dataset.len());
    if cfg.use_quintuplet {
        let pool = cfg
            .quintuplet_pool
            .unwrap_or_else(|| (dataset.len().saturating_sub(1)).min(2000));
        for item in &dataset.items {
            let qcfg = QuintupletConfig {
                pool_size: pool,
                n_buckets: 20,
                seed: mix_seed(cfg.seed, epoch as u64, u64::from(item.id)),
            };
            out.push(Exemplars::Quint(pick_quintuplet(index, &qcfg, item.id)?));
        }
    } else {
        let ordering = ordering.expect("pair retrieval needs a cluster ordering");
        for item in &dataset.items {
            let seed = mix_seed(cfg.seed, epoch as u64, u64::from(item.id));
            let set = build_exemplar_set(
                index,
                ordering,
                item.id,
                cfg.k_exemplars,
                cfg.oppose_offset.min(ordering.n_clusters() - 1),
                seed,
            )?;
            out.push(Exemplars::Pairs(set));
        }
    }
    Ok(out)
}

fn accumulate_grads(acc: &mut ModelParams, grads: &ModelParams) {
    let gblocks: Vec<Vec<f64>> = grads.blocks().iter().map(|(_, b)| b.to_vec()).collect();
    for ((_, a), g) in acc.blocks_mut().into_iter().zip(gblocks) {
        for (x, y) in a.iter_mut().zip(g) {
            *x += y;
        }
    }
}

fn scale_grads(acc: &mut ModelParams, factor: f64) {
    for (_, block) in acc.blocks_mut() {
        for x in block {
            *x *= factor;
        }
    }
}

fn apply_rmsprop(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut ModelParams,
    lr: f64,
    alpha: f64,
    eps: f64,
) -> Result<()> {
    let gblocks: Vec<Vec<f64>> = grads.blocks().iter().map(|(_, b)| b.to_vec()).collect();
    let mut sblocks = state.blocks_mut();
    for (((_, p), g), (_, s)) in params
        .blocks_mut()
        .into_iter()
        .zip(&gblocks)
        .zip(sblocks.iter_mut())
    {
        rmsprop_step(p, g, s, lr, alpha, eps)?;
    }
    Ok(())
}

/// Gradients of one batch under `spec`, averaged over the batch, plus
/// the per-batch statistics.
struct BatchStats {
    grads: ModelParams,
    loss: f64,
    correct: usize,
    satisfied_sum: f64,
    satisfied_count: usize,
    rankcorr_sum: f64,
    rankcorr_count: usize,
}

fn batch_pass(
    dataset: &Dataset,
    batch_ids: &[usize],
    exemplars: &[Exemplars],
    params: &ModelParams,
    spec: &LossSpec,
) -> Result<BatchStats> {
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    let mut correct = 0;
    let mut satisfied_sum = 0.0;
    let mut satisfied_count = 0;
    let mut rankcorr_sum = 0.0;
    let mut rankcorr_count = 0;
    for &idx in batch_ids {
        let item = &dataset.items[idx];
        let instance = instance_for(dataset, item, &exemplars[idx])?;
        let out = forward_backward(&instance, params, spec)?;
        accumulate_grads(&mut grads, &out.grads);
        loss += out.loss;
        let pred = argmax(out.probs.as_slice());
        if pred == item.answer as usize {
            correct += 1;
        }
        if let Some(sat) = out.triplet_satisfied {
            satisfied_sum += sat;
            satisfied_count += 1;
        }
        if let Some(reference) = &item.reference_attention {
            rankcorr_sum += rank_correlation(&out.final_map, reference)?;
            rankcorr_count += 1;
        }
    }
    let inv = 1.0 / batch_ids.len() as f64;
    scale_grads(&mut grads, inv);
    loss *= inv;
    Ok(BatchStats {
        grads,
        loss,
        correct,
        satisfied_sum,
        satisfied_count,
        rankcorr_sum,
        rankcorr_count,
    })
}

fn argmax(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Train a model on the dataset using the prebuilt exemplar index.
/// Deterministic: the same config and seed give bitwise-identical
/// parameters and history.
pub fn train(
    dataset: &Dataset,
    index: &KdIndex,
    cfg: &TrainConfig,
) -> Result<(ModelParams, History)> {
    if dataset.is_empty() {
        return Err(Error::EmptyInput { op: "train" });
    }
    if cfg.k_exemplars == 0 || cfg.k_exemplars >= dataset.len() {
        return Err(Error::InvalidArgument {
            op: "train",
            msg: format!("k_exemplars {} out of range", cfg.k_exemplars),
        });
    }
    let dims = ModelDims {
        regions: dataset.regions,
        feature_dim: dataset.feature_dim,
        hidden_dim: cfg.hidden_dim,
        classes: dataset.classes,
    };
    let mut params = ModelParams::init(&dims, cfg.model, mix_seed(cfg.seed, 1, 0));
    let spec = cfg.loss_spec();

    let ordering = if cfg.fetches_exemplars() && !cfg.use_quintuplet {
        Some(cluster_quantize(
            index.store(),
            cfg.clusters_for(dataset.len()),
            mix_seed(cfg.seed, 2, 0),
        )?)
    } else {
        None
    };

    let mut rms_cls = params.zeros_like();
    let mut rms_triplet = params.zeros_like();
    let mut lr_cls = cfg.lr_cls;
    let mut lr_triplet = cfg.lr_triplet;
    let decay = decay_factor(cfg.decay_a, cfg.decay_b);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, 3, 0));
    let frequency_mode =
        cfg.nu_frequency && cfg.model == ModelKind::Dan && !cfg.use_quintuplet && cfg.loss.nu >= 1.0;

    let mut history = History::default();
    for epoch in 0..cfg.epochs {
        let exemplars = retrieve_exemplars(dataset, index, ordering.as_ref(), cfg, epoch)?;
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut shuffle_rng);

        let mut epoch_loss = 0.0;
        let mut epoch_correct = 0usize;
        let mut epoch_sat = (0.0, 0usize);
        let mut epoch_rc = (0.0, 0usize);
        for (batch_no, batch_ids) in order.chunks(cfg.batch.max(1)).enumerate() {
            if frequency_mode {
                // nu triplet-only updates, then one classification step.
                let rounds = cfg.loss.nu.round().max(1.0) as usize;
                let tspec = LossSpec {
                    parts: LossParts::TripletOnly,
                    ..spec.clone()
                };
                for _ in 0..rounds {
                    let stats = batch_pass(dataset, batch_ids, &exemplars, &params, &tspec)?;
                    if stats.loss.is_nan() {
                        return Err(Error::Diverged {
                            epoch,
                            batch: batch_no,
                        });
                    }
                    apply_rmsprop(
                        &mut params,
                        &stats.grads,
                        &mut rms_triplet,
                        lr_triplet,
                        cfg.rms_alpha_triplet,
                        cfg.rms_eps,
                    )?;
                }
                let cspec = LossSpec {
                    parts: LossParts::CrossOnly,
                    ..spec.clone()
                };
                let stats = batch_pass(dataset, batch_ids, &exemplars, &params, &cspec)?;
                if stats.loss.is_nan() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: batch_no,
                    });
                }
                apply_rmsprop(
                    &mut params,
                    &stats.grads,
                    &mut rms_cls,
                    lr_cls,
                    cfg.rms_alpha_cls,
                    cfg.rms_eps,
                )?;
                epoch_loss += stats.loss * batch_ids.len() as f64;
                epoch_correct += stats.correct;
                epoch_sat.0 += stats.satisfied_sum;
                epoch_sat.1 += stats.satisfied_count;
                epoch_rc.0 += stats.rankcorr_sum;
                epoch_rc.1 += stats.rankcorr_count;
            } else {
                let stats = batch_pass(dataset, batch_ids, &exemplars, &params, &spec)?;
                if stats.loss.is_nan() {
                    return Err(Error::Diverged {
                        epoch,
                        batch: batch_no,
                    });
                }
                apply_rmsprop(
                    &mut params,
                    &stats.grads,
                    &mut rms_cls,
                    lr_cls,
                    cfg.rms_alpha_cls,
                    cfg.rms_eps,
                )?;
                epoch_loss += stats.loss * batch_ids.len() as f64;
                epoch_correct += stats.correct;
                epoch_sat.0 += stats.satisfied_sum;
                epoch_sat.1 += stats.satisfied_count;
                epoch_rc.0 += stats.rankcorr_sum;
                epoch_rc.1 += stats.rankcorr_count;
            }
        }
        lr_cls *= decay;
        lr_triplet *= decay;
        history.records.push(EpochRecord {
            epoch,
            loss: epoch_loss / dataset.len() as f64,
            accuracy: epoch_correct as f64 / dataset.len() as f64,
            triplet_satisfaction: if epoch_sat.1 > 0 {
                epoch_sat.0 / epoch_sat.1 as f64
            } else {
                0.0
            },
            rank_correlation: if epoch_rc.1 > 0 {
                epoch_rc.0 / epoch_rc.1 as f64
            } else {
                0.0
            },
        });
    }
    Ok((params, history))
}

/// Evaluation result: answer accuracy, attention rank correlation, and
/// the per-class accuracy breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub rank_correlation: f64,
    pub per_class_accuracy: Vec<f64>,
    pub n_items: usize,
}

/// Exemplar source for evaluating DCN models on held-out items.
pub struct EvalContext<'a> {
    pub train_data: &'a Dataset,
    pub index: &'a KdIndex,
    pub cfg: &'a TrainConfig,
}

const EVAL_SALT: u64 = 0xE7A1;

/// Evaluate a trained model. Baseline and DAN classify through the plain
/// attention map; DCN builds its differential context from exemplars
/// retrieved out of the training data (held-out items query the index by
/// their joint embedding).
pub fn evaluate(
    eval_data: &Dataset,
    params: &ModelParams,
    kind: ModelKind,
    ctx: &EvalContext<'_>,
) -> Result<EvalReport> {
    if eval_data.is_empty() {
        return Err(Error::EmptyInput { op: "evaluate" });
    }
    // DAN evaluates exactly like the baseline: the exemplars only shape
    // training.
    let eval_kind = match kind {
        ModelKind::Dcn { .. } => kind,
        _ => ModelKind::Baseline,
    };
    let mut spec = LossSpec::new(eval_kind);
    spec.loss = ctx.cfg.loss.clone();
    let ordering = match eval_kind {
        ModelKind::Dcn { .. } => Some(cluster_quantize(
            ctx.index.store(),
            ctx.cfg.clusters_for(ctx.train_data.len()),
            mix_seed(ctx.cfg.seed, 2, 0),
        )?),
        _ => None,
    };

    let per_item: Vec<Result<(f64, Option<f64>, u32, bool)>> = eval_data
        .items
        .par_iter()
        .map(|item| evaluate_item(item, eval_data, params, &spec, ordering.as_ref(), ctx))
        .collect();

    let classes = eval_data.classes;
    let mut acc_sum = 0.0;
    let mut rc = (0.0, 0usize);
    let mut class_hits = vec![(0.0, 0usize); classes];
    for res in per_item {
        let (acc, rank, answer, _correct) = res?;
        acc_sum += acc;
        if let Some(r) = rank {
            rc.0 += r;
            rc.1 += 1;
        }
        let slot = &mut class_hits[answer as usize];
        slot.0 += acc;
        slot.1 += 1;
    }
    Ok(EvalReport {
        accuracy: acc_sum / eval_data.len() as f64,
        rank_correlation: if rc.1 > 0 { rc.0 / rc.1 as f64 } else { 0.0 },
        per_class_accuracy: class_hits
            .iter()
            .map(|(s, n)| if *n > 0 { s / *n as f64 } else { 0.0 })
            .collect(),
        n_items: eval_data.len(),
    })
}

fn evaluate_item(
    item: &DatasetItem,
    eval_data: &Dataset,
    params: &ModelParams,
    spec: &LossSpec,
    ordering: Option<&ClusterOrdering>,
    ctx: &EvalContext<'_>,
) -> Result<(f64, Option<f64>, u32, bool)> {
    let exemplars = match spec.kind {
        ModelKind::Dcn { .. } => {
            let ordering = ordering.expect("DCN eval builds an ordering");
            let k = ctx.cfg.k_exemplars;
            // Query by id when the item is part of the index (training
            // split), otherwise by its embedding point.
            let in_index = ctx.index.store().ids().contains(&item.id)
                && ctx.train_data.item_by_id(item.id).is_some();
            let supports = if in_index {
                ctx.index.knn(item.id, k)?
            } else {
                ctx.index.knn_point(item.joint_embedding.as_slice(), k)?
            };
            let seed = mix_seed(ctx.cfg.seed, EVAL_SALT, u64::from(item.id));
            let offset = ctx
                .cfg
                .oppose_offset
                .min(ordering.n_clusters().saturating_sub(1));
            let opposes = if in_index {
                pick_opposing_excluding(ordering, item.id, offset, k, seed, &supports)?
            } else {
                pick_opposing_for_cluster(
                    ordering,
                    ordering.nearest_cluster(item.joint_embedding.as_slice())?,
                    offset,
                    k,
                    seed,
                    &supports,
                )?
            };
            Exemplars::Pairs(ExemplarSet {
                target: item.id,
                supports,
                opposes,
            })
        }
        _ => Exemplars::None,
    };
    // Exemplar branches always come from the training data.
    let source = match spec.kind {
        ModelKind::Dcn { .. } => ctx.train_data,
        _ => eval_data,
    };
    let instance = instance_for_eval(source, item, &exemplars)?;
    let trace = forward(&instance, params, spec)?;
    let pred = argmax(trace.probs.as_slice()) as u32;
    let acc = vqa_accuracy(&Answer::Class(pred), &item.annotated);
    let rank = match &item.reference_attention {
        Some(reference) => Some(rank_correlation(&trace.final_map, reference)?),
        None => None,
    };
    Ok((acc, rank, item.answer, pred == item.answer))
}

/// Like `instance_for` but the target may live outside the exemplar
/// source dataset.
fn instance_for_eval<'a>(
    source: &'a Dataset,
    item: &'a DatasetItem,
    exemplars: &Exemplars,
) -> Result<Instance<'a>> {
    match exemplars {
        Exemplars::None => Ok(Instance::bare(
            BranchInput {
                features: &item.image_features,
                question: &item.question_embedding,
            },
            item.answer as usize,
        )),
        _ => {
            let mut instance = instance_for(source, source.items.first().unwrap(), exemplars)?;
            instance.target = BranchInput {
                features: &item.image_features,
                question: &item.question_embedding,
            };
            instance.label = item.answer as usize;
            Ok(instance)
        }
    }
}

/// `pick_opposing` for a query that is not a member of the quantisation:
/// the home cluster is supplied directly.
fn pick_opposing_for_cluster(
    ordering: &ClusterOrdering,
    home: u32,
    offset: usize,
    count: usize,
    seed: u64,
    exclude: &[u32],
) -> Result<Vec<u32>> {
    // Reuse the member-based picker through any member of the home
    // cluster; fall back over spill ranks when the cluster is empty.
    if let Some(&anchor) = ordering.members(home).first() {
        return pick_opposing_excluding(ordering, anchor, offset, count, seed, exclude);
    }
    for rank in 1..ordering.n_clusters() {
        let cluster = ordering.ordering_from(home)[rank];
        if let Some(&anchor) = ordering.members(cluster).first() {
            return pick_opposing_excluding(ordering, anchor, offset, count, seed, exclude);
        }
    }
    Err(Error::NoEligibleIds)
}

/// Persistable snapshot of a trained model.
pub fn checkpoint(dataset: &Dataset, cfg: &TrainConfig, params: ModelParams) -> Checkpoint {
    Checkpoint {
        kind: cfg.model,
        dims: ModelDims {
            regions: dataset.regions,
            feature_dim: dataset.feature_dim,
            hidden_dim: cfg.hidden_dim,
            classes: dataset.classes,
        },
        params,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmsprop_zero_grad_keeps_param_and_decays_state() {
        let mut p = [1.5];
        let mut s = [4.0];
        rmsprop_step(&mut p, &[0.0], &mut s, 0.1, 0.9, 1e-8).unwrap();
        assert_eq!(p[0], 1.5);
        assert!((s[0] - 3.6).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_single_step_from_zero_state() {
        let (lr, alpha, eps, g) = (0.01, 0.99, 1e-8, 0.3);
        let mut p = [2.0];
        let mut s = [0.0];
        rmsprop_step(&mut p, &[g], &mut s, lr, alpha, eps).unwrap();
        let expect = 2.0 - lr * g / (((1.0 - alpha) * g * g).sqrt() + eps);
        assert!((p[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn rmsprop_constant_grad_step_approaches_lr() {
        let (lr, alpha, eps) = (0.01, 0.9, 1e-12);
        let g = -0.7;
        let mut p = [0.0];
        let mut s = [0.0];
        let mut prev = p[0];
        let mut step = 0.0;
        for _ in 0..500 {
            rmsprop_step(&mut p, &[g], &mut s, lr, alpha, eps).unwrap();
            step = p[0] - prev;
            prev = p[0];
        }
        // Steady state: param moves by lr * sign(-g) each step.
        assert!((step - lr).abs() < 1e-6);
    }

    #[test]
    fn rmsprop_nan_grad_errors() {
        let mut p = [0.0];
        let mut s = [0.0];
        assert!(rmsprop_step(&mut p, &[f64::NAN], &mut s, 0.1, 0.9, 1e-8).is_err());
    }

    #[test]
    fn decay_factor_paper_values() {
        let f = decay_factor(1500.0, 1250.0);
        let expect = (0.1f64.ln() / 1_875_000.0).exp();
        assert_eq!(f, expect);
        assert!((f - 0.999_998_771_955_371_1).abs() < 1e-12);
        assert!(f < 1.0);
        // a*b = 1 forces the factor to 0.1.
        assert!((decay_factor(1.0, 1.0) - 0.1).abs() < 1e-16);
    }

    #[test]
    fn history_csv_shape() {
        let mut h = History::default();
        h.records.push(EpochRecord {
            epoch: 0,
            loss: 1.0,
            accuracy: 0.5,
            triplet_satisfaction: 0.25,
            rank_correlation: 0.1,
        });
        let csv = h.to_csv();
        assert!(csv.starts_with("epoch,loss,acc,triplet_sat,rankcorr\n"));
        assert_eq!(csv.lines().count(), 2);
    }
}
