//! Full model: shared attention network applied to the target and its
//! exemplars, the answer head, and hand-derived reverse-mode gradients
//! for every trainable parameter under every loss variant.

use crate::attention::{
    attend, attention_forward, AttentionParams, AttentionTrace, AnswerParams, ImageFeatures,
};
use crate::dcn::{
    normalize_context, normalize_context_backward, project_backward, reject_backward, DcnMode,
    DcnParams, DcnScaling, DcnVariant,
};
use crate::error::{Error, Result};
use crate::losses::{
    cross_entropy, joint_loss, quintuplet_grads, quintuplet_loss, triplet_grads, triplet_loss,
    LossConfig,
};
use crate::tensor::{self, softmax, Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Problem dimensions shared by params, data and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub regions: usize,
    pub feature_dim: usize,
    pub hidden_dim: usize,
    pub classes: usize,
}

/// Which pathway classifies and which auxiliary loss applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Attention + cross-entropy only.
    Baseline,
    /// Joint cross-entropy + triplet objective over attention maps.
    Dan,
    /// Classification through the differential-context attention.
    Dcn { mode: DcnMode, variant: DcnVariant },
}

impl ModelKind {
    pub fn needs_exemplars(&self) -> bool {
        !matches!(self, ModelKind::Baseline)
    }

    /// Stable identifier used by the CLI and checkpoints.
    pub fn name(&self) -> &'static str {
        match self {
            ModelKind::Baseline => "baseline",
            ModelKind::Dan => "dan",
            ModelKind::Dcn { mode: DcnMode::Add, variant: DcnVariant::V1 } => "dcn-add-v1",
            ModelKind::Dcn { mode: DcnMode::Add, variant: DcnVariant::V2 } => "dcn-add-v2",
            ModelKind::Dcn { mode: DcnMode::Mul, variant: DcnVariant::V1 } => "dcn-mul-v1",
            ModelKind::Dcn { mode: DcnMode::Mul, variant: DcnVariant::V2 } => "dcn-mul-v2",
        }
    }

    pub fn parse(name: &str) -> Option<ModelKind> {
        Some(match name {
            "baseline" => ModelKind::Baseline,
            "dan" => ModelKind::Dan,
            "dcn-add-v1" => ModelKind::Dcn { mode: DcnMode::Add, variant: DcnVariant::V1 },
            "dcn-add-v2" => ModelKind::Dcn { mode: DcnMode::Add, variant: DcnVariant::V2 },
            "dcn-mul-v1" => ModelKind::Dcn { mode: DcnMode::Mul, variant: DcnVariant::V1 },
            "dcn-mul-v2" => ModelKind::Dcn { mode: DcnMode::Mul, variant: DcnVariant::V2 },
            _ => return None,
        })
    }

    /// All six variants in CLI order.
    pub fn all() -> [ModelKind; 6] {
        [
            ModelKind::Baseline,
            ModelKind::Dan,
            ModelKind::Dcn { mode: DcnMode::Add, variant: DcnVariant::V1 },
            ModelKind::Dcn { mode: DcnMode::Add, variant: DcnVariant::V2 },
            ModelKind::Dcn { mode: DcnMode::Mul, variant: DcnVariant::V1 },
            ModelKind::Dcn { mode: DcnMode::Mul, variant: DcnVariant::V2 },
        ]
    }
}

/// Which loss terms participate. `Both` is the weighted joint loss; the
/// other two exist for the update-frequency reading of `nu`, where the
/// trainer alternates triplet-only and classification-only steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossParts {
    Both,
    CrossOnly,
    /// Triplet term alone, unweighted (the frequency itself is the weight).
    TripletOnly,
}

/// Loss selection for one forward/backward call.
#[derive(Debug, Clone)]
pub struct LossSpec {
    pub kind: ModelKind,
    pub loss: LossConfig,
    /// Replace the DAN triplet term by the quintuplet hinge sum.
    /// Experimental; requires quintuplet branches on the instance.
    pub use_quintuplet: bool,
    pub parts: LossParts,
}

impl LossSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            loss: LossConfig::default(),
            use_quintuplet: false,
            parts: LossParts::Both,
        }
    }
}

/// Every learnable weight of the model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub attention: AttentionParams,
    pub answer: AnswerParams,
    pub dcn: Option<DcnParams>,
}

impl ModelParams {
    /// Seeded init: every weight and bias uniform in
    /// `[-1/sqrt(fan_in), +1/sqrt(fan_in)]`; DCN scalings start at 1 so
    /// v2 coincides with v1 until trained.
    pub fn init(dims: &ModelDims, kind: ModelKind, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = dims.feature_dim;
        let a = dims.hidden_dim;
        let c = dims.classes;
        let mut draw = |n: usize, bound: f64| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-bound..bound)).collect()
        };
        let b_d = 1.0 / (d as f64).sqrt();
        let b_a = 1.0 / (a as f64).sqrt();
        let attention = AttentionParams {
            w_i: Matrix::from_vec(d, a, draw(d * a, b_d)).unwrap(),
            w_q: Matrix::from_vec(d, a, draw(d * a, b_d)).unwrap(),
            b_q: Vector::from_vec(draw(a, b_d)),
            w_p: Vector::from_vec(draw(a, b_a)),
            b_p: draw(1, b_a)[0],
        };
        let answer = AnswerParams {
            w_a: Matrix::from_vec(d, c, draw(d * c, b_d)).unwrap(),
            b_a: Vector::from_vec(draw(c, b_d)),
        };
        let dcn = match kind {
            ModelKind::Dcn { mode, variant } => Some(match variant {
                DcnVariant::V1 => DcnParams::fixed(mode, dims.regions),
                DcnVariant::V2 => DcnParams::learned(mode, dims.regions),
            }),
            _ => None,
        };
        Self {
            attention,
            answer,
            dcn,
        }
    }

    /// Same shapes, all entries zero. Used as a gradient container and
    /// as optimizer state.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, block) in out.blocks_mut() {
            for x in block {
                *x = 0.0;
            }
        }
        out
    }

    fn dcn_trainable(&self) -> bool {
        matches!(
            &self.dcn,
            Some(p) if p.variant == DcnVariant::V2
        )
    }

    /// Trainable parameter blocks in a fixed order. v1 DCN scalings are
    /// frozen and therefore not included.
    pub fn blocks(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![
            ("w_i", self.attention.w_i.as_slice()),
            ("w_q", self.attention.w_q.as_slice()),
            ("b_q", self.attention.b_q.as_slice()),
            ("w_p", self.attention.w_p.as_slice()),
            ("b_p", std::slice::from_ref(&self.attention.b_p)),
            ("w_a", self.answer.w_a.as_slice()),
            ("b_a", self.answer.b_a.as_slice()),
        ];
        if self.dcn_trainable() {
            let p = self.dcn.as_ref().unwrap();
            out.push(("dcn_w1", scaling_slice(&p.w1)));
            out.push(("dcn_w2", scaling_slice(&p.w2)));
        }
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let trainable = self.dcn_trainable();
        let mut out: Vec<(&'static str, &mut [f64])> = vec![
            ("w_i", self.attention.w_i.as_mut_slice()),
            ("w_q", self.attention.w_q.as_mut_slice()),
            ("b_q", self.attention.b_q.as_mut_slice()),
            ("w_p", self.attention.w_p.as_mut_slice()),
            ("b_p", std::slice::from_mut(&mut self.attention.b_p)),
            ("w_a", self.answer.w_a.as_mut_slice()),
            ("b_a", self.answer.b_a.as_mut_slice()),
        ];
        if trainable {
            let p = self.dcn.as_mut().unwrap();
            out.push(("dcn_w1", scaling_slice_mut(&mut p.w1)));
            out.push(("dcn_w2", scaling_slice_mut(&mut p.w2)));
        }
        out
    }

    /// Squared L2 norm over all trainable parameters.
    pub fn norm_sq(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|(_, b)| b.iter())
            .map(|x| x * x)
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .flat_map(|(_, b)| b.iter())
            .all(|x| x.is_finite())
    }
}

fn scaling_slice(s: &DcnScaling) -> &[f64] {
    match s {
        DcnScaling::Diagonal(v) => v.as_slice(),
        DcnScaling::Full(m) => m.as_slice(),
    }
}

fn scaling_slice_mut(s: &mut DcnScaling) -> &mut [f64] {
    match s {
        DcnScaling::Diagonal(v) => v.as_mut_slice(),
        DcnScaling::Full(m) => m.as_mut_slice(),
    }
}

/// One attention branch: region features plus the question embedding.
#[derive(Debug, Clone, Copy)]
pub struct BranchInput<'a> {
    pub features: &'a ImageFeatures,
    pub question: &'a Vector,
}

/// Inputs for one forward/backward call: the target item, its label and
/// the exemplar branches required by the selected model.
#[derive(Debug)]
pub struct Instance<'a> {
    pub target: BranchInput<'a>,
    pub label: usize,
    /// Supporting exemplars, nearest first; empty for the baseline.
    pub support: Vec<BranchInput<'a>>,
    /// Opposing exemplars, paired positionally with `support`.
    pub oppose: Vec<BranchInput<'a>>,
    /// Quintuplet branches `[p+, p++, n--, n-]` when that loss is active.
    pub quint: Option<[BranchInput<'a>; 4]>,
}

impl<'a> Instance<'a> {
    pub fn bare(target: BranchInput<'a>, label: usize) -> Self {
        Self {
            target,
            label,
            support: Vec::new(),
            oppose: Vec::new(),
            quint: None,
        }
    }
}

/// All intermediates of one forward pass; enough to run the backward
/// pass or to read the loss for finite differencing.
pub struct ForwardTrace {
    pub target: AttentionTrace,
    pub support: Vec<AttentionTrace>,
    pub oppose: Vec<AttentionTrace>,
    pub quint: Option<[AttentionTrace; 4]>,
    /// DCN intermediates, present only for that pathway.
    pub dcn: Option<DcnTrace>,
    /// Final attention used for classification: `s` or the DCN `d`.
    pub final_map: Vector,
    pub v_att: Vector,
    pub fused: Vector,
    pub probs: Vector,
    pub cross: f64,
    pub cross_clamped: bool,
    /// Triplet (or quintuplet) term before the `nu` weight.
    pub aux: f64,
    pub loss: f64,
    /// Fraction of (support, oppose) pairs whose margin is satisfied.
    pub triplet_satisfied: Option<f64>,
}

pub struct DcnTrace {
    pub r_plus: Vector,
    pub r_minus: Vector,
    /// tanh input and output (equal when tanh is disabled).
    pub pre: Vector,
    pub t: Vector,
    pub raw: Vector,
}

fn check_pairs(instance: &Instance<'_>) -> Result<usize> {
    let k = instance.support.len();
    if k == 0 || instance.oppose.len() != k {
        return Err(Error::InvalidArgument {
            op: "forward",
            msg: format!(
                "model needs paired exemplars, got {} support / {} oppose",
                k,
                instance.oppose.len()
            ),
        });
    }
    Ok(k)
}

/// Forward pass through every active branch; computes the loss without
/// touching any gradient code, so finite differences of this function
/// are an independent oracle for `backward`.
pub fn forward(instance: &Instance<'_>, params: &ModelParams, spec: &LossSpec) -> Result<ForwardTrace> {
    let target = attention_forward(
        instance.target.features,
        instance.target.question,
        &params.attention,
    )?;
    let s = &target.map;

    let mut support = Vec::new();
    let mut oppose = Vec::new();
    let mut quint = None;
    let mut dcn_trace = None;
    let mut aux = 0.0;
    let mut triplet_satisfied = None;

    let final_map: Vector = match spec.kind {
        ModelKind::Baseline => s.clone(),
        ModelKind::Dan => {
            if spec.use_quintuplet {
                let branches = instance.quint.as_ref().ok_or(Error::InvalidArgument {
                    op: "forward",
                    msg: "quintuplet loss needs quintuplet branches".into(),
                })?;
                let mut traces = Vec::with_capacity(4);
                for b in branches {
                    traces.push(attention_forward(b.features, b.question, &params.attention)?);
                }
                let maps: Vec<&Vector> = traces.iter().map(|t| &t.map).collect();
                aux = quintuplet_loss(
                    s,
                    maps[0],
                    maps[1],
                    maps[2],
                    maps[3],
                    &spec.loss,
                    params.norm_sq(),
                )?;
                let mut it = traces.into_iter();
                quint = Some([
                    it.next().unwrap(),
                    it.next().unwrap(),
                    it.next().unwrap(),
                    it.next().unwrap(),
                ]);
            } else {
                let k = check_pairs(instance)?;
                let mut total = 0.0;
                let mut satisfied = 0usize;
                for i in 0..k {
                    let sp = attention_forward(
                        instance.support[i].features,
                        instance.support[i].question,
                        &params.attention,
                    )?;
                    let sm = attention_forward(
                        instance.oppose[i].features,
                        instance.oppose[i].question,
                        &params.attention,
                    )?;
                    let t = triplet_loss(s, &sp.map, &sm.map, spec.loss.alpha)?;
                    if t == 0.0 {
                        satisfied += 1;
                    }
                    total += t;
                    support.push(sp);
                    oppose.push(sm);
                }
                aux = total / k as f64;
                triplet_satisfied = Some(satisfied as f64 / k as f64);
            }
            s.clone()
        }
        ModelKind::Dcn { mode, .. } => {
            let k = check_pairs(instance)?;
            let dcn = params.dcn.as_ref().ok_or(Error::InvalidArgument {
                op: "forward",
                msg: "DCN model without DCN parameters".into(),
            })?;
            let regions = s.len();
            let mut r_plus = Vector::zeros(regions);
            let mut r_minus = Vector::zeros(regions);
            let mut satisfied = 0usize;
            for i in 0..k {
                let sp = attention_forward(
                    instance.support[i].features,
                    instance.support[i].question,
                    &params.attention,
                )?;
                let sm = attention_forward(
                    instance.oppose[i].features,
                    instance.oppose[i].question,
                    &params.attention,
                )?;
                let supp = crate::dcn::supporting_context(s, &sp.map, &sm.map)?;
                let opp = crate::dcn::opposing_context(s, &sp.map, &sm.map)?;
                for r in 0..regions {
                    *r_plus.at_mut(r) += supp.at(r) / k as f64;
                    *r_minus.at_mut(r) += opp.at(r) / k as f64;
                }
                if triplet_loss(s, &sp.map, &sm.map, spec.loss.alpha)? == 0.0 {
                    satisfied += 1;
                }
                support.push(sp);
                oppose.push(sm);
            }
            triplet_satisfied = Some(satisfied as f64 / k as f64);
            let pre = tensor::sub(&dcn.w1.apply(&r_plus)?, &dcn.w2.apply(&r_minus)?)?;
            let t = if dcn.use_tanh {
                tensor::tanh_elem(&pre)
            } else {
                pre.clone()
            };
            let raw = match mode {
                DcnMode::Mul => {
                    let factor: Vec<f64> = t
                        .as_slice()
                        .iter()
                        .map(|&ti| if dcn.mul_identity { 1.0 + ti } else { ti })
                        .collect();
                    tensor::hadamard(s, &Vector::from_vec(factor))?
                }
                DcnMode::Add => tensor::add(s, &t)?,
            };
            let d = normalize_context(&raw, mode)?;
            if !d.is_finite() {
                return Err(Error::NonFinite {
                    layer: "differential_context",
                });
            }
            dcn_trace = Some(DcnTrace {
                r_plus,
                r_minus,
                pre,
                t,
                raw,
            });
            d
        }
    };

    let v_att = attend(instance.target.features, &final_map)?;
    let z = crate::attention::answer_logits(&v_att, instance.target.question, &params.answer)?;
    let probs = softmax(&z)?;
    let ce = cross_entropy(&probs, instance.label, spec.loss.scale_by_classes)?;
    let loss = match (spec.kind, spec.parts) {
        (ModelKind::Dan, LossParts::Both) => joint_loss(ce.value, aux, spec.loss.nu),
        (ModelKind::Dan, LossParts::TripletOnly) => aux,
        _ => ce.value,
    };
    if !loss.is_finite() {
        return Err(Error::NonFinite { layer: "loss" });
    }
    let fused = tensor::add(&v_att, instance.target.question)?;
    Ok(ForwardTrace {
        target,
        support,
        oppose,
        quint,
        dcn: dcn_trace,
        final_map,
        v_att,
        fused,
        probs,
        cross: ce.value,
        cross_clamped: ce.clamped,
        aux,
        loss,
        triplet_satisfied,
    })
}

/// Backward through one attention branch: pushes the gradient on its
/// map into the shared attention parameter gradients.
fn branch_backward(
    branch: &BranchInput<'_>,
    trace: &AttentionTrace,
    map_grad: &Vector,
    params: &AttentionParams,
    grads: &mut AttentionParams,
) {
    let regions = trace.map.len();
    let hidden_dim = params.hidden_dim();
    let s = &trace.map;
    // Softmax backward.
    let dot_ss: f64 = (0..regions).map(|r| map_grad.at(r) * s.at(r)).sum();
    let mut dq = vec![0.0; hidden_dim];
    for r in 0..regions {
        let dlogit = s.at(r) * (map_grad.at(r) - dot_ss);
        if dlogit == 0.0 {
            continue;
        }
        grads.b_p += dlogit;
        let g_row = branch.features.row(r);
        let h_row = trace.hidden.row(r);
        for a in 0..hidden_dim {
            let h = h_row[a];
            *grads.w_p.at_mut(a) += dlogit * h;
            let du = dlogit * params.w_p.at(a) * (1.0 - h * h);
            if du == 0.0 {
                continue;
            }
            dq[a] += du;
            for (d, &gd) in g_row.iter().enumerate() {
                *grads.w_i.at_mut(d, a) += gd * du;
            }
        }
    }
    let f = branch.question;
    for a in 0..hidden_dim {
        let dqa = dq[a];
        if dqa == 0.0 {
            continue;
        }
        *grads.b_q.at_mut(a) += dqa;
        for d in 0..f.len() {
            *grads.w_q.at_mut(d, a) += f.at(d) * dqa;
        }
    }
}

/// Reverse-mode gradients for the forward pass in `trace`.
pub fn backward(
    instance: &Instance<'_>,
    params: &ModelParams,
    spec: &LossSpec,
    trace: &ForwardTrace,
) -> Result<ModelParams> {
    let mut grads = params.zeros_like();
    let classes = params.answer.classes();
    let feature_dim = params.attention.feature_dim();
    let regions = trace.target.map.len();
    let kappa = if spec.loss.scale_by_classes {
        1.0 / classes as f64
    } else {
        1.0
    };

    // Cross-entropy + softmax backward: dz_j = kappa * (p_j - y_j).
    // The classification path carries no gradient in triplet-only steps.
    let mut dz = Vector::zeros(classes);
    if spec.parts != LossParts::TripletOnly {
        for j in 0..classes {
            let y = if j == instance.label { 1.0 } else { 0.0 };
            *dz.at_mut(j) = kappa * (trace.probs.at(j) - y);
        }
    }

    // Answer head.
    let mut dv = Vector::zeros(feature_dim);
    for d in 0..feature_dim {
        let fused_d = trace.fused.at(d);
        let mut acc = 0.0;
        for j in 0..classes {
            let dzj = dz.at(j);
            *grads.answer.w_a.at_mut(d, j) += fused_d * dzj;
            acc += params.answer.w_a.at(d, j) * dzj;
        }
        *dv.at_mut(d) = acc;
    }
    for j in 0..classes {
        *grads.answer.b_a.at_mut(j) += dz.at(j);
    }

    // attend backward: dP_r = g_r . dv.
    let mut d_final = Vector::zeros(regions);
    for r in 0..regions {
        let g_row = instance.target.features.row(r);
        let mut acc = 0.0;
        for (d, &gd) in g_row.iter().enumerate() {
            acc += gd * dv.at(d);
        }
        *d_final.at_mut(r) = acc;
    }

    // Gradient arriving at the target map and at each exemplar map.
    let mut ds = Vector::zeros(regions);
    let k = trace.support.len();
    let mut d_support: Vec<Vector> = (0..k).map(|_| Vector::zeros(regions)).collect();
    let mut d_oppose: Vec<Vector> = (0..k).map(|_| Vector::zeros(regions)).collect();

    match spec.kind {
        ModelKind::Baseline | ModelKind::Dan => {
            for r in 0..regions {
                *ds.at_mut(r) += d_final.at(r);
            }
        }
        ModelKind::Dcn { mode, .. } => {
            let dcn = params.dcn.as_ref().unwrap();
            let dtrace = trace.dcn.as_ref().unwrap();
            let draw = normalize_context_backward(&dtrace.raw, mode, &d_final)?;
            let s = &trace.target.map;
            let mut dt = Vector::zeros(regions);
            match mode {
                DcnMode::Mul => {
                    for r in 0..regions {
                        let factor = if dcn.mul_identity {
                            1.0 + dtrace.t.at(r)
                        } else {
                            dtrace.t.at(r)
                        };
                        *ds.at_mut(r) += draw.at(r) * factor;
                        *dt.at_mut(r) = draw.at(r) * s.at(r);
                    }
                }
                DcnMode::Add => {
                    for r in 0..regions {
                        *ds.at_mut(r) += draw.at(r);
                        *dt.at_mut(r) = draw.at(r);
                    }
                }
            }
            let dx = if dcn.use_tanh {
                let mut out = Vector::zeros(regions);
                for r in 0..regions {
                    let t = dtrace.t.at(r);
                    *out.at_mut(r) = dt.at(r) * (1.0 - t * t);
                }
                out
            } else {
                dt
            };
            // x = W1 r+ - W2 r-.
            let mut dr_plus = Vector::zeros(regions);
            let mut dr_minus = Vector::zeros(regions);
            scaling_backward(
                &dcn.w1,
                &dtrace.r_plus,
                &dx,
                1.0,
                grads.dcn.as_mut().map(|g| &mut g.w1),
                &mut dr_plus,
            );
            scaling_backward(
                &dcn.w2,
                &dtrace.r_minus,
                &dx,
                -1.0,
                grads.dcn.as_mut().map(|g| &mut g.w2),
                &mut dr_minus,
            );
            // Contexts are means over the k pairs of projections and
            // rejections of the exemplar maps onto s.
            let w = 1.0 / k as f64;
            let drp = tensor::scale(&dr_plus, w);
            let drm = tensor::scale(&dr_minus, w);
            for i in 0..k {
                let sp = &trace.support[i].map;
                let sm = &trace.oppose[i].map;
                let (gv, gs) = project_backward(sp, s, &drp)?;
                accumulate(&mut d_support[i], &gv);
                accumulate(&mut ds, &gs);
                let (gv, gs) = project_backward(sm, s, &drp)?;
                accumulate(&mut d_oppose[i], &gv);
                accumulate(&mut ds, &gs);
                let (gv, gs) = reject_backward(sp, s, &drm)?;
                accumulate(&mut d_support[i], &gv);
                accumulate(&mut ds, &gs);
                let (gv, gs) = reject_backward(sm, s, &drm)?;
                accumulate(&mut d_oppose[i], &gv);
                accumulate(&mut ds, &gs);
            }
        }
    }

    // Auxiliary metric-learning terms (DAN only). In the joint loss the
    // term carries weight nu; in a triplet-only step it is unweighted.
    let mut d_quint: Vec<Vector> = Vec::new();
    if spec.kind == ModelKind::Dan && spec.parts != LossParts::CrossOnly {
        let nu = match spec.parts {
            LossParts::Both => spec.loss.nu,
            LossParts::TripletOnly => 1.0,
            LossParts::CrossOnly => unreachable!(),
        };
        if nu != 0.0 {
            if spec.use_quintuplet {
                let qtraces = trace.quint.as_ref().unwrap();
                let maps: Vec<&Vector> = qtraces.iter().map(|t| &t.map).collect();
                let qgrads = quintuplet_grads(
                    &trace.target.map,
                    maps[0],
                    maps[1],
                    maps[2],
                    maps[3],
                    &spec.loss,
                )?;
                accumulate(&mut ds, &tensor::scale(&qgrads[0], nu));
                for g in &qgrads[1..] {
                    d_quint.push(tensor::scale(g, nu));
                }
                // nu * lambda * ||theta||^2 contributes 2*nu*lambda*theta.
                let reg = 2.0 * nu * spec.loss.lambda;
                let blocks: Vec<Vec<f64>> = params
                    .blocks()
                    .iter()
                    .map(|(_, b)| b.iter().map(|x| reg * x).collect())
                    .collect();
                for ((_, gb), pb) in grads.blocks_mut().into_iter().zip(blocks) {
                    for (g, p) in gb.iter_mut().zip(pb) {
                        *g += p;
                    }
                }
            } else {
                let scale = nu / k as f64;
                for i in 0..k {
                    let (gs, gp, gn) = triplet_grads(
                        &trace.target.map,
                        &trace.support[i].map,
                        &trace.oppose[i].map,
                        spec.loss.alpha,
                    )?;
                    accumulate(&mut ds, &tensor::scale(&gs, scale));
                    accumulate(&mut d_support[i], &tensor::scale(&gp, scale));
                    accumulate(&mut d_oppose[i], &tensor::scale(&gn, scale));
                }
            }
        }
    }

    // Push map gradients through each branch's attention network into
    // the shared parameters.
    branch_backward(
        &instance.target,
        &trace.target,
        &ds,
        &params.attention,
        &mut grads.attention,
    );
    for i in 0..k {
        branch_backward(
            &instance.support[i],
            &trace.support[i],
            &d_support[i],
            &params.attention,
            &mut grads.attention,
        );
        branch_backward(
            &instance.oppose[i],
            &trace.oppose[i],
            &d_oppose[i],
            &params.attention,
            &mut grads.attention,
        );
    }
    if let (Some(branches), Some(qtraces)) = (&instance.quint, &trace.quint) {
        for (i, dq) in d_quint.iter().enumerate() {
            branch_backward(
                &branches[i],
                &qtraces[i],
                dq,
                &params.attention,
                &mut grads.attention,
            );
        }
    }

    if !grads.is_finite() {
        return Err(Error::NonFinite { layer: "gradients" });
    }
    Ok(grads)
}

fn scaling_backward(
    scaling: &DcnScaling,
    input: &Vector,
    dx: &Vector,
    sign: f64,
    grad: Option<&mut DcnScaling>,
    d_input: &mut Vector,
) {
    match scaling {
        DcnScaling::Diagonal(w) => {
            if let Some(DcnScaling::Diagonal(gw)) = grad {
                for r in 0..w.len() {
                    *gw.at_mut(r) += sign * dx.at(r) * input.at(r);
                }
            }
            for r in 0..w.len() {
                *d_input.at_mut(r) = sign * dx.at(r) * w.at(r);
            }
        }
        DcnScaling::Full(m) => {
            // x_j = sum_i input_i * M[i][j]
            if let Some(DcnScaling::Full(gm)) = grad {
                for i in 0..m.rows() {
                    for j in 0..m.cols() {
                        *gm.at_mut(i, j) += sign * input.at(i) * dx.at(j);
                    }
                }
            }
            for i in 0..m.rows() {
                let mut acc = 0.0;
                for j in 0..m.cols() {
                    acc += m.at(i, j) * dx.at(j);
                }
                *d_input.at_mut(i) = sign * acc;
            }
        }
    }
}

fn accumulate(target: &mut Vector, delta: &Vector) {
    for (t, d) in target.as_mut_slice().iter_mut().zip(delta.as_slice()) {
        *t += d;
    }
}

/// A trained (or initial) model ready to persist: its kind, the
/// dimensions it was built for, and all weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub dims: ModelDims,
    pub params: ModelParams,
}

/// Result of `forward_backward`.
pub struct ForwardBackward {
    pub loss: f64,
    pub cross: f64,
    /// Triplet or quintuplet term before the `nu` weight.
    pub aux: f64,
    pub grads: ModelParams,
    pub final_map: Vector,
    pub target_map: Vector,
    pub probs: Vector,
    pub cross_clamped: bool,
    pub triplet_satisfied: Option<f64>,
}

/// Loss and gradients for one item under the selected loss.
pub fn forward_backward(
    instance: &Instance<'_>,
    params: &ModelParams,
    spec: &LossSpec,
) -> Result<ForwardBackward> {
    let trace = forward(instance, params, spec)?;
    let grads = backward(instance, params, spec, &trace)?;
    Ok(ForwardBackward {
        loss: trace.loss,
        cross: trace.cross,
        aux: trace.aux,
        grads,
        final_map: trace.final_map,
        target_map: trace.target.map,
        probs: trace.probs,
        cross_clamped: trace.cross_clamped,
        triplet_satisfied: trace.triplet_satisfied,
    })
}
