//! Attention map, attended feature and answer head.
//!
//! The attention network scores every image region with a one-hidden-
//! layer net over the region embedding and a broadcast question term,
//! softmaxes the scores into a distribution, and pools region features
//! under it. The answer head reads the pooled feature plus the question
//! embedding.

use crate::error::{Error, Result};
use crate::tensor::{self, softmax, vec_mat_mul, Matrix, Vector};

/// Region features of one image: an `R x D` matrix, one row per region.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageFeatures {
    matrix: Matrix,
}

impl ImageFeatures {
    pub fn new(matrix: Matrix) -> Self {
        Self { matrix }
    }

    pub fn regions(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        self.matrix.row(r)
    }
}

/// Weights of the attention scorer.
///
/// `w_i`, `w_q` are `D x A`, `b_q` has length `A`, `w_p` is the `A x 1`
/// projection stored as a vector, `b_p` its bias.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub w_i: Matrix,
    pub w_q: Matrix,
    pub b_q: Vector,
    pub w_p: Vector,
    pub b_p: f64,
}

impl AttentionParams {
    pub fn hidden_dim(&self) -> usize {
        self.b_q.len()
    }

    pub fn feature_dim(&self) -> usize {
        self.w_i.rows()
    }
}

/// Weights of the answer head: `w_a` is `D x C`, `b_a` has length `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnswerParams {
    pub w_a: Matrix,
    pub b_a: Vector,
}

impl AnswerParams {
    pub fn classes(&self) -> usize {
        self.b_a.len()
    }
}

/// Probability distribution over image regions.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMap {
    weights: Vector,
}

impl AttentionMap {
    /// Wrap a vector that is already a distribution (non-negative,
    /// summing to 1 within 1e-9).
    pub fn new(weights: Vector) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::EmptyInput { op: "AttentionMap" });
        }
        if weights.as_slice().iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::InvalidArgument {
                op: "AttentionMap",
                msg: "weights must be finite and non-negative".into(),
            });
        }
        if (weights.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument {
                op: "AttentionMap",
                msg: format!("weights sum to {}, expected 1", weights.sum()),
            });
        }
        Ok(Self { weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn weights(&self) -> &Vector {
        &self.weights
    }

    pub fn into_vector(self) -> Vector {
        self.weights
    }
}

/// Everything the backward pass needs from one attention forward:
/// the tanh activations (`R x A`), the pre-softmax map and the map.
#[derive(Debug, Clone)]
pub struct AttentionTrace {
    pub hidden: Matrix,
    pub map: Vector,
}

/// Compute the attention distribution and keep the intermediates.
pub fn attention_forward(
    g: &ImageFeatures,
    f: &Vector,
    p: &AttentionParams,
) -> Result<AttentionTrace> {
    let regions = g.regions();
    let hidden_dim = p.hidden_dim();
    if f.len() != g.dim() || p.feature_dim() != g.dim() {
        return Err(Error::ShapeMismatch {
            op: "attention_forward",
            left: format!("features {}x{}, question len {}", regions, g.dim(), f.len()),
            right: format!("w_i {}x{}", p.w_i.rows(), p.w_i.cols()),
        });
    }
    // Question term, broadcast over regions.
    let mut q_term = vec_mat_mul(f, &p.w_q)?;
    for (q, b) in q_term.as_mut_slice().iter_mut().zip(p.b_q.as_slice()) {
        *q += b;
    }

    let mut hidden = Matrix::zeros(regions, hidden_dim);
    let mut logits = Vector::zeros(regions);
    for r in 0..regions {
        let g_row = g.row(r);
        let mut logit = p.b_p;
        for a in 0..hidden_dim {
            let mut u = q_term.at(a);
            for (d, &gd) in g_row.iter().enumerate() {
                u += gd * p.w_i.at(d, a);
            }
            let h = u.tanh();
            *hidden.at_mut(r, a) = h;
            logit += h * p.w_p.at(a);
        }
        *logits.at_mut(r) = logit;
    }
    if !logits.is_finite() {
        return Err(Error::NonFinite {
            layer: "attention_logits",
        });
    }
    let map = softmax(&logits)?;
    Ok(AttentionTrace { hidden, map })
}

/// The attention distribution alone.
pub fn attention_map(g: &ImageFeatures, f: &Vector, p: &AttentionParams) -> Result<AttentionMap> {
    let trace = attention_forward(g, f, p)?;
    AttentionMap::new(trace.map)
}

/// Weighted sum of region rows: `sum_r s_r * g_r`, a `D` vector.
pub fn attend(g: &ImageFeatures, s: &Vector) -> Result<Vector> {
    if s.len() != g.regions() {
        return Err(Error::ShapeMismatch {
            op: "attend",
            left: format!("map len {}", s.len()),
            right: format!("features {}x{}", g.regions(), g.dim()),
        });
    }
    let mut out = vec![0.0; g.dim()];
    for r in 0..g.regions() {
        let w = s.at(r);
        for (o, &x) in out.iter_mut().zip(g.row(r)) {
            *o += w * x;
        }
    }
    Ok(Vector::from_vec(out))
}

/// Answer logits: `(v_att + f) . W_A + b_A`. Probability conversion is
/// left to the loss.
pub fn answer_logits(v_att: &Vector, f: &Vector, p: &AnswerParams) -> Result<Vector> {
    let fused = tensor::add(v_att, f)?;
    let mut z = vec_mat_mul(&fused, &p.w_a)?;
    for (zj, bj) in z.as_mut_slice().iter_mut().zip(p.b_a.as_slice()) {
        *zj += bj;
    }
    if !z.is_finite() {
        return Err(Error::NonFinite {
            layer: "answer_logits",
        });
    }
    Ok(z)
}
