//! Differential context: vector projection/rejection of exemplar
//! attention maps onto the target map, and the four Add/Mul x
//! fixed/learned combination variants.

use crate::error::{Error, Result};
use crate::tensor::{add, dot, l2_norm_sq, sub, Matrix, Vector};

/// How the context difference is folded into the original attention map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcnMode {
    Add,
    Mul,
}

/// Fixed unit scaling (v1) or learned scaling (v2).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DcnVariant {
    V1,
    V2,
}

/// Scaling operator applied to a context vector. Diagonal holds one
/// weight per region; Full is a dense RxR map.
#[derive(Debug, Clone, PartialEq)]
pub enum DcnScaling {
    Diagonal(Vector),
    Full(Matrix),
}

impl DcnScaling {
    pub fn ones_diagonal(regions: usize) -> Self {
        DcnScaling::Diagonal(Vector::from_vec(vec![1.0; regions]))
    }

    pub fn apply(&self, v: &Vector) -> Result<Vector> {
        match self {
            DcnScaling::Diagonal(w) => crate::tensor::hadamard(w, v),
            DcnScaling::Full(m) => crate::tensor::vec_mat_mul(v, m),
        }
    }

    /// Number of learnable scalars.
    pub fn param_count(&self) -> usize {
        match self {
            DcnScaling::Diagonal(w) => w.len(),
            DcnScaling::Full(m) => m.rows() * m.cols(),
        }
    }
}

/// Parameters and switches of the differential-context head.
#[derive(Debug, Clone, PartialEq)]
pub struct DcnParams {
    pub mode: DcnMode,
    pub variant: DcnVariant,
    pub w1: DcnScaling,
    pub w2: DcnScaling,
    /// Pass the scaled difference through tanh (the primary form). With
    /// `false` and unit weights this degrades to the plain difference.
    pub use_tanh: bool,
    /// Mul combines as `s * (1 + t)` so that `t = 0` is an identity;
    /// `false` gives the bare `s * t`.
    pub mul_identity: bool,
}

impl DcnParams {
    /// v1: unit weights, frozen by the trainer.
    pub fn fixed(mode: DcnMode, regions: usize) -> Self {
        Self {
            mode,
            variant: DcnVariant::V1,
            w1: DcnScaling::ones_diagonal(regions),
            w2: DcnScaling::ones_diagonal(regions),
            use_tanh: true,
            mul_identity: true,
        }
    }

    /// v2: learned per-region weights, initialised to 1 so an untrained
    /// v2 agrees exactly with v1.
    pub fn learned(mode: DcnMode, regions: usize) -> Self {
        Self {
            variant: DcnVariant::V2,
            ..Self::fixed(mode, regions)
        }
    }
}

/// Vector projection of `v` on `s`: `(s . v) * s / ||s||^2`.
pub fn project(v: &Vector, s: &Vector) -> Result<Vector> {
    let norm_sq = l2_norm_sq(s);
    if norm_sq == 0.0 {
        return Err(Error::ZeroNorm { op: "project" });
    }
    let coeff = dot(s, v)? / norm_sq;
    Ok(crate::tensor::scale(s, coeff))
}

/// Vector rejection: `v - project(v, s)`.
pub fn reject(v: &Vector, s: &Vector) -> Result<Vector> {
    sub(v, &project(v, s)?)
}

/// Supporting context: projection of both exemplar maps on the target.
pub fn supporting_context(s: &Vector, s_plus: &Vector, s_minus: &Vector) -> Result<Vector> {
    add(&project(s_plus, s)?, &project(s_minus, s)?)
}

/// Opposing context: rejection of both exemplar maps from the target.
pub fn opposing_context(s: &Vector, s_plus: &Vector, s_minus: &Vector) -> Result<Vector> {
    add(&reject(s_plus, s)?, &reject(s_minus, s)?)
}

/// Alternative reading of the supporting context where the opposing
/// projection is subtracted instead of added. Not used by the trainer;
/// kept for ablation experiments.
pub fn supporting_context_difference(
    s: &Vector,
    s_plus: &Vector,
    s_minus: &Vector,
) -> Result<Vector> {
    sub(&project(s_plus, s)?, &project(s_minus, s)?)
}

const CLAMP_FLOOR: f64 = 1e-12;

/// Un-normalised differential context `d`:
/// Mul gives `s * (1 + tanh(W1 r+ - W2 r-))`, Add gives
/// `s + tanh(W1 r+ - W2 r-)`.
pub fn differential_context_raw(
    s: &Vector,
    r_plus: &Vector,
    r_minus: &Vector,
    p: &DcnParams,
) -> Result<Vector> {
    let x = sub(&p.w1.apply(r_plus)?, &p.w2.apply(r_minus)?)?;
    let t = if p.use_tanh {
        crate::tensor::tanh_elem(&x)
    } else {
        x
    };
    match p.mode {
        DcnMode::Mul => {
            let factor: Vec<f64> = t
                .as_slice()
                .iter()
                .map(|&ti| if p.mul_identity { 1.0 + ti } else { ti })
                .collect();
            crate::tensor::hadamard(s, &Vector::from_vec(factor))
        }
        DcnMode::Add => add(s, &t),
    }
}

/// Differential context renormalised to a distribution. Mul clamps
/// entries at `1e-12` before the L1 step; Add first shifts the whole
/// vector up when any entry is negative.
pub fn differential_context(
    s: &Vector,
    r_plus: &Vector,
    r_minus: &Vector,
    p: &DcnParams,
) -> Result<Vector> {
    let raw = differential_context_raw(s, r_plus, r_minus, p)?;
    normalize_context(&raw, p.mode)
}

/// The renormalisation step on its own; used by the backward pass too.
pub fn normalize_context(raw: &Vector, mode: DcnMode) -> Result<Vector> {
    let positive: Vec<f64> = match mode {
        DcnMode::Mul => {
            let mut clamped_all = true;
            let out: Vec<f64> = raw
                .as_slice()
                .iter()
                .map(|&x| {
                    if x > CLAMP_FLOOR {
                        clamped_all = false;
                        x
                    } else {
                        CLAMP_FLOOR
                    }
                })
                .collect();
            if clamped_all {
                return Err(Error::InvalidArgument {
                    op: "differential_context",
                    msg: "context vanished: every entry clamped to the floor".into(),
                });
            }
            out
        }
        DcnMode::Add => {
            let min = raw.as_slice().iter().cloned().fold(f64::INFINITY, f64::min);
            if min < 0.0 {
                raw.as_slice().iter().map(|&x| x - min + CLAMP_FLOOR).collect()
            } else {
                raw.as_slice().to_vec()
            }
        }
    };
    let total: f64 = positive.iter().sum();
    if total <= CLAMP_FLOOR {
        return Err(Error::InvalidArgument {
            op: "differential_context",
            msg: "context vanished: L1 mass is zero".into(),
        });
    }
    Ok(Vector::from_vec(positive.iter().map(|x| x / total).collect()))
}

// ---------------------------------------------------------------------
// Backward passes. These feed the hand-derived model gradients; each is
// checked against finite differences in the tests below.
// ---------------------------------------------------------------------

/// Gradients of `project(v, s)` given the upstream gradient `w`:
/// returns `(d/dv, d/ds)`.
pub fn project_backward(v: &Vector, s: &Vector, w: &Vector) -> Result<(Vector, Vector)> {
    let n = l2_norm_sq(s);
    if n == 0.0 {
        return Err(Error::ZeroNorm {
            op: "project_backward",
        });
    }
    let c = dot(s, v)?;
    let ws = dot(w, s)?;
    // proj_j = c * s_j / n
    // d proj_j / d v_i = s_i s_j / n
    // d proj_j / d s_i = v_i s_j / n + c \delta_ij / n - 2 c s_j s_i / n^2
    let grad_v = crate::tensor::scale(s, ws / n);
    let mut grad_s = Vector::zeros(s.len());
    for i in 0..s.len() {
        *grad_s.at_mut(i) =
            v.at(i) * ws / n + c * w.at(i) / n - 2.0 * c * s.at(i) * ws / (n * n);
    }
    Ok((grad_v, grad_s))
}

/// Gradients of `reject(v, s)` given the upstream gradient `w`.
pub fn reject_backward(v: &Vector, s: &Vector, w: &Vector) -> Result<(Vector, Vector)> {
    let (pv, ps) = project_backward(v, s, w)?;
    Ok((sub(w, &pv)?, crate::tensor::scale(&ps, -1.0)))
}

/// Gradient of the L1 renormalisation `d = y / sum(y)` (with the
/// mode-specific positivity step) given the upstream gradient on `d`.
pub fn normalize_context_backward(raw: &Vector, mode: DcnMode, w: &Vector) -> Result<Vector> {
    // Recompute the positive vector and remember which entries still
    // carry gradient (Mul: unclamped; Add: all, minus the argmin shift).
    let mut pass = vec![true; raw.len()];
    let mut shift_argmin: Option<usize> = None;
    let positive: Vec<f64> = match mode {
        DcnMode::Mul => raw
            .as_slice()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                if x > CLAMP_FLOOR {
                    x
                } else {
                    pass[i] = false;
                    CLAMP_FLOOR
                }
            })
            .collect(),
        DcnMode::Add => {
            let (argmin, min) = raw
                .as_slice()
                .iter()
                .enumerate()
                .fold((0, f64::INFINITY), |(ai, am), (i, &x)| {
                    if x < am {
                        (i, x)
                    } else {
                        (ai, am)
                    }
                });
            if min < 0.0 {
                shift_argmin = Some(argmin);
                raw.as_slice().iter().map(|&x| x - min + CLAMP_FLOOR).collect()
            } else {
                raw.as_slice().to_vec()
            }
        }
    };
    let total: f64 = positive.iter().sum();
    if total <= CLAMP_FLOOR {
        return Err(Error::InvalidArgument {
            op: "normalize_context_backward",
            msg: "context vanished".into(),
        });
    }
    // d_i = y_i / S  =>  dL/dy_j = (w_j - sum_i w_i d_i) / S
    let wd: f64 = w
        .as_slice()
        .iter()
        .zip(&positive)
        .map(|(wi, yi)| wi * yi / total)
        .sum();
    let mut grad_y: Vec<f64> = w.as_slice().iter().map(|wi| (wi - wd) / total).collect();
    // Shift step: y_j = raw_j - raw_argmin + floor, so the argmin entry
    // absorbs minus the total gradient.
    if let Some(am) = shift_argmin {
        let total_grad: f64 = grad_y.iter().sum();
        grad_y[am] -= total_grad;
    }
    // Clamped entries (Mul) are constants.
    for (g, ok) in grad_y.iter_mut().zip(&pass) {
        if !ok {
            *g = 0.0;
        }
    }
    Ok(Vector::from_vec(grad_y))
}
