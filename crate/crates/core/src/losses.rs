//! Classification, triplet and quintuplet losses.
//!
//! The triplet gradients are the closed forms
//! `(-2(f-f+), 2(f-f-), 2(f- - f+))` with everything zero when the hinge
//! is inactive. The quintuplet loss realises its three slack variables at
//! their minimal feasible values, which turns the constrained objective
//! into a plain sum of hinges plus an L2 penalty on the parameters.

use crate::error::{Error, Result};
use crate::tensor::{squared_distance, sub, Vector};

/// Weights, margins and switches for all loss variants.
#[derive(Debug, Clone)]
pub struct LossConfig {
    /// Weight of the triplet term in the joint loss.
    pub nu: f64,
    /// Triplet margin.
    pub alpha: f64,
    /// Quintuplet margins, innermost to outermost hinge.
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    /// Quintuplet L2 regulariser weight.
    pub lambda: f64,
    /// Divide the cross-entropy by the class count. On by default; the
    /// unscaled form is available for ablations.
    pub scale_by_classes: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            nu: 10.0,
            alpha: 0.2,
            alpha1: 0.006,
            alpha2: 0.2,
            alpha3: 0.006,
            lambda: 1e-4,
            scale_by_classes: true,
        }
    }
}

/// Cross-entropy value plus a flag telling whether the target probability
/// had to be clamped away from zero.
#[derive(Debug, Clone, Copy)]
pub struct CrossEntropy {
    pub value: f64,
    pub clamped: bool,
}

const PROB_FLOOR: f64 = 1e-12;

/// One-hot cross-entropy over a probability vector. With
/// `scale_by_classes` the result is `-(1/C) * log p[label]`, otherwise
/// `-log p[label]`. A zero target probability is clamped to `1e-12` and
/// flagged rather than returning infinity.
pub fn cross_entropy(probs: &Vector, label: usize, scale_by_classes: bool) -> Result<CrossEntropy> {
    let c = probs.len();
    if c == 0 {
        return Err(Error::EmptyInput {
            op: "cross_entropy",
        });
    }
    if label >= c {
        return Err(Error::InvalidArgument {
            op: "cross_entropy",
            msg: format!("label {label} out of range for {c} classes"),
        });
    }
    let p = probs.at(label);
    let clamped = p < PROB_FLOOR;
    let p = p.max(PROB_FLOOR);
    let scale = if scale_by_classes { 1.0 / c as f64 } else { 1.0 };
    Ok(CrossEntropy {
        value: -scale * p.ln(),
        clamped,
    })
}

/// Hinge condition shared by the triplet loss and its gradients. The
/// boundary case counts as active, matching the `>= 0` in the closed
/// forms.
fn triplet_active(s: &Vector, s_plus: &Vector, s_minus: &Vector, alpha: f64) -> Result<bool> {
    let d_plus = squared_distance(s, s_plus)?;
    let d_minus = squared_distance(s, s_minus)?;
    Ok(alpha + d_plus - d_minus >= 0.0)
}

/// `max(0, ||s - s+||^2 + alpha - ||s - s-||^2)`.
pub fn triplet_loss(s: &Vector, s_plus: &Vector, s_minus: &Vector, alpha: f64) -> Result<f64> {
    let d_plus = squared_distance(s, s_plus)?;
    let d_minus = squared_distance(s, s_minus)?;
    Ok((d_plus + alpha - d_minus).max(0.0))
}

/// Gradients of `triplet_loss` with respect to (target, supporting,
/// opposing), in that order. Exact zeros when the hinge is inactive.
pub fn triplet_grads(
    s: &Vector,
    s_plus: &Vector,
    s_minus: &Vector,
    alpha: f64,
) -> Result<(Vector, Vector, Vector)> {
    if !triplet_active(s, s_plus, s_minus, alpha)? {
        let n = s.len();
        return Ok((Vector::zeros(n), Vector::zeros(n), Vector::zeros(n)));
    }
    let grad_s = crate::tensor::scale(&sub(s_minus, s_plus)?, 2.0);
    let grad_plus = crate::tensor::scale(&sub(s, s_plus)?, -2.0);
    let grad_minus = crate::tensor::scale(&sub(s, s_minus)?, 2.0);
    Ok((grad_s, grad_plus, grad_minus))
}

/// Per-sample joint objective: `cross + nu * triplet`. The batch mean is
/// taken by the trainer.
pub fn joint_loss(cross: f64, triplet: f64, nu: f64) -> f64 {
    cross + nu * triplet
}

/// Quintuplet hinge sum. `D` is the squared Euclidean distance; each
/// slack takes its minimal feasible value:
///
/// ```text
/// eps = max(0, a1 + D(a,p+)  - D(a,p++))
/// chi = max(0, a2 + D(a,p++) - D(a,n--))
/// phi = max(0, a3 + D(a,n--) - D(a,n-))
/// loss = eps + chi + phi + lambda * ||theta||^2
/// ```
pub fn quintuplet_loss(
    a: &Vector,
    p_plus: &Vector,
    p_plusplus: &Vector,
    n_minusminus: &Vector,
    n_minus: &Vector,
    cfg: &LossConfig,
    theta_norm_sq: f64,
) -> Result<f64> {
    let d_p = squared_distance(a, p_plus)?;
    let d_pp = squared_distance(a, p_plusplus)?;
    let d_nn = squared_distance(a, n_minusminus)?;
    let d_n = squared_distance(a, n_minus)?;
    let eps = (cfg.alpha1 + d_p - d_pp).max(0.0);
    let chi = (cfg.alpha2 + d_pp - d_nn).max(0.0);
    let phi = (cfg.alpha3 + d_nn - d_n).max(0.0);
    Ok(eps + chi + phi + cfg.lambda * theta_norm_sq)
}

/// Subgradients of the quintuplet hinge sum with respect to the five
/// input vectors, in argument order. The `lambda * ||theta||^2` term is
/// independent of these inputs and is handled by the caller.
pub fn quintuplet_grads(
    a: &Vector,
    p_plus: &Vector,
    p_plusplus: &Vector,
    n_minusminus: &Vector,
    n_minus: &Vector,
    cfg: &LossConfig,
) -> Result<[Vector; 5]> {
    let n = a.len();
    let d_p = squared_distance(a, p_plus)?;
    let d_pp = squared_distance(a, p_plusplus)?;
    let d_nn = squared_distance(a, n_minusminus)?;
    let d_n = squared_distance(a, n_minus)?;

    let mut grads = [
        Vector::zeros(n),
        Vector::zeros(n),
        Vector::zeros(n),
        Vector::zeros(n),
        Vector::zeros(n),
    ];
    // d/dx D(a,x) = -2(a-x); d/da D(a,x) = 2(a-x).
    let mut accumulate = |target: usize, base: &Vector, other: &Vector, sign: f64| {
        for i in 0..n {
            *grads[target].at_mut(i) += sign * 2.0 * (base.at(i) - other.at(i));
        }
    };
    if cfg.alpha1 + d_p - d_pp >= 0.0 {
        accumulate(0, a, p_plus, 1.0);
        accumulate(0, a, p_plusplus, -1.0);
        accumulate(1, a, p_plus, -1.0);
        accumulate(2, a, p_plusplus, 1.0);
    }
    if cfg.alpha2 + d_pp - d_nn >= 0.0 {
        accumulate(0, a, p_plusplus, 1.0);
        accumulate(0, a, n_minusminus, -1.0);
        accumulate(2, a, p_plusplus, -1.0);
        accumulate(3, a, n_minusminus, 1.0);
    }
    if cfg.alpha3 + d_nn - d_n >= 0.0 {
        accumulate(0, a, n_minusminus, 1.0);
        accumulate(0, a, n_minus, -1.0);
        accumulate(3, a, n_minusminus, -1.0);
        accumulate(4, a, n_minus, 1.0);
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut impl Rng, n: usize, lo: f64, hi: f64) -> Vector {
        Vector::from_vec((0..n).map(|_| rng.random_range(lo..hi)).collect())
    }

    /// Central finite differences of a scalar function of one vector slot.
    fn fd_grad(f: impl Fn(&Vector) -> f64, x: &Vector, eps: f64) -> Vector {
        let mut g = Vector::zeros(x.len());
        let mut probe = x.clone();
        for i in 0..x.len() {
            let orig = probe.at(i);
            *probe.at_mut(i) = orig + eps;
            let up = f(&probe);
            *probe.at_mut(i) = orig - eps;
            let down = f(&probe);
            *probe.at_mut(i) = orig;
            *g.at_mut(i) = (up - down) / (2.0 * eps);
        }
        g
    }

    #[test]
    fn cross_entropy_perfect_prediction_is_zero() {
        let mut p = vec![0.0; 10];
        p[3] = 1.0;
        let out = cross_entropy(&Vector::from_vec(p), 3, true).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(!out.clamped);
    }

    #[test]
    fn cross_entropy_uniform_closed_form() {
        let p = Vector::from_vec(vec![0.25; 4]);
        for label in 0..4 {
            let out = cross_entropy(&p, label, true).unwrap();
            assert!((out.value - 0.25 * 4.0_f64.ln()).abs() < 1e-15);
        }
    }

    #[test]
    fn cross_entropy_matches_direct_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let raw = rand_vec(&mut rng, 6, 0.01, 1.0);
        let total = raw.sum();
        let p = crate::tensor::scale(&raw, 1.0 / total);
        let out = cross_entropy(&p, 2, true).unwrap();
        let expect = -(1.0 / 6.0) * p.at(2).ln();
        assert!((out.value - expect).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_clamps_zero_probability() {
        let p = Vector::from_vec(vec![1.0, 0.0]);
        let out = cross_entropy(&p, 1, false).unwrap();
        assert!(out.clamped);
        assert!((out.value - (-(1e-12_f64).ln())).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let p = Vector::from_vec(vec![0.5, 0.5]);
        assert!(cross_entropy(&p, 2, true).is_err());
    }

    #[test]
    fn triplet_loss_satisfied_margin_is_zero() {
        let s = Vector::from_vec(vec![0.0]);
        let s_plus = Vector::from_vec(vec![0.0]);
        let s_minus = Vector::from_vec(vec![1.0]);
        assert_eq!(triplet_loss(&s, &s_plus, &s_minus, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn triplet_loss_worst_case() {
        let s = Vector::from_vec(vec![1.0, 2.0]);
        let s_plus = Vector::from_vec(vec![0.0, 0.0]);
        // s == s_minus: loss is ||s - s+||^2 + alpha.
        let loss = triplet_loss(&s, &s_plus, &s, 0.2).unwrap();
        assert!((loss - (5.0 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn triplet_loss_hand_computed() {
        let s = Vector::from_vec(vec![0.0]);
        let p = Vector::from_vec(vec![1.0]);
        let n = Vector::from_vec(vec![3.0]);
        assert_eq!(triplet_loss(&s, &p, &n, 0.2).unwrap(), 0.0);
    }

    #[test]
    fn triplet_grads_inactive_are_exact_zeros() {
        let s = Vector::from_vec(vec![0.0, 0.0]);
        let p = Vector::from_vec(vec![0.1, 0.0]);
        let n = Vector::from_vec(vec![5.0, 5.0]);
        let (gs, gp, gn) = triplet_grads(&s, &p, &n, 0.2).unwrap();
        assert!(gs.as_slice().iter().all(|&x| x == 0.0));
        assert!(gp.as_slice().iter().all(|&x| x == 0.0));
        assert!(gn.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn triplet_grads_active_hand_evaluated() {
        let s = Vector::from_vec(vec![1.0]);
        let p = Vector::from_vec(vec![0.0]);
        let n = Vector::from_vec(vec![2.0]);
        let (gs, gp, gn) = triplet_grads(&s, &p, &n, 0.2).unwrap();
        assert_eq!(gs.as_slice(), &[4.0]); // 2(s- - s+) = 2(2-0)
        assert_eq!(gp.as_slice(), &[-2.0]); // -2(s - s+) = -2(1-0)
        assert_eq!(gn.as_slice(), &[-2.0]); // 2(s - s-) = 2(1-2)
    }

    #[test]
    fn triplet_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let alpha = 0.2;
        let mut checked = 0;
        while checked < 20 {
            let s = rand_vec(&mut rng, 5, -1.0, 1.0);
            let p = rand_vec(&mut rng, 5, -1.0, 1.0);
            let n = rand_vec(&mut rng, 5, -1.0, 1.0);
            // Stay away from the hinge kink.
            let margin = alpha + squared_distance(&s, &p).unwrap()
                - squared_distance(&s, &n).unwrap();
            if margin.abs() < 1e-3 {
                continue;
            }
            checked += 1;
            let (gs, gp, gn) = triplet_grads(&s, &p, &n, alpha).unwrap();
            let fs = fd_grad(|x| triplet_loss(x, &p, &n, alpha).unwrap(), &s, 1e-6);
            let fp = fd_grad(|x| triplet_loss(&s, x, &n, alpha).unwrap(), &p, 1e-6);
            let fn_ = fd_grad(|x| triplet_loss(&s, &p, x, alpha).unwrap(), &n, 1e-6);
            for (a, b) in gs
                .as_slice()
                .iter()
                .chain(gp.as_slice())
                .chain(gn.as_slice())
                .zip(fs.as_slice().iter().chain(fp.as_slice()).chain(fn_.as_slice()))
            {
                assert!((a - b).abs() < 1e-6, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn triplet_grad_sum_identity() {
        // grad_s + grad_plus + grad_minus must equal
        // 2(s- - s+) - 2(s - s+) + 2(s - s-) componentwise when active.
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let s = rand_vec(&mut rng, 7, -1.0, 1.0);
            let p = rand_vec(&mut rng, 7, -1.0, 1.0);
            let n = rand_vec(&mut rng, 7, -1.0, 1.0);
            if !triplet_active(&s, &p, &n, 10.0).unwrap() {
                continue; // huge alpha keeps nearly everything active
            }
            let (gs, gp, gn) = triplet_grads(&s, &p, &n, 10.0).unwrap();
            for i in 0..7 {
                let lhs = gs.at(i) + gp.at(i) + gn.at(i);
                let rhs = 2.0 * (n.at(i) - p.at(i)) - 2.0 * (s.at(i) - p.at(i))
                    + 2.0 * (s.at(i) - n.at(i));
                assert!((lhs - rhs).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn triplet_loss_nonneg_and_zero_iff_margin_met() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..200 {
            let s = rand_vec(&mut rng, 4, -1.0, 1.0);
            let p = rand_vec(&mut rng, 4, -1.0, 1.0);
            let n = rand_vec(&mut rng, 4, -1.0, 1.0);
            let alpha = 0.2;
            let loss = triplet_loss(&s, &p, &n, alpha).unwrap();
            assert!(loss >= 0.0);
            let satisfied = squared_distance(&s, &n).unwrap()
                >= squared_distance(&s, &p).unwrap() + alpha;
            assert_eq!(loss == 0.0, satisfied);
        }
    }

    #[test]
    fn joint_loss_cases() {
        assert_eq!(joint_loss(1.0, 0.5, 0.0), 1.0);
        assert_eq!(joint_loss(1.0, 0.5, 10.0), 6.0);
        // Linear in nu.
        let a = joint_loss(0.3, 0.7, 2.0) - joint_loss(0.3, 0.7, 0.0);
        let b = joint_loss(0.3, 0.7, 1.0) - joint_loss(0.3, 0.7, 0.0);
        assert!((a - 2.0 * b).abs() < 1e-15);
    }

    #[test]
    fn quintuplet_all_equal_gives_margin_sum() {
        let v = Vector::from_vec(vec![0.3, -0.2]);
        let cfg = LossConfig::default();
        let loss = quintuplet_loss(&v, &v, &v, &v, &v, &cfg, 2.0).unwrap();
        let expect = cfg.alpha1 + cfg.alpha2 + cfg.alpha3 + cfg.lambda * 2.0;
        assert!((loss - expect).abs() < 1e-15);
    }

    #[test]
    fn quintuplet_line_example_all_hinges_inactive() {
        // a=0, p+=0.1, p++=0.5, n--=2, n-=3 with the default margins.
        let cfg = LossConfig::default();
        let a = Vector::from_vec(vec![0.0]);
        let loss = quintuplet_loss(
            &a,
            &Vector::from_vec(vec![0.1]),
            &Vector::from_vec(vec![0.5]),
            &Vector::from_vec(vec![2.0]),
            &Vector::from_vec(vec![3.0]),
            &cfg,
            0.0,
        )
        .unwrap();
        assert_eq!(loss, 0.0);
    }

    #[test]
    fn quintuplet_zero_implies_orderings_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let cfg = LossConfig {
            lambda: 0.0,
            ..LossConfig::default()
        };
        let mut seen_zero = false;
        for _ in 0..500 {
            let a = rand_vec(&mut rng, 3, -1.0, 1.0);
            let p1 = rand_vec(&mut rng, 3, -1.0, 1.0);
            let p2 = rand_vec(&mut rng, 3, -1.0, 1.0);
            let n2 = rand_vec(&mut rng, 3, -2.0, 2.0);
            let n1 = rand_vec(&mut rng, 3, -3.0, 3.0);
            let loss = quintuplet_loss(&a, &p1, &p2, &n2, &n1, &cfg, 0.0).unwrap();
            if loss == 0.0 {
                seen_zero = true;
                let d_p = squared_distance(&a, &p1).unwrap();
                let d_pp = squared_distance(&a, &p2).unwrap();
                let d_nn = squared_distance(&a, &n2).unwrap();
                let d_n = squared_distance(&a, &n1).unwrap();
                assert!(d_p + cfg.alpha1 <= d_pp);
                assert!(d_pp + cfg.alpha2 <= d_nn);
                assert!(d_nn + cfg.alpha3 <= d_n);
            }
        }
        assert!(seen_zero, "generator never produced a satisfied quintuplet");
    }

    #[test]
    fn quintuplet_grads_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let cfg = LossConfig::default();
        let mut checked = 0;
        while checked < 20 {
            let a = rand_vec(&mut rng, 4, -1.0, 1.0);
            let p1 = rand_vec(&mut rng, 4, -1.0, 1.0);
            let p2 = rand_vec(&mut rng, 4, -1.0, 1.0);
            let n2 = rand_vec(&mut rng, 4, -1.0, 1.0);
            let n1 = rand_vec(&mut rng, 4, -1.0, 1.0);
            // Skip instances near any hinge kink.
            let d_p = squared_distance(&a, &p1).unwrap();
            let d_pp = squared_distance(&a, &p2).unwrap();
            let d_nn = squared_distance(&a, &n2).unwrap();
            let d_n = squared_distance(&a, &n1).unwrap();
            let margins = [
                cfg.alpha1 + d_p - d_pp,
                cfg.alpha2 + d_pp - d_nn,
                cfg.alpha3 + d_nn - d_n,
            ];
            if margins.iter().any(|m| m.abs() < 1e-3) {
                continue;
            }
            checked += 1;
            let grads = quintuplet_grads(&a, &p1, &p2, &n2, &n1, &cfg).unwrap();
            let slots: [&Vector; 5] = [&a, &p1, &p2, &n2, &n1];
            for (slot, analytic) in grads.iter().enumerate() {
                let numeric = fd_grad(
                    |x| {
                        let vs: Vec<&Vector> = slots
                            .iter()
                            .enumerate()
                            .map(|(i, v)| if i == slot { x } else { *v })
                            .collect();
                        quintuplet_loss(vs[0], vs[1], vs[2], vs[3], vs[4], &cfg, 0.0).unwrap()
                    },
                    slots[slot],
                    1e-6,
                );
                for (x, y) in analytic.as_slice().iter().zip(numeric.as_slice()) {
                    assert!((x - y).abs() < 1e-6, "slot {slot}: {x} vs {y}");
                }
            }
        }
    }
}
