//! Evaluation metrics: answer accuracy against ten-annotator sets and
//! rank correlation between attention maps.

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Vector};

/// A single answer: either a class index or free text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Answer {
    Class(u32),
    Text(String),
}

/// Exactly ten annotator answers for one question.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnnotatedAnswers {
    answers: Vec<Answer>,
}

impl AnnotatedAnswers {
    pub const COUNT: usize = 10;

    pub fn new(answers: Vec<Answer>) -> Result<Self> {
        if answers.len() != Self::COUNT {
            return Err(Error::InvalidArgument {
                op: "AnnotatedAnswers",
                msg: format!("expected {} answers, got {}", Self::COUNT, answers.len()),
            });
        }
        Ok(Self { answers })
    }

    pub fn from_classes(classes: &[u32]) -> Result<Self> {
        Self::new(classes.iter().map(|&c| Answer::Class(c)).collect())
    }

    pub fn answers(&self) -> &[Answer] {
        &self.answers
    }
}

fn answers_match(pred: &Answer, annotated: &Answer) -> bool {
    match (pred, annotated) {
        (Answer::Class(a), Answer::Class(b)) => a == b,
        (Answer::Text(a), Answer::Text(b)) => normalize_answer(a) == normalize_answer(b),
        _ => false,
    }
}

/// `min(matches / 3, 1)`: full credit once three annotators agree.
pub fn vqa_accuracy(pred: &Answer, answers: &AnnotatedAnswers) -> f64 {
    let matches = answers
        .answers()
        .iter()
        .filter(|t| answers_match(pred, t))
        .count();
    (matches as f64 / 3.0).min(1.0)
}

const NUMBER_WORDS: [(&str, &str); 11] = [
    ("zero", "0"),
    ("one", "1"),
    ("two", "2"),
    ("three", "3"),
    ("four", "4"),
    ("five", "5"),
    ("six", "6"),
    ("seven", "7"),
    ("eight", "8"),
    ("nine", "9"),
    ("ten", "10"),
];

/// Lowercase, strip punctuation, drop standalone articles and map the
/// number words zero..ten to digits.
pub fn normalize_answer(raw: &str) -> String {
    let lowered: String = raw
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    lowered
        .split_whitespace()
        .filter(|tok| !matches!(*tok, "a" | "an" | "the"))
        .map(|tok| {
            NUMBER_WORDS
                .iter()
                .find(|(word, _)| *word == tok)
                .map(|(_, digit)| *digit)
                .unwrap_or(tok)
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// A reference attention heatmap on an `H x W` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceAttention {
    grid: Matrix,
}

impl ReferenceAttention {
    pub fn new(grid: Matrix) -> Result<Self> {
        if !grid.is_finite() || grid.as_slice().iter().any(|&x| x < 0.0) {
            return Err(Error::InvalidArgument {
                op: "ReferenceAttention",
                msg: "grid must be finite and non-negative".into(),
            });
        }
        if grid.as_slice().iter().all(|&x| x == 0.0) {
            return Err(Error::InvalidArgument {
                op: "ReferenceAttention",
                msg: "grid must not be all zero".into(),
            });
        }
        Ok(Self { grid })
    }

    pub fn grid(&self) -> &Matrix {
        &self.grid
    }
}

/// Block-average the grid down to `target_side x target_side` and
/// L1-normalise, giving a distribution of length `target_side^2`.
pub fn downscale_attention(reference: &ReferenceAttention, target_side: usize) -> Result<Vector> {
    let grid = reference.grid();
    let (h, w) = grid.shape();
    if h < target_side || w < target_side || target_side == 0 {
        return Err(Error::InvalidArgument {
            op: "downscale_attention",
            msg: format!("grid {h}x{w} is smaller than target {target_side}x{target_side}"),
        });
    }
    let mut pooled = vec![0.0; target_side * target_side];
    for bi in 0..target_side {
        let r0 = bi * h / target_side;
        let r1 = (bi + 1) * h / target_side;
        for bj in 0..target_side {
            let c0 = bj * w / target_side;
            let c1 = (bj + 1) * w / target_side;
            let mut acc = 0.0;
            for r in r0..r1 {
                for c in c0..c1 {
                    acc += grid.at(r, c);
                }
            }
            pooled[bi * target_side + bj] = acc / ((r1 - r0) * (c1 - c0)) as f64;
        }
    }
    let total: f64 = pooled.iter().sum();
    Ok(Vector::from_vec(pooled.iter().map(|x| x / total).collect()))
}

/// Ranks assigned descending by value, average ranks for ties.
fn ranks_descending(v: &Vector) -> Vec<f64> {
    let n = v.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| v.at(b).total_cmp(&v.at(a)));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && v.at(order[j + 1]) == v.at(order[i]) {
            j += 1;
        }
        // Positions i..=j (0-based) share the average of ranks i+1..=j+1.
        let avg = (i + j + 2) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation `1 - 6 * sum(D^2) / (N^3 - N)` between two
/// equal-length maps, with average ranks for ties.
pub fn rank_correlation(p: &Vector, q: &Vector) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::ShapeMismatch {
            op: "rank_correlation",
            left: format!("len {}", p.len()),
            right: format!("len {}", q.len()),
        });
    }
    let n = p.len();
    if n < 2 {
        return Err(Error::InvalidArgument {
            op: "rank_correlation",
            msg: format!("need at least 2 elements, got {n}"),
        });
    }
    let rp = ranks_descending(p);
    let rq = ranks_descending(q);
    let sum_d_sq: f64 = rp
        .iter()
        .zip(&rq)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let n = n as f64;
    Ok(1.0 - 6.0 * sum_d_sq / (n * n * n - n))
}
