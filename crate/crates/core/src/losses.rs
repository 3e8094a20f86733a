//! Feature-consistency, cross-entropy and batch-hard triplet losses.
//!
//! Every loss returns its value together with the gradient with respect to
//! its inputs so the trainer can hand the sum straight to the network's
//! backward pass.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Norms below this are treated as zero; their gradient is defined as 0.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MseMode {
    /// Mean over pairs of the unsquared Euclidean distance.
    #[default]
    L2Norm,
    /// Squared Euclidean distance averaged over pairs and dimensions.
    SquaredL2,
}

impl std::str::FromStr for MseMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2_norm" => Ok(MseMode::L2Norm),
            "squared_l2" => Ok(MseMode::SquaredL2),
            other => Err(Error::Config(format!("unknown mse mode {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    pub mse_mode: MseMode,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 0.3,
            mse_mode: MseMode::L2Norm,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin >= 0.0) {
            return Err(Error::Config(format!("triplet margin {} must be >= 0", self.margin)));
        }
        Ok(())
    }
}

/// Feature-consistency loss between initial and generated embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct MseLoss {
    pub value: f64,
    pub grad_initial: Matrix,
    pub grad_generated: Matrix,
}

pub fn mse_consistency(f: &Matrix, f_prime: &Matrix, mode: MseMode) -> Result<MseLoss> {
    if f.shape() != f_prime.shape() {
        return Err(Error::Shape(format!(
            "feature-consistency inputs {:?} and {:?} differ",
            f.shape(),
            f_prime.shape()
        )));
    }
    let (b, d) = f.shape();
    let mut grad_initial = Matrix::zeros(b, d);
    let mut grad_generated = Matrix::zeros(b, d);
    if b == 0 {
        return Ok(MseLoss {
            value: 0.0,
            grad_initial,
            grad_generated,
        });
    }
    let mut value = 0.0;
    for i in 0..b {
        let diff: Vec<f64> = f.row(i).iter().zip(f_prime.row(i)).map(|(x, y)| x - y).collect();
        let sq: f64 = diff.iter().map(|v| v * v).sum();
        let scale = match mode {
            MseMode::L2Norm => {
                let norm = sq.sqrt();
                value += norm;
                if norm > NORM_EPS {
                    1.0 / (b as f64 * norm)
                } else {
                    0.0
                }
            }
            MseMode::SquaredL2 => {
                value += sq;
                2.0 / (b * d) as f64
            }
        };
        for (j, &dv) in diff.iter().enumerate() {
            grad_initial.row_mut(i)[j] = scale * dv;
            grad_generated.row_mut(i)[j] = -scale * dv;
        }
    }
    value /= match mode {
        MseMode::L2Norm => b as f64,
        MseMode::SquaredL2 => (b * d) as f64,
    };
    Ok(MseLoss {
        value,
        grad_initial,
        grad_generated,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEntropyLoss {
    pub value: f64,
    pub grad: Matrix,
}

/// Mean softmax cross-entropy over the rows of `logits`.
pub fn cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<CrossEntropyLoss> {
    let (n, k) = logits.shape();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} logit rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::Argument(format!("label {bad} outside 0..{k}")));
    }
    let mut grad = Matrix::zeros(n, k);
    if n == 0 {
        return Ok(CrossEntropyLoss { value: 0.0, grad });
    }
    let mut value = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|&z| (z - max).exp()).sum();
        let lse = max + sum.ln();
        value += lse - row[y];
        let g = grad.row_mut(i);
        for (j, &z) in row.iter().enumerate() {
            g[j] = (z - lse).exp() / n as f64;
        }
        g[y] -= 1.0 / n as f64;
    }
    Ok(CrossEntropyLoss {
        value: value / n as f64,
        grad,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletLoss {
    pub value: f64,
    pub grad: Matrix,
    pub hardest_positive: Vec<usize>,
    pub hardest_negative: Vec<usize>,
}

/// Batch-hard triplet loss with Euclidean distances.
///
/// For each anchor, the farthest same-identity sample and the nearest
/// other-identity sample are selected (ties go to the lowest index) and the
/// hinge `max(margin + d_pos - d_neg, 0)` is averaged over anchors.
pub fn batch_hard_triplet(f: &Matrix, labels: &[usize], margin: f64) -> Result<TripletLoss> {
    let (n, d) = f.shape();
    if labels.len() != n {
        return Err(Error::Shape(format!("{} labels for {n} embeddings", labels.len())));
    }
    let mut dist = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v = crate::tensor::euclidean(f.row(i), f.row(j));
            dist[i * n + j] = v;
            dist[j * n + i] = v;
        }
    }
    let mut grad = Matrix::zeros(n, d);
    let mut hardest_positive = Vec::with_capacity(n);
    let mut hardest_negative = Vec::with_capacity(n);
    let mut value = 0.0;
    for a in 0..n {
        let mut pos: Option<usize> = None;
        let mut neg: Option<usize> = None;
        for j in 0..n {
            if j == a {
                continue;
            }
            let dj = dist[a * n + j];
            if labels[j] == labels[a] {
                if pos.is_none_or(|p| dj > dist[a * n + p]) {
                    pos = Some(j);
                }
            } else if neg.is_none_or(|q| dj < dist[a * n + q]) {
                neg = Some(j);
            }
        }
        let (Some(p), Some(q)) = (pos, neg) else {
            return Err(Error::BatchComposition(format!(
                "anchor {a} (identity {}) has no {} in the batch",
                labels[a],
                if pos.is_none() { "positive" } else { "negative" }
            )));
        };
        hardest_positive.push(p);
        hardest_negative.push(q);
        let hinge = margin + dist[a * n + p] - dist[a * n + q];
        if hinge <= 0.0 {
            continue;
        }
        value += hinge;
        let scale = 1.0 / n as f64;
        for (other, sign) in [(p, 1.0), (q, -1.0)] {
            let dv = dist[a * n + other];
            if dv <= NORM_EPS {
                continue;
            }
            let k = sign * scale / dv;
            for j in 0..d {
                let u = k * (f.get(a, j) - f.get(other, j));
                grad.row_mut(a)[j] += u;
                grad.row_mut(other)[j] -= u;
            }
        }
    }
    Ok(TripletLoss {
        value: value / n.max(1) as f64,
        grad,
        hardest_positive,
        hardest_negative,
    })
}

/// Per-step loss breakdown. `mse` is `None` when the consistency term is
/// disabled.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossReport {
    pub mse: Option<f64>,
    pub ce: f64,
    pub triplet: f64,
    pub total: f64,
    #[serde(skip)]
    pub hardest_positive: Vec<usize>,
    #[serde(skip)]
    pub hardest_negative: Vec<usize>,
}

/// Unweighted sum of the three components.
pub fn total_loss(mse: Option<&MseLoss>, ce: &CrossEntropyLoss, triplet: &TripletLoss) -> LossReport {
    let m = mse.map(|l| l.value);
    LossReport {
        mse: m,
        ce: ce.value,
        triplet: triplet.value,
        total: m.unwrap_or(0.0) + ce.value + triplet.value,
        hardest_positive: triplet.hardest_positive.clone(),
        hardest_negative: triplet.hardest_negative.clone(),
    }
}

/// Losses and upstream gradients for one forward pass.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub report: LossReport,
    pub d_embeddings: Matrix,
    pub d_logits: Matrix,
}

/// Evaluates the full loss on a forward pass over `N` rows.
///
/// With `consistency_pairs = Some(b)`, rows `0..b` are initial samples and
/// rows `b..2b` their generated twins in the same order, and the
/// feature-consistency term is added over those pairs.
pub fn evaluate_losses(
    embeddings: &Matrix,
    logits: &Matrix,
    labels: &[usize],
    consistency_pairs: Option<usize>,
    cfg: &LossConfig,
) -> Result<LossOutput> {
    let ce = cross_entropy(logits, labels)?;
    let tri = batch_hard_triplet(embeddings, labels, cfg.margin)?;
    let mut d_embeddings = tri.grad.clone();
    let mse = match consistency_pairs {
        Some(b) => {
            if 2 * b != embeddings.rows() {
                return Err(Error::Shape(format!(
                    "{b} consistency pairs need {} rows, got {}",
                    2 * b,
                    embeddings.rows()
                )));
            }
            let m = mse_consistency(
                &embeddings.slice_rows(0, b),
                &embeddings.slice_rows(b, 2 * b),
                cfg.mse_mode,
            )?;
            let stacked = m.grad_initial.vstack(&m.grad_generated)?;
            d_embeddings.add_assign(&stacked);
            Some(m)
        }
        None => None,
    };
    let report = total_loss(mse.as_ref(), &ce, &tri);
    Ok(LossOutput {
        report,
        d_embeddings,
        d_logits: ce.grad,
    })
}
