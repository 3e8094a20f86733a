//! Central finite-difference check of the analytic network + loss gradients.
//!
//! Only the forward pass and loss values are used to build the numerical
//! gradient. A coordinate is skipped when perturbing it by `±eps` changes
//! the piecewise regime of the objective (a ReLU sign, a hardest
//! positive/negative choice, a hinge switching on or off, or an L2 norm
//! collapsing to zero), since the derivative is not defined there.

use std::collections::BTreeSet;

use crate::error::Result;
use crate::losses::{evaluate_losses, LossConfig};
use crate::model::EmbeddingNet;
use crate::tensor::{euclidean, Image};

/// Gradients whose magnitudes are both below this are compared absolutely.
pub const ABS_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct GradCheckProblem {
    pub inputs: Vec<Image>,
    pub labels: Vec<usize>,
    /// Consistency pairs `(i, i + b)` when `Some(b)`.
    pub pairs: Option<usize>,
    pub loss: LossConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub skipped: usize,
    pub max_rel_error: f64,
    /// Tensor name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub analytic_at_worst: f64,
    pub numeric_at_worst: f64,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_error < tol
    }
}

#[derive(Debug, PartialEq)]
struct Regime {
    relu: Vec<bool>,
    hardest: Vec<(usize, usize)>,
    hinge_on: Vec<bool>,
    pair_zero: Vec<bool>,
}

fn objective(net: &EmbeddingNet, p: &GradCheckProblem) -> Result<(f64, Regime)> {
    let out = net.forward(&p.inputs)?;
    let losses = evaluate_losses(&out.embeddings, &out.logits, &p.labels, p.pairs, &p.loss)?;
    let r = &losses.report;
    let e = &out.embeddings;
    let hinge_on = (0..e.rows())
        .map(|a| {
            let dp = euclidean(e.row(a), e.row(r.hardest_positive[a]));
            let dn = euclidean(e.row(a), e.row(r.hardest_negative[a]));
            p.loss.margin + dp - dn > 0.0
        })
        .collect();
    let pair_zero = match p.pairs {
        Some(b) => (0..b).map(|i| euclidean(e.row(i), e.row(i + b)) < 1e-6).collect(),
        None => Vec::new(),
    };
    let regime = Regime {
        relu: out.activation_pattern(),
        hardest: r.hardest_positive.iter().copied().zip(r.hardest_negative.iter().copied()).collect(),
        hinge_on,
        pair_zero,
    };
    Ok((r.total, regime))
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < ABS_FLOOR {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

/// Compares every parameter coordinate's analytic gradient with a central
/// difference of step `eps`.
pub fn check_gradients(net: &EmbeddingNet, problem: &GradCheckProblem, eps: f64) -> Result<GradCheckReport> {
    let out = net.forward(&problem.inputs)?;
    let losses = evaluate_losses(&out.embeddings, &out.logits, &problem.labels, problem.pairs, &problem.loss)?;
    let grads = net.backward(&out, &losses.d_embeddings, &losses.d_logits, &BTreeSet::new())?;
    let (_, base_regime) = objective(net, problem)?;

    let mut report = GradCheckReport {
        checked: 0,
        skipped: 0,
        max_rel_error: 0.0,
        worst: None,
        analytic_at_worst: 0.0,
        numeric_at_worst: 0.0,
    };
    if base_regime.pair_zero.iter().any(|&z| z) {
        // A twin pair sits on the norm singularity for every coordinate.
        report.skipped = net.params().num_values();
        return Ok(report);
    }
    let mut probe = net.clone();
    for (t_idx, tensor) in net.params().tensors().iter().enumerate() {
        for k in 0..tensor.data.len() {
            let orig = tensor.data[k];
            probe.params_mut().tensors_mut()[t_idx].data[k] = orig + eps;
            let (plus, regime_plus) = objective(&probe, problem)?;
            probe.params_mut().tensors_mut()[t_idx].data[k] = orig - eps;
            let (minus, regime_minus) = objective(&probe, problem)?;
            probe.params_mut().tensors_mut()[t_idx].data[k] = orig;
            if regime_plus != base_regime || regime_minus != base_regime {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * eps);
            let analytic = grads.tensors()[t_idx].data[k];
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                if err >= report.max_rel_error {
                    report.worst = Some((tensor.name.clone(), k));
                    report.analytic_at_worst = analytic;
                    report.numeric_at_worst = numeric;
                }
            }
        }
    }
    Ok(report)
}
