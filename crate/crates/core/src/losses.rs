//! Recommendation losses as maps from prediction scores to a batch-mean loss
//! value and its exact gradient with respect to every score.
//!
//! A batch row holds one positive score `f(u,i)` and a row of negative scores
//! `f(u,j)`. The softmax-family losses use a max-shifted log-sum-exp over the
//! negatives of a row; the denominator is a sum over the sampled negatives and
//! does not include the positive.

use std::ops::Range;

use crate::config::{BslForm, GroupReduction, LossKind, LossSpec};
use crate::error::{Error, Result};

/// Smallest temperature accepted by the softmax-family losses.
pub const MIN_TAU: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreBatch {
    pos: Vec<f64>,
    neg: Vec<Vec<f64>>,
}

impl ScoreBatch {
    /// `neg[r]` holds the negative scores paired with `pos[r]`. Rows may differ
    /// in width but none may be empty.
    pub fn new(pos: Vec<f64>, neg: Vec<Vec<f64>>) -> Result<Self> {
        if pos.len() != neg.len() {
            return Err(Error::InvalidArgument(format!(
                "{} positive scores but {} negative rows",
                pos.len(),
                neg.len()
            )));
        }
        if pos.is_empty() {
            return Err(Error::InvalidArgument("empty score batch".into()));
        }
        if neg.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument("a row has no negative scores".into()));
        }
        if !pos.iter().chain(neg.iter().flatten()).all(|s| s.is_finite()) {
            return Err(Error::InvalidArgument("non-finite score".into()));
        }
        Ok(ScoreBatch { pos, neg })
    }

    pub fn pos(&self) -> &[f64] {
        &self.pos
    }

    pub fn neg(&self) -> &[Vec<f64>] {
        &self.neg
    }

    pub fn len(&self) -> usize {
        self.pos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pos.is_empty()
    }

    fn n_neg_total(&self) -> usize {
        self.neg.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossResult {
    pub value: f64,
    pub grad_pos: Vec<f64>,
    pub grad_neg: Vec<Vec<f64>>,
}

impl LossResult {
    fn zeros_like(b: &ScoreBatch) -> Self {
        LossResult {
            value: 0.0,
            grad_pos: vec![0.0; b.len()],
            grad_neg: b.neg.iter().map(|r| vec![0.0; r.len()]).collect(),
        }
    }

    /// Gradient flattened as `[grad_pos..., grad_neg row 0..., row 1..., ...]`.
    pub fn flat_grad(&self) -> Vec<f64> {
        self.grad_pos
            .iter()
            .chain(self.grad_neg.iter().flatten())
            .copied()
            .collect()
    }
}

/// `log(sigmoid(x))` without overflow for large `|x|`.
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Max-shifted `log(sum_j exp(x_j))`.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `softmax(xs / tau)` together with `log sum_j exp(x_j / tau)`.
pub fn tempered_softmax(xs: &[f64], tau: f64) -> (Vec<f64>, f64) {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = xs.iter().map(|x| ((x - max) / tau).exp()).collect();
    let z: f64 = shifted.iter().sum();
    let lse = max / tau + z.ln();
    (shifted.into_iter().map(|e| e / z).collect(), lse)
}

fn check_tau(name: &str, tau: f64) -> Result<()> {
    if tau >= MIN_TAU && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "{name} must be finite and >= {MIN_TAU:e}, got {tau}"
        )))
    }
}

/// Pairwise BPR: `-mean over (pos, neg) pairs of log sigmoid(f_i - f_j)`.
pub fn bpr_loss(b: &ScoreBatch) -> LossResult {
    let mut out = LossResult::zeros_like(b);
    let n_pairs = b.n_neg_total() as f64;
    let mut total = 0.0;
    for (r, (&p, row)) in b.pos.iter().zip(&b.neg).enumerate() {
        for (j, &n) in row.iter().enumerate() {
            let d = p - n;
            total -= log_sigmoid(d);
            // d/dd -log sigmoid(d) = -sigmoid(-d)
            let g = sigmoid(-d) / n_pairs;
            out.grad_pos[r] -= g;
            out.grad_neg[r][j] = g;
        }
    }
    out.value = total / n_pairs;
    out
}

/// Pointwise binary cross-entropy with negative weight `c`.
pub fn bce_loss(b: &ScoreBatch, c: f64) -> Result<LossResult> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("balance c must be >= 0, got {c}")));
    }
    let mut out = LossResult::zeros_like(b);
    let n_pos = b.len() as f64;
    let n_neg = b.n_neg_total() as f64;
    let mut pos_part = 0.0;
    let mut neg_part = 0.0;
    for (r, (&p, row)) in b.pos.iter().zip(&b.neg).enumerate() {
        pos_part -= log_sigmoid(p);
        out.grad_pos[r] = -sigmoid(-p) / n_pos;
        for (j, &n) in row.iter().enumerate() {
            // -log(1 - sigmoid(n)) = -log sigmoid(-n)
            neg_part -= log_sigmoid(-n);
            out.grad_neg[r][j] = c * sigmoid(n) / n_neg;
        }
    }
    out.value = pos_part / n_pos + c * neg_part / n_neg;
    Ok(out)
}

/// Pointwise squared error against targets 1 (positives) and 0 (negatives).
pub fn mse_loss(b: &ScoreBatch, c: f64) -> Result<LossResult> {
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::InvalidArgument(format!("balance c must be >= 0, got {c}")));
    }
    let mut out = LossResult::zeros_like(b);
    let n_pos = b.len() as f64;
    let n_neg = b.n_neg_total() as f64;
    let mut pos_part = 0.0;
    let mut neg_part = 0.0;
    for (r, (&p, row)) in b.pos.iter().zip(&b.neg).enumerate() {
        pos_part += (p - 1.0).powi(2);
        out.grad_pos[r] = 2.0 * (p - 1.0) / n_pos;
        for (j, &n) in row.iter().enumerate() {
            neg_part += n * n;
            out.grad_neg[r][j] = 2.0 * c * n / n_neg;
        }
    }
    out.value = pos_part / n_pos + c * neg_part / n_neg;
    Ok(out)
}

/// Softmax loss: per row `-f_i + tau * log sum_j exp(f_j / tau)`, batch-meaned.
///
/// The gradient over a row of negatives is the tempered softmax of that row
/// divided by the batch size.
pub fn softmax_loss(b: &ScoreBatch, tau: f64) -> Result<LossResult> {
    check_tau("tau", tau)?;
    let mut out = LossResult::zeros_like(b);
    let n = b.len() as f64;
    let mut total = 0.0;
    for (r, (&p, row)) in b.pos.iter().zip(&b.neg).enumerate() {
        let (weights, lse) = tempered_softmax(row, tau);
        total += -p + tau * lse;
        out.grad_pos[r] = -1.0 / n;
        for (g, w) in out.grad_neg[r].iter_mut().zip(weights) {
            *g = w / n;
        }
    }
    out.value = total / n;
    Ok(out)
}

/// Softmax loss with the variance penalty dropped: per row `-f_i + mean_j f_j`.
///
/// This is the first-order term of the large-temperature expansion of
/// [`softmax_loss`]; the parameter-independent terms are omitted.
pub fn softmax_loss_no_variance(b: &ScoreBatch, tau: f64) -> Result<LossResult> {
    check_tau("tau", tau)?;
    if b.neg.iter().any(|r| r.len() < 2) {
        return Err(Error::InvalidArgument(
            "variance ablation needs at least 2 negatives per row".into(),
        ));
    }
    let mut out = LossResult::zeros_like(b);
    let n = b.len() as f64;
    let mut total = 0.0;
    for (r, (&p, row)) in b.pos.iter().zip(&b.neg).enumerate() {
        let width = row.len() as f64;
        total += -p + row.iter().sum::<f64>() / width;
        out.grad_pos[r] = -1.0 / n;
        out.grad_neg[r].fill(1.0 / (width * n));
    }
    out.value = total / n;
    Ok(out)
}

/// Bilateral softmax loss, one positive per row: `-f_i / tau_pos + (tau_pos / tau_neg) * log sum_j exp(f_j / tau_neg)`.
///
/// With `tau_pos == tau_neg == tau` this is exactly `softmax_loss / tau`.
pub fn bsl_loss_pseudocode(b: &ScoreBatch, tau_pos: f64, tau_neg: f64) -> Result<LossResult> {
    check_tau("tau_pos", tau_pos)?;
    check_tau("tau_neg", tau_neg)?;
    let mut out = LossResult::zeros_like(b);
    let n = b.len() as f64;
    let ratio = tau_pos / tau_neg;
    let mut total = 0.0;
    for (r, (&p, row)) in b.pos.iter().zip(&b.neg).enumerate() {
        let (weights, lse) = tempered_softmax(row, tau_neg);
        total += -p / tau_pos + ratio * lse;
        out.grad_pos[r] = -1.0 / (tau_pos * n);
        for (g, w) in out.grad_neg[r].iter_mut().zip(weights) {
            *g = ratio * w / (tau_neg * n);
        }
    }
    out.value = total / n;
    Ok(out)
}

/// Bilateral softmax loss in its log-expectation-exp form.
///
/// `groups` partitions the rows into contiguous runs that share a user. For a
/// group `g` the loss is
/// `-tau_pos * log mean_{r in g} exp(f_r / tau_pos) + mean_{r in g} tau_neg * log sum_j exp(f_rj / tau_neg)`,
/// so a singleton group reduces to the softmax loss at `tau_neg`.
pub fn bsl_loss_canonical(
    b: &ScoreBatch,
    groups: &[Range<usize>],
    tau_pos: f64,
    tau_neg: f64,
    reduction: GroupReduction,
) -> Result<LossResult> {
    check_tau("tau_pos", tau_pos)?;
    check_tau("tau_neg", tau_neg)?;
    check_partition(groups, b.len())?;
    let mut out = LossResult::zeros_like(b);
    let n_rows = b.len() as f64;
    let n_groups = groups.len() as f64;
    let mut total = 0.0;
    for g in groups {
        let size = g.len() as f64;
        let weight = match reduction {
            GroupReduction::MeanOverGroups => 1.0 / n_groups,
            GroupReduction::MeanOverRows => size / n_rows,
        };
        let (pos_weights, pos_lse) = tempered_softmax(&b.pos[g.clone()], tau_pos);
        let mut group_value = -tau_pos * (pos_lse - size.ln());
        for (r, pw) in g.clone().zip(pos_weights) {
            out.grad_pos[r] = -pw * weight;
            let (neg_weights, lse) = tempered_softmax(&b.neg[r], tau_neg);
            group_value += tau_neg * lse / size;
            for (gn, w) in out.grad_neg[r].iter_mut().zip(neg_weights) {
                *gn = w * weight / size;
            }
        }
        total += weight * group_value;
    }
    out.value = total;
    Ok(out)
}

fn check_partition(groups: &[Range<usize>], n: usize) -> Result<()> {
    let mut next = 0;
    for g in groups {
        if g.is_empty() {
            return Err(Error::InvalidArgument("BSL group with zero positives".into()));
        }
        if g.start != next {
            return Err(Error::InvalidArgument(
                "BSL groups must be contiguous and cover every row once".into(),
            ));
        }
        next = g.end;
    }
    if next != n {
        return Err(Error::InvalidArgument(format!(
            "BSL groups cover {next} of {n} rows"
        )));
    }
    Ok(())
}

/// One group per row.
pub fn singleton_groups(n: usize) -> Vec<Range<usize>> {
    (0..n).map(|r| r..r + 1).collect()
}

/// Dispatches on `spec.kind`. `groups` is only consulted by the canonical BSL
/// form; `None` means one group per row.
pub fn compute_loss(
    spec: &LossSpec,
    b: &ScoreBatch,
    groups: Option<&[Range<usize>]>,
) -> Result<LossResult> {
    match spec.kind {
        LossKind::Bpr => Ok(bpr_loss(b)),
        LossKind::Bce => bce_loss(b, spec.bce_mse_balance),
        LossKind::Mse => mse_loss(b, spec.bce_mse_balance),
        LossKind::Sl => softmax_loss(b, spec.tau),
        LossKind::SlNoVariance => softmax_loss_no_variance(b, spec.tau),
        LossKind::Bsl => match spec.bsl_form {
            BslForm::Pseudocode => bsl_loss_pseudocode(b, spec.tau_pos, spec.tau_neg),
            BslForm::Canonical => match groups {
                Some(g) => bsl_loss_canonical(b, g, spec.tau_pos, spec.tau_neg, spec.group_reduction),
                None => bsl_loss_canonical(
                    b,
                    &singleton_groups(b.len()),
                    spec.tau_pos,
                    spec.tau_neg,
                    spec.group_reduction,
                ),
            },
        },
    }
}
