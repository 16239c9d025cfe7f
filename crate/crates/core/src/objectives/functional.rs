//! Losses as plain functions of model outputs (token log-probabilities and
//! summary representations), each returning its value together with the
//! gradient with respect to those outputs.

use super::ObjectiveError;

/// Which side of the contrastive set a representation came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SetMember {
    Positive(usize),
    Negative(usize),
}

/// `-sum_i log p_i`.
pub fn sequence_nll(logprobs: &[f64]) -> f64 {
    -logprobs.iter().sum::<f64>()
}

/// `(1/m) sum_i log p_i`.
pub fn length_normalized_score(logprobs: &[f64]) -> Result<f64, ObjectiveError> {
    if logprobs.is_empty() {
        return Err(ObjectiveError::EmptySummary);
    }
    Ok(logprobs.iter().sum::<f64>() / logprobs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginOutput {
    pub value: f64,
    /// Subgradient with respect to each positive score.
    pub grad_positive: Vec<f64>,
    /// Subgradient with respect to each negative score.
    pub grad_negative: Vec<f64>,
}

/// `max{0, theta + max(neg) - min(pos)}`. When active, the gradient flows to
/// the first minimising positive and the first maximising negative.
pub fn margin_hinge(positive: &[f64], negative: &[f64], theta: f64) -> Result<MarginOutput, ObjectiveError> {
    if positive.is_empty() {
        return Err(ObjectiveError::EmptyPositives);
    }
    if negative.is_empty() {
        return Err(ObjectiveError::EmptyNegatives);
    }
    let worst_pos = arg_by(positive, |a, b| a < b);
    let best_neg = arg_by(negative, |a, b| a > b);
    let gap = theta + negative[best_neg] - positive[worst_pos];
    let mut grad_positive = vec![0.0; positive.len()];
    let mut grad_negative = vec![0.0; negative.len()];
    let value = if gap > 0.0 {
        grad_positive[worst_pos] = -1.0;
        grad_negative[best_neg] = 1.0;
        gap
    } else {
        0.0
    };
    Ok(MarginOutput {
        value,
        grad_positive,
        grad_negative,
    })
}

fn arg_by(xs: &[f64], better: impl Fn(f64, f64) -> bool) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if better(x, xs[best]) {
            best = i;
        }
    }
    best
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    dot(a, b) / (norm(a) * norm(b))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairOutput {
    pub value: f64,
    pub grad_positive: Vec<Vec<f64>>,
    pub grad_negative: Vec<Vec<f64>>,
}

/// Contrastive loss over cosine similarities with temperature `tau`.
///
/// For every ordered pair of distinct positives `(i, j)`:
///
/// ```text
/// -log( exp(cos(h_i, h_j)/tau) / sum_{k in P+N, k != i} exp(cos(h_i, h_k)/tau) )
/// ```
///
/// averaged over the `|P|(|P|-1)` ordered pairs. A single positive has no
/// pairs and yields zero.
pub fn pair_contrast(positive: &[Vec<f64>], negative: &[Vec<f64>], tau: f64) -> Result<PairOutput, ObjectiveError> {
    if positive.is_empty() {
        return Err(ObjectiveError::EmptyPositives);
    }
    if !(tau > 0.0) {
        return Err(ObjectiveError::InvalidConfig(format!("tau must be positive, got {tau}")));
    }
    let all: Vec<&[f64]> = positive.iter().chain(negative).map(Vec::as_slice).collect();
    let member = |k: usize| {
        if k < positive.len() {
            SetMember::Positive(k)
        } else {
            SetMember::Negative(k - positive.len())
        }
    };
    let dim = all[0].len();
    let mut norms = Vec::with_capacity(all.len());
    for (k, v) in all.iter().enumerate() {
        if v.len() != dim {
            return Err(ObjectiveError::InvalidConfig(format!(
                "representation {:?} has width {} instead of {dim}",
                member(k),
                v.len()
            )));
        }
        let n = norm(v);
        if n == 0.0 || !n.is_finite() {
            return Err(ObjectiveError::ZeroNorm(member(k)));
        }
        norms.push(n);
    }
    let n_pos = positive.len();
    let mut grads: Vec<Vec<f64>> = vec![vec![0.0; dim]; all.len()];
    if n_pos < 2 {
        return Ok(PairOutput {
            value: 0.0,
            grad_positive: grads[..n_pos].to_vec(),
            grad_negative: grads[n_pos..].to_vec(),
        });
    }
    let pairs = (n_pos * (n_pos - 1)) as f64;
    let mut total = 0.0;
    for i in 0..n_pos {
        let sims: Vec<f64> = (0..all.len())
            .map(|k| if k == i { 0.0 } else { dot(all[i], all[k]) / (norms[i] * norms[k]) })
            .collect();
        let max = (0..all.len())
            .filter(|&k| k != i)
            .map(|k| sims[k] / tau)
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..all.len()).filter(|&k| k != i).map(|k| (sims[k] / tau - max).exp()).sum();
        let log_denom = max + denom.ln();
        for j in (0..n_pos).filter(|&j| j != i) {
            total += log_denom - sims[j] / tau;
        }
        // d(sum_j term_ij)/d sim_ik = ((|P|-1) softmax_k - [k in P]) / tau
        for k in (0..all.len()).filter(|&k| k != i) {
            let softmax = (sims[k] / tau - log_denom).exp();
            let indicator = if k < n_pos { 1.0 } else { 0.0 };
            let g_sim = ((n_pos - 1) as f64 * softmax - indicator) / (tau * pairs);
            if g_sim == 0.0 {
                continue;
            }
            // d cos(a,b)/da = b/(|a||b|) - cos * a/|a|^2
            let (a, b) = (all[i], all[k]);
            let c = sims[k];
            for d in 0..dim {
                grads[i][d] += g_sim * (b[d] / (norms[i] * norms[k]) - c * a[d] / (norms[i] * norms[i]));
                grads[k][d] += g_sim * (a[d] / (norms[i] * norms[k]) - c * b[d] / (norms[k] * norms[k]));
            }
        }
    }
    let grad_negative = grads.split_off(n_pos);
    Ok(PairOutput {
        value: total / pairs,
        grad_positive: grads,
        grad_negative,
    })
}
