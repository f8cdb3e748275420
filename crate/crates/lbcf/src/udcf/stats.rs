//! Per-node treatment-effect statistics.
//!
//! Inside a tree node the `K` arm effects are estimated jointly by ordinary
//! least squares of the centered outcome on the centered one-hot treatment
//! encoding (control is the all-zero row, so it acts as the baseline):
//!
//! ```text
//! T̂ = T − mean(T)      Ŷ = Y − mean(Y)
//! A  = T̂'T̂ + ridge·I   θ̂ = A⁻¹ T̂'Ŷ
//! R  = Ŷ − T̂θ̂          ρ_i = R_i · (T̂ A⁻¹)_i
//! ```
//!
//! Because arms are mutually exclusive, `A` and `T̂'Ŷ` reduce to closed forms
//! in per-arm counts and outcome sums, so the whole computation is one pass
//! over the node plus an `O(K³)` solve. With `ridge = 0`, `θ̂_j` equals the
//! arm-`j` mean outcome minus the control mean exactly, and the per-sample
//! influence vectors `ρ_i` sum to zero in every column.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum UdcfError {
    #[error("degenerate node: {0}")]
    DegenerateNode(String),
    #[error("split score requires non-empty children")]
    EmptyChild,
    #[error("invalid training parameters: {0}")]
    BadParams(String),
    #[error("arm {arm} has {count} samples, below min_samples_per_arm_leaf={min}")]
    ArmStarvation {
        arm: usize,
        count: usize,
        min: usize,
    },
    #[error("feature dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unsupported model format version {0}")]
    BadVersion(u32),
    #[error("model i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("model encoding: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Joint effect estimate and influence vectors for one tree node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeStats {
    /// Estimated effect of each arm vs. control, length `K`.
    pub theta_hat: Vec<f64>,
    /// Regularized Gram matrix `T̂'T̂ + ridge·I`, row-major `K × K`.
    pub a_matrix: Vec<f64>,
    /// Influence vectors `ρ_i`, row-major `n × K`; row order matches the
    /// outcome/treatment slices the stats were computed from.
    pub rho: Vec<f64>,
    pub n: usize,
    pub mean_outcome: f64,
    /// Samples per arm, index 0 = control, length `K + 1`.
    pub treatment_counts: Vec<usize>,
}

// ── Small symmetric solves ──────────────────────────────────────────────────

/// Cholesky factor (lower triangular, row-major) of a symmetric
/// positive-definite `k × k` matrix; `None` if a pivot is not positive.
fn cholesky(a: &[f64], k: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..=i {
            let mut s = a[i * k + j];
            for p in 0..j {
                s -= l[i * k + p] * l[j * k + p];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * k + i] = s.sqrt();
            } else {
                l[i * k + j] = s / l[j * k + j];
            }
        }
    }
    Some(l)
}

/// Solves `L L' x = b` given the Cholesky factor.
fn chol_solve(l: &[f64], k: usize, b: &[f64]) -> Vec<f64> {
    let mut x = b.to_vec();
    for i in 0..k {
        for j in 0..i {
            x[i] -= l[i * k + j] * x[j];
        }
        x[i] /= l[i * k + i];
    }
    for i in (0..k).rev() {
        for j in i + 1..k {
            x[i] -= l[j * k + i] * x[j];
        }
        x[i] /= l[i * k + i];
    }
    x
}

/// Full symmetric inverse from the Cholesky factor.
fn chol_inverse(l: &[f64], k: usize) -> Vec<f64> {
    let mut inv = vec![0.0; k * k];
    let mut e = vec![0.0; k];
    for j in 0..k {
        e.fill(0.0);
        e[j] = 1.0;
        let col = chol_solve(l, k, &e);
        for i in 0..k {
            inv[i * k + j] = col[i];
        }
    }
    inv
}

/// Per-arm counts and outcome sums of a sample set (index 0 = control).
pub(crate) fn arm_moments(outcomes: &[f64], treatments: &[u32], k: usize) -> (Vec<usize>, Vec<f64>) {
    let mut counts = vec![0usize; k + 1];
    let mut sums = vec![0.0f64; k + 1];
    for (&y, &t) in outcomes.iter().zip(treatments) {
        counts[t as usize] += 1;
        sums[t as usize] += y;
    }
    (counts, sums)
}

/// Builds the regularized Gram matrix and right-hand side from arm moments.
fn design_system(counts: &[usize], sums: &[f64], ridge: f64) -> (Vec<f64>, Vec<f64>, f64) {
    let k = counts.len() - 1;
    let n: usize = counts.iter().sum();
    let total: f64 = sums.iter().sum();
    let ybar = total / n as f64;
    let nf = n as f64;
    let mut a = vec![0.0; k * k];
    let mut b = vec![0.0; k];
    for j in 0..k {
        let nj = counts[j + 1] as f64;
        for l in 0..k {
            let nl = counts[l + 1] as f64;
            a[j * k + l] = if j == l { nj } else { 0.0 } - nj * nl / nf;
        }
        a[j * k + j] += ridge;
        b[j] = sums[j + 1] - nj * ybar;
    }
    (a, b, ybar)
}

/// Effect vector from arm moments alone (used for split refinement, where
/// the influence vectors are not needed). `None` when an arm is empty or the
/// system cannot be factored.
pub(crate) fn theta_from_arm_moments(
    counts: &[usize],
    sums: &[f64],
    ridge: f64,
) -> Option<Vec<f64>> {
    if counts.iter().any(|&c| c == 0) {
        return None;
    }
    let k = counts.len() - 1;
    let (a, b, _) = design_system(counts, sums, ridge);
    let l = cholesky(&a, k)?;
    Some(chol_solve(&l, k, &b))
}

/// Computes the joint arm-effect estimate and influence vectors for a node.
///
/// `outcomes` and `treatments` are the node's samples in a fixed order; `ρ`
/// rows come back in the same order. Errors with [`UdcfError::DegenerateNode`]
/// when any arm (control included) has no samples, or when the Gram matrix
/// cannot be factored with the given ridge.
pub fn compute_node_stats(
    outcomes: &[f64],
    treatments: &[u32],
    num_treatments: usize,
    ridge_epsilon: f64,
) -> Result<NodeStats, UdcfError> {
    assert_eq!(outcomes.len(), treatments.len());
    let n = outcomes.len();
    let k = num_treatments;
    if n == 0 {
        return Err(UdcfError::DegenerateNode("empty node".into()));
    }
    let (counts, sums) = arm_moments(outcomes, treatments, k);
    if let Some(arm) = counts.iter().position(|&c| c == 0) {
        return Err(UdcfError::DegenerateNode(format!(
            "arm {arm} has no samples in this node"
        )));
    }

    let (a, b, ybar) = design_system(&counts, &sums, ridge_epsilon);
    let l = cholesky(&a, k).ok_or_else(|| {
        UdcfError::DegenerateNode("design matrix is not positive definite".into())
    })?;
    let theta = chol_solve(&l, k, &b);
    let m = chol_inverse(&l, k);

    // p_j = arm share; pm = p'M and p'θ, the control-row corrections.
    let nf = n as f64;
    let p: Vec<f64> = (1..=k).map(|j| counts[j] as f64 / nf).collect();
    let mut pm = vec![0.0; k];
    for j in 0..k {
        for c in 0..k {
            pm[c] += p[j] * m[j * k + c];
        }
    }
    let p_dot_theta: f64 = p.iter().zip(&theta).map(|(pj, tj)| pj * tj).sum();

    let mut rho = vec![0.0; n * k];
    for i in 0..n {
        let t = treatments[i] as usize;
        let fitted = if t > 0 { theta[t - 1] } else { 0.0 } - p_dot_theta;
        let resid = (outcomes[i] - ybar) - fitted;
        let row = &mut rho[i * k..(i + 1) * k];
        if t > 0 {
            let mrow = &m[(t - 1) * k..t * k];
            for c in 0..k {
                row[c] = resid * (mrow[c] - pm[c]);
            }
        } else {
            for c in 0..k {
                row[c] = resid * (-pm[c]);
            }
        }
    }

    Ok(NodeStats {
        theta_hat: theta,
        a_matrix: a,
        rho,
        n,
        mean_outcome: ybar,
        treatment_counts: counts,
    })
}
