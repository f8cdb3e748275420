//! Offline evaluation of treatment-assignment policies.
//!
//! Two estimators are provided.
//!
//! **Relative policy gain on randomized data** ([`evaluate_pmg`]): for each
//! arm `j` (including control), take the users the policy assigns to `j`,
//! and estimate their mean outcome under `j` from the *overlap* subset —
//! those among them that the trial actually randomized into arm `j`. Because
//! assignment in the trial is independent of everything else, the overlap
//! mean is an unbiased estimate for the whole policy-arm group. The policy
//! value is the count-weighted average of these means,
//!
//! ```text
//! V̂(π) = (1/N) Σ_j |A(j)| · mean{ Y_i : i ∈ A(j), T_i = j }
//! ```
//!
//! and the reported metric is the gain over the all-control baseline,
//! relative to the control-arm mean `μ̂0`: `(V̂(π) − μ̂0)/μ̂0`.
//!
//! **True effect on synthetic data** ([`evaluate_ite`]): with every
//! potential outcome known, the realized gain of an assignment is computed
//! exactly and normalized by the mean control outcome.
//!
//! [`budget_sweep`] runs a grid of policies × budgets against either
//! estimator and collects long-format rows suitable for CSV/JSON export.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{check_alignment, DatasetError, GroundTruth, RctDataset};
use crate::dgb::{AllocationProblem, Assignment, DgbError, Policy};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("assignment covers {got} users but the evaluation target has {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(
        "treatment {treatment} has no overlap: the policy assigns it, but no trial user \
         both received it and was assigned it"
    )]
    EmptyOverlap { treatment: u32 },
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("bad budget grid: {0}")]
    BadBudgets(String),
    #[error(transparent)]
    Allocation(#[from] DgbError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

// ── Randomized-data estimator ───────────────────────────────────────────────

/// Per-arm breakdown of a policy evaluation on randomized data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerTreatment {
    pub treatment: u32,
    /// Users the policy assigns to this arm.
    pub policy_count: usize,
    /// Among those, users the trial also randomized into this arm.
    pub overlap_count: usize,
    /// Mean observed outcome over the overlap; `None` when the policy
    /// assigns nobody to this arm.
    pub overlap_mean: Option<f64>,
}

/// Result of [`evaluate_pmg`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyEvaluation {
    /// Relative gain of the policy over all-control: `(V̂ − μ̂0)/μ̂0`.
    pub pmg: f64,
    /// Mean observed outcome of the full control arm, `μ̂0`.
    pub control_mean: f64,
    pub n_samples: usize,
    /// One entry per arm `0..=K`, ascending.
    pub per_treatment: Vec<PerTreatment>,
    /// Total cost of the assignment under the dataset's cost matrix.
    pub consumed_budget_estimate: f64,
}

impl PolicyEvaluation {
    /// Estimated policy value `V̂(π)`: count-weighted overlap means summed in
    /// ascending-arm order, divided by the number of users. The stored `pmg`
    /// equals `(value_estimate − control_mean) / control_mean` exactly.
    pub fn value_estimate(&self) -> f64 {
        let mut total = 0.0;
        for p in &self.per_treatment {
            if p.policy_count > 0 {
                total += p.policy_count as f64 * p.overlap_mean.unwrap_or(0.0);
            }
        }
        total / self.n_samples as f64
    }
}

/// Evaluates an assignment on randomized data via per-arm overlap means.
///
/// Fails when some arm is assigned by the policy but has no overlap users to
/// estimate from, or when the control mean is zero (the relative gain is
/// then undefined).
pub fn evaluate_pmg(
    assignment: &Assignment,
    data: &RctDataset,
) -> Result<PolicyEvaluation, EvalError> {
    let n = data.n_samples();
    if assignment.chosen.len() != n {
        return Err(EvalError::DimensionMismatch {
            expected: n,
            got: assignment.chosen.len(),
        });
    }
    let k = data.num_treatments();
    let arms = k + 1;

    let mut policy_count = vec![0usize; arms];
    let mut overlap_count = vec![0usize; arms];
    let mut overlap_sum = vec![0.0f64; arms];
    let mut control_sum = 0.0f64;
    let mut control_n = 0usize;
    let mut consumed = 0.0f64;

    let treatments = data.treatments();
    let outcomes = data.outcomes();
    for i in 0..n {
        let assigned = assignment.chosen[i] as usize;
        let received = treatments[i] as usize;
        policy_count[assigned] += 1;
        if assigned == received {
            overlap_count[assigned] += 1;
            overlap_sum[assigned] += outcomes[i];
        }
        if received == 0 {
            control_n += 1;
            control_sum += outcomes[i];
        }
        if assigned > 0 {
            consumed += data.cost(i, assigned);
        }
    }

    let control_mean = control_sum / control_n as f64;
    if control_mean == 0.0 {
        return Err(EvalError::Undefined(
            "the control-arm mean outcome is zero, so relative gain has no scale".into(),
        ));
    }

    let mut per_treatment = Vec::with_capacity(arms);
    for j in 0..arms {
        if policy_count[j] > 0 && overlap_count[j] == 0 {
            return Err(EvalError::EmptyOverlap { treatment: j as u32 });
        }
        per_treatment.push(PerTreatment {
            treatment: j as u32,
            policy_count: policy_count[j],
            overlap_count: overlap_count[j],
            overlap_mean: (policy_count[j] > 0).then(|| overlap_sum[j] / overlap_count[j] as f64),
        });
    }

    let mut evaluation = PolicyEvaluation {
        pmg: 0.0,
        control_mean,
        n_samples: n,
        per_treatment,
        consumed_budget_estimate: consumed,
    };
    evaluation.pmg = (evaluation.value_estimate() - control_mean) / control_mean;
    Ok(evaluation)
}

// ── Ground-truth estimator ──────────────────────────────────────────────────

/// Result of [`evaluate_ite`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IteEvaluation {
    /// Mean per-user gain of the assignment, relative to the mean control
    /// outcome: `raw_gain / mu_0`.
    pub tau_syn: f64,
    /// Mean control-arm potential outcome over all users.
    pub mu_0: f64,
    /// `(1/N) Σ_i (Y_i(j_i) − Y_i(0))`, zero terms for control users.
    pub raw_gain: f64,
}

/// Evaluates an assignment exactly against known potential outcomes.
pub fn evaluate_ite(
    assignment: &Assignment,
    truth: &GroundTruth,
) -> Result<IteEvaluation, EvalError> {
    let n = truth.n_samples();
    if assignment.chosen.len() != n {
        return Err(EvalError::DimensionMismatch {
            expected: n,
            got: assignment.chosen.len(),
        });
    }
    let mu_0 = truth.arm_mean(0);
    if mu_0 == 0.0 {
        return Err(EvalError::Undefined(
            "the mean control potential outcome is zero, so relative gain has no scale".into(),
        ));
    }
    let mut gain = 0.0f64;
    for (i, &arm) in assignment.chosen.iter().enumerate() {
        if arm > 0 {
            gain += truth.value(i, arm as usize) - truth.value(i, 0);
        }
    }
    let raw_gain = gain / n as f64;
    Ok(IteEvaluation {
        tau_syn: raw_gain / mu_0,
        mu_0,
        raw_gain,
    })
}

// ── Budget sweeps ───────────────────────────────────────────────────────────

/// A policy entry for [`budget_sweep`]: a display name, the effect matrix it
/// allocates on (row-major `N × K`), and the allocation procedure.
pub struct SweepPolicy<'a> {
    pub name: String,
    pub theta: &'a [f64],
    pub policy: Policy,
}

/// Which estimator scores the sweep.
pub enum SweepTarget<'a> {
    /// Overlap-based relative gain on the dataset itself.
    Rct,
    /// Exact relative gain against known potential outcomes.
    Synthetic(&'a GroundTruth),
}

/// One cell of a sweep: a policy run at one budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub budget: f64,
    pub policy: String,
    /// `"pmg"` or `"ite"` depending on the sweep target.
    pub metric_kind: String,
    /// The estimator's relative-gain value; `None` when this cell failed.
    pub metric: Option<f64>,
    pub consumed_budget: f64,
    pub n_treated: usize,
    /// Users per arm `0..=K` under the policy.
    pub arm_counts: Vec<usize>,
    /// Estimator failure for this cell, if any; other cells still run.
    pub error: Option<String>,
}

fn arm_counts(chosen: &[u32], num_treatments: usize) -> Vec<usize> {
    let mut counts = vec![0usize; num_treatments + 1];
    for &c in chosen {
        counts[c as usize] += 1;
    }
    counts
}

/// Runs every policy at every budget (budgets outermost, ascending) and
/// scores each assignment with the chosen estimator.
///
/// Budgets must be finite, strictly positive, and strictly ascending.
/// Estimator failures are captured per row; structural failures (bad effect
/// matrices, misaligned ground truth) abort the sweep.
pub fn budget_sweep(
    data: &RctDataset,
    policies: &[SweepPolicy],
    budgets: &[f64],
    target: &SweepTarget,
) -> Result<Vec<SweepRow>, EvalError> {
    if budgets.is_empty() {
        return Err(EvalError::BadBudgets("no budgets given".into()));
    }
    if budgets.iter().any(|b| !b.is_finite() || *b <= 0.0) {
        return Err(EvalError::BadBudgets(
            "budgets must be finite and strictly positive".into(),
        ));
    }
    if budgets.windows(2).any(|w| w[0] >= w[1]) {
        return Err(EvalError::BadBudgets(
            "budgets must be strictly ascending".into(),
        ));
    }
    let n = data.n_samples();
    let k = data.num_treatments();
    for p in policies {
        if p.theta.len() != n * k {
            return Err(EvalError::DimensionMismatch {
                expected: n * k,
                got: p.theta.len(),
            });
        }
    }
    if let SweepTarget::Synthetic(truth) = target {
        check_alignment(data, truth)?;
    }
    let metric_kind = match target {
        SweepTarget::Rct => "pmg",
        SweepTarget::Synthetic(_) => "ite",
    };

    let mut rows = Vec::with_capacity(budgets.len() * policies.len());
    for &budget in budgets {
        for p in policies {
            let problem =
                AllocationProblem::new(p.theta.to_vec(), data.costs().to_vec(), k, budget)?;
            let assignment = p.policy.assign(&problem)?;
            let scored: Result<f64, EvalError> = match target {
                SweepTarget::Rct => evaluate_pmg(&assignment, data).map(|e| e.pmg),
                SweepTarget::Synthetic(truth) => {
                    evaluate_ite(&assignment, truth).map(|e| e.tau_syn)
                }
            };
            let (metric, error) = match scored {
                Ok(v) => (Some(v), None),
                Err(e) => (None, Some(e.to_string())),
            };
            rows.push(SweepRow {
                budget,
                policy: p.name.clone(),
                metric_kind: metric_kind.to_string(),
                metric,
                consumed_budget: assignment.total_cost,
                n_treated: assignment.n_treated(),
                arm_counts: arm_counts(&assignment.chosen, k),
                error,
            });
        }
    }
    Ok(rows)
}

/// Writes sweep rows as long-format CSV with columns
/// `budget,policy,metric_kind,metric,consumed_budget,n_treated,error`.
/// Floats use the shortest exact decimal form; missing values are empty.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<(), EvalError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([
        "budget",
        "policy",
        "metric_kind",
        "metric",
        "consumed_budget",
        "n_treated",
        "error",
    ])?;
    for row in rows {
        writer.write_record([
            format!("{}", row.budget),
            row.policy.clone(),
            row.metric_kind.clone(),
            row.metric.map_or(String::new(), |m| format!("{m}")),
            format!("{}", row.consumed_budget),
            format!("{}", row.n_treated),
            row.error.clone().unwrap_or_default(),
        ])?;
    }
    writer.flush().map_err(|e| EvalError::Io(e))?;
    Ok(())
}

/// Writes sweep rows as a pretty-printed JSON array, including the per-arm
/// assignment counts that the CSV omits.
pub fn write_sweep_json(path: &Path, rows: &[SweepRow]) -> Result<(), EvalError> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), rows)?;
    Ok(())
}
