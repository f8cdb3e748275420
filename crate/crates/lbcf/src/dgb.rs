//! Budget-constrained treatment allocation.
//!
//! Given an estimated effect `θ_ij` and a known cost `c_ij` for giving user
//! `i` treatment `j`, the allocation problem is a multiple-choice knapsack:
//! pick at most one arm per user, maximize total effect, and keep the total
//! cost within the budget `B`. The main solver (DGB, dual gradient bisection)
//! works on the Lagrangian dual
//!
//! ```text
//! L(λ) = Σ_i max(0, max_j (θ_ij − λ·c_ij)) + λ·B
//! ```
//!
//! which is convex in `λ` and decomposes across users, so one evaluation is
//! `O(N·K)` and parallelizes trivially. The subgradient `L'(λ) = B − Σ`
//! (cost of users selected at `λ`) is positive for `λ` above every
//! effect-to-cost ratio and negative near zero whenever the budget actually
//! binds, so the minimizer is bracketed by `[0, max_ij θ_ij/c_ij]` and found
//! by bisection in `⌊log2(range/ε)⌋ + 1` derivative evaluations.
//!
//! The primal assignment reads each user's best arm at `λ*` (control when no
//! margin is strictly positive). Because `λ*` is only ε-accurate, the
//! selection can overshoot the budget by a sliver; a repair pass then demotes
//! selected users with the smallest margin until the budget holds, and flags
//! the assignment as repaired.
//!
//! Baselines: exhaustive search for small instances, and the two greedy
//! heuristics commonly used in practice (best effect-to-cost ratio per user,
//! and largest raw effect per user).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DgbError {
    #[error("invalid allocation problem: {0}")]
    Invalid(String),
    #[error("epsilon must be positive and finite, got {0}")]
    BadEpsilon(f64),
    #[error(
        "instance too large for exhaustive search: {combinations:.3e} assignments exceed {limit:.1e}"
    )]
    TooLarge { combinations: f64, limit: f64 },
}

/// Exhaustive-search guard: `(K+1)^N` may not exceed this.
pub const BRUTE_FORCE_LIMIT: f64 = 1e7;

/// Fixed reduction chunk; summations are chunked deterministically so results
/// do not depend on the number of worker threads.
const REDUCE_CHUNK: usize = 8192;

/// Sum of `term(i)` for `i in 0..n` with a fixed chunked evaluation order.
fn deterministic_par_sum(n: usize, term: impl Fn(usize) -> f64 + Sync) -> f64 {
    let n_chunks = n.div_ceil(REDUCE_CHUNK).max(1);
    let partials: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let lo = c * REDUCE_CHUNK;
            let hi = ((c + 1) * REDUCE_CHUNK).min(n);
            (lo..hi).map(&term).sum::<f64>()
        })
        .collect();
    partials.iter().sum()
}

// ── Problem and assignment types ────────────────────────────────────────────

/// A budget-constrained treatment-selection instance.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationProblem {
    n_users: usize,
    num_treatments: usize,
    theta: Vec<f64>, // row-major N × K
    cost: Vec<f64>,  // row-major N × K, strictly positive
    budget: f64,
}

impl AllocationProblem {
    /// Validates shapes, finiteness, strictly positive costs, and a
    /// nonnegative budget.
    pub fn new(
        theta: Vec<f64>,
        cost: Vec<f64>,
        num_treatments: usize,
        budget: f64,
    ) -> Result<Self, DgbError> {
        if num_treatments == 0 {
            return Err(DgbError::Invalid("need at least one treatment arm".into()));
        }
        if theta.is_empty() || theta.len() % num_treatments != 0 || theta.len() != cost.len() {
            return Err(DgbError::Invalid(format!(
                "effect/cost shape mismatch: {} and {} entries for K={num_treatments}",
                theta.len(),
                cost.len()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(DgbError::Invalid("effects must be finite".into()));
        }
        if cost.iter().any(|c| !c.is_finite() || *c <= 0.0) {
            return Err(DgbError::Invalid(
                "costs must be finite and strictly positive".into(),
            ));
        }
        if !budget.is_finite() || budget < 0.0 {
            return Err(DgbError::Invalid(format!(
                "budget must be a nonnegative real, got {budget}"
            )));
        }
        Ok(Self {
            n_users: theta.len() / num_treatments,
            num_treatments,
            theta,
            cost,
            budget,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn num_treatments(&self) -> usize {
        self.num_treatments
    }

    pub fn budget(&self) -> f64 {
        self.budget
    }

    /// Estimated effect of treatment `arm ∈ 1..=K` on user `i`.
    pub fn theta(&self, i: usize, arm: u32) -> f64 {
        self.theta[i * self.num_treatments + (arm as usize - 1)]
    }

    /// Cost of treatment `arm ∈ 1..=K` for user `i`.
    pub fn cost(&self, i: usize, arm: u32) -> f64 {
        self.cost[i * self.num_treatments + (arm as usize - 1)]
    }

    /// Same instance with a different budget.
    pub fn with_budget(&self, budget: f64) -> Result<Self, DgbError> {
        Self::new(
            self.theta.clone(),
            self.cost.clone(),
            self.num_treatments,
            budget,
        )
    }

    /// Largest effect-to-cost ratio over pairs with positive effect;
    /// an upper bound for the dual minimizer. Zero when no effect is positive.
    pub fn max_ratio(&self) -> f64 {
        let mut best = 0.0f64;
        for (t, c) in self.theta.iter().zip(&self.cost) {
            if *t > 0.0 {
                best = best.max(t / c);
            }
        }
        best
    }

    /// Cost of giving every user their most expensive arm; the budget binds
    /// only below this.
    pub fn total_max_cost(&self) -> f64 {
        deterministic_par_sum(self.n_users, |i| {
            (1..=self.num_treatments as u32)
                .map(|j| self.cost(i, j))
                .fold(f64::MIN, f64::max)
        })
    }

    pub fn budget_binds(&self) -> bool {
        self.budget < self.total_max_cost()
    }

    /// Best arm of user `i` at multiplier `lambda`: the arm with the largest
    /// margin `θ − λ·c` (lowest index on ties), provided that margin is
    /// strictly positive; `None` means the user stays in control. An exact
    /// zero margin is treated as not selected.
    pub fn best_arm(&self, i: usize, lambda: f64) -> Option<(u32, f64)> {
        let mut best_arm = 1u32;
        let mut best_margin = f64::MIN;
        for j in 1..=self.num_treatments as u32 {
            let margin = self.theta(i, j) - lambda * self.cost(i, j);
            if margin > best_margin {
                best_margin = margin;
                best_arm = j;
            }
        }
        (best_margin > 0.0).then_some((best_arm, best_margin))
    }
}

/// A per-user arm assignment (0 = control) with its realized totals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// Chosen arm per user, 0 for control.
    pub chosen: Vec<u32>,
    /// Sum of `θ` over treated users.
    pub total_value: f64,
    /// Sum of `c` over treated users.
    pub total_cost: f64,
    /// Dual multiplier that produced the assignment, if one was used.
    pub lambda_star: Option<f64>,
    /// True when the budget-repair pass demoted at least one user.
    pub repaired: bool,
}

impl Assignment {
    /// Builds an assignment from chosen arms, recomputing both totals by a
    /// deterministic ascending-index sum.
    pub fn from_chosen(
        problem: &AllocationProblem,
        chosen: Vec<u32>,
        lambda_star: Option<f64>,
        repaired: bool,
    ) -> Assignment {
        debug_assert_eq!(chosen.len(), problem.n_users());
        let total_value = deterministic_par_sum(problem.n_users(), |i| match chosen[i] {
            0 => 0.0,
            j => problem.theta(i, j),
        });
        let total_cost = deterministic_par_sum(problem.n_users(), |i| match chosen[i] {
            0 => 0.0,
            j => problem.cost(i, j),
        });
        Assignment {
            chosen,
            total_value,
            total_cost,
            lambda_star,
            repaired,
        }
    }

    pub fn n_treated(&self) -> usize {
        self.chosen.iter().filter(|&&c| c > 0).count()
    }
}

// ── Dual function ───────────────────────────────────────────────────────────

/// Lagrangian dual value `L(λ)`; convex in `λ`, finite everywhere.
pub fn dual_value(lambda: f64, problem: &AllocationProblem) -> f64 {
    let per_user = |i: usize| -> f64 {
        let mut best = f64::MIN;
        for j in 1..=problem.num_treatments as u32 {
            let margin = problem.theta(i, j) - lambda * problem.cost(i, j);
            best = best.max(margin);
        }
        best.max(0.0)
    };
    deterministic_par_sum(problem.n_users(), per_user) + lambda * problem.budget()
}

/// Subgradient `L'(λ) = B − Σ` cost of users selected at `λ`, with selection
/// exactly as in [`select_treatments`] (strictly positive margins only).
pub fn dual_derivative(lambda: f64, problem: &AllocationProblem) -> f64 {
    let spend = deterministic_par_sum(problem.n_users(), |i| {
        problem
            .best_arm(i, lambda)
            .map_or(0.0, |(arm, _)| problem.cost(i, arm))
    });
    problem.budget() - spend
}

// ── Solver ──────────────────────────────────────────────────────────────────

/// Outcome of the dual bisection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgbSolution {
    pub lambda_star: f64,
    /// False when the budget covers every user's most expensive arm; the
    /// constraint then never binds, `λ* = 0`, and selection reduces to each
    /// user's highest-effect arm.
    pub budget_binding: bool,
    /// Number of bisection steps performed.
    pub iterations: usize,
    /// Resolved convergence tolerance on the bracket width.
    pub epsilon: f64,
}

/// Minimizes the dual by bisection on `[0, max_ij θ_ij/c_ij]`.
///
/// `epsilon` is the absolute bracket-width tolerance; `None` resolves to
/// `1e-6 ·` the bracket's upper end. When the budget does not bind
/// the solver returns `λ* = 0` immediately with `budget_binding: false`.
pub fn solve_dgb(
    problem: &AllocationProblem,
    epsilon: Option<f64>,
) -> Result<DgbSolution, DgbError> {
    if let Some(e) = epsilon {
        if !(e > 0.0 && e.is_finite()) {
            return Err(DgbError::BadEpsilon(e));
        }
    }
    let upper = problem.max_ratio();
    let eps = epsilon.unwrap_or(1e-6 * upper);
    if !problem.budget_binds() {
        return Ok(DgbSolution {
            lambda_star: 0.0,
            budget_binding: false,
            iterations: 0,
            epsilon: eps,
        });
    }
    if upper <= 0.0 {
        // No positive effect anywhere: the zero multiplier selects nobody.
        return Ok(DgbSolution {
            lambda_star: 0.0,
            budget_binding: true,
            iterations: 0,
            epsilon: eps,
        });
    }

    let (mut lo, mut hi) = (0.0f64, upper);
    let mut iterations = 0usize;
    while hi - lo > eps {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break; // bracket no longer representable more finely
        }
        if dual_derivative(mid, problem) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        iterations += 1;
    }
    Ok(DgbSolution {
        lambda_star: 0.5 * (lo + hi),
        budget_binding: true,
        iterations,
        epsilon: eps,
    })
}

/// Primal assignment at a given multiplier, with budget repair.
///
/// Every user gets their best strictly-positive-margin arm at `lambda_star`
/// (control otherwise). If the selection spends more than the budget, the
/// repair pass demotes selected users in ascending margin order until the
/// budget holds and marks the assignment `repaired`.
pub fn select_treatments(problem: &AllocationProblem, lambda_star: f64) -> Assignment {
    let n = problem.n_users();
    let picks: Vec<Option<(u32, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| problem.best_arm(i, lambda_star))
        .collect();
    let mut chosen: Vec<u32> = picks.iter().map(|p| p.map_or(0, |(arm, _)| arm)).collect();

    let exact_cost = |chosen: &Vec<u32>| {
        deterministic_par_sum(n, |i| match chosen[i] {
            0 => 0.0,
            j => problem.cost(i, j),
        })
    };

    let mut repaired = false;
    if exact_cost(&chosen) > problem.budget() {
        repaired = true;
        // Selected users, cheapest-to-sacrifice first.
        let mut selected: Vec<(f64, usize)> = picks
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|(_, margin)| (margin, i)))
            .collect();
        selected.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

        // Smallest prefix of demotions that brings the spend within budget,
        // located on running sums and then verified against the exact total.
        let total: f64 = selected.iter().map(|&(_, i)| problem.cost(i, chosen[i])).sum();
        let mut dropped = 0usize;
        let mut remaining = total;
        while dropped < selected.len() && remaining > problem.budget() {
            let (_, i) = selected[dropped];
            remaining -= problem.cost(i, chosen[i]);
            dropped += 1;
        }
        for &(_, i) in &selected[..dropped] {
            chosen[i] = 0;
        }
        while exact_cost(&chosen) > problem.budget() && dropped < selected.len() {
            let (_, i) = selected[dropped];
            chosen[i] = 0;
            dropped += 1;
        }
    }
    Assignment::from_chosen(problem, chosen, Some(lambda_star), repaired)
}

/// Convenience: bisection followed by selection.
pub fn assign_with_dgb(
    problem: &AllocationProblem,
    epsilon: Option<f64>,
) -> Result<(DgbSolution, Assignment), DgbError> {
    let solution = solve_dgb(problem, epsilon)?;
    let assignment = select_treatments(problem, solution.lambda_star);
    Ok((solution, assignment))
}

// ── Baselines ───────────────────────────────────────────────────────────────

/// Exact optimum by exhaustive enumeration; ties resolve to the first
/// assignment found in control-first, user-major order. Guarded against
/// instances with more than [`BRUTE_FORCE_LIMIT`] assignments.
pub fn brute_force_mckp(problem: &AllocationProblem) -> Result<Assignment, DgbError> {
    let n = problem.n_users();
    let k = problem.num_treatments();
    let combinations = ((k + 1) as f64).powi(n as i32);
    if combinations > BRUTE_FORCE_LIMIT {
        return Err(DgbError::TooLarge {
            combinations,
            limit: BRUTE_FORCE_LIMIT,
        });
    }

    struct Search<'a> {
        problem: &'a AllocationProblem,
        current: Vec<u32>,
        best_value: f64,
        best: Vec<u32>,
    }
    impl Search<'_> {
        fn run(&mut self, user: usize, value: f64, cost: f64) {
            if user == self.problem.n_users() {
                if value > self.best_value {
                    self.best_value = value;
                    self.best.copy_from_slice(&self.current);
                }
                return;
            }
            self.current[user] = 0;
            self.run(user + 1, value, cost);
            for j in 1..=self.problem.num_treatments() as u32 {
                let c = self.problem.cost(user, j);
                if cost + c > self.problem.budget() {
                    continue;
                }
                self.current[user] = j;
                self.run(user + 1, value + self.problem.theta(user, j), cost + c);
            }
            self.current[user] = 0;
        }
    }

    let mut search = Search {
        problem,
        current: vec![0; n],
        best_value: f64::MIN,
        best: vec![0; n],
    };
    search.run(0, 0.0, 0.0);
    Ok(Assignment::from_chosen(problem, search.best, None, false))
}

/// Greedy on effect-to-cost ratio: each user is tagged with their best-ratio
/// arm (lowest index on ties, skipped entirely when no ratio is positive),
/// users are admitted in descending ratio order, and users whose arm no
/// longer fits the remaining budget are skipped while the scan continues.
pub fn roi_greedy(problem: &AllocationProblem) -> Assignment {
    let mut candidates: Vec<(f64, usize, u32)> = Vec::new();
    for i in 0..problem.n_users() {
        let mut best: Option<(f64, u32)> = None;
        for j in 1..=problem.num_treatments() as u32 {
            let ratio = problem.theta(i, j) / problem.cost(i, j);
            if best.is_none_or(|(r, _)| ratio > r) {
                best = Some((ratio, j));
            }
        }
        let (ratio, arm) = best.unwrap();
        if ratio > 0.0 {
            candidates.push((ratio, i, arm));
        }
    }
    candidates.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut chosen = vec![0u32; problem.n_users()];
    let mut spent = 0.0f64;
    for &(_, i, arm) in &candidates {
        let c = problem.cost(i, arm);
        if spent + c > problem.budget() {
            continue;
        }
        spent += c;
        chosen[i] = arm;
    }
    Assignment::from_chosen(problem, chosen, None, false)
}

/// Greedy on raw effect: each user is tagged with their largest-effect arm
/// (when positive), users are admitted in descending effect order, skipping
/// those that no longer fit.
pub fn max_uplift_greedy(problem: &AllocationProblem) -> Assignment {
    let mut candidates: Vec<(f64, usize, u32)> = Vec::new();
    for i in 0..problem.n_users() {
        let mut best_theta = f64::MIN;
        let mut best_arm = 1u32;
        for j in 1..=problem.num_treatments() as u32 {
            let t = problem.theta(i, j);
            if t > best_theta {
                best_theta = t;
                best_arm = j;
            }
        }
        if best_theta > 0.0 {
            candidates.push((best_theta, i, best_arm));
        }
    }
    candidates.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));

    let mut chosen = vec![0u32; problem.n_users()];
    let mut spent = 0.0f64;
    for &(_, i, arm) in &candidates {
        let c = problem.cost(i, arm);
        if spent + c > problem.budget() {
            continue;
        }
        spent += c;
        chosen[i] = arm;
    }
    Assignment::from_chosen(problem, chosen, None, false)
}

// ── Policies ────────────────────────────────────────────────────────────────

/// A named allocation procedure, for sweeps and the command-line tools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    Dgb { epsilon: Option<f64> },
    RoiGreedy,
    MaxUpliftGreedy,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Dgb { .. } => "dgb",
            Policy::RoiGreedy => "roi-greedy",
            Policy::MaxUpliftGreedy => "max-uplift",
        }
    }

    pub fn assign(&self, problem: &AllocationProblem) -> Result<Assignment, DgbError> {
        match self {
            Policy::Dgb { epsilon } => Ok(assign_with_dgb(problem, *epsilon)?.1),
            Policy::RoiGreedy => Ok(roi_greedy(problem)),
            Policy::MaxUpliftGreedy => Ok(max_uplift_greedy(problem)),
        }
    }
}
