//! Budget-constrained uplift modeling toolkit.
//!
//! The crate covers the full offline loop for deciding which of `K` costly
//! treatments (if any) to give each user so that the total expected uplift is
//! maximized under a global cost budget:
//!
//! 1. [`dataset`] — randomized-trial data containers, CSV I/O, and stratified
//!    train/test splitting.
//! 2. [`synthgen`] — a synthetic data generator with known potential outcomes,
//!    used for benchmarking estimators and policies against ground truth.
//! 3. [`udcf`] — a unified multi-treatment causal forest (UDCF) that estimates
//!    a length-`K` conditional average treatment effect vector per user from a
//!    single model, so all arms are compared in the same feature space.
//! 4. [`mbcf`] — a baseline that trains `K` separate binary causal forests
//!    (one per treatment vs. control) on the same machinery.
//! 5. [`dgb`] — treatment allocation under a budget: exact dual bisection
//!    (DGB) for the multiple-choice knapsack relaxation, plus greedy and
//!    brute-force baselines.
//! 6. [`eval`] — offline policy metrics: promotion gain on held-out trial
//!    data (PMG), ground-truth incremental treatment effect on synthetic data
//!    (ITE), and budget sweeps comparing policies.

pub mod dataset;
pub mod dgb;
pub mod eval;
pub mod mbcf;
pub mod synthgen;
pub mod udcf;
