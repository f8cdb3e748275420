//! `lbcf allocate`: score users with a trained model (or take a raw
//! effect/cost CSV), then assign treatments under a budget.

use std::path::{Path, PathBuf};

use lbcf::dataset::load_rct_csv;
use lbcf::dgb::{
    assign_with_dgb, max_uplift_greedy, roi_greedy, AllocationProblem, Assignment, DgbError,
    DgbSolution,
};
use serde::{Deserialize, Serialize};

use crate::config::{load_file_config, pick, pick_optional, pick_required};
use crate::error::{config_error, runtime, CmdResult};
use crate::io::{load_problem_csv, write_assignment_csv, AnyModel};
use crate::manifest::write_manifest;

use super::{ensure_out_dir, resolve_schema, SchemaArgs, SchemaConfig};

#[derive(Debug, clap::Args)]
pub struct AllocateArgs {
    /// Trained model JSON; requires --data.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Dataset CSV the model scores; costs are taken from it too.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Raw instance CSV `id,theta_1..K,cost_1..K`; alternative to
    /// --model/--data.
    #[arg(long)]
    pub problem: Option<PathBuf>,
    /// Total spend ceiling; must be positive.
    #[arg(long)]
    pub budget: Option<f64>,
    /// Bisection tolerance on the dual bracket width (dgb only).
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Allocation rule: dgb, roi-greedy, or max-uplift.
    #[arg(long)]
    pub policy: Option<String>,
    #[command(flatten)]
    pub schema: SchemaArgs,
    /// JSON config file with the same keys; explicit flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    model: Option<PathBuf>,
    data: Option<PathBuf>,
    problem: Option<PathBuf>,
    budget: Option<f64>,
    epsilon: Option<f64>,
    policy: Option<String>,
    id_col: Option<String>,
    treatment_col: Option<String>,
    outcome_col: Option<String>,
    cost_cols: Option<Vec<String>>,
    cost_levels: Option<Vec<f64>>,
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Params {
    model: Option<String>,
    data: Option<String>,
    problem: Option<String>,
    budget: f64,
    epsilon: Option<f64>,
    policy: String,
    #[serde(flatten)]
    schema: SchemaConfig,
    out: String,
}

pub fn run(args: &AllocateArgs) -> CmdResult {
    let file: FileConfig = load_file_config(args.config.as_deref(), "allocate")?;
    let budget = pick_required(&args.budget, &file.budget, "--budget")?;
    if !(budget.is_finite() && budget > 0.0) {
        return Err(config_error(format!(
            "budget must be a positive real, got {budget}"
        )));
    }
    let epsilon = pick_optional(&args.epsilon, &file.epsilon);
    let policy = pick(&args.policy, &file.policy, "dgb".to_string());
    if !matches!(policy.as_str(), "dgb" | "roi-greedy" | "max-uplift") {
        return Err(config_error(format!(
            "unknown policy `{policy}`; use dgb, roi-greedy, or max-uplift"
        )));
    }
    let model_path = pick_optional(&args.model, &file.model);
    let data_path = pick_optional(&args.data, &file.data);
    let problem_path = pick_optional(&args.problem, &file.problem);
    let out = pick_required(&args.out, &file.out, "--out")?;
    let file_schema = SchemaConfig {
        id_col: file.id_col,
        treatment_col: file.treatment_col,
        outcome_col: file.outcome_col,
        cost_cols: file.cost_cols,
        cost_levels: file.cost_levels,
    };
    let (schema, resolved_schema) = resolve_schema(&args.schema, &file_schema)?;

    // Two input modes: a raw instance file, or model + dataset.
    let (ids, theta, cost, k, inputs): (Vec<u64>, Vec<f64>, Vec<f64>, usize, Vec<PathBuf>) =
        match (&problem_path, &model_path, &data_path) {
            (Some(problem), None, None) => {
                let raw = load_problem_csv(problem).map_err(runtime)?;
                (
                    raw.ids,
                    raw.theta,
                    raw.cost,
                    raw.num_treatments,
                    vec![problem.clone()],
                )
            }
            (None, Some(model), Some(data)) => {
                let data_set = load_rct_csv(data, &schema).map_err(runtime)?;
                let model_file = AnyModel::load(model).map_err(runtime)?;
                if model_file.num_treatments() != data_set.num_treatments() {
                    return Err(runtime(anyhow::anyhow!(
                        "model was trained for {} treatment arms but the dataset has {}",
                        model_file.num_treatments(),
                        data_set.num_treatments()
                    )));
                }
                println!("model_type = {}", model_file.kind());
                let theta = model_file.predict_dataset(&data_set).map_err(runtime)?;
                (
                    data_set.ids().to_vec(),
                    theta,
                    data_set.costs().to_vec(),
                    data_set.num_treatments(),
                    vec![model.clone(), data.clone()],
                )
            }
            _ => {
                return Err(config_error(
                    "give either --problem, or both --model and --data",
                ))
            }
        };

    let problem = AllocationProblem::new(theta.clone(), cost.clone(), k, budget).map_err(runtime)?;

    let (solution, assignment): (Option<DgbSolution>, Assignment) = match policy.as_str() {
        "dgb" => {
            let (sol, a) = assign_with_dgb(&problem, epsilon).map_err(|e| match e {
                DgbError::BadEpsilon(_) => config_error(e.to_string()),
                other => runtime(other),
            })?;
            (Some(sol), a)
        }
        "roi-greedy" => (None, roi_greedy(&problem)),
        _ => (None, max_uplift_greedy(&problem)),
    };

    // Margin of the chosen arm at the multiplier that produced the
    // assignment (zero multiplier for the greedy rules, zero margin for
    // control rows).
    let lambda = assignment.lambda_star.unwrap_or(0.0);
    let margins: Vec<f64> = assignment
        .chosen
        .iter()
        .enumerate()
        .map(|(i, &arm)| match arm {
            0 => 0.0,
            j => problem.theta(i, j) - lambda * problem.cost(i, j),
        })
        .collect();

    let out = ensure_out_dir(&out)?;
    let assignment_path = out.join("assignment.csv");
    write_assignment_csv(&assignment_path, &ids, &assignment.chosen, &margins)
        .map_err(runtime)?;

    println!("policy = {policy}");
    println!("n_users = {}", problem.n_users());
    if let Some(sol) = &solution {
        println!("lambda_star = {}", sol.lambda_star);
        println!("iterations = {}", sol.iterations);
        println!("budget_binding = {}", sol.budget_binding);
        if !sol.budget_binding {
            println!(
                "note: the budget covers every user's most expensive treatment; \
                 the constraint is slack and each user simply receives their \
                 highest-effect arm"
            );
        }
    }
    println!("total_value = {}", assignment.total_value);
    println!("total_cost = {}", assignment.total_cost);
    println!("repaired = {}", assignment.repaired);
    println!("n_treated = {}", assignment.n_treated());
    println!("assignment = {}", assignment_path.display());

    let params = Params {
        model: model_path.as_ref().map(|p| p.display().to_string()),
        data: data_path.as_ref().map(|p| p.display().to_string()),
        problem: problem_path.as_ref().map(|p| p.display().to_string()),
        budget,
        epsilon,
        policy,
        schema: resolved_schema,
        out: out.display().to_string(),
    };
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let manifest = write_manifest(
        &out,
        "allocate",
        serde_json::to_value(&params).map_err(runtime)?,
        &input_refs,
        &[&assignment_path],
    )
    .map_err(runtime)?;
    println!("manifest = {}", manifest.display());
    Ok(())
}
