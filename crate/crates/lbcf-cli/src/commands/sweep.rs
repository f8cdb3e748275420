//! `lbcf sweep`: run several allocation policies across a budget grid and
//! export the resulting metric curves as CSV and JSON.

use std::path::{Path, PathBuf};

use lbcf::dataset::{load_rct_csv, load_truth_csv, truth_path_for};
use lbcf::dgb::Policy;
use lbcf::eval::{budget_sweep, write_sweep_csv, write_sweep_json, EvalError, SweepPolicy, SweepTarget};
use serde::{Deserialize, Serialize};

use crate::config::{load_file_config, pick, pick_optional, pick_required};
use crate::error::{config_error, runtime, CmdResult};
use crate::io::AnyModel;
use crate::manifest::write_manifest;

use super::{ensure_out_dir, resolve_schema, SchemaArgs, SchemaConfig};

#[derive(Debug, clap::Args)]
pub struct SweepArgs {
    /// Trial dataset CSV; provides costs for allocation and outcomes for
    /// the pmg metric.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model whose estimates drive the dgb, roi-greedy, and max-uplift
    /// policies.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Second model whose estimates drive the mbcf-dgb policy.
    #[arg(long)]
    pub mbcf_model: Option<PathBuf>,
    /// Comma-separated policies out of dgb, roi-greedy, max-uplift,
    /// mbcf-dgb; defaults to all that have a model available.
    #[arg(long, value_delimiter = ',')]
    pub policies: Option<Vec<String>>,
    /// Comma-separated budgets, strictly ascending.
    #[arg(long, value_delimiter = ',')]
    pub budgets: Option<Vec<f64>>,
    /// Estimator: pmg (overlap means) or ite (ground truth).
    #[arg(long)]
    pub metric: Option<String>,
    /// Potential-outcome CSV for --metric ite; defaults to the dataset path
    /// with a .truth.csv suffix.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Bisection tolerance for the dual-based policies.
    #[arg(long)]
    pub epsilon: Option<f64>,
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
    data: Option<PathBuf>,
    model: Option<PathBuf>,
    mbcf_model: Option<PathBuf>,
    policies: Option<Vec<String>>,
    budgets: Option<Vec<f64>>,
    metric: Option<String>,
    truth: Option<PathBuf>,
    epsilon: Option<f64>,
    id_col: Option<String>,
    treatment_col: Option<String>,
    outcome_col: Option<String>,
    cost_cols: Option<Vec<String>>,
    cost_levels: Option<Vec<f64>>,
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Params {
    data: String,
    model: Option<String>,
    mbcf_model: Option<String>,
    policies: Vec<String>,
    budgets: Vec<f64>,
    metric: String,
    truth: Option<String>,
    epsilon: Option<f64>,
    #[serde(flatten)]
    schema: SchemaConfig,
    out: String,
}

pub fn run(args: &SweepArgs) -> CmdResult {
    let file: FileConfig = load_file_config(args.config.as_deref(), "sweep")?;
    let data_path = pick_required(&args.data, &file.data, "--data")?;
    let model_path = pick_optional(&args.model, &file.model);
    let mbcf_path = pick_optional(&args.mbcf_model, &file.mbcf_model);
    let budgets = pick_required(&args.budgets, &file.budgets, "--budgets")?;
    let metric = pick(&args.metric, &file.metric, "pmg".to_string());
    if metric != "pmg" && metric != "ite" {
        return Err(config_error(format!(
            "unknown metric `{metric}`; use pmg or ite"
        )));
    }
    let epsilon = pick_optional(&args.epsilon, &file.epsilon);
    let policies = pick(&args.policies, &file.policies, {
        let mut defaults = vec![
            "dgb".to_string(),
            "roi-greedy".to_string(),
            "max-uplift".to_string(),
        ];
        if mbcf_path.is_some() {
            defaults.push("mbcf-dgb".to_string());
        }
        defaults
    });
    for name in &policies {
        match name.as_str() {
            "dgb" | "roi-greedy" | "max-uplift" => {
                if model_path.is_none() {
                    return Err(config_error(format!("policy `{name}` needs --model")));
                }
            }
            "mbcf-dgb" => {
                if mbcf_path.is_none() {
                    return Err(config_error("policy `mbcf-dgb` needs --mbcf-model"));
                }
            }
            other => {
                return Err(config_error(format!(
                    "unknown policy `{other}`; use dgb, roi-greedy, max-uplift, or mbcf-dgb"
                )))
            }
        }
    }
    let out = pick_required(&args.out, &file.out, "--out")?;
    let file_schema = SchemaConfig {
        id_col: file.id_col,
        treatment_col: file.treatment_col,
        outcome_col: file.outcome_col,
        cost_cols: file.cost_cols,
        cost_levels: file.cost_levels,
    };
    let (schema, resolved_schema) = resolve_schema(&args.schema, &file_schema)?;

    let data = load_rct_csv(&data_path, &schema).map_err(runtime)?;
    let mut inputs: Vec<PathBuf> = vec![data_path.clone()];

    let theta_main = match &model_path {
        Some(path) => {
            inputs.push(path.clone());
            let model = AnyModel::load(path).map_err(runtime)?;
            Some(model.predict_dataset(&data).map_err(runtime)?)
        }
        None => None,
    };
    let theta_mbcf = match &mbcf_path {
        Some(path) => {
            inputs.push(path.clone());
            let model = AnyModel::load(path).map_err(runtime)?;
            Some(model.predict_dataset(&data).map_err(runtime)?)
        }
        None => None,
    };

    let truth_storage;
    let resolved_truth_path;
    let target = match metric.as_str() {
        "pmg" => {
            resolved_truth_path = None;
            SweepTarget::Rct
        }
        _ => {
            let path = pick_optional(&args.truth, &file.truth)
                .unwrap_or_else(|| truth_path_for(&data_path));
            truth_storage = load_truth_csv(&path).map_err(runtime)?;
            inputs.push(path.clone());
            resolved_truth_path = Some(path);
            SweepTarget::Synthetic(&truth_storage)
        }
    };

    let entries: Vec<SweepPolicy> = policies
        .iter()
        .map(|name| {
            let (theta, policy) = match name.as_str() {
                "dgb" => (theta_main.as_deref().unwrap(), Policy::Dgb { epsilon }),
                "roi-greedy" => (theta_main.as_deref().unwrap(), Policy::RoiGreedy),
                "max-uplift" => (theta_main.as_deref().unwrap(), Policy::MaxUpliftGreedy),
                _ => (theta_mbcf.as_deref().unwrap(), Policy::Dgb { epsilon }),
            };
            SweepPolicy {
                name: name.clone(),
                theta,
                policy,
            }
        })
        .collect();

    let rows = budget_sweep(&data, &entries, &budgets, &target).map_err(|e| match e {
        EvalError::BadBudgets(_) => config_error(e.to_string()),
        other => runtime(other),
    })?;

    let out = ensure_out_dir(&out)?;
    let csv_path = out.join("sweep.csv");
    let json_path = out.join("sweep.json");
    write_sweep_csv(&csv_path, &rows).map_err(runtime)?;
    write_sweep_json(&json_path, &rows).map_err(runtime)?;

    for row in &rows {
        let shown = row
            .metric
            .map_or_else(|| format!("error: {}", row.error.as_deref().unwrap_or("?")), |m| format!("{m}"));
        println!(
            "budget {} {}: {} = {shown} (spent {})",
            row.budget, row.policy, row.metric_kind, row.consumed_budget
        );
    }
    println!("rows = {}", rows.len());
    println!("sweep_csv = {}", csv_path.display());
    println!("sweep_json = {}", json_path.display());

    let params = Params {
        data: data_path.display().to_string(),
        model: model_path.as_ref().map(|p| p.display().to_string()),
        mbcf_model: mbcf_path.as_ref().map(|p| p.display().to_string()),
        policies,
        budgets,
        metric,
        truth: resolved_truth_path.as_ref().map(|p| p.display().to_string()),
        epsilon,
        schema: resolved_schema,
        out: out.display().to_string(),
    };
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let manifest = write_manifest(
        &out,
        "sweep",
        serde_json::to_value(&params).map_err(runtime)?,
        &input_refs,
        &[&csv_path, &json_path],
    )
    .map_err(runtime)?;
    println!("manifest = {}", manifest.display());
    Ok(())
}
