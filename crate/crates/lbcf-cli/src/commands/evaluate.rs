//! `lbcf evaluate`: score a stored assignment against trial data (overlap
//! estimator) or against ground-truth potential outcomes.

use std::collections::HashMap;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use lbcf::dataset::{check_alignment, load_rct_csv, load_truth_csv, truth_path_for};
use lbcf::dgb::Assignment;
use lbcf::eval::{evaluate_ite, evaluate_pmg};
use serde::Deserialize;
use serde_json::json;

use crate::config::{load_file_config, pick, pick_optional, pick_required};
use crate::error::{config_error, runtime, CmdResult};
use crate::io::load_assignment_csv;
use crate::manifest::write_manifest;

use super::{ensure_out_dir, resolve_schema, SchemaArgs, SchemaConfig};

#[derive(Debug, clap::Args)]
pub struct EvaluateArgs {
    /// Assignment CSV written by `allocate`.
    #[arg(long)]
    pub assignment: Option<PathBuf>,
    /// Trial dataset the assignment refers to.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Estimator: pmg (overlap means on trial data) or ite (ground truth).
    #[arg(long)]
    pub metric: Option<String>,
    /// Potential-outcome CSV for --metric ite; defaults to the dataset path
    /// with a .truth.csv suffix.
    #[arg(long)]
    pub truth: Option<PathBuf>,
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
    assignment: Option<PathBuf>,
    data: Option<PathBuf>,
    metric: Option<String>,
    truth: Option<PathBuf>,
    id_col: Option<String>,
    treatment_col: Option<String>,
    outcome_col: Option<String>,
    cost_cols: Option<Vec<String>>,
    cost_levels: Option<Vec<f64>>,
    out: Option<PathBuf>,
}

pub fn run(args: &EvaluateArgs) -> CmdResult {
    let file: FileConfig = load_file_config(args.config.as_deref(), "evaluate")?;
    let assignment_path = pick_required(&args.assignment, &file.assignment, "--assignment")?;
    let data_path = pick_required(&args.data, &file.data, "--data")?;
    let metric = pick(&args.metric, &file.metric, "pmg".to_string());
    if metric != "pmg" && metric != "ite" {
        return Err(config_error(format!(
            "unknown metric `{metric}`; use pmg or ite"
        )));
    }
    let truth_path = pick_optional(&args.truth, &file.truth);
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
    let pairs = load_assignment_csv(&assignment_path).map_err(runtime)?;
    if pairs.len() != data.n_samples() {
        return Err(runtime(anyhow::anyhow!(
            "assignment has {} rows but the dataset has {}",
            pairs.len(),
            data.n_samples()
        )));
    }
    let by_id: HashMap<u64, u32> = pairs.into_iter().collect();
    let chosen: Vec<u32> = data
        .ids()
        .iter()
        .map(|id| {
            by_id
                .get(id)
                .copied()
                .ok_or_else(|| runtime(anyhow::anyhow!("assignment is missing id {id}")))
        })
        .collect::<Result<_, _>>()?;
    for &arm in &chosen {
        if arm as usize > data.num_treatments() {
            return Err(runtime(anyhow::anyhow!(
                "assignment names treatment {arm} but the dataset has only {}",
                data.num_treatments()
            )));
        }
    }
    let assignment = Assignment {
        chosen,
        total_value: 0.0,
        total_cost: 0.0,
        lambda_star: None,
        repaired: false,
    };

    let out = ensure_out_dir(&out)?;
    let eval_path = out.join("evaluation.json");
    let mut inputs: Vec<PathBuf> = vec![assignment_path.clone(), data_path.clone()];

    let report = match metric.as_str() {
        "pmg" => {
            let eval = evaluate_pmg(&assignment, &data).map_err(runtime)?;
            println!("pmg = {}", eval.pmg);
            println!("control_mean = {}", eval.control_mean);
            println!("consumed_budget = {}", eval.consumed_budget_estimate);
            for p in &eval.per_treatment {
                println!(
                    "arm {}: assigned {}, overlap {}, overlap_mean {}",
                    p.treatment,
                    p.policy_count,
                    p.overlap_count,
                    p.overlap_mean.map_or("-".to_string(), |m| format!("{m}")),
                );
            }
            json!({ "metric_kind": "pmg", "evaluation": eval })
        }
        _ => {
            let truth_path = truth_path.unwrap_or_else(|| truth_path_for(&data_path));
            let truth = load_truth_csv(&truth_path).map_err(runtime)?;
            check_alignment(&data, &truth).map_err(runtime)?;
            let eval = evaluate_ite(&assignment, &truth).map_err(runtime)?;
            println!("tau_syn = {}", eval.tau_syn);
            println!("mu_0 = {}", eval.mu_0);
            println!("raw_gain = {}", eval.raw_gain);
            inputs.push(truth_path);
            json!({ "metric_kind": "ite", "evaluation": eval })
        }
    };
    let eval_file = std::fs::File::create(&eval_path).map_err(runtime)?;
    serde_json::to_writer_pretty(BufWriter::new(eval_file), &report).map_err(runtime)?;
    println!("evaluation = {}", eval_path.display());

    let params = json!({
        "assignment": assignment_path.display().to_string(),
        "data": data_path.display().to_string(),
        "metric": metric,
        "truth": inputs.get(2).map(|p| p.display().to_string()),
        "id_col": resolved_schema.id_col,
        "treatment_col": resolved_schema.treatment_col,
        "outcome_col": resolved_schema.outcome_col,
        "cost_cols": resolved_schema.cost_cols,
        "cost_levels": resolved_schema.cost_levels,
        "out": out.display().to_string(),
    });
    let input_refs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    let manifest =
        write_manifest(&out, "evaluate", params, &input_refs, &[&eval_path]).map_err(runtime)?;
    println!("manifest = {}", manifest.display());
    Ok(())
}
