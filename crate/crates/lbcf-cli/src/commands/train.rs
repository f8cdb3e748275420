//! `lbcf train`: fit a treatment-effect forest on randomized-trial data and
//! serialize it, printing a per-tree structure summary.

use std::path::PathBuf;

use lbcf::dataset::load_rct_csv;
use lbcf::mbcf::train_mbcf;
use lbcf::udcf::{train_forest, TrainParams, UdcfError};
use serde::{Deserialize, Serialize};

use crate::config::{load_file_config, pick, pick_required};
use crate::error::{config_error, runtime, CmdResult};
use crate::manifest::write_manifest;

use super::{ensure_out_dir, resolve_schema, SchemaArgs, SchemaConfig};

#[derive(Debug, clap::Args)]
pub struct TrainArgs {
    /// Training dataset CSV.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Forest flavor: udcf (one forest over all arms) or mbcf (one binary
    /// forest per arm).
    #[arg(long)]
    pub model_type: Option<String>,
    /// Number of trees.
    #[arg(long)]
    pub trees: Option<usize>,
    /// Maximum tree depth; 0 trains root-only trees.
    #[arg(long)]
    pub max_depth: Option<usize>,
    /// Minimum rows per arm required in every leaf.
    #[arg(long)]
    pub min_leaf: Option<usize>,
    /// Number of top first-stage candidates refined by the second stage.
    #[arg(long)]
    pub m_candidates: Option<usize>,
    /// Ridge term stabilizing the per-node regression.
    #[arg(long)]
    pub ridge: Option<f64>,
    /// Per-tree row subsample fraction (stratified by arm).
    #[arg(long)]
    pub subsample: Option<f64>,
    /// Per-tree feature subsample fraction.
    #[arg(long)]
    pub feature_subsample: Option<f64>,
    /// Training seed; same seed, same model file.
    #[arg(long)]
    pub seed: Option<u64>,
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
    model_type: Option<String>,
    trees: Option<usize>,
    max_depth: Option<usize>,
    min_leaf: Option<usize>,
    m_candidates: Option<usize>,
    ridge: Option<f64>,
    subsample: Option<f64>,
    feature_subsample: Option<f64>,
    seed: Option<u64>,
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
    model_type: String,
    trees: usize,
    max_depth: usize,
    min_leaf: usize,
    m_candidates: usize,
    ridge: f64,
    subsample: f64,
    feature_subsample: f64,
    seed: u64,
    #[serde(flatten)]
    schema: SchemaConfig,
    out: String,
}

pub fn run(args: &TrainArgs) -> CmdResult {
    let file: FileConfig = load_file_config(args.config.as_deref(), "train")?;
    let defaults = TrainParams::default();
    let data_path = pick_required(&args.data, &file.data, "--data")?;
    let model_type = pick(&args.model_type, &file.model_type, "udcf".to_string());
    if model_type != "udcf" && model_type != "mbcf" {
        return Err(config_error(format!(
            "unknown model type `{model_type}`; use udcf or mbcf"
        )));
    }
    let params = TrainParams {
        n_trees: pick(&args.trees, &file.trees, defaults.n_trees),
        max_depth: pick(&args.max_depth, &file.max_depth, defaults.max_depth),
        min_samples_per_arm_leaf: pick(
            &args.min_leaf,
            &file.min_leaf,
            defaults.min_samples_per_arm_leaf,
        ),
        m_candidates: pick(&args.m_candidates, &file.m_candidates, defaults.m_candidates),
        ridge_epsilon: pick(&args.ridge, &file.ridge, defaults.ridge_epsilon),
        subsample_fraction: pick(&args.subsample, &file.subsample, defaults.subsample_fraction),
        feature_subsample_fraction: pick(
            &args.feature_subsample,
            &file.feature_subsample,
            defaults.feature_subsample_fraction,
        ),
        seed: pick(&args.seed, &file.seed, defaults.seed),
    };
    params.validate().map_err(|e| match e {
        UdcfError::BadParams(msg) => config_error(msg),
        other => runtime(other),
    })?;
    let file_schema = SchemaConfig {
        id_col: file.id_col,
        treatment_col: file.treatment_col,
        outcome_col: file.outcome_col,
        cost_cols: file.cost_cols,
        cost_levels: file.cost_levels,
    };
    let (schema, resolved_schema) = resolve_schema(&args.schema, &file_schema)?;
    let out = pick_required(&args.out, &file.out, "--out")?;

    let data = load_rct_csv(&data_path, &schema).map_err(runtime)?;
    let out = ensure_out_dir(&out)?;
    let model_path = out.join("model.json");

    let (depths, leaves): (Vec<(String, usize)>, Vec<usize>);
    match model_type.as_str() {
        "udcf" => {
            let model = train_forest(&data, &params).map_err(runtime)?;
            model.save(&model_path).map_err(runtime)?;
            depths = model
                .tree_depths()
                .into_iter()
                .enumerate()
                .map(|(i, d)| (format!("tree {i}"), d))
                .collect();
            leaves = model.leaf_counts();
        }
        _ => {
            let model = train_mbcf(&data, &params).map_err(runtime)?;
            model.save(&model_path).map_err(runtime)?;
            depths = model
                .forests
                .iter()
                .enumerate()
                .flat_map(|(arm, forest)| {
                    forest
                        .tree_depths()
                        .into_iter()
                        .enumerate()
                        .map(move |(i, d)| (format!("arm {} tree {i}", arm + 1), d))
                })
                .collect();
            leaves = model
                .forests
                .iter()
                .flat_map(|forest| forest.leaf_counts())
                .collect();
        }
    }

    for ((label, depth), n_leaves) in depths.iter().zip(&leaves) {
        println!("{label}: depth {depth}, leaves {n_leaves}");
    }
    let mean = |xs: &[usize]| xs.iter().sum::<usize>() as f64 / xs.len() as f64;
    println!("model_type = {model_type}");
    println!("trees = {}", leaves.len());
    println!(
        "mean_depth = {}",
        mean(&depths.iter().map(|(_, d)| *d).collect::<Vec<_>>())
    );
    println!("mean_leaves = {}", mean(&leaves));
    println!("model = {}", model_path.display());

    let params_out = Params {
        data: data_path.display().to_string(),
        model_type,
        trees: params.n_trees,
        max_depth: params.max_depth,
        min_leaf: params.min_samples_per_arm_leaf,
        m_candidates: params.m_candidates,
        ridge: params.ridge_epsilon,
        subsample: params.subsample_fraction,
        feature_subsample: params.feature_subsample_fraction,
        seed: params.seed,
        schema: resolved_schema,
        out: out.display().to_string(),
    };
    let manifest = write_manifest(
        &out,
        "train",
        serde_json::to_value(&params_out).map_err(runtime)?,
        &[&data_path],
        &[&model_path],
    )
    .map_err(runtime)?;
    println!("manifest = {}", manifest.display());
    Ok(())
}
