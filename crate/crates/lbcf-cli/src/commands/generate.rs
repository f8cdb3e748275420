//! `lbcf generate`: draw a synthetic randomized trial plus its ground-truth
//! potential outcomes.

use std::path::PathBuf;

use lbcf::dataset::{truth_path_for, write_rct_csv, write_truth_csv};
use lbcf::synthgen::{generate_synthetic, EffectForm, SynthConfig, SynthError};
use serde::{Deserialize, Serialize};

use crate::config::{load_file_config, pick, pick_required};
use crate::error::{config_error, runtime, CmdResult};
use crate::manifest::write_manifest;

use super::ensure_out_dir;

#[derive(Debug, clap::Args)]
pub struct GenerateArgs {
    /// Number of rows to draw.
    #[arg(long)]
    pub n: Option<usize>,
    /// Number of treatment arms, control excluded.
    #[arg(long)]
    pub k: Option<usize>,
    /// Noise level for outcome and cost disturbances (0 = noise-free).
    #[arg(long)]
    pub weight: Option<f64>,
    /// Seed for the whole draw; same seed, same files.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated incentive levels, one per arm, strictly increasing.
    #[arg(long, value_delimiter = ',')]
    pub cost_levels: Option<Vec<f64>>,
    /// Treatment-effect shape: smooth or step.
    #[arg(long)]
    pub effect: Option<String>,
    /// Feature index (0-based) driving the step effect; requires --effect step.
    #[arg(long)]
    pub step_feature: Option<usize>,
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
    n: Option<usize>,
    k: Option<usize>,
    weight: Option<f64>,
    seed: Option<u64>,
    cost_levels: Option<Vec<f64>>,
    effect: Option<String>,
    step_feature: Option<usize>,
    out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct Params {
    n: usize,
    k: usize,
    weight: f64,
    seed: u64,
    cost_levels: Vec<f64>,
    effect: String,
    step_feature: Option<usize>,
    out: String,
}

pub fn run(args: &GenerateArgs) -> CmdResult {
    let file: FileConfig = load_file_config(args.config.as_deref(), "generate")?;
    let n = pick(&args.n, &file.n, 10_000);
    let k = pick(&args.k, &file.k, 3);
    let weight = pick(&args.weight, &file.weight, 1.0);
    let seed = pick(&args.seed, &file.seed, 0);
    let cost_levels = pick(
        &args.cost_levels,
        &file.cost_levels,
        (1..=k).map(|i| i as f64).collect(),
    );
    let effect = pick(&args.effect, &file.effect, "smooth".to_string());
    let step_feature = args.step_feature.or(file.step_feature);
    let effect_form = match effect.as_str() {
        "smooth" => {
            if step_feature.is_some() {
                return Err(config_error("--step-feature requires --effect step"));
            }
            EffectForm::Smooth
        }
        "step" => EffectForm::Step {
            feature: step_feature.unwrap_or(0),
        },
        other => {
            return Err(config_error(format!(
                "unknown effect form `{other}`; use smooth or step"
            )))
        }
    };
    let out = pick_required(&args.out, &file.out, "--out")?;

    let config = SynthConfig {
        n_samples: n,
        n_treatments: k,
        uncertainty_weight: weight,
        seed,
        cost_levels: cost_levels.clone(),
        effect_form,
    };
    let (data, truth) = generate_synthetic(&config).map_err(|e| match e {
        SynthError::Config(msg) => config_error(msg),
        other => runtime(other),
    })?;

    let out = ensure_out_dir(&out)?;
    let data_path = out.join("data.csv");
    write_rct_csv(&data, &data_path).map_err(runtime)?;
    let truth_path = truth_path_for(&data_path);
    write_truth_csv(&truth, &truth_path).map_err(runtime)?;

    let params = Params {
        n,
        k,
        weight,
        seed,
        cost_levels,
        effect,
        step_feature,
        out: out.display().to_string(),
    };
    let manifest = write_manifest(
        &out,
        "generate",
        serde_json::to_value(&params).map_err(runtime)?,
        &[],
        &[&data_path, &truth_path],
    )
    .map_err(runtime)?;

    println!("rows = {}", data.n_samples());
    println!("arms = {}", k + 1);
    println!("data = {}", data_path.display());
    println!("truth = {}", truth_path.display());
    println!("manifest = {}", manifest.display());
    Ok(())
}
