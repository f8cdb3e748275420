//! Multiple binary causal forests (MBCF) baseline.
//!
//! Instead of one joint model, this estimator trains `K` independent
//! single-treatment forests: forest `j` sees only the rows assigned to arm
//! `j` or control (arm relabeled to 1) and produces that arm's effect
//! column. Each forest therefore trains on roughly `2/(K+1)` of the data and
//! grows its own partition, so effect estimates for different arms come from
//! different feature-space cells and are not directly comparable — the
//! structural weakness the unified forest avoids. Kept as a comparison
//! policy source for benchmarks.

use std::io::{BufReader, BufWriter};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::RctDataset;
use crate::udcf::{train_forest, TrainParams, UdcfError, UdcfModel, MODEL_FORMAT_VERSION};

/// `K` single-treatment forests; entry `j-1` estimates arm `j` vs. control.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MbcfModel {
    pub format_version: u32,
    pub num_treatments: usize,
    pub n_features: usize,
    pub forests: Vec<UdcfModel>,
}

/// Rows of `data` restricted to `{control, arm}`, with the arm relabeled 1
/// and only that arm's cost column kept.
fn binary_view(data: &RctDataset, arm: usize) -> Result<RctDataset, UdcfError> {
    let indices: Vec<usize> = (0..data.n_samples())
        .filter(|&i| {
            let t = data.treatment(i) as usize;
            t == 0 || t == arm
        })
        .collect();
    let mut ids = Vec::with_capacity(indices.len());
    let mut features = Vec::with_capacity(indices.len() * data.n_features());
    let mut treatment = Vec::with_capacity(indices.len());
    let mut outcome = Vec::with_capacity(indices.len());
    let mut cost = Vec::with_capacity(indices.len());
    for &i in &indices {
        ids.push(data.ids()[i]);
        features.extend_from_slice(data.feature_row(i));
        treatment.push(u32::from(data.treatment(i) != 0));
        outcome.push(data.outcome(i));
        cost.push(data.cost(i, arm));
    }
    RctDataset::new(
        ids,
        features,
        data.feature_names().to_vec(),
        treatment,
        outcome,
        cost,
        1,
    )
    .map_err(|e| UdcfError::BadParams(format!("arm {arm} subset is not trainable: {e}")))
}

/// Trains one binary forest per arm with the shared hyperparameters; each
/// arm's forest gets its own seed substream.
pub fn train_mbcf(data: &RctDataset, params: &TrainParams) -> Result<MbcfModel, UdcfError> {
    params.validate()?;
    let k = data.num_treatments();
    let mut forests = Vec::with_capacity(k);
    for arm in 1..=k {
        let view = binary_view(data, arm)?;
        let arm_params = TrainParams {
            seed: params
                .seed
                .wrapping_add((arm as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)),
            ..params.clone()
        };
        forests.push(train_forest(&view, &arm_params)?);
    }
    Ok(MbcfModel {
        format_version: MODEL_FORMAT_VERSION,
        num_treatments: k,
        n_features: data.n_features(),
        forests,
    })
}

impl MbcfModel {
    /// Row-major `N × K` effect matrix: column `j-1` comes from forest `j`.
    pub fn predict_dataset(&self, data: &RctDataset) -> Result<Vec<f64>, UdcfError> {
        if data.n_features() != self.n_features {
            return Err(UdcfError::DimensionMismatch {
                expected: self.n_features,
                got: data.n_features(),
            });
        }
        let n = data.n_samples();
        let k = self.num_treatments;
        let mut theta = vec![0.0f64; n * k];
        for (col, forest) in self.forests.iter().enumerate() {
            let preds = forest.predict_batch(data.features())?; // N × 1
            for i in 0..n {
                theta[i * k + col] = preds[i];
            }
        }
        Ok(theta)
    }

    pub fn save(&self, path: &Path) -> Result<(), UdcfError> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, UdcfError> {
        let file = std::fs::File::open(path)?;
        let model: MbcfModel = serde_json::from_reader(BufReader::new(file))?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(UdcfError::BadVersion(model.format_version));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate_synthetic, true_effect, SynthConfig};

    #[test]
    fn trains_one_forest_per_arm_and_predicts_reasonably() {
        let config = SynthConfig {
            n_samples: 4000,
            uncertainty_weight: 0.0,
            seed: 31,
            ..SynthConfig::default()
        };
        let (data, _) = generate_synthetic(&config).unwrap();
        let params = TrainParams {
            n_trees: 15,
            seed: 5,
            ..TrainParams::default()
        };
        let model = train_mbcf(&data, &params).unwrap();
        assert_eq!(model.forests.len(), 3);
        for forest in &model.forests {
            assert_eq!(forest.num_treatments, 1);
        }

        let theta = model.predict_dataset(&data).unwrap();
        let k = data.num_treatments();
        // Per-arm mean prediction should be near the population mean effect.
        for arm in 1..=k {
            let mean_pred: f64 =
                (0..data.n_samples()).map(|i| theta[i * k + arm - 1]).sum::<f64>()
                    / data.n_samples() as f64;
            let mean_true: f64 = (0..data.n_samples())
                .map(|i| true_effect(&config, data.feature_row(i), arm))
                .sum::<f64>()
                / data.n_samples() as f64;
            assert!(
                (mean_pred - mean_true).abs() < 0.25 * mean_true.abs().max(1.0),
                "arm {arm}: mean prediction {mean_pred:.3} vs true {mean_true:.3}"
            );
        }
    }

    #[test]
    fn save_load_round_trip() {
        let (data, _) = generate_synthetic(&SynthConfig {
            n_samples: 1500,
            seed: 9,
            ..SynthConfig::default()
        })
        .unwrap();
        let params = TrainParams {
            n_trees: 4,
            max_depth: 4,
            ..TrainParams::default()
        };
        let model = train_mbcf(&data, &params).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mbcf.json");
        model.save(&path).unwrap();
        assert_eq!(MbcfModel::load(&path).unwrap(), model);
    }
}
