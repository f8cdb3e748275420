//! File formats owned by the command-line layer: trained-model sniffing,
//! raw effect/cost problem CSVs, and assignment CSVs.

use std::path::Path;

use anyhow::{bail, Context};
use lbcf::dataset::RctDataset;
use lbcf::mbcf::MbcfModel;
use lbcf::udcf::{UdcfError, UdcfModel};

/// Either forest flavor, detected from the file itself: a per-arm ensemble
/// serializes its `forests` array, a unified forest serializes `trees`.
pub enum AnyModel {
    Udcf(UdcfModel),
    Mbcf(MbcfModel),
}

impl AnyModel {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let file = std::fs::File::open(path)
            .with_context(|| format!("cannot open model {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_reader(std::io::BufReader::new(file))
            .with_context(|| format!("model {} is not valid JSON", path.display()))?;
        if value.get("forests").is_some() {
            Ok(AnyModel::Mbcf(MbcfModel::load(path)?))
        } else {
            Ok(AnyModel::Udcf(UdcfModel::load(path)?))
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AnyModel::Udcf(_) => "udcf",
            AnyModel::Mbcf(_) => "mbcf",
        }
    }

    pub fn num_treatments(&self) -> usize {
        match self {
            AnyModel::Udcf(m) => m.num_treatments,
            AnyModel::Mbcf(m) => m.num_treatments,
        }
    }

    /// Row-major `N × K` effect estimates for every row of `data`.
    pub fn predict_dataset(&self, data: &RctDataset) -> Result<Vec<f64>, UdcfError> {
        match self {
            AnyModel::Udcf(m) => m.predict_dataset(data),
            AnyModel::Mbcf(m) => m.predict_dataset(data),
        }
    }
}

/// A raw allocation instance read straight from CSV, bypassing any model.
pub struct RawProblem {
    pub ids: Vec<u64>,
    pub theta: Vec<f64>,
    pub cost: Vec<f64>,
    pub num_treatments: usize,
}

/// Reads `id,theta_1..theta_K,cost_1..cost_K`; `K` is inferred from the
/// header. Column order in the file is free, extra columns are not.
pub fn load_problem_csv(path: &Path) -> anyhow::Result<RawProblem> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot open problem file {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();

    let column = |name: &str| -> anyhow::Result<usize> {
        names
            .iter()
            .position(|n| *n == name)
            .with_context(|| format!("{}: missing column `{name}`", path.display()))
    };
    let k = names.iter().filter(|n| n.starts_with("theta_")).count();
    if k == 0 {
        bail!("{}: no theta_1..theta_K columns found", path.display());
    }
    if names.len() != 1 + 2 * k {
        bail!(
            "{}: expected exactly id, {k} theta and {k} cost columns, found {}",
            path.display(),
            names.len()
        );
    }
    let id_idx = column("id")?;
    let theta_idx: Vec<usize> = (1..=k)
        .map(|j| column(&format!("theta_{j}")))
        .collect::<anyhow::Result<_>>()?;
    let cost_idx: Vec<usize> = (1..=k)
        .map(|j| column(&format!("cost_{j}")))
        .collect::<anyhow::Result<_>>()?;

    let mut ids = Vec::new();
    let mut theta = Vec::new();
    let mut cost = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let field = |idx: usize| -> anyhow::Result<f64> {
            record[idx]
                .parse::<f64>()
                .with_context(|| format!("{}: row {}: bad number `{}`", path.display(), row + 1, &record[idx]))
        };
        ids.push(record[id_idx].parse::<u64>().with_context(|| {
            format!("{}: row {}: bad id `{}`", path.display(), row + 1, &record[id_idx])
        })?);
        for &idx in &theta_idx {
            theta.push(field(idx)?);
        }
        for &idx in &cost_idx {
            cost.push(field(idx)?);
        }
    }
    if ids.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(RawProblem {
        ids,
        theta,
        cost,
        num_treatments: k,
    })
}

/// Writes `id,chosen_treatment,margin` with shortest-round-trip floats.
pub fn write_assignment_csv(
    path: &Path,
    ids: &[u64],
    chosen: &[u32],
    margins: &[f64],
) -> anyhow::Result<()> {
    let mut writer = csv::Writer::from_path(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    writer.write_record(["id", "chosen_treatment", "margin"])?;
    for i in 0..ids.len() {
        writer.write_record([
            format!("{}", ids[i]),
            format!("{}", chosen[i]),
            format!("{}", margins[i]),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Reads an assignment back; the margin column is optional and ignored.
pub fn load_assignment_csv(path: &Path) -> anyhow::Result<Vec<(u64, u32)>> {
    let mut reader = csv::Reader::from_path(path)
        .with_context(|| format!("cannot open assignment {}", path.display()))?;
    let headers = reader.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    let id_idx = names
        .iter()
        .position(|n| *n == "id")
        .with_context(|| format!("{}: missing column `id`", path.display()))?;
    let arm_idx = names
        .iter()
        .position(|n| *n == "chosen_treatment")
        .with_context(|| format!("{}: missing column `chosen_treatment`", path.display()))?;
    let mut out = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let id = record[id_idx].parse::<u64>().with_context(|| {
            format!("{}: row {}: bad id `{}`", path.display(), row + 1, &record[id_idx])
        })?;
        let arm = record[arm_idx].parse::<u32>().with_context(|| {
            format!(
                "{}: row {}: bad treatment `{}`",
                path.display(),
                row + 1,
                &record[arm_idx]
            )
        })?;
        out.push((id, arm));
    }
    Ok(out)
}
