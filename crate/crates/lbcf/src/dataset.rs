//! Randomized-trial dataset containers and CSV I/O.
//!
//! The central type is [`RctDataset`]: `N` users described by a numeric
//! feature matrix, the treatment arm each user was randomly assigned
//! (`0` = control, `1..=K` = treatments), the observed outcome, and a strictly
//! positive per-user cost for every treatment arm. Costs either come from
//! dedicated CSV columns or are broadcast from a per-arm cost table.
//!
//! [`GroundTruth`] stores the full potential-outcome matrix (`K + 1` columns
//! per user) for synthetic data, enabling exact policy evaluation.
//!
//! # CSV layout
//!
//! `id,<feature columns...>,treatment,outcome[,cost_1..cost_K]`
//!
//! Column roles are resolved by name through [`CsvSchema`]; every column that
//! is not the id, treatment, outcome, or a cost column is taken as a feature
//! in header order. Floating-point values are written in shortest
//! round-trip form, so a load → write → load cycle reproduces values exactly.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Maximum number of per-row problems quoted in a validation error message.
const MAX_REPORTED_ROWS: usize = 10;

/// Errors produced while loading, validating, or splitting trial data.
#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("column {column:?} not found in header")]
    MissingColumn { column: String },
    #[error("column {column:?} appears more than once in header")]
    DuplicateColumn { column: String },
    #[error("no cost source: provide cost columns in the file or a per-arm cost table")]
    NoCostSource,
    #[error("ambiguous cost source: both cost columns and a per-arm cost table were given")]
    AmbiguousCostSource,
    #[error("per-arm cost table must be non-empty, finite, and strictly positive")]
    BadCostLevels,
    #[error("row {row}, column {column:?}: cannot parse {value:?}")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },
    #[error("dataset validation failed:\n{0}")]
    Validation(String),
    #[error("test fraction must lie strictly between 0 and 1, got {0}")]
    BadFraction(f64),
    #[error("treatment arm {arm} has only {count} samples; too few to stratify")]
    ArmTooSmall { arm: usize, count: usize },
    #[error("ground truth has {truth_rows} rows but dataset has {data_rows}")]
    TruthShape { truth_rows: usize, data_rows: usize },
}

// ── RctDataset ──────────────────────────────────────────────────────────────

/// Data from a randomized controlled trial with `K` treatment arms.
///
/// Row `i` holds `n_features` numeric features, the randomized arm
/// `treatment[i] ∈ {0..=K}` (0 is control), the observed outcome, and the
/// known cost `cost(i, j)` of giving user `i` treatment `j` for every
/// `j ∈ {1..=K}`.
#[derive(Debug, Clone, PartialEq)]
pub struct RctDataset {
    ids: Vec<u64>,
    features: Vec<f64>, // row-major N × n_features
    feature_names: Vec<String>,
    n_features: usize,
    treatment: Vec<u32>,
    outcome: Vec<f64>,
    cost: Vec<f64>, // row-major N × K
    num_treatments: usize,
}

impl RctDataset {
    /// Builds a dataset and validates every structural invariant.
    ///
    /// Checks: consistent array shapes, unique ids, finite features /
    /// outcomes / costs, strictly positive costs, treatment labels within
    /// `0..=num_treatments`, at least one sample in every arm (control
    /// included), and `N ≥ K + 1`.
    pub fn new(
        ids: Vec<u64>,
        features: Vec<f64>,
        feature_names: Vec<String>,
        treatment: Vec<u32>,
        outcome: Vec<f64>,
        cost: Vec<f64>,
        num_treatments: usize,
    ) -> Result<Self, DatasetError> {
        let n = ids.len();
        let d = feature_names.len();
        let k = num_treatments;
        if k == 0 {
            return Err(DatasetError::Validation(
                "num_treatments must be at least 1".into(),
            ));
        }
        if features.len() != n * d || treatment.len() != n || outcome.len() != n || cost.len() != n * k
        {
            return Err(DatasetError::Validation(format!(
                "shape mismatch: n={n}, d={d}, K={k}, features={}, treatment={}, outcome={}, cost={}",
                features.len(),
                treatment.len(),
                outcome.len(),
                cost.len()
            )));
        }

        let mut issues: Vec<String> = Vec::new();
        let mut row_issues = 0usize;
        let push_row_issue = |issues: &mut Vec<String>, row_issues: &mut usize, msg: String| {
            if *row_issues < MAX_REPORTED_ROWS {
                issues.push(msg);
            }
            *row_issues += 1;
        };

        let mut arm_counts = vec![0usize; k + 1];
        for i in 0..n {
            let t = treatment[i] as usize;
            if t > k {
                push_row_issue(
                    &mut issues,
                    &mut row_issues,
                    format!("row {i}: treatment label {t} exceeds K={k}"),
                );
            } else {
                arm_counts[t] += 1;
            }
            if !outcome[i].is_finite() {
                push_row_issue(
                    &mut issues,
                    &mut row_issues,
                    format!("row {i}: outcome is not finite"),
                );
            }
            if features[i * d..(i + 1) * d].iter().any(|x| !x.is_finite()) {
                push_row_issue(
                    &mut issues,
                    &mut row_issues,
                    format!("row {i}: non-finite feature value"),
                );
            }
            if cost[i * k..(i + 1) * k]
                .iter()
                .any(|c| !c.is_finite() || *c <= 0.0)
            {
                push_row_issue(
                    &mut issues,
                    &mut row_issues,
                    format!("row {i}: cost must be finite and strictly positive"),
                );
            }
        }
        if row_issues > MAX_REPORTED_ROWS {
            issues.push(format!(
                "... and {} more offending rows",
                row_issues - MAX_REPORTED_ROWS
            ));
        }

        if n < k + 2 {
            // Need at least one sample per arm (K + 1 arms) to estimate
            // anything, and N ≥ K + 1 overall; the arm-count check below
            // subsumes the latter except for tiny degenerate inputs.
            if n < k + 1 {
                issues.push(format!("need at least K+1={} rows, got {n}", k + 1));
            }
        }
        for (arm, &count) in arm_counts.iter().enumerate() {
            if count == 0 && row_issues == 0 {
                issues.push(format!("treatment arm {arm} has no samples"));
            }
        }
        {
            let mut seen = BTreeSet::new();
            for (i, id) in ids.iter().enumerate() {
                if !seen.insert(*id) {
                    issues.push(format!("row {i}: duplicate id {id}"));
                    break;
                }
            }
        }

        if !issues.is_empty() {
            return Err(DatasetError::Validation(issues.join("\n")));
        }
        Ok(Self {
            ids,
            features,
            feature_names,
            n_features: d,
            treatment,
            outcome,
            cost,
            num_treatments: k,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.ids.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Number of treatment arms `K`, control excluded.
    pub fn num_treatments(&self) -> usize {
        self.num_treatments
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn feature_row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    /// Flat row-major `N × n_features` feature matrix.
    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn treatment(&self, i: usize) -> u32 {
        self.treatment[i]
    }

    pub fn treatments(&self) -> &[u32] {
        &self.treatment
    }

    pub fn outcome(&self, i: usize) -> f64 {
        self.outcome[i]
    }

    pub fn outcomes(&self) -> &[f64] {
        &self.outcome
    }

    /// Cost of giving user `i` treatment `arm` (`arm ∈ 1..=K`).
    pub fn cost(&self, i: usize, arm: usize) -> f64 {
        debug_assert!((1..=self.num_treatments).contains(&arm));
        self.cost[i * self.num_treatments + (arm - 1)]
    }

    /// Flat row-major `N × K` cost matrix (column `j-1` is treatment `j`).
    pub fn costs(&self) -> &[f64] {
        &self.cost
    }

    /// Number of samples in each arm, index 0 = control.
    pub fn arm_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_treatments + 1];
        for &t in &self.treatment {
            counts[t as usize] += 1;
        }
        counts
    }

    /// New dataset containing the given rows, in the given order.
    ///
    /// Panics if an index is out of bounds. Validation is not re-run: any
    /// subset of valid rows is structurally valid except possibly for arm
    /// coverage, which callers owning the subset policy must guarantee.
    pub fn subset(&self, indices: &[usize]) -> RctDataset {
        let d = self.n_features;
        let k = self.num_treatments;
        let mut ids = Vec::with_capacity(indices.len());
        let mut features = Vec::with_capacity(indices.len() * d);
        let mut treatment = Vec::with_capacity(indices.len());
        let mut outcome = Vec::with_capacity(indices.len());
        let mut cost = Vec::with_capacity(indices.len() * k);
        for &i in indices {
            ids.push(self.ids[i]);
            features.extend_from_slice(self.feature_row(i));
            treatment.push(self.treatment[i]);
            outcome.push(self.outcome[i]);
            cost.extend_from_slice(&self.cost[i * k..(i + 1) * k]);
        }
        RctDataset {
            ids,
            features,
            feature_names: self.feature_names.clone(),
            n_features: d,
            treatment,
            outcome,
            cost,
            num_treatments: k,
        }
    }

    /// Deterministic stratified train/test row split.
    ///
    /// Within every treatment arm, `round(arm_size · test_fraction)` rows
    /// (clamped so both sides keep at least one) go to the test set, chosen by
    /// a seeded shuffle. Returned index lists are ascending, and together they
    /// partition `0..N`. Errors if a fraction is out of `(0, 1)` or an arm has
    /// fewer than two samples.
    pub fn split_indices(
        &self,
        test_fraction: f64,
        seed: u64,
    ) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
        if !(test_fraction > 0.0 && test_fraction < 1.0) {
            return Err(DatasetError::BadFraction(test_fraction));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut train = Vec::new();
        let mut test = Vec::new();
        for arm in 0..=self.num_treatments {
            let mut members: Vec<usize> = (0..self.n_samples())
                .filter(|&i| self.treatment[i] as usize == arm)
                .collect();
            if members.len() < 2 {
                return Err(DatasetError::ArmTooSmall {
                    arm,
                    count: members.len(),
                });
            }
            let n_test = ((members.len() as f64 * test_fraction).round() as usize)
                .clamp(1, members.len() - 1);
            members.shuffle(&mut rng);
            test.extend_from_slice(&members[..n_test]);
            train.extend_from_slice(&members[n_test..]);
        }
        train.sort_unstable();
        test.sort_unstable();
        Ok((train, test))
    }

    /// Stratified split into `(train, test)` datasets; see [`Self::split_indices`].
    pub fn split_train_test(
        &self,
        test_fraction: f64,
        seed: u64,
    ) -> Result<(RctDataset, RctDataset), DatasetError> {
        let (train_idx, test_idx) = self.split_indices(test_fraction, seed)?;
        Ok((self.subset(&train_idx), self.subset(&test_idx)))
    }
}

// ── CSV schema and I/O ──────────────────────────────────────────────────────

/// Column-role map for loading a trial CSV.
///
/// Costs come from exactly one source: named per-user `cost_columns`, a
/// per-arm `cost_levels` table broadcast to every user, or (default) columns
/// auto-detected by the `cost_<arm>` naming convention.
#[derive(Debug, Clone)]
pub struct CsvSchema {
    pub id_col: String,
    pub treatment_col: String,
    pub outcome_col: String,
    /// Per-user cost columns, in arm order (`K` = length).
    pub cost_columns: Option<Vec<String>>,
    /// Per-arm cost table broadcast to all users (`K` = length).
    pub cost_levels: Option<Vec<f64>>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        Self {
            id_col: "id".into(),
            treatment_col: "treatment".into(),
            outcome_col: "outcome".into(),
            cost_columns: None,
            cost_levels: None,
        }
    }
}

impl CsvSchema {
    /// Schema with costs broadcast from a per-arm table.
    pub fn with_cost_levels(levels: Vec<f64>) -> Self {
        Self {
            cost_levels: Some(levels),
            ..Self::default()
        }
    }

    /// Schema reading per-user costs from the named columns.
    pub fn with_cost_columns(columns: Vec<String>) -> Self {
        Self {
            cost_columns: Some(columns),
            ..Self::default()
        }
    }
}

fn find_column(header: &[String], name: &str) -> Result<usize, DatasetError> {
    let mut hits = header.iter().enumerate().filter(|(_, h)| *h == name);
    let first = hits.next().ok_or_else(|| DatasetError::MissingColumn {
        column: name.to_string(),
    })?;
    if hits.next().is_some() {
        return Err(DatasetError::DuplicateColumn {
            column: name.to_string(),
        });
    }
    Ok(first.0)
}

/// Columns named `cost_1..cost_K` for consecutive arms starting at 1.
fn autodetect_cost_columns(header: &[String]) -> Vec<String> {
    let mut found = Vec::new();
    for arm in 1.. {
        let name = format!("cost_{arm}");
        if header.iter().any(|h| *h == name) {
            found.push(name);
        } else {
            break;
        }
    }
    found
}

/// Loads a trial dataset from CSV. See the module docs for the layout.
pub fn load_rct_csv(path: &Path, schema: &CsvSchema) -> Result<RctDataset, DatasetError> {
    if schema.cost_columns.is_some() && schema.cost_levels.is_some() {
        return Err(DatasetError::AmbiguousCostSource);
    }
    let mut reader = csv::ReaderBuilder::new().from_path(path)?;
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();

    let id_idx = find_column(&header, &schema.id_col)?;
    let treatment_idx = find_column(&header, &schema.treatment_col)?;
    let outcome_idx = find_column(&header, &schema.outcome_col)?;

    enum CostSource {
        Columns(Vec<usize>),
        Levels(Vec<f64>),
    }
    let cost_source = if let Some(levels) = &schema.cost_levels {
        if levels.is_empty() || levels.iter().any(|c| !c.is_finite() || *c <= 0.0) {
            return Err(DatasetError::BadCostLevels);
        }
        CostSource::Levels(levels.clone())
    } else {
        let names = match &schema.cost_columns {
            Some(names) => names.clone(),
            None => {
                let auto = autodetect_cost_columns(&header);
                if auto.is_empty() {
                    return Err(DatasetError::NoCostSource);
                }
                auto
            }
        };
        let mut idxs = Vec::with_capacity(names.len());
        for name in &names {
            idxs.push(find_column(&header, name)?);
        }
        CostSource::Columns(idxs)
    };
    let num_treatments = match &cost_source {
        CostSource::Columns(idxs) => idxs.len(),
        CostSource::Levels(levels) => levels.len(),
    };

    let mut reserved: BTreeSet<usize> = [id_idx, treatment_idx, outcome_idx].into();
    if let CostSource::Columns(idxs) = &cost_source {
        reserved.extend(idxs.iter().copied());
    }
    let feature_idx: Vec<usize> = (0..header.len()).filter(|i| !reserved.contains(i)).collect();
    let feature_names: Vec<String> = feature_idx.iter().map(|&i| header[i].clone()).collect();

    let mut ids = Vec::new();
    let mut features = Vec::new();
    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut cost = Vec::new();

    let parse_f64 = |row: usize, col: usize, field: &str, header: &[String]| {
        field
            .trim()
            .parse::<f64>()
            .map_err(|_| DatasetError::Parse {
                row,
                column: header[col].clone(),
                value: field.to_string(),
            })
    };

    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let get = |col: usize| record.get(col).unwrap_or("");
        ids.push(
            get(id_idx)
                .trim()
                .parse::<u64>()
                .map_err(|_| DatasetError::Parse {
                    row,
                    column: header[id_idx].clone(),
                    value: get(id_idx).to_string(),
                })?,
        );
        treatment.push(get(treatment_idx).trim().parse::<u32>().map_err(|_| {
            DatasetError::Parse {
                row,
                column: header[treatment_idx].clone(),
                value: get(treatment_idx).to_string(),
            }
        })?);
        outcome.push(parse_f64(row, outcome_idx, get(outcome_idx), &header)?);
        for &fi in &feature_idx {
            features.push(parse_f64(row, fi, get(fi), &header)?);
        }
        match &cost_source {
            CostSource::Columns(idxs) => {
                for &ci in idxs {
                    cost.push(parse_f64(row, ci, get(ci), &header)?);
                }
            }
            CostSource::Levels(levels) => cost.extend_from_slice(levels),
        }
    }

    RctDataset::new(
        ids,
        features,
        feature_names,
        treatment,
        outcome,
        cost,
        num_treatments,
    )
}

/// Writes a trial dataset as CSV with explicit `cost_1..cost_K` columns.
///
/// Floats are written in shortest round-trip form, so reloading reproduces
/// every value bit for bit.
pub fn write_rct_csv(data: &RctDataset, path: &Path) -> Result<(), DatasetError> {
    let mut writer = csv::WriterBuilder::new().from_path(path)?;
    let mut header: Vec<String> = vec!["id".into()];
    header.extend(data.feature_names().iter().cloned());
    header.push("treatment".into());
    header.push("outcome".into());
    for arm in 1..=data.num_treatments() {
        header.push(format!("cost_{arm}"));
    }
    writer.write_record(&header)?;

    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..data.n_samples() {
        record.clear();
        record.push(data.ids[i].to_string());
        for x in data.feature_row(i) {
            record.push(format!("{x}"));
        }
        record.push(data.treatment[i].to_string());
        record.push(format!("{}", data.outcome[i]));
        for arm in 1..=data.num_treatments() {
            record.push(format!("{}", data.cost(i, arm)));
        }
        writer.write_record(record.iter())?;
    }
    writer.flush()?;
    Ok(())
}

// ── GroundTruth ─────────────────────────────────────────────────────────────

/// Full potential-outcome matrix for synthetic data.
///
/// Row `i` holds the outcome user `i` would realize under every arm
/// `0..=K`; column 0 is the control outcome. Aligned row-by-row with the
/// dataset it was generated with.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    ids: Vec<u64>,
    values: Vec<f64>, // row-major N × (K + 1)
    num_arms: usize,  // K + 1
}

impl GroundTruth {
    pub fn new(ids: Vec<u64>, values: Vec<f64>, num_arms: usize) -> Result<Self, DatasetError> {
        if num_arms < 2 || values.len() != ids.len() * num_arms {
            return Err(DatasetError::Validation(format!(
                "potential-outcome shape mismatch: n={}, arms={}, values={}",
                ids.len(),
                num_arms,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DatasetError::Validation(
                "potential outcomes must be finite".into(),
            ));
        }
        Ok(Self {
            ids,
            values,
            num_arms,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.ids.len()
    }

    /// Number of columns, i.e. `K + 1` arms including control.
    pub fn num_arms(&self) -> usize {
        self.num_arms
    }

    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// Potential outcome of user `i` under arm `arm ∈ 0..=K`.
    pub fn value(&self, i: usize, arm: usize) -> f64 {
        self.values[i * self.num_arms + arm]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.num_arms..(i + 1) * self.num_arms]
    }

    /// Mean potential outcome of one arm over all users.
    pub fn arm_mean(&self, arm: usize) -> f64 {
        let n = self.n_samples();
        (0..n).map(|i| self.value(i, arm)).sum::<f64>() / n as f64
    }

    /// New matrix containing the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> GroundTruth {
        let mut ids = Vec::with_capacity(indices.len());
        let mut values = Vec::with_capacity(indices.len() * self.num_arms);
        for &i in indices {
            ids.push(self.ids[i]);
            values.extend_from_slice(self.row(i));
        }
        GroundTruth {
            ids,
            values,
            num_arms: self.num_arms,
        }
    }
}

/// Writes potential outcomes as `id,y_0..y_K` CSV.
pub fn write_truth_csv(truth: &GroundTruth, path: &Path) -> Result<(), DatasetError> {
    let mut writer = csv::WriterBuilder::new().from_path(path)?;
    let mut header = vec!["id".to_string()];
    for arm in 0..truth.num_arms() {
        header.push(format!("y_{arm}"));
    }
    writer.write_record(&header)?;
    let mut record: Vec<String> = Vec::with_capacity(header.len());
    for i in 0..truth.n_samples() {
        record.clear();
        record.push(truth.ids[i].to_string());
        for v in truth.row(i) {
            record.push(format!("{v}"));
        }
        writer.write_record(record.iter())?;
    }
    writer.flush()?;
    Ok(())
}

/// Loads a potential-outcome matrix written by [`write_truth_csv`].
pub fn load_truth_csv(path: &Path) -> Result<GroundTruth, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().from_path(path)?;
    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let id_idx = find_column(&header, "id")?;
    let mut arm_idx = Vec::new();
    for arm in 0.. {
        match find_column(&header, &format!("y_{arm}")) {
            Ok(i) => arm_idx.push(i),
            Err(DatasetError::MissingColumn { .. }) => break,
            Err(e) => return Err(e),
        }
    }
    if arm_idx.len() < 2 {
        return Err(DatasetError::MissingColumn {
            column: "y_0/y_1".into(),
        });
    }
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let get = |col: usize| record.get(col).unwrap_or("");
        ids.push(
            get(id_idx)
                .trim()
                .parse::<u64>()
                .map_err(|_| DatasetError::Parse {
                    row,
                    column: header[id_idx].clone(),
                    value: get(id_idx).to_string(),
                })?,
        );
        for &ci in &arm_idx {
            values.push(
                get(ci)
                    .trim()
                    .parse::<f64>()
                    .map_err(|_| DatasetError::Parse {
                        row,
                        column: header[ci].clone(),
                        value: get(ci).to_string(),
                    })?,
            );
        }
    }
    GroundTruth::new(ids, values, arm_idx.len())
}

/// Renders the sibling truth path for a dataset path: `x.csv → x.truth.csv`.
pub fn truth_path_for(data_path: &Path) -> std::path::PathBuf {
    let stem = data_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "data".into());
    data_path.with_file_name(format!("{stem}.truth.csv"))
}

/// Checks that a truth matrix is row-aligned with a dataset.
pub fn check_alignment(data: &RctDataset, truth: &GroundTruth) -> Result<(), DatasetError> {
    if data.n_samples() != truth.n_samples() {
        return Err(DatasetError::TruthShape {
            truth_rows: truth.n_samples(),
            data_rows: data.n_samples(),
        });
    }
    if data.ids() != truth.ids() {
        let mut msg = String::new();
        let _ = write!(msg, "truth ids do not match dataset ids");
        return Err(DatasetError::Validation(msg));
    }
    if truth.num_arms() != data.num_treatments() + 1 {
        return Err(DatasetError::Validation(format!(
            "truth has {} arms but dataset has {}",
            truth.num_arms(),
            data.num_treatments() + 1
        )));
    }
    Ok(())
}
