//! Run-to-failure records, ground-truth labels, min-max scaling, run-level
//! splitting and the synthetic run generator used as the test oracle.
//!
//! A run is a table: one integer time column followed by named feature
//! columns. Time is an integer step index; `dt_seconds` is carried as
//! metadata only.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureVector;

pub const DEFAULT_DT_SECONDS: f64 = 60.0;
pub const DEFAULT_INDICATOR: &str = "FFT_bin_2_H";

/// One run-to-failure record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSeries {
    pub run_id: String,
    pub dt_seconds: f64,
    pub condition_tag: String,
    schema: Vec<String>,
    t_index: Vec<u64>,
    values: Vec<Vec<f64>>,
}

impl RunSeries {
    /// Builds a run, checking the table invariants (strictly increasing time,
    /// one value per schema column on every row, at least one row).
    pub fn new(
        run_id: impl Into<String>,
        schema: Vec<String>,
        t_index: Vec<u64>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self> {
        if t_index.len() != values.len() {
            return Err(Error::LengthMismatch(t_index.len(), values.len()));
        }
        if t_index.is_empty() {
            return Err(Error::EmptyAfterCleaning);
        }
        for w in t_index.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::NonMonotonicTime(w[1]));
            }
        }
        if let Some(row) = values.iter().find(|r| r.len() != schema.len()) {
            return Err(Error::LengthMismatch(schema.len(), row.len()));
        }
        Ok(Self {
            run_id: run_id.into(),
            dt_seconds: DEFAULT_DT_SECONDS,
            condition_tag: String::from("unknown"),
            schema,
            t_index,
            values,
        })
    }

    pub fn with_condition(mut self, tag: impl Into<String>) -> Self {
        self.condition_tag = tag.into();
        self
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn t_index(&self) -> &[u64] {
        &self.t_index
    }

    pub fn len(&self) -> usize {
        self.t_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t_index.is_empty()
    }

    /// Failure index T_f: the last time index of the run.
    pub fn failure_index(&self) -> u64 {
        *self.t_index.last().expect("run has at least one row")
    }

    pub fn row_values(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn row(&self, i: usize) -> FeatureVector {
        FeatureVector::from_pairs(
            self.schema
                .iter()
                .cloned()
                .zip(self.values[i].iter().copied()),
        )
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.schema.iter().position(|s| s == name)
    }

    pub fn column(&self, name: &str) -> Result<Vec<f64>> {
        let j = self
            .column_index(name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))?;
        Ok(self.values.iter().map(|r| r[j]).collect())
    }

    /// Writes the run as CSV: `t` followed by the schema columns.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["t".to_string()];
        header.extend(self.schema.iter().cloned());
        w.write_record(&header)?;
        for (t, row) in self.t_index.iter().zip(&self.values) {
            let mut rec = vec![t.to_string()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        Ok(())
    }
}

/// Result of [`load_csv`]: the run plus the number of rows dropped because
/// they contained a blank cell in a required column.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub run: RunSeries,
    pub dropped_count: usize,
}

/// Loads one run from CSV.
///
/// The first header column is the integer time index. When `schema` is
/// non-empty only those feature columns are kept (in that order) and each
/// must be present; an empty `schema` keeps every column. Rows with a blank
/// cell in a kept column are dropped and counted. Rows are sorted by time;
/// duplicate time indices are rejected.
pub fn load_csv(path: &Path, schema: &[&str]) -> Result<LoadedRun> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Serialization(format!("{other:?}")),
        })?;
    let headers = rdr.headers()?.clone();
    if headers.len() < 2 {
        return Err(Error::MissingColumn("<feature column>".into()));
    }
    let time_name = headers[0].to_string();
    let wanted: Vec<String> = if schema.is_empty() {
        headers.iter().skip(1).map(str::to_string).collect()
    } else {
        schema.iter().map(|s| s.to_string()).collect()
    };
    let cols = wanted
        .iter()
        .map(|name| {
            headers
                .iter()
                .skip(1)
                .position(|h| h == name)
                .map(|p| p + 1)
                .ok_or_else(|| Error::MissingColumn(name.clone()))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rows: Vec<(u64, Vec<f64>)> = Vec::new();
    let mut dropped = 0;
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let t_raw = rec.get(0).unwrap_or("");
        if t_raw.is_empty() {
            dropped += 1;
            continue;
        }
        let t = t_raw.parse::<u64>().map_err(|_| Error::Parse {
            column: time_name.clone(),
            value: t_raw.to_string(),
            line,
        })?;
        let mut vals = Vec::with_capacity(cols.len());
        let mut missing = false;
        for (&c, name) in cols.iter().zip(&wanted) {
            let cell = rec.get(c).unwrap_or("");
            if cell.is_empty() {
                missing = true;
                break;
            }
            let v = cell.parse::<f64>().map_err(|_| Error::Parse {
                column: name.clone(),
                value: cell.to_string(),
                line,
            })?;
            vals.push(v);
        }
        if missing {
            dropped += 1;
            continue;
        }
        rows.push((t, vals));
    }
    if rows.is_empty() {
        return Err(Error::EmptyAfterCleaning);
    }
    rows.sort_by_key(|(t, _)| *t);
    let (t_index, values): (Vec<u64>, Vec<Vec<f64>>) = rows.into_iter().unzip();
    let run_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let run = RunSeries::new(run_id, wanted, t_index, values)?;
    Ok(LoadedRun {
        run,
        dropped_count: dropped,
    })
}

/// Piecewise ground-truth RUL over `t = 0..=total`: flat at `total` up to the
/// first prediction time, then affine down to zero at `t = total`.
#[derive(Debug, Clone, PartialEq)]
pub struct RulLabels {
    pub fpt: u64,
    pub total: u64,
    values: Vec<f64>,
}

impl RulLabels {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn at(&self, t: u64) -> Option<f64> {
        self.values.get(t as usize).copied()
    }

    /// Labels divided by `total`, so they run from 1 down to 0.
    pub fn normalized(&self) -> Vec<f64> {
        let total = self.total as f64;
        self.values.iter().map(|v| v / total).collect()
    }
}

pub fn build_rul_labels(total: u64, fpt: u64) -> Result<RulLabels> {
    if total == 0 || fpt >= total {
        return Err(Error::InvalidFpt { fpt, total });
    }
    let tt = total as f64;
    let span = (total - fpt) as f64;
    let values = (0..=total)
        .map(|t| {
            if t <= fpt {
                tt
            } else if t == total {
                0.0
            } else {
                tt - tt * ((t - fpt) as f64) / span
            }
        })
        .collect();
    Ok(RulLabels { fpt, total, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScale {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

impl FeatureScale {
    pub fn is_degenerate(&self) -> bool {
        self.max == self.min
    }

    pub fn apply(&self, x: f64) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            (x - self.min) / (self.max - self.min)
        }
    }

    pub fn invert(&self, z: f64) -> f64 {
        if self.is_degenerate() {
            self.min
        } else {
            self.min + z * (self.max - self.min)
        }
    }
}

/// Per-feature min/max learned from training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerParams {
    pub features: Vec<FeatureScale>,
}

impl ScalerParams {
    pub fn names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&FeatureScale> {
        self.features.iter().find(|f| f.name == name)
    }

    /// Names of features whose training range collapsed to a single value.
    pub fn degenerate(&self) -> Vec<&str> {
        self.features
            .iter()
            .filter(|f| f.is_degenerate())
            .map(|f| f.name.as_str())
            .collect()
    }
}

fn fit_columns<'a>(
    names: &[String],
    rows: impl Iterator<Item = &'a [f64]>,
) -> Result<ScalerParams> {
    let mut mins = vec![f64::INFINITY; names.len()];
    let mut maxs = vec![f64::NEG_INFINITY; names.len()];
    let mut n = 0usize;
    for row in rows {
        if row.len() != names.len() {
            return Err(Error::LengthMismatch(names.len(), row.len()));
        }
        for (j, &v) in row.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteInput);
            }
            mins[j] = mins[j].min(v);
            maxs[j] = maxs[j].max(v);
        }
        n += 1;
    }
    if n < 2 {
        return Err(Error::TooFewRows { needed: 2, got: n });
    }
    Ok(ScalerParams {
        features: names
            .iter()
            .zip(mins.into_iter().zip(maxs))
            .map(|(name, (min, max))| FeatureScale {
                name: name.clone(),
                min,
                max,
            })
            .collect(),
    })
}

/// Fits the scaler on feature vectors that must all share one schema.
pub fn fit_scaler(train_rows: &[FeatureVector]) -> Result<ScalerParams> {
    let names: Vec<String> = match train_rows.first() {
        Some(r) => r.names().map(str::to_string).collect(),
        None => return Err(Error::TooFewRows { needed: 2, got: 0 }),
    };
    for r in train_rows {
        if !r.names().eq(names.iter().map(String::as_str)) {
            return Err(Error::SchemaMismatch {
                expected: names.clone(),
                found: r.names().map(str::to_string).collect(),
            });
        }
    }
    let values: Vec<Vec<f64>> = train_rows.iter().map(|r| r.values().collect()).collect();
    fit_columns(&names, values.iter().map(Vec::as_slice))
}

/// Fits the scaler on every row of the given (training) runs.
pub fn fit_scaler_runs(train: &[&RunSeries]) -> Result<ScalerParams> {
    let names = match train.first() {
        Some(r) => r.schema.clone(),
        None => return Err(Error::TooFewRows { needed: 2, got: 0 }),
    };
    for r in train {
        if r.schema != names {
            return Err(Error::SchemaMismatch {
                expected: names.clone(),
                found: r.schema.clone(),
            });
        }
    }
    fit_columns(
        &names,
        train.iter().flat_map(|r| r.values.iter().map(Vec::as_slice)),
    )
}

/// Applies min-max scaling. Out-of-range values are not clipped.
pub fn transform(rows: &[FeatureVector], params: &ScalerParams) -> Result<Vec<FeatureVector>> {
    rows.iter()
        .map(|row| {
            if !row.names().eq(params.features.iter().map(|f| f.name.as_str())) {
                return Err(Error::SchemaMismatch {
                    expected: params.names(),
                    found: row.names().map(str::to_string).collect(),
                });
            }
            Ok(FeatureVector::from_pairs(
                params
                    .features
                    .iter()
                    .zip(row.values())
                    .map(|(f, v)| (f.name.clone(), f.apply(v))),
            ))
        })
        .collect()
}

pub fn inverse_transform(
    rows: &[FeatureVector],
    params: &ScalerParams,
) -> Result<Vec<FeatureVector>> {
    rows.iter()
        .map(|row| {
            if !row.names().eq(params.features.iter().map(|f| f.name.as_str())) {
                return Err(Error::SchemaMismatch {
                    expected: params.names(),
                    found: row.names().map(str::to_string).collect(),
                });
            }
            Ok(FeatureVector::from_pairs(
                params
                    .features
                    .iter()
                    .zip(row.values())
                    .map(|(f, v)| (f.name.clone(), f.invert(v))),
            ))
        })
        .collect()
}

pub fn transform_run(run: &RunSeries, params: &ScalerParams) -> Result<RunSeries> {
    if run.schema != params.names() {
        return Err(Error::SchemaMismatch {
            expected: params.names(),
            found: run.schema.clone(),
        });
    }
    let values = run
        .values
        .iter()
        .map(|row| {
            row.iter()
                .zip(&params.features)
                .map(|(&v, f)| f.apply(v))
                .collect()
        })
        .collect();
    Ok(RunSeries {
        values,
        ..run.clone()
    })
}

/// Run-level split: every run lands in exactly one partition, preserving
/// input order within each side.
pub fn split_temporal(
    runs: Vec<RunSeries>,
    test_run_ids: &[String],
) -> Result<(Vec<RunSeries>, Vec<RunSeries>)> {
    let known: BTreeSet<&str> = runs.iter().map(|r| r.run_id.as_str()).collect();
    if let Some(missing) = test_run_ids.iter().find(|id| !known.contains(id.as_str())) {
        return Err(Error::UnknownRunId(missing.clone()));
    }
    let test_ids: BTreeSet<&str> = test_run_ids.iter().map(String::as_str).collect();
    let (test, train): (Vec<_>, Vec<_>) = runs
        .into_iter()
        .partition(|r| test_ids.contains(r.run_id.as_str()));
    Ok((train, test))
}

/// Parameters of one synthetic run-to-failure record.
///
/// The run has rows `t = 0..=length`; the failure index is `length`. The
/// indicator is `baseline_mean + N(0, baseline_std)` everywhere, plus, from
/// `onset` on, a growth term `baseline_mean * (exp(growth_rate * (t - onset)) - 1)`
/// and spike bursts of height `spike_amplitude`. Bursts last
/// `spike_burst_len` steps, the first starts at `onset`, and they repeat every
/// `burst_period` steps (`0` means a single burst).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub run_id: String,
    pub condition_tag: String,
    pub length: u64,
    pub onset: u64,
    pub baseline_mean: f64,
    pub baseline_std: f64,
    pub growth_rate: f64,
    pub spike_amplitude: f64,
    pub spike_burst_len: u64,
    pub burst_period: u64,
    pub noise_seed: u64,
    pub indicator_name: String,
    /// Extra pure-noise columns appended after the indicator.
    pub n_noise_features: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            run_id: "synthetic".into(),
            condition_tag: "synthetic".into(),
            length: 200,
            onset: 100,
            baseline_mean: 1.0,
            baseline_std: 0.05,
            growth_rate: 0.04,
            spike_amplitude: 0.4,
            spike_burst_len: 8,
            burst_period: 24,
            noise_seed: 0,
            indicator_name: DEFAULT_INDICATOR.into(),
            n_noise_features: 3,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synthetic run: {m}")));
        if self.length == 0 {
            return bad("length must be positive");
        }
        if self.onset == 0 || self.onset >= self.length {
            return bad("onset must lie strictly inside (0, length)");
        }
        if self.spike_burst_len == 0 {
            return bad("spike_burst_len must be at least 1");
        }
        if !(self.baseline_std >= 0.0) || !self.baseline_std.is_finite() {
            return bad("baseline_std must be non-negative and finite");
        }
        if !(self.growth_rate >= 0.0) || !(self.spike_amplitude >= 0.0) {
            return bad("growth_rate and spike_amplitude must be non-negative");
        }
        if !self.baseline_mean.is_finite() {
            return bad("baseline_mean must be finite");
        }
        Ok(())
    }
}

const NOISE_FEATURE_NAMES: [&str; 8] = [
    "Kurtosis_V",
    "RMS_V",
    "CrestFactor_H",
    "Skewness_H",
    "BandPower_Mid_V",
    "Kurtosis_H",
    "FFT_bin_4_V",
    "BandPower_Mid_H",
];

fn noise_feature_name(j: usize) -> String {
    match NOISE_FEATURE_NAMES.get(j) {
        Some(n) => n.to_string(),
        None => format!("Noise_{j}"),
    }
}

/// Mixes a seed with a stream index (splitmix64 finalizer).
pub(crate) fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates a synthetic run and returns it with its true onset index.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(RunSeries, u64)> {
    cfg.validate()?;
    let n = cfg.length as usize + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed);
    let noise = |std: f64, rng: &mut ChaCha8Rng| -> f64 {
        if std == 0.0 {
            0.0
        } else {
            Normal::new(0.0, std).expect("finite std").sample(rng)
        }
    };
    let indicator: Vec<f64> = (0..n as u64)
        .map(|t| {
            let mut x = cfg.baseline_mean + noise(cfg.baseline_std, &mut rng);
            if t >= cfg.onset {
                let tau = t - cfg.onset;
                x += cfg.baseline_mean * ((cfg.growth_rate * tau as f64).exp() - 1.0);
                let in_burst = if cfg.burst_period == 0 {
                    tau < cfg.spike_burst_len
                } else {
                    tau % cfg.burst_period < cfg.spike_burst_len
                };
                if in_burst {
                    x += cfg.spike_amplitude;
                }
            }
            x
        })
        .collect();
    let noise_cols: Vec<Vec<f64>> = (0..cfg.n_noise_features)
        .map(|j| {
            let mut r = ChaCha8Rng::seed_from_u64(derive_seed(cfg.noise_seed, j as u64 + 1));
            let base = 1.0 + j as f64;
            (0..n).map(|_| base + noise(0.1 * base, &mut r)).collect()
        })
        .collect();

    let mut schema = vec![cfg.indicator_name.clone()];
    schema.extend((0..cfg.n_noise_features).map(noise_feature_name));
    let values = (0..n)
        .map(|i| {
            let mut row = vec![indicator[i]];
            row.extend(noise_cols.iter().map(|c| c[i]));
            row
        })
        .collect();
    let run = RunSeries::new(cfg.run_id.clone(), schema, (0..n as u64).collect(), values)?
        .with_condition(cfg.condition_tag.clone());
    Ok((run, cfg.onset))
}

/// Sidecar metadata written next to every synthetic CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    pub run_id: String,
    pub true_onset: u64,
    pub config: SynthConfig,
}

impl SynthMeta {
    pub fn to_text(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

/// A generated run together with its ground truth.
#[derive(Debug, Clone)]
pub struct SyntheticRun {
    pub series: RunSeries,
    pub true_onset: u64,
    pub config: SynthConfig,
}

impl SyntheticRun {
    pub fn meta(&self) -> SynthMeta {
        SynthMeta {
            run_id: self.series.run_id.clone(),
            true_onset: self.true_onset,
            config: self.config.clone(),
        }
    }

    /// Writes `<dir>/<run_id>.csv` and `<dir>/<run_id>.meta.toml`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let id = &self.series.run_id;
        self.series.write_csv(&dir.join(format!("{id}.csv")))?;
        let meta_path = dir.join(format!("{id}.meta.toml"));
        fs::write(&meta_path, self.meta().to_text()?).map_err(|e| Error::io(&meta_path, e))
    }
}

/// Named synthetic suites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SuiteKind {
    /// Clear onset bursts followed by exponential growth to failure.
    Standard,
    /// Weak onset: bursts of 2.5 baseline standard deviations and slower
    /// growth.
    Incipient,
    /// No degradation at all (the onset is pushed past the end of the run).
    Healthy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub kind: SuiteKind,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub min_length: u64,
    pub max_length: u64,
    pub n_noise_features: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            kind: SuiteKind::Standard,
            seed: 7,
            n_train: 5,
            n_test: 2,
            min_length: 200,
            max_length: 260,
            n_noise_features: 3,
        }
    }
}

impl SuiteConfig {
    pub fn train_ids(&self) -> Vec<String> {
        (1..=self.n_train).map(|i| format!("train_{i:02}")).collect()
    }

    pub fn test_ids(&self) -> Vec<String> {
        (1..=self.n_test).map(|i| format!("test_{i:02}")).collect()
    }
}

/// Synthetic run parameters drawn for member `index` of a suite.
pub fn suite_member_config(suite: &SuiteConfig, run_id: &str, index: u64) -> SynthConfig {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(suite.seed, 1000 + index));
    let lo = suite.min_length.max(40);
    let hi = suite.max_length.max(lo);
    let length = rng.random_range(lo..=hi);
    let onset_frac: f64 = rng.random_range(0.45..0.6);
    let onset = ((length as f64) * onset_frac).round() as u64;
    let span = (length - onset) as f64;
    let noise_seed = derive_seed(suite.seed, 2000 + index);
    let base = SynthConfig {
        run_id: run_id.to_string(),
        condition_tag: format!("{:?}", suite.kind).to_lowercase(),
        length,
        onset,
        baseline_mean: 1.0,
        baseline_std: 0.05,
        noise_seed,
        n_noise_features: suite.n_noise_features,
        ..SynthConfig::default()
    };
    match suite.kind {
        SuiteKind::Standard => {
            // total growth at failure: exp(G) - 1 baseline units
            let total_growth: f64 = rng.random_range(4.25..4.75);
            SynthConfig {
                growth_rate: total_growth / span,
                spike_amplitude: 0.4,
                spike_burst_len: 8,
                burst_period: 24,
                ..base
            }
        }
        SuiteKind::Incipient => {
            let total_growth: f64 = rng.random_range(2.5..3.5);
            SynthConfig {
                growth_rate: total_growth / span,
                spike_amplitude: 0.125,
                spike_burst_len: 10,
                burst_period: 20,
                ..base
            }
        }
        SuiteKind::Healthy => SynthConfig {
            onset: length - 1,
            growth_rate: 0.0,
            spike_amplitude: 0.0,
            ..base
        },
    }
}

/// Generates the training and test runs of a suite, training runs first.
pub fn generate_suite(suite: &SuiteConfig) -> Result<Vec<SyntheticRun>> {
    let ids = suite.train_ids().into_iter().chain(suite.test_ids());
    ids.enumerate()
        .map(|(i, id)| {
            let cfg = suite_member_config(suite, &id, i as u64);
            let (series, true_onset) = generate_synthetic(&cfg)?;
            Ok(SyntheticRun {
                series,
                true_onset,
                config: cfg,
            })
        })
        .collect()
}
