//! End-to-end orchestration: configuration, per-stage entry points, the full
//! experiment and the ablation grid.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{
    build_rul_labels, fit_scaler_runs, generate_suite, load_csv, split_temporal, transform_run,
    RunSeries, ScalerParams, SuiteConfig, SynthMeta,
};
use crate::ensemble::{
    fit_ensemble, segment_labels, EnsembleConfig, EnsembleModel, FeatureMatrix, Head, LinearHead,
    RunRows,
};
use crate::error::{Error, Result};
use crate::features::{
    extract_features, post_onset_features, rank_features, Channel, FeatureVector,
    PostOnsetParams, RankingReport, VibrationWindow, DEFAULT_ROLLING_WINDOW,
    POST_ONSET_FEATURE_NAMES,
};
use crate::forecaster::{build_training_sets, init_model, train, ForecasterConfig, ForecasterModel, TrainReport};
use crate::metrics::{self, MetricsReport, DEFAULT_EPSILON};
use crate::onset::{detect, onset_record, OnsetResult, RegressionMode, SpikeConfig};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Segments shorter than this are scored with the full-length model.
pub const MIN_SEGMENT_ROWS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synthetic,
    RunsDir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub source: DataSource,
    /// Directory of run CSVs (`runs_dir` source). Sidecar `<id>.meta.toml`
    /// files are read when present.
    pub runs_dir: Option<PathBuf>,
    /// Held-out run ids (`runs_dir` source; the synthetic suite names its own).
    pub test_runs: Vec<String>,
    /// Columns to load; empty keeps every column.
    pub schema: Vec<String>,
    /// `"auto"` picks the column ranked first by |Spearman| against RUL.
    pub indicator: String,
    pub suite: SuiteConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            runs_dir: None,
            test_runs: Vec::new(),
            schema: Vec::new(),
            indicator: "auto".into(),
            suite: SuiteConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureStageConfig {
    pub rolling_window: usize,
}

impl Default for FeatureStageConfig {
    fn default() -> Self {
        Self {
            rolling_window: DEFAULT_ROLLING_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub epsilon: f64,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeSelection {
    Segment,
    Full,
    Both,
}

impl ModeSelection {
    pub fn modes(self) -> Vec<RegressionMode> {
        match self {
            ModeSelection::Segment => vec![RegressionMode::Segment],
            ModeSelection::Full => vec![RegressionMode::Full],
            ModeSelection::Both => vec![RegressionMode::Segment, RegressionMode::Full],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Master seed; copied into every seeded stage by [`PipelineConfig::resolved`].
    pub seed: u64,
    pub mode: ModeSelection,
    /// Extra sensitivity coefficients to evaluate with the same forecaster.
    /// Empty means only `spike.k_sigma`.
    pub k_sigma_values: Vec<f64>,
    pub data: DataConfig,
    pub forecaster: ForecasterConfig,
    pub spike: SpikeConfig,
    pub features: FeatureStageConfig,
    pub ensemble: EnsembleConfig,
    pub metrics: MetricsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            mode: ModeSelection::Both,
            k_sigma_values: Vec::new(),
            data: DataConfig::default(),
            forecaster: ForecasterConfig::default(),
            spike: SpikeConfig::default(),
            features: FeatureStageConfig::default(),
            ensemble: EnsembleConfig::default(),
            metrics: MetricsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Copy with the master seed pushed into every seeded stage.
    pub fn resolved(&self) -> Self {
        let mut c = self.clone();
        c.forecaster.seed = c.seed;
        c.ensemble.forest.seed = c.seed;
        c.ensemble.gbm.seed = c.seed;
        c.data.suite.seed = c.seed;
        c
    }

    /// Sensitivity coefficients evaluated by a run, in order, deduplicated.
    pub fn k_values(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        let src = if self.k_sigma_values.is_empty() {
            vec![self.spike.k_sigma]
        } else {
            self.k_sigma_values.clone()
        };
        for k in src {
            if !out.contains(&k) {
                out.push(k);
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.forecaster.validate()?;
        self.spike.validate()?;
        for &k in &self.k_values() {
            SpikeConfig {
                k_sigma: k,
                ..self.spike.clone()
            }
            .validate()?;
        }
        if self.features.rolling_window < 2 {
            return Err(Error::InvalidConfig("features.rolling_window must be >= 2".into()));
        }
        if !(self.metrics.epsilon > 0.0) {
            return Err(Error::InvalidConfig("metrics.epsilon must be positive".into()));
        }
        let vf = self.ensemble.validation_fraction;
        if !(0.0..1.0).contains(&vf) {
            return Err(Error::InvalidConfig("ensemble.validation_fraction must be in [0, 1)".into()));
        }
        if self.ensemble.forest.n_trees == 0 {
            return Err(Error::InvalidConfig("ensemble.forest.n_trees must be positive".into()));
        }
        if self.data.source == DataSource::RunsDir && self.data.runs_dir.is_none() {
            return Err(Error::InvalidConfig("data.runs_dir is required for the runs_dir source".into()));
        }
        if self.data.source == DataSource::Synthetic
            && (self.data.suite.n_train == 0 || self.data.suite.n_test == 0)
        {
            return Err(Error::InvalidConfig("synthetic suite needs training and test runs".into()));
        }
        Ok(())
    }
}

/// Training and test runs plus any known ground-truth onsets.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub train: Vec<RunSeries>,
    pub test: Vec<RunSeries>,
    pub true_onsets: BTreeMap<String, u64>,
    pub dropped_rows: BTreeMap<String, usize>,
}

pub fn load_corpus(cfg: &DataConfig) -> Result<Corpus> {
    match cfg.source {
        DataSource::Synthetic => {
            let runs = generate_suite(&cfg.suite)?;
            let true_onsets = runs
                .iter()
                .map(|r| (r.series.run_id.clone(), r.true_onset))
                .collect();
            let series = runs.into_iter().map(|r| r.series).collect();
            let (train, test) = split_temporal(series, &cfg.suite.test_ids())?;
            Ok(Corpus {
                train,
                test,
                true_onsets,
                dropped_rows: BTreeMap::new(),
            })
        }
        DataSource::RunsDir => {
            let dir = cfg
                .runs_dir
                .as_deref()
                .ok_or_else(|| Error::InvalidConfig("data.runs_dir is not set".into()))?;
            let mut paths: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            paths.sort();
            if paths.is_empty() {
                return Err(Error::EmptyAfterCleaning);
            }
            let schema: Vec<&str> = cfg.schema.iter().map(String::as_str).collect();
            let mut runs = Vec::new();
            let mut true_onsets = BTreeMap::new();
            let mut dropped_rows = BTreeMap::new();
            for p in &paths {
                let loaded = load_csv(p, &schema)?;
                let id = loaded.run.run_id.clone();
                let meta = p.with_file_name(format!("{id}.meta.toml"));
                if meta.exists() {
                    true_onsets.insert(id.clone(), SynthMeta::read(&meta)?.true_onset);
                }
                dropped_rows.insert(id, loaded.dropped_count);
                runs.push(loaded.run);
            }
            let (train, test) = split_temporal(runs, &cfg.test_runs)?;
            Ok(Corpus {
                train,
                test,
                true_onsets,
                dropped_rows,
            })
        }
    }
}

/// Splits a raw vibration CSV (one column per channel, named `H` or `V`) into
/// consecutive non-overlapping windows and extracts one feature row per
/// window. The result is a run whose time index is the window number.
pub fn extract_vibration_file(
    path: &Path,
    window: usize,
    sample_rate_hz: f64,
    bins: usize,
) -> Result<RunSeries> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(path, std::io::Error::other(e.to_string())),
        _ => Error::Csv(e),
    })?;
    let headers = rdr.headers()?.clone();
    let channels: Vec<Channel> = headers
        .iter()
        .map(|h| match h.trim() {
            "H" => Ok(Channel::H),
            "V" => Ok(Channel::V),
            other => Err(Error::MissingColumn(format!("channel H or V (found {other:?})"))),
        })
        .collect::<Result<_>>()?;
    if channels.is_empty() {
        return Err(Error::MissingColumn("H".into()));
    }
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); channels.len()];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        for (j, col) in cols.iter_mut().enumerate() {
            let cell = rec.get(j).unwrap_or("").trim();
            col.push(cell.parse().map_err(|_| Error::Parse {
                column: headers[j].to_string(),
                value: cell.to_string(),
                line: line + 2,
            })?);
        }
    }
    let n_windows = cols[0].len() / window.max(1);
    if n_windows == 0 {
        return Err(Error::TooFewRows {
            needed: window,
            got: cols[0].len(),
        });
    }
    let mut schema = Vec::new();
    let mut values = Vec::new();
    for w in 0..n_windows {
        let mut row = FeatureVector::default();
        for (col, &ch) in cols.iter().zip(&channels) {
            let win = VibrationWindow::new(col[w * window..(w + 1) * window].to_vec(), sample_rate_hz, ch)?;
            let f = extract_features(&win, bins)?;
            for (name, v) in f.names().zip(f.values()) {
                row.push(name, v);
            }
        }
        if schema.is_empty() {
            schema = row.names().map(String::from).collect();
        }
        values.push(row.values().collect());
    }
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    RunSeries::new(stem, schema, (0..n_windows as u64).collect(), values)
}

/// Labels with the first prediction time at 0, used for feature ranking.
pub fn rank_runs(runs: &[RunSeries]) -> Result<RankingReport> {
    let labels = runs
        .iter()
        .map(|r| build_rul_labels(r.failure_index(), 0))
        .collect::<Result<Vec<_>>>()?;
    rank_features(runs, &labels)
}

/// Indicator choice and training-set scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub indicator: String,
    pub scaler: ScalerParams,
}

impl Preprocessing {
    pub fn fit(train: &[RunSeries], indicator: &str) -> Result<(Self, Option<RankingReport>)> {
        if train.is_empty() {
            return Err(Error::TooFewRows { needed: 1, got: 0 });
        }
        let (name, ranking) = if indicator == "auto" {
            let ranking = rank_runs(train)?;
            let top = ranking
                .entries
                .iter()
                .find(|(_, rho)| *rho > 0.0)
                .map(|(n, _)| n.clone())
                .ok_or_else(|| Error::MissingColumn("<informative indicator>".into()))?;
            (top, Some(ranking))
        } else {
            if train[0].column_index(indicator).is_none() {
                return Err(Error::MissingColumn(indicator.to_string()));
            }
            (indicator.to_string(), None)
        };
        let refs: Vec<&RunSeries> = train.iter().collect();
        let scaler = fit_scaler_runs(&refs)?;
        Ok((
            Self {
                indicator: name,
                scaler,
            },
            ranking,
        ))
    }

    /// Scaled indicator column of a run.
    pub fn indicator_series(&self, run: &RunSeries) -> Result<Vec<f64>> {
        transform_run(run, &self.scaler)?.column(&self.indicator)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text =
        serde_json::to_string_pretty(value).map_err(|e| Error::Serialization(e.to_string()))?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Serialization(e.to_string()))
}

pub fn fit_forecaster(
    cfg: &ForecasterConfig,
    series: &[Vec<f64>],
) -> Result<(ForecasterModel, TrainReport)> {
    let mut model = init_model(cfg)?;
    let (tr, val) = build_training_sets(series, cfg);
    let report = train(&mut model, &tr, Some(&val))?;
    Ok((model, report))
}

/// A run seen through the forecaster: predictions aligned with the observed
/// (scaled) indicator from the first predictable step onwards.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub run_id: String,
    pub offset: usize,
    pub t_index: Vec<u64>,
    pub failure: u64,
    pub pred: Vec<f64>,
    pub raw: Vec<f64>,
}

pub fn trace_run(model: &ForecasterModel, pre: &Preprocessing, run: &RunSeries) -> Result<RunTrace> {
    let z = pre.indicator_series(run)?;
    let fc = model.predict_sequence(&z)?;
    Ok(RunTrace {
        run_id: run.run_id.clone(),
        offset: fc.offset,
        t_index: run.t_index()[fc.offset..].to_vec(),
        failure: run.failure_index(),
        raw: z[fc.offset..].to_vec(),
        pred: fc.values,
    })
}

impl RunTrace {
    /// Time index of a detection result's onset.
    pub fn onset_time(&self, res: &OnsetResult) -> Option<u64> {
        res.onset.map(|i| self.t_index[i])
    }
}

/// Regression rows of one run in one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledRows {
    pub t: Vec<u64>,
    pub x: FeatureMatrix,
    pub y: Vec<f64>,
}

impl LabelledRows {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn run_rows(&self) -> RunRows {
        RunRows {
            x: self.x.clone(),
            y: self.y.clone(),
        }
    }
}

pub fn feature_schema() -> Vec<String> {
    POST_ONSET_FEATURE_NAMES.iter().map(|s| s.to_string()).collect()
}

/// Segment rows start at the detected onset with labels
/// `(T_f - t) / (T_f - t_s)`; full rows cover the whole trace with labels
/// `(T_f - t) / T_f`.
pub fn build_rows(
    trace: &RunTrace,
    onset: &OnsetResult,
    mode: RegressionMode,
    rolling_window: usize,
) -> Result<LabelledRows> {
    let start = match mode {
        RegressionMode::Segment => onset.onset.ok_or(Error::EmptySegment {
            onset: trace.failure,
            failure: trace.failure,
        })?,
        RegressionMode::Full => 0,
    };
    let params = PostOnsetParams {
        window: rolling_window,
        threshold: onset.threshold,
    };
    let feats = post_onset_features(&trace.pred, &trace.raw, start, &params)?;
    let t: Vec<u64> = trace.t_index[start..].to_vec();
    let tf = trace.failure;
    let y = match mode {
        RegressionMode::Segment => {
            let ts = t[0];
            segment_labels(ts, tf)?;
            let span = (tf - ts) as f64;
            t.iter().map(|&v| (tf - v) as f64 / span).collect()
        }
        RegressionMode::Full => {
            let labels = build_rul_labels(tf, 0)?;
            t.iter()
                .map(|&v| labels.at(v).unwrap_or(0.0) / tf as f64)
                .collect()
        }
    };
    let rows: Vec<Vec<f64>> = feats.iter().map(|f| f.to_row().to_vec()).collect();
    Ok(LabelledRows {
        t,
        x: FeatureMatrix::from_rows(feature_schema(), &rows)?,
        y,
    })
}

/// Whether a detection yields a usable post-onset segment.
pub fn has_segment(onset: &OnsetResult) -> bool {
    !onset.used_fallback
        && onset
            .onset
            .is_some_and(|i| onset.len.saturating_sub(i) >= MIN_SEGMENT_ROWS)
}

/// Everything derived from one sensitivity coefficient.
#[derive(Debug, Clone)]
pub struct KAnalysis {
    pub spike: SpikeConfig,
    pub train_onsets: Vec<OnsetResult>,
    pub test_onsets: Vec<OnsetResult>,
    pub segment_model: Option<EnsembleModel>,
    pub full_model: EnsembleModel,
    pub train_segment_rows: Vec<LabelledRows>,
    pub train_full_rows: Vec<LabelledRows>,
    pub test_segment_rows: Vec<Option<LabelledRows>>,
    pub test_full_rows: Vec<LabelledRows>,
}

pub fn analyse(
    cfg: &PipelineConfig,
    k_sigma: f64,
    train_traces: &[RunTrace],
    test_traces: &[RunTrace],
) -> Result<KAnalysis> {
    let spike = SpikeConfig {
        k_sigma,
        ..cfg.spike.clone()
    };
    let w = cfg.features.rolling_window;
    let detect_all = |traces: &[RunTrace]| -> Result<Vec<OnsetResult>> {
        traces.iter().map(|t| detect(&t.pred, &spike)).collect()
    };
    let train_onsets = detect_all(train_traces).map_err(|e| e.at_stage("detect"))?;
    let test_onsets = detect_all(test_traces).map_err(|e| e.at_stage("detect"))?;

    let rows = || -> Result<_> {
        let mut train_segment_rows = Vec::new();
        let mut train_full_rows = Vec::new();
        for (tr, on) in train_traces.iter().zip(&train_onsets) {
            if has_segment(on) {
                train_segment_rows.push(build_rows(tr, on, RegressionMode::Segment, w)?);
            }
            train_full_rows.push(build_rows(tr, on, RegressionMode::Full, w)?);
        }
        let mut test_segment_rows = Vec::new();
        let mut test_full_rows = Vec::new();
        for (tr, on) in test_traces.iter().zip(&test_onsets) {
            test_segment_rows.push(if has_segment(on) {
                Some(build_rows(tr, on, RegressionMode::Segment, w)?)
            } else {
                None
            });
            test_full_rows.push(build_rows(tr, on, RegressionMode::Full, w)?);
        }
        Ok((train_segment_rows, train_full_rows, test_segment_rows, test_full_rows))
    };
    let (train_segment_rows, train_full_rows, test_segment_rows, test_full_rows) =
        rows().map_err(|e| e.at_stage("features"))?;

    let fit = |rows: &[LabelledRows]| {
        let rr: Vec<RunRows> = rows.iter().map(LabelledRows::run_rows).collect();
        fit_ensemble(&rr, &cfg.ensemble)
    };
    let segment_model = if train_segment_rows.is_empty() {
        None
    } else {
        Some(fit(&train_segment_rows).map_err(|e| e.at_stage("ensemble"))?)
    };
    let full_model = fit(&train_full_rows).map_err(|e| e.at_stage("ensemble"))?;
    Ok(KAnalysis {
        spike,
        train_onsets,
        test_onsets,
        segment_model,
        full_model,
        train_segment_rows,
        train_full_rows,
        test_segment_rows,
        test_full_rows,
    })
}

/// Predictions of one test run in one mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredRun {
    pub run_id: String,
    pub k_sigma: f64,
    pub mode: RegressionMode,
    /// Segment mode answered by the full-length model.
    pub fallback: bool,
    pub t: Vec<u64>,
    pub y: Vec<f64>,
    pub yhat: Vec<f64>,
}

/// Segment-mode rows and model of test run `i`, or the full-length pair when
/// the run fell back.
fn mode_rows(an: &KAnalysis, i: usize, mode: RegressionMode) -> (&LabelledRows, &EnsembleModel, bool) {
    match (mode, &an.test_segment_rows[i], &an.segment_model) {
        (RegressionMode::Segment, Some(rows), Some(m)) => (rows, m, false),
        (RegressionMode::Segment, _, _) => (&an.test_full_rows[i], &an.full_model, true),
        (RegressionMode::Full, _, _) => (&an.test_full_rows[i], &an.full_model, false),
    }
}

pub fn score_test_runs(
    an: &KAnalysis,
    test_traces: &[RunTrace],
    modes: &[RegressionMode],
) -> Result<Vec<ScoredRun>> {
    let mut out = Vec::new();
    for (i, tr) in test_traces.iter().enumerate() {
        for &mode in modes {
            let (rows, model, fallback) = mode_rows(an, i, mode);
            out.push(ScoredRun {
                run_id: tr.run_id.clone(),
                k_sigma: an.spike.k_sigma,
                mode,
                fallback,
                t: rows.t.clone(),
                y: rows.y.clone(),
                yhat: model.predict_rul(&rows.x)?,
            });
        }
    }
    Ok(out)
}

pub fn metrics_for(s: &ScoredRun, eps: f64) -> Result<MetricsReport> {
    MetricsReport::compute(&s.run_id, s.k_sigma, s.mode, &s.y, &s.yhat, eps)
}

pub const PREDICTIONS_HEADER: &str = "run,k_sigma,mode,t,y,yhat";

pub fn predictions_csv(scored: &[ScoredRun]) -> String {
    let mut s = String::from(PREDICTIONS_HEADER);
    s.push('\n');
    for r in scored {
        for ((t, y), p) in r.t.iter().zip(&r.y).zip(&r.yhat) {
            let _ = writeln!(s, "{},{},{},{t},{y},{p}", r.run_id, r.k_sigma, r.mode);
        }
    }
    s
}

pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let mut s = String::from(metrics::CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

fn parse_mode(s: &str) -> Option<RegressionMode> {
    match s {
        "segment" => Some(RegressionMode::Segment),
        "full" => Some(RegressionMode::Full),
        _ => None,
    }
}

/// Recomputes metrics from a persisted predictions file, one report per
/// (run, k_sigma, mode) group in order of first appearance.
pub fn evaluate_predictions(path: &Path, eps: f64) -> Result<Vec<MetricsReport>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    let expected: Vec<&str> = PREDICTIONS_HEADER.split(',').collect();
    for (i, name) in expected.iter().enumerate() {
        if headers.get(i) != Some(*name) {
            return Err(Error::MissingColumn((*name).to_string()));
        }
    }
    let mut groups: Vec<((String, String, String), Vec<f64>, Vec<f64>)> = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].parse::<f64>().map_err(|_| Error::Parse {
                column: expected[i].to_string(),
                value: rec[i].to_string(),
                line: line + 2,
            })
        };
        let key = (rec[0].to_string(), rec[1].to_string(), rec[2].to_string());
        let (y, p) = (num(4)?, num(5)?);
        match groups.iter_mut().find(|g| g.0 == key) {
            Some(g) => {
                g.1.push(y);
                g.2.push(p);
            }
            None => groups.push((key, vec![y], vec![p])),
        }
    }
    groups
        .into_iter()
        .map(|((run, k, mode), y, p)| {
            let k: f64 = k.parse().map_err(|_| Error::Parse {
                column: "k_sigma".into(),
                value: k.clone(),
                line: 0,
            })?;
            let mode = parse_mode(&mode).ok_or(Error::Parse {
                column: "mode".into(),
                value: mode.clone(),
                line: 0,
            })?;
            MetricsReport::compute(&run, k, mode, &y, &p, eps)
        })
        .collect()
}

/// Per-run onset summary in an experiment report.
#[derive(Debug, Clone, PartialEq)]
pub struct OnsetSummary {
    pub run_id: String,
    pub partition: &'static str,
    pub k_sigma: f64,
    pub onset_t: Option<u64>,
    pub true_onset: Option<u64>,
    pub n_spike: usize,
    pub used_fallback: bool,
    pub threshold: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: PipelineConfig,
    pub indicator: String,
    pub ranking: Option<RankingReport>,
    pub forecaster: TrainReport,
    pub onsets: Vec<OnsetSummary>,
    pub scored: Vec<ScoredRun>,
    pub metrics: Vec<MetricsReport>,
    pub stage_seconds: Vec<(&'static str, f64)>,
}

impl ExperimentReport {
    pub fn metric(&self, run: &str, k_sigma: f64, mode: RegressionMode) -> Option<&MetricsReport> {
        self.metrics
            .iter()
            .find(|m| m.run == run && m.k_sigma == k_sigma && m.mode == mode)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# experiment report\nversion = {VERSION}\nindicator = {}", self.indicator);
        let _ = writeln!(s, "\n[forecaster]");
        for l in self.forecaster.progress_lines() {
            let _ = writeln!(s, "{l}");
        }
        if let Some(v) = self.forecaster.validation_loss {
            let _ = writeln!(s, "validation_loss = {v}");
        }
        let _ = writeln!(s, "\n[onsets]");
        for o in &self.onsets {
            let opt = |v: Option<u64>| v.map_or("none".to_string(), |t| t.to_string());
            let _ = writeln!(
                s,
                "{} {} k_sigma={} onset={} true_onset={} n_spike={} fallback={} theta={}",
                o.partition,
                o.run_id,
                o.k_sigma,
                opt(o.onset_t),
                opt(o.true_onset),
                o.n_spike,
                o.used_fallback,
                o.threshold
            );
        }
        let _ = writeln!(s, "\n[metrics]\n{}", metrics::CSV_HEADER);
        for m in &self.metrics {
            let _ = writeln!(s, "{}", m.csv_row());
        }
        for sc in self.scored.iter().filter(|r| r.fallback) {
            let _ = writeln!(
                s,
                "# {} k_sigma={}: no validated onset, segment mode scored with the full-length model",
                sc.run_id, sc.k_sigma
            );
        }
        let _ = writeln!(s, "\n[wall_seconds]");
        for (stage, secs) in &self.stage_seconds {
            let _ = writeln!(s, "{stage} = {secs:.3}");
        }
        let _ = writeln!(s, "\n[config]");
        s.push_str(&self.config.to_toml().unwrap_or_default());
        s
    }
}

/// Artifact layout inside an output directory.
#[derive(Debug, Clone)]
pub struct OutputLayout {
    pub root: PathBuf,
}

impl OutputLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn onsets(&self) -> PathBuf {
        self.root.join("onsets")
    }

    pub fn forecaster(&self) -> PathBuf {
        self.models().join("forecaster.json")
    }

    pub fn preprocessing(&self) -> PathBuf {
        self.models().join("preprocessing.json")
    }

    pub fn ensemble(&self, mode: RegressionMode, k_sigma: f64) -> PathBuf {
        self.models().join(format!("ensemble_{mode}_k{k_sigma}.json"))
    }

    pub fn onset_record(&self, run_id: &str, k_sigma: f64) -> PathBuf {
        self.onsets().join(format!("{run_id}_k{k_sigma}.txt"))
    }

    pub fn predictions(&self) -> PathBuf {
        self.root.join("predictions.csv")
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("metrics.csv")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report.txt")
    }

    pub fn incomplete_marker(&self) -> PathBuf {
        self.root.join("INCOMPLETE")
    }

    pub fn create(&self) -> Result<()> {
        for d in [self.root.clone(), self.models(), self.onsets()] {
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        Ok(())
    }
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs `body` and leaves an `INCOMPLETE` marker holding the error when it
/// fails.
fn guarded<T>(layout: &OutputLayout, body: impl FnOnce() -> Result<T>) -> Result<T> {
    let marker = layout.incomplete_marker();
    let _ = fs::remove_file(&marker);
    let out = body();
    if let Err(e) = &out {
        let _ = fs::write(&marker, format!("{e}\n"));
    }
    out
}

fn timed<T>(log: &mut Vec<(&'static str, f64)>, stage: &'static str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    let t0 = Instant::now();
    let out = f().map_err(|e| e.at_stage(stage));
    log.push((stage, t0.elapsed().as_secs_f64()));
    out
}

/// Data loading, preprocessing, forecaster training and tracing of every run.
#[derive(Debug, Clone)]
pub struct PreparedExperiment {
    pub corpus: Corpus,
    pub pre: Preprocessing,
    pub ranking: Option<RankingReport>,
    pub forecaster: ForecasterModel,
    pub forecaster_report: TrainReport,
    pub train_traces: Vec<RunTrace>,
    pub test_traces: Vec<RunTrace>,
    pub stage_seconds: Vec<(&'static str, f64)>,
}

pub fn prepare(cfg: &PipelineConfig) -> Result<PreparedExperiment> {
    cfg.validate()?;
    let mut log = Vec::new();
    let corpus = timed(&mut log, "load", || load_corpus(&cfg.data))?;
    let (pre, ranking) = timed(&mut log, "normalize", || {
        Preprocessing::fit(&corpus.train, &cfg.data.indicator)
    })?;
    let (forecaster, forecaster_report) = timed(&mut log, "forecaster", || {
        let series = corpus
            .train
            .iter()
            .map(|r| pre.indicator_series(r))
            .collect::<Result<Vec<_>>>()?;
        fit_forecaster(&cfg.forecaster, &series)
    })?;
    let (train_traces, test_traces) = timed(&mut log, "predict", || {
        let tr = corpus
            .train
            .iter()
            .map(|r| trace_run(&forecaster, &pre, r))
            .collect::<Result<Vec<_>>>()?;
        let te = corpus
            .test
            .iter()
            .map(|r| trace_run(&forecaster, &pre, r))
            .collect::<Result<Vec<_>>>()?;
        Ok((tr, te))
    })?;
    Ok(PreparedExperiment {
        corpus,
        pre,
        ranking,
        forecaster,
        forecaster_report,
        train_traces,
        test_traces,
        stage_seconds: log,
    })
}

fn summaries(
    prep: &PreparedExperiment,
    an: &KAnalysis,
) -> Vec<OnsetSummary> {
    let mk = |partition, traces: &[RunTrace], onsets: &[OnsetResult]| {
        traces
            .iter()
            .zip(onsets)
            .map(|(tr, on)| OnsetSummary {
                run_id: tr.run_id.clone(),
                partition,
                k_sigma: an.spike.k_sigma,
                onset_t: tr.onset_time(on),
                true_onset: prep.corpus.true_onsets.get(&tr.run_id).copied(),
                n_spike: on.n_spike(),
                used_fallback: on.used_fallback,
                threshold: on.threshold,
            })
            .collect::<Vec<_>>()
    };
    let mut v = mk("train", &prep.train_traces, &an.train_onsets);
    v.extend(mk("test", &prep.test_traces, &an.test_onsets));
    v
}

/// Experiment results kept in memory (used by the CLI and the test suites).
#[derive(Debug, Clone)]
pub struct Experiment {
    pub prepared: PreparedExperiment,
    pub analyses: Vec<KAnalysis>,
    pub report: ExperimentReport,
}

/// The whole pipeline without touching the filesystem.
pub fn run_in_memory(cfg: &PipelineConfig) -> Result<Experiment> {
    let cfg = cfg.resolved();
    let mut prepared = prepare(&cfg)?;
    let modes = cfg.mode.modes();
    let mut analyses = Vec::new();
    let mut scored = Vec::new();
    let mut onsets = Vec::new();
    let mut log = std::mem::take(&mut prepared.stage_seconds);
    for k in cfg.k_values() {
        let an = timed(&mut log, "ensemble", || {
            analyse(&cfg, k, &prepared.train_traces, &prepared.test_traces)
        })?;
        scored.extend(timed(&mut log, "evaluate", || {
            score_test_runs(&an, &prepared.test_traces, &modes)
        })?);
        onsets.extend(summaries(&prepared, &an));
        analyses.push(an);
    }
    let metrics = timed(&mut log, "evaluate", || {
        scored
            .iter()
            .map(|s| metrics_for(s, cfg.metrics.epsilon))
            .collect::<Result<Vec<_>>>()
    })?;
    prepared.stage_seconds = log.clone();
    let report = ExperimentReport {
        config: cfg,
        indicator: prepared.pre.indicator.clone(),
        ranking: prepared.ranking.clone(),
        forecaster: prepared.forecaster_report.clone(),
        onsets,
        scored,
        metrics,
        stage_seconds: log,
    };
    Ok(Experiment {
        prepared,
        analyses,
        report,
    })
}

/// Runs the pipeline and persists predictions, onset records, models,
/// metrics and the report under `out`.
pub fn run_experiment(cfg: &PipelineConfig, out: &Path) -> Result<Experiment> {
    let layout = OutputLayout::new(out);
    layout.create()?;
    guarded(&layout, || {
        let exp = run_in_memory(cfg)?;
        persist(&exp, &layout).map_err(|e| e.at_stage("persist"))?;
        Ok(exp)
    })
}

fn persist(exp: &Experiment, layout: &OutputLayout) -> Result<()> {
    let p = &exp.prepared;
    p.forecaster.save(&layout.forecaster())?;
    p.pre.save(&layout.preprocessing())?;
    if let Some(r) = &p.ranking {
        write_text(&layout.root.join("ranking.csv"), &r.to_csv())?;
    }
    for an in &exp.analyses {
        let k = an.spike.k_sigma;
        an.full_model.save(&layout.ensemble(RegressionMode::Full, k))?;
        if let Some(m) = &an.segment_model {
            m.save(&layout.ensemble(RegressionMode::Segment, k))?;
        }
        let traces = p.train_traces.iter().chain(&p.test_traces);
        let onsets = an.train_onsets.iter().chain(&an.test_onsets);
        for (tr, on) in traces.zip(onsets) {
            write_text(&layout.onset_record(&tr.run_id, k), &trace_record(tr, on, &an.spike))?;
        }
    }
    write_text(&layout.predictions(), &predictions_csv(&exp.report.scored))?;
    write_text(&layout.metrics(), &metrics_csv(&exp.report.metrics))?;
    write_text(&layout.report(), &exp.report.to_text())?;
    write_text(&layout.root.join("config.toml"), &exp.report.config.to_toml()?)
}

/// Onset record with the run id and time-index mapping prepended.
pub fn trace_record(tr: &RunTrace, on: &OnsetResult, spike: &SpikeConfig) -> String {
    let onset_t = tr
        .onset_time(on)
        .map_or_else(|| "none".to_string(), |t| t.to_string());
    format!(
        "run = {}\nindex_offset = {}\nonset_t = {onset_t}\n{}",
        tr.run_id,
        tr.offset,
        onset_record(on, spike)
    )
}

/// One row of the ablation grid.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub spike_aware: bool,
    pub head: &'static str,
    pub n_features: usize,
    /// Rows entering the head (training plus test).
    pub coverage: usize,
    pub rmse: f64,
    pub mae: f64,
    pub r2: f64,
    pub mape_percent: f64,
    pub phm_score: f64,
    pub validation_mse: f64,
}

pub const ABLATION_HEADER: &str =
    "spike_aware,head,n_features,coverage,rmse,mae,r2,mape,phm_score,validation_mse";

impl AblationRow {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.spike_aware,
            self.head,
            self.n_features,
            self.coverage,
            self.rmse,
            self.mae,
            self.r2,
            self.mape_percent,
            self.phm_score,
            self.validation_mse
        )
    }
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(ABLATION_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

fn concat_rows(rows: &[&LabelledRows]) -> Result<(FeatureMatrix, Vec<f64>)> {
    let mut x = FeatureMatrix::new(feature_schema());
    let mut y = Vec::new();
    for r in rows {
        x.append(&r.x)?;
        y.extend_from_slice(&r.y);
    }
    Ok((x, y))
}

/// The {spike-aware, full-length} x {ensemble, forest, boosted, linear} grid
/// for one analysis. Spike-aware rows train on segments and score each test
/// run on its segment (or the full run when it fell back); the others train
/// and score on full runs. Metrics are pooled over test runs.
pub fn ablation_rows(an: &KAnalysis, clip: bool, eps: f64) -> Result<Vec<AblationRow>> {
    let mut out = Vec::new();
    for spike_aware in [true, false] {
        let mode = if spike_aware {
            RegressionMode::Segment
        } else {
            RegressionMode::Full
        };
        let train_rows: Vec<&LabelledRows> = if spike_aware && an.segment_model.is_some() {
            an.train_segment_rows.iter().collect()
        } else {
            an.train_full_rows.iter().collect()
        };
        let (train_x, train_y) = concat_rows(&train_rows)?;
        let linear = LinearHead::fit(&train_x, &train_y, 0)?;
        let n_test = an.test_full_rows.len();
        let picked: Vec<(&LabelledRows, &EnsembleModel)> = (0..n_test)
            .map(|i| {
                let (r, m, _) = mode_rows(an, i, mode);
                (r, m)
            })
            .collect();
        let test_cov: usize = picked.iter().map(|(r, _)| r.len()).sum();
        let coverage = train_y.len() + test_cov;
        let mut y = Vec::new();
        for (r, _) in &picked {
            y.extend_from_slice(&r.y);
        }
        let reference = picked.first().map(|(_, m)| *m).unwrap_or(&an.full_model);
        for head in ["ENS", "RF", "GBM", "linear"] {
            let mut yhat = Vec::new();
            for (r, m) in &picked {
                let p = match head {
                    "ENS" => m.predict_head(&r.x, Head::Ensemble)?,
                    "RF" => m.predict_head(&r.x, Head::Forest)?,
                    "GBM" => m.predict_head(&r.x, Head::Gbm)?,
                    _ => linear
                        .predict(&r.x)
                        .into_iter()
                        .map(|v| if clip { v.clamp(0.0, 1.0) } else { v })
                        .collect(),
                };
                yhat.extend(p);
            }
            let rep = MetricsReport::compute("pooled", an.spike.k_sigma, mode, &y, &yhat, eps)?;
            let validation_mse = match head {
                "ENS" => reference.blend.validation_mse,
                "RF" => reference.validation_mse_forest,
                "GBM" => reference.validation_mse_gbm,
                _ => f64::NAN,
            };
            out.push(AblationRow {
                spike_aware,
                head,
                n_features: if head == "linear" { 1 } else { POST_ONSET_FEATURE_NAMES.len() },
                coverage,
                rmse: rep.rmse,
                mae: rep.mae,
                r2: rep.r2,
                mape_percent: rep.mape_percent,
                phm_score: rep.phm_score,
                validation_mse,
            });
        }
    }
    Ok(out)
}

/// Ablation grid for `spike.k_sigma`, written to `<out>/ablation.csv`.
pub fn ablate(cfg: &PipelineConfig, out: Option<&Path>) -> Result<Vec<AblationRow>> {
    let cfg = cfg.resolved();
    let prep = prepare(&cfg)?;
    let an = analyse(&cfg, cfg.spike.k_sigma, &prep.train_traces, &prep.test_traces)?;
    let rows = ablation_rows(&an, cfg.ensemble.clip, cfg.metrics.epsilon)
        .map_err(|e| e.at_stage("ablate"))?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_text(&dir.join("ablation.csv"), &ablation_csv(&rows))?;
    }
    Ok(rows)
}
