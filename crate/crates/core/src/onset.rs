//! Adaptive thresholding, consecutive-spike validation and the fallback rule.
//!
//! The threshold is `mean + k * std` over a healthy reference window
//! (population std). A spike run is a maximal stretch of consecutive indices
//! strictly above the threshold; runs shorter than `d_min` are discarded as
//! noise. The validated spike count decides between segment mode (regress on
//! `[onset, end]`) and full mode (regress on the whole predicted sequence).

use std::fmt;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reference window: `Auto` takes the first `max(30, 20%)` points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RefWindow {
    Auto,
    Fixed { start: usize, end: usize },
}

impl RefWindow {
    pub fn resolve(self, len: usize) -> Range<usize> {
        match self {
            RefWindow::Auto => {
                let n = 30usize.max((len as f64 * 0.2).ceil() as usize);
                0..n.min(len)
            }
            RefWindow::Fixed { start, end } => start..end,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpikeConfig {
    pub k_sigma: f64,
    pub d_min: usize,
    pub n_min: usize,
    pub ref_window: RefWindow,
    /// Exit threshold inside a run is `theta - hysteresis_fraction * sigma_ref`.
    pub hysteresis_fraction: f64,
}

impl Default for SpikeConfig {
    fn default() -> Self {
        Self {
            k_sigma: 2.0,
            d_min: 5,
            n_min: 5,
            ref_window: RefWindow::Auto,
            hysteresis_fraction: 0.0,
        }
    }
}

impl SpikeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("spike detector: {m}")));
        if !(self.k_sigma >= 0.0) || !self.k_sigma.is_finite() {
            return bad("k_sigma must be a non-negative finite number");
        }
        if self.d_min == 0 || self.n_min == 0 {
            return bad("d_min and n_min must be at least 1");
        }
        if !(self.hysteresis_fraction >= 0.0) || !self.hysteresis_fraction.is_finite() {
            return bad("hysteresis_fraction must be non-negative");
        }
        if let RefWindow::Fixed { start, end } = self.ref_window {
            if start >= end {
                return bad("reference window must be non-empty");
            }
        }
        Ok(())
    }
}

/// Population mean and standard deviation (two-pass).
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// `theta = mean(reference) + k * std(reference)`.
pub fn adaptive_threshold(reference: &[f64], k: f64) -> Result<f64> {
    if reference.len() < 2 {
        return Err(Error::RefTooShort(reference.len()));
    }
    let (mu, sigma) = mean_std(reference);
    Ok(mu + k * sigma)
}

/// Validated spike runs of one series.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpikeValidation {
    /// Validated runs, in order.
    pub runs: Vec<Range<usize>>,
}

impl SpikeValidation {
    pub fn onset(&self) -> Option<usize> {
        self.runs.first().map(|r| r.start)
    }
}

/// Maximal runs where `pred > enter` starts a run and the run continues while
/// `pred > exit`; runs of length `>= d_min` are kept.
fn scan_runs(pred: &[f64], enter: f64, exit: f64, d_min: usize) -> Vec<Range<usize>> {
    let mut runs = Vec::new();
    let mut i = 0;
    while i < pred.len() {
        if pred[i] > enter {
            let start = i;
            while i < pred.len() && pred[i] > exit {
                i += 1;
            }
            if i - start >= d_min {
                runs.push(start..i);
            }
        } else {
            i += 1;
        }
    }
    runs
}

pub fn validate_spikes(pred: &[f64], theta: f64, d_min: usize) -> SpikeValidation {
    SpikeValidation {
        runs: scan_runs(pred, theta, theta, d_min.max(1)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressionMode {
    Segment,
    Full,
}

impl fmt::Display for RegressionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RegressionMode::Segment => "segment",
            RegressionMode::Full => "full",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnsetResult {
    pub threshold: f64,
    pub ref_mean: f64,
    pub ref_std: f64,
    /// Validated runs as half-open index ranges.
    pub runs: Vec<(usize, usize)>,
    /// Validated spike indices: members of validated runs strictly above the
    /// threshold.
    pub spike_indices: Vec<usize>,
    pub onset: Option<usize>,
    pub used_fallback: bool,
    pub mode: RegressionMode,
    pub len: usize,
}

impl OnsetResult {
    pub fn n_spike(&self) -> usize {
        self.spike_indices.len()
    }

    /// Indices that feed the regression head: `[onset, len)` in segment mode,
    /// everything in full mode.
    pub fn regression_range(&self) -> Range<usize> {
        match (self.mode, self.onset) {
            (RegressionMode::Segment, Some(t)) => t..self.len,
            _ => 0..self.len,
        }
    }
}

/// Applies the fallback rule to a validation result.
pub fn apply_fallback(
    validation: &SpikeValidation,
    pred: &[f64],
    theta: f64,
    n_min: usize,
) -> OnsetResult {
    let spike_indices: Vec<usize> = validation
        .runs
        .iter()
        .flat_map(|r| r.clone())
        .filter(|&i| pred[i] > theta)
        .collect();
    let used_fallback = spike_indices.len() < n_min;
    OnsetResult {
        threshold: theta,
        ref_mean: f64::NAN,
        ref_std: f64::NAN,
        runs: validation.runs.iter().map(|r| (r.start, r.end)).collect(),
        onset: validation.onset(),
        spike_indices,
        used_fallback,
        mode: if used_fallback {
            RegressionMode::Full
        } else {
            RegressionMode::Segment
        },
        len: pred.len(),
    }
}

/// Threshold from the reference window, (optionally hysteretic) run
/// validation over the whole series, then the fallback rule.
pub fn detect(pred: &[f64], cfg: &SpikeConfig) -> Result<OnsetResult> {
    cfg.validate()?;
    if pred.is_empty() {
        return Err(Error::TooFewRows { needed: 1, got: 0 });
    }
    let r = cfg.ref_window.resolve(pred.len());
    if r.end > pred.len() || r.start >= r.end {
        return Err(Error::InvalidConfig(format!(
            "reference window {r:?} outside series of length {}",
            pred.len()
        )));
    }
    let reference = &pred[r];
    if reference.len() < 2 {
        return Err(Error::RefTooShort(reference.len()));
    }
    let (mu, sigma) = mean_std(reference);
    let theta = mu + cfg.k_sigma * sigma;
    let exit = theta - cfg.hysteresis_fraction * sigma;
    let validation = SpikeValidation {
        runs: scan_runs(pred, theta, exit, cfg.d_min),
    };
    let mut out = apply_fallback(&validation, pred, theta, cfg.n_min);
    out.ref_mean = mu;
    out.ref_std = sigma;
    Ok(out)
}

/// Structured text record of a detection.
pub fn onset_record(result: &OnsetResult, cfg: &SpikeConfig) -> String {
    let ranges: Vec<String> = result
        .runs
        .iter()
        .map(|(s, e)| format!("{s}..{e}"))
        .collect();
    let onset = result
        .onset
        .map_or_else(|| "none".to_string(), |t| t.to_string());
    format!(
        "theta = {}\nref_mean = {}\nref_std = {}\nk_sigma = {}\nd_min = {}\nn_min = {}\nn_spike = {}\nonset = {}\nmode = {}\nused_fallback = {}\nspike_ranges = [{}]\n",
        result.threshold,
        result.ref_mean,
        result.ref_std,
        cfg.k_sigma,
        cfg.d_min,
        cfg.n_min,
        result.n_spike(),
        onset,
        result.mode,
        result.used_fallback,
        ranges.join(", ")
    )
}
