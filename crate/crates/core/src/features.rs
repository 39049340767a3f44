//! Vibration-window features, Spearman ranking against RUL, and the
//! post-onset features fed to the regression head.

use std::fmt::Write as _;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::dataset::{RulLabels, RunSeries};
use crate::error::{Error, Result};

pub const DEFAULT_FFT_BINS: usize = 8;
pub const DEFAULT_ROLLING_WINDOW: usize = 10;
pub const MIN_WINDOW_SAMPLES: usize = 16;

/// Named scalar features, in insertion order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    entries: Vec<(String, f64)>,
}

impl FeatureVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, f64)>) -> Self {
        Self {
            entries: pairs.into_iter().collect(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, value: f64) {
        self.entries.push((name.into(), value));
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> + '_ {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.entries.iter().map(|(_, v)| *v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Channel {
    H,
    V,
}

impl Channel {
    pub fn tag(self) -> &'static str {
        match self {
            Channel::H => "H",
            Channel::V => "V",
        }
    }
}

/// One channel of raw accelerometer samples.
#[derive(Debug, Clone, PartialEq)]
pub struct VibrationWindow {
    pub samples: Vec<f64>,
    pub sample_rate_hz: f64,
    pub channel: Channel,
}

impl VibrationWindow {
    pub fn new(samples: Vec<f64>, sample_rate_hz: f64, channel: Channel) -> Result<Self> {
        if samples.len() < MIN_WINDOW_SAMPLES {
            return Err(Error::InvalidWindow(format!(
                "need at least {MIN_WINDOW_SAMPLES} samples, got {}",
                samples.len()
            )));
        }
        if !(sample_rate_hz > 0.0) {
            return Err(Error::InvalidWindow("sample rate must be positive".into()));
        }
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self {
            samples,
            sample_rate_hz,
            channel,
        })
    }

    /// Length after zero-padding to the next power of two.
    pub fn padded_len(&self) -> usize {
        self.samples.len().next_power_of_two()
    }
}

/// One-sided magnitude spectrum of `x` zero-padded to the next power of two:
/// entries `0..=N/2`.
pub fn one_sided_magnitudes(x: &[f64]) -> Vec<f64> {
    let n = x.len().max(1).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    if n > 1 {
        FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    }
    buf[..=n / 2].iter().map(|c| c.norm()).collect()
}

/// Feature names produced by [`extract_features`] for one channel.
pub fn window_feature_names(bins: usize, channel: Channel) -> Vec<String> {
    let c = channel.tag();
    let mut names: Vec<String> = (0..bins).map(|b| format!("FFT_bin_{b}_{c}")).collect();
    for stem in [
        "RMS",
        "Kurtosis",
        "Skewness",
        "CrestFactor",
        "BandPower_Low",
        "BandPower_Mid",
        "BandPower_High",
    ] {
        names.push(format!("{stem}_{c}"));
    }
    names
}

/// Extracts the per-window feature set.
///
/// Kurtosis and skewness use population central moments (kurtosis is the raw
/// fourth standardized moment, 3 for a Gaussian); both are 0 for a constant
/// window. FFT bins are mean magnitudes over `bins` equal-width bands of the
/// one-sided spectrum. Band powers use one-sided power `w_k |X_k|^2 / N`
/// (`w_k = 2` except DC and Nyquist) so the three bands sum to the padded
/// signal energy.
pub fn extract_features(win: &VibrationWindow, bins: usize) -> Result<FeatureVector> {
    if bins < 4 {
        return Err(Error::InvalidConfig(format!("need at least 4 FFT bins, got {bins}")));
    }
    let x = &win.samples;
    let n = x.len() as f64;
    let rms = (x.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
    if rms == 0.0 {
        return Err(Error::AllZeroWindow);
    }
    let mean = x.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &v in x {
        let d = v - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (kurtosis, skewness) = if m2 > 0.0 {
        (m4 / (m2 * m2), m3 / m2.powf(1.5))
    } else {
        (0.0, 0.0)
    };
    let peak = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let crest = peak / rms;

    let mags = one_sided_magnitudes(x);
    let padded = win.padded_len();
    let half = padded / 2;
    let mut band_sum = vec![0.0; bins];
    let mut band_count = vec![0usize; bins];
    let mut power = [0.0f64; 3];
    for (k, &m) in mags.iter().enumerate() {
        let frac = k as f64 / half as f64;
        let b = ((frac * bins as f64) as usize).min(bins - 1);
        band_sum[b] += m;
        band_count[b] += 1;
        let w = if k == 0 || k == half { 1.0 } else { 2.0 };
        let p = w * m * m / padded as f64;
        let third = if frac < 1.0 / 3.0 {
            0
        } else if frac < 2.0 / 3.0 {
            1
        } else {
            2
        };
        power[third] += p;
    }

    let names = window_feature_names(bins, win.channel);
    let mut values: Vec<f64> = band_sum
        .iter()
        .zip(&band_count)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    values.extend([rms, kurtosis, skewness, crest, power[0], power[1], power[2]]);
    Ok(FeatureVector::from_pairs(names.into_iter().zip(values)))
}

/// Mid-ranks (1-based, ties share their average rank).
pub fn mid_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// |Spearman ρ| with a flag set when either series has zero rank variance
/// (value is then defined as 0).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Spearman {
    pub abs_rho: f64,
    pub constant: bool,
}

pub fn spearman_abs(x: &[f64], y: &[f64]) -> Result<Spearman> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(Error::TooFewRows { needed: 3, got: x.len() });
    }
    let rx = mid_ranks(x);
    let ry = mid_ranks(y);
    let n = rx.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Spearman {
            abs_rho: 0.0,
            constant: true,
        });
    }
    let rho = sxy / (sxx.sqrt() * syy.sqrt());
    Ok(Spearman {
        abs_rho: rho.abs().min(1.0),
        constant: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub target: String,
    /// (feature, |ρ|), sorted by |ρ| descending, then by name.
    pub entries: Vec<(String, f64)>,
}

impl RankingReport {
    /// The top-ranked feature, used as the pipeline indicator.
    pub fn top(&self) -> Option<&str> {
        self.entries.first().map(|(n, _)| n.as_str())
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,abs_spearman\n");
        for (n, v) in &self.entries {
            let _ = writeln!(s, "{n},{v}");
        }
        s
    }

    pub fn to_table(&self) -> String {
        let width = self.entries.iter().map(|(n, _)| n.len()).max().unwrap_or(4).max(7);
        let mut s = format!("{:<4} {:<width$}  |rho| vs {}\n", "rank", "feature", self.target);
        for (i, (n, v)) in self.entries.iter().enumerate() {
            let _ = writeln!(s, "{:<4} {:<width$}  {:.3}", i + 1, n, v);
        }
        s
    }
}

/// Ranks every feature by |Spearman ρ| against RUL labels concatenated over
/// all runs. `labels[i]` belongs to `runs[i]` and is looked up by time index.
pub fn rank_features(runs: &[RunSeries], labels: &[RulLabels]) -> Result<RankingReport> {
    if runs.is_empty() {
        return Err(Error::TooFewRows { needed: 1, got: 0 });
    }
    if runs.len() != labels.len() {
        return Err(Error::LengthMismatch(runs.len(), labels.len()));
    }
    let schema = runs[0].schema().to_vec();
    if schema.is_empty() {
        return Err(Error::MissingColumn("<feature column>".into()));
    }
    let mut target = Vec::new();
    let mut cols: Vec<Vec<f64>> = vec![Vec::new(); schema.len()];
    for (run, lab) in runs.iter().zip(labels) {
        if run.schema() != schema.as_slice() {
            return Err(Error::SchemaMismatch {
                expected: schema.clone(),
                found: run.schema().to_vec(),
            });
        }
        for (i, &t) in run.t_index().iter().enumerate() {
            let y = lab.at(t).ok_or(Error::InvalidFpt {
                fpt: t,
                total: lab.total,
            })?;
            target.push(y);
            for (j, &v) in run.row_values(i).iter().enumerate() {
                cols[j].push(v);
            }
        }
    }
    let mut entries = schema
        .into_iter()
        .zip(cols)
        .map(|(name, col)| Ok((name, spearman_abs(&col, &target)?.abs_rho)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Ok(RankingReport {
        target: "RUL".into(),
        entries,
    })
}

/// Names of the post-onset regression features, in row order.
pub const POST_ONSET_FEATURE_NAMES: [&str; 9] = [
    "indicator_pred",
    "rolling_slope",
    "rolling_variance",
    "rolling_energy",
    "spectral_slope",
    "peak_magnitude",
    "exceedance_count",
    "max_exceedance_margin",
    "indicator_observed",
];

/// Features of one post-onset time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostOnsetFeatures {
    pub t: usize,
    pub indicator_pred: f64,
    pub rolling_slope: f64,
    pub rolling_variance: f64,
    pub rolling_energy: f64,
    pub spectral_slope: f64,
    pub peak_magnitude: f64,
    pub exceedance_count: f64,
    pub max_exceedance_margin: f64,
    pub indicator_observed: f64,
}

impl PostOnsetFeatures {
    pub fn to_row(&self) -> [f64; 9] {
        [
            self.indicator_pred,
            self.rolling_slope,
            self.rolling_variance,
            self.rolling_energy,
            self.spectral_slope,
            self.peak_magnitude,
            self.exceedance_count,
            self.max_exceedance_margin,
            self.indicator_observed,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PostOnsetParams {
    /// Rolling window length w (≥ 2).
    pub window: usize,
    /// Threshold the spike metrics are measured against.
    pub threshold: f64,
}

impl Default for PostOnsetParams {
    fn default() -> Self {
        Self {
            window: DEFAULT_ROLLING_WINDOW,
            threshold: f64::INFINITY,
        }
    }
}

/// Least-squares slope of `y` against `0..y.len()`.
pub fn ls_slope(y: &[f64]) -> f64 {
    let n = y.len();
    if n < 2 {
        return 0.0;
    }
    let nf = n as f64;
    let mx = (nf - 1.0) / 2.0;
    let my = y.iter().sum::<f64>() / nf;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (i, v) in y.iter().enumerate() {
        let dx = i as f64 - mx;
        sxy += dx * (v - my);
        sxx += dx * dx;
    }
    sxy / sxx
}

fn spectral_slope(x: &[f64]) -> f64 {
    if x.len() < 4 {
        return 0.0;
    }
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let mags = one_sided_magnitudes(&centered);
    let logs: Vec<f64> = mags[1..].iter().map(|m| (m + 1e-12).ln()).collect();
    ls_slope(&logs)
}

/// Builds one feature row per step `t >= onset` from aligned predicted (`pred`)
/// and observed (`raw`) indicator series.
///
/// Rolling statistics look at `[max(onset, t + 1 - w), t]`; when that holds a
/// single point the window reaches one step back before the onset if
/// possible. Slope, variance and energy are taken on the prediction; spectral
/// slope and peak magnitude on the observed indicator; exceedance metrics
/// compare the prediction with `params.threshold`.
pub fn post_onset_features(
    pred: &[f64],
    raw: &[f64],
    onset: usize,
    params: &PostOnsetParams,
) -> Result<Vec<PostOnsetFeatures>> {
    if pred.len() != raw.len() {
        return Err(Error::LengthMismatch(pred.len(), raw.len()));
    }
    if onset >= pred.len() {
        return Err(Error::TooFewRows {
            needed: onset + 1,
            got: pred.len(),
        });
    }
    if params.window < 2 {
        return Err(Error::InvalidConfig("rolling window must be at least 2".into()));
    }
    let theta = params.threshold;
    Ok((onset..pred.len())
        .map(|t| {
            let mut start = onset.max((t + 1).saturating_sub(params.window));
            if t - start < 1 {
                start = t.saturating_sub(1);
            }
            let zw = &pred[start..=t];
            let xw = &raw[start..=t];
            let n = zw.len() as f64;
            let mean = zw.iter().sum::<f64>() / n;
            let variance = zw.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let energy = zw.iter().map(|v| v * v).sum::<f64>() / n;
            let exceed = zw.iter().filter(|&&v| v > theta).count() as f64;
            let margin = zw
                .iter()
                .map(|v| v - theta)
                .fold(0.0f64, |m, d| if d.is_finite() { m.max(d) } else { m });
            PostOnsetFeatures {
                t,
                indicator_pred: pred[t],
                rolling_slope: ls_slope(zw),
                rolling_variance: variance,
                rolling_energy: energy,
                spectral_slope: spectral_slope(xw),
                peak_magnitude: xw.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                exceedance_count: exceed,
                max_exceedance_margin: margin,
                indicator_observed: raw[t],
            }
        })
        .collect())
}
