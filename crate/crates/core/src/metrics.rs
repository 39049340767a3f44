//! Error metrics on normalized RUL series.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::onset::RegressionMode;

pub const DEFAULT_EPSILON: f64 = 1e-8;

fn check(y: &[f64], yhat: &[f64]) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::LengthMismatch(y.len(), yhat.len()));
    }
    if y.is_empty() {
        return Err(Error::TooFewRows { needed: 1, got: 0 });
    }
    Ok(())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    let mse = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;
    Ok(mse.sqrt())
}

pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if y.len() < 2 || ss_tot == 0.0 {
        return Err(Error::ConstantTarget);
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (b - a) * (b - a)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

/// Percent error with `|y|` floored at `eps`.
pub fn mape(y: &[f64], yhat: &[f64], eps: f64) -> Result<f64> {
    check(y, yhat)?;
    let s: f64 = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| (a - b).abs() / a.abs().max(eps))
        .sum();
    Ok(100.0 * s / y.len() as f64)
}

/// Per-point accuracy for a percent error `er = (y - yhat) / y * 100`.
/// Late predictions (`er <= 0`) halve at 5%, early ones at 20%.
pub fn phm_accuracy(er: f64) -> f64 {
    let ln_half = 0.5f64.ln();
    if er <= 0.0 {
        (-ln_half * er / 5.0).exp()
    } else {
        (ln_half * er / 20.0).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhmScore {
    pub score: f64,
    pub scored: usize,
    pub excluded_zero: usize,
}

/// Mean accuracy over all points with a nonzero target.
pub fn phm_score_detail(y: &[f64], yhat: &[f64]) -> Result<PhmScore> {
    if y.len() != yhat.len() {
        return Err(Error::LengthMismatch(y.len(), yhat.len()));
    }
    let mut sum = 0.0;
    let mut scored = 0;
    for (&a, &b) in y.iter().zip(yhat) {
        if a != 0.0 {
            sum += phm_accuracy((a - b) / a * 100.0);
            scored += 1;
        }
    }
    if scored == 0 {
        return Err(Error::NoScorablePoints);
    }
    Ok(PhmScore {
        score: sum / scored as f64,
        scored,
        excluded_zero: y.len() - scored,
    })
}

pub fn phm_score(y: &[f64], yhat: &[f64]) -> Result<f64> {
    phm_score_detail(y, yhat).map(|s| s.score)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run: String,
    pub k_sigma: f64,
    pub mode: RegressionMode,
    pub mae: f64,
    pub rmse: f64,
    /// `NaN` when the target is constant.
    pub r2: f64,
    pub mape_percent: f64,
    pub phm_score: f64,
    pub n_points: usize,
    pub epsilon_used: f64,
}

pub const CSV_HEADER: &str = "run,k_sigma,mode,rmse,mae,r2,mape,phm_score,n_points";

impl MetricsReport {
    pub fn compute(
        run: &str,
        k_sigma: f64,
        mode: RegressionMode,
        y: &[f64],
        yhat: &[f64],
        eps: f64,
    ) -> Result<Self> {
        let r2 = match r2(y, yhat) {
            Ok(v) => v,
            Err(Error::ConstantTarget) => f64::NAN,
            Err(e) => return Err(e),
        };
        Ok(Self {
            run: run.to_string(),
            k_sigma,
            mode,
            mae: mae(y, yhat)?,
            rmse: rmse(y, yhat)?,
            r2,
            mape_percent: mape(y, yhat, eps)?,
            phm_score: phm_score(y, yhat)?,
            n_points: y.len(),
            epsilon_used: eps,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.run,
            self.k_sigma,
            self.mode,
            self.rmse,
            self.mae,
            self.r2,
            self.mape_percent,
            self.phm_score,
            self.n_points
        )
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "run = {}", self.run);
        let _ = writeln!(s, "k_sigma = {}", self.k_sigma);
        let _ = writeln!(s, "mode = {}", self.mode);
        let _ = writeln!(s, "mae = {}", self.mae);
        let _ = writeln!(s, "rmse = {}", self.rmse);
        let _ = writeln!(s, "r2 = {}", self.r2);
        let _ = writeln!(s, "mape_percent = {}", self.mape_percent);
        let _ = writeln!(s, "phm_score = {}", self.phm_score);
        let _ = writeln!(s, "n_points = {}", self.n_points);
        let _ = writeln!(s, "epsilon_used = {}", self.epsilon_used);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction() {
        let y = [0.1, 0.4, 0.9];
        assert_eq!(mae(&y, &y).unwrap(), 0.0);
        assert_eq!(rmse(&y, &y).unwrap(), 0.0);
        assert_eq!(r2(&y, &y).unwrap(), 1.0);
        assert_eq!(mape(&y, &y, DEFAULT_EPSILON).unwrap(), 0.0);
        assert_eq!(phm_score(&y, &y).unwrap(), 1.0);
    }

    #[test]
    fn swapped_pair() {
        let (y, p) = ([0.0, 1.0], [1.0, 0.0]);
        assert_eq!(mae(&y, &p).unwrap(), 1.0);
        assert_eq!(rmse(&y, &p).unwrap(), 1.0);
        assert_eq!(r2(&y, &p).unwrap(), -3.0);
    }

    #[test]
    fn mean_predictor_and_constant_target() {
        let y = [1.0, 2.0, 6.0];
        assert_eq!(r2(&y, &[3.0; 3]).unwrap(), 0.0);
        assert!(matches!(r2(&[2.0; 3], &y), Err(Error::ConstantTarget)));
        assert!(matches!(mae(&y, &y[..2]), Err(Error::LengthMismatch(3, 2))));
    }

    #[test]
    fn mape_examples() {
        assert!((mape(&[1.0], &[1.1], DEFAULT_EPSILON).unwrap() - 10.0).abs() < 1e-9);
        let a = mape(&[1e-3], &[1e-3 + 0.01], DEFAULT_EPSILON).unwrap();
        let b = mape(&[1e-6], &[1e-6 + 0.01], DEFAULT_EPSILON).unwrap();
        assert!((b / a - 1000.0).abs() < 1e-6);
        let c = mape(&[0.0], &[0.01], DEFAULT_EPSILON).unwrap();
        assert!((c - 1e8).abs() < 1e-3);
    }

    #[test]
    fn phm_asymmetry() {
        assert!((phm_accuracy(-5.0) - 0.5).abs() < 1e-12);
        assert!((phm_accuracy(20.0) - 0.5).abs() < 1e-12);
        assert!((phm_accuracy(-10.0) - phm_accuracy(40.0)).abs() < 1e-12);
        assert_eq!(phm_accuracy(0.0), 1.0);
        // y = 1, yhat = 1.05 is 5% late.
        assert!((phm_score(&[1.0], &[1.05]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn phm_excludes_zero_targets() {
        let d = phm_score_detail(&[0.0, 1.0, 0.5], &[0.3, 1.0, 0.5]).unwrap();
        assert_eq!((d.scored, d.excluded_zero), (2, 1));
        assert_eq!(d.score, 1.0);
        assert!(matches!(phm_score(&[0.0], &[1.0]), Err(Error::NoScorablePoints)));
    }

    #[test]
    fn report_formats() {
        let r = MetricsReport::compute("r1", 2.0, RegressionMode::Segment, &[1.0, 0.5, 0.0], &[0.9, 0.5, 0.1], 1e-8)
            .unwrap();
        assert_eq!(r.n_points, 3);
        assert!(r.mae <= r.rmse);
        assert!(r.csv_row().starts_with("r1,2,segment,"));
        assert_eq!(r.csv_row().split(',').count(), CSV_HEADER.split(',').count());
        assert!(r.to_text().contains("epsilon_used = 0.00000001"));
    }
}
