//! Parameter and prediction error, per-run error curves and their summary.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimatorKind;
use crate::model::SystemSpec;
use crate::numerics::{spectral_norm_or_best, Matrix};

/// `||A_hat - A*||`, the operator norm of the estimation error.
pub fn param_error(a_hat: &Matrix, a_star: &Matrix) -> Result<f64> {
    spectral_norm_or_best(&a_hat.sub(a_star)?)
}

/// Excess one-step prediction loss at stationarity,
/// `tr((A_hat - A*)^T (A_hat - A*) G)`.
pub fn pred_excess(a_hat: &Matrix, a_star: &Matrix, g: &Matrix) -> Result<f64> {
    let delta = a_hat.sub(a_star)?;
    if g.rows() != delta.cols() || !g.is_square() {
        return Err(Error::Dimension(format!(
            "covariance is {}x{} but the estimate is {}x{}",
            g.rows(),
            g.cols(),
            delta.rows(),
            delta.cols()
        )));
    }
    // tr(D^T D G) = tr(D G D^T) = sum_ik (D G)_ik D_ik
    let dg = delta.matmul(g)?;
    Ok(dg
        .as_slice()
        .iter()
        .zip(delta.as_slice())
        .map(|(a, b)| a * b)
        .sum())
}

/// Computes both metrics against a fixed ground truth.
#[derive(Debug, Clone)]
pub struct Evaluator {
    a_star: Matrix,
    g: Matrix,
}

impl Evaluator {
    pub fn new(a_star: Matrix, g: Matrix) -> Result<Self> {
        if !a_star.is_square() || a_star.rows() != g.rows() || !g.is_square() {
            return Err(Error::Dimension(
                "A* and G must be square of equal size".into(),
            ));
        }
        Ok(Evaluator { a_star, g })
    }

    /// Uses the true stationary covariance of `spec`.
    pub fn for_system(spec: &SystemSpec) -> Result<Self> {
        Self::new(spec.a_star().clone(), spec.stationary_covariance()?)
    }

    pub fn dim(&self) -> usize {
        self.a_star.rows()
    }

    pub fn a_star(&self) -> &Matrix {
        &self.a_star
    }

    pub fn g(&self) -> &Matrix {
        &self.g
    }

    /// `(param_err, pred_excess)`.
    pub fn evaluate(&self, a_hat: &Matrix) -> Result<(f64, f64)> {
        Ok((
            param_error(a_hat, &self.a_star)?,
            pred_excess(a_hat, &self.a_star, &self.g)?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub buffer_index: usize,
    pub samples_seen: usize,
    pub param_err: f64,
    pub pred_excess: f64,
    pub burn_in: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCurve {
    pub estimator: EstimatorKind,
    pub seed: u64,
    pub records: Vec<ErrorRecord>,
}

impl ErrorCurve {
    pub fn last(&self) -> Option<&ErrorRecord> {
        self.records.last()
    }
}

/// Across-seed statistics of the final record, per estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub estimator: EstimatorKind,
    pub runs: usize,
    pub mean_param_err: f64,
    pub std_param_err: f64,
    pub mean_pred_excess: f64,
    pub std_pred_excess: f64,
    /// Mean final parameter error relative to OLS, when OLS is present.
    pub param_ratio_vs_ols: Option<f64>,
    pub pred_ratio_vs_ols: Option<f64>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Summarizes the final record of every curve. Rows come out in the
/// canonical estimator order; curves without records are ignored.
pub fn summarize(curves: &[ErrorCurve]) -> Vec<SummaryRow> {
    let mut rows: Vec<SummaryRow> = EstimatorKind::ALL
        .into_iter()
        .filter_map(|kind| {
            let finals: Vec<&ErrorRecord> = curves
                .iter()
                .filter(|c| c.estimator == kind)
                .filter_map(ErrorCurve::last)
                .collect();
            if finals.is_empty() {
                return None;
            }
            let params: Vec<f64> = finals.iter().map(|r| r.param_err).collect();
            let preds: Vec<f64> = finals.iter().map(|r| r.pred_excess).collect();
            let (mean_param_err, std_param_err) = mean_std(&params);
            let (mean_pred_excess, std_pred_excess) = mean_std(&preds);
            Some(SummaryRow {
                estimator: kind,
                runs: finals.len(),
                mean_param_err,
                std_param_err,
                mean_pred_excess,
                std_pred_excess,
                param_ratio_vs_ols: None,
                pred_ratio_vs_ols: None,
            })
        })
        .collect();
    if let Some(ols) = rows
        .iter()
        .find(|r| r.estimator == EstimatorKind::Ols)
        .cloned()
    {
        for row in &mut rows {
            row.param_ratio_vs_ols = Some(row.mean_param_err / ols.mean_param_err);
            row.pred_ratio_vs_ols = Some(row.mean_pred_excess / ols.mean_pred_excess);
        }
    }
    rows
}
