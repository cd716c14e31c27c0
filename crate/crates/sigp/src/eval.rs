//! Scoring: F1, accuracy, MSE and NLPD.

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::sigp::PredictiveDistribution;

fn check_pair(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!("{a} predictions for {b} targets")));
    }
    if a == 0 {
        return Err(Error::Data("nothing to score".into()));
    }
    Ok(())
}

/// F1 score of the positive class for `±1` labels; 0 when there are no true positives.
pub fn f1(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred.len(), truth.len())?;
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    for (&p, &t) in pred.iter().zip(truth) {
        match (p > 0.0, t > 0.0) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fneg += 1.0,
            (false, false) => {}
        }
    }
    if tp == 0.0 {
        return Ok(0.0);
    }
    let precision = tp / (tp + fp);
    let recall = tp / (tp + fneg);
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Unweighted mean over the classes present in `truth` of the one-vs-rest F1 score.
pub fn macro_f1(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred.len(), truth.len())?;
    let mut classes: Vec<f64> = truth.to_vec();
    classes.sort_by(f64::total_cmp);
    classes.dedup();
    let mut total = 0.0;
    for &c in &classes {
        let p: Vec<f64> = pred.iter().map(|&v| if v == c { 1.0 } else { -1.0 }).collect();
        let t: Vec<f64> = truth.iter().map(|&v| if v == c { 1.0 } else { -1.0 }).collect();
        total += f1(&p, &t)?;
    }
    Ok(total / classes.len() as f64)
}

/// Fraction of exact label matches.
pub fn accuracy(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred.len(), truth.len())?;
    let hits = pred.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / pred.len() as f64)
}

pub fn mse(pred: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
    check_pair(pred.len(), y.len())?;
    Ok((pred - y).norm_squared() / y.len() as f64)
}

/// Mean negative log predictive density under independent Gaussians.
pub fn nlpd(dist: &PredictiveDistribution, y: &DVector<f64>) -> Result<f64> {
    check_pair(dist.len(), y.len())?;
    let mut total = 0.0;
    for ((&m, &v), &t) in dist.mean.iter().zip(dist.variance.iter()).zip(y.iter()) {
        if !(v > 0.0) {
            return Err(Error::Domain(format!("predictive variance {v} is not positive")));
        }
        total += 0.5 * ((2.0 * PI * v).ln() + (t - m) * (t - m) / v);
    }
    Ok(total / y.len() as f64)
}

/// Map `{0, 1}` or `±1` labels to `±1` (positive when `> 0`).
pub fn to_signed(labels: &[f64]) -> Vec<f64> {
    labels.iter().map(|&l| if l > 0.0 { 1.0 } else { -1.0 }).collect()
}
