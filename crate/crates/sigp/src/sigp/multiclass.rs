//! One-vs-rest classification on a shared SDR basis.

use nalgebra::{DMatrix, DVector};

use super::{em_fit, EmConfig, EmTrace, SigpModel};
use crate::error::{Error, Result};
use crate::kernels::GramCache;
use crate::sdr::SdrBasis;

#[derive(Debug, Clone, PartialEq)]
pub struct OneVsRest {
    /// Class labels, ascending; `models[i]` scores `classes[i]` against the rest.
    pub classes: Vec<f64>,
    pub models: Vec<SigpModel>,
}

/// Distinct label values, ascending.
pub fn classes_of(labels: &DVector<f64>) -> Vec<f64> {
    let mut classes: Vec<f64> = labels.iter().copied().collect();
    classes.sort_by(f64::total_cmp);
    classes.dedup();
    classes
}

/// Regress `±1` indicators of each class on the shared basis.
pub fn fit_one_vs_rest(
    k: &GramCache,
    labels: &DVector<f64>,
    basis: &SdrBasis,
    cfg: &EmConfig,
) -> Result<(OneVsRest, Vec<EmTrace>)> {
    let classes = classes_of(labels);
    if classes.len() < 2 {
        return Err(Error::Data("classification needs at least two classes".into()));
    }
    let mut models = Vec::with_capacity(classes.len());
    let mut traces = Vec::with_capacity(classes.len());
    for &class in &classes {
        let target = labels.map(|l| if l == class { 1.0 } else { -1.0 });
        let (model, trace) = em_fit(k, &target, basis, cfg)?;
        models.push(model);
        traces.push(trace);
    }
    Ok((OneVsRest { classes, models }, traces))
}

impl OneVsRest {
    /// Predictive means, one column per class.
    pub fn scores(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(z.nrows(), self.models.len());
        for (j, model) in self.models.iter().enumerate() {
            out.set_column(j, &model.predict(z)?.mean);
        }
        Ok(out)
    }

    /// Label with the largest score.
    pub fn predict(&self, z: &DMatrix<f64>) -> Result<Vec<f64>> {
        let scores = self.scores(z)?;
        Ok(scores.row_iter().map(|r| self.classes[r.transpose().argmax().0]).collect())
    }
}
