//! Exact GP regression with a grid-searched noise variance, plus ordinary least squares.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::kernels::{self, GramCache, KernelSpec};
use crate::linalg;
use crate::sigp::PredictiveDistribution;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanKind {
    Zero,
    Linear,
}

impl MeanKind {
    pub fn name(self) -> &'static str {
        match self {
            MeanKind::Zero => "zero",
            MeanKind::Linear => "linear",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(MeanKind::Zero),
            "linear" => Ok(MeanKind::Linear),
            other => Err(Error::Domain(format!("unknown mean function '{other}'"))),
        }
    }
}

/// `σ² ∈ {1e-4, …, 1}`, 7 log-spaced points.
pub fn default_noise_grid() -> Vec<f64> {
    (0..7).map(|i| 10f64.powf(-4.0 + 4.0 * i as f64 / 6.0)).collect()
}

fn jitter_for(k: &DMatrix<f64>) -> f64 {
    1e-8 * k.trace() / k.nrows().max(1) as f64
}

fn factor(k: &DMatrix<f64>, noise2: f64) -> Result<Cholesky<f64, Dyn>> {
    let n = k.nrows();
    let a = k + DMatrix::identity(n, n) * (noise2 + jitter_for(k));
    linalg::cholesky(&a, "K + noise*I")
}

/// `−½ rᵀ(K+σ²I)⁻¹r − ½ log det(K+σ²I) − (n/2) log 2π`, with the jitter added to the diagonal.
pub fn exact_log_marginal(k: &DMatrix<f64>, r: &DVector<f64>, noise2: f64) -> Result<f64> {
    let chol = factor(k, noise2)?;
    Ok(log_marginal_from(&chol, r))
}

fn log_marginal_from(chol: &Cholesky<f64, Dyn>, r: &DVector<f64>) -> f64 {
    let n = r.len() as f64;
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    -0.5 * (r.dot(&chol.solve(r)) + log_det + n * (2.0 * PI).ln())
}

fn with_intercept(x: &DMatrix<f64>) -> DMatrix<f64> {
    let mut a = DMatrix::from_element(x.nrows(), x.ncols() + 1, 1.0);
    a.columns_mut(1, x.ncols()).copy_from(x);
    a
}

fn mean_values(mean: MeanKind, coef: &DVector<f64>, x: &DMatrix<f64>) -> DVector<f64> {
    match mean {
        MeanKind::Zero => DVector::zeros(x.nrows()),
        MeanKind::Linear => with_intercept(x) * coef,
    }
}

/// Least-squares coefficients, intercept first.
fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<DVector<f64>> {
    let a = with_intercept(x);
    a.svd(true, true)
        .solve(y, 1e-12)
        .map_err(|e| Error::Numerical(format!("least squares failed: {e}")))
}

#[derive(Debug, Clone)]
pub struct ExactGpModel {
    pub kernel: KernelSpec,
    pub noise2: f64,
    pub x_train: DMatrix<f64>,
    /// `(K + σ²I)⁻¹(y − mean(X))`.
    pub dual_weights: DVector<f64>,
    pub mean: MeanKind,
    /// Intercept then slopes for a linear mean; empty for a zero mean.
    pub mean_coef: DVector<f64>,
    pub log_marginal: f64,
    chol: Cholesky<f64, Dyn>,
}

impl PartialEq for ExactGpModel {
    fn eq(&self, other: &Self) -> bool {
        self.kernel == other.kernel
            && self.noise2 == other.noise2
            && self.x_train == other.x_train
            && self.dual_weights == other.dual_weights
            && self.mean == other.mean
            && self.mean_coef == other.mean_coef
    }
}

/// Select the noise variance on `grid` by exact log marginal likelihood.
pub fn gp_fit(k: &GramCache, y: &DVector<f64>, noise_grid: &[f64], mean: MeanKind) -> Result<ExactGpModel> {
    if noise_grid.is_empty() {
        return Err(Error::Domain("noise grid is empty".into()));
    }
    if let Some(bad) = noise_grid.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Domain(format!("noise variance {bad} must be positive")));
    }
    let (spec, x) = match (k.spec(), k.inputs()) {
        (Some(s), Some(x)) => (*s, x.clone()),
        _ => return Err(Error::Domain("Gram cache has no training inputs attached".into())),
    };
    if y.len() != k.n() {
        return Err(Error::Dimension(format!("{} targets for {} training points", y.len(), k.n())));
    }
    let mean_coef = match mean {
        MeanKind::Zero => DVector::zeros(0),
        MeanKind::Linear => least_squares(&x, y)?,
    };
    let r = y - mean_values(mean, &mean_coef, &x);
    let mut best: Option<(f64, f64, Cholesky<f64, Dyn>)> = None;
    for &noise2 in noise_grid {
        let chol = factor(k.k(), noise2)?;
        let lml = log_marginal_from(&chol, &r);
        log::debug!("noise {noise2:.3e}: log marginal {lml:.6}");
        if best.as_ref().is_none_or(|b| lml > b.0) {
            best = Some((lml, noise2, chol));
        }
    }
    let (log_marginal, noise2, chol) = best.expect("grid is non-empty");
    let dual_weights = chol.solve(&r);
    Ok(ExactGpModel { kernel: spec, noise2, x_train: x, dual_weights, mean, mean_coef, log_marginal, chol })
}

impl ExactGpModel {
    /// Recreate a model from stored parameters, refactoring the Gram matrix.
    pub fn from_parts(
        kernel: KernelSpec,
        noise2: f64,
        x_train: DMatrix<f64>,
        dual_weights: DVector<f64>,
        mean: MeanKind,
        mean_coef: DVector<f64>,
    ) -> Result<Self> {
        if !(noise2 > 0.0) {
            return Err(Error::Domain(format!("noise variance must be positive, got {noise2}")));
        }
        if dual_weights.len() != x_train.nrows() {
            return Err(Error::Dimension("one dual weight per training point required".into()));
        }
        let expected = if mean == MeanKind::Linear { x_train.ncols() + 1 } else { 0 };
        if mean_coef.len() != expected {
            return Err(Error::Dimension(format!("expected {expected} mean coefficients")));
        }
        let k = kernels::gram(&kernel, &x_train, &x_train)?;
        let chol = factor(&k, noise2)?;
        let r = &k * &dual_weights + &dual_weights * (noise2 + jitter_for(&k));
        let log_marginal = log_marginal_from(&chol, &r);
        Ok(ExactGpModel { kernel, noise2, x_train, dual_weights, mean, mean_coef, log_marginal, chol })
    }

    pub fn n(&self) -> usize {
        self.x_train.nrows()
    }

    pub fn d(&self) -> usize {
        self.x_train.ncols()
    }
}

/// Mean `κ(Z,X)·dual + mean(Z)`, variance `κ(z,z) − κ(z,X)(K+σ²I)⁻¹κ(X,z) + σ²`.
pub fn gp_predict(model: &ExactGpModel, z: &DMatrix<f64>) -> Result<PredictiveDistribution> {
    if z.ncols() != model.d() {
        return Err(Error::Dimension(format!("model expects {} features, got {}", model.d(), z.ncols())));
    }
    let kxz = kernels::gram(&model.kernel, &model.x_train, z)?;
    let mean = kxz.transpose() * &model.dual_weights + mean_values(model.mean, &model.mean_coef, z);
    let v = model.chol.l_dirty().clone().solve_lower_triangular(&kxz).ok_or_else(|| {
        Error::Numerical("triangular solve failed".into())
    })?;
    let mut variance = DVector::zeros(z.nrows());
    for (i, row) in z.row_iter().enumerate() {
        let zi: Vec<f64> = row.iter().copied().collect();
        let prior = model.kernel.eval(&zi, &zi);
        variance[i] = (prior - v.column(i).norm_squared()).max(0.0) + model.noise2;
    }
    Ok(PredictiveDistribution { mean, variance })
}

/// Ordinary least squares with Gaussian predictive intervals.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRegression {
    /// Intercept then slopes.
    pub coef: DVector<f64>,
    pub sigma2: f64,
    xtx_inv: DMatrix<f64>,
}

impl LinearRegression {
    pub fn fit(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::Dimension(format!("{} rows but {} targets", x.nrows(), y.len())));
        }
        let p = x.ncols() + 1;
        if x.nrows() <= p {
            return Err(Error::Data(format!("need more than {p} rows for least squares")));
        }
        let coef = least_squares(x, y)?;
        let a = with_intercept(x);
        let resid = y - &a * &coef;
        let sigma2 = resid.norm_squared() / (x.nrows() - p) as f64;
        let xtx_inv = linalg::spd_inverse(&linalg::symmetrize(&(a.transpose() * &a)), "XᵀX")?;
        Ok(LinearRegression { coef, sigma2, xtx_inv })
    }

    pub fn predict(&self, z: &DMatrix<f64>) -> Result<PredictiveDistribution> {
        if z.ncols() + 1 != self.coef.len() {
            return Err(Error::Dimension(format!("model expects {} features", self.coef.len() - 1)));
        }
        let a = with_intercept(z);
        let mean = &a * &self.coef;
        let variance = DVector::from_iterator(
            z.nrows(),
            a.row_iter().map(|r| self.sigma2 * (1.0 + (r * &self.xtx_inv * r.transpose())[(0, 0)])),
        );
        Ok(PredictiveDistribution { mean, variance })
    }
}
