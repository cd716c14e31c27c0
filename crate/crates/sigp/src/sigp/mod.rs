//! The SIGP model: low-rank prior on the SDR basis, EM training and prediction.

mod em;
mod multiclass;

pub use em::{em_fit, EmConfig, EmInit, EmParams, EmSolver, EmTrace};
pub use multiclass::{classes_of, fit_one_vs_rest, OneVsRest};

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{self, GramCache, KernelSpec};
use crate::linalg;

/// Trained SIGP: `y(·) = Π(·)(α + β) + c + ε` with `β ~ N(0, Σ_β)`, `ε ~ N(0, σ²)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigpModel {
    pub kernel: KernelSpec,
    pub x_train: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub sigma_beta: DMatrix<f64>,
    pub sigma2: f64,
    pub alpha: DVector<f64>,
    pub c: f64,
    pub train_k_row_means: DVector<f64>,
    /// Posterior mean of `β` given the training data.
    pub beta_mean: DVector<f64>,
    /// Posterior covariance `Δ` of `β`.
    pub beta_cov: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDistribution {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
}

impl PredictiveDistribution {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }
}

/// `Π(Z) = (κ(Z, X) − 1·rowmeansᵀ) W`.
pub fn projection(
    spec: &KernelSpec,
    x_train: &DMatrix<f64>,
    row_means: &DVector<f64>,
    w: &DMatrix<f64>,
    z: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    if z.ncols() != x_train.ncols() {
        return Err(Error::Dimension(format!(
            "model expects {} features, got {}",
            x_train.ncols(),
            z.ncols()
        )));
    }
    if w.nrows() != x_train.nrows() || row_means.len() != x_train.nrows() {
        return Err(Error::Dimension("W and row means must have one entry per training point".into()));
    }
    let mut kz = kernels::gram(spec, z, x_train)?;
    for mut row in kz.row_iter_mut() {
        row -= row_means.transpose();
    }
    Ok(kz * w)
}

/// `Π` on the training inputs, `Γ_n K W`.
pub fn train_projection(k: &GramCache, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if w.nrows() != k.n() {
        return Err(Error::Dimension(format!("W has {} rows but K is {}x{}", w.nrows(), k.n(), k.n())));
    }
    Ok(k.centered() * w)
}

/// Symmetric square root of a PSD `m×m` matrix.
fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    linalg::psd_power(&linalg::sym_eig_unchecked(a), 0.5)
}

/// Mean `Π(α + β̂) + c` and variance `diag(Π Δ Πᵀ) + σ²` from a precomputed projection.
pub fn predict_from_projection(
    pi: &DMatrix<f64>,
    alpha: &DVector<f64>,
    c: f64,
    beta_mean: &DVector<f64>,
    beta_cov: &DMatrix<f64>,
    sigma2: f64,
) -> Result<PredictiveDistribution> {
    let mut mean = pi * (alpha + beta_mean);
    mean.add_scalar_mut(c);
    let root = pi * psd_sqrt(beta_cov)?;
    let variance = DVector::from_iterator(root.nrows(), root.row_iter().map(|r| r.norm_squared() + sigma2));
    Ok(PredictiveDistribution { mean, variance })
}

impl SigpModel {
    pub fn n(&self) -> usize {
        self.x_train.nrows()
    }

    pub fn d(&self) -> usize {
        self.x_train.ncols()
    }

    pub fn m(&self) -> usize {
        self.w.ncols()
    }

    pub fn projection(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        projection(&self.kernel, &self.x_train, &self.train_k_row_means, &self.w, z)
    }

    pub fn predict(&self, z: &DMatrix<f64>) -> Result<PredictiveDistribution> {
        let pi = self.projection(z)?;
        predict_from_projection(&pi, &self.alpha, self.c, &self.beta_mean, &self.beta_cov, self.sigma2)
    }

    /// Structural checks on a model built or loaded outside the trainer.
    pub fn validate(&self) -> Result<()> {
        let (n, m) = (self.n(), self.m());
        if self.w.nrows() != n || self.train_k_row_means.len() != n {
            return Err(Error::Dimension("W and row means must have one entry per training point".into()));
        }
        if m > n || self.alpha.len() != m || self.beta_mean.len() != m {
            return Err(Error::Dimension(format!("inconsistent rank {m} for {n} training points")));
        }
        for (name, a) in [("Sigma_beta", &self.sigma_beta), ("beta covariance", &self.beta_cov)] {
            if a.nrows() != m || a.ncols() != m {
                return Err(Error::Dimension(format!("{name} must be {m}x{m}")));
            }
        }
        linalg::cholesky(&linalg::symmetrize(&self.sigma_beta), "Sigma_beta")?;
        if !(self.sigma2 > 0.0) || !self.sigma2.is_finite() {
            return Err(Error::Domain(format!("noise variance must be positive, got {}", self.sigma2)));
        }
        self.kernel.validate()
    }

    /// Replace the stored posterior of `β` with the one implied by the current parameters.
    pub fn refresh_posterior(&mut self, k: &GramCache, y: &DVector<f64>) -> Result<()> {
        let (mean, cov) = posterior_beta(self, k, y)?;
        self.beta_mean = mean;
        self.beta_cov = cov;
        Ok(())
    }
}

/// `y − Πα − c1`.
fn residual(pi: &DMatrix<f64>, y: &DVector<f64>, alpha: &DVector<f64>, c: f64) -> DVector<f64> {
    let mut r = y - pi * alpha;
    r.add_scalar_mut(-c);
    r
}

fn check_targets(k: &GramCache, y: &DVector<f64>) -> Result<()> {
    if y.len() != k.n() {
        return Err(Error::Dimension(format!("{} targets for {} training points", y.len(), k.n())));
    }
    Ok(())
}

/// `log N(y | Πα + c1, ΠΣ_βΠᵀ + σ²I)` in `O(n m²)`.
pub fn marginal_loglik_parts(
    pi: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma_beta: &DMatrix<f64>,
    sigma2: f64,
    alpha: &DVector<f64>,
    c: f64,
) -> Result<f64> {
    let wb = linalg::woodbury_inverse(sigma2, pi, sigma_beta)?;
    let r = residual(pi, y, alpha, c);
    let n = y.len() as f64;
    Ok(-0.5 * (wb.quad_form(&r) + wb.log_det_v() + n * (2.0 * PI).ln()))
}

/// Observed-data log marginal likelihood of the training targets.
pub fn marginal_loglik(model: &SigpModel, k: &GramCache, y: &DVector<f64>) -> Result<f64> {
    check_targets(k, y)?;
    let pi = train_projection(k, &model.w)?;
    marginal_loglik_parts(&pi, y, &model.sigma_beta, model.sigma2, &model.alpha, model.c)
}

/// `Δ = (Σ_β⁻¹ + σ⁻²ΠᵀΠ)⁻¹`.
pub fn beta_posterior_cov(pi: &DMatrix<f64>, sigma_beta: &DMatrix<f64>, sigma2: f64) -> Result<DMatrix<f64>> {
    let sb_inv = linalg::spd_inverse(&linalg::symmetrize(sigma_beta), "Sigma_beta")?;
    let prec = linalg::symmetrize(&(sb_inv + pi.transpose() * pi / sigma2));
    linalg::spd_inverse(&prec, "posterior precision of beta")
}

/// Posterior of `β`: mean `Σ_βΠᵀV⁻¹(y − u)` and covariance `Σ_β − Σ_βΠᵀV⁻¹ΠΣ_β`.
pub fn posterior_beta(model: &SigpModel, k: &GramCache, y: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    check_targets(k, y)?;
    let pi = train_projection(k, &model.w)?;
    posterior_beta_parts(&pi, y, &model.sigma_beta, model.sigma2, &model.alpha, model.c)
}

pub fn posterior_beta_parts(
    pi: &DMatrix<f64>,
    y: &DVector<f64>,
    sigma_beta: &DMatrix<f64>,
    sigma2: f64,
    alpha: &DVector<f64>,
    c: f64,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let wb = linalg::woodbury_inverse(sigma2, pi, sigma_beta)?;
    let r = residual(pi, y, alpha, c);
    let sp = sigma_beta * pi.transpose();
    let mean = &sp * wb.apply(&r);
    let vp = wb.apply_matrix(pi);
    let cov = linalg::symmetrize(&(sigma_beta - &sp * vp * sigma_beta));
    Ok((mean, cov))
}

/// Log-density of `f` under `N(0, n^{−2p} K^p K_ν K^p)`.
pub fn sigp_prior_density(k: &GramCache, k_nu: &DMatrix<f64>, p: f64, f: &DVector<f64>) -> Result<f64> {
    let n = k.n();
    if f.len() != n {
        return Err(Error::Dimension(format!("{} function values for {n} points", f.len())));
    }
    let cov = kernels::igp_covariance(k, k_nu, p)?;
    let chol = match nalgebra::Cholesky::new(cov.clone()) {
        Some(c) => c,
        None => {
            let jitter = 1e-10 * cov.trace() / n as f64;
            log::warn!("prior covariance not positive definite, adding jitter {jitter:.3e}");
            let jittered = &cov + DMatrix::identity(n, n) * jitter;
            nalgebra::Cholesky::new(jittered)
                .ok_or_else(|| Error::Singular("prior covariance is singular after jitter".into()))?
        }
    };
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let quad = f.dot(&chol.solve(f));
    Ok(-0.5 * (quad + log_det + n as f64 * (2.0 * PI).ln()))
}
