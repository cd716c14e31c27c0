//! EM updates for `Σ_β`, `σ²` and the mean function `Π(·)α + c`.

use nalgebra::{DMatrix, DVector};

use super::{marginal_loglik_parts, posterior_beta_parts, train_projection, SigpModel};
use crate::error::{Error, Result};
use crate::kernels::GramCache;
use crate::linalg;
use crate::sdr::SdrBasis;

const SIGMA2_FLOOR: f64 = 1e-12;

/// Starting values; `None` picks `Σ_β = var(y) I`, `σ² = var(y)/2`, `α = 0`, `c = mean(y)`.
#[derive(Debug, Clone, Default)]
pub struct EmInit {
    pub sigma_beta: Option<DMatrix<f64>>,
    pub sigma2: Option<f64>,
    pub alpha: Option<DVector<f64>>,
    pub c: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop when the objective changes by less than `tol · (1 + |objective|)`.
    pub tol: f64,
    /// Ridge weight on the mean function, `ξ`.
    pub xi: f64,
    pub init: EmInit,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig { max_iter: 500, tol: 1e-6, xi: 1e-4, init: EmInit::default() }
    }
}

#[derive(Debug, Clone, Default)]
pub struct EmTrace {
    /// Observed-data log marginal likelihood, starting with the initial parameters.
    pub loglik: Vec<f64>,
    /// Log marginal likelihood minus the mean ridge `(nξ/2) αᵀWᵀKWα`; this is what EM ascends.
    pub objective: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Iterations where the `σ²` update was rejected.
    pub sigma2_holds: usize,
    pub jitter_events: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmParams {
    pub sigma_beta: DMatrix<f64>,
    pub sigma2: f64,
    pub alpha: DVector<f64>,
    pub c: f64,
}

/// One EM run on fixed `Π`; each [`EmSolver::step`] is a full pass of the updates.
#[derive(Debug, Clone)]
pub struct EmSolver {
    pi: DMatrix<f64>,
    wkw: DMatrix<f64>,
    y: DVector<f64>,
    xi: f64,
    params: EmParams,
    loglik: f64,
    objective: f64,
    sigma2_holds: usize,
    jitter_events: usize,
}

fn variance(y: &DVector<f64>) -> f64 {
    let mean = y.mean();
    y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64
}

impl EmSolver {
    pub fn new(k: &GramCache, y: &DVector<f64>, w: &DMatrix<f64>, cfg: &EmConfig) -> Result<Self> {
        let n = k.n();
        let m = w.ncols();
        if y.len() != n || w.nrows() != n {
            return Err(Error::Dimension(format!(
                "K is {n}x{n}, y has {} entries, W has {} rows",
                y.len(),
                w.nrows()
            )));
        }
        if n == 0 || m == 0 || m > n {
            return Err(Error::Domain(format!("rank {m} invalid for {n} points")));
        }
        if !(cfg.xi > 0.0) {
            return Err(Error::Domain(format!("xi must be positive, got {}", cfg.xi)));
        }
        let sv = w.clone().svd(false, false).singular_values;
        if !(sv.min() > 1e-12 * sv.max()) {
            return Err(Error::Rank { requested: m, detected: sv.iter().filter(|&&s| s > 1e-12 * sv.max()).count() });
        }
        let pi = train_projection(k, w)?;
        let wkw = linalg::symmetrize(&(w.transpose() * k.k() * w));

        let var_y = variance(y);
        let scale = if var_y > 0.0 { var_y } else { 1.0 };
        let params = EmParams {
            sigma_beta: cfg.init.sigma_beta.clone().unwrap_or_else(|| DMatrix::identity(m, m) * scale),
            sigma2: cfg.init.sigma2.unwrap_or(0.5 * scale),
            alpha: cfg.init.alpha.clone().unwrap_or_else(|| DVector::zeros(m)),
            c: cfg.init.c.unwrap_or_else(|| y.mean()),
        };
        if params.sigma_beta.shape() != (m, m) || params.alpha.len() != m {
            return Err(Error::Dimension(format!("initial values must match rank {m}")));
        }
        let mut solver = EmSolver {
            pi,
            wkw,
            y: y.clone(),
            xi: cfg.xi,
            params,
            loglik: 0.0,
            objective: 0.0,
            sigma2_holds: 0,
            jitter_events: 0,
        };
        let (l, f) = solver.evaluate(&solver.params)?;
        solver.loglik = l;
        solver.objective = f;
        Ok(solver)
    }

    pub fn params(&self) -> &EmParams {
        &self.params
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.pi
    }

    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    pub fn objective(&self) -> f64 {
        self.objective
    }

    fn evaluate(&self, p: &EmParams) -> Result<(f64, f64)> {
        let l = marginal_loglik_parts(&self.pi, &self.y, &p.sigma_beta, p.sigma2, &p.alpha, p.c)?;
        let n = self.y.len() as f64;
        let ridge = 0.5 * n * self.xi * p.alpha.dot(&(&self.wkw * &p.alpha));
        Ok((l, l - ridge))
    }

    /// Proposed parameters from one pass of the updates.
    fn propose(&mut self) -> Result<EmParams> {
        let p = &self.params;
        let pi = &self.pi;
        let y = &self.y;
        let n = y.len();
        let m = pi.ncols();

        let mut ones_pi = DMatrix::from_element(n, m + 1, 1.0);
        ones_pi.columns_mut(1, m).copy_from(pi);
        let (prod, trace_vinv) = linalg::woodbury_inverse(p.sigma2, pi, &p.sigma_beta)?.dense_apply(&ones_pi);
        let v1 = prod.column(0).into_owned();
        let s = v1.sum();
        let vpi = prod.columns(1, m).into_owned();
        let pv1 = pi.transpose() * &v1;

        // Mean function: α with c profiled out, then c by GLS.
        let v1y = v1.dot(y);
        let mut a = linalg::symmetrize(&(pi.transpose() * &vpi)) + &self.wkw * (n as f64 * self.xi);
        a.ger(-1.0 / s, &pv1, &pv1, 1.0);
        let rhs = vpi.transpose() * y - &pv1 * (v1y / s);
        let alpha = match linalg::cholesky(&linalg::symmetrize(&a), "mean system") {
            Ok(ch) => ch.solve(&rhs),
            Err(_) => a
                .clone()
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Singular("mean-function system is singular; increase xi".into()))?,
        };
        let c = (v1y - pv1.dot(&alpha)) / s;

        let mut r = y - pi * &alpha;
        r.add_scalar_mut(-c);
        let delta = super::beta_posterior_cov(pi, &p.sigma_beta, p.sigma2)?;
        let beta = &delta * (pi.transpose() * &r) / p.sigma2;

        let mut sigma_beta = linalg::symmetrize(&(&beta * beta.transpose() + &delta));
        if linalg::cholesky(&sigma_beta, "Sigma_beta").is_err() {
            let jitter = 1e-10 * sigma_beta.trace() / m as f64;
            log::warn!("Sigma_beta lost positive definiteness, adding jitter {jitter:.3e}");
            sigma_beta += DMatrix::identity(m, m) * jitter;
            self.jitter_events += 1;
        }

        let e = &r - pi * &beta;
        let mut sigma2 = p.sigma2 + (e.norm_squared() - p.sigma2 * p.sigma2 * trace_vinv) / n as f64;
        if !(sigma2 > SIGMA2_FLOOR) {
            log::warn!("noise variance update {sigma2:.3e} floored at {SIGMA2_FLOOR:e}");
            sigma2 = SIGMA2_FLOOR;
        }
        Ok(EmParams { sigma_beta, sigma2, alpha, c })
    }

    /// One EM iteration. Returns the change in the objective.
    pub fn step(&mut self) -> Result<f64> {
        let mut next = self.propose()?;
        let (mut l, mut f) = self.evaluate(&next)?;
        if f < self.objective {
            let mut held = next.clone();
            held.sigma2 = self.params.sigma2;
            let (lh, fh) = self.evaluate(&held)?;
            if fh > f {
                log::debug!("keeping previous noise variance ({f} -> {fh})");
                self.sigma2_holds += 1;
                next = held;
                l = lh;
                f = fh;
            }
        }
        if !f.is_finite() {
            return Err(Error::Numerical("log-likelihood is not finite".into()));
        }
        let change = f - self.objective;
        self.params = next;
        self.loglik = l;
        self.objective = f;
        Ok(change)
    }
}

/// Fit `Σ_β`, `σ²`, `α`, `c` by EM on the basis `W`, then store the posterior of `β`.
pub fn em_fit(k: &GramCache, y: &DVector<f64>, basis: &SdrBasis, cfg: &EmConfig) -> Result<(SigpModel, EmTrace)> {
    let (spec, x) = match (k.spec(), k.inputs()) {
        (Some(s), Some(x)) => (*s, x.clone()),
        _ => return Err(Error::Domain("Gram cache has no training inputs attached".into())),
    };
    let mut solver = EmSolver::new(k, y, &basis.w, cfg)?;
    let mut trace = EmTrace { loglik: vec![solver.loglik()], objective: vec![solver.objective()], ..Default::default() };
    for _ in 0..cfg.max_iter {
        let change = solver.step()?;
        trace.iterations += 1;
        trace.loglik.push(solver.loglik());
        trace.objective.push(solver.objective());
        if change.abs() < cfg.tol * (1.0 + solver.objective().abs()) {
            trace.converged = true;
            break;
        }
    }
    trace.sigma2_holds = solver.sigma2_holds;
    trace.jitter_events = solver.jitter_events;
    if !trace.converged {
        log::warn!("EM stopped after {} iterations without converging", trace.iterations);
    }

    let p = solver.params().clone();
    let (beta_mean, beta_cov) = posterior_beta_parts(solver.projection(), y, &p.sigma_beta, p.sigma2, &p.alpha, p.c)?;
    let model = SigpModel {
        kernel: spec,
        x_train: x,
        w: basis.w.clone(),
        sigma_beta: p.sigma_beta,
        sigma2: p.sigma2,
        alpha: p.alpha,
        c: p.c,
        train_k_row_means: k.row_means().clone(),
        beta_mean,
        beta_cov,
    };
    Ok((model, trace))
}
