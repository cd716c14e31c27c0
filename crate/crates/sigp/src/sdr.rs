//! Sufficient dimension reduction in the RKHS: slicing, the within/total covariance pencil,
//! basis estimation, its log-likelihood and the rank diagnostic.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::kernels::{self, GramCache, KernelSpec};
use crate::linalg;

/// Eigenvalues of `M` below this fraction of the largest are treated as zero.
pub const RANGE_CUTOFF: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdrMethod {
    Sliced,
    ResponseKernel,
    /// Basis estimated from caller-supplied `(M, N)`.
    Explicit,
}

impl SdrMethod {
    pub fn name(self) -> &'static str {
        match self {
            SdrMethod::Sliced => "sliced",
            SdrMethod::ResponseKernel => "ykernel",
            SdrMethod::Explicit => "explicit",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sliced" => Ok(SdrMethod::Sliced),
            "ykernel" | "response_kernel" => Ok(SdrMethod::ResponseKernel),
            other => Err(Error::Domain(format!("unknown SDR method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlicePlan {
    /// `ordering[r]` is the original index of the point with response rank `r`.
    pub ordering: Vec<usize>,
    /// Ranges into `ordering`.
    pub boundaries: Vec<Range<usize>>,
    pub sizes: Vec<usize>,
}

impl SlicePlan {
    pub fn n(&self) -> usize {
        self.ordering.len()
    }

    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Original indices belonging to each slice.
    pub fn members(&self) -> impl Iterator<Item = &[usize]> {
        self.boundaries.iter().map(|r| &self.ordering[r.clone()])
    }

    /// One slice per distinct response value, for class labels.
    pub fn from_labels(y: &DVector<f64>) -> Result<Self> {
        let ordering = sorted_order(y)?;
        let mut boundaries = Vec::new();
        let mut start = 0;
        for r in 1..=ordering.len() {
            if r == ordering.len() || y[ordering[r]] != y[ordering[start]] {
                boundaries.push(start..r);
                start = r;
            }
        }
        let sizes = boundaries.iter().map(|b| b.len()).collect();
        Ok(SlicePlan { ordering, boundaries, sizes })
    }
}

fn sorted_order(y: &DVector<f64>) -> Result<Vec<usize>> {
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("response contains non-finite values".into()));
    }
    let mut ordering: Vec<usize> = (0..y.len()).collect();
    ordering.sort_by(|&a, &b| y[a].total_cmp(&y[b]));
    Ok(ordering)
}

/// Sort by response (stable) and cut into `s` slices whose sizes differ by at most one,
/// larger slices first. `s = 1` is accepted.
pub fn make_slices(y: &DVector<f64>, s: usize) -> Result<SlicePlan> {
    let n = y.len();
    if s == 0 || s > n {
        return Err(Error::Domain(format!("cannot cut {n} points into {s} slices")));
    }
    let ordering = sorted_order(y)?;
    let base = n / s;
    let extra = n % s;
    let sizes: Vec<usize> = (0..s).map(|i| base + usize::from(i < extra)).collect();
    let mut boundaries = Vec::with_capacity(s);
    let mut start = 0;
    for &size in &sizes {
        boundaries.push(start..start + size);
        start += size;
    }
    Ok(SlicePlan { ordering, boundaries, sizes })
}

/// Default slice count for a regression basis of rank `m`.
pub fn default_slices(m: usize) -> usize {
    (m + 2).max(10)
}

/// `1e-4 · tr(K) / n`.
pub fn default_zeta(k: &DMatrix<f64>) -> f64 {
    1e-4 * k.trace() / k.nrows().max(1) as f64
}

fn check_zeta(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0) || !v.is_finite() {
        return Err(Error::Domain(format!("{name} must be positive, got {v}")));
    }
    Ok(())
}

/// `K²` and the column sums `K 1`.
fn k_squared(k: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::symmetrize(&(k * k))
}

fn subtract_outer(target: &mut DMatrix<f64>, v: &DVector<f64>, scale: f64) {
    target.ger(-scale, v, v, 1.0);
}

/// `M = K·diag(Γ_{n_i})·K + nζK` and `N = K Γ_n K`, assembled in the original index order
/// (equivalent to permuting into slice order, assembling, and permuting back).
pub fn sdr_matrices_sliced(k: &GramCache, plan: &SlicePlan, zeta: f64) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_zeta("zeta", zeta)?;
    let n = k.n();
    if plan.n() != n {
        return Err(Error::Dimension(format!("slice plan covers {} points but K is {n}x{n}", plan.n())));
    }
    let km = k.k();
    let k2 = k_squared(km);
    let total = DVector::from_iterator(n, km.column_iter().map(|c| c.sum()));
    let mut nn = k2.clone();
    subtract_outer(&mut nn, &total, 1.0 / n as f64);
    let mut mm = k2;
    for members in plan.members() {
        let mut v = DVector::zeros(n);
        for &i in members {
            v += km.column(i);
        }
        subtract_outer(&mut mm, &v, 1.0 / members.len() as f64);
    }
    mm += km * (n as f64 * zeta);
    Ok((linalg::symmetrize(&mm), linalg::symmetrize(&nn)))
}

/// Response Gram matrix: RBF on the standardized response with median-heuristic lengthscale.
pub fn response_gram(y: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = y.len() as f64;
    let mean = y.mean();
    let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if sd > 0.0 { sd } else { 1.0 };
    let z = DMatrix::from_iterator(y.len(), 1, y.iter().map(|v| (v - mean) / scale));
    let l = kernels::median_heuristic(&z);
    kernels::gram(&KernelSpec::rbf(l), &z, &z)
}

/// `M = K[Γ_n − (K̄_Y + nζ₁I)⁻¹K̄_Y]K + nζK` with `K̄_Y = Γ_n K_Y Γ_n`, and `N = K Γ_n K`.
pub fn sdr_matrices_response_kernel(
    k: &GramCache,
    ky: &DMatrix<f64>,
    zeta: f64,
    zeta1: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_zeta("zeta", zeta)?;
    check_zeta("zeta1", zeta1)?;
    let n = k.n();
    if ky.nrows() != n || ky.ncols() != n {
        return Err(Error::Dimension(format!(
            "K is {n}x{n} but K_Y is {}x{}",
            ky.nrows(),
            ky.ncols()
        )));
    }
    let kbar = linalg::symmetrize(&kernels::center_both(ky));
    let reg = &kbar + DMatrix::identity(n, n) * (n as f64 * zeta1);
    let chol = nalgebra::Cholesky::new(reg).ok_or_else(|| {
        Error::Singular("centered response Gram plus n*zeta1*I is not positive definite; increase zeta1".into())
    })?;
    let r = linalg::symmetrize(&chol.solve(&kbar));
    let inner = kernels::centering_matrix(n) - r;
    let km = k.k();
    let mut mm = km * inner * km;
    mm += km * (n as f64 * zeta);
    let nn = linalg::symmetrize(&(km * kernels::center_rows(km)));
    Ok((linalg::symmetrize(&mm), nn))
}

#[derive(Debug, Clone)]
pub struct SdrBasis {
    /// Coefficients `W` (`n×m`) of the basis functions `Σ_i W_ij κ(·, x_i)`.
    pub w: DMatrix<f64>,
    /// Reported eigenvalues `τ = 1 − 1/τ'` in `[0, 1)`, descending.
    pub tau: DVector<f64>,
    /// Raw eigenvalues `τ'` of `N w = τ' M w`.
    pub tau_raw: DVector<f64>,
    /// Every reported eigenvalue on the numerical range of `M`, descending.
    pub spectrum: Vec<f64>,
    pub method: SdrMethod,
    pub zeta: f64,
    pub zeta1: Option<f64>,
    pub slice_sizes: Vec<usize>,
}

impl SdrBasis {
    pub fn rank(&self) -> usize {
        self.w.ncols()
    }
}

fn report_scale(raw: f64) -> f64 {
    if raw > 1.0 { (1.0 - 1.0 / raw).min(1.0 - f64::EPSILON) } else { 0.0 }
}

/// Top-`m` generalized eigenvectors of `N w = τ' M w`, the maximizer of `g(W)`.
/// The problem is solved on the numerical range of `M`.
pub fn estimate_basis(m_mat: &DMatrix<f64>, n_mat: &DMatrix<f64>, m: usize) -> Result<SdrBasis> {
    if m == 0 {
        return Err(Error::Domain("rank must be at least 1".into()));
    }
    let sol = linalg::gen_eig_on_range(n_mat, m_mat, RANGE_CUTOFF)?;
    let top = sol.values.iter().copied().fold(0.0f64, f64::max);
    let detected = sol.values.iter().filter(|&&v| v > RANGE_CUTOFF * top && top > 0.0).count();
    if m > detected {
        return Err(Error::Rank { requested: m, detected });
    }
    let tau_raw = sol.values.rows(0, m).into_owned();
    let tau = tau_raw.map(report_scale);
    let spectrum = sol.values.iter().map(|&v| report_scale(v)).collect();
    Ok(SdrBasis {
        w: sol.vectors.columns(0, m).into_owned(),
        tau,
        tau_raw,
        spectrum,
        method: SdrMethod::Explicit,
        zeta: 0.0,
        zeta1: None,
        slice_sizes: Vec::new(),
    })
}

/// Sliced basis for a real response.
pub fn sliced_basis(k: &GramCache, y: &DVector<f64>, slices: usize, zeta: f64, m: usize) -> Result<SdrBasis> {
    let plan = make_slices(y, slices)?;
    basis_from_plan(k, &plan, zeta, m)
}

/// Sliced basis with one slice per class label.
pub fn label_basis(k: &GramCache, labels: &DVector<f64>, zeta: f64, m: usize) -> Result<SdrBasis> {
    let plan = SlicePlan::from_labels(labels)?;
    basis_from_plan(k, &plan, zeta, m)
}

pub fn basis_from_plan(k: &GramCache, plan: &SlicePlan, zeta: f64, m: usize) -> Result<SdrBasis> {
    let (mm, nn) = sdr_matrices_sliced(k, plan, zeta)?;
    let mut basis = estimate_basis(&mm, &nn, m)?;
    basis.method = SdrMethod::Sliced;
    basis.zeta = zeta;
    basis.slice_sizes = plan.sizes.clone();
    Ok(basis)
}

/// Slicing-free basis from a response kernel.
pub fn response_kernel_basis(
    k: &GramCache,
    y: &DVector<f64>,
    zeta: f64,
    zeta1: Option<f64>,
    m: usize,
) -> Result<SdrBasis> {
    let ky = response_gram(y)?;
    let zeta1 = zeta1.unwrap_or_else(|| default_zeta(&ky));
    let (mm, nn) = sdr_matrices_response_kernel(k, &ky, zeta, zeta1)?;
    let mut basis = estimate_basis(&mm, &nn, m)?;
    basis.method = SdrMethod::ResponseKernel;
    basis.zeta = zeta;
    basis.zeta1 = Some(zeta1);
    Ok(basis)
}

/// `g(W) = −(n/2) log[det(WᵀMW) / det(WᵀNW)]`.
pub fn sdr_loglik(w: &DMatrix<f64>, m_mat: &DMatrix<f64>, n_mat: &DMatrix<f64>) -> Result<f64> {
    let n = m_mat.nrows();
    if w.nrows() != n || n_mat.nrows() != n {
        return Err(Error::Dimension(format!(
            "W has {} rows, M is {n}x{n}, N has {} rows",
            w.nrows(),
            n_mat.nrows()
        )));
    }
    let a = linalg::symmetrize(&(w.transpose() * m_mat * w));
    let b = linalg::symmetrize(&(w.transpose() * n_mat * w));
    let la = linalg::log_det_spd(&a).map_err(|_| Error::Singular("WᵀMW is singular".into()))?;
    let lb = linalg::log_det_spd(&b).map_err(|_| Error::Singular("WᵀNW is singular".into()))?;
    Ok(-0.5 * n as f64 * (la - lb))
}

/// Lower bound `1/n − sqrt(8/n³ · ln(2/δ))` on the smallest nonzero eigenvalue at the true rank.
pub fn rank_bound(n: usize, delta: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("n must be positive".into()));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta = {delta} outside (0, 1)")));
    }
    let nf = n as f64;
    Ok(1.0 / nf - (8.0 / nf.powi(3) * (2.0 / delta).ln()).sqrt())
}

/// Number of spectrum values above `rank_bound(n, delta)`.
pub fn suggest_rank(spectrum: &[f64], n: usize, delta: f64) -> Result<usize> {
    let bound = rank_bound(n, delta)?;
    Ok(spectrum.iter().filter(|&&t| t > bound).count())
}
