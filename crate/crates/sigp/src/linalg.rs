//! Dense symmetric linear algebra: eigendecomposition, generalized eigenproblems,
//! matrix powers and the Woodbury inverse of a low-rank-plus-diagonal covariance.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-10;
const PSD_CLAMP: f64 = 1e-10;

/// Eigendecomposition `A = U diag(values) Uᵀ` with values sorted non-increasing.
#[derive(Debug, Clone)]
pub struct SymEig {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl SymEig {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `U f(D) Uᵀ`.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut scaled = self.vectors.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.values[j]);
        }
        symmetrize(&(scaled * self.vectors.transpose()))
    }

    pub fn reconstruct(&self) -> DMatrix<f64> {
        self.map(|v| v)
    }
}

/// Top generalized eigenpairs of `B w = τ A w`.
#[derive(Debug, Clone)]
pub struct GenEigBasis {
    pub vectors: DMatrix<f64>,
    pub values: DVector<f64>,
}

pub fn frobenius(a: &DMatrix<f64>) -> f64 {
    a.norm()
}

/// `‖A − Aᵀ‖_F / ‖A‖_F` (zero for the zero matrix).
pub fn asymmetry(a: &DMatrix<f64>) -> f64 {
    let norm = a.norm();
    if norm == 0.0 {
        return 0.0;
    }
    (a - a.transpose()).norm() / norm
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

fn check_symmetric(a: &DMatrix<f64>, what: &str) -> Result<()> {
    if !a.is_square() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let asym = asymmetry(a);
    if !asym.is_finite() || asym > SYMMETRY_TOL {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(())
}

/// Flip each column so its largest-magnitude entry is positive.
fn fix_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &v in col.iter() {
            if v.abs() > best {
                best = v.abs();
                sign = v.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

pub(crate) fn sym_eig_unchecked(a: &DMatrix<f64>) -> SymEig {
    let n = a.nrows();
    let eig = symmetrize(a).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    fix_signs(&mut vectors);
    SymEig { values, vectors }
}

pub fn sym_eig(a: &DMatrix<f64>) -> Result<SymEig> {
    check_symmetric(a, "matrix")?;
    Ok(sym_eig_unchecked(a))
}

/// `A^p` for symmetric PSD `A` and `p ∈ [0.5, 1]`.
pub fn matrix_power(a: &DMatrix<f64>, p: f64) -> Result<DMatrix<f64>> {
    if !(0.5..=1.0).contains(&p) {
        return Err(Error::Domain(format!("power p = {p} outside [0.5, 1]")));
    }
    check_symmetric(a, "matrix")?;
    if p == 1.0 {
        return Ok(symmetrize(a));
    }
    psd_power(&sym_eig_unchecked(a), p)
}

/// `U D^p Uᵀ` with eigenvalues in `[-1e-10 λ_max, 0)` clamped to zero.
pub(crate) fn psd_power(eig: &SymEig, p: f64) -> Result<DMatrix<f64>> {
    let lmax = eig.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if let Some(&low) = eig.values.iter().last() {
        if low < -PSD_CLAMP * lmax {
            return Err(Error::Domain(format!(
                "matrix is not positive semidefinite (eigenvalue {low:.3e}, largest {lmax:.3e})"
            )));
        }
    }
    Ok(eig.map(|v| if v > 0.0 { v.powf(p) } else { 0.0 }))
}

/// Generalized eigenpairs over the eigenvectors of `A` kept by `keep`, by whitening with `A^{-1/2}`.
fn whitened_eig(b: &DMatrix<f64>, a_eig: &SymEig, keep: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = a_eig.len();
    let mut vr = a_eig.vectors.columns(0, keep).into_owned();
    for j in 0..keep {
        let s = a_eig.values[j].sqrt();
        vr.column_mut(j).unscale_mut(s);
    }
    let c = vr.transpose() * b * &vr;
    let inner = sym_eig_unchecked(&c);
    let mut vectors = vr * inner.vectors;
    fix_signs(&mut vectors);
    debug_assert_eq!(vectors.nrows(), n);
    (inner.values, vectors)
}

/// Top `m` generalized eigenpairs of `B w = τ A w` for symmetric `B` and symmetric positive
/// definite `A`. Vectors are `A`-orthonormal.
pub fn gen_eig_top(b: &DMatrix<f64>, a: &DMatrix<f64>, m: usize) -> Result<GenEigBasis> {
    check_symmetric(a, "A")?;
    check_symmetric(b, "B")?;
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::Dimension(format!("A is {n}x{n} but B is {}x{}", b.nrows(), b.ncols())));
    }
    if m == 0 || m > n {
        return Err(Error::Domain(format!("requested {m} eigenpairs of a {n}x{n} problem")));
    }
    let a_eig = sym_eig_unchecked(a);
    let lmax = a_eig.values[0];
    let lmin = a_eig.values[n - 1];
    if !(lmax > 0.0) || lmin <= n as f64 * f64::EPSILON * lmax {
        return Err(Error::Singular(format!(
            "A is not positive definite (eigenvalues in [{lmin:.3e}, {lmax:.3e}]); increase the regularizer zeta"
        )));
    }
    let (values, vectors) = whitened_eig(b, &a_eig, n);
    Ok(GenEigBasis {
        vectors: vectors.columns(0, m).into_owned(),
        values: values.rows(0, m).into_owned(),
    })
}

/// Generalized eigenproblem restricted to the numerical range of a PSD `A`.
#[derive(Debug, Clone)]
pub struct RangeGenEig {
    /// All generalized eigenvalues on the range, descending.
    pub values: DVector<f64>,
    /// Matching `A`-orthonormal vectors.
    pub vectors: DMatrix<f64>,
    /// Number of eigenvalues of `A` above the cutoff.
    pub range_rank: usize,
}

/// Solve `B w = τ A w` on the span of eigenvectors of `A` whose eigenvalue exceeds
/// `rel_cutoff · λ_max(A)`. Directions outside that span carry no information in finite precision.
pub fn gen_eig_on_range(b: &DMatrix<f64>, a: &DMatrix<f64>, rel_cutoff: f64) -> Result<RangeGenEig> {
    check_symmetric(a, "A")?;
    check_symmetric(b, "B")?;
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::Dimension(format!("A is {n}x{n} but B is {}x{}", b.nrows(), b.ncols())));
    }
    if n == 0 {
        return Err(Error::Dimension("empty matrix".into()));
    }
    let a_eig = sym_eig_unchecked(a);
    let lmax = a_eig.values[0];
    if !(lmax > 0.0) {
        return Err(Error::Singular("A has no positive eigenvalues".into()));
    }
    let keep = a_eig.values.iter().take_while(|&&v| v > rel_cutoff * lmax).count();
    let (values, vectors) = whitened_eig(b, &a_eig, keep);
    Ok(RangeGenEig { values, vectors, range_rank: keep })
}

/// Columns spanning the minimizer of `det(SᵀMS) / det(SᵀNS)` over full-rank `n×m` matrices `S`,
/// i.e. the top-`m` eigenspace of `M⁻¹N`. The result is `M`-orthonormal.
pub fn det_quotient_argmin(m_mat: &DMatrix<f64>, n_mat: &DMatrix<f64>, m: usize) -> Result<DMatrix<f64>> {
    Ok(gen_eig_top(n_mat, m_mat, m)?.vectors)
}

/// `det(SᵀMS) / det(SᵀNS)`.
pub fn det_quotient(s: &DMatrix<f64>, m_mat: &DMatrix<f64>, n_mat: &DMatrix<f64>) -> Result<f64> {
    let num = log_det_spd(&symmetrize(&(s.transpose() * m_mat * s)))?;
    let den = log_det_spd(&symmetrize(&(s.transpose() * n_mat * s)))?;
    Ok((num - den).exp())
}

pub fn cholesky(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    Cholesky::new(a.clone()).ok_or_else(|| Error::Singular(format!("{what} is not positive definite")))
}

pub fn log_det_spd(a: &DMatrix<f64>) -> Result<f64> {
    let chol = cholesky(a, "matrix")?;
    Ok(2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>())
}

pub fn spd_inverse(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Ok(symmetrize(&cholesky(a, what)?.inverse()))
}

/// `V⁻¹` for `V = Π Σ_β Πᵀ + σ² I`, applied through the Woodbury identity
/// `V⁻¹ = σ⁻²[I − Π(σ² Σ_β⁻¹ + ΠᵀΠ)⁻¹ Πᵀ]`.
#[derive(Debug, Clone)]
pub struct WoodburyInverse {
    sigma2: f64,
    pi: DMatrix<f64>,
    core: DMatrix<f64>,
    log_det_v: f64,
}

pub fn woodbury_inverse(sigma2: f64, pi: &DMatrix<f64>, sigma_beta: &DMatrix<f64>) -> Result<WoodburyInverse> {
    if !(sigma2 > 0.0) || !sigma2.is_finite() {
        return Err(Error::Domain(format!("noise variance must be positive, got {sigma2}")));
    }
    let m = pi.ncols();
    if sigma_beta.nrows() != m || sigma_beta.ncols() != m {
        return Err(Error::Dimension(format!(
            "Pi has {m} columns but Sigma_beta is {}x{}",
            sigma_beta.nrows(),
            sigma_beta.ncols()
        )));
    }
    let n = pi.nrows();
    let sb_chol = cholesky(&symmetrize(sigma_beta), "Sigma_beta")?;
    let sb_inv = sb_chol.inverse();
    let log_det_sb = 2.0 * sb_chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let inner = symmetrize(&(sb_inv * sigma2 + pi.transpose() * pi));
    let inner_chol = cholesky(&inner, "Woodbury core")?;
    let log_det_inner = 2.0 * inner_chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let core = symmetrize(&inner_chol.inverse());
    let log_det_v = (n as f64 - m as f64) * sigma2.ln() + log_det_sb + log_det_inner;
    Ok(WoodburyInverse { sigma2, pi: pi.clone(), core, log_det_v })
}

impl WoodburyInverse {
    pub fn dim(&self) -> usize {
        self.pi.nrows()
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    /// `(σ² Σ_β⁻¹ + ΠᵀΠ)⁻¹`.
    pub fn core(&self) -> &DMatrix<f64> {
        &self.core
    }

    /// `log det V` by the matrix determinant lemma.
    pub fn log_det_v(&self) -> f64 {
        self.log_det_v
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let t = &self.core * (self.pi.transpose() * v);
        (v - &self.pi * t) / self.sigma2
    }

    pub fn apply_matrix(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        let t = &self.core * (self.pi.transpose() * b);
        (b - &self.pi * t) / self.sigma2
    }

    /// `vᵀ V⁻¹ v`.
    pub fn quad_form(&self, v: &DVector<f64>) -> f64 {
        let p = self.pi.transpose() * v;
        (v.norm_squared() - p.dot(&(&self.core * &p))) / self.sigma2
    }

    /// `V⁻¹B` and `tr V⁻¹`, built from explicit row blocks of `V⁻¹` in `O(n²(m + k))` for a
    /// `n×k` right-hand side. Only one block of rows is held at a time.
    pub fn dense_apply(&self, b: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
        const BLOCK: usize = 64;
        let n = self.dim();
        let t = &self.pi * &self.core;
        let pit = self.pi.transpose();
        let inv_s2 = 1.0 / self.sigma2;
        let mut out = DMatrix::zeros(n, b.ncols());
        let mut buf = DMatrix::zeros(BLOCK.min(n), n);
        let mut trace = 0.0;
        let mut r0 = 0;
        while r0 < n {
            let len = BLOCK.min(n - r0);
            let mut rows = buf.rows_mut(0, len);
            rows.gemm(-inv_s2, &t.rows(r0, len), &pit, 0.0);
            for i in 0..len {
                rows[(i, r0 + i)] += inv_s2;
                trace += rows[(i, r0 + i)];
            }
            out.rows_mut(r0, len).gemm(1.0, &rows, b, 0.0);
            r0 += len;
        }
        (out, trace)
    }

    /// Materialize `V⁻¹` as a dense `n×n` matrix in `O(n² m)`.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let t = &self.pi * &self.core;
        let mut out = DMatrix::identity(n, n);
        out.gemm(-1.0, &t, &self.pi.transpose(), 1.0);
        out /= self.sigma2;
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_sym(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        symmetrize(&a)
    }

    fn random_pd(n: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(n, n) * 0.5
    }

    #[test]
    fn identity_eigenvalues() {
        let e = sym_eig(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(e.values.as_slice(), &[1.0, 1.0, 1.0]);
    }

    #[test]
    fn diagonal_eigenpairs() {
        let e = sym_eig(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0]))).unwrap();
        assert_eq!(e.values.as_slice(), &[3.0, 1.0]);
        assert!((e.vectors.column(0) - DVector::from_vec(vec![0.0, 1.0])).norm() < 1e-15);
        assert!((e.vectors.column(1) - DVector::from_vec(vec![1.0, 0.0])).norm() < 1e-15);
    }

    #[test]
    fn random_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_sym(5, &mut rng);
        let e = sym_eig(&a).unwrap();
        let recon = &e.vectors * DMatrix::from_diagonal(&e.values) * e.vectors.transpose();
        assert!((recon - &a).norm() <= 1e-10 * a.norm());
        let gram = e.vectors.transpose() * &e.vectors;
        assert!((gram - DMatrix::identity(5, 5)).norm() <= 1e-10);
        assert!(e.values.as_slice().windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn sign_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let e = sym_eig(&random_sym(6, &mut rng)).unwrap();
        for col in e.vectors.column_iter() {
            let (imax, _) = col.iter().enumerate().fold((0, 0.0f64), |acc, (i, v)| {
                if v.abs() > acc.1 { (i, v.abs()) } else { acc }
            });
            assert!(col[imax] > 0.0);
        }
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(sym_eig(&DMatrix::zeros(2, 3)), Err(Error::Dimension(_))));
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(sym_eig(&a), Err(Error::NotSymmetric(_))));
    }

    #[test]
    fn powers() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]));
        assert_eq!(matrix_power(&a, 1.0).unwrap(), a);
        let h = matrix_power(&a, 0.5).unwrap();
        assert!((h - DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]))).norm() < 1e-14);
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((matrix_power(&i, 0.5).unwrap() - &i).norm() < 1e-14);
        assert!(matches!(matrix_power(&a, 0.4), Err(Error::Domain(_))));
        assert!(matches!(matrix_power(&a, 1.1), Err(Error::Domain(_))));
        let neg = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]));
        assert!(matches!(matrix_power(&neg, 0.5), Err(Error::Domain(_))));
    }

    #[test]
    fn gen_eig_diagonal() {
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0]));
        let g = gen_eig_top(&b, &DMatrix::identity(2, 2), 1).unwrap();
        assert!((g.values[0] - 2.0).abs() < 1e-14);
        assert!((g.vectors.column(0) - DVector::from_vec(vec![1.0, 0.0])).norm() < 1e-14);
    }

    #[test]
    fn gen_eig_same_pencil() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = random_pd(5, &mut rng);
        let g = gen_eig_top(&b, &b, 5).unwrap();
        assert!(g.values.iter().all(|v| (v - 1.0).abs() < 1e-10));
    }

    #[test]
    fn gen_eig_residual() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_pd(6, &mut rng);
        let b = random_sym(6, &mut rng);
        let g = gen_eig_top(&b, &a, 3).unwrap();
        let scale = b.norm() + a.norm();
        for i in 0..3 {
            let w = g.vectors.column(i);
            let r = &b * w - &a * w * g.values[i];
            assert!(r.norm() <= 1e-8 * scale);
        }
    }

    #[test]
    fn gen_eig_rejects_singular() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 0.0]));
        let err = gen_eig_top(&DMatrix::identity(2, 2), &a, 1).unwrap_err();
        assert!(matches!(err, Error::Singular(ref msg) if msg.contains("zeta")));
    }

    #[test]
    fn range_restricted_pencil() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 1.0, 0.0]));
        let b = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 3.0, 5.0]));
        let r = gen_eig_on_range(&b, &a, 1e-10).unwrap();
        assert_eq!(r.range_rank, 2);
        assert!((r.values[0] - 3.0).abs() < 1e-14);
        assert!((r.values[1] - 0.5).abs() < 1e-14);
        assert_eq!(r.vectors[(2, 0)], 0.0);
    }

    #[test]
    fn det_quotient_diagonal() {
        let n = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0]));
        let s = det_quotient_argmin(&DMatrix::identity(2, 2), &n, 1).unwrap();
        assert!(s[(1, 0)].abs() < 1e-14);
        let q = det_quotient(&s, &DMatrix::identity(2, 2), &n).unwrap();
        assert!((q - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn det_quotient_equal_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = random_pd(4, &mut rng);
        let s = det_quotient_argmin(&n, &n, 2).unwrap();
        assert!((det_quotient(&s, &n, &n).unwrap() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn det_quotient_beats_random_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let m = random_pd(5, &mut rng);
        let n = random_pd(5, &mut rng);
        let s = det_quotient_argmin(&m, &n, 2).unwrap();
        let best = det_quotient(&s, &m, &n).unwrap();
        for _ in 0..1000 {
            let r = DMatrix::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
            assert!(best <= det_quotient(&r, &m, &n).unwrap() + 1e-9);
        }
    }

    #[test]
    fn woodbury_trivial_cases() {
        let w = woodbury_inverse(2.0, &DMatrix::zeros(4, 2), &DMatrix::identity(2, 2)).unwrap();
        assert!((w.to_dense() - DMatrix::identity(4, 4) * 0.5).norm() < 1e-15);

        let sigma2 = 0.3;
        let w = woodbury_inverse(sigma2, &DMatrix::identity(3, 3), &DMatrix::identity(3, 3)).unwrap();
        let expect = DMatrix::identity(3, 3) / (1.0 + sigma2);
        assert!((w.to_dense() - expect).norm() < 1e-14);

        assert!(matches!(
            woodbury_inverse(0.0, &DMatrix::zeros(2, 1), &DMatrix::identity(1, 1)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn woodbury_matches_dense_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pi = DMatrix::from_fn(20, 2, |_, _| rng.random_range(-1.0..1.0));
        let sb = random_pd(2, &mut rng);
        let sigma2 = 0.2;
        let v = &pi * &sb * pi.transpose() + DMatrix::identity(20, 20) * sigma2;
        let dense = v.clone().try_inverse().unwrap();
        let w = woodbury_inverse(sigma2, &pi, &sb).unwrap();
        assert!((w.to_dense() - &dense).norm() <= 1e-8 * dense.norm());
        let x = DVector::from_fn(20, |i, _| i as f64 - 3.0);
        assert!((w.apply(&x) - &dense * &x).norm() <= 1e-8 * (&dense * &x).norm());
        assert!((w.quad_form(&x) - x.dot(&(&dense * &x))).abs() <= 1e-8 * x.dot(&(&dense * &x)));
        let ld = v.cholesky().unwrap().l().diagonal().iter().map(|d| 2.0 * d.ln()).sum::<f64>();
        assert!((w.log_det_v() - ld).abs() < 1e-9);
    }
}
