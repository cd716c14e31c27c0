//! Kernels, Gram matrices, centering and the sample-level IGP covariance.

use std::f64::consts::PI;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, SymEig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelFamily {
    Rbf,
    Linear,
    BrownianBridge,
}

impl KernelFamily {
    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Rbf => "rbf",
            KernelFamily::Linear => "linear",
            KernelFamily::BrownianBridge => "brownian_bridge",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rbf" => Ok(KernelFamily::Rbf),
            "linear" => Ok(KernelFamily::Linear),
            "brownian_bridge" | "brownian-bridge" => Ok(KernelFamily::BrownianBridge),
            other => Err(Error::Domain(format!("unknown kernel '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    /// Only used by the RBF kernel.
    pub lengthscale: f64,
    pub variance_scale: f64,
}

impl KernelSpec {
    pub fn rbf(lengthscale: f64) -> Self {
        KernelSpec { family: KernelFamily::Rbf, lengthscale, variance_scale: 1.0 }
    }

    pub fn linear() -> Self {
        KernelSpec { family: KernelFamily::Linear, lengthscale: 1.0, variance_scale: 1.0 }
    }

    pub fn brownian_bridge() -> Self {
        KernelSpec { family: KernelFamily::BrownianBridge, lengthscale: 1.0, variance_scale: 1.0 }
    }

    pub fn with_variance(mut self, scale: f64) -> Self {
        self.variance_scale = scale;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.variance_scale > 0.0) || !self.variance_scale.is_finite() {
            return Err(Error::Domain(format!("variance scale must be positive, got {}", self.variance_scale)));
        }
        if self.family == KernelFamily::Rbf && (!(self.lengthscale > 0.0) || !self.lengthscale.is_finite()) {
            return Err(Error::Domain(format!("lengthscale must be positive, got {}", self.lengthscale)));
        }
        Ok(())
    }

    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        let v = match self.family {
            KernelFamily::Rbf => {
                let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * self.lengthscale * self.lengthscale)).exp()
            }
            KernelFamily::Linear => x.iter().zip(z).map(|(a, b)| a * b).sum(),
            KernelFamily::BrownianBridge => x[0].min(z[0]) - x[0] * z[0],
        };
        self.variance_scale * v
    }

    fn check_inputs(&self, x: &DMatrix<f64>) -> Result<()> {
        if self.family == KernelFamily::BrownianBridge {
            if x.ncols() != 1 {
                return Err(Error::Domain(format!(
                    "brownian bridge kernel needs scalar inputs, got {} columns",
                    x.ncols()
                )));
            }
            if let Some(v) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                return Err(Error::Domain(format!("brownian bridge input {v} outside [0, 1]")));
            }
        }
        Ok(())
    }
}

fn rows_of(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// `κ(X, Z)`, an `n×t` matrix. Columns are filled in parallel; every entry is computed
/// independently so the result does not depend on scheduling.
pub fn gram(spec: &KernelSpec, x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    spec.validate()?;
    if x.ncols() != z.ncols() {
        return Err(Error::Dimension(format!(
            "inputs have {} and {} columns",
            x.ncols(),
            z.ncols()
        )));
    }
    spec.check_inputs(x)?;
    spec.check_inputs(z)?;
    let n = x.nrows();
    let t = z.nrows();
    let xr = rows_of(x);
    let zr = rows_of(z);
    let mut out = DMatrix::zeros(n, t);
    if n == 0 {
        return Ok(out);
    }
    out.as_mut_slice().par_chunks_mut(n).enumerate().for_each(|(j, col)| {
        for (i, v) in col.iter_mut().enumerate() {
            let k = spec.eval(&xr[i], &zr[j]);
            *v = if k.abs() < 1e-300 { 0.0 } else { k };
        }
    });
    Ok(out)
}

/// Median pairwise Euclidean distance between rows (1 when undefined).
pub fn median_heuristic(x: &DMatrix<f64>) -> f64 {
    let rows = rows_of(x);
    let mut d: Vec<f64> = Vec::with_capacity(rows.len() * rows.len().saturating_sub(1) / 2);
    for i in 0..rows.len() {
        for j in (i + 1)..rows.len() {
            let s: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d.push(s.sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let med = if d.len() % 2 == 0 { 0.5 * (d[mid - 1] + d[mid]) } else { d[mid] };
    if med > 0.0 { med } else { 1.0 }
}

/// `Γ_n = I − 11ᵀ/n`.
pub fn centering_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n) - DMatrix::from_element(n, n, 1.0 / n as f64)
}

/// `Γ_n A`: subtract column means.
pub fn center_rows(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    let n = a.nrows() as f64;
    for mut col in out.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    out
}

/// `Γ_n A Γ_n`.
pub fn center_both(a: &DMatrix<f64>) -> DMatrix<f64> {
    let left = center_rows(a);
    center_rows(&left.transpose()).transpose()
}

/// Training Gram matrix with lazily computed eigendecomposition and centered form.
#[derive(Debug)]
pub struct GramCache {
    k: DMatrix<f64>,
    inputs: Option<(KernelSpec, DMatrix<f64>)>,
    row_means: DVector<f64>,
    eig: OnceLock<SymEig>,
    centered: OnceLock<DMatrix<f64>>,
}

impl GramCache {
    /// Build `K = κ(X, X)`.
    pub fn new(spec: KernelSpec, x: &DMatrix<f64>) -> Result<Self> {
        let k = linalg::symmetrize(&gram(&spec, x, x)?);
        let mut cache = Self::from_parts(k);
        cache.inputs = Some((spec, x.clone()));
        Ok(cache)
    }

    /// Wrap an explicit symmetric matrix; no inputs are attached so the cache cannot be used
    /// to train a predictive model.
    pub fn from_matrix(k: DMatrix<f64>) -> Result<Self> {
        if !k.is_square() {
            return Err(Error::Dimension(format!("Gram matrix is {}x{}", k.nrows(), k.ncols())));
        }
        let asym = linalg::asymmetry(&k);
        if !(asym <= 1e-10) {
            return Err(Error::NotSymmetric(asym));
        }
        Ok(Self::from_parts(linalg::symmetrize(&k)))
    }

    fn from_parts(k: DMatrix<f64>) -> Self {
        let n = k.nrows().max(1) as f64;
        let row_means = DVector::from_iterator(k.ncols(), k.column_iter().map(|c| c.sum() / n));
        GramCache { k, inputs: None, row_means, eig: OnceLock::new(), centered: OnceLock::new() }
    }

    pub fn k(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.k.trace()
    }

    pub fn spec(&self) -> Option<&KernelSpec> {
        self.inputs.as_ref().map(|(s, _)| s)
    }

    pub fn inputs(&self) -> Option<&DMatrix<f64>> {
        self.inputs.as_ref().map(|(_, x)| x)
    }

    /// `(1/n) Σ_i K_ij` for each `j`.
    pub fn row_means(&self) -> &DVector<f64> {
        &self.row_means
    }

    pub fn eig(&self) -> &SymEig {
        self.eig.get_or_init(|| linalg::sym_eig_unchecked(&self.k))
    }

    /// `Γ_n K`.
    pub fn centered(&self) -> &DMatrix<f64> {
        self.centered.get_or_init(|| center_rows(&self.k))
    }
}

/// Covariance `n^{−2p} K^p K_ν K^p` of the IGP evaluated at the training points.
pub fn igp_covariance(k: &GramCache, k_nu: &DMatrix<f64>, p: f64) -> Result<DMatrix<f64>> {
    let n = k.n();
    if k_nu.nrows() != n || k_nu.ncols() != n {
        return Err(Error::Dimension(format!(
            "K is {n}x{n} but K_nu is {}x{}",
            k_nu.nrows(),
            k_nu.ncols()
        )));
    }
    if !(0.5..=1.0).contains(&p) {
        return Err(Error::Domain(format!("power p = {p} outside [0.5, 1]")));
    }
    let kp = if p == 1.0 { k.k().clone() } else { linalg::psd_power(k.eig(), p)? };
    let scale = (n as f64).powf(-2.0 * p);
    Ok(linalg::symmetrize(&(&kp * k_nu * &kp)) * scale)
}

/// Eigenvalue `1/(π² j²)` and eigenfunction value `√2 sin(jπx)` of the Brownian bridge kernel
/// on `[0, 1]`.
pub fn brownian_bridge_eigensystem(j: usize, x: f64) -> Result<(f64, f64)> {
    if j < 1 {
        return Err(Error::Domain("eigen index starts at 1".into()));
    }
    let jf = j as f64;
    Ok((1.0 / (PI * PI * jf * jf), 2f64.sqrt() * (jf * PI * x).sin()))
}
