//! Per-iteration EM timing on the sinusoid problem.

use std::time::Instant;

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};

use crate::data_io::{self, synth_sinusoid};
use crate::error::{Error, Result};
use crate::kernels::{median_heuristic, GramCache, KernelSpec};
use crate::sigp::{EmConfig, EmSolver};

pub const DEFAULT_SIZES: [usize; 3] = [500, 1000, 2000];
pub const CSV_HEADER: &str = "n,m,iterations,seconds_per_iteration";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub m: usize,
    pub iterations: usize,
    /// Median wall time of one EM step.
    pub seconds_per_iteration: f64,
}

/// Time `iterations` EM steps at size `n` and rank `m`. The basis is a seeded Gaussian
/// `n × m` matrix, so the measurement covers the EM step alone.
pub fn bench_em(n: usize, m: usize, iterations: usize, seed: u64) -> Result<BenchRow> {
    if iterations == 0 || m == 0 || m >= n {
        return Err(Error::Domain(format!("need iterations ≥ 1 and 1 ≤ m < n, got n={n} m={m} iterations={iterations}")));
    }
    let ds = synth_sinusoid(n, &[(-6.0, -2.0), (1.0, 5.0)], 0.01, seed)?;
    let k = GramCache::new(KernelSpec::rbf(median_heuristic(&ds.x)), &ds.x)?;
    let mut r = data_io::rng(seed.wrapping_add(1));
    let w = DMatrix::from_fn(n, m, |_, _| StandardNormal.sample(&mut r)) / (n as f64).sqrt();
    let cfg = EmConfig { max_iter: iterations + 1, ..Default::default() };
    let mut solver = EmSolver::new(&k, &ds.y, &w, &cfg)?;
    solver.step()?;
    let mut times = Vec::with_capacity(iterations);
    for _ in 0..iterations {
        let t = Instant::now();
        solver.step()?;
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(BenchRow { n, m, iterations, seconds_per_iteration: times[times.len() / 2] })
}

pub fn bench_sizes(sizes: &[usize], m: usize, iterations: usize, seed: u64) -> Result<Vec<BenchRow>> {
    sizes.iter().map(|&n| bench_em(n, m, iterations, seed)).collect()
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut s = format!("{CSV_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{:.6e}\n", r.n, r.m, r.iterations, r.seconds_per_iteration));
    }
    s
}

/// Ratios of consecutive per-iteration times.
pub fn growth_ratios(rows: &[BenchRow]) -> Vec<f64> {
    rows.windows(2).map(|w| w[1].seconds_per_iteration / w[0].seconds_per_iteration).collect()
}
