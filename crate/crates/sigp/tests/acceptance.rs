//! Acceptance suite. Runs each criterion at its stated tolerance and prints one PASS/FAIL
//! line per criterion; exits non-zero if any fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use sigp::baseline_gp::LinearRegression;
use sigp::data_io::{self, load_csv, rng, synth_four_class, synth_sinusoid, CsvOptions};
use sigp::eval;
use sigp::kernels::{self, gram, igp_covariance, median_heuristic, GramCache, KernelSpec};
use sigp::linalg::woodbury_inverse;
use sigp::pipeline::{self, LengthscaleChoice, ModelKind, TrainConfig};
use sigp::sdr::{self, estimate_basis, make_slices, sdr_loglik, sdr_matrices_sliced};
use sigp::sigp::{EmConfig, EmSolver, SigpModel};

type Check = std::result::Result<String, String>;

fn normal_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(r))
}

fn gauss(r: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(r)
}

fn normal_vector(r: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| StandardNormal.sample(r))
}

fn random_spd(r: &mut ChaCha8Rng, m: usize) -> DMatrix<f64> {
    let a = normal_matrix(r, m, m);
    &a * a.transpose() + DMatrix::identity(m, m) * 0.1
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}

fn dense_inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.clone().try_inverse().expect("test matrix is invertible")
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok { Ok(()) } else { Err(msg()) }
}

fn lib<T>(r: sigp::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

/// Random SIGP model with its Gram cache and training targets.
fn random_model(r: &mut ChaCha8Rng, n: usize, m: usize) -> (SigpModel, GramCache, DVector<f64>) {
    let x = normal_matrix(r, n, 2);
    let spec = KernelSpec::rbf(1.0 + r.random::<f64>());
    let k = GramCache::new(spec, &x).unwrap();
    let y = normal_vector(r, n);
    let mut model = SigpModel {
        kernel: spec,
        x_train: x,
        w: normal_matrix(r, n, m),
        sigma_beta: random_spd(r, m),
        sigma2: 0.05 + r.random::<f64>(),
        alpha: normal_vector(r, m),
        c: StandardNormal.sample(r),
        train_k_row_means: k.row_means().clone(),
        beta_mean: DVector::zeros(m),
        beta_cov: DMatrix::zeros(m, m),
    };
    model.refresh_posterior(&k, &y).unwrap();
    (model, k, y)
}

fn criterion_1() -> Check {
    let mut r = rng(101);
    let mut worst_wb: f64 = 0.0;
    for _ in 0..100 {
        let n = r.random_range(2..=50);
        let m = r.random_range(1..=n.min(6));
        let pi = normal_matrix(&mut r, n, m);
        let sb = random_spd(&mut r, m);
        let s2 = 0.01 + r.random::<f64>();
        let v = &pi * &sb * pi.transpose() + DMatrix::identity(n, n) * s2;
        let dense = dense_inverse(&v);
        let wb = lib(woodbury_inverse(s2, &pi, &sb))?;
        worst_wb = worst_wb.max(rel_err(&wb.to_dense(), &dense));
        let b = normal_matrix(&mut r, n, 3);
        worst_wb = worst_wb.max(rel_err(&wb.apply_matrix(&b), &(&dense * &b)));
    }
    ensure(worst_wb <= 1e-8, || format!("Woodbury relative error {worst_wb:.3e} > 1e-8"))?;

    let (mut worst_var, mut worst_mean, mut worst_delta): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..50 {
        let (model, k, y) = random_model(&mut r, 12, 2);
        let z = normal_matrix(&mut r, 3, 2);
        let pred = lib(model.predict(&z))?;
        let pi = lib(sigp::sigp::train_projection(&k, &model.w))?;
        let pt = lib(model.projection(&z))?;
        let sb = &model.sigma_beta;
        let vinv = dense_inverse(&(&pi * sb * pi.transpose() + DMatrix::identity(12, 12) * model.sigma2));
        let s_tt = &pt * sb * pt.transpose();
        let s_tx = &pt * sb * pi.transpose();
        let cov = &s_tt - &s_tx * &vinv * s_tx.transpose() + DMatrix::identity(3, 3) * model.sigma2;
        let mut u_x = &pi * &model.alpha;
        u_x.add_scalar_mut(model.c);
        let mut mean = &pt * &model.alpha + &s_tx * &vinv * (&y - u_x);
        mean.add_scalar_mut(model.c);
        let var_oracle = cov.diagonal();
        worst_var = worst_var.max((&pred.variance - &var_oracle).amax() / var_oracle.amax());
        worst_mean = worst_mean.max((&pred.mean - &mean).amax() / mean.amax().max(1.0));
        let conditional = sb - sb * pi.transpose() * &vinv * &pi * sb;
        let information = dense_inverse(&(dense_inverse(sb) + pi.transpose() * &pi / model.sigma2));
        worst_delta = worst_delta.max(rel_err(&model.beta_cov, &conditional)).max(rel_err(&model.beta_cov, &information));
    }
    ensure(worst_var <= 1e-8, || format!("predictive variance error {worst_var:.3e} > 1e-8"))?;
    ensure(worst_mean <= 1e-8, || format!("predictive mean error {worst_mean:.3e} > 1e-8"))?;
    ensure(worst_delta <= 1e-9, || format!("posterior covariance error {worst_delta:.3e} > 1e-9"))?;

    let mut worst_igp: f64 = 0.0;
    for _ in 0..50 {
        let n = r.random_range(4..=10);
        let a = normal_matrix(&mut r, n, n);
        let kmat = &a * a.transpose();
        let b = normal_matrix(&mut r, n, n);
        let knu = &b * b.transpose();
        let p = 0.5 + 0.5 * r.random::<f64>();
        let got = lib(igp_covariance(&lib(GramCache::from_matrix(kmat.clone()))?, &knu, p))?;
        let eig = SymmetricEigen::new(kmat);
        let mut oracle = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let li = eig.eigenvalues[i].max(0.0).powf(p);
                let lj = eig.eigenvalues[j].max(0.0).powf(p);
                let ei = eig.eigenvectors.column(i);
                let ej = eig.eigenvectors.column(j);
                let coupling = (ei.transpose() * &knu * ej)[(0, 0)];
                oracle += ei * ej.transpose() * (li * lj * coupling);
            }
        }
        oracle /= (n as f64).powf(2.0 * p);
        worst_igp = worst_igp.max(rel_err(&got, &oracle));
    }
    ensure(worst_igp <= 1e-9, || format!("IGP covariance error {worst_igp:.3e} > 1e-9"))?;
    Ok(format!(
        "woodbury {worst_wb:.1e}, pred-var {worst_var:.1e}, pred-mean {worst_mean:.1e}, beta-cov {worst_delta:.1e}, igp {worst_igp:.1e}"
    ))
}

/// Random RBF instance with `n ≤ 30` points in three dimensions and a sliced pencil.
fn random_pencil(r: &mut ChaCha8Rng, n: usize, slices: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let x = normal_matrix(r, n, 3);
    let k = GramCache::new(KernelSpec::rbf(median_heuristic(&x)), &x).unwrap();
    let y = DVector::from_fn(n, |i, _| x[(i, 0)].sin() + 0.5 * x[(i, 1)] + 0.1 * gauss(r));
    let zeta = sdr::default_zeta(k.k());
    let plan = make_slices(&y, slices).unwrap();
    sdr_matrices_sliced(&k, &plan, zeta).unwrap()
}

/// Between-slice and total covariance of the rows of `x`.
fn input_covariances(x: &DMatrix<f64>, groups: &[Vec<usize>]) -> (DMatrix<f64>, DMatrix<f64>) {
    let (n, d) = x.shape();
    let mu = x.row_mean().transpose();
    let mut between = DMatrix::zeros(d, d);
    for g in groups {
        let mut mean_s = DVector::zeros(d);
        for &i in g {
            mean_s += x.row(i).transpose();
        }
        mean_s /= g.len() as f64;
        let diff = mean_s - &mu;
        between += &diff * diff.transpose() * (g.len() as f64 / n as f64);
    }
    let mut total = DMatrix::zeros(d, d);
    for i in 0..n {
        let diff = x.row(i).transpose() - &mu;
        total += &diff * diff.transpose() / n as f64;
    }
    (between, total)
}

/// Generalized eigenvectors of `A b = τ B b` for SPD `B` by Cholesky whitening.
fn whitened_eig(a: &DMatrix<f64>, b: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let l = b.clone().cholesky().expect("SPD").l();
    let linv = l.clone().try_inverse().unwrap();
    let c = &linv * a * linv.transpose();
    let c = (&c + c.transpose()) * 0.5;
    let eig = SymmetricEigen::new(c);
    let vecs = linv.transpose() * eig.eigenvectors;
    (eig.eigenvalues, vecs)
}

fn span_residual(w: &DMatrix<f64>, b: &DVector<f64>) -> f64 {
    let q = w.clone().qr().q();
    let proj = &q * (q.transpose() * b);
    (b - proj).norm() / b.norm()
}

fn criterion_2() -> Check {
    let mut r = rng(202);
    let mut worst_gap = f64::INFINITY;
    for inst in 0..100 {
        let n = r.random_range(10..=30);
        let m = 1 + inst % 3;
        let (mm, nn) = random_pencil(&mut r, n, 6);
        let basis = lib(estimate_basis(&mm, &nn, m))?;
        let g_w = lib(sdr_loglik(&basis.w, &mm, &nn))?;
        for _ in 0..1000 {
            let s = normal_matrix(&mut r, n, m);
            let g_s = lib(sdr_loglik(&s, &mm, &nn))?;
            worst_gap = worst_gap.min(g_w - g_s);
            ensure(g_w >= g_s - 1e-9, || format!("instance {inst}: g(W) = {g_w} < g(S) = {g_s}"))?;
        }
    }

    // Linear kernel with a vanishing ridge: the feature space is the input space, so classic
    // SIR and Fisher LDA on the inputs are exact oracles for the directions `b = Xᵀw`.
    let mut worst_containment: f64 = 0.0;
    let mut directions = 0;
    for inst in 0..50 {
        let n = r.random_range(15..=30);
        let d = r.random_range(2..=5);
        let x = normal_matrix(&mut r, n, d);
        let y = DVector::from_fn(n, |i, _| x[(i, 0)].powi(3) + x[(i, 1)] + 0.1 * gauss(&mut r));
        let k = lib(GramCache::new(KernelSpec::linear(), &x))?;
        let zeta = 1e-12 * k.trace() / n as f64;
        let plan = lib(make_slices(&y, 4))?;
        let groups: Vec<Vec<usize>> = plan.members().map(|g| g.to_vec()).collect();
        let (between, total) = input_covariances(&x, &groups);
        let (taus, vecs) = whitened_eig(&between, &total);
        let keep: Vec<usize> = (0..d).filter(|&i| taus[i] > 1e-6).collect();
        let (mm, nn) = lib(sdr_matrices_sliced(&k, &plan, zeta))?;
        let basis = lib(estimate_basis(&mm, &nn, keep.len()))?;
        let span = x.transpose() * &basis.w;
        for &i in &keep {
            let res = span_residual(&span, &vecs.column(i).into_owned());
            worst_containment = worst_containment.max(res);
            ensure(res <= 1e-6, || format!("instance {inst}: SIR direction outside the basis span, residual {res:.3e}"))?;
        }
        directions += keep.len();
    }

    let mut fda_margin = f64::INFINITY;
    let mut fda_instances = 0;
    for inst in 0..20 {
        let n = r.random_range(15..=30);
        let d = r.random_range(2..=5);
        let x = normal_matrix(&mut r, n, d);
        let labels = DVector::from_fn(n, |i, _| {
            if x[(i, 0)] - 0.5 * x[(i, 1)] + 0.3 * gauss(&mut r) > 0.0 { 1.0 } else { -1.0 }
        });
        if labels.iter().all(|&v| v == labels[0]) {
            continue;
        }
        fda_instances += 1;
        let k = lib(GramCache::new(KernelSpec::linear(), &x))?;
        let basis = lib(sdr::label_basis(&k, &labels, 1e-12 * k.trace() / n as f64, 1))?;
        let groups: Vec<Vec<usize>> =
            [1.0, -1.0].iter().map(|&c| (0..n).filter(|&i| labels[i] == c).collect()).collect();
        let (between, total) = input_covariances(&x, &groups);
        let fisher = |b: &DVector<f64>| (b.transpose() * &between * b)[(0, 0)] / (b.transpose() * &total * b)[(0, 0)];
        let best = fisher(&(x.transpose() * basis.w.column(0)));
        for _ in 0..1000 {
            let q = fisher(&normal_vector(&mut r, d));
            fda_margin = fda_margin.min(best - q);
            ensure(best >= q * (1.0 - 1e-9), || format!("instance {inst}: Fisher quotient {q} beats the estimate {best}"))?;
        }
    }
    Ok(format!(
        "min g(W)-g(S) {worst_gap:.3e}, containment residual {worst_containment:.1e} over {directions} directions, min Fisher margin {fda_margin:.3e} on {fda_instances} binary instances"
    ))
}

/// Track the log likelihood after every EM step; returns the worst decrease.
fn em_decrease(k: &GramCache, y: &DVector<f64>, w: &DMatrix<f64>, cfg: &EmConfig) -> std::result::Result<(f64, f64, usize), String> {
    let mut solver = lib(EmSolver::new(k, y, w, cfg))?;
    let (mut prev_l, mut prev_f) = (solver.loglik(), solver.objective());
    let (mut worst_l, mut worst_f) = (0.0f64, 0.0f64);
    let mut iters = 0;
    for _ in 0..cfg.max_iter {
        let change = lib(solver.step())?;
        iters += 1;
        worst_l = worst_l.max(prev_l - solver.loglik());
        worst_f = worst_f.max(prev_f - solver.objective());
        prev_l = solver.loglik();
        prev_f = solver.objective();
        if change.abs() < cfg.tol * (1.0 + prev_f.abs()) {
            break;
        }
    }
    Ok((worst_l, worst_f, iters))
}

fn criterion_3() -> Check {
    let mut r = rng(303);
    let cfg = EmConfig::default();
    let (mut worst_l, mut worst_f, mut total_iters) = (0.0f64, 0.0f64, 0);
    for inst in 0..50 {
        let n = r.random_range(15..=60);
        let m = r.random_range(1..=3);
        let x = normal_matrix(&mut r, n, 2);
        let k = lib(GramCache::new(KernelSpec::rbf(median_heuristic(&x)), &x))?;
        let y = DVector::from_fn(n, |i, _| {
            (2.0 * x[(i, 0)]).sin() + x[(i, 1)] * x[(i, 1)] * 0.3 + 0.2 * gauss(&mut r)
        });
        let w = if inst % 2 == 0 {
            lib(sdr::sliced_basis(&k, &y, sdr::default_slices(m), sdr::default_zeta(k.k()), m))?.w
        } else {
            normal_matrix(&mut r, n, m)
        };
        let (dl, df, it) = em_decrease(&k, &y, &w, &cfg)?;
        worst_l = worst_l.max(dl);
        worst_f = worst_f.max(df);
        total_iters += it;
        ensure(dl <= 1e-8, || format!("instance {inst}: log likelihood decreased by {dl:.3e}"))?;
    }
    let ds = lib(synth_sinusoid(200, &[(-6.0, -2.0), (1.0, 5.0)], 0.01, 0))?;
    let k = lib(GramCache::new(KernelSpec::rbf(median_heuristic(&ds.x)), &ds.x))?;
    let basis = lib(sdr::sliced_basis(&k, &ds.y, 10, sdr::default_zeta(k.k()), 2))?;
    let (dl, df, it) = em_decrease(&k, &ds.y, &basis.w, &cfg)?;
    ensure(dl <= 1e-8, || format!("sinusoid: log likelihood decreased by {dl:.3e}"))?;
    Ok(format!(
        "worst decrease {:.1e} (objective {:.1e}) over {total_iters} random-instance iterations; sinusoid {it} iterations, worst decrease {dl:.1e} (objective {df:.1e})",
        worst_l, worst_f
    ))
}

fn criterion_4() -> Check {
    let n = 200;
    let x = DMatrix::from_fn(n, 1, |i, _| (i as f64 + 0.5) / n as f64);
    let k = lib(gram(&KernelSpec::brownian_bridge(), &x, &x))?;
    let eig = lib(sigp::linalg::sym_eig(&k))?;
    let mut parts = Vec::new();
    for j in 1..=3 {
        let got = eig.values[j - 1] / n as f64;
        let (want, _) = lib(kernels::brownian_bridge_eigensystem(j, 0.0))?;
        let rel = (got - want).abs() / want;
        ensure(rel <= 0.02, || format!("eigenvalue {j}: {got:.6} vs {want:.6} ({:.2}%)", rel * 100.0))?;
        parts.push(format!("λ{j} {got:.6} vs {:.6} ({:.3}%)", 1.0 / (PI * PI * (j * j) as f64), rel * 100.0));
    }
    Ok(parts.join(", "))
}

fn criterion_5() -> Check {
    let ds = lib(synth_sinusoid(200, &[(-6.0, -2.0), (1.0, 5.0)], 0.01, 0))?;
    let cfg = TrainConfig {
        rank: 2,
        lengthscale: LengthscaleChoice::Median,
        slices: Some(10),
        standardize: false,
        ..Default::default()
    };
    let (model, report) = lib(pipeline::train(&ds, &cfg))?;
    let sigma2 = match &model.kind {
        ModelKind::Sigp(m) => m.sigma2,
        _ => return Err("expected a regression model".into()),
    };
    let grid: Vec<f64> = (0..100)
        .map(|i| -6.0 + 4.0 * i as f64 / 99.0)
        .chain((0..100).map(|i| 1.0 + 4.0 * i as f64 / 99.0))
        .collect();
    let z = DMatrix::from_column_slice(grid.len(), 1, &grid);
    let truth = DVector::from_iterator(grid.len(), grid.iter().map(|v| v.sin()));
    let pred = lib(model.predict(&z))?;
    let mse = lib(eval::mse(&pred.mean, &truth))?;
    ensure(report.converged(), || "EM did not converge".into())?;
    ensure(mse <= 0.02, || format!("grid MSE {mse:.5} > 0.02"))?;
    ensure((0.005..=0.02).contains(&sigma2), || format!("σ̂² = {sigma2:.5} outside [0.005, 0.02]"))?;
    Ok(format!("grid MSE {mse:.5}, σ̂² {sigma2:.5}, {} EM iterations", report.iterations()))
}

fn criterion_6() -> Check {
    let ds = lib(synth_four_class(25, 0))?;
    let fit = |rank: usize| {
        let cfg = TrainConfig { rank, lengthscale: LengthscaleChoice::MedianTimes(8.0), ..Default::default() };
        pipeline::train(&ds, &cfg)
    };
    let (m2, report) = lib(fit(2))?;
    let (m1, _) = lib(fit(1))?;
    let acc = |m: &pipeline::TrainedModel| -> std::result::Result<f64, String> {
        let labels = lib(m.predict_labels(&ds.x))?.ok_or("not a classifier")?;
        lib(eval::accuracy(&labels, ds.y.as_slice()))
    };
    let (a2, a1) = (acc(&m2)?, acc(&m1)?);
    let tau3 = report.basis.spectrum.get(2).copied().unwrap_or(0.0);
    ensure(a2 == 1.0, || format!("rank-2 training accuracy {a2:.3} < 1"))?;
    ensure(a1 < 1.0, || format!("rank-1 training accuracy {a1:.3} is perfect"))?;
    ensure(tau3 <= 0.05, || format!("τ₃ = {tau3:.4} > 0.05"))?;
    Ok(format!(
        "rank-2 accuracy {a2:.3}, rank-1 accuracy {a1:.3}, τ = {:.4} {:.4} {:.4}",
        report.basis.spectrum[0], report.basis.spectrum[1], tau3
    ))
}

fn criterion_7() -> Check {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("data/housing.csv");
    let ds = lib(load_csv(&path, &CsvOptions::default()))?;
    ensure(ds.len() == 506, || format!("housing has {} rows", ds.len()))?;
    let (train, test) = lib(data_io::split(&ds, 106, 0))?;
    let cfg = TrainConfig { rank: 2, ..Default::default() };
    let (model, report) = lib(pipeline::train(&train, &cfg))?;
    let pred = lib(model.predict(&test.x))?;
    let mse = lib(eval::mse(&pred.mean, &test.y))?;
    let nlpd = lib(eval::nlpd(&pred, &test.y))?;
    let lr = lib(LinearRegression::fit(&train.x, &train.y))?;
    let lr_mse = lib(eval::mse(&lib(lr.predict(&test.x))?.mean, &test.y))?;
    let detail = format!(
        "MSE {mse:.4}, NLPD {nlpd:.4}, linear regression MSE {lr_mse:.4}, lengthscale {:.3}",
        report.lengthscale
    );
    ensure(mse <= 25.0, || format!("MSE {mse:.4} > 25 ({detail})"))?;
    ensure(nlpd <= 3.1, || format!("NLPD {nlpd:.4} > 3.1 ({detail})"))?;
    ensure(mse < lr_mse, || format!("SIGP does not beat linear regression ({detail})"))?;
    Ok(detail)
}

fn criterion_8() -> Check {
    let rows = lib(sigp::bench::bench_sizes(&[500, 1000, 2000], 2, 15, 0))?;
    let ratios = sigp::bench::growth_ratios(&rows);
    let times: Vec<String> = rows.iter().map(|r| format!("n={} {:.3e}s", r.n, r.seconds_per_iteration)).collect();
    let detail = format!("{}; ratios {:.2} {:.2}", times.join(", "), ratios[0], ratios[1]);
    ensure(ratios.iter().all(|q| (3.0..=6.0).contains(q)), || format!("ratio outside [3, 6]: {detail}"))?;
    Ok(detail)
}

fn criterion_9() -> Check {
    let b = lib(sdr::rank_bound(100, 0.05))?;
    let oracle = 0.01 - (8e-6 * 40f64.ln()).sqrt();
    ensure((b - 0.004568).abs() <= 1e-6, || format!("rank_bound(100, 0.05) = {b:.7}"))?;
    ensure((b - oracle).abs() <= 1e-15, || format!("rank_bound(100, 0.05) = {b} vs {oracle}"))?;
    let mut tested = 0;
    for n in [1usize, 2, 5, 10, 50, 100, 500, 1000, 10_000] {
        for delta in [1e-6, 0.001, 0.01, 0.05, 0.1, 0.5, 0.9, 0.999] {
            let b = lib(sdr::rank_bound(n, delta))?;
            ensure(b < 1.0 / n as f64, || format!("bound {b} ≥ 1/n at n={n}, δ={delta}"))?;
            tested += 1;
        }
    }
    Ok(format!("rank_bound(100, 0.05) = {b:.7}; bound < 1/n on {tested} (n, δ) pairs"))
}

fn main() {
    let criteria: [(&str, fn() -> Check, Duration); 9] = [
        ("oracle equivalences", criterion_1, Duration::from_secs(60)),
        ("SDR optimizer", criterion_2, Duration::from_secs(120)),
        ("EM monotonicity", criterion_3, Duration::from_secs(120)),
        ("Brownian-bridge spectrum", criterion_4, Duration::from_secs(10)),
        ("sinusoid recovery", criterion_5, Duration::from_secs(60)),
        ("four-class toy", criterion_6, Duration::from_secs(60)),
        ("Housing regression", criterion_7, Duration::from_secs(60)),
        ("complexity scaling", criterion_8, Duration::from_secs(300)),
        ("rank diagnostic", criterion_9, Duration::from_secs(10)),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for (i, (name, check, limit)) in criteria.iter().enumerate() {
        let label = format!("criterion {}", i + 1);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str()) || name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let result = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let result = result.and_then(|d| {
            if elapsed <= *limit { Ok(d) } else { Err(format!("{d}; runtime {elapsed:.1?} exceeds {limit:?}")) }
        });
        match result {
            Ok(detail) => println!("{label} ({name}): PASS [{elapsed:.2?}] {detail}"),
            Err(why) => {
                failed += 1;
                println!("{label} ({name}): FAIL [{elapsed:.2?}] {why}");
            }
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
