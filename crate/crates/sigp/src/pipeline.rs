//! End-to-end training: preprocessing, kernel selection by cross-validation, SDR basis,
//! EM, and a uniform prediction interface over the model kinds.

use nalgebra::{DMatrix, DVector};

use crate::baseline_gp::{self, ExactGpModel, MeanKind};
use crate::data_io::{self, Dataset, LabelKind, Standardizer};
use crate::error::{Error, Result};
use crate::eval;
use crate::kernels::{self, GramCache, KernelFamily, KernelSpec};
use crate::sdr::{self, SdrBasis, SdrMethod};
use crate::sigp::{self, classes_of, EmConfig, EmTrace, OneVsRest, PredictiveDistribution, SigpModel};
use rand::seq::SliceRandom;

/// Multipliers of the median heuristic tried by cross-validation.
pub const CV_GRID: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Regression,
    Classification,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LengthscaleChoice {
    Fixed(f64),
    /// Median pairwise distance of the (standardized) inputs.
    Median,
    /// Multiple of the median heuristic.
    MedianTimes(f64),
    CrossValidate,
}

impl LengthscaleChoice {
    /// A number, `median`, or `cv`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "cv" => Ok(LengthscaleChoice::CrossValidate),
            "median" => Ok(LengthscaleChoice::Median),
            _ => s
                .parse::<f64>()
                .ok()
                .filter(|v| *v > 0.0 && v.is_finite())
                .map(LengthscaleChoice::Fixed)
                .ok_or_else(|| Error::Domain(format!("lengthscale must be positive, 'median' or 'cv', got '{s}'"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub kernel: KernelFamily,
    pub lengthscale: LengthscaleChoice,
    pub rank: usize,
    pub sdr: SdrMethod,
    pub slices: Option<usize>,
    pub zeta: Option<f64>,
    pub zeta1: Option<f64>,
    pub em: EmConfig,
    pub seed: u64,
    pub folds: usize,
    pub standardize: bool,
    /// `None` infers the task from the labels.
    pub task: Option<Task>,
    /// Confidence level of the rank diagnostic.
    pub delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            kernel: KernelFamily::Rbf,
            lengthscale: LengthscaleChoice::CrossValidate,
            rank: 2,
            sdr: SdrMethod::Sliced,
            slices: None,
            zeta: None,
            zeta1: None,
            em: EmConfig::default(),
            seed: 0,
            folds: 5,
            standardize: true,
            task: None,
            delta: 0.05,
        }
    }
}

/// Input and target transforms stored with a model.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessing {
    pub input_dim: usize,
    pub standardizer: Standardizer,
    pub target_shift: f64,
    pub target_scale: f64,
}

impl Preprocessing {
    pub fn identity(d: usize) -> Self {
        Preprocessing { input_dim: d, standardizer: Standardizer::identity(d), target_shift: 0.0, target_scale: 1.0 }
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.ncols() != self.input_dim {
            return Err(Error::Dimension(format!("model expects {} features, got {}", self.input_dim, x.ncols())));
        }
        self.standardizer.apply(x)
    }

    fn target(&self, y: &DVector<f64>) -> DVector<f64> {
        y.map(|v| (v - self.target_shift) / self.target_scale)
    }

    fn restore(&self, mut d: PredictiveDistribution) -> PredictiveDistribution {
        d.mean = d.mean.map(|v| v * self.target_scale + self.target_shift);
        d.variance *= self.target_scale * self.target_scale;
        d
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    Sigp(SigpModel),
    /// Regression on `±1`; `classes = [negative, positive]`.
    Binary { classes: [f64; 2], model: SigpModel },
    OneVsRest(OneVsRest),
    ExactGp(ExactGpModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub pre: Preprocessing,
    pub kind: ModelKind,
}

impl TrainedModel {
    pub fn input_dim(&self) -> usize {
        self.pre.input_dim
    }

    /// Predictive distribution on the original target scale. One-vs-rest models report the
    /// winning class score.
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<PredictiveDistribution> {
        let z = self.pre.apply(x)?;
        let d = match &self.kind {
            ModelKind::Sigp(m) | ModelKind::Binary { model: m, .. } => m.predict(&z)?,
            ModelKind::ExactGp(m) => baseline_gp::gp_predict(m, &z)?,
            ModelKind::OneVsRest(ovr) => {
                let scores = ovr.scores(&z)?;
                let mut mean = DVector::zeros(z.nrows());
                let mut variance = DVector::zeros(z.nrows());
                let per_class: Vec<PredictiveDistribution> =
                    ovr.models.iter().map(|m| m.predict(&z)).collect::<Result<_>>()?;
                for i in 0..z.nrows() {
                    let j = scores.row(i).transpose().argmax().0;
                    mean[i] = per_class[j].mean[i];
                    variance[i] = per_class[j].variance[i];
                }
                PredictiveDistribution { mean, variance }
            }
        };
        Ok(self.pre.restore(d))
    }

    /// Class decisions for classifiers; `None` for regression models.
    pub fn predict_labels(&self, x: &DMatrix<f64>) -> Result<Option<Vec<f64>>> {
        match &self.kind {
            ModelKind::Binary { classes, model } => {
                let d = model.predict(&self.pre.apply(x)?)?;
                Ok(Some(d.mean.iter().map(|&v| if v > 0.0 { classes[1] } else { classes[0] }).collect()))
            }
            ModelKind::OneVsRest(ovr) => Ok(Some(ovr.predict(&self.pre.apply(x)?)?)),
            _ => Ok(None),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub task: Task,
    pub lengthscale: f64,
    /// `(lengthscale, mean fold score)`: NLPD for regression, F1 for binary and macro F1 for
    /// multiclass labels.
    pub cv_scores: Vec<(f64, f64)>,
    pub basis: SdrBasis,
    pub rank_bound: f64,
    pub suggested_rank: usize,
    pub traces: Vec<EmTrace>,
    pub n: usize,
}

impl TrainReport {
    pub fn final_loglik(&self) -> f64 {
        self.traces.iter().filter_map(|t| t.loglik.last()).sum()
    }

    pub fn converged(&self) -> bool {
        self.traces.iter().all(|t| t.converged)
    }

    pub fn iterations(&self) -> usize {
        self.traces.iter().map(|t| t.iterations).max().unwrap_or(0)
    }

    /// Plain-text summary.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let task = match self.task {
            Task::Regression => "regression",
            Task::Classification => "classification",
        };
        s.push_str(&format!("task: {task}\n"));
        s.push_str(&format!("n: {}\n", self.n));
        s.push_str(&format!("lengthscale: {:.6}\n", self.lengthscale));
        for (l, score) in &self.cv_scores {
            s.push_str(&format!("cv: lengthscale {l:.6} score {score:.6}\n"));
        }
        s.push_str(&format!("sdr: {} rank {} zeta {:.3e}\n", self.basis.method.name(), self.basis.rank(), self.basis.zeta));
        if let Some(z1) = self.basis.zeta1 {
            s.push_str(&format!("zeta1: {z1:.3e}\n"));
        }
        if !self.basis.slice_sizes.is_empty() {
            s.push_str(&format!("slices: {:?}\n", self.basis.slice_sizes));
        }
        let shown: Vec<String> = self.basis.spectrum.iter().take(10).map(|t| format!("{t:.6}")).collect();
        s.push_str(&format!("tau: {}\n", shown.join(" ")));
        s.push_str(&format!("rank_bound: {:.6}\n", self.rank_bound));
        s.push_str(&format!("suggested_rank: {}\n", self.suggested_rank));
        s.push_str(&format!("loglik: {:.6}\n", self.final_loglik()));
        s.push_str(&format!("iterations: {}\n", self.iterations()));
        s.push_str(&format!("converged: {}\n", self.converged()));
        s
    }
}

fn infer_task(ds: &Dataset, cfg: &TrainConfig) -> Task {
    cfg.task.unwrap_or(match ds.label_kind {
        LabelKind::Real => Task::Regression,
        LabelKind::Binary | LabelKind::Multiclass => Task::Classification,
    })
}

fn kernel_spec(family: KernelFamily, lengthscale: f64) -> KernelSpec {
    match family {
        KernelFamily::Rbf => KernelSpec::rbf(lengthscale),
        KernelFamily::Linear => KernelSpec::linear(),
        KernelFamily::BrownianBridge => KernelSpec::brownian_bridge(),
    }
}

/// Trained core model on already transformed inputs and targets.
enum Fitted {
    Regression(SigpModel),
    Binary([f64; 2], SigpModel),
    Multi(OneVsRest),
}

struct FitOutput {
    fitted: Fitted,
    basis: SdrBasis,
    traces: Vec<EmTrace>,
}

fn fit_core(x: &DMatrix<f64>, y: &DVector<f64>, task: Task, spec: KernelSpec, cfg: &TrainConfig) -> Result<FitOutput> {
    let k = GramCache::new(spec, x)?;
    let zeta = cfg.zeta.unwrap_or_else(|| sdr::default_zeta(k.k()));
    let m = cfg.rank;
    let basis = match (task, cfg.sdr) {
        (_, SdrMethod::ResponseKernel) => sdr::response_kernel_basis(&k, y, zeta, cfg.zeta1, m)?,
        (Task::Regression, _) => sdr::sliced_basis(&k, y, cfg.slices.unwrap_or(sdr::default_slices(m)), zeta, m)?,
        (Task::Classification, _) => match cfg.slices {
            Some(s) => sdr::sliced_basis(&k, y, s, zeta, m)?,
            None => sdr::label_basis(&k, y, zeta, m)?,
        },
    };
    let fitted_and_traces = match task {
        Task::Regression => {
            let (model, trace) = sigp::em_fit(&k, y, &basis, &cfg.em)?;
            (Fitted::Regression(model), vec![trace])
        }
        Task::Classification => {
            let classes = classes_of(y);
            if classes.len() == 2 {
                let signed = y.map(|v| if v == classes[1] { 1.0 } else { -1.0 });
                let (model, trace) = sigp::em_fit(&k, &signed, &basis, &cfg.em)?;
                (Fitted::Binary([classes[0], classes[1]], model), vec![trace])
            } else {
                let (ovr, traces) = sigp::fit_one_vs_rest(&k, y, &basis, &cfg.em)?;
                (Fitted::Multi(ovr), traces)
            }
        }
    };
    Ok(FitOutput { fitted: fitted_and_traces.0, basis, traces: fitted_and_traces.1 })
}

fn fold_score(fitted: &Fitted, x: &DMatrix<f64>, y: &DVector<f64>) -> Result<f64> {
    match fitted {
        Fitted::Regression(m) => eval::nlpd(&m.predict(x)?, y),
        Fitted::Binary(classes, m) => {
            let d = m.predict(x)?;
            let truth: Vec<f64> = y.iter().map(|&v| if v == classes[1] { 1.0 } else { -1.0 }).collect();
            eval::f1(d.mean.as_slice(), &truth)
        }
        Fitted::Multi(ovr) => eval::macro_f1(&ovr.predict(x)?, y.as_slice()),
    }
}

/// Mean fold score for each candidate lengthscale. Failed folds score as the worst value.
pub fn cross_validate(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    task: Task,
    candidates: &[f64],
    cfg: &TrainConfig,
) -> Result<Vec<(f64, f64)>> {
    let n = x.nrows();
    let folds = cfg.folds.clamp(2, n.max(2));
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut data_io::rng(cfg.seed));
    let worst = match task {
        Task::Regression => f64::INFINITY,
        Task::Classification => 0.0,
    };
    let mut out = Vec::with_capacity(candidates.len());
    for &l in candidates {
        let spec = kernel_spec(cfg.kernel, l);
        let mut total = 0.0;
        for f in 0..folds {
            let (held, kept): (Vec<usize>, Vec<usize>) = idx.iter().enumerate().fold(
                (Vec::new(), Vec::new()),
                |(mut h, mut k), (pos, &i)| {
                    if pos % folds == f { h.push(i) } else { k.push(i) }
                    (h, k)
                },
            );
            let pick = |rows: &[usize]| {
                (
                    DMatrix::from_fn(rows.len(), x.ncols(), |i, j| x[(rows[i], j)]),
                    DVector::from_fn(rows.len(), |i, _| y[rows[i]]),
                )
            };
            let (xt, yt) = pick(&kept);
            let (xv, yv) = pick(&held);
            let score = fit_core(&xt, &yt, task, spec, cfg).and_then(|fit| fold_score(&fit.fitted, &xv, &yv));
            total += match score {
                Ok(s) if s.is_finite() => s,
                Ok(_) => worst,
                Err(e) => {
                    log::warn!("cross-validation fold {f} at lengthscale {l:.4} failed: {e}");
                    worst
                }
            };
        }
        out.push((l, total / folds as f64));
    }
    Ok(out)
}

fn select(scores: &[(f64, f64)], task: Task) -> Result<f64> {
    let better = |a: f64, b: f64| match task {
        Task::Regression => a < b,
        Task::Classification => a > b,
    };
    let mut best: Option<(f64, f64)> = None;
    for &(l, s) in scores {
        if s.is_finite() && best.is_none_or(|(_, bs)| better(s, bs)) {
            best = Some((l, s));
        }
    }
    best.map(|(l, _)| l).ok_or_else(|| Error::Numerical("every cross-validation candidate failed".into()))
}

fn preprocessing(ds: &Dataset, task: Task, standardize: bool) -> Preprocessing {
    let mut pre = Preprocessing::identity(ds.d());
    if standardize {
        pre.standardizer = Standardizer::fit(&ds.x);
        if task == Task::Regression {
            let mean = ds.y.mean();
            let sd = (ds.y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ds.len() as f64).sqrt();
            pre.target_shift = mean;
            pre.target_scale = if sd > 0.0 { sd } else { 1.0 };
        }
    }
    pre
}

/// Train a SIGP regressor or classifier on `ds`.
pub fn train(ds: &Dataset, cfg: &TrainConfig) -> Result<(TrainedModel, TrainReport)> {
    if cfg.rank == 0 {
        return Err(Error::Domain("rank must be at least 1".into()));
    }
    if ds.len() < 2 {
        return Err(Error::Data("need at least two training rows".into()));
    }
    let task = infer_task(ds, cfg);
    let pre = preprocessing(ds, task, cfg.standardize);
    let x = pre.apply(&ds.x)?;
    if x.ncols() == 0 {
        return Err(Error::Data("no non-constant features".into()));
    }
    let y = if task == Task::Regression { pre.target(&ds.y) } else { ds.y.clone() };

    let median = kernels::median_heuristic(&x);
    let (lengthscale, cv_scores) = match (cfg.kernel, cfg.lengthscale) {
        (KernelFamily::Rbf, LengthscaleChoice::CrossValidate) => {
            let candidates: Vec<f64> = CV_GRID.iter().map(|f| f * median).collect();
            let scores = cross_validate(&x, &y, task, &candidates, cfg)?;
            (select(&scores, task)?, scores)
        }
        (_, LengthscaleChoice::Fixed(l)) => (l, Vec::new()),
        (_, LengthscaleChoice::MedianTimes(f)) => (f * median, Vec::new()),
        _ => (median, Vec::new()),
    };
    let spec = kernel_spec(cfg.kernel, lengthscale);
    let out = fit_core(&x, &y, task, spec, cfg)?;
    let kind = match out.fitted {
        Fitted::Regression(m) => ModelKind::Sigp(m),
        Fitted::Binary(classes, model) => ModelKind::Binary { classes, model },
        Fitted::Multi(ovr) => ModelKind::OneVsRest(ovr),
    };
    let n = x.nrows();
    let report = TrainReport {
        task,
        lengthscale,
        cv_scores,
        rank_bound: sdr::rank_bound(n, cfg.delta)?,
        suggested_rank: sdr::suggest_rank(&out.basis.spectrum, n, cfg.delta)?,
        basis: out.basis,
        traces: out.traces,
        n,
    };
    Ok((TrainedModel { pre, kind }, report))
}

#[derive(Debug, Clone)]
pub struct BaselineConfig {
    pub kernel: KernelFamily,
    /// `CrossValidate` here selects the lengthscale by log marginal likelihood over the CV grid.
    pub lengthscale: LengthscaleChoice,
    pub mean: MeanKind,
    pub noise_grid: Vec<f64>,
    pub standardize: bool,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            kernel: KernelFamily::Rbf,
            lengthscale: LengthscaleChoice::CrossValidate,
            mean: MeanKind::Linear,
            noise_grid: baseline_gp::default_noise_grid(),
            standardize: false,
        }
    }
}

/// Fit the exact GP baseline on a regression dataset.
pub fn train_baseline(ds: &Dataset, cfg: &BaselineConfig) -> Result<TrainedModel> {
    let pre = preprocessing(ds, Task::Regression, cfg.standardize);
    let x = pre.apply(&ds.x)?;
    let y = pre.target(&ds.y);
    let median = kernels::median_heuristic(&x);
    let candidates: Vec<f64> = match cfg.lengthscale {
        LengthscaleChoice::Fixed(l) => vec![l],
        LengthscaleChoice::Median => vec![median],
        LengthscaleChoice::MedianTimes(f) => vec![f * median],
        LengthscaleChoice::CrossValidate => CV_GRID.iter().map(|f| f * median).collect(),
    };
    let mut best: Option<ExactGpModel> = None;
    for l in candidates {
        let k = GramCache::new(kernel_spec(cfg.kernel, l), &x)?;
        let m = baseline_gp::gp_fit(&k, &y, &cfg.noise_grid, cfg.mean)?;
        if best.as_ref().is_none_or(|b| m.log_marginal > b.log_marginal) {
            best = Some(m);
        }
    }
    let model = best.ok_or_else(|| Error::Domain("no lengthscale candidates".into()))?;
    Ok(TrainedModel { pre, kind: ModelKind::ExactGp(model) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_io::{synth_four_class, synth_sinusoid};

    #[test]
    fn lengthscale_parsing() {
        assert_eq!(LengthscaleChoice::parse("cv").unwrap(), LengthscaleChoice::CrossValidate);
        assert_eq!(LengthscaleChoice::parse("0.5").unwrap(), LengthscaleChoice::Fixed(0.5));
        assert!(LengthscaleChoice::parse("-1").is_err());
        assert!(LengthscaleChoice::parse("abc").is_err());
    }

    #[test]
    fn regression_round_trip_through_scaling() {
        let ds = synth_sinusoid(120, &[(-3.0, 3.0)], 0.01, 4).unwrap();
        let cfg = TrainConfig { rank: 2, lengthscale: LengthscaleChoice::Median, ..Default::default() };
        let (model, report) = train(&ds, &cfg).unwrap();
        assert!(report.converged());
        let d = model.predict(&ds.x).unwrap();
        assert!(eval::mse(&d.mean, &ds.y).unwrap() < 0.05);
        assert!(model.predict_labels(&ds.x).unwrap().is_none());
    }

    #[test]
    fn cross_validation_picks_from_grid() {
        let ds = synth_sinusoid(80, &[(-3.0, 3.0)], 0.01, 5).unwrap();
        let cfg = TrainConfig { rank: 1, ..Default::default() };
        let (_, report) = train(&ds, &cfg).unwrap();
        assert_eq!(report.cv_scores.len(), 5);
        assert!(report.cv_scores.iter().any(|(l, _)| *l == report.lengthscale));
    }

    #[test]
    fn binary_classifier() {
        let ds = synth_four_class(20, 1).unwrap();
        let y = ds.y.map(|v| if v == 1.0 || v == 3.0 { 1.0 } else { 0.0 });
        let ds = Dataset::new(ds.x.clone(), y).unwrap();
        let cfg = TrainConfig { rank: 1, lengthscale: LengthscaleChoice::Median, ..Default::default() };
        let (model, report) = train(&ds, &cfg).unwrap();
        assert_eq!(report.task, Task::Classification);
        let labels = model.predict_labels(&ds.x).unwrap().unwrap();
        assert!(labels.iter().all(|&l| l == 0.0 || l == 1.0));
        let acc = eval::accuracy(&labels, ds.y.as_slice()).unwrap();
        assert!(acc > 0.95, "accuracy {acc} tau {:?}", &report.basis.spectrum[..3]);
    }

    #[test]
    fn rank_zero_rejected() {
        let ds = synth_sinusoid(20, &[(0.0, 1.0)], 0.0, 0).unwrap();
        let cfg = TrainConfig { rank: 0, ..Default::default() };
        assert!(matches!(train(&ds, &cfg), Err(Error::Domain(_))));
    }
}
