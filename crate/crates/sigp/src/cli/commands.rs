use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::*;
use crate::baseline_gp::{self, MeanKind};
use crate::bench;
use crate::data_io::{self, CsvOptions, LabelColumn};
use crate::eval;
use crate::kernels::{self, GramCache, KernelFamily, KernelSpec};
use crate::model_io;
use crate::pipeline::{self, BaselineConfig, LengthscaleChoice, ModelKind, Task, TrainConfig, TrainedModel};
use crate::sdr::{self, SdrMethod};
use crate::sigp::{EmConfig, PredictiveDistribution};

pub(super) fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Synth(s) => synth(s, out),
        Command::Split(a) => split(a, out),
        Command::Train(a) => train(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Eval(a) => evaluate(a, out),
        Command::Baseline(a) => baseline(a, out),
        Command::Inspect(a) => inspect(a, out),
        Command::Bench(a) => bench_cmd(a, out),
        Command::Plotdata(a) => plotdata(a, out),
    }
}

fn usage(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

/// Write to `path` atomically, or to `out` when no path is given.
fn emit(text: &str, path: Option<&Path>, out: &mut dyn Write) -> Result<()> {
    match path {
        Some(p) => data_io::write_atomic(p, text.as_bytes()),
        None => Ok(out.write_all(text.as_bytes())?),
    }
}

fn delimiter(c: char) -> Result<u8> {
    u8::try_from(c).ok().filter(|b| b.is_ascii()).ok_or_else(|| usage(format!("delimiter '{c}' is not ASCII")))
}

fn csv_options(d: &DataArgs) -> Result<CsvOptions> {
    Ok(CsvOptions { header: !d.no_header, label_column: LabelColumn::parse(&d.label), delimiter: delimiter(d.delimiter)? })
}

fn parse_range(s: &str) -> Result<(f64, f64)> {
    let bad = || usage(format!("expected lo:hi, got '{s}'"));
    let (a, b) = s.split_once(':').ok_or_else(bad)?;
    let lo: f64 = a.trim().parse().map_err(|_| bad())?;
    let hi: f64 = b.trim().parse().map_err(|_| bad())?;
    if !(hi > lo) {
        return Err(usage(format!("empty range '{s}'")));
    }
    Ok((lo, hi))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(|v| v.trim().parse::<T>().map_err(|_| usage(format!("invalid {what} '{v}'"))))
        .collect()
}

fn synth(cmd: SynthCommand, out: &mut dyn Write) -> Result<()> {
    let (ds, path) = match cmd {
        SynthCommand::Sinusoid { n, noise, ranges, seed, out } => {
            let ranges = ranges.split(',').map(parse_range).collect::<Result<Vec<_>>>()?;
            (data_io::synth_sinusoid(n, &ranges, noise, seed)?, out)
        }
        SynthCommand::Fourclass { per_class, seed, out } => (data_io::synth_four_class(per_class, seed)?, out),
    };
    let mut header = ds.feature_names.clone();
    header.push(ds.target_name.clone());
    let rows = (0..ds.len()).map(|i| {
        let mut r: Vec<f64> = ds.x.row(i).iter().copied().collect();
        r.push(ds.y[i]);
        r
    });
    emit(&data_io::csv_string(&header, rows)?, path.as_deref(), out)
}

fn split(a: SplitArgs, out: &mut dyn Write) -> Result<()> {
    let ds = data_io::load_csv(&a.data.data, &csv_options(&a.data)?)?;
    let (train, test) = data_io::split(&ds, a.test_count, a.seed)?;
    data_io::save_csv(&train, &a.train_out)?;
    data_io::save_csv(&test, &a.test_out)?;
    writeln!(out, "train: {} rows\ntest: {} rows", train.len(), test.len())?;
    Ok(())
}

fn kernel_family(k: KernelArg) -> KernelFamily {
    match k {
        KernelArg::Rbf => KernelFamily::Rbf,
        KernelArg::Linear => KernelFamily::Linear,
        KernelArg::BrownianBridge => KernelFamily::BrownianBridge,
    }
}

fn lengthscale_choice(k: &KernelArgs) -> Result<LengthscaleChoice> {
    match (&k.lengthscale, k.kernel) {
        (Some(_), KernelArg::Linear | KernelArg::BrownianBridge) => {
            Err(usage("--lengthscale only applies to --kernel rbf"))
        }
        (Some(s), _) => LengthscaleChoice::parse(s),
        (None, _) => Ok(LengthscaleChoice::CrossValidate),
    }
}

fn check_sdr_flags(s: &SdrArgs) -> Result<()> {
    match s.sdr {
        SdrArg::Sliced if s.zeta1.is_some() => Err(usage("--zeta1 requires --sdr ykernel")),
        SdrArg::Ykernel if s.slices.is_some() => Err(usage("--slices conflicts with --sdr ykernel")),
        _ => Ok(()),
    }
}

fn train_config(k: &KernelArgs, s: &SdrArgs, rank: usize) -> Result<TrainConfig> {
    check_sdr_flags(s)?;
    Ok(TrainConfig {
        kernel: kernel_family(k.kernel),
        lengthscale: lengthscale_choice(k)?,
        rank,
        sdr: match s.sdr {
            SdrArg::Sliced => SdrMethod::Sliced,
            SdrArg::Ykernel => SdrMethod::ResponseKernel,
        },
        slices: s.slices.map(|v| v as usize),
        zeta: s.zeta,
        zeta1: s.zeta1,
        standardize: !k.no_standardize,
        task: match s.task {
            TaskArg::Auto => None,
            TaskArg::Regression => Some(Task::Regression),
            TaskArg::Classification => Some(Task::Classification),
        },
        delta: s.delta,
        ..Default::default()
    })
}

fn train(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let ds = data_io::load_csv(&a.data.data, &csv_options(&a.data)?)?;
    let mut cfg = train_config(&a.kernel, &a.sdr, a.rank as usize)?;
    cfg.em = EmConfig { max_iter: a.max_iter, tol: a.tol, xi: a.xi, ..Default::default() };
    cfg.seed = a.seed;
    cfg.folds = a.folds;
    let (model, report) = pipeline::train(&ds, &cfg)?;
    model_io::save_model(&model, &a.model)?;
    let text = report.render();
    if let Some(p) = &a.report {
        data_io::write_atomic(p, text.as_bytes())?;
    }
    out.write_all(text.as_bytes())?;
    Ok(())
}

/// Feature matrix for a model: drops the label column when asked, or when the file has
/// exactly one extra column.
fn prediction_inputs(a: &PredictArgs, model: &TrainedModel) -> Result<DMatrix<f64>> {
    let opts = CsvOptions { header: !a.no_header, label_column: LabelColumn::Last, delimiter: delimiter(a.delimiter)? };
    let table = data_io::load_table(&a.data, &opts)?;
    let width = table.names.len();
    let d = model.input_dim();
    match &a.label {
        Some(l) => Ok(table.without_column(table.column_index(&LabelColumn::parse(l))?)),
        None if width == d => Ok(table.data),
        None if width == d + 1 => Ok(table.without_column(width - 1)),
        None => Err(Error::Dimension(format!("model expects {d} features, data has {width} columns"))),
    }
}

fn predictions_csv(d: &PredictiveDistribution, labels: Option<&[f64]>) -> Result<String> {
    let mut header = vec!["mean".to_string(), "variance".to_string()];
    if labels.is_some() {
        header.push("label".into());
    }
    let rows = (0..d.len()).map(|i| {
        let mut r = vec![d.mean[i], d.variance[i]];
        if let Some(l) = labels {
            r.push(l[i]);
        }
        r
    });
    data_io::csv_string(&header, rows)
}

fn predict(a: PredictArgs, out: &mut dyn Write) -> Result<()> {
    let model = model_io::load_model(&a.model)?;
    let x = prediction_inputs(&a, &model)?;
    let d = model.predict(&x)?;
    let labels = model.predict_labels(&x)?;
    emit(&predictions_csv(&d, labels.as_deref())?, a.out.as_deref(), out)
}

fn evaluate(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let opts = CsvOptions { header: !a.no_header, label_column: LabelColumn::parse(&a.label), delimiter: b',' };
    let truth_table = data_io::load_table(&a.truth, &opts)?;
    let truth = truth_table.column(truth_table.column_index(&opts.label_column)?);
    let preds = data_io::load_table(&a.predictions, &CsvOptions { header: true, ..opts.clone() })?;
    let col = |name: &str| {
        preds
            .column_index(&LabelColumn::Name(name.into()))
            .map(|j| preds.column(j))
    };
    let mean = col("mean")?;
    let value = match a.metric {
        Metric::Mse => eval::mse(&mean, &truth)?,
        Metric::Nlpd => eval::nlpd(&PredictiveDistribution { mean, variance: col("variance")? }, &truth)?,
        Metric::F1 | Metric::Accuracy => {
            let classes = crate::sigp::classes_of(&truth);
            let labels: Vec<f64> = match col("label") {
                Ok(l) => l.iter().copied().collect(),
                Err(_) if classes.len() == 2 => {
                    mean.iter().map(|&m| if m > 0.0 { classes[1] } else { classes[0] }).collect()
                }
                Err(_) => return Err(Error::Data("multiclass scoring needs a label column".into())),
            };
            match a.metric {
                Metric::Accuracy => eval::accuracy(&labels, truth.as_slice())?,
                _ if classes.len() == 2 => {
                    let signed = |v: &[f64]| -> Vec<f64> {
                        v.iter().map(|&l| if l == classes[1] { 1.0 } else { -1.0 }).collect()
                    };
                    eval::f1(&signed(&labels), &signed(truth.as_slice()))?
                }
                _ => eval::macro_f1(&labels, truth.as_slice())?,
            }
        }
    };
    writeln!(out, "{value}")?;
    Ok(())
}

fn baseline(a: BaselineArgs, out: &mut dyn Write) -> Result<()> {
    let ds = data_io::load_csv(&a.data.data, &csv_options(&a.data)?)?;
    let cfg = BaselineConfig {
        kernel: kernel_family(a.kernel.kernel),
        lengthscale: lengthscale_choice(&a.kernel)?,
        mean: match a.mean {
            MeanArg::Zero => MeanKind::Zero,
            MeanArg::Linear => MeanKind::Linear,
        },
        noise_grid: match &a.noise_grid {
            Some(s) => parse_list(s, "noise variance")?,
            None => baseline_gp::default_noise_grid(),
        },
        standardize: !a.kernel.no_standardize,
    };
    let model = pipeline::train_baseline(&ds, &cfg)?;
    model_io::save_model(&model, &a.model)?;
    if let ModelKind::ExactGp(m) = &model.kind {
        writeln!(out, "lengthscale: {:.6}", m.kernel.lengthscale)?;
        writeln!(out, "noise2: {:.6e}", m.noise2)?;
        writeln!(out, "log_marginal: {:.6}", m.log_marginal)?;
    }
    Ok(())
}

fn inspect(a: InspectArgs, out: &mut dyn Write) -> Result<()> {
    check_sdr_flags(&a.sdr)?;
    let ds = data_io::load_csv(&a.data.data, &csv_options(&a.data)?)?;
    let mut x = ds.x.clone();
    let mut y = ds.y.clone();
    if !a.kernel.no_standardize {
        x = data_io::Standardizer::fit(&x).apply(&x)?;
        if ds.label_kind == data_io::LabelKind::Real {
            let mean = y.mean();
            let sd = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / y.len() as f64).sqrt();
            y = y.map(|v| (v - mean) / if sd > 0.0 { sd } else { 1.0 });
        }
    }
    let lengthscale = match lengthscale_choice(&a.kernel)? {
        LengthscaleChoice::Fixed(l) => l,
        LengthscaleChoice::MedianTimes(f) => f * kernels::median_heuristic(&x),
        _ => kernels::median_heuristic(&x),
    };
    let spec = match a.kernel.kernel {
        KernelArg::Rbf => KernelSpec::rbf(lengthscale),
        KernelArg::Linear => KernelSpec::linear(),
        KernelArg::BrownianBridge => KernelSpec::brownian_bridge(),
    };
    let k = GramCache::new(spec, &x)?;
    let zeta = a.sdr.zeta.unwrap_or_else(|| sdr::default_zeta(k.k()));
    let basis = match a.sdr.sdr {
        SdrArg::Ykernel => sdr::response_kernel_basis(&k, &y, zeta, a.sdr.zeta1, 1)?,
        SdrArg::Sliced => match (a.sdr.slices, ds.label_kind) {
            (None, data_io::LabelKind::Binary | data_io::LabelKind::Multiclass) => sdr::label_basis(&k, &y, zeta, 1)?,
            (s, _) => sdr::sliced_basis(&k, &y, s.map_or(sdr::default_slices(1), |v| v as usize), zeta, 1)?,
        },
    };
    let n = x.nrows();
    writeln!(out, "n: {n}")?;
    writeln!(out, "kernel: {} lengthscale {:.6}", spec.family.name(), spec.lengthscale)?;
    writeln!(out, "sdr: {} zeta {:.3e}", basis.method.name(), basis.zeta)?;
    for (j, t) in basis.spectrum.iter().take(a.top).enumerate() {
        writeln!(out, "tau[{}]: {t:.6}", j + 1)?;
    }
    writeln!(out, "rank_bound: {:.6}", sdr::rank_bound(n, a.sdr.delta)?)?;
    writeln!(out, "suggested_rank: {}", sdr::suggest_rank(&basis.spectrum, n, a.sdr.delta)?)?;
    Ok(())
}

fn bench_cmd(a: BenchArgs, out: &mut dyn Write) -> Result<()> {
    let sizes: Vec<usize> = parse_list(&a.n_list, "size")?;
    let rows = bench::bench_sizes(&sizes, a.rank as usize, a.iterations, a.seed)?;
    emit(&bench::to_csv(&rows), a.out.as_deref(), out)
}

fn grid_axis(lo: f64, hi: f64, g: usize) -> Vec<f64> {
    (0..g).map(|i| lo + (hi - lo) * i as f64 / (g - 1) as f64).collect()
}

/// Mean and 95% interval bounds.
fn interval_columns(d: &PredictiveDistribution, i: usize) -> [f64; 3] {
    let half = 1.96 * d.variance[i].sqrt();
    [d.mean[i], d.mean[i] - half, d.mean[i] + half]
}

fn plotdata(a: PlotArgs, out: &mut dyn Write) -> Result<()> {
    let model = model_io::load_model(&a.model)?;
    let baseline = a.baseline.as_deref().map(model_io::load_model).transpose()?;
    let g = a.grid as usize;
    let text = match a.experiment {
        Experiment::Sinusoid => {
            let (lo, hi) = a.range.as_deref().map(parse_range).transpose()?.unwrap_or((-6.0, 5.0));
            let xs = grid_axis(lo, hi, g);
            let z = DMatrix::from_column_slice(g, 1, &xs);
            let d = model.predict(&z)?;
            let b = baseline.as_ref().map(|m| m.predict(&z)).transpose()?;
            let mut header: Vec<String> = ["x", "sigp_mean", "sigp_lower", "sigp_upper"].map(String::from).to_vec();
            if b.is_some() {
                header.extend(["gp_mean", "gp_lower", "gp_upper"].map(String::from));
            }
            let rows = (0..g).map(|i| {
                let mut r = vec![xs[i]];
                r.extend(interval_columns(&d, i));
                if let Some(b) = &b {
                    r.extend(interval_columns(b, i));
                }
                r
            });
            data_io::csv_string(&header, rows)?
        }
        Experiment::Fourclass => {
            let (lo, hi) = a.range.as_deref().map(parse_range).transpose()?.unwrap_or((-2.0, 2.0));
            let axis = grid_axis(lo, hi, g);
            let z = DMatrix::from_fn(g * g, 2, |i, j| if j == 0 { axis[i / g] } else { axis[i % g] });
            let labels = model
                .predict_labels(&z)?
                .ok_or_else(|| Error::Data("four-class plot data needs a classifier model".into()))?;
            let mut header: Vec<String> = ["x1", "x2", "label"].map(String::from).to_vec();
            let scores: DMatrix<f64> = match &model.kind {
                ModelKind::OneVsRest(ovr) => {
                    header.extend(ovr.classes.iter().map(|c| format!("score_{c}")));
                    ovr.scores(&model.pre.apply(&z)?)?
                }
                _ => {
                    header.push("score".into());
                    let mean: DVector<f64> = model.predict(&z)?.mean;
                    DMatrix::from_column_slice(g * g, 1, mean.as_slice())
                }
            };
            let rows = (0..g * g).map(|i| {
                let mut r = vec![z[(i, 0)], z[(i, 1)], labels[i]];
                r.extend(scores.row(i).iter().copied());
                r
            });
            data_io::csv_string(&header, rows)?
        }
    };
    emit(&text, a.out.as_deref(), out)
}
