//! JSON model files. Floats are written in shortest round-trip form, so a save/load cycle
//! reproduces every parameter bit for bit.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde_json::{json, Map, Value};

use crate::baseline_gp::{ExactGpModel, MeanKind};
use crate::data_io::{write_atomic, Standardizer};
use crate::error::{Error, Result};
use crate::kernels::{KernelFamily, KernelSpec};
use crate::pipeline::{ModelKind, Preprocessing, TrainedModel};
use crate::sigp::{OneVsRest, SigpModel};

pub const FORMAT_VERSION: u64 = 1;
pub const SIGP_FORMAT: &str = "sigp-model";
pub const OVR_FORMAT: &str = "sigp-ovr-model";
pub const EXACT_GP_FORMAT: &str = "exact-gp-model";

fn num(v: f64, what: &str) -> Result<Value> {
    serde_json::Number::from_f64(v)
        .map(Value::Number)
        .ok_or_else(|| Error::Numerical(format!("cannot store non-finite {what}")))
}

fn vector(v: &DVector<f64>, what: &str) -> Result<Value> {
    v.iter().map(|&x| num(x, what)).collect::<Result<Vec<_>>>().map(Value::Array)
}

fn matrix(a: &DMatrix<f64>, what: &str) -> Result<Value> {
    a.row_iter()
        .map(|row| row.iter().map(|&x| num(x, what)).collect::<Result<Vec<_>>>().map(Value::Array))
        .collect::<Result<Vec<_>>>()
        .map(Value::Array)
}

fn kernel_json(k: &KernelSpec) -> Result<Value> {
    Ok(json!({
        "family": k.family.name(),
        "lengthscale": num(k.lengthscale, "lengthscale")?,
        "variance_scale": num(k.variance_scale, "variance scale")?,
    }))
}

fn preprocessing_json(p: &Preprocessing) -> Result<Value> {
    Ok(json!({
        "input_dim": p.input_dim,
        "kept_features": p.standardizer.kept,
        "feature_means": vector(&p.standardizer.means, "feature mean")?,
        "feature_stds": vector(&p.standardizer.stds, "feature std")?,
        "target_shift": num(p.target_shift, "target shift")?,
        "target_scale": num(p.target_scale, "target scale")?,
    }))
}

fn sigp_fields(m: &SigpModel) -> Result<Map<String, Value>> {
    let v = json!({
        "kernel": kernel_json(&m.kernel)?,
        "n": m.n(),
        "d": m.d(),
        "m": m.m(),
        "X_train": matrix(&m.x_train, "training input")?,
        "W": matrix(&m.w, "W")?,
        "Sigma_beta": matrix(&m.sigma_beta, "Sigma_beta")?,
        "sigma2": num(m.sigma2, "sigma2")?,
        "alpha": vector(&m.alpha, "alpha")?,
        "c": num(m.c, "c")?,
        "train_K_row_means": vector(&m.train_k_row_means, "row mean")?,
        "beta_mean": vector(&m.beta_mean, "beta mean")?,
        "beta_cov": matrix(&m.beta_cov, "beta covariance")?,
    });
    match v {
        Value::Object(map) => Ok(map),
        _ => unreachable!(),
    }
}

fn header(format: &str) -> Map<String, Value> {
    let mut map = Map::new();
    map.insert("format".into(), json!(format));
    map.insert("format_version".into(), json!(FORMAT_VERSION));
    map
}

/// Serialize a trained model to pretty-printed JSON.
pub fn to_json(model: &TrainedModel) -> Result<String> {
    let mut out = match &model.kind {
        ModelKind::Sigp(m) => {
            let mut map = header(SIGP_FORMAT);
            map.extend(sigp_fields(m)?);
            map
        }
        ModelKind::Binary { classes, model: m } => {
            let mut map = header(SIGP_FORMAT);
            map.extend(sigp_fields(m)?);
            map.insert("classes".into(), json!([num(classes[0], "class")?, num(classes[1], "class")?]));
            map
        }
        ModelKind::OneVsRest(ovr) => {
            let mut map = header(OVR_FORMAT);
            let classes = ovr.classes.iter().map(|&c| num(c, "class")).collect::<Result<Vec<_>>>()?;
            map.insert("classes".into(), Value::Array(classes));
            let models = ovr.models.iter().map(|m| sigp_fields(m).map(Value::Object)).collect::<Result<Vec<_>>>()?;
            map.insert("models".into(), Value::Array(models));
            map
        }
        ModelKind::ExactGp(m) => {
            let mut map = header(EXACT_GP_FORMAT);
            map.insert("kernel".into(), kernel_json(&m.kernel)?);
            map.insert("n".into(), json!(m.n()));
            map.insert("d".into(), json!(m.d()));
            map.insert("X_train".into(), matrix(&m.x_train, "training input")?);
            map.insert("noise2".into(), num(m.noise2, "noise variance")?);
            map.insert("dual_weights".into(), vector(&m.dual_weights, "dual weight")?);
            map.insert("mean".into(), json!(m.mean.name()));
            map.insert("mean_coef".into(), vector(&m.mean_coef, "mean coefficient")?);
            map
        }
    };
    out.insert("preprocessing".into(), preprocessing_json(&model.pre)?);
    let mut s = serde_json::to_string_pretty(&Value::Object(out)).map_err(|e| Error::Data(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

pub fn save_model(model: &TrainedModel, path: &Path) -> Result<()> {
    write_atomic(path, to_json(model)?.as_bytes())
}

fn field<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a Value> {
    obj.get(key).ok_or_else(|| Error::Data(format!("model file: missing field '{key}'")))
}

fn get_f64(obj: &Map<String, Value>, key: &str) -> Result<f64> {
    field(obj, key)?.as_f64().ok_or_else(|| Error::Data(format!("model file: '{key}' is not a number")))
}

fn get_usize(obj: &Map<String, Value>, key: &str) -> Result<usize> {
    field(obj, key)?
        .as_u64()
        .map(|v| v as usize)
        .ok_or_else(|| Error::Data(format!("model file: '{key}' is not a non-negative integer")))
}

fn get_str<'a>(obj: &'a Map<String, Value>, key: &str) -> Result<&'a str> {
    field(obj, key)?.as_str().ok_or_else(|| Error::Data(format!("model file: '{key}' is not a string")))
}

fn floats(v: &Value, key: &str) -> Result<Vec<f64>> {
    let bad = || Error::Data(format!("model file: '{key}' must be an array of numbers"));
    v.as_array().ok_or_else(bad)?.iter().map(|x| x.as_f64().ok_or_else(bad)).collect()
}

fn get_vector(obj: &Map<String, Value>, key: &str, len: usize) -> Result<DVector<f64>> {
    let v = floats(field(obj, key)?, key)?;
    if v.len() != len {
        return Err(Error::Dimension(format!("model file: '{key}' has {} entries, expected {len}", v.len())));
    }
    Ok(DVector::from_vec(v))
}

fn get_matrix(obj: &Map<String, Value>, key: &str, rows: usize, cols: usize) -> Result<DMatrix<f64>> {
    let bad = || Error::Dimension(format!("model file: '{key}' must be a {rows}x{cols} array"));
    let outer = field(obj, key)?.as_array().ok_or_else(bad)?;
    if outer.len() != rows {
        return Err(bad());
    }
    let mut data = Vec::with_capacity(rows * cols);
    for row in outer {
        let r = floats(row, key)?;
        if r.len() != cols {
            return Err(bad());
        }
        data.extend(r);
    }
    Ok(DMatrix::from_row_slice(rows, cols, &data))
}

fn object<'a>(v: &'a Value, what: &str) -> Result<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| Error::Data(format!("model file: {what} must be an object")))
}

fn read_kernel(obj: &Map<String, Value>) -> Result<KernelSpec> {
    let k = object(field(obj, "kernel")?, "kernel")?;
    let spec = KernelSpec {
        family: KernelFamily::parse(get_str(k, "family")?)?,
        lengthscale: get_f64(k, "lengthscale")?,
        variance_scale: get_f64(k, "variance_scale")?,
    };
    spec.validate()?;
    Ok(spec)
}

fn read_sigp(obj: &Map<String, Value>) -> Result<SigpModel> {
    let (n, d, m) = (get_usize(obj, "n")?, get_usize(obj, "d")?, get_usize(obj, "m")?);
    let model = SigpModel {
        kernel: read_kernel(obj)?,
        x_train: get_matrix(obj, "X_train", n, d)?,
        w: get_matrix(obj, "W", n, m)?,
        sigma_beta: get_matrix(obj, "Sigma_beta", m, m)?,
        sigma2: get_f64(obj, "sigma2")?,
        alpha: get_vector(obj, "alpha", m)?,
        c: get_f64(obj, "c")?,
        train_k_row_means: get_vector(obj, "train_K_row_means", n)?,
        beta_mean: get_vector(obj, "beta_mean", m)?,
        beta_cov: get_matrix(obj, "beta_cov", m, m)?,
    };
    model.validate()?;
    Ok(model)
}

fn read_preprocessing(obj: &Map<String, Value>, model_dim: usize) -> Result<Preprocessing> {
    let p = object(field(obj, "preprocessing")?, "preprocessing")?;
    let input_dim = get_usize(p, "input_dim")?;
    let kept: Vec<usize> = field(p, "kept_features")?
        .as_array()
        .and_then(|a| a.iter().map(|v| v.as_u64().map(|j| j as usize)).collect::<Option<Vec<_>>>())
        .ok_or_else(|| Error::Data("model file: 'kept_features' must be an array of indices".into()))?;
    if kept.len() != model_dim || kept.iter().any(|&j| j >= input_dim) {
        return Err(Error::Dimension("model file: preprocessing does not match the model inputs".into()));
    }
    let k = kept.len();
    Ok(Preprocessing {
        input_dim,
        standardizer: Standardizer {
            means: get_vector(p, "feature_means", k)?,
            stds: get_vector(p, "feature_stds", k)?,
            kept,
        },
        target_shift: get_f64(p, "target_shift")?,
        target_scale: get_f64(p, "target_scale")?,
    })
}

/// Parse a model file produced by [`to_json`].
pub fn from_json(text: &str) -> Result<TrainedModel> {
    let root: Value = serde_json::from_str(text).map_err(|e| Error::Parse { line: e.line(), msg: e.to_string() })?;
    let obj = object(&root, "the top level")?;
    let version = get_usize(obj, "format_version")?;
    if version as u64 != FORMAT_VERSION {
        return Err(Error::Data(format!("unsupported model format version {version}")));
    }
    let (kind, dim) = match get_str(obj, "format")? {
        SIGP_FORMAT => {
            let m = read_sigp(obj)?;
            let dim = m.d();
            let kind = match obj.get("classes") {
                None => ModelKind::Sigp(m),
                Some(c) => {
                    let c = floats(c, "classes")?;
                    if c.len() != 2 {
                        return Err(Error::Data("model file: binary model needs two classes".into()));
                    }
                    ModelKind::Binary { classes: [c[0], c[1]], model: m }
                }
            };
            (kind, dim)
        }
        OVR_FORMAT => {
            let classes = floats(field(obj, "classes")?, "classes")?;
            let models = field(obj, "models")?
                .as_array()
                .ok_or_else(|| Error::Data("model file: 'models' must be an array".into()))?
                .iter()
                .map(|v| object(v, "a class model").and_then(read_sigp))
                .collect::<Result<Vec<_>>>()?;
            if models.len() != classes.len() || models.len() < 2 {
                return Err(Error::Data("model file: one model per class required".into()));
            }
            let dim = models[0].d();
            if models.iter().any(|m| m.d() != dim) {
                return Err(Error::Dimension("model file: class models disagree on input dimension".into()));
            }
            (ModelKind::OneVsRest(OneVsRest { classes, models }), dim)
        }
        EXACT_GP_FORMAT => {
            let (n, d) = (get_usize(obj, "n")?, get_usize(obj, "d")?);
            let mean = MeanKind::parse(get_str(obj, "mean")?)?;
            let coef_len = field(obj, "mean_coef")?.as_array().map_or(0, |a| a.len());
            let m = ExactGpModel::from_parts(
                read_kernel(obj)?,
                get_f64(obj, "noise2")?,
                get_matrix(obj, "X_train", n, d)?,
                get_vector(obj, "dual_weights", n)?,
                mean,
                get_vector(obj, "mean_coef", coef_len)?,
            )?;
            (ModelKind::ExactGp(m), d)
        }
        other => return Err(Error::Data(format!("unknown model format '{other}'"))),
    };
    Ok(TrainedModel { pre: read_preprocessing(obj, dim)?, kind })
}

pub fn load_model(path: &Path) -> Result<TrainedModel> {
    from_json(&std::fs::read_to_string(path)?)
}
