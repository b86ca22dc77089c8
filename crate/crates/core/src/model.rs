//! Differentiable objectives `F(x; ξ)` over small in-memory datasets.
//!
//! Sample indices are 0-based internally (`0..D`); the CSV format carries no
//! index column so this never leaks into files.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::{l2_norm_sq, ParamVector, RngStream};

/// Feature rows plus one target per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    dim: usize,
    features: Vec<f64>,
    labels: Vec<f64>,
}

impl Dataset {
    pub fn new(rows: Vec<Vec<f64>>, labels: Vec<f64>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::contract("dataset must contain at least one sample"));
        }
        if rows.len() != labels.len() {
            return Err(Error::contract(format!(
                "{} feature rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let dim = rows[0].len();
        if dim == 0 {
            return Err(Error::contract("feature dimension must be at least 1"));
        }
        let mut features = Vec::with_capacity(dim * rows.len());
        for row in &rows {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: row.len(),
                });
            }
            features.extend_from_slice(row);
        }
        Ok(Dataset {
            dim,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn label(&self, i: usize) -> f64 {
        self.labels[i]
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    /// Splits off the trailing `fraction` of samples as a held-out set.
    pub fn split_holdout(&self, fraction: f64) -> Result<(Dataset, Option<Dataset>)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::contract(format!(
                "holdout fraction must lie in [0, 1), got {fraction}"
            )));
        }
        let held = (self.len() as f64 * fraction).floor() as usize;
        if held == 0 {
            return Ok((self.clone(), None));
        }
        let keep = self.len() - held;
        let take = |range: std::ops::Range<usize>| Dataset {
            dim: self.dim,
            features: self.features[range.start * self.dim..range.end * self.dim].to_vec(),
            labels: self.labels[range].to_vec(),
        };
        Ok((take(0..keep), Some(take(keep..self.len()))))
    }

    /// Headered CSV: `x1,...,xd,label`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header: Vec<String> = (1..=self.dim).map(|j| format!("x{j}")).collect();
        header.push("label".to_string());
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            message,
        };
        let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
        let header = r.headers().map_err(csv_err)?.clone();
        if header.len() < 2 || &header[header.len() - 1] != "label" {
            return Err(parse_err("expected header x1,...,xd,label".into()));
        }
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let mut values = rec
                .iter()
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| parse_err(format!("row {}: {e}", line + 1)))
                })
                .collect::<Result<Vec<_>>>()?;
            let label = values.pop().ok_or_else(|| parse_err("empty row".into()))?;
            rows.push(values);
            labels.push(label);
        }
        Dataset::new(rows, labels)
    }
}

/// Indices `ξ` drawn i.i.d. with replacement from the dataset.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SampleBatch {
    pub indices: Vec<usize>,
}

impl SampleBatch {
    pub fn new(indices: Vec<usize>) -> Self {
        SampleBatch { indices }
    }

    pub fn draw(data_len: usize, size: usize, rng: &mut RngStream) -> Self {
        SampleBatch {
            indices: (0..size).map(|_| rng.draw_index(data_len)).collect(),
        }
    }

    /// Every index of the dataset exactly once.
    pub fn full(data_len: usize) -> Self {
        SampleBatch {
            indices: (0..data_len).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    LogisticRegression,
    TwoLayerMlp,
    Quadratic,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::LogisticRegression => "logistic",
            ModelKind::TwoLayerMlp => "mlp",
            ModelKind::Quadratic => "quadratic",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logistic" | "logistic-regression" => Ok(ModelKind::LogisticRegression),
            "mlp" | "two-layer-mlp" => Ok(ModelKind::TwoLayerMlp),
            "quadratic" => Ok(ModelKind::Quadratic),
            other => Err(Error::config(format!("unknown model kind '{other}'"))),
        }
    }
}

/// A per-sample objective `F(x; ξ)`.
///
/// * `LogisticRegression`: binary cross-entropy of `sigmoid(w·a)`, no bias.
/// * `TwoLayerMlp`: `tanh` hidden layer then a sigmoid output unit with the
///   same loss. Parameters are laid out as `W1` (row-major, hidden × input),
///   `b1`, `w2`, `b2`.
/// * `Quadratic`: `½ Σ_j c_j (x_j − a_j)²` where `a` is the sample's feature
///   row; labels are ignored. Curvature is known exactly, which makes it the
///   reference objective for the smoothness and variance estimators.
#[derive(Debug, Clone, PartialEq)]
pub enum Model {
    LogisticRegression { dim: usize },
    TwoLayerMlp { input: usize, hidden: usize },
    Quadratic { curvature: Vec<f64> },
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::LogisticRegression { .. } => ModelKind::LogisticRegression,
            Model::TwoLayerMlp { .. } => ModelKind::TwoLayerMlp,
            Model::Quadratic { .. } => ModelKind::Quadratic,
        }
    }

    /// Flat parameter count.
    pub fn dim(&self) -> usize {
        match self {
            Model::LogisticRegression { dim } => *dim,
            Model::TwoLayerMlp { input, hidden } => hidden * input + 2 * hidden + 1,
            Model::Quadratic { curvature } => curvature.len(),
        }
    }

    /// Feature dimension the model expects from a dataset.
    pub fn input_dim(&self) -> usize {
        match self {
            Model::LogisticRegression { dim } => *dim,
            Model::TwoLayerMlp { input, .. } => *input,
            Model::Quadratic { curvature } => curvature.len(),
        }
    }

    pub fn check_data(&self, data: &Dataset) -> Result<()> {
        if data.dim() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                found: data.dim(),
            });
        }
        Ok(())
    }

    fn check_params(&self, x: &ParamVector) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    /// Starting point: zeros, except the MLP which needs symmetry breaking.
    pub fn init_params(&self, rng: &mut RngStream) -> ParamVector {
        match self {
            Model::TwoLayerMlp { input, hidden } => {
                let scale = 1.0 / (*input as f64).sqrt();
                let mut v = vec![0.0; self.dim()];
                let (w1, rest) = v.split_at_mut(hidden * input);
                for w in w1.iter_mut() {
                    *w = scale * rng.draw_normal();
                }
                let w2 = &mut rest[*hidden..2 * hidden];
                let out_scale = 1.0 / (*hidden as f64).sqrt();
                for w in w2.iter_mut() {
                    *w = out_scale * rng.draw_normal();
                }
                ParamVector::from_vec(v)
            }
            _ => ParamVector::zeros(self.dim()),
        }
    }

    /// Loss of one sample; if `grad` is given, adds `∇F(x; ξ)` into it.
    fn sample_eval(&self, x: &[f64], row: &[f64], label: f64, grad: Option<&mut [f64]>) -> f64 {
        match self {
            Model::LogisticRegression { .. } => {
                let z: f64 = x.iter().zip(row).map(|(w, a)| w * a).sum();
                if let Some(g) = grad {
                    let r = sigmoid(z) - label;
                    for (gj, aj) in g.iter_mut().zip(row) {
                        *gj += r * aj;
                    }
                }
                bce_with_logit(z, label)
            }
            Model::TwoLayerMlp { input, hidden } => {
                let (input, hidden) = (*input, *hidden);
                let (w1, rest) = x.split_at(hidden * input);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(hidden);
                let mut h = vec![0.0; hidden];
                for (k, hk) in h.iter_mut().enumerate() {
                    let pre: f64 = w1[k * input..(k + 1) * input]
                        .iter()
                        .zip(row)
                        .map(|(w, a)| w * a)
                        .sum::<f64>()
                        + b1[k];
                    *hk = pre.tanh();
                }
                let z = h.iter().zip(w2).map(|(a, b)| a * b).sum::<f64>() + b2[0];
                if let Some(g) = grad {
                    let dz = sigmoid(z) - label;
                    let (gw1, grest) = g.split_at_mut(hidden * input);
                    let (gb1, grest) = grest.split_at_mut(hidden);
                    let (gw2, gb2) = grest.split_at_mut(hidden);
                    gb2[0] += dz;
                    for k in 0..hidden {
                        gw2[k] += dz * h[k];
                        let da = dz * w2[k] * (1.0 - h[k] * h[k]);
                        gb1[k] += da;
                        for (gw, a) in gw1[k * input..(k + 1) * input].iter_mut().zip(row) {
                            *gw += da * a;
                        }
                    }
                }
                bce_with_logit(z, label)
            }
            Model::Quadratic { curvature } => {
                let mut loss = 0.0;
                match grad {
                    Some(g) => {
                        for j in 0..curvature.len() {
                            let diff = x[j] - row[j];
                            g[j] += curvature[j] * diff;
                            loss += 0.5 * curvature[j] * diff * diff;
                        }
                    }
                    None => {
                        for j in 0..curvature.len() {
                            let diff = x[j] - row[j];
                            loss += 0.5 * curvature[j] * diff * diff;
                        }
                    }
                }
                loss
            }
        }
    }

    /// Probability of the positive class; `None` for the quadratic objective.
    pub fn predict(&self, x: &ParamVector, row: &[f64]) -> Option<f64> {
        match self {
            Model::Quadratic { .. } => None,
            Model::LogisticRegression { .. } => {
                Some(sigmoid(x.as_slice().iter().zip(row).map(|(w, a)| w * a).sum()))
            }
            Model::TwoLayerMlp { input, hidden } => {
                let (input, hidden) = (*input, *hidden);
                let x = x.as_slice();
                let (w1, rest) = x.split_at(hidden * input);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(hidden);
                let z = (0..hidden)
                    .map(|k| {
                        let pre: f64 = w1[k * input..(k + 1) * input]
                            .iter()
                            .zip(row)
                            .map(|(w, a)| w * a)
                            .sum::<f64>()
                            + b1[k];
                        pre.tanh() * w2[k]
                    })
                    .sum::<f64>()
                    + b2[0];
                Some(sigmoid(z))
            }
        }
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z) − y z`, stable for large `|z|`.
fn bce_with_logit(z: f64, y: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p() - y * z
}

/// Mean of `F(x; ξ)` over the batch.
pub fn loss(model: &Model, x: &ParamVector, batch: &SampleBatch, data: &Dataset) -> Result<f64> {
    model.check_params(x)?;
    model.check_data(data)?;
    if batch.is_empty() {
        return Err(Error::contract("loss of an empty batch is undefined"));
    }
    let xs = x.as_slice();
    let total: f64 = batch
        .indices
        .iter()
        .map(|&i| model.sample_eval(xs, data.row(i), data.label(i), None))
        .sum();
    Ok(total / batch.len() as f64)
}

/// Unnormalized `Σ_j ∇F(x; ξ_j)` over the batch.
pub fn grad_sum(model: &Model, x: &ParamVector, batch: &SampleBatch, data: &Dataset) -> Result<ParamVector> {
    model.check_params(x)?;
    model.check_data(data)?;
    let mut g = ParamVector::zeros(model.dim());
    accumulate_grad(model, x, &batch.indices, data, &mut g);
    Ok(g)
}

/// Adds `Σ ∇F(x; ξ)` over `indices` into `out`. Dimensions are the caller's
/// responsibility.
pub(crate) fn accumulate_grad(model: &Model, x: &ParamVector, indices: &[usize], data: &Dataset, out: &mut ParamVector) {
    let xs = x.as_slice();
    let g = out.as_mut_slice();
    for &i in indices {
        model.sample_eval(xs, data.row(i), data.label(i), Some(&mut *g));
    }
}

pub fn full_loss(model: &Model, x: &ParamVector, data: &Dataset) -> Result<f64> {
    loss(model, x, &SampleBatch::full(data.len()), data)
}

/// Exact mean gradient over all samples.
pub fn full_gradient(model: &Model, x: &ParamVector, data: &Dataset) -> Result<ParamVector> {
    let mut g = grad_sum(model, x, &SampleBatch::full(data.len()), data)?;
    g.scale(1.0 / data.len() as f64);
    Ok(g)
}

/// Full-data loss and gradient in one pass.
pub fn full_loss_and_gradient(model: &Model, x: &ParamVector, data: &Dataset) -> Result<(f64, ParamVector)> {
    model.check_params(x)?;
    model.check_data(data)?;
    let xs = x.as_slice();
    let mut g = ParamVector::zeros(model.dim());
    let mut total = 0.0;
    {
        let gs = g.as_mut_slice();
        for i in 0..data.len() {
            total += model.sample_eval(xs, data.row(i), data.label(i), Some(&mut *gs));
        }
    }
    let inv = 1.0 / data.len() as f64;
    g.scale(inv);
    Ok((total * inv, g))
}

/// Fraction of samples whose thresholded prediction matches the label.
pub fn accuracy(model: &Model, x: &ParamVector, data: &Dataset) -> Result<f64> {
    model.check_params(x)?;
    model.check_data(data)?;
    let mut correct = 0usize;
    for i in 0..data.len() {
        let p = model
            .predict(x, data.row(i))
            .ok_or_else(|| Error::contract("accuracy is undefined for the quadratic objective"))?;
        let predicted = if p >= 0.5 { 1.0 } else { 0.0 };
        if predicted == data.label(i) {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Binary classification data from a Gaussian design and a ground-truth
/// weight vector; each label is flipped with probability `noise`.
///
/// Returns the dataset and the ground-truth weights.
pub fn generate_synthetic(d: usize, n_samples: usize, noise: f64, rng: &mut RngStream) -> Result<(Dataset, ParamVector)> {
    let (data, truth, _) = generate_synthetic_with_clean_labels(d, n_samples, noise, 1.0, rng)?;
    Ok((data, truth))
}

/// As [`generate_synthetic`], with features scaled by `feature_scale` and the
/// pre-flip labels returned as well.
pub fn generate_synthetic_with_clean_labels(
    d: usize,
    n_samples: usize,
    noise: f64,
    feature_scale: f64,
    rng: &mut RngStream,
) -> Result<(Dataset, ParamVector, Vec<f64>)> {
    if d == 0 || n_samples == 0 {
        return Err(Error::contract("synthetic data needs d >= 1 and D >= 1"));
    }
    if !(0.0..=1.0).contains(&noise) {
        return Err(Error::contract(format!("label noise must lie in [0, 1], got {noise}")));
    }
    if !(feature_scale > 0.0) {
        return Err(Error::contract("feature scale must be positive"));
    }
    let truth = ParamVector::from_vec((0..d).map(|_| rng.draw_normal()).collect());
    let mut rows = Vec::with_capacity(n_samples);
    let mut labels = Vec::with_capacity(n_samples);
    let mut clean = Vec::with_capacity(n_samples);
    for _ in 0..n_samples {
        let row: Vec<f64> = (0..d).map(|_| feature_scale * rng.draw_normal()).collect();
        let margin: f64 = row.iter().zip(truth.as_slice()).map(|(a, w)| a * w).sum();
        let y = if margin > 0.0 { 1.0 } else { 0.0 };
        let flipped = if rng.draw_bernoulli(noise) { 1.0 - y } else { y };
        rows.push(row);
        clean.push(y);
        labels.push(flipped);
    }
    Ok((Dataset::new(rows, labels)?, truth, clean))
}

/// Empirical `E‖g(x; ξ) − ∇f(x)‖²` from `samples` single-sample gradients,
/// centred on the exact full gradient.
pub fn estimate_sigma_sq(model: &Model, x: &ParamVector, data: &Dataset, samples: usize, rng: &mut RngStream) -> Result<f64> {
    if samples < 2 {
        return Err(Error::contract("estimate_sigma_sq needs at least 2 samples"));
    }
    let full = full_gradient(model, x, data)?;
    let mut total = 0.0;
    let mut g = ParamVector::zeros(model.dim());
    for _ in 0..samples {
        let i = rng.draw_index(data.len());
        g.as_mut_slice().fill(0.0);
        accumulate_grad(model, x, &[i], data, &mut g);
        total += l2_norm_sq(&g.sub(&full)?);
    }
    Ok(total / samples as f64)
}

/// Largest secant ratio `‖∇f(x) − ∇f(y)‖ / ‖x − y‖` over `probes` random
/// pairs drawn from the cube `[−radius, radius]^n`. A lower bound on the
/// smoothness constant.
pub fn estimate_lipschitz(model: &Model, data: &Dataset, probes: usize, radius: f64, rng: &mut RngStream) -> Result<f64> {
    let trace = lipschitz_probe_trace(model, data, probes, radius, rng)?;
    Ok(trace.last().copied().unwrap_or(0.0))
}

/// Running maximum after each probe; the last entry is the estimate.
pub fn lipschitz_probe_trace(model: &Model, data: &Dataset, probes: usize, radius: f64, rng: &mut RngStream) -> Result<Vec<f64>> {
    if probes == 0 {
        return Err(Error::contract("estimate_lipschitz needs at least one probe"));
    }
    if !(radius > 0.0) {
        return Err(Error::contract("estimate_lipschitz needs a positive radius"));
    }
    let n = model.dim();
    let mut best = 0.0f64;
    let mut trace = Vec::with_capacity(probes);
    for _ in 0..probes {
        let x = ParamVector::from_vec((0..n).map(|_| radius * (2.0 * rng.next_unit() - 1.0)).collect());
        let y = ParamVector::from_vec((0..n).map(|_| radius * (2.0 * rng.next_unit() - 1.0)).collect());
        let dx = l2_norm_sq(&x.sub(&y)?).sqrt();
        if dx > 0.0 {
            let dg = l2_norm_sq(&full_gradient(model, &x, data)?.sub(&full_gradient(model, &y, data)?)?).sqrt();
            best = best.max(dg / dx);
        }
        trace.push(best);
    }
    Ok(trace)
}

/// Full-batch gradient descent used as the `f(x*)` oracle. Stops early once
/// the squared gradient norm drops below `tol`.
pub fn minimize_full_batch(
    model: &Model,
    data: &Dataset,
    start: &ParamVector,
    step: f64,
    max_iters: usize,
    tol: f64,
) -> Result<(ParamVector, f64)> {
    let mut x = start.clone();
    for _ in 0..max_iters {
        let g = full_gradient(model, &x, data)?;
        if l2_norm_sq(&g) < tol {
            break;
        }
        x.add_scaled(-step, &g)?;
    }
    let f = full_loss(model, &x, data)?;
    Ok((x, f))
}
