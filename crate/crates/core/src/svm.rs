//! Linear soft-margin SVM and the z-score standardizer that feeds it.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::model::{FeatureScale, ModelArtifact, Orientation};

/// Default soft-margin penalty.
pub const DEFAULT_C: f64 = 1.0;
/// Stopping tolerance on the maximal KKT violation of the dual.
const KKT_TOLERANCE: f64 = 1e-10;
const MAX_ITERATIONS: usize = 10_000_000;
const TAU: f64 = 1e-12;

/// Column means and population standard deviations of a training matrix.
pub fn fit_standardizer(x: ArrayView2<f64>, names: &[String]) -> Result<Vec<FeatureScale>> {
    let n = x.nrows();
    if n == 0 {
        return Err(Error::invalid("cannot standardize an empty matrix"));
    }
    x.axis_iter(Axis(1))
        .enumerate()
        .map(|(j, col)| {
            let mean = col.sum() / n as f64;
            let sd = (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            if !(sd > 0.0) {
                let name = names.get(j).map_or_else(|| format!("column {j}"), |s| format!("`{s}`"));
                return Err(Error::invalid(format!("feature {name} is constant in the training data")));
            }
            Ok(FeatureScale { mean, sd })
        })
        .collect()
}

pub fn apply_standardizer(x: ArrayView2<f64>, scales: &[FeatureScale]) -> Result<Array2<f64>> {
    if x.ncols() != scales.len() {
        return Err(Error::invalid(format!("{} columns for {} scales", x.ncols(), scales.len())));
    }
    let mut z = x.to_owned();
    for (mut col, s) in z.axis_iter_mut(Axis(1)).zip(scales) {
        col.mapv_inplace(|v| (v - s.mean) / s.sd);
    }
    Ok(z)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SvmFit {
    pub weights: Array1<f64>,
    pub bias: f64,
    /// Dual coefficients, one per training sample.
    pub alpha: Array1<f64>,
    pub iterations: usize,
    /// Maximal KKT violation of the returned dual point.
    pub kkt_gap: f64,
}

/// ½‖w‖² + C Σ max(0, 1 − yᵢ(w·xᵢ + b)).
pub fn primal_objective(x: ArrayView2<f64>, y: &[f64], w: ArrayView1<f64>, b: f64, c: f64) -> f64 {
    let hinge: f64 = x
        .outer_iter()
        .zip(y)
        .map(|(row, &yi)| (1.0 - yi * (row.dot(&w) + b)).max(0.0))
        .sum();
    0.5 * w.dot(&w) + c * hinge
}

/// Solves the dual of the soft-margin problem by sequential minimal
/// optimization with second-order working-set selection. Labels are ±1.
pub fn train_linear_svm(x: ArrayView2<f64>, y: &[f64], c: f64) -> Result<SvmFit> {
    let n = x.nrows();
    if y.len() != n {
        return Err(Error::invalid(format!("{} labels for {n} samples", y.len())));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid("C must be positive and finite"));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::invalid("labels must be +1 or -1"));
    }
    if !(y.contains(&1.0) && y.contains(&-1.0)) {
        return Err(Error::invalid("training data holds a single class"));
    }
    let k = x.dot(&x.t());
    let q = |i: usize, j: usize| y[i] * y[j] * k[[i, j]];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;

    let mut iterations = 0;
    let mut gap;
    loop {
        // i maximizes -y G over the indices that may move up.
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            let v = -y[t] * grad[t];
            let movable = if y[t] > 0.0 { !upper(alpha[t]) } else { !lower(alpha[t]) };
            if movable && v > gmax {
                gmax = v;
                i = t;
            }
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let movable = if y[t] > 0.0 { !lower(alpha[t]) } else { !upper(alpha[t]) };
            if !movable {
                continue;
            }
            let v = y[t] * grad[t];
            gmax2 = gmax2.max(v);
            if i == usize::MAX {
                continue;
            }
            let diff = gmax + v;
            if diff > 0.0 {
                let a = k[[i, i]] + k[[t, t]] - 2.0 * k[[i, t]];
                let obj = -diff * diff / if a > 0.0 { a } else { TAU };
                if obj < best {
                    best = obj;
                    j = t;
                }
            }
        }
        gap = gmax + gmax2;
        if gap < KKT_TOLERANCE || j == usize::MAX || iterations >= MAX_ITERATIONS {
            break;
        }
        iterations += 1;

        let (old_i, old_j) = (alpha[i], alpha[j]);
        if y[i] != y[j] {
            let quad = (k[[i, i]] + k[[j, j]] + 2.0 * q(i, j)).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (k[[i, i]] + k[[j, j]] - 2.0 * q(i, j)).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += q(i, t) * di + q(j, t) * dj;
        }
    }
    if iterations >= MAX_ITERATIONS {
        log::warn!("SVM solver stopped at the iteration cap with KKT gap {gap:e}");
    }

    // Bias from free vectors, else the midpoint of the feasible interval.
    let (mut free_sum, mut free_n) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free_sum += yg;
            free_n += 1;
        }
    }
    let rho = if free_n > 0 { free_sum / free_n as f64 } else { 0.5 * (ub + lb) };

    let coef: Array1<f64> = alpha.iter().zip(y).map(|(a, yi)| a * yi).collect();
    let weights = x.t().dot(&coef);
    Ok(SvmFit {
        weights,
        bias: -rho,
        alpha: Array1::from(alpha),
        iterations,
        kkt_gap: gap.max(0.0),
    })
}

/// Standardizes on `x`, fits the SVM, and packages a scoring model.
pub fn fit_model(x: ArrayView2<f64>, y: &[f64], names: &[String], c: f64) -> Result<ModelArtifact> {
    let scales = fit_standardizer(x, names)?;
    let z = apply_standardizer(x, &scales)?;
    let fit = train_linear_svm(z.view(), y, c)?;
    Ok(ModelArtifact {
        selected_features: names.to_vec(),
        standardizer: scales,
        weights: fit.weights.to_vec(),
        bias: fit.bias,
        decision_threshold: 0.0,
        orientation: Orientation::HigherScoreMeansMalignant,
    })
}

/// `w · standardize(x) + b` for values given in the model's feature order.
pub fn decision_score(model: &ModelArtifact, x: &[f64]) -> Result<f64> {
    if x.len() != model.weights.len() {
        return Err(Error::invalid(format!(
            "model expects {} features, got {}",
            model.weights.len(),
            x.len()
        )));
    }
    Ok(model
        .weights
        .iter()
        .zip(&model.standardizer)
        .zip(x)
        .map(|((w, s), v)| w * (v - s.mean) / s.sd)
        .sum::<f64>()
        + model.bias)
}

/// Scores a sample given by feature name; every selected feature must be present.
pub fn decision_score_named(model: &ModelArtifact, lookup: impl Fn(&str) -> Option<f64>) -> Result<f64> {
    let x = model
        .selected_features
        .iter()
        .map(|n| lookup(n).ok_or_else(|| Error::invalid(format!("missing feature `{n}`"))))
        .collect::<Result<Vec<_>>>()?;
    decision_score(model, &x)
}
