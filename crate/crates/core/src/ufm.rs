//! The unconstrained-feature-model objective with pick-all-labels cross-entropy.
//!
//! ```text
//! f(W, H, b) = (1/N) Σ_i Σ_{k ∈ S_i} −log softmax(W h_i + b)_k
//!              + λ_W ‖W‖_F² + λ_H ‖H‖_F² + λ_b ‖b‖²
//! ```
//!
//! Gradients and Hessian–vector products are analytic. The per-sample logit
//! gradient is `m·p − 𝕀_S` and the per-sample logit Hessian is
//! `m·(diag(p) − p pᵀ)`, where `p = softmax(z)` and `m = |S|`.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::{Dataset, LabelSet};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Feature dimension.
    pub d: usize,
    pub lambda_w: f64,
    pub lambda_h: f64,
    pub lambda_b: f64,
    /// Multiplier on the data term; 1 for the actual objective. Setting it to
    /// 0 leaves only the regularizers, which is useful as a diagnostic.
    #[serde(default = "unit_weight")]
    pub loss_weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl Hyperparams {
    pub fn new(d: usize, lambda_w: f64, lambda_h: f64, lambda_b: f64) -> Self {
        Hyperparams {
            d,
            lambda_w,
            lambda_h,
            lambda_b,
            loss_weight: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return Err(Error::arg("feature dimension must be positive"));
        }
        if !(self.lambda_w > 0.0 && self.lambda_h > 0.0) {
            return Err(Error::arg("lambda_W and lambda_H must be positive"));
        }
        if !(self.lambda_b >= 0.0) {
            return Err(Error::arg("lambda_b must be nonnegative"));
        }
        if !(self.loss_weight.is_finite() && self.loss_weight >= 0.0) {
            return Err(Error::arg("loss weight must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// Optimization variables: classifier `W` (K×d), features `H` (d×N), bias `b` (K).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub w: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub b: DVector<f64>,
}

impl ModelState {
    pub fn zeros(num_classes: usize, d: usize, n: usize) -> Self {
        ModelState {
            w: DMatrix::zeros(num_classes, d),
            h: DMatrix::zeros(d, n),
            b: DVector::zeros(num_classes),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.w.nrows()
    }

    pub fn dim(&self) -> usize {
        self.w.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.w.iter().chain(self.h.iter()).chain(self.b.iter()).all(|v| v.is_finite())
    }

    pub fn norm(&self) -> f64 {
        (self.w.norm_squared() + self.h.norm_squared() + self.b.norm_squared()).sqrt()
    }

    /// `self + scale·dir`.
    pub fn moved(&self, dir: &Gradient, scale: f64) -> ModelState {
        ModelState {
            w: &self.w + &dir.dw * scale,
            h: &self.h + &dir.dh * scale,
            b: &self.b + &dir.db * scale,
        }
    }

    /// Difference `self − other` as a direction.
    pub fn diff(&self, other: &ModelState) -> Gradient {
        Gradient {
            dw: &self.w - &other.w,
            dh: &self.h - &other.h,
            db: &self.b - &other.b,
        }
    }

    /// Apply `W ↦ W Uᵀ, H ↦ U H` for a d×d orthogonal `U`.
    pub fn rotated(&self, u: &DMatrix<f64>) -> ModelState {
        ModelState {
            w: &self.w * u.transpose(),
            h: u * &self.h,
            b: self.b.clone(),
        }
    }

    pub fn check_shapes(&self, data: &Dataset, hp: &Hyperparams) -> Result<()> {
        let k = data.num_classes();
        let n = data.len();
        if self.w.shape() != (k, hp.d) || self.h.shape() != (hp.d, n) || self.b.len() != k {
            return Err(Error::arg(format!(
                "state shapes W {:?}, H {:?}, b {} do not match K={k}, d={}, N={n}",
                self.w.shape(),
                self.h.shape(),
                self.b.len(),
                hp.d
            )));
        }
        Ok(())
    }
}

/// A vector in parameter space, shaped like [`ModelState`]. Used for gradients
/// and for Hessian–vector-product directions.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    pub dw: DMatrix<f64>,
    pub dh: DMatrix<f64>,
    pub db: DVector<f64>,
}

impl Gradient {
    pub fn zeros_like(state: &ModelState) -> Self {
        Gradient {
            dw: DMatrix::zeros(state.w.nrows(), state.w.ncols()),
            dh: DMatrix::zeros(state.h.nrows(), state.h.ncols()),
            db: DVector::zeros(state.b.len()),
        }
    }

    pub fn from_state(state: &ModelState) -> Self {
        Gradient {
            dw: state.w.clone(),
            dh: state.h.clone(),
            db: state.b.clone(),
        }
    }

    pub fn dot(&self, other: &Gradient) -> f64 {
        self.dw.dot(&other.dw) + self.dh.dot(&other.dh) + self.db.dot(&other.db)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn scaled(&self, s: f64) -> Gradient {
        Gradient {
            dw: &self.dw * s,
            dh: &self.dh * s,
            db: &self.db * s,
        }
    }

    /// `self + s·other`.
    pub fn add_scaled(&self, other: &Gradient, s: f64) -> Gradient {
        Gradient {
            dw: &self.dw + &other.dw * s,
            dh: &self.dh + &other.dh * s,
            db: &self.db + &other.db * s,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.dw.iter().chain(self.dh.iter()).chain(self.db.iter()).all(|v| v.is_finite())
    }
}

/// Sum by recursive halving; the reduction order is fixed by the slice length.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const LEAF: usize = 8;
    if values.len() <= LEAF {
        return values.iter().sum();
    }
    let (lo, hi) = values.split_at(values.len() / 2);
    pairwise_sum(lo) + pairwise_sum(hi)
}

fn check_finite(z: &[f64]) -> Result<()> {
    if z.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric("non-finite logits"))
    }
}

pub fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Max-shifted softmax.
pub fn softmax(z: &[f64]) -> Result<DVector<f64>> {
    check_finite(z)?;
    Ok(softmax_unchecked(z))
}

fn softmax_unchecked(z: &[f64]) -> DVector<f64> {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e = DVector::from_iterator(z.len(), z.iter().map(|v| (v - max).exp()));
    let total = e.sum();
    e / total
}

/// Pick-all-labels cross-entropy `Σ_{k ∈ S} −log softmax(z)_k`.
pub fn pal_ce_loss(z: &[f64], set: &LabelSet) -> f64 {
    let lse = log_sum_exp(z);
    set.members().iter().map(|&k| lse - z[k]).sum()
}

/// Gradient of [`pal_ce_loss`] in the logits: `m·softmax(z) − 𝕀_S`.
pub fn pal_ce_grad(z: &[f64], set: &LabelSet) -> DVector<f64> {
    let m = set.multiplicity() as f64;
    let mut g = softmax_unchecked(z) * m;
    for &k in set.members() {
        g[k] -= 1.0;
    }
    g
}

/// Logit matrix `Z = W H + b 1ᵀ`.
pub fn logits(state: &ModelState) -> DMatrix<f64> {
    let mut z = &state.w * &state.h;
    for mut col in z.column_iter_mut() {
        col += &state.b;
    }
    z
}

fn regularizer(state: &ModelState, hp: &Hyperparams) -> f64 {
    hp.lambda_w * state.w.norm_squared()
        + hp.lambda_h * state.h.norm_squared()
        + hp.lambda_b * state.b.norm_squared()
}

fn per_sample_losses(z: &DMatrix<f64>, data: &Dataset) -> Vec<f64> {
    z.column_iter()
        .enumerate()
        .map(|(i, col)| pal_ce_loss(col.as_slice(), data.label_set(i)))
        .collect()
}

/// The regularized objective `f`.
pub fn objective(state: &ModelState, data: &Dataset, hp: &Hyperparams) -> Result<f64> {
    state.check_shapes(data, hp)?;
    let z = logits(state);
    check_finite(z.as_slice())?;
    let losses = per_sample_losses(&z, data);
    let n = data.len() as f64;
    Ok(hp.loss_weight * pairwise_sum(&losses) / n + regularizer(state, hp))
}

/// Column `i` is the logit gradient of sample `i`'s loss.
fn logit_gradients(z: &DMatrix<f64>, data: &Dataset) -> DMatrix<f64> {
    let mut g = DMatrix::zeros(z.nrows(), z.ncols());
    for (i, col) in z.column_iter().enumerate() {
        g.set_column(i, &pal_ce_grad(col.as_slice(), data.label_set(i)));
    }
    g
}

fn assemble_gradient(
    state: &ModelState,
    g: &DMatrix<f64>,
    n: usize,
    hp: &Hyperparams,
) -> Gradient {
    let s = hp.loss_weight / n as f64;
    let row_sums = DVector::from_iterator(g.nrows(), g.row_iter().map(|r| r.sum()));
    Gradient {
        dw: g * state.h.transpose() * s + &state.w * (2.0 * hp.lambda_w),
        dh: state.w.transpose() * g * s + &state.h * (2.0 * hp.lambda_h),
        db: row_sums * s + &state.b * (2.0 * hp.lambda_b),
    }
}

pub fn gradient(state: &ModelState, data: &Dataset, hp: &Hyperparams) -> Result<Gradient> {
    objective_and_gradient(state, data, hp).map(|(_, g)| g)
}

/// Objective and gradient from one logit evaluation.
pub fn objective_and_gradient(
    state: &ModelState,
    data: &Dataset,
    hp: &Hyperparams,
) -> Result<(f64, Gradient)> {
    state.check_shapes(data, hp)?;
    let z = logits(state);
    check_finite(z.as_slice())?;
    let losses = per_sample_losses(&z, data);
    let n = data.len();
    let f = hp.loss_weight * pairwise_sum(&losses) / n as f64 + regularizer(state, hp);
    let g = logit_gradients(&z, data);
    Ok((f, assemble_gradient(state, &g, n, hp)))
}

/// Mean unregularized loss per multiplicity, `g_m`, for each multiplicity with samples.
pub fn loss_by_multiplicity(
    state: &ModelState,
    data: &Dataset,
    hp: &Hyperparams,
) -> Result<BTreeMap<usize, f64>> {
    state.check_shapes(data, hp)?;
    let z = logits(state);
    check_finite(z.as_slice())?;
    let losses = per_sample_losses(&z, data);
    let mut out = BTreeMap::new();
    for m in data.config.present_multiplicities() {
        let block = data.block(m);
        let count = block.len() as f64;
        out.insert(m, pairwise_sum(&losses[block]) / count);
    }
    Ok(out)
}

/// Exact Hessian–vector product `∇²f(state)·dir`.
pub fn hessian_vector_product(
    state: &ModelState,
    data: &Dataset,
    hp: &Hyperparams,
    dir: &Gradient,
) -> Result<Gradient> {
    state.check_shapes(data, hp)?;
    if dir.dw.shape() != state.w.shape()
        || dir.dh.shape() != state.h.shape()
        || dir.db.len() != state.b.len()
    {
        return Err(Error::arg("direction shape does not match state"));
    }
    let z = logits(state);
    check_finite(z.as_slice())?;
    let n = data.len();
    let s = hp.loss_weight / n as f64;

    // first-order change of the logits along `dir`
    let mut dz = &dir.dw * &state.h + &state.w * &dir.dh;
    for mut col in dz.column_iter_mut() {
        col += &dir.db;
    }

    let mut g = DMatrix::zeros(z.nrows(), n);
    let mut r = DMatrix::zeros(z.nrows(), n);
    for i in 0..n {
        let set = data.label_set(i);
        let m = set.multiplicity() as f64;
        let p = softmax_unchecked(z.column(i).as_slice());
        let dzi = dz.column(i);
        let pdz = p.dot(&dzi);
        // m·(diag(p) − p pᵀ)·dz
        let ri = (p.component_mul(&dzi) - &p * pdz) * m;
        r.set_column(i, &ri);
        let mut gi = p * m;
        for &k in set.members() {
            gi[k] -= 1.0;
        }
        g.set_column(i, &gi);
    }

    let r_sums = DVector::from_iterator(r.nrows(), r.row_iter().map(|row| row.sum()));
    Ok(Gradient {
        dw: (&r * state.h.transpose() + &g * dir.dh.transpose()) * s
            + &dir.dw * (2.0 * hp.lambda_w),
        dh: (state.w.transpose() * &r + dir.dw.transpose() * &g) * s
            + &dir.dh * (2.0 * hp.lambda_h),
        db: r_sums * s + &dir.db * (2.0 * hp.lambda_b),
    })
}
