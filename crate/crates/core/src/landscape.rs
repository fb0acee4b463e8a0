//! Curvature probes at critical points: extreme Hessian eigenvalues from
//! Hessian–vector products, critical-point classification, and escape runs
//! along negative-curvature directions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::Dataset;
use crate::optimizer::{train, TrainConfig};
use crate::theory::{verify_global, BalancedProblem, VerificationReport};
use crate::ufm::{gradient, hessian_vector_product, objective, Gradient, Hyperparams, ModelState};

/// Parameter count above which the dense Hessian is not formed.
pub const DENSE_LIMIT: usize = 2500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    ApproxGlobalMinimum,
    StrictSaddle,
    Inconclusive,
}

impl std::fmt::Display for Classification {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Classification::ApproxGlobalMinimum => "approx-global-minimum",
            Classification::StrictSaddle => "strict-saddle",
            Classification::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenEstimate {
    pub value: f64,
    /// Unit-norm direction.
    pub direction: Gradient,
    /// `‖Hv − λv‖` for the returned unit `v`.
    pub residual: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn flatten(g: &Gradient) -> DVector<f64> {
    DVector::from_iterator(
        g.dw.len() + g.dh.len() + g.db.len(),
        g.dw.iter().chain(g.dh.iter()).chain(g.db.iter()).copied(),
    )
}

fn unflatten(v: &DVector<f64>, like: &Gradient) -> Gradient {
    let (a, b) = (like.dw.len(), like.dh.len());
    Gradient {
        dw: DMatrix::from_column_slice(like.dw.nrows(), like.dw.ncols(), &v.as_slice()[..a]),
        dh: DMatrix::from_column_slice(like.dh.nrows(), like.dh.ncols(), &v.as_slice()[a..a + b]),
        db: DVector::from_column_slice(&v.as_slice()[a + b..]),
    }
}

fn random_direction(state: &ModelState, seed: u64) -> Gradient {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Gradient::zeros_like(state);
    for x in g.dw.iter_mut().chain(g.dh.iter_mut()).chain(g.db.iter_mut()) {
        *x = StandardNormal.sample(&mut rng);
    }
    let n = g.norm();
    g.scaled(1.0 / n)
}

/// Power iteration on `σI + sign·H`, returning the Rayleigh quotient of `H`.
fn power_iteration(
    state: &ModelState,
    data: &Dataset,
    hp: &Hyperparams,
    shift: f64,
    sign: f64,
    iters: usize,
    tol: f64,
) -> Result<EigenEstimate> {
    let mut v = random_direction(state, 0x5eed);
    let mut hv = hessian_vector_product(state, data, hp, &v)?;
    let mut lambda = v.dot(&hv);
    let mut residual = hv.add_scaled(&v, -lambda).norm();
    let mut it = 0;
    while it < iters && residual >= tol {
        it += 1;
        let next = v.scaled(shift).add_scaled(&hv, sign);
        let n = next.norm();
        if n == 0.0 || !n.is_finite() {
            break;
        }
        v = next.scaled(1.0 / n);
        hv = hessian_vector_product(state, data, hp, &v)?;
        lambda = v.dot(&hv);
        residual = hv.add_scaled(&v, -lambda).norm();
    }
    Ok(EigenEstimate {
        value: lambda,
        direction: v,
        residual,
        iterations: it,
        converged: residual < tol,
    })
}

/// Largest-magnitude Hessian eigenvalue by plain power iteration.
pub fn dominant_eigenvalue(
    state: &ModelState,
    data: &Dataset,
    hp: &Hyperparams,
    iters: usize,
    tol: f64,
) -> Result<EigenEstimate> {
    power_iteration(state, data, hp, 0.0, 1.0, iters, tol)
}

/// Smallest Hessian eigenvalue by power iteration on `σI − ∇²f`, with `σ`
/// slightly above the dominant eigenvalue magnitude so the shifted operator
/// is positive semidefinite.
pub fn min_eigenvalue(
    state: &ModelState,
    data: &Dataset,
    hp: &Hyperparams,
    iters: usize,
    tol: f64,
) -> Result<(EigenEstimate, f64)> {
    let dom = dominant_eigenvalue(state, data, hp, iters.min(2000), tol)?;
    // the power estimate can fall short of |λ|max; pad it
    let sigma = 1.05 * dom.value.abs() + dom.residual + 1e-12;
    let mut est = power_iteration(state, data, hp, sigma, -1.0, iters, tol)?;
    if est.value.abs() > dom.value.abs() + dom.residual {
        est.converged = false;
    }
    Ok((est, sigma))
}

/// Dense Hessian, one HVP per coordinate, symmetrized. Coordinates are `W`,
/// `H` (column-major), then `b`.
pub fn dense_hessian(state: &ModelState, data: &Dataset, hp: &Hyperparams) -> Result<DMatrix<f64>> {
    let like = Gradient::zeros_like(state);
    let p = flatten(&like).len();
    let mut hess = DMatrix::zeros(p, p);
    for j in 0..p {
        let mut e = DVector::zeros(p);
        e[j] = 1.0;
        let col = flatten(&hessian_vector_product(state, data, hp, &unflatten(&e, &like))?);
        hess.set_column(j, &col);
    }
    Ok((&hess + hess.transpose()) * 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    /// `is_critical` iff the gradient norm is at most this.
    pub grad_tol: f64,
    pub eig_iters: usize,
    pub eig_tol: f64,
    /// Relative tolerance of `f` against the analytic optimum.
    pub f_tol: f64,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            grad_tol: 1e-6,
            eig_iters: 200_000,
            eig_tol: 1e-8,
            f_tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub f: f64,
    pub grad_norm: f64,
    pub lambda_min_estimate: f64,
    pub lambda_max_bound: f64,
    pub eigvec_residual: f64,
    pub eig_converged: bool,
    pub curvature_margin: f64,
    pub is_critical: bool,
    /// `f` minus the analytic optimum when the data admit one.
    pub analytic_gap: Option<f64>,
    /// Hessian eigenvalues with `|λ| ≤ curvature_margin`, from the dense
    /// Hessian when it is small enough to form.
    pub near_zero_count: Option<usize>,
    pub classification: Classification,
}

pub struct Probe {
    pub report: CurvatureReport,
    pub direction: Gradient,
}

/// Gradient norm, extreme curvature and classification of `state`.
pub fn probe(state: &ModelState, data: &Dataset, hp: &Hyperparams, opts: &ProbeOptions) -> Result<Probe> {
    state.check_shapes(data, hp)?;
    let k = data.num_classes();
    if hp.d <= k {
        return Err(Error::arg(format!(
            "landscape probes need d > K (got d = {}, K = {k})",
            hp.d
        )));
    }
    let f = objective(state, data, hp)?;
    let grad_norm = gradient(state, data, hp)?.norm();
    let (est, sigma) = min_eigenvalue(state, data, hp, opts.eig_iters, opts.eig_tol)?;
    let lambda_max = sigma;
    let margin = 1e-6 * (1.0 + lambda_max.abs());
    let is_critical = grad_norm <= opts.grad_tol;

    let analytic_gap = match BalancedProblem::new(data, hp) {
        Ok(p) => Some(f - p.optimal_rho()?.bound),
        Err(_) => None,
    };
    let near_zero_count = if flatten(&est.direction).len() <= DENSE_LIMIT {
        let eig = SymmetricEigen::new(dense_hessian(state, data, hp)?);
        Some(eig.eigenvalues.iter().filter(|v| v.abs() <= margin).count())
    } else {
        None
    };

    // any Rayleigh quotient bounds λ_min from above, so a negative one
    // certifies negative curvature even before convergence
    let classification = if is_critical && est.value < -margin {
        Classification::StrictSaddle
    } else if is_critical
        && est.converged
        && est.value >= -margin
        && analytic_gap.is_some_and(|g| g.abs() <= opts.f_tol * f.abs().max(1e-300))
    {
        Classification::ApproxGlobalMinimum
    } else {
        Classification::Inconclusive
    };

    Ok(Probe {
        report: CurvatureReport {
            f,
            grad_norm,
            lambda_min_estimate: est.value,
            lambda_max_bound: lambda_max,
            eigvec_residual: est.residual,
            eig_converged: est.converged,
            curvature_margin: margin,
            is_critical,
            analytic_gap,
            near_zero_count,
            classification,
        },
        direction: est.direction,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EscapeReport {
    pub f_saddle: f64,
    pub step: f64,
    /// `f` after the `+` and `−` perturbations.
    pub f_plus: f64,
    pub f_minus: f64,
    pub f_final: f64,
    pub grad_norm_final: f64,
    pub converged: bool,
    pub iterations: usize,
    pub descended: bool,
    pub verification: Option<VerificationReport>,
    #[serde(skip)]
    pub final_state: ModelState,
}

/// Perturb `state` along `direction` by `1e−3·‖state‖` (`1e−3` at the
/// origin), train from there, and verify the endpoint.
pub fn escape_test(
    state: &ModelState,
    direction: &Gradient,
    data: &Dataset,
    hp: &Hyperparams,
    cfg: &TrainConfig,
    verify_tol: f64,
) -> Result<EscapeReport> {
    let f_saddle = objective(state, data, hp)?;
    let norm = state.norm();
    let step = if norm > 0.0 { 1e-3 * norm } else { 1e-3 };
    let unit = direction.scaled(1.0 / direction.norm());
    let plus = state.moved(&unit, step);
    let f_plus = objective(&plus, data, hp)?;
    let f_minus = objective(&state.moved(&unit, -step), data, hp)?;
    let traj = train(&plus, data, hp, cfg)?;
    let last = traj.final_record();
    let verification = match data.config.balanced_counts() {
        Some(_) => Some(verify_global(&traj.final_state, data, hp, verify_tol)?),
        None => None,
    };
    Ok(EscapeReport {
        f_saddle,
        step,
        f_plus,
        f_minus,
        f_final: last.f,
        grad_norm_final: last.grad_norm,
        converged: traj.converged,
        iterations: traj.iterations,
        descended: last.f < f_saddle,
        verification,
        final_state: traj.final_state,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labelspace::{generate_dataset, LabelConfig};
    use crate::optimizer::init_state;

    #[test]
    fn quadratic_regime() {
        let data = generate_dataset(&LabelConfig::balanced(3, &[2, 1]).unwrap()).unwrap();
        let mut hp = Hyperparams::new(4, 3e-3, 7e-3, 2e-3);
        hp.loss_weight = 0.0;
        let st = init_state(&data, &hp, 1, 1.0);
        let (est, _) = min_eigenvalue(&st, &data, &hp, 5000, 1e-10).unwrap();
        assert!((est.value - 4e-3).abs() < 1e-9, "{}", est.value);
    }

    #[test]
    fn flatten_round_trip() {
        let data = generate_dataset(&LabelConfig::balanced(3, &[1]).unwrap()).unwrap();
        let hp = Hyperparams::new(4, 1e-3, 1e-3, 1e-3);
        let g = Gradient::from_state(&init_state(&data, &hp, 3, 1.0));
        assert_eq!(unflatten(&flatten(&g), &g), g);
    }

    #[test]
    fn probe_rejects_small_dimension() {
        let data = generate_dataset(&LabelConfig::balanced(3, &[1]).unwrap()).unwrap();
        let hp = Hyperparams::new(3, 1e-3, 1e-3, 1e-3);
        let st = ModelState::zeros(3, 3, data.len());
        assert!(probe(&st, &data, &hp, &ProbeOptions::default()).is_err());
    }
}
