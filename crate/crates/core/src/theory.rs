//! Analytic global minimizer of the UFM objective for within-multiplicity
//! balanced data, and a verifier for its optimality conditions.
//!
//! At the global solution the classifier rows form a simplex ETF with
//! `‖W‖_F² = ρ`, the bias is constant, and every feature is a positive
//! multiple of the sum of its tags' classifier rows:
//!
//! ```text
//! h_{m,k,i} = C_m Σ_{ℓ ∈ S_{m,k}} w^ℓ,    C_m = ((K−1)/ρ) · log(((K−m)/m) c_{1,m})
//! ```
//!
//! The constants `c_{1,m}` solve a small coupled nonlinear system at each
//! `ρ`, and `ρ` itself minimizes the tight lower bound.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::{binomial, row_space_projector, subsets, Dataset};
use crate::metrics::w_norm_spread;
use crate::ufm::{logits, Hyperparams, ModelState};

/// Classifier directions forming a simplex ETF.
#[derive(Debug, Clone, PartialEq)]
pub struct EtfFrame {
    /// `d × K`; column `k` is the classifier row `w^k`.
    pub matrix: DMatrix<f64>,
    /// Target `‖W‖_F²`.
    pub scale: f64,
    pub rotation_seed: u64,
}

impl EtfFrame {
    /// The classifier `W` (K × d).
    pub fn classifier(&self) -> DMatrix<f64> {
        self.matrix.transpose()
    }

    /// Max-abs deviation of the unit-normalized Gram from `(K/(K−1))(I − 11ᵀ/K)`.
    pub fn gram_error(&self) -> f64 {
        let k = self.matrix.ncols();
        let kf = k as f64;
        let gram = self.matrix.transpose() * &self.matrix * (kf / self.scale);
        let target = DMatrix::from_fn(k, k, |i, j| {
            let v = if i == j { 1.0 - 1.0 / kf } else { -1.0 / kf };
            v * kf / (kf - 1.0)
        });
        (gram - target).amax()
    }
}

/// Haar-distributed orthogonal `d × d` matrix from a seeded Gaussian QR.
pub fn random_rotation(d: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col *= -1.0;
        }
    }
    q
}

/// Simplex ETF with `‖W‖_F² = rho`.
///
/// Seed 0 is the canonical frame: the centered identity `I − 11ᵀ/K` in the
/// first `K` coordinates when `d ≥ K`, or a Helmert basis of `1^⊥` when
/// `d = K − 1`. Any other seed applies a random rotation to that frame.
pub fn simplex_etf(num_classes: usize, d: usize, rho: f64, rotation_seed: u64) -> Result<EtfFrame> {
    let k = num_classes;
    if k < 2 {
        return Err(Error::arg("an ETF needs at least two classes"));
    }
    if d + 1 < k {
        return Err(Error::arg(format!(
            "a {k}-class simplex ETF does not embed in dimension {d} < K − 1"
        )));
    }
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::arg("ETF scale must be positive"));
    }
    let kf = k as f64;
    let mut w = DMatrix::zeros(k, d);
    if d >= k {
        for i in 0..k {
            for j in 0..k {
                w[(i, j)] = if i == j { 1.0 - 1.0 / kf } else { -1.0 / kf };
            }
        }
    } else {
        // Helmert columns j = 1..K−1, orthonormal and orthogonal to 1
        for j in 1..k {
            let jf = j as f64;
            let norm = (jf * (jf + 1.0)).sqrt();
            for i in 0..j {
                w[(i, j - 1)] = 1.0 / norm;
            }
            w[(j, j - 1)] = -jf / norm;
        }
    }
    let current = w.norm_squared();
    w *= (rho / current).sqrt();
    if rotation_seed != 0 {
        let u = random_rotation(d, rotation_seed);
        w = w * u.transpose();
    }
    Ok(EtfFrame {
        matrix: w.transpose(),
        scale: rho,
        rotation_seed,
    })
}

fn kf(k: usize) -> f64 {
    k as f64
}

/// `κ_m = (K/(m·C(K,m)))² · C(K−2, m−1)`.
pub fn kappa(num_classes: usize, m: usize) -> f64 {
    let c = binomial(num_classes, m) as f64;
    let r = kf(num_classes) / (m as f64 * c);
    r * r * binomial(num_classes - 2, m - 1) as f64
}

/// `γ_{1,m} = (1/(1 + c1)) · m/(K − m)`.
pub fn gamma1(num_classes: usize, m: usize, c1: f64) -> f64 {
    let m_f = m as f64;
    m_f / ((1.0 + c1) * (kf(num_classes) - m_f))
}

/// Logit gap `z_in − z_out = log(((K−m)/m)·c1)` at a tight point.
pub fn logit_gap(num_classes: usize, m: usize, c1: f64) -> f64 {
    let m_f = m as f64;
    ((kf(num_classes) - m_f) / m_f * c1).ln()
}

/// `c1` such that [`logit_gap`] equals `gap`.
pub fn c1_from_gap(num_classes: usize, m: usize, gap: f64) -> f64 {
    let m_f = m as f64;
    m_f / (kf(num_classes) - m_f) * gap.exp()
}

/// Intercept `c_{2,m}` of the affine lower bound on the pick-all-labels loss.
pub fn c2m(num_classes: usize, m: usize, c1: f64) -> f64 {
    let m_f = m as f64;
    let k_f = kf(num_classes);
    c1 * m_f / (c1 + 1.0) * m_f.ln()
        + m_f * c1 / (1.0 + c1) * ((c1 + 1.0) / c1).ln()
        + m_f / (c1 + 1.0) * ((k_f - m_f) * (c1 + 1.0)).ln()
}

/// `(z_in, z_out)` with `z_in − z_out` the tight gap and `m·z_in + (K−m)·z_out = 0`.
pub fn tight_logits(num_classes: usize, m: usize, c1: f64) -> (f64, f64) {
    let gap = logit_gap(num_classes, m, c1);
    let k_f = kf(num_classes);
    let m_f = m as f64;
    ((k_f - m_f) / k_f * gap, -m_f / k_f * gap)
}

/// Balanced-data description the analytic solution depends on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalancedProblem {
    pub num_classes: usize,
    /// `(m, n_m)` for each multiplicity with samples, ascending in `m`.
    pub counts: Vec<(usize, usize)>,
    pub lambda_w: f64,
    pub lambda_h: f64,
}

impl BalancedProblem {
    pub fn new(data: &Dataset, hp: &Hyperparams) -> Result<Self> {
        let counts = data.config.balanced_counts().ok_or_else(|| {
            Error::arg("the analytic solution needs balanced counts within each multiplicity")
        })?;
        let p = BalancedProblem {
            num_classes: data.num_classes(),
            counts,
            lambda_w: hp.lambda_w,
            lambda_h: hp.lambda_h,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.is_empty() {
            return Err(Error::arg("no multiplicity has samples"));
        }
        for &(m, n) in &self.counts {
            if m == 0 || m >= self.num_classes || n == 0 {
                return Err(Error::arg(format!("invalid multiplicity entry (m={m}, n={n})")));
            }
        }
        if !(self.lambda_w > 0.0 && self.lambda_h > 0.0) {
            return Err(Error::arg("lambda_W and lambda_H must be positive"));
        }
        Ok(())
    }

    /// `N_m = n_m · C(K, m)`.
    pub fn block_size(&self, m: usize, n: usize) -> f64 {
        n as f64 * binomial(self.num_classes, m) as f64
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().map(|&(m, n)| self.block_size(m, n)).sum()
    }

    /// `κ_m n_m C(K,m)²`, the weight of `γ_{1,m}²` inside `Q̃²`.
    fn q_weight(&self, m: usize, n: usize) -> f64 {
        let c = binomial(self.num_classes, m) as f64;
        kappa(self.num_classes, m) * n as f64 * c * c
    }

    /// `‖H_m‖_F` at the tight point for a given `c1` and `ρ`.
    pub fn hm_norm(&self, m: usize, n: usize, rho: f64, c1: f64) -> f64 {
        self.hm_norm_from_gap(m, n, rho, logit_gap(self.num_classes, m, c1))
    }

    fn hm_norm_from_gap(&self, m: usize, n: usize, rho: f64, gap: f64) -> f64 {
        let k = kf(self.num_classes);
        let m_f = m as f64;
        (self.block_size(m, n) * m_f * (k - m_f) * (k - 1.0) / (rho * k)).sqrt() * gap
    }

    /// `Q̃ = √(Σ_m γ_{1,m}² κ_m n_m C(K,m)²)`.
    pub fn q_tilde(&self, c1: &[f64]) -> f64 {
        self.counts
            .iter()
            .zip(c1)
            .map(|(&(m, n), &c)| gamma1(self.num_classes, m, c).powi(2) * self.q_weight(m, n))
            .sum::<f64>()
            .sqrt()
    }

    /// Residual of the coupled equations for `c_{1,m}` at `ρ`, one entry per
    /// multiplicity in `counts`:
    ///
    /// `γ_{1,m} − ‖H_m‖_F/(C(K,m)√(κ_m n_m)‖W‖_F) · √(λ_H/λ_W) · Q̃`.
    pub fn c_system_residual(&self, rho: f64, c1: &[f64]) -> Vec<f64> {
        let q = self.q_tilde(c1);
        let ratio = (self.lambda_h / self.lambda_w).sqrt();
        self.counts
            .iter()
            .zip(c1)
            .map(|(&(m, n), &c)| {
                let binom = binomial(self.num_classes, m) as f64;
                let scale = binom * (kappa(self.num_classes, m) * n as f64).sqrt();
                gamma1(self.num_classes, m, c)
                    - self.hm_norm(m, n, rho, c) / (scale * rho.sqrt()) * ratio * q
            })
            .collect()
    }

    /// Residuals and Jacobian in the logit-gap coordinates `δ_m = log(((K−m)/m)c_{1,m})`.
    fn residual_in_gaps(&self, rho: f64, gaps: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let k = kf(self.num_classes);
        let len = self.counts.len();
        let ratio = (self.lambda_h / self.lambda_w).sqrt();
        let mut gam = vec![0.0; len];
        let mut dgam = vec![0.0; len];
        let mut weight = vec![0.0; len];
        let mut slope = vec![0.0; len];
        for (j, &(m, n)) in self.counts.iter().enumerate() {
            let m_f = m as f64;
            let e = gaps[j].exp();
            let den = k - m_f + m_f * e;
            gam[j] = m_f / den;
            dgam[j] = -m_f * m_f * e / (den * den);
            weight[j] = self.q_weight(m, n);
            let binom = binomial(self.num_classes, m) as f64;
            let scale = binom * (kappa(self.num_classes, m) * n as f64).sqrt();
            // ‖H_m‖/‖W‖ = slope·δ_m / ... folded into one coefficient
            slope[j] = self.hm_norm_from_gap(m, n, rho, 1.0) / (scale * rho.sqrt()) * ratio;
        }
        let q = gam
            .iter()
            .zip(&weight)
            .map(|(g, w)| g * g * w)
            .sum::<f64>()
            .sqrt();
        let mut f = DVector::zeros(len);
        let mut jac = DMatrix::zeros(len, len);
        for a in 0..len {
            f[a] = gam[a] - slope[a] * gaps[a] * q;
            for b in 0..len {
                let dq = if q > 0.0 { gam[b] * dgam[b] * weight[b] / q } else { 0.0 };
                let mut v = -slope[a] * gaps[a] * dq;
                if a == b {
                    v += dgam[a] - slope[a] * q;
                }
                jac[(a, b)] = v;
            }
        }
        (f, jac)
    }

    /// Residual relative to `γ_{1,m}`, which rules out the spurious far-field
    /// solutions where both sides underflow toward zero.
    fn relative_residual(&self, gaps: &[f64], f: &DVector<f64>) -> f64 {
        let k = kf(self.num_classes);
        self.counts
            .iter()
            .zip(gaps)
            .zip(f.iter())
            .map(|((&(m, _), &g), r)| {
                let m_f = m as f64;
                (r * (k - m_f + m_f * g.exp()) / m_f).abs()
            })
            .fold(0.0, f64::max)
    }

    fn converged(&self, gaps: &[f64], f: &DVector<f64>, tol: f64) -> bool {
        f.amax() < tol && self.relative_residual(gaps, f) < 1e-9
    }

    fn newton_gaps(&self, rho: f64, start: f64, tol: f64) -> Option<Vec<f64>> {
        let len = self.counts.len();
        let mut x = vec![start; len];
        let (mut f, mut jac) = self.residual_in_gaps(rho, &x);
        for _ in 0..200 {
            if self.converged(&x, &f, tol) {
                return Some(x);
            }
            let step = jac.clone().lu().solve(&(-&f))?;
            let fnorm = f.norm();
            let mut t = 1.0;
            let mut moved = false;
            while t > 1e-12 {
                let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
                if trial.iter().all(|&g| g > 0.0 && g.is_finite()) {
                    let (ft, jt) = self.residual_in_gaps(rho, &trial);
                    if ft.norm() < fnorm {
                        x = trial;
                        f = ft;
                        jac = jt;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        self.converged(&x, &f, tol).then_some(x)
    }

    /// Gauss–Seidel sweeps, each coordinate solved by bisection with the
    /// others held fixed.
    fn bisection_gaps(&self, rho: f64, tol: f64) -> Option<Vec<f64>> {
        let len = self.counts.len();
        let mut x = vec![1.0; len];
        for _ in 0..500 {
            for j in 0..len {
                let eval = |g: f64, x: &mut Vec<f64>| {
                    x[j] = g;
                    self.residual_in_gaps(rho, x).0[j]
                };
                let mut lo = 1e-300f64.max(1e-12);
                let mut hi = 1.0;
                let mut probe = x.clone();
                if eval(lo, &mut probe) <= 0.0 {
                    return None;
                }
                while eval(hi, &mut probe) > 0.0 {
                    hi *= 2.0;
                    if hi > 1e6 {
                        return None;
                    }
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if eval(mid, &mut probe) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-15 * hi {
                        break;
                    }
                }
                x[j] = 0.5 * (lo + hi);
            }
            if self.converged(&x, &self.residual_in_gaps(rho, &x).0, tol) {
                return Some(x);
            }
        }
        None
    }

    fn gaps_to_c1(&self, gaps: &[f64]) -> Vec<f64> {
        self.counts
            .iter()
            .zip(gaps)
            .map(|(&(m, _), &g)| c1_from_gap(self.num_classes, m, g))
            .collect()
    }

    /// Solve the coupled system for `c_{1,m}` at `ρ` by damped Newton from
    /// `c_{1,m} = e·m/(K−m)`, falling back to coordinate bisection.
    pub fn solve_c1_system(&self, rho: f64) -> Result<Vec<f64>> {
        self.validate()?;
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::arg("rho must be positive"));
        }
        const TOL: f64 = 1e-13;
        let gaps = self
            .newton_gaps(rho, 1.0, TOL)
            .or_else(|| self.bisection_gaps(rho, TOL))
            .ok_or_else(|| {
                let r = self.residual_in_gaps(rho, &vec![1.0; self.counts.len()]).0.amax();
                Error::Solver {
                    message: format!("c-system did not converge at rho = {rho:e}"),
                    residual: r,
                }
            })?;
        if gaps.iter().any(|&g| g <= 0.0) {
            return Err(Error::Degenerate(format!(
                "c-system root has nonpositive logit gap at rho = {rho:e}"
            )));
        }
        Ok(self.gaps_to_c1(&gaps))
    }

    /// Distinct roots reached from several starting gaps.
    pub fn c1_roots(&self, rho: f64) -> Vec<Vec<f64>> {
        let mut roots: Vec<Vec<f64>> = Vec::new();
        for start in [1.0, 0.05, 0.3, 3.0, 10.0, 30.0] {
            if let Some(g) = self.newton_gaps(rho, start, 1e-13) {
                let c = self.gaps_to_c1(&g);
                let dup = roots.iter().any(|r| {
                    r.iter().zip(&c).all(|(a, b)| (a - b).abs() <= 1e-7 * a.abs().max(b.abs()))
                });
                if !dup {
                    roots.push(c);
                }
            }
        }
        roots
    }

    /// Full solution record at `ρ` for given `c_{1,m}`.
    pub fn solution_at(&self, rho: f64, c1: &[f64]) -> AnalyticSolution {
        let k = self.num_classes;
        let q_tilde = self.q_tilde(c1);
        let n_total = self.total();
        let w_norm = rho.sqrt();
        let per_m = self
            .counts
            .iter()
            .zip(c1)
            .map(|(&(m, n), &c)| {
                let (z_in, z_out) = tight_logits(k, m, c);
                let m_f = m as f64;
                let den = m_f * z_in.exp() + (kf(k) - m_f) * z_out.exp();
                let hm_norm = self.hm_norm(m, n, rho, c);
                let kap = kappa(k, m);
                MultiplicityConstants {
                    m,
                    n,
                    c1: c,
                    c2: c2m(k, m, c),
                    c3: (kap / n as f64).sqrt() * hm_norm / w_norm,
                    gamma1: gamma1(k, m, c),
                    kappa: kap,
                    cm: (kf(k) - 1.0) / rho * logit_gap(k, m, c),
                    z_in,
                    z_out,
                    alpha: z_in.exp() / den,
                    beta: z_out.exp() / den,
                    hm_norm,
                }
            })
            .collect::<Vec<_>>();
        let gamma2 = per_m
            .iter()
            .map(|p| self.block_size(p.m, p.n) / n_total * p.c2)
            .sum();
        let mut sol = AnalyticSolution {
            problem: self.clone(),
            rho,
            per_m,
            q_tilde,
            q: (self.lambda_h / self.lambda_w).sqrt() * q_tilde,
            gamma2,
            b_star: 0.0,
            bound: 0.0,
        };
        sol.bound = lower_bound(&sol);
        sol
    }

    /// Tight lower bound at `ρ` with the system solved there.
    pub fn bound_at(&self, rho: f64) -> Result<AnalyticSolution> {
        let c1 = self.solve_c1_system(rho)?;
        Ok(self.solution_at(rho, &c1))
    }

    /// Minimize the tight bound over `ρ` by golden-section search on
    /// `[1e−4, ρ_hi]`, doubling `ρ_hi` until the bound increases.
    pub fn optimal_rho(&self) -> Result<AnalyticSolution> {
        let eval = |rho: f64| self.bound_at(rho).map(|s| s.bound);
        let lo_edge = 1e-4;
        let mut hi = 1.0;
        let mut f_hi = eval(hi)?;
        let mut doublings = 0;
        loop {
            let f_next = eval(2.0 * hi)?;
            if f_next >= f_hi {
                break;
            }
            hi *= 2.0;
            f_hi = f_next;
            doublings += 1;
            if doublings > 80 {
                return Err(Error::Solver {
                    message: "bound kept decreasing while bracketing rho".into(),
                    residual: f_hi,
                });
            }
        }
        let (mut a, mut b) = (lo_edge, 2.0 * hi);
        let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
        let mut x1 = b - inv_phi * (b - a);
        let mut x2 = a + inv_phi * (b - a);
        let mut f1 = eval(x1)?;
        let mut f2 = eval(x2)?;
        for _ in 0..300 {
            if b - a <= 1e-13 * (a + b) {
                break;
            }
            if f1 <= f2 {
                b = x2;
                x2 = x1;
                f2 = f1;
                x1 = b - inv_phi * (b - a);
                f1 = eval(x1)?;
            } else {
                a = x1;
                x1 = x2;
                f1 = f2;
                x2 = a + inv_phi * (b - a);
                f2 = eval(x2)?;
            }
        }
        let rho = if f1 <= f2 { x1 } else { x2 };
        self.bound_at(rho)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiplicityConstants {
    pub m: usize,
    pub n: usize,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub gamma1: f64,
    pub kappa: f64,
    /// Tag-wise average scale `C_m`.
    pub cm: f64,
    pub z_in: f64,
    pub z_out: f64,
    /// Softmax probability of each in-group class at the tight point.
    pub alpha: f64,
    /// Softmax probability of each out-group class at the tight point.
    pub beta: f64,
    pub hm_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticSolution {
    pub problem: BalancedProblem,
    pub rho: f64,
    pub per_m: Vec<MultiplicityConstants>,
    pub q_tilde: f64,
    pub q: f64,
    pub gamma2: f64,
    pub b_star: f64,
    /// Value of the lower bound at this solution.
    pub bound: f64,
}

impl AnalyticSolution {
    pub fn c1(&self) -> Vec<f64> {
        self.per_m.iter().map(|p| p.c1).collect()
    }

    pub fn constants(&self, m: usize) -> Option<&MultiplicityConstants> {
        self.per_m.iter().find(|p| p.m == m)
    }

    /// c-system residual (∞-norm) of the stored constants.
    pub fn c_system_residual(&self) -> f64 {
        self.problem
            .c_system_residual(self.rho, &self.c1())
            .iter()
            .fold(0.0, |a, r| a.max(r.abs()))
    }
}

/// `−(1/N)·Q̃·√(λ_W/λ_H)·ρ + Γ_2 + 2λ_W·ρ` with `Γ_2 = Σ_m (N_m/N)·c_{2,m}`.
pub fn lower_bound(solution: &AnalyticSolution) -> f64 {
    let p = &solution.problem;
    let n = p.total();
    -solution.q_tilde * (p.lambda_w / p.lambda_h).sqrt() * solution.rho / n
        + solution.gamma2
        + 2.0 * p.lambda_w * solution.rho
}

/// The analytic global minimizer for `data` at `solution`.
pub fn construct_global(
    data: &Dataset,
    hp: &Hyperparams,
    solution: &AnalyticSolution,
    rotation_seed: u64,
) -> Result<ModelState> {
    let problem = BalancedProblem::new(data, hp)?;
    if problem.num_classes != solution.problem.num_classes || problem.counts != solution.problem.counts {
        return Err(Error::arg("solution was computed for a different label configuration"));
    }
    for p in &solution.per_m {
        if !(p.cm > 0.0 && p.cm.is_finite()) {
            return Err(Error::arg(format!("C_{} = {} is not positive", p.m, p.cm)));
        }
    }
    let k = data.num_classes();
    let etf = simplex_etf(k, hp.d, solution.rho, rotation_seed)?;
    let w = etf.classifier();
    let mut h = DMatrix::zeros(hp.d, data.len());
    for g in &data.groups {
        let cm = solution
            .constants(g.m())
            .ok_or_else(|| Error::arg(format!("no constants for multiplicity {}", g.m())))?
            .cm;
        let mut feature = DVector::zeros(hp.d);
        for &l in g.set.members() {
            feature += etf.matrix.column(l);
        }
        feature *= cm;
        for c in g.columns() {
            h.set_column(c, &feature);
        }
    }
    Ok(ModelState {
        w,
        h,
        b: DVector::from_element(k, solution.b_star),
    })
}

/// `|‖H_m D_m‖_F² − C(K−2, m−1)·‖H_m‖_F²| / ‖H_m‖_F²`, where `H_m D_m` has,
/// for each sample index `i` and class `j`, the column `Σ_{ℓ: j ∈ S_ℓ} h_{m,ℓ,i}`.
///
/// Columns of `hm` are in block order: subset rank major, sample index minor.
pub fn pascal_norm_check(hm: &DMatrix<f64>, num_classes: usize, m: usize) -> Result<f64> {
    let sets = subsets(num_classes, m)?;
    let c = sets.len();
    if hm.ncols() == 0 || hm.ncols() % c != 0 {
        return Err(Error::arg(format!(
            "H_m has {} columns, not a positive multiple of C({num_classes}, {m}) = {c}",
            hm.ncols()
        )));
    }
    let n = hm.ncols() / c;
    let mut lhs = 0.0;
    for i in 0..n {
        for j in 0..num_classes {
            let mut acc = DVector::zeros(hm.nrows());
            for (rank, s) in sets.iter().enumerate() {
                if s.contains(j) {
                    acc += hm.column(rank * n + i);
                }
            }
            lhs += acc.norm_squared();
        }
    }
    let norm_sq = hm.norm_squared();
    let rhs = binomial(num_classes - 2, m - 1) as f64 * norm_sq;
    Ok(if norm_sq == 0.0 {
        0.0
    } else {
        (lhs - rhs).abs() / norm_sq
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub residual: f64,
    pub tol: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<Check>,
    /// Least-squares tag-wise scale `Ĉ_m` per multiplicity.
    pub fitted_cm: BTreeMap<usize, f64>,
    /// `ĉ_{1,m}` backed out of the mean logit gap.
    pub fitted_c1: BTreeMap<usize, f64>,
    pub pass: bool,
}

impl VerificationReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Check every optimality condition of the analytic global solution on
/// `state`, with all residuals relative and compared against `tol`. The
/// tag-wise scales are fitted from the state itself.
pub fn verify_global(
    state: &ModelState,
    data: &Dataset,
    hp: &Hyperparams,
    tol: f64,
) -> Result<VerificationReport> {
    state.check_shapes(data, hp)?;
    let k = data.num_classes();
    let k_f = k as f64;
    let w = &state.w;
    let w_norm = w.norm();
    let rho = w.norm_squared();
    let mut checks = Vec::new();
    let mut push = |name: String, residual: f64| {
        let residual = if residual.is_nan() { f64::INFINITY } else { residual };
        checks.push(Check {
            name,
            residual,
            tol,
            pass: residual <= tol,
        });
    };

    push("w_norm_equal".into(), w_norm_spread(w));

    let b = &state.b;
    let b_dev = if hp.lambda_b > 0.0 {
        b.norm()
    } else {
        crate::metrics::bias_residual(b)
    };
    push("bias".into(), b_dev / (1.0 + w_norm));

    let centered = DMatrix::from_fn(k, k, |i, j| if i == j { 1.0 - 1.0 / k_f } else { -1.0 / k_f });
    let gram_err = if rho > 0.0 {
        ratio(
            (w * w.transpose() * ((k_f - 1.0) / rho) - &centered).norm(),
            centered.norm(),
        )
    } else {
        f64::INFINITY
    };
    push("etf_gram".into(), gram_err);

    let z = logits(state);
    let b_mean = b.mean();
    let mut fitted_cm = BTreeMap::new();
    let mut fitted_c1 = BTreeMap::new();

    for m in data.config.present_multiplicities() {
        let label = if m == 1 { "self_duality".to_string() } else { format!("tagwise_m{m}") };
        // tag-wise fit h ≈ Ĉ_m Σ_{ℓ∈S} w^ℓ
        let mut num = 0.0;
        let mut den = 0.0;
        let mut targets = Vec::new();
        for g in data.groups_with_multiplicity(m) {
            let mut s = DVector::zeros(hp.d);
            for &l in g.set.members() {
                s += w.row(l).transpose();
            }
            for c in g.columns() {
                num += state.h.column(c).dot(&s);
                den += s.norm_squared();
            }
            targets.push((g, s));
        }
        let c_hat = if den > 0.0 { num / den } else { f64::NAN };
        fitted_cm.insert(m, c_hat);
        let mut tag_res: f64 = 0.0;
        if !(c_hat > 0.0) {
            tag_res = f64::INFINITY;
        } else {
            for (g, s) in &targets {
                for c in g.columns() {
                    let h = state.h.column(c);
                    tag_res = tag_res.max(ratio((h - s * c_hat).norm(), h.norm()));
                }
            }
        }
        push(label, tag_res);

        // two-valued logits and the gap consistency
        let mut spread: f64 = 0.0;
        let mut gap_sum = 0.0;
        let mut zero_sum: f64 = 0.0;
        let mut count = 0usize;
        for g in data.groups_with_multiplicity(m) {
            for c in g.columns() {
                let col = z.column(c);
                let (mut in_lo, mut in_hi, mut out_lo, mut out_hi) =
                    (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
                let (mut in_sum, mut out_sum) = (0.0, 0.0);
                for j in 0..k {
                    let v = col[j];
                    if g.set.contains(j) {
                        in_lo = in_lo.min(v);
                        in_hi = in_hi.max(v);
                        in_sum += v;
                    } else {
                        out_lo = out_lo.min(v);
                        out_hi = out_hi.max(v);
                        out_sum += v;
                    }
                }
                let m_f = m as f64;
                let z_in = in_sum / m_f;
                let z_out = out_sum / (k_f - m_f);
                let gap = z_in - z_out;
                spread = spread.max(ratio((in_hi - in_lo) + (out_hi - out_lo), gap.max(0.0)));
                zero_sum = zero_sum.max(ratio(
                    (m_f * z_in + (k_f - m_f) * z_out - k_f * b_mean).abs(),
                    k_f * gap.max(0.0),
                ));
                gap_sum += gap;
                count += 1;
            }
        }
        let mean_gap = gap_sum / count as f64;
        push(format!("logit_spread_m{m}"), spread);
        let predicted_gap = c_hat * rho / (k_f - 1.0);
        push(
            format!("logit_gap_m{m}"),
            ratio((mean_gap - predicted_gap).abs(), mean_gap.max(0.0)).max(zero_sum),
        );
        fitted_c1.insert(m, c1_from_gap(k, m, mean_gap));

        // per-sample-index conditions need every subset with the same count
        let Some(n) = data.config.balanced_count(m).filter(|&n| n > 0) else {
            continue;
        };
        let sets = subsets(k, m)?;
        let block = data.block(m);
        let hm = state.h.columns(block.start, block.len()).into_owned();
        let hm_norm = hm.norm();
        let coef = (binomial(k - 2, m - 1) as f64 / n as f64).sqrt() * ratio(hm_norm, w_norm);
        let mut mean_res: f64 = 0.0;
        let mut dual_res: f64 = 0.0;
        let mut proj_res: f64 = 0.0;
        let projector = if m >= 2 { Some(row_space_projector(k, m)?) } else { None };
        for i in 0..n {
            let cols: Vec<usize> = (0..sets.len()).map(|rank| rank * n + i).collect();
            let tilde = DMatrix::from_fn(hp.d, cols.len(), |r, c| hm[(r, cols[c])]);
            let col_sum = tilde.column_sum();
            mean_res = mean_res.max(ratio(col_sum.norm(), tilde.norm()));
            for j in 0..k {
                let mut acc = DVector::zeros(hp.d);
                for (rank, s) in sets.iter().enumerate() {
                    if s.contains(j) {
                        acc += tilde.column(rank);
                    }
                }
                let target = w.row(j).transpose() * coef;
                dual_res = dual_res.max(ratio((target - &acc).norm(), acc.norm()));
            }
            if let Some(p) = &projector {
                proj_res = proj_res.max(ratio((&tilde - &tilde * p).norm(), tilde.norm()));
            }
        }
        push(format!("column_mean_m{m}"), mean_res);
        push(format!("duality_sum_m{m}"), dual_res);
        if projector.is_some() {
            push(format!("projection_m{m}"), proj_res);
            push(format!("pascal_m{m}"), pascal_norm_check(&hm, k, m)?);
        }
    }

    let pass = checks.iter().all(|c| c.pass);
    Ok(VerificationReport {
        checks,
        fitted_cm,
        fitted_c1,
        pass,
    })
}
