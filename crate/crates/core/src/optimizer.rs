//! Full-batch heavy-ball gradient descent on the UFM objective.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::Dataset;
use crate::metrics::{metric_report, MetricReport};
use crate::ufm::{objective_and_gradient, Gradient, Hyperparams, ModelState};

/// Round-off allowance when comparing objective values between steps,
/// relative to `1 + |f|`.
pub const F_SLACK: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub max_iters: usize,
    pub step_size: f64,
    pub momentum: f64,
    pub grad_tol: f64,
    pub seed: u64,
    pub init_scale: f64,
    pub log_every: usize,
    /// Attach a metric report to every logged record.
    #[serde(default = "default_true")]
    pub record_metrics: bool,
}

fn default_true() -> bool {
    true
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_iters: 200_000,
            step_size: 0.5,
            momentum: 0.9,
            grad_tol: 1e-8,
            seed: 0,
            init_scale: 0.1,
            log_every: 100,
            record_metrics: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters == 0 {
            return Err(Error::arg("max_iters must be positive"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::arg("step_size must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg("momentum must lie in [0, 1)"));
        }
        if !(self.grad_tol > 0.0) {
            return Err(Error::arg("grad_tol must be positive"));
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return Err(Error::arg("init_scale must be nonnegative"));
        }
        if self.log_every == 0 {
            return Err(Error::arg("log_every must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub iter: usize,
    pub f: f64,
    pub grad_norm: f64,
    pub metrics: Option<MetricReport>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub final_state: ModelState,
    pub converged: bool,
    /// Iterations performed (accepted steps).
    pub iterations: usize,
    pub final_step_size: f64,
}

impl Trajectory {
    pub fn final_record(&self) -> &Record {
        self.records.last().expect("trajectory has at least one record")
    }
}

/// Gaussian initialization with standard deviation `init_scale/√d` for every
/// entry of `W` then `H` (column-major), `b = 0`. The generator is ChaCha8
/// seeded with `seed`, so a seed fixes the state bit for bit.
pub fn init_state(data: &Dataset, hp: &Hyperparams, seed: u64, init_scale: f64) -> ModelState {
    let k = data.num_classes();
    let n = data.len();
    let std = init_scale / (hp.d as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |_: usize, _: usize| -> f64 {
        let x: f64 = StandardNormal.sample(&mut rng);
        x * std
    };
    let w = DMatrix::from_fn(k, hp.d, &mut draw);
    let h = DMatrix::from_fn(hp.d, n, &mut draw);
    ModelState {
        w,
        h,
        b: DVector::zeros(k),
    }
}

fn record(
    iter: usize,
    f: f64,
    g: &Gradient,
    state: &ModelState,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Record {
    Record {
        iter,
        f,
        grad_norm: g.norm(),
        metrics: cfg.record_metrics.then(|| metric_report(state, data)),
    }
}

/// Heavy-ball descent with step control.
///
/// A proposed step `x + v'` with `v' = μ v − η ∇f(x)` is accepted when it does
/// not increase `f` (up to [`F_SLACK`] round-off, and then only if the
/// gradient shrinks). On rejection the velocity is reset first; a rejected
/// plain gradient step halves `η`.
pub fn train(
    state0: &ModelState,
    data: &Dataset,
    hp: &Hyperparams,
    cfg: &TrainConfig,
) -> Result<Trajectory> {
    cfg.validate()?;
    hp.validate()?;
    state0.check_shapes(data, hp)?;

    let mut x = state0.clone();
    let (mut f, mut g) = objective_and_gradient(&x, data, hp)?;
    let mut gnorm = g.norm();
    let mut v = Gradient::zeros_like(&x);
    let mut momentum_active = false;
    let mut eta = cfg.step_size;
    let mut records = vec![record(0, f, &g, &x, data, cfg)];

    if gnorm <= cfg.grad_tol {
        return Ok(Trajectory {
            records,
            final_state: x,
            converged: true,
            iterations: 0,
            final_step_size: eta,
        });
    }

    let mut converged = false;
    let mut it = 0;
    while it < cfg.max_iters {
        it += 1;
        let (x_new, v_new, f_new, g_new) = loop {
            let v_try = v.scaled(cfg.momentum).add_scaled(&g, -eta);
            let x_try = x.moved(&v_try, 1.0);
            let accepted = match objective_and_gradient(&x_try, data, hp) {
                Ok((f_try, g_try)) if f_try.is_finite() && g_try.is_finite() => {
                    let slack = F_SLACK * (1.0 + f.abs());
                    if f_try <= f || (f_try <= f + slack && g_try.norm() < gnorm) {
                        Some((f_try, g_try))
                    } else {
                        None
                    }
                }
                _ => None,
            };
            if let Some((f_try, g_try)) = accepted {
                break (x_try, v_try, f_try, g_try);
            }
            if momentum_active {
                v = Gradient::zeros_like(&x);
                momentum_active = false;
            } else {
                eta *= 0.5;
                if eta < 1e-300 {
                    return Err(Error::Numeric {
                        message: format!("step size underflow at iteration {it}"),
                        last_state: Some(Box::new(x)),
                    });
                }
            }
        };
        x = x_new;
        v = v_new;
        momentum_active = cfg.momentum > 0.0;
        f = f_new;
        g = g_new;
        gnorm = g.norm();

        if gnorm <= cfg.grad_tol {
            converged = true;
            records.push(record(it, f, &g, &x, data, cfg));
            break;
        }
        if it % cfg.log_every == 0 || it == cfg.max_iters {
            records.push(record(it, f, &g, &x, data, cfg));
        }
    }

    Ok(Trajectory {
        records,
        final_state: x,
        converged,
        iterations: it,
        final_step_size: eta,
    })
}

#[derive(Debug, Clone)]
pub struct SeedRun {
    pub seed: u64,
    pub trajectory: Trajectory,
}

#[derive(Debug, Clone)]
pub struct MultiSeedReport {
    pub runs: Vec<SeedRun>,
    /// Index into `runs` of the lowest final objective.
    pub best: usize,
    /// `(max f − min f)/|min f|` over final objectives.
    pub relative_spread: f64,
}

impl MultiSeedReport {
    pub fn best_run(&self) -> &SeedRun {
        &self.runs[self.best]
    }
}

/// Independent runs from several seeds, in parallel. Results are ordered as
/// `seeds`, so the report does not depend on scheduling.
pub fn train_seeds(
    data: &Dataset,
    hp: &Hyperparams,
    cfg: &TrainConfig,
    seeds: &[u64],
) -> Result<MultiSeedReport> {
    if seeds.is_empty() {
        return Err(Error::arg("at least one seed is required"));
    }
    let runs = seeds
        .par_iter()
        .map(|&seed| {
            let mut c = cfg.clone();
            c.seed = seed;
            let s0 = init_state(data, hp, seed, c.init_scale);
            train(&s0, data, hp, &c).map(|trajectory| SeedRun { seed, trajectory })
        })
        .collect::<Result<Vec<_>>>()?;
    let finals: Vec<f64> = runs.iter().map(|r| r.trajectory.final_record().f).collect();
    let (best, fmin) = finals
        .iter()
        .cloned()
        .enumerate()
        .fold((0, f64::INFINITY), |acc, (i, f)| if f < acc.1 { (i, f) } else { acc });
    let fmax = finals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(MultiSeedReport {
        runs,
        best,
        relative_spread: (fmax - fmin) / fmin.abs().max(f64::MIN_POSITIVE),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    /// `‖WᵀW − (λ_H/λ_W) H Hᵀ‖_F` relative to the larger of the two norms.
    pub residual: f64,
    /// `ρ = ‖W‖_F²`.
    pub rho: f64,
    pub h_norm_sq: f64,
    /// `|‖H‖_F² − (λ_W/λ_H)ρ|` relative to `max(‖H‖_F², (λ_W/λ_H)ρ)`.
    pub norm_identity_residual: f64,
    pub pass: bool,
}

fn rel(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// The critical-point balance `WᵀW = (λ_H/λ_W) H Hᵀ`.
pub fn check_balance(state: &ModelState, hp: &Hyperparams, tol: f64) -> BalanceReport {
    let wtw = state.w.transpose() * &state.w;
    let hht = &state.h * state.h.transpose() * (hp.lambda_h / hp.lambda_w);
    let residual = rel((&wtw - &hht).norm(), wtw.norm().max(hht.norm()));
    let rho = state.w.norm_squared();
    let h_norm_sq = state.h.norm_squared();
    let predicted = hp.lambda_w / hp.lambda_h * rho;
    let norm_identity_residual = rel((h_norm_sq - predicted).abs(), h_norm_sq.max(predicted));
    BalanceReport {
        residual,
        rho,
        h_norm_sq,
        norm_identity_residual,
        pass: residual <= tol && norm_identity_residual <= tol,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labelspace::{generate_dataset, LabelConfig};

    fn setup() -> (Dataset, Hyperparams) {
        let data = generate_dataset(&LabelConfig::balanced(3, &[4, 4]).unwrap()).unwrap();
        (data, Hyperparams::new(5, 5e-3, 5e-3, 1e-3))
    }

    #[test]
    fn init_is_deterministic() {
        let (data, hp) = setup();
        let a = init_state(&data, &hp, 7, 0.1);
        let b = init_state(&data, &hp, 7, 0.1);
        assert_eq!(a, b);
        let c = init_state(&data, &hp, 8, 0.1);
        assert!(a.diff(&c).norm() > 0.0);
        let z = init_state(&data, &hp, 7, 0.0);
        assert_eq!(z.norm(), 0.0);
    }

    #[test]
    fn origin_is_fixed_point() {
        let (data, hp) = setup();
        let s0 = ModelState::zeros(3, 5, data.len());
        let cfg = TrainConfig {
            momentum: 0.0,
            ..TrainConfig::default()
        };
        let t = train(&s0, &data, &hp, &cfg).unwrap();
        assert!(t.converged);
        assert_eq!(t.iterations, 0);
        assert_eq!(t.final_state, s0);
    }

    #[test]
    fn short_run_is_monotone_and_reproducible() {
        let (data, hp) = setup();
        let cfg = TrainConfig {
            max_iters: 3000,
            log_every: 10,
            record_metrics: false,
            ..TrainConfig::default()
        };
        let s0 = init_state(&data, &hp, 1, 0.1);
        let a = train(&s0, &data, &hp, &cfg).unwrap();
        let b = train(&s0, &data, &hp, &cfg).unwrap();
        assert_eq!(a.records, b.records);
        for w in a.records.windows(2) {
            assert!(w[1].f <= w[0].f + F_SLACK * (1.0 + w[0].f.abs()));
        }
        assert!(a.final_record().f < a.records[0].f);
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            momentum: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            grad_tol: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn balance_at_origin() {
        let (data, hp) = setup();
        let r = check_balance(&ModelState::zeros(3, 5, data.len()), &hp, 1e-12);
        assert!(r.pass);
        assert_eq!(r.residual, 0.0);
        assert_eq!(r.rho, 0.0);
    }
}
