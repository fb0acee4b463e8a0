use mlnc::labelspace::{binomial, generate_dataset, subsets, Dataset, LabelConfig};
use mlnc::metrics::angle;
use mlnc::optimizer::init_state;
use mlnc::theory::*;
use mlnc::ufm::{gradient, logits, objective, Hyperparams, ModelState};
use nalgebra::DVector;

fn reference() -> (Dataset, Hyperparams) {
    let data = generate_dataset(&LabelConfig::balanced(3, &[10, 10]).unwrap()).unwrap();
    (data, Hyperparams::new(5, 5e-3, 5e-3, 1e-3))
}

/// Objective of the tag-wise family written in logit-gap coordinates: with
/// `‖W‖_F² = ρ` and gaps `δ_m`, each sample's loss is `m·log(m + (K−m)e^{−δ_m})`
/// and `‖H_m‖_F² = N_m δ_m² (K−1) m (K−m)/(ρK)`.
fn reduced_objective(p: &BalancedProblem, rho: f64, gaps: &[f64]) -> f64 {
    let k = p.num_classes as f64;
    let n = p.total();
    let mut f = p.lambda_w * rho;
    for (&(m, nm), &g) in p.counts.iter().zip(gaps) {
        let mf = m as f64;
        let nm_tot = nm as f64 * binomial(p.num_classes, m) as f64;
        f += nm_tot / n * mf * (mf + (k - mf) * (-g).exp()).ln();
        f += p.lambda_h * nm_tot * g * g * (k - 1.0) * mf * (k - mf) / (rho * k);
    }
    f
}

/// Independent minimizer of the reduced objective by coordinate golden search.
fn reduced_minimum(p: &BalancedProblem) -> (f64, f64) {
    fn golden(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        for _ in 0..200 {
            let x1 = b - r * (b - a);
            let x2 = a + r * (b - a);
            if f(x1) <= f(x2) {
                b = x2;
            } else {
                a = x1;
            }
        }
        0.5 * (a + b)
    }
    let mut rho = 1.0;
    let mut gaps = vec![1.0; p.counts.len()];
    for _ in 0..400 {
        rho = golden(|r| reduced_objective(p, r, &gaps), 1e-4, 100.0);
        for j in 0..gaps.len() {
            let mut trial = gaps.clone();
            gaps[j] = golden(
                |g| {
                    trial[j] = g;
                    reduced_objective(p, rho, &trial)
                },
                1e-6,
                50.0,
            );
        }
    }
    (rho, reduced_objective(p, rho, &gaps))
}

#[test]
fn optimal_rho_matches_independent_reduced_minimum() {
    let (data, hp) = reference();
    let p = BalancedProblem::new(&data, &hp).unwrap();
    let sol = p.optimal_rho().unwrap();
    let (rho, fmin) = reduced_minimum(&p);
    assert!((sol.rho - rho).abs() < 1e-5 * rho, "{} vs {}", sol.rho, rho);
    assert!((sol.bound - fmin).abs() < 1e-10 * fmin.abs());
}

#[test]
fn construction_is_critical_and_tight() {
    for (cfg, d) in [
        (LabelConfig::balanced(3, &[10, 10]).unwrap(), 5),
        (LabelConfig::balanced(4, &[3, 2, 1]).unwrap(), 3),
        (LabelConfig::balanced(5, &[2, 0, 1]).unwrap(), 7),
        (LabelConfig::balanced(6, &[4]).unwrap(), 6),
    ] {
        let data = generate_dataset(&cfg).unwrap();
        let hp = Hyperparams::new(d, 4e-3, 7e-3, 1e-3);
        let p = BalancedProblem::new(&data, &hp).unwrap();
        let sol = p.optimal_rho().unwrap();
        assert!(sol.c_system_residual() < 1e-10);
        for seed in [0, 9] {
            let st = construct_global(&data, &hp, &sol, seed).unwrap();
            let f = objective(&st, &data, &hp).unwrap();
            let g = gradient(&st, &data, &hp).unwrap();
            assert!(g.norm() < 1e-6, "grad {}", g.norm());
            assert!((f - sol.bound).abs() < 1e-8 * f.abs(), "{f} vs {}", sol.bound);
            let rep = verify_global(&st, &data, &hp, 1e-8).unwrap();
            for c in &rep.checks {
                assert!(c.pass, "{} = {:e}", c.name, c.residual);
            }
            for pm in &sol.per_m {
                let blk = data.block(pm.m);
                let hm = st.h.columns(blk.start, blk.len()).into_owned();
                assert!((hm.norm() - pm.hm_norm).abs() < 1e-8 * pm.hm_norm);
                assert!(pascal_norm_check(&hm, cfg.num_classes, pm.m).unwrap() < 1e-10);
            }
        }
    }
}

#[test]
fn bound_is_minimal_at_rho_star() {
    let (data, hp) = reference();
    let p = BalancedProblem::new(&data, &hp).unwrap();
    let sol = p.optimal_rho().unwrap();
    for s in [0.5, 0.9, 1.1, 2.0] {
        assert!(p.bound_at(s * sol.rho).unwrap().bound >= sol.bound);
    }
}

#[test]
fn c3_identity_at_construction() {
    let data = generate_dataset(&LabelConfig::balanced(4, &[2, 3, 1]).unwrap()).unwrap();
    let hp = Hyperparams::new(5, 5e-3, 5e-3, 0.0);
    let sol = BalancedProblem::new(&data, &hp).unwrap().optimal_rho().unwrap();
    let st = construct_global(&data, &hp, &sol, 4).unwrap();
    for pm in &sol.per_m {
        let sets = subsets(4, pm.m).unwrap();
        let scale = 4.0 / (pm.m as f64 * sets.len() as f64);
        for i in 0..pm.n {
            let mut mean = DVector::zeros(5);
            for r in 0..sets.len() {
                mean += st.h.column(data.column(pm.m, r, i).unwrap());
            }
            mean /= sets.len() as f64;
            for k in 0..4 {
                let mut acc = DVector::zeros(5);
                for (r, s) in sets.iter().enumerate() {
                    if s.contains(k) {
                        acc += st.h.column(data.column(pm.m, r, i).unwrap());
                    }
                }
                let lhs = st.w.row(k).transpose() * pm.c3;
                let rhs = acc * scale - &mean;
                assert!((lhs - &rhs).norm() < 1e-8 * (1.0 + rhs.norm()));
            }
        }
    }
}

#[test]
fn constructed_logits_are_two_valued() {
    let (data, hp) = reference();
    let sol = BalancedProblem::new(&data, &hp).unwrap().optimal_rho().unwrap();
    let st = construct_global(&data, &hp, &sol, 2).unwrap();
    let z = logits(&st);
    for col in 0..data.len() {
        let s = data.label_set(col);
        let pm = sol.constants(s.multiplicity()).unwrap();
        for j in 0..3 {
            let want = if s.contains(j) { pm.z_in } else { pm.z_out };
            assert!((z[(j, col)] - want).abs() < 1e-10);
        }
        let mf = pm.m as f64;
        assert!((mf * pm.alpha + (3.0 - mf) * pm.beta - 1.0).abs() < 1e-14);
    }
}

#[test]
fn multiplicity_one_features_align_with_rows() {
    let (data, hp) = reference();
    let sol = BalancedProblem::new(&data, &hp).unwrap().optimal_rho().unwrap();
    let st = construct_global(&data, &hp, &sol, 1).unwrap();
    for g in data.groups_with_multiplicity(1) {
        let w = st.w.row(g.set.members()[0]).transpose();
        for c in g.columns() {
            let h = st.h.column(c).into_owned();
            assert!(angle(&h, &w).unwrap() < 1e-7);
        }
    }
}

/// Rescale a state so that `‖W‖_F² = rho` and `λ_H‖H‖_F² = λ_W ρ`.
fn balanced_at(mut st: ModelState, hp: &Hyperparams, rho: f64) -> ModelState {
    st.w *= (rho / st.w.norm_squared()).sqrt();
    st.h *= (hp.lambda_w * rho / (hp.lambda_h * st.h.norm_squared())).sqrt();
    st
}

#[test]
fn bound_holds_on_random_balanced_states() {
    let (data, hp) = reference();
    let p = BalancedProblem::new(&data, &hp).unwrap();
    for seed in 0..60u64 {
        let rho = 0.05 + (seed as f64) * 0.1;
        let sol = p.bound_at(rho).unwrap();
        let mut st = balanced_at(init_state(&data, &hp, seed, 1.0), &hp, rho);
        st.b = DVector::from_fn(3, |i, _| (i as f64 - 1.0) * 0.01 * seed as f64);
        let f = objective(&st, &data, &hp).unwrap();
        assert!(f >= sol.bound - 1e-12, "seed {seed}: {f} < {}", sol.bound);
    }
}

#[test]
fn verify_reports_large_residuals_on_random_state() {
    let (data, hp) = reference();
    let st = init_state(&data, &hp, 5, 1.0);
    let rep = verify_global(&st, &data, &hp, 1e-3).unwrap();
    assert!(!rep.pass);
    assert!(rep.checks.iter().all(|c| c.residual >= 0.0));
    let zero = ModelState::zeros(3, 5, data.len());
    let rep = verify_global(&zero, &data, &hp, 1e-3).unwrap();
    assert!(!rep.pass);
}

#[test]
fn etf_gram_across_sizes() {
    for k in 2..=64usize {
        for d in [k - 1, k, 2 * k] {
            if d == 0 {
                continue;
            }
            for seed in [0, 3] {
                let e = simplex_etf(k, d, 1.3, seed).unwrap();
                assert!(e.gram_error() < 1e-12, "K={k} d={d}: {}", e.gram_error());
                assert!((e.classifier().norm_squared() - 1.3).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn c_system_roots_from_multiple_starts() {
    let data = generate_dataset(&LabelConfig::balanced(5, &[3, 2, 2]).unwrap()).unwrap();
    let hp = Hyperparams::new(6, 5e-3, 5e-3, 1e-3);
    let p = BalancedProblem::new(&data, &hp).unwrap();
    let roots = p.c1_roots(2.0);
    assert_eq!(roots.len(), 1);
    let main = p.solve_c1_system(2.0).unwrap();
    for (a, b) in roots[0].iter().zip(&main) {
        assert!((a - b).abs() < 1e-8 * a);
    }
}

#[test]
fn origin_is_not_a_valid_solution() {
    let (data, hp) = reference();
    let p = BalancedProblem::new(&data, &hp).unwrap();
    let sol = p.optimal_rho().unwrap();
    let f0 = objective(&ModelState::zeros(3, 5, data.len()), &data, &hp).unwrap();
    assert!(sol.bound < f0);
}
