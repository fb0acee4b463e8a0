#![allow(dead_code)]

use mlnc::labelspace::{generate_dataset, Dataset, LabelConfig};
use mlnc::optimizer::init_state;
use mlnc::ufm::{gradient, hessian_vector_product, objective, Gradient, Hyperparams, ModelState};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub fn reference_data() -> Dataset {
    generate_dataset(&LabelConfig::balanced(3, &[10, 10]).unwrap()).unwrap()
}

pub fn reference_hp(d: usize) -> Hyperparams {
    Hyperparams::new(d, 5e-3, 5e-3, 1e-3)
}

/// Random problem with K ≤ 6, d ≤ 12, N ≤ 60 and a generic state.
pub fn random_problem(seed: u64) -> (Dataset, Hyperparams, ModelState) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let k = rng.random_range(2..=6usize);
        let max_m = rng.random_range(1..k);
        let per: Vec<usize> = (0..max_m).map(|_| rng.random_range(0..=2usize)).collect();
        let Ok(cfg) = LabelConfig::balanced(k, &per) else { continue };
        let Ok(data) = generate_dataset(&cfg) else { continue };
        if data.is_empty() || data.len() > 60 {
            continue;
        }
        let d = rng.random_range(1..=12usize);
        let lb = if rng.random_bool(0.3) { 0.0 } else { rng.random_range(1e-3..0.1) };
        let hp = Hyperparams::new(d, rng.random_range(1e-3..0.1), rng.random_range(1e-3..0.1), lb);
        let mut st = init_state(&data, &hp, seed, rng.random_range(0.3..3.0));
        for v in st.b.iter_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
        return (data, hp, st);
    }
}

pub fn random_direction(like: &ModelState, seed: u64) -> Gradient {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = Gradient::zeros_like(like);
    for x in g.dw.iter_mut().chain(g.dh.iter_mut()).chain(g.db.iter_mut()) {
        *x = StandardNormal.sample(&mut rng);
    }
    let n = g.norm();
    g.scaled(1.0 / n)
}

fn flat(g: &Gradient) -> DVector<f64> {
    DVector::from_iterator(
        g.dw.len() + g.dh.len() + g.db.len(),
        g.dw.iter().chain(g.dh.iter()).chain(g.db.iter()).copied(),
    )
}

/// Worst relative gradient error over a full coordinate-wise central
/// difference, `‖g_fd − g‖/‖g‖`.
pub fn fd_gradient_error(data: &Dataset, hp: &Hyperparams, st: &ModelState) -> f64 {
    let g = gradient(st, data, hp).unwrap();
    let mut fd = Gradient::zeros_like(st);
    let h = 1e-5;
    let eval = |s: &ModelState| objective(s, data, hp).unwrap();
    let bump = |get: &dyn Fn(&mut ModelState) -> &mut f64| {
        let mut p = st.clone();
        *get(&mut p) += h;
        let mut m = st.clone();
        *get(&mut m) -= h;
        (eval(&p) - eval(&m)) / (2.0 * h)
    };
    for i in 0..st.w.len() {
        fd.dw[i] = bump(&|s: &mut ModelState| &mut s.w[i]);
    }
    for i in 0..st.h.len() {
        fd.dh[i] = bump(&|s: &mut ModelState| &mut s.h[i]);
    }
    for i in 0..st.b.len() {
        fd.db[i] = bump(&|s: &mut ModelState| &mut s.b[i]);
    }
    (flat(&fd) - flat(&g)).norm() / flat(&g).norm()
}

/// `‖(∇f(x+hv) − ∇f(x−hv))/2h − Hv‖/‖Hv‖` for a random unit `v`.
pub fn fd_hvp_error(data: &Dataset, hp: &Hyperparams, st: &ModelState, seed: u64) -> f64 {
    let v = random_direction(st, seed);
    let hv = hessian_vector_product(st, data, hp, &v).unwrap();
    let h = 1e-4;
    let gp = gradient(&st.moved(&v, h), data, hp).unwrap();
    let gm = gradient(&st.moved(&v, -h), data, hp).unwrap();
    let fd = gp.add_scaled(&gm, -1.0).scaled(1.0 / (2.0 * h));
    fd.add_scaled(&hv, -1.0).norm() / hv.norm()
}
