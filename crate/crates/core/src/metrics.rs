//! Collapse measurements on a trained (or constructed) state.
//!
//! Definitions used throughout:
//!
//! * `NC1_m = tr(Σ_W Σ_B†) / K_m` over the multiplicity-`m` samples, with
//!   `Σ_W` the within-class covariance, `Σ_B` the covariance of the class
//!   means about their average, and `K_m` the number of classes present.
//! * `NC2 = ‖W Wᵀ/‖W Wᵀ‖_F − J/‖J‖_F‖_F` with `J = I − 11ᵀ/K`.
//! * `NC3 = ‖W/‖W‖_F − H̄₁ᵀ/‖H̄₁‖_F‖_F` with `H̄₁` the singleton class means.
//! * `NC_m` is the mean angle between each multiplicity-2 mean and the sum of
//!   its two component singleton means, divided by the mean angle over every
//!   (multiplicity-2 mean, sum of two distinct singleton means) pair.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::{binomial, subsets, Dataset, LabelSet};
use crate::ufm::ModelState;

/// Relative cutoff on singular values when pseudo-inverting `Σ_B`.
pub const PINV_RCOND: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// `+inf` marks a multiplicity whose class means all coincide.
    pub nc1: BTreeMap<usize, f64>,
    pub nc2: Option<f64>,
    pub nc3: Option<f64>,
    /// The multiplicity-2 angle ratio.
    pub ncm: Option<f64>,
    /// Angle ratio for every multiplicity `m ≥ 2` where it is defined.
    pub ncm_by_m: BTreeMap<usize, f64>,
    pub w_norm_spread: f64,
    pub bias_residual: f64,
}

/// Mean feature of each label set present in the data, keyed by `(m, rank)`.
pub fn class_means(h: &DMatrix<f64>, data: &Dataset) -> BTreeMap<(usize, usize), DVector<f64>> {
    data.groups
        .iter()
        .map(|g| {
            let sum = h.columns(g.start, g.count).column_sum();
            ((g.m(), g.rank), sum / g.count as f64)
        })
        .collect()
}

/// Moore–Penrose inverse of a symmetric PSD matrix, truncating eigenvalues
/// below `PINV_RCOND · λ_max`. `None` when the matrix is zero.
fn sym_pinv(a: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let eig = SymmetricEigen::new(a.clone());
    let top = eig.eigenvalues.iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
    if top == 0.0 {
        return None;
    }
    let cutoff = PINV_RCOND * top;
    let n = a.nrows();
    let mut out = DMatrix::zeros(n, n);
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        if lam.abs() > cutoff {
            let v = eig.eigenvectors.column(j);
            out += (v * v.transpose()) / lam;
        }
    }
    Some(out)
}

/// Within-class variability per multiplicity. Multiplicities with fewer than
/// two classes present are omitted.
pub fn nc1(h: &DMatrix<f64>, data: &Dataset) -> BTreeMap<usize, f64> {
    let d = h.nrows();
    let means = class_means(h, data);
    let mut out = BTreeMap::new();
    for m in data.config.present_multiplicities() {
        let groups: Vec<_> = data.groups_with_multiplicity(m).collect();
        if groups.len() < 2 {
            continue;
        }
        let km = groups.len() as f64;
        let global = groups
            .iter()
            .fold(DVector::zeros(d), |acc, g| acc + &means[&(m, g.rank)])
            / km;
        let mut sigma_b = DMatrix::zeros(d, d);
        let mut sigma_w = DMatrix::zeros(d, d);
        let mut n_m = 0usize;
        for g in &groups {
            let mu = &means[&(m, g.rank)];
            let centered = mu - &global;
            sigma_b += &centered * centered.transpose();
            for c in g.columns() {
                let dev = h.column(c) - mu;
                sigma_w += &dev * dev.transpose();
            }
            n_m += g.count;
        }
        sigma_b /= km;
        sigma_w /= n_m as f64;
        let value = match sym_pinv(&sigma_b) {
            Some(pinv) => (sigma_w * pinv).trace() / km,
            None => f64::INFINITY,
        };
        out.insert(m, value.max(0.0));
    }
    out
}

fn centered_simplex(num_classes: usize) -> DMatrix<f64> {
    let k = num_classes as f64;
    DMatrix::from_fn(num_classes, num_classes, |i, j| {
        if i == j {
            1.0 - 1.0 / k
        } else {
            -1.0 / k
        }
    })
}

/// Distance of the normalized classifier Gram from the simplex-ETF Gram.
pub fn nc2(w: &DMatrix<f64>) -> Result<f64> {
    let gram = w * w.transpose();
    let gn = gram.norm();
    if gn == 0.0 {
        return Err(Error::arg("NC2 is undefined for a zero classifier"));
    }
    let target = centered_simplex(w.nrows());
    let tn = target.norm();
    Ok((gram / gn - target / tn).norm())
}

/// `d × K` matrix of singleton class means, column `k` for class `{k}`.
pub fn singleton_means(h: &DMatrix<f64>, data: &Dataset) -> Result<DMatrix<f64>> {
    let k = data.num_classes();
    let means = class_means(h, data);
    let mut out = DMatrix::zeros(h.nrows(), k);
    for c in 0..k {
        let mu = means.get(&(1, c)).ok_or_else(|| {
            Error::arg(format!("class {{{c}}} has no multiplicity-1 samples"))
        })?;
        out.set_column(c, mu);
    }
    Ok(out)
}

/// Self-duality residual between `W` and the singleton class means.
pub fn nc3(w: &DMatrix<f64>, h: &DMatrix<f64>, data: &Dataset) -> Result<f64> {
    let hbar = singleton_means(h, data)?;
    let wn = w.norm();
    let hn = hbar.norm();
    if wn == 0.0 || hn == 0.0 {
        return Err(Error::arg("NC3 is undefined for zero W or zero class means"));
    }
    Ok((w / wn - hbar.transpose() / hn).norm())
}

/// Geometric angle in radians, clamping the cosine into `[-1, 1]`.
pub fn angle(u: &DVector<f64>, v: &DVector<f64>) -> Option<f64> {
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 {
        return None;
    }
    Some((u.dot(v) / (nu * nv)).clamp(-1.0, 1.0).acos())
}

#[derive(Debug, Clone, PartialEq)]
pub struct NcmDetail {
    pub value: f64,
    pub matched_angles: usize,
    pub all_angles: usize,
    /// Pairs dropped because one side was the zero vector.
    pub skipped: usize,
}

/// Tag-wise angle ratio for multiplicity `m ≥ 2`.
pub fn ncm_detail(h: &DMatrix<f64>, data: &Dataset, m: usize) -> Result<NcmDetail> {
    let k = data.num_classes();
    if m < 2 || m >= k {
        return Err(Error::arg(format!("NC_m needs 2 <= m < K, got m = {m}")));
    }
    let means = class_means(h, data);
    let singles: BTreeMap<usize, &DVector<f64>> = (0..k)
        .filter_map(|c| means.get(&(1, c)).map(|v| (c, v)))
        .collect();
    let sum_of = |set: &LabelSet| -> Option<DVector<f64>> {
        let mut acc = DVector::zeros(h.nrows());
        for c in set.members() {
            acc += *singles.get(c)?;
        }
        Some(acc)
    };
    // every size-m sum of distinct present singleton means
    let all_sums: Vec<DVector<f64>> = subsets(k, m)?.iter().filter_map(sum_of).collect();

    let mut skipped = 0usize;
    let mut matched = Vec::new();
    let mut unmatched = Vec::new();
    for g in data.groups_with_multiplicity(m) {
        let mu = &means[&(m, g.rank)];
        if let Some(s) = sum_of(&g.set) {
            match angle(mu, &s) {
                Some(a) => matched.push(a),
                None => skipped += 1,
            }
        }
        for s in &all_sums {
            match angle(mu, s) {
                Some(a) => unmatched.push(a),
                None => skipped += 1,
            }
        }
    }
    if matched.is_empty() {
        return Err(Error::arg(format!(
            "no multiplicity-{m} class has all of its singleton components present"
        )));
    }
    let num = matched.iter().sum::<f64>() / matched.len() as f64;
    let den = unmatched.iter().sum::<f64>() / unmatched.len() as f64;
    if den == 0.0 {
        return Err(Error::arg("NC_m denominator is zero"));
    }
    Ok(NcmDetail {
        value: num / den,
        matched_angles: matched.len(),
        all_angles: unmatched.len(),
        skipped,
    })
}

pub fn ncm(h: &DMatrix<f64>, data: &Dataset) -> Result<f64> {
    ncm_detail(h, data, 2).map(|d| d.value)
}

/// Relative spread `(max − min)/mean` of the classifier row norms.
pub fn w_norm_spread(w: &DMatrix<f64>) -> f64 {
    let norms: Vec<f64> = w.row_iter().map(|r| r.norm()).collect();
    let mean = norms.iter().sum::<f64>() / norms.len() as f64;
    if mean == 0.0 {
        return 0.0;
    }
    let max = norms.iter().cloned().fold(f64::MIN, f64::max);
    let min = norms.iter().cloned().fold(f64::MAX, f64::min);
    (max - min) / mean
}

/// `‖b − b̄·1‖`: how far the bias is from a constant vector.
pub fn bias_residual(b: &DVector<f64>) -> f64 {
    let mean = b.mean();
    b.iter().map(|v| (v - mean).powi(2)).sum::<f64>().sqrt()
}

pub fn metric_report(state: &ModelState, data: &Dataset) -> MetricReport {
    let k = data.num_classes();
    let ncm_by_m = (2..=data.config.max_multiplicity.min(k - 1))
        .filter_map(|m| ncm_detail(&state.h, data, m).ok().map(|d| (m, d.value)))
        .collect::<BTreeMap<_, _>>();
    MetricReport {
        nc1: nc1(&state.h, data),
        nc2: nc2(&state.w).ok(),
        nc3: nc3(&state.w, &state.h, data).ok(),
        ncm: ncm_by_m.get(&2).copied(),
        ncm_by_m,
        w_norm_spread: w_norm_spread(&state.w),
        bias_residual: bias_residual(&state.b),
    }
}

/// Number of (multiplicity-`m` mean, size-`m` singleton sum) pairs in the
/// `NC_m` denominator when every class is present.
pub fn full_denominator_count(num_classes: usize, m: usize) -> u64 {
    binomial(num_classes, m) * binomial(num_classes, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labelspace::{generate_dataset, LabelConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    /// Features equal to exact tag-wise sums of a random classifier.
    fn collapsed(k: usize, d: usize, counts: &[usize], seed: u64) -> (DMatrix<f64>, DMatrix<f64>, Dataset) {
        let data = generate_dataset(&LabelConfig::balanced(k, counts).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = gaussian(k, d, &mut rng);
        let mut h = DMatrix::zeros(d, data.len());
        for c in 0..data.len() {
            let set = data.label_set(c);
            let scale = 1.0 + set.multiplicity() as f64;
            for &l in set.members() {
                let row = w.row(l).transpose() * scale;
                let mut col = h.column_mut(c);
                col += row;
            }
        }
        (w, h, data)
    }

    #[test]
    fn class_means_single_sample() {
        let (_, h, data) = collapsed(3, 4, &[1, 1], 1);
        let means = class_means(&h, &data);
        for g in &data.groups {
            assert_eq!(means[&(g.m(), g.rank)], h.column(g.start).into_owned());
        }
    }

    #[test]
    fn class_means_ignore_sample_order() {
        let data = generate_dataset(&LabelConfig::balanced(3, &[3]).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = gaussian(2, data.len(), &mut rng);
        let mut swapped = h.clone();
        swapped.swap_columns(0, 2);
        let a = class_means(&h, &data);
        let b = class_means(&swapped, &data);
        for (key, v) in &a {
            assert!((v - &b[key]).norm() < 1e-15);
        }
    }

    #[test]
    fn nc1_zero_when_features_collapse() {
        let (_, h, data) = collapsed(4, 6, &[3, 2], 2);
        let v = nc1(&h, &data);
        assert_eq!(v.len(), 2);
        assert!(v.values().all(|x| x.abs() < 1e-20));
    }

    #[test]
    fn nc1_degenerate_between_class() {
        let data = generate_dataset(&LabelConfig::balanced(3, &[2]).unwrap()).unwrap();
        let h = DMatrix::from_element(2, data.len(), 1.0);
        assert_eq!(nc1(&h, &data)[&1], f64::INFINITY);
    }

    #[test]
    fn nc2_orthonormal_rows() {
        for k in 3..7 {
            let w = DMatrix::<f64>::identity(k, k + 1);
            let kf = k as f64;
            let j = centered_simplex(k);
            let expected = (DMatrix::<f64>::identity(k, k) / kf.sqrt() - j / (kf - 1.0).sqrt()).norm();
            assert!((nc2(&w).unwrap() - expected).abs() < 1e-14);
            assert!(expected > 0.0);
        }
        assert!(nc2(&DMatrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn nc3_scale_invariant() {
        let (w, _, data) = collapsed(3, 4, &[2], 3);
        let mut h = DMatrix::zeros(4, data.len());
        for c in 0..data.len() {
            let k = data.label_set(c).members()[0];
            h.set_column(c, &(w.row(k).transpose() * 2.5));
        }
        assert!(nc3(&w, &h, &data).unwrap() < 1e-15);
        assert!(nc3(&(&w * 7.0), &(&h * 0.1), &data).unwrap() < 1e-15);
    }

    #[test]
    fn nc3_requires_singletons() {
        let mut counts = BTreeMap::new();
        counts.insert(2, crate::labelspace::Counts::Balanced(1));
        let cfg = LabelConfig {
            num_classes: 3,
            max_multiplicity: 2,
            counts,
        };
        let data = generate_dataset(&cfg).unwrap();
        let w = DMatrix::identity(3, 3);
        let h = DMatrix::identity(3, data.len());
        assert!(nc3(&w, &h, &data).is_err());
    }

    #[test]
    fn ncm_zero_under_tagwise_collapse() {
        let (_, h, data) = collapsed(4, 6, &[1, 1], 4);
        let det = ncm_detail(&h, &data, 2).unwrap();
        assert!(det.value < 1e-7, "{}", det.value);
        assert_eq!(det.matched_angles, 6);
        assert_eq!(det.all_angles, 36);
        assert_eq!(full_denominator_count(4, 2), 36);
    }

    #[test]
    fn ncm_generalizes_to_three() {
        let (_, h, data) = collapsed(5, 8, &[1, 1, 1], 6);
        let det = ncm_detail(&h, &data, 3).unwrap();
        assert!(det.value < 1e-7);
        assert_eq!(det.all_angles, 100);
    }

    #[test]
    fn ncm_near_one_for_random_means() {
        let data = generate_dataset(&LabelConfig::balanced(10, &[1, 1]).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let trials = 100;
        let mut total = 0.0;
        for _ in 0..trials {
            let h = gaussian(128, data.len(), &mut rng);
            total += ncm(&h, &data).unwrap();
        }
        let mean = total / trials as f64;
        assert!((mean - 1.0).abs() < 0.1, "mean NC_m {mean}");
    }

    #[test]
    fn ncm_rescale_invariant() {
        let data = generate_dataset(&LabelConfig::balanced(4, &[1, 1]).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = gaussian(5, data.len(), &mut rng);
        let a = ncm(&h, &data).unwrap();
        let b = ncm(&(&h * 13.0), &data).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn angle_handles_zero_and_clamps() {
        let z = DVector::zeros(3);
        let u = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        assert!(angle(&z, &u).is_none());
        assert_eq!(angle(&u, &u).unwrap(), 0.0);
        assert!((angle(&u, &(-&u)).unwrap() - std::f64::consts::PI).abs() < 1e-15);
    }
}
