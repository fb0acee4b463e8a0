//! Executable checks of the supporting identities: the label-matrix
//! pseudo-inverse and Gram constants (exact rationals), the affine lower
//! bound on the pick-all-labels loss and its tightness, and the norm identity
//! for tag-wise features.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labelspace::{
    binomial, label_matrix, lex_subset, pinv_label_matrix, pinv_matrix, subsets, LabelSet,
    Rational, RationalMatrix,
};
use crate::theory::{c2m, gamma1, pascal_norm_check, simplex_etf, tight_logits};
use crate::ufm::pal_ce_loss;

/// Largest `K` accepted by the exact suites; `C(12, 6) = 924` columns keeps
/// the rational products fast.
pub const MAX_EXACT_K: usize = 12;
pub const DEFAULT_DRAWS: usize = 10_000;
pub const TIGHTNESS_TOL: f64 = 1e-12;
pub const PASCAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaRow {
    pub lemma: String,
    pub case: String,
    /// Largest violation found; 0 for exact identities that hold.
    pub residual: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaReport {
    pub max_k: usize,
    pub rows: Vec<LemmaRow>,
    pub pass: bool,
}

impl LemmaReport {
    pub fn rows_for<'a>(&'a self, lemma: &'a str) -> impl Iterator<Item = &'a LemmaRow> + 'a {
        self.rows.iter().filter(move |r| r.lemma == lemma)
    }

    /// Fixed-width pass/fail table.
    pub fn table(&self) -> String {
        let mut out = format!("{:<10} {:<28} {:>12}  {}\n", "lemma", "case", "residual", "status");
        for r in &self.rows {
            out.push_str(&format!(
                "{:<10} {:<28} {:>12.3e}  {}\n",
                r.lemma,
                r.case,
                r.residual,
                if r.pass { "pass" } else { "FAIL" }
            ));
        }
        out
    }
}

fn rational_diff(a: &RationalMatrix, b: &RationalMatrix) -> Rational {
    a.sub(b).max_abs()
}

/// Exact checks for `Y_m` (K × C(K,m)):
/// the four Penrose conditions of `(Y_mᵀ)† = τY_m + ηΘ`,
/// `Y Yᵀ = (b − a)I + aJ`, and `Y(Θ − Yᵀ) = c(J − I)`.
pub fn check_pinv(num_classes: usize, m: usize) -> Result<Vec<LemmaRow>> {
    let g = pinv_label_matrix(num_classes, m)?;
    let y = label_matrix(num_classes, m)?.to_rational();
    let a = y.transpose();
    let ap = pinv_matrix(num_classes, m)?;
    let a_ap = a.mul(&ap);
    let ap_a = ap.mul(&a);
    let penrose = [
        rational_diff(&a_ap.mul(&a), &a),
        rational_diff(&ap_a.mul(&ap), &ap),
        rational_diff(&a_ap.transpose(), &a_ap),
        rational_diff(&ap_a.transpose(), &ap_a),
    ]
    .into_iter()
    .max()
    .unwrap();

    let k = num_classes;
    let one = Rational::from_integer(1);
    let zero = Rational::from_integer(0);
    let gram_target = RationalMatrix::from_fn(k, k, |i, j| if i == j { g.b } else { g.a });
    let theta = RationalMatrix::filled(y.shape().1, k, one);
    let cross_target = RationalMatrix::from_fn(k, k, |i, j| if i == j { zero } else { g.c });
    let gram = rational_diff(&y.mul(&y.transpose()), &gram_target)
        .max(rational_diff(&y.mul(&theta.sub(&a)), &cross_target));

    let case = format!("K={k} m={m}");
    let row = |lemma: &str, r: Rational| LemmaRow {
        lemma: lemma.into(),
        case: case.clone(),
        residual: *r.numer() as f64 / *r.denom() as f64,
        pass: r == zero,
    };
    Ok(vec![row("pinv", penrose), row("gram", gram)])
}

/// `pal_ce_loss(z, S) − (γ_{1,m}⟨1 − (K/m)𝕀_S, z⟩ + c_{2,m})`.
pub fn affine_gap(z: &[f64], set: &LabelSet, c1: f64) -> f64 {
    let k = z.len();
    let m = set.multiplicity();
    let scale = k as f64 / m as f64;
    let inner: f64 = z
        .iter()
        .enumerate()
        .map(|(j, v)| if set.contains(j) { (1.0 - scale) * v } else { *v })
        .sum();
    pal_ce_loss(z, set) - (gamma1(k, m, c1) * inner + c2m(k, m, c1))
}

/// Random draws of `(K ≤ max_k, m < K, S, z ∈ [−5,5]^K, c ∈ (0,10])`; the
/// returned row holds the most negative gap (0 if none).
pub fn check_affine_bound(max_k: usize, draws: usize, seed: u64) -> Result<(LemmaRow, LemmaRow)> {
    check_max_k(max_k)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let mut tight: f64 = 0.0;
    for _ in 0..draws {
        let k = rng.random_range(2..=max_k);
        let m = rng.random_range(1..k);
        let rank = rng.random_range(0..binomial(k, m) as usize);
        let set = lex_subset(k, m, rank)?;
        let z: Vec<f64> = (0..k).map(|_| rng.random_range(-5.0..=5.0)).collect();
        // (0, 10]: reflect the half-open [0, 10) draw
        let c = 10.0 - rng.random_range(0.0..10.0);
        worst = worst.min(affine_gap(&z, &set, c));

        let (z_in, z_out) = tight_logits(k, m, c);
        let zt: Vec<f64> = (0..k).map(|j| if set.contains(j) { z_in } else { z_out }).collect();
        tight = tight.max(affine_gap(&zt, &set, c).abs());
    }
    let case = format!("{draws} draws K<={max_k}");
    Ok((
        LemmaRow {
            lemma: "affine".into(),
            case: case.clone(),
            residual: -worst,
            pass: worst >= -TIGHTNESS_TOL,
        },
        LemmaRow {
            lemma: "tightness".into(),
            case,
            residual: tight,
            pass: tight < TIGHTNESS_TOL,
        },
    ))
}

/// Tag-wise features `h_{k,i} = s_i Σ_{ℓ∈S_k} w^ℓ` on a rotated ETF with
/// `n = 2` sample indices, in block order.
pub fn tagwise_features(num_classes: usize, m: usize, seed: u64) -> Result<DMatrix<f64>> {
    let d = num_classes + 1;
    let w = simplex_etf(num_classes, d, 1.0, seed + 1)?.matrix;
    let sets = subsets(num_classes, m)?;
    let n = 2;
    let scales = [0.7, 1.9];
    let mut h = DMatrix::zeros(d, sets.len() * n);
    for (rank, s) in sets.iter().enumerate() {
        for (i, sc) in scales.iter().enumerate() {
            let mut col = h.column_mut(rank * n + i);
            for &l in s.members() {
                col += w.column(l) * *sc;
            }
        }
    }
    Ok(h)
}

fn check_max_k(max_k: usize) -> Result<()> {
    if max_k < 2 {
        return Err(Error::arg("lemma suites need max_k >= 2"));
    }
    if max_k > MAX_EXACT_K {
        return Err(Error::arg(format!("max_k is capped at {MAX_EXACT_K}")));
    }
    Ok(())
}

/// All suites for `2 ≤ K ≤ max_k`, `1 ≤ m < K`.
pub fn run_lemmas(max_k: usize, draws: usize, seed: u64) -> Result<LemmaReport> {
    check_max_k(max_k)?;
    let mut rows = Vec::new();
    let c2 = c2m(2, 1, 1.0);
    let err = (c2 - 2f64.ln()).abs();
    rows.push(LemmaRow {
        lemma: "c2".into(),
        case: "K=2 m=1 c=1".into(),
        residual: err,
        pass: err < 1e-15,
    });
    for k in 2..=max_k {
        for m in 1..k {
            rows.extend(check_pinv(k, m)?);
        }
    }
    let (affine, tight) = check_affine_bound(max_k, draws, seed)?;
    rows.push(affine);
    rows.push(tight);
    for k in 2..=max_k {
        for m in 1..k {
            let h = tagwise_features(k, m, seed)?;
            let r = pascal_norm_check(&h, k, m)?;
            rows.push(LemmaRow {
                lemma: "pascal".into(),
                case: format!("K={k} m={m}"),
                residual: r,
                pass: r < PASCAL_TOL,
            });
        }
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(LemmaReport { max_k, rows, pass })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_suite_passes() {
        let rep = run_lemmas(2, 200, 1).unwrap();
        assert!(rep.pass, "{}", rep.table());
        assert_eq!(rep.rows_for("c2").count(), 1);
        assert!(run_lemmas(1, 10, 0).is_err());
    }

    #[test]
    fn affine_gap_detects_wrong_constant() {
        let set = LabelSet::new(4, vec![1, 3]).unwrap();
        let (zi, zo) = tight_logits(4, 2, 0.8);
        let z = [zo, zi, zo, zi];
        assert!(affine_gap(&z, &set, 0.8).abs() < 1e-13);
        // the tight point for another c sits strictly above this c's plane
        assert!(affine_gap(&z, &set, 2.5) > 1e-3);
    }
}
