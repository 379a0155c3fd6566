//! Numeric self-checks runnable from the command line: basis
//! orthogonality, transform round trips, the low-rank solve and
//! determinant identities behind the collapsed likelihood, and agreement
//! with a dense reference evaluation.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::likelihood::SlotFactor;
use crate::oracle::{dense_forward_matrix, DenseInstance};
use crate::stats;
use crate::wavelet::{WaveletBasis, WaveletFamily};

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn from_error(name: &str, bound: f64, err: f64) -> Self {
        Self {
            name: name.to_string(),
            passed: err.is_finite() && err < bound,
            detail: format!("max error {err:.3e}, bound {bound:.1e}"),
        }
    }
}

const FAMILIES: [WaveletFamily; 2] = [WaveletFamily::Haar, WaveletFamily::Daubechies4];
const LENGTHS: [usize; 7] = [2, 4, 8, 16, 32, 64, 128];

fn orthogonality_error() -> f64 {
    let mut worst: f64 = 0.0;
    for family in FAMILIES {
        for t in LENGTHS {
            let basis = WaveletBasis::new(family, t).expect("valid length");
            let w = dense_forward_matrix(&basis);
            let gram = &w * w.transpose();
            for r in 0..t {
                for c in 0..t {
                    let target = if r == c { 1.0 } else { 0.0 };
                    worst = worst.max((gram[(r, c)] - target).abs());
                }
            }
        }
    }
    worst
}

fn round_trip_error(rng: &mut impl Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for family in FAMILIES {
        for t in LENGTHS {
            let basis = WaveletBasis::new(family, t).expect("valid length");
            let curve: Vec<f64> = (0..t).map(|_| stats::draw_standard_normal(rng)).collect();
            let back = basis.inverse(basis.forward(&curve).as_slice());
            for tau in 0..t {
                worst = worst.max((back[tau] - curve[tau]).abs());
            }
            let coeffs: Vec<f64> = (0..t).map(|_| stats::draw_standard_normal(rng)).collect();
            let again = basis.forward(basis.inverse(&coeffs).as_slice());
            for tau in 0..t {
                worst = worst.max((again[tau] - coeffs[tau]).abs());
            }
        }
    }
    worst
}

struct SlotCase {
    factor: SlotFactor,
    car: crate::lattice::CarMatrices,
    dense: DMatrix<f64>,
}

fn random_slot_case(rng: &mut impl Rng) -> SlotCase {
    let lattice = crate::lattice::SpatialLattice::new(3, 3).expect("grid");
    let subset: Vec<usize> = (0..lattice.n()).collect();
    let car = lattice.car_matrices(&subset).expect("connected subset");
    let (lo, hi) = car.phi_support();
    let m = rng.random_range(0.3..3.0);
    let h = rng.random_range(0.2..2.0);
    let phi = lo + (hi - lo) * rng.random_range(0.05..0.95);
    let factor = SlotFactor::new(&car, m, h, phi).expect("valid scales");
    let a = car.dense_precision(phi);
    let a_inv = a.clone().try_inverse().expect("positive definite");
    let n = car.n();
    let dense = DMatrix::identity(n, n) * m + a_inv * h;
    SlotCase { factor, car, dense }
}

fn solve_identity_error(rng: &mut impl Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let case = random_slot_case(rng);
        let n = case.car.n();
        let v = DVector::from_fn(n, |_, _| stats::draw_standard_normal(rng));
        let fast = case.factor.mtilde_solve(&case.car, &v);
        let slow = case.dense.clone().lu().solve(&v).expect("invertible");
        worst = worst.max((&fast - &slow).abs().max());
    }
    worst
}

fn determinant_identity_error(rng: &mut impl Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let case = random_slot_case(rng);
        let dense_logdet = case.dense.clone().lu().determinant().ln();
        worst = worst.max((case.factor.log_det_mtilde() - dense_logdet).abs());
    }
    worst
}

fn dense_marginal_error(rng: &mut impl Rng) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..5 {
        let instance = DenseInstance::random(rng, 4, 4, 8, 2, 6).expect("valid instance");
        let fast = instance.cluster_model().and_then(|mut m| m.log_ml()).expect("marginal");
        let slow = instance.dense_log_marginal();
        worst = worst.max((fast - slow).abs() / slow.abs().max(1.0));
    }
    worst
}

/// Runs every check with a deterministic generator and returns one result
/// per check.
pub fn run_all(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        CheckResult::from_error("basis-orthogonality", 1e-10, orthogonality_error()),
        CheckResult::from_error("transform-round-trip", 1e-10, round_trip_error(&mut rng)),
        CheckResult::from_error("low-rank-solve-identity", 1e-8, solve_identity_error(&mut rng)),
        CheckResult::from_error(
            "determinant-identity",
            1e-8,
            determinant_identity_error(&mut rng),
        ),
        CheckResult::from_error("dense-marginal-agreement", 1e-8, dense_marginal_error(&mut rng)),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_check_passes() {
        let results = run_all(20260816);
        for r in &results {
            assert!(r.passed, "{} failed: {}", r.name, r.detail);
        }
        assert_eq!(results.len(), 5);
    }
}
