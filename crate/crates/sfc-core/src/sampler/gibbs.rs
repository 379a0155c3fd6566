//! Per-cluster Gibbs sweep: coefficient selection, spatial effects, and
//! variance scales, each drawn from its full conditional.
//!
//! The sweep maintains the working residual `y - X beta - u` as a dense
//! matrix and updates it column-wise as coefficients, spatial effects, and
//! scales change, so every conditional sees the current state without
//! re-deriving it from scratch.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use super::griddy::{GridSampler, DEFAULT_GRID_POINTS};
use crate::error::Result;
use crate::lattice::CarMatrices;
use crate::likelihood::ClusterModel;
use crate::model::LowerParams;
use crate::stats;
use crate::wavelet::WaveletBasis;

/// Slot indices carrying detail level `j` (level 0 is the scaling slot).
pub fn level_slots(basis: &WaveletBasis, j: usize) -> std::ops::Range<usize> {
    if j == 0 {
        0..1
    } else {
        (1usize << (j - 1))..(1usize << j).min(basis.t())
    }
}

fn add_scaled(target: &mut DMatrix<f64>, source: &DMatrix<f64>, factor: f64) {
    if factor != 0.0 {
        target.zip_apply(source, |t, s| *t += factor * s);
    }
}

/// Inclusion and coefficient statistics for one (covariate, slot) pair
/// conditional on the rest: the design quadratic `a`, the residual
/// projection `g`, the slab posterior mean and variance, and the log Bayes
/// factor of inclusion versus exclusion.
fn pair_posterior(
    column: &DMatrix<f64>,
    residual: &DMatrix<f64>,
    m_slots: &[f64],
    lambda: f64,
    sigma2: f64,
) -> (f64, f64, f64, f64, f64) {
    let mut a = 0.0;
    let mut g = 0.0;
    for slot in 0..column.ncols() {
        let inv_m = 1.0 / m_slots[slot];
        let cc = column.column(slot);
        let rc = residual.column(slot);
        for s in 0..column.nrows() {
            a += cc[s] * cc[s] * inv_m;
            g += cc[s] * rc[s] * inv_m;
        }
    }
    let precision = 1.0 / lambda + a;
    let mean = g / precision;
    let var = sigma2 / precision;
    let log_bf = -0.5 * (1.0 + lambda * a).ln() + mean * g / (2.0 * sigma2);
    (a, g, mean, var, log_bf)
}

/// Sweeps inclusion indicators and coefficients pair by pair, then redraws
/// the slab scales and inclusion probabilities level by level.
fn update_regression<R: Rng + ?Sized>(
    model: &mut ClusterModel,
    lower: &mut LowerParams,
    residual: &mut DMatrix<f64>,
    rng: &mut R,
) -> Result<()> {
    let (p, t) = (model.p(), model.t());
    let sigma2 = lower.sigma2;
    let m_slots = model.theta1().m.clone();
    let hyper = model.ctx().hyper.clone();
    let basis = model.ctx().basis.clone();

    for i in 0..p {
        for tau in 0..t {
            let column = model.design_column(i, tau);
            let b_old = lower.beta[(i, tau)];
            add_scaled(residual, &column, b_old);
            let lambda = model.lambda_of(i, tau);
            let pi = model.pi_of(i, tau);
            let (_, _, mean, var, log_bf) =
                pair_posterior(&column, residual, &m_slots, lambda, sigma2);
            let active = stats::bernoulli_from_log_odds(rng, stats::logit(pi) + log_bf);
            let b_new = if active {
                mean + var.sqrt() * stats::draw_standard_normal(rng)
            } else {
                0.0
            };
            model.set_gamma(i, tau, active);
            lower.beta[(i, tau)] = b_new;
            add_scaled(residual, &column, -b_new);
        }
        for j in 0..=basis.levels() {
            let slots = level_slots(&basis, j);
            let count = slots.len() as f64;
            let mut active = 0.0;
            let mut sum_b2 = 0.0;
            for tau in slots {
                if model.gamma()[i][tau] {
                    active += 1.0;
                }
                sum_b2 += lower.beta[(i, tau)].powi(2);
            }
            let lambda = stats::draw_inverse_gamma(
                rng,
                hyper.lambda.shape + active / 2.0,
                hyper.lambda.rate + sum_b2 / (2.0 * sigma2),
            )?;
            let pi = stats::draw_beta(rng, hyper.pi.a + active, hyper.pi.b + count - active)?;
            model.set_lambda(i, j, lambda);
            model.set_pi(i, j, pi);
        }
    }
    Ok(())
}

/// The spatial-dependence conditional on its support, tilted by the
/// current spatial effect: the precision root-determinant times
/// exp(phi * u'Qu / (2 h sigma2)).
pub fn phi_conditional_sampler(
    car: &CarMatrices,
    u: &DVector<f64>,
    h: f64,
    sigma2: f64,
) -> Result<GridSampler> {
    let (lo, hi) = car.phi_support();
    let coef = car.quad_q(u) / (2.0 * h * sigma2);
    GridSampler::build(lo, hi, DEFAULT_GRID_POINTS, |phi| {
        0.5 * car.log_det_precision(phi) + phi * coef
    })
}

/// Redraws the spatial effect, its scale, and its dependence parameter for
/// every slot in turn.
fn update_spatial<R: Rng + ?Sized>(
    model: &mut ClusterModel,
    lower: &mut LowerParams,
    residual: &mut DMatrix<f64>,
    rng: &mut R,
) -> Result<()> {
    let t = model.t();
    let n = model.n() as f64;
    let sigma2 = lower.sigma2;
    let hyper = model.ctx().hyper.clone();

    for tau in 0..t {
        let resid_no_u: DVector<f64> = residual.column(tau) + lower.u.column(tau);
        let u_new = {
            let factor = model.slot_factor(tau)?;
            factor.draw_u(&resid_no_u, sigma2, rng)?
        };
        let phi_old = model.theta1().phi[tau];
        let quad_a = model.car().quad_precision(phi_old, &u_new);
        let h_new = stats::draw_inverse_gamma(
            rng,
            hyper.h.shape + n / 2.0,
            hyper.h.rate + quad_a / (2.0 * sigma2),
        )?;
        let phi_new = phi_conditional_sampler(model.car(), &u_new, h_new, sigma2)?.draw(rng);
        residual.set_column(tau, &(resid_no_u - &u_new));
        lower.u.set_column(tau, &u_new);
        model.set_h(tau, h_new);
        model.set_phi(tau, phi_new);
    }
    Ok(())
}

/// Redraws the per-slot noise scales (slot 0 stays pinned) and the cluster
/// noise variance from their conditionals.
fn update_scales<R: Rng + ?Sized>(
    model: &mut ClusterModel,
    lower: &mut LowerParams,
    residual: &DMatrix<f64>,
    rng: &mut R,
) -> Result<()> {
    let n = model.n() as f64;
    let hyper = model.ctx().hyper.clone();
    for tau in 1..model.t() {
        let sum_e2 = residual.column(tau).norm_squared();
        let m_new = stats::draw_inverse_gamma(
            rng,
            hyper.m.shape + n / 2.0,
            hyper.m.rate + sum_e2 / (2.0 * lower.sigma2),
        )?;
        model.set_m(tau, m_new)?;
    }
    let (shape, rate) = model.sigma2_full_conditional(lower)?;
    lower.sigma2 = stats::draw_inverse_gamma(rng, shape, rate)?;
    Ok(())
}

/// One full Gibbs sweep over a cluster's parameters, in the fixed block
/// order: regression, spatial, scales.
pub fn sweep_cluster<R: Rng + ?Sized>(
    model: &mut ClusterModel,
    lower: &mut LowerParams,
    rng: &mut R,
) -> Result<()> {
    let mean = model.regression_mean(&lower.beta);
    let mut residual = model.y() - mean - &lower.u;
    update_regression(model, lower, &mut residual, rng)?;
    update_spatial(model, lower, &mut residual, rng)?;
    update_scales(model, lower, &residual, rng)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::SpatialLattice;
    use crate::model::{default_hyperparameters, FunctionalDataset, ModelContext};
    use crate::wavelet::WaveletFamily;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn toy_model(t: usize, seed: u64) -> (ClusterModel, LowerParams) {
        let lattice = Arc::new(SpatialLattice::new(1, 2).unwrap());
        let basis = Arc::new(WaveletBasis::new(WaveletFamily::Haar, t).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y_raw = DMatrix::from_fn(t, 2, |_, _| stats::draw_standard_normal(&mut rng));
        let x_raw = vec![DMatrix::from_element(t, 2, 1.0)];
        let data = Arc::new(FunctionalDataset::new(&basis, y_raw, x_raw).unwrap());
        let ctx =
            ModelContext::new(lattice, basis, data, default_hyperparameters()).unwrap();
        let mut model = ClusterModel::from_prior(ctx, vec![0, 1], &mut rng).unwrap();
        let gamma = vec![vec![true; t]];
        model.replace_gamma(gamma).unwrap();
        let lower = LowerParams {
            beta: DMatrix::zeros(1, t),
            u: DMatrix::zeros(2, t),
            sigma2: 1.0,
        };
        (model, lower)
    }

    #[test]
    fn pair_posterior_matches_normal_means_algebra() {
        // A constant covariate makes the design column for (0, tau) the
        // slot-tau indicator, so the pair statistics collapse to the
        // textbook normal-means posterior.
        let (mut model, lower) = toy_model(4, 3);
        let mean = model.regression_mean(&lower.beta);
        let residual = model.y() - mean - &lower.u;
        let m_slots = model.theta1().m.clone();
        let tau = 2;
        let column = model.design_column(0, tau);
        let lambda = model.lambda_of(0, tau);
        let (a, g, mu, var, log_bf) =
            pair_posterior(&column, &residual, &m_slots, lambda, lower.sigma2);

        let expect_a = 2.0 / m_slots[tau];
        let expect_g =
            (residual[(0, tau)] + residual[(1, tau)]) / m_slots[tau];
        assert!((a - expect_a).abs() < 1e-12);
        assert!((g - expect_g).abs() < 1e-12);
        let precision = 1.0 / lambda + expect_a;
        assert!((mu - expect_g / precision).abs() < 1e-12);
        assert!((var - lower.sigma2 / precision).abs() < 1e-12);
        let expect_bf = -0.5 * (1.0 + lambda * expect_a).ln()
            + (expect_g / precision).powi(2) / (2.0 * var);
        assert!((log_bf - expect_bf).abs() < 1e-10);
    }

    #[test]
    fn tight_slab_collapses_the_bayes_factor() {
        let (mut model, lower) = toy_model(4, 4);
        let mean = model.regression_mean(&lower.beta);
        let residual = model.y() - mean - &lower.u;
        let m_slots = model.theta1().m.clone();
        let column = model.design_column(0, 1);
        let (_, _, _, _, log_bf) =
            pair_posterior(&column, &residual, &m_slots, 1e-14, lower.sigma2);
        assert!(log_bf.abs() < 1e-6);
    }

    #[test]
    fn level_slot_ranges_partition_the_slots() {
        let basis = WaveletBasis::new(WaveletFamily::Haar, 16).unwrap();
        let mut seen = vec![false; 16];
        for j in 0..=basis.levels() {
            for tau in level_slots(&basis, j) {
                assert!(!seen[tau]);
                seen[tau] = true;
                assert_eq!(basis.level_of(tau).0, j);
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn phi_sampler_tracks_the_analytic_two_node_density() {
        let lattice = Arc::new(SpatialLattice::new(1, 2).unwrap());
        let car = lattice.car_matrices(&[0, 1]).unwrap();
        let (lo, hi) = car.phi_support();
        assert!((lo + 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12);

        let u = DVector::from_vec(vec![0.8, -0.3]);
        let (h, sigma2) = (0.6, 1.4);
        let sampler = phi_conditional_sampler(&car, &u, h, sigma2).unwrap();
        let coef = 2.0 * u[0] * u[1] / (2.0 * h * sigma2);
        let logf = |phi: f64| 0.5 * (1.0 - phi * phi).ln() + phi * coef;
        // Interpolant knots carry the exact density, so knot ratios match
        // the analytic ratios.
        let (a, b) = (lo + 10.0 * (hi - lo) / 63.0, lo + 40.0 * (hi - lo) / 63.0);
        let got = (sampler.pdf(a) / sampler.pdf(b)).ln();
        let want = logf(a) - logf(b);
        assert!((got - want).abs() < 1e-9, "got {got}, want {want}");

        // Zero spatial effect leaves only the determinant tilt, which is
        // symmetric in phi.
        let flat = phi_conditional_sampler(&car, &DVector::zeros(2), h, sigma2).unwrap();
        assert!((flat.pdf(0.4) - flat.pdf(-0.4)).abs() < 1e-12);
    }

    #[test]
    fn scale_draw_moments_match_the_conditional() {
        let (mut model, mut lower) = toy_model(4, 9);
        lower.sigma2 = 0.9;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (shape, rate) = {
            let (s, r) = model.sigma2_full_conditional(&lower).unwrap();
            (s, r)
        };
        let mut mean = 0.0;
        let reps = 40_000;
        for _ in 0..reps {
            mean += stats::draw_inverse_gamma(&mut rng, shape, rate).unwrap();
        }
        mean /= reps as f64;
        let want = rate / (shape - 1.0);
        assert!((mean - want).abs() / want < 0.05, "mean {mean} want {want}");
    }

    #[test]
    fn sweep_is_deterministic_in_the_stream() {
        let run = |seed: u64| {
            let (mut model, mut lower) = toy_model(8, 21);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..5 {
                sweep_cluster(&mut model, &mut lower, &mut rng).unwrap();
            }
            (
                lower.beta.clone(),
                lower.sigma2,
                model.theta1().m.clone(),
                model.theta1().phi.clone(),
                model.log_ml().unwrap(),
            )
        };
        let a = run(33);
        let b = run(33);
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
        assert_eq!(a.2, b.2);
        assert_eq!(a.3, b.3);
        assert_eq!(a.4, b.4);
        let c = run(34);
        assert_ne!(a.1, c.1);
    }

    #[test]
    fn sweep_keeps_the_state_finite_and_consistent() {
        let (mut model, mut lower) = toy_model(8, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            sweep_cluster(&mut model, &mut lower, &mut rng).unwrap();
            assert!(lower.sigma2.is_finite() && lower.sigma2 > 0.0);
            for i in 0..model.p() {
                for tau in 0..model.t() {
                    let active = model.gamma()[i][tau];
                    assert_eq!(active, lower.beta[(i, tau)] != 0.0);
                }
            }
            let (lo, hi) = model.car().phi_support();
            for tau in 0..model.t() {
                let phi = model.theta1().phi[tau];
                assert!(phi > lo && phi < hi);
                assert!(model.theta1().h[tau] > 0.0);
                assert!(model.theta1().m[tau] > 0.0);
            }
            assert_eq!(model.theta1().m[0], 1.0);
        }
        assert!(model.log_ml().unwrap().is_finite());
    }
}
