//! Dense reference implementations used by the test suite and the built-in
//! self check. Everything here trades speed for transparency: transforms,
//! covariances, and conditionals are materialized as full matrices and
//! evaluated by textbook formulas, independently of the factorizations and
//! identities the fast path relies on.

use crate::error::Result;
use crate::lattice::SpatialLattice;
use crate::likelihood::ClusterModel;
use crate::model::{FunctionalDataset, HigherParams, Hyperparameters, ModelContext};
use crate::stats;
use crate::wavelet::{WaveletBasis, WaveletFamily};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use std::sync::Arc;

/// Dense T x T forward-transform matrix (column j transforms the j-th unit
/// vector).
pub fn dense_forward_matrix(basis: &WaveletBasis) -> DMatrix<f64> {
    let t = basis.t();
    let mut w = DMatrix::zeros(t, t);
    for j in 0..t {
        let mut e = vec![0.0; t];
        e[j] = 1.0;
        w.set_column(j, &basis.forward(&e));
    }
    w
}

/// Dense covariate design block W diag(x) W' for one raw curve.
pub fn dense_covariate_block(basis: &WaveletBasis, x_curve: &[f64]) -> DMatrix<f64> {
    let w = dense_forward_matrix(basis);
    let diag = DMatrix::from_diagonal(&DVector::from_column_slice(x_curve));
    &w * diag * w.transpose()
}

/// A complete randomly generated cluster instance: context, member set,
/// scales, and inclusion pattern, with dense evaluators for every collapsed
/// quantity the fast engine produces.
pub struct DenseInstance {
    pub ctx: ModelContext,
    pub members: Vec<usize>,
    pub theta1: HigherParams,
    pub gamma: Vec<Vec<bool>>,
}

impl DenseInstance {
    /// Random instance on a rows x cols grid: a connected random member
    /// subset, random curves, and scale parameters drawn from moderate
    /// ranges so that double-precision comparisons stay sharp.
    pub fn random<R: Rng + ?Sized>(
        rng: &mut R,
        rows: usize,
        cols: usize,
        t: usize,
        p: usize,
        n_members: usize,
    ) -> Result<Self> {
        let lattice = Arc::new(SpatialLattice::new(rows, cols)?);
        let family =
            if rng.random::<bool>() { WaveletFamily::Haar } else { WaveletFamily::Daubechies4 };
        let basis = Arc::new(WaveletBasis::new(family, t)?);
        let n = lattice.n();

        let mut members = vec![rng.random_range(0..n)];
        while members.len() < n_members.min(n) {
            let base = members[rng.random_range(0..members.len())];
            let nbrs = lattice.neighbors(base);
            let cand = nbrs[rng.random_range(0..nbrs.len())];
            if !members.contains(&cand) {
                members.push(cand);
            }
        }
        members.sort_unstable();

        let y_raw = DMatrix::from_fn(t, n, |_, _| stats::draw_standard_normal(rng));
        let mut x_raw = vec![DMatrix::from_element(t, n, 1.0)];
        for _ in 1..p {
            x_raw.push(DMatrix::from_fn(t, n, |_, _| stats::draw_standard_normal(rng)));
        }
        let data = Arc::new(FunctionalDataset::new(&basis, y_raw, x_raw)?);
        let ctx = ModelContext::new(lattice, basis, data, Hyperparameters::default())?;

        let car = ctx.lattice.car_matrices(&members)?;
        let (lo, hi) = car.phi_support();
        let levels = ctx.levels();
        let mut m = vec![1.0; t];
        for v in m.iter_mut().skip(1) {
            *v = rng.random_range(0.3..3.0);
        }
        let lambda = DMatrix::from_fn(p, levels + 1, |_, _| rng.random_range(0.1..10.0));
        let pi = DMatrix::from_fn(p, levels + 1, |_, _| rng.random_range(0.2..0.8));
        let mut h = vec![0.0; t];
        let mut phi = vec![0.0; t];
        for tau in 0..t {
            h[tau] = rng.random_range(0.2..2.0);
            let u: f64 = rng.random();
            phi[tau] = lo + (hi - lo) * (0.05 + 0.9 * u);
        }
        let theta1 = HigherParams { m, lambda, pi, h, phi };
        let gamma = (0..p)
            .map(|_| (0..t).map(|_| rng.random::<bool>()).collect())
            .collect();
        Ok(Self { ctx, members, theta1, gamma })
    }

    /// Fast-path model over the same state.
    pub fn cluster_model(&self) -> Result<ClusterModel> {
        ClusterModel::new(
            self.ctx.clone(),
            self.members.clone(),
            self.theta1.clone(),
            self.gamma.clone(),
        )
    }

    pub fn n(&self) -> usize {
        self.members.len()
    }

    fn t(&self) -> usize {
        self.ctx.t()
    }

    /// Active (covariate, slot) pairs in lexicographic order.
    pub fn active_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, g) in self.gamma.iter().enumerate() {
            for (tau, &on) in g.iter().enumerate() {
                if on {
                    out.push((i, tau));
                }
            }
        }
        out
    }

    /// Cluster responses stacked slot-major: entry tau*n + s.
    pub fn y_stack(&self) -> DVector<f64> {
        let (n, t) = (self.n(), self.t());
        DVector::from_fn(n * t, |idx, _| {
            let (tau, sl) = (idx / n, idx % n);
            self.ctx.data.y()[(tau, self.members[sl])]
        })
    }

    /// Dense design over active pairs, rows stacked slot-major.
    pub fn x_full(&self) -> DMatrix<f64> {
        let pairs = self.active_pairs();
        let (n, t) = (self.n(), self.t());
        let mut x = DMatrix::zeros(n * t, pairs.len());
        // Full T x T design block per member and covariate.
        let blocks: Vec<Vec<DMatrix<f64>>> = self
            .members
            .iter()
            .map(|&s| {
                (0..self.ctx.p())
                    .map(|i| dense_covariate_block(&self.ctx.basis, self.ctx.data.x_curve(i, s)))
                    .collect()
            })
            .collect();
        for (a, &(i, tau)) in pairs.iter().enumerate() {
            for sl in 0..n {
                for jk in 0..t {
                    x[(jk * n + sl, a)] = blocks[sl][i][(jk, tau)];
                }
            }
        }
        x
    }

    pub fn lambda_vec(&self) -> DVector<f64> {
        let pairs = self.active_pairs();
        DVector::from_fn(pairs.len(), |a, _| {
            let (i, tau) = pairs[a];
            let (j, _) = self.ctx.basis.level_of(tau);
            self.theta1.lambda[(i, j)]
        })
    }

    /// Block-diagonal noise covariance at unit variance: per slot,
    /// mI + h (F - phi Q)^{-1} materialized through a dense inverse.
    pub fn noise_cov(&self) -> DMatrix<f64> {
        let car = self.ctx.lattice.car_matrices(&self.members).expect("valid members");
        let (n, t) = (self.n(), self.t());
        let mut cov = DMatrix::zeros(n * t, n * t);
        for tau in 0..t {
            let a_inv = car
                .dense_precision(self.theta1.phi[tau])
                .try_inverse()
                .expect("precision invertible inside support");
            for r in 0..n {
                for c in 0..n {
                    let mut v = self.theta1.h[tau] * a_inv[(r, c)];
                    if r == c {
                        v += self.theta1.m[tau];
                    }
                    cov[(tau * n + r, tau * n + c)] = v;
                }
            }
        }
        cov
    }

    /// Full collapsed covariance at unit variance: X Lambda X' + noise.
    pub fn sigma_tilde(&self) -> DMatrix<f64> {
        let x = self.x_full();
        let lam = DMatrix::from_diagonal(&self.lambda_vec());
        self.noise_cov() + &x * lam * x.transpose()
    }

    /// Marginal log likelihood through the dense covariance.
    pub fn dense_log_marginal(&self) -> f64 {
        let sigma = self.sigma_tilde();
        let chol = sigma.cholesky().expect("dense covariance is positive definite");
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let y = self.y_stack();
        let quad = y.dot(&chol.solve(&y));
        let dim = y.len() as f64;
        let prior = self.ctx.hyper.sigma2;
        if self.ctx.hyper.sigma2_is_improper() {
            stats::ln_gamma(0.5 * dim)
                - 0.5 * log_det
                - 0.5 * dim * (std::f64::consts::PI * quad).ln()
        } else {
            stats::ln_gamma(prior.shape + 0.5 * dim) - stats::ln_gamma(prior.shape)
                + prior.shape * prior.rate.ln()
                - 0.5 * dim * (2.0 * std::f64::consts::PI).ln()
                - 0.5 * log_det
                - (prior.shape + 0.5 * dim) * (prior.rate + 0.5 * quad).ln()
        }
    }

    /// Conditional mean and unit-variance covariance of the active
    /// coefficients through dense inverses.
    pub fn dense_beta_conditional(&self) -> (DVector<f64>, DMatrix<f64>) {
        let x = self.x_full();
        let q = x.ncols();
        if q == 0 {
            return (DVector::zeros(0), DMatrix::zeros(0, 0));
        }
        let noise_inv = self.noise_cov().try_inverse().expect("invertible");
        let mut v_inv = x.transpose() * &noise_inv * &x;
        let lam = self.lambda_vec();
        for a in 0..q {
            v_inv[(a, a)] += 1.0 / lam[a];
        }
        let v = v_inv.try_inverse().expect("invertible");
        let beta_hat = &v * (x.transpose() * &noise_inv * self.y_stack());
        (beta_hat, v)
    }

    /// Conditional mean of the spatial effects given full coefficients,
    /// computed with dense inverses per slot.
    pub fn dense_u_mean(&self, beta: &DMatrix<f64>) -> DMatrix<f64> {
        let car = self.ctx.lattice.car_matrices(&self.members).expect("valid members");
        let (n, t, p) = (self.n(), self.t(), self.ctx.p());
        // Residual after the dense regression mean.
        let mut resid = DMatrix::zeros(n, t);
        for (sl, &s) in self.members.iter().enumerate() {
            let mut mean = DVector::zeros(t);
            for i in 0..p {
                let block = dense_covariate_block(&self.ctx.basis, self.ctx.data.x_curve(i, s));
                mean += block * beta.row(i).transpose();
            }
            for tau in 0..t {
                resid[(sl, tau)] = self.ctx.data.y()[(tau, s)] - mean[tau];
            }
        }
        let mut out = DMatrix::zeros(n, t);
        for tau in 0..t {
            let a = car.dense_precision(self.theta1.phi[tau]);
            let (m, h) = (self.theta1.m[tau], self.theta1.h[tau]);
            let prec = &a / h + DMatrix::identity(n, n) / m;
            let v = prec.try_inverse().expect("invertible");
            out.set_column(tau, &(v * resid.column(tau) / m));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn instances_are_well_formed() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let inst = DenseInstance::random(&mut rng, 3, 3, 4, 2, 4).unwrap();
            assert_eq!(inst.members.len(), 4);
            assert!(inst.members.windows(2).all(|w| w[0] < w[1]));
            let car = inst.ctx.lattice.car_matrices(&inst.members).unwrap();
            assert!(inst.theta1.validate(2, &inst.ctx.basis, &car).is_ok());
            // The dense covariance is positive definite.
            assert!(inst.sigma_tilde().cholesky().is_some());
        }
    }

    #[test]
    fn noise_variance_integral_matches_quadrature() {
        // Same instance, proper noise prior: the closed-form marginal must
        // agree with direct numerical integration over the noise variance.
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut inst = DenseInstance::random(&mut rng, 2, 2, 2, 1, 2).unwrap();
        inst.ctx.hyper.sigma2 = crate::model::IgPair { shape: 3.0, rate: 2.0 };

        let sigma = inst.sigma_tilde();
        let chol = sigma.cholesky().unwrap();
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let y = inst.y_stack();
        let quad = y.dot(&chol.solve(&y));
        let dim = y.len() as f64;
        let (a, b): (f64, f64) = (3.0, 2.0);

        // Integrand on the log-variance axis, stabilized by its peak value.
        let log_f = |v: f64| -> f64 {
            let s2 = v.exp();
            -0.5 * dim * (2.0 * std::f64::consts::PI * s2).ln() - 0.5 * log_det
                - 0.5 * quad / s2
                + a * b.ln()
                - stats::ln_gamma(a)
                - (a + 1.0) * s2.ln()
                - b / s2
                + v
        };
        let peak = (0.5 * quad + b) / (0.5 * dim + a + 1.0);
        let center = peak.ln();
        let (lo, hi) = (center - 30.0, center + 30.0);
        let steps = 20_000;
        let hstep = (hi - lo) / steps as f64;
        let max_log = log_f(center);
        let mut acc = 0.0;
        for k in 0..=steps {
            let w = if k == 0 || k == steps {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            acc += w * (log_f(lo + k as f64 * hstep) - max_log).exp();
        }
        let log_integral = max_log + (acc * hstep / 3.0).ln();
        assert_relative_eq!(inst.dense_log_marginal(), log_integral, epsilon = 1e-8);
    }
}
