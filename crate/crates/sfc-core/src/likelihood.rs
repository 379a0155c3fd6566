//! Collapsed per-cluster likelihood. Given the scale parameters and the
//! inclusion pattern, the regression coefficients, spatial effects, and the
//! noise variance integrate out in closed form. Everything is organized
//! around one Cholesky factorization per coefficient slot.
//!
//! For slot covariance mI + hA^{-1} with A = F - phi*Q, define
//! B = hI + mA. B commutes with A, so
//!
//! * (mI + hA^{-1})^{-1} v = B^{-1}(Av),
//! * log|mI + hA^{-1}| = log|B| - log|A|,
//! * the spatial-effect conditional has mean hB^{-1}(residual) and
//!   covariance sigma2 * m * h * B^{-1}.
//!
//! One factorization of B per slot therefore serves the marginal
//! likelihood, the coefficient conditional, and the spatial-effect draw.

use crate::error::{Result, SfcError};
use crate::lattice::CarMatrices;
use crate::model::{draw_gamma_from_prior, HigherParams, LowerParams, ModelContext};
use crate::stats;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use std::sync::Arc;

/// Cached factorization for one coefficient slot.
pub struct SlotFactor {
    chol_b: Cholesky<f64, Dyn>,
    log_det_b: f64,
    log_det_a: f64,
    m: f64,
    h: f64,
    phi: f64,
}

impl SlotFactor {
    pub fn new(car: &CarMatrices, m: f64, h: f64, phi: f64) -> Result<Self> {
        if !(m > 0.0 && h > 0.0) {
            return Err(SfcError::NumericDomain(format!(
                "slot scales must be positive, got m = {m}, h = {h}"
            )));
        }
        if !car.phi_in_support(phi) {
            return Err(SfcError::NumericDomain(format!(
                "spatial dependence {phi} outside the admissible interval"
            )));
        }
        let n = car.n();
        let mut b = car.dense_precision(phi) * m;
        for i in 0..n {
            b[(i, i)] += h;
        }
        let chol_b = b.cholesky().ok_or_else(|| {
            SfcError::NumericDomain("slot covariance factorization failed".into())
        })?;
        let log_det_b = 2.0 * chol_b.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let log_det_a = car.log_det_precision(phi);
        Ok(Self { chol_b, log_det_b, log_det_a, m, h, phi })
    }

    pub fn m(&self) -> f64 {
        self.m
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// log |mI + hA^{-1}|.
    pub fn log_det_mtilde(&self) -> f64 {
        self.log_det_b - self.log_det_a
    }

    /// (mI + hA^{-1})^{-1} v.
    pub fn mtilde_solve(&self, car: &CarMatrices, v: &DVector<f64>) -> DVector<f64> {
        self.chol_b.solve(&car.apply_precision(self.phi, v))
    }

    /// Column-wise [`Self::mtilde_solve`].
    pub fn mtilde_solve_matrix(&self, car: &CarMatrices, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(x.nrows(), x.ncols());
        for c in 0..x.ncols() {
            out.set_column(c, &self.mtilde_solve(car, &x.column(c).into_owned()));
        }
        out
    }

    /// Mean of the spatial-effect conditional, h B^{-1} residual. The mean
    /// does not depend on the noise variance.
    pub fn u_mean(&self, residual: &DVector<f64>) -> DVector<f64> {
        self.chol_b.solve(residual) * self.h
    }

    /// Draw from the spatial-effect conditional with covariance
    /// sigma2 * m * h * B^{-1}.
    pub fn draw_u<R: Rng + ?Sized>(
        &self,
        residual: &DVector<f64>,
        sigma2: f64,
        rng: &mut R,
    ) -> Result<DVector<f64>> {
        let n = residual.len();
        let z = DVector::from_fn(n, |_, _| stats::draw_standard_normal(rng));
        let w = self
            .chol_b
            .l_dirty()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| SfcError::NumericDomain("triangular solve failed".into()))?;
        Ok(self.u_mean(residual) + w * (sigma2 * self.m * self.h).sqrt())
    }
}

/// Active (covariate, slot) pairs and the per-slot design matrices they
/// induce: entry (member, pair) of `per_slot[jk]` is coefficient jk of the
/// transformed covariate block column for that member and pair.
pub struct ActiveDesign {
    pairs: Vec<(usize, usize)>,
    per_slot: Vec<DMatrix<f64>>,
}

impl ActiveDesign {
    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    pub fn q(&self) -> usize {
        self.pairs.len()
    }

    pub fn per_slot(&self, tau: usize) -> &DMatrix<f64> {
        &self.per_slot[tau]
    }

    /// Extracts the active entries of a full p x T coefficient matrix in
    /// pair order.
    pub fn active_vector(&self, beta: &DMatrix<f64>) -> DVector<f64> {
        DVector::from_fn(self.pairs.len(), |a, _| beta[self.pairs[a]])
    }
}

/// Marginal-likelihood evaluation output; also carries what the conditional
/// draws of the regression block need.
pub struct MarginalResult {
    pub log_ml: f64,
    /// y' Sigma0^{-1} y at unit noise variance.
    pub quad: f64,
    /// log |Sigma0| at unit noise variance.
    pub log_det_sigma: f64,
    /// Conditional mean of the active coefficients, pair order.
    pub beta_hat: DVector<f64>,
    pub pairs: Vec<(usize, usize)>,
    /// Output dimension n*T.
    pub dim: f64,
    precision_chol: Option<Cholesky<f64, Dyn>>,
}

impl MarginalResult {
    /// Scatter the conditional coefficient mean into a p x T matrix.
    pub fn beta_hat_matrix(&self, p: usize, t: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(p, t);
        for (a, &pair) in self.pairs.iter().enumerate() {
            out[pair] = self.beta_hat[a];
        }
        out
    }

    /// Posterior of the noise variance with coefficients and spatial
    /// effects integrated out: inverse gamma (shape, rate).
    pub fn sigma2_posterior(&self, prior_shape: f64, prior_rate: f64) -> (f64, f64) {
        (prior_shape + 0.5 * self.dim, prior_rate + 0.5 * self.quad)
    }

    /// Draw the active coefficients given the noise variance.
    pub fn draw_beta<R: Rng + ?Sized>(&self, sigma2: f64, rng: &mut R) -> Result<DVector<f64>> {
        let q = self.pairs.len();
        if q == 0 {
            return Ok(DVector::zeros(0));
        }
        let chol = self.precision_chol.as_ref().expect("factor present when pairs exist");
        let z = DVector::from_fn(q, |_, _| stats::draw_standard_normal(rng));
        let w = chol
            .l_dirty()
            .transpose()
            .solve_upper_triangular(&z)
            .ok_or_else(|| SfcError::NumericDomain("triangular solve failed".into()))?;
        Ok(&self.beta_hat + w * sigma2.sqrt())
    }
}

/// One cluster's data view, parameters, and lazily cached factorizations.
pub struct ClusterModel {
    ctx: ModelContext,
    members: Vec<usize>,
    car: CarMatrices,
    /// Responses in the transform domain, n_r x T, rows in member order.
    y: DMatrix<f64>,
    theta1: HigherParams,
    gamma: Vec<Vec<bool>>,
    slots: Vec<Option<SlotFactor>>,
    design: Option<ActiveDesign>,
    cached_marginal: Option<Arc<MarginalResult>>,
}

impl ClusterModel {
    pub fn new(
        ctx: ModelContext,
        members: Vec<usize>,
        theta1: HigherParams,
        gamma: Vec<Vec<bool>>,
    ) -> Result<Self> {
        if members.windows(2).any(|w| w[0] >= w[1]) {
            return Err(SfcError::Input("members must be sorted and distinct".into()));
        }
        let car = ctx.lattice.car_matrices(&members)?;
        theta1.validate(ctx.p(), &ctx.basis, &car)?;
        let (p, t) = (ctx.p(), ctx.t());
        if gamma.len() != p || gamma.iter().any(|g| g.len() != t) {
            return Err(SfcError::Input("inclusion pattern shape mismatch".into()));
        }
        let n = members.len();
        let mut y = DMatrix::zeros(n, t);
        for (sl, &s) in members.iter().enumerate() {
            for tau in 0..t {
                y[(sl, tau)] = ctx.data.y()[(tau, s)];
            }
        }
        Ok(Self {
            ctx,
            members,
            car,
            y,
            theta1,
            gamma,
            slots: (0..t).map(|_| None).collect(),
            design: None,
            cached_marginal: None,
        })
    }

    /// Fresh cluster with scale parameters and inclusions drawn from their
    /// priors.
    pub fn from_prior<R: Rng + ?Sized>(
        ctx: ModelContext,
        members: Vec<usize>,
        rng: &mut R,
    ) -> Result<Self> {
        let car = ctx.lattice.car_matrices(&members)?;
        let theta1 =
            HigherParams::draw_from_prior(&ctx.hyper, ctx.p(), &ctx.basis, &car, rng)?;
        let gamma = draw_gamma_from_prior(&theta1.pi, &ctx.basis, rng);
        Self::new(ctx, members, theta1, gamma)
    }

    pub fn ctx(&self) -> &ModelContext {
        &self.ctx
    }

    pub fn n(&self) -> usize {
        self.members.len()
    }

    pub fn t(&self) -> usize {
        self.ctx.t()
    }

    pub fn p(&self) -> usize {
        self.ctx.p()
    }

    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn car(&self) -> &CarMatrices {
        &self.car
    }

    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn theta1(&self) -> &HigherParams {
        &self.theta1
    }

    pub fn gamma(&self) -> &[Vec<bool>] {
        &self.gamma
    }

    pub fn gamma_count(&self) -> usize {
        self.gamma.iter().map(|g| g.iter().filter(|&&b| b).count()).sum()
    }

    /// Coefficient variance for a pair, looked up by the slot's level.
    pub fn lambda_of(&self, i: usize, tau: usize) -> f64 {
        let (j, _) = self.ctx.basis.level_of(tau);
        self.theta1.lambda[(i, j)]
    }

    /// Inclusion probability for a pair, looked up by the slot's level.
    pub fn pi_of(&self, i: usize, tau: usize) -> f64 {
        let (j, _) = self.ctx.basis.level_of(tau);
        self.theta1.pi[(i, j)]
    }

    pub fn set_m(&mut self, tau: usize, value: f64) -> Result<()> {
        if tau == 0 {
            return Err(SfcError::Input("the scaling-slot noise scale is pinned at 1".into()));
        }
        self.theta1.m[tau] = value;
        self.slots[tau] = None;
        self.cached_marginal = None;
        Ok(())
    }

    pub fn set_h(&mut self, tau: usize, value: f64) {
        self.theta1.h[tau] = value;
        self.slots[tau] = None;
        self.cached_marginal = None;
    }

    pub fn set_phi(&mut self, tau: usize, value: f64) {
        self.theta1.phi[tau] = value;
        self.slots[tau] = None;
        self.cached_marginal = None;
    }

    pub fn set_lambda(&mut self, i: usize, j: usize, value: f64) {
        self.theta1.lambda[(i, j)] = value;
        self.cached_marginal = None;
    }

    pub fn set_pi(&mut self, i: usize, j: usize, value: f64) {
        self.theta1.pi[(i, j)] = value;
    }

    pub fn set_gamma(&mut self, i: usize, tau: usize, active: bool) {
        if self.gamma[i][tau] != active {
            self.gamma[i][tau] = active;
            self.design = None;
            self.cached_marginal = None;
        }
    }

    /// Replaces the whole scale block; all factorizations are invalidated.
    pub fn replace_theta1(&mut self, theta1: HigherParams) -> Result<()> {
        theta1.validate(self.p(), &self.ctx.basis, &self.car)?;
        self.theta1 = theta1;
        self.slots.iter_mut().for_each(|s| *s = None);
        self.cached_marginal = None;
        Ok(())
    }

    pub fn replace_gamma(&mut self, gamma: Vec<Vec<bool>>) -> Result<()> {
        if gamma.len() != self.p() || gamma.iter().any(|g| g.len() != self.t()) {
            return Err(SfcError::Input("inclusion pattern shape mismatch".into()));
        }
        self.gamma = gamma;
        self.design = None;
        self.cached_marginal = None;
        Ok(())
    }

    /// Lazily built factorization for one slot.
    pub fn slot_factor(&mut self, tau: usize) -> Result<&SlotFactor> {
        if self.slots[tau].is_none() {
            let f = SlotFactor::new(
                &self.car,
                self.theta1.m[tau],
                self.theta1.h[tau],
                self.theta1.phi[tau],
            )?;
            self.slots[tau] = Some(f);
        }
        Ok(self.slots[tau].as_ref().expect("just built"))
    }

    fn ensure_slots(&mut self) -> Result<()> {
        for tau in 0..self.t() {
            self.slot_factor(tau)?;
        }
        Ok(())
    }

    /// Design block for one (covariate, slot) pair: an n_r x T matrix whose
    /// row for member s holds the transformed covariate block column.
    pub fn design_column(&self, i: usize, tau: usize) -> DMatrix<f64> {
        let (n, t) = (self.n(), self.t());
        let mut out = DMatrix::zeros(n, t);
        for (sl, &s) in self.members.iter().enumerate() {
            let col = self.ctx.basis.covariate_column(self.ctx.data.x_curve(i, s), tau);
            for jk in 0..t {
                out[(sl, jk)] = col[jk];
            }
        }
        out
    }

    /// Lazily built design over the active pairs.
    pub fn design(&mut self) -> &ActiveDesign {
        if self.design.is_none() {
            let (n, t, p) = (self.n(), self.t(), self.p());
            let mut pairs = Vec::new();
            for i in 0..p {
                for tau in 0..t {
                    if self.gamma[i][tau] {
                        pairs.push((i, tau));
                    }
                }
            }
            let mut per_slot = vec![DMatrix::zeros(n, pairs.len()); t];
            for (a, &(i, tau)) in pairs.iter().enumerate() {
                let block = self.design_column(i, tau);
                for jk in 0..t {
                    for sl in 0..n {
                        per_slot[jk][(sl, a)] = block[(sl, jk)];
                    }
                }
            }
            self.design = Some(ActiveDesign { pairs, per_slot });
        }
        self.design.as_ref().expect("just built")
    }

    /// Regression mean Sum X beta as an n_r x T matrix. Only active pairs
    /// contribute; callers maintain the invariant that inactive coefficients
    /// are zero.
    pub fn regression_mean(&mut self, beta: &DMatrix<f64>) -> DMatrix<f64> {
        self.design();
        let design = self.design.as_ref().expect("built above");
        let beta_act = design.active_vector(beta);
        let (n, t) = (self.n(), self.t());
        let mut out = DMatrix::zeros(n, t);
        if design.q() > 0 {
            for tau in 0..t {
                out.set_column(tau, &(design.per_slot(tau) * &beta_act));
            }
        }
        out
    }

    /// Marginal likelihood of the cluster's responses with coefficients,
    /// spatial effects, and the noise variance integrated out. The result is
    /// cached until a dependency changes.
    pub fn marginal(&mut self) -> Result<Arc<MarginalResult>> {
        if let Some(mr) = &self.cached_marginal {
            return Ok(Arc::clone(mr));
        }
        self.ensure_slots()?;
        self.design();
        let t = self.t();
        let dim = (self.n() * t) as f64;
        let design = self.design.as_ref().expect("built above");
        let q = design.q();

        let mut quad_y = 0.0;
        let mut log_det_mtilde = 0.0;
        let mut v_inv = DMatrix::zeros(q, q);
        let mut rhs = DVector::zeros(q);
        for tau in 0..t {
            let sf = self.slots[tau].as_ref().expect("ensured above");
            let y_tau = self.y.column(tau).into_owned();
            let w = sf.mtilde_solve(&self.car, &y_tau);
            quad_y += y_tau.dot(&w);
            log_det_mtilde += sf.log_det_mtilde();
            if q > 0 {
                let x = design.per_slot(tau);
                rhs += x.transpose() * &w;
                let mx = sf.mtilde_solve_matrix(&self.car, x);
                v_inv += x.transpose() * mx;
            }
        }

        let (quad, log_det_sigma, beta_hat, precision_chol);
        if q > 0 {
            let mut log_det_lambda = 0.0;
            for (a, &(i, tau)) in design.pairs().iter().enumerate() {
                let lam = self.lambda_of(i, tau);
                v_inv[(a, a)] += 1.0 / lam;
                log_det_lambda += lam.ln();
            }
            // Symmetrize against accumulation noise before factorizing.
            v_inv = (&v_inv + v_inv.transpose()) * 0.5;
            let chol = v_inv.cholesky().ok_or_else(|| {
                SfcError::NumericDomain("coefficient precision factorization failed".into())
            })?;
            let log_det_v_inv =
                2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            let bh = chol.solve(&rhs);
            quad = quad_y - rhs.dot(&bh);
            log_det_sigma = log_det_mtilde + log_det_lambda + log_det_v_inv;
            beta_hat = bh;
            precision_chol = Some(chol);
        } else {
            quad = quad_y;
            log_det_sigma = log_det_mtilde;
            beta_hat = DVector::zeros(0);
            precision_chol = None;
        }
        if !(quad > 0.0) || !quad.is_finite() {
            return Err(SfcError::NumericDomain(format!(
                "residual quadratic form degenerated to {quad}"
            )));
        }

        let prior = self.ctx.hyper.sigma2;
        let log_ml = if self.ctx.hyper.sigma2_is_improper() {
            stats::ln_gamma(0.5 * dim)
                - 0.5 * log_det_sigma
                - 0.5 * dim * (std::f64::consts::PI * quad).ln()
        } else {
            stats::ln_gamma(prior.shape + 0.5 * dim) - stats::ln_gamma(prior.shape)
                + prior.shape * prior.rate.ln()
                - 0.5 * dim * (2.0 * std::f64::consts::PI).ln()
                - 0.5 * log_det_sigma
                - (prior.shape + 0.5 * dim) * (prior.rate + 0.5 * quad).ln()
        };
        let pairs = design.pairs().to_vec();
        let mr = Arc::new(MarginalResult {
            log_ml,
            quad,
            log_det_sigma,
            beta_hat,
            pairs,
            dim,
            precision_chol,
        });
        self.cached_marginal = Some(Arc::clone(&mr));
        Ok(mr)
    }

    /// Marginal log likelihood, cached until a dependency changes.
    pub fn log_ml(&mut self) -> Result<f64> {
        Ok(self.marginal()?.log_ml)
    }

    /// Conditional mean of the spatial effects given coefficients; free of
    /// the noise variance.
    pub fn u_mean(&mut self, beta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.ensure_slots()?;
        let mean = self.regression_mean(beta);
        let resid = &self.y - mean;
        let (n, t) = (self.n(), self.t());
        let mut out = DMatrix::zeros(n, t);
        for tau in 0..t {
            let sf = self.slots[tau].as_ref().expect("ensured above");
            out.set_column(tau, &sf.u_mean(&resid.column(tau).into_owned()));
        }
        Ok(out)
    }

    /// Draw the spatial effects given coefficients and the noise variance.
    pub fn draw_u<R: Rng + ?Sized>(
        &mut self,
        beta: &DMatrix<f64>,
        sigma2: f64,
        rng: &mut R,
    ) -> Result<DMatrix<f64>> {
        self.ensure_slots()?;
        let mean = self.regression_mean(beta);
        let resid = &self.y - mean;
        let (n, t) = (self.n(), self.t());
        let mut out = DMatrix::zeros(n, t);
        for tau in 0..t {
            let sf = self.slots[tau].as_ref().expect("ensured above");
            out.set_column(tau, &sf.draw_u(&resid.column(tau).into_owned(), sigma2, rng)?);
        }
        Ok(out)
    }

    /// Exact joint draw of the regression block from its conditional given
    /// the scales and inclusions: noise variance from its collapsed
    /// posterior, then coefficients, then spatial effects.
    pub fn draw_theta2<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<LowerParams> {
        let mr = self.marginal()?;
        let prior = self.ctx.hyper.sigma2;
        let (shape, rate) = mr.sigma2_posterior(prior.shape, prior.rate);
        let sigma2 = stats::draw_inverse_gamma(rng, shape, rate)?;
        let beta_vec = mr.draw_beta(sigma2, rng)?;
        let mut beta = DMatrix::zeros(self.p(), self.t());
        for (a, &pair) in mr.pairs.iter().enumerate() {
            beta[pair] = beta_vec[a];
        }
        let u = self.draw_u(&beta, sigma2, rng)?;
        Ok(LowerParams { beta, u, sigma2 })
    }

    /// Full conditional of the noise variance given coefficients and
    /// spatial effects: inverse gamma (shape, rate).
    pub fn sigma2_full_conditional(&mut self, lower: &LowerParams) -> Result<(f64, f64)> {
        let prior = self.ctx.hyper.sigma2;
        let (n, t) = (self.n(), self.t());
        self.design();
        let design = self.design.as_ref().expect("built above");
        let q = design.q();
        let shape = prior.shape + 0.5 * q as f64 + (n * t) as f64;

        let mut rate = prior.rate;
        for &(i, tau) in design.pairs() {
            let b = lower.beta[(i, tau)];
            rate += 0.5 * b * b / self.lambda_of(i, tau);
        }
        let mean = self.regression_mean(&lower.beta);
        let resid = &self.y - mean - &lower.u;
        for tau in 0..t {
            let u_tau = lower.u.column(tau).into_owned();
            rate += 0.5 * self.car.quad_precision(self.theta1.phi[tau], &u_tau)
                / self.theta1.h[tau];
            rate += 0.5 * resid.column(tau).norm_squared() / self.theta1.m[tau];
        }
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(SfcError::NumericDomain(format!(
                "noise-variance conditional rate degenerated to {rate}"
            )));
        }
        Ok((shape, rate))
    }

    /// Joint log prior density of the scale block.
    pub fn log_prior_theta1(&self) -> f64 {
        let hp = &self.ctx.hyper;
        let t = self.t();
        let (lo, hi) = self.car.phi_support();
        let mut acc = 0.0;
        for tau in 1..t {
            acc += stats::inverse_gamma_logpdf(self.theta1.m[tau], hp.m.shape, hp.m.rate);
        }
        for v in self.theta1.lambda.iter() {
            acc += stats::inverse_gamma_logpdf(*v, hp.lambda.shape, hp.lambda.rate);
        }
        for v in self.theta1.pi.iter() {
            acc += stats::beta_logpdf(*v, hp.pi.a, hp.pi.b);
        }
        for tau in 0..t {
            acc += stats::inverse_gamma_logpdf(self.theta1.h[tau], hp.h.shape, hp.h.rate);
            acc += if self.car.phi_in_support(self.theta1.phi[tau]) {
                -(hi - lo).ln()
            } else {
                f64::NEG_INFINITY
            };
        }
        acc
    }

    /// Log prior mass of the inclusion pattern given the inclusion
    /// probabilities.
    pub fn log_prior_gamma(&self) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.p() {
            for tau in 0..self.t() {
                let pi = self.pi_of(i, tau);
                acc += if self.gamma[i][tau] { pi.ln() } else { (1.0 - pi).ln() };
            }
        }
        acc
    }
}
