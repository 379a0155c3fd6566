//! Data containers, hyperparameters, and the per-cluster parameter blocks
//! shared by the likelihood engine and the sampler.

use crate::error::{Result, SfcError};
use crate::lattice::{CarMatrices, SpatialLattice};
use crate::partition::CenterPriorMode;
use crate::stats;
use crate::wavelet::WaveletBasis;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Shape and rate of an inverse gamma prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IgPair {
    pub shape: f64,
    pub rate: f64,
}

/// Parameters of a beta prior.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaPair {
    pub a: f64,
    pub b: f64,
}

/// Fixed prior and policy settings for a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparameters {
    /// Noise-scale prior per detail slot; the scaling slot is pinned at 1.
    pub m: IgPair,
    /// Coefficient-variance prior per (covariate, level).
    pub lambda: IgPair,
    /// Spatial-effect scale prior per slot.
    pub h: IgPair,
    /// Cluster noise variance prior; shape = rate = 0 selects the scale-
    /// invariant improper prior.
    pub sigma2: IgPair,
    /// Inclusion-probability prior per (covariate, level).
    pub pi: BetaPair,
    /// Variance of the auxiliary Gaussian used by split proposals.
    pub vartheta2: f64,
    /// Largest admissible cluster count (clamped to the location count).
    pub n_max: usize,
    /// Smallest admissible cluster size.
    pub n_min: usize,
    /// Neighborhood order defining boundary choice sets.
    pub k_order: usize,
    pub center_prior: CenterPriorMode,
    /// Fix the cluster-count rate parameter instead of sampling it.
    pub alpha_fixed: Option<f64>,
    /// Reject partitions with a disconnected cluster.
    pub enforce_connectivity: bool,
}

impl Default for Hyperparameters {
    fn default() -> Self {
        Self {
            m: IgPair { shape: 2.0, rate: 0.01 },
            lambda: IgPair { shape: 2.0, rate: 0.01 },
            h: IgPair { shape: 2.0, rate: 0.01 },
            sigma2: IgPair { shape: 0.0, rate: 0.0 },
            pi: BetaPair { a: 1.0, b: 1.0 },
            vartheta2: 0.25,
            n_max: 25,
            n_min: 2,
            k_order: 2,
            center_prior: CenterPriorMode::UniformOnCenterLabelPairs,
            alpha_fixed: None,
            enforce_connectivity: true,
        }
    }
}

/// The documented default prior settings.
pub fn default_hyperparameters() -> Hyperparameters {
    Hyperparameters::default()
}

impl Hyperparameters {
    /// Whether the noise-variance prior is the improper scale-invariant one.
    pub fn sigma2_is_improper(&self) -> bool {
        self.sigma2.shape == 0.0 && self.sigma2.rate == 0.0
    }

    pub fn validate(&self) -> Result<()> {
        for (name, pair) in
            [("m", self.m), ("lambda", self.lambda), ("h", self.h)]
        {
            if !(pair.shape > 0.0 && pair.rate > 0.0) {
                return Err(SfcError::Config(format!(
                    "{name} prior needs positive shape and rate"
                )));
            }
        }
        if self.sigma2.shape < 0.0 || self.sigma2.rate < 0.0 {
            return Err(SfcError::Config("sigma2 prior parameters must be nonnegative".into()));
        }
        if (self.sigma2.shape == 0.0) != (self.sigma2.rate == 0.0) {
            return Err(SfcError::Config(
                "sigma2 prior must have both parameters zero or both positive".into(),
            ));
        }
        if !(self.pi.a > 0.0 && self.pi.b > 0.0) {
            return Err(SfcError::Config("pi prior needs positive parameters".into()));
        }
        if !(self.vartheta2 > 0.0) {
            return Err(SfcError::Config("vartheta2 must be positive".into()));
        }
        if self.n_max < 1 {
            return Err(SfcError::Config("n_max must be at least 1".into()));
        }
        if let Some(a) = self.alpha_fixed {
            if !(a > 0.0 && a < 1.0) {
                return Err(SfcError::Config("alpha_fixed must lie in (0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// Response and covariate curves for every location, held both in the time
/// domain and as transform coefficients.
///
/// Matrices are T x N with one column per location. By convention covariate
/// 0 is the intercept curve of ones; the builder does not enforce this.
#[derive(Debug, Clone)]
pub struct FunctionalDataset {
    n: usize,
    t: usize,
    p: usize,
    y_raw: DMatrix<f64>,
    x_raw: Vec<DMatrix<f64>>,
    y: DMatrix<f64>,
}

impl FunctionalDataset {
    pub fn new(basis: &WaveletBasis, y_raw: DMatrix<f64>, x_raw: Vec<DMatrix<f64>>) -> Result<Self> {
        let (t, n) = y_raw.shape();
        if t != basis.t() {
            return Err(SfcError::Data(format!(
                "series length {t} does not match transform length {}",
                basis.t()
            )));
        }
        if n == 0 {
            return Err(SfcError::Data("dataset has no locations".into()));
        }
        if x_raw.is_empty() {
            return Err(SfcError::Data("dataset needs at least one covariate".into()));
        }
        for (i, x) in x_raw.iter().enumerate() {
            if x.shape() != (t, n) {
                return Err(SfcError::Data(format!(
                    "covariate {i} has shape {:?}, expected ({t}, {n})",
                    x.shape()
                )));
            }
        }
        let mut y = DMatrix::zeros(t, n);
        for s in 0..n {
            y.set_column(s, &basis.forward(y_raw.column(s).as_slice()));
        }
        Ok(Self { n, t, p: x_raw.len(), y_raw, x_raw, y })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Number of covariates, intercept included.
    pub fn p(&self) -> usize {
        self.p
    }

    pub fn y_raw(&self) -> &DMatrix<f64> {
        &self.y_raw
    }

    /// Transform coefficients of the responses, T x N.
    pub fn y(&self) -> &DMatrix<f64> {
        &self.y
    }

    pub fn x_raw(&self, i: usize) -> &DMatrix<f64> {
        &self.x_raw[i]
    }

    /// Raw curve of covariate `i` at location `s`.
    pub fn x_curve(&self, i: usize, s: usize) -> &[f64] {
        self.x_raw[i].column(s).data.into_slice()
    }
}

/// Immutable bundle of geometry, basis, data, and priors for one run.
#[derive(Clone)]
pub struct ModelContext {
    pub lattice: Arc<SpatialLattice>,
    pub basis: Arc<WaveletBasis>,
    pub data: Arc<FunctionalDataset>,
    pub hyper: Hyperparameters,
}

impl ModelContext {
    pub fn new(
        lattice: Arc<SpatialLattice>,
        basis: Arc<WaveletBasis>,
        data: Arc<FunctionalDataset>,
        mut hyper: Hyperparameters,
    ) -> Result<Self> {
        if data.n() != lattice.n() {
            return Err(SfcError::Data(format!(
                "dataset has {} locations but the lattice has {}",
                data.n(),
                lattice.n()
            )));
        }
        if data.t() != basis.t() {
            return Err(SfcError::Data("series length does not match the transform".into()));
        }
        hyper.validate()?;
        hyper.n_max = hyper.n_max.min(lattice.n());
        Ok(Self { lattice, basis, data, hyper })
    }

    pub fn n(&self) -> usize {
        self.data.n()
    }

    pub fn t(&self) -> usize {
        self.data.t()
    }

    pub fn p(&self) -> usize {
        self.data.p()
    }

    /// Number of transform levels J (series length 2^J).
    pub fn levels(&self) -> usize {
        self.basis.levels()
    }
}

/// Cluster-level scale and dependence parameters: per-slot noise scales m,
/// coefficient variances lambda and inclusion probabilities pi per
/// (covariate, level), and per-slot spatial scales h and dependence phi.
#[derive(Debug, Clone)]
pub struct HigherParams {
    /// Slot noise scales, length T; slot 0 is pinned at 1.
    pub m: Vec<f64>,
    /// p x (J+1); column j applies to every shift at level j.
    pub lambda: DMatrix<f64>,
    /// p x (J+1) inclusion probabilities.
    pub pi: DMatrix<f64>,
    /// Spatial-effect scales, length T.
    pub h: Vec<f64>,
    /// Spatial-dependence parameters, length T, inside the cluster support.
    pub phi: Vec<f64>,
}

impl HigherParams {
    pub fn draw_from_prior<R: Rng + ?Sized>(
        hyper: &Hyperparameters,
        p: usize,
        basis: &WaveletBasis,
        car: &CarMatrices,
        rng: &mut R,
    ) -> Result<Self> {
        let t = basis.t();
        let levels = basis.levels();
        let mut m = vec![1.0; t];
        for v in m.iter_mut().skip(1) {
            *v = stats::draw_inverse_gamma(rng, hyper.m.shape, hyper.m.rate)?;
        }
        let mut lambda = DMatrix::zeros(p, levels + 1);
        let mut pi = DMatrix::zeros(p, levels + 1);
        for i in 0..p {
            for j in 0..=levels {
                lambda[(i, j)] = stats::draw_inverse_gamma(rng, hyper.lambda.shape, hyper.lambda.rate)?;
                pi[(i, j)] = stats::draw_beta(rng, hyper.pi.a, hyper.pi.b)?;
            }
        }
        let mut h = vec![0.0; t];
        let mut phi = vec![0.0; t];
        let (lo, hi) = car.phi_support();
        for tau in 0..t {
            h[tau] = stats::draw_inverse_gamma(rng, hyper.h.shape, hyper.h.rate)?;
            phi[tau] = lo + (hi - lo) * rng.random::<f64>();
        }
        Ok(Self { m, lambda, pi, h, phi })
    }

    pub fn validate(&self, p: usize, basis: &WaveletBasis, car: &CarMatrices) -> Result<()> {
        let t = basis.t();
        let cols = basis.levels() + 1;
        if self.m.len() != t || self.h.len() != t || self.phi.len() != t {
            return Err(SfcError::Input("per-slot parameter length mismatch".into()));
        }
        if self.lambda.shape() != (p, cols) || self.pi.shape() != (p, cols) {
            return Err(SfcError::Input("per-level parameter shape mismatch".into()));
        }
        if self.m[0] != 1.0 {
            return Err(SfcError::Input("the scaling-slot noise scale must equal 1".into()));
        }
        if self.m.iter().any(|&v| !(v > 0.0)) || self.h.iter().any(|&v| !(v > 0.0)) {
            return Err(SfcError::NumericDomain("scales must be positive".into()));
        }
        if self.lambda.iter().any(|&v| !(v > 0.0)) {
            return Err(SfcError::NumericDomain("coefficient variances must be positive".into()));
        }
        if self.pi.iter().any(|&v| !(v > 0.0 && v < 1.0)) {
            return Err(SfcError::NumericDomain("inclusion probabilities must lie in (0, 1)".into()));
        }
        if self.phi.iter().any(|&v| !car.phi_in_support(v)) {
            return Err(SfcError::NumericDomain(
                "spatial dependence outside the admissible interval".into(),
            ));
        }
        Ok(())
    }
}

/// Per-cluster regression state: coefficients (zero where inactive), spatial
/// effects per member and slot, and the noise variance.
#[derive(Debug, Clone)]
pub struct LowerParams {
    /// p x T coefficient matrix in the transform domain.
    pub beta: DMatrix<f64>,
    /// n_r x T spatial effects, rows in member order.
    pub u: DMatrix<f64>,
    pub sigma2: f64,
}

/// Draws an inclusion indicator for every (covariate, slot) pair from its
/// level's probability.
pub fn draw_gamma_from_prior<R: Rng + ?Sized>(
    pi: &DMatrix<f64>,
    basis: &WaveletBasis,
    rng: &mut R,
) -> Vec<Vec<bool>> {
    let (p, t) = (pi.nrows(), basis.t());
    (0..p)
        .map(|i| {
            (0..t)
                .map(|tau| {
                    let (j, _) = basis.level_of(tau);
                    rng.random::<f64>() < pi[(i, j)]
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::wavelet::WaveletFamily;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_context() -> ModelContext {
        let lattice = Arc::new(SpatialLattice::new(2, 2).unwrap());
        let basis = Arc::new(WaveletBasis::new(WaveletFamily::Haar, 4).unwrap());
        let y_raw = DMatrix::from_fn(4, 4, |t, s| (t as f64) + 0.1 * s as f64);
        let x_raw = vec![DMatrix::from_element(4, 4, 1.0)];
        let data = Arc::new(FunctionalDataset::new(&basis, y_raw, x_raw).unwrap());
        ModelContext::new(lattice, basis, data, Hyperparameters::default()).unwrap()
    }

    #[test]
    fn default_settings() {
        let h = default_hyperparameters();
        assert_eq!(h.m.shape, 2.0);
        assert_eq!(h.m.rate, 0.01);
        assert!(h.sigma2_is_improper());
        assert_eq!(h.pi.a, 1.0);
        assert_eq!(h.n_max, 25);
        assert_eq!(h.n_min, 2);
        assert_eq!(h.k_order, 2);
        assert_eq!(h.center_prior, CenterPriorMode::UniformOnCenterLabelPairs);
        assert!(h.enforce_connectivity);
        assert!(h.validate().is_ok());
    }

    #[test]
    fn hyperparameter_validation() {
        let mut h = default_hyperparameters();
        h.m.shape = 0.0;
        assert!(h.validate().is_err());
        let mut h = default_hyperparameters();
        h.sigma2 = IgPair { shape: 3.0, rate: 0.0 };
        assert!(h.validate().is_err());
        let mut h = default_hyperparameters();
        h.alpha_fixed = Some(1.5);
        assert!(h.validate().is_err());
        let mut h = default_hyperparameters();
        h.sigma2 = IgPair { shape: 3.0, rate: 1.0 };
        assert!(h.validate().is_ok());
        assert!(!h.sigma2_is_improper());
    }

    #[test]
    fn dataset_transforms_responses_per_location() {
        let ctx = small_context();
        for s in 0..4 {
            let direct = ctx.basis.forward(ctx.data.y_raw().column(s).as_slice());
            assert_relative_eq!(ctx.data.y().column(s).into_owned(), direct, epsilon = 1e-12);
            let back = ctx.basis.inverse(ctx.data.y().column(s).as_slice());
            assert_relative_eq!(ctx.data.y_raw().column(s).into_owned(), back, epsilon = 1e-10);
        }
        assert_eq!(ctx.data.x_curve(0, 2), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn context_checks_dimensions_and_clamps_n_max() {
        let lattice = Arc::new(SpatialLattice::new(2, 2).unwrap());
        let basis = Arc::new(WaveletBasis::new(WaveletFamily::Haar, 4).unwrap());
        let y_raw = DMatrix::zeros(4, 3);
        let x_raw = vec![DMatrix::from_element(4, 3, 1.0)];
        let data = Arc::new(FunctionalDataset::new(&basis, y_raw, x_raw).unwrap());
        assert!(ModelContext::new(lattice, basis, data, Hyperparameters::default()).is_err());

        let ctx = small_context();
        assert_eq!(ctx.hyper.n_max, 4);
    }

    #[test]
    fn prior_draws_respect_constraints() {
        let ctx = small_context();
        let car = ctx.lattice.car_matrices(&[0, 1, 2, 3]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let theta = HigherParams::draw_from_prior(&ctx.hyper, 2, &ctx.basis, &car, &mut rng)
                .unwrap();
            assert!(theta.validate(2, &ctx.basis, &car).is_ok());
            assert_eq!(theta.m[0], 1.0);
            assert_eq!(theta.lambda.shape(), (2, 3));
        }
        let gamma = draw_gamma_from_prior(
            &DMatrix::from_element(2, 3, 0.5),
            &ctx.basis,
            &mut rng,
        );
        assert_eq!(gamma.len(), 2);
        assert_eq!(gamma[0].len(), 4);
    }
}
