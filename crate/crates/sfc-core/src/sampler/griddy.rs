//! Griddy Gibbs machinery: normalize a log density on a finite grid and
//! draw by inverting the piecewise-linear CDF.
//!
//! The target support is an open interval whose endpoint densities vanish
//! (for the spatial-dependence parameter the precision determinant is zero
//! at both ends), so the endpoint knots are pinned to zero and the draw is
//! clamped strictly inside the interval.

use crate::error::{Result, SfcError};
use rand::Rng;

/// Knot count used by the spatial-dependence update.
pub const DEFAULT_GRID_POINTS: usize = 64;

/// A normalized piecewise-linear density on [lo, hi] with zero endpoint
/// mass, ready for inverse-CDF draws.
#[derive(Debug, Clone)]
pub struct GridSampler {
    knots: Vec<f64>,
    /// Normalized density at each knot; first and last are zero.
    density: Vec<f64>,
    /// CDF at each knot; runs from 0 to 1.
    cdf: Vec<f64>,
    log_normalizer: f64,
}

impl GridSampler {
    /// Evaluates `log_density` at the interior knots of an equally spaced
    /// grid with `points` knots total and normalizes the interpolant.
    pub fn build<F: FnMut(f64) -> f64>(
        lo: f64,
        hi: f64,
        points: usize,
        mut log_density: F,
    ) -> Result<Self> {
        let width = hi - lo;
        if !(width.is_finite() && width >= 1e-8) {
            return Err(SfcError::NumericDomain(format!(
                "grid support [{lo}, {hi}] is degenerate"
            )));
        }
        if points < 4 {
            return Err(SfcError::NumericDomain("grid needs at least 4 knots".into()));
        }
        let step = width / (points - 1) as f64;
        let knots: Vec<f64> = (0..points).map(|i| lo + step * i as f64).collect();
        let mut logf = vec![f64::NEG_INFINITY; points];
        for i in 1..points - 1 {
            let v = log_density(knots[i]);
            if v.is_nan() || v == f64::INFINITY {
                return Err(SfcError::NumericDomain(format!(
                    "log density is {v} at grid knot {}",
                    knots[i]
                )));
            }
            logf[i] = v;
        }
        let shift = logf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(SfcError::NumericDomain("density vanishes on the whole grid".into()));
        }
        let mut density: Vec<f64> = logf.iter().map(|&v| (v - shift).exp()).collect();
        let mut cdf = vec![0.0; points];
        for i in 1..points {
            cdf[i] = cdf[i - 1] + 0.5 * (density[i - 1] + density[i]) * step;
        }
        let total = cdf[points - 1];
        if !(total.is_finite() && total > 0.0) {
            return Err(SfcError::NumericDomain("grid density has zero mass".into()));
        }
        for v in &mut density {
            *v /= total;
        }
        for v in &mut cdf {
            *v /= total;
        }
        cdf[points - 1] = 1.0;
        Ok(Self { knots, density, cdf, log_normalizer: total.ln() + shift })
    }

    /// Log of the integral of exp(log_density) under the interpolant.
    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    /// Normalized density of the interpolant at `x` (zero outside).
    pub fn pdf(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if x <= self.knots[0] || x >= self.knots[n - 1] {
            return 0.0;
        }
        let i = self.knots.partition_point(|&k| k <= x) - 1;
        let w = (x - self.knots[i]) / (self.knots[i + 1] - self.knots[i]);
        self.density[i] * (1.0 - w) + self.density[i + 1] * w
    }

    /// CDF of the interpolant at `x`.
    pub fn cdf(&self, x: f64) -> f64 {
        let n = self.knots.len();
        if x <= self.knots[0] {
            return 0.0;
        }
        if x >= self.knots[n - 1] {
            return 1.0;
        }
        let i = self.knots.partition_point(|&k| k <= x) - 1;
        let s = x - self.knots[i];
        let slope = (self.density[i + 1] - self.density[i]) / (self.knots[i + 1] - self.knots[i]);
        self.cdf[i] + self.density[i] * s + 0.5 * slope * s * s
    }

    /// The x with CDF(x) = t, solved segment-wise; t is clamped to [0, 1].
    pub fn quantile(&self, t: f64) -> f64 {
        let n = self.knots.len();
        let t = t.clamp(0.0, 1.0);
        let i = self.cdf.partition_point(|&c| c <= t).clamp(1, n - 1) - 1;
        let rem = t - self.cdf[i];
        let delta = self.knots[i + 1] - self.knots[i];
        let slope = (self.density[i + 1] - self.density[i]) / delta;
        let f0 = self.density[i];
        let s = if slope.abs() * delta < 1e-14 * (f0 + 1e-300) {
            rem / f0.max(1e-300)
        } else {
            let disc = (f0 * f0 + 2.0 * slope * rem).max(0.0);
            (disc.sqrt() - f0) / slope
        };
        let x = self.knots[i] + s.clamp(0.0, delta);
        let margin = 1e-12 * (self.knots[n - 1] - self.knots[0]);
        x.clamp(self.knots[0] + margin, self.knots[n - 1] - margin)
    }

    /// One inverse-CDF draw, strictly inside the support.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}
