//! Scalar distributions and numeric helpers shared by the sampler, the
//! likelihood code, and the diagnostics.

use crate::error::{Result, SfcError};
use rand::Rng;
use rand_distr::{Beta as BetaDist, Distribution, Gamma, StandardNormal};

/// Natural log of the gamma function.
pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma_r(x).0
}

/// Natural log of the beta function B(a, b).
pub fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

/// log(sum(exp(xs))) without overflow; -inf for an empty slice.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    m + xs.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Two-sided tail probability of a standard normal score.
pub fn normal_two_sided_p(z: f64) -> f64 {
    libm::erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// Log density of N(mean, var) at x.
pub fn normal_logpdf(x: f64, mean: f64, var: f64) -> f64 {
    let r = x - mean;
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + r * r / var)
}

pub fn draw_standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

pub fn draw_normal<R: Rng + ?Sized>(rng: &mut R, mean: f64, var: f64) -> f64 {
    mean + var.sqrt() * draw_standard_normal(rng)
}

/// Gamma(shape, rate) draw, density ∝ x^{shape-1} e^{-rate x}.
pub fn draw_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0) {
        return Err(SfcError::NumericDomain(format!(
            "gamma draw needs positive shape and rate, got ({shape}, {rate})"
        )));
    }
    let dist = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| SfcError::NumericDomain(format!("gamma({shape}, rate {rate}): {e}")))?;
    Ok(dist.sample(rng))
}

/// Inverse gamma draw with shape a and rate b, density ∝ x^{-a-1} e^{-b/x}.
pub fn draw_inverse_gamma<R: Rng + ?Sized>(rng: &mut R, shape: f64, rate: f64) -> Result<f64> {
    // 1/X for X ~ Gamma(shape, rate). Rejects the measure-zero underflow at 0.
    for _ in 0..64 {
        let g = draw_gamma(rng, shape, rate)?;
        if g > 0.0 && g.is_finite() {
            return Ok(1.0 / g);
        }
    }
    Err(SfcError::NumericDomain(format!(
        "inverse gamma({shape}, {rate}) draw kept underflowing"
    )))
}

/// Log density of the inverse gamma with shape a and rate b at x.
pub fn inverse_gamma_logpdf(x: f64, shape: f64, rate: f64) -> f64 {
    if x <= 0.0 {
        return f64::NEG_INFINITY;
    }
    shape * rate.ln() - ln_gamma(shape) - (shape + 1.0) * x.ln() - rate / x
}

pub fn draw_beta<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> Result<f64> {
    let dist = BetaDist::new(a, b)
        .map_err(|e| SfcError::NumericDomain(format!("beta({a}, {b}): {e}")))?;
    Ok(dist.sample(rng))
}

pub fn beta_logpdf(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        return f64::NEG_INFINITY;
    }
    (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln() - ln_beta(a, b)
}

/// Bernoulli draw with success probability sigmoid(log_odds).
pub fn bernoulli_from_log_odds<R: Rng + ?Sized>(rng: &mut R, log_odds: f64) -> bool {
    rng.random::<f64>() < sigmoid(log_odds)
}

/// Linear-interpolation quantile of an ascending-sorted slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty() && (0.0..=1.0).contains(&q));
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// Mean and batch-means standard error of a (possibly autocorrelated)
/// scalar chain. Uses sqrt(n)-length batches and drops the remainder.
pub fn batch_means_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n >= 16, "batch means need at least 16 samples");
    let batch_len = (n as f64).sqrt().floor() as usize;
    let n_batches = n / batch_len;
    let used = n_batches * batch_len;
    let grand = xs[..used].iter().sum::<f64>() / used as f64;
    let mut var_bm = 0.0;
    for b in 0..n_batches {
        let m = xs[b * batch_len..(b + 1) * batch_len].iter().sum::<f64>() / batch_len as f64;
        var_bm += (m - grand) * (m - grand);
    }
    var_bm /= (n_batches - 1) as f64;
    (grand, (var_bm / n_batches as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn ln_gamma_known_values() {
        assert_relative_eq!(ln_gamma(1.0), 0.0, epsilon = 1e-12);
        assert_relative_eq!(ln_gamma(5.0), 24.0_f64.ln(), epsilon = 1e-12);
        assert_relative_eq!(ln_gamma(0.5), std::f64::consts::PI.sqrt().ln(), epsilon = 1e-12);
    }

    #[test]
    fn logsumexp_is_stable_and_exact() {
        assert_relative_eq!(
            logsumexp(&[-1000.0, -1000.0]),
            -1000.0 + 2.0_f64.ln(),
            epsilon = 1e-12
        );
        assert_relative_eq!(logsumexp(&[0.0_f64.ln(), 1.0, 2.0]), {
            let direct: f64 = 1.0_f64.exp() + 2.0_f64.exp();
            direct.ln()
        });
        assert_eq!(logsumexp(&[]), f64::NEG_INFINITY);
    }

    #[test]
    fn logit_sigmoid_round_trip() {
        for p in [1e-8, 0.3, 0.5, 0.99, 1.0 - 1e-9] {
            assert_relative_eq!(sigmoid(logit(p)), p, epsilon = 1e-9);
        }
        assert_relative_eq!(sigmoid(-745.0), (-745.0_f64).exp(), epsilon = 1e-300);
    }

    #[test]
    fn density_values_match_hand_calculation() {
        // N(1, 4) at 3: -0.5 (ln(8 pi) + 1).
        assert_relative_eq!(
            normal_logpdf(3.0, 1.0, 4.0),
            -0.5 * ((8.0 * std::f64::consts::PI).ln() + 1.0),
            epsilon = 1e-12
        );
        // IG(2, 3) at 1: 2 ln 3 - ln Gamma(2) - 3 ln 1 - 3.
        assert_relative_eq!(
            inverse_gamma_logpdf(1.0, 2.0, 3.0),
            2.0 * 3.0_f64.ln() - 3.0,
            epsilon = 1e-12
        );
        // Beta(2, 3) at 0.25: ln(12) + ln(0.25) + 2 ln(0.75).
        assert_relative_eq!(
            beta_logpdf(0.25, 2.0, 3.0),
            12.0_f64.ln() + 0.25_f64.ln() + 2.0 * 0.75_f64.ln(),
            epsilon = 1e-12
        );
        assert_eq!(inverse_gamma_logpdf(-1.0, 2.0, 3.0), f64::NEG_INFINITY);
    }

    #[test]
    fn normal_tail_probability() {
        assert_relative_eq!(normal_two_sided_p(1.959964), 0.05, epsilon = 1e-5);
        assert_relative_eq!(normal_two_sided_p(0.0), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn inverse_gamma_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (shape, rate) = (3.0, 2.0);
        let n = 200_000;
        let mean: f64 =
            (0..n).map(|_| draw_inverse_gamma(&mut rng, shape, rate).unwrap()).sum::<f64>()
                / n as f64;
        // Exact mean rate/(shape-1) = 1.
        assert!((mean - 1.0).abs() < 0.02, "mean = {mean}");
    }

    #[test]
    fn quantiles_interpolate() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_relative_eq!(quantile(&xs, 0.0), 1.0);
        assert_relative_eq!(quantile(&xs, 0.5), 3.0);
        assert_relative_eq!(quantile(&xs, 1.0), 5.0);
        assert_relative_eq!(quantile(&xs, 0.125), 1.5);
    }

    #[test]
    fn batch_means_on_iid_normals() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 4096;
        let xs: Vec<f64> = (0..n).map(|_| draw_standard_normal(&mut rng)).collect();
        let (mean, se) = batch_means_se(&xs);
        let expect_se = 1.0 / (n as f64).sqrt();
        assert!(mean.abs() < 4.0 * expect_se, "mean = {mean}");
        assert!(se > 0.5 * expect_se && se < 1.6 * expect_se, "se = {se}");
    }

    #[test]
    fn invalid_parameters_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(draw_gamma(&mut rng, 0.0, 1.0).is_err());
        assert!(draw_gamma(&mut rng, 1.0, -1.0).is_err());
        assert!(draw_inverse_gamma(&mut rng, -2.0, 1.0).is_err());
    }
}
