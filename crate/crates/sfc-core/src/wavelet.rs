//! Orthonormal discrete wavelet transform on dyadic grids, with the
//! level/shift indexing used by the shrinkage priors and the O(T) evaluation
//! of induced covariate design columns.

use crate::error::{Result, SfcError};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Supported orthonormal filter families. Both use periodic boundary
/// handling, so the transform is exactly orthogonal at every dyadic length.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaveletFamily {
    Haar,
    Daubechies4,
}

fn d4_filters() -> ([f64; 4], [f64; 4]) {
    let s3 = 3.0_f64.sqrt();
    let c = 1.0 / (4.0 * 2.0_f64.sqrt());
    let h = [(1.0 + s3) * c, (3.0 + s3) * c, (3.0 - s3) * c, (1.0 - s3) * c];
    // Quadrature mirror: g_k = (-1)^k h_{3-k}.
    let g = [h[3], -h[2], h[1], -h[0]];
    (h, g)
}

/// Pyramid transform of length `t = 2^levels`.
///
/// Coefficient layout: slot 0 holds the single scaling coefficient, labeled
/// level 0. Detail level `j` (for `j = 1..=levels`) has `2^{j-1}` shifts
/// `k = 1..=2^{j-1}` stored at slots `2^{j-1} + k - 1`, so finer levels sit
/// in the upper half of the vector.
#[derive(Debug, Clone)]
pub struct WaveletBasis {
    t: usize,
    levels: usize,
    family: WaveletFamily,
}

impl WaveletBasis {
    pub fn new(family: WaveletFamily, t: usize) -> Result<Self> {
        if t < 2 || !t.is_power_of_two() {
            return Err(SfcError::Input(format!(
                "series length must be a power of two >= 2, got {t}"
            )));
        }
        Ok(Self { t, levels: t.ilog2() as usize, family })
    }

    /// Series length T.
    pub fn t(&self) -> usize {
        self.t
    }

    /// Number of detail levels J, with T = 2^J.
    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn family(&self) -> WaveletFamily {
        self.family
    }

    /// Number of shifts at a level: 1 at level 0, else 2^{j-1}.
    pub fn slots_at_level(&self, j: usize) -> usize {
        debug_assert!(j <= self.levels);
        if j == 0 {
            1
        } else {
            1 << (j - 1)
        }
    }

    /// Slot index of coefficient (j, k); inverse of [`Self::level_of`].
    pub fn index_of(&self, j: usize, k: usize) -> usize {
        if j == 0 {
            debug_assert_eq!(k, 0);
            0
        } else {
            debug_assert!(j <= self.levels);
            debug_assert!(k >= 1 && k <= self.slots_at_level(j));
            (1 << (j - 1)) + k - 1
        }
    }

    /// Level and shift (j, k) of a slot index.
    pub fn level_of(&self, tau: usize) -> (usize, usize) {
        debug_assert!(tau < self.t);
        if tau == 0 {
            (0, 0)
        } else {
            let j = tau.ilog2() as usize + 1;
            (j, tau - (1 << (j - 1)) + 1)
        }
    }

    fn analyze_pass(&self, input: &[f64], approx: &mut [f64], detail: &mut [f64]) {
        let n = input.len();
        match self.family {
            WaveletFamily::Haar => {
                let r = std::f64::consts::FRAC_1_SQRT_2;
                for k in 0..n / 2 {
                    approx[k] = (input[2 * k] + input[2 * k + 1]) * r;
                    detail[k] = (input[2 * k] - input[2 * k + 1]) * r;
                }
            }
            WaveletFamily::Daubechies4 => {
                let (h, g) = d4_filters();
                for k in 0..n / 2 {
                    let mut a = 0.0;
                    let mut d = 0.0;
                    for m in 0..4 {
                        let x = input[(2 * k + m) % n];
                        a += h[m] * x;
                        d += g[m] * x;
                    }
                    approx[k] = a;
                    detail[k] = d;
                }
            }
        }
    }

    fn synthesize_pass(&self, approx: &[f64], detail: &[f64], output: &mut [f64]) {
        let n = output.len();
        match self.family {
            WaveletFamily::Haar => {
                let r = std::f64::consts::FRAC_1_SQRT_2;
                for k in 0..n / 2 {
                    output[2 * k] = (approx[k] + detail[k]) * r;
                    output[2 * k + 1] = (approx[k] - detail[k]) * r;
                }
            }
            WaveletFamily::Daubechies4 => {
                let (h, g) = d4_filters();
                output.fill(0.0);
                for k in 0..n / 2 {
                    for m in 0..4 {
                        output[(2 * k + m) % n] += approx[k] * h[m] + detail[k] * g[m];
                    }
                }
            }
        }
    }

    /// Time domain to coefficient domain.
    pub fn forward(&self, x: &[f64]) -> DVector<f64> {
        assert_eq!(x.len(), self.t, "input length mismatch");
        let mut data = x.to_vec();
        let mut scratch = vec![0.0; self.t];
        let mut n = self.t;
        while n >= 2 {
            scratch[..n].copy_from_slice(&data[..n]);
            let (approx, detail) = data[..n].split_at_mut(n / 2);
            self.analyze_pass(&scratch[..n], approx, detail);
            n /= 2;
        }
        DVector::from_vec(data)
    }

    /// Coefficient domain to time domain.
    pub fn inverse(&self, y: &[f64]) -> DVector<f64> {
        assert_eq!(y.len(), self.t, "input length mismatch");
        let mut data = y.to_vec();
        let mut scratch = vec![0.0; self.t];
        let mut n = 2;
        while n <= self.t {
            let (approx, detail) = data[..n].split_at(n / 2);
            self.synthesize_pass(approx, detail, &mut scratch[..n]);
            data[..n].copy_from_slice(&scratch[..n]);
            n *= 2;
        }
        DVector::from_vec(data)
    }

    /// Column `tau` of the coefficient-domain design block induced by one raw
    /// covariate curve: the transform of the pointwise product of the curve
    /// with the `tau`-th basis function. Costs O(T) per column.
    pub fn covariate_column(&self, x_raw: &[f64], tau: usize) -> DVector<f64> {
        assert_eq!(x_raw.len(), self.t, "covariate length mismatch");
        assert!(tau < self.t, "slot index out of range");
        let mut e = vec![0.0; self.t];
        e[tau] = 1.0;
        let mut basis_fn = self.inverse(&e);
        for (b, &x) in basis_fn.iter_mut().zip(x_raw) {
            *b *= x;
        }
        self.forward(basis_fn.as_slice())
    }
}
