//! Moment-based Nakagami estimation and the parameters derived from it.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{Error, Result};

/// Lower clamp for the shape estimate.
pub const M_MIN: f64 = 1e-3;
/// Upper clamp; also the value reported for zero-variance samples.
pub const M_MAX: f64 = 1e3;
/// Fewest samples accepted by [`estimate_nakagami`].
pub const MIN_SAMPLES: usize = 16;

/// Shape `m` and scale `omega` (mean intensity).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NakagamiParams {
    pub m: f64,
    pub omega: f64,
}

impl NakagamiParams {
    pub fn new(m: f64, omega: f64) -> Result<Self> {
        if !(M_MIN..=M_MAX).contains(&m) {
            return Err(Error::invalid(format!("Nakagami m = {m} outside [{M_MIN}, {M_MAX}]")));
        }
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::invalid(format!("Nakagami omega = {omega} must be positive")));
        }
        Ok(NakagamiParams { m, omega })
    }

    /// Estimate from power sums `sum R^2`, `sum R^4` over `n` samples.
    ///
    /// `omega = E[R^2]`, `m = omega^2 / Var(R^2)` with the population variance.
    /// Zero or negative computed variance reports `m = M_MAX`. Returns `None`
    /// when every sample is zero.
    #[inline]
    pub fn from_power_sums(sum_r2: f64, sum_r4: f64, n: usize) -> Option<NakagamiParams> {
        let inv_n = 1.0 / n as f64;
        let omega = sum_r2 * inv_n;
        if !(omega > 0.0) {
            return None;
        }
        let var = sum_r4 * inv_n - omega * omega;
        let m = if var > 0.0 {
            (omega * omega / var).clamp(M_MIN, M_MAX)
        } else {
            M_MAX
        };
        Some(NakagamiParams { m, omega })
    }
}

/// Moment estimate of the Nakagami parameters of envelope samples.
pub fn estimate_nakagami(samples: &[f64]) -> Result<NakagamiParams> {
    estimate_with_min_samples(samples, MIN_SAMPLES)
}

/// [`estimate_nakagami`] with a caller-chosen sample floor (at least 1).
pub fn estimate_with_min_samples(samples: &[f64], min_samples: usize) -> Result<NakagamiParams> {
    if samples.len() < min_samples.max(1) {
        return Err(Error::invalid(format!(
            "Nakagami estimate needs at least {} samples, got {}",
            min_samples.max(1),
            samples.len()
        )));
    }
    if let Some(v) = samples.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(Error::invalid(format!("envelope sample {v} is not a non-negative real")));
    }
    let (s2, s4) = power_sums(samples.iter().copied());
    NakagamiParams::from_power_sums(s2, s4, samples.len())
        .ok_or_else(|| Error::invalid("all envelope samples are zero"))
}

/// Sequential `(sum R^2, sum R^4)`.
#[inline]
pub fn power_sums(samples: impl Iterator<Item = f64>) -> (f64, f64) {
    samples.fold((0.0, 0.0), |(s2, s4), r| {
        let r2 = r * r;
        (s2 + r2, s4 + r2 * r2)
    })
}

/// Nakagami density at envelope amplitude `a >= 0`.
pub fn nakagami_pdf(a: f64, p: NakagamiParams) -> f64 {
    if a < 0.0 {
        return 0.0;
    }
    if a == 0.0 {
        // a^(2m-1): infinite for m < 1/2, finite for m == 1/2, zero above.
        return match (2.0 * p.m - 1.0).partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Less) => f64::INFINITY,
            Some(std::cmp::Ordering::Equal) => (2.0 * (p.m / p.omega).powf(p.m) / ln_gamma(p.m).exp()).max(0.0),
            _ => 0.0,
        };
    }
    let log = std::f64::consts::LN_2 + p.m * (p.m.ln() - p.omega.ln()) - ln_gamma(p.m)
        + (2.0 * p.m - 1.0) * a.ln()
        - p.m * a * a / p.omega;
    log.exp()
}

/// Nakagami distribution function, via the regularized lower incomplete gamma
/// `P(m, m r^2 / omega)`.
pub fn nakagami_cdf(r: f64, p: NakagamiParams) -> f64 {
    if r <= 0.0 {
        return 0.0;
    }
    let x = p.m * r * r / p.omega;
    if !x.is_finite() {
        return 1.0;
    }
    gamma_lr(p.m, x).clamp(0.0, 1.0)
}

/// Pre-alpha and the four views of the (possibly imaginary) alpha parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaComponents {
    pub pre_alpha: f64,
    pub alpha_real: f64,
    pub alpha_imag: f64,
    pub alpha_abs: f64,
    pub alpha_phase: f64,
}

/// `pre_alpha = omega (1 - m) / (2 m)`, `alpha = sqrt(pre_alpha) / 2` on the
/// principal branch: real for `m <= 1`, purely imaginary with non-negative
/// imaginary part for `m > 1`. The phase at `alpha = 0` is 0.
#[inline]
pub fn derive_alpha_set(p: NakagamiParams) -> AlphaComponents {
    let pre_alpha = p.omega * (1.0 - p.m) / (2.0 * p.m);
    if pre_alpha >= 0.0 {
        let a = 0.5 * pre_alpha.sqrt();
        AlphaComponents {
            pre_alpha,
            alpha_real: a,
            alpha_imag: 0.0,
            alpha_abs: a,
            alpha_phase: 0.0,
        }
    } else {
        let a = 0.5 * (-pre_alpha).sqrt();
        AlphaComponents {
            pre_alpha,
            alpha_real: 0.0,
            alpha_imag: a,
            alpha_abs: a,
            alpha_phase: FRAC_PI_2,
        }
    }
}

/// K-distribution parameters equivalent to a Nakagami fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KParams {
    /// Effective number of scatterers `M = 2m / (1 - m)`; negative above the Rayleigh point.
    pub effective_scatterers: f64,
    /// Scale `b`; `None` when `m > 1`, where it is not real.
    pub scale_b: Option<f64>,
}

pub fn k_params(p: NakagamiParams) -> Result<KParams> {
    if (p.m - 1.0).abs() <= 1e-9 {
        return Err(Error::invalid("K-equivalence undefined at Rayleigh point (m = 1)"));
    }
    let effective_scatterers = 2.0 * p.m / (1.0 - p.m);
    let scale_b = (p.m < 1.0).then(|| 2.0 * (2.0 * p.m / (p.omega * (1.0 - p.m))).sqrt());
    Ok(KParams {
        effective_scatterers,
        scale_b,
    })
}
