//! Ambiguity function, Fisher information and Cramér-Rao bounds for
//! distance D and radial velocity V_R of a monostatic sensing waveform.
//!
//! Conventions shared by the closed form and the finite-difference oracle:
//!
//! * delay lag `k` is in samples; a distance offset D maps to `k = 2 D f_s / c`
//! * a radial velocity V_R maps to the Doppler shift `f_v = 2 f_c V_R / c`
//!   (Hz), applied as the phase `2 pi f_v n T` on sample `n` (1-based)
//! * the sample before the first one is zero when forming `s[n] - s[n-1]`
//!
//! With those, the closed-form entries are
//!
//! ```text
//! J_DD = 2 gamma (2 f_s / c)^2            * sum |s[n] - s[n-1]|^2
//! J_VV = 2 gamma (4 pi f_c T / c)^2       * sum n^2 |s[n]|^2
//! J_DV = -2 gamma (2 f_s / c)(4 pi f_c T / c) * Im sum n (s[n] - s[n-1]) s*[n]
//! ```
//!
//! which are the negated curvatures of the in-phase matched-filter response
//! `Re chi(k, f_v)` at the origin, scaled by `2 gamma`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::signal::ComplexSignal;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Default fixed angle-estimation bound in rad.
pub const DEFAULT_SIGMA_PHI: f64 = 0.02;

/// Symmetric 2x2 Fisher information in (D, V_R).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FimMatrix {
    /// 1/m^2
    pub j_dd: f64,
    /// 1/(m/s)^2
    pub j_vv: f64,
    /// 1/(m * m/s)
    pub j_dv: f64,
    /// Linear SNR the matrix was computed at.
    pub gamma: f64,
}

impl FimMatrix {
    pub fn determinant(&self) -> f64 {
        self.j_dd * self.j_vv - self.j_dv * self.j_dv
    }

    /// Same matrix re-evaluated at another SNR (the FIM is linear in gamma).
    pub fn at_gamma(&self, gamma: f64) -> FimMatrix {
        let r = gamma / self.gamma;
        FimMatrix {
            j_dd: self.j_dd * r,
            j_vv: self.j_vv * r,
            j_dv: self.j_dv * r,
            gamma,
        }
    }
}

/// Lower bounds on the standard deviation of D, V_R and look angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrlbEstimate {
    /// m
    pub sigma_d: f64,
    /// m/s
    pub sigma_vr: f64,
    /// rad
    pub sigma_phi: f64,
    pub gamma: f64,
}

impl CrlbEstimate {
    pub fn crb_d(&self) -> f64 {
        self.sigma_d * self.sigma_d
    }

    pub fn crb_vr(&self) -> f64 {
        self.sigma_vr * self.sigma_vr
    }
}

/// Matched-filter response sum_n s[n] s*[n+k] exp(j 2 pi f_v n T), out-of-range
/// samples treated as zero.
pub fn ambiguity_complex(signal: &ComplexSignal, k: isize, f_v: f64) -> Result<Complex64> {
    let n = signal.len() as isize;
    if k.abs() >= n {
        return Err(Error::LagOutOfRange {
            lag: k,
            len: signal.len(),
        });
    }
    let s = &signal.samples;
    let step = 2.0 * PI * f_v / signal.sample_rate;
    let lo = 0.max(-k) as usize;
    let hi = n.min(n - k) as usize;
    let acc = (lo..hi)
        .map(|i| {
            let j = (i as isize + k) as usize;
            let rot = if f_v == 0.0 {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::from_polar(1.0, step * (i + 1) as f64)
            };
            s[i] * s[j].conj() * rot
        })
        .sum();
    Ok(acc)
}

/// Ambiguity magnitude |chi(k, f_v)|.
pub fn ambiguity(signal: &ComplexSignal, k: isize, f_v: f64) -> Result<f64> {
    ambiguity_complex(signal, k, f_v).map(|c| c.norm())
}

/// Half-power (-3 dB) delay half-width of the zero-Doppler cut, in seconds,
/// with linear interpolation between lags.
pub fn delay_width_3db(signal: &ComplexSignal) -> Result<f64> {
    let peak = ambiguity(signal, 0, 0.0)?;
    if peak == 0.0 {
        return Err(Error::DegenerateWaveform("zero-energy waveform".into()));
    }
    let level = peak / 2f64.sqrt();
    let mut prev = peak;
    for k in 1..signal.len() as isize {
        let v = ambiguity(signal, k, 0.0)?;
        if v < level {
            let frac = (prev - level) / (prev - v);
            return Ok(((k - 1) as f64 + frac) / signal.sample_rate);
        }
        prev = v;
    }
    Err(Error::DegenerateWaveform(
        "delay cut never drops 3 dB below its peak".into(),
    ))
}

/// The three literal sums behind the closed-form FIM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FimSums {
    /// sum |s[n] - s[n-1]|^2 including the leading boundary term |s[1]|^2
    pub delay: f64,
    /// the same sum without the boundary term
    pub delay_interior: f64,
    /// sum n^2 |s[n]|^2
    pub doppler: f64,
    /// Im sum n (s[n] - s[n-1]) s*[n]
    pub cross: f64,
}

pub fn fim_sums(samples: &[Complex64]) -> FimSums {
    let mut delay_interior = 0.0;
    let mut doppler = 0.0;
    let mut cross = 0.0;
    let mut prev = Complex64::new(0.0, 0.0);
    for (i, &s) in samples.iter().enumerate() {
        let n = (i + 1) as f64;
        let diff = s - prev;
        if i > 0 {
            delay_interior += diff.norm_sqr();
        }
        doppler += n * n * s.norm_sqr();
        cross += n * (diff * s.conj()).im;
        prev = s;
    }
    let boundary = samples.first().map_or(0.0, |s| s.norm_sqr());
    FimSums {
        delay: delay_interior + boundary,
        delay_interior,
        doppler,
        cross,
    }
}

/// Chain-rule factors (d k / d D, d phase-rate / d V_R) for a sample rate and carrier.
fn chain_factors(sample_rate: f64, f_c: f64) -> (f64, f64) {
    let delay = 2.0 * sample_rate / SPEED_OF_LIGHT;
    let doppler = 4.0 * PI * f_c / (SPEED_OF_LIGHT * sample_rate);
    (delay, doppler)
}

/// Closed-form Fisher information of `signal` at carrier `f_c` (Hz) and linear SNR `gamma`.
pub fn fim(signal: &ComplexSignal, f_c: f64, gamma: f64) -> Result<FimMatrix> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "SNR must be positive, got {gamma}"
        )));
    }
    if signal.len() < 2 {
        return Err(Error::DegenerateWaveform(format!(
            "need at least 2 samples, got {}",
            signal.len()
        )));
    }
    let sums = fim_sums(&signal.samples);
    let energy: f64 = signal.samples.iter().map(|s| s.norm_sqr()).sum();
    if !(energy > 0.0) || sums.delay_interior <= 1e-12 * energy {
        return Err(Error::DegenerateWaveform(
            "waveform has no delay curvature beyond the boundary term".into(),
        ));
    }
    let (kd, kv) = chain_factors(signal.sample_rate, f_c);
    let m = FimMatrix {
        j_dd: 2.0 * gamma * kd * kd * sums.delay,
        j_vv: 2.0 * gamma * kv * kv * sums.doppler,
        j_dv: -2.0 * gamma * kd * kv * sums.cross,
        gamma,
    };
    if !(m.j_dd > 0.0 && m.j_vv > 0.0) {
        return Err(Error::DegenerateWaveform(
            "non-positive diagonal Fisher information".into(),
        ));
    }
    Ok(m)
}

/// Inverts the 2x2 FIM; the angle bound is the fixed `sigma_phi_fixed`.
pub fn crlb(fim: &FimMatrix, sigma_phi_fixed: f64) -> Result<CrlbEstimate> {
    let det = fim.determinant();
    if !(det > 1e-14 * fim.j_dd.abs() * fim.j_vv.abs()) || !det.is_finite() {
        return Err(Error::SingularFim(det));
    }
    let crb_d = fim.j_vv / det;
    let crb_v = fim.j_dd / det;
    Ok(CrlbEstimate {
        sigma_d: crb_d.sqrt(),
        sigma_vr: crb_v.sqrt(),
        sigma_phi: sigma_phi_fixed,
        gamma: fim.gamma,
    })
}

/// Convenience: closed-form FIM followed by inversion.
pub fn crlb_for(signal: &ComplexSignal, f_c: f64, gamma: f64, sigma_phi: f64) -> Result<CrlbEstimate> {
    crlb(&fim(signal, f_c, gamma)?, sigma_phi)
}

/// Relative change below which a halved step is considered converged.
pub const ORACLE_STEP_TOLERANCE: f64 = 0.005;

/// Independent check of [`fim`]: central finite differences of the in-phase
/// ambiguity response around the origin, mapped through the D and V_R chain
/// rule. Delay differences use the one-sample lag grid the response is
/// defined on; the Doppler step is halved until the estimate moves by less
/// than [`ORACLE_STEP_TOLERANCE`].
pub fn fim_numeric_oracle(signal: &ComplexSignal, f_c: f64, gamma: f64) -> Result<FimMatrix> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "SNR must be positive, got {gamma}"
        )));
    }
    if signal.len() < 2 {
        return Err(Error::DegenerateWaveform(format!(
            "need at least 2 samples, got {}",
            signal.len()
        )));
    }
    let re = |k: isize, f: f64| ambiguity_complex(signal, k, f).map(|c| c.re);
    let origin = re(0, 0.0)?;

    let d2_delay = re(1, 0.0)? + re(-1, 0.0)? - 2.0 * origin;

    // initial Doppler step: 0.2 rad of accumulated phase across the pulse
    let h0 = 0.2 / (2.0 * PI * signal.duration());
    let d2_doppler = converge(h0, |h| {
        Ok((re(0, h)? + re(0, -h)? - 2.0 * origin) / (h * h))
    })?;
    let d2_cross = converge(h0, |h| {
        Ok((re(1, h)? - re(1, -h)? - re(-1, h)? + re(-1, -h)?) / (4.0 * h))
    })?;

    let kd = 2.0 * signal.sample_rate / SPEED_OF_LIGHT;
    let kv = 2.0 * f_c / SPEED_OF_LIGHT;
    Ok(FimMatrix {
        j_dd: -2.0 * gamma * kd * kd * d2_delay,
        j_vv: -2.0 * gamma * kv * kv * d2_doppler,
        j_dv: -2.0 * gamma * kd * kv * d2_cross,
        gamma,
    })
}

fn converge<F: Fn(f64) -> Result<f64>>(h0: f64, estimate: F) -> Result<f64> {
    let mut h = h0;
    let mut prev = estimate(h)?;
    for _ in 0..30 {
        h /= 2.0;
        let next = estimate(h)?;
        let scale = next.abs().max(prev.abs());
        if scale == 0.0 || (next - prev).abs() <= ORACLE_STEP_TOLERANCE * scale {
            return Ok(next);
        }
        prev = next;
    }
    Err(Error::NonConvergence(format!(
        "step halved to {h:e} without settling"
    )))
}
