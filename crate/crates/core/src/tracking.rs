//! Sampling-error model of a tracked pedestrian: detection probability,
//! noisy measurements, position deviation, quantization error and the
//! combined performance lower bound σ_p.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;
use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::estimator::CrlbEstimate;
use crate::geometry::SensingGeometry;

/// Default lower clamp applied to p_k before computing σ_q.
pub const DEFAULT_PK_FLOOR: f64 = 1e-3;

/// Probability that a target with radial velocity `v_r` separates from
/// static clutter, `erf(|V_R| / (√2 σ_VR))`.
pub fn detection_prob(v_r: f64, sigma_vr: f64) -> f64 {
    if !(sigma_vr > 0.0) {
        return if v_r == 0.0 { 0.0 } else { 1.0 };
    }
    erf(v_r.abs() / (SQRT_2 * sigma_vr)).clamp(0.0, 1.0)
}

/// Bernoulli draw of the valid-sample indicator.
pub fn sample_indicator<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    let p = p.clamp(0.0, 1.0);
    if p >= 1.0 {
        return true;
    }
    rng.gen::<f64>() < p
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasuredValues {
    pub d: f64,
    pub v_r: f64,
    pub phi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub t: f64,
    /// `None` when no valid sample was obtained at this step.
    pub values: Option<MeasuredValues>,
}

impl Measurement {
    pub fn valid(&self) -> bool {
        self.values.is_some()
    }
}

fn gaussian<R: Rng + ?Sized>(sigma: f64, rng: &mut R) -> f64 {
    if sigma > 0.0 {
        Normal::new(0.0, sigma).unwrap().sample(rng)
    } else {
        0.0
    }
}

pub fn draw_measurement<R: Rng + ?Sized>(
    truth: &SensingGeometry,
    crlb: &CrlbEstimate,
    p_k: f64,
    t: f64,
    rng: &mut R,
) -> Measurement {
    let values = sample_indicator(p_k, rng).then(|| MeasuredValues {
        d: truth.d + gaussian(crlb.sigma_d, rng),
        v_r: truth.v_r + gaussian(crlb.sigma_vr, rng),
        phi: truth.phi + gaussian(crlb.sigma_phi, rng),
    });
    Measurement { t, values }
}

/// Signed position deviation from range error `e_d` and angle error
/// `e_phi` via the law of cosines; the sign follows `e_d`.
pub fn position_deviation(d: f64, e_d: f64, e_phi: f64) -> Result<f64> {
    if !(d > 0.0) || !(d + e_d > 0.0) {
        return Err(Error::DegenerateGeometry(format!(
            "need D > 0 and D + e_D > 0, got D = {d}, e_D = {e_d}"
        )));
    }
    let r = d + e_d;
    // r² + d² − 2rd·cos(e) = e_d² + 2rd(1 − cos e) = e_d² + 4rd·sin²(e/2)
    let half = (e_phi / 2.0).sin();
    let mag = (e_d * e_d + 4.0 * r * d * half * half).sqrt();
    Ok(if e_d < 0.0 { -mag } else { mag })
}

/// Small-angle approximation `sqrt(σ_D² + D²σ_φ²)`.
pub fn sigma_m_small_angle(d: f64, sigma_d: f64, sigma_phi: f64) -> f64 {
    (sigma_d * sigma_d + d * d * sigma_phi * sigma_phi).sqrt()
}

/// Draws `n` signed position deviations.
pub fn deviation_samples<R: Rng + ?Sized>(
    d: f64,
    sigma_d: f64,
    sigma_phi: f64,
    n: usize,
    rng: &mut R,
) -> Result<Vec<f64>> {
    (0..n)
        .map(|_| {
            let e_d = gaussian(sigma_d, rng);
            let e_phi = gaussian(sigma_phi, rng);
            position_deviation(d, e_d, e_phi)
        })
        .collect()
}

/// Monte Carlo σ_M: sample std of `n_mc` signed deviations.
pub fn sigma_m<R: Rng + ?Sized>(
    d: f64,
    sigma_d: f64,
    sigma_phi: f64,
    n_mc: usize,
    rng: &mut R,
) -> Result<f64> {
    if n_mc < 1000 {
        return Err(Error::InvalidParameter(format!("need n_mc >= 1000, got {n_mc}")));
    }
    let xs = deviation_samples(d, sigma_d, sigma_phi, n_mc, rng)?;
    Ok(moments(&xs).std)
}

/// Sample moments used by the Gaussianity checks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub skew: f64,
    pub excess_kurtosis: f64,
}

pub fn moments(xs: &[f64]) -> Moments {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in xs {
        let d = x - mean;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    let var_pop = m2 / n;
    Moments {
        mean,
        std: (m2 / (n - 1.0)).sqrt(),
        skew: (m3 / n) / var_pop.powf(1.5),
        excess_kurtosis: (m4 / n) / (var_pop * var_pop) - 3.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuantizationMode {
    /// `sqrt(Δt²/(12 p²))`, a time in seconds reported as-is.
    Literal,
    /// Interval converted to distance via the walking speed, metres.
    #[default]
    Position,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CombineMode {
    /// Root-sum-square of σ_M and σ_q.
    #[default]
    Rss,
    /// σ_M + σ_q.
    LiteralSum,
}

pub fn quantization_sigma(delta_t: f64, p_k: f64, speed: f64, mode: QuantizationMode) -> Result<f64> {
    if !(delta_t > 0.0) || !(speed >= 0.0) || !(p_k <= 1.0) || p_k < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "bad quantization inputs: dt = {delta_t}, p = {p_k}, speed = {speed}"
        )));
    }
    if p_k == 0.0 {
        return Err(Error::ZeroProbability);
    }
    let interval = delta_t / p_k;
    Ok(match mode {
        QuantizationMode::Literal => interval / 12f64.sqrt(),
        QuantizationMode::Position => speed * interval / 12f64.sqrt(),
    })
}

pub fn performance_bound(sigma_m: f64, sigma_q: f64, mode: CombineMode) -> f64 {
    match mode {
        CombineMode::Rss => sigma_m.hypot(sigma_q),
        CombineMode::LiteralSum => sigma_m + sigma_q,
    }
}

/// One row of the σ_p time series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceBound {
    pub t: f64,
    pub p_k: f64,
    pub sigma_m: f64,
    pub sigma_q: f64,
    pub sigma_p: f64,
    pub quantization_mode: QuantizationMode,
    pub combine_mode: CombineMode,
}

/// Settings for assembling σ_p from a CRLB and the geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoundSettings {
    pub delta_t: f64,
    pub p_floor: f64,
    pub quantization_mode: QuantizationMode,
    pub combine_mode: CombineMode,
}

impl Default for BoundSettings {
    fn default() -> Self {
        Self {
            delta_t: 0.05,
            p_floor: DEFAULT_PK_FLOOR,
            quantization_mode: QuantizationMode::Position,
            combine_mode: CombineMode::Rss,
        }
    }
}

/// σ_p for a target at `geom` moving at `speed`, measured with `crlb`.
/// σ_M uses the small-angle form.
pub fn bound_at(
    t: f64,
    geom: &SensingGeometry,
    speed: f64,
    crlb: &CrlbEstimate,
    settings: &BoundSettings,
) -> Result<PerformanceBound> {
    let p_k = detection_prob(geom.v_r, crlb.sigma_vr);
    let sigma_m = sigma_m_small_angle(geom.d, crlb.sigma_d, crlb.sigma_phi);
    let sigma_q = quantization_sigma(
        settings.delta_t,
        p_k.max(settings.p_floor),
        speed,
        settings.quantization_mode,
    )?;
    Ok(PerformanceBound {
        t,
        p_k,
        sigma_m,
        sigma_q,
        sigma_p: performance_bound(sigma_m, sigma_q, settings.combine_mode),
        quantization_mode: settings.quantization_mode,
        combine_mode: settings.combine_mode,
    })
}

pub fn write_bounds_csv<W: std::io::Write>(w: W, rows: &[PerformanceBound]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "p_k", "sigma_m", "sigma_q", "sigma_p", "q_mode", "combine_mode"])?;
    for r in rows {
        out.write_record([
            format!("{:.3}", r.t),
            format!("{:.9e}", r.p_k),
            format!("{:.9e}", r.sigma_m),
            format!("{:.9e}", r.sigma_q),
            format!("{:.9e}", r.sigma_p),
            format!("{:?}", r.quantization_mode).to_lowercase(),
            format!("{:?}", r.combine_mode).to_lowercase(),
        ])?;
    }
    out.flush()?;
    Ok(())
}
