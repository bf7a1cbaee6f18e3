//! Street-canyon path loss (LOS/NLOS), small-scale fading and link budgets
//! for the direct (initiator -> target) and reflected (initiator -> target
//! -> initiator) paths.
//!
//! Path-loss laws take the distance in metres and the carrier in GHz.

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::signal::ComplexSignal;

/// Shadowing variance of the LOS law, dB^2.
pub const LOS_SHADOW_VAR_DB2: f64 = 4.0;
/// Shadowing variance of the NLOS law, dB^2.
pub const NLOS_SHADOW_VAR_DB2: f64 = 7.82;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChannelCondition {
    Los,
    Nlos,
}

impl ChannelCondition {
    pub fn as_str(&self) -> &'static str {
        match self {
            ChannelCondition::Los => "LOS",
            ChannelCondition::Nlos => "NLOS",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FadingKind {
    Awgn,
    Rayleigh,
    Rician { k_factor: f64 },
}

impl FadingKind {
    pub fn name(&self) -> String {
        match self {
            FadingKind::Awgn => "awgn".into(),
            FadingKind::Rayleigh => "rayleigh".into(),
            FadingKind::Rician { k_factor } => format!("rician(K={k_factor})"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let FadingKind::Rician { k_factor } = self {
            if !(*k_factor > 0.0) || !k_factor.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "Rician K-factor must be positive, got {k_factor}"
                )));
            }
        }
        Ok(())
    }

    /// One flat block gain with E|g|^2 = 1.
    pub fn draw_gain<R: Rng + ?Sized>(&self, rng: &mut R) -> Complex64 {
        match *self {
            FadingKind::Awgn => Complex64::new(1.0, 0.0),
            FadingKind::Rayleigh => complex_gaussian(rng),
            FadingKind::Rician { k_factor } => {
                let los = (k_factor / (k_factor + 1.0)).sqrt();
                let theta = rng.gen_range(0.0..2.0 * PI);
                Complex64::from_polar(los, theta)
                    + complex_gaussian(rng) * (1.0 / (k_factor + 1.0)).sqrt()
            }
        }
    }
}

fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

/// Multipath and time-variation parameters of the fading channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FadingProfile {
    /// Rayleigh multipath taps.
    pub taps: usize,
    /// Power decay per tap, dB.
    pub tap_decay_db: f64,
    /// Tap spacing in samples.
    pub tap_spacing: usize,
    /// Maximum Doppler of the scattered components in Hz; 0 keeps every
    /// gain constant over the segment.
    pub max_doppler_hz: f64,
}

impl Default for FadingProfile {
    fn default() -> Self {
        Self {
            taps: 1,
            tap_decay_db: 3.0,
            tap_spacing: 2,
            max_doppler_hz: 250.0,
        }
    }
}

impl FadingProfile {
    pub fn block_constant() -> Self {
        Self {
            max_doppler_hz: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.taps == 0 {
            return Err(Error::InvalidParameter("need at least one tap".into()));
        }
        if !(self.max_doppler_hz >= 0.0) || !self.max_doppler_hz.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "max Doppler must be non-negative, got {}",
                self.max_doppler_hz
            )));
        }
        Ok(())
    }

    /// Normalized tap powers, summing to one.
    pub fn tap_powers(&self) -> Vec<f64> {
        let raw: Vec<f64> = (0..self.taps)
            .map(|i| 10f64.powf(-self.tap_decay_db * i as f64 / 10.0))
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|p| p / total).collect()
    }
}

const SOS_TERMS: usize = 32;

/// Unit-mean-power scattered gain: a Gaussian-weighted sum of sinusoids with
/// Jakes-distributed Doppler frequencies.
struct ScatterProcess {
    amps: [Complex64; SOS_TERMS],
    freqs: [f64; SOS_TERMS],
}

impl ScatterProcess {
    fn new<R: Rng + ?Sized>(max_doppler: f64, rng: &mut R) -> Self {
        let mut amps = [Complex64::new(0.0, 0.0); SOS_TERMS];
        let mut freqs = [0.0; SOS_TERMS];
        let norm = (SOS_TERMS as f64).sqrt();
        for (a, f) in amps.iter_mut().zip(freqs.iter_mut()) {
            let phase = rng.gen_range(0.0..2.0 * PI);
            *a = complex_gaussian(rng) * Complex64::from_polar(1.0 / norm, phase);
            *f = max_doppler * rng.gen_range(0.0..2.0 * PI).cos();
        }
        Self { amps, freqs }
    }

    fn at(&self, t: f64) -> Complex64 {
        self.amps
            .iter()
            .zip(self.freqs.iter())
            .map(|(a, f)| a * Complex64::from_polar(1.0, 2.0 * PI * f * t))
            .sum()
    }

    /// Samples the process on a coarse grid for linear interpolation.
    fn render(&self, len: usize, sample_rate: f64, max_doppler: f64) -> GainTrack {
        let step = if max_doppler > 0.0 {
            ((sample_rate / (64.0 * max_doppler)).floor() as usize).clamp(1, len.max(1))
        } else {
            len.max(1)
        };
        let knots = (0..=len / step + 1)
            .map(|k| self.at((k * step) as f64 / sample_rate))
            .collect();
        GainTrack { knots, step }
    }
}

/// Piecewise-linear gain trajectory evaluated per sample on demand.
struct GainTrack {
    knots: Vec<Complex64>,
    step: usize,
}

impl GainTrack {
    fn constant(g: Complex64) -> Self {
        Self { knots: vec![g, g], step: usize::MAX }
    }

    #[inline]
    fn at(&self, i: usize) -> Complex64 {
        if self.step == usize::MAX {
            return self.knots[0];
        }
        let k = i / self.step;
        let u = (i % self.step) as f64 / self.step as f64;
        self.knots[k] * (1.0 - u) + self.knots[k + 1] * u
    }
}

fn gain_track<R: Rng + ?Sized>(
    len: usize,
    sample_rate: f64,
    max_doppler: f64,
    rng: &mut R,
) -> GainTrack {
    if max_doppler > 0.0 {
        ScatterProcess::new(max_doppler, rng).render(len, sample_rate, max_doppler)
    } else {
        GainTrack::constant(complex_gaussian(rng))
    }
}

/// Passes `signal` through the fading channel. AWGN returns the input
/// unchanged. Rayleigh is a tapped delay line of independent diffuse taps.
/// Rician is a specular LOS ray followed by the same diffuse taps, delayed
/// by one tap spacing and carrying 1/(K+1) of the power. All kinds preserve
/// mean power in expectation.
pub fn apply_fading<R: Rng + ?Sized>(
    signal: &ComplexSignal,
    kind: FadingKind,
    profile: &FadingProfile,
    rng: &mut R,
) -> Result<ComplexSignal> {
    kind.validate()?;
    profile.validate()?;
    if signal.is_empty() {
        return Err(Error::InvalidParameter("cannot fade an empty signal".into()));
    }
    let fs = signal.sample_rate;
    let x = &signal.samples;
    let samples = match kind {
        FadingKind::Awgn => x.clone(),
        FadingKind::Rician { k_factor } => {
            let los = Complex64::from_polar(
                (k_factor / (k_factor + 1.0)).sqrt(),
                rng.gen_range(0.0..2.0 * PI),
            );
            let mut out: Vec<Complex64> = x.iter().map(|s| s * los).collect();
            let diffuse = 1.0 / (k_factor + 1.0);
            add_diffuse_taps(x, &mut out, fs, profile, profile.tap_spacing, diffuse, rng);
            out
        }
        FadingKind::Rayleigh => {
            let mut out = vec![Complex64::new(0.0, 0.0); x.len()];
            add_diffuse_taps(x, &mut out, fs, profile, 0, 1.0, rng);
            out
        }
    };
    ComplexSignal::new(samples, fs)
}

/// Adds the diffuse taps of `profile` to `out`, the first delayed by
/// `first_delay` samples, with total mean power `total`.
fn add_diffuse_taps<R: Rng + ?Sized>(
    x: &[Complex64],
    out: &mut [Complex64],
    sample_rate: f64,
    profile: &FadingProfile,
    first_delay: usize,
    total: f64,
    rng: &mut R,
) {
    let len = x.len();
    for (i, p) in profile.tap_powers().into_iter().enumerate() {
        let delay = first_delay + i * profile.tap_spacing;
        let track = gain_track(len, sample_rate, profile.max_doppler_hz, rng);
        let amp = (p * total).sqrt();
        for n in delay..len {
            let v = x[n - delay];
            // pulse trains are mostly silent; skip the gain there
            if v.re != 0.0 || v.im != 0.0 {
                out[n] += v * track.at(n) * amp;
            }
        }
    }
}

fn check_distance(d: f64) -> Result<()> {
    if !(d >= 1.0) || !d.is_finite() {
        return Err(Error::Domain(format!("distance must be >= 1 m, got {d}")));
    }
    Ok(())
}

/// Shadowing-free LOS street-canyon loss, dB.
pub fn pathloss_los_mean(d: f64, f_c_ghz: f64) -> Result<f64> {
    check_distance(d)?;
    if !(f_c_ghz > 0.0) {
        return Err(Error::Domain(format!("carrier must be positive, got {f_c_ghz} GHz")));
    }
    Ok(32.4 + 21.0 * d.log10() + 20.0 * f_c_ghz.log10())
}

/// Shadowing-free NLOS street-canyon loss, dB, for terminal height `h` in m.
pub fn pathloss_nlos_mean(d: f64, f_c_ghz: f64, h: f64) -> Result<f64> {
    check_distance(d)?;
    if !(f_c_ghz > 0.0) {
        return Err(Error::Domain(format!("carrier must be positive, got {f_c_ghz} GHz")));
    }
    if !(h >= 0.0) {
        return Err(Error::Domain(format!("height must be non-negative, got {h}")));
    }
    Ok(35.3 * d.log10() + 22.4 + 21.3 * f_c_ghz.log10() - 0.3 * (h - 1.5))
}

/// LOS loss with a fresh N(0, 4 dB^2) shadowing draw.
pub fn pathloss_los<R: Rng + ?Sized>(d: f64, f_c_ghz: f64, rng: &mut R) -> Result<f64> {
    Ok(pathloss_los_mean(d, f_c_ghz)? + shadowing(ChannelCondition::Los, rng))
}

/// NLOS loss with a fresh N(0, 7.82 dB^2) shadowing draw.
pub fn pathloss_nlos<R: Rng + ?Sized>(d: f64, f_c_ghz: f64, h: f64, rng: &mut R) -> Result<f64> {
    Ok(pathloss_nlos_mean(d, f_c_ghz, h)? + shadowing(ChannelCondition::Nlos, rng))
}

pub fn pathloss_mean(condition: ChannelCondition, d: f64, f_c_ghz: f64, h: f64) -> Result<f64> {
    match condition {
        ChannelCondition::Los => pathloss_los_mean(d, f_c_ghz),
        ChannelCondition::Nlos => pathloss_nlos_mean(d, f_c_ghz, h),
    }
}

/// One shadowing draw in dB for `condition`.
pub fn shadowing<R: Rng + ?Sized>(condition: ChannelCondition, rng: &mut R) -> f64 {
    let var = match condition {
        ChannelCondition::Los => LOS_SHADOW_VAR_DB2,
        ChannelCondition::Nlos => NLOS_SHADOW_VAR_DB2,
    };
    Normal::new(0.0, var.sqrt()).unwrap().sample(rng)
}

/// Reflection compensation obtained from the average NLOS - LOS gap at 25 m
/// and 50 m, sign-flipped so it reads as a loss (dB).
pub fn beta_r_from_pathloss_gap(f_c_ghz: f64, h: f64) -> Result<f64> {
    let mut gap = 0.0;
    for d in [25.0, 50.0] {
        gap += pathloss_nlos_mean(d, f_c_ghz, h)? - pathloss_los_mean(d, f_c_ghz)?;
    }
    Ok(-gap / 2.0)
}

/// Linear power sum of two dB(m) quantities; `-inf` acts as zero power.
pub fn db_power_sum(a: f64, b: f64) -> f64 {
    10.0 * (10f64.powf(a / 10.0) + 10f64.powf(b / 10.0)).log10()
}

/// System-level link parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinkParams {
    /// Initiator transmit power T_r, dBm.
    pub tx_power_dbm: f64,
    /// Receiver noise floor N_f, dBm.
    pub noise_floor_dbm: f64,
    /// Reflection compensation beta_r, dB.
    pub beta_r_db: f64,
    /// Carrier, GHz.
    pub carrier_ghz: f64,
    /// Terminal height for the NLOS law, m.
    pub height_m: f64,
    /// External interference power, dBm (`-inf` when absent).
    pub interference_dbm: f64,
    pub shadowing: bool,
}

impl Default for LinkParams {
    fn default() -> Self {
        Self {
            tx_power_dbm: 15.0,
            noise_floor_dbm: -92.0,
            beta_r_db: -6.0,
            carrier_ghz: 5.8,
            height_m: 1.5,
            interference_dbm: f64::NEG_INFINITY,
            shadowing: true,
        }
    }
}

/// Large-scale link state for one assessment interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LinkState {
    pub distance: f64,
    pub condition: ChannelCondition,
    /// Direct-path loss including shadowing, dB.
    pub pathloss_db: f64,
    /// Round-trip loss L(2d) including shadowing, dB.
    pub reflected_pathloss_db: f64,
    pub shadowing_db: f64,
    pub fading_gain: Complex64,
    /// Sensing power received at the target, dBm.
    pub rx_power_target_dbm: f64,
    /// Echo power received back at the initiator, dBm.
    pub rx_power_initiator_dbm: f64,
    pub sinr_at_target_db: f64,
    pub sinr_at_initiator_db: f64,
}

impl LinkState {
    /// The target's estimate of the initiator SINR: its own SINR plus beta_r.
    pub fn compensated_estimate_db(&self, beta_r_db: f64) -> f64 {
        self.sinr_at_target_db + beta_r_db
    }
}

/// Direct and reflected link budget at distance `d` under `condition`.
/// The reflected path uses L(2d) and shares the interval's shadowing draw.
pub fn link_budget<R: Rng + ?Sized>(
    params: &LinkParams,
    d: f64,
    condition: ChannelCondition,
    fading: FadingKind,
    rng: &mut R,
) -> Result<LinkState> {
    let shadow = if params.shadowing {
        shadowing(condition, rng)
    } else {
        0.0
    };
    let direct = pathloss_mean(condition, d, params.carrier_ghz, params.height_m)? + shadow;
    let reflected =
        pathloss_mean(condition, 2.0 * d, params.carrier_ghz, params.height_m)? + shadow;
    let floor = db_power_sum(params.noise_floor_dbm, params.interference_dbm);
    let rx_target = params.tx_power_dbm - direct;
    let rx_initiator = params.tx_power_dbm - reflected;
    Ok(LinkState {
        distance: d,
        condition,
        pathloss_db: direct,
        reflected_pathloss_db: reflected,
        shadowing_db: shadow,
        fading_gain: fading.draw_gain(rng),
        rx_power_target_dbm: rx_target,
        rx_power_initiator_dbm: rx_initiator,
        sinr_at_target_db: rx_target - floor,
        sinr_at_initiator_db: rx_initiator - floor,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn los_examples() {
        assert!((pathloss_los_mean(25.0, 5.8).unwrap() - 77.03).abs() < 0.005);
        assert!((pathloss_los_mean(1.0, 1.0).unwrap() - 32.4).abs() < 1e-12);
        assert!(matches!(pathloss_los_mean(0.5, 5.8), Err(Error::Domain(_))));
    }

    #[test]
    fn nlos_examples() {
        // 35.3*1.39794 + 22.4 + 21.3*0.76343
        assert!((pathloss_nlos_mean(25.0, 5.8, 1.5).unwrap() - 88.008).abs() < 0.005);
        let a = pathloss_nlos_mean(25.0, 5.8, 1.5).unwrap();
        let b = 35.3 * 25f64.log10() + 22.4 + 21.3 * 5.8f64.log10();
        assert_eq!(a, b);
        for d in [25.0, 50.0] {
            assert!(pathloss_nlos_mean(d, 5.8, 1.5).unwrap() > pathloss_los_mean(d, 5.8).unwrap());
        }
        assert!(pathloss_nlos_mean(10.0, 5.8, -1.0).is_err());
    }

    #[test]
    fn pathloss_nonnegative_and_monotone() {
        let mut prev = (0.0, 0.0);
        for i in 0..200 {
            let d = 1.0 + i as f64 * 0.5;
            let l = pathloss_los_mean(d, 5.8).unwrap();
            let n = pathloss_nlos_mean(d, 5.8, 1.5).unwrap();
            assert!(l >= 0.0 && n >= 0.0);
            if i > 0 {
                assert!(l > prev.0 && n > prev.1);
            }
            prev = (l, n);
        }
    }

    #[test]
    fn shadowing_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| pathloss_los(25.0, 5.8, &mut rng).unwrap() - pathloss_los_mean(25.0, 5.8).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((3.8..=4.2).contains(&var), "var {var}");

        let draws: Vec<f64> = (0..100_000)
            .map(|_| shadowing(ChannelCondition::Nlos, &mut rng))
            .collect();
        let var = draws.iter().map(|x| x * x).sum::<f64>() / draws.len() as f64;
        assert!((var - 7.82).abs() < 0.2, "var {var}");
    }

    #[test]
    fn fading_gain_power_is_unity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for kind in [
            FadingKind::Rayleigh,
            FadingKind::Rician { k_factor: 2.0 },
            FadingKind::Awgn,
        ] {
            let n = 100_000;
            let p = (0..n).map(|_| kind.draw_gain(&mut rng).norm_sqr()).sum::<f64>() / n as f64;
            assert!((0.99..=1.01).contains(&p), "{kind:?}: {p}");
        }
    }

    #[test]
    fn strong_rician_concentrates() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let k = FadingKind::Rician { k_factor: 100.0 };
        let mags: Vec<f64> = (0..10_000).map(|_| k.draw_gain(&mut rng).norm()).collect();
        let mean = mags.iter().sum::<f64>() / mags.len() as f64;
        let std = (mags.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / mags.len() as f64).sqrt();
        assert!(std < 0.1, "std {std}");
    }

    #[test]
    fn awgn_kind_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = crate::signal::gen_awgn(256, 1.0, 1e6, &mut rng).unwrap();
        let out = apply_fading(&s, FadingKind::Awgn, &FadingProfile::default(), &mut rng).unwrap();
        assert_eq!(out, s);
    }

    #[test]
    fn faded_signals_keep_unit_power_on_average() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ones = ComplexSignal::new(vec![Complex64::new(1.0, 0.0); 4_000], 1e6).unwrap();
        for kind in [FadingKind::Rayleigh, FadingKind::Rician { k_factor: 2.0 }] {
            for profile in [FadingProfile::default(), FadingProfile::block_constant()] {
                let trials = 2_000;
                let mut acc = 0.0;
                for _ in 0..trials {
                    let y = apply_fading(&ones, kind, &profile, &mut rng).unwrap();
                    // skip the tap-delay ramp at the start
                    acc += crate::signal::power(&y.samples[16..]).unwrap();
                }
                let p = acc / trials as f64;
                assert!((p - 1.0).abs() < 0.05, "{kind:?} {profile:?}: {p}");
            }
        }
    }

    #[test]
    fn rician_rejects_bad_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = ComplexSignal::new(vec![Complex64::new(1.0, 0.0); 8], 1e6).unwrap();
        let bad = FadingKind::Rician { k_factor: 0.0 };
        assert!(apply_fading(&s, bad, &FadingProfile::default(), &mut rng).is_err());
    }

    #[test]
    fn link_budget_example() {
        let params = LinkParams {
            shadowing: false,
            ..LinkParams::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let st = link_budget(&params, 25.0, ChannelCondition::Los, FadingKind::Awgn, &mut rng).unwrap();
        assert!((st.sinr_at_target_db - 29.97).abs() < 0.005, "{}", st.sinr_at_target_db);
        let expected_refl = 15.0 - pathloss_los_mean(50.0, 5.8).unwrap() + 92.0;
        assert!((st.sinr_at_initiator_db - expected_refl).abs() < 1e-9);
        // no interference: SINR equals SNR exactly
        assert_eq!(st.sinr_at_target_db, st.rx_power_target_dbm - params.noise_floor_dbm);
        assert_eq!(params.beta_r_db, -6.0);
        assert!(link_budget(&params, 0.2, ChannelCondition::Los, FadingKind::Awgn, &mut rng).is_err());
    }

    #[test]
    fn interference_adds_linearly() {
        assert!((db_power_sum(-92.0, -92.0) - (-92.0 + 10.0 * 2f64.log10())).abs() < 1e-12);
        assert_eq!(db_power_sum(-92.0, f64::NEG_INFINITY), -92.0);
    }

    #[test]
    fn beta_r_recipe_differs_from_default() {
        let recipe = beta_r_from_pathloss_gap(5.8, 1.5).unwrap();
        // average gap of the two laws at 25 m and 50 m
        let expected = -((88.008 - 77.028) + (98.635 - 83.350)) / 2.0;
        assert!((recipe - expected).abs() < 0.02, "{recipe}");
        assert!((recipe - LinkParams::default().beta_r_db).abs() > 1.0);
    }
}
