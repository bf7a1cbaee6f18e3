//! Complex baseband signal synthesis: LFM pulses and pulse trains,
//! OFDM-like interference, white Gaussian noise and power bookkeeping.
//!
//! Powers are linear and relative to the unit-variance convention, so a
//! unit-modulus chirp has power 1 (0 dB).

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Uniformly sampled complex baseband sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
}

impl ComplexSignal {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Result<Self> {
        if !(sample_rate > 0.0) || !sample_rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sample rate must be positive, got {sample_rate}"
            )));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: f64) -> Result<Self> {
        Self::new(vec![Complex64::new(0.0, 0.0); len], sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample interval T = 1 / f_s.
    pub fn sample_interval(&self) -> f64 {
        1.0 / self.sample_rate
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    /// Mean |s[n]|^2.
    pub fn power(&self) -> Result<f64> {
        power(&self.samples)
    }

    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            samples: self.samples.iter().map(|s| s * factor).collect(),
            sample_rate: self.sample_rate,
        }
    }

    /// Element-wise sum; the shorter operand is treated as zero-padded.
    pub fn add(&self, other: &ComplexSignal) -> Result<Self> {
        if (self.sample_rate - other.sample_rate).abs() > 1e-9 * self.sample_rate {
            return Err(Error::InvalidParameter(format!(
                "sample rate mismatch: {} vs {}",
                self.sample_rate, other.sample_rate
            )));
        }
        let n = self.len().max(other.len());
        let zero = Complex64::new(0.0, 0.0);
        let samples = (0..n)
            .map(|i| {
                self.samples.get(i).copied().unwrap_or(zero)
                    + other.samples.get(i).copied().unwrap_or(zero)
            })
            .collect();
        Ok(Self {
            samples,
            sample_rate: self.sample_rate,
        })
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        let end = end.min(self.len());
        let start = start.min(end);
        Self {
            samples: self.samples[start..end].to_vec(),
            sample_rate: self.sample_rate,
        }
    }
}

/// LFM sensing waveform parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    /// Swept bandwidth B in Hz.
    pub bandwidth: f64,
    /// Carrier f_c in Hz.
    pub carrier: f64,
    /// Pulse duration T_p in s.
    pub pulse_duration: f64,
    /// Pulse repetition time in s.
    pub prt: f64,
}

impl Default for PulseSpec {
    /// 100 MHz / 5.8 GHz / 0.1 ms / 0.4 ms sensing pulse.
    fn default() -> Self {
        Self {
            bandwidth: 100e6,
            carrier: 5.8e9,
            pulse_duration: 1e-4,
            prt: 4e-4,
        }
    }
}

impl PulseSpec {
    pub fn with_bandwidth(self, bandwidth: f64) -> Self {
        Self { bandwidth, ..self }
    }

    /// Complex-baseband default sample rate, 2B.
    pub fn default_sample_rate(&self) -> f64 {
        2.0 * self.bandwidth
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.bandwidth, self.carrier, self.pulse_duration, self.prt]
            .iter()
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::InvalidSpec("non-finite field".into()));
        }
        if self.bandwidth <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth
            )));
        }
        if self.carrier <= 0.0 {
            return Err(Error::InvalidSpec(format!(
                "carrier must be positive, got {}",
                self.carrier
            )));
        }
        if self.pulse_duration <= 0.0 || self.pulse_duration > self.prt {
            return Err(Error::InvalidSpec(format!(
                "need 0 < T_p <= PRT, got T_p = {} s, PRT = {} s",
                self.pulse_duration, self.prt
            )));
        }
        Ok(())
    }

    /// Pulse length in samples at `sample_rate`.
    pub fn pulse_len(&self, sample_rate: f64) -> usize {
        (self.pulse_duration * sample_rate).round() as usize
    }

    /// PRT in samples at `sample_rate`.
    pub fn prt_len(&self, sample_rate: f64) -> usize {
        (self.prt * sample_rate).round() as usize
    }
}

fn check_sampling(spec: &PulseSpec, sample_rate: f64) -> Result<()> {
    spec.validate()?;
    if !(sample_rate.is_finite() && sample_rate >= 2.0 * spec.bandwidth * (1.0 - 1e-12)) {
        return Err(Error::InvalidSpec(format!(
            "sample rate {sample_rate} Hz below 2B = {} Hz",
            2.0 * spec.bandwidth
        )));
    }
    if spec.pulse_duration * sample_rate < 16.0 {
        return Err(Error::InvalidSpec(format!(
            "pulse spans {} samples, need at least 16",
            spec.pulse_duration * sample_rate
        )));
    }
    Ok(())
}

/// One up-chirp pulse, s[n] = exp(j*pi*(B/T_p)*(t_n - T_p/2)^2), centred at
/// baseband so the instantaneous frequency sweeps -B/2 .. +B/2.
pub fn gen_lfm(spec: &PulseSpec, sample_rate: f64) -> Result<ComplexSignal> {
    check_sampling(spec, sample_rate)?;
    let n = spec.pulse_len(sample_rate);
    let rate = spec.bandwidth / spec.pulse_duration;
    let half = spec.pulse_duration / 2.0;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sample_rate - half;
            Complex64::from_polar(1.0, PI * rate * t * t)
        })
        .collect();
    ComplexSignal::new(samples, sample_rate)
}

/// Number of whole PRTs in `duration`, tolerant of float round-off.
pub fn pulse_count(spec: &PulseSpec, duration: f64) -> usize {
    (duration / spec.prt + 1e-9).floor() as usize
}

/// Pulse train: floor(duration / PRT) pulses at offsets k*PRT, zeros between.
pub fn gen_pulse_train(spec: &PulseSpec, sample_rate: f64, duration: f64) -> Result<ComplexSignal> {
    let pulse = gen_lfm(spec, sample_rate)?;
    if !(duration.is_finite() && duration >= spec.prt * (1.0 - 1e-12)) {
        return Err(Error::InvalidSpec(format!(
            "duration {duration} s shorter than one PRT ({} s)",
            spec.prt
        )));
    }
    let len = (duration * sample_rate).round() as usize;
    let mut samples = vec![Complex64::new(0.0, 0.0); len];
    for k in 0..pulse_count(spec, duration) {
        let start = (k as f64 * spec.prt * sample_rate).round() as usize;
        if start >= len {
            break;
        }
        let end = (start + pulse.len()).min(len);
        samples[start..end].copy_from_slice(&pulse.samples[..end - start]);
    }
    ComplexSignal::new(samples, sample_rate)
}

/// OFDM interference parameters: subcarrier count, subcarrier spacing and
/// cyclic-prefix fraction. Data symbols are QPSK.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OfdmParams {
    pub n_subcarriers: usize,
    /// Subcarrier spacing (useful-symbol rate) in Hz.
    pub symbol_rate: f64,
    pub cp_fraction: f64,
}

impl Default for OfdmParams {
    fn default() -> Self {
        Self {
            n_subcarriers: 64,
            symbol_rate: 312.5e3,
            cp_fraction: 0.25,
        }
    }
}

/// Random-data multicarrier signal normalized to unit average power.
pub fn gen_ofdm_interference<R: Rng + ?Sized>(
    params: &OfdmParams,
    sample_rate: f64,
    duration: f64,
    rng: &mut R,
) -> Result<ComplexSignal> {
    if params.n_subcarriers < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 subcarriers, got {}",
            params.n_subcarriers
        )));
    }
    if !(params.symbol_rate > 0.0 && sample_rate > 0.0 && duration > 0.0) {
        return Err(Error::InvalidParameter(
            "symbol rate, sample rate and duration must be positive".into(),
        ));
    }
    if !(0.0..1.0).contains(&params.cp_fraction) {
        return Err(Error::InvalidParameter(format!(
            "cyclic prefix fraction must be in [0, 1), got {}",
            params.cp_fraction
        )));
    }
    let fft_len = (sample_rate / params.symbol_rate).round() as usize;
    if fft_len < params.n_subcarriers {
        return Err(Error::InvalidParameter(format!(
            "sample rate {sample_rate} Hz cannot hold {} subcarriers at {} Hz spacing",
            params.n_subcarriers, params.symbol_rate
        )));
    }
    let cp_len = (params.cp_fraction * fft_len as f64).round() as usize;
    let len = (duration * sample_rate).round() as usize;
    let ifft = FftPlanner::<f64>::new().plan_fft_inverse(fft_len);
    let half = params.n_subcarriers / 2;
    let qpsk = std::f64::consts::FRAC_1_SQRT_2;

    let mut samples = Vec::with_capacity(len + fft_len + cp_len);
    let mut bins = vec![Complex64::new(0.0, 0.0); fft_len];
    while samples.len() < len {
        bins.iter_mut().for_each(|b| *b = Complex64::new(0.0, 0.0));
        for k in 0..params.n_subcarriers {
            // subcarriers centred on DC: -half .. n - half - 1
            let offset = k as isize - half as isize;
            let bin = offset.rem_euclid(fft_len as isize) as usize;
            let re = if rng.gen::<bool>() { qpsk } else { -qpsk };
            let im = if rng.gen::<bool>() { qpsk } else { -qpsk };
            bins[bin] = Complex64::new(re, im);
        }
        ifft.process(&mut bins);
        samples.extend_from_slice(&bins[fft_len - cp_len..]);
        samples.extend_from_slice(&bins);
    }
    samples.truncate(len);
    let mut out = ComplexSignal::new(samples, sample_rate)?;
    if !out.is_empty() {
        out = scale_to_power(&out, 1.0)?;
    }
    Ok(out)
}

/// Circularly-symmetric complex Gaussian noise with per-sample variance `power`.
pub fn gen_awgn<R: Rng + ?Sized>(
    n: usize,
    power: f64,
    sample_rate: f64,
    rng: &mut R,
) -> Result<ComplexSignal> {
    if !(power >= 0.0) || !power.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "noise power must be non-negative, got {power}"
        )));
    }
    let sigma = (power / 2.0).sqrt();
    let samples = (0..n)
        .map(|_| {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            Complex64::new(sigma * re, sigma * im)
        })
        .collect();
    ComplexSignal::new(samples, sample_rate)
}

/// Adds CN(0, power) noise in place, avoiding a second buffer for long segments.
pub fn add_awgn<R: Rng + ?Sized>(samples: &mut [Complex64], power: f64, rng: &mut R) {
    let sigma = (power.max(0.0) / 2.0).sqrt();
    for s in samples.iter_mut() {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        *s += Complex64::new(sigma * re, sigma * im);
    }
}

/// Mean |s[n]|^2 of a non-empty sample slice.
pub fn power(samples: &[Complex64]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("power of an empty signal".into()));
    }
    Ok(samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / samples.len() as f64)
}

/// Copy of `signal` scaled to mean power `target`.
pub fn scale_to_power(signal: &ComplexSignal, target: f64) -> Result<ComplexSignal> {
    if !(target >= 0.0) || !target.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "target power must be non-negative, got {target}"
        )));
    }
    let current = signal.power()?;
    if current == 0.0 {
        if target == 0.0 {
            return Ok(signal.clone());
        }
        return Err(Error::ZeroSignal);
    }
    Ok(signal.scaled(Complex64::new((target / current).sqrt(), 0.0)))
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

pub fn linear_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn reference_pulse() -> PulseSpec {
        PulseSpec::default()
    }

    #[test]
    fn default_pulse_has_20k_samples() {
        let s = gen_lfm(&reference_pulse(), 200e6).unwrap();
        assert_eq!(s.len(), 20_000);
    }

    #[test]
    fn chirp_is_unit_modulus() {
        let s = gen_lfm(&reference_pulse(), 200e6).unwrap();
        assert!(s.samples.iter().all(|x| (x.norm() - 1.0).abs() < 1e-12));
        assert!((s.power().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn chirp_phase_increments_are_affine() {
        let spec = reference_pulse();
        let fs = 200e6;
        let s = gen_lfm(&spec, fs).unwrap();
        let n = s.len();
        let slope = 2.0 * PI * spec.bandwidth / (n as f64 * fs);
        let dphi: Vec<f64> = s
            .samples
            .windows(2)
            .map(|w| (w[1] * w[0].conj()).arg())
            .collect();
        for w in dphi.windows(2) {
            assert!((w[1] - w[0] - slope).abs() < 1e-9, "{} vs {}", w[1] - w[0], slope);
        }
        // sweep spans roughly -B/2 .. +B/2
        let f0 = dphi[0] * fs / (2.0 * PI);
        let f1 = dphi[n - 2] * fs / (2.0 * PI);
        assert!((f0 + spec.bandwidth / 2.0).abs() < 0.01 * spec.bandwidth);
        assert!((f1 - spec.bandwidth / 2.0).abs() < 0.01 * spec.bandwidth);
    }

    #[test]
    fn rejects_undersampling_and_short_pulses() {
        assert!(matches!(
            gen_lfm(&reference_pulse(), 150e6),
            Err(Error::InvalidSpec(_))
        ));
        let short = PulseSpec {
            pulse_duration: 1e-8,
            ..reference_pulse()
        };
        assert!(gen_lfm(&short, 200e6).is_err());
        let bad = PulseSpec {
            prt: 1e-5,
            ..reference_pulse()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn train_counts() {
        let spec = reference_pulse();
        assert_eq!(pulse_count(&spec, 0.05), 125);
        assert_eq!(pulse_count(&spec, spec.prt), 1);
        let t = gen_pulse_train(&spec, 200e6, spec.prt).unwrap();
        assert_eq!(t.len(), 80_000);
        let nonzero = t.samples.iter().filter(|s| s.norm() > 0.0).count();
        assert_eq!(nonzero, 20_000);
        assert!(gen_pulse_train(&spec, 200e6, spec.prt / 2.0).is_err());
    }

    #[test]
    fn train_autocorrelation_peaks_at_prt() {
        let spec = PulseSpec {
            bandwidth: 10e6,
            pulse_duration: 10e-6,
            prt: 40e-6,
            ..reference_pulse()
        };
        let fs = 20e6;
        let t = gen_pulse_train(&spec, fs, 200e-6).unwrap();
        let n = t.len();
        // brute force over positive lags, excluding the zero-lag neighbourhood
        let lag_hat = (50..n / 2)
            .map(|lag| {
                let acc: Complex64 = (0..n - lag)
                    .map(|i| t.samples[i] * t.samples[i + lag].conj())
                    .sum();
                (lag, acc.norm())
            })
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(lag_hat, spec.prt_len(fs));
    }

    #[test]
    fn awgn_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let z = gen_awgn(1000, 0.0, 1.0, &mut rng).unwrap();
        assert!(z.samples.iter().all(|s| s.norm() == 0.0));

        let x = gen_awgn(1_000_000, 1.0, 1.0, &mut rng).unwrap();
        let n = x.len() as f64;
        let mean: Complex64 = x.samples.iter().sum::<Complex64>() / n;
        let var = x.samples.iter().map(|s| (s - mean).norm_sqr()).sum::<f64>() / n;
        assert!((0.99..=1.01).contains(&var), "variance {var}");
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for s in &x.samples {
            sxy += (s.re - mean.re) * (s.im - mean.im);
            sxx += (s.re - mean.re).powi(2);
            syy += (s.im - mean.im).powi(2);
        }
        let rho = sxy / (sxx * syy).sqrt();
        assert!(rho.abs() < 0.01, "rho {rho}");
    }

    #[test]
    fn ofdm_normalized_and_deterministic() {
        let p = OfdmParams::default();
        let a = gen_ofdm_interference(&p, 200e6, 1e-3, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = gen_ofdm_interference(&p, 200e6, 1e-3, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 200_000);
        assert!((a.power().unwrap() - 1.0).abs() < 0.01);
        let bad = OfdmParams {
            n_subcarriers: 1,
            ..p
        };
        assert!(gen_ofdm_interference(&bad, 200e6, 1e-3, &mut ChaCha8Rng::seed_from_u64(3)).is_err());
    }

    #[test]
    fn power_and_scaling() {
        let s = gen_lfm(&reference_pulse(), 200e6).unwrap();
        assert!((s.power().unwrap() - 1.0).abs() < 1e-12);
        let scaled = scale_to_power(&s, 4.0).unwrap();
        assert!((scaled.power().unwrap() - 4.0).abs() < 1e-12);
        let rotated = s.scaled(Complex64::from_polar(1.0, 1.234));
        assert!((rotated.power().unwrap() - s.power().unwrap()).abs() < 1e-12);

        let zero = ComplexSignal::zeros(10, 1.0).unwrap();
        assert_eq!(zero.power().unwrap(), 0.0);
        assert!(matches!(scale_to_power(&zero, 1.0), Err(Error::ZeroSignal)));
        assert!(scale_to_power(&zero, 0.0).is_ok());
    }
}
