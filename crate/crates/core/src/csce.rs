//! Correlation-based sensing component extraction.
//!
//! A short leading segment of the received samples is cross-correlated with
//! the disjoint segment that follows it. Periodic pulses show up as evenly
//! spaced correlation peaks; their spacing gives the pulse repetition
//! period. Folding the whole record at that period sums the pulses
//! coherently, and a smoothed envelope locates the pulse inside the folded
//! frame. The extracted pulse and its estimated SNR yield the target-side
//! CRLB (CRB_T).

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{crlb_for, CrlbEstimate, DEFAULT_SIGMA_PHI};
use crate::signal::{db_to_linear, gen_lfm, scale_to_power, ComplexSignal, PulseSpec};

thread_local! {
    static PLANNER: std::cell::RefCell<FftPlanner<f64>> = std::cell::RefCell::new(FftPlanner::new());
}

/// How the noise power outside the pulse window is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseEstimate {
    /// Mean power of the reference samples.
    Mean,
    /// Median power divided by ln 2 (the mean of complex Gaussian noise);
    /// insensitive to pulse energy left outside a truncated window.
    #[default]
    Median,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsceConfig {
    /// Short segment length N_s, samples.
    pub n_short: usize,
    /// Long segment length N_l, samples.
    pub n_long: usize,
    pub corr_threshold: f64,
    pub gap_fraction: f64,
    pub ma_taps: usize,
    pub pulse_threshold: f64,
    /// Ceiling applied to the SNR estimate, dB.
    pub max_snr_db: f64,
    /// Fixed angle std carried into CRB_T, rad.
    pub sigma_phi: f64,
    /// Largest relative deviation of any peak spacing from the mean period
    /// before the peaks are deemed aperiodic.
    pub spacing_tolerance: f64,
    pub noise_estimate: NoiseEstimate,
}

impl Default for CsceConfig {
    /// 1 ms / 5 ms segments at 200 MHz.
    fn default() -> Self {
        Self::for_durations(1e-3, 5e-3, 200e6)
    }
}

impl CsceConfig {
    pub fn for_durations(short: f64, long: f64, sample_rate: f64) -> Self {
        Self {
            n_short: (short * sample_rate).round() as usize,
            n_long: (long * sample_rate).round() as usize,
            corr_threshold: 0.707,
            gap_fraction: 0.4,
            ma_taps: 100,
            pulse_threshold: 0.707,
            max_snr_db: 40.0,
            sigma_phi: DEFAULT_SIGMA_PHI,
            spacing_tolerance: 0.01,
            noise_estimate: NoiseEstimate::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| v > 0.0 && v < 1.0;
        if self.n_short == 0 || self.n_short >= self.n_long {
            return Err(Error::InvalidParameter(format!(
                "need 0 < N_s < N_l, got {} and {}",
                self.n_short, self.n_long
            )));
        }
        if !unit(self.corr_threshold) || !unit(self.gap_fraction) || !unit(self.pulse_threshold) {
            return Err(Error::InvalidParameter("CSCE thresholds must lie in (0, 1)".into()));
        }
        if !(self.spacing_tolerance >= 0.0) {
            return Err(Error::InvalidParameter("spacing tolerance must be >= 0".into()));
        }
        if self.ma_taps == 0 {
            return Err(Error::InvalidParameter("moving average needs >= 1 tap".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extraction {
    /// Recovered period L, samples.
    pub period: usize,
    /// Number of periods folded into the frame.
    pub n_summed: usize,
    /// Rotation applied to the folded frame so the pulse sits mid-frame.
    pub frame_offset: usize,
    pub l_start: usize,
    pub l_end: usize,
    /// Extracted pulse, averaged over the folded periods.
    #[serde(skip)]
    pub pulse: ComplexSignal,
    /// Estimated per-pulse linear SNR.
    pub gamma_hat: f64,
    pub crb_t: CrlbEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsceResult {
    pub detected: bool,
    pub extraction: Option<Extraction>,
}

impl CsceResult {
    pub fn period(&self) -> Option<usize> {
        self.extraction.as_ref().map(|e| e.period)
    }

    fn missed() -> Self {
        Self { detected: false, extraction: None }
    }
}

/// |C(k)| / max over the full-overlap lags `0..=N_l-N_s`, where
/// `C(k) = Σ_l r_l[k + l] · conj(r_s[l])`.
pub fn normalized_correlation(received: &[Complex64], cfg: &CsceConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let (ns, nl) = (cfg.n_short, cfg.n_long);
    if received.len() < ns + nl {
        return Err(Error::InvalidParameter(format!(
            "received segment has {} samples, need at least {}",
            received.len(),
            ns + nl
        )));
    }
    // lags k <= N_l - N_s never wrap, so a circular transform of length N_l
    // is exact for them
    let m = nl;
    let (fwd, inv) = PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        (p.plan_fft_forward(m), p.plan_fft_inverse(m))
    });

    let mut short = vec![Complex64::new(0.0, 0.0); m];
    short[..ns].copy_from_slice(&received[..ns]);
    let mut long = vec![Complex64::new(0.0, 0.0); m];
    long[..nl].copy_from_slice(&received[ns..ns + nl]);
    fwd.process(&mut short);
    fwd.process(&mut long);
    for (l, s) in long.iter_mut().zip(&short) {
        *l *= s.conj();
    }
    inv.process(&mut long);

    let lags = nl - ns + 1;
    let mags: Vec<f64> = long[..lags].iter().map(|c| c.norm()).collect();
    let peak = mags.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Err(Error::ZeroSignal);
    }
    Ok(mags.into_iter().map(|c| c / peak).collect())
}

/// Period estimate from a normalized correlation. Above-threshold indices
/// separated by less than `gap_fraction · max gap` are merged into one
/// peak (the strongest); the period is the mean spacing of the merged peaks.
/// Scattered noise peaks are rejected by requiring every spacing to agree
/// with the mean within `spacing_tolerance`.
pub fn period_from_correlation(corr: &[f64], cfg: &CsceConfig) -> Option<usize> {
    let idx: Vec<usize> = (0..corr.len()).filter(|&k| corr[k] > cfg.corr_threshold).collect();
    if idx.len() < 2 {
        return None;
    }
    let max_gap = idx.windows(2).map(|w| w[1] - w[0]).max()?;
    let min_gap = cfg.gap_fraction * max_gap as f64;

    let mut peaks = Vec::new();
    let mut best = idx[0];
    for w in idx.windows(2) {
        if ((w[1] - w[0]) as f64) >= min_gap {
            peaks.push(best);
            best = w[1];
        } else if corr[w[1]] > corr[best] {
            best = w[1];
        }
    }
    peaks.push(best);
    if peaks.len() < 2 {
        return None;
    }
    let span = peaks[peaks.len() - 1] - peaks[0];
    let period = span / (peaks.len() - 1);
    let slack = (cfg.spacing_tolerance * period as f64).max(1.0);
    if peaks.windows(2).any(|w| ((w[1] - w[0]) as f64 - period as f64).abs() > slack) {
        return None;
    }
    // a period shorter than the smoothing filter cannot hold a pulse; this
    // also discards a lone peak whose neighbouring lags cross the threshold
    (period > cfg.ma_taps).then_some(period)
}

/// Folds `received` at `period`: frame[l] = Σ_j r[l + jL] over every
/// complete period.
pub fn fold(received: &[Complex64], period: usize) -> (Vec<Complex64>, usize) {
    let n_all = received.len() / period;
    let mut frame = vec![Complex64::new(0.0, 0.0); period];
    for chunk in received.chunks_exact(period) {
        for (f, r) in frame.iter_mut().zip(chunk) {
            *f += r;
        }
    }
    (frame, n_all)
}

/// Centred `taps`-point moving average with edge truncation.
pub fn moving_average(x: &[f64], taps: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
    }
    let back = (taps - 1) / 2;
    let fwd = taps - 1 - back;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(back);
            let hi = (i + fwd + 1).min(n);
            (prefix[hi] - prefix[lo]) / taps as f64
        })
        .collect()
}

/// Centred `taps`-point moving average of a periodic sequence (wraps at
/// both ends).
pub fn circular_moving_average(x: &[f64], taps: usize) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let back = (taps - 1) / 2;
    let mut acc: f64 = (0..taps).map(|j| x[(j + n * taps - back) % n]).sum();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        out.push(acc / taps as f64);
        acc += x[(i + taps - back) % n] - x[(i + n * taps - back) % n];
    }
    out
}

/// Per-pulse SNR from a folded frame: excess power inside the window over
/// the mean power outside, divided by the number of folded periods.
pub fn estimate_snr(frame: &[Complex64], l_start: usize, l_end: usize, n_summed: usize) -> Result<f64> {
    estimate_snr_guarded(frame, l_start, l_end, n_summed, 0)
}

/// As [`estimate_snr`], but the noise reference skips `guard` samples on
/// either side of the window, where the smoothed envelope's edge leaves
/// pulse energy outside `[l_start, l_end]`.
pub fn estimate_snr_guarded(
    frame: &[Complex64],
    l_start: usize,
    l_end: usize,
    n_summed: usize,
    guard: usize,
) -> Result<f64> {
    estimate_snr_with(frame, l_start, l_end, n_summed, guard, NoiseEstimate::Mean)
}

/// As [`estimate_snr_guarded`] with a choice of noise estimator.
pub fn estimate_snr_with(
    frame: &[Complex64],
    l_start: usize,
    l_end: usize,
    n_summed: usize,
    guard: usize,
    method: NoiseEstimate,
) -> Result<f64> {
    if l_start > l_end || l_end >= frame.len() || n_summed == 0 {
        return Err(Error::InvalidParameter(format!(
            "window [{l_start}, {l_end}] invalid for a {}-sample frame",
            frame.len()
        )));
    }
    let inside = &frame[l_start..=l_end];
    let lo = l_start.saturating_sub(guard);
    let hi = (l_end + 1 + guard).min(frame.len());
    let outside_len = lo + frame.len() - hi;
    if outside_len == 0 {
        return Err(Error::ZeroNoise);
    }
    let p_in = inside.iter().map(|s| s.norm_sqr()).sum::<f64>() / inside.len() as f64;
    let outside = frame[..lo].iter().chain(&frame[hi..]).map(|s| s.norm_sqr());
    let p_out = match method {
        NoiseEstimate::Mean => outside.sum::<f64>() / outside_len as f64,
        NoiseEstimate::Median => {
            let mut v: Vec<f64> = outside.collect();
            let mid = v.len() / 2;
            let (_, m, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
            *m / std::f64::consts::LN_2
        }
    };
    if p_out == 0.0 {
        return Err(Error::ZeroNoise);
    }
    Ok(((p_in - p_out) / p_out).max(0.0) / n_summed as f64)
}

/// Folds at a known period, locates the pulse and estimates CRB_T.
pub fn extract_with_period(
    received: &ComplexSignal,
    period: usize,
    cfg: &CsceConfig,
    f_c: f64,
) -> Result<Extraction> {
    cfg.validate()?;
    if period == 0 || period > received.len() {
        return Err(Error::InvalidParameter(format!("period {period} out of range")));
    }
    let (frame, n_summed) = fold(&received.samples, period);
    let env: Vec<f64> = frame.iter().map(|s| s.norm()).collect();
    // the folded frame is one period of a periodic signal, so a pulse may
    // straddle its edge
    let ma = circular_moving_average(&env, cfg.ma_taps);
    let (peak_at, peak) = ma
        .iter()
        .enumerate()
        .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    if !(peak > 0.0) {
        return Err(Error::DegeneratePulse("folded frame is empty".into()));
    }
    // rotate so the envelope maximum sits mid-frame; pulses straddling the
    // frame edge then stay contiguous
    let offset = (peak_at + period - period / 2) % period;
    let mut rotated = frame.clone();
    rotated.rotate_left(offset);
    let mut ma_rot = ma;
    ma_rot.rotate_left(offset);
    let centre = period / 2;
    let level = cfg.pulse_threshold * peak;
    let mut l_start = centre;
    while l_start > 0 && ma_rot[l_start - 1] >= level {
        l_start -= 1;
    }
    let mut l_end = centre;
    while l_end + 1 < period && ma_rot[l_end + 1] >= level {
        l_end += 1;
    }
    if l_end - l_start + 1 < 3 {
        return Err(Error::DegeneratePulse(format!(
            "pulse window [{l_start}, {l_end}] too short"
        )));
    }
    let max_snr = db_to_linear(cfg.max_snr_db);
    let gamma_hat = match estimate_snr_with(&rotated, l_start, l_end, n_summed, cfg.ma_taps, cfg.noise_estimate) {
        Ok(g) => g.min(max_snr),
        Err(Error::ZeroNoise) => max_snr,
        Err(e) => return Err(e),
    };
    if !(gamma_hat > 0.0) {
        return Err(Error::DegeneratePulse("no excess power inside the pulse window".into()));
    }
    let scale = 1.0 / n_summed as f64;
    let raw: Vec<Complex64> = rotated[l_start..=l_end].iter().map(|s| s * scale).collect();
    let pulse = scale_to_power(&ComplexSignal::new(raw, received.sample_rate)?, 1.0)
        .map_err(|_| Error::DegeneratePulse("extracted pulse has no energy".into()))?;
    let crb_t = crlb_for(&pulse, f_c, gamma_hat, cfg.sigma_phi)?;
    Ok(Extraction {
        period,
        n_summed,
        frame_offset: offset,
        l_start,
        l_end,
        pulse,
        gamma_hat,
        crb_t,
    })
}

/// Runs the full extraction on a received segment.
pub fn csce(received: &ComplexSignal, cfg: &CsceConfig, f_c: f64) -> Result<CsceResult> {
    let corr = match normalized_correlation(&received.samples, cfg) {
        Ok(c) => c,
        Err(Error::ZeroSignal) => return Ok(CsceResult::missed()),
        Err(e) => return Err(e),
    };
    let Some(period) = period_from_correlation(&corr, cfg) else {
        return Ok(CsceResult::missed());
    };
    match extract_with_period(received, period, cfg, f_c) {
        Ok(ex) => Ok(CsceResult { detected: true, extraction: Some(ex) }),
        Err(Error::DegeneratePulse(_) | Error::SingularFim(_) | Error::DegenerateWaveform(_)) => {
            Ok(CsceResult::missed())
        }
        Err(e) => Err(e),
    }
}

/// CRB gate: the CRLB of a 50 MHz version of `pulse` at `gamma_db`.
pub fn default_gate(pulse: &PulseSpec, sample_rate: f64, gamma_db: f64, sigma_phi: f64) -> Result<CrlbEstimate> {
    let narrow = pulse.with_bandwidth(50e6);
    let s = gen_lfm(&narrow, sample_rate)?;
    crlb_for(&s, narrow.carrier, db_to_linear(gamma_db), sigma_phi)
}

/// Default operating point of the communication gate, dB.
pub const DEFAULT_GATE_GAMMA_DB: f64 = -10.0;

/// True when the detection looks like a communication signal: its CRB_T
/// range std exceeds the gate.
pub fn communication_reject(result: &CsceResult, gate: &CrlbEstimate) -> bool {
    match &result.extraction {
        Some(ex) => !(ex.crb_t.sigma_d <= gate.sigma_d),
        None => true,
    }
}
