//! Target-side countermeasure: monitor the estimated performance bound σ_p
//! and transmit noise pulses toward the initiator once tracking becomes too
//! accurate.
//!
//! Strategy I compares each reading with θ_p; Strategy II compares the mean
//! of the last K_m readings. Every sub-threshold comparison increments a
//! counter; reaching θ_J starts a jam of random length and power.

use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

use crate::channel::db_power_sum;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Instant comparison.
    #[serde(rename = "I")]
    Instant,
    /// Moving-average comparison.
    #[serde(rename = "II")]
    MovingAverage,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DefenseConfig {
    /// Performance threshold θ_p, m.
    pub theta_p: f64,
    /// Count threshold θ_J.
    pub theta_j: u32,
    /// Jam duration bounds, s.
    pub l_j_range: (f64, f64),
    /// Jam power-ratio bounds, dB.
    pub a_j_range_db: (f64, f64),
    /// Moving-average window K_m.
    pub k_m: usize,
    pub strategy: Strategy,
    /// Reset the counter whenever a reading is back above threshold.
    pub reset_on_recovery: bool,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            theta_p: 0.17,
            theta_j: 3,
            l_j_range: (0.05, 0.35),
            a_j_range_db: (-3.0, 3.0),
            k_m: 3,
            strategy: Strategy::Instant,
            reset_on_recovery: false,
        }
    }
}

impl DefenseConfig {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.l_j_range;
        let (alo, ahi) = self.a_j_range_db;
        if !(self.theta_p > 0.0) {
            return Err(Error::Config(format!("theta_p must be > 0, got {}", self.theta_p)));
        }
        if self.theta_j < 1 || self.k_m < 1 {
            return Err(Error::Config("theta_j and k_m must be >= 1".into()));
        }
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Config(format!("bad jam duration range ({lo}, {hi})")));
        }
        if !(ahi >= alo && alo.is_finite() && ahi.is_finite()) {
            return Err(Error::Config(format!("bad jam power range ({alo}, {ahi})")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Action {
    None,
    Jam { duration: f64, power_ratio: f64 },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DefenseState {
    pub j_count: u32,
    pub sigma_history: VecDeque<f64>,
    pub jamming_until: Option<f64>,
    /// Linear power ratio of the jam in progress.
    pub jam_ratio: Option<f64>,
    pub trigger_count: u32,
    last_t: Option<f64>,
}

impl DefenseState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Whether a jam started earlier covers time `t`.
    pub fn jamming_at(&self, t: f64) -> bool {
        self.jamming_until.map_or(false, |until| t < until)
    }
}

/// Feeds one σ_p reading taken at time `t` to the monitor.
pub fn step_monitor<R: Rng + ?Sized>(
    state: &mut DefenseState,
    sigma_p: f64,
    t: f64,
    cfg: &DefenseConfig,
    rng: &mut R,
) -> Result<Action> {
    if let Some(prev) = state.last_t {
        if t < prev {
            return Err(Error::TimeRegression { previous: prev, current: t });
        }
    }
    state.last_t = Some(t);
    state.sigma_history.push_back(sigma_p);
    while state.sigma_history.len() > cfg.k_m {
        state.sigma_history.pop_front();
    }
    if state.jamming_at(t) {
        return Ok(Action::None);
    }
    state.jam_ratio = None;

    let metric = match cfg.strategy {
        Strategy::Instant => sigma_p,
        Strategy::MovingAverage => {
            if state.sigma_history.len() < cfg.k_m {
                return Ok(Action::None);
            }
            state.sigma_history.iter().sum::<f64>() / cfg.k_m as f64
        }
    };
    if metric < cfg.theta_p {
        state.j_count += 1;
    } else if cfg.reset_on_recovery {
        state.j_count = 0;
    }
    if state.j_count < cfg.theta_j {
        return Ok(Action::None);
    }
    let (lo, hi) = cfg.l_j_range;
    let duration = rng.gen_range(lo..hi);
    let (alo, ahi) = cfg.a_j_range_db;
    let a_j = if ahi > alo { rng.gen_range(alo..ahi) } else { alo };
    let power_ratio = 10f64.powf(a_j / 10.0);
    state.j_count = 0;
    state.jamming_until = Some(t + duration);
    state.jam_ratio = Some(power_ratio);
    state.trigger_count += 1;
    Ok(Action::Jam { duration, power_ratio })
}

/// Initiator SINR in dB once jam power `jam_power_dbm_at_initiator` joins
/// the noise floor.
pub fn jam_effect(reflected_power_dbm: f64, jam_power_dbm_at_initiator: f64, noise_floor_dbm: f64) -> f64 {
    reflected_power_dbm - db_power_sum(noise_floor_dbm, jam_power_dbm_at_initiator)
}

/// Jam power reaching the initiator: the target re-radiates `power_ratio`
/// times the sensing power it receives, attenuated by the one-way loss.
pub fn jam_power_at_initiator(rx_power_target_dbm: f64, power_ratio: f64, one_way_loss_db: f64) -> f64 {
    rx_power_target_dbm + 10.0 * power_ratio.log10() - one_way_loss_db
}

/// One row of the defense event log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DefenseEvent {
    pub t: f64,
    pub action: &'static str,
    pub duration: f64,
    pub power_ratio: f64,
    pub j_count: u32,
}

pub fn write_events_csv<W: std::io::Write>(w: W, events: &[DefenseEvent]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["t", "action", "duration", "power_ratio", "j_count"])?;
    for e in events {
        out.write_record([
            format!("{:.3}", e.t),
            e.action.to_string(),
            format!("{:.6}", e.duration),
            format!("{:.6}", e.power_ratio),
            e.j_count.to_string(),
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn run(trace: &[f64], cfg: &DefenseConfig, seed: u64) -> (Vec<Action>, DefenseState) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = DefenseState::new();
        let acts = trace
            .iter()
            .enumerate()
            .map(|(i, &s)| step_monitor(&mut st, s, i as f64 * 0.05, cfg, &mut rng).unwrap())
            .collect();
        (acts, st)
    }

    #[test]
    fn strategy_one_jams_on_third_reading() {
        let cfg = DefenseConfig::default();
        let (acts, st) = run(&[0.1, 0.1, 0.1], &cfg, 1);
        assert_eq!(acts[0], Action::None);
        assert_eq!(acts[1], Action::None);
        assert!(matches!(acts[2], Action::Jam { .. }));
        assert_eq!(st.j_count, 0);
        assert_eq!(st.trigger_count, 1);
    }

    #[test]
    fn never_jams_above_threshold() {
        let (acts, st) = run(&[0.3; 100], &DefenseConfig::default(), 2);
        assert!(acts.iter().all(|a| *a == Action::None));
        assert_eq!(st.trigger_count, 0);
    }

    #[test]
    fn strategy_two_window_mean() {
        let cfg = DefenseConfig { strategy: super::Strategy::MovingAverage, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut st = DefenseState::new();
        for (i, s) in [0.3, 0.1, 0.1].iter().enumerate() {
            step_monitor(&mut st, *s, i as f64, &cfg, &mut rng).unwrap();
            let expect = if i == 2 { 1 } else { 0 };
            assert_eq!(st.j_count, expect, "after reading {i}");
        }
    }

    #[test]
    fn counts_need_not_be_consecutive() {
        let cfg = DefenseConfig::default();
        let (acts, _) = run(&[0.1, 0.3, 0.1, 0.3, 0.1], &cfg, 3);
        assert!(matches!(acts[4], Action::Jam { .. }));
        let reset = DefenseConfig { reset_on_recovery: true, ..cfg };
        let (acts, st) = run(&[0.1, 0.3, 0.1, 0.3, 0.1], &reset, 3);
        assert!(acts.iter().all(|a| *a == Action::None));
        assert_eq!(st.j_count, 1);
    }

    #[test]
    fn no_retrigger_while_jamming() {
        let cfg = DefenseConfig { l_j_range: (1.0, 1.1), ..Default::default() };
        // 0.05 s steps: a >= 1 s jam blocks the next 20 readings
        let (acts, st) = run(&[0.1; 23], &cfg, 4);
        assert!(matches!(acts[2], Action::Jam { .. }));
        assert!(acts[3..22].iter().all(|a| *a == Action::None));
        assert_eq!(st.trigger_count, 1);
        assert_eq!(st.sigma_history.len(), 3);
    }

    #[test]
    fn time_regression_rejected() {
        let cfg = DefenseConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut st = DefenseState::new();
        step_monitor(&mut st, 0.2, 1.0, &cfg, &mut rng).unwrap();
        assert!(matches!(
            step_monitor(&mut st, 0.2, 0.5, &cfg, &mut rng),
            Err(Error::TimeRegression { .. })
        ));
    }

    #[test]
    fn jam_effect_examples() {
        assert_eq!(jam_effect(-60.0, f64::NEG_INFINITY, -92.0), 32.0);
        let drop = 32.0 - jam_effect(-60.0, -92.0, -92.0);
        assert!((drop - 3.0103).abs() < 1e-4);
        let drop = 32.0 - jam_effect(-60.0, -82.0, -92.0);
        assert!((drop - 10.4139).abs() < 1e-4);
        assert!((jam_power_at_initiator(-62.0, 2.0, 77.0) - (-62.0 + 3.0103 - 77.0)).abs() < 1e-4);
    }

    #[test]
    fn validation() {
        assert!(DefenseConfig::default().validate().is_ok());
        assert!(DefenseConfig { theta_j: 0, ..Default::default() }.validate().is_err());
        assert!(DefenseConfig { l_j_range: (0.3, 0.1), ..Default::default() }.validate().is_err());
    }

    #[test]
    fn event_csv() {
        let ev = DefenseEvent { t: 1.0, action: "jam", duration: 0.1, power_ratio: 1.5, j_count: 3 };
        let mut buf = Vec::new();
        write_events_csv(&mut buf, &[ev]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "t,action,duration,power_ratio,j_count\n1.000,jam,0.100000,1.500000,3\n"
        );
    }

    /// Window means can sit below θ_p while most instant readings do not,
    /// so Strategy II is not bounded by Strategy I on arbitrary traces.
    #[test]
    fn moving_average_can_outpace_instant() {
        let trace: Vec<f64> = [0.18, 0.18, 0.14].iter().cycle().take(90).cloned().collect();
        let one = DefenseConfig { l_j_range: (0.01, 0.011), ..Default::default() };
        let two = DefenseConfig { strategy: super::Strategy::MovingAverage, ..one };
        let (_, s1) = run(&trace, &one, 5);
        let (_, s2) = run(&trace, &two, 5);
        assert!(s2.trigger_count > s1.trigger_count);
    }

    proptest! {
        #[test]
        fn jam_parameters_within_bounds(trace in prop::collection::vec(0.0f64..0.4, 1..300), seed in 0u64..100) {
            let cfg = DefenseConfig::default();
            let (acts, st) = run(&trace, &cfg, seed);
            let mut jams = 0;
            for a in acts {
                if let Action::Jam { duration, power_ratio } = a {
                    jams += 1;
                    prop_assert!((0.05..0.35).contains(&duration));
                    prop_assert!(power_ratio >= 10f64.powf(-0.3) && power_ratio <= 10f64.powf(0.3));
                }
            }
            prop_assert_eq!(jams, st.trigger_count);
        }

        #[test]
        fn triggers_need_theta_j_readings(trace in prop::collection::vec(0.0f64..0.4, 1..300), seed in 0u64..100) {
            let cfg = DefenseConfig::default();
            let (acts, _) = run(&trace, &cfg, seed);
            let mut below_since = 0;
            for (a, s) in acts.iter().zip(&trace) {
                if *s < cfg.theta_p {
                    below_since += 1;
                }
                if matches!(a, Action::Jam { .. }) {
                    prop_assert!(below_since >= cfg.theta_j);
                    below_since = 0;
                }
            }
        }
    }
}
