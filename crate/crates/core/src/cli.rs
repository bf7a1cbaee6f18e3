//! Command-line front end. Exit codes: 0 success, 1 runtime failure,
//! 2 usage error, 3 configuration error.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::csce::{communication_reject, csce, default_gate, CsceConfig, DEFAULT_GATE_GAMMA_DB};
use crate::defense::Strategy;
use crate::error::{Error, Result};
use crate::estimator::{crlb_for, DEFAULT_SIGMA_PHI};
use crate::geometry::gen_trajectory;
use crate::harness::{
    run_defense_sim, run_detection_sweep, run_tracking_sim, trial_rng, write_outputs,
    write_sweep_outputs, write_trajectory_csv, ScenarioConfig,
};
use crate::iq::read_iq_file;
use crate::signal::{db_to_linear, gen_lfm, linear_to_db, PulseSpec};

pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;

const CONFIG_HELP: &str = "\
Scenario configuration (TOML); every key is optional:
  seed                 RNG seed (integer)
  n_trials             Monte Carlo trials
  duration             simulated time per trial, s
  assessment_interval  step between assessments, s
  initiator            initiator position [x, y], m
  sample_rate          Hz (default 2 x bandwidth)
  sigma_phi            look-angle bound, rad
  [pulse]              bandwidth Hz, carrier Hz, pulse_duration s, prt s
  [mobility]           speed_mean m/s, speed_jitter m/s, heading_sigma rad,
                       start_x_range [m, m], bounds.{x_min,x_max,y_min,y_max} m
  [channel]            tx_power_dbm, noise_floor_dbm, beta_r_db, height_m,
                       interference_dbm (dBm), shadowing (bool), mean_dwell s,
                       sinr_reference (\"realized\" | \"mean\"),
                       los_fading / nlos_fading ({ kind = \"awgn\" | \"rayleigh\" |
                       \"rician\", k_factor }), fading_profile.{taps, tap_decay_db,
                       tap_spacing samples, max_doppler_hz}, ofdm.{n_subcarriers,
                       symbol_rate Hz, cp_fraction}
  [bound]              p_floor, quantization_mode (\"literal\" | \"position\"),
                       combine_mode (\"rss\" | \"literal-sum\")
  [csce]               short s, long s, tracking_short s, tracking_long s,
                       corr_threshold, gap_fraction, ma_taps, pulse_threshold,
                       max_snr_db dB, spacing_tolerance,
                       noise_estimate (median|mean)
  [sweep]              sinr_grid_db [dB], channels [fading], n_trials,
                       segment s, interference_fraction
  [defense]            theta_p m, theta_j, l_j_range [s, s], a_j_range_db [dB, dB],
                       k_m, strategy (\"I\" | \"II\"), reset_on_recovery";

#[derive(Debug, Parser)]
#[command(name = "sensguard", version, about = "Radio-sensing privacy simulator", after_help = CONFIG_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    #[value(name = "I")]
    One,
    #[value(name = "II")]
    Two,
}

#[derive(Debug, clap::Args)]
pub struct RunArgs {
    /// Scenario file (TOML)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override the configured seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the number of trials
    #[arg(long)]
    pub trials: Option<usize>,
    /// Output directory
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// CRLB of an LFM pulse over an SNR sweep
    Crlb {
        /// Swept bandwidth, Hz
        #[arg(long, default_value_t = 100e6)]
        bandwidth: f64,
        /// Carrier, Hz
        #[arg(long, default_value_t = 5.8e9)]
        fc: f64,
        /// Pulse duration, s
        #[arg(long, default_value_t = 1e-4)]
        tp: f64,
        /// Sample rate, Hz (default 2 x bandwidth)
        #[arg(long)]
        fs: Option<f64>,
        /// SNR sweep start:step:stop in dB
        #[arg(long, default_value = "-10:10:20", allow_hyphen_values = true)]
        snr: String,
        /// Look-angle bound, rad
        #[arg(long, default_value_t = DEFAULT_SIGMA_PHI)]
        sigma_phi: f64,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
        /// Output file (default stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run CSCE on an I/Q file and print the result as JSON
    Detect {
        #[arg(long)]
        iq: PathBuf,
        /// Short segment, s
        #[arg(long, default_value_t = 1.2e-3)]
        short: f64,
        /// Long segment, s
        #[arg(long, default_value_t = 2.2e-3)]
        long: f64,
        /// Carrier, Hz
        #[arg(long, default_value_t = 5.8e9)]
        fc: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Detection rate and CRB_T versus SINR per fading channel
    DetectSweep(RunArgs),
    /// Random-walk trajectory with sensing geometry, as CSV
    Trajectory {
        /// Scenario file (TOML)
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the configured seed
        #[arg(long)]
        seed: Option<u64>,
        /// Output CSV (default stdout)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Tracking simulation: actual and target-estimated sigma_p
    Simulate(RunArgs),
    /// Tracking simulation with the defense enabled
    Defend {
        #[command(flatten)]
        run: RunArgs,
        /// Override the configured strategy
        #[arg(long, value_enum)]
        strategy: Option<StrategyArg>,
    },
}

/// Parses `start:step:stop` (inclusive) in dB.
pub fn parse_range(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::InvalidParameter(format!("expected start:step:stop, got {spec:?}"));
    let nums: Vec<f64> = parts
        .iter()
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    match nums.as_slice() {
        [v] => Ok(vec![*v]),
        [start, step, stop] if *step > 0.0 && stop >= start => {
            let n = ((stop - start) / step + 1e-9).floor() as usize;
            Ok((0..=n).map(|i| start + i as f64 * step).collect())
        }
        _ => Err(bad()),
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>, trials: Option<usize>) -> Result<ScenarioConfig> {
    let mut cfg = match path {
        Some(p) => ScenarioConfig::load(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = trials {
        cfg.n_trials = n;
        cfg.sweep.n_trials = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn sink(out: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(io::stdout().lock()),
    })
}

#[derive(Serialize)]
struct CrlbRow {
    snr_db: f64,
    sigma_d: f64,
    sigma_vr: f64,
    sigma_phi: f64,
    crb_d: f64,
    crb_vr: f64,
}

#[derive(Serialize)]
struct DetectReport {
    detected: bool,
    period: Option<usize>,
    n_summed: Option<usize>,
    gamma_hat_db: Option<f64>,
    sigma_d: Option<f64>,
    sigma_vr: Option<f64>,
    sigma_phi: Option<f64>,
    communication_reject: Option<bool>,
}

/// Executes a parsed command.
pub fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Crlb { bandwidth, fc, tp, fs, snr, sigma_phi, format, out } => {
            let pulse = PulseSpec { bandwidth, carrier: fc, pulse_duration: tp, prt: 4.0 * tp };
            pulse.validate()?;
            let fs = fs.unwrap_or_else(|| pulse.default_sample_rate());
            let signal = gen_lfm(&pulse, fs)?;
            let rows = parse_range(&snr)?
                .into_iter()
                .map(|g| {
                    let c = crlb_for(&signal, fc, db_to_linear(g), sigma_phi)?;
                    Ok(CrlbRow {
                        snr_db: g,
                        sigma_d: c.sigma_d,
                        sigma_vr: c.sigma_vr,
                        sigma_phi: c.sigma_phi,
                        crb_d: c.crb_d(),
                        crb_vr: c.crb_vr(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let mut w = sink(out.as_deref())?;
            match format {
                Format::Json => {
                    serde_json::to_writer_pretty(&mut w, &rows)?;
                    writeln!(w)?;
                }
                Format::Csv => {
                    let mut c = csv::Writer::from_writer(w);
                    c.write_record(["snr_db", "sigma_d", "sigma_vr", "sigma_phi", "crb_d", "crb_vr"])?;
                    for r in &rows {
                        c.write_record([
                            format!("{}", r.snr_db),
                            format!("{:.9e}", r.sigma_d),
                            format!("{:.9e}", r.sigma_vr),
                            format!("{:.9e}", r.sigma_phi),
                            format!("{:.9e}", r.crb_d),
                            format!("{:.9e}", r.crb_vr),
                        ])?;
                    }
                    c.flush()?;
                }
            }
        }
        Command::Detect { iq, short, long, fc, out } => {
            let rx = read_iq_file(&iq)?;
            let cfg = CsceConfig::for_durations(short, long, rx.sample_rate);
            cfg.validate()?;
            let res = csce(&rx, &cfg, fc)?;
            let ex = res.extraction.as_ref();
            let gate = PulseSpec { carrier: fc, ..PulseSpec::default() };
            let gate = default_gate(&gate, rx.sample_rate, DEFAULT_GATE_GAMMA_DB, cfg.sigma_phi)?;
            let report = DetectReport {
                detected: res.detected,
                period: ex.map(|e| e.period),
                n_summed: ex.map(|e| e.n_summed),
                gamma_hat_db: ex.map(|e| linear_to_db(e.gamma_hat)),
                sigma_d: ex.map(|e| e.crb_t.sigma_d),
                sigma_vr: ex.map(|e| e.crb_t.sigma_vr),
                sigma_phi: ex.map(|e| e.crb_t.sigma_phi),
                communication_reject: res.detected.then(|| communication_reject(&res, &gate)),
            };
            let mut w = sink(out.as_deref())?;
            serde_json::to_writer_pretty(&mut w, &report)?;
            writeln!(w)?;
        }
        Command::DetectSweep(args) => {
            let cfg = load_config(args.config.as_deref(), args.seed, args.trials)?;
            let rows = run_detection_sweep(&cfg)?;
            write_sweep_outputs(&args.out, &cfg, &rows)?;
        }
        Command::Trajectory { config, seed, out } => {
            let cfg = load_config(config.as_deref(), seed, None)?;
            let mut rng = trial_rng(cfg.seed, 0);
            let points = gen_trajectory(cfg.duration, cfg.assessment_interval, &cfg.mobility, &mut rng)?;
            write_trajectory_csv(sink(out.as_deref())?, cfg.initiator, &points)?;
        }
        Command::Simulate(args) => {
            let cfg = load_config(args.config.as_deref(), args.seed, args.trials)?;
            let (records, stats) = run_tracking_sim(&cfg)?;
            write_outputs(&args.out, "simulate", &cfg, &records, &stats)?;
        }
        Command::Defend { run, strategy } => {
            let mut cfg = load_config(run.config.as_deref(), run.seed, run.trials)?;
            let mut defense = cfg.defense.unwrap_or_default();
            if let Some(s) = strategy {
                defense.strategy = match s {
                    StrategyArg::One => Strategy::Instant,
                    StrategyArg::Two => Strategy::MovingAverage,
                };
            }
            cfg.defense = Some(defense);
            cfg.validate()?;
            let (records, stats) = run_defense_sim(&cfg)?;
            write_outputs(&run.out, "defend", &cfg, &records, &stats)?;
        }
    }
    Ok(())
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidSpec(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parsing() {
        assert_eq!(parse_range("-10:10:20").unwrap(), vec![-10.0, 0.0, 10.0, 20.0]);
        assert_eq!(parse_range("5").unwrap(), vec![5.0]);
        assert!(parse_range("1:0:3").is_err());
        assert!(parse_range("a:b").is_err());
        assert!(parse_range("3:1:1").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["sensguard", "no-such-command"]), EXIT_USAGE);
        assert_eq!(run(["sensguard", "crlb", "--bandwidth"]), EXIT_USAGE);
    }

    #[test]
    fn bad_config_exits_3() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.cfg");
        fs::write(&p, "n_trials = \"many\"\n").unwrap();
        let code = run(["sensguard".into(), "simulate".into(), "--config".into(), p.into_os_string()]);
        assert_eq!(code, EXIT_CONFIG);
    }

    #[test]
    fn crlb_to_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("crlb.csv");
        let code = run([
            OsString::from("sensguard"),
            "crlb".into(),
            "--snr".into(),
            "0:10:20".into(),
            "--out".into(),
            p.clone().into_os_string(),
        ]);
        assert_eq!(code, 0);
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 4);
    }
}
