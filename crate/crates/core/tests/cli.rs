//! End-to-end runs of the `sensguard` binary.

use std::path::Path;
use std::process::Command;

use sensguard::iq::write_iq_file;
use sensguard::signal::{add_awgn, gen_ofdm_interference, gen_pulse_train, OfdmParams, PulseSpec};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn sensguard(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_sensguard"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn detect_json(iq: &Path) -> serde_json::Value {
    let out = sensguard(&["detect", "--iq", iq.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

#[test]
fn crlb_csv_has_one_row_per_snr() {
    let out = sensguard(&["crlb", "--bandwidth", "50e6", "--snr", "-10:10:20"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "snr_db,sigma_d,sigma_vr,sigma_phi,crb_d,crb_vr");
    assert_eq!(lines.len(), 5);
    // σ_D falls with SNR
    let sd: Vec<f64> = lines[1..].iter().map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(sd.windows(2).all(|w| w[0] > w[1]));
}

#[test]
fn crlb_json_matches_csv() {
    let csv = sensguard(&["crlb", "--snr", "0:10:10"]);
    let json = sensguard(&["crlb", "--snr", "0:10:10", "--format", "json"]);
    assert!(csv.status.success() && json.status.success());
    let v: serde_json::Value = serde_json::from_slice(&json.stdout).unwrap();
    let rows = v.as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let text = String::from_utf8(csv.stdout).unwrap();
    let first: f64 = text.lines().nth(1).unwrap().split(',').nth(1).unwrap().parse().unwrap();
    let j = rows[0]["sigma_d"].as_f64().unwrap();
    assert!((first - j).abs() <= 1e-9 * j);
}

#[test]
fn detect_finds_the_sensing_train_and_gates_ofdm() {
    let dir = tempfile::tempdir().unwrap();
    let fs = 100e6;
    let pulse = PulseSpec::default().with_bandwidth(50e6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);

    let mut train = gen_pulse_train(&pulse, fs, 4e-3).unwrap();
    add_awgn(&mut train.samples, 0.25, &mut rng);
    let sensing = dir.path().join("sensing.sgiq");
    write_iq_file(&sensing, &train).unwrap();
    let v = detect_json(&sensing);
    assert_eq!(v["detected"], true);
    assert_eq!(v["period"].as_u64(), Some(pulse.prt_len(fs) as u64));
    assert_eq!(v["communication_reject"], false);

    let ofdm = gen_ofdm_interference(&OfdmParams::default(), fs, 4e-3, &mut rng).unwrap();
    let comm = dir.path().join("ofdm.sgiq");
    write_iq_file(&comm, &ofdm).unwrap();
    let v = detect_json(&comm);
    assert!(v["detected"] == false || v["communication_reject"] == true, "{v}");
}

#[test]
fn simulate_writes_per_trial_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.cfg");
    std::fs::write(&cfg, "n_trials = 2\nduration = 0.5\n[pulse]\nbandwidth = 50e6\ncarrier = 5.8e9\npulse_duration = 1e-4\nprt = 4e-4\n").unwrap();
    let out = dir.path().join("out");
    let run = sensguard(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(run.status.success(), "{}", String::from_utf8_lossy(&run.stderr));
    for f in ["trial_000.csv", "trial_001.csv", "summary.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let rows = std::fs::read_to_string(out.join("trial_000.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 11);
}

#[test]
fn bad_config_and_bad_usage_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "no_such_key = 1\n").unwrap();
    let run = sensguard(&["simulate", "--config", cfg.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(run.status.code(), Some(3));
    assert_eq!(sensguard(&["frobnicate"]).status.code(), Some(2));
}
