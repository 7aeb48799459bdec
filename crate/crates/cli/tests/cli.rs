use std::path::Path;
use std::process::{Command, Output};

use csilab_core::csikit::{classify_magnitude, shape_metrics, DistortionType};
use tempfile::TempDir;

fn csilab(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_csilab")).args(args).current_dir(dir).output().expect("spawn csilab")
}

fn ok(args: &[&str], dir: &Path) -> String {
    let out = csilab(args, dir);
    assert!(
        out.status.success(),
        "csilab {args:?} exited {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(args: &[&str], dir: &Path) -> i32 {
    csilab(args, dir).status.code().unwrap()
}

/// The number right after `key` in `text`.
fn number_after(text: &str, key: &str) -> f64 {
    let rest = &text[text.find(key).unwrap_or_else(|| panic!("'{key}' missing from:\n{text}")) + key.len()..];
    rest.split_whitespace().next().unwrap().trim_end_matches(',').parse().unwrap()
}

/// Rows of a plot-data CSV grouped by series id.
fn series(csv: &str) -> Vec<(String, Vec<f64>)> {
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("subcarrier_or_freq,value,series_id"));
    let mut out: Vec<(String, Vec<f64>)> = Vec::new();
    for l in lines {
        let f: Vec<&str> = l.split(',').collect();
        let v: f64 = f[1].parse().unwrap();
        match out.last_mut() {
            Some((id, vals)) if id == f[2] => vals.push(v),
            _ => out.push((f[2].to_string(), vec![v])),
        }
    }
    out
}

const EMPTY_CAPTURE: [u8; 8] = [b'C', b'S', b'F', b'1', 1, 0, 0, 0];

#[test]
fn clock_bandwidth_lookup() {
    let dir = TempDir::new().unwrap();
    let out = ok(&["clock", "--bw", "20e6"], dir.path());
    assert!(out.contains("(44, 5, 0, 0)"), "{out}");
    assert!(out.contains("f_digi_bb 44.000 MHz"), "{out}");
    assert!(out.contains("f_rx_adc 88.000 MHz"), "{out}");
    assert!(out.contains("f_tx_dac 176.000 MHz"), "{out}");
}

#[test]
fn clock_carrier_quantization() {
    let dir = TempDir::new().unwrap();
    let out = ok(&["clock", "--cf", "5.2e9", "--band", "5g"], dir.path());
    assert!(out.contains("5199.999389"), "{out}");
    assert!(out.contains("5200.000305"), "{out}");
}

#[test]
fn usage_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    assert_eq!(code(&["clock", "--frobnicate"], d), 2);
    assert_eq!(code(&["scan", "--cf", "2.4e9:5e6", "--sf", "20e6"], d), 2);
    assert_eq!(code(&["scan", "--cf", "2.4e9", "--sf", "20e6", "--loss", "1.5"], d), 2);
    assert_eq!(code(&["info", "missing.csi"], d), 2);
    assert_eq!(code(&["loopback", "--profile", "no-such-profile"], d), 2);
    assert_eq!(code(&["clock", "--quad", "44,5"], d), 2);
    assert_eq!(code(&[], d), 2);
}

#[test]
fn runtime_failures_exit_1() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    std::fs::write(d.join("junk.csi"), b"CSF1\x01\x00\x00\x00\xff\xff").unwrap();
    assert_eq!(code(&["info", "junk.csi"], d), 1);
    std::fs::write(d.join("empty.csi"), EMPTY_CAPTURE).unwrap();
    assert_eq!(code(&["cfosfo", "empty.csi"], d), 1);
    assert_eq!(code(&["calibrate", "empty.csi", "--out", "t.txt"], d), 1);
}

#[test]
fn scan_is_deterministic_under_seed() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let args = |out: &'static str| {
        vec!["scan", "--cf", "2.412e9:5e6:2.417e9", "--sf", "20e6:20e6:40e6", "--repeat", "3", "--delay", "1e3", "--loss", "0.2", "--seed", "11", "--out", out]
    };
    let first = ok(&args("a.csi"), d);
    ok(&args("b.csi"), d);
    assert!(first.contains("4 grid points"), "{first}");
    let read = |p: &str| std::fs::read(d.join(p)).unwrap();
    assert_eq!(read("a.csi"), read("b.csi"));
    assert_eq!(read("a.json"), read("b.json"));

    let report: serde_json::Value = serde_json::from_slice(&read("a.json")).unwrap();
    assert_eq!(report["seed"], 11);
    assert_eq!(report["points"].as_array().unwrap().len(), 4);
}

#[test]
fn scan_cfo_is_recovered_by_cfosfo() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&["scan", "--cf", "2.412e9", "--sf", "20e6", "--repeat", "6", "--cfo", "5000", "--snr", "35", "--out", "c.csi"], d);
    let out = ok(&["cfosfo", "c.csi", "--out", "per_record.csv"], d);
    let cfo = number_after(&out, "weighted mean cfo");
    assert!((cfo - 5000.0).abs() < 50.0, "cfo {cfo}");
    let rows = std::fs::read_to_string(d.join("per_record.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 6);
}

#[test]
fn frontend_loopback_exports_type1_magnitude() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let out = ok(&["loopback", "--profile", "frontend", "--snr", "40", "--out", "lb.csi"], d);
    assert!(out.contains("fcs ok"), "{out}");
    ok(&["export", "lb.csi", "--kind", "mag", "--out", "mag.csv"], d);
    let s = series(&std::fs::read_to_string(d.join("mag.csv")).unwrap());
    assert_eq!(s.len(), 1);
    assert_eq!(s[0].1.len(), 56);
    assert_eq!(classify_magnitude(&s[0].1), DistortionType::Type1);
}

#[test]
fn flat_channel_exports_flat_magnitude() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&["loopback", "--profile", "clean", "--out", "flat.csi"], d);
    ok(&["export", "flat.csi", "--kind", "mag", "--out", "mag.csv"], d);
    let s = series(&std::fs::read_to_string(d.join("mag.csv")).unwrap());
    let v = &s[0].1;
    let spread = v.iter().cloned().fold(f64::MIN, f64::max) - v.iter().cloned().fold(f64::MAX, f64::min);
    assert!(spread < 0.01, "spread {spread} dB");
}

#[test]
fn empty_capture_exports_header_only() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    std::fs::write(d.join("empty.csi"), EMPTY_CAPTURE).unwrap();
    for kind in ["mag", "phase", "template", "stitched"] {
        ok(&["export", "empty.csi", "--kind", kind, "--out", "e.csv"], d);
        assert_eq!(std::fs::read_to_string(d.join("e.csv")).unwrap(), "subcarrier_or_freq,value,series_id\n");
    }
}

#[test]
fn calibrate_clean_and_stitch() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(
        &[
            "scan", "--cf", "2.412e9:10e6:2.432e9", "--sf", "20e6", "--repeat", "4", "--profile", "frontend", "--snr", "35",
            "--out", "fe.csi",
        ],
        d,
    );
    let cal = ok(&["calibrate", "fe.csi", "--out", "template.txt"], d);
    assert!(cal.contains("Type1"), "{cal}");

    let cleaned = ok(&["clean", "fe.csi", "--template", "template.txt", "--out", "clean.csi"], d);
    assert!(cleaned.contains("cleaned 24 of 24"), "{cleaned}");
    let variation = |file: &str| {
        ok(&["export", file, "--kind", "mag", "--out", "mag.csv"], d);
        let s = series(&std::fs::read_to_string(d.join("mag.csv")).unwrap());
        s.iter().map(|(_, v)| shape_metrics(v).total_variation).sum::<f64>() / s.len() as f64
    };
    let (raw_var, clean_var) = (variation("fe.csi"), variation("clean.csi"));
    assert!(clean_var < 0.25 * raw_var, "variation {raw_var} dB -> {clean_var} dB");

    let raw = ok(&["stitch", "fe.csi", "--out", "raw.csv"], d);
    let fixed = ok(&["stitch", "fe.csi", "--template", "template.txt", "--out", "fixed.csv"], d);
    let before = number_after(&raw, "overlap residual");
    let after = number_after(&fixed, "overlap residual");
    assert!(after < 0.5 * before, "residual {before} dB -> {after} dB");
    let csv = std::fs::read_to_string(d.join("fixed.csv")).unwrap();
    // 2412 - 8.75 MHz to 2432 + 8.75 MHz on a 312.5 kHz raster, less the three DC bins
    assert_eq!(csv.lines().count(), 1 + 121 - 3);
}

#[test]
fn info_lists_records() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    ok(&["scan", "--cf", "5.2e9", "--sf", "20e6", "--repeat", "2", "--out", "s.csi"], d);
    let out = ok(&["info", "s.csi"], d);
    assert!(out.contains("4 records"), "{out}");
    assert!(out.contains("cf=5200000305.000 Hz") || out.contains("cf=5199999390.000 Hz"), "{out}");
}
