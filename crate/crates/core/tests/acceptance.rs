//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::f64::consts::TAU;
use std::time::{Duration, Instant};

use csilab_core::capture::{read_capture, write_capture, CaptureRecord};
use csilab_core::clocking::{bandwidth_for_quad, quantize_carrier, Band, PllQuadruple};
use csilab_core::csikit::{
    build_distortion_template, classify_distortion, estimate_cfo_sfo, remove_distortion, shape_metrics, stitch,
    CsiFrame, DistortionType,
};
use csilab_core::echoprobe::{expand_range, run_scan, ScanPlan};
use csilab_core::impairments::{
    air_taps, apply_channel, butterworth_apply, butterworth_response, rx_chain, tx_chain, AirPath, ImpairmentProfile,
};
use csilab_core::phy::{
    assemble_frame, data_symbol_count, interleaver_permutation, ofdm_demodulate, ofdm_modulate, receive,
    BasebandBurst, ChannelMode, FrameConfig, GuardInterval, PhyMode, RateParams, RxOptions,
};
use csilab_core::simnet::{SimNet, TxParams, VirtualLink, VirtualNic};
use num_complex::{Complex32, Complex64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    ok: bool,
    detail: String,
}

fn pass(ok: bool, detail: impl Into<String>) -> Outcome {
    Outcome { ok, detail: detail.into() }
}

fn db(x: f64) -> f64 {
    20.0 * x.log10()
}

fn random_payload(n: usize, seed: u64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random()).collect()
}

fn padded(b: BasebandBurst, pad: usize) -> BasebandBurst {
    let mut b = b.delayed(pad);
    b.samples.extend(vec![Complex64::new(0.0, 0.0); pad]);
    b
}

fn table_ii() -> Outcome {
    let rows: [((u32, u32, u8), f64, f64); 7] = [
        ((22, 10, 1), 2.5e6, 5e6),
        ((22, 10, 0), 5e6, 10e6),
        ((22, 5, 1), 5e6, 10e6),
        ((22, 5, 0), 10e6, 20e6),
        ((33, 5, 0), 15e6, 30e6),
        ((44, 5, 0), 20e6, 40e6),
        ((88, 5, 0), 40e6, 80e6),
    ];
    let mut exact = 0;
    let mut total = 0;
    for ((d, r, c), bw0, bw1) in rows {
        for (h, want) in [(0u8, bw0), (1, bw1)] {
            total += 1;
            let q = PllQuadruple::new(d, r, c, h).unwrap();
            if bandwidth_for_quad(q).unwrap() == want {
                exact += 1;
            }
        }
    }
    pass(exact == total, format!("{exact}/{total} (quadruple, HT_2040) entries exact"))
}

fn quantization() -> Outcome {
    let q = quantize_carrier(5.2e9, Band::Band5G).unwrap();
    let lo = (q.lower - 5_199_999_389.0).abs();
    let hi = (q.upper - 5_200_000_305.0).abs();
    pass(lo <= 1.0 && hi <= 1.0, format!("lower {:.3} Hz, upper {:.3} Hz", q.lower, q.upper))
}

fn loopback() -> Outcome {
    let modes = [PhyMode::HT20, PhyMode::ht(ChannelMode::Ht40Plus), PhyMode::ht(ChannelMode::Ht40Minus), PhyMode::NON_HT];
    let (mut runs, mut bad, mut worst) = (0, 0, 0.0f64);
    for mode in modes {
        // legacy frames have no short guard interval
        let guards: &[GuardInterval] =
            if mode == PhyMode::NON_HT { &[GuardInterval::Long] } else { &[GuardInterval::Long, GuardInterval::Short] };
        for &guard in guards {
            for mcs in 0..8u8 {
                for seed in 0..3u64 {
                    runs += 1;
                    let payload = random_payload(40 + 97 * seed as usize + mcs as usize, seed * 31 + mcs as u64);
                    let cfg = FrameConfig::new(mode, mcs, payload).with_guard(guard).with_seed(1 + (seed as u8) * 40 + mcs);
                    let b = assemble_frame(&cfg).unwrap();
                    match receive(&b, mode, &RxOptions::default()) {
                        Ok(r) if r.fcs_ok && r.payload == cfg.payload => {
                            for v in &r.csi.values {
                                worst = worst.max((v - 1.0).norm());
                            }
                        }
                        _ => bad += 1,
                    }
                }
            }
        }
    }
    pass(bad == 0 && worst < 1e-9, format!("{}/{runs} frames bit-exact, max |H-1| = {worst:.1e}", runs - bad))
}

fn cfo_sfo_run(cfo: f64, sfo_ppm: f64, seed: u64) -> Option<(f64, f64)> {
    let mode = PhyMode::HT20;
    let mcs = 1;
    let n_dbps = RateParams::new(mode, mcs).n_dbps;
    let payload_len = (100 * n_dbps - 22) / 8 - 4;
    assert_eq!(data_symbol_count(payload_len + 4, n_dbps), 100);
    let cfg = FrameConfig::new(mode, mcs, random_payload(payload_len, seed)).with_seed(1 + (seed % 127) as u8);
    let b = padded(assemble_frame(&cfg).unwrap(), 200);
    let profile = ImpairmentProfile { cfo_hz: cfo, sfo_ppm, ..ImpairmentProfile::clean().with_snr(30.0) };
    let rx = receive(&apply_channel(&b, &profile, 0.0, seed), mode, &RxOptions::default()).ok()?;
    if !rx.fcs_ok {
        return None;
    }
    let est = estimate_cfo_sfo(&rx.raw_data_symbol_csi(), &rx.csi.grid.indices, rx.sym_duration, rx.csi.spacing()).ok()?;
    Some((est.cfo_hz, est.sfo_ppm))
}

fn cfo_sfo() -> Outcome {
    let mut worst_rel_cfo = 0.0f64;
    let mut worst_zero_cfo = 0.0f64;
    let mut worst_rel_sfo = 0.0f64;
    let mut worst_zero_sfo = 0.0f64;
    let mut failures = 0;
    for cfo in [-100e3, -5e3, 0.0, 5e3, 100e3] {
        for seed in 0..20 {
            match cfo_sfo_run(cfo, 0.0, 100 + seed) {
                Some((c, _)) if cfo == 0.0 => worst_zero_cfo = worst_zero_cfo.max(c.abs()),
                Some((c, _)) => worst_rel_cfo = worst_rel_cfo.max(((c - cfo) / cfo).abs()),
                None => failures += 1,
            }
        }
    }
    for sfo in [-20.0, 0.0, 20.0] {
        for seed in 0..20 {
            match cfo_sfo_run(0.0, sfo, 300 + seed) {
                Some((_, s)) if sfo == 0.0 => worst_zero_sfo = worst_zero_sfo.max(s.abs()),
                Some((_, s)) => worst_rel_sfo = worst_rel_sfo.max(((s - sfo) / sfo).abs()),
                None => failures += 1,
            }
        }
    }
    // a zero SFO is held to 5% of the 20 ppm scale
    let ok = failures == 0
        && worst_rel_cfo <= 0.01
        && worst_zero_cfo < 50.0
        && worst_rel_sfo <= 0.05
        && worst_zero_sfo <= 1.0;
    pass(
        ok,
        format!(
            "cfo rel err {:.3}% (zero case {:.1} Hz), sfo rel err {:.2}% (zero case {:.2} ppm), {failures} decode failures",
            100.0 * worst_rel_cfo,
            worst_zero_cfo,
            100.0 * worst_rel_sfo,
            worst_zero_sfo
        ),
    )
}

/// CSI of one noiseless frame sent through Tx chain and Rx chain of `profile`.
fn chain_csi(profile: &ImpairmentProfile, mode: PhyMode, fs: f64) -> CsiFrame {
    let cfg = FrameConfig::new(mode, 1, random_payload(60, 3));
    let mut b = padded(assemble_frame(&cfg).unwrap(), 64);
    b.sample_rate = fs;
    let out = rx_chain(&tx_chain(&b, profile, mode).unwrap(), profile, mode).unwrap();
    let r = receive(&out, mode, &RxOptions::default()).unwrap();
    assert!(r.fcs_ok);
    r.csi
}

fn taxonomy() -> Outcome {
    let p = ImpairmentProfile::frontend();
    let classify = |f: &CsiFrame| classify_distortion(&build_distortion_template(std::slice::from_ref(f)).unwrap());

    let ht20 = chain_csi(&p, PhyMode::HT20, 20e6);
    let m = shape_metrics(&ht20.mag_db());
    let type1 = classify(&ht20) == DistortionType::Type1;
    let shoulder = (m.left_shoulder - m.right_shoulder).abs();

    let narrow = chain_csi(&p, PhyMode::HT20, 5e6);
    let type2 = classify(&narrow) == DistortionType::Type2;

    let mut half_ok = true;
    let mut worst = 0.0f64;
    for cm in [ChannelMode::Ht40Plus, ChannelMode::Ht40Minus] {
        let full = chain_csi(&p, PhyMode::ht(cm), 40e6);
        let half = chain_csi(&p, PhyMode::half_band(cm), 40e6);
        half_ok &= classify(&half) == DistortionType::Type3;
        // both are sampled at 40 MHz, so the tone grids coincide
        for (k, v) in half.grid.indices.iter().zip(&half.values) {
            if let Some(i) = full.grid.position(*k) {
                worst = worst.max((db(v.norm()) - db(full.values[i].norm())).abs());
            }
        }
    }
    pass(
        type1 && shoulder < 1.5 && type2 && half_ok && worst <= 0.5,
        format!(
            "20 MHz {:?} (shoulder gap {shoulder:.2} dB), 5 MHz {:?}, half-band Type3 {half_ok}, half vs full {worst:.3} dB",
            classify(&ht20),
            classify(&narrow)
        ),
    )
}

fn adjacent_capture(cf: f64, paths: &[AirPath], frames: usize, seed: u64) -> CsiFrame {
    let mode = PhyMode::HT20;
    let fs = 20e6;
    let front = ImpairmentProfile::frontend();
    let mut channel = ImpairmentProfile::clean().with_snr(30.0);
    channel.multipath = air_taps(paths, cf, fs);
    let mut sum = vec![Complex64::new(0.0, 0.0); 56];
    let mut last = None;
    for i in 0..frames {
        let cfg = FrameConfig::new(mode, 1, random_payload(80, seed + i as u64));
        let mut b = padded(assemble_frame(&cfg).unwrap(), 64);
        b.center_freq = cf;
        let b = tx_chain(&b, &front, mode).unwrap();
        let b = apply_channel(&b, &channel, 0.0, seed * 1000 + i as u64);
        let r = receive(&rx_chain(&b, &front, mode).unwrap(), mode, &RxOptions::default()).unwrap();
        assert!(r.fcs_ok);
        for (s, v) in sum.iter_mut().zip(&r.csi.values) {
            *s += v / frames as f64;
        }
        last = Some(r.csi);
    }
    let mut f = last.unwrap();
    f.values = sum;
    f.center_freq = cf;
    f
}

fn calibration() -> Outcome {
    let carriers = [2.412e9, 2.422e9, 2.432e9, 2.442e9];
    let air = [
        AirPath { delay_s: 0.0, gain: 1.0 },
        AirPath { delay_s: 60e-9, gain: 0.45 },
        AirPath { delay_s: 145e-9, gain: 0.25 },
    ];
    let cable = [AirPath { delay_s: 0.0, gain: 1.0 }];
    let reference: Vec<CsiFrame> = carriers.iter().map(|&cf| adjacent_capture(cf, &cable, 50, 7)).collect();
    let template = build_distortion_template(&reference).unwrap();
    let measured: Vec<CsiFrame> = carriers.iter().map(|&cf| adjacent_capture(cf, &air, 50, 11)).collect();
    let cleaned: Vec<CsiFrame> = measured.iter().map(|f| remove_distortion(f, &template).unwrap()).collect();
    let raw = stitch(&measured).unwrap();
    let cal = stitch(&cleaned).unwrap();
    let tones = 4 * 56 - raw.overlap_residual.n_tones;
    let r0 = raw.overlap_residual;
    let r1 = cal.overlap_residual;
    let ok = r1.mag_db_rms <= 0.1 * r0.mag_db_rms
        && r1.mag_db_rms < 0.2
        && r1.phase_rad_rms < 0.05
        && cal.wideband.len() == tones
        && raw.wideband.len() == tones;
    pass(
        ok,
        format!(
            "overlap mag {:.3} -> {:.3} dB (ratio {:.3}), phase {:.3} -> {:.4} rad, {} tones kept",
            r0.mag_db_rms,
            r1.mag_db_rms,
            r1.mag_db_rms / r0.mag_db_rms,
            r0.phase_rad_rms,
            r1.phase_rad_rms,
            cal.wideband.len()
        ),
    )
}

fn scan_net(seed: u64, loss: f64) -> SimNet {
    let p = ImpairmentProfile::clean().with_snr(30.0);
    let nics = [VirtualNic::new(1, p.clone(), TxParams::default()), VirtualNic::new(2, p.clone(), TxParams::default())];
    SimNet::new(nics, VirtualLink::new(p, seed).with_loss(loss)).unwrap()
}

fn paper_plan() -> ScanPlan {
    let mut plan = ScanPlan::new(expand_range("2.3e9:5e6:2.4e9").unwrap(), expand_range("20e6:5e6:60e6").unwrap(), 20);
    plan.delay_us = 5000;
    plan.tx.mcs = 2;
    plan.tx.n_ess = 1;
    plan
}

fn echoprobe_scan() -> Outcome {
    let plan = paper_plan();
    let a = run_scan(&plan, &mut scan_net(7, 0.0)).unwrap();
    let b = run_scan(&plan, &mut scan_net(7, 0.0)).unwrap();
    let bytes_a = write_capture(&a.capture).unwrap();
    let identical = bytes_a == write_capture(&b.capture).unwrap() && a.report.to_json() == b.report.to_json();

    let mut lossy = Vec::new();
    for seed in 0..10 {
        lossy.push(run_scan(&plan, &mut scan_net(1000 + seed, 0.1)).unwrap().report.records);
    }
    let mean = lossy.iter().sum::<usize>() as f64 / lossy.len() as f64;
    pass(
        a.report.records == 3780 && identical && mean >= 3775.0,
        format!(
            "lossless {} records ({} capture records, max rtt {} us), byte-identical rerun {identical}, 10% loss mean {mean:.1} (min {})",
            a.report.records,
            a.capture.len(),
            a.report.max_rtt_us,
            lossy.iter().min().unwrap()
        ),
    )
}

/// Interleaver index table straight from the two-permutation definition.
fn interleaver_oracle(n_cbps: usize, n_bpsc: usize, cols: usize) -> Vec<usize> {
    let s = (n_bpsc / 2).max(1);
    (0..n_cbps)
        .map(|k| {
            let i = (n_cbps / cols) * (k % cols) + k / cols;
            s * (i / s) + (i + n_cbps - (cols * i / n_cbps)) % s
        })
        .collect()
}

fn oracles() -> Outcome {
    let mut il_ok = 0;
    let mut il_total = 0;
    for (n_sd, cols) in [(52usize, 13usize), (108, 18)] {
        for n_bpsc in [1usize, 2, 4, 6] {
            il_total += 1;
            let n_cbps = n_sd * n_bpsc;
            if interleaver_permutation(n_cbps, n_bpsc) == interleaver_oracle(n_cbps, n_bpsc, cols) {
                il_ok += 1;
            }
        }
    }

    let mut bw_worst = 0.0f64;
    for order in [2u32, 5] {
        let fc = 10e6;
        let fs = 32.0 * fc;
        for ratio in [0.5, 1.0, 2.0] {
            let f = ratio * fc;
            let n = 1 << 15;
            let x = BasebandBurst::new((0..n).map(|i| Complex64::from_polar(1.0, TAU * f * i as f64 / fs)).collect(), fs);
            let y = butterworth_apply(&x, order, fc).unwrap();
            let tail = &y.samples[n / 2..];
            let measured = (tail.iter().map(|v| v.norm_sqr()).sum::<f64>() / tail.len() as f64).sqrt();
            let analytic = 1.0 / (1.0 + ratio.powi(2 * order as i32)).sqrt();
            bw_worst = bw_worst.max((db(measured) - db(analytic)).abs());
            // the analog prototype must agree exactly
            bw_worst = bw_worst.max((db(butterworth_response(f, order, fc).norm()) - db(analytic)).abs());
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut ofdm_worst = 0.0f64;
    for n in [64usize, 128] {
        for _ in 0..50 {
            let x: Vec<Complex64> =
                (0..n).map(|_| Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
            let t = ofdm_modulate(&x, n / 4, 1.0 / (n as f64).sqrt());
            let y = ofdm_demodulate(&t[n / 4..], 1.0 / (n as f64).sqrt());
            for (a, b) in x.iter().zip(&y) {
                ofdm_worst = ofdm_worst.max((a - b).norm());
            }
        }
    }
    pass(
        il_ok == il_total && bw_worst <= 0.5 && ofdm_worst < 1e-12,
        format!("interleaver {il_ok}/{il_total}, Butterworth max dev {bw_worst:.3} dB, OFDM round trip {ofdm_worst:.1e}"),
    )
}

fn random_record(rng: &mut ChaCha8Rng) -> CaptureRecord {
    let n = rng.random_range(1..=114usize);
    let mut tones: Vec<i16> = Vec::with_capacity(n);
    let mut k: i16 = rng.random_range(-200..-100);
    for _ in 0..n {
        k += rng.random_range(1..4);
        tones.push(k);
    }
    let n_sym = rng.random_range(0..6usize);
    let mut c = || Complex32::new(rng.random_range(-1e3..1e3), rng.random_range(-1e3..1e3));
    let csi = (0..n).map(|_| c()).collect();
    let data_csi = (0..n_sym).map(|_| (0..n).map(|_| c()).collect()).collect();
    CaptureRecord {
        timestamp_us: rng.random(),
        cf_hz: rng.random(),
        sf_hz: rng.random(),
        channel_mode: rng.random_range(0..6),
        mcs: rng.random(),
        seed: rng.random(),
        tone_indices: tones,
        csi,
        data_csi,
        cfo_est_uhz: rng.random(),
        evm_cdb: rng.random(),
    }
}

fn file_round_trip() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let recs: Vec<CaptureRecord> = (0..1000).map(|_| random_record(&mut rng)).collect();
    let bytes = write_capture(&recs).unwrap();
    let back = read_capture(&bytes).unwrap();
    let again = write_capture(&back).unwrap();
    pass(back == recs && again == bytes, format!("{} records, {} bytes", back.len(), bytes.len()))
}

fn main() {
    let criteria: [(u32, &str, fn() -> Outcome, Duration); 9] = [
        (1, "Table II bandwidths", table_ii, Duration::from_secs(1)),
        (2, "5.2 GHz carrier quantization", quantization, Duration::from_secs(1)),
        (3, "PHY loopback", loopback, Duration::from_secs(60)),
        (4, "CFO/SFO recovery", cfo_sfo, Duration::from_secs(120)),
        (5, "distortion taxonomy", taxonomy, Duration::from_secs(60)),
        (6, "calibration efficacy", calibration, Duration::from_secs(120)),
        (7, "EchoProbe scan", echoprobe_scan, Duration::from_secs(300)),
        (8, "oracle equivalence", oracles, Duration::from_secs(60)),
        (9, "capture file round trip", file_round_trip, Duration::from_secs(10)),
    ];
    let only: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (n, name, run, limit) in criteria {
        if !only.is_empty() && !only.contains(&n) {
            continue;
        }
        let t = Instant::now();
        let out = run();
        let took = t.elapsed();
        let ok = out.ok && took <= limit;
        if !ok {
            failed += 1;
        }
        println!(
            "criterion {n} {}: {name}: {} [{:.2} s, limit {} s]",
            if ok { "PASS" } else { "FAIL" },
            out.detail,
            took.as_secs_f64(),
            limit.as_secs()
        );
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
