use std::collections::BTreeMap;
use std::fmt::Write as _;

use clap::ValueEnum;

use csilab_core::capture::CaptureRecord;
use csilab_core::csikit::{build_distortion_template, stitch, unwrap_phase, CsiFrame};

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Kind {
    /// CSI magnitude in dB per record.
    Mag,
    /// Unwrapped CSI phase per record.
    Phase,
    /// Distortion template magnitude and phase per sample rate.
    Template,
    /// Stitched wideband magnitude per sample rate.
    Stitched,
}

const HEADER: &str = "subcarrier_or_freq,value,series_id\n";

/// CSV plot data: one row per point, series keyed by record or sample rate.
/// The second value lists sample-rate groups left out because they could not
/// be stitched.
pub fn plotdata(recs: &[CaptureRecord], kind: Kind, carrier_snap: f64) -> anyhow::Result<(String, Vec<String>)> {
    let mut out = String::from(HEADER);
    let mut skipped = Vec::new();
    let frames = recs.iter().map(|r| r.to_frame()).collect::<Result<Vec<_>, _>>()?;
    match kind {
        Kind::Mag => {
            for (i, f) in frames.iter().enumerate() {
                for (k, m) in f.grid.indices.iter().zip(f.mag_db()) {
                    writeln!(out, "{k},{m:.6},{i}")?;
                }
            }
        }
        Kind::Phase => {
            for (i, f) in frames.iter().enumerate() {
                let raw: Vec<f64> = f.values.iter().map(|v| v.arg()).collect();
                for (k, p) in f.grid.indices.iter().zip(unwrap_phase(&raw)) {
                    writeln!(out, "{k},{p:.6},{i}")?;
                }
            }
        }
        Kind::Template => {
            for (sf, group) in by_rate(frames) {
                let t = build_distortion_template(&group)?;
                for (k, m) in t.indices.iter().zip(&t.mag_db) {
                    writeln!(out, "{k},{m:.6},mag_{sf}")?;
                }
                for (k, p) in t.indices.iter().zip(&t.phase_rad) {
                    writeln!(out, "{k},{p:.6},phase_{sf}")?;
                }
            }
        }
        Kind::Stitched => {
            let groups = by_rate(frames);
            let n_groups = groups.len();
            for (sf, mut group) in groups {
                snap_carriers(&mut group, carrier_snap);
                match stitch(&group) {
                    Ok(s) => {
                        for (freq, v) in &s.wideband {
                            writeln!(out, "{freq:.3},{:.6},{sf}", 20.0 * v.norm().log10())?;
                        }
                    }
                    Err(e) => skipped.push(format!("sample rate {sf} Hz: {e}")),
                }
            }
            if n_groups > 0 && skipped.len() == n_groups {
                anyhow::bail!("no sample-rate group could be stitched ({})", skipped.join("; "));
            }
        }
    }
    Ok((out, skipped))
}

fn by_rate(frames: Vec<CsiFrame>) -> BTreeMap<u64, Vec<CsiFrame>> {
    let mut groups: BTreeMap<u64, Vec<CsiFrame>> = BTreeMap::new();
    for f in frames {
        groups.entry(f.bandwidth.round() as u64).or_default().push(f);
    }
    groups
}

/// Round each frame's carrier to a multiple of `step` Hz.
pub fn snap_carriers(frames: &mut [CsiFrame], step: f64) {
    if step > 0.0 {
        for f in frames {
            f.center_freq = (f.center_freq / step).round() * step;
        }
    }
}
