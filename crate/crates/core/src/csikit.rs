//! CSI data model, calibration and per-packet CFO/SFO analysis.
//!
//! A measured frame is modelled as `H = H_dist * H_err * H_air`. The
//! distortion `H_dist` is estimated from calibration captures as a
//! [`DistortionTemplate`] (magnitude in dB, detrended phase) and removed in
//! the magnitude and phase domains. `H_err` is the linear phase left by
//! timing and is never touched by calibration.

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::phy::{PhyMode, SubcarrierGrid};

/// Who measured a frame and with which transmit parameters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SourceMeta {
    pub tx_id: u32,
    pub rx_id: u32,
    pub mcs: u8,
    pub seed: u8,
}

/// Per-packet CSI on a signed subcarrier grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiFrame {
    pub values: Vec<Complex64>,
    pub grid: SubcarrierGrid,
    pub mode: PhyMode,
    pub center_freq: f64,
    /// Baseband sample rate the frame was received at.
    pub bandwidth: f64,
    /// Virtual time, seconds.
    pub timestamp: f64,
    pub meta: SourceMeta,
}

impl CsiFrame {
    pub fn new(values: Vec<Complex64>, grid: SubcarrierGrid, mode: PhyMode, center_freq: f64, bandwidth: f64) -> Self {
        CsiFrame { values, grid, mode, center_freq, bandwidth, timestamp: 0.0, meta: SourceMeta::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.grid.len() {
            return Err(Error::Length { expected: self.grid.len(), got: self.values.len() });
        }
        if self.values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::domain("CSI contains non-finite values"));
        }
        Ok(())
    }

    pub fn nfft(&self) -> usize {
        if self.mode.channel_mode.is_40() {
            128
        } else {
            64
        }
    }

    pub fn spacing(&self) -> f64 {
        self.bandwidth / self.nfft() as f64
    }

    /// Absolute RF frequency of each tone.
    pub fn tone_freqs(&self) -> Vec<f64> {
        let df = self.spacing();
        self.grid.indices.iter().map(|&k| self.center_freq + k as f64 * df).collect()
    }

    pub fn mag_db(&self) -> Vec<f64> {
        self.values.iter().map(|v| 20.0 * v.norm().log10()).collect()
    }

    pub fn combo_key(&self) -> ComboKey {
        ComboKey { tx_id: self.meta.tx_id, rx_id: self.meta.rx_id, mode: self.mode.code(), bandwidth: self.bandwidth }
    }

    pub fn scaled(&self, c: Complex64) -> Self {
        let mut f = self.clone();
        for v in &mut f.values {
            *v *= c;
        }
        f
    }
}

/// `Y / X` per tone.
pub fn data_symbol_csi(y: &[Complex64], x: &[Complex64]) -> Result<Vec<Complex64>> {
    if y.len() != x.len() {
        return Err(Error::Length { expected: x.len(), got: y.len() });
    }
    y.iter()
        .zip(x)
        .enumerate()
        .map(|(i, (a, b))| {
            if b.norm_sqr() == 0.0 {
                Err(Error::domain(format!("reference symbol is zero on tone position {i}")))
            } else {
                Ok(a / b)
            }
        })
        .collect()
}

/// Principal value of `angle(next / cur)` per tone, in (-pi, pi].
pub fn adjacent_phase_diff(cur: &[Complex64], next: &[Complex64]) -> Vec<f64> {
    cur.iter()
        .zip(next)
        .map(|(a, b)| {
            let d = (b * a.conj()).arg();
            if d <= -PI {
                d + 2.0 * PI
            } else {
                d
            }
        })
        .collect()
}

pub fn unwrap_phase(values: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut offset = 0.0;
    for (i, &v) in values.iter().enumerate() {
        if i > 0 {
            let mut d = v - values[i - 1];
            while d > PI {
                d -= 2.0 * PI;
            }
            while d <= -PI {
                d += 2.0 * PI;
            }
            offset += d - (v - values[i - 1]);
        }
        out.push(v + offset);
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detrended {
    pub detrended: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
}

/// Remove the least-squares line over `indices`.
pub fn detrend_linear(values: &[f64], indices: &[i32]) -> Result<Detrended> {
    if values.len() != indices.len() {
        return Err(Error::Length { expected: indices.len(), got: values.len() });
    }
    if values.is_empty() {
        return Err(Error::domain("nothing to detrend"));
    }
    let n = values.len() as f64;
    let xm = indices.iter().map(|&k| k as f64).sum::<f64>() / n;
    let ym = values.iter().sum::<f64>() / n;
    let sxx: f64 = indices.iter().map(|&k| (k as f64 - xm).powi(2)).sum();
    let sxy: f64 = indices.iter().zip(values).map(|(&k, &y)| (k as f64 - xm) * (y - ym)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = ym - slope * xm;
    let detrended = indices.iter().zip(values).map(|(&k, &y)| y - intercept - slope * k as f64).collect();
    Ok(Detrended { detrended, slope, intercept })
}

/// Per-packet CFO/SFO estimate from a data-symbol CSI train.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfoSfoEstimate {
    pub cfo_hz: f64,
    pub sfo_ppm: f64,
    pub residual_rms: f64,
    pub n_symbols: usize,
}

impl CfoSfoEstimate {
    /// Residual phase RMS above which the channel is assumed to have
    /// changed during the frame.
    pub const RESIDUAL_LIMIT_RAD: f64 = 0.3;

    pub fn model_violated(&self) -> bool {
        self.residual_rms > Self::RESIDUAL_LIMIT_RAD
    }
}

/// Fit the phase evolution of a CSI train to `2*pi*t_sym*(cfo + k*df*zeta)`
/// per symbol. Phases are unwrapped per tone across symbols; each tone's
/// phase rate is fitted with its own intercept, then the rates are fitted
/// linearly in `k`.
pub fn estimate_cfo_sfo(train: &[Vec<Complex64>], indices: &[i32], t_sym: f64, spacing: f64) -> Result<CfoSfoEstimate> {
    if train.len() < 2 {
        return Err(Error::domain(format!("need at least 2 symbols, got {}", train.len())));
    }
    if !(t_sym > 0.0 && spacing > 0.0) {
        return Err(Error::domain("symbol duration and tone spacing must be positive"));
    }
    for sym in train {
        if sym.len() != indices.len() {
            return Err(Error::Length { expected: indices.len(), got: sym.len() });
        }
    }
    let n_sym = train.len();
    let n_k = indices.len();
    // cumulative phase per tone, theta[k][i]
    let mut theta = vec![vec![0.0; n_sym]; n_k];
    for i in 1..n_sym {
        let d = adjacent_phase_diff(&train[i - 1], &train[i]);
        for (t, dk) in theta.iter_mut().zip(d) {
            t[i] = t[i - 1] + dk;
        }
    }
    let im = (n_sym - 1) as f64 / 2.0;
    let sii: f64 = (0..n_sym).map(|i| (i as f64 - im).powi(2)).sum();
    let rates: Vec<f64> = theta
        .iter()
        .map(|t| {
            let tm = t.iter().sum::<f64>() / n_sym as f64;
            t.iter().enumerate().map(|(i, v)| (i as f64 - im) * (v - tm)).sum::<f64>() / sii
        })
        .collect();
    let fit = detrend_linear(&rates, indices)?;
    let (a, b) = (fit.intercept, fit.slope);

    let mut ss = 0.0;
    for (kk, t) in theta.iter().enumerate() {
        let r = a + b * indices[kk] as f64;
        let tm = t.iter().sum::<f64>() / n_sym as f64;
        for (i, v) in t.iter().enumerate() {
            let e = v - tm - r * (i as f64 - im);
            ss += e * e;
        }
    }
    let scale = 2.0 * PI * t_sym;
    Ok(CfoSfoEstimate {
        cfo_hz: a / scale,
        sfo_ppm: b / (scale * spacing) * 1e6,
        residual_rms: (ss / (n_sym * n_k) as f64).sqrt(),
        n_symbols: n_sym,
    })
}

/// Identity of a transmitter/receiver/channel-mode calibration pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComboKey {
    pub tx_id: u32,
    pub rx_id: u32,
    pub mode: u8,
    pub bandwidth: f64,
}

impl ComboKey {
    fn matches(&self, other: &ComboKey) -> bool {
        self.tx_id == other.tx_id
            && self.rx_id == other.rx_id
            && self.mode == other.mode
            && (self.bandwidth - other.bandwidth).abs() < 1e-3
    }
}

/// Averaged front-end distortion for one [`ComboKey`].
#[derive(Debug, Clone, PartialEq)]
pub struct DistortionTemplate {
    pub indices: Vec<i32>,
    pub mag_db: Vec<f64>,
    /// Unwrapped, zero mean, zero best-fit slope.
    pub phase_rad: Vec<f64>,
    pub n_frames: usize,
    pub combo_key: ComboKey,
}

fn detrended_phase(frame: &CsiFrame) -> Result<Vec<f64>> {
    let ph: Vec<f64> = frame.values.iter().map(|v| v.arg()).collect();
    Ok(detrend_linear(&unwrap_phase(&ph), &frame.grid.indices)?.detrended)
}

pub fn build_distortion_template(frames: &[CsiFrame]) -> Result<DistortionTemplate> {
    let first = frames.first().ok_or_else(|| Error::domain("no frames to build a template from"))?;
    let key = first.combo_key();
    let indices = first.grid.indices.clone();
    let n = indices.len();
    let mut mag = vec![0.0; n];
    let mut ph = vec![0.0; n];
    for f in frames {
        f.validate()?;
        if !key.matches(&f.combo_key()) {
            return Err(Error::domain("frames belong to different tx/rx/mode/bandwidth combinations"));
        }
        if f.grid.indices != indices {
            return Err(Error::domain("frames use different subcarrier grids"));
        }
        for (m, d) in mag.iter_mut().zip(f.mag_db()) {
            *m += d;
        }
        for (p, d) in ph.iter_mut().zip(detrended_phase(f)?) {
            *p += d;
        }
    }
    let nf = frames.len() as f64;
    mag.iter_mut().for_each(|m| *m /= nf);
    ph.iter_mut().for_each(|p| *p /= nf);
    let phase_rad = detrend_linear(&ph, &indices)?.detrended;
    Ok(DistortionTemplate { indices, mag_db: mag, phase_rad, n_frames: frames.len(), combo_key: key })
}

/// Subtract a template in the magnitude (dB) and phase domains.
pub fn remove_distortion(frame: &CsiFrame, template: &DistortionTemplate) -> Result<CsiFrame> {
    if frame.grid.indices != template.indices {
        return Err(Error::domain("frame and template grids differ"));
    }
    if frame.mode.code() != template.combo_key.mode {
        return Err(Error::domain("frame channel mode differs from the template's"));
    }
    let ph: Vec<f64> = frame.values.iter().map(|v| v.arg()).collect();
    let ph = unwrap_phase(&ph);
    let mut out = frame.clone();
    for (i, v) in out.values.iter_mut().enumerate() {
        let m = 20.0 * v.norm().log10() - template.mag_db[i];
        *v = Complex64::from_polar(10f64.powf(m / 20.0), ph[i] - template.phase_rad[i]);
    }
    Ok(out)
}

impl DistortionTemplate {
    pub const HEADER: &'static str = "csilab-template v1";

    pub fn to_text(&self) -> String {
        let k = &self.combo_key;
        let mut s = String::new();
        let _ = writeln!(s, "{}", Self::HEADER);
        let _ = writeln!(s, "tx_id = {}", k.tx_id);
        let _ = writeln!(s, "rx_id = {}", k.rx_id);
        let _ = writeln!(s, "mode = {}", k.mode);
        let _ = writeln!(s, "bandwidth_hz = {}", k.bandwidth);
        let _ = writeln!(s, "n_frames = {}", self.n_frames);
        let _ = writeln!(s, "# subcarrier mag_db phase_rad");
        for i in 0..self.indices.len() {
            let _ = writeln!(s, "{} {:e} {:e}", self.indices[i], self.mag_db[i], self.phase_rad[i]);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("template: {m}"));
        let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
        if lines.next() != Some(Self::HEADER) {
            return Err(bad("missing or unsupported header"));
        }
        let mut key = ComboKey { tx_id: 0, rx_id: 0, mode: 0, bandwidth: 0.0 };
        let mut n_frames = 0;
        let (mut indices, mut mag_db, mut phase_rad) = (Vec::new(), Vec::new(), Vec::new());
        for line in lines {
            if line.starts_with('#') {
                continue;
            }
            if let Some((k, v)) = line.split_once('=') {
                let v = v.trim();
                let perr = |_| bad(&format!("bad value in '{line}'"));
                match k.trim() {
                    "tx_id" => key.tx_id = v.parse().map_err(|_| bad(line))?,
                    "rx_id" => key.rx_id = v.parse().map_err(|_| bad(line))?,
                    "mode" => key.mode = v.parse().map_err(|_| bad(line))?,
                    "bandwidth_hz" => key.bandwidth = v.parse().map_err(perr)?,
                    "n_frames" => n_frames = v.parse().map_err(|_| bad(line))?,
                    other => return Err(bad(&format!("unknown key '{other}'"))),
                }
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad(&format!("malformed row '{line}'")));
            }
            indices.push(f[0].parse().map_err(|_| bad(line))?);
            mag_db.push(f[1].parse().map_err(|_| bad(line))?);
            phase_rad.push(f[2].parse().map_err(|_| bad(line))?);
        }
        if indices.is_empty() || n_frames == 0 {
            return Err(bad("no rows or zero frame count"));
        }
        Ok(DistortionTemplate { indices, mag_db, phase_rad, n_frames, combo_key: key })
    }
}

/// Distortion classes of the front-end taxonomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DistortionType {
    /// M-shaped magnitude, symmetric.
    Type1,
    /// Inverted-V magnitude peaking at DC.
    Type2,
    /// One side of an M: strongly asymmetric.
    Type3,
    Flat,
    Unclassified,
}

/// Shape measurements behind [`classify_distortion`], all in dB.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeMetrics {
    pub total_variation: f64,
    /// Largest level difference between mirrored tone positions.
    pub asymmetry: f64,
    pub left_shoulder: f64,
    pub right_shoulder: f64,
    /// Lower shoulder minus the lowest central level.
    pub center_dip: f64,
    /// Lower shoulder minus the higher band edge.
    pub edge_rolloff: f64,
    /// Position of the maximum relative to the centre, as a fraction of the width.
    pub argmax_offset: f64,
}

pub fn shape_metrics(mag_db: &[f64]) -> ShapeMetrics {
    let n = mag_db.len();
    let max = mag_db.iter().cloned().fold(f64::MIN, f64::max);
    let min = mag_db.iter().cloned().fold(f64::MAX, f64::min);
    let asymmetry = (0..n / 2).map(|i| (mag_db[i] - mag_db[n - 1 - i]).abs()).fold(0.0, f64::max);
    let half = n / 2;
    let left_shoulder = mag_db[..half].iter().cloned().fold(f64::MIN, f64::max);
    let right_shoulder = mag_db[n - half..].iter().cloned().fold(f64::MIN, f64::max);
    let c = n / 2;
    let lo = c.saturating_sub(2);
    let hi = (c + 2).min(n);
    let center = mag_db[lo..hi].iter().cloned().fold(f64::MAX, f64::min);
    let shoulder = left_shoulder.min(right_shoulder);
    let edge = mag_db[0].max(mag_db[n - 1]);
    let argmax = mag_db.iter().enumerate().fold((0, f64::MIN), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0;
    ShapeMetrics {
        total_variation: max - min,
        asymmetry,
        left_shoulder,
        right_shoulder,
        center_dip: shoulder - center,
        edge_rolloff: shoulder - edge,
        argmax_offset: (argmax as f64 - (n as f64 - 1.0) / 2.0) / n as f64,
    }
}

pub fn classify_distortion(template: &DistortionTemplate) -> DistortionType {
    classify_magnitude(&template.mag_db)
}

/// Classify a magnitude response (dB, ordered by tone index).
pub fn classify_magnitude(mag_db: &[f64]) -> DistortionType {
    if mag_db.len() < 4 {
        return DistortionType::Unclassified;
    }
    let m = shape_metrics(mag_db);
    if m.total_variation < 0.5 {
        DistortionType::Flat
    } else if m.asymmetry > 1.5 {
        DistortionType::Type3
    } else if m.center_dip >= 0.5 && m.edge_rolloff >= 3.0 {
        DistortionType::Type1
    } else if m.argmax_offset.abs() <= 0.1 {
        DistortionType::Type2
    } else {
        DistortionType::Unclassified
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct OverlapResidual {
    pub mag_db_rms: f64,
    pub phase_rad_rms: f64,
    pub n_tones: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stitched {
    /// (absolute frequency, CSI), strictly increasing in frequency.
    pub wideband: Vec<(f64, Complex64)>,
    pub overlap_residual: OverlapResidual,
}

/// Absolute frequencies shared (within 1 Hz) by two tone lists.
pub fn shared_tone_freqs(a: &[f64], b: &[f64]) -> Vec<f64> {
    let keys: HashSet<i64> = b.iter().map(|f| f.round() as i64).collect();
    a.iter()
        .filter(|f| {
            let r = f.round() as i64;
            keys.contains(&r) || keys.contains(&(r - 1)) || keys.contains(&(r + 1))
        })
        .copied()
        .collect()
}

/// Merge frames from adjacent, overlapping channels. Each new frame is
/// aligned to the accumulated spectrum with one least-squares complex
/// scale, then overlapping tones are averaged.
pub fn stitch(frames: &[CsiFrame]) -> Result<Stitched> {
    if frames.is_empty() {
        return Err(Error::domain("nothing to stitch"));
    }
    let mut order: Vec<&CsiFrame> = frames.iter().collect();
    order.sort_by(|a, b| a.center_freq.partial_cmp(&b.center_freq).unwrap());
    // (freq, sum, count)
    let mut acc: Vec<(f64, Complex64, usize)> = Vec::new();
    let (mut ss_mag, mut ss_ph, mut n_ov) = (0.0, 0.0, 0usize);
    for (fi, f) in order.iter().enumerate() {
        f.validate()?;
        let freqs = f.tone_freqs();
        let mut pairs = Vec::new();
        for (t, &fr) in freqs.iter().enumerate() {
            let pos = acc.partition_point(|e| e.0 < fr - 1.0);
            if pos < acc.len() && (acc[pos].0 - fr).abs() <= 1.0 {
                pairs.push((t, pos));
            }
        }
        if fi > 0 && pairs.is_empty() {
            return Err(Error::domain(format!(
                "frame at {} Hz shares no tone with the frames below it",
                f.center_freq
            )));
        }
        let alpha = if pairs.is_empty() {
            Complex64::new(1.0, 0.0)
        } else {
            let mut num = Complex64::new(0.0, 0.0);
            let mut den = 0.0;
            for &(t, p) in &pairs {
                let mean = acc[p].1 / acc[p].2 as f64;
                num += mean * f.values[t].conj();
                den += f.values[t].norm_sqr();
            }
            if den > 0.0 {
                num / den
            } else {
                Complex64::new(1.0, 0.0)
            }
        };
        for &(t, p) in &pairs {
            let mean = acc[p].1 / acc[p].2 as f64;
            let v = f.values[t] * alpha;
            ss_mag += (20.0 * (v.norm() / mean.norm()).log10()).powi(2);
            ss_ph += (v * mean.conj()).arg().powi(2);
            n_ov += 1;
        }
        let matched: HashSet<usize> = pairs.iter().map(|p| p.0).collect();
        for &(t, p) in &pairs {
            acc[p].1 += f.values[t] * alpha;
            acc[p].2 += 1;
        }
        for (t, &fr) in freqs.iter().enumerate() {
            if !matched.contains(&t) {
                let pos = acc.partition_point(|e| e.0 < fr);
                acc.insert(pos, (fr, f.values[t] * alpha, 1));
            }
        }
    }
    let rms = |s: f64| if n_ov > 0 { (s / n_ov as f64).sqrt() } else { 0.0 };
    Ok(Stitched {
        wideband: acc.into_iter().map(|(f, s, c)| (f, s / c as f64)).collect(),
        overlap_residual: OverlapResidual { mag_db_rms: rms(ss_mag), phase_rad_rms: rms(ss_ph), n_tones: n_ov },
    })
}
