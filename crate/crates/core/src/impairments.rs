//! Front-end impairment model.
//!
//! Transmit side: inverse-sinc predistortion, DAC zero-order hold and a
//! 2nd-order Butterworth reconstruction filter. Receive side: a 5th-order
//! Butterworth ACR filter, I/Q mismatch and AGC. Between the two, the
//! channel adds multipath, SFO, CFO and noise.
//!
//! Filter cutoffs in a profile are given for a 20 MHz channel and scale
//! with the NIC's channel width (40 MHz for HT40 modes). They stay fixed
//! when the baseband clock changes unless `track_bandwidth` is set; the DAC
//! hold always follows the clock.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{self, bessel_i0, bin_freq, sinc};
use crate::error::{Error, Result};
use crate::phy::{BasebandBurst, PhyMode};

const J: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub order: u32,
    pub cutoff_hz: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IqMismatch {
    pub gain_ratio: f64,
    pub phase_deg: f64,
}

impl Default for IqMismatch {
    fn default() -> Self {
        IqMismatch { gain_ratio: 1.0, phase_deg: 0.0 }
    }
}

/// One multipath tap: delay in samples (may be fractional) and complex gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tap {
    pub delay_samples: f64,
    pub gain_re: f64,
    #[serde(default)]
    pub gain_im: f64,
}

impl Tap {
    pub fn new(delay_samples: f64, gain: Complex64) -> Self {
        Tap { delay_samples, gain_re: gain.re, gain_im: gain.im }
    }

    pub fn gain(&self) -> Complex64 {
        Complex64::new(self.gain_re, self.gain_im)
    }
}

/// A propagation path in absolute time, independent of the sample rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AirPath {
    pub delay_s: f64,
    pub gain: f64,
}

/// Baseband taps of `paths` seen on carrier `cf` at sample rate `fs`. The
/// carrier phase term keeps the response consistent in absolute frequency.
pub fn air_taps(paths: &[AirPath], cf: f64, fs: f64) -> Vec<Tap> {
    paths
        .iter()
        .map(|p| Tap::new(p.delay_s * fs, Complex64::from_polar(p.gain, -2.0 * PI * cf * p.delay_s)))
        .collect()
}

/// Declarative front-end and channel description. Keys carry their units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImpairmentProfile {
    pub name: String,
    /// Bandwidth the analog stages were designed for; defaults to the
    /// channel width of the PHY mode.
    pub design_bandwidth_hz: Option<f64>,
    /// Scale filter cutoffs and predistortion with the actual sample rate.
    pub track_bandwidth: bool,
    pub dac_oversample: u32,
    /// Predistortion exponent alpha; 0 disables predistortion.
    pub predistortion_overcomp: f64,
    pub dac_zoh: bool,
    pub recon_filter: Option<FilterSpec>,
    pub acr_filter: Option<FilterSpec>,
    pub iq: IqMismatch,
    pub cfo_hz: f64,
    pub sfo_ppm: f64,
    pub snr_db: Option<f64>,
    pub multipath: Vec<Tap>,
    pub agc_target_rms: Option<f64>,
    pub sinc_taps: usize,
    pub kaiser_beta: f64,
}

impl Default for ImpairmentProfile {
    fn default() -> Self {
        ImpairmentProfile::frontend()
    }
}

impl ImpairmentProfile {
    pub const BUILTIN: [&'static str; 3] = ["clean", "frontend", "frontend-tracked"];

    /// Every stage disabled.
    pub fn clean() -> Self {
        ImpairmentProfile {
            name: "clean".into(),
            design_bandwidth_hz: None,
            track_bandwidth: false,
            dac_oversample: 1,
            predistortion_overcomp: 0.0,
            dac_zoh: false,
            recon_filter: None,
            acr_filter: None,
            iq: IqMismatch::default(),
            cfo_hz: 0.0,
            sfo_ppm: 0.0,
            snr_db: None,
            multipath: Vec::new(),
            agc_target_rms: None,
            sinc_taps: 33,
            kaiser_beta: 8.0,
        }
    }

    /// Predistortion, DAC hold and both Butterworth filters, untracked.
    pub fn frontend() -> Self {
        ImpairmentProfile {
            name: "frontend".into(),
            dac_oversample: 1,
            predistortion_overcomp: 2.0,
            dac_zoh: true,
            recon_filter: Some(FilterSpec { order: 2, cutoff_hz: 15e6 }),
            acr_filter: Some(FilterSpec { order: 5, cutoff_hz: 8e6 }),
            ..ImpairmentProfile::clean()
        }
    }

    pub fn frontend_tracked() -> Self {
        ImpairmentProfile { name: "frontend-tracked".into(), track_bandwidth: true, ..ImpairmentProfile::frontend() }
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "clean" => Some(Self::clean()),
            "frontend" | "default" => Some(Self::frontend()),
            "frontend-tracked" => Some(Self::frontend_tracked()),
            _ => None,
        }
    }

    pub fn with_snr(mut self, snr_db: f64) -> Self {
        self.snr_db = Some(snr_db);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dac_oversample == 0 {
            return Err(Error::domain("dac_oversample must be at least 1"));
        }
        if !(self.predistortion_overcomp >= 0.0) {
            return Err(Error::domain("predistortion_overcomp must be non-negative"));
        }
        for (f, order, what) in [(self.recon_filter, 2, "recon_filter"), (self.acr_filter, 5, "acr_filter")] {
            if let Some(f) = f {
                if f.order != order {
                    return Err(Error::domain(format!("{what} order is fixed at {order}, got {}", f.order)));
                }
                if !(f.cutoff_hz > 0.0) {
                    return Err(Error::domain(format!("{what} cutoff must be positive")));
                }
            }
        }
        if !(self.iq.gain_ratio > 0.0) {
            return Err(Error::domain("I/Q gain ratio must be positive"));
        }
        if let Some(b) = self.design_bandwidth_hz {
            if !(b > 0.0) {
                return Err(Error::domain("design bandwidth must be positive"));
            }
        }
        if let Some(t) = self.agc_target_rms {
            if !(t > 0.0) {
                return Err(Error::domain("AGC target must be positive"));
            }
        }
        if self.sinc_taps < 2 {
            return Err(Error::domain("resampler needs at least 2 taps"));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("profile serialises")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let p: ImpairmentProfile = toml::from_str(text).map_err(|e| Error::Format(format!("profile: {e}")))?;
        p.validate()?;
        Ok(p)
    }

    /// Channel width the analog stages are scaled to at sample rate `fs`.
    fn stage_bandwidth(&self, mode: PhyMode, fs: f64) -> f64 {
        if self.track_bandwidth {
            fs
        } else {
            self.design_bandwidth_hz.unwrap_or_else(|| mode.nominal_sample_rate())
        }
    }

    fn scaled(&self, spec: Option<FilterSpec>, mode: PhyMode, fs: f64) -> Option<FilterSpec> {
        spec.map(|s| FilterSpec { order: s.order, cutoff_hz: s.cutoff_hz * self.stage_bandwidth(mode, fs) / 20e6 })
    }

    /// Analytic transmit response at baseband frequency `f`.
    pub fn tx_response(&self, f: f64, fs: f64, mode: PhyMode) -> Complex64 {
        let r = self.dac_oversample as f64;
        let mut h = Complex64::new(1.0, 0.0);
        if self.predistortion_overcomp > 0.0 {
            h *= predistortion_gain(f, self.predistortion_overcomp, r * self.stage_bandwidth(mode, fs));
        }
        if self.dac_zoh {
            h *= dac_zoh_response(f, r * fs);
        }
        if let Some(s) = self.scaled(self.recon_filter, mode, fs) {
            h *= butterworth_response(f, s.order, s.cutoff_hz);
        }
        h
    }

    /// Analytic receive response (ACR filter only; I/Q mismatch and AGC are
    /// not linear time-invariant per tone).
    pub fn rx_response(&self, f: f64, fs: f64, mode: PhyMode) -> Complex64 {
        match self.scaled(self.acr_filter, mode, fs) {
            Some(s) => butterworth_response(f, s.order, s.cutoff_hz),
            None => Complex64::new(1.0, 0.0),
        }
    }
}

/// Zero-order-hold DAC response: sinc magnitude and half-sample delay.
pub fn dac_zoh_response(f: f64, fs_dac: f64) -> Complex64 {
    Complex64::from_polar(sinc(f / fs_dac), -PI * f / fs_dac)
}

fn predistortion_gain(f: f64, alpha: f64, fs_dac: f64) -> f64 {
    sinc(f / fs_dac).abs().recip().powf(alpha)
}

/// Analog Butterworth low-pass response at `f` (both signs).
pub fn butterworth_response(f: f64, order: u32, cutoff: f64) -> Complex64 {
    let s = J * (f / cutoff);
    let n = order as f64;
    (1..=order).fold(Complex64::new(1.0, 0.0), |h, k| {
        let p = Complex64::from_polar(1.0, PI * (2.0 * k as f64 + n - 1.0) / (2.0 * n));
        h * (-p) / (s - p)
    })
}

/// Second-order section `b0 b1 b2 / 1 a1 a2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    pub fn response(&self, f: f64, fs: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -2.0 * PI * f / fs);
        let z2 = z1 * z1;
        (self.b[0] + self.b[1] * z1 + self.b[2] * z2) / (1.0 + self.a[0] * z1 + self.a[1] * z2)
    }
}

/// Digital Butterworth low-pass by the bilinear transform with the cutoff
/// prewarped, as cascaded second-order sections.
pub fn butterworth_sos(order: u32, cutoff: f64, fs: f64) -> Result<Vec<Biquad>> {
    if order == 0 {
        return Err(Error::domain("filter order must be at least 1"));
    }
    if !(cutoff > 0.0 && cutoff < fs / 2.0) {
        return Err(Error::domain(format!("cutoff {cutoff} Hz must lie in (0, {} Hz)", fs / 2.0)));
    }
    let k = 2.0 * fs;
    let wc = k * (PI * cutoff / fs).tan();
    let n = order as f64;
    let mut out = Vec::new();
    for i in 1..=order / 2 {
        let re = (PI * (2.0 * i as f64 + n - 1.0) / (2.0 * n)).cos();
        let a0 = k * k - 2.0 * re * wc * k + wc * wc;
        let a1 = 2.0 * (wc * wc - k * k);
        let a2 = k * k + 2.0 * re * wc * k + wc * wc;
        let g = wc * wc / a0;
        out.push(Biquad { b: [g, 2.0 * g, g], a: [a1 / a0, a2 / a0] });
    }
    if order % 2 == 1 {
        let a0 = k + wc;
        let g = wc / a0;
        out.push(Biquad { b: [g, g, 0.0], a: [(wc - k) / a0, 0.0] });
    }
    Ok(out)
}

/// Time-domain Butterworth filtering of a burst.
pub fn butterworth_apply(burst: &BasebandBurst, order: u32, cutoff: f64) -> Result<BasebandBurst> {
    let sos = butterworth_sos(order, cutoff, burst.sample_rate)?;
    let mut x = burst.samples.clone();
    for s in &sos {
        let (mut z1, mut z2) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        for v in x.iter_mut() {
            let y = s.b[0] * *v + z1;
            z1 = s.b[1] * *v - s.a[0] * y + z2;
            z2 = s.b[2] * *v - s.a[1] * y;
            *v = y;
        }
    }
    Ok(burst.with_samples(x))
}

/// Apply a frequency response over the whole burst by zero-padded FFT.
/// Output keeps the input length.
pub fn apply_response(burst: &BasebandBurst, h: impl Fn(f64) -> Complex64) -> BasebandBurst {
    let len = burst.len();
    if len == 0 {
        return burst.clone();
    }
    let n = (len + 1024).next_power_of_two();
    let mut buf = burst.samples.clone();
    buf.resize(n, Complex64::new(0.0, 0.0));
    dsp::fft(&mut buf);
    let fs = burst.sample_rate;
    for (i, v) in buf.iter_mut().enumerate() {
        *v *= h(bin_freq(i, n, fs)) / n as f64;
    }
    dsp::ifft(&mut buf);
    buf.truncate(len);
    burst.with_samples(buf)
}

/// Inverse-sinc predistortion `(1/sinc(f/fs_dac))^alpha`.
pub fn predistort(burst: &BasebandBurst, alpha: f64, fs_dac: f64) -> Result<BasebandBurst> {
    if !(alpha >= 0.0) {
        return Err(Error::domain("alpha must be non-negative"));
    }
    if alpha == 0.0 {
        return Ok(burst.clone());
    }
    Ok(apply_response(burst, |f| Complex64::new(predistortion_gain(f, alpha, fs_dac), 0.0)))
}

/// I' = I, Q' = g (Q cos phi + I sin phi).
pub fn apply_iq_mismatch(burst: &BasebandBurst, gain_ratio: f64, phase_deg: f64) -> Result<BasebandBurst> {
    if !(gain_ratio > 0.0) {
        return Err(Error::domain("I/Q gain ratio must be positive"));
    }
    if gain_ratio == 1.0 && phase_deg == 0.0 {
        return Ok(burst.clone());
    }
    let (s, c) = phase_deg.to_radians().sin_cos();
    Ok(burst.with_samples(
        burst
            .samples
            .iter()
            .map(|v| Complex64::new(v.re, gain_ratio * (v.im * c + v.re * s)))
            .collect(),
    ))
}

/// Multiply sample n by exp(j 2 pi f n / fs).
pub fn apply_cfo(burst: &BasebandBurst, hz: f64) -> BasebandBurst {
    if hz == 0.0 {
        return burst.clone();
    }
    let w = 2.0 * PI * hz / burst.sample_rate;
    burst.with_samples(
        burst.samples.iter().enumerate().map(|(n, v)| v * Complex64::from_polar(1.0, w * n as f64)).collect(),
    )
}

/// `y[n] = x(n (1 + ppm 1e-6))` with the default 33-tap Kaiser-windowed sinc.
pub fn apply_sfo(burst: &BasebandBurst, ppm: f64) -> BasebandBurst {
    resample_sfo(burst, ppm, 33, 8.0)
}

pub fn resample_sfo(burst: &BasebandBurst, ppm: f64, taps: usize, beta: f64) -> BasebandBurst {
    if ppm == 0.0 || burst.is_empty() {
        return burst.clone();
    }
    let ratio = 1.0 + ppm * 1e-6;
    let x = &burst.samples;
    let len = x.len();
    let out_len = ((len - 1) as f64 / ratio).floor() as usize + 1;
    let half = taps as f64 / 2.0;
    let lo_off = (taps as i64 - 1) / 2;
    let i0b = bessel_i0(beta);
    let mut y = Vec::with_capacity(out_len);
    for n in 0..out_len {
        let t = n as f64 * ratio;
        let base = t.floor() as i64;
        let mu = t - base as f64;
        let mut acc = Complex64::new(0.0, 0.0);
        for m in -lo_off..=(taps as i64 - 1 - lo_off) {
            let idx = base + m;
            if idx < 0 || idx >= len as i64 {
                continue;
            }
            let d = m as f64 - mu;
            let r = d / half;
            if r.abs() >= 1.0 {
                continue;
            }
            let w = bessel_i0(beta * (1.0 - r * r).sqrt()) / i0b;
            acc += x[idx as usize] * (sinc(d) * w);
        }
        y.push(acc);
    }
    burst.with_samples(y)
}

/// Add circular Gaussian noise of total power `noise_power`.
pub fn add_noise(burst: &BasebandBurst, noise_power: f64, seed: u64) -> BasebandBurst {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = (noise_power / 2.0).sqrt();
    burst.with_samples(
        burst
            .samples
            .iter()
            .map(|v| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                v + Complex64::new(a, b) * sigma
            })
            .collect(),
    )
}

/// AWGN at `snr_db` below the burst's mean power.
pub fn apply_awgn(burst: &BasebandBurst, snr_db: f64, seed: u64) -> BasebandBurst {
    add_noise(burst, burst.mean_power() / 10f64.powf(snr_db / 10.0), seed)
}

/// Tapped delay line with fractional delays. Output keeps the input length.
pub fn apply_multipath(burst: &BasebandBurst, taps: &[Tap]) -> BasebandBurst {
    if taps.is_empty() || (taps.len() == 1 && taps[0].delay_samples == 0.0 && taps[0].gain() == Complex64::new(1.0, 0.0)) {
        return burst.clone();
    }
    let fs = burst.sample_rate;
    apply_response(burst, |f| {
        taps.iter().map(|t| t.gain() * Complex64::from_polar(1.0, -2.0 * PI * f * t.delay_samples / fs)).sum()
    })
}

/// Memoryless whole-burst normalisation to `target_rms`.
pub fn agc(burst: &BasebandBurst, target_rms: f64) -> BasebandBurst {
    let rms = burst.mean_power().sqrt();
    if rms == 0.0 {
        return burst.clone();
    }
    let g = target_rms / rms;
    burst.with_samples(burst.samples.iter().map(|v| v * g).collect())
}

/// Predistortion, DAC hold and reconstruction filter.
pub fn tx_chain(burst: &BasebandBurst, profile: &ImpairmentProfile, mode: PhyMode) -> Result<BasebandBurst> {
    profile.validate()?;
    let fs = burst.sample_rate;
    if profile.predistortion_overcomp == 0.0 && !profile.dac_zoh && profile.recon_filter.is_none() {
        return Ok(burst.clone());
    }
    Ok(apply_response(burst, |f| profile.tx_response(f, fs, mode) * edge_taper(f, fs)))
}

/// Raised-cosine roll-off between 0.46 fs and the Nyquist frequency. Keeps
/// the chain response continuous across +-fs/2 without touching any tone.
fn edge_taper(f: f64, fs: f64) -> f64 {
    let x = (f.abs() / fs - 0.46) / 0.04;
    if x <= 0.0 {
        1.0
    } else if x >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (PI * x).cos())
    }
}

/// ACR filter, I/Q mismatch and AGC.
pub fn rx_chain(burst: &BasebandBurst, profile: &ImpairmentProfile, mode: PhyMode) -> Result<BasebandBurst> {
    profile.validate()?;
    let fs = burst.sample_rate;
    let mut b = if profile.acr_filter.is_some() {
        apply_response(burst, |f| profile.rx_response(f, fs, mode) * edge_taper(f, fs))
    } else {
        burst.clone()
    };
    b = apply_iq_mismatch(&b, profile.iq.gain_ratio, profile.iq.phase_deg)?;
    if let Some(t) = profile.agc_target_rms {
        b = agc(&b, t);
    }
    Ok(b)
}

/// Propagation between the chains: multipath, SFO, CFO (`extra_cfo_hz` is
/// added to the profile's), then AWGN.
pub fn apply_channel(burst: &BasebandBurst, profile: &ImpairmentProfile, extra_cfo_hz: f64, seed: u64) -> BasebandBurst {
    let mut b = apply_multipath(burst, &profile.multipath);
    if profile.sfo_ppm != 0.0 {
        b = resample_sfo(&b, profile.sfo_ppm, profile.sinc_taps, profile.kaiser_beta);
    }
    b = apply_cfo(&b, profile.cfo_hz + extra_cfo_hz);
    if let Some(snr) = profile.snr_db {
        b = apply_awgn(&b, snr, seed);
    }
    b
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::{assemble_frame, receive, ChannelMode, FrameConfig, RxOptions};

    fn tone(freq: f64, fs: f64, n: usize) -> BasebandBurst {
        BasebandBurst::new(
            (0..n).map(|i| Complex64::from_polar(1.0, 2.0 * PI * freq * i as f64 / fs)).collect(),
            fs,
        )
    }

    fn db(x: f64) -> f64 {
        20.0 * x.log10()
    }

    /// Complex amplitude of `freq` in the tail of `b` (after transients).
    fn amplitude(b: &BasebandBurst, freq: f64, skip: usize) -> Complex64 {
        let s = &b.samples[skip..];
        s.iter()
            .enumerate()
            .map(|(i, v)| v * Complex64::from_polar(1.0, -2.0 * PI * freq * (i + skip) as f64 / b.sample_rate))
            .sum::<Complex64>()
            / s.len() as f64
    }

    #[test]
    fn zoh_values() {
        assert_eq!(dac_zoh_response(0.0, 160e6), Complex64::new(1.0, 0.0));
        assert!(dac_zoh_response(160e6, 160e6).norm() < 1e-15);
        let x = PI * 10e6 / 160e6;
        assert!((dac_zoh_response(10e6, 160e6).norm() - x.sin() / x).abs() < 1e-15);
        assert!((dac_zoh_response(10e6, 160e6).norm() - 0.99358).abs() < 1e-5);
    }

    #[test]
    fn predistortion_composites() {
        for f in [1e6, 5e6, 10e6] {
            let unity = predistortion_gain(f, 1.0, 160e6) * dac_zoh_response(f, 160e6).norm();
            assert!((unity - 1.0).abs() < 1e-12);
        }
        let over = predistortion_gain(10e6, 1.15, 160e6) * dac_zoh_response(10e6, 160e6).norm();
        assert!((db(over) - 0.0084).abs() < 0.0005, "{}", db(over));
        let b = tone(3e6, 20e6, 500);
        assert_eq!(predistort(&b, 0.0, 160e6).unwrap(), b);
        let p = apply_response(&predistort(&b, 1.0, 20e6).unwrap(), |f| dac_zoh_response(f, 20e6));
        assert!((amplitude(&p, 3e6, 50).norm() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn analog_butterworth_shape() {
        for order in [2, 5] {
            assert!((butterworth_response(0.0, order, 8e6).norm() - 1.0).abs() < 1e-12);
            assert!((db(butterworth_response(8e6, order, 8e6).norm()) + 3.0103).abs() < 1e-3);
            let f = 16e6;
            let want = 1.0 / (1.0 + 2f64.powi(2 * order as i32)).sqrt();
            assert!((butterworth_response(-f, order, 8e6).norm() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn iir_butterworth_tones() {
        let fs = 320e6;
        let fc = 10e6;
        let dc = butterworth_apply(&BasebandBurst::new(vec![Complex64::new(1.0, 0.0); 3000], fs), 5, fc).unwrap();
        assert!((dc.samples[2999] - 1.0).norm() < 1e-6);
        for (mult, order) in [(1.0, 2u32), (1.0, 5), (2.0, 5), (0.5, 5)] {
            let f = mult * fc;
            let out = butterworth_apply(&tone(f, fs, 8000), order, fc).unwrap();
            let got = db(amplitude(&out, f, 2000).norm());
            let analytic = db(1.0 / (1.0 + mult.powi(2 * order as i32)).sqrt());
            assert!((got - analytic).abs() < 0.5, "{mult} {order}: {got} vs {analytic}");
            if mult == 1.0 {
                assert!((got + 3.01).abs() < 0.05);
            }
        }
        assert!(butterworth_apply(&tone(1e6, 20e6, 10), 2, 10e6).is_err());
        let sos = butterworth_sos(5, fc, fs).unwrap();
        let dcg: Complex64 = sos.iter().map(|s| s.response(0.0, fs)).product();
        assert!((dcg - 1.0).norm() < 1e-12);
    }

    #[test]
    fn iq_image_levels() {
        let b = tone(2e6, 20e6, 1000);
        assert_eq!(apply_iq_mismatch(&b, 1.0, 0.0).unwrap(), b);
        for (g, p, want) in [(1.1, 0.0, -26.4), (1.0, 5.0, -27.2)] {
            let out = apply_iq_mismatch(&b, g, p).unwrap();
            let main = amplitude(&out, 2e6, 0).norm();
            let image = amplitude(&out, -2e6, 0).norm();
            assert!((db(image / main) - want).abs() < 0.1, "{}", db(image / main));
        }
        assert!(apply_iq_mismatch(&b, 0.0, 0.0).is_err());
    }

    #[test]
    fn cfo_group_property() {
        let b = tone(1e6, 20e6, 1000);
        assert_eq!(apply_cfo(&b, 0.0), b);
        let back = apply_cfo(&apply_cfo(&b, 12345.0), -12345.0);
        for (a, c) in back.samples.iter().zip(&b.samples) {
            assert!((a - c).norm() < 1e-12);
        }
    }

    #[test]
    fn sfo_shifts_tone_frequency() {
        let b = tone(1e6, 20e6, 10_000);
        assert_eq!(apply_sfo(&b, 0.0), b);
        let out = apply_sfo(&b, 20.0);
        assert!((out.len() as i64 - b.len() as i64).abs() <= 1);
        // phase slope of the output tone, away from the edges
        let ph: Vec<f64> = out.samples[100..9800].windows(2).map(|w| (w[1] * w[0].conj()).arg()).collect();
        let f_est = ph.iter().sum::<f64>() / ph.len() as f64 * 20e6 / (2.0 * PI);
        assert!(((f_est / 1e6 - 1.0) - 20e-6).abs() < 1e-7, "{f_est}");
    }

    #[test]
    fn resampler_band_edge_accuracy() {
        // fractional delay of half a sample on the outermost HT20 tone
        let f = 28.0 / 64.0 * 20e6;
        let b = tone(f, 20e6, 4000);
        let out = resample_sfo(&b, 1e6 / 4000.0 * 0.5, 33, 8.0);
        let err = db((amplitude(&out, f * (1.0 + 0.5 / 4000.0), 100).norm() - 1.0).abs().max(1e-12));
        assert!(err < -20.0, "{err}");
    }

    #[test]
    fn awgn_power_and_determinism() {
        let b = tone(1e6, 20e6, 20_000);
        let n = apply_awgn(&b, 10.0, 5);
        assert_eq!(n, apply_awgn(&b, 10.0, 5));
        assert_ne!(n, apply_awgn(&b, 10.0, 6));
        let p: f64 = n.samples.iter().zip(&b.samples).map(|(a, c)| (a - c).norm_sqr()).sum::<f64>() / 20_000.0;
        assert!((p - 0.1).abs() < 0.005);
    }

    #[test]
    fn multipath_and_agc() {
        let b = tone(1e6, 20e6, 500);
        let one = apply_multipath(&b, &[Tap::new(0.0, Complex64::new(1.0, 0.0))]);
        assert_eq!(one, b);
        let d = apply_multipath(&b.delayed(0), &[Tap::new(2.0, Complex64::new(0.5, 0.0))]);
        for n in 2..500 {
            assert!((d.samples[n] - b.samples[n - 2] * 0.5).norm() < 1e-9);
        }
        let a1 = agc(&b, 0.3);
        let a2 = agc(&b.with_samples(b.samples.iter().map(|v| v * 2.0).collect()), 0.3);
        for (x, y) in a1.samples.iter().zip(&a2.samples) {
            assert!((x - y).norm() < 1e-12);
        }
        assert!((a1.mean_power().sqrt() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn disabled_chain_is_identity() {
        let cfg = FrameConfig::new(PhyMode::HT20, 3, vec![1, 2, 3]);
        let b = assemble_frame(&cfg).unwrap();
        let p = ImpairmentProfile::clean();
        let out = rx_chain(&apply_channel(&tx_chain(&b, &p, PhyMode::HT20).unwrap(), &p, 0.0, 1), &p, PhyMode::HT20)
            .unwrap();
        assert_eq!(out, b);
    }

    #[test]
    fn toml_round_trip_and_validation() {
        let mut p = ImpairmentProfile::frontend().with_snr(25.0);
        p.multipath.push(Tap::new(1.5, Complex64::new(0.3, -0.1)));
        let text = p.to_toml();
        assert!(text.contains("cutoff_hz"));
        assert_eq!(ImpairmentProfile::from_toml(&text).unwrap(), p);
        let partial = ImpairmentProfile::from_toml("name = \"x\"\nsnr_db = 30.0\n").unwrap();
        assert_eq!(partial.acr_filter, ImpairmentProfile::frontend().acr_filter);
        let mut bad = ImpairmentProfile::frontend();
        bad.acr_filter = Some(FilterSpec { order: 4, cutoff_hz: 8e6 });
        assert!(bad.validate().is_err());
        assert!(ImpairmentProfile::from_toml("iq = { gain_ratio = -1.0, phase_deg = 0.0 }").is_err());
        for name in ImpairmentProfile::BUILTIN {
            assert!(ImpairmentProfile::builtin(name).is_some());
        }
    }

    fn measured_csi(profile: &ImpairmentProfile, mode: PhyMode, fs: f64) -> (Vec<i32>, Vec<Complex64>) {
        let cfg = FrameConfig::new(mode, 1, vec![0x3c; 60]);
        let mut b = assemble_frame(&cfg).unwrap().delayed(64);
        b.samples.extend(vec![Complex64::new(0.0, 0.0); 64]);
        b.sample_rate = fs;
        let out = rx_chain(&tx_chain(&b, profile, mode).unwrap(), profile, mode).unwrap();
        let r = receive(&out, mode, &RxOptions::default()).unwrap();
        assert!(r.fcs_ok);
        (r.csi.grid.indices.clone(), r.csi.values)
    }

    fn cascade_db(p: &ImpairmentProfile, mode: PhyMode, fs: f64, k: i32) -> f64 {
        let nfft = if mode.channel_mode.is_40() { 128.0 } else { 64.0 };
        let f = k as f64 * fs / nfft;
        db((p.tx_response(f, fs, mode) * p.rx_response(f, fs, mode)).norm())
    }

    #[test]
    fn chain_matches_analytic_cascade() {
        let p = ImpairmentProfile::frontend();
        for (mode, fs) in [(PhyMode::HT20, 20e6), (PhyMode::HT20, 5e6), (PhyMode::ht(ChannelMode::Ht40Minus), 40e6)] {
            let n = if mode.channel_mode.is_40() { 128 } else { 64 };
            let grid = mode.csi_grid();
            let mut x = vec![Complex64::new(0.0, 0.0); n];
            for &k in &grid.indices {
                x[k.rem_euclid(n as i32) as usize] = Complex64::from_polar(1.0, 0.37 * (k * k) as f64);
            }
            let mut sym = x.clone();
            dsp::ifft(&mut sym);
            let probe = BasebandBurst::new((0..40 * n).map(|i| sym[i % n]).collect(), fs);
            let out = rx_chain(&tx_chain(&probe, &p, mode).unwrap(), &p, mode).unwrap();
            let mut y = out.samples[20 * n..21 * n].to_vec();
            dsp::fft(&mut y);
            for &k in &grid.indices {
                let b = k.rem_euclid(n as i32) as usize;
                let got = db((y[b] / x[b] / n as f64).norm());
                let want = cascade_db(&p, mode, fs, k);
                assert!((got - want).abs() < 0.1, "{mode:?} {fs} k={k}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn phy_csi_follows_cascade() {
        let p = ImpairmentProfile::frontend();
        for mode in [PhyMode::HT20, PhyMode::ht(ChannelMode::Ht40Plus)] {
            let fs = mode.nominal_sample_rate();
            let (idx, csi) = measured_csi(&p, mode, fs);
            let model: Vec<f64> = idx.iter().map(|&k| cascade_db(&p, mode, fs, k)).collect();
            let got: Vec<f64> = csi.iter().map(|v| db(v.norm())).collect();
            let mid = idx.len() / 2;
            let off = got[mid] - model[mid];
            for (g, m) in got.iter().zip(&model) {
                assert!((g - off - m).abs() < 0.25, "{mode:?}: {g} vs {m}");
            }
        }
    }
}
