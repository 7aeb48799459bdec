use num_complex::Complex64;

use super::bcc::{bcc_decode_soft, CodeRate};
use super::crc::{crc32, crc8_htsig};
use super::interleaver::{deinterleave, interleaver_permutation};
use super::ofdm::{ht_ltf_value, l_ltf_tones, l_ltf_value, ofdm_demodulate, ofdm_modulate, pilot_values, Layout};
use super::qam::{demap_soft, slice, Modulation};
use super::scrambler::{scramble, seed_from_service};
use super::tx::{bits_to_bytes, data_symbol_count, legacy_rate_bits, regenerate_symbols, FrameLayout};
use super::{
    BasebandBurst, FrameConfig, Format, GuardInterval, PhyMode, RateParams, RxResult, SigInfo,
    SubcarrierGrid,
};
use crate::csikit::CsiFrame;
use crate::error::{Error, Result};

const TAU: f64 = std::f64::consts::TAU;

/// Receiver knobs.
#[derive(Debug, Clone, PartialEq)]
pub struct RxOptions {
    /// Normalised STF autocorrelation level that counts as a detection.
    pub detection_threshold: f64,
    /// Consecutive lags above the threshold required.
    pub detection_run: usize,
    /// FFT window advance into the cyclic prefix, in 20 MHz samples.
    pub timing_backoff: usize,
    /// Pilot common-phase and slope tracking while decoding.
    pub pilot_tracking: bool,
    /// Skip detection and use this frame start.
    pub known_offset: Option<usize>,
    /// Skip CFO estimation and correction.
    pub skip_cfo: bool,
}

impl Default for RxOptions {
    fn default() -> Self {
        RxOptions {
            detection_threshold: 0.75,
            detection_run: 16,
            timing_backoff: 4,
            pilot_tracking: true,
            known_offset: None,
            skip_cfo: false,
        }
    }
}

fn rotate(samples: &mut [Complex64], freq: f64, fs: f64) {
    let w = -TAU * freq / fs;
    let step = Complex64::from_polar(1.0, w);
    for (b, block) in samples.chunks_mut(64).enumerate() {
        let mut r = Complex64::from_polar(1.0, w * (64 * b) as f64);
        for s in block {
            *s *= r;
            r *= step;
        }
    }
}

/// `exp(-j(c + s k))` for `k` in `k_lo..=k_hi`, indexed by `k - k_lo`.
fn phase_ramp(c: f64, s: f64, k_lo: i32, k_hi: i32) -> Vec<Complex64> {
    let step = Complex64::from_polar(1.0, -s);
    let mut r = Complex64::from_polar(1.0, -(c + s * k_lo as f64));
    (k_lo..=k_hi)
        .map(|_| {
            let v = r;
            r *= step;
            v
        })
        .collect()
}

fn coarse_plateau(x: &[Complex64], lag: usize, win: usize, opts: &RxOptions) -> Option<usize> {
    if x.len() < lag + win + opts.detection_run {
        return None;
    }
    let mut c = Complex64::new(0.0, 0.0);
    let mut p = 0.0;
    for m in 0..win {
        c += x[m] * x[m + lag].conj();
        p += x[m + lag].norm_sqr();
    }
    let mut run = 0;
    for n in 0..x.len() - lag - win {
        if p > 1e-300 && c.norm() > opts.detection_threshold * p {
            run += 1;
            if run >= opts.detection_run {
                return Some(n + 1 - run);
            }
        } else {
            run = 0;
        }
        c += x[n + win] * x[n + win + lag].conj() - x[n] * x[n + lag].conj();
        p += x[n + win + lag].norm_sqr() - x[n + lag].norm_sqr();
        p = p.max(0.0);
    }
    None
}

/// Find the first sample of the L-STF. Returns `None` when no frame is present.
pub fn detect_packet(burst: &BasebandBurst, mode: PhyMode, opts: &RxOptions) -> Option<usize> {
    let layout = Layout::for_mode(mode);
    let u = layout.unit();
    let x = &burst.samples;
    let n0 = coarse_plateau(x, 16 * u, 48 * u, opts)?;

    // coarse CFO from the plateau, then match against the L-LTF
    let span = (96 * u).min(x.len().saturating_sub(n0 + 16 * u));
    let c: Complex64 = (0..span).map(|m| x[n0 + m + 16 * u] * x[n0 + m].conj()).sum();
    let cfo = c.arg() / (TAU * 16.0 * u as f64 / burst.sample_rate);

    let ltf = ofdm_modulate(&l_ltf_tones(&layout), 0, layout.scale);
    let n = layout.nfft;
    let guess = n0 + 192 * u;
    let lo = guess.saturating_sub(96 * u);
    let hi = (guess + 96 * u).min(x.len().saturating_sub(2 * n));
    if lo > hi {
        return None;
    }
    let w = -TAU * cfo / burst.sample_rate;
    let end = (hi + n + ltf.len()).min(x.len());
    let xr: Vec<Complex64> = (lo..end).map(|k| x[k] * Complex64::from_polar(1.0, w * k as f64)).collect();
    let corr = |m: usize| -> f64 {
        let seg = &xr[m - lo..];
        ltf.iter().zip(seg).map(|(t, v)| v * t.conj()).sum::<Complex64>().norm()
    };
    let mut best = (f64::MIN, lo);
    for m in lo..=hi {
        let v = corr(m) + corr(m + n);
        if v > best.0 {
            best = (v, m);
        }
    }
    best.1.checked_sub(192 * u)
}

/// Preamble CFO estimate: coarse on the L-STF, refined on the L-LTF.
pub fn estimate_cfo_preamble(burst: &BasebandBurst, offset: usize, mode: PhyMode) -> Result<f64> {
    let layout = Layout::for_mode(mode);
    let u = layout.unit();
    let fs = burst.sample_rate;
    if offset + 320 * u > burst.len() {
        return Err(Error::domain(format!("offset {offset} leaves no room for the legacy preamble")));
    }
    let x = &burst.samples[offset..offset + 320 * u];
    let lag = 16 * u;
    let c: Complex64 = (16 * u..160 * u - lag).map(|n| x[n + lag] * x[n].conj()).sum();
    let coarse = c.arg() / (TAU * lag as f64 / fs);
    let w = -TAU * coarse / fs;
    let lag = 64 * u;
    // second half of GI2 onwards, clear of STF leakage through the channel
    let f: Complex64 = (176 * u..256 * u)
        .map(|n| {
            let a = x[n] * Complex64::from_polar(1.0, w * n as f64);
            let b = x[n + lag] * Complex64::from_polar(1.0, w * (n + lag) as f64);
            b * a.conj()
        })
        .sum();
    Ok(coarse + f.arg() / (TAU * lag as f64 / fs))
}

struct Demod<'a> {
    x: &'a [Complex64],
    layout: Layout,
    backoff: usize,
}

impl Demod<'_> {
    /// FFT of the symbol body starting at `start`, with the window advanced
    /// by the timing backoff and the resulting phase ramp removed.
    fn symbol(&self, start: usize) -> Result<Vec<Complex64>> {
        let n = self.layout.nfft;
        let b = self.backoff.min(start);
        if start - b + n > self.x.len() {
            return Err(Error::Demod(format!("burst ends before symbol at sample {start}")));
        }
        let mut y = ofdm_demodulate(&self.x[start - b..start - b + n], self.layout.scale);
        if b > 0 {
            let step = Complex64::from_polar(1.0, TAU * b as f64 / n as f64);
            let mut r = Complex64::new(1.0, 0.0);
            for v in y.iter_mut() {
                *v *= r;
                r *= step;
            }
        }
        Ok(y)
    }
}

fn signed(bin: usize, n: usize) -> i32 {
    if bin >= n / 2 {
        bin as i32 - n as i32
    } else {
        bin as i32
    }
}

/// Channel estimate on the legacy tones from the two L-LTF repetitions.
fn legacy_channel(d: &Demod, offset: usize) -> Result<Vec<Complex64>> {
    let u = d.layout.unit();
    let a = d.symbol(offset + 192 * u)?;
    let b = d.symbol(offset + 256 * u)?;
    let n = d.layout.nfft;
    let shifts = d.layout.legacy_shifts();
    Ok((0..n)
        .map(|bin| {
            let k = signed(bin, n);
            let r: f64 = shifts.iter().map(|s| l_ltf_value(k - s)).sum();
            if r != 0.0 {
                (a[bin] + b[bin]) / (2.0 * r)
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
        .collect())
}

fn csi_from_ltf(y: &[Complex64], layout: &Layout, grid: &SubcarrierGrid) -> Vec<Complex64> {
    grid.indices.iter().map(|&k| y[layout.bin(k)] / ht_ltf_value(layout, k)).collect()
}

/// Channel estimate on the mode's CSI grid, from the HT-LTF (HT) or the
/// averaged L-LTF (non-HT). `burst` should already be CFO-corrected.
pub fn estimate_csi(burst: &BasebandBurst, offset: usize, mode: PhyMode, opts: &RxOptions) -> Result<CsiFrame> {
    mode.validate()?;
    let layout = Layout::for_mode(mode);
    let u = layout.unit();
    let d = Demod { x: &burst.samples, layout, backoff: opts.timing_backoff * u };
    let grid = mode.csi_grid();
    let values = match mode.format {
        Format::NonHt => {
            let h = legacy_channel(&d, offset)?;
            grid.indices.iter().map(|&k| h[layout.bin(k)]).collect()
        }
        Format::Ht => {
            let fl = FrameLayout::new(mode, GuardInterval::Long, 0, 0);
            let y = d.symbol(offset + fl.ht_ltf + 16 * u)?;
            csi_from_ltf(&y, &layout, &grid)
        }
    };
    Ok(CsiFrame::new(values, grid, mode, burst.center_freq, burst.sample_rate))
}

/// Residual phase (common + linear in tone index) seen on the pilots.
fn pilot_phase(y: &[Complex64], h: &[Complex64], layout: &Layout, ks: &[i32], pv: &[f64]) -> (f64, f64) {
    let r: Vec<Complex64> = ks
        .iter()
        .zip(pv)
        .map(|(&k, &p)| y[layout.bin(k)] * (h[layout.bin(k)] * p).conj())
        .collect();
    let common: Complex64 = r.iter().sum();
    let phi = common.arg();
    let a: Vec<f64> = r.iter().map(|v| (v * Complex64::from_polar(1.0, -phi)).arg()).collect();
    let n = ks.len() as f64;
    let km = ks.iter().map(|&k| k as f64).sum::<f64>() / n;
    let am = a.iter().sum::<f64>() / n;
    let sxx: f64 = ks.iter().map(|&k| (k as f64 - km).powi(2)).sum();
    let sxy: f64 = ks.iter().zip(&a).map(|(&k, &v)| (k as f64 - km) * (v - am)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    (phi + am - slope * km, slope)
}

/// Soft bits of one SIG-style symbol (BPSK on legacy tones, combined over
/// duplicates). `derot` undoes the QBPSK rotation.
fn sig_llrs(d: &Demod, start: usize, h: &[Complex64], derot: Complex64, n: usize) -> Result<Vec<f64>> {
    let y = d.symbol(start)?;
    let layout = &d.layout;
    let shifts = layout.legacy_shifts();
    let pk: Vec<i32> = shifts.iter().flat_map(|s| [-21, -7, 7, 21].map(|k| k + s)).collect();
    let pv: Vec<f64> = shifts.iter().flat_map(|_| pilot_values(layout, Format::NonHt, n, 0)).collect();
    let (c, s) = pilot_phase(&y, h, layout, &pk, &pv);
    let mut llr = Vec::with_capacity(48);
    for k in layout.legacy_data_tones() {
        let mut num = Complex64::new(0.0, 0.0);
        let mut den = 0.0;
        for sh in &shifts {
            let kk = k + sh;
            let b = layout.bin(kk);
            num += y[b] * h[b].conj() * Complex64::from_polar(1.0, -(c + s * kk as f64));
            den += h[b].norm_sqr();
        }
        let x = if den > 0.0 { num / den * derot } else { Complex64::new(0.0, 0.0) };
        llr.push(demap_soft(&[x], Modulation::Bpsk, &[den])[0]);
    }
    deinterleave(&llr, 48, 1)
}

fn decode_l_sig(llr: &[f64]) -> Result<(u8, usize)> {
    let bits = bcc_decode_soft(llr, CodeRate::R12, 24)?;
    if bits[..18].iter().fold(0, |a, b| a ^ b) != 0 {
        return Err(Error::Demod("L-SIG parity check failed".into()));
    }
    let rate: [u8; 4] = bits[..4].try_into().unwrap();
    let mcs = (0..8u8)
        .find(|&m| legacy_rate_bits(m) == rate)
        .ok_or_else(|| Error::Demod(format!("invalid L-SIG rate {rate:?}")))?;
    let len = (0..12).fold(0usize, |acc, i| acc | ((bits[5 + i] as usize) << i));
    Ok((mcs, len))
}

fn decode_ht_sig(llr: &[f64], layout: &Layout) -> Result<SigInfo> {
    let bits = bcc_decode_soft(llr, CodeRate::R12, 48)?;
    if crc8_htsig(&bits[..34]).as_slice() != &bits[34..42] {
        return Err(Error::Demod("HT-SIG CRC check failed".into()));
    }
    let field = |from: usize, n: usize| (0..n).fold(0usize, |acc, i| acc | ((bits[from + i] as usize) << i));
    let mcs = field(0, 7);
    if mcs > 7 {
        return Err(Error::Demod(format!("HT-SIG MCS {mcs} unsupported")));
    }
    if (bits[7] == 1) != layout.wide {
        return Err(Error::Demod("HT-SIG bandwidth does not match the receiver mode".into()));
    }
    Ok(SigInfo {
        mcs: mcs as u8,
        psdu_len: field(8, 16),
        guard: if bits[31] == 1 { GuardInterval::Short } else { GuardInterval::Long },
        n_ess: field(32, 2) as u8,
    })
}

/// Decode SIG fields and payload from a CFO-corrected burst, given the
/// frame start and its CSI, and rebuild the per-data-symbol CSI train.
pub fn equalize_and_decode(
    burst: &BasebandBurst,
    offset: usize,
    csi: &CsiFrame,
    mode: PhyMode,
    opts: &RxOptions,
) -> Result<RxResult> {
    let layout = Layout::for_mode(mode);
    let u = layout.unit();
    let d = Demod { x: &burst.samples, layout, backoff: opts.timing_backoff * u };
    let h_leg = legacy_channel(&d, offset)?;
    let fl0 = FrameLayout::new(mode, GuardInterval::Long, 0, 0);
    let one = Complex64::new(1.0, 0.0);
    let lsig = sig_llrs(&d, offset + fl0.l_sig + 16 * u, &h_leg, one, 0)?;
    let (l_mcs, l_len) = decode_l_sig(&lsig)?;

    let sig = match mode.format {
        Format::NonHt => SigInfo { mcs: l_mcs, psdu_len: l_len, guard: GuardInterval::Long, n_ess: 0 },
        Format::Ht => {
            let derot = Complex64::new(0.0, -1.0);
            let mut llr = sig_llrs(&d, offset + fl0.ht_sig + 16 * u, &h_leg, derot, 1)?;
            llr.extend(sig_llrs(&d, offset + fl0.ht_sig + 96 * u, &h_leg, derot, 2)?);
            decode_ht_sig(&llr, &layout)?
        }
    };
    if sig.psdu_len < 4 {
        return Err(Error::Demod(format!("PSDU length {} shorter than the FCS", sig.psdu_len)));
    }
    let rate = RateParams::new(mode, sig.mcs);
    let n_sym = data_symbol_count(sig.psdu_len, rate.n_dbps);
    let fl = FrameLayout::new(mode, sig.guard, sig.n_ess, n_sym);
    if offset + fl.total > burst.len() + opts.timing_backoff * u {
        return Err(Error::Demod(format!(
            "burst holds {} samples after the frame start, SIG implies {}",
            burst.len().saturating_sub(offset),
            fl.total
        )));
    }

    // channel for equalisation on FFT bins
    let grid = &csi.grid;
    let mut h = vec![Complex64::new(0.0, 0.0); layout.nfft];
    for (k, v) in grid.indices.iter().zip(&csi.values) {
        h[layout.bin(*k)] = *v;
    }
    let mut ess_csi = Vec::new();
    for i in 1..fl.n_ltf {
        let y = d.symbol(offset + fl.ht_ltf + i * 80 * u + 16 * u)?;
        ess_csi.push(csi_from_ltf(&y, &layout, grid).into_iter().map(|v| -v).collect());
    }

    let data_k = layout.data_tones(mode.format);
    let pilot_k = layout.pilot_tones(mode.format);
    let z = if mode.format == Format::Ht { 3 } else { 1 };
    let mut llr = Vec::with_capacity(n_sym * rate.n_cbps);
    let mut raw = Vec::with_capacity(n_sym);
    let mut phases = Vec::with_capacity(n_sym);
    let mut err = 0.0;
    let (k_lo, k_hi) = (data_k[0].min(grid.indices[0]), *data_k.last().unwrap().max(grid.indices.last().unwrap()));
    let perm = interleaver_permutation(rate.n_cbps, rate.n_bpsc);
    for n in 0..n_sym {
        let y = d.symbol(offset + fl.data_body(n))?;
        let pv = pilot_values(&layout, mode.format, n, z);
        let (c, s) = pilot_phase(&y, &h, &layout, &pilot_k, &pv);
        let (c_eq, s_eq) = if opts.pilot_tracking { (c, s) } else { (0.0, 0.0) };
        let mut eq = Vec::with_capacity(data_k.len());
        let mut w = Vec::with_capacity(data_k.len());
        let ramp = phase_ramp(c_eq, s_eq, k_lo, k_hi);
        for &k in &data_k {
            let b = layout.bin(k);
            let x = y[b] / h[b] * ramp[(k - k_lo) as usize];
            err += (x - slice(x, rate.modulation)).norm_sqr();
            eq.push(x);
            w.push(h[b].norm_sqr());
        }
        let soft = demap_soft(&eq, rate.modulation, &w);
        llr.extend(perm.iter().map(|&j| soft[j]));
        raw.push(y);
        phases.push((c, s));
    }
    let evm = err / (n_sym * data_k.len()).max(1) as f64;
    let evm_db = 10.0 * evm.max(1e-30).log10();

    let n_bits = n_sym * rate.n_dbps;
    let llr = &llr[..super::bcc::coded_len(n_bits, rate.code_rate)];
    let scrambled = bcc_decode_soft(llr, rate.code_rate, n_bits)?;
    let seed = seed_from_service(&scrambled[..7])
        .ok_or_else(|| Error::Demod("SERVICE field does not match any scrambler seed".into()))?;
    let bits = scramble(seed, &scrambled)?;
    let psdu = bits_to_bytes(&bits[16..16 + 8 * sig.psdu_len]);
    let (payload, fcs) = psdu.split_at(sig.psdu_len - 4);
    let fcs_ok = crc32(payload).to_le_bytes() == fcs;

    let cfg = FrameConfig {
        format: mode.format,
        channel_mode: mode.channel_mode,
        half_band: mode.half_band,
        mcs: sig.mcs,
        guard: sig.guard,
        scrambler_seed: seed,
        n_ess: sig.n_ess,
        payload: Vec::new(),
    };
    let xs = regenerate_symbols(payload, &cfg)?;
    let mut train = Vec::with_capacity(n_sym);
    let mut tracked = Vec::with_capacity(n_sym);
    for ((y, x), (c, s)) in raw.iter().zip(&xs).zip(&phases) {
        let hd: Vec<Complex64> = grid.indices.iter().map(|&k| y[layout.bin(k)] / x[layout.bin(k)]).collect();
        let ramp = phase_ramp(*c, *s, k_lo, k_hi);
        tracked.push(grid.indices.iter().zip(&hd).map(|(&k, v)| v * ramp[(k - k_lo) as usize]).collect());
        train.push(hd);
    }

    let mut csi = csi.clone();
    csi.meta.mcs = sig.mcs;
    csi.meta.seed = seed;
    Ok(RxResult {
        csi,
        payload: payload.to_vec(),
        fcs_ok,
        sig,
        scrambler_seed: seed,
        offset,
        cfo_preamble: 0.0,
        evm_db,
        data_symbol_csi: train,
        data_symbol_csi_tracked: tracked,
        ess_csi,
        sym_duration: fl.sym_len() as f64 / burst.sample_rate,
    })
}

/// Full receive chain: detect, correct CFO, estimate CSI, decode.
pub fn receive(burst: &BasebandBurst, mode: PhyMode, opts: &RxOptions) -> Result<RxResult> {
    mode.validate()?;
    burst.validate()?;
    let offset = match opts.known_offset {
        Some(o) => o,
        None => detect_packet(burst, mode, opts).ok_or_else(|| Error::Demod("no packet detected".into()))?,
    };
    let cfo = if opts.skip_cfo { 0.0 } else { estimate_cfo_preamble(burst, offset, mode)? };
    let mut fixed = burst.clone();
    if cfo != 0.0 {
        rotate(&mut fixed.samples, cfo, burst.sample_rate);
    }
    let csi = estimate_csi(&fixed, offset, mode, opts)?;
    let mut res = equalize_and_decode(&fixed, offset, &csi, mode, opts)?;
    res.cfo_preamble = cfo;
    Ok(res)
}
