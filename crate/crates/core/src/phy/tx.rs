use num_complex::Complex64;

use super::bcc::{bcc_encode, CodeRate};
use super::crc::{crc32, crc8_htsig};
use super::interleaver::{interleave, interleaver_permutation};
use super::ofdm::{
    ht_ltf_tones, ht_stf_tones, l_ltf_tones, l_stf_tones, ofdm_modulate, pilot_values, tones, Layout,
};
use super::qam::{map_qam, Modulation};
use super::scrambler::scramble;
use super::{BasebandBurst, FrameConfig, Format, GuardInterval, PhyMode, RateParams};
use crate::error::Result;

const J: Complex64 = Complex64::new(0.0, 1.0);

/// Sample positions of each PPDU field inside a burst.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameLayout {
    pub nfft: usize,
    pub l_stf: usize,
    pub l_ltf: usize,
    pub l_sig: usize,
    /// Start of HT-SIG (HT only).
    pub ht_sig: usize,
    pub ht_stf: usize,
    /// Start of the first HT-LTF.
    pub ht_ltf: usize,
    pub n_ltf: usize,
    pub data: usize,
    pub n_sym: usize,
    pub data_cp: usize,
    pub total: usize,
}

impl FrameLayout {
    pub fn new(mode: PhyMode, guard: GuardInterval, n_ess: u8, n_sym: usize) -> Self {
        let l = Layout::for_mode(mode);
        let u = l.unit();
        let l_ltf = 160 * u;
        let l_sig = l_ltf + 160 * u;
        let after_sig = l_sig + 80 * u;
        let (ht_sig, ht_stf, ht_ltf, n_ltf, data) = match mode.format {
            Format::NonHt => (after_sig, after_sig, after_sig, 0, after_sig),
            Format::Ht => {
                let n_ltf = 1 + n_ess as usize;
                let ht_stf = after_sig + 160 * u;
                let ht_ltf = ht_stf + 80 * u;
                (after_sig, ht_stf, ht_ltf, n_ltf, ht_ltf + 80 * u * n_ltf)
            }
        };
        let data_cp = l.cp(guard);
        FrameLayout {
            nfft: l.nfft,
            l_stf: 0,
            l_ltf,
            l_sig,
            ht_sig,
            ht_stf,
            ht_ltf,
            n_ltf,
            data,
            n_sym,
            data_cp,
            total: data + n_sym * (l.nfft + data_cp),
        }
    }

    pub fn sym_len(&self) -> usize {
        self.nfft + self.data_cp
    }

    /// Start of the FFT window (after CP) of data symbol `i`.
    pub fn data_body(&self, i: usize) -> usize {
        self.data + i * self.sym_len() + self.data_cp
    }
}

/// Number of data OFDM symbols carrying a PSDU of `psdu_len` bytes.
pub fn data_symbol_count(psdu_len: usize, n_dbps: usize) -> usize {
    (16 + 8 * psdu_len + 6).div_ceil(n_dbps)
}

fn bits_lsb(value: u32, n: usize) -> impl Iterator<Item = u8> {
    (0..n).map(move |i| ((value >> i) & 1) as u8)
}

pub(crate) fn bytes_to_bits(bytes: &[u8]) -> Vec<u8> {
    bytes.iter().flat_map(|&b| bits_lsb(b as u32, 8)).collect()
}

pub(crate) fn bits_to_bytes(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8).map(|c| c.iter().enumerate().fold(0u8, |acc, (i, &b)| acc | ((b & 1) << i))).collect()
}

/// RATE field bits R1..R4 for a legacy MCS index.
pub(crate) fn legacy_rate_bits(mcs: u8) -> [u8; 4] {
    match mcs {
        0 => [1, 1, 0, 1],
        1 => [1, 1, 1, 1],
        2 => [0, 1, 0, 1],
        3 => [0, 1, 1, 1],
        4 => [1, 0, 0, 1],
        5 => [1, 0, 1, 1],
        6 => [0, 0, 0, 1],
        _ => [0, 0, 1, 1],
    }
}

pub(crate) fn l_sig_bits(rate: [u8; 4], length: usize) -> Vec<u8> {
    let mut bits: Vec<u8> = rate.to_vec();
    bits.push(0);
    bits.extend(bits_lsb(length as u32, 12));
    let parity = bits.iter().fold(0, |a, b| a ^ b);
    bits.push(parity);
    bits.extend_from_slice(&[0; 6]);
    bits
}

pub(crate) fn ht_sig_bits(cfg: &FrameConfig, psdu_len: usize) -> Vec<u8> {
    let layout = Layout::for_mode(cfg.mode());
    let mut b: Vec<u8> = bits_lsb(cfg.mcs as u32, 7).collect();
    b.push(layout.wide as u8);
    b.extend(bits_lsb(psdu_len as u32, 16));
    b.extend_from_slice(&[1, 1, 1, 0, 0, 0, 0]);
    b.push((cfg.guard == GuardInterval::Short) as u8);
    b.extend(bits_lsb(cfg.n_ess as u32, 2));
    let crc = crc8_htsig(&b);
    b.extend_from_slice(&crc);
    b.extend_from_slice(&[0; 6]);
    b
}

/// One SIG-style symbol: 48 BPSK-coded bits on the legacy layout,
/// duplicated on every legacy shift, `rot` applied to the data tones.
fn sig_symbol(layout: &Layout, coded: &[u8], rot: Complex64, n: usize) -> Vec<Complex64> {
    let il = interleave(coded, 48, 1).expect("48 coded bits");
    let syms = map_qam(&il, Modulation::Bpsk).expect("bpsk");
    let pv = pilot_values(layout, Format::NonHt, n, 0);
    let data_k = layout.legacy_data_tones();
    let pilot_k = [-21, -7, 7, 21];
    let shifts = layout.legacy_shifts();
    tones(
        layout,
        shifts.iter().flat_map(|&s| {
            let d = data_k.iter().zip(&syms).map(move |(&k, &v)| (k + s, v * rot));
            let p = pilot_k.iter().zip(pv.clone()).map(move |(&k, v)| (k + s, Complex64::new(v, 0.0)));
            d.chain(p).collect::<Vec<_>>()
        }),
    )
}

fn cyclic(sym: &[Complex64], start: usize, len: usize) -> impl Iterator<Item = Complex64> + '_ {
    let n = sym.len();
    (0..len).map(move |i| sym[(start + i) % n])
}

fn psdu(payload: &[u8]) -> Vec<u8> {
    let mut p = payload.to_vec();
    p.extend_from_slice(&crc32(payload).to_le_bytes());
    p
}

/// Frequency-domain data symbols (FFT-ordered tone vectors) for `payload`
/// under the modulation, coding and scrambler seed of `cfg`.
pub fn regenerate_symbols(payload: &[u8], cfg: &FrameConfig) -> Result<Vec<Vec<Complex64>>> {
    let mut cfg = cfg.clone();
    cfg.payload = payload.to_vec();
    cfg.validate()?;
    let mode = cfg.mode();
    let layout = Layout::for_mode(mode);
    let rate = cfg.rate();
    let psdu = psdu(payload);
    let n_sym = data_symbol_count(psdu.len(), rate.n_dbps);
    let mut bits = vec![0u8; 16];
    bits.extend(bytes_to_bits(&psdu));
    let tail = bits.len();
    bits.resize(n_sym * rate.n_dbps, 0);
    let mut scr = scramble(cfg.scrambler_seed, &bits)?;
    for b in &mut scr[tail..tail + 6] {
        *b = 0;
    }
    let coded = bcc_encode(&scr, rate.code_rate);
    let data_k = layout.data_tones(cfg.format);
    let pilot_k = layout.pilot_tones(cfg.format);
    let z = match cfg.format {
        Format::NonHt => 1,
        Format::Ht => 3,
    };
    let perm = interleaver_permutation(rate.n_cbps, rate.n_bpsc);
    coded
        .chunks(rate.n_cbps)
        .enumerate()
        .map(|(n, block)| {
            let mut il = vec![0u8; rate.n_cbps];
            for (&b, &j) in block.iter().zip(&perm) {
                il[j] = b;
            }
            let syms = map_qam(&il, rate.modulation)?;
            let pv = pilot_values(&layout, cfg.format, n, z);
            Ok(tones(
                &layout,
                data_k
                    .iter()
                    .copied()
                    .zip(syms)
                    .chain(pilot_k.iter().zip(pv).map(|(&k, v)| (k, Complex64::new(v, 0.0)))),
            ))
        })
        .collect()
}

/// Build the time-domain PPDU for `cfg`.
pub fn assemble_frame(cfg: &FrameConfig) -> Result<BasebandBurst> {
    cfg.validate()?;
    let mode = cfg.mode();
    let layout = Layout::for_mode(mode);
    let u = layout.unit();
    let psdu_len = cfg.payload.len() + 4;
    let data = regenerate_symbols(&cfg.payload, cfg)?;
    let fl = FrameLayout::new(mode, cfg.guard, cfg.n_ess, data.len());
    let sc = layout.scale;
    let mut out: Vec<Complex64> = Vec::with_capacity(fl.total);

    let stf = ofdm_modulate(&l_stf_tones(&layout), 0, sc);
    out.extend(cyclic(&stf, 0, 160 * u));
    let ltf = ofdm_modulate(&l_ltf_tones(&layout), 0, sc);
    out.extend(cyclic(&ltf, layout.nfft - 32 * u, 160 * u));

    let one = Complex64::new(1.0, 0.0);
    let sig_rate = RateParams::signal();
    let (rate_bits, length) = match cfg.format {
        Format::NonHt => (legacy_rate_bits(cfg.mcs), psdu_len),
        Format::Ht => {
            // spoofed length: legacy receivers defer for the HT portion
            let rest_samples = fl.total - fl.ht_sig;
            let rest_us = (rest_samples / u).div_ceil(20);
            (legacy_rate_bits(0), 3 * rest_us.div_ceil(4) - 3)
        }
    };
    let lsig = bcc_encode(&l_sig_bits(rate_bits, length), sig_rate.code_rate);
    out.extend(ofdm_modulate(&sig_symbol(&layout, &lsig, one, 0), 16 * u, sc));

    if cfg.format == Format::Ht {
        let htsig = bcc_encode(&ht_sig_bits(cfg, psdu_len), CodeRate::R12);
        for (i, half) in htsig.chunks(48).enumerate() {
            out.extend(ofdm_modulate(&sig_symbol(&layout, half, J, i + 1), 16 * u, sc));
        }
        let hstf = ofdm_modulate(&ht_stf_tones(&layout), 0, sc);
        out.extend(cyclic(&hstf, 0, 80 * u));
        let hltf = ht_ltf_tones(&layout);
        // P matrix first column for one stream: +1, -1 for the ESS LTF
        for i in 0..fl.n_ltf {
            let sign = if i == 0 { 1.0 } else { -1.0 };
            let t: Vec<Complex64> = hltf.iter().map(|v| v * sign).collect();
            out.extend(ofdm_modulate(&t, 16 * u, sc));
        }
    }

    debug_assert_eq!(out.len(), fl.data);
    for sym in &data {
        out.extend(ofdm_modulate(sym, fl.data_cp, sc));
    }
    let mut burst = BasebandBurst::new(out, mode.nominal_sample_rate());
    burst.center_freq = 0.0;
    Ok(burst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phy::ChannelMode;

    fn ceil_div(a: usize, b: usize) -> usize {
        (a + b - 1) / b
    }

    #[test]
    fn symbol_count_oracle() {
        // bit budget: 16 service + 8*(payload+4 FCS) + 6 tail
        for (mode, mcs, payload, n_dbps) in [
            (PhyMode::HT20, 0u8, 100usize, 26usize),
            (PhyMode::HT20, 7, 1000, 260),
            (PhyMode::NON_HT, 0, 0, 24),
            (PhyMode::ht(ChannelMode::Ht40Plus), 3, 77, 216),
        ] {
            let cfg = FrameConfig::new(mode, mcs, vec![0xa5; payload]);
            assert_eq!(cfg.rate().n_dbps, n_dbps);
            let want = ceil_div(22 + 8 * (payload + 4), n_dbps);
            assert_eq!(regenerate_symbols(&cfg.payload, &cfg).unwrap().len(), want);
        }
        assert_eq!(data_symbol_count(104, 26), 33);
    }

    #[test]
    fn empty_nonht_frame_length() {
        let cfg = FrameConfig::new(PhyMode::NON_HT, 0, vec![]);
        let b = assemble_frame(&cfg).unwrap();
        // 16 + 32 + 6 = 54 bits -> 3 symbols at 24 bits each
        assert_eq!(b.len(), 160 + 160 + 80 + 3 * 80);
        assert_eq!(b.sample_rate, 20e6);
    }

    #[test]
    fn ess_adds_one_ltf() {
        let base = FrameConfig::new(PhyMode::HT20, 2, vec![1; 50]);
        let a = assemble_frame(&base).unwrap();
        let b = assemble_frame(&base.clone().with_ess(1)).unwrap();
        assert_eq!(b.len() - a.len(), 80);
        let w = assemble_frame(&FrameConfig::new(PhyMode::ht(ChannelMode::Ht40Minus), 2, vec![1; 50]).with_ess(1))
            .unwrap();
        assert_eq!(w.sample_rate, 40e6);
        assert_eq!(FrameLayout::new(PhyMode::ht(ChannelMode::Ht40Minus), GuardInterval::Long, 1, 0).n_ltf, 2);
    }

    #[test]
    fn seed_changes_symbols() {
        let cfg = FrameConfig::new(PhyMode::HT20, 4, vec![7; 40]);
        let a = regenerate_symbols(&cfg.payload, &cfg).unwrap();
        let b = regenerate_symbols(&cfg.payload, &cfg.clone().with_seed(0x11)).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn pilots_follow_polarity_oracle() {
        use crate::phy::ofdm::pilot_polarity;
        let cfg = FrameConfig::new(PhyMode::NON_HT, 1, vec![3; 200]);
        let syms = regenerate_symbols(&cfg.payload, &cfg).unwrap();
        for (n, s) in syms.iter().enumerate() {
            let p = pilot_polarity(n + 1);
            let got: Vec<f64> = [-21i32, -7, 7, 21].iter().map(|&k| s[k.rem_euclid(64) as usize].re).collect();
            assert_eq!(got, vec![p, p, p, -p]);
        }
    }

    #[test]
    fn null_tones_are_zero() {
        for mode in [PhyMode::NON_HT, PhyMode::HT20, PhyMode::ht(ChannelMode::Ht40Plus)] {
            let cfg = FrameConfig::new(mode, 5, vec![9; 30]);
            let grid = mode.csi_grid();
            for s in regenerate_symbols(&cfg.payload, &cfg).unwrap() {
                for (bin, v) in s.iter().enumerate() {
                    let k = if bin >= s.len() / 2 { bin as i32 - s.len() as i32 } else { bin as i32 };
                    if grid.position(k).is_none() {
                        assert_eq!(*v, Complex64::new(0.0, 0.0));
                    } else {
                        assert!(v.norm() > 0.1);
                    }
                }
            }
        }
    }

    #[test]
    fn oversize_payload_rejected() {
        assert!(assemble_frame(&FrameConfig::new(PhyMode::NON_HT, 0, vec![0; 4092])).is_err());
    }

    #[test]
    fn sig_parity_and_crc() {
        let b = l_sig_bits([1, 1, 0, 1], 100);
        assert_eq!(b.len(), 24);
        assert_eq!(b[..18].iter().fold(0, |a, x| a ^ x), 0);
        let cfg = FrameConfig::new(PhyMode::HT20, 3, vec![]);
        let h = ht_sig_bits(&cfg, 4);
        assert_eq!(h.len(), 48);
        assert_eq!(crc8_htsig(&h[..34]).to_vec(), h[34..42].to_vec());
    }
}
