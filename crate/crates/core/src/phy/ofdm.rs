use num_complex::Complex64;

use super::{Format, GuardInterval, PhyMode};
use crate::dsp;

const C0: Complex64 = Complex64::new(0.0, 0.0);

/// FFT size, tone placement and power normalisation for one PHY mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layout {
    pub nfft: usize,
    /// Shift applied to 20 MHz tone indices (half-band frames only).
    pub offset: i32,
    /// Full 40 MHz HT fields.
    pub wide: bool,
    /// Time-domain scale: x = scale * IDFT_unnormalised(X).
    pub scale: f64,
}

impl Layout {
    pub fn for_mode(mode: PhyMode) -> Self {
        let nfft = if mode.channel_mode.is_40() { 128 } else { 64 };
        let offset = match (mode.half_band, mode.channel_mode) {
            (true, super::ChannelMode::Ht40Plus) => -32,
            (true, super::ChannelMode::Ht40Minus) => 32,
            _ => 0,
        };
        let wide = mode.channel_mode.is_40() && !mode.half_band && mode.format == Format::Ht;
        let n_st = if wide { 114.0 } else { 56.0 };
        Layout { nfft, offset, wide, scale: 1.0 / f64::sqrt(n_st) }
    }

    pub fn cp(&self, guard: GuardInterval) -> usize {
        match guard {
            GuardInterval::Long => self.nfft / 4,
            GuardInterval::Short => self.nfft / 8,
        }
    }

    /// Samples per 20 MHz-equivalent microsecond unit (1 at 20 MHz, 2 at 40 MHz).
    pub fn unit(&self) -> usize {
        self.nfft / 64
    }

    pub fn bin(&self, k: i32) -> usize {
        k.rem_euclid(self.nfft as i32) as usize
    }

    /// Centres at which the 20 MHz legacy fields are placed.
    pub(crate) fn legacy_shifts(&self) -> Vec<i32> {
        if self.nfft == 128 && self.offset == 0 {
            vec![-32, 32]
        } else {
            vec![self.offset]
        }
    }

    pub(crate) fn legacy_data_tones(&self) -> Vec<i32> {
        let p = [-21, -7, 7, 21];
        (-26..=26).filter(|k| *k != 0 && !p.contains(k)).collect()
    }

    /// Data tones of HT or legacy data symbols, offset applied.
    pub(crate) fn data_tones(&self, format: Format) -> Vec<i32> {
        let pilots = self.pilot_tones(format);
        let (lo, hi, dc) = match (format, self.wide) {
            (Format::NonHt, _) => (-26, 26, 0),
            (Format::Ht, false) => (-28, 28, 0),
            (Format::Ht, true) => (-58, 58, 1),
        };
        (lo..=hi)
            .map(|k| k + self.offset)
            .filter(|k| (k - self.offset).abs() > dc && !pilots.contains(k))
            .collect()
    }

    pub(crate) fn pilot_tones(&self, _format: Format) -> Vec<i32> {
        let raw: &[i32] = if self.wide { &[-53, -25, -11, 11, 25, 53] } else { &[-21, -7, 7, 21] };
        raw.iter().map(|k| k + self.offset).collect()
    }
}

/// Pilot polarity p_n: 0 -> +1, 1 -> -1 over the all-ones scrambler sequence.
pub fn pilot_polarity(n: usize) -> f64 {
    thread_local! {
        static SEQ: Vec<f64> = super::scrambler::scrambler_keystream(0x7f, 127)
            .unwrap()
            .into_iter()
            .map(|b| if b == 0 { 1.0 } else { -1.0 })
            .collect();
    }
    SEQ.with(|s| s[n % 127])
}

/// Pilot values for data-bearing symbol `n` (SIG fields count from 0).
pub(crate) fn pilot_values(layout: &Layout, format: Format, n: usize, z: usize) -> Vec<f64> {
    let p = pilot_polarity(n + z);
    match (format, layout.wide) {
        (Format::NonHt, _) => [1.0, 1.0, 1.0, -1.0].iter().map(|v| v * p).collect(),
        (Format::Ht, false) => {
            let psi = [1.0, 1.0, 1.0, -1.0];
            (0..4).map(|j| psi[(n + j) % 4] * p).collect()
        }
        (Format::Ht, true) => {
            let psi = [1.0, 1.0, -1.0, -1.0, -1.0, 1.0];
            (0..6).map(|j| psi[(n + j) % 6] * p).collect()
        }
    }
}

const L_LTF: [i8; 53] = [
    1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 0, 1, -1,
    -1, 1, 1, -1, 1, -1, 1, -1, -1, -1, -1, -1, 1, 1, -1, -1, 1, -1, 1, -1, 1, 1, 1, 1,
];

pub(crate) fn l_ltf_value(k: i32) -> f64 {
    if (-26..=26).contains(&k) {
        L_LTF[(k + 26) as usize] as f64
    } else {
        0.0
    }
}

pub(crate) fn l_stf_value(k: i32) -> Complex64 {
    let a = f64::sqrt(13.0 / 6.0);
    let p = Complex64::new(a, a);
    match k {
        -24 | -16 | -4 | 12 | 16 | 20 | 24 => p,
        -20 | -12 | -8 | 4 | 8 => -p,
        _ => C0,
    }
}

fn ht_ltf_20_value(k: i32) -> f64 {
    match k {
        -28 | -27 => 1.0,
        27 | 28 => -1.0,
        _ => l_ltf_value(k),
    }
}

fn ht_ltf_40_value(k: i32) -> f64 {
    const MID: [f64; 11] = [-1.0, -1.0, -1.0, 1.0, 0.0, 0.0, 0.0, -1.0, 1.0, 1.0, -1.0];
    match k {
        -58..=-6 => {
            if k == -32 {
                -1.0
            } else {
                l_ltf_value(k + 32)
            }
        }
        -5..=5 => MID[(k + 5) as usize],
        6..=58 => {
            if k == 32 {
                -1.0
            } else {
                l_ltf_value(k - 32)
            }
        }
        _ => 0.0,
    }
}

/// Build an FFT-ordered tone vector from (index, value) pairs.
pub(crate) fn tones(layout: &Layout, items: impl IntoIterator<Item = (i32, Complex64)>) -> Vec<Complex64> {
    let mut x = vec![C0; layout.nfft];
    for (k, v) in items {
        x[layout.bin(k)] = v;
    }
    x
}

pub(crate) fn l_stf_tones(layout: &Layout) -> Vec<Complex64> {
    let shifts = layout.legacy_shifts();
    tones(layout, shifts.iter().flat_map(|&s| (-26..=26).map(move |k| (k + s, l_stf_value(k)))))
}

pub(crate) fn l_ltf_tones(layout: &Layout) -> Vec<Complex64> {
    let shifts = layout.legacy_shifts();
    tones(
        layout,
        shifts.iter().flat_map(|&s| (-26..=26).map(move |k| (k + s, Complex64::new(l_ltf_value(k), 0.0)))),
    )
}

pub(crate) fn ht_stf_tones(layout: &Layout) -> Vec<Complex64> {
    l_stf_tones(layout)
}

/// HT-LTF training value on signed tone `k` (offset applied).
pub(crate) fn ht_ltf_value(layout: &Layout, k: i32) -> f64 {
    if layout.wide {
        ht_ltf_40_value(k)
    } else {
        ht_ltf_20_value(k - layout.offset)
    }
}

pub(crate) fn ht_ltf_tones(layout: &Layout) -> Vec<Complex64> {
    let (lo, hi) = if layout.wide { (-58, 58) } else { (-28 + layout.offset, 28 + layout.offset) };
    tones(layout, (lo..=hi).map(|k| (k, Complex64::new(ht_ltf_value(layout, k), 0.0))))
}

/// IDFT of an FFT-ordered tone vector, prefixed with `cp` cyclic samples.
pub fn ofdm_modulate(freq: &[Complex64], cp: usize, scale: f64) -> Vec<Complex64> {
    let n = freq.len();
    let mut buf = freq.to_vec();
    dsp::ifft(&mut buf);
    for v in buf.iter_mut() {
        *v *= scale;
    }
    let mut out = Vec::with_capacity(n + cp);
    out.extend_from_slice(&buf[n - cp..]);
    out.extend_from_slice(&buf);
    out
}

/// DFT of exactly one symbol body (no cyclic prefix), undoing `scale`.
pub fn ofdm_demodulate(time: &[Complex64], scale: f64) -> Vec<Complex64> {
    let n = time.len();
    let mut buf = time.to_vec();
    dsp::fft(&mut buf);
    let k = 1.0 / (scale * n as f64);
    for v in buf.iter_mut() {
        *v *= k;
    }
    buf
}
