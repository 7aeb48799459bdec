//! Software 802.11a/g/n baseband (single spatial stream, BCC).
//!
//! The transmitter builds complete PPDUs (legacy preamble, HT preamble, data
//! symbols) as time-domain [`BasebandBurst`]s. The receiver detects the
//! packet, estimates CFO and CSI, decodes the SIG fields and payload, and
//! regenerates the transmitted data symbols so every data symbol can be
//! turned into an additional CSI measurement.

mod bcc;
mod crc;
mod interleaver;
mod ofdm;
mod qam;
mod rx;
mod scrambler;
mod tx;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use bcc::{bcc_decode, bcc_decode_soft, bcc_encode, CodeRate};
pub use crc::{crc32, crc8_htsig};
pub use interleaver::{deinterleave, interleave, interleaver_permutation};
pub use ofdm::{ofdm_demodulate, ofdm_modulate, pilot_polarity, Layout};
pub use qam::{demap_hard, demap_soft, map_qam, Modulation};
pub use rx::{
    detect_packet, equalize_and_decode, estimate_cfo_preamble, estimate_csi, receive, RxOptions,
};
pub use scrambler::{scramble, scrambler_keystream};
pub use tx::{assemble_frame, data_symbol_count, regenerate_symbols, FrameLayout};

/// Legacy (11a/g) or HT mixed-format (11n) PPDU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Format {
    NonHt,
    Ht,
}

/// Channel mode of the NIC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ChannelMode {
    Ht20,
    /// 40 MHz, secondary channel above the primary.
    Ht40Plus,
    /// 40 MHz, secondary channel below the primary.
    Ht40Minus,
}

impl ChannelMode {
    pub fn is_40(self) -> bool {
        !matches!(self, ChannelMode::Ht20)
    }
}

impl std::str::FromStr for ChannelMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "HT20" => Ok(ChannelMode::Ht20),
            "HT40+" | "HT40PLUS" => Ok(ChannelMode::Ht40Plus),
            "HT40-" | "HT40MINUS" => Ok(ChannelMode::Ht40Minus),
            _ => Err(Error::domain(format!("unknown channel mode '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GuardInterval {
    /// 0.8 us
    Long,
    /// 0.4 us
    Short,
}

/// Everything the receiver needs to know up front about a PPDU: format and
/// where in the channel it sits. Rate, length and scrambler seed are decoded
/// from the frame itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PhyMode {
    pub format: Format,
    pub channel_mode: ChannelMode,
    /// A 20 MHz PPDU sent by a 40 MHz NIC in its primary half only.
    pub half_band: bool,
}

impl PhyMode {
    pub const NON_HT: PhyMode =
        PhyMode { format: Format::NonHt, channel_mode: ChannelMode::Ht20, half_band: false };
    pub const HT20: PhyMode =
        PhyMode { format: Format::Ht, channel_mode: ChannelMode::Ht20, half_band: false };

    pub fn ht(channel_mode: ChannelMode) -> Self {
        PhyMode { format: Format::Ht, channel_mode, half_band: false }
    }

    pub fn half_band(channel_mode: ChannelMode) -> Self {
        PhyMode { format: Format::Ht, channel_mode, half_band: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format == Format::NonHt && self.channel_mode.is_40() {
            return Err(Error::domain("non-HT PPDUs cannot use HT40 channel modes"));
        }
        if self.half_band && !self.channel_mode.is_40() {
            return Err(Error::domain("half-band transmission needs an HT40 channel mode"));
        }
        Ok(())
    }

    /// Sampling rate of the baseband at nominal clocking.
    pub fn nominal_sample_rate(&self) -> f64 {
        if self.channel_mode.is_40() {
            40e6
        } else {
            20e6
        }
    }

    /// Compact numeric code used by the capture file.
    pub fn code(&self) -> u8 {
        match (self.format, self.channel_mode, self.half_band) {
            (Format::NonHt, _, _) => 0,
            (Format::Ht, ChannelMode::Ht20, _) => 1,
            (Format::Ht, ChannelMode::Ht40Plus, false) => 2,
            (Format::Ht, ChannelMode::Ht40Minus, false) => 3,
            (Format::Ht, ChannelMode::Ht40Plus, true) => 4,
            (Format::Ht, ChannelMode::Ht40Minus, true) => 5,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Ok(match code {
            0 => PhyMode::NON_HT,
            1 => PhyMode::HT20,
            2 => PhyMode::ht(ChannelMode::Ht40Plus),
            3 => PhyMode::ht(ChannelMode::Ht40Minus),
            4 => PhyMode::half_band(ChannelMode::Ht40Plus),
            5 => PhyMode::half_band(ChannelMode::Ht40Minus),
            _ => return Err(Error::Format(format!("unknown channel mode code {code}"))),
        })
    }

    /// Grid of subcarriers on which this mode reports CSI.
    pub fn csi_grid(&self) -> SubcarrierGrid {
        SubcarrierGrid::for_mode(*self)
    }
}

impl std::fmt::Display for PhyMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self.code() {
            0 => "nonht",
            1 => "ht20",
            2 => "ht40+",
            3 => "ht40-",
            4 => "half40+",
            _ => "half40-",
        })
    }
}

impl std::str::FromStr for PhyMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let m = s.to_ascii_lowercase();
        match m.as_str() {
            "nonht" | "non-ht" | "legacy" => Ok(PhyMode::NON_HT),
            "half40+" => Ok(PhyMode::half_band(ChannelMode::Ht40Plus)),
            "half40-" => Ok(PhyMode::half_band(ChannelMode::Ht40Minus)),
            _ => m.parse::<ChannelMode>().map(PhyMode::ht).map_err(|_| {
                Error::domain(format!("unknown PHY mode '{s}' (nonht, ht20, ht40+, ht40-, half40+, half40-)"))
            }),
        }
    }
}

/// Transmit parameters of one PPDU.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameConfig {
    pub format: Format,
    pub channel_mode: ChannelMode,
    pub half_band: bool,
    pub mcs: u8,
    pub guard: GuardInterval,
    pub scrambler_seed: u8,
    pub n_ess: u8,
    pub payload: Vec<u8>,
}

impl FrameConfig {
    pub fn new(mode: PhyMode, mcs: u8, payload: Vec<u8>) -> Self {
        FrameConfig {
            format: mode.format,
            channel_mode: mode.channel_mode,
            half_band: mode.half_band,
            mcs,
            guard: GuardInterval::Long,
            scrambler_seed: 0x5d,
            n_ess: 0,
            payload,
        }
    }

    pub fn with_guard(mut self, guard: GuardInterval) -> Self {
        self.guard = guard;
        self
    }

    pub fn with_seed(mut self, seed: u8) -> Self {
        self.scrambler_seed = seed;
        self
    }

    pub fn with_ess(mut self, n_ess: u8) -> Self {
        self.n_ess = n_ess;
        self
    }

    pub fn mode(&self) -> PhyMode {
        PhyMode { format: self.format, channel_mode: self.channel_mode, half_band: self.half_band }
    }

    pub fn validate(&self) -> Result<()> {
        self.mode().validate()?;
        if self.mcs > 7 {
            return Err(Error::domain(format!("MCS {} unsupported (single stream 0-7)", self.mcs)));
        }
        if self.scrambler_seed == 0 || self.scrambler_seed > 127 {
            return Err(Error::domain("scrambler seed must be in 1..=127"));
        }
        if self.n_ess > 1 {
            return Err(Error::domain("N_ESS must be 0 or 1"));
        }
        if self.format == Format::NonHt && (self.guard == GuardInterval::Short || self.n_ess != 0) {
            return Err(Error::domain("non-HT PPDUs use the long guard interval and no ESS"));
        }
        let max = match self.format {
            Format::NonHt => 4095,
            Format::Ht => 65535,
        };
        if self.payload.len() + 4 > max {
            return Err(Error::domain(format!(
                "payload of {} bytes exceeds the {max}-byte PSDU limit",
                self.payload.len()
            )));
        }
        Ok(())
    }

    pub fn rate(&self) -> RateParams {
        RateParams::new(self.mode(), self.mcs)
    }
}

/// Modulation and coding parameters of one rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateParams {
    pub modulation: Modulation,
    pub code_rate: CodeRate,
    /// Data subcarriers per symbol.
    pub n_sd: usize,
    pub n_bpsc: usize,
    pub n_cbps: usize,
    pub n_dbps: usize,
}

impl RateParams {
    pub fn new(mode: PhyMode, mcs: u8) -> Self {
        use CodeRate::*;
        use Modulation::*;
        let (modulation, code_rate) = match (mode.format, mcs) {
            (Format::NonHt, 0) => (Bpsk, R12),
            (Format::NonHt, 1) => (Bpsk, R34),
            (Format::NonHt, 2) => (Qpsk, R12),
            (Format::NonHt, 3) => (Qpsk, R34),
            (Format::NonHt, 4) => (Qam16, R12),
            (Format::NonHt, 5) => (Qam16, R34),
            (Format::NonHt, 6) => (Qam64, R23),
            (Format::NonHt, _) => (Qam64, R34),
            (Format::Ht, 0) => (Bpsk, R12),
            (Format::Ht, 1) => (Qpsk, R12),
            (Format::Ht, 2) => (Qpsk, R34),
            (Format::Ht, 3) => (Qam16, R12),
            (Format::Ht, 4) => (Qam16, R34),
            (Format::Ht, 5) => (Qam64, R23),
            (Format::Ht, 6) => (Qam64, R34),
            (Format::Ht, _) => (Qam64, R56),
        };
        let n_sd = match (mode.format, mode.channel_mode.is_40() && !mode.half_band) {
            (Format::NonHt, _) => 48,
            (Format::Ht, false) => 52,
            (Format::Ht, true) => 108,
        };
        let n_bpsc = modulation.bits_per_symbol();
        let n_cbps = n_sd * n_bpsc;
        let (num, den) = code_rate.ratio();
        RateParams { modulation, code_rate, n_sd, n_bpsc, n_cbps, n_dbps: n_cbps * num / den }
    }

    /// The 6 Mb/s rate used by SIG fields.
    pub(crate) fn signal() -> Self {
        RateParams::new(PhyMode::NON_HT, 0)
    }
}

/// Complex baseband samples and the rate they were taken at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasebandBurst {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    /// Carrier the burst is centred on; informational.
    pub center_freq: f64,
}

impl BasebandBurst {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64) -> Self {
        BasebandBurst { samples, sample_rate, center_freq: 0.0 }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn with_samples(&self, samples: Vec<Complex64>) -> Self {
        BasebandBurst { samples, sample_rate: self.sample_rate, center_freq: self.center_freq }
    }

    pub fn mean_power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|s| s.norm_sqr()).sum::<f64>() / self.samples.len() as f64
    }

    /// Prepend `n` zero samples.
    pub fn delayed(&self, n: usize) -> Self {
        let mut s = vec![Complex64::new(0.0, 0.0); n];
        s.extend_from_slice(&self.samples);
        self.with_samples(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_rate > 0.0) {
            return Err(Error::domain("sample rate must be positive"));
        }
        if self.samples.iter().any(|s| !s.re.is_finite() || !s.im.is_finite()) {
            return Err(Error::domain("burst contains non-finite samples"));
        }
        Ok(())
    }

    /// Interleaved little-endian f32 I/Q, as written by SDR tools.
    pub fn to_iq_f32_le(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.samples.len() * 8);
        for s in &self.samples {
            out.extend_from_slice(&(s.re as f32).to_le_bytes());
            out.extend_from_slice(&(s.im as f32).to_le_bytes());
        }
        out
    }

    pub fn from_iq_f32_le(bytes: &[u8], sample_rate: f64, center_freq: f64) -> Result<Self> {
        if bytes.len() % 8 != 0 {
            return Err(Error::Format("I/Q stream length is not a multiple of 8 bytes".into()));
        }
        let samples = bytes
            .chunks_exact(8)
            .map(|c| {
                let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
                let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
                Complex64::new(re as f64, im as f64)
            })
            .collect();
        Ok(BasebandBurst { samples, sample_rate, center_freq })
    }

    /// Sidecar metadata for [`to_iq_f32_le`](Self::to_iq_f32_le) exports.
    pub fn sidecar(&self) -> String {
        format!(
            "{{\"sample_rate\": {}, \"center_freq\": {}, \"format\": \"cf32_le\", \"n_samples\": {}}}\n",
            self.sample_rate,
            self.center_freq,
            self.samples.len()
        )
    }
}

/// Subcarriers that carry training energy, by signed index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubcarrierGrid {
    pub indices: Vec<i32>,
    pub pilot_indices: Vec<i32>,
    /// Index offset of the grid centre relative to the channel centre (half-band grids).
    pub center_offset: i32,
}

impl SubcarrierGrid {
    pub fn for_mode(mode: PhyMode) -> Self {
        let (raw, pilots): (Vec<i32>, Vec<i32>) = match mode.format {
            Format::NonHt => ((-26..=26).filter(|&k| k != 0).collect(), vec![-21, -7, 7, 21]),
            Format::Ht if mode.channel_mode.is_40() && !mode.half_band => (
                (-58..=58).filter(|&k: &i32| k.abs() >= 2).collect(),
                vec![-53, -25, -11, 11, 25, 53],
            ),
            Format::Ht => ((-28..=28).filter(|&k| k != 0).collect(), vec![-21, -7, 7, 21]),
        };
        let offset = Layout::for_mode(mode).offset;
        SubcarrierGrid {
            indices: raw.iter().map(|k| k + offset).collect(),
            pilot_indices: pilots.iter().map(|k| k + offset).collect(),
            center_offset: offset,
        }
    }

    pub fn from_indices(indices: Vec<i32>) -> Self {
        SubcarrierGrid { indices, pilot_indices: Vec::new(), center_offset: 0 }
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn position(&self, k: i32) -> Option<usize> {
        self.indices.binary_search(&k).ok()
    }
}

/// Tone spacing for a burst sampled at `sample_rate` with an `nfft`-point FFT.
pub fn subcarrier_spacing(sample_rate: f64, nfft: usize) -> f64 {
    sample_rate / nfft as f64
}

/// Decoded content of the SIG fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SigInfo {
    pub mcs: u8,
    pub psdu_len: usize,
    pub guard: GuardInterval,
    pub n_ess: u8,
}

/// Everything the receiver learned from one PPDU.
#[derive(Debug, Clone, PartialEq)]
pub struct RxResult {
    pub csi: crate::csikit::CsiFrame,
    /// PSDU without the FCS.
    pub payload: Vec<u8>,
    pub fcs_ok: bool,
    pub sig: SigInfo,
    pub scrambler_seed: u8,
    pub offset: usize,
    pub cfo_preamble: f64,
    pub evm_db: f64,
    /// `Y_i / X_i` for every data symbol, without pilot phase tracking.
    pub data_symbol_csi: Vec<Vec<Complex64>>,
    /// Same train with the pilot-tracked common phase removed.
    pub data_symbol_csi_tracked: Vec<Vec<Complex64>>,
    /// CSI measured on HT extension LTFs.
    pub ess_csi: Vec<Vec<Complex64>>,
    /// Data symbol period, seconds.
    pub sym_duration: f64,
}

impl RxResult {
    /// The untracked train as it looks before preamble CFO correction: symbol
    /// `n` is rotated forward by `2 pi cfo n T_sym`.
    pub fn raw_data_symbol_csi(&self) -> Vec<Vec<Complex64>> {
        let w = std::f64::consts::TAU * self.cfo_preamble * self.sym_duration;
        self.data_symbol_csi
            .iter()
            .enumerate()
            .map(|(n, s)| {
                let r = Complex64::from_polar(1.0, w * n as f64);
                s.iter().map(|v| v * r).collect()
            })
            .collect()
    }
}
