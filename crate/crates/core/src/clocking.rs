//! Baseband PLL and carrier synthesizer arithmetic for the QCA9300 family.
//!
//! The baseband PLL is tuned by a quadruple `(DIV_INT, REF_DIV, CLK_SEL,
//! HT20_40)`; every clock in the digital and analog baseband derives from the
//! resulting `f_pll`. The carrier synthesizer is tuned by an integer CHANSEL
//! word, so carriers live on a fixed grid.
//!
//! All arithmetic is carried out on exact rationals and converted to `f64` at
//! the end, so table values reproduce bit-for-bit.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Crystal oscillator feeding both the baseband PLL and the synthesizer.
pub const F_XTAL_HZ: u64 = 40_000_000;

/// Fractional resolution of the synthesizer (CHANSEL LSB = f_xtal / 2^17).
pub const SYNTH_FRAC_BITS: u32 = 17;

/// Table III's printed 2.4 GHz resolution. Kept for reference only: it does not
/// follow from the 3/4 conversion ratio and is not used for quantization.
pub const TABLE_2G4_RESOLUTION_HZ: f64 = 203.3;

/// Largest `DIV_INT` visited by [`quad_for_bandwidth`].
pub const MAX_DIV_INT: u32 = 255;
/// Largest `REF_DIV` visited by [`quad_for_bandwidth`].
pub const MAX_REF_DIV: u32 = 10;

/// Documented (DIV_INT, REF_DIV, CLK_SEL) settings; each is valid with either
/// HT20_40 value.
pub const TABLE_QUADS: [(u32, u32, u8); 7] =
    [(22, 10, 1), (22, 10, 0), (22, 5, 1), (22, 5, 0), (33, 5, 0), (44, 5, 0), (88, 5, 0)];

/// PLL tuning parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PllQuadruple {
    pub div_int: u32,
    pub ref_div: u32,
    pub clk_sel: u8,
    pub ht20_40: u8,
}

impl PllQuadruple {
    pub fn new(div_int: u32, ref_div: u32, clk_sel: u8, ht20_40: u8) -> Result<Self> {
        let q = PllQuadruple { div_int, ref_div, clk_sel, ht20_40 };
        q.validate()?;
        Ok(q)
    }

    pub fn validate(&self) -> Result<()> {
        if self.div_int == 0 || self.ref_div == 0 {
            return Err(Error::domain("DIV_INT and REF_DIV must be >= 1"));
        }
        if self.clk_sel > 2 {
            return Err(Error::domain(format!("CLK_SEL {} not in {{0,1,2}}", self.clk_sel)));
        }
        if self.ht20_40 > 1 {
            return Err(Error::domain(format!("HT20_40 {} not in {{0,1}}", self.ht20_40)));
        }
        Ok(())
    }

    /// f_pll as an exact fraction `num / den` in Hz.
    fn pll_ratio(&self) -> (u128, u128) {
        let num = F_XTAL_HZ as u128 * self.div_int as u128 * (1u128 << self.ht20_40);
        let den = self.ref_div as u128 * (1u128 << (2 + self.clk_sel));
        (num, den)
    }

    /// Bandwidth as an exact fraction: f_pll * 20 / 88.
    fn bandwidth_ratio(&self) -> (u128, u128) {
        let (n, d) = self.pll_ratio();
        (n * 20, d * 88)
    }
}

impl std::fmt::Display for PllQuadruple {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {}, {})", self.div_int, self.ref_div, self.clk_sel, self.ht20_40)
    }
}

/// Clocks derived from the baseband PLL.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockSet {
    pub f_pll: f64,
    pub f_digi_bb: f64,
    pub f_rx_adc: f64,
    pub f_tx_dac: f64,
    pub bandwidth: f64,
}

/// Frequency band served by the shared synthesizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Band {
    Band2G4,
    Band5G,
}

impl Band {
    /// Supported carrier range (Hz), inclusive.
    pub fn carrier_range(self) -> (f64, f64) {
        match self {
            Band::Band2G4 => (2.25e9, 3.0e9),
            Band::Band5G => (4.5e9, 6.0e9),
        }
    }

    /// Band whose supported range contains `freq`, if any.
    pub fn containing(freq: f64) -> Option<Band> {
        [Band::Band2G4, Band::Band5G].into_iter().find(|b| {
            let (lo, hi) = b.carrier_range();
            freq >= lo && freq <= hi
        })
    }

    /// Carrier grid step expressed in units of the synthesizer LSB, as `num/den`.
    fn grid_multiplier(self) -> (u64, u64) {
        match self {
            Band::Band2G4 => (3, 4),
            // Only 3x the synthesizer LSB reproduces the observed 5.2 GHz neighbours.
            Band::Band5G => (3, 1),
        }
    }

    /// Synthesizer-to-carrier conversion ratio.
    fn rf_ratio(self) -> (u64, u64) {
        match self {
            Band::Band2G4 => (3, 4),
            Band::Band5G => (3, 2),
        }
    }
}

impl std::str::FromStr for Band {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "2g4" | "2.4" | "2.4g" | "2g" | "2.4ghz" => Ok(Band::Band2G4),
            "5g" | "5" | "5ghz" => Ok(Band::Band5G),
            other => Err(Error::domain(format!("unknown band '{other}'"))),
        }
    }
}

/// A synthesizer tuning word and the frequencies it produces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthesizerSetting {
    pub chansel: u64,
    pub band: Band,
    pub f_syn: f64,
    pub f_rf: f64,
    /// f_syn inside the VCO's 3.0-4.0 GHz operating range.
    pub valid: bool,
}

impl SynthesizerSetting {
    pub fn new(chansel: u64, band: Band) -> Self {
        let f_syn = synth_frequency(chansel);
        let (n, d) = band.rf_ratio();
        let f_rf = (chansel as u128 * F_XTAL_HZ as u128 * n as u128) as f64
            / ((d as u128) << SYNTH_FRAC_BITS) as f64;
        SynthesizerSetting { chansel, band, f_syn, f_rf, valid: (3.0e9..=4.0e9).contains(&f_syn) }
    }
}

/// Result of snapping a requested carrier onto the synthesizer grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CarrierQuantization {
    pub lower: f64,
    pub upper: f64,
    pub chosen: f64,
    pub step: f64,
}

/// `f_pll = f_xtal / REF_DIV * DIV_INT * 2^HT20_40 / 2^(2 + CLK_SEL)`.
pub fn pll_frequency(quad: PllQuadruple) -> Result<f64> {
    quad.validate()?;
    let (n, d) = quad.pll_ratio();
    Ok(n as f64 / d as f64)
}

pub fn derived_clocks(quad: PllQuadruple) -> Result<ClockSet> {
    let f_pll = pll_frequency(quad)?;
    let (bn, bd) = quad.bandwidth_ratio();
    Ok(ClockSet {
        f_pll,
        f_digi_bb: f_pll / 2.0,
        f_rx_adc: f_pll,
        f_tx_dac: 2.0 * f_pll,
        bandwidth: bn as f64 / bd as f64,
    })
}

pub fn bandwidth_for_quad(quad: PllQuadruple) -> Result<f64> {
    Ok(derived_clocks(quad)?.bandwidth)
}

/// Inverse of the bandwidth table.
///
/// Searches `DIV_INT <= 255`, `REF_DIV <= 10` over all CLK_SEL/HT20_40 values
/// for the quadruple whose bandwidth is closest to `target`. Among equally
/// close candidates the documented [`TABLE_QUADS`] settings win, then
/// HT20_40 = 0, then the smaller REF_DIV, then the smaller DIV_INT.
pub fn quad_for_bandwidth(target: f64) -> Result<PllQuadruple> {
    if !(2.5e6..=80e6).contains(&target) {
        return Err(Error::domain(format!("bandwidth {target} Hz outside 2.5-80 MHz")));
    }
    let mut best: Option<(f64, (bool, u8, u32, u32, u8), PllQuadruple)> = None;
    for ht20_40 in 0..=1u8 {
        for ref_div in 1..=MAX_REF_DIV {
            for div_int in 1..=MAX_DIV_INT {
                for clk_sel in 0..=2u8 {
                    let q = PllQuadruple { div_int, ref_div, clk_sel, ht20_40 };
                    let (n, d) = q.bandwidth_ratio();
                    let err = (n as f64 / d as f64 - target).abs();
                    let documented = TABLE_QUADS.contains(&(div_int, ref_div, clk_sel));
                    let key = (!documented, ht20_40, ref_div, div_int, clk_sel);
                    let better = match &best {
                        None => true,
                        Some((e, k, _)) => err < *e || (err == *e && key < *k),
                    };
                    if better {
                        best = Some((err, key, q));
                    }
                }
            }
        }
    }
    Ok(best.expect("search space is non-empty").2)
}

/// `f_syn = CHANSEL * f_xtal / 2^17`.
pub fn synth_frequency(chansel: u64) -> f64 {
    (chansel as u128 * F_XTAL_HZ as u128) as f64 / (1u128 << SYNTH_FRAC_BITS) as f64
}

/// Synthesizer LSB (305.17578125 Hz).
pub fn synth_resolution() -> f64 {
    synth_frequency(1)
}

/// Carrier grid step for the band.
pub fn tuning_resolution(band: Band) -> f64 {
    let (n, d) = band.grid_multiplier();
    (F_XTAL_HZ as f64 * n as f64) / ((d as u128) << SYNTH_FRAC_BITS) as f64
}

/// Snap `target` to the carrier grid of `band`.
///
/// Grid points are `m * F_XTAL * num / (den * 2^17)` for integer `m`; the
/// bracketing multiples are found with integer arithmetic on `target * den * 2^17`.
pub fn quantize_carrier(target: f64, band: Band) -> Result<CarrierQuantization> {
    let (lo, hi) = band.carrier_range();
    if !target.is_finite() || target < lo || target > hi {
        return Err(Error::domain(format!("carrier {target} Hz outside {lo}-{hi} Hz for {band:?}")));
    }
    let (n, d) = band.grid_multiplier();
    let unit_num = F_XTAL_HZ as u128 * n as u128; // step = unit_num / unit_den
    let unit_den = (d as u128) << SYNTH_FRAC_BITS;
    let step = unit_num as f64 / unit_den as f64;

    // An f64 is exactly mant * 2^exp, so target / step is an exact rational.
    let (mant, exp) = decode_f64(target);
    let (mut scaled, mut denom) = (mant as u128 * unit_den, unit_num);
    if exp >= 0 {
        scaled <<= exp;
    } else {
        denom <<= -exp;
    }
    let m_floor = scaled / denom;
    let exact = scaled % denom == 0;
    let to_hz = |m: u128| (m * unit_num) as f64 / unit_den as f64;
    let lower = to_hz(m_floor);
    if exact {
        return Ok(CarrierQuantization { lower, upper: lower, chosen: lower, step });
    }
    let upper = to_hz(m_floor + 1);
    // Nearer wins, ties go low. Compare remainders exactly.
    let rem = scaled - m_floor * denom;
    let chosen = if 2 * rem <= denom { lower } else { upper };
    Ok(CarrierQuantization { lower, upper, chosen, step })
}

fn decode_f64(x: f64) -> (u64, i32) {
    let bits = x.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = bits & ((1u64 << 52) - 1);
    if exp == 0 {
        (frac << 1, -1075)
    } else {
        (frac | (1u64 << 52), exp - 1075)
    }
}

/// The synthesizer word that realises a grid carrier.
pub fn synth_setting_for_carrier(carrier: f64, band: Band) -> Result<SynthesizerSetting> {
    let q = quantize_carrier(carrier, band)?;
    let (rn, rd) = band.rf_ratio();
    let chansel = (q.chosen * rd as f64 / rn as f64 / synth_resolution()).round() as u64;
    Ok(SynthesizerSetting::new(chansel, band))
}
