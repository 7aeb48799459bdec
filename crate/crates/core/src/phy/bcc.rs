use crate::error::{Error, Result};

/// Convolutional code rate after puncturing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CodeRate {
    R12,
    R23,
    R34,
    R56,
}

impl CodeRate {
    pub fn ratio(self) -> (usize, usize) {
        match self {
            CodeRate::R12 => (1, 2),
            CodeRate::R23 => (2, 3),
            CodeRate::R34 => (3, 4),
            CodeRate::R56 => (5, 6),
        }
    }

    /// Keep mask over one puncturing period of interleaved (A, B) output pairs.
    fn pattern(self) -> &'static [bool] {
        match self {
            CodeRate::R12 => &[true, true],
            CodeRate::R23 => &[true, true, true, false],
            CodeRate::R34 => &[true, true, true, false, false, true],
            CodeRate::R56 => &[true, true, true, false, false, true, true, false, false, true],
        }
    }
}

const G_A: u8 = 0o133;
const G_B: u8 = 0o171;
const N_STATES: usize = 64;

#[inline]
fn outputs(reg: u8) -> (u8, u8) {
    // reg holds 7 bits, bit 6 is the newest input
    (((reg & G_A).count_ones() & 1) as u8, ((reg & G_B).count_ones() & 1) as u8)
}

/// K=7, 133/171 encoder followed by puncturing.
pub fn bcc_encode(bits: &[u8], rate: CodeRate) -> Vec<u8> {
    let pat = rate.pattern();
    let mut out = Vec::with_capacity(bits.len() * 2);
    let mut state = 0u8;
    let mut pos = 0;
    for &b in bits {
        let reg = ((b & 1) << 6) | state;
        let (a, c) = outputs(reg);
        for v in [a, c] {
            if pat[pos] {
                out.push(v);
            }
            pos = (pos + 1) % pat.len();
        }
        state = reg >> 1;
    }
    out
}

/// Number of coded bits produced for `n` input bits.
pub(crate) fn coded_len(n: usize, rate: CodeRate) -> usize {
    let pat = rate.pattern();
    let kept = pat.iter().filter(|&&k| k).count();
    let full = 2 * n / pat.len();
    let rem = 2 * n % pat.len();
    full * kept + pat[..rem].iter().filter(|&&k| k).count()
}

/// Hard-decision decode; see [`bcc_decode_soft`].
pub fn bcc_decode(bits: &[u8], rate: CodeRate, n_out: usize) -> Result<Vec<u8>> {
    let llr: Vec<f64> = bits.iter().map(|&b| if b & 1 == 1 { 1.0 } else { -1.0 }).collect();
    bcc_decode_soft(&llr, rate, n_out)
}

/// Soft Viterbi decoder. `llr` is positive for a likely 1. Punctured
/// positions are re-inserted as erasures. Returns `n_out` decoded bits.
pub fn bcc_decode_soft(llr: &[f64], rate: CodeRate, n_out: usize) -> Result<Vec<u8>> {
    let expected = coded_len(n_out, rate);
    if llr.len() != expected {
        return Err(Error::Length { expected, got: llr.len() });
    }
    let pat = rate.pattern();
    let mut full = Vec::with_capacity(2 * n_out);
    let mut it = llr.iter();
    for i in 0..2 * n_out {
        full.push(if pat[i % pat.len()] { *it.next().unwrap() } else { 0.0 });
    }

    let mut code = [0usize; 128];
    for (reg, c) in code.iter_mut().enumerate() {
        let (a, b) = outputs(reg as u8);
        *c = 2 * a as usize + b as usize;
    }
    // finite floor so unreachable states never produce NaN
    let floor = -1e300;
    let mut metric = [floor; N_STATES];
    metric[0] = 0.0;
    let mut decisions: Vec<u64> = Vec::with_capacity(n_out);
    for t in 0..n_out {
        let (la, lb) = (full[2 * t], full[2 * t + 1]);
        let bm = [-la - lb, -la + lb, la - lb, la + lb];
        let mut next = [0.0; N_STATES];
        let mut dec = 0u64;
        for (ns, slot) in next.iter_mut().enumerate() {
            // next state = reg >> 1, so reg = (ns << 1) | dropped_bit
            let r0 = ns << 1;
            let c0 = metric[r0 & 0x3f] + bm[code[r0]];
            let c1 = metric[(r0 | 1) & 0x3f] + bm[code[r0 | 1]];
            let pick = c1 > c0;
            *slot = if pick { c1 } else { c0 };
            dec |= (pick as u64) << ns;
        }
        metric = next;
        decisions.push(dec);
    }

    let mut state = (0..N_STATES)
        .max_by(|&a, &b| metric[a].partial_cmp(&metric[b]).unwrap())
        .unwrap_or(0);
    let mut out = vec![0u8; n_out];
    for t in (0..n_out).rev() {
        out[t] = ((state >> 5) & 1) as u8;
        let drop = (decisions[t] >> state) & 1;
        state = ((state << 1) & 0x3f) | drop as usize;
    }
    Ok(out)
}
