use num_complex::Complex64;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modulation {
    Bpsk,
    Qpsk,
    Qam16,
    Qam64,
}

impl Modulation {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
            Modulation::Qam64 => 6,
        }
    }

    fn bits_per_axis(self) -> usize {
        (self.bits_per_symbol() / 2).max(1)
    }

    pub fn norm(self) -> f64 {
        match self {
            Modulation::Bpsk => 1.0,
            Modulation::Qpsk => 1.0 / 2f64.sqrt(),
            Modulation::Qam16 => 1.0 / 10f64.sqrt(),
            Modulation::Qam64 => 1.0 / 42f64.sqrt(),
        }
    }
}

/// Gray-coded PAM level for `m` bits, first bit most significant.
fn pam_level(bits: &[u8]) -> f64 {
    match bits.len() {
        1 => 2.0 * bits[0] as f64 - 1.0,
        2 => {
            let v = [-3.0, -1.0, 3.0, 1.0];
            v[(bits[0] as usize) << 1 | bits[1] as usize]
        }
        _ => {
            let v = [-7.0, -5.0, -1.0, -3.0, 7.0, 5.0, 1.0, 3.0];
            v[(bits[0] as usize) << 2 | (bits[1] as usize) << 1 | bits[2] as usize]
        }
    }
}

fn pam_table(m: usize) -> Vec<(f64, Vec<u8>)> {
    (0..1usize << m)
        .map(|v| {
            let bits: Vec<u8> = (0..m).rev().map(|i| ((v >> i) & 1) as u8).collect();
            (pam_level(&bits), bits)
        })
        .collect()
}

pub fn map_qam(bits: &[u8], modulation: Modulation) -> Result<Vec<Complex64>> {
    let n = modulation.bits_per_symbol();
    if bits.len() % n != 0 {
        return Err(Error::domain(format!("{} bits is not a multiple of {n}", bits.len())));
    }
    let k = modulation.norm();
    Ok(bits
        .chunks(n)
        .map(|c| match modulation {
            Modulation::Bpsk => Complex64::new(pam_level(c), 0.0) * k,
            _ => {
                let h = n / 2;
                Complex64::new(pam_level(&c[..h]), pam_level(&c[h..])) * k
            }
        })
        .collect())
}

/// Nearest constellation point.
pub(crate) fn slice(sym: Complex64, modulation: Modulation) -> Complex64 {
    let k = modulation.norm();
    let m = modulation.bits_per_axis();
    let max = ((1 << m) - 1) as f64;
    let q = |x: f64| {
        let l = ((x / k + max) / 2.0).round().clamp(0.0, max);
        (2.0 * l - max) * k
    };
    match modulation {
        Modulation::Bpsk => Complex64::new(q(sym.re), 0.0),
        _ => Complex64::new(q(sym.re), q(sym.im)),
    }
}

pub fn demap_hard(symbols: &[Complex64], modulation: Modulation) -> Vec<u8> {
    demap_soft(symbols, modulation, &vec![1.0; symbols.len()])
        .into_iter()
        .map(|l| (l > 0.0) as u8)
        .collect()
}

/// Max-log LLRs (positive favours bit 1). `weights` scale each symbol's
/// reliability, e.g. |H|^2 after zero-forcing.
pub fn demap_soft(symbols: &[Complex64], modulation: Modulation, weights: &[f64]) -> Vec<f64> {
    let m = modulation.bits_per_axis();
    let k = modulation.norm();
    let table = pam_table(m);
    let mut out = Vec::with_capacity(symbols.len() * modulation.bits_per_symbol());
    let axis = |x: f64, w: f64, out: &mut Vec<f64>| {
        for b in 0..m {
            let mut d0 = f64::INFINITY;
            let mut d1 = f64::INFINITY;
            for (lvl, bits) in &table {
                let d = (x - lvl * k).powi(2);
                if bits[b] == 1 {
                    d1 = d1.min(d);
                } else {
                    d0 = d0.min(d);
                }
            }
            out.push(w * (d0 - d1));
        }
    };
    for (s, &w) in symbols.iter().zip(weights) {
        axis(s.re, w, &mut out);
        if modulation != Modulation::Bpsk {
            axis(s.im, w, &mut out);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ALL: [Modulation; 4] = [Modulation::Bpsk, Modulation::Qpsk, Modulation::Qam16, Modulation::Qam64];

    fn all_points(m: Modulation) -> Vec<Complex64> {
        let n = m.bits_per_symbol();
        let bits: Vec<u8> = (0..1usize << n)
            .flat_map(|v| (0..n).rev().map(move |i| ((v >> i) & 1) as u8))
            .collect();
        map_qam(&bits, m).unwrap()
    }

    #[test]
    fn bpsk_mapping() {
        let s = map_qam(&[0, 1], Modulation::Bpsk).unwrap();
        assert_eq!(s, vec![Complex64::new(-1.0, 0.0), Complex64::new(1.0, 0.0)]);
    }

    #[test]
    fn unit_average_power() {
        for m in ALL {
            let pts = all_points(m);
            let p = pts.iter().map(|z| z.norm_sqr()).sum::<f64>() / pts.len() as f64;
            assert!((p - 1.0).abs() < 1e-12, "{m:?} {p}");
        }
    }

    #[test]
    fn gray_neighbours_differ_in_one_bit() {
        for m in [2usize, 3] {
            let mut t = pam_table(m);
            t.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
            for w in t.windows(2) {
                let diff = w[0].1.iter().zip(&w[1].1).filter(|(a, b)| a != b).count();
                assert_eq!(diff, 1);
            }
        }
    }

    #[test]
    fn round_trip_random_bits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for m in ALL {
            let bits: Vec<u8> = (0..m.bits_per_symbol() * 500).map(|_| rng.random_range(0..2)).collect();
            let syms = map_qam(&bits, m).unwrap();
            assert_eq!(demap_hard(&syms, m), bits);
            for s in &syms {
                assert!((slice(*s + Complex64::new(0.01, -0.01), m) - s).norm() < 1e-12);
            }
        }
    }
}
