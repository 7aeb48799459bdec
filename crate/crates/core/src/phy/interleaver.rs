use crate::error::{Error, Result};

fn n_col(n_cbps: usize, n_bpsc: usize) -> usize {
    match n_cbps / n_bpsc {
        48 => 16,
        52 => 13,
        108 => 18,
        n => {
            // fall back to the smallest divisor of n not below 13
            (13..=n).find(|c| n % c == 0).unwrap_or(n)
        }
    }
}

/// Position of input bit `k` after interleaving.
pub fn interleaver_permutation(n_cbps: usize, n_bpsc: usize) -> Vec<usize> {
    let cols = n_col(n_cbps, n_bpsc);
    let rows = n_cbps / cols;
    let s = (n_bpsc / 2).max(1);
    (0..n_cbps)
        .map(|k| {
            let i = rows * (k % cols) + k / cols;
            s * (i / s) + (i + n_cbps - (cols * i / n_cbps)) % s
        })
        .collect()
}

fn check(bits: usize, n_cbps: usize, n_bpsc: usize) -> Result<()> {
    if n_bpsc == 0 || n_cbps % n_bpsc != 0 {
        return Err(Error::domain(format!("n_cbps {n_cbps} not a multiple of n_bpsc {n_bpsc}")));
    }
    if bits != n_cbps {
        return Err(Error::Length { expected: n_cbps, got: bits });
    }
    Ok(())
}

pub fn interleave<T: Copy + Default>(bits: &[T], n_cbps: usize, n_bpsc: usize) -> Result<Vec<T>> {
    check(bits.len(), n_cbps, n_bpsc)?;
    let mut out = vec![T::default(); n_cbps];
    for (k, j) in interleaver_permutation(n_cbps, n_bpsc).into_iter().enumerate() {
        out[j] = bits[k];
    }
    Ok(out)
}

pub fn deinterleave<T: Copy + Default>(bits: &[T], n_cbps: usize, n_bpsc: usize) -> Result<Vec<T>> {
    check(bits.len(), n_cbps, n_bpsc)?;
    Ok(interleaver_permutation(n_cbps, n_bpsc).into_iter().map(|j| bits[j]).collect())
}
