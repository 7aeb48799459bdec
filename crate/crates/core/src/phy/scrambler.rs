use crate::error::{Error, Result};

/// Keystream of the x^7 + x^4 + 1 frame-synchronous scrambler.
pub fn scrambler_keystream(seed: u8, n: usize) -> Result<Vec<u8>> {
    if seed == 0 || seed > 127 {
        return Err(Error::domain(format!("scrambler seed {seed} outside 1..=127")));
    }
    let mut s = seed;
    Ok((0..n)
        .map(|_| {
            let fb = ((s >> 6) ^ (s >> 3)) & 1;
            s = ((s << 1) | fb) & 0x7f;
            fb
        })
        .collect())
}

/// XOR `bits` with the scrambler keystream. Self-inverse.
pub fn scramble(seed: u8, bits: &[u8]) -> Result<Vec<u8>> {
    let ks = scrambler_keystream(seed, bits.len())?;
    Ok(bits.iter().zip(ks).map(|(b, k)| (b & 1) ^ k).collect())
}

/// Recover the seed from the first 7 descrambled SERVICE bits, which are zero
/// at the transmitter, so the received bits are the keystream itself.
pub(crate) fn seed_from_service(first7: &[u8]) -> Option<u8> {
    if first7.len() < 7 {
        return None;
    }
    (1u8..=127).find(|&seed| {
        scrambler_keystream(seed, 7).map(|ks| ks.as_slice() == &first7[..7]).unwrap_or(false)
    })
}
