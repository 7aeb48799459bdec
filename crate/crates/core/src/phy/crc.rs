/// IEEE 802.3 CRC-32 (reflected, poly 0xEDB88320) used as the MAC FCS.
pub fn crc32(data: &[u8]) -> u32 {
    let mut crc = 0xffff_ffffu32;
    for &b in data {
        crc ^= b as u32;
        for _ in 0..8 {
            let mask = (crc & 1).wrapping_neg();
            crc = (crc >> 1) ^ (0xedb8_8320 & mask);
        }
    }
    !crc
}

/// CRC-8 (x^8 + x^2 + x + 1, ones-initialised, complemented) over HT-SIG
/// bits. Returns the 8 CRC bits in transmit order.
pub fn crc8_htsig(bits: &[u8]) -> [u8; 8] {
    let mut reg = [1u8; 8];
    for &b in bits {
        let fb = (b & 1) ^ reg[7];
        reg[7] = reg[6];
        reg[6] = reg[5];
        reg[5] = reg[4];
        reg[4] = reg[3];
        reg[3] = reg[2];
        reg[2] = reg[1] ^ fb;
        reg[1] = reg[0] ^ fb;
        reg[0] = fb;
    }
    let mut out = [0u8; 8];
    for (i, o) in out.iter_mut().enumerate() {
        *o = reg[7 - i] ^ 1;
    }
    out
}
