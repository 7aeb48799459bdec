//! `.csi` capture files.
//!
//! Layout (little-endian): an 8-byte header `"CSF1"`, `version: u16`,
//! `endianness: u8` (0 = little), `reserved: u8`, then records:
//!
//! ```text
//! record_len u32        bytes that follow in this record
//! timestamp_us u64
//! cf_hz u64
//! sf_hz u64
//! channel_mode u8       PhyMode::code
//! mcs u8
//! seed u8
//! n_tones u16
//! tone_index i16 * n_tones
//! csi (f32 re, f32 im) * n_tones
//! n_data_symbols u16
//! data_csi (f32 re, f32 im) * n_tones * n_data_symbols
//! cfo_est i64           micro-hertz
//! evm i32               centi-dB
//! ```

use num_complex::{Complex32, Complex64};

use crate::csikit::CsiFrame;
use crate::error::{Error, Result};
use crate::phy::{PhyMode, SubcarrierGrid};

pub const MAGIC: &[u8; 4] = b"CSF1";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct CaptureRecord {
    pub timestamp_us: u64,
    pub cf_hz: u64,
    pub sf_hz: u64,
    pub channel_mode: u8,
    pub mcs: u8,
    pub seed: u8,
    pub tone_indices: Vec<i16>,
    pub csi: Vec<Complex32>,
    /// One vector of `tone_indices.len()` values per data symbol.
    pub data_csi: Vec<Vec<Complex32>>,
    pub cfo_est_uhz: i64,
    pub evm_cdb: i32,
}

impl CaptureRecord {
    pub fn validate(&self) -> Result<()> {
        let n = self.tone_indices.len();
        if n > u16::MAX as usize || self.data_csi.len() > u16::MAX as usize {
            return Err(Error::Format("record too large".into()));
        }
        if self.csi.len() != n {
            return Err(Error::Length { expected: n, got: self.csi.len() });
        }
        if let Some(bad) = self.data_csi.iter().find(|s| s.len() != n) {
            return Err(Error::Length { expected: n, got: bad.len() });
        }
        if self.tone_indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("tone indices must be strictly increasing".into()));
        }
        PhyMode::from_code(self.channel_mode)?;
        Ok(())
    }

    fn body_len(&self) -> usize {
        let n = self.tone_indices.len();
        8 + 8 + 8 + 3 + 2 + 2 * n + 8 * n + 2 + 8 * n * self.data_csi.len() + 8 + 4
    }

    pub fn write_to(&self, out: &mut Vec<u8>) -> Result<()> {
        self.validate()?;
        out.extend_from_slice(&(self.body_len() as u32).to_le_bytes());
        out.extend_from_slice(&self.timestamp_us.to_le_bytes());
        out.extend_from_slice(&self.cf_hz.to_le_bytes());
        out.extend_from_slice(&self.sf_hz.to_le_bytes());
        out.extend_from_slice(&[self.channel_mode, self.mcs, self.seed]);
        out.extend_from_slice(&(self.tone_indices.len() as u16).to_le_bytes());
        for k in &self.tone_indices {
            out.extend_from_slice(&k.to_le_bytes());
        }
        let put = |out: &mut Vec<u8>, v: &Complex32| {
            out.extend_from_slice(&v.re.to_le_bytes());
            out.extend_from_slice(&v.im.to_le_bytes());
        };
        self.csi.iter().for_each(|v| put(out, v));
        out.extend_from_slice(&(self.data_csi.len() as u16).to_le_bytes());
        self.data_csi.iter().flatten().for_each(|v| put(out, v));
        out.extend_from_slice(&self.cfo_est_uhz.to_le_bytes());
        out.extend_from_slice(&self.evm_cdb.to_le_bytes());
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut v = Vec::with_capacity(4 + self.body_len());
        self.write_to(&mut v)?;
        Ok(v)
    }

    /// Parse one record at the start of `bytes`; returns it and the bytes consumed.
    pub fn parse(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = Reader { b: bytes, pos: 0 };
        let len = r.u32()? as usize;
        let end = 4 + len;
        if bytes.len() < end {
            return Err(Error::Format(format!("truncated record: need {end} bytes, have {}", bytes.len())));
        }
        let mut r = Reader { b: &bytes[..end], pos: 4 };
        let timestamp_us = r.u64()?;
        let cf_hz = r.u64()?;
        let sf_hz = r.u64()?;
        let channel_mode = r.u8()?;
        let mcs = r.u8()?;
        let seed = r.u8()?;
        let n = r.u16()? as usize;
        let tone_indices = (0..n).map(|_| r.i16()).collect::<Result<Vec<_>>>()?;
        let csi = (0..n).map(|_| r.c32()).collect::<Result<Vec<_>>>()?;
        let n_sym = r.u16()? as usize;
        let data_csi = (0..n_sym)
            .map(|_| (0..n).map(|_| r.c32()).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let cfo_est_uhz = r.i64()?;
        let evm_cdb = r.i32()?;
        if r.pos != end {
            return Err(Error::Format(format!("record_len {len} disagrees with its contents")));
        }
        let rec = CaptureRecord {
            timestamp_us,
            cf_hz,
            sf_hz,
            channel_mode,
            mcs,
            seed,
            tone_indices,
            csi,
            data_csi,
            cfo_est_uhz,
            evm_cdb,
        };
        rec.validate()?;
        Ok((rec, end))
    }

    pub fn from_frame(frame: &CsiFrame, data_csi: &[Vec<Complex64>], cfo_hz: f64, evm_db: f64) -> Self {
        let c = |v: &Complex64| Complex32::new(v.re as f32, v.im as f32);
        CaptureRecord {
            timestamp_us: (frame.timestamp * 1e6).round().max(0.0) as u64,
            cf_hz: frame.center_freq.round().max(0.0) as u64,
            sf_hz: frame.bandwidth.round().max(0.0) as u64,
            channel_mode: frame.mode.code(),
            mcs: frame.meta.mcs,
            seed: frame.meta.seed,
            tone_indices: frame.grid.indices.iter().map(|&k| k as i16).collect(),
            csi: frame.values.iter().map(c).collect(),
            data_csi: data_csi.iter().map(|s| s.iter().map(c).collect()).collect(),
            cfo_est_uhz: (cfo_hz * 1e6).round() as i64,
            evm_cdb: (evm_db * 100.0).round().clamp(i32::MIN as f64, i32::MAX as f64) as i32,
        }
    }

    pub fn mode(&self) -> Result<PhyMode> {
        PhyMode::from_code(self.channel_mode)
    }

    pub fn to_frame(&self) -> Result<CsiFrame> {
        let mode = self.mode()?;
        let mut grid = SubcarrierGrid::from_indices(self.tone_indices.iter().map(|&k| k as i32).collect());
        let canonical = mode.csi_grid();
        if canonical.indices == grid.indices {
            grid = canonical;
        }
        let mut f = CsiFrame::new(
            self.csi.iter().map(|v| Complex64::new(v.re as f64, v.im as f64)).collect(),
            grid,
            mode,
            self.cf_hz as f64,
            self.sf_hz as f64,
        );
        f.timestamp = self.timestamp_us as f64 * 1e-6;
        f.meta.mcs = self.mcs;
        f.meta.seed = self.seed;
        Ok(f)
    }

    pub fn data_train(&self) -> Vec<Vec<Complex64>> {
        self.data_csi
            .iter()
            .map(|s| s.iter().map(|v| Complex64::new(v.re as f64, v.im as f64)).collect())
            .collect()
    }

    pub fn cfo_hz(&self) -> f64 {
        self.cfo_est_uhz as f64 * 1e-6
    }

    pub fn evm_db(&self) -> f64 {
        self.evm_cdb as f64 / 100.0
    }
}

struct Reader<'a> {
    b: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N]> {
        let s = self
            .b
            .get(self.pos..self.pos + N)
            .ok_or_else(|| Error::Format(format!("unexpected end of record at byte {}", self.pos)))?;
        self.pos += N;
        Ok(s.try_into().unwrap())
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take::<1>()?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take()?))
    }
    fn i16(&mut self) -> Result<i16> {
        Ok(i16::from_le_bytes(self.take()?))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take()?))
    }
    fn i32(&mut self) -> Result<i32> {
        Ok(i32::from_le_bytes(self.take()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take()?))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take()?))
    }
    fn c32(&mut self) -> Result<Complex32> {
        let re = f32::from_le_bytes(self.take()?);
        let im = f32::from_le_bytes(self.take()?);
        Ok(Complex32::new(re, im))
    }
}

pub fn header() -> [u8; HEADER_LEN] {
    let v = VERSION.to_le_bytes();
    [MAGIC[0], MAGIC[1], MAGIC[2], MAGIC[3], v[0], v[1], 0, 0]
}

pub fn write_capture(records: &[CaptureRecord]) -> Result<Vec<u8>> {
    let mut out = header().to_vec();
    for r in records {
        r.write_to(&mut out)?;
    }
    Ok(out)
}

pub fn read_capture(bytes: &[u8]) -> Result<Vec<CaptureRecord>> {
    if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
        return Err(Error::Format("not a CSF1 capture".into()));
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported capture version {version}")));
    }
    if bytes[6] != 0 {
        return Err(Error::Format("only little-endian captures are supported".into()));
    }
    let mut pos = HEADER_LEN;
    let mut out = Vec::new();
    while pos < bytes.len() {
        let (rec, used) = CaptureRecord::parse(&bytes[pos..])?;
        out.push(rec);
        pos += used;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> CaptureRecord {
        CaptureRecord {
            timestamp_us: 12,
            cf_hz: 2_412_000_000,
            sf_hz: 20_000_000,
            channel_mode: 1,
            mcs: 2,
            seed: 93,
            tone_indices: vec![-2, -1, 1, 2],
            csi: vec![Complex32::new(1.0, -0.5); 4],
            data_csi: vec![vec![Complex32::new(0.25, 2.0); 4]; 3],
            cfo_est_uhz: -915_527_343,
            evm_cdb: -3012,
        }
    }

    #[test]
    fn header_layout() {
        let b = write_capture(&[]).unwrap();
        assert_eq!(b, vec![b'C', b'S', b'F', b'1', 1, 0, 0, 0]);
        assert!(read_capture(&b).unwrap().is_empty());
    }

    #[test]
    fn record_len_counts_following_bytes() {
        let r = sample();
        let b = r.to_bytes().unwrap();
        let len = u32::from_le_bytes(b[..4].try_into().unwrap()) as usize;
        assert_eq!(len + 4, b.len());
        assert_eq!(len, 8 + 8 + 8 + 3 + 2 + 8 + 32 + 2 + 96 + 8 + 4);
        assert_eq!(CaptureRecord::parse(&b).unwrap(), (r, b.len()));
    }

    #[test]
    fn rejects_corruption() {
        let b = write_capture(&[sample()]).unwrap();
        assert!(read_capture(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(read_capture(&bad).is_err());
        let mut unsorted = sample();
        unsorted.tone_indices.swap(0, 1);
        assert!(unsorted.to_bytes().is_err());
        let mut long = b.clone();
        long[8] += 1;
        assert!(read_capture(&long).is_err());
    }

    fn arb_record() -> impl Strategy<Value = CaptureRecord> {
        (1usize..40, 0usize..6, any::<u64>(), any::<u64>(), any::<u64>(), 0u8..6, any::<(u8, u8, i64, i32)>())
            .prop_flat_map(|(n, s, ts, cf, sf, mode, (mcs, seed, cfo, evm))| {
                let tones = proptest::collection::btree_set(any::<i16>(), n);
                let vals = proptest::collection::vec(any::<(f32, f32)>(), n * (s + 1));
                (tones, vals).prop_map(move |(t, v)| {
                    let n = t.len();
                    let c: Vec<Complex32> = v.iter().take(n * (s + 1)).map(|&(a, b)| Complex32::new(a, b)).collect();
                    CaptureRecord {
                        timestamp_us: ts,
                        cf_hz: cf,
                        sf_hz: sf,
                        channel_mode: mode,
                        mcs,
                        seed,
                        tone_indices: t.into_iter().collect(),
                        csi: c[..n].to_vec(),
                        data_csi: c[n..].chunks(n).map(|x| x.to_vec()).collect(),
                        cfo_est_uhz: cfo,
                        evm_cdb: evm,
                    }
                })
            })
    }

    proptest! {
        #[test]
        fn round_trip(recs in proptest::collection::vec(arb_record(), 0..8)) {
            let b = write_capture(&recs).unwrap();
            let back = read_capture(&b).unwrap();
            prop_assert_eq!(write_capture(&back).unwrap(), b);
            prop_assert_eq!(back.len(), recs.len());
        }
    }
}
