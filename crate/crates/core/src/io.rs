//! Little-endian binary encoding helpers and the query-features file.

use std::fs;
use std::path::Path;

use crate::descriptor::{Descriptor, DIM};
use crate::error::{Error, Result};

pub const QUERY_MAGIC: &[u8; 4] = b"CCSF";

/// Cursor over a byte slice that reports truncation as a format error.
pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn bytes(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(Error::format(
                self.what,
                format!(
                    "truncated at byte {}: needed {n} more bytes, {} available",
                    self.pos,
                    self.remaining()
                ),
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.bytes(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.bytes(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn u128(&mut self) -> Result<u128> {
        Ok(u128::from_le_bytes(self.array()?))
    }

    pub fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.array()?))
    }

    pub fn f32s(&mut self, out: &mut [f32]) -> Result<()> {
        let raw = self.bytes(out.len() * 4)?;
        for (o, c) in out.iter_mut().zip(raw.chunks_exact(4)) {
            *o = f32::from_le_bytes(c.try_into().expect("chunk of 4"));
        }
        Ok(())
    }

    pub fn expect_magic(&mut self, magic: &[u8; 4]) -> Result<()> {
        let got = self.array::<4>()?;
        if &got != magic {
            return Err(Error::format(
                self.what,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(&got),
                    String::from_utf8_lossy(magic)
                ),
            ));
        }
        Ok(())
    }

    pub fn expect_version(&mut self, version: u8) -> Result<()> {
        let got = self.u8()?;
        if got != version {
            return Err(Error::format(
                self.what,
                format!("unsupported version {got}, expected {version}"),
            ));
        }
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(Error::format(
                self.what,
                format!("{} trailing bytes", self.remaining()),
            ));
        }
        Ok(())
    }
}

pub fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn put_f32s(out: &mut Vec<u8>, vs: &[f32]) {
    out.reserve(vs.len() * 4);
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// 64-bit content fingerprint used to tie sub-models to their codecs.
pub fn fingerprint(bytes: &[u8]) -> u64 {
    use sha2::{Digest, Sha256};
    let digest = Sha256::digest(bytes);
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 has 32 bytes"))
}

/// One raw query feature as stored on disk: pixel position and descriptor.
#[derive(Clone, Debug, PartialEq)]
pub struct RawFeature {
    pub pixel: [f32; 2],
    pub descriptor: Descriptor,
}

/// Encodes features as `CCSF`, a u32 count, then per feature two pixel
/// floats followed by 128 descriptor floats.
pub fn encode_features(features: &[RawFeature]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + features.len() * (2 + DIM) * 4);
    out.extend_from_slice(QUERY_MAGIC);
    put_u32(&mut out, features.len() as u32);
    for f in features {
        put_f32s(&mut out, &f.pixel);
        put_f32s(&mut out, f.descriptor.as_slice());
    }
    out
}

pub fn decode_features(bytes: &[u8]) -> Result<Vec<RawFeature>> {
    let mut r = Reader::new(bytes, "query features file");
    r.expect_magic(QUERY_MAGIC)?;
    let count = r.u32()? as usize;
    let per = (2 + DIM) * 4;
    if r.remaining() != count * per {
        return Err(Error::format(
            "query features file",
            format!(
                "{count} features need {} bytes, found {}",
                count * per,
                r.remaining()
            ),
        ));
    }
    let mut features = Vec::with_capacity(count);
    let mut buf = [0f32; DIM];
    for _ in 0..count {
        let pixel = [r.f32()?, r.f32()?];
        r.f32s(&mut buf)?;
        let descriptor = Descriptor::new(buf).map_err(|e| {
            Error::format("query features file", e.to_string())
        })?;
        features.push(RawFeature { pixel, descriptor });
    }
    r.finish()?;
    Ok(features)
}

pub fn write_features(path: impl AsRef<Path>, features: &[RawFeature]) -> Result<()> {
    fs::write(path, encode_features(features))?;
    Ok(())
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Vec<RawFeature>> {
    decode_features(&fs::read(path)?)
}
