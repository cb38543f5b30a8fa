//! Compressed sub-models: per-point 128-bit codes and 16-byte PQ codes, the
//! eight 16-bit coarse lookup tables, and the on-disk model file.
//!
//! Points are kept sorted by id; LUT buckets hold row indices into that
//! order, so ascending row index is ascending point id.
//!
//! File layout (all little-endian):
//!
//! ```text
//! "CCSM" | version u8 | N_p u32
//! segment id u32 | placemark start u32 | placemark end u32 | overlap u32
//! hash model id u64 | codebook id u64
//! 8 × [ (2^16 + 1) bucket offsets u32 | N_p row indices u32 ]
//! N_p point ids u32
//! N_p × 3 coordinates f32
//! N_p × 16-byte binary codes
//! N_p × 16-byte PQ codes
//! ```

use std::fs;
use std::path::Path;

use crate::descriptor::{Descriptor, DIM};
use crate::error::{Error, Result};
use crate::hash::{BinaryCode, HashModel, SUBCODES};
use crate::io::{put_u32, put_u64, Reader};
use crate::pq::{PqCode, PqCodebook, SUBVECTORS};

pub const BUCKETS: usize = 1 << 16;
const MODEL_MAGIC: &[u8; 4] = b"CCSM";
const MODEL_VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 4 + 16 + 16;

/// Component-wise mean of a point's observations, optionally re-normalized
/// to unit length.
pub fn mean_descriptor(observations: &[Descriptor], normalize: bool) -> Result<Descriptor> {
    if observations.is_empty() {
        return Err(Error::InvalidInput("mean of zero observations".into()));
    }
    let mut acc = [0f64; DIM];
    for o in observations {
        for (a, &v) in acc.iter_mut().zip(o.as_slice()) {
            *a += v as f64;
        }
    }
    let n = observations.len() as f64;
    let mean = Descriptor::new(acc.map(|a| (a / n) as f32))?;
    if normalize {
        mean.normalized()
            .ok_or(Error::Degenerate("mean descriptor has zero norm"))
    } else {
        Ok(mean)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SegmentMeta {
    pub segment_id: u32,
    pub placemark_start: u32,
    pub placemark_end: u32,
    pub overlap: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointRecord {
    pub id: u32,
    pub position: [f32; 3],
    pub code: BinaryCode,
    pub pq: PqCode,
}

/// A 3D point before compression.
#[derive(Clone, Debug)]
pub struct PointInput {
    pub id: u32,
    pub position: [f32; 3],
    pub observations: Vec<Descriptor>,
}

/// One 2^16-bucket table stored as offsets plus a flat row array.
#[derive(Clone, Debug, PartialEq, Eq)]
struct LutTable {
    offsets: Vec<u32>,
    rows: Vec<u32>,
}

impl LutTable {
    fn build(keys: impl Iterator<Item = u16> + Clone, n: usize) -> LutTable {
        let mut offsets = vec![0u32; BUCKETS + 1];
        for k in keys.clone() {
            offsets[k as usize + 1] += 1;
        }
        for b in 0..BUCKETS {
            offsets[b + 1] += offsets[b];
        }
        let mut cursor = offsets.clone();
        let mut rows = vec![0u32; n];
        for (row, k) in keys.enumerate() {
            let slot = &mut cursor[k as usize];
            rows[*slot as usize] = row as u32;
            *slot += 1;
        }
        LutTable { offsets, rows }
    }

    #[inline]
    fn bucket(&self, key: u16) -> &[u32] {
        let k = key as usize;
        &self.rows[self.offsets[k] as usize..self.offsets[k + 1] as usize]
    }
}

/// The eight coarse lookup tables, one per 16-bit sub-code.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoarseLut {
    tables: Vec<LutTable>,
}

impl CoarseLut {
    pub fn build(codes: &[BinaryCode]) -> CoarseLut {
        let tables = (0..SUBCODES)
            .map(|k| LutTable::build(codes.iter().map(move |c| c.subcode(k)), codes.len()))
            .collect();
        CoarseLut { tables }
    }

    /// Rows whose `k`-th sub-code equals `key`, ascending.
    #[inline]
    pub fn bucket(&self, k: usize, key: u16) -> &[u32] {
        self.tables[k].bucket(key)
    }

    pub fn non_empty_buckets(&self, k: usize) -> usize {
        self.tables[k].offsets.windows(2).filter(|w| w[1] > w[0]).count()
    }

    pub fn table_len(&self, k: usize) -> usize {
        self.tables[k].rows.len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubModel {
    meta: SegmentMeta,
    hash_model_id: u64,
    codebook_id: u64,
    ids: Vec<u32>,
    positions: Vec<[f32; 3]>,
    codes: Vec<BinaryCode>,
    pq: Vec<PqCode>,
    lut: CoarseLut,
}

/// Hashes and quantizes each point's mean descriptor and indexes the codes.
pub fn build_submodel(
    points: &[PointInput],
    hash: &HashModel,
    codebook: &PqCodebook,
    meta: SegmentMeta,
    normalize_means: bool,
) -> Result<SubModel> {
    if points.is_empty() {
        return Err(Error::InvalidInput("sub-model needs at least one point".into()));
    }
    let records = points
        .iter()
        .map(|p| {
            let mean = mean_descriptor(&p.observations, normalize_means)?;
            Ok(PointRecord {
                id: p.id,
                position: p.position,
                code: hash.hash(&mean),
                pq: codebook.encode(&mean),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    SubModel::from_records(records, meta, hash.id(), codebook.id())
}

impl SubModel {
    pub fn from_records(
        mut records: Vec<PointRecord>,
        meta: SegmentMeta,
        hash_model_id: u64,
        codebook_id: u64,
    ) -> Result<SubModel> {
        if records.is_empty() {
            return Err(Error::InvalidInput("sub-model needs at least one point".into()));
        }
        if let Some(r) = records.iter().find(|r| r.position.iter().any(|v| !v.is_finite())) {
            return Err(Error::InvalidInput(format!("point {} has a non-finite position", r.id)));
        }
        records.sort_by_key(|r| r.id);
        if let Some(w) = records.windows(2).find(|w| w[0].id == w[1].id) {
            return Err(Error::DuplicateId(w[0].id));
        }
        let codes: Vec<BinaryCode> = records.iter().map(|r| r.code).collect();
        let lut = CoarseLut::build(&codes);
        Ok(SubModel {
            meta,
            hash_model_id,
            codebook_id,
            ids: records.iter().map(|r| r.id).collect(),
            positions: records.iter().map(|r| r.position).collect(),
            pq: records.iter().map(|r| r.pq).collect(),
            codes,
            lut,
        })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn meta(&self) -> &SegmentMeta {
        &self.meta
    }

    pub fn id(&self) -> u32 {
        self.meta.segment_id
    }

    pub fn hash_model_id(&self) -> u64 {
        self.hash_model_id
    }

    pub fn codebook_id(&self) -> u64 {
        self.codebook_id
    }

    pub fn lut(&self) -> &CoarseLut {
        &self.lut
    }

    #[inline]
    pub fn point_id(&self, row: u32) -> u32 {
        self.ids[row as usize]
    }

    #[inline]
    pub fn code(&self, row: u32) -> BinaryCode {
        self.codes[row as usize]
    }

    #[inline]
    pub fn pq_code(&self, row: u32) -> &PqCode {
        &self.pq[row as usize]
    }

    #[inline]
    pub fn position(&self, row: u32) -> [f32; 3] {
        self.positions[row as usize]
    }

    pub fn row_of(&self, point_id: u32) -> Option<u32> {
        self.ids.binary_search(&point_id).ok().map(|r| r as u32)
    }

    pub fn codes(&self) -> &[BinaryCode] {
        &self.codes
    }

    pub fn point_ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn record(&self, row: u32) -> PointRecord {
        PointRecord {
            id: self.point_id(row),
            position: self.position(row),
            code: self.code(row),
            pq: *self.pq_code(row),
        }
    }

    pub fn records(&self) -> impl Iterator<Item = PointRecord> + '_ {
        (0..self.len() as u32).map(|r| self.record(r))
    }

    /// Exact size of [`SubModel::to_bytes`] for `n` points.
    pub fn serialized_len(n: usize) -> usize {
        HEADER_LEN + SUBCODES * ((BUCKETS + 1) * 4 + n * 4) + n * (4 + 12 + 16 + SUBVECTORS)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.len();
        let mut out = Vec::with_capacity(Self::serialized_len(n));
        out.extend_from_slice(MODEL_MAGIC);
        out.push(MODEL_VERSION);
        put_u32(&mut out, n as u32);
        put_u32(&mut out, self.meta.segment_id);
        put_u32(&mut out, self.meta.placemark_start);
        put_u32(&mut out, self.meta.placemark_end);
        put_u32(&mut out, self.meta.overlap);
        put_u64(&mut out, self.hash_model_id);
        put_u64(&mut out, self.codebook_id);
        for t in &self.lut.tables {
            for &o in &t.offsets {
                put_u32(&mut out, o);
            }
            for &r in &t.rows {
                put_u32(&mut out, r);
            }
        }
        for &id in &self.ids {
            put_u32(&mut out, id);
        }
        for p in &self.positions {
            for v in p {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        for c in &self.codes {
            out.extend_from_slice(&c.to_le_bytes());
        }
        for c in &self.pq {
            out.extend_from_slice(&c.0);
        }
        debug_assert_eq!(out.len(), Self::serialized_len(n));
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<SubModel> {
        const WHAT: &str = "model file";
        let mut r = Reader::new(bytes, WHAT);
        r.expect_magic(MODEL_MAGIC)?;
        r.expect_version(MODEL_VERSION)?;
        let n = r.u32()? as usize;
        if n == 0 {
            return Err(Error::format(WHAT, "model has no points"));
        }
        let expected = Self::serialized_len(n);
        if bytes.len() != expected {
            return Err(Error::format(
                WHAT,
                format!("{n} points need {expected} bytes, found {}", bytes.len()),
            ));
        }
        let meta = SegmentMeta {
            segment_id: r.u32()?,
            placemark_start: r.u32()?,
            placemark_end: r.u32()?,
            overlap: r.u32()?,
        };
        let hash_model_id = r.u64()?;
        let codebook_id = r.u64()?;

        let mut tables = Vec::with_capacity(SUBCODES);
        for k in 0..SUBCODES {
            let offsets = (0..=BUCKETS).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            if offsets[0] != 0
                || offsets[BUCKETS] as usize != n
                || offsets.windows(2).any(|w| w[1] < w[0])
            {
                return Err(Error::format(WHAT, format!("LUT {k} has inconsistent offsets")));
            }
            let rows = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            tables.push(LutTable { offsets, rows });
        }
        let ids = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if ids.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::format(WHAT, "point ids are not strictly ascending"));
        }
        let mut positions = Vec::with_capacity(n);
        for _ in 0..n {
            let p = [r.f32()?, r.f32()?, r.f32()?];
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::format(WHAT, "non-finite point coordinate"));
            }
            positions.push(p);
        }
        let codes = (0..n)
            .map(|_| r.u128().map(BinaryCode))
            .collect::<Result<Vec<_>>>()?;
        let pq = (0..n)
            .map(|_| r.array::<SUBVECTORS>().map(PqCode))
            .collect::<Result<Vec<_>>>()?;
        r.finish()?;

        let lut = CoarseLut { tables };
        if lut != CoarseLut::build(&codes) {
            return Err(Error::format(WHAT, "lookup tables disagree with point codes"));
        }
        Ok(SubModel {
            meta,
            hash_model_id,
            codebook_id,
            ids,
            positions,
            codes,
            pq,
            lut,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<SubModel> {
        SubModel::from_bytes(&fs::read(path)?)
    }
}
