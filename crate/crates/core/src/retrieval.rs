//! Image-level retrieval that picks the sub-models worth matching against.
//!
//! Every reference image carries a global descriptor and the list of
//! sub-models it contributed to. A query is compared with all images; the
//! models of the nearest `N_t` images, in order of first appearance, are the
//! candidates.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use crate::descriptor::{Descriptor, DIM};
use crate::error::{Error, Result};
use crate::io::{put_f32s, put_u32, Reader};
use crate::model::mean_descriptor;

pub const INDEX_MAGIC: &[u8; 4] = b"CCSI";
pub const INDEX_VERSION: u8 = 1;
pub const DEFAULT_TOP_IMAGES: usize = 20;
pub const DEFAULT_MAX_MODELS: usize = 4;

/// Unit-norm mean of an image's local descriptors.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalDescriptor(Descriptor);

impl GlobalDescriptor {
    pub fn from_local(descriptors: &[Descriptor]) -> Result<Self> {
        Ok(GlobalDescriptor(mean_descriptor(descriptors, true)?))
    }

    /// Normalizes an arbitrary vector.
    pub fn from_vector(d: &Descriptor) -> Result<Self> {
        d.normalized()
            .map(GlobalDescriptor)
            .ok_or(Error::Degenerate("global descriptor has zero norm"))
    }

    /// Wraps a vector that is already unit-norm (to 1e-4), keeping its bits.
    pub fn from_unit(d: Descriptor) -> Result<Self> {
        if (d.norm() - 1.0).abs() > 1e-4 {
            return Err(Error::InvalidInput(format!("global descriptor norm {} is not 1", d.norm())));
        }
        Ok(GlobalDescriptor(d))
    }

    pub fn descriptor(&self) -> &Descriptor {
        &self.0
    }

    pub fn sq_distance(&self, other: &GlobalDescriptor) -> f64 {
        self.0.sq_distance(&other.0)
    }
}

/// A reference image as given to [`build_index`].
#[derive(Clone, Debug)]
pub struct ImageInput {
    pub id: u32,
    pub descriptors: Vec<Descriptor>,
    pub models: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IndexedImage {
    pub id: u32,
    pub models: Vec<u32>,
    pub descriptor: GlobalDescriptor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SegmentIndex {
    images: Vec<IndexedImage>,
}

/// Computes global descriptors. Images without features are skipped with a
/// warning.
pub fn build_index(images: &[ImageInput]) -> Result<SegmentIndex> {
    let mut out = Vec::with_capacity(images.len());
    for img in images {
        if img.descriptors.is_empty() {
            log::warn!("image {} has no features; skipped", img.id);
            continue;
        }
        let descriptor = match GlobalDescriptor::from_local(&img.descriptors) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("image {}: {e}; skipped", img.id);
                continue;
            }
        };
        out.push(IndexedImage {
            id: img.id,
            models: img.models.clone(),
            descriptor,
        });
    }
    SegmentIndex::new(out)
}

impl SegmentIndex {
    pub fn new(images: Vec<IndexedImage>) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::InvalidInput("index needs at least one image".into()));
        }
        let mut seen = HashSet::new();
        for img in &images {
            if !seen.insert(img.id) {
                return Err(Error::InvalidInput(format!("duplicate image id {}", img.id)));
            }
            if img.models.is_empty() {
                return Err(Error::InvalidInput(format!("image {} maps to no model", img.id)));
            }
        }
        Ok(SegmentIndex { images })
    }

    pub fn images(&self) -> &[IndexedImage] {
        &self.images
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn image(&self, id: u32) -> Option<&IndexedImage> {
        self.images.iter().find(|i| i.id == id)
    }

    /// Distinct model ids referenced by the index, ascending.
    pub fn model_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.images.iter().flat_map(|i| i.models.iter().copied()).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    /// The `n_t` nearest images as `(id, squared distance)`, ties by id.
    pub fn retrieve(&self, q: &GlobalDescriptor, n_t: usize) -> Vec<(u32, f64)> {
        let mut all: Vec<(u32, f64)> = self.images.iter().map(|i| (i.id, q.sq_distance(&i.descriptor))).collect();
        let cmp = |a: &(u32, f64), b: &(u32, f64)| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0));
        if n_t < all.len() {
            all.select_nth_unstable_by(n_t, cmp);
            all.truncate(n_t);
        }
        all.sort_by(cmp);
        all
    }

    /// Models of the listed images in order of first appearance, at most
    /// `max_models`. Unknown image ids are ignored.
    pub fn candidate_models(&self, top: &[u32], max_models: usize) -> Vec<u32> {
        let mut out: Vec<u32> = Vec::new();
        for id in top {
            let Some(img) = self.image(*id) else { continue };
            for &m in &img.models {
                if out.len() == max_models {
                    return out;
                }
                if !out.contains(&m) {
                    out.push(m);
                }
            }
        }
        out
    }

    /// `CCSI`, version, image count, then per image: id, model count, model
    /// ids, 128 floats.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        out.push(INDEX_VERSION);
        put_u32(&mut out, self.images.len() as u32);
        for img in &self.images {
            put_u32(&mut out, img.id);
            put_u32(&mut out, img.models.len() as u32);
            for &m in &img.models {
                put_u32(&mut out, m);
            }
            put_f32s(&mut out, img.descriptor.descriptor().as_slice());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        const WHAT: &str = "index file";
        let mut r = Reader::new(bytes, WHAT);
        r.expect_magic(INDEX_MAGIC)?;
        r.expect_version(INDEX_VERSION)?;
        let n = r.u32()? as usize;
        let mut images = Vec::with_capacity(n.min(r.remaining() / (8 + DIM * 4)));
        for _ in 0..n {
            let id = r.u32()?;
            let k = r.u32()? as usize;
            if k > r.remaining() / 4 {
                return Err(Error::format(WHAT, format!("image {id} claims {k} models")));
            }
            let models = (0..k).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let mut v = [0f32; DIM];
            r.f32s(&mut v)?;
            let d = Descriptor::new(v).map_err(|e| Error::format(WHAT, e.to_string()))?;
            let descriptor = GlobalDescriptor::from_unit(d).map_err(|e| Error::format(WHAT, e.to_string()))?;
            images.push(IndexedImage { id, models, descriptor });
        }
        r.finish()?;
        SegmentIndex::new(images).map_err(|e| Error::format(WHAT, e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
