//! Product quantization: 16 sub-vectors of 8 dimensions, 256 centroids each,
//! and asymmetric distance computation (ADC) against 16-byte codes.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::descriptor::{Descriptor, DIM};
use crate::error::{Error, Result};
use crate::io::{fingerprint, put_f32s, Reader};

pub const SUBVECTORS: usize = 16;
pub const SUB_DIM: usize = DIM / SUBVECTORS;
pub const CENTROIDS: usize = 256;
pub const DEFAULT_KMEANS_ITERATIONS: usize = 25;

const PQ_MAGIC: &[u8; 4] = b"CCSQ";
const PQ_VERSION: u8 = 1;
const TABLE_LEN: usize = SUBVECTORS * CENTROIDS;

/// One centroid index per sub-vector.
#[derive(Copy, Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct PqCode(pub [u8; SUBVECTORS]);

#[derive(Clone, Copy, Debug)]
pub struct KMeansConfig {
    pub iterations: usize,
    pub seed: u64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        KMeansConfig {
            iterations: DEFAULT_KMEANS_ITERATIONS,
            seed: 0,
        }
    }
}

/// Per-sub-quantizer k-means objective (sum of squared errors) after each
/// assignment step.
#[derive(Clone, Debug, Default)]
pub struct PqTrainingMeta {
    pub objectives: Vec<Vec<f64>>,
    pub reseeded: usize,
}

#[derive(Clone, Debug)]
pub struct PqCodebook {
    /// `SUBVECTORS × CENTROIDS × SUB_DIM`, sub-vector major.
    centroids: Vec<f32>,
    meta: Option<PqTrainingMeta>,
}

impl PartialEq for PqCodebook {
    fn eq(&self, other: &Self) -> bool {
        self.centroids == other.centroids
    }
}

impl PqCodebook {
    pub fn from_centroids(centroids: Vec<f32>) -> Result<Self> {
        if centroids.len() != SUBVECTORS * CENTROIDS * SUB_DIM {
            return Err(Error::InvalidInput(format!(
                "codebook needs {} floats, got {}",
                SUBVECTORS * CENTROIDS * SUB_DIM,
                centroids.len()
            )));
        }
        if centroids.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("codebook has non-finite entries".into()));
        }
        Ok(PqCodebook {
            centroids,
            meta: None,
        })
    }

    pub fn training_meta(&self) -> Option<&PqTrainingMeta> {
        self.meta.as_ref()
    }

    #[inline]
    pub fn centroid(&self, sub: usize, c: usize) -> &[f32] {
        let start = (sub * CENTROIDS + c) * SUB_DIM;
        &self.centroids[start..start + SUB_DIM]
    }

    fn sub_centroids(&self, sub: usize) -> &[f32] {
        let start = sub * CENTROIDS * SUB_DIM;
        &self.centroids[start..start + CENTROIDS * SUB_DIM]
    }

    /// Nearest centroid per sub-vector; ties go to the lowest index.
    pub fn encode(&self, d: &Descriptor) -> PqCode {
        let mut code = [0u8; SUBVECTORS];
        for (sub, slot) in code.iter_mut().enumerate() {
            let x = &d.as_slice()[sub * SUB_DIM..(sub + 1) * SUB_DIM];
            *slot = nearest(self.sub_centroids(sub), x).0 as u8;
        }
        PqCode(code)
    }

    pub fn reconstruct(&self, code: &PqCode) -> Descriptor {
        let mut v = [0f32; DIM];
        for (sub, &c) in code.0.iter().enumerate() {
            v[sub * SUB_DIM..(sub + 1) * SUB_DIM].copy_from_slice(self.centroid(sub, c as usize));
        }
        Descriptor::new(v).expect("centroids are finite")
    }

    /// Partial squared distances between each query sub-vector and every
    /// centroid of the matching sub-quantizer.
    pub fn adc_table(&self, q: &Descriptor) -> DistanceTable {
        let mut table = vec![0f32; TABLE_LEN];
        for sub in 0..SUBVECTORS {
            let x = &q.as_slice()[sub * SUB_DIM..(sub + 1) * SUB_DIM];
            let row = &mut table[sub * CENTROIDS..(sub + 1) * CENTROIDS];
            for (c, slot) in row.iter_mut().enumerate() {
                *slot = sq_dist(x, self.centroid(sub, c));
            }
        }
        DistanceTable(table.into_boxed_slice())
    }

    pub fn id(&self) -> u64 {
        fingerprint(&self.to_bytes())
    }

    /// `CCSQ`, version byte, then 16×256×8 little-endian floats.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.centroids.len() * 4);
        out.extend_from_slice(PQ_MAGIC);
        out.push(PQ_VERSION);
        put_f32s(&mut out, &self.centroids);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "codebook file");
        r.expect_magic(PQ_MAGIC)?;
        r.expect_version(PQ_VERSION)?;
        let mut centroids = vec![0f32; SUBVECTORS * CENTROIDS * SUB_DIM];
        r.f32s(&mut centroids)?;
        r.finish()?;
        Self::from_centroids(centroids).map_err(|e| Error::format("codebook file", e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Per-query ADC lookup table, `SUBVECTORS × CENTROIDS` non-negative entries.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceTable(Box<[f32]>);

impl DistanceTable {
    #[inline]
    pub fn get(&self, sub: usize, c: usize) -> f32 {
        self.0[sub * CENTROIDS + c]
    }

    pub fn entries(&self) -> &[f32] {
        &self.0
    }

    /// Approximate squared distance: the sum of 16 table lookups.
    #[inline]
    pub fn distance(&self, code: &PqCode) -> f32 {
        let mut acc = 0f32;
        for (sub, &c) in code.0.iter().enumerate() {
            acc += self.0[sub * CENTROIDS + c as usize];
        }
        acc
    }
}

pub fn adc_distance(table: &DistanceTable, code: &PqCode) -> f32 {
    table.distance(code)
}

/// Trains with the default 25 k-means iterations and the given seed.
pub fn train_pq(descriptors: &[Descriptor], seed: u64) -> Result<PqCodebook> {
    train_pq_with(
        descriptors,
        KMeansConfig {
            seed,
            ..KMeansConfig::default()
        },
    )
}

pub fn train_pq_with(descriptors: &[Descriptor], cfg: KMeansConfig) -> Result<PqCodebook> {
    let n = descriptors.len();
    if n < CENTROIDS {
        return Err(Error::InsufficientData {
            needed: CENTROIDS,
            got: n,
        });
    }
    let mut centroids = Vec::with_capacity(SUBVECTORS * CENTROIDS * SUB_DIM);
    let mut meta = PqTrainingMeta::default();
    let mut data = vec![0f32; n * SUB_DIM];
    for sub in 0..SUBVECTORS {
        for (i, d) in descriptors.iter().enumerate() {
            data[i * SUB_DIM..(i + 1) * SUB_DIM]
                .copy_from_slice(&d.as_slice()[sub * SUB_DIM..(sub + 1) * SUB_DIM]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ sub as u64);
        let km = kmeans(&data, cfg.iterations, &mut rng);
        centroids.extend_from_slice(&km.centroids);
        meta.objectives.push(km.objectives);
        meta.reseeded += km.reseeded;
    }
    Ok(PqCodebook {
        centroids,
        meta: Some(meta),
    })
}

#[inline]
fn sq_dist(a: &[f32], b: &[f32]) -> f32 {
    let mut acc = 0f32;
    for i in 0..SUB_DIM {
        let d = a[i] - b[i];
        acc += d * d;
    }
    acc
}

/// Index and squared distance of the nearest centroid, lowest index on ties.
#[inline]
fn nearest(centroids: &[f32], x: &[f32]) -> (usize, f32) {
    let mut best = (0usize, f32::INFINITY);
    for (c, cent) in centroids.chunks_exact(SUB_DIM).enumerate() {
        let d = sq_dist(x, cent);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

struct KMeans {
    centroids: Vec<f32>,
    objectives: Vec<f64>,
    reseeded: usize,
}

/// Lloyd's k-means with k-means++ seeding on `SUB_DIM`-dimensional rows.
fn kmeans(data: &[f32], iterations: usize, rng: &mut ChaCha8Rng) -> KMeans {
    let n = data.len() / SUB_DIM;
    let row = |i: usize| &data[i * SUB_DIM..(i + 1) * SUB_DIM];

    // k-means++ seeding.
    let mut centroids = Vec::with_capacity(CENTROIDS * SUB_DIM);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first)) as f64).collect();
    for _ in 1..CENTROIDS {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if w > 0.0 && target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            // Guard against rounding landing on a zero-weight tail.
            if d2[chosen] == 0.0 {
                chosen = d2.iter().rposition(|&w| w > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        let start = centroids.len();
        centroids.extend_from_slice(row(pick));
        let c = centroids[start..start + SUB_DIM].to_vec();
        for (i, w) in d2.iter_mut().enumerate() {
            *w = w.min(sq_dist(row(i), &c) as f64);
        }
    }

    let mut assign = vec![usize::MAX; n];
    let mut dist = vec![0f32; n];
    let mut objectives = Vec::with_capacity(iterations + 1);
    let mut reseeded = 0;

    let assign_all = |centroids: &[f32], assign: &mut [usize], dist: &mut [f32]| -> (f64, bool) {
        let mut changed = false;
        let mut obj = 0f64;
        for i in 0..n {
            let (c, d) = nearest(centroids, row(i));
            if assign[i] != c {
                changed = true;
                assign[i] = c;
            }
            dist[i] = d;
            obj += d as f64;
        }
        (obj, changed)
    };

    let (obj, _) = assign_all(&centroids, &mut assign, &mut dist);
    objectives.push(obj);

    for _ in 0..iterations {
        let mut sums = vec![0f64; CENTROIDS * SUB_DIM];
        let mut counts = vec![0usize; CENTROIDS];
        for i in 0..n {
            let c = assign[i];
            counts[c] += 1;
            for (s, &v) in sums[c * SUB_DIM..(c + 1) * SUB_DIM].iter_mut().zip(row(i)) {
                *s += v as f64;
            }
        }
        let mut taken = vec![false; n];
        for c in 0..CENTROIDS {
            let slot = &mut centroids[c * SUB_DIM..(c + 1) * SUB_DIM];
            if counts[c] > 0 {
                for (s, &sum) in slot.iter_mut().zip(&sums[c * SUB_DIM..(c + 1) * SUB_DIM]) {
                    *s = (sum / counts[c] as f64) as f32;
                }
            } else {
                // Empty cluster: move it onto the worst-served point.
                let far = (0..n)
                    .filter(|&i| !taken[i])
                    .fold(None::<usize>, |best, i| match best {
                        Some(b) if dist[b] >= dist[i] => Some(b),
                        _ => Some(i),
                    });
                if let Some(far) = far {
                    taken[far] = true;
                    dist[far] = 0.0;
                    slot.copy_from_slice(row(far));
                    reseeded += 1;
                }
            }
        }
        let (obj, changed) = assign_all(&centroids, &mut assign, &mut dist);
        objectives.push(obj);
        if !changed && counts.iter().all(|&c| c > 0) {
            break;
        }
    }

    KMeans {
        centroids,
        objectives,
        reseeded,
    }
}
