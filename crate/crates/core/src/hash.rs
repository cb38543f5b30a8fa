//! Data-dependent binary hashing (PCA followed by an ITQ rotation) and
//! Hamming-space primitives.
//!
//! A descriptor `d` maps to a 128-bit code with bit `i` set iff row `i` of
//! the projection applied to `d - mean` is strictly positive. The projection
//! is the composition `Rᵀ Pᵀ` of the PCA basis `P` and the learned
//! orthogonal rotation `R`.
//!
//! Bit `j` of sub-code `k` (both zero-based) lives at position `16 k + j` of
//! the packed `u128`, least-significant first, so the little-endian byte
//! encoding of the code is its wire format.

use std::fs;
use std::path::Path;

use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::descriptor::{Descriptor, DIM};
use crate::error::{Error, Result};
use crate::io::{fingerprint, put_f32s, Reader};

pub const CODE_BITS: usize = 128;
pub const SUBCODES: usize = 8;
pub const SUBCODE_BITS: usize = 16;
pub const DEFAULT_ITQ_ITERATIONS: usize = 50;

const HASH_MAGIC: &[u8; 4] = b"CCSH";
const HASH_VERSION: u8 = 1;

/// A packed 128-bit binary code made of eight 16-bit sub-codes.
#[derive(Copy, Clone, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BinaryCode(pub u128);

impl BinaryCode {
    /// The `k`-th (zero-based) 16-bit sub-code.
    #[inline]
    pub fn subcode(self, k: usize) -> u16 {
        debug_assert!(k < SUBCODES);
        (self.0 >> (k * SUBCODE_BITS)) as u16
    }

    #[inline]
    pub fn bit(self, i: usize) -> bool {
        (self.0 >> i) & 1 == 1
    }

    pub fn with_bit_flipped(self, i: usize) -> BinaryCode {
        BinaryCode(self.0 ^ (1u128 << i))
    }

    pub fn complement(self) -> BinaryCode {
        BinaryCode(!self.0)
    }

    pub fn from_subcodes(subcodes: [u16; SUBCODES]) -> BinaryCode {
        let mut v = 0u128;
        for (k, &s) in subcodes.iter().enumerate() {
            v |= (s as u128) << (k * SUBCODE_BITS);
        }
        BinaryCode(v)
    }

    pub fn to_le_bytes(self) -> [u8; 16] {
        self.0.to_le_bytes()
    }

    pub fn from_le_bytes(bytes: [u8; 16]) -> BinaryCode {
        BinaryCode(u128::from_le_bytes(bytes))
    }
}

impl std::fmt::Debug for BinaryCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "BinaryCode({:032x})", self.0)
    }
}

/// Number of differing bits, in `[0, 128]`.
#[inline]
pub fn hamming(a: BinaryCode, b: BinaryCode) -> u32 {
    (a.0 ^ b.0).count_ones()
}

/// Diagnostics recorded while training a [`HashModel`].
#[derive(Clone, Debug)]
pub struct TrainingMeta {
    pub iterations: usize,
    /// Quantization loss `‖B − V R‖²_F` at the initial rotation and after
    /// each rotation update (`iterations + 1` entries).
    pub losses: Vec<f64>,
    /// The learned rotation on the non-degenerate PCA subspace (`rank × rank`).
    pub rotation: DMatrix<f64>,
    /// Number of PCA directions with non-negligible variance.
    pub rank: usize,
}

impl TrainingMeta {
    /// `max |RᵀR − I|` of the learned rotation.
    pub fn orthogonality_error(&self) -> f64 {
        let r = &self.rotation;
        let gram = r.transpose() * r;
        let mut worst = 0f64;
        for i in 0..gram.nrows() {
            for j in 0..gram.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((gram[(i, j)] - target).abs());
            }
        }
        worst
    }
}

/// Trained hash function: training mean plus a 128×128 projection.
#[derive(Clone, Debug)]
pub struct HashModel {
    mean: [f32; DIM],
    /// Row-major `CODE_BITS × DIM`.
    projection: Vec<f32>,
    meta: Option<TrainingMeta>,
}

impl PartialEq for HashModel {
    fn eq(&self, other: &Self) -> bool {
        self.mean == other.mean && self.projection == other.projection
    }
}

impl HashModel {
    /// Builds a model from an explicit mean and row-major projection.
    pub fn from_parts(mean: [f32; DIM], projection: Vec<f32>) -> Result<Self> {
        if projection.len() != CODE_BITS * DIM {
            return Err(Error::InvalidInput(format!(
                "projection needs {} entries, got {}",
                CODE_BITS * DIM,
                projection.len()
            )));
        }
        if mean.iter().chain(projection.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("hash model has non-finite entries".into()));
        }
        Ok(HashModel {
            mean,
            projection,
            meta: None,
        })
    }

    pub fn mean(&self) -> &[f32; DIM] {
        &self.mean
    }

    pub fn projection(&self) -> &[f32] {
        &self.projection
    }

    pub fn training_meta(&self) -> Option<&TrainingMeta> {
        self.meta.as_ref()
    }

    /// Signed projections `W (d − mean)`, one per output bit.
    pub fn project(&self, d: &Descriptor) -> [f64; CODE_BITS] {
        let mut centered = [0f64; DIM];
        for ((c, &v), &m) in centered.iter_mut().zip(d.as_slice()).zip(&self.mean) {
            *c = v as f64 - m as f64;
        }
        let mut out = [0f64; CODE_BITS];
        for (o, row) in out.iter_mut().zip(self.projection.chunks_exact(DIM)) {
            *o = row
                .iter()
                .zip(centered.iter())
                .map(|(&w, &c)| w as f64 * c)
                .sum();
        }
        out
    }

    /// `h = sign(W (d − mean))`; an exactly-zero projection yields bit 0.
    pub fn hash(&self, d: &Descriptor) -> BinaryCode {
        let p = self.project(d);
        let mut code = 0u128;
        for (i, &v) in p.iter().enumerate() {
            if v > 0.0 {
                code |= 1u128 << i;
            }
        }
        BinaryCode(code)
    }

    /// Content fingerprint of the serialized parameters.
    pub fn id(&self) -> u64 {
        fingerprint(&self.to_bytes())
    }

    /// `CCSH`, version byte, 128 mean floats, then the projection rows.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + (DIM + CODE_BITS * DIM) * 4);
        out.extend_from_slice(HASH_MAGIC);
        out.push(HASH_VERSION);
        put_f32s(&mut out, &self.mean);
        put_f32s(&mut out, &self.projection);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "hash model file");
        r.expect_magic(HASH_MAGIC)?;
        r.expect_version(HASH_VERSION)?;
        let mut mean = [0f32; DIM];
        r.f32s(&mut mean)?;
        let mut projection = vec![0f32; CODE_BITS * DIM];
        r.f32s(&mut projection)?;
        r.finish()?;
        Self::from_parts(mean, projection)
            .map_err(|e| Error::format("hash model file", e.to_string()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

/// Trains the hash by PCA on all 128 dimensions followed by iterative
/// quantization: alternate `B = sign(V R)` and the orthogonal Procrustes
/// update of `R`. The random initial rotation is drawn from `seed`.
///
/// Directions with (numerically) zero variance are excluded from the
/// rotation; their rows keep the plain PCA basis vector.
pub fn train_hash(descriptors: &[Descriptor], iterations: usize, seed: u64) -> Result<HashModel> {
    let n = descriptors.len();
    if n < DIM {
        return Err(Error::InsufficientData { needed: DIM, got: n });
    }

    let mut mean = [0f64; DIM];
    for d in descriptors {
        for (m, &v) in mean.iter_mut().zip(d.as_slice()) {
            *m += v as f64;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    let mean32 = mean.map(|m| m as f32);

    // Center against the stored (f32) mean so training and hashing agree.
    let centered = DMatrix::from_fn(n, DIM, |i, j| {
        descriptors[i].as_slice()[j] as f64 - mean32[j] as f64
    });
    let cov = (centered.transpose() * &centered) / (n as f64 - 1.0).max(1.0);
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..DIM).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .expect("finite eigenvalues")
            .then(a.cmp(&b))
    });
    let basis = DMatrix::from_fn(DIM, DIM, |i, j| eig.eigenvectors[(i, order[j])]);
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&j| top > 0.0 && eig.eigenvalues[j] > top * 1e-10)
        .count();
    if rank < DIM {
        warn!("descriptor covariance has rank {rank} < {DIM}; rotating only the non-degenerate subspace");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rotation = random_rotation(rank, &mut rng);
    let mut losses = Vec::with_capacity(iterations + 1);

    if rank > 0 {
        let v = &centered * basis.columns(0, rank);
        let (mut signs, loss) = binarize(&v, &rotation);
        losses.push(loss);
        for _ in 0..iterations {
            // Procrustes: maximize tr(R Bᵀ V) with Bᵀ V = U S Wᵀ → R = W Uᵀ.
            let m = signs.transpose() * &v;
            let svd = m.svd(true, true);
            let u = svd.u.expect("requested U");
            let w = svd.v_t.expect("requested Vᵀ").transpose();
            rotation = w * u.transpose();
            let (next, loss) = binarize(&v, &rotation);
            signs = next;
            losses.push(loss);
        }
    }

    // Rows of the composed projection: (P · blockdiag(R, I))ᵀ.
    let mut full = DMatrix::<f64>::identity(DIM, DIM);
    full.view_mut((0, 0), (rank, rank)).copy_from(&rotation);
    let composed = (basis * full).transpose();
    let mut projection = Vec::with_capacity(CODE_BITS * DIM);
    for i in 0..CODE_BITS {
        for j in 0..DIM {
            projection.push(composed[(i, j)] as f32);
        }
    }

    Ok(HashModel {
        mean: mean32,
        projection,
        meta: Some(TrainingMeta {
            iterations,
            losses,
            rotation,
            rank,
        }),
    })
}

fn random_rotation(dim: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    if dim == 0 {
        return DMatrix::zeros(0, 0);
    }
    let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    // Fix column signs so the factorization is unique.
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// `B = sign(V R)` with zero mapped to −1 (bit 0), and the loss `‖B − VR‖²`.
fn binarize(v: &DMatrix<f64>, rotation: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let projected = v * rotation;
    let mut loss = 0.0;
    let signs = projected.map(|x| {
        let b = if x > 0.0 { 1.0 } else { -1.0 };
        loss += (b - x) * (b - x);
        b
    });
    (signs, loss)
}
