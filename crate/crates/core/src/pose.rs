//! Projective camera estimation with the normalized direct linear transform.

use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Vector3, Vector4};

use crate::error::{Error, Result};

/// Minimum number of correspondences for the DLT.
pub const MIN_POINTS: usize = 6;

/// Relative size below which the second-smallest singular value of the DLT
/// system marks a degenerate configuration (collinear or coplanar points).
const DEGENERACY_TOL: f64 = 1e-8;

/// A 3×4 camera matrix scaled to unit Frobenius norm.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProjectionMatrix(Matrix3x4<f64>);

impl ProjectionMatrix {
    /// Normalizes `m` to unit Frobenius norm. The sign is kept as given.
    pub fn new(m: Matrix3x4<f64>) -> Result<Self> {
        let norm = m.norm();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Degenerate("projection matrix is zero or non-finite"));
        }
        Ok(ProjectionMatrix(m / norm))
    }

    /// Wraps `m` without rescaling.
    pub fn from_raw(m: Matrix3x4<f64>) -> Self {
        ProjectionMatrix(m)
    }

    /// `K [R | -R c]` for intrinsics `k`, world-to-camera rotation `r` and
    /// camera center `c`.
    pub fn from_camera(k: &Matrix3<f64>, r: &Matrix3<f64>, center: [f64; 3]) -> Result<Self> {
        let c = Vector3::from(center);
        let mut rt = Matrix3x4::zeros();
        rt.fixed_view_mut::<3, 3>(0, 0).copy_from(r);
        rt.set_column(3, &(-r * c));
        Self::new(k * rt)
    }

    pub fn matrix(&self) -> &Matrix3x4<f64> {
        &self.0
    }

    /// Homogeneous image of `x`.
    pub fn apply(&self, x: [f64; 3]) -> Vector3<f64> {
        self.0 * Vector4::new(x[0], x[1], x[2], 1.0)
    }

    /// Perspective projection of `x`.
    pub fn project(&self, x: [f64; 3]) -> Result<[f64; 2]> {
        let h = self.apply(x);
        let scale = self.0.row(2).norm() * (1.0 + Vector3::from(x).norm());
        if h.z.abs() <= 1e-12 * scale || !h.z.is_finite() {
            return Err(Error::PointAtInfinity);
        }
        Ok([h.x / h.z, h.y / h.z])
    }

    /// Pixel distance between `q` and the projection of `x`; `+∞` when `x`
    /// does not project to a finite pixel.
    pub fn reproj_error(&self, q: [f64; 2], x: [f64; 3]) -> f64 {
        match self.project(x) {
            Ok(p) => (p[0] - q[0]).hypot(p[1] - q[1]),
            Err(_) => f64::INFINITY,
        }
    }

    /// Right null vector dehomogenized, from the signed 3×3 minors.
    pub fn camera_center(&self) -> Result<[f64; 3]> {
        let m = &self.0;
        let minor = |skip: usize| {
            let cols: Vec<usize> = (0..4).filter(|&c| c != skip).collect();
            Matrix3::from_fn(|r, c| m[(r, cols[c])]).determinant()
        };
        let c = [minor(0), -minor(1), minor(2), -minor(3)];
        let scale = c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        if !(scale > 0.0) || c[3].abs() <= 1e-12 * scale {
            return Err(Error::CameraAtInfinity);
        }
        Ok([c[0] / c[3], c[1] / c[3], c[2] / c[3]])
    }
}

impl serde::Serialize for ProjectionMatrix {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: [[f64; 4]; 3] = std::array::from_fn(|r| std::array::from_fn(|c| self.0[(r, c)]));
        rows.serialize(s)
    }
}

/// Similarity that moves the centroid to the origin and sets the mean
/// distance from it to `target`.
fn normalizer<const D: usize>(pts: impl Iterator<Item = [f64; D]> + Clone, target: f64) -> Result<(f64, [f64; D])> {
    let n = pts.clone().count() as f64;
    let mut centroid = [0.0; D];
    for p in pts.clone() {
        for (c, v) in centroid.iter_mut().zip(p) {
            *c += v / n;
        }
    }
    let mean_dist = pts
        .map(|p| p.iter().zip(&centroid).map(|(v, c)| (v - c) * (v - c)).sum::<f64>().sqrt())
        .sum::<f64>()
        / n;
    if !(mean_dist > 0.0) || !mean_dist.is_finite() {
        return Err(Error::Degenerate("all points coincide"));
    }
    Ok((target / mean_dist, centroid))
}

/// Least-squares DLT over at least six (pixel, position) pairs with Hartley
/// normalization. The result is sign-fixed so that the input points lie in
/// front of the camera on average.
pub fn dlt6(pairs: &[([f64; 2], [f64; 3])]) -> Result<ProjectionMatrix> {
    if pairs.len() < MIN_POINTS {
        return Err(Error::InsufficientData {
            needed: MIN_POINTS,
            got: pairs.len(),
        });
    }
    if pairs.iter().any(|(q, x)| q.iter().chain(x).any(|v| !v.is_finite())) {
        return Err(Error::InvalidInput("non-finite correspondence".into()));
    }
    let (s2, c2) = normalizer(pairs.iter().map(|p| p.0), std::f64::consts::SQRT_2)?;
    let (s3, c3) = normalizer(pairs.iter().map(|p| p.1), 3f64.sqrt())?;

    let n = pairs.len();
    let mut a = DMatrix::<f64>::zeros(2 * n, 12);
    for (i, (q, x)) in pairs.iter().enumerate() {
        let u = (q[0] - c2[0]) * s2;
        let v = (q[1] - c2[1]) * s2;
        let xh = [(x[0] - c3[0]) * s3, (x[1] - c3[1]) * s3, (x[2] - c3[2]) * s3, 1.0];
        for j in 0..4 {
            a[(2 * i, 4 + j)] = -xh[j];
            a[(2 * i, 8 + j)] = v * xh[j];
            a[(2 * i + 1, j)] = xh[j];
            a[(2 * i + 1, 8 + j)] = -u * xh[j];
        }
    }
    let svd = a.svd(false, true);
    let sv = &svd.singular_values;
    if sv[10] <= DEGENERACY_TOL * sv[0] {
        return Err(Error::Degenerate("correspondences are collinear or coplanar"));
    }
    let vt = svd.v_t.as_ref().expect("requested V");
    let p = vt.row(11);
    let pn = Matrix3x4::from_fn(|r, c| p[4 * r + c]);

    let t2_inv = Matrix3::new(1.0 / s2, 0.0, c2[0], 0.0, 1.0 / s2, c2[1], 0.0, 0.0, 1.0);
    let t3 = Matrix4::new(
        s3, 0.0, 0.0, -s3 * c3[0],
        0.0, s3, 0.0, -s3 * c3[1],
        0.0, 0.0, s3, -s3 * c3[2],
        0.0, 0.0, 0.0, 1.0,
    );
    let m = t2_inv * pn * t3;
    let left = m.fixed_view::<3, 3>(0, 0);
    if !(left.determinant().abs() > DEGENERACY_TOL * left.norm().powi(3)) {
        return Err(Error::Degenerate("solution has a singular left 3x3 block"));
    }
    let mean_w: f64 = pairs
        .iter()
        .map(|(_, x)| (m * Vector4::new(x[0], x[1], x[2], 1.0)).z)
        .sum();
    ProjectionMatrix::new(if mean_w < 0.0 { -m } else { m })
}
