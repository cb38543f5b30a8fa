//! Synthetic street scenes with ground truth.
//!
//! Points lie on three facade planes parallel to a 100 m street. Reference
//! cameras stand at evenly spaced placemarks and look across the street;
//! consecutive placemarks are grouped into overlapping segments, and a point
//! joins a segment's model when at least two of that segment's reference
//! views see it. Query cameras are dropped at random along the street.
//!
//! Descriptors imitate SIFT: each of the sixteen 8-dimensional blocks is one
//! of 64 non-negative prototypes, the concatenation is L2-normalized, and
//! every observation adds isotropic Gaussian noise. Repetition groups (window
//! rows) share a base descriptor; siblings differ in two blocks.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{Matrix3, Vector3};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use crate::descriptor::{Descriptor, DIM};
use crate::error::{Error, Result};
use crate::hash::{train_hash, HashModel, DEFAULT_ITQ_ITERATIONS};
use crate::io::RawFeature;
use crate::model::{build_submodel, mean_descriptor, PointInput, SegmentMeta, SubModel};
use crate::pose::ProjectionMatrix;
use crate::pq::{train_pq, PqCodebook, SUBVECTORS, SUB_DIM};
use crate::retrieval::{build_index, ImageInput, SegmentIndex};
use crate::search::{CandidatePoint, CorrespondenceSet, VerificationEntry};

pub const IMAGE_WIDTH: f64 = 640.0;
pub const IMAGE_HEIGHT: f64 = 480.0;
/// Focal length for a 90° horizontal field of view.
pub const FOCAL: f64 = 320.0;
pub const PROTOTYPES: usize = 8;
/// Coarse appearance classes; descriptors cluster around them.
pub const CLASSES: usize = 16;
const CLASS_WEIGHT: f32 = 0.6;
pub const FACADES: [f64; 3] = [8.0, 11.0, 14.0];
pub const FACADE_HEIGHT: f64 = 12.0;
pub const CAMERA_HEIGHT: f64 = 1.7;
pub const MIN_VISIBLE: usize = 20;
const MAX_DEPTH: f64 = 40.0;
const CODEC_POOL: usize = 6_000;
const SIBLING_SPACING: f64 = 1.8;
const SIBLING_MIN_DISTANCE: f64 = 0.25;

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RepetitionSpec {
    /// Points per repetition group.
    pub group_size: usize,
    /// Fraction of points that belong to a group.
    pub grouped_fraction: f64,
    /// Fraction of a query's true features whose descriptor is pulled toward
    /// a sibling so that the true point ranks second.
    pub planted_fraction: f64,
    /// Position of the planted descriptor between sibling (0) and true point (1).
    pub pull: f64,
}

impl Default for RepetitionSpec {
    fn default() -> Self {
        RepetitionSpec {
            group_size: 4,
            grouped_fraction: 1.0,
            planted_fraction: 0.3,
            pull: 0.46,
        }
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    /// Seeds the descriptor prototypes and therefore the trained codecs.
    pub vocabulary_seed: u64,
    pub segments: usize,
    pub points_per_segment: usize,
    pub placemarks_per_segment: usize,
    pub overlap_placemarks: usize,
    pub views_per_placemark: usize,
    pub queries: usize,
    pub street_length: f64,
    /// Noise standard deviation as a fraction of the descriptor norm.
    pub descriptor_noise: f64,
    /// Keypoint noise standard deviation in pixels.
    pub pixel_noise: f64,
    /// Random-descriptor features per true feature.
    pub clutter_fraction: f64,
    /// Confident but geometrically wrong features per true feature.
    pub mismatch_fraction: f64,
    /// Subsample each query to a random count in this range.
    pub query_features: Option<(usize, usize)>,
    pub repetition: Option<RepetitionSpec>,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            seed: 1,
            vocabulary_seed: 7,
            segments: 4,
            points_per_segment: 500,
            placemarks_per_segment: 10,
            overlap_placemarks: 2,
            views_per_placemark: 3,
            queries: 50,
            street_length: 100.0,
            descriptor_noise: 0.02,
            pixel_noise: 0.5,
            clutter_fraction: 0.2,
            mismatch_fraction: 0.0,
            query_features: None,
            repetition: None,
        }
    }
}

impl SceneSpec {
    /// Four segments of 500 points, 50 queries, 2% descriptor noise.
    pub fn baseline(seed: u64) -> Self {
        SceneSpec {
            seed,
            ..Self::default()
        }
    }

    /// Window rows everywhere and sparse queries where a large share of
    /// features match a sibling first.
    pub fn repetitive(seed: u64) -> Self {
        SceneSpec {
            seed,
            query_features: Some((20, 40)),
            repetition: Some(RepetitionSpec {
                planted_fraction: 0.45,
                ..RepetitionSpec::default()
            }),
            ..Self::default()
        }
    }

    pub fn placemarks(&self) -> usize {
        self.segments * (self.placemarks_per_segment - self.overlap_placemarks) + self.overlap_placemarks
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("scene spec: {m}")));
        if self.segments == 0 || self.points_per_segment == 0 || self.queries == 0 {
            return bad("segments, points and queries must be positive");
        }
        if self.overlap_placemarks >= self.placemarks_per_segment {
            return bad("overlap must be smaller than the segment length");
        }
        if self.views_per_placemark == 0 || !(self.street_length > 0.0) {
            return bad("need at least one view per placemark and a positive street length");
        }
        if !(self.descriptor_noise >= 0.0 && self.pixel_noise >= 0.0 && self.clutter_fraction >= 0.0 && self.mismatch_fraction >= 0.0) {
            return bad("noise levels and fractions must be non-negative");
        }
        if let Some((lo, hi)) = self.query_features {
            if lo < MIN_VISIBLE || hi < lo {
                return bad("query feature range must start at 20 or more");
            }
        }
        if let Some(r) = &self.repetition {
            if r.group_size < 2 || !(0.0..=1.0).contains(&r.grouped_fraction) || !(0.0..=1.0).contains(&r.planted_fraction) || !(0.0..0.5).contains(&r.pull) {
                return bad("repetition needs group_size >= 2, fractions in [0, 1] and pull in [0, 0.5)");
            }
        }
        Ok(())
    }
}

/// Block prototypes shared by every scene with the same vocabulary seed.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    classes: Vec<[f32; DIM]>,
    prototypes: Vec<[f32; SUB_DIM]>,
}

impl Vocabulary {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05ee_d0f7_0cab);
        let classes = (0..CLASSES)
            .map(|_| normalize(std::array::from_fn(|_| rng.sample::<f32, _>(StandardNormal).abs())))
            .collect();
        let prototypes = (0..SUBVECTORS * PROTOTYPES)
            .map(|_| std::array::from_fn(|_| rng.sample::<f32, _>(StandardNormal).abs()))
            .collect();
        Vocabulary { classes, prototypes }
    }

    fn prototype(&self, block: usize, p: usize) -> &[f32; SUB_DIM] {
        &self.prototypes[block * PROTOTYPES + p]
    }

    fn compose(&self, class: usize, choice: &[usize; SUBVECTORS]) -> [f32; DIM] {
        let mut v = [0f32; DIM];
        for (b, &p) in choice.iter().enumerate() {
            v[b * SUB_DIM..(b + 1) * SUB_DIM].copy_from_slice(self.prototype(b, p));
        }
        let detail = normalize(v);
        let c = &self.classes[class];
        normalize(std::array::from_fn(|k| CLASS_WEIGHT * c[k] + (1.0 - CLASS_WEIGHT) * detail[k]))
    }

    fn sample_genome(&self, rng: &mut impl Rng) -> Genome {
        Genome {
            class: rng.random_range(0..CLASSES),
            blocks: std::array::from_fn(|_| rng.random_range(0..PROTOTYPES)),
        }
    }

    /// A random unit-norm base descriptor.
    pub fn sample(&self, rng: &mut impl Rng) -> [f32; DIM] {
        let g = self.sample_genome(rng);
        self.compose(g.class, &g.blocks)
    }

    /// Same class as `g` with every detail block redrawn, at least
    /// `min_dist` from `g`.
    fn sibling(&self, g: &Genome, rng: &mut impl Rng, min_dist: f64) -> [f32; DIM] {
        let base = self.compose(g.class, &g.blocks);
        loop {
            let blocks = std::array::from_fn(|_| rng.random_range(0..PROTOTYPES));
            let out = self.compose(g.class, &blocks);
            if dist(&out, &base) >= min_dist {
                return out;
            }
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Genome {
    class: usize,
    blocks: [usize; SUBVECTORS],
}

fn normalize(mut v: [f32; DIM]) -> [f32; DIM] {
    let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
    if n > 0.0 {
        for x in &mut v {
            *x = (*x as f64 / n) as f32;
        }
    }
    v
}

fn dist(a: &[f32; DIM], b: &[f32; DIM]) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum::<f64>().sqrt()
}

/// `base` plus Gaussian noise of total expected norm `noise`, renormalized.
fn noisy(base: &[f32; DIM], noise: f64, rng: &mut impl Rng) -> [f32; DIM] {
    if noise == 0.0 {
        return *base;
    }
    let n = Normal::new(0.0, noise / (DIM as f64).sqrt()).expect("finite sigma");
    let mut v = *base;
    for x in &mut v {
        *x += n.sample(rng) as f32;
    }
    normalize(v)
}

fn descriptor(v: [f32; DIM]) -> Descriptor {
    Descriptor::new(v).expect("generated descriptors are finite")
}

/// Hash model and PQ codebook trained on a held-out pool.
#[derive(Debug)]
pub struct Codecs {
    pub hash: HashModel,
    pub codebook: PqCodebook,
}

/// Held-out training descriptors drawn from the vocabulary.
pub fn codec_pool(vocabulary_seed: u64, noise: f64) -> Vec<Descriptor> {
    let vocab = Vocabulary::new(vocabulary_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(vocabulary_seed.wrapping_mul(31).wrapping_add(0xc0dec));
    (0..CODEC_POOL)
        .map(|_| {
            let base = vocab.sample(&mut rng);
            descriptor(noisy(&base, noise, &mut rng))
        })
        .collect()
}

/// Trains codecs on [`codec_pool`].
pub fn train_codecs(vocabulary_seed: u64, noise: f64) -> Result<Codecs> {
    let pool = codec_pool(vocabulary_seed, noise);
    Ok(Codecs {
        hash: train_hash(&pool, DEFAULT_ITQ_ITERATIONS, vocabulary_seed)?,
        codebook: train_pq(&pool, vocabulary_seed)?,
    })
}

/// Codecs for a vocabulary seed, trained once per process.
pub fn shared_codecs(vocabulary_seed: u64) -> Result<Arc<Codecs>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<Codecs>>>> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    let mut map = cache.lock().unwrap_or_else(|e| e.into_inner());
    if let Some(c) = map.get(&vocabulary_seed) {
        return Ok(c.clone());
    }
    let codecs = Arc::new(train_codecs(vocabulary_seed, SceneSpec::default().descriptor_noise)?);
    map.insert(vocabulary_seed, codecs.clone());
    Ok(codecs)
}

/// A pinhole camera looking along `yaw` (radians from +y toward +x) and
/// `pitch` (up positive).
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Camera {
    pub center: [f64; 3],
    pub yaw: f64,
    pub pitch: f64,
}

impl Camera {
    fn rotation(&self) -> Matrix3<f64> {
        let fwd = Vector3::new(self.yaw.sin() * self.pitch.cos(), self.yaw.cos() * self.pitch.cos(), self.pitch.sin());
        let right = fwd.cross(&Vector3::z()).normalize();
        let down = fwd.cross(&right);
        Matrix3::from_rows(&[right.transpose(), down.transpose(), fwd.transpose()])
    }

    pub fn intrinsics() -> Matrix3<f64> {
        Matrix3::new(FOCAL, 0.0, IMAGE_WIDTH / 2.0, 0.0, FOCAL, IMAGE_HEIGHT / 2.0, 0.0, 0.0, 1.0)
    }

    pub fn matrix(&self) -> ProjectionMatrix {
        ProjectionMatrix::from_camera(&Self::intrinsics(), &self.rotation(), self.center).expect("valid camera")
    }

    /// Pixel of `x` if it is in front, within range and inside the image.
    pub fn observe(&self, x: [f64; 3]) -> Option<[f64; 2]> {
        let c = self.rotation() * (Vector3::from(x) - Vector3::from(self.center));
        if c.z < 0.5 || c.z > MAX_DEPTH {
            return None;
        }
        let u = FOCAL * c.x / c.z + IMAGE_WIDTH / 2.0;
        let v = FOCAL * c.y / c.z + IMAGE_HEIGHT / 2.0;
        ((0.0..IMAGE_WIDTH).contains(&u) && (0.0..IMAGE_HEIGHT).contains(&v)).then_some([u, v])
    }
}

#[derive(Clone, Debug)]
pub struct ScenePoint {
    pub id: u32,
    pub position: [f32; 3],
    pub base: [f32; DIM],
    /// Repetition group, if any.
    pub group: Option<u32>,
    /// One noisy descriptor per observing reference view.
    pub observations: Vec<Descriptor>,
}

#[derive(Clone, Debug)]
pub struct Segment {
    pub meta: SegmentMeta,
    /// Ascending point ids.
    pub points: Vec<u32>,
}

#[derive(Clone, Debug)]
pub struct ReferenceImage {
    pub id: u32,
    pub placemark: usize,
    pub camera: Camera,
    pub models: Vec<u32>,
    pub descriptors: Vec<Descriptor>,
}

/// Origin of one query feature.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureTruth {
    /// Projection of the point with a noisy descriptor.
    True(u32),
    /// Projection of the point; the descriptor is pulled toward `sibling`.
    Planted { point: u32, sibling: u32 },
    /// Random descriptor at a random pixel.
    Clutter,
    /// Descriptor of `point` at a random pixel.
    Mismatch(u32),
}

#[derive(Clone, Debug)]
pub struct SyntheticQuery {
    pub id: u32,
    pub camera: Camera,
    pub features: Vec<RawFeature>,
    pub truth: Vec<FeatureTruth>,
    /// Segments covering the placemark nearest to the camera.
    pub segments: Vec<u32>,
}

impl SyntheticQuery {
    pub fn planted(&self) -> usize {
        self.truth.iter().filter(|t| matches!(t, FeatureTruth::Planted { .. })).count()
    }

    pub fn true_features(&self) -> usize {
        self.truth.iter().filter(|t| matches!(t, FeatureTruth::True(_) | FeatureTruth::Planted { .. })).count()
    }
}

#[derive(Clone, Debug)]
pub struct SyntheticScene {
    pub spec: SceneSpec,
    pub points: Vec<ScenePoint>,
    pub segments: Vec<Segment>,
    pub images: Vec<ReferenceImage>,
    pub queries: Vec<SyntheticQuery>,
}

fn placemark_x(spec: &SceneSpec, p: usize) -> f64 {
    spec.street_length * p as f64 / (spec.placemarks() - 1).max(1) as f64
}

fn view_yaws(n: usize) -> Vec<f64> {
    let span = 35f64.to_radians();
    if n == 1 {
        return vec![0.0];
    }
    (0..n).map(|i| -span + 2.0 * span * i as f64 / (n - 1) as f64).collect()
}

fn segments_of_placemark(spec: &SceneSpec, p: usize) -> Vec<u32> {
    let step = spec.placemarks_per_segment - spec.overlap_placemarks;
    (0..spec.segments)
        .filter(|s| (s * step..s * step + spec.placemarks_per_segment).contains(&p))
        .map(|s| s as u32)
        .collect()
}

/// Generates points, reference images, segments and queries.
pub fn gen_scene(spec: &SceneSpec) -> Result<SyntheticScene> {
    spec.validate()?;
    let vocab = Vocabulary::new(spec.vocabulary_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = spec.descriptor_noise;
    let margin = 10.0;

    // Points, with repetition groups laid out as window rows.
    let total = spec.segments * spec.points_per_segment;
    let mut points: Vec<ScenePoint> = Vec::with_capacity(total);
    let mut group_id = 0u32;
    while points.len() < total {
        let layer = FACADES[rng.random_range(0..FACADES.len())];
        let x = rng.random_range(-margin..spec.street_length + margin);
        let z = rng.random_range(0.3..FACADE_HEIGHT);
        let genome = vocab.sample_genome(&mut rng);
        let base = vocab.compose(genome.class, &genome.blocks);
        let grouped = spec.repetition.filter(|r| rng.random_bool(r.grouped_fraction));
        match grouped {
            Some(r) => {
                let n = r.group_size.min(total - points.len());
                for k in 0..n {
                    let b = if k == 0 { base } else { vocab.sibling(&genome, &mut rng, SIBLING_MIN_DISTANCE) };
                    points.push(ScenePoint {
                        id: points.len() as u32,
                        position: [(x + k as f64 * SIBLING_SPACING) as f32, layer as f32, z as f32],
                        base: b,
                        group: Some(group_id),
                        observations: Vec::new(),
                    });
                }
                group_id += 1;
            }
            None => points.push(ScenePoint {
                id: points.len() as u32,
                position: [x as f32, layer as f32, z as f32],
                base,
                group: None,
                observations: Vec::new(),
            }),
        }
    }
    let pos64 = |p: &ScenePoint| p.position.map(|v| v as f64);

    // Reference views and segment membership.
    let n_pm = spec.placemarks();
    let mut seen_by: Vec<HashMap<u32, usize>> = vec![HashMap::new(); points.len()];
    let mut images = Vec::new();
    for pm in 0..n_pm {
        let models = segments_of_placemark(spec, pm);
        for yaw in view_yaws(spec.views_per_placemark) {
            let camera = Camera {
                center: [placemark_x(spec, pm), 0.0, CAMERA_HEIGHT],
                yaw,
                pitch: 0.1,
            };
            let mut descriptors = Vec::new();
            for p in points.iter_mut() {
                if camera.observe(pos64(p)).is_some() {
                    let d = descriptor(noisy(&p.base, noise, &mut rng));
                    p.observations.push(d.clone());
                    descriptors.push(d);
                    for &m in &models {
                        *seen_by[p.id as usize].entry(m).or_default() += 1;
                    }
                }
            }
            images.push(ReferenceImage {
                id: images.len() as u32,
                placemark: pm,
                camera,
                models: models.clone(),
                descriptors,
            });
        }
    }
    let step = spec.placemarks_per_segment - spec.overlap_placemarks;
    let segments: Vec<Segment> = (0..spec.segments as u32)
        .map(|s| {
            let start = s as usize * step;
            Segment {
                meta: SegmentMeta {
                    segment_id: s,
                    placemark_start: start as u32,
                    placemark_end: (start + spec.placemarks_per_segment) as u32,
                    overlap: spec.overlap_placemarks as u32,
                },
                points: (0..points.len() as u32)
                    .filter(|&i| seen_by[i as usize].get(&s).copied().unwrap_or(0) >= 2)
                    .collect(),
            }
        })
        .collect();
    if let Some(s) = segments.iter().find(|s| s.points.len() < MIN_VISIBLE) {
        return Err(Error::InvalidInput(format!(
            "segment {} is under-observed: {} points",
            s.meta.segment_id,
            s.points.len()
        )));
    }
    let mut model_sets: Vec<Vec<u32>> = vec![Vec::new(); points.len()];
    for s in &segments {
        for &p in &s.points {
            model_sets[p as usize].push(s.meta.segment_id);
        }
    }
    let mut group_members: HashMap<u32, Vec<u32>> = HashMap::new();
    for p in &points {
        if let Some(g) = p.group {
            group_members.entry(g).or_default().push(p.id);
        }
    }

    // Queries.
    let pixel_noise = Normal::new(0.0, spec.pixel_noise.max(1e-300)).expect("finite");
    let mut queries = Vec::with_capacity(spec.queries);
    for qid in 0..spec.queries as u32 {
        let mut attempt = 0;
        let (camera, visible) = loop {
            attempt += 1;
            let camera = Camera {
                center: [
                    rng.random_range(2.0..spec.street_length - 2.0),
                    rng.random_range(-1.0..2.0),
                    rng.random_range(1.4..2.0),
                ],
                yaw: rng.random_range(-25f64..25.0).to_radians(),
                pitch: rng.random_range(0.0f64..10.0).to_radians(),
            };
            let visible: Vec<(u32, [f64; 2])> = points
                .iter()
                .filter(|p| !model_sets[p.id as usize].is_empty())
                .filter_map(|p| camera.observe(pos64(p)).map(|px| (p.id, px)))
                .collect();
            if visible.len() >= MIN_VISIBLE {
                break (camera, visible);
            }
            if attempt == 100 {
                return Err(Error::InvalidInput(format!("query {qid}: no camera sees {MIN_VISIBLE} points")));
            }
        };
        let mut visible = visible;
        if let Some((lo, hi)) = spec.query_features {
            visible.shuffle(&mut rng);
            visible.truncate(rng.random_range(lo..=hi));
            visible.sort_by_key(|v| v.0);
        }

        let mut feats: Vec<(RawFeature, FeatureTruth)> = Vec::new();
        let n_true = visible.len();
        let n_planted = spec.repetition.map_or(0, |r| (r.planted_fraction * n_true as f64).round() as usize);
        let mut order: Vec<usize> = (0..n_true).collect();
        order.shuffle(&mut rng);
        let mut planted = 0;
        let mut planted_rows = vec![None; n_true];
        for &i in &order {
            if planted == n_planted {
                break;
            }
            let pid = visible[i].0;
            let Some(g) = points[pid as usize].group else { continue };
            // A sibling sharing a model with the true point.
            let sib = group_members[&g].iter().copied().find(|&s| {
                s != pid && model_sets[s as usize].iter().any(|m| model_sets[pid as usize].contains(m))
            });
            if let Some(s) = sib {
                planted_rows[i] = Some(s);
                planted += 1;
            }
        }
        let pull = spec.repetition.map_or(0.0, |r| r.pull) as f32;
        for (i, &(pid, px)) in visible.iter().enumerate() {
            let p = &points[pid as usize];
            let pixel = [
                (px[0] + pixel_noise.sample(&mut rng)).clamp(0.0, IMAGE_WIDTH - 1e-3) as f32,
                (px[1] + pixel_noise.sample(&mut rng)).clamp(0.0, IMAGE_HEIGHT - 1e-3) as f32,
            ];
            let (desc, truth) = match planted_rows[i] {
                Some(s) => {
                    let sb = &points[s as usize].base;
                    let mixed: [f32; DIM] = std::array::from_fn(|k| sb[k] + pull * (p.base[k] - sb[k]));
                    (noisy(&normalize(mixed), noise, &mut rng), FeatureTruth::Planted { point: pid, sibling: s })
                }
                None => (noisy(&p.base, noise, &mut rng), FeatureTruth::True(pid)),
            };
            feats.push((RawFeature { pixel, descriptor: descriptor(desc) }, truth));
        }
        let random_pixel = |rng: &mut ChaCha8Rng| {
            [rng.random_range(0.0..IMAGE_WIDTH) as f32, rng.random_range(0.0..IMAGE_HEIGHT) as f32]
        };
        for _ in 0..(spec.clutter_fraction * n_true as f64).round() as usize {
            let d = noisy(&vocab.sample(&mut rng), noise, &mut rng);
            feats.push((RawFeature { pixel: random_pixel(&mut rng), descriptor: descriptor(d) }, FeatureTruth::Clutter));
        }
        for _ in 0..(spec.mismatch_fraction * n_true as f64).round() as usize {
            let (pid, _) = visible[rng.random_range(0..n_true)];
            let d = noisy(&points[pid as usize].base, noise, &mut rng);
            feats.push((RawFeature { pixel: random_pixel(&mut rng), descriptor: descriptor(d) }, FeatureTruth::Mismatch(pid)));
        }
        feats.shuffle(&mut rng);

        let nearest_pm = ((camera.center[0] / spec.street_length) * (n_pm - 1) as f64).round().clamp(0.0, (n_pm - 1) as f64) as usize;
        let (features, truth) = feats.into_iter().unzip();
        queries.push(SyntheticQuery {
            id: qid,
            camera,
            features,
            truth,
            segments: segments_of_placemark(spec, nearest_pm),
        });
    }

    Ok(SyntheticScene {
        spec: spec.clone(),
        points,
        segments,
        images,
        queries,
    })
}

impl SyntheticScene {
    /// Model inputs of one segment: positions and observations.
    pub fn point_inputs(&self, segment: u32) -> Vec<PointInput> {
        self.segments[segment as usize]
            .points
            .iter()
            .map(|&id| {
                let p = &self.points[id as usize];
                PointInput {
                    id,
                    position: p.position,
                    observations: p.observations.clone(),
                }
            })
            .collect()
    }

    pub fn build_models(&self, hash: &HashModel, codebook: &PqCodebook) -> Result<Vec<SubModel>> {
        self.segments
            .iter()
            .map(|s| build_submodel(&self.point_inputs(s.meta.segment_id), hash, codebook, s.meta, true))
            .collect()
    }

    pub fn image_inputs(&self) -> Vec<ImageInput> {
        self.images
            .iter()
            .map(|i| ImageInput {
                id: i.id,
                descriptors: i.descriptors.clone(),
                models: i.models.clone(),
            })
            .collect()
    }

    pub fn build_index(&self) -> Result<SegmentIndex> {
        build_index(&self.image_inputs())
    }

    pub fn image_center(&self, id: u32) -> Option<[f64; 3]> {
        self.images.get(id as usize).map(|i| i.camera.center)
    }
}

/// Exhaustive exact-Euclidean matching against a segment's uncompressed mean
/// descriptors with the same ratio gates as the cascade.
pub fn oracle_match(scene: &SyntheticScene, segment: u32, features: &[RawFeature], nu_h: f64, nu: f64, m: usize) -> Result<CorrespondenceSet> {
    let ids = &scene.segments[segment as usize].points;
    let means: Vec<Descriptor> = ids
        .iter()
        .map(|&id| mean_descriptor(&scene.points[id as usize].observations, true))
        .collect::<Result<_>>()?;
    let mut set = CorrespondenceSet::default();
    for (qi, f) in features.iter().enumerate() {
        let mut d: Vec<(f64, u32, usize)> = means
            .iter()
            .enumerate()
            .map(|(k, md)| (f.descriptor.sq_distance(md).sqrt(), ids[k], k))
            .collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        if d.len() < 2 {
            continue;
        }
        let ratio = if d[1].0 > 0.0 { d[0].0 / d[1].0 } else { 1.0 };
        if ratio >= nu {
            continue;
        }
        if ratio < nu_h {
            set.hypotheses.push(set.verification.len());
        }
        set.verification.push(VerificationEntry {
            query: qi,
            pixel: [f.pixel[0] as f64, f.pixel[1] as f64],
            candidates: d[..m.min(d.len())]
                .iter()
                .map(|&(dist, id, _)| CandidatePoint {
                    point_id: id,
                    position: scene.points[id as usize].position.map(|v| v as f64),
                    distance: dist as f32,
                })
                .collect(),
        });
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::{prioritized_match, QueryFeature, SearchParams};

    fn small(seed: u64) -> SceneSpec {
        SceneSpec {
            seed,
            segments: 2,
            points_per_segment: 300,
            queries: 6,
            ..SceneSpec::default()
        }
    }

    #[test]
    fn spec_validation() {
        assert!(SceneSpec::default().validate().is_ok());
        assert!(SceneSpec { overlap_placemarks: 10, ..SceneSpec::default() }.validate().is_err());
        assert!(SceneSpec { query_features: Some((5, 30)), ..SceneSpec::default() }.validate().is_err());
        assert_eq!(SceneSpec::default().placemarks(), 34);
    }

    #[test]
    fn camera_projection_matches_matrix() {
        let cam = Camera { center: [10.0, 0.5, 1.7], yaw: 0.3, pitch: 0.05 };
        let p = cam.matrix();
        let x = [14.0, 11.0, 5.0];
        let a = cam.observe(x).unwrap();
        let b = p.project(x).unwrap();
        assert!((a[0] - b[0]).abs() < 1e-9 && (a[1] - b[1]).abs() < 1e-9);
        let c = p.camera_center().unwrap();
        assert!((0..3).all(|i| (c[i] - cam.center[i]).abs() < 1e-9));
        // Behind the camera.
        assert!(cam.observe([10.0, -5.0, 1.7]).is_none());
    }

    #[test]
    fn scene_is_deterministic() {
        let a = gen_scene(&small(3)).unwrap();
        let b = gen_scene(&small(3)).unwrap();
        let codecs = shared_codecs(7).unwrap();
        let ma = a.build_models(&codecs.hash, &codecs.codebook).unwrap();
        let mb = b.build_models(&codecs.hash, &codecs.codebook).unwrap();
        for (x, y) in ma.iter().zip(&mb) {
            assert_eq!(x.to_bytes(), y.to_bytes());
        }
        assert_eq!(a.build_index().unwrap().to_bytes(), b.build_index().unwrap().to_bytes());
        for (x, y) in a.queries.iter().zip(&b.queries) {
            assert_eq!(crate::io::encode_features(&x.features), crate::io::encode_features(&y.features));
        }
        let c = gen_scene(&small(4)).unwrap();
        assert_ne!(crate::io::encode_features(&a.queries[0].features), crate::io::encode_features(&c.queries[0].features));
    }

    #[test]
    fn every_query_sees_enough_points_and_segments_overlap() {
        let scene = gen_scene(&SceneSpec::baseline(5)).unwrap();
        for q in &scene.queries {
            assert!(q.true_features() >= MIN_VISIBLE);
            assert!(!q.segments.is_empty());
        }
        for w in scene.segments.windows(2) {
            let shared = w[0].points.iter().filter(|p| w[1].points.binary_search(p).is_ok()).count();
            assert!(shared > 0);
        }
        for img in &scene.images {
            assert!(!img.models.is_empty());
        }
    }

    #[test]
    fn under_observed_scene_is_an_error() {
        let spec = SceneSpec { points_per_segment: 3, ..SceneSpec::default() };
        assert!(matches!(gen_scene(&spec), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn noiseless_scene_matches_exhaustively() {
        let spec = SceneSpec {
            descriptor_noise: 0.0,
            pixel_noise: 0.0,
            clutter_fraction: 0.0,
            ..small(6)
        };
        let scene = gen_scene(&spec).unwrap();
        let codecs = shared_codecs(7).unwrap();
        let models = scene.build_models(&codecs.hash, &codecs.codebook).unwrap();
        let (mut correct, mut total) = (0, 0);
        for q in &scene.queries {
            let seg = q.segments[0];
            let model = &models[seg as usize];
            let feats: Vec<_> = q
                .features
                .iter()
                .zip(&q.truth)
                .filter(|(_, t)| matches!(t, FeatureTruth::True(p) if model.row_of(*p).is_some()))
                .collect();
            let qf: Vec<QueryFeature> = feats
                .iter()
                .map(|(f, _)| QueryFeature::new([f.pixel[0] as f64, f.pixel[1] as f64], f.descriptor.clone(), &codecs.hash))
                .collect();
            let out = prioritized_match(model, &codecs.codebook, &qf, &SearchParams::exhaustive());
            for rec in &out.records {
                total += 1;
                let FeatureTruth::True(p) = feats[rec.query].1 else { unreachable!() };
                if rec.strict == Some(*p) {
                    correct += 1;
                }
            }
            total += qf.len() - out.records.len();
            // Oracle recall on uncompressed descriptors is perfect.
            let raw: Vec<RawFeature> = feats.iter().map(|(f, _)| (*f).clone()).collect();
            let oracle = oracle_match(&scene, seg, &raw, 0.8, 0.9, 5).unwrap();
            assert_eq!(oracle.n_hypotheses(), raw.len());
        }
        assert!(correct as f64 >= 0.99 * total as f64, "{correct}/{total}");
    }

    #[test]
    fn planted_queries_meet_the_planted_fraction() {
        let spec = SceneSpec { queries: 10, ..SceneSpec::repetitive(8) };
        let scene = gen_scene(&spec).unwrap();
        let mut ranked_second = 0;
        let mut planted = 0;
        for q in &scene.queries {
            planted += q.planted();
            let frac = q.planted() as f64 / q.true_features() as f64;
            assert!(frac >= 0.45 - 0.5 / q.true_features() as f64 - 1e-9, "{frac}");
            for (f, t) in q.features.iter().zip(&q.truth) {
                let FeatureTruth::Planted { point, sibling } = *t else { continue };
                let seg = q.segments.iter().copied().find(|&s| scene.segments[s as usize].points.binary_search(&point).is_ok() && scene.segments[s as usize].points.binary_search(&sibling).is_ok());
                let Some(seg) = seg else { continue };
                let oracle = oracle_match(&scene, seg, std::slice::from_ref(f), 0.8, 0.9, 5).unwrap();
                if let Some(e) = oracle.verification.first() {
                    if e.candidates.iter().skip(1).any(|c| c.point_id == point) {
                        ranked_second += 1;
                    }
                }
            }
        }
        assert!(ranked_second as f64 >= 0.8 * planted as f64, "{ranked_second}/{planted}");
    }
}
