//! Retrieval, per-model matching, pose estimation and the registration
//! decision for one query image.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::hash::HashModel;
use crate::io::RawFeature;
use crate::model::SubModel;
use crate::pq::PqCodebook;
use crate::ransac::{ransac_1m, PoseResult, RansacConfig};
use crate::retrieval::{GlobalDescriptor, SegmentIndex, DEFAULT_MAX_MODELS, DEFAULT_TOP_IMAGES};
use crate::search::{prioritized_match, CorrespondenceSet, QueryFeature, SearchParams};

/// Inliers needed for a query to count as registered.
pub const MIN_INLIERS: usize = 12;
pub const DEFAULT_CACHE_MODELS: usize = 4;
pub const HASH_FILE: &str = "hash.ccsh";
pub const CODEBOOK_FILE: &str = "codebook.ccsq";

pub fn model_file_name(id: u32) -> String {
    format!("model_{id}.ccsm")
}

/// Where sub-models come from.
pub trait ModelSource {
    fn get(&mut self, id: u32) -> Result<Arc<SubModel>>;
}

#[derive(Clone, Debug, Default)]
pub struct InMemoryModelStore {
    models: HashMap<u32, Arc<SubModel>>,
}

impl InMemoryModelStore {
    pub fn new(models: impl IntoIterator<Item = SubModel>) -> Self {
        InMemoryModelStore {
            models: models.into_iter().map(|m| (m.id(), Arc::new(m))).collect(),
        }
    }

    pub fn insert(&mut self, model: SubModel) {
        self.models.insert(model.id(), Arc::new(model));
    }
}

impl ModelSource for InMemoryModelStore {
    fn get(&mut self, id: u32) -> Result<Arc<SubModel>> {
        self.models.get(&id).cloned().ok_or(Error::ModelNotFound(id))
    }
}

/// Loads `model_<id>.ccsm` files on demand and keeps the most recently used
/// ones in memory.
#[derive(Debug)]
pub struct DirectoryModelStore {
    dir: PathBuf,
    capacity: usize,
    /// Most recently used last.
    cache: Vec<(u32, Arc<SubModel>)>,
    loads: usize,
}

impl DirectoryModelStore {
    pub fn new(dir: impl Into<PathBuf>, capacity: usize) -> Self {
        DirectoryModelStore {
            dir: dir.into(),
            capacity: capacity.max(1),
            cache: Vec::new(),
            loads: 0,
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Number of files read so far.
    pub fn loads(&self) -> usize {
        self.loads
    }

    pub fn cached_ids(&self) -> Vec<u32> {
        self.cache.iter().map(|(id, _)| *id).collect()
    }
}

impl ModelSource for DirectoryModelStore {
    fn get(&mut self, id: u32) -> Result<Arc<SubModel>> {
        if let Some(pos) = self.cache.iter().position(|(i, _)| *i == id) {
            let entry = self.cache.remove(pos);
            let model = entry.1.clone();
            self.cache.push(entry);
            return Ok(model);
        }
        let path = self.dir.join(model_file_name(id));
        if !path.exists() {
            return Err(Error::ModelNotFound(id));
        }
        let model = Arc::new(SubModel::load(&path)?);
        if model.id() != id {
            return Err(Error::format(
                "model file",
                format!("{} holds segment {}, expected {id}", path.display(), model.id()),
            ));
        }
        self.loads += 1;
        if self.cache.len() == self.capacity {
            self.cache.remove(0);
        }
        self.cache.push((id, model.clone()));
        Ok(model)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct LocalizeConfig {
    pub search: SearchParams,
    pub ransac: RansacConfig,
    /// `N_t`: reference images retrieved.
    pub top_images: usize,
    pub max_models: usize,
    pub min_inliers: usize,
    /// Image size for pixel validation.
    pub image_bounds: Option<[f64; 2]>,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        LocalizeConfig {
            search: SearchParams::default(),
            ransac: RansacConfig::default(),
            top_images: DEFAULT_TOP_IMAGES,
            max_models: DEFAULT_MAX_MODELS,
            min_inliers: MIN_INLIERS,
            image_bounds: None,
        }
    }
}

/// Seconds spent per stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct StageTimings {
    pub retrieval: f64,
    pub hashing: f64,
    pub loading: f64,
    pub matching: f64,
    pub ransac: f64,
    pub total: f64,
}

impl StageTimings {
    pub fn stage_sum(&self) -> f64 {
        self.retrieval + self.hashing + self.loading + self.matching + self.ransac
    }
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ModelMatchSummary {
    pub model: u32,
    pub strict: usize,
    pub verification: usize,
    pub processed: usize,
    /// Inliers when RANSAC ran on this model.
    pub inliers: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct LocalizationResult {
    pub registered: bool,
    pub model: Option<u32>,
    pub inliers: usize,
    pub pose: Option<PoseResult>,
    pub candidate_models: Vec<u32>,
    pub per_model: Vec<ModelMatchSummary>,
    pub timings: StageTimings,
    /// Why the query was not registered.
    pub reason: Option<String>,
    pub ransac_iterations: usize,
}

impl LocalizationResult {
    fn unregistered(reason: impl Into<String>) -> Self {
        LocalizationResult {
            registered: false,
            model: None,
            inliers: 0,
            pose: None,
            candidate_models: Vec::new(),
            per_model: Vec::new(),
            timings: StageTimings::default(),
            reason: Some(reason.into()),
            ransac_iterations: 0,
        }
    }

    pub fn camera_center(&self) -> Option<[f64; 3]> {
        self.pose.as_ref().map(|p| p.camera_center)
    }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

/// Localizes one query image.
pub fn localize<S: ModelSource + ?Sized>(
    features: &[RawFeature],
    hash: &HashModel,
    codebook: &PqCodebook,
    index: &SegmentIndex,
    store: &mut S,
    cfg: &LocalizeConfig,
) -> Result<LocalizationResult> {
    let start = Instant::now();
    cfg.search.validate()?;
    cfg.ransac.validate()?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let descriptors: Vec<_> = features.iter().map(|f| f.descriptor.clone()).collect();
    let candidates = match GlobalDescriptor::from_local(&descriptors) {
        Ok(g) => {
            let top: Vec<u32> = index.retrieve(&g, cfg.top_images).into_iter().map(|r| r.0).collect();
            index.candidate_models(&top, cfg.max_models)
        }
        Err(_) => Vec::new(),
    };
    timings.retrieval = secs(t.elapsed());
    if candidates.is_empty() {
        let mut r = LocalizationResult::unregistered("no candidate models");
        timings.total = secs(start.elapsed());
        r.timings = timings;
        return Ok(r);
    }

    let t = Instant::now();
    let queries = features
        .iter()
        .map(|f| {
            let pixel = [f.pixel[0] as f64, f.pixel[1] as f64];
            match cfg.image_bounds {
                Some(b) => QueryFeature::with_bounds(pixel, f.descriptor.clone(), hash, b),
                None => Ok(QueryFeature::new(pixel, f.descriptor.clone(), hash)),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    timings.hashing = secs(t.elapsed());

    let mut matched: Vec<(u32, CorrespondenceSet)> = Vec::new();
    let mut per_model = Vec::new();
    for &id in &candidates {
        let t = Instant::now();
        let model = store.get(id)?;
        if model.hash_model_id() != hash.id() {
            return Err(Error::CodecMismatch {
                model: id,
                which: "hash model",
                found: model.hash_model_id(),
                expected: hash.id(),
            });
        }
        if model.codebook_id() != codebook.id() {
            return Err(Error::CodecMismatch {
                model: id,
                which: "codebook",
                found: model.codebook_id(),
                expected: codebook.id(),
            });
        }
        timings.loading += secs(t.elapsed());

        let t = Instant::now();
        let outcome = prioritized_match(&model, codebook, &queries, &cfg.search);
        timings.matching += secs(t.elapsed());
        per_model.push(ModelMatchSummary {
            model: id,
            strict: outcome.set.n_hypotheses(),
            verification: outcome.set.n_queries(),
            processed: outcome.processed,
            inliers: None,
        });
        matched.push((id, outcome.set));
    }

    // Most strict matches first, then lowest id.
    let mut order: Vec<usize> = (0..matched.len()).collect();
    order.sort_by_key(|&i| (std::cmp::Reverse(matched[i].1.n_hypotheses()), matched[i].0));

    let t = Instant::now();
    let mut best: Option<(u32, PoseResult)> = None;
    let mut iterations = 0;
    let mut g = 0;
    while g < order.len() {
        let strict = matched[order[g]].1.n_hypotheses();
        let group_end = order[g..]
            .iter()
            .position(|&i| matched[i].1.n_hypotheses() != strict)
            .map_or(order.len(), |p| g + p);
        for &i in &order[g..group_end] {
            let (id, set) = &matched[i];
            let report = ransac_1m(set, &cfg.ransac)?;
            iterations += report.iterations;
            per_model[i].inliers = Some(report.inlier_count());
            if let Some(pose) = report.pose {
                // Ties keep the earlier (lower id) model.
                if best.as_ref().is_none_or(|(_, b)| pose.inlier_count() > b.inlier_count()) {
                    best = Some((*id, pose));
                }
            }
        }
        if best.as_ref().is_some_and(|(_, b)| b.inlier_count() >= cfg.min_inliers) {
            break;
        }
        g = group_end;
    }
    timings.ransac = secs(t.elapsed());
    timings.total = secs(start.elapsed());

    let inliers = best.as_ref().map_or(0, |(_, p)| p.inlier_count());
    let registered = inliers >= cfg.min_inliers;
    Ok(LocalizationResult {
        registered,
        model: best.as_ref().map(|(id, _)| *id),
        inliers,
        pose: best.map(|(_, p)| p),
        candidate_models: candidates,
        per_model,
        timings,
        reason: (!registered).then(|| format!("{inliers} inliers, need {}", cfg.min_inliers)),
        ransac_iterations: iterations,
    })
}

/// A loaded localization setup.
pub struct Localizer<S: ModelSource = DirectoryModelStore> {
    pub hash: HashModel,
    pub codebook: PqCodebook,
    pub index: SegmentIndex,
    pub store: S,
    pub config: LocalizeConfig,
}

impl Localizer<DirectoryModelStore> {
    /// Reads the index file, plus `hash.ccsh` and `codebook.ccsq` from the
    /// models directory.
    pub fn open(index: impl AsRef<Path>, models: impl AsRef<Path>, config: LocalizeConfig) -> Result<Self> {
        let dir = models.as_ref();
        Ok(Localizer {
            hash: HashModel::load(dir.join(HASH_FILE))?,
            codebook: PqCodebook::load(dir.join(CODEBOOK_FILE))?,
            index: SegmentIndex::load(index)?,
            store: DirectoryModelStore::new(dir, DEFAULT_CACHE_MODELS),
            config,
        })
    }
}

impl<S: ModelSource> Localizer<S> {
    pub fn new(hash: HashModel, codebook: PqCodebook, index: SegmentIndex, store: S, config: LocalizeConfig) -> Self {
        Localizer {
            hash,
            codebook,
            index,
            store,
            config,
        }
    }

    pub fn localize(&mut self, features: &[RawFeature]) -> Result<LocalizationResult> {
        localize(features, &self.hash, &self.codebook, &self.index, &mut self.store, &self.config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_scene, shared_codecs, SceneSpec, SyntheticScene};
    use crate::Descriptor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn small() -> (SyntheticScene, Vec<SubModel>, SegmentIndex) {
        let spec = SceneSpec {
            segments: 2,
            points_per_segment: 300,
            queries: 4,
            ..SceneSpec::default()
        };
        let codecs = shared_codecs(spec.vocabulary_seed).unwrap();
        let scene = gen_scene(&spec).unwrap();
        let models = scene.build_models(&codecs.hash, &codecs.codebook).unwrap();
        let index = scene.build_index().unwrap();
        (scene, models, index)
    }

    #[test]
    fn directory_store_evicts_least_recently_used() {
        let (_, models, _) = small();
        let dir = tempfile::tempdir().unwrap();
        for m in &models {
            m.save(dir.path().join(model_file_name(m.id()))).unwrap();
        }
        let mut store = DirectoryModelStore::new(dir.path(), 1);
        assert_eq!(store.get(0).unwrap().id(), 0);
        assert_eq!(store.get(0).unwrap().id(), 0);
        assert_eq!(store.loads(), 1);
        store.get(1).unwrap();
        assert_eq!(store.cached_ids(), vec![1]);
        store.get(0).unwrap();
        assert_eq!(store.loads(), 3);
        assert!(matches!(store.get(9), Err(Error::ModelNotFound(9))));

        // A file holding the wrong segment.
        std::fs::copy(dir.path().join(model_file_name(0)), dir.path().join(model_file_name(5))).unwrap();
        assert!(matches!(store.get(5), Err(Error::Format { .. })));
    }

    #[test]
    fn localizes_synthetic_queries() {
        let (scene, models, index) = small();
        let codecs = shared_codecs(scene.spec.vocabulary_seed).unwrap();
        let mut store = InMemoryModelStore::new(models);
        for q in &scene.queries {
            let r = localize(&q.features, &codecs.hash, &codecs.codebook, &index, &mut store, &LocalizeConfig::default()).unwrap();
            assert!(r.registered, "query {}: {:?}", q.id, r.reason);
            assert!(r.inliers >= MIN_INLIERS);
            assert!(r.candidate_models.len() <= DEFAULT_MAX_MODELS);
            let c = r.camera_center().unwrap();
            let e: f64 = (0..3).map(|k| (c[k] - q.camera.center[k]).powi(2)).sum::<f64>().sqrt();
            assert!(e < 1.0, "query {}: error {e}", q.id);
            assert!(r.timings.stage_sum() <= r.timings.total);
        }
    }

    #[test]
    fn random_descriptors_do_not_register() {
        let (scene, models, index) = small();
        let codecs = shared_codecs(scene.spec.vocabulary_seed).unwrap();
        let mut store = InMemoryModelStore::new(models);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let features: Vec<RawFeature> = (0..300)
            .map(|_| RawFeature {
                pixel: [rng.random_range(0.0..640.0), rng.random_range(0.0..480.0)],
                descriptor: Descriptor::new(std::array::from_fn(|_| rng.sample::<f32, _>(StandardNormal).abs()))
                    .unwrap()
                    .normalized()
                    .unwrap(),
            })
            .collect();
        let r = localize(&features, &codecs.hash, &codecs.codebook, &index, &mut store, &LocalizeConfig::default()).unwrap();
        assert!(!r.registered);
        assert!(r.reason.is_some());

        let r = localize(&[], &codecs.hash, &codecs.codebook, &index, &mut store, &LocalizeConfig::default()).unwrap();
        assert!(!r.registered);
        assert!(r.candidate_models.is_empty());
    }

    #[test]
    fn missing_model_and_foreign_codecs_are_errors() {
        let (scene, models, index) = small();
        let codecs = shared_codecs(scene.spec.vocabulary_seed).unwrap();
        let q = &scene.queries[0];
        let cfg = LocalizeConfig::default();

        let mut empty = InMemoryModelStore::default();
        let err = localize(&q.features, &codecs.hash, &codecs.codebook, &index, &mut empty, &cfg).unwrap_err();
        assert!(matches!(err, Error::ModelNotFound(_)));

        let other = shared_codecs(scene.spec.vocabulary_seed + 1).unwrap();
        let mut store = InMemoryModelStore::new(models);
        let err = localize(&q.features, &other.hash, &codecs.codebook, &index, &mut store, &cfg).unwrap_err();
        assert!(matches!(err, Error::CodecMismatch { which: "hash model", .. }));
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = LocalizeConfig {
            top_images: 7,
            image_bounds: Some([640.0, 480.0]),
            ..LocalizeConfig::default()
        };
        let back: LocalizeConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }
}
