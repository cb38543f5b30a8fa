//! End-to-end runs over synthetic scenes and their summary metrics.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::Result;
use crate::pipeline::{localize, InMemoryModelStore, LocalizeConfig, StageTimings};
use crate::retrieval::{GlobalDescriptor, SegmentIndex, DEFAULT_TOP_IMAGES};
use crate::synth::{gen_scene, shared_codecs, Codecs, SceneSpec, SyntheticScene};

/// Scene plus localization settings, as read by `bench --spec`.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct BenchSpec {
    pub scene: SceneSpec,
    pub localize: LocalizeConfig,
}

/// A generated scene with its models and index, ready to localize against.
pub struct BenchFixture {
    pub scene: SyntheticScene,
    pub codecs: Arc<Codecs>,
    pub index: SegmentIndex,
    pub store: InMemoryModelStore,
}

impl BenchFixture {
    pub fn new(spec: &SceneSpec) -> Result<Self> {
        let codecs = shared_codecs(spec.vocabulary_seed)?;
        Self::with_codecs(spec, codecs)
    }

    pub fn with_codecs(spec: &SceneSpec, codecs: Arc<Codecs>) -> Result<Self> {
        let scene = gen_scene(spec)?;
        let models = scene.build_models(&codecs.hash, &codecs.codebook)?;
        let index = scene.build_index()?;
        Ok(BenchFixture {
            scene,
            codecs,
            index,
            store: InMemoryModelStore::new(models),
        })
    }

    /// Localizes every query in parallel. Results are in query order.
    pub fn run(&self, cfg: &LocalizeConfig) -> Result<BenchReport> {
        let outcomes = (0..self.scene.queries.len())
            .into_par_iter()
            .map(|i| self.run_query(i, &mut self.store.clone(), cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(BenchReport::from_outcomes(outcomes))
    }

    /// Localizes every query on the calling thread, for timing comparisons.
    pub fn run_serial(&self, cfg: &LocalizeConfig) -> Result<BenchReport> {
        let mut store = self.store.clone();
        let outcomes = (0..self.scene.queries.len())
            .map(|i| self.run_query(i, &mut store, cfg))
            .collect::<Result<Vec<_>>>()?;
        Ok(BenchReport::from_outcomes(outcomes))
    }

    fn run_query(&self, i: usize, store: &mut InMemoryModelStore, cfg: &LocalizeConfig) -> Result<QueryOutcome> {
        let q = &self.scene.queries[i];
        let r = localize(&q.features, &self.codecs.hash, &self.codecs.codebook, &self.index, store, cfg)?;
        let truth = q.camera.center;
        let error_m = r.camera_center().filter(|_| r.registered).map(|c| distance(c, truth));
        let (rank0, lower) = r.pose.as_ref().map_or((0, 0), |p| {
            let r0 = p.first_rank_inliers();
            (r0, p.inlier_count() - r0)
        });
        let chosen = r.model.and_then(|m| r.per_model.iter().find(|s| s.model == m));
        Ok(QueryOutcome {
            query: q.id,
            registered: r.registered,
            inliers: r.inliers,
            first_rank_inliers: rank0,
            lower_rank_inliers: lower,
            strict: chosen.map_or(0, |s| s.strict),
            verification: chosen.map_or(0, |s| s.verification),
            model: r.model,
            model_covers_camera: r.model.is_some_and(|m| q.segments.contains(&m)),
            error_m,
            camera_center: r.camera_center().filter(|_| r.registered),
            retrieval_baseline_error_m: self.retrieval_baseline(i),
            planted: q.planted(),
            true_features: q.true_features(),
            timings: r.timings,
        })
    }

    /// Mean camera center of the top retrieved reference images.
    fn retrieval_baseline(&self, query: usize) -> Option<f64> {
        let q = &self.scene.queries[query];
        let descriptors: Vec<_> = q.features.iter().map(|f| f.descriptor.clone()).collect();
        let g = GlobalDescriptor::from_local(&descriptors).ok()?;
        let top = self.index.retrieve(&g, DEFAULT_TOP_IMAGES);
        let mut mean = [0.0; 3];
        for (id, _) in &top {
            let c = self.scene.image_center(*id)?;
            for k in 0..3 {
                mean[k] += c[k] / top.len() as f64;
            }
        }
        Some(distance(mean, q.camera.center))
    }
}

/// Generates the scene and runs every query.
pub fn run_bench(spec: &BenchSpec) -> Result<BenchReport> {
    BenchFixture::new(&spec.scene)?.run(&spec.localize)
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct QueryOutcome {
    pub query: u32,
    pub registered: bool,
    pub inliers: usize,
    pub first_rank_inliers: usize,
    pub lower_rank_inliers: usize,
    pub strict: usize,
    pub verification: usize,
    pub model: Option<u32>,
    pub model_covers_camera: bool,
    /// Camera-center error in meters, registered queries only.
    pub error_m: Option<f64>,
    pub camera_center: Option<[f64; 3]>,
    pub retrieval_baseline_error_m: Option<f64>,
    pub planted: usize,
    pub true_features: usize,
    pub timings: StageTimings,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct ErrorStats {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

impl ErrorStats {
    fn from_samples(mut v: Vec<f64>) -> Option<Self> {
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        Some(ErrorStats {
            median: quantile(&v, 0.5),
            q1: quantile(&v, 0.25),
            q3: quantile(&v, 0.75),
        })
    }
}

/// Linear interpolation between order statistics of sorted `v`.
pub fn quantile(v: &[f64], p: f64) -> f64 {
    let pos = p * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct BenchReport {
    pub queries: usize,
    pub registered: usize,
    pub registration_rate: f64,
    pub error: Option<ErrorStats>,
    pub retrieval_baseline_error: Option<ErrorStats>,
    /// `(error_m, fraction of all queries at or below it)`.
    pub ced: Vec<(f64, f64)>,
    pub mean_timings: StageTimings,
    pub total_inliers: usize,
    pub first_rank_inliers: usize,
    pub lower_rank_inliers: usize,
    pub per_query: Vec<QueryOutcome>,
}

impl BenchReport {
    pub fn from_outcomes(per_query: Vec<QueryOutcome>) -> Self {
        let n = per_query.len();
        let registered = per_query.iter().filter(|o| o.registered).count();
        let errors: Vec<f64> = per_query.iter().filter_map(|o| o.error_m).collect();
        let mut sorted = errors.clone();
        sorted.sort_by(f64::total_cmp);
        let ced = sorted.iter().enumerate().map(|(i, &e)| (e, (i + 1) as f64 / n as f64)).collect();
        let mut mean = StageTimings::default();
        for o in &per_query {
            let t = &o.timings;
            mean.retrieval += t.retrieval / n as f64;
            mean.hashing += t.hashing / n as f64;
            mean.loading += t.loading / n as f64;
            mean.matching += t.matching / n as f64;
            mean.ransac += t.ransac / n as f64;
            mean.total += t.total / n as f64;
        }
        BenchReport {
            queries: n,
            registered,
            registration_rate: if n == 0 { 0.0 } else { registered as f64 / n as f64 },
            error: ErrorStats::from_samples(errors),
            retrieval_baseline_error: ErrorStats::from_samples(per_query.iter().filter_map(|o| o.retrieval_baseline_error_m).collect()),
            ced,
            mean_timings: mean,
            total_inliers: per_query.iter().map(|o| o.inliers).sum(),
            first_rank_inliers: per_query.iter().map(|o| o.first_rank_inliers).sum(),
            lower_rank_inliers: per_query.iter().map(|o| o.lower_rank_inliers).sum(),
            per_query,
        }
    }

    pub fn median_error(&self) -> Option<f64> {
        self.error.as_ref().map(|e| e.median)
    }

    /// Summed matching time over all queries, in seconds.
    pub fn matching_seconds(&self) -> f64 {
        self.per_query.iter().map(|o| o.timings.matching).sum()
    }

    pub fn ransac_seconds(&self) -> f64 {
        self.per_query.iter().map(|o| o.timings.ransac).sum()
    }

    pub fn ced_csv(&self) -> String {
        let mut s = String::from("error_m,fraction\n");
        for (e, f) in &self.ced {
            writeln!(s, "{e},{f}").expect("write to string");
        }
        s
    }

    pub fn timings_csv(&self) -> String {
        let mut s = String::from("query,retrieval,hashing,loading,matching,ransac,total\n");
        for o in &self.per_query {
            let t = &o.timings;
            writeln!(s, "{},{},{},{},{},{},{}", o.query, t.retrieval, t.hashing, t.loading, t.matching, t.ransac, t.total)
                .expect("write to string");
        }
        s
    }

    /// Writes `report.json`, `ced.csv` and `timings.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("report.json"), serde_json::to_string_pretty(self)?)?;
        fs::write(dir.join("ced.csv"), self.ced_csv())?;
        fs::write(dir.join("timings.csv"), self.timings_csv())?;
        Ok(())
    }
}
