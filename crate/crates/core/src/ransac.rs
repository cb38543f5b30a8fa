//! One-many RANSAC: models are sampled from the strict one-one hypothesis
//! set, screened with an SPRT pre-verification over the same set, and scored
//! on the relaxed one-many verification set where a query counts as an inlier
//! when any of its candidates reprojects within the threshold.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::pose::{dlt6, ProjectionMatrix, MIN_POINTS};
use crate::search::CorrespondenceSet;

pub const DEFAULT_FIXED_ITERATIONS: usize = 5000;
pub const DEFAULT_THRESHOLD_PX: f64 = 4.0;
pub const DEFAULT_DELTA: f64 = 0.01;
/// Change in the re-estimated `δ` that triggers a new threshold `A`.
pub const DELTA_UPDATE_GAP: f64 = 0.05;
const SPRT_MAX_ITERATIONS: usize = 100;
const SPRT_TOLERANCE: f64 = 1e-12;
const EPS_CLAMP: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RansacMode {
    /// Adaptive stopping with SPRT pre-verification.
    Fast,
    /// Exactly this many samples, each fully verified.
    Fixed(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct RansacConfig {
    pub sample_size: usize,
    pub delta: f64,
    pub threshold_px: f64,
    /// Hard cap on samples in fast mode.
    pub max_iterations: usize,
    pub seed: u64,
    /// Cost of one model estimation relative to one consistency check.
    pub t_m: f64,
    /// Models produced per sample.
    pub m_s: f64,
    /// `ε ← factor · C*/N_q` after a better model.
    pub epsilon_factor: f64,
    pub mode: RansacMode,
    /// Re-fit the best model on its inliers after sampling.
    pub refit: bool,
}

impl Default for RansacConfig {
    fn default() -> Self {
        RansacConfig {
            sample_size: MIN_POINTS,
            delta: DEFAULT_DELTA,
            threshold_px: DEFAULT_THRESHOLD_PX,
            max_iterations: 20_000,
            seed: 0,
            t_m: 200.0,
            m_s: 1.0,
            epsilon_factor: 1.0,
            mode: RansacMode::Fast,
            refit: true,
        }
    }
}

impl RansacConfig {
    pub fn fixed(iterations: usize) -> Self {
        RansacConfig {
            mode: RansacMode::Fixed(iterations),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sample_size != MIN_POINTS {
            return Err(Error::InvalidInput(format!("sample size must be {MIN_POINTS}")));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::InvalidInput("delta must lie in (0, 1)".into()));
        }
        if !(self.threshold_px > 0.0 && self.t_m > 0.0 && self.m_s > 0.0 && self.epsilon_factor > 0.0) {
            return Err(Error::InvalidInput("thresholds and costs must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be positive".into()));
        }
        Ok(())
    }
}

/// `C(δ, ε)`: information gained per observation, the Kullback-Leibler
/// divergence between Bernoulli(δ) and Bernoulli(ε).
pub fn sprt_information(delta: f64, epsilon: f64) -> f64 {
    (1.0 - delta) * ((1.0 - delta) / (1.0 - epsilon)).ln() + delta * (delta / epsilon).ln()
}

/// SPRT decision threshold `A`: the fixed point of
/// `A = t_M·C(δ,ε)/m_S + 1 + ln A`, iterated from `A₀ = t_M·C/m_S + 1`.
pub fn sprt_threshold(delta: f64, epsilon: f64, t_m: f64, m_s: f64) -> Result<f64> {
    if !(delta > 0.0 && delta < 1.0 && epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidInput(format!(
            "sprt_threshold needs 0<δ<1 and 0<ε≤1, got δ={delta} ε={epsilon}"
        )));
    }
    let eps = epsilon.min(1.0 - EPS_CLAMP);
    let k1 = t_m * sprt_information(delta, eps) / m_s;
    let mut a = k1 + 1.0;
    for _ in 0..SPRT_MAX_ITERATIONS {
        let next = k1 + 1.0 + a.ln();
        if (next - a).abs() <= SPRT_TOLERANCE * next {
            return Ok(next);
        }
        a = next;
    }
    Err(Error::NonConvergence(SPRT_MAX_ITERATIONS))
}

/// `μ = 1/(ε^s·(1 − 1/A))`, capped at `cap`.
pub fn required_samples(epsilon: f64, s: usize, a: f64, cap: usize) -> f64 {
    let mu = 1.0 / (epsilon.powi(s as i32) * (1.0 - 1.0 / a));
    if mu.is_finite() && mu > 0.0 {
        mu.min(cap as f64)
    } else {
        cap as f64
    }
}

/// One query accepted by the returned model.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Inlier {
    /// Index into `CorrespondenceSet::verification`.
    pub entry: usize,
    pub query: usize,
    pub point_id: u32,
    /// Rank of the chosen candidate within the query's list.
    pub rank: usize,
    pub error_px: f64,
}

#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct PoseResult {
    pub matrix: ProjectionMatrix,
    pub inliers: Vec<Inlier>,
    pub camera_center: [f64; 3],
}

impl PoseResult {
    pub fn inlier_count(&self) -> usize {
        self.inliers.len()
    }

    /// Inliers whose first-ranked candidate was consistent.
    pub fn first_rank_inliers(&self) -> usize {
        self.inliers.iter().filter(|i| i.rank == 0).count()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RansacReport {
    pub pose: Option<PoseResult>,
    pub iterations: usize,
    pub rejected: usize,
    pub degenerate: usize,
    /// Models that went through full verification.
    pub verified: usize,
    /// `C*` after each iteration.
    pub best_cost_trace: Vec<usize>,
    pub final_delta: f64,
    pub final_epsilon: f64,
}

impl RansacReport {
    pub fn inlier_count(&self) -> usize {
        self.pose.as_ref().map_or(0, PoseResult::inlier_count)
    }
}

/// `ρ_M` over the whole verification set: for each entry, the first
/// (lowest-distance) candidate within `threshold` pixels.
pub fn verify(theta: &ProjectionMatrix, set: &CorrespondenceSet, threshold: f64) -> Vec<Inlier> {
    set.verification
        .iter()
        .enumerate()
        .filter_map(|(entry, e)| {
            e.candidates.iter().enumerate().find_map(|(rank, c)| {
                let err = theta.reproj_error(e.pixel, c.position);
                (err <= threshold).then_some(Inlier {
                    entry,
                    query: e.query,
                    point_id: c.point_id,
                    rank,
                    error_px: err,
                })
            })
        })
        .collect()
}

struct Sprt {
    delta: f64,
    epsilon: f64,
    a: f64,
    rejected: usize,
}

impl Sprt {
    fn threshold(delta: f64, epsilon: f64, cfg: &RansacConfig) -> f64 {
        sprt_threshold(delta, epsilon, cfg.t_m, cfg.m_s).unwrap_or_else(|e| {
            log::debug!("SPRT threshold unavailable ({e}); pre-verification disabled");
            f64::INFINITY
        })
    }

    fn mu(&self, cfg: &RansacConfig) -> f64 {
        required_samples(self.epsilon, cfg.sample_size, self.a, cfg.max_iterations)
    }
}

fn clamp_epsilon(e: f64) -> f64 {
    e.clamp(EPS_CLAMP, 1.0 - EPS_CLAMP)
}

/// Estimates a pose from a correspondence set.
pub fn ransac_1m(set: &CorrespondenceSet, cfg: &RansacConfig) -> Result<RansacReport> {
    cfg.validate()?;
    let s = cfg.sample_size;
    let n_h = set.n_hypotheses();
    let n_q = set.n_queries();
    let mut report = RansacReport {
        final_delta: cfg.delta,
        ..RansacReport::default()
    };
    if n_h < s {
        return Ok(report);
    }
    let hyp: Vec<([f64; 2], [f64; 3])> = set.hypothesis_pairs().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let epsilon = clamp_epsilon(s as f64 / n_h as f64);
    let mut sprt = Sprt {
        delta: cfg.delta,
        epsilon,
        a: Sprt::threshold(cfg.delta, epsilon, cfg),
        rejected: 0,
    };
    let (limit, use_sprt) = match cfg.mode {
        RansacMode::Fast => (cfg.max_iterations, true),
        RansacMode::Fixed(n) => (n, false),
    };
    let mut mu = sprt.mu(cfg);
    let mut best: Option<(ProjectionMatrix, Vec<Inlier>)> = None;
    let mut best_cost = 0usize;
    let mut order: Vec<usize> = (0..n_h).collect();

    while report.iterations < limit && (!use_sprt || report.iterations as f64 <= mu) {
        report.iterations += 1;
        let sample: Vec<([f64; 2], [f64; 3])> = index::sample(&mut rng, n_h, s).into_iter().map(|i| hyp[i]).collect();
        let theta = match dlt6(&sample) {
            Ok(t) => t,
            Err(_) => {
                report.degenerate += 1;
                report.best_cost_trace.push(best_cost);
                continue;
            }
        };

        if use_sprt {
            order.shuffle(&mut rng);
            let ratio_ok = sprt.delta / sprt.epsilon;
            let ratio_bad = (1.0 - sprt.delta) / (1.0 - sprt.epsilon);
            let mut lambda = 1.0;
            let mut consistent = 0usize;
            let mut tested = 0usize;
            let mut bad = false;
            for &k in &order {
                tested += 1;
                let (q, x) = hyp[k];
                if theta.reproj_error(q, x) <= cfg.threshold_px {
                    consistent += 1;
                    lambda *= ratio_ok;
                } else {
                    lambda *= ratio_bad;
                }
                if lambda > sprt.a {
                    bad = true;
                    break;
                }
            }
            if bad {
                sprt.rejected += 1;
                let nr = sprt.rejected as f64;
                let observed = consistent as f64 / tested as f64;
                let estimate = (sprt.delta * (nr - 1.0) + observed) / nr;
                if (sprt.delta - estimate).abs() > DELTA_UPDATE_GAP {
                    sprt.delta = estimate.clamp(EPS_CLAMP, 1.0 - EPS_CLAMP);
                    sprt.a = Sprt::threshold(sprt.delta, sprt.epsilon, cfg);
                    // μ is only refreshed after a better model, as in the
                    // reference procedure.
                }
                report.best_cost_trace.push(best_cost);
                continue;
            }
        }

        report.verified += 1;
        let inliers = verify(&theta, set, cfg.threshold_px);
        let cost = inliers.len();
        if cost >= best_cost && theta.camera_center().is_ok() {
            best_cost = cost;
            best = Some((theta, inliers));
            sprt.epsilon = clamp_epsilon(cfg.epsilon_factor * cost as f64 / n_q as f64);
            sprt.a = Sprt::threshold(sprt.delta, sprt.epsilon, cfg);
            mu = sprt.mu(cfg);
        }
        report.best_cost_trace.push(best_cost);
    }
    report.rejected = sprt.rejected;
    report.final_delta = sprt.delta;
    report.final_epsilon = sprt.epsilon;

    let Some((mut theta, mut inliers)) = best else {
        return Ok(report);
    };
    if cfg.refit {
        (theta, inliers) = refit(set, theta, inliers, cfg.threshold_px);
    }
    let camera_center = theta.camera_center()?;
    report.pose = Some(PoseResult {
        matrix: theta,
        inliers,
        camera_center,
    });
    Ok(report)
}

/// Least-squares re-estimation on the inlier correspondences, repeated while
/// the inlier count does not drop.
fn refit(set: &CorrespondenceSet, mut theta: ProjectionMatrix, mut inliers: Vec<Inlier>, threshold: f64) -> (ProjectionMatrix, Vec<Inlier>) {
    for _ in 0..3 {
        if inliers.len() < MIN_POINTS {
            break;
        }
        let pairs: Vec<([f64; 2], [f64; 3])> = inliers
            .iter()
            .map(|i| {
                let e = &set.verification[i.entry];
                (e.pixel, e.candidates[i.rank].position)
            })
            .collect();
        let Ok(next) = dlt6(&pairs) else { break };
        if next.camera_center().is_err() {
            break;
        }
        let next_inliers = verify(&next, set, threshold);
        if next_inliers.len() < inliers.len() {
            break;
        }
        let unchanged = next_inliers == inliers;
        theta = next;
        inliers = next_inliers;
        if unchanged {
            break;
        }
    }
    (theta, inliers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::{CandidatePoint, VerificationEntry};
    use nalgebra::{Matrix3, Rotation3, Vector3};
    use proptest::prelude::*;
    use rand::Rng;
    use std::collections::BTreeSet;

    fn camera() -> (ProjectionMatrix, [f64; 3]) {
        let k = Matrix3::new(320.0, 0.0, 320.0, 0.0, 320.0, 240.0, 0.0, 0.0, 1.0);
        let r = Rotation3::from_euler_angles(0.05, -0.1, 0.3).into_inner();
        let c = [1.0, -2.0, 0.5];
        (ProjectionMatrix::from_camera(&k, &r, c).unwrap(), c)
    }

    fn point_in_view(rng: &mut ChaCha8Rng, cam: &ProjectionMatrix, c: [f64; 3]) -> ([f64; 2], [f64; 3]) {
        let r = Rotation3::from_euler_angles(0.05, -0.1, 0.3).into_inner();
        let p = Vector3::new(rng.random_range(-6.0..6.0), rng.random_range(-4.0..4.0), rng.random_range(8.0..25.0));
        let w = r.transpose() * p + Vector3::from(c);
        let x = [w.x, w.y, w.z];
        (cam.project(x).unwrap(), x)
    }

    fn cand(id: u32, x: [f64; 3]) -> CandidatePoint {
        CandidatePoint {
            point_id: id,
            position: x,
            distance: id as f32,
        }
    }

    /// `n_q` queries; the first `n_h` are hypotheses. A fraction of
    /// hypotheses are outliers, and `rank2` verification entries carry the
    /// true point at rank 1 behind a wrong one.
    fn scene(seed: u64, n_q: usize, n_h: usize, outlier_frac: f64, rank2: usize) -> (CorrespondenceSet, [f64; 3]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (cam, c) = camera();
        let mut set = CorrespondenceSet::default();
        for i in 0..n_q {
            let (q, x) = point_in_view(&mut rng, &cam, c);
            let wrong = [x[0] + rng.random_range(3.0..9.0), x[1] - rng.random_range(3.0..9.0), x[2] + 2.0];
            let candidates = if i < n_h {
                if rng.random_bool(outlier_frac) {
                    vec![cand(2 * i as u32, wrong)]
                } else {
                    vec![cand(2 * i as u32, x), cand(2 * i as u32 + 1, wrong)]
                }
            } else if i < n_h + rank2 {
                vec![cand(2 * i as u32 + 1, wrong), cand(2 * i as u32, x)]
            } else {
                vec![cand(2 * i as u32 + 1, wrong)]
            };
            if i < n_h {
                set.hypotheses.push(i);
            }
            set.verification.push(VerificationEntry {
                query: i,
                pixel: q,
                candidates,
            });
        }
        (set, c)
    }

    #[test]
    fn sprt_threshold_regression_and_fixed_point() {
        let a = sprt_threshold(0.01, 0.5, 200.0, 1.0).unwrap();
        // Independent oracle: bisection on f(A) = A - K1 - 1 - ln A over A > 1.
        let k1 = 200.0 * sprt_information(0.01, 0.5);
        let (mut lo, mut hi) = (1.0 + 1e-9, 1e6f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid - k1 - 1.0 - mid.ln() > 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert!((a - lo).abs() <= 1e-9 * a, "{a} vs {lo}");
        assert!((a - 133.0).abs() < 1.0, "{a}");
        assert!((a - (k1 + 1.0 + a.ln())).abs() < 1e-9);
    }

    #[test]
    fn sprt_threshold_shape() {
        for delta in [0.001f64, 0.01, 0.05, 0.2] {
            for eps in [0.002, 0.02, 0.1, 0.3, 0.5, 0.9, 1.0] {
                if (eps - delta).abs() < 1e-3 {
                    continue;
                }
                let a = sprt_threshold(delta, eps, 200.0, 1.0).unwrap();
                assert!(a > 1.0);
                let doubled = sprt_threshold(delta, eps, 400.0, 1.0).unwrap();
                assert!(doubled > a);
            }
        }
        // A grows with ε above δ and shrinks with ε below δ: it is driven by
        // the divergence between the two Bernoulli rates.
        let above: Vec<f64> = [0.05, 0.1, 0.3, 0.6, 0.9].iter().map(|&e| sprt_threshold(0.01, e, 200.0, 1.0).unwrap()).collect();
        assert!(above.windows(2).all(|w| w[0] < w[1]), "{above:?}");
        let below: Vec<f64> = [0.001, 0.003, 0.006].iter().map(|&e| sprt_threshold(0.01, e, 200.0, 1.0).unwrap()).collect();
        assert!(below.windows(2).all(|w| w[0] > w[1]), "{below:?}");
        assert!(sprt_threshold(0.0, 0.5, 200.0, 1.0).is_err());
        assert!(sprt_threshold(0.01, 0.0, 200.0, 1.0).is_err());
    }

    #[test]
    fn required_samples_values() {
        assert_eq!(required_samples(0.5, 6, 2.0, 1_000_000), 128.0);
        assert_eq!(required_samples(1.0, 6, f64::INFINITY, 1_000), 1.0);
        assert_eq!(required_samples(0.0, 6, 10.0, 777), 777.0);
        assert_eq!(required_samples(0.01, 6, 10.0, 5_000), 5_000.0);
        let mus: Vec<f64> = [0.2, 0.4, 0.6, 0.8, 1.0].iter().map(|&e| required_samples(e, 6, 50.0, usize::MAX)).collect();
        assert!(mus.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn too_few_hypotheses_is_unregistered() {
        let (set, _) = scene(1, 20, 5, 0.0, 0);
        let r = ransac_1m(&set, &RansacConfig::default()).unwrap();
        assert!(r.pose.is_none());
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn all_inliers_terminates_quickly() {
        let (set, c) = scene(2, 60, 60, 0.0, 0);
        let cfg = RansacConfig { refit: false, ..RansacConfig::default() };
        let r = ransac_1m(&set, &cfg).unwrap();
        let pose = r.pose.unwrap();
        assert_eq!(pose.inlier_count(), set.n_queries());
        assert!(r.iterations <= 3, "{}", r.iterations);
        for i in 0..3 {
            assert!((pose.camera_center[i] - c[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn degenerate_hypotheses_give_no_pose() {
        let (cam, _) = camera();
        let mut set = CorrespondenceSet::default();
        for i in 0..20 {
            let x = [1.0 + i as f64 * 0.3, 2.0, 15.0 + i as f64 * 0.1];
            let Ok(q) = cam.project(x) else { continue };
            set.hypotheses.push(set.verification.len());
            set.verification.push(VerificationEntry {
                query: i,
                pixel: q,
                candidates: vec![cand(i as u32, x)],
            });
        }
        let r = ransac_1m(&set, &RansacConfig::fixed(50)).unwrap();
        assert!(r.pose.is_none());
        assert_eq!(r.degenerate, 50);
    }

    #[test]
    fn one_many_verification_counts_lower_ranks() {
        let (set, _) = scene(3, 200, 100, 0.2, 60);
        let r = ransac_1m(&set, &RansacConfig::default()).unwrap();
        let pose = r.pose.unwrap();
        let one_one = ransac_1m(&set.truncated(1), &RansacConfig::default()).unwrap();
        assert!(pose.inlier_count() >= one_one.inlier_count() + 55);
        assert!(pose.inliers.iter().filter(|i| i.rank == 1).count() >= 55);
    }

    #[test]
    fn fast_and_fixed_agree_with_outliers() {
        let (set, c) = scene(4, 300, 200, 0.5, 0);
        let fast = ransac_1m(&set, &RansacConfig::default()).unwrap();
        let fixed = ransac_1m(&set, &RansacConfig::fixed(DEFAULT_FIXED_ITERATIONS)).unwrap();
        let (f, x) = (fast.pose.unwrap(), fixed.pose.unwrap());
        for i in 0..3 {
            assert!((f.camera_center[i] - c[i]).abs() < 0.05);
            assert!((x.camera_center[i] - c[i]).abs() < 0.05);
        }
        assert!(fast.iterations < fixed.iterations / 4, "{} iterations", fast.iterations);
        assert!(fast.rejected > 0);
    }

    /// Conventional RANSAC over one-one pairs with the same sample stream.
    fn conventional(set: &CorrespondenceSet, iterations: usize, seed: u64) -> BTreeSet<usize> {
        let hyp: Vec<_> = set.hypothesis_pairs().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut best: Option<BTreeSet<usize>> = None;
        for _ in 0..iterations {
            let sample: Vec<_> = index::sample(&mut rng, hyp.len(), 6).into_iter().map(|i| hyp[i]).collect();
            let Ok(theta) = dlt6(&sample) else { continue };
            let inl: BTreeSet<usize> = set
                .verification
                .iter()
                .enumerate()
                .filter(|(_, e)| {
                    let p = theta.project(e.candidates[0].position);
                    p.is_ok_and(|p| ((p[0] - e.pixel[0]).powi(2) + (p[1] - e.pixel[1]).powi(2)).sqrt() <= 4.0)
                })
                .map(|(i, _)| i)
                .collect();
            if best.as_ref().is_none_or(|b| inl.len() >= b.len()) && theta.camera_center().is_ok() {
                best = Some(inl);
            }
        }
        best.unwrap_or_default()
    }

    #[test]
    fn truncated_matches_conventional_oracle() {
        for seed in 0..5 {
            let (set, _) = scene(10 + seed, 120, 80, 0.4, 30);
            let one = set.truncated(1);
            let cfg = RansacConfig {
                refit: false,
                seed,
                ..RansacConfig::fixed(300)
            };
            let r = ransac_1m(&one, &cfg).unwrap();
            let got: BTreeSet<usize> = r.pose.unwrap().inliers.iter().map(|i| i.entry).collect();
            assert_eq!(got, conventional(&one, 300, seed));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn ransac_invariants(seed in any::<u64>(), outliers in 0.0f64..0.7, rank2 in 0usize..40, fast in any::<bool>()) {
            let (set, _) = scene(seed, 150, 90, outliers, rank2);
            let cfg = RansacConfig {
                seed,
                mode: if fast { RansacMode::Fast } else { RansacMode::Fixed(400) },
                ..RansacConfig::default()
            };
            let r = ransac_1m(&set, &cfg).unwrap();
            prop_assert!(r.best_cost_trace.windows(2).all(|w| w[0] <= w[1]));
            prop_assert_eq!(&r, &ransac_1m(&set, &cfg).unwrap());
            if let Some(pose) = &r.pose {
                let h = pose.matrix.apply(pose.camera_center);
                prop_assert!(h.norm() < 1e-6);
                for inl in &pose.inliers {
                    let e = &set.verification[inl.entry];
                    prop_assert!(pose.matrix.reproj_error(e.pixel, e.candidates[inl.rank].position) <= 4.0);
                    // Lowest-distance consistent candidate.
                    for earlier in &e.candidates[..inl.rank] {
                        prop_assert!(pose.matrix.reproj_error(e.pixel, earlier.position) > 4.0);
                    }
                }
                // Hypothesis inliers are verification inliers.
                let entries: BTreeSet<usize> = pose.inliers.iter().map(|i| i.entry).collect();
                for &h in &set.hypotheses {
                    let e = &set.verification[h];
                    if pose.matrix.reproj_error(e.pixel, e.candidates[0].position) <= 4.0 {
                        prop_assert!(entries.contains(&h));
                    }
                }
            }
        }
    }
}
