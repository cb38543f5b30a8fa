//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

use std::sync::Arc;
use std::time::Instant;

use casloc::bench::BenchFixture;
use casloc::hash::{hamming, BinaryCode, CODE_BITS};
use casloc::model::{PointRecord, SegmentMeta, SubModel, BUCKETS};
use casloc::pipeline::LocalizeConfig;
use casloc::pose::{dlt6, ProjectionMatrix};
use casloc::pq::{adc_distance, PqCode, SUBVECTORS};
use casloc::ransac::RansacConfig;
use casloc::search::{coarse_lookup, precise, refine, QueryFeature, SearchParams};
use casloc::synth::{shared_codecs, train_codecs, SceneSpec, Vocabulary};
use casloc::{build_submodel, Descriptor, Error, PointInput, DIM};
use nalgebra::{Matrix3, Rotation3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn random_descriptor(rng: &mut ChaCha8Rng) -> Descriptor {
    let v: [f32; DIM] = std::array::from_fn(|_| rng.sample::<f32, _>(StandardNormal).abs());
    Descriptor::new(v).unwrap().normalized().unwrap()
}

fn random_record(id: u32, code: BinaryCode, rng: &mut ChaCha8Rng) -> PointRecord {
    PointRecord {
        id,
        position: [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(0.0..10.0)],
        code,
        pq: PqCode(std::array::from_fn(|_| rng.random())),
    }
}

fn random_code_model(codes: &[BinaryCode], rng: &mut ChaCha8Rng) -> SubModel {
    let records = codes.iter().enumerate().map(|(i, &c)| random_record(i as u32, c, rng)).collect();
    SubModel::from_records(records, SegmentMeta::default(), 1, 1).unwrap()
}

fn pigeonhole_recall() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 10_000;
    let originals: Vec<BinaryCode> = (0..n).map(|_| BinaryCode(rng.random())).collect();
    let copies: Vec<BinaryCode> = originals
        .iter()
        .map(|&c| {
            let flips = rng.random_range(0..=7);
            rand::seq::index::sample(&mut rng, CODE_BITS, flips).into_iter().fold(c, |c, b| c.with_bit_flipped(b))
        })
        .collect();
    let model = random_code_model(&copies, &mut rng);
    let found = originals
        .iter()
        .enumerate()
        .filter(|&(i, &c)| coarse_lookup(&model, c).binary_search(&(i as u32)).is_ok())
        .count();
    let secs = start.elapsed().as_secs_f64();
    outcome(found == n && secs < 5.0, format!("{found}/{n} copies retrieved in {secs:.2}s (limit 5s)"))
}

fn naive_refine(model: &SubModel, code: BinaryCode, limit: usize) -> Vec<(u32, u32)> {
    let mut all: Vec<(u32, u32)> = (0..model.len() as u32)
        .filter(|&r| (0..8).any(|k| model.code(r).subcode(k) == code.subcode(k)))
        .map(|r| (hamming(code, model.code(r)), r))
        .collect();
    all.sort();
    all.truncate(limit);
    all
}

fn cascade_matches_oracle() -> Outcome {
    let start = Instant::now();
    let codecs = shared_codecs(7).unwrap();
    let vocab = Vocabulary::new(7);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let noise = Normal::new(0.0, 0.03 / (DIM as f64).sqrt()).unwrap();
    let n = 100_000;
    let bases: Vec<[f32; DIM]> = (0..n).map(|_| vocab.sample(&mut rng)).collect();
    let points: Vec<PointInput> = bases
        .iter()
        .enumerate()
        .map(|(i, b)| PointInput {
            id: i as u32,
            position: [0.0; 3],
            observations: vec![Descriptor::new(*b).unwrap()],
        })
        .collect();
    let model = build_submodel(&points, &codecs.hash, &codecs.codebook, SegmentMeta::default(), true).unwrap();
    let params = SearchParams::default();
    let mut mismatches = 0;
    let mut total_coarse = 0;
    for _ in 0..1_000 {
        let b = &bases[rng.random_range(0..n)];
        let v: [f32; DIM] = std::array::from_fn(|k| b[k] + noise.sample(&mut rng) as f32);
        let q = QueryFeature::new([0.0; 2], Descriptor::new(v).unwrap().normalized().unwrap(), &codecs.hash);
        let coarse = coarse_lookup(&model, q.code);
        total_coarse += coarse.len();
        let refined = refine(&model, q.code, &coarse, params.refined_len);
        let oracle = naive_refine(&model, q.code, params.refined_len);
        let got: Vec<(u32, u32)> = refined.iter().map(|c| (c.hamming, c.row)).collect();
        if got != oracle {
            mismatches += 1;
            continue;
        }
        let rec = precise(&model, &codecs.codebook, 0, &q, &refined, &params);
        let table = codecs.codebook.adc_table(&q.descriptor);
        let mut naive: Vec<(f32, u32)> = oracle
            .iter()
            .map(|&(_, r)| {
                let code = model.pq_code(r);
                ((0..SUBVECTORS).map(|s| table.get(s, code.0[s] as usize)).sum(), r)
            })
            .collect();
        naive.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let rows: Vec<u32> = rec.ranked.iter().map(|c| c.row).collect();
        let naive_rows: Vec<u32> = naive.iter().map(|x| x.1).collect();
        let strict = naive.len() >= 2 && naive[0].0.sqrt() / naive[1].0.sqrt() < params.nu_h;
        if rows != naive_rows || rec.strict.is_some() != strict {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < 60.0,
        format!(
            "{mismatches}/1000 queries differ from the naive oracles, mean coarse list {:.0}, {secs:.1}s (limit 60s)",
            total_coarse as f64 / 1000.0
        ),
    )
}

fn adc_fidelity() -> Outcome {
    let codecs = shared_codecs(7).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0f64;
    for _ in 0..10_000 {
        let q = random_descriptor(&mut rng);
        let code = PqCode(std::array::from_fn(|_| rng.random()));
        let r = codecs.codebook.reconstruct(&code);
        let exact: f64 = q.as_slice().iter().zip(r.as_slice()).map(|(a, b)| (*a as f64 - *b as f64).powi(2)).sum();
        let adc = adc_distance(&codecs.codebook.adc_table(&q), &code) as f64;
        worst = worst.max((adc - exact).abs() / exact.max(f64::MIN_POSITIVE));
    }
    outcome(worst <= 1e-5, format!("worst relative error {worst:.2e} over 10000 pairs (limit 1e-5)"))
}

fn itq_health() -> Outcome {
    let codecs = shared_codecs(7).unwrap();
    let meta = codecs.hash.training_meta().expect("trained model keeps its diagnostics");
    let ortho = meta.orthogonality_error();
    let rises = meta.losses.windows(2).filter(|w| w[1] > w[0]).count();
    outcome(
        ortho <= 1e-6 && rises == 0,
        format!("orthogonality error {ortho:.2e}, {rises} loss increases over {} iterations", meta.iterations),
    )
}

fn dlt_exactness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let k = Matrix3::new(320.0, 0.0, 320.0, 0.0, 320.0, 240.0, 0.0, 0.0, 1.0);
    let mut worst_px = 0f64;
    let mut failures = 0;
    let mut scale_exact = true;
    for _ in 0..1_000 {
        let r = Rotation3::from_euler_angles(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-3.1..3.1))
            .into_inner();
        let c = [rng.random_range(-50.0..50.0), rng.random_range(-50.0..50.0), rng.random_range(-5.0..5.0)];
        let p = ProjectionMatrix::from_camera(&k, &r, c).unwrap();
        let pairs: Vec<([f64; 2], [f64; 3])> = (0..6)
            .map(|_| {
                let cam = Vector3::new(rng.random_range(-4.0..4.0), rng.random_range(-3.0..3.0), rng.random_range(5.0..30.0));
                let w = r.transpose() * cam + Vector3::from(c);
                let x = [w.x, w.y, w.z];
                (p.project(x).unwrap(), x)
            })
            .collect();
        match dlt6(&pairs) {
            Ok(est) => {
                for (q, x) in &pairs {
                    worst_px = worst_px.max(est.reproj_error(*q, *x));
                }
                let base = est.camera_center().unwrap();
                for s in [2.0, 0.25, -8.0, 1024.0] {
                    let scaled = ProjectionMatrix::from_raw(est.matrix() * s).camera_center().unwrap();
                    scale_exact &= scaled == base;
                }
            }
            Err(_) => failures += 1,
        }
    }
    let line: Vec<([f64; 2], [f64; 3])> =
        (0..6).map(|i| ([i as f64, 2.0 * i as f64], [i as f64, 1.0 + i as f64, 20.0 + 0.5 * i as f64])).collect();
    let collinear = matches!(dlt6(&line), Err(Error::Degenerate(_)));
    outcome(
        worst_px <= 1e-6 && failures == 0 && collinear && scale_exact,
        format!(
            "worst reprojection {worst_px:.2e}px over 1000 solves, {failures} failures, collinear rejected: {collinear}, scaled centers identical: {scale_exact}"
        ),
    )
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let spec = SceneSpec::baseline(1);
    let codecs = train_codecs(spec.vocabulary_seed, spec.descriptor_noise).unwrap();
    let fixture = BenchFixture::with_codecs(&spec, Arc::new(codecs)).unwrap();
    let report = fixture.run(&LocalizeConfig::default()).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let median = report.median_error().unwrap_or(f64::INFINITY);
    outcome(
        report.registration_rate >= 0.95 && median <= 1.0 && secs < 120.0,
        format!(
            "registered {}/{}, median error {median:.3}m, {secs:.1}s including codec training (limits 95%, 1m, 120s)",
            report.registered, report.queries
        ),
    )
}

fn one_many_gain() -> Outcome {
    let one_one = {
        let mut c = LocalizeConfig::default();
        c.search.max_candidates = 1;
        c
    };
    let mut ratios = Vec::new();
    let (mut reg_many, mut reg_one) = (0, 0);
    for seed in 1..=20 {
        let fixture = BenchFixture::new(&SceneSpec::repetitive(seed)).unwrap();
        let many = fixture.run(&LocalizeConfig::default()).unwrap();
        let one = fixture.run(&one_one).unwrap();
        ratios.push(many.total_inliers as f64 / one.total_inliers.max(1) as f64);
        reg_many += many.registered;
        reg_one += one.registered;
    }
    let mean = ratios.iter().sum::<f64>() / ratios.len() as f64;
    let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
    outcome(
        mean >= 1.3 && reg_many > reg_one,
        format!("mean inlier ratio {mean:.3} (min {min:.3}) over 20 seeds, registered {reg_many} vs {reg_one}"),
    )
}

fn sprt_consistency_and_speed() -> Outcome {
    let fixed = LocalizeConfig {
        ransac: RansacConfig::fixed(5000),
        ..LocalizeConfig::default()
    };
    let fixture = BenchFixture::new(&SceneSpec::baseline(1)).unwrap();
    let a = fixture.run(&LocalizeConfig::default()).unwrap();
    let b = fixture.run(&fixed).unwrap();
    let close = a
        .per_query
        .iter()
        .zip(&b.per_query)
        .filter(|(x, y)| match (x.camera_center, y.camera_center) {
            (Some(p), Some(q)) => (0..3).map(|k| (p[k] - q[k]).powi(2)).sum::<f64>().sqrt() <= 0.5,
            _ => false,
        })
        .count();
    let agree = close as f64 / a.queries as f64;

    let mut spec = SceneSpec::baseline(2);
    spec.queries = 20;
    spec.mismatch_fraction = 1.0;
    let contaminated = BenchFixture::new(&spec).unwrap();
    let t = Instant::now();
    contaminated.run_serial(&LocalizeConfig::default()).unwrap();
    let fast = t.elapsed().as_secs_f64();
    let t = Instant::now();
    contaminated.run_serial(&fixed).unwrap();
    let slow = t.elapsed().as_secs_f64();
    outcome(
        agree >= 0.95 && fast <= 0.5 * slow,
        format!(
            "{close}/{} centers within 0.5m of fixed mode; 50% outliers: fast {fast:.2}s vs fixed {slow:.2}s ({:.3}x)",
            a.queries,
            fast / slow
        ),
    )
}

fn prioritization() -> Outcome {
    let exhaustive = LocalizeConfig {
        search: SearchParams::exhaustive(),
        ..LocalizeConfig::default()
    };
    let (mut reg_early, mut reg_full, mut t_early, mut t_full, mut n) = (0, 0, 0.0, 0.0, 0);
    for seed in 1..=3 {
        let fixture = BenchFixture::new(&SceneSpec::baseline(seed)).unwrap();
        let full = fixture.run_serial(&exhaustive).unwrap();
        let early = fixture.run_serial(&LocalizeConfig::default()).unwrap();
        for (f, e) in full.per_query.iter().zip(&early.per_query) {
            if f.strict < 200 {
                continue;
            }
            n += 1;
            reg_full += f.registered as usize;
            reg_early += e.registered as usize;
            t_full += f.timings.matching;
            t_early += e.timings.matching;
        }
    }
    let within = (reg_early as f64 - reg_full as f64).abs() <= 0.02 * reg_full as f64;
    outcome(
        n > 0 && within && t_early <= 0.5 * t_full,
        format!(
            "{n} queries with >=200 strict matches: registered {reg_early} vs {reg_full}, matching {t_early:.3}s vs {t_full:.3}s ({:.3}x)",
            t_early / t_full
        ),
    )
}

fn memory_layout() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let mut parts = Vec::new();
    let mut pass = true;
    for n in [1_000usize, 100_000] {
        let codes: Vec<BinaryCode> = (0..n).map(|_| BinaryCode(rng.random())).collect();
        let bytes = random_code_model(&codes, &mut rng).to_bytes().len();
        let expected = 8 * BUCKETS * 4 + n * 76;
        let dev = (bytes as f64 - expected as f64) / expected as f64;
        pass &= dev.abs() <= 0.10;
        parts.push(format!("N_p={n}: {bytes} bytes vs {expected} ({:+.2}%)", 100.0 * dev));
    }
    outcome(pass, parts.join(", "))
}

fn coarse_ratio() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let n = 1_000_000;
    let codes: Vec<BinaryCode> = (0..n).map(|_| BinaryCode(rng.random())).collect();
    let model = random_code_model(&codes, &mut rng);
    let queries = 1_000;
    let total: usize = (0..queries).map(|_| coarse_lookup(&model, BinaryCode(rng.random())).len()).sum();
    let ratio = total as f64 / queries as f64 / n as f64;
    outcome(
        (1e-4..=5e-3).contains(&ratio),
        format!("mean |L_C|/N_p = {:.4}% (bounds 0.01%..0.5%)", 100.0 * ratio),
    )
}

fn retrieval_gap() -> Outcome {
    let mut wins = 0;
    let mut parts = Vec::new();
    for seed in 1..=10 {
        let fixture = BenchFixture::new(&SceneSpec::baseline(seed)).unwrap();
        let r = fixture.run(&LocalizeConfig::default()).unwrap();
        let full = r.median_error().unwrap_or(f64::INFINITY);
        let base = r.retrieval_baseline_error.as_ref().map_or(f64::INFINITY, |e| e.median);
        wins += (full < base) as usize;
        parts.push(format!("{full:.2}/{base:.1}"));
    }
    outcome(wins == 10, format!("{wins}/10 seeds better than retrieval only (median m, pipeline/retrieval: {})", parts.join(" ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("pigeonhole recall", pigeonhole_recall),
        ("cascade equals oracle ranking", cascade_matches_oracle),
        ("ADC fidelity", adc_fidelity),
        ("ITQ health", itq_health),
        ("DLT exactness", dlt_exactness),
        ("end-to-end synthetic localization", end_to_end),
        ("one-many inlier gain", one_many_gain),
        ("SPRT consistency and speed", sprt_consistency_and_speed),
        ("prioritization consistency", prioritization),
        ("memory layout", memory_layout),
        ("coarse candidate-list ratio", coarse_ratio),
        ("retrieval-pipeline gap", retrieval_gap),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let o = run();
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!("{status} {name}: {} [{:.1}s]", o.detail, start.elapsed().as_secs_f64());
        failed += !o.pass as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
