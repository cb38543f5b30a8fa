use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use casloc::bench::{run_bench, BenchSpec};
use casloc::io::{read_features, write_features, RawFeature};
use casloc::pipeline::{model_file_name, LocalizeConfig, Localizer, CODEBOOK_FILE, HASH_FILE};
use casloc::ransac::{RansacMode, DEFAULT_FIXED_ITERATIONS};
use casloc::retrieval::{build_index, ImageInput};
use casloc::synth::{codec_pool, gen_scene, train_codecs, SceneSpec};
use casloc::{build_submodel, train_hash, train_pq, Descriptor, HashModel, PointInput, PqCodebook, SegmentMeta};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "casloc", version, about = "Cascade-hashing camera localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn the 128-bit hash from a features file (pixels are ignored).
    TrainHash {
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = casloc::hash::DEFAULT_ITQ_ITERATIONS)]
        iterations: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Learn the product-quantization codebook from a features file.
    TrainPq {
        #[arg(long)]
        descriptors: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Compress a segment's points (JSON) into a sub-model file.
    BuildModel {
        #[arg(long)]
        points: PathBuf,
        #[arg(long)]
        hash: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep mean descriptors unnormalized.
        #[arg(long)]
        raw_means: bool,
    },
    /// Build the reference-image index from an images JSON file.
    BuildIndex {
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Localize one query image.
    Localize(LocalizeArgs),
    /// Generate a synthetic scene and benchmark it.
    Bench {
        /// JSON with optional `scene` and `localize` sections.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic scene as input files, codecs, models, index and queries.
    GenScene {
        /// JSON scene spec; defaults to the baseline scene.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct LocalizeArgs {
    #[arg(long)]
    query: PathBuf,
    #[arg(long)]
    index: PathBuf,
    /// Directory with model_<id>.ccsm, hash.ccsh and codebook.ccsq.
    #[arg(long)]
    models: PathBuf,
    /// JSON localization config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// `fast` (SPRT) or `fixed<N>`, e.g. `fixed5000`.
    #[arg(long)]
    mode: Option<String>,
    /// Stop after this many strict matches; 0 searches every feature.
    #[arg(long)]
    n_early: Option<usize>,
    #[arg(long)]
    nu_h: Option<f32>,
    #[arg(long)]
    nu: Option<f32>,
    /// Candidates kept per feature for verification.
    #[arg(long)]
    m_cands: Option<usize>,
    #[arg(long)]
    top_images: Option<usize>,
    #[arg(long)]
    max_models: Option<usize>,
    /// Print the full result as JSON.
    #[arg(long)]
    json: bool,
}

#[derive(Serialize, Deserialize)]
struct SegmentJson {
    id: u32,
    #[serde(default)]
    placemark_start: u32,
    #[serde(default)]
    placemark_end: u32,
    #[serde(default)]
    overlap: u32,
}

#[derive(Serialize, Deserialize)]
struct PointJson {
    id: u32,
    position: [f32; 3],
    observations: Vec<Vec<f32>>,
}

#[derive(Serialize, Deserialize)]
struct PointsFile {
    segment: SegmentJson,
    points: Vec<PointJson>,
}

#[derive(Serialize, Deserialize)]
struct ImageJson {
    id: u32,
    models: Vec<u32>,
    descriptors: Vec<Vec<f32>>,
}

#[derive(Serialize)]
struct QueryTruth {
    id: u32,
    file: String,
    center: [f64; 3],
    yaw: f64,
    pitch: f64,
    segments: Vec<u32>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string(value)?).with_context(|| format!("writing {}", path.display()))
}

fn descriptors(rows: &[Vec<f32>]) -> Result<Vec<Descriptor>> {
    rows.iter().map(|r| Descriptor::from_slice(r).map_err(Into::into)).collect()
}

fn parse_mode(s: &str) -> Result<RansacMode> {
    if s == "fast" {
        return Ok(RansacMode::Fast);
    }
    match s.strip_prefix("fixed") {
        Some("") => Ok(RansacMode::Fixed(DEFAULT_FIXED_ITERATIONS)),
        Some(n) => Ok(RansacMode::Fixed(n.parse().with_context(|| format!("bad iteration count in mode {s:?}"))?)),
        None => bail!("unknown mode {s:?}, expected fast or fixed<N>"),
    }
}

fn localize_config(args: &LocalizeArgs) -> Result<LocalizeConfig> {
    let mut cfg = match &args.config {
        Some(p) => read_json(p)?,
        None => LocalizeConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.ransac.seed = seed;
    }
    if let Some(mode) = &args.mode {
        cfg.ransac.mode = parse_mode(mode)?;
    }
    if let Some(n) = args.n_early {
        cfg.search.n_early = (n > 0).then_some(n);
    }
    if let Some(v) = args.nu_h {
        cfg.search.nu_h = v;
    }
    if let Some(v) = args.nu {
        cfg.search.nu = v;
    }
    if let Some(m) = args.m_cands {
        cfg.search.max_candidates = m;
    }
    if let Some(n) = args.top_images {
        cfg.top_images = n;
    }
    if let Some(n) = args.max_models {
        cfg.max_models = n;
    }
    Ok(cfg)
}

fn localize(args: &LocalizeArgs) -> Result<bool> {
    let cfg = localize_config(args)?;
    let features = read_features(&args.query).with_context(|| format!("reading {}", args.query.display()))?;
    let mut loc = Localizer::open(&args.index, &args.models, cfg)?;
    let r = loc.localize(&features)?;
    if args.json {
        println!("{}", serde_json::to_string_pretty(&r)?);
    } else if let (true, Some(model), Some(c)) = (r.registered, r.model, r.camera_center()) {
        println!(
            "registered: model {model}, {} inliers, camera center [{:.3}, {:.3}, {:.3}], {:.3}s",
            r.inliers, c[0], c[1], c[2], r.timings.total
        );
    } else {
        println!("not registered: {}", r.reason.as_deref().unwrap_or("unknown"));
    }
    Ok(r.registered)
}

fn gen_scene_files(spec: &SceneSpec, out: &Path) -> Result<()> {
    let scene = gen_scene(spec)?;
    fs::create_dir_all(out.join("models"))?;
    fs::create_dir_all(out.join("queries"))?;

    let pool: Vec<RawFeature> = codec_pool(spec.vocabulary_seed, spec.descriptor_noise)
        .into_iter()
        .map(|descriptor| RawFeature { pixel: [0.0; 2], descriptor })
        .collect();
    write_features(out.join("descriptors.ccsf"), &pool)?;
    let codecs = train_codecs(spec.vocabulary_seed, spec.descriptor_noise)?;
    codecs.hash.save(out.join("models").join(HASH_FILE))?;
    codecs.codebook.save(out.join("models").join(CODEBOOK_FILE))?;

    for (seg, model) in scene.segments.iter().zip(scene.build_models(&codecs.hash, &codecs.codebook)?) {
        model.save(out.join("models").join(model_file_name(model.id())))?;
        let file = PointsFile {
            segment: SegmentJson {
                id: seg.meta.segment_id,
                placemark_start: seg.meta.placemark_start,
                placemark_end: seg.meta.placemark_end,
                overlap: seg.meta.overlap,
            },
            points: scene
                .point_inputs(seg.meta.segment_id)
                .into_iter()
                .map(|p| PointJson {
                    id: p.id,
                    position: p.position,
                    observations: p.observations.iter().map(|d| d.as_slice().to_vec()).collect(),
                })
                .collect(),
        };
        write_json(&out.join(format!("points_{}.json", seg.meta.segment_id)), &file)?;
    }

    let images: Vec<ImageJson> = scene
        .image_inputs()
        .into_iter()
        .map(|i| ImageJson {
            id: i.id,
            models: i.models,
            descriptors: i.descriptors.iter().map(|d| d.as_slice().to_vec()).collect(),
        })
        .collect();
    write_json(&out.join("images.json"), &images)?;
    scene.build_index()?.save(out.join("index.ccsi"))?;

    let mut truth = Vec::new();
    for q in &scene.queries {
        let file = format!("query_{}.ccsf", q.id);
        write_features(out.join("queries").join(&file), &q.features)?;
        truth.push(QueryTruth {
            id: q.id,
            file,
            center: q.camera.center,
            yaw: q.camera.yaw,
            pitch: q.camera.pitch,
            segments: q.segments.clone(),
        });
    }
    write_json(&out.join("truth.json"), &truth)?;
    println!(
        "{} points in {} segments, {} reference images, {} queries written to {}",
        scene.points.len(),
        scene.segments.len(),
        scene.images.len(),
        scene.queries.len(),
        out.display()
    );
    Ok(())
}

fn feature_descriptors(path: &Path) -> Result<Vec<Descriptor>> {
    let features = read_features(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(features.into_iter().map(|f| f.descriptor).collect())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::TrainHash { descriptors, out, iterations, seed } => {
            let model = train_hash(&feature_descriptors(&descriptors)?, iterations, seed)?;
            model.save(&out)?;
            println!("hash model {:016x} written to {}", model.id(), out.display());
        }
        Command::TrainPq { descriptors, out, seed } => {
            let cb = train_pq(&feature_descriptors(&descriptors)?, seed)?;
            cb.save(&out)?;
            println!("codebook {:016x} written to {}", cb.id(), out.display());
        }
        Command::BuildModel { points, hash, codebook, out, raw_means } => {
            let file: PointsFile = read_json(&points)?;
            let inputs = file
                .points
                .iter()
                .map(|p| {
                    Ok(PointInput {
                        id: p.id,
                        position: p.position,
                        observations: descriptors(&p.observations)?,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let meta = SegmentMeta {
                segment_id: file.segment.id,
                placemark_start: file.segment.placemark_start,
                placemark_end: file.segment.placemark_end,
                overlap: file.segment.overlap,
            };
            let model = build_submodel(&inputs, &HashModel::load(&hash)?, &PqCodebook::load(&codebook)?, meta, !raw_means)?;
            model.save(&out)?;
            println!("segment {} with {} points written to {}", model.id(), model.len(), out.display());
        }
        Command::BuildIndex { images, out } => {
            let rows: Vec<ImageJson> = read_json(&images)?;
            let inputs = rows
                .iter()
                .map(|i| {
                    Ok(ImageInput {
                        id: i.id,
                        descriptors: descriptors(&i.descriptors)?,
                        models: i.models.clone(),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let index = build_index(&inputs)?;
            index.save(&out)?;
            println!("{} images indexed into {}", index.len(), out.display());
        }
        Command::Localize(args) => {
            return Ok(if localize(&args)? { ExitCode::SUCCESS } else { ExitCode::from(2) });
        }
        Command::Bench { spec, out } => {
            let spec: BenchSpec = match spec {
                Some(p) => read_json(&p)?,
                None => BenchSpec::default(),
            };
            let report = run_bench(&spec)?;
            report.write(&out)?;
            let median = report.median_error().map_or("n/a".to_string(), |m| format!("{m:.3}m"));
            println!(
                "registered {}/{} ({:.1}%), median error {median}, report in {}",
                report.registered,
                report.queries,
                100.0 * report.registration_rate,
                out.display()
            );
        }
        Command::GenScene { spec, out } => {
            let spec: SceneSpec = match spec {
                Some(p) => read_json(&p)?,
                None => SceneSpec::default(),
            };
            gen_scene_files(&spec, &out)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
