use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use deformpose_core::consensus::ConsensusMode;
use deformpose_core::geom::{encode_crop_translation, CameraIntrinsics, CropGeometry, Pose, Rotation};
use deformpose_core::lattice::{
    canonicalize, sample_deformation_with, DeformationBounds, DeformationFile, PARAMS,
};
use deformpose_core::losses::{LossFixture, SeedLossWeights, SeedPrediction, SeedTarget};
use deformpose_core::mesh::primitives::produce_body;
use deformpose_core::mesh::{bounding_box, load_mesh, save_mesh, TriMesh};
use deformpose_core::metrics::{evaluate_manifest, EvalManifest, ManifestEntry, MetricsReport};
use deformpose_core::protocol::{ProtocolFile, ProtocolSpec};
use deformpose_core::scene::{
    annotate, build_scene, default_scene_intrinsics, load_scene, read_json, save_scene, stream_rng,
    write_json, AnnotateConfig, SceneConfig, STREAM_DEFORMATION, STREAM_NOISE, STREAM_SCENE,
};
use deformpose_core::silhouette::{rasterize_silhouette, write_pgm};
use nalgebra::Vector3;
use rand::Rng;

use crate::config::overlay;
use crate::error::{CliError, Context};
use crate::{
    AnnotateArgs, DeformArgs, EvalArgs, LossesCheckArgs, MakeSceneArgs, ProtocolArgs, RenderArgs,
};

/// Base body used when `make-scene` gets no mesh.
const BODY_RINGS: usize = 24;
const BODY_SEGMENTS: usize = 32;

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::data("io", format!("{}: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::data("io", format!("{}: {e}", path.display())))
}

fn base_mesh(path: Option<&Path>) -> Result<TriMesh, CliError> {
    match path {
        Some(p) => load_mesh(p).during("mesh::load_mesh"),
        None => Ok(produce_body(BODY_RINGS, BODY_SEGMENTS)),
    }
}

pub fn make_scene(args: &MakeSceneArgs) -> Result<(), CliError> {
    let mut cfg = SceneConfig::default();
    if let Some(v) = args.sigma_t_mm {
        cfg.noise.sigma_t = v / 1000.0;
    }
    if let Some(v) = args.sigma_r_deg {
        cfg.noise.sigma_r = v.to_radians();
    }
    if let Some(v) = args.outlier_fraction {
        cfg.noise.outlier_fraction = v;
    }
    if let Some(v) = args.deformation_fraction {
        cfg.deformation_fraction = v;
    }
    let cfg: SceneConfig = overlay(cfg, args.config.as_deref())?;
    let bounds = DeformationBounds::new(cfg.deformation_fraction).during("lattice::bounds")?;
    let mesh = base_mesh(args.mesh.as_deref())?;
    let scene = build_scene(&mesh, &cfg, &bounds, args.seed).during("scene::build_scene")?;
    create_dir(&args.out)?;
    let path = save_scene(&scene, &args.out).during("scene::save_scene")?;
    eprintln!(
        "{}: {} frames, outliers {:?}",
        path.display(),
        scene.frames.len(),
        scene.outliers
    );
    Ok(())
}

pub fn run_annotate(args: &AnnotateArgs) -> Result<(), CliError> {
    let mut cfg = AnnotateConfig::default();
    if let Some(v) = args.lambda {
        cfg.optimizer.lambda = v;
    }
    if let Some(v) = args.max_iterations {
        cfg.optimizer.max_iterations = v;
    }
    if let Some(v) = args.tau_t_mm {
        cfg.inliers.tau_t = v / 1000.0;
    }
    if let Some(v) = args.tau_r_deg {
        cfg.inliers.tau_r = v.to_radians();
    }
    if let Some(v) = args.consensus {
        cfg.consensus = v.into();
    }
    if args.no_refit {
        cfg.refit_inliers = false;
    }
    let cfg: AnnotateConfig = overlay(cfg, args.config.as_deref())?;

    let scene = load_scene(&args.scene).during("scene::load_scene")?;
    let initial = scene.initial_hypotheses().during("consensus::lift_to_world")?;
    let truth = scene.ground_truth.as_ref().map(|t| t.world_pose);
    let result = annotate(&scene.frames, &initial, &scene.mesh, &cfg, None, truth.as_ref())
        .during("consensus::annotate")?;

    create_dir(&args.out)?;
    write_json(&result, &args.out.join("result.json")).during("annotate::write_result")?;
    write_text(&args.out.join("loss_log.csv"), &result.loss_log_csv())?;
    if let Some(truth) = &scene.ground_truth {
        // the mesh travels with the manifest so the output directory is
        // self-contained and relocatable
        save_mesh(&scene.mesh, args.out.join("mesh.obj")).during("mesh::save_mesh")?;
        let manifest = EvalManifest {
            sample_count: deformpose_core::metrics::DEFAULT_SAMPLE_COUNT,
            sample_seed: deformpose_core::metrics::DEFAULT_SAMPLE_SEED,
            instances: vec![ManifestEntry {
                name: format!("seed-{}", truth.seed),
                category: args.category.clone(),
                pred_mesh: PathBuf::from("mesh.obj"),
                pred_pose: result.consensus_pose,
                gt_mesh: PathBuf::from("mesh.obj"),
                gt_pose: truth.world_pose,
            }],
        };
        write_json(&manifest, &args.out.join("eval_manifest.json")).during("annotate::write_manifest")?;
    }
    let err = result
        .consensus_error
        .map(|e| format!(", error {:.3} mm / {:.3}°", e.translation_m * 1000.0, e.rotation_deg))
        .unwrap_or_default();
    eprintln!(
        "consensus frame {} with inliers {:?}{err}",
        result.consensus_index, result.inliers
    );
    Ok(())
}

fn write_report(report: &MetricsReport, dir: &Path) -> Result<(), CliError> {
    let csv_err = |e: csv::Error| CliError::data("metrics::write_csv", e.to_string());
    let num = |v: f64| v.to_string();

    let mut w = csv::Writer::from_path(dir.join("instances.csv")).map_err(csv_err)?;
    w.write_record(["name", "category", "add_mm", "adds_mm", "chamfer_mm"])
        .map_err(csv_err)?;
    for i in &report.instances {
        w.write_record([
            i.name.clone(),
            i.category.clone(),
            num(i.values.add),
            num(i.values.adds),
            num(i.values.chamfer),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| CliError::data("io", e.to_string()))?;

    let mut w = csv::Writer::from_path(dir.join("summary.csv")).map_err(csv_err)?;
    w.write_record(["category", "count", "add_mm", "adds_mm", "chamfer_mm"])
        .map_err(csv_err)?;
    for c in &report.categories {
        w.write_record([
            c.category.clone(),
            c.count.to_string(),
            num(c.values.add),
            num(c.values.adds),
            num(c.values.chamfer),
        ])
        .map_err(csv_err)?;
    }
    w.write_record([
        "Average".to_string(),
        report.instances.len().to_string(),
        num(report.average.add),
        num(report.average.adds),
        num(report.average.chamfer),
    ])
    .map_err(csv_err)?;
    w.flush().map_err(|e| CliError::data("io", e.to_string()))?;

    write_json(report, &dir.join("metrics.json")).during("metrics::write_report")?;
    write_text(&dir.join("table.txt"), &report.table())
}

pub fn run_eval(args: &EvalArgs) -> Result<(), CliError> {
    let mut manifest: EvalManifest = read_json(&args.manifest).during("metrics::read_manifest")?;
    if let Some(n) = args.sample_count {
        manifest.sample_count = n;
    }
    if let Some(s) = args.sample_seed {
        manifest.sample_seed = s;
    }
    let base = args.manifest.parent().unwrap_or_else(|| Path::new("."));
    let report = evaluate_manifest(&manifest, base).during("metrics::evaluate_manifest")?;
    create_dir(&args.out)?;
    write_report(&report, &args.out)?;
    print!("{}", report.table());
    Ok(())
}

pub fn run_deform(args: &DeformArgs) -> Result<(), CliError> {
    let mesh = load_mesh(&args.mesh).during("mesh::load_mesh")?;
    let file = match (&args.deformation, args.random) {
        (Some(path), false) => read_json::<DeformationFile>(path).during("lattice::read_deformation")?,
        (None, true) => {
            let bx = bounding_box(&mesh).during("mesh::bounding_box")?;
            let bounds = DeformationBounds::new(args.max_offset_fraction).during("lattice::bounds")?;
            let mut rng = stream_rng(args.seed, STREAM_DEFORMATION);
            DeformationFile {
                offsets: sample_deformation_with(&bounds, &bx, &mut rng).offsets,
                lattice_box: bx,
                blend: Default::default(),
            }
        }
        _ => {
            return Err(CliError::Usage(
                "deform needs exactly one of --deformation or --random".into(),
            ))
        }
    };
    let mut out = file.apply(&mesh).during("lattice::deform")?;
    if args.canonicalize {
        out = canonicalize(&mesh, &out).during("lattice::canonicalize")?;
    }
    save_mesh(&out, &args.out).during("mesh::save_mesh")?;
    if let Some(p) = &args.save_deformation {
        write_json(&file, p).during("lattice::write_deformation")?;
    }
    Ok(())
}

pub fn run_protocol(args: &ProtocolArgs) -> Result<(), CliError> {
    let mut spec = ProtocolSpec::default();
    if let Some(r) = &args.radii {
        spec.radii = r.clone();
    }
    if let Some(e) = &args.elevations {
        spec.lateral_elevations = e.clone();
    }
    if let Some(n) = args.azimuth_count {
        spec.azimuth_count = n;
    }
    if let Some(n) = args.topdown_count {
        spec.topdown_count = n;
    }
    let spec: ProtocolSpec = overlay(spec, args.config.as_deref())?;
    let file = ProtocolFile::generate(&spec).during("protocol::generate_protocol")?;
    match &args.out {
        Some(p) => write_json(&file, p).during("protocol::write")?,
        None => {
            let text = serde_json::to_string_pretty(&file)
                .map_err(|e| CliError::data("protocol::write", e.to_string()))?;
            println!("{text}");
        }
    }
    eprintln!("{} placements", file.count);
    Ok(())
}

pub fn run_render(args: &RenderArgs) -> Result<(), CliError> {
    let mesh = load_mesh(&args.mesh).during("mesh::load_mesh")?;
    let pose: Pose = read_json(&args.pose).during("silhouette::read_pose")?;
    let k: CameraIntrinsics = match &args.intrinsics {
        Some(p) => read_json(p).during("silhouette::read_intrinsics")?,
        None => default_scene_intrinsics(),
    };
    k.validate().during("silhouette::intrinsics")?;
    let mut mask = rasterize_silhouette(&mesh, &pose, &k).during("silhouette::rasterize_silhouette")?;
    if args.binarize {
        mask = mask.binarized();
    }
    write_pgm(&mask, &args.out).during("silhouette::write_pgm")
}

/// A random but well-posed fixture: the body at a random pose in front of
/// the default camera, with a perturbed prediction.
fn synthetic_fixture(seed: u64) -> Result<LossFixture, CliError> {
    let mesh = produce_body(10, 16);
    let bbox = bounding_box(&mesh).during("mesh::bounding_box")?;
    let intrinsics = default_scene_intrinsics();
    let mut rng = stream_rng(seed, STREAM_SCENE);
    let translation = [
        rng.random_range(-0.03..0.03),
        rng.random_range(-0.03..0.03),
        rng.random_range(0.45..0.7),
    ];
    let bounds = DeformationBounds::new(0.05).during("lattice::bounds")?;
    let offsets = sample_deformation_with(&bounds, &bbox, &mut rng).offsets;
    let w = intrinsics.width as f64;
    let h = intrinsics.height as f64;
    let crop = CropGeometry::new(w / 2.0, h / 2.0, w / 2.0, h / 2.0, w, h).during("geom::crop")?;
    let target = SeedTarget {
        rotation: Rotation::random(&mut rng),
        translation,
        lattice_offsets: offsets,
        mesh,
        bbox,
        intrinsics,
        crop,
    };

    let mut noise = stream_rng(seed, STREAM_NOISE);
    let mut rotation6d = target.rotation.to_6d();
    for v in &mut rotation6d {
        *v += noise.random_range(-0.1..0.1);
    }
    let t = Vector3::from(translation)
        + Vector3::from_fn(|_, _| noise.random_range(-0.01..0.01));
    let code = encode_crop_translation(&t, &crop, &intrinsics).during("geom::encode_crop_translation")?;
    let lattice_offsets: [f64; PARAMS] =
        std::array::from_fn(|i| offsets[i] + noise.random_range(-0.002..0.002));
    Ok(LossFixture {
        prediction: SeedPrediction {
            rotation6d,
            translation_code: code.into(),
            lattice_offsets,
        },
        target,
        weights: SeedLossWeights::default(),
        expected: None,
    })
}

pub fn run_losses_check(args: &LossesCheckArgs) -> Result<(), CliError> {
    if let Some(path) = &args.make_fixture {
        let mut fx = synthetic_fixture(args.seed)?;
        fx.expected = Some(fx.evaluate().during("losses::total_loss")?);
        write_json(&fx, path).during("losses::write_fixture")?;
        eprintln!("wrote {}", path.display());
        return Ok(());
    }
    let Some(path) = &args.fixture else {
        return Err(CliError::Usage(
            "losses-check needs --fixture or --make-fixture".into(),
        ));
    };
    let mut fx: LossFixture = read_json(path).during("losses::read_fixture")?;
    fx.weights = overlay(fx.weights, args.config.as_deref())?;
    let got = fx.evaluate().during("losses::total_loss")?;
    let text = serde_json::to_string_pretty(&got)
        .map_err(|e| CliError::data("losses::write", e.to_string()))?;
    match &args.out {
        Some(p) => write_text(p, &(text + "\n"))?,
        None => {
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}").map_err(|e| CliError::data("io", e.to_string()))?;
        }
    }
    if let Some(dev) = fx.max_deviation(&got) {
        if !(dev <= args.tolerance) {
            return Err(CliError::Numerical {
                op: "losses::check_expected",
                message: format!("deviation {dev:e} exceeds tolerance {:e}", args.tolerance),
            });
        }
        eprintln!("matches expected values (max deviation {dev:e})");
    }
    Ok(())
}

impl From<crate::ConsensusArg> for ConsensusMode {
    fn from(a: crate::ConsensusArg) -> Self {
        match a {
            crate::ConsensusArg::Winner => ConsensusMode::Winner,
            crate::ConsensusArg::ChordalMean => ConsensusMode::ChordalMean,
        }
    }
}
