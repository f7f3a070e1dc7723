//! Subcommand implementations. Each validates its inputs up front (exit
//! code 2 territory), then runs and maps everything else to runtime
//! failures (exit code 3).

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;

use alight_core::albedo::{
    self, balance_report, build_model as build_model_core, fit_pca, project_library,
    BalanceReport, LibraryConfig, LibrarySample, PcaModel, TypeAnchors,
};
use alight_core::benchmark::{
    self, evaluate as evaluate_core, generate_dataset, load_manifest, load_scene_observation,
    render_report, AlbedoSource, DatasetManifest, GenerateConfig, MetricsReport,
};
use alight_core::colorimetry::{classify_skin_type, mean_ita, SkinType};
use alight_core::fit::{fit_batch, FitOutcome, OptimConfig};
use alight_core::formats;
use alight_core::losses::LossBreakdown;
use alight_core::sh::ShCoeffs;
use alight_core::{Parallelism, Pixmap};

use crate::{
    anchors_path, default_model_path, require_dir, require_file, write_run_json, CmdResult,
    Failure, VERSION,
};

/// Optimizer settings shared by `fit` and `ablate`: defaults, overridden
/// by the `--config` JSON file, overridden by explicit flags.
#[derive(Debug, Args)]
pub struct OptimFlags {
    /// JSON file with optimizer settings (same field names as the fit
    /// record's `config`); explicit flags take precedence over it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Optimization iterations per scene.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Base RNG seed; scene i runs with seed + i.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Overlays `overlay` onto `base`, rejecting keys `base` does not have so
/// config-file typos fail loudly instead of being ignored.
fn merge_strict(
    base: &mut serde_json::Value,
    overlay: &serde_json::Value,
    path: &str,
) -> Result<(), String> {
    let (Some(base_map), Some(over_map)) = (base.as_object(), overlay.as_object()) else {
        return Err(format!("config{path}: expected a JSON object"));
    };
    let known: Vec<String> = base_map.keys().cloned().collect();
    for key in over_map.keys() {
        if !known.contains(key) {
            return Err(format!("unknown config key: {path}/{key}"));
        }
    }
    for (key, value) in over_map {
        let slot = &mut base[key];
        if slot.is_object() && value.is_object() {
            merge_strict(slot, value, &format!("{path}/{key}"))?;
        } else {
            *slot = value.clone();
        }
    }
    Ok(())
}

fn effective_optim(flags: &OptimFlags) -> Result<OptimConfig, Failure> {
    let mut value = serde_json::to_value(OptimConfig::default())?;
    if let Some(path) = &flags.config {
        require_file(path, "config file")?;
        let overlay: serde_json::Value = serde_json::from_slice(&fs::read(path)?)
            .map_err(|e| Failure::Input(format!("config {}: {e}", path.display())))?;
        merge_strict(&mut value, &overlay, "").map_err(Failure::Input)?;
    }
    let mut cfg: OptimConfig = serde_json::from_value(value)
        .map_err(|e| Failure::Input(format!("config: {e}")))?;
    if let Some(i) = flags.iters {
        cfg.iterations = i;
    }
    if let Some(l) = flags.lr {
        cfg.learning_rate = l;
    }
    if let Some(s) = flags.seed {
        cfg.seed = s;
    }
    cfg.validate().map_err(|e| Failure::Input(e.to_string()))?;
    Ok(cfg)
}

fn load_model_and_anchors(model_path: &Path) -> Result<(PcaModel, TypeAnchors), Failure> {
    require_file(model_path, "model")?;
    let anchors_file = anchors_path(model_path);
    require_file(&anchors_file, "model anchors")?;
    Ok((
        formats::load_model(model_path)?,
        formats::load_anchors(&anchors_file)?,
    ))
}

/// Loads every `.f32` map in a directory, sorted by file name.
fn load_texture_dir(dir: &Path) -> Result<Vec<Pixmap>, Failure> {
    require_dir(dir, "texture")?;
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "f32"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Failure::Input(format!(
            "no .f32 texture maps in {}",
            dir.display()
        )));
    }
    let mut maps = Vec::with_capacity(paths.len());
    for p in &paths {
        maps.push(formats::load_f32(p)?.0);
    }
    Ok(maps)
}

// ---------------------------------------------------------------- build-model

#[derive(Debug, Args)]
pub struct BuildModelArgs {
    /// Model file to write (anchors and report land next to it).
    #[arg(long, default_value_os_t = default_model_path())]
    pub out: PathBuf,
    /// Build from the procedural tone-balanced subject library.
    #[arg(long)]
    pub procedural: bool,
    /// Directory of UV albedo maps (.f32) to build from instead.
    #[arg(long, conflicts_with = "procedural")]
    pub texture_dir: Option<PathBuf>,
    /// Procedural subjects per skin type.
    #[arg(long, default_value_t = 10)]
    pub per_type: usize,
    /// UV map side length for the procedural library.
    #[arg(long, default_value_t = 256)]
    pub map_side: usize,
    /// Number of principal components to keep.
    #[arg(long, default_value_t = 40)]
    pub components: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 1 = sequential, 0 or absent = all cores.
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Serialize)]
struct BuildModelReport<'a> {
    version: &'a str,
    mode: &'a str,
    seed: u64,
    map_side: usize,
    components: usize,
    samples: usize,
    per_type_counts: [usize; 6],
    covers_all_types: bool,
    mean_ita_by_type: [Vec<f64>; 6],
}

pub fn build_model(args: &BuildModelArgs) -> CmdResult {
    let par = Parallelism::from_jobs(args.jobs);
    let (model, report, anchors, mode, samples) = if let Some(dir) = &args.texture_dir {
        let maps = load_texture_dir(dir)?;
        let d = maps[0].h;
        let mask = albedo::skin_mask(d);
        let mut samples = Vec::with_capacity(maps.len());
        for map in &maps {
            let ita = mean_ita(map, &mask)?;
            samples.push(LibrarySample {
                skin_type: classify_skin_type(ita),
                mean_ita: ita,
                map: map.clone(),
            });
        }
        let report = balance_report(&samples);
        let model = fit_pca(&maps, args.components)
            .map_err(|e| Failure::Input(e.to_string()))?;
        let anchors = project_library(&model, &samples)?;
        (model, report, anchors, "textures", maps.len())
    } else if args.procedural {
        let cfg = LibraryConfig {
            d: args.map_side,
            per_type: args.per_type,
            seed: args.seed,
        };
        let (model, report, anchors) = build_model_core(&cfg, args.components, par)
            .map_err(|e| Failure::Input(e.to_string()))?;
        (model, report, anchors, "procedural", 6 * args.per_type)
    } else {
        return Err(Failure::Input(
            "pass --procedural or --texture-dir <DIR>".to_string(),
        ));
    };

    if !report.covers_all_types(1) {
        return Err(Failure::Input(format!(
            "albedo sources do not cover all six skin types: counts {:?}",
            report.per_type
        )));
    }

    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    formats::save_model(&args.out, &model)?;
    formats::save_anchors(&anchors_path(&args.out), &anchors)?;
    let BalanceReport {
        per_type,
        mean_ita_by_type,
    } = report;
    let build_report = BuildModelReport {
        version: VERSION,
        mode,
        seed: args.seed,
        map_side: model.d,
        components: model.n_components(),
        samples,
        per_type_counts: per_type,
        covers_all_types: true,
        mean_ita_by_type,
    };
    fs::write(
        args.out.with_extension("report.json"),
        serde_json::to_vec_pretty(&build_report)?,
    )?;
    println!(
        "model: {} ({} samples, {} components, side {}), type counts {:?}",
        args.out.display(),
        samples,
        model.n_components(),
        model.d,
        per_type
    );
    Ok(())
}

// ------------------------------------------------------------------- generate

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Albedo model file (with its anchors next to it).
    #[arg(long, default_value_os_t = default_model_path())]
    pub model: PathBuf,
    /// Dataset directory to create.
    #[arg(long)]
    pub out: PathBuf,
    /// Sample subjects from these UV maps (.f32) instead of the model.
    #[arg(long)]
    pub textures: Option<PathBuf>,
    #[arg(long, default_value_t = 60)]
    pub scenes: usize,
    #[arg(long, default_value_t = 3)]
    pub faces: usize,
    /// Face crop side length in pixels.
    #[arg(long, default_value_t = 96)]
    pub crop: usize,
    #[arg(long, default_value_t = 48)]
    pub mesh_lat: usize,
    #[arg(long, default_value_t = 96)]
    pub mesh_lon: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; 1 = sequential, 0 or absent = all cores.
    #[arg(long)]
    pub jobs: Option<usize>,
}

pub fn generate(args: &GenerateArgs) -> CmdResult {
    let par = Parallelism::from_jobs(args.jobs);
    let cfg = GenerateConfig {
        n_scenes: args.scenes,
        faces_per_scene: args.faces,
        crop_size: args.crop,
        mesh_lat: args.mesh_lat,
        mesh_lon: args.mesh_lon,
        seed: args.seed,
    };
    cfg.validate().map_err(|e| Failure::Input(e.to_string()))?;

    let manifest = if let Some(dir) = &args.textures {
        let maps = load_texture_dir(dir)?;
        generate_dataset(&AlbedoSource::Textures(&maps), &cfg, &args.out, par)?
    } else {
        let (model, anchors) = load_model_and_anchors(&args.model)?;
        let source = AlbedoSource::Pca {
            model: &model,
            anchors: &anchors,
        };
        generate_dataset(&source, &cfg, &args.out, par)?
    };

    write_run_json(
        &args.out,
        "generate",
        Some(args.seed),
        serde_json::to_value(&cfg)?,
    )?;
    println!(
        "dataset: {} ({} scenes x {} faces, crop {}), type counts {:?}",
        args.out.display(),
        manifest.n_scenes,
        manifest.faces_per_scene,
        manifest.crop_size,
        manifest.type_counts
    );
    Ok(())
}

// ------------------------------------------------------------------------ fit

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Dataset directory produced by `generate`.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Albedo model file.
    #[arg(long, default_value_os_t = default_model_path())]
    pub model: PathBuf,
    /// Output directory: fits/<scene>.json and predictions/<face>.f32.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub optim: OptimFlags,
    /// Worker threads; 1 = sequential, 0 or absent = all cores.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Drop the scene-consistency term.
    #[arg(long)]
    pub no_scene_consistency: bool,
    /// Skip the conditioned intensity initialization.
    #[arg(long)]
    pub no_condition_init: bool,
    /// One light intensity per face instead of a scene-shared one.
    #[arg(long)]
    pub no_share_intensity: bool,
    /// Gate off the supervised terms (no ground truth is read).
    #[arg(long)]
    pub unsupervised: bool,
}

/// What `fit` records per scene. `seed` is the effective per-scene seed;
/// `config.seed` is the base the batch ran with.
#[derive(Serialize)]
struct FitRecord<'a> {
    scene_id: &'a str,
    seed: u64,
    version: &'a str,
    config: &'a OptimConfig,
    final_losses: LossBreakdown,
    final_objective: f64,
    faces: Vec<FaceFit<'a>>,
    trace: &'a [alight_core::fit::TraceEntry],
}

#[derive(Serialize)]
struct FaceFit<'a> {
    face_id: &'a str,
    intensity: [f64; 3],
    gamma: ShCoeffs,
    alpha: &'a [f64],
}

/// Writes fit records and predicted albedo maps; returns the failure count.
fn write_fit_outputs(
    model: &PcaModel,
    manifest: &DatasetManifest,
    outcomes: &[alight_core::Result<FitOutcome>],
    cfg: &OptimConfig,
    out: &Path,
) -> Result<usize, Failure> {
    let fits_dir = out.join("fits");
    let pred_dir = out.join("predictions");
    fs::create_dir_all(&fits_dir)?;
    fs::create_dir_all(&pred_dir)?;
    let mut failures = 0usize;
    for (i, (scene, outcome)) in manifest.scenes.iter().zip(outcomes).enumerate() {
        match outcome {
            Ok(fit) => {
                let mut faces = Vec::with_capacity(scene.faces.len());
                for (f, rec) in scene.faces.iter().enumerate() {
                    let map = model.synthesize(&fit.variables.alphas[f])?;
                    formats::save_f32(
                        &pred_dir.join(format!("{}.f32", rec.face_id)),
                        &map,
                        "albedo",
                    )?;
                    faces.push(FaceFit {
                        face_id: &rec.face_id,
                        intensity: fit.variables.intensity(f),
                        gamma: fit.variables.gamma(f),
                        alpha: &fit.variables.alphas[f],
                    });
                }
                let record = FitRecord {
                    scene_id: &scene.scene_id,
                    seed: cfg.seed.wrapping_add(i as u64),
                    version: VERSION,
                    config: cfg,
                    final_losses: fit.final_losses,
                    final_objective: fit.final_objective,
                    faces,
                    trace: &fit.trace,
                };
                fs::write(
                    fits_dir.join(format!("{}.json", scene.scene_id)),
                    serde_json::to_vec_pretty(&record)?,
                )?;
            }
            Err(e) => {
                eprintln!("scene {}: {e}", scene.scene_id);
                failures += 1;
            }
        }
    }
    Ok(failures)
}

pub fn fit(args: &FitArgs) -> CmdResult {
    require_dir(&args.dataset, "dataset")?;
    require_file(&args.dataset.join(benchmark::MANIFEST_NAME), "manifest")?;
    let (model, _) = load_model_and_anchors(&args.model)?;
    let mut cfg = effective_optim(&args.optim)?;
    if args.no_scene_consistency {
        cfg.use_scene_consistency = false;
    }
    if args.no_condition_init {
        cfg.condition_init = false;
    }
    if args.no_share_intensity {
        cfg.share_intensity = false;
    }
    if args.unsupervised {
        cfg.weights.supervised = false;
    }
    let par = Parallelism::from_jobs(args.jobs);

    let manifest = load_manifest(&args.dataset)?;
    let supervised = cfg.weights.supervised;
    let mut observations = Vec::with_capacity(manifest.scenes.len());
    for scene in &manifest.scenes {
        observations.push(load_scene_observation(&args.dataset, scene, supervised)?);
    }

    let outcomes = fit_batch(&model, &observations, &cfg, par);
    let failures = write_fit_outputs(&model, &manifest, &outcomes, &cfg, &args.out)?;
    write_run_json(&args.out, "fit", Some(cfg.seed), serde_json::to_value(&cfg)?)?;
    println!(
        "fit: {} scenes, {} failed, output {}",
        manifest.scenes.len(),
        failures,
        args.out.display()
    );
    if failures > 0 {
        return Err(Failure::Runtime(format!(
            "{failures} of {} scenes failed to fit",
            manifest.scenes.len()
        )));
    }
    Ok(())
}

// ------------------------------------------------------------------- evaluate

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Dataset directory with ground truth.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Directory of predicted albedo maps (<face_id>.f32).
    #[arg(long)]
    pub pred: PathBuf,
    /// Report directory (report.json, detail.csv, summary.csv, chart.svg).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn evaluate(args: &EvaluateArgs) -> CmdResult {
    require_dir(&args.dataset, "dataset")?;
    require_file(&args.dataset.join(benchmark::MANIFEST_NAME), "manifest")?;
    require_dir(&args.pred, "predictions")?;
    let report = evaluate_core(&args.dataset, &args.pred)?;
    render_report(&report, &args.out)?;
    write_run_json(
        &args.out,
        "evaluate",
        None,
        serde_json::json!({
            "faces": report.faces,
            "skipped_faces": report.skipped_faces,
        }),
    )?;
    println!(
        "avg ITA {:.2} deg, bias {:.2} deg, score {:.2}, MAE {:.4} ({} faces, {} skipped)",
        report.avg_ita_deg, report.bias_deg, report.score, report.mae, report.faces,
        report.skipped_faces
    );
    Ok(())
}

// --------------------------------------------------------------------- ablate

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Dataset directory produced by `generate`.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Albedo model file.
    #[arg(long, default_value_os_t = default_model_path())]
    pub model: PathBuf,
    /// Output directory; each arm gets a subdirectory.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub optim: OptimFlags,
    /// Worker threads; 1 = sequential, 0 or absent = all cores.
    #[arg(long)]
    pub jobs: Option<usize>,
}

/// The ablation arms: scene consistency and conditioned initialization,
/// alone and together. All arms run unsupervised with a shared intensity;
/// supervision would mask exactly the effects being compared.
const ARMS: [(&str, bool, bool); 4] = [
    ("none", false, false),
    ("sc", true, false),
    ("cond", false, true),
    ("both", true, true),
];

#[derive(Serialize)]
struct ArmRow<'a> {
    arm: &'a str,
    scene_consistency: bool,
    condition_init: bool,
    avg_ita_deg: f64,
    bias_deg: f64,
    score: f64,
    mae: f64,
}

pub fn ablate(args: &AblateArgs) -> CmdResult {
    require_dir(&args.dataset, "dataset")?;
    require_file(&args.dataset.join(benchmark::MANIFEST_NAME), "manifest")?;
    let (model, _) = load_model_and_anchors(&args.model)?;
    let base = effective_optim(&args.optim)?;
    let par = Parallelism::from_jobs(args.jobs);

    let manifest = load_manifest(&args.dataset)?;
    let mut observations = Vec::with_capacity(manifest.scenes.len());
    for scene in &manifest.scenes {
        observations.push(load_scene_observation(&args.dataset, scene, false)?);
    }

    let mut rows = Vec::new();
    let mut failures = 0usize;
    let mut reports: Vec<(&str, MetricsReport)> = Vec::new();
    for (arm, sc, cond) in ARMS {
        let mut cfg = base.clone();
        cfg.use_scene_consistency = sc;
        cfg.condition_init = cond;
        cfg.weights.supervised = false;
        cfg.share_intensity = true;
        let arm_dir = args.out.join(arm);
        let outcomes = fit_batch(&model, &observations, &cfg, par);
        failures += write_fit_outputs(&model, &manifest, &outcomes, &cfg, &arm_dir)?;
        let report = evaluate_core(&args.dataset, &arm_dir.join("predictions"))?;
        render_report(&report, &arm_dir)?;
        println!(
            "arm {arm:>4}: avg ITA {:7.2} deg, bias {:7.2} deg, score {:7.2}, MAE {:.4}",
            report.avg_ita_deg, report.bias_deg, report.score, report.mae
        );
        rows.push(ArmRow {
            arm,
            scene_consistency: sc,
            condition_init: cond,
            avg_ita_deg: report.avg_ita_deg,
            bias_deg: report.bias_deg,
            score: report.score,
            mae: report.mae,
        });
        reports.push((arm, report));
    }

    let summary = serde_json::json!({
        "version": VERSION,
        "seed": base.seed,
        "iterations": base.iterations,
        "arms": rows,
    });
    fs::write(
        args.out.join("ablation.json"),
        serde_json::to_vec_pretty(&summary)?,
    )?;

    // Same column layout as evaluate's summary.csv, keyed by arm.
    let mut csv =
        String::from("arm,ita_I,ita_II,ita_III,ita_IV,ita_V,ita_VI,avg_ita,bias,score,mae\n");
    for (arm, report) in &reports {
        csv.push_str(arm);
        csv.push(',');
        for t in SkinType::ALL {
            match report.per_type.iter().find(|r| r.skin_type == t) {
                Some(row) => csv.push_str(&format!("{:.4},", row.mean_ita_error_deg)),
                None => csv.push(','),
            }
        }
        csv.push_str(&format!(
            "{:.4},{:.4},{:.4},{:.6}\n",
            report.avg_ita_deg, report.bias_deg, report.score, report.mae
        ));
    }
    fs::write(args.out.join("ablation.csv"), csv)?;
    write_run_json(
        &args.out,
        "ablate",
        Some(base.seed),
        serde_json::to_value(&base)?,
    )?;
    if failures > 0 {
        return Err(Failure::Runtime(format!("{failures} arm fits failed")));
    }
    Ok(())
}
