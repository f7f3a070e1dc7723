//! Finite-difference validation of the analytic gradients.
//!
//! The objective is piecewise smooth (L1 everywhere), so a central
//! difference is only trustworthy when no residual changes sign across the
//! probe interval; probes that straddle a kink are rejected and resampled.
//! Each loss term is probed in isolation (by zeroing the other weights) on
//! top of the combined objective, so a wrong gradient cannot hide behind
//! the other terms.

use std::fs;
use std::path::PathBuf;

use clap::Args;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use alight_core::albedo::{self, build_model, LibraryConfig};
use alight_core::benchmark::{synthesize_scene, AlbedoSource, GenerateConfig};
use alight_core::fit::{init_scene, FaceObservation, Objective, OptimConfig, SceneObservation};
use alight_core::losses::LossWeights;
use alight_core::raster::{head_mesh, warp};
use alight_core::{Parallelism, Result as CoreResult};

use crate::{write_run_json, CmdResult, Failure, VERSION};

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Accepted non-kink probes required for the combined objective
    /// (isolated terms each get a quarter of this).
    #[arg(long, default_value_t = 100)]
    pub probes: usize,
    /// Corrupt each probed gradient entry first; the checks must then fail
    /// (negative control for the harness itself).
    #[arg(long)]
    pub corrupt: bool,
    /// Also write gradcheck.json (and run.json) here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ProbeSummary {
    objective: String,
    accepted: usize,
    rejected_kinks: usize,
    max_rel_err: f64,
    failed_probes: usize,
}

#[derive(Serialize)]
struct GradcheckReport {
    version: &'static str,
    seed: u64,
    corrupt: bool,
    tolerance: f64,
    pass: bool,
    checks: Vec<ProbeSummary>,
}

const REL_TOL: f64 = 1e-4;

fn fixture(seed: u64) -> CoreResult<(albedo::PcaModel, SceneObservation)> {
    let lib = LibraryConfig {
        d: 64,
        per_type: 5,
        seed,
    };
    let (model, _, anchors) = build_model(&lib, 20, Parallelism::Auto)?;
    let cfg = GenerateConfig {
        n_scenes: 1,
        faces_per_scene: 3,
        crop_size: 48,
        mesh_lat: 24,
        mesh_lon: 48,
        seed,
    };
    let mesh = head_mesh(cfg.mesh_lat, cfg.mesh_lon);
    let source = AlbedoSource::Pca {
        model: &model,
        anchors: &anchors,
    };
    let scene = synthesize_scene(&source, &mesh, &cfg, 0)?;
    let skin = albedo::skin_mask(model.d);
    let mut faces = Vec::with_capacity(scene.faces.len());
    for f in &scene.faces {
        faces.push(FaceObservation {
            crop: f.crop.clone(),
            gbuffer: f.gbuffer.clone(),
            skin_mask_uv: skin.clone(),
            gt_light: Some(scene.gamma),
            gt_albedo_render: Some(warp(&f.albedo_map, &f.gbuffer)?),
        });
    }
    Ok((model, SceneObservation { faces }))
}

/// Weight patterns: the full objective plus each term alone.
fn objectives(seed: u64) -> Vec<(String, OptimConfig)> {
    let combined = OptimConfig {
        seed,
        ..Default::default()
    };
    let isolated = |name: &str, pho: f64, sc: f64, sh: f64, alb: f64, supervised: bool| {
        (
            name.to_string(),
            OptimConfig {
                weights: LossWeights {
                    pho,
                    sc,
                    sh,
                    alb,
                    supervised,
                },
                alpha_prior: 0.0,
                seed,
                ..Default::default()
            },
        )
    };
    vec![
        ("combined".to_string(), combined),
        isolated("photometric", 1.0, 0.0, 0.0, 0.0, false),
        isolated("scene-consistency", 0.0, 1.0, 0.0, 0.0, false),
        isolated("sh-supervision", 0.0, 0.0, 1.0, 0.0, true),
        isolated("albedo-supervision", 0.0, 0.0, 0.0, 1.0, true),
    ]
}

fn probe(
    model: &albedo::PcaModel,
    obs: &SceneObservation,
    name: &str,
    cfg: &OptimConfig,
    target: usize,
    corrupt: bool,
) -> Result<ProbeSummary, Failure> {
    let objective = Objective::new(model, obs, cfg)?;

    // A generic point: away from the init's many exact ties (zero alphas,
    // aligned directions) where the L1 terms sit on kinks by construction.
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed ^ 0x9c0b);
    let mut vars = init_scene(model, obs, cfg)?;
    for a in vars.alphas.iter_mut() {
        for v in a.iter_mut() {
            *v = 0.4 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    for dir in vars.directions.iter_mut() {
        for ch in dir.iter_mut() {
            for v in ch.iter_mut() {
                *v += 0.15 * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    vars.renormalize_directions();
    for li in vars.log_intensity.iter_mut() {
        for v in li.iter_mut() {
            *v += 0.2 * rng.sample::<f64, _>(StandardNormal);
        }
    }

    let sc_seed = cfg.seed;
    let analytic = objective.gradient(&vars, sc_seed);
    let flat = vars.flatten();
    let dim = flat.len();

    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut failed = 0usize;
    let mut max_rel: f64 = 0.0;
    let max_attempts = target * 40;
    for _ in 0..max_attempts {
        if accepted >= target {
            break;
        }
        let j = rng.random_range(0..dim);
        let h = 1e-6 * flat[j].abs().max(1.0);
        let mut fp = flat.clone();
        fp[j] += h;
        let mut vp = vars.clone();
        vp.unflatten(&fp);
        let mut fm = flat.clone();
        fm[j] -= h;
        let mut vm = vars.clone();
        vm.unflatten(&fm);
        if objective.residual_signs(&vp, sc_seed) != objective.residual_signs(&vm, sc_seed) {
            rejected += 1;
            continue;
        }
        let fd = (objective.value(&vp, sc_seed) - objective.value(&vm, sc_seed)) / (2.0 * h);
        let mut g = analytic[j];
        if corrupt {
            g += 1e-2 * (1.0 + g.abs());
        }
        if fd.abs() < 1e-6 && g.abs() < 1e-6 {
            // Both vanish: a flat direction carries no information.
            continue;
        }
        let rel = (fd - g).abs() / fd.abs().max(1e-3);
        accepted += 1;
        max_rel = max_rel.max(rel);
        if rel >= REL_TOL {
            failed += 1;
        }
    }
    if accepted < target {
        return Err(Failure::Runtime(format!(
            "{name}: only {accepted}/{target} informative probes in {max_attempts} attempts"
        )));
    }
    Ok(ProbeSummary {
        objective: name.to_string(),
        accepted,
        rejected_kinks: rejected,
        max_rel_err: max_rel,
        failed_probes: failed,
    })
}

pub fn run(args: &GradcheckArgs) -> CmdResult {
    let (model, obs) = fixture(args.seed)?;
    let mut checks = Vec::new();
    for (name, cfg) in objectives(args.seed) {
        let target = if name == "combined" {
            args.probes
        } else {
            (args.probes / 4).max(10)
        };
        let summary = probe(&model, &obs, &name, &cfg, target, args.corrupt)?;
        println!(
            "{:<20} {:>4} probes ({} kinks rejected), max rel err {:.3e}  {}",
            summary.objective,
            summary.accepted,
            summary.rejected_kinks,
            summary.max_rel_err,
            if summary.failed_probes == 0 {
                "PASS"
            } else {
                "FAIL"
            }
        );
        checks.push(summary);
    }
    let pass = checks.iter().all(|c| c.failed_probes == 0);
    let report = GradcheckReport {
        version: VERSION,
        seed: args.seed,
        corrupt: args.corrupt,
        tolerance: REL_TOL,
        pass,
        checks,
    };
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        fs::write(
            dir.join("gradcheck.json"),
            serde_json::to_vec_pretty(&report)?,
        )?;
        write_run_json(
            dir,
            "gradcheck",
            Some(args.seed),
            serde_json::json!({"probes": args.probes, "corrupt": args.corrupt}),
        )?;
    }
    if !pass {
        return Err(Failure::Runtime(
            "analytic gradients disagree with finite differences".to_string(),
        ));
    }
    Ok(())
}
