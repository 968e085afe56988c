use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sqparse::io::{
    export_ensemble_mesh, load_ensemble, load_geometry, normalize_cloud, normalize_mesh, save_ensemble,
    save_trace_csv, write_ply_ascii, Geometry, Mesh, PointCloud,
};
use sqparse::loss::{cloud_to_prim_expected, expectation_oracle_suite, BRUTE_FORCE_MAX_PRIMITIVES};
use sqparse::metrics::{
    active_primitives, chamfer_eval, ensemble_surface_points, volumetric_iou, EvalConfig, Truth,
};
use sqparse::sampler::sample_mesh_surface;

use crate::args::{CheckGradArgs, CheckLossArgs, EvalArgs, ExportArgs, FitArgs, SampleArgs};
use crate::{CliError, Report};

type Result<T> = std::result::Result<T, CliError>;

fn default_trace_path(output: &Path) -> PathBuf {
    let mut name = output.file_stem().unwrap_or_default().to_os_string();
    name.push(".trace.csv");
    output.with_file_name(name)
}

/// Chamfer distance that reports `None` instead of failing when no
/// primitive clears the threshold.
fn chamfer_if_active(
    ensemble: &sqparse::Ensemble,
    target: &PointCloud,
    cfg: &EvalConfig,
) -> Result<Option<f64>> {
    match chamfer_eval(ensemble, target, cfg) {
        Ok(c) => Ok(Some(c)),
        Err(sqparse::Error::NoActivePrimitives) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

pub fn fit(args: FitArgs) -> Result<Report> {
    let cfg = args.config();
    let eval = args.eval_config();
    cfg.validate()?;
    eval.validate()?;

    let (cloud, eval_target, record) = match load_geometry(&args.input)? {
        Geometry::Mesh(mesh) => {
            let (mesh, record) = normalize_mesh(&mesh)?;
            let pool = sample_mesh_surface(&mesh, args.pool_size, cfg.seed)?;
            let target = sample_mesh_surface(&mesh, eval.eval_n, cfg.seed.wrapping_add(1))?;
            (pool, target, record)
        }
        Geometry::Cloud(cloud) => {
            let (cloud, record) = normalize_cloud(&cloud);
            (cloud.clone(), cloud, record)
        }
    };

    let out = sqparse::fit(&cloud, &cfg)?;
    save_ensemble(&args.output, &out.ensemble, &record)?;
    if !args.no_trace {
        let path = args.trace.clone().unwrap_or_else(|| default_trace_path(&args.output));
        save_trace_csv(&out.trace, path)?;
    }
    for r in &out.failed_restarts {
        eprintln!("warning: restart {r} produced a non-finite loss and was discarded");
    }

    let chamfer = chamfer_if_active(&out.ensemble, &eval_target, &eval)?;
    let r = &out.report;
    Ok(Report::ok(json!({
        "l_px": r.l_px,
        "l_xp": r.l_xp,
        "l_recon": r.l_recon,
        "l_parsimony": r.l_parsimony,
        "l_total": r.l_total,
        "sum_gamma": out.ensemble.sum_gamma(),
        "active": active_primitives(&out.ensemble, eval.gamma_threshold).len(),
        "chamfer": chamfer,
        "restart": out.restart,
        "failed_restarts": out.failed_restarts,
    })))
}

pub fn eval(args: EvalArgs) -> Result<Report> {
    let cfg = args.config();
    cfg.validate()?;
    let (ensemble, record) = load_ensemble(&args.ensemble)?;
    let active = active_primitives(&ensemble, cfg.gamma_threshold).len();
    if active == 0 {
        return Err(sqparse::Error::NoActivePrimitives.into());
    }

    let (chamfer, iou) = match load_geometry(&args.target)? {
        Geometry::Mesh(mesh) => {
            let mesh = mesh.transformed(|p| record.apply(p));
            let target = sample_mesh_surface(&mesh, cfg.eval_n, cfg.seed)?;
            let chamfer = chamfer_eval(&ensemble, &target, &cfg)?;
            let iou = volumetric_iou(&ensemble, Truth::Mesh(&mesh), &cfg)?;
            (chamfer, Some(iou))
        }
        Geometry::Cloud(cloud) => {
            let cloud = PointCloud::new(cloud.points.iter().map(|p| record.apply(p)).collect())?;
            (chamfer_eval(&ensemble, &cloud, &cfg)?, None)
        }
    };
    Ok(Report::ok(json!({ "chamfer": chamfer, "iou": iou, "active": active })))
}

pub fn check_grad(args: CheckGradArgs) -> Result<Report> {
    if args.trials == 0 {
        return Err(CliError::Usage("--trials must be at least 1".into()));
    }
    if args.max_prims == 0 || args.points == 0 || args.k == 0 {
        return Err(CliError::Usage("--max-prims, --points and --k must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let report = sqparse::grad::gradient_check_suite(
        &mut rng,
        args.trials,
        args.max_prims,
        args.points,
        args.k,
        args.step,
        args.trials * 20,
    )?;
    let passed = report.checked == args.trials && report.max_rel_err <= args.tolerance;
    let mut json = serde_json::to_value(&report).expect("report serialises");
    json["tolerance"] = json!(args.tolerance);
    json["pass"] = json!(passed);
    Ok(Report { json, passed })
}

pub fn check_loss(args: CheckLossArgs) -> Result<Report> {
    if args.max_prims > BRUTE_FORCE_MAX_PRIMITIVES {
        return Err(CliError::Usage(format!(
            "--max-prims {} exceeds the exhaustive limit of {BRUTE_FORCE_MAX_PRIMITIVES}",
            args.max_prims
        )));
    }
    if args.trials == 0 || args.max_prims == 0 || args.max_points == 0 {
        return Err(CliError::Usage("--trials, --max-prims and --max-points must be positive".into()));
    }
    let corrupt = args.corrupt_expectation;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let report = expectation_oracle_suite(&mut rng, args.trials, args.max_prims, args.max_points, |d, g| {
        let v = cloud_to_prim_expected(d, g, false)?;
        Ok(if corrupt { v * (1.0 + 1e-6) + 1e-6 } else { v })
    })?;
    let passed = report.max_abs_dev <= args.tolerance;
    let mut json = serde_json::to_value(&report).expect("report serialises");
    json["tolerance"] = json!(args.tolerance);
    json["pass"] = json!(passed);
    Ok(Report { json, passed })
}

pub fn export(args: ExportArgs) -> Result<Report> {
    if args.resolution < 4 {
        return Err(CliError::Usage(format!("--resolution must be at least 4, got {}", args.resolution)));
    }
    let (ensemble, record) = load_ensemble(&args.ensemble)?;
    let denormalize = (!args.normalized).then_some(&record);
    let written = export_ensemble_mesh(&ensemble, args.resolution, args.threshold, &args.output, denormalize)?;
    Ok(Report::ok(json!({ "primitives": written, "output": args.output })))
}

pub fn sample(args: SampleArgs) -> Result<Report> {
    if args.count == 0 {
        return Err(CliError::Usage("--count must be positive".into()));
    }
    let is_ensemble = args
        .input
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let points = if is_ensemble {
        let (ensemble, record) = load_ensemble(&args.input)?;
        let local = ensemble_surface_points(&ensemble, args.gamma_threshold, args.count)?;
        if args.normalized {
            local
        } else {
            local.iter().map(|p| record.invert(p)).collect()
        }
    } else {
        let mesh = match load_geometry(&args.input)? {
            Geometry::Mesh(mesh) => mesh,
            Geometry::Cloud(_) => {
                return Err(CliError::Usage(format!("{} has no faces to sample", args.input.display())));
            }
        };
        sample_mesh_surface(&mesh, args.count, args.seed)?.points
    };

    let ext = args.output.extension().and_then(|e| e.to_str()).unwrap_or("");
    let text = match ext.to_ascii_lowercase().as_str() {
        "xyz" => points.iter().map(|p| format!("{} {} {}\n", p.x, p.y, p.z)).collect::<String>(),
        "ply" => write_ply_ascii(&Mesh::new(points.clone(), Vec::new())?),
        other => {
            return Err(CliError::Usage(format!("unsupported output extension {other:?}; use .xyz or .ply")));
        }
    };
    std::fs::write(&args.output, text).map_err(sqparse::Error::from)?;
    Ok(Report::ok(json!({ "points": points.len(), "output": args.output })))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_path_sits_next_to_output() {
        assert_eq!(
            default_trace_path(Path::new("out/fit.json")),
            PathBuf::from("out/fit.trace.csv")
        );
        assert_eq!(default_trace_path(Path::new("fit")), PathBuf::from("fit.trace.csv"));
    }
}
