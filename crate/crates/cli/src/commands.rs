//! Command implementations behind the CLI verbs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rinv_core::diffusion::train_denoiser;
use rinv_core::error::{Error, Result};
use rinv_core::forward::{build_imaging_matrix, forward_measure, to_magnitude, Heatmap};
use rinv_core::grid::{mask_to_points, PointSet, SceneMask};
use rinv_core::io as fio;
use rinv_core::metrics::compute_metrics;
use rinv_core::nn::{load_checkpoint, save_checkpoint, DenoiserModel};
use rinv_core::scene::generate_scene;
use rinv_core::solvers::{
    cfar_detect, posterior_sample, run_sweep, run_variance_study, solve_regularized, RegConfig,
    RegNorm,
};

use crate::config::RunConfig;

fn write_csv(path: &Path, content: &str) -> Result<()> {
    fio::write_atomic(path, content.as_bytes())
}

pub fn cmd_gen_scenes(cfg: &RunConfig, count: usize, out_dir: &Path, seed: u64) -> Result<()> {
    let grid = cfg.build_grid()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut manifest = String::from("index,seed,file\n");
    for i in 0..count {
        let scene_seed = seed.wrapping_add(i as u64);
        let spec = cfg.scene_spec(scene_seed);
        let mask = generate_scene(&spec, &grid)?;
        let name = format!("scene_{i:04}.grid");
        fio::write_scene_mask(&out_dir.join(&name), &mask)?;
        manifest.push_str(&format!("{i},{scene_seed},{name}\n"));
    }
    write_csv(&out_dir.join("manifest.csv"), &manifest)?;
    println!("wrote {count} scene(s) to {}", out_dir.display());
    Ok(())
}

pub fn cmd_simulate(
    cfg: &RunConfig,
    scene_path: &Path,
    out_path: &Path,
    array_override: Option<&str>,
    complex_out: Option<&Path>,
    seed: u64,
) -> Result<()> {
    let scene = fio::read_scene_mask(scene_path)?;
    let grid = cfg.build_grid()?;
    if scene.grid != grid {
        return Err(Error::GridMismatch {
            expected: grid.dims(),
            got: scene.grid.dims(),
            context: "simulate",
        });
    }
    let array = match array_override {
        Some(name) => rinv_core::forward::AntennaArray::from_preset(name)?,
        None => cfg.build_array()?,
    };
    let b = build_imaging_matrix(&grid, &array);
    let complex = forward_measure(&scene, &b, cfg.noise_sigma, seed)?;
    if let Some(cpath) = complex_out {
        fio::write_complex_heatmap(cpath, &complex)?;
    }
    let magnitude = to_magnitude(&complex, true)?;
    fio::write_magnitude_heatmap(out_path, &magnitude)?;
    println!(
        "simulated {} antennas onto {}",
        array.n_antennas,
        out_path.display()
    );
    Ok(())
}

fn list_scene_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().map(|x| x == "grid").unwrap_or(false))
        .collect();
    files.sort();
    Ok(files)
}

pub fn cmd_train(
    cfg: &RunConfig,
    scenes_dir: &Path,
    out_ckpt: &Path,
    loss_csv: Option<&Path>,
    seed: u64,
) -> Result<()> {
    let files = list_scene_files(scenes_dir)?;
    if files.is_empty() {
        return Err(Error::Invalid(format!(
            "no .grid scenes in {}",
            scenes_dir.display()
        )));
    }
    let scenes: Vec<SceneMask> = files
        .iter()
        .map(|p| fio::read_scene_mask(p))
        .collect::<Result<_>>()?;
    let sched = cfg.build_schedule()?;
    let start = Instant::now();
    let (model, trace) = train_denoiser(&scenes, cfg.codec, &sched, &cfg.train_config(seed))?;
    save_checkpoint(out_ckpt, &model)?;
    let mut csv = String::from("epoch,mean_loss\n");
    for (epoch, loss) in &trace {
        csv.push_str(&format!("{epoch},{loss}\n"));
    }
    let loss_path = match loss_csv {
        Some(p) => p.to_path_buf(),
        None => out_ckpt.with_extension("loss.csv"),
    };
    write_csv(&loss_path, &csv)?;
    println!(
        "trained on {} scene(s) in {:.1}s; first/last epoch loss {:.6}/{:.6}",
        scenes.len(),
        start.elapsed().as_secs_f64(),
        trace.first().map(|t| t.1).unwrap_or(f64::NAN),
        trace.last().map(|t| t.1).unwrap_or(f64::NAN),
    );
    Ok(())
}

pub fn cmd_enhance(
    cfg: &RunConfig,
    heatmap_path: &Path,
    method: &str,
    checkpoint: Option<&Path>,
    out_mask: &Path,
    out_points: &Path,
    seed: u64,
) -> Result<()> {
    let y = fio::read_magnitude_heatmap(heatmap_path)?;
    let grid = y.grid().clone();
    let array = cfg.build_array()?;
    let b = build_imaging_matrix(&grid, &array);
    let start = Instant::now();
    let mask = match method {
        "posterior" => {
            let ckpt = checkpoint.ok_or_else(|| {
                Error::Invalid("method 'posterior' needs --checkpoint".into())
            })?;
            let model: DenoiserModel = load_checkpoint(ckpt)?;
            let sched = cfg.build_schedule()?;
            let (mask, _) = posterior_sample(
                &y,
                &b,
                &model,
                cfg.codec,
                &sched,
                &cfg.posterior_config(seed),
                None,
            )?;
            mask
        }
        "l1" => solve_regularized(&y, &b, &cfg.reg_config(RegNorm::L1, seed), &grid)?,
        "l2" => solve_regularized(&y, &b, &cfg.reg_config(RegNorm::L2, seed), &grid)?,
        "cfar" => cfar_detect(&y, &cfg.cfar_config())?,
        other => {
            return Err(Error::Invalid(format!(
                "unknown method '{other}' (expected posterior, l1, l2, cfar)"
            )))
        }
    };
    let elapsed = start.elapsed().as_secs_f64();
    fio::write_scene_mask(out_mask, &mask)?;
    let points = mask_to_points(&mask, cfg.threshold);
    fio::write_points_csv(out_points, &points)?;
    println!(
        "{method}: {} point(s) in {elapsed:.2}s -> {}",
        points.len(),
        out_points.display()
    );
    Ok(())
}

pub fn cmd_eval(pred: &Path, gt: &Path, out_csv: &Path, frame: Option<&str>) -> Result<()> {
    let pred_pts = fio::read_points_csv(pred)?;
    let gt_pts = fio::read_points_csv(gt)?;
    let report = compute_metrics(&pred_pts, &gt_pts)?;
    let frame_name = match frame {
        Some(f) => f.to_string(),
        None => pred
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "frame".to_string()),
    };
    let mut content = match fs::read_to_string(out_csv) {
        Ok(existing) if existing.starts_with("frame,") => existing,
        _ => String::from("frame,cd,ucd,mhd,umhd,n_pred,n_gt\n"),
    };
    content.push_str(&format!(
        "{frame_name},{},{},{},{},{},{}\n",
        report.cd, report.ucd, report.mhd, report.umhd, report.n_pred, report.n_gt
    ));
    write_csv(out_csv, &content)?;
    println!(
        "cd={} ucd={} mhd={} umhd={}",
        report.cd, report.ucd, report.mhd, report.umhd
    );
    Ok(())
}

/// Simulates each scene and pairs it with its own ground-truth points.
fn load_scene_measurements(
    cfg: &RunConfig,
    scenes_dir: &Path,
    seed: u64,
) -> Result<(Vec<Heatmap>, Vec<PointSet>)> {
    let grid = cfg.build_grid()?;
    let array = cfg.build_array()?;
    let b = build_imaging_matrix(&grid, &array);
    let files = list_scene_files(scenes_dir)?;
    if files.is_empty() {
        return Err(Error::Invalid(format!(
            "no .grid scenes in {}",
            scenes_dir.display()
        )));
    }
    let mut ys = Vec::new();
    let mut gts = Vec::new();
    for (i, f) in files.iter().enumerate() {
        let scene = fio::read_scene_mask(f)?;
        if scene.grid != grid {
            return Err(Error::GridMismatch {
                expected: grid.dims(),
                got: scene.grid.dims(),
                context: "sweep/variance scene load",
            });
        }
        let complex = forward_measure(&scene, &b, cfg.noise_sigma, seed.wrapping_add(i as u64))?;
        ys.push(to_magnitude(&complex, true)?);
        gts.push(mask_to_points(&scene, 0.5));
    }
    Ok((ys, gts))
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_sweep(
    cfg: &RunConfig,
    scenes_dir: &Path,
    checkpoint: &Path,
    out_csv: &Path,
    zetas: &[f64],
    ks: &[usize],
    gammas: &[f64],
    seed: u64,
) -> Result<()> {
    let (ys, gts) = load_scene_measurements(cfg, scenes_dir, seed)?;
    let grid = cfg.build_grid()?;
    let array = cfg.build_array()?;
    let b = build_imaging_matrix(&grid, &array);
    let model = load_checkpoint(checkpoint)?;
    let sched = cfg.build_schedule()?;
    let base = cfg.posterior_config(seed);
    let report = run_sweep(
        &ys, &b, &model, cfg.codec, &sched, &base, zetas, ks, gammas, &gts,
    )?;
    let mut csv = String::from("zeta,K,gamma,mean_cd\n");
    for row in &report.rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.zeta, row.k_meas, row.gamma, row.mean_cd
        ));
    }
    write_csv(out_csv, &csv)?;
    let best = &report.rows[report.best];
    println!(
        "best: zeta={} K={} gamma={} mean_cd={}",
        best.zeta, best.k_meas, best.gamma, best.mean_cd
    );
    Ok(())
}

pub fn cmd_variance(
    cfg: &RunConfig,
    scene_path: &Path,
    checkpoint: &Path,
    n_seeds: usize,
    out_csv: &Path,
    seed: u64,
) -> Result<()> {
    let grid = cfg.build_grid()?;
    let scene = fio::read_scene_mask(scene_path)?;
    if scene.grid != grid {
        return Err(Error::GridMismatch {
            expected: grid.dims(),
            got: scene.grid.dims(),
            context: "variance scene load",
        });
    }
    let array = cfg.build_array()?;
    let b = build_imaging_matrix(&grid, &array);
    let complex = forward_measure(&scene, &b, cfg.noise_sigma, seed)?;
    let y = to_magnitude(&complex, true)?;
    let gt = mask_to_points(&scene, 0.5);
    let model = load_checkpoint(checkpoint)?;
    let sched = cfg.build_schedule()?;
    let study = run_variance_study(
        &y,
        &b,
        &model,
        cfg.codec,
        &sched,
        &cfg.posterior_config(seed),
        &[
            ("l1", RegConfig { norm: RegNorm::L1, ..cfg.reg_config(RegNorm::L1, 0) }),
            ("l2", RegConfig { norm: RegNorm::L2, ..cfg.reg_config(RegNorm::L2, 0) }),
        ],
        n_seeds,
        &gt,
    )?;
    let mut csv = String::from("method,seed,final_cd\n");
    let stem = out_csv
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "variance".into());
    let dir = out_csv.parent().unwrap_or_else(|| Path::new("."));
    for method in &study.methods {
        for (run_seed, final_cd, trace) in &method.runs {
            csv.push_str(&format!("{},{run_seed},{final_cd}\n", method.method));
            let mut trace_csv = String::from("step,fidelity,cd\n");
            for row in trace {
                let cd = row.cd.map(|v| v.to_string()).unwrap_or_else(|| "NaN".into());
                trace_csv.push_str(&format!("{},{},{cd}\n", row.step, row.fidelity));
            }
            let trace_path = dir.join(format!("{stem}_{}_seed{run_seed}.csv", method.method));
            write_csv(&trace_path, &trace_csv)?;
        }
        println!(
            "{}: final CD mean {:.4} std {:.4}",
            method.method, method.final_cd_mean, method.final_cd_std
        );
    }
    write_csv(out_csv, &csv)?;
    Ok(())
}

pub fn cmd_render(input: &Path, out: &Path, mode: &str) -> Result<()> {
    let mode = match mode {
        "gray" => fio::RenderMode::Gray,
        "log" => fio::RenderMode::Log,
        other => {
            return Err(Error::Invalid(format!(
                "unknown render mode '{other}' (expected gray or log)"
            )))
        }
    };
    let (_, values) = fio::read_grid_file(input)?;
    fio::write_pgm(out, &values, mode)?;
    println!("rendered {}", out.display());
    Ok(())
}
