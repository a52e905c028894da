use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::Context;
use defocus_core::code_eval::{kl_report, PriorSpectrum};
use defocus_core::data::{
    self, depth_for_size, load_scene_dir, make_synthetic_scene, save_id_list, split, Layout,
    PatchPool, Scene, SceneSpec, SplitSpec, Texture,
};
use defocus_core::formats;
use defocus_core::learner::{
    estimate_depth_map_cnn, hard_binarize, run_iterations, soft_binarize, AnnealSchedule,
    Checkpoint, NetworkParams, RealCode, TrainConfig, TrainState,
};
use defocus_core::optics::ApertureCode;
use defocus_core::sim::{simulate_coded_image, BlurSizeMap, SimOptions};
use defocus_core::wiener::{decisions_to_csv, estimate_depth_map_wiener, WienerConfig};

use crate::settings::Settings;
use crate::{usage, CliError, Command};

type CmdResult = Result<(), CliError>;

pub fn dispatch(command: Command, settings: Settings) -> CmdResult {
    match command {
        Command::Simulate {
            scene_dir,
            code,
            out,
            scene_id,
            noise_sigma,
            boundary,
        } => cmd_simulate(settings, scene_dir, code, out, scene_id, noise_sigma, boundary),
        Command::EvalCode { code, out, scales } => cmd_eval_code(settings, code, out, scales),
        Command::Estimate {
            image,
            code,
            method,
            checkpoint,
            truth,
            out,
            stride,
            nsr,
            boundary,
        } => cmd_estimate(
            settings, image, code, method, checkpoint, truth, out, stride, nsr, boundary,
        ),
        Command::Train {
            scene_dir,
            out,
            iterations,
            batch_size,
            learning_rate,
            resume,
        } => cmd_train(settings, scene_dir, out, iterations, batch_size, learning_rate, resume),
        Command::Compare {
            entry,
            scene_dir,
            out,
            nsr,
            boundary,
            noise_sigma,
        } => cmd_compare(settings, entry, scene_dir, out, nsr, boundary, noise_sigma),
        Command::MakeScenes {
            out,
            count,
            height,
            width,
            textures,
            min_planes,
            max_planes,
        } => cmd_make_scenes(settings, out, count, height, width, textures, min_planes, max_planes),
    }
}

fn parse_boundary_flag(
    flag: Option<String>,
    settings: &mut Settings,
) -> Result<(), CliError> {
    if let Some(b) = flag {
        match b.as_str() {
            "reflect" => settings.boundary = defocus_core::sim::Boundary::Reflect,
            "cyclic" => settings.boundary = defocus_core::sim::Boundary::Cyclic,
            other => return Err(usage(format!("boundary must be reflect|cyclic, got '{other}'"))),
        }
    }
    Ok(())
}

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(out)
        .with_context(|| format!("creating output directory {}", out.display()))?;
    Ok(())
}

/// Reproducibility sidecar: the command, its inputs, and every resolved
/// setting. Thread count is deliberately omitted (it cannot change output).
fn write_meta(out: &Path, command: &str, inputs: &[(&str, String)], settings: &Settings) -> CmdResult {
    let mut text = format!("command = {command}\n");
    for (key, value) in inputs {
        let _ = writeln!(text, "{key} = {value}");
    }
    text.push_str(&settings.render());
    std::fs::write(out.join("run_meta.txt"), text)
        .with_context(|| format!("writing sidecar in {}", out.display()))?;
    Ok(())
}

fn load_code(path: &Path) -> Result<ApertureCode, CliError> {
    formats::read_code(path)
        .map_err(|e| CliError::Runtime(anyhow::Error::from(e).context(format!(
            "reading aperture code {}",
            path.display()
        ))))
}

// ---------------------------------------------------------------------------
// simulate
// ---------------------------------------------------------------------------

fn cmd_simulate(
    mut settings: Settings,
    scene_dir: PathBuf,
    code_path: PathBuf,
    out: PathBuf,
    scene_ids: Vec<String>,
    noise_sigma: Option<f64>,
    boundary: Option<String>,
) -> CmdResult {
    parse_boundary_flag(boundary, &mut settings)?;
    if let Some(sigma) = noise_sigma {
        settings.noise_sigma = sigma;
    }
    let code = load_code(&code_path)?;
    let mut scenes = load_scene_dir(&scene_dir)?;
    if !scene_ids.is_empty() {
        scenes.retain(|s| scene_ids.contains(&s.id));
        if scenes.is_empty() {
            return Err(usage("no scene matches the requested ids"));
        }
    }
    if scenes.is_empty() {
        return Err(usage(format!("no scenes found in {}", scene_dir.display())));
    }
    ensure_out_dir(&out)?;
    let cam = settings.camera;
    for (index, scene) in scenes.iter().enumerate() {
        let sizes = scene.size_map(&cam)?;
        let opts = SimOptions {
            patch: settings.patch,
            boundary: settings.boundary,
            noise_sigma: settings.noise_sigma,
            seed: settings.seed.wrapping_add(index as u64),
        };
        let coded = simulate_coded_image(&scene.image, &sizes, &code, &cam, &opts)?;
        formats::write_pgm(&out.join(format!("{}_coded.pgm", scene.id)), &coded)?;
        formats::write_png(&out.join(format!("{}_coded.png", scene.id)), &coded)?;
        formats::write_size_map(&out.join(format!("{}_sizes.txt", scene.id)), &sizes)?;
    }
    write_meta(
        &out,
        "simulate",
        &[
            ("scene_dir", scene_dir.display().to_string()),
            ("code", code_path.display().to_string()),
            ("scenes", scenes.iter().map(|s| s.id.as_str()).collect::<Vec<_>>().join(",")),
        ],
        &settings,
    )?;
    println!("simulated {} scenes into {}", scenes.len(), out.display());
    Ok(())
}

// ---------------------------------------------------------------------------
// eval-code
// ---------------------------------------------------------------------------

fn cmd_eval_code(
    settings: Settings,
    code_paths: Vec<PathBuf>,
    out: PathBuf,
    scales: Option<String>,
) -> CmdResult {
    let scales: Vec<usize> = match scales {
        Some(list) => list
            .split(',')
            .map(|t| t.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|e| usage(format!("bad --scales: {e}")))?,
        None => settings.camera.scales(),
    };
    ensure_out_dir(&out)?;
    let prior = PriorSpectrum::gradient_prior(
        settings.patch,
        settings.prior_amplitude,
        settings.prior_eps,
        settings.prior_noise_sigma,
    )?;
    let mut rows = Vec::new();
    for (index, path) in code_paths.iter().enumerate() {
        let code = load_code(path)?;
        let report = kl_report(&code, &scales, &prior)?;
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| format!("code{index}"));
        let csv_name = format!("{index:02}_{stem}_kl.csv");
        std::fs::write(out.join(&csv_name), report.to_csv())?;
        rows.push((stem, path.display().to_string(), report.score_min, report.score_mean));
    }
    rows.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap_or(std::cmp::Ordering::Equal));
    let mut summary = String::from("rank,name,path,score_min,score_mean\n");
    for (rank, (name, path, score_min, score_mean)) in rows.iter().enumerate() {
        let _ = writeln!(
            summary,
            "{},{name},{path},{score_min:.12e},{score_mean:.12e}",
            rank + 1
        );
    }
    std::fs::write(out.join("summary.csv"), &summary)?;
    print!("{summary}");
    write_meta(
        &out,
        "eval-code",
        &[(
            "codes",
            code_paths.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","),
        )],
        &settings,
    )
}

// ---------------------------------------------------------------------------
// estimate
// ---------------------------------------------------------------------------

fn confusion_csv(map: &BlurSizeMap, truth: &BlurSizeMap, scales: &[usize]) -> String {
    let class_of = |s: usize| (s - 1) / 2;
    let k = scales.len();
    let mut counts = vec![0u64; k * k];
    for (&pred, &actual) in map.sizes().iter().zip(truth.sizes()) {
        let (p, a) = (class_of(pred as usize), class_of(actual as usize));
        if p < k && a < k {
            counts[a * k + p] += 1;
        }
    }
    let mut out = String::from("true\\pred");
    for s in scales {
        let _ = write!(out, ",{s}");
    }
    out.push('\n');
    for (i, s) in scales.iter().enumerate() {
        let _ = write!(out, "{s}");
        for j in 0..k {
            let _ = write!(out, ",{}", counts[i * k + j]);
        }
        out.push('\n');
    }
    out
}

#[allow(clippy::too_many_arguments)]
fn cmd_estimate(
    mut settings: Settings,
    image_path: PathBuf,
    code_path: PathBuf,
    method: String,
    checkpoint: Option<PathBuf>,
    truth: Option<PathBuf>,
    out: PathBuf,
    stride: Option<usize>,
    nsr: Option<f64>,
    boundary: Option<String>,
) -> CmdResult {
    parse_boundary_flag(boundary, &mut settings)?;
    if let Some(v) = nsr {
        settings.nsr = v;
    }
    if let Some(v) = stride {
        settings.stride = v;
    }
    let image = formats::read_gray_auto(&image_path)?;
    let code = load_code(&code_path)?;
    let cam = settings.camera;
    ensure_out_dir(&out)?;

    let map = match method.as_str() {
        "wiener" => {
            let cfg = WienerConfig {
                nsr: settings.nsr,
                scales: cam.scales(),
                boundary: settings.boundary,
                texture_floor: settings.texture_floor,
            };
            let (map, decisions) =
                estimate_depth_map_wiener(&image, &code, &cfg, settings.stride, settings.patch)?;
            std::fs::write(
                out.join("residuals.csv"),
                decisions_to_csv(&decisions, &cfg.scales),
            )?;
            let flagged = decisions.iter().filter(|d| d.estimate.low_confidence).count();
            println!(
                "wiener: {} patches, {} low-confidence",
                decisions.len(),
                flagged
            );
            map
        }
        "cnn" => {
            let path = checkpoint
                .as_ref()
                .ok_or_else(|| usage("--method cnn requires --checkpoint"))?;
            let ckpt = Checkpoint::load(path)?;
            estimate_depth_map_cnn(&image, &ckpt.state.params, settings.stride, settings.patch)?
        }
        other => return Err(usage(format!("method must be wiener|cnn, got '{other}'"))),
    };

    formats::write_size_map(&out.join("map.txt"), &map)?;
    formats::write_size_map_pgm(&out.join("map.pgm"), &map, cam.max_kernel_size)?;

    if let Some(truth_path) = &truth {
        let truth_map = formats::read_size_map(truth_path)?;
        let accuracy = map.pixel_accuracy(&truth_map)?;
        std::fs::write(
            out.join("metrics.csv"),
            format!("pixel_accuracy,{accuracy:.6}\n"),
        )?;
        std::fs::write(
            out.join("confusion.csv"),
            confusion_csv(&map, &truth_map, &cam.scales()),
        )?;
        println!("pixel accuracy: {accuracy:.4}");
    }

    write_meta(
        &out,
        "estimate",
        &[
            ("image", image_path.display().to_string()),
            ("code", code_path.display().to_string()),
            ("method", method.clone()),
            (
                "checkpoint",
                checkpoint.map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            (
                "truth",
                truth.map(|p| p.display().to_string()).unwrap_or_default(),
            ),
        ],
        &settings,
    )
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn cmd_train(
    mut settings: Settings,
    scene_dir: PathBuf,
    out: PathBuf,
    iterations: Option<u64>,
    batch_size: Option<usize>,
    learning_rate: Option<f64>,
    resume: Option<PathBuf>,
) -> CmdResult {
    if let Some(v) = iterations {
        settings.iterations = v;
    }
    if let Some(v) = batch_size {
        settings.batch_size = v;
    }
    if let Some(v) = learning_rate {
        settings.learning_rate = v;
    }
    let cam = settings.camera;
    let scenes = load_scene_dir(&scene_dir)?;
    if scenes.is_empty() {
        return Err(usage(format!("no scenes found in {}", scene_dir.display())));
    }

    let resume_state: Option<(u64, TrainState, AnnealSchedule)> = match &resume {
        Some(path) => {
            let ckpt = Checkpoint::load(path)?;
            Some((ckpt.seed, ckpt.state, ckpt.schedule))
        }
        None => None,
    };
    // a resumed run must replay the original seed and schedule
    let (seed, schedule, state) = match resume_state {
        Some((seed, state, schedule)) => (seed, schedule, Some(state)),
        None => (
            settings.seed,
            AnnealSchedule {
                base: settings.anneal_base,
                slope_inv: settings.anneal_slope_inv,
            },
            None,
        ),
    };
    settings.seed = seed;
    settings.anneal_base = schedule.base;
    settings.anneal_slope_inv = schedule.slope_inv;

    let split_spec = SplitSpec::new(
        settings.split_train,
        settings.split_val,
        settings.split_test,
        seed,
    )?;
    let (train_scenes, val_scenes, test_scenes) = split(scenes, &split_spec)?;
    ensure_out_dir(&out)?;
    save_id_list(&out.join("split_train.txt"), &train_scenes)?;
    save_id_list(&out.join("split_val.txt"), &val_scenes)?;
    save_id_list(&out.join("split_test.txt"), &test_scenes)?;

    let train_pool = PatchPool::build(&train_scenes, &cam, settings.patch)?;
    let val_pool = if val_scenes.is_empty() {
        None
    } else {
        Some(PatchPool::build(&val_scenes, &cam, settings.patch)?)
    };

    let cfg = TrainConfig {
        batch_size: settings.batch_size,
        iterations: settings.iterations,
        learning_rate: settings.learning_rate,
        seed,
        code_lr_scale: settings.code_lr_scale,
        code_side: settings.code_side,
        symmetric_code: settings.symmetric_code,
        log_every: settings.log_every,
        eval_every: settings.eval_every,
        val_patches: settings.val_patches,
        patch: settings.patch,
        ..TrainConfig::default()
    };

    // run in checkpointed segments; resume is exact, so the trajectory is
    // bitwise identical to a single uninterrupted run
    let mut state = state;
    let mut log = defocus_core::learner::TrainLog::default();
    let segment = settings.checkpoint_every.max(1);
    loop {
        let done = state.as_ref().map(|s| s.iteration).unwrap_or(0);
        if done >= cfg.iterations {
            if state.is_none() {
                // zero-iteration run still needs an initialized state
                let (s, l) = run_iterations(None, &train_pool, None, &cam, &cfg, &schedule)?;
                log.header = l.header;
                state = Some(s);
            }
            break;
        }
        let target = (done + segment).min(cfg.iterations);
        let seg_cfg = TrainConfig {
            iterations: target,
            ..cfg.clone()
        };
        let (s, l) = run_iterations(
            state.take(),
            &train_pool,
            val_pool.as_ref().map(|p| p as &dyn defocus_core::learner::PatchSource),
            &cam,
            &seg_cfg,
            &schedule,
        )?;
        if log.header.is_empty() {
            log.header = l.header.clone();
        }
        log.rows.extend(l.rows);
        let ckpt = Checkpoint {
            seed,
            schedule,
            state: s,
        };
        ckpt.save(&out.join("checkpoint.txt"))?;
        std::fs::write(out.join("train_log.csv"), log.to_csv())?;
        if let Some(row) = log.rows.last() {
            let val = row
                .val_accuracy
                .map(|v| format!(" val {v:.4}"))
                .unwrap_or_default();
            eprintln!(
                "iter {}/{} alpha {:.3} loss {:.4}{val}",
                target, cfg.iterations, row.alpha, row.loss
            );
        }
        state = Some(ckpt.state);
    }
    let state = state.expect("state initialized");

    std::fs::write(out.join("train_log.csv"), log.to_csv())?;
    let ckpt = Checkpoint {
        seed,
        schedule,
        state,
    };
    ckpt.save(&out.join("checkpoint.txt"))?;

    let final_alpha = schedule.alpha(ckpt.state.iteration);
    let w = RealCode::new(ckpt.state.w.clone())?;
    let soft = soft_binarize(&w, final_alpha)?;
    formats::write_code(&out.join("soft_code.txt"), &soft)?;
    let binary = hard_binarize(&soft, 0.5).map_err(|e| {
        CliError::Runtime(anyhow::Error::from(e).context(
            "training produced a degenerate code; log and checkpoint were kept",
        ))
    })?;
    formats::write_code(&out.join("code.txt"), &binary)?;

    // calibrate the classifier to the thresholded binary mask; the joint
    // checkpoint stays the resume point, the calibrated network is what
    // inference should load
    let mut log = log;
    let deployed = if settings.finetune_iterations > 0 {
        let (params, rows) = defocus_core::learner::finetune_classifier(
            ckpt.state.params.clone(),
            &binary,
            &train_pool,
            val_pool.as_ref().map(|p| p as &dyn defocus_core::learner::PatchSource),
            &cam,
            &TrainConfig {
                finetune_iterations: settings.finetune_iterations,
                ..cfg.clone()
            },
            &schedule,
        )?;
        log.rows.extend(rows);
        std::fs::write(out.join("train_log.csv"), log.to_csv())?;
        params
    } else {
        ckpt.state.params.clone()
    };
    let n = binary.side();
    let classifier = Checkpoint {
        seed,
        schedule,
        state: defocus_core::learner::TrainState {
            iteration: ckpt.state.iteration + settings.finetune_iterations,
            w: defocus_core::Grid::from_fn(n, n, |r, c| {
                (binary.values()[(r, c)] * 2.0 - 1.0) * 1000.0
            }),
            params: deployed.clone(),
            opt: ckpt.state.opt.clone(),
        },
    };
    classifier.save(&out.join("classifier.txt"))?;

    write_meta(
        &out,
        "train",
        &[
            ("scene_dir", scene_dir.display().to_string()),
            (
                "resume",
                resume.map(|p| p.display().to_string()).unwrap_or_default(),
            ),
        ],
        &settings,
    )?;
    if let Some(last_val) = log.rows.iter().rev().find_map(|r| r.val_accuracy) {
        println!("final validation accuracy: {last_val:.4}");
    }
    println!(
        "trained {} iterations; code open fraction {:.3}",
        ckpt.state.iteration,
        binary.mean_transmission()
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// compare
// ---------------------------------------------------------------------------

struct CompareEntry {
    name: String,
    code_path: PathBuf,
    method: String,
    checkpoint: Option<PathBuf>,
}

fn parse_entry(raw: &str) -> Result<CompareEntry, CliError> {
    let (name, rest) = raw
        .split_once('=')
        .ok_or_else(|| usage(format!("entry '{raw}' must be name=code,method[,checkpoint]")))?;
    let parts: Vec<&str> = rest.split(',').collect();
    if parts.len() < 2 || parts.len() > 3 {
        return Err(usage(format!("entry '{raw}' must be name=code,method[,checkpoint]")));
    }
    let method = parts[1].to_string();
    if method != "wiener" && method != "cnn" {
        return Err(usage(format!("entry '{raw}': method must be wiener|cnn")));
    }
    let checkpoint = parts.get(2).map(PathBuf::from);
    if method == "cnn" && checkpoint.is_none() {
        return Err(usage(format!("entry '{raw}': cnn needs a checkpoint path")));
    }
    Ok(CompareEntry {
        name: name.to_string(),
        code_path: PathBuf::from(parts[0]),
        method,
        checkpoint,
    })
}

fn cmd_compare(
    mut settings: Settings,
    entries: Vec<String>,
    scene_dir: PathBuf,
    out: PathBuf,
    nsr: Option<f64>,
    boundary: Option<String>,
    noise_sigma: Option<f64>,
) -> CmdResult {
    parse_boundary_flag(boundary, &mut settings)?;
    if let Some(v) = nsr {
        settings.nsr = v;
    }
    if let Some(v) = noise_sigma {
        settings.noise_sigma = v;
    }
    if entries.len() < 2 {
        return Err(usage("compare needs at least 2 --entry values"));
    }
    let entries: Vec<CompareEntry> = entries
        .iter()
        .map(|raw| parse_entry(raw))
        .collect::<Result<_, _>>()?;
    let scenes = load_scene_dir(&scene_dir)?;
    if scenes.is_empty() {
        return Err(usage(format!("no scenes found in {}", scene_dir.display())));
    }
    ensure_out_dir(&out)?;

    let cam = settings.camera;
    let prior = PriorSpectrum::gradient_prior(
        settings.patch,
        settings.prior_amplitude,
        settings.prior_eps,
        settings.prior_noise_sigma,
    )?;
    let scales = cam.scales();

    let mut rows = Vec::new();
    for entry in &entries {
        let code = load_code(&entry.code_path)?;
        let score_min = kl_report(&code, &scales, &prior)?.score_min;
        let params: Option<NetworkParams> = match &entry.checkpoint {
            Some(path) => Some(Checkpoint::load(path)?.state.params),
            None => None,
        };
        let mut hits = 0u64;
        let mut total = 0u64;
        for (index, scene) in scenes.iter().enumerate() {
            let sizes = scene.size_map(&cam)?;
            let opts = SimOptions {
                patch: settings.patch,
                boundary: settings.boundary,
                noise_sigma: settings.noise_sigma,
                // the same scene sees the same noise stream under every code
                seed: settings.seed.wrapping_add(index as u64),
            };
            let coded = simulate_coded_image(&scene.image, &sizes, &code, &cam, &opts)?;
            let map = match entry.method.as_str() {
                "wiener" => {
                    let cfg = WienerConfig {
                        nsr: settings.nsr,
                        scales: scales.clone(),
                        boundary: settings.boundary,
                        texture_floor: settings.texture_floor,
                    };
                    estimate_depth_map_wiener(&coded, &code, &cfg, settings.stride, settings.patch)?.0
                }
                _ => estimate_depth_map_cnn(
                    &coded,
                    params.as_ref().expect("cnn entry has params"),
                    settings.stride,
                    settings.patch,
                )?,
            };
            hits += map
                .sizes()
                .iter()
                .zip(sizes.sizes())
                .filter(|(a, b)| a == b)
                .count() as u64;
            total += map.sizes().len() as u64;
        }
        let accuracy = hits as f64 / total as f64;
        rows.push((entry, accuracy, score_min));
    }

    let mut csv = String::from("name,code,method,accuracy,score_min\n");
    for (entry, accuracy, score_min) in &rows {
        let _ = writeln!(
            csv,
            "{},{},{},{accuracy:.6},{score_min:.12e}",
            entry.name,
            entry.code_path.display(),
            entry.method
        );
    }
    std::fs::write(out.join("compare.csv"), &csv)?;
    print!("{csv}");

    write_meta(
        &out,
        "compare",
        &[
            ("scene_dir", scene_dir.display().to_string()),
            (
                "entries",
                rows.iter().map(|(e, _, _)| e.name.as_str()).collect::<Vec<_>>().join(","),
            ),
        ],
        &settings,
    )
}

// ---------------------------------------------------------------------------
// make-scenes
// ---------------------------------------------------------------------------

fn parse_textures(raw: Option<String>) -> Result<Vec<Texture>, CliError> {
    let list = raw.unwrap_or_else(|| "noise,stripes,checker".to_string());
    list.split(',')
        .map(|t| match t.trim() {
            "noise" => Ok(Texture::Noise),
            "stripes" => Ok(Texture::Stripes),
            "checker" => Ok(Texture::Checker),
            "flat" => Ok(Texture::Flat),
            other => Err(usage(format!("unknown texture '{other}'"))),
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_make_scenes(
    settings: Settings,
    out: PathBuf,
    count: usize,
    height: usize,
    width: usize,
    textures: Option<String>,
    min_planes: usize,
    max_planes: usize,
) -> CmdResult {
    use rand::{Rng, SeedableRng};
    if count == 0 {
        return Err(usage("--count must be >= 1"));
    }
    if min_planes == 0 || min_planes > max_planes {
        return Err(usage("need 1 <= min-planes <= max-planes"));
    }
    let textures = parse_textures(textures)?;
    let cam = settings.camera;
    // representative depth per size class, on both sides of focus
    let mut depth_table = Vec::new();
    for s in cam.scales() {
        depth_table.push(depth_for_size(s, &cam, true)?);
        if s > 1 {
            depth_table.push(depth_for_size(s, &cam, false)?);
        }
    }
    ensure_out_dir(&out)?;
    let layouts = [Layout::Planes, Layout::Steps];
    let mut scenes: Vec<Scene> = Vec::with_capacity(count);
    for i in 0..count {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(settings.seed);
        rng.set_stream(i as u64);
        let n_planes = rng.random_range(min_planes..=max_planes);
        let depths: Vec<f64> = (0..n_planes)
            .map(|_| depth_table[rng.random_range(0..depth_table.len())])
            .collect();
        let spec = SceneSpec {
            layout: layouts[i % layouts.len()],
            depths,
            texture: textures[i % textures.len()],
            seed: settings.seed.wrapping_add(0x9e37_79b9).wrapping_add(i as u64),
            height,
            width,
        };
        let mut scene = make_synthetic_scene(&spec)?;
        scene.id = format!("{i:04}");
        scenes.push(scene);
    }
    for scene in &scenes {
        data::save_scene(&out, scene)?;
    }
    save_id_list(&out.join("manifest.txt"), &scenes)?;
    write_meta(
        &out,
        "make-scenes",
        &[
            ("count", count.to_string()),
            ("height", height.to_string()),
            ("width", width.to_string()),
        ],
        &settings,
    )?;
    println!("wrote {count} scenes to {}", out.display());
    Ok(())
}
