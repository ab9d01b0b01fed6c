//! One function per subcommand. Each returns `Ok` only when the command
//! both ran and, for verification commands, passed its assertions; report
//! files are written before a failing status is returned.

use std::path::PathBuf;

use atloss::data::gridfile::{read_grid_sequence, write_grid_sequence};
use atloss::data::noise::{inject_noise, NoiseSpec};
use atloss::data::refine::tukey_refine;
use atloss::data::synthetic::generate_synthetic_sequence;
use atloss::data::window::WindowedDataset;
use atloss::experiment::{
    loss_spec_for, prepare_suite_data, run_consistency_suite, SuiteEvent, SuiteReport,
};
use atloss::train::{epoch_logs_to_csv, forecast, train, Track, TrainConfig, TrainOutcome};
use atloss::verification::{run_gradcheck, run_lipschitz, run_penalty_oracle};
use atloss::GridField;

use crate::config::{FileConfig, FormatChoice, TrackChoice};
use crate::output::{resolve_input, write_atomic, write_report};
use crate::plot::save_field_png;
use crate::{classify_run_error, CliError};

/// Resolved invocation context shared by every subcommand.
pub struct Ctx {
    pub file: FileConfig,
    pub out_dir: PathBuf,
    pub format: FormatChoice,
    pub seed: Option<u64>,
    pub plots: bool,
}

fn config_err(e: atloss::Error) -> CliError {
    CliError::Config(e.to_string())
}

pub fn cmd_generate(ctx: &Ctx) -> Result<(), CliError> {
    let mut config = ctx.file.generate.clone();
    if let Some(seed) = ctx.seed {
        config.seed = seed;
    }
    let frames = generate_synthetic_sequence(
        config.height,
        config.width,
        config.steps,
        &config.storm,
        config.seed,
    )
    .map_err(config_err)?;
    let path = ctx.out_dir.join(&config.file);
    write_sequence_atomic(&path, &frames)?;
    println!(
        "generate: wrote {} frames of {}x{} (seed {}) to {}",
        frames.len(),
        config.height,
        config.width,
        config.seed,
        path.display()
    );
    if ctx.plots {
        let peak = sequence_peak(&frames);
        for (i, frame) in frames.iter().take(3).enumerate() {
            let plot = ctx.out_dir.join(format!("generate_frame{i:03}.png"));
            save_field_png(frame, ctx.file.train.threshold, peak, &plot)?;
            println!("generate: plotted {}", plot.display());
        }
    }
    Ok(())
}

pub fn cmd_refine(ctx: &Ctx) -> Result<(), CliError> {
    let config = &ctx.file.refine;
    let input = resolve_input(&ctx.out_dir, &config.input);
    let frames = read_grid_sequence(&input).map_err(classify_run_error)?;
    let refined: Result<Vec<GridField>, _> = frames
        .iter()
        .map(|f| tukey_refine(f, config.fence_multiplier))
        .collect();
    let refined = refined.map_err(config_err)?;
    let changed: usize = frames
        .iter()
        .zip(&refined)
        .map(|(a, b)| {
            a.values()
                .iter()
                .zip(b.values())
                .filter(|(x, y)| x != y)
                .count()
        })
        .sum();
    let path = ctx.out_dir.join(&config.file);
    write_sequence_atomic(&path, &refined)?;
    println!(
        "refine: clipped {changed} cells across {} frames (fence multiplier {}) into {}",
        refined.len(),
        config.fence_multiplier,
        path.display()
    );
    if ctx.plots {
        let peak = sequence_peak(&refined);
        let theta = ctx.file.train.threshold;
        save_field_png(&frames[0], theta, peak, &ctx.out_dir.join("refine_before.png"))?;
        save_field_png(&refined[0], theta, peak, &ctx.out_dir.join("refine_after.png"))?;
        println!("refine: plotted refine_before.png and refine_after.png");
    }
    Ok(())
}

/// Runs the gradient checks, writes the report, and reports pass/fail.
pub fn run_gradcheck_stage(ctx: &Ctx) -> Result<bool, CliError> {
    let mut config = ctx.file.gradcheck.clone();
    if let Some(seed) = ctx.seed {
        config.seed = seed;
    }
    let report = run_gradcheck(&config).map_err(config_err)?;
    let path = write_report(
        &ctx.out_dir,
        "gradcheck",
        ctx.format,
        &report.to_csv_string(),
        &report,
    )?;
    for f in &report.families {
        println!(
            "gradcheck: {} ({} comparisons) max rel err {:.3e} vs tolerance {:.0e}: {}",
            f.family,
            f.cases,
            f.max_rel_err,
            f.tolerance,
            if f.passed { "pass" } else { "FAIL" }
        );
        if !f.passed {
            println!("gradcheck:   worst case: {}", f.worst_case);
        }
    }
    println!("gradcheck: report at {}", path.display());
    Ok(report.passed)
}

pub fn cmd_gradcheck(ctx: &Ctx) -> Result<(), CliError> {
    if run_gradcheck_stage(ctx)? {
        Ok(())
    } else {
        Err(CliError::Assertion(
            "gradcheck found gradients over tolerance".to_string(),
        ))
    }
}

pub fn run_lipschitz_stage(ctx: &Ctx) -> Result<bool, CliError> {
    let config = ctx.file.lipschitz.clone();
    let report = run_lipschitz(&config).map_err(config_err)?;
    let path = write_report(
        &ctx.out_dir,
        "lipschitz",
        ctx.format,
        &report.to_csv_string(),
        &report,
    )?;
    for row in &report.rows {
        println!(
            "lipschitz: tau {:<5} bound {:.6} empirical sup {:.6} ({}, {})",
            row.tau,
            row.analytic_bound,
            row.empirical_sup,
            if row.below_one { "< 1" } else { ">= 1" },
            if row.passed { "pass" } else { "FAIL" }
        );
    }
    println!("lipschitz: report at {}", path.display());
    Ok(report.passed)
}

pub fn cmd_lipschitz(ctx: &Ctx) -> Result<(), CliError> {
    if run_lipschitz_stage(ctx)? {
        Ok(())
    } else {
        Err(CliError::Assertion(
            "lipschitz sweep exceeded the analytic bound".to_string(),
        ))
    }
}

pub fn run_penalty_oracle_stage(ctx: &Ctx) -> Result<bool, CliError> {
    let mut config = ctx.file.penalty_oracle.clone();
    if let Some(seed) = ctx.seed {
        config.seed = seed;
    }
    let report = run_penalty_oracle(&config).map_err(config_err)?;
    let path = write_report(
        &ctx.out_dir,
        "penalty_oracle",
        ctx.format,
        &report.to_csv_string(),
        &report,
    )?;
    println!(
        "penalty-oracle: {} cells, {} assignments, min penalty {}, max loss gap {:.3e}: {}",
        report.cells,
        report.assignments,
        report.min_penalty,
        report.max_loss_gap,
        if report.passed { "pass" } else { "FAIL" }
    );
    println!("penalty-oracle: report at {}", path.display());
    Ok(report.passed)
}

pub fn cmd_penalty_oracle(ctx: &Ctx) -> Result<(), CliError> {
    if run_penalty_oracle_stage(ctx)? {
        Ok(())
    } else {
        Err(CliError::Assertion(
            "penalty oracle found a loss/penalty disagreement".to_string(),
        ))
    }
}

pub fn cmd_verify(ctx: &Ctx) -> Result<(), CliError> {
    let mut failed = Vec::new();
    if !run_gradcheck_stage(ctx)? {
        failed.push("gradcheck");
    }
    if !run_lipschitz_stage(ctx)? {
        failed.push("lipschitz");
    }
    if !run_penalty_oracle_stage(ctx)? {
        failed.push("penalty-oracle");
    }
    if failed.is_empty() {
        println!("verify: PASS");
        Ok(())
    } else {
        Err(CliError::Assertion(format!(
            "verify failed stages: {}",
            failed.join(", ")
        )))
    }
}

pub fn cmd_train(ctx: &Ctx) -> Result<(), CliError> {
    let mut config = ctx.file.train.clone();
    if let Some(seed) = ctx.seed {
        config.seed = seed;
    }

    let frames = match &config.data_path {
        Some(path) => {
            let path = resolve_input(&ctx.out_dir, path);
            read_grid_sequence(&path).map_err(classify_run_error)?
        }
        None => {
            let g = &ctx.file.generate;
            generate_synthetic_sequence(g.height, g.width, g.steps, &g.storm, g.seed)
                .map_err(config_err)?
        }
    };
    let frames = if config.refine_input {
        frames
            .iter()
            .map(|f| tukey_refine(f, config.fence_multiplier))
            .collect::<Result<Vec<_>, _>>()
            .map_err(config_err)?
    } else {
        frames
    };

    let (train_data, val_data) =
        split_for_validation(frames, config.val_windows, config.dt_minutes)?;

    let spec = loss_spec_for(
        config.loss,
        config.epochs,
        config.threshold,
        config.perturbation_scale,
    )
    .map_err(config_err)?;
    let mut train_cfg = TrainConfig::new(spec, config.epochs, config.seed);
    train_cfg.batch_size = config.batch_size;
    train_cfg.adam = config.adam();
    train_cfg.input_frames = config.input_frames;
    train_cfg.threshold = config.threshold;
    if config.track == TrackChoice::Dirty {
        let spec = NoiseSpec::new(config.noise_kind, config.noise_fraction, config.noise_seed)
            .map_err(config_err)?;
        train_cfg = train_cfg.with_track(Track::Dirty(spec));
    }
    train_cfg.validate().map_err(config_err)?;

    println!(
        "train: loss {} on {} windows ({} validation), {} epochs, {} track, seed {}",
        config.loss.name(),
        train_data.window_count(),
        val_data.as_ref().map_or(0, |v| v.window_count()),
        config.epochs,
        train_cfg.track.name(),
        config.seed
    );
    let outcome = train(&train_cfg, &train_data, val_data.as_ref()).map_err(classify_run_error)?;
    write_train_log(ctx, &config.file, &outcome)?;
    println!(
        "train: initialized {} (seed {})",
        outcome.init_scheme, outcome.init_seed
    );
    if let Some(last) = outcome.log.last() {
        println!(
            "train: final epoch loss {} csi {} hss {} pod {} far {}",
            last.train_loss, last.val_csi, last.val_hss, last.val_pod, last.val_far
        );
    }

    if ctx.plots {
        let eval = val_data.as_ref().unwrap_or(&train_data);
        let preds = forecast(&outcome.model, eval, train_cfg.input_frames)
            .map_err(classify_run_error)?;
        let peak = eval.norm().physical_max;
        save_field_png(
            &preds[0],
            config.threshold,
            peak,
            &ctx.out_dir.join("train_forecast.png"),
        )?;
        save_field_png(
            eval.target_frame(0),
            config.threshold,
            peak,
            &ctx.out_dir.join("train_target.png"),
        )?;
        println!("train: plotted train_forecast.png and train_target.png");
    }
    Ok(())
}

pub fn cmd_consistency(ctx: &Ctx) -> Result<(), CliError> {
    let mut config = ctx.file.consistency.clone();
    if let Some(seed) = ctx.seed {
        config.seeds = vec![seed];
    }
    config.validate().map_err(config_err)?;
    let data = prepare_suite_data(&config).map_err(config_err)?;
    println!(
        "consistency: {} train windows, {} eval windows, {} losses x {} noise kinds x {} seeds",
        data.train.window_count(),
        data.eval.window_count(),
        config.losses.len(),
        config.noise_kinds.len(),
        config.seeds.len()
    );

    let report = run_consistency_suite(&config, &data, |event| match event {
        SuiteEvent::RunStarted {
            loss,
            noise,
            seed,
            index,
            total,
        } => {
            eprintln!(
                "consistency: [{}/{total}] training {loss} / {noise} / seed {seed}",
                index + 1
            );
        }
        SuiteEvent::RunFinished(record) => {
            eprintln!(
                "consistency:   cross-track mae {:.4} mm/h, psnr {:.2} dB",
                record.mae, record.psnr
            );
        }
    })
    .map_err(classify_run_error)?;

    write_suite_outputs(ctx, &config, &data, &report)?;

    for row in &report.summary {
        println!(
            "consistency: {:<12} {:<22} mean mae {:.4} mm/h, mean psnr {:.2} dB ({} seeds)",
            row.loss, row.noise, row.mean_mae, row.mean_psnr, row.seeds
        );
    }
    let names: Vec<&str> = config.losses.iter().map(|l| l.name()).collect();
    if names.contains(&"at") && names.contains(&"mse") {
        for kind in &config.noise_kinds {
            let (wins, total) = report.pairwise_wins("at", "mse", kind.name());
            println!(
                "consistency: at beats mse on both metrics under {} in {wins}/{total} seeds",
                kind.name()
            );
        }
    }
    Ok(())
}

fn write_suite_outputs(
    ctx: &Ctx,
    config: &atloss::experiment::SuiteConfig,
    data: &atloss::experiment::SuiteData,
    report: &SuiteReport,
) -> Result<(), CliError> {
    match ctx.format {
        FormatChoice::Csv => {
            let runs = ctx.out_dir.join("runs.csv");
            write_atomic(&runs, report.runs_to_csv().as_bytes())?;
            let summary = ctx.out_dir.join("summary.csv");
            write_atomic(&summary, report.summary_to_csv().as_bytes())?;
            println!(
                "consistency: wrote {} and {}",
                runs.display(),
                summary.display()
            );
        }
        FormatChoice::Json => {
            let path = write_report(&ctx.out_dir, "consistency", ctx.format, "", report)?;
            println!("consistency: wrote {}", path.display());
        }
    }

    // per-epoch logs are always CSV; the clean log is shared per (loss, seed)
    let log_dir = ctx.out_dir.join("logs");
    for r in &report.runs {
        let clean = log_dir.join(format!("{}_seed{}_clean.csv", r.loss, r.seed));
        write_atomic(&clean, epoch_logs_to_csv(&r.clean_log).as_bytes())?;
        let dirty = log_dir.join(format!("{}_{}_seed{}_dirty.csv", r.loss, r.noise, r.seed));
        write_atomic(&dirty, epoch_logs_to_csv(&r.dirty_log).as_bytes())?;
    }
    println!("consistency: per-epoch logs under {}", log_dir.display());

    if ctx.plots {
        let peak = data.train.norm().physical_max;
        let input = data.eval.input_frame(0);
        save_field_png(
            input,
            config.threshold,
            peak,
            &ctx.out_dir.join("consistency_eval_input.png"),
        )?;
        save_field_png(
            data.eval.target_frame(0),
            config.threshold,
            peak,
            &ctx.out_dir.join("consistency_eval_target.png"),
        )?;
        for (ni, kind) in config.noise_kinds.iter().enumerate() {
            let spec = config.noise_spec(ni).map_err(config_err)?;
            let corrupted =
                inject_noise(input, &spec, data.train.norm()).map_err(classify_run_error)?;
            let path = ctx
                .out_dir
                .join(format!("consistency_eval_input_{}.png", kind.name()));
            save_field_png(&corrupted, config.threshold, peak, &path)?;
        }
        println!("consistency: plotted evaluation fields");
    }
    Ok(())
}

fn write_train_log(ctx: &Ctx, stem: &str, outcome: &TrainOutcome) -> Result<(), CliError> {
    #[derive(serde::Serialize)]
    struct TrainLogReport<'a> {
        init_scheme: &'a str,
        init_seed: u64,
        log: &'a [atloss::train::EpochLog],
    }
    let path = write_report(
        &ctx.out_dir,
        stem,
        ctx.format,
        &epoch_logs_to_csv(&outcome.log),
        &TrainLogReport {
            init_scheme: outcome.init_scheme,
            init_seed: outcome.init_seed,
            log: &outcome.log,
        },
    )?;
    println!("train: log at {}", path.display());
    Ok(())
}

/// Split the last `val_windows` windows off the end of the sequence; the
/// validation set reuses the training normalization.
fn split_for_validation(
    frames: Vec<GridField>,
    val_windows: usize,
    dt_minutes: f64,
) -> Result<(WindowedDataset, Option<WindowedDataset>), CliError> {
    use atloss::data::window::WINDOW_LEN;
    if val_windows == 0 {
        let data = WindowedDataset::build_windows(frames, dt_minutes).map_err(config_err)?;
        return Ok((data, None));
    }
    // train keeps frames[..len-v] (>= 1 window), validation reuses the
    // trailing WINDOW_LEN-1 context frames plus the v held-out targets
    let needed = val_windows + WINDOW_LEN;
    if frames.len() < needed {
        return Err(CliError::Config(format!(
            "val_windows {val_windows} needs at least {needed} frames, got {}",
            frames.len()
        )));
    }
    let split = frames.len() - val_windows;
    let val_frames = frames[split - (WINDOW_LEN - 1)..].to_vec();
    let train_frames = frames[..split].to_vec();
    let train_data = WindowedDataset::build_windows(train_frames, dt_minutes).map_err(config_err)?;
    let val_data = WindowedDataset::with_norm(val_frames, *train_data.norm(), dt_minutes)
        .map_err(config_err)?;
    Ok((train_data, Some(val_data)))
}

fn write_sequence_atomic(path: &std::path::Path, frames: &[GridField]) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", parent.display())))?;
        }
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    write_grid_sequence(&tmp, frames).map_err(classify_run_error)?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::Runtime(format!("cannot rename to {}: {e}", path.display())))
}

fn sequence_peak(frames: &[GridField]) -> f64 {
    frames
        .iter()
        .flat_map(|f| f.values())
        .fold(0.0f64, |a, &v| a.max(v))
}
