//! End-to-end guarantees of the workspace, each with its runtime budget:
//! the analytic slope bound against a dense sweep, finite-difference
//! agreement of every gradient path, exhaustive penalty enumeration, the
//! degenerate-CSI contract, the saturated-loss limit, the cross-track
//! consistency direction, and byte-identical reruns.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use atloss::data::window::WindowedDataset;
use atloss::experiment::{
    prepare_suite_data, run_consistency_suite, LossChoice, SuiteConfig, SuiteEvent,
};
use atloss::grid::GridField;
use atloss::loss::at::{at_loss, binary_penalty, overall_penalty, AtLossParams};
use atloss::metrics::{contingency, csi, MetricRow, MetricValue};
use atloss::verification::{
    run_gradcheck, run_lipschitz, run_penalty_oracle, GradCheckConfig, LipschitzConfig,
    PenaltyOracleConfig, DEFAULT_LIPSCHITZ_TAUS,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const THETA: f64 = 2.0;

fn assert_within(elapsed: Duration, budget_secs: u64, what: &str) {
    assert!(
        elapsed <= Duration::from_secs(budget_secs),
        "{what} took {:.1} s, budget {budget_secs} s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn analytic_slope_bound_dominates_dense_sweep() {
    let start = Instant::now();
    let report = run_lipschitz(&LipschitzConfig::default()).unwrap();
    let elapsed = start.elapsed();

    assert!(report.passed, "lipschitz sweep failed:\n{}", report.to_csv_string());
    assert_eq!(report.rows.len(), DEFAULT_LIPSCHITZ_TAUS.len());
    for (row, tau) in report.rows.iter().zip(DEFAULT_LIPSCHITZ_TAUS) {
        assert_eq!(row.tau, tau);
        assert!(
            row.empirical_sup <= row.analytic_bound + 1e-9,
            "tau {}: empirical sup {} exceeds bound {}",
            row.tau,
            row.empirical_sup,
            row.analytic_bound
        );
    }
    let unit = report.rows.iter().find(|r| r.tau == 1.0).unwrap();
    // 16/27 printed to four decimal places
    assert!(
        (unit.analytic_bound - 0.5926).abs() < 5e-5,
        "bound at tau=1 is {}, expected 0.5926 to 4 dp",
        unit.analytic_bound
    );
    assert!((unit.analytic_bound - 16.0 / 27.0).abs() < 1e-15);
    assert_within(elapsed, 10, "lipschitz sweep");
    println!(
        "slope bound: sup within bound for {} taus, 0.5926 at tau=1, {:.1} s",
        report.rows.len(),
        elapsed.as_secs_f64()
    );
}

#[test]
fn analytic_gradients_match_finite_differences_everywhere() {
    let config = GradCheckConfig::default();
    assert_eq!(config.cases, 1000);
    assert_eq!(config.loss_tolerance, 1e-6);
    assert_eq!(config.layer_tolerance, 1e-4);

    let start = Instant::now();
    let report = run_gradcheck(&config).unwrap();
    let elapsed = start.elapsed();

    assert!(report.passed, "gradcheck failed:\n{}", report.to_csv_string());
    for family in &report.families {
        assert!(
            family.max_rel_err < family.tolerance,
            "family {} at {} (tolerance {}), worst case: {}",
            family.family,
            family.max_rel_err,
            family.tolerance,
            family.worst_case
        );
        assert!(family.cases >= 1000, "family {} ran {} cases", family.family, family.cases);
    }
    assert_within(elapsed, 30, "gradient check");
    println!(
        "gradcheck: {} families clean over {} loss cases, {:.1} s",
        report.families.len(),
        config.cases,
        elapsed.as_secs_f64()
    );
}

#[test]
fn penalty_equals_exhaustive_mismatch_count_and_loss_ranking() {
    let start = Instant::now();
    for cells in 1..=12 {
        let config = PenaltyOracleConfig { cells, theta: THETA, seed: 0x6f72_6163 + cells as u64 };
        let report = run_penalty_oracle(&config).unwrap();
        assert_eq!(report.assignments, 1u64 << cells);
        assert!(report.xor_consistent, "{cells} cells: penalty != xor count");
        assert!(
            report.contingency_consistent,
            "{cells} cells: penalty != misses + false alarms"
        );
        assert!(report.rank_consistent, "{cells} cells: saturated loss ranks differently");
        assert_eq!(report.min_penalty, 0);
        assert!(report.unique_argmin_matches);
        assert!(report.passed);
    }
    let elapsed = start.elapsed();
    assert_within(elapsed, 60, "penalty oracle");
    println!(
        "penalty oracle: all assignments up to 2^12 agree with xor, contingency, and loss rank, {:.1} s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn binary_penalty_counts_exactly_the_two_error_cases() {
    let wet = 3.7;
    let dry = 0.4;
    assert_eq!(binary_penalty(wet, wet, THETA).unwrap(), 0); // hit
    assert_eq!(binary_penalty(wet, dry, THETA).unwrap(), 1); // miss
    assert_eq!(binary_penalty(dry, wet, THETA).unwrap(), 1); // false alarm
    assert_eq!(binary_penalty(dry, dry, THETA).unwrap(), 0); // correct negative
    // threshold is inclusive on both sides
    assert_eq!(binary_penalty(THETA, THETA, THETA).unwrap(), 0);
    println!("binary penalty: (0,1,1,0) over the four indicator cases");
}

#[test]
fn all_dry_window_reports_undefined_csi() {
    // a real window whose every frame stays below the threshold
    let frames: Vec<GridField> = (0..6)
        .map(|t| {
            let values: Vec<f64> = (0..64).map(|i| 0.01 * (i as f64) + 0.1 * t as f64).collect();
            GridField::new(8, 8, values).unwrap()
        })
        .collect();
    assert!(frames.iter().all(|f| f.values().iter().all(|v| *v < THETA)));
    let data = WindowedDataset::build_windows(frames, 10.0).unwrap();
    let truth = data.target_frame(0);
    let forecast = GridField::new(8, 8, vec![0.3; 64]).unwrap();

    let table = contingency(truth, &forecast, THETA).unwrap();
    assert_eq!(table.hits + table.misses + table.false_alarms, 0);
    let score = csi(&table);
    assert_eq!(score, MetricValue::Undefined);
    assert!(score.value().is_none(), "undefined CSI must not carry a number");
    assert_ne!(score, MetricValue::Defined(0.0));

    // and it renders as the word, not as a zero or NaN
    let row = MetricRow::from_parts(THETA, 10.0, &table, 0.0, 99.0);
    let line = row.to_csv_line();
    assert!(line.contains("undefined"), "csv line: {line}");
    assert!(!line.contains("NaN"), "csv line: {line}");
    println!("degenerate CSI: all-dry window renders as undefined");
}

#[test]
fn saturated_loss_collapses_to_mismatch_rate() {
    let params = AtLossParams::deterministic(0.01, THETA).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x7361_7455);
    let n = 64usize;
    for field_idx in 0..100 {
        let x: Vec<f64> = (0..n)
            .map(|_| if rng.gen::<bool>() { THETA + rng.gen_range(0.0..8.0) } else { rng.gen_range(0.0..THETA) })
            .collect();
        // forecasts keep at least half a unit of margin; the first two cells
        // sit exactly on that margin
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let margin = if i < 2 { 0.5 } else { 0.5 + rng.gen_range(0.0..3.0) };
                if rng.gen::<bool>() {
                    THETA + margin
                } else {
                    THETA - margin
                }
            })
            .collect();
        let x_field = GridField::new(8, 8, x).unwrap();
        let y_field = GridField::new(8, 8, y).unwrap();

        let eval = at_loss(&x_field, &y_field, &params).unwrap();
        let penalty = overall_penalty(&x_field, &y_field, THETA).unwrap();
        let expected = penalty as f64 / n as f64;
        assert!(
            (eval.value - expected).abs() < 1e-9,
            "field {field_idx}: loss {} vs penalty/n {}",
            eval.value,
            expected
        );
    }
    println!("saturated loss: equals mismatch count / n within 1e-9 on 100 random fields");
}

#[test]
fn cross_track_agreement_favors_at_over_mse_under_noise() {
    let mut config = SuiteConfig::default();
    config.losses = vec![LossChoice::At, LossChoice::Mse];
    assert_eq!((config.height, config.width), (64, 64));
    assert_eq!(config.epochs, 30);
    assert_eq!(config.seeds.len(), 5);
    assert_eq!(config.noise_fraction, 0.20);
    assert_eq!(config.noise_kinds.len(), 2);

    let start = Instant::now();
    let data = prepare_suite_data(&config).unwrap();
    assert_eq!(data.train.window_count(), 500);

    let report = run_consistency_suite(&config, &data, |event| {
        if let SuiteEvent::RunFinished(r) = event {
            println!(
                "  {:12} {:22} seed {}: mae {:.4} psnr {:.2}",
                r.loss, r.noise, r.seed, r.mae, r.psnr
            );
        }
    })
    .unwrap();
    let elapsed = start.elapsed();

    for kind in &config.noise_kinds {
        let (wins, total) = report.pairwise_wins("at", "mse", kind.name());
        assert_eq!(total, config.seeds.len());
        assert!(
            wins >= 4,
            "under {}: at beat mse on both metrics in only {wins}/{total} seeds",
            kind.name()
        );
    }
    assert_within(elapsed, 900, "consistency suite");
    println!(
        "consistency: at beats mse on mae and psnr in >= 4/5 seeds under both noise kinds, {:.0} s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn identical_configs_produce_byte_identical_reports() {
    let bin = env!("CARGO_BIN_EXE_atloss");

    let run = |dir: &Path, args: &[&str], config: Option<&str>| {
        let mut cmd = Command::new(bin);
        if let Some(cfg) = config {
            let path = dir.join("config.toml");
            fs::write(&path, cfg).unwrap();
            cmd.arg("--config").arg(&path);
        }
        cmd.arg("--out").arg(dir);
        cmd.args(args);
        cmd.env_remove("ATLOSS_OUT_DIR");
        let out = cmd.output().unwrap();
        assert!(
            out.status.success(),
            "{args:?} failed:\n{}",
            String::from_utf8_lossy(&out.stderr)
        );
    };
    let read = |dir: &Path, name: &str| -> Vec<u8> { fs::read(dir.join(name)).unwrap() };

    // full-size verification chain, twice
    let va = tempfile::tempdir().unwrap();
    let vb = tempfile::tempdir().unwrap();
    run(va.path(), &["verify"], None);
    run(vb.path(), &["verify"], None);
    for name in ["gradcheck.csv", "lipschitz.csv", "penalty_oracle.csv"] {
        assert_eq!(
            read(va.path(), name),
            read(vb.path(), name),
            "{name} differs between identical verify runs"
        );
    }

    // reduced consistency suite, twice
    let suite = r#"
[consistency]
height = 12
width = 12
train_steps = 19
eval_steps = 8
losses = ["at", "mse"]
seeds = [11]
epochs = 2
batch_size = 4
"#;
    let ca = tempfile::tempdir().unwrap();
    let cb = tempfile::tempdir().unwrap();
    run(ca.path(), &["consistency"], Some(suite));
    run(cb.path(), &["consistency"], Some(suite));
    let mut names = vec!["runs.csv".to_string(), "summary.csv".to_string()];
    let mut log_names: Vec<String> = fs::read_dir(ca.path().join("logs"))
        .unwrap()
        .map(|e| format!("logs/{}", e.unwrap().file_name().to_string_lossy()))
        .collect();
    assert!(!log_names.is_empty());
    log_names.sort();
    names.append(&mut log_names);
    for name in &names {
        assert_eq!(
            read(ca.path(), name),
            read(cb.path(), name),
            "{name} differs between identical consistency runs"
        );
    }
    println!(
        "determinism: verify and consistency outputs byte-identical across reruns ({} files)",
        3 + names.len()
    );
}
