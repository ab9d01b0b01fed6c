//! The loss-consistency suite: for each loss and seed, train one model on
//! refined data and one on per-epoch corrupted data, then measure how far
//! apart their forecasts drift on a held-out sequence. Losses that train
//! consistently under corruption show low cross-track MAE and high PSNR.

use serde::{Deserialize, Serialize};

use crate::data::noise::{NoiseKind, NoiseSpec};
use crate::data::refine::{tukey_refine, DEFAULT_FENCE_MULTIPLIER};
use crate::data::synthetic::{generate_synthetic_sequence, StormParams};
use crate::data::window::WindowedDataset;
use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::loss::at::{AnnealSchedule, AtLossParams, DEFAULT_PERTURBATION_SCALE};
use crate::loss::baseline::BaselineLossKind;
use crate::seedmix::{mix, stream};
use crate::train::{
    compare_forecasts, forecast, train, EpochLog, LossSpec, Track, TrainConfig,
    DEFAULT_BATCH_SIZE,
};

/// Losses the suite can field, in their canonical report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossChoice {
    At,
    Mae,
    Mse,
    Huber,
    Charbonnier,
}

impl LossChoice {
    pub const ALL: [LossChoice; 5] = [
        LossChoice::At,
        LossChoice::Mae,
        LossChoice::Mse,
        LossChoice::Huber,
        LossChoice::Charbonnier,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            LossChoice::At => "at",
            LossChoice::Mae => "mae",
            LossChoice::Mse => "mse",
            LossChoice::Huber => "huber",
            LossChoice::Charbonnier => "charbonnier",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "at" => Ok(LossChoice::At),
            "mae" => Ok(LossChoice::Mae),
            "mse" => Ok(LossChoice::Mse),
            "huber" => Ok(LossChoice::Huber),
            "charbonnier" => Ok(LossChoice::Charbonnier),
            other => Err(Error::invalid_param(
                "loss",
                format!("unknown loss {other:?}, expected one of at, mae, mse, huber, charbonnier"),
            )),
        }
    }
}

/// The training objective for one loss choice. The AT loss denotes a linear
/// temperature anneal from 1.0 to the default floor across `epochs`.
pub fn loss_spec_for(
    loss: LossChoice,
    epochs: usize,
    threshold: f64,
    perturbation_scale: f64,
) -> Result<LossSpec> {
    Ok(match loss {
        LossChoice::At => LossSpec::At {
            params: AtLossParams::new(1.0, threshold)?.with_scale(perturbation_scale)?,
            schedule: AnnealSchedule::default_linear(epochs)?,
        },
        LossChoice::Mae => LossSpec::Baseline(BaselineLossKind::Mae),
        LossChoice::Mse => LossSpec::Baseline(BaselineLossKind::Mse),
        LossChoice::Huber => LossSpec::Baseline(BaselineLossKind::huber()),
        LossChoice::Charbonnier => LossSpec::Baseline(BaselineLossKind::charbonnier()),
    })
}

/// Full description of one suite invocation. Every randomized stage keys off
/// a seed recorded here, so equal configs produce byte-identical reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteConfig {
    pub height: usize,
    pub width: usize,
    /// Steps in the generated training sequence; windows = steps - 5.
    pub train_steps: usize,
    /// Steps in the held-out evaluation sequence.
    pub eval_steps: usize,
    pub dt_minutes: f64,
    pub storm: StormParams,
    /// Tukey fence multiplier applied to every generated frame.
    pub fence_multiplier: f64,
    pub losses: Vec<LossChoice>,
    pub noise_kinds: Vec<NoiseKind>,
    /// Fraction of cells corrupted per frame on the dirty track.
    pub noise_fraction: f64,
    /// One paired clean/dirty run per seed per (loss, noise kind).
    pub seeds: Vec<u64>,
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: crate::train::AdamConfig,
    pub input_frames: usize,
    /// Exceedance threshold (mm/h); also the AT loss's theta.
    pub threshold: f64,
    /// Scale of the AT loss's logistic perturbation.
    pub perturbation_scale: f64,
    /// Seed for the generated training sequence.
    pub data_seed: u64,
    /// Seed for the generated evaluation sequence.
    pub eval_seed: u64,
    /// Base seed for dirty-track corruption streams.
    pub noise_seed: u64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            height: 64,
            width: 64,
            train_steps: 505,
            eval_steps: 55,
            dt_minutes: 10.0,
            storm: StormParams::default(),
            fence_multiplier: DEFAULT_FENCE_MULTIPLIER,
            losses: LossChoice::ALL.to_vec(),
            noise_kinds: vec![NoiseKind::SaltAndPepper, NoiseKind::RandomValuedImpulse],
            noise_fraction: 0.20,
            seeds: vec![11, 12, 13, 14, 15],
            epochs: 30,
            batch_size: DEFAULT_BATCH_SIZE,
            adam: crate::train::AdamConfig::default(),
            input_frames: 1,
            threshold: crate::loss::at::DEFAULT_THRESHOLD,
            perturbation_scale: DEFAULT_PERTURBATION_SCALE,
            data_seed: 0x746f_7272,
            eval_seed: 0x6576_616c,
            noise_seed: 0x6e6f_6973,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.losses.is_empty() {
            return Err(Error::invalid_param("losses", "must name at least one loss"));
        }
        if self.noise_kinds.is_empty() {
            return Err(Error::invalid_param(
                "noise_kinds",
                "must name at least one noise kind",
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::invalid_param("seeds", "must name at least one seed"));
        }
        if self.epochs == 0 {
            return Err(Error::invalid_param("epochs", "must be positive"));
        }
        if self.eval_steps < crate::data::window::WINDOW_LEN {
            return Err(Error::invalid_param(
                "eval_steps",
                format!(
                    "must cover at least one window of {} steps",
                    crate::data::window::WINDOW_LEN
                ),
            ));
        }
        // surfaces bad dims, fractions, and hyperparameters before any work
        self.storm.validate()?;
        for kind in &self.noise_kinds {
            NoiseSpec::new(*kind, self.noise_fraction, 0)?;
        }
        self.template_config(LossChoice::At, 0)?.validate()?;
        Ok(())
    }

    /// The clean-track training config for one (loss, seed) pair.
    fn template_config(&self, loss: LossChoice, seed: u64) -> Result<TrainConfig> {
        let spec = loss_spec_for(loss, self.epochs, self.threshold, self.perturbation_scale)?;
        let mut config = TrainConfig::new(spec, self.epochs, seed);
        config.batch_size = self.batch_size;
        config.adam = self.adam;
        config.input_frames = self.input_frames;
        config.threshold = self.threshold;
        Ok(config)
    }

    /// Corruption spec for one noise kind; the kind index keeps the two
    /// kinds' streams independent even at equal base seeds.
    pub fn noise_spec(&self, kind_index: usize) -> Result<NoiseSpec> {
        let kind = self.noise_kinds[kind_index];
        NoiseSpec::new(
            kind,
            self.noise_fraction,
            mix(&[stream::EXPERIMENT, self.noise_seed, kind_index as u64]),
        )
    }
}

/// The generated, refined, and windowed sequences the suite trains on. The
/// evaluation set reuses the training normalization so every model sees
/// inputs on the scale it was trained with.
#[derive(Debug, Clone)]
pub struct SuiteData {
    pub train: WindowedDataset,
    pub eval: WindowedDataset,
}

fn refined_sequence(
    config: &SuiteConfig,
    steps: usize,
    seed: u64,
) -> Result<Vec<GridField>> {
    let raw = generate_synthetic_sequence(config.height, config.width, steps, &config.storm, seed)?;
    raw.iter()
        .map(|f| tukey_refine(f, config.fence_multiplier))
        .collect()
}

/// Generate and refine both sequences described by `config`.
pub fn prepare_suite_data(config: &SuiteConfig) -> Result<SuiteData> {
    config.validate()?;
    let train_frames = refined_sequence(config, config.train_steps, config.data_seed)?;
    let train = WindowedDataset::build_windows(train_frames, config.dt_minutes)?;
    let eval_frames = refined_sequence(config, config.eval_steps, config.eval_seed)?;
    let eval = WindowedDataset::with_norm(eval_frames, *train.norm(), config.dt_minutes)?;
    Ok(SuiteData { train, eval })
}

/// One paired clean/dirty run.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub loss: &'static str,
    pub noise: &'static str,
    pub seed: u64,
    /// Mean absolute difference between the two tracks' forecasts (mm/h).
    pub mae: f64,
    /// PSNR between the two tracks' forecasts (dB, capped).
    pub psnr: f64,
    pub clean_log: Vec<EpochLog>,
    pub dirty_log: Vec<EpochLog>,
}

/// Per-(loss, noise) mean over seeds.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub loss: &'static str,
    pub noise: &'static str,
    pub seeds: usize,
    pub mean_mae: f64,
    pub mean_psnr: f64,
}

/// Progress notifications for long-running suites.
#[derive(Debug, Clone, Copy)]
pub enum SuiteEvent<'a> {
    RunStarted {
        loss: &'static str,
        noise: &'static str,
        seed: u64,
        index: usize,
        total: usize,
    },
    RunFinished(&'a RunRecord),
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
}

impl SuiteReport {
    pub const RUNS_CSV_HEADER: &'static str = "loss,noise,seed,mae,psnr";
    pub const SUMMARY_CSV_HEADER: &'static str = "loss,noise,seeds,mean_mae,mean_psnr";

    pub fn runs_to_csv(&self) -> String {
        let mut out = String::from(Self::RUNS_CSV_HEADER);
        out.push('\n');
        for r in &self.runs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.loss, r.noise, r.seed, r.mae, r.psnr
            ));
        }
        out
    }

    pub fn summary_to_csv(&self) -> String {
        let mut out = String::from(Self::SUMMARY_CSV_HEADER);
        out.push('\n');
        for s in &self.summary {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.loss, s.noise, s.seeds, s.mean_mae, s.mean_psnr
            ));
        }
        out
    }

    /// Seeds on which `challenger` beats `incumbent` under `noise` on both
    /// metrics at once (strictly lower MAE and strictly higher PSNR), plus
    /// the number of seeds compared.
    pub fn pairwise_wins(&self, challenger: &str, incumbent: &str, noise: &str) -> (usize, usize) {
        let pick = |loss: &str| -> Vec<&RunRecord> {
            self.runs
                .iter()
                .filter(|r| r.loss == loss && r.noise == noise)
                .collect()
        };
        let a = pick(challenger);
        let b = pick(incumbent);
        let mut wins = 0;
        let mut total = 0;
        for ra in &a {
            if let Some(rb) = b.iter().find(|r| r.seed == ra.seed) {
                total += 1;
                if ra.mae < rb.mae && ra.psnr > rb.psnr {
                    wins += 1;
                }
            }
        }
        (wins, total)
    }
}

/// Run every (loss, noise, seed) cell of the suite. Each (loss, seed) pair
/// trains its clean model once and reuses it against every noise kind; the
/// report is ordered (loss, noise, seed) regardless of execution order.
pub fn run_consistency_suite(
    config: &SuiteConfig,
    data: &SuiteData,
    mut on_event: impl FnMut(SuiteEvent),
) -> Result<SuiteReport> {
    config.validate()?;
    let total = config.losses.len() * config.noise_kinds.len() * config.seeds.len();
    let peak = data.train.norm().physical_max;
    let mut keyed: Vec<((usize, usize, usize), RunRecord)> = Vec::with_capacity(total);
    let mut index = 0;

    for (li, loss) in config.losses.iter().enumerate() {
        for (si, &seed) in config.seeds.iter().enumerate() {
            let clean_cfg = config.template_config(*loss, seed)?;
            let clean = train(&clean_cfg, &data.train, None)?;
            let clean_forecast = forecast(&clean.model, &data.eval, clean_cfg.input_frames)?;

            for (ni, kind) in config.noise_kinds.iter().enumerate() {
                on_event(SuiteEvent::RunStarted {
                    loss: loss.name(),
                    noise: kind.name(),
                    seed,
                    index,
                    total,
                });
                let dirty_cfg = clean_cfg
                    .clone()
                    .with_track(Track::Dirty(config.noise_spec(ni)?));
                let dirty = train(&dirty_cfg, &data.train, None)?;
                let dirty_forecast =
                    forecast(&dirty.model, &data.eval, dirty_cfg.input_frames)?;
                let (mae, psnr) = compare_forecasts(&clean_forecast, &dirty_forecast, peak)?;
                let record = RunRecord {
                    loss: loss.name(),
                    noise: kind.name(),
                    seed,
                    mae,
                    psnr,
                    clean_log: clean.log.clone(),
                    dirty_log: dirty.log,
                };
                on_event(SuiteEvent::RunFinished(&record));
                keyed.push(((li, ni, si), record));
                index += 1;
            }
        }
    }

    keyed.sort_by_key(|(k, _)| *k);
    let runs: Vec<RunRecord> = keyed.into_iter().map(|(_, r)| r).collect();

    let mut summary = Vec::new();
    for loss in &config.losses {
        for kind in &config.noise_kinds {
            let cell: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.loss == loss.name() && r.noise == kind.name())
                .collect();
            let n = cell.len() as f64;
            summary.push(SummaryRow {
                loss: loss.name(),
                noise: kind.name(),
                seeds: cell.len(),
                mean_mae: cell.iter().map(|r| r.mae).sum::<f64>() / n,
                mean_psnr: cell.iter().map(|r| r.psnr).sum::<f64>() / n,
            });
        }
    }

    Ok(SuiteReport { runs, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> SuiteConfig {
        SuiteConfig {
            height: 12,
            width: 12,
            train_steps: 14,
            eval_steps: 8,
            storm: StormParams {
                cell_count: 3,
                ..StormParams::default()
            },
            losses: vec![LossChoice::At, LossChoice::Mse],
            seeds: vec![1, 2],
            epochs: 2,
            batch_size: 4,
            ..SuiteConfig::default()
        }
    }

    #[test]
    fn suite_report_shape_and_order() {
        let config = tiny_config();
        let data = prepare_suite_data(&config).unwrap();
        let report = run_consistency_suite(&config, &data, |_| {}).unwrap();

        assert_eq!(report.runs.len(), 2 * 2 * 2);
        assert_eq!(report.summary.len(), 2 * 2);
        let order: Vec<(&str, &str, u64)> = report
            .runs
            .iter()
            .map(|r| (r.loss, r.noise, r.seed))
            .collect();
        let mut expected = Vec::new();
        for loss in ["at", "mse"] {
            for noise in ["salt_and_pepper", "random_valued_impulse"] {
                for seed in [1, 2] {
                    expected.push((loss, noise, seed));
                }
            }
        }
        assert_eq!(order, expected);
        for r in &report.runs {
            assert!(r.mae.is_finite() && r.mae >= 0.0);
            assert!(r.psnr.is_finite());
            assert_eq!(r.clean_log.len(), 2);
            assert_eq!(r.dirty_log.len(), 2);
        }
        for s in &report.summary {
            assert_eq!(s.seeds, 2);
            assert!(s.mean_mae.is_finite());
        }
    }

    #[test]
    fn suite_csvs_are_byte_identical_across_runs() {
        let config = tiny_config();
        let data = prepare_suite_data(&config).unwrap();
        let a = run_consistency_suite(&config, &data, |_| {}).unwrap();
        let b = run_consistency_suite(&config, &data, |_| {}).unwrap();
        assert_eq!(a.runs_to_csv(), b.runs_to_csv());
        assert_eq!(a.summary_to_csv(), b.summary_to_csv());
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
        assert!(a.runs_to_csv().starts_with(SuiteReport::RUNS_CSV_HEADER));
        assert!(a.summary_to_csv().starts_with(SuiteReport::SUMMARY_CSV_HEADER));
    }

    #[test]
    fn clean_models_are_shared_across_noise_kinds() {
        // a single-kind suite must reproduce the matching rows of the
        // two-kind suite exactly, since clean training ignores the kind list
        let mut config = tiny_config();
        config.losses = vec![LossChoice::Mse];
        let data = prepare_suite_data(&config).unwrap();
        let both = run_consistency_suite(&config, &data, |_| {}).unwrap();

        config.noise_kinds = vec![NoiseKind::SaltAndPepper];
        let single = run_consistency_suite(&config, &data, |_| {}).unwrap();
        let both_sp: Vec<(f64, f64)> = both
            .runs
            .iter()
            .filter(|r| r.noise == "salt_and_pepper")
            .map(|r| (r.mae, r.psnr))
            .collect();
        let single_sp: Vec<(f64, f64)> = single.runs.iter().map(|r| (r.mae, r.psnr)).collect();
        assert_eq!(both_sp, single_sp);
    }

    #[test]
    fn events_cover_every_run() {
        let config = tiny_config();
        let data = prepare_suite_data(&config).unwrap();
        let mut started = 0;
        let mut finished = 0;
        let report = run_consistency_suite(&config, &data, |e| match e {
            SuiteEvent::RunStarted { total, .. } => {
                assert_eq!(total, 8);
                started += 1;
            }
            SuiteEvent::RunFinished(_) => finished += 1,
        })
        .unwrap();
        assert_eq!(started, report.runs.len());
        assert_eq!(finished, report.runs.len());
    }

    #[test]
    fn pairwise_wins_counts_strict_double_wins() {
        let mk = |loss: &'static str, seed: u64, mae: f64, psnr: f64| RunRecord {
            loss,
            noise: "salt_and_pepper",
            seed,
            mae,
            psnr,
            clean_log: Vec::new(),
            dirty_log: Vec::new(),
        };
        let report = SuiteReport {
            runs: vec![
                mk("at", 1, 0.10, 30.0),
                mk("at", 2, 0.20, 25.0),
                mk("at", 3, 0.10, 20.0),
                mk("mse", 1, 0.20, 25.0),
                mk("mse", 2, 0.10, 30.0),
                mk("mse", 3, 0.10, 25.0),
            ],
            summary: Vec::new(),
        };
        // seed 1: wins both; seed 2: loses both; seed 3: MAE tied
        assert_eq!(report.pairwise_wins("at", "mse", "salt_and_pepper"), (1, 3));
        assert_eq!(report.pairwise_wins("at", "mse", "random_valued_impulse"), (0, 0));
    }

    #[test]
    fn invalid_suite_configs_are_rejected() {
        let mut config = tiny_config();
        config.losses.clear();
        assert!(config.validate().is_err());

        config = tiny_config();
        config.seeds.clear();
        assert!(config.validate().is_err());

        config = tiny_config();
        config.epochs = 0;
        assert!(config.validate().is_err());

        config = tiny_config();
        config.noise_fraction = 0.55;
        assert!(config.validate().is_err());

        config = tiny_config();
        config.eval_steps = 3;
        assert!(config.validate().is_err());
    }

    #[test]
    fn loss_choice_names_round_trip() {
        for choice in LossChoice::ALL {
            assert_eq!(LossChoice::parse(choice.name()).unwrap(), choice);
        }
        assert!(LossChoice::parse("rmse").is_err());
    }
}
