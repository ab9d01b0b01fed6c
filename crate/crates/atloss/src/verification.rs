//! Self-verification suites: finite-difference gradient checks, the
//! Lipschitz sweep of the AT-loss gradient, and the exhaustive QUBO penalty
//! oracle. Each run is deterministic for a given config, so its CSV output
//! is byte-identical across repeats.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::GridField;
use crate::loss::at::{at_loss, at_loss_grad_extremum, indicator, AtLossParams};
use crate::loss::baseline::{baseline_loss, BaselineLossKind};
use crate::metrics::contingency;
use crate::train::model::CnnModel;
use crate::train::norm::{swish_backward, swish_forward, InstanceNorm2d};
use crate::train::tensor::Tensor4;

pub const DEFAULT_GRADCHECK_CASES: usize = 1000;
pub const DEFAULT_LOSS_TOLERANCE: f64 = 1e-6;
pub const DEFAULT_LAYER_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_LIPSCHITZ_TAUS: [f64; 5] = [1.0, 0.8, 0.6, 0.3, 0.05];
pub const DEFAULT_LIPSCHITZ_POINTS: usize = 1_000_000;
/// Empirical sup may not exceed the analytic bound by more than this.
pub const LIPSCHITZ_SLACK: f64 = 1e-9;
/// The dense sweep must reach the analytic bound this closely (relative).
pub const LIPSCHITZ_EXTREMUM_TOLERANCE: f64 = 1e-3;
pub const MAX_ORACLE_CELLS: usize = 20;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    /// Random AT-loss cases; baselines and layers add their own fixed sets.
    pub cases: usize,
    pub seed: u64,
    /// Base finite-difference step; AT-loss cases scale it by tau.
    pub step: f64,
    /// Max relative error admitted for loss gradients.
    pub loss_tolerance: f64,
    /// Max relative error admitted for trainer-layer gradients.
    pub layer_tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            cases: DEFAULT_GRADCHECK_CASES,
            seed: 0x6772_6164,
            step: 1e-5,
            loss_tolerance: DEFAULT_LOSS_TOLERANCE,
            layer_tolerance: DEFAULT_LAYER_TOLERANCE,
        }
    }
}

impl GradCheckConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cases == 0 {
            return Err(Error::invalid_param("cases", "must be positive"));
        }
        for (name, v) in [
            ("step", self.step),
            ("loss_tolerance", self.loss_tolerance),
            ("layer_tolerance", self.layer_tolerance),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::invalid_param(name, "must be finite and > 0"));
            }
        }
        Ok(())
    }
}

/// Result for one family of gradient checks.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckFamily {
    pub family: &'static str,
    pub cases: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Parameters of the worst case, for failure listings.
    pub worst_case: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub families: Vec<GradCheckFamily>,
    pub passed: bool,
}

impl GradCheckReport {
    pub const CSV_HEADER: &'static str = "family,cases,max_rel_err,tolerance,passed";

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for f in &self.families {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                f.family, f.cases, f.max_rel_err, f.tolerance, f.passed
            ));
        }
        out
    }

    pub fn failures(&self) -> Vec<&GradCheckFamily> {
        self.families.iter().filter(|f| !f.passed).collect()
    }
}

/// Tracks the largest relative error seen in one family.
struct FamilyTracker {
    family: &'static str,
    cases: usize,
    max_rel_err: f64,
    tolerance: f64,
    worst_case: String,
}

impl FamilyTracker {
    fn new(family: &'static str, tolerance: f64) -> Self {
        FamilyTracker {
            family,
            cases: 0,
            max_rel_err: 0.0,
            tolerance,
            worst_case: String::new(),
        }
    }

    fn record(&mut self, comparisons: usize, rel_err: f64, describe: impl FnOnce() -> String) {
        self.cases += comparisons;
        if rel_err > self.max_rel_err {
            self.max_rel_err = rel_err;
            self.worst_case = describe();
        }
    }

    fn finish(self) -> GradCheckFamily {
        GradCheckFamily {
            family: self.family,
            cases: self.cases,
            max_rel_err: self.max_rel_err,
            passed: self.max_rel_err < self.tolerance,
            tolerance: self.tolerance,
            worst_case: self.worst_case,
        }
    }
}

/// Relative error of a gradient vector: worst absolute component error
/// measured against the vector's dominant magnitude, plus the index of the
/// offending component. Central differences carry roundoff of about
/// `eps * |L| / step` per component regardless of the component's size, so
/// components deep in a sigmoid's saturated tails (where both sides are
/// ~1e-12) are meaningful only against the case's gradient scale; `floor`
/// keeps structurally-zero gradients (like a bias the following
/// normalization cancels) from dividing noise by noise.
fn vector_rel_err(analytic: &[f64], fd: &[f64], floor: f64) -> (f64, usize) {
    debug_assert_eq!(analytic.len(), fd.len());
    let mut worst_abs = 0.0f64;
    let mut worst_idx = 0;
    let mut scale = floor;
    for (i, (a, f)) in analytic.iter().zip(fd).enumerate() {
        let diff = (a - f).abs();
        if diff > worst_abs {
            worst_abs = diff;
            worst_idx = i;
        }
        scale = scale.max(a.abs()).max(f.abs());
    }
    (worst_abs / scale, worst_idx)
}

/// Gradient scale below which a trainer-layer finite difference is treated
/// as noise. Layer probes run at step 1e-4 on O(1) outputs, so roundoff sits
/// near 1e-12; parameters whose gradient the architecture cancels exactly
/// (a pre-normalization bias) otherwise compare noise against noise.
const LAYER_GRAD_FLOOR: f64 = 1e-6;

/// Central finite difference of `f` in one coordinate of `y`.
fn central_diff(f: &mut impl FnMut(&[f64]) -> f64, y: &[f64], i: usize, step: f64) -> f64 {
    let mut up = y.to_vec();
    up[i] += step;
    let mut dn = y.to_vec();
    dn[i] -= step;
    (f(&up) - f(&dn)) / (2.0 * step)
}

/// Run every gradient-check family: random AT-loss cases (deterministic,
/// noise-perturbed with a fixed seed, shared-noise, and tau at its floor),
/// the pointwise baselines away from their kinks, and the trainer layers.
pub fn run_gradcheck(config: &GradCheckConfig) -> Result<GradCheckReport> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut families = Vec::new();

    // AT loss, random (x, y, tau, theta), deterministic z = 0.
    let mut fam = FamilyTracker::new("at_deterministic", config.loss_tolerance);
    for case in 0..config.cases {
        let tau: f64 = rng.gen_range(0.05..=1.0);
        let theta: f64 = rng.gen_range(0.5..10.0);
        let params = AtLossParams::deterministic(tau, theta)?;
        check_at_case(&mut fam, &mut rng, &params, config.step, case)?;
    }
    families.push(fam.finish());

    // AT loss at the tau floor, where the sigmoid saturates fastest.
    let mut fam = FamilyTracker::new("at_tau_floor", config.loss_tolerance);
    for case in 0..(config.cases / 4).max(50) {
        let theta: f64 = rng.gen_range(0.5..10.0);
        let params = AtLossParams::deterministic(0.05, theta)?;
        check_at_case(&mut fam, &mut rng, &params, config.step, case)?;
    }
    families.push(fam.finish());

    // AT loss with logistic perturbation under a fixed seed: z is a function
    // of the seed alone, so central differences remain exact.
    let mut fam = FamilyTracker::new("at_perturbed", config.loss_tolerance);
    for case in 0..(config.cases / 4).max(50) {
        let tau: f64 = rng.gen_range(0.1..=1.0);
        let theta: f64 = rng.gen_range(0.5..10.0);
        let mut params = AtLossParams::new(tau, theta)?.with_seed(rng.gen());
        if case % 2 == 1 {
            params.shared_noise = true;
        }
        check_at_case(&mut fam, &mut rng, &params, config.step, case)?;
    }
    families.push(fam.finish());

    // Pointwise baselines, sampled away from the MAE and Huber kinks.
    for kind in [
        BaselineLossKind::Mae,
        BaselineLossKind::Mse,
        BaselineLossKind::huber(),
        BaselineLossKind::charbonnier(),
    ] {
        let family = match kind {
            BaselineLossKind::Mae => "baseline_mae",
            BaselineLossKind::Mse => "baseline_mse",
            BaselineLossKind::Huber { .. } => "baseline_huber",
            BaselineLossKind::Charbonnier { .. } => "baseline_charbonnier",
        };
        let mut fam = FamilyTracker::new(family, config.loss_tolerance);
        for case in 0..(config.cases / 4).max(50) {
            check_baseline_case(&mut fam, &mut rng, kind, config.step, case)?;
        }
        families.push(fam.finish());
    }

    // Trainer layers on small tensors.
    check_layers(&mut families, &mut rng, config)?;

    let passed = families.iter().all(|f| f.passed);
    Ok(GradCheckReport { families, passed })
}

/// One AT-loss case: a small random field pair, analytic gradient against
/// central differences on every cell. The step scales with tau so the
/// difference stays inside the sigmoid's active region.
fn check_at_case(
    fam: &mut FamilyTracker,
    rng: &mut ChaCha8Rng,
    params: &AtLossParams,
    base_step: f64,
    case: usize,
) -> Result<()> {
    let (h, w) = (3, 4);
    let n = h * w;
    let theta = params.theta;
    let x: Vec<f64> = (0..n)
        .map(|_| {
            if rng.gen::<bool>() {
                rng.gen_range(0.0..theta)
            } else {
                rng.gen_range(theta..3.0 * theta)
            }
        })
        .collect();
    // keep y inside the gradient's active band
    let y: Vec<f64> = (0..n)
        .map(|_| theta + rng.gen_range(-3.0 * params.tau..3.0 * params.tau))
        .collect();
    let x_field = GridField::new(h, w, x)?;
    let step = base_step * params.tau;

    let eval = at_loss(&x_field, &GridField::new(h, w, y.clone())?, params)?;
    let mut f = |yv: &[f64]| -> f64 {
        at_loss(&x_field, &GridField::new(h, w, yv.to_vec()).unwrap(), params)
            .unwrap()
            .value
    };
    let fd: Vec<f64> = (0..n).map(|i| central_diff(&mut f, &y, i, step)).collect();
    // Active-region gradients run at 4/(tau*n); a floor three decades below
    // that keeps all-saturated draws from ranking roundoff as error while
    // still exposing any defect big enough to matter at this scale.
    let floor = 4.0e-3 / (params.tau * n as f64);
    let (err, wi) = vector_rel_err(&eval.grad, &fd, floor);
    fam.record(n, err, || {
        format!(
            "case={case} cell={wi} tau={} theta={} analytic={} fd={}",
            params.tau, params.theta, eval.grad[wi], fd[wi]
        )
    });
    Ok(())
}

/// One baseline case on a small field pair with differences kept away from
/// the non-smooth points of MAE (0) and Huber (delta).
fn check_baseline_case(
    fam: &mut FamilyTracker,
    rng: &mut ChaCha8Rng,
    kind: BaselineLossKind,
    step: f64,
    case: usize,
) -> Result<()> {
    let (h, w) = (3, 4);
    let n = h * w;
    let x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..5.0)).collect();
    let y: Vec<f64> = x
        .iter()
        .map(|xv| {
            let mag = rng.gen_range(0.05..0.8);
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            xv + sign * mag
        })
        .collect();
    let x_field = GridField::new(h, w, x)?;

    let eval = baseline_loss(&x_field, &GridField::new(h, w, y.clone())?, kind)?;
    let mut f = |yv: &[f64]| -> f64 {
        baseline_loss(&x_field, &GridField::new(h, w, yv.to_vec()).unwrap(), kind)
            .unwrap()
            .value
    };
    let fd: Vec<f64> = (0..n).map(|i| central_diff(&mut f, &y, i, step)).collect();
    let (err, wi) = vector_rel_err(&eval.grad, &fd, 1e-6);
    fam.record(n, err, || {
        format!(
            "case={case} cell={wi} kind={} analytic={} fd={}",
            kind.name(),
            eval.grad[wi],
            fd[wi]
        )
    });
    Ok(())
}

/// Finite-difference checks for the trainer layers and the assembled model.
fn check_layers(
    families: &mut Vec<GradCheckFamily>,
    rng: &mut ChaCha8Rng,
    config: &GradCheckConfig,
) -> Result<()> {
    let step = 1e-4;
    let tol = config.layer_tolerance;
    let rand_tensor = |rng: &mut ChaCha8Rng, n: usize, c: usize, h: usize, w: usize| {
        let data: Vec<f64> = (0..n * c * h * w).map(|_| rng.gen_range(-1.5..1.5)).collect();
        Tensor4::from_vec(n, c, h, w, data).unwrap()
    };

    // Swish activation.
    let mut fam = FamilyTracker::new("layer_swish", tol);
    let x = rand_tensor(rng, 2, 2, 4, 4);
    let mask = rand_tensor(rng, 2, 2, 4, 4);
    let (_, sig) = swish_forward(&x)?;
    let analytic = swish_backward(&x, &sig, &mask)?;
    let mut probe = |xv: &[f64]| -> f64 {
        let t = Tensor4::from_vec(2, 2, 4, 4, xv.to_vec()).unwrap();
        let (y, _) = swish_forward(&t).unwrap();
        y.data().iter().zip(mask.data()).map(|(a, b)| a * b).sum()
    };
    let fd: Vec<f64> = (0..x.len())
        .map(|i| central_diff(&mut probe, x.data(), i, step))
        .collect();
    let (err, wi) = vector_rel_err(analytic.data(), &fd, LAYER_GRAD_FLOOR);
    fam.record(x.len(), err, || format!("swish input {wi}"));
    families.push(fam.finish());

    // Instance norm: input, gamma, beta.
    let mut norm = InstanceNorm2d::new(2)?;
    norm.gamma = vec![1.3, 0.7];
    norm.beta = vec![0.2, -0.4];
    let x = rand_tensor(rng, 2, 2, 4, 4);
    let mask = rand_tensor(rng, 2, 2, 4, 4);
    let (_, cache) = norm.forward(&x)?;
    let (gx, ggamma, gbeta) = norm.backward(&mask, &cache)?;
    let probe_norm = |norm: &InstanceNorm2d, t: &Tensor4| -> f64 {
        let (y, _) = norm.forward(t).unwrap();
        y.data().iter().zip(mask.data()).map(|(a, b)| a * b).sum()
    };

    let mut fam = FamilyTracker::new("layer_norm_input", tol);
    let mut probe = |xv: &[f64]| -> f64 {
        probe_norm(&norm, &Tensor4::from_vec(2, 2, 4, 4, xv.to_vec()).unwrap())
    };
    let fd: Vec<f64> = (0..x.len())
        .map(|i| central_diff(&mut probe, x.data(), i, step))
        .collect();
    let (err, wi) = vector_rel_err(gx.data(), &fd, LAYER_GRAD_FLOOR);
    fam.record(x.len(), err, || format!("norm input {wi}"));
    families.push(fam.finish());

    let mut fam = FamilyTracker::new("layer_norm_affine", tol);
    let mut analytic_affine = Vec::new();
    let mut fd_affine = Vec::new();
    let mut labels = Vec::new();
    for c in 0..2 {
        for (grads, pick) in [(&ggamma, 0), (&gbeta, 1)] {
            let mut up = norm.clone();
            let mut dn = norm.clone();
            if pick == 0 {
                up.gamma[c] += step;
                dn.gamma[c] -= step;
            } else {
                up.beta[c] += step;
                dn.beta[c] -= step;
            }
            analytic_affine.push(grads[c]);
            fd_affine.push((probe_norm(&up, &x) - probe_norm(&dn, &x)) / (2.0 * step));
            labels.push(format!("norm affine {pick}/{c}"));
        }
    }
    let (err, wi) = vector_rel_err(&analytic_affine, &fd_affine, LAYER_GRAD_FLOOR);
    fam.record(labels.len(), err, || labels[wi].clone());
    families.push(fam.finish());

    // Full model: every parameter tensor, strided to keep the suite fast.
    let mut fam = FamilyTracker::new("layer_model_params", tol);
    let mut model = CnnModel::new(1, 11)?;
    let x = rand_tensor(rng, 2, 1, 6, 6);
    let mask = rand_tensor(rng, 2, 1, 6, 6);
    let (_, cache) = model.forward(&x)?;
    let grads = model.backward(&mask, &cache)?;
    let grad_slices: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    for (si, gslice) in grad_slices.iter().enumerate() {
        let stride = (gslice.len() / 8).max(1);
        let mut analytic_s = Vec::new();
        let mut fd_s = Vec::new();
        let mut params_checked = Vec::new();
        for pi in (0..gslice.len()).step_by(stride) {
            let eval = |model: &mut CnnModel, delta: f64| -> f64 {
                {
                    let slices = model.param_slices_mut();
                    slices[si][pi] += delta;
                }
                let (y, _) = model.forward(&x).unwrap();
                let out: f64 = y.data().iter().zip(mask.data()).map(|(a, b)| a * b).sum();
                {
                    let slices = model.param_slices_mut();
                    slices[si][pi] -= delta;
                }
                out
            };
            let up = eval(&mut model, step);
            let dn = eval(&mut model, -step);
            analytic_s.push(gslice[pi]);
            fd_s.push((up - dn) / (2.0 * step));
            params_checked.push(pi);
        }
        let (err, wi) = vector_rel_err(&analytic_s, &fd_s, LAYER_GRAD_FLOOR);
        fam.record(params_checked.len(), err, || {
            format!("model slice {si} param {}", params_checked[wi])
        });
    }
    families.push(fam.finish());

    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LipschitzConfig {
    pub taus: Vec<f64>,
    /// Grid points of y swept per tau (split across both indicator branches).
    pub points: usize,
    pub theta: f64,
}

impl Default for LipschitzConfig {
    fn default() -> Self {
        LipschitzConfig {
            taus: DEFAULT_LIPSCHITZ_TAUS.to_vec(),
            points: DEFAULT_LIPSCHITZ_POINTS,
            theta: crate::loss::at::DEFAULT_THRESHOLD,
        }
    }
}

impl LipschitzConfig {
    pub fn validate(&self) -> Result<()> {
        if self.taus.is_empty() {
            return Err(Error::invalid_param("taus", "need at least one value"));
        }
        for &tau in &self.taus {
            if !(tau > 0.0 && tau <= 1.0) {
                return Err(Error::invalid_param("taus", format!("tau {tau} outside (0, 1]")));
            }
        }
        if self.points < 100 {
            return Err(Error::invalid_param("points", "need at least 100"));
        }
        if !self.theta.is_finite() || self.theta < 0.0 {
            return Err(Error::invalid_param("theta", "must be finite and >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzRow {
    pub tau: f64,
    /// Analytic per-cell gradient bound 16/(27 tau).
    pub analytic_bound: f64,
    /// Largest |dL_i/dy_i| observed over the dense y sweep, z = 0.
    pub empirical_sup: f64,
    /// |empirical - analytic| / analytic.
    pub rel_gap: f64,
    /// Whether the bound stays below 1 (holds on tau in [0.6, 1]).
    pub below_one: bool,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub rows: Vec<LipschitzRow>,
    pub passed: bool,
}

impl LipschitzReport {
    pub const CSV_HEADER: &'static str =
        "tau,analytic_bound,empirical_sup,rel_gap,below_one,passed";

    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.tau, r.analytic_bound, r.empirical_sup, r.rel_gap, r.below_one, r.passed
            ));
        }
        out
    }
}

/// Sweep the per-cell AT-loss gradient densely in y for each tau and compare
/// the empirical sup against the analytic bound. The sweep feeds y through
/// `at_loss` itself (single wide fields, z = 0) so the production gradient
/// path is what gets measured.
pub fn run_lipschitz(config: &LipschitzConfig) -> Result<LipschitzReport> {
    config.validate()?;
    let theta = config.theta;
    let mut rows = Vec::with_capacity(config.taus.len());

    for &tau in &config.taus {
        let params = AtLossParams::deterministic(tau, theta)?;
        let (_, bound) = at_loss_grad_extremum(tau, false)?;
        let mut sup = 0.0f64;

        for wet in [false, true] {
            // f(x) fixed per branch; the gradient is a function of y alone
            let x_value = if wet { theta + 1.0 } else { theta * 0.5 };
            let half = (config.points / 2).max(50);
            // chunk the sweep so each at_loss call stays cache-sized
            let chunk = 8192usize;
            let lo = theta - 10.0 * tau;
            let span = 20.0 * tau;
            let mut done = 0usize;
            while done < half {
                let m = chunk.min(half - done);
                let y: Vec<f64> = (0..m)
                    .map(|j| lo + span * ((done + j) as f64 / (half - 1) as f64))
                    .collect();
                let x_field = GridField::constant(1, m, x_value)?;
                let y_field = GridField::new(1, m, y)?;
                let eval = at_loss(&x_field, &y_field, &params)?;
                // grad carries the 1/n mean factor; undo it for per-cell values
                let n = m as f64;
                for g in &eval.grad {
                    sup = sup.max((g * n).abs());
                }
                done += m;
            }
        }

        let rel_gap = (sup - bound).abs() / bound;
        let within_bound = sup <= bound + LIPSCHITZ_SLACK;
        let reaches_bound = rel_gap <= LIPSCHITZ_EXTREMUM_TOLERANCE;
        let below_one = bound < 1.0;
        let expected_below = (0.6..=1.0).contains(&tau);
        rows.push(LipschitzRow {
            tau,
            analytic_bound: bound,
            empirical_sup: sup,
            rel_gap,
            below_one,
            passed: within_bound && reaches_bound && (!expected_below || below_one),
        });
    }

    let passed = rows.iter().all(|r| r.passed);
    Ok(LipschitzReport { rows, passed })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyOracleConfig {
    /// Cells per instance; every one of the 2^k indicator assignments is
    /// enumerated.
    pub cells: usize,
    pub theta: f64,
    pub seed: u64,
}

impl Default for PenaltyOracleConfig {
    fn default() -> Self {
        PenaltyOracleConfig {
            cells: 10,
            theta: crate::loss::at::DEFAULT_THRESHOLD,
            seed: 0x6f72_6163,
        }
    }
}

impl PenaltyOracleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cells == 0 {
            return Err(Error::invalid_param("cells", "must be positive"));
        }
        if self.cells > MAX_ORACLE_CELLS {
            return Err(Error::TooManyCells {
                got: self.cells,
                max: MAX_ORACLE_CELLS,
            });
        }
        if !self.theta.is_finite() || self.theta <= 0.0 {
            return Err(Error::invalid_param("theta", "must be finite and > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PenaltyOracleReport {
    pub cells: usize,
    pub assignments: u64,
    /// Penalty of the all-correct assignment (must be 0).
    pub min_penalty: u64,
    /// Whether the minimum is attained exactly at the f(x) pattern.
    pub unique_argmin_matches: bool,
    /// Max |n*loss - penalty| over all assignments for the saturated loss.
    pub max_loss_gap: f64,
    /// Whether sorting by saturated loss reproduces the penalty order.
    pub rank_consistent: bool,
    /// Penalty always equals the brute-force XOR count of the indicators.
    pub xor_consistent: bool,
    /// Penalty always equals the contingency table's misses + false alarms.
    pub contingency_consistent: bool,
    pub passed: bool,
}

impl PenaltyOracleReport {
    pub const CSV_HEADER: &'static str = "cells,assignments,min_penalty,unique_argmin_matches,max_loss_gap,rank_consistent,xor_consistent,contingency_consistent,passed";

    pub fn to_csv_string(&self) -> String {
        format!(
            "{}\n{},{},{},{},{},{},{},{},{}\n",
            Self::CSV_HEADER,
            self.cells,
            self.assignments,
            self.min_penalty,
            self.unique_argmin_matches,
            self.max_loss_gap,
            self.rank_consistent,
            self.xor_consistent,
            self.contingency_consistent,
            self.passed
        )
    }
}

/// Enumerate every binary forecast-indicator assignment over a random
/// observation of `cells` cells and verify the QUBO story end to end: the
/// overall penalty counts exactly the disagreeing cells (equivalently
/// misses + false alarms), its unique minimum of 0 sits at the f(x) pattern,
/// and the saturated AT loss (tau = 0.01, z = 0, |y - theta| = 0.75) ranks
/// all assignments identically to the penalty.
pub fn run_penalty_oracle(config: &PenaltyOracleConfig) -> Result<PenaltyOracleReport> {
    config.validate()?;
    let k = config.cells;
    let theta = config.theta;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let x: Vec<f64> = (0..k)
        .map(|_| {
            if rng.gen::<bool>() {
                rng.gen_range(0.0..theta)
            } else {
                rng.gen_range(theta..3.0 * theta)
            }
        })
        .collect();
    let x_field = GridField::new(1, k, x.clone())?;
    let x_bits: u64 = x
        .iter()
        .enumerate()
        .map(|(i, &v)| (u64::from(indicator(v, theta))) << i)
        .sum();

    let params = AtLossParams::deterministic(0.01, theta)?;
    let total: u64 = 1u64 << k;
    let n = k as f64;

    let mut min_penalty = u64::MAX;
    let mut argmin = 0u64;
    let mut unique = true;
    let mut max_loss_gap = 0.0f64;
    let mut xor_consistent = true;
    let mut contingency_consistent = true;
    // (loss, penalty) pairs for the rank comparison
    let mut pairs: Vec<(f64, u64)> = Vec::with_capacity(total as usize);

    for bits in 0..total {
        let y: Vec<f64> = (0..k)
            .map(|i| {
                if bits >> i & 1 == 1 {
                    theta + 0.75
                } else {
                    theta - 0.75
                }
            })
            .collect();
        let y_field = GridField::new(1, k, y)?;

        // ground truth: XOR of the indicator assignments
        let penalty_xor = (bits ^ x_bits).count_ones() as u64;
        let penalty = crate::loss::at::overall_penalty(&x_field, &y_field, theta)?;
        if penalty != penalty_xor {
            xor_consistent = false;
        }
        let table = contingency(&x_field, &y_field, theta)?;
        if penalty != table.misses + table.false_alarms {
            contingency_consistent = false;
        }

        let loss = at_loss(&x_field, &y_field, &params)?.value;
        max_loss_gap = max_loss_gap.max((loss * n - penalty as f64).abs());
        pairs.push((loss, penalty));

        match penalty.cmp(&min_penalty) {
            std::cmp::Ordering::Less => {
                min_penalty = penalty;
                argmin = bits;
                unique = true;
            }
            std::cmp::Ordering::Equal => unique = false,
            std::cmp::Ordering::Greater => {}
        }
    }

    // identical ranking: ordering by loss must order penalties monotonically
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let rank_consistent = pairs.windows(2).all(|w| w[0].1 <= w[1].1);

    let unique_argmin_matches = min_penalty == 0 && unique && argmin == x_bits;
    let passed = unique_argmin_matches
        && rank_consistent
        && xor_consistent
        && contingency_consistent
        && max_loss_gap < 1e-9;
    Ok(PenaltyOracleReport {
        cells: k,
        assignments: total,
        min_penalty,
        unique_argmin_matches,
        max_loss_gap,
        rank_consistent,
        xor_consistent,
        contingency_consistent,
        passed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Instant;

    #[test]
    fn gradcheck_default_passes() {
        let report = run_gradcheck(&GradCheckConfig::default()).unwrap();
        assert!(
            report.passed,
            "failures: {:?}",
            report
                .failures()
                .iter()
                .map(|f| (f.family, f.max_rel_err, f.worst_case.clone()))
                .collect::<Vec<_>>()
        );
        assert!(report.families.len() >= 9);
        let total_loss_cases: usize = report
            .families
            .iter()
            .filter(|f| f.family.starts_with("at_"))
            .map(|f| f.cases)
            .sum();
        assert!(total_loss_cases >= 1000 * 12);
    }

    #[test]
    fn gradcheck_absurd_tolerance_fails_honestly() {
        let config = GradCheckConfig {
            loss_tolerance: 1e-18,
            layer_tolerance: 1e-18,
            cases: 50,
            ..GradCheckConfig::default()
        };
        let report = run_gradcheck(&config).unwrap();
        assert!(!report.passed);
        assert!(!report.failures().is_empty());
        // failure listings carry the offending case
        assert!(report.failures()[0].worst_case.contains("case="));
    }

    #[test]
    fn gradcheck_is_deterministic() {
        let a = run_gradcheck(&GradCheckConfig::default()).unwrap();
        let b = run_gradcheck(&GradCheckConfig::default()).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
    }

    #[test]
    fn lipschitz_default_passes_quickly() {
        let t0 = Instant::now();
        let report = run_lipschitz(&LipschitzConfig::default()).unwrap();
        let dt = t0.elapsed();
        assert!(report.passed, "rows: {:?}", report.rows);
        assert!(dt.as_secs() < 10, "sweep took {dt:?}");

        let tau1 = &report.rows[0];
        assert_eq!(tau1.tau, 1.0);
        assert!((tau1.analytic_bound - 16.0 / 27.0).abs() < 1e-15);
        // matches the documented 0.5926 to 4 decimal places
        assert!((tau1.analytic_bound - 0.5926).abs() < 5e-5);
        for row in &report.rows {
            assert!(row.empirical_sup <= row.analytic_bound + LIPSCHITZ_SLACK);
            assert_eq!(row.below_one, row.tau >= 16.0 / 27.0);
            if (0.6..=1.0).contains(&row.tau) {
                assert!(row.below_one);
            }
        }
        let last = report.rows.last().unwrap();
        assert_eq!(last.tau, 0.05);
        assert!(!last.below_one && last.passed);
    }

    #[test]
    fn lipschitz_rejects_bad_config() {
        let mut config = LipschitzConfig::default();
        config.taus = vec![1.5];
        assert!(run_lipschitz(&config).is_err());
        config.taus = vec![];
        assert!(run_lipschitz(&config).is_err());
    }

    #[test]
    fn penalty_oracle_small_instances_pass() {
        for k in [1, 4, 10] {
            let config = PenaltyOracleConfig {
                cells: k,
                ..PenaltyOracleConfig::default()
            };
            let report = run_penalty_oracle(&config).unwrap();
            assert!(report.passed, "k={k}: {report:?}");
            assert_eq!(report.assignments, 1 << k);
            assert_eq!(report.min_penalty, 0);
            assert!(report.max_loss_gap < 1e-9);
        }
    }

    #[test]
    fn penalty_oracle_rejects_oversized_instances() {
        let config = PenaltyOracleConfig {
            cells: 21,
            ..PenaltyOracleConfig::default()
        };
        match run_penalty_oracle(&config) {
            Err(Error::TooManyCells { got: 21, max: 20 }) => {}
            other => panic!("expected size guard, got {other:?}"),
        }
    }

    #[test]
    fn reports_serialize_to_json() {
        let report = run_penalty_oracle(&PenaltyOracleConfig {
            cells: 4,
            ..PenaltyOracleConfig::default()
        })
        .unwrap();
        let js = serde_json::to_string(&report).unwrap();
        assert!(js.contains("\"cells\":4"));
    }
}
