//! Experiment orchestration.
//!
//! A single JSON [`ExperimentConfig`] describes the plant (explicit or
//! generated), the attack, the estimators and detectors under test, and the
//! horizon/seed grid. Three runners consume it:
//!
//! * [`run_estimation_experiment`] — paired-stream MSE comparison: per
//!   replicate seed, one plant trajectory and one attack realization are
//!   shared by every estimator (the attacker instances are seeded
//!   identically, so switching schedules coincide), and each estimator's
//!   running time-average squared error is recorded.
//! * [`run_constrained_sweep`] — two-timescale adaptive-gain runs across a
//!   grid of covariance budgets `xi * Pbar_kalman`.
//! * [`run_roc`] — per detector and target false-alarm rate: tune the
//!   threshold on an attack-free stream, measure the false-alarm rate on a
//!   fresh stream, and the detection rate on an attacked stream.
//!
//! Every stochastic ingredient draws from its own deterministic stream
//! derived from the replicate seed (plant, attack, gain perturbations,
//! packet loss, tuning/validation streams), so reruns reproduce results
//! bit for bit and paired comparisons stay paired.
//!
//! Reports export to `<prefix>_metrics.csv` (long format: `run_id,
//! estimator_or_detector, metric, t_or_alpha, value`), `<prefix>_config.json`
//! (the resolved configuration, generator replaced by the concrete model),
//! and `<prefix>_summary.json`; adaptive-gain runs additionally stream
//! per-slot records and detector runs their alarm logs to CSV. Exports are
//! byte-stable for a given report.

use nalgebra::DVector;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::attack::{AttackSpec, Attacker};
use crate::detect::{
    load_or_compute_table, tune_threshold, Chi2Detector, DetectorOutput, LearnOptions,
    SafeEstimator, SubsetCovarianceTable, SubsetDetector, ThresholdDetector, TABLE_BURN_IN,
    TABLE_HORIZON,
};
use crate::kalman::{
    kf_step, measurement_update, riccati_fixed_point, FilterState, FP_MAX_ITER, FP_TOL,
};
use crate::linalg::symmetrize;
use crate::process_model::{generate_random_system, simulate, ModelDims, SystemModel, Trajectory};
use crate::schedule::StepSchedules;
use crate::sec::{LambdaMode, SecConfig, SecEstimator, SecMode, SecSlotRecord};
use crate::subsets::SensorSubset;
use crate::{Error, Result};

// Deterministic per-purpose seed streams derived from one replicate seed.
/// Plant noise for the main trajectory of a replicate.
pub const STREAM_PLANT: u64 = 1;
const STREAM_ATTACK: u64 = 2;
const STREAM_SEC: u64 = 3;
const STREAM_LOSS: u64 = 4;
const STREAM_LEARN_PLANT: u64 = 5;
const STREAM_VALIDATE_PLANT: u64 = 6;
const STREAM_ATTACKED_PLANT: u64 = 7;

/// Splitmix-style mixing so related replicate seeds do not produce related
/// generator states across purposes.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `10 log10(linear)`.
pub fn mse_to_db(linear: f64) -> f64 {
    10.0 * linear.log10()
}

/// Inverse of [`mse_to_db`].
pub fn db_to_mse(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

fn default_horizon() -> usize {
    10_000
}
fn default_burn_in() -> usize {
    1000
}
fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}
fn default_j() -> usize {
    10
}
fn default_safe_j() -> usize {
    10
}
fn default_table_horizon() -> usize {
    TABLE_HORIZON
}
fn default_table_burn_in() -> usize {
    TABLE_BURN_IN
}
fn default_table_seed() -> u64 {
    7777
}
fn default_learn_horizon() -> usize {
    60_000
}
fn default_validation_horizon() -> usize {
    60_000
}

/// Plant description: either generator parameters or an explicit model.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemSpec {
    Generator(GeneratorParams),
    Model(SystemModel),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorParams {
    pub q: usize,
    #[serde(rename = "N")]
    pub n_sensors: usize,
    pub k: usize,
    pub n0: usize,
    pub seed: u64,
}

impl SystemSpec {
    pub fn resolve(&self) -> Result<SystemModel> {
        match self {
            SystemSpec::Generator(g) => generate_random_system(
                ModelDims {
                    q: g.q,
                    n_sensors: g.n_sensors,
                    k: g.k,
                    n0: g.n0,
                },
                g.seed,
            ),
            SystemSpec::Model(m) => Ok(m.clone()),
        }
    }
}

/// Adaptive-gain estimator parameters shared by the one-step and
/// full-history variants. Exactly one of `lambda_fixed` / `xi` must be set:
/// a fixed trade-off weight, or a covariance budget `xi * Pbar_kalman`
/// tracked by the slow timescale.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SecEntry {
    #[serde(default)]
    pub lambda_fixed: Option<f64>,
    #[serde(default)]
    pub xi: Option<f64>,
    #[serde(default)]
    pub delta: Option<f64>,
    #[serde(default)]
    pub l: Option<f64>,
    #[serde(default)]
    pub schedules: Option<StepSchedules>,
    /// Per-sensor packet-loss probabilities (length N).
    #[serde(default)]
    pub packet_loss: Option<Vec<f64>>,
}

impl SecEntry {
    fn validate(&self, dims: &ModelDims) -> Result<()> {
        match (self.lambda_fixed, self.xi) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(Error::Validation(
                    "set exactly one of lambda_fixed and xi".into(),
                ))
            }
            (Some(l), None) if !(l >= 0.0 && l.is_finite()) => {
                return Err(Error::Validation("lambda_fixed must be nonnegative".into()))
            }
            (None, Some(xi)) if !(xi > 1.0 && xi.is_finite()) => {
                return Err(Error::Validation(
                    "xi must exceed 1 (budget above the optimal filter)".into(),
                ))
            }
            _ => {}
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d < 1.0) {
                return Err(Error::Validation("delta must lie in (0, 1)".into()));
            }
        }
        if let Some(l) = self.l {
            if !(l > 0.0) {
                return Err(Error::Validation("bound l must be positive".into()));
            }
        }
        if let Some(s) = &self.schedules {
            s.validate(self.xi.is_some())?;
        }
        if let Some(p) = &self.packet_loss {
            if p.len() != dims.n_sensors {
                return Err(Error::Validation(format!(
                    "packet_loss needs one probability per sensor ({} given, N = {})",
                    p.len(),
                    dims.n_sensors
                )));
            }
            if p.iter().any(|&v| !(0.0..=1.0).contains(&v)) {
                return Err(Error::Validation(
                    "packet-loss probabilities must lie in [0, 1]".into(),
                ));
            }
        }
        Ok(())
    }

    /// Builds the estimator config; `p_kalman` is the optimal filter's
    /// limiting MSE (needed only for the budget mode).
    fn to_config(&self, mode: SecMode, p_kalman: f64, sec_seed: u64) -> Result<SecConfig> {
        let (lambda, schedules) = match (self.lambda_fixed, self.xi) {
            (Some(l), None) => (
                LambdaMode::Fixed(l),
                self.schedules.unwrap_or_else(|| StepSchedules::defaults(None)),
            ),
            (None, Some(xi)) => {
                let p_bar = xi * p_kalman;
                (
                    LambdaMode::Adaptive { p_bar },
                    self.schedules
                        .unwrap_or_else(|| StepSchedules::defaults(Some(1.0 / p_bar))),
                )
            }
            _ => unreachable!("validated"),
        };
        let mut cfg = SecConfig::new(mode, lambda, schedules, sec_seed);
        if let Some(d) = self.delta {
            cfg.delta = d;
        }
        if let Some(l) = self.l {
            cfg.bound = l;
        }
        Ok(cfg)
    }
}

/// One estimator under test.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum EstimatorSpec {
    /// Full-history adaptive gain.
    Sec(SecEntry),
    /// One-step adaptive gain.
    SecL(SecEntry),
    /// Optimal filter on the corrupted stream.
    KalmanBlind,
    /// Optimal filter that ignores the currently attacked rows.
    Genie,
    /// Two-stage gated filter with a designated safe sensor set (1-based).
    Safe {
        safe_set: Vec<usize>,
        #[serde(default = "default_safe_j")]
        j: usize,
        eta: f64,
    },
}

impl EstimatorSpec {
    pub fn base_label(&self) -> &'static str {
        match self {
            EstimatorSpec::Sec(_) => "sec",
            EstimatorSpec::SecL(_) => "sec_l",
            EstimatorSpec::KalmanBlind => "kalman_blind",
            EstimatorSpec::Genie => "genie",
            EstimatorSpec::Safe { .. } => "safe",
        }
    }

    fn validate(&self, dims: &ModelDims) -> Result<()> {
        match self {
            EstimatorSpec::Sec(e) | EstimatorSpec::SecL(e) => e.validate(dims),
            EstimatorSpec::KalmanBlind | EstimatorSpec::Genie => Ok(()),
            EstimatorSpec::Safe { safe_set, j, eta } => {
                SensorSubset::from_one_based(safe_set, dims.n_sensors)?;
                if safe_set.is_empty() {
                    return Err(Error::Validation("safe_set must be nonempty".into()));
                }
                if *j == 0 {
                    return Err(Error::Validation("window J must be positive".into()));
                }
                if !(*eta >= 0.0) {
                    return Err(Error::Validation("eta must be nonnegative".into()));
                }
                Ok(())
            }
        }
    }
}

/// One detector under test. `eta` pins the threshold; `alpha` asks for it
/// to be tuned to that false-alarm target before the run (the ROC runner
/// supplies its own alpha grid and ignores both).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum DetectorSpec {
    Detect {
        #[serde(default = "default_j")]
        j: usize,
        #[serde(default)]
        eta: Option<f64>,
        #[serde(default)]
        alpha: Option<f64>,
        #[serde(default = "default_table_horizon")]
        table_horizon: usize,
        #[serde(default = "default_table_burn_in")]
        table_burn_in: usize,
        #[serde(default = "default_table_seed")]
        table_seed: u64,
    },
    Chi2 {
        #[serde(default = "default_j")]
        j: usize,
        #[serde(default)]
        eta: Option<f64>,
        #[serde(default)]
        alpha: Option<f64>,
    },
    Safe {
        safe_set: Vec<usize>,
        #[serde(default = "default_j")]
        j: usize,
        #[serde(default)]
        eta: Option<f64>,
        #[serde(default)]
        alpha: Option<f64>,
    },
}

impl DetectorSpec {
    pub fn base_label(&self) -> &'static str {
        match self {
            DetectorSpec::Detect { .. } => "detect",
            DetectorSpec::Chi2 { .. } => "chi2",
            DetectorSpec::Safe { .. } => "safe",
        }
    }

    fn eta_alpha(&self) -> (Option<f64>, Option<f64>) {
        match self {
            DetectorSpec::Detect { eta, alpha, .. }
            | DetectorSpec::Chi2 { eta, alpha, .. }
            | DetectorSpec::Safe { eta, alpha, .. } => (*eta, *alpha),
        }
    }

    /// The estimation runner needs a threshold source; the ROC runner
    /// brings its own alpha grid and skips this.
    fn require_threshold(&self) -> Result<()> {
        if let (None, None) = self.eta_alpha() {
            return Err(Error::Validation(
                "detector needs eta or alpha (or run the roc sweep)".into(),
            ));
        }
        Ok(())
    }

    fn validate(&self, dims: &ModelDims) -> Result<()> {
        match self.eta_alpha() {
            (Some(e), _) if !(e >= 0.0) => {
                return Err(Error::Validation("eta must be nonnegative".into()))
            }
            (_, Some(a)) if !(a > 0.0 && a < 1.0) => {
                return Err(Error::Validation("alpha must lie in (0, 1)".into()))
            }
            _ => {}
        }
        match self {
            DetectorSpec::Detect {
                j,
                table_horizon,
                table_burn_in,
                ..
            } => {
                if *j == 0 {
                    return Err(Error::Validation("window J must be positive".into()));
                }
                if table_horizon <= table_burn_in {
                    return Err(Error::Validation(
                        "table_horizon must exceed table_burn_in".into(),
                    ));
                }
                Ok(())
            }
            DetectorSpec::Chi2 { j, .. } => {
                if *j == 0 {
                    return Err(Error::Validation("window J must be positive".into()));
                }
                Ok(())
            }
            DetectorSpec::Safe { safe_set, j, .. } => {
                SensorSubset::from_one_based(safe_set, dims.n_sensors)?;
                if safe_set.is_empty() {
                    return Err(Error::Validation("safe_set must be nonempty".into()));
                }
                if *j == 0 {
                    return Err(Error::Validation("window J must be positive".into()));
                }
                Ok(())
            }
        }
    }
}

/// Stream lengths for threshold tuning and validation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnParams {
    #[serde(default = "default_learn_horizon")]
    pub horizon: usize,
    #[serde(default = "default_validation_horizon")]
    pub validation_horizon: usize,
}

impl Default for LearnParams {
    fn default() -> Self {
        LearnParams {
            horizon: default_learn_horizon(),
            validation_horizon: default_validation_horizon(),
        }
    }
}

/// Top-level experiment description (one JSON file drives every subcommand).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemSpec,
    #[serde(default)]
    pub attack: Option<AttackSpec>,
    #[serde(default)]
    pub estimators: Vec<EstimatorSpec>,
    #[serde(default)]
    pub detectors: Vec<DetectorSpec>,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in: usize,
    /// Replicate seeds; every derived stream is keyed off these.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Budget grid for the constrained sweep.
    #[serde(default)]
    pub xi_list: Option<Vec<f64>>,
    /// False-alarm targets for the ROC sweep.
    #[serde(default)]
    pub alpha_grid: Option<Vec<f64>>,
    #[serde(default)]
    pub learn: LearnParams,
}

impl ExperimentConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let cfg: ExperimentConfig = serde_json::from_reader(file)
            .map_err(|e| Error::Validation(format!("config {}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        serde_json::to_writer_pretty(file, self)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.system.resolve()?;
        let dims = &model.dims;
        if self.horizon == 0 || self.horizon <= self.burn_in {
            return Err(Error::Validation("horizon must exceed burn_in".into()));
        }
        if self.seeds.is_empty() {
            return Err(Error::Validation("at least one replicate seed".into()));
        }
        for e in &self.estimators {
            e.validate(dims)?;
        }
        for d in &self.detectors {
            d.validate(dims)?;
        }
        if let Some(xs) = &self.xi_list {
            if xs.is_empty() || xs.iter().any(|&x| !(x > 1.0 && x.is_finite())) {
                return Err(Error::Validation("xi_list entries must exceed 1".into()));
            }
        }
        if let Some(gs) = &self.alpha_grid {
            if gs.is_empty() || gs.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
                return Err(Error::Validation(
                    "alpha_grid entries must lie in (0, 1)".into(),
                ));
            }
        }
        if let Some(spec) = &self.attack {
            // Construction performs the full validation.
            Attacker::new(&model, spec, 0)?;
        }
        if self.learn.horizon < 100 || self.learn.validation_horizon < 100 {
            return Err(Error::Validation(
                "learn horizons must be at least 100 slots".into(),
            ));
        }
        Ok(())
    }

    /// The same config with the plant pinned to its resolved matrices, so a
    /// reloaded export reproduces the identical run.
    pub fn resolved(&self) -> Result<Self> {
        let mut out = self.clone();
        out.system = SystemSpec::Model(self.system.resolve()?);
        Ok(out)
    }

    fn attack_or_none(&self) -> AttackSpec {
        self.attack.clone().unwrap_or_else(AttackSpec::none)
    }
}

fn unique_labels<T>(items: &[T], base: impl Fn(&T) -> String) -> Vec<String> {
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    items
        .iter()
        .map(|it| {
            let b = base(it);
            let n = seen.entry(b.clone()).or_insert(0);
            *n += 1;
            if *n == 1 {
                b
            } else {
                format!("{b}_{n}")
            }
        })
        .collect()
}

struct LossDriver {
    rng: ChaCha8Rng,
    probs: Vec<f64>,
}

impl LossDriver {
    fn new(probs: Vec<f64>, seed: u64) -> Self {
        LossDriver {
            rng: ChaCha8Rng::seed_from_u64(seed),
            probs,
        }
    }

    /// Draws the delivered sensor set for one slot (one uniform per sensor,
    /// in sensor order, regardless of outcome).
    fn draw(&mut self) -> SensorSubset {
        let n = self.probs.len();
        let kept: Vec<usize> = (0..n)
            .filter(|&i| {
                let u: f64 = self.rng.random();
                u >= self.probs[i]
            })
            .collect();
        SensorSubset::new(kept, n).expect("indices in range")
    }
}

enum DriverKind {
    Blind(FilterState),
    Genie(FilterState),
    SecFamily {
        est: Box<SecEstimator>,
        loss: Option<LossDriver>,
    },
    Safe(Box<SafeEstimator>),
}

struct EstimatorDriver {
    label: String,
    attacker: Attacker,
    kind: DriverKind,
    slots: Vec<SecSlotRecord>,
}

impl EstimatorDriver {
    fn current_estimate(&self) -> DVector<f64> {
        match &self.kind {
            DriverKind::Blind(f) | DriverKind::Genie(f) => f.x_hat.clone(),
            DriverKind::SecFamily { est, .. } => est.estimate().clone(),
            DriverKind::Safe(est) => est.estimate().clone(),
        }
    }

    /// Advances one slot: corrupt the clean observation against this
    /// estimator's own previous estimate, then update.
    fn step(&mut self, t: usize, y_clean: &DVector<f64>, model: &SystemModel) -> Result<DVector<f64>> {
        self.attacker.begin_slot(t);
        let reference = self.current_estimate();
        let attacked = self.attacker.attacked_now().clone();
        let y = self.attacker.corrupt(y_clean, Some(&reference))?;
        match &mut self.kind {
            DriverKind::Blind(f) => {
                *f = kf_step(f, model, &y)?.0;
            }
            DriverKind::Genie(f) => {
                let benign = attacked.complement(model.dims.n_sensors);
                let (cb, rb) = model.restrict_obs(&benign);
                let yb = model.gather_obs(&y, &benign);
                let x_pred = &model.a * &f.x_hat;
                let p_pred =
                    symmetrize(&(&model.a * &f.p * model.a.transpose() + &model.q_cov));
                *f = measurement_update(&x_pred, &p_pred, &cb, &rb, &yb)?.0;
            }
            DriverKind::SecFamily { est, loss } => {
                let observed = loss.as_mut().map(|l| l.draw());
                let rec = est.step(&y, observed.as_ref())?;
                self.slots.push(rec);
            }
            DriverKind::Safe(est) => {
                est.step(&y)?;
            }
        }
        Ok(self.current_estimate())
    }
}

/// One estimator's trace on one replicate.
#[derive(Debug, Clone)]
pub struct EstimatorRun {
    pub label: String,
    pub seed: u64,
    /// Running time-average squared error, one entry per slot.
    pub running_mse: Vec<f64>,
    /// Instantaneous squared error per slot.
    pub mse_instant: Vec<f64>,
    /// Post-burn-in average.
    pub final_linear: f64,
    pub final_db: f64,
    /// Per-slot adaptive-gain records (empty for other estimators).
    pub slots: Vec<SecSlotRecord>,
}

/// One detector's per-slot log on one replicate.
#[derive(Debug, Clone)]
pub struct AlarmRecord {
    pub t: usize,
    pub statistic: f64,
    pub eta: f64,
    pub alarm: bool,
    pub localized: Option<SensorSubset>,
    pub true_attacked: SensorSubset,
}

#[derive(Debug, Clone)]
pub struct AlarmLog {
    pub label: String,
    pub seed: u64,
    pub eta: f64,
    pub records: Vec<AlarmRecord>,
    /// Alarm fraction over warm slots.
    pub trigger_rate: f64,
    /// Among alarm slots, fraction localized to the true attacked set
    /// (only detectors that localize).
    pub localization_accuracy: Option<f64>,
}

/// Full estimation-experiment output.
#[derive(Debug, Clone)]
pub struct EstimationReport {
    pub config: ExperimentConfig,
    pub model: SystemModel,
    pub runs: Vec<EstimatorRun>,
    pub alarm_logs: Vec<AlarmLog>,
    pub wall_clock_s: f64,
}

/// A corrupted stream as the fusion center receives it, with the per-slot
/// ground-truth attacked set. The attacker's reference estimate is a
/// central optimal filter running on the corrupted output.
pub struct CorruptedStream {
    pub observations: Vec<DVector<f64>>,
    pub attacked: Vec<SensorSubset>,
}

pub fn build_corrupted_stream(
    model: &SystemModel,
    spec: &AttackSpec,
    traj: &Trajectory,
    attack_seed: u64,
) -> Result<CorruptedStream> {
    let mut attacker = Attacker::new(model, spec, attack_seed)?;
    let mut reference = FilterState::zeroed(model.dims.q);
    let mut observations = Vec::with_capacity(traj.observations.len());
    let mut attacked = Vec::with_capacity(traj.observations.len());
    for (i, y) in traj.observations.iter().enumerate() {
        attacker.begin_slot(i + 1);
        let yt = attacker.corrupt(y, Some(&reference.x_hat))?;
        attacked.push(attacker.attacked_now().clone());
        reference = kf_step(&reference, model, &yt)?.0;
        observations.push(yt);
    }
    Ok(CorruptedStream {
        observations,
        attacked,
    })
}

/// Runs a detector over a recorded stream at a fixed threshold and returns
/// its trigger rate over warm slots plus (when ground truth is given and
/// the detector localizes) the localization accuracy over alarm slots.
pub fn measure_detector_rates<D: ThresholdDetector + ?Sized>(
    detector: &mut D,
    observations: &[DVector<f64>],
    truth: Option<&[SensorSubset]>,
) -> Result<(f64, Option<f64>, Vec<DetectorOutput>)> {
    let mut warm = 0usize;
    let mut alarms = 0usize;
    let mut localized_hits = 0usize;
    let mut localizing = false;
    let mut outputs = Vec::with_capacity(observations.len());
    for (i, y) in observations.iter().enumerate() {
        let out = detector.step(y)?;
        if out.warm {
            warm += 1;
            if out.alarm {
                alarms += 1;
                if let Some(loc) = &out.localized {
                    localizing = true;
                    if let Some(truth) = truth {
                        if loc == &truth[i] {
                            localized_hits += 1;
                        }
                    }
                }
            }
        }
        outputs.push(out);
    }
    if warm == 0 {
        return Err(Error::Validation(
            "stream shorter than the detector window".into(),
        ));
    }
    let rate = alarms as f64 / warm as f64;
    let acc = if localizing && truth.is_some() && alarms > 0 {
        Some(localized_hits as f64 / alarms as f64)
    } else {
        None
    };
    Ok((rate, acc, outputs))
}

fn build_detector(
    model: &SystemModel,
    spec: &DetectorSpec,
    table: Option<&SubsetCovarianceTable>,
    eta: f64,
) -> Result<Box<dyn ThresholdDetector>> {
    match spec {
        DetectorSpec::Detect { j, .. } => {
            let table = table.ok_or_else(|| {
                Error::Computation("subset covariance table missing".into())
            })?;
            Ok(Box::new(SubsetDetector::new(model, table, *j, eta)?))
        }
        DetectorSpec::Chi2 { j, .. } => Ok(Box::new(Chi2Detector::new(model, *j, eta)?)),
        DetectorSpec::Safe { safe_set, j, .. } => {
            let safe = SensorSubset::from_one_based(safe_set, model.dims.n_sensors)?;
            Ok(Box::new(SafeEstimator::new(model, &safe, *j, eta)?))
        }
    }
}

fn detect_table_params(specs: &[DetectorSpec]) -> Option<(usize, usize, u64)> {
    specs.iter().find_map(|d| match d {
        DetectorSpec::Detect {
            table_horizon,
            table_burn_in,
            table_seed,
            ..
        } => Some((*table_horizon, *table_burn_in, *table_seed)),
        _ => None,
    })
}

/// Paired-stream MSE experiment over the configured replicate seeds.
pub fn run_estimation_experiment(
    cfg: &ExperimentConfig,
    cache_dir: Option<&Path>,
) -> Result<EstimationReport> {
    cfg.validate()?;
    if cfg.estimators.is_empty() && cfg.detectors.is_empty() {
        return Err(Error::Validation(
            "configure at least one estimator or detector".into(),
        ));
    }
    for d in &cfg.detectors {
        d.require_threshold()?;
    }
    let start = Instant::now();
    let model = cfg.system.resolve()?;
    let p_kalman = riccati_fixed_point(&model, FP_TOL, FP_MAX_ITER)?.limiting_mse();
    let table = match detect_table_params(&cfg.detectors) {
        Some((h, b, s)) => Some(load_or_compute_table(&model, h, b, s, cache_dir)?),
        None => None,
    };
    let est_labels = unique_labels(&cfg.estimators, |e| e.base_label().to_string());
    let det_labels = unique_labels(&cfg.detectors, |d| d.base_label().to_string());

    let per_seed: Vec<Result<(Vec<EstimatorRun>, Vec<AlarmLog>)>> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            run_estimation_replicate(cfg, &model, p_kalman, table.as_ref(), &est_labels, &det_labels, seed)
        })
        .collect();

    let mut runs = Vec::new();
    let mut alarm_logs = Vec::new();
    for r in per_seed {
        let (rs, ls) = r?;
        runs.extend(rs);
        alarm_logs.extend(ls);
    }
    Ok(EstimationReport {
        config: cfg.resolved()?,
        model,
        runs,
        alarm_logs,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

fn run_estimation_replicate(
    cfg: &ExperimentConfig,
    model: &SystemModel,
    p_kalman: f64,
    table: Option<&SubsetCovarianceTable>,
    est_labels: &[String],
    det_labels: &[String],
    seed: u64,
) -> Result<(Vec<EstimatorRun>, Vec<AlarmLog>)> {
    let traj = simulate(model, cfg.horizon, None, derive_seed(seed, STREAM_PLANT))?;
    let attack = cfg.attack_or_none();
    let attack_seed = derive_seed(seed, STREAM_ATTACK);

    let mut drivers: Vec<EstimatorDriver> = Vec::with_capacity(cfg.estimators.len());
    for (spec, label) in cfg.estimators.iter().zip(est_labels) {
        let attacker = Attacker::new(model, &attack, attack_seed)?;
        let kind = match spec {
            EstimatorSpec::KalmanBlind => DriverKind::Blind(FilterState::zeroed(model.dims.q)),
            EstimatorSpec::Genie => DriverKind::Genie(FilterState::zeroed(model.dims.q)),
            EstimatorSpec::Sec(e) | EstimatorSpec::SecL(e) => {
                let mode = if matches!(spec, EstimatorSpec::Sec(_)) {
                    SecMode::FullHistory
                } else {
                    SecMode::OneStep
                };
                let sec_cfg = e.to_config(mode, p_kalman, derive_seed(seed, STREAM_SEC))?;
                let est = Box::new(SecEstimator::new(model, sec_cfg)?);
                let loss = e
                    .packet_loss
                    .clone()
                    .map(|p| LossDriver::new(p, derive_seed(seed, STREAM_LOSS)));
                DriverKind::SecFamily { est, loss }
            }
            EstimatorSpec::Safe { safe_set, j, eta } => {
                let safe = SensorSubset::from_one_based(safe_set, model.dims.n_sensors)?;
                DriverKind::Safe(Box::new(SafeEstimator::new(model, &safe, *j, *eta)?))
            }
        };
        drivers.push(EstimatorDriver {
            label: label.clone(),
            attacker,
            kind,
            slots: Vec::new(),
        });
    }

    let horizon = cfg.horizon;
    let mut mse_instant: Vec<Vec<f64>> = vec![Vec::with_capacity(horizon); drivers.len()];
    for t in 1..=horizon {
        let y = &traj.observations[t - 1];
        let x_true = &traj.states[t - 1];
        for (di, driver) in drivers.iter_mut().enumerate() {
            let est = driver.step(t, y, model)?;
            mse_instant[di].push((est - x_true).norm_squared());
        }
    }

    let mut runs = Vec::with_capacity(drivers.len());
    for (driver, inst) in drivers.into_iter().zip(mse_instant) {
        let mut running = Vec::with_capacity(horizon);
        let mut acc = 0.0;
        for (i, &v) in inst.iter().enumerate() {
            acc += v;
            running.push(acc / (i + 1) as f64);
        }
        let tail = &inst[cfg.burn_in..];
        let final_linear = tail.iter().sum::<f64>() / tail.len() as f64;
        runs.push(EstimatorRun {
            label: driver.label,
            seed,
            running_mse: running,
            mse_instant: inst,
            final_linear,
            final_db: mse_to_db(final_linear),
            slots: driver.slots,
        });
    }

    // Detectors all monitor the same corrupted stream (referenced to a
    // central optimal filter).
    let mut alarm_logs = Vec::new();
    if !cfg.detectors.is_empty() {
        let stream = build_corrupted_stream(model, &attack, &traj, attack_seed)?;
        for (spec, label) in cfg.detectors.iter().zip(det_labels) {
            let (eta_fixed, alpha) = spec.eta_alpha();
            let eta = match (eta_fixed, alpha) {
                (Some(e), _) => e,
                (None, Some(a)) => {
                    let tune_traj = simulate(
                        model,
                        cfg.learn.horizon,
                        None,
                        derive_seed(seed, STREAM_LEARN_PLANT),
                    )?;
                    let mut det = build_detector(model, spec, table, 0.0)?;
                    let opts = LearnOptions::new(a);
                    tune_threshold(det.as_mut(), &tune_traj.observations, &opts)?.eta
                }
                (None, None) => unreachable!("validated"),
            };
            let mut det = build_detector(model, spec, table, eta)?;
            let (rate, acc, outputs) =
                measure_detector_rates(det.as_mut(), &stream.observations, Some(&stream.attacked))?;
            let records = outputs
                .into_iter()
                .enumerate()
                .map(|(i, o)| AlarmRecord {
                    t: o.t,
                    statistic: o.statistic,
                    eta,
                    alarm: o.alarm,
                    localized: o.localized,
                    true_attacked: stream.attacked[i].clone(),
                })
                .collect();
            alarm_logs.push(AlarmLog {
                label: label.clone(),
                seed,
                eta,
                records,
                trigger_rate: rate,
                localization_accuracy: acc,
            });
        }
    }
    Ok((runs, alarm_logs))
}

/// One budget point of the constrained sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub xi: f64,
    pub seed: u64,
    pub p_bar: f64,
    pub mse_final_linear: f64,
    pub mse_final_db: f64,
    pub lambda_final: f64,
    /// Time-average of `trace(P_t)` over the last half of the run.
    pub trace_avg_last_half: f64,
    /// Whether that average stays within 110% of the budget.
    pub constraint_ok: bool,
    /// `(t, lambda)` samples thinned to at most ~5000 points.
    pub lambda_trace: Vec<(usize, f64)>,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub config: ExperimentConfig,
    pub model: SystemModel,
    pub p_kalman: f64,
    pub rows: Vec<SweepRow>,
    pub wall_clock_s: f64,
}

fn sweep_template(cfg: &ExperimentConfig) -> SecEntry {
    cfg.estimators
        .iter()
        .find_map(|e| match e {
            EstimatorSpec::Sec(en) | EstimatorSpec::SecL(en) => Some(en.clone()),
            _ => None,
        })
        .unwrap_or_default()
}

/// Two-timescale budget sweep: for each `xi` in the grid and each seed, a
/// one-step adaptive run against the configured attack, the budget set to
/// `xi * Pbar_kalman`.
pub fn run_constrained_sweep(cfg: &ExperimentConfig) -> Result<SweepReport> {
    cfg.validate()?;
    let xi_list = cfg
        .xi_list
        .clone()
        .ok_or_else(|| Error::Validation("xi_list required for the sweep".into()))?;
    let start = Instant::now();
    let model = cfg.system.resolve()?;
    let p_kalman = riccati_fixed_point(&model, FP_TOL, FP_MAX_ITER)?.limiting_mse();
    let template = sweep_template(cfg);

    let points: Vec<(f64, u64)> = xi_list
        .iter()
        .flat_map(|&xi| cfg.seeds.iter().map(move |&s| (xi, s)))
        .collect();
    let rows: Vec<Result<SweepRow>> = points
        .par_iter()
        .map(|&(xi, seed)| run_sweep_point(cfg, &model, &template, p_kalman, xi, seed))
        .collect();
    let rows = rows.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        config: cfg.resolved()?,
        model,
        p_kalman,
        rows,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

fn run_sweep_point(
    cfg: &ExperimentConfig,
    model: &SystemModel,
    template: &SecEntry,
    p_kalman: f64,
    xi: f64,
    seed: u64,
) -> Result<SweepRow> {
    let mut entry = template.clone();
    entry.lambda_fixed = None;
    entry.xi = Some(xi);
    let sec_cfg = entry.to_config(SecMode::OneStep, p_kalman, derive_seed(seed, STREAM_SEC))?;
    let p_bar = xi * p_kalman;

    let traj = simulate(model, cfg.horizon, None, derive_seed(seed, STREAM_PLANT))?;
    let attack = cfg.attack_or_none();
    let mut attacker = Attacker::new(model, &attack, derive_seed(seed, STREAM_ATTACK))?;
    let mut est = SecEstimator::new(model, sec_cfg)?;
    let mut loss = entry
        .packet_loss
        .clone()
        .map(|p| LossDriver::new(p, derive_seed(seed, STREAM_LOSS)));

    let horizon = cfg.horizon;
    let stride = (horizon / 5000).max(1);
    let mut se_tail_sum = 0.0;
    let mut se_tail_n = 0usize;
    let mut trace_sum_last_half = 0.0;
    let mut trace_n_last_half = 0usize;
    let mut lambda_trace = Vec::new();
    let mut lambda_final = 0.0;
    for t in 1..=horizon {
        let y = &traj.observations[t - 1];
        attacker.begin_slot(t);
        let reference = est.estimate().clone();
        let yt = attacker.corrupt(y, Some(&reference))?;
        let observed = loss.as_mut().map(|l| l.draw());
        let rec = est.step(&yt, observed.as_ref())?;
        let se = (est.estimate() - &traj.states[t - 1]).norm_squared();
        if t > cfg.burn_in {
            se_tail_sum += se;
            se_tail_n += 1;
        }
        if t > horizon / 2 {
            trace_sum_last_half += rec.trace_p;
            trace_n_last_half += 1;
        }
        if t % stride == 0 || t == horizon {
            lambda_trace.push((t, rec.lambda));
        }
        lambda_final = rec.lambda;
    }
    let mse_final = se_tail_sum / se_tail_n as f64;
    let trace_avg = trace_sum_last_half / trace_n_last_half as f64;
    Ok(SweepRow {
        xi,
        seed,
        p_bar,
        mse_final_linear: mse_final,
        mse_final_db: mse_to_db(mse_final),
        lambda_final,
        trace_avg_last_half: trace_avg,
        constraint_ok: trace_avg <= 1.1 * p_bar,
        lambda_trace,
    })
}

/// One (detector, alpha, seed) operating point.
#[derive(Debug, Clone)]
pub struct RocPoint {
    pub detector: String,
    pub alpha: f64,
    pub seed: u64,
    pub eta: f64,
    /// Trigger rate on a fresh attack-free validation stream.
    pub p_f: f64,
    /// Trigger rate on the attacked stream.
    pub p_d: f64,
    pub localization_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct RocReport {
    pub config: ExperimentConfig,
    pub model: SystemModel,
    pub points: Vec<RocPoint>,
    pub wall_clock_s: f64,
}

/// Threshold-tuned operating points for every configured detector across
/// the alpha grid: tune on one attack-free stream, measure the false-alarm
/// rate on a second, and the detection rate on an attacked stream.
pub fn run_roc(cfg: &ExperimentConfig, cache_dir: Option<&Path>) -> Result<RocReport> {
    cfg.validate()?;
    if cfg.detectors.is_empty() {
        return Err(Error::Validation("roc needs at least one detector".into()));
    }
    if cfg.attack.is_none() {
        return Err(Error::Validation("roc needs an attack spec".into()));
    }
    let alpha_grid = cfg
        .alpha_grid
        .clone()
        .ok_or_else(|| Error::Validation("alpha_grid required for roc".into()))?;
    let start = Instant::now();
    let model = cfg.system.resolve()?;
    let table = match detect_table_params(&cfg.detectors) {
        Some((h, b, s)) => Some(load_or_compute_table(&model, h, b, s, cache_dir)?),
        None => None,
    };
    let det_labels = unique_labels(&cfg.detectors, |d| d.base_label().to_string());

    let mut tasks = Vec::new();
    for (di, spec) in cfg.detectors.iter().enumerate() {
        for &alpha in &alpha_grid {
            for &seed in &cfg.seeds {
                tasks.push((di, spec.clone(), det_labels[di].clone(), alpha, seed));
            }
        }
    }
    let points: Vec<Result<RocPoint>> = tasks
        .par_iter()
        .map(|(_, spec, label, alpha, seed)| {
            run_roc_point(cfg, &model, table.as_ref(), spec, label, *alpha, *seed)
        })
        .collect();
    let points = points.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(RocReport {
        config: cfg.resolved()?,
        model,
        points,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

fn run_roc_point(
    cfg: &ExperimentConfig,
    model: &SystemModel,
    table: Option<&SubsetCovarianceTable>,
    spec: &DetectorSpec,
    label: &str,
    alpha: f64,
    seed: u64,
) -> Result<RocPoint> {
    // Tune on an attack-free stream.
    let tune_traj = simulate(
        model,
        cfg.learn.horizon,
        None,
        derive_seed(seed, STREAM_LEARN_PLANT),
    )?;
    let mut det = build_detector(model, spec, table, 0.0)?;
    let opts = LearnOptions::new(alpha);
    let eta = tune_threshold(det.as_mut(), &tune_traj.observations, &opts)?.eta;

    // False-alarm rate on a fresh attack-free stream.
    let valid_traj = simulate(
        model,
        cfg.learn.validation_horizon,
        None,
        derive_seed(seed, STREAM_VALIDATE_PLANT),
    )?;
    let mut det = build_detector(model, spec, table, eta)?;
    let (p_f, _, _) = measure_detector_rates(det.as_mut(), &valid_traj.observations, None)?;

    // Detection rate on an attacked stream.
    let attacked_traj = simulate(
        model,
        cfg.learn.validation_horizon,
        None,
        derive_seed(seed, STREAM_ATTACKED_PLANT),
    )?;
    let attack = cfg.attack_or_none();
    let stream = build_corrupted_stream(
        model,
        &attack,
        &attacked_traj,
        derive_seed(seed, STREAM_ATTACK),
    )?;
    let mut det = build_detector(model, spec, table, eta)?;
    let (p_d, acc, _) =
        measure_detector_rates(det.as_mut(), &stream.observations, Some(&stream.attacked))?;

    Ok(RocPoint {
        detector: label.to_string(),
        alpha,
        seed,
        eta,
        p_f,
        p_d,
        localization_accuracy: acc,
    })
}

/// One threshold-tuning run.
#[derive(Debug, Clone)]
pub struct LearnRun {
    pub detector: String,
    pub alpha: f64,
    pub seed: u64,
    pub eta: f64,
    /// Alarm fraction over the final 20% of tuning decisions.
    pub tail_trigger_rate: f64,
    pub steps: usize,
    pub eta_path: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LearnReport {
    pub config: ExperimentConfig,
    pub model: SystemModel,
    pub runs: Vec<LearnRun>,
    pub wall_clock_s: f64,
}

/// Tunes every configured detector's threshold to its `alpha` target on an
/// attack-free stream, per replicate seed.
pub fn run_learn(cfg: &ExperimentConfig, cache_dir: Option<&Path>) -> Result<LearnReport> {
    cfg.validate()?;
    if cfg.detectors.is_empty() {
        return Err(Error::Validation(
            "learn-eta needs at least one detector".into(),
        ));
    }
    for d in &cfg.detectors {
        if d.eta_alpha().1.is_none() {
            return Err(Error::Validation(
                "learn-eta needs alpha on every detector".into(),
            ));
        }
    }
    let start = Instant::now();
    let model = cfg.system.resolve()?;
    let table = match detect_table_params(&cfg.detectors) {
        Some((h, b, s)) => Some(load_or_compute_table(&model, h, b, s, cache_dir)?),
        None => None,
    };
    let det_labels = unique_labels(&cfg.detectors, |d| d.base_label().to_string());

    let mut tasks = Vec::new();
    for (spec, label) in cfg.detectors.iter().zip(&det_labels) {
        for &seed in &cfg.seeds {
            tasks.push((spec.clone(), label.clone(), seed));
        }
    }
    let runs: Vec<Result<LearnRun>> = tasks
        .par_iter()
        .map(|(spec, label, seed)| {
            let alpha = spec.eta_alpha().1.expect("checked above");
            let traj = simulate(
                &model,
                cfg.learn.horizon,
                None,
                derive_seed(*seed, STREAM_LEARN_PLANT),
            )?;
            let mut det = build_detector(&model, spec, table.as_ref(), 0.0)?;
            let opts = LearnOptions::new(alpha);
            let res = tune_threshold(det.as_mut(), &traj.observations, &opts)?;
            Ok(LearnRun {
                detector: label.clone(),
                alpha,
                seed: *seed,
                eta: res.eta,
                tail_trigger_rate: res.tail_trigger_rate,
                steps: res.steps,
                eta_path: res.eta_path,
            })
        })
        .collect();
    let runs = runs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(LearnReport {
        config: cfg.resolved()?,
        model,
        runs,
        wall_clock_s: start.elapsed().as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

fn metrics_path(prefix: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}_metrics.csv"))
}

fn config_path(prefix: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}_config.json"))
}

fn summary_path(prefix: &str) -> PathBuf {
    PathBuf::from(format!("{prefix}_summary.json"))
}

fn ensure_parent(prefix: &str) -> Result<()> {
    if let Some(parent) = PathBuf::from(format!("{prefix}_metrics.csv")).parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)
                .map_err(|e| Error::Io(format!("{}: {e}", parent.display())))?;
        }
    }
    Ok(())
}

struct MetricsWriter {
    w: csv::Writer<std::fs::File>,
}

impl MetricsWriter {
    fn create(prefix: &str) -> Result<Self> {
        let path = metrics_path(prefix);
        let file = std::fs::File::create(&path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["run_id", "estimator_or_detector", "metric", "t_or_alpha", "value"])?;
        Ok(MetricsWriter { w })
    }

    fn row(&mut self, run_id: &str, who: &str, metric: &str, t_or_alpha: &str, value: f64) -> Result<()> {
        let mut buf = ryu::Buffer::new();
        self.w
            .write_record([run_id, who, metric, t_or_alpha, buf.format(value)])?;
        Ok(())
    }

    fn finish(mut self) -> Result<()> {
        self.w.flush().map_err(|e| Error::Io(e.to_string()))?;
        Ok(())
    }
}

fn fmt_alpha(alpha: f64) -> String {
    let mut buf = ryu::Buffer::new();
    buf.format(alpha).to_string()
}

fn fmt_opt_subset(s: &Option<SensorSubset>) -> String {
    s.as_ref().map(|v| v.label()).unwrap_or_default()
}

fn fmt_opt_f64(v: Option<f64>) -> String {
    match v {
        Some(x) => {
            let mut buf = ryu::Buffer::new();
            buf.format(x).to_string()
        }
        None => String::new(),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut file = std::fs::File::create(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    serde_json::to_writer_pretty(&mut file, value)?;
    file.write_all(b"\n")?;
    Ok(())
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Writes `<prefix>_metrics.csv`, `<prefix>_config.json`,
/// `<prefix>_summary.json`, plus per-run slot records
/// (`<prefix>_slots_<label>_seed<seed>.csv`, adaptive estimators only) and
/// alarm logs (`<prefix>_alarms_<label>_seed<seed>.csv`).
pub fn export_estimation(report: &EstimationReport, prefix: &str) -> Result<()> {
    ensure_parent(prefix)?;
    report.config.to_json_file(&config_path(prefix))?;

    let mut m = MetricsWriter::create(prefix)?;
    for run in &report.runs {
        let run_id = format!("seed{}", run.seed);
        for (i, v) in run.running_mse.iter().enumerate() {
            m.row(&run_id, &run.label, "mse_running", &(i + 1).to_string(), *v)?;
        }
        let h = run.running_mse.len().to_string();
        m.row(&run_id, &run.label, "mse_final_linear", &h, run.final_linear)?;
        m.row(&run_id, &run.label, "mse_final_db", &h, run.final_db)?;
        for rec in &run.slots {
            m.row(&run_id, &run.label, "lambda", &rec.t.to_string(), rec.lambda)?;
        }
    }
    for log in &report.alarm_logs {
        let run_id = format!("seed{}", log.seed);
        let h = log.records.len().to_string();
        m.row(&run_id, &log.label, "trigger_rate", &h, log.trigger_rate)?;
        m.row(&run_id, &log.label, "eta", &h, log.eta)?;
        if let Some(acc) = log.localization_accuracy {
            m.row(&run_id, &log.label, "localization_accuracy", &h, acc)?;
        }
    }
    m.finish()?;

    // Per-slot adaptive-gain records.
    for run in &report.runs {
        if run.slots.is_empty() {
            continue;
        }
        let path = PathBuf::from(format!("{prefix}_slots_{}_seed{}.csv", run.label, run.seed));
        let file = std::fs::File::create(&path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record([
            "t",
            "mse_instant",
            "trace_P",
            "lambda",
            "anomaly_max",
            "argmax_subset",
            "spectral_radius",
        ])?;
        let mut buf = ryu::Buffer::new();
        for rec in &run.slots {
            let mse = run.mse_instant[rec.t - 1];
            w.write_record([
                rec.t.to_string(),
                buf.format(mse).to_string(),
                buf.format(rec.trace_p).to_string(),
                buf.format(rec.lambda).to_string(),
                fmt_opt_f64(rec.anomaly_max),
                fmt_opt_subset(&rec.argmax_subset),
                buf.format(rec.spectral_radius).to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))?;
    }

    // Alarm logs.
    for log in &report.alarm_logs {
        let path = PathBuf::from(format!("{prefix}_alarms_{}_seed{}.csv", log.label, log.seed));
        let file = std::fs::File::create(&path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record([
            "t",
            "statistic",
            "eta",
            "alarm",
            "localized_subset",
            "true_attacked_subset",
        ])?;
        let mut buf = ryu::Buffer::new();
        for rec in &log.records {
            w.write_record([
                rec.t.to_string(),
                buf.format(rec.statistic).to_string(),
                buf.format(rec.eta).to_string(),
                rec.alarm.to_string(),
                fmt_opt_subset(&rec.localized),
                rec.true_attacked.label(),
            ])?;
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))?;
    }

    // Summary: per estimator, final MSE mean +- std across seeds.
    #[derive(Serialize)]
    struct EstimatorSummary {
        seeds: BTreeMap<String, [f64; 2]>,
        mean_final_linear: f64,
        std_final_linear: f64,
        mean_final_db: f64,
    }
    #[derive(Serialize)]
    struct DetectorSummary {
        seeds: BTreeMap<String, f64>,
        mean_trigger_rate: f64,
        localization_accuracy: Option<f64>,
    }
    #[derive(Serialize)]
    struct Summary {
        estimators: BTreeMap<String, EstimatorSummary>,
        detectors: BTreeMap<String, DetectorSummary>,
        wall_clock_s: f64,
    }
    let mut estimators = BTreeMap::new();
    for run in &report.runs {
        let entry = estimators
            .entry(run.label.clone())
            .or_insert_with(Vec::new);
        entry.push(run);
    }
    let estimators: BTreeMap<String, EstimatorSummary> = estimators
        .into_iter()
        .map(|(label, rs)| {
            let finals: Vec<f64> = rs.iter().map(|r| r.final_linear).collect();
            let (mean, std) = mean_std(&finals);
            let seeds = rs
                .iter()
                .map(|r| (format!("seed{}", r.seed), [r.final_linear, r.final_db]))
                .collect();
            (
                label,
                EstimatorSummary {
                    seeds,
                    mean_final_linear: mean,
                    std_final_linear: std,
                    mean_final_db: mse_to_db(mean),
                },
            )
        })
        .collect();
    let mut detectors_map = BTreeMap::new();
    for log in &report.alarm_logs {
        let entry = detectors_map
            .entry(log.label.clone())
            .or_insert_with(Vec::new);
        entry.push(log);
    }
    let detectors: BTreeMap<String, DetectorSummary> = detectors_map
        .into_iter()
        .map(|(label, ls)| {
            let rates: Vec<f64> = ls.iter().map(|l| l.trigger_rate).collect();
            let (mean, _) = mean_std(&rates);
            let accs: Vec<f64> = ls.iter().filter_map(|l| l.localization_accuracy).collect();
            let acc = if accs.is_empty() {
                None
            } else {
                Some(accs.iter().sum::<f64>() / accs.len() as f64)
            };
            let seeds = ls
                .iter()
                .map(|l| (format!("seed{}", l.seed), l.trigger_rate))
                .collect();
            (
                label,
                DetectorSummary {
                    seeds,
                    mean_trigger_rate: mean,
                    localization_accuracy: acc,
                },
            )
        })
        .collect();
    write_json(
        &summary_path(prefix),
        &Summary {
            estimators,
            detectors,
            wall_clock_s: report.wall_clock_s,
        },
    )
}

/// Writes the sweep table (`metrics.csv` rows keyed by xi, a thinned
/// multiplier trace per point) plus config and summary.
pub fn export_sweep(report: &SweepReport, prefix: &str) -> Result<()> {
    ensure_parent(prefix)?;
    report.config.to_json_file(&config_path(prefix))?;
    let mut m = MetricsWriter::create(prefix)?;
    for row in &report.rows {
        let run_id = format!("xi{}_seed{}", fmt_alpha(row.xi), row.seed);
        let xi_s = fmt_alpha(row.xi);
        m.row(&run_id, "sec_l", "mse_final_linear", &xi_s, row.mse_final_linear)?;
        m.row(&run_id, "sec_l", "mse_final_db", &xi_s, row.mse_final_db)?;
        m.row(&run_id, "sec_l", "lambda_final", &xi_s, row.lambda_final)?;
        m.row(&run_id, "sec_l", "p_bar", &xi_s, row.p_bar)?;
        m.row(&run_id, "sec_l", "trace_avg_last_half", &xi_s, row.trace_avg_last_half)?;
        m.row(
            &run_id,
            "sec_l",
            "constraint_ok",
            &xi_s,
            if row.constraint_ok { 1.0 } else { 0.0 },
        )?;
        for (t, lam) in &row.lambda_trace {
            m.row(&run_id, "sec_l", "lambda", &t.to_string(), *lam)?;
        }
    }
    m.finish()?;

    #[derive(Serialize)]
    struct SweepSummary {
        p_kalman: f64,
        rows: Vec<SweepSummaryRow>,
        wall_clock_s: f64,
    }
    #[derive(Serialize)]
    struct SweepSummaryRow {
        xi: f64,
        seed: u64,
        p_bar: f64,
        mse_final_linear: f64,
        mse_final_db: f64,
        lambda_final: f64,
        trace_avg_last_half: f64,
        constraint_ok: bool,
    }
    let rows = report
        .rows
        .iter()
        .map(|r| SweepSummaryRow {
            xi: r.xi,
            seed: r.seed,
            p_bar: r.p_bar,
            mse_final_linear: r.mse_final_linear,
            mse_final_db: r.mse_final_db,
            lambda_final: r.lambda_final,
            trace_avg_last_half: r.trace_avg_last_half,
            constraint_ok: r.constraint_ok,
        })
        .collect();
    write_json(
        &summary_path(prefix),
        &SweepSummary {
            p_kalman: report.p_kalman,
            rows,
            wall_clock_s: report.wall_clock_s,
        },
    )
}

/// Writes ROC operating points plus config and summary.
pub fn export_roc(report: &RocReport, prefix: &str) -> Result<()> {
    ensure_parent(prefix)?;
    report.config.to_json_file(&config_path(prefix))?;
    let mut m = MetricsWriter::create(prefix)?;
    for p in &report.points {
        let run_id = format!("alpha{}_seed{}", fmt_alpha(p.alpha), p.seed);
        let a = fmt_alpha(p.alpha);
        m.row(&run_id, &p.detector, "eta", &a, p.eta)?;
        m.row(&run_id, &p.detector, "p_f", &a, p.p_f)?;
        m.row(&run_id, &p.detector, "p_d", &a, p.p_d)?;
        if let Some(acc) = p.localization_accuracy {
            m.row(&run_id, &p.detector, "localization_accuracy", &a, acc)?;
        }
    }
    m.finish()?;

    #[derive(Serialize)]
    struct RocSummaryPoint {
        detector: String,
        alpha: f64,
        seed: u64,
        eta: f64,
        p_f: f64,
        p_d: f64,
        localization_accuracy: Option<f64>,
    }
    #[derive(Serialize)]
    struct RocSummary {
        points: Vec<RocSummaryPoint>,
        wall_clock_s: f64,
    }
    let points = report
        .points
        .iter()
        .map(|p| RocSummaryPoint {
            detector: p.detector.clone(),
            alpha: p.alpha,
            seed: p.seed,
            eta: p.eta,
            p_f: p.p_f,
            p_d: p.p_d,
            localization_accuracy: p.localization_accuracy,
        })
        .collect();
    write_json(
        &summary_path(prefix),
        &RocSummary {
            points,
            wall_clock_s: report.wall_clock_s,
        },
    )
}

/// Writes tuned thresholds (`<prefix>_eta.json`) plus a thinned threshold
/// path per run (`<prefix>_eta_path_<label>_seed<seed>.csv`), config, and
/// long-format metrics.
pub fn export_learn(report: &LearnReport, prefix: &str) -> Result<()> {
    ensure_parent(prefix)?;
    report.config.to_json_file(&config_path(prefix))?;
    let mut m = MetricsWriter::create(prefix)?;
    for run in &report.runs {
        let run_id = format!("seed{}", run.seed);
        let a = fmt_alpha(run.alpha);
        m.row(&run_id, &run.detector, "eta", &a, run.eta)?;
        m.row(&run_id, &run.detector, "tail_trigger_rate", &a, run.tail_trigger_rate)?;
    }
    m.finish()?;

    #[derive(Serialize)]
    struct LearnJsonRun {
        detector: String,
        alpha: f64,
        seed: u64,
        eta: f64,
        tail_trigger_rate: f64,
        steps: usize,
    }
    #[derive(Serialize)]
    struct LearnJson {
        runs: Vec<LearnJsonRun>,
        wall_clock_s: f64,
    }
    let runs = report
        .runs
        .iter()
        .map(|r| LearnJsonRun {
            detector: r.detector.clone(),
            alpha: r.alpha,
            seed: r.seed,
            eta: r.eta,
            tail_trigger_rate: r.tail_trigger_rate,
            steps: r.steps,
        })
        .collect();
    write_json(
        &PathBuf::from(format!("{prefix}_eta.json")),
        &LearnJson {
            runs,
            wall_clock_s: report.wall_clock_s,
        },
    )?;

    for run in &report.runs {
        let path = PathBuf::from(format!(
            "{prefix}_eta_path_{}_seed{}.csv",
            run.detector, run.seed
        ));
        let file = std::fs::File::create(&path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let mut w = csv::Writer::from_writer(file);
        w.write_record(["step", "eta"])?;
        let stride = (run.eta_path.len() / 5000).max(1);
        let mut buf = ryu::Buffer::new();
        for (i, eta) in run.eta_path.iter().enumerate() {
            if (i + 1) % stride == 0 || i + 1 == run.eta_path.len() {
                w.write_record([(i + 1).to_string(), buf.format(*eta).to_string()])?;
            }
        }
        w.flush().map_err(|e| Error::Io(e.to_string()))?;
    }
    Ok(())
}

/// Writes the resolved plant to `<prefix>_system.json`.
pub fn export_system(model: &SystemModel, prefix: &str) -> Result<()> {
    ensure_parent(prefix)?;
    write_json(&PathBuf::from(format!("{prefix}_system.json")), model)
}

/// Writes one simulated trajectory to
/// `<prefix>_trajectory_seed<seed>.csv` with columns
/// `t, x_1..x_q, y_1..y_m` (the state at slot `t` and the observation it
/// generated).
pub fn export_trajectory(traj: &Trajectory, prefix: &str, seed: u64) -> Result<()> {
    ensure_parent(prefix)?;
    let path = PathBuf::from(format!("{prefix}_trajectory_seed{seed}.csv"));
    let file = std::fs::File::create(&path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut w = csv::Writer::from_writer(file);
    let q = traj.states.first().map(|x| x.len()).unwrap_or(0);
    let m_dim = traj.observations.first().map(|y| y.len()).unwrap_or(0);
    let mut header = vec!["t".to_string()];
    header.extend((1..=q).map(|i| format!("x_{i}")));
    header.extend((1..=m_dim).map(|i| format!("y_{i}")));
    w.write_record(&header)?;
    let mut buf = ryu::Buffer::new();
    for (i, y) in traj.observations.iter().enumerate() {
        let mut rec = vec![(i + 1).to_string()];
        rec.extend(traj.states[i].iter().map(|v| buf.format(*v).to_string()));
        rec.extend(y.iter().map(|v| buf.format(*v).to_string()));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::Io(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::Knowledge;

    fn small_system() -> SystemSpec {
        SystemSpec::Generator(GeneratorParams {
            q: 2,
            n_sensors: 3,
            k: 1,
            n0: 1,
            seed: 11,
        })
    }

    fn base_config() -> ExperimentConfig {
        ExperimentConfig {
            system: small_system(),
            attack: None,
            estimators: vec![EstimatorSpec::KalmanBlind, EstimatorSpec::Genie],
            detectors: vec![],
            horizon: 300,
            burn_in: 50,
            seeds: vec![1],
            xi_list: None,
            alpha_grid: None,
            learn: LearnParams::default(),
        }
    }

    #[test]
    fn seed_derivation_separates_streams() {
        let mut seen = std::collections::BTreeSet::new();
        for seed in [0u64, 1, 2, u64::MAX] {
            for stream in 1..=7 {
                assert!(seen.insert(derive_seed(seed, stream)));
            }
        }
        assert_eq!(derive_seed(42, STREAM_PLANT), derive_seed(42, STREAM_PLANT));
    }

    #[test]
    fn db_conversion_round_trips() {
        for &v in &[1e-3, 0.5, 1.0, 7.25, 123.0] {
            assert!((db_to_mse(mse_to_db(v)) - v).abs() <= 1e-12 * v);
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        let mut cfg = base_config();
        cfg.attack = Some(AttackSpec::static_set(&[2], Knowledge::KnownEstimate));
        cfg.estimators.push(EstimatorSpec::SecL(SecEntry {
            xi: Some(3.0),
            ..SecEntry::default()
        }));
        cfg.detectors.push(DetectorSpec::Chi2 {
            j: 10,
            eta: Some(25.0),
            alpha: None,
        });
        cfg.to_json_file(&path).unwrap();
        let back = ExperimentConfig::from_json_file(&path).unwrap();
        assert_eq!(
            serde_json::to_string(&cfg).unwrap(),
            serde_json::to_string(&back).unwrap()
        );
        back.validate().unwrap();
    }

    #[test]
    fn config_validation_rejects_bad_inputs() {
        let mut cfg = base_config();
        cfg.horizon = 50;
        assert!(cfg.validate().is_err(), "horizon <= burn_in");

        let mut cfg = base_config();
        cfg.estimators = vec![EstimatorSpec::SecL(SecEntry {
            lambda_fixed: Some(1.0),
            xi: Some(2.0),
            ..SecEntry::default()
        })];
        assert!(cfg.validate().is_err(), "both lambda_fixed and xi");

        let mut cfg = base_config();
        cfg.estimators = vec![EstimatorSpec::SecL(SecEntry::default())];
        assert!(cfg.validate().is_err(), "neither lambda_fixed nor xi");

        let mut cfg = base_config();
        cfg.xi_list = Some(vec![2.0, 1.0]);
        assert!(cfg.validate().is_err(), "xi <= 1 in grid");

        let mut cfg = base_config();
        cfg.alpha_grid = Some(vec![0.5, 1.5]);
        assert!(cfg.validate().is_err(), "alpha outside (0, 1)");

        let mut cfg = base_config();
        cfg.estimators = vec![EstimatorSpec::SecL(SecEntry {
            xi: Some(2.0),
            packet_loss: Some(vec![0.1, 0.1]),
            ..SecEntry::default()
        })];
        assert!(cfg.validate().is_err(), "packet_loss length != N");

        let mut cfg = base_config();
        cfg.estimators.clear();
        cfg.validate().unwrap();
        assert!(
            run_estimation_experiment(&cfg, None).is_err(),
            "estimation run needs something to run"
        );

        let mut cfg = base_config();
        cfg.detectors = vec![DetectorSpec::Chi2 {
            j: 10,
            eta: None,
            alpha: None,
        }];
        cfg.validate().unwrap();
        assert!(
            run_estimation_experiment(&cfg, None).is_err(),
            "estimation run needs a threshold source per detector"
        );
    }

    #[test]
    fn unknown_config_fields_are_validation_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        std::fs::write(
            &path,
            r#"{"system": {"generator": {"q": 2, "N": 3, "k": 1, "n0": 1, "seed": 1}}, "horizont": 100}"#,
        )
        .unwrap();
        match ExperimentConfig::from_json_file(&path) {
            Err(Error::Validation(_)) => {}
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn genie_matches_blind_filter_without_attack() {
        let report = run_estimation_experiment(&base_config(), None).unwrap();
        assert_eq!(report.runs.len(), 2);
        let blind = report.runs.iter().find(|r| r.label == "kalman_blind").unwrap();
        let genie = report.runs.iter().find(|r| r.label == "genie").unwrap();
        assert_eq!(blind.running_mse, genie.running_mse);
        assert_eq!(blind.final_linear, genie.final_linear);
    }

    #[test]
    fn genie_is_insensitive_to_attacker_knowledge() {
        let mut cfg_k = base_config();
        cfg_k.estimators = vec![EstimatorSpec::Genie];
        cfg_k.attack = Some(AttackSpec::static_set(&[1], Knowledge::KnownEstimate));
        let mut cfg_nk = cfg_k.clone();
        cfg_nk.attack = Some(AttackSpec::static_set(&[1], Knowledge::ProxyFilter));
        let rep_k = run_estimation_experiment(&cfg_k, None).unwrap();
        let rep_nk = run_estimation_experiment(&cfg_nk, None).unwrap();
        assert_eq!(rep_k.runs[0].mse_instant, rep_nk.runs[0].mse_instant);
    }

    #[test]
    fn packet_loss_zero_matches_no_loss_bitwise() {
        let mut cfg_a = base_config();
        cfg_a.estimators = vec![EstimatorSpec::SecL(SecEntry {
            lambda_fixed: Some(0.5),
            packet_loss: Some(vec![0.0, 0.0, 0.0]),
            ..SecEntry::default()
        })];
        let mut cfg_b = cfg_a.clone();
        cfg_b.estimators = vec![EstimatorSpec::SecL(SecEntry {
            lambda_fixed: Some(0.5),
            ..SecEntry::default()
        })];
        let rep_a = run_estimation_experiment(&cfg_a, None).unwrap();
        let rep_b = run_estimation_experiment(&cfg_b, None).unwrap();
        assert_eq!(rep_a.runs[0].mse_instant, rep_b.runs[0].mse_instant);
    }

    #[test]
    fn exports_are_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base_config();
        cfg.seeds = vec![1, 2];
        cfg.attack = Some(AttackSpec::static_set(&[2], Knowledge::KnownEstimate));
        cfg.estimators.push(EstimatorSpec::SecL(SecEntry {
            lambda_fixed: Some(0.5),
            ..SecEntry::default()
        }));
        cfg.detectors.push(DetectorSpec::Chi2 {
            j: 10,
            eta: Some(12.0),
            alpha: None,
        });
        let report = run_estimation_experiment(&cfg, None).unwrap();
        let p1 = dir.path().join("a").join("run");
        let p2 = dir.path().join("b").join("run");
        export_estimation(&report, p1.to_str().unwrap()).unwrap();
        export_estimation(&report, p2.to_str().unwrap()).unwrap();
        for suffix in [
            "_metrics.csv",
            "_config.json",
            "_summary.json",
            "_slots_sec_l_seed1.csv",
            "_alarms_chi2_seed2.csv",
        ] {
            let a = std::fs::read(format!("{}{suffix}", p1.display())).unwrap();
            let b = std::fs::read(format!("{}{suffix}", p2.display())).unwrap();
            assert_eq!(a, b, "{suffix} differs between exports");
            assert!(!a.is_empty());
        }
    }

    #[test]
    fn reloaded_resolved_config_reproduces_the_run() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = base_config();
        let report = run_estimation_experiment(&cfg, None).unwrap();
        let prefix = dir.path().join("run");
        export_estimation(&report, prefix.to_str().unwrap()).unwrap();
        let back =
            ExperimentConfig::from_json_file(&PathBuf::from(format!("{}_config.json", prefix.display())))
                .unwrap();
        assert!(matches!(back.system, SystemSpec::Model(_)));
        let report2 = run_estimation_experiment(&back, None).unwrap();
        assert_eq!(report.runs[0].mse_instant, report2.runs[0].mse_instant);
    }

    #[test]
    fn sweep_parks_the_multiplier_when_the_budget_is_slack() {
        let mut cfg = base_config();
        cfg.horizon = 2000;
        cfg.burn_in = 200;
        cfg.estimators = vec![EstimatorSpec::SecL(SecEntry {
            xi: Some(2.0),
            ..SecEntry::default()
        })];
        cfg.xi_list = Some(vec![2.0, 1000.0]);
        let report = run_constrained_sweep(&cfg).unwrap();
        assert_eq!(report.rows.len(), 2);
        let slack = report.rows.iter().find(|r| r.xi == 1000.0).unwrap();
        assert!(
            slack.lambda_final < 0.05,
            "slack budget should drive lambda to zero, got {}",
            slack.lambda_final
        );
        assert!(slack.constraint_ok);
        let tight = report.rows.iter().find(|r| r.xi == 2.0).unwrap();
        assert!(tight.mse_final_linear.is_finite() && tight.mse_final_linear > 0.0);
        assert!(!slack.lambda_trace.is_empty());

        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("sweep");
        export_sweep(&report, prefix.to_str().unwrap()).unwrap();
        assert!(PathBuf::from(format!("{}_summary.json", prefix.display())).exists());
    }

    #[test]
    fn degenerate_thresholds_pin_the_trigger_rate() {
        let model = small_system().resolve().unwrap();
        let traj = simulate(&model, 500, None, 3).unwrap();
        let mut det = Chi2Detector::new(&model, 10, 0.0).unwrap();
        let (rate, _, _) = measure_detector_rates(&mut det, &traj.observations, None).unwrap();
        assert_eq!(rate, 1.0);
        let mut det = Chi2Detector::new(&model, 10, 1e12).unwrap();
        let (rate, _, _) = measure_detector_rates(&mut det, &traj.observations, None).unwrap();
        assert_eq!(rate, 0.0);
    }

    #[test]
    fn roc_produces_sane_operating_points() {
        let mut cfg = base_config();
        cfg.estimators.clear();
        cfg.attack = Some(AttackSpec::static_set(&[1], Knowledge::KnownEstimate));
        cfg.detectors = vec![
            DetectorSpec::Chi2 {
                j: 10,
                eta: None,
                alpha: None,
            },
            DetectorSpec::Safe {
                safe_set: vec![2, 3],
                j: 10,
                eta: None,
                alpha: None,
            },
        ];
        cfg.alpha_grid = Some(vec![0.2]);
        cfg.learn = LearnParams {
            horizon: 3000,
            validation_horizon: 3000,
        };
        let report = run_roc(&cfg, None).unwrap();
        assert_eq!(report.points.len(), 2);
        for p in &report.points {
            assert!(p.eta > 0.0);
            assert!((0.0..=1.0).contains(&p.p_f), "p_f = {}", p.p_f);
            assert!((0.0..=1.0).contains(&p.p_d), "p_d = {}", p.p_d);
            assert!((p.p_f - 0.2).abs() < 0.1, "p_f {} far from target", p.p_f);
        }
        let dir = tempfile::tempdir().unwrap();
        let prefix = dir.path().join("roc");
        export_roc(&report, prefix.to_str().unwrap()).unwrap();
        assert!(PathBuf::from(format!("{}_metrics.csv", prefix.display())).exists());
    }
}
