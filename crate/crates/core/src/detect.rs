//! Attack detection.
//!
//! Three detectors share a sliding-window design (decisions every slot once
//! `t >= J`):
//!
//! * [`SubsetDetector`] — for every candidate attacked subset `B` it runs a
//!   pair of restricted Kalman filters (rows of `B`, rows of `B^c`), forms
//!   the estimate discrepancy `e(t) = x_B(t) - x_Bc(t)`, and alarms when
//!   `max_B sum_{tau=t-J+1..t} e' Pbar_B^{-1} e` strictly exceeds `eta`,
//!   localizing to the maximizing subset. The normalizers `Pbar_B` come from
//!   an offline attack-free simulation ([`precompute_subset_covariances`]).
//! * [`Chi2Detector`] — the classical windowed innovation test
//!   `sum z' Sigma_z^{-1} z >= eta` on a central Kalman filter.
//! * [`SafeEstimator`] — a two-stage filter that always applies rows from a
//!   designated safe sensor set, then gates the remaining rows behind a
//!   windowed chi-square test on their innovations about the safe-updated
//!   state; it doubles as an estimation baseline.
//!
//! [`tune_threshold`] adjusts any of them toward a target false-alarm rate
//! `alpha` by stochastic approximation:
//! `eta <- clamp(eta + a(tau) (1{alarm} - alpha), 0, l)`. With the default
//! `a(tau) = 1/tau` the iterate can only travel a logarithmic distance, so
//! when no starting point is supplied the tuner warm-starts at the empirical
//! `(1 - alpha)` quantile of the statistic over a leading calibration
//! segment and lets the recursion polish from there.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::hash_map::DefaultHasher;
use std::collections::VecDeque;
use std::hash::{Hash, Hasher};
use std::path::{Path, PathBuf};

use crate::kalman::{
    kf_step_with, measurement_update, riccati_fixed_point, FilterState, FP_MAX_ITER, FP_TOL,
};
use crate::linalg::{mat_to_rows, quadratic_form, regularized_inverse, rows_to_mat, symmetrize};
use crate::process_model::{simulate, SystemModel};
use crate::schedule::Schedule;
use crate::subsets::{enumerate_subsets, SensorSubset};
use crate::{Error, Result};

/// Default offline-simulation length for the covariance table.
pub const TABLE_HORIZON: usize = 100_000;
/// Default offline burn-in.
pub const TABLE_BURN_IN: usize = 1000;
/// Default clamp bound for tuned thresholds (wide; window statistics scale
/// with `J` times the observation dimension).
pub const DEFAULT_ETA_BOUND: f64 = 1e6;

/// One subset's precomputed discrepancy normalizer.
#[derive(Debug, Clone)]
pub struct SubsetCovEntry {
    pub subset: SensorSubset,
    /// Steady second moment of `x_B - x_Bc` under no attack.
    pub cov: DMatrix<f64>,
    /// Its (possibly epsilon-regularized) inverse.
    pub inv: DMatrix<f64>,
    /// False when the covariance stayed singular after regularization; such
    /// subsets are skipped by the detector.
    pub usable: bool,
}

/// Offline table of subset discrepancy covariances, aligned with
/// `enumerate_subsets(N, n0)`.
#[derive(Debug, Clone)]
pub struct SubsetCovarianceTable {
    pub entries: Vec<SubsetCovEntry>,
    pub burn_in: usize,
    pub sample_count: usize,
}

#[derive(Serialize, Deserialize)]
struct TableJson {
    system_hash: String,
    seed: u64,
    horizon: usize,
    burn_in: usize,
    sample_count: usize,
    subsets: Vec<Vec<usize>>,
    covs: Vec<Vec<Vec<f64>>>,
    invs: Vec<Vec<Vec<f64>>>,
    usable: Vec<bool>,
}

/// Hash of the model's canonical JSON form; keys the covariance cache.
pub fn system_hash(model: &SystemModel) -> String {
    let json = serde_json::to_string(model).expect("model serializes");
    let mut h = DefaultHasher::new();
    json.hash(&mut h);
    format!("{:016x}", h.finish())
}

impl SubsetCovarianceTable {
    /// Cache file name for a given precomputation key.
    pub fn cache_path(dir: &Path, model: &SystemModel, horizon: usize, seed: u64) -> PathBuf {
        dir.join(format!(
            "subset_cov_{}_{horizon}_{seed}.json",
            system_hash(model)
        ))
    }

    pub fn save(
        &self,
        path: &Path,
        model: &SystemModel,
        horizon: usize,
        seed: u64,
    ) -> Result<()> {
        let json = TableJson {
            system_hash: system_hash(model),
            seed,
            horizon,
            burn_in: self.burn_in,
            sample_count: self.sample_count,
            subsets: self.entries.iter().map(|e| e.subset.to_one_based()).collect(),
            covs: self.entries.iter().map(|e| mat_to_rows(&e.cov)).collect(),
            invs: self.entries.iter().map(|e| mat_to_rows(&e.inv)).collect(),
            usable: self.entries.iter().map(|e| e.usable).collect(),
        };
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(file, &json)?;
        Ok(())
    }

    /// Loads a cached table if it matches `(model, horizon, seed)`.
    pub fn load(path: &Path, model: &SystemModel, horizon: usize, seed: u64) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let json: TableJson = serde_json::from_reader(file)?;
        if json.system_hash != system_hash(model) || json.seed != seed || json.horizon != horizon {
            return Err(Error::Validation("cached table key mismatch".into()));
        }
        let n = model.dims.n_sensors;
        let mut entries = Vec::with_capacity(json.subsets.len());
        for (((ids, cov), inv), usable) in json
            .subsets
            .iter()
            .zip(&json.covs)
            .zip(&json.invs)
            .zip(&json.usable)
        {
            entries.push(SubsetCovEntry {
                subset: SensorSubset::from_one_based(ids, n)?,
                cov: rows_to_mat(cov)?,
                inv: rows_to_mat(inv)?,
                usable: *usable,
            });
        }
        Ok(SubsetCovarianceTable {
            entries,
            burn_in: json.burn_in,
            sample_count: json.sample_count,
        })
    }
}

/// Estimates the steady second moment of the per-subset estimate
/// discrepancies from an attack-free simulation: for each size-`n0` subset
/// `B`, two restricted optimal filters are run on the same trajectory and
/// `e e'` is averaged after `burn_in` slots.
pub fn precompute_subset_covariances(
    model: &SystemModel,
    horizon: usize,
    burn_in: usize,
    seed: u64,
) -> Result<SubsetCovarianceTable> {
    let q = model.dims.q;
    if horizon <= burn_in || horizon - burn_in < 1000 * q {
        return Err(Error::Validation(format!(
            "need horizon - burn_in >= {} slots for a stable {q}x{q} covariance",
            1000 * q
        )));
    }
    let subsets = enumerate_subsets(model.dims.n_sensors, model.dims.n0);
    let traj = simulate(model, horizon, None, seed)?;
    let mut entries = Vec::with_capacity(subsets.len());
    for b in &subsets {
        let bc = b.complement(model.dims.n_sensors);
        let (cb, rb) = model.restrict_obs(b);
        let (cbc, rbc) = model.restrict_obs(&bc);
        let mut fb = FilterState::zeroed(q);
        let mut fbc = FilterState::zeroed(q);
        let mut acc = DMatrix::<f64>::zeros(q, q);
        let mut count = 0usize;
        for (idx, y) in traj.observations.iter().enumerate() {
            let yb = model.gather_obs(y, b);
            let ybc = model.gather_obs(y, &bc);
            fb = kf_step_with(&fb, &model.a, &model.q_cov, &cb, &rb, &yb)?.0;
            fbc = kf_step_with(&fbc, &model.a, &model.q_cov, &cbc, &rbc, &ybc)?.0;
            if idx + 1 > burn_in {
                let e = &fb.x_hat - &fbc.x_hat;
                acc += &e * e.transpose();
                count += 1;
            }
        }
        let cov = symmetrize(&(acc / count as f64));
        match regularized_inverse(&cov) {
            Ok((inv, _eps)) => entries.push(SubsetCovEntry {
                subset: b.clone(),
                cov,
                inv,
                usable: true,
            }),
            Err(_) => {
                eprintln!(
                    "warning: discrepancy covariance for subset {} stayed singular; \
                     subset excluded from detection",
                    b.label()
                );
                entries.push(SubsetCovEntry {
                    subset: b.clone(),
                    cov,
                    inv: DMatrix::zeros(q, q),
                    usable: false,
                });
            }
        }
    }
    Ok(SubsetCovarianceTable {
        entries,
        burn_in,
        sample_count: horizon - burn_in,
    })
}

/// Loads the table from `cache_dir` when a matching file exists, otherwise
/// computes and caches it.
pub fn load_or_compute_table(
    model: &SystemModel,
    horizon: usize,
    burn_in: usize,
    seed: u64,
    cache_dir: Option<&Path>,
) -> Result<SubsetCovarianceTable> {
    if let Some(dir) = cache_dir {
        let path = SubsetCovarianceTable::cache_path(dir, model, horizon, seed);
        if path.exists() {
            if let Ok(table) = SubsetCovarianceTable::load(&path, model, horizon, seed) {
                return Ok(table);
            }
        }
        let table = precompute_subset_covariances(model, horizon, burn_in, seed)?;
        std::fs::create_dir_all(dir)?;
        table.save(&path, model, horizon, seed)?;
        Ok(table)
    } else {
        precompute_subset_covariances(model, horizon, burn_in, seed)
    }
}

/// Per-slot detector verdict. `statistic` is the windowed value (partial
/// sums before the window fills); `alarm` is always false until `warm`.
#[derive(Debug, Clone)]
pub struct DetectorOutput {
    pub t: usize,
    pub statistic: f64,
    pub warm: bool,
    pub alarm: bool,
    pub localized: Option<SensorSubset>,
}

/// Common surface for detectors whose threshold can be tuned online.
pub trait ThresholdDetector {
    fn eta(&self) -> f64;
    fn set_eta(&mut self, eta: f64) -> Result<()>;
    /// Advances one slot on the (possibly corrupted) observation.
    fn step(&mut self, y: &DVector<f64>) -> Result<DetectorOutput>;
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta >= 0.0) {
        return Err(Error::Validation("threshold eta must be nonnegative".into()));
    }
    Ok(())
}

struct SubsetChannel {
    entry: SubsetCovEntry,
    c_b: DMatrix<f64>,
    r_b: DMatrix<f64>,
    c_bc: DMatrix<f64>,
    r_bc: DMatrix<f64>,
    filt_b: FilterState,
    filt_bc: FilterState,
    window: VecDeque<f64>,
}

/// The subset-anomaly detector: windowed quadratic discrepancy statistic
/// maximized over candidate attacked subsets, with localization.
pub struct SubsetDetector {
    model: SystemModel,
    channels: Vec<SubsetChannel>,
    j: usize,
    eta: f64,
    t: usize,
}

impl SubsetDetector {
    pub fn new(model: &SystemModel, table: &SubsetCovarianceTable, j: usize, eta: f64) -> Result<Self> {
        check_eta(eta)?;
        if j == 0 {
            return Err(Error::Validation("window length J must be positive".into()));
        }
        let expected = enumerate_subsets(model.dims.n_sensors, model.dims.n0);
        if table.entries.len() != expected.len()
            || table
                .entries
                .iter()
                .zip(&expected)
                .any(|(e, s)| &e.subset != s)
        {
            return Err(Error::Validation(
                "covariance table does not match the model's subset enumeration".into(),
            ));
        }
        if table.entries.iter().all(|e| !e.usable) {
            return Err(Error::Validation(
                "no usable subset in covariance table".into(),
            ));
        }
        let q = model.dims.q;
        let channels = table
            .entries
            .iter()
            .map(|entry| {
                let bc = entry.subset.complement(model.dims.n_sensors);
                let (c_b, r_b) = model.restrict_obs(&entry.subset);
                let (c_bc, r_bc) = model.restrict_obs(&bc);
                SubsetChannel {
                    entry: entry.clone(),
                    c_b,
                    r_b,
                    c_bc,
                    r_bc,
                    filt_b: FilterState::zeroed(q),
                    filt_bc: FilterState::zeroed(q),
                    window: VecDeque::with_capacity(j + 1),
                }
            })
            .collect();
        Ok(SubsetDetector {
            model: model.clone(),
            channels,
            j,
            eta,
            t: 0,
        })
    }
}

impl ThresholdDetector for SubsetDetector {
    fn eta(&self) -> f64 {
        self.eta
    }

    fn set_eta(&mut self, eta: f64) -> Result<()> {
        check_eta(eta)?;
        self.eta = eta;
        Ok(())
    }

    fn step(&mut self, y: &DVector<f64>) -> Result<DetectorOutput> {
        if y.len() != self.model.obs_dim() {
            return Err(Error::Validation("observation dimension mismatch".into()));
        }
        self.t += 1;
        let mut best = f64::NEG_INFINITY;
        let mut arg: Option<SensorSubset> = None;
        for ch in &mut self.channels {
            let bc = ch.entry.subset.complement(self.model.dims.n_sensors);
            let yb = self.model.gather_obs(y, &ch.entry.subset);
            let ybc = self.model.gather_obs(y, &bc);
            ch.filt_b =
                kf_step_with(&ch.filt_b, &self.model.a, &self.model.q_cov, &ch.c_b, &ch.r_b, &yb)?.0;
            ch.filt_bc = kf_step_with(
                &ch.filt_bc,
                &self.model.a,
                &self.model.q_cov,
                &ch.c_bc,
                &ch.r_bc,
                &ybc,
            )?
            .0;
            if !ch.entry.usable {
                continue;
            }
            let e = &ch.filt_b.x_hat - &ch.filt_bc.x_hat;
            ch.window.push_back(quadratic_form(&e, &ch.entry.inv));
            if ch.window.len() > self.j {
                ch.window.pop_front();
            }
            let s: f64 = ch.window.iter().sum();
            if s > best {
                best = s;
                arg = Some(ch.entry.subset.clone());
            }
        }
        let warm = self.t >= self.j;
        let alarm = warm && best > self.eta;
        Ok(DetectorOutput {
            t: self.t,
            statistic: best,
            warm,
            alarm,
            localized: if alarm { arg } else { None },
        })
    }
}

/// Windowed chi-square innovation detector on a central optimal filter. The
/// innovation normalizer is the steady-state covariance, so after burn-in
/// the H0 statistic is chi-square with `J * m` degrees of freedom.
pub struct Chi2Detector {
    model: SystemModel,
    filt: FilterState,
    inv_sigma: DMatrix<f64>,
    window: VecDeque<f64>,
    j: usize,
    eta: f64,
    t: usize,
}

impl Chi2Detector {
    pub fn new(model: &SystemModel, j: usize, eta: f64) -> Result<Self> {
        check_eta(eta)?;
        if j == 0 {
            return Err(Error::Validation("window length J must be positive".into()));
        }
        let ss = riccati_fixed_point(model, FP_TOL, FP_MAX_ITER)?;
        let (inv_sigma, _) = regularized_inverse(&ss.sigma_z)?;
        Ok(Chi2Detector {
            model: model.clone(),
            filt: FilterState::zeroed(model.dims.q),
            inv_sigma,
            window: VecDeque::with_capacity(j + 1),
            j,
            eta,
            t: 0,
        })
    }

    /// Scores an externally supplied innovation without touching the
    /// internal filter — the path for studying innovation-level tampering.
    pub fn score_innovation(&mut self, z: &DVector<f64>) -> DetectorOutput {
        self.t += 1;
        self.window.push_back(quadratic_form(z, &self.inv_sigma));
        if self.window.len() > self.j {
            self.window.pop_front();
        }
        let statistic: f64 = self.window.iter().sum();
        let warm = self.t >= self.j;
        DetectorOutput {
            t: self.t,
            statistic,
            warm,
            alarm: warm && statistic >= self.eta,
            localized: None,
        }
    }
}

impl ThresholdDetector for Chi2Detector {
    fn eta(&self) -> f64 {
        self.eta
    }

    fn set_eta(&mut self, eta: f64) -> Result<()> {
        check_eta(eta)?;
        self.eta = eta;
        Ok(())
    }

    fn step(&mut self, y: &DVector<f64>) -> Result<DetectorOutput> {
        if y.len() != self.model.obs_dim() {
            return Err(Error::Validation("observation dimension mismatch".into()));
        }
        let (next, z) = kf_step_with(
            &self.filt,
            &self.model.a,
            &self.model.q_cov,
            &self.model.c,
            &self.model.r_cov,
            y,
        )?;
        self.filt = next;
        Ok(self.score_innovation(&z))
    }
}

/// Two-stage estimator with a designated safe sensor set: safe rows always
/// update; the remaining rows update only when a windowed chi-square test on
/// their innovations (about the safe-updated state) stays quiet. Cross
/// covariances between safe and unsafe measurement noise are dropped by the
/// sequential update. The test's trigger is also the detector decision.
pub struct SafeEstimator {
    model: SystemModel,
    safe: SensorSubset,
    c_s: DMatrix<f64>,
    r_s: DMatrix<f64>,
    c_u: DMatrix<f64>,
    r_u: DMatrix<f64>,
    unsafe_set: SensorSubset,
    inv_sigma_u: Option<DMatrix<f64>>,
    filt: FilterState,
    window: VecDeque<f64>,
    j: usize,
    eta: f64,
    t: usize,
}

impl SafeEstimator {
    pub fn new(model: &SystemModel, safe: &SensorSubset, j: usize, eta: f64) -> Result<Self> {
        check_eta(eta)?;
        if j == 0 {
            return Err(Error::Validation("window length J must be positive".into()));
        }
        if safe.is_empty() {
            return Err(Error::Validation("safe sensor set must be nonempty".into()));
        }
        if safe.sensors().iter().any(|&s| s >= model.dims.n_sensors) {
            return Err(Error::Validation("safe set references unknown sensors".into()));
        }
        let unsafe_set = safe.complement(model.dims.n_sensors);
        let (c_s, r_s) = model.restrict_obs(safe);
        let (c_u, r_u) = model.restrict_obs(&unsafe_set);
        let q = model.dims.q;
        // Steady normalizer for the unsafe-row innovations, from the
        // always-accept recursion (both stages applied every slot).
        let inv_sigma_u = if unsafe_set.is_empty() {
            None
        } else {
            let mut p = DMatrix::<f64>::zeros(q, q);
            let x = DVector::<f64>::zeros(q);
            let mut sigma_u = DMatrix::<f64>::zeros(c_u.nrows(), c_u.nrows());
            for iter in 0..FP_MAX_ITER {
                let p_pred = symmetrize(&(&model.a * &p * model.a.transpose() + &model.q_cov));
                let y_s = DVector::zeros(c_s.nrows());
                let (s1, _) = measurement_update(&x, &p_pred, &c_s, &r_s, &y_s)?;
                let next_sigma = symmetrize(&(&c_u * &s1.p * c_u.transpose() + &r_u));
                let y_u = DVector::zeros(c_u.nrows());
                let (s2, _) = measurement_update(&s1.x_hat, &s1.p, &c_u, &r_u, &y_u)?;
                let done = (&s2.p - &p).amax() < FP_TOL;
                p = s2.p;
                sigma_u = next_sigma;
                if done {
                    break;
                }
                if iter + 1 == FP_MAX_ITER {
                    return Err(Error::Computation(
                        "two-stage covariance recursion did not converge".into(),
                    ));
                }
            }
            Some(regularized_inverse(&sigma_u)?.0)
        };
        Ok(SafeEstimator {
            model: model.clone(),
            safe: safe.clone(),
            c_s,
            r_s,
            c_u,
            r_u,
            unsafe_set,
            inv_sigma_u,
            filt: FilterState::zeroed(q),
            window: VecDeque::with_capacity(j + 1),
            j,
            eta,
            t: 0,
        })
    }

    pub fn estimate(&self) -> &DVector<f64> {
        &self.filt.x_hat
    }

    pub fn safe_set(&self) -> &SensorSubset {
        &self.safe
    }
}

impl ThresholdDetector for SafeEstimator {
    fn eta(&self) -> f64 {
        self.eta
    }

    fn set_eta(&mut self, eta: f64) -> Result<()> {
        check_eta(eta)?;
        self.eta = eta;
        Ok(())
    }

    fn step(&mut self, y: &DVector<f64>) -> Result<DetectorOutput> {
        if y.len() != self.model.obs_dim() {
            return Err(Error::Validation("observation dimension mismatch".into()));
        }
        self.t += 1;
        let x_pred = &self.model.a * &self.filt.x_hat;
        let p_pred = symmetrize(
            &(&self.model.a * &self.filt.p * self.model.a.transpose() + &self.model.q_cov),
        );
        let y_s = self.model.gather_obs(y, &self.safe);
        let (stage1, _) = measurement_update(&x_pred, &p_pred, &self.c_s, &self.r_s, &y_s)?;

        let (statistic, warm, alarm) = match &self.inv_sigma_u {
            None => (0.0, self.t >= self.j, false),
            Some(inv_sigma) => {
                let y_u = self.model.gather_obs(y, &self.unsafe_set);
                let z_u = &y_u - &self.c_u * &stage1.x_hat;
                self.window.push_back(quadratic_form(&z_u, inv_sigma));
                if self.window.len() > self.j {
                    self.window.pop_front();
                }
                let s: f64 = self.window.iter().sum();
                let warm = self.t >= self.j;
                (s, warm, warm && s >= self.eta)
            }
        };

        self.filt = if alarm || self.unsafe_set.is_empty() {
            stage1
        } else {
            let y_u = self.model.gather_obs(y, &self.unsafe_set);
            measurement_update(&stage1.x_hat, &stage1.p, &self.c_u, &self.r_u, &y_u)?.0
        };

        Ok(DetectorOutput {
            t: self.t,
            statistic,
            warm,
            alarm,
            localized: None,
        })
    }
}

/// Options for [`tune_threshold`].
#[derive(Debug, Clone)]
pub struct LearnOptions {
    /// Target false-alarm rate.
    pub alpha: f64,
    /// Clamp bound `l` for the iterate.
    pub bound: f64,
    /// Starting threshold; when absent the tuner calibrates one from a
    /// leading segment of the stream.
    pub eta0: Option<f64>,
    /// Calibration-segment length (0 picks `min(2000, len/5)`).
    pub warmup: usize,
    /// Step schedule `a(tau)`.
    pub schedule: Schedule,
}

impl LearnOptions {
    pub fn new(alpha: f64) -> Self {
        LearnOptions {
            alpha,
            bound: DEFAULT_ETA_BOUND,
            eta0: None,
            warmup: 0,
            schedule: Schedule::Harmonic { scale: 1.0 },
        }
    }
}

/// Outcome of threshold tuning.
#[derive(Debug, Clone)]
pub struct LearnResult {
    /// Final iterate `eta*`.
    pub eta: f64,
    /// Iterate after each decision slot.
    pub eta_path: Vec<f64>,
    /// Trigger fraction over the final 20% of decision slots.
    pub tail_trigger_rate: f64,
    /// Total triggers over all decision slots.
    pub triggers: usize,
    /// Decision slots processed.
    pub steps: usize,
}

/// Runs the threshold recursion over a recorded observation stream. The
/// detector is stepped with its current threshold each slot (the decision
/// can feed back into the detector's own state), and only warm slots count
/// as decisions.
pub fn tune_threshold<D: ThresholdDetector + ?Sized>(
    detector: &mut D,
    ys: &[DVector<f64>],
    opts: &LearnOptions,
) -> Result<LearnResult> {
    // The open lower end is required (alpha = 0 has no interior fixed
    // point); alpha = 1 is allowed as the degenerate always-alarm target.
    if !(opts.alpha > 0.0 && opts.alpha <= 1.0) {
        return Err(Error::Validation("alpha must lie in (0, 1]".into()));
    }
    if !(opts.bound > 0.0) {
        return Err(Error::Validation("threshold bound must be positive".into()));
    }
    opts.schedule.validate_sa_gain("a")?;
    if ys.is_empty() {
        return Err(Error::Validation("empty tuning stream".into()));
    }

    let mut start = 0usize;
    let mut eta = match opts.eta0 {
        Some(v) => {
            check_eta(v)?;
            v.min(opts.bound)
        }
        None => {
            // Calibrate: run with an unreachable threshold and take the
            // empirical (1 - alpha) quantile of the warm statistics.
            let warmup = if opts.warmup > 0 {
                opts.warmup
            } else {
                ys.len() / 5
            };
            if warmup == 0 || warmup >= ys.len() {
                return Err(Error::Validation(
                    "stream too short to calibrate a starting threshold".into(),
                ));
            }
            detector.set_eta(f64::MAX)?;
            let mut stats: Vec<f64> = Vec::with_capacity(warmup);
            for y in &ys[..warmup] {
                let out = detector.step(y)?;
                if out.warm {
                    stats.push(out.statistic);
                }
            }
            if stats.is_empty() {
                return Err(Error::Validation(
                    "calibration segment shorter than the detector window".into(),
                ));
            }
            start = warmup;
            stats.sort_by(|a, b| a.total_cmp(b));
            let idx = (((stats.len() - 1) as f64) * (1.0 - opts.alpha)).ceil() as usize;
            stats[idx.min(stats.len() - 1)].clamp(0.0, opts.bound)
        }
    };

    let mut eta_path = Vec::with_capacity(ys.len() - start);
    let mut alarms: Vec<bool> = Vec::with_capacity(ys.len() - start);
    let mut triggers = 0usize;
    let mut tau = 0usize;
    for y in &ys[start..] {
        detector.set_eta(eta)?;
        let out = detector.step(y)?;
        if !out.warm {
            continue;
        }
        tau += 1;
        alarms.push(out.alarm);
        let ind = if out.alarm {
            triggers += 1;
            1.0
        } else {
            0.0
        };
        eta = (eta + opts.schedule.value(tau) * (ind - opts.alpha)).clamp(0.0, opts.bound);
        eta_path.push(eta);
    }
    if tau == 0 {
        return Err(Error::Validation(
            "no decision slots: stream shorter than the detector window".into(),
        ));
    }
    let tail = ((tau as f64 * 0.2).ceil() as usize).clamp(1, alarms.len());
    let tail_hits = alarms[alarms.len() - tail..].iter().filter(|&&a| a).count();
    Ok(LearnResult {
        eta,
        eta_path,
        tail_trigger_rate: tail_hits as f64 / tail as f64,
        triggers,
        steps: tau,
    })
}

/// Tunes the subset-anomaly detector on a fresh attack-free stream
/// simulated from the model, returning the learned threshold.
pub fn learn_threshold(
    model: &SystemModel,
    table: &SubsetCovarianceTable,
    j: usize,
    alpha: f64,
    schedule: Schedule,
    horizon: usize,
    seed: u64,
) -> Result<LearnResult> {
    let traj = simulate(model, horizon, None, seed)?;
    let mut det = SubsetDetector::new(model, table, j, 0.0)?;
    let mut opts = LearnOptions::new(alpha);
    opts.schedule = schedule;
    tune_threshold(&mut det, &traj.observations, &opts)
}
