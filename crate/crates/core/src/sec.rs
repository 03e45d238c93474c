//! Adaptive-gain secure estimation.
//!
//! The estimator keeps a constant-gain filter `x(t) = A x(t-1) +
//! K_t (y_t - C A x(t-1))` and tunes `K_t` online by simultaneous
//! perturbation. Each slot it draws a Rademacher matrix `D`, probes the two
//! gains `K +- d(t) D`, and scores each probe with
//!
//! ```text
//! cost = max_B || x_B - x_Bc ||^2  +  lambda(t) * trace(P)
//! ```
//!
//! where `x_B` / `x_Bc` are proxy estimates using only sensor subset `B`
//! (respectively its complement) and `P` follows the fixed-gain covariance
//! recursion. Honest sensors agree, so under attack the discrepancy term
//! explodes exactly on subsets that separate attacked from honest sensors,
//! and the gradient step drains gain from the attacked columns; the
//! `trace(P)` term stops the filter from discarding sensors it still needs.
//! The scalar gradient estimate `(c+ - c-) / (2 d(t) D_ij)` is the usual
//! two-sided simultaneous-perturbation form, unbiased for quadratics.
//!
//! Each update is clamped entrywise to `[-l, l]` and then projected back
//! into the feasible set `rho(I - K C) <= 1 - delta` by bisecting along the
//! segment to the previous (feasible) iterate.
//!
//! Two proxy flavours exist: the one-step form recomputes all subset
//! estimates from the *common* previous estimate (`O(1)` per slot), while
//! the full-history form replays constant-gain filters over the entire
//! observation history (`O(t)` per slot, capped). At `t = 1` they coincide.
//!
//! `lambda` can be fixed, or adapted on a slower timescale to meet a
//! covariance budget `trace(P) <= p_bar`:
//! `lambda(t+1) = clamp(lambda(t) + b(t) (trace(P_t) - p_bar), 0, l)`.
//!
//! Under packet loss only the delivered sensor subset `S_t` is read: gains
//! are column-masked to `S_t`, the gradient step touches only those columns,
//! and its step size is `a(nu)` where `nu` counts how often exactly that
//! subset has been delivered. An empty `S_t` degenerates to pure prediction
//! with no update at all.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::kalman::{
    closed_loop_radius, error_cov_step, fixed_gain_step, restrict_gain, riccati_fixed_point,
    FP_MAX_ITER, FP_TOL,
};
use crate::process_model::SystemModel;
use crate::schedule::StepSchedules;
use crate::subsets::{enumerate_subsets, SensorSubset};
use crate::{Error, Result};

/// Default spectral margin `delta`.
pub const DEFAULT_DELTA: f64 = 0.05;
/// Default box bound `l` on gain entries and the multiplier.
pub const DEFAULT_BOUND: f64 = 10.0;
/// Default cap on the full-history replay length.
pub const DEFAULT_HISTORY_CAP: usize = 2000;

/// Which proxy estimates feed the anomaly cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SecMode {
    /// One-step proxies from the common previous estimate.
    OneStep,
    /// Constant-gain replay over the full observation history.
    FullHistory,
}

/// Fixed or budget-tracking anomaly/covariance trade-off weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LambdaMode {
    /// `lambda` never moves.
    Fixed(f64),
    /// Slow-timescale ascent toward `trace(P) = p_bar`.
    Adaptive { p_bar: f64 },
}

/// Estimator configuration. `seed` drives only the perturbation stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SecConfig {
    pub mode: SecMode,
    pub lambda: LambdaMode,
    /// Spectral margin `delta` in `rho(I - K C) <= 1 - delta`.
    pub delta: f64,
    /// Box bound `l`.
    pub bound: f64,
    pub schedules: StepSchedules,
    /// Initial multiplier value (ignored by `LambdaMode::Fixed`).
    pub lambda0: f64,
    pub history_cap: usize,
    pub seed: u64,
}

impl SecConfig {
    pub fn new(mode: SecMode, lambda: LambdaMode, schedules: StepSchedules, seed: u64) -> Self {
        SecConfig {
            mode,
            lambda,
            delta: DEFAULT_DELTA,
            bound: DEFAULT_BOUND,
            schedules,
            lambda0: 1.0,
            history_cap: DEFAULT_HISTORY_CAP,
            seed,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::Validation("delta must lie in (0, 1)".into()));
        }
        if !(self.bound > 0.0) {
            return Err(Error::Validation("bound l must be positive".into()));
        }
        let two_timescale = matches!(self.lambda, LambdaMode::Adaptive { .. });
        self.schedules.validate(two_timescale)?;
        match self.lambda {
            LambdaMode::Fixed(v) if !(v >= 0.0 && v.is_finite()) => {
                Err(Error::Validation("fixed lambda must be nonnegative".into()))
            }
            LambdaMode::Adaptive { p_bar } if !(p_bar > 0.0 && p_bar.is_finite()) => {
                Err(Error::Validation("covariance budget p_bar must be positive".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Draws a `rows x cols` matrix of independent `+-1` entries (row-major
/// draw order, so a seed pins the matrix).
pub fn rademacher<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> DMatrix<f64> {
    let data: Vec<f64> = (0..rows * cols)
        .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
        .collect();
    DMatrix::from_row_slice(rows, cols, &data)
}

/// The two probe gains `K + d D` and `K - d D`.
pub fn perturb(k: &DMatrix<f64>, d: f64, delta_mat: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let step = d * delta_mat;
    (k + &step, k - &step)
}

/// Maximum squared subset discrepancy `max_i ||pairs[i].0 - pairs[i].1||^2`
/// and its argmax index; ties go to the earliest (lexicographically lowest)
/// subset.
pub fn subset_anomaly_cost(pairs: &[(DVector<f64>, DVector<f64>)]) -> (f64, usize) {
    let mut best = f64::NEG_INFINITY;
    let mut arg = 0;
    for (i, (xb, xbc)) in pairs.iter().enumerate() {
        let d = (xb - xbc).norm_squared();
        if d > best {
            best = d;
            arg = i;
        }
    }
    (best.max(0.0), arg)
}

/// One-step subset estimates for a single gain: for every subset `B` in
/// `subsets`, the pair `(x_B, x_Bc)` where `x_B = x_pred + K_B r` reads only
/// `B`'s rows of the innovation `r` (and only rows delivered in `observed`).
fn one_step_subset_estimates(
    x_pred: &DVector<f64>,
    r: &DVector<f64>,
    gain: &DMatrix<f64>,
    model: &SystemModel,
    subsets: &[SensorSubset],
    observed: &SensorSubset,
) -> Vec<(DVector<f64>, DVector<f64>)> {
    let q = model.dims.q;
    let k_per = model.dims.k;
    let n = model.dims.n_sensors;
    // Per-sensor contributions s_i = K[:, rows(i)] * r[rows(i)], zero for
    // undelivered sensors; subset estimates are sums of these.
    let mut per_sensor = vec![DVector::<f64>::zeros(q); n];
    for i in 0..n {
        if !observed.contains(i) {
            continue;
        }
        let s = &mut per_sensor[i];
        for col in i * k_per..(i + 1) * k_per {
            for row in 0..q {
                s[row] += gain[(row, col)] * r[col];
            }
        }
    }
    subsets
        .iter()
        .map(|b| {
            let mut xb = x_pred.clone();
            let mut xbc = x_pred.clone();
            for i in 0..n {
                if b.contains(i) {
                    xb += &per_sensor[i];
                } else {
                    xbc += &per_sensor[i];
                }
            }
            (xb, xbc)
        })
        .collect()
}

/// One-step proxy pairs for the two probe gains (the cheap mode): both
/// columns restricted per subset, innovations taken about the *common*
/// previous estimate.
#[allow(clippy::too_many_arguments)]
pub fn sec_l_proxies(
    x_prev: &DVector<f64>,
    y: &DVector<f64>,
    k_plus: &DMatrix<f64>,
    k_minus: &DMatrix<f64>,
    model: &SystemModel,
    subsets: &[SensorSubset],
    observed: &SensorSubset,
) -> (Vec<(DVector<f64>, DVector<f64>)>, Vec<(DVector<f64>, DVector<f64>)>) {
    let x_pred = &model.a * x_prev;
    let r = y - &model.c * &x_pred;
    (
        one_step_subset_estimates(&x_pred, &r, k_plus, model, subsets, observed),
        one_step_subset_estimates(&x_pred, &r, k_minus, model, subsets, observed),
    )
}

/// Replays a constant-gain filter restricted to each subset over the whole
/// observation history (the expensive mode).
fn replay_subset_estimates(
    x0: &DVector<f64>,
    ys: &[DVector<f64>],
    gain: &DMatrix<f64>,
    model: &SystemModel,
    subsets: &[SensorSubset],
) -> Vec<(DVector<f64>, DVector<f64>)> {
    let n = model.dims.n_sensors;
    let k_per = model.dims.k;
    subsets
        .iter()
        .map(|b| {
            let gb = restrict_gain(gain, b, k_per);
            let gbc = restrict_gain(gain, &b.complement(n), k_per);
            let mut xb = x0.clone();
            let mut xbc = x0.clone();
            for y in ys {
                xb = fixed_gain_step(&xb, gb.entries(), &model.a, &model.c, y);
                xbc = fixed_gain_step(&xbc, gbc.entries(), &model.a, &model.c, y);
            }
            (xb, xbc)
        })
        .collect()
}

/// Full-history proxy pairs for the two probe gains.
pub fn sec_full_history_proxies(
    x0: &DVector<f64>,
    ys: &[DVector<f64>],
    k_plus: &DMatrix<f64>,
    k_minus: &DMatrix<f64>,
    model: &SystemModel,
    subsets: &[SensorSubset],
) -> (Vec<(DVector<f64>, DVector<f64>)>, Vec<(DVector<f64>, DVector<f64>)>) {
    (
        replay_subset_estimates(x0, ys, k_plus, model, subsets),
        replay_subset_estimates(x0, ys, k_minus, model, subsets),
    )
}

/// Entrywise gradient step `K_ij - a (c+ - c-) / (2 d D_ij)`, clamped to
/// `[-bound, bound]`. When `columns` is given only those gain columns move.
#[allow(clippy::too_many_arguments)]
pub fn spsa_update(
    k: &DMatrix<f64>,
    cost_plus: f64,
    cost_minus: f64,
    a_step: f64,
    d: f64,
    delta_mat: &DMatrix<f64>,
    bound: f64,
    columns: Option<&[usize]>,
) -> DMatrix<f64> {
    debug_assert!(
        delta_mat.iter().all(|&v| v == 1.0 || v == -1.0),
        "perturbation entries must be +-1"
    );
    let scale = (cost_plus - cost_minus) / (2.0 * d);
    let mut out = k.clone();
    let update_col = |j: usize| -> bool {
        match columns {
            Some(cols) => cols.contains(&j),
            None => true,
        }
    };
    for j in 0..k.ncols() {
        if !update_col(j) {
            continue;
        }
        for i in 0..k.nrows() {
            let step = a_step * scale / delta_mat[(i, j)];
            out[(i, j)] = (k[(i, j)] - step).clamp(-bound, bound);
        }
    }
    out
}

/// Projects `k_tilde` into `rho(I - K C) <= 1 - delta` by bisecting along
/// the segment back to the feasible `k_prev` (50 halvings). Returns the
/// projected gain and its spectral radius.
pub fn project_spectral(
    k_tilde: &DMatrix<f64>,
    k_prev: &DMatrix<f64>,
    c: &DMatrix<f64>,
    delta: f64,
) -> Result<(DMatrix<f64>, f64)> {
    let limit = 1.0 - delta;
    let rho = closed_loop_radius(k_tilde, c)?;
    if rho <= limit {
        return Ok((k_tilde.clone(), rho));
    }
    if closed_loop_radius(k_prev, c)? > limit {
        return Err(Error::Computation(
            "projection anchor is itself infeasible".into(),
        ));
    }
    let dir = k_tilde - k_prev;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        let cand = k_prev + mid * &dir;
        if closed_loop_radius(&cand, c)? <= limit {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let out = k_prev + lo * &dir;
    let rho_out = closed_loop_radius(&out, c)?;
    Ok((out, rho_out))
}

/// Slow-timescale multiplier ascent `clamp(lambda + b (trace_p - p_bar), 0, bound)`.
pub fn lambda_update(lambda: f64, b_step: f64, trace_p: f64, p_bar: f64, bound: f64) -> f64 {
    (lambda + b_step * (trace_p - p_bar)).clamp(0.0, bound)
}

/// Per-slot diagnostics emitted by [`SecEstimator::step`]. Skipped slots
/// (nothing delivered) carry `None` for the probe-driven fields.
#[derive(Debug, Clone)]
pub struct SecSlotRecord {
    pub t: usize,
    pub trace_p: f64,
    pub lambda: f64,
    /// Unperturbed max subset discrepancy (the estimator's own anomaly view).
    pub anomaly_max: Option<f64>,
    /// Subset achieving it.
    pub argmax_subset: Option<SensorSubset>,
    /// `rho(I - K C)` of the gain leaving this slot.
    pub spectral_radius: f64,
    pub cost_plus: Option<f64>,
    pub cost_minus: Option<f64>,
}

/// The adaptive-gain estimator. Drive it with [`SecEstimator::step`] once
/// per slot; read the estimate with [`SecEstimator::estimate`].
pub struct SecEstimator {
    model: SystemModel,
    cfg: SecConfig,
    subsets: Vec<SensorSubset>,
    full_set: SensorSubset,
    k: DMatrix<f64>,
    p: DMatrix<f64>,
    x_hat: DVector<f64>,
    lambda: f64,
    t: usize,
    visits: BTreeMap<SensorSubset, usize>,
    history: Vec<DVector<f64>>,
    rng: ChaCha8Rng,
}

impl SecEstimator {
    /// Builds the estimator with the steady-state optimal gain as the first
    /// iterate and the steady filtered covariance as `P(0)`.
    pub fn new(model: &SystemModel, cfg: SecConfig) -> Result<Self> {
        cfg.validate()?;
        let ss = riccati_fixed_point(model, FP_TOL, FP_MAX_ITER)?;
        let rho = closed_loop_radius(&ss.k_ss, &model.c)?;
        if rho > 1.0 - cfg.delta {
            return Err(Error::Validation(format!(
                "steady-state gain is infeasible for delta = {} (rho = {rho:.4}); \
                 lower delta",
                cfg.delta
            )));
        }
        if ss.k_ss.amax() > cfg.bound {
            return Err(Error::Validation(
                "steady-state gain exceeds the box bound l; raise bound".into(),
            ));
        }
        let lambda = match cfg.lambda {
            LambdaMode::Fixed(v) => v,
            LambdaMode::Adaptive { .. } => cfg.lambda0,
        };
        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(SecEstimator {
            subsets: enumerate_subsets(model.dims.n_sensors, model.dims.n0),
            full_set: SensorSubset::full(model.dims.n_sensors),
            k: ss.k_ss.clone(),
            p: ss.p_filt.clone(),
            x_hat: DVector::zeros(model.dims.q),
            lambda,
            t: 0,
            visits: BTreeMap::new(),
            history: Vec::new(),
            model: model.clone(),
            cfg,
            rng,
        })
    }

    pub fn estimate(&self) -> &DVector<f64> {
        &self.x_hat
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn trace_p(&self) -> f64 {
        self.p.trace()
    }

    /// Overrides the initial estimate (before the first step).
    pub fn set_initial_estimate(&mut self, x0: DVector<f64>) -> Result<()> {
        if self.t != 0 {
            return Err(Error::Validation("initial estimate must be set before stepping".into()));
        }
        if x0.len() != self.model.dims.q {
            return Err(Error::Validation("x0 has wrong dimension".into()));
        }
        self.x_hat = x0;
        Ok(())
    }

    /// Advances one slot on observation `y`. `observed` lists the sensors
    /// whose packets arrived (`None` means everything arrived). Undelivered
    /// rows of `y` never influence the estimate, the probes, or the update
    /// (their gain columns are masked to zero), but they must still hold
    /// finite values.
    pub fn step(&mut self, y: &DVector<f64>, observed: Option<&SensorSubset>) -> Result<SecSlotRecord> {
        if y.len() != self.model.obs_dim() {
            return Err(Error::Validation(format!(
                "observation has dimension {}, expected {}",
                y.len(),
                self.model.obs_dim()
            )));
        }
        self.t += 1;
        let t = self.t;
        let s_t = observed.unwrap_or(&self.full_set);

        if self.cfg.mode == SecMode::FullHistory {
            if observed.is_some() && s_t != &self.full_set {
                return Err(Error::Validation(
                    "full-history mode does not support packet loss".into(),
                ));
            }
            if self.history.len() >= self.cfg.history_cap {
                return Err(Error::Validation(format!(
                    "full-history replay capped at {} slots",
                    self.cfg.history_cap
                )));
            }
        }

        // Nothing delivered: pure prediction, no gradient or multiplier
        // update, covariance advances with the zero gain.
        if s_t.is_empty() {
            self.x_hat = &self.model.a * &self.x_hat;
            let zero_gain = DMatrix::zeros(self.model.dims.q, self.model.obs_dim());
            self.p = error_cov_step(&self.p, &zero_gain, &self.model);
            let rho = closed_loop_radius(&self.k, &self.model.c)?;
            return Ok(SecSlotRecord {
                t,
                trace_p: self.p.trace(),
                lambda: self.lambda,
                anomaly_max: None,
                argmax_subset: None,
                spectral_radius: rho,
                cost_plus: None,
                cost_minus: None,
            });
        }

        let q = self.model.dims.q;
        let m = self.model.obs_dim();
        let k_per = self.model.dims.k;
        let full = s_t == &self.full_set;

        // Current-gain estimate update, columns masked to what arrived.
        let k_used = if full {
            self.k.clone()
        } else {
            restrict_gain(&self.k, s_t, k_per).entries().clone()
        };
        let x_prev = self.x_hat.clone();
        let x_next = fixed_gain_step(&x_prev, &k_used, &self.model.a, &self.model.c, y);

        // Probe gains.
        let delta_mat = rademacher(q, m, &mut self.rng);
        let d = self.cfg.schedules.d.value(t);
        let (k_plus, k_minus) = perturb(&self.k, d, &delta_mat);
        let (kp_used, km_used) = if full {
            (k_plus.clone(), k_minus.clone())
        } else {
            (
                restrict_gain(&k_plus, s_t, k_per).entries().clone(),
                restrict_gain(&k_minus, s_t, k_per).entries().clone(),
            )
        };

        // Proxy estimates and anomaly costs for both probes, plus the
        // unperturbed view for diagnostics/localization.
        let (plus_pairs, minus_pairs, nominal_pairs) = match self.cfg.mode {
            SecMode::OneStep => {
                let (p, m_) = sec_l_proxies(
                    &x_prev,
                    y,
                    &k_plus,
                    &k_minus,
                    &self.model,
                    &self.subsets,
                    s_t,
                );
                let x_pred = &self.model.a * &x_prev;
                let r = y - &self.model.c * &x_pred;
                let nominal =
                    one_step_subset_estimates(&x_pred, &r, &self.k, &self.model, &self.subsets, s_t);
                (p, m_, nominal)
            }
            SecMode::FullHistory => {
                self.history.push(y.clone());
                let x0 = DVector::zeros(q);
                let (p, m_) = sec_full_history_proxies(
                    &x0,
                    &self.history,
                    &k_plus,
                    &k_minus,
                    &self.model,
                    &self.subsets,
                );
                let nominal =
                    replay_subset_estimates(&x0, &self.history, &self.k, &self.model, &self.subsets);
                (p, m_, nominal)
            }
        };
        let (anom_plus, _) = subset_anomaly_cost(&plus_pairs);
        let (anom_minus, _) = subset_anomaly_cost(&minus_pairs);
        let (anom_nominal, arg_nominal) = subset_anomaly_cost(&nominal_pairs);

        // Covariance recursion for used, plus, and minus gains (all from the
        // common previous P).
        let p_next = error_cov_step(&self.p, &k_used, &self.model);
        let p_plus = error_cov_step(&self.p, &kp_used, &self.model);
        let p_minus = error_cov_step(&self.p, &km_used, &self.model);

        let cost_plus = anom_plus + self.lambda * p_plus.trace();
        let cost_minus = anom_minus + self.lambda * p_minus.trace();

        // Asynchronous step size: count visits of exactly this subset.
        let visit = self.visits.entry(s_t.clone()).or_insert(0);
        *visit += 1;
        let a_step = self.cfg.schedules.a.value(*visit);

        let cols = if full {
            None
        } else {
            Some(s_t.rows(k_per))
        };
        let k_tilde = spsa_update(
            &self.k,
            cost_plus,
            cost_minus,
            a_step,
            d,
            &delta_mat,
            self.cfg.bound,
            cols.as_deref(),
        );
        let (k_next, rho) = project_spectral(&k_tilde, &self.k, &self.model.c, self.cfg.delta)?;

        if let LambdaMode::Adaptive { p_bar } = self.cfg.lambda {
            let b_step = self.cfg.schedules.b.value(t);
            self.lambda = lambda_update(self.lambda, b_step, p_next.trace(), p_bar, self.cfg.bound);
        }

        self.x_hat = x_next;
        self.p = p_next;
        self.k = k_next;

        Ok(SecSlotRecord {
            t,
            trace_p: self.p.trace(),
            lambda: self.lambda,
            anomaly_max: Some(anom_nominal),
            argmax_subset: Some(self.subsets[arg_nominal].clone()),
            spectral_radius: rho,
            cost_plus: Some(cost_plus),
            cost_minus: Some(cost_minus),
        })
    }
}
