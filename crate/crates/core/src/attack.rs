//! False data injection against the fusion center.
//!
//! The attacker owns a subset of sensors and rewrites their rows of the
//! transmitted observation. The injected value is chosen to flip the sign of
//! the estimator's innovation on those rows: with `p = C A x_ref` the
//! prediction the estimator will form, attacked rows become
//!
//! ```text
//! y~_i = 2 p_i - y_i        (benign rows pass through untouched)
//! ```
//!
//! so `y~_i - p_i = -(y_i - p_i)`. Sign-flipped innovations keep every
//! marginal innovation statistic intact while steering the estimate away
//! from the state, which is what makes the attack invisible to plain
//! residue tests. Two knowledge models are supported:
//!
//! - **known estimate**: the attacker reads the estimator's own previous
//!   estimate and uses it as `x_ref`;
//! - **proxy filter**: the attacker cannot read the estimator and instead
//!   runs its own Kalman filter on the (already corrupted) transmitted
//!   stream, using the proxy's estimate as `x_ref`.
//!
//! The attacked subset is either static or redrawn every `T_switch` slots
//! with sensor `i` weighted proportionally to `1/i^2` (lower-indexed sensors
//! are juicier targets), sampled without replacement by sequential
//! renormalized draws.
//!
//! Independently of the observation-domain attack, [`transform_innovation`]
//! implements the abstract innovation-channel attack `z~ = T z + b`,
//! `b ~ N(0, Sigma_b)`; [`validate_stealth`] checks the distribution-
//! preserving condition `T Sigma_z T' + Sigma_b = Sigma_z` (the worst case
//! being `T = -I`, `Sigma_b = 0`).

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::kalman::{kf_step, FilterState};
use crate::linalg::{self, psd_factor};
use crate::process_model::{sample_mvn_zero, SystemModel};
use crate::subsets::SensorSubset;
use crate::{Error, Result};

/// How the attacker learns the estimate it flips innovations around.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Knowledge {
    /// Reads the attacked estimator's own previous estimate.
    #[serde(rename = "K")]
    KnownEstimate,
    /// Maintains a Kalman-filter proxy on the transmitted stream.
    #[serde(rename = "NK")]
    ProxyFilter,
}

/// Serializable attack description.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AttackSpec {
    /// `"none"`, `"static"`, or `"switching"`.
    pub mode: String,
    /// 1-based sensor ids for static mode.
    #[serde(default)]
    pub attacked_set: Option<Vec<usize>>,
    /// Redraw period for switching mode.
    #[serde(rename = "T_switch", default)]
    pub t_switch: Option<usize>,
    pub knowledge: Knowledge,
    /// Innovation transform for the abstract channel attack; `null` means
    /// the worst case `-I`.
    #[serde(rename = "Tmat", default)]
    pub t_mat: Option<Vec<Vec<f64>>>,
    /// Additive-noise covariance for the abstract channel attack; `null`
    /// means zero.
    #[serde(rename = "Sigma_b", default)]
    pub sigma_b: Option<Vec<Vec<f64>>>,
}

impl AttackSpec {
    pub fn none() -> Self {
        AttackSpec {
            mode: "none".into(),
            attacked_set: None,
            t_switch: None,
            knowledge: Knowledge::ProxyFilter,
            t_mat: None,
            sigma_b: None,
        }
    }

    pub fn static_set(ids_one_based: &[usize], knowledge: Knowledge) -> Self {
        AttackSpec {
            mode: "static".into(),
            attacked_set: Some(ids_one_based.to_vec()),
            t_switch: None,
            knowledge,
            t_mat: None,
            sigma_b: None,
        }
    }

    pub fn switching(t_switch: usize, knowledge: Knowledge) -> Self {
        AttackSpec {
            mode: "switching".into(),
            attacked_set: None,
            t_switch: Some(t_switch),
            knowledge,
            t_mat: None,
            sigma_b: None,
        }
    }
}

/// Rewrites the attacked rows of `y` as `2 (C A x_ref) - y`; all other rows
/// are returned bit-for-bit.
pub fn corrupt_observation(
    y: &DVector<f64>,
    x_ref: &DVector<f64>,
    attacked: &SensorSubset,
    model: &SystemModel,
) -> DVector<f64> {
    let mut out = y.clone();
    if attacked.is_empty() {
        return out;
    }
    let pred = &model.c * (&model.a * x_ref);
    for r in attacked.rows(model.dims.k) {
        out[r] = 2.0 * pred[r] - y[r];
    }
    out
}

/// Innovation-channel attack `z~ = T z + b`. `sigma_b_factor` is a
/// left factor of `Sigma_b` ([`psd_factor`]); `None` means no additive term.
pub fn transform_innovation<R: Rng>(
    z: &DVector<f64>,
    t_mat: &DMatrix<f64>,
    sigma_b_factor: Option<&DMatrix<f64>>,
    rng: &mut R,
) -> DVector<f64> {
    let mut out = t_mat * z;
    if let Some(factor) = sigma_b_factor {
        out += sample_mvn_zero(rng, factor);
    }
    out
}

/// Checks the distribution-preserving condition
/// `T Sigma_z T' + Sigma_b = Sigma_z` entrywise within `tol` (absolute,
/// relative to the largest entry of `Sigma_z`).
pub fn validate_stealth(
    t_mat: &DMatrix<f64>,
    sigma_b: &DMatrix<f64>,
    sigma_z: &DMatrix<f64>,
    tol: f64,
) -> bool {
    let lhs = t_mat * sigma_z * t_mat.transpose() + sigma_b;
    let scale = sigma_z.abs().max().max(1e-300);
    (lhs - sigma_z).abs().max() <= tol * scale
}

/// Per-sensor target weights `1/(i+1)^2` over 0-based indices.
fn switching_weights(n: usize) -> Vec<f64> {
    (0..n).map(|i| 1.0 / ((i + 1) as f64).powi(2)).collect()
}

/// Draws `count` distinct indices by sequential renormalized weighted draws.
pub fn weighted_sample_without_replacement<R: Rng>(
    weights: &[f64],
    count: usize,
    rng: &mut R,
) -> Vec<usize> {
    debug_assert!(count <= weights.len());
    let mut remaining: Vec<(usize, f64)> =
        weights.iter().copied().enumerate().collect();
    let mut picked = Vec::with_capacity(count);
    for _ in 0..count {
        let total: f64 = remaining.iter().map(|(_, w)| w).sum();
        let u = rng.random_range(0.0..total);
        let mut acc = 0.0;
        let mut chosen = remaining.len() - 1;
        for (pos, (_, w)) in remaining.iter().enumerate() {
            acc += w;
            if u < acc {
                chosen = pos;
                break;
            }
        }
        picked.push(remaining.remove(chosen).0);
    }
    picked
}

enum ScheduleKind {
    None,
    Static(SensorSubset),
    Switching { period: usize },
}

/// Attack engine driven slot by slot by the experiment harness. Owns the
/// attacked-set schedule, the attacker's RNG stream (separate from the
/// plant's), and the proxy filter when knowledge is [`Knowledge::ProxyFilter`].
pub struct Attacker {
    schedule: ScheduleKind,
    knowledge: Knowledge,
    weights: Vec<f64>,
    n0: usize,
    current: SensorSubset,
    proxy: FilterState,
    rng: ChaCha8Rng,
    model: SystemModel,
    sigma_b_factor: Option<DMatrix<f64>>,
    t_mat: Option<DMatrix<f64>>,
}

impl Attacker {
    pub fn new(model: &SystemModel, spec: &AttackSpec, seed: u64) -> Result<Self> {
        let n = model.dims.n_sensors;
        let schedule = match spec.mode.as_str() {
            "none" => ScheduleKind::None,
            "static" => {
                let ids = spec.attacked_set.as_ref().ok_or_else(|| {
                    Error::Validation("static attack needs attacked_set".into())
                })?;
                let set = SensorSubset::from_one_based(ids, n)?;
                if set.len() > model.dims.n0 {
                    return Err(Error::Validation(format!(
                        "attacked set has {} sensors, budget n0 = {}",
                        set.len(),
                        model.dims.n0
                    )));
                }
                ScheduleKind::Static(set)
            }
            "switching" => {
                let period = spec.t_switch.ok_or_else(|| {
                    Error::Validation("switching attack needs T_switch".into())
                })?;
                if period == 0 {
                    return Err(Error::Validation("T_switch must be positive".into()));
                }
                ScheduleKind::Switching { period }
            }
            other => {
                return Err(Error::Validation(format!(
                    "unknown attack mode {other:?} (expected none|static|switching)"
                )));
            }
        };
        let t_mat = match &spec.t_mat {
            Some(rows) => {
                let m = linalg::rows_to_mat(rows)?;
                if m.nrows() != model.obs_dim() || m.ncols() != model.obs_dim() {
                    return Err(Error::Validation("Tmat has wrong dimensions".into()));
                }
                Some(m)
            }
            None => None,
        };
        let sigma_b_factor = match &spec.sigma_b {
            Some(rows) => {
                let m = linalg::rows_to_mat(rows)?;
                if m.iter().all(|&x| x == 0.0) {
                    None
                } else {
                    Some(psd_factor(&m)?)
                }
            }
            None => None,
        };
        Ok(Attacker {
            schedule,
            knowledge: spec.knowledge,
            weights: switching_weights(n),
            n0: model.dims.n0,
            current: SensorSubset::empty(),
            proxy: FilterState::zeroed(model.dims.q),
            rng: ChaCha8Rng::seed_from_u64(seed),
            model: model.clone(),
            sigma_b_factor,
            t_mat,
        })
    }

    pub fn knowledge(&self) -> Knowledge {
        self.knowledge
    }

    /// The subset currently under attack.
    pub fn attacked_now(&self) -> &SensorSubset {
        &self.current
    }

    /// Advances the attacked-set schedule to slot `t` (1-based). Switching
    /// mode redraws at `t = 1, T+1, 2T+1, ...`; static and none modes only
    /// initialize at `t = 1`.
    pub fn begin_slot(&mut self, t: usize) {
        match &self.schedule {
            ScheduleKind::None => {}
            ScheduleKind::Static(set) => {
                if t == 1 {
                    self.current = set.clone();
                }
            }
            ScheduleKind::Switching { period } => {
                if (t - 1) % period == 0 {
                    let picked = weighted_sample_without_replacement(
                        &self.weights,
                        self.n0,
                        &mut self.rng,
                    );
                    self.current = SensorSubset::new(picked, self.model.dims.n_sensors)
                        .expect("draws are in range");
                }
            }
        }
    }

    /// Corrupts one transmitted observation. In known-estimate mode the
    /// caller passes the attacked estimator's previous estimate; in proxy
    /// mode the internal filter supplies the reference and is then advanced
    /// on the corrupted output (what the estimator actually receives).
    pub fn corrupt(&mut self, y: &DVector<f64>, estimator_ref: Option<&DVector<f64>>) -> Result<DVector<f64>> {
        if self.current.is_empty() {
            // Still advance the proxy so a later switch-in sees a warm filter.
            if self.knowledge == Knowledge::ProxyFilter {
                let (next, _) = kf_step(&self.proxy, &self.model, y)?;
                self.proxy = next;
            }
            return Ok(y.clone());
        }
        let corrupted = match self.knowledge {
            Knowledge::KnownEstimate => {
                let x_ref = estimator_ref.ok_or_else(|| {
                    Error::Validation(
                        "known-estimate attack needs the estimator's previous estimate".into(),
                    )
                })?;
                corrupt_observation(y, x_ref, &self.current, &self.model)
            }
            Knowledge::ProxyFilter => {
                let x_ref = self.proxy.x_hat.clone();
                let out = corrupt_observation(y, &x_ref, &self.current, &self.model);
                let (next, _) = kf_step(&self.proxy, &self.model, &out)?;
                self.proxy = next;
                out
            }
        };
        Ok(corrupted)
    }

    /// Applies the abstract innovation-channel attack with this spec's
    /// `Tmat` (default `-I`) and `Sigma_b` (default zero).
    pub fn attack_innovation(&mut self, z: &DVector<f64>) -> DVector<f64> {
        let m = z.len();
        let neg_i = DMatrix::<f64>::identity(m, m) * -1.0;
        let t = self.t_mat.as_ref().unwrap_or(&neg_i);
        transform_innovation(z, t, self.sigma_b_factor.as_ref(), &mut self.rng)
    }
}
