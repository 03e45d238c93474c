//! Linear process model, random instance generation, and simulation.
//!
//! The plant is
//!
//! ```text
//! x(t+1) = A x(t) + w(t),      w ~ N(0, Q)
//! y(t)   = C x(t) + v(t),      v ~ N(0, R)
//! ```
//!
//! with `x` of dimension `q` and `y` stacked from `N` sensors of `k` rows
//! each (`m = k N` rows total). `n0` bounds how many sensors an attacker can
//! compromise at once; estimators and detectors enumerate sensor subsets of
//! that size.
//!
//! Random instances use a fixed recipe: `A` is half a row-stochastic matrix
//! (each row uniform on the probability simplex, then scaled by 0.5, so the
//! spectral radius is exactly 0.5), `Q = (0.1 Z)(0.1 Z)'` and
//! `R = (0.1 Z)(0.1 Z)'` with independent `Z` matrices of `u[-1, 1]` entries,
//! and `C` has `u[0, 1]` entries. Note `R` is a full matrix: observation
//! noise is correlated across sensors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::Write as _;
use std::path::Path;

use crate::linalg::{self, is_psd, psd_factor, spectral_radius};
use crate::subsets::SensorSubset;
use crate::{Error, Result};

/// Problem dimensions: state size `q`, sensor count `N`, rows per sensor
/// `k`, and the attacked-sensor budget `n0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub q: usize,
    #[serde(rename = "N")]
    pub n_sensors: usize,
    pub k: usize,
    pub n0: usize,
}

impl ModelDims {
    pub fn obs_dim(&self) -> usize {
        self.k * self.n_sensors
    }

    pub fn validate(&self) -> Result<()> {
        if self.q == 0 || self.n_sensors == 0 || self.k == 0 {
            return Err(Error::Validation(
                "dimensions q, N, k must all be positive".into(),
            ));
        }
        if self.n0 >= self.n_sensors {
            return Err(Error::Validation(format!(
                "attacked-sensor budget n0 = {} must be < N = {}",
                self.n0, self.n_sensors
            )));
        }
        Ok(())
    }
}

/// The plant matrices plus dimensions. Construct via [`SystemModel::new`]
/// (validating) or [`generate_random_system`].
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel {
    pub dims: ModelDims,
    /// State transition, `q x q`, spectral radius < 1.
    pub a: DMatrix<f64>,
    /// Process noise covariance, `q x q` PSD.
    pub q_cov: DMatrix<f64>,
    /// Observation matrix, `kN x q`.
    pub c: DMatrix<f64>,
    /// Observation noise covariance, `kN x kN` PSD.
    pub r_cov: DMatrix<f64>,
}

impl SystemModel {
    pub fn new(
        dims: ModelDims,
        a: DMatrix<f64>,
        q_cov: DMatrix<f64>,
        c: DMatrix<f64>,
        r_cov: DMatrix<f64>,
    ) -> Result<Self> {
        dims.validate()?;
        let m = dims.obs_dim();
        if a.nrows() != dims.q || a.ncols() != dims.q {
            return Err(Error::Validation(format!(
                "A must be {0}x{0}, got {1}x{2}",
                dims.q,
                a.nrows(),
                a.ncols()
            )));
        }
        if q_cov.nrows() != dims.q || q_cov.ncols() != dims.q {
            return Err(Error::Validation(format!(
                "Q must be {0}x{0}, got {1}x{2}",
                dims.q,
                q_cov.nrows(),
                q_cov.ncols()
            )));
        }
        if c.nrows() != m || c.ncols() != dims.q {
            return Err(Error::Validation(format!(
                "C must be {}x{}, got {}x{}",
                m,
                dims.q,
                c.nrows(),
                c.ncols()
            )));
        }
        if r_cov.nrows() != m || r_cov.ncols() != m {
            return Err(Error::Validation(format!(
                "R must be {0}x{0}, got {1}x{2}",
                m,
                r_cov.nrows(),
                r_cov.ncols()
            )));
        }
        for (name, mat) in [("A", &a), ("Q", &q_cov), ("C", &c), ("R", &r_cov)] {
            if mat.iter().any(|x| !x.is_finite()) {
                return Err(Error::Validation(format!("{name} has non-finite entries")));
            }
        }
        let rho = spectral_radius(&a)?;
        if rho >= 1.0 {
            return Err(Error::Validation(format!(
                "A must be stable (spectral radius {rho:.6} >= 1)"
            )));
        }
        if !is_psd(&q_cov) {
            return Err(Error::Validation("Q is not positive semidefinite".into()));
        }
        if !is_psd(&r_cov) {
            return Err(Error::Validation("R is not positive semidefinite".into()));
        }
        Ok(SystemModel {
            dims,
            a,
            q_cov,
            c,
            r_cov,
        })
    }

    /// Total observation dimension `m = k N`.
    pub fn obs_dim(&self) -> usize {
        self.dims.obs_dim()
    }

    /// Observation matrices restricted to the rows owned by `subset`:
    /// the row slice of `C` and the corresponding principal block of `R`.
    pub fn restrict_obs(&self, subset: &SensorSubset) -> (DMatrix<f64>, DMatrix<f64>) {
        let rows = subset.rows(self.dims.k);
        let c_sub = self.c.select_rows(rows.iter());
        let r_sub = self.r_cov.select_rows(rows.iter()).select_columns(rows.iter());
        (c_sub, r_sub)
    }

    /// Gathers the entries of a full observation vector owned by `subset`.
    pub fn gather_obs(&self, y: &DVector<f64>, subset: &SensorSubset) -> DVector<f64> {
        let rows = subset.rows(self.dims.k);
        DVector::from_iterator(rows.len(), rows.iter().map(|&r| y[r]))
    }
}

/// JSON mirror of [`SystemModel`] with matrices as row-major nested arrays.
#[derive(Serialize, Deserialize)]
struct SystemModelJson {
    q: usize,
    #[serde(rename = "N")]
    n_sensors: usize,
    k: usize,
    n0: usize,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q_cov: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r_cov: Vec<Vec<f64>>,
}

impl Serialize for SystemModel {
    fn serialize<S: serde::Serializer>(&self, ser: S) -> std::result::Result<S::Ok, S::Error> {
        SystemModelJson {
            q: self.dims.q,
            n_sensors: self.dims.n_sensors,
            k: self.dims.k,
            n0: self.dims.n0,
            a: linalg::mat_to_rows(&self.a),
            q_cov: linalg::mat_to_rows(&self.q_cov),
            c: linalg::mat_to_rows(&self.c),
            r_cov: linalg::mat_to_rows(&self.r_cov),
        }
        .serialize(ser)
    }
}

impl<'de> Deserialize<'de> for SystemModel {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = SystemModelJson::deserialize(de)?;
        let dims = ModelDims {
            q: raw.q,
            n_sensors: raw.n_sensors,
            k: raw.k,
            n0: raw.n0,
        };
        let build = || -> Result<SystemModel> {
            SystemModel::new(
                dims,
                linalg::rows_to_mat(&raw.a)?,
                linalg::rows_to_mat(&raw.q_cov)?,
                linalg::rows_to_mat(&raw.c)?,
                linalg::rows_to_mat(&raw.r_cov)?,
            )
        };
        build().map_err(serde::de::Error::custom)
    }
}

impl SystemModel {
    pub fn to_json_file(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        let mut f = std::fs::File::create(path)?;
        f.write_all(text.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Draws a random instance with the fixed recipe described in the module
/// docs. Sampling order is pinned (rows of `A`, then `Z_Q`, then `C`, then
/// `Z_R`, all row-major) so a seed fully determines the instance.
pub fn generate_random_system(dims: ModelDims, seed: u64) -> Result<SystemModel> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = dims.q;
    let m = dims.obs_dim();

    // A = 0.5 * (row-stochastic): each row uniform on the simplex via
    // normalized unit exponentials.
    let mut a_entries = vec![0.0; q * q];
    for i in 0..q {
        let draws: Vec<f64> = (0..q).map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        for j in 0..q {
            a_entries[i * q + j] = 0.5 * draws[j] / total;
        }
    }
    let a = DMatrix::from_row_slice(q, q, &a_entries);

    let z_q: Vec<f64> = (0..q * q).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let half_q = DMatrix::from_row_slice(q, q, &z_q) * 0.1;
    let q_cov = linalg::symmetrize(&(&half_q * half_q.transpose()));

    let c_entries: Vec<f64> = (0..m * q).map(|_| rng.random_range(0.0..=1.0)).collect();
    let c = DMatrix::from_row_slice(m, q, &c_entries);

    let z_r: Vec<f64> = (0..m * m).map(|_| rng.random_range(-1.0..=1.0)).collect();
    let half_r = DMatrix::from_row_slice(m, m, &z_r) * 0.1;
    let r_cov = linalg::symmetrize(&(&half_r * half_r.transpose()));

    SystemModel::new(dims, a, q_cov, c, r_cov)
}

/// A simulated run: `states[t]` is `x(t)` and `observations[t]` is `y(t)`
/// for `t = 0 .. horizon-1` (the initial state is included).
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<DVector<f64>>,
    pub observations: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.states.len()
    }
}

/// Draws `z ~ N(0, I)` entries front-to-back and returns `factor * z`.
pub fn sample_mvn_zero<R: Rng>(rng: &mut R, factor: &DMatrix<f64>) -> DVector<f64> {
    let n = factor.ncols();
    let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(rng)));
    factor * z
}

/// Simulates `horizon` slots from `x0` (zero when omitted). Per slot the
/// process noise is drawn before the observation noise; both covariance
/// factors come from [`psd_factor`], so exactly-zero covariances give
/// exactly-noiseless runs.
pub fn simulate(
    model: &SystemModel,
    horizon: usize,
    x0: Option<DVector<f64>>,
    seed: u64,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::Validation("horizon must be positive".into()));
    }
    let q = model.dims.q;
    let x0 = x0.unwrap_or_else(|| DVector::zeros(q));
    if x0.len() != q {
        return Err(Error::Validation(format!(
            "x0 has dimension {}, expected {}",
            x0.len(),
            q
        )));
    }
    let lq = psd_factor(&model.q_cov)?;
    let lr = psd_factor(&model.r_cov)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut states = Vec::with_capacity(horizon);
    let mut observations = Vec::with_capacity(horizon);
    let mut x = x0;
    for _ in 0..horizon {
        let w = sample_mvn_zero(&mut rng, &lq);
        let v = sample_mvn_zero(&mut rng, &lr);
        observations.push(&model.c * &x + v);
        states.push(x.clone());
        x = &model.a * &x + w;
    }
    Ok(Trajectory {
        states,
        observations,
    })
}

/// Writes a trajectory as CSV with columns `t, x_1..x_q, y_1..y_m`.
pub fn write_trajectory_csv(traj: &Trajectory, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let q = traj.states.first().map_or(0, |x| x.len());
    let m = traj.observations.first().map_or(0, |y| y.len());
    let mut header = vec!["t".to_string()];
    header.extend((1..=q).map(|i| format!("x_{i}")));
    header.extend((1..=m).map(|i| format!("y_{i}")));
    w.write_record(&header)?;
    for t in 0..traj.horizon() {
        let mut rec = vec![t.to_string()];
        rec.extend(traj.states[t].iter().map(|v| format!("{v}")));
        rec.extend(traj.observations[t].iter().map(|v| format!("{v}")));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a trajectory written by [`write_trajectory_csv`].
pub fn read_trajectory_csv(path: &Path, q: usize, m: usize) -> Result<Trajectory> {
    let mut r = csv::Reader::from_path(path)?;
    let mut states = Vec::new();
    let mut observations = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 1 + q + m {
            return Err(Error::Validation(format!(
                "trajectory row has {} fields, expected {}",
                rec.len(),
                1 + q + m
            )));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .map_err(|e| Error::Validation(format!("bad float {s:?}: {e}")))
        };
        let mut x = DVector::zeros(q);
        for i in 0..q {
            x[i] = parse(&rec[1 + i])?;
        }
        let mut y = DVector::zeros(m);
        for i in 0..m {
            y[i] = parse(&rec[1 + q + i])?;
        }
        states.push(x);
        observations.push(y);
    }
    Ok(Trajectory {
        states,
        observations,
    })
}
