//! Kalman filtering: the optimal recursion, steady-state quantities, and the
//! error-covariance recursion for arbitrary constant gains.
//!
//! The optimal filter for `x(t+1) = A x(t) + w(t)`, `y(t) = C x(t) + v(t)` is
//!
//! ```text
//! x_pred = A x_hat(t-1)                 P_pred = A P(t-1) A' + Q
//! z      = y(t) - C x_pred              S      = C P_pred C' + R
//! K      = P_pred C' S^{-1}
//! x_hat(t) = x_pred + K z               P(t)   = (I - K C) P_pred
//! ```
//!
//! (the covariance update is computed in Joseph form for symmetry). For a
//! *fixed* gain `K` the estimation-error covariance instead obeys
//!
//! ```text
//! P(t) = (I - K C)(A P(t-1) A' + Q)(I - K C)' + K R K'
//! ```
//!
//! whose fixed point `P(K)` exists whenever the recursion contracts; the
//! adaptive estimator uses one step of this recursion per slot and treats
//! `trace(P)` as its covariance proxy. Gains can be restricted to a sensor
//! subset by zeroing the columns owned by the excluded sensors, which is
//! exactly "the filter never reads those rows".

use nalgebra::{DMatrix, DVector};

use crate::linalg::{regularized_inverse, spectral_radius, symmetrize};
use crate::process_model::SystemModel;
use crate::subsets::SensorSubset;
use crate::{Error, Result};

/// Default convergence tolerance for fixed-point iterations.
pub const FP_TOL: f64 = 1e-12;
/// Default iteration cap for fixed-point iterations.
pub const FP_MAX_ITER: usize = 200_000;

/// Estimate and error covariance carried between filter steps.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x_hat: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl FilterState {
    /// Zero estimate with covariance `p0`.
    pub fn new(q: usize, p0: DMatrix<f64>) -> Self {
        FilterState {
            x_hat: DVector::zeros(q),
            p: p0,
        }
    }

    /// Zero estimate, zero covariance (a confident prior at the origin).
    pub fn zeroed(q: usize) -> Self {
        FilterState::new(q, DMatrix::zeros(q, q))
    }
}

/// Steady-state (limiting) filter quantities from the Riccati fixed point.
#[derive(Debug, Clone)]
pub struct SteadyState {
    /// Limiting one-step prediction covariance.
    pub p_pred: DMatrix<f64>,
    /// Limiting filtered covariance `(I - K C) p_pred`.
    pub p_filt: DMatrix<f64>,
    /// Steady-state gain.
    pub k_ss: DMatrix<f64>,
    /// Steady-state innovation covariance `C p_pred C' + R`.
    pub sigma_z: DMatrix<f64>,
}

impl SteadyState {
    /// Limiting mean squared estimation error of the optimal filter.
    pub fn limiting_mse(&self) -> f64 {
        self.p_filt.trace()
    }
}

fn solve_spd(s: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = symmetrize(s).cholesky() {
        return Ok(chol.solve(rhs));
    }
    let (inv, _) = regularized_inverse(s)?;
    Ok(&inv * rhs)
}

/// Joseph-form measurement update of `(x_pred, p_pred)` against observation
/// rows `(c, r_cov)`. Returns the updated state and the innovation
/// `y - C x_pred`. Accepts an empty observation (no rows) as a no-op.
pub fn measurement_update(
    x_pred: &DVector<f64>,
    p_pred: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r_cov: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(FilterState, DVector<f64>)> {
    let q = x_pred.len();
    if c.nrows() != y.len() {
        return Err(Error::Validation(format!(
            "observation has {} rows, C has {}",
            y.len(),
            c.nrows()
        )));
    }
    if y.is_empty() {
        return Ok((
            FilterState {
                x_hat: x_pred.clone(),
                p: symmetrize(p_pred),
            },
            DVector::zeros(0),
        ));
    }
    let z = y - c * x_pred;
    let s = symmetrize(&(c * p_pred * c.transpose() + r_cov));
    // K = P_pred C' S^{-1}  via  S X = C P_pred, K = X'.
    let x_mat = solve_spd(&s, &(c * p_pred))?;
    let k = x_mat.transpose();
    let x_hat = x_pred + &k * &z;
    let ik = DMatrix::<f64>::identity(q, q) - &k * c;
    let p = symmetrize(&(&ik * p_pred * ik.transpose() + &k * r_cov * k.transpose()));
    if x_hat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Computation("filter state diverged to non-finite".into()));
    }
    Ok((FilterState { x_hat, p }, z))
}

/// One optimal-filter step against explicit observation matrices. Returns
/// the updated state and the innovation `y - C A x_hat`.
pub fn kf_step_with(
    state: &FilterState,
    a: &DMatrix<f64>,
    q_cov: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r_cov: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<(FilterState, DVector<f64>)> {
    let x_pred = a * &state.x_hat;
    let p_pred = symmetrize(&(a * &state.p * a.transpose() + q_cov));
    measurement_update(&x_pred, &p_pred, c, r_cov, y)
}

/// One optimal-filter step against the full observation stack.
pub fn kf_step(
    state: &FilterState,
    model: &SystemModel,
    y: &DVector<f64>,
) -> Result<(FilterState, DVector<f64>)> {
    kf_step_with(state, &model.a, &model.q_cov, &model.c, &model.r_cov, y)
}

/// Iterates the prediction-covariance Riccati map to its fixed point and
/// returns the steady-state quantities.
pub fn riccati_fixed_point_with(
    a: &DMatrix<f64>,
    q_cov: &DMatrix<f64>,
    c: &DMatrix<f64>,
    r_cov: &DMatrix<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<SteadyState> {
    let q = a.nrows();
    let mut p = q_cov.clone();
    let mut converged = false;
    for _ in 0..max_iter {
        let s = symmetrize(&(c * &p * c.transpose() + r_cov));
        let x_mat = solve_spd(&s, &(c * &p))?;
        let k = x_mat.transpose();
        let p_filt = &p - &k * c * &p;
        let next = symmetrize(&(a * p_filt * a.transpose() + q_cov));
        let diff = (&next - &p).abs().max();
        p = next;
        if diff < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::Computation(format!(
            "Riccati iteration did not converge within {max_iter} iterations"
        )));
    }
    let s = symmetrize(&(c * &p * c.transpose() + r_cov));
    let x_mat = solve_spd(&s, &(c * &p))?;
    let k_ss = x_mat.transpose();
    let p_filt = symmetrize(&(&(DMatrix::<f64>::identity(q, q) - &k_ss * c) * &p));
    Ok(SteadyState {
        p_pred: p,
        p_filt,
        k_ss,
        sigma_z: s,
    })
}

/// [`riccati_fixed_point_with`] against the full observation stack.
pub fn riccati_fixed_point(model: &SystemModel, tol: f64, max_iter: usize) -> Result<SteadyState> {
    riccati_fixed_point_with(&model.a, &model.q_cov, &model.c, &model.r_cov, tol, max_iter)
}

/// One fixed-gain estimate update `A x + K (y - C A x)`.
pub fn fixed_gain_step(
    x_hat: &DVector<f64>,
    k: &DMatrix<f64>,
    a: &DMatrix<f64>,
    c: &DMatrix<f64>,
    y: &DVector<f64>,
) -> DVector<f64> {
    let x_pred = a * x_hat;
    &x_pred + k * (y - c * &x_pred)
}

/// One step of the fixed-gain error-covariance recursion
/// `(I - K C)(A P A' + Q)(I - K C)' + K R K'`.
pub fn error_cov_step(p_prev: &DMatrix<f64>, k: &DMatrix<f64>, model: &SystemModel) -> DMatrix<f64> {
    let q = model.dims.q;
    let ik = DMatrix::<f64>::identity(q, q) - k * &model.c;
    let pred = &model.a * p_prev * model.a.transpose() + &model.q_cov;
    symmetrize(&(&ik * pred * ik.transpose() + k * &model.r_cov * k.transpose()))
}

/// Fixed point `P(K)` of [`error_cov_step`]: the limiting error covariance
/// of the constant-gain filter. Errors out if the recursion fails to settle
/// (an unstable gain) within `max_iter` steps.
pub fn limiting_cov(
    k: &DMatrix<f64>,
    model: &SystemModel,
    tol: f64,
    max_iter: usize,
) -> Result<DMatrix<f64>> {
    let mut p = DMatrix::zeros(model.dims.q, model.dims.q);
    for _ in 0..max_iter {
        let next = error_cov_step(&p, k, model);
        let diff = (&next - &p).abs().max();
        if !diff.is_finite() || next.trace() > 1e15 {
            return Err(Error::Computation(
                "fixed-gain covariance recursion diverged (unstable gain)".into(),
            ));
        }
        p = next;
        if diff < tol {
            return Ok(p);
        }
    }
    Err(Error::Computation(format!(
        "fixed-gain covariance recursion did not converge within {max_iter} iterations"
    )))
}

/// A gain with an optional sensor-subset restriction; restricted gains have
/// exactly-zero columns outside the subset's observation rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    entries: DMatrix<f64>,
    subset: Option<SensorSubset>,
}

impl GainMatrix {
    pub fn unrestricted(entries: DMatrix<f64>) -> Self {
        GainMatrix {
            entries,
            subset: None,
        }
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn subset(&self) -> Option<&SensorSubset> {
        self.subset.as_ref()
    }
}

/// Restricts `k` to `subset` by zeroing every column owned by an excluded
/// sensor (`k_per` columns per sensor). Columns inside the subset are copied
/// bit-for-bit.
pub fn restrict_gain(k: &DMatrix<f64>, subset: &SensorSubset, k_per: usize) -> GainMatrix {
    let mut entries = DMatrix::zeros(k.nrows(), k.ncols());
    for col in subset.rows(k_per) {
        if col < k.ncols() {
            entries.set_column(col, &k.column(col));
        }
    }
    GainMatrix {
        entries,
        subset: Some(subset.clone()),
    }
}

/// `rho(I - K C)`, the quantity the adaptive estimator keeps below `1 - delta`.
pub fn closed_loop_radius(k: &DMatrix<f64>, c: &DMatrix<f64>) -> Result<f64> {
    let q = k.nrows();
    let ik = DMatrix::<f64>::identity(q, q) - k * c;
    spectral_radius(&ik)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::process_model::{generate_random_system, ModelDims};
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// 1-D model with a single k=1 sensor (n0 = 0: no attack budget needed).
    fn scalar_model(a: f64, q: f64, c: f64, r: f64) -> SystemModel {
        SystemModel::new(
            ModelDims {
                q: 1,
                n_sensors: 1,
                k: 1,
                n0: 0,
            },
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, q),
            DMatrix::from_element(1, 1, c),
            DMatrix::from_element(1, 1, r),
        )
        .unwrap()
    }

    #[test]
    fn kf_step_scalar_hand_values() {
        // A=0, C=1, Q=1, R=1, P_prev=1: P_pred = 1, K = 1/2, P_next = 1/2.
        let model = scalar_model(0.0, 1.0, 1.0, 1.0);
        let state = FilterState {
            x_hat: DVector::from_element(1, 0.3),
            p: DMatrix::from_element(1, 1, 1.0),
        };
        let y = DVector::from_element(1, 2.0);
        let (next, z) = kf_step(&state, &model, &y).unwrap();
        assert_abs_diff_eq!(z[0], 2.0, epsilon = 1e-15); // prediction is 0
        assert_abs_diff_eq!(next.p[(0, 0)], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(next.x_hat[0], 1.0, epsilon = 1e-12);
    }

    /// Hand-rolled scalar Kalman filter used as an independent oracle.
    fn scalar_filter(
        a: f64,
        q: f64,
        c: f64,
        r: f64,
        ys: &[f64],
        mut x: f64,
        mut p: f64,
    ) -> (f64, f64) {
        for &y in ys {
            let xp = a * x;
            let pp = a * p * a + q;
            let s = c * pp * c + r;
            let k = pp * c / s;
            x = xp + k * (y - c * xp);
            p = (1.0 - k * c) * pp * (1.0 - k * c) + k * r * k;
        }
        (x, p)
    }

    #[test]
    fn kf_step_matches_scalar_oracle_over_a_run() {
        let model = scalar_model(0.5, 0.3, 1.2, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let ys: Vec<f64> = (0..200).map(|_| rng.random_range(-2.0..2.0)).collect();
        let mut state = FilterState::zeroed(1);
        for &y in &ys {
            let (next, _) = kf_step(&state, &model, &DVector::from_element(1, y)).unwrap();
            state = next;
        }
        let (x_ref, p_ref) = scalar_filter(0.5, 0.3, 1.2, 0.4, &ys, 0.0, 0.0);
        assert_abs_diff_eq!(state.x_hat[0], x_ref, epsilon = 1e-12);
        assert_abs_diff_eq!(state.p[(0, 0)], p_ref, epsilon = 1e-12);
    }

    #[test]
    fn riccati_scalar_matches_quadratic_formula() {
        // For A=0.5, C=1, Q=1, R=1 the prediction fixed point solves
        // p^2 - 0.25 p - 1 = 0, i.e. p = (0.25 + sqrt(0.0625 + 4)) / 2.
        let p_bar = (0.25 + 4.0625f64.sqrt()) / 2.0;
        let k_ss = p_bar / (p_bar + 1.0);
        let model = scalar_model(0.5, 1.0, 1.0, 1.0);
        let ss = riccati_fixed_point(&model, 1e-13, 100_000).unwrap();
        assert_abs_diff_eq!(ss.p_pred[(0, 0)], p_bar, epsilon = 1e-10);
        assert_abs_diff_eq!(ss.k_ss[(0, 0)], k_ss, epsilon = 1e-10);
        assert_abs_diff_eq!(ss.sigma_z[(0, 0)], p_bar + 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(ss.p_filt[(0, 0)], (1.0 - k_ss) * p_bar, epsilon = 1e-10);
    }

    #[test]
    fn riccati_fixed_point_is_invariant_under_kf_step() {
        let model = generate_random_system(
            ModelDims {
                q: 2,
                n_sensors: 5,
                k: 2,
                n0: 2,
            },
            13,
        )
        .unwrap();
        let ss = riccati_fixed_point(&model, 1e-13, 100_000).unwrap();
        // Feed the steady filtered covariance through one optimal step: it
        // must map to itself.
        let state = FilterState::new(2, ss.p_filt.clone());
        let y = DVector::zeros(10);
        let (next, _) = kf_step(&state, &model, &y).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(next.p[(i, j)], ss.p_filt[(i, j)], epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn error_cov_step_scalar_hand_value() {
        // A=0.5, C=1, Q=1, R=1, K=0.5, P_prev=1:
        // (0.5)(0.25 + 1)(0.5) + 0.25 = 0.5625.
        let model = scalar_model(0.5, 1.0, 1.0, 1.0);
        let k = DMatrix::from_element(1, 1, 0.5);
        let p = error_cov_step(&DMatrix::from_element(1, 1, 1.0), &k, &model);
        assert_abs_diff_eq!(p[(0, 0)], 0.5625, epsilon = 1e-15);
    }

    #[test]
    fn limiting_cov_scalar_fixed_point() {
        // p = 0.25(0.25 p + 1) + 0.25  =>  p = 0.5 / (1 - 0.0625).
        let model = scalar_model(0.5, 1.0, 1.0, 1.0);
        let k = DMatrix::from_element(1, 1, 0.5);
        let p = limiting_cov(&k, &model, 1e-13, 100_000).unwrap();
        assert_abs_diff_eq!(p[(0, 0)], 0.5 / (1.0 - 0.0625), epsilon = 1e-10);
    }

    #[test]
    fn limiting_cov_of_optimal_gain_is_steady_filtered_cov() {
        let model = generate_random_system(
            ModelDims {
                q: 2,
                n_sensors: 5,
                k: 2,
                n0: 2,
            },
            21,
        )
        .unwrap();
        let ss = riccati_fixed_point(&model, 1e-13, 100_000).unwrap();
        let p = limiting_cov(&ss.k_ss, &model, 1e-13, 200_000).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(p[(i, j)], ss.p_filt[(i, j)], epsilon = 1e-8);
            }
        }
        // And no constant gain beats it: nudge the gain and the trace grows.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let mut k = ss.k_ss.clone();
            for e in k.iter_mut() {
                *e += rng.random_range(-0.05..0.05);
            }
            if let Ok(p_other) = limiting_cov(&k, &model, 1e-12, 200_000) {
                assert!(p_other.trace() >= p.trace() - 1e-10);
            }
        }
    }

    #[test]
    fn limiting_cov_rejects_unstable_gain() {
        // A strongly negative gain makes (I - KC) A expansive.
        let model = scalar_model(0.9, 1.0, 1.0, 1.0);
        let k = DMatrix::from_element(1, 1, -2.0);
        assert!(limiting_cov(&k, &model, 1e-12, 10_000).is_err());
    }

    #[test]
    fn restrict_gain_zeroes_excluded_columns_only() {
        let k = DMatrix::from_fn(2, 6, |i, j| (i * 6 + j) as f64 + 1.0);
        let sub = SensorSubset::new(vec![0, 2], 3).unwrap();
        let g = restrict_gain(&k, &sub, 2);
        for j in [0usize, 1, 4, 5] {
            assert_eq!(g.entries().column(j), k.column(j));
        }
        for j in [2usize, 3] {
            assert!(g.entries().column(j).iter().all(|&x| x == 0.0));
        }
        let full = restrict_gain(&k, &SensorSubset::full(3), 2);
        assert_eq!(full.entries(), &k);
        let empty = restrict_gain(&k, &SensorSubset::empty(), 2);
        assert!(empty.entries().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn closed_loop_radius_scalar() {
        let k = DMatrix::from_element(1, 1, 0.4);
        let c = DMatrix::from_element(1, 1, 1.0);
        assert_abs_diff_eq!(closed_loop_radius(&k, &c).unwrap(), 0.6, epsilon = 1e-12);
    }
}
