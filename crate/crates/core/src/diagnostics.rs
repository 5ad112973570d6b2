//! Runtime diagnostics for the stiffness adaptation loop.
//!
//! Each accepted regression step `k` is split along the singular directions of
//! `Φ_k` into two scalar substeps `n = 2k-1, 2k`. The substep recursion
//!
//! ```text
//! f_n⁻¹ = α_n f_{n-1}⁻¹ + β_n φ_n φ_nᵀ
//! θ̃*_n  = θ̃*_{n-1} + f_n φ_n (ỹ_n − β_n φ_nᵀ θ̃*_{n-1})
//! ```
//!
//! with `α = (λ, 1)` and `β = (μ_1, μ_2)` reproduces the one-shot recursive
//! update exactly, and exposes the scaled prediction errors, the dissipation
//! rate `η_n` and the running input/output product sum of the nonlinear block.
//!
//! The recorder keeps its own copy of the substep estimate. Running it next to
//! the estimator is how the two formulations are cross-checked.

use nalgebra::{Matrix2, Vector2};

use crate::adaptation::RegressionSample;
use crate::error::{Error, Result};

/// Relative threshold below which the smaller singular value counts as zero.
const RANK_TOL: f64 = 1e-12;

/// Singular-value decomposition of `Φ_k` arranged for the substep recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvdSplit {
    /// `σ_1 >= σ_2 > 0`.
    pub sigma: [f64; 2],
    /// Left singular vectors.
    pub u: [Vector2<f64>; 2],
    /// Right singular vectors, used to project the 2-vector output.
    pub v: [Vector2<f64>; 2],
    /// `φ_j = σ_j u_j`.
    pub phi: [Vector2<f64>; 2],
    /// `μ_j = (σ_j² + δ(1-λ)) / σ_j²`.
    pub mu: [f64; 2],
}

/// Splits `phi` (that is `Φ`, not `Φᵀ`).
pub fn svd_split(phi: &Matrix2<f64>, lambda: f64, delta: f64) -> Result<SvdSplit> {
    let svd = phi.svd(true, true);
    let u_mat = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let mut idx = [0usize, 1];
    if svd.singular_values[1] > svd.singular_values[0] {
        idx.swap(0, 1);
    }
    let sigma = [svd.singular_values[idx[0]], svd.singular_values[idx[1]]];
    if !(sigma[1] > RANK_TOL * sigma[0]) || sigma[1] == 0.0 || !sigma[0].is_finite() {
        return Err(Error::RankDeficient(sigma[1]));
    }
    let u = [u_mat.column(idx[0]).into_owned(), u_mat.column(idx[1]).into_owned()];
    let v = [v_t.row(idx[0]).transpose(), v_t.row(idx[1]).transpose()];
    let reg = delta * (1.0 - lambda);
    Ok(SvdSplit {
        sigma,
        u,
        v,
        phi: [u[0] * sigma[0], u[1] * sigma[1]],
        mu: [(sigma[0].powi(2) + reg) / sigma[0].powi(2), (sigma[1].powi(2) + reg) / sigma[1].powi(2)],
    })
}

fn rank_one_update(f: &Matrix2<f64>, phi: &Vector2<f64>, alpha: f64, beta: f64) -> Matrix2<f64> {
    let f_phi = f * phi;
    let den = alpha / beta + phi.dot(&f_phi);
    (f - f_phi * f_phi.transpose() / den) / alpha
}

fn check_spd(f: &Matrix2<f64>) -> Result<()> {
    let asym = (f - f.transpose()).amax();
    if asym > 1e-9 * f.amax().max(f64::MIN_POSITIVE) {
        return Err(Error::NotPositiveDefinite("gain matrix is not symmetric"));
    }
    if f.cholesky().is_none() {
        return Err(Error::NotPositiveDefinite("gain matrix"));
    }
    Ok(())
}

/// Applies the `φ_1` update (with forgetting) then the `φ_2` update to the
/// adaptation gain. Returns `(f_mid, f_new)`.
pub fn gain_split_update(f_prev: &Matrix2<f64>, split: &SvdSplit, lambda: f64) -> Result<(Matrix2<f64>, Matrix2<f64>)> {
    check_spd(f_prev)?;
    let f_mid = rank_one_update(f_prev, &split.phi[0], lambda, split.mu[0]);
    let f_new = rank_one_update(&f_mid, &split.phi[1], 1.0, split.mu[1]);
    Ok((f_mid, f_new))
}

/// `η_n = (2 - α_{n+1})/β_n - 1/β_{n-1}` and whether it is non-negative.
pub fn eta_condition(beta_prev: f64, beta_now: f64, alpha_next: f64) -> (f64, bool) {
    let eta = (2.0 - alpha_next) / beta_now - 1.0 / beta_prev;
    (eta, eta >= 0.0)
}

/// `σ_1²σ_2² + δ(2-λ)σ_2² - δσ_1²` and whether it is non-negative.
pub fn eta_sufficient_condition(sigma1: f64, sigma2: f64, lambda: f64, delta: f64) -> (f64, bool) {
    let (s1, s2) = (sigma1 * sigma1, sigma2 * sigma2);
    let value = s1 * s2 + delta * (2.0 - lambda) * s2 - delta * s1;
    (value, value >= 0.0)
}

/// Starting value for the regularization weight, `1 / (1/σ_2² - 1/σ_1²)`.
pub fn delta_heuristic(sigma1: f64, sigma2: f64) -> Result<f64> {
    let den = 1.0 / (sigma2 * sigma2) - 1.0 / (sigma1 * sigma1);
    if den == 0.0 || !den.is_finite() {
        return Err(Error::EqualSingularValues);
    }
    Ok(1.0 / den)
}

/// Condition number of a symmetric positive definite matrix.
pub fn spd_condition_number(m: &Matrix2<f64>) -> f64 {
    let eig = m.symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        hi / lo
    }
}

/// One scalar substep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubstepRecord {
    pub n: usize,
    /// Frame index of the regression step this substep belongs to.
    pub frame: usize,
    pub alpha: f64,
    pub beta: f64,
    pub phi: Vector2<f64>,
    /// Gain after this substep, `f_n`.
    pub f: Matrix2<f64>,
    /// `κ(f_{n-1}⁻¹)`.
    pub cond_prev: f64,
    pub y_tilde: f64,
    /// Scaled a-priori error `ε°_n`.
    pub eps_prior: f64,
    /// Scaled a-posteriori error `ε_n`.
    pub eps: f64,
    /// Residual of `ε_n (α_n + β_n φᵀ f_{n-1} φ) = α_n ε°_n`.
    pub eps_relation_residual: f64,
    pub theta_tilde_star: Vector2<f64>,
    /// True deviation `θ̃_n`, when known.
    pub theta_tilde_true: Option<Vector2<f64>>,
    /// `β_n θ̃*_n - θ̃_n`, when the truth is known.
    pub delta_theta: Option<Vector2<f64>>,
    pub eta: f64,
    pub w: f64,
    pub s: f64,
    /// `Σ_{m<=n} w_m s_m`.
    pub popov: f64,
}

/// Per-regression-step quantities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub frame: usize,
    pub sigma: [f64; 2],
    pub mu: [f64; 2],
    pub eta_cond_value: f64,
    pub eta_cond_ok: bool,
    /// `κ(f⁻¹)` at the start of the step.
    pub cond_gain: f64,
}

#[derive(Debug, Clone)]
pub struct DiagnosticsTrace {
    pub lambda: f64,
    pub delta: f64,
    pub substeps: Vec<SubstepRecord>,
    pub steps: Vec<StepRecord>,
    /// Frames whose regression matrix was rank deficient and were skipped.
    pub skipped: Vec<usize>,
    f: Matrix2<f64>,
    theta_tilde_star: Vector2<f64>,
    beta_prev: f64,
    theta_true_prev: Vector2<f64>,
    initial_true: Option<Vector2<f64>>,
    popov: f64,
}

impl DiagnosticsTrace {
    /// Starts from `R_0 = 0` (`f_0 = I/δ`), `θ̃*_0 = 0`, `β_0 = 1`.
    pub fn new(lambda: f64, delta: f64) -> Self {
        Self {
            lambda,
            delta,
            substeps: Vec::new(),
            steps: Vec::new(),
            skipped: Vec::new(),
            f: Matrix2::identity() / delta,
            theta_tilde_star: Vector2::zeros(),
            beta_prev: 1.0,
            theta_true_prev: Vector2::zeros(),
            initial_true: None,
            popov: 0.0,
        }
    }

    pub fn gain(&self) -> Matrix2<f64> {
        self.f
    }

    /// Substep estimate of the stiffness deviation.
    pub fn theta_tilde_star(&self) -> Vector2<f64> {
        self.theta_tilde_star
    }

    pub fn popov_total(&self) -> f64 {
        self.popov
    }

    /// Lower bound `-(α_1 / 2β_0) Δθ̃_0ᵀ f_0⁻¹ Δθ̃_0` of the product sum.
    ///
    /// `Δθ̃_0 = -θ̃_0`, where `θ̃_0` is the first supplied true deviation (zero
    /// when no truth is supplied).
    pub fn popov_lower_bound(&self) -> f64 {
        let d0 = -self.initial_true.unwrap_or_else(Vector2::zeros);
        let f0_inv = Matrix2::identity() * self.delta;
        -(self.lambda / 2.0) * d0.dot(&(f0_inv * d0))
    }

    /// Processes one accepted regression step.
    ///
    /// `theta_tilde_true` is the true stiffness deviation from nominal, known
    /// only in simulation. A rank-deficient `Φ` is recorded in `skipped` and
    /// leaves the recursion untouched.
    pub fn record_step(
        &mut self,
        frame: usize,
        sample: &RegressionSample,
        theta_plus: &Vector2<f64>,
        theta_tilde_true: Option<Vector2<f64>>,
    ) -> Result<()> {
        let split = match svd_split(&sample.phi(), self.lambda, self.delta) {
            Ok(s) => s,
            Err(Error::RankDeficient(_)) => {
                self.skipped.push(frame);
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        if self.initial_true.is_none() {
            if let Some(t) = theta_tilde_true {
                self.initial_true = Some(t);
                self.theta_true_prev = t;
            }
        }
        let (eta_cond_value, eta_cond_ok) = eta_sufficient_condition(split.sigma[0], split.sigma[1], self.lambda, self.delta);
        self.steps.push(StepRecord {
            frame,
            sigma: split.sigma,
            mu: split.mu,
            eta_cond_value,
            eta_cond_ok,
            cond_gain: spd_condition_number(&self.f),
        });

        let y_tilde = sample.y_tilde(theta_plus);
        for j in 0..2 {
            let n = self.substeps.len() + 1;
            let (alpha, alpha_next) = if j == 0 { (self.lambda, 1.0) } else { (1.0, self.lambda) };
            let beta = split.mu[j];
            let phi = split.phi[j];
            let y = split.v[j].dot(&y_tilde);
            let f_prev = self.f;
            let f = rank_one_update(&f_prev, &phi, alpha, beta);

            let eps_prior = y - beta * phi.dot(&self.theta_tilde_star);
            let theta = self.theta_tilde_star + f * phi * eps_prior;
            let eps = y - beta * phi.dot(&theta);
            let scale = alpha + beta * phi.dot(&(f_prev * phi));
            let eps_relation_residual = eps * scale - alpha * eps_prior;

            let delta_theta = theta_tilde_true.map(|t| theta * beta - t);
            let w = match delta_theta {
                Some(d) => d.dot(&phi),
                None => -eps,
            };
            let s = eps + alpha_next / 2.0 * w;
            self.popov += w * s;
            let (eta, _) = eta_condition(self.beta_prev, beta, alpha_next);

            self.substeps.push(SubstepRecord {
                n,
                frame,
                alpha,
                beta,
                phi,
                f,
                cond_prev: spd_condition_number(&f_prev),
                y_tilde: y,
                eps_prior,
                eps,
                eps_relation_residual,
                theta_tilde_star: theta,
                theta_tilde_true,
                delta_theta,
                eta,
                w,
                s,
                popov: self.popov,
            });
            self.f = f;
            self.theta_tilde_star = theta;
            self.beta_prev = beta;
        }
        if let Some(t) = theta_tilde_true {
            self.theta_true_prev = t;
        }
        Ok(())
    }

    /// Running product sum through substep `up_to` (1-based; 0 gives 0).
    pub fn popov_sum(&self, up_to: usize) -> f64 {
        if up_to == 0 {
            return 0.0;
        }
        self.substeps[..up_to.min(self.substeps.len())]
            .iter()
            .map(|r| r.w * r.s)
            .sum()
    }

    pub fn eta_all_nonnegative(&self) -> bool {
        self.substeps.iter().all(|r| r.eta >= 0.0)
    }

    /// Radius `2κ(f_{n-1}⁻¹)/η_n · ‖θ̃_n/β_n - θ̃_{n-1}/β_{n-1}‖` of the
    /// region outside which the scaled parameter error dissipates.
    ///
    /// Requires a true-parameter trace; `θ̃_0 = 0` and `β_0 = 1`.
    pub fn theta_error_bound(&self, n: usize) -> Result<f64> {
        let rec = self
            .substeps
            .get(n.checked_sub(1).ok_or_else(|| Error::Config("substeps are 1-based".into()))?)
            .ok_or_else(|| Error::Config(format!("substep {n} not recorded")))?;
        let theta_n = rec
            .theta_tilde_true
            .ok_or_else(|| Error::Config("error bound needs a true-parameter trace".into()))?;
        let (theta_prev, beta_prev) = if n == 1 {
            (Vector2::zeros(), 1.0)
        } else {
            let p = &self.substeps[n - 2];
            (p.theta_tilde_true.unwrap_or_else(Vector2::zeros), p.beta)
        };
        theta_error_bound(rec.cond_prev, rec.eta, &(theta_n / rec.beta - theta_prev / beta_prev))
    }
}

/// `2κ/η · ‖rate‖`; undefined for `η <= 0`.
pub fn theta_error_bound(cond: f64, eta: f64, scaled_rate: &Vector2<f64>) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::EtaNotPositive(eta));
    }
    Ok(2.0 * cond / eta * scaled_rate.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const LAMBDA: f64 = 0.975;
    const DELTA: f64 = 0.02;

    #[test]
    fn identity_split() {
        let s = svd_split(&Matrix2::identity(), LAMBDA, DELTA).unwrap();
        assert_relative_eq!(s.sigma[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(s.sigma[1], 1.0, epsilon = 1e-15);
        let mu = 1.0 + DELTA * (1.0 - LAMBDA);
        assert_relative_eq!(s.mu[0], mu, epsilon = 1e-15);
        assert_relative_eq!(s.mu[1], mu, epsilon = 1e-15);
    }

    #[test]
    fn diagonal_split_scale_factors() {
        let s = svd_split(&Matrix2::new(2.0, 0.0, 0.0, 1.0), LAMBDA, DELTA).unwrap();
        assert_eq!(s.sigma, [2.0, 1.0]);
        assert_relative_eq!(s.mu[0], 1.000125, epsilon = 1e-12);
        assert_relative_eq!(s.mu[1], 1.0005, epsilon = 1e-12);
        // ordering holds even when the larger value sits second
        let s = svd_split(&Matrix2::new(0.5, 0.0, 0.0, 3.0), LAMBDA, DELTA).unwrap();
        assert_eq!(s.sigma, [3.0, 0.5]);
    }

    #[test]
    fn split_reconstructs_gram_matrix() {
        let phi = Matrix2::new(0.31, -0.12, 0.07, 0.44);
        let s = svd_split(&phi, LAMBDA, DELTA).unwrap();
        let gram = s.phi[0] * s.phi[0].transpose() + s.phi[1] * s.phi[1].transpose();
        assert_relative_eq!(gram, phi * phi.transpose(), epsilon = 1e-12);
        assert!(s.mu.iter().all(|&m| m >= 1.0));
    }

    #[test]
    fn singular_phi_rejected() {
        assert!(matches!(
            svd_split(&Matrix2::new(1.0, 2.0, 2.0, 4.0), LAMBDA, DELTA),
            Err(Error::RankDeficient(_))
        ));
        assert!(svd_split(&Matrix2::zeros(), LAMBDA, DELTA).is_err());
    }

    #[test]
    fn gain_split_matches_direct_inverse() {
        let f_prev = Matrix2::new(3.0, 0.4, 0.4, 1.5);
        let phi = Matrix2::new(0.21, -0.13, 0.05, 0.3);
        let s = svd_split(&phi, LAMBDA, DELTA).unwrap();
        let (_, f_new) = gain_split_update(&f_prev, &s, LAMBDA).unwrap();
        let direct = (f_prev.try_inverse().unwrap() * LAMBDA
            + Matrix2::identity() * (DELTA * (1.0 - LAMBDA))
            + phi * phi.transpose())
        .try_inverse()
        .unwrap();
        assert_relative_eq!(f_new, direct, max_relative = 1e-9);
    }

    #[test]
    fn gain_split_degenerate_cases() {
        let f_prev = Matrix2::new(2.0, 0.3, 0.3, 1.0);
        let mut s = svd_split(&Matrix2::new(1.0, 0.0, 0.0, 0.5), LAMBDA, DELTA).unwrap();
        s.phi[1] = Vector2::zeros();
        let (f_mid, f_new) = gain_split_update(&f_prev, &s, LAMBDA).unwrap();
        assert_eq!(f_mid, f_new);

        let zero = SvdSplit {
            sigma: [0.0, 0.0],
            u: [Vector2::x(), Vector2::y()],
            v: [Vector2::x(), Vector2::y()],
            phi: [Vector2::zeros(), Vector2::zeros()],
            mu: [1.0, 1.0],
        };
        let (_, f_new) = gain_split_update(&f_prev, &zero, 1.0).unwrap();
        assert_eq!(f_new, f_prev);
        assert!(gain_split_update(&Matrix2::new(1.0, 0.0, 0.0, -1.0), &zero, 1.0).is_err());
    }

    #[test]
    fn eta_examples() {
        let (eta, ok) = eta_condition(1.0, 1.0, LAMBDA);
        assert_relative_eq!(eta, 0.025, epsilon = 1e-15);
        assert!(ok);
        for mu in [1.0, 1.3, 7.0] {
            let (eta, ok) = eta_condition(mu, mu, 1.0);
            assert_eq!(eta, 0.0);
            assert!(ok);
        }
        assert_eq!(eta_condition(1.0, 2.0, 1.0), (-0.5, false));
    }

    #[test]
    fn eta_sufficient_condition_examples() {
        for sigma in [0.01, 0.3, 2.0] {
            let (v, ok) = eta_sufficient_condition(sigma, sigma, LAMBDA, DELTA);
            let s2 = sigma * sigma;
            assert_relative_eq!(v, s2 * s2 + DELTA * (1.0 - LAMBDA) * s2, max_relative = 1e-12);
            assert!(ok && v > 0.0);
        }
        let (v, ok) = eta_sufficient_condition(1.0, 0.1, LAMBDA, DELTA);
        assert!((v - (-0.009795)).abs() <= 1e-9);
        assert!(!ok);
    }

    #[test]
    fn delta_heuristic_examples() {
        assert_relative_eq!(delta_heuristic(2.0, 1.0).unwrap(), 4.0 / 3.0, epsilon = 1e-15);
        assert!(matches!(delta_heuristic(1.0, 1.0), Err(Error::EqualSingularValues)));
        assert!(delta_heuristic(1.0, 1.0 - 1e-9).unwrap() > 1e7);
    }

    #[test]
    fn delta_heuristic_sits_on_the_lambda_one_boundary() {
        // With δ from the heuristic, 2 - λ >= σ_1²(1/σ_2² - 1/δ) holds with
        // equality at λ = 1, i.e. the condition value is zero there.
        for (s1, s2) in [(2.0, 1.0), (0.4, 0.05), (1.0, 0.9)] {
            let d = delta_heuristic(s1, s2).unwrap();
            let (v, _) = eta_sufficient_condition(s1, s2, 1.0, d);
            assert!(v.abs() <= 1e-12 * (s1 * s1 * s2 * s2).max(d * s1 * s1), "{v}");
        }
    }

    #[test]
    fn error_bound_examples() {
        assert_eq!(theta_error_bound(3.0, 0.1, &Vector2::zeros()).unwrap(), 0.0);
        let rate = Vector2::new(3.0, 4.0);
        assert_relative_eq!(theta_error_bound(1.0, 0.025, &rate).unwrap(), 2.0 * 5.0 / 0.025);
        let b1 = theta_error_bound(1.0, 0.1, &rate).unwrap();
        let b2 = theta_error_bound(4.0, 0.1, &rate).unwrap();
        assert!(b2 > b1);
        assert!(matches!(theta_error_bound(1.0, 0.0, &rate), Err(Error::EtaNotPositive(_))));
        assert!(theta_error_bound(1.0, -0.2, &rate).is_err());
    }

    #[test]
    fn empty_trace_sums_to_zero() {
        let t = DiagnosticsTrace::new(LAMBDA, DELTA);
        assert_eq!(t.popov_sum(0), 0.0);
        assert_eq!(t.popov_total(), 0.0);
        assert_eq!(t.popov_lower_bound(), 0.0);
    }
}
