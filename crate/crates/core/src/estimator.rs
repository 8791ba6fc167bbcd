//! Per-user ridge estimates and confidence radii.

use crate::error::{Error, Result};
use crate::linalg::{self, SpdAccumulator};

/// Ridge state of one user: `A = I + Σ x xᵀ`, `b = Σ r x`, serve count `m`.
///
/// The estimate `θ̂ = A⁻¹ b` is cached and refreshed on every observation.
#[derive(Debug, Clone)]
pub struct UserRidgeState {
    acc: SpdAccumulator,
    b: Vec<f64>,
    m: u64,
    theta: Vec<f64>,
    log: Option<Vec<(Vec<f64>, f64)>>,
}

impl UserRidgeState {
    pub fn new(dim: usize) -> Result<Self> {
        Ok(Self {
            acc: SpdAccumulator::new(dim)?,
            b: vec![0.0; dim],
            m: 0,
            theta: vec![0.0; dim],
            log: None,
        })
    }

    /// Like [`UserRidgeState::new`] but also retains every observation.
    pub fn with_log(dim: usize) -> Result<Self> {
        let mut s = Self::new(dim)?;
        s.log = Some(Vec::new());
        Ok(s)
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    pub fn acc(&self) -> &SpdAccumulator {
        &self.acc
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    /// Number of observations absorbed so far.
    pub fn m(&self) -> u64 {
        self.m
    }

    /// Retained observations, if logging was enabled.
    pub fn log(&self) -> Option<&[(Vec<f64>, f64)]> {
        self.log.as_deref()
    }

    /// Absorbs one `(x, r)` observation.
    pub fn observe(&mut self, x: &[f64], r: f64) -> Result<()> {
        linalg::check_dim(self.dim(), x.len())?;
        linalg::check_finite(x, "context")?;
        if !r.is_finite() {
            return Err(Error::NonFinite("reward"));
        }
        self.acc.rank_one_update(x)?;
        linalg::axpy(r, x, &mut self.b);
        self.m += 1;
        self.theta = linalg::mat_vec(self.acc.a_inv(), &self.b);
        if let Some(log) = self.log.as_mut() {
            log.push((x.to_vec(), r));
        }
        Ok(())
    }

    /// `θ̂ = A⁻¹ b`.
    pub fn theta_hat(&self) -> &[f64] {
        &self.theta
    }
}

/// `α · √(xᵀ A⁻¹ x)`: the exploration bonus of one user at arm `x`.
pub fn reward_cb(state: &UserRidgeState, x: &[f64], alpha: f64) -> Result<f64> {
    Ok(alpha * state.acc.quad_form(x)?.sqrt())
}

/// Per-user significance level `δ / n`.
pub fn delta_prime(delta: f64, n: usize) -> f64 {
    delta / n as f64
}

/// Which confidence radius `B(m, t)` the clustering module uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RadiusMode {
    /// Self-normalised bound with the `h(m, H)` denominator.
    Theoretical,
    /// `(σ√(2d log t + 2 log(2/δ')) + 1) / (√(1 + m/4) · n^{1/3})`.
    PracticalClustering,
    /// `√((1 + log(1 + m)) / (1 + m))` evaluated at the user's serve count.
    PracticalRegret,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceConfig {
    pub delta: f64,
    /// Number of users; `δ' = δ / n`.
    pub n: usize,
    pub sigma: f64,
    /// Assumed minimal eigenvalue of `E[X Xᵀ]`.
    pub lambda_min: f64,
    pub d: usize,
    pub mode: RadiusMode,
}

impl ConfidenceConfig {
    pub fn new(delta: f64, n: usize, sigma: f64, d: usize, mode: RadiusMode) -> Result<Self> {
        let cfg = Self {
            delta,
            n,
            sigma,
            lambda_min: 0.5,
            d,
            mode,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_lambda_min(mut self, lambda_min: f64) -> Result<Self> {
        self.lambda_min = lambda_min;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::param("delta", format!("{} not in (0, 1)", self.delta)));
        }
        if self.n == 0 {
            return Err(Error::param("n", "must be positive"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::param("sigma", format!("{} must be finite and >= 0", self.sigma)));
        }
        if !(self.lambda_min > 0.0 && self.lambda_min.is_finite()) {
            return Err(Error::param("lambda_min", format!("{} must be > 0", self.lambda_min)));
        }
        if self.d == 0 {
            return Err(Error::InvalidDimension(0));
        }
        Ok(())
    }

    pub fn delta_prime(&self) -> f64 {
        delta_prime(self.delta, self.n)
    }

    /// Radius `B(m, t)` for the configured mode. Non-increasing in `m`.
    pub fn radius(&self, m: u64, t: u64) -> f64 {
        match self.mode {
            RadiusMode::Theoretical => radius_theoretical(self, m, t),
            RadiusMode::PracticalClustering => radius_practical_clustering(self, m, t),
            RadiusMode::PracticalRegret => radius_practical_regret(m as f64),
        }
    }
}

/// `σ √(2d log t + 2 log(2/δ')) + 1`, shared by the theoretical and the
/// practical clustering radius. `t` is clamped to at least 1.
fn radius_numerator(cfg: &ConfidenceConfig, t: u64) -> f64 {
    let t = t.max(1) as f64;
    let dp = cfg.delta_prime();
    let inner = 2.0 * cfg.d as f64 * t.ln() + 2.0 * (2.0 / dp).ln();
    cfg.sigma * inner.max(0.0).sqrt() + 1.0
}

/// `h(m, H) = λm/4 − 8 log((m+3)/H) − 2√(m log((m+3)/H))`, `H = δ'/(2nd)`.
pub fn h_term(cfg: &ConfidenceConfig, m: u64) -> f64 {
    let h_cap = cfg.delta_prime() / (2.0 * cfg.n as f64 * cfg.d as f64);
    let m = m as f64;
    let l = ((m + 3.0) / h_cap).ln();
    cfg.lambda_min * m / 4.0 - 8.0 * l - 2.0 * (m * l).sqrt()
}

/// Theoretical radius with `h` clamped below at zero, so that the bound
/// degrades to its numerator while `h` is still negative.
pub fn radius_theoretical(cfg: &ConfidenceConfig, m: u64, t: u64) -> f64 {
    let h = h_term(cfg, m).max(0.0);
    radius_numerator(cfg, t) / (1.0 + h).sqrt()
}

pub fn radius_practical_clustering(cfg: &ConfidenceConfig, m: u64, t: u64) -> f64 {
    let denom = (1.0 + m as f64 / 4.0).sqrt() * (cfg.n as f64).cbrt();
    radius_numerator(cfg, t) / denom
}

/// `√((1 + log(1 + t)) / (1 + t))`.
pub fn radius_practical_regret(t: f64) -> f64 {
    let t = t.max(0.0);
    ((1.0 + t.ln_1p()) / (1.0 + t)).sqrt()
}
