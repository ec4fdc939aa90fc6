//! Exponential barrier `h(y) = exp(-k |y - z|^2)` around the centre `z` of an
//! exterior ball, and the sign of its drift lower bound.
//!
//! For `y` with `r <= |y - z| <= R + r` and increments satisfying the
//! nondegeneracy and controllability clauses,
//!
//! `<Dh, ΔA> + 1/2 <D²h, Δ<M>> >= k h tr(Δ<M>) / ε * coefficient`
//!
//! with `coefficient = (2 λ k r^2 - 1) ε - 2 (R + r)`, which turns positive
//! for `k > k* = (2 (R + r) / ε + 1) / (2 λ r^2)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::path_engine::euclidean;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierParams {
    pub center: Vec<f64>,
    pub r: f64,
    pub big_r: f64,
    pub k: f64,
    pub lambda: f64,
    pub epsilon: f64,
}

impl BarrierParams {
    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be > 0, got {v}")))
            }
        };
        pos("r", self.r)?;
        pos("big_r", self.big_r)?;
        pos("k", self.k)?;
        pos("lambda", self.lambda)?;
        pos("epsilon", self.epsilon)?;
        if self.big_r < 2.0 * self.r {
            return Err(Error::InvalidArgument(format!(
                "big_r = {} must be at least 2 r = {}",
                self.big_r,
                2.0 * self.r
            )));
        }
        if self.center.is_empty() || self.center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument("center must be a finite nonempty vector".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn value(&self, y: &[f64]) -> f64 {
        (-self.k * sq_dist(y, &self.center)).exp()
    }

    /// `Dh = -2k (y - z) h`.
    pub fn gradient(&self, y: &[f64]) -> Vec<f64> {
        let h = self.value(y);
        y.iter().zip(&self.center).map(|(a, b)| -2.0 * self.k * (a - b) * h).collect()
    }

    /// `D²h = (4k² (y - z)(y - z)^T - 2k I) h`, row-major.
    pub fn hessian(&self, y: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let h = self.value(y);
        let k = self.k;
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let vi = y[i] - self.center[i];
                let vj = y[j] - self.center[j];
                out[i * d + j] = (4.0 * k * k * vi * vj - if i == j { 2.0 * k } else { 0.0 }) * h;
            }
        }
        out
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let e = euclidean(a, b);
    e * e
}

/// `(2 λ k r^2 - 1) ε - 2 (R + r)`.
pub fn barrier_coefficient(p: &BarrierParams) -> Result<f64> {
    p.validate()?;
    Ok((2.0 * p.lambda * p.k * p.r * p.r - 1.0) * p.epsilon - 2.0 * (p.big_r + p.r))
}

/// Zero of the coefficient in `k`.
pub fn barrier_threshold(p: &BarrierParams) -> Result<f64> {
    p.validate()?;
    Ok((2.0 * (p.big_r + p.r) / p.epsilon + 1.0) / (2.0 * p.lambda * p.r * p.r))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DriftCheck {
    /// `<Dh, ΔA> + 1/2 <D²h, Δ<M>>`.
    pub drift: f64,
    /// `k h tr(Δ<M>) / ε * coefficient`.
    pub lower_bound: f64,
}

/// Evaluates the barrier drift for one step's increments at `y`.
pub fn barrier_drift(p: &BarrierParams, y: &[f64], qv: &[f64], fv: &[f64]) -> Result<DriftCheck> {
    let coef = barrier_coefficient(p)?;
    let d = p.dim();
    if y.len() != d || fv.len() != d || qv.len() != d * d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: y.len(),
        });
    }
    let g = p.gradient(y);
    let hess = p.hessian(y);
    let first: f64 = g.iter().zip(fv).map(|(a, b)| a * b).sum();
    let second: f64 = hess.iter().zip(qv).map(|(a, b)| a * b).sum();
    let tr: f64 = (0..d).map(|i| qv[i * d + i]).sum();
    Ok(DriftCheck {
        drift: first + 0.5 * second,
        lower_bound: p.k * p.value(y) * tr / p.epsilon * coef,
    })
}

/// Finite-difference check of the closed-form derivatives at `y`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivativeCheck {
    pub gradient_error: f64,
    pub hessian_error: f64,
    /// Errors are measured against `tolerance * scale`.
    pub scale: f64,
    pub tolerance: f64,
    /// `|tr D²h - (4k²|y - z|² - 2kd) h|`.
    pub trace_identity_error: f64,
}

pub const DERIVATIVE_TOL: f64 = 1e-6;

/// Central differences of `h` for the gradient and of the closed-form
/// gradient for the Hessian, both with step `1e-5`. Errors are relative to
/// the larger of the derivative norms and `k h(y)`, so points far from `z`
/// where everything underflows are not judged on noise.
pub fn barrier_derivative_check(p: &BarrierParams, y: &[f64]) -> Result<DerivativeCheck> {
    p.validate()?;
    let d = p.dim();
    if y.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: y.len(),
        });
    }
    let eta = 1e-5;
    let g = p.gradient(y);
    let hess = p.hessian(y);
    let mut yp = y.to_vec();
    let mut gerr = 0.0f64;
    let mut herr = 0.0f64;
    for i in 0..d {
        yp[i] = y[i] + eta;
        let (fp, gp) = (p.value(&yp), p.gradient(&yp));
        yp[i] = y[i] - eta;
        let (fm, gm) = (p.value(&yp), p.gradient(&yp));
        yp[i] = y[i];
        gerr = gerr.max(((fp - fm) / (2.0 * eta) - g[i]).abs());
        for j in 0..d {
            herr = herr.max(((gp[j] - gm[j]) / (2.0 * eta) - hess[j * d + i]).abs());
        }
    }
    let norm = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let h = p.value(y);
    let scale = norm(&g).max(norm(&hess)).max(p.k * h);
    let r2 = sq_dist(y, &p.center);
    let tr: f64 = (0..d).map(|i| hess[i * d + i]).sum();
    let check = DerivativeCheck {
        gradient_error: gerr,
        hessian_error: herr,
        scale,
        tolerance: DERIVATIVE_TOL,
        trace_identity_error: (tr - (4.0 * p.k * p.k * r2 - 2.0 * p.k * d as f64) * h).abs(),
    };
    if gerr.max(herr) > DERIVATIVE_TOL * scale {
        return Err(Error::Tolerance(format!(
            "barrier derivatives at y = {y:?}: gradient error {gerr:e}, Hessian error {herr:e}, scale {scale:e}"
        )));
    }
    Ok(check)
}
