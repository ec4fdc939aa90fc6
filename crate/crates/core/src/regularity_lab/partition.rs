//! Hat-function partition of unity on `[0, 1]` and the step-process
//! approximation of `s ↦ I_{[0, τ]}(s)`.
//!
//! With `h = 2^-k` and `i = 1..=2^k + 1`,
//! `φ_i(t) = max(0, 1 - |t - (i - 1) h| / h)`, so `φ_i` is supported in
//! `[(i - 2) h, i h]` and vanishes for `t >= i h`. The approximation is
//! `A_k(s) = Σ_i I_{[0, i h]}(s) φ_i(τ)`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::path_engine::TimeGrid;

pub const PARTITION_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PartitionScheme {
    pub level: u32,
}

impl PartitionScheme {
    pub fn new(level: u32) -> Result<Self> {
        if level == 0 || level > 30 {
            return Err(Error::InvalidArgument(format!("level must be in 1..=30, got {level}")));
        }
        Ok(Self { level })
    }

    pub fn h(&self) -> f64 {
        0.5f64.powi(self.level as i32)
    }

    /// `n_k = 2^k + 1`.
    pub fn count(&self) -> usize {
        (1usize << self.level) + 1
    }

    /// `φ_i(t)` for `i` in `1..=count()`.
    pub fn phi(&self, i: usize, t: f64) -> f64 {
        let h = self.h();
        (1.0 - (t - (i as f64 - 1.0) * h).abs() / h).max(0.0)
    }

    /// All `φ_i(t)`, index `i - 1`.
    pub fn phis(&self, t: f64) -> Vec<f64> {
        (1..=self.count()).map(|i| self.phi(i, t)).collect()
    }

    /// Checks bounds, the vanishing property and `Σ φ_i = 1` at `points`
    /// equispaced points of `[0, 1]`.
    pub fn check_invariants(&self, points: usize) -> Result<f64> {
        let h = self.h();
        let mut worst = 0.0f64;
        for p in 0..points.max(2) {
            let t = p as f64 / (points.max(2) - 1) as f64;
            let phis = self.phis(t);
            for (idx, &v) in phis.iter().enumerate() {
                let i = idx + 1;
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Tolerance(format!("φ_{i}({t}) = {v} outside [0, 1]")));
                }
                if t >= i as f64 * h && v != 0.0 {
                    return Err(Error::Tolerance(format!("φ_{i}({t}) = {v} should vanish")));
                }
            }
            let err = (phis.iter().sum::<f64>() - 1.0).abs();
            worst = worst.max(err);
            if err > PARTITION_TOL {
                return Err(Error::Tolerance(format!("partition sum at {t} off by {err:e}")));
            }
        }
        Ok(worst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PartitionReport {
    pub level: u32,
    pub tau: f64,
    /// Largest deviation between the two forms of `A_k` on the grid.
    pub identity_error: f64,
    /// `∫_0^1 |A_k(s) - I_{[0, τ]}(s)| ds`, integrated exactly.
    pub l1_gap: f64,
    /// Left Riemann sum of the same integrand on the grid.
    pub l1_gap_grid: f64,
    pub bound: f64,
    pub within_bound: bool,
}

/// Direct form `Σ_i I_{[0, i h]}(s) φ_i(τ)` over the nonzero terms
/// `(i, φ_i(τ))`.
fn approx_direct(scheme: &PartitionScheme, support: &[(usize, f64)], s: f64) -> f64 {
    let h = scheme.h();
    support.iter().filter(|(i, _)| s <= *i as f64 * h).map(|(_, v)| v).sum()
}

/// Rewritten form `Σ_j I_{((j-1) h, j h]}(s) Σ_{i >= j} φ_i(τ) + I_{0}(s)`.
/// `tails[j - 1] = Σ_{i >= j} φ_i(τ)`.
fn approx_rewritten(scheme: &PartitionScheme, tails: &[f64], s: f64) -> f64 {
    let h = scheme.h();
    let mut out = if s == 0.0 { 1.0 } else { 0.0 };
    // only cells next to ceil(s / h) can contain s
    let c = (s / h).ceil() as usize;
    for j in c.saturating_sub(1).max(1)..=(c + 1).min(tails.len()) {
        let jf = j as f64;
        if (jf - 1.0) * h < s && s <= jf * h {
            out += tails[j - 1];
        }
    }
    out
}

fn tail_sums(phis: &[f64]) -> Vec<f64> {
    let mut tails = vec![0.0; phis.len()];
    let mut acc = 0.0;
    for i in (0..phis.len()).rev() {
        acc += phis[i];
        tails[i] = acc;
    }
    tails
}

pub fn partition_indicator_approx(scheme: &PartitionScheme, tau: f64, grid: &TimeGrid) -> Result<PartitionReport> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidArgument(format!("tau must lie in [0, 1], got {tau}")));
    }
    if grid.horizon() != 1.0 {
        return Err(Error::GridMismatch(format!("grid must cover [0, 1], horizon {}", grid.horizon())));
    }
    let h = scheme.h();
    let phis = scheme.phis(tau);
    let total: f64 = phis.iter().sum();
    if (total - 1.0).abs() > PARTITION_TOL {
        return Err(Error::Tolerance(format!("partition sum at {tau} off by {:e}", total - 1.0)));
    }

    let tails = tail_sums(&phis);
    let support: Vec<(usize, f64)> = phis
        .iter()
        .enumerate()
        .filter(|(_, v)| **v != 0.0)
        .map(|(idx, v)| (idx + 1, *v))
        .collect();
    let mut identity_error = 0.0f64;
    let mut l1_gap_grid = 0.0;
    for i in 0..grid.nodes() {
        let s = grid.time(i);
        let a = approx_direct(scheme, &support, s);
        identity_error = identity_error.max((a - approx_rewritten(scheme, &tails, s)).abs());
        if i < grid.steps() {
            let ind = if s <= tau { 1.0 } else { 0.0 };
            l1_gap_grid += grid.dt() * (a - ind).abs();
        }
    }

    // A_k equals tails[j - 1] on ((j-1)h, jh] and the indicator jumps only
    // at τ, so midpoints of the merged breakpoints give the exact integral.
    let mut breaks: Vec<f64> = (0..=(1usize << scheme.level)).map(|j| j as f64 * h).collect();
    breaks.push(tau);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut l1_gap = 0.0;
    for w in breaks.windows(2) {
        let (a, b) = (w[0], w[1]);
        let mid = 0.5 * (a + b);
        let ind = if mid <= tau { 1.0 } else { 0.0 };
        let j = (mid / h).ceil() as usize;
        l1_gap += (b - a) * (tails[j - 1] - ind).abs();
    }
    let bound = 3.0 * h;
    Ok(PartitionReport {
        level: scheme.level,
        tau,
        identity_error,
        l1_gap,
        l1_gap_grid,
        bound,
        within_bound: l1_gap <= bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 1000).unwrap()
    }

    #[test]
    fn invariants_hold() {
        for k in 1..=8 {
            let s = PartitionScheme::new(k).unwrap();
            assert!(s.check_invariants(2001).unwrap() <= PARTITION_TOL);
        }
        assert!(PartitionScheme::new(0).is_err());
    }

    #[test]
    fn tau_zero_is_supported_near_zero() {
        let s = PartitionScheme::new(5).unwrap();
        let r = partition_indicator_approx(&s, 0.0, &grid()).unwrap();
        assert!(r.l1_gap <= s.h());
        assert!(r.identity_error <= PARTITION_TOL);
    }

    #[test]
    fn tau_one_gap_is_small() {
        let s = PartitionScheme::new(6).unwrap();
        let r = partition_indicator_approx(&s, 1.0, &grid()).unwrap();
        assert!(r.l1_gap <= 2.0 * s.h());
        let phis = s.phis(1.0);
        let j_max = ((1.0 - 2.0 * s.h()) / s.h()).floor() as usize + 1;
        for j in 1..=j_max {
            assert!((phis[j - 1..].iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn riemann_gap_tracks_exact_gap() {
        let s = PartitionScheme::new(4).unwrap();
        let r = partition_indicator_approx(&s, 0.37, &TimeGrid::new(1.0, 1 << 14).unwrap()).unwrap();
        assert!((r.l1_gap - r.l1_gap_grid).abs() < 1e-3);
        assert!(r.within_bound);
    }
}
