//! Monte-Carlo estimates of the upper expectation `Ê[X] = sup_P E_P[X]` and
//! the upper capacity `c(A) = sup_P P(A)` over a finite list of laws.
//!
//! The sup runs over simulated laws only, so every estimate is a statistical
//! lower bound of the sup over the whole family and carries that note.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure_family::{Ensemble, LawSimulator, SemimartingaleRecord, Walker};

pub const SURROGATE_NOTE: &str = "finite-control lower bound";

/// Largest tolerated fraction of non-finite functional values per law.
pub const MAX_EXCLUDED_FRACTION: f64 = 1e-3;

/// Functional values of one law, in ascending path index.
#[derive(Debug, Clone)]
pub struct LawSamples {
    pub law_id: usize,
    pub label: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LawStat {
    pub law_id: usize,
    pub label: String,
    pub mean: f64,
    pub std_error: f64,
    pub n: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UEEstimate {
    pub value: f64,
    pub per_law: Vec<LawStat>,
    pub argmax_law: usize,
    pub surrogate_note: &'static str,
}

/// Same shape as [`UEEstimate`]; the means are frequencies in `[0, 1]`.
pub type CapacityEstimate = UEEstimate;

impl UEEstimate {
    /// Standard error of the maximizing law.
    pub fn argmax_se(&self) -> f64 {
        self.law(self.argmax_law).map_or(0.0, |l| l.std_error)
    }

    pub fn law(&self, law_id: usize) -> Option<&LawStat> {
        self.per_law.iter().find(|l| l.law_id == law_id)
    }

    pub fn max_se(&self) -> f64 {
        self.per_law.iter().map(|l| l.std_error).fold(0.0, f64::max)
    }

    pub fn to_report(&self, functional: &str) -> serde_json::Value {
        serde_json::json!({
            "functional": functional,
            "value": self.value,
            "argmax_law": self.argmax_law,
            "per_law": self.per_law,
            "surrogate_note": self.surrogate_note,
        })
    }
}

/// Sequential mean and standard error (sample SD over √n).
pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt())
}

/// Reduces per-law samples to the max-over-laws estimate. Ties go to the
/// lowest law id.
pub fn estimate(samples: &[LawSamples]) -> Result<UEEstimate> {
    if samples.is_empty() {
        return Err(Error::EmptyFamily("no laws supplied".into()));
    }
    let mut per_law = Vec::with_capacity(samples.len());
    for s in samples {
        if s.values.is_empty() {
            return Err(Error::EmptyFamily(format!("law {} has no paths", s.law_id)));
        }
        let finite: Vec<f64> = s.values.iter().copied().filter(|v| v.is_finite()).collect();
        let excluded = s.values.len() - finite.len();
        if excluded as f64 > MAX_EXCLUDED_FRACTION * s.values.len() as f64 || finite.is_empty() {
            return Err(Error::NonFiniteValues {
                law_id: s.law_id,
                excluded,
                total: s.values.len(),
            });
        }
        let (mean, std_error) = mean_and_se(&finite);
        per_law.push(LawStat {
            law_id: s.law_id,
            label: s.label.clone(),
            mean,
            std_error,
            n: finite.len(),
            excluded,
        });
    }
    let best = per_law
        .iter()
        .reduce(|best, l| {
            if l.mean > best.mean || (l.mean == best.mean && l.law_id < best.law_id) {
                l
            } else {
                best
            }
        })
        .expect("nonempty");
    Ok(UEEstimate {
        value: best.mean,
        argmax_law: best.law_id,
        per_law,
        surrogate_note: SURROGATE_NOTE,
    })
}

/// Evaluates `f` on every record of every ensemble (in parallel, index order kept).
pub fn sample_ensembles<F>(f: F, fam: &[Ensemble]) -> Vec<LawSamples>
where
    F: Fn(&SemimartingaleRecord) -> f64 + Sync,
{
    fam.iter()
        .map(|e| LawSamples {
            law_id: e.law_id,
            label: e.label.clone(),
            values: e.records.par_iter().map(&f).collect(),
        })
        .collect()
}

/// Streams `n_paths` paths per law through `f`; simulation failures count as
/// non-finite values.
pub fn sample_simulators<F>(sims: &[LawSimulator], seed: u64, n_paths: usize, f: F) -> Vec<LawSamples>
where
    F: Fn(Walker<'_>) -> f64 + Sync,
{
    sims.iter()
        .map(|s| LawSamples {
            law_id: s.law_id(),
            label: s.label().to_string(),
            values: s.map_paths(seed, n_paths, &f),
        })
        .collect()
}

/// `Ê[f]` over the supplied ensembles.
pub fn upper_expectation<F>(f: F, fam: &[Ensemble]) -> Result<UEEstimate>
where
    F: Fn(&SemimartingaleRecord) -> f64 + Sync,
{
    check_family(fam)?;
    estimate(&sample_ensembles(f, fam))
}

/// `c({pred})` over the supplied ensembles.
pub fn upper_capacity<P>(pred: P, fam: &[Ensemble]) -> Result<CapacityEstimate>
where
    P: Fn(&SemimartingaleRecord) -> bool + Sync,
{
    check_family(fam)?;
    estimate(&sample_ensembles(|r| if pred(r) { 1.0 } else { 0.0 }, fam))
}

fn check_family(fam: &[Ensemble]) -> Result<()> {
    if fam.is_empty() {
        return Err(Error::EmptyFamily("no ensembles supplied".into()));
    }
    if let Some(e) = fam.iter().find(|e| e.records.is_empty()) {
        return Err(Error::EmptyFamily(format!("law {} has no records", e.law_id)));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Decreasing,
    Increasing,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneStep {
    pub value: f64,
    pub std_error: f64,
    pub argmax_law: usize,
    /// Movement against the expected direction relative to the previous term.
    pub defect: f64,
    pub defect_tolerance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonotoneReport {
    pub direction: Direction,
    pub steps: Vec<MonotoneStep>,
    pub limit_value: f64,
    pub limit_std_error: f64,
    /// `|Ê[f_last] - Ê[limit]|`.
    pub limit_gap: f64,
    pub limit_tolerance: f64,
    pub defects_within_tolerance: bool,
    pub limit_within_tolerance: bool,
    /// The downward case needs weak compactness and quasi-continuity; a
    /// finite family can only show consistency with it.
    pub note: &'static str,
}

/// Checks `Ê[f_n] → Ê[limit]` along a pointwise monotone sequence.
///
/// The sequence must be monotone on every sampled path (exactly); otherwise
/// the probe is rejected.
pub fn monotone_convergence_probe<F>(
    direction: Direction,
    fs: &[F],
    limit: &F,
    fam: &[Ensemble],
) -> Result<MonotoneReport>
where
    F: Fn(&SemimartingaleRecord) -> f64 + Sync,
{
    check_family(fam)?;
    if fs.is_empty() {
        return Err(Error::InvalidArgument("empty functional sequence".into()));
    }
    let samples: Vec<Vec<LawSamples>> = fs.iter().map(|f| sample_ensembles(f, fam)).collect();
    let limit_samples = sample_ensembles(limit, fam);

    let ordered = |a: f64, b: f64| match direction {
        Direction::Decreasing => b <= a,
        Direction::Increasing => b >= a,
    };
    for n in 0..samples.len() {
        let next = samples.get(n + 1).unwrap_or(&limit_samples);
        for (law, (cur, nxt)) in samples[n].iter().zip(next).enumerate() {
            if let Some(i) = (0..cur.values.len()).find(|&i| !ordered(cur.values[i], nxt.values[i])) {
                return Err(Error::NotMonotone(format!(
                    "term {n} -> {} breaks monotonicity on law {law}, path {i}",
                    n + 1
                )));
            }
        }
    }

    let estimates = samples.iter().map(|s| estimate(s)).collect::<Result<Vec<_>>>()?;
    let lim = estimate(&limit_samples)?;
    let mut steps = Vec::with_capacity(estimates.len());
    for (n, e) in estimates.iter().enumerate() {
        let (defect, tol) = match n.checked_sub(1).map(|p| &estimates[p]) {
            None => (0.0, 0.0),
            Some(prev) => {
                let d = match direction {
                    Direction::Decreasing => e.value - prev.value,
                    Direction::Increasing => prev.value - e.value,
                };
                (d.max(0.0), 3.0 * (prev.argmax_se() + e.argmax_se()))
            }
        };
        steps.push(MonotoneStep {
            value: e.value,
            std_error: e.argmax_se(),
            argmax_law: e.argmax_law,
            defect,
            defect_tolerance: tol,
        });
    }
    let last = steps.last().expect("nonempty");
    let limit_gap = (last.value - lim.value).abs();
    let limit_tolerance = 3.0 * (last.std_error + lim.argmax_se());
    Ok(MonotoneReport {
        direction,
        defects_within_tolerance: steps.iter().all(|s| s.defect <= s.defect_tolerance),
        limit_within_tolerance: limit_gap <= limit_tolerance,
        limit_value: lim.value,
        limit_std_error: lim.argmax_se(),
        limit_gap,
        limit_tolerance,
        steps,
        note: "consistency evidence only: weak compactness and quasi-continuity are not verified",
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(vals: &[&[f64]]) -> Vec<LawSamples> {
        vals.iter()
            .enumerate()
            .map(|(i, v)| LawSamples {
                law_id: i,
                label: format!("l{i}"),
                values: v.to_vec(),
            })
            .collect()
    }

    #[test]
    fn tie_break_is_lowest_id() {
        let e = estimate(&samples(&[&[1.0, 3.0], &[2.0, 2.0], &[0.0]])).unwrap();
        assert_eq!(e.value, 2.0);
        assert_eq!(e.argmax_law, 0);
        assert_eq!(e.surrogate_note, SURROGATE_NOTE);
    }

    #[test]
    fn empty_family_is_an_error() {
        assert!(matches!(estimate(&[]), Err(Error::EmptyFamily(_))));
        assert!(matches!(estimate(&samples(&[&[]])), Err(Error::EmptyFamily(_))));
    }

    #[test]
    fn non_finite_values() {
        let mut v = vec![1.0; 10_000];
        v[3] = f64::NAN;
        let e = estimate(&samples(&[&v])).unwrap();
        assert_eq!(e.per_law[0].excluded, 1);
        assert_eq!(e.per_law[0].n, 9_999);
        let mut w = vec![1.0; 1_000];
        w[4] = f64::INFINITY;
        w[5] = f64::NAN;
        assert!(matches!(
            estimate(&samples(&[&w])),
            Err(Error::NonFiniteValues { excluded: 2, .. })
        ));
    }

    #[test]
    fn standard_error_matches_formula() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((se - sd / 2.0).abs() < 1e-15);
    }
}
