//! Step-wise check of the nondegeneracy / controllability conditions on a
//! simulated semimartingale ledger.
//!
//! With `Δ<M>` and `ΔA` the increments over one grid step:
//!
//! * (a) `Δ<M> - λ tr(Δ<M>) I` is positive semidefinite;
//! * (b) `tr(Δ<M>) > 0`;
//! * (c) `tr(Δ<M>) >= ε |ΔA|_1`.
//!
//! For one-dimensional rays clause (c) may be replaced by the one-sided
//! forms `Δ<M> >= -ε ΔA` (for `(-inf, a)`) and `Δ<M> >= ε ΔA` (for `(a, inf)`).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain_geometry::DomainSpec;
use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, trace, PSD_TOL};
use crate::measure_family::SemimartingaleRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Clause {
    Nondegenerate,
    PositiveTrace,
    Controllable,
}

/// Which form of the controllability clause is enforced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ControlRule {
    #[default]
    TwoSided,
    /// `Δ<M> >= -ε ΔA`, for `Q = (-inf, a)`.
    LowerRay,
    /// `Δ<M> >= ε ΔA`, for `Q = (a, inf)`.
    UpperRay,
}

impl ControlRule {
    /// The one-sided rule that applies to `q`, if any.
    pub fn for_domain(q: &DomainSpec) -> Self {
        match q {
            DomainSpec::LowerRay { .. } => Self::LowerRay,
            DomainSpec::HalfSpace { normal, .. } if normal.len() == 1 => {
                if normal[0] > 0.0 {
                    Self::LowerRay
                } else {
                    Self::UpperRay
                }
            }
            _ => Self::TwoSided,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionParams {
    pub lambda: f64,
    pub epsilon: f64,
    #[serde(default)]
    pub rule: ControlRule,
}

impl ConditionParams {
    pub fn new(lambda: f64, epsilon: f64) -> Result<Self> {
        let p = Self {
            lambda,
            epsilon,
            rule: ControlRule::TwoSided,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_rule(mut self, rule: ControlRule) -> Self {
        self.rule = rule;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepFailure {
    pub step: usize,
    pub clause: Clause,
    /// Amount by which the clause is violated (positive).
    pub violation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub law_id: usize,
    pub path_index: u64,
    pub steps_checked: usize,
    pub passed: bool,
    /// First failing step; ties at the same step report the earliest clause.
    pub first_failure: Option<StepFailure>,
    /// First failure of each clause separately.
    pub per_clause: Vec<StepFailure>,
}

/// Checks steps `i` with `t_i <= up_to` (at least step 0).
pub fn check_conditions(rec: &SemimartingaleRecord, params: &ConditionParams, up_to: f64) -> Result<ConditionReport> {
    params.validate()?;
    let d = rec.dim();
    if params.rule != ControlRule::TwoSided && d != 1 {
        return Err(Error::InvalidArgument(format!(
            "one-sided controllability needs a scalar process, got dimension {d}"
        )));
    }
    if up_to.is_nan() || up_to < 0.0 {
        return Err(Error::InvalidArgument(format!("up_to must be >= 0, got {up_to}")));
    }
    let grid = rec.path.grid();
    let last = grid.last_node_at_or_before(up_to).min(grid.steps() - 1);
    let mut per: [Option<StepFailure>; 3] = [None; 3];
    let mut shifted = DMatrix::<f64>::zeros(d, d);

    for i in 0..=last {
        let qv = rec.qv_inc(i);
        let fv = rec.fv_inc(i);
        let tr = trace(qv, d);

        if per[0].is_none() {
            for r in 0..d {
                for c in 0..d {
                    shifted[(r, c)] = qv[r * d + c] - if r == c { params.lambda * tr } else { 0.0 };
                }
            }
            let ev = min_eigenvalue(&shifted);
            if ev < -PSD_TOL {
                per[0] = Some(StepFailure {
                    step: i,
                    clause: Clause::Nondegenerate,
                    violation: -ev,
                });
            }
        }
        if per[1].is_none() && tr <= 0.0 {
            per[1] = Some(StepFailure {
                step: i,
                clause: Clause::PositiveTrace,
                violation: -tr,
            });
        }
        if per[2].is_none() {
            let slack = match params.rule {
                ControlRule::TwoSided => tr - params.epsilon * fv.iter().map(|a| a.abs()).sum::<f64>(),
                ControlRule::LowerRay => qv[0] + params.epsilon * fv[0],
                ControlRule::UpperRay => qv[0] - params.epsilon * fv[0],
            };
            // relative slack absorbs rounding in the drift increment
            let scale = tr.abs() + params.epsilon * fv.iter().map(|a| a.abs()).sum::<f64>();
            if slack < -1e-12 * scale {
                per[2] = Some(StepFailure {
                    step: i,
                    clause: Clause::Controllable,
                    violation: -slack,
                });
            }
        }
        if per.iter().all(Option::is_some) {
            break;
        }
    }

    let per_clause: Vec<StepFailure> = per.iter().flatten().copied().collect();
    let first_failure = per_clause.iter().copied().min_by_key(|f| f.step);
    Ok(ConditionReport {
        law_id: rec.law_id,
        path_index: rec.path_index,
        steps_checked: last + 1,
        passed: first_failure.is_none(),
        first_failure,
        per_clause,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure_family::{family_controls, ControlLaw, ControlSet, LawSimulator, ScheduleMode, SdeCoefficients};
    use crate::path_engine::TimeGrid;

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 100).unwrap()
    }

    #[test]
    fn gbm_passes_with_unit_constants() {
        let set = ControlSet::scalar_vols(vec![0.5, 1.0]).unwrap();
        for law in family_controls(&set, &ScheduleMode::ConstantOnly).unwrap() {
            let rec = LawSimulator::brownian(&set, &law, grid(), &[0.0]).unwrap().record(3, 0).unwrap();
            let r = check_conditions(&rec, &ConditionParams::new(1.0, 1.0).unwrap(), 1.0).unwrap();
            assert!(r.passed, "{r:?}");
            assert_eq!(r.steps_checked, 100);
        }
    }

    #[test]
    fn pointmass_fails_positive_trace_at_step_zero() {
        let rec = LawSimulator::frozen(0, "x=0", grid(), &[0.0]).record(0, 0).unwrap();
        let r = check_conditions(&rec, &ConditionParams::new(1.0, 1.0).unwrap(), 1.0).unwrap();
        let f = r.first_failure.unwrap();
        assert_eq!((f.step, f.clause), (0, Clause::PositiveTrace));
    }

    #[test]
    fn anisotropic_fails_nondegeneracy_only() {
        let set = ControlSet::anisotropic(vec![0.5]).unwrap();
        let law = ControlLaw::constant(0, 0, "a");
        let rec = LawSimulator::brownian(&set, &law, grid(), &[0.0, 0.5]).unwrap().record(1, 0).unwrap();
        // min eigenvalue of diag(.5,.5)*dt - 0.6*tr*I is negative
        let r = check_conditions(&rec, &ConditionParams::new(0.6, 1.0).unwrap(), 1.0).unwrap();
        assert_eq!(r.first_failure.unwrap().clause, Clause::Nondegenerate);
        assert!(r.per_clause.iter().all(|f| f.clause == Clause::Nondegenerate));
        let r = check_conditions(&rec, &ConditionParams::new(0.5, 1.0).unwrap(), 1.0).unwrap();
        assert!(r.passed);
    }

    #[test]
    fn one_sided_rules_follow_drift_sign() {
        let set = ControlSet::scalar_vols(vec![1.0]).unwrap();
        let law = ControlLaw::constant(0, 0, "s");
        let coeffs = SdeCoefficients::constant(vec![5.0], vec![1.0], 1).unwrap();
        let rec = LawSimulator::sde(coeffs, &set, &law, grid(), &[0.0]).unwrap().record(0, 0).unwrap();
        let base = ConditionParams::new(1.0, 1.0).unwrap();
        // dt(1 - 5) < 0: two-sided fails, and so does the upper-ray form
        assert!(!check_conditions(&rec, &base, 1.0).unwrap().passed);
        assert!(!check_conditions(&rec, &base.with_rule(ControlRule::UpperRay), 1.0).unwrap().passed);
        // drift towards +inf is harmless for (-inf, a)
        assert!(check_conditions(&rec, &base.with_rule(ControlRule::LowerRay), 1.0).unwrap().passed);
    }

    #[test]
    fn rule_selection_by_domain() {
        assert_eq!(ControlRule::for_domain(&DomainSpec::lower_ray(0.0)), ControlRule::LowerRay);
        let up = DomainSpec::half_space(vec![-1.0], 0.0).unwrap();
        assert_eq!(ControlRule::for_domain(&up), ControlRule::UpperRay);
        let iv = DomainSpec::interval(-1.0, 1.0).unwrap();
        assert_eq!(ControlRule::for_domain(&iv), ControlRule::TwoSided);
    }

    #[test]
    fn one_sided_rule_rejects_vector_process() {
        let set = ControlSet::anisotropic(vec![0.5]).unwrap();
        let law = ControlLaw::constant(0, 0, "a");
        let rec = LawSimulator::brownian(&set, &law, grid(), &[0.0, 0.5]).unwrap().record(1, 0).unwrap();
        let p = ConditionParams::new(0.5, 1.0).unwrap().with_rule(ControlRule::LowerRay);
        assert!(check_conditions(&rec, &p, 1.0).is_err());
    }

    #[test]
    fn up_to_limits_checked_steps() {
        let rec = LawSimulator::frozen(0, "x", grid(), &[0.0]).record(0, 0).unwrap();
        let r = check_conditions(&rec, &ConditionParams::new(1.0, 1.0).unwrap(), 0.05).unwrap();
        assert_eq!(r.steps_checked, 6);
        assert!(ConditionParams::new(0.0, 1.0).is_err());
    }
}
