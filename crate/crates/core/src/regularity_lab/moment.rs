//! Second-moment bound for the closure exit time of a bounded domain via the
//! barrier `h(y) = β exp(2 y_l / λ)`.
//!
//! With the minimal admissible `β = λ² sup_{Q̄} exp(-2 y_l / λ) / (2ε)` and
//! `C_h = β sup_{Q̄} exp(2 y_l / λ)` the bound is `Ê[τ_Q̄²] <= 4 C_h²`.

use serde::Serialize;

use crate::domain_geometry::{DomainSpec, Region};
use crate::error::{Error, Result};
use crate::measure_family::{LawSimulator, PathFailure, StepIncrements};
use crate::upper_expectation::{estimate, LawSamples, UEEstimate};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentBoundParams {
    pub lambda: f64,
    pub epsilon: f64,
    pub component: usize,
    pub beta: f64,
    pub c_h: f64,
}

impl MomentBoundParams {
    /// Minimal `β` and the matching `C_h` for the coordinate range of `q`.
    pub fn minimal(lambda: f64, epsilon: f64, component: usize, q: &DomainSpec) -> Result<Self> {
        if lambda == 0.0 || !lambda.is_finite() {
            return Err(Error::InvalidArgument(format!("lambda must be nonzero, got {lambda}")));
        }
        if !(epsilon > 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidArgument(format!("epsilon must be > 0, got {epsilon}")));
        }
        q.validate()?;
        if component >= q.dim() {
            return Err(Error::DimensionMismatch {
                expected: q.dim(),
                got: component,
            });
        }
        let (lo, hi) = q
            .coordinate_range(component)
            .ok_or_else(|| Error::InvalidArgument(format!("domain is unbounded in coordinate {component}")))?;
        let sup = |f: &dyn Fn(f64) -> f64| f(lo).max(f(hi));
        let beta = lambda * lambda * sup(&|y| (-2.0 * y / lambda).exp()) / (2.0 * epsilon);
        let c_h = beta * sup(&|y| (2.0 * y / lambda).exp());
        Ok(Self {
            lambda,
            epsilon,
            component,
            beta,
            c_h,
        })
    }

    pub fn bound(&self) -> f64 {
        4.0 * self.c_h * self.c_h
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HypothesisFailure {
    pub law_id: usize,
    pub path_index: u64,
    pub step: usize,
    /// `λ ΔA^l + Δ<M^l> - ε dt`.
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub params: MomentBoundParams,
    pub bound: f64,
    pub horizon: f64,
    pub second_moment: UEEstimate,
    pub first_moment: UEEstimate,
    /// Paths with no closure exit before the horizon, over all laws.
    pub unexited: usize,
    pub paths_checked: usize,
    pub hypotheses_passed: bool,
    pub first_hypothesis_failure: Option<HypothesisFailure>,
    /// `estimate + 3 SE <= bound`.
    pub within_bound: bool,
    /// `bound / estimate`.
    pub slack_ratio: f64,
}

struct PathOutcome {
    tau: f64,
    exited: bool,
    failure: Option<HypothesisFailure>,
}

/// Estimates `Ê[min(τ_Q̄, T)²]` with `T` the simulators' horizon and checks
/// the drift/variance hypothesis step by step on the first `n_check` paths
/// of each law, up to the closure exit.
pub fn moment_bound_experiment(
    sims: &[LawSimulator],
    q: &DomainSpec,
    mp: &MomentBoundParams,
    seed: u64,
    n_paths: usize,
    n_check: usize,
) -> Result<MomentReport> {
    if !q.is_bounded() {
        return Err(Error::InvalidArgument("moment bound needs a bounded domain".into()));
    }
    let first = sims
        .first()
        .ok_or_else(|| Error::EmptyFamily("no laws supplied".into()))?;
    let horizon = first.grid().horizon();
    let l = mp.component;
    let d = q.dim();

    let mut second = Vec::with_capacity(sims.len());
    let mut firsts = Vec::with_capacity(sims.len());
    let mut unexited = 0;
    let mut failure: Option<HypothesisFailure> = None;
    let mut paths_checked = 0;
    for sim in sims {
        if sim.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: sim.dim(),
            });
        }
        let dt = sim.grid().dt();
        let outcomes = sim.map_paths(seed, n_paths, |mut w| -> std::result::Result<PathOutcome, PathFailure> {
            let check = (w.path_index() as usize) < n_check;
            let mut inc = StepIncrements::new(d);
            let mut fail = None;
            loop {
                if q.classify_unchecked(w.state()) == Region::InClosureComplement {
                    return Ok(PathOutcome {
                        tau: w.time(),
                        exited: true,
                        failure: fail,
                    });
                }
                if check {
                    let step = w.step();
                    if !w.advance_with(&mut inc)? {
                        break;
                    }
                    let lhs = mp.lambda * inc.fv[l] + inc.qv[l * d + l];
                    let slack = lhs - mp.epsilon * dt;
                    if fail.is_none() && slack < -1e-12 * (lhs.abs() + mp.epsilon * dt) {
                        fail = Some(HypothesisFailure {
                            law_id: w.law_id(),
                            path_index: w.path_index(),
                            step,
                            slack,
                        });
                    }
                } else if !w.advance()? {
                    break;
                }
            }
            Ok(PathOutcome {
                tau: horizon,
                exited: false,
                failure: fail,
            })
        });
        let mut taus = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            match o {
                Ok(o) => {
                    if !o.exited {
                        unexited += 1;
                    }
                    if failure.is_none() {
                        failure = o.failure;
                    }
                    taus.push(o.tau);
                }
                Err(_) => taus.push(f64::NAN),
            }
        }
        paths_checked += n_check.min(taus.len());
        second.push(LawSamples {
            law_id: sim.law_id(),
            label: sim.label().to_string(),
            values: taus.iter().map(|t| t * t).collect(),
        });
        firsts.push(LawSamples {
            law_id: sim.law_id(),
            label: sim.label().to_string(),
            values: taus,
        });
    }
    let second_moment = estimate(&second)?;
    let first_moment = estimate(&firsts)?;
    let bound = mp.bound();
    let within_bound = second_moment.value + 3.0 * second_moment.argmax_se() <= bound;
    Ok(MomentReport {
        params: *mp,
        bound,
        horizon,
        slack_ratio: bound / second_moment.value,
        second_moment,
        first_moment,
        unexited,
        paths_checked,
        hypotheses_passed: failure.is_none(),
        first_hypothesis_failure: failure,
        within_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure_family::{ControlLaw, ControlSet};
    use crate::path_engine::TimeGrid;

    #[test]
    fn minimal_constants_for_unit_interval() {
        let q = DomainSpec::interval(-1.0, 1.0).unwrap();
        let mp = MomentBoundParams::minimal(1.0, 1.0, 0, &q).unwrap();
        let e = std::f64::consts::E;
        assert!((mp.beta - e * e / 2.0).abs() < 1e-14);
        assert!((mp.c_h - e.powi(4) / 2.0).abs() < 1e-12);
        assert!((mp.bound() - 8.0f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn unbounded_domain_is_rejected() {
        assert!(MomentBoundParams::minimal(1.0, 1.0, 0, &DomainSpec::lower_ray(0.0)).is_err());
        let q = DomainSpec::interval(-1.0, 1.0).unwrap();
        assert!(MomentBoundParams::minimal(0.0, 1.0, 0, &q).is_err());
    }

    #[test]
    fn frozen_path_violates_the_hypothesis() {
        let q = DomainSpec::interval(-1.0, 1.0).unwrap();
        let mp = MomentBoundParams::minimal(1.0, 1.0, 0, &q).unwrap();
        let grid = TimeGrid::new(2.0, 200).unwrap();
        let sim = LawSimulator::frozen(0, "zero", grid, &[0.0]);
        let r = moment_bound_experiment(&[sim], &q, &mp, 1, 10, 10).unwrap();
        assert!(!r.hypotheses_passed);
        assert_eq!(r.first_hypothesis_failure.unwrap().step, 0);
        assert_eq!(r.unexited, 1);
        assert_eq!(r.second_moment.value, 4.0);
    }

    #[test]
    fn unit_brownian_motion_satisfies_the_hypothesis() {
        let q = DomainSpec::interval(-1.0, 1.0).unwrap();
        let mp = MomentBoundParams::minimal(1.0, 1.0, 0, &q).unwrap();
        let set = ControlSet::scalar_vols(vec![1.0]).unwrap();
        let law = ControlLaw::constant(0, 0, "s=1");
        let sim = LawSimulator::brownian(&set, &law, TimeGrid::new(20.0, 20_000).unwrap(), &[0.0]).unwrap();
        let r = moment_bound_experiment(&[sim], &q, &mp, 2, 400, 20).unwrap();
        assert!(r.hypotheses_passed);
        assert!(r.within_bound);
        assert_eq!(r.unexited, 0);
    }
}
