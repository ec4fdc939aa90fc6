//! Discontinuity witnesses for the exit-time functional when the
//! nondegeneracy conditions fail.
//!
//! * `pointmass`: Dirac laws on constant paths `ω^x`, `Q = (-inf, 0)`; the
//!   open exit time jumps from 1 to 0 at `x = 0`.
//! * `degenerate_gbm`: scalar volatilities down to almost zero,
//!   `Q = (-inf, 0)`; the constant path `ω^0` never leaves the closure, yet
//!   paths arbitrarily close to it leave within a few steps.
//! * `anisotropic_2d`: `diag(α, 1 - α)` on the strip `R x (0, 1)` started on
//!   its lower edge; the `α = 1` law lives on `Ω₀ = {ω² ≡ 0}`.

use rayon::prelude::*;
use serde::Serialize;

use crate::domain_geometry::{DomainSpec, Region};
use crate::error::{Error, Result};
use crate::exit_time::exit_times;
use crate::measure_family::LawSimulator;
use crate::path_engine::{GridPath, MetricAccumulator, TimeGrid};
use crate::upper_expectation::{estimate, LawSamples, UEEstimate};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointmassRow {
    pub x: f64,
    /// `min(τ_Q, 1)(ω^x)`.
    pub open_clamped: f64,
    /// `min(τ_Q̄, 1)(ω^x)`.
    pub closed_clamped: f64,
    pub expected_open: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointmassReport {
    pub rows: Vec<PointmassRow>,
    /// Every row equals its expected value bit for bit.
    pub all_match: bool,
    /// Open exit value just left of `0` minus the value at `0`.
    pub gap: f64,
}

/// Constant paths `ω^x` on `grid`, `Q = (-inf, 0)`, clamp 1.
pub fn pointmass_run(xs: &[f64], grid: TimeGrid) -> Result<PointmassReport> {
    if xs.is_empty() {
        return Err(Error::EmptyFamily("no points".into()));
    }
    let q = DomainSpec::lower_ray(0.0);
    let mut rows = Vec::with_capacity(xs.len());
    for &x in xs {
        let r = exit_times(&GridPath::constant(grid, &[x])?, &q)?;
        rows.push(PointmassRow {
            x,
            open_clamped: r.tau_open.clamped(1.0),
            closed_clamped: r.tau_closed.clamped(1.0),
            expected_open: if x >= 0.0 { 0.0 } else { 1.0 },
        });
    }
    let all_match = rows.iter().all(|r| r.open_clamped.to_bits() == r.expected_open.to_bits());
    let at = |pred: &dyn Fn(f64) -> bool| {
        rows.iter()
            .filter(|r| pred(r.x))
            .max_by(|a, b| a.x.total_cmp(&b.x))
            .map(|r| r.open_clamped)
    };
    let left = at(&|x| x < 0.0);
    let zero = rows.iter().find(|r| r.x == 0.0).map(|r| r.open_clamped);
    let gap = match (left, zero) {
        (Some(l), Some(z)) => l - z,
        _ => f64::NAN,
    };
    Ok(PointmassReport { rows, all_match, gap })
}

/// Common settings of the two diffusion witnesses.
#[derive(Debug, Clone)]
pub struct WitnessSetup {
    pub seed: u64,
    pub n_paths: usize,
    /// Radius of the path-metric neighbourhood of the singular set.
    pub near_radius: f64,
    /// The witness event requires a closure exit by node `witness_steps`.
    pub witness_steps: usize,
    /// Extra exit windows (in steps) reported as a curve.
    pub windows: Vec<usize>,
    pub n_max: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WindowRow {
    pub steps: usize,
    pub capacity: UEEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LawWitness {
    pub law_id: usize,
    pub label: String,
    /// Frequency of `ρ(·, singular set) <= near_radius`.
    pub near_mass: f64,
    /// Frequency of the witness event.
    pub witness_mass: f64,
    pub witness_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WitnessReport {
    /// `min(τ_Q̄, 1)` on the singular path(s).
    pub singular_value: f64,
    /// Capacity of `{near, min(τ_Q̄, 1) <= witness_steps dt}` over the laws.
    pub witness_capacity: UEEstimate,
    /// Lower bound of the functional gap on the witness event.
    pub gap: f64,
    pub per_law: Vec<LawWitness>,
    pub windows: Vec<WindowRow>,
    pub dt: f64,
}

struct PathScan {
    near: bool,
    closed_exit: Option<usize>,
}

/// Streams each path, tracking the path-metric distance to the singular set
/// (through `dist`) and the closure exit. Paths that leave the
/// neighbourhood are abandoned early.
fn scan(sim: &LawSimulator, q: &DomainSpec, setup: &WitnessSetup, dist: &(dyn Fn(&[f64]) -> f64 + Sync)) -> Vec<Result<PathScan>> {
    let grid = *sim.grid();
    sim.map_paths(setup.seed, setup.n_paths, |mut w| {
        let mut acc = MetricAccumulator::new(&grid, setup.n_max);
        let mut closed = None;
        loop {
            let i = w.step();
            acc.push(i, dist(w.state()));
            if closed.is_none() && q.classify_unchecked(w.state()) == Region::InClosureComplement {
                closed = Some(i);
            }
            if acc.lower_bound() > setup.near_radius {
                return Ok(PathScan {
                    near: false,
                    closed_exit: closed,
                });
            }
            match w.advance() {
                Ok(true) => {}
                Ok(false) => break,
                Err(f) => {
                    return Err(Error::Diverged {
                        law_id: w.law_id(),
                        path_index: f.path_index,
                        step: f.step,
                    })
                }
            }
        }
        Ok(PathScan {
            near: acc.lower_bound() <= setup.near_radius,
            closed_exit: closed,
        })
    })
}

fn witness_report(
    sims: &[&LawSimulator],
    q: &DomainSpec,
    setup: &WitnessSetup,
    dist: &(dyn Fn(&[f64]) -> f64 + Sync),
    singular_value: f64,
) -> Result<WitnessReport> {
    let first = sims.first().ok_or_else(|| Error::EmptyFamily("no laws supplied".into()))?;
    let dt = first.grid().dt();
    let mut windows = setup.windows.clone();
    windows.sort_unstable();
    windows.dedup();
    let mut witness = Vec::with_capacity(sims.len());
    let mut curve: Vec<Vec<LawSamples>> = vec![Vec::new(); windows.len()];
    let mut per_law = Vec::with_capacity(sims.len());
    for sim in sims {
        let scans = scan(sim, q, setup, dist).into_iter().collect::<Result<Vec<_>>>()?;
        let hit = |m: usize| -> Vec<f64> {
            scans
                .iter()
                .map(|s| (s.near && s.closed_exit.is_some_and(|i| i <= m)) as u8 as f64)
                .collect()
        };
        let w = LawSamples {
            law_id: sim.law_id(),
            label: sim.label().to_string(),
            values: hit(setup.witness_steps),
        };
        let est = estimate(std::slice::from_ref(&w))?;
        per_law.push(LawWitness {
            law_id: sim.law_id(),
            label: sim.label().to_string(),
            near_mass: scans.iter().filter(|s| s.near).count() as f64 / scans.len() as f64,
            witness_mass: est.value,
            witness_se: est.argmax_se(),
        });
        witness.push(w);
        for (k, &m) in windows.iter().enumerate() {
            curve[k].push(LawSamples {
                law_id: sim.law_id(),
                label: sim.label().to_string(),
                values: hit(m),
            });
        }
    }
    let witness_capacity = estimate(&witness)?;
    let windows = windows
        .iter()
        .zip(&curve)
        .map(|(&steps, s)| {
            Ok(WindowRow {
                steps,
                capacity: estimate(s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WitnessReport {
        singular_value,
        gap: singular_value - setup.witness_steps as f64 * dt,
        witness_capacity,
        per_law,
        windows,
        dt,
    })
}

/// Brownian laws with the given scalar volatilities, `Q = (-inf, 0)`,
/// singular path `ω^0`.
pub fn degenerate_gbm_run(sims: &[LawSimulator], setup: &WitnessSetup) -> Result<WitnessReport> {
    let q = DomainSpec::lower_ray(0.0);
    let first = sims.first().ok_or_else(|| Error::EmptyFamily("no laws supplied".into()))?;
    if sims.iter().any(|s| s.dim() != 1 || s.x0() != [0.0]) {
        return Err(Error::InvalidArgument("degenerate_gbm needs scalar laws started at 0".into()));
    }
    let singular = exit_times(&GridPath::constant(*first.grid(), &[0.0])?, &q)?;
    let refs: Vec<&LawSimulator> = sims.iter().collect();
    witness_report(&refs, &q, setup, &|x| x[0].abs(), singular.tau_closed.clamped(1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnisotropicReport {
    pub witness: WitnessReport,
    /// Paths of the `α = 1` law checked to stay in `Ω₀` with `min(τ_Q̄, 1) = 1`.
    pub singular_paths_checked: usize,
    pub singular_all_one: bool,
    pub focus_alpha: f64,
    pub focus: Option<LawWitness>,
}

/// `sims` pairs each law with its `α`. The `α = 1` law supplies the singular
/// paths; the others the witness mass.
pub fn anisotropic_2d_run(sims: &[(f64, LawSimulator)], setup: &WitnessSetup, focus_alpha: f64) -> Result<AnisotropicReport> {
    let q = DomainSpec::Strip2D;
    if sims.iter().any(|(_, s)| s.dim() != 2 || s.x0()[1] != 0.0) {
        return Err(Error::InvalidArgument("anisotropic_2d needs planar laws started on the lower edge".into()));
    }
    let (singular, rest): (Vec<_>, Vec<_>) = sims.iter().partition(|(a, _)| *a == 1.0);
    let singular = singular
        .first()
        .ok_or_else(|| Error::InvalidArgument("the alpha grid must contain 1".into()))?;
    let sim1 = &singular.1;
    let n = if sim1.is_deterministic() { 1 } else { setup.n_paths };
    let checks: Vec<bool> = (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let Ok(rec) = sim1.record(setup.seed, i) else {
                return false;
            };
            let on_omega0 = rec.path.states().all(|x| x[1] == 0.0);
            on_omega0 && exit_times(&rec.path, &q).is_ok_and(|r| r.tau_closed.clamped(1.0) == 1.0)
        })
        .collect();
    let singular_all_one = checks.iter().all(|&b| b);
    let value = if singular_all_one { 1.0 } else { f64::NAN };
    let refs: Vec<&LawSimulator> = rest.iter().map(|(_, s)| s).collect();
    let witness = witness_report(&refs, &q, setup, &|x| x[1].abs(), value)?;
    let focus = rest
        .iter()
        .find(|(a, _)| (*a - focus_alpha).abs() < 1e-12)
        .and_then(|(_, s)| witness.per_law.iter().find(|l| l.law_id == s.law_id()).cloned());
    Ok(AnisotropicReport {
        witness,
        singular_paths_checked: checks.len(),
        singular_all_one,
        focus_alpha,
        focus,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure_family::{ControlLaw, ControlSet};

    #[test]
    fn pointmass_values_and_gap() {
        let xs: Vec<f64> = (0..=20).map(|i| -1.0 + 0.1 * i as f64).collect();
        let r = pointmass_run(&xs, TimeGrid::new(1.0, 10).unwrap()).unwrap();
        assert!(r.all_match);
        assert_eq!(r.gap, 1.0);
        let zero = r.rows.iter().find(|row| row.x == 0.0).unwrap();
        assert_eq!((zero.open_clamped, zero.closed_clamped), (0.0, 1.0));
    }

    fn setup() -> WitnessSetup {
        WitnessSetup {
            seed: 3,
            n_paths: 2000,
            near_radius: 0.05,
            witness_steps: 2,
            windows: vec![1, 2, 8],
            n_max: 20,
        }
    }

    #[test]
    fn degenerate_gbm_singular_value_and_small_sigma_mass() {
        let set = ControlSet::scalar_vols(vec![1e-3]).unwrap();
        let law = ControlLaw::constant(0, 0, "s");
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let sims = vec![LawSimulator::brownian(&set, &law, grid, &[0.0]).unwrap()];
        let r = degenerate_gbm_run(&sims, &setup()).unwrap();
        assert_eq!(r.singular_value, 1.0);
        assert_eq!(r.per_law[0].near_mass, 1.0);
        // windows are nested events
        assert!(r.windows[0].capacity.value <= r.windows[1].capacity.value);
        assert!(r.windows[1].capacity.value <= r.windows[2].capacity.value);
        assert_eq!(r.windows[1].capacity.value, r.witness_capacity.value);
    }

    #[test]
    fn anisotropic_singular_law_stays_on_edge() {
        let set = ControlSet::anisotropic(vec![0.9, 1.0]).unwrap();
        let grid = TimeGrid::new(1.0, 500).unwrap();
        let sims: Vec<(f64, LawSimulator)> = [0.9, 1.0]
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let law = ControlLaw::constant(i, i, format!("a={a}"));
                (a, LawSimulator::brownian(&set, &law, grid, &[0.0, 0.0]).unwrap())
            })
            .collect();
        let mut s = setup();
        s.n_paths = 200;
        s.near_radius = 0.5;
        let r = anisotropic_2d_run(&sims, &s, 0.9).unwrap();
        assert!(r.singular_all_one);
        assert_eq!(r.witness.singular_value, 1.0);
        assert!(r.focus.is_some());
        assert_eq!(r.witness.per_law.len(), 1);
    }
}
