//! Quasi-continuity diagnostics for path functionals.
//!
//! Two estimates are produced: the capacity of `{|f_n - f| > eps}` for a
//! list of continuous approximants `f_n`, and a pairwise probe that shifts
//! each path by a constant of size `δ` and records how often the functional
//! jumps by more than `eps`.

use rayon::prelude::*;
use serde::Serialize;

use crate::domain_geometry::{random_direction, DomainSpec};
use crate::error::{Error, Result};
use crate::exit_time::exit_times;
use crate::measure_family::LawSimulator;
use crate::path_engine::{path_metric, perturb, sup_distance, GridPath, RngStream, DEFAULT_METRIC_TERMS};
use crate::upper_expectation::{estimate, LawSamples, UEEstimate};

/// Salt separating bump directions from the simulation streams.
const BUMP_SALT: u64 = 0x5bd1_e995_2f3a_77c1;

pub type FunctionalFn = dyn Fn(&GridPath) -> f64 + Sync + Send;

pub struct NamedFunctional {
    pub name: String,
    pub f: Box<FunctionalFn>,
}

impl NamedFunctional {
    pub fn new(name: impl Into<String>, f: impl Fn(&GridPath) -> f64 + Sync + Send + 'static) -> Self {
        Self {
            name: name.into(),
            f: Box::new(f),
        }
    }
}

/// `min(τ_Q, clamp)` (`closed = false`) or `min(τ_Q̄, clamp)`.
pub fn exit_functional(q: DomainSpec, clamp: f64, closed: bool) -> NamedFunctional {
    let name = if closed { "min(tau_closed, clamp)" } else { "min(tau_open, clamp)" };
    NamedFunctional::new(name, move |p| match exit_times(p, &q) {
        Ok(r) if closed => r.tau_closed.clamped(clamp),
        Ok(r) => r.tau_open.clamped(clamp),
        Err(_) => f64::NAN,
    })
}

/// Endpoint coordinate `Y_T^l`.
pub fn endpoint_functional(l: usize) -> NamedFunctional {
    NamedFunctional::new(format!("endpoint[{l}]"), move |p| p.state(p.len() - 1)[l])
}

/// Continuous approximant of `min(τ_Q, clamp)`:
/// `∫_0^clamp min(1, n (inf_{u<=s} dist(Y_u, Q^c))^+) ds` on the grid (left
/// Riemann sum). It increases to the grid exit time as `n` grows.
pub fn exit_approximant(q: DomainSpec, clamp: f64, n: f64) -> NamedFunctional {
    NamedFunctional::new(format!("exit_approximant(n={n})"), move |p| {
        let grid = p.grid();
        let dt = grid.dt();
        let mut inner = f64::INFINITY;
        let mut acc = 0.0;
        for (i, x) in p.states().enumerate() {
            if i >= grid.steps() || grid.time(i) >= clamp {
                break;
            }
            let depth = match q.signed_distance(x) {
                Ok(s) => -s,
                Err(_) => return f64::NAN,
            };
            inner = inner.min(depth);
            if inner <= 0.0 {
                break;
            }
            acc += dt * (n * inner).min(1.0);
        }
        acc
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ApproximantRow {
    pub name: String,
    pub capacity: UEEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseRow {
    pub delta: f64,
    pub discontinuity: UEEstimate,
    /// Path metric between base and shifted path, averaged over all paths.
    pub mean_rho: f64,
    pub max_rho: f64,
    /// Sup distance of the shift, `δ` for constant bumps.
    pub sup_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QcReport {
    pub functional: String,
    pub eps: f64,
    pub approximants: Vec<ApproximantRow>,
    pub pairwise: Vec<PairwiseRow>,
    /// Capacities nonincreasing along the approximant list within 3 SE.
    pub approximants_nonincreasing: bool,
    /// Discontinuity fractions nonincreasing as `δ` shrinks, within 3 SE.
    pub pairwise_nonincreasing: bool,
}

pub struct QcSetup {
    pub seed: u64,
    pub n_paths: usize,
    pub eps: f64,
    /// Bump sizes, any order; rows are reported in decreasing `δ`.
    pub deltas: Vec<f64>,
}

struct PathProbe {
    approx_hits: Vec<f64>,
    pair_hits: Vec<f64>,
    rho: Vec<f64>,
    sup: Vec<f64>,
}

pub fn qc_probe(
    sims: &[LawSimulator],
    setup: &QcSetup,
    functional: &NamedFunctional,
    approximants: &[NamedFunctional],
) -> Result<QcReport> {
    if sims.is_empty() {
        return Err(Error::EmptyFamily("no laws supplied".into()));
    }
    if !(setup.eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be > 0, got {}", setup.eps)));
    }
    let mut deltas = setup.deltas.clone();
    if deltas.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::InvalidArgument("deltas must be positive".into()));
    }
    deltas.sort_by(|a, b| b.total_cmp(a));
    let eps = setup.eps;

    let mut approx_samples: Vec<Vec<LawSamples>> = vec![Vec::new(); approximants.len()];
    let mut pair_samples: Vec<Vec<LawSamples>> = vec![Vec::new(); deltas.len()];
    let mut rho_sum = vec![0.0; deltas.len()];
    let mut rho_max = vec![0.0f64; deltas.len()];
    let mut sup_max = vec![0.0f64; deltas.len()];
    let mut total = 0usize;
    for sim in sims {
        let n = if sim.is_deterministic() { 1 } else { setup.n_paths };
        let probes: Vec<Result<PathProbe>> = (0..n as u64)
            .into_par_iter()
            .map(|i| {
                let path = sim
                    .record(setup.seed, i)
                    .map_err(|f| Error::Diverged {
                        law_id: sim.law_id(),
                        path_index: f.path_index,
                        step: f.step,
                    })?
                    .path;
                let base = (functional.f)(&path);
                let approx_hits = approximants
                    .iter()
                    .map(|a| indicator((a.f)(&path), base, eps))
                    .collect();
                let mut rng = RngStream::new(setup.seed ^ BUMP_SALT, i).rng();
                let dir = random_direction(&mut rng, path.dim());
                let mut pair_hits = Vec::with_capacity(deltas.len());
                let mut rho = Vec::with_capacity(deltas.len());
                let mut sup = Vec::with_capacity(deltas.len());
                for &delta in &deltas {
                    let shift: Vec<f64> = dir.iter().map(|u| u * delta).collect();
                    let bump = GridPath::constant(*path.grid(), &shift)?;
                    let moved = perturb(&path, &bump)?;
                    pair_hits.push(indicator((functional.f)(&moved), base, eps));
                    rho.push(path_metric(&path, &moved, DEFAULT_METRIC_TERMS)?.value);
                    sup.push(sup_distance(&path, &moved, path.grid().horizon())?);
                }
                Ok(PathProbe {
                    approx_hits,
                    pair_hits,
                    rho,
                    sup,
                })
            })
            .collect();
        let probes = probes.into_iter().collect::<Result<Vec<_>>>()?;
        total += probes.len();
        for (a, out) in approx_samples.iter_mut().enumerate() {
            out.push(LawSamples {
                law_id: sim.law_id(),
                label: sim.label().to_string(),
                values: probes.iter().map(|p| p.approx_hits[a]).collect(),
            });
        }
        for (k, out) in pair_samples.iter_mut().enumerate() {
            out.push(LawSamples {
                law_id: sim.law_id(),
                label: sim.label().to_string(),
                values: probes.iter().map(|p| p.pair_hits[k]).collect(),
            });
            for p in &probes {
                rho_sum[k] += p.rho[k];
                rho_max[k] = rho_max[k].max(p.rho[k]);
                sup_max[k] = sup_max[k].max(p.sup[k]);
            }
        }
    }

    let approximants_rows = approximants
        .iter()
        .zip(&approx_samples)
        .map(|(a, s)| {
            Ok(ApproximantRow {
                name: a.name.clone(),
                capacity: estimate(s)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pairwise = deltas
        .iter()
        .enumerate()
        .map(|(k, &delta)| {
            Ok(PairwiseRow {
                delta,
                discontinuity: estimate(&pair_samples[k])?,
                mean_rho: rho_sum[k] / total as f64,
                max_rho: rho_max[k],
                sup_distance: sup_max[k],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(QcReport {
        functional: functional.name.clone(),
        eps,
        approximants_nonincreasing: nonincreasing(approximants_rows.iter().map(|r| &r.capacity)),
        pairwise_nonincreasing: nonincreasing(pairwise.iter().map(|r| &r.discontinuity)),
        approximants: approximants_rows,
        pairwise,
    })
}

fn indicator(a: f64, b: f64, eps: f64) -> f64 {
    if (a - b).abs() > eps {
        1.0
    } else if a.is_nan() || b.is_nan() {
        f64::NAN
    } else {
        0.0
    }
}

fn nonincreasing<'a>(it: impl Iterator<Item = &'a UEEstimate>) -> bool {
    let v: Vec<&UEEstimate> = it.collect();
    v.windows(2).all(|w| {
        let tol = 3.0 * (w[0].argmax_se().powi(2) + w[1].argmax_se().powi(2)).sqrt();
        w[1].value <= w[0].value + tol
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure_family::{ControlLaw, ControlSet};
    use crate::path_engine::TimeGrid;

    fn bm(x0: f64) -> Vec<LawSimulator> {
        let set = ControlSet::scalar_vols(vec![1.0]).unwrap();
        let law = ControlLaw::constant(0, 0, "s=1");
        vec![LawSimulator::brownian(&set, &law, TimeGrid::new(1.0, 200).unwrap(), &[x0]).unwrap()]
    }

    #[test]
    fn endpoint_is_its_own_approximant() {
        let setup = QcSetup {
            seed: 1,
            n_paths: 200,
            eps: 1e-9,
            deltas: vec![0.1],
        };
        let r = qc_probe(&bm(0.0), &setup, &endpoint_functional(0), &[endpoint_functional(0)]).unwrap();
        assert_eq!(r.approximants[0].capacity.value, 0.0);
        // constant shift of 0.1 moves the endpoint by exactly 0.1 > eps
        assert_eq!(r.pairwise[0].discontinuity.value, 1.0);
        assert!((r.pairwise[0].sup_distance - 0.1).abs() < 1e-12);
    }

    #[test]
    fn exit_approximants_increase_to_the_exit_time() {
        let q = DomainSpec::lower_ray(0.0);
        let grid = TimeGrid::new(1.0, 100).unwrap();
        let p = GridPath::scalar(grid, |t| -1.0 + 1.5 * t).unwrap();
        let exact = exit_times(&p, &q).unwrap().tau_open.clamped(1.0);
        let mut prev = 0.0;
        for n in [1.0, 10.0, 100.0, 1e4, 1e9] {
            let v = (exit_approximant(q.clone(), 1.0, n).f)(&p);
            assert!(v >= prev && v <= exact + 1e-12);
            prev = v;
        }
        assert!((prev - exact).abs() < 1e-6);
    }

    #[test]
    fn approximant_capacities_fall() {
        let q = DomainSpec::lower_ray(0.0);
        let setup = QcSetup {
            seed: 4,
            n_paths: 300,
            eps: 0.05,
            deltas: vec![0.1, 0.01],
        };
        let approx: Vec<_> = [1.0, 10.0, 1000.0].iter().map(|&n| exit_approximant(q.clone(), 1.0, n)).collect();
        let r = qc_probe(&bm(-1.0), &setup, &exit_functional(q, 1.0, false), &approx).unwrap();
        assert!(r.approximants_nonincreasing);
        assert!(r.approximants[2].capacity.value < r.approximants[0].capacity.value);
        assert!(r.pairwise[0].delta > r.pairwise[1].delta);
    }
}
