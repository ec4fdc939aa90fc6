//! Experiment runners behind the `nlexit` subcommands.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::{json, Value};

use super::config::*;
use super::report::{code_version, Failure, Hypotheses, Report, Verdict, SCHEMA_VERSION};
use crate::error::{Error, Result};
use crate::exit_time::{exit_times, walk_exit, write_exit_csv, ExitRow};
use crate::measure_family::{family_controls, ControlLaw, ControlSet, LawSimulator, ScheduleMode, Spacing};
use crate::path_engine::{GridPath, TimeGrid};
use crate::regularity_lab::counterexample::anisotropic_2d_run;
use crate::regularity_lab::qc::{endpoint_functional, exit_approximant, exit_functional};
use crate::regularity_lab::*;
use crate::upper_expectation::{estimate, LawSamples};

const DETECTION_NOTE: &str =
    "exit detection is first-node on the grid without bridge correction; diffusion exit times carry an O(sqrt(dt)) bias";
const SURROGATE_NOTE: &str = "upper expectations and capacities are maxima over the simulated laws only (finite-control lower bounds)";

/// Everything a run produces besides `report.json` and `summary.md`.
pub struct Outcome {
    pub report: Report,
    pub artifacts: Vec<(String, Vec<u8>)>,
}

struct Body {
    hypotheses: Hypotheses,
    metrics: Value,
    tolerances: Value,
    informational: bool,
    failures: Vec<Failure>,
    notes: Vec<String>,
    artifacts: Vec<(String, Vec<u8>)>,
}

impl Body {
    fn new(metrics: Value) -> Self {
        Self {
            hypotheses: Hypotheses::unchecked(),
            metrics,
            tolerances: Value::Null,
            informational: false,
            failures: Vec::new(),
            notes: Vec::new(),
            artifacts: Vec::new(),
        }
    }
}

pub fn run(cfg: &LoadedConfig) -> Result<Outcome> {
    let body = match &cfg.body {
        ExperimentConfig::Simulate(c) => simulate(c)?,
        ExperimentConfig::ExitStats(c) => exit_stats(c)?,
        ExperimentConfig::CheckConditions(c) => check(c)?,
        ExperimentConfig::ExitIdentity(c) => identity(c)?,
        ExperimentConfig::MomentBound(c) => moment(c)?,
        ExperimentConfig::QcProbe(c) => qc(c)?,
        ExperimentConfig::Counterexample(c) => counterexample(c)?,
        ExperimentConfig::PartitionApprox(c) => partition(c)?,
    };
    let verdict = if !body.failures.is_empty() {
        Verdict::Fail
    } else if body.informational {
        Verdict::Informational
    } else {
        Verdict::Pass
    };
    Ok(Outcome {
        report: Report {
            schema_version: SCHEMA_VERSION,
            experiment: cfg.experiment.name().to_string(),
            code_version: code_version(),
            config: cfg.raw.clone(),
            hypotheses: body.hypotheses,
            metrics: body.metrics,
            tolerances: body.tolerances,
            verdict,
            failures: body.failures,
            notes: body.notes,
        },
        artifacts: body.artifacts,
    })
}

fn to_value<T: serde::Serialize>(v: &T) -> Result<Value> {
    Ok(serde_json::to_value(v)?)
}

fn diverged(sim: &LawSimulator, path_index: u64, step: usize) -> Error {
    Error::Diverged {
        law_id: sim.law_id(),
        path_index,
        step,
    }
}

fn simulate(c: &SimulateConfig) -> Result<Body> {
    let grid = c.grid.build("/grid")?;
    let sims = c.family.build(grid, "/family")?;
    let d = c.family.dim();
    let mut laws = Vec::new();
    let mut failures_total = 0;
    for sim in &sims {
        let ends = sim.map_paths(c.seed, c.n_paths, |mut w| loop {
            match w.advance() {
                Ok(true) => {}
                Ok(false) => return Some(w.state().to_vec()),
                Err(_) => return None,
            }
        });
        let ok: Vec<&Vec<f64>> = ends.iter().flatten().collect();
        failures_total += ends.len() - ok.len();
        let n = ok.len().max(1) as f64;
        let mean: Vec<f64> = (0..d).map(|j| ok.iter().map(|x| x[j]).sum::<f64>() / n).collect();
        let spread = ok
            .iter()
            .map(|x| x.iter().zip(sim.x0()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum::<f64>()
            / n;
        laws.push(json!({
            "law_id": sim.law_id(),
            "label": sim.label(),
            "paths": ends.len(),
            "diverged": ends.len() - ok.len(),
            "endpoint_mean": mean,
            "endpoint_mean_square_displacement": spread,
        }));
    }
    let mut body = Body::new(json!({ "dt": grid.dt(), "steps": grid.steps(), "laws": laws, "diverged": failures_total }));
    body.informational = true;
    if c.export_paths > 0 {
        let mut buf = Vec::new();
        if let PathFormat::Csv = c.format {
            write!(buf, "law_id,index,step,t")?;
            for j in 0..d {
                write!(buf, ",x{j}")?;
            }
            writeln!(buf)?;
        }
        for sim in &sims {
            let n = if sim.is_deterministic() { 1 } else { c.export_paths.min(c.n_paths) };
            let recs: Vec<_> = (0..n as u64).into_par_iter().map(|i| sim.record(c.seed, i)).collect();
            for (i, r) in recs.into_iter().enumerate() {
                let Ok(rec) = r else { continue };
                write_path(&mut buf, &c.format, sim.law_id(), i as u64, &rec.path)?;
            }
        }
        let name = match c.format {
            PathFormat::Ndjson => "paths.ndjson",
            PathFormat::Csv => "paths.csv",
        };
        body.artifacts.push((name.to_string(), buf));
    }
    Ok(body)
}

fn write_path(buf: &mut Vec<u8>, format: &PathFormat, law_id: usize, index: u64, p: &GridPath) -> Result<()> {
    match format {
        PathFormat::Ndjson => {
            let states: Vec<&[f64]> = p.states().collect();
            serde_json::to_writer(
                &mut *buf,
                &json!({"law_id": law_id, "index": index, "t0": 0.0, "dt": p.grid().dt(), "states": states}),
            )?;
            buf.push(b'\n');
        }
        PathFormat::Csv => {
            for (i, s) in p.states().enumerate() {
                write!(buf, "{law_id},{index},{i},{}", p.grid().time(i))?;
                for v in s {
                    write!(buf, ",{v}")?;
                }
                writeln!(buf)?;
            }
        }
    }
    Ok(())
}

fn exit_stats(c: &ExitStatsConfig) -> Result<Body> {
    let grid = c.grid.build("/grid")?;
    if c.clamp > grid.horizon() {
        return Err(Error::Config {
            pointer: "/clamp".into(),
            message: "clamp must not exceed the grid horizon".into(),
        });
    }
    let sims = c.family.build(grid, "/family")?;
    let q = &c.domain;
    let last = grid.steps();
    let mut open = Vec::new();
    let mut closed = Vec::new();
    let mut gap = Vec::new();
    let mut rows = Vec::new();
    let mut unexited = 0usize;
    for sim in &sims {
        let reps = sim.map_paths(c.seed, c.n_paths, |mut w| walk_exit(&mut w, q, last));
        let mut o = Vec::with_capacity(reps.len());
        let mut cl = Vec::with_capacity(reps.len());
        let mut g = Vec::with_capacity(reps.len());
        for (i, r) in reps.iter().enumerate() {
            match r {
                Ok(r) => {
                    let (a, b) = (r.tau_open.clamped(c.clamp), r.tau_closed.clamped(c.clamp));
                    o.push(a);
                    cl.push(b);
                    g.push(b - a);
                    if !r.tau_closed.is_finite() {
                        unexited += 1;
                    }
                    if c.export_exits {
                        rows.push(ExitRow {
                            law_id: sim.law_id(),
                            path_index: i as u64,
                            report: *r,
                            clamped: a,
                        });
                    }
                }
                Err(_) => {
                    o.push(f64::NAN);
                    cl.push(f64::NAN);
                    g.push(f64::NAN);
                }
            }
        }
        let s = |values| LawSamples {
            law_id: sim.law_id(),
            label: sim.label().to_string(),
            values,
        };
        open.push(s(o));
        closed.push(s(cl));
        gap.push(s(g));
    }
    let eb = q.exterior_ball(None)?;
    let mut body = Body::new(json!({
        "clamp": c.clamp,
        "dt": grid.dt(),
        "open": estimate(&open)?.to_report("min(tau_open, clamp)"),
        "closed": estimate(&closed)?.to_report("min(tau_closed, clamp)"),
        "gap": estimate(&gap)?.to_report("min(tau_closed, clamp) - min(tau_open, clamp)"),
        "unexited_closed": unexited,
        "exterior_ball": eb,
    }));
    body.informational = true;
    body.notes = vec![DETECTION_NOTE.into(), SURROGATE_NOTE.into()];
    if c.export_exits {
        let mut buf = Vec::new();
        write_exit_csv(&mut buf, &rows)?;
        body.artifacts.push(("exits.csv".into(), buf));
    }
    Ok(body)
}

fn check(c: &CheckConditionsConfig) -> Result<Body> {
    let grid = c.grid.build("/grid")?;
    let sims = c.family.build(grid, "/family")?;
    let rule = c.rule.resolve(c.domain.as_ref());
    let mut per_lambda = Vec::new();
    let mut every_lambda_violated = true;
    let mut any_failure = false;
    for &lambda in &c.lambdas {
        let params = ConditionParams::new(lambda, c.epsilon)?.with_rule(rule);
        let mut laws = Vec::new();
        let mut some_law_fails = false;
        for sim in &sims {
            let n = if sim.is_deterministic() { 1 } else { c.n_paths };
            let reports: Vec<Result<ConditionReport>> = (0..n as u64)
                .into_par_iter()
                .map(|i| {
                    let rec = sim.record(c.seed, i).map_err(|f| diverged(sim, f.path_index, f.step))?;
                    let up_to = match &c.domain {
                        Some(q) => exit_times(&rec.path, q)?.tau_closed.time().unwrap_or(grid.horizon()),
                        None => grid.horizon(),
                    };
                    check_conditions(&rec, &params, up_to)
                })
                .collect();
            let reports = reports.into_iter().collect::<Result<Vec<_>>>()?;
            let failed: Vec<&ConditionReport> = reports.iter().filter(|r| !r.passed).collect();
            let count = |cl: Clause| failed.iter().filter(|r| r.per_clause.iter().any(|f| f.clause == cl)).count();
            some_law_fails |= !failed.is_empty();
            laws.push(json!({
                "law_id": sim.law_id(),
                "label": sim.label(),
                "records": reports.len(),
                "passed": reports.len() - failed.len(),
                "failed_nondegenerate": count(Clause::Nondegenerate),
                "failed_positive_trace": count(Clause::PositiveTrace),
                "failed_controllable": count(Clause::Controllable),
                "first_failure": failed.first().and_then(|r| r.first_failure),
            }));
        }
        every_lambda_violated &= some_law_fails;
        any_failure |= some_law_fails;
        per_lambda.push(json!({ "lambda": lambda, "holds": !some_law_fails, "laws": laws }));
    }
    let mut body = Body::new(json!({ "epsilon": c.epsilon, "rule": rule, "per_lambda": per_lambda }));
    body.hypotheses = Hypotheses::checked(!any_failure, None);
    body.tolerances = json!({ "psd": crate::linalg::PSD_TOL });
    match c.expect {
        None => body.informational = true,
        Some(Expectation::Holds) if any_failure => {
            body.failures.push(Failure::new("conditions_hold", "at least one record fails a clause"));
        }
        Some(Expectation::Violated) if !every_lambda_violated => {
            body.failures.push(Failure::new(
                "conditions_violated",
                "for some lambda every law passes on all checked records",
            ));
        }
        Some(_) => {}
    }
    Ok(body)
}

fn identity(c: &ExitIdentityConfig) -> Result<Body> {
    let rule = c.rule.resolve(Some(&c.domain));
    let setup = IdentitySetup {
        q: &c.domain,
        clamp: c.clamp,
        dt_levels: &c.grid.dt_levels,
        n_paths: c.n_paths,
        seed: c.seed,
        conditions: Some(ConditionParams::new(c.lambda, c.epsilon)?.with_rule(rule)),
        n_check: c.n_check,
    };
    let r = exit_identity_experiment(&setup, |grid| c.family.build(grid, "/family"))?;
    let mut body = Body::new(to_value(&r)?);
    body.hypotheses = Hypotheses::checked(r.hypotheses_passed, r.label);
    body.tolerances = json!({ "max_finest_gap": c.max_finest_gap, "monotone_se_multiple": 3.0 });
    body.notes = vec![DETECTION_NOTE.into(), r.note.into()];
    if !r.hypotheses_passed {
        body.informational = true;
        return Ok(body);
    }
    if !r.nonincreasing_within_3se {
        body.failures.push(Failure::new("gap_nonincreasing", "D(dt) grows under refinement beyond 3 SE"));
    }
    if r.finest_gap > c.max_finest_gap {
        body.failures.push(Failure::new(
            "finest_gap",
            format!("D = {} exceeds {}", r.finest_gap, c.max_finest_gap),
        ));
    }
    Ok(body)
}

fn moment(c: &MomentBoundConfig) -> Result<Body> {
    let grid = c.grid.build("/grid")?;
    let sims = c.family.build(grid, "/family")?;
    let mp = MomentBoundParams::minimal(c.lambda, c.epsilon, c.component, &c.domain)?;
    let r = moment_bound_experiment(&sims, &c.domain, &mp, c.seed, c.n_paths, c.n_check)?;
    let mut body = Body::new(to_value(&r)?);
    let label = (!r.hypotheses_passed).then_some(identity::HYPOTHESES_VIOLATED);
    body.hypotheses = Hypotheses::checked(r.hypotheses_passed, label);
    body.tolerances = json!({ "se_multiple": 3.0, "mean_oracle": c.mean_oracle });
    body.notes = vec![DETECTION_NOTE.into(), SURROGATE_NOTE.into()];
    if !r.hypotheses_passed {
        body.informational = true;
        return Ok(body);
    }
    if !r.within_bound {
        body.failures.push(Failure::new(
            "moment_bound",
            format!("estimate {} + 3 SE exceeds bound {}", r.second_moment.value, r.bound),
        ));
    }
    if let Some(o) = &c.mean_oracle {
        let rel = (r.first_moment.value - o.value).abs() / o.value.abs();
        if rel > o.rel_tol {
            body.failures.push(Failure::new(
                "mean_oracle",
                format!("E[tau] = {} differs from {} by {:.4} (relative)", r.first_moment.value, o.value, rel),
            ));
        }
    }
    Ok(body)
}

fn qc(c: &QcProbeConfig) -> Result<Body> {
    let grid = c.grid.build("/grid")?;
    let sims = c.family.build(grid, "/family")?;
    let functional = match c.functional {
        FunctionalConfig::TauOpen => exit_functional(c.domain.clone(), c.clamp, false),
        FunctionalConfig::TauClosed => exit_functional(c.domain.clone(), c.clamp, true),
        FunctionalConfig::Endpoint => endpoint_functional(0),
    };
    let approximants: Vec<_> = c
        .approximant_levels
        .iter()
        .map(|&n| exit_approximant(c.domain.clone(), c.clamp, n))
        .collect();
    let setup = QcSetup {
        seed: c.seed,
        n_paths: c.n_paths,
        eps: c.eps,
        deltas: c.deltas.clone(),
    };
    let r = qc_probe(&sims, &setup, &functional, &approximants)?;
    let mut body = Body::new(to_value(&r)?);
    body.tolerances = json!({ "eps": c.eps, "limit": c.limit });
    body.notes = vec![DETECTION_NOTE.into(), SURROGATE_NOTE.into()];
    match &c.limit {
        None => body.informational = true,
        Some(l) => {
            let row = r.pairwise.iter().find(|p| p.delta == l.delta).expect("validated");
            if row.discontinuity.value > l.max_fraction {
                body.failures.push(Failure::new(
                    "discontinuity_fraction",
                    format!("{} at delta {} exceeds {}", row.discontinuity.value, l.delta, l.max_fraction),
                ));
            }
        }
    }
    Ok(body)
}

fn constant_laws(set: &ControlSet) -> Result<Vec<ControlLaw>> {
    family_controls(set, &ScheduleMode::ConstantOnly)
}

fn counterexample(c: &CounterexampleConfig) -> Result<Body> {
    match &c.case {
        CounterexampleCase::Pointmass { xs, steps } => {
            let grid = TimeGrid::new(1.0, *steps)?;
            let r = pointmass_run(xs, grid)?;
            let rec = LawSimulator::frozen(0, "x=0", grid, &[0.0]).record(0, 0).expect("frozen path is finite");
            let cond = check_conditions(&rec, &ConditionParams::new(1.0, 1.0)?, grid.horizon())?;
            let mut body = Body::new(json!({ "which": "pointmass", "result": r, "conditions_at_zero": cond }));
            body.hypotheses = Hypotheses::checked(cond.passed, (!cond.passed).then_some(identity::HYPOTHESES_VIOLATED));
            body.tolerances = json!({ "comparison": "bit-exact" });
            if !r.all_match {
                body.failures.push(Failure::new("pointmass_values", "some exit value differs from the expected 0/1"));
            }
            if r.gap != 1.0 {
                body.failures.push(Failure::new("pointmass_gap", format!("gap {} != 1", r.gap)));
            }
            Ok(body)
        }
        CounterexampleCase::DegenerateGbm {
            sigma_lo,
            sigma_hi,
            n_sigmas,
            spacing,
            grid,
            n_paths,
            near_radius,
            witness_steps,
            windows,
            min_capacity,
        } => {
            let grid = grid.build("/case/grid")?;
            let sp = match spacing {
                SpacingConfig::Linear => Spacing::Linear,
                SpacingConfig::Geometric => Spacing::Geometric,
            };
            let set = ControlSet::scalar_interval(*sigma_lo, *sigma_hi, *n_sigmas, sp)?;
            let sims = constant_laws(&set)?
                .iter()
                .map(|l| LawSimulator::brownian(&set, l, grid, &[0.0]))
                .collect::<Result<Vec<_>>>()?;
            let setup = WitnessSetup {
                seed: c.seed,
                n_paths: *n_paths,
                near_radius: *near_radius,
                witness_steps: *witness_steps,
                windows: windows.clone(),
                n_max: crate::path_engine::DEFAULT_METRIC_TERMS,
            };
            let r = degenerate_gbm_run(&sims, &setup)?;
            let mut body = Body::new(json!({ "which": "degenerate_gbm", "result": r }));
            body.tolerances = json!({ "min_capacity": min_capacity, "singular_value": 1.0 });
            body.notes = vec![DETECTION_NOTE.into(), SURROGATE_NOTE.into()];
            if r.singular_value != 1.0 {
                body.failures.push(Failure::new("singular_value", format!("{} != 1", r.singular_value)));
            }
            if r.witness_capacity.value < *min_capacity {
                body.failures.push(Failure::new(
                    "witness_capacity",
                    format!(
                        "capacity {} (SE {}) below {}",
                        r.witness_capacity.value,
                        r.witness_capacity.argmax_se(),
                        min_capacity
                    ),
                ));
            }
            Ok(body)
        }
        CounterexampleCase::Anisotropic2d {
            alphas,
            grid,
            n_paths,
            near_radius,
            witness_steps,
            windows,
            focus_alpha,
            min_capacity,
        } => {
            let grid = grid.build("/case/grid")?;
            let set = ControlSet::anisotropic(alphas.clone())?;
            let ControlSet::AnisotropicDiag2 { alphas: sorted } = &set else {
                unreachable!("anisotropic builds a diagonal set")
            };
            let sims = constant_laws(&set)?
                .iter()
                .map(|l| Ok((sorted[l.id], LawSimulator::brownian(&set, l, grid, &[0.0, 0.0])?)))
                .collect::<Result<Vec<_>>>()?;
            let setup = WitnessSetup {
                seed: c.seed,
                n_paths: *n_paths,
                near_radius: *near_radius,
                witness_steps: *witness_steps,
                windows: windows.clone(),
                n_max: crate::path_engine::DEFAULT_METRIC_TERMS,
            };
            let r = anisotropic_2d_run(&sims, &setup, *focus_alpha)?;
            let mut body = Body::new(json!({ "which": "anisotropic_2d", "result": r }));
            let min_gap = 1.0 - *witness_steps as f64 * grid.dt();
            body.tolerances = json!({ "min_capacity": min_capacity, "min_gap": min_gap });
            body.notes = vec![DETECTION_NOTE.into(), SURROGATE_NOTE.into()];
            if !r.singular_all_one {
                body.failures.push(Failure::new("singular_value", "an alpha = 1 path left the edge or exited"));
            }
            match &r.focus {
                None => body.failures.push(Failure::new("focus_alpha", format!("alpha {focus_alpha} not in the grid"))),
                Some(f) if f.witness_mass < *min_capacity => body.failures.push(Failure::new(
                    "witness_capacity",
                    format!("mass {} (SE {}) at alpha {} below {}", f.witness_mass, f.witness_se, focus_alpha, min_capacity),
                )),
                Some(_) => {}
            }
            if !(r.witness.gap >= min_gap) {
                body.failures.push(Failure::new("gap", format!("{} < {}", r.witness.gap, min_gap)));
            }
            Ok(body)
        }
    }
}

fn partition(c: &PartitionConfig) -> Result<Body> {
    let mut taus = c.taus.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
    taus.extend((0..c.n_tau).map(|_| rng.random_range(0.0..=1.0)));
    let grid = TimeGrid::new(1.0, c.grid_steps)?;
    let mut levels: Vec<u32> = c.levels.clone();
    levels.sort_unstable();
    levels.dedup();

    let per_level: Vec<Result<(Value, Vec<f64>, f64, bool)>> = levels
        .par_iter()
        .map(|&k| {
            let scheme = PartitionScheme::new(k)?;
            let sum_err = scheme.check_invariants(10_000)?;
            let reps = taus
                .iter()
                .map(|&t| partition_indicator_approx(&scheme, t, &grid))
                .collect::<Result<Vec<_>>>()?;
            let ident = reps.iter().map(|r| r.identity_error).fold(0.0, f64::max);
            let gaps: Vec<f64> = reps.iter().map(|r| r.l1_gap).collect();
            let within = reps.iter().all(|r| r.within_bound);
            let v = json!({
                "level": k,
                "partition_sum_error": sum_err,
                "identity_error": ident,
                "max_gap": gaps.iter().copied().fold(0.0, f64::max),
                "min_gap": gaps.iter().copied().fold(f64::INFINITY, f64::min),
                "bound": 3.0 * scheme.h(),
            });
            Ok((v, gaps, ident, within))
        })
        .collect();
    let per_level = per_level.into_iter().collect::<Result<Vec<_>>>()?;

    let mut body_failures = Vec::new();
    let mut ratio_min = f64::INFINITY;
    let mut ratio_max = 0.0f64;
    for (i, (_, gaps, ident, within)) in per_level.iter().enumerate() {
        let k = levels[i];
        if *ident > partition::PARTITION_TOL {
            body_failures.push(Failure::new("identity", format!("level {k}: error {ident:e}")));
        }
        if !within {
            body_failures.push(Failure::new("gap_bound", format!("level {k}: gap above 3 * 2^-k")));
        }
        if i > 0 && levels[i] == levels[i - 1] + 1 {
            for (a, b) in per_level[i - 1].1.iter().zip(gaps) {
                if *a == 0.0 && *b == 0.0 {
                    continue;
                }
                let r = a / b;
                ratio_min = ratio_min.min(r);
                ratio_max = ratio_max.max(r);
            }
        }
    }
    let ratio_ok = ratio_min == f64::INFINITY || (ratio_min >= 1.0 / 6.0 && ratio_max <= 6.0);
    if !ratio_ok {
        body_failures.push(Failure::new("gap_ratio", format!("consecutive ratios in [{ratio_min}, {ratio_max}]")));
    }
    let mut body = Body::new(json!({
        "taus": taus.len(),
        "levels": per_level.iter().map(|p| p.0.clone()).collect::<Vec<_>>(),
        "gap_ratio_min": if ratio_min.is_finite() { json!(ratio_min) } else { Value::Null },
        "gap_ratio_max": if ratio_min.is_finite() { json!(ratio_max) } else { Value::Null },
    }));
    body.tolerances = json!({ "identity": partition::PARTITION_TOL, "gap_bound": "3 * 2^-k", "ratio": [1.0 / 6.0, 6.0] });
    body.failures = body_failures;
    Ok(body)
}
