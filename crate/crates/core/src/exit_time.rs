//! First exit times from `Q` and from its closure on grid paths, stopped
//! paths, and the semicontinuity probe.
//!
//! Detection is first-node: `tau_open` is the first grid time whose state is
//! not in `Q` (boundary counts as exited), `tau_closed` the first grid time
//! whose state lies outside the closure. No bridge correction is applied, so
//! for diffusions the grid times overshoot the continuous ones by `O(√dt)`.

use std::io::Write;

use serde::{Serialize, Serializer};

use crate::domain_geometry::{DomainSpec, Region};
use crate::error::{Error, Result};
use crate::measure_family::{PathFailure, Walker};
use crate::path_engine::{perturb, sup_distance, GridPath, TimeGrid};

/// An exit time on a finite grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExitTime {
    At(f64),
    /// No exit at any node up to the horizon.
    NotBeforeHorizon,
}

impl ExitTime {
    /// `min(τ, clamp)`; the sentinel maps to `clamp`, which is exact when
    /// `clamp` does not exceed the horizon.
    #[inline]
    pub fn clamped(self, clamp: f64) -> f64 {
        match self {
            Self::At(t) => t.min(clamp),
            Self::NotBeforeHorizon => clamp,
        }
    }

    pub fn time(self) -> Option<f64> {
        match self {
            Self::At(t) => Some(t),
            Self::NotBeforeHorizon => None,
        }
    }

    pub fn is_finite(self) -> bool {
        matches!(self, Self::At(_))
    }
}

impl PartialOrd for ExitTime {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        use std::cmp::Ordering::*;
        match (self, other) {
            (Self::At(a), Self::At(b)) => a.partial_cmp(b),
            (Self::At(_), Self::NotBeforeHorizon) => Some(Less),
            (Self::NotBeforeHorizon, Self::At(_)) => Some(Greater),
            (Self::NotBeforeHorizon, Self::NotBeforeHorizon) => Some(Equal),
        }
    }
}

impl Serialize for ExitTime {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Self::At(t) => s.serialize_f64(*t),
            Self::NotBeforeHorizon => s.serialize_str("not_before_horizon"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExitReport {
    pub tau_open: ExitTime,
    pub tau_closed: ExitTime,
    pub hit_index_open: Option<usize>,
    pub hit_index_closed: Option<usize>,
    pub grid_dt: f64,
}

impl ExitReport {
    /// Interval guaranteed to contain the continuous exit time of a path
    /// that crosses the boundary transversally between nodes.
    pub fn open_bracket(&self) -> Option<(f64, f64)> {
        self.tau_open.time().map(|t| ((t - self.grid_dt).max(0.0), t))
    }
}

/// Incremental first-node exit detection.
#[derive(Debug, Clone)]
pub struct ExitTracker<'a> {
    domain: &'a DomainSpec,
    open: Option<usize>,
    closed: Option<usize>,
}

impl<'a> ExitTracker<'a> {
    pub fn new(domain: &'a DomainSpec) -> Self {
        Self {
            domain,
            open: None,
            closed: None,
        }
    }

    /// Feeds node `i`; returns `true` once both exit times are known.
    #[inline]
    pub fn observe(&mut self, i: usize, x: &[f64]) -> bool {
        if self.closed.is_some() {
            return true;
        }
        match self.domain.classify_unchecked(x) {
            Region::InQ => {}
            Region::OnBoundary => {
                self.open.get_or_insert(i);
            }
            Region::InClosureComplement => {
                self.open.get_or_insert(i);
                self.closed = Some(i);
            }
        }
        self.closed.is_some()
    }

    pub fn open_index(&self) -> Option<usize> {
        self.open
    }

    pub fn closed_index(&self) -> Option<usize> {
        self.closed
    }

    pub fn report(&self, grid: &TimeGrid) -> ExitReport {
        let at = |idx: Option<usize>| idx.map_or(ExitTime::NotBeforeHorizon, |i| ExitTime::At(grid.time(i)));
        ExitReport {
            tau_open: at(self.open),
            tau_closed: at(self.closed),
            hit_index_open: self.open,
            hit_index_closed: self.closed,
            grid_dt: grid.dt(),
        }
    }
}

/// `τ_Q` and `τ_Q̄` of a grid path.
pub fn exit_times(p: &GridPath, q: &DomainSpec) -> Result<ExitReport> {
    if p.dim() != q.dim() {
        return Err(Error::DimensionMismatch {
            expected: q.dim(),
            got: p.dim(),
        });
    }
    let mut tracker = ExitTracker::new(q);
    for (i, x) in p.states().enumerate() {
        if tracker.observe(i, x) {
            break;
        }
    }
    Ok(tracker.report(p.grid()))
}

/// Streams a simulated path until it leaves the closure of `q` or reaches
/// node `last_node`; exit times past `last_node` are reported as the sentinel.
pub fn walk_exit(walker: &mut Walker<'_>, q: &DomainSpec, last_node: usize) -> std::result::Result<ExitReport, PathFailure> {
    let mut tracker = ExitTracker::new(q);
    loop {
        if tracker.observe(walker.step(), walker.state()) || walker.step() >= last_node {
            break;
        }
        if !walker.advance()? {
            break;
        }
    }
    Ok(tracker.report(walker.grid()))
}

/// The path frozen at its last node at or before `tau`.
pub fn stopped_path(p: &GridPath, tau: f64) -> Result<GridPath> {
    if tau.is_nan() || tau < 0.0 {
        return Err(Error::InvalidArgument(format!("stopping time must be >= 0, got {tau}")));
    }
    let grid = *p.grid();
    let stop = grid.last_node_at_or_before(tau);
    let d = p.dim();
    let mut states = Vec::with_capacity(grid.nodes() * d);
    for i in 0..grid.nodes() {
        states.extend_from_slice(p.state(i.min(stop)));
    }
    GridPath::from_flat(grid, d, states)
}

/// One row of the semicontinuity probe.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SemicontinuityRow {
    /// Sup distance between the base and the perturbed path.
    pub delta: f64,
    /// `max(0, τ_Q(base)∧c − τ_Q(base+bump)∧c)`: lower-semicontinuity defect.
    pub v_lsc: f64,
    /// `max(0, τ_Q̄(base+bump)∧c − τ_Q̄(base)∧c)`: upper-semicontinuity defect.
    pub v_usc: f64,
}

pub fn semicontinuity_probe(
    base: &GridPath,
    q: &DomainSpec,
    bumps: &[GridPath],
    clamp: f64,
) -> Result<Vec<SemicontinuityRow>> {
    let b = exit_times(base, q)?;
    let horizon = base.grid().horizon();
    bumps
        .iter()
        .map(|bump| {
            let moved = perturb(base, bump)?;
            let m = exit_times(&moved, q)?;
            Ok(SemicontinuityRow {
                delta: sup_distance(base, &moved, horizon)?,
                v_lsc: (b.tau_open.clamped(clamp) - m.tau_open.clamped(clamp)).max(0.0),
                v_usc: (m.tau_closed.clamped(clamp) - b.tau_closed.clamped(clamp)).max(0.0),
            })
        })
        .collect()
}

/// One row of the exit statistics export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExitRow {
    pub law_id: usize,
    pub path_index: u64,
    pub report: ExitReport,
    pub clamped: f64,
}

/// CSV: `law_id,path_index,tau_open,tau_closed,clamped,hit_index_open,hit_index_closed`.
/// Missing exits are written as `none`.
pub fn write_exit_csv<W: Write>(mut w: W, rows: &[ExitRow]) -> Result<()> {
    writeln!(w, "law_id,path_index,tau_open,tau_closed,clamped,hit_index_open,hit_index_closed")?;
    let t = |e: ExitTime| e.time().map_or("none".to_string(), |v| v.to_string());
    let i = |e: Option<usize>| e.map_or("none".to_string(), |v| v.to_string());
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.law_id,
            r.path_index,
            t(r.report.tau_open),
            t(r.report.tau_closed),
            r.clamped,
            i(r.report.hit_index_open),
            i(r.report.hit_index_closed)
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(h: f64, n: usize) -> GridPath {
        GridPath::scalar(TimeGrid::new(h, n).unwrap(), |t| -1.0 + t).unwrap()
    }

    #[test]
    fn linear_crossing() {
        let p = line(2.0, 200);
        let dt = p.grid().dt();
        let r = exit_times(&p, &DomainSpec::lower_ray(0.0)).unwrap();
        assert_eq!(r.tau_open, ExitTime::At(1.0));
        let ExitTime::At(tc) = r.tau_closed else {
            panic!("no closed exit")
        };
        assert!((tc - (1.0 + dt)).abs() < 1e-12);
        assert_eq!(r.hit_index_closed, Some(101));
    }

    #[test]
    fn constant_path_inside_never_exits() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let p = GridPath::constant(g, &[-0.5]).unwrap();
        let r = exit_times(&p, &DomainSpec::lower_ray(0.0)).unwrap();
        assert_eq!(r.tau_open, ExitTime::NotBeforeHorizon);
        assert_eq!(r.tau_closed, ExitTime::NotBeforeHorizon);
        assert_eq!(r.tau_open.clamped(1.0), 1.0);
    }

    #[test]
    fn point_mass_exit_values() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let q = DomainSpec::lower_ray(0.0);
        let up = exit_times(&GridPath::constant(g, &[0.5]).unwrap(), &q).unwrap();
        let down = exit_times(&GridPath::constant(g, &[-0.5]).unwrap(), &q).unwrap();
        assert_eq!(up.tau_open.clamped(1.0), 0.0);
        assert_eq!(down.tau_open.clamped(1.0), 1.0);
    }

    #[test]
    fn dimension_mismatch() {
        let p = line(1.0, 4);
        assert!(matches!(
            exit_times(&p, &DomainSpec::Strip2D),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn stopped_path_examples() {
        let p = GridPath::scalar(TimeGrid::new(1.0, 20).unwrap(), |t| t.sin()).unwrap();
        assert_eq!(stopped_path(&p, 1.0).unwrap(), p);
        assert_eq!(stopped_path(&p, 5.0).unwrap(), p);
        let s0 = stopped_path(&p, 0.0).unwrap();
        assert!(s0.states().all(|s| s == p.state(0)));
        let s = stopped_path(&p, 0.37).unwrap();
        assert_eq!(stopped_path(&s, 0.37).unwrap(), s);
        assert_eq!(s.state(20), p.state(7));
        assert!(stopped_path(&p, -1.0).is_err());
    }

    #[test]
    fn probe_with_zero_bumps() {
        let p = line(2.0, 200);
        let zero = GridPath::constant(*p.grid(), &[0.0]).unwrap();
        let rows = semicontinuity_probe(&p, &DomainSpec::lower_ray(0.0), &[zero.clone(), zero], 2.0).unwrap();
        assert!(rows.iter().all(|r| r.delta == 0.0 && r.v_lsc == 0.0 && r.v_usc == 0.0));
    }

    #[test]
    fn probe_unit_slope_geometry() {
        let p = line(2.0, 2000);
        let g = *p.grid();
        let dt = g.dt();
        let q = DomainSpec::lower_ray(0.0);
        let delta = 0.1;
        let up = GridPath::constant(g, &[delta]).unwrap();
        let down = GridPath::constant(g, &[-delta]).unwrap();
        let rows = semicontinuity_probe(&p, &q, &[up, down], 2.0).unwrap();
        // Shift up: the open exit moves from 1 to 1 - δ.
        assert!((rows[0].v_lsc - delta).abs() <= dt + 1e-12, "{:?}", rows[0]);
        assert_eq!(rows[0].v_usc, 0.0);
        // Shift down: the exits move later by δ.
        assert_eq!(rows[1].v_lsc, 0.0);
        assert!((rows[1].v_usc - delta).abs() <= dt + 1e-12, "{:?}", rows[1]);
        assert!((rows[0].delta - delta).abs() < 1e-12);
    }

    #[test]
    fn exit_csv_uses_sentinel_text() {
        let rows = [ExitRow {
            law_id: 1,
            path_index: 2,
            report: ExitReport {
                tau_open: ExitTime::At(0.5),
                tau_closed: ExitTime::NotBeforeHorizon,
                hit_index_open: Some(5),
                hit_index_closed: None,
                grid_dt: 0.1,
            },
            clamped: 0.5,
        }];
        let mut buf = Vec::new();
        write_exit_csv(&mut buf, &rows).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s.lines().nth(1).unwrap(), "1,2,0.5,none,0.5,5,none");
    }
}
