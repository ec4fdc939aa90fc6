//! Discretized paths on the canonical space, the path metric, and
//! deterministic per-path random streams.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};

/// Default truncation level of the path metric; the tail is at most `2^-20`.
pub const DEFAULT_METRIC_TERMS: u32 = 20;

/// Uniform grid on `[0, horizon]`. Only the horizon and step count are stored.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("steps must be at least 1".into()));
        }
        Ok(Self { horizon, steps })
    }

    /// Grid with step as close as possible to `dt` covering `[0, horizon]`.
    pub fn with_dt(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
        }
        let steps = (horizon / dt).round().max(1.0) as usize;
        Self::new(horizon, steps)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    /// Time of node `i`; node `steps` is exactly the horizon.
    #[inline]
    pub fn time(&self, i: usize) -> f64 {
        self.horizon * i as f64 / self.steps as f64
    }

    /// Largest node index whose time is `<= t` (clamped to the grid).
    pub fn last_node_at_or_before(&self, t: f64) -> usize {
        if t <= 0.0 {
            return 0;
        }
        if t >= self.horizon {
            return self.steps;
        }
        let mut i = ((t / self.horizon) * self.steps as f64).floor() as usize;
        i = i.min(self.steps);
        while i > 0 && self.time(i) > t {
            i -= 1;
        }
        while i < self.steps && self.time(i + 1) <= t {
            i += 1;
        }
        i
    }
}

/// A discretized continuous path: one `dim`-vector per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    grid: TimeGrid,
    dim: usize,
    states: Vec<f64>,
}

impl GridPath {
    /// Builds a path from row-major node states (`grid.nodes() * dim` values).
    pub fn from_flat(grid: TimeGrid, dim: usize, states: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if states.len() != grid.nodes() * dim {
            return Err(Error::GridMismatch(format!(
                "expected {} values for {} nodes of dimension {dim}, got {}",
                grid.nodes() * dim,
                grid.nodes(),
                states.len()
            )));
        }
        if let Some(pos) = states.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "non-finite coordinate at node {}",
                pos / dim
            )));
        }
        Ok(Self { grid, dim, states })
    }

    pub fn from_fn(grid: TimeGrid, dim: usize, f: impl Fn(f64) -> Vec<f64>) -> Result<Self> {
        let mut states = Vec::with_capacity(grid.nodes() * dim);
        for i in 0..grid.nodes() {
            let x = f(grid.time(i));
            if x.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: x.len(),
                });
            }
            states.extend_from_slice(&x);
        }
        Self::from_flat(grid, dim, states)
    }

    /// The 1-D path `t -> f(t)`.
    pub fn scalar(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_fn(grid, 1, |t| vec![f(t)])
    }

    pub fn constant(grid: TimeGrid, x: &[f64]) -> Result<Self> {
        Self::from_fn(grid, x.len(), |_| x.to_vec())
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.grid.nodes()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.dim)
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.states
    }

    fn check_compatible(&self, other: &GridPath) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: other.dim,
            });
        }
        if self.grid != other.grid {
            return Err(Error::GridMismatch(format!(
                "{:?} vs {:?}",
                self.grid, other.grid
            )));
        }
        Ok(())
    }

    /// Euclidean distances `|a_t - b_t|` node by node.
    fn node_distances<'a>(&'a self, other: &'a GridPath) -> impl Iterator<Item = f64> + 'a {
        self.states()
            .zip(other.states())
            .map(|(a, b)| euclidean(a, b))
    }
}

#[inline]
pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Value of the truncated path metric together with its worst-case tail.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricValue {
    pub value: f64,
    /// Upper bound on the omitted terms `N > n_max`, i.e. `2^-n_max`.
    pub tail_bound: f64,
}

/// Truncated metric of uniform convergence on compacts:
/// `sum_{N=1}^{n_max} 2^-N min(1, sup_{t <= N} |a_t - b_t|)`.
///
/// Terms with `N` beyond the horizon use the sup over the whole grid.
pub fn path_metric(a: &GridPath, b: &GridPath, n_max: u32) -> Result<MetricValue> {
    if n_max < 1 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    a.check_compatible(b)?;
    let running = running_sup(a.node_distances(b));
    Ok(metric_from_running_sup(a.grid(), &running, n_max))
}

/// `path_metric` against the constant path at `x` without materializing it.
pub fn path_metric_to_point(a: &GridPath, x: &[f64], n_max: u32) -> Result<MetricValue> {
    if n_max < 1 {
        return Err(Error::InvalidArgument("n_max must be at least 1".into()));
    }
    if x.len() != a.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            got: x.len(),
        });
    }
    let running = running_sup(a.states().map(|s| euclidean(s, x)));
    Ok(metric_from_running_sup(a.grid(), &running, n_max))
}

fn running_sup(dist: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0f64;
    dist.map(|d| {
        acc = acc.max(d);
        acc
    })
    .collect()
}

/// Metric from the running sup `m_i = max_{j <= i} |a_j - b_j|`.
pub(crate) fn metric_from_running_sup(grid: &TimeGrid, running: &[f64], n_max: u32) -> MetricValue {
    let mut value = 0.0;
    let mut weight = 1.0;
    for n in 1..=n_max {
        weight *= 0.5;
        let idx = grid.last_node_at_or_before(n as f64);
        value += weight * running[idx].min(1.0);
    }
    MetricValue {
        value,
        tail_bound: 0.5f64.powi(n_max as i32),
    }
}

/// Streaming form of the metric for paths visited node by node.
///
/// Feed distances for nodes `0, 1, 2, ...` in order. If the walk stops early,
/// [`MetricAccumulator::lower_bound`] is still a valid lower bound because
/// running sups only grow.
#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    checkpoints: Vec<usize>,
    recorded: f64,
    next: usize,
    running: f64,
}

impl MetricAccumulator {
    pub fn new(grid: &TimeGrid, n_max: u32) -> Self {
        Self {
            checkpoints: (1..=n_max.max(1)).map(|n| grid.last_node_at_or_before(n as f64)).collect(),
            recorded: 0.0,
            next: 0,
            running: 0.0,
        }
    }

    #[inline]
    pub fn push(&mut self, node: usize, dist: f64) {
        self.running = self.running.max(dist);
        while self.next < self.checkpoints.len() && self.checkpoints[self.next] == node {
            self.recorded += 0.5f64.powi(self.next as i32 + 1) * self.running.min(1.0);
            self.next += 1;
        }
    }

    /// Exact value once the last checkpoint node has been pushed.
    pub fn lower_bound(&self) -> f64 {
        let rest: f64 = (self.next..self.checkpoints.len())
            .map(|n| 0.5f64.powi(n as i32 + 1))
            .sum();
        self.recorded + rest * self.running.min(1.0)
    }

    pub fn is_complete(&self) -> bool {
        self.next == self.checkpoints.len()
    }
}

/// `max_{t_i <= up_to} |a_{t_i} - b_{t_i}|`.
pub fn sup_distance(a: &GridPath, b: &GridPath, up_to: f64) -> Result<f64> {
    a.check_compatible(b)?;
    if !(0.0..=a.grid().horizon()).contains(&up_to) {
        return Err(Error::InvalidArgument(format!(
            "up_to = {up_to} outside [0, {}]",
            a.grid().horizon()
        )));
    }
    let last = a.grid().last_node_at_or_before(up_to);
    Ok(a.node_distances(b).take(last + 1).fold(0.0, f64::max))
}

/// Node-wise sum `p + bump`.
pub fn perturb(p: &GridPath, bump: &GridPath) -> Result<GridPath> {
    p.check_compatible(bump)?;
    let states = p
        .states
        .iter()
        .zip(&bump.states)
        .map(|(x, b)| x + b)
        .collect();
    GridPath::from_flat(p.grid, p.dim, states)
}

/// Random stream identity: the variates depend on `(seed, path_index)` only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub path_index: u64,
}

impl RngStream {
    pub fn new(seed: u64, path_index: u64) -> Self {
        Self { seed, path_index }
    }

    /// ChaCha8 keyed by `seed`, on stream `path_index`; steps draw sequentially.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.path_index);
        rng
    }
}

#[derive(Serialize)]
struct NdjsonPath<'a> {
    index: u64,
    t0: f64,
    dt: f64,
    states: Vec<&'a [f64]>,
}

/// One JSON object per path: `{"index", "t0", "dt", "states"}`.
pub fn write_ndjson<'a, W: Write>(
    mut w: W,
    paths: impl IntoIterator<Item = (u64, &'a GridPath)>,
) -> Result<()> {
    for (index, path) in paths {
        let row = NdjsonPath {
            index,
            t0: 0.0,
            dt: path.grid().dt(),
            states: path.states().collect(),
        };
        serde_json::to_writer(&mut w, &row)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// CSV with one row per node: `index,step,t,x0,...`.
pub fn write_csv<'a, W: Write>(
    mut w: W,
    dim: usize,
    paths: impl IntoIterator<Item = (u64, &'a GridPath)>,
) -> Result<()> {
    write!(w, "index,step,t")?;
    for j in 0..dim {
        write!(w, ",x{j}")?;
    }
    writeln!(w)?;
    for (index, path) in paths {
        for (i, s) in path.states().enumerate() {
            write!(w, "{index},{i},{}", path.grid().time(i))?;
            for v in s {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn grid(h: f64, n: usize) -> TimeGrid {
        TimeGrid::new(h, n).unwrap()
    }

    #[test]
    fn grid_rejects_zero_steps() {
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(0.0, 3).is_err());
    }

    #[test]
    fn grid_end_is_exact_horizon() {
        let g = grid(4.0, 3000);
        assert_eq!(g.time(g.steps()), 4.0);
        assert_eq!(g.last_node_at_or_before(1.0), 750);
        assert_eq!(g.last_node_at_or_before(10.0), 3000);
    }

    #[test]
    fn metric_identity_is_zero() {
        let g = grid(20.0, 200);
        let a = GridPath::scalar(g, |t| t.sin()).unwrap();
        let m = path_metric(&a, &a, 20).unwrap();
        assert_eq!(m.value, 0.0);
    }

    #[test]
    fn metric_constant_paths() {
        let g = grid(20.0, 40);
        let one = GridPath::constant(g, &[1.0]).unwrap();
        let zero = GridPath::constant(g, &[0.0]).unwrap();
        let half = GridPath::constant(g, &[0.5]).unwrap();
        let m = path_metric(&one, &zero, 20).unwrap();
        assert!((m.value - (1.0 - 2f64.powi(-20))).abs() < 1e-15);
        assert_eq!(m.tail_bound, 2f64.powi(-20));
        let m = path_metric(&half, &zero, 20).unwrap();
        assert!((m.value - 0.5 * (1.0 - 2f64.powi(-20))).abs() < 1e-15);
    }

    #[test]
    fn metric_rejects_bad_arguments() {
        let g = grid(2.0, 4);
        let a = GridPath::constant(g, &[0.0]).unwrap();
        let b = GridPath::constant(g, &[0.0, 1.0]).unwrap();
        assert!(matches!(path_metric(&a, &a, 0), Err(Error::InvalidArgument(_))));
        assert!(matches!(
            path_metric(&a, &b, 5),
            Err(Error::DimensionMismatch { .. })
        ));
        let c = GridPath::constant(grid(2.0, 8), &[0.0]).unwrap();
        assert!(matches!(path_metric(&a, &c, 5), Err(Error::GridMismatch(_))));
    }

    #[test]
    fn accumulator_matches_batch_metric() {
        let g = grid(3.0, 30);
        let a = GridPath::scalar(g, |t| (2.0 * t).sin() * 0.7).unwrap();
        let mut acc = MetricAccumulator::new(&g, 20);
        for (i, s) in a.states().enumerate() {
            acc.push(i, s[0].abs());
            if i == 12 {
                assert!(!acc.is_complete());
            }
        }
        assert!(acc.is_complete());
        let batch = path_metric_to_point(&a, &[0.0], 20).unwrap().value;
        assert!((acc.lower_bound() - batch).abs() < 1e-15);
    }

    #[test]
    fn sup_distance_examples() {
        let g = grid(1.0, 100);
        let a = GridPath::scalar(g, |t| t).unwrap();
        let b = GridPath::scalar(g, |t| 2.0 * t).unwrap();
        assert_eq!(sup_distance(&a, &a, 1.0).unwrap(), 0.0);
        assert!((sup_distance(&a, &b, 1.0).unwrap() - 1.0).abs() < 1e-15);

        let zero = GridPath::constant(g, &[0.0]).unwrap();
        let tent = GridPath::scalar(g, |t| 3.0 * (1.0 - (2.0 * t - 1.0).abs())).unwrap();
        assert!((sup_distance(&zero, &tent, 1.0).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn perturb_examples() {
        let g = grid(1.0, 10);
        let p = GridPath::scalar(g, |t| t * t).unwrap();
        let zero = GridPath::constant(g, &[0.0]).unwrap();
        assert_eq!(perturb(&p, &zero).unwrap(), p);
        let c = GridPath::constant(g, &[0.3]).unwrap();
        assert_eq!(perturb(&zero, &c).unwrap(), c);
        let bump = GridPath::scalar(g, |t| (5.0 * t).cos()).unwrap();
        let q = perturb(&p, &bump).unwrap();
        let lhs = sup_distance(&p, &q, 1.0).unwrap();
        let rhs = sup_distance(&zero, &bump, 1.0).unwrap();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn rng_stream_is_pure() {
        let draw = |seed, idx| {
            let mut r = RngStream::new(seed, idx).rng();
            (0..8).map(|_| r.random::<u64>()).collect::<Vec<_>>()
        };
        assert_eq!(draw(7, 3), draw(7, 3));
        assert_ne!(draw(7, 3), draw(7, 4));
        assert_ne!(draw(7, 3), draw(8, 3));
    }

    #[test]
    fn ndjson_row_shape() {
        let g = grid(1.0, 2);
        let p = GridPath::constant(g, &[1.0, 2.0]).unwrap();
        let mut buf = Vec::new();
        write_ndjson(&mut buf, [(5u64, &p)]).unwrap();
        let v: serde_json::Value = serde_json::from_slice(&buf).unwrap();
        assert_eq!(v["index"], 5);
        assert_eq!(v["t0"], 0.0);
        assert_eq!(v["dt"], 0.5);
        assert_eq!(v["states"].as_array().unwrap().len(), 3);
    }
}
