//! Path ensembles under each law of a parametrized family, with the
//! decomposition `Y = M + A` and the quadratic-variation ledger `<M>`.
//!
//! A law is a piecewise-constant selection from a control set `Γ`
//! ([`ControlLaw`]); a [`LawSimulator`] turns one law into paths. Paths can
//! be materialized as [`SemimartingaleRecord`]s or streamed node by node
//! through a [`Walker`] when only a functional of the path is needed.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, check_psd, psd_factor};
use crate::path_engine::{GridPath, RngStream, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Spacing {
    #[default]
    Linear,
    Geometric,
}

/// The set `Γ` of admissible quadratic-variation densities (or, for the
/// point-mass family, of constant paths).
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSet {
    /// `Γ = {σ² : σ in a grid of [sigma_lo, sigma_hi]}` in one dimension.
    ScalarVolInterval { sigmas: Vec<f64> },
    MatrixList(Vec<DMatrix<f64>>),
    /// `Γ = {diag(α, 1 - α)}`.
    AnisotropicDiag2 { alphas: Vec<f64> },
    /// Laws concentrated on the constant paths `ω^x`.
    PointMass { xs: Vec<f64> },
}

fn sorted_grid(mut v: Vec<f64>, what: &str) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidArgument(format!("{what} grid has non-finite values")));
    }
    v.sort_by(f64::total_cmp);
    v.dedup();
    Ok(v)
}

impl ControlSet {
    /// `n` volatilities from `sigma_lo` to `sigma_hi` (both included).
    pub fn scalar_interval(sigma_lo: f64, sigma_hi: f64, n: usize, spacing: Spacing) -> Result<Self> {
        if !(sigma_lo >= 0.0 && sigma_hi >= sigma_lo && sigma_hi.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "need 0 <= sigma_lo <= sigma_hi, got [{sigma_lo}, {sigma_hi}]"
            )));
        }
        if n == 0 {
            return Err(Error::EmptyFamily("volatility grid has no points".into()));
        }
        let sigmas = if n == 1 || sigma_lo == sigma_hi {
            vec![sigma_lo]
        } else {
            match spacing {
                Spacing::Linear => (0..n)
                    .map(|i| sigma_lo + (sigma_hi - sigma_lo) * i as f64 / (n - 1) as f64)
                    .collect(),
                Spacing::Geometric => {
                    if sigma_lo <= 0.0 {
                        return Err(Error::InvalidArgument(
                            "geometric spacing needs sigma_lo > 0".into(),
                        ));
                    }
                    let ratio = (sigma_hi / sigma_lo).ln() / (n - 1) as f64;
                    (0..n)
                        .map(|i| {
                            if i == n - 1 {
                                sigma_hi
                            } else {
                                sigma_lo * (ratio * i as f64).exp()
                            }
                        })
                        .collect()
                }
            }
        };
        Self::scalar_vols(sigmas)
    }

    pub fn scalar_vols(sigmas: Vec<f64>) -> Result<Self> {
        if sigmas.iter().any(|s| *s < 0.0) {
            return Err(Error::InvalidArgument("volatilities must be nonnegative".into()));
        }
        let sigmas = sorted_grid(sigmas, "volatility")?;
        if sigmas.is_empty() {
            return Err(Error::EmptyFamily("volatility grid has no points".into()));
        }
        Ok(Self::ScalarVolInterval { sigmas })
    }

    pub fn matrix_list(ms: Vec<DMatrix<f64>>) -> Result<Self> {
        let Some(first) = ms.first() else {
            return Err(Error::EmptyFamily("matrix list is empty".into()));
        };
        let k = first.nrows();
        for m in &ms {
            if m.nrows() != k {
                return Err(Error::DimensionMismatch {
                    expected: k,
                    got: m.nrows(),
                });
            }
            check_psd(m)?;
        }
        Ok(Self::MatrixList(ms))
    }

    pub fn anisotropic(alphas: Vec<f64>) -> Result<Self> {
        if alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidArgument("alpha must lie in [0, 1]".into()));
        }
        let alphas = sorted_grid(alphas, "alpha")?;
        if alphas.is_empty() {
            return Err(Error::EmptyFamily("alpha grid is empty".into()));
        }
        Ok(Self::AnisotropicDiag2 { alphas })
    }

    pub fn point_mass(xs: Vec<f64>) -> Result<Self> {
        if xs.iter().any(|x| !(-1.0..=1.0).contains(x)) {
            return Err(Error::InvalidArgument("point masses live in [-1, 1]".into()));
        }
        let xs = sorted_grid(xs, "point")?;
        if xs.is_empty() {
            return Err(Error::EmptyFamily("point grid is empty".into()));
        }
        Ok(Self::PointMass { xs })
    }

    pub fn len(&self) -> usize {
        match self {
            Self::ScalarVolInterval { sigmas } => sigmas.len(),
            Self::MatrixList(ms) => ms.len(),
            Self::AnisotropicDiag2 { alphas } => alphas.len(),
            Self::PointMass { xs } => xs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Noise dimension `k` of the matrix-valued sets.
    pub fn noise_dim(&self) -> Option<usize> {
        match self {
            Self::ScalarVolInterval { .. } => Some(1),
            Self::MatrixList(ms) => ms.first().map(|m| m.nrows()),
            Self::AnisotropicDiag2 { .. } => Some(2),
            Self::PointMass { .. } => None,
        }
    }

    /// Element `i` as a `k x k` PSD matrix.
    pub fn matrix(&self, i: usize) -> Option<DMatrix<f64>> {
        match self {
            Self::ScalarVolInterval { sigmas } => {
                sigmas.get(i).map(|s| DMatrix::from_element(1, 1, s * s))
            }
            Self::MatrixList(ms) => ms.get(i).cloned(),
            Self::AnisotropicDiag2 { alphas } => alphas
                .get(i)
                .map(|a| DMatrix::from_row_slice(2, 2, &[*a, 0.0, 0.0, 1.0 - a])),
            Self::PointMass { .. } => None,
        }
    }

    pub fn label(&self, i: usize) -> String {
        match self {
            Self::ScalarVolInterval { sigmas } => format!("sigma={}", sigmas[i]),
            Self::MatrixList(_) => format!("gamma[{i}]"),
            Self::AnisotropicDiag2 { alphas } => format!("alpha={}", alphas[i]),
            Self::PointMass { xs } => format!("x={}", xs[i]),
        }
    }
}

/// One piece of a piecewise-constant schedule: from `start` on, use `element`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Piece {
    pub start: f64,
    pub element: usize,
}

/// Discrete surrogate for one measure `P` in the family: a piecewise-constant
/// map from time to elements of the control set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ControlLaw {
    pub id: usize,
    pub label: String,
    pieces: Vec<Piece>,
}

impl ControlLaw {
    pub fn constant(id: usize, element: usize, label: impl Into<String>) -> Self {
        Self {
            id,
            label: label.into(),
            pieces: vec![Piece {
                start: 0.0,
                element,
            }],
        }
    }

    pub fn piecewise(id: usize, label: impl Into<String>, mut pieces: Vec<Piece>) -> Result<Self> {
        pieces.sort_by(|a, b| a.start.total_cmp(&b.start));
        if pieces.first().is_none_or(|p| p.start > 0.0) {
            return Err(Error::InvalidArgument("schedule must start at time 0".into()));
        }
        Ok(Self {
            id,
            label: label.into(),
            pieces,
        })
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.pieces
    }

    pub fn element_at(&self, t: f64) -> usize {
        let idx = self.pieces.partition_point(|p| p.start <= t);
        self.pieces[idx.saturating_sub(1)].element
    }

    pub fn is_constant(&self) -> bool {
        self.pieces.windows(2).all(|w| w[0].element == w[1].element)
    }

    fn check_against(&self, set: &ControlSet) -> Result<()> {
        if let Some(p) = self.pieces.iter().find(|p| p.element >= set.len()) {
            return Err(Error::InvalidArgument(format!(
                "law {} schedules element {} outside the control set of size {}",
                self.id,
                p.element,
                set.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScheduleMode {
    ConstantOnly,
    /// Constants plus every `a -> b` switch at each of the given times.
    OneSwitch { switch_times: Vec<f64> },
    /// Constants plus `count` random schedules switching at the given times.
    RandomSwitch {
        count: usize,
        switch_times: Vec<f64>,
        seed: u64,
    },
}

/// Finite list of control laws standing in for the whole family.
pub fn family_controls(cs: &ControlSet, mode: &ScheduleMode) -> Result<Vec<ControlLaw>> {
    if cs.is_empty() {
        return Err(Error::EmptyFamily("control set is empty".into()));
    }
    let n = cs.len();
    let mut laws: Vec<ControlLaw> = (0..n)
        .map(|e| ControlLaw::constant(e, e, cs.label(e)))
        .collect();
    match mode {
        ScheduleMode::ConstantOnly => {}
        ScheduleMode::OneSwitch { switch_times } => {
            for a in 0..n {
                for b in 0..n {
                    for &t in switch_times {
                        let id = laws.len();
                        let label = format!("{}->{}@{t}", cs.label(a), cs.label(b));
                        laws.push(ControlLaw::piecewise(
                            id,
                            label,
                            vec![
                                Piece { start: 0.0, element: a },
                                Piece { start: t, element: b },
                            ],
                        )?);
                    }
                }
            }
        }
        ScheduleMode::RandomSwitch {
            count,
            switch_times,
            seed,
        } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let mut starts = vec![0.0];
            starts.extend(switch_times.iter().copied().filter(|t| *t > 0.0));
            for _ in 0..*count {
                let id = laws.len();
                let pieces: Vec<Piece> = starts
                    .iter()
                    .map(|&start| Piece {
                        start,
                        element: rng.random_range(0..n),
                    })
                    .collect();
                let label = format!(
                    "random[{}]",
                    pieces
                        .iter()
                        .map(|p| p.element.to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                );
                laws.push(ControlLaw::piecewise(id, label, pieces)?);
            }
        }
    }
    Ok(laws)
}

type VecField = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// Coefficients of `dX = b dt + Σ h_ij d<B^i,B^j> + Σ σ_j dB^j`.
///
/// `sigma` writes the `d x k` matrix row-major; `h` writes `k * k` vectors of
/// length `d`, with `h_ij` at offset `(i * k + j) * d`.
#[derive(Clone)]
pub struct SdeCoefficients {
    pub dim: usize,
    pub noise_dim: usize,
    drift: Arc<VecField>,
    sigma: Arc<VecField>,
    h: Option<Arc<VecField>>,
    pub lipschitz: f64,
    pub nondegeneracy: f64,
}

impl fmt::Debug for SdeCoefficients {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeCoefficients")
            .field("dim", &self.dim)
            .field("noise_dim", &self.noise_dim)
            .field("lipschitz", &self.lipschitz)
            .field("nondegeneracy", &self.nondegeneracy)
            .finish_non_exhaustive()
    }
}

impl SdeCoefficients {
    pub fn new(
        dim: usize,
        noise_dim: usize,
        drift: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        sigma: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            noise_dim,
            drift: Arc::new(drift),
            sigma: Arc::new(sigma),
            h: None,
            lipschitz: 0.0,
            nondegeneracy: 0.0,
        }
    }

    pub fn with_cross_variation(
        mut self,
        h: impl Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    ) -> Self {
        self.h = Some(Arc::new(h));
        self
    }

    pub fn with_constants(mut self, lipschitz: f64, nondegeneracy: f64) -> Self {
        self.lipschitz = lipschitz;
        self.nondegeneracy = nondegeneracy;
        self
    }

    /// Constant drift and constant `d x k` diffusion matrix (row-major).
    pub fn constant(drift: Vec<f64>, sigma: Vec<f64>, noise_dim: usize) -> Result<Self> {
        let dim = drift.len();
        if sigma.len() != dim * noise_dim {
            return Err(Error::DimensionMismatch {
                expected: dim * noise_dim,
                got: sigma.len(),
            });
        }
        Ok(Self::new(
            dim,
            noise_dim,
            move |_, _, out| out.copy_from_slice(&drift),
            move |_, _, out| out.copy_from_slice(&sigma),
        ))
    }
}

/// A materialized path with its semimartingale ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct SemimartingaleRecord {
    pub law_id: usize,
    pub path_index: u64,
    pub path: GridPath,
    mart_inc: Vec<f64>,
    fv_inc: Vec<f64>,
    qv_inc: Vec<f64>,
}

impl SemimartingaleRecord {
    pub fn dim(&self) -> usize {
        self.path.dim()
    }

    pub fn steps(&self) -> usize {
        self.path.grid().steps()
    }

    /// `ΔM` over step `i`.
    pub fn mart_inc(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.mart_inc[i * d..(i + 1) * d]
    }

    /// `ΔA` over step `i`.
    pub fn fv_inc(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.fv_inc[i * d..(i + 1) * d]
    }

    /// `Δ<M>` over step `i`, `d x d` row-major.
    pub fn qv_inc(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.qv_inc[i * d * d..(i + 1) * d * d]
    }

    pub fn qv_matrix(&self, i: usize) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_row_slice(d, d, self.qv_inc(i))
    }
}

/// Simulation failure of one path (non-finite state).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct PathFailure {
    pub path_index: u64,
    pub step: usize,
}

/// All simulated paths of one law.
#[derive(Debug, Clone)]
pub struct Ensemble {
    pub law_id: usize,
    pub label: String,
    pub records: Vec<SemimartingaleRecord>,
    pub failures: Vec<PathFailure>,
}

#[derive(Clone, Debug)]
enum Kind {
    /// `Y = B` under the law: `ΔM = L ξ √dt`.
    Brownian,
    Sde(SdeCoefficients),
    /// No randomness, no increments.
    Frozen,
}

/// Simulator for one law of the family on a fixed grid.
#[derive(Debug, Clone)]
pub struct LawSimulator {
    law_id: usize,
    label: String,
    grid: TimeGrid,
    dim: usize,
    noise_dim: usize,
    x0: Vec<f64>,
    kind: Kind,
    /// Control element used on each step.
    schedule: Vec<u32>,
    /// Row-major `k x k` factor per element.
    factors: Vec<Vec<f64>>,
    /// Row-major `k x k` control per element.
    gammas: Vec<Vec<f64>>,
    sqrt_dt: f64,
}

fn resolve(set: &ControlSet, law: &ControlLaw, grid: &TimeGrid) -> Result<(Vec<u32>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    law.check_against(set)?;
    let mut factors = Vec::with_capacity(set.len());
    let mut gammas = Vec::with_capacity(set.len());
    for e in 0..set.len() {
        let g = set
            .matrix(e)
            .ok_or_else(|| Error::InvalidArgument("control set has no matrices".into()))?;
        let l = psd_factor(&g)?;
        gammas.push(g.transpose().as_slice().to_vec());
        factors.push(l.transpose().as_slice().to_vec());
    }
    let schedule = (0..grid.steps())
        .map(|i| law.element_at(grid.time(i)) as u32)
        .collect();
    Ok((schedule, factors, gammas))
}

impl LawSimulator {
    /// The canonical process under a G-Brownian law with controls from `set`.
    pub fn brownian(set: &ControlSet, law: &ControlLaw, grid: TimeGrid, x0: &[f64]) -> Result<Self> {
        let k = set
            .noise_dim()
            .ok_or_else(|| Error::InvalidArgument("point-mass set has no volatility".into()))?;
        if x0.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: x0.len(),
            });
        }
        let (schedule, factors, gammas) = resolve(set, law, &grid)?;
        Ok(Self {
            law_id: law.id,
            label: law.label.clone(),
            grid,
            dim: k,
            noise_dim: k,
            x0: x0.to_vec(),
            kind: Kind::Brownian,
            schedule,
            factors,
            gammas,
            sqrt_dt: grid.dt().sqrt(),
        })
    }

    /// Euler scheme for a G-SDE driven by the controlled noise.
    pub fn sde(
        coeffs: SdeCoefficients,
        set: &ControlSet,
        law: &ControlLaw,
        grid: TimeGrid,
        x0: &[f64],
    ) -> Result<Self> {
        let k = set
            .noise_dim()
            .ok_or_else(|| Error::InvalidArgument("point-mass set has no volatility".into()))?;
        if coeffs.noise_dim != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: coeffs.noise_dim,
            });
        }
        if x0.len() != coeffs.dim {
            return Err(Error::DimensionMismatch {
                expected: coeffs.dim,
                got: x0.len(),
            });
        }
        let (schedule, factors, gammas) = resolve(set, law, &grid)?;
        Ok(Self {
            law_id: law.id,
            label: law.label.clone(),
            grid,
            dim: coeffs.dim,
            noise_dim: k,
            x0: x0.to_vec(),
            kind: Kind::Sde(coeffs),
            schedule,
            factors,
            gammas,
            sqrt_dt: grid.dt().sqrt(),
        })
    }

    /// The law concentrated on the constant path at `x`.
    pub fn frozen(law_id: usize, label: impl Into<String>, grid: TimeGrid, x: &[f64]) -> Self {
        Self {
            law_id,
            label: label.into(),
            grid,
            dim: x.len(),
            noise_dim: 0,
            x0: x.to_vec(),
            kind: Kind::Frozen,
            schedule: Vec::new(),
            factors: Vec::new(),
            gammas: Vec::new(),
            sqrt_dt: grid.dt().sqrt(),
        }
    }

    pub fn law_id(&self) -> usize {
        self.law_id
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn x0(&self) -> &[f64] {
        &self.x0
    }

    /// Whether the law is a Dirac mass (a single deterministic path).
    pub fn is_deterministic(&self) -> bool {
        matches!(self.kind, Kind::Frozen)
    }

    pub fn walker(&self, seed: u64, path_index: u64) -> Walker<'_> {
        Walker {
            sim: self,
            rng: RngStream::new(seed, path_index).rng(),
            x: self.x0.clone(),
            step: 0,
            xi: vec![0.0; self.noise_dim],
            db: vec![0.0; self.noise_dim],
            scratch: Scratch::new(self.dim, self.noise_dim, matches!(self.kind, Kind::Sde(_))),
            path_index,
        }
    }

    /// Materializes path `path_index` with its full ledger.
    pub fn record(&self, seed: u64, path_index: u64) -> std::result::Result<SemimartingaleRecord, PathFailure> {
        let d = self.dim;
        let n = self.grid.steps();
        let mut states = Vec::with_capacity((n + 1) * d);
        let mut mart = Vec::with_capacity(n * d);
        let mut fv = Vec::with_capacity(n * d);
        let mut qv = Vec::with_capacity(n * d * d);
        let mut w = self.walker(seed, path_index);
        let mut inc = StepIncrements::new(d);
        states.extend_from_slice(w.state());
        while w.step() < n {
            let prev = w.state().to_vec();
            w.advance_into(Some(&mut inc))?;
            reconcile(&prev, w.state(), &mut inc.mart, &mut inc.fv);
            states.extend_from_slice(w.state());
            mart.extend_from_slice(&inc.mart);
            fv.extend_from_slice(&inc.fv);
            qv.extend_from_slice(&inc.qv);
        }
        let path = GridPath::from_flat(self.grid, d, states).map_err(|_| PathFailure {
            path_index,
            step: n,
        })?;
        Ok(SemimartingaleRecord {
            law_id: self.law_id,
            path_index,
            path,
            mart_inc: mart,
            fv_inc: fv,
            qv_inc: qv,
        })
    }

    /// Materializes paths `0..n_paths` in parallel; output order is by index.
    pub fn ensemble(&self, seed: u64, n_paths: usize) -> Ensemble {
        let results: Vec<_> = (0..n_paths as u64)
            .into_par_iter()
            .map(|i| self.record(seed, i))
            .collect();
        let mut records = Vec::with_capacity(n_paths);
        let mut failures = Vec::new();
        for r in results {
            match r {
                Ok(rec) => records.push(rec),
                Err(f) => failures.push(f),
            }
        }
        Ensemble {
            law_id: self.law_id,
            label: self.label.clone(),
            records,
            failures,
        }
    }

    /// Evaluates `f` on a walker for each path index, in parallel, keeping
    /// index order in the output.
    pub fn map_paths<T, F>(&self, seed: u64, n_paths: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(Walker<'_>) -> T + Sync,
    {
        let n = if self.is_deterministic() { 1 } else { n_paths };
        (0..n as u64)
            .into_par_iter()
            .map(|i| f(self.walker(seed, i)))
            .collect()
    }
}

/// Increments over one step.
#[derive(Debug, Clone)]
pub struct StepIncrements {
    pub mart: Vec<f64>,
    pub fv: Vec<f64>,
    pub qv: Vec<f64>,
}

impl StepIncrements {
    pub fn new(d: usize) -> Self {
        Self {
            mart: vec![0.0; d],
            fv: vec![0.0; d],
            qv: vec![0.0; d * d],
        }
    }
}

#[derive(Debug)]
struct Scratch {
    b: Vec<f64>,
    sigma: Vec<f64>,
    h: Vec<f64>,
}

impl Scratch {
    fn new(d: usize, k: usize, sde: bool) -> Self {
        if sde {
            Self {
                b: vec![0.0; d],
                sigma: vec![0.0; d * k],
                h: vec![0.0; d * k * k],
            }
        } else {
            Self {
                b: Vec::new(),
                sigma: Vec::new(),
                h: Vec::new(),
            }
        }
    }
}

/// Makes `next - prev == mart + fv` hold bit-exactly by moving the rounding
/// residual of the state update into the martingale increment.
fn reconcile(prev: &[f64], next: &[f64], mart: &mut [f64], fv: &mut [f64]) {
    for j in 0..prev.len() {
        let dy = next[j] - prev[j];
        if mart[j] + fv[j] == dy {
            continue;
        }
        let m = dy - fv[j];
        if m + fv[j] == dy {
            mart[j] = m;
            continue;
        }
        let a = dy - m;
        if m + a == dy {
            mart[j] = m;
            fv[j] = a;
            continue;
        }
        mart[j] = dy;
        fv[j] = 0.0;
    }
}

/// Streams one path node by node. Draws are consumed in step order, so a
/// walker and [`LawSimulator::record`] with the same index agree exactly.
pub struct Walker<'a> {
    sim: &'a LawSimulator,
    rng: ChaCha8Rng,
    x: Vec<f64>,
    step: usize,
    xi: Vec<f64>,
    db: Vec<f64>,
    scratch: Scratch,
    path_index: u64,
}

impl Walker<'_> {
    #[inline]
    pub fn state(&self) -> &[f64] {
        &self.x
    }

    /// Index of the current node.
    #[inline]
    pub fn step(&self) -> usize {
        self.step
    }

    #[inline]
    pub fn time(&self) -> f64 {
        self.sim.grid.time(self.step)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.sim.grid
    }

    pub fn is_done(&self) -> bool {
        self.step >= self.sim.grid.steps()
    }

    pub fn law_id(&self) -> usize {
        self.sim.law_id
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    /// Moves to the next node; `Ok(false)` at the horizon.
    #[inline]
    pub fn advance(&mut self) -> std::result::Result<bool, PathFailure> {
        if self.is_done() {
            return Ok(false);
        }
        self.advance_into(None)?;
        Ok(true)
    }

    /// Like [`Walker::advance`] but also reports the step increments, with
    /// `ΔY = ΔM + ΔA` exact in floating point.
    pub fn advance_with(&mut self, inc: &mut StepIncrements) -> std::result::Result<bool, PathFailure> {
        if self.is_done() {
            return Ok(false);
        }
        let prev = self.x.clone();
        self.advance_into(Some(inc))?;
        reconcile(&prev, &self.x, &mut inc.mart, &mut inc.fv);
        Ok(true)
    }

    fn advance_into(&mut self, mut inc: Option<&mut StepIncrements>) -> std::result::Result<(), PathFailure> {
        let sim = self.sim;
        let d = sim.dim;
        let k = sim.noise_dim;
        let i = self.step;
        let t = sim.grid.time(i);
        let dt = sim.grid.dt();

        match &sim.kind {
            Kind::Frozen => {
                if let Some(inc) = inc.as_deref_mut() {
                    inc.mart.fill(0.0);
                    inc.fv.fill(0.0);
                    inc.qv.fill(0.0);
                }
            }
            Kind::Brownian => {
                let e = sim.schedule[i] as usize;
                let l = &sim.factors[e];
                if k == 1 {
                    let z: f64 = StandardNormal.sample(&mut self.rng);
                    let m = l[0] * z * sim.sqrt_dt;
                    self.x[0] += m;
                    if let Some(inc) = inc.as_deref_mut() {
                        inc.mart[0] = m;
                        inc.fv[0] = 0.0;
                        inc.qv[0] = sim.gammas[e][0] * dt;
                    }
                } else {
                    noise_increment(&mut self.rng, l, k, sim.sqrt_dt, &mut self.xi, &mut self.db);
                    for j in 0..d {
                        self.x[j] += self.db[j];
                    }
                    if let Some(inc) = inc.as_deref_mut() {
                        inc.mart.copy_from_slice(&self.db);
                        inc.fv.fill(0.0);
                        for (q, g) in inc.qv.iter_mut().zip(&sim.gammas[e]) {
                            *q = g * dt;
                        }
                    }
                }
            }
            Kind::Sde(c) => {
                let e = sim.schedule[i] as usize;
                noise_increment(&mut self.rng, &sim.factors[e], k, sim.sqrt_dt, &mut self.xi, &mut self.db);
                let gamma = &sim.gammas[e];
                let s = &mut self.scratch;
                (c.drift)(t, &self.x, &mut s.b);
                (c.sigma)(t, &self.x, &mut s.sigma);
                if let Some(h) = &c.h {
                    h(t, &self.x, &mut s.h);
                }
                let mut m_buf = [0.0f64; 8];
                let mut a_buf = [0.0f64; 8];
                let mut m_vec;
                let mut a_vec;
                let (m, a): (&mut [f64], &mut [f64]) = if d <= 8 {
                    (&mut m_buf[..d], &mut a_buf[..d])
                } else {
                    m_vec = vec![0.0; d];
                    a_vec = vec![0.0; d];
                    (&mut m_vec[..], &mut a_vec[..])
                };
                for r in 0..d {
                    let mut acc = 0.0;
                    for j in 0..k {
                        acc += s.sigma[r * k + j] * self.db[j];
                    }
                    m[r] = acc;
                    let mut drift = s.b[r] * dt;
                    if c.h.is_some() {
                        for ij in 0..k * k {
                            drift += s.h[ij * d + r] * gamma[ij] * dt;
                        }
                    }
                    a[r] = drift;
                }
                for r in 0..d {
                    self.x[r] += m[r] + a[r];
                }
                if let Some(inc) = inc.as_deref_mut() {
                    inc.mart.copy_from_slice(m);
                    inc.fv.copy_from_slice(a);
                    // σ γ σ^T dt
                    for r in 0..d {
                        for cidx in 0..d {
                            let mut acc = 0.0;
                            for p in 0..k {
                                for q in 0..k {
                                    acc += s.sigma[r * k + p] * gamma[p * k + q] * s.sigma[cidx * k + q];
                                }
                            }
                            inc.qv[r * d + cidx] = acc * dt;
                        }
                    }
                }
            }
        }
        self.step += 1;
        if self.x.iter().any(|v| !v.is_finite()) {
            return Err(PathFailure {
                path_index: self.path_index,
                step: self.step,
            });
        }
        Ok(())
    }
}

/// `out = L ξ √dt` with `ξ` standard Gaussian.
#[inline]
fn noise_increment(rng: &mut ChaCha8Rng, l: &[f64], k: usize, sqrt_dt: f64, xi: &mut [f64], out: &mut [f64]) {
    for z in xi.iter_mut() {
        *z = StandardNormal.sample(rng);
    }
    for r in 0..k {
        let mut acc = 0.0;
        for c in 0..k {
            acc += l[r * k + c] * xi[c];
        }
        out[r] = acc * sqrt_dt;
    }
}

/// G-Brownian paths under one control law, started at `x0`.
pub fn simulate_gbm(
    set: &ControlSet,
    law: &ControlLaw,
    grid: TimeGrid,
    x0: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Ensemble> {
    Ok(LawSimulator::brownian(set, law, grid, x0)?.ensemble(seed, n_paths))
}

/// One law per point `x`, each carrying the single constant path `ω^x`.
pub fn simulate_pointmass(xs: &[f64], grid: TimeGrid) -> Vec<Ensemble> {
    xs.iter()
        .enumerate()
        .map(|(id, &x)| LawSimulator::frozen(id, format!("x={x}"), grid, &[x]).ensemble(0, 1))
        .collect()
}

/// Euler–Maruyama paths of a G-SDE under one control law.
pub fn simulate_gsde(
    coeffs: SdeCoefficients,
    set: &ControlSet,
    law: &ControlLaw,
    grid: TimeGrid,
    x0: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<Ensemble> {
    Ok(LawSimulator::sde(coeffs, set, law, grid, x0)?.ensemble(seed, n_paths))
}

/// Trace of `Δ<M>` at step `i`.
pub fn qv_trace(rec: &SemimartingaleRecord, i: usize) -> f64 {
    linalg::trace(rec.qv_inc(i), rec.dim())
}
