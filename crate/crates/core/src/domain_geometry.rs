//! Analytic catalog of open sets `Q` with exact membership for `Q`, its
//! boundary and the complement of its closure, signed distances, and
//! exterior-ball verdicts.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Band used when an exterior-ball query point comes from floating-point
/// sampling of a curved boundary. Exit detection never uses a band.
pub const BOUNDARY_QUERY_TOL: f64 = 1e-9;

/// Open set `Q` drawn from a closed catalog.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(remote = "Self", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    /// `{x : <x, normal> < offset}` with unit `normal`.
    HalfSpace { normal: Vec<f64>, offset: f64 },
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// `(a, b)` in one dimension.
    Interval { a: f64, b: f64 },
    /// `(-inf, a)` in one dimension.
    LowerRay { a: f64 },
    /// `{x : |x - center| > radius}`.
    BallComplement { center: Vec<f64>, radius: f64 },
    /// `{(x, y) : y < |x|}`; fails the exterior-ball condition at the origin.
    ConeTest,
    /// `R x (0, 1)`.
    #[serde(rename = "strip2d")]
    Strip2D,
    Intersection { members: Vec<DomainSpec> },
}

crate::tagged::tagged_serde!(DomainSpec, "type");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    InQ,
    OnBoundary,
    InClosureComplement,
}

/// Exterior ball `U(center, radius)` touching `Q` at `boundary_point`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BallWitness {
    pub boundary_point: Vec<f64>,
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PointVerdict {
    Satisfied(BallWitness),
    Fails { point: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExteriorBallVerdict {
    pub satisfied_everywhere: bool,
    /// Boundary points where the condition fails (finite for the catalog).
    pub failure_points: Vec<Vec<f64>>,
    /// Verdict at the queried point, when one was supplied.
    pub at_point: Option<PointVerdict>,
}

impl DomainSpec {
    pub fn half_space(normal: Vec<f64>, offset: f64) -> Result<Self> {
        let d = Self::HalfSpace { normal, offset };
        d.validate()?;
        Ok(d)
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        let d = Self::Ball { center, radius };
        d.validate()?;
        Ok(d)
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let d = Self::Box { lo, hi };
        d.validate()?;
        Ok(d)
    }

    pub fn interval(a: f64, b: f64) -> Result<Self> {
        let d = Self::Interval { a, b };
        d.validate()?;
        Ok(d)
    }

    pub fn lower_ray(a: f64) -> Self {
        Self::LowerRay { a }
    }

    pub fn ball_complement(center: Vec<f64>, radius: f64) -> Result<Self> {
        let d = Self::BallComplement { center, radius };
        d.validate()?;
        Ok(d)
    }

    pub fn intersection(members: Vec<DomainSpec>) -> Result<Self> {
        let d = Self::Intersection { members };
        d.validate()?;
        Ok(d)
    }

    /// Checks the catalog invariants (dimensions, radii, ordering).
    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64], what: &str| -> Result<()> {
            if v.iter().all(|x| x.is_finite()) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{what} must be finite")))
            }
        };
        match self {
            Self::HalfSpace { normal, offset } => {
                finite(normal, "normal")?;
                if normal.is_empty() || !offset.is_finite() {
                    return Err(Error::InvalidArgument("half space needs a normal".into()));
                }
                let norm = normal.iter().map(|x| x * x).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-9 {
                    return Err(Error::InvalidArgument(format!(
                        "half-space normal must be a unit vector, |n| = {norm}"
                    )));
                }
            }
            Self::Ball { center, radius } | Self::BallComplement { center, radius } => {
                finite(center, "center")?;
                if center.is_empty() {
                    return Err(Error::InvalidArgument("ball center is empty".into()));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::InvalidArgument(format!(
                        "radius must be positive, got {radius}"
                    )));
                }
            }
            Self::Box { lo, hi } => {
                finite(lo, "lo")?;
                finite(hi, "hi")?;
                if lo.is_empty() || lo.len() != hi.len() {
                    return Err(Error::InvalidArgument("box bounds must share a dimension".into()));
                }
                if lo.iter().zip(hi).any(|(l, h)| l >= h) {
                    return Err(Error::InvalidArgument("box bounds must satisfy lo < hi".into()));
                }
            }
            Self::Interval { a, b } => {
                if !(a.is_finite() && b.is_finite() && a < b) {
                    return Err(Error::InvalidArgument(format!(
                        "interval needs finite a < b, got ({a}, {b})"
                    )));
                }
            }
            Self::LowerRay { a } => {
                if !a.is_finite() {
                    return Err(Error::InvalidArgument("lower ray bound must be finite".into()));
                }
            }
            Self::ConeTest | Self::Strip2D => {}
            Self::Intersection { members } => {
                let first = members
                    .first()
                    .ok_or_else(|| Error::InvalidArgument("intersection has no members".into()))?;
                let dim = first.dim();
                for m in members {
                    m.validate()?;
                    if m.dim() != dim {
                        return Err(Error::DimensionMismatch {
                            expected: dim,
                            got: m.dim(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match self {
            Self::HalfSpace { normal, .. } => normal.len(),
            Self::Ball { center, .. } | Self::BallComplement { center, .. } => center.len(),
            Self::Box { lo, .. } => lo.len(),
            Self::Interval { .. } | Self::LowerRay { .. } => 1,
            Self::ConeTest | Self::Strip2D => 2,
            Self::Intersection { members } => members.first().map_or(0, DomainSpec::dim),
        }
    }

    /// Whether `Q` is bounded (needed for the second-moment bound).
    pub fn is_bounded(&self) -> bool {
        match self {
            Self::Ball { .. } | Self::Box { .. } | Self::Interval { .. } => true,
            Self::Intersection { members } => members.iter().any(DomainSpec::is_bounded),
            _ => false,
        }
    }

    /// `[inf, sup]` of coordinate `l` over the closure, for bounded domains.
    pub fn coordinate_range(&self, l: usize) -> Option<(f64, f64)> {
        match self {
            Self::Ball { center, radius } => center.get(l).map(|c| (c - radius, c + radius)),
            Self::Box { lo, hi } => Some((*lo.get(l)?, *hi.get(l)?)),
            Self::Interval { a, b } if l == 0 => Some((*a, *b)),
            // Outer box of the bounded members; exact for a single bounded member.
            Self::Intersection { members } => members
                .iter()
                .filter(|m| m.is_bounded())
                .filter_map(|m| m.coordinate_range(l))
                .reduce(|(a, b), (c, d)| (a.max(c), b.min(d))),
            _ => None,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() == self.dim() {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: x.len(),
            })
        }
    }

    /// Exact classification into `Q`, `∂Q` or the complement of the closure.
    pub fn classify(&self, x: &[f64]) -> Result<Region> {
        self.check_dim(x)?;
        Ok(self.classify_unchecked(x))
    }

    /// `classify` without the dimension check; used in the simulation hot loop.
    #[inline]
    pub fn classify_unchecked(&self, x: &[f64]) -> Region {
        use std::cmp::Ordering::*;
        let by = |o: Option<std::cmp::Ordering>| match o {
            Some(Less) => Region::InQ,
            Some(Equal) => Region::OnBoundary,
            _ => Region::InClosureComplement,
        };
        match self {
            Self::HalfSpace { normal, offset } => by(dot(x, normal).partial_cmp(offset)),
            Self::Ball { center, radius } => by(dist2(x, center).partial_cmp(&(radius * radius))),
            Self::BallComplement { center, radius } => {
                by((radius * radius).partial_cmp(&dist2(x, center)))
            }
            Self::Box { lo, hi } => {
                let mut boundary = false;
                for ((xi, l), h) in x.iter().zip(lo).zip(hi) {
                    if xi < l || xi > h {
                        return Region::InClosureComplement;
                    }
                    if xi == l || xi == h {
                        boundary = true;
                    }
                }
                if boundary {
                    Region::OnBoundary
                } else {
                    Region::InQ
                }
            }
            Self::Interval { a, b } => {
                let v = x[0];
                if v > *a && v < *b {
                    Region::InQ
                } else if v == *a || v == *b {
                    Region::OnBoundary
                } else {
                    Region::InClosureComplement
                }
            }
            Self::LowerRay { a } => by(x[0].partial_cmp(a)),
            Self::ConeTest => by(x[1].partial_cmp(&x[0].abs())),
            Self::Strip2D => {
                let y = x[1];
                if y > 0.0 && y < 1.0 {
                    Region::InQ
                } else if y == 0.0 || y == 1.0 {
                    Region::OnBoundary
                } else {
                    Region::InClosureComplement
                }
            }
            // Exact whenever the closure of the intersection equals the
            // intersection of the closures (e.g. convex members meeting in
            // an open set).
            Self::Intersection { members } => {
                let mut all_in = true;
                for m in members {
                    match m.classify_unchecked(x) {
                        Region::InClosureComplement => return Region::InClosureComplement,
                        Region::OnBoundary => all_in = false,
                        Region::InQ => {}
                    }
                }
                if all_in {
                    Region::InQ
                } else {
                    Region::OnBoundary
                }
            }
        }
    }

    /// Classification with a diagnostic band: points with
    /// `|signed_distance| <= tol` map to the boundary. The flag reports
    /// whether the band changed the exact answer.
    pub fn classify_banded(&self, x: &[f64], tol: f64) -> Result<(Region, bool)> {
        let exact = self.classify(x)?;
        if tol > 0.0 && exact != Region::OnBoundary && self.signed_distance_unchecked(x).abs() <= tol {
            return Ok((Region::OnBoundary, true));
        }
        Ok((exact, false))
    }

    /// Negative in `Q`, zero on `∂Q`, positive outside the closure.
    pub fn signed_distance(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.signed_distance_unchecked(x))
    }

    pub(crate) fn signed_distance_unchecked(&self, x: &[f64]) -> f64 {
        match self {
            Self::HalfSpace { normal, offset } => dot(x, normal) - offset,
            Self::Ball { center, radius } => dist2(x, center).sqrt() - radius,
            Self::BallComplement { center, radius } => radius - dist2(x, center).sqrt(),
            Self::Box { lo, hi } => {
                let mut outside = 0.0;
                let mut inside = f64::NEG_INFINITY;
                for ((xi, l), h) in x.iter().zip(lo).zip(hi) {
                    let q = (l - xi).max(xi - h);
                    outside += q.max(0.0).powi(2);
                    inside = inside.max(q);
                }
                outside.sqrt() + inside.min(0.0)
            }
            Self::Interval { a, b } => (a - x[0]).max(x[0] - b),
            Self::LowerRay { a } => x[0] - a,
            Self::ConeTest => {
                let (u, v) = (x[0], x[1]);
                if v >= u.abs() {
                    (v - u.abs()) / std::f64::consts::SQRT_2
                } else if v <= -u.abs() {
                    -(u * u + v * v).sqrt()
                } else {
                    -(u.abs() - v) / std::f64::consts::SQRT_2
                }
            }
            Self::Strip2D => (-x[1]).max(x[1] - 1.0),
            Self::Intersection { members } => members
                .iter()
                .map(|m| m.signed_distance_unchecked(x))
                .fold(f64::NEG_INFINITY, f64::max),
        }
    }

    /// Boundary points where the exterior-ball condition fails.
    fn exterior_ball_failures(&self) -> Vec<Vec<f64>> {
        match self {
            Self::ConeTest => vec![vec![0.0, 0.0]],
            // A ball avoiding one member's set avoids the intersection, so a
            // point fails only if no member active there offers a ball.
            Self::Intersection { members } => {
                let mut out: Vec<Vec<f64>> = Vec::new();
                for m in members {
                    for p in m.exterior_ball_failures() {
                        if self.classify_unchecked(&p) != Region::OnBoundary {
                            continue;
                        }
                        if self.member_witness(&p).is_none() && !out.contains(&p) {
                            out.push(p);
                        }
                    }
                }
                out
            }
            _ => Vec::new(),
        }
    }

    fn member_witness(&self, x: &[f64]) -> Option<BallWitness> {
        let Self::Intersection { members } = self else {
            return None;
        };
        members
            .iter()
            .filter(|m| m.is_near_boundary(x))
            .find_map(|m| m.witness_at(x))
    }

    fn is_near_boundary(&self, x: &[f64]) -> bool {
        self.classify_unchecked(x) == Region::OnBoundary
            || self.signed_distance_unchecked(x).abs() <= BOUNDARY_QUERY_TOL * (1.0 + norm(x))
    }

    /// Analytic exterior ball at a boundary point, or `None` where it fails.
    fn witness_at(&self, x: &[f64]) -> Option<BallWitness> {
        let w = |boundary_point: Vec<f64>, center: Vec<f64>, radius: f64| {
            Some(BallWitness {
                boundary_point,
                center,
                radius,
            })
        };
        match self {
            Self::HalfSpace { normal, offset } => {
                let shift = dot(x, normal) - offset;
                let p: Vec<f64> = x.iter().zip(normal).map(|(xi, n)| xi - shift * n).collect();
                let z = p.iter().zip(normal).map(|(pi, n)| pi + n).collect();
                w(p, z, 1.0)
            }
            Self::Ball { center, radius } => {
                let u = unit(x, center)?;
                let p = center.iter().zip(&u).map(|(c, ui)| c + radius * ui).collect();
                let z = center.iter().zip(&u).map(|(c, ui)| c + 2.0 * radius * ui).collect();
                w(p, z, *radius)
            }
            Self::BallComplement { center, radius } => {
                let u = unit(x, center)?;
                let p = center.iter().zip(&u).map(|(c, ui)| c + radius * ui).collect();
                let z = center.iter().zip(&u).map(|(c, ui)| c + 0.5 * radius * ui).collect();
                w(p, z, 0.5 * radius)
            }
            Self::Box { lo, hi } => {
                // Face whose bound is closest to x.
                let (i, lower) = (0..x.len())
                    .flat_map(|i| [(i, true), (i, false)])
                    .min_by(|(i, l), (j, m)| {
                        let di = (x[*i] - if *l { lo[*i] } else { hi[*i] }).abs();
                        let dj = (x[*j] - if *m { lo[*j] } else { hi[*j] }).abs();
                        di.total_cmp(&dj)
                    })?;
                let mut p: Vec<f64> = x.iter().zip(lo.iter().zip(hi)).map(|(v, (l, h))| v.clamp(*l, *h)).collect();
                p[i] = if lower { lo[i] } else { hi[i] };
                let mut z = p.clone();
                z[i] += if lower { -1.0 } else { 1.0 };
                w(p, z, 1.0)
            }
            Self::Interval { a, b } => {
                if (x[0] - a).abs() <= (x[0] - b).abs() {
                    w(vec![*a], vec![a - 1.0], 1.0)
                } else {
                    w(vec![*b], vec![b + 1.0], 1.0)
                }
            }
            Self::LowerRay { a } => w(vec![*a], vec![a + 1.0], 1.0),
            Self::ConeTest => {
                let s = x[0];
                if s == 0.0 {
                    return None;
                }
                let rho = s.abs() / std::f64::consts::SQRT_2;
                let p = vec![s, s.abs()];
                let z = vec![
                    s - s.signum() * rho / std::f64::consts::SQRT_2,
                    s.abs() + rho / std::f64::consts::SQRT_2,
                ];
                w(p, z, rho)
            }
            Self::Strip2D => {
                if x[1].abs() <= (x[1] - 1.0).abs() {
                    w(vec![x[0], 0.0], vec![x[0], -1.0], 1.0)
                } else {
                    w(vec![x[0], 1.0], vec![x[0], 2.0], 1.0)
                }
            }
            Self::Intersection { .. } => self.member_witness(x),
        }
    }

    /// Exterior-ball verdict for the domain, and at `x` when given.
    ///
    /// `x` must lie on `∂Q` up to [`BOUNDARY_QUERY_TOL`].
    pub fn exterior_ball(&self, x: Option<&[f64]>) -> Result<ExteriorBallVerdict> {
        let failure_points = self.exterior_ball_failures();
        let at_point = match x {
            None => None,
            Some(x) => {
                self.check_dim(x)?;
                if !self.is_near_boundary(x) {
                    return Err(Error::InvalidArgument(format!(
                        "{x:?} is not on the boundary (signed distance {})",
                        self.signed_distance_unchecked(x)
                    )));
                }
                Some(match self.witness_at(x) {
                    Some(wit) => PointVerdict::Satisfied(wit),
                    None => PointVerdict::Fails { point: x.to_vec() },
                })
            }
        };
        Ok(ExteriorBallVerdict {
            satisfied_everywhere: failure_points.is_empty(),
            failure_points,
            at_point,
        })
    }

    /// Random point on `∂Q` (up to rounding), or `None` if rejection
    /// sampling for an intersection gives up.
    pub fn sample_boundary<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<Vec<f64>> {
        match self {
            Self::HalfSpace { normal, offset } => {
                let q: Vec<f64> = normal.iter().map(|_| rng.random_range(-5.0..5.0)).collect();
                let shift = dot(&q, normal) - offset;
                Some(q.iter().zip(normal).map(|(qi, n)| qi - shift * n).collect())
            }
            Self::Ball { center, radius } | Self::BallComplement { center, radius } => {
                let u = random_direction(rng, center.len());
                Some(center.iter().zip(u).map(|(c, ui)| c + radius * ui).collect())
            }
            Self::Box { lo, hi } => {
                let i = rng.random_range(0..lo.len());
                let mut p: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| rng.random_range(*l..=*h)).collect();
                p[i] = if rng.random_bool(0.5) { lo[i] } else { hi[i] };
                Some(p)
            }
            Self::Interval { a, b } => Some(vec![if rng.random_bool(0.5) { *a } else { *b }]),
            Self::LowerRay { a } => Some(vec![*a]),
            Self::ConeTest => {
                let s: f64 = rng.random_range(-5.0..5.0);
                Some(vec![s, s.abs()])
            }
            Self::Strip2D => Some(vec![
                rng.random_range(-5.0..5.0),
                if rng.random_bool(0.5) { 0.0 } else { 1.0 },
            ]),
            Self::Intersection { members } => {
                for _ in 0..1000 {
                    let m = &members[rng.random_range(0..members.len())];
                    if let Some(p) = m.sample_boundary(rng) {
                        if self.classify_unchecked(&p) != Region::InClosureComplement
                            && self.is_near_boundary(&p)
                        {
                            return Some(p);
                        }
                    }
                }
                None
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn unit(x: &[f64], center: &[f64]) -> Option<Vec<f64>> {
    let r = dist2(x, center).sqrt();
    if r == 0.0 {
        return None;
    }
    Some(x.iter().zip(center).map(|(xi, c)| (xi - c) / r).collect())
}

pub(crate) fn random_direction<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Vec<f64> {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Uniform point in the open ball `U(center, radius)`.
pub fn sample_in_ball<R: Rng + ?Sized>(rng: &mut R, center: &[f64], radius: f64) -> Vec<f64> {
    let d = center.len();
    let u = random_direction(rng, d);
    let s: f64 = rng.random::<f64>().powf(1.0 / d as f64) * radius;
    center.iter().zip(u).map(|(c, ui)| c + s * ui).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn witness(v: &ExteriorBallVerdict) -> &BallWitness {
        match v.at_point.as_ref().unwrap() {
            PointVerdict::Satisfied(w) => w,
            other => panic!("expected a witness, got {other:?}"),
        }
    }

    #[test]
    fn classify_examples() {
        let ray = DomainSpec::lower_ray(0.0);
        assert_eq!(ray.classify(&[-0.5]).unwrap(), Region::InQ);
        assert_eq!(ray.classify(&[0.0]).unwrap(), Region::OnBoundary);
        assert_eq!(
            DomainSpec::Strip2D.classify(&[7.0, 1.5]).unwrap(),
            Region::InClosureComplement
        );
        assert!(matches!(
            ray.classify(&[0.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn banded_classification_is_reported() {
        let ball = DomainSpec::ball(vec![0.0, 0.0], 1.0).unwrap();
        let (r, banded) = ball.classify_banded(&[1.0 + 1e-12, 0.0], 1e-9).unwrap();
        assert_eq!(r, Region::OnBoundary);
        assert!(banded);
        let (r, banded) = ball.classify_banded(&[1.0 + 1e-12, 0.0], 0.0).unwrap();
        assert_eq!(r, Region::InClosureComplement);
        assert!(!banded);
    }

    #[test]
    fn exterior_ball_lower_ray() {
        let v = DomainSpec::lower_ray(0.0).exterior_ball(Some(&[0.0])).unwrap();
        assert!(v.satisfied_everywhere);
        let w = witness(&v);
        assert_eq!(w.center, vec![1.0]);
        assert_eq!(w.radius, 1.0);
    }

    #[test]
    fn exterior_ball_unit_ball() {
        let b = DomainSpec::ball(vec![0.0, 0.0], 1.0).unwrap();
        let v = b.exterior_ball(Some(&[1.0, 0.0])).unwrap();
        let w = witness(&v);
        assert_eq!(w.center, vec![2.0, 0.0]);
        assert_eq!(w.radius, 1.0);
    }

    #[test]
    fn exterior_ball_cone_origin_fails() {
        let v = DomainSpec::ConeTest.exterior_ball(Some(&[0.0, 0.0])).unwrap();
        assert!(!v.satisfied_everywhere);
        assert_eq!(v.failure_points, vec![vec![0.0, 0.0]]);
        assert!(matches!(v.at_point, Some(PointVerdict::Fails { .. })));
        let v = DomainSpec::ConeTest.exterior_ball(Some(&[2.0, 2.0])).unwrap();
        assert!(matches!(v.at_point, Some(PointVerdict::Satisfied(_))));
    }

    #[test]
    fn exterior_ball_rejects_interior_point() {
        let r = DomainSpec::lower_ray(0.0).exterior_ball(Some(&[-1.0]));
        assert!(matches!(r, Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn intersection_inherits_member_balls() {
        // Cone apex covered by a half-space boundary through the origin.
        let q = DomainSpec::intersection(vec![
            DomainSpec::ConeTest,
            DomainSpec::half_space(vec![0.0, 1.0], 0.0).unwrap(),
        ])
        .unwrap();
        let v = q.exterior_ball(Some(&[0.0, 0.0])).unwrap();
        assert!(v.satisfied_everywhere);
        assert!(matches!(v.at_point, Some(PointVerdict::Satisfied(_))));

        // Apex strictly inside the other member: failure survives.
        let q = DomainSpec::intersection(vec![
            DomainSpec::ConeTest,
            DomainSpec::ball(vec![0.0, 0.0], 3.0).unwrap(),
        ])
        .unwrap();
        let v = q.exterior_ball(None).unwrap();
        assert!(!v.satisfied_everywhere);
    }

    #[test]
    fn signed_distance_examples() {
        let b = DomainSpec::ball(vec![0.0, 0.0, 0.0], 1.0).unwrap();
        assert_eq!(b.signed_distance(&[0.0, 0.0, 0.0]).unwrap(), -1.0);
        assert_eq!(b.signed_distance(&[2.0, 0.0, 0.0]).unwrap(), 1.0);
        let bx = DomainSpec::boxed(vec![0.0, 0.0], vec![1.0, 1.0]).unwrap();
        assert_eq!(bx.signed_distance(&[0.5, 0.5]).unwrap(), -0.5);
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(DomainSpec::ball(vec![0.0], 0.0).is_err());
        assert!(DomainSpec::boxed(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(DomainSpec::interval(1.0, 1.0).is_err());
        assert!(DomainSpec::half_space(vec![1.0, 1.0], 0.0).is_err());
        assert!(DomainSpec::intersection(vec![DomainSpec::lower_ray(0.0), DomainSpec::Strip2D]).is_err());
    }

    #[test]
    fn config_tags() {
        let d: DomainSpec = serde_json::from_str(r#"{"type":"lower_ray","a":0.0}"#).unwrap();
        assert_eq!(d, DomainSpec::lower_ray(0.0));
        let d: DomainSpec = serde_json::from_str(r#"{"type":"strip2d"}"#).unwrap();
        assert_eq!(d, DomainSpec::Strip2D);
        assert!(serde_json::from_str::<DomainSpec>(r#"{"type":"lower_ray","a":0.0,"b":1}"#).is_err());
    }

    fn catalog() -> Vec<DomainSpec> {
        vec![
            DomainSpec::half_space(vec![0.6, 0.8], 0.3).unwrap(),
            DomainSpec::ball(vec![0.5, -1.0], 2.0).unwrap(),
            DomainSpec::boxed(vec![0.0, -1.0], vec![1.0, 2.0]).unwrap(),
            DomainSpec::interval(-1.0, 1.0).unwrap(),
            DomainSpec::lower_ray(0.25),
            DomainSpec::ball_complement(vec![0.0, 0.0], 1.0).unwrap(),
            DomainSpec::ConeTest,
            DomainSpec::Strip2D,
            DomainSpec::intersection(vec![
                DomainSpec::ball(vec![0.0, 0.0], 2.0).unwrap(),
                DomainSpec::Strip2D,
            ])
            .unwrap(),
        ]
    }

    #[test]
    fn signed_distance_sign_agrees_with_classify() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for q in catalog() {
            for _ in 0..20_000 {
                let x: Vec<f64> = (0..q.dim()).map(|_| rng.random_range(-4.0..4.0)).collect();
                let sd = q.signed_distance(&x).unwrap();
                let expected = match q.classify(&x).unwrap() {
                    Region::InQ => sd < 0.0,
                    Region::OnBoundary => sd == 0.0,
                    Region::InClosureComplement => sd > 0.0,
                };
                assert!(expected, "{q:?} at {x:?}: sd {sd}");
            }
        }
    }
}
