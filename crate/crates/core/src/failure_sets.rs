//! Failure sets bounded away from the origin.
//!
//! Three shapes are supported: a half-space `{y: <w, y> >= c}` with `c > 0`,
//! an intersection of such half-spaces, and the complement of a closed ball
//! that contains the origin in its interior. Every set carries a certificate
//! `delta0 > 0` with `|y| >= delta0` for all members.
//!
//! All shapes meet a line `r -> r v + b` in a finite union of closed
//! intervals, which [`FailureSet::line_intervals`] computes exactly. The tail
//! measure, the exact single-jump probabilities and the conditioned jump
//! sampler are all built on that.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm};
use crate::tail_noise::{tail_measure, NoiseModel, TailSetQuery};

#[derive(Debug, Clone, PartialEq)]
pub struct HalfSpace {
    /// Unit normal.
    pub w: Vec<f64>,
    pub c: f64,
}

impl HalfSpace {
    pub fn new(w: Vec<f64>, c: f64) -> Result<Self> {
        let len = norm(&w);
        if !(len.is_finite() && len > 0.0) {
            return Err(Error::InvalidSet("half-space normal must be nonzero".into()));
        }
        if !(c.is_finite() && c > 0.0) {
            return Err(Error::InvalidSet(format!(
                "half-space offset must be positive, got {c}"
            )));
        }
        // normalise so that |w| = 1; the set itself is unchanged
        Ok(HalfSpace {
            w: w.iter().map(|x| x / len).collect(),
            c: c / len,
        })
    }

    fn contains(&self, y: &[f64]) -> bool {
        dot(&self.w, y) >= self.c
    }

    fn line_intervals(&self, v: &[f64], b: &[f64], scale: f64) -> IntervalSet {
        let slope = dot(&self.w, v);
        let rhs = scale * self.c - dot(&self.w, b);
        if slope > 0.0 {
            IntervalSet::single(rhs / slope, f64::INFINITY)
        } else if slope < 0.0 {
            IntervalSet::single(f64::NEG_INFINITY, rhs / slope)
        } else if rhs <= 0.0 {
            IntervalSet::all()
        } else {
            IntervalSet::empty()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SetKind {
    HalfSpace(HalfSpace),
    Intersection(Vec<HalfSpace>),
    /// `{y: |y - center| >= radius}`.
    BallComplement { center: Vec<f64>, radius: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FailureSet {
    kind: SetKind,
    delta0: f64,
}

impl FailureSet {
    pub fn half_space(w: Vec<f64>, c: f64) -> Result<Self> {
        let h = HalfSpace::new(w, c)?;
        let delta0 = h.c;
        Ok(FailureSet {
            kind: SetKind::HalfSpace(h),
            delta0,
        })
    }

    pub fn intersection(parts: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        if parts.is_empty() {
            return Err(Error::InvalidSet("intersection needs at least one half-space".into()));
        }
        let halves = parts
            .into_iter()
            .map(|(w, c)| HalfSpace::new(w, c))
            .collect::<Result<Vec<_>>>()?;
        let d = halves[0].w.len();
        if halves.iter().any(|h| h.w.len() != d) {
            return Err(Error::InvalidSet("half-space dimensions differ".into()));
        }
        if !cone_is_open(&halves) {
            return Err(Error::InvalidSet("intersection of half-spaces is empty".into()));
        }
        let delta0 = halves.iter().map(|h| h.c).fold(0.0, f64::max);
        Ok(FailureSet {
            kind: SetKind::Intersection(halves),
            delta0,
        })
    }

    /// Complement of the closed ball `B(center, radius)`. The origin must lie
    /// strictly inside the ball; then `delta0 = radius - |center|`.
    pub fn ball_complement(center: Vec<f64>, radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidSet(format!("radius must be positive, got {radius}")));
        }
        let delta0 = radius - norm(&center);
        if !(delta0 > 0.0) {
            return Err(Error::SetTouchesOrigin);
        }
        Ok(FailureSet {
            kind: SetKind::BallComplement { center, radius },
            delta0,
        })
    }

    pub fn kind(&self) -> &SetKind {
        &self.kind
    }

    pub fn delta0(&self) -> f64 {
        self.delta0
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SetKind::HalfSpace(h) => h.w.len(),
            SetKind::Intersection(hs) => hs[0].w.len(),
            SetKind::BallComplement { center, .. } => center.len(),
        }
    }

    /// Closed-set membership (boundaries included).
    pub fn contains(&self, y: &[f64]) -> bool {
        match &self.kind {
            SetKind::HalfSpace(h) => h.contains(y),
            SetKind::Intersection(hs) => hs.iter().all(|h| h.contains(y)),
            SetKind::BallComplement { center, radius } => {
                let d2: f64 = y.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                d2 >= radius * radius
            }
        }
    }

    /// Membership of `y` in `scale * self`, i.e. of `y / scale` in `self`.
    pub fn contains_scaled(&self, y: &[f64], scale: f64) -> bool {
        match &self.kind {
            SetKind::HalfSpace(h) => dot(&h.w, y) >= scale * h.c,
            SetKind::Intersection(hs) => hs.iter().all(|h| dot(&h.w, y) >= scale * h.c),
            SetKind::BallComplement { center, radius } => {
                let d2: f64 = y
                    .iter()
                    .zip(center)
                    .map(|(a, b)| (a - scale * b) * (a - scale * b))
                    .sum();
                d2 >= (scale * radius) * (scale * radius)
            }
        }
    }

    /// The set `factor * self`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::InvalidSet(format!("scale factor must be positive, got {factor}")));
        }
        let scale_h = |h: &HalfSpace| HalfSpace {
            w: h.w.clone(),
            c: h.c * factor,
        };
        let kind = match &self.kind {
            SetKind::HalfSpace(h) => SetKind::HalfSpace(scale_h(h)),
            SetKind::Intersection(hs) => SetKind::Intersection(hs.iter().map(scale_h).collect()),
            SetKind::BallComplement { center, radius } => SetKind::BallComplement {
                center: center.iter().map(|x| x * factor).collect(),
                radius: radius * factor,
            },
        };
        Ok(FailureSet {
            kind,
            delta0: self.delta0 * factor,
        })
    }

    /// Parameters `r` (on the whole real line) with `r v + b` in `scale * self`.
    pub fn line_intervals(&self, v: &[f64], b: &[f64], scale: f64) -> IntervalSet {
        match &self.kind {
            SetKind::HalfSpace(h) => h.line_intervals(v, b, scale),
            SetKind::Intersection(hs) => hs
                .iter()
                .fold(IntervalSet::all(), |acc, h| acc.intersect(&h.line_intervals(v, b, scale))),
            SetKind::BallComplement { center, radius } => {
                // |r v + e| >= scale * radius with e = b - scale * center
                let e: Vec<f64> = b.iter().zip(center).map(|(bi, ci)| bi - scale * ci).collect();
                let qa = dot(v, v);
                let qb = dot(v, &e);
                let qc = dot(&e, &e) - (scale * radius) * (scale * radius);
                if qa == 0.0 {
                    return if qc >= 0.0 { IntervalSet::all() } else { IntervalSet::empty() };
                }
                let disc = qb * qb - qa * qc;
                if disc <= 0.0 {
                    return IntervalSet::all();
                }
                let sq = disc.sqrt();
                // numerically stable roots of qa r^2 + 2 qb r + qc
                let q = -(qb + qb.signum() * sq);
                let (mut r1, mut r2) = if q != 0.0 { (q / qa, qc / q) } else { (-sq / qa, sq / qa) };
                if r1 > r2 {
                    std::mem::swap(&mut r1, &mut r2);
                }
                IntervalSet(vec![(f64::NEG_INFINITY, r1), (r2, f64::INFINITY)])
            }
        }
    }

    /// Half-spaces `{y: <w, y> >= c}` for every face of a polyhedral set.
    pub fn half_spaces(&self) -> Option<Vec<HalfSpace>> {
        match &self.kind {
            SetKind::HalfSpace(h) => Some(vec![h.clone()]),
            SetKind::Intersection(hs) => Some(hs.clone()),
            SetKind::BallComplement { .. } => None,
        }
    }
}

/// Whether some `v` has `<w_j, v> > 0` for every normal. Because every offset
/// is positive, this is exactly nonemptiness of the intersection. Solved by
/// the perceptron, which terminates when a strictly feasible direction exists
/// with margin above roughly `1/sqrt(MAX_UPDATES)`.
fn cone_is_open(halves: &[HalfSpace]) -> bool {
    const MAX_UPDATES: usize = 200_000;
    let d = halves[0].w.len();
    let mut v = vec![0.0; d];
    for h in halves {
        for (vi, wi) in v.iter_mut().zip(&h.w) {
            *vi += wi;
        }
    }
    for _ in 0..MAX_UPDATES {
        match halves.iter().find(|h| dot(&h.w, &v) <= 1e-12 * norm(&v)) {
            None => return true,
            Some(h) => {
                for (vi, wi) in v.iter_mut().zip(&h.w) {
                    *vi += wi;
                }
            }
        }
    }
    false
}

/// A finite union of closed intervals, sorted and disjoint.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalSet(pub Vec<(f64, f64)>);

impl IntervalSet {
    pub fn empty() -> Self {
        IntervalSet(Vec::new())
    }

    pub fn all() -> Self {
        IntervalSet(vec![(f64::NEG_INFINITY, f64::INFINITY)])
    }

    pub fn single(lo: f64, hi: f64) -> Self {
        if lo <= hi {
            IntervalSet(vec![(lo, hi)])
        } else {
            IntervalSet::empty()
        }
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn intersect(&self, other: &IntervalSet) -> IntervalSet {
        let mut out = Vec::new();
        for &(a0, a1) in &self.0 {
            for &(b0, b1) in &other.0 {
                let lo = a0.max(b0);
                let hi = a1.min(b1);
                if lo <= hi {
                    out.push((lo, hi));
                }
            }
        }
        out.sort_by(|x, y| x.0.total_cmp(&y.0));
        IntervalSet(out)
    }

    pub fn clip_below(&self, floor: f64) -> IntervalSet {
        self.intersect(&IntervalSet::single(floor, f64::INFINITY))
    }
}

/// Overlap ratio between two failure sets under the pushed-forward tail measure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Overlap {
    pub mu: f64,
    pub std_error: f64,
}

/// `mu(psi) = nu(A^{-1}(psi ∩ gamma)) / nu(A^{-1} gamma)`, computed exactly.
pub fn mu_overlap(
    noise: &NoiseModel,
    aggregate: &DMatrix<f64>,
    gamma: &FailureSet,
    psi: &FailureSet,
) -> Result<Overlap> {
    let den_q = TailSetQuery::new(gamma.clone(), aggregate.clone())?;
    let num_q = den_q.clone().intersect(psi.clone())?;
    let den = tail_measure(noise, &den_q)?;
    if !(den.estimate > 0.0) {
        return Err(Error::ZeroDenominator);
    }
    let num = tail_measure(noise, &num_q)?;
    Ok(Overlap {
        mu: (num.estimate / den.estimate).clamp(0.0, 1.0),
        std_error: 0.0,
    })
}

/// Monte Carlo version of [`mu_overlap`] sharing one stream of radial draws
/// between numerator and denominator.
pub fn mu_overlap_mc<R: rand::Rng + ?Sized>(
    noise: &NoiseModel,
    aggregate: &DMatrix<f64>,
    gamma: &FailureSet,
    psi: &FailureSet,
    mc_samples: usize,
    rng: &mut R,
) -> Result<Overlap> {
    let den_q = TailSetQuery::new(gamma.clone(), aggregate.clone())?;
    let num_q = den_q.clone().intersect(psi.clone())?;
    let r_min = den_q.radial_floor();
    let (mut hits_den, mut hits_num) = (0u64, 0u64);
    for _ in 0..mc_samples {
        let (r, k) = noise.sample_radial_atom_from(r_min, rng);
        let y: Vec<f64> = noise.spectral().atoms()[k].direction.iter().map(|t| r * t).collect();
        if den_q.contains_preimage(&y) {
            hits_den += 1;
            if num_q.contains_preimage(&y) {
                hits_num += 1;
            }
        }
    }
    if hits_den == 0 {
        return Err(Error::ZeroDenominator);
    }
    let mu = hits_num as f64 / hits_den as f64;
    Ok(Overlap {
        mu,
        std_error: (mu * (1.0 - mu) / hits_den as f64).sqrt(),
    })
}

/// Serializable description of a failure set, keyed by `kind`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FailureSetConfig {
    HalfSpace { w: Vec<f64>, c: f64 },
    Intersection { half_spaces: Vec<HalfSpaceConfig> },
    BallComplement { center: Vec<f64>, radius: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfSpaceConfig {
    pub w: Vec<f64>,
    pub c: f64,
}

impl FailureSetConfig {
    pub fn build(&self) -> Result<FailureSet> {
        match self {
            FailureSetConfig::HalfSpace { w, c } => FailureSet::half_space(w.clone(), *c),
            FailureSetConfig::Intersection { half_spaces } => FailureSet::intersection(
                half_spaces.iter().map(|h| (h.w.clone(), h.c)).collect(),
            ),
            FailureSetConfig::BallComplement { center, radius } => {
                FailureSet::ball_complement(center.clone(), *radius)
            }
        }
    }
}
