//! Regularly varying noise with an atomic spectral measure.
//!
//! A noise vector is `Z = R * Theta - m`, where `R` is Pareto with tail index
//! `alpha` and floor `x_m`, `Theta` is one of the spectral atoms drawn with
//! probability proportional to its weight, and `m` is the exact mean of
//! `R * Theta`, so `E[Z] = 0`.
//!
//! With this generator `P(|Z| > u) * u^alpha -> x_m^alpha`, and the tail
//! measure is
//!
//! ```text
//! nu(S) = x_m^alpha * sum_k (w_k / W) * ∫ 1{r theta_k ∈ S} alpha r^(-alpha-1) dr
//! ```
//!
//! i.e. `P(Z ∈ u S) ~ u^(-alpha) nu(S)`. For `x_m = 1` this coincides with
//! the measure normalised by `P(|Z| > u)`; other floors rescale every value
//! by `x_m^alpha`, which cancels in all ratios.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::failure_sets::{FailureSet, IntervalSet};
use crate::linalg::{mat_vec, norm, singular_range};

#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    pub direction: Vec<f64>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralMeasure {
    atoms: Vec<Atom>,
    total_weight: f64,
}

impl SpectralMeasure {
    /// Directions are normalised to unit length; zero directions are rejected.
    pub fn new(atoms: Vec<(Vec<f64>, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::InvalidModel("spectral measure needs at least one atom".into()));
        }
        let d = atoms[0].0.len();
        if d == 0 {
            return Err(Error::InvalidModel("atom directions must be nonempty".into()));
        }
        let mut out = Vec::with_capacity(atoms.len());
        for (dir, weight) in atoms {
            if dir.len() != d {
                return Err(Error::InvalidModel("atom dimensions differ".into()));
            }
            let len = norm(&dir);
            if !(len.is_finite() && len > 0.0) {
                return Err(Error::InvalidModel("atom direction must be nonzero".into()));
            }
            if !(weight.is_finite() && weight >= 0.0) {
                return Err(Error::InvalidModel(format!("atom weight must be >= 0, got {weight}")));
            }
            out.push(Atom {
                direction: dir.iter().map(|x| x / len).collect(),
                weight,
            });
        }
        let total_weight: f64 = out.iter().map(|a| a.weight).sum();
        if !(total_weight > 0.0) {
            return Err(Error::InvalidModel("spectral weights sum to zero".into()));
        }
        Ok(SpectralMeasure {
            atoms: out,
            total_weight,
        })
    }

    /// One-dimensional tail balance: `+1` with weight `p`, `-1` with `1 - p`.
    pub fn balanced(p: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::InvalidModel(format!("tail balance p must be in [0, 1], got {p}")));
        }
        SpectralMeasure::new(vec![(vec![1.0], p), (vec![-1.0], 1.0 - p)])
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].direction.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    alpha: f64,
    spectral: SpectralMeasure,
    scale: f64,
    mean_offset: Vec<f64>,
    cumulative: Vec<f64>,
}

impl NoiseModel {
    pub fn new(alpha: f64, spectral: SpectralMeasure, scale: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 1.0) {
            return Err(Error::InvalidModel(format!("tail index must exceed 1, got {alpha}")));
        }
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidModel(format!("Pareto floor must be positive, got {scale}")));
        }
        let d = spectral.dim();
        let radial_mean = alpha / (alpha - 1.0) * scale;
        let mut mean_offset = vec![0.0; d];
        let mut cumulative = Vec::with_capacity(spectral.atoms.len());
        let mut acc = 0.0;
        for atom in &spectral.atoms {
            for (m, t) in mean_offset.iter_mut().zip(&atom.direction) {
                *m += radial_mean * atom.weight * t / spectral.total_weight;
            }
            acc += atom.weight;
            cumulative.push(acc);
        }
        Ok(NoiseModel {
            alpha,
            spectral,
            scale,
            mean_offset,
            cumulative,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn spectral(&self) -> &SpectralMeasure {
        &self.spectral
    }

    pub fn mean_offset(&self) -> &[f64] {
        &self.mean_offset
    }

    pub fn dim(&self) -> usize {
        self.mean_offset.len()
    }

    /// Limit of `u^alpha P(|Z| > u)`.
    pub fn tail_constant(&self) -> f64 {
        self.scale.powf(self.alpha)
    }

    fn pick_atom<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        if self.cumulative.len() == 1 {
            return 0;
        }
        let u = rng.random::<f64>() * self.spectral.total_weight;
        let k = self.cumulative.partition_point(|&c| c <= u);
        // skip zero-weight atoms at the top end
        k.min(self.cumulative.len() - 1)
    }

    /// Radius from Pareto(alpha, floor) and an atom index.
    pub fn sample_radial_atom_from<R: Rng + ?Sized>(&self, floor: f64, rng: &mut R) -> (f64, usize) {
        let u = 1.0 - rng.random::<f64>();
        let r = floor * u.powf(-1.0 / self.alpha);
        (r, self.pick_atom(rng))
    }

    /// Write one draw of `Z` into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let (r, k) = self.sample_radial_atom_from(self.scale, rng);
        let dir = &self.spectral.atoms[k].direction;
        for ((o, t), m) in out.iter_mut().zip(dir).zip(&self.mean_offset) {
            *o = r * t - m;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.sample_into(rng, &mut out);
        out
    }

    fn survival(&self, r: f64) -> f64 {
        if r <= self.scale {
            1.0
        } else if r.is_infinite() {
            0.0
        } else {
            (self.scale / r).powf(self.alpha)
        }
    }

    /// Pareto mass of an interval set, per atom.
    fn radial_mass(&self, iv: &IntervalSet) -> f64 {
        iv.clip_below(self.scale)
            .0
            .iter()
            .map(|&(lo, hi)| self.survival(lo) - self.survival(hi))
            .sum()
    }

    /// For each atom, the radii `r` with `transform (r theta_k - m) ∈ scale * set`.
    fn atom_intervals(&self, transform: &DMatrix<f64>, set: &FailureSet, scale: f64) -> Vec<IntervalSet> {
        let b: Vec<f64> = mat_vec(transform, &self.mean_offset).iter().map(|x| -x).collect();
        self.spectral
            .atoms
            .iter()
            .map(|a| set.line_intervals(&mat_vec(transform, &a.direction), &b, scale))
            .collect()
    }

    /// Exact `P(transform Z ∈ scale * set)` for the finite-level generator.
    pub fn prob_transformed_in(&self, transform: &DMatrix<f64>, set: &FailureSet, scale: f64) -> f64 {
        let w = self.spectral.total_weight;
        self.atom_intervals(transform, set, scale)
            .iter()
            .zip(&self.spectral.atoms)
            .map(|(iv, a)| a.weight / w * self.radial_mass(iv))
            .sum()
    }

    /// Exact `P(|Z| > u)`.
    pub fn norm_tail(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return 1.0;
        }
        let ball = FailureSet::ball_complement(vec![0.0; self.dim()], u).expect("positive radius");
        let id = DMatrix::identity(self.dim(), self.dim());
        self.prob_transformed_in(&id, &ball, 1.0)
    }

    /// Draw `Z` from its law conditioned on `transform Z ∈ scale * set` by
    /// exact inversion: the atom is picked with probability proportional to
    /// its conditional mass, then the radius from the truncated Pareto law.
    /// Returns `None` when the event has probability zero.
    pub fn sample_conditioned<R: Rng + ?Sized>(
        &self,
        transform: &DMatrix<f64>,
        set: &FailureSet,
        scale: f64,
        rng: &mut R,
    ) -> Option<Vec<f64>> {
        let w = self.spectral.total_weight;
        let per_atom: Vec<(IntervalSet, f64)> = self
            .atom_intervals(transform, set, scale)
            .into_iter()
            .zip(&self.spectral.atoms)
            .map(|(iv, a)| {
                let iv = iv.clip_below(self.scale);
                let m = a.weight / w * self.radial_mass(&iv);
                (iv, m)
            })
            .collect();
        let total: f64 = per_atom.iter().map(|(_, m)| m).sum();
        if !(total > 0.0) {
            return None;
        }
        let mut u = rng.random::<f64>() * total;
        let mut k = per_atom.len() - 1;
        for (i, (_, m)) in per_atom.iter().enumerate() {
            if u < *m {
                k = i;
                break;
            }
            u -= m;
        }
        while per_atom[k].1 <= 0.0 {
            k -= 1;
        }
        let iv = &per_atom[k].0;
        let masses: Vec<f64> = iv
            .0
            .iter()
            .map(|&(lo, hi)| self.survival(lo) - self.survival(hi))
            .collect();
        let mass: f64 = masses.iter().sum();
        let mut v = rng.random::<f64>() * mass;
        let mut j = masses.len() - 1;
        for (i, m) in masses.iter().enumerate() {
            if v < *m {
                j = i;
                break;
            }
            v -= m;
        }
        let (lo, hi) = iv.0[j];
        let (s_lo, s_hi) = (self.survival(lo), self.survival(hi));
        let s = s_hi + (s_lo - s_hi) * (1.0 - rng.random::<f64>());
        let r = (self.scale * s.powf(-1.0 / self.alpha)).clamp(lo.max(self.scale), hi);
        let dir = &self.spectral.atoms[k].direction;
        Some(dir.iter().zip(&self.mean_offset).map(|(t, m)| r * t - m).collect())
    }
}

/// `nu(transform^{-1} (S_1 ∩ ... ∩ S_k))`.
#[derive(Debug, Clone, PartialEq)]
pub struct TailSetQuery {
    sets: Vec<FailureSet>,
    transform: DMatrix<f64>,
    transform_norm: f64,
}

impl TailSetQuery {
    pub fn new(set: FailureSet, transform: DMatrix<f64>) -> Result<Self> {
        if transform.nrows() != transform.ncols() || transform.nrows() != set.dim() {
            return Err(Error::InvalidSet(format!(
                "transform is {}x{} but the set lives in dimension {}",
                transform.nrows(),
                transform.ncols(),
                set.dim()
            )));
        }
        let (max_sv, min_sv) = singular_range(&transform);
        if !(max_sv > 0.0) || min_sv < 1e-12 * max_sv {
            return Err(Error::NonInvertibleTransform(min_sv));
        }
        if !(set.delta0() > 0.0) {
            return Err(Error::SetTouchesOrigin);
        }
        Ok(TailSetQuery {
            sets: vec![set],
            transform,
            transform_norm: max_sv,
        })
    }

    pub fn identity(set: FailureSet) -> Result<Self> {
        let d = set.dim();
        TailSetQuery::new(set, DMatrix::identity(d, d))
    }

    pub fn intersect(mut self, other: FailureSet) -> Result<Self> {
        if other.dim() != self.transform.nrows() {
            return Err(Error::InvalidSet("intersected set has the wrong dimension".into()));
        }
        self.sets.push(other);
        Ok(self)
    }

    pub fn delta0(&self) -> f64 {
        self.sets.iter().map(|s| s.delta0()).fold(0.0, f64::max)
    }

    /// Every point of the preimage has norm at least twice this.
    pub fn radial_floor(&self) -> f64 {
        self.delta0() / (2.0 * self.transform_norm)
    }

    pub fn contains_preimage(&self, y: &[f64]) -> bool {
        let ty = mat_vec(&self.transform, y);
        self.sets.iter().all(|s| s.contains(&ty))
    }

    fn ray_intervals(&self, direction: &[f64]) -> IntervalSet {
        let v = mat_vec(&self.transform, direction);
        let zero = vec![0.0; v.len()];
        self.sets
            .iter()
            .fold(IntervalSet::all(), |acc, s| acc.intersect(&s.line_intervals(&v, &zero, 1.0)))
            .clip_below(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Exact tail measure of a query. Each shape in the set catalogue meets a
/// ray in closed intervals, so for an atomic spectral measure the radial
/// integral is a finite sum of `lo^-alpha - hi^-alpha` terms.
pub fn tail_measure(model: &NoiseModel, query: &TailSetQuery) -> Result<TailEstimate> {
    let alpha = model.alpha;
    let w = model.spectral.total_weight;
    let mut total = 0.0;
    for atom in &model.spectral.atoms {
        if atom.weight == 0.0 {
            continue;
        }
        for (lo, hi) in query.ray_intervals(&atom.direction).0 {
            if lo <= 0.0 {
                return Err(Error::SetTouchesOrigin);
            }
            let upper = if hi.is_infinite() { 0.0 } else { hi.powf(-alpha) };
            total += atom.weight / w * (lo.powf(-alpha) - upper);
        }
    }
    Ok(TailEstimate {
        estimate: model.tail_constant() * total,
        std_error: 0.0,
    })
}

/// Importance-sampling estimate of the tail measure: radii from
/// Pareto(alpha, r_min) below the certified preimage floor, atoms by weight.
pub fn tail_measure_mc<R: Rng + ?Sized>(
    model: &NoiseModel,
    query: &TailSetQuery,
    mc_samples: usize,
    rng: &mut R,
) -> Result<TailEstimate> {
    if mc_samples == 0 {
        return Err(Error::EmptySample);
    }
    let r_min = query.radial_floor();
    let mut hits = 0u64;
    let mut y = vec![0.0; model.dim()];
    for _ in 0..mc_samples {
        let (r, k) = model.sample_radial_atom_from(r_min, rng);
        for (yi, t) in y.iter_mut().zip(&model.spectral.atoms[k].direction) {
            *yi = r * t;
        }
        if query.contains_preimage(&y) {
            hits += 1;
        }
    }
    let p = hits as f64 / mc_samples as f64;
    let factor = model.tail_constant() * r_min.powf(-model.alpha);
    Ok(TailEstimate {
        estimate: factor * p,
        std_error: factor * (p * (1.0 - p) / mc_samples as f64).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    /// `[[direction...], weight]` pairs.
    pub atoms: Vec<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub alpha: f64,
    #[serde(default = "default_xm")]
    pub xm: f64,
    pub spectral: SpectralConfig,
}

fn default_xm() -> f64 {
    1.0
}

impl NoiseConfig {
    pub fn build(&self) -> Result<NoiseModel> {
        let spectral = SpectralMeasure::new(self.spectral.atoms.clone())?;
        NoiseModel::new(self.alpha, spectral, self.xm)
    }
}
