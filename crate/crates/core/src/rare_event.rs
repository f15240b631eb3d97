//! Conditioning on `{S_0^n ∈ nΓ}` and estimators for the single-big-jump
//! equivalences.
//!
//! Two conditioning engines are provided. Rejection sampling is exact and is
//! the ground truth for every conditional-law statistic. The planted sampler
//! puts one conditioned jump at a uniform position in the window and draws
//! everything else unconditionally; it is only exact in the large-`n` limit.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::failure_sets::FailureSet;
use crate::linalg::{mat_vec, norm};
use crate::ma_process::{check_budget, fill_noise, GammaTable, ModelSpec, WindowPath};
use crate::rng::Streams;

/// Smallest single-jump acceptance estimate rejection sampling will attempt.
pub const ACCEPTANCE_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Rejection,
    Planted,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Rejection => "rejection",
            Method::Planted => "planted",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConditionedSample {
    pub path: WindowPath,
    pub n: usize,
    pub attempts: u64,
    pub method: Method,
    /// Whether `S_0^n / n ∈ Γ`. Always true for rejection samples.
    pub member: bool,
    /// Location of the planted jump, if any.
    pub planted_index: Option<i64>,
}

/// Point estimate with a Monte Carlo standard error (0 for exact values).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Estimate { value, std_error: 0.0 }
    }

    fn proportion(hits: u64, trials: u64) -> Self {
        let p = hits as f64 / trials as f64;
        Estimate {
            value: p,
            std_error: (p * (1.0 - p) / trials as f64).sqrt(),
        }
    }
}

/// Exact `P(A Z_0 ∈ nΓ)` for the generator.
pub fn single_jump_probability(spec: &ModelSpec, gamma: &FailureSet, n: usize) -> f64 {
    spec.noise().prob_transformed_in(spec.aggregate(), gamma, n as f64)
}

fn check_dims(spec: &ModelSpec, gamma: &FailureSet) -> Result<()> {
    if gamma.dim() != spec.dim() {
        return Err(Error::InvalidSet(format!(
            "failure set dimension {} does not match model dimension {}",
            gamma.dim(),
            spec.dim()
        )));
    }
    Ok(())
}

/// Shared state for drawing many conditioned replicates of one `(spec, Γ, n)`.
#[derive(Debug, Clone)]
pub struct Conditioner<'a> {
    spec: &'a ModelSpec,
    gamma: &'a FailureSet,
    n: usize,
    j_range: (i64, i64),
    noise_range: (i64, i64),
    table: GammaTable,
    single_jump: f64,
}

impl<'a> Conditioner<'a> {
    pub fn new(spec: &'a ModelSpec, gamma: &'a FailureSet, n: usize, scan_range: (i64, i64)) -> Result<Self> {
        check_dims(spec, gamma)?;
        let (j_min, j_max) = scan_range;
        if n == 0 || j_min > 0 || j_max < 0 {
            return Err(Error::InvalidWindow(format!(
                "need n >= 1 and a scan range containing 0, got n={n}, [{j_min}, {j_max}]"
            )));
        }
        let noise_range = spec.noise_range(n, j_min, j_max);
        check_budget(spec, noise_range.0, noise_range.1)?;
        Ok(Conditioner {
            spec,
            gamma,
            n,
            j_range: scan_range,
            noise_range,
            table: GammaTable::new(spec, n),
            single_jump: single_jump_probability(spec, gamma, n),
        })
    }

    /// Also store noise over `[lo, hi]` (e.g. for dominant-point windows).
    pub fn with_noise_cover(mut self, lo: i64, hi: i64) -> Result<Self> {
        self.noise_range = (self.noise_range.0.min(lo), self.noise_range.1.max(hi));
        check_budget(self.spec, self.noise_range.0, self.noise_range.1)?;
        Ok(self)
    }

    /// `n P(A Z_0 ∈ nΓ)`, the large-`n` acceptance rate.
    pub fn acceptance_estimate(&self) -> f64 {
        self.n as f64 * self.single_jump
    }

    fn noise_len(&self) -> usize {
        (self.noise_range.1 - self.noise_range.0 + 1) as usize * self.spec.dim()
    }

    pub fn rejection<R: Rng + ?Sized>(&self, max_attempts: u64, rng: &mut R) -> Result<ConditionedSample> {
        let estimate = self.acceptance_estimate();
        if estimate < ACCEPTANCE_FLOOR {
            return Err(Error::AcceptanceTooRare {
                attempts: 0,
                accepted: 0,
                estimate,
            });
        }
        let d = self.spec.dim();
        let start = self.noise_range.0;
        let (core_lo, core_hi) = self.table.support();
        let core = ((core_lo - start) as usize * d)..((core_hi - start + 1) as usize * d);
        let mut noise = vec![0.0; self.noise_len()];
        let n = self.n as f64;
        for attempt in 1..=max_attempts {
            // The window sum only sees the core; the rest is drawn after acceptance.
            fill_noise(self.spec.noise(), rng, &mut noise[core.clone()]);
            let s0 = self.table.window_sum(&noise, start, 0);
            if !self.gamma.contains_scaled(&s0, n) {
                continue;
            }
            let (left, rest) = noise.split_at_mut(core.start);
            fill_noise(self.spec.noise(), rng, left);
            fill_noise(self.spec.noise(), rng, &mut rest[core.len()..]);
            let path = WindowPath::from_noise(self.spec, self.n, self.j_range.0, self.j_range.1, start, noise.clone())?;
            // guards against a rounding flip between the two evaluation orders
            if !self.gamma.contains_scaled(path.sum(0), n) {
                continue;
            }
            return Ok(ConditionedSample {
                path,
                n: self.n,
                attempts: attempt,
                method: Method::Rejection,
                member: true,
                planted_index: None,
            });
        }
        Err(Error::AcceptanceTooRare {
            attempts: max_attempts,
            accepted: 0,
            estimate: 0.0,
        })
    }

    pub fn planted<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ConditionedSample> {
        if !(self.single_jump > 0.0) {
            return Err(Error::NoAtomReachesGamma);
        }
        let d = self.spec.dim();
        let start = self.noise_range.0;
        let mut noise = vec![0.0; self.noise_len()];
        let star = rng.random_range(0..self.n as i64);
        fill_noise(self.spec.noise(), rng, &mut noise);
        let jump = self
            .spec
            .noise()
            .sample_conditioned(self.spec.aggregate(), self.gamma, self.n as f64, rng)
            .ok_or(Error::NoAtomReachesGamma)?;
        let idx = (star - start) as usize;
        noise[idx * d..(idx + 1) * d].copy_from_slice(&jump);
        let path = WindowPath::from_noise(self.spec, self.n, self.j_range.0, self.j_range.1, start, noise)?;
        let member = self.gamma.contains_scaled(path.sum(0), self.n as f64);
        Ok(ConditionedSample {
            path,
            n: self.n,
            attempts: 1,
            method: Method::Planted,
            member,
            planted_index: Some(star),
        })
    }
}

/// Exact conditioning by rejection: simulate until `S_0^n ∈ nΓ`.
pub fn condition_by_rejection<R: Rng + ?Sized>(
    spec: &ModelSpec,
    gamma: &FailureSet,
    n: usize,
    scan_range: (i64, i64),
    max_attempts: u64,
    rng: &mut R,
) -> Result<ConditionedSample> {
    Conditioner::new(spec, gamma, n, scan_range)?.rejection(max_attempts, rng)
}

/// Approximate conditioning with one planted jump. Draws whose window sum
/// misses `nΓ` are returned with `member == false`.
pub fn plant_single_jump<R: Rng + ?Sized>(
    spec: &ModelSpec,
    gamma: &FailureSet,
    n: usize,
    scan_range: (i64, i64),
    rng: &mut R,
) -> Result<ConditionedSample> {
    Conditioner::new(spec, gamma, n, scan_range)?.planted(rng)
}

/// Index sets `I_n ⊆ {0, ..., n-1}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum IndexSet {
    Full,
    /// `floor(beta n)` consecutive indices centred in the window.
    Fraction(f64),
}

impl IndexSet {
    pub fn range(&self, n: usize) -> Result<(i64, i64)> {
        match *self {
            IndexSet::Full => Ok((0, n as i64 - 1)),
            IndexSet::Fraction(beta) => {
                if !(beta > 0.0 && beta <= 1.0) {
                    return Err(Error::config("index_set.fraction", format!("must be in (0, 1], got {beta}")));
                }
                let len = ((beta * n as f64).floor() as i64).max(1);
                let start = (n as i64 - len) / 2;
                Ok((start, start + len - 1))
            }
        }
    }

    pub fn describe(&self) -> String {
        match self {
            IndexSet::Full => "full".into(),
            IndexSet::Fraction(b) => format!("fraction:{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub n: usize,
    pub index_set: IndexSet,
    pub index_len: usize,
    pub m: f64,
    pub delta: f64,
    pub trials: u64,
    /// Quantities 1 to 5 of the equivalence list, in order.
    pub q: [Estimate; 5],
    /// `q_k / q_1` for `k = 2..=5`.
    pub ratios: [Estimate; 4],
    /// Monte Carlo version of quantity 3 on the common random numbers.
    pub q3_mc: Estimate,
}

#[derive(Debug, Default, Clone, Copy)]
struct EquivCounts {
    window: u64,
    any_jump: u64,
    window_and_jump: u64,
    lone_jump: u64,
}

impl std::ops::Add for EquivCounts {
    type Output = EquivCounts;
    fn add(self, o: EquivCounts) -> EquivCounts {
        EquivCounts {
            window: self.window + o.window,
            any_jump: self.any_jump + o.any_jump,
            window_and_jump: self.window_and_jump + o.window_and_jump,
            lone_jump: self.lone_jump + o.lone_jump,
        }
    }
}

fn mn_window(n: usize, m: f64) -> i64 {
    (m * n as f64).floor() as i64
}

/// Monte Carlo estimates of the five asymptotically equivalent quantities,
/// with common random numbers across quantities 1, 3 (MC), 4 and 5.
#[allow(clippy::too_many_arguments)]
pub fn estimate_equivalents(
    spec: &ModelSpec,
    gamma: &FailureSet,
    n: usize,
    index_set: IndexSet,
    m: f64,
    delta: f64,
    trials: u64,
    streams: &Streams,
) -> Result<EquivalenceReport> {
    check_dims(spec, gamma)?;
    if !(m > 0.0 && delta > 0.0) {
        return Err(Error::config("M/delta", "both must be positive"));
    }
    if trials == 0 || n == 0 {
        return Err(Error::EmptySample);
    }
    let (i_lo, i_hi) = index_set.range(n)?;
    let index_len = (i_hi - i_lo + 1) as usize;
    let table = GammaTable::new(spec, n);
    let (core_lo, core_hi) = table.support();
    let mn = mn_window(n, m);
    let lo = core_lo.min(-mn).min(i_lo);
    let hi = core_hi.max(mn).max(i_hi);
    let len = check_budget(spec, lo, hi)?;
    let d = spec.dim();
    let nf = n as f64;
    let threshold = nf * delta;
    let aggregate = spec.aggregate();

    let counts = (0..trials)
        .into_par_iter()
        .map_init(
            || vec![0.0; len],
            |noise, t| {
                let mut rng = streams.stream(t);
                fill_noise(spec.noise(), &mut rng, noise);
                let z = |i: i64| &noise[(i - lo) as usize * d..(i - lo + 1) as usize * d];
                let in_window = gamma.contains_scaled(&table.window_sum(noise, lo, 0), nf);
                let large = |i: i64| norm(z(i)) > threshold;
                let large_total = (-mn..=mn).filter(|&l| large(l)).count();
                let mut any_jump = false;
                let mut lone_jump = false;
                for i in i_lo..=i_hi {
                    if gamma.contains_scaled(&mat_vec(aggregate, z(i)), nf) {
                        any_jump = true;
                        let own = usize::from((-mn..=mn).contains(&i) && large(i));
                        if large_total - own == 0 {
                            lone_jump = true;
                            break;
                        }
                    }
                }
                EquivCounts {
                    window: in_window as u64,
                    any_jump: any_jump as u64,
                    window_and_jump: (in_window && any_jump) as u64,
                    lone_jump: (in_window && lone_jump) as u64,
                }
            },
        )
        .reduce(EquivCounts::default, |a, b| a + b);

    let frac = index_len as f64 / nf;
    let p1 = Estimate::proportion(counts.window, trials);
    let q1 = Estimate {
        value: frac * p1.value,
        std_error: frac * p1.std_error,
    };
    let p = single_jump_probability(spec, gamma, n);
    let q2 = Estimate::exact(index_len as f64 * p);
    let q3 = Estimate::exact(-(index_len as f64 * (-p).ln_1p()).exp_m1());
    let q4 = Estimate::proportion(counts.window_and_jump, trials);
    let q5 = Estimate::proportion(counts.lone_jump, trials);
    let q3_mc = Estimate::proportion(counts.any_jump, trials);

    let rel1 = if p1.value > 0.0 { p1.std_error / p1.value } else { f64::NAN };
    let exact_ratio = |q: Estimate| {
        let r = q.value / q1.value;
        Estimate {
            value: r,
            std_error: r * rel1,
        }
    };
    // events 4 and 5 are subsets of event 1: the ratio is a conditional proportion
    let nested_ratio = |hits: u64| {
        let c = hits as f64 / counts.window as f64;
        Estimate {
            value: c / frac,
            std_error: (c * (1.0 - c) / counts.window as f64).sqrt() / frac,
        }
    };
    Ok(EquivalenceReport {
        n,
        index_set,
        index_len,
        m,
        delta,
        trials,
        q: [q1, q2, q3, q4, q5],
        ratios: [
            exact_ratio(q2),
            exact_ratio(q3),
            nested_ratio(counts.window_and_jump),
            nested_ratio(counts.lone_jump),
        ],
        q3_mc,
    })
}

/// Monte Carlo `P(S_0^n ∈ nΓ)`.
pub fn window_probability(
    spec: &ModelSpec,
    gamma: &FailureSet,
    n: usize,
    trials: u64,
    streams: &Streams,
) -> Result<Estimate> {
    check_dims(spec, gamma)?;
    if trials == 0 || n == 0 {
        return Err(Error::EmptySample);
    }
    let table = GammaTable::new(spec, n);
    let (lo, hi) = table.support();
    let len = check_budget(spec, lo, hi)?;
    let nf = n as f64;
    let hits: u64 = (0..trials)
        .into_par_iter()
        .map_init(
            || vec![0.0; len],
            |noise, t| {
                let mut rng = streams.stream(t);
                fill_noise(spec.noise(), &mut rng, noise);
                gamma.contains_scaled(&table.window_sum(noise, lo, 0), nf) as u64
            },
        )
        .sum();
    Ok(Estimate::proportion(hits, trials))
}

/// Estimate of
/// `P({S_j^n ∈ nΓ for all 0 <= j <= nθ} △ {A Z_i ∈ nΓ for some i in [floor(nθ), n-1]})`
/// divided by `n P(A Z_0 ∈ nΓ)`.
pub fn symmetric_difference_ratio(
    spec: &ModelSpec,
    gamma: &FailureSet,
    n: usize,
    theta: f64,
    trials: u64,
    streams: &Streams,
) -> Result<Estimate> {
    check_dims(spec, gamma)?;
    if !(0.0..1.0).contains(&theta) {
        return Err(Error::config("theta", format!("must be in [0, 1), got {theta}")));
    }
    if trials == 0 || n == 0 {
        return Err(Error::EmptySample);
    }
    let j_top = (n as f64 * theta).floor() as i64;
    let (lo, hi) = spec.noise_range(n, 0, j_top);
    let len = check_budget(spec, lo, hi)?;
    let d = spec.dim();
    let nf = n as f64;
    let aggregate = spec.aggregate();
    let hits: u64 = (0..trials)
        .into_par_iter()
        .map(|t| -> Result<u64> {
            let mut rng = streams.stream(t);
            let mut noise = vec![0.0; len];
            fill_noise(spec.noise(), &mut rng, &mut noise);
            let jump = (j_top..n as i64).any(|i| {
                let z = &noise[(i - lo) as usize * d..(i - lo + 1) as usize * d];
                gamma.contains_scaled(&mat_vec(aggregate, z), nf)
            });
            let path = WindowPath::from_noise(spec, n, 0, j_top, lo, noise)?;
            let stays = (0..=j_top).all(|j| gamma.contains_scaled(path.sum(j), nf));
            Ok((stays != jump) as u64)
        })
        .try_reduce(|| 0, |a, b| Ok(a + b))?;
    let denom = nf * single_jump_probability(spec, gamma, n);
    if !(denom > 0.0) {
        return Err(Error::NoAtomReachesGamma);
    }
    let p = Estimate::proportion(hits, trials);
    Ok(Estimate {
        value: p.value / denom,
        std_error: p.std_error / denom,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoJumpEstimate {
    pub ratio: Estimate,
    /// `sum_{i != j in [-Mn, Mn]} P(|Z_i| > n delta, |Z_j| > n delta)`.
    pub numerator: f64,
    /// Monte Carlo `P(S_0^n ∈ nΓ)`.
    pub denominator: Estimate,
}

/// Two big jumps against one: the closed-form pair probability over the MC
/// window probability.
#[allow(clippy::too_many_arguments)]
pub fn two_jump_ratio(
    spec: &ModelSpec,
    gamma: &FailureSet,
    n: usize,
    m: f64,
    delta: f64,
    trials: u64,
    streams: &Streams,
) -> Result<TwoJumpEstimate> {
    if !(m > 0.0 && delta > 0.0) {
        return Err(Error::config("M/delta", "both must be positive"));
    }
    let count = (2 * mn_window(n, m) + 1) as f64;
    let tail = spec.noise().norm_tail(n as f64 * delta);
    let numerator = (count * count - count) * tail * tail;
    let denominator = window_probability(spec, gamma, n, trials, streams)?;
    let r = numerator / denominator.value;
    Ok(TwoJumpEstimate {
        ratio: Estimate {
            value: r,
            std_error: r * denominator.std_error / denominator.value,
        },
        numerator,
        denominator,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ma_process::CoefficientFamily;
    use crate::tail_noise::{NoiseModel, SpectralMeasure};
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rc1() -> (ModelSpec, FailureSet) {
        let noise = NoiseModel::new(1.5, SpectralMeasure::balanced(1.0).unwrap(), 1.0).unwrap();
        let fam = CoefficientFamily::Geometric {
            base: DMatrix::from_element(1, 1, 1.0),
            rho: 0.5,
        };
        (
            ModelSpec::new(fam, noise, 1e-8).unwrap(),
            FailureSet::half_space(vec![1.0], 1.2).unwrap(),
        )
    }

    #[test]
    fn single_jump_probability_closed_form() {
        let (spec, gamma) = rc1();
        // 3 (R - 3) >= 480  <=>  R >= 163
        let p = single_jump_probability(&spec, &gamma, 400);
        assert!((p - 163f64.powf(-1.5)).abs() < 1e-15);
        assert!((400.0 * p - 0.1922).abs() < 1e-3);
    }

    #[test]
    fn rejection_samples_are_members() {
        let (spec, gamma) = rc1();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let s = condition_by_rejection(&spec, &gamma, 100, (-200, 200), 10_000, &mut rng).unwrap();
            assert!(gamma.contains_scaled(s.path.sum(0), 100.0));
            assert!(s.attempts >= 1);
            assert_eq!(s.method, Method::Rejection);
        }
    }

    #[test]
    fn rejection_budget_exhaustion() {
        let (spec, gamma) = rc1();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        // one attempt will usually miss; look for the error among a few seeds
        let errs = (0..50)
            .filter(|_| {
                matches!(
                    condition_by_rejection(&spec, &gamma, 100, (0, 0), 1, &mut rng),
                    Err(Error::AcceptanceTooRare { attempts: 1, .. })
                )
            })
            .count();
        assert!(errs > 20);
    }

    #[test]
    fn rejection_guard_on_rare_events() {
        let (spec, _) = rc1();
        let far = FailureSet::half_space(vec![1.0], 1e6).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let err = condition_by_rejection(&spec, &far, 400, (0, 0), 10, &mut rng).unwrap_err();
        assert!(matches!(err, Error::AcceptanceTooRare { attempts: 0, .. }));
    }

    #[test]
    fn planted_jump_location_and_membership() {
        let (spec, gamma) = rc1();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let s = plant_single_jump(&spec, &gamma, 200, (-10, 10), &mut rng).unwrap();
        let star = s.planted_index.unwrap();
        assert!((0..200).contains(&star));
        assert!(3.0 * s.path.noise(star)[0] >= 240.0 * (1.0 - 1e-12));
    }

    #[test]
    fn planted_rejects_unreachable_sets() {
        let (spec, _) = rc1();
        let neg = FailureSet::half_space(vec![-1.0], 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        assert!(matches!(
            plant_single_jump(&spec, &neg, 100, (0, 0), &mut rng),
            Err(Error::NoAtomReachesGamma)
        ));
    }

    #[test]
    fn index_set_ranges() {
        assert_eq!(IndexSet::Full.range(10).unwrap(), (0, 9));
        assert_eq!(IndexSet::Fraction(0.5).range(10).unwrap(), (2, 6));
        assert!(IndexSet::Fraction(0.0).range(10).is_err());
    }

    #[test]
    fn equivalents_nest_and_q2_exact() {
        let (spec, gamma) = rc1();
        let streams = Streams::new(1).domain("eq-test", 200);
        let r = estimate_equivalents(&spec, &gamma, 200, IndexSet::Full, 2.0, 0.12, 4000, &streams).unwrap();
        let p = 83f64.powf(-1.5);
        assert!((r.q[1].value - 200.0 * p).abs() < 1e-12);
        assert!((r.q[2].value - (1.0 - (1.0 - p).powi(200))).abs() < 1e-12);
        assert!(r.q[4].value <= r.q[3].value);
        assert!(r.q[3].value <= r.q3_mc.value);
        assert!(r.q[3].value <= r.q[0].value);
    }

    #[test]
    fn two_jump_numerator_closed_form() {
        let (spec, gamma) = rc1();
        let streams = Streams::new(2).domain("tj-test", 100);
        let est = two_jump_ratio(&spec, &gamma, 100, 2.0, 0.12, 2000, &streams).unwrap();
        let count = 401.0f64;
        // |R - 3| > 12  <=>  R > 15
        let tail = 15f64.powf(-1.5);
        assert!((est.numerator - (count * count - count) * tail * tail).abs() < 1e-12);
        let far = two_jump_ratio(&spec, &gamma, 100, 2.0, 1e9, 2000, &streams).unwrap();
        assert!(far.ratio.value < 1e-20);
    }

    #[test]
    fn symmetric_difference_nonnegative() {
        let (spec, gamma) = rc1();
        let streams = Streams::new(3).domain("sd-test", 100);
        let r = symmetric_difference_ratio(&spec, &gamma, 100, 0.0, 1000, &streams).unwrap();
        assert!(r.value >= 0.0);
        assert!(symmetric_difference_ratio(&spec, &gamma, 100, 1.0, 10, &streams).is_err());
    }
}
