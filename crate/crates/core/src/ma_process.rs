//! Two-sided moving averages `X_k = sum_i A_i Z_{k-i}` and their window sums.
//!
//! Coefficients are truncated to lags `|i| <= K`, where `K` is the smallest
//! lag whose discarded norm mass is below `truncation_rel_err * A_abs`.
//! Window sums `S_j^n = X_j + ... + X_{j+n-1}` are computed once at the left
//! end of the scan and then rolled forward with `S_{j+1} = S_j + X_{j+n} - X_j`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{from_row_major, gemv_acc, op_norm, singular_range, to_row_major};
use crate::tail_noise::{NoiseConfig, NoiseModel};

/// Longest admissible truncation lag.
pub const MAX_LAG: u64 = 1 << 20;

/// Default cap on stored noise values (`f64`s) per path.
pub const DEFAULT_NOISE_CAP: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq)]
pub enum CoefficientFamily {
    Finite { lags: BTreeMap<i64, DMatrix<f64>> },
    /// `A_i = rho^|i| B`.
    Geometric { base: DMatrix<f64>, rho: f64 },
    /// `A_i = (1 + |i|)^-s B`.
    Polynomial { base: DMatrix<f64>, s: f64 },
}

impl CoefficientFamily {
    pub fn identity(d: usize) -> Self {
        let mut lags = BTreeMap::new();
        lags.insert(0, DMatrix::identity(d, d));
        CoefficientFamily::Finite { lags }
    }

    pub fn dim(&self) -> usize {
        match self {
            CoefficientFamily::Finite { lags } => lags.values().next().map_or(0, |m| m.nrows()),
            CoefficientFamily::Geometric { base, .. } | CoefficientFamily::Polynomial { base, .. } => {
                base.nrows()
            }
        }
    }

    fn weight(&self, lag: i64) -> f64 {
        let k = lag.unsigned_abs() as f64;
        match self {
            CoefficientFamily::Geometric { rho, .. } => rho.powf(k),
            CoefficientFamily::Polynomial { s, .. } => (1.0 + k).powf(-s),
            CoefficientFamily::Finite { .. } => unreachable!("finite families have explicit matrices"),
        }
    }

    pub fn coefficient(&self, lag: i64) -> DMatrix<f64> {
        match self {
            CoefficientFamily::Finite { lags } => {
                let d = self.dim();
                lags.get(&lag).cloned().unwrap_or_else(|| DMatrix::zeros(d, d))
            }
            CoefficientFamily::Geometric { base, .. } | CoefficientFamily::Polynomial { base, .. } => {
                base * self.weight(lag)
            }
        }
    }

    /// Checks both short-memory conditions and picks the truncation lag.
    pub fn validate(&self, truncation_rel_err: f64) -> Result<ModelReport> {
        if !(truncation_rel_err > 0.0 && truncation_rel_err < 1.0) {
            return Err(Error::InvalidModel(format!(
                "truncation_rel_err must be in (0, 1), got {truncation_rel_err}"
            )));
        }
        let (a_abs, aggregate, lag) = match self {
            CoefficientFamily::Finite { lags } => {
                if lags.is_empty() {
                    return Err(Error::InvalidModel("finite family has no coefficients".into()));
                }
                let d = self.dim();
                if lags.values().any(|m| m.nrows() != d || m.ncols() != d) {
                    return Err(Error::InvalidModel("coefficient matrices must all be d x d".into()));
                }
                let a_abs: f64 = lags.values().map(op_norm).sum();
                let aggregate = lags.values().fold(DMatrix::zeros(d, d), |acc, m| acc + m);
                let lag = lags.keys().map(|k| k.unsigned_abs()).max().unwrap_or(0);
                (a_abs, aggregate, lag)
            }
            CoefficientFamily::Geometric { base, rho } => {
                check_square(base)?;
                if !(rho.is_finite() && *rho > 0.0) {
                    return Err(Error::InvalidModel(format!("rho must be in (0, 1), got {rho}")));
                }
                if *rho >= 1.0 {
                    return Err(Error::NotAbsolutelySummable(format!("geometric ratio {rho} >= 1")));
                }
                let total = (1.0 + rho) / (1.0 - rho);
                // tail sum_{|i|>K} rho^|i| = 2 rho^{K+1} / (1 - rho)
                let target = truncation_rel_err * total;
                let mut lag = 0u64;
                while 2.0 * rho.powf(lag as f64 + 1.0) / (1.0 - rho) > target {
                    lag += 1;
                    if lag > MAX_LAG {
                        return Err(Error::TruncationTooLong { lag, max: MAX_LAG });
                    }
                }
                (op_norm(base) * total, base * total, lag)
            }
            CoefficientFamily::Polynomial { base, s } => {
                check_square(base)?;
                if !(s.is_finite() && *s > 1.0) {
                    return Err(Error::NotAbsolutelySummable(format!("polynomial exponent {s} <= 1")));
                }
                let total = 2.0 * hurwitz_zeta(*s, 1.0) - 1.0;
                let target = truncation_rel_err * total;
                // tail sum_{|i|>K} (1+|i|)^-s = 2 zeta(s, K + 2); find the smallest K
                let tail = |k: u64| 2.0 * hurwitz_zeta(*s, k as f64 + 2.0);
                if tail(MAX_LAG) > target {
                    return Err(Error::TruncationTooLong {
                        lag: MAX_LAG + 1,
                        max: MAX_LAG,
                    });
                }
                let (mut lo, mut hi) = (0u64, MAX_LAG);
                while lo < hi {
                    let mid = (lo + hi) / 2;
                    if tail(mid) <= target {
                        hi = mid;
                    } else {
                        lo = mid + 1;
                    }
                }
                (op_norm(base) * total, base * total, lo)
            }
        };
        if !a_abs.is_finite() {
            return Err(Error::NotAbsolutelySummable("coefficient norms overflow".into()));
        }
        let (norm, min_sv) = singular_range(&aggregate);
        if !(norm > 0.0) || min_sv < 1e-10 * norm {
            return Err(Error::SingularAggregate { min_sv, norm });
        }
        Ok(ModelReport {
            a_abs,
            aggregate,
            aggregate_norm: norm,
            min_singular_value: min_sv,
            lag,
        })
    }
}

fn check_square(base: &DMatrix<f64>) -> Result<()> {
    if base.nrows() == 0 || base.nrows() != base.ncols() {
        return Err(Error::InvalidModel("base matrix must be square and nonempty".into()));
    }
    Ok(())
}

/// Hurwitz zeta `sum_{k>=0} (a + k)^-s` for `s > 1`, `a >= 1`, by Euler-Maclaurin.
pub fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    const N: usize = 12;
    // B_2j / (2j)!
    const B: [f64; 5] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30240.0,
        -1.0 / 1209600.0,
        1.0 / 47900160.0,
    ];
    let head: f64 = (0..N).map(|k| (a + k as f64).powf(-s)).sum();
    let x = a + N as f64;
    let mut tail = x.powf(1.0 - s) / (s - 1.0) + 0.5 * x.powf(-s);
    // rising factorial s (s+1) ... (s + 2j - 2)
    let mut rising = s;
    for (j, b) in B.iter().enumerate() {
        let p = 2 * j as i32 + 1;
        tail += b * rising * x.powf(-s - p as f64);
        rising *= (s + p as f64) * (s + p as f64 + 1.0);
    }
    head + tail
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelReport {
    pub a_abs: f64,
    /// Exact `sum_i A_i` (closed form for parametric families).
    pub aggregate: DMatrix<f64>,
    pub aggregate_norm: f64,
    pub min_singular_value: f64,
    /// Truncation lag `K`.
    pub lag: u64,
}

#[derive(Debug, Clone)]
pub struct ModelSpec {
    coeffs: CoefficientFamily,
    noise: NoiseModel,
    truncation_rel_err: f64,
    report: ModelReport,
    /// Row-major `d x d` blocks for lags `-K..=K`.
    kernel: Vec<f64>,
    noise_cap: usize,
}

impl ModelSpec {
    pub fn new(coeffs: CoefficientFamily, noise: NoiseModel, truncation_rel_err: f64) -> Result<Self> {
        let report = coeffs.validate(truncation_rel_err)?;
        let d = coeffs.dim();
        if noise.dim() != d {
            return Err(Error::InvalidModel(format!(
                "noise dimension {} does not match coefficient dimension {d}",
                noise.dim()
            )));
        }
        let k = report.lag as i64;
        let mut kernel = Vec::with_capacity((2 * k as usize + 1) * d * d);
        for lag in -k..=k {
            kernel.extend(to_row_major(&coeffs.coefficient(lag)));
        }
        Ok(ModelSpec {
            coeffs,
            noise,
            truncation_rel_err,
            report,
            kernel,
            noise_cap: DEFAULT_NOISE_CAP,
        })
    }

    pub fn with_noise_cap(mut self, cap: usize) -> Self {
        self.noise_cap = cap;
        self
    }

    pub fn coeffs(&self) -> &CoefficientFamily {
        &self.coeffs
    }

    pub fn noise(&self) -> &NoiseModel {
        &self.noise
    }

    pub fn truncation_rel_err(&self) -> f64 {
        self.truncation_rel_err
    }

    pub fn report(&self) -> &ModelReport {
        &self.report
    }

    pub fn aggregate(&self) -> &DMatrix<f64> {
        &self.report.aggregate
    }

    pub fn lag(&self) -> i64 {
        self.report.lag as i64
    }

    pub fn dim(&self) -> usize {
        self.noise.dim()
    }

    pub fn noise_cap(&self) -> usize {
        self.noise_cap
    }

    fn block(&self, lag: i64) -> &[f64] {
        let d = self.dim();
        let idx = (lag + self.lag()) as usize;
        &self.kernel[idx * d * d..(idx + 1) * d * d]
    }

    /// Noise index range `[lo, hi]` feeding `S_j^n` for `j` in `[j_min, j_max]`.
    pub fn noise_range(&self, n: usize, j_min: i64, j_max: i64) -> (i64, i64) {
        (j_min - self.lag(), j_max + n as i64 - 1 + self.lag())
    }
}

/// Report for [`ModelSpec`]: both short-memory conditions certified.
pub fn validate_model(spec: &ModelSpec) -> Result<ModelReport> {
    spec.coeffs.validate(spec.truncation_rel_err)
}

/// `gamma_{i,n} = sum_{k=-i}^{n-i-1} A_k` over the truncated support.
pub fn gamma_coefficient(spec: &ModelSpec, i: i64, n: usize) -> DMatrix<f64> {
    let d = spec.dim();
    let k = spec.lag();
    let lo = (-i).max(-k);
    let hi = (n as i64 - i - 1).min(k);
    let mut acc = vec![0.0; d * d];
    for lag in lo..=hi {
        for (a, b) in acc.iter_mut().zip(spec.block(lag)) {
            *a += b;
        }
    }
    from_row_major(d, &acc)
}

/// The coefficients `gamma_{i,n}` for `i` in `[-K, n-1+K]`, so that
/// `S_0^n = sum_i gamma_{i,n} Z_i`.
#[derive(Debug, Clone)]
pub struct GammaTable {
    n: usize,
    first: i64,
    d: usize,
    blocks: Vec<f64>,
}

impl GammaTable {
    pub fn new(spec: &ModelSpec, n: usize) -> Self {
        let d = spec.dim();
        let k = spec.lag();
        let first = -k;
        let last = n as i64 - 1 + k;
        let mut blocks = Vec::with_capacity((last - first + 1) as usize * d * d);
        for i in first..=last {
            blocks.extend(to_row_major(&gamma_coefficient(spec, i, n)));
        }
        GammaTable { n, first, d, blocks }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Noise index range the table touches.
    pub fn support(&self) -> (i64, i64) {
        let len = (self.blocks.len() / (self.d * self.d)) as i64;
        (self.first, self.first + len - 1)
    }

    /// `S_j^n` from noise stored contiguously starting at index `noise_start`.
    pub fn window_sum(&self, noise: &[f64], noise_start: i64, j: i64) -> Vec<f64> {
        let d = self.d;
        let mut out = vec![0.0; d];
        let (lo, hi) = self.support();
        for i in lo..=hi {
            let idx = (i + j - noise_start) as usize;
            let g = &self.blocks[(i - lo) as usize * d * d..(i - lo + 1) as usize * d * d];
            gemv_acc(d, g, &noise[idx * d..(idx + 1) * d], &mut out);
        }
        out
    }
}

/// Window sums over a scan range, with the noise that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowPath {
    n: usize,
    d: usize,
    j_min: i64,
    j_max: i64,
    sums: Vec<f64>,
    noise_start: i64,
    noise: Vec<f64>,
}

impl WindowPath {
    /// Build window sums from a stored noise window covering
    /// `[j_min - K, j_max + n - 1 + K]` starting at `noise_start`.
    pub fn from_noise(
        spec: &ModelSpec,
        n: usize,
        j_min: i64,
        j_max: i64,
        noise_start: i64,
        noise: Vec<f64>,
    ) -> Result<Self> {
        check_window(n, j_min, j_max)?;
        let d = spec.dim();
        let k = spec.lag();
        let (need_lo, need_hi) = spec.noise_range(n, j_min, j_max);
        let have_hi = noise_start + (noise.len() / d) as i64 - 1;
        if !noise.len().is_multiple_of(d) || noise_start > need_lo || have_hi < need_hi {
            return Err(Error::WindowTooShort {
                have_min: noise_start,
                have_max: have_hi,
                need_min: need_lo,
                need_max: need_hi,
            });
        }
        // X_t for t in [j_min, j_max + n - 1]
        let x_first = j_min;
        let x_len = (j_max + n as i64 - j_min) as usize;
        let mut xs = vec![0.0; x_len * d];
        for (t_off, x) in xs.chunks_exact_mut(d).enumerate() {
            let t = x_first + t_off as i64;
            for lag in -k..=k {
                let idx = (t - lag - noise_start) as usize;
                gemv_acc(d, spec.block(lag), &noise[idx * d..(idx + 1) * d], x);
            }
        }
        let count = (j_max - j_min + 1) as usize;
        let mut sums = vec![0.0; count * d];
        for x in xs[..n * d].chunks_exact(d) {
            for (s, v) in sums[..d].iter_mut().zip(x) {
                *s += v;
            }
        }
        for step in 1..count {
            let (done, rest) = sums.split_at_mut(step * d);
            let prev = &done[(step - 1) * d..];
            let enter = &xs[(step - 1 + n) * d..(step + n) * d];
            let leave = &xs[(step - 1) * d..step * d];
            for c in 0..d {
                rest[c] = prev[c] + (enter[c] - leave[c]);
            }
        }
        Ok(WindowPath {
            n,
            d,
            j_min,
            j_max,
            sums,
            noise_start,
            noise,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn j_range(&self) -> (i64, i64) {
        (self.j_min, self.j_max)
    }

    pub fn noise_range(&self) -> (i64, i64) {
        (self.noise_start, self.noise_start + (self.noise.len() / self.d) as i64 - 1)
    }

    /// `S_j^n`.
    pub fn sum(&self, j: i64) -> &[f64] {
        assert!(j >= self.j_min && j <= self.j_max, "window {j} outside the scan range");
        let idx = (j - self.j_min) as usize;
        &self.sums[idx * self.d..(idx + 1) * self.d]
    }

    /// `Z_i`.
    pub fn noise(&self, i: i64) -> &[f64] {
        let (lo, hi) = self.noise_range();
        assert!(i >= lo && i <= hi, "noise index {i} outside the stored window");
        let idx = (i - self.noise_start) as usize;
        &self.noise[idx * self.d..(idx + 1) * self.d]
    }

    pub fn noise_values(&self) -> &[f64] {
        &self.noise
    }

    pub fn noise_start(&self) -> i64 {
        self.noise_start
    }

    /// `X_t`, recomputed from the stored noise.
    pub fn observation(&self, spec: &ModelSpec, t: i64) -> Vec<f64> {
        let mut x = vec![0.0; self.d];
        for lag in -spec.lag()..=spec.lag() {
            gemv_acc(self.d, spec.block(lag), self.noise(t - lag), &mut x);
        }
        x
    }
}

fn check_window(n: usize, j_min: i64, j_max: i64) -> Result<()> {
    if n == 0 {
        return Err(Error::InvalidWindow("window length must be at least 1".into()));
    }
    if j_min > 0 || j_max < 0 {
        return Err(Error::InvalidWindow(format!(
            "scan range [{j_min}, {j_max}] must contain 0"
        )));
    }
    Ok(())
}

/// Fill `out` (length `count * d`) with independent noise draws.
pub fn fill_noise<R: Rng + ?Sized>(noise: &NoiseModel, rng: &mut R, out: &mut [f64]) {
    let d = noise.dim();
    for z in out.chunks_exact_mut(d) {
        noise.sample_into(rng, z);
    }
}

pub(crate) fn check_budget(spec: &ModelSpec, lo: i64, hi: i64) -> Result<usize> {
    let requested = (hi - lo + 1) as usize * spec.dim();
    if requested > spec.noise_cap {
        return Err(Error::AllocationBudgetExceeded {
            requested,
            cap: spec.noise_cap,
        });
    }
    Ok(requested)
}

/// Simulate `S_j^n` for `j` in `[j_min, j_max]`, drawing each `Z_i` once in
/// index order.
pub fn simulate_window_sums<R: Rng + ?Sized>(
    spec: &ModelSpec,
    n: usize,
    j_min: i64,
    j_max: i64,
    rng: &mut R,
) -> Result<WindowPath> {
    check_window(n, j_min, j_max)?;
    let (lo, hi) = spec.noise_range(n, j_min, j_max);
    let len = check_budget(spec, lo, hi)?;
    let mut noise = vec![0.0; len];
    fill_noise(spec.noise(), rng, &mut noise);
    WindowPath::from_noise(spec, n, j_min, j_max, lo, noise)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagMatrix {
    pub lag: i64,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoeffConfig {
    Finite {
        lags: Vec<LagMatrix>,
    },
    Geometric {
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
        rho: f64,
    },
    Polynomial {
        #[serde(rename = "B")]
        b: Vec<Vec<f64>>,
        s: f64,
    },
}

fn matrix_from_rows(field: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let d = rows.len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::config(field, "matrix must be square and nonempty (rows of equal length)"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(d, d, &flat))
}

impl CoeffConfig {
    pub fn build(&self) -> Result<CoefficientFamily> {
        Ok(match self {
            CoeffConfig::Finite { lags } => {
                let mut map = BTreeMap::new();
                for l in lags {
                    if map.insert(l.lag, matrix_from_rows("model.coeffs.lags.A", &l.a)?).is_some() {
                        return Err(Error::config("model.coeffs.lags", format!("lag {} repeated", l.lag)));
                    }
                }
                CoefficientFamily::Finite { lags: map }
            }
            CoeffConfig::Geometric { b, rho } => CoefficientFamily::Geometric {
                base: matrix_from_rows("model.coeffs.B", b)?,
                rho: *rho,
            },
            CoeffConfig::Polynomial { b, s } => CoefficientFamily::Polynomial {
                base: matrix_from_rows("model.coeffs.B", b)?,
                s: *s,
            },
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub coeffs: CoeffConfig,
    pub noise: NoiseConfig,
    #[serde(default = "default_truncation")]
    pub truncation_rel_err: f64,
}

fn default_truncation() -> f64 {
    1e-8
}

impl ModelConfig {
    pub fn build(&self) -> Result<ModelSpec> {
        ModelSpec::new(self.coeffs.build()?, self.noise.build()?, self.truncation_rel_err)
    }
}
