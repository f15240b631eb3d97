//! Cluster extents and the dominant noise point of a conditioned replicate.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::failure_sets::FailureSet;
use crate::linalg::{mat_vec, norm};
use crate::ma_process::WindowPath;
use crate::rare_event::ConditionedSample;

/// Where the forward scan starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanStart {
    /// `inf { j > 0 : ... }`
    Strict,
    /// `inf { j >= 0 : ... }`
    Inclusive,
}

impl ScanStart {
    fn first(&self) -> i64 {
        match self {
            ScanStart::Strict => 1,
            ScanStart::Inclusive => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExtentConvention {
    pub gamma: ScanStart,
    pub psi: ScanStart,
}

impl Default for ExtentConvention {
    fn default() -> Self {
        ExtentConvention {
            gamma: ScanStart::Strict,
            psi: ScanStart::Inclusive,
        }
    }
}

/// First exits from a set in both directions; `None` means censored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Extent {
    pub plus: Option<i64>,
    pub minus: Option<i64>,
}

impl Extent {
    pub fn censored(&self) -> bool {
        self.plus.is_none() || self.minus.is_none()
    }
}

fn first_exit(path: &WindowPath, set: &FailureSet, n: f64, js: impl Iterator<Item = i64>) -> Option<i64> {
    js.into_iter().find(|&j| !set.contains_scaled(path.sum(j), n))
}

/// Forward and backward first exits of `S_j^n / n` from `set` within `cap`.
pub fn scan_extent(path: &WindowPath, set: &FailureSet, start: ScanStart, cap: i64) -> Extent {
    let n = path.n() as f64;
    Extent {
        plus: first_exit(path, set, n, start.first()..=cap),
        minus: first_exit(path, set, n, (-cap..=-1).rev()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClusterExtent {
    pub gamma: Extent,
    pub psi: Extent,
    pub censor_cap: i64,
}

/// `J_n^{±}` for Γ and `J_n^{Ψ,±}` for Ψ, scanning at most `censor_cap` windows
/// each way.
pub fn compute_cluster_extent(
    sample: &ConditionedSample,
    gamma: &FailureSet,
    psi: &FailureSet,
    censor_cap: i64,
    convention: ExtentConvention,
) -> Result<ClusterExtent> {
    let (j_min, j_max) = sample.path.j_range();
    if censor_cap < 1 || j_min > -censor_cap || j_max < censor_cap {
        return Err(Error::ScanRangeTooShort {
            have_min: j_min,
            have_max: j_max,
            cap: censor_cap,
        });
    }
    Ok(ClusterExtent {
        gamma: scan_extent(&sample.path, gamma, convention.gamma, censor_cap),
        psi: scan_extent(&sample.path, psi, convention.psi, censor_cap),
        censor_cap,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominantPoint {
    pub index: i64,
    /// `index / n`.
    pub location: f64,
    /// `A Z_index / n`.
    pub value: Vec<f64>,
}

fn dominant_window(sample: &ConditionedSample, m: f64) -> Result<(i64, i64)> {
    let half = (m * sample.n as f64).floor() as i64;
    let (lo, hi) = sample.path.noise_range();
    if lo > -half || hi < half {
        return Err(Error::WindowTooShort {
            have_min: lo,
            have_max: hi,
            need_min: -half,
            need_max: half,
        });
    }
    Ok((-half, half))
}

/// `argmax |Z_i|` over `i ∈ [-Mn, Mn]` (smallest index on ties).
pub fn extract_dominant_point(sample: &ConditionedSample, aggregate: &DMatrix<f64>, m: f64) -> Result<DominantPoint> {
    let (lo, hi) = dominant_window(sample, m)?;
    let mut best = lo;
    let mut best_norm = f64::NEG_INFINITY;
    for i in lo..=hi {
        let r = norm(sample.path.noise(i));
        if r > best_norm {
            best = i;
            best_norm = r;
        }
    }
    let n = sample.n as f64;
    Ok(DominantPoint {
        index: best,
        location: best as f64 / n,
        value: mat_vec(aggregate, sample.path.noise(best)).iter().map(|x| x / n).collect(),
    })
}

/// Number of `i ∈ [-Mn, Mn]` with `|Z_i| > threshold`.
pub fn count_exceedances(sample: &ConditionedSample, m: f64, threshold: f64) -> Result<usize> {
    let (lo, hi) = dominant_window(sample, m)?;
    Ok((lo..=hi).filter(|&i| norm(sample.path.noise(i)) > threshold).count())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRecord {
    pub replicate: u64,
    pub n: usize,
    pub extent: ClusterExtent,
    pub dominant: DominantPoint,
    pub attempts: u64,
    pub method: &'static str,
    /// `count_exceedances` at the configured dominance threshold.
    pub large_points: usize,
}

impl ClusterRecord {
    pub fn censored(&self) -> bool {
        self.extent.gamma.censored() || self.extent.psi.censored()
    }
}

/// Replays the stored sums: inside the reported cluster every window is in
/// the set, and the set is left at both reported endpoints.
pub fn verify_extent(path: &WindowPath, set: &FailureSet, start: ScanStart, extent: &Extent) -> bool {
    let n = path.n() as f64;
    let inside = |j: i64| set.contains_scaled(path.sum(j), n);
    let plus_ok = match extent.plus {
        Some(p) => !inside(p) && (start.first()..p).all(inside),
        None => true,
    };
    let minus_ok = match extent.minus {
        Some(m) => !inside(m) && (m + 1..0).all(inside),
        None => true,
    };
    plus_ok && minus_ok
}

fn opt(v: Option<i64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// Per-replicate CSV: `replicate,n,j_plus,j_minus,j_plus_psi,j_minus_psi,
/// censored,dominant_loc,dominant_val_0..,attempts,method`. Censored extents
/// are left empty.
pub fn write_records_csv<W: Write>(records: &[ClusterRecord], out: W) -> Result<()> {
    let d = records.first().map_or(1, |r| r.dominant.value.len());
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = [
        "replicate",
        "n",
        "j_plus",
        "j_minus",
        "j_plus_psi",
        "j_minus_psi",
        "censored",
        "dominant_loc",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((0..d).map(|k| format!("dominant_val_{k}")));
    header.push("attempts".into());
    header.push("method".into());
    w.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.replicate.to_string(),
            r.n.to_string(),
            opt(r.extent.gamma.plus),
            opt(r.extent.gamma.minus),
            opt(r.extent.psi.plus),
            opt(r.extent.psi.minus),
            r.censored().to_string(),
            r.dominant.index.to_string(),
        ];
        row.extend(r.dominant.value.iter().map(|v| format!("{v:e}")));
        row.push(r.attempts.to_string());
        row.push(r.method.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ma_process::{CoefficientFamily, ModelSpec};
    use crate::rare_event::{condition_by_rejection, Method};
    use crate::tail_noise::{NoiseModel, SpectralMeasure};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_spec() -> ModelSpec {
        let noise = NoiseModel::new(1.5, SpectralMeasure::balanced(1.0).unwrap(), 1.0).unwrap();
        ModelSpec::new(CoefficientFamily::identity(1), noise, 1e-8).unwrap()
    }

    /// All noise zero except one jump at `star`.
    fn single_jump_sample(spec: &ModelSpec, n: usize, star: i64, size: f64, cap: i64) -> ConditionedSample {
        let (lo, hi) = spec.noise_range(n, -cap, cap);
        let mut noise = vec![0.0; (hi - lo + 1) as usize];
        noise[(star - lo) as usize] = size;
        let path = WindowPath::from_noise(spec, n, -cap, cap, lo, noise).unwrap();
        ConditionedSample {
            path,
            n,
            attempts: 1,
            method: Method::Planted,
            member: true,
            planted_index: Some(star),
        }
    }

    #[test]
    fn single_jump_window_algebra() {
        let spec = identity_spec();
        let n = 50;
        let gamma = FailureSet::half_space(vec![1.0], 1.0).unwrap();
        for star in [0i64, 7, 49] {
            let s = single_jump_sample(&spec, n, star, 100.0, 2 * n as i64);
            let e = compute_cluster_extent(&s, &gamma, &gamma, 2 * n as i64, ExtentConvention::default()).unwrap();
            assert_eq!(e.gamma.plus, Some(star + 1));
            assert_eq!(e.gamma.minus, Some(star - n as i64));
            assert_eq!(e.psi.plus, Some(star + 1));
            assert!(verify_extent(&s.path, &gamma, ScanStart::Strict, &e.gamma));
            let dom = extract_dominant_point(&s, spec.aggregate(), 2.0).unwrap();
            assert_eq!(dom.index, star);
            assert_eq!(dom.value, vec![2.0]);
        }
    }

    #[test]
    fn psi_scan_starts_at_zero() {
        let spec = identity_spec();
        let n = 50;
        let gamma = FailureSet::half_space(vec![1.0], 1.0).unwrap();
        let psi = FailureSet::half_space(vec![1.0], 3.0).unwrap();
        let s = single_jump_sample(&spec, n, 10, 100.0, 100);
        let e = compute_cluster_extent(&s, &gamma, &psi, 100, ExtentConvention::default()).unwrap();
        assert_eq!(e.psi.plus, Some(0));
        let strict = ExtentConvention {
            gamma: ScanStart::Strict,
            psi: ScanStart::Strict,
        };
        let e = compute_cluster_extent(&s, &gamma, &psi, 100, strict).unwrap();
        assert_eq!(e.psi.plus, Some(1));
    }

    #[test]
    fn censoring_is_flagged() {
        let spec = identity_spec();
        let n = 50;
        let gamma = FailureSet::half_space(vec![1.0], 1.0).unwrap();
        let s = single_jump_sample(&spec, n, 10, 100.0, 100);
        // the cluster reaches j = 11 and j = -40, so a cap of 5 censors both sides
        let e = compute_cluster_extent(&s, &gamma, &gamma, 5, ExtentConvention::default()).unwrap();
        assert_eq!(e.gamma.plus, None);
        assert_eq!(e.gamma.minus, None);
        assert!(e.gamma.censored());
        assert!(matches!(
            compute_cluster_extent(&s, &gamma, &gamma, 101, ExtentConvention::default()),
            Err(Error::ScanRangeTooShort { .. })
        ));
    }

    #[test]
    fn dominant_window_checked() {
        let spec = identity_spec();
        let s = single_jump_sample(&spec, 50, 10, 100.0, 10);
        assert!(matches!(
            extract_dominant_point(&s, spec.aggregate(), 2.0),
            Err(Error::WindowTooShort { .. })
        ));
        assert_eq!(count_exceedances(&s, 0.2, 1.0).unwrap(), 1);
    }

    #[test]
    fn rejection_records_verify() {
        let noise = NoiseModel::new(1.5, SpectralMeasure::balanced(1.0).unwrap(), 1.0).unwrap();
        let fam = CoefficientFamily::Geometric {
            base: DMatrix::from_element(1, 1, 1.0),
            rho: 0.5,
        };
        let spec = ModelSpec::new(fam, noise, 1e-8).unwrap();
        let gamma = FailureSet::half_space(vec![1.0], 1.2).unwrap();
        let psi = FailureSet::half_space(vec![1.0], 2.4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 100;
        for _ in 0..30 {
            let s = condition_by_rejection(&spec, &gamma, n, (-200, 200), 100_000, &mut rng).unwrap();
            let e = compute_cluster_extent(&s, &gamma, &psi, 200, ExtentConvention::default()).unwrap();
            assert!(e.gamma.plus.is_none_or(|p| p >= 1));
            assert!(e.gamma.minus.is_none_or(|m| m <= -1));
            assert!(verify_extent(&s.path, &gamma, ScanStart::Strict, &e.gamma));
            assert!(verify_extent(&s.path, &psi, ScanStart::Inclusive, &e.psi));
        }
    }

    #[test]
    fn records_csv_header_and_censoring() {
        let spec = identity_spec();
        let gamma = FailureSet::half_space(vec![1.0], 1.0).unwrap();
        let s = single_jump_sample(&spec, 20, 3, 100.0, 40);
        let extent = compute_cluster_extent(&s, &gamma, &gamma, 2, ExtentConvention::default()).unwrap();
        let rec = ClusterRecord {
            replicate: 0,
            n: 20,
            extent,
            dominant: extract_dominant_point(&s, spec.aggregate(), 2.0).unwrap(),
            attempts: 1,
            method: "planted",
            large_points: 1,
        };
        let mut buf = Vec::new();
        write_records_csv(&[rec], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "replicate,n,j_plus,j_minus,j_plus_psi,j_minus_psi,censored,dominant_loc,dominant_val_0,attempts,method"
        );
        assert!(lines.next().unwrap().starts_with("0,20,,,,,true,3,"));
    }
}
