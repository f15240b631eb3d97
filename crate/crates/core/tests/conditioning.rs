mod common;

use catlab::cluster_stats::{compute_cluster_extent, extract_dominant_point, verify_extent, ExtentConvention};
use catlab::experiment::run_experiment;
use catlab::linalg::norm;
use catlab::rare_event::{
    estimate_equivalents, single_jump_probability, window_probability, Conditioner, ConditionedSample, IndexSet,
};
use catlab::rng::Streams;
use catlab::stat_tests::ks_two_sample;
use common::{rc1_config, rc1_gamma, rc1_psi, rc1_spec};

fn stat(rows: &[catlab::experiment::ResultRow], n: usize, name: &str) -> f64 {
    rows.iter().find(|r| r.n == n && r.stat == name).unwrap_or_else(|| panic!("{name}")).value
}

fn draw(c: &Conditioner, planted: bool, reps: u64, streams: &Streams) -> Vec<ConditionedSample> {
    (0..reps)
        .map(|r| {
            let mut rng = streams.stream(r);
            if planted {
                c.planted(&mut rng).unwrap()
            } else {
                c.rejection(1_000_000, &mut rng).unwrap()
            }
        })
        .collect()
}

#[test]
fn rejection_samples_are_members_with_verified_extents() {
    let spec = rc1_spec();
    let (gamma, psi) = (rc1_gamma(), rc1_psi());
    let n = 200;
    let c = Conditioner::new(&spec, &gamma, n, (-400, 400)).unwrap();
    let conv = ExtentConvention::default();
    for s in draw(&c, false, 200, &Streams::new(1)) {
        assert!(s.member && gamma.contains_scaled(s.path.sum(0), n as f64));
        let e = compute_cluster_extent(&s, &gamma, &psi, 400, conv).unwrap();
        assert!(verify_extent(&s.path, &gamma, conv.gamma, &e.gamma));
        assert!(verify_extent(&s.path, &psi, conv.psi, &e.psi));
    }
}

#[test]
fn rejection_rate_matches_unconditioned_window_probability() {
    let spec = rc1_spec();
    let gamma = rc1_gamma();
    let n = 400;
    let rows = run_experiment(&rc1_config("cluster_law", "n_list = [400]\nreplicates = 2000\nmaster_seed = 3")).unwrap();
    let rate = rows.iter().find(|r| r.stat == "acceptance_rate").unwrap();
    let p = window_probability(&spec, &gamma, n, 100_000, &Streams::new(77)).unwrap();
    let se = (rate.err.unwrap().powi(2) + p.std_error.powi(2)).sqrt();
    assert!((rate.value - p.value).abs() < 4.0 * se, "{} vs {}", rate.value, p.value);
}

#[test]
fn rejection_law_does_not_depend_on_attempt_budget() {
    let spec = rc1_spec();
    let gamma = rc1_gamma();
    let c = Conditioner::new(&spec, &gamma, 200, (-400, 400)).unwrap();
    let jplus = |budget: u64, seed: u64| -> Vec<f64> {
        let streams = Streams::new(seed);
        (0..1000)
            .map(|r| {
                let s = c.rejection(budget, &mut streams.stream(r)).unwrap();
                let e = compute_cluster_extent(&s, &gamma, &gamma, 400, ExtentConvention::default()).unwrap();
                e.gamma.plus.unwrap_or(400) as f64
            })
            .collect()
    };
    let ks = ks_two_sample(&jplus(1000, 10), &jplus(2000, 11)).unwrap();
    assert!(ks.p_value > 0.05, "{ks:?}");
}

#[test]
fn planted_membership_failure_decreases() {
    let fail = |n: usize| {
        let cfg = rc1_config(
            "cluster_law",
            &format!("n_list = [{n}]\nreplicates = 2000\nmaster_seed = 5\nmethod = \"planted\""),
        );
        stat(&run_experiment(&cfg).unwrap(), n, "planted_membership_failure")
    };
    let (a, b) = (fail(100), fail(1000));
    println!("planted membership failure: n=100 {a}, n=1000 {b}");
    assert!(a > b);
}

#[test]
fn acceptance_ratio_approaches_one() {
    let gap = |n: usize| {
        let cfg = rc1_config("cluster_law", &format!("n_list = [{n}]\nreplicates = 2000\nmaster_seed = 8"));
        let rows = run_experiment(&cfg).unwrap();
        (stat(&rows, n, "acceptance_rate") / stat(&rows, n, "acceptance_estimate") - 1.0).abs()
    };
    let (a, b) = (gap(400), gap(1600));
    println!("acceptance relative gap: n=400 {a}, n=1600 {b}");
    assert!(a > b);
}

#[test]
fn planted_jump_usually_dominates() {
    let spec = rc1_spec();
    let gamma = rc1_gamma();
    let n = 400;
    let c = Conditioner::new(&spec, &gamma, n, (-800, 800)).unwrap().with_noise_cover(-800, 800).unwrap();
    let samples = draw(&c, true, 2000, &Streams::new(21));
    let hits = samples
        .iter()
        .filter(|s| extract_dominant_point(s, spec.aggregate(), 2.0).unwrap().index == s.planted_index.unwrap())
        .count();
    let frac = hits as f64 / samples.len() as f64;
    println!("planted index is the argmax in {frac} of draws");
    // the planted jump exceeds n|Γ|/|A| = 160; the max of 1600 other draws is of order 1600^{2/3}
    assert!(frac > 0.5);
}

#[test]
fn planted_and_rejection_extents_are_close() {
    let spec = rc1_spec();
    let gamma = rc1_gamma();
    let n = 400;
    let c = Conditioner::new(&spec, &gamma, n, (-800, 800)).unwrap();
    let jplus = |planted: bool, seed: u64| -> Vec<f64> {
        draw(&c, planted, 2000, &Streams::new(seed))
            .iter()
            .filter(|s| s.member)
            .filter_map(|s| {
                let e = compute_cluster_extent(s, &gamma, &gamma, 800, ExtentConvention::default()).unwrap();
                e.gamma.plus.map(|p| p as f64 / n as f64)
            })
            .collect()
    };
    let ks = ks_two_sample(&jplus(false, 30), &jplus(true, 31)).unwrap();
    println!("planted vs rejection J+/n: {ks:?}");
    assert!(ks.statistic < 0.1);
}

#[test]
fn single_jump_probability_closed_form() {
    let p = single_jump_probability(&rc1_spec(), &rc1_gamma(), 400);
    assert!((p - 163f64.powf(-1.5)).abs() < 1e-15);
    assert!((400.0 * p - 0.19221).abs() < 1e-4);
}

#[test]
fn equivalents_nest_for_every_seed() {
    let spec = rc1_spec();
    let gamma = rc1_gamma();
    for seed in 0..5 {
        for set in [IndexSet::Full, IndexSet::Fraction(0.5)] {
            let r = estimate_equivalents(&spec, &gamma, 100, set, 2.0, 0.12, 2000, &Streams::new(seed)).unwrap();
            assert!(r.q[4].value <= r.q[3].value && r.q[3].value <= r.q3_mc.value, "{r:?}");
        }
    }
}

#[test]
fn dominant_magnitude_is_large_in_conditioned_draws() {
    let spec = rc1_spec();
    let gamma = rc1_gamma();
    let n = 400;
    let c = Conditioner::new(&spec, &gamma, n, (-800, 800)).unwrap().with_noise_cover(-800, 800).unwrap();
    let samples = draw(&c, false, 300, &Streams::new(2));
    let big = samples
        .iter()
        .filter(|s| norm(&extract_dominant_point(s, spec.aggregate(), 2.0).unwrap().value) > 0.6)
        .count();
    assert!(big as f64 / samples.len() as f64 > 0.9);
}
