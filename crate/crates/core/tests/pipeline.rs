mod common;

use conevol_core::experiment::{run_experiment, run_lemma_diagnostics};

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn small_run_is_consistent_and_reproducible() {
    let cfg = common::small_experiment();
    let one = in_pool(1, || run_experiment(&cfg).unwrap());
    let three = in_pool(3, || run_experiment(&cfg).unwrap());
    assert_eq!(one.report.to_json().unwrap(), three.report.to_json().unwrap());
    assert_eq!(one.sequences, three.sequences);
    assert_eq!(one.volumes, three.volumes);

    let r = &one.report;
    assert!(r.consistent);
    assert_eq!(r.distinguishers.len(), 2);
    for d in &r.distinguishers {
        assert_eq!(d.trials, 40);
        assert!((0.0..=1.0).contains(&d.accuracy));
        assert!(d.accuracy_ci.lo <= d.accuracy && d.accuracy <= d.accuracy_ci.hi);
        let rows: usize = d.confusion.iter().flatten().sum();
        assert_eq!(rows, 40);
    }
    assert!((r.distance.tv_bound - 16.0 * r.distance.profile.l1).abs() < 1e-15);
    assert_eq!(one.volumes.len(), 40);
    assert_eq!(one.densities.len(), 33);
    let hist: f64 = one.histogram.iter().map(|h| h.analytic_1).sum();
    assert!((hist - 1.0).abs() < 1e-8);
    assert!(r.volume.analytic_ok);
}

#[test]
fn different_seeds_give_different_samples() {
    let cfg = common::small_experiment();
    let mut other = cfg.clone();
    other.seed += 1;
    other.diagnostics.enabled = false;
    let mut base = cfg;
    base.diagnostics.enabled = false;
    let a = run_experiment(&base).unwrap();
    let b = run_experiment(&other).unwrap();
    assert_ne!(a.volumes, b.volumes);
}

#[test]
fn zero_points_means_chance_accuracy() {
    let mut cfg = common::small_experiment();
    cfg.sampling.points_per_sequence = 0;
    cfg.diagnostics.enabled = false;
    let out = run_experiment(&cfg).unwrap();
    for d in &out.report.distinguishers {
        assert_eq!(d.accuracy, 0.5, "{}", d.name);
    }
    assert_eq!(out.report.distance.tv_bound, 0.0);
}

#[test]
fn zero_gap_collapses_both_families_to_the_ball() {
    let mut cfg = common::small_experiment();
    cfg.calibration.kappa = 0.0;
    let out = run_experiment(&cfg).unwrap();
    let r = &out.report;
    assert_eq!(r.calibration.m1, 0.0);
    assert_eq!(r.calibration.m2, 0.0);
    assert_eq!(r.volume.analytic_ratio, 1.0);
    assert_eq!(r.volume.mc_ratio, 1.0);
    assert_eq!(r.distance.profile.l1, 0.0);
    let diag = r.diagnostics.as_ref().unwrap();
    for fam in &diag.families {
        assert_eq!(fam.concentration.var_over_mean_sq, 0.0);
    }
    assert!(diag.ok);
}

#[test]
fn lemma_diagnostics_alone() {
    let cfg = common::small_experiment();
    let d = run_lemma_diagnostics(&cfg).unwrap();
    assert_eq!(d.families.len(), 2);
    for fam in &d.families {
        let f = fam.factorization.as_ref().unwrap();
        assert_eq!(f.bodies, 600);
        assert!(f.product > 0.0 && f.product < 1.0);
        let c = fam.cap_ratio.as_ref().unwrap();
        assert!(c.mean >= 0.0 && c.mean <= 1.0);
    }
}
