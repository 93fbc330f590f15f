//! Property suite behind `conevol verify` and the acceptance gate.

use std::sync::Arc;
use std::time::Instant;

use conevol_core::calibration::{make_profile_pair, solve_cone_for_tangent, CalibrationConfig, ShellCoordinate};
use conevol_core::cone::ConeParams;
use conevol_core::deletion::sample_body;
use conevol_core::density::tilde_f;
use conevol_core::experiment::{run_experiment, ExperimentConfig, ExperimentReport};
use conevol_core::rng::stream;
use conevol_core::sphere::{sample_unit_sphere, BallPoint, Dimension, Sphere, UnitVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Quick,
    Full,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    /// Acceptance criterion this check implements, if any.
    pub criterion: Option<u8>,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SuiteReport {
    pub level: Level,
    pub passed: bool,
    pub checks: Vec<Check>,
}

impl SuiteReport {
    pub fn failures(&self) -> Vec<&str> {
        self.checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| c.name.as_str())
            .collect()
    }
}

struct Plan {
    cap_samples: usize,
    density_bodies: usize,
    sequences: usize,
    volume_bodies: usize,
    volume_samples: usize,
    factorization_bodies: usize,
    cap_ratio_pairs: usize,
    cap_ratio_samples: usize,
}

impl Plan {
    fn for_level(level: Level) -> Self {
        match level {
            Level::Quick => Plan {
                cap_samples: 100_000,
                density_bodies: 2_000,
                sequences: 50,
                volume_bodies: 40,
                volume_samples: 2_500,
                factorization_bodies: 5_000,
                cap_ratio_pairs: 40,
                cap_ratio_samples: 500,
            },
            Level::Full => Plan {
                cap_samples: 1_000_000,
                density_bodies: 10_000,
                sequences: 200,
                volume_bodies: 200,
                volume_samples: 10_000,
                factorization_bodies: 100_000,
                cap_ratio_pairs: 100,
                cap_ratio_samples: 1_000,
            },
        }
    }
}

type Outcome = Result<(bool, String), String>;
type ReportCheck = fn(&ExperimentReport) -> (bool, String);

fn timed(name: &str, criterion: Option<u8>, f: impl FnOnce() -> Outcome) -> Check {
    let start = Instant::now();
    let (passed, detail) = match f() {
        Ok(v) => v,
        Err(e) => (false, format!("error: {e}")),
    };
    Check {
        name: name.to_string(),
        criterion,
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

/// Runs every check at `level`, using `base` for dimension, gap, tolerances
/// and seed.
pub fn run_suite(base: &ExperimentConfig, level: Level) -> SuiteReport {
    let plan = Plan::for_level(level);
    let seed = base.seed;
    let cal = &base.calibration;
    let mut checks = vec![
        timed("cap_measure", Some(1), || cap_measure(seed, plan.cap_samples)),
        timed("cap_derivative", Some(2), || cap_derivative(seed)),
        timed("calibration_round_trip", Some(3), || calibration_round_trip(cal, seed)),
        timed("pairing_identity", Some(4), || pairing_identity(cal)),
        timed("density_law", Some(5), || density_law(cal, seed, plan.density_bodies)),
    ];

    let mut cfg = base.clone();
    cfg.sampling.sequences_per_family = plan.sequences;
    cfg.sampling.volume_bodies = plan.volume_bodies;
    cfg.sampling.volume_samples = plan.volume_samples;
    cfg.diagnostics.enabled = true;
    cfg.diagnostics.factorization_bodies = plan.factorization_bodies;
    cfg.diagnostics.cap_ratio_pairs = plan.cap_ratio_pairs;
    cfg.diagnostics.cap_ratio_samples = plan.cap_ratio_samples;
    let start = Instant::now();
    let run = run_experiment(&cfg).map(|o| o.report).map_err(|e| e.to_string());
    let seconds = start.elapsed().as_secs_f64();
    let derived: [(&str, u8, ReportCheck); 4] = [
        ("volume_gap", 6, volume_gap),
        ("indistinguishability", 7, indistinguishability),
        ("factorization", 8, factorization),
        ("volume_concentration", 9, volume_concentration),
    ];
    for (name, criterion, f) in derived {
        checks.push(Check {
            name: name.to_string(),
            criterion: Some(criterion),
            seconds,
            ..match &run {
                Ok(report) => {
                    let (passed, detail) = f(report);
                    partial(passed, detail)
                }
                Err(e) => partial(false, format!("experiment failed: {e}")),
            }
        });
    }
    checks.push(match &run {
        Ok(report) => {
            let (passed, detail) = mutual_cap_ratio(report);
            Check {
                name: "mutual_cap_ratio".into(),
                criterion: None,
                seconds,
                ..partial(passed, detail)
            }
        }
        Err(e) => Check {
            name: "mutual_cap_ratio".into(),
            criterion: None,
            seconds,
            ..partial(false, format!("experiment failed: {e}"))
        },
    });
    checks.push(timed("determinism", Some(10), || determinism(base)));

    SuiteReport {
        level,
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

fn partial(passed: bool, detail: String) -> Check {
    Check {
        name: String::new(),
        criterion: None,
        passed,
        detail,
        seconds: 0.0,
    }
}

fn dim(n: usize) -> Result<Dimension, String> {
    Dimension::new(n).map_err(|e| e.to_string())
}

fn cap_measure(seed: u64, samples: usize) -> Outcome {
    let s3 = Sphere::new(dim(3)?);
    let worst3 = (0..1000)
        .map(|i| {
            let x = -1.0 + 2.0 * i as f64 / 999.0;
            (s3.cap(x).value - (1.0 - x) / 2.0).abs()
        })
        .fold(0.0, f64::max);
    let mut ok = worst3 <= 1e-12;
    let mut worst_z = 0.0f64;
    for n in [8usize, 16, 64] {
        let d = dim(n)?;
        let sphere = Sphere::new(d);
        let heights = [0.05, 0.1, 0.2];
        let mut hits = [0usize; 3];
        let mut rng = stream(seed, &[101, n as u64]);
        for _ in 0..samples {
            let t = sample_unit_sphere(d, &mut rng).coords()[0];
            for (h, &x) in hits.iter_mut().zip(&heights) {
                *h += (t >= x) as usize;
            }
        }
        for (h, &x) in hits.iter().zip(&heights) {
            let p = sphere.cap(x).value;
            let se = (p * (1.0 - p) / samples as f64).sqrt();
            let z = (*h as f64 / samples as f64 - p) / se;
            worst_z = worst_z.max(z.abs());
        }
    }
    ok &= worst_z <= 4.0;
    Ok((
        ok,
        format!("n=3 max error {worst3:.2e}; Monte Carlo ({samples} samples) max |z| = {worst_z:.2}"),
    ))
}

// d/dx ln Ψ by a five-point stencil against Ψ′/Ψ.
fn cap_derivative(seed: u64) -> Outcome {
    let mut rng = stream(seed, &[102]);
    let mut worst = 0.0f64;
    let mut at = (0, 0.0);
    for _ in 0..100 {
        let n = (3.0 * (4096.0f64 / 3.0).powf(rng.random::<f64>())).round() as usize;
        let x: f64 = rng.random_range(-0.95..0.95);
        let s = Sphere::new(dim(n)?);
        let exact = -(s.ln_neg_cap_derivative(x) - s.ln_cap(x)).exp();
        let scale = (1.0 - x * x) / (1.0 + (n as f64) * x.abs());
        let h = 1e-3 * scale;
        let f = |y: f64| s.ln_cap(y);
        let fd = (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h);
        let rel = ((fd - exact) / exact).abs();
        if rel > worst {
            worst = rel;
            at = (n, x);
        }
    }
    Ok((
        worst <= 1e-6,
        format!("max relative error {worst:.2e} at n = {}, x = {:.4}", at.0, at.1),
    ))
}

fn calibration_round_trip(cal: &CalibrationConfig, seed: u64) -> Outcome {
    let mut rng = stream(seed, &[103]);
    let (mut done, mut tried) = (0, 0);
    let mut worst = 0.0f64;
    while done < 100 {
        tried += 1;
        if tried > 100_000 {
            return Err("could not draw 100 admissible cones".into());
        }
        let a = rng.random_range(cal.a_min..cal.a_max);
        let b = rng.random_range(cal.b_min..cal.b_max);
        let u = rng.random_range(0.0..=1.0);
        let Ok(p) = ConeParams::new(a, b, cal.delta0, cal.delta1, cal.n) else {
            continue;
        };
        if p.cap_regime_radius() >= cal.shell_lo() {
            continue;
        }
        let Ok((g, gp)) = p.profile_with_slope(1.0 - cal.delta1 * u) else {
            continue;
        };
        let su = ShellCoordinate::new(u).map_err(|e| e.to_string())?;
        let q = solve_cone_for_tangent(su, g, gp, cal).map_err(|e| format!("a = {a}, b = {b}, u = {u}: {e}"))?;
        let err = ((q.a() - a).abs() / a).max((q.b() - b).abs() / b.abs().max(1.0));
        worst = worst.max(err);
        done += 1;
    }
    Ok((
        worst <= 1e-6,
        format!("100 cones, max relative parameter error {worst:.2e}"),
    ))
}

fn pairing_identity(cal: &CalibrationConfig) -> Outcome {
    let pair = make_profile_pair(cal).map_err(|e| e.to_string())?;
    let rel = pair.diagnostics.pairing_residual_relative;
    let limit = cal.tol_pair.min(1e-6);
    Ok((
        rel <= limit,
        format!(
            "residual {:.3e} = {rel:.3e}·m1·g1(1) on the 256-point shell grid (limit {limit:.0e}); m1 = {:.4}, m2 = {:.4}",
            pair.diagnostics.pairing_residual, pair.m1, pair.m2
        ),
    ))
}

fn density_law(cal: &CalibrationConfig, seed: u64, bodies: usize) -> Outcome {
    let pair = make_profile_pair(cal).map_err(|e| e.to_string())?;
    let axis = UnitVector::basis(cal.n, 0);
    let radii: Vec<f64> = (0..10).map(|k| 1.0 - cal.delta1 * k as f64 / 3.0).collect();
    let points = radii
        .iter()
        .map(|&r| BallPoint::on_ray(&axis, r))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (f, spec) in [pair.family1(), pair.family2()].into_iter().enumerate() {
        let spec = Arc::new(spec);
        let mut kept = vec![0usize; radii.len()];
        for b in 0..bodies {
            let body = sample_body(&spec, &mut stream(seed, &[104, f as u64, b as u64]));
            for (k, p) in kept.iter_mut().zip(&points) {
                *k += body.contains(p.coords()) as usize;
            }
        }
        for (k, &r) in kept.iter().zip(&radii) {
            let p = tilde_f(&spec, r);
            let se = (p * (1.0 - p) / bodies as f64).sqrt();
            let est = *k as f64 / bodies as f64;
            let z = if se > 0.0 {
                (est - p) / se
            } else if est == p {
                0.0
            } else {
                f64::INFINITY
            };
            worst = worst.max(z.abs());
        }
    }
    Ok((
        worst <= 4.0,
        format!("{bodies} bodies per family, 10 radii each: max |z| = {worst:.2}"),
    ))
}

fn volume_gap(r: &ExperimentReport) -> (bool, String) {
    let v = &r.volume;
    (
        v.analytic_ok && v.mc_ok,
        format!(
            "analytic ratio {:.5} vs e^kappa {:.5} (allowed {:.3e} incl. leak {:.4}/{:.4}); Monte Carlo {:.5} [{:.5}, {:.5}], {:.2}% from analytic",
            v.analytic_ratio,
            v.target_ratio,
            v.analytic_tolerance,
            r.distance.profile.leak_1,
            r.distance.profile.leak_2,
            v.mc_ratio,
            v.mc_ratio_ci.lo,
            v.mc_ratio_ci.hi,
            100.0 * v.mc_relative_error
        ),
    )
}

fn indistinguishability(r: &ExperimentReport) -> (bool, String) {
    let parts: Vec<String> = r
        .distinguishers
        .iter()
        .map(|d| {
            format!(
                "{} {:.4} [{:.4}, {:.4}]",
                d.name, d.accuracy, d.accuracy_ci.lo, d.accuracy_ci.hi
            )
        })
        .collect();
    let bound = r.distinguishers.first().map_or(f64::NAN, |d| d.bound);
    (
        r.consistent,
        format!(
            "{}; bound {:.4} from tv_bound = N·l1 = {}·{:.4e} = {:.4} (shell {:.3e}, below shell {:.3e})",
            parts.join(", "),
            bound,
            r.distance.points_per_sequence,
            r.distance.profile.l1,
            r.distance.tv_bound,
            r.distance.profile.l1_shell,
            r.distance.profile.l1_below_shell
        ),
    )
}

fn factorization(r: &ExperimentReport) -> (bool, String) {
    let Some(d) = &r.diagnostics else {
        return (false, "diagnostics disabled".into());
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for fam in &d.families {
        match &fam.factorization {
            Some(f) => {
                ok &= f.ok;
                parts.push(format!(
                    "family {}: joint {:.5} vs product {:.5} (z = {:.2}, {} bodies; pairwise overlap {:.4} gives {:.5}, z = {:.2})",
                    fam.family, f.joint, f.product, f.z, f.bodies, f.pair_overlap_ratio, f.overlap_corrected, f.z_corrected
                ));
            }
            None => {
                ok = false;
                parts.push(format!("family {}: not run", fam.family));
            }
        }
    }
    (ok, parts.join("; "))
}

fn volume_concentration(r: &ExperimentReport) -> (bool, String) {
    let Some(d) = &r.diagnostics else {
        return (false, "diagnostics disabled".into());
    };
    let ok = d.families.iter().all(|f| f.concentration.ok);
    let parts: Vec<String> = d
        .families
        .iter()
        .map(|f| {
            let c = &f.concentration;
            format!(
                "family {}: Var/Mean² {:.3e} (raw {:.3e}) vs prediction {:.3e}",
                f.family, c.corrected_var_over_mean_sq, c.var_over_mean_sq, c.prediction
            )
        })
        .collect();
    (ok, parts.join("; "))
}

fn mutual_cap_ratio(r: &ExperimentReport) -> (bool, String) {
    let Some(d) = &r.diagnostics else {
        return (false, "diagnostics disabled".into());
    };
    let mut ok = true;
    let mut parts = Vec::new();
    for fam in &d.families {
        if let Some(c) = &fam.cap_ratio {
            ok &= c.ok;
            parts.push(format!(
                "family {}: mean {:.3e} ± {:.1e} vs bound {:.3e}",
                fam.family, c.mean, c.se, c.bound
            ));
        }
    }
    (ok, parts.join("; "))
}

fn determinism(base: &ExperimentConfig) -> Outcome {
    let mut cfg = base.clone();
    cfg.sampling.points_per_sequence = cfg.sampling.points_per_sequence.min(32);
    cfg.sampling.sequences_per_family = 10;
    cfg.sampling.volume_bodies = 10;
    cfg.sampling.volume_samples = 500;
    cfg.diagnostics.enabled = false;
    let run = |threads: usize| -> Result<String, String> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| e.to_string())?;
        pool.install(|| run_experiment(&cfg))
            .and_then(|o| o.report.to_json())
            .map_err(|e| e.to_string())
    };
    let a = run(1)?;
    let b = run(3)?;
    Ok((
        a == b,
        format!(
            "reports at 1 and 3 workers {}",
            if a == b { "identical" } else { "differ" }
        ),
    ))
}
