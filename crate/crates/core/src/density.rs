//! Analytic single-point model: f̃(r) = exp(−m·g(r)), the radial law of a
//! uniform point of a random body, and the L1 distance between two families.
//!
//! Radial integrals use t = rⁿ, which turns the near-delta n·r^{n−1} dr
//! into dt on [0, 1]; the integrands are then smooth apart from kinks at the
//! shell edge and where the profile leaves its single-cap regime.

use serde::{Deserialize, Serialize};

use crate::calibration::BodyFamilySpec;
use crate::deletion::PointSequence;
use crate::error::{Error, Result};
use crate::quadrature::integrate;

pub const QUAD_REL_TOL: f64 = 1e-10;
const QUAD_ABS_TOL: f64 = 1e-15;

/// exp(−m·g(r)), the probability that a fixed point at radius r survives.
pub fn tilde_f(spec: &BodyFamilySpec, r: f64) -> f64 {
    if spec.m == 0.0 {
        return 1.0;
    }
    (-spec.m * spec.profile(r)).exp()
}

fn radius_of(t: f64, n: f64) -> f64 {
    t.powf(1.0 / n)
}

/// t = rⁿ at which the integrand may have kinks.
fn breakpoints(spec: &BodyFamilySpec) -> Vec<f64> {
    let set = &spec.index_set;
    let n = set.dimension().as_f64();
    let nearest = set.entries().iter().map(|e| e.distance()).fold(f64::INFINITY, f64::min);
    [nearest, set.cap_regime_radius(), 1.0 - set.delta1()]
        .into_iter()
        .filter(|r| *r > 0.0 && *r < 1.0)
        .map(|r| r.powf(n))
        .collect()
}

/// ∫ n r^{n−1} h(r) dr over t = rⁿ ∈ [lo, hi], as ∫ h(t^{1/n}) dt.
fn radial_integral<F: FnMut(f64) -> f64>(spec: &BodyFamilySpec, mut h: F, lo: f64, hi: f64) -> f64 {
    let n = spec.dimension().as_f64();
    integrate(
        |t| h(radius_of(t, n)),
        lo,
        hi,
        &breakpoints(spec),
        QUAD_REL_TOL,
        QUAD_ABS_TOL,
    )
    .value
}

/// E Vol(K)/Vol(D_n) = ∫₀¹ n r^{n−1} exp(−m·g(r)) dr.
pub fn expected_relative_volume(spec: &BodyFamilySpec) -> f64 {
    if spec.m == 0.0 {
        return 1.0;
    }
    radial_integral(spec, |r| tilde_f(spec, r), 0.0, 1.0)
}

/// ∫₀¹ n r^{n−1} g(r)^k dr.
pub fn profile_moment(spec: &BodyFamilySpec, k: i32) -> f64 {
    radial_integral(spec, |r| spec.profile(r).powi(k), 0.0, 1.0)
}

/// Normalized radial law of |X| for X uniform on a random body.
#[derive(Debug, Clone)]
pub struct RadialDensity {
    spec: BodyFamilySpec,
    log_normalizer: f64,
}

impl RadialDensity {
    pub fn new(spec: BodyFamilySpec) -> Self {
        let z = expected_relative_volume(&spec);
        Self {
            spec,
            log_normalizer: z.ln(),
        }
    }

    pub fn spec(&self) -> &BodyFamilySpec {
        &self.spec
    }

    pub fn log_normalizer(&self) -> f64 {
        self.log_normalizer
    }

    pub fn normalizer(&self) -> f64 {
        self.log_normalizer.exp()
    }

    /// (n−1)·ln r + ln n − m·g(r).
    pub fn log_unnormalized(&self, r: f64) -> f64 {
        let n = self.spec.dimension().as_f64();
        (n - 1.0) * r.ln() + n.ln() - self.spec.m * self.spec.profile(r)
    }

    pub fn log_density(&self, r: f64) -> f64 {
        self.log_unnormalized(r) - self.log_normalizer
    }

    pub fn density(&self, r: f64) -> f64 {
        self.log_density(r).exp()
    }

    /// f̃(r)/Z, the density of X itself relative to uniform on D_n.
    pub fn normalized_tilde_f(&self, r: f64) -> f64 {
        (-self.spec.m * self.spec.profile(r) - self.log_normalizer).exp()
    }

    /// P(|X| ≤ r).
    pub fn cdf(&self, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        if r >= 1.0 {
            return 1.0;
        }
        let t = r.powf(self.spec.dimension().as_f64());
        let mass = radial_integral(&self.spec, |s| tilde_f(&self.spec, s), 0.0, t);
        (mass / self.normalizer()).clamp(0.0, 1.0)
    }

    /// r with P(|X| ≤ r) = p: safeguarded Newton in u = rⁿ, where the
    /// density of u is f̃/Z.
    pub fn quantile(&self, p: f64) -> f64 {
        if p <= 0.0 {
            return 0.0;
        }
        if p >= 1.0 {
            return 1.0;
        }
        let n = self.spec.dimension().as_f64();
        let radius = |u: f64| u.powf(1.0 / n);
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        let mut u = p;
        for _ in 0..100 {
            let r = radius(u);
            let f = self.cdf(r) - p;
            if f.abs() <= 1e-13 {
                return r;
            }
            if f < 0.0 {
                lo = u;
            } else {
                hi = u;
            }
            if hi - lo <= 1e-15 {
                break;
            }
            let step = u - f / self.normalized_tilde_f(r);
            u = if step > lo && step < hi { step } else { 0.5 * (lo + hi) };
        }
        radius(u)
    }
}

/// L1 distance between the normalized single-point densities of two
/// families, split into the calibrated shell and the leak below it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfileDistanceReport {
    pub l1: f64,
    pub l1_shell: f64,
    pub l1_below_shell: f64,
    pub shell_mass_1: f64,
    pub shell_mass_2: f64,
    pub leak_1: f64,
    pub leak_2: f64,
    pub normalizer_1: f64,
    pub normalizer_2: f64,
    pub shell_lo: f64,
}

impl ProfileDistanceReport {
    /// N·l1, the telescoping bound on the total variation between the laws
    /// of N-point sequences.
    pub fn tv_bound(&self, points: usize) -> f64 {
        points as f64 * self.l1
    }

    /// Flat `key = value` lines.
    pub fn to_key_values(&self) -> String {
        let v = serde_json::to_value(self).expect("plain struct");
        let mut out = String::new();
        if let serde_json::Value::Object(map) = v {
            for (k, val) in map {
                out.push_str(&format!("{k} = {val}\n"));
            }
        }
        out
    }
}

pub fn l1_profile_distance(spec1: &BodyFamilySpec, spec2: &BodyFamilySpec) -> Result<ProfileDistanceReport> {
    let n1 = spec1.dimension();
    if n1 != spec2.dimension() {
        return Err(Error::DimensionMismatch {
            left: n1.get(),
            right: spec2.dimension().get(),
        });
    }
    let n = n1.as_f64();
    let z1 = expected_relative_volume(spec1);
    let z2 = expected_relative_volume(spec2);
    let shell_lo = 1.0 - spec1.index_set.delta1().max(spec2.index_set.delta1());
    let t_shell = shell_lo.powf(n);

    let mut breaks = breakpoints(spec1);
    breaks.extend(breakpoints(spec2));
    let piece = |lo: f64, hi: f64, f: &dyn Fn(f64) -> f64| {
        integrate(|t| f(radius_of(t, n)), lo, hi, &breaks, QUAD_REL_TOL, QUAD_ABS_TOL).value
    };
    let gap = |r: f64| (tilde_f(spec1, r) / z1 - tilde_f(spec2, r) / z2).abs();
    let l1_below = piece(0.0, t_shell, &gap);
    let l1_shell = piece(t_shell, 1.0, &gap);
    let shell_mass_1 = piece(t_shell, 1.0, &|r| tilde_f(spec1, r)) / z1;
    let shell_mass_2 = piece(t_shell, 1.0, &|r| tilde_f(spec2, r)) / z2;
    Ok(ProfileDistanceReport {
        l1: l1_below + l1_shell,
        l1_shell,
        l1_below_shell: l1_below,
        shell_mass_1,
        shell_mass_2,
        leak_1: (1.0 - shell_mass_1).max(0.0),
        leak_2: (1.0 - shell_mass_2).max(0.0),
        normalizer_1: z1,
        normalizer_2: z2,
        shell_lo,
    })
}

/// L1 distance between binned histograms of |x|ⁿ (uniform under the ball).
pub fn empirical_radial_distance(sample1: &[PointSequence], sample2: &[PointSequence], bins: usize) -> Result<f64> {
    let hist = |sample: &[PointSequence]| -> Result<Vec<f64>> {
        let mut counts = vec![0.0; bins];
        let mut total = 0usize;
        for seq in sample {
            for p in &seq.points {
                let u = p.norm().powi(p.dim() as i32);
                let k = ((u * bins as f64) as usize).min(bins - 1);
                counts[k] += 1.0;
                total += 1;
            }
        }
        if total == 0 {
            return Err(Error::EmptySample);
        }
        counts.iter_mut().for_each(|c| *c /= total as f64);
        Ok(counts)
    };
    if bins == 0 {
        return Err(Error::Config("bins must be positive".into()));
    }
    let dim = |s: &[PointSequence]| s.iter().flat_map(|q| q.points.first()).map(|p| p.dim()).next();
    if let (Some(a), Some(b)) = (dim(sample1), dim(sample2)) {
        if a != b {
            return Err(Error::DimensionMismatch { left: a, right: b });
        }
    }
    let h1 = hist(sample1)?;
    let h2 = hist(sample2)?;
    Ok(h1.iter().zip(&h2).map(|(a, b)| (a - b).abs()).sum())
}
