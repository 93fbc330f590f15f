//! Tangent-envelope calibration of the two paired profiles.
//!
//! Each target profile is a convex, decreasing function of the shell
//! coordinate u (r = 1 − δ₁u). For every node of a u-grid one cone is fitted
//! so that its profile touches the target with matching value and slope;
//! cone profiles are themselves convex in u with less curvature, so the
//! supremum of the tangent cones reproduces the target from below.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cone::{ConeIndexSet, ConeParams};
use crate::error::{Error, Result};
use crate::sphere::{Dimension, Sphere};

const NEWTON_MAX_ITER: usize = 100;
const VALUE_REL_TOL: f64 = 1e-11;
const SLOPE_REL_TOL: f64 = 1e-9;
const PAIR_CHECK_POINTS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    pub n: Dimension,
    pub delta0: f64,
    pub delta1: f64,
    pub a_min: f64,
    pub a_max: f64,
    pub b_min: f64,
    pub b_max: f64,
    /// Log volume gap κ = m₁·g₁(1).
    pub kappa: f64,
    /// Curvature c of the quadratic target, in units of δ₀δ₁|Ψ′(δ₀)|.
    pub curvature: f64,
    /// Vertex u_v of the quadratic target; slopes vanish there.
    pub vertex: f64,
    pub grid_size: usize,
    pub tol_fit: f64,
    pub tol_pair: f64,
    /// Largest admissible |dg/du| in units of δ₀δ₁|Ψ′(δ₀)|.
    pub max_slope: f64,
}

impl CalibrationConfig {
    /// Defaults for dimension n: δ₀ = n^{−1/4}, δ₁ = n^{−0.99}, a up to
    /// min(200, 0.9/δ₀) and b clipped so that x0 ∈ (δ₀/2, 2δ₀).
    pub fn for_dimension(n: Dimension) -> Self {
        let nf = n.as_f64();
        let delta0 = nf.powf(-0.25);
        let delta1 = nf.powf(-0.99);
        Self {
            n,
            delta0,
            delta1,
            a_min: 1.0,
            a_max: (0.9 / delta0).min(200.0),
            b_min: (-0.5 / delta1).max(-1000.0),
            b_max: (1.0 / delta1).min(1000.0),
            kappa: std::f64::consts::LN_2,
            curvature: 0.3,
            vertex: 2.5,
            grid_size: 256,
            tol_fit: 1e-8,
            tol_pair: 1e-6,
            max_slope: 1000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.delta0 > 0.0 && self.delta0 < 1.0) {
            return bad(format!("delta0 = {} must lie in (0, 1)", self.delta0));
        }
        if !(self.delta1 > 0.0 && self.delta1 < 0.5) {
            return bad(format!("delta1 = {} must lie in (0, 1/2)", self.delta1));
        }
        if !(self.a_min > 0.0 && self.a_min < self.a_max) {
            return bad(format!("need 0 < a_min < a_max, got [{}, {}]", self.a_min, self.a_max));
        }
        if !(self.b_min < self.b_max) {
            return bad(format!("need b_min < b_max, got [{}, {}]", self.b_min, self.b_max));
        }
        if !(self.kappa >= 0.0 && self.kappa.is_finite()) {
            return bad(format!("kappa = {} must be finite and >= 0", self.kappa));
        }
        if !(self.curvature > 0.0 && self.vertex >= 1.0) {
            return bad(format!(
                "target needs curvature > 0 and vertex >= 1, got {} and {}",
                self.curvature, self.vertex
            ));
        }
        if self.grid_size == 0 {
            return bad("grid_size must be at least 1".into());
        }
        if !(self.tol_fit > 0.0 && self.tol_pair > 0.0 && self.max_slope > 0.0) {
            return bad("tolerances and max_slope must be positive".into());
        }
        Ok(())
    }

    pub fn sphere(&self) -> Sphere {
        Sphere::new(self.n)
    }

    /// S = δ₀δ₁|Ψ′(δ₀)|, the natural unit of dg/du near r = 1.
    pub fn tangent_scale(&self) -> f64 {
        -self.delta0 * self.delta1 * self.sphere().cap_derivative(self.delta0)
    }

    pub fn shell_lo(&self) -> f64 {
        1.0 - self.delta1
    }
}

/// Shell coordinate u ∈ [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct ShellCoordinate(f64);

impl ShellCoordinate {
    pub fn new(u: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::domain("shell coordinate", u, "[0, 1]"));
        }
        Ok(Self(u))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn radius(self, delta1: f64) -> f64 {
        1.0 - delta1 * self.0
    }
}

impl TryFrom<f64> for ShellCoordinate {
    type Error = Error;
    fn try_from(u: f64) -> Result<Self> {
        Self::new(u)
    }
}

impl From<ShellCoordinate> for f64 {
    fn from(u: ShellCoordinate) -> f64 {
        u.0
    }
}

/// A target profile on the shell, as a function of u.
pub trait ProfileTarget: Sync {
    fn value_at(&self, u: f64) -> f64;
    fn derivative_at(&self, u: f64) -> f64;
}

/// Ψ(δ₀) − k·c·S·u·(2u_v − u): convex, decreasing on [0, 1] and equal to
/// Ψ(δ₀) at u = 0. The k = 2 target is 2·(k = 1 target) − Ψ(δ₀).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticTarget {
    pub base: f64,
    pub scale: f64,
    pub curvature: f64,
    pub vertex: f64,
    pub multiplier: f64,
}

impl QuadraticTarget {
    pub fn from_config(cfg: &CalibrationConfig, multiplier: f64) -> Self {
        Self {
            base: cfg.sphere().cap(cfg.delta0).value,
            scale: cfg.tangent_scale(),
            curvature: cfg.curvature,
            vertex: cfg.vertex,
            multiplier,
        }
    }
}

impl ProfileTarget for QuadraticTarget {
    fn value_at(&self, u: f64) -> f64 {
        self.base - self.multiplier * self.curvature * self.scale * u * (2.0 * self.vertex - u)
    }

    fn derivative_at(&self, u: f64) -> f64 {
        -2.0 * self.multiplier * self.curvature * self.scale * (self.vertex - u)
    }
}

/// Profile value and u-slope of cone (a, b) at radius r, if the pair is a
/// valid cone whose formula applies at r.
fn profile_and_slope(cfg: &CalibrationConfig, a: f64, b: f64, r: f64) -> Option<(f64, f64)> {
    let p = ConeParams::new(a, b, cfg.delta0, cfg.delta1, cfg.n).ok()?;
    let (g, gp) = p.profile_with_slope(r).ok()?;
    (g.is_finite() && gp.is_finite()).then_some((g, gp))
}

/// The linearized start a ≈ g0′/(δ₀δ₁Ψ′(δ₀)), b ≈ (g0 − Ψ(δ₀))/(δ₀δ₁Ψ′(δ₀)) − a·u.
pub fn newton_seed(u: ShellCoordinate, g0: f64, g0p: f64, cfg: &CalibrationConfig) -> (f64, f64) {
    let sphere = cfg.sphere();
    let unit = cfg.delta0 * cfg.delta1 * sphere.cap_derivative(cfg.delta0);
    let a = g0p / unit;
    let b = (g0 - sphere.cap(cfg.delta0).value) / unit - a * u.value();
    (a, b)
}

/// Exact inversion of (value, slope) → (a, b) through the cap height.
pub fn closed_form_tangent(u: ShellCoordinate, g0: f64, g0p: f64, cfg: &CalibrationConfig) -> Option<(f64, f64)> {
    let sphere = cfg.sphere();
    let r = u.radius(cfg.delta1);
    let xt = sphere.height_for_ln_cap(g0.ln());
    let xu = g0p / sphere.cap_derivative(xt);
    let q = xu / (cfg.delta1 * (1.0 - xt * xt).sqrt());
    let d = q * r * r / (1.0 + q * q * r * r).sqrt();
    let phi = (d / r).asin() - xt.asin();
    let x0 = (d.asin() - phi).sin();
    let a = d / cfg.delta0;
    let b = (x0 / cfg.delta0 - 1.0) / cfg.delta1;
    (a.is_finite() && b.is_finite()).then_some((a, b))
}

struct Newton<'a> {
    cfg: &'a CalibrationConfig,
    r: f64,
    g0: f64,
    g0p: f64,
    scale: f64,
}

impl Newton<'_> {
    fn residual(&self, a: f64, b: f64) -> Option<[f64; 2]> {
        let (g, gp) = profile_and_slope(self.cfg, a, b, self.r)?;
        Some([(g - self.g0) / self.scale, (gp - self.g0p) / self.scale])
    }

    fn converged(&self, f: [f64; 2]) -> bool {
        f[0].abs() * self.scale <= VALUE_REL_TOL * self.g0 && f[1].abs() * self.scale <= SLOPE_REL_TOL * self.g0p.abs()
    }

    fn jacobian(&self, a: f64, b: f64, f: [f64; 2]) -> Option<[[f64; 2]; 2]> {
        let mut jac = [[0.0; 2]; 2];
        let steps = [1e-7 * a.abs().max(1.0), 1e-7 * b.abs().max(1.0)];
        for (k, h) in steps.into_iter().enumerate() {
            let shift = |s: f64| if k == 0 { (a + s, b) } else { (a, b + s) };
            let (ap, bp) = shift(h);
            let (am, bm) = shift(-h);
            let col = match (self.residual(ap, bp), self.residual(am, bm)) {
                (Some(p), Some(m)) => [(p[0] - m[0]) / (2.0 * h), (p[1] - m[1]) / (2.0 * h)],
                (Some(p), None) => [(p[0] - f[0]) / h, (p[1] - f[1]) / h],
                (None, Some(m)) => [(f[0] - m[0]) / h, (f[1] - m[1]) / h],
                (None, None) => return None,
            };
            jac[0][k] = col[0];
            jac[1][k] = col[1];
        }
        Some(jac)
    }

    /// Damped Newton from (a, b); returns the root or the best residual norm.
    fn run(&self, mut a: f64, mut b: f64) -> std::result::Result<(f64, f64), f64> {
        let Some(mut f) = self.residual(a, b) else {
            return Err(f64::INFINITY);
        };
        let norm = |f: [f64; 2]| f[0].hypot(f[1]);
        for _ in 0..NEWTON_MAX_ITER {
            if self.converged(f) {
                return Ok((a, b));
            }
            let Some(j) = self.jacobian(a, b, f) else {
                return Err(norm(f));
            };
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            if det == 0.0 || !det.is_finite() {
                return Err(norm(f));
            }
            let da = -(j[1][1] * f[0] - j[0][1] * f[1]) / det;
            let db = -(-j[1][0] * f[0] + j[0][0] * f[1]) / det;
            let mut lambda = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let (na, nb) = (a + lambda * da, b + lambda * db);
                if let Some(nf) = self.residual(na, nb) {
                    if norm(nf) < norm(f) || self.converged(nf) {
                        a = na;
                        b = nb;
                        f = nf;
                        accepted = true;
                        break;
                    }
                }
                lambda *= 0.5;
            }
            if !accepted {
                return if self.converged(f) { Ok((a, b)) } else { Err(norm(f)) };
            }
        }
        if self.converged(f) {
            Ok((a, b))
        } else {
            Err(norm(f))
        }
    }
}

/// Cone whose profile has value `g0` and u-slope `g0p` at r(u).
///
/// Newton starts from the linearized seed and, failing that, from the
/// closed-form inversion. The result must sit in the configured (a, b) box
/// and be in its single-cap regime on the whole shell.
pub fn solve_cone_for_tangent(u: ShellCoordinate, g0: f64, g0p: f64, cfg: &CalibrationConfig) -> Result<ConeParams> {
    let scale = cfg.tangent_scale();
    let in_window = g0 > 0.0 && g0 <= 0.5 && g0p < 0.0 && g0p >= -cfg.max_slope * scale;
    if !in_window || !g0.is_finite() || !g0p.is_finite() {
        return Err(Error::OutsideWindow {
            u: u.value(),
            value: g0,
            slope: g0p,
        });
    }
    let newton = Newton {
        cfg,
        r: u.radius(cfg.delta1),
        g0,
        g0p,
        scale,
    };
    let (sa, sb) = newton_seed(u, g0, g0p, cfg);
    let solved = newton
        .run(sa, sb)
        .or_else(|first| match closed_form_tangent(u, g0, g0p, cfg) {
            Some((ca, cb)) => newton.run(ca, cb).map_err(|second| first.min(second)),
            None => Err(first),
        });
    let (a, b) = solved.map_err(|residual| Error::NonConvergence {
        u: u.value(),
        iterations: NEWTON_MAX_ITER,
        residual,
    })?;
    let outside = |reason: String| Error::OutsideBox {
        u: u.value(),
        a,
        b,
        reason,
    };
    if !(cfg.a_min..=cfg.a_max).contains(&a) {
        return Err(outside(format!("a not in [{}, {}]", cfg.a_min, cfg.a_max)));
    }
    if !(cfg.b_min..=cfg.b_max).contains(&b) {
        return Err(outside(format!("b not in [{}, {}]", cfg.b_min, cfg.b_max)));
    }
    let cone = ConeParams::new(a, b, cfg.delta0, cfg.delta1, cfg.n)?;
    if cone.cap_regime_radius() >= cfg.shell_lo() {
        return Err(outside(format!(
            "section is not a single cap below r = {:.6}",
            cone.cap_regime_radius()
        )));
    }
    Ok(cone)
}

/// Grid nodes u_k = k/(grid_size − 1); a single node sits at u = 0.
pub fn shell_grid(grid_size: usize) -> Vec<f64> {
    match grid_size {
        0 => Vec::new(),
        1 => vec![0.0],
        g => (0..g).map(|k| k as f64 / (g - 1) as f64).collect(),
    }
}

/// Largest |envelope − target| at the nodes and largest overshoot of the
/// envelope above the target on a 10× finer grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub node_error: f64,
    pub overshoot: f64,
    pub max_gap: f64,
}

pub fn fit_report(set: &ConeIndexSet, target: &dyn ProfileTarget, grid_size: usize) -> Result<FitReport> {
    let d1 = set.delta1();
    let mut report = FitReport {
        node_error: 0.0,
        overshoot: f64::NEG_INFINITY,
        max_gap: 0.0,
    };
    for u in shell_grid(grid_size) {
        let g = set.envelope_profile(1.0 - d1 * u)?.value;
        report.node_error = report.node_error.max((g - target.value_at(u)).abs());
    }
    let fine = 10 * grid_size.max(2);
    for u in shell_grid(fine) {
        let diff = set.envelope_profile(1.0 - d1 * u)?.value - target.value_at(u);
        report.overshoot = report.overshoot.max(diff);
        report.max_gap = report.max_gap.max(-diff);
    }
    Ok(report)
}

/// One tangent cone per grid node, checked against the target.
pub fn build_envelope(target: &dyn ProfileTarget, grid_size: usize, cfg: &CalibrationConfig) -> Result<ConeIndexSet> {
    let grid = shell_grid(grid_size);
    if grid.is_empty() {
        return Err(Error::Config("grid_size must be at least 1".into()));
    }
    let values: Vec<f64> = grid.iter().map(|&u| target.value_at(u)).collect();
    for k in 1..values.len().saturating_sub(1) {
        let second = values[k - 1] - 2.0 * values[k] + values[k + 1];
        if second < -1e-15 * values[k].abs() {
            return Err(Error::Convexity {
                index: k,
                second_difference: second,
            });
        }
    }
    let entries = grid
        .par_iter()
        .map(|&u| {
            let su = ShellCoordinate::new(u)?;
            solve_cone_for_tangent(su, target.value_at(u), target.derivative_at(u), cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let set = ConeIndexSet::new(entries)?;
    let fit = fit_report(&set, target, grid_size)?;
    if fit.node_error > cfg.tol_fit {
        return Err(Error::Fit {
            u: f64::NAN,
            error: fit.node_error,
            tol: cfg.tol_fit,
        });
    }
    if fit.overshoot > cfg.tol_fit {
        return Err(Error::Fit {
            u: f64::NAN,
            error: fit.overshoot,
            tol: cfg.tol_fit,
        });
    }
    Ok(set)
}

/// A Poisson-deletion family: index set and intensity m.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyFamilySpec {
    pub index_set: ConeIndexSet,
    pub m: f64,
}

impl BodyFamilySpec {
    pub fn new(index_set: ConeIndexSet, m: f64) -> Result<Self> {
        if !(m >= 0.0 && m.is_finite()) {
            return Err(Error::domain("intensity m", m, "[0, inf)"));
        }
        Ok(Self { index_set, m })
    }

    pub fn dimension(&self) -> Dimension {
        self.index_set.dimension()
    }

    /// Exact removed fraction g(r) of the radius-r sphere, for any r ∈ [0, 1].
    pub fn profile(&self, r: f64) -> f64 {
        self.index_set.removed_fraction(r).value
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairDiagnostics {
    pub fit1: FitReport,
    pub fit2: FitReport,
    /// max over the shell grid of |m₂g₂ − m₁g₁ − m₁g₁(1)|.
    pub pairing_residual: f64,
    /// The same, divided by m₁g₁(1) (zero when κ = 0).
    pub pairing_residual_relative: f64,
    pub g1_at_one: f64,
    pub g2_at_one: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub tol_fit: f64,
    pub tol_pair: f64,
}

/// The two calibrated families with m₂ = 2m₁ and m₂g₂ = m₁g₁ + m₁g₁(1) on
/// the shell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePair {
    pub format: String,
    pub n: Dimension,
    pub delta0: f64,
    pub delta1: f64,
    pub kappa: f64,
    pub m1: f64,
    pub m2: f64,
    pub shell_lo: f64,
    pub grid: usize,
    pub tolerances: Tolerances,
    pub config: CalibrationConfig,
    #[serde(rename = "I1")]
    pub i1: ConeIndexSet,
    #[serde(rename = "I2")]
    pub i2: ConeIndexSet,
    pub diagnostics: PairDiagnostics,
}

pub const PROFILE_PAIR_FORMAT: &str = "conevol/profile-pair/1";

impl ProfilePair {
    pub fn family1(&self) -> BodyFamilySpec {
        BodyFamilySpec {
            index_set: self.i1.clone(),
            m: self.m1,
        }
    }

    pub fn family2(&self) -> BodyFamilySpec {
        BodyFamilySpec {
            index_set: self.i2.clone(),
            m: self.m2,
        }
    }

    pub fn g1(&self, r: f64) -> f64 {
        self.i1.removed_fraction(r).value
    }

    pub fn g2(&self, r: f64) -> f64 {
        self.i2.removed_fraction(r).value
    }

    /// m₂g₂(r) − m₁g₁(r) − m₁g₁(1).
    pub fn pairing_residual(&self, r: f64) -> f64 {
        self.m2 * self.g2(r) - self.m1 * self.g1(r) - self.m1 * self.g1(1.0)
    }

    pub fn shell_grid(&self, points: usize) -> Vec<f64> {
        shell_grid(points).into_iter().map(|u| 1.0 - self.delta1 * u).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let pair: Self = serde_json::from_str(text)?;
        if pair.format != PROFILE_PAIR_FORMAT {
            return Err(Error::Format(format!(
                "unsupported profile pair format {:?}",
                pair.format
            )));
        }
        Ok(pair)
    }
}

/// Builds g₂ and g₁ = 2g₂ − g₂(u=0), fits both envelopes, sets
/// m₁ = κ/g₁(1), m₂ = 2m₁, and checks the pairing identity on the shell.
pub fn make_profile_pair(cfg: &CalibrationConfig) -> Result<ProfilePair> {
    cfg.validate()?;
    let t2 = QuadraticTarget::from_config(cfg, 1.0);
    let t1 = QuadraticTarget::from_config(cfg, 2.0);
    let i2 = build_envelope(&t2, cfg.grid_size, cfg)?;
    let i1 = build_envelope(&t1, cfg.grid_size, cfg)?;
    let fit1 = fit_report(&i1, &t1, cfg.grid_size)?;
    let fit2 = fit_report(&i2, &t2, cfg.grid_size)?;
    let g1_at_one = i1.envelope_profile(1.0)?.value;
    let g2_at_one = i2.envelope_profile(1.0)?.value;
    let m1 = cfg.kappa / g1_at_one;
    let m2 = 2.0 * m1;

    let mut worst = (0.0f64, 1.0f64);
    for u in shell_grid(PAIR_CHECK_POINTS) {
        let r = 1.0 - cfg.delta1 * u;
        let res = (m2 * i2.envelope_profile(r)?.value - m1 * i1.envelope_profile(r)?.value - m1 * g1_at_one).abs();
        if res > worst.0 {
            worst = (res, r);
        }
    }
    let gap = m1 * g1_at_one;
    let relative = if gap > 0.0 { worst.0 / gap } else { 0.0 };
    if relative > cfg.tol_pair {
        return Err(Error::Pairing {
            r: worst.1,
            residual: relative,
            tol: cfg.tol_pair,
        });
    }
    Ok(ProfilePair {
        format: PROFILE_PAIR_FORMAT.to_string(),
        n: cfg.n,
        delta0: cfg.delta0,
        delta1: cfg.delta1,
        kappa: cfg.kappa,
        m1,
        m2,
        shell_lo: cfg.shell_lo(),
        grid: cfg.grid_size,
        tolerances: Tolerances {
            tol_fit: cfg.tol_fit,
            tol_pair: cfg.tol_pair,
        },
        config: cfg.clone(),
        i1,
        i2,
        diagnostics: PairDiagnostics {
            fit1,
            fit2,
            pairing_residual: worst.0,
            pairing_residual_relative: relative,
            g1_at_one,
            g2_at_one,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg(n: usize) -> CalibrationConfig {
        CalibrationConfig::for_dimension(Dimension::new(n).unwrap())
    }

    fn exact_target(c: &CalibrationConfig, a: f64, b: f64, u: f64) -> Option<(f64, f64)> {
        let p = ConeParams::new(a, b, c.delta0, c.delta1, c.n).ok()?;
        if p.cap_regime_radius() >= c.shell_lo() {
            return None;
        }
        p.profile_with_slope(1.0 - c.delta1 * u).ok()
    }

    #[test]
    fn round_trip_recovers_parameters() {
        let c = cfg(64);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut done = 0;
        while done < 30 {
            let a = rng.random_range(c.a_min..c.a_max);
            let b = rng.random_range(c.b_min..c.b_max);
            let u = rng.random_range(0.0..=1.0);
            let Some((g, gp)) = exact_target(&c, a, b, u) else {
                continue;
            };
            let su = ShellCoordinate::new(u).unwrap();
            let p = solve_cone_for_tangent(su, g, gp, &c).unwrap();
            assert!((p.a() - a).abs() <= 1e-6 * a, "a {a} -> {}", p.a());
            assert!((p.b() - b).abs() <= 1e-6 * b.abs().max(1.0), "b {b} -> {}", p.b());
            done += 1;
        }
    }

    #[test]
    fn closed_form_agrees_with_forward_map() {
        let c = cfg(128);
        let (a, b) = (1.7, 12.0);
        let (g, gp) = exact_target(&c, a, b, 0.4).unwrap();
        let (ca, cb) = closed_form_tangent(ShellCoordinate::new(0.4).unwrap(), g, gp, &c).unwrap();
        assert!((ca - a).abs() < 1e-8 && (cb - b).abs() < 1e-6);
    }

    #[test]
    fn window_is_enforced() {
        let c = cfg(64);
        let u = ShellCoordinate::new(0.5).unwrap();
        let s = c.tangent_scale();
        assert!(matches!(
            solve_cone_for_tangent(u, 0.7, -s, &c),
            Err(Error::OutsideWindow { .. })
        ));
        assert!(matches!(
            solve_cone_for_tangent(u, 1e-3, s, &c),
            Err(Error::OutsideWindow { .. })
        ));
        assert!(matches!(
            solve_cone_for_tangent(u, 1e-3, -2000.0 * s, &c),
            Err(Error::OutsideWindow { .. })
        ));
    }

    #[test]
    fn box_violations_are_reported() {
        let mut c = cfg(64);
        let (g, gp) = exact_target(&c, 2.2, 0.0, 0.0).unwrap();
        c.a_max = 2.0;
        let err = solve_cone_for_tangent(ShellCoordinate::new(0.0).unwrap(), g, gp, &c).unwrap_err();
        assert!(matches!(err, Error::OutsideBox { .. }), "{err}");
    }

    #[test]
    fn single_node_envelope() {
        let c = cfg(64);
        let t = QuadraticTarget::from_config(&c, 1.0);
        let set = build_envelope(&t, 1, &c).unwrap();
        assert_eq!(set.len(), 1);
        let (g, gp) = set.entries()[0].profile_with_slope(1.0).unwrap();
        assert!((g - t.value_at(0.0)).abs() <= 1e-11 * g);
        assert!((gp - t.derivative_at(0.0)).abs() <= 1e-9 * gp.abs());
    }

    #[test]
    fn concave_target_is_rejected() {
        struct Concave(f64);
        impl ProfileTarget for Concave {
            fn value_at(&self, u: f64) -> f64 {
                self.0 - 1e-5 * u * u
            }
            fn derivative_at(&self, u: f64) -> f64 {
                -2e-5 * u
            }
        }
        let c = cfg(64);
        let t = Concave(c.sphere().cap(c.delta0).value);
        assert!(matches!(build_envelope(&t, 8, &c), Err(Error::Convexity { .. })));
    }

    #[test]
    fn fit_error_shrinks_quadratically() {
        let c = cfg(64);
        let t = QuadraticTarget::from_config(&c, 1.0);
        let coarse = fit_report(&build_envelope(&t, 8, &c).unwrap(), &t, 8).unwrap();
        let fine = fit_report(&build_envelope(&t, 16, &c).unwrap(), &t, 16).unwrap();
        let ratio = coarse.max_gap / fine.max_gap;
        assert!((2.0..=6.0).contains(&ratio), "ratio {ratio}");
        assert!(fine.overshoot <= c.tol_fit);
    }

    #[test]
    fn zero_gap_gives_zero_intensities() {
        let mut c = cfg(64);
        c.kappa = 0.0;
        c.grid_size = 16;
        let pair = make_profile_pair(&c).unwrap();
        assert_eq!(pair.m1, 0.0);
        assert_eq!(pair.m2, 0.0);
    }
}
