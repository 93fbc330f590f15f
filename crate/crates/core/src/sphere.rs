//! Geometry of the unit sphere and ball: cap measures, their derivative, and
//! uniform sampling.
//!
//! The cap measure Ψ(x) is the normalized surface fraction
//! σ(θ₁ ≥ x) = ½·I_{1−x²}((n−1)/2, ½) for x ≥ 0, with Ψ(−x) = 1 − Ψ(x).
//! Everything is evaluated in log space so that Ψ stays meaningful for
//! n in the thousands, where the value itself underflows.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{ln_1m_exp, ln_beta, ln_beta_reg};

/// Ambient dimension, at least 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct Dimension(usize);

impl Dimension {
    pub fn new(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Dimension(n));
        }
        Ok(Self(n))
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64
    }
}

impl TryFrom<usize> for Dimension {
    type Error = Error;
    fn try_from(n: usize) -> Result<Self> {
        Self::new(n)
    }
}

impl From<Dimension> for usize {
    fn from(d: Dimension) -> usize {
        d.0
    }
}

impl std::fmt::Display for Dimension {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// Signed height of a cap's base hyperplane, in [−1, 1].
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct CapHeight(f64);

impl CapHeight {
    pub fn new(x: f64) -> Result<Self> {
        if !(-1.0..=1.0).contains(&x) {
            return Err(Error::domain("cap height", x, "[-1, 1]"));
        }
        Ok(Self(x))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for CapHeight {
    type Error = Error;
    fn try_from(x: f64) -> Result<Self> {
        Self::new(x)
    }
}

impl From<CapHeight> for f64 {
    fn from(h: CapHeight) -> f64 {
        h.0
    }
}

/// A surface fraction together with its natural log.
///
/// `log_value` stays finite after `value` underflows to zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CapMeasure {
    pub value: f64,
    pub log_value: f64,
}

impl CapMeasure {
    pub const ZERO: CapMeasure = CapMeasure {
        value: 0.0,
        log_value: f64::NEG_INFINITY,
    };
    pub const ONE: CapMeasure = CapMeasure {
        value: 1.0,
        log_value: 0.0,
    };

    pub fn from_log(log_value: f64) -> Self {
        let log_value = log_value.min(0.0);
        Self {
            value: log_value.exp(),
            log_value,
        }
    }
}

/// A point on S^{n−1}.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct UnitVector(Vec<f64>);

impl UnitVector {
    pub const NORM_TOL: f64 = 1e-12;

    pub fn new(coords: Vec<f64>) -> Result<Self> {
        let norm = norm(&coords);
        if coords.len() < 3 {
            return Err(Error::Dimension(coords.len()));
        }
        if (norm - 1.0).abs() > Self::NORM_TOL {
            return Err(Error::domain("unit vector norm", norm, "1 ± 1e-12"));
        }
        Ok(Self(coords))
    }

    /// Scales a non-zero vector onto the sphere.
    pub fn normalize(mut coords: Vec<f64>) -> Result<Self> {
        let len = norm(&coords);
        if len == 0.0 || !len.is_finite() {
            return Err(Error::domain("vector norm", len, "(0, inf)"));
        }
        coords.iter_mut().for_each(|c| *c /= len);
        Self::new(coords)
    }

    /// The k-th standard basis vector in dimension n.
    pub fn basis(n: Dimension, k: usize) -> Self {
        let mut coords = vec![0.0; n.get()];
        coords[k % n.get()] = 1.0;
        Self(coords)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl TryFrom<Vec<f64>> for UnitVector {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<UnitVector> for Vec<f64> {
    fn from(v: UnitVector) -> Vec<f64> {
        v.0
    }
}

/// A point of the closed unit ball D_n.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct BallPoint(Vec<f64>);

impl BallPoint {
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 3 {
            return Err(Error::Dimension(coords.len()));
        }
        let r = norm(&coords);
        if !(r <= 1.0 + 1e-12) {
            return Err(Error::domain("ball point norm", r, "[0, 1]"));
        }
        Ok(Self(coords))
    }

    pub fn origin(n: Dimension) -> Self {
        Self(vec![0.0; n.get()])
    }

    /// `r·θ` for a unit direction θ and r in [0, 1].
    pub fn on_ray(theta: &UnitVector, r: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&r) {
            return Err(Error::domain("radius", r, "[0, 1]"));
        }
        Ok(Self(theta.coords().iter().map(|c| c * r).collect()))
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.0)
    }
}

impl TryFrom<Vec<f64>> for BallPoint {
    type Error = Error;
    fn try_from(v: Vec<f64>) -> Result<Self> {
        Self::new(v)
    }
}

impl From<BallPoint> for Vec<f64> {
    fn from(p: BallPoint) -> Vec<f64> {
        p.0
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cap-measure evaluator with the dimension-dependent constants cached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sphere {
    n: Dimension,
    alpha: f64,
    ln_beta: f64,
    exponent: f64,
}

impl Sphere {
    pub fn new(n: Dimension) -> Self {
        let alpha = 0.5 * (n.as_f64() - 1.0);
        Self {
            n,
            alpha,
            ln_beta: ln_beta(alpha, 0.5),
            exponent: 0.5 * (n.as_f64() - 3.0),
        }
    }

    pub fn dimension(&self) -> Dimension {
        self.n
    }

    /// ln Ψ(x); `x` is clamped to [−1, 1].
    pub fn ln_cap(&self, x: f64) -> f64 {
        let x = x.clamp(-1.0, 1.0);
        if x >= 0.0 {
            let z = (1.0 - x) * (1.0 + x);
            -std::f64::consts::LN_2 + ln_beta_reg(self.alpha, 0.5, self.ln_beta, z, x * x)
        } else {
            ln_1m_exp(self.ln_cap(-x))
        }
    }

    pub fn cap(&self, x: f64) -> CapMeasure {
        CapMeasure::from_log(self.ln_cap(x))
    }

    /// ln |Ψ′(x)|.
    pub fn ln_neg_cap_derivative(&self, x: f64) -> f64 {
        let x = x.clamp(-1.0, 1.0);
        if self.exponent == 0.0 {
            return -self.ln_beta;
        }
        self.exponent * ((1.0 - x) * (1.0 + x)).ln() - self.ln_beta
    }

    /// Ψ′(x) = −(1−x²)^{(n−3)/2} / B(½, (n−1)/2).
    pub fn cap_derivative(&self, x: f64) -> f64 {
        -self.ln_neg_cap_derivative(x).exp()
    }

    /// σ{θ : lo < θ₁ < hi}.
    pub fn band(&self, lo: f64, hi: f64) -> CapMeasure {
        if !(hi > lo) {
            return CapMeasure::ZERO;
        }
        let l_lo = self.ln_cap(lo);
        let l_hi = self.ln_cap(hi);
        if l_lo == f64::NEG_INFINITY {
            return CapMeasure::ZERO;
        }
        CapMeasure::from_log(l_lo + ln_1m_exp((l_hi - l_lo).min(0.0)))
    }

    /// The height x with ln Ψ(x) = `log_measure`.
    pub fn height_for_ln_cap(&self, log_measure: f64) -> f64 {
        if log_measure >= 0.0 {
            return -1.0;
        }
        if log_measure == f64::NEG_INFINITY {
            return 1.0;
        }
        let (mut lo, mut hi) = (-1.0f64, 1.0f64);
        let mut x = if log_measure < -std::f64::consts::LN_2 {
            0.5
        } else {
            -0.5
        };
        for _ in 0..200 {
            let f = self.ln_cap(x) - log_measure;
            if f > 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            if f == 0.0 || hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1e-300) {
                break;
            }
            let slope = -(self.ln_neg_cap_derivative(x) - self.ln_cap(x)).exp();
            let mut next = x - f / slope;
            if !next.is_finite() || next <= lo || next >= hi {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 1e-16 * x.abs().max(1e-300) {
                x = next;
                break;
            }
            x = next;
        }
        x
    }

    pub fn sample_direction<R: Rng + ?Sized>(&self, rng: &mut R) -> UnitVector {
        sample_unit_sphere(self.n, rng)
    }

    /// A uniform direction θ conditioned on ⟨θ, axis⟩ ∈ (lo, hi).
    pub fn sample_band<R: Rng + ?Sized>(&self, axis: &UnitVector, lo: f64, hi: f64, rng: &mut R) -> UnitVector {
        let l_lo = self.ln_cap(lo);
        let l_hi = self.ln_cap(hi);
        let ratio = (l_hi - l_lo).exp().min(1.0);
        let u: f64 = rng.random();
        let target = l_lo + (u + (1.0 - u) * ratio).ln();
        let t = self.height_for_ln_cap(target).clamp(lo.max(-1.0), hi.min(1.0));
        let w = orthogonal_direction(axis, rng);
        let s = (1.0 - t * t).max(0.0).sqrt();
        let coords = axis.coords().iter().zip(w.iter()).map(|(a, b)| t * a + s * b).collect();
        UnitVector::normalize(coords).expect("band sample is non-zero")
    }
}

fn orthogonal_direction<R: Rng + ?Sized>(axis: &UnitVector, rng: &mut R) -> Vec<f64> {
    loop {
        let mut g: Vec<f64> = (0..axis.dim()).map(|_| rng.sample(StandardNormal)).collect();
        let proj = dot(&g, axis.coords());
        g.iter_mut().zip(axis.coords()).for_each(|(v, a)| *v -= proj * a);
        let len = norm(&g);
        if len > 1e-8 {
            g.iter_mut().for_each(|v| *v /= len);
            return g;
        }
    }
}

/// Ψ(x) = σ(θ₁ ≥ x).
pub fn cap_measure(n: Dimension, x: CapHeight) -> CapMeasure {
    Sphere::new(n).cap(x.value())
}

/// Ψ′(x); zero at |x| = 1 except for n = 3 where it is −½.
pub fn cap_measure_derivative(n: Dimension, x: CapHeight) -> f64 {
    Sphere::new(n).cap_derivative(x.value())
}

/// Gaussian vector scaled to unit length.
pub fn sample_unit_sphere<R: Rng + ?Sized>(n: Dimension, rng: &mut R) -> UnitVector {
    let mut coords = vec![0.0; n.get()];
    loop {
        coords.iter_mut().for_each(|c| *c = rng.sample(StandardNormal));
        let len = norm(&coords);
        if len > 0.0 {
            coords.iter_mut().for_each(|c| *c /= len);
            return UnitVector(coords);
        }
    }
}

/// Uniform point of D_n: a uniform direction at radius U^{1/n}.
pub fn sample_unit_ball<R: Rng + ?Sized>(n: Dimension, rng: &mut R) -> BallPoint {
    let theta = sample_unit_sphere(n, rng);
    let u: f64 = rng.random();
    let r = u.powf(1.0 / n.as_f64());
    BallPoint(theta.0.into_iter().map(|c| c * r).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dim(n: usize) -> Dimension {
        Dimension::new(n).unwrap()
    }

    #[test]
    fn rejects_small_dimensions_and_bad_heights() {
        assert!(Dimension::new(2).is_err());
        assert!(CapHeight::new(1.0 + 1e-9).is_err());
        assert!(CapHeight::new(f64::NAN).is_err());
    }

    #[test]
    fn endpoints_and_hemisphere() {
        for n in [3, 4, 17, 64, 1000] {
            let s = Sphere::new(dim(n));
            assert_eq!(s.cap(-1.0).value, 1.0);
            assert_eq!(s.cap(1.0).value, 0.0);
            assert!((s.cap(0.0).value - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn three_dimensional_closed_form() {
        let s = Sphere::new(dim(3));
        for i in 0..=200 {
            let x = -1.0 + 2.0 * i as f64 / 200.0;
            assert!((s.cap(x).value - (1.0 - x) / 2.0).abs() < 1e-12, "x={x}");
            assert!((s.cap_derivative(x) + 0.5).abs() < 1e-14);
        }
    }

    #[test]
    fn four_dimensional_closed_form() {
        // n = 4: Ψ(x) = (acos x − x√(1−x²)) / π
        let s = Sphere::new(dim(4));
        for &x in &[-0.8, -0.1, 0.3, 0.77] {
            let f: f64 = x;
            let expect = (f.acos() - f * (1.0 - f * f).sqrt()) / std::f64::consts::PI;
            assert!((s.cap(x).value - expect).abs() < 1e-13);
        }
    }

    #[test]
    fn derivative_vanishes_at_the_poles() {
        let s = Sphere::new(dim(5));
        assert_eq!(s.cap_derivative(1.0), 0.0);
        assert_eq!(s.cap_derivative(-1.0), 0.0);
    }

    #[test]
    fn log_value_survives_underflow() {
        let s = Sphere::new(dim(4096));
        let mut last = 0.0;
        for &x in &[0.5, 0.9, 0.99, 1.0 - 1e-6, 1.0 - 1e-9] {
            let c = s.cap(x);
            assert!(c.log_value.is_finite());
            assert!(c.log_value < last);
            last = c.log_value;
        }
        assert_eq!(s.cap(0.9).value, 0.0);
    }

    #[test]
    fn inverse_round_trip() {
        for n in [3, 16, 64, 512] {
            let s = Sphere::new(dim(n));
            for &x in &[-0.7, -0.01, 0.0, 0.05, 0.3, 0.8, 0.99] {
                let back = s.height_for_ln_cap(s.ln_cap(x));
                assert!((back - x).abs() < 1e-10, "n={n} x={x} back={back}");
            }
        }
    }

    #[test]
    fn band_sampler_respects_its_band() {
        let n = dim(32);
        let s = Sphere::new(n);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let axis = sample_unit_sphere(n, &mut rng);
        for _ in 0..500 {
            let th = s.sample_band(&axis, 0.4, 0.6, &mut rng);
            let t = dot(th.coords(), axis.coords());
            assert!((0.4 - 1e-12..=0.6 + 1e-12).contains(&t));
            assert!((norm(th.coords()) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn ball_sampler_radial_median() {
        let n = dim(16);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut r: Vec<f64> = (0..20_001).map(|_| sample_unit_ball(n, &mut rng).norm()).collect();
        r.sort_by(f64::total_cmp);
        let median = r[10_000];
        // P(|X|^n <= 1/2) = 1/2; 4 SE window in the u = r^n scale
        let u = median.powi(16);
        assert!((u - 0.5).abs() < 4.0 * 0.5 / (20_001f64).sqrt());
    }

    proptest! {
        #[test]
        fn symmetry(n in 3usize..600, x in -1.0f64..1.0) {
            let s = Sphere::new(dim(n));
            prop_assert!((s.cap(x).value + s.cap(-x).value - 1.0).abs() < 1e-12);
        }

        #[test]
        fn strictly_decreasing(n in 3usize..400, x in -0.95f64..0.9, dx in 1e-4f64..0.05) {
            let s = Sphere::new(dim(n));
            prop_assert!(s.ln_cap(x + dx) < s.ln_cap(x));
        }

        #[test]
        fn derivative_is_negative_inside(n in 3usize..2000, x in -0.999f64..0.999) {
            let s = Sphere::new(dim(n));
            prop_assert!(s.ln_neg_cap_derivative(x).is_finite());
            prop_assert!(s.cap_derivative(x) <= 0.0);
            if n < 200 {
                prop_assert!(s.cap_derivative(x) < 0.0);
            }
        }
    }
}
