//! Revolution cones T_{a,b} and finite intersections of them.
//!
//! A cone is described in the two-dimensional half-plane spanned by its
//! axis θ: a point p has axial coordinate t = ⟨p, θ⟩ and radial coordinate
//! h = √(|p|² − t²), and p ∈ T iff (t, h) lies below the line through
//! (x0, √(1−x0²)) at distance d = a·δ₀ from the origin. Writing the line's
//! unit normal as (cos φ, sin φ), membership reads t·cos φ + h·sin φ ≤ d.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sphere::{dot, BallPoint, CapHeight, CapMeasure, Dimension, Sphere, UnitVector};

/// Line h = slope·t + intercept in the axis half-plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConeLine {
    pub slope: f64,
    pub intercept: f64,
}

impl ConeLine {
    pub fn eval(&self, t: f64) -> f64 {
        self.slope * t + self.intercept
    }

    pub fn x_intercept(&self) -> f64 {
        -self.intercept / self.slope
    }

    pub fn distance_to_origin(&self) -> f64 {
        self.intercept.abs() / (1.0 + self.slope * self.slope).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct RawCone {
    a: f64,
    b: f64,
    delta0: f64,
    delta1: f64,
    n: Dimension,
}

/// One cone T_{a,b} with its derived geometry cached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCone", into = "RawCone")]
pub struct ConeParams {
    raw: RawCone,
    x0: f64,
    d: f64,
    phi: f64,
    cos_phi: f64,
    sin_phi: f64,
    line: ConeLine,
    sphere: Sphere,
}

impl ConeParams {
    pub fn new(a: f64, b: f64, delta0: f64, delta1: f64, n: Dimension) -> Result<Self> {
        let invalid = |reason: String| Error::InvalidCone { a, b, reason };
        if !(delta0 > 0.0 && delta0 < 1.0) {
            return Err(invalid(format!("delta0 = {delta0} not in (0, 1)")));
        }
        if !(delta1 > 0.0 && delta1 < 1.0) {
            return Err(invalid(format!("delta1 = {delta1} not in (0, 1)")));
        }
        let x0 = delta0 * (1.0 + b * delta1);
        let d = a * delta0;
        if !(x0 > 0.0 && x0 < 1.0) {
            return Err(invalid(format!("x0 = {x0} not in (0, 1)")));
        }
        if !(x0 < d && d < 1.0) {
            return Err(invalid(format!(
                "need x0 < a*delta0 < 1, got x0 = {x0}, a*delta0 = {d}"
            )));
        }
        let y0 = ((1.0 - x0) * (1.0 + x0)).sqrt();
        let slope = (x0 * y0 + d * ((1.0 - d) * (1.0 + d)).sqrt()) / ((x0 - d) * (x0 + d));
        let intercept = y0 - slope * x0;
        let phi = d.asin() - x0.asin();
        Ok(Self {
            raw: RawCone {
                a,
                b,
                delta0,
                delta1,
                n,
            },
            x0,
            d,
            phi,
            cos_phi: phi.cos(),
            sin_phi: phi.sin(),
            line: ConeLine { slope, intercept },
            sphere: Sphere::new(n),
        })
    }

    pub fn a(&self) -> f64 {
        self.raw.a
    }
    pub fn b(&self) -> f64 {
        self.raw.b
    }
    pub fn delta0(&self) -> f64 {
        self.raw.delta0
    }
    pub fn delta1(&self) -> f64 {
        self.raw.delta1
    }
    pub fn dimension(&self) -> Dimension {
        self.raw.n
    }

    /// Height of the contact point on the unit circle, δ₀(1 + bδ₁).
    pub fn x0(&self) -> f64 {
        self.x0
    }

    /// Distance of the line from the origin, aδ₀.
    pub fn distance(&self) -> f64 {
        self.d
    }

    /// Angle of the line's normal from the axis.
    pub fn normal_angle(&self) -> f64 {
        self.phi
    }

    pub fn line(&self) -> ConeLine {
        self.line
    }

    /// Radius from which the section at that radius is a single polar cap.
    pub fn cap_regime_radius(&self) -> f64 {
        self.d / self.cos_phi
    }

    /// Membership from the axial coordinate t and the norm ρ of a point.
    #[inline]
    pub fn contains_coords(&self, t: f64, rho: f64) -> bool {
        let h = (rho * rho - t * t).max(0.0).sqrt();
        t * self.cos_phi + h * self.sin_phi <= self.d
    }

    /// x(a,b,r) = sin(arcsin(aδ₀/r) − arcsin(aδ₀) + arcsin(δ₀(1+bδ₁))).
    pub fn cap_height(&self, r: f64) -> Result<f64> {
        if !(r > 0.5 && r <= 1.0) {
            return Err(Error::domain("radius", r, "(1/2, 1]"));
        }
        let arg = self.d / r;
        if !(arg < 1.0) {
            return Err(Error::domain("a*delta0/r", arg, "(0, 1)"));
        }
        Ok((arg.asin() - self.phi).sin())
    }

    /// g_{a,b}(r) = Ψ(x(a,b,r)).
    pub fn profile(&self, r: f64) -> Result<CapMeasure> {
        Ok(self.sphere.cap(self.cap_height(r)?))
    }

    /// dx/du along r(u) = 1 − δ₁u.
    pub fn cap_height_u_derivative(&self, r: f64) -> Result<f64> {
        let x_arg = (self.d / r).asin() - self.phi;
        let root = ((r - self.d) * (r + self.d)).sqrt();
        let dx = self.raw.delta1 * x_arg.cos() * self.d / (r * root);
        if !dx.is_finite() {
            return Err(Error::domain("a*delta0/r", self.d / r, "(0, 1)"));
        }
        Ok(dx)
    }

    /// Profile value and its u-derivative at r, valid only in the cap regime.
    pub fn profile_with_slope(&self, r: f64) -> Result<(f64, f64)> {
        let x = self.cap_height(r)?;
        let dx = self.cap_height_u_derivative(r)?;
        Ok((self.sphere.cap(x).value, self.sphere.cap_derivative(x) * dx))
    }

    /// Excluded directions for a point of norm r, as an interval of
    /// t = ⟨θ, p/|p|⟩, valid at every radius.
    pub fn excluded_interval(&self, r: f64) -> Option<(f64, f64)> {
        if r <= self.d {
            return None;
        }
        let alpha = (self.d / r).acos();
        let hi = (self.phi - alpha).max(0.0).cos();
        let lo = (self.phi + alpha).cos();
        (hi > lo).then_some((lo, hi))
    }
}

impl TryFrom<RawCone> for ConeParams {
    type Error = Error;
    fn try_from(r: RawCone) -> Result<Self> {
        Self::new(r.a, r.b, r.delta0, r.delta1, r.n)
    }
}

impl From<ConeParams> for RawCone {
    fn from(p: ConeParams) -> RawCone {
        p.raw
    }
}

/// The negative-slope line through (x0, √(1−x0²)) at distance aδ₀ from 0.
pub fn line_from_params(p: &ConeParams) -> ConeLine {
    p.line()
}

/// p ∈ T_{a,b}(θ), using only ⟨p, θ⟩ and |p|.
pub fn cone_membership(p: &ConeParams, theta: &UnitVector, point: &BallPoint) -> bool {
    p.contains_coords(dot(point.coords(), theta.coords()), point.norm())
}

pub fn cap_height_of_radius(p: &ConeParams, r: f64) -> Result<CapHeight> {
    CapHeight::new(p.cap_height(r)?)
}

pub fn cone_profile(p: &ConeParams, r: f64) -> Result<CapMeasure> {
    p.profile(r)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
struct AbEntry {
    a: f64,
    b: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexSetDoc {
    n: Dimension,
    delta0: f64,
    delta1: f64,
    entries: Vec<AbEntry>,
}

/// K_{I′} = ⋂ T_{a,b} over a finite index set sharing (n, δ₀, δ₁).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "IndexSetDoc", into = "IndexSetDoc")]
pub struct ConeIndexSet {
    entries: Vec<ConeParams>,
    sphere: Sphere,
    plateau: f64,
    cap_regime_radius: f64,
}

impl PartialEq for ConeIndexSet {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl ConeIndexSet {
    pub fn new(entries: Vec<ConeParams>) -> Result<Self> {
        let first = *entries
            .first()
            .ok_or_else(|| Error::IndexSet("index set is empty".into()))?;
        if let Some(bad) = entries.iter().find(|e| {
            e.dimension() != first.dimension() || e.delta0() != first.delta0() || e.delta1() != first.delta1()
        }) {
            return Err(Error::IndexSet(format!(
                "entry (a = {}, b = {}) does not share n, delta0, delta1",
                bad.a(),
                bad.b()
            )));
        }
        let plateau = entries.iter().map(|e| e.x0()).fold(f64::INFINITY, f64::min);
        let cap_regime_radius = entries.iter().map(|e| e.cap_regime_radius()).fold(0.0, f64::max);
        Ok(Self {
            sphere: Sphere::new(first.dimension()),
            entries,
            plateau,
            cap_regime_radius,
        })
    }

    pub fn from_ab(n: Dimension, delta0: f64, delta1: f64, ab: &[(f64, f64)]) -> Result<Self> {
        let entries = ab
            .iter()
            .map(|&(a, b)| ConeParams::new(a, b, delta0, delta1, n))
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    pub fn entries(&self) -> &[ConeParams] {
        &self.entries
    }
    pub fn len(&self) -> usize {
        self.entries.len()
    }
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
    pub fn dimension(&self) -> Dimension {
        self.sphere.dimension()
    }
    pub fn delta0(&self) -> f64 {
        self.entries[0].delta0()
    }
    pub fn delta1(&self) -> f64 {
        self.entries[0].delta1()
    }
    pub fn sphere(&self) -> &Sphere {
        &self.sphere
    }

    /// Every point p with ⟨p, θ⟩ ≤ plateau lies in every cone around θ.
    pub fn plateau(&self) -> f64 {
        self.plateau
    }

    /// Smallest radius from which every entry cuts a single polar cap.
    pub fn cap_regime_radius(&self) -> f64 {
        self.cap_regime_radius
    }

    #[inline]
    pub fn contains_coords(&self, t: f64, rho: f64) -> bool {
        t <= self.plateau || self.entries.iter().all(|e| e.contains_coords(t, rho))
    }

    /// sup over entries of g_{a,b}(r), on the domain r ∈ (1/2, 1].
    pub fn envelope_profile(&self, r: f64) -> Result<CapMeasure> {
        let mut lowest = f64::INFINITY;
        for e in &self.entries {
            lowest = lowest.min(e.cap_height(r)?);
        }
        Ok(self.sphere.cap(lowest))
    }

    /// Merged excluded t-intervals for a point of norm r, sorted ascending.
    pub fn excluded_intervals(&self, r: f64) -> Vec<(f64, f64)> {
        let mut iv: Vec<(f64, f64)> = self.entries.iter().filter_map(|e| e.excluded_interval(r)).collect();
        iv.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(iv.len());
        for (lo, hi) in iv {
            match merged.last_mut() {
                Some(last) if lo <= last.1 => last.1 = last.1.max(hi),
                _ => merged.push((lo, hi)),
            }
        }
        merged
    }

    /// σ of the directions θ whose cone-body excludes a point of norm r.
    /// Agrees with `envelope_profile` wherever every entry is in its cap
    /// regime and extends the profile exactly to all r ∈ [0, 1].
    pub fn removed_fraction(&self, r: f64) -> CapMeasure {
        let iv = self.excluded_intervals(r);
        match iv.len() {
            0 => CapMeasure::ZERO,
            1 => self.sphere.band(iv[0].0, iv[0].1),
            _ => {
                let total: f64 = iv.iter().map(|&(lo, hi)| self.sphere.band(lo, hi).value).sum();
                CapMeasure::from_log(total.ln())
            }
        }
    }
}

impl TryFrom<IndexSetDoc> for ConeIndexSet {
    type Error = Error;
    fn try_from(doc: IndexSetDoc) -> Result<Self> {
        let ab: Vec<(f64, f64)> = doc.entries.iter().map(|e| (e.a, e.b)).collect();
        Self::from_ab(doc.n, doc.delta0, doc.delta1, &ab)
    }
}

impl From<ConeIndexSet> for IndexSetDoc {
    fn from(s: ConeIndexSet) -> IndexSetDoc {
        IndexSetDoc {
            n: s.dimension(),
            delta0: s.delta0(),
            delta1: s.delta1(),
            entries: s.entries.iter().map(|e| AbEntry { a: e.a(), b: e.b() }).collect(),
        }
    }
}

pub fn envelope_profile(set: &ConeIndexSet, r: f64) -> Result<CapMeasure> {
    set.envelope_profile(r)
}

/// Conjunction of `cone_membership` over the set; stops at the first failure.
pub fn envelope_membership(set: &ConeIndexSet, theta: &UnitVector, point: &BallPoint) -> bool {
    set.contains_coords(dot(point.coords(), theta.coords()), point.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{sample_unit_ball, sample_unit_sphere};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn n64() -> Dimension {
        Dimension::new(64).unwrap()
    }

    fn delta(n: Dimension) -> (f64, f64) {
        let n = n.as_f64();
        (n.powf(-0.25), n.powf(-0.99))
    }

    // valid (a, b) with x0 in (δ₀/2, 2δ₀), aδ₀ < 0.9 and a comfortable margin over x0
    fn random_cone(rng: &mut impl Rng, n: Dimension) -> ConeParams {
        let (d0, d1) = delta(n);
        loop {
            let b = rng.random_range(-0.5 / d1..1.0 / d1);
            let a = rng.random_range(1.0..0.9 / d0);
            if let Ok(p) = ConeParams::new(a, b, d0, d1, n) {
                return p;
            }
        }
    }

    #[test]
    fn degenerate_tangency_is_rejected() {
        let (d0, d1) = delta(n64());
        // x0 = aδ₀ exactly when a = 1 + bδ₁
        let b = 3.0;
        let a = 1.0 + b * d1;
        assert!(ConeParams::new(a, b, d0, d1, n64()).is_err());
        assert!(ConeParams::new(2.0, 0.0, 1.2, d1, n64()).is_err());
    }

    #[test]
    fn line_geometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let p = random_cone(&mut rng, n64());
            let line = line_from_params(&p);
            assert!(line.slope < 0.0 && line.intercept > 0.0);
            assert!((line.distance_to_origin() - p.distance()).abs() < 1e-10);
            let y0 = (1.0 - p.x0() * p.x0()).sqrt();
            assert!((line.eval(p.x0()) - y0).abs() < 1e-10);
            assert!(line.x_intercept() < 2.0 * p.distance());
            assert!((line.x_intercept() - p.cap_regime_radius()).abs() < 1e-12);
        }
    }

    #[test]
    fn cap_height_at_unit_radius_is_x0() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let p = random_cone(&mut rng, n64());
            assert!((p.cap_height(1.0).unwrap() - p.x0()).abs() < 1e-14);
            assert!(p.cap_height(0.999).unwrap() > p.x0());
        }
    }

    #[test]
    fn cap_height_domain() {
        let p = ConeParams::new(2.0, 0.0, 0.3, 0.01, n64()).unwrap();
        assert!(p.cap_height(0.5).is_err());
        assert!(p.cap_height(1.01).is_err());
        let tall = ConeParams::new(3.2, 0.0, 0.3, 0.01, n64()).unwrap();
        assert!(tall.cap_height(0.95).is_err());
    }

    // intersect the line with the circle of radius r and take the axial
    // coordinate of the crossing, normalized by r
    fn brute_force_height(p: &ConeParams, r: f64) -> f64 {
        let ConeLine { slope: s, intercept: c } = p.line();
        // t² + (s t + c)² = r²
        let qa = 1.0 + s * s;
        let qb = 2.0 * s * c;
        let qc = c * c - r * r;
        let disc = qb * qb - 4.0 * qa * qc;
        // the crossing with h > 0 has the smaller axial coordinate
        let t = (-qb - disc.sqrt()) / (2.0 * qa);
        t / r
    }

    #[test]
    fn cap_height_matches_circle_intersection() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut checked = 0;
        while checked < 100 {
            let p = random_cone(&mut rng, n64());
            let lo = p.cap_regime_radius().max(0.5) + 1e-6;
            if lo >= 1.0 {
                continue;
            }
            let r = rng.random_range(lo..=1.0);
            let x = p.cap_height(r).unwrap();
            assert!((x - brute_force_height(&p, r)).abs() < 1e-9);
            checked += 1;
        }
    }

    #[test]
    fn membership_examples() {
        let n = n64();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..100 {
            let p = random_cone(&mut rng, n);
            let theta = sample_unit_sphere(n, &mut rng);
            assert!(cone_membership(&p, &theta, &BallPoint::origin(n)));
            let at_pole = BallPoint::new(theta.coords().to_vec()).unwrap();
            assert_eq!(cone_membership(&p, &theta, &at_pole), p.line().x_intercept() >= 1.0);
            // a ball point on the far side of the axis
            let q = sample_unit_ball(n, &mut rng);
            let t = dot(q.coords(), theta.coords());
            if t <= 0.0 {
                assert!(cone_membership(&p, &theta, &q));
            }
        }
    }

    #[test]
    fn envelope_is_sup_of_profiles() {
        let n = n64();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let entries: Vec<ConeParams> = (0..8).map(|_| random_cone(&mut rng, n)).collect();
        let set = ConeIndexSet::new(entries.clone()).unwrap();
        for r in [0.95, 0.99, 1.0] {
            if r < set.cap_regime_radius() {
                continue;
            }
            let env = set.envelope_profile(r).unwrap().value;
            for e in &entries {
                assert!(env >= e.profile(r).unwrap().value);
            }
            assert!((set.removed_fraction(r).value - env).abs() <= 1e-14 + 1e-12 * env);
        }
        let single = ConeIndexSet::new(vec![entries[0]]).unwrap();
        let doubled = ConeIndexSet::new(vec![entries[0], entries[0]]).unwrap();
        assert_eq!(
            single.envelope_profile(0.99).unwrap(),
            entries[0].profile(0.99).unwrap()
        );
        assert_eq!(
            single.envelope_profile(0.97).unwrap(),
            doubled.envelope_profile(0.97).unwrap()
        );
    }

    #[test]
    fn index_set_requires_shared_parameters() {
        let a = ConeParams::new(2.0, 0.0, 0.3, 0.01, n64()).unwrap();
        let b = ConeParams::new(2.0, 0.0, 0.31, 0.01, n64()).unwrap();
        assert!(ConeIndexSet::new(vec![]).is_err());
        assert!(ConeIndexSet::new(vec![a, b]).is_err());
    }

    #[test]
    fn serde_round_trip_uses_spec_field_names() {
        let set = ConeIndexSet::from_ab(n64(), 0.3, 0.01, &[(2.0, 1.0), (2.5, -3.0)]).unwrap();
        let text = serde_json::to_string(&set).unwrap();
        assert!(text.contains("\"delta0\"") && text.contains("\"entries\""));
        let back: ConeIndexSet = serde_json::from_str(&text).unwrap();
        assert_eq!(back, set);
        let bad = text.replace("2.5", "0.5");
        assert!(serde_json::from_str::<ConeIndexSet>(&bad).is_err());
    }

    proptest! {
        #[test]
        fn profile_non_decreasing_in_r(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_cone(&mut rng, n64());
            let lo = p.cap_regime_radius().max(0.5) + 1e-9;
            prop_assume!(lo < 1.0);
            let mut last = 0.0;
            for k in 0..64 {
                let r = lo + (1.0 - lo) * k as f64 / 63.0;
                if r <= 0.5 { continue; }
                let g = p.profile(r).unwrap().value;
                prop_assert!(g >= last);
                last = g;
            }
        }

        #[test]
        fn plateau_points_are_members(seed in any::<u64>()) {
            let n = n64();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let set = ConeIndexSet::new((0..4).map(|_| random_cone(&mut rng, n)).collect()).unwrap();
            for _ in 0..200 {
                let rho: f64 = rng.random_range(0.0..=1.0);
                let t = rng.random_range(-rho..=rho.min(set.plateau()));
                prop_assert!(set.entries().iter().all(|e| e.contains_coords(t, rho)));
            }
        }

        #[test]
        fn slope_matches_finite_difference(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_cone(&mut rng, n64());
            let d1 = p.delta1();
            let u = 0.5;
            let r = 1.0 - d1 * u;
            prop_assume!(r > p.cap_regime_radius() + 1e-3);
            let h = 1e-5;
            let xp = p.cap_height(1.0 - d1 * (u + h)).unwrap();
            let xm = p.cap_height(1.0 - d1 * (u - h)).unwrap();
            let fd = (xp - xm) / (2.0 * h);
            let an = p.cap_height_u_derivative(r).unwrap();
            prop_assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-12));
        }
    }
}
