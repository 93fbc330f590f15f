//! Poisson deletion bodies K = D_n ∩ ⋂ᵢ T(θᵢ), membership, rejection
//! sampling of uniform points, and the cap-set diagnostics.

use std::io::{Read, Write};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::calibration::BodyFamilySpec;
use crate::cone::ConeIndexSet;
use crate::error::{Error, Result};
use crate::sphere::{dot, norm, sample_unit_ball, sample_unit_sphere, BallPoint, CapMeasure, Dimension, UnitVector};

/// One realization: ζ ~ Poisson(m) uniform directions, stored row-major.
#[derive(Debug, Clone)]
pub struct DeletionBody {
    spec: Arc<BodyFamilySpec>,
    directions: Vec<f64>,
}

impl DeletionBody {
    pub fn new(spec: Arc<BodyFamilySpec>, directions: Vec<UnitVector>) -> Result<Self> {
        let n = spec.dimension().get();
        let mut flat = Vec::with_capacity(n * directions.len());
        for d in &directions {
            if d.dim() != n {
                return Err(Error::DimensionMismatch {
                    left: d.dim(),
                    right: n,
                });
            }
            flat.extend_from_slice(d.coords());
        }
        Ok(Self { spec, directions: flat })
    }

    pub fn spec(&self) -> &BodyFamilySpec {
        &self.spec
    }

    pub fn dimension(&self) -> Dimension {
        self.spec.dimension()
    }

    /// Realized number of deletions ζ.
    pub fn len(&self) -> usize {
        self.directions.len() / self.dimension().get()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    pub fn directions(&self) -> impl Iterator<Item = &[f64]> {
        self.directions.chunks_exact(self.dimension().get())
    }

    /// A copy with one more deletion direction.
    pub fn with_direction(&self, theta: &UnitVector) -> Self {
        let mut next = self.clone();
        next.directions.extend_from_slice(theta.coords());
        next
    }

    /// |p| ≤ 1 and p ∈ T(θᵢ) for every direction.
    pub fn contains(&self, p: &[f64]) -> bool {
        let rho = norm(p);
        if rho > 1.0 {
            return false;
        }
        let set = &self.spec.index_set;
        let plateau = set.plateau();
        self.directions().all(|theta| {
            let t = dot(theta, p);
            t <= plateau || set.contains_coords(t, rho)
        })
    }

    /// Number of directions whose cone excludes p.
    pub fn cut_count(&self, p: &[f64]) -> usize {
        let rho = norm(p);
        let set = &self.spec.index_set;
        self.directions()
            .filter(|theta| !set.contains_coords(dot(theta, p), rho))
            .count()
    }

    pub fn to_document(&self, spec_ref: &str) -> BodyDocument {
        BodyDocument {
            format: BODY_FORMAT.to_string(),
            spec_ref: spec_ref.to_string(),
            n: self.dimension(),
            m: self.spec.m,
            directions: self.directions().map(<[f64]>::to_vec).collect(),
        }
    }

    pub fn from_document(doc: &BodyDocument, spec: Arc<BodyFamilySpec>) -> Result<Self> {
        if doc.format != BODY_FORMAT {
            return Err(Error::Format(format!("unsupported body format {:?}", doc.format)));
        }
        if doc.n != spec.dimension() {
            return Err(Error::DimensionMismatch {
                left: doc.n.get(),
                right: spec.dimension().get(),
            });
        }
        let dirs = doc
            .directions
            .iter()
            .map(|d| UnitVector::new(d.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(spec, dirs)
    }
}

pub const BODY_FORMAT: &str = "conevol/body/1";

/// Text form of a body: the family it came from plus its directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BodyDocument {
    pub format: String,
    pub spec_ref: String,
    pub n: Dimension,
    pub m: f64,
    pub directions: Vec<Vec<f64>>,
}

/// ζ ~ Poisson(m), then ζ i.i.d. uniform directions.
pub fn sample_body<R: Rng + ?Sized>(spec: &Arc<BodyFamilySpec>, rng: &mut R) -> DeletionBody {
    let n = spec.dimension();
    let count = if spec.m > 0.0 {
        let poisson = Poisson::new(spec.m).expect("finite positive intensity");
        poisson.sample(rng) as usize
    } else {
        0
    };
    let mut directions = Vec::with_capacity(count * n.get());
    for _ in 0..count {
        directions.extend_from_slice(sample_unit_sphere(n, rng).coords());
    }
    DeletionBody {
        spec: Arc::clone(spec),
        directions,
    }
}

pub fn body_membership(body: &DeletionBody, point: &BallPoint) -> bool {
    body.contains(point.coords())
}

/// Uniform point of the body by rejection from the ball.
pub fn sample_point_in_body<R: Rng + ?Sized>(body: &DeletionBody, rng: &mut R, max_attempts: u64) -> Result<BallPoint> {
    let n = body.dimension();
    for _ in 0..max_attempts {
        let p = sample_unit_ball(n, rng);
        if body.contains(p.coords()) {
            return Ok(p);
        }
    }
    Err(Error::RejectionBudget { attempts: max_attempts })
}

/// N i.i.d. uniform points of a body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSequence {
    pub points: Vec<BallPoint>,
}

impl PointSequence {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn radii(&self) -> impl Iterator<Item = f64> + '_ {
        self.points.iter().map(BallPoint::norm)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        if let Some(first) = self.points.first() {
            w.write_record((0..first.dim()).map(|i| format!("x{i}")))?;
        }
        for p in &self.points {
            w.write_record(p.coords().iter().map(|c| format!("{c:e}")))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let mut points = Vec::new();
        for rec in r.records() {
            let coords = rec?
                .iter()
                .map(|f| f.trim().parse::<f64>().map_err(|e| Error::Format(e.to_string())))
                .collect::<Result<Vec<_>>>()?;
            points.push(BallPoint::new(coords)?);
        }
        Ok(Self { points })
    }

    /// Little-endian binary: magic, version, n, count, then count·n f64.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.points.first().map_or(0, BallPoint::dim);
        out.write_all(POINTS_MAGIC)?;
        out.write_all(&POINTS_VERSION.to_le_bytes())?;
        out.write_all(&(n as u32).to_le_bytes())?;
        out.write_all(&(self.points.len() as u64).to_le_bytes())?;
        for p in &self.points {
            for c in p.coords() {
                out.write_all(&c.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != POINTS_MAGIC {
            return Err(Error::Format("not a point-sequence file".into()));
        }
        let mut b4 = [0u8; 4];
        input.read_exact(&mut b4)?;
        let version = u32::from_le_bytes(b4);
        if version != POINTS_VERSION {
            return Err(Error::Format(format!("unsupported point file version {version}")));
        }
        input.read_exact(&mut b4)?;
        let n = u32::from_le_bytes(b4) as usize;
        let mut b8 = [0u8; 8];
        input.read_exact(&mut b8)?;
        let count = u64::from_le_bytes(b8) as usize;
        let mut points = Vec::with_capacity(count);
        for _ in 0..count {
            let mut coords = Vec::with_capacity(n);
            for _ in 0..n {
                input.read_exact(&mut b8)?;
                coords.push(f64::from_le_bytes(b8));
            }
            points.push(BallPoint::new(coords)?);
        }
        Ok(Self { points })
    }
}

const POINTS_MAGIC: &[u8; 4] = b"CVPT";
const POINTS_VERSION: u32 = 1;

/// One draw from the joint law: a body, then N uniform points in it.
pub fn sample_sequence<R: Rng + ?Sized>(
    spec: &Arc<BodyFamilySpec>,
    count: usize,
    rng: &mut R,
    max_attempts: u64,
) -> Result<(DeletionBody, PointSequence)> {
    let body = sample_body(spec, rng);
    let points = (0..count)
        .map(|_| sample_point_in_body(&body, rng, max_attempts))
        .collect::<Result<Vec<_>>>()?;
    Ok((body, PointSequence { points }))
}

/// σ(A(p)), the measure of directions whose cone-body excludes p; by
/// symmetry this is the envelope profile at |p|.
pub fn deletion_cap_set_measure(point: &BallPoint, set: &ConeIndexSet) -> Result<CapMeasure> {
    set.envelope_profile(point.norm())
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub samples: usize,
}

impl Estimate {
    pub fn from_counts(hits: usize, samples: usize) -> Self {
        let p = hits as f64 / samples.max(1) as f64;
        Self {
            mean: p,
            se: (p * (1.0 - p) / samples.max(1) as f64).sqrt(),
            samples,
        }
    }
}

/// σ(A₁ ∩ A₂)/σ(A₁) with θ drawn exactly from A₁: pick an excluded band
/// around p₁ by its measure, then a direction uniformly inside that band.
pub fn mutual_cap_ratio<R: Rng + ?Sized>(
    p1: &BallPoint,
    p2: &BallPoint,
    set: &ConeIndexSet,
    rng: &mut R,
    samples: usize,
) -> Result<Estimate> {
    let (r1, r2) = (p1.norm(), p2.norm());
    for r in [r1, r2] {
        if !(r > 0.5 && r <= 1.0) {
            return Err(Error::domain("point norm", r, "(1/2, 1]"));
        }
    }
    if samples == 0 {
        return Err(Error::EmptySample);
    }
    let sphere = set.sphere();
    let axis = UnitVector::normalize(p1.coords().to_vec())?;
    let bands = set.excluded_intervals(r1);
    let weights: Vec<f64> = bands.iter().map(|&(lo, hi)| sphere.band(lo, hi).value).collect();
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::domain("cap set measure", total, "(0, 1]"));
    }
    let mut hits = 0;
    for _ in 0..samples {
        let mut pick = rng.random::<f64>() * total;
        let mut k = 0;
        while k + 1 < bands.len() && pick >= weights[k] {
            pick -= weights[k];
            k += 1;
        }
        let theta = sphere.sample_band(&axis, bands[k].0, bands[k].1, rng);
        if !set.contains_coords(dot(theta.coords(), p2.coords()), r2) {
            hits += 1;
        }
    }
    Ok(Estimate::from_counts(hits, samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{make_profile_pair, CalibrationConfig};
    use crate::rng::stream;
    use std::sync::OnceLock;

    fn pair() -> &'static crate::calibration::ProfilePair {
        static PAIR: OnceLock<crate::calibration::ProfilePair> = OnceLock::new();
        PAIR.get_or_init(|| {
            let mut cfg = CalibrationConfig::for_dimension(Dimension::new(64).unwrap());
            cfg.grid_size = 32;
            cfg.tol_pair = 1e-4;
            make_profile_pair(&cfg).unwrap()
        })
    }

    fn family(m: f64) -> Arc<BodyFamilySpec> {
        Arc::new(BodyFamilySpec::new(pair().i1.clone(), m).unwrap())
    }

    #[test]
    fn empty_intensity_gives_the_ball() {
        let spec = family(0.0);
        let mut rng = stream(1, &[0]);
        let body = sample_body(&spec, &mut rng);
        assert!(body.is_empty());
        for _ in 0..100 {
            let p = sample_unit_ball(spec.dimension(), &mut rng);
            assert!(body_membership(&body, &p));
            let q = sample_point_in_body(&body, &mut rng, 1).unwrap();
            assert!(q.norm() <= 1.0);
        }
    }

    #[test]
    fn origin_is_always_inside() {
        let spec = family(pair().m1);
        let mut rng = stream(2, &[0]);
        for _ in 0..20 {
            let body = sample_body(&spec, &mut rng);
            assert!(body_membership(&body, &BallPoint::origin(spec.dimension())));
        }
    }

    #[test]
    fn adding_a_direction_never_adds_members() {
        let spec = family(pair().m1);
        let n = spec.dimension();
        let mut rng = stream(3, &[0]);
        let body = sample_body(&spec, &mut rng);
        let theta = sample_unit_sphere(n, &mut rng);
        let bigger = body.with_direction(&theta);
        for _ in 0..2000 {
            let p = sample_unit_ball(n, &mut rng);
            if bigger.contains(p.coords()) {
                assert!(body.contains(p.coords()));
            }
        }
    }

    #[test]
    fn poisson_count_moments() {
        let m = 40.0;
        let spec = family(m);
        let mut rng = stream(4, &[0]);
        let draws = 10_000;
        let counts: Vec<f64> = (0..draws).map(|_| sample_body(&spec, &mut rng).len() as f64).collect();
        let mean = counts.iter().sum::<f64>() / draws as f64;
        let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (draws - 1) as f64;
        assert!((mean - m).abs() < 4.0 * (m / draws as f64).sqrt());
        // var of the sample variance for Poisson ≈ (m + 2m²)/draws
        assert!((var - m).abs() < 4.0 * ((m + 2.0 * m * m) / draws as f64).sqrt());
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let spec = family(1e5);
        let mut rng = stream(5, &[0]);
        let body = sample_body(&spec, &mut rng);
        let err = sample_point_in_body(&body, &mut rng, 3).unwrap_err();
        assert!(matches!(err, Error::RejectionBudget { attempts: 3 }));
    }

    #[test]
    fn sequence_points_are_members() {
        let spec = family(pair().m1);
        let mut rng = stream(6, &[0]);
        let (body, seq) = sample_sequence(&spec, 50, &mut rng, 100_000).unwrap();
        assert_eq!(seq.len(), 50);
        assert!(seq.points.iter().all(|p| body_membership(&body, p)));
        let (_, empty) = sample_sequence(&spec, 0, &mut rng, 1).unwrap();
        assert!(empty.is_empty());
    }

    #[test]
    fn cap_set_measure_is_radial() {
        let set = &pair().i1;
        let n = set.dimension();
        let mut rng = stream(7, &[0]);
        let a = BallPoint::on_ray(&sample_unit_sphere(n, &mut rng), 0.995).unwrap();
        let b = BallPoint::on_ray(&sample_unit_sphere(n, &mut rng), 0.995).unwrap();
        let ga = deletion_cap_set_measure(&a, set).unwrap();
        let gb = deletion_cap_set_measure(&b, set).unwrap();
        assert!((ga.value - gb.value).abs() <= 1e-12 * ga.value);
        let top = BallPoint::on_ray(&UnitVector::basis(n, 0), 1.0).unwrap();
        assert!((deletion_cap_set_measure(&top, set).unwrap().value - pair().g1(1.0)).abs() < 1e-15);
    }

    #[test]
    fn ratio_is_one_for_equal_points_and_small_for_antipodes() {
        let set = &pair().i1;
        let n = set.dimension();
        let mut rng = stream(8, &[0]);
        let e = UnitVector::basis(n, 0);
        let p = BallPoint::on_ray(&e, 1.0).unwrap();
        let same = mutual_cap_ratio(&p, &p, set, &mut rng, 500).unwrap();
        assert_eq!(same.mean, 1.0);
        let anti = BallPoint::new(e.coords().iter().map(|c| -c).collect()).unwrap();
        let opposite = mutual_cap_ratio(&p, &anti, set, &mut rng, 2000).unwrap();
        assert_eq!(opposite.mean, 0.0);
    }

    #[test]
    fn point_formats_round_trip() {
        let spec = family(pair().m1);
        let mut rng = stream(9, &[0]);
        let (body, seq) = sample_sequence(&spec, 5, &mut rng, 100_000).unwrap();
        let mut bin = Vec::new();
        seq.write_binary(&mut bin).unwrap();
        assert_eq!(PointSequence::read_binary(bin.as_slice()).unwrap(), seq);
        let mut text = Vec::new();
        seq.write_csv(&mut text).unwrap();
        assert_eq!(PointSequence::read_csv(text.as_slice()).unwrap(), seq);
        bin[0] = b'X';
        assert!(PointSequence::read_binary(bin.as_slice()).is_err());

        let doc = body.to_document("family-1");
        let json = serde_json::to_string(&doc).unwrap();
        let back: BodyDocument = serde_json::from_str(&json).unwrap();
        let rebuilt = DeletionBody::from_document(&back, Arc::clone(&spec)).unwrap();
        assert_eq!(rebuilt.len(), body.len());
        assert!(rebuilt.directions().zip(body.directions()).all(|(a, b)| a == b));
    }
}
