//! End-to-end experiment: calibrate a pair, measure the volume gap, and try
//! to tell the two families apart from uniform point sequences.

use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calibration::{make_profile_pair, BodyFamilySpec, CalibrationConfig, PairDiagnostics, ProfilePair};
use crate::deletion::{mutual_cap_ratio, sample_body, sample_sequence, PointSequence};
use crate::density::{l1_profile_distance, profile_moment, ProfileDistanceReport, RadialDensity};
use crate::error::{Error, Result};
use crate::rng::{stream, RandomStream};
use crate::sphere::{sample_unit_ball, BallPoint, Dimension, UnitVector};
use crate::stats::{mean_var, wilson_interval, Interval, Z95};

pub const REPORT_FORMAT: &str = "conevol/experiment-report/1";

const KEY_VOLUME: u64 = 1;
const KEY_SEQUENCE: u64 = 2;
const KEY_SHUFFLE: u64 = 3;
const KEY_CAP_RATIO: u64 = 4;
const KEY_FACTORIZATION: u64 = 5;
const FACTORIZATION_CHUNK: usize = 500;
const OVERLAP_SAMPLES: usize = 200_000;
const LR_TIE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    /// N, points per sequence.
    pub points_per_sequence: usize,
    /// M, sequences per family.
    pub sequences_per_family: usize,
    pub volume_bodies: usize,
    pub volume_samples: usize,
    /// Rejection budget is this factor times ⌈1/Z⌉.
    pub attempts_factor: u64,
    pub histogram_bins: usize,
    pub density_grid: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            points_per_sequence: 256,
            sequences_per_family: 200,
            volume_bodies: 200,
            volume_samples: 10_000,
            attempts_factor: 10,
            histogram_bins: 32,
            density_grid: 257,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub enabled: bool,
    pub cap_ratio_pairs: usize,
    pub cap_ratio_samples: usize,
    pub factorization_bodies: usize,
    /// Shell coordinate of the three factorization points.
    pub factorization_u: f64,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            cap_ratio_pairs: 100,
            cap_ratio_samples: 1000,
            factorization_bodies: 20_000,
            factorization_u: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub calibration: CalibrationConfig,
    pub sampling: SamplingConfig,
    pub distinguishers: Vec<String>,
    pub diagnostics: DiagnosticsConfig,
}

impl ExperimentConfig {
    pub fn for_dimension(n: Dimension) -> Self {
        Self {
            seed: 20_240_601,
            calibration: CalibrationConfig::for_dimension(n),
            sampling: SamplingConfig::default(),
            distinguishers: DISTINGUISHER_NAMES.iter().map(|s| s.to_string()).collect(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }

    /// n = 64, κ = ln 2, N = 256, M = 200.
    pub fn flagship() -> Self {
        Self::for_dimension(Dimension::new(64).expect("64 >= 3"))
    }

    pub fn validate(&self) -> Result<()> {
        self.calibration.validate()?;
        let s = &self.sampling;
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if s.sequences_per_family < 2 {
            return bad("sequences_per_family must be at least 2");
        }
        if s.volume_bodies < 2 || s.volume_samples == 0 {
            return bad("volume_bodies must be at least 2 and volume_samples positive");
        }
        if s.attempts_factor == 0 || s.histogram_bins == 0 || s.density_grid < 2 {
            return bad("attempts_factor and histogram_bins must be positive, density_grid at least 2");
        }
        if self.distinguishers.is_empty() {
            return bad("at least one distinguisher is required");
        }
        for name in &self.distinguishers {
            distinguisher_by_name(name)?;
        }
        let d = &self.diagnostics;
        if !(0.0..=1.0).contains(&d.factorization_u) {
            return bad("factorization_u must lie in [0, 1]");
        }
        if d.enabled && d.cap_ratio_pairs > 0 && d.cap_ratio_samples == 0 {
            return bad("cap_ratio_samples must be positive");
        }
        Ok(())
    }
}

/// Family label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    One,
    Two,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::One => 0,
            Label::Two => 1,
        }
    }

    pub fn number(self) -> u8 {
        self.index() as u8 + 1
    }

    fn from_index(i: usize) -> Self {
        if i == 0 {
            Label::One
        } else {
            Label::Two
        }
    }
}

/// What a distinguisher may know about a family: its radial law.
pub trait RadialModel: Send + Sync {
    fn log_density(&self, r: f64) -> f64;
    fn quantile(&self, p: f64) -> f64;
}

impl RadialModel for RadialDensity {
    fn log_density(&self, r: f64) -> f64 {
        RadialDensity::log_density(self, r)
    }

    fn quantile(&self, p: f64) -> f64 {
        RadialDensity::quantile(self, p)
    }
}

/// Analytic summaries of both families handed to every distinguisher.
#[derive(Clone)]
pub struct DistinguisherContext {
    models: [Arc<dyn RadialModel>; 2],
    points_per_sequence: usize,
    max_radius_medians: [f64; 2],
}

impl DistinguisherContext {
    /// Needs exactly two models; the median of max |x| over N points is
    /// precomputed for each.
    pub fn new(models: Vec<Arc<dyn RadialModel>>, points_per_sequence: usize) -> Result<Self> {
        let models: [Arc<dyn RadialModel>; 2] = models
            .try_into()
            .map_err(|m: Vec<_>| Error::Config(format!("context needs two radial models, got {}", m.len())))?;
        let medians = if points_per_sequence == 0 {
            [1.0, 1.0]
        } else {
            let p = 0.5f64.powf(1.0 / points_per_sequence as f64);
            [models[0].quantile(p), models[1].quantile(p)]
        };
        Ok(Self {
            models,
            points_per_sequence,
            max_radius_medians: medians,
        })
    }

    pub fn model(&self, label: Label) -> &dyn RadialModel {
        self.models[label.index()].as_ref()
    }

    pub fn points_per_sequence(&self) -> usize {
        self.points_per_sequence
    }

    pub fn max_radius_median(&self, label: Label) -> f64 {
        self.max_radius_medians[label.index()]
    }
}

pub trait Distinguisher: Send + Sync {
    fn name(&self) -> &str;
    fn decide(&self, points: &PointSequence, context: &DistinguisherContext) -> Label;
}

pub const DISTINGUISHER_NAMES: [&str; 2] = ["likelihood_ratio", "max_radius"];

pub struct LikelihoodRatio;
pub struct MaxRadius;

impl Distinguisher for LikelihoodRatio {
    fn name(&self) -> &str {
        "likelihood_ratio"
    }

    fn decide(&self, points: &PointSequence, context: &DistinguisherContext) -> Label {
        likelihood_ratio_distinguisher(points, context)
    }
}

impl Distinguisher for MaxRadius {
    fn name(&self) -> &str {
        "max_radius"
    }

    fn decide(&self, points: &PointSequence, context: &DistinguisherContext) -> Label {
        max_radius_distinguisher(points, context)
    }
}

pub fn distinguisher_by_name(name: &str) -> Result<Box<dyn Distinguisher>> {
    match name {
        "likelihood_ratio" => Ok(Box::new(LikelihoodRatio)),
        "max_radius" => Ok(Box::new(MaxRadius)),
        other => Err(Error::Config(format!(
            "unknown distinguisher {other:?}; known: {}",
            DISTINGUISHER_NAMES.join(", ")
        ))),
    }
}

/// Σ_j ln p₁(|x_j|) − ln p₂(|x_j|).
pub fn log_likelihood_ratio(points: &PointSequence, context: &DistinguisherContext) -> (f64, f64) {
    let (m1, m2) = (context.model(Label::One), context.model(Label::Two));
    points.radii().fold((0.0, 0.0), |(sum, scale), r| {
        let d = m1.log_density(r) - m2.log_density(r);
        let size = if d.is_finite() { d.abs() } else { 0.0 };
        (sum + d, scale + size)
    })
}

/// Larger radial log-likelihood wins; near-ties and NaN go to family 1.
pub fn likelihood_ratio_distinguisher(points: &PointSequence, context: &DistinguisherContext) -> Label {
    let (llr, scale) = log_likelihood_ratio(points, context);
    if llr.is_nan() || llr >= -LR_TIE_TOL * (1.0 + scale) {
        Label::One
    } else {
        Label::Two
    }
}

/// Compares max |x_j| with the midpoint of the two families' median maxima.
pub fn max_radius_distinguisher(points: &PointSequence, context: &DistinguisherContext) -> Label {
    let Some(max) = points.radii().reduce(f64::max) else {
        return Label::One;
    };
    let t1 = context.max_radius_median(Label::One);
    let t2 = context.max_radius_median(Label::Two);
    let mid = 0.5 * (t1 + t2);
    let one = if t1 >= t2 { max >= mid } else { max <= mid };
    if one {
        Label::One
    } else {
        Label::Two
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeSection {
    /// e^κ.
    pub target_ratio: f64,
    pub analytic_volume_1: f64,
    pub analytic_volume_2: f64,
    pub analytic_ratio: f64,
    /// 1e−3 + ratio·leak₁ + e^κ·leak₂.
    pub analytic_tolerance: f64,
    pub analytic_ok: bool,
    pub bodies_per_family: usize,
    pub samples_per_body: usize,
    pub mc_mean_1: f64,
    pub mc_mean_2: f64,
    pub mc_ratio: f64,
    pub mc_ratio_ci: Interval,
    pub mc_relative_error: f64,
    pub mc_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceSection {
    pub profile: ProfileDistanceReport,
    pub points_per_sequence: usize,
    pub tv_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistinguisherResult {
    pub name: String,
    pub trials: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub accuracy_ci: Interval,
    /// confusion[true][predicted], families indexed from 0.
    pub confusion: [[usize; 2]; 2],
    /// 0.5 + max(tv/2, 0) + 4·√(0.25/2M).
    pub bound: f64,
    pub consistent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapRatioDiagnostic {
    pub pairs: usize,
    pub samples_per_pair: usize,
    pub mean: f64,
    pub se: f64,
    /// ∫₀¹ n r^{n−1} g(r) dr.
    pub bound: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationDiagnostic {
    pub bodies: usize,
    pub mean: f64,
    pub variance: f64,
    pub var_over_mean_sq: f64,
    /// Var/Mean² with the binomial noise of the per-body estimates removed.
    pub corrected_var_over_mean_sq: f64,
    /// 10·m·∫₀¹ n r^{n−1} g(r)² dr.
    pub prediction: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizationDiagnostic {
    pub bodies: usize,
    pub radius: f64,
    pub hits: usize,
    pub joint: f64,
    /// ∏ exp(−m·g(|x_i|)).
    pub product: f64,
    pub se: f64,
    pub z: f64,
    pub ok: bool,
    /// σ(A_i ∩ A_j)/σ(A_i) for one pair of the three points (all pairs are
    /// congruent).
    pub pair_overlap_ratio: f64,
    /// exp(−m·σ(A₁ ∪ A₂ ∪ A₃)) with the union measure taken to second order.
    pub overlap_corrected: f64,
    pub z_corrected: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyDiagnostics {
    pub family: u8,
    pub m: f64,
    pub cap_ratio: Option<CapRatioDiagnostic>,
    pub concentration: ConcentrationDiagnostic,
    pub factorization: Option<FactorizationDiagnostic>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaDiagnostics {
    pub families: Vec<FamilyDiagnostics>,
    pub ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationSummary {
    pub m1: f64,
    pub m2: f64,
    pub grid: usize,
    pub diagnostics: PairDiagnostics,
}

/// Everything a run produces that must be reproducible; wall-clock data
/// lives in the run manifest instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format: String,
    pub config: ExperimentConfig,
    pub calibration: CalibrationSummary,
    pub volume: VolumeSection,
    pub distance: DistanceSection,
    pub distinguishers: Vec<DistinguisherResult>,
    pub diagnostics: Option<LemmaDiagnostics>,
    /// Every distinguisher within its TV-derived bound.
    pub consistent: bool,
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolumeRow {
    pub family: u8,
    pub body: usize,
    pub deletions: usize,
    pub accepted: usize,
    pub samples: usize,
    pub relative_volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceRow {
    pub position: usize,
    pub family: u8,
    pub trial: usize,
    pub deletions: usize,
    pub points: usize,
    pub max_radius: Option<f64>,
    pub log_likelihood_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionRow {
    pub distinguisher: String,
    pub true_family: u8,
    pub predicted_1: usize,
    pub predicted_2: usize,
}

/// One bin of |x|ⁿ ∈ [u_lo, u_hi): empirical frequencies of the sampled
/// sequences and analytic bin probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub u_lo: f64,
    pub u_hi: f64,
    pub empirical_1: f64,
    pub empirical_2: f64,
    pub analytic_1: f64,
    pub analytic_2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityRow {
    pub r: f64,
    pub g1: f64,
    pub g2: f64,
    pub tilde_f1: f64,
    pub tilde_f2: f64,
    pub density1: f64,
    pub density2: f64,
    /// m₂g₂ − m₁g₁ − m₁g₁(1), only on the calibrated shell.
    pub pairing_residual: Option<f64>,
}

/// g, f̃ and normalized radial densities of both families at `radii`.
pub fn analytic_table(pair: &ProfilePair, rd1: &RadialDensity, rd2: &RadialDensity, radii: &[f64]) -> Vec<DensityRow> {
    radii
        .iter()
        .map(|&r| {
            let g1 = pair.g1(r);
            let g2 = pair.g2(r);
            DensityRow {
                r,
                g1,
                g2,
                tilde_f1: (-pair.m1 * g1).exp(),
                tilde_f2: (-pair.m2 * g2).exp(),
                density1: rd1.density(r),
                density2: rd2.density(r),
                pairing_residual: (r >= pair.shell_lo).then(|| pair.pairing_residual(r)),
            }
        })
        .collect()
}

/// `points` equally spaced radii on [0, 1].
pub fn unit_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![1.0],
        _ => (0..points).map(|i| i as f64 / (points - 1) as f64).collect(),
    }
}

pub struct ExperimentOutcome {
    pub pair: ProfilePair,
    pub report: ExperimentReport,
    pub volumes: Vec<VolumeRow>,
    pub sequences: Vec<SequenceRow>,
    pub confusion: Vec<ConfusionRow>,
    pub histogram: Vec<HistogramRow>,
    pub densities: Vec<DensityRow>,
}

impl ExperimentOutcome {
    /// Writes the CSV tables into `dir` and returns their paths.
    pub fn write_tables(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let mut paths = Vec::new();
        let mut put = |name: &str, write: &dyn Fn(&Path) -> Result<()>| -> Result<()> {
            let path = dir.join(name);
            write(&path)?;
            paths.push(path);
            Ok(())
        };
        put("volumes.csv", &|p| write_csv(p, &self.volumes))?;
        put("sequences.csv", &|p| write_csv(p, &self.sequences))?;
        put("confusion.csv", &|p| write_csv(p, &self.confusion))?;
        put("radial_histogram.csv", &|p| write_csv(p, &self.histogram))?;
        put("densities.csv", &|p| write_csv(p, &self.densities))?;
        Ok(paths)
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    write_csv_rows(std::fs::File::create(path)?, rows)
}

pub fn write_csv_rows<W: std::io::Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

struct Family {
    spec: Arc<BodyFamilySpec>,
    density: Arc<RadialDensity>,
    max_attempts: u64,
}

impl Family {
    fn new(spec: BodyFamilySpec, attempts_factor: u64) -> Self {
        let density = RadialDensity::new(spec.clone());
        let z = density.normalizer();
        let max_attempts = attempts_factor.saturating_mul((1.0 / z).ceil().max(1.0) as u64);
        Self {
            spec: Arc::new(spec),
            density: Arc::new(density),
            max_attempts,
        }
    }
}

/// Runs the whole pipeline on the current rayon pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let pair = make_profile_pair(&cfg.calibration)?;
    let s = &cfg.sampling;
    let fams = [
        Family::new(pair.family1(), s.attempts_factor),
        Family::new(pair.family2(), s.attempts_factor),
    ];

    let volumes = monte_carlo_volumes(cfg, &fams);
    let profile = l1_profile_distance(&fams[0].spec, &fams[1].spec)?;
    let volume = volume_section(cfg, &fams, &profile, &volumes);
    let n_points = s.points_per_sequence;
    let distance = DistanceSection {
        profile,
        points_per_sequence: n_points,
        tv_bound: profile.tv_bound(n_points),
    };

    let context = DistinguisherContext::new(
        fams.iter()
            .map(|f| Arc::clone(&f.density) as Arc<dyn RadialModel>)
            .collect(),
        n_points,
    )?;

    let m = s.sequences_per_family;
    let tasks: Vec<(usize, usize)> = (0..2).flat_map(|f| (0..m).map(move |j| (f, j))).collect();
    let drawn = tasks
        .par_iter()
        .map(|&(f, j)| {
            let mut rng = stream(cfg.seed, &[KEY_SEQUENCE, f as u64 + 1, j as u64]);
            sample_sequence(&fams[f].spec, n_points, &mut rng, fams[f].max_attempts)
                .map(|(body, seq)| (body.len(), seq))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut order: Vec<usize> = (0..tasks.len()).collect();
    order.shuffle(&mut stream(cfg.seed, &[KEY_SHUFFLE]));

    let sequences: Vec<SequenceRow> = order
        .par_iter()
        .enumerate()
        .map(|(position, &k)| {
            let (f, j) = tasks[k];
            let (deletions, seq) = &drawn[k];
            SequenceRow {
                position,
                family: f as u8 + 1,
                trial: j,
                deletions: *deletions,
                points: seq.len(),
                max_radius: seq.radii().reduce(f64::max),
                log_likelihood_ratio: log_likelihood_ratio(seq, &context).0,
            }
        })
        .collect();

    let bound = 0.5 + (distance.tv_bound / 2.0).max(0.0) + 4.0 * (0.25 / (2 * m) as f64).sqrt();
    let mut results = Vec::new();
    let mut confusion_rows = Vec::new();
    for name in &cfg.distinguishers {
        let d = distinguisher_by_name(name)?;
        let labels: Vec<Label> = order.par_iter().map(|&k| d.decide(&drawn[k].1, &context)).collect();
        let mut confusion = [[0usize; 2]; 2];
        for (&k, label) in order.iter().zip(&labels) {
            confusion[tasks[k].0][label.index()] += 1;
        }
        let correct = confusion[0][0] + confusion[1][1];
        let trials = tasks.len();
        let accuracy = correct as f64 / trials as f64;
        for (t, row) in confusion.iter().enumerate() {
            confusion_rows.push(ConfusionRow {
                distinguisher: name.clone(),
                true_family: Label::from_index(t).number(),
                predicted_1: row[0],
                predicted_2: row[1],
            });
        }
        results.push(DistinguisherResult {
            name: name.clone(),
            trials,
            correct,
            accuracy,
            accuracy_ci: wilson_interval(correct, trials),
            confusion,
            bound,
            consistent: accuracy <= bound,
        });
    }
    let consistent = results.iter().all(|r| r.consistent);

    let histogram = radial_histogram(&fams, &tasks, &drawn, s.histogram_bins);
    let densities = analytic_table(&pair, &fams[0].density, &fams[1].density, &unit_grid(s.density_grid));

    let diagnostics = if cfg.diagnostics.enabled {
        Some(lemma_diagnostics(cfg, &fams, &volumes)?)
    } else {
        None
    };

    let report = ExperimentReport {
        format: REPORT_FORMAT.to_string(),
        config: cfg.clone(),
        calibration: CalibrationSummary {
            m1: pair.m1,
            m2: pair.m2,
            grid: pair.grid,
            diagnostics: pair.diagnostics,
        },
        volume,
        distance,
        distinguishers: results,
        diagnostics,
        consistent,
    };
    Ok(ExperimentOutcome {
        pair,
        report,
        volumes,
        sequences,
        confusion: confusion_rows,
        histogram,
        densities,
    })
}

/// Only the lemma diagnostics, with their own volume sample.
pub fn run_lemma_diagnostics(cfg: &ExperimentConfig) -> Result<LemmaDiagnostics> {
    cfg.validate()?;
    let pair = make_profile_pair(&cfg.calibration)?;
    let fams = [
        Family::new(pair.family1(), cfg.sampling.attempts_factor),
        Family::new(pair.family2(), cfg.sampling.attempts_factor),
    ];
    let volumes = monte_carlo_volumes(cfg, &fams);
    lemma_diagnostics(cfg, &fams, &volumes)
}

fn monte_carlo_volumes(cfg: &ExperimentConfig, fams: &[Family; 2]) -> Vec<VolumeRow> {
    let s = &cfg.sampling;
    let tasks: Vec<(usize, usize)> = (0..2).flat_map(|f| (0..s.volume_bodies).map(move |j| (f, j))).collect();
    tasks
        .par_iter()
        .map(|&(f, j)| {
            let mut rng = stream(cfg.seed, &[KEY_VOLUME, f as u64 + 1, j as u64]);
            let body = sample_body(&fams[f].spec, &mut rng);
            let n = body.dimension();
            let accepted = (0..s.volume_samples)
                .filter(|_| body.contains(sample_unit_ball(n, &mut rng).coords()))
                .count();
            VolumeRow {
                family: f as u8 + 1,
                body: j,
                deletions: body.len(),
                accepted,
                samples: s.volume_samples,
                relative_volume: accepted as f64 / s.volume_samples as f64,
            }
        })
        .collect()
}

fn family_volumes(rows: &[VolumeRow], family: u8) -> Vec<f64> {
    rows.iter()
        .filter(|r| r.family == family)
        .map(|r| r.relative_volume)
        .collect()
}

fn volume_section(
    cfg: &ExperimentConfig,
    fams: &[Family; 2],
    profile: &ProfileDistanceReport,
    rows: &[VolumeRow],
) -> VolumeSection {
    let z1 = fams[0].density.normalizer();
    let z2 = fams[1].density.normalizer();
    let target = cfg.calibration.kappa.exp();
    let analytic_ratio = z1 / z2;
    let analytic_tolerance = 1e-3 + analytic_ratio * profile.leak_1 + target * profile.leak_2;

    let v1 = family_volumes(rows, 1);
    let v2 = family_volumes(rows, 2);
    let (mean1, var1) = mean_var(&v1);
    let (mean2, var2) = mean_var(&v2);
    let mc_ratio = mean1 / mean2;
    let rel_se = (var1 / (v1.len() as f64 * mean1 * mean1) + var2 / (v2.len() as f64 * mean2 * mean2)).sqrt();
    let half = Z95 * mc_ratio * if rel_se.is_finite() { rel_se } else { 0.0 };
    let mc_relative_error = (mc_ratio - analytic_ratio).abs() / analytic_ratio;
    VolumeSection {
        target_ratio: target,
        analytic_volume_1: z1,
        analytic_volume_2: z2,
        analytic_ratio,
        analytic_tolerance,
        analytic_ok: (analytic_ratio - target).abs() <= analytic_tolerance,
        bodies_per_family: cfg.sampling.volume_bodies,
        samples_per_body: cfg.sampling.volume_samples,
        mc_mean_1: mean1,
        mc_mean_2: mean2,
        mc_ratio,
        mc_ratio_ci: Interval {
            lo: mc_ratio - half,
            hi: mc_ratio + half,
        },
        mc_relative_error,
        mc_ok: mc_relative_error <= 0.05,
    }
}

fn radial_histogram(
    fams: &[Family; 2],
    tasks: &[(usize, usize)],
    drawn: &[(usize, PointSequence)],
    bins: usize,
) -> Vec<HistogramRow> {
    let n = fams[0].spec.dimension().get() as i32;
    let mut counts = [vec![0usize; bins], vec![0usize; bins]];
    for (&(f, _), (_, seq)) in tasks.iter().zip(drawn) {
        for r in seq.radii() {
            let k = ((r.powi(n) * bins as f64) as usize).min(bins - 1);
            counts[f][k] += 1;
        }
    }
    let totals = counts.each_ref().map(|c| c.iter().sum::<usize>().max(1) as f64);
    let edges: Vec<f64> = (0..=bins).map(|i| i as f64 / bins as f64).collect();
    let cdfs: Vec<[f64; 2]> = edges
        .iter()
        .map(|&u| {
            let r = u.powf(1.0 / n as f64);
            [fams[0].density.cdf(r), fams[1].density.cdf(r)]
        })
        .collect();
    (0..bins)
        .map(|k| HistogramRow {
            u_lo: edges[k],
            u_hi: edges[k + 1],
            empirical_1: counts[0][k] as f64 / totals[0],
            empirical_2: counts[1][k] as f64 / totals[1],
            analytic_1: cdfs[k + 1][0] - cdfs[k][0],
            analytic_2: cdfs[k + 1][1] - cdfs[k][1],
        })
        .collect()
}

fn lemma_diagnostics(cfg: &ExperimentConfig, fams: &[Family; 2], volumes: &[VolumeRow]) -> Result<LemmaDiagnostics> {
    let mut families = Vec::new();
    for (f, fam) in fams.iter().enumerate() {
        let label = f as u8 + 1;
        let cap_ratio = cap_ratio_diagnostic(cfg, fam, label)?;
        let concentration = concentration_diagnostic(fam, volumes, label);
        let factorization = factorization_diagnostic(cfg, fam, label)?;
        families.push(FamilyDiagnostics {
            family: label,
            m: fam.spec.m,
            cap_ratio,
            concentration,
            factorization,
        });
    }
    let ok = families.iter().all(|d| {
        d.cap_ratio.as_ref().is_none_or(|c| c.ok) && d.concentration.ok && d.factorization.as_ref().is_none_or(|c| c.ok)
    });
    Ok(LemmaDiagnostics { families, ok })
}

fn shell_point<R: rand::Rng>(n: Dimension, rng: &mut R) -> BallPoint {
    loop {
        let p = sample_unit_ball(n, rng);
        if p.norm() > 0.5 {
            return p;
        }
    }
}

fn cap_ratio_diagnostic(cfg: &ExperimentConfig, fam: &Family, label: u8) -> Result<Option<CapRatioDiagnostic>> {
    let d = &cfg.diagnostics;
    if d.cap_ratio_pairs == 0 {
        return Ok(None);
    }
    let set = &fam.spec.index_set;
    let n = set.dimension();
    let estimates = (0..d.cap_ratio_pairs)
        .into_par_iter()
        .map(|k| {
            let mut rng: RandomStream = stream(cfg.seed, &[KEY_CAP_RATIO, label as u64, k as u64]);
            let p1 = shell_point(n, &mut rng);
            let p2 = shell_point(n, &mut rng);
            mutual_cap_ratio(&p1, &p2, set, &mut rng, d.cap_ratio_samples).map(|e| e.mean)
        })
        .collect::<Result<Vec<_>>>()?;
    let (mean, var) = mean_var(&estimates);
    let se = (var / estimates.len() as f64).sqrt();
    let bound = profile_moment(&fam.spec, 1);
    Ok(Some(CapRatioDiagnostic {
        pairs: d.cap_ratio_pairs,
        samples_per_pair: d.cap_ratio_samples,
        mean,
        se,
        bound,
        ok: mean <= bound + 4.0 * se,
    }))
}

fn concentration_diagnostic(fam: &Family, volumes: &[VolumeRow], label: u8) -> ConcentrationDiagnostic {
    let rows: Vec<&VolumeRow> = volumes.iter().filter(|r| r.family == label).collect();
    let v: Vec<f64> = rows.iter().map(|r| r.relative_volume).collect();
    let (mean, variance) = mean_var(&v);
    let noise = rows
        .iter()
        .map(|r| {
            let p = r.relative_volume;
            p * (1.0 - p) / (r.samples.max(2) - 1) as f64
        })
        .sum::<f64>()
        / rows.len().max(1) as f64;
    let ratio = |x: f64| if mean > 0.0 { x / (mean * mean) } else { 0.0 };
    let var_over_mean_sq = ratio(variance);
    let corrected = ratio((variance - noise).max(0.0));
    let prediction = 10.0 * fam.spec.m * profile_moment(&fam.spec, 2);
    ConcentrationDiagnostic {
        bodies: v.len(),
        mean,
        variance,
        var_over_mean_sq,
        corrected_var_over_mean_sq: corrected,
        prediction,
        ok: corrected <= prediction,
    }
}

fn factorization_diagnostic(
    cfg: &ExperimentConfig,
    fam: &Family,
    label: u8,
) -> Result<Option<FactorizationDiagnostic>> {
    let d = &cfg.diagnostics;
    if d.factorization_bodies == 0 {
        return Ok(None);
    }
    let n = fam.spec.dimension();
    let radius = 1.0 - cfg.calibration.delta1 * d.factorization_u;
    let points = (0..3)
        .map(|k| BallPoint::on_ray(&UnitVector::basis(n, k), radius))
        .collect::<Result<Vec<_>>>()?;
    let chunks = d.factorization_bodies.div_ceil(FACTORIZATION_CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = stream(cfg.seed, &[KEY_FACTORIZATION, label as u64, c as u64]);
            let count = FACTORIZATION_CHUNK.min(d.factorization_bodies - c * FACTORIZATION_CHUNK);
            (0..count)
                .filter(|_| {
                    let body = sample_body(&fam.spec, &mut rng);
                    points.iter().all(|p| body.contains(p.coords()))
                })
                .count()
        })
        .collect::<Vec<_>>()
        .into_iter()
        .sum();
    let bodies = d.factorization_bodies;
    let joint = hits as f64 / bodies as f64;
    let m = fam.spec.m;
    let g = fam.spec.profile(radius);
    let product = (-3.0 * m * g).exp();
    let ratio = if m > 0.0 && g > 0.0 {
        let mut rng = stream(cfg.seed, &[KEY_FACTORIZATION, label as u64, u64::MAX]);
        mutual_cap_ratio(&points[0], &points[1], &fam.spec.index_set, &mut rng, OVERLAP_SAMPLES)?.mean
    } else {
        0.0
    };
    let corrected = (-3.0 * m * g * (1.0 - ratio)).exp();
    let z_score = |expect: f64| {
        let se = (expect * (1.0 - expect) / bodies as f64).sqrt();
        if se > 0.0 {
            (joint - expect) / se
        } else if joint == expect {
            0.0
        } else {
            f64::INFINITY
        }
    };
    let z = z_score(product);
    Ok(Some(FactorizationDiagnostic {
        bodies,
        radius,
        hits,
        joint,
        product,
        se: (product * (1.0 - product) / bodies as f64).sqrt(),
        z,
        ok: z.abs() <= 4.0,
        pair_overlap_ratio: ratio,
        overlap_corrected: corrected,
        z_corrected: z_score(corrected),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Uniform {
        lo: f64,
        hi: f64,
    }

    impl RadialModel for Uniform {
        fn log_density(&self, r: f64) -> f64 {
            if r >= self.lo && r <= self.hi {
                -(self.hi - self.lo).ln()
            } else {
                f64::NEG_INFINITY
            }
        }

        fn quantile(&self, p: f64) -> f64 {
            self.lo + p * (self.hi - self.lo)
        }
    }

    fn seq(radii: &[f64]) -> PointSequence {
        PointSequence {
            points: radii
                .iter()
                .map(|&r| BallPoint::new(vec![r, 0.0, 0.0]).unwrap())
                .collect(),
        }
    }

    fn context(a: (f64, f64), b: (f64, f64), n: usize) -> DistinguisherContext {
        DistinguisherContext::new(
            vec![
                Arc::new(Uniform { lo: a.0, hi: a.1 }),
                Arc::new(Uniform { lo: b.0, hi: b.1 }),
            ],
            n,
        )
        .unwrap()
    }

    #[test]
    fn empty_context_is_rejected() {
        assert!(matches!(DistinguisherContext::new(vec![], 4), Err(Error::Config(_))));
    }

    #[test]
    fn identical_models_tie_to_family_one() {
        let ctx = context((0.0, 1.0), (0.0, 1.0), 3);
        let s = seq(&[0.2, 0.9, 0.5]);
        assert_eq!(likelihood_ratio_distinguisher(&s, &ctx), Label::One);
        assert_eq!(max_radius_distinguisher(&s, &ctx), Label::One);
    }

    #[test]
    fn disjoint_supports_are_separated() {
        let ctx = context((0.0, 0.5), (0.5, 1.0), 2);
        let low = seq(&[0.1, 0.3]);
        let high = seq(&[0.7, 0.9]);
        assert_eq!(likelihood_ratio_distinguisher(&low, &ctx), Label::One);
        assert_eq!(likelihood_ratio_distinguisher(&high, &ctx), Label::Two);
        assert_eq!(max_radius_distinguisher(&low, &ctx), Label::One);
        assert_eq!(max_radius_distinguisher(&high, &ctx), Label::Two);
    }

    #[test]
    fn empty_sequences_go_to_family_one() {
        let ctx = context((0.0, 0.5), (0.5, 1.0), 0);
        let empty = PointSequence { points: vec![] };
        assert_eq!(likelihood_ratio_distinguisher(&empty, &ctx), Label::One);
        assert_eq!(max_radius_distinguisher(&empty, &ctx), Label::One);
    }

    #[test]
    fn unknown_distinguisher_is_a_config_error() {
        assert!(distinguisher_by_name("oracle").is_err());
        let mut cfg = ExperimentConfig::flagship();
        cfg.distinguishers.push("oracle".into());
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unit_grid_endpoints() {
        assert_eq!(unit_grid(2), vec![0.0, 1.0]);
        assert_eq!(unit_grid(5)[2], 0.5);
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = ExperimentConfig::flagship();
        let text = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
    }
}
