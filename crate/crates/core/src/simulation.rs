//! Swiss-roll simulation designs, the analytic geodesic of the roll, and the
//! Monte-Carlo AMSE harness comparing the four regressors.
//!
//! Every realization draws from its own ChaCha stream derived from one master
//! seed, so results do not depend on how realizations are scheduled.

use std::f64::consts::PI;
use std::io;
use std::time::Instant;

use nalgebra::{DMatrix, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::manifold_graph::{default_radius, FeatureMatrix};
use crate::metric_space::{distance, sphere_exp, sym_matrix_exp, MetricPoint, Space};
use crate::regression::{
    bandwidth_grid, cv_distance_matrix, default_knn_grid, knn_estimate, loocv_select, median_nn_distance, nw_estimate,
    Family, GraphChoice, GraphConfig, GraphContext, Kernel, LabeledSet, RegressionError,
};

/// Standard deviation of the tangent noise in Settings III and IV.
pub const SPHERE_NOISE_SD: f64 = 0.2;

/// Latent draws used to calibrate σ from the signal-to-noise ratio.
pub const SNR_CALIBRATION_DRAWS: usize = 100_000;

const SNR_CALIBRATION_SEED: u64 = 0x5eed_ca1b;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LatentSource {
    #[default]
    Uniform,
    /// N((0.5, 0.5), Σ) with Σᵢⱼ = 0.5^|i−j|, conditioned on [0,1]².
    TruncatedNormal,
}

/// Draws a latent point `u ∈ [0,1]²`.
pub fn sample_latent<R: Rng + ?Sized>(source: LatentSource, rng: &mut R) -> [f64; 2] {
    match source {
        LatentSource::Uniform => [rng.random(), rng.random()],
        LatentSource::TruncatedNormal => loop {
            let z1: f64 = StandardNormal.sample(rng);
            let z2: f64 = StandardNormal.sample(rng);
            // Cholesky factor of [[1, .5], [.5, 1]]
            let u = [0.5 + z1, 0.5 + 0.5 * z1 + 0.75f64.sqrt() * z2];
            if u.iter().all(|x| (0.0..=1.0).contains(x)) {
                break u;
            }
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Ambient {
    #[default]
    R3,
    R6,
}

impl Ambient {
    pub fn dim(self) -> usize {
        match self {
            Ambient::R3 => 3,
            Ambient::R6 => 6,
        }
    }
}

fn roll_angle(t: f64) -> f64 {
    4.0 * PI * (t + 0.5)
}

/// Swiss-roll embedding of a latent point.
///
/// ℝ³: `(θcosθ/10, 4u₂, θsinθ/10)` with `θ = 4π(u₁ + ½)`.
/// ℝ⁶: two spirals in `θ₁, θ₂` interleaved with `u₂` and `−u₁`.
pub fn embed_swiss_roll(u: [f64; 2], ambient: Ambient) -> Vec<f64> {
    match ambient {
        Ambient::R3 => {
            let t = roll_angle(u[0]);
            vec![t * t.cos() / 10.0, 4.0 * u[1], t * t.sin() / 10.0]
        }
        Ambient::R6 => {
            let t1 = roll_angle(u[0]);
            let t2 = roll_angle(u[1]);
            vec![t1 * t1.cos() / 10.0, u[1], t1 * t1.sin() / 10.0, t2 * t2.cos() / 10.0, -u[0], t2 * t2.sin() / 10.0]
        }
    }
}

/// Antiderivative of `√(a² + t²)/10`.
fn arc_primitive(t: f64, a2: f64) -> f64 {
    let a = a2.sqrt();
    (t * (a2 + t * t).sqrt() + a2 * (t / a).asinh()) / 20.0
}

/// Coordinates of the flat strip the roll unrolls onto.
pub fn unrolled_coords(u: [f64; 2], ambient: Ambient) -> [f64; 2] {
    match ambient {
        Ambient::R3 => [arc_primitive(roll_angle(u[0]), 1.0), 4.0 * u[1]],
        Ambient::R6 => {
            // each latent direction moves one spiral plus one linear coordinate
            let a2 = 1.0 + 100.0 / (16.0 * PI * PI);
            [arc_primitive(roll_angle(u[0]), a2), arc_primitive(roll_angle(u[1]), a2)]
        }
    }
}

/// Geodesic distance on the roll between two latent points.
///
/// The roll is isometric to a rectangle, so this is the straight-line
/// distance between unrolled coordinates.
pub fn swiss_roll_geodesic(u1: [f64; 2], u2: [f64; 2], ambient: Ambient) -> f64 {
    let a = unrolled_coords(u1, ambient);
    let b = unrolled_coords(u2, ambient);
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Setting {
    I,
    II,
    III,
    IV,
}

impl Setting {
    pub fn space(self) -> Space {
        match self {
            Setting::I => Space::Spd(2),
            Setting::II => Space::Spd(3),
            Setting::III | Setting::IV => Space::Sphere,
        }
    }

    pub fn uses_snr(self) -> bool {
        matches!(self, Setting::I | Setting::II)
    }

    /// Noiseless response: the regression target used for scoring.
    pub fn true_response(self, u: [f64; 2]) -> MetricPoint {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        self.response(u, 0.0, &mut rng)
    }

    /// Response at `u`; `noise` is σ for Settings I–II and the tangent noise
    /// standard deviation for Settings III–IV.
    pub fn response<R: Rng + ?Sized>(self, u: [f64; 2], noise: f64, rng: &mut R) -> MetricPoint {
        match self {
            Setting::I | Setting::II => gen_spd_setting(self, u, noise, rng),
            Setting::III => gen_setting_iii(u, noise, rng),
            Setting::IV => gen_setting_iv(u, noise, rng),
        }
    }
}

fn dot(beta: [f64; 2], u: [f64; 2]) -> f64 {
    beta[0] * u[0] + beta[1] * u[1]
}

/// Mean of `log Y` for Setting I (2×2) or II (3×3).
pub fn spd_mean_log(setting: Setting, u: [f64; 2]) -> DMatrix<f64> {
    match setting {
        Setting::I => {
            let rho = (4.0 * PI * dot([0.75, 0.25], u)).cos();
            DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0])
        }
        Setting::II => {
            let r1 = 0.8 * (4.0 * PI * dot([0.75, 0.25], u)).cos();
            let r2 = 0.4 * (4.0 * PI * dot([0.25, 0.75], u)).cos();
            DMatrix::from_row_slice(3, 3, &[1.0, r1, r2, r1, 1.0, r1, r2, r1, 1.0])
        }
        _ => panic!("setting {setting:?} has no SPD response"),
    }
}

/// Symmetric matrix with N(0,1) diagonal and N(0,½) off-diagonal entries.
pub fn symmetric_normal<R: Rng + ?Sized>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let mut z = DMatrix::zeros(d, d);
    let off_sd = 0.5f64.sqrt();
    for i in 0..d {
        z[(i, i)] = StandardNormal.sample(rng);
        for j in (i + 1)..d {
            let v: f64 = StandardNormal.sample(rng);
            z[(i, j)] = off_sd * v;
            z[(j, i)] = off_sd * v;
        }
    }
    z
}

/// `Y = exp(D(u) + σZ)`.
fn gen_spd_setting<R: Rng + ?Sized>(setting: Setting, u: [f64; 2], sigma: f64, rng: &mut R) -> MetricPoint {
    let mean = spd_mean_log(setting, u);
    let d = mean.nrows();
    let log_y = if sigma == 0.0 { mean } else { mean + symmetric_normal(d, rng) * sigma };
    MetricPoint::Spd(sym_matrix_exp(&log_y).expect("symmetric by construction"))
}

pub fn gen_setting_i<R: Rng + ?Sized>(u: [f64; 2], sigma: f64, rng: &mut R) -> MetricPoint {
    gen_spd_setting(Setting::I, u, sigma, rng)
}

pub fn gen_setting_ii<R: Rng + ?Sized>(u: [f64; 2], sigma: f64, rng: &mut R) -> MetricPoint {
    gen_spd_setting(Setting::II, u, sigma, rng)
}

/// Regression function of Setting III.
pub fn setting_iii_mean(u: [f64; 2]) -> Vector3<f64> {
    let a = u[0];
    let b = u[1];
    let r = (1.0 - a * a).max(0.0).sqrt();
    Vector3::new(r * (PI * b).cos(), r * (PI * b).sin(), a)
}

/// Orthonormal tangent basis at `m`: the two canonical axes with the largest
/// residual after projecting out `m`, in index order, then Gram–Schmidt.
pub fn tangent_basis(m: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let residual = |i: usize| {
        let e = Vector3::ith(i, 1.0);
        e - m * m.dot(&e)
    };
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| residual(b).norm().total_cmp(&residual(a).norm()).then(a.cmp(&b)));
    let (mut i, mut j) = (order[0], order[1]);
    if i > j {
        std::mem::swap(&mut i, &mut j);
    }
    let v1 = residual(i).normalize();
    let r2 = residual(j);
    let v2 = (r2 - v1 * v1.dot(&r2)).normalize();
    (v1, v2)
}

/// `Exp_{m(u)}(δ₁v₁ + δ₂v₂)` with `δᵢ ~ N(0, sd²)`.
pub fn gen_setting_iii<R: Rng + ?Sized>(u: [f64; 2], sd: f64, rng: &mut R) -> MetricPoint {
    let m = setting_iii_mean(u);
    if sd == 0.0 {
        return MetricPoint::Sphere(m);
    }
    let (v1, v2) = tangent_basis(&m);
    let d1: f64 = StandardNormal.sample(rng);
    let d2: f64 = StandardNormal.sample(rng);
    let eps = (v1 * d1 + v2 * d2) * sd;
    sphere_exp(&MetricPoint::Sphere(m), &eps).expect("tangent by construction")
}

/// `(sin a·sin b, sin a·cos b, |cos a|)` with `a = u₁ + ε₁`, `b = u₂ + ε₂`.
pub fn gen_setting_iv<R: Rng + ?Sized>(u: [f64; 2], sd: f64, rng: &mut R) -> MetricPoint {
    let (e1, e2) = if sd == 0.0 {
        (0.0, 0.0)
    } else {
        let e1: f64 = StandardNormal.sample(rng);
        let e2: f64 = StandardNormal.sample(rng);
        (sd * e1, sd * e2)
    };
    let a = dot([1.0, 0.0], u) + e1;
    let b = dot([0.0, 1.0], u) + e2;
    MetricPoint::Sphere(Vector3::new(a.sin() * b.sin(), a.sin() * b.cos(), a.cos().abs()))
}

/// Pooled standard deviation of the free entries of `D(U)`: the square root
/// of the average over upper-triangular entries of each entry's variance
/// across latent draws.
pub fn signal_sd(setting: Setting, source: LatentSource) -> f64 {
    let d = match setting.space() {
        Space::Spd(d) => d,
        _ => panic!("setting {setting:?} has no SPD response"),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(SNR_CALIBRATION_SEED);
    let entries: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
    let mut sum = vec![0.0; entries.len()];
    let mut sum_sq = vec![0.0; entries.len()];
    for _ in 0..SNR_CALIBRATION_DRAWS {
        let m = spd_mean_log(setting, sample_latent(source, &mut rng));
        for (k, &(i, j)) in entries.iter().enumerate() {
            sum[k] += m[(i, j)];
            sum_sq[k] += m[(i, j)] * m[(i, j)];
        }
    }
    let n = SNR_CALIBRATION_DRAWS as f64;
    let pooled: f64 =
        sum.iter().zip(&sum_sq).map(|(s, sq)| (sq - s * s / n) / (n - 1.0)).sum::<f64>() / entries.len() as f64;
    pooled.max(0.0).sqrt()
}

/// σ such that `signal_sd / σ = snr`.
pub fn calibrate_sigma(setting: Setting, snr: f64, source: LatentSource) -> f64 {
    signal_sd(setting, source) / snr
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "nw")]
    Nw,
    #[serde(rename = "knn")]
    Knn,
    #[serde(rename = "semi-nw")]
    SemiNw,
    #[serde(rename = "semi-knn")]
    SemiKnn,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Nw, Method::Knn, Method::SemiNw, Method::SemiKnn];

    pub fn name(self) -> &'static str {
        match self {
            Method::Nw => "nw",
            Method::Knn => "knn",
            Method::SemiNw => "semi-nw",
            Method::SemiKnn => "semi-knn",
        }
    }

    pub fn is_semi(self) -> bool {
        matches!(self, Method::SemiNw | Method::SemiKnn)
    }

    pub fn is_nw(self) -> bool {
        matches!(self, Method::Nw | Method::SemiNw)
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method {s:?}; expected nw, knn, semi-nw or semi-knn"))
    }
}

/// Either a single count or a list of counts in the config file.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
enum OneOrMany {
    One(usize),
    Many(Vec<usize>),
}

fn one_or_many<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Vec<usize>, D::Error> {
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(x) => vec![x],
        OneOrMany::Many(v) => v,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GraphKind {
    R,
    Knn,
}

/// Neighbor-graph settings for the semi-supervised methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphSection {
    pub rule: GraphKind,
    /// Fixed radius; absent means the default radius heuristic.
    pub radius: Option<f64>,
    pub k: usize,
    pub fermat_s: f64,
}

impl Default for GraphSection {
    fn default() -> Self {
        GraphSection { rule: GraphKind::R, radius: None, k: 4, fermat_s: 1.0 }
    }
}

impl GraphSection {
    pub fn to_config(&self) -> GraphConfig {
        let rule = match self.rule {
            GraphKind::R => GraphChoice::Radius(self.radius),
            GraphKind::Knn => GraphChoice::Knn(self.k),
        };
        GraphConfig { rule, fermat_s: self.fermat_s }
    }
}

fn default_methods() -> Vec<Method> {
    Method::ALL.to_vec()
}

fn default_realizations() -> usize {
    100
}

fn default_n_test() -> usize {
    1000
}

/// One simulation study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub setting: Setting,
    #[serde(default)]
    pub ambient: Ambient,
    #[serde(default)]
    pub latent: LatentSource,
    /// Labeled sample size.
    pub n: usize,
    /// Unlabeled sample sizes; every size is evaluated on the same draws.
    #[serde(deserialize_with = "one_or_many")]
    pub m: Vec<usize>,
    #[serde(default = "default_n_test")]
    pub n_test: usize,
    /// Signal-to-noise ratio, Settings I and II only.
    #[serde(default)]
    pub snr: Option<f64>,
    /// Generate noiseless labeled responses.
    #[serde(default)]
    pub noiseless: bool,
    #[serde(default = "default_realizations")]
    pub realizations: usize,
    pub seed: u64,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    /// Candidate `k` values; defaults to `{1, …, 10}`.
    #[serde(default)]
    pub knn_grid: Option<Vec<usize>>,
    /// Exponents `e` of the bandwidth candidates `5^e · h₀`; defaults to
    /// `{0.1, 0.2, …, 1.0}`.
    #[serde(default)]
    pub bandwidth_exponents: Option<Vec<f64>>,
    #[serde(default)]
    pub graph: GraphSection,
}

/// A config problem located by JSON pointer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigIssue {
    pub pointer: String,
    pub message: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.pointer, self.message)
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), Vec<ConfigIssue>> {
        let mut issues = Vec::new();
        let mut push =
            |pointer: &str, message: String| issues.push(ConfigIssue { pointer: pointer.to_string(), message });
        if self.n < 2 {
            push("/n", format!("need at least 2 labeled points, got {}", self.n));
        }
        if self.m.is_empty() {
            push("/m", "at least one unlabeled size is required".into());
        }
        if self.n_test < 1 {
            push("/n_test", "need at least one test point".into());
        }
        if self.realizations < 1 {
            push("/realizations", "need at least one realization".into());
        }
        if self.methods.is_empty() {
            push("/methods", "no methods requested".into());
        }
        if self.setting.uses_snr() && !self.noiseless {
            match self.snr {
                Some(s) if s > 0.0 && s.is_finite() => {}
                Some(s) => push("/snr", format!("must be positive, got {s}")),
                None => push("/snr", format!("required for setting {:?}", self.setting)),
            }
        }
        if let Some(grid) = &self.knn_grid {
            if grid.is_empty() {
                push("/knn_grid", "empty grid".into());
            }
            for (i, &k) in grid.iter().enumerate() {
                if k == 0 || k >= self.n {
                    push(&format!("/knn_grid/{i}"), format!("k must satisfy 1 <= k < n, got {k}"));
                }
            }
        }
        if let Some(grid) = &self.bandwidth_exponents {
            if grid.is_empty() {
                push("/bandwidth_exponents", "empty grid".into());
            }
            for (i, e) in grid.iter().enumerate() {
                if !e.is_finite() {
                    push(&format!("/bandwidth_exponents/{i}"), format!("not finite: {e}"));
                }
            }
        }
        if !(self.graph.fermat_s >= 1.0) {
            push("/graph/fermat_s", format!("must be >= 1, got {}", self.graph.fermat_s));
        }
        if let Some(r) = self.graph.radius {
            if !(r > 0.0) || !r.is_finite() {
                push("/graph/radius", format!("must be positive, got {r}"));
            }
        }
        if self.graph.rule == GraphKind::Knn && self.graph.k == 0 {
            push("/graph/k", "must be at least 1".into());
        }
        if issues.is_empty() {
            Ok(())
        } else {
            Err(issues)
        }
    }

    /// Noise level passed to the response generator.
    pub fn noise_level(&self) -> f64 {
        if self.noiseless {
            return 0.0;
        }
        match self.setting {
            Setting::I | Setting::II => calibrate_sigma(self.setting, self.snr.unwrap_or(f64::INFINITY), self.latent),
            Setting::III | Setting::IV => SPHERE_NOISE_SD,
        }
    }

    pub fn knn_candidates(&self) -> Vec<Family> {
        let ks = self.knn_grid.clone().unwrap_or_else(|| default_knn_grid(self.n));
        ks.into_iter().map(|k| Family::Knn { k }).collect()
    }

    fn bandwidth_candidates(&self, h0: f64) -> Vec<Family> {
        let hs = match &self.bandwidth_exponents {
            Some(es) => es.iter().map(|e| 5f64.powf(*e) * h0).collect(),
            None => bandwidth_grid(h0),
        };
        hs.into_iter().map(|bandwidth| Family::Nw { bandwidth }).collect()
    }

    fn max_m(&self) -> usize {
        self.m.iter().copied().max().unwrap_or(0)
    }
}

/// The master seed's stream for realization `j`.
pub fn realization_rng(seed: u64, j: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(j as u64 + 1);
    rng
}

/// Everything drawn for one realization.
#[derive(Debug, Clone)]
pub struct RealizationData {
    pub labeled_latent: Vec<[f64; 2]>,
    pub labeled: LabeledSet,
    /// Pool of `max(m)` unlabeled features; size `m` uses the first `m`.
    pub unlabeled: Vec<Vec<f64>>,
    pub test_features: Vec<Vec<f64>>,
    pub test_truth: Vec<MetricPoint>,
}

/// Draws labeled, unlabeled and test data for realization `j`.
pub fn draw_realization(config: &ExperimentConfig, noise: f64, j: usize) -> RealizationData {
    let mut rng = realization_rng(config.seed, j);
    let embed = |u: [f64; 2]| embed_swiss_roll(u, config.ambient);

    let labeled_latent: Vec<[f64; 2]> = (0..config.n).map(|_| sample_latent(config.latent, &mut rng)).collect();
    let responses: Vec<MetricPoint> =
        labeled_latent.iter().map(|&u| config.setting.response(u, noise, &mut rng)).collect();
    let unlabeled = (0..config.max_m()).map(|_| embed(sample_latent(config.latent, &mut rng))).collect();
    let test_latent: Vec<[f64; 2]> = (0..config.n_test).map(|_| sample_latent(config.latent, &mut rng)).collect();

    let features: Vec<Vec<f64>> = labeled_latent.iter().map(|&u| embed(u)).collect();
    RealizationData {
        labeled: LabeledSet::new(&features, responses).expect("generated responses are valid"),
        labeled_latent,
        unlabeled,
        test_features: test_latent.iter().map(|&u| embed(u)).collect(),
        test_truth: test_latent.iter().map(|&u| config.setting.true_response(u)).collect(),
    }
}

/// Outcome of one method on one realization at one unlabeled size.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub realization: usize,
    pub method: Method,
    pub m: usize,
    /// `+∞` when the trial failed.
    pub mse: f64,
    /// Selected hyperparameter, e.g. `k=3` or `h=0.41`.
    pub hyperparam: String,
    pub seconds: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: Method,
    pub m: usize,
    pub amse: f64,
    /// Standard error of the AMSE across realizations.
    pub se: f64,
    pub failed: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub noise: f64,
    pub trials: Vec<TrialResult>,
    pub summary: Vec<SummaryRow>,
}

struct Scored {
    mse: f64,
    hyperparam: String,
    error: Option<String>,
}

fn score(
    labeled: &LabeledSet,
    cv_dists: &DMatrix<f64>,
    nw: bool,
    config: &ExperimentConfig,
    test_dists: &[Result<Vec<f64>, RegressionError>],
    truth: &[MetricPoint],
    semi: bool,
) -> Scored {
    let fail = |hyperparam: String, e: RegressionError| Scored {
        mse: f64::INFINITY,
        hyperparam,
        error: Some(format!("{}: {e}", e.case())),
    };
    let candidates = if nw {
        match median_nn_distance(cv_dists) {
            Ok(h0) if h0 > 0.0 && h0.is_finite() => config.bandwidth_candidates(h0),
            Ok(h0) => return fail(String::new(), RegressionError::DegenerateDistances(h0)),
            Err(e) => return fail(String::new(), e),
        }
    } else {
        config.knn_candidates()
    };
    let family = match loocv_select(labeled, &candidates, cv_dists, Kernel::Epanechnikov) {
        Ok((f, _)) => f,
        Err(e) => return fail(String::new(), e),
    };
    let hyperparam = family.describe();
    let mut total = 0.0;
    for (dists, y) in test_dists.iter().zip(truth) {
        let pred = dists.clone().and_then(|d| {
            if semi && d.iter().all(|x| x.is_infinite()) {
                return Err(RegressionError::IsolatedQuery);
            }
            match family {
                Family::Nw { bandwidth } => nw_estimate(&d, labeled.responses(), bandwidth, Kernel::Epanechnikov),
                Family::Knn { k } => knn_estimate(&d, labeled.responses(), k),
            }
        });
        match pred.and_then(|p| Ok(distance(&p, y)?)) {
            Ok(d) => total += d * d,
            Err(e) => return fail(hyperparam, e),
        }
    }
    Scored { mse: total / truth.len() as f64, hyperparam, error: None }
}

/// Fits and scores every requested method on one realization.
pub fn evaluate_realization(data: &RealizationData, config: &ExperimentConfig, j: usize) -> Vec<TrialResult> {
    let mut out = Vec::new();
    let labeled = &data.labeled;
    let wants = |m: Method| config.methods.contains(&m);

    if wants(Method::Nw) || wants(Method::Knn) {
        let start = Instant::now();
        let cv = cv_distance_matrix(labeled, None);
        let test: Vec<Result<Vec<f64>, RegressionError>> = data
            .test_features
            .iter()
            .map(|q| Ok(labeled.features().rows().map(|x| crate::manifold_graph::euclidean(x, q)).collect()))
            .collect();
        let shared = start.elapsed().as_secs_f64();
        for method in [Method::Nw, Method::Knn].into_iter().filter(|&m| wants(m)) {
            let start = Instant::now();
            let s = score(labeled, &cv, method.is_nw(), config, &test, &data.test_truth, false);
            let seconds = shared + start.elapsed().as_secs_f64();
            // supervised fits ignore unlabeled data; report them at every size
            for &m in &config.m {
                out.push(TrialResult {
                    realization: j,
                    method,
                    m,
                    mse: s.mse,
                    hyperparam: s.hyperparam.clone(),
                    seconds,
                    error: s.error.clone(),
                });
            }
        }
    }

    if wants(Method::SemiNw) || wants(Method::SemiKnn) {
        let graph_cfg = config.graph.to_config();
        for &m in &config.m {
            let start = Instant::now();
            let ctx = GraphContext::build(labeled.features(), &data.unlabeled[..m], &graph_cfg);
            let prepared = ctx.map(|ctx| {
                let cv = ctx.labeled_distances();
                let test: Vec<_> = data.test_features.par_iter().map(|q| ctx.query(q)).collect();
                (cv, test)
            });
            let shared = start.elapsed().as_secs_f64();
            for method in [Method::SemiNw, Method::SemiKnn].into_iter().filter(|&m| wants(m)) {
                let start = Instant::now();
                let s = match &prepared {
                    Ok((cv, test)) => score(labeled, cv, method.is_nw(), config, test, &data.test_truth, true),
                    Err(e) => Scored {
                        mse: f64::INFINITY,
                        hyperparam: String::new(),
                        error: Some(format!("{}: {e}", e.case())),
                    },
                };
                out.push(TrialResult {
                    realization: j,
                    method,
                    m,
                    mse: s.mse,
                    hyperparam: s.hyperparam,
                    seconds: shared + start.elapsed().as_secs_f64(),
                    error: s.error,
                });
            }
        }
    }
    out.sort_by(|a, b| a.method.cmp(&b.method).then(a.m.cmp(&b.m)));
    out
}

/// Mean and standard error per `(method, m)` over the realizations that
/// succeeded; `failed` counts the rest. If every trial failed, AMSE is `+∞`.
pub fn summarize(trials: &[TrialResult]) -> Vec<SummaryRow> {
    let mut keys: Vec<(Method, usize)> = trials.iter().map(|t| (t.method, t.m)).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(method, m)| {
            let all: Vec<f64> = trials.iter().filter(|t| t.method == method && t.m == m).map(|t| t.mse).collect();
            let vals: Vec<f64> = all.iter().copied().filter(|v| v.is_finite()).collect();
            let failed = all.len() - vals.len();
            let r = vals.len() as f64;
            let (amse, se) = match vals.len() {
                0 => (f64::INFINITY, f64::INFINITY),
                1 => (vals[0], 0.0),
                _ => {
                    let amse = vals.iter().sum::<f64>() / r;
                    let var = vals.iter().map(|v| (v - amse).powi(2)).sum::<f64>() / (r - 1.0);
                    (amse, (var / r).sqrt())
                }
            };
            SummaryRow { method, m, amse, se, failed }
        })
        .collect()
}

/// Runs every realization of `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput, Vec<ConfigIssue>> {
    config.validate()?;
    let noise = config.noise_level();
    let mut trials: Vec<TrialResult> = (0..config.realizations)
        .into_par_iter()
        .flat_map_iter(|j| {
            let data = draw_realization(config, noise, j);
            evaluate_realization(&data, config, j)
        })
        .collect();
    trials.sort_by(|a, b| a.realization.cmp(&b.realization).then(a.method.cmp(&b.method)).then(a.m.cmp(&b.m)));
    let summary = summarize(&trials);
    Ok(ExperimentOutput { noise, trials, summary })
}

/// Radius the default heuristic picks on the first realization's largest
/// feature set.
pub fn first_realization_radius(config: &ExperimentConfig) -> Option<f64> {
    let data = draw_realization(config, 0.0, 0);
    let rows: Vec<Vec<f64>> = data.labeled.feature_rows();
    let features = FeatureMatrix::stack(&rows, &data.unlabeled).ok()?;
    default_radius(&features).ok()
}

fn fmt_f64(x: f64) -> String {
    if x.is_infinite() {
        if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{x}")
    }
}

/// Per-trial CSV: `realization,method,m,mse,hyperparam,seconds,error`.
///
/// With `deterministic`, timings are written as 0 so reruns are
/// byte-identical.
pub fn write_trials_csv<W: io::Write>(w: W, trials: &[TrialResult], deterministic: bool) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["realization", "method", "m", "mse", "hyperparam", "seconds", "error"])?;
    for t in trials {
        let seconds = if deterministic { 0.0 } else { t.seconds };
        w.write_record([
            t.realization.to_string(),
            t.method.to_string(),
            t.m.to_string(),
            fmt_f64(t.mse),
            t.hyperparam.clone(),
            format!("{seconds:.6}"),
            t.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Summary CSV: `method,m,amse,se,failed`.
pub fn write_summary_csv<W: io::Write>(w: W, rows: &[SummaryRow]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(w);
    w.write_record(["method", "m", "amse", "se", "failed"])?;
    for r in rows {
        w.write_record([r.method.to_string(), r.m.to_string(), fmt_f64(r.amse), fmt_f64(r.se), r.failed.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
