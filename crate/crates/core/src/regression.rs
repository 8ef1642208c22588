//! Nadaraya–Watson and k-nearest-neighbor Fréchet regression, supervised
//! (Euclidean feature distance) and semi-supervised (graph distance), with
//! leave-one-out selection of the bandwidth or `k`.

use nalgebra::DMatrix;
use rayon::prelude::*;
use thiserror::Error;

use crate::manifold_graph::{
    build_graph, default_radius, euclidean, pairwise_euclidean, pairwise_labeled_distances, query_distances,
    FeatureMatrix, GraphError, GraphRule, NeighborGraph,
};
use crate::metric_space::{distance, frechet_mean, MetricError, MetricPoint, Space, WeightedSample};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegressionError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("no labeled point within the bandwidth")]
    EmptyNeighborhood,
    #[error("query is not connected to any labeled vertex")]
    IsolatedQuery,
    #[error("only {reachable} labeled points reachable, need {needed}")]
    NotEnoughReachable { needed: usize, reachable: usize },
    #[error("every candidate has infinite cross-validation loss")]
    AllCandidatesFailed,
    #[error("median nearest-neighbor distance is {0}; cannot build a bandwidth grid")]
    DegenerateDistances(f64),
    #[error("invalid regressor specification: {0}")]
    InvalidSpec(String),
    #[error("{features} feature rows but {responses} responses")]
    LengthMismatch { features: usize, responses: usize },
}

impl RegressionError {
    /// `module::Variant` label used in user-facing diagnostics; wrapped
    /// errors report their own module.
    pub fn case(&self) -> String {
        match self {
            RegressionError::Metric(e) => e.case(),
            RegressionError::Graph(e) => e.case(),
            other => format!("regression::{}", crate::variant_name(other)),
        }
    }
}

/// Epanechnikov kernel `¾(1 − u²)` on `[-1, 1]`.
pub fn kernel_eval(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Kernel {
    #[default]
    Epanechnikov,
}

impl Kernel {
    pub fn eval(self, u: f64) -> f64 {
        match self {
            Kernel::Epanechnikov => kernel_eval(u),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    Nw { bandwidth: f64 },
    Knn { k: usize },
}

impl Family {
    fn tie_key(&self) -> f64 {
        match *self {
            Family::Nw { bandwidth } => bandwidth,
            Family::Knn { k } => k as f64,
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Family::Nw { bandwidth } => format!("h={bandwidth}"),
            Family::Knn { k } => format!("k={k}"),
        }
    }
}

/// How the graph over all feature points is connected.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GraphChoice {
    /// Radius graph; `None` uses [`default_radius`].
    Radius(Option<f64>),
    Knn(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphConfig {
    pub rule: GraphChoice,
    pub fermat_s: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig { rule: GraphChoice::Radius(None), fermat_s: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mode {
    Supervised,
    SemiSupervised(GraphConfig),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressorSpec {
    pub family: Family,
    pub mode: Mode,
    pub kernel: Kernel,
}

impl RegressorSpec {
    pub fn new(family: Family, mode: Mode) -> Self {
        RegressorSpec { family, mode, kernel: Kernel::Epanechnikov }
    }

    fn validate(&self, n: usize) -> Result<(), RegressionError> {
        match self.family {
            Family::Nw { bandwidth } if !(bandwidth > 0.0) || !bandwidth.is_finite() => {
                Err(RegressionError::InvalidSpec(format!("bandwidth must be positive and finite, got {bandwidth}")))
            }
            Family::Knn { k } if k == 0 || k > n => {
                Err(RegressionError::InvalidSpec(format!("k must satisfy 1 <= k <= n = {n}, got {k}")))
            }
            _ => Ok(()),
        }
    }
}

/// Labeled features with responses from a single space.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    features: FeatureMatrix,
    responses: Vec<MetricPoint>,
}

impl LabeledSet {
    pub fn new(features: &[Vec<f64>], responses: Vec<MetricPoint>) -> Result<Self, RegressionError> {
        if features.len() != responses.len() {
            return Err(RegressionError::LengthMismatch { features: features.len(), responses: responses.len() });
        }
        if responses.is_empty() {
            return Err(RegressionError::InvalidSpec("labeled set is empty".into()));
        }
        let space = responses[0].space();
        for r in &responses {
            if r.space() != space {
                return Err(MetricError::VariantMismatch(space, r.space()).into());
            }
            r.validate()?;
        }
        let features = FeatureMatrix::new(features, features.len())?;
        Ok(LabeledSet { features, responses })
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.dim()
    }

    pub fn features(&self) -> &FeatureMatrix {
        &self.features
    }

    pub fn feature_rows(&self) -> Vec<Vec<f64>> {
        self.features.rows().map(<[f64]>::to_vec).collect()
    }

    pub fn responses(&self) -> &[MetricPoint] {
        &self.responses
    }

    pub fn space(&self) -> Space {
        self.responses[0].space()
    }
}

/// Graph over labeled + unlabeled features.
#[derive(Debug, Clone)]
pub struct GraphContext {
    pub features: FeatureMatrix,
    pub graph: NeighborGraph,
}

impl GraphContext {
    pub fn build(
        labeled: &FeatureMatrix,
        unlabeled: &[Vec<f64>],
        config: &GraphConfig,
    ) -> Result<Self, RegressionError> {
        let labeled_rows: Vec<Vec<f64>> = labeled.rows().map(<[f64]>::to_vec).collect();
        let features = FeatureMatrix::stack(&labeled_rows, unlabeled)?;
        let rule = match config.rule {
            GraphChoice::Radius(Some(r)) => GraphRule::Radius(r),
            GraphChoice::Radius(None) => GraphRule::Radius(default_radius(&features)?),
            GraphChoice::Knn(k) => GraphRule::Knn(k),
        };
        let graph = build_graph(&features, rule, config.fermat_s)?;
        Ok(GraphContext { features, graph })
    }

    pub fn query(&self, query: &[f64]) -> Result<Vec<f64>, RegressionError> {
        Ok(query_distances(&self.graph, &self.features, query)?.dists)
    }

    pub fn labeled_distances(&self) -> DMatrix<f64> {
        pairwise_labeled_distances(&self.graph)
    }
}

/// Weighted Fréchet mean with weights `K(dᵢ/h)`; infinite distances get weight 0.
///
/// The `h^{-p}/n` kernel normalization is dropped since it does not move the
/// minimizer.
pub fn nw_estimate(
    dists: &[f64],
    responses: &[MetricPoint],
    bandwidth: f64,
    kernel: Kernel,
) -> Result<MetricPoint, RegressionError> {
    nw_estimate_indexed(dists, responses, (0..responses.len()).collect(), bandwidth, kernel)
}

fn nw_estimate_indexed(
    dists: &[f64],
    responses: &[MetricPoint],
    index: Vec<usize>,
    bandwidth: f64,
    kernel: Kernel,
) -> Result<MetricPoint, RegressionError> {
    let weights: Vec<f64> =
        index.iter().map(|&i| if dists[i].is_finite() { kernel.eval(dists[i] / bandwidth) } else { 0.0 }).collect();
    if !weights.iter().any(|&w| w > 0.0) {
        return Err(RegressionError::EmptyNeighborhood);
    }
    let sample = WeightedSample::new(index.iter().map(|&i| &responses[i]), weights)?;
    Ok(frechet_mean(&sample)?)
}

/// Indices of the `k` smallest finite distances, ties to the lower index.
pub fn nearest_indices(dists: &[f64], k: usize) -> Result<Vec<usize>, RegressionError> {
    nearest_among(dists, (0..dists.len()).collect(), k)
}

fn nearest_among(dists: &[f64], candidates: Vec<usize>, k: usize) -> Result<Vec<usize>, RegressionError> {
    let mut finite: Vec<usize> = candidates.into_iter().filter(|&i| dists[i].is_finite()).collect();
    if finite.len() < k {
        return Err(RegressionError::NotEnoughReachable { needed: k, reachable: finite.len() });
    }
    let by = |a: &usize, b: &usize| dists[*a].total_cmp(&dists[*b]).then(a.cmp(b));
    if k < finite.len() {
        finite.select_nth_unstable_by(k, by);
        finite.truncate(k);
    }
    finite.sort_by(by);
    Ok(finite)
}

/// Unweighted Fréchet mean of the `k` nearest responses.
pub fn knn_estimate(dists: &[f64], responses: &[MetricPoint], k: usize) -> Result<MetricPoint, RegressionError> {
    let idx = nearest_indices(dists, k)?;
    let sample = WeightedSample::uniform(idx.iter().map(|&i| &responses[i]))?;
    Ok(frechet_mean(&sample)?)
}

fn estimate(
    family: Family,
    kernel: Kernel,
    dists: &[f64],
    responses: &[MetricPoint],
) -> Result<MetricPoint, RegressionError> {
    match family {
        Family::Nw { bandwidth } => nw_estimate(dists, responses, bandwidth, kernel),
        Family::Knn { k } => knn_estimate(dists, responses, k),
    }
}

#[derive(Debug, Clone)]
pub struct FittedRegressor {
    spec: RegressorSpec,
    labeled: LabeledSet,
    context: Option<GraphContext>,
}

impl FittedRegressor {
    /// Fits `spec`; `unlabeled` features are used only in semi-supervised mode.
    pub fn fit(spec: RegressorSpec, labeled: LabeledSet, unlabeled: &[Vec<f64>]) -> Result<Self, RegressionError> {
        spec.validate(labeled.len())?;
        let context = match &spec.mode {
            Mode::Supervised => None,
            Mode::SemiSupervised(cfg) => Some(GraphContext::build(labeled.features(), unlabeled, cfg)?),
        };
        Ok(FittedRegressor { spec, labeled, context })
    }

    /// Fits with a prebuilt graph context (semi-supervised mode only).
    pub fn with_context(
        spec: RegressorSpec,
        labeled: LabeledSet,
        context: GraphContext,
    ) -> Result<Self, RegressionError> {
        spec.validate(labeled.len())?;
        if !matches!(spec.mode, Mode::SemiSupervised(_)) {
            return Err(RegressionError::InvalidSpec("graph context given for a supervised spec".into()));
        }
        Ok(FittedRegressor { spec, labeled, context: Some(context) })
    }

    pub fn spec(&self) -> &RegressorSpec {
        &self.spec
    }

    pub fn labeled(&self) -> &LabeledSet {
        &self.labeled
    }

    pub fn context(&self) -> Option<&GraphContext> {
        self.context.as_ref()
    }

    /// Euclidean or graph distances from `query` to every labeled point.
    pub fn distances(&self, query: &[f64]) -> Result<Vec<f64>, RegressionError> {
        if query.len() != self.labeled.dim() {
            return Err(GraphError::DimensionMismatch { expected: self.labeled.dim(), found: query.len() }.into());
        }
        match &self.context {
            None => Ok(self.labeled.features().rows().map(|x| euclidean(x, query)).collect()),
            Some(ctx) => ctx.query(query),
        }
    }

    pub fn predict(&self, query: &[f64]) -> Result<MetricPoint, RegressionError> {
        let dists = self.distances(query)?;
        if self.context.is_some() && dists.iter().all(|d| d.is_infinite()) {
            return Err(RegressionError::IsolatedQuery);
        }
        estimate(self.spec.family, self.spec.kernel, &dists, self.labeled.responses())
    }
}

/// Distance matrix among labeled points used by leave-one-out CV.
pub fn cv_distance_matrix(labeled: &LabeledSet, context: Option<&GraphContext>) -> DMatrix<f64> {
    match context {
        None => pairwise_euclidean(labeled.features()),
        Some(ctx) => ctx.labeled_distances(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvTable {
    pub candidates: Vec<Family>,
    /// Mean squared leave-one-out error per candidate; `+∞` if any fold failed.
    pub losses: Vec<f64>,
}

/// Leave-one-out loss of one candidate given labeled-to-labeled distances.
///
/// The held-out point keeps its place in `distances` (it is still a graph
/// vertex); only its label is withheld.
pub fn loocv_loss(labeled: &LabeledSet, distances: &DMatrix<f64>, family: Family, kernel: Kernel) -> f64 {
    let n = labeled.len();
    let responses = labeled.responses();
    let mut total = 0.0;
    for i in 0..n {
        let row: Vec<f64> = distances.row(i).iter().copied().collect();
        let others: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        let pred = match family {
            Family::Nw { bandwidth } => nw_estimate_indexed(&row, responses, others, bandwidth, kernel),
            Family::Knn { k } => nearest_among(&row, others, k).and_then(|idx| {
                let s = WeightedSample::uniform(idx.iter().map(|&j| &responses[j]))?;
                Ok(frechet_mean(&s)?)
            }),
        };
        match pred.ok().and_then(|p| distance(&p, &responses[i]).ok()) {
            Some(d) => total += d * d,
            None => return f64::INFINITY,
        }
    }
    total / n as f64
}

/// Picks the candidate with the smallest leave-one-out loss; ties go to the
/// smaller bandwidth or `k`.
pub fn loocv_select(
    labeled: &LabeledSet,
    candidates: &[Family],
    distances: &DMatrix<f64>,
    kernel: Kernel,
) -> Result<(Family, CvTable), RegressionError> {
    if candidates.is_empty() {
        return Err(RegressionError::InvalidSpec("empty candidate grid".into()));
    }
    if labeled.len() < 2 {
        return Err(RegressionError::InvalidSpec("leave-one-out needs at least two labeled points".into()));
    }
    if distances.shape() != (labeled.len(), labeled.len()) {
        return Err(RegressionError::InvalidSpec("distance matrix does not match the labeled set".into()));
    }
    let losses: Vec<f64> = candidates.par_iter().map(|&c| loocv_loss(labeled, distances, c, kernel)).collect();
    let mut best: Option<usize> = None;
    for (i, &loss) in losses.iter().enumerate() {
        if !loss.is_finite() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let better =
                    loss < losses[b] || (loss == losses[b] && candidates[i].tie_key() < candidates[b].tie_key());
                Some(if better { i } else { b })
            }
        };
    }
    let best = best.ok_or(RegressionError::AllCandidatesFailed)?;
    Ok((candidates[best], CvTable { candidates: candidates.to_vec(), losses }))
}

/// Median over labeled points of the distance to their nearest other point.
pub fn median_nn_distance(distances: &DMatrix<f64>) -> Result<f64, RegressionError> {
    let n = distances.nrows();
    if n < 2 {
        return Err(RegressionError::InvalidSpec("need at least two labeled points".into()));
    }
    let mut mins: Vec<f64> =
        (0..n).map(|i| (0..n).filter(|&j| j != i).map(|j| distances[(i, j)]).fold(f64::INFINITY, f64::min)).collect();
    mins.sort_by(f64::total_cmp);
    let h0 = if n % 2 == 1 { mins[n / 2] } else { 0.5 * (mins[n / 2 - 1] + mins[n / 2]) };
    Ok(h0)
}

/// `{5^0.1·h₀, 5^0.2·h₀, …, 5·h₀}` with `h₀` the median nearest-neighbor
/// distance.
pub fn default_bandwidth_grid(distances: &DMatrix<f64>) -> Result<Vec<f64>, RegressionError> {
    let h0 = median_nn_distance(distances)?;
    if !(h0 > 0.0) || !h0.is_finite() {
        return Err(RegressionError::DegenerateDistances(h0));
    }
    Ok(bandwidth_grid(h0))
}

pub fn bandwidth_grid(h0: f64) -> Vec<f64> {
    (1..=10).map(|i| 5f64.powf(i as f64 / 10.0) * h0).collect()
}

/// `{1, …, 10}`, capped at `n − 1` so every fold has enough neighbors.
pub fn default_knn_grid(n: usize) -> Vec<usize> {
    (1..=10.min(n.saturating_sub(1)).max(1)).collect()
}
