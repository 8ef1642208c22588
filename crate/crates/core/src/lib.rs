//! Semi-supervised Fréchet regression.
//!
//! Responses live in a metric space ([`metric_space`]); features are assumed
//! to lie near a low-dimensional manifold whose geodesic distance is
//! approximated by shortest paths on a neighbor graph over labeled and
//! unlabeled features ([`manifold_graph`]). Nadaraya–Watson and kNN Fréchet
//! regressors ([`regression`]) then weight labeled responses by that graph
//! distance instead of the Euclidean one. [`simulation`] holds the Swiss-roll
//! benchmark designs.

pub mod manifold_graph;
pub mod metric_space;
pub mod regression;
pub mod simulation;

/// Name of an enum variant taken from its `Debug` form.
pub(crate) fn variant_name<T: std::fmt::Debug>(value: &T) -> String {
    format!("{value:?}").chars().take_while(|c| c.is_alphanumeric() || *c == '_').collect()
}
