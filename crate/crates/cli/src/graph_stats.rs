use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use frechet_core::manifold_graph::{build_graph, default_radius, FeatureMatrix, GraphRule};

use crate::output::{core, sink, stamp};
use crate::table::read_feature_columns;
use crate::{Choice, Global, GraphArg, GraphOpts};

#[derive(Args, Debug)]
pub struct GraphStatsArgs {
    /// Feature CSV with columns x1..xp; other columns are ignored.
    #[arg(long)]
    pub features: PathBuf,
    #[command(flatten)]
    pub graph: GraphOpts,
    /// Also write the edge list (src,dst,weight) here.
    #[arg(long)]
    pub edges: Option<PathBuf>,
    /// Output CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn run(args: &GraphStatsArgs, global: &Global) -> Result<()> {
    let rows = read_feature_columns(&args.features)?;
    if rows.is_empty() {
        bail!("{}: no feature rows", args.features.display());
    }
    let features = FeatureMatrix::new(&rows, rows.len()).map_err(core)?;
    let rule = match (args.graph.graph, args.graph.radius) {
        (GraphArg::R, Choice::Fixed(r)) => GraphRule::Radius(r),
        (GraphArg::R, Choice::Auto) => GraphRule::Radius(default_radius(&features).map_err(core)?),
        (GraphArg::Knn, _) => GraphRule::Knn(args.graph.graph_k),
    };
    let graph = build_graph(&features, rule, args.graph.fermat_s).map_err(core)?;

    if let Some(path) = &args.edges {
        let w = sink(Some(path))?;
        graph.write_edge_csv(w).with_context(|| format!("cannot write {}", path.display()))?;
    }

    let s = graph.stats();
    let (rule_name, param, value) = match rule {
        GraphRule::Radius(r) => ("r", "radius", r.to_string()),
        GraphRule::Knn(k) => ("knn", "k", k.to_string()),
    };
    let mut out = sink(args.out.as_deref())?;
    stamp(&mut out, global.deterministic)?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["statistic", "value"])?;
    let rows: [(&str, String); 11] = [
        ("vertices", s.vertices.to_string()),
        ("edges", s.edges.to_string()),
        ("components", s.components.to_string()),
        ("isolated", s.isolated.to_string()),
        ("min_degree", s.min_degree.to_string()),
        ("max_degree", s.max_degree.to_string()),
        ("mean_degree", s.mean_degree.to_string()),
        ("rule", rule_name.to_string()),
        (param, value),
        ("fermat_s", args.graph.fermat_s.to_string()),
        ("dim", features.dim().to_string()),
    ];
    for (k, v) in &rows {
        w.write_record([*k, v.as_str()])?;
    }
    w.flush()?;
    Ok(())
}
