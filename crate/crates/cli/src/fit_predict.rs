use std::path::PathBuf;

use anyhow::{bail, Result};
use clap::Args;
use frechet_core::regression::{
    cv_distance_matrix, default_bandwidth_grid, default_knn_grid, loocv_select, Family, FittedRegressor, GraphContext,
    Kernel, LabeledSet, Mode, RegressorSpec,
};
use frechet_core::simulation::Method;
use rayon::prelude::*;

use crate::output::{core, sink, stamp, Cased};
use crate::table::{read_feature_columns, read_features, read_labeled, ResponseKind};
use crate::{cv_f64, cv_usize, Choice, Global, GraphOpts};

#[derive(Args, Debug)]
pub struct FitPredictArgs {
    /// Labeled CSV with feature columns x1..xp and response columns.
    #[arg(long)]
    pub train: PathBuf,
    /// Unlabeled feature CSV (semi-supervised methods only).
    #[arg(long)]
    pub unlabeled: Option<PathBuf>,
    /// Query feature CSV; an `id` column, if present, labels the output rows.
    #[arg(long)]
    pub query: PathBuf,
    /// Response space of the training labels.
    #[arg(long, value_enum)]
    pub response: ResponseKind,
    /// nw, knn, semi-nw or semi-knn.
    #[arg(long)]
    pub method: Method,
    /// Kernel bandwidth for nw methods: a number or `cv`.
    #[arg(long, default_value = "cv", value_parser = cv_f64)]
    pub bandwidth: Choice<f64>,
    /// Neighbors for knn methods: a number or `cv`.
    #[arg(long, default_value = "cv", value_parser = cv_usize)]
    pub k: Choice<usize>,
    #[command(flatten)]
    pub graph: GraphOpts,
    /// Output CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn family(method: Method, bandwidth: Choice<f64>, k: Choice<usize>) -> Option<Family> {
    match (method.is_nw(), bandwidth, k) {
        (true, Choice::Fixed(h), _) => Some(Family::Nw { bandwidth: h }),
        (false, _, Choice::Fixed(k)) => Some(Family::Knn { k }),
        _ => None,
    }
}

pub fn run(args: &FitPredictArgs, global: &Global) -> Result<()> {
    let train = read_labeled(&args.train, args.response)?;
    let labeled = LabeledSet::new(&train.features, train.responses).map_err(core)?;
    let unlabeled = match &args.unlabeled {
        Some(p) if args.method.is_semi() => read_feature_columns(p)?,
        Some(p) => {
            eprintln!("note: {} is ignored by the supervised method {}", p.display(), args.method);
            Vec::new()
        }
        None => Vec::new(),
    };
    let (ids, queries) = read_features(&args.query)?;
    if let Some(q) = queries.first() {
        if q.len() != labeled.dim() {
            bail!(
                "{}: queries have {} features but training rows have {}",
                args.query.display(),
                q.len(),
                labeled.dim()
            );
        }
    }

    let context = if args.method.is_semi() {
        let ctx = GraphContext::build(labeled.features(), &unlabeled, &args.graph.to_config()).map_err(core)?;
        let stats = ctx.graph.stats();
        eprintln!(
            "graph: {} vertices, {} edges, {} component(s), {} isolated",
            stats.vertices, stats.edges, stats.components, stats.isolated
        );
        Some(ctx)
    } else {
        None
    };

    let chosen = match family(args.method, args.bandwidth, args.k) {
        Some(f) => f,
        None => {
            let distances = cv_distance_matrix(&labeled, context.as_ref());
            let candidates: Vec<Family> = if args.method.is_nw() {
                default_bandwidth_grid(&distances)
                    .map_err(core)?
                    .into_iter()
                    .map(|bandwidth| Family::Nw { bandwidth })
                    .collect()
            } else {
                default_knn_grid(labeled.len()).into_iter().map(|k| Family::Knn { k }).collect()
            };
            let (best, table) = loocv_select(&labeled, &candidates, &distances, Kernel::Epanechnikov).map_err(core)?;
            for (c, loss) in table.candidates.iter().zip(&table.losses) {
                eprintln!("cv: {:<28} loss {loss}", c.describe());
            }
            best
        }
    };
    eprintln!("selected: {}", chosen.describe());

    let mode = match &context {
        Some(_) => Mode::SemiSupervised(args.graph.to_config()),
        None => Mode::Supervised,
    };
    let spec = RegressorSpec::new(chosen, mode);
    let model = match context {
        Some(ctx) => FittedRegressor::with_context(spec, labeled, ctx),
        None => FittedRegressor::fit(spec, labeled, &[]),
    }
    .map_err(core)?;

    let predictions: Vec<_> = queries.par_iter().map(|q| model.predict(q)).collect();

    let mut sink = sink(args.out.as_deref())?;
    stamp(&mut sink, global.deterministic)?;
    let mut w = csv::Writer::from_writer(sink);
    w.write_record(["query_id", "response", "error"])?;
    let mut failed = 0;
    for (id, pred) in ids.iter().zip(&predictions) {
        match pred {
            Ok(p) => w.write_record([id.as_str(), &serde_json::to_string(p)?, ""])?,
            Err(e) => {
                failed += 1;
                w.write_record([id.as_str(), "", &e.cased()])?
            }
        }
    }
    w.flush()?;
    if failed > 0 {
        eprintln!("{failed} of {} queries could not be predicted; see the error column", ids.len());
    }
    Ok(())
}
