use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use frechet_core::manifold_graph::GraphError;
use frechet_core::metric_space::MetricError;
use frechet_core::regression::RegressionError;

/// Error text prefixed with the originating `module::Variant`.
pub trait Cased {
    fn cased(&self) -> String;
}

macro_rules! cased {
    ($($t:ty),*) => {$(
        impl Cased for $t {
            fn cased(&self) -> String {
                format!("{}: {self}", self.case())
            }
        }
    )*};
}

cased!(MetricError, GraphError, RegressionError);

/// Turns a core error into an `anyhow` error that names its case.
pub fn core<E: Cased>(e: E) -> anyhow::Error {
    anyhow::anyhow!(e.cased())
}

/// File at `path`, or stdout when `path` is `None`.
pub fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("cannot create {}", p.display()))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

/// `# frechet <version> <timestamp>` comment line, skipped when deterministic.
pub fn stamp(w: &mut dyn Write, deterministic: bool) -> io::Result<()> {
    if deterministic {
        return Ok(());
    }
    writeln!(
        w,
        "# frechet {} {}",
        env!("CARGO_PKG_VERSION"),
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    )
}
