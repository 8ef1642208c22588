use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use frechet_core::simulation::{
    first_realization_radius, run_experiment, signal_sd, write_summary_csv, write_trials_csv, ExperimentConfig,
    GraphKind,
};
use serde_json::json;

use crate::output::{sink, stamp};
use crate::Global;

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Experiment config (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Directory for trials.csv, summary.csv and run.json.
    #[arg(long, default_value = "results")]
    pub out_dir: PathBuf,
    /// Print the resolved seed, noise level and graph radius, then exit.
    #[arg(long)]
    pub dry_run: bool,
}

/// JSON pointer for a deserialization path.
fn pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    match serde_path_to_error::deserialize::<_, ExperimentConfig>(de) {
        Ok(c) => Ok(c),
        Err(e) => bail!("{}: config error at {}: {}", path.display(), pointer(e.path()), e.inner()),
    }
}

fn validated(path: &Path, config: &ExperimentConfig) -> Result<()> {
    if let Err(issues) = config.validate() {
        for issue in &issues {
            eprintln!("  {issue}");
        }
        bail!("{}: {} config problem(s) [simulation::ConfigIssue]", path.display(), issues.len());
    }
    Ok(())
}

fn describe_noise(config: &ExperimentConfig, noise: f64) -> String {
    if config.noiseless {
        "0 (noiseless)".into()
    } else if config.setting.uses_snr() {
        format!(
            "sigma = {noise} (snr {}, pooled signal sd {})",
            config.snr.unwrap_or(f64::NAN),
            signal_sd(config.setting, config.latent)
        )
    } else {
        format!("tangent sd = {noise}")
    }
}

fn describe_graph(config: &ExperimentConfig) -> String {
    let g = &config.graph;
    match (g.rule, g.radius) {
        (GraphKind::Knn, _) => format!("knn graph, k = {}", g.k),
        (GraphKind::R, Some(r)) => format!("r = {r} (fixed)"),
        (GraphKind::R, None) => match first_realization_radius(config) {
            Some(r) => format!("r = {r} (default radius, realization 0, all labeled and unlabeled points)"),
            None => "r undefined: realization 0 has coincident points".into(),
        },
    }
}

pub fn run(args: &SimulateArgs, global: &Global) -> Result<()> {
    let mut config = load_config(&args.config)?;
    if let Some(seed) = global.seed {
        config.seed = seed;
    }
    validated(&args.config, &config)?;
    let noise = config.noise_level();

    if args.dry_run {
        let mut w = sink(None)?;
        writeln!(w, "seed: {}", config.seed)?;
        writeln!(w, "noise: {}", describe_noise(&config, noise))?;
        writeln!(w, "graph: {}", describe_graph(&config))?;
        writeln!(w, "config: {}", serde_json::to_string_pretty(&config)?)?;
        w.flush()?;
        return Ok(());
    }

    let out = run_experiment(&config).map_err(|issues| {
        anyhow::anyhow!(
            "{} config problem(s) [simulation::ConfigIssue]: {}",
            issues.len(),
            issues.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
        )
    })?;

    fs::create_dir_all(&args.out_dir).with_context(|| format!("cannot create {}", args.out_dir.display()))?;
    let trials_path = args.out_dir.join("trials.csv");
    let mut w = sink(Some(&trials_path))?;
    stamp(&mut w, global.deterministic)?;
    write_trials_csv(&mut w, &out.trials, global.deterministic)?;
    w.flush()?;

    let summary_path = args.out_dir.join("summary.csv");
    let mut w = sink(Some(&summary_path))?;
    stamp(&mut w, global.deterministic)?;
    write_summary_csv(&mut w, &out.summary)?;
    w.flush()?;

    let mut meta = json!({
        "version": env!("CARGO_PKG_VERSION"),
        "seed": config.seed,
        "noise": out.noise,
        "noise_description": describe_noise(&config, out.noise),
        "config": config,
    });
    if !global.deterministic {
        meta["generated"] = json!(chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true));
    }
    fs::write(args.out_dir.join("run.json"), serde_json::to_string_pretty(&meta)? + "\n")?;

    let mut w = sink(None)?;
    writeln!(w, "{:<9} {:>6} {:>12} {:>10} {:>7}", "method", "m", "amse", "se", "failed")?;
    for r in &out.summary {
        writeln!(w, "{:<9} {:>6} {:>12.6} {:>10.6} {:>7}", r.method.to_string(), r.m, r.amse, r.se, r.failed)?;
    }
    w.flush()?;
    let failed: usize = out.summary.iter().map(|r| r.failed).sum();
    if failed > 0 {
        eprintln!("{failed} trial(s) failed; see the error column of {}", trials_path.display());
    }
    Ok(())
}
