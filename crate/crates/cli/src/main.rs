// SPDX-License-Identifier: MIT OR Apache-2.0

//! `pretreat`: command-line front end of the pre-treatment pipeline.

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use pretreat::pipeline::artifacts::Staging;
use pretreat::pipeline::{self, EpsilonMode, MinPtsMode, PipelineConfig};
use pretreat::series::{generate_synthetic, write_csv, write_ground_truth, SyntheticSpec};
use pretreat::sigma::Spread;
use pretreat::{Error, ErrorKind, Result};

#[derive(Parser)]
#[command(name = "pretreat", version, about = "Outlier pre-treatment for multi-sensor plant time series")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every stage and write all tables, the report and figures.
    Pipeline(RunArgs),
    /// Generate a synthetic dataset with a ground-truth sidecar.
    Synth(SynthArgs),
    /// Detect change points only.
    Segment(RunArgs),
    /// Change points plus piece-wise 3σ cleaning.
    Clean(RunArgs),
    /// PCA, T² and outlier periods on an already cleaned dataset.
    Pca(RunArgs),
    /// DBSCAN on an outlier-map table.
    Cluster(RunArgs),
    /// Redraw the figures of a finished run directory.
    Plot(PlotArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML file with any of the settings below; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Ground-truth sidecar written by `synth`.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Samples per step of the change-point search.
    #[arg(long)]
    block: Option<usize>,
    /// Minimum piece length.
    #[arg(long)]
    lmin: Option<usize>,
    #[arg(long)]
    min_score: Option<f64>,
    #[arg(long, value_parser = ["std", "mad"])]
    spread: Option<String>,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    /// `auto` or a radius.
    #[arg(long)]
    eps: Option<String>,
    /// `auto` or a count.
    #[arg(long)]
    min_pts: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_figures: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// TOML generator spec; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PlotArgs {
    /// Run directory holding the report and tables.
    #[arg(long)]
    out: PathBuf,
}

impl RunArgs {
    fn config(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(v) = &self.input {
            cfg.input = v.clone();
        }
        if let Some(v) = &self.out {
            cfg.out = v.clone();
        }
        if let Some(v) = &self.truth {
            cfg.truth = Some(v.clone());
        }
        if let Some(v) = self.block {
            cfg.block_size = v;
        }
        if let Some(v) = self.lmin {
            cfg.min_piece_len = v;
        }
        if let Some(v) = self.min_score {
            cfg.min_score = v;
        }
        if let Some(v) = &self.spread {
            cfg.spread = v.parse::<Spread>()?;
        }
        if let Some(v) = self.components {
            cfg.n_components = v;
        }
        if let Some(v) = self.alpha {
            cfg.alpha = v;
        }
        if let Some(v) = &self.eps {
            cfg.epsilon = v.parse::<EpsilonMode>()?;
        }
        if let Some(v) = &self.min_pts {
            cfg.min_pts = v.parse::<MinPtsMode>()?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if self.no_figures {
            cfg.render = false;
        }
        if cfg.input.as_os_str().is_empty() {
            return Err(Error::Config("no input given; pass --input or set `input` in the config file".into()));
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn synth(args: &SynthArgs) -> Result<Vec<PathBuf>> {
    let mut spec = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            toml::from_str::<SyntheticSpec>(&text).map_err(|e| Error::Config(e.message().to_owned()))?
        }
        None => SyntheticSpec::default(),
    };
    if let Some(v) = args.samples {
        spec.n_samples = v;
    }
    if let Some(v) = args.seed {
        spec.seed = v;
    }
    spec.validate().map_err(|e| match e {
        Error::Validation(m) => Error::Config(m),
        e => e,
    })?;
    let (dataset, truth) = generate_synthetic(&spec)?;
    let mut stage = Staging::new(&args.out)?;
    stage.write_with("data.csv", |w| write_csv(&dataset, w))?;
    stage.write_with("truth.csv", |w| write_ground_truth(&truth, w))?;
    stage.commit()
}

fn list(paths: &[PathBuf]) {
    let mut out = std::io::stdout().lock();
    for p in paths {
        let _ = writeln!(out, "wrote {}", p.display());
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pipeline(args) => {
            let cfg = args.config()?;
            let report = pipeline::run_pipeline(&cfg)?;
            let mut out = std::io::stdout().lock();
            for w in &report.run.warnings {
                let _ = writeln!(std::io::stderr(), "warning: {w}");
            }
            let _ = writeln!(
                out,
                "{} samples x {} signals; {} change points, {} short-term outliers",
                report.run.n_samples,
                report.run.n_signals,
                report.signals.iter().map(|s| s.n_changepoints).sum::<usize>(),
                report.signals.iter().map(|s| s.n_outliers).sum::<usize>()
            );
            let _ = writeln!(
                out,
                "T2 limit {:.4}: {} rows flagged in {} periods; {} clusters, {} noise points",
                report.pca.t_alpha,
                report.pca.n_flagged,
                report.periods.len(),
                report.clusters.n_clusters,
                report.clusters.n_noise
            );
            let _ = writeln!(out, "results in {}", cfg.out.display());
        }
        Command::Synth(args) => list(&synth(&args)?),
        Command::Segment(args) => list(&pipeline::run_segment(&args.config()?)?),
        Command::Clean(args) => list(&pipeline::run_clean(&args.config()?)?),
        Command::Pca(args) => list(&pipeline::run_pca(&args.config()?)?),
        Command::Cluster(args) => list(&pipeline::run_cluster(&args.config()?)?),
        Command::Plot(args) => list(&pipeline::run_plot(&args.out)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 2,
                ErrorKind::Input => 3,
                ErrorKind::Numeric => 4,
            })
        }
    }
}
