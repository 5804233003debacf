//! Command-line surface. Exit codes: 0 ok, 1 partial or failed, 2 config error.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use super::{
    cmd_analyze, cmd_baseline, cmd_ingest_human, cmd_report, cmd_run, cmd_viz, AnalyzeOptions, BaselineOptions,
    EmbeddingFormat, ExperimentConfig, IngestOptions, SystemInput, SystemSource, VizOptions,
};
use crate::corpus::load_stimulus_set;
use crate::dsm::DEFAULT_FILL;
use crate::error::{Error, Result};
use crate::stats::PValueMethod;
use crate::viz::TsneParams;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "repalign", version, about = "Pairwise similarity elicitation and representational alignment")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run (or resume) an experiment described by a config file.
    Run(RunArgs),
    /// Compare systems and write alignment, ICC and inter-subject reports.
    Analyze(AnalyzeArgs),
    /// Build a cosine-distance DSM from an embedding file.
    Baseline(BaselineArgs),
    /// Turn a human ratings CSV into per-participant and group DSMs.
    IngestHuman(IngestArgs),
    /// Draw heatmaps, histograms and an optional cohort scatter.
    Viz(VizArgs),
    /// Token, cost and noncompliance accounting for a run.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub base_seed: Option<u64>,
    /// Replaces the config's temperature list; repeatable.
    #[arg(long = "temperature")]
    pub temperatures: Vec<f64>,
    #[arg(long)]
    pub parallel_participants: Option<usize>,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Validate and exit without running.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Args, Clone)]
pub struct SystemArgs {
    /// NAME=DIR of a run with a manifest; repeatable.
    #[arg(long = "run", value_name = "NAME=DIR")]
    pub runs: Vec<String>,
    /// NAME=DIR holding group.csv and dsms/; repeatable.
    #[arg(long = "cohort", value_name = "NAME=DIR")]
    pub cohorts: Vec<String>,
    /// NAME=FILE of a group-level DSM CSV; repeatable.
    #[arg(long = "dsm", value_name = "NAME=FILE")]
    pub dsms: Vec<String>,
}

#[derive(Debug, Args, Clone)]
pub struct TsneArgs {
    /// Lay out all participants with T-SNE.
    #[arg(long)]
    pub tsne: bool,
    #[arg(long, default_value_t = 30.0)]
    pub perplexity: f64,
    #[arg(long, default_value_t = 5000)]
    pub max_iter: usize,
    #[arg(long, default_value_t = 0)]
    pub tsne_seed: u64,
}

impl TsneArgs {
    fn params(&self) -> Option<TsneParams> {
        self.tsne.then(|| TsneParams {
            perplexity: self.perplexity,
            max_iter: self.max_iter,
            seed: self.tsne_seed,
            ..TsneParams::default()
        })
    }
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[command(flatten)]
    pub systems: SystemArgs,
    /// Stimulus table for the within/between-category split.
    #[arg(long)]
    pub stimuli: Option<PathBuf>,
    /// Bonferroni family size; default C(#systems, 2).
    #[arg(long = "m-comparisons")]
    pub m_comparisons: Option<usize>,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// auto, t, exhaustive, or permutation.
    #[arg(long, default_value = "auto")]
    pub p_method: String,
    #[arg(long, default_value_t = PValueMethod::DEFAULT_PERMUTATIONS)]
    pub permutations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub tsne: TsneArgs,
    #[arg(long, default_value_t = DEFAULT_FILL)]
    pub fill: f64,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    /// word-vectors or csv; inferred from the extension by default.
    #[arg(long)]
    pub format: Option<String>,
    /// Take labels from a stimulus table.
    #[arg(long, conflicts_with = "labels")]
    pub stimuli: Option<PathBuf>,
    /// Comma-separated labels.
    #[arg(long, value_delimiter = ',')]
    pub labels: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
    /// Fail when a label has no vector.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub ratings: PathBuf,
    /// Stimulus table fixing the item order.
    #[arg(long)]
    pub stimuli: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[command(flatten)]
    pub systems: SystemArgs,
    #[command(flatten)]
    pub tsne: TsneArgs,
    #[arg(long, default_value_t = DEFAULT_FILL)]
    pub fill: f64,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub prices: Option<PathBuf>,
}

fn name_value(s: &str) -> Result<(String, PathBuf)> {
    match s.split_once('=') {
        Some((n, p)) if !n.is_empty() && !p.is_empty() => Ok((n.to_string(), PathBuf::from(p))),
        _ => Err(Error::Config(format!("expected NAME=PATH, got {s:?}"))),
    }
}

impl SystemArgs {
    fn inputs(&self) -> Result<Vec<SystemInput>> {
        let mut out = Vec::new();
        for r in &self.runs {
            let (n, p) = name_value(r)?;
            out.push(SystemInput::new(n, SystemSource::Run(p)));
        }
        for c in &self.cohorts {
            let (n, p) = name_value(c)?;
            out.push(SystemInput::new(n, SystemSource::Cohort(p)));
        }
        for d in &self.dsms {
            let (n, p) = name_value(d)?;
            out.push(SystemInput::new(n, SystemSource::Dsm(p)));
        }
        Ok(out)
    }
}

fn p_method(name: &str, permutations: usize, seed: u64) -> Result<PValueMethod> {
    match name {
        "auto" => Ok(PValueMethod::Auto { seed }),
        "t" | "t_approx" => Ok(PValueMethod::TApprox),
        "exhaustive" => Ok(PValueMethod::Exhaustive),
        "permutation" => Ok(PValueMethod::Permutation {
            n_perm: permutations,
            seed,
        }),
        other => Err(Error::Config(format!("unknown p-value method {other:?}"))),
    }
}

fn run(args: RunArgs) -> Result<i32> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(d) = args.output_dir {
        cfg.output_dir = std::env::current_dir().map(|c| c.join(&d)).unwrap_or(d);
    }
    if let Some(s) = args.base_seed {
        cfg.base_seed = s;
    }
    if !args.temperatures.is_empty() {
        cfg.temperatures = args.temperatures;
    }
    if let Some(p) = args.parallel_participants {
        cfg.backend.parallel_participants = p;
    }
    if let Some(m) = args.model {
        cfg.backend.model = m;
    }
    if let Some(e) = args.endpoint {
        cfg.backend.endpoint = Some(e);
    }
    if args.check {
        cfg.validate()?;
        println!("config ok");
        return Ok(EXIT_OK);
    }
    let s = cmd_run(&cfg)?;
    let entries: Vec<_> = s.manifest.runs.iter().flat_map(|r| &r.participants).collect();
    let done = entries.iter().filter(|p| p.status == super::ParticipantStatus::Complete).count();
    println!(
        "{}: {done}/{} participants complete, {} new requests, manifest {}",
        s.manifest_dir.display(),
        entries.len(),
        s.new_requests,
        s.manifest.hash
    );
    Ok(if s.complete { EXIT_OK } else { EXIT_PARTIAL })
}

fn analyze(args: AnalyzeArgs) -> Result<i32> {
    let mut opts = AnalyzeOptions::new(args.systems.inputs()?, args.out);
    opts.stimuli = args.stimuli;
    opts.m_comparisons = args.m_comparisons;
    opts.alpha = args.alpha;
    opts.method = p_method(&args.p_method, args.permutations, args.seed)?;
    opts.tsne = args.tsne.params();
    opts.fill = args.fill;
    opts.bins = args.bins;
    let report = cmd_analyze(&opts)?;
    let unavailable = report
        .tables
        .iter()
        .flat_map(|t| &t.cells)
        .filter(|c| c.unavailable.is_some())
        .count();
    println!(
        "{} systems, m = {}, {unavailable} unavailable cells; wrote {}",
        report.inputs.len(),
        report.m_comparisons,
        opts.out_dir.join("report.md").display()
    );
    Ok(EXIT_OK)
}

fn baseline(args: BaselineArgs) -> Result<i32> {
    let labels = match &args.stimuli {
        Some(p) => load_stimulus_set(p, None)?.ids(),
        None => args.labels.clone(),
    };
    let format = match args.format.as_deref() {
        None => None,
        Some("word-vectors" | "word_vectors" | "txt") => Some(EmbeddingFormat::WordVectors),
        Some("csv") => Some(EmbeddingFormat::Csv),
        Some(other) => return Err(Error::Config(format!("unknown embedding format {other:?}"))),
    };
    let s = cmd_baseline(&BaselineOptions {
        embeddings: args.embeddings,
        format,
        labels,
        out: args.out.clone(),
        strict: args.strict,
    })?;
    println!(
        "{}: {} items{}{}",
        args.out.display(),
        s.items,
        if s.halved { " (halved: negative cosines)" } else { "" },
        if s.missing.is_empty() {
            String::new()
        } else {
            format!("; missing {}", s.missing.join(", "))
        }
    );
    Ok(EXIT_OK)
}

fn ingest(args: IngestArgs) -> Result<i32> {
    let labels = match &args.stimuli {
        Some(p) => Some(load_stimulus_set(p, None)?.ids()),
        None => None,
    };
    let s = cmd_ingest_human(&IngestOptions {
        ratings: args.ratings,
        labels,
        out_dir: args.out.clone(),
    })?;
    println!("{}: {} participants, {} items", args.out.display(), s.participants.len(), s.items);
    Ok(EXIT_OK)
}

fn viz(args: VizArgs) -> Result<i32> {
    let written = cmd_viz(&VizOptions {
        systems: args.systems.inputs()?,
        tsne: args.tsne.params(),
        fill: args.fill,
        bins: args.bins,
        out_dir: args.out,
    })?;
    for p in written {
        println!("{}", p.display());
    }
    Ok(EXIT_OK)
}

fn report(args: ReportArgs) -> Result<i32> {
    let r = cmd_report(&args.run, args.prices.as_deref())?;
    print!("{}", r.to_markdown());
    Ok(EXIT_OK)
}

/// Parse `args` (including the program name) and run; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Analyze(a) => analyze(a),
        Command::Baseline(a) => baseline(a),
        Command::IngestHuman(a) => ingest(a),
        Command::Viz(a) => viz(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(code) => code,
        Err(e @ Error::Config(_)) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_PARTIAL
        }
    }
}
